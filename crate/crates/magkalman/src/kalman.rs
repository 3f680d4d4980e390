//! Correlated Kalman-Bucy filtering of the fluctuating field: the 2x2
//! state-space model for (<J_z>_c, B_t), the Riccati covariance flow with a
//! structural improper-prior initialization, the noiseless closed form, the
//! filter recursion, steady states and regime transition scales.
//!
//! Convention note: the photocurrent couples as y dt = 2 eta sqrt(M) <J_z> dt
//! + sqrt(eta) dW, so the observation row is H = (2 eta sqrt(M), 0). This is
//! the form consistent with the measurement equation, the steady-state
//! algebra and the Kalman-gain normalization (at eta = 1 it coincides with
//! the 2 sqrt(eta M) spelling that sometimes appears).

use crate::moments::{self, ConditionalTrajectory};
use crate::ode::{integrate_adaptive, OdeOptions};
use crate::params::{fold_gamma_z, OuParams, PhysParams, Prior};
use crate::{Error, Result};
use nalgebra::{Matrix2, RowVector2, SVector, Vector2};

/// Symmetric 2x2 covariance with entries
/// [[dimensionless², dimensionless·G], [·, G²]].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovMatrix2(pub Matrix2<f64>);

impl CovMatrix2 {
    pub fn new(m: Matrix2<f64>) -> Self {
        Self(0.5 * (m + m.transpose()))
    }

    pub fn diag(a: f64, b: f64) -> Self {
        Self(Matrix2::new(a, 0.0, 0.0, b))
    }

    /// Filter variance of the field estimate, G².
    pub fn sigma22(&self) -> f64 {
        self.0[(1, 1)]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Smallest eigenvalue (closed form for the symmetric 2x2).
    pub fn eigen_min(&self) -> f64 {
        let (a, b, c) = (self.0[(0, 0)], self.0[(0, 1)], self.0[(1, 1)]);
        let mid = 0.5 * (a + c);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        mid - rad
    }

    /// Numerical positive semi-definiteness: eigenvalues above -1e-12 * trace.
    pub fn is_psd(&self) -> bool {
        self.eigen_min() >= -1e-12 * self.trace().abs()
    }
}

/// Which conditional-variance solution feeds the B(t) matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceModel {
    /// Exact solution (Bessel form with its large-alpha fallback).
    #[default]
    Exact,
    /// Long-time branch V_{>t*}, mirroring the steady-state derivation.
    LongTime,
    /// Noiseless solution J/(2 + 4JtM eta).
    Noiseless,
}

/// Time-varying state-space model for x = (<J_z>_c, B_t) with correlated
/// process/measurement noise. Parameters are stored gamma_z-folded.
#[derive(Debug, Clone, Copy)]
pub struct StateSpaceModel {
    p: PhysParams,
    ou: OuParams,
    pub var_model: VarianceModel,
}

/// Build the model from physical parameters (gamma_z is folded into the
/// measurement channel first) and a conditional-variance model.
pub fn build_model(p: &PhysParams, ou: &OuParams, var_model: VarianceModel) -> Result<StateSpaceModel> {
    let folded = fold_gamma_z(p)?.params;
    Ok(StateSpaceModel { p: folded, ou: *ou, var_model })
}

impl StateSpaceModel {
    pub fn params(&self) -> &PhysParams {
        &self.p
    }

    pub fn ou(&self) -> &OuParams {
        &self.ou
    }

    /// Conditional variance entering B(t).
    pub fn var_c(&self, t: f64) -> f64 {
        match self.var_model {
            VarianceModel::Exact => moments::variance_exact_folded(t, &self.p),
            VarianceModel::Noiseless => moments::variance_noiseless(t, &self.p),
            VarianceModel::LongTime => {
                let r = self.p.m + self.p.gamma_y;
                0.5 * self.p.j
                    * (self.p.gamma_y / (self.p.eta * self.p.m)).sqrt()
                    * (-0.5 * r * t).exp()
            }
        }
    }

    /// Drift F(t) = [[0, -gamma J e^{-rt/2}], [0, -chi]].
    pub fn f_mat(&self, t: f64) -> Matrix2<f64> {
        let r = self.p.m + self.p.gamma_y;
        Matrix2::new(
            0.0,
            -self.p.gamma * self.p.j * (-0.5 * r * t).exp(),
            0.0,
            -self.ou.chi,
        )
    }

    /// Process-noise coupling B(t) = diag(2 sqrt(eta M) Var_c(t), 1).
    pub fn b_mat(&self, t: f64) -> Matrix2<f64> {
        Matrix2::new(2.0 * (self.p.eta * self.p.m).sqrt() * self.var_c(t), 0.0, 0.0, 1.0)
    }

    /// Observation row H = (2 eta sqrt(M), 0).
    pub fn h_row(&self) -> RowVector2<f64> {
        RowVector2::new(2.0 * self.p.eta * self.p.m.sqrt(), 0.0)
    }

    /// Process-noise covariance Q = diag(1, q_B).
    pub fn q_mat(&self) -> Matrix2<f64> {
        Matrix2::new(1.0, 0.0, 0.0, self.ou.q_b)
    }

    /// Measurement-noise covariance R = eta (scalar).
    pub fn r_scalar(&self) -> f64 {
        self.p.eta
    }

    /// Cross-correlation S = (sqrt(eta), 0)^T.
    pub fn s_col(&self) -> Vector2<f64> {
        Vector2::new(self.p.eta.sqrt(), 0.0)
    }

    /// Effective drift A(t) = F - B S R^{-1} H.
    pub fn a_mat(&self, t: f64) -> Matrix2<f64> {
        if self.p.eta == 0.0 {
            return self.f_mat(t);
        }
        self.f_mat(t) - self.b_mat(t) * self.s_col() * (1.0 / self.r_scalar()) * self.h_row()
    }

    /// Decorrelated process noise B(t)(Q - S R^{-1} S^T)B(t)^T.
    pub fn q_eff(&self, t: f64) -> Matrix2<f64> {
        let q = if self.p.eta == 0.0 {
            self.q_mat()
        } else {
            self.q_mat() - self.s_col() * self.s_col().transpose() * (1.0 / self.r_scalar())
        };
        let b = self.b_mat(t);
        b * q * b.transpose()
    }

    /// Information injection H^T R^{-1} H.
    pub fn ht_rinv_h(&self) -> Matrix2<f64> {
        if self.p.eta == 0.0 {
            return Matrix2::zeros();
        }
        self.h_row().transpose() * (1.0 / self.r_scalar()) * self.h_row()
    }
}

/// Four-term Riccati right-hand side
/// dΣ/dt = AΣ + ΣA^T - ΣH^T R^{-1}HΣ + B(Q - SR^{-1}S^T)B^T, symmetrized.
pub fn riccati_rhs(sigma: &CovMatrix2, t: f64, m: &StateSpaceModel) -> Matrix2<f64> {
    let a = m.a_mat(t);
    let s = sigma.0;
    let rhs = a * s + s * a.transpose() - s * m.ht_rinv_h() * s + m.q_eff(t);
    0.5 * (rhs + rhs.transpose())
}

fn riccati_rhs_components(s: &SVector<f64, 3>, t: f64, m: &StateSpaceModel) -> SVector<f64, 3> {
    let a = m.a_mat(t);
    let (a11, a12, a22) = (a[(0, 0)], a[(0, 1)], a[(1, 1)]);
    let h11 = m.ht_rinv_h()[(0, 0)];
    let q = m.q_eff(t);
    let (x, y, z) = (s[0], s[1], s[2]);
    SVector::<f64, 3>::new(
        2.0 * (a11 * x + a12 * y) - h11 * x * x + q[(0, 0)],
        a11 * y + a12 * z + a22 * y - h11 * x * y + q[(0, 1)],
        2.0 * a22 * z - h11 * y * y + q[(1, 1)],
    )
}

/// Relative tolerance of the Riccati integration.
pub const RICCATI_RTOL: f64 = 1e-9;

/// Integrate the covariance over an increasing grid.
///
/// A finite prior starts from Σ(0) = diag(0, sigma0²) and integrates the
/// Riccati equation directly (symmetry is structural: the state is the
/// (Σ11, Σ12, Σ22) triple). The improper prior has no finite Σ(0); it uses
/// the linearized pair X' = -A^T X + H^T R^{-1} H Y, Y' = A Y + B Q̃ B^T X
/// from X0 = diag(1, 0), Y0 = diag(0, 1) — the scaled limit of Σ0 =
/// diag(0, 1/ε) — and reads Σ = Y X^{-1} for t > 0. The pair is renormalized
/// (right-multiplied by X^{-1}) after every accepted step, which leaves
/// Σ invariant and stops the exponential growth of the fundamental solution.
pub fn integrate_riccati(
    sigma0: Prior,
    t_grid: &[f64],
    m: &StateSpaceModel,
) -> Result<Vec<CovMatrix2>> {
    if t_grid.is_empty() {
        return Ok(Vec::new());
    }
    if t_grid.windows(2).any(|w| w[1] <= w[0]) || t_grid[0] < 0.0 {
        return Err(Error::GridMismatch("t_grid must be strictly increasing from >= 0".into()));
    }
    match sigma0 {
        Prior::Finite(v) => integrate_riccati_finite(v, t_grid, m),
        Prior::Infinite => integrate_riccati_improper(t_grid, m),
    }
}

fn integrate_riccati_finite(
    sigma0_sq: f64,
    t_grid: &[f64],
    m: &StateSpaceModel,
) -> Result<Vec<CovMatrix2>> {
    let opts = OdeOptions { rtol: RICCATI_RTOL, atol: 0.0, ..Default::default() };
    let mut out = Vec::with_capacity(t_grid.len());
    let mut s = SVector::<f64, 3>::new(0.0, 0.0, sigma0_sq);
    let mut t0 = 0.0;
    let mut h = None;
    for &t1 in t_grid {
        if t1 > t0 {
            let (s_new, h_last) = integrate_adaptive(
                |t, y| riccati_rhs_components(y, t, m),
                t0,
                t1,
                s,
                &OdeOptions { h_init: h, ..opts },
                |_, _| false,
            )?;
            s = s_new;
            h = Some(h_last);
            t0 = t1;
        }
        out.push(CovMatrix2(Matrix2::new(s[0], s[1], s[1], s[2])));
    }
    Ok(out)
}

fn integrate_riccati_improper(t_grid: &[f64], m: &StateSpaceModel) -> Result<Vec<CovMatrix2>> {
    if t_grid[0] <= 0.0 {
        return Err(Error::InvalidParams(
            "an infinite prior has no finite covariance at t = 0; the grid must start at t > 0".into(),
        ));
    }
    let opts = OdeOptions { rtol: RICCATI_RTOL, atol: 0.0, ..Default::default() };
    let rhs = |t: f64, u: &SVector<f64, 8>| {
        let x = Matrix2::new(u[0], u[1], u[2], u[3]);
        let y = Matrix2::new(u[4], u[5], u[6], u[7]);
        let a = m.a_mat(t);
        let dx = -a.transpose() * x + m.ht_rinv_h() * y;
        let dy = a * y + m.q_eff(t) * x;
        SVector::<f64, 8>::from_column_slice(&[
            dx[(0, 0)], dx[(0, 1)], dx[(1, 0)], dx[(1, 1)],
            dy[(0, 0)], dy[(0, 1)], dy[(1, 0)], dy[(1, 1)],
        ])
    };
    let degenerate_at = std::cell::Cell::new(None::<f64>);
    let renorm = |t: f64, u: &mut SVector<f64, 8>| -> bool {
        let x = Matrix2::new(u[0], u[1], u[2], u[3]);
        let y = Matrix2::new(u[4], u[5], u[6], u[7]);
        match x.try_inverse() {
            Some(xinv) => {
                let sig = y * xinv;
                let sig = 0.5 * (sig + sig.transpose());
                if !sig.iter().all(|v| v.is_finite()) {
                    if degenerate_at.get().is_none() {
                        degenerate_at.set(Some(t));
                    }
                    return false;
                }
                *u = SVector::<f64, 8>::from_column_slice(&[
                    1.0, 0.0, 0.0, 1.0,
                    sig[(0, 0)], sig[(0, 1)], sig[(1, 0)], sig[(1, 1)],
                ]);
                true
            }
            None => {
                if degenerate_at.get().is_none() {
                    degenerate_at.set(Some(t));
                }
                false
            }
        }
    };

    let mut out = Vec::with_capacity(t_grid.len());
    let mut u = SVector::<f64, 8>::from_column_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    let mut t0 = 0.0;
    let mut h = None;
    for &t1 in t_grid {
        let (u_new, h_last) = integrate_adaptive(
            rhs,
            t0,
            t1,
            u,
            &OdeOptions { h_init: h, ..opts },
            &renorm,
        )?;
        if let Some(tbad) = degenerate_at.get() {
            return Err(Error::LinearizationDegenerate { t: tbad });
        }
        u = u_new;
        h = Some(h_last);
        t0 = t1;
        let x = Matrix2::new(u[0], u[1], u[2], u[3]);
        let y = Matrix2::new(u[4], u[5], u[6], u[7]);
        let xinv = x.try_inverse().ok_or(Error::LinearizationDegenerate { t: t1 })?;
        out.push(CovMatrix2::new(y * xinv));
    }
    Ok(out)
}

/// Minimal aMSE of the field estimate in the noiseless scenario
/// (gamma_y = q_B = chi = 0) as an explicit function of time and prior width.
///
/// The closed form is a ratio whose denominator cancels to O((Mt)^3) at small
/// times, so for Mt <= 0.5 the denominator is evaluated by its power series
/// (exact coefficient cancellation) and directly above that.
pub fn amse_noiseless(t: f64, sigma0_sq: Prior, p: &PhysParams) -> f64 {
    assert!(t >= 0.0);
    let p = fold_gamma_z(p).expect("amse_noiseless needs M > gamma_z").params;
    let (m, eta, j, g) = (p.m, p.eta, p.j, p.gamma);
    let u = m * t;
    let big_p = eta * j;

    let mut denom = if u <= 0.5 {
        // sum_{n>=3} (-u)^n/n! [(4·2^{-n} - 1) + eta J (2n - 8 + 16·2^{-n})]
        let mut acc = 0.0f64;
        let mut fac = -u * u * u / 6.0; // (-u)^3 / 3!
        let mut n = 3u32;
        loop {
            let pow2 = 0.5f64.powi(n as i32);
            let g_n = 4.0 * pow2 - 1.0;
            let h_n = 2.0 * n as f64 - 8.0 + 16.0 * pow2;
            acc += fac * (g_n + big_p * h_n);
            n += 1;
            fac *= -u / n as f64;
            if n > 8 && fac.abs() * (1.0 + big_p * (2.0 * n as f64)) < 1e-20 * acc.abs() {
                break;
            }
            if n > 300 {
                break;
            }
        }
        acc
    } else {
        let a = -(1.0 + 2.0 * eta * j * (4.0 + u));
        let c = (u - 3.0) + 2.0 * eta * j * (u - 4.0);
        a * (-u).exp() + 4.0 * (1.0 + 4.0 * j * eta) * (-0.5 * u).exp() + c
    };
    if let Prior::Finite(s0) = sigma0_sq {
        if s0 == 0.0 {
            return 0.0;
        }
        denom += m * m / (16.0 * eta * g * g * j * j * s0) + m * m * m * t / (8.0 * g * g * j * s0);
    }
    let num = m * m * (1.0 + 2.0 * j * u * eta) / (16.0 * eta * g * g * j * j);
    num / denom
}

/// Kalman gain Γ = (Σ H^T + B(t) S) R^{-1} = 2 sqrt(M) (Σ11 + Var_c, Σ12)^T.
pub fn kalman_gain(sigma: &CovMatrix2, t: f64, m: &StateSpaceModel) -> Result<Vector2<f64>> {
    if m.params().eta == 0.0 {
        return Err(Error::NoMeasurement);
    }
    let gain = (sigma.0 * m.h_row().transpose() + m.b_mat(t) * m.s_col()) / m.r_scalar();
    Ok(gain)
}

/// Filter state at one grid time.
#[derive(Debug, Clone, Copy)]
pub struct FilterState {
    /// (conditional-mean estimate of <J_z>_c, field estimate B̂) — the latter
    /// in Gauss.
    pub estimate: Vector2<f64>,
    pub cov: CovMatrix2,
    pub t: f64,
}

/// Run the Kalman-Bucy recursion dx̃ = F x̃ dt + Γ (dy - H x̃ dt) over a
/// simulated record, using a covariance path precomputed on the same grid.
/// `prior_mean` initializes the field estimate.
pub fn run_filter(
    record: &ConditionalTrajectory,
    m: &StateSpaceModel,
    sigma_path: &[CovMatrix2],
    prior_mean: f64,
) -> Result<Vec<FilterState>> {
    let n = record.field.n_steps();
    if sigma_path.len() != n + 1 {
        return Err(Error::GridMismatch(format!(
            "sigma path has {} entries, record grid has {}",
            sigma_path.len(),
            n + 1
        )));
    }
    let dt = record.dt;
    let h = m.h_row();
    let mut states = Vec::with_capacity(n + 1);
    let mut x = Vector2::new(0.0, prior_mean);
    states.push(FilterState { estimate: x, cov: sigma_path[0], t: 0.0 });
    for step in 0..n {
        let t = step as f64 * dt;
        let gain = kalman_gain(&sigma_path[step], t, m)?;
        let innovation = record.y_increments[step] - (h * x)[0] * dt;
        x += m.f_mat(t) * x * dt + gain * innovation;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::IntegrationDiverged { step, t });
        }
        states.push(FilterState { estimate: x, cov: sigma_path[step + 1], t: t + dt });
    }
    Ok(states)
}

/// Steady-state filter error Σ22^SS and its large-J approximation, G².
#[derive(Debug, Clone, Copy)]
pub struct SteadyState {
    /// Exact steady state at time t (the Wiener form for chi = 0, the full
    /// chi > 0 expression otherwise).
    pub value: f64,
    /// First-order-in-1/J approximation (independent of J and t).
    pub large_j: f64,
}

/// Steady-state solution of the Riccati flow at time `t`, with the
/// conditional variance frozen on its long-time branch.
pub fn steady_state(p: &PhysParams, ou: &OuParams, t: f64) -> SteadyState {
    let p = fold_gamma_z(p).expect("steady_state needs M > gamma_z").params;
    let (j, g, m, eta, gy, chi, qb) = (p.j, p.gamma, p.m, p.eta, p.gamma_y, ou.chi, ou.q_b);
    let r = m + gy;
    let me = m * eta;
    let value = if chi == 0.0 {
        (qb * gy / (g * g) + (1.0 / (g * j)) * (qb.powi(3) / me).sqrt() * (0.5 * r * t).exp()).sqrt()
    } else {
        let e_half = (0.5 * r * t).exp();
        let e_full = e_half * e_half;
        let root = (qb * g * g + gy * chi * chi).sqrt();
        let big = (chi * chi * e_full
            + 4.0 * j * (gy * j * me + e_half * (me).sqrt() * root))
            .sqrt();
        -gy * chi / (g * g) - chi.powi(3) * e_full / (4.0 * g * g * j * j * me)
            - chi / (g * g * j * me.sqrt()) * root * e_half
            + (1.0 / (2.0 * g * g * j * me))
                * root
                * (me.sqrt() + chi * chi * e_half / (2.0 * j * root))
                * big
    };
    let large_j = ((gy * (qb * g * g + gy * chi * chi)).sqrt() - gy * chi) / (g * g);
    SteadyState { value, large_j }
}

/// Transition times and ensemble-size thresholds between the error regimes.
///
/// `t_ss` is the time at which the noiseless 1/t³ error meets the
/// field-limited steady state; dimensional analysis fixes it as
/// 3^{1/3} (gamma² J² eta M q_B)^{-1/4}.
#[derive(Debug, Clone, Copy)]
pub struct TransitionScales {
    /// Noiseless -> classical-like crossover time, s.
    pub t_cs: f64,
    /// Classical-like -> steady-state crossover time, s.
    pub t_cs_prime: f64,
    /// Noiseless -> steady-state crossover time (small ensembles), s.
    pub t_ss: f64,
    /// Ensemble size above which the error at time `t` saturates the
    /// short-time bound.
    pub j_cs: f64,
    /// Ensemble size separating "small" from "large" ensembles.
    pub j_cs_prime: f64,
    /// Ensemble size above which the steady state applies at time `t`.
    pub j_ss: f64,
}

pub fn transition_scales(p: &PhysParams, ou: &OuParams, t: f64) -> TransitionScales {
    let p = fold_gamma_z(p).expect("transition_scales needs M > gamma_z").params;
    let (j, g, m, eta, gy, qb) = (p.j, p.gamma, p.m, p.eta, p.gamma_y, ou.q_b);
    let me = m * eta;
    let inf = f64::INFINITY;
    let s3 = if gy > 0.0 { (3.0 / (me * gy)).sqrt() } else { inf };
    TransitionScales {
        t_cs: s3 / j,
        t_cs_prime: if qb > 0.0 { (gy / qb).sqrt() / g } else { inf },
        t_ss: if qb > 0.0 {
            3f64.powf(1.0 / 3.0) / (g * g * j * j * me * qb).powf(0.25)
        } else {
            inf
        },
        j_cs: s3 / t,
        j_cs_prime: if gy > 0.0 { (g / gy) * (qb / me).sqrt() } else { inf },
        j_ss: if qb > 0.0 {
            3f64.powf(2.0 / 3.0) / (g * t * t * (me * qb).sqrt())
        } else {
            inf
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Prior;
    use approx::assert_relative_eq;

    fn fig5_phys(j: f64) -> PhysParams {
        PhysParams::new(j, 1e6, 1e5, 1.0, 0.0, 0.1, 0.0).unwrap()
    }

    fn ou(chi: f64, q_b: f64) -> OuParams {
        OuParams { chi, q_b, sigma0_sq: Prior::Infinite, b0: 0.0 }
    }

    #[test]
    fn model_building_blocks() {
        let m = build_model(&fig5_phys(1e9), &ou(0.0, 100.0), VarianceModel::Exact).unwrap();
        // H x picks out the jz component with gain 2 eta sqrt(M) (eta = 1 here).
        let hx = m.h_row() * Vector2::new(3.0, 7.0);
        assert_relative_eq!(hx[0], 2.0 * 1e5f64.sqrt() * 3.0, max_relative = 1e-14);
        // Decorrelation leaves only the field noise: Q - S R^-1 S^T = diag(0, q_B)
        // so B (…) B^T = diag(0, q_B).
        let q_eff = m.q_eff(0.0);
        assert_relative_eq!(q_eff[(0, 0)], 0.0, epsilon = 1e-10);
        assert_relative_eq!(q_eff[(1, 1)], 100.0, max_relative = 1e-14);
        assert_eq!(q_eff[(0, 1)], 0.0);
        // F(0) couples the field into jz with -gamma J.
        assert_relative_eq!(m.f_mat(0.0)[(0, 1)], -1e6 * 1e9, max_relative = 1e-14);
    }

    #[test]
    fn riccati_rhs_trivial_fixed_point() {
        let p = PhysParams::new(10.0, 1e6, 1e3, 1.0, 0.0, 0.0, 0.0).unwrap();
        let m = build_model(&p, &ou(0.0, 0.0), VarianceModel::Noiseless).unwrap();
        let rhs = riccati_rhs(&CovMatrix2::diag(0.0, 0.0), 1e-4, &m);
        assert!(rhs.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn riccati_rhs_symmetry() {
        let m = build_model(&fig5_phys(1e6), &ou(0.3, 5.0), VarianceModel::Exact).unwrap();
        let sigma = CovMatrix2::new(Matrix2::new(2.0, -0.4, -0.4, 1.3));
        let rhs = riccati_rhs(&sigma, 1e-6, &m);
        assert_relative_eq!(rhs[(0, 1)], rhs[(1, 0)], max_relative = 1e-12);
    }

    #[test]
    fn riccati_rhs_vanishes_at_steady_state() {
        // Build the full steady-state matrix for chi = 0 with the long-time
        // variance branch frozen at t, and check all entries of the RHS are
        // zero relative to their constituent terms.
        let p = fig5_phys(1e9);
        let o = ou(0.0, 100.0);
        let m = build_model(&p, &o, VarianceModel::LongTime).unwrap();
        let t = 5e-6;
        let r = p.m + p.gamma_y;
        let v = m.var_c(t);
        let e = (-0.5 * r * t).exp();
        let me = p.m * p.eta;
        let y = -(o.q_b / (4.0 * me)).sqrt();
        let x = -v + (v * v - p.gamma * p.j * e * y / (2.0 * me)).sqrt();
        let z = -4.0 * me * (v + x) * y / (p.gamma * p.j * e);
        let sigma = CovMatrix2::new(Matrix2::new(x, y, y, z));
        let rhs = riccati_rhs(&sigma, t, &m);
        assert!(rhs[(1, 1)].abs() <= 1e-9 * o.q_b, "rhs22 = {}", rhs[(1, 1)]);
        assert!(rhs[(0, 0)].abs() <= 1e-9 * (8.0 * me * v * x).abs());
        assert!(rhs[(0, 1)].abs() <= 1e-9 * (p.gamma * p.j * e * z).abs());
        // And the z component equals the closed-form steady state.
        assert_relative_eq!(z, steady_state(&p, &o, t).value, max_relative = 1e-12);
    }

    #[test]
    fn finite_prior_initial_condition() {
        let p = fig5_phys(1e6);
        let m = build_model(&p, &ou(0.0, 1.0), VarianceModel::Exact).unwrap();
        let path = integrate_riccati(Prior::Finite(1e-3), &[0.0], &m).unwrap();
        assert_eq!(path[0], CovMatrix2::diag(0.0, 1e-3));
    }

    #[test]
    fn improper_prior_rejects_t_zero() {
        let p = fig5_phys(1e6);
        let m = build_model(&p, &ou(0.0, 1.0), VarianceModel::Exact).unwrap();
        assert!(integrate_riccati(Prior::Infinite, &[0.0, 1e-6], &m).is_err());
    }

    #[test]
    fn noiseless_riccati_matches_closed_form_spot_check() {
        // gamma_y = q_B = chi = 0, improper prior: Σ22 vs the closed form at a
        // few times (the dense-grid version is in the acceptance suite).
        let p = PhysParams::new(1e3, 1e6, 1e5, 1.0, 0.0, 0.0, 0.0).unwrap();
        let m = build_model(&p, &ou(0.0, 0.0), VarianceModel::Exact).unwrap();
        let grid = [1e-10, 1e-8, 1e-6, 1e-5];
        let path = integrate_riccati(Prior::Infinite, &grid, &m).unwrap();
        for (i, &t) in grid.iter().enumerate() {
            let expect = amse_noiseless(t, Prior::Infinite, &p);
            assert_relative_eq!(path[i].sigma22(), expect, max_relative = 1e-7);
        }
    }

    #[test]
    fn amse_noiseless_asymptotes_and_prior() {
        let p = PhysParams::new(1e5, 1e6, 1e5, 1.0, 0.0, 0.0, 0.0).unwrap();
        // Window t << (JM)^{-1}: 3/(4 eta M gamma² J² t³).
        let t = 1e-4 / (p.j * p.m);
        let expect = 3.0 / (4.0 * p.eta * p.m * p.gamma.powi(2) * p.j.powi(2) * t.powi(3));
        assert_relative_eq!(amse_noiseless(t, Prior::Infinite, &p), expect, max_relative = 2e-2);
        // Window (JM)^{-1} << t < M^{-1}: 3/(eta M gamma² J² t³).
        let t = 1e3 / (p.j * p.m);
        let expect = 3.0 / (p.eta * p.m * p.gamma.powi(2) * p.j.powi(2) * t.powi(3));
        assert_relative_eq!(amse_noiseless(t, Prior::Infinite, &p), expect, max_relative = 5e-2);
        // Finite prior dominates at t -> 0.
        assert_relative_eq!(
            amse_noiseless(0.0, Prior::Finite(1e-3), &p),
            1e-3,
            max_relative = 1e-12
        );
        // Series/direct branches agree at the switch point.
        let t_switch = 0.5 / p.m;
        let lo = amse_noiseless(t_switch * (1.0 - 1e-9), Prior::Infinite, &p);
        let hi = amse_noiseless(t_switch * (1.0 + 1e-9), Prior::Infinite, &p);
        assert_relative_eq!(lo, hi, max_relative = 1e-7);
    }

    #[test]
    fn kalman_gain_examples() {
        let p = PhysParams::new(1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0).unwrap();
        let m = build_model(&p, &ou(0.0, 0.0), VarianceModel::Noiseless).unwrap();
        // Var_c(0) = J/2 = 0.5 here; the spec's v = 1 example uses Σ = 0 and
        // a unit conditional variance, i.e. gain = (2 sqrt(M) v, 0).
        let g = kalman_gain(&CovMatrix2::diag(0.0, 0.0), 0.0, &m).unwrap();
        assert_relative_eq!(g[0], 2.0 * m.var_c(0.0), max_relative = 1e-14);
        assert_eq!(g[1], 0.0);
        // Column-2 structure: Γ2 = 2 sqrt(M) Σ12 at eta = 1.
        let sigma = CovMatrix2::new(Matrix2::new(0.3, -0.2, -0.2, 0.9));
        let g = kalman_gain(&sigma, 0.0, &m).unwrap();
        assert_relative_eq!(g[1], 2.0 * 1.0f64.sqrt() * -0.2, max_relative = 1e-14);
        // eta = 0 has no measurement.
        let p0 = PhysParams::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        let m0 = build_model(&p0, &ou(0.0, 0.0), VarianceModel::Noiseless).unwrap();
        assert!(matches!(kalman_gain(&CovMatrix2::diag(0.0, 0.0), 0.0, &m0), Err(Error::NoMeasurement)));
    }

    #[test]
    fn steady_state_chi_continuity_and_limits() {
        let p = fig5_phys(1e9);
        let o0 = ou(0.0, 100.0);
        let t = 1e-5;
        let ss0 = steady_state(&p, &o0, t);
        let ss_eps = steady_state(&p, &ou(1e-6, 100.0), t);
        assert_relative_eq!(ss_eps.value, ss0.value, max_relative = 1e-8);
        // J >> J'_CS: the decoherence term dominates -> sqrt(q_B gamma_y)/gamma.
        assert_relative_eq!(ss0.large_j, (100.0f64 * 0.1).sqrt() / 1e6, max_relative = 1e-12);
        assert_relative_eq!(ss0.value, ss0.large_j, max_relative = 1e-3);
        // gamma_y = 0: only the field-limited term survives.
        let pg0 = PhysParams::new(1e5, 1e6, 1e5, 1.0, 0.0, 0.0, 0.0).unwrap();
        let ss = steady_state(&pg0, &o0, t);
        let expect = ((1.0 / (1e6 * 1e5)) * (100.0f64.powi(3) / 1e5).sqrt()
            * (0.5 * 1e5 * t).exp())
        .sqrt();
        assert_relative_eq!(ss.value, expect, max_relative = 1e-12);
    }

    #[test]
    fn transition_scales_reference_values() {
        // Fig 5 parameters.
        let p = fig5_phys(1e9);
        let o = ou(0.0, 100.0);
        let r = p.m + p.gamma_y;
        let sc = transition_scales(&p, &o, 1e-4 / r);
        assert_relative_eq!(sc.t_cs, 1.7320508075688772e-11, max_relative = 1e-12);
        assert_relative_eq!(sc.t_cs_prime, 3.1622776601683795e-8, max_relative = 1e-12);
        assert_relative_eq!(sc.j_cs_prime, 3.1622776601683795e5, max_relative = 1e-12);
        // Fig 6 main: J_CS at t_S = 1e-4.
        assert_relative_eq!(sc.j_cs, 1.7320508075688772e7 * (r / 1e5), max_relative = 1e-6);
        // Fig 6 inset: J_SS at t_S = 1e-2.
        let sc2 = transition_scales(&p, &o, 1e-2 / r);
        assert_relative_eq!(sc2.j_ss, 6.578e4, max_relative = 1e-3);
        // Shared-formula identity J t_CS = t J_CS.
        assert_relative_eq!(p.j * sc.t_cs, (1e-4 / r) * sc.j_cs, max_relative = 1e-12);
        // t_SS is consistent with J_SS: at t = t_SS(J), J_SS(t) = J.
        let t_ss = transition_scales(&p, &o, 1.0).t_ss;
        let back = transition_scales(&p, &o, t_ss).j_ss;
        assert_relative_eq!(back, p.j, max_relative = 1e-10);
    }

    #[test]
    fn filter_zero_record_stays_at_zero() {
        let p = fig5_phys(1e3);
        let o = OuParams { chi: 0.0, q_b: 0.0, sigma0_sq: Prior::Finite(0.0), b0: 0.0 };
        let m = build_model(&p, &o, VarianceModel::Exact).unwrap();
        let field = crate::stochproc::simulate_ou(&o, 1e-8, 100, 0);
        let mut rec = crate::moments::integrate_conditional_driven(&p, &field, &vec![0.0; 100]).unwrap();
        for v in rec.y_increments.iter_mut() {
            *v = 0.0;
        }
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 1e-8).collect();
        let sig = integrate_riccati(Prior::Finite(0.0), &grid, &m).unwrap();
        let states = run_filter(&rec, &m, &sig, 0.0).unwrap();
        assert!(states.iter().all(|s| s.estimate == Vector2::new(0.0, 0.0)));
    }

    #[test]
    fn sigma22_monotone_without_field_noise() {
        // q_B = 0, improper prior: information only accumulates.
        let p = fig5_phys(1e3);
        let m = build_model(&p, &ou(0.0, 0.0), VarianceModel::Exact).unwrap();
        let grid: Vec<f64> = (1..=40).map(|i| 10f64.powf(-10.0 + 6.0 * i as f64 / 40.0)).collect();
        let path = integrate_riccati(Prior::Infinite, &grid, &m).unwrap();
        for w in path.windows(2) {
            assert!(w[1].sigma22() <= w[0].sigma22() * (1.0 + 1e-9));
        }
        assert!(path.iter().all(|c| c.is_psd()));
    }
}
