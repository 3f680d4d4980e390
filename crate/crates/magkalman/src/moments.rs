//! Conditional spin dynamics in the linear-Gaussian regime: the coupled
//! mean/variance SDEs driven by the measurement record, closed-form variance
//! solutions, pump-axis decay models, and the spin-squeezing parameter.

use crate::bessel;
use crate::params::{fold_gamma_z, PhysParams};
use crate::rng::{trajectory_rng, Stream};
use crate::stochproc::FieldTrajectory;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

/// One realization of the conditional dynamics on the field grid.
///
/// All arrays share the grid length `n_steps + 1`. `y_increments[j]` is the
/// photocurrent increment collected over step `j`; it is driven by the same
/// Wiener increment dW as the `jz_mean[j+1]` update, and the final entry
/// (past the horizon) is zero.
#[derive(Debug, Clone)]
pub struct ConditionalTrajectory {
    pub dt: f64,
    /// Conditional mean <J_z>_c, dimensionless.
    pub jz_mean: Vec<f64>,
    /// Conditional variance <Δ²J_z>_c, dimensionless²; deterministic.
    pub jz_var: Vec<f64>,
    /// Measurement record increments y·dt.
    pub y_increments: Vec<f64>,
    /// Field path that drove the run.
    pub field: FieldTrajectory,
    pub seed: u64,
}

/// Pump-axis mean in the linear-Gaussian approximation: J e^{-r t / 2} with
/// r = M + gamma_y + gamma_z.
pub fn jx_approx(t: f64, p: &PhysParams) -> f64 {
    assert!(t >= 0.0);
    p.j * (-0.5 * p.decay_rate() * t).exp()
}

/// Pump-axis mean for a field held constant at `b_bar`, from the closed-form
/// solution of the coupled mean equations:
/// J e^{-s t/4} [cosh(Θt/4) - (a/Θ) sinh(Θt/4)] with a = M - gamma_x + gamma_z,
/// s = M + gamma_x + 2 gamma_y + gamma_z and Θ² = a² - (4 gamma b_bar)².
/// An imaginary Θ continues trigonometrically.
pub fn jx_constant_field(t: f64, b_bar: f64, p: &PhysParams) -> f64 {
    assert!(t >= 0.0);
    let a = p.m - p.gamma_x + p.gamma_z;
    let s = p.m + p.gamma_x + 2.0 * p.gamma_y + p.gamma_z;
    let w = 4.0 * p.gamma * b_bar;
    let theta_sq = a * a - w * w;
    let x = 0.25 * t; // Θ enters as Θ·t/4
    let (cosh_term, sinhc_term) = if theta_sq.abs() * x * x < 1e-12 {
        // Θ ≈ 0: series in Θ²x²
        (1.0 + 0.5 * theta_sq * x * x, x * (1.0 + theta_sq * x * x / 6.0))
    } else if theta_sq > 0.0 {
        let th = theta_sq.sqrt();
        ((th * x).cosh(), (th * x).sinh() / th)
    } else {
        let om = (-theta_sq).sqrt();
        ((om * x).cos(), (om * x).sin() / om)
    };
    p.j * (-s * x).exp() * (cosh_term - a * sinhc_term)
}

/// Default integration step for the conditional SDEs: 1e-3 / (M + gamma_y).
pub fn default_dt(p: &PhysParams) -> f64 {
    1e-3 / (p.m + p.gamma_y)
}

/// Euler-Maruyama integration of the conditional mean/variance equations
/// driven by a sampled field path, drawing the measurement Wiener stream from
/// `(seed, trajectory 0)`.
pub fn integrate_conditional(
    p: &PhysParams,
    field: &FieldTrajectory,
    seed: u64,
) -> Result<ConditionalTrajectory> {
    integrate_conditional_indexed(p, field, seed, 0)
}

/// As [`integrate_conditional`] with an explicit trajectory index for
/// parallel ensembles.
pub fn integrate_conditional_indexed(
    p: &PhysParams,
    field: &FieldTrajectory,
    seed: u64,
    trajectory_index: u64,
) -> Result<ConditionalTrajectory> {
    let mut rng = trajectory_rng(seed, trajectory_index, Stream::Measurement);
    let sqrt_dt = field.dt.sqrt();
    let n = field.n_steps();
    let mut dw = Vec::with_capacity(n);
    for _ in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        dw.push(z * sqrt_dt);
    }
    let mut out = integrate_conditional_driven(p, field, &dw)?;
    out.seed = seed;
    Ok(out)
}

/// Deterministic core of the conditional integration: the caller supplies the
/// measurement Wiener increments (length `field.n_steps()`). Used directly by
/// tests and by the quantum-oracle cross-checks that must share noise.
pub fn integrate_conditional_driven(
    p: &PhysParams,
    field: &FieldTrajectory,
    dw: &[f64],
) -> Result<ConditionalTrajectory> {
    let n = field.n_steps();
    if dw.len() != n {
        return Err(Error::GridMismatch(format!(
            "noise stream has {} increments, field has {} steps",
            dw.len(),
            n
        )));
    }
    let p = fold_gamma_z(p)?.params;
    let r = p.m + p.gamma_y;
    let dt = field.dt;
    let meas_gain = 2.0 * (p.eta * p.m).sqrt();
    let record_gain = 2.0 * p.eta * p.m.sqrt();
    let sqrt_eta = p.eta.sqrt();

    let mut jz_mean = Vec::with_capacity(n + 1);
    let mut jz_var = Vec::with_capacity(n + 1);
    let mut y_increments = Vec::with_capacity(n + 1);
    let mut jz = 0.0f64;
    let mut var = 0.5 * p.j;
    jz_mean.push(jz);
    jz_var.push(var);

    for step in 0..n {
        let t = step as f64 * dt;
        let b = field.values[step];
        let envelope = (-0.5 * r * t).exp();
        y_increments.push(record_gain * jz * dt + sqrt_eta * dw[step]);
        let jz_next = jz + (-p.gamma * b * p.j * envelope) * dt + meas_gain * var * dw[step];
        let var_next = var
            + (-4.0 * p.m * p.eta * var * var + p.gamma_y * p.j * p.j * envelope * envelope) * dt;
        if !jz_next.is_finite() || !var_next.is_finite() {
            return Err(Error::IntegrationDiverged { step, t });
        }
        jz = jz_next;
        var = var_next.max(0.0);
        jz_mean.push(jz);
        jz_var.push(var);
    }
    y_increments.push(0.0);

    Ok(ConditionalTrajectory {
        dt,
        jz_mean,
        jz_var,
        y_increments,
        field: field.clone(),
        seed: field.seed,
    })
}

/// Unconditional means (<J_x>, <J_z>) integrated along a sampled field path:
/// d<J_x> = gamma B <J_z> dt - (M + gamma_y + gamma_z)/2 <J_x> dt,
/// d<J_z> = -gamma B <J_x> dt - (gamma_x + gamma_y)/2 <J_z> dt,
/// starting from the x-polarized state (J, 0). RK4 per field step with the
/// field linearly interpolated at stage times; returns values on the grid.
pub fn integrate_mean_pair(p: &PhysParams, field: &FieldTrajectory) -> Vec<(f64, f64)> {
    use crate::ode::rk4_fixed_step;
    use nalgebra::Vector2;
    let n = field.n_steps();
    let dt = field.dt;
    let damp_x = 0.5 * (p.m + p.gamma_y + p.gamma_z);
    let damp_z = 0.5 * (p.gamma_x + p.gamma_y);
    let mut out = Vec::with_capacity(n + 1);
    let mut y = Vector2::new(p.j, 0.0);
    out.push((y[0], y[1]));
    for step in 0..n {
        let (b0, b1) = (field.values[step], field.values[step + 1]);
        let t0 = step as f64 * dt;
        let rhs = |t: f64, y: &Vector2<f64>| {
            let frac = ((t - t0) / dt).clamp(0.0, 1.0);
            let b = b0 + (b1 - b0) * frac;
            Vector2::new(
                p.gamma * b * y[1] - damp_x * y[0],
                -p.gamma * b * y[0] - damp_z * y[1],
            )
        };
        y = rk4_fixed_step(rhs, t0, dt, &y);
        out.push((y[0], y[1]));
    }
    out
}

/// Exact conditional variance <Δ²J_z(t)>_c.
///
/// For alpha = 2J sqrt(eta gamma_y M)/(M+gamma_y) up to [`ALPHA_MAX`] the
/// Bessel-form solution is evaluated with exponentially scaled I/K functions;
/// beyond that the cosh/sinh asymptotic form takes over (written with tanh so
/// nothing overflows). gamma_y = 0 reduces exactly to the noiseless solution.
pub fn variance_exact(t: f64, p: &PhysParams) -> f64 {
    let p = fold_gamma_z(p).expect("variance_exact needs M > gamma_z").params;
    variance_exact_folded(t, &p)
}

/// Bessel evaluability threshold for the exact variance.
pub const ALPHA_MAX: f64 = 500.0;

pub(crate) fn variance_exact_folded(t: f64, p: &PhysParams) -> f64 {
    assert!(t >= 0.0);
    if p.gamma_y == 0.0 || p.eta == 0.0 || p.m == 0.0 {
        // dV = -4 M eta V^2 dt (+ 0): exact solution below covers all cases.
        return variance_noiseless(t, p);
    }
    let r = p.m + p.gamma_y;
    let sg = (p.eta * p.gamma_y * p.m).sqrt();
    let alpha = 2.0 * p.j * sg / r;
    if alpha > ALPHA_MAX {
        return variance_long_asymptotic(t, p);
    }
    let beta = alpha * (-0.5 * r * t).exp();
    let (x_a, x_b) = ((2.0 * alpha).max(1e-290), (2.0 * beta).max(1e-290));
    let (i0a, i1a, k0a, k1a) = (bessel::i0e(x_a), bessel::i1e(x_a), bessel::k0e(x_a), bessel::k1e(x_a));
    let (i0b, i1b, k0b, k1b) = (bessel::i0e(x_b), bessel::i1e(x_b), bessel::k0e(x_b), bessel::k1e(x_b));
    // Every term carries either e^{2β-2α} (I(β)K(α)) or e^{2α-2β} (K(β)I(α));
    // factor the dominant e^{2α-2β} out of numerator and denominator.
    let e4 = (4.0 * alpha * (-0.5 * r * t).exp_m1()).exp(); // e^{4(β-α)} <= 1
    let me = p.m * p.eta;
    let n1 = i1b * (sg * k0a - p.gamma_y * k1a);
    let n2 = k1b * (p.gamma_y * i1a + sg * i0a);
    let d1 = 2.0 * i0b * (sg * k1a - me * k0a);
    let d2 = (2.0 * me / r) * k0b * (r * i0a + 2.0 * p.gamma_y * p.j * i1a / alpha);
    p.j * (-0.5 * r * t).exp() * (e4 * n1 + n2) / (e4 * d1 + d2)
}

/// Large-alpha asymptotic form of the exact variance,
/// (J/2) e^{-rt/2} (sg + gamma_y th)/(sg + M eta th), th = tanh(2 J t sg).
fn variance_long_asymptotic(t: f64, p: &PhysParams) -> f64 {
    let r = p.m + p.gamma_y;
    let sg = (p.eta * p.gamma_y * p.m).sqrt();
    let th = (2.0 * p.j * t * sg).tanh();
    0.5 * p.j * (-0.5 * r * t).exp() * (sg + p.gamma_y * th) / (sg + p.m * p.eta * th)
}

/// Noiseless (gamma_y = 0) conditional variance J / (2 + 4 J t M eta).
pub fn variance_noiseless(t: f64, p: &PhysParams) -> f64 {
    assert!(t >= 0.0);
    p.j / (2.0 + 4.0 * p.j * t * p.m * p.eta)
}

/// Short-time / long-time variance branches and the transition time
/// t* = 1 / (2 J sqrt(M gamma_y eta)).
#[derive(Debug, Clone, Copy)]
pub struct VarianceRegimes {
    pub t_star: f64,
    j: f64,
    m: f64,
    gamma_y: f64,
    eta: f64,
}

impl VarianceRegimes {
    /// V_{<t*}(t) = (J/2) (1 + 2Jt gamma_y)/(1 + 2JtM eta) e^{-(M+gamma_y)t/2}.
    pub fn short_time(&self, t: f64) -> f64 {
        0.5 * self.j * (1.0 + 2.0 * self.j * t * self.gamma_y)
            / (1.0 + 2.0 * self.j * t * self.m * self.eta)
            * (-0.5 * (self.m + self.gamma_y) * t).exp()
    }

    /// V_{>t*}(t) = (J/2) sqrt(gamma_y/(eta M)) e^{-(M+gamma_y)t/2}.
    pub fn long_time(&self, t: f64) -> f64 {
        0.5 * self.j * (self.gamma_y / (self.eta * self.m)).sqrt()
            * (-0.5 * (self.m + self.gamma_y) * t).exp()
    }
}

pub fn variance_regimes(p: &PhysParams) -> VarianceRegimes {
    let p = fold_gamma_z(p).expect("variance_regimes needs M > gamma_z").params;
    assert!(
        p.gamma_y > 0.0 && p.m > 0.0 && p.eta > 0.0 && p.j > 0.0,
        "variance regimes need gamma_y, M, eta, J > 0"
    );
    VarianceRegimes {
        t_star: 1.0 / (2.0 * p.j * (p.m * p.gamma_y * p.eta).sqrt()),
        j: p.j,
        m: p.m,
        gamma_y: p.gamma_y,
        eta: p.eta,
    }
}

/// Squeezing parameter and its two regime branches at one time.
#[derive(Debug, Clone, Copy)]
pub struct SqueezingPoint {
    /// xi²(t) = 2J <Δ²J_z(t)>_c / <J_x(t)>² from the exact variance.
    pub xi_sq: f64,
    /// Short-time branch (1 + 2Jt gamma_y)/(1 + 2JtM eta) e^{(M+gamma_y)t/2}.
    pub short_branch: f64,
    /// Long-time branch sqrt(gamma_y/(eta M)) e^{(M+gamma_y)t/2}.
    pub long_branch: f64,
}

/// Wineland squeezing parameter along the pump axis; xi² < 1 flags
/// metrological gain over the coherent spin state.
pub fn squeezing(t: f64, p: &PhysParams) -> SqueezingPoint {
    let p = fold_gamma_z(p).expect("squeezing needs M > gamma_z").params;
    let r = p.m + p.gamma_y;
    let var = variance_exact_folded(t, &p);
    let xi_sq = 2.0 * var * (r * t).exp() / p.j;
    let growth = (0.5 * r * t).exp();
    let short_branch = (1.0 + 2.0 * p.j * t * p.gamma_y) / (1.0 + 2.0 * p.j * t * p.m * p.eta) * growth;
    let long_branch = if p.gamma_y > 0.0 && p.eta > 0.0 {
        (p.gamma_y / (p.eta * p.m)).sqrt() * growth
    } else {
        0.0
    };
    SqueezingPoint { xi_sq, short_branch, long_branch }
}
