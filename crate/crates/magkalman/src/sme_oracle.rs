//! Small-ensemble full quantum oracle in the Dicke basis: collective spin
//! operators, the conditional stochastic master equation with its homodyne
//! record, the unconditional master equation, the mixture-of-unitaries
//! equivalence of the field-axis dephasing channel, and the field-averaged
//! dephasing check.
//!
//! The symmetric (J = N/2) sector is exact here because every generator is
//! collective, which caps the dimension at 2J + 1.

use crate::moments::ConditionalTrajectory;
use crate::params::PhysParams;
use crate::rng::{trajectory_rng, Stream};
use crate::stochproc::FieldTrajectory;
use crate::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

type CMat = DMatrix<Complex64>;

/// Largest supported spin (dimension cap 2J + 1 = 101).
pub const J_MAX: f64 = 50.0;

/// Collective angular-momentum matrices in the |J, m> basis, m descending
/// from +J to -J.
#[derive(Debug, Clone)]
pub struct DickeOperators {
    pub j: f64,
    pub jx: CMat,
    pub jy: CMat,
    pub jz: CMat,
}

impl DickeOperators {
    pub fn dim(&self) -> usize {
        self.jz.nrows()
    }
}

/// Build Jx, Jy, Jz for half-integer or integer J <= 50.
pub fn dicke_operators(j: f64) -> Result<DickeOperators> {
    let two_j = 2.0 * j;
    if (two_j - two_j.round()).abs() > 1e-9 || j < 0.5 {
        return Err(Error::InvalidParams(format!("J = {j} must be a positive half-integer")));
    }
    if j > J_MAX {
        return Err(Error::DimensionCap { j });
    }
    let dim = (two_j.round() as usize) + 1;
    let mut jp = CMat::zeros(dim, dim); // raising operator J+
    for idx in 1..dim {
        let m = j - idx as f64; // m of the source state |J, m>
        let amp = (j * (j + 1.0) - m * (m + 1.0)).sqrt();
        jp[(idx - 1, idx)] = Complex64::new(amp, 0.0);
    }
    let jm = jp.adjoint();
    let jx = (&jp + &jm).scale(0.5);
    let jy = (&jp - &jm) * Complex64::new(0.0, -0.5);
    let mut jz = CMat::zeros(dim, dim);
    for idx in 0..dim {
        jz[(idx, idx)] = Complex64::new(j - idx as f64, 0.0);
    }
    Ok(DickeOperators { j, jx, jy, jz })
}

/// Collective-spin density matrix with its tolerance checks.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(pub CMat);

impl DensityMatrix {
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        let mut s = Complex64::default();
        for i in 0..self.0.nrows() {
            s += self.0[(i, i)];
        }
        s
    }

    pub fn hermiticity_residual(&self) -> f64 {
        (&self.0 - self.0.adjoint()).norm()
    }

    /// min eigenvalue >= -tol, tested via a shifted Cholesky factorization.
    pub fn is_positive_within(&self, tol: f64) -> bool {
        let mut shifted = self.0.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += Complex64::new(tol, 0.0);
        }
        shifted.cholesky().is_some()
    }

    /// Hermiticity to 1e-12, unit trace to 1e-9, positivity to -1e-8.
    pub fn validate(&self) -> Result<()> {
        if self.hermiticity_residual() > 1e-12 * (1.0 + self.0.norm()) {
            return Err(Error::InvalidParams("density matrix is not Hermitian".into()));
        }
        if (self.trace().re - 1.0).abs() > 1e-9 || self.trace().im.abs() > 1e-12 {
            return Err(Error::InvalidParams("density matrix trace is not 1".into()));
        }
        if !self.is_positive_within(1e-8) {
            return Err(Error::InvalidParams("density matrix is not positive within tolerance".into()));
        }
        Ok(())
    }

    pub fn expectation(&self, op: &CMat) -> f64 {
        let mut s = Complex64::default();
        for i in 0..self.0.nrows() {
            for k in 0..self.0.ncols() {
                s += op[(i, k)] * self.0[(k, i)];
            }
        }
        s.re
    }

    pub fn variance(&self, op: &CMat) -> f64 {
        let mean = self.expectation(op);
        let sq = self.expectation(&(op * op));
        sq - mean * mean
    }
}

/// Coherent spin state polarized along +x:
/// amplitudes 2^{-J} sqrt(C(2J, J-m)) in the |J, m> basis.
pub fn css_state(j: f64) -> Result<DensityMatrix> {
    let ops = dicke_operators(j)?;
    let dim = ops.dim();
    let mut amp = vec![0.0f64; dim];
    amp[0] = 0.5f64.powf(j); // m = +J component: 2^{-J}
    for idx in 1..dim {
        // c_{idx} = c_{idx-1} sqrt((2J - idx + 1)/idx)
        amp[idx] = amp[idx - 1] * ((2.0 * j - idx as f64 + 1.0) / idx as f64).sqrt();
    }
    let mut rho = CMat::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            rho[(a, b)] = Complex64::new(amp[a] * amp[b], 0.0);
        }
    }
    Ok(DensityMatrix(rho))
}

fn dissipator(op: &CMat, op_sq: &CMat, rho: &CMat) -> CMat {
    op * rho * op - (op_sq * rho + rho * op_sq).scale(0.5)
}

/// Deterministic drift of the conditional/unconditional master equation.
fn lindblad_drift(ops: &DickeOperators, sq: &OperatorSquares, p: &PhysParams, b: f64, rho: &CMat) -> CMat {
    let mut out = (&ops.jy * rho - rho * &ops.jy) * Complex64::new(0.0, -p.gamma * b);
    if p.gamma_x > 0.0 {
        out += dissipator(&ops.jx, &sq.jx2, rho).scale(p.gamma_x);
    }
    if p.gamma_y > 0.0 {
        out += dissipator(&ops.jy, &sq.jy2, rho).scale(p.gamma_y);
    }
    if p.gamma_z > 0.0 {
        out += dissipator(&ops.jz, &sq.jz2, rho).scale(p.gamma_z);
    }
    if p.m > 0.0 {
        out += dissipator(&ops.jz, &sq.jz2, rho).scale(p.m);
    }
    out
}

struct OperatorSquares {
    jx2: CMat,
    jy2: CMat,
    jz2: CMat,
}

impl OperatorSquares {
    fn new(ops: &DickeOperators) -> Self {
        Self { jx2: &ops.jx * &ops.jx, jy2: &ops.jy * &ops.jy, jz2: &ops.jz * &ops.jz }
    }
}

/// Output of a conditional SME integration.
#[derive(Debug, Clone)]
pub struct SmeRun {
    pub dt: f64,
    /// Internal substeps per field step after any positivity-driven refinement.
    pub substeps: usize,
    /// State on the field grid (n_steps + 1 entries).
    pub rho_path: Vec<DensityMatrix>,
    /// Photocurrent increments per field step (trailing entry zero), matching
    /// the linear-Gaussian record convention.
    pub y_increments: Vec<f64>,
    pub jx_mean: Vec<f64>,
    pub jy_mean: Vec<f64>,
    pub jz_mean: Vec<f64>,
    pub jz_var: Vec<f64>,
    /// Largest |tr rho - 1| observed before per-step renormalization.
    pub max_trace_drift: f64,
}

/// Euler-Maruyama integration of the conditional SME along a field path,
/// with the homodyne record y dt = 2 eta sqrt(M) <J_z> dt + sqrt(eta) dW
/// sharing the same Wiener increment that drives the state.
///
/// `dt` must equal the field grid spacing and resolve the measurement,
/// M dt <= 1e-2. Transient positivity violations trigger an internal dt
/// halving (the field is held constant within a step), up to 6 times.
pub fn integrate_sme(
    rho0: &DensityMatrix,
    p: &PhysParams,
    field: &FieldTrajectory,
    seed: u64,
    dt: f64,
) -> Result<SmeRun> {
    if (dt - field.dt).abs() > 1e-15 * field.dt {
        return Err(Error::GridMismatch("dt must equal the field grid spacing".into()));
    }
    if p.m * dt > 1e-2 {
        return Err(Error::InvalidParams(format!(
            "dt = {dt} does not resolve the measurement: M dt = {} > 1e-2",
            p.m * dt
        )));
    }
    let mut substeps = 1usize;
    for _ in 0..=6 {
        let mut rng = trajectory_rng(seed, 0, Stream::Measurement);
        let sub_dt = dt / substeps as f64;
        let sqrt_sub = sub_dt.sqrt();
        let n_noise = field.n_steps() * substeps;
        let mut dw = Vec::with_capacity(n_noise);
        for _ in 0..n_noise {
            let z: f64 = rng.sample(StandardNormal);
            dw.push(z * sqrt_sub);
        }
        match integrate_sme_driven_inner(rho0, p, field, &dw, substeps) {
            Ok(run) => return Ok(run),
            Err(Error::PositivityViolation { .. }) => {
                substeps *= 2;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::PositivityViolation { retries: 6 })
}

/// Conditional SME driven by caller-supplied Wiener increments on the field
/// grid (one per step), for cross-checks that must share noise with the
/// linear-Gaussian model. No dt refinement is attempted.
pub fn integrate_sme_driven(
    rho0: &DensityMatrix,
    p: &PhysParams,
    field: &FieldTrajectory,
    dw: &[f64],
) -> Result<SmeRun> {
    if dw.len() != field.n_steps() {
        return Err(Error::GridMismatch(format!(
            "noise stream has {} increments, field has {} steps",
            dw.len(),
            field.n_steps()
        )));
    }
    integrate_sme_driven_inner(rho0, p, field, dw, 1)
}

fn integrate_sme_driven_inner(
    rho0: &DensityMatrix,
    p: &PhysParams,
    field: &FieldTrajectory,
    dw: &[f64],
    substeps: usize,
) -> Result<SmeRun> {
    let ops = dicke_operators_for_dim(rho0.dim())?;
    let sq = OperatorSquares::new(&ops);
    let n = field.n_steps();
    let sub_dt = field.dt / substeps as f64;
    let meas = (p.m * p.eta).sqrt();
    let record_gain = 2.0 * p.eta * p.m.sqrt();
    let sqrt_eta = p.eta.sqrt();

    let mut rho = rho0.0.clone();
    let mut rho_path = Vec::with_capacity(n + 1);
    let mut y_increments = Vec::with_capacity(n + 1);
    let (mut jx_mean, mut jy_mean, mut jz_mean, mut jz_var) = (
        Vec::with_capacity(n + 1),
        Vec::with_capacity(n + 1),
        Vec::with_capacity(n + 1),
        Vec::with_capacity(n + 1),
    );
    let mut max_trace_drift = 0.0f64;

    let push_moments =
        |rho: &CMat, jx: &mut Vec<f64>, jy: &mut Vec<f64>, jz: &mut Vec<f64>, vz: &mut Vec<f64>| {
            let dm = DensityMatrix(rho.clone());
            jx.push(dm.expectation(&ops.jx));
            jy.push(dm.expectation(&ops.jy));
            jz.push(dm.expectation(&ops.jz));
            vz.push(dm.variance(&ops.jz));
        };

    rho_path.push(DensityMatrix(rho.clone()));
    push_moments(&rho, &mut jx_mean, &mut jy_mean, &mut jz_mean, &mut jz_var);

    for step in 0..n {
        let b = field.values[step];
        let mut y_inc = 0.0;
        for sub in 0..substeps {
            let dw_s = dw[step * substeps + sub];
            let jz_exp = DensityMatrix(rho.clone()).expectation(&ops.jz);
            y_inc += record_gain * jz_exp * sub_dt + sqrt_eta * dw_s;
            let mut drho = lindblad_drift(&ops, &sq, p, b, &rho).scale(sub_dt);
            if meas > 0.0 {
                // H[Jz] rho = Jz rho + rho Jz - 2 <Jz> rho
                let h = &ops.jz * &rho + &rho * &ops.jz - rho.scale(2.0 * jz_exp);
                drho += h.scale(meas * dw_s);
            }
            rho += drho;
            // Hermitize and renormalize each step.
            rho = (rho.clone() + rho.adjoint()).scale(0.5);
            let tr: f64 = (0..rho.nrows()).map(|i| rho[(i, i)].re).sum();
            if !tr.is_finite() {
                return Err(Error::IntegrationDiverged { step, t: step as f64 * field.dt });
            }
            max_trace_drift = max_trace_drift.max((tr - 1.0).abs());
            rho.scale_mut(1.0 / tr);
            if !DensityMatrix(rho.clone()).is_positive_within(1e-8) {
                return Err(Error::PositivityViolation { retries: 0 });
            }
        }
        y_increments.push(y_inc);
        rho_path.push(DensityMatrix(rho.clone()));
        push_moments(&rho, &mut jx_mean, &mut jy_mean, &mut jz_mean, &mut jz_var);
    }
    y_increments.push(0.0);

    Ok(SmeRun {
        dt: field.dt,
        substeps,
        rho_path,
        y_increments,
        jx_mean,
        jy_mean,
        jz_mean,
        jz_var,
        max_trace_drift,
    })
}

fn dicke_operators_for_dim(dim: usize) -> Result<DickeOperators> {
    if dim < 2 {
        return Err(Error::InvalidParams("density matrix dimension must be >= 2".into()));
    }
    dicke_operators((dim as f64 - 1.0) / 2.0)
}

/// Deterministic RK4 integration of the unconditional master equation with a
/// time-dependent field `b_fn`.
pub fn integrate_unconditional<F: Fn(f64) -> f64>(
    rho0: &DensityMatrix,
    p: &PhysParams,
    b_fn: F,
    dt: f64,
    n_steps: usize,
) -> Result<Vec<DensityMatrix>> {
    let ops = dicke_operators_for_dim(rho0.dim())?;
    let sq = OperatorSquares::new(&ops);
    let mut rho = rho0.0.clone();
    let mut path = Vec::with_capacity(n_steps + 1);
    path.push(DensityMatrix(rho.clone()));
    for step in 0..n_steps {
        let t = step as f64 * dt;
        let k1 = lindblad_drift(&ops, &sq, p, b_fn(t), &rho);
        let k2 = lindblad_drift(&ops, &sq, p, b_fn(t + 0.5 * dt), &(&rho + k1.scale(0.5 * dt)));
        let k3 = lindblad_drift(&ops, &sq, p, b_fn(t + 0.5 * dt), &(&rho + k2.scale(0.5 * dt)));
        let k4 = lindblad_drift(&ops, &sq, p, b_fn(t + dt), &(&rho + k3.scale(dt)));
        rho += (k1 + k2.scale(2.0) + k3.scale(2.0) + k4).scale(dt / 6.0);
        path.push(DensityMatrix(rho.clone()));
    }
    Ok(path)
}

/// Sum of absolute eigenvalues of the Hermitian part of `m`.
pub fn trace_norm(m: &CMat) -> f64 {
    let herm = (m + m.adjoint()).scale(0.5);
    herm.symmetric_eigen().eigenvalues.iter().map(|l| l.abs()).sum()
}

/// Outcome of the mixture-of-unitaries equivalence check.
#[derive(Debug, Clone, Copy)]
pub struct MixtureReport {
    /// Trace-norm distance between the Monte Carlo average of the unitary
    /// mixture and the integrated dephasing channel.
    pub distance: f64,
    /// Delta-method standard error of the distance.
    pub std_err: f64,
    pub n_samples: usize,
}

/// Compare one step of the field-axis dephasing channel
/// drho = -i gamma B [Jy, rho] - (gamma_y/2)[Jy,[Jy, rho]] over `delta_t`
/// against the average of unitaries exp(-i w Jy delta_t) with
/// w ~ N(gamma B, gamma_y/delta_t).
pub fn cs_mixture_check(
    rho0: &DensityMatrix,
    b: f64,
    delta_t: f64,
    p: &PhysParams,
    n_samples: usize,
    seed: u64,
) -> Result<MixtureReport> {
    if p.gamma_y <= 0.0 {
        return Err(Error::DegenerateMixture);
    }
    let ops = dicke_operators_for_dim(rho0.dim())?;
    let dim = rho0.dim();

    // Exact side: RK4 of the channel with step halving until 1e-8 converged.
    let channel = PhysParams { m: 0.0, eta: 0.0, gamma_x: 0.0, gamma_z: 0.0, ..*p };
    let mut n_sub = 64usize;
    let mut exact = integrate_unconditional(rho0, &channel, |_| b, delta_t / n_sub as f64, n_sub)?
        .pop()
        .unwrap();
    loop {
        n_sub *= 2;
        let finer = integrate_unconditional(rho0, &channel, |_| b, delta_t / n_sub as f64, n_sub)?
            .pop()
            .unwrap();
        let diff = (&finer.0 - &exact.0).norm();
        exact = finer;
        if diff < 1e-8 || n_sub >= 1 << 16 {
            break;
        }
    }

    // Monte Carlo side, in the Jy eigenbasis where each unitary is a phase.
    let eig = ops.jy.clone().symmetric_eigen();
    let basis = eig.eigenvectors;
    let m_values: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    let rho_y = basis.adjoint() * &rho0.0 * &basis;
    let mut rng = trajectory_rng(seed, 0, Stream::Aux);
    let sigma = (p.gamma_y / delta_t).sqrt();
    let mut mean = CMat::zeros(dim, dim);
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let z: f64 = rng.sample(StandardNormal);
        let w = p.gamma * b + sigma * z;
        let mut rotated = CMat::zeros(dim, dim);
        for r in 0..dim {
            for c in 0..dim {
                let phase = Complex64::from_polar(1.0, -w * delta_t * (m_values[r] - m_values[c]));
                rotated[(r, c)] = phase * rho_y[(r, c)];
            }
        }
        mean += &rotated;
        samples.push(rotated);
    }
    mean.scale_mut(1.0 / n_samples as f64);
    let mean_lab = &basis * &mean * basis.adjoint();

    let delta = &mean_lab - &exact.0;
    let distance = trace_norm(&delta);

    // Delta method: the gradient of the trace norm at the mean deviation is
    // the sign matrix S; se² = Var[tr(S X_i)]/n in the rotated frame.
    let herm = (&delta + delta.adjoint()).scale(0.5);
    let se = herm.symmetric_eigen();
    let mut sign = CMat::zeros(dim, dim);
    for i in 0..dim {
        sign[(i, i)] = Complex64::new(se.eigenvalues[i].signum(), 0.0);
    }
    let s_lab = &se.eigenvectors * sign * se.eigenvectors.adjoint();
    let s_y = basis.adjoint() * s_lab * &basis;
    let mut vals = Vec::with_capacity(n_samples);
    for sample in &samples {
        let mut tr = Complex64::default();
        for r in 0..dim {
            for c in 0..dim {
                tr += s_y[(r, c)] * sample[(c, r)];
            }
        }
        vals.push(tr.re);
    }
    let nf = n_samples as f64;
    let mean_v: f64 = vals.iter().sum::<f64>() / nf;
    let var_v: f64 = vals.iter().map(|v| (v - mean_v).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok(MixtureReport { distance, std_err: (var_v / nf).sqrt(), n_samples })
}

/// Outcome of the field-averaged dephasing check.
#[derive(Debug, Clone)]
pub struct FieldAverageReport {
    pub times: Vec<f64>,
    /// |E exp(-i gamma A_t dm)| for the adjacent (dm = 1) Jy coherence.
    pub coherence_ratio: Vec<f64>,
    /// Standard errors of the ratios.
    pub std_err: Vec<f64>,
    /// Predicted ratios exp(-gamma² q_B t³/6).
    pub predicted: Vec<f64>,
    /// Log-log slope of -ln ratio vs t, fitted where the signal resolves.
    pub fitted_slope: f64,
    /// Averaged state at the final time (density-matrix route).
    pub final_state: DensityMatrix,
}

/// Monte Carlo over Wiener field paths of the purely unitary dynamics
/// |psi_t> = exp(-i gamma Jy ∫B) |psi_0>, averaged into a density matrix;
/// the Jy-basis coherences must decay as exp(-gamma² q_B t³ (dm)²/6).
///
/// The path integral ∫B dτ is sampled exactly: trapezoid of the endpoints
/// plus the independent Brownian-bridge area correction N(0, q_B dt³/12)
/// per step. Requires chi = 0 and a pure initial state.
pub fn field_average_check(
    psi0_rho: &DensityMatrix,
    ou: &crate::params::OuParams,
    p: &PhysParams,
    times: &[f64],
    n_traj: usize,
    seed: u64,
) -> Result<FieldAverageReport> {
    if ou.chi != 0.0 {
        return Err(Error::Unsupported("field averaging is derived for chi = 0".into()));
    }
    if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || times[0] <= 0.0 {
        return Err(Error::GridMismatch("times must be strictly increasing and positive".into()));
    }
    let ops = dicke_operators_for_dim(psi0_rho.dim())?;
    let dim = psi0_rho.dim();
    let eig = ops.jy.clone().symmetric_eigen();
    let basis = eig.eigenvectors;
    let m_values: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    let rho_y0 = basis.adjoint() * &psi0_rho.0 * &basis;

    // The tracked ratio |E e^{-i gamma A}| is identical for every adjacent
    // (dm = 1) pair; just require that such a coherence exists initially.
    let mut best = 0.0f64;
    for r in 0..dim {
        for c in 0..dim {
            if (m_values[r] - m_values[c] - 1.0).abs() < 1e-9 {
                best = best.max(rho_y0[(r, c)].norm());
            }
        }
    }
    if best < 1e-12 {
        return Err(Error::InvalidParams(
            "initial state has no adjacent Jy coherence to track".into(),
        ));
    }

    // Uniform substep grid refining the requested times.
    let t_end = *times.last().unwrap();
    let n_sub = 64usize.max(times.len() * 8);
    let dt = t_end / n_sub as f64;
    let step_sd = (ou.q_b * dt).sqrt();
    let bridge_sd = (ou.q_b * dt * dt * dt / 12.0).sqrt();

    let mut sums = vec![Complex64::default(); times.len()];
    let mut sums_re2 = vec![0.0f64; times.len()];
    let mut sums_im2 = vec![0.0f64; times.len()];
    let mut rho_final_y = CMat::zeros(dim, dim);

    for traj in 0..n_traj {
        let mut rng = trajectory_rng(seed, traj as u64, Stream::Field);
        let mut b = ou.b0;
        let mut area = 0.0f64;
        let mut grid_idx = 0usize;
        for step in 0..n_sub {
            let z: f64 = rng.sample(StandardNormal);
            let b_next = b + step_sd * z;
            let zb: f64 = rng.sample(StandardNormal);
            area += 0.5 * dt * (b + b_next) + bridge_sd * zb;
            b = b_next;
            let t_now = (step + 1) as f64 * dt;
            while grid_idx < times.len() && times[grid_idx] <= t_now * (1.0 + 1e-12) {
                let phase = Complex64::from_polar(1.0, -p.gamma * area);
                sums[grid_idx] += phase;
                sums_re2[grid_idx] += phase.re * phase.re;
                sums_im2[grid_idx] += phase.im * phase.im;
                grid_idx += 1;
            }
        }
        // Accumulate the full averaged state at the final time.
        for r in 0..dim {
            for c in 0..dim {
                let dm = m_values[r] - m_values[c];
                rho_final_y[(r, c)] +=
                    Complex64::from_polar(1.0, -p.gamma * area * dm) * rho_y0[(r, c)];
            }
        }
    }
    rho_final_y.scale_mut(1.0 / n_traj as f64);
    let final_state = DensityMatrix(&basis * rho_final_y * basis.adjoint());

    let nf = n_traj as f64;
    let mut ratio = Vec::with_capacity(times.len());
    let mut std_err = Vec::with_capacity(times.len());
    let mut predicted = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let mean = sums[i] / nf;
        let r = mean.norm();
        // Variance of the modulus via the delta method on (Re, Im).
        let var_re = (sums_re2[i] / nf - mean.re * mean.re).max(0.0);
        let var_im = (sums_im2[i] / nf - mean.im * mean.im).max(0.0);
        let se = if r > 0.0 {
            ((mean.re / r).powi(2) * var_re + (mean.im / r).powi(2) * var_im).sqrt() / nf.sqrt()
        } else {
            (var_re + var_im).sqrt() / nf.sqrt()
        };
        ratio.push(r);
        std_err.push(se);
        predicted.push((-p.gamma * p.gamma * ou.q_b * t * t * t / 6.0).exp());
    }

    // Fit ln(-ln ratio) against ln t where the decay is resolved.
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let r = ratio[i];
        if r < 0.905 && r > 0.08 {
            xs.push(t.ln());
            ys.push((-r.ln()).ln());
        }
    }
    let fitted_slope = least_squares_slope(&xs, &ys);

    Ok(FieldAverageReport { times: times.to_vec(), coherence_ratio: ratio, std_err, predicted, fitted_slope, final_state })
}

/// Ordinary least-squares slope; NaN with fewer than two points.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Gaussian record comparison helper: drives the linear-Gaussian moment
/// equations with the same Wiener increments used by an SME run.
pub fn gaussian_reference(
    p: &PhysParams,
    field: &FieldTrajectory,
    dw: &[f64],
) -> Result<ConditionalTrajectory> {
    crate::moments::integrate_conditional_driven(p, field, dw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{OuParams, Prior};
    use crate::stochproc::simulate_ou;
    use approx::assert_relative_eq;

    fn unitary_params(gamma: f64) -> PhysParams {
        // Degenerate oracle limit (M = 0 bypasses the M > 0 modelling
        // invariant on purpose: the SME handles it).
        PhysParams { j: 2.0, gamma, m: 0.0, eta: 0.0, gamma_x: 0.0, gamma_y: 0.0, gamma_z: 0.0 }
    }

    #[test]
    fn dicke_half_spin_is_pauli_over_two() {
        let ops = dicke_operators(0.5).unwrap();
        assert_relative_eq!(ops.jx[(0, 1)].re, 0.5);
        assert_relative_eq!(ops.jy[(0, 1)].im, -0.5);
        assert_relative_eq!(ops.jz[(0, 0)].re, 0.5);
        assert_relative_eq!(ops.jz[(1, 1)].re, -0.5);
    }

    #[test]
    fn dicke_commutators_and_casimir() {
        let j = 10.0;
        let ops = dicke_operators(j).unwrap();
        let comm = &ops.jx * &ops.jy - &ops.jy * &ops.jx;
        let expected = ops.jz.map(|v| Complex64::new(0.0, 1.0) * v);
        assert!((comm - expected).norm() < 1e-12 * j * j);
        let casimir = &ops.jx * &ops.jx + &ops.jy * &ops.jy + &ops.jz * &ops.jz;
        for i in 0..ops.dim() {
            assert_relative_eq!(casimir[(i, i)].re, j * (j + 1.0), max_relative = 1e-13);
        }
        // Jz spectrum is {J, J-1, ..., -J} by construction.
        assert_relative_eq!(ops.jz[(0, 0)].re, j);
        assert_relative_eq!(ops.jz[(ops.dim() - 1, ops.dim() - 1)].re, -j);
    }

    #[test]
    fn dicke_rejects_bad_j() {
        assert!(matches!(dicke_operators(50.5), Err(Error::DimensionCap { .. })));
        assert!(dicke_operators(0.7).is_err());
        assert!(dicke_operators(50.0).is_ok());
    }

    #[test]
    fn css_moments() {
        for &j in &[0.5, 4.0, 17.5] {
            let rho = css_state(j).unwrap();
            let ops = dicke_operators(j).unwrap();
            rho.validate().unwrap();
            assert_relative_eq!(rho.expectation(&ops.jx), j, max_relative = 1e-10);
            assert!(rho.expectation(&ops.jy).abs() < 1e-10 * j);
            assert!(rho.expectation(&ops.jz).abs() < 1e-10 * j);
            assert_relative_eq!(rho.variance(&ops.jy), 0.5 * j, max_relative = 1e-9);
            assert_relative_eq!(rho.variance(&ops.jz), 0.5 * j, max_relative = 1e-9);
            // Purity 1.
            let purity = (&rho.0 * &rho.0).trace().re;
            assert_relative_eq!(purity, 1.0, max_relative = 1e-10);
        }
        // J = 1/2: (1 + sigma_x)/2.
        let rho = css_state(0.5).unwrap();
        assert_relative_eq!(rho.0[(0, 0)].re, 0.5);
        assert_relative_eq!(rho.0[(0, 1)].re, 0.5);
    }

    #[test]
    fn sme_pure_larmor_rotation() {
        let p = unitary_params(1.0);
        let b = 0.05;
        let ou = OuParams { chi: 0.0, q_b: 0.0, sigma0_sq: Prior::Finite(0.0), b0: b };
        let n = 2000;
        let dt = 1e-3;
        let field = simulate_ou(&ou, dt, n, 0);
        let rho0 = css_state(2.0).unwrap();
        let run = integrate_sme(&rho0, &p, &field, 1, dt).unwrap();
        let t_end = dt * n as f64;
        assert_relative_eq!(
            run.jz_mean[n],
            -2.0 * (p.gamma * b * t_end).sin(),
            epsilon = 2.0 * 2e-3
        );
        assert_relative_eq!(
            run.jx_mean[n],
            2.0 * (p.gamma * b * t_end).cos(),
            epsilon = 2.0 * 2e-3
        );
        assert!(run.max_trace_drift < 1e-9);
        for rho in &run.rho_path {
            rho.validate().unwrap();
        }
    }

    #[test]
    fn unconditional_dephasing_decay() {
        // B = 0, only gamma_y: <Jx(t)> = J e^{-gamma_y t/2} to 1e-6.
        let j = 5.0;
        let p = PhysParams { j, gamma: 1.0, m: 0.0, eta: 0.0, gamma_x: 0.0, gamma_y: 2.0, gamma_z: 0.0 };
        let rho0 = css_state(j).unwrap();
        let (dt, n) = (1e-3, 1000);
        let path = integrate_unconditional(&rho0, &p, |_| 0.0, dt, n).unwrap();
        let t = dt * n as f64;
        let jx = path[n].expectation(&dicke_operators(j).unwrap().jx);
        assert_relative_eq!(jx, j * (-0.5 * p.gamma_y * t).exp(), max_relative = 1e-6);
        assert!((path[n].trace().re - 1.0).abs() < 1e-10);
    }

    #[test]
    fn unconditional_matches_constant_field_closed_form() {
        let j = 4.0;
        let p = PhysParams { j, gamma: 1.0, m: 3.0, eta: 0.0, gamma_x: 0.4, gamma_y: 0.7, gamma_z: 0.2 };
        let rho0 = css_state(j).unwrap();
        let b = 0.3;
        let (dt, n) = (2e-4, 2000);
        let path = integrate_unconditional(&rho0, &p, |_| b, dt, n).unwrap();
        let ops = dicke_operators(j).unwrap();
        let t = dt * n as f64;
        let expect = crate::moments::jx_constant_field(t, b, &p);
        assert_relative_eq!(path[n].expectation(&ops.jx), expect, max_relative = 1e-7);
    }

    #[test]
    fn mixture_check_half_spin_analytic() {
        // J = 1/2: the Jy-basis off-diagonal element dephases as
        // e^{-gamma_y dt/2} e^{-i gamma B dt}; both routes must agree with it.
        let p = PhysParams { j: 0.5, gamma: 2.0, m: 0.0, eta: 0.0, gamma_x: 0.0, gamma_y: 0.8, gamma_z: 0.0 };
        let rho0 = css_state(0.5).unwrap();
        let (b, delta_t) = (0.4, 0.5);
        let report = cs_mixture_check(&rho0, b, delta_t, &p, 40_000, 5).unwrap();
        // MC distance should be small and compatible with its standard error.
        assert!(report.distance < 8.0 * report.std_err.max(1e-4), "{report:?}");

        // Exact side against the analytic element.
        let channel = PhysParams { m: 0.0, eta: 0.0, ..p };
        let exact = integrate_unconditional(&rho0, &channel, |_| b, delta_t / 4096.0, 4096)
            .unwrap()
            .pop()
            .unwrap();
        let ops = dicke_operators(0.5).unwrap();
        let eig = ops.jy.symmetric_eigen();
        let rho_y = eig.eigenvectors.adjoint() * &exact.0 * &eig.eigenvectors;
        // Find the (+1/2, -1/2) element.
        let (i_hi, i_lo) = if eig.eigenvalues[0] > eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
        let elem = rho_y[(i_hi, i_lo)];
        let mag = (0.5f64 * p.gamma_y * delta_t).exp().recip() * 0.5;
        assert_relative_eq!(elem.norm(), mag, max_relative = 1e-3);
        let expected_phase = -p.gamma * b * delta_t;
        let phase_diff = (elem.arg() - (rho_y_phase0(&rho0, &eig.eigenvectors, i_hi, i_lo) + expected_phase) + std::f64::consts::PI)
            .rem_euclid(2.0 * std::f64::consts::PI)
            - std::f64::consts::PI;
        assert!(phase_diff.abs() < 1e-3, "phase residual {phase_diff}");
    }

    fn rho_y_phase0(rho0: &DensityMatrix, basis: &CMat, i: usize, j: usize) -> f64 {
        let rho_y = basis.adjoint() * &rho0.0 * basis;
        rho_y[(i, j)].arg()
    }

    #[test]
    fn mixture_distance_shrinks_with_samples() {
        let p = PhysParams { j: 2.0, gamma: 1.5, m: 0.0, eta: 0.0, gamma_x: 0.0, gamma_y: 0.6, gamma_z: 0.0 };
        let rho0 = css_state(2.0).unwrap();
        let d_small = cs_mixture_check(&rho0, 0.2, 0.4, &p, 200, 3).unwrap().distance;
        let d_large = cs_mixture_check(&rho0, 0.2, 0.4, &p, 20_000, 3).unwrap().distance;
        let gain = d_small / d_large;
        assert!(gain > 4.0 && gain < 25.0, "1/sqrt(n) gain was {gain}");
    }

    #[test]
    fn field_average_no_noise_no_decay() {
        let p = unitary_params(1.0);
        let ou = OuParams { chi: 0.0, q_b: 0.0, sigma0_sq: Prior::Finite(0.0), b0: 0.0 };
        let rho0 = css_state(2.0).unwrap();
        let rep = field_average_check(&rho0, &ou, &p, &[0.5, 1.0], 200, 1).unwrap();
        for r in rep.coherence_ratio {
            assert_relative_eq!(r, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn field_average_reference_point() {
        // gamma² q_B t³/6 = 1 at t = 1: ratio e^{-1} within 3 s.e.
        let p = unitary_params(1.0);
        let ou = OuParams { chi: 0.0, q_b: 6.0, sigma0_sq: Prior::Finite(0.0), b0: 0.0 };
        let rho0 = css_state(2.0).unwrap();
        let rep = field_average_check(&rho0, &ou, &p, &[0.5, 1.0], 4000, 7).unwrap();
        let r1 = rep.coherence_ratio[1];
        let se = rep.std_err[1];
        assert!((r1 - (-1.0f64).exp()).abs() < 3.0 * se, "ratio {r1} vs e^-1, se {se}");
        // chi > 0 unsupported.
        let bad = OuParams { chi: 0.1, ..ou };
        assert!(field_average_check(&rho0, &bad, &p, &[1.0], 10, 0).is_err());
    }
}
