//! Bayesian-information machinery and the classical-simulation (CS) bound on
//! the field-estimation error: prior information, the Gaussian mixing law
//! that classically simulates the dephasing channel, the Fisher-information
//! recurrence with its closed form, the continuum tanh/coth limits, and the
//! field-averaged dephasing rate.

use crate::params::{OuParams, PhysParams, Prior};
use crate::stochproc::accumulated_variance;
use crate::stochproc::GaussianLaw;
use crate::{Error, Result};

/// State of the Gaussian recurrence: an unnormalized Gaussian
/// C exp(-(B - mu)^2 / 2V).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecurrenceState {
    /// Normalization factor (dimensionless).
    pub c: f64,
    /// Center, Gauss.
    pub mu: f64,
    /// Width, Gauss².
    pub v: f64,
}

/// Discretization of the measurement horizon into k steps of length dt,
/// with the transition variance V_P of the field process and the mixing
/// variance V_Q = gamma_y / dt.
#[derive(Debug, Clone, Copy)]
pub struct DiscretizationParams {
    pub dt: f64,
    pub k: usize,
    /// One-step field transition variance, G².
    pub v_p: f64,
    /// Mixing-law variance gamma_y/dt, Hz².
    pub v_q: f64,
}

impl DiscretizationParams {
    pub fn new(ou: &OuParams, p: &PhysParams, dt: f64, k: usize) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParams("dt must be > 0".into()));
        }
        if p.gamma_y <= 0.0 {
            return Err(Error::DegenerateMixture);
        }
        Ok(Self {
            dt,
            k,
            v_p: accumulated_variance(dt, ou),
            v_q: p.gamma_y / dt,
        })
    }

    /// Build directly from the two variances (the recurrence itself is pure
    /// Gaussian algebra).
    pub fn from_variances(dt: f64, k: usize, v_p: f64, v_q: f64) -> Self {
        Self { dt, k, v_p, v_q }
    }
}

/// Prior contribution to the Bayesian information at time t:
/// J_P = 1 / (sigma0² e^{-2 chi t} + (q_B/2chi)(1 - e^{-2 chi t})),
/// with the Wiener limit 1/(q_B t + sigma0²) and J_P = 0 for an improper
/// prior.
pub fn prior_information(t: f64, ou: &OuParams) -> f64 {
    assert!(t >= 0.0);
    let s0 = match ou.sigma0_sq {
        Prior::Infinite => return 0.0,
        Prior::Finite(v) => v,
    };
    let var = s0 * (-2.0 * ou.chi * t).exp() + accumulated_variance(t, ou);
    1.0 / var
}

/// Gaussian mixing law q(omega | B) = N(gamma B, gamma_y / dt) over the
/// frequency-like variable that classically simulates the dephasing channel.
pub fn mixing_law(b: f64, dt: f64, p: &PhysParams) -> Result<GaussianLaw> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParams("dt must be > 0".into()));
    }
    if p.gamma_y <= 0.0 {
        return Err(Error::DegenerateMixture);
    }
    Ok(GaussianLaw { mean: p.gamma * b, variance: p.gamma_y / dt })
}

/// One step of the Gaussian recurrence:
/// V_j = V_P + V_Q V / (V_Q + gamma² V),
/// mu_j = (V_Q mu + V gamma omega) / (V_Q + gamma² V),
/// C_j = C (2π(gamma² V_P + V_Q + V_P V_Q / V))^{-1/2}
///         exp(-(omega - gamma mu)² / (2(V_Q + gamma² V))).
pub fn fisher_recurrence_step(
    prev: &RecurrenceState,
    omega: f64,
    d: &DiscretizationParams,
    gamma: f64,
) -> RecurrenceState {
    let denom = d.v_q + gamma * gamma * prev.v;
    let c = prev.c
        / (2.0 * std::f64::consts::PI * (gamma * gamma * d.v_p + d.v_q + d.v_p * d.v_q / prev.v))
            .sqrt()
        * (-(omega - gamma * prev.mu).powi(2) / (2.0 * denom)).exp();
    RecurrenceState {
        c,
        mu: (d.v_q * prev.mu + prev.v * gamma * omega) / denom,
        v: d.v_p + d.v_q * prev.v / denom,
    }
}

/// Width recurrence alone (the widths do not depend on the omegas).
pub fn width_recurrence_step(v_prev: f64, d: &DiscretizationParams, gamma: f64) -> f64 {
    d.v_p + d.v_q * v_prev / (d.v_q + gamma * gamma * v_prev)
}

/// Closed form of the width after k steps for an improper prior:
/// V_k = V_P/2 + (s / 2 gamma)(1 + 2/(rho^k - 1)),
/// s = sqrt(V_P (4 V_Q + V_P gamma²)),
/// rho = (2V_Q + gamma(V_P gamma + s)) / (2V_Q + gamma(V_P gamma - s)),
/// with rho^k handled in the log domain.
pub fn variance_closed_form(
    k: usize,
    d: &DiscretizationParams,
    gamma: f64,
    sigma0_sq: Prior,
) -> Result<f64> {
    if !sigma0_sq.is_infinite() {
        return Err(Error::Unsupported(
            "the closed form is stated for an improper prior only; iterate the recurrence for finite sigma0".into(),
        ));
    }
    assert!(k >= 1);
    if d.v_p == 0.0 {
        // Pure information accumulation: 1/V_k = k gamma²/V_Q.
        return Ok(d.v_q / (k as f64 * gamma * gamma));
    }
    let s = (d.v_p * (4.0 * d.v_q + d.v_p * gamma * gamma)).sqrt();
    let den = 2.0 * d.v_q + gamma * (d.v_p * gamma - s);
    let ln_rho = (2.0 * gamma * s / den).ln_1p();
    let pow_term = k as f64 * ln_rho;
    let tail = if pow_term > 700.0 { 0.0 } else { 2.0 / pow_term.exp_m1() };
    Ok(0.5 * d.v_p + s / (2.0 * gamma) * (1.0 + tail))
}

/// Discrete-time Fisher information of the simulating distribution:
/// F = gamma²/V_Q - 1/V_P^{(k)} + 1/V_k, with V_P^{(k)} the accumulated prior
/// variance of B_k. Requires k >= 1.
pub fn fisher_discrete(k: usize, d: &DiscretizationParams, gamma: f64, ou: &OuParams) -> Result<f64> {
    assert!(k >= 1);
    let t = k as f64 * d.dt;
    let prior_term = match ou.sigma0_sq {
        Prior::Infinite => 0.0,
        Prior::Finite(s0) => {
            let vpk = s0 * (-2.0 * ou.chi * t).exp() + accumulated_variance(t, ou);
            1.0 / vpk
        }
    };
    let v_k = match ou.sigma0_sq {
        Prior::Infinite => variance_closed_form(k, d, gamma, Prior::Infinite)?,
        Prior::Finite(s0) => {
            let mut v = s0;
            for _ in 0..k {
                v = width_recurrence_step(v, d, gamma);
            }
            v
        }
    };
    Ok(gamma * gamma / d.v_q - prior_term + 1.0 / v_k)
}

/// Continuum Fisher information for an improper prior:
/// sqrt(gamma²/(gamma_y q_B)) tanh(t sqrt(q_B gamma²/gamma_y)),
/// with the q_B -> 0 limit gamma² t / gamma_y.
pub fn fisher_continuum(t: f64, p: &PhysParams, ou: &OuParams) -> f64 {
    assert!(t >= 0.0);
    if p.gamma_y == 0.0 {
        return f64::INFINITY;
    }
    if ou.q_b == 0.0 {
        return p.gamma * p.gamma * t / p.gamma_y;
    }
    let x = t * (ou.q_b * p.gamma * p.gamma / p.gamma_y).sqrt();
    (p.gamma * p.gamma / (p.gamma_y * ou.q_b)).sqrt() * x.tanh()
}

/// The classical-simulation bound at time t together with its two-regime
/// split and the crossover time.
#[derive(Debug, Clone, Copy)]
pub struct CsLimit {
    /// sqrt(gamma_y q_B)/gamma · coth(t sqrt(q_B gamma²/gamma_y)), G².
    pub value: f64,
    /// Short-time branch gamma_y/(gamma² t) (the q_B = 0 form).
    pub short_time: f64,
    /// Long-time plateau sqrt(gamma_y q_B)/gamma.
    pub long_time: f64,
    /// Crossover t'_CS = (1/gamma) sqrt(gamma_y/q_B), s.
    pub crossover: f64,
}

/// Decoherence-induced lower bound on the estimation error. With gamma_y = 0
/// there is no classical-simulation floor and the bound is zero.
pub fn cs_limit(t: f64, p: &PhysParams, ou: &OuParams) -> CsLimit {
    assert!(t > 0.0);
    let (g, gy, qb) = (p.gamma, p.gamma_y, ou.q_b);
    if gy == 0.0 {
        return CsLimit { value: 0.0, short_time: 0.0, long_time: 0.0, crossover: 0.0 };
    }
    let short_time = gy / (g * g * t);
    if qb == 0.0 {
        return CsLimit { value: short_time, short_time, long_time: 0.0, crossover: f64::INFINITY };
    }
    let x = t * (qb * g * g / gy).sqrt();
    CsLimit {
        value: (gy * qb).sqrt() / g / x.tanh(),
        short_time,
        long_time: (gy * qb).sqrt() / g,
        crossover: (gy / qb).sqrt() / g,
    }
}

/// Effective dephasing rate after averaging over Wiener field fluctuations:
/// Gamma(t) = gamma² q_B t². Only the chi = 0 case has this closed form.
pub fn averaged_dephasing_rate(t: f64, p: &PhysParams, ou: &OuParams) -> Result<f64> {
    if ou.chi != 0.0 {
        return Err(Error::Unsupported(
            "the field-averaged dephasing rate is derived for the Wiener (chi = 0) case".into(),
        ));
    }
    Ok(p.gamma * p.gamma * ou.q_b * t * t)
}

/// Brute-force verification oracle for the Gaussian recurrence: nested
/// Gauss-Legendre quadrature of the convolution chain, independent of the
/// recurrence implementation. Test infrastructure; not part of the modelling
/// API.
pub mod oracle {
    use super::{DiscretizationParams, RecurrenceState};

    /// Nodes and weights of an n-point Gauss-Legendre rule on [-1, 1],
    /// computed by Newton iteration on the Legendre polynomial.
    pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..(n + 1) / 2 {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                // Evaluate P_n(x) and P'_n(x) by recurrence.
                let mut p0 = 1.0;
                let mut p1 = x;
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        (nodes, weights)
    }

    fn gaussian(x: f64, mean: f64, var: f64) -> f64 {
        (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    /// Evaluate P_k(b_k) = ∫ dB_{k-1} ... ∫ dB_0
    ///   Π_j K_P(B_{j+1} - B_j) q(omega_j | B_j) P_0(B_0)
    /// by k nested composite Gauss-Legendre passes over a ±8σ box.
    pub fn nested_convolution(
        b_k: f64,
        omegas: &[f64],
        d: &DiscretizationParams,
        gamma: f64,
        p0: &RecurrenceState,
        nodes_per_dim: usize,
    ) -> f64 {
        let k = omegas.len();
        assert!(k >= 1);
        // Integration box: generous cover of the prior plus k diffusion steps.
        let spread = (p0.v + (k as f64 + 1.0) * d.v_p).sqrt() * 8.0
            + p0.mu.abs()
            + b_k.abs()
            + omegas.iter().map(|w| w.abs() / gamma).fold(0.0, f64::max);
        let (gl_nodes, gl_weights) = gauss_legendre(nodes_per_dim);
        let lo = -spread;
        let hi = spread;
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let xs: Vec<f64> = gl_nodes.iter().map(|&u| mid + half * u).collect();
        let ws: Vec<f64> = gl_weights.iter().map(|&w| w * half).collect();

        // Forward pass: f_0(b) = q(omega_0|b) P_0(b); then
        // f_{j}(b) = q(omega_j|b) ∫ K_P(b - b') f_{j-1}(b') db' for j < k,
        // and finally P_k(b_k) = ∫ K_P(b_k - b') f_{k-1}(b') db'.
        let mut f: Vec<f64> = xs
            .iter()
            .map(|&b| {
                p0.c * (-(b - p0.mu) * (b - p0.mu) / (2.0 * p0.v)).exp()
                    * gaussian(omegas[0], gamma * b, d.v_q)
            })
            .collect();
        for j in 1..k {
            let mut next = vec![0.0; xs.len()];
            for (idx, &b) in xs.iter().enumerate() {
                let mut acc = 0.0;
                for (jdx, &bp) in xs.iter().enumerate() {
                    acc += ws[jdx] * gaussian(b, bp, d.v_p) * f[jdx];
                }
                next[idx] = acc * gaussian(omegas[j], gamma * b, d.v_q);
            }
            f = next;
        }
        let mut acc = 0.0;
        for (jdx, &bp) in xs.iter().enumerate() {
            acc += ws[jdx] * gaussian(b_k, bp, d.v_p) * f[jdx];
        }
        acc
    }

    /// Fit (C, mu, V) of an exact Gaussian from three evaluations around b0.
    pub fn fit_gaussian<F: Fn(f64) -> f64>(eval: F, b0: f64, h: f64) -> RecurrenceState {
        let (fm, f0, fp) = (eval(b0 - h).ln(), eval(b0).ln(), eval(b0 + h).ln());
        let a2 = (fp + fm - 2.0 * f0) / (2.0 * h * h);
        let a1 = (fp - fm) / (2.0 * h);
        let v = -1.0 / (2.0 * a2);
        let mu = b0 + a1 * v;
        let c = (f0 + (b0 - mu) * (b0 - mu) / (2.0 * v)).exp();
        RecurrenceState { c, mu, v }
    }
}
