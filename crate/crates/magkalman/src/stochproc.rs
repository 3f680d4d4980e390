//! Ornstein-Uhlenbeck / Wiener field trajectories with exact transition
//! sampling, and statistics of the time-averaged field.

use crate::params::{OuParams, PhysParams, Prior};
use crate::rng::{trajectory_rng, Stream};
use rand::Rng;
use rand_distr::StandardNormal;

/// A discrete-time sample path of the field B_t on a uniform grid.
#[derive(Debug, Clone)]
pub struct FieldTrajectory {
    /// Grid spacing, seconds.
    pub dt: f64,
    /// B_j in Gauss, length n_steps + 1.
    pub values: Vec<f64>,
    /// Master seed this path was drawn from.
    pub seed: u64,
    pub ou: OuParams,
}

impl FieldTrajectory {
    pub fn n_steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn t_max(&self) -> f64 {
        self.dt * self.n_steps() as f64
    }
}

/// A scalar Gaussian law (mean in Gauss, variance in Gauss^2 unless noted).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianLaw {
    pub mean: f64,
    pub variance: f64,
}

/// One-step transition law of the OU process over `dt`:
/// mean B e^{-chi dt}, variance V_P = (q_B/2chi)(1 - e^{-2 chi dt}),
/// with the Wiener limit q_B dt at chi = 0.
pub fn ou_transition_law(b_prev: f64, dt: f64, ou: &OuParams) -> GaussianLaw {
    assert!(dt >= 0.0);
    if ou.chi == 0.0 {
        return GaussianLaw { mean: b_prev, variance: ou.q_b * dt };
    }
    let decay = (-ou.chi * dt).exp();
    // (q_B/2chi)(1 - e^{-2 chi dt}) written via expm1 so chi*dt -> 0 is exact.
    let variance = if ou.q_b == 0.0 {
        0.0
    } else {
        ou.q_b / (2.0 * ou.chi) * (-(-2.0 * ou.chi * dt).exp_m1())
    };
    GaussianLaw { mean: b_prev * decay, variance }
}

/// Stationary-accumulated variance of B_k after time t starting from a
/// deterministic point: (q_B/2chi)(1 - e^{-2 chi t}), Wiener limit q_B t.
pub fn accumulated_variance(t: f64, ou: &OuParams) -> f64 {
    ou_transition_law(0.0, t, ou).variance
}

/// Sample a field trajectory with `n_steps` exact OU transitions.
///
/// `values[0]` is drawn from the prior N(b0, sigma0^2); a zero or infinite
/// prior variance pins it to `b0` (an improper prior has no sampling law, so
/// the prior mean is used and estimation code must not rely on it).
pub fn simulate_ou(ou: &OuParams, dt: f64, n_steps: usize, seed: u64) -> FieldTrajectory {
    simulate_ou_indexed(ou, dt, n_steps, seed, 0)
}

/// As [`simulate_ou`] with an explicit trajectory index selecting the RNG
/// substream, for parallel ensembles under one master seed.
pub fn simulate_ou_indexed(
    ou: &OuParams,
    dt: f64,
    n_steps: usize,
    seed: u64,
    trajectory_index: u64,
) -> FieldTrajectory {
    assert!(dt > 0.0);
    let mut rng = trajectory_rng(seed, trajectory_index, Stream::Field);
    let mut values = Vec::with_capacity(n_steps + 1);
    let b0 = match ou.sigma0_sq {
        Prior::Finite(v) if v > 0.0 => {
            let z: f64 = rng.sample(StandardNormal);
            ou.b0 + v.sqrt() * z
        }
        _ => ou.b0,
    };
    values.push(b0);
    let law0 = ou_transition_law(1.0, dt, ou);
    let decay = law0.mean; // e^{-chi dt}
    let step_sd = law0.variance.sqrt();
    let mut b = b0;
    for _ in 0..n_steps {
        let z: f64 = rng.sample(StandardNormal);
        b = b * decay + step_sd * z;
        values.push(b);
    }
    FieldTrajectory { dt, values, seed, ou: *ou }
}

/// Mean and variance of the time-averaged field B̄_t = (1/t)∫B dτ for a
/// trajectory started deterministically at `b0`:
/// mean = b0 (1-e^{-chi t})/(chi t),
/// variance = q_B (4e^{-chi t} + 2chi t - e^{-2chi t} - 3)/(2 chi^3 t^2)
///          - b0^2 (1-e^{-chi t})^2/(chi^2 t^2),
/// with the chi -> 0 limits taken analytically.
pub fn time_average_stats(ou: &OuParams, t: f64, b0: f64) -> GaussianLaw {
    assert!(t > 0.0);
    let x = ou.chi * t;
    // g(x) = (1 - e^{-x})/x and f(x) = (4e^{-x} + 2x - e^{-2x} - 3)/(2x^3),
    // both evaluated by series for small x to dodge catastrophic cancellation.
    let g = if x < 1e-4 {
        1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0
    } else {
        -(-x).exp_m1() / x
    };
    let f = if x < 0.03 {
        1.0 / 3.0 - x / 4.0 + 7.0 * x * x / 60.0 - x * x * x / 24.0 + 31.0 * x.powi(4) / 2520.0
    } else {
        (4.0 * (-x).exp() + 2.0 * x - (-2.0 * x).exp() - 3.0) / (2.0 * x * x * x)
    };
    GaussianLaw {
        mean: b0 * g,
        variance: ou.q_b * t * f - b0 * b0 * g * g,
    }
}

/// Largest horizon over which the linear-Gaussian approximation stays valid:
/// min{ (M+gamma_y)^{-1}, 4/(3 chi), (3/(4 gamma^2 q_B))^{1/3} },
/// infinite entries skipped.
pub fn validity_horizon(ou: &OuParams, p: &PhysParams) -> f64 {
    let mut t = 1.0 / (p.m + p.gamma_y);
    if ou.chi > 0.0 {
        t = t.min(4.0 / (3.0 * ou.chi));
    }
    if ou.q_b > 0.0 {
        t = t.min((3.0 / (4.0 * p.gamma * p.gamma * ou.q_b)).cbrt());
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Prior;
    use approx::assert_relative_eq;

    fn ou(chi: f64, q_b: f64, b0: f64) -> OuParams {
        OuParams { chi, q_b, sigma0_sq: Prior::Finite(0.0), b0 }
    }

    #[test]
    fn transition_law_examples() {
        let o = ou(1.0, 2.0, 0.0);
        let l = ou_transition_law(0.3, 0.0, &o);
        assert_eq!((l.mean, l.variance), (0.3, 0.0));
        let wiener = ou_transition_law(0.3, 0.5, &ou(0.0, 2.0, 0.0));
        assert_eq!((wiener.mean, wiener.variance), (0.3, 1.0));
        let l = ou_transition_law(1.0, 1.0, &o);
        assert_relative_eq!(l.variance, 1.0 - (-2.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(l.variance, 0.8646647167633873, max_relative = 1e-12);
    }

    #[test]
    fn transition_law_chi_to_zero_is_continuous() {
        let small = ou_transition_law(0.7, 0.1, &ou(1e-12, 3.0, 0.0));
        let zero = ou_transition_law(0.7, 0.1, &ou(0.0, 3.0, 0.0));
        assert_relative_eq!(small.variance, zero.variance, max_relative = 1e-10);
        assert_relative_eq!(small.mean, zero.mean, max_relative = 1e-10);
    }

    #[test]
    fn constant_trajectory_without_noise() {
        let o = ou(0.0, 0.0, 0.4);
        let tr = simulate_ou(&o, 1e-3, 100, 1);
        assert_eq!(tr.values.len(), 101);
        assert!(tr.values.iter().all(|&b| b == 0.4));
    }

    #[test]
    fn wiener_endpoint_variance_matches_monte_carlo() {
        // chi = 0: Var B_k = q_B k dt, checked over 1e4 seeds within 5 s.e.
        let o = ou(0.0, 2.5, 0.0);
        let (dt, k, n) = (1e-2, 40, 10_000);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..n {
            let b = *simulate_ou_indexed(&o, dt, k, 99, i).values.last().unwrap();
            sum += b;
            sumsq += b * b;
        }
        let nf = n as f64;
        let var = sumsq / nf - (sum / nf).powi(2);
        let expected = o.q_b * k as f64 * dt;
        let se = expected * (2.0 / nf).sqrt();
        assert!((var - expected).abs() < 5.0 * se, "var {var} vs {expected} (se {se})");
    }

    #[test]
    fn ou_stationary_variance_matches_monte_carlo() {
        // chi > 0 at large k: Var -> q_B/(2 chi), within 5 s.e.
        let o = ou(2.0, 3.0, 0.0);
        let (dt, k, n) = (5e-2, 200, 10_000);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..n {
            let b = *simulate_ou_indexed(&o, dt, k, 7, i).values.last().unwrap();
            sum += b;
            sumsq += b * b;
        }
        let nf = n as f64;
        let var = sumsq / nf - (sum / nf).powi(2);
        let expected = o.q_b / (2.0 * o.chi);
        let se = expected * (2.0 / nf).sqrt();
        assert!((var - expected).abs() < 5.0 * se, "var {var} vs {expected}");
    }

    #[test]
    fn markov_two_step_consistency() {
        // n steps at 2dt and 2n steps at dt agree in law: compare the first
        // two moments of B_end over an ensemble.
        let o = ou(1.3, 2.0, 0.2);
        let (dt, n_steps, n) = (2e-2, 50, 20_000);
        let (mut m1a, mut m2a, mut m1b, mut m2b) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let a = *simulate_ou_indexed(&o, dt, 2 * n_steps, 3, i).values.last().unwrap();
            let b = *simulate_ou_indexed(&o, 2.0 * dt, n_steps, 4, i).values.last().unwrap();
            m1a += a;
            m2a += a * a;
            m1b += b;
            m2b += b * b;
        }
        let nf = n as f64;
        let (m1a, m2a, m1b, m2b) = (m1a / nf, m2a / nf, m1b / nf, m2b / nf);
        let sd = (m2a - m1a * m1a).sqrt();
        assert!((m1a - m1b).abs() < 5.0 * sd / nf.sqrt(), "means {m1a} vs {m1b}");
        let se_var = (m2a - m1a * m1a) * (2.0 / nf).sqrt();
        assert!(((m2a - m1a * m1a) - (m2b - m1b * m1b)).abs() < 5.0 * se_var);
    }

    #[test]
    fn exact_transition_matches_law_for_positive_chi() {
        let o = ou(4.0, 1.7, 0.9);
        let dt = 0.3;
        let law = ou_transition_law(0.9, dt, &o);
        let n = 20_000;
        let (mut m1, mut m2) = (0.0, 0.0);
        for i in 0..n {
            let b = simulate_ou_indexed(&o, dt, 1, 11, i).values[1];
            m1 += b;
            m2 += b * b;
        }
        let nf = n as f64;
        let mean = m1 / nf;
        let var = m2 / nf - mean * mean;
        assert!((mean - law.mean).abs() < 5.0 * (law.variance / nf).sqrt());
        assert!((var - law.variance).abs() < 5.0 * law.variance * (2.0 / nf).sqrt());
    }

    #[test]
    fn time_average_limits() {
        // chi -> 0: mean -> b0, variance -> q_B t / 3 at b0 = 0.
        let l = time_average_stats(&ou(0.0, 6.0, 0.0), 0.5, 0.0);
        assert_relative_eq!(l.variance, 6.0 * 0.5 / 3.0, max_relative = 1e-12);
        assert_eq!(l.mean, 0.0);
        let l = time_average_stats(&ou(1e-9, 6.0, 0.0), 0.5, 0.7);
        assert_relative_eq!(l.mean, 0.7, max_relative = 1e-8);
        // q_B = 0, b0 = 0: no noise, no average.
        let l = time_average_stats(&ou(2.0, 0.0, 0.0), 0.5, 0.0);
        assert_eq!(l.variance, 0.0);
    }

    #[test]
    fn time_average_series_matches_direct_branch() {
        // Continuity across the series/direct switch at x = chi t = 0.03.
        let o1 = ou(0.029 / 0.5, 2.0, 0.0);
        let o2 = ou(0.031 / 0.5, 2.0, 0.0);
        let v1 = time_average_stats(&o1, 0.5, 0.0).variance;
        let v2 = time_average_stats(&o2, 0.5, 0.0).variance;
        let slope = (v2 - v1) / v1;
        assert!(slope.abs() < 1e-2, "discontinuity at branch switch: {slope}");
        // And against an independent midpoint evaluation at higher x.
        let direct = time_average_stats(&ou(4.0, 2.0, 0.0), 0.5, 0.0).variance;
        let x: f64 = 2.0;
        let f = (4.0 * (-x).exp() + 2.0 * x - (-2.0 * x).exp() - 3.0) / (2.0 * x.powi(3));
        assert_relative_eq!(direct, 2.0 * 0.5 * f, max_relative = 1e-13);
    }

    #[test]
    fn two_sigma_rule_on_wiener_averages() {
        // >= 95% of trajectories keep |B̄_t| within mean + 2 sigma.
        let o = ou(0.0, 3.0, 0.0);
        let (dt, k) = (1e-2, 100);
        let t = dt * k as f64;
        let band = 2.0 * time_average_stats(&o, t, 0.0).variance.sqrt();
        let n = 4000;
        let mut ok = 0;
        for i in 0..n {
            let tr = simulate_ou_indexed(&o, dt, k, 21, i);
            // trapezoidal time average
            let mut s = 0.5 * (tr.values[0] + tr.values[k]);
            for j in 1..k {
                s += tr.values[j];
            }
            let avg = s * dt / t;
            if avg.abs() <= band {
                ok += 1;
            }
        }
        let frac = ok as f64 / n as f64;
        assert!(frac >= 0.95 - 0.01, "2-sigma coverage {frac}");
    }

    #[test]
    fn validity_horizon_cases() {
        let p = PhysParams::new(1e7, 1e6, 1e5, 1.0, 0.0, 1.0, 0.0).unwrap();
        // q_B = 0, chi = 0: measurement-limited.
        let o = ou(0.0, 0.0, 0.0);
        assert_relative_eq!(validity_horizon(&o, &p), 1.0 / (1e5 + 1.0));
        // Appendix-A left column: still measurement-limited.
        let o = ou(0.0, 100.0, 0.0);
        assert_relative_eq!(validity_horizon(&o, &p), 1.0 / (1e5 + 1.0));
        // q_B = 1e4: field-limited at (3/(4 gamma^2 q_B))^{1/3}.
        let o = ou(0.0, 1e4, 0.0);
        let expect = (3.0f64 / (4.0 * 1e12 * 1e4)).cbrt();
        assert_relative_eq!(validity_horizon(&o, &p), expect);
        assert_relative_eq!(expect, 4.217e-6, max_relative = 1e-3);
    }
}
