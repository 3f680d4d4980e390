//! Adaptive explicit Runge-Kutta integration (Dormand-Prince 5(4)).
//!
//! The integrator exposes a post-step hook invoked after every accepted step;
//! the Riccati solvers use it to re-project symmetry and to renormalize the
//! X/Y linearization before its exponential growth overflows.

use crate::{Error, Result};
use nalgebra::SVector;

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Starting step; estimated from the initial derivative when None.
    pub h_init: Option<f64>,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-9, atol: 0.0, h_init: None, max_steps: 20_000_000 }
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const A7: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
// b5 - b4, for the embedded error estimate.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate dy/dt = f(t, y) from `t0` to `t1` (t1 >= t0).
///
/// `post_step(t, &mut y)` runs after each accepted step; it returns `true`
/// when it modified `y` (the cached FSAL derivative is then recomputed).
/// Returns the final state together with the last accepted step size, which
/// can seed the next segment of a piecewise integration.
pub fn integrate_adaptive<const N: usize, F, H>(
    f: F,
    t0: f64,
    t1: f64,
    y0: SVector<f64, N>,
    opts: &OdeOptions,
    mut post_step: H,
) -> Result<(SVector<f64, N>, f64)>
where
    F: Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
    H: FnMut(f64, &mut SVector<f64, N>) -> bool,
{
    let span = t1 - t0;
    assert!(span >= 0.0, "integration span must be non-negative");
    if span == 0.0 {
        return Ok((y0, opts.h_init.unwrap_or(0.0)));
    }

    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    if !k1.iter().all(|v| v.is_finite()) {
        return Err(Error::IntegrationDiverged { step: 0, t });
    }

    let mut h = opts.h_init.unwrap_or_else(|| initial_step(&y, &k1, span, opts));
    h = h.min(span);

    let mut steps = 0usize;
    while t < t1 {
        if steps >= opts.max_steps {
            return Err(Error::StepBudgetExhausted { t });
        }
        steps += 1;
        if t + h > t1 {
            h = t1 - t;
        }

        let k2 = f(t + C[0] * h, &(y + k1 * (A2[0] * h)));
        let k3 = f(t + C[1] * h, &(y + (k1 * A3[0] + k2 * A3[1]) * h));
        let k4 = f(t + C[2] * h, &(y + (k1 * A4[0] + k2 * A4[1] + k3 * A4[2]) * h));
        let k5 = f(
            t + C[3] * h,
            &(y + (k1 * A5[0] + k2 * A5[1] + k3 * A5[2] + k4 * A5[3]) * h),
        );
        let k6 = f(
            t + C[4] * h,
            &(y + (k1 * A6[0] + k2 * A6[1] + k3 * A6[2] + k4 * A6[3] + k5 * A6[4]) * h),
        );
        let y_new = y
            + (k1 * A7[0] + k3 * A7[2] + k4 * A7[3] + k5 * A7[4] + k6 * A7[5]) * h;
        let k7 = f(t + h, &y_new);

        let finite = y_new.iter().all(|v| v.is_finite()) && k7.iter().all(|v| v.is_finite());
        let mut err_norm = 0.0f64;
        if finite {
            let mut acc = 0.0;
            let mut n_used = 0usize;
            for i in 0..N {
                let e = h
                    * (E[0] * k1[i]
                        + E[2] * k3[i]
                        + E[3] * k4[i]
                        + E[4] * k5[i]
                        + E[5] * k6[i]
                        + E[6] * k7[i]);
                if e == 0.0 {
                    continue;
                }
                let scale = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
                if scale == 0.0 {
                    // A component moved away from exact zero; measure against
                    // the step change itself.
                    acc += (e / (opts.rtol * (y_new[i] - y[i]).abs().max(f64::MIN_POSITIVE))).powi(2);
                } else {
                    acc += (e / scale).powi(2);
                }
                n_used += 1;
            }
            err_norm = if n_used == 0 { 0.0 } else { (acc / n_used as f64).sqrt() };
        }

        if finite && err_norm <= 1.0 {
            t += h;
            y = y_new;
            let modified = post_step(t, &mut y);
            k1 = if modified { f(t, &y) } else { k7 };
            let factor = if err_norm == 0.0 {
                5.0
            } else {
                (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= factor;
        } else {
            let factor = if finite {
                (0.9 * err_norm.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.2
            };
            h *= factor;
            if !(h > 0.0) || t + h == t {
                return Err(Error::IntegrationDiverged { step: steps, t });
            }
        }
    }
    Ok((y, h))
}

fn initial_step<const N: usize>(
    y0: &SVector<f64, N>,
    f0: &SVector<f64, N>,
    span: f64,
    opts: &OdeOptions,
) -> f64 {
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..N {
        let scale = opts.atol + opts.rtol * y0[i].abs();
        if scale > 0.0 {
            d0 += (y0[i] / scale).powi(2);
            d1 += (f0[i] / scale).powi(2);
        }
    }
    let (d0, d1) = ((d0 / N as f64).sqrt(), (d1 / N as f64).sqrt());
    if d0 < 1e-10 || d1 < 1e-10 {
        (span * 1e-6).max(f64::MIN_POSITIVE)
    } else {
        (0.01 * d0 / d1).min(span)
    }
}

/// Classical fixed-step RK4 driving a state via a user-supplied derivative;
/// used where the driving term is tabulated on the same grid (for example a
/// sampled field path).
pub fn rk4_fixed_step<const N: usize, F>(
    f: F,
    t: f64,
    dt: f64,
    y: &SVector<f64, N>,
) -> SVector<f64, N>
where
    F: Fn(f64, &SVector<f64, N>) -> SVector<f64, N>,
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * dt, &(y + k1 * (0.5 * dt)));
    let k3 = f(t + 0.5 * dt, &(y + k2 * (0.5 * dt)));
    let k4 = f(t + dt, &(y + k3 * dt));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector2;

    #[test]
    fn exponential_decay_high_accuracy() {
        let opts = OdeOptions { rtol: 1e-10, atol: 1e-14, ..Default::default() };
        let (y, _) = integrate_adaptive(
            |_t, y: &Vector2<f64>| Vector2::new(-y[0], -2.0 * y[1]),
            0.0,
            3.0,
            Vector2::new(1.0, 1.0),
            &opts,
            |_, _| false,
        )
        .unwrap();
        assert_relative_eq!(y[0], (-3.0f64).exp(), max_relative = 1e-9);
        assert_relative_eq!(y[1], (-6.0f64).exp(), max_relative = 1e-9);
    }

    #[test]
    fn stiff_onset_power_law() {
        // y' = -y/t like behaviour: y' = -a y / (1 + a t), exact y = 1/(1 + a t).
        let a = 1e12;
        let opts = OdeOptions { rtol: 1e-10, atol: 0.0, ..Default::default() };
        let (y, _) = integrate_adaptive(
            |t, y: &SVector<f64, 1>| SVector::<f64, 1>::new(-a * y[0] / (1.0 + a * t)),
            0.0,
            1e-6,
            SVector::<f64, 1>::new(1.0),
            &opts,
            |_, _| false,
        )
        .unwrap();
        assert_relative_eq!(y[0], 1.0 / (1.0 + a * 1e-6), max_relative = 1e-8);
    }

    #[test]
    fn rk4_matches_harmonic_oscillator() {
        let mut y = Vector2::new(1.0, 0.0);
        let dt = 1e-3;
        for i in 0..1000 {
            y = rk4_fixed_step(
                |_t, y: &Vector2<f64>| Vector2::new(y[1], -y[0]),
                i as f64 * dt,
                dt,
                &y,
            );
        }
        assert_relative_eq!(y[0], 1f64.cos(), max_relative = 1e-10);
        assert_relative_eq!(y[1], -(1f64.sin()), max_relative = 1e-10);
    }
}
