//! Modified Bessel functions I0, I1, K0, K1 and their exponentially scaled
//! variants, accurate to near machine precision for x >= 0.
//!
//! Small arguments use the ascending series (all-positive terms for I, the
//! standard log series for K); large arguments use the asymptotic expansions,
//! whose terms decay far below 1e-16 before the series turns around at the
//! crossover points chosen here (x = 30 for I, x = 8 for K).

const I_CROSSOVER: f64 = 30.0;
const K_CROSSOVER: f64 = 8.0;
/// Euler-Mascheroni constant.
const EULER_GAMMA: f64 = 0.5772156649015328606;

/// I0(x) e^{-x}.
pub fn i0e(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < I_CROSSOVER {
        i0_series(x) * (-x).exp()
    } else {
        i_asymptotic(0, x)
    }
}

/// I1(x) e^{-x}.
pub fn i1e(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < I_CROSSOVER {
        i1_series(x) * (-x).exp()
    } else {
        i_asymptotic(1, x)
    }
}

/// K0(x) e^{x}.
pub fn k0e(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < K_CROSSOVER {
        k0_small(x) * x.exp()
    } else {
        k_asymptotic(0, x)
    }
}

/// K1(x) e^{x}.
pub fn k1e(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < K_CROSSOVER {
        k1_small(x) * x.exp()
    } else {
        k_asymptotic(1, x)
    }
}

/// I0(x); overflows for x beyond ~709.
pub fn i0(x: f64) -> f64 {
    i0e(x) * x.exp()
}

/// I1(x); overflows for x beyond ~709.
pub fn i1(x: f64) -> f64 {
    i1e(x) * x.exp()
}

pub fn k0(x: f64) -> f64 {
    k0e(x) * (-x).exp()
}

pub fn k1(x: f64) -> f64 {
    k1e(x) * (-x).exp()
}

fn i0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

fn i1_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 0.5 * x;
    let mut sum = term;
    let mut k = 1.0;
    loop {
        term *= q / (k * (k + 1.0));
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}

/// Asymptotic expansion of I_nu(x) e^{-x} for large x, truncated at the
/// smallest term.
fn i_asymptotic(nu: u32, x: f64) -> f64 {
    let mu = 4.0 * (nu * nu) as f64;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut prev = f64::INFINITY;
    for k in 1..60 {
        let kf = k as f64;
        term *= -(mu - (2.0 * kf - 1.0).powi(2)) / (8.0 * x * kf);
        if term.abs() >= prev {
            break;
        }
        sum += term;
        prev = term.abs();
        if term.abs() < 1e-18 {
            break;
        }
    }
    sum / (2.0 * std::f64::consts::PI * x).sqrt()
}

/// Asymptotic expansion of K_nu(x) e^{x} for large x.
fn k_asymptotic(nu: u32, x: f64) -> f64 {
    let mu = 4.0 * (nu * nu) as f64;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut prev = f64::INFINITY;
    for k in 1..60 {
        let kf = k as f64;
        term *= (mu - (2.0 * kf - 1.0).powi(2)) / (8.0 * x * kf);
        if term.abs() >= prev {
            break;
        }
        sum += term;
        prev = term.abs();
        if term.abs() < 1e-18 {
            break;
        }
    }
    sum * (std::f64::consts::FRAC_PI_2 / x).sqrt()
}

/// K0 via the ascending log series: K0 = -(ln(x/2) + gamma) I0 + sum.
fn k0_small(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let lead = -((0.5 * x).ln() + EULER_GAMMA);
    let mut term = 1.0; // q^k / (k!)^2
    let mut hk = 0.0; // harmonic number H_k
    let mut sum = 0.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * k);
        hk += 1.0 / k;
        let add = term * hk;
        sum += add;
        if add < (sum.abs() + 1.0) * 1e-18 {
            break;
        }
        k += 1.0;
    }
    lead * i0_series(x) + sum
}

/// K1 via the ascending series:
/// K1 = (ln(x/2) + gamma) I1 + 1/x - (x/4) sum_k (H_k + H_{k+1}) q^k / (k!(k+1)!).
fn k1_small(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let lead = (0.5 * x).ln() + EULER_GAMMA;
    // k = 0 term: (H_0 + H_1) q^0 / (0! 1!) = 1
    let mut term = 1.0; // q^k / (k! (k+1)!)
    let mut hk = 0.0;
    let mut hk1 = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= q / (k * (k + 1.0));
        hk += 1.0 / k;
        hk1 += 1.0 / (k + 1.0);
        let add = term * (hk + hk1);
        sum += add;
        if add < sum * 1e-18 {
            break;
        }
        k += 1.0;
    }
    lead * i1_series(x) + 1.0 / x - 0.25 * x * sum
}
