//! Parameter records, unit conventions and linear-Gaussian regime checks.
//!
//! Unit conventions used throughout the crate: times in seconds, fields in
//! Gauss, rates in Hz, field fluctuation strength `q_B` in G^2/s, squared
//! errors in G^2. A gyromagnetic ratio quoted as "1 kHz/mG" is stored as
//! 1e6 Hz/G.

use crate::{Error, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Physical parameters of the spin ensemble and its continuous measurement.
///
/// `j` is the dimensionless half atom-number J = N/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysParams {
    /// Collective spin length J = N/2 (dimensionless, >= 1).
    pub j: f64,
    /// Gyromagnetic ratio in Hz per Gauss.
    pub gamma: f64,
    /// Measurement strength in Hz.
    pub m: f64,
    /// Detection efficiency in [0, 1].
    pub eta: f64,
    /// Collective decoherence rate along x, Hz.
    #[serde(default)]
    pub gamma_x: f64,
    /// Collective decoherence rate along y (the field axis), Hz.
    #[serde(default)]
    pub gamma_y: f64,
    /// Collective decoherence rate along z (the probe axis), Hz.
    #[serde(default)]
    pub gamma_z: f64,
}

impl PhysParams {
    pub fn new(
        j: f64,
        gamma: f64,
        m: f64,
        eta: f64,
        gamma_x: f64,
        gamma_y: f64,
        gamma_z: f64,
    ) -> Result<Self> {
        let p = Self { j, gamma, m, eta, gamma_x, gamma_y, gamma_z };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.j >= 1.0) {
            return Err(Error::InvalidParams(format!("J = {} must be >= 1", self.j)));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParams(format!("gamma = {} must be > 0", self.gamma)));
        }
        if !(self.m > 0.0) {
            return Err(Error::InvalidParams(format!("M = {} must be > 0", self.m)));
        }
        if !(self.eta >= 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidParams(format!("eta = {} must lie in [0, 1]", self.eta)));
        }
        for (name, g) in [("gamma_x", self.gamma_x), ("gamma_y", self.gamma_y), ("gamma_z", self.gamma_z)] {
            if !(g >= 0.0) {
                return Err(Error::InvalidParams(format!("{name} = {g} must be >= 0")));
            }
        }
        Ok(())
    }

    /// Effective decay rate r = M + gamma_y + gamma_z of the pump-axis spin.
    pub fn decay_rate(&self) -> f64 {
        self.m + self.gamma_y + self.gamma_z
    }
}

/// Parameters of the Ornstein-Uhlenbeck field process
/// dB = -chi B dt + dW_B with <dW_B^2> = q_B dt; chi = 0 is the Wiener case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    /// Mean-reversion rate, Hz (>= 0).
    #[serde(default)]
    pub chi: f64,
    /// Fluctuation strength, G^2/s (>= 0).
    pub q_b: f64,
    /// Prior variance of B_0, G^2 (finite or the improper-prior sentinel).
    pub sigma0_sq: Prior,
    /// Initial/prior-mean field, Gauss.
    #[serde(default)]
    pub b0: f64,
}

impl OuParams {
    pub fn new(chi: f64, q_b: f64, sigma0_sq: Prior, b0: f64) -> Result<Self> {
        let ou = Self { chi, q_b, sigma0_sq, b0 };
        ou.validate()?;
        Ok(ou)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chi >= 0.0) {
            return Err(Error::InvalidParams(format!("chi = {} must be >= 0", self.chi)));
        }
        if !(self.q_b >= 0.0) {
            return Err(Error::InvalidParams(format!("q_B = {} must be >= 0", self.q_b)));
        }
        if let Prior::Finite(v) = self.sigma0_sq {
            if !(v >= 0.0) {
                return Err(Error::InvalidParams(format!("sigma0^2 = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Prior variance of the initial field: a finite value or the structural
/// "no prior knowledge" sentinel. The sentinel is never a large float; the
/// Riccati linearization treats it as a distinct initial condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Prior {
    Finite(f64),
    Infinite,
}

impl Prior {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Prior::Infinite)
    }

    /// Finite value, if any.
    pub fn finite(&self) -> Option<f64> {
        match self {
            Prior::Finite(v) => Some(*v),
            Prior::Infinite => None,
        }
    }
}

impl Serialize for Prior {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Prior::Finite(v) => s.serialize_f64(*v),
            Prior::Infinite => s.serialize_str("infinite"),
        }
    }
}

impl<'de> Deserialize<'de> for Prior {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(Prior::Finite)
                .ok_or_else(|| D::Error::custom("sigma0_sq: not a float")),
            serde_json::Value::String(s) if s.eq_ignore_ascii_case("infinite") || s.eq_ignore_ascii_case("inf") => {
                Ok(Prior::Infinite)
            }
            other => Err(D::Error::custom(format!(
                "sigma0_sq: expected a number or \"infinite\", got {other}"
            ))),
        }
    }
}

/// Outcome of the linear-Gaussian regime check. Not an error: callers decide
/// whether to proceed out of regime.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegimeReport {
    /// Effective decay rate r = M + gamma_y + gamma_z, Hz.
    pub r: f64,
    pub chi_ok: bool,
    pub qb_ok: bool,
    pub time_ok: bool,
    /// Ratio of each quantity to its bound (<= 1 means satisfied).
    pub margins: RegimeMargins,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegimeMargins {
    pub chi: f64,
    pub q_b: f64,
    pub time: f64,
}

impl RegimeReport {
    pub fn pass(&self) -> bool {
        self.chi_ok && self.qb_ok && self.time_ok
    }
}

/// Safety factor used to operationalize the strict "<<" on the chi condition:
/// chi must stay a factor 10 below 4r/3.
pub const CHI_MARGIN_FACTOR: f64 = 10.0;

/// Check the three conditions delimiting the linear-Gaussian regime over a
/// horizon `t_max`:
/// chi << 4r/3 (factor-10 margin), q_B <= 3 r^3 / (4 gamma^2), and r t_max <= 1.
pub fn validate_regime(p: &PhysParams, ou: &OuParams, t_max: f64) -> RegimeReport {
    assert!(t_max > 0.0, "t_max must be > 0");
    let r = p.decay_rate();
    let chi_bound = 4.0 * r / (3.0 * CHI_MARGIN_FACTOR);
    let qb_bound = 3.0 * r.powi(3) / (4.0 * p.gamma * p.gamma);
    let margins = RegimeMargins {
        chi: ou.chi / chi_bound,
        q_b: ou.q_b / qb_bound,
        time: r * t_max,
    };
    RegimeReport {
        r,
        chi_ok: margins.chi < 1.0,
        qb_ok: margins.q_b <= 1.0,
        time_ok: margins.time <= 1.0,
        margins,
    }
}

/// Result of absorbing the probe-axis decoherence into the measurement.
#[derive(Debug, Clone, Copy)]
pub struct FoldedParams {
    pub params: PhysParams,
    /// Downstream measurement records must be scaled by sqrt(M / (M - gamma_z)).
    pub record_scale: f64,
}

/// Absorb gamma_z into the measurement channel: M -> M - gamma_z,
/// eta -> eta M / (M - gamma_z), gamma_z -> 0. Idempotent.
pub fn fold_gamma_z(p: &PhysParams) -> Result<FoldedParams> {
    if p.gamma_z == 0.0 {
        return Ok(FoldedParams { params: *p, record_scale: 1.0 });
    }
    if p.m <= p.gamma_z {
        return Err(Error::InvalidReparameterization { m: p.m, gamma_z: p.gamma_z });
    }
    let m_new = p.m - p.gamma_z;
    let eta_new = p.eta * p.m / m_new;
    if eta_new > 1.0 + 1e-12 {
        return Err(Error::InvalidParams(format!(
            "folding gamma_z yields eta' = {eta_new} > 1; parameters are inconsistent"
        )));
    }
    Ok(FoldedParams {
        params: PhysParams {
            m: m_new,
            eta: eta_new.min(1.0),
            gamma_z: 0.0,
            ..*p
        },
        record_scale: (p.m / m_new).sqrt(),
    })
}

/// Rescaled time t_S = (M + gamma_y) t, computed after gamma_z folding.
pub fn rescaled_time(t: f64, p: &PhysParams) -> Result<f64> {
    assert!(t >= 0.0, "t must be >= 0");
    let folded = fold_gamma_z(p)?.params;
    Ok((folded.m + folded.gamma_y) * t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn phys(j: f64, gamma: f64, m: f64, eta: f64, gy: f64, gz: f64) -> PhysParams {
        PhysParams::new(j, gamma, m, eta, 0.0, gy, gz).unwrap()
    }

    #[test]
    fn regime_fig3_params_pass() {
        // chi = 0, q_B = 100 G^2/s, gamma_y = 10 mHz, M = 100 kHz, gamma = 1e6 Hz/G
        let p = phys(1e9, 1e6, 1e5, 1.0, 0.01, 0.0);
        let ou = OuParams::new(0.0, 100.0, Prior::Infinite, 0.0).unwrap();
        let rep = validate_regime(&p, &ou, 1.0 / p.decay_rate());
        assert!(rep.pass(), "{rep:?}");
        assert_relative_eq!(rep.r, 1e5 + 0.01);
    }

    #[test]
    fn regime_qb_bound_breaks_at_1e4() {
        // Appendix-A right column: q_B = 1e4 G^2/s exceeds 3 r^3/(4 gamma^2) ~ 750
        let p = phys(1e7, 1e6, 1e5, 1.0, 1.0, 0.0);
        let qb_bound = 3.0 * p.decay_rate().powi(3) / (4.0 * p.gamma * p.gamma);
        assert_relative_eq!(qb_bound, 750.0, max_relative = 1e-4);
        let ou = OuParams::new(0.0, 1e4, Prior::Infinite, 0.0).unwrap();
        let rep = validate_regime(&p, &ou, 1.0 / p.decay_rate());
        assert!(!rep.qb_ok);
        assert!(rep.chi_ok && rep.time_ok);
    }

    #[test]
    fn regime_static_field_passes() {
        let p = phys(10.0, 1e6, 1e3, 0.5, 0.0, 0.0);
        let ou = OuParams::new(0.0, 0.0, Prior::Finite(0.0), 0.1).unwrap();
        let rep = validate_regime(&p, &ou, 1.0 / p.decay_rate());
        assert!(rep.pass());
    }

    #[test]
    fn fold_identity_when_gamma_z_zero() {
        let p = phys(10.0, 1e6, 1e3, 0.5, 0.1, 0.0);
        let f = fold_gamma_z(&p).unwrap();
        assert_eq!(f.params, p);
        assert_eq!(f.record_scale, 1.0);
    }

    #[test]
    fn fold_example_values() {
        let p = phys(10.0, 1e6, 2.0, 0.5, 0.0, 1.0);
        let f = fold_gamma_z(&p).unwrap();
        assert_relative_eq!(f.params.m, 1.0);
        assert_relative_eq!(f.params.eta, 1.0);
        assert_eq!(f.params.gamma_z, 0.0);
        assert_relative_eq!(f.record_scale, 2f64.sqrt());
    }

    #[test]
    fn fold_degenerate_denominator_errors() {
        let p = phys(10.0, 1e6, 1.0, 0.5, 0.0, 1.0);
        assert!(matches!(fold_gamma_z(&p), Err(Error::InvalidReparameterization { .. })));
    }

    #[test]
    fn fold_is_idempotent() {
        let p = phys(10.0, 1e6, 2.0, 0.25, 0.3, 0.5);
        let once = fold_gamma_z(&p).unwrap().params;
        let twice = fold_gamma_z(&once).unwrap().params;
        assert_eq!(once, twice);
    }

    #[test]
    fn rescaled_time_examples() {
        let p = phys(10.0, 1e6, 1e5, 1.0, 0.01, 0.0);
        assert_eq!(rescaled_time(0.0, &p).unwrap(), 0.0);
        assert_relative_eq!(rescaled_time(1e-5, &p).unwrap(), 1.0000001, max_relative = 1e-12);
        let r = p.m + p.gamma_y;
        assert_relative_eq!(rescaled_time(1.0 / r, &p).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn r_equals_m_plus_gamma_y_after_folding() {
        let p = phys(10.0, 1e6, 2.0, 0.25, 0.3, 0.5);
        let f = fold_gamma_z(&p).unwrap().params;
        assert_eq!(f.decay_rate(), f.m + f.gamma_y);
    }

    #[test]
    fn prior_serde_roundtrip() {
        let fin: Prior = serde_json::from_str("1e-3").unwrap();
        assert_eq!(fin, Prior::Finite(1e-3));
        let inf: Prior = serde_json::from_str("\"infinite\"").unwrap();
        assert!(inf.is_infinite());
        assert_eq!(serde_json::to_string(&inf).unwrap(), "\"infinite\"");
    }
}
