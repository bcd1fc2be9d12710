use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// PV inverter parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvParams {
    /// Output in watts at 1000 W/m².
    pub p_peak: f64,
    /// Inverter AC limit in watts.
    pub p_rated: f64,
    /// `(v_pu, q_var)` points, v strictly increasing. Positive q is reactive
    /// output (generation).
    #[serde(default)]
    pub voltvar: Vec<(f64, f64)>,
}

impl PvParams {
    pub fn check(&self) -> Result<(), String> {
        if self.p_peak.is_nan() || self.p_peak <= 0.0 {
            return Err(format!("p_peak must be positive, got {}", self.p_peak));
        }
        if self.p_rated.is_nan() || self.p_rated <= 0.0 {
            return Err(format!("p_rated must be positive, got {}", self.p_rated));
        }
        if self.voltvar.windows(2).any(|w| w[1].0.partial_cmp(&w[0].0) != Some(Ordering::Greater)) {
            return Err("voltvar voltages must be strictly increasing".into());
        }
        Ok(())
    }
}

/// Active power output in watts for irradiance `g` in W/m².
pub fn pv_power(g: f64, params: &PvParams) -> f64 {
    (params.p_peak * g.max(0.0) / 1_000.0).min(params.p_rated)
}

/// Reactive output in var for a terminal voltage in per unit.
///
/// Linear between curve points, held at the end values outside the curve.
pub fn volt_var(v_pu: f64, curve: &[(f64, f64)]) -> f64 {
    let (Some(&(v_lo, q_lo)), Some(&(v_hi, q_hi))) = (curve.first(), curve.last()) else {
        return 0.0;
    };
    if v_pu <= v_lo {
        return q_lo;
    }
    if v_pu >= v_hi {
        return q_hi;
    }
    let i = curve.partition_point(|&(v, _)| v <= v_pu);
    let (v0, q0) = curve[i - 1];
    let (v1, q1) = curve[i];
    q0 + (q1 - q0) * (v_pu - v0) / (v1 - v0)
}
