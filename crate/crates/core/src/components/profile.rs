use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::time::{Micros, TimeBound};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProfileMode {
    /// Discrete events at the listed times.
    #[default]
    Step,
    /// Constant between points; may be sampled at any time.
    Hold,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub t_us: Micros,
    pub p: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub points: Vec<ProfilePoint>,
    #[serde(default)]
    pub mode: ProfileMode,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileSample {
    pub p: f64,
    pub q: f64,
    pub next: TimeBound,
}

impl LoadProfile {
    pub fn new(points: Vec<ProfilePoint>, mode: ProfileMode) -> Result<Self, String> {
        let profile = LoadProfile { points, mode };
        profile.check()?;
        Ok(profile)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.points.windows(2).any(|w| w[1].t_us <= w[0].t_us) {
            return Err("profile times must be strictly increasing".into());
        }
        Ok(())
    }

    pub fn first_time(&self) -> TimeBound {
        self.points.first().map(|p| p.t_us).into()
    }

    /// Reads a profile file: JSON `{"points": [...], "mode": ...}` or CSV with
    /// the header `t_us,P,Q`.
    pub fn load(path: &Path, mode: ProfileMode) -> Result<Self, String> {
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            let mut reader = csv::Reader::from_path(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let headers = reader.headers().map_err(|e| e.to_string())?.clone();
            if headers.iter().collect::<Vec<_>>() != ["t_us", "P", "Q"] {
                return Err(format!("{}: expected header t_us,P,Q", path.display()));
            }
            let mut points = Vec::new();
            for row in reader.deserialize::<(Micros, f64, f64)>() {
                let (t_us, p, q) = row.map_err(|e| format!("{}: {e}", path.display()))?;
                points.push(ProfilePoint { t_us, p, q });
            }
            LoadProfile::new(points, mode)
        } else {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let profile: LoadProfile = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            profile.check()?;
            Ok(profile)
        }
    }
}

/// Value of the profile at `t_us` and the time of the next listed point.
///
/// Returns the most recent point at or before `t_us` (zeros before the first
/// point). In step mode `t_us` is expected to be an event time, where this
/// coincides with emitting that event.
pub fn profile_step(profile: &LoadProfile, t_us: Micros) -> ProfileSample {
    let i = profile.points.partition_point(|p| p.t_us <= t_us);
    let (p, q) = match i {
        0 => (0.0, 0.0),
        _ => (profile.points[i - 1].p, profile.points[i - 1].q),
    };
    ProfileSample { p, q, next: profile.points.get(i).map(|p| p.t_us).into() }
}

/// Parametric daily shapes for demos and tests.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", deny_unknown_fields)]
pub enum Synthetic {
    /// `base + amplitude * max(0, cos(2π (h - peak_hour) / 24))`, Q as a
    /// fixed ratio of P.
    Residential {
        interval_us: Micros,
        duration_us: Micros,
        base_w: f64,
        amplitude_w: f64,
        peak_hour: f64,
        #[serde(default)]
        q_ratio: f64,
    },
    /// Clear-sky irradiance `peak * sin(π (h - 6) / 12)` between 06:00 and
    /// 18:00, zero otherwise. Written to the P column.
    Solar { interval_us: Micros, duration_us: Micros, peak_w_m2: f64 },
}

impl Synthetic {
    pub fn generate(&self, mode: ProfileMode) -> Result<LoadProfile, String> {
        let (interval, duration) = match *self {
            Synthetic::Residential { interval_us, duration_us, .. }
            | Synthetic::Solar { interval_us, duration_us, .. } => (interval_us, duration_us),
        };
        if interval == 0 {
            return Err("interval_us must be positive".into());
        }
        let hour = |t: Micros| t as f64 / 3.6e9;
        let points = (0..=duration / interval)
            .map(|k| {
                let t_us = k * interval;
                let h = hour(t_us);
                let (p, q) = match *self {
                    Synthetic::Residential { base_w, amplitude_w, peak_hour, q_ratio, .. } => {
                        let p = base_w + amplitude_w * (2.0 * PI * (h - peak_hour) / 24.0).cos().max(0.0);
                        (p, p * q_ratio)
                    }
                    Synthetic::Solar { peak_w_m2, .. } => {
                        let day = h % 24.0;
                        let g = if (6.0..=18.0).contains(&day) {
                            peak_w_m2 * (PI * (day - 6.0) / 12.0).sin().max(0.0)
                        } else {
                            0.0
                        };
                        (g, 0.0)
                    }
                };
                ProfilePoint { t_us, p, q }
            })
            .collect();
        LoadProfile::new(points, mode)
    }
}
