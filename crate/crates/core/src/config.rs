//! Run configuration: JSON parsing with strict key checking, validation,
//! named presets, and the log-log convergence fit used by sweep summaries.

use crate::mesh::RegionSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("configuration parse error: {0}")]
    Parse(String),
    #[error("invalid value for field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("convergence fit needs at least 3 positive data points")]
    InsufficientData,
}

/// Solver section of a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSettings {
    /// GMRES restart length.
    pub restart: usize,
    pub max_iterations: usize,
    /// Relative dual-norm tolerance in exact mode.
    pub rel_tol: f64,
    /// Total iteration-error budget eta_it*; enables inexact (bounded) mode.
    pub eta_budget: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            restart: 10,
            max_iterations: 4000,
            rel_tol: 1e-10,
            eta_budget: None,
        }
    }
}

/// Adaptivity section of a run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptivitySettings {
    pub enabled: bool,
    /// Per-slab target for the global estimate eta.
    pub tol: f64,
    /// Fixed marking fraction.
    pub theta: f64,
    pub max_rounds: usize,
}

impl Default for AdaptivitySettings {
    fn default() -> Self {
        AdaptivitySettings {
            enabled: false,
            tol: 1e-3,
            theta: 0.3,
            max_rounds: 5,
        }
    }
}

/// Complete description of one batch run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub box_size: [f64; 3],
    pub coarse: [usize; 3],
    pub epsilon: f64,
    pub mu: f64,
    /// Material / refinement boxes applied on top of the background.
    pub regions: Vec<RegionSpec>,
    /// Uniform polynomial degrees.
    pub p_t: usize,
    pub p: [usize; 3],
    /// Per-element temporal levels: empty = all 0, single entry = broadcast,
    /// otherwise one entry per element (deterministic element order).
    pub temporal_levels: Vec<u8>,
    /// Analytic fixture: "tm_mode", "verwer" or "none".
    pub fixture: String,
    pub tm_m: usize,
    pub tm_n: usize,
    /// Slab length; `None` uses h_min / (2 p_max + 1).
    pub dt: Option<f64>,
    pub t_end: f64,
    /// Dissipative penalty coefficient (0 = conservative scheme).
    pub dissipation_c: f64,
    pub solver: SolverSettings,
    pub adaptivity: AdaptivitySettings,
    pub out_dir: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            box_size: [1.0, 1.0, 1.0],
            coarse: [1, 1, 1],
            epsilon: 1.0,
            mu: 1.0,
            regions: vec![],
            p_t: 1,
            p: [1, 1, 1],
            temporal_levels: vec![],
            fixture: "none".to_string(),
            tm_m: 1,
            tm_n: 1,
            dt: None,
            t_end: 1.0,
            dissipation_c: 0.0,
            solver: SolverSettings::default(),
            adaptivity: AdaptivitySettings::default(),
            out_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |v: f64, field: &'static str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::Invalid {
                    field,
                    reason: format!("must be positive, got {v}"),
                })
            }
        };
        positive(self.epsilon, "epsilon")?;
        positive(self.mu, "mu")?;
        positive(self.t_end, "t_end")?;
        for d in 0..3 {
            positive(self.box_size[d], "box_size")?;
            if self.coarse[d] == 0 {
                return Err(ConfigError::Invalid {
                    field: "coarse",
                    reason: "cell counts must be at least 1".into(),
                });
            }
        }
        if let Some(dt) = self.dt {
            positive(dt, "dt")?;
        }
        if self.p_t < 1 {
            return Err(ConfigError::Invalid {
                field: "p_t",
                reason: "temporal degree must be at least 1".into(),
            });
        }
        if self.dissipation_c < 0.0 {
            return Err(ConfigError::Invalid {
                field: "dissipation_c",
                reason: "must be non-negative".into(),
            });
        }
        match self.fixture.as_str() {
            "tm_mode" => {
                if self.tm_m < 1 || self.tm_n < 1 {
                    return Err(ConfigError::Invalid {
                        field: "tm_m",
                        reason: "mode indices must be at least 1".into(),
                    });
                }
            }
            "verwer" | "none" => {}
            other => {
                return Err(ConfigError::Invalid {
                    field: "fixture",
                    reason: format!("unknown fixture `{other}`"),
                });
            }
        }
        if self.adaptivity.enabled {
            positive(self.adaptivity.tol, "adaptivity.tol")?;
            if !(self.adaptivity.theta > 0.0 && self.adaptivity.theta <= 1.0) {
                return Err(ConfigError::Invalid {
                    field: "adaptivity.theta",
                    reason: "must lie in (0, 1]".into(),
                });
            }
        }
        if self.solver.restart < 1 {
            return Err(ConfigError::Invalid {
                field: "solver.restart",
                reason: "restart length must be at least 1".into(),
            });
        }
        Ok(())
    }

    /// Canonical JSON form (stable field order, pretty-printed).
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parse and validate a JSON configuration document. Unknown keys are
/// rejected with the offending key named in the error.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig =
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Built-in presets covering the standard experiments.
pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    match name {
        // standing cavity mode on a 4x4x1 desk mesh
        "tm" => {
            cfg.coarse = [4, 4, 1];
            cfg.p = [2, 2, 0];
            cfg.p_t = 2;
            cfg.fixture = "tm_mode".into();
            cfg.t_end = 1.0;
        }
        // polynomial-in-space driven problem, spatially exact at p = 2
        "verwer" => {
            cfg.coarse = [2, 1, 2];
            cfg.p = [2, 0, 2];
            cfg.p_t = 1;
            cfg.fixture = "verwer".into();
            cfg.t_end = 1.0;
            cfg.dt = Some(0.25);
        }
        // adaptive run on the driven problem
        "verwer-adaptive" => {
            cfg.coarse = [2, 1, 2];
            cfg.p = [1, 0, 1];
            cfg.p_t = 1;
            cfg.fixture = "verwer".into();
            cfg.t_end = 0.5;
            cfg.dt = Some(0.25);
            cfg.adaptivity.enabled = true;
        }
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Least-squares slope of log(error) against log(step): the observed
/// convergence order, together with the root-mean-square fit residual.
pub fn convergence_fit(points: &[(f64, f64)]) -> Result<(f64, f64), ConfigError> {
    if points.len() < 3 || points.iter().any(|&(h, e)| h <= 0.0 || e <= 0.0) {
        return Err(ConfigError::InsufficientData);
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(h, e) in points {
        let x = h.ln();
        let y = e.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let mut res = 0.0;
    for &(h, e) in points {
        let d = e.ln() - (slope * h.ln() + intercept);
        res += d * d;
    }
    Ok((slope, (res / n).sqrt()))
}
