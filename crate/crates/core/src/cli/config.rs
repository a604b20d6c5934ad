//! Experiment configuration documents.
//!
//! A configuration is one JSON object with four sections: `model`, `sim`,
//! `analysis` and `output`. Unknown keys are rejected everywhere. Ranks in
//! the document are 1-based from the bottom (rank 1 is the lowest particle).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::ScanConfig;
use crate::engine::{JumpRankRule, SimConfig};
use crate::model::{DisplacementLaw, JumpComponent, JumpMeasure, ModelSpec, ScalarLaw};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub sim: SimSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// A per-rank vector: one value for every rank, an explicit list, or a fill
/// value with sparse overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerRank {
    Uniform(f64),
    Vector(Vec<f64>),
    Sparse(SparseVector),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseVector {
    #[serde(default)]
    pub fill: f64,
    pub ranks: Vec<RankValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankValue {
    pub rank: usize,
    pub value: f64,
}

impl PerRank {
    pub fn expand(&self, n: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            PerRank::Uniform(v) => Ok(vec![*v; n]),
            PerRank::Vector(v) if v.len() == n => Ok(v.clone()),
            PerRank::Vector(v) => Err(Error::Config(format!("model.{what}: expected {n} entries, got {}", v.len()))),
            PerRank::Sparse(s) => {
                let mut out = vec![s.fill; n];
                for rv in &s.ranks {
                    out[rank_index(rv.rank, n, what)?] = rv.value;
                }
                Ok(out)
            }
        }
    }
}

fn rank_index(rank: usize, n: usize, what: &str) -> Result<usize> {
    if rank == 0 || rank > n {
        return Err(Error::Config(format!("model.{what}: rank {rank} is outside 1..={n}")));
    }
    Ok(rank - 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub particles: usize,
    pub drift: PerRank,
    /// Diagonal covariance. Exactly one of `variances` and `covariance`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variances: Option<PerRank>,
    /// Full covariance matrix, row by row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub jumps: Vec<JumpSection>,
}

/// One rated jump component: either a scalar law on one rank, or a full
/// displacement law on the ranked vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpSection {
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<ScalarLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub displacement: Option<DisplacementLaw>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    #[serde(default = "one_u64")]
    pub replications: u64,
    #[serde(default = "one_usize")]
    pub record_stride: usize,
    /// Defaults to a fifth of the horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    /// Initial state; all particles at the origin when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub jump_rule: JumpRankRule,
}

fn one_u64() -> u64 {
    1
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Report {
    Stability,
    Gaps,
    Occupation,
    TvVsTime,
    CapitalCurve,
    LyapunovScan,
}

impl Report {
    pub const ALL: [Report; 6] = [
        Report::Stability,
        Report::Gaps,
        Report::Occupation,
        Report::TvVsTime,
        Report::CapitalCurve,
        Report::LyapunovScan,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub reports: Vec<Report>,
    pub bins: usize,
    /// Number of evenly spaced times for the TV-vs-time curve.
    pub tv_points: usize,
    /// Defaults to the horizon.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capital_time: Option<f64>,
    pub capital_replications: u64,
    pub scan: ScanSection,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            reports: Report::ALL.to_vec(),
            bins: crate::analysis::DEFAULT_BINS,
            tv_points: 20,
            capital_time: None,
            capital_replications: 10,
            scan: ScanSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    pub radii: Vec<f64>,
    pub directions: usize,
    pub ball_radius: f64,
    pub mc_samples: usize,
    pub mc_step: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        let d = ScanConfig::default();
        ScanSection {
            radii: d.radii,
            directions: d.directions,
            ball_radius: d.ball_radius,
            mc_samples: d.mc_samples,
            mc_step: d.mc_step,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Used when `--out` is not given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directory: Option<String>,
    pub formats: Vec<Format>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: None, formats: vec![Format::Json, Format::Csv] }
    }
}

impl ExperimentConfig {
    /// Parses and validates a document. Syntax and type errors carry the
    /// line and column reported by the JSON parser.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.model_spec()?;
        cfg.sim_config().validate()?;
        cfg.initial_state()?;
        cfg.burn_in()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let m = &self.model;
        let n = m.particles;
        if n < 2 {
            return Err(Error::Config(format!("model.particles must be at least 2, got {n}")));
        }
        let drift = m.drift.expand(n, "drift")?;
        let mut components = Vec::with_capacity(m.jumps.len());
        for (i, j) in m.jumps.iter().enumerate() {
            let law = match (&j.rank, &j.law, &j.displacement) {
                (Some(r), Some(l), None) => {
                    DisplacementLaw::OnRank { rank: rank_index(*r, n, "jumps")?, dim: n, law: l.clone() }
                }
                (None, None, Some(d)) => d.clone(),
                _ => {
                    return Err(Error::Config(format!(
                        "model.jumps[{i}]: give either `rank` with `law`, or `displacement`"
                    )))
                }
            };
            components.push(JumpComponent { rate: j.rate, law });
        }
        let jumps = JumpMeasure::new(n, components)?;
        match (&m.variances, &m.covariance) {
            (Some(v), None) => ModelSpec::diagonal(drift, &v.expand(n, "variances")?, jumps),
            (None, Some(rows)) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Config(format!("model.covariance must be {n}×{n}")));
                }
                ModelSpec::new(drift, rows.concat(), jumps)
            }
            _ => Err(Error::Config("model: give exactly one of `variances` and `covariance`".into())),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        let s = &self.sim;
        SimConfig {
            horizon: s.horizon,
            step: s.step,
            seed: s.seed,
            replications: s.replications,
            record_stride: s.record_stride,
            jump_rule: s.jump_rule,
        }
    }

    pub fn initial_state(&self) -> Result<Vec<f64>> {
        let n = self.model.particles;
        match &self.sim.x0 {
            None => Ok(vec![0.0; n]),
            Some(x) if x.len() != n => Err(Error::Config(format!("sim.x0: expected {n} entries, got {}", x.len()))),
            Some(x) if x.iter().any(|v| !v.is_finite()) => Err(Error::Config("sim.x0 must be finite".into())),
            Some(x) => Ok(x.clone()),
        }
    }

    pub fn burn_in(&self) -> Result<f64> {
        let b = self.sim.burn_in.unwrap_or(self.sim.horizon / 5.0);
        if !(b >= 0.0 && b < self.sim.horizon) {
            return Err(Error::Config(format!("sim.burn_in {b} must lie in [0, horizon)")));
        }
        Ok(b)
    }

    pub fn scan_config(&self) -> ScanConfig {
        let s = &self.analysis.scan;
        ScanConfig {
            radii: s.radii.clone(),
            directions: s.directions,
            ball_radius: s.ball_radius,
            mc_samples: s.mc_samples,
            mc_step: s.mc_step,
            seed: self.sim.seed,
        }
    }

    pub fn wants(&self, report: Report) -> bool {
        self.analysis.reports.contains(&report)
    }

    pub fn wants_format(&self, format: Format) -> bool {
        self.output.formats.contains(&format)
    }
}
