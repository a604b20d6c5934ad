use serde::Serialize;

use crate::engine::Trajectory;
use crate::{Error, Result};

/// Log ranked market weight against log rank, with caps `S_i = exp(X_i)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapitalCurve {
    pub time: f64,
    pub replication: u64,
    /// `(ln k, ln μ_(k))` for `k = 1..N`, largest weight first.
    pub points: Vec<(f64, f64)>,
}

impl CapitalCurve {
    pub fn ranked_weights(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1.exp()).collect()
    }
}

/// Log market weights ranked from the top. The maximum is subtracted before
/// exponentiating, which leaves the weights unchanged.
pub fn ranked_log_weights(x: &[f64]) -> Vec<f64> {
    let top = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = x.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
    let mut logw: Vec<f64> = x.iter().map(|v| v - top - log_total).collect();
    logw.sort_by(|a, b| b.total_cmp(a));
    logw
}

pub fn capital_curve_of_state(x: &[f64], time: f64, replication: u64) -> CapitalCurve {
    let points = ranked_log_weights(x).into_iter().enumerate().map(|(k, lw)| (((k + 1) as f64).ln(), lw)).collect();
    CapitalCurve { time, replication, points }
}

pub fn capital_curve(traj: &Trajectory, at_time: f64) -> Result<CapitalCurve> {
    if at_time > traj.end_time() {
        return Err(Error::Config(format!("capital curve time {at_time} is past the horizon {}", traj.end_time())));
    }
    let x = traj.state_at(at_time).ok_or_else(|| Error::EmptySample("trajectory has no record".into()))?;
    Ok(capital_curve_of_state(x, at_time, traj.replication))
}
