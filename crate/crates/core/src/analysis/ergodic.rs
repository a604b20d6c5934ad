use std::collections::BTreeMap;

use serde::Serialize;

use crate::engine::Trajectory;
use crate::ranking::{center, RankPermutation};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PermutationShare {
    /// Particle (1-based) holding each rank from the bottom.
    pub permutation: Vec<usize>,
    pub fraction: f64,
}

/// Time-weighted share of each ranking permutation and of each
/// (particle, rank) pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OccupationStats {
    pub permutation_fractions: Vec<PermutationShare>,
    /// `rank_occupation[i][k]`: fraction of time particle `i` held rank `k`.
    pub rank_occupation: Vec<Vec<f64>>,
    pub total_time: f64,
}

impl OccupationStats {
    pub fn fraction_of(&self, forward: &[usize]) -> f64 {
        self.permutation_fractions
            .iter()
            .find(|s| s.permutation.iter().zip(forward).all(|(a, b)| *a == b + 1))
            .map_or(0.0, |s| s.fraction)
    }
}

/// The permutation on `[t_j, t_{j+1})` is that of record `j`.
pub fn occupation_fractions(traj: &Trajectory) -> Result<OccupationStats> {
    let n = traj.n_particles();
    let times = traj.times();
    let mut by_perm: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut occupation = vec![vec![0.0; n]; n];
    let mut perm = RankPermutation::identity(n);
    let mut total = 0.0;
    for j in 0..traj.len().saturating_sub(1) {
        let dt = times[j + 1] - times[j];
        if dt <= 0.0 {
            continue;
        }
        perm.rerank(traj.state(j));
        *by_perm.entry(perm.forward().to_vec()).or_default() += dt;
        for (k, &i) in perm.forward().iter().enumerate() {
            occupation[i][k] += dt;
        }
        total += dt;
    }
    if total <= 0.0 {
        return Err(Error::EmptySample("trajectory spans zero time".into()));
    }
    let permutation_fractions = by_perm
        .into_iter()
        .map(|(p, d)| PermutationShare { permutation: p.iter().map(|i| i + 1).collect(), fraction: d / total })
        .collect();
    occupation.iter_mut().flatten().for_each(|v| *v /= total);
    Ok(OccupationStats { permutation_fractions, rank_occupation: occupation, total_time: total })
}

/// `(1/T) ∫ f(X̄(t)) dt` by the trapezoidal rule on the recorded grid.
///
/// At a jump epoch the interval ending there uses the pre-jump record, so the
/// integrand is evaluated at left limits.
pub fn time_average<F: Fn(&[f64]) -> f64>(traj: &Trajectory, f: F) -> Result<f64> {
    let times = traj.times();
    if traj.len() < 2 {
        return Err(Error::EmptySample("trajectory has fewer than two records".into()));
    }
    let mut prev = f(&center(traj.state(0)));
    let mut integral = 0.0;
    for j in 1..traj.len() {
        let cur = f(&center(traj.state(j)));
        integral += 0.5 * (prev + cur) * (times[j] - times[j - 1]);
        prev = cur;
    }
    let span = times[traj.len() - 1] - times[0];
    if span <= 0.0 {
        return Err(Error::EmptySample("trajectory spans zero time".into()));
    }
    Ok(integral / span)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{simulate, RecordKind, SimConfig};
    use crate::model::{JumpMeasure, ModelSpec, ScalarLaw};

    fn constant(n_records: usize) -> Trajectory {
        let mut t = Trajectory::empty(3, 0, String::new());
        for j in 0..n_records {
            t.push(j as f64 * 0.5, &[2.0, 0.0, 1.0], RecordKind::Grid);
        }
        t
    }

    #[test]
    fn constant_trajectory() {
        let occ = occupation_fractions(&constant(10)).unwrap();
        assert_eq!(occ.permutation_fractions.len(), 1);
        assert_eq!(occ.permutation_fractions[0].permutation, vec![2, 3, 1]);
        assert_eq!(occ.permutation_fractions[0].fraction, 1.0);
        assert_eq!(occ.rank_occupation[0], vec![0.0, 0.0, 1.0]);
        assert_eq!(occ.total_time, 4.5);
        assert_eq!(time_average(&constant(10), |_| 1.0).unwrap(), 1.0);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(occupation_fractions(&constant(1)).is_err());
        assert!(time_average(&constant(1), |_| 1.0).is_err());
    }

    #[test]
    fn fractions_partition_time() {
        let jumps = JumpMeasure::per_rank(vec![Some((1.0, ScalarLaw::Constant { value: 1.0 })), None, None]).unwrap();
        let spec = ModelSpec::diagonal(vec![0.0; 3], &[1.0; 3], jumps).unwrap();
        let traj = simulate(&spec, &[0.0, 0.0, 0.0], &SimConfig::new(50.0, 0.01, 1), 0).unwrap();
        let occ = occupation_fractions(&traj).unwrap();
        let total: f64 = occ.permutation_fractions.iter().map(|s| s.fraction).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for i in 0..3 {
            let row: f64 = occ.rank_occupation[i].iter().sum();
            let col: f64 = (0..3).map(|r| occ.rank_occupation[r][i]).sum();
            assert!((row - 1.0).abs() < 1e-12 && (col - 1.0).abs() < 1e-12);
        }
        assert!((occ.total_time - 50.0).abs() < 1e-9);

        // Indicator of one permutation: trapezoid and left-endpoint rules
        // differ only on intervals where the ranking switches.
        let target = vec![1usize, 0, 2];
        let avg = time_average(&traj, |x| f64::from(RankPermutation::of(x).unwrap().forward() == &target[..])).unwrap();
        assert!((avg - occ.fraction_of(&target)).abs() < 0.01, "{avg} vs {}", occ.fraction_of(&target));
    }
}
