//! Ranking permutation, ranked values, gaps and centering.
//!
//! Indices are 0-based throughout the crate: rank 0 is the bottom particle.

use serde::Serialize;

use crate::{Error, Result};

/// The ranking permutation of a state vector.
///
/// `forward[k]` is the particle holding rank `k`, `inverse[i]` is the rank of
/// particle `i`. Ties go to the smaller particle index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RankPermutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl RankPermutation {
    pub fn identity(n: usize) -> Self {
        RankPermutation { forward: (0..n).collect(), inverse: (0..n).collect() }
    }

    pub fn of(x: &[f64]) -> Result<Self> {
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let mut perm = Self::identity(x.len());
        perm.rerank(x);
        Ok(perm)
    }

    /// Re-ranks in place against a new state of the same length.
    ///
    /// Starts from the current order, so a state that moved a little since
    /// the last call sorts in near-linear time. Coordinates must be finite.
    pub fn rerank(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.forward.len());
        let below = |a: usize, b: usize| x[a] < x[b] || (x[a] == x[b] && a < b);
        let f = &mut self.forward;
        for i in 1..f.len() {
            let cur = f[i];
            let mut j = i;
            while j > 0 && below(cur, f[j - 1]) {
                f[j] = f[j - 1];
                j -= 1;
            }
            f[j] = cur;
        }
        for (k, &i) in f.iter().enumerate() {
            self.inverse[i] = k;
        }
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    /// Particle holding rank `k`.
    pub fn particle(&self, k: usize) -> usize {
        self.forward[k]
    }

    /// Rank held by particle `i`.
    pub fn rank(&self, i: usize) -> usize {
        self.inverse[i]
    }
}

pub fn rank_permutation(x: &[f64]) -> Result<RankPermutation> {
    RankPermutation::of(x)
}

/// The ranked vector `y_k = x_{p(k)}`, nondecreasing.
pub fn ranked_values(x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    y.sort_by(f64::total_cmp);
    y
}

/// Adjacent differences of the ranked vector, length `N - 1`.
pub fn gaps(x: &[f64]) -> Vec<f64> {
    ranked_values(x).windows(2).map(|w| w[1] - w[0]).collect()
}

pub fn center(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    center_in_place(&mut out);
    out
}

/// Projects onto the hyperplane `Σ x_i = 0`; the residual mean left by
/// rounding is subtracted once more.
pub fn center_in_place(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    for _ in 0..2 {
        let mean = x.iter().sum::<f64>() / n;
        x.iter_mut().for_each(|v| *v -= mean);
    }
}

/// `u_i = w_{rank(i)}`: particle `i` receives the coordinate of `w` for the
/// rank it currently holds.
pub fn permute_by_inverse(w: &[f64], perm: &RankPermutation) -> Vec<f64> {
    perm.inverse.iter().map(|&k| w[k]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_examples() {
        let p = rank_permutation(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(p.forward(), &[1, 2, 0]);
        assert_eq!(p.inverse(), &[2, 0, 1]);
        assert_eq!(rank_permutation(&[1.0, 1.0]).unwrap().forward(), &[0, 1]);
        assert_eq!(rank_permutation(&[-2.0, 0.5, 7.0]).unwrap(), RankPermutation::identity(3));
        assert!(matches!(rank_permutation(&[0.0, f64::NAN]), Err(Error::NonFinite(1))));
    }

    #[test]
    fn ties_follow_index_order() {
        let p = rank_permutation(&[2.0, 1.0, 2.0, 1.0]).unwrap();
        assert_eq!(p.forward(), &[1, 3, 0, 2]);
    }

    #[test]
    fn ranked_and_gap_examples() {
        assert_eq!(ranked_values(&[3.0, 1.0, 2.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(ranked_values(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(ranked_values(&[-1.0, -3.0]), vec![-3.0, -1.0]);
        assert_eq!(gaps(&[3.0, 1.0, 2.0]), vec![1.0, 1.0]);
        assert_eq!(gaps(&[4.0, 4.0, 4.0]), vec![0.0, 0.0]);
        assert_eq!(gaps(&[5.0, 1.0]), vec![4.0]);
    }

    #[test]
    fn center_examples() {
        assert_eq!(center(&[1.0, 2.0, 3.0]), vec![-1.0, 0.0, 1.0]);
        assert_eq!(center(&[2.5; 4]), vec![0.0; 4]);
    }

    #[test]
    fn permute_examples() {
        let p = rank_permutation(&[0.0, 1.0]).unwrap();
        assert_eq!(permute_by_inverse(&[1.0, 0.0], &p), vec![1.0, 0.0]);
        let id = RankPermutation::identity(3);
        assert_eq!(permute_by_inverse(&[4.0, 5.0, 6.0], &id), vec![4.0, 5.0, 6.0]);
        let p = rank_permutation(&[3.0, 1.0, 2.0]).unwrap();
        let (a, b, c) = (10.0, 20.0, 30.0);
        assert_eq!(permute_by_inverse(&[a, b, c], &p), vec![c, a, b]);
    }

    #[test]
    fn rerank_from_stale_order() {
        let mut p = rank_permutation(&[5.0, 4.0, 3.0, 2.0]).unwrap();
        p.rerank(&[0.0, 1.0, 0.0, -1.0]);
        assert_eq!(p, rank_permutation(&[0.0, 1.0, 0.0, -1.0]).unwrap());
    }

    fn state() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1e3f64..1e3, 2..12)
    }

    proptest! {
        #[test]
        fn ranking_properties(x in state()) {
            let p = rank_permutation(&x).unwrap();
            let n = x.len();
            for k in 0..n {
                prop_assert_eq!(p.rank(p.particle(k)), k);
            }
            for k in 1..n {
                let (a, b) = (p.particle(k - 1), p.particle(k));
                prop_assert!(x[a] <= x[b]);
                if x[a] == x[b] {
                    prop_assert!(a < b);
                }
            }
            let mut sorted = x.clone();
            sorted.sort_by(f64::total_cmp);
            prop_assert_eq!(&ranked_values(&x), &sorted);
            let y: Vec<f64> = p.forward().iter().map(|&i| x[i]).collect();
            prop_assert_eq!(y, sorted.clone());
            let diffs: Vec<f64> = sorted.windows(2).map(|w| w[1] - w[0]).collect();
            prop_assert_eq!(gaps(&x), diffs);
        }

        #[test]
        fn permute_is_a_bijection(x in state(), seed in any::<u64>()) {
            let n = x.len();
            let w: Vec<f64> = (0..n).map(|k| (seed.wrapping_mul(k as u64 + 1) % 1000) as f64).collect();
            let p = rank_permutation(&x).unwrap();
            let u = permute_by_inverse(&w, &p);
            let back: Vec<f64> = p.forward().iter().map(|&i| u[i]).collect();
            prop_assert_eq!(back, w);
        }

        #[test]
        fn gaps_are_translation_invariant(x in state(), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            for (a, b) in gaps(&x).iter().zip(gaps(&shifted)) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn centering(x in state()) {
            let xc = center(&x);
            let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            prop_assert!(xc.iter().sum::<f64>().abs() <= 1e-12 * scale * x.len() as f64);
            let twice = center(&xc);
            for (a, b) in xc.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-12 * scale);
            }
        }

        // Distinct coordinates: centering subtracts a common constant but can
        // round two nearly equal values onto each other.
        #[test]
        fn centering_keeps_ranks(x in prop::collection::hash_set(-1000i32..1000, 2..10)) {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            prop_assert_eq!(rank_permutation(&center(&x)).unwrap(), rank_permutation(&x).unwrap());
        }
    }
}
