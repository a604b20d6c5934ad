//! The governing triple: drift vector, covariance matrix and finite jump
//! measure, together with the effective-drift stability verdict.
//!
//! Every jump measure is a finite mixture of rated components, and every
//! component has closed-form first and second moments, so the stability
//! verdict is exact arithmetic with no Monte Carlo error.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::ranking::center;
use crate::{Error, Result};

/// Relative pivot tolerance for the Cholesky factorization of the covariance.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Largest atom set that [`DisplacementLaw::atoms`] will enumerate.
const MAX_ATOMS: usize = 4096;

/// A one-dimensional displacement law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarLaw {
    Constant {
        value: f64,
    },
    Exponential {
        rate: f64,
    },
    Normal {
        mean: f64,
        variance: f64,
    },
    /// Finite mixture of point masses as `(probability, value)` pairs.
    Discrete {
        atoms: Vec<(f64, f64)>,
    },
}

impl ScalarLaw {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        match self {
            ScalarLaw::Constant { value } if !value.is_finite() => {
                bad(format!("constant law value {value} is not finite"))
            }
            ScalarLaw::Exponential { rate } if !(rate.is_finite() && *rate > 0.0) => {
                bad(format!("exponential rate {rate} must be positive and finite"))
            }
            ScalarLaw::Normal { mean, variance } if !(mean.is_finite() && variance.is_finite() && *variance >= 0.0) => {
                bad(format!("normal law ({mean}, {variance}) is invalid"))
            }
            ScalarLaw::Discrete { atoms } => {
                if atoms.is_empty() {
                    return bad("discrete law has no atoms".into());
                }
                if atoms.iter().any(|&(p, v)| !(p.is_finite() && p >= 0.0 && v.is_finite())) {
                    return bad("discrete law atoms must be finite with p >= 0".into());
                }
                let total: f64 = atoms.iter().map(|a| a.0).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return bad(format!("discrete law probabilities sum to {total}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            ScalarLaw::Constant { value } => *value,
            ScalarLaw::Exponential { rate } => 1.0 / rate,
            ScalarLaw::Normal { mean, .. } => *mean,
            ScalarLaw::Discrete { atoms } => atoms.iter().map(|(p, v)| p * v).sum(),
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            ScalarLaw::Constant { value } => value * value,
            ScalarLaw::Exponential { rate } => 2.0 / (rate * rate),
            ScalarLaw::Normal { mean, variance } => variance + mean * mean,
            ScalarLaw::Discrete { atoms } => atoms.iter().map(|(p, v)| p * v * v).sum(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ScalarLaw::Constant { value } => *value,
            ScalarLaw::Exponential { rate } => Exp::new(*rate).expect("validated").sample(rng),
            ScalarLaw::Normal { mean, variance } => Normal::new(*mean, variance.sqrt()).expect("validated").sample(rng),
            ScalarLaw::Discrete { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for &(p, v) in atoms {
                    acc += p;
                    if u < acc {
                        return v;
                    }
                }
                atoms.last().expect("validated").1
            }
        }
    }

    /// Finite support as `(probability, value)` pairs, if the law has one.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            ScalarLaw::Constant { value } => Some(vec![(1.0, *value)]),
            ScalarLaw::Discrete { atoms } => Some(atoms.clone()),
            ScalarLaw::Normal { mean, variance } if *variance == 0.0 => Some(vec![(1.0, *mean)]),
            _ => None,
        }
    }
}

/// The law of one jump's displacement vector, indexed by rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisplacementLaw {
    PointMass {
        vector: Vec<f64>,
    },
    /// Independent coordinates, one scalar law per rank.
    Product {
        laws: Vec<ScalarLaw>,
    },
    /// A scalar law on a single rank (0-based); all other ranks stay put.
    OnRank {
        rank: usize,
        dim: usize,
        law: ScalarLaw,
    },
}

impl DisplacementLaw {
    pub fn dim(&self) -> usize {
        match self {
            DisplacementLaw::PointMass { vector } => vector.len(),
            DisplacementLaw::Product { laws } => laws.len(),
            DisplacementLaw::OnRank { dim, .. } => *dim,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DisplacementLaw::PointMass { vector } => {
                if let Some(i) = vector.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(i));
                }
                Ok(())
            }
            DisplacementLaw::Product { laws } => laws.iter().try_for_each(ScalarLaw::validate),
            DisplacementLaw::OnRank { rank, dim, law } => {
                if rank >= dim {
                    return Err(Error::InvalidModel(format!(
                        "jump rank {} out of range for {} particles",
                        rank + 1,
                        dim
                    )));
                }
                law.validate()
            }
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        self.per_coordinate(ScalarLaw::mean, |v| v)
    }

    pub fn second_moment(&self) -> Vec<f64> {
        self.per_coordinate(ScalarLaw::second_moment, |v| v * v)
    }

    fn per_coordinate(&self, scalar: impl Fn(&ScalarLaw) -> f64, point: impl Fn(f64) -> f64) -> Vec<f64> {
        match self {
            DisplacementLaw::PointMass { vector } => vector.iter().map(|&v| point(v)).collect(),
            DisplacementLaw::Product { laws } => laws.iter().map(scalar).collect(),
            DisplacementLaw::OnRank { rank, dim, law } => {
                let mut out = vec![0.0; *dim];
                out[*rank] = scalar(law);
                out
            }
        }
    }

    /// Draws one displacement into `out`, which must have length `dim()`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            DisplacementLaw::PointMass { vector } => out.copy_from_slice(vector),
            DisplacementLaw::Product { laws } => {
                for (o, law) in out.iter_mut().zip(laws) {
                    *o = law.sample(rng);
                }
            }
            DisplacementLaw::OnRank { rank, law, .. } => {
                out.fill(0.0);
                out[*rank] = law.sample(rng);
            }
        }
    }

    /// Enumerates the law when it has a (small) finite support.
    pub fn atoms(&self) -> Option<Vec<(f64, Vec<f64>)>> {
        match self {
            DisplacementLaw::PointMass { vector } => Some(vec![(1.0, vector.clone())]),
            DisplacementLaw::OnRank { rank, dim, law } => law.atoms().map(|atoms| {
                atoms
                    .into_iter()
                    .map(|(p, v)| {
                        let mut w = vec![0.0; *dim];
                        w[*rank] = v;
                        (p, w)
                    })
                    .collect()
            }),
            DisplacementLaw::Product { laws } => {
                let mut acc: Vec<(f64, Vec<f64>)> = vec![(1.0, Vec::with_capacity(laws.len()))];
                for law in laws {
                    let atoms = law.atoms()?;
                    if acc.len() * atoms.len() > MAX_ATOMS {
                        return None;
                    }
                    acc = acc
                        .iter()
                        .flat_map(|(p, w)| {
                            atoms.iter().map(move |&(q, v)| {
                                let mut w = w.clone();
                                w.push(v);
                                (p * q, w)
                            })
                        })
                        .collect();
                }
                Some(acc)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JumpComponent {
    pub rate: f64,
    pub law: DisplacementLaw,
}

/// A finite jump measure on ℝ^N represented as a mixture of rated laws.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JumpMeasure {
    dim: usize,
    components: Vec<JumpComponent>,
    total_rate: f64,
}

impl JumpMeasure {
    pub fn new(dim: usize, components: Vec<JumpComponent>) -> Result<Self> {
        for c in &components {
            if !(c.rate.is_finite() && c.rate >= 0.0) {
                return Err(Error::InvalidModel(format!("jump rate {} must be finite and >= 0", c.rate)));
            }
            if c.law.dim() != dim {
                return Err(Error::Dimension { expected: dim, got: c.law.dim() });
            }
            c.law.validate()?;
        }
        let total_rate = components.iter().map(|c| c.rate).sum();
        let measure = JumpMeasure { dim, components, total_rate };
        second_moment_check(&measure)?;
        Ok(measure)
    }

    /// The jump-free measure.
    pub fn none(dim: usize) -> Self {
        JumpMeasure { dim, components: Vec::new(), total_rate: 0.0 }
    }

    /// Independent jumps of ranked particles: entry `k` is the (rate, law)
    /// of rank `k`'s jumps, embedded with zero displacement elsewhere.
    pub fn per_rank(laws: Vec<Option<(f64, ScalarLaw)>>) -> Result<Self> {
        let dim = laws.len();
        let components = laws
            .into_iter()
            .enumerate()
            .filter_map(|(rank, l)| {
                l.map(|(rate, law)| JumpComponent { rate, law: DisplacementLaw::OnRank { rank, dim, law } })
            })
            .collect();
        Self::new(dim, components)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[JumpComponent] {
        &self.components
    }

    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    pub fn is_empty(&self) -> bool {
        self.total_rate == 0.0
    }

    /// Picks a component with probability `rate / total_rate` given `u ∈ [0, 1)`.
    pub fn pick(&self, u: f64) -> &JumpComponent {
        let target = u * self.total_rate;
        let mut acc = 0.0;
        for c in &self.components {
            acc += c.rate;
            if target < acc {
                return c;
            }
        }
        self.components.iter().rev().find(|c| c.rate > 0.0).expect("pick called on an empty jump measure")
    }
}

/// `f_k = ∫ z_k Λ(dz)`: the mean displacement rate contributed by jumps to
/// each rank.
pub fn jump_mean_vector(jumps: &JumpMeasure) -> Vec<f64> {
    let mut f = vec![0.0; jumps.dim];
    for c in &jumps.components {
        for (fk, m) in f.iter_mut().zip(c.law.mean()) {
            *fk += c.rate * m;
        }
    }
    f
}

/// `∫ z_k² Λ(dz)` per rank; fails if any coordinate is not finite.
pub fn second_moment_check(jumps: &JumpMeasure) -> Result<Vec<f64>> {
    let mut s = vec![0.0; jumps.dim];
    for c in &jumps.components {
        for (sk, m) in s.iter_mut().zip(c.law.second_moment()) {
            *sk += c.rate * m;
        }
    }
    if let Some(k) = s.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidModel(format!("jump second moment for rank {} is not finite", k + 1)));
    }
    Ok(s)
}

/// The governing triple plus particle count.
#[derive(Clone, Debug, Serialize)]
pub struct ModelSpec {
    drift: Vec<f64>,
    /// Row-major N×N.
    covariance: Vec<f64>,
    jumps: JumpMeasure,
    #[serde(skip)]
    factor: Vec<f64>,
    #[serde(skip)]
    diagonal: bool,
}

impl ModelSpec {
    /// `covariance` is row-major N×N; it must be symmetric positive definite.
    pub fn new(drift: Vec<f64>, covariance: Vec<f64>, jumps: JumpMeasure) -> Result<Self> {
        let n = drift.len();
        if n < 2 {
            return Err(Error::InvalidModel(format!("need at least 2 particles, got {n}")));
        }
        if covariance.len() != n * n {
            return Err(Error::Dimension { expected: n * n, got: covariance.len() });
        }
        if jumps.dim() != n {
            return Err(Error::Dimension { expected: n, got: jumps.dim() });
        }
        if let Some(i) = drift.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if let Some(i) = covariance.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (covariance[i * n + j], covariance[j * n + i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE) {
                    return Err(Error::InvalidModel(format!("covariance is not symmetric at ({}, {})", i + 1, j + 1)));
                }
            }
        }
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || covariance[i * n + j] == 0.0));
        let factor = if diagonal { diagonal_factor(&covariance, n)? } else { cholesky(&covariance, n)? };
        Ok(ModelSpec { drift, covariance, jumps, factor, diagonal })
    }

    /// Diagonal covariance `diag(σ_1², …, σ_N²)`.
    pub fn diagonal(drift: Vec<f64>, variances: &[f64], jumps: JumpMeasure) -> Result<Self> {
        let n = variances.len();
        let mut cov = vec![0.0; n * n];
        for (i, v) in variances.iter().enumerate() {
            cov[i * n + i] = *v;
        }
        Self::new(drift, cov, jumps)
    }

    pub fn n_particles(&self) -> usize {
        self.drift.len()
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn jumps(&self) -> &JumpMeasure {
        &self.jumps
    }

    /// Lower-triangular `F` with `F Fᵀ = A`, row-major.
    pub fn factor(&self) -> &[f64] {
        &self.factor
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    /// Diagonal of the covariance matrix.
    pub fn variances(&self) -> Vec<f64> {
        let n = self.n_particles();
        (0..n).map(|i| self.covariance[i * n + i]).collect()
    }
}

fn diagonal_factor(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let pivot = a[j * n + j];
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite { index: j + 1, pivot });
        }
        l[j * n + j] = pivot.sqrt();
    }
    Ok(l)
}

fn cholesky(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut pivot = a[j * n + j];
        for k in 0..j {
            pivot -= l[j * n + k] * l[j * n + k];
        }
        if !(pivot > PIVOT_TOLERANCE * a[j * n + j].abs()) || pivot <= 0.0 {
            return Err(Error::NotPositiveDefinite { index: j + 1, pivot });
        }
        let d = pivot.sqrt();
        l[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / d;
        }
    }
    Ok(l)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityReport {
    pub jump_means: Vec<f64>,
    pub effective_drifts: Vec<f64>,
    pub centered_effective_drifts: Vec<f64>,
    /// `Σ_{j≤k} m̄_j` for `k = 1..N-1`.
    pub partial_sums: Vec<f64>,
    pub margin: f64,
    pub stable: bool,
}

/// Effective drifts `m = g + f`, centered, and the bottom-group partial sums.
/// The system is stable iff every partial sum is strictly positive.
pub fn check_stability(spec: &ModelSpec) -> StabilityReport {
    let jump_means = jump_mean_vector(&spec.jumps);
    let effective_drifts: Vec<f64> = spec.drift.iter().zip(&jump_means).map(|(g, f)| g + f).collect();
    stability_from_effective(jump_means, effective_drifts)
}

pub(crate) fn stability_from_effective(jump_means: Vec<f64>, effective_drifts: Vec<f64>) -> StabilityReport {
    let centered = center(&effective_drifts);
    let n = centered.len();
    // Σ_{j≤k} m_j − k·mean avoids accumulating the rounding of each m̄_j.
    let mean = effective_drifts.iter().sum::<f64>() / n as f64;
    let partial_sums: Vec<f64> = effective_drifts[..n - 1]
        .iter()
        .scan(0.0, |acc, m| {
            *acc += m;
            Some(*acc)
        })
        .enumerate()
        .map(|(k, s)| s - (k + 1) as f64 * mean)
        .collect();
    let margin = partial_sums.iter().copied().fold(f64::INFINITY, f64::min);
    StabilityReport {
        jump_means,
        effective_drifts,
        centered_effective_drifts: centered,
        partial_sums,
        stable: margin > 0.0,
        margin,
    }
}
