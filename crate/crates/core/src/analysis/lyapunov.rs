//! Generator of the centered system applied to `V(x) = (‖x‖² + 1)^{1/2}`.
//!
//! Three independent routes are provided: the closed-form continuous part
//! (diagonal covariance only), the jump part integrated against the jump
//! measure, and a finite-difference Monte Carlo estimate built on the
//! simulation engine. The drift scan combines them into the Foster–Lyapunov
//! check `ℒV ≤ −k` outside a ball.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{JumpRankRule, Propagator, RngStream};
use crate::model::{check_stability, jump_mean_vector, ModelSpec};
use crate::ranking::{center, center_in_place, RankPermutation};
use crate::{Error, Result};

const MC_BATCH: usize = 4096;

pub fn lyapunov_v(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() + 1.0).sqrt()
}

/// `Σ_k x_{p(k)} c_k`.
fn rank_weighted(x: &[f64], perm: &RankPermutation, c: &[f64]) -> f64 {
    perm.forward().iter().zip(c).map(|(&i, ck)| x[i] * ck).sum()
}

/// `−Σ_{k<N} (y_{k+1} − y_k) Σ_{j≤k} c_j` for ranked `y`. Equals
/// `Σ_k y_k c_k` whenever `Σ c = 0`.
pub fn gap_weighted(x: &[f64], c: &[f64]) -> f64 {
    let perm = RankPermutation::of(x).expect("finite state");
    let mut partial = 0.0;
    let mut acc = 0.0;
    for k in 0..x.len() - 1 {
        partial += c[k];
        acc -= (x[perm.particle(k + 1)] - x[perm.particle(k)]) * partial;
    }
    acc
}

/// Closed-form continuous part `𝒜V(x)` for diagonal covariance:
///
/// `G(x)/V + ½ (1 − 1/N) Σ σ_k² / V − ½ Σ σ_k² x²_{p(k)} / V³`
///
/// with `G(x) = Σ_k x_{p(k)} ḡ_k`.
pub fn continuous_generator_v(x: &[f64], spec: &ModelSpec) -> Result<f64> {
    if !spec.is_diagonal() {
        return Err(Error::NonDiagonalCovariance);
    }
    let n = x.len() as f64;
    let perm = RankPermutation::of(x)?;
    let v = lyapunov_v(x);
    let g_bar = center(spec.drift());
    let s2 = spec.variances();
    let drift = rank_weighted(x, &perm, &g_bar) / v;
    let trace = (1.0 - 1.0 / n) * s2.iter().sum::<f64>() / v;
    let radial: f64 = perm.forward().iter().zip(&s2).map(|(&i, s)| s * x[i] * x[i]).sum::<f64>() / (v * v * v);
    Ok(drift + 0.5 * (trace - radial))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JumpGenerator {
    /// `𝒩V(x) = ∫ [V(F_x(w)) − V(x)] Λ(dw)`.
    pub value: f64,
    /// Zero when every component was integrated exactly.
    pub std_error: f64,
    /// First-order term `(1/V) Σ_k x_{p(k)} f̄_k`.
    pub leading: f64,
}

/// `F_x(w) = x + w̄` with `w̄`'s rank-`k` coordinate sent to the particle
/// holding rank `k` in `x`.
fn push_forward(x: &[f64], perm: &RankPermutation, w: &[f64], out: &mut [f64]) {
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    for (i, o) in out.iter_mut().enumerate() {
        *o = x[i] + w[perm.rank(i)] - mean;
    }
}

/// The jump part of the generator. Components with finite support are summed
/// exactly; the rest use `mc_samples` draws each.
pub fn jump_generator_v(x: &[f64], spec: &ModelSpec, mc_samples: usize, seed: u64) -> Result<JumpGenerator> {
    let perm = RankPermutation::of(x)?;
    let v = lyapunov_v(x);
    let n = x.len();
    let mut y = vec![0.0; n];
    let mut w = vec![0.0; n];
    let (mut value, mut var) = (0.0, 0.0);
    for (c_idx, comp) in spec.jumps().components().iter().enumerate() {
        if comp.rate == 0.0 {
            continue;
        }
        match comp.law.atoms() {
            Some(atoms) => {
                for (p, atom) in atoms {
                    push_forward(x, &perm, &atom, &mut y);
                    value += comp.rate * p * (lyapunov_v(&y) - v);
                }
            }
            None => {
                let m = mc_samples.max(2);
                let mut rng = RngStream::new(seed, c_idx as u64).displacements;
                let (mut s, mut s2) = (0.0, 0.0);
                for _ in 0..m {
                    comp.law.sample_into(&mut rng, &mut w);
                    push_forward(x, &perm, &w, &mut y);
                    let d = lyapunov_v(&y) - v;
                    s += d;
                    s2 += d * d;
                }
                let mean = s / m as f64;
                let sample_var = (s2 / m as f64 - mean * mean).max(0.0) * m as f64 / (m - 1) as f64;
                value += comp.rate * mean;
                var += comp.rate * comp.rate * sample_var / m as f64;
            }
        }
    }
    let f_bar = center(&jump_mean_vector(spec.jumps()));
    Ok(JumpGenerator { value, std_error: var.sqrt(), leading: rank_weighted(x, &perm, &f_bar) / v })
}

/// Monte Carlo estimate of `(E[f(X̄(h)) | X̄(0) = x] − f(x)) / h`.
///
/// Each sample runs the engine's piecing-out construction over `[0, h]`: an
/// Euler step up to the first jump epoch (or `h`), the jump, and so on. If
/// `gradient` (`∇f(x)`) is given, the mean-zero term `∇f(x) · ΔW` of the
/// first diffusion segment is subtracted as a control variate.
pub fn estimate_generator<F>(
    x: &[f64],
    spec: &ModelSpec,
    h: f64,
    samples: usize,
    seed: u64,
    f: F,
    gradient: Option<&[f64]>,
) -> Result<Estimate>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if !(h > 0.0) || samples == 0 {
        return Err(Error::Config("generator estimate needs h > 0 and samples > 0".into()));
    }
    let n = spec.n_particles();
    if x.len() != n {
        return Err(Error::Dimension { expected: n, got: x.len() });
    }
    let perm = RankPermutation::of(x)?;
    let fx = f(x);
    let lambda0 = spec.jumps().total_rate();
    let clock = (lambda0 > 0.0).then(|| Exp::new(lambda0).expect("positive rate"));
    // ∇f · ΔW = Σ_k ∇f_{p(k)} (F z)_k √dt
    let cv_weights: Option<Vec<f64>> = gradient.map(|grad| {
        let fac = spec.factor();
        (0..n).map(|j| (j..n).map(|k| grad[perm.particle(k)] * fac[k * n + j]).sum()).collect()
    });

    let batches = samples.div_ceil(MC_BATCH);
    let sums: Vec<(f64, f64, usize)> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let count = MC_BATCH.min(samples - b * MC_BATCH);
            let mut rng = RngStream::new(seed, b as u64);
            let mut prop = Propagator::new(spec);
            let mut y = vec![0.0; n];
            let mut z = vec![0.0; n];
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                y.copy_from_slice(x);
                rng.fill_normals(&mut z);
                let mut epoch = clock.as_ref().map_or(f64::INFINITY, |e| e.sample(&mut rng.epochs));
                let first = epoch.min(h);
                prop.brownian_step_with(&mut y, first, &z);
                let control = cv_weights
                    .as_ref()
                    .map_or(0.0, |c| c.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() * first.sqrt());
                let mut t = first;
                while epoch < h {
                    prop.jump(&mut y, &mut rng, JumpRankRule::PreJump);
                    let next = epoch + clock.as_ref().expect("jumps imply a clock").sample(&mut rng.epochs);
                    let stop = next.min(h);
                    prop.brownian_step(&mut y, stop - t, &mut rng);
                    t = stop;
                    epoch = next;
                }
                center_in_place(&mut y);
                let d = (f(&y) - fx - control) / h;
                s += d;
                s2 += d * d;
            }
            (s, s2, count)
        })
        .collect();
    let (s, s2, m) = sums.iter().fold((0.0, 0.0, 0usize), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let mean = s / m as f64;
    let std_error = if m > 1 { ((s2 / m as f64 - mean * mean).max(0.0) / (m - 1) as f64).sqrt() } else { 0.0 };
    Ok(Estimate { mean, std_error, samples: m as u64 })
}

/// Finite-difference Monte Carlo estimate of `ℒV(x)`.
pub fn mc_generator_estimate(x: &[f64], spec: &ModelSpec, h: f64, samples: usize, seed: u64) -> Result<Estimate> {
    let v = lyapunov_v(x);
    let grad: Vec<f64> = x.iter().map(|xi| xi / v).collect();
    estimate_generator(x, spec, h, samples, seed, lyapunov_v, Some(&grad))
}

/// Leading-order drift `−(1/V) Σ_{k<N} (y_{k+1} − y_k) Σ_{j≤k} m̄_j`.
pub fn leading_order_generator(x: &[f64], spec: &ModelSpec) -> f64 {
    let m_bar = check_stability(spec).centered_effective_drifts;
    gap_weighted(x, &m_bar) / lyapunov_v(x)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneratorDiagnostic {
    pub x: Vec<f64>,
    pub continuous: f64,
    pub jump: f64,
    pub jump_std_error: f64,
    pub leading: f64,
    pub mc: Estimate,
    /// `δ*(x)`: Monte Carlo estimate minus the leading-order drift.
    pub residual: f64,
}

pub fn generator_diagnostic(
    x: &[f64],
    spec: &ModelSpec,
    h: f64,
    mc_samples: usize,
    seed: u64,
) -> Result<GeneratorDiagnostic> {
    let continuous = continuous_generator_v(x, spec)?;
    let jump = jump_generator_v(x, spec, mc_samples, seed)?;
    let mc = mc_generator_estimate(x, spec, h, mc_samples, seed ^ 0x5bd1_e995)?;
    let leading = leading_order_generator(x, spec);
    Ok(GeneratorDiagnostic {
        x: x.to_vec(),
        continuous,
        jump: jump.value,
        jump_std_error: jump.std_error,
        leading,
        mc,
        residual: mc.mean - leading,
    })
}

/// `count` unit vectors on the hyperplane `Σ x_i = 0`, reproducible from
/// `seed`.
pub fn scan_directions(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        center_in_place(&mut d);
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-8 {
            d.iter_mut().for_each(|v| *v /= norm);
            out.push(d);
        }
    }
    out
}

/// Random point of `Π` with norm uniform on `[0, max_norm]`.
pub fn random_point_on_plane<R: Rng + ?Sized>(n: usize, max_norm: f64, rng: &mut R) -> Vec<f64> {
    let mut d: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    center_in_place(&mut d);
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = rng.random::<f64>() * max_norm;
    d.iter().map(|v| v * r / norm).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanConfig {
    pub radii: Vec<f64>,
    pub directions: usize,
    /// Ball radius `r` outside which the drift bound is checked.
    pub ball_radius: f64,
    /// Draws per non-atomic jump component (and for the MC fallback).
    pub mc_samples: usize,
    /// Step for the MC fallback when the covariance is not diagonal.
    pub mc_step: f64,
    pub seed: u64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            radii: vec![50.0, 100.0, 1000.0],
            directions: 200,
            ball_radius: 50.0,
            mc_samples: 20_000,
            mc_step: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanPoint {
    pub radius: f64,
    pub direction: usize,
    pub generator: f64,
    pub std_error: f64,
    pub leading: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftConditionReport {
    pub ball_radius: f64,
    pub points: Vec<ScanPoint>,
    /// `−max ℒV` over scanned points outside the ball.
    pub k_hat: Option<f64>,
    /// `N^{-1/2} min_k Σ_{j≤k} m̄_j`.
    pub k_pred: f64,
    /// `max (ℒV + k_pred)` over scanned points inside the ball.
    pub b_hat: Option<f64>,
    pub max_abs_residual_at_largest_radius: f64,
    pub stable: bool,
    /// `ℒV ≤ −k_pred/2` at every scanned point outside the ball.
    pub verdict: bool,
}

pub fn drift_condition_scan(spec: &ModelSpec, cfg: &ScanConfig) -> Result<DriftConditionReport> {
    let n = spec.n_particles();
    let stability = check_stability(spec);
    let k_pred = stability.margin / (n as f64).sqrt();
    let dirs = scan_directions(n, cfg.directions, cfg.seed);
    let jobs: Vec<(usize, f64, usize)> =
        cfg.radii.iter().enumerate().flat_map(|(ri, &r)| (0..dirs.len()).map(move |d| (ri, r, d))).collect();
    let points = jobs
        .par_iter()
        .enumerate()
        .map(|(idx, &(_, radius, d))| {
            let x: Vec<f64> = dirs[d].iter().map(|v| v * radius).collect();
            let point_seed = cfg.seed.wrapping_add((idx as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let (generator, std_error) = if spec.is_diagonal() {
                let jump = jump_generator_v(&x, spec, cfg.mc_samples, point_seed)?;
                (continuous_generator_v(&x, spec)? + jump.value, jump.std_error)
            } else {
                let e = mc_generator_estimate(&x, spec, cfg.mc_step, cfg.mc_samples, point_seed)?;
                (e.mean, e.std_error)
            };
            let leading = leading_order_generator(&x, spec);
            Ok(ScanPoint { radius, direction: d, generator, std_error, leading, residual: generator - leading })
        })
        .collect::<Result<Vec<_>>>()?;

    let outside = points.iter().filter(|p| p.radius >= cfg.ball_radius);
    let k_hat = outside.clone().map(|p| p.generator).reduce(f64::max).map(|m| -m);
    let b_hat = points.iter().filter(|p| p.radius < cfg.ball_radius).map(|p| p.generator + k_pred).reduce(f64::max);
    let verdict = outside.clone().all(|p| p.generator <= -k_pred / 2.0);
    let largest = cfg.radii.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_abs_residual_at_largest_radius =
        points.iter().filter(|p| p.radius == largest).map(|p| p.residual.abs()).fold(0.0, f64::max);
    Ok(DriftConditionReport {
        ball_radius: cfg.ball_radius,
        points,
        k_hat,
        k_pred,
        b_hat,
        max_abs_residual_at_largest_radius,
        stable: stability.stable,
        verdict,
    })
}
