//! Trajectory simulation by piecing out.
//!
//! Between jump epochs the named system follows Euler–Maruyama steps whose
//! drift and covariance are assigned by the ranking at the start of each
//! step. Jump epochs form a Poisson process of rate `λ0`; each epoch splits
//! the grid step that straddles it, so jump times are exact.

mod export;
mod rng;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::ModelSpec;
use crate::ranking::{permute_by_inverse, RankPermutation};
use crate::{Error, Result};

pub use export::{read_trajectory, write_jump_marks_csv, write_trajectory_csv};
pub use rng::RngStream;

/// Which ranking assigns jump displacements to named particles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpRankRule {
    /// Rank by the state just before the jump.
    #[default]
    PreJump,
    /// Iterate `x⁺ = x⁻ + ζ` permuted by the ranking of `x⁺` until the
    /// ranking stops changing (falls back to the last iterate).
    PostJumpFixedPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub step: f64,
    pub seed: u64,
    pub replications: u64,
    pub record_stride: usize,
    pub jump_rule: JumpRankRule,
}

impl SimConfig {
    pub fn new(horizon: f64, step: f64, seed: u64) -> Self {
        SimConfig { horizon, step, seed, replications: 1, record_stride: 1, jump_rule: JumpRankRule::PreJump }
    }

    pub fn with_replications(mut self, replications: u64) -> Self {
        self.replications = replications;
        self
    }

    pub fn with_stride(mut self, record_stride: usize) -> Self {
        self.record_stride = record_stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSimConfig(m.to_string()));
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad("horizon must be positive and finite");
        }
        if !(self.step > 0.0 && self.step <= self.horizon) {
            return bad("step must satisfy 0 < step <= horizon");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.record_stride == 0 {
            return bad("record_stride must be at least 1");
        }
        Ok(())
    }

    /// Number of grid steps; the last one may be shorter than `step`.
    pub fn n_steps(&self) -> usize {
        let r = self.horizon / self.step;
        let nearest = r.round();
        if (r - nearest).abs() <= 1e-9 * r {
            nearest as usize
        } else {
            r.ceil() as usize
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Grid,
    /// Left limit at a jump epoch; always followed by a `PostJump` record
    /// at the same time.
    PreJump,
    PostJump,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpMark {
    pub time: f64,
    /// Displacement per rank, as drawn.
    pub displacement: Vec<f64>,
    /// Index of the `PostJump` record.
    pub record: usize,
}

/// A recorded path of the named system.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    n: usize,
    times: Vec<f64>,
    states: Vec<f64>,
    kinds: Vec<RecordKind>,
    jump_marks: Vec<JumpMark>,
    pub replication: u64,
    pub fingerprint: String,
}

impl Trajectory {
    pub(crate) fn empty(n: usize, replication: u64, fingerprint: String) -> Self {
        Trajectory {
            n,
            times: Vec::new(),
            states: Vec::new(),
            kinds: Vec::new(),
            jump_marks: Vec::new(),
            replication,
            fingerprint,
        }
    }

    pub(crate) fn push(&mut self, t: f64, x: &[f64], kind: RecordKind) {
        self.times.push(t);
        self.states.extend_from_slice(x);
        self.kinds.push(kind);
    }

    pub(crate) fn push_mark(&mut self, mark: JumpMark) {
        self.jump_marks.push(mark);
    }

    pub fn n_particles(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn kinds(&self) -> &[RecordKind] {
        &self.kinds
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.states[j * self.n..(j + 1) * self.n]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.n)
    }

    pub fn jump_marks(&self) -> &[JumpMark] {
        &self.jump_marks
    }

    pub fn pre_jump_state(&self, mark: &JumpMark) -> &[f64] {
        self.state(mark.record - 1)
    }

    pub fn post_jump_state(&self, mark: &JumpMark) -> &[f64] {
        self.state(mark.record)
    }

    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// State at time `t`: the last record with time ≤ `t` (post-jump at an
    /// epoch).
    pub fn state_at(&self, t: f64) -> Option<&[f64]> {
        let j = self.times.partition_point(|&s| s <= t);
        (j > 0).then(|| self.state(j - 1))
    }

    /// SHA-256 over every recorded bit.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        for (t, k) in self.times.iter().zip(&self.kinds) {
            h.update(t.to_bits().to_le_bytes());
            h.update([*k as u8]);
        }
        for v in &self.states {
            h.update(v.to_bits().to_le_bytes());
        }
        for m in &self.jump_marks {
            h.update(m.time.to_bits().to_le_bytes());
            h.update((m.record as u64).to_le_bytes());
            for v in &m.displacement {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// `x + ζ` with rank `k`'s displacement going to whichever particle holds
/// rank `k` in `x`.
pub fn apply_jump(x: &[f64], zeta: &[f64]) -> Result<Vec<f64>> {
    let perm = RankPermutation::of(x)?;
    Ok(x.iter().zip(permute_by_inverse(zeta, &perm)).map(|(a, b)| a + b).collect())
}

/// Stepping machinery with scratch buffers for one model.
pub struct Propagator<'a> {
    spec: &'a ModelSpec,
    perm: RankPermutation,
    normals: Vec<f64>,
    increment: Vec<f64>,
    displacement: Vec<f64>,
    scratch: Vec<f64>,
    sd: Option<Vec<f64>>,
}

impl<'a> Propagator<'a> {
    pub fn new(spec: &'a ModelSpec) -> Self {
        let n = spec.n_particles();
        let sd = spec.is_diagonal().then(|| spec.variances().iter().map(|v| v.sqrt()).collect());
        Propagator {
            spec,
            perm: RankPermutation::identity(n),
            normals: vec![0.0; n],
            increment: vec![0.0; n],
            displacement: vec![0.0; n],
            scratch: vec![0.0; n],
            sd,
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    /// One Euler–Maruyama step of length `h`: draws `ΔL ~ N(g h, A h)` and
    /// adds `ΔL_k` to the particle holding rank `k` at the start of the step.
    pub fn brownian_step(&mut self, x: &mut [f64], h: f64, rng: &mut RngStream) {
        let mut z = std::mem::take(&mut self.normals);
        rng.fill_normals(&mut z);
        self.brownian_step_with(x, h, &z);
        self.normals = z;
    }

    /// As [`brownian_step`](Self::brownian_step) with the standard normals
    /// supplied by the caller.
    pub fn brownian_step_with(&mut self, x: &mut [f64], h: f64, z: &[f64]) {
        let n = x.len();
        let root_h = h.sqrt();
        let g = self.spec.drift();
        match &self.sd {
            Some(sd) => {
                for k in 0..n {
                    self.increment[k] = g[k] * h + sd[k] * root_h * z[k];
                }
            }
            None => {
                let f = self.spec.factor();
                for k in 0..n {
                    let row = &f[k * n..k * n + k + 1];
                    let noise: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
                    self.increment[k] = g[k] * h + root_h * noise;
                }
            }
        }
        self.perm.rerank(x);
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += self.increment[self.perm.rank(i)];
        }
    }

    /// Samples one jump displacement (per rank) into the internal buffer.
    pub fn sample_displacement<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[f64] {
        let jumps = self.spec.jumps();
        let component = jumps.pick(rng.random::<f64>());
        component.law.sample_into(rng, &mut self.displacement);
        &self.displacement
    }

    /// Applies `zeta` under the given rank rule.
    pub fn jump_with(&mut self, x: &mut [f64], zeta: &[f64], rule: JumpRankRule) {
        self.perm.rerank(x);
        match rule {
            JumpRankRule::PreJump => {
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi += zeta[self.perm.rank(i)];
                }
            }
            JumpRankRule::PostJumpFixedPoint => {
                let n = x.len();
                let mut perm = self.perm.clone();
                for _ in 0..2 * n + 2 {
                    for i in 0..n {
                        self.scratch[i] = x[i] + zeta[perm.rank(i)];
                    }
                    let before = perm.clone();
                    perm.rerank(&self.scratch);
                    if perm == before {
                        break;
                    }
                }
                x.copy_from_slice(&self.scratch);
            }
        }
    }

    /// Draws and applies one jump, returning the displacement.
    pub fn jump(&mut self, x: &mut [f64], rng: &mut RngStream, rule: JumpRankRule) -> Vec<f64> {
        let zeta = self.sample_displacement(&mut rng.displacements).to_vec();
        self.jump_with(x, &zeta, rule);
        zeta
    }
}

fn fingerprint(spec: &ModelSpec, x0: &[f64], cfg: &SimConfig) -> String {
    let doc = serde_json::json!({ "model": spec, "x0": x0, "sim": cfg });
    let digest = Sha256::digest(doc.to_string().as_bytes());
    hex::encode(&digest[..16])
}

fn check_finite(x: &[f64], time: f64, replication: u64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged { replication, time, state: x.to_vec() })
    }
}

/// Simulates replication `replication` of the named system from `x0`.
pub fn simulate(spec: &ModelSpec, x0: &[f64], cfg: &SimConfig, replication: u64) -> Result<Trajectory> {
    cfg.validate()?;
    let n = spec.n_particles();
    if x0.len() != n {
        return Err(Error::Dimension { expected: n, got: x0.len() });
    }
    if replication >= cfg.replications {
        return Err(Error::InvalidSimConfig(format!(
            "replication {replication} out of range (replications = {})",
            cfg.replications
        )));
    }
    check_finite(x0, 0.0, replication)?;

    let mut rng = RngStream::new(cfg.seed, replication);
    let mut prop = Propagator::new(spec);
    let lambda0 = spec.jumps().total_rate();
    let clock = (lambda0 > 0.0).then(|| Exp::new(lambda0).expect("positive rate"));
    let next_epoch = |rng: &mut RngStream, from: f64| match &clock {
        Some(exp) => from + exp.sample(&mut rng.epochs),
        None => f64::INFINITY,
    };

    let steps = cfg.n_steps();
    let last_step = {
        let rest = cfg.horizon - (steps - 1) as f64 * cfg.step;
        if (rest - cfg.step).abs() <= 1e-9 * cfg.step {
            cfg.step
        } else {
            rest
        }
    };
    let mut traj = Trajectory::empty(n, replication, fingerprint(spec, x0, cfg));
    let mut x = x0.to_vec();
    let mut t = 0.0;
    traj.push(t, &x, RecordKind::Grid);
    let mut epoch = next_epoch(&mut rng, 0.0);

    for j in 1..=steps {
        let t_next = if j == steps { cfg.horizon } else { j as f64 * cfg.step };
        while epoch <= t_next {
            if epoch > t {
                prop.brownian_step(&mut x, epoch - t, &mut rng);
            }
            t = epoch;
            check_finite(&x, t, replication)?;
            traj.push(t, &x, RecordKind::PreJump);
            let zeta = prop.jump(&mut x, &mut rng, cfg.jump_rule);
            check_finite(&x, t, replication)?;
            traj.push(t, &x, RecordKind::PostJump);
            traj.push_mark(JumpMark { time: t, displacement: zeta, record: traj.len() - 1 });
            epoch = next_epoch(&mut rng, t);
        }
        let full = if j < steps { cfg.step } else { last_step };
        let dt = if t == (j - 1) as f64 * cfg.step { full } else { t_next - t };
        if dt > 0.0 {
            prop.brownian_step(&mut x, dt, &mut rng);
        }
        t = t_next;
        check_finite(&x, t, replication)?;
        if j % cfg.record_stride == 0 || j == steps {
            traj.push(t, &x, RecordKind::Grid);
        }
    }
    Ok(traj)
}

/// All replications of `cfg`, in replication order.
pub fn run_ensemble(spec: &ModelSpec, x0: &[f64], cfg: &SimConfig) -> Result<Vec<Trajectory>> {
    map_ensemble(spec, x0, cfg, |t| t)
}

/// Simulates every replication and maps it to a summary as soon as it is
/// produced, keeping memory bounded by the summaries. Output is in
/// replication order regardless of scheduling.
pub fn map_ensemble<A, F>(spec: &ModelSpec, x0: &[f64], cfg: &SimConfig, map: F) -> Result<Vec<A>>
where
    A: Send,
    F: Fn(Trajectory) -> A + Sync,
{
    cfg.validate()?;
    (0..cfg.replications).into_par_iter().map(|r| simulate(spec, x0, cfg, r).map(&map)).collect()
}
