//! Batch front-end: `check`, `simulate`, `analyze` and `run`.
//!
//! Every output file is a pure function of the configuration (after the
//! `--seed` override), so reruns and different thread counts produce
//! byte-identical directories.

mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    capital_curve, drift_condition_scan, gap_histogram, occupation_fractions, tv_vs_time, BinSpec, CapitalCurve,
    GapHistogram, OccupationStats, PermutationShare,
};
use crate::engine::{read_trajectory, run_ensemble, write_jump_marks_csv, write_trajectory_csv, Trajectory};
use crate::model::{check_stability, StabilityReport};
use crate::{Error, Result};

pub use config::{
    AnalysisSection, ExperimentConfig, Format, JumpSection, ModelSection, OutputSection, PerRank, RankValue, Report,
    ScanSection, SimSection, SparseVector,
};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "levyrank", version, about = "Competing Lévy particle simulator and stability analyzer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the stability verdict. Exit code 0 stable, 2 not stable, 1 error.
    Check(CommonArgs),
    /// Simulate all replications and write trajectory CSVs and a manifest.
    Simulate(CommonArgs),
    /// Analyze trajectories previously written by `simulate`.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory holding `rep_XXXX.csv` files; defaults to the output directory.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Simulate and analyze.
    Run(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "LEVYRANK_THREADS")]
    pub threads: Option<usize>,
    /// Overrides `sim.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl CommonArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.sim.seed = seed;
        }
        Ok(cfg)
    }

    fn out_dir(&self, cfg: &ExperimentConfig) -> Result<PathBuf> {
        self.out
            .clone()
            .or_else(|| cfg.output.directory.as_ref().map(PathBuf::from))
            .ok_or_else(|| Error::Config("no output directory: pass --out or set output.directory".into()))
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cmd: &Command) -> Result<i32> {
    match cmd {
        Command::Check(a) => {
            let cfg = a.load()?;
            let report = cmd_check(&cfg)?;
            print!("{}", render_stability(&report));
            if let Some(out) = &a.out {
                std::fs::create_dir_all(out)?;
                write_json(&out.join("stability.json"), &report)?;
            }
            Ok(if report.stable { 0 } else { 2 })
        }
        Command::Simulate(a) => {
            let cfg = a.load()?;
            let out = a.out_dir(&cfg)?;
            with_threads(a.threads, || -> Result<()> {
                let trajs = simulate_all(&cfg)?;
                let files = write_trajectories(&trajs, &out)?;
                write_manifest(&out, &cfg, &files)
            })?;
            Ok(0)
        }
        Command::Analyze { common: a, trajectories } => {
            let cfg = a.load()?;
            let out = a.out_dir(&cfg)?;
            let src = trajectories.clone().unwrap_or_else(|| out.clone());
            with_threads(a.threads, || -> Result<()> {
                let trajs = load_trajectories(&cfg, &src)?;
                let files = cmd_analyze(&cfg, &trajs, &out)?;
                write_manifest(&out, &cfg, &files)
            })?;
            Ok(0)
        }
        Command::Run(a) => {
            let cfg = a.load()?;
            let out = a.out_dir(&cfg)?;
            with_threads(a.threads, || -> Result<()> {
                let trajs = simulate_all(&cfg)?;
                let mut files = write_trajectories(&trajs, &out)?;
                files.extend(cmd_analyze(&cfg, &trajs, &out)?);
                write_manifest(&out, &cfg, &files)
            })?;
            Ok(0)
        }
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(f),
    }
}

pub fn cmd_check(cfg: &ExperimentConfig) -> Result<StabilityReport> {
    Ok(check_stability(&cfg.model_spec()?))
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(", "))
}

pub fn render_stability(r: &StabilityReport) -> String {
    format!(
        "jump means f:              {}\neffective drifts m:        {}\ncentered drifts m̄:         {}\npartial sums Σ_{{j≤k}} m̄_j: {}\nmargin:                    {}\nverdict:                   {}\n",
        fmt_vec(&r.jump_means),
        fmt_vec(&r.effective_drifts),
        fmt_vec(&r.centered_effective_drifts),
        fmt_vec(&r.partial_sums),
        r.margin,
        if r.stable { "stable" } else { "not stable" }
    )
}

pub fn simulate_all(cfg: &ExperimentConfig) -> Result<Vec<Trajectory>> {
    run_ensemble(&cfg.model_spec()?, &cfg.initial_state()?, &cfg.sim_config())
}

fn trajectory_name(rep: u64) -> String {
    format!("rep_{rep:04}.csv")
}

fn jumps_name(rep: u64) -> String {
    format!("rep_{rep:04}_jumps.csv")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_trajectories(trajs: &[Trajectory], out: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(out)?;
    let mut files = Vec::new();
    for t in trajs {
        let (a, b) = (trajectory_name(t.replication), jumps_name(t.replication));
        write_trajectory_csv(t, create(&out.join(&a))?)?;
        write_jump_marks_csv(t, create(&out.join(&b))?)?;
        files.push(a);
        files.push(b);
    }
    Ok(files)
}

pub fn load_trajectories(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<Trajectory>> {
    (0..cfg.sim.replications)
        .map(|rep| {
            let path = dir.join(trajectory_name(rep));
            let traj =
                File::open(&path).map_err(|e| Error::Config(format!("missing trajectory {}: {e}", path.display())))?;
            let jumps = File::open(dir.join(jumps_name(rep))).ok();
            let t = read_trajectory(traj, jumps, rep)?;
            if t.n_particles() != cfg.model.particles {
                return Err(Error::Dimension { expected: cfg.model.particles, got: t.n_particles() });
            }
            Ok(t)
        })
        .collect()
}

#[derive(Serialize)]
struct OccupationReport {
    replications: usize,
    #[serde(flatten)]
    stats: OccupationStats,
}

/// Occupation pooled over replications, weighted by time.
pub fn pooled_occupation(trajs: &[Trajectory]) -> Result<OccupationStats> {
    let n = trajs.first().ok_or_else(|| Error::EmptySample("no trajectories".into()))?.n_particles();
    let mut by_perm: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut occupation = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for t in trajs {
        let s = occupation_fractions(t)?;
        for p in &s.permutation_fractions {
            *by_perm.entry(p.permutation.clone()).or_default() += p.fraction * s.total_time;
        }
        for (acc, row) in occupation.iter_mut().zip(&s.rank_occupation) {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v * s.total_time;
            }
        }
        total += s.total_time;
    }
    occupation.iter_mut().flatten().for_each(|v| *v /= total);
    let permutation_fractions =
        by_perm.into_iter().map(|(permutation, d)| PermutationShare { permutation, fraction: d / total }).collect();
    Ok(OccupationStats { permutation_fractions, rank_occupation: occupation, total_time: total })
}

/// Writes the requested reports into `out` and returns their file names.
pub fn cmd_analyze(cfg: &ExperimentConfig, trajs: &[Trajectory], out: &Path) -> Result<Vec<String>> {
    if trajs.is_empty() {
        return Err(Error::EmptySample("no trajectories to analyze".into()));
    }
    std::fs::create_dir_all(out)?;
    let spec = cfg.model_spec()?;
    let json = cfg.wants_format(Format::Json);
    let csv = cfg.wants_format(Format::Csv);
    let mut files = Vec::new();
    let emit_json = |name: &str, value: serde_json::Value, files: &mut Vec<String>| -> Result<()> {
        if json {
            write_json(&out.join(name), &value)?;
            files.push(name.to_string());
        }
        Ok(())
    };
    let emit_csv = |name: &str, header: &[&str], rows: Vec<Vec<String>>, files: &mut Vec<String>| -> Result<()> {
        if csv {
            let mut w = csv::Writer::from_writer(create(&out.join(name))?);
            w.write_record(header)?;
            for r in rows {
                w.write_record(&r)?;
            }
            w.flush()?;
            files.push(name.to_string());
        }
        Ok(())
    };

    if cfg.wants(Report::Stability) {
        let report = check_stability(&spec);
        emit_json("stability.json", serde_json::to_value(&report)?, &mut files)?;
        let rows = (0..spec.n_particles())
            .map(|k| {
                vec![
                    (k + 1).to_string(),
                    report.jump_means[k].to_string(),
                    report.effective_drifts[k].to_string(),
                    report.centered_effective_drifts[k].to_string(),
                    report.partial_sums.get(k).map_or(String::new(), f64::to_string),
                ]
            })
            .collect();
        emit_csv(
            "stability.csv",
            &["rank", "jump_mean", "effective_drift", "centered_drift", "partial_sum"],
            rows,
            &mut files,
        )?;
    }

    let burn_in = cfg.burn_in()?;
    let needs_hist = cfg.wants(Report::Gaps) || cfg.wants(Report::TvVsTime);
    let hist: Option<GapHistogram> =
        if needs_hist { Some(gap_histogram(trajs, burn_in, &BinSpec::Quantiles(cfg.analysis.bins))?) } else { None };

    if let (true, Some(h)) = (cfg.wants(Report::Gaps), &hist) {
        emit_json("gaps.json", serde_json::to_value(h)?, &mut files)?;
        let mut rows = Vec::new();
        for k in 0..h.n_gaps() {
            let b = &h.binnings[k];
            for (i, (c, f)) in h.counts[k].iter().zip(h.frequencies(k)).enumerate() {
                let lo = b.lo + i as f64 * b.width();
                rows.push(vec![
                    (k + 1).to_string(),
                    lo.to_string(),
                    (lo + b.width()).to_string(),
                    c.to_string(),
                    f.to_string(),
                ]);
            }
        }
        emit_csv("gaps.csv", &["gap", "bin_lo", "bin_hi", "count", "frequency"], rows, &mut files)?;
    }

    if cfg.wants(Report::Occupation) {
        let stats = pooled_occupation(trajs)?;
        let rows = stats
            .permutation_fractions
            .iter()
            .map(|p| {
                let perm: Vec<String> = p.permutation.iter().map(usize::to_string).collect();
                vec![perm.join(" "), p.fraction.to_string()]
            })
            .collect();
        emit_csv("occupation.csv", &["permutation", "fraction"], rows, &mut files)?;
        emit_json(
            "occupation.json",
            serde_json::to_value(OccupationReport { replications: trajs.len(), stats })?,
            &mut files,
        )?;
    }

    if let (true, Some(h)) = (cfg.wants(Report::TvVsTime), &hist) {
        let points = cfg.analysis.tv_points.max(2);
        let horizon = cfg.sim.horizon;
        let times: Vec<f64> = (0..points).map(|i| horizon * i as f64 / (points - 1) as f64).collect();
        let curve = tv_vs_time(trajs, h, &times)?;
        let rows = curve.iter().map(|(t, tv)| vec![t.to_string(), tv.to_string()]).collect();
        emit_csv("tv_vs_time.csv", &["t", "tv"], rows, &mut files)?;
        emit_json("tv_vs_time.json", serde_json::to_value(&curve)?, &mut files)?;
    }

    if cfg.wants(Report::CapitalCurve) {
        let at = cfg.analysis.capital_time.unwrap_or(cfg.sim.horizon);
        let take = (cfg.analysis.capital_replications as usize).min(trajs.len());
        let curves: Vec<CapitalCurve> = trajs[..take].iter().map(|t| capital_curve(t, at)).collect::<Result<_>>()?;
        let rows = curves
            .iter()
            .flat_map(|c| {
                c.points.iter().map(move |(lk, lw)| vec![lk.to_string(), lw.to_string(), c.replication.to_string()])
            })
            .collect();
        emit_csv("capital_curve.csv", &["log_rank", "log_weight", "replication"], rows, &mut files)?;
        emit_json("capital_curve.json", serde_json::to_value(&curves)?, &mut files)?;
    }

    if cfg.wants(Report::LyapunovScan) {
        let scan = drift_condition_scan(&spec, &cfg.scan_config())?;
        let rows = scan
            .points
            .iter()
            .map(|p| {
                vec![
                    p.radius.to_string(),
                    p.direction.to_string(),
                    p.generator.to_string(),
                    p.std_error.to_string(),
                    p.leading.to_string(),
                    p.residual.to_string(),
                ]
            })
            .collect();
        emit_csv(
            "lyapunov_scan.csv",
            &["radius", "direction", "generator", "std_error", "leading", "residual"],
            rows,
            &mut files,
        )?;
        emit_json("lyapunov_scan.json", serde_json::to_value(&scan)?, &mut files)?;
    }
    Ok(files)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
}

/// Run manifest. Contains no timestamps or host details.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub replications: u64,
    pub files: Vec<ManifestEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical serialization of the configuration.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    sha256_hex(&serde_json::to_vec(cfg).expect("configuration serializes"))
}

/// Writes `manifest.json`, keeping entries of an earlier manifest for the
/// same configuration so that `simulate` then `analyze` lists every file.
fn write_manifest(out: &Path, cfg: &ExperimentConfig, files: &[String]) -> Result<()> {
    let path = out.join(MANIFEST);
    let hash = config_hash(cfg);
    let mut names: Vec<String> = files.to_vec();
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(old) = serde_json::from_str::<Manifest>(&text) {
            if old.config_sha256 == hash {
                names.extend(old.files.into_iter().map(|e| e.name).filter(|n| out.join(n).exists()));
            }
        }
    }
    names.sort();
    names.dedup();
    let files = names
        .into_iter()
        .map(|name| Ok(ManifestEntry { sha256: sha256_hex(&std::fs::read(out.join(&name))?), name }))
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: hash,
        seed: cfg.sim.seed,
        replications: cfg.sim.replications,
        files,
    };
    write_json(&path, &manifest)
}
