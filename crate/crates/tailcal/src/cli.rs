//! Command-line front end: simulate, gen-data, cluster, train, finetune,
//! evaluate, diagnose, and sweep.
//!
//! Every command writes into an output directory containing the fully
//! resolved `config.json`, its primary CSV/JSON artifacts, and a
//! `manifest.json` listing them. Flags may be supplied on the command
//! line, via `TAILCAL_*` environment variables, or through a JSON config
//! file (`--config`); explicit flags win. Exit codes: 0 success, 1 runtime
//! failure, 2 configuration error.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use crate::calib::{pit_curve, rhat_curve, unit_grid, DivergenceKind, ForecastCase, PitSet};
use crate::data::{
    self, generate_synth, load_model, read_csv, save_model, write_csv, ModelArtifact, SynthConfig,
    WeatherRow,
};
use crate::dist::Distribution;
use crate::emos::{
    self, cluster_stations, elbow_report, emos_fit, observations_by_station, split_by_cluster,
    EmosArtifact, StationClustering,
};
use crate::genmodels::{
    cgm_finetune, cgm_train, drn_finetune, drn_train, evaluate_network, penalty_name, CgmModel,
    DrnModel, NetworkFamily, SuiteConfig, TrainConfig,
};
use crate::loss::{BaseScore, LossSpec, PenaltyKind};
use crate::metrics::{evaluate_cases, MetricSet};
use crate::optim::minimize_with_trace;
use crate::simstudy::{self, gamma_sweep, log_grid, SimPenalty};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "tailcal",
    about = "Train and evaluate probabilistic forecast models under tail-calibration-regularized scoring rules",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the simulated mixture-estimation study and its gamma sweep.
    Simulate(SimulateArgs),
    /// Generate a synthetic station dataset (train/test CSV plus truth).
    GenData(GenDataArgs),
    /// Cluster stations on climatological quantile features.
    Cluster(ClusterArgs),
    /// Train a forecast model family on a training CSV.
    Train(TrainArgs),
    /// Finetune saved network models under a regularized loss.
    Finetune(FinetuneArgs),
    /// Evaluate saved models on a test CSV, optionally against a baseline.
    Evaluate(EvaluateArgs),
    /// Write PIT / conditional-PIT / tail-ratio calibration curves.
    Diagnose(DiagnoseArgs),
    /// Sweep the penalty weight and track metric trajectories.
    Sweep(SweepArgs),
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

#[derive(Debug, Args, Clone)]
struct CommonArgs {
    /// Output directory (created if missing).
    #[arg(long, env = "TAILCAL_OUT")]
    out: PathBuf,
    /// JSON config file supplying defaults for unset flags.
    #[arg(long, env = "TAILCAL_CONFIG")]
    config: Option<PathBuf>,
}

struct OutDir {
    root: PathBuf,
    manifest: Vec<Value>,
}

impl OutDir {
    fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(runtime)?;
        fs::create_dir_all(root.join("curves")).map_err(runtime)?;
        fs::create_dir_all(root.join("models")).map_err(runtime)?;
        Ok(Self { root: root.to_path_buf(), manifest: Vec::new() })
    }

    fn note(&mut self, kind: &str, path: &Path) {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        self.manifest.push(serde_json::json!({
            "kind": kind,
            "path": rel.to_string_lossy(),
        }));
    }

    fn write_json<T: Serialize>(&mut self, name: &str, kind: &str, value: &T) -> Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(runtime)?;
        }
        let mut body = serde_json::to_string_pretty(value).map_err(runtime)?;
        body.push('\n');
        fs::write(&path, body).map_err(runtime)?;
        self.note(kind, &path);
        Ok(path)
    }

    fn write_text(&mut self, name: &str, kind: &str, body: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(runtime)?;
        }
        fs::write(&path, body).map_err(runtime)?;
        self.note(kind, &path);
        Ok(path)
    }

    fn finish(mut self) -> Result<()> {
        let manifest = std::mem::take(&mut self.manifest);
        let path = self.root.join("manifest.json");
        let mut body =
            serde_json::to_string_pretty(&serde_json::json!({ "artifacts": manifest }))
                .map_err(runtime)?;
        body.push('\n');
        fs::write(path, body).map_err(runtime)?;
        Ok(())
    }
}

/// Fill unset options from a JSON config file: each key maps to a flag name
/// with dashes replaced by underscores.
fn config_value(config: &Option<PathBuf>) -> Result<Value> {
    match config {
        None => Ok(Value::Null),
        Some(path) => {
            let body = fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str(&body)
                .map_err(|e| config_err(format!("bad config {}: {e}", path.display())))
        }
    }
}

fn fill_f64(slot: &mut Option<f64>, cfg: &Value, key: &str) {
    if slot.is_none() {
        if let Some(v) = cfg.get(key).and_then(Value::as_f64) {
            *slot = Some(v);
        }
    }
}

fn fill_u64(slot: &mut Option<u64>, cfg: &Value, key: &str) {
    if slot.is_none() {
        if let Some(v) = cfg.get(key).and_then(Value::as_u64) {
            *slot = Some(v);
        }
    }
}

fn fill_usize(slot: &mut Option<usize>, cfg: &Value, key: &str) {
    if slot.is_none() {
        if let Some(v) = cfg.get(key).and_then(Value::as_u64) {
            *slot = Some(v as usize);
        }
    }
}

fn parse_penalty(name: &str) -> Result<PenaltyKind> {
    match name {
        "none" => Ok(PenaltyKind::None),
        "weighted" | "twcrps" | "cls" => Ok(PenaltyKind::Weighted),
        "mcb" => Ok(PenaltyKind::Mcb),
        "tmcb" => Ok(PenaltyKind::Tmcb),
        "cpit-mcb" | "cpit_mcb" => Ok(PenaltyKind::CpitMcb),
        other => Err(config_err(format!(
            "unknown penalty `{other}` (expected none|weighted|mcb|tmcb|cpit-mcb)"
        ))),
    }
}

/// Either a comma list ("0.5,1,2") or "log:lo:hi:points".
fn parse_gamma_grid(text: &str) -> Result<Vec<f64>> {
    if let Some(rest) = text.strip_prefix("log:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(config_err(format!("bad gamma grid `{text}`")));
        }
        let lo: f64 = parts[0].parse().map_err(|_| config_err("bad grid lower bound"))?;
        let hi: f64 = parts[1].parse().map_err(|_| config_err("bad grid upper bound"))?;
        let k: usize = parts[2].parse().map_err(|_| config_err("bad grid size"))?;
        if !(lo > 0.0 && hi > lo && k >= 2) {
            return Err(config_err(format!("bad gamma grid `{text}`")));
        }
        Ok(log_grid(lo, hi, k))
    } else {
        text.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| config_err(format!("bad gamma value `{s}`")))
            })
            .collect()
    }
}

fn load_rows(path: &Path) -> Result<Vec<WeatherRow>> {
    read_csv(path).map_err(runtime)
}

fn metrics_csv_header(with_skill: bool) -> String {
    let mut h = String::from("model,family,penalty,gamma,replicate,crps,twcrps,mcb,tmcb,cpit_mcb");
    if with_skill {
        for name in MetricSet::NAMES {
            h.push_str(&format!(",{name}_skill"));
        }
    }
    h.push('\n');
    h
}

#[allow(clippy::too_many_arguments)]
fn metrics_csv_row(
    model: &str,
    family: &str,
    penalty: &str,
    gamma: f64,
    replicate: Option<usize>,
    m: &MetricSet,
    baseline: Option<&MetricSet>,
) -> String {
    let rep = replicate.map(|r| r.to_string()).unwrap_or_default();
    let mut row = format!(
        "{model},{family},{penalty},{gamma},{rep},{},{},{},{},{}",
        m.crps, m.twcrps, m.mcb, m.tmcb, m.cpit_mcb
    );
    if let Some(b) = baseline {
        for s in m.skill_vs(b) {
            row.push_str(&format!(",{s}"));
        }
    }
    row.push('\n');
    row
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of simulated records.
    #[arg(long, env = "TAILCAL_N")]
    n: Option<usize>,
    #[arg(long, env = "TAILCAL_SEED")]
    seed: Option<u64>,
    /// Tail threshold (defaults to 3.29).
    #[arg(long, env = "TAILCAL_THRESHOLD")]
    threshold: Option<f64>,
    /// Penalties to sweep (repeatable): none, cls, mcb, tmcb.
    #[arg(long = "penalty")]
    penalties: Vec<String>,
    /// Gamma grid: comma list or log:lo:hi:points.
    #[arg(long, env = "TAILCAL_GAMMA_GRID")]
    gamma_grid: Option<String>,
}

fn cmd_simulate(mut args: SimulateArgs) -> Result<()> {
    let cfg = config_value(&args.common.config)?;
    fill_usize(&mut args.n, &cfg, "n");
    fill_u64(&mut args.seed, &cfg, "seed");
    fill_f64(&mut args.threshold, &cfg, "threshold");
    let n = args.n.unwrap_or(100_000);
    if n == 0 {
        return Err(config_err("--n must be positive"));
    }
    let seed = args.seed.unwrap_or(0);
    let threshold = args.threshold.unwrap_or(simstudy::DEFAULT_THRESHOLD);
    let grid = match &args.gamma_grid {
        Some(text) => parse_gamma_grid(text)?,
        None => log_grid(1e-2, 1e4, 13),
    };
    let penalties: Vec<SimPenalty> = if args.penalties.is_empty() {
        vec![SimPenalty::Cls, SimPenalty::Mcb, SimPenalty::Tmcb]
    } else {
        args.penalties
            .iter()
            .map(|p| match p.as_str() {
                "none" => Ok(SimPenalty::None),
                "cls" => Ok(SimPenalty::Cls),
                "mcb" => Ok(SimPenalty::Mcb),
                "tmcb" => Ok(SimPenalty::Tmcb),
                other => Err(config_err(format!("unknown penalty `{other}`"))),
            })
            .collect::<Result<_>>()?
    };

    let mut out = OutDir::create(&args.common.out)?;
    out.write_json(
        "config.json",
        "config",
        &serde_json::json!({
            "command": "simulate",
            "n": n,
            "seed": seed,
            "threshold": threshold,
            "penalties": penalties.iter().map(|p| p.name()).collect::<Vec<_>>(),
            "gamma_grid": grid,
        }),
    )?;

    let summary = simstudy::run_study(n, seed, threshold).map_err(runtime)?;
    out.write_json("summary.json", "summary", &summary)?;

    let records = simstudy::simulate(n, seed);
    let cells = gamma_sweep(&records, &penalties, &grid, threshold, DivergenceKind::W1);
    let mut csv = String::from("penalty,gamma,a_hat,mean_log_score,mcb,tmcb\n");
    for c in &cells {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.penalty, c.gamma, c.a_hat, c.mean_log_score, c.mcb, c.tmcb
        ));
    }
    out.write_text("sweep.csv", "sweep", &csv)?;

    // Calibration curves for the unpenalized blend and each penalty's fit
    // at the top of the gamma grid.
    let grid_u = unit_grid(100);
    let mut fits: Vec<(String, f64)> = vec![("mle".into(), summary.a_hat)];
    for p in &penalties {
        if let Some(cell) = cells
            .iter()
            .filter(|c| c.penalty == p.name() && c.error.is_none())
            .max_by(|a, b| a.gamma.partial_cmp(&b.gamma).unwrap())
        {
            fits.push((p.name().to_string(), cell.a_hat));
        }
    }
    for (name, a) in fits {
        let cases: Vec<ForecastCase> = records
            .iter()
            .map(|r| Ok(ForecastCase::new(simstudy::blend(r, a).map_err(runtime)?, r.y)))
            .collect::<Result<_>>()?;
        let pits: Vec<f64> = cases.iter().map(|c| c.forecast.cdf(c.obs)).collect();
        let pit = pit_curve(&PitSet::unconditional(pits).map_err(runtime)?, &grid_u);
        let rhat = rhat_curve(&cases, threshold, &grid_u).map_err(runtime)?;
        let mut body = Vec::new();
        pit.write_csv(&mut body).map_err(runtime)?;
        out.write_text(
            &format!("curves/{name}_pit.csv"),
            "curve",
            std::str::from_utf8(&body).unwrap(),
        )?;
        let mut body = Vec::new();
        rhat.write_csv(&mut body).map_err(runtime)?;
        out.write_text(
            &format!("curves/{name}_rhat.csv"),
            "curve",
            std::str::from_utf8(&body).unwrap(),
        )?;
    }
    out.finish()
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, env = "TAILCAL_STATIONS")]
    stations: Option<usize>,
    #[arg(long, env = "TAILCAL_TRAIN_DAYS")]
    train_days: Option<usize>,
    #[arg(long, env = "TAILCAL_TEST_DAYS")]
    test_days: Option<usize>,
    #[arg(long, env = "TAILCAL_SEED")]
    seed: Option<u64>,
    /// Replace the truth's upper tail with a heavier generalized-Pareto
    /// excess (the misspecified regime).
    #[arg(long)]
    tail_misspec: bool,
    /// Nonlinear location link in the truth.
    #[arg(long)]
    nonlinear: bool,
}

fn cmd_gen_data(mut args: GenDataArgs) -> Result<()> {
    let cfg = config_value(&args.common.config)?;
    fill_usize(&mut args.stations, &cfg, "stations");
    fill_usize(&mut args.train_days, &cfg, "train_days");
    fill_usize(&mut args.test_days, &cfg, "test_days");
    fill_u64(&mut args.seed, &cfg, "seed");
    let defaults = SynthConfig::default();
    let synth = SynthConfig {
        station_count: args.stations.unwrap_or(defaults.station_count),
        train_days: args.train_days.unwrap_or(defaults.train_days),
        test_days: args.test_days.unwrap_or(defaults.test_days),
        seed: args.seed.unwrap_or(0),
        tail_misspecification: args.tail_misspec,
        nonlinear_link: args.nonlinear,
    };
    if synth.station_count == 0 || synth.train_days == 0 || synth.test_days == 0 {
        return Err(config_err("stations, train-days, and test-days must be positive"));
    }
    let mut out = OutDir::create(&args.common.out)?;
    out.write_json("config.json", "config", &synth)?;
    let data = generate_synth(&synth).map_err(runtime)?;
    let train_path = out.root.join("train.csv");
    write_csv(&data.train, &train_path).map_err(runtime)?;
    out.note("data", &train_path);
    let test_path = out.root.join("test.csv");
    write_csv(&data.test, &test_path).map_err(runtime)?;
    out.note("data", &test_path);
    out.write_json(
        "truth.json",
        "truth",
        &serde_json::json!({ "config": data.config, "truth": data.truth }),
    )?;
    out.finish()
}

// ---------------------------------------------------------------------------
// cluster
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
struct ClusterArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, env = "TAILCAL_DATA")]
    data: PathBuf,
    /// Cluster count.
    #[arg(long, env = "TAILCAL_K")]
    k: Option<usize>,
    /// Number of quantile features.
    #[arg(long, env = "TAILCAL_KQ")]
    kq: Option<usize>,
    #[arg(long, env = "TAILCAL_SEED")]
    seed: Option<u64>,
}

fn cmd_cluster(mut args: ClusterArgs) -> Result<()> {
    let cfg = config_value(&args.common.config)?;
    fill_usize(&mut args.k, &cfg, "k");
    fill_usize(&mut args.kq, &cfg, "kq");
    fill_u64(&mut args.seed, &cfg, "seed");
    let k = args.k.unwrap_or(4);
    let kq = args.kq.unwrap_or(9);
    let seed = args.seed.unwrap_or(0);
    if k == 0 || kq == 0 {
        return Err(config_err("--k and --kq must be positive"));
    }
    let rows = load_rows(&args.data)?;
    let mut out = OutDir::create(&args.common.out)?;
    out.write_json(
        "config.json",
        "config",
        &serde_json::json!({"command": "cluster", "data": args.data, "k": k, "kq": kq, "seed": seed}),
    )?;
    let per_station = observations_by_station(&rows);
    let clustering = cluster_stations(&per_station, k, kq, seed).map_err(runtime)?;
    out.write_json("clustering.json", "clustering", &clustering)?;
    let elbow = elbow_report(&per_station, k.max(8), kq, seed).map_err(runtime)?;
    let mut csv = String::from("k,within_cluster_ss\n");
    for (kk, wss) in elbow {
        csv.push_str(&format!("{kk},{wss}\n"));
    }
    out.write_text("elbow.csv", "report", &csv)?;
    out.finish()
}

// ---------------------------------------------------------------------------
// train / finetune
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model family: emos, drn, or cgm.
    #[arg(long, env = "TAILCAL_MODEL")]
    model: String,
    #[arg(long, env = "TAILCAL_DATA")]
    data: PathBuf,
    /// Penalty for the training loss (emos trains directly under it).
    #[arg(long, env = "TAILCAL_PENALTY")]
    penalty: Option<String>,
    #[arg(long, env = "TAILCAL_GAMMA")]
    gamma: Option<f64>,
    #[arg(long, env = "TAILCAL_THRESHOLD")]
    threshold: Option<f64>,
    #[arg(long, env = "TAILCAL_SEED")]
    seed: Option<u64>,
    /// Network families: how many replicates to train.
    #[arg(long, env = "TAILCAL_REPLICATES")]
    replicates: Option<usize>,
    /// EMOS: cluster count.
    #[arg(long)]
    k: Option<usize>,
    /// Training epochs (networks).
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size (networks).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Ensemble size during generative training.
    #[arg(long)]
    members: Option<usize>,
    /// Write per-evaluation optimizer traces (emos).
    #[arg(long)]
    trace: bool,
}

fn loss_spec_for(
    family: &str,
    penalty: Option<&str>,
    gamma: f64,
    threshold: f64,
) -> Result<LossSpec> {
    let base = match family {
        "emos" | "drn" => BaseScore::CrpsClosed,
        "cgm" => BaseScore::FairCrps,
        other => return Err(config_err(format!("unknown model family `{other}`"))),
    };
    let penalty = match penalty {
        None => PenaltyKind::None,
        Some(p) => parse_penalty(p)?,
    };
    let mut spec = LossSpec::baseline(base, threshold).with_penalty(penalty, gamma);
    if family == "cgm" {
        spec.pit_smoothing = Some(0.01);
    }
    Ok(spec)
}

fn cmd_train(mut args: TrainArgs) -> Result<()> {
    let cfg = config_value(&args.common.config)?;
    fill_f64(&mut args.gamma, &cfg, "gamma");
    fill_f64(&mut args.threshold, &cfg, "threshold");
    fill_u64(&mut args.seed, &cfg, "seed");
    fill_usize(&mut args.replicates, &cfg, "replicates");
    fill_usize(&mut args.epochs, &cfg, "epochs");
    fill_usize(&mut args.batch_size, &cfg, "batch_size");
    fill_usize(&mut args.members, &cfg, "members");
    let threshold = args.threshold.unwrap_or(12.5);
    let gamma = args.gamma.unwrap_or(0.0);
    let seed = args.seed.unwrap_or(0);
    let replicates = args.replicates.unwrap_or(1);
    if replicates == 0 {
        return Err(config_err("--replicates must be positive"));
    }
    let spec = loss_spec_for(&args.model, args.penalty.as_deref(), gamma, threshold)?;
    let rows = load_rows(&args.data)?;
    let mut out = OutDir::create(&args.common.out)?;
    out.write_json(
        "config.json",
        "config",
        &serde_json::json!({
            "command": "train", "model": args.model, "data": args.data,
            "loss": spec, "seed": seed, "replicates": replicates,
            "epochs": args.epochs, "batch_size": args.batch_size,
            "members": args.members, "k": args.k,
        }),
    )?;

    match args.model.as_str() {
        "emos" => {
            let per_station = observations_by_station(&rows);
            let k = args.k.unwrap_or(4);
            let clustering = cluster_stations(&per_station, k, 9, seed).map_err(runtime)?;
            let cases = split_by_cluster(&rows, &clustering).map_err(runtime)?;
            let opt_cfg = emos::default_optimizer();
            if args.trace {
                for (i, cluster_cases) in cases.iter().enumerate() {
                    let spec2 = spec;
                    let outputs: Vec<crate::emos::EmosCase> = cluster_cases.clone();
                    let x0 = emos::EmosParams::default().to_array();
                    let (_, trace) = minimize_with_trace(
                        |theta| {
                            let params = emos::EmosParams::from_array(theta.try_into().unwrap());
                            let forecast_cases: Vec<ForecastCase> = outputs
                                .iter()
                                .map(|c| {
                                    let d = emos::emos_link(&params, c.ens_mean, c.ens_sd, c.doy);
                                    ForecastCase::new(Distribution::TruncNormal(d), c.obs)
                                })
                                .collect();
                            crate::loss::evaluate_loss(&forecast_cases, &spec2)
                                .map(|r| r.total)
                                .unwrap_or(f64::NAN)
                        },
                        &x0,
                        &opt_cfg,
                    )
                    .map_err(runtime)?;
                    let mut csv = String::from("iter,value\n");
                    for (it, v) in trace {
                        csv.push_str(&format!("{it},{v}\n"));
                    }
                    out.write_text(&format!("curves/trace_cluster{i}.csv"), "trace", &csv)?;
                }
            }
            let fit = emos_fit(&cases, &spec, &opt_cfg).map_err(runtime)?;
            let artifact = ModelArtifact::new(
                "emos",
                seed,
                Some(spec),
                EmosArtifact { clustering, params: fit.params },
            );
            let path = out.root.join("models/emos.json");
            save_model(&artifact, &path).map_err(runtime)?;
            out.note("model", &path);
        }
        "drn" | "cgm" => {
            let family = args.model.clone();
            for r in 0..replicates {
                let mut train_cfg = if family == "drn" {
                    TrainConfig::drn_default()
                } else {
                    TrainConfig::cgm_default()
                };
                train_cfg.seed = seed.wrapping_add(r as u64);
                if let Some(e) = args.epochs {
                    train_cfg.epochs = e;
                }
                if let Some(b) = args.batch_size {
                    train_cfg.batch_size = b;
                }
                if let Some(m) = args.members {
                    train_cfg.members = m;
                }
                let path = out.root.join(format!("models/{family}_r{r:03}.json"));
                if family == "drn" {
                    let (model, _) = drn_train(&rows, &train_cfg).map_err(runtime)?;
                    let artifact =
                        ModelArtifact::new("drn", train_cfg.seed, Some(spec), model);
                    save_model(&artifact, &path).map_err(runtime)?;
                } else {
                    let (model, _) = cgm_train(&rows, &train_cfg).map_err(runtime)?;
                    let artifact =
                        ModelArtifact::new("cgm", train_cfg.seed, Some(spec), model);
                    save_model(&artifact, &path).map_err(runtime)?;
                }
                out.note("model", &path);
            }
        }
        other => return Err(config_err(format!("unknown model family `{other}`"))),
    }
    out.finish()
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model family: drn or cgm.
    #[arg(long, env = "TAILCAL_MODEL")]
    model: String,
    /// A saved model file or a directory of them.
    #[arg(long)]
    models: PathBuf,
    #[arg(long, env = "TAILCAL_DATA")]
    data: PathBuf,
    #[arg(long, env = "TAILCAL_PENALTY")]
    penalty: String,
    #[arg(long, env = "TAILCAL_GAMMA")]
    gamma: Option<f64>,
    #[arg(long, env = "TAILCAL_THRESHOLD")]
    threshold: Option<f64>,
    /// Full-batch steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, env = "TAILCAL_SEED")]
    seed: Option<u64>,
}

fn model_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(runtime)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(CliError::Runtime(format!("no model files in {}", path.display())));
        }
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

fn cmd_finetune(mut args: FinetuneArgs) -> Result<()> {
    let cfg = config_value(&args.common.config)?;
    fill_f64(&mut args.gamma, &cfg, "gamma");
    fill_f64(&mut args.threshold, &cfg, "threshold");
    fill_usize(&mut args.steps, &cfg, "steps");
    fill_u64(&mut args.seed, &cfg, "seed");
    let gamma = args.gamma.unwrap_or(5.0);
    let threshold = args.threshold.unwrap_or(12.5);
    let steps = args.steps.unwrap_or(50);
    let seed = args.seed.unwrap_or(0);
    let spec = loss_spec_for(&args.model, Some(args.penalty.as_str()), gamma, threshold)?;
    let rows = load_rows(&args.data)?;
    let files = model_files(&args.models)?;
    let mut out = OutDir::create(&args.common.out)?;
    out.write_json(
        "config.json",
        "config",
        &serde_json::json!({
            "command": "finetune", "model": args.model, "models": args.models,
            "data": args.data, "loss": spec, "steps": steps, "seed": seed,
        }),
    )?;
    for file in files {
        let stem = file.file_stem().unwrap().to_string_lossy();
        let out_path = out.root.join(format!("models/{stem}_{}.json", penalty_of(&spec)));
        match args.model.as_str() {
            "drn" => {
                let artifact: ModelArtifact<DrnModel> =
                    load_model(&file, "drn").map_err(runtime)?;
                let mut model = artifact.payload;
                drn_finetune(&mut model, &rows, &spec, steps, 1e-3).map_err(runtime)?;
                let new = ModelArtifact::new("drn", artifact.seed, Some(spec), model);
                save_model(&new, &out_path).map_err(runtime)?;
            }
            "cgm" => {
                let artifact: ModelArtifact<CgmModel> =
                    load_model(&file, "cgm").map_err(runtime)?;
                let mut model = artifact.payload;
                cgm_finetune(&mut model, &rows, &spec, steps, 1e-3, 50, 250, seed)
                    .map_err(runtime)?;
                let new = ModelArtifact::new("cgm", artifact.seed, Some(spec), model);
                save_model(&new, &out_path).map_err(runtime)?;
            }
            other => return Err(config_err(format!("cannot finetune family `{other}`"))),
        }
        out.note("model", &out_path);
    }
    out.finish()
}

fn penalty_of(spec: &LossSpec) -> String {
    format!("{}_g{}", penalty_name(spec.penalty), spec.gamma)
}

// ---------------------------------------------------------------------------
// evaluate / diagnose
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model family: emos, drn, cgm, or ideal (requires --truth).
    #[arg(long, env = "TAILCAL_MODEL")]
    model: String,
    /// Model file or directory (omit for --model ideal).
    #[arg(long)]
    models: Option<PathBuf>,
    /// Truth JSON from gen-data, for the ideal forecaster.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, env = "TAILCAL_DATA")]
    data: PathBuf,
    #[arg(long, env = "TAILCAL_THRESHOLD")]
    threshold: Option<f64>,
    /// Baseline metrics.csv for skill percentages.
    #[arg(long, env = "TAILCAL_BASELINE")]
    baseline: Option<PathBuf>,
    /// Ensemble size when evaluating sample-based models.
    #[arg(long)]
    eval_members: Option<usize>,
    #[arg(long, env = "TAILCAL_SEED")]
    seed: Option<u64>,
}

/// Mean metrics from a previously written metrics.csv (the `mean` row if
/// present, otherwise the first row).
fn read_baseline(path: &Path) -> Result<MetricSet> {
    let body = fs::read_to_string(path).map_err(runtime)?;
    let mut lines = body.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| CliError::Runtime("empty baseline metrics file".into()))?
        .split(',')
        .collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (c0, c1, c2, c3, c4) = (
        col("crps").ok_or_else(|| CliError::Runtime("baseline lacks crps column".into()))?,
        col("twcrps").unwrap_or(usize::MAX),
        col("mcb").unwrap_or(usize::MAX),
        col("tmcb").unwrap_or(usize::MAX),
        col("cpit_mcb").unwrap_or(usize::MAX),
    );
    let mut chosen: Option<Vec<&str>> = None;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < header.len() {
            continue;
        }
        if fields[0] == "mean" {
            chosen = Some(fields);
            break;
        }
        if chosen.is_none() {
            chosen = Some(fields);
        }
    }
    let fields = chosen.ok_or_else(|| CliError::Runtime("baseline has no data rows".into()))?;
    let get = |c: usize| -> Result<f64> {
        fields
            .get(c)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::Runtime("bad baseline metrics row".into()))
    };
    Ok(MetricSet { crps: get(c0)?, twcrps: get(c1)?, mcb: get(c2)?, tmcb: get(c3)?, cpit_mcb: get(c4)? })
}

struct LoadedModel {
    name: String,
    penalty: String,
    gamma: f64,
    cases_of: Box<dyn Fn(&[WeatherRow], usize, u64) -> Result<Vec<ForecastCase>>>,
}

fn load_models_for_eval(args: &EvaluateArgs) -> Result<Vec<LoadedModel>> {
    let mut out = Vec::new();
    match args.model.as_str() {
        "ideal" => {
            let truth_path = args
                .truth
                .as_ref()
                .ok_or_else(|| config_err("--model ideal requires --truth"))?;
            let body = fs::read_to_string(truth_path).map_err(runtime)?;
            let value: Value = serde_json::from_str(&body).map_err(runtime)?;
            let truth: data::TruthParams =
                serde_json::from_value(value.get("truth").cloned().ok_or_else(|| {
                    CliError::Runtime("truth file lacks `truth` field".into())
                })?)
                .map_err(runtime)?;
            out.push(LoadedModel {
                name: "ideal".into(),
                penalty: "none".into(),
                gamma: 0.0,
                cases_of: Box::new(move |rows, _, _| {
                    rows.iter()
                        .map(|r| {
                            let s = data::station_index(&r.station_id).ok_or_else(|| {
                                CliError::Runtime(format!("bad station id {}", r.station_id))
                            })?;
                            let d = truth
                                .conditional(s, r.ens_mean, r.ens_sd, r.doy as f64)
                                .map_err(runtime)?;
                            Ok(ForecastCase::new(d, r.obs))
                        })
                        .collect()
                }),
            });
        }
        "emos" => {
            let files = model_files(
                args.models.as_ref().ok_or_else(|| config_err("--models required"))?,
            )?;
            for file in files {
                let artifact: ModelArtifact<EmosArtifact> =
                    load_model(&file, "emos").map_err(runtime)?;
                let name = file.file_stem().unwrap().to_string_lossy().to_string();
                let (penalty, gamma) = spec_meta(&artifact.loss_spec);
                let payload = artifact.payload;
                out.push(LoadedModel {
                    name,
                    penalty,
                    gamma,
                    cases_of: Box::new(move |rows, _, _| {
                        rows.iter()
                            .map(|r| {
                                let d = payload.predict(r).map_err(runtime)?;
                                Ok(ForecastCase::new(Distribution::TruncNormal(d), r.obs))
                            })
                            .collect()
                    }),
                });
            }
        }
        "drn" => {
            let files = model_files(
                args.models.as_ref().ok_or_else(|| config_err("--models required"))?,
            )?;
            for file in files {
                let artifact: ModelArtifact<DrnModel> =
                    load_model(&file, "drn").map_err(runtime)?;
                let name = file.file_stem().unwrap().to_string_lossy().to_string();
                let (penalty, gamma) = spec_meta(&artifact.loss_spec);
                let payload = artifact.payload;
                out.push(LoadedModel {
                    name,
                    penalty,
                    gamma,
                    cases_of: Box::new(move |rows, _, _| {
                        rows.iter()
                            .map(|r| {
                                let d = payload.predict_row(r).map_err(runtime)?;
                                Ok(ForecastCase::new(Distribution::TruncNormal(d), r.obs))
                            })
                            .collect()
                    }),
                });
            }
        }
        "cgm" => {
            let files = model_files(
                args.models.as_ref().ok_or_else(|| config_err("--models required"))?,
            )?;
            for file in files {
                let artifact: ModelArtifact<CgmModel> =
                    load_model(&file, "cgm").map_err(runtime)?;
                let name = file.file_stem().unwrap().to_string_lossy().to_string();
                let (penalty, gamma) = spec_meta(&artifact.loss_spec);
                let payload = artifact.payload;
                out.push(LoadedModel {
                    name,
                    penalty,
                    gamma,
                    cases_of: Box::new(move |rows, members, seed| {
                        rows.iter()
                            .enumerate()
                            .map(|(i, r)| {
                                let mut rng = <rand::rngs::StdRng as rand::SeedableRng>::seed_from_u64(
                                    seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                                );
                                let e = payload
                                    .generate_row(r, members, &mut rng)
                                    .map_err(runtime)?;
                                Ok(ForecastCase::new(Distribution::Ensemble(e), r.obs))
                            })
                            .collect()
                    }),
                });
            }
        }
        other => return Err(config_err(format!("unknown model family `{other}`"))),
    }
    Ok(out)
}

fn spec_meta(spec: &Option<LossSpec>) -> (String, f64) {
    match spec {
        None => ("none".into(), 0.0),
        Some(s) => (penalty_name(s.penalty).to_string(), s.gamma),
    }
}

fn cmd_evaluate(mut args: EvaluateArgs) -> Result<()> {
    let cfg = config_value(&args.common.config)?;
    fill_f64(&mut args.threshold, &cfg, "threshold");
    fill_u64(&mut args.seed, &cfg, "seed");
    fill_usize(&mut args.eval_members, &cfg, "eval_members");
    let threshold = args.threshold.unwrap_or(12.5);
    let eval_members = args.eval_members.unwrap_or(250);
    let seed = args.seed.unwrap_or(7_777);
    let rows = load_rows(&args.data)?;
    let baseline = args.baseline.as_ref().map(|p| read_baseline(p)).transpose()?;
    let models = load_models_for_eval(&args)?;
    let mut out = OutDir::create(&args.common.out)?;
    out.write_json(
        "config.json",
        "config",
        &serde_json::json!({
            "command": "evaluate", "model": args.model, "models": args.models,
            "data": args.data, "threshold": threshold, "eval_members": eval_members,
            "seed": seed, "baseline": args.baseline,
        }),
    )?;
    let mut csv = metrics_csv_header(baseline.is_some());
    let mut all = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let cases = (m.cases_of)(&rows, eval_members, seed)?;
        let metrics = evaluate_cases(&cases, threshold, seed).map_err(runtime)?;
        csv.push_str(&metrics_csv_row(
            &m.name,
            &args.model,
            &m.penalty,
            m.gamma,
            Some(i),
            &metrics,
            baseline.as_ref(),
        ));
        all.push(metrics);
    }
    if all.len() > 1 {
        let n = all.len() as f64;
        let mean = MetricSet {
            crps: all.iter().map(|m| m.crps).sum::<f64>() / n,
            twcrps: all.iter().map(|m| m.twcrps).sum::<f64>() / n,
            mcb: all.iter().map(|m| m.mcb).sum::<f64>() / n,
            tmcb: all.iter().map(|m| m.tmcb).sum::<f64>() / n,
            cpit_mcb: all.iter().map(|m| m.cpit_mcb).sum::<f64>() / n,
        };
        csv.push_str(&metrics_csv_row(
            "mean",
            &args.model,
            "",
            0.0,
            None,
            &mean,
            baseline.as_ref(),
        ));
    }
    out.write_text("metrics.csv", "metrics", &csv)?;
    out.finish()
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, env = "TAILCAL_MODEL")]
    model: String,
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, env = "TAILCAL_DATA")]
    data: PathBuf,
    #[arg(long, env = "TAILCAL_THRESHOLD")]
    threshold: Option<f64>,
    #[arg(long)]
    eval_members: Option<usize>,
    #[arg(long, env = "TAILCAL_SEED")]
    seed: Option<u64>,
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<()> {
    let threshold = args.threshold.unwrap_or(12.5);
    let eval_members = args.eval_members.unwrap_or(250);
    let seed = args.seed.unwrap_or(7_777);
    let rows = load_rows(&args.data)?;
    let eval_args = EvaluateArgs {
        common: args.common,
        model: args.model.clone(),
        models: args.models,
        truth: args.truth,
        data: args.data,
        threshold: Some(threshold),
        baseline: None,
        eval_members: Some(eval_members),
        seed: Some(seed),
    };
    let models = load_models_for_eval(&eval_args)?;
    let mut out = OutDir::create(&eval_args.common.out)?;
    out.write_json(
        "config.json",
        "config",
        &serde_json::json!({
            "command": "diagnose", "model": eval_args.model, "models": eval_args.models,
            "data": eval_args.data, "threshold": threshold,
            "eval_members": eval_members, "seed": seed,
        }),
    )?;
    let grid = unit_grid(100);
    for m in &models {
        let cases = (m.cases_of)(&rows, eval_members, seed)?;
        let mut rng = <rand::rngs::StdRng as rand::SeedableRng>::seed_from_u64(seed);
        let pits: Vec<f64> = cases
            .iter()
            .map(|c| crate::calib::pit(&c.forecast, c.obs, &mut rng).clamp(0.0, 1.0))
            .collect();
        let pit = pit_curve(&PitSet::unconditional(pits).map_err(runtime)?, &grid);
        let mut body = Vec::new();
        pit.write_csv(&mut body).map_err(runtime)?;
        out.write_text(
            &format!("curves/{}_pit.csv", m.name),
            "curve",
            std::str::from_utf8(&body).unwrap(),
        )?;
        let rhat = rhat_curve(&cases, threshold, &grid).map_err(runtime)?;
        let mut body = Vec::new();
        rhat.write_csv(&mut body).map_err(runtime)?;
        out.write_text(
            &format!("curves/{}_rhat.csv", m.name),
            "curve",
            std::str::from_utf8(&body).unwrap(),
        )?;
        // Conditional PIT curve (severity only).
        let mut cpits = Vec::new();
        for c in &cases {
            if c.obs > threshold {
                cpits.push(crate::calib::cpit(&c.forecast, c.obs, threshold).map_err(runtime)?);
            }
        }
        if !cpits.is_empty() {
            let curve =
                pit_curve(&PitSet::new(cpits, crate::calib::PitKind::Conditional { threshold })
                    .map_err(runtime)?, &grid);
            let mut body = Vec::new();
            curve.write_csv(&mut body).map_err(runtime)?;
            out.write_text(
                &format!("curves/{}_cpit.csv", m.name),
                "curve",
                std::str::from_utf8(&body).unwrap(),
            )?;
        }
    }
    out.finish()
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model family: emos, drn, or cgm.
    #[arg(long, env = "TAILCAL_MODEL")]
    model: String,
    #[arg(long, env = "TAILCAL_DATA")]
    data: PathBuf,
    /// Test CSV for evaluation.
    #[arg(long)]
    test_data: PathBuf,
    #[arg(long, env = "TAILCAL_PENALTY")]
    penalty: String,
    /// Gamma grid: comma list or log:lo:hi:points.
    #[arg(long, env = "TAILCAL_GAMMA_GRID")]
    gamma_grid: Option<String>,
    #[arg(long, env = "TAILCAL_THRESHOLD")]
    threshold: Option<f64>,
    #[arg(long, env = "TAILCAL_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    members: Option<usize>,
    /// Finetune steps per gamma (networks).
    #[arg(long)]
    steps: Option<usize>,
}

fn cmd_sweep(mut args: SweepArgs) -> Result<()> {
    let cfg = config_value(&args.common.config)?;
    fill_f64(&mut args.threshold, &cfg, "threshold");
    fill_u64(&mut args.seed, &cfg, "seed");
    let threshold = args.threshold.unwrap_or(12.5);
    let seed = args.seed.unwrap_or(0);
    let steps = args.steps.unwrap_or(50);
    let penalty = parse_penalty(&args.penalty)?;
    let grid = match &args.gamma_grid {
        Some(text) => parse_gamma_grid(text)?,
        None => vec![1.0, 2.5, 5.0, 10.0, 20.0],
    };
    let train_rows = load_rows(&args.data)?;
    let test_rows = load_rows(&args.test_data)?;
    let mut out = OutDir::create(&args.common.out)?;
    out.write_json(
        "config.json",
        "config",
        &serde_json::json!({
            "command": "sweep", "model": args.model, "data": args.data,
            "test_data": args.test_data, "penalty": args.penalty,
            "gamma_grid": grid, "threshold": threshold, "seed": seed, "steps": steps,
        }),
    )?;

    let mut rows_csv = String::from(
        "penalty,gamma,crps,twcrps,mcb,tmcb,cpit_mcb,delta_mcb,delta_tmcb\n",
    );
    let baseline: Option<MetricSet>;
    let mut push_row = |penalty: &str, gamma: f64, m: &MetricSet, b: &Option<MetricSet>| {
        let (dm, dt) = match b {
            Some(b) => (m.mcb - b.mcb, m.tmcb - b.tmcb),
            None => (0.0, 0.0),
        };
        rows_csv.push_str(&format!(
            "{penalty},{gamma},{},{},{},{},{},{dm},{dt}\n",
            m.crps, m.twcrps, m.mcb, m.tmcb, m.cpit_mcb
        ));
    };

    match args.model.as_str() {
        "emos" => {
            let per_station = observations_by_station(&train_rows);
            let clustering = cluster_stations(&per_station, 4, 9, seed).map_err(runtime)?;
            let cases = split_by_cluster(&train_rows, &clustering).map_err(runtime)?;
            let eval = |params: &[emos::EmosParams], clustering: &StationClustering| -> Result<MetricSet> {
                let artifact = EmosArtifact { clustering: clustering.clone(), params: params.to_vec() };
                let fc: Vec<ForecastCase> = test_rows
                    .iter()
                    .map(|r| {
                        let d = artifact.predict(r).map_err(runtime)?;
                        Ok(ForecastCase::new(Distribution::TruncNormal(d), r.obs))
                    })
                    .collect::<Result<_>>()?;
                evaluate_cases(&fc, threshold, seed).map_err(runtime)
            };
            let base_spec = loss_spec_for("emos", None, 0.0, threshold)?;
            let fit = emos_fit(&cases, &base_spec, &emos::default_optimizer()).map_err(runtime)?;
            let base_metrics = eval(&fit.params, &clustering)?;
            push_row("none", 0.0, &base_metrics, &None);
            baseline = Some(base_metrics);
            for &gamma in &grid {
                let spec = base_spec.with_penalty(penalty, gamma);
                let fit = emos_fit(&cases, &spec, &emos::default_optimizer()).map_err(runtime)?;
                let m = eval(&fit.params, &clustering)?;
                push_row(penalty_name(penalty), gamma, &m, &baseline);
            }
        }
        "drn" | "cgm" => {
            let family =
                if args.model == "drn" { NetworkFamily::Drn } else { NetworkFamily::Cgm };
            let mut train_cfg = match family {
                NetworkFamily::Drn => TrainConfig::drn_default(),
                NetworkFamily::Cgm => TrainConfig::cgm_default(),
            };
            train_cfg.seed = seed;
            if let Some(e) = args.epochs {
                train_cfg.epochs = e;
            }
            if let Some(m) = args.members {
                train_cfg.members = m;
            }
            let suite = SuiteConfig::desk_default(family, threshold);
            match family {
                NetworkFamily::Drn => {
                    let (base, _) = drn_train(&train_rows, &train_cfg).map_err(runtime)?;
                    let base_metrics = evaluate_network(
                        family, Some(&base), None, &test_rows, threshold,
                        suite.eval_members, suite.eval_seed,
                    )
                    .map_err(runtime)?;
                    push_row("none", 0.0, &base_metrics, &None);
                    baseline = Some(base_metrics);
                    for &gamma in &grid {
                        let spec = suite.finetune_spec(family, penalty, gamma);
                        let mut tuned = base.clone();
                        drn_finetune(&mut tuned, &train_rows, &spec, steps, 1e-3)
                            .map_err(runtime)?;
                        let m = evaluate_network(
                            family, Some(&tuned), None, &test_rows, threshold,
                            suite.eval_members, suite.eval_seed,
                        )
                        .map_err(runtime)?;
                        push_row(penalty_name(penalty), gamma, &m, &baseline);
                    }
                }
                NetworkFamily::Cgm => {
                    let (base, _) = cgm_train(&train_rows, &train_cfg).map_err(runtime)?;
                    let base_metrics = evaluate_network(
                        family, None, Some(&base), &test_rows, threshold,
                        suite.eval_members, suite.eval_seed,
                    )
                    .map_err(runtime)?;
                    push_row("none", 0.0, &base_metrics, &None);
                    baseline = Some(base_metrics);
                    for &gamma in &grid {
                        let spec = suite.finetune_spec(family, penalty, gamma);
                        let mut tuned = base.clone();
                        cgm_finetune(
                            &mut tuned, &train_rows, &spec, steps, 1e-3,
                            suite.fair_members, suite.penalty_members, seed,
                        )
                        .map_err(runtime)?;
                        let m = evaluate_network(
                            family, None, Some(&tuned), &test_rows, threshold,
                            suite.eval_members, suite.eval_seed,
                        )
                        .map_err(runtime)?;
                        push_row(penalty_name(penalty), gamma, &m, &baseline);
                    }
                }
            }
        }
        other => return Err(config_err(format!("unknown model family `{other}`"))),
    }
    out.write_text("trajectory.csv", "sweep", &rows_csv)?;
    out.finish()
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

/// Run the CLI; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::GenData(args) => cmd_gen_data(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Train(args) => cmd_train(args),
        Command::Finetune(args) => cmd_finetune(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {}", e.message());
            e.exit_code()
        }
    }
}
