use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use otward_core::adapter::{
    read_adapter, train_adapter, write_adapter, AdapterError, AdapterParams, ProbeSource, TrainConfig, TrainLoss,
};
use otward_core::diagnostics::{diagnose_with, DiagnoseConfig, DiagnosticsError};
use otward_core::harness::{
    check_theorem1, eps_sweep, rank1_sensitivity, run_factorial, BasePca, ContaminationKind, ContaminationSpec,
    HarnessError, MetricKind, Rank1Config, SpectrumSpec, TheoremOneConfig, SWEEP_GRID,
};
use otward_core::linalg::Rng;
use otward_core::metrics::{
    fad, fit_moments, kad, sinkhorn_divergence_with, BandwidthRule, EmbeddingSet, KadConfig, MetricError,
    SinkhornConfig,
};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::format::{read_embeddings, write_embeddings, FormatError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    /// 2 for usage and I/O problems, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Format(_) | Self::Io(_) => 2,
            Self::Numeric(_) => 3,
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        Self::Numeric(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::InvalidSpectrum(_) | HarnessError::InvalidParameter(_) => Self::Usage(e.to_string()),
            HarnessError::Adapter(a) => a.into(),
            other => Self::Numeric(other.to_string()),
        }
    }
}

impl From<DiagnosticsError> for CliError {
    fn from(e: DiagnosticsError) -> Self {
        Self::Numeric(e.to_string())
    }
}

impl From<AdapterError> for CliError {
    fn from(e: AdapterError) -> Self {
        match e {
            AdapterError::Io(io) => Self::Io(io),
            AdapterError::Format(_) | AdapterError::InvalidConfig(_) => Self::Usage(e.to_string()),
            other => Self::Numeric(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Format(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Io(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "otward",
    version,
    about = "Transport-based distances, per-sample diagnostics and synthetic experiments over embedding sets",
    after_help = "Exit codes: 0 success, 2 usage or I/O error, 3 numeric failure.\n\
                  Embedding files: binary OTEM, or CSV (first line dim=<d>) when the name ends in .csv.\n\
                  OTWARD_THREADS caps the worker threads."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print one distance between a reference and an evaluation set.
    Score(ScoreArgs),
    /// Per-sample transport costs. CSV columns: index,id,cost,rank.
    Diagnose(DiagnoseArgs),
    /// Write Gaussian samples with a chosen covariance spectrum.
    Gen(GenArgs),
    /// Replace a fraction of rows with outliers. Mask CSV column: index.
    Contaminate(ContaminateArgs),
    /// 2×2 cost/coupling decomposition. CSV columns:
    /// A,B,C,D,A_n,B_n,C_n,D_n,delta_cost,delta_meas,delta_syn,dominant.
    Factorial(FactorialArgs),
    /// Monte Carlo check of the rank-1 FAD bounds. CSV columns:
    /// d,epsilon,c0,n,seeds,r_eff,fad,fad_upper_bound,bound_i,w2_mean,w2_lower_bound,frequency,bound_ii,ratio,order_violations.
    #[command(name = "check-theorem1")]
    CheckTheorem1(TheoremArgs),
    /// Sinkhorn divergence over a grid of ε_reg. CSV columns: eps_reg,divergence,iterations,converged.
    Sweep(SweepArgs),
    /// Self-normalised rank-1 sensitivity. CSV columns:
    /// metric,epsilon,raw_rank_one,raw_full_rank,normalised_rank_one,normalised_full_rank.
    Rank1(Rank1Args),
    /// Train an adapter on synthetic cluster probes. CSV columns: epoch,loss.
    Train(TrainArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMetric {
    Fad,
    Kad,
    OtadRaw,
    OtadAdapted,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long, value_enum)]
    pub metric: ScoreMetric,
    /// Relative entropic regularisation ε_reg.
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Adapter file, required for otad-adapted.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    /// Fixed RBF bandwidth for kad; defaults to the evaluation-set median distance.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Write a JSON sidecar with the value, configuration and convergence.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub n: usize,
    /// flat:K, spike:RATIO or explicit:l1,l2,...
    #[arg(long, default_value = "flat:1.0")]
    pub spectrum: String,
    /// Added to every coordinate.
    #[arg(long, default_value_t = 0.0)]
    pub shift: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindArg {
    Rank1,
    FullRank,
    Theorem1,
}

#[derive(Debug, Args, Serialize)]
pub struct ContaminateArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long)]
    pub epsilon: f64,
    /// Outlier amplitude in leading standard deviations, theorem1 only.
    #[arg(long, default_value_t = 8.0)]
    pub c0: f64,
    /// Full-rank noise scale; defaults to the root-mean eigenvalue.
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub mask_out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FactorialArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub eval: PathBuf,
    /// Adapter file; the identity map when absent.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TheoremArgs {
    #[arg(long, default_value = "flat:1.0")]
    pub spectrum: String,
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 8.0)]
    pub c0: f64,
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub seeds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = SWEEP_GRID.to_vec())]
    pub grid: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricArg {
    Fad,
    Kad,
    Sinkhorn,
    ExactOt,
}

impl From<MetricArg> for MetricKind {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Fad => MetricKind::Fad,
            MetricArg::Kad => MetricKind::Kad,
            MetricArg::Sinkhorn => MetricKind::Sinkhorn,
            MetricArg::ExactOt => MetricKind::ExactOt,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct Rank1Args {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.15, 0.2])]
    pub grid: Vec<f64>,
    /// Relative ε_reg of the Sinkhorn metric.
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![MetricArg::Fad, MetricArg::Kad, MetricArg::Sinkhorn, MetricArg::ExactOt])]
    pub metrics: Vec<MetricArg>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossArg {
    Triplet,
    Native,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub clusters: usize,
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.5)]
    pub cluster_std: f64,
    #[arg(long, value_enum, default_value_t = LossArg::Triplet)]
    pub loss: LossArg,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// ε_reg of the native loss.
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub losses_out: Option<PathBuf>,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("OTWARD_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a pool may already exist when run() is called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Score(a) => score(&a),
        Command::Diagnose(a) => diagnose(&a),
        Command::Gen(a) => gen(&a),
        Command::Contaminate(a) => contaminate(&a),
        Command::Factorial(a) => factorial(&a),
        Command::CheckTheorem1(a) => theorem1(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Rank1(a) => rank1(&a),
        Command::Train(a) => train(&a),
    }
}

fn write_sidecar(path: &Option<PathBuf>, command: &str, config: &impl Serialize, result: Value) -> Result<()> {
    if let Some(path) = path {
        let doc = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "result": result,
        });
        std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    }
    Ok(())
}

fn load(path: &Path) -> Result<EmbeddingSet> {
    Ok(read_embeddings(path)?)
}

fn sinkhorn_config(eps_reg: f64, max_iter: usize, tol: f64) -> SinkhornConfig {
    SinkhornConfig::new(eps_reg).with_max_iter(max_iter).with_tol(tol)
}

fn score(a: &ScoreArgs) -> Result<()> {
    if a.metric == ScoreMetric::OtadAdapted && a.adapter.is_none() {
        return Err(CliError::Usage("otad-adapted needs --adapter".into()));
    }
    let (x, y) = (load(&a.reference)?, load(&a.eval)?);
    let (value, details) = match a.metric {
        ScoreMetric::Fad => (fad(&fit_moments(&x)?, &fit_moments(&y)?)?, Value::Null),
        ScoreMetric::Kad => {
            let cfg = match a.bandwidth {
                Some(s) => KadConfig::fixed(s),
                None => KadConfig {
                    bandwidth_rule: BandwidthRule::EvalMedian,
                },
            };
            (kad(&x, &y, &cfg)?, Value::Null)
        }
        ScoreMetric::OtadRaw | ScoreMetric::OtadAdapted => {
            let (x, y) = match &a.adapter {
                Some(path) if a.metric == ScoreMetric::OtadAdapted => {
                    let p = read_adapter(path)?;
                    (p.apply_set(&x)?, p.apply_set(&y)?)
                }
                _ => (x, y),
            };
            let r = sinkhorn_divergence_with(&x, &y, &sinkhorn_config(a.epsilon, a.max_iter, a.tol))?;
            if !r.converged {
                eprintln!("warning: Sinkhorn hit the iteration cap of {}", a.max_iter);
            }
            let details = json!({
                "iterations": r.iterations,
                "converged": r.converged,
                "epsilon_absolute": r.epsilon,
            });
            (r.divergence, details)
        }
    };
    println!("{value}");
    write_sidecar(&a.json, "score", a, json!({ "value": value, "convergence": details }))
}

fn diagnose(a: &DiagnoseArgs) -> Result<()> {
    let (x, y) = (load(&a.reference)?, load(&a.eval)?);
    let cfg = DiagnoseConfig {
        top_k: a.top_k,
        ..DiagnoseConfig::new(a.epsilon)
    };
    let report = diagnose_with(&x, &y, &cfg)?;
    if report.degraded {
        eprintln!("warning: Sinkhorn did not converge; costs are approximate");
    }
    let mut out = std::io::stdout().lock();
    for (rank, (id, cost)) in report.top_k.iter().enumerate() {
        writeln!(out, "{},{},{}", rank + 1, id, cost)?;
    }
    if let Some(path) = &a.out {
        let mut rank = vec![0; report.costs.len()];
        for (r, j) in report.ranking().into_iter().enumerate() {
            rank[j] = r + 1;
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "id", "cost", "rank"])?;
        for (j, cost) in report.costs.iter().enumerate() {
            w.write_record([j.to_string(), report.sample_ids[j].clone(), cost.to_string(), rank[j].to_string()])?;
        }
        w.flush()?;
    }
    write_sidecar(
        &a.json,
        "diagnose",
        a,
        json!({
            "total_cost": report.total_cost,
            "divergence": report.divergence,
            "degraded": report.degraded,
            "top_k": report.top_k,
        }),
    )
}

fn parse_spectrum(text: &str, d: usize) -> Result<SpectrumSpec> {
    let spec = SpectrumSpec::parse(text, d)?;
    if spec.d != d {
        return Err(CliError::Usage(format!("spectrum lists {} eigenvalues for --d {d}", spec.d)));
    }
    Ok(spec)
}

fn gen(a: &GenArgs) -> Result<()> {
    if a.n == 0 || a.d == 0 {
        return Err(CliError::Usage("--n and --d must be positive".into()));
    }
    let spectrum = parse_spectrum(&a.spectrum, a.d)?;
    let mut pts = spectrum.sample(a.n, &mut Rng::new(a.seed))?;
    pts.as_mut_slice().iter_mut().for_each(|v| *v += a.shift);
    let set = EmbeddingSet::new(pts)?;
    write_embeddings(&a.out, &set)?;
    write_sidecar(&a.json, "gen", a, json!({ "rows": a.n, "dim": a.d }))
}

fn contaminate(a: &ContaminateArgs) -> Result<()> {
    let base = load(&a.input)?;
    let kind = match a.kind {
        KindArg::Rank1 => ContaminationKind::RankOneDirac,
        KindArg::FullRank => ContaminationKind::FullRankGaussian,
        KindArg::Theorem1 => ContaminationKind::TheoremOne(a.c0),
    };
    let spec = ContaminationSpec {
        noise_scale: a.noise_scale,
        ..ContaminationSpec::new(kind, a.epsilon)
    };
    let pca = BasePca::fit(&base)?;
    let (out, mask) = pca.contaminate(&base, &spec, &mut Rng::new(a.seed))?;
    write_embeddings(&a.out, &out)?;
    let replaced: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if let Some(path) = &a.mask_out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index"])?;
        for i in &replaced {
            w.write_record([i.to_string()])?;
        }
        w.flush()?;
    }
    println!("{}", replaced.len());
    write_sidecar(&a.json, "contaminate", a, json!({ "replaced": replaced }))
}

fn factorial(a: &FactorialArgs) -> Result<()> {
    let (x, y) = (load(&a.reference)?, load(&a.eval)?);
    let adapter = match &a.adapter {
        Some(path) => read_adapter(path)?,
        None => AdapterParams::new(x.dim(), &mut Rng::new(0))?,
    };
    let f = run_factorial(&x, &y, &adapter, a.epsilon)?;
    let header = [
        "A", "B", "C", "D", "A_n", "B_n", "C_n", "D_n", "delta_cost", "delta_meas", "delta_syn", "dominant",
    ];
    let row: Vec<String> = [
        f.a_raw, f.b_raw, f.c_raw, f.d_raw, f.a_n, f.b_n, f.c_n, f.d_n, f.delta_cost, f.delta_meas, f.delta_syn,
    ]
    .iter()
    .map(|v| v.to_string())
    .chain([f.dominant.name().to_string()])
    .collect();
    emit_table(&a.out, &header, &[row])?;
    write_sidecar(&a.json, "factorial", a, serde_json::to_value(f)?)
}

/// Writes a CSV table to `out`, or to stdout when no path is given.
fn emit_table(out: &Option<PathBuf>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    fn fill<W: std::io::Write>(mut w: csv::Writer<W>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
    match out {
        Some(path) => {
            fill(csv::Writer::from_path(path)?, header, rows)?;
            // a short human-readable echo of the first row
            if let Some(first) = rows.first() {
                println!("{}", first.join(","));
            }
            Ok(())
        }
        None => fill(csv::Writer::from_writer(std::io::stdout().lock()), header, rows),
    }
}

fn theorem1(a: &TheoremArgs) -> Result<()> {
    let cfg = TheoremOneConfig {
        spectrum: parse_spectrum(&a.spectrum, a.d)?,
        epsilon: a.epsilon,
        c0: a.c0,
        n: a.n,
        seeds: a.seeds,
        base_seed: a.seed,
    };
    let r = check_theorem1(&cfg)?;
    let header = [
        "d", "epsilon", "c0", "n", "seeds", "r_eff", "fad", "fad_upper_bound", "bound_i", "w2_mean",
        "w2_lower_bound", "frequency", "bound_ii", "ratio", "order_violations",
    ];
    let row = vec![
        a.d.to_string(),
        a.epsilon.to_string(),
        a.c0.to_string(),
        a.n.to_string(),
        a.seeds.to_string(),
        r.r_eff.to_string(),
        r.fad_value.to_string(),
        r.fad_upper_bound.to_string(),
        r.bound_i_holds.to_string(),
        r.w2_empirical.to_string(),
        r.w2_lower_bound.to_string(),
        r.bound_ii_frequency.to_string(),
        r.bound_ii_holds.to_string(),
        r.ratio.to_string(),
        r.order_statistic_violations.to_string(),
    ];
    emit_table(&a.out, &header, &[row])?;
    write_sidecar(&a.json, "check-theorem1", a, serde_json::to_value(&r)?)
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let (x, y) = (load(&a.reference)?, load(&a.eval)?);
    let rows = eps_sweep(&x, &y, &a.grid)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.eps_reg.to_string(),
                r.divergence.to_string(),
                r.iterations.to_string(),
                r.converged.to_string(),
            ]
        })
        .collect();
    emit_table(&a.out, &["eps_reg", "divergence", "iterations", "converged"], &table)?;
    write_sidecar(&a.json, "sweep", a, serde_json::to_value(&rows)?)
}

fn rank1(a: &Rank1Args) -> Result<()> {
    let base = load(&a.input)?;
    let cfg = Rank1Config {
        metrics: a.metrics.iter().map(|&m| m.into()).collect(),
        noise_scale: a.noise_scale,
        ..Rank1Config::new(a.grid.clone(), a.epsilon)
    };
    let t = rank1_sensitivity(&base, &cfg, &mut Rng::new(a.seed))?;
    let table: Vec<Vec<String>> = t
        .rows
        .iter()
        .map(|r| {
            vec![
                r.metric.name().to_string(),
                r.epsilon.to_string(),
                r.raw_rank_one.to_string(),
                r.raw_full_rank.to_string(),
                r.normalised_rank_one.to_string(),
                r.normalised_full_rank.to_string(),
            ]
        })
        .collect();
    emit_table(
        &a.out,
        &["metric", "epsilon", "raw_rank_one", "raw_full_rank", "normalised_rank_one", "normalised_full_rank"],
        &table,
    )?;
    write_sidecar(&a.json, "rank1", a, serde_json::to_value(&t)?)
}

fn train(a: &TrainArgs) -> Result<()> {
    let mut rng = Rng::new(a.seed);
    let init = AdapterParams::new(a.d, &mut rng)?;
    let probes = ProbeSource::clusters(a.d, a.clusters, a.separation, a.cluster_std, &mut rng)?;
    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        margin: a.margin,
        batch_size: a.batch_size,
        epochs: a.epochs,
        seed: a.seed,
        loss: match a.loss {
            LossArg::Triplet => TrainLoss::TripletAgnostic,
            LossArg::Native => TrainLoss::SinkhornNative,
        },
        eps_reg: a.epsilon,
        ..TrainConfig::default()
    };
    let outcome = train_adapter(&init, &probes, &cfg)?;
    write_adapter(&a.out, &outcome.params)?;
    if let Some(path) = &a.losses_out {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "loss"])?;
        w.write_record(["0".to_string(), outcome.initial_loss.to_string()])?;
        for (e, l) in outcome.epoch_losses.iter().enumerate() {
            w.write_record([(e + 1).to_string(), l.to_string()])?;
        }
        w.flush()?;
    }
    println!("{}", outcome.final_loss());
    write_sidecar(
        &a.json,
        "train",
        a,
        json!({ "initial_loss": outcome.initial_loss, "epoch_losses": outcome.epoch_losses }),
    )
}
