//! `largemvc`: batch experiment runner.
//!
//! Every subcommand prints a JSON summary on stdout and, with `--out`,
//! writes its artifacts there. Exit status: 0 on success, 1 on a
//! configuration, input or I/O error, 2 on a numerical failure (including
//! a failed gradient check).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use largemvc::cluster::{accuracy, ari, kmeans, nmi, KMeansConfig};
use largemvc::data::{apply_missing, generate_synthetic, load_dataset, read_labels, save_dataset, SynthSpec};
use largemvc::experiment::{
    bench_scaling, export_embedding, prepare_dataset, run_experiment, run_seed, BenchConfig, DatasetSource,
    ExperimentConfig, Pipeline, RunReport,
};
use largemvc::solver::{init_anchors, ThresholdPlacement};
use largemvc::train::{grad_check_with, reconstruction_loss, GradCheckSpec};
use largemvc::unfold::{forward, Checkpoint, UnfoldConfig, Variant};
use largemvc::{Mat, MvcError, Result};
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(name = "largemvc", version, about = "Anchor-based multi-view clustering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic multi-view dataset directory.
    Synth(SynthArgs),
    /// Drop whole views of samples from a dataset directory.
    Mask(Common),
    /// Run the classic alternating solver + k-means over the configured seeds.
    Solve(Common),
    /// Train the unfolded network + k-means over the configured seeds.
    Train(Common),
    /// Score a trained checkpoint, or a prediction file against labels.
    Eval(EvalArgs),
    /// Train every variant over grids of missing rates, layers and anchors.
    Ablate(AblateArgs),
    /// Time one training epoch at increasing sample counts.
    Bench(BenchArgs),
    /// Compare the analytic gradient with central differences.
    Gradcheck(GradcheckArgs),
    /// Write the final representation H as CSV.
    Export(ExportArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Rmvc,
    Amvc,
    Largemvc,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Rmvc => Variant::Rmvc,
            VariantArg::Amvc => Variant::Amvc,
            VariantArg::Largemvc => Variant::Largemvc,
        }
    }
}

/// Flags shared by all subcommands; each overrides the matching field of
/// the `--config` file (or of the defaults).
#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (a file path for `export`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset directory; replaces the configured source.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    layers: Option<usize>,
    /// Anchor count as a multiple of the cluster count.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    anchors_mult: Option<u8>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    missing_rate: Option<f64>,
    /// Worker threads for seed runs (results do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Number of samples.
    #[arg(long)]
    n: Option<usize>,
    /// Number of clusters.
    #[arg(long)]
    clusters: Option<usize>,
    /// Comma-separated feature dimension of every view.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    /// Fraction of rows replaced by gross corruption.
    #[arg(long)]
    corrupt: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Parameter checkpoint written by `train`.
    #[arg(long, conflicts_with = "pred")]
    checkpoint: Option<PathBuf>,
    /// Predicted cluster ids, one per line (requires `--labels`).
    #[arg(long, requires = "labels")]
    pred: Option<PathBuf>,
    /// Ground-truth labels, one per line.
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    /// Variants to compare (default: all three).
    #[arg(long, value_enum, value_delimiter = ',')]
    variants: Vec<VariantArg>,
    /// Missing rates to sweep (default: the configured rate).
    #[arg(long, value_delimiter = ',')]
    rates: Vec<f64>,
    /// Layer counts to sweep (default: the configured count).
    #[arg(long, value_delimiter = ',')]
    layer_grid: Vec<usize>,
    /// Anchor multipliers to sweep (default: the configured multiplier).
    #[arg(long, value_delimiter = ',')]
    mult_grid: Vec<usize>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    common: Common,
    /// Strictly increasing sample counts (at least four).
    #[arg(long, value_delimiter = ',', default_values_t = vec![2000, 4000, 8000, 16000])]
    sizes: Vec<usize>,
    /// Timed repetitions per size; the fastest is kept.
    #[arg(long)]
    repeats: Option<usize>,
    /// Anchor count.
    #[arg(long)]
    anchors: Option<usize>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 40)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    anchors: usize,
    #[arg(long, default_value_t = 2)]
    views: usize,
    /// Largest accepted relative error per parameter block.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[command(flatten)]
    common: Common,
    /// Use this trained checkpoint instead of running the pipeline.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Export the classic solver's H instead of the network's.
    #[arg(long, conflicts_with = "checkpoint")]
    classic: bool,
}

impl Common {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(dir) = &self.data {
            cfg.source = DatasetSource::Directory(dir.clone());
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(l) = self.layers {
            cfg.layers = l;
        }
        if let Some(k) = self.anchors_mult {
            cfg.anchors_mult = k as usize;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        if let Some(lr) = self.lr {
            cfg.train.learning_rate = lr;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(v) = self.variant {
            cfg.variant = v.into();
        }
        if let Some(r) = self.missing_rate {
            cfg.missing_rate = r;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        for (name, x) in [("alpha", cfg.alpha), ("beta", cfg.beta)] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(MvcError::Config(format!("{name} must be finite and >= 0, got {x}")));
            }
        }
        if !(cfg.train.learning_rate > 0.0 && cfg.train.learning_rate.is_finite()) {
            return Err(MvcError::Config("learning rate must be positive".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| MvcError::Config("--out is required for this command".into()))
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: std::io::Error) -> MvcError {
    MvcError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn print_json(value: &Value) {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report serializes")
}

fn report_summary(report: &RunReport) -> Value {
    json!({ "seeds": to_value(&report.seeds), "aggregate": to_value(&report.aggregate) })
}

fn cmd_synth(args: &SynthArgs) -> Result<Value> {
    let cfg = args.common.experiment()?;
    let mut spec = match &cfg.source {
        DatasetSource::Synthetic(spec) => spec.clone(),
        DatasetSource::Directory(_) => SynthSpec::default(),
    };
    spec.seed = args.common.seed.unwrap_or(spec.seed);
    if let Some(n) = args.n {
        spec.n = n;
    }
    if let Some(c) = args.clusters {
        spec.n_clusters = c;
        spec.latent_dim = spec.latent_dim.max(c);
    }
    if !args.dims.is_empty() {
        spec.n_views = args.dims.len();
        spec.view_dims = args.dims.clone();
    }
    if let Some(f) = args.corrupt {
        spec.corrupt_row_fraction = f;
    }
    let out = args.common.require_out()?;
    let mut ds = generate_synthetic(&spec)?;
    if cfg.missing_rate > 0.0 {
        ds = apply_missing(&ds, cfg.missing_rate, spec.seed)?;
    }
    save_dataset(&ds, out)?;
    Ok(json!({
        "out": out,
        "n": ds.n_samples(),
        "views": ds.n_views(),
        "dims": ds.dims(),
        "clusters": ds.n_clusters(),
        "missing": ds.missing_count(),
        "spec": to_value(&spec),
    }))
}

fn cmd_mask(common: &Common) -> Result<Value> {
    let input = common
        .data
        .as_deref()
        .ok_or_else(|| MvcError::Config("mask needs --data <dir>".into()))?;
    let rate = common
        .missing_rate
        .ok_or_else(|| MvcError::Config("mask needs --missing-rate".into()))?;
    let out = common.require_out()?;
    let seed = common.seed.unwrap_or(0);
    let ds = apply_missing(&load_dataset(input)?, rate, seed)?;
    save_dataset(&ds, out)?;
    Ok(json!({ "out": out, "missing_rate": rate, "seed": seed, "missing": ds.missing_count() }))
}

fn cmd_run(common: &Common, pipeline: Pipeline) -> Result<Value> {
    let cfg = ExperimentConfig {
        pipeline,
        ..common.experiment()?
    };
    let report = run_experiment(&cfg)?;
    Ok(report_summary(&report))
}

/// The final `H` of a checkpointed network on the seed's dataset, plus the
/// dataset and the reconstruction loss.
fn checkpoint_embedding(
    cfg: &ExperimentConfig,
    path: &Path,
    seed: u64,
) -> Result<(largemvc::data::MultiViewDataset, Mat, f64)> {
    let ckpt = Checkpoint::load(path)?;
    let params = ckpt.params()?;
    let ds = prepare_dataset(cfg, seed, None)?;
    if ds.n_views() != ckpt.views {
        return Err(MvcError::Config(format!(
            "checkpoint has {} views, dataset has {}",
            ckpt.views,
            ds.n_views()
        )));
    }
    let ucfg = UnfoldConfig {
        layers: ckpt.layers,
        anchors: ckpt.anchors,
        variant: ckpt.variant,
        nonneg_h: cfg.nonneg_h,
        placement: cfg.placement.unwrap_or(ThresholdPlacement::PerView),
        ..Default::default()
    };
    let p_init = match ckpt.anchors()? {
        Some(p) => p,
        None => init_anchors(&ds, ckpt.anchors, seed)?,
    };
    let trace = forward(&ds, &params, &p_init, &ucfg)?;
    let loss = reconstruction_loss(&ds, &trace)?;
    Ok((ds, trace.final_h().clone(), loss))
}

fn metrics(y: &[usize], pred: &[usize]) -> Result<Value> {
    Ok(json!({ "acc": accuracy(y, pred)?, "nmi": nmi(y, pred)?, "ari": ari(y, pred)? }))
}

fn cmd_eval(args: &EvalArgs) -> Result<Value> {
    let value = if let Some(pred) = &args.pred {
        let labels = args.labels.as_deref().expect("clap enforces --labels");
        metrics(&read_labels(labels)?, &read_labels(pred)?)?
    } else if let Some(path) = &args.checkpoint {
        let cfg = args.common.experiment()?;
        let seed = cfg.seeds[0];
        let (ds, h, loss) = checkpoint_embedding(&cfg, path, seed)?;
        let fit = kmeans(&h, &KMeansConfig::new(ds.n_clusters(), seed))?;
        let scores = match ds.labels() {
            Some(y) => metrics(y, &fit.assignments)?,
            None => Value::Null,
        };
        json!({ "seed": seed, "reconstruction_loss": loss, "metrics": scores })
    } else {
        return Err(MvcError::Config("eval needs --checkpoint or --pred/--labels".into()));
    };
    if let Some(out) = &args.common.out {
        write_json(&out.join("eval.json"), &value)?;
    }
    Ok(value)
}

fn cmd_ablate(args: &AblateArgs) -> Result<Value> {
    let base = ExperimentConfig {
        pipeline: Pipeline::Unfold,
        ..args.common.experiment()?
    };
    let variants: Vec<Variant> = if args.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        args.variants.iter().map(|&v| v.into()).collect()
    };
    let or = |grid: &[usize], default: usize| if grid.is_empty() { vec![default] } else { grid.to_vec() };
    let rates = if args.rates.is_empty() {
        vec![base.missing_rate]
    } else {
        args.rates.clone()
    };
    let layers = or(&args.layer_grid, base.layers);
    let mults = or(&args.mult_grid, base.anchors_mult);

    let mut rows = Vec::new();
    let mut csv = String::from("variant,layers,anchors_mult,missing_rate,acc_mean,acc_std,nmi_mean,nmi_std,ari_mean,ari_std,loss_mean\n");
    let mut failure = None;
    'grid: for &variant in &variants {
        for &rate in &rates {
            for &l in &layers {
                for &k in &mults {
                    let cfg = ExperimentConfig {
                        variant,
                        missing_rate: rate,
                        layers: l,
                        anchors_mult: k,
                        out_dir: base
                            .out_dir
                            .as_ref()
                            .map(|d| d.join(format!("{}_L{l}_m{k}_mr{rate}", variant.name()))),
                        ..base.clone()
                    };
                    log::info!("ablate: {} L={l} m={k}c missing={rate}", variant.name());
                    let report = match run_experiment(&cfg) {
                        Ok(r) => r,
                        Err(e) => {
                            failure = Some(e);
                            break 'grid;
                        }
                    };
                    let agg = &report.aggregate;
                    let stat = |s: Option<largemvc::experiment::Stat>| s.map_or((f64::NAN, f64::NAN), |s| (s.mean, s.std));
                    let (am, asd) = stat(agg.acc);
                    let (nm, nsd) = stat(agg.nmi);
                    let (rm, rsd) = stat(agg.ari);
                    let (lm, _) = stat(agg.final_loss);
                    csv.push_str(&format!(
                        "{},{l},{k},{rate},{am:?},{asd:?},{nm:?},{nsd:?},{rm:?},{rsd:?},{lm:?}\n",
                        variant.name()
                    ));
                    rows.push(json!({
                        "variant": variant.name(),
                        "layers": l,
                        "anchors_mult": k,
                        "missing_rate": rate,
                        "aggregate": to_value(&report.aggregate),
                    }));
                }
            }
        }
    }
    let value = Value::Array(rows);
    if let Some(out) = &base.out_dir {
        write_json(&out.join("ablation.json"), &value)?;
        let path = out.join("ablation.csv");
        fs::write(&path, &csv).map_err(|e| io_error(&path, e))?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

fn cmd_bench(args: &BenchArgs) -> Result<Value> {
    let c = &args.common;
    let defaults = BenchConfig::default();
    let cfg = BenchConfig {
        anchors: args.anchors.unwrap_or(defaults.anchors),
        layers: c.layers.unwrap_or(defaults.layers),
        variant: c.variant.map_or(defaults.variant, Variant::from),
        repeats: args.repeats.unwrap_or(defaults.repeats),
        seed: c.seed.unwrap_or(defaults.seed),
        ..defaults
    };
    let report = bench_scaling(&cfg, &args.sizes)?;
    let value = to_value(&report);
    if let Some(out) = &c.out {
        write_json(&out.join("scaling.json"), &value)?;
    }
    Ok(value)
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<Value> {
    let c = &args.common;
    let spec = GradCheckSpec {
        variant: c.variant.map_or(Variant::Largemvc, Variant::from),
        ..GradCheckSpec::new(args.n, args.anchors, args.views, c.layers.unwrap_or(2), c.seed.unwrap_or(0))
    };
    let report = grad_check_with(&spec, args.tolerance)?;
    let value = to_value(&report);
    if let Some(out) = &c.out {
        write_json(&out.join("gradcheck.json"), &value)?;
    }
    if !report.passed {
        print_json(&value);
        return Err(MvcError::Numerical(format!(
            "gradient check failed at tolerance {:e}",
            args.tolerance
        )));
    }
    Ok(value)
}

fn cmd_export(args: &ExportArgs) -> Result<Value> {
    let cfg = ExperimentConfig {
        out_dir: None,
        ..args.common.experiment()?
    };
    let out = args.common.require_out()?;
    let seed = cfg.seeds[0];
    let (h, labels) = match &args.checkpoint {
        Some(path) => {
            let (ds, h, _) = checkpoint_embedding(&cfg, path, seed)?;
            (h, ds.labels().map(<[usize]>::to_vec))
        }
        None => {
            let pipeline = if args.classic { Pipeline::Classic } else { Pipeline::Unfold };
            let run = run_seed(&ExperimentConfig { pipeline, ..cfg.clone() }, seed, None)?;
            (run.h, run.dataset.labels().map(<[usize]>::to_vec))
        }
    };
    let written = export_embedding(&h, labels.as_deref(), out)?;
    Ok(json!({ "seed": seed, "rows": h.nrows(), "cols": h.ncols(), "written": written }))
}

fn run(cli: &Cli) -> Result<Value> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Mask(c) => cmd_mask(c),
        Command::Solve(c) => cmd_run(c, Pipeline::Classic),
        Command::Train(c) => cmd_run(c, Pipeline::Unfold),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Export(a) => cmd_export(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(value) => {
            print_json(&value);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
