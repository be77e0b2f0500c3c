use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use addcgp::bench::flood::{closest_subset, flood_constraints, subset, surrogate_flood_generator};
use addcgp::bench::harness::BenchmarkConfig;
use addcgp::bench::{q_squared, run_benchmark, write_rows, DesignGenerator, DesignSpec, RandomLhd, TargetSpec};
use addcgp::maxmod::{maxmod_run, MaxModConfig};
use addcgp::model::{fit, refit_posterior, ConstraintSpec, FitConfig, ModelState};
use addcgp::posterior::{Dataset, SolverPath};
use addcgp::sampler::{posterior_mean_function, sample_chains, HmcConfig, Whitened};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "addcgp", version, about = "Additive GPs under componentwise inequality constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model on a fixed active set and save its state as JSON.
    Fit(FitArgs),
    /// Evaluate a saved mode function on new inputs.
    Predict(PredictArgs),
    /// Draw from the truncated posterior of a saved model.
    Sample(SampleArgs),
    /// Select active inputs and knots sequentially.
    Maxmod(MaxModArgs),
    /// Replicated fit-and-score runs, one CSV row per seed.
    Benchmark(BenchArgs),
    /// Write a synthetic flood database (transformed inputs plus H) as CSV.
    Flood(FloodArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV with a header row; every column but the response is an input in [0, 1].
    #[arg(long)]
    data: PathBuf,
    /// Name of the response column.
    #[arg(long, default_value = "y")]
    response: String,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON fit configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Dump the QP solution and its KKT residuals as JSON to this file.
    #[arg(long)]
    debug_qp: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Inputs to predict at; if the response column is present Q² is reported.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    response: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training data the model was fitted on.
    #[command(flatten)]
    data: DataArgs,
    /// JSON sampler configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    chains: usize,
    /// Draws, one row per draw.
    #[arg(long)]
    out: PathBuf,
    /// Per-coefficient mean and quantiles as JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Save the sample-mean model here.
    #[arg(long)]
    mean_model: Option<PathBuf>,
}

#[derive(Args)]
struct MaxModArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Held-out CSV scored after every decision.
    #[arg(long)]
    holdout: Option<PathBuf>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    delta_prime: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Number of equispaced knot positions on [0, 1].
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Re-estimate hyperparameters every this many passes (0 never).
    #[arg(long)]
    reestimate: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the flood input directions (decreasing in 1-24, increasing after).
    #[arg(long)]
    flood_constraints: bool,
    /// JSONL decision trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target name: atan5d, modatan, expr or flood.
    #[arg(long)]
    target: Option<String>,
    /// Influential inputs of modatan, or inputs of an expression.
    #[arg(long)]
    d: Option<usize>,
    /// Expression in x1..xd for the expr target.
    #[arg(long)]
    expression: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    knots: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Noise variance used with fixed hyperparameters.
    #[arg(long)]
    noise: Option<f64>,
    /// HMC draws for the cGP mean (0 skips sampling).
    #[arg(long)]
    samples: Option<usize>,
    /// Size cap of the test LHD.
    #[arg(long)]
    test_budget: Option<usize>,
    /// Use a maximin LHD with this many candidates.
    #[arg(long)]
    maximin: Option<usize>,
    #[arg(long)]
    estimate: bool,
    /// The d = 1000, n = 2000 configuration with 50 draws for the mean.
    #[arg(long)]
    stress: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FloodArgs {
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep only the rows closest to a random LHD of this size.
    #[arg(long)]
    lhd: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            serde_json::from_reader(f).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn load(data: &DataArgs) -> Result<Dataset> {
    let ds = Dataset::from_csv(&data.data, &data.response).with_context(|| format!("reading {}", data.data.display()))?;
    ds.check_unit_cube()?;
    Ok(ds)
}

fn load_model(path: &Path) -> Result<ModelState> {
    let state: ModelState = serde_json::from_reader(File::open(path).with_context(|| format!("opening {}", path.display()))?)?;
    state.validate()?;
    Ok(state)
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let cfg: FitConfig = read_json(a.config.as_deref())?;
    let f = fit(&ds, &cfg)?;
    if let Some(h) = &f.hyper {
        log::info!("log marginal likelihood {:.4}", h.log_likelihood);
        if h.warning {
            log::warn!("some hyperparameter restarts failed");
        }
    }
    eprintln!(
        "fitted {} active inputs, {} coefficients, mode in {:.3}s ({} QP iterations, {} active constraints)",
        f.state.active.len(),
        f.state.mode.len(),
        f.mode_seconds,
        f.qp.iterations,
        f.qp.active.len()
    );
    if let Some(p) = &a.debug_qp {
        write_json(p, &f.qp)?;
    }
    write_json(&a.out, &f.state)
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let state = load_model(&a.model)?;
    let mut rdr = csv::Reader::from_path(&a.data)?;
    let headers = rdr.headers()?.clone();
    let resp = headers.iter().position(|h| h == a.response);
    let f = state.mode_function();
    let out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["prediction"])?;
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let mut x = Vec::with_capacity(state.input_dim);
        for (j, v) in rec.iter().enumerate() {
            let v: f64 = v.trim().parse().with_context(|| format!("parsing `{v}`"))?;
            if Some(j) == resp {
                truth.push(v);
            } else {
                x.push(v);
            }
        }
        if x.len() != state.input_dim {
            bail!("expected {} inputs per row, found {}", state.input_dim, x.len());
        }
        let p = f.eval(&x)?;
        pred.push(p);
        w.write_record([p.to_string()])?;
    }
    w.flush()?;
    if resp.is_some() {
        eprintln!("Q² = {:.6}", q_squared(&pred, &truth)?);
    }
    Ok(())
}

#[derive(Serialize)]
struct CoefficientSummary {
    mean: f64,
    q05: f64,
    q50: f64,
    q95: f64,
}

#[derive(Serialize)]
struct SampleSummary {
    draws: usize,
    rejected: usize,
    max_energy_drift: f64,
    mean_bounces: f64,
    coefficients: Vec<CoefficientSummary>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let state = load_model(&a.model)?;
    let ds = load(&a.data)?;
    let mut cfg: HmcConfig = read_json(a.config.as_deref())?;
    if let Some(n) = a.n_samples {
        cfg.n_samples = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let post = refit_posterior(&ds, &state, SolverPath::Auto)?;
    let w = Whitened::from_posterior(&post)?;
    let start = nalgebra_from(&state.mode);
    let init = w.interior_point(&start)?;
    let set = sample_chains(&w, &init, &cfg, a.chains)?;

    let mut wr = csv::Writer::from_path(&a.out)?;
    wr.write_record((0..set.samples.ncols()).map(|j| format!("c{j}")))?;
    for r in 0..set.len() {
        wr.write_record(set.samples.row(r).iter().map(|v| v.to_string()))?;
    }
    wr.flush()?;
    eprintln!("{} draws, {} rejected trajectories", set.len(), set.rejected);

    if let Some(p) = &a.summary {
        let coefficients = (0..set.samples.ncols())
            .map(|j| {
                let mut col: Vec<f64> = set.samples.column(j).iter().copied().collect();
                col.sort_by(f64::total_cmp);
                CoefficientSummary {
                    mean: col.iter().sum::<f64>() / col.len() as f64,
                    q05: quantile(&col, 0.05),
                    q50: quantile(&col, 0.5),
                    q95: quantile(&col, 0.95),
                }
            })
            .collect();
        let summary = SampleSummary {
            draws: set.len(),
            rejected: set.rejected,
            max_energy_drift: set.max_energy_drift,
            mean_bounces: set.bounces.iter().sum::<usize>() as f64 / set.len().max(1) as f64,
            coefficients,
        };
        write_json(p, &summary)?;
    }
    if let Some(p) = &a.mean_model {
        let mean = posterior_mean_function(&set, &state.mode_function())?;
        let mut mean_state = state.clone();
        mean_state.mode = mean.flat();
        write_json(p, &mean_state)?;
    }
    Ok(())
}

fn nalgebra_from(v: &[f64]) -> addcgp::nalgebra::DVector<f64> {
    addcgp::nalgebra::DVector::from_column_slice(v)
}

#[derive(Serialize)]
struct MaxModOutput<'a> {
    state: &'a ModelState,
    converged: bool,
    warning: bool,
    iterations: usize,
    delta: f64,
    delta_prime: f64,
    /// True when Δ and Δ′ were left at their built-in values.
    default_rewards: bool,
}

fn cmd_maxmod(a: MaxModArgs) -> Result<()> {
    let ds = load(&a.data)?;
    let mut cfg: MaxModConfig = read_json(a.config.as_deref())?;
    let defaults = MaxModConfig::default();
    if let Some(v) = a.delta {
        cfg.delta = v;
    }
    if let Some(v) = a.delta_prime {
        cfg.delta_prime = v;
    }
    if let Some(v) = a.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = a.grid {
        cfg.grid = v;
    }
    if let Some(v) = a.max_iter {
        cfg.max_iter = v;
    }
    if let Some(v) = a.reestimate {
        cfg.reestimate_period = v;
    }
    if let Some(v) = a.seed {
        cfg.search.seed = v;
    }
    if a.flood_constraints {
        cfg.constraints = ConstraintSpec::PerDimension(flood_constraints());
    }
    let holdout = match &a.holdout {
        Some(p) => Some(Dataset::from_csv(p, &a.data.response)?),
        None => None,
    };
    let mut trace_file = match &a.trace {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let run = maxmod_run(&ds, &cfg, holdout.as_ref(), trace_file.as_mut().map(|w| w as &mut dyn Write))?;
    if let Some(mut w) = trace_file {
        w.flush()?;
    }
    for r in &run.trace {
        eprintln!(
            "iter {:>3} {:<40} I = {:.3e} {}",
            r.iteration,
            serde_json::to_string(&r.action)?,
            r.criterion,
            if r.applied { "" } else { "(stop)" }
        );
    }
    let out = MaxModOutput {
        state: &run.state,
        converged: run.converged,
        warning: run.warning,
        iterations: run.trace.len(),
        delta: cfg.delta,
        delta_prime: cfg.delta_prime,
        default_rewards: cfg.delta == defaults.delta && cfg.delta_prime == defaults.delta_prime,
    };
    write_json(&a.out, &out)
}

fn cmd_benchmark(a: BenchArgs) -> Result<()> {
    let mut cfg: BenchmarkConfig = read_json(a.config.as_deref())?;
    if a.stress {
        cfg.target = TargetSpec {
            name: "modatan".into(),
            d: Some(1000),
            ..TargetSpec::default()
        };
        cfg.n = Some(2000);
        cfg.hmc.n_samples = 50;
    }
    if let Some(t) = a.target {
        cfg.target.name = t;
    }
    if a.d.is_some() {
        cfg.target.d = a.d;
    }
    if a.expression.is_some() {
        cfg.target.expression = a.expression;
    }
    if a.n.is_some() {
        cfg.n = a.n;
    }
    if let Some(k) = a.knots {
        cfg.knots = k;
    }
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if let Some(v) = a.noise {
        cfg.noise = v;
    }
    if let Some(v) = a.samples {
        cfg.hmc.n_samples = v;
    }
    if let Some(v) = a.test_budget {
        cfg.test_budget = v;
    }
    if let Some(k) = a.maximin {
        cfg.design = DesignSpec::maximin(k);
    }
    if a.estimate {
        cfg.estimate = true;
    }
    let rows = run_benchmark(&cfg)?;
    match &a.out {
        Some(p) => write_rows(&rows, File::create(p)?)?,
        None => write_rows(&rows, std::io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_flood(a: FloodArgs) -> Result<()> {
    let mut ds = surrogate_flood_generator(a.n, a.seed)?.dataset;
    if let Some(k) = a.lhd {
        let design = RandomLhd.generate(k, ds.d(), a.seed)?;
        ds = subset(&ds, &closest_subset(&ds.x, &design)?)?;
    }
    ds.to_csv(File::create(&a.out)?, "H")?;
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Maxmod(a) => cmd_maxmod(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Flood(a) => cmd_flood(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
