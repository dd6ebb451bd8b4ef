use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use swarm_amr::harness::{
    configure_workers, default_sweep, evaluate, fit_methods, fits_csv, ppo_config, read_records, render_state, run_episode, run_sweep, scatter,
    scatter_csv, summarize, write_records, EvalSuite, ExperimentConfig, RenderField, StrategyParams, StrategyRegistry,
    WORKERS_ENV,
};
use swarm_amr::problems::PdeFamily;
use swarm_amr::rl::{train_with, LOG_HEADER};

#[derive(Parser)]
#[command(name = "swarm-amr", version, about = "Learned adaptive mesh refinement experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; writes train_log.csv and checkpoints to --out.
    Train(Common),
    /// Evaluate one method on the fixed problem suite; writes a CSV to --out.
    Evaluate(Common),
    /// Train (where needed) and evaluate every sweep value and seed.
    Sweep(Common),
    /// Fit error against element count per method from evaluation CSVs.
    Aggregate(AggregateArgs),
    /// Write an SVG of one refined evaluation problem.
    Render(RenderArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment file (TOML or key=value lines); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    /// laplace or poisson.
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Element penalty of a learned method.
    #[arg(long)]
    alpha: Option<f64>,
    /// Heuristic threshold.
    #[arg(long)]
    theta: Option<f64>,
    /// Sweep value for the other methods (uniform k, random p, argmax T).
    #[arg(long)]
    value: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    eval_count: Option<usize>,
    #[arg(long)]
    eval_suite_seed: Option<u64>,
    /// Checkpoint of a learned method (evaluate/render).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AggregateArgs {
    /// Evaluation CSVs or directories containing them.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Directory for fits.csv and scatter.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    common: Common,
    /// Index into the evaluation suite.
    #[arg(long, default_value_t = 0)]
    problem: usize,
    /// solution or error.
    #[arg(long, default_value = "error")]
    field: String,
    #[arg(long, default_value_t = 800)]
    size: u32,
}

/// The experiment file (or defaults for `--method`) with flag overrides.
fn experiment(c: &Common) -> Result<ExperimentConfig> {
    let family = c.family.as_deref().map(|f| PdeFamily::parse(f).ok_or_else(|| anyhow!("unknown PDE family `{f}`"))).transpose()?;
    let mut cfg = match (&c.config, &c.method) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(m)) => ExperimentConfig::new(m, family.unwrap_or(PdeFamily::Poisson))?,
        (None, None) => bail!("give --config or --method"),
    };
    if let Some(m) = &c.method {
        if *m != cfg.method {
            cfg.method = m.clone();
            cfg.sweep = default_sweep(m, cfg.family);
        }
    }
    if let Some(f) = family {
        cfg.family = f;
    }
    if let Some(v) = c.alpha.or(c.theta).or(c.value) {
        cfg.sweep = vec![v];
    }
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(v) = c.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = c.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = c.eval_count {
        cfg.eval_count = v;
    }
    if let Some(v) = c.eval_suite_seed {
        cfg.eval_suite_seed = v;
    }
    if let Some(o) = &c.out {
        if o.extension().is_none() {
            if c.config.is_none() || cfg.checkpoints == cfg.out.join("checkpoints") {
                cfg.checkpoints = o.join("checkpoints");
            }
            cfg.out = o.clone();
        }
    }
    cfg.validate(&StrategyRegistry::with_defaults())?;
    Ok(cfg)
}

/// Exactly one sweep value and seed for single-run commands.
fn single(cfg: &ExperimentConfig) -> Result<(f64, u64)> {
    match (cfg.sweep.as_slice(), cfg.seeds.as_slice()) {
        ([v], [s]) => Ok((*v, *s)),
        ([v], _) => Ok((*v, cfg.seeds[0])),
        _ => bail!("give one value with --alpha, --theta or --value (the config lists {} values)", cfg.sweep.len()),
    }
}

fn train(c: &Common) -> Result<()> {
    let cfg = experiment(c)?;
    let registry = StrategyRegistry::with_defaults();
    let kind = registry.kind(&cfg.method)?;
    if !kind.is_learned() {
        bail!("`{}` is not a trained method", cfg.method);
    }
    let (value, seed) = single(&cfg)?;
    let ppo = ppo_config(&cfg, kind, value)?;
    let out = c.out.clone().unwrap_or_else(|| cfg.out.join(format!("{}_{value}_s{seed}", cfg.method)));
    let env_cfg = ppo.env_config(cfg.family);
    eprintln!("{LOG_HEADER}");
    let result = train_with(
        &ppo,
        seed,
        || swarm_amr::env::RefinementEnv::new(env_cfg.clone()),
        ppo.flags.node_dim(),
        Some(&out),
        |row| eprintln!("{}", row.csv()),
    )?;
    if result.flagged {
        eprintln!("warning: some updates were skipped because of non-finite losses");
    }
    println!("{}", out.join("final.ckpt").display());
    Ok(())
}

fn strategy_for(c: &Common, cfg: &ExperimentConfig) -> Result<(Box<dyn swarm_amr::harness::MarkingStrategy>, f64, u64, usize)> {
    let registry = StrategyRegistry::with_defaults();
    let kind = registry.kind(&cfg.method)?;
    let (value, seed) = single(cfg)?;
    if kind.is_learned() && c.checkpoint.is_none() {
        bail!("missing checkpoint: `{}` needs --checkpoint", cfg.method);
    }
    let horizon = cfg.horizon_for(kind, value);
    let params = StrategyParams { value, horizon, checkpoint: c.checkpoint.clone(), ..Default::default() };
    Ok((registry.create(&cfg.method, &params)?, value, seed, horizon))
}

fn evaluate_cmd(c: &Common) -> Result<()> {
    let cfg = experiment(c)?;
    let (strategy, value, seed, horizon) = strategy_for(c, &cfg)?;
    let suite = EvalSuite::build(cfg.family, cfg.eval_suite_seed, cfg.eval_count)?;
    let records = evaluate(strategy.as_ref(), &suite, horizon, value, seed)?;
    let out = match &c.out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => p.clone(),
        _ => cfg.out.join(swarm_amr::harness::cell_file(&cfg.method, value, seed)),
    };
    write_records(&out, &records)?;
    let (elements, error) = summarize(&records);
    println!("{} {value}: {} problems, mean elements {elements:.1}, mean squared error {error:.6e} -> {}", cfg.method, records.len(), out.display());
    Ok(())
}

fn sweep_cmd(c: &Common) -> Result<()> {
    let cfg = experiment(c)?;
    if cfg.profile.is_long_running() {
        eprintln!("note: the full profile trains {} policies of {} iterations each", cfg.sweep.len() * cfg.seeds.len(), cfg.iterations);
    }
    let records = run_sweep(&cfg, &StrategyRegistry::with_defaults(), &|m| eprintln!("{m}"))?;
    println!("{} records -> {}", records.len(), cfg.out.display());
    Ok(())
}

fn collect_csvs(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        entries.sort();
        for p in entries {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if p.is_file() && name.ends_with(".csv") && !name.ends_with(".walltime.csv") {
                out.push(p);
            }
        }
        Ok(())
    } else if path.is_file() {
        out.push(path.to_path_buf());
        Ok(())
    } else {
        Err(anyhow!("{} does not exist", path.display()))
    }
}

fn aggregate_cmd(a: &AggregateArgs) -> Result<()> {
    let mut files = Vec::new();
    for p in &a.inputs {
        collect_csvs(p, &mut files)?;
    }
    let mut records = Vec::new();
    for f in &files {
        if f.to_string_lossy().ends_with(".walltime.csv") {
            continue;
        }
        let text = fs::read_to_string(f)?;
        // skip other CSVs (training logs, earlier aggregates) found in directories
        match read_records(&text) {
            Ok(r) => records.extend(r),
            Err(e) if a.inputs.contains(f) => return Err(e).with_context(|| f.display().to_string()),
            Err(_) => {}
        }
    }
    if records.is_empty() {
        bail!("no evaluation records found");
    }
    // combined per-method files repeat the per-cell rows
    records.sort_by(|x, y| {
        (x.method.as_str(), x.sweep_value.to_bits(), x.seed, x.problem_id).cmp(&(y.method.as_str(), y.sweep_value.to_bits(), y.seed, y.problem_id))
    });
    records.dedup_by(|x, y| x.method == y.method && x.sweep_value == y.sweep_value && x.seed == y.seed && x.problem_id == y.problem_id);
    let points = scatter(&records);
    let fits = fit_methods(&points);
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("scatter.csv"), scatter_csv(&points))?;
    fs::write(a.out.join("fits.csv"), fits_csv(&fits))?;
    print!("{}", fits_csv(&fits));
    Ok(())
}

fn render_cmd(r: &RenderArgs) -> Result<()> {
    let cfg = experiment(&r.common)?;
    let field = RenderField::parse(&r.field).ok_or_else(|| anyhow!("--field must be `solution` or `error`"))?;
    let (strategy, value, seed, horizon) = strategy_for(&r.common, &cfg)?;
    if r.problem >= cfg.eval_count {
        bail!("--problem {} is outside the suite of {} problems", r.problem, cfg.eval_count);
    }
    let suite = EvalSuite::build(cfg.family, cfg.eval_suite_seed, r.problem + 1)?;
    let ep = run_episode(strategy.as_ref(), &suite, r.problem, horizon, value, seed)?;
    let out = match &r.common.out {
        Some(p) if p.extension().is_some_and(|e| e == "svg") => p.clone(),
        _ => cfg.out.join(format!("{}_{value}_p{}_{}.svg", cfg.method, r.problem, r.field)),
    };
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(&out, render_state(&ep.state, field, r.size))?;
    println!("{} elements, squared error {:.6e} -> {}", ep.record.final_elements, ep.record.squared_error, out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_workers().with_context(|| format!("reading {WORKERS_ENV}"))?;
    match &cli.command {
        Command::Train(c) => train(c),
        Command::Evaluate(c) => evaluate_cmd(c),
        Command::Sweep(c) => sweep_cmd(c),
        Command::Aggregate(a) => aggregate_cmd(a),
        Command::Render(r) => render_cmd(r),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
