mod config;
mod train;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fuzzy_bridge::cart::fuzzy_tree_to_tsk;
use fuzzy_bridge::data::{generate, load_csv, save_csv, split, DataSpec, Generator};
use fuzzy_bridge::model::AnyModel;
use fuzzy_bridge::moe::{moe_to_tsk, tsk_to_moe};
use fuzzy_bridge::rbfn::{generalized_tsk_rbfn, rbfn_to_tsk, tsk_to_rbfn};
use fuzzy_bridge::verify::{self, Suite};
use fuzzy_bridge::{mse, Error, Result, TskModel};
use serde_json::json;

use crate::config::Config;

const SEED_ENV: &str = "FUZZY_BRIDGE_SEED";

#[derive(Parser)]
#[command(
    name = "fuzzy-bridge",
    version,
    about = "TSK fuzzy systems and their equivalent model families"
)]
struct Cli {
    /// Random seed; falls back to the config file, then $FUZZY_BRIDGE_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// key=value file supplying defaults for any long flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

impl std::str::FromStr for Format {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        <Self as ValueEnum>::from_str(s, false).map_err(|_| ())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV.
    Gen(GenArgs),
    /// Fit a model and write it with its metrics.
    Train(TrainArgs),
    /// Predict every row of a dataset.
    Predict(PredictArgs),
    /// Report the MSE of a model on a dataset.
    Eval(PredictArgs),
    /// Convert between equivalent representations.
    Convert(ConvertArgs),
    /// Run randomized equivalence, gradient or oracle checks.
    Verify(VerifyArgs),
    /// Print a model's rules, one per line.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    generator: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    noise_sd: Option<f64>,
    /// Per-feature ranges as lo:hi,lo:hi.
    #[arg(long)]
    ranges: Option<String>,
    /// uniform or grid.
    #[arg(long)]
    layout: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a held-out split here.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// anfis, moe, cart, fuzzy-cart, stack, nozaki or local-rules.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Optional held-out set for test_mse.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to <out>.metrics.json.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Defaults to <out>.history.jsonl for iterative methods.
    #[arg(long)]
    history: Option<PathBuf>,
    /// grid or cluster (anfis).
    #[arg(long)]
    init: Option<String>,
    /// Membership functions per input (anfis grid, nozaki, local-rules).
    #[arg(long)]
    mfs: Option<usize>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    ridge_jitter: Option<f64>,
    /// competitive, coupled or hybrid (moe).
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    experts: Option<usize>,
    #[arg(long)]
    max_leaves: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    /// Fixed sigmoid steepness for every split (fuzzy-cart).
    #[arg(long)]
    steepness: Option<f64>,
    /// Steepness is scale / gap to the nearest threshold (fuzzy-cart).
    #[arg(long)]
    steepness_scale: Option<f64>,
    #[arg(long)]
    bases: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
    /// constant or adaptive (stack).
    #[arg(long)]
    combiner: Option<String>,
    /// Sharpening exponent (nozaki).
    #[arg(long)]
    nozaki_alpha: Option<f64>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    /// tsk, rbfn, moe or fuzzy-cart.
    #[arg(long)]
    from: Option<String>,
    /// tsk, rbfn or moe.
    #[arg(long)]
    to: Option<String>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Target the generalized RBFN (per-feature spreads, partial units, affine outputs).
    #[arg(long)]
    generalized: bool,
    /// Give fuzzy-cart leaves zero-slope affine consequents.
    #[arg(long)]
    affine: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// equivalence, gradients or oracles.
    #[arg(long)]
    suite: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Check this model against its equivalent forms instead of random fixtures.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: Option<PathBuf>,
}

/// A command failure with its exit status.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InvalidArgument(_) => 2,
            Error::Input(_)
            | Error::DimensionMismatch { .. }
            | Error::InvalidModel(_)
            | Error::Data(_)
            | Error::Io(_)
            | Error::Json(_) => 3,
            Error::Constraint(_)
            | Error::UnsupportedMembership(_)
            | Error::DegenerateRules { .. }
            | Error::Numerical(_) => 4,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

struct Ctx {
    cfg: Config,
    seed: u64,
    format: Format,
}

impl Ctx {
    fn emit(&self, text: &str, value: serde_json::Value) -> Result<()> {
        let body = match self.format {
            Format::Text => text.to_string(),
            Format::Json => serde_json::to_string_pretty(&value)?,
        };
        // A closed pipe (e.g. `| head`) is not an error worth reporting.
        let _ = writeln!(std::io::stdout().lock(), "{body}");
        Ok(())
    }
}

fn run(cli: Cli) -> std::result::Result<u8, Failure> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| {
            Error::InvalidArgument(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))
        })?),
        Err(_) => None,
    };
    let seed = cfg.pick(cli.seed, "seed")?.or(env_seed).unwrap_or(0);
    let format = cfg.get(cli.format, "format", Format::Text)?;
    let ctx = Ctx { cfg, seed, format };
    match cli.command {
        Command::Gen(a) => gen(&ctx, a).map(|_| 0).map_err(Into::into),
        Command::Train(a) => train_cmd(&ctx, a).map(|_| 0).map_err(Into::into),
        Command::Predict(a) => predict(&ctx, a).map(|_| 0).map_err(Into::into),
        Command::Eval(a) => eval(&ctx, a).map(|_| 0).map_err(Into::into),
        Command::Convert(a) => convert(&ctx, a).map(|_| 0).map_err(Into::into),
        Command::Verify(a) => verify_cmd(&ctx, a),
        Command::Inspect(a) => inspect(&ctx, a).map(|_| 0).map_err(Into::into),
    }
}

fn gen(ctx: &Ctx, a: GenArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let generator: Generator = cfg.require(a.generator, "generator")?.parse()?;
    let mut spec = DataSpec::new(generator, cfg.get(a.n, "n", 100)?, ctx.seed);
    spec.noise_sd = cfg.get(a.noise_sd, "noise-sd", 0.0)?;
    if let Some(r) = cfg.pick(a.ranges, "ranges")? {
        spec.set("ranges", &r)?;
    }
    if let Some(l) = cfg.pick(a.layout, "layout")? {
        spec.set("layout", &l)?;
    }
    let out: PathBuf = cfg.require(a.out, "out")?;
    let data = generate(&spec)?;
    let test_path: Option<PathBuf> = cfg.pick(a.test, "test")?;
    let (train, test) = match &test_path {
        Some(_) => {
            let (tr, te) = split(
                &data,
                cfg.get(a.test_fraction, "test-fraction", 0.2)?,
                ctx.seed,
            )?;
            (tr, Some(te))
        }
        None => (data, None),
    };
    save_csv(&train, &out)?;
    if let (Some(p), Some(te)) = (&test_path, &test) {
        save_csv(te, p)?;
    }
    ctx.emit(
        &format!(
            "wrote {} rows ({} features) to {}",
            train.len(),
            train.dim(),
            out.display()
        ),
        json!({
            "out": out,
            "rows": train.len(),
            "dim": train.dim(),
            "test": test_path,
            "test_rows": test.as_ref().map(|t| t.len()),
        }),
    )
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn train_cmd(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let method: String = cfg.require(a.method.clone(), "method")?;
    train::check_method(&method)?;
    let data_path: PathBuf = cfg.require(a.data.clone(), "data")?;
    let out: PathBuf = cfg.require(a.out.clone(), "out")?;
    let data = load_csv(&data_path)?;
    let test = cfg
        .pick(a.test.clone(), "test")?
        .map(load_csv)
        .transpose()?;
    let trained = train::train(&method, &a, cfg, &data, ctx.seed)?;
    let metrics = train::metrics(&method, &trained, &data, test.as_ref(), ctx.seed)?;

    std::fs::write(&out, trained.model.to_json()?)?;
    let metrics_path = cfg.get(a.metrics.clone(), "metrics", sibling(&out, "metrics.json"))?;
    std::fs::write(
        &metrics_path,
        serde_json::to_string_pretty(&metrics)? + "\n",
    )?;
    let mut history_path = None;
    if let Some(h) = &trained.history {
        let p = cfg.get(a.history.clone(), "history", sibling(&out, "history.jsonl"))?;
        std::fs::write(&p, h.to_jsonl()?)?;
        history_path = Some(p);
    }
    let text = format!(
        "trained {method} ({}) -> {}; train_mse {:e}",
        trained.model.kind(),
        out.display(),
        metrics["train_mse"].as_f64().unwrap_or(f64::NAN)
    );
    ctx.emit(
        &text,
        json!({"model": out, "metrics": metrics_path, "history": history_path, "summary": metrics}),
    )
}

fn load_pair(ctx: &Ctx, a: &PredictArgs) -> Result<(AnyModel, fuzzy_bridge::Dataset)> {
    let model = AnyModel::load(ctx.cfg.require::<PathBuf>(a.model.clone(), "model")?)?;
    let data = load_csv(ctx.cfg.require::<PathBuf>(a.data.clone(), "data")?)?;
    Ok((model, data))
}

fn predict(ctx: &Ctx, a: PredictArgs) -> Result<()> {
    let (model, data) = load_pair(ctx, &a)?;
    let pred = model.batch_predict(&data)?;
    if let Some(out) = ctx.cfg.pick::<PathBuf>(a.out, "out")? {
        let mut text = String::from("prediction\n");
        for p in &pred {
            text.push_str(&format!("{p}\n"));
        }
        std::fs::write(out, text)?;
        return Ok(());
    }
    let lines: Vec<String> = pred.iter().map(|p| p.to_string()).collect();
    ctx.emit(&lines.join("\n"), json!(pred))
}

fn eval(ctx: &Ctx, a: PredictArgs) -> Result<()> {
    let (model, data) = load_pair(ctx, &a)?;
    let err = mse(&model.batch_predict(&data)?, data.targets())?;
    let value =
        json!({"model_kind": model.kind(), "n": data.len(), "mse": err, "rmse": err.sqrt()});
    if let Some(out) = ctx.cfg.pick::<PathBuf>(a.out, "out")? {
        std::fs::write(out, serde_json::to_string_pretty(&value)? + "\n")?;
    }
    ctx.emit(
        &format!("n {} mse {:e} rmse {:e}", data.len(), err, err.sqrt()),
        value,
    )
}

fn convert(ctx: &Ctx, a: ConvertArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let from: String = cfg.require(a.from, "from")?;
    let to: String = cfg.require(a.to, "to")?;
    let out: PathBuf = cfg.require(a.out, "out")?;
    if !["tsk", "rbfn", "moe", "fuzzy-cart"].contains(&from.as_str()) {
        return Err(Error::InvalidArgument(format!(
            "--from must be tsk, rbfn, moe or fuzzy-cart, got {from:?}"
        )));
    }
    let model = AnyModel::load(cfg.require::<PathBuf>(a.model, "model")?)?;
    if model.kind() != from {
        return Err(Error::InvalidArgument(format!(
            "model file holds a {} model, not {from}",
            model.kind()
        )));
    }
    let tsk: TskModel = match model {
        AnyModel::Tsk(m) => m,
        AnyModel::Rbfn(n) => rbfn_to_tsk(&n)?,
        AnyModel::Moe(m) => moe_to_tsk(&m)?,
        AnyModel::FuzzyTree(t) => fuzzy_tree_to_tsk(&t, cfg.flag(a.affine, "affine")?)?,
        _ => unreachable!("kind checked above"),
    };
    let converted = match to.as_str() {
        "tsk" => AnyModel::Tsk(tsk),
        "rbfn" if cfg.flag(a.generalized, "generalized")? => {
            AnyModel::Rbfn(generalized_tsk_rbfn(&tsk)?)
        }
        "rbfn" => AnyModel::Rbfn(tsk_to_rbfn(&tsk)?),
        "moe" => AnyModel::Moe(tsk_to_moe(&tsk)?),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "--to must be tsk, rbfn or moe, got {to:?}"
            )))
        }
    };
    std::fs::write(&out, converted.to_json()?)?;
    ctx.emit(
        &format!("converted {from} -> {to}: {}", out.display()),
        json!({"from": from, "to": to, "out": out}),
    )
}

fn verify_cmd(ctx: &Ctx, a: VerifyArgs) -> std::result::Result<u8, Failure> {
    let cfg = &ctx.cfg;
    let tol = cfg.pick(a.tol, "tol")?;
    let report = match cfg.pick::<PathBuf>(a.model, "model")? {
        Some(p) => verify::run_on_model(&AnyModel::load(p)?, tol, ctx.seed)?,
        None => {
            let suite: Suite = cfg
                .get(a.suite, "suite", "equivalence".to_string())?
                .parse()?;
            verify::run(suite, cfg.get(a.trials, "trials", 20)?, tol, ctx.seed)?
        }
    };
    if let Some(out) = cfg.pick::<PathBuf>(a.out, "out")? {
        std::fs::write(
            out,
            serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n",
        )
        .map_err(Error::from)?;
    }
    ctx.emit(
        &report.to_string(),
        serde_json::to_value(&report).map_err(Error::from)?,
    )?;
    Ok(if report.passed { 0 } else { 4 })
}

fn inspect(ctx: &Ctx, a: InspectArgs) -> Result<()> {
    let model = AnyModel::load(ctx.cfg.require::<PathBuf>(a.model, "model")?)?;
    let lines = model.describe();
    ctx.emit(
        &lines.join("\n"),
        json!({"kind": model.kind(), "rules": lines}),
    )
}
