//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pullback_core::datagen::{self, TargetDensity, DEFAULT_STEPS, DEFAULT_STEP_SIZE};
use pullback_core::eval::{self, EvalConfig, EvalReport, TableCell, TableDataset};
use pullback_core::rae::{AxisOrder, Rae};
use pullback_core::training::{self, describe, EpochRecord};
use pullback_core::{DiagonalQuadratic, Diffeomorphism, Model, PullbackManifold, Tensor, TrainConfig, Variant};

use crate::config::{resolve, TrainConfigFile};
use crate::error::{Error, Result};
use crate::io::{
    fmt_f64, format_point, load_dataset, output_path, parse_point, read_points, save_dataset, write_csv,
    DATASET_SCHEMA,
};
use crate::model_file::{load_model, save_model, ModelMeta};
use crate::report::{save_report, EVAL_SCHEMA};

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\nschemas: pullback-flow/1, pullback-dataset/1, pullback-eval/1"
);

#[derive(Parser, Debug)]
#[command(
    name = "pullback",
    version = VERSION,
    about = "Learn score-based pullback geometry from data",
    after_help = "Relative output paths are resolved against $PULLBACK_OUT_DIR when it is set."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a named synthetic dataset.
    Gen(GenArgs),
    /// Train a flow on a dataset CSV.
    Train(TrainArgs),
    /// Geodesic curve between two points.
    Geodesic(GeodesicArgs),
    /// Logarithmic map log_x(y).
    Logmap(PairArgs),
    /// Exponential map exp_x(v).
    Expmap(ExpArgs),
    /// Geodesic distance between two points.
    Distance(PairArgs),
    /// Riemannian barycentre of a point set.
    Barycentre(BarycentreArgs),
    /// Intrinsic dimension from the learned variances.
    RaeDim(RaeDimArgs),
    /// Reconstruction error as axes are added one at a time.
    RaeCurve(RaeCurveArgs),
    /// Decoded grid over the retained latent axes.
    RaeMesh(RaeMeshArgs),
    /// Geodesic and variation errors of a model against a ground truth.
    Eval(EvalArgs),
    /// Train and evaluate every dataset/variant/seed combination.
    Table(TableArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Proposals per Langevin chain.
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_STEP_SIZE)]
    pub step_size: f64,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Fraction of rows held out for evaluation.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub variant: Option<String>,
    /// TOML file overriding the dataset preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset name; defaults to the dataset's recorded name.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct SourceArgs {
    /// Trained model file.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Ground-truth manifold: banana, squeezed_banana or river.
    #[arg(long)]
    pub gt: Option<String>,
}

#[derive(Args, Debug)]
pub struct GeodesicArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub from: String,
    #[arg(long, allow_hyphen_values = true)]
    pub to: String,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Defaults to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PairArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub from: String,
    #[arg(long, allow_hyphen_values = true)]
    pub to: String,
}

#[derive(Args, Debug)]
pub struct ExpArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub at: String,
    /// Tangent vector.
    #[arg(long, allow_hyphen_values = true)]
    pub v: String,
}

#[derive(Args, Debug)]
pub struct BarycentreArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Point CSV with header x1,…,xd.
    #[arg(long, conflicts_with = "point")]
    pub points: Option<PathBuf>,
    /// Repeatable inline point.
    #[arg(long, allow_hyphen_values = true)]
    pub point: Vec<String>,
}

#[derive(Args, Debug)]
pub struct RaeDimArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
}

#[derive(Args, Debug)]
pub struct RaeCurveArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// decreasing, increasing or random.
    #[arg(long, default_value = "decreasing")]
    pub order: String,
    /// Seed of the random order.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RaeMeshArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Grid points per latent axis.
    #[arg(long, default_value_t = 20)]
    pub m: usize,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalSettingArgs {
    #[arg(long, default_value_t = 100)]
    pub pairs: usize,
    /// Points per geodesic.
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Endpoint perturbation as a multiple of the coordinate standard deviation.
    #[arg(long, default_value_t = 0.05)]
    pub perturbation: f64,
    /// Seed of pair sampling and perturbations.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Ground truth: banana, squeezed_banana or river.
    #[arg(long)]
    pub gt: String,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub eval: EvalSettingArgs,
    /// Report path; a CSV mirror is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Learned and ground-truth geodesics of every pair, for plotting.
    #[arg(long)]
    pub curves: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TableArgs {
    #[arg(long, value_delimiter = ',', default_value = "banana,squeezed_banana,river")]
    pub datasets: Vec<String>,
    /// Variant names or "all".
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub seeds: Vec<u64>,
    /// Samples per dataset.
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub mcmc_steps: usize,
    #[arg(long, default_value_t = DEFAULT_STEP_SIZE)]
    pub step_size: f64,
    /// TOML overrides applied on top of every preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub flow_steps: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[command(flatten)]
    pub eval: EvalSettingArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Errors are reported on stderr as
/// `error[<category>]: <message>`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let first = e.to_string();
            let line = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {line}");
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            e.exit_code()
        }
    }
}

fn show(command: &str, entries: &[(&str, String)]) {
    eprintln!("[{command}]");
    for (k, v) in entries {
        eprintln!("{k} = {v}");
    }
}

fn show_train(config: &TrainConfig) {
    for line in describe(config).lines() {
        eprintln!("{line}");
    }
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or("-".into(), |p| p.display().to_string())
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train(a),
        Command::Geodesic(a) => geodesic(a),
        Command::Logmap(a) => logmap(a),
        Command::Expmap(a) => expmap(a),
        Command::Distance(a) => distance(a),
        Command::Barycentre(a) => barycentre(a),
        Command::RaeDim(a) => rae_dim(a),
        Command::RaeCurve(a) => rae_curve(a),
        Command::RaeMesh(a) => rae_mesh(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Table(a) => table(a),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let out = output_path(&a.out)?;
    show(
        "gen",
        &[
            ("dataset", a.dataset.clone()),
            ("n", a.n.to_string()),
            ("seed", a.seed.to_string()),
            ("steps", a.steps.to_string()),
            ("step_size", a.step_size.to_string()),
            ("out", out.display().to_string()),
            ("schema", DATASET_SCHEMA.into()),
        ],
    );
    let ds = datagen::generate(&a.dataset, a.n, a.seed, a.steps, a.step_size)?;
    save_dataset(&out, &ds)
}

fn split(data: &Tensor, s: &SplitArgs) -> Result<(Tensor, Tensor)> {
    if s.test_fraction == 0.0 {
        return Ok((data.clone(), Tensor::matrix(0, data.cols(), Vec::new())?));
    }
    Ok(eval::train_test_split(data, s.test_fraction, s.split_seed)?)
}

fn train(a: TrainArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let file = a.config.as_deref().map(TrainConfigFile::load).transpose()?;
    let name = a
        .dataset
        .clone()
        .or_else(|| file.as_ref().and_then(|f| f.dataset.clone()))
        .unwrap_or_else(|| ds.name.clone());
    let mut config = resolve(Some(&name), file.as_ref())?;
    if let Some(v) = &a.variant {
        config.variant = Variant::parse(v)?;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    config.validate()?;
    let out = output_path(&a.out)?;
    let history = a.history.as_deref().map(output_path).transpose()?;
    show(
        "train",
        &[
            ("data", a.data.display().to_string()),
            ("dataset", name.clone()),
            ("test_fraction", a.split.test_fraction.to_string()),
            ("split_seed", a.split.split_seed.to_string()),
            ("out", out.display().to_string()),
            ("history", opt_path(&history)),
        ],
    );
    show_train(&config);

    let (train_data, _) = split(&ds.samples, &a.split)?;
    let mut model = Model::new(config.flow_config(ds.dim()), config.seed)?;
    let outcome = training::train_with(&mut model, &train_data, &config, |r| {
        if r.epoch % 10 == 0 || r.epoch + 1 == config.epochs {
            eprintln!(
                "epoch {:>5}  nll {:.6}  vol {:.6}  iso {:.6}  total {:.6}",
                r.epoch, r.nll, r.vol, r.iso, r.total
            );
        }
    })?;
    let meta = ModelMeta {
        dataset: Some(name.clone()),
        train_config: Some(TrainConfigFile::from_config(&config, Some(&name))),
    };
    save_model(&out, &model, &meta)?;
    if let Some(h) = history {
        write_history(&h, &outcome.history)?;
    }
    Ok(())
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let header: Vec<String> = ["epoch", "nll", "vol", "iso", "total", "lr"].map(String::from).into();
    let rows = history.iter().map(|r| {
        let mut row = vec![r.epoch.to_string()];
        row.extend([r.nll, r.vol, r.iso, r.total, r.lr].map(fmt_f64));
        row
    });
    write_csv(path, &header, rows)
}

enum Source {
    Model(Box<Model>),
    Truth(TargetDensity),
}

impl Source {
    fn load(s: &SourceArgs) -> Result<Self> {
        match (&s.model, &s.gt) {
            (Some(p), _) => Ok(Source::Model(Box::new(load_model(p)?.0))),
            (None, Some(name)) => datagen::target_by_name(name)
                .map(Source::Truth)
                .ok_or_else(|| Error::usage(format!("unknown ground truth {name:?}"))),
            (None, None) => Err(Error::usage("one of --model or --gt is required")),
        }
    }

    fn describe(s: &SourceArgs) -> (&'static str, String) {
        match (&s.model, &s.gt) {
            (Some(p), _) => ("model", p.display().to_string()),
            (None, Some(g)) => ("gt", g.clone()),
            _ => ("model", "-".into()),
        }
    }

    fn manifold(&self) -> Result<PullbackManifold<&dyn Diffeomorphism, DiagonalQuadratic>> {
        Ok(match self {
            Source::Model(m) => PullbackManifold::new(m.flow() as &dyn Diffeomorphism, m.potential()?)?,
            Source::Truth(t) => PullbackManifold::new(&t.diffeo as &dyn Diffeomorphism, t.potential.clone())?,
        })
    }
}

fn point(s: &str, dim: usize) -> Result<Vec<f64>> {
    let p = parse_point(s)?;
    if p.len() != dim {
        return Err(pullback_core::Error::DimensionMismatch {
            expected: dim,
            found: p.len(),
        }
        .into());
    }
    Ok(p)
}

fn geodesic(a: GeodesicArgs) -> Result<()> {
    let out = a.out.as_deref().map(output_path).transpose()?;
    let src = Source::describe(&a.source);
    show(
        "geodesic",
        &[
            (src.0, src.1),
            ("from", a.from.clone()),
            ("to", a.to.clone()),
            ("steps", a.steps.to_string()),
            ("out", opt_path(&out)),
        ],
    );
    let source = Source::load(&a.source)?;
    let m = source.manifold()?;
    let (x, y) = (point(&a.from, m.dim())?, point(&a.to, m.dim())?);
    let curve = m.geodesic_curve(&x, &y, a.steps)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=m.dim()).map(|i| format!("x_{i}")));
    let rows = (0..a.steps).map(|k| {
        let t = k as f64 / (a.steps - 1) as f64;
        let mut row = vec![fmt_f64(t)];
        row.extend(curve.row_slice(k).iter().map(|&v| fmt_f64(v)));
        row
    });
    match out {
        Some(p) => write_csv(&p, &header, rows),
        None => {
            println!("{}", header.join(","));
            for row in rows {
                println!("{}", row.join(","));
            }
            Ok(())
        }
    }
}

fn logmap(a: PairArgs) -> Result<()> {
    let src = Source::describe(&a.source);
    show("logmap", &[(src.0, src.1), ("from", a.from.clone()), ("to", a.to.clone())]);
    let source = Source::load(&a.source)?;
    let m = source.manifold()?;
    let v = m.log_map_quadratic(&point(&a.from, m.dim())?, &point(&a.to, m.dim())?)?;
    println!("{}", format_point(&v));
    Ok(())
}

fn expmap(a: ExpArgs) -> Result<()> {
    let src = Source::describe(&a.source);
    show("expmap", &[(src.0, src.1), ("at", a.at.clone()), ("v", a.v.clone())]);
    let source = Source::load(&a.source)?;
    let m = source.manifold()?;
    let y = m.exp_map_quadratic(&point(&a.at, m.dim())?, &point(&a.v, m.dim())?)?;
    println!("{}", format_point(&y));
    Ok(())
}

fn distance(a: PairArgs) -> Result<()> {
    let src = Source::describe(&a.source);
    show("distance", &[(src.0, src.1), ("from", a.from.clone()), ("to", a.to.clone())]);
    let source = Source::load(&a.source)?;
    let m = source.manifold()?;
    let d = m.distance_quadratic(&point(&a.from, m.dim())?, &point(&a.to, m.dim())?)?;
    println!("{}", fmt_f64(d));
    Ok(())
}

fn barycentre(a: BarycentreArgs) -> Result<()> {
    let src = Source::describe(&a.source);
    show(
        "barycentre",
        &[
            (src.0, src.1),
            ("points", opt_path(&a.points)),
            ("point", a.point.join(" ")),
        ],
    );
    let source = Source::load(&a.source)?;
    let m = source.manifold()?;
    let points: Vec<Vec<f64>> = match &a.points {
        Some(p) => {
            let t = read_points(p)?;
            if t.cols() != m.dim() {
                return Err(pullback_core::Error::DimensionMismatch {
                    expected: m.dim(),
                    found: t.cols(),
                }
                .into());
            }
            (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
        }
        None => a.point.iter().map(|s| point(s, m.dim())).collect::<Result<_>>()?,
    };
    let b = m.barycentre_quadratic(&points)?;
    println!("{}", format_point(&b));
    Ok(())
}

fn rae_for(model: &Model, epsilon: f64) -> Result<Rae<&pullback_core::Flow>> {
    Ok(Rae::new(model.manifold()?, epsilon)?)
}

fn rae_dim(a: RaeDimArgs) -> Result<()> {
    show(
        "rae-dim",
        &[("model", a.model.display().to_string()), ("epsilon", a.epsilon.to_string())],
    );
    let (model, _) = load_model(&a.model)?;
    let rae = rae_for(&model, a.epsilon)?;
    println!("latent_dim = {}", rae.latent_dim());
    println!("variances = {}", format_point(&model.variances()));
    let axes: Vec<String> = rae.retained_axes().iter().map(|i| (i + 1).to_string()).collect();
    println!("retained_axes = {}", axes.join(","));
    Ok(())
}

fn parse_order(name: &str, seed: u64) -> Result<AxisOrder> {
    match name {
        "decreasing" => Ok(AxisOrder::Decreasing),
        "increasing" => Ok(AxisOrder::Increasing),
        "random" => Ok(AxisOrder::Random(seed)),
        other => Err(Error::usage(format!(
            "unknown order {other:?} (expected decreasing, increasing or random)"
        ))),
    }
}

fn rae_curve(a: RaeCurveArgs) -> Result<()> {
    let out = a.out.as_deref().map(output_path).transpose()?;
    let order = parse_order(&a.order, a.seed)?;
    show(
        "rae-curve",
        &[
            ("model", a.model.display().to_string()),
            ("data", a.data.display().to_string()),
            ("order", a.order.clone()),
            ("seed", a.seed.to_string()),
            ("epsilon", a.epsilon.to_string()),
            ("out", opt_path(&out)),
        ],
    );
    let (model, _) = load_model(&a.model)?;
    let data = load_dataset(&a.data)?.samples;
    let curve = rae_for(&model, a.epsilon)?.reconstruction_curve(&data, order)?;
    let header: Vec<String> = ["k", "mean_error", "order", "seed"].map(String::from).into();
    let seed = order.seed().map_or(String::new(), |s| s.to_string());
    let rows = curve
        .iter()
        .map(|p| vec![p.k.to_string(), fmt_f64(p.mean_error), order.name().to_string(), seed.clone()]);
    emit(out.as_deref(), &header, rows)
}

fn emit(out: Option<&Path>, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    match out {
        Some(p) => write_csv(p, header, rows),
        None => {
            println!("{}", header.join(","));
            for row in rows {
                println!("{}", row.join(","));
            }
            Ok(())
        }
    }
}

fn rae_mesh(a: RaeMeshArgs) -> Result<()> {
    let out = a.out.as_deref().map(output_path).transpose()?;
    show(
        "rae-mesh",
        &[
            ("model", a.model.display().to_string()),
            ("m", a.m.to_string()),
            ("epsilon", a.epsilon.to_string()),
            ("out", opt_path(&out)),
        ],
    );
    let (model, _) = load_model(&a.model)?;
    let (z, x) = rae_for(&model, a.epsilon)?.manifold_mesh(a.m)?;
    let mut header: Vec<String> = (1..=z.cols()).map(|i| format!("z_{i}")).collect();
    header.extend((1..=x.cols()).map(|i| format!("x_{i}")));
    let rows = (0..z.rows()).map(|r| {
        z.row_slice(r)
            .iter()
            .chain(x.row_slice(r))
            .map(|&v| fmt_f64(v))
            .collect()
    });
    emit(out.as_deref(), &header, rows)
}

fn eval_config(e: &EvalSettingArgs, test_fraction: f64, split_seed: u64) -> EvalConfig {
    EvalConfig {
        pairs: e.pairs,
        steps: e.steps,
        perturbation: e.perturbation,
        test_fraction,
        seed: split_seed,
    }
}

fn show_eval(c: &EvalConfig, pair_seed: u64) -> Vec<(&'static str, String)> {
    vec![
        ("pairs", c.pairs.to_string()),
        ("steps", c.steps.to_string()),
        ("perturbation", c.perturbation.to_string()),
        ("test_fraction", c.test_fraction.to_string()),
        ("split_seed", c.seed.to_string()),
        ("seed", pair_seed.to_string()),
    ]
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let out = a.out.as_deref().map(output_path).transpose()?;
    let curves = a.curves.as_deref().map(output_path).transpose()?;
    let cfg = eval_config(&a.eval, a.split.test_fraction, a.split.split_seed);
    let mut entries = vec![
        ("model", a.model.display().to_string()),
        ("gt", a.gt.clone()),
        ("data", a.data.display().to_string()),
        ("out", opt_path(&out)),
        ("curves", opt_path(&curves)),
        ("schema", EVAL_SCHEMA.to_string()),
    ];
    entries.extend(show_eval(&cfg, a.eval.seed));
    show("eval", &entries);

    let (model, meta) = load_model(&a.model)?;
    let truth = datagen::target_by_name(&a.gt)
        .ok_or_else(|| Error::usage(format!("unknown ground truth {:?}", a.gt)))?
        .manifold();
    let data = load_dataset(&a.data)?.samples;
    if data.cols() != model.dim() {
        return Err(pullback_core::Error::DimensionMismatch {
            expected: model.dim(),
            found: data.cols(),
        }
        .into());
    }
    let (train_data, test_data) = split(&data, &a.split)?;
    let pair_cfg = EvalConfig {
        seed: a.eval.seed,
        ..cfg.clone()
    };
    let stats = eval::evaluate_model(&model, &truth, &train_data, &test_data, &pair_cfg)?;
    println!("geodesic_error = {} ± {}", fmt_f64(stats.0.mean), fmt_f64(stats.0.std));
    println!("variation_error = {} ± {}", fmt_f64(stats.1.mean), fmt_f64(stats.1.std));
    let variant = meta
        .train_config
        .as_ref()
        .and_then(|f| f.variant.clone())
        .unwrap_or_else(|| "model".into());
    if let Some(path) = curves {
        let pairs = eval::sample_pairs(&test_data, pair_cfg.pairs, pair_cfg.seed)?;
        write_curves(&path, &model.manifold()?, &truth, &pairs, pair_cfg.steps, &variant)?;
    }
    if let Some(out) = out {
        let config = meta
            .train_config
            .as_ref()
            .map(|f| f.apply(TrainConfig::default()))
            .transpose()?
            .unwrap_or_default();
        let report = EvalReport {
            config: pair_cfg,
            cells: vec![TableCell {
                dataset: meta.dataset.unwrap_or_else(|| a.gt.clone()),
                variant: config.variant,
                seed: config.seed,
                config,
                outcome: Ok(stats),
            }],
        };
        save_report(&out, &report, None)?;
    }
    Ok(())
}

/// Rows `pair,t,x_1..x_d,variant` for the learned and true geodesic of each
/// pair. Pairs whose curve cannot be computed are skipped.
fn write_curves<A: Diffeomorphism, B: Diffeomorphism>(
    path: &Path,
    learned: &PullbackManifold<A, DiagonalQuadratic>,
    truth: &PullbackManifold<B, DiagonalQuadratic>,
    pairs: &[eval::Pair],
    steps: usize,
    variant: &str,
) -> Result<()> {
    let d = learned.dim();
    let mut header = vec!["pair".to_string(), "t".to_string()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    header.push("variant".into());
    let mut rows = Vec::new();
    for (k, (x, y)) in pairs.iter().enumerate() {
        let (Ok(a), Ok(b)) = (learned.geodesic_curve(x, y, steps), truth.geodesic_curve(x, y, steps)) else {
            continue;
        };
        for (curve, name) in [(&a, variant), (&b, "ground_truth")] {
            for s in 0..steps {
                let mut row = vec![k.to_string(), fmt_f64(s as f64 / (steps - 1) as f64)];
                row.extend(curve.row_slice(s).iter().map(|&v| fmt_f64(v)));
                row.push(name.to_string());
                rows.push(row);
            }
        }
    }
    write_csv(path, &header, rows)
}

fn table(a: TableArgs) -> Result<()> {
    let out = output_path(&a.out)?;
    let variants: Vec<Variant> = if a.variants.iter().any(|v| v == "all") {
        Variant::ALL.to_vec()
    } else {
        a.variants.iter().map(|v| Variant::parse(v)).collect::<pullback_core::Result<_>>()?
    };
    let file = a.config.as_deref().map(TrainConfigFile::load).transpose()?;
    let eval_cfg = EvalConfig {
        seed: a.eval.seed,
        ..eval_config(&a.eval, a.test_fraction, a.eval.seed)
    };
    let mut entries = vec![
        ("datasets", a.datasets.join(",")),
        ("variants", variants.iter().map(|v| v.name()).collect::<Vec<_>>().join(",")),
        ("seeds", a.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")),
        ("n", a.n.to_string()),
        ("data_seed", a.data_seed.to_string()),
        ("mcmc_steps", a.mcmc_steps.to_string()),
        ("step_size", a.step_size.to_string()),
        ("config", opt_path(&a.config)),
        ("out", out.display().to_string()),
    ];
    entries.extend(show_eval(&eval_cfg, a.eval.seed));
    show("table", &entries);

    let overrides = TrainConfigFile {
        epochs: a.epochs,
        flow_steps: a.flow_steps,
        hidden: a.hidden,
        learning_rate: a.learning_rate,
        ..TrainConfigFile::default()
    };
    let mut configs = Vec::new();
    let mut datasets = Vec::new();
    for name in &a.datasets {
        let target = datagen::target_by_name(name)
            .ok_or_else(|| Error::usage(format!("{name:?} has no ground truth; use banana, squeezed_banana or river")))?;
        for &v in &variants {
            for &s in &a.seeds {
                let c = resolve(Some(name), file.as_ref())?.with_variant(v).with_seed(s);
                let c = overrides.apply(c)?;
                eprintln!("[train {name} {} seed {s}]", v.name());
                show_train(&c);
                configs.push(((name.clone(), v, s), c));
            }
        }
        let ds = datagen::generate(name, a.n, a.data_seed, a.mcmc_steps, a.step_size)?;
        datasets.push(TableDataset {
            name: name.clone(),
            data: ds.samples,
            truth: target.manifold(),
        });
    }
    let report = eval::run_table(&datasets, &variants, &a.seeds, &eval_cfg, |name, v, s| {
        configs
            .iter()
            .find(|(k, _)| k.0 == name && k.1 == v && k.2 == s)
            .map(|(_, c)| c.clone())
            .expect("configuration resolved above")
    })?;
    for s in report.summary() {
        println!(
            "{} {}: geodesic {:.4} ± {:.4}  variation {:.4} ± {:.4}  ({} seeds)",
            s.dataset, s.variant.name(), s.geodesic_mean, s.geodesic_std, s.variation_mean, s.variation_std, s.seeds
        );
    }
    for c in &report.cells {
        if let Err(e) = &c.outcome {
            eprintln!("{} {} seed {}: {e}", c.dataset, c.variant.name(), c.seed);
        }
    }
    let data = serde_json::json!({
        "n": a.n,
        "seed": a.data_seed,
        "mcmc_steps": a.mcmc_steps,
        "step_size": a.step_size,
    });
    save_report(&out, &report, Some(data))
}
