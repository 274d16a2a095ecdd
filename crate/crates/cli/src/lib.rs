//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code: 0 success, 1 usage error,
//! 2 data error, 3 numerical failure.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use trajmap_core::evaluation::{evaluate, occlusion_binned_chamfer, EvalConfig, EvalScene, PredictionSet};
use trajmap_core::raster::rasterize;
use trajmap_core::scene::{
    generate_synthetic, load_predictions, load_scene, read_corpus, read_file, save_predictions, save_raster,
    save_targets, to_canonical_json, write_corpus, write_file, Corpus, Scene, SynthConfig,
};
use trajmap_core::targets::{make_virtual_targets, VirtualTargetKind};
use trajmap_neural::gradcheck::{run_suite, GradcheckConfig};
use trajmap_neural::model::{forward_pipeline, map_predictions, SceneInput};
use trajmap_neural::params::{AttentionKind, FusionConfig, FusionMode, ModelConfig, ModelParams, TrajectoryModeling};
use trajmap_neural::train::{curve_to_tsv, train_toy, Schedule, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "trajmap", version, about = "Map-element prediction from actor trajectories")]
pub struct Cli {
    /// Random seed; overrides any seed in a config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON config file: the synthesis config for `synth`, hyperparameter
    /// overrides for `train`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-scene work (default: available parallelism).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus (requires --config).
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Rasterize a scene's trajectories into a MATM-RASTER file.
    Rasterize {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build virtual targets for a scene.
    Targets {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum, default_value = "lane_edge")]
        kind: TargetKindArg,
        #[arg(long, default_value_t = 3.5)]
        lane_width: f64,
        /// Points per target.
        #[arg(long, default_value_t = 20)]
        n_p: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy model on a corpus's training split.
    Train(TrainArgs),
    /// Write one prediction file per scene of a corpus split.
    Predict {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
    },
    /// Average precision per class and threshold.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Comma-separated Chamfer thresholds in meters.
        #[arg(long, default_value = "0.5,1.0,1.5", value_parser = parse_list)]
        thresholds: FloatList,
        #[arg(long, default_value_t = 0.7)]
        score_threshold: f64,
        /// JSON report; the text table goes to the same path with `.txt`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean Chamfer of matched pairs binned by ground-truth occlusion rate.
    ReportOcclusion {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Comma-separated bin edges from 0 to 1.
        #[arg(long, default_value = "0,0.25,0.5,0.75,1", value_parser = parse_list)]
        bins: FloatList,
        /// Chamfer distance below which a prediction matches.
        #[arg(long, default_value_t = 1.5)]
        match_threshold: f64,
        #[arg(long, default_value_t = 0.7)]
        score_threshold: f64,
        /// Text table; the JSON report goes to the same path with `.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient check suite.
    Gradcheck,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "in")]
    pub fusion: FusionArg,
    #[arg(long, value_enum, default_value = "deformable")]
    pub attention: AttentionArg,
    #[arg(long, value_enum, default_value = "actor_query")]
    pub modeling: ModelingArg,
    #[arg(long, value_enum, default_value = "lane_edge")]
    pub pretrain_target: TargetKindArg,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Parameter container; the loss log goes to the same path with
    /// `.loss.tsv` appended.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetKindArg {
    #[value(name = "lane_edge")]
    LaneEdge,
    #[value(name = "centerline")]
    Centerline,
}

impl From<TargetKindArg> for VirtualTargetKind {
    fn from(k: TargetKindArg) -> Self {
        match k {
            TargetKindArg::LaneEdge => VirtualTargetKind::LaneEdge,
            TargetKindArg::Centerline => VirtualTargetKind::Centerline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FusionArg {
    /// No actor branch.
    #[value(name = "none")]
    None,
    #[value(name = "pre")]
    Pre,
    #[value(name = "pre_proj")]
    PreProj,
    #[value(name = "in")]
    In,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AttentionArg {
    #[value(name = "layerwise")]
    Layerwise,
    #[value(name = "deformable")]
    Deformable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelingArg {
    #[value(name = "backbone")]
    Backbone,
    #[value(name = "encoder")]
    Encoder,
    #[value(name = "actor_query")]
    ActorQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    #[value(name = "train")]
    Train,
    #[value(name = "test")]
    Test,
    #[value(name = "all")]
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

fn parse_list(s: &str) -> Result<FloatList, String> {
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(FloatList)
}

/// Hyperparameter overrides accepted by `train --config`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainFile {
    pub channels: Option<usize>,
    pub heads: Option<usize>,
    pub samples: Option<usize>,
    pub actor_queries: Option<usize>,
    pub map_instances: Option<usize>,
    pub batch_size: Option<usize>,
    pub momentum: Option<f64>,
    pub clip_norm: Option<f64>,
    pub lane_width: Option<f64>,
    /// Steps of actor-only pretraining before map-only finetuning; joint
    /// training when absent.
    pub pretrain_steps: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<trajmap_core::Error> for CliError {
    fn from(e: trajmap_core::Error) -> Self {
        use trajmap_core::Error as E;
        match e {
            E::InvalidConfig(_) => CliError::Usage(e.to_string()),
            E::NonFiniteCost { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<trajmap_neural::Error> for CliError {
    fn from(e: trajmap_neural::Error) -> Self {
        use trajmap_neural::Error as E;
        match e {
            E::Core(c) => c.into(),
            E::Config(_) => CliError::Usage(e.to_string()),
            E::Diverged { .. } | E::NonFiniteParam(_) | E::Inconsistent(_) => CliError::Numeric(e.to_string()),
            E::Shape(_) | E::Container(_) | E::MissingParam(_) => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn sibling(p: &Path, ext: &str) -> PathBuf {
    p.with_extension(ext)
}

fn json_bytes<T: serde::Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let value = serde_json::to_value(v).map_err(|e| CliError::Data(e.to_string()))?;
    Ok(to_canonical_json(&value).into_bytes())
}

fn split_scenes(c: &Corpus, split: Split) -> Vec<&Scene> {
    match split {
        Split::Train => c.train.iter().collect(),
        Split::Test => c.test.iter().collect(),
        Split::All => c.all().collect(),
    }
}

fn load_preds_for(dir: &Path, scenes: &[&Scene]) -> CliResult<Vec<PredictionSet>> {
    scenes
        .iter()
        .map(|s| {
            let p = dir.join(format!("{}.json", s.scene_id));
            Ok(load_predictions(&read_file(&p)?)?)
        })
        .collect()
}

fn cmd_synth(cli: &Cli, out: &Path) -> CliResult<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("synth requires --config <file>".into()))?;
    let mut cfg: SynthConfig = serde_json::from_slice(&read_file(path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let corpus = generate_synthetic(&cfg)?;
    write_corpus(out, &corpus)?;
    eprintln!("wrote {} train + {} test scenes to {}", corpus.train.len(), corpus.test.len(), out.display());
    Ok(())
}

fn cmd_rasterize(scene: &Path, out: &Path) -> CliResult<()> {
    let s = load_scene(&read_file(scene)?)?;
    let img = rasterize(&s.trajectories, &s.bev);
    write_file(out, save_raster(&img).as_bytes())?;
    Ok(())
}

fn cmd_targets(scene: &Path, kind: TargetKindArg, lane_width: f64, n_p: usize, out: &Path) -> CliResult<()> {
    if !(lane_width > 0.0) || n_p < 2 {
        return Err(CliError::Usage("lane width must be positive and n_p at least 2".into()));
    }
    let s = load_scene(&read_file(scene)?)?;
    let kind: VirtualTargetKind = kind.into();
    let (targets, diag) = make_virtual_targets(&s.trajectories, kind, lane_width, n_p);
    write_file(out, &save_targets(&s.scene_id, kind.as_str(), lane_width, &targets, diag))?;
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> CliResult<()> {
    let file: TrainFile = match &cli.config {
        Some(p) => serde_json::from_slice(&read_file(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => TrainFile::default(),
    };
    let corpus = read_corpus(&a.corpus)?;
    let first = corpus
        .train
        .first()
        .ok_or_else(|| CliError::Data("corpus has no training scenes".into()))?;
    let visual = first
        .visual_bev
        .as_ref()
        .ok_or_else(|| CliError::Data(format!("scene {} has no visual_bev", first.scene_id)))?;
    let d = ModelConfig::default();
    let model = ModelConfig {
        channels: file.channels.unwrap_or(d.channels),
        heads: file.heads.unwrap_or(d.heads),
        samples: file.samples.unwrap_or(d.samples),
        actor_queries: file.actor_queries.unwrap_or(d.actor_queries),
        map_instances: file.map_instances.unwrap_or(d.map_instances),
        n_p: d.n_p,
        n_classes: d.n_classes,
        visual_channels: visual.channels,
        bev: first.bev,
        fusion: FusionConfig {
            mode: match a.fusion {
                FusionArg::None => FusionMode::None,
                FusionArg::Pre => FusionMode::Pre,
                FusionArg::PreProj => FusionMode::PreProjection,
                FusionArg::In => FusionMode::In,
            },
            attention: match a.attention {
                AttentionArg::Layerwise => AttentionKind::Layerwise,
                AttentionArg::Deformable => AttentionKind::Deformable,
            },
            modeling: match a.modeling {
                ModelingArg::Backbone => TrajectoryModeling::BackboneOnly,
                ModelingArg::Encoder => TrajectoryModeling::BackboneEncoder,
                ModelingArg::ActorQuery => TrajectoryModeling::BackboneActorQuery,
            },
        },
    };
    let td = TrainConfig::default();
    let cfg = TrainConfig {
        steps: a.steps,
        lr: a.lr,
        momentum: file.momentum.unwrap_or(td.momentum),
        batch_size: file.batch_size.unwrap_or(td.batch_size),
        clip_norm: file.clip_norm.or(td.clip_norm),
        schedule: match file.pretrain_steps {
            Some(pretrain_steps) => Schedule::PretrainThenFinetune { pretrain_steps },
            None => Schedule::Joint,
        },
        target_kind: a.pretrain_target.into(),
        lane_width: file.lane_width.unwrap_or(td.lane_width),
        ..td
    };
    cfg.validate()?;
    model.validate()?;
    let seed = cli.seed.unwrap_or(0);
    let out = train_toy(&corpus.train, model, &cfg, seed)?;
    for l in out.curve.iter().filter(|l| l.step % 100 == 0 || l.step + 1 == cfg.steps) {
        eprintln!("step {:>5}  objective {:.6}  map {:.6}  actor {:.6}", l.step, l.objective, l.map, l.actor);
    }
    eprintln!("dataset loss {:.6} -> {:.6}", out.initial_loss, out.final_loss);
    write_file(&a.out, &out.params.to_bytes())?;
    let mut log = curve_to_tsv(&out.curve);
    log.push_str(&format!("# initial_loss\t{:?}\n# final_loss\t{:?}\n", out.initial_loss, out.final_loss));
    write_file(&with_suffix(&a.out, ".loss.tsv"), log.as_bytes())?;
    Ok(())
}

fn cmd_predict(corpus: &Path, params: &Path, split: Split, out: &Path) -> CliResult<()> {
    let c = read_corpus(corpus)?;
    let p = ModelParams::from_bytes(&read_file(params)?)?;
    for s in split_scenes(&c, split) {
        let input = SceneInput::from_scene(s, &p.config)?;
        let o = forward_pipeline(&p, &input)?;
        let preds = map_predictions(&s.scene_id, &o)?;
        write_file(&out.join(format!("{}.json", s.scene_id)), &save_predictions(&preds)?)?;
    }
    Ok(())
}

fn cmd_eval(corpus: &Path, preds: &Path, split: Split, thresholds: &FloatList, score: f64, out: &Path) -> CliResult<()> {
    let cfg = EvalConfig {
        thresholds: thresholds.0.clone(),
        score_threshold: score,
        ..EvalConfig::default()
    };
    cfg.validate()?;
    let c = read_corpus(corpus)?;
    let scenes = split_scenes(&c, split);
    let p = load_preds_for(preds, &scenes)?;
    let views: Vec<EvalScene<'_>> = scenes.iter().map(|s| s.eval_view()).collect();
    let report = evaluate(&views, &p, &cfg)?;
    write_file(out, &json_bytes(&report)?)?;
    write_file(&sibling(out, "txt"), report.to_table().as_bytes())?;
    eprint!("{}", report.to_table());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_occlusion(
    corpus: &Path,
    preds: &Path,
    split: Split,
    bins: &FloatList,
    match_threshold: f64,
    score: f64,
    out: &Path,
) -> CliResult<()> {
    if !(match_threshold > 0.0) {
        return Err(CliError::Usage("match threshold must be positive".into()));
    }
    let cfg = EvalConfig {
        score_threshold: score,
        ..EvalConfig::default()
    };
    cfg.validate()?;
    let c = read_corpus(corpus)?;
    let scenes = split_scenes(&c, split);
    let p = load_preds_for(preds, &scenes)?;
    let views: Vec<EvalScene<'_>> = scenes.iter().map(|s| s.eval_view()).collect();
    let report = occlusion_binned_chamfer(&views, &p, &cfg, match_threshold, &bins.0)?;
    write_file(out, report.to_table().as_bytes())?;
    write_file(&sibling(out, "json"), &json_bytes(&report)?)?;
    eprint!("{}", report.to_table());
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> CliResult<()> {
    let report = run_suite(seed, GradcheckConfig::default())?;
    eprint!("{}", report.summary());
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::Numeric("gradient check failed".into()))
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth { out } => cmd_synth(cli, out),
        Command::Rasterize { scene, out } => cmd_rasterize(scene, out),
        Command::Targets { scene, kind, lane_width, n_p, out } => cmd_targets(scene, *kind, *lane_width, *n_p, out),
        Command::Train(a) => cmd_train(cli, a),
        Command::Predict { corpus, params, split, out } => cmd_predict(corpus, params, *split, out),
        Command::Eval { corpus, preds, split, thresholds, score_threshold, out } => {
            cmd_eval(corpus, preds, *split, thresholds, *score_threshold, out)
        }
        Command::ReportOcclusion { corpus, preds, split, bins, match_threshold, score_threshold, out } => {
            cmd_occlusion(corpus, preds, *split, bins, *match_threshold, *score_threshold, out)
        }
        Command::Gradcheck => cmd_gradcheck(cli.seed.unwrap_or(0)),
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    if cli.jobs == Some(0) {
        eprintln!("usage error: --jobs must be positive");
        return 1;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.unwrap_or(0)).build();
    let result = match pool {
        Ok(pool) => pool.install(|| execute(&cli)),
        Err(e) => Err(CliError::Data(e.to_string())),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}
