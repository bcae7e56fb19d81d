//! Command-line surface: data generation, error injection, training,
//! pipeline runs, evaluation and benchmarks, all reproducible from the
//! manifest written next to every output.
//!
//! Exit codes: 0 success, 2 usage/validation, 3 runtime fault. Reports go to
//! stdout, diagnostics to stderr.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::AgentKind;
use crate::error::{Error, Result};
use crate::metrics::cremi_score;
use crate::pipeline::{eval_patch_suite, run_pipeline, PipelineConfig, PipelineMode};
use crate::policy::{AgentSet, NetConfig, NetPolicy, PolicyNet};
use crate::rlc;
use crate::synth::{
    derive_seed, gen_error_image, make_patch_testset, ErrorKind, ErrorScript, ImageGenOpts,
    PatchCase,
};
use crate::train::{train_agent, TrainConfig, TrainStage, TrainTask};

#[derive(Parser, Debug)]
#[command(name = "proofrl", version, about = "Automatic proofreading of segmentation label maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic (EM, ground truth, erroneous map) triples.
    Gen(GenArgs),
    /// Inject errors into an existing ground-truth label map.
    Inject(InjectArgs),
    /// Train one agent bottom-up from a generated dataset.
    Train(TrainArgs),
    /// Run an image-level proofreading pipeline.
    Run(RunArgs),
    /// Metric reports and patch/image evaluation suites.
    Eval(EvalArgs),
    /// Time the three pipeline modes on a generated fixture.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Square image side in pixels.
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    /// Number of Voronoi cells.
    #[arg(long, default_value_t = 200)]
    pub segments: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Error regime: merge, split, combined or none.
    #[arg(long, default_value = "combined")]
    pub errors: String,
    #[arg(long, default_value_t = 1)]
    pub min_errors: usize,
    #[arg(long, default_value_t = 5)]
    pub max_errors: usize,
    /// Bounding-box cap for injected errors: 0 disables the cap; omitted
    /// means 64 (one locator patch) for images of 256 px and up, uncapped on
    /// smaller patches.
    #[arg(long)]
    pub bbox_cap: Option<usize>,
    /// Minimum pixel area of an injected error, keeping it detectable.
    #[arg(long, default_value_t = 1000)]
    pub min_error_area: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InjectArgs {
    /// Ground-truth label map (RLC1).
    #[arg(long)]
    pub gt: PathBuf,
    /// Optional EM image copied into the output directory.
    #[arg(long)]
    pub em: Option<PathBuf>,
    /// merge or split.
    #[arg(long)]
    pub kind: String,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// merger, splitter, selector or locator.
    #[arg(long)]
    pub agent: String,
    /// Dataset directory produced by `gen`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub episodes: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub lr: f64,
    /// Directory with the frozen lower-stage checkpoints.
    #[arg(long)]
    pub policies: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// sliding-static, sliding-selector or locator-selector.
    #[arg(long)]
    pub mode: String,
    #[arg(long)]
    pub em: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub seg: PathBuf,
    /// Use the ground-truth-scripted oracle policies.
    #[arg(long)]
    pub oracle: bool,
    /// Directory with trained checkpoints (merger.rlcw, splitter.rlcw, ...).
    #[arg(long)]
    pub policies: Option<PathBuf>,
    /// Static corrector order, comma separated.
    #[arg(long, default_value = "merger,splitter")]
    pub order: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Print one metric report for a (gt, seg) raster pair and exit.
    #[arg(long)]
    pub metrics_only: bool,
    /// Positional raster paths for --metrics-only.
    pub paths: Vec<PathBuf>,
    /// Patch-suite regimes, comma separated (merge,split,combined).
    #[arg(long)]
    pub suite: Option<String>,
    /// Image-suite mode comparison on generated fixtures.
    #[arg(long)]
    pub image_suite: bool,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub policies: Option<PathBuf>,
    #[arg(long, default_value = "merger,splitter")]
    pub order: String,
    /// Voronoi cells per generated image (image suite).
    #[arg(long, default_value_t = 200)]
    pub segments: usize,
    #[arg(long, default_value_t = 512)]
    pub size: usize,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, default_value_t = 200)]
    pub segments: usize,
    #[arg(long, default_value_t = 3)]
    pub count: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Seed resolution: explicit flag, then the RLC_SEED environment variable,
/// then zero.
fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.or_else(|| std::env::var("RLC_SEED").ok().and_then(|s| s.parse().ok())).unwrap_or(0)
}

/// Everything needed to rerun a command, written into each output directory.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub artifact_version: String,
    /// Absent for deterministic generator commands so reruns stay
    /// bit-identical.
    pub wall_seconds: Option<f64>,
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(())
}

fn manifest_base(seed: u64, config: serde_json::Value) -> RunManifest {
    RunManifest {
        command: std::env::args().collect(),
        seed,
        config,
        inputs: Vec::new(),
        outputs: Vec::new(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_seconds: None,
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetItem {
    pub em: String,
    pub gt: String,
    pub seg: String,
    pub script: ErrorScript,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: String,
    pub width: usize,
    pub height: usize,
    pub n_seeds: usize,
    pub count: usize,
    pub seed: u64,
    pub min_errors: usize,
    pub max_errors: usize,
    pub bbox_cap: usize,
    pub items: Vec<DatasetItem>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Inject(args) => cmd_inject(args),
        Command::Train(args) => cmd_train(args),
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn parse_error_kind(name: &str) -> Result<Option<ErrorKind>> {
    match name {
        "merge" => Ok(Some(ErrorKind::Merge)),
        "split" => Ok(Some(ErrorKind::Split)),
        "combined" => Ok(Some(ErrorKind::Combined)),
        "none" => Ok(None),
        _ => Err(Error::Parameter(format!(
            "unknown error kind '{name}' (expected merge, split, combined or none)"
        ))),
    }
}

fn parse_order(order: &str) -> Result<Vec<AgentKind>> {
    order
        .split(',')
        .map(|part| match AgentKind::parse(part.trim())? {
            kind @ (AgentKind::Merger | AgentKind::Splitter) => Ok(kind),
            other => Err(Error::Parameter(format!("{other} cannot appear in a static order"))),
        })
        .collect()
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    if args.segments < 2 {
        return Err(Error::Parameter(format!("--segments must be >= 2, got {}", args.segments)));
    }
    if args.count == 0 {
        return Err(Error::Parameter("--count must be >= 1".into()));
    }
    let kind = parse_error_kind(&args.errors)?;
    let seed = resolve_seed(args.seed);
    std::fs::create_dir_all(&args.out)?;
    let bbox_cap = match args.bbox_cap {
        Some(0) => usize::MAX,
        Some(cap) => cap,
        None if args.size >= 256 => 64,
        None => usize::MAX,
    };
    let opts = ImageGenOpts {
        width: args.size,
        height: args.size,
        n_seeds: args.segments,
        min_errors: args.min_errors,
        max_errors: args.max_errors,
        error_bbox_cap: bbox_cap,
        min_error_area: args.min_error_area,
    };
    let mut manifest = DatasetManifest {
        kind: args.errors.clone(),
        width: args.size,
        height: args.size,
        n_seeds: args.segments,
        count: args.count,
        seed,
        min_errors: args.min_errors,
        max_errors: args.max_errors,
        bbox_cap,
        items: Vec::with_capacity(args.count),
    };
    for item in 0..args.count {
        let item_seed = derive_seed(seed, item as u64);
        let (em, gt, seg, script) = match kind {
            Some(kind) => {
                let case = gen_error_image(kind, item_seed, &opts)?;
                (case.em, case.gt, case.seg, case.script)
            }
            None => {
                let (em, gt) =
                    crate::synth::gen_ground_truth(args.size, args.size, args.segments, item_seed)?;
                let seg = gt.clone();
                (em, gt, seg, ErrorScript { seed: item_seed, ..Default::default() })
            }
        };
        let names = (
            format!("em_{item:04}.rlc"),
            format!("gt_{item:04}.rlc"),
            format!("seg_{item:04}.rlc"),
        );
        rlc::save_em(&args.out.join(&names.0), &em)?;
        rlc::save_labels(&args.out.join(&names.1), &gt)?;
        rlc::save_labels(&args.out.join(&names.2), &seg)?;
        manifest.items.push(DatasetItem { em: names.0, gt: names.1, seg: names.2, script });
    }
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(format!("manifest serialization: {e}")))?;
    std::fs::write(args.out.join("dataset.json"), text + "\n")?;

    let mut run_manifest = manifest_base(
        seed,
        serde_json::json!({
            "size": args.size, "segments": args.segments, "count": args.count,
            "errors": args.errors, "min_errors": args.min_errors,
            "max_errors": args.max_errors, "bbox_cap": bbox_cap,
            "min_error_area": args.min_error_area,
        }),
    );
    run_manifest.outputs = vec![args.out.display().to_string()];
    write_manifest(&args.out, &run_manifest)?;
    println!("wrote {} triples to {}", args.count, args.out.display());
    Ok(())
}

fn cmd_inject(args: InjectArgs) -> Result<()> {
    let gt = rlc::load_labels(&args.gt)?;
    let seed = resolve_seed(args.seed);
    std::fs::create_dir_all(&args.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut script = ErrorScript { seed, ..Default::default() };
    let mut seg = gt.clone();
    match args.kind.as_str() {
        "merge" => {
            for _ in 0..args.count {
                let (next, pair) = crate::synth::inject_merge_filtered(&seg, &mut rng, &crate::synth::InjectFilter::none())?;
                seg = next;
                script.merges.push(pair);
            }
        }
        "split" => {
            for _ in 0..args.count {
                let (next, cut) = crate::synth::inject_split_filtered(&seg, &mut rng, &crate::synth::InjectFilter::none())?;
                seg = next;
                script.splits.push(cut);
            }
        }
        other => {
            return Err(Error::Parameter(format!(
                "unknown injection kind '{other}' (expected merge or split)"
            )))
        }
    }
    rlc::save_labels(&args.out.join("seg.rlc"), &seg)?;
    if let Some(em) = &args.em {
        std::fs::copy(em, args.out.join("em.rlc"))?;
    }
    let script_text = serde_json::to_string_pretty(&script)
        .map_err(|e| Error::Format(format!("script serialization: {e}")))?;
    std::fs::write(args.out.join("script.json"), script_text + "\n")?;
    let mut manifest = manifest_base(
        seed,
        serde_json::json!({"kind": args.kind, "count": args.count}),
    );
    manifest.inputs = vec![args.gt.display().to_string()];
    manifest.outputs = vec![args.out.display().to_string()];
    write_manifest(&args.out, &manifest)?;
    println!("injected {} {} error(s) into {}", args.count, args.kind, args.out.display());
    Ok(())
}

/// Dataset as loaded rasters.
struct Dataset {
    cases: Vec<PatchCase>,
    width: usize,
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(dir.join("dataset.json"))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("dataset manifest: {e}")))?;
    let mut cases = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        cases.push(PatchCase {
            em: rlc::load_em(&dir.join(&item.em))?,
            gt: rlc::load_labels(&dir.join(&item.gt))?,
            seg: rlc::load_labels(&dir.join(&item.seg))?,
            script: item.script.clone(),
        });
    }
    if cases.is_empty() {
        return Err(Error::Parameter(format!("dataset {} is empty", dir.display())));
    }
    Ok(Dataset { cases, width: manifest.width })
}

fn load_net(dir: &Path, kind: AgentKind) -> Result<PolicyNet> {
    let path = dir.join(format!("{kind}.rlcw"));
    if !path.exists() {
        return Err(Error::Stage(format!(
            "missing {kind} checkpoint at {}; train it first",
            path.display()
        )));
    }
    PolicyNet::load(&path)
}

/// Policy set from checkpoints: correctors always, selector and locator when
/// the pipeline needs them.
fn agents_from(args_oracle: bool, policies: &Option<PathBuf>, mode: PipelineMode) -> Result<AgentSet> {
    if args_oracle {
        return Ok(AgentSet::oracle());
    }
    let Some(dir) = policies else {
        return Err(Error::Parameter("pass --oracle or --policies DIR".into()));
    };
    let mut agents = AgentSet::random();
    agents.set(AgentKind::Splitter, Box::new(NetPolicy::greedy(load_net(dir, AgentKind::Splitter)?)));
    agents.set(AgentKind::Merger, Box::new(NetPolicy::greedy(load_net(dir, AgentKind::Merger)?)));
    if mode != PipelineMode::SlidingStatic {
        agents.set(
            AgentKind::Selector,
            Box::new(NetPolicy::greedy(load_net(dir, AgentKind::Selector)?)),
        );
    }
    if mode == PipelineMode::LocatorSelector {
        agents.set(
            AgentKind::Locator,
            Box::new(NetPolicy::greedy(load_net(dir, AgentKind::Locator)?)),
        );
    }
    agents.expose_oracle = false;
    Ok(agents)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let kind = AgentKind::parse(&args.agent)?;
    let seed = resolve_seed(args.seed);
    let dataset = load_dataset(&args.data)?;
    let expected = match kind {
        AgentKind::Locator => 512,
        _ => 128,
    };
    if dataset.width != expected {
        return Err(Error::Parameter(format!(
            "training the {kind} expects {expected}x{expected} data, dataset is {0}x{0}",
            dataset.width
        )));
    }

    let mut stage = TrainStage::default();
    if matches!(kind, AgentKind::Selector | AgentKind::Locator) {
        let dir = args.policies.as_ref().ok_or_else(|| {
            Error::Stage(format!("training the {kind} requires --policies with lower-stage checkpoints"))
        })?;
        stage.splitter = Some(load_net(dir, AgentKind::Splitter)?);
        stage.merger = Some(load_net(dir, AgentKind::Merger)?);
        if kind == AgentKind::Locator {
            stage.selector = Some(load_net(dir, AgentKind::Selector)?);
        }
    }

    let cfg = TrainConfig {
        learning_rate: args.lr,
        workers: args.workers,
        episodes: args.episodes,
        seed,
        ..Default::default()
    };
    let action_count = match kind {
        AgentKind::Locator => crate::GridSpec::locator().len() + 1,
        AgentKind::Selector => 3,
        _ => crate::GridSpec::corrector().len() + 1,
    };
    let net_cfg = NetConfig::for_agent(kind, action_count, seed);

    let env_cfg = crate::env::EnvConfig::default();
    let cases = dataset.cases;
    let factory = move |episode: u64| -> TrainTask {
        let case = &cases[(episode as usize) % cases.len()];
        match kind {
            AgentKind::Locator => TrainTask::Image(
                crate::env::LocatorEnv::new(
                    case.em.clone(),
                    case.gt.clone(),
                    case.seg.clone(),
                    env_cfg,
                )
                .expect("dataset geometry validated"),
            ),
            _ => TrainTask::Patch(
                crate::env::PatchEnv::from_case(case, crate::GridSpec::corrector(), env_cfg)
                    .expect("dataset geometry validated"),
            ),
        }
    };

    let start = Instant::now();
    let output = train_agent(kind, &stage, &cfg, net_cfg, &factory)?;
    std::fs::create_dir_all(&args.out)?;
    let ckpt = args.out.join(format!("{kind}.rlcw"));
    output.net.save(&ckpt)?;
    let log_path = args.out.join(format!("{kind}_log.txt"));
    let log_text: String = output.log.iter().map(|r| r.to_line() + "\n").collect();
    std::fs::write(&log_path, log_text)?;

    let mut manifest = manifest_base(
        seed,
        serde_json::json!({
            "agent": args.agent, "episodes": args.episodes, "workers": args.workers,
            "lr": args.lr, "data": args.data.display().to_string(),
        }),
    );
    manifest.inputs = vec![args.data.display().to_string()];
    manifest.outputs = vec![ckpt.display().to_string(), log_path.display().to_string()];
    manifest.wall_seconds = Some(start.elapsed().as_secs_f64());
    write_manifest(&args.out, &manifest)?;

    if output.diverged {
        return Err(Error::TrainingFault(format!(
            "training diverged; last finite checkpoint saved to {}",
            ckpt.display()
        )));
    }
    let last = output.log.last().expect("at least one episode");
    println!(
        "trained {kind}: {} episodes, final return {:.3}, checkpoint {}",
        output.log.len(),
        last.ret,
        ckpt.display()
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mode = PipelineMode::parse(&args.mode)?;
    let seed = resolve_seed(args.seed);
    let em = rlc::load_em(&args.em)?;
    let gt = rlc::load_labels(&args.gt)?;
    let seg = rlc::load_labels(&args.seg)?;
    let mut config = PipelineConfig::new(mode);
    config.static_order = parse_order(&args.order)?;
    let mut agents = agents_from(args.oracle, &args.policies, mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (corrected, report) = run_pipeline(&em, &gt, &seg, &config, &mut agents, &mut rng)?;

    std::fs::create_dir_all(&args.out)?;
    let out_map = args.out.join("corrected.rlc");
    rlc::save_labels(&out_map, &corrected)?;
    let report_text = report.to_report();
    std::fs::write(args.out.join("report.txt"), &report_text)?;
    let mut manifest = manifest_base(
        seed,
        serde_json::json!({"mode": args.mode, "order": args.order, "oracle": args.oracle}),
    );
    manifest.inputs = vec![
        args.em.display().to_string(),
        args.gt.display().to_string(),
        args.seg.display().to_string(),
    ];
    manifest.outputs = vec![out_map.display().to_string()];
    manifest.wall_seconds = Some(report.wall_seconds);
    write_manifest(&args.out, &manifest)?;
    print!("{report_text}");
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    if args.metrics_only {
        if args.paths.len() != 2 {
            return Err(Error::Parameter(
                "--metrics-only expects exactly two raster paths: GT SEG".into(),
            ));
        }
        let gt = rlc::load_labels(&args.paths[0])?;
        let seg = rlc::load_labels(&args.paths[1])?;
        let report = cremi_score(&gt, &seg)?;
        print!("{}", report.to_report());
        return Ok(());
    }
    if let Some(suite) = &args.suite {
        return eval_patch_suites(&args, suite);
    }
    if args.image_suite {
        return eval_image_suite(&args);
    }
    Err(Error::Parameter("pass --metrics-only, --suite or --image-suite".into()))
}

/// Table-style patch evaluation: one row per error regime, columns for the
/// initial score and each pipeline.
fn eval_patch_suites(args: &EvalArgs, suite: &str) -> Result<()> {
    let seed = resolve_seed(args.seed);
    let kinds: Vec<ErrorKind> = suite
        .split(',')
        .map(|name| {
            parse_error_kind(name.trim())?.ok_or_else(|| {
                Error::Parameter("'none' is not a patch-suite regime".into())
            })
        })
        .collect::<Result<_>>()?;
    let order = parse_order(&args.order)?;
    println!("{:<10} {:>12} {:>12} {:>12}", "testset", "initial", "static", "selector");
    for kind in kinds {
        let cases = make_patch_testset(kind, args.count, derive_seed(seed, kind as u64))?;
        let mut static_cfg = PipelineConfig::new(PipelineMode::SlidingStatic);
        static_cfg.static_order = order.clone();
        let selector_cfg = PipelineConfig::new(PipelineMode::SlidingSelector);
        let mut agents = agents_from(args.oracle, &args.policies, PipelineMode::SlidingSelector)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1000 + kind as u64));
        let static_report = eval_patch_suite(&cases, &static_cfg, &mut agents, &mut rng)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2000 + kind as u64));
        let selector_report = eval_patch_suite(&cases, &selector_cfg, &mut agents, &mut rng)?;
        println!(
            "{:<10} {:>12.6} {:>12.6} {:>12.6}",
            kind.to_string(),
            static_report.mean_before,
            static_report.mean_after,
            selector_report.mean_after
        );
    }
    Ok(())
}

/// Table-style image evaluation: one row per pipeline mode with score, time
/// and corrector-episode count.
fn eval_image_suite(args: &EvalArgs) -> Result<()> {
    let seed = resolve_seed(args.seed);
    let opts = ImageGenOpts {
        width: args.size,
        height: args.size,
        n_seeds: args.segments,
        ..Default::default()
    };
    let mut cases = Vec::with_capacity(args.count);
    for item in 0..args.count {
        cases.push(gen_error_image(ErrorKind::Combined, derive_seed(seed, item as u64), &opts)?);
    }
    println!(
        "{:<18} {:>12} {:>12} {:>10} {:>10}",
        "mode", "before", "after", "seconds", "episodes"
    );
    for mode in [
        PipelineMode::SlidingStatic,
        PipelineMode::SlidingSelector,
        PipelineMode::LocatorSelector,
    ] {
        let mut config = PipelineConfig::new(mode);
        config.static_order = parse_order(&args.order)?;
        let mut agents = agents_from(args.oracle, &args.policies, mode)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut before = 0.0;
        let mut after = 0.0;
        let mut seconds = 0.0;
        let mut episodes = 0usize;
        for case in &cases {
            let (_, report) =
                run_pipeline(&case.em, &case.gt, &case.seg, &config, &mut agents, &mut rng)?;
            before += report.before.cremi;
            after += report.after.cremi;
            seconds += report.wall_seconds;
            episodes += report.corrector_episodes;
        }
        let n = cases.len() as f64;
        println!(
            "{:<18} {:>12.6} {:>12.6} {:>10.2} {:>10}",
            mode.to_string(),
            before / n,
            after / n,
            seconds,
            episodes
        );
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let eval_args = EvalArgs {
        metrics_only: false,
        paths: Vec::new(),
        suite: None,
        image_suite: true,
        count: args.count,
        seed: args.seed,
        oracle: true,
        policies: None,
        order: "merger,splitter".into(),
        segments: args.segments,
        size: args.size,
    };
    eval_image_suite(&eval_args)
}

/// Maps an error to the process exit code: 2 for usage/validation problems,
/// 3 for runtime faults.
pub fn exit_code(err: &Error) -> i32 {
    if err.is_usage() {
        2
    } else {
        3
    }
}
