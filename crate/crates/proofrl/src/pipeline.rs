//! End-to-end image-level proofreading in three configurations — exhaustive
//! sliding windows with a static corrector order, sliding windows with the
//! selector, and the locator-driven pipeline — plus patch-level suite
//! evaluation, with timing and corrector-episode accounting.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::env::{
    run_corrector_episode, run_locator_episode, run_selector_episode, ActionInfo, AgentKind,
    EnvConfig, FreshLabels, LocatorEnv, Mode, PatchEnv,
};
use crate::error::{Error, Result};
use crate::metrics::{cremi_score, MetricReport};
use crate::policy::AgentSet;
use crate::raster::{EmImage, GridSpec, LabelMap, PatchRef};
use crate::synth::PatchCase;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineMode {
    SlidingStatic,
    SlidingSelector,
    LocatorSelector,
}

impl PipelineMode {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sliding-static" => Ok(Self::SlidingStatic),
            "sliding-selector" => Ok(Self::SlidingSelector),
            "locator-selector" => Ok(Self::LocatorSelector),
            _ => Err(Error::Parameter(format!(
                "unknown mode '{name}' (expected sliding-static, sliding-selector or locator-selector)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::SlidingStatic => "sliding-static",
            Self::SlidingSelector => "sliding-selector",
            Self::LocatorSelector => "locator-selector",
        }
    }
}

impl std::fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Geometry and thresholds for one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    /// Corrector order for the static pipeline; each is applied once per
    /// patch, unconditionally.
    pub static_order: Vec<AgentKind>,
    pub env: EnvConfig,
    pub sub_size: usize,
    pub stride: usize,
    pub patch_size: usize,
    pub locator_grid: GridSpec,
    pub corrector_grid: GridSpec,
}

impl PipelineConfig {
    pub fn new(mode: PipelineMode) -> Self {
        Self {
            mode,
            static_order: vec![AgentKind::Merger, AgentKind::Splitter],
            env: EnvConfig::default(),
            sub_size: 512,
            stride: 256,
            patch_size: 128,
            locator_grid: GridSpec::locator(),
            corrector_grid: GridSpec::corrector(),
        }
    }
}

/// Splits an image into overlapping square sub-images in row-major order.
/// Border windows are clamped to the image edge so coverage is complete.
pub fn tile_image(
    width: usize,
    height: usize,
    sub: usize,
    stride: usize,
) -> Result<Vec<(usize, usize)>> {
    if width < sub || height < sub {
        return Err(Error::Dimension(format!(
            "image {width}x{height} smaller than the {sub}-pixel sub-image"
        )));
    }
    if stride == 0 {
        return Err(Error::Parameter("stride must be positive".into()));
    }
    let offsets = |len: usize| {
        let mut out = Vec::new();
        let mut off = 0;
        loop {
            if off + sub >= len {
                out.push(len - sub);
                break;
            }
            out.push(off);
            off += stride;
        }
        out
    };
    let xs = offsets(width);
    let ys = offsets(height);
    let mut windows = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            windows.push((x, y));
        }
    }
    Ok(windows)
}

/// Per-patch (or per-locator-step) trace entry.
#[derive(Debug, Clone, Copy)]
pub struct PatchTraceRecord {
    pub window: (usize, usize),
    pub grid_index: usize,
    pub cremi_before: f64,
    pub cremi_after: f64,
    pub corrector_episodes: usize,
}

/// Outcome of one image-level run. The after-report is recomputed from the
/// final map, never accumulated from per-step deltas.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub mode: PipelineMode,
    pub before: MetricReport,
    pub after: MetricReport,
    pub wall_seconds: f64,
    pub corrector_episodes: usize,
    pub patch_trace: Vec<PatchTraceRecord>,
}

impl RunReport {
    /// Structured text: one `key value` line per field, metrics at 12
    /// significant digits.
    pub fn to_report(&self) -> String {
        format!(
            "mode {}\ncremi_before {:.11e}\ncremi_after {:.11e}\nvoi_split_after {:.11e}\nvoi_merge_after {:.11e}\narand_after {:.11e}\nwall_seconds {:.3}\ncorrector_episodes {}\n",
            self.mode,
            self.before.cremi,
            self.after.cremi,
            self.after.voi_split,
            self.after.voi_merge,
            self.after.arand,
            self.wall_seconds,
            self.corrector_episodes
        )
    }
}

/// Runs one image through the configured pipeline.
pub fn run_pipeline(
    em: &EmImage,
    gt: &LabelMap,
    labels: &LabelMap,
    config: &PipelineConfig,
    agents: &mut AgentSet,
    rng: &mut ChaCha8Rng,
) -> Result<(LabelMap, RunReport)> {
    match config.mode {
        PipelineMode::LocatorSelector => run_locator(em, gt, labels, config, agents, rng),
        _ => run_sliding(em, gt, labels, config, agents, rng),
    }
}

/// Sliding-window pipelines: every locator-grid patch of every sub-image is
/// visited in fixed row-major order. In static mode each corrector in
/// `static_order` runs once per patch, unconditionally; in selector mode a
/// selector episode decides per patch.
pub fn run_sliding(
    em: &EmImage,
    gt: &LabelMap,
    labels: &LabelMap,
    config: &PipelineConfig,
    agents: &mut AgentSet,
    rng: &mut ChaCha8Rng,
) -> Result<(LabelMap, RunReport)> {
    if config.mode == PipelineMode::LocatorSelector {
        return Err(Error::Parameter("run_sliding called with the locator mode".into()));
    }
    check_dims(em, gt, labels)?;
    let start = Instant::now();
    let before = cremi_score(gt, labels)?;
    let mut working = labels.clone();
    let fresh = FreshLabels::starting_after(&working);
    let windows = tile_image(em.width(), em.height(), config.sub_size, config.stride)?;
    let half = config.patch_size / 2;
    let mut trace = Vec::new();
    let mut episodes = 0usize;

    for &(wx, wy) in &windows {
        for index in 0..config.locator_grid.len() {
            let (gx, gy) = config.locator_grid.point_to_pixel(index)?;
            let patch = PatchRef::new(wx + gx - half, wy + gy - half, config.patch_size);
            let mut env = PatchEnv::new(
                em.crop(&patch)?,
                gt.crop(&patch)?,
                working.crop(&patch)?,
                config.corrector_grid,
                config.env,
                fresh.clone(),
            )?;
            env.embedded = true;
            let patch_before = env.cremi();
            let mut patch_episodes = 0usize;
            match config.mode {
                PipelineMode::SlidingStatic => {
                    for &kind in &config.static_order {
                        let expose = agents.expose_oracle;
                        run_corrector_episode(
                            &mut env,
                            kind,
                            agents.corrector_mut(kind),
                            expose,
                            rng,
                        );
                        patch_episodes += 1;
                    }
                }
                PipelineMode::SlidingSelector => {
                    let inner = run_selector_episode(&mut env, agents, Mode::Eval, rng);
                    patch_episodes += inner.corrector_episodes;
                }
                PipelineMode::LocatorSelector => unreachable!(),
            }
            working.blit(&patch, &env.labels)?;
            episodes += patch_episodes;
            trace.push(PatchTraceRecord {
                window: (wx, wy),
                grid_index: index,
                cremi_before: patch_before,
                cremi_after: env.cremi(),
                corrector_episodes: patch_episodes,
            });
        }
    }

    let after = cremi_score(gt, &working)?;
    let report = RunReport {
        mode: config.mode,
        before,
        after,
        wall_seconds: start.elapsed().as_secs_f64(),
        corrector_episodes: episodes,
        patch_trace: trace,
    };
    Ok((working, report))
}

/// Locator pipeline: one evaluation-mode locator episode per sub-image; the
/// locator itself selects which patches get corrector attention.
pub fn run_locator(
    em: &EmImage,
    gt: &LabelMap,
    labels: &LabelMap,
    config: &PipelineConfig,
    agents: &mut AgentSet,
    rng: &mut ChaCha8Rng,
) -> Result<(LabelMap, RunReport)> {
    check_dims(em, gt, labels)?;
    let start = Instant::now();
    let before = cremi_score(gt, labels)?;
    let mut working = labels.clone();
    let fresh = FreshLabels::starting_after(&working);
    let windows = tile_image(em.width(), em.height(), config.sub_size, config.stride)?;
    let mut trace = Vec::new();
    let mut episodes = 0usize;

    for &(wx, wy) in &windows {
        let window = PatchRef::new(wx, wy, config.sub_size);
        let mut env = LocatorEnv::with_geometry(
            em.crop(&window)?,
            gt.crop(&window)?,
            working.crop(&window)?,
            config.env,
            config.locator_grid,
            config.patch_size,
            config.corrector_grid,
        )?;
        env.fresh = fresh.clone();
        let episode = run_locator_episode(&mut env, agents, Mode::Eval, rng);
        working.blit(&window, &env.labels)?;
        episodes += episode.corrector_episodes;
        for step in &episode.steps {
            if let ActionInfo::Grid { index, .. } = step.info.action {
                trace.push(PatchTraceRecord {
                    window: (wx, wy),
                    grid_index: index,
                    cremi_before: step.info.cremi_before,
                    cremi_after: step.info.cremi_after,
                    corrector_episodes: 0,
                });
            }
        }
    }

    let after = cremi_score(gt, &working)?;
    let report = RunReport {
        mode: config.mode,
        before,
        after,
        wall_seconds: start.elapsed().as_secs_f64(),
        corrector_episodes: episodes,
        patch_trace: trace,
    };
    Ok((working, report))
}

fn check_dims(em: &EmImage, gt: &LabelMap, labels: &LabelMap) -> Result<()> {
    if !em.same_dims(gt) || !em.same_dims(labels) {
        return Err(Error::Dimension(format!(
            "image rasters disagree: em {}x{}, gt {}x{}, labels {}x{}",
            em.width(),
            em.height(),
            gt.width(),
            gt.height(),
            labels.width(),
            labels.height()
        )));
    }
    Ok(())
}

/// Aggregate patch-suite outcome: mean CREMI before and after correction.
#[derive(Debug, Clone, Copy)]
pub struct SuiteReport {
    pub cases: usize,
    pub mean_before: f64,
    pub mean_after: f64,
    pub corrector_episodes: usize,
    pub wall_seconds: f64,
}

/// Runs every patch of a test set through the corrector harness chosen by
/// `config.mode`: the static order for `SlidingStatic`, a selector episode
/// otherwise. There is no locator at patch level.
pub fn eval_patch_suite(
    cases: &[PatchCase],
    config: &PipelineConfig,
    agents: &mut AgentSet,
    rng: &mut ChaCha8Rng,
) -> Result<SuiteReport> {
    if cases.is_empty() {
        return Err(Error::Parameter("empty patch test set".into()));
    }
    let start = Instant::now();
    let mut sum_before = 0.0;
    let mut sum_after = 0.0;
    let mut episodes = 0usize;
    for case in cases {
        let mut env = PatchEnv::from_case(case, config.corrector_grid, config.env)?;
        sum_before += env.cremi();
        match config.mode {
            PipelineMode::SlidingStatic => {
                for &kind in &config.static_order {
                    let expose = agents.expose_oracle;
                    run_corrector_episode(&mut env, kind, agents.corrector_mut(kind), expose, rng);
                    episodes += 1;
                }
            }
            _ => {
                let trace = run_selector_episode(&mut env, agents, Mode::Eval, rng);
                episodes += trace.corrector_episodes;
            }
        }
        sum_after += env.cremi();
    }
    Ok(SuiteReport {
        cases: cases.len(),
        mean_before: sum_before / cases.len() as f64,
        mean_after: sum_after / cases.len() as f64,
        corrector_episodes: episodes,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
