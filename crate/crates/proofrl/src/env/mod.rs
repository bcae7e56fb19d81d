//! The four Markov decision processes (locator, selector, splitter, merger),
//! their reward functions, nested-episode orchestration and termination rules.
//!
//! Episodes nest: one locator step runs a full selector episode on the chosen
//! patch, and each selector step runs a full corrector episode. Edits made on
//! a cropped patch are written back through `blit`, so after any locator step
//! the sub-image differs from its predecessor only inside the selected patch.

mod locator;
mod patch;
mod reward;

pub use locator::{run_locator_episode, LocatorEnv};
pub use patch::{
    run_corrector_episode, run_selector_episode, CorrectorEpisode, PatchEnv,
    SELECTOR_ACTION_MERGER, SELECTOR_ACTION_SPLITTER, SELECTOR_ACTION_STOP,
};
pub use reward::{corrector_reward, locator_reward, r_diff, selector_reward};

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::metrics::cremi_score;
use crate::raster::{EmImage, GridSpec, LabelMap, PointMap};

/// Which agent an action space, observation or policy belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgentKind {
    Locator,
    Selector,
    Splitter,
    Merger,
}

impl AgentKind {
    /// Grid cells plus one stop action; the selector has a fixed three-way
    /// choice (merger, splitter, stop).
    pub fn action_count(&self, grid: &GridSpec) -> usize {
        match self {
            AgentKind::Selector => 3,
            _ => grid.len() + 1,
        }
    }

    /// Observation channels: EM, label boundaries, and (except for the
    /// selector) the point map.
    pub fn observation_channels(&self) -> usize {
        match self {
            AgentKind::Selector => 2,
            _ => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AgentKind::Locator => "locator",
            AgentKind::Selector => "selector",
            AgentKind::Splitter => "splitter",
            AgentKind::Merger => "merger",
        }
    }

    pub fn as_u8(&self) -> u8 {
        match self {
            AgentKind::Locator => 0,
            AgentKind::Selector => 1,
            AgentKind::Splitter => 2,
            AgentKind::Merger => 3,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(AgentKind::Locator),
            1 => Ok(AgentKind::Selector),
            2 => Ok(AgentKind::Splitter),
            3 => Ok(AgentKind::Merger),
            _ => Err(Error::Format(format!("unknown agent kind byte {v}"))),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "locator" => Ok(AgentKind::Locator),
            "selector" => Ok(AgentKind::Selector),
            "splitter" => Ok(AgentKind::Splitter),
            "merger" => Ok(AgentKind::Merger),
            _ => Err(Error::Parameter(format!("unknown agent kind '{name}'"))),
        }
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Training uses longer selector episodes and extra termination rules;
/// evaluation relies on the stop action and the stagnation rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Thresholds and episode caps. The paper describes most of these only
/// qualitatively; the values here are the artifact's pinned defaults.
#[derive(Debug, Clone, Copy)]
pub struct EnvConfig {
    /// Patch CREMI above this belongs to the erroneous-patch set E_t.
    pub tau_err: f64,
    /// Gaussian sigma for the watershed altitude map.
    pub sigma_smooth: f64,
    /// Gaussian sigma for point-map bumps.
    pub sigma_point: f64,
    pub max_locator_steps: usize,
    pub max_selector_steps_train: usize,
    pub max_selector_steps_eval: usize,
    pub max_splitter_steps: usize,
    pub max_merger_steps: usize,
    /// Training terminates when CREMI improves less than this over
    /// `improve_window` locator steps.
    pub improve_eps: f64,
    pub improve_window: usize,
    /// Training terminates when CREMI falls below this.
    pub low_cremi: f64,
    /// Evaluation terminates when the changed-pixel fraction stays below
    /// this for `stagnation_window` consecutive locator steps.
    pub stagnation_frac: f64,
    pub stagnation_window: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            tau_err: 0.02,
            sigma_smooth: 2.0,
            sigma_point: 8.0,
            max_locator_steps: 16,
            max_selector_steps_train: 6,
            max_selector_steps_eval: 4,
            max_splitter_steps: 6,
            max_merger_steps: 6,
            improve_eps: 1e-4,
            improve_window: 3,
            low_cremi: 0.01,
            stagnation_frac: 0.001,
            stagnation_window: 2,
        }
    }
}

impl EnvConfig {
    pub fn max_selector_steps(&self, mode: Mode) -> usize {
        match mode {
            Mode::Train => self.max_selector_steps_train,
            Mode::Eval => self.max_selector_steps_eval,
        }
    }
}

/// Ground-truth access for reward computation and scripted policies. Only
/// training and evaluation expose it to policies; trained-policy inference
/// reads it for reporting alone.
#[derive(Debug, Clone, Copy)]
pub struct ErrorOracle<'a> {
    pub gt: &'a LabelMap,
    pub tau_err: f64,
}

/// Per-agent observation bundle captured before each step.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub em: EmImage,
    pub label: LabelMap,
    /// Absent for the selector, whose input has only two channels.
    pub point: Option<PointMap>,
    pub t: usize,
}

/// What a step did, for logs and replay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionInfo {
    Stop,
    Grid { index: usize, pixel: (usize, usize) },
    Choose(AgentKind),
}

#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub cremi_before: f64,
    pub cremi_after: f64,
    pub action: ActionInfo,
}

/// Transition record: next observation, reward, episode-done flag and
/// diagnostics.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: EpisodeState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One recorded step of an episode: the observation the agent acted on plus
/// what happened.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub state: EpisodeState,
    pub action: usize,
    pub reward: f64,
    pub info: StepInfo,
}

/// Full trajectory of one episode, with nested corrector-episode accounting.
#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub kind: AgentKind,
    pub steps: Vec<TraceStep>,
    /// Observation after the last step, for bootstrap values.
    pub final_state: EpisodeState,
    /// True when the episode hit a step cap instead of a stop action or a
    /// termination rule.
    pub truncated: bool,
    /// Corrector episodes launched, including nested ones.
    pub corrector_episodes: usize,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn records(&self) -> Vec<TrajectoryRecord> {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| TrajectoryRecord {
                step: i,
                agent: self.kind,
                action: s.action,
                reward: s.reward,
                cremi_before: s.info.cremi_before,
                cremi_after: s.info.cremi_after,
            })
            .collect()
    }
}

/// Line-oriented trajectory log record for replay and debugging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub agent: AgentKind,
    pub action: usize,
    pub reward: f64,
    pub cremi_before: f64,
    pub cremi_after: f64,
}

impl TrajectoryRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {:.12e} {:.12e} {:.12e}",
            self.step, self.agent, self.action, self.reward, self.cremi_before, self.cremi_after
        )
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::Format(format!("trajectory record needs 6 fields: '{line}'")));
        }
        let parse_f =
            |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("bad float '{s}': {e}")));
        Ok(Self {
            step: fields[0]
                .parse()
                .map_err(|e| Error::Format(format!("bad step '{}': {e}", fields[0])))?,
            agent: AgentKind::parse(fields[1])
                .map_err(|_| Error::Format(format!("bad agent kind '{}'", fields[1])))?,
            action: fields[2]
                .parse()
                .map_err(|e| Error::Format(format!("bad action '{}': {e}", fields[2])))?,
            reward: parse_f(fields[3])?,
            cremi_before: parse_f(fields[4])?,
            cremi_after: parse_f(fields[5])?,
        })
    }
}

/// Monotone fresh-label source shared by an environment and its nested patch
/// workspaces, so labels created inside a patch never collide on write-back.
#[derive(Debug, Clone)]
pub struct FreshLabels(Arc<AtomicU32>);

impl FreshLabels {
    pub fn starting_after(map: &LabelMap) -> Self {
        Self(Arc::new(AtomicU32::new(map.max_label().saturating_add(1))))
    }

    pub fn alloc(&self) -> u32 {
        self.0.fetch_add(1, Ordering::Relaxed)
    }

    /// Next label that would be handed out, without consuming it.
    pub fn peek(&self) -> u32 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Patch-level CREMI with the degenerate case pinned: a patch whose ground
/// truth is entirely background carries no correctable signal and scores 0.
pub fn patch_cremi(gt: &LabelMap, seg: &LabelMap) -> f64 {
    match cremi_score(gt, seg) {
        Ok(report) => report.cremi,
        Err(Error::UndefinedMetric(_)) => 0.0,
        Err(e) => panic!("patch_cremi on malformed inputs: {e}"),
    }
}
