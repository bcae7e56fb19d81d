//! Patch-level environments: the splitter and merger MDPs and the selector
//! episode that orchestrates them on one cropped patch.

use rand_chacha::ChaCha8Rng;

use crate::editops::{
    gaussian_smooth, merge_segments, render_point, segment_at, watershed_split, AltitudeMap,
};
use crate::error::{Error, Result};
use crate::policy::{Policy, PolicyView};
use crate::raster::{EmImage, GridSpec, LabelMap, PointMap};
use crate::synth::PatchCase;

use super::{
    corrector_reward, patch_cremi, selector_reward, ActionInfo, AgentKind, EnvConfig, EpisodeState,
    EpisodeTrace, ErrorOracle, FreshLabels, Mode, StepInfo, StepOutcome, TraceStep,
};

pub const SELECTOR_ACTION_MERGER: usize = 0;
pub const SELECTOR_ACTION_SPLITTER: usize = 1;
pub const SELECTOR_ACTION_STOP: usize = 2;

/// One patch workspace: immutable EM evidence and ground truth, a mutable
/// working label map, and the cached watershed altitude.
#[derive(Debug, Clone)]
pub struct PatchEnv {
    pub em: EmImage,
    pub gt: LabelMap,
    pub labels: LabelMap,
    pub altitude: AltitudeMap,
    pub grid: GridSpec,
    pub cfg: EnvConfig,
    pub fresh: FreshLabels,
    /// True when this patch is a cropped view of a larger map whose edits
    /// will be written back; segments touching the border then continue
    /// outside the window.
    pub embedded: bool,
}

impl PatchEnv {
    pub fn new(
        em: EmImage,
        gt: LabelMap,
        labels: LabelMap,
        grid: GridSpec,
        cfg: EnvConfig,
        fresh: FreshLabels,
    ) -> Result<Self> {
        if !em.same_dims(&gt) || !em.same_dims(&labels) {
            return Err(Error::Dimension(format!(
                "patch rasters disagree: em {}x{}, gt {}x{}, labels {}x{}",
                em.width(),
                em.height(),
                gt.width(),
                gt.height(),
                labels.width(),
                labels.height()
            )));
        }
        if !grid.fits_within(em.width(), em.height()) {
            return Err(Error::Dimension(format!(
                "grid does not fit inside a {}x{} patch",
                em.width(),
                em.height()
            )));
        }
        let altitude = gaussian_smooth(&em, cfg.sigma_smooth);
        Ok(Self { em, gt, labels, altitude, grid, cfg, fresh, embedded: false })
    }

    /// Workspace over a generated patch case, starting from its erroneous map.
    pub fn from_case(case: &PatchCase, grid: GridSpec, cfg: EnvConfig) -> Result<Self> {
        let fresh = FreshLabels::starting_after(&case.seg);
        Self::new(case.em.clone(), case.gt.clone(), case.seg.clone(), grid, cfg, fresh)
    }

    pub fn cremi(&self) -> f64 {
        patch_cremi(&self.gt, &self.labels)
    }

    pub fn in_error_set(&self) -> bool {
        self.cremi() > self.cfg.tau_err
    }

    fn oracle_for(&self, expose: bool) -> Option<ErrorOracle<'_>> {
        expose.then_some(ErrorOracle { gt: &self.gt, tau_err: self.cfg.tau_err })
    }
}

/// In-flight corrector episode over one patch workspace.
pub struct CorrectorEpisode<'a> {
    env: &'a mut PatchEnv,
    kind: AgentKind,
    point: PointMap,
    pending_merge: Option<u32>,
    t: usize,
}

impl<'a> CorrectorEpisode<'a> {
    pub fn new(env: &'a mut PatchEnv, kind: AgentKind) -> Self {
        assert!(
            matches!(kind, AgentKind::Splitter | AgentKind::Merger),
            "corrector episode for {kind}"
        );
        let point = PointMap::new(env.em.width(), env.em.height(), 0.0)
            .expect("patch dims already validated");
        Self { env, kind, point, pending_merge: None, t: 0 }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn pending_merge(&self) -> Option<u32> {
        self.pending_merge
    }

    pub fn max_steps(&self) -> usize {
        match self.kind {
            AgentKind::Splitter => self.env.cfg.max_splitter_steps,
            _ => self.env.cfg.max_merger_steps,
        }
    }

    pub fn state(&self) -> EpisodeState {
        EpisodeState {
            em: self.env.em.clone(),
            label: self.env.labels.clone(),
            point: Some(self.point.clone()),
            t: self.t,
        }
    }

    pub fn env(&self) -> &PatchEnv {
        self.env
    }

    /// Applies one corrector action. Grid actions on the splitter run a
    /// watershed split at the grid pixel; on the merger they accumulate a
    /// segment, and every second grid action applies the merge. The last grid
    /// index is the stop action.
    pub fn step(&mut self, action: usize) -> StepOutcome {
        let grid_len = self.env.grid.len();
        assert!(action <= grid_len, "action {action} outside {}-action space", grid_len + 1);
        let before = self.env.cremi();
        let in_error_set = before > self.env.cfg.tau_err;

        let (reward, info, stopped) = if action == grid_len {
            let correct = before <= self.env.cfg.tau_err;
            let reward = corrector_reward(true, correct, in_error_set, before, before);
            (reward, StepInfo { cremi_before: before, cremi_after: before, action: ActionInfo::Stop }, true)
        } else {
            let pixel = self.env.grid.point_to_pixel(action).expect("action index checked");
            self.point = render_point(&self.point, pixel, self.env.cfg.sigma_point);
            match self.kind {
                AgentKind::Splitter => {
                    let fresh = self.env.fresh.alloc();
                    match watershed_split(&self.env.labels, &self.env.altitude, pixel, fresh) {
                        Ok(next) => self.env.labels = next,
                        Err(Error::NoOp(_)) => {}
                        Err(e) => panic!("watershed on validated patch failed: {e}"),
                    }
                    let after = self.env.cremi();
                    let reward = corrector_reward(false, false, in_error_set, before, after);
                    let info = StepInfo {
                        cremi_before: before,
                        cremi_after: after,
                        action: ActionInfo::Grid { index: action, pixel },
                    };
                    (reward, info, false)
                }
                AgentKind::Merger => {
                    let picked = segment_at(&self.env.labels, pixel);
                    let info_action = ActionInfo::Grid { index: action, pixel };
                    match self.pending_merge.take() {
                        // First grid action of a pair: nothing changes yet.
                        None => {
                            self.pending_merge = Some(picked);
                            let info = StepInfo {
                                cremi_before: before,
                                cremi_after: before,
                                action: info_action,
                            };
                            (0.0, info, false)
                        }
                        Some(first) => {
                            let merged = if first != 0 && picked != 0 && first != picked {
                                match merge_segments(&self.env.labels, first, picked) {
                                    Ok(next) => {
                                        self.env.labels = next;
                                        true
                                    }
                                    Err(Error::Adjacency(_))
                                    | Err(Error::Label(_))
                                    | Err(Error::NoOp(_)) => false,
                                    Err(e) => panic!("merge on validated patch failed: {e}"),
                                }
                            } else {
                                false
                            };
                            let after = self.env.cremi();
                            let reward = if merged {
                                corrector_reward(false, false, in_error_set, before, after)
                            } else {
                                -1.0
                            };
                            let info = StepInfo {
                                cremi_before: before,
                                cremi_after: after,
                                action: info_action,
                            };
                            (reward, info, false)
                        }
                    }
                }
                _ => unreachable!("corrector kinds only"),
            }
        };

        self.t += 1;
        let done = stopped || self.t >= self.max_steps();
        StepOutcome { state: self.state(), reward, done, info }
    }
}

/// Runs one full corrector episode under the given policy.
pub fn run_corrector_episode(
    env: &mut PatchEnv,
    kind: AgentKind,
    policy: &mut dyn Policy,
    expose_oracle: bool,
    rng: &mut ChaCha8Rng,
) -> EpisodeTrace {
    let cfg = env.cfg;
    let mut ep = CorrectorEpisode::new(env, kind);
    let mut steps = Vec::new();
    loop {
        let state = ep.state();
        let action = {
            let view = PolicyView {
                kind,
                state: &state,
                grid: ep.env.grid,
                corrector_grid: ep.env.grid,
                patch_size: ep.env.em.width(),
                altitude: Some(&ep.env.altitude),
                pending_merge: ep.pending_merge,
                embedded: ep.env.embedded,
                oracle: ep.env.oracle_for(expose_oracle),
                cfg: &cfg,
            };
            policy.choose(&view, rng)
        };
        let outcome = ep.step(action);
        let stopped = matches!(outcome.info.action, ActionInfo::Stop);
        steps.push(TraceStep { state, action, reward: outcome.reward, info: outcome.info });
        if outcome.done {
            return EpisodeTrace {
                kind,
                steps,
                final_state: outcome.state,
                truncated: !stopped,
                corrector_episodes: 1,
            };
        }
    }
}

/// Runs one selector episode: a series of (merger | splitter | stop)
/// decisions, each launching a full corrector episode on the patch. The stop
/// action ends the episode and returns control to the locator.
pub fn run_selector_episode(
    env: &mut PatchEnv,
    agents: &mut crate::policy::AgentSet,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> EpisodeTrace {
    let cfg = env.cfg;
    let max_steps = cfg.max_selector_steps(mode);
    let mut steps = Vec::new();
    let mut corrector_episodes = 0usize;
    let mut t = 0usize;
    loop {
        let state = EpisodeState { em: env.em.clone(), label: env.labels.clone(), point: None, t };
        let action = {
            let view = PolicyView {
                kind: AgentKind::Selector,
                state: &state,
                grid: env.grid,
                corrector_grid: env.grid,
                patch_size: env.em.width(),
                altitude: Some(&env.altitude),
                pending_merge: None,
                embedded: env.embedded,
                oracle: env.oracle_for(agents.expose_oracle),
                cfg: &cfg,
            };
            agents.selector.choose(&view, rng)
        };
        let before = env.cremi();
        let (reward, info, stopped) = match action {
            SELECTOR_ACTION_STOP => {
                let correct = before <= cfg.tau_err;
                let reward = selector_reward(true, correct, before, before);
                let info = StepInfo {
                    cremi_before: before,
                    cremi_after: before,
                    action: ActionInfo::Stop,
                };
                (reward, info, true)
            }
            SELECTOR_ACTION_MERGER | SELECTOR_ACTION_SPLITTER => {
                let kind = if action == SELECTOR_ACTION_MERGER {
                    AgentKind::Merger
                } else {
                    AgentKind::Splitter
                };
                let expose = agents.expose_oracle;
                let policy = agents.corrector_mut(kind);
                let inner = run_corrector_episode(env, kind, policy, expose, rng);
                corrector_episodes += inner.corrector_episodes;
                let after = env.cremi();
                let reward = selector_reward(false, false, before, after);
                let info = StepInfo {
                    cremi_before: before,
                    cremi_after: after,
                    action: ActionInfo::Choose(kind),
                };
                (reward, info, false)
            }
            other => panic!("selector action {other} outside 3-action space"),
        };
        steps.push(TraceStep { state, action, reward, info });
        t += 1;
        let done = stopped || t >= max_steps;
        if done {
            let final_state =
                EpisodeState { em: env.em.clone(), label: env.labels.clone(), point: None, t };
            return EpisodeTrace {
                kind: AgentKind::Selector,
                steps,
                final_state,
                truncated: !stopped,
                corrector_episodes,
            };
        }
    }
}
