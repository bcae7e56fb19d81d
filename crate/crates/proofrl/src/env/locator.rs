//! The locator MDP: picking erroneous patches on a coarse grid over one
//! sub-image, delegating each pick to a full selector episode, and deciding
//! when the sub-image is clean.

use rand_chacha::ChaCha8Rng;

use crate::editops::render_point;
use crate::error::{Error, Result};
use crate::policy::{AgentSet, PolicyView};
use crate::raster::{EmImage, GridSpec, LabelMap, PatchRef, PointMap};

use super::patch::{run_selector_episode, PatchEnv};
use super::{
    locator_reward, patch_cremi, ActionInfo, AgentKind, EnvConfig, EpisodeState, EpisodeTrace,
    ErrorOracle, FreshLabels, Mode, StepInfo, StepOutcome, TraceStep,
};

/// One sub-image workspace for a locator episode.
#[derive(Debug, Clone)]
pub struct LocatorEnv {
    pub em: EmImage,
    pub gt: LabelMap,
    pub labels: LabelMap,
    pub grid: GridSpec,
    pub patch_size: usize,
    pub corrector_grid: GridSpec,
    pub cfg: EnvConfig,
    pub fresh: FreshLabels,
    point: PointMap,
    t: usize,
    inner_episodes: usize,
}

impl LocatorEnv {
    /// Standard geometry: 7x7 locator grid and 128x128 patches with a 15x15
    /// corrector grid, on a 512x512 sub-image.
    pub fn new(em: EmImage, gt: LabelMap, labels: LabelMap, cfg: EnvConfig) -> Result<Self> {
        Self::with_geometry(em, gt, labels, cfg, GridSpec::locator(), 128, GridSpec::corrector())
    }

    pub fn with_geometry(
        em: EmImage,
        gt: LabelMap,
        labels: LabelMap,
        cfg: EnvConfig,
        grid: GridSpec,
        patch_size: usize,
        corrector_grid: GridSpec,
    ) -> Result<Self> {
        if !em.same_dims(&gt) || !em.same_dims(&labels) {
            return Err(Error::Dimension(format!(
                "sub-image rasters disagree: em {}x{}, gt {}x{}, labels {}x{}",
                em.width(),
                em.height(),
                gt.width(),
                gt.height(),
                labels.width(),
                labels.height()
            )));
        }
        if !grid.fits_within(em.width(), em.height()) {
            return Err(Error::Dimension("locator grid does not fit the sub-image".into()));
        }
        // Every grid point's centered patch must lie inside the sub-image.
        for index in [0, grid.len() - 1] {
            let (x, y) = grid.point_to_pixel(index)?;
            let patch = PatchRef::centered(x, y, patch_size)?;
            if patch.origin_x + patch_size > em.width() || patch.origin_y + patch_size > em.height()
            {
                return Err(Error::Dimension(format!(
                    "patch at grid point {index} exceeds the sub-image"
                )));
            }
        }
        if !corrector_grid.fits_within(patch_size, patch_size) {
            return Err(Error::Dimension("corrector grid does not fit the patch".into()));
        }
        let point = PointMap::new(em.width(), em.height(), 0.0)?;
        let fresh = FreshLabels::starting_after(&labels);
        Ok(Self {
            em,
            gt,
            labels,
            grid,
            patch_size,
            corrector_grid,
            cfg,
            fresh,
            point,
            t: 0,
            inner_episodes: 0,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Corrector episodes launched so far (through nested selector episodes).
    pub fn corrector_episodes(&self) -> usize {
        self.inner_episodes
    }

    /// Sub-image-level CREMI of the working map.
    pub fn cremi(&self) -> f64 {
        patch_cremi(&self.gt, &self.labels)
    }

    fn patch_at(&self, index: usize) -> Result<PatchRef> {
        let (x, y) = self.grid.point_to_pixel(index)?;
        PatchRef::centered(x, y, self.patch_size)
    }

    /// CREMI of the cropped patch pair at a grid point.
    pub fn patch_cremi_at(&self, index: usize) -> Result<f64> {
        let patch = self.patch_at(index)?;
        Ok(patch_cremi(&self.gt.crop(&patch)?, &self.labels.crop(&patch)?))
    }

    /// E_t: grid indices whose patch deviates from ground truth beyond the
    /// threshold.
    pub fn error_set(&self) -> Vec<usize> {
        (0..self.grid.len())
            .filter(|&i| self.patch_cremi_at(i).expect("grid validated") > self.cfg.tau_err)
            .collect()
    }

    pub fn state(&self) -> EpisodeState {
        EpisodeState {
            em: self.em.clone(),
            label: self.labels.clone(),
            point: Some(self.point.clone()),
            t: self.t,
        }
    }

    /// Applies one locator action: the last index is the stop action
    /// (correct iff E_t is empty); any other index crops the centered patch,
    /// stamps the point map, runs a full selector episode there and writes
    /// the result back.
    pub fn step(
        &mut self,
        action: usize,
        agents: &mut AgentSet,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> StepOutcome {
        let grid_len = self.grid.len();
        assert!(action <= grid_len, "action {action} outside {}-action space", grid_len + 1);
        let before = self.cremi();

        let (reward, info, stopped) = if action == grid_len {
            let correct = self.error_set().is_empty();
            let reward = locator_reward(true, correct, false, before, before);
            (reward, StepInfo { cremi_before: before, cremi_after: before, action: ActionInfo::Stop }, true)
        } else {
            let pixel = self.grid.point_to_pixel(action).expect("action index checked");
            let in_error_set =
                self.patch_cremi_at(action).expect("action index checked") > self.cfg.tau_err;
            self.point = render_point(&self.point, pixel, self.cfg.sigma_point);
            let patch = self.patch_at(action).expect("geometry validated");
            let mut patch_env = PatchEnv::new(
                self.em.crop(&patch).expect("geometry validated"),
                self.gt.crop(&patch).expect("geometry validated"),
                self.labels.crop(&patch).expect("geometry validated"),
                self.corrector_grid,
                self.cfg,
                self.fresh.clone(),
            )
            .expect("patch geometry validated");
            patch_env.embedded = true;
            let inner = run_selector_episode(&mut patch_env, agents, mode, rng);
            self.inner_episodes += inner.corrector_episodes;
            self.labels.blit(&patch, &patch_env.labels).expect("patch write-back");
            let after = self.cremi();
            let reward = locator_reward(false, false, in_error_set, before, after);
            let info = StepInfo {
                cremi_before: before,
                cremi_after: after,
                action: ActionInfo::Grid { index: action, pixel },
            };
            (reward, info, false)
        };

        self.t += 1;
        let done = stopped || self.t >= self.cfg.max_locator_steps;
        StepOutcome { state: self.state(), reward, done, info }
    }
}

/// Runs one locator episode to termination.
///
/// The episode ends on the stop action, at the step cap, and additionally:
/// in training, when CREMI has improved less than `improve_eps` over the last
/// `improve_window` steps or has fallen below `low_cremi`; in evaluation,
/// when the changed-pixel fraction stayed below `stagnation_frac` for
/// `stagnation_window` consecutive steps (no notable change on the label map).
pub fn run_locator_episode(
    env: &mut LocatorEnv,
    agents: &mut AgentSet,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> EpisodeTrace {
    let cfg = env.cfg;
    let mut steps = Vec::new();
    let mut cremi_history = vec![env.cremi()];
    let mut change_history: Vec<f64> = Vec::new();
    loop {
        let state = env.state();
        let action = {
            let view = PolicyView {
                kind: AgentKind::Locator,
                state: &state,
                grid: env.grid,
                corrector_grid: env.corrector_grid,
                patch_size: env.patch_size,
                altitude: None,
                pending_merge: None,
                embedded: false,
                oracle: agents
                    .expose_oracle
                    .then_some(ErrorOracle { gt: &env.gt, tau_err: cfg.tau_err }),
                cfg: &cfg,
            };
            agents.locator.choose(&view, rng)
        };
        let labels_before = env.labels.clone();
        let outcome = env.step(action, agents, mode, rng);
        let changed = labels_before.count_diff(&env.labels) as f64 / labels_before.len() as f64;
        change_history.push(changed);
        cremi_history.push(outcome.info.cremi_after);
        let stopped = matches!(outcome.info.action, ActionInfo::Stop);
        steps.push(TraceStep { state, action, reward: outcome.reward, info: outcome.info });
        let mut done = outcome.done;
        match mode {
            Mode::Train => {
                let n = cremi_history.len();
                if n > cfg.improve_window {
                    let improvement =
                        cremi_history[n - 1 - cfg.improve_window] - cremi_history[n - 1];
                    if improvement < cfg.improve_eps {
                        done = true;
                    }
                }
                if cremi_history[cremi_history.len() - 1] < cfg.low_cremi {
                    done = true;
                }
            }
            Mode::Eval => {
                let n = change_history.len();
                if n >= cfg.stagnation_window
                    && change_history[n - cfg.stagnation_window..]
                        .iter()
                        .all(|&f| f < cfg.stagnation_frac)
                {
                    done = true;
                }
            }
        }
        if done {
            return EpisodeTrace {
                kind: AgentKind::Locator,
                steps,
                final_state: env.state(),
                truncated: !stopped,
                corrector_episodes: env.inner_episodes,
            };
        }
    }
}
