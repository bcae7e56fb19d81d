//! Advantage actor-critic training of the four agents in bottom-up order:
//! merger and splitter first, then the selector against frozen correctors,
//! then the locator against the frozen selector stack.
//!
//! The asynchronous contract: N workers each own a private environment,
//! snapshot the shared parameters before every rollout, and apply their
//! accumulated gradients under a lock. With one worker the run is a pure
//! function of (config, seed); with several, acceptance is statistical.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{
    run_corrector_episode, run_locator_episode, run_selector_episode, AgentKind, EpisodeTrace,
    LocatorEnv, Mode, PatchEnv,
};
use crate::error::{Error, Result};
use crate::policy::{
    encode_observation, AgentSet, NetConfig, NetPolicy, ObservationTensor, Policy, PolicyNet,
    RandomPolicy,
};
use crate::synth::derive_seed;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub n_step: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub workers: usize,
    pub episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            gamma: 0.99,
            n_step: 5,
            entropy_coef: 0.01,
            value_coef: 0.5,
            workers: 1,
            episodes: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Parameter("learning_rate must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Parameter("gamma must lie in (0, 1]".into()));
        }
        if self.n_step == 0 {
            return Err(Error::Parameter("n_step must be >= 1".into()));
        }
        if self.workers == 0 || self.episodes == 0 {
            return Err(Error::Parameter("workers and episodes must be >= 1".into()));
        }
        Ok(())
    }
}

/// n-step discounted returns with critic bootstrap at the horizon cut.
///
/// `values[t]` is the critic estimate for the state the t-th reward followed;
/// `terminal` says whether the episode truly ended (no bootstrap past the
/// last step), otherwise `bootstrap_value` estimates the cut-off tail.
/// Returns `(return, advantage)` pairs, advantage = return - value.
pub fn compute_returns(
    rewards: &[f64],
    values: &[f64],
    terminal: bool,
    bootstrap_value: f64,
    gamma: f64,
    n_step: usize,
) -> Vec<(f64, f64)> {
    assert_eq!(rewards.len(), values.len(), "one value per reward");
    assert!(n_step >= 1);
    let len = rewards.len();
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let horizon = n_step.min(len - t);
        let mut ret = 0.0;
        let mut discount = 1.0;
        for k in 0..horizon {
            ret += discount * rewards[t + k];
            discount *= gamma;
        }
        let cut = t + horizon;
        let tail = if cut < len {
            values[cut]
        } else if terminal {
            0.0
        } else {
            bootstrap_value
        };
        ret += discount * tail;
        out.push((ret, ret - values[t]));
    }
    out
}

/// First/second-moment state for the Adam optimizer.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// Standard Adam update with bias correction (beta1 = 0.9, beta2 = 0.999,
/// eps = 1e-8).
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState, learning_rate: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// One gradient sample: an observation, the action taken, and its n-step
/// return and advantage.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub obs: ObservationTensor,
    pub action: usize,
    pub ret: f64,
    pub advantage: f64,
}

/// A2C loss over a batch and its gradient with respect to every parameter:
/// policy term `-mean(log pi(a|s) * advantage)`, value term
/// `value_coef * mean((return - V)^2)`, minus `entropy_coef * mean(entropy)`.
pub fn loss_and_gradients(
    net: &PolicyNet,
    batch: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Parameter("loss over an empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = vec![0.0; net.num_params()];
    for sample in batch {
        let cache = net.forward_cached(&sample.obs)?;
        let logits = &cache.logits;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|&e| e / z).collect();
        let logp: Vec<f64> = logits.iter().map(|&l| l - max - z.ln()).collect();
        let entropy: f64 = -probs.iter().zip(&logp).map(|(p, lp)| p * lp).sum::<f64>();

        loss += scale
            * (-logp[sample.action] * sample.advantage
                + cfg.value_coef * (sample.ret - cache.value).powi(2)
                - cfg.entropy_coef * entropy);

        let mut dlogits = vec![0.0; logits.len()];
        for j in 0..logits.len() {
            let indicator = if j == sample.action { 1.0 } else { 0.0 };
            let policy_term = sample.advantage * (probs[j] - indicator);
            let entropy_term = cfg.entropy_coef * probs[j] * (logp[j] + entropy);
            dlogits[j] = scale * (policy_term + entropy_term);
        }
        let dvalue = scale * cfg.value_coef * 2.0 * (cache.value - sample.ret);
        net.backward(&cache, &dlogits, dvalue, &mut grads);
    }
    if !loss.is_finite() {
        return Err(Error::TrainingFault(format!(
            "non-finite loss over {} samples (first return {}, first advantage {})",
            batch.len(),
            batch[0].ret,
            batch[0].advantage
        )));
    }
    Ok((loss, grads))
}

/// Frozen lower-stage agents available as inner runners. Bottom-up order:
/// correctors need nothing, the selector needs both correctors, the locator
/// additionally needs the selector.
#[derive(Default)]
pub struct TrainStage {
    pub splitter: Option<PolicyNet>,
    pub merger: Option<PolicyNet>,
    pub selector: Option<PolicyNet>,
}

impl TrainStage {
    pub fn validate_for(&self, kind: AgentKind) -> Result<()> {
        let missing: Vec<&str> = match kind {
            AgentKind::Splitter | AgentKind::Merger => Vec::new(),
            AgentKind::Selector => [
                self.merger.is_none().then_some("merger"),
                self.splitter.is_none().then_some("splitter"),
            ]
            .into_iter()
            .flatten()
            .collect(),
            AgentKind::Locator => [
                self.merger.is_none().then_some("merger"),
                self.splitter.is_none().then_some("splitter"),
                self.selector.is_none().then_some("selector"),
            ]
            .into_iter()
            .flatten()
            .collect(),
        };
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Stage(format!(
                "training the {kind} requires trained inner agents: {}",
                missing.join(", ")
            )))
        }
    }

    /// Agent set for rolling out the trainee: the trainee samples, frozen
    /// inner agents act greedily, unused slots fall back to random.
    fn agent_set(&self, kind: AgentKind, trainee: PolicyNet) -> AgentSet {
        let frozen = |net: &Option<PolicyNet>| -> Box<dyn Policy> {
            match net {
                Some(net) => Box::new(NetPolicy::greedy(net.clone())),
                None => Box::new(RandomPolicy),
            }
        };
        let mut agents = AgentSet {
            locator: Box::new(RandomPolicy),
            selector: frozen(&self.selector),
            splitter: frozen(&self.splitter),
            merger: frozen(&self.merger),
            expose_oracle: false,
        };
        agents.set(kind, Box::new(NetPolicy::sampling(trainee)));
        agents
    }
}

/// One training environment: a patch workspace for corrector/selector
/// episodes or a sub-image for locator episodes.
pub enum TrainTask {
    Patch(PatchEnv),
    Image(LocatorEnv),
}

/// Per-episode log record: `(episode, steps, return, mean cremi_after)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub steps: usize,
    pub ret: f64,
    pub mean_cremi_after: f64,
}

impl EpisodeRecord {
    pub fn to_line(&self) -> String {
        format!("{} {} {:.12e} {:.12e}", self.episode, self.steps, self.ret, self.mean_cremi_after)
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!("episode record needs 4 fields: '{line}'")));
        }
        Ok(Self {
            episode: fields[0].parse().map_err(|e| Error::Format(format!("bad episode: {e}")))?,
            steps: fields[1].parse().map_err(|e| Error::Format(format!("bad steps: {e}")))?,
            ret: fields[2].parse().map_err(|e| Error::Format(format!("bad return: {e}")))?,
            mean_cremi_after: fields[3]
                .parse()
                .map_err(|e| Error::Format(format!("bad cremi: {e}")))?,
        })
    }
}

pub struct TrainOutput {
    pub net: PolicyNet,
    pub log: Vec<EpisodeRecord>,
    /// Parameters went non-finite; `net` holds the last finite state.
    pub diverged: bool,
}

fn run_task_episode(
    task: &mut TrainTask,
    kind: AgentKind,
    agents: &mut AgentSet,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> EpisodeTrace {
    match (task, kind) {
        (TrainTask::Patch(env), AgentKind::Splitter | AgentKind::Merger) => {
            let expose = agents.expose_oracle;
            run_corrector_episode(env, kind, agents.corrector_mut(kind), expose, rng)
        }
        (TrainTask::Patch(env), AgentKind::Selector) => {
            run_selector_episode(env, agents, mode, rng)
        }
        (TrainTask::Image(env), AgentKind::Locator) => run_locator_episode(env, agents, mode, rng),
        _ => panic!("task/agent mismatch for {kind}"),
    }
}

struct SharedTrain {
    params: Vec<f64>,
    last_finite: Vec<f64>,
    adam: AdamState,
    log: Vec<EpisodeRecord>,
    diverged: bool,
}

/// Trains one agent with the A3C-style loop. The environment factory maps an
/// episode index to a fresh task; inner agents come frozen from `stage`.
pub fn train_agent(
    kind: AgentKind,
    stage: &TrainStage,
    cfg: &TrainConfig,
    net_cfg: NetConfig,
    factory: &(dyn Fn(u64) -> TrainTask + Sync),
) -> Result<TrainOutput> {
    cfg.validate()?;
    stage.validate_for(kind)?;
    if net_cfg.kind != kind {
        return Err(Error::Parameter(format!(
            "network config is for the {} but training the {kind}",
            net_cfg.kind
        )));
    }
    let template = PolicyNet::new(net_cfg)?;
    let shared = Mutex::new(SharedTrain {
        params: template.params.clone(),
        last_finite: template.params.clone(),
        adam: AdamState::new(template.num_params()),
        log: Vec::with_capacity(cfg.episodes),
        diverged: false,
    });
    let stop = AtomicBool::new(false);

    let worker = |worker_id: usize| -> Result<()> {
        let mut episode = worker_id as u64;
        while (episode as usize) < cfg.episodes && !stop.load(Ordering::Relaxed) {
            let snapshot = {
                let guard = shared.lock().expect("training lock");
                guard.params.clone()
            };
            let mut trainee = template.clone();
            trainee.params = snapshot;

            let mut task = factory(episode);
            let mut agents = stage.agent_set(kind, trainee.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, episode));
            let trace = run_task_episode(&mut task, kind, &mut agents, Mode::Train, &mut rng);

            let mut batch = Vec::with_capacity(trace.steps.len());
            let mut values = Vec::with_capacity(trace.steps.len());
            for step in &trace.steps {
                let obs = encode_observation(&step.state, kind);
                let (_, value) = trainee.forward(&obs)?;
                values.push(value);
                batch.push((obs, step.action));
            }
            let rewards: Vec<f64> = trace.steps.iter().map(|s| s.reward).collect();
            let bootstrap = if trace.truncated {
                let obs = encode_observation(&trace.final_state, kind);
                trainee.forward(&obs)?.1
            } else {
                0.0
            };
            let returns =
                compute_returns(&rewards, &values, !trace.truncated, bootstrap, cfg.gamma, cfg.n_step);
            let samples: Vec<TrainSample> = batch
                .into_iter()
                .zip(&returns)
                .map(|((obs, action), &(ret, advantage))| TrainSample { obs, action, ret, advantage })
                .collect();
            let (_, grads) = loss_and_gradients(&trainee, &samples, cfg)?;

            let record = EpisodeRecord {
                episode,
                steps: trace.steps.len(),
                ret: trace.total_reward(),
                mean_cremi_after: trace
                    .steps
                    .iter()
                    .map(|s| s.info.cremi_after)
                    .sum::<f64>()
                    / trace.steps.len().max(1) as f64,
            };

            {
                let mut guard = shared.lock().expect("training lock");
                let current = guard.params.clone();
                guard.last_finite = current;
                let SharedTrain { params, adam, .. } = &mut *guard;
                adam_update(params, &grads, adam, cfg.learning_rate);
                if !guard.params.iter().all(|p| p.is_finite()) {
                    let rollback = guard.last_finite.clone();
                    guard.params = rollback;
                    guard.diverged = true;
                    stop.store(true, Ordering::Relaxed);
                }
                guard.log.push(record);
            }
            episode += cfg.workers as u64;
        }
        Ok(())
    };

    if cfg.workers == 1 {
        worker(0)?;
    } else {
        let worker = &worker;
        std::thread::scope(|scope| -> Result<()> {
            let handles: Vec<_> =
                (0..cfg.workers).map(|w| scope.spawn(move || worker(w))).collect();
            for handle in handles {
                handle.join().map_err(|_| Error::TrainingFault("worker panicked".into()))??;
            }
            Ok(())
        })?;
    }

    let mut shared = shared.into_inner().expect("training lock");
    shared.log.sort_by_key(|r| r.episode);
    let mut net = template;
    net.params = shared.params;
    Ok(TrainOutput { net, log: shared.log, diverged: shared.diverged })
}

/// Evaluation summary over fixed episodes.
#[derive(Debug, Clone, Copy)]
pub struct EvalSummary {
    pub mean_return: f64,
    pub mean_final_cremi: f64,
}

/// Runs `episodes` evaluation-mode episodes and averages return and final
/// patch CREMI.
pub fn evaluate(
    kind: AgentKind,
    agents: &mut AgentSet,
    factory: &dyn Fn(u64) -> TrainTask,
    episodes: usize,
    seed: u64,
) -> EvalSummary {
    let mut total_return = 0.0;
    let mut total_cremi = 0.0;
    for episode in 0..episodes as u64 {
        let mut task = factory(episode);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, episode));
        let trace = run_task_episode(&mut task, kind, agents, Mode::Eval, &mut rng);
        total_return += trace.total_reward();
        total_cremi += match &task {
            TrainTask::Patch(env) => env.cremi(),
            TrainTask::Image(env) => env.cremi(),
        };
    }
    EvalSummary {
        mean_return: total_return / episodes.max(1) as f64,
        mean_final_cremi: total_cremi / episodes.max(1) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn returns_single_step() {
        let out = compute_returns(&[1.0], &[0.25], true, 0.0, 0.99, 5);
        assert_eq!(out, vec![(1.0, 0.75)]);
    }

    #[test]
    fn returns_two_step_geometric() {
        let out = compute_returns(&[0.0, 1.0], &[0.0, 0.0], true, 0.0, 0.99, 5);
        assert!((out[0].0 - 0.99).abs() < 1e-15);
        assert_eq!(out[1].0, 1.0);
    }

    #[test]
    fn returns_bootstrap_on_truncation() {
        // Horizon cut inside the trajectory bootstraps from the recorded
        // value; the trajectory end bootstraps from `bootstrap_value`.
        let rewards = [1.0, 1.0, 1.0];
        let values = [0.1, 0.2, 0.3];
        let out = compute_returns(&rewards, &values, false, 0.5, 0.9, 2);
        assert!((out[0].0 - (1.0 + 0.9 * 1.0 + 0.81 * 0.3)).abs() < 1e-12);
        assert!((out[2].0 - (1.0 + 0.9 * 0.5)).abs() < 1e-12);
    }

    #[test]
    fn returns_match_bruteforce_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let len = rng.gen_range(1..=10);
            let rewards: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let terminal: bool = rng.gen();
            let bootstrap = rng.gen_range(-1.0..1.0);
            let gamma = 0.97;
            let n_step = rng.gen_range(1..=6);
            let got = compute_returns(&rewards, &values, terminal, bootstrap, gamma, n_step);
            for t in 0..len {
                // Direct summation.
                let mut expect = 0.0;
                let mut k = 0;
                while k < n_step && t + k < len {
                    expect += gamma.powi(k as i32) * rewards[t + k];
                    k += 1;
                }
                let cut = t + k;
                let tail = if cut < len {
                    values[cut]
                } else if terminal {
                    0.0
                } else {
                    bootstrap
                };
                expect += gamma.powi(k as i32) * tail;
                assert!((got[t].0 - expect).abs() < 1e-12);
                assert!((got[t].1 - (expect - values[t])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut params = vec![1.0, -2.0, 3.0];
        let mut state = AdamState::new(3);
        adam_update(&mut params, &[0.0, 0.0, 0.0], &mut state, 0.1);
        assert_eq!(params, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut params = vec![0.0];
        let mut state = AdamState::new(1);
        let g = 0.3;
        adam_update(&mut params, &[g], &mut state, 0.01);
        // At t=1, m_hat = g and v_hat = g^2, so the step is lr * g / (|g| + eps).
        let expect = -0.01 * g / (g.abs() + ADAM_EPS);
        assert!((params[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        let mut params = vec![0.0];
        let mut state = AdamState::new(1);
        let mut prev = 0.0;
        for _ in 0..200 {
            prev = params[0];
            adam_update(&mut params, &[0.5], &mut state, 0.01);
        }
        let step = (params[0] - prev).abs();
        assert!((step - 0.01).abs() < 1e-4, "step {step}");
    }

    fn tiny_net() -> PolicyNet {
        PolicyNet::new(NetConfig {
            kind: AgentKind::Splitter,
            input_channels: 3,
            input_h: 16,
            input_w: 16,
            conv_channels: 4,
            fc_dim: 16,
            action_count: 4,
            seed: 3,
        })
        .unwrap()
    }

    fn random_obs(seed: u64) -> ObservationTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut obs = ObservationTensor::zeros(3, 16, 16);
        for v in &mut obs.data {
            *v = rng.gen_range(0.0..1.0);
        }
        obs
    }

    #[test]
    fn loss_reduces_to_entropy_term_when_isolated() {
        // Zero-initialized heads give a uniform policy and a zero value, so
        // zero advantages and returns equal to values leave only the entropy
        // term: -entropy_coef * ln(action_count).
        let net = tiny_net();
        let cfg = TrainConfig::default();
        let batch = vec![TrainSample { obs: random_obs(1), action: 2, ret: 0.0, advantage: 0.0 }];
        let (loss, _) = loss_and_gradients(&net, &batch, &cfg).unwrap();
        let expect = -cfg.entropy_coef * 4.0f64.ln();
        assert!((loss - expect).abs() < 1e-12, "loss {loss} vs {expect}");
    }

    #[test]
    fn doubling_entropy_coef_doubles_the_entropy_term() {
        let net = tiny_net();
        let mut cfg = TrainConfig::default();
        let batch = vec![TrainSample { obs: random_obs(2), action: 1, ret: 0.0, advantage: 0.0 }];
        cfg.entropy_coef = 0.01;
        let (l1, _) = loss_and_gradients(&net, &batch, &cfg).unwrap();
        cfg.entropy_coef = 0.02;
        let (l2, _) = loss_and_gradients(&net, &batch, &cfg).unwrap();
        assert!((l2 - 2.0 * l1).abs() < 1e-12);
    }

    #[test]
    fn stage_order_is_enforced() {
        let stage = TrainStage::default();
        assert!(stage.validate_for(AgentKind::Splitter).is_ok());
        assert!(stage.validate_for(AgentKind::Merger).is_ok());
        assert!(matches!(stage.validate_for(AgentKind::Selector), Err(Error::Stage(_))));
        assert!(matches!(stage.validate_for(AgentKind::Locator), Err(Error::Stage(_))));
    }

    #[test]
    fn episode_record_line_round_trip() {
        let rec = EpisodeRecord { episode: 7, steps: 4, ret: -1.5, mean_cremi_after: 0.25 };
        assert_eq!(EpisodeRecord::from_line(&rec.to_line()).unwrap(), rec);
    }
}
