//! Policy abstraction and three implementations: the scripted ground-truth
//! oracle, a uniform-random baseline, and the trainable actor-critic network.

mod encode;
mod net;
mod oracle;

pub use encode::{encode_observation, ObservationTensor};
pub use net::{ForwardCache, NetConfig, ParamGroup, PolicyNet};
pub use oracle::{OraclePolicy, RandomPolicy};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::editops::AltitudeMap;
use crate::env::{AgentKind, EnvConfig, EpisodeState, ErrorOracle, SELECTOR_ACTION_STOP};
use crate::raster::GridSpec;

/// Everything a policy may look at when choosing an action. Scripted oracle
/// policies additionally read the ground truth when it is exposed; network
/// policies only encode the observation channels.
pub struct PolicyView<'a> {
    pub kind: AgentKind,
    pub state: &'a EpisodeState,
    pub grid: GridSpec,
    /// Grid the correctors act on (equals `grid` for patch-level agents; the
    /// locator needs it to reason about patches it hands down).
    pub corrector_grid: GridSpec,
    /// Patch side length at corrector scale (the crop size the locator hands
    /// down; equals the raster size for patch-level agents).
    pub patch_size: usize,
    pub altitude: Option<&'a AltitudeMap>,
    /// First segment of a half-selected merger pair, if any.
    pub pending_merge: Option<u32>,
    /// Whether the raster is a cropped view of a larger map (edits write
    /// back, so border-touching segments continue outside).
    pub embedded: bool,
    pub oracle: Option<ErrorOracle<'a>>,
    pub cfg: &'a EnvConfig,
}

impl PolicyView<'_> {
    pub fn action_count(&self) -> usize {
        self.kind.action_count(&self.grid)
    }

    pub fn stop_action(&self) -> usize {
        match self.kind {
            AgentKind::Selector => SELECTOR_ACTION_STOP,
            _ => self.grid.len(),
        }
    }
}

/// An action-choosing agent.
pub trait Policy: Send {
    fn choose(&mut self, view: &PolicyView<'_>, rng: &mut ChaCha8Rng) -> usize;
}

/// One policy per agent kind, wired together for nested episodes.
pub struct AgentSet {
    pub locator: Box<dyn Policy>,
    pub selector: Box<dyn Policy>,
    pub splitter: Box<dyn Policy>,
    pub merger: Box<dyn Policy>,
    /// Scripted policies need ground truth; trained-policy inference must not
    /// see it.
    pub expose_oracle: bool,
}

impl AgentSet {
    /// Ground-truth-scripted policies for all four agents.
    pub fn oracle() -> Self {
        Self {
            locator: Box::new(OraclePolicy),
            selector: Box::new(OraclePolicy),
            splitter: Box::new(OraclePolicy),
            merger: Box::new(OraclePolicy),
            expose_oracle: true,
        }
    }

    /// Uniform-random policies for all four agents.
    pub fn random() -> Self {
        Self {
            locator: Box::new(RandomPolicy),
            selector: Box::new(RandomPolicy),
            splitter: Box::new(RandomPolicy),
            merger: Box::new(RandomPolicy),
            expose_oracle: false,
        }
    }

    pub fn corrector_mut(&mut self, kind: AgentKind) -> &mut dyn Policy {
        match kind {
            AgentKind::Splitter => self.splitter.as_mut(),
            AgentKind::Merger => self.merger.as_mut(),
            _ => panic!("{kind} is not a corrector"),
        }
    }

    pub fn set(&mut self, kind: AgentKind, policy: Box<dyn Policy>) {
        match kind {
            AgentKind::Locator => self.locator = policy,
            AgentKind::Selector => self.selector = policy,
            AgentKind::Splitter => self.splitter = policy,
            AgentKind::Merger => self.merger = policy,
        }
    }
}

/// Network-backed policy: encodes the observation and samples (or takes the
/// argmax of) the actor head.
pub struct NetPolicy {
    pub net: PolicyNet,
    pub greedy: bool,
    pub temperature: f64,
}

impl NetPolicy {
    pub fn sampling(net: PolicyNet) -> Self {
        Self { net, greedy: false, temperature: 1.0 }
    }

    pub fn greedy(net: PolicyNet) -> Self {
        Self { net, greedy: true, temperature: 1.0 }
    }
}

impl Policy for NetPolicy {
    fn choose(&mut self, view: &PolicyView<'_>, rng: &mut ChaCha8Rng) -> usize {
        let obs = encode_observation(view.state, view.kind);
        let (logits, _) = self.net.forward(&obs).expect("observation matches network geometry");
        if self.greedy {
            greedy_action(&logits)
        } else {
            sample_action(&logits, self.temperature, rng)
        }
    }
}

/// Draws an action from `softmax(logits / temperature)`.
pub fn sample_action(logits: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    assert!(temperature > 0.0, "temperature must be positive");
    let probs = softmax_scaled(logits, temperature);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Argmax with lowest-index tie-break.
pub fn greedy_action(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax_scaled(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
