//! Trainable actor-critic network, forward and reverse passes written
//! directly in f64 so gradients can be checked against finite differences.
//!
//! Architecture: one 3x3 convolution, then five residual units in full
//! pre-activation form (activation, conv, activation, conv, plus skip), then
//! flatten, one fully connected layer, and two heads — the actor emits one
//! logit per action, the critic a single value logit. Units 1, 3 and 5
//! downsample by stride 2; their skip path is a parameter-free 2x2 mean pool.
//! Activations are ELU (smooth, so finite-difference checks are stable).

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::AgentKind;
use crate::error::{Error, Result};
use crate::rlc::{load_checkpoint, save_checkpoint, CheckpointHeader};

use super::encode::ObservationTensor;

const KERNEL: usize = 3;
const UNITS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub kind: AgentKind,
    pub input_channels: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub conv_channels: usize,
    pub fc_dim: usize,
    pub action_count: usize,
    pub seed: u64,
}

impl NetConfig {
    /// Full-size network for an agent: 32 conv channels, 256-wide fully
    /// connected layer, 128x128 observations (the locator's input is pooled
    /// to the same size upstream).
    pub fn for_agent(kind: AgentKind, action_count: usize, seed: u64) -> Self {
        Self {
            kind,
            input_channels: kind.observation_channels(),
            input_h: 128,
            input_w: 128,
            conv_channels: 32,
            fc_dim: 256,
            action_count,
            seed,
        }
    }
}

/// Named view into the flat parameter vector.
#[derive(Debug, Clone)]
pub struct ParamGroup {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
struct Stage {
    c: usize,
    h: usize,
    w: usize,
}

impl Stage {
    fn len(&self) -> usize {
        self.c * self.h * self.w
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    conv0_w: usize,
    conv0_b: usize,
    ru_w1: [usize; UNITS],
    ru_b1: [usize; UNITS],
    ru_w2: [usize; UNITS],
    ru_b2: [usize; UNITS],
    fc_w: usize,
    fc_b: usize,
    actor_w: usize,
    actor_b: usize,
    critic_w: usize,
    critic_b: usize,
    total: usize,
    /// Spatial dims entering each residual unit; `stages[UNITS]` is the
    /// final feature map.
    stages: [Stage; UNITS + 1],
    flat_dim: usize,
}

fn unit_stride(u: usize) -> usize {
    if u % 2 == 0 {
        2
    } else {
        1
    }
}

impl Layout {
    fn build(cfg: &NetConfig) -> Result<Self> {
        if cfg.input_h % 8 != 0 || cfg.input_w % 8 != 0 || cfg.input_h == 0 || cfg.input_w == 0 {
            return Err(Error::Parameter(format!(
                "input dims {}x{} must be positive multiples of 8 (three stride-2 units)",
                cfg.input_h, cfg.input_w
            )));
        }
        if cfg.input_channels == 0 || cfg.conv_channels == 0 || cfg.fc_dim == 0 || cfg.action_count == 0
        {
            return Err(Error::Parameter("network dimensions must be positive".into()));
        }
        let c = cfg.conv_channels;
        let mut stages = [Stage { c, h: 0, w: 0 }; UNITS + 1];
        let (mut h, mut w) = (cfg.input_h, cfg.input_w);
        for (u, stage) in stages.iter_mut().enumerate().take(UNITS) {
            *stage = Stage { c, h, w };
            if u < UNITS && unit_stride(u) == 2 {
                h /= 2;
                w /= 2;
            }
        }
        stages[UNITS] = Stage { c, h, w };
        let flat_dim = stages[UNITS].len();

        let mut cursor = 0usize;
        let mut take = |n: usize| {
            let at = cursor;
            cursor += n;
            at
        };
        let conv0_w = take(c * cfg.input_channels * KERNEL * KERNEL);
        let conv0_b = take(c);
        let mut ru_w1 = [0; UNITS];
        let mut ru_b1 = [0; UNITS];
        let mut ru_w2 = [0; UNITS];
        let mut ru_b2 = [0; UNITS];
        for u in 0..UNITS {
            ru_w1[u] = take(c * c * KERNEL * KERNEL);
            ru_b1[u] = take(c);
            ru_w2[u] = take(c * c * KERNEL * KERNEL);
            ru_b2[u] = take(c);
        }
        let fc_w = take(cfg.fc_dim * flat_dim);
        let fc_b = take(cfg.fc_dim);
        let actor_w = take(cfg.action_count * cfg.fc_dim);
        let actor_b = take(cfg.action_count);
        let critic_w = take(cfg.fc_dim);
        let critic_b = take(1);
        Ok(Self {
            conv0_w,
            conv0_b,
            ru_w1,
            ru_b1,
            ru_w2,
            ru_b2,
            fc_w,
            fc_b,
            actor_w,
            actor_b,
            critic_w,
            critic_b,
            total: cursor,
            stages,
            flat_dim,
        })
    }
}

/// Actor-critic parameters with forward evaluation and gradient computation.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub cfg: NetConfig,
    pub params: Vec<f64>,
    layout: Layout,
}

/// Intermediate activations kept for the reverse pass. ELU derivatives are
/// recovered from activation outputs, so only post-activation maps and the
/// raw input are stored.
pub struct ForwardCache {
    x0: Vec<f64>,
    ru_a1: Vec<Vec<f64>>,
    ru_a2: Vec<Vec<f64>>,
    trunk_act: Vec<f64>,
    h: Vec<f64>,
    pub logits: Vec<f64>,
    pub value: f64,
}

#[inline]
fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp() - 1.0
    }
}

/// ELU derivative recovered from the activation output: elu is strictly
/// increasing with elu(0) = 0, so `a > 0` iff `z > 0`, and for z <= 0 the
/// derivative e^z equals `a + 1`.
#[inline]
fn elu_grad_from_out(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else {
        a + 1.0
    }
}

fn elu_map(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| elu(v)).collect()
}

fn conv_out_dim(input: usize, stride: usize) -> usize {
    // 3x3 kernel, padding 1.
    (input + 2 - KERNEL) / stride + 1
}

/// Direct 3x3 convolution, padding 1.
#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
    c_out: usize,
    stride: usize,
) -> Vec<f64> {
    let oh = conv_out_dim(h, stride);
    let ow = conv_out_dim(w, stride);
    let mut out = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        let w_base_o = o * c_in * KERNEL * KERNEL;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[o];
                for i in 0..c_in {
                    let plane = &input[i * h * w..(i + 1) * h * w];
                    let w_base = w_base_o + i * KERNEL * KERNEL;
                    for ky in 0..KERNEL {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for kx in 0..KERNEL {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += weight[w_base + ky * KERNEL + kx] * row[ix as usize];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

/// Reverse pass of `conv_forward`: accumulates weight/bias gradients and
/// returns the gradient with respect to the input.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    c_out: usize,
    stride: usize,
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let oh = conv_out_dim(h, stride);
    let ow = conv_out_dim(w, stride);
    let mut dinput = vec![0.0; c_in * h * w];
    for o in 0..c_out {
        let w_base_o = o * c_in * KERNEL * KERNEL;
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dout[(o * oh + oy) * ow + ox];
                if g == 0.0 {
                    continue;
                }
                dbias[o] += g;
                for i in 0..c_in {
                    let in_base = i * h * w;
                    let w_base = w_base_o + i * KERNEL * KERNEL;
                    for ky in 0..KERNEL {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..KERNEL {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = in_base + iy as usize * w + ix as usize;
                            dweight[w_base + ky * KERNEL + kx] += g * input[idx];
                            dinput[idx] += g * weight[w_base + ky * KERNEL + kx];
                        }
                    }
                }
            }
        }
    }
    dinput
}

fn mean_pool2(input: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let base = ch * h * w + 2 * y * w + 2 * x;
                out[(ch * oh + y) * ow + x] =
                    0.25 * (input[base] + input[base + 1] + input[base + w] + input[base + w + 1]);
            }
        }
    }
    out
}

fn mean_pool2_backward(dout: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut din = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let g = 0.25 * dout[(ch * oh + y) * ow + x];
                let base = ch * h * w + 2 * y * w + 2 * x;
                din[base] += g;
                din[base + 1] += g;
                din[base + w] += g;
                din[base + w + 1] += g;
            }
        }
    }
    din
}

impl PolicyNet {
    /// Builds a network with fan-in-scaled uniform trunk weights, zero biases
    /// and zero-initialized heads (uniform initial policy), seeded by the
    /// config.
    pub fn new(cfg: NetConfig) -> Result<Self> {
        let layout = Layout::build(&cfg)?;
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut init = |offset: usize, len: usize, fan_in: usize, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[offset..offset + len] {
                *p = rng.gen_range(-bound..bound);
            }
        };
        let c = cfg.conv_channels;
        init(
            layout.conv0_w,
            c * cfg.input_channels * KERNEL * KERNEL,
            cfg.input_channels * KERNEL * KERNEL,
            &mut rng,
        );
        for u in 0..UNITS {
            init(layout.ru_w1[u], c * c * KERNEL * KERNEL, c * KERNEL * KERNEL, &mut rng);
            init(layout.ru_w2[u], c * c * KERNEL * KERNEL, c * KERNEL * KERNEL, &mut rng);
        }
        init(layout.fc_w, cfg.fc_dim * layout.flat_dim, layout.flat_dim, &mut rng);
        // Biases and both heads stay zero.
        Ok(Self { cfg, params, layout })
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    pub fn param_groups(&self) -> Vec<ParamGroup> {
        let l = &self.layout;
        let c = self.cfg.conv_channels;
        let mut groups = vec![ParamGroup {
            name: "conv0".into(),
            offset: l.conv0_w,
            len: c * self.cfg.input_channels * KERNEL * KERNEL + c,
        }];
        for u in 0..UNITS {
            groups.push(ParamGroup {
                name: format!("ru{u}"),
                offset: l.ru_w1[u],
                len: 2 * (c * c * KERNEL * KERNEL + c),
            });
        }
        groups.push(ParamGroup {
            name: "fc".into(),
            offset: l.fc_w,
            len: self.cfg.fc_dim * l.flat_dim + self.cfg.fc_dim,
        });
        groups.push(ParamGroup {
            name: "actor".into(),
            offset: l.actor_w,
            len: self.cfg.action_count * self.cfg.fc_dim + self.cfg.action_count,
        });
        groups.push(ParamGroup {
            name: "critic".into(),
            offset: l.critic_w,
            len: self.cfg.fc_dim + 1,
        });
        groups
    }

    fn check_obs(&self, obs: &ObservationTensor) -> Result<()> {
        if obs.channels != self.cfg.input_channels
            || obs.height != self.cfg.input_h
            || obs.width != self.cfg.input_w
        {
            return Err(Error::Dimension(format!(
                "observation {}x{}x{} does not match network input {}x{}x{}",
                obs.channels,
                obs.height,
                obs.width,
                self.cfg.input_channels,
                self.cfg.input_h,
                self.cfg.input_w
            )));
        }
        Ok(())
    }

    pub fn forward(&self, obs: &ObservationTensor) -> Result<(Vec<f64>, f64)> {
        let cache = self.forward_cached(obs)?;
        Ok((cache.logits, cache.value))
    }

    pub fn forward_cached(&self, obs: &ObservationTensor) -> Result<ForwardCache> {
        self.check_obs(obs)?;
        let cfg = &self.cfg;
        let l = &self.layout;
        let c = cfg.conv_channels;
        let p = &self.params;

        let x0 = obs.data.clone();
        let conv0_out = conv_forward(
            &x0,
            cfg.input_channels,
            cfg.input_h,
            cfg.input_w,
            &p[l.conv0_w..],
            &p[l.conv0_b..l.conv0_b + c],
            c,
            1,
        );

        let mut ru_a1 = Vec::with_capacity(UNITS);
        let mut ru_a2 = Vec::with_capacity(UNITS);
        let mut current = conv0_out;
        for u in 0..UNITS {
            let stage = l.stages[u];
            let stride = unit_stride(u);
            let a1 = elu_map(&current);
            let c1 = conv_forward(
                &a1,
                c,
                stage.h,
                stage.w,
                &p[l.ru_w1[u]..],
                &p[l.ru_b1[u]..l.ru_b1[u] + c],
                c,
                stride,
            );
            let a2 = elu_map(&c1);
            let (oh, ow) = (conv_out_dim(stage.h, stride), conv_out_dim(stage.w, stride));
            let c2 = conv_forward(
                &a2,
                c,
                oh,
                ow,
                &p[l.ru_w2[u]..],
                &p[l.ru_b2[u]..l.ru_b2[u] + c],
                c,
                1,
            );
            let skip = if stride == 2 {
                mean_pool2(&current, c, stage.h, stage.w)
            } else {
                current.clone()
            };
            let out: Vec<f64> = skip.iter().zip(&c2).map(|(s, b)| s + b).collect();
            ru_a1.push(a1);
            ru_a2.push(a2);
            current = out;
        }

        let trunk_act = elu_map(&current);
        // Fully connected layer over the flattened feature map.
        let fc_w = &p[l.fc_w..l.fc_w + cfg.fc_dim * l.flat_dim];
        let fc_b = &p[l.fc_b..l.fc_b + cfg.fc_dim];
        let mut h = vec![0.0; cfg.fc_dim];
        for (j, hj) in h.iter_mut().enumerate() {
            let row = &fc_w[j * l.flat_dim..(j + 1) * l.flat_dim];
            let mut acc = fc_b[j];
            for (wv, xv) in row.iter().zip(&trunk_act) {
                acc += wv * xv;
            }
            *hj = elu(acc);
        }

        let actor_w = &p[l.actor_w..l.actor_w + cfg.action_count * cfg.fc_dim];
        let actor_b = &p[l.actor_b..l.actor_b + cfg.action_count];
        let mut logits = vec![0.0; cfg.action_count];
        for (a, logit) in logits.iter_mut().enumerate() {
            let row = &actor_w[a * cfg.fc_dim..(a + 1) * cfg.fc_dim];
            *logit = actor_b[a] + row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>();
        }
        let critic_w = &p[l.critic_w..l.critic_w + cfg.fc_dim];
        let value = p[l.critic_b] + critic_w.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>();

        Ok(ForwardCache { x0, ru_a1, ru_a2, trunk_act, h, logits, value })
    }

    /// Accumulates parameter gradients for one observation given the loss
    /// gradients at the two heads. `grads` must have `num_params` entries.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64], dvalue: f64, grads: &mut [f64]) {
        assert_eq!(grads.len(), self.layout.total, "gradient buffer size");
        assert_eq!(dlogits.len(), self.cfg.action_count, "dlogits size");
        let cfg = &self.cfg;
        let l = &self.layout;
        let c = cfg.conv_channels;
        let p = &self.params;

        // Heads into the shared hidden vector.
        let mut dh = vec![0.0; cfg.fc_dim];
        for (a, &g) in dlogits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads[l.actor_b + a] += g;
            let row = l.actor_w + a * cfg.fc_dim;
            for j in 0..cfg.fc_dim {
                grads[row + j] += g * cache.h[j];
                dh[j] += g * p[row + j];
            }
        }
        if dvalue != 0.0 {
            grads[l.critic_b] += dvalue;
            for j in 0..cfg.fc_dim {
                grads[l.critic_w + j] += dvalue * cache.h[j];
                dh[j] += dvalue * p[l.critic_w + j];
            }
        }

        // Through the fully connected layer.
        let mut dtrunk_act = vec![0.0; l.flat_dim];
        for j in 0..cfg.fc_dim {
            let g = dh[j] * elu_grad_from_out(cache.h[j]);
            if g == 0.0 {
                continue;
            }
            grads[l.fc_b + j] += g;
            let row = l.fc_w + j * l.flat_dim;
            for k in 0..l.flat_dim {
                grads[row + k] += g * cache.trunk_act[k];
                dtrunk_act[k] += g * p[row + k];
            }
        }
        let mut dout: Vec<f64> = dtrunk_act
            .iter()
            .zip(&cache.trunk_act)
            .map(|(&g, &a)| g * elu_grad_from_out(a))
            .collect();

        // Residual units in reverse.
        for u in (0..UNITS).rev() {
            let stage = l.stages[u];
            let stride = unit_stride(u);
            let (oh, ow) = (conv_out_dim(stage.h, stride), conv_out_dim(stage.w, stride));
            // Branch: out = skip + conv2(a2); conv2 has stride 1 on (oh, ow).
            let (mut dw2, mut db2) = (vec![0.0; c * c * KERNEL * KERNEL], vec![0.0; c]);
            let da2 = conv_backward(
                &cache.ru_a2[u],
                c,
                oh,
                ow,
                &p[l.ru_w2[u]..l.ru_w2[u] + c * c * KERNEL * KERNEL],
                c,
                1,
                &dout,
                &mut dw2,
                &mut db2,
            );
            for (dst, src) in grads[l.ru_w2[u]..].iter_mut().zip(&dw2) {
                *dst += src;
            }
            for (dst, src) in grads[l.ru_b2[u]..].iter_mut().zip(&db2) {
                *dst += src;
            }
            let dc1: Vec<f64> = da2
                .iter()
                .zip(&cache.ru_a2[u])
                .map(|(&g, &a)| g * elu_grad_from_out(a))
                .collect();
            let (mut dw1, mut db1) = (vec![0.0; c * c * KERNEL * KERNEL], vec![0.0; c]);
            let da1 = conv_backward(
                &cache.ru_a1[u],
                c,
                stage.h,
                stage.w,
                &p[l.ru_w1[u]..l.ru_w1[u] + c * c * KERNEL * KERNEL],
                c,
                stride,
                &dc1,
                &mut dw1,
                &mut db1,
            );
            for (dst, src) in grads[l.ru_w1[u]..].iter_mut().zip(&dw1) {
                *dst += src;
            }
            for (dst, src) in grads[l.ru_b1[u]..].iter_mut().zip(&db1) {
                *dst += src;
            }
            let mut dx: Vec<f64> = da1
                .iter()
                .zip(&cache.ru_a1[u])
                .map(|(&g, &a)| g * elu_grad_from_out(a))
                .collect();
            // Skip path.
            if stride == 2 {
                let dskip = mean_pool2_backward(&dout, c, stage.h, stage.w);
                for (dst, src) in dx.iter_mut().zip(&dskip) {
                    *dst += src;
                }
            } else {
                for (dst, src) in dx.iter_mut().zip(&dout) {
                    *dst += src;
                }
            }
            dout = dx;
        }

        // Into the stem convolution; the input gradient is discarded.
        let (mut dw0, mut db0) =
            (vec![0.0; c * cfg.input_channels * KERNEL * KERNEL], vec![0.0; c]);
        let _ = conv_backward(
            &cache.x0,
            cfg.input_channels,
            cfg.input_h,
            cfg.input_w,
            &p[l.conv0_w..l.conv0_w + c * cfg.input_channels * KERNEL * KERNEL],
            c,
            1,
            &dout,
            &mut dw0,
            &mut db0,
        );
        for (dst, src) in grads[l.conv0_w..].iter_mut().zip(&dw0) {
            *dst += src;
        }
        for (dst, src) in grads[l.conv0_b..].iter_mut().zip(&db0) {
            *dst += src;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            agent_kind: self.cfg.kind.as_u8(),
            input_channels: self.cfg.input_channels as u32,
            action_count: self.cfg.action_count as u32,
            seed: self.cfg.seed,
            input_h: self.cfg.input_h as u32,
            input_w: self.cfg.input_w as u32,
            conv_channels: self.cfg.conv_channels as u32,
            fc_dim: self.cfg.fc_dim as u32,
        };
        let params: Vec<f32> = self.params.iter().map(|&v| v as f32).collect();
        save_checkpoint(path, &header, &params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, params) = load_checkpoint(path)?;
        let cfg = NetConfig {
            kind: AgentKind::from_u8(header.agent_kind)?,
            input_channels: header.input_channels as usize,
            input_h: header.input_h as usize,
            input_w: header.input_w as usize,
            conv_channels: header.conv_channels as usize,
            fc_dim: header.fc_dim as usize,
            action_count: header.action_count as usize,
            seed: header.seed,
        };
        let mut net = Self::new(cfg)?;
        if params.len() != net.num_params() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, network needs {}",
                params.len(),
                net.num_params()
            )));
        }
        net.params = params.into_iter().map(|v| v as f64).collect();
        Ok(net)
    }
}
