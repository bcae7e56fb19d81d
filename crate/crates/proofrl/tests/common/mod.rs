//! Shared test support: independent brute-force oracles and fixture
//! builders. Everything here deliberately avoids the code paths it checks —
//! entropies come from explicit per-class pixel lists, the adapted Rand
//! error from ordered pair enumeration, and minimax saddles from a
//! union-find sweep.

#![allow(dead_code)]

use proofrl::editops::AltitudeMap;
use proofrl::env::{AgentKind, EnvConfig, PatchEnv};
use proofrl::policy::NetConfig;
use proofrl::raster::{GridSpec, LabelMap};
use proofrl::synth::{make_patch_testset_with, PatchTestsetOpts};
use proofrl::train::TrainTask;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// H(seg | gt) and H(gt | seg) in nats, from explicit pixel lists: group the
/// pixels by conditioning label, then sum per-group entropies weighted by
/// group mass. Ground-truth background pixels are excluded.
pub fn voi_bruteforce(gt: &LabelMap, seg: &LabelMap) -> (f64, f64) {
    let pairs: Vec<(u32, u32)> = gt
        .data()
        .iter()
        .zip(seg.data())
        .filter(|(&g, _)| g != 0)
        .map(|(&g, &s)| (g, s))
        .collect();
    let n = pairs.len() as f64;
    assert!(n > 0.0, "empty oracle input");

    let conditional = |key: fn(&(u32, u32)) -> u32, value: fn(&(u32, u32)) -> u32| -> f64 {
        let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for p in &pairs {
            groups.entry(key(p)).or_default().push(value(p));
        }
        let mut h = 0.0;
        for (_, values) in groups {
            let m = values.len() as f64;
            let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
            for v in values {
                *counts.entry(v).or_insert(0) += 1;
            }
            let mut group_h = 0.0;
            for (_, c) in counts {
                let p = c as f64 / m;
                group_h -= p * p.ln();
            }
            h += (m / n) * group_h;
        }
        h
    };
    let split = conditional(|p| p.0, |p| p.1);
    let merge = conditional(|p| p.1, |p| p.0);
    (split, merge)
}

/// Adapted Rand error by ordered pair enumeration (self-pairs included):
/// 1 minus the F-score of pairwise agreement.
pub fn arand_bruteforce(gt: &LabelMap, seg: &LabelMap) -> f64 {
    let pairs: Vec<(u32, u32)> = gt
        .data()
        .iter()
        .zip(seg.data())
        .filter(|(&g, _)| g != 0)
        .map(|(&g, &s)| (g, s))
        .collect();
    assert!(!pairs.is_empty(), "empty oracle input");
    let mut same_both = 0u64;
    let mut same_gt = 0u64;
    let mut same_seg = 0u64;
    for &(g1, s1) in &pairs {
        for &(g2, s2) in &pairs {
            if g1 == g2 {
                same_gt += 1;
            }
            if s1 == s2 {
                same_seg += 1;
            }
            if g1 == g2 && s1 == s2 {
                same_both += 1;
            }
        }
    }
    1.0 - 2.0 * same_both as f64 / (same_gt as f64 + same_seg as f64)
}

/// Random label map with labels drawn from 1..=max_label.
pub fn random_label_map(width: usize, height: usize, max_label: u32, rng: &mut ChaCha8Rng) -> LabelMap {
    let data: Vec<u32> = (0..width * height).map(|_| rng.gen_range(1..=max_label)).collect();
    LabelMap::from_vec(width, height, data).unwrap()
}

/// Minimax connection altitudes to a seed over one segment, by a union-find
/// sweep in ascending altitude order: a pixel's value is the altitude at
/// which it first joins the seed's component.
pub fn minimax_to_seed(
    labels: &LabelMap,
    altitude: &AltitudeMap,
    segment: u32,
    seed: (usize, usize),
) -> BTreeMap<usize, f32> {
    let width = labels.width();
    let members: Vec<usize> = labels
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == segment)
        .map(|(i, _)| i)
        .collect();
    let mut order = members.clone();
    order.sort_by(|&a, &b| altitude.data()[a].total_cmp(&altitude.data()[b]).then(a.cmp(&b)));

    let mut parent: BTreeMap<usize, usize> = BTreeMap::new();
    fn find(parent: &mut BTreeMap<usize, usize>, mut x: usize) -> usize {
        while parent[&x] != x {
            let up = parent[&parent[&x]];
            parent.insert(x, up);
            x = up;
        }
        x
    }

    let seed_idx = seed.1 * width + seed.0;
    let mut result: BTreeMap<usize, f32> = BTreeMap::new();
    let mut inserted: Vec<usize> = Vec::new();
    for &idx in &order {
        let level = altitude.data()[idx];
        parent.insert(idx, idx);
        let (x, y) = (idx % width, idx / width);
        for n in [
            (x > 0).then(|| idx - 1),
            (x + 1 < width).then(|| idx + 1),
            (y > 0).then(|| idx - width),
            (y + 1 < labels.height()).then(|| idx + width),
        ]
        .into_iter()
        .flatten()
        {
            if parent.contains_key(&n) {
                let (ra, rb) = (find(&mut parent, idx), find(&mut parent, n));
                if ra != rb {
                    parent.insert(ra, rb);
                }
            }
        }
        inserted.push(idx);
        // Whoever just became connected to the seed connects at this level.
        if parent.contains_key(&seed_idx) {
            let seed_root = find(&mut parent, seed_idx);
            for &p in &inserted {
                if !result.contains_key(&p) && find(&mut parent, p) == seed_root {
                    result.insert(p, level);
                }
            }
        }
    }
    result
}

/// Tiny splitter task for training smoke tests: a 32x32 patch of three cells
/// with one merge error, on a 3x3 action grid.
pub fn tiny_splitter_task(episode: u64, base_seed: u64) -> TrainTask {
    let opts = PatchTestsetOpts {
        width: 32,
        n_seeds: 3,
        min_errors: 1,
        max_errors: 1,
        min_error_area: 64,
    };
    let seed = proofrl::synth::derive_seed(base_seed, episode);
    let cases = make_patch_testset_with(proofrl::synth::ErrorKind::Merge, 1, seed, &opts)
        .expect("tiny task generation");
    let grid = GridSpec::new(3, 3, 8, 8);
    let env = PatchEnv::from_case(&cases[0], grid, EnvConfig::default()).expect("tiny task env");
    TrainTask::Patch(env)
}

/// Network geometry for the tiny splitter task.
pub fn tiny_splitter_net(seed: u64) -> NetConfig {
    NetConfig {
        kind: AgentKind::Splitter,
        input_channels: 3,
        input_h: 32,
        input_w: 32,
        conv_channels: 8,
        fc_dim: 32,
        action_count: 10,
        seed,
    }
}

/// FNV-1a over the parameter bits, for frozen-parameter checks.
pub fn param_hash(params: &[f64]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for p in params {
        for b in p.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}
