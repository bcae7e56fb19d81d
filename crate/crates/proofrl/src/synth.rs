//! Synthetic ground truth and controlled error injection.
//!
//! Ground truth is a Voronoi partition of random sites with a dark membrane
//! band rasterized into the EM channel, so the watershed assumption (cell
//! membranes darker than interiors) holds by construction. Merge and split
//! errors are injected as label-local edits and recorded in replayable
//! scripts. Everything is a pure function of (parameters, seed).

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{EmImage, LabelMap};

/// Intensity subtracted along membrane pixels.
const MEMBRANE_DEPTH: f64 = 200.0;
/// Standard deviation of the additive Gaussian intensity noise.
const NOISE_SIGMA: f64 = 6.0;

/// Which error regime a generated test set exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Merge,
    Split,
    Combined,
}

impl std::fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ErrorKind::Merge => write!(f, "merge"),
            ErrorKind::Split => write!(f, "split"),
            ErrorKind::Combined => write!(f, "combined"),
        }
    }
}

/// One recorded split: cut the named segment by a straight line through its
/// centroid at `angle`, relabeling the smaller side to `fresh`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCut {
    pub label: u32,
    pub angle: f64,
    pub fresh: u32,
}

/// Replayable record of the errors injected into one map. Merges are applied
/// first, then splits, each in list order; replaying on the same ground truth
/// reproduces the erroneous map bit-exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorScript {
    pub seed: u64,
    pub merges: Vec<(u32, u32)>,
    pub splits: Vec<SplitCut>,
}

/// Deterministic per-item seed derivation (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Number of four-connected components per nonzero label.
pub fn component_counts(map: &LabelMap) -> BTreeMap<u32, usize> {
    let (width, height) = (map.width(), map.height());
    let data = map.data();
    let mut visited = vec![false; data.len()];
    let mut counts = BTreeMap::new();
    let mut queue = VecDeque::new();
    for start in 0..data.len() {
        if visited[start] || data[start] == 0 {
            continue;
        }
        let label = data[start];
        *counts.entry(label).or_insert(0) += 1;
        visited[start] = true;
        queue.push_back(start);
        while let Some(idx) = queue.pop_front() {
            let (x, y) = (idx % width, idx / width);
            let mut push = |nidx: usize| {
                if !visited[nidx] && data[nidx] == label {
                    visited[nidx] = true;
                    queue.push_back(nidx);
                }
            };
            if x > 0 {
                push(idx - 1);
            }
            if x + 1 < width {
                push(idx + 1);
            }
            if y > 0 {
                push(idx - width);
            }
            if y + 1 < height {
                push(idx + width);
            }
        }
    }
    counts
}

/// Voronoi ground truth plus a matching EM image.
///
/// Labels 1..=n_seeds partition the raster by nearest site (ties to the
/// lowest label). Site sets that leave a label empty or four-disconnected
/// are redrawn, so every label is exactly one component. The EM image is 255
/// everywhere except a dark band along label boundaries, plus Gaussian noise.
pub fn gen_ground_truth(
    width: usize,
    height: usize,
    n_seeds: usize,
    seed: u64,
) -> Result<(EmImage, LabelMap)> {
    if n_seeds < 2 {
        return Err(Error::Parameter(format!("n_seeds must be >= 2, got {n_seeds}")));
    }
    if n_seeds > width * height / 4 {
        return Err(Error::Parameter(format!(
            "n_seeds {n_seeds} too dense for a {width}x{height} raster"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let labels = 'attempt: {
        for _ in 0..1000 {
            let mut sites = BTreeSet::new();
            while sites.len() < n_seeds {
                sites.insert((rng.gen_range(0..width), rng.gen_range(0..height)));
            }
            let sites: Vec<(usize, usize)> = sites.into_iter().collect();
            let map = LabelMap::from_vec(width, height, voronoi_labels(width, height, &sites))?;
            let counts = component_counts(&map);
            if counts.len() == n_seeds && counts.values().all(|&c| c == 1) {
                break 'attempt map;
            }
        }
        return Err(Error::Parameter(format!(
            "failed to draw a connected {n_seeds}-cell Voronoi partition on {width}x{height}"
        )));
    };

    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut em = vec![0u8; width * height];
    for y in 0..height {
        for x in 0..width {
            let here = labels.get(x, y);
            let boundary = (x > 0 && labels.get(x - 1, y) != here)
                || (x + 1 < width && labels.get(x + 1, y) != here)
                || (y > 0 && labels.get(x, y - 1) != here)
                || (y + 1 < height && labels.get(x, y + 1) != here);
            let base = if boundary { 255.0 - MEMBRANE_DEPTH } else { 255.0 };
            let v = base + noise.sample(&mut rng);
            em[y * width + x] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok((EmImage::from_vec(width, height, em)?, labels))
}

/// Exact nearest-site assignment (labels 1..=n, ties to the lowest index)
/// via a bucket grid: for each pixel, site candidates are scanned in rings
/// of buckets outward until no farther ring can beat the best distance.
fn voronoi_labels(width: usize, height: usize, sites: &[(usize, usize)]) -> Vec<u32> {
    let cell = (((width * height) as f64 / sites.len() as f64).sqrt() as usize).max(8);
    let (gw, gh) = (width.div_ceil(cell), height.div_ceil(cell));
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); gw * gh];
    for (k, &(sx, sy)) in sites.iter().enumerate() {
        buckets[(sy / cell) * gw + sx / cell].push(k as u32);
    }
    let max_ring = gw.max(gh);
    let mut data = vec![0u32; width * height];
    for y in 0..height {
        for x in 0..width {
            let (bx, by) = ((x / cell) as i64, (y / cell) as i64);
            let mut best = u64::MAX;
            let mut best_site = u32::MAX;
            let mut check = |ux: i64, uy: i64, best: &mut u64, best_site: &mut u32| {
                if ux < 0 || uy < 0 || ux >= gw as i64 || uy >= gh as i64 {
                    return;
                }
                for &k in &buckets[uy as usize * gw + ux as usize] {
                    let (sx, sy) = sites[k as usize];
                    let dx = sx as i64 - x as i64;
                    let dy = sy as i64 - y as i64;
                    let d = (dx * dx + dy * dy) as u64;
                    if d < *best || (d == *best && k < *best_site) {
                        *best = d;
                        *best_site = k;
                    }
                }
            };
            for r in 0..=max_ring as i64 {
                if r == 0 {
                    check(bx, by, &mut best, &mut best_site);
                } else {
                    for u in -r..=r {
                        check(bx + u, by - r, &mut best, &mut best_site);
                        check(bx + u, by + r, &mut best, &mut best_site);
                    }
                    for v in -r + 1..r {
                        check(bx - r, by + v, &mut best, &mut best_site);
                        check(bx + r, by + v, &mut best, &mut best_site);
                    }
                }
                // Any site in ring r+1 or beyond is farther than r*cell.
                let bound = (r as u64 * cell as u64).pow(2);
                if best <= bound {
                    break;
                }
            }
            data[y * width + x] = best_site + 1;
        }
    }
    data
}

fn adjacent_pairs(map: &LabelMap) -> Vec<(u32, u32)> {
    let (width, height) = (map.width(), map.height());
    let data = map.data();
    let mut pairs = BTreeSet::new();
    for y in 0..height {
        for x in 0..width {
            let here = data[y * width + x];
            if here == 0 {
                continue;
            }
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx < width && ny < height {
                    let there = data[ny * width + nx];
                    if there != 0 && there != here {
                        pairs.insert((here.min(there), here.max(there)));
                    }
                }
            }
        }
    }
    pairs.into_iter().collect()
}

fn bbox_rect(pixels: &[(usize, usize)]) -> (usize, usize, usize, usize) {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for &(x, y) in pixels {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    (x0, y0, x1, y1)
}

#[derive(Debug, Clone, Copy)]
struct LabelStat {
    area: usize,
    rect: (usize, usize, usize, usize),
}

impl LabelStat {
    fn merged_with(&self, other: &LabelStat) -> LabelStat {
        LabelStat {
            area: self.area + other.area,
            rect: (
                self.rect.0.min(other.rect.0),
                self.rect.1.min(other.rect.1),
                self.rect.2.max(other.rect.2),
                self.rect.3.max(other.rect.3),
            ),
        }
    }
}

/// Area and bounding box per nonzero label, in one pass.
fn label_stats(map: &LabelMap) -> BTreeMap<u32, LabelStat> {
    let width = map.width();
    let mut stats: BTreeMap<u32, LabelStat> = BTreeMap::new();
    for (idx, &label) in map.data().iter().enumerate() {
        if label == 0 {
            continue;
        }
        let (x, y) = (idx % width, idx / width);
        stats
            .entry(label)
            .and_modify(|s| {
                s.area += 1;
                s.rect.0 = s.rect.0.min(x);
                s.rect.1 = s.rect.1.min(y);
                s.rect.2 = s.rect.2.max(x);
                s.rect.3 = s.rect.3.max(y);
            })
            .or_insert(LabelStat { area: 1, rect: (x, y, x, y) });
    }
    stats
}

fn passes_filter(stat: &LabelStat, filter: &InjectFilter, width: usize, height: usize) -> bool {
    if stat.area < filter.min_area {
        return false;
    }
    if let Some(cap) = filter.max_bbox {
        let (w, h) = (stat.rect.2 - stat.rect.0 + 1, stat.rect.3 - stat.rect.1 + 1);
        if w > cap || h > cap {
            return false;
        }
    }
    match filter.containment {
        Some(c) => c.admits(stat.rect, width, height),
        None => true,
    }
}

fn pixels_of(map: &LabelMap, label: u32) -> Vec<(usize, usize)> {
    let width = map.width();
    map.data()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == label)
        .map(|(idx, _)| (idx % width, idx / width))
        .collect()
}

fn side_is_connected(side: &[(usize, usize)], width: usize, height: usize) -> bool {
    if side.is_empty() {
        return false;
    }
    let mut member = vec![false; width * height];
    for &(x, y) in side {
        member[y * width + x] = true;
    }
    let mut visited = vec![false; width * height];
    let start = side[0].1 * width + side[0].0;
    let mut queue = VecDeque::new();
    visited[start] = true;
    queue.push_back(start);
    let mut reached = 0usize;
    while let Some(idx) = queue.pop_front() {
        reached += 1;
        let (x, y) = (idx % width, idx / width);
        let mut push = |nidx: usize| {
            if member[nidx] && !visited[nidx] {
                visited[nidx] = true;
                queue.push_back(nidx);
            }
        };
        if x > 0 {
            push(idx - 1);
        }
        if x + 1 < width {
            push(idx + 1);
        }
        if y > 0 {
            push(idx - width);
        }
        if y + 1 < height {
            push(idx + width);
        }
    }
    reached == side.len()
}

/// Applies a recorded cut to the current map state. Fails when either side of
/// the cut would be empty or four-disconnected.
fn apply_split_cut(map: &LabelMap, cut: &SplitCut) -> Result<LabelMap> {
    let pixels = pixels_of(map, cut.label);
    if pixels.len() < 2 {
        return Err(Error::Injection(format!("segment {} has fewer than 2 pixels", cut.label)));
    }
    let n = pixels.len() as f64;
    let cx = pixels.iter().map(|&(x, _)| x as f64).sum::<f64>() / n;
    let cy = pixels.iter().map(|&(_, y)| y as f64).sum::<f64>() / n;
    // Normal to the cut line through the centroid.
    let (nx, ny) = (-cut.angle.sin(), cut.angle.cos());
    let mut side_a = Vec::new();
    let mut side_b = Vec::new();
    for &(x, y) in &pixels {
        let v = (x as f64 - cx) * nx + (y as f64 - cy) * ny;
        if v >= 0.0 {
            side_a.push((x, y));
        } else {
            side_b.push((x, y));
        }
    }
    let (width, height) = (map.width(), map.height());
    if side_a.is_empty()
        || side_b.is_empty()
        || !side_is_connected(&side_a, width, height)
        || !side_is_connected(&side_b, width, height)
    {
        return Err(Error::Injection("degenerate cut".into()));
    }
    // Relabel the smaller side; on ties the side holding the lexicographically
    // smallest pixel (lowest raster index).
    let min_idx = |side: &[(usize, usize)]| side.iter().map(|&(x, y)| y * width + x).min().unwrap();
    let relabel = match side_a.len().cmp(&side_b.len()) {
        std::cmp::Ordering::Less => side_a,
        std::cmp::Ordering::Greater => side_b,
        std::cmp::Ordering::Equal => {
            if min_idx(&side_a) < min_idx(&side_b) {
                side_a
            } else {
                side_b
            }
        }
    };
    let mut out = map.clone();
    for (x, y) in relabel {
        out.set(x, y, cut.fresh);
    }
    Ok(out)
}

/// Window geometry an injected error must fit into with margin, so that some
/// patch view contains the whole error away from the patch border.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Containment {
    pub window: usize,
    pub stride: usize,
    pub margin: usize,
}

impl Containment {
    fn admits(&self, rect: (usize, usize, usize, usize), width: usize, height: usize) -> bool {
        let (x0, y0, x1, y1) = rect;
        let fits = |lo: usize, hi: usize, len: usize| {
            if hi >= len {
                return false;
            }
            // Window origins: multiples of the stride, plus the clamped last one.
            let mut origins: Vec<usize> = (0..=len.saturating_sub(self.window))
                .step_by(self.stride)
                .collect();
            if len >= self.window {
                origins.push(len - self.window);
            }
            origins.into_iter().any(|o| {
                lo >= o + self.margin && hi + self.margin < o + self.window
            })
        };
        fits(x0, x1, width) && fits(y0, y1, height)
    }
}

/// Candidate constraints for error injection. Image-level generators cap the
/// bounding box so every error fits inside one locator patch (with margin),
/// and require a minimum pixel area so the error is detectable above the
/// patch threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InjectFilter {
    pub max_bbox: Option<usize>,
    pub min_area: usize,
    pub containment: Option<Containment>,
}

impl InjectFilter {
    pub fn none() -> Self {
        Self { max_bbox: None, min_area: 2, containment: None }
    }
}

/// Merges one random four-adjacent pair of distinct segments, relabeling the
/// higher label to the lower.
pub fn inject_merge_error(gt: &LabelMap, rng: &mut ChaCha8Rng) -> Result<(LabelMap, ErrorScript)> {
    let (map, pair) = inject_merge_filtered(gt, rng, &InjectFilter::none())?;
    Ok((map, ErrorScript { seed: 0, merges: vec![pair], splits: Vec::new() }))
}

/// Merge injection over pairs satisfying the filter (joint bounding box and
/// combined area).
pub fn inject_merge_filtered(
    gt: &LabelMap,
    rng: &mut ChaCha8Rng,
    filter: &InjectFilter,
) -> Result<(LabelMap, (u32, u32))> {
    let stats = label_stats(gt);
    let mut pairs = adjacent_pairs(gt);
    pairs.retain(|&(a, b)| {
        let joined = stats[&a].merged_with(&stats[&b]);
        passes_filter(&joined, filter, gt.width(), gt.height())
    });
    if pairs.is_empty() {
        return Err(Error::Injection("no adjacent segment pair to merge".into()));
    }
    let (a, b) = pairs[rng.gen_range(0..pairs.len())];
    let mut out = gt.clone();
    for v in out.data_mut() {
        if *v == b {
            *v = a;
        }
    }
    Ok((out, (a, b)))
}

/// Splits one random segment in two by a straight cut through its centroid at
/// a uniform random angle; the smaller side receives a fresh label.
pub fn inject_split_error(gt: &LabelMap, rng: &mut ChaCha8Rng) -> Result<(LabelMap, ErrorScript)> {
    let (map, cut) = inject_split_filtered(gt, rng, &InjectFilter::none())?;
    Ok((map, ErrorScript { seed: 0, merges: Vec::new(), splits: vec![cut] }))
}

/// Split injection over segments satisfying the filter.
pub fn inject_split_filtered(
    gt: &LabelMap,
    rng: &mut ChaCha8Rng,
    filter: &InjectFilter,
) -> Result<(LabelMap, SplitCut)> {
    let stats = label_stats(gt);
    let mut candidates: Vec<u32> = stats
        .iter()
        .filter(|(_, stat)| stat.area >= 2 && passes_filter(stat, filter, gt.width(), gt.height()))
        .map(|(&label, _)| label)
        .collect();
    candidates.sort_unstable();
    if candidates.is_empty() {
        return Err(Error::Injection("no splittable segment".into()));
    }
    let label = candidates[rng.gen_range(0..candidates.len())];
    let fresh = gt.max_label() + 1;
    for _ in 0..64 {
        let angle = rng.gen_range(0.0..std::f64::consts::PI);
        let cut = SplitCut { label, angle, fresh };
        if let Ok(map) = apply_split_cut(gt, &cut) {
            return Ok((map, cut));
        }
    }
    Err(Error::Injection(format!("no valid cut found for segment {label}")))
}

/// Replays a script against its ground truth: merges first, then splits,
/// each in recorded order.
pub fn replay_script(gt: &LabelMap, script: &ErrorScript) -> Result<LabelMap> {
    let mut map = gt.clone();
    for &(a, b) in &script.merges {
        for v in map.data_mut() {
            if *v == b {
                *v = a;
            }
        }
    }
    for cut in &script.splits {
        map = apply_split_cut(&map, cut)?;
    }
    Ok(map)
}

/// One synthetic patch: EM evidence, ground truth, and an erroneous map.
#[derive(Debug, Clone)]
pub struct PatchCase {
    pub em: EmImage,
    pub gt: LabelMap,
    pub seg: LabelMap,
    pub script: ErrorScript,
}

/// Severity knobs for patch test sets. The defaults generate 128x128 patches
/// of ~8 cells with one or two errors each, large enough to score above the
/// patch error threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PatchTestsetOpts {
    pub width: usize,
    pub n_seeds: usize,
    pub min_errors: usize,
    pub max_errors: usize,
    pub min_error_area: usize,
}

impl Default for PatchTestsetOpts {
    fn default() -> Self {
        Self { width: 128, n_seeds: 8, min_errors: 1, max_errors: 2, min_error_area: 1800 }
    }
}

/// Generates `count` patches of the requested error regime.
pub fn make_patch_testset(kind: ErrorKind, count: usize, seed: u64) -> Result<Vec<PatchCase>> {
    make_patch_testset_with(kind, count, seed, &PatchTestsetOpts::default())
}

pub fn make_patch_testset_with(
    kind: ErrorKind,
    count: usize,
    seed: u64,
    opts: &PatchTestsetOpts,
) -> Result<Vec<PatchCase>> {
    if count == 0 {
        return Err(Error::Parameter("testset count must be >= 1".into()));
    }
    if opts.min_errors == 0 || opts.min_errors > opts.max_errors {
        return Err(Error::Parameter(format!(
            "invalid error range {}..={}",
            opts.min_errors, opts.max_errors
        )));
    }
    let mut cases = Vec::with_capacity(count);
    for item in 0..count {
        let item_seed = derive_seed(seed, item as u64);
        let (em, gt) = gen_ground_truth(opts.width, opts.width, opts.n_seeds, item_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(item_seed, u64::MAX));
        let mut script = ErrorScript { seed: item_seed, ..Default::default() };
        let n_errors = rng.gen_range(opts.min_errors..=opts.max_errors);
        let mut seg = gt.clone();
        let filter = InjectFilter { min_area: opts.min_error_area, ..InjectFilter::none() };
        match kind {
            ErrorKind::Merge => {
                for _ in 0..n_errors {
                    let (next, pair) = inject_merge_filtered(&seg, &mut rng, &filter)?;
                    seg = next;
                    script.merges.push(pair);
                }
            }
            ErrorKind::Split => {
                for _ in 0..n_errors {
                    let (next, cut) = inject_split_filtered(&seg, &mut rng, &filter)?;
                    seg = next;
                    script.splits.push(cut);
                }
            }
            ErrorKind::Combined => {
                // At least one of each; merges are always applied first so the
                // script replays in its canonical order.
                let extra_merges = n_errors.saturating_sub(2) / 2;
                for _ in 0..1 + extra_merges {
                    let (next, pair) = inject_merge_filtered(&seg, &mut rng, &filter)?;
                    seg = next;
                    script.merges.push(pair);
                }
                let extra_splits = n_errors.saturating_sub(2) - extra_merges;
                for _ in 0..1 + extra_splits {
                    let (next, cut) = inject_split_filtered(&seg, &mut rng, &filter)?;
                    seg = next;
                    script.splits.push(cut);
                }
            }
        }
        cases.push(PatchCase { em, gt, seg, script });
    }
    Ok(cases)
}

/// Image-level generation options. Split targets and merged pairs are capped
/// to bounding boxes that fit inside a single locator patch (so every
/// injected error is correctable without crossing patch borders) and
/// required to cover enough pixels that the erroneous patch scores above the
/// detection threshold.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ImageGenOpts {
    pub width: usize,
    pub height: usize,
    pub n_seeds: usize,
    pub min_errors: usize,
    pub max_errors: usize,
    pub error_bbox_cap: usize,
    pub min_error_area: usize,
}

impl Default for ImageGenOpts {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            n_seeds: 120,
            min_errors: 1,
            max_errors: 5,
            error_bbox_cap: 64,
            min_error_area: 1800,
        }
    }
}

/// One synthetic image: EM evidence, ground truth, an erroneous map and the
/// script that produced it.
#[derive(Debug, Clone)]
pub struct ImageCase {
    pub em: EmImage,
    pub gt: LabelMap,
    pub seg: LabelMap,
    pub script: ErrorScript,
}

/// Generates one erroneous image. One error of each requested kind is
/// mandatory (the whole image is redrawn when no valid placement exists);
/// errors beyond that are injected best-effort until the drawn count is
/// reached or the candidate pool runs dry.
pub fn gen_error_image(kind: ErrorKind, seed: u64, opts: &ImageGenOpts) -> Result<ImageCase> {
    let filter = InjectFilter {
        max_bbox: (opts.error_bbox_cap < usize::MAX).then_some(opts.error_bbox_cap),
        min_area: opts.min_error_area,
        containment: (opts.error_bbox_cap < usize::MAX)
            .then_some(Containment { window: 128, stride: 64, margin: 2 }),
    };
    for attempt in 0..10u64 {
        let gt_seed = if attempt == 0 { seed } else { derive_seed(seed, 0xA77E_0000 + attempt) };
        let (em, gt) = gen_ground_truth(opts.width, opts.height, opts.n_seeds, gt_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(gt_seed, u64::MAX));
        let n_errors = rng.gen_range(opts.min_errors..=opts.max_errors);
        let (n_merges, n_splits) = match kind {
            ErrorKind::Merge => (n_errors, 0),
            ErrorKind::Split => (0, n_errors),
            ErrorKind::Combined => {
                let total = n_errors.max(2);
                let merges = 1 + rng.gen_range(0..=total - 2);
                (merges, total - merges)
            }
        };
        let mut script = ErrorScript { seed: gt_seed, ..Default::default() };
        let mut seg = gt.clone();
        let mut ok = true;
        for i in 0..n_merges {
            match inject_merge_filtered(&seg, &mut rng, &filter) {
                Ok((next, pair)) => {
                    seg = next;
                    script.merges.push(pair);
                }
                Err(Error::Injection(_)) if i > 0 => break,
                Err(Error::Injection(_)) => {
                    ok = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if ok {
            for i in 0..n_splits {
                match inject_split_filtered(&seg, &mut rng, &filter) {
                    Ok((next, cut)) => {
                        seg = next;
                        script.splits.push(cut);
                    }
                    Err(Error::Injection(_)) if i > 0 => break,
                    Err(Error::Injection(_)) => {
                        ok = false;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        let has_required = match kind {
            ErrorKind::Merge => !script.merges.is_empty(),
            ErrorKind::Split => !script.splits.is_empty(),
            ErrorKind::Combined => !script.merges.is_empty() && !script.splits.is_empty(),
        };
        if ok && has_required {
            return Ok(ImageCase { em, gt, seg, script });
        }
    }
    Err(Error::Injection(format!(
        "could not place the required {kind} error(s) after 10 ground-truth redraws"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::cremi_score;

    #[test]
    fn two_site_voronoi() {
        let (em, gt) = gen_ground_truth(64, 64, 2, 11).unwrap();
        assert_eq!(gt.distinct_labels(), vec![1, 2]);
        // Membrane pixels are darker than interiors.
        let mut boundary_max = 0u8;
        let mut interior_min = 255u8;
        for y in 0..64 {
            for x in 0..64 {
                let here = gt.get(x, y);
                let boundary = (x > 0 && gt.get(x - 1, y) != here)
                    || (x < 63 && gt.get(x + 1, y) != here)
                    || (y > 0 && gt.get(x, y - 1) != here)
                    || (y < 63 && gt.get(x, y + 1) != here);
                if boundary {
                    boundary_max = boundary_max.max(em.get(x, y));
                } else {
                    interior_min = interior_min.min(em.get(x, y));
                }
            }
        }
        assert!(boundary_max < interior_min, "membrane {boundary_max} vs interior {interior_min}");
    }

    #[test]
    fn bucketed_voronoi_matches_bruteforce() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let (width, height) = (rng.gen_range(16..96), rng.gen_range(16..96));
            let n = rng.gen_range(2..30);
            let mut sites = BTreeSet::new();
            while sites.len() < n {
                sites.insert((rng.gen_range(0..width), rng.gen_range(0..height)));
            }
            let sites: Vec<(usize, usize)> = sites.into_iter().collect();
            let fast = voronoi_labels(width, height, &sites);
            for y in 0..height {
                for x in 0..width {
                    let mut best = u64::MAX;
                    let mut best_label = 0u32;
                    for (k, &(sx, sy)) in sites.iter().enumerate() {
                        let dx = sx as i64 - x as i64;
                        let dy = sy as i64 - y as i64;
                        let d = (dx * dx + dy * dy) as u64;
                        if d < best {
                            best = d;
                            best_label = k as u32 + 1;
                        }
                    }
                    assert_eq!(fast[y * width + x], best_label, "pixel ({x}, {y})");
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_ground_truth(64, 64, 5, 42).unwrap();
        let b = gen_ground_truth(64, 64, 5, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fifty_connected_components_on_512() {
        let (_, gt) = gen_ground_truth(512, 512, 50, 3).unwrap();
        let counts = component_counts(&gt);
        assert_eq!(counts.len(), 50);
        assert!(counts.values().all(|&c| c == 1));
    }

    #[test]
    fn n_seeds_validation() {
        assert!(matches!(gen_ground_truth(64, 64, 1, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn merge_error_is_merge_only_and_local() {
        let (_, gt) = gen_ground_truth(64, 64, 6, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (seg, script) = inject_merge_error(&gt, &mut rng).unwrap();
        let report = cremi_score(&gt, &seg).unwrap();
        assert_eq!(report.voi_split, 0.0);
        assert!(report.voi_merge > 0.0);
        // Only the relabeled segment's pixels changed.
        let (_, b) = script.merges[0];
        for (before, after) in gt.data().iter().zip(seg.data()) {
            if before != after {
                assert_eq!(*before, b);
            }
        }
        assert_eq!(replay_script(&gt, &script).unwrap(), seg);
    }

    #[test]
    fn split_error_is_split_only_and_adds_one_segment() {
        let (_, gt) = gen_ground_truth(64, 64, 6, 19).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (seg, script) = inject_split_error(&gt, &mut rng).unwrap();
        let report = cremi_score(&gt, &seg).unwrap();
        assert_eq!(report.voi_merge, 0.0);
        assert!(report.voi_split > 0.0);
        assert_eq!(seg.distinct_labels().len(), gt.distinct_labels().len() + 1);
        assert_eq!(replay_script(&gt, &script).unwrap(), seg);
    }

    #[test]
    fn split_of_two_pixel_segment() {
        // Only segment 5 has two pixels, so it is the only split candidate.
        let gt = LabelMap::from_vec(4, 1, vec![5, 5, 9, 7]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (seg, cut) = inject_split_filtered(&gt, &mut rng, &InjectFilter::none()).unwrap();
        assert_eq!(cut.label, 5);
        assert_eq!(seg.data().iter().filter(|&&l| l == 5).count(), 1);
        assert_eq!(seg.data().iter().filter(|&&l| l == cut.fresh).count(), 1);
    }

    #[test]
    fn no_adjacent_pair_is_injection_error() {
        // Single-label map: nothing to merge.
        let gt = LabelMap::new(8, 8, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(inject_merge_error(&gt, &mut rng), Err(Error::Injection(_))));
    }

    #[test]
    fn patch_testset_regimes() {
        for (kind, check) in [
            (ErrorKind::Merge, &((|r: &crate::metrics::MetricReport| r.voi_split == 0.0 && r.voi_merge > 0.0) as fn(&crate::metrics::MetricReport) -> bool)),
            (ErrorKind::Split, &((|r: &crate::metrics::MetricReport| r.voi_merge == 0.0 && r.voi_split > 0.0) as fn(&crate::metrics::MetricReport) -> bool)),
        ] {
            let cases = make_patch_testset(kind, 4, 99).unwrap();
            assert_eq!(cases.len(), 4);
            for case in &cases {
                let report = cremi_score(&case.gt, &case.seg).unwrap();
                assert!(check(&report), "{kind}: {report:?}");
                assert_eq!(replay_script(&case.gt, &case.script).unwrap(), case.seg);
            }
        }
        let combined = make_patch_testset(ErrorKind::Combined, 4, 99).unwrap();
        for case in &combined {
            let report = cremi_score(&case.gt, &case.seg).unwrap();
            assert!(report.voi_split > 0.0 && report.voi_merge > 0.0);
        }
    }

    #[test]
    fn patch_testset_is_deterministic() {
        let a = make_patch_testset(ErrorKind::Combined, 3, 5).unwrap();
        let b = make_patch_testset(ErrorKind::Combined, 3, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.seg, y.seg);
            assert_eq!(x.em, y.em);
        }
    }

    #[test]
    fn error_image_respects_bbox_cap() {
        let opts = ImageGenOpts { width: 256, height: 256, n_seeds: 60, ..Default::default() };
        let case = gen_error_image(ErrorKind::Split, 31, &opts).unwrap();
        assert!(!case.script.splits.is_empty());
        for cut in &case.script.splits {
            let pixels = pixels_of(&case.gt, cut.label);
            let (x0, y0, x1, y1) = bbox_rect(&pixels);
            assert!(x1 - x0 + 1 <= opts.error_bbox_cap && y1 - y0 + 1 <= opts.error_bbox_cap);
        }
    }
}
