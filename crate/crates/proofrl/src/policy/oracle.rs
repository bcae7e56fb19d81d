//! Scripted policies: the ground-truth oracle that enables desk-scale
//! verification of environments and pipelines, and a uniform-random baseline.
//!
//! The oracle is greedy on true CREMI reduction and never takes a non-stop
//! action that cannot strictly improve: corrector choices are trial-applied,
//! the selector falls back to the other corrector when its preferred one has
//! no improving action, and the locator skips erroneous patches on which
//! neither corrector can make progress.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::editops::{gaussian_smooth, watershed_split, AltitudeMap};
use crate::env::{
    AgentKind, EnvConfig, ErrorOracle, SELECTOR_ACTION_MERGER, SELECTOR_ACTION_SPLITTER,
    SELECTOR_ACTION_STOP,
};
use crate::error::Error;
use crate::metrics::{arand, contingency, cremi_score, voi, ContingencyTable};
use crate::raster::{GridSpec, LabelMap, PatchRef};

use super::{Policy, PolicyView};

/// Uniform-random action choice over the agent's action space.
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn choose(&mut self, view: &PolicyView<'_>, rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(0..view.action_count())
    }
}

/// Ground-truth-scripted policy.
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn choose(&mut self, view: &PolicyView<'_>, rng: &mut ChaCha8Rng) -> usize {
        let _ = rng;
        let Some(oracle) = view.oracle else {
            debug_assert!(false, "oracle policy without exposed ground truth");
            return view.stop_action();
        };
        match view.kind {
            AgentKind::Locator => locator_choice(view, &oracle),
            AgentKind::Selector => selector_choice(view, &oracle),
            AgentKind::Splitter => splitter_choice(view, &oracle),
            AgentKind::Merger => merger_choice(view, &oracle),
        }
    }
}

fn cremi_of_table(table: &ContingencyTable) -> f64 {
    if table.n() == 0 {
        return 0.0;
    }
    let (s, m) = voi(table).expect("nonempty table");
    let a = arand(table).expect("nonempty table");
    ((s + m) * a).sqrt()
}

/// Segmentation labels spanning more than one ground-truth label. Splitting
/// any other segment can only raise the score, so trials are restricted to
/// these.
fn suspect_labels(table: &ContingencyTable) -> Vec<u32> {
    let mut gt_count: BTreeMap<u32, usize> = BTreeMap::new();
    for &(_, s) in table.joint().keys() {
        *gt_count.entry(s).or_insert(0) += 1;
    }
    gt_count.into_iter().filter(|&(_, c)| c > 1).map(|(s, _)| s).collect()
}

/// Strictly-improving watershed actions: trial-applies grid points in
/// suspect segments and scores each result through a table update on the
/// flipped pixels. With `find_best` the full grid is searched (ties to the
/// lowest index); otherwise the first improving action is returned, which is
/// all a fixability probe needs.
fn splitter_improving_action(
    gt: &LabelMap,
    labels: &LabelMap,
    altitude: &AltitudeMap,
    grid: &GridSpec,
    find_best: bool,
) -> Option<(usize, f64)> {
    let table = contingency(gt, labels).expect("same dims");
    let before = cremi_of_table(&table);
    let suspects = suspect_labels(&table);
    if suspects.is_empty() {
        return None;
    }
    let trial_label = labels.max_label().saturating_add(1);
    let gt_data = gt.data();
    let mut best: Option<(usize, f64)> = None;
    for index in 0..grid.len() {
        let pixel = grid.point_to_pixel(index).expect("grid index in range");
        let here = labels.get(pixel.0, pixel.1);
        if here == 0 || !suspects.contains(&here) {
            continue;
        }
        let split = match watershed_split(labels, altitude, pixel, trial_label) {
            Ok(map) => map,
            Err(Error::NoOp(_)) => continue,
            Err(e) => panic!("trial watershed failed: {e}"),
        };
        let mut trial = table.clone();
        for (idx, (&old, &new)) in labels.data().iter().zip(split.data()).enumerate() {
            if old != new {
                trial.reassign(gt_data[idx], old, new, 1);
            }
        }
        let after = cremi_of_table(&trial);
        if after < before && best.map_or(true, |(_, b)| after < b) {
            best = Some((index, after));
            if !find_best {
                return best;
            }
        }
    }
    best
}

/// Grid indices under each segment label, ascending per label.
fn grid_points_by_label(labels: &LabelMap, grid: &GridSpec) -> BTreeMap<u32, Vec<usize>> {
    let mut points: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for index in 0..grid.len() {
        let (x, y) = grid.point_to_pixel(index).expect("grid index in range");
        points.entry(labels.get(x, y)).or_default().push(index);
    }
    points
}

fn adjacent_label_pairs(labels: &LabelMap) -> Vec<(u32, u32)> {
    let (width, height) = (labels.width(), labels.height());
    let data = labels.data();
    let mut pairs = std::collections::BTreeSet::new();
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

/// Score of merging b into a, via a pure table update.
fn trial_merge_cremi(table: &ContingencyTable, a: u32, b: u32) -> f64 {
    let mut trial = table.clone();
    for (g, count) in table.rows_for_seg(b) {
        trial.reassign(g, b, a, count);
    }
    cremi_of_table(&trial)
}

/// Labels owning at least one pixel on the patch border. Such a segment may
/// extend beyond the patch, so absorbing it into a neighbor would leave an
/// orphaned fragment outside the window on write-back.
fn border_labels(labels: &LabelMap) -> std::collections::BTreeSet<u32> {
    let (width, height) = (labels.width(), labels.height());
    let data = labels.data();
    let mut out = std::collections::BTreeSet::new();
    for x in 0..width {
        out.insert(data[x]);
        out.insert(data[(height - 1) * width + x]);
    }
    for y in 0..height {
        out.insert(data[y * width]);
        out.insert(data[y * width + width - 1]);
    }
    out
}

/// Best strictly-improving directed merge `(keeper, absorbed)` among
/// adjacent pairs: both segments must be selectable (lie under a grid
/// point), and on embedded patches the absorbed segment must not touch the
/// border, so the merge is complete rather than a partial relabel of a
/// segment that continues outside the window. With a pending first pick,
/// the keeper is fixed.
fn best_merger_pair(
    gt: &LabelMap,
    labels: &LabelMap,
    grid: &GridSpec,
    pending: Option<u32>,
    embedded: bool,
) -> Option<(u32, u32, f64)> {
    let table = contingency(gt, labels).expect("same dims");
    let before = cremi_of_table(&table);
    let points = grid_points_by_label(labels, grid);
    let border = if embedded { border_labels(labels) } else { Default::default() };
    let mut best: Option<(u32, u32, f64)> = None;
    for &(a, b) in &adjacent_label_pairs(labels) {
        let directions: [(u32, u32); 2] = [(a, b), (b, a)];
        for &(keeper, absorbed) in &directions {
            if let Some(p) = pending {
                if keeper != p {
                    continue;
                }
            } else if !points.contains_key(&keeper) {
                continue;
            }
            if !points.contains_key(&absorbed) || border.contains(&absorbed) {
                continue;
            }
            let after = trial_merge_cremi(&table, keeper, absorbed);
            if after < before && best.map_or(true, |(_, _, s)| after < s) {
                best = Some((keeper, absorbed, after));
            }
        }
    }
    best
}

fn splitter_choice(view: &PolicyView<'_>, oracle: &ErrorOracle<'_>) -> usize {
    let altitude = view.altitude.expect("splitter view carries the altitude map");
    match splitter_improving_action(oracle.gt, &view.state.label, altitude, &view.grid, true) {
        Some((index, _)) => index,
        None => view.stop_action(),
    }
}

fn merger_choice(view: &PolicyView<'_>, oracle: &ErrorOracle<'_>) -> usize {
    let labels = &view.state.label;
    if matches!(view.pending_merge, Some(0)) {
        return view.stop_action();
    }
    match best_merger_pair(oracle.gt, labels, &view.grid, view.pending_merge, view.embedded) {
        Some((first, second, _)) => {
            let points = grid_points_by_label(labels, &view.grid);
            let target = if view.pending_merge.is_some() { second } else { first };
            points[&target][0]
        }
        None => view.stop_action(),
    }
}

fn selector_choice(view: &PolicyView<'_>, oracle: &ErrorOracle<'_>) -> usize {
    let labels = &view.state.label;
    let report = match cremi_score(oracle.gt, labels) {
        Ok(report) => report,
        Err(Error::UndefinedMetric(_)) => return SELECTOR_ACTION_STOP,
        Err(e) => panic!("selector oracle on malformed patch: {e}"),
    };
    if report.cremi <= oracle.tau_err {
        return SELECTOR_ACTION_STOP;
    }
    let merger_ok = best_merger_pair(oracle.gt, labels, &view.grid, None, view.embedded).is_some();
    let splitter_ok = view
        .altitude
        .map(|altitude| {
            splitter_improving_action(oracle.gt, labels, altitude, &view.grid, false).is_some()
        })
        .unwrap_or(false);
    // Split errors show up as over-segmentation (voi_split); the merger
    // undoes them. Merge errors are the splitter's job. When the preferred
    // corrector has no improving action, fall back to the other.
    let prefer_merger = report.voi_split > report.voi_merge;
    match (prefer_merger, merger_ok, splitter_ok) {
        (true, true, _) => SELECTOR_ACTION_MERGER,
        (false, _, true) => SELECTOR_ACTION_SPLITTER,
        (true, false, true) => SELECTOR_ACTION_SPLITTER,
        (false, true, false) => SELECTOR_ACTION_MERGER,
        _ => SELECTOR_ACTION_STOP,
    }
}

/// Per-patch state the locator oracle needs: score and whether any corrector
/// can strictly improve it.
fn patch_is_fixable(
    em: &crate::raster::EmImage,
    gt: &LabelMap,
    labels: &LabelMap,
    cfg: &EnvConfig,
    grid: &GridSpec,
) -> bool {
    // Patches handed down by the locator are always embedded views.
    if best_merger_pair(gt, labels, grid, None, true).is_some() {
        return true;
    }
    let altitude = gaussian_smooth(em, cfg.sigma_smooth);
    splitter_improving_action(gt, labels, &altitude, grid, false).is_some()
}

fn locator_choice(view: &PolicyView<'_>, oracle: &ErrorOracle<'_>) -> usize {
    // Erroneous patches, highest CREMI first.
    let mut candidates: Vec<(f64, usize)> = Vec::new();
    for index in 0..view.grid.len() {
        let (x, y) = view.grid.point_to_pixel(index).expect("grid index in range");
        let patch = PatchRef::centered(x, y, view.patch_size).expect("patch geometry validated");
        let gt = oracle.gt.crop(&patch).expect("patch geometry validated");
        let seg = view.state.label.crop(&patch).expect("patch geometry validated");
        let score = crate::env::patch_cremi(&gt, &seg);
        if score > oracle.tau_err {
            candidates.push((score, index));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    // Highest-scoring patch on which a corrector can actually act.
    let corrector_grid = view.corrector_grid;
    for &(_, index) in &candidates {
        let (x, y) = view.grid.point_to_pixel(index).expect("grid index in range");
        let patch = PatchRef::centered(x, y, view.patch_size).expect("patch geometry validated");
        let em = view.state.em.crop(&patch).expect("patch geometry validated");
        let gt = oracle.gt.crop(&patch).expect("patch geometry validated");
        let seg = view.state.label.crop(&patch).expect("patch geometry validated");
        if patch_is_fixable(&em, &gt, &seg, view.cfg, &corrector_grid) {
            return index;
        }
    }
    view.stop_action()
}
