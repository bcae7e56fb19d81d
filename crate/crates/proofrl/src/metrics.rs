//! Segmentation-quality metrics used as reward signal and evaluation score:
//! variation-of-information split/merge, adapted Rand error, and their
//! combination into a single CREMI score (lower is better).
//!
//! Conventions, pinned so golden values stay stable:
//! - natural logarithms;
//! - `voi_split = H(seg | gt)` so over-segmentation raises the split term,
//!   `voi_merge = H(gt | seg)`;
//! - ground-truth label 0 pixels are excluded from every count;
//! - `cremi = sqrt((voi_split + voi_merge) * arand)`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::raster::LabelMap;

/// Joint label co-occurrence counts between a ground-truth map and a
/// segmentation, excluding ground-truth background pixels.
#[derive(Debug, Clone, Default)]
pub struct ContingencyTable {
    joint: BTreeMap<(u32, u32), u64>,
    gt_marginal: BTreeMap<u32, u64>,
    seg_marginal: BTreeMap<u32, u64>,
    n: u64,
}

impl ContingencyTable {
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn joint(&self) -> &BTreeMap<(u32, u32), u64> {
        &self.joint
    }

    pub fn gt_marginal(&self) -> &BTreeMap<u32, u64> {
        &self.gt_marginal
    }

    pub fn seg_marginal(&self) -> &BTreeMap<u32, u64> {
        &self.seg_marginal
    }

    /// Moves `count` pixels of ground-truth label `gt` from segmentation
    /// label `old_seg` to `new_seg`, keeping marginals consistent. Trial
    /// edits cost one table update instead of a raster rescan.
    pub fn reassign(&mut self, gt: u32, old_seg: u32, new_seg: u32, count: u64) {
        if gt == 0 || count == 0 || old_seg == new_seg {
            return;
        }
        let cell = self.joint.get_mut(&(gt, old_seg)).expect("reassign of uncounted cell");
        assert!(*cell >= count, "reassign exceeds cell count");
        *cell -= count;
        if *cell == 0 {
            self.joint.remove(&(gt, old_seg));
        }
        *self.joint.entry((gt, new_seg)).or_insert(0) += count;
        let m = self.seg_marginal.get_mut(&old_seg).expect("reassign of uncounted segment");
        *m -= count;
        if *m == 0 {
            self.seg_marginal.remove(&old_seg);
        }
        *self.seg_marginal.entry(new_seg).or_insert(0) += count;
    }

    /// Segmentation labels co-occurring with the given segmentation label's
    /// rows — the ground-truth distribution under one segment.
    pub fn rows_for_seg(&self, seg: u32) -> Vec<(u32, u64)> {
        self.joint
            .iter()
            .filter(|(&(_, s), _)| s == seg)
            .map(|(&(g, _), &c)| (g, c))
            .collect()
    }
}

/// Counts label co-occurrences pixel by pixel. Deterministic: the maps are
/// ordered, so downstream float accumulation order is fixed.
pub fn contingency(gt: &LabelMap, seg: &LabelMap) -> Result<ContingencyTable> {
    if !gt.same_dims(seg) {
        return Err(Error::Dimension(format!(
            "contingency on {}x{} vs {}x{}",
            gt.width(),
            gt.height(),
            seg.width(),
            seg.height()
        )));
    }
    let mut table = ContingencyTable::default();
    for (&g, &s) in gt.data().iter().zip(seg.data()) {
        if g == 0 {
            continue;
        }
        *table.joint.entry((g, s)).or_insert(0) += 1;
        *table.gt_marginal.entry(g).or_insert(0) += 1;
        *table.seg_marginal.entry(s).or_insert(0) += 1;
        table.n += 1;
    }
    Ok(table)
}

/// Conditional entropies `(H(seg|gt), H(gt|seg))` in nats.
pub fn voi(table: &ContingencyTable) -> Result<(f64, f64)> {
    if table.n == 0 {
        return Err(Error::UndefinedMetric("voi of an empty contingency table".into()));
    }
    let n = table.n as f64;
    let mut split = 0.0;
    let mut merge = 0.0;
    for (&(g, s), &c) in &table.joint {
        let p = c as f64 / n;
        let pg = table.gt_marginal[&g] as f64 / n;
        let ps = table.seg_marginal[&s] as f64 / n;
        split -= p * (p / pg).ln();
        merge -= p * (p / ps).ln();
    }
    // Each term is >= 0 analytically; clamp float dust.
    Ok((split.max(0.0), merge.max(0.0)))
}

/// Adapted Rand error: one minus the F-score of pairwise pixel agreement.
pub fn arand(table: &ContingencyTable) -> Result<f64> {
    if table.n == 0 {
        return Err(Error::UndefinedMetric("arand of an empty contingency table".into()));
    }
    let n = table.n as f64;
    let sum_joint_sq: f64 = table.joint.values().map(|&c| (c as f64 / n).powi(2)).sum();
    let sum_gt_sq: f64 = table.gt_marginal.values().map(|&c| (c as f64 / n).powi(2)).sum();
    let sum_seg_sq: f64 = table.seg_marginal.values().map(|&c| (c as f64 / n).powi(2)).sum();
    Ok((1.0 - 2.0 * sum_joint_sq / (sum_gt_sq + sum_seg_sq)).max(0.0))
}

/// Bundle of all four metric values for one (gt, seg) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub voi_split: f64,
    pub voi_merge: f64,
    pub arand: f64,
    pub cremi: f64,
}

impl MetricReport {
    /// Structured text form, keys at 12 significant digits.
    pub fn to_report(&self) -> String {
        format!(
            "voi_split {:.11e}\nvoi_merge {:.11e}\narand {:.11e}\ncremi {:.11e}\n",
            self.voi_split, self.voi_merge, self.arand, self.cremi
        )
    }
}

pub fn cremi_score(gt: &LabelMap, seg: &LabelMap) -> Result<MetricReport> {
    let table = contingency(gt, seg)?;
    if table.n == 0 {
        return Err(Error::UndefinedMetric("cremi of an all-background ground truth".into()));
    }
    let (voi_split, voi_merge) = voi(&table)?;
    let arand = arand(&table)?;
    let cremi = ((voi_split + voi_merge) * arand).sqrt();
    Ok(MetricReport { voi_split, voi_merge, arand, cremi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::LabelMap;

    fn map(width: usize, height: usize, labels: &[u32]) -> LabelMap {
        LabelMap::from_vec(width, height, labels.to_vec()).unwrap()
    }

    #[test]
    fn contingency_counts() {
        let gt = map(2, 2, &[1, 1, 2, 2]);
        let seg = map(2, 2, &[1, 1, 1, 2]);
        let t = contingency(&gt, &seg).unwrap();
        assert_eq!(t.n(), 4);
        assert_eq!(t.joint()[&(1, 1)], 2);
        assert_eq!(t.joint()[&(2, 1)], 1);
        assert_eq!(t.joint()[&(2, 2)], 1);
    }

    #[test]
    fn contingency_excludes_gt_background() {
        let gt = map(2, 2, &[0, 0, 1, 1]);
        let seg = map(2, 2, &[5, 5, 5, 5]);
        let t = contingency(&gt, &seg).unwrap();
        assert_eq!(t.n(), 2);
    }

    #[test]
    fn contingency_dimension_mismatch() {
        let gt = map(2, 2, &[1, 1, 2, 2]);
        let seg = map(2, 1, &[1, 1]);
        assert!(matches!(contingency(&gt, &seg), Err(Error::Dimension(_))));
    }

    #[test]
    fn voi_of_identity_is_zero() {
        let gt = map(2, 2, &[1, 1, 2, 2]);
        let t = contingency(&gt, &gt).unwrap();
        let (s, m) = voi(&t).unwrap();
        assert_eq!((s, m), (0.0, 0.0));
    }

    #[test]
    fn voi_two_by_two_case() {
        // gt [[1,1],[2,2]], seg [[1,1],[1,2]]: seg 1 spans both gt labels and
        // gt 2 spans both seg labels. Frozen values from the brute-force
        // entropy over the explicit 4-pixel lists:
        //   H(seg|gt) = ln(2)/2, H(gt|seg) = ln(3/2)/2 + ln(3)/4.
        let gt = map(2, 2, &[1, 1, 2, 2]);
        let seg = map(2, 2, &[1, 1, 1, 2]);
        let t = contingency(&gt, &seg).unwrap();
        let (split, merge) = voi(&t).unwrap();
        let expect_split = 0.5 * 2.0f64.ln();
        let expect_merge = 0.5 * 1.5f64.ln() + 0.25 * 3.0f64.ln();
        assert!((split - expect_split).abs() < 1e-12, "split {split}");
        assert!((merge - expect_merge).abs() < 1e-12, "merge {merge}");
    }

    #[test]
    fn voi_empty_table_is_undefined() {
        let gt = map(2, 1, &[0, 0]);
        let seg = map(2, 1, &[1, 1]);
        let t = contingency(&gt, &seg).unwrap();
        assert!(matches!(voi(&t), Err(Error::UndefinedMetric(_))));
        assert!(matches!(arand(&t), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn arand_identity_and_shatter() {
        let gt = map(4, 4, &[1; 16]);
        let t = contingency(&gt, &gt).unwrap();
        assert_eq!(arand(&t).unwrap(), 0.0);

        // gt constant, seg all-unique on n pixels: arand = (n-1)/(n+1).
        let n = 16u32;
        let seg = map(4, 4, &(1..=n).collect::<Vec<_>>());
        let t = contingency(&gt, &seg).unwrap();
        let expect = (n as f64 - 1.0) / (n as f64 + 1.0);
        assert!((arand(&t).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn arand_two_by_two_case() {
        let gt = map(2, 2, &[1, 1, 2, 2]);
        let seg = map(2, 2, &[1, 1, 1, 2]);
        let t = contingency(&gt, &seg).unwrap();
        assert!((arand(&t).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cremi_identity_is_zero() {
        let gt = map(2, 2, &[1, 1, 2, 2]);
        let r = cremi_score(&gt, &gt).unwrap();
        assert_eq!(r.cremi, 0.0);
    }

    #[test]
    fn cremi_of_relabeling_is_zero() {
        let gt = map(2, 2, &[1, 1, 2, 2]);
        let seg = map(2, 2, &[9, 9, 4, 4]);
        let r = cremi_score(&gt, &seg).unwrap();
        assert_eq!(r.cremi, 0.0);
    }

    #[test]
    fn merge_error_sign_structure() {
        // seg merges the two gt segments: pure under-segmentation.
        let gt = map(2, 2, &[1, 1, 2, 2]);
        let seg = map(2, 2, &[1, 1, 1, 1]);
        let r = cremi_score(&gt, &seg).unwrap();
        assert_eq!(r.voi_split, 0.0);
        assert!(r.voi_merge > 0.0);
        assert!(r.cremi > 0.0);
    }

    #[test]
    fn split_error_sign_structure() {
        let gt = map(2, 2, &[1, 1, 1, 1]);
        let seg = map(2, 2, &[1, 1, 2, 2]);
        let r = cremi_score(&gt, &seg).unwrap();
        assert_eq!(r.voi_merge, 0.0);
        assert!(r.voi_split > 0.0);
    }

    #[test]
    fn swapping_arguments_swaps_voi_terms() {
        let gt = map(2, 2, &[1, 1, 2, 2]);
        let seg = map(2, 2, &[1, 1, 1, 2]);
        let fwd = cremi_score(&gt, &seg).unwrap();
        let rev = cremi_score(&seg, &gt).unwrap();
        assert!((fwd.voi_split - rev.voi_merge).abs() < 1e-12);
        assert!((fwd.voi_merge - rev.voi_split).abs() < 1e-12);
    }

    #[test]
    fn all_background_gt_is_undefined() {
        let gt = map(2, 2, &[0, 0, 0, 0]);
        let seg = map(2, 2, &[1, 1, 1, 1]);
        assert!(matches!(cremi_score(&gt, &seg), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn reassign_matches_recount() {
        let gt = map(2, 2, &[1, 1, 2, 2]);
        let seg = map(2, 2, &[1, 1, 1, 2]);
        let mut t = contingency(&gt, &seg).unwrap();
        // Move the (2, 1) pixel to segment 9, as a trial split would.
        t.reassign(2, 1, 9, 1);
        let seg2 = map(2, 2, &[1, 1, 9, 2]);
        let fresh = contingency(&gt, &seg2).unwrap();
        assert_eq!(t.joint(), fresh.joint());
        assert_eq!(t.seg_marginal(), fresh.seg_marginal());
        assert_eq!(t.gt_marginal(), fresh.gt_marginal());
        assert_eq!(t.n(), fresh.n());
    }

    #[test]
    fn report_has_twelve_significant_digits() {
        let r = MetricReport {
            voi_split: 0.5 * 2.0f64.ln(),
            voi_merge: 0.0,
            arand: 1.0 / 3.0,
            cremi: 0.1,
        };
        let text = r.to_report();
        assert!(text.contains("voi_split 3.46573590280e-1"), "{text}");
        assert!(text.contains("arand 3.33333333333e-1"), "{text}");
    }
}
