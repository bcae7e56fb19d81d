//! Primitive label-editing operators invoked by the agents: seeded watershed
//! split, segment merge, Gaussian smoothing and point-map rendering.
//!
//! All operators are pure functions over value inputs. Edits touch only the
//! pixels of the affected segment(s); everything else is bit-identical.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::raster::{EmImage, LabelMap, PointMap, Raster};

/// Real-valued terrain for the watershed; high values are ridges (membranes).
pub type AltitudeMap = Raster<f32>;

/// Separable Gaussian blur of the EM image, kernel truncated at +-3 sigma,
/// borders handled by edge clamping. The result is inverted
/// (`255 - smoothed`) so dark membranes become high-altitude ridges.
pub fn gaussian_smooth(img: &EmImage, sigma: f64) -> AltitudeMap {
    assert!(sigma > 0.0, "sigma must be positive");
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for k in -radius..=radius {
        kernel.push((-((k * k) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= norm;
    }

    let (width, height) = (img.width(), img.height());
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;

    // Horizontal pass.
    let mut tmp = vec![0.0f64; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (ki, w) in kernel.iter().enumerate() {
                let sx = clamp(x as i64 + ki as i64 - radius, width);
                acc += w * img.get(sx, y) as f64;
            }
            tmp[y * width + x] = acc;
        }
    }
    // Vertical pass, inverted into altitude.
    let mut out = vec![0.0f32; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (ki, w) in kernel.iter().enumerate() {
                let sy = clamp(y as i64 + ki as i64 - radius, height);
                acc += w * tmp[sy * width + x];
            }
            out[y * width + x] = (255.0 - acc) as f32;
        }
    }
    Raster::from_vec(width, height, out).expect("dimensions preserved")
}

/// Four-connected component of `labels[start]` containing `start`,
/// as raster indices in discovery (BFS) order.
fn component_of(labels: &LabelMap, start: (usize, usize)) -> Vec<usize> {
    let (width, height) = (labels.width(), labels.height());
    let target = labels.get(start.0, start.1);
    let start_idx = start.1 * width + start.0;
    let mut visited = vec![false; width * height];
    let mut queue = std::collections::VecDeque::new();
    let mut out = Vec::new();
    visited[start_idx] = true;
    queue.push_back(start_idx);
    while let Some(idx) = queue.pop_front() {
        out.push(idx);
        let (x, y) = (idx % width, idx / width);
        let mut push = |nx: usize, ny: usize| {
            let nidx = ny * width + nx;
            if !visited[nidx] && labels.data()[nidx] == target {
                visited[nidx] = true;
                queue.push_back(nidx);
            }
        };
        if x > 0 {
            push(x - 1, y);
        }
        if x + 1 < width {
            push(x + 1, y);
        }
        if y > 0 {
            push(x, y - 1);
        }
        if y + 1 < height {
            push(x, y + 1);
        }
    }
    out
}

/// Four-connected BFS distances from `start` over the component; unreachable
/// pixels keep `usize::MAX`.
fn geodesic_distances(labels: &LabelMap, component: &[usize], start_idx: usize) -> Vec<usize> {
    let width = labels.width();
    let height = labels.height();
    let mut member = vec![false; width * height];
    for &idx in component {
        member[idx] = true;
    }
    let mut dist = vec![usize::MAX; width * height];
    let mut queue = std::collections::VecDeque::new();
    dist[start_idx] = 0;
    queue.push_back(start_idx);
    while let Some(idx) = queue.pop_front() {
        let d = dist[idx];
        let (x, y) = (idx % width, idx / width);
        let mut push = |nidx: usize| {
            if member[nidx] && dist[nidx] == usize::MAX {
                dist[nidx] = d + 1;
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
    dist
}

/// Second flood seed: the component pixel at maximal geodesic distance from
/// the target, restricted to pixels no higher than the component's median
/// altitude. The segment's outer rim sits on the dark membrane band, so the
/// unrestricted farthest pixel would start on high ground and be besieged
/// before its basin can grow; the altitude filter keeps the seed inside a
/// basin. Falls back to the unrestricted farthest pixel, ties to the lowest
/// raster index.
fn second_seed(component: &[usize], dist: &[usize], altitude: &AltitudeMap, start_idx: usize) -> usize {
    let mut alts: Vec<f32> = component.iter().map(|&idx| altitude.data()[idx]).collect();
    alts.sort_by(f32::total_cmp);
    let median = alts[(alts.len() - 1) / 2];
    let pick = |filter: bool| {
        let mut best: Option<(usize, usize)> = None;
        for &idx in component {
            if idx == start_idx || (filter && altitude.data()[idx] > median) {
                continue;
            }
            let d = dist[idx];
            let better = match best {
                None => true,
                Some((bd, bi)) => d > bd || (d == bd && idx < bi),
            };
            if better {
                best = Some((d, idx));
            }
        }
        best.map(|(_, idx)| idx)
    };
    pick(true).or_else(|| pick(false)).expect("component has at least two pixels")
}

#[derive(PartialEq)]
struct FloodItem {
    altitude: f32,
    seq: u64,
    idx: usize,
    basin: u8,
}

impl Eq for FloodItem {}

impl Ord for FloodItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap via reversal: lowest altitude first, FIFO on ties.
        other
            .altitude
            .total_cmp(&self.altitude)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for FloodItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Splits the segment containing `target` into exactly two nonempty
/// four-connected regions by a two-seed priority flood over the altitude map.
///
/// Seed one is the target pixel; seed two is the segment pixel at maximal
/// geodesic distance from it among pixels at or below the segment's median
/// altitude (see `second_seed`). The flood assigns each pixel to the basin
/// that reaches it first when flooding from low altitude upward (FIFO
/// tie-break), so the basins meet along the highest ridge between the seeds.
/// The basin of seed two is relabeled to `fresh_label`; all other segments
/// are untouched.
pub fn watershed_split(
    labels: &LabelMap,
    altitude: &AltitudeMap,
    target: (usize, usize),
    fresh_label: u32,
) -> Result<LabelMap> {
    if !labels.same_dims(altitude) {
        return Err(Error::Dimension(format!(
            "labels {}x{} vs altitude {}x{}",
            labels.width(),
            labels.height(),
            altitude.width(),
            altitude.height()
        )));
    }
    if !labels.in_bounds(target.0, target.1) {
        return Err(Error::Bounds(format!("target {target:?} out of bounds")));
    }
    if fresh_label == 0 {
        return Err(Error::Label("fresh label must be nonzero".into()));
    }
    let old_label = labels.get(target.0, target.1);
    if old_label == 0 {
        return Err(Error::NoOp("watershed target on background".into()));
    }
    let component = component_of(labels, target);
    if component.len() < 2 {
        return Err(Error::NoOp("watershed target segment has a single pixel".into()));
    }

    let width = labels.width();
    let seed1 = target.1 * width + target.0;
    let dist = geodesic_distances(labels, &component, seed1);
    let seed2 = second_seed(&component, &dist, altitude, seed1);

    let mut member = vec![false; labels.len()];
    for &idx in &component {
        member[idx] = true;
    }
    let mut basin = vec![u8::MAX; labels.len()];
    let mut heap = BinaryHeap::new();
    let alt = altitude.data();
    heap.push(FloodItem { altitude: alt[seed1], seq: 0, idx: seed1, basin: 0 });
    heap.push(FloodItem { altitude: alt[seed2], seq: 1, idx: seed2, basin: 1 });
    let mut seq = 2u64;
    let height = labels.height();
    while let Some(item) = heap.pop() {
        if basin[item.idx] != u8::MAX {
            continue;
        }
        basin[item.idx] = item.basin;
        let (x, y) = (item.idx % width, item.idx / width);
        let mut push = |nidx: usize, seq: &mut u64| {
            if member[nidx] && basin[nidx] == u8::MAX {
                heap.push(FloodItem { altitude: alt[nidx], seq: *seq, idx: nidx, basin: item.basin });
                *seq += 1;
            }
        };
        if x > 0 {
            push(item.idx - 1, &mut seq);
        }
        if x + 1 < width {
            push(item.idx + 1, &mut seq);
        }
        if y > 0 {
            push(item.idx - width, &mut seq);
        }
        if y + 1 < height {
            push(item.idx + width, &mut seq);
        }
    }

    let mut out = labels.clone();
    for &idx in &component {
        if basin[idx] == 1 {
            out.data_mut()[idx] = fresh_label;
        }
    }
    Ok(out)
}

/// Relabels every pixel of `b` to `a`. The two segments must share at least
/// one four-adjacent pixel pair.
pub fn merge_segments(labels: &LabelMap, a: u32, b: u32) -> Result<LabelMap> {
    if a == b {
        return Err(Error::NoOp(format!("merge of segment {a} with itself")));
    }
    if a == 0 || b == 0 {
        return Err(Error::Label("cannot merge the background label".into()));
    }
    let (width, height) = (labels.width(), labels.height());
    let data = labels.data();
    let mut seen_a = false;
    let mut seen_b = false;
    let mut adjacent = false;
    for y in 0..height {
        for x in 0..width {
            let v = data[y * width + x];
            if v == a {
                seen_a = true;
            } else if v == b {
                seen_b = true;
            } else {
                continue;
            }
            let other = if v == a { b } else { a };
            if (x + 1 < width && data[y * width + x + 1] == other)
                || (y + 1 < height && data[(y + 1) * width + x] == other)
            {
                adjacent = true;
            }
        }
    }
    if !seen_a || !seen_b {
        return Err(Error::Label(format!(
            "merge of missing segment ({a} present: {seen_a}, {b} present: {seen_b})"
        )));
    }
    if !adjacent {
        return Err(Error::Adjacency(format!("segments {a} and {b} share no boundary")));
    }
    let mut out = labels.clone();
    for v in out.data_mut() {
        if *v == b {
            *v = a;
        }
    }
    Ok(out)
}

/// Returns a copy of the point map with a unit-peak Gaussian bump rendered at
/// `p`, merged by pointwise maximum and truncated at 3 sigma.
pub fn render_point(pm: &PointMap, p: (usize, usize), sigma: f64) -> PointMap {
    assert!(pm.in_bounds(p.0, p.1), "point {p:?} out of bounds");
    assert!(sigma > 0.0);
    let radius = (3.0 * sigma).ceil() as i64;
    let mut out = pm.clone();
    let (width, height) = (pm.width(), pm.height());
    let (px, py) = (p.0 as i64, p.1 as i64);
    for dy in -radius..=radius {
        let y = py + dy;
        if y < 0 || y >= height as i64 {
            continue;
        }
        for dx in -radius..=radius {
            let x = px + dx;
            if x < 0 || x >= width as i64 {
                continue;
            }
            let d2 = (dx * dx + dy * dy) as f64;
            if d2 > (3.0 * sigma) * (3.0 * sigma) {
                continue;
            }
            let bump = (-d2 / (2.0 * sigma * sigma)).exp() as f32;
            let cell = &mut out.data_mut()[y as usize * width + x as usize];
            if bump > *cell {
                *cell = bump;
            }
        }
    }
    out
}

/// Label under a pixel; background returns 0.
pub fn segment_at(labels: &LabelMap, p: (usize, usize)) -> u32 {
    labels.get(p.0, p.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::cremi_score;

    fn flat_altitude(width: usize, height: usize) -> AltitudeMap {
        AltitudeMap::new(width, height, 0.0).unwrap()
    }

    #[test]
    fn smooth_of_constant_is_constant() {
        let img = EmImage::new(16, 16, 100).unwrap();
        let alt = gaussian_smooth(&img, 2.0);
        for &v in alt.data() {
            assert!((v - 155.0).abs() < 1e-4, "{v}");
        }
    }

    #[test]
    fn smooth_impulse_preserves_mass() {
        // A unit impulse spreads over the kernel support; with clamped borders
        // far away, total mass equals the impulse (kernel is normalized).
        let mut img = EmImage::new(31, 31, 0).unwrap();
        img.set(15, 15, 255);
        let alt = gaussian_smooth(&img, 1.0);
        let mass: f64 = alt.data().iter().map(|&v| 255.0 - v as f64).sum();
        assert!((mass - 255.0).abs() < 1e-3, "mass {mass}");
        // Symmetric response around the impulse.
        assert!((alt.get(14, 15) - alt.get(16, 15)).abs() < 1e-4);
        assert!((alt.get(15, 13) - alt.get(15, 17)).abs() < 1e-4);
    }

    /// Two 4x4 lobes joined by a single-pixel high-altitude neck.
    /// Returns (labels, altitude, a pixel in the left lobe).
    fn dumbbell() -> (LabelMap, AltitudeMap, (usize, usize)) {
        let (width, height) = (9, 4);
        let mut labels = LabelMap::new(width, height, 0).unwrap();
        let mut altitude = flat_altitude(width, height);
        for y in 0..height {
            for x in 0..width {
                let in_left = x < 4;
                let in_neck = x == 4 && y == 1;
                let in_right = x > 4;
                if in_left || in_neck || in_right {
                    labels.set(x, y, 7);
                    altitude.set(x, y, if in_neck { 200.0 } else { 10.0 });
                } else {
                    altitude.set(x, y, 255.0);
                }
            }
        }
        (labels, altitude, (1, 1))
    }

    #[test]
    fn watershed_cuts_at_the_neck() {
        let (labels, altitude, seed) = dumbbell();
        let out = watershed_split(&labels, &altitude, seed, 8).unwrap();
        // Left lobe keeps the old label, right lobe gets the fresh one; the
        // neck pixel may fall on either side of the ridge.
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(out.get(x, y), 7, "left lobe at ({x}, {y})");
            }
            for x in 5..9 {
                assert_eq!(out.get(x, y), 8, "right lobe at ({x}, {y})");
            }
        }
        assert_eq!(out.distinct_labels().len(), labels.distinct_labels().len() + 1);
    }

    #[test]
    fn watershed_is_deterministic() {
        let (labels, altitude, seed) = dumbbell();
        let a = watershed_split(&labels, &altitude, seed, 8).unwrap();
        let b = watershed_split(&labels, &altitude, seed, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn watershed_rejects_background_and_single_pixel() {
        let mut labels = LabelMap::new(4, 4, 0).unwrap();
        labels.set(2, 2, 5);
        let altitude = flat_altitude(4, 4);
        assert!(matches!(
            watershed_split(&labels, &altitude, (0, 0), 9),
            Err(Error::NoOp(_))
        ));
        assert!(matches!(
            watershed_split(&labels, &altitude, (2, 2), 9),
            Err(Error::NoOp(_))
        ));
    }

    #[test]
    fn watershed_touches_only_target_segment() {
        let (mut labels, altitude, seed) = dumbbell();
        // Paint an unrelated segment in the top corner gap.
        labels.set(4, 0, 3);
        let out = watershed_split(&labels, &altitude, seed, 8).unwrap();
        assert_eq!(out.get(4, 0), 3);
        let changed: Vec<usize> = labels
            .data()
            .iter()
            .zip(out.data())
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect();
        for idx in changed {
            assert_eq!(labels.data()[idx], 7, "only the split segment may change");
        }
    }

    #[test]
    fn split_then_merge_restores_partition() {
        let (labels, altitude, seed) = dumbbell();
        let split = watershed_split(&labels, &altitude, seed, 8).unwrap();
        let merged = merge_segments(&split, 7, 8).unwrap();
        let report = cremi_score(&labels, &merged).unwrap();
        assert_eq!(report.cremi, 0.0);
    }

    #[test]
    fn merge_validations() {
        let labels = LabelMap::from_vec(2, 2, vec![1, 2, 3, 4]).unwrap();
        assert!(matches!(merge_segments(&labels, 1, 1), Err(Error::NoOp(_))));
        assert!(matches!(merge_segments(&labels, 1, 9), Err(Error::Label(_))));
        assert!(matches!(merge_segments(&labels, 1, 4), Err(Error::Adjacency(_))));
        let merged = merge_segments(&labels, 1, 2).unwrap();
        assert_eq!(merged.data(), &[1, 1, 3, 4]);
    }

    #[test]
    fn render_point_peak_and_idempotence() {
        let pm = PointMap::new(32, 32, 0.0).unwrap();
        let once = render_point(&pm, (16, 16), 8.0);
        assert_eq!(once.get(16, 16), 1.0);
        let twice = render_point(&once, (16, 16), 8.0);
        assert_eq!(once, twice);
    }

    #[test]
    fn render_point_two_distant_peaks() {
        let pm = PointMap::new(128, 16, 0.0).unwrap();
        let out = render_point(&render_point(&pm, (10, 8), 8.0), (120, 8), 8.0);
        assert_eq!(out.get(10, 8), 1.0);
        assert_eq!(out.get(120, 8), 1.0);
        // Outside 3 sigma of both bumps the map stays empty.
        assert_eq!(out.get(64, 8), 0.0);
    }

    #[test]
    fn segment_at_lookups() {
        let labels = LabelMap::from_vec(2, 2, vec![0, 2, 3, 4]).unwrap();
        assert_eq!(segment_at(&labels, (0, 0)), 0);
        assert_eq!(segment_at(&labels, (1, 0)), 2);
        assert_eq!(segment_at(&labels, (1, 1)), 4);
    }
}
