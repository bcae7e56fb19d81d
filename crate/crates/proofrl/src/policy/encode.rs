//! Observation encoding: raster state to network input tensor.
//!
//! Channel 0 is EM intensity scaled to [0, 1]; channel 1 marks label
//! boundaries (1.0 on pixels four-adjacent to a different label); channel 2,
//! absent for the selector, is the point map. Locator observations are
//! 4x mean-pooled so a 512x512 sub-image feeds the same 128x128 network.

use crate::env::{AgentKind, EpisodeState};
use crate::raster::LabelMap;

const LOCATOR_POOL: usize = 4;

/// Dense CHW observation, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ObservationTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }
}

fn boundary_channel(labels: &LabelMap) -> Vec<f64> {
    let (width, height) = (labels.width(), labels.height());
    let data = labels.data();
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let here = data[y * width + x];
            let boundary = (x > 0 && data[y * width + x - 1] != here)
                || (x + 1 < width && data[y * width + x + 1] != here)
                || (y > 0 && data[(y - 1) * width + x] != here)
                || (y + 1 < height && data[(y + 1) * width + x] != here);
            if boundary {
                out[y * width + x] = 1.0;
            }
        }
    }
    out
}

fn mean_pool(src: &[f64], width: usize, height: usize, factor: usize) -> Vec<f64> {
    let (ow, oh) = (width / factor, height / factor);
    let mut out = vec![0.0; ow * oh];
    let norm = (factor * factor) as f64;
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += src[(oy * factor + dy) * width + ox * factor + dx];
                }
            }
            out[oy * ow + ox] = acc / norm;
        }
    }
    out
}

/// Encodes an episode state into the agent's input tensor. Pure and
/// deterministic; the label channel depends only on boundary geometry, not
/// on label values.
pub fn encode_observation(state: &EpisodeState, kind: AgentKind) -> ObservationTensor {
    let (width, height) = (state.em.width(), state.em.height());
    let em: Vec<f64> = state.em.data().iter().map(|&v| v as f64 / 255.0).collect();
    let boundary = boundary_channel(&state.label);
    let point: Option<Vec<f64>> = match kind {
        AgentKind::Selector => None,
        _ => {
            let pm = state.point.as_ref().expect("non-selector state carries a point map");
            Some(pm.data().iter().map(|&v| v as f64).collect())
        }
    };

    let pool = if kind == AgentKind::Locator { LOCATOR_POOL } else { 1 };
    let (ow, oh) = (width / pool, height / pool);
    let channels = kind.observation_channels();
    let mut tensor = ObservationTensor::zeros(channels, oh, ow);
    let write = |c: usize, plane: &[f64], tensor: &mut ObservationTensor| {
        let pooled;
        let src = if pool > 1 {
            pooled = mean_pool(plane, width, height, pool);
            &pooled
        } else {
            plane
        };
        for y in 0..oh {
            for x in 0..ow {
                *tensor.at_mut(c, y, x) = src[y * ow + x];
            }
        }
    };
    write(0, &em, &mut tensor);
    write(1, &boundary, &mut tensor);
    if let Some(point) = &point {
        write(2, point, &mut tensor);
    }
    tensor
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{EmImage, PointMap};

    fn state(width: usize, labels: LabelMap, with_point: bool) -> EpisodeState {
        EpisodeState {
            em: EmImage::new(width, width, 128).unwrap(),
            label: labels,
            point: with_point.then(|| PointMap::new(width, width, 0.0).unwrap()),
            t: 0,
        }
    }

    #[test]
    fn uniform_label_map_has_empty_boundary_channel() {
        let s = state(16, LabelMap::new(16, 16, 5).unwrap(), true);
        let obs = encode_observation(&s, AgentKind::Splitter);
        assert_eq!(obs.channels, 3);
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(obs.at(1, y, x), 0.0);
            }
        }
    }

    #[test]
    fn selector_observation_has_two_channels() {
        let s = state(16, LabelMap::new(16, 16, 5).unwrap(), false);
        let obs = encode_observation(&s, AgentKind::Selector);
        assert_eq!(obs.channels, 2);
        assert_eq!(obs.data.len(), 2 * 16 * 16);
    }

    #[test]
    fn locator_pools_constant_image_to_constant() {
        let s = state(512, LabelMap::new(512, 512, 5).unwrap(), true);
        let obs = encode_observation(&s, AgentKind::Locator);
        assert_eq!((obs.height, obs.width), (128, 128));
        for y in 0..128 {
            for x in 0..128 {
                assert!((obs.at(0, y, x) - 128.0 / 255.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn boundary_marks_both_sides() {
        let labels = LabelMap::from_vec(4, 1, vec![1, 1, 2, 2]).unwrap();
        let s = EpisodeState {
            em: EmImage::new(4, 1, 0).unwrap(),
            label: labels,
            point: Some(PointMap::new(4, 1, 0.0).unwrap()),
            t: 0,
        };
        let obs = encode_observation(&s, AgentKind::Splitter);
        assert_eq!(obs.at(1, 0, 0), 0.0);
        assert_eq!(obs.at(1, 0, 1), 1.0);
        assert_eq!(obs.at(1, 0, 2), 1.0);
        assert_eq!(obs.at(1, 0, 3), 0.0);
    }
}
