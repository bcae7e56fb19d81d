//! Property tests over the raster substrate, metric invariances and edit
//! operators.

mod common;

use proofrl::editops::{gaussian_smooth, merge_segments, render_point, watershed_split};
use proofrl::env::{corrector_reward, locator_reward, selector_reward};
use proofrl::metrics::cremi_score;
use proofrl::policy::greedy_action;
use proofrl::raster::{LabelMap, PatchRef, PointMap};
use proofrl::synth::gen_ground_truth;
use proptest::prelude::*;

fn label_map_strategy(max_side: usize) -> impl Strategy<Value = LabelMap> {
    (2..=max_side, 2..=max_side).prop_flat_map(|(w, h)| {
        proptest::collection::vec(1u32..6, w * h)
            .prop_map(move |data| LabelMap::from_vec(w, h, data).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn crop_blit_round_trips(map in label_map_strategy(24), ox in 0usize..16, oy in 0usize..16, size in 1usize..8) {
        let patch = PatchRef::new(ox % map.width(), oy % map.height(), size);
        if patch.origin_x + patch.size <= map.width() && patch.origin_y + patch.size <= map.height() {
            // blit(crop) is the identity on the parent.
            let mut copy = map.clone();
            let content = map.crop(&patch).unwrap();
            copy.blit(&patch, &content).unwrap();
            prop_assert_eq!(&copy, &map);
            // crop(blit) returns the content, and nothing outside changes.
            let fresh = LabelMap::new(patch.size, patch.size, 999).unwrap();
            copy.blit(&patch, &fresh).unwrap();
            prop_assert_eq!(copy.crop(&patch).unwrap(), fresh);
            for y in 0..map.height() {
                for x in 0..map.width() {
                    let inside = x >= patch.origin_x
                        && x < patch.origin_x + patch.size
                        && y >= patch.origin_y
                        && y < patch.origin_y + patch.size;
                    if !inside {
                        prop_assert_eq!(copy.get(x, y), map.get(x, y));
                    }
                }
            }
        }
    }

    #[test]
    fn metrics_are_relabel_invariant(gt in label_map_strategy(12), seg in label_map_strategy(12), shift in 1u32..50) {
        if gt.same_dims(&seg) {
            let base = cremi_score(&gt, &seg).unwrap();
            // Any injective relabeling of either side: shift all labels.
            let shifted_seg = LabelMap::from_vec(
                seg.width(), seg.height(),
                seg.data().iter().map(|&l| l + shift).collect(),
            ).unwrap();
            let shifted_gt = LabelMap::from_vec(
                gt.width(), gt.height(),
                gt.data().iter().map(|&l| l * 2 + 1).collect(),
            ).unwrap();
            let a = cremi_score(&gt, &shifted_seg).unwrap();
            let b = cremi_score(&shifted_gt, &seg).unwrap();
            for (x, y) in [(base.voi_split, a.voi_split), (base.voi_merge, a.voi_merge),
                           (base.arand, a.arand), (base.cremi, a.cremi),
                           (base.voi_split, b.voi_split), (base.voi_merge, b.voi_merge),
                           (base.arand, b.arand), (base.cremi, b.cremi)] {
                prop_assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn voi_swaps_under_argument_swap(gt in label_map_strategy(10), seg in label_map_strategy(10)) {
        if gt.same_dims(&seg) {
            let fwd = cremi_score(&gt, &seg).unwrap();
            let rev = cremi_score(&seg, &gt).unwrap();
            prop_assert!((fwd.voi_split - rev.voi_merge).abs() < 1e-12);
            prop_assert!((fwd.voi_merge - rev.voi_split).abs() < 1e-12);
        }
    }

    #[test]
    fn rewards_stay_in_codomain(before in 0.0f64..2.0, after in 0.0f64..2.0, stop: bool, ok: bool, in_e: bool) {
        for r in [
            locator_reward(stop, ok, in_e, before, after),
            selector_reward(stop, ok, before, after),
            corrector_reward(stop, ok, in_e, before, after),
        ] {
            prop_assert!((-2.0..=2.0).contains(&r), "reward {r}");
        }
    }

    #[test]
    fn render_point_bounds_and_idempotence(x in 0usize..32, y in 0usize..32) {
        let pm = PointMap::new(32, 32, 0.0).unwrap();
        let once = render_point(&pm, (x, y), 4.0);
        prop_assert_eq!(once.get(x, y), 1.0);
        for &v in once.data() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let twice = render_point(&once, (x, y), 4.0);
        prop_assert_eq!(&once, &twice);
    }

    #[test]
    fn greedy_is_stable_under_boundary_preserving_relabel(seed in 0u64..500) {
        // The label channel encodes boundary geometry only, so shifting all
        // labels cannot change a greedy network decision.
        use proofrl::env::{AgentKind, EpisodeState};
        use proofrl::policy::{encode_observation, NetConfig, PolicyNet};
        use rand::SeedableRng as _;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (em, gt) = gen_ground_truth(16, 16, 3, seed).unwrap();
        let mut net = PolicyNet::new(NetConfig {
            kind: AgentKind::Splitter,
            input_channels: 3,
            input_h: 16,
            input_w: 16,
            conv_channels: 4,
            fc_dim: 8,
            action_count: 5,
            seed,
        }).unwrap();
        for p in net.params.iter_mut() {
            if *p == 0.0 {
                *p = rand::Rng::gen_range(&mut rng, -0.1..0.1);
            }
        }
        let state = |labels: LabelMap| EpisodeState {
            em: em.clone(),
            label: labels,
            point: Some(PointMap::new(16, 16, 0.0).unwrap()),
            t: 0,
        };
        let shifted = LabelMap::from_vec(16, 16, gt.data().iter().map(|&l| l + 17).collect()).unwrap();
        let (logits_a, _) = net.forward(&encode_observation(&state(gt), AgentKind::Splitter)).unwrap();
        let (logits_b, _) = net.forward(&encode_observation(&state(shifted), AgentKind::Splitter)).unwrap();
        prop_assert_eq!(greedy_action(&logits_a), greedy_action(&logits_b));
    }
}

proptest! {
    // Heavier cases: generated segmentations with real edit operations.
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn edit_operators_are_label_local(seed in 0u64..1000) {
        let (em, gt) = gen_ground_truth(48, 48, 5, seed).unwrap();
        let altitude = gaussian_smooth(&em, 2.0);
        // Watershed split touches only the target segment and adds one label.
        let target = gt.get(24, 24);
        let fresh = gt.max_label() + 1;
        let split = watershed_split(&gt, &altitude, (24, 24), fresh).unwrap();
        prop_assert_eq!(split.distinct_labels().len(), gt.distinct_labels().len() + 1);
        for (before, after) in gt.data().iter().zip(split.data()) {
            if before != after {
                prop_assert_eq!(*before, target);
                prop_assert_eq!(*after, fresh);
            }
        }
        // Merging the two parts back touches only the fresh pixels and
        // restores the original partition exactly.
        let merged = merge_segments(&split, target, fresh).unwrap();
        prop_assert_eq!(merged.distinct_labels().len(), gt.distinct_labels().len());
        prop_assert_eq!(cremi_score(&gt, &merged).unwrap().cremi, 0.0);
        // Merging two true segments touches only the absorbed segment.
        let labels = gt.distinct_labels();
        'outer: for &a in &labels {
            for &b in &labels {
                if a < b {
                    if let Ok(m) = merge_segments(&gt, a, b) {
                        prop_assert_eq!(m.distinct_labels().len(), labels.len() - 1);
                        for (before, after) in gt.data().iter().zip(m.data()) {
                            if before != after {
                                prop_assert_eq!(*before, b);
                                prop_assert_eq!(*after, a);
                            }
                        }
                        break 'outer;
                    }
                }
            }
        }
    }

    #[test]
    fn watershed_is_bit_deterministic(seed in 0u64..1000) {
        let (em, gt) = gen_ground_truth(32, 32, 4, seed).unwrap();
        let altitude = gaussian_smooth(&em, 2.0);
        let a = watershed_split(&gt, &altitude, (16, 16), gt.max_label() + 1).unwrap();
        let b = watershed_split(&gt, &altitude, (16, 16), gt.max_label() + 1).unwrap();
        prop_assert_eq!(a, b);
    }
}
