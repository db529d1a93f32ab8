use std::path::PathBuf;

use mscnn::data::manifest::{format_manifest, parse_manifest};
use mscnn::data::{AugmentPolicy, BatchPlanner, Category, LabelMap, ManifestRecord, Split};
use mscnn::eval::{parse_rendered, render_labelmap, ConfusionMatrix, Palette};
use mscnn::classes::IGNORE;
use mscnn::pipeline::Schedule;
use mscnn::rng::stream;
use mscnn::tensor::{maxpool2d, upsample_nearest, Tensor};
use proptest::prelude::*;

fn label_map(w: usize, h: usize, classes: u8) -> impl Strategy<Value = LabelMap> {
    prop::collection::vec(0..classes, w * h).prop_map(move |d| LabelMap::new(w, h, d).unwrap())
}

proptest! {
    #[test]
    fn maxpool_inverts_nearest_upsampling(
        h in 1usize..6, w in 1usize..6, c in 1usize..4, n in 1usize..4,
        seed in any::<u64>(),
    ) {
        let x = Tensor::<f64>::from_fn(&[h, w, c], |i| ((seed.wrapping_add(i as u64) % 97) as f64) - 48.0);
        let up = upsample_nearest(&x, (h * n, w * n)).unwrap();
        let (down, _) = maxpool2d(&up, n).unwrap();
        prop_assert_eq!(down, x);
    }

    #[test]
    fn schedule_text_round_trips(segs in prop::collection::vec((1u64..50, 1e-7f64..1e-1), 1..5)) {
        let s = Schedule::new(segs.clone()).unwrap();
        let parsed = Schedule::parse(&s.to_text()).unwrap();
        prop_assert_eq!(parsed.segments(), s.segments());
        let total: u64 = segs.iter().map(|x| x.0).sum();
        prop_assert_eq!(s.total_cycles(), total);
        prop_assert_eq!(s.lr_at(0), Some(segs[0].1));
        prop_assert_eq!(s.lr_at(total - 1), Some(segs[segs.len() - 1].1));
        prop_assert_eq!(s.lr_at(total), None);
    }

    #[test]
    fn manifest_round_trips(rows in prop::collection::vec((0usize..3, 0usize..3, any::<bool>(), "[a-z0-9_-]{1,12}"), 1..8)) {
        let records: Vec<ManifestRecord> = rows
            .iter()
            .map(|(c, s, comp, id)| ManifestRecord {
                id: id.clone(),
                category: Category::ALL[*c],
                split: [None, Some(Split::Train), Some(Split::Test)][*s],
                rgb: PathBuf::from(format!("images/{id}.png")),
                scene: PathBuf::from(format!("scene/{id}.png")),
                component: comp.then(|| PathBuf::from(format!("component/{id}.png"))),
            })
            .collect();
        prop_assert_eq!(parse_manifest(&format_manifest(&records)).unwrap(), records);
    }

    #[test]
    fn rendering_inverts(map in label_map(7, 5, 10)) {
        let palette = Palette::scene();
        prop_assert_eq!(parse_rendered(&render_labelmap(&map, &palette), &palette).unwrap(), map);
    }

    #[test]
    fn confusion_merge_matches_joint_accumulation(
        a in label_map(6, 4, 5), b in label_map(6, 4, 5), c in label_map(6, 4, 5), d in label_map(6, 4, 5),
    ) {
        let mut joint = ConfusionMatrix::new(5);
        joint.accumulate(&a, &b).unwrap();
        joint.accumulate(&c, &d).unwrap();
        let mut first = ConfusionMatrix::new(5);
        first.accumulate(&a, &b).unwrap();
        let mut second = ConfusionMatrix::new(5);
        second.accumulate(&c, &d).unwrap();
        first.merge(&second).unwrap();
        prop_assert_eq!(&first, &joint);
        prop_assert_eq!(joint.total(), 48);
        prop_assert!(joint.trace() <= joint.total());
    }

    #[test]
    fn planner_cycles_exhaust_one_loaded_block_with_fixed_quotas(
        sizes in prop::collection::vec(prop::collection::vec(1usize..9, 1..4), 1..4),
        quotas in prop::collection::vec(1usize..5, 3),
        seed in any::<u64>(), cycle in 0u64..5,
    ) {
        let groups: Vec<(Vec<usize>, usize)> = sizes.iter().cloned().zip(quotas.iter().copied()).collect();
        let planner = BatchPlanner::new(groups.clone(), seed).unwrap();
        let batches = planner.cycle(cycle);
        prop_assert_eq!(batches.clone(), planner.cycle(cycle));
        let mut seen: Vec<Vec<Vec<bool>>> =
            groups.iter().map(|(b, _)| b.iter().map(|&n| vec![false; n]).collect()).collect();
        for batch in &batches {
            prop_assert_eq!(batch.len(), planner.batch_size());
            for (g, (_, q)) in groups.iter().enumerate() {
                prop_assert_eq!(batch.iter().filter(|r| r.group == g).count(), *q);
            }
            for r in batch {
                seen[r.group][r.block][r.index] = true;
            }
        }
        // One block per group; the cycle ends once some loaded block is fully
        // seen, and larger blocks may keep unseen residuals.
        let loaded: Vec<Vec<&Vec<bool>>> =
            seen.iter().map(|g| g.iter().filter(|b| b.contains(&true)).collect()).collect();
        prop_assert!(loaded.iter().all(|g| g.len() == 1));
        prop_assert!(loaded.iter().any(|g| g[0].iter().all(|&s| s)));
    }

    #[test]
    fn identity_augmentation_embeds_small_images(w in 2usize..15, h in 2usize..15, extra in 0usize..6) {
        let crop = w.max(h) + extra;
        let map = LabelMap::new(w, h, (0..w * h).map(|i| i as u8).collect()).unwrap();
        let t = AugmentPolicy::identity(crop).sample_transform(w, h, &mut stream(0, &[]));
        let out = t.apply_labels(&map);
        prop_assert_eq!((out.width(), out.height()), (crop, crop));
        let mut kept: Vec<u8> = out.data().iter().copied().filter(|&l| l != IGNORE).collect();
        kept.sort_unstable();
        prop_assert_eq!(kept, map.data().to_vec());
    }

    #[test]
    fn identity_augmentation_crops_a_centred_window(w in 4usize..30, h in 4usize..30, shrink in 0usize..4) {
        let crop = w.min(h) - shrink;
        let map = LabelMap::new(w, h, (0..w * h).map(|i| (i * 7 % 251) as u8).collect()).unwrap();
        let t = AugmentPolicy::identity(crop).sample_transform(w, h, &mut stream(0, &[]));
        let out = t.apply_labels(&map);
        let found = (0..=w - crop).flat_map(|ox| (0..=h - crop).map(move |oy| (ox, oy))).find(|&(ox, oy)| {
            (0..crop).all(|v| (0..crop).all(|u| out.get(u, v) == map.get(u + ox, v + oy)))
        });
        let (ox, oy) = found.expect("output is a window of the input");
        prop_assert!((ox as f64 - (w - crop) as f64 / 2.0).abs() <= 0.5);
        prop_assert!((oy as f64 - (h - crop) as f64 / 2.0).abs() <= 0.5);
    }
}
