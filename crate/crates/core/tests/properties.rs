use ccc_core::audit::{bypass_rate, confidence_stats, nn_distance, nn_distance_exhaustive, CccBatch, GridImage, SampleRecord};
use ccc_core::autograd::{Init, Tape, Tensor};
use ccc_core::data::{epoch_permutation, BatchIterator, ImageShape, LabeledDataset, Normalization};
use ccc_core::inversion::{kl_value, mean_pairwise_cosine};
use ccc_core::models::{argmax, hot_matrix, one_hot, sample_soft_condition, AxisChoice};
use proptest::collection::vec;
use proptest::prelude::*;

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(0.001f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

fn records() -> impl Strategy<Value = Vec<SampleRecord>> {
    vec((0usize..5, 0usize..5, 0.0f64..=1.0), 1..60).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(index, (conditioned, predicted, confidence))| SampleRecord {
                index,
                conditioned,
                predicted,
                confidence,
                nn_distance: None,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        rows in 1usize..5, k in 1usize..8, seed in any::<u64>(), shift in -50.0f64..50.0,
    ) {
        let x = Tensor::<f64>::create(&[rows, k], Init::Normal { mean: 0.0, std: 3.0, seed }).unwrap();
        let mut t = Tape::new();
        let a = t.leaf(x.clone());
        let b = t.constant(&[rows, k], x.data().iter().map(|v| v + shift).collect()).unwrap();
        let (pa, pb) = (t.softmax(a).unwrap(), t.softmax(b).unwrap());
        for row in t.data(pa).chunks(k) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
        for (u, v) in t.data(pa).iter().zip(t.data(pb)) {
            prop_assert!((u - v).abs() <= 1e-6);
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_equal_rows(p in simplex(6), q in simplex(6)) {
        prop_assert!(kl_value(&p, &q, 6) >= -1e-12);
        prop_assert!(kl_value(&p, &p, 6).abs() <= 1e-12);
    }

    #[test]
    fn cosine_is_bounded_and_scale_invariant(
        rows in 2usize..6, cols in 1usize..6, seed in any::<u64>(), factor in 0.01f64..100.0, which in 0usize..6,
    ) {
        let x = Tensor::<f64>::create(&[rows, cols], Init::Normal { mean: 0.0, std: 1.0, seed }).unwrap();
        let c = mean_pairwise_cosine(x.data(), rows);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
        let mut scaled = x.data().to_vec();
        let r = which % rows;
        scaled[r * cols..(r + 1) * cols].iter_mut().for_each(|v| *v *= factor);
        prop_assert!((mean_pairwise_cosine(&scaled, rows) - c).abs() <= 1e-9);
    }

    #[test]
    fn bypass_rate_is_monotone_in_tau(conf in vec(0.0f64..=1.0, 1..100), a in 0.001f64..=1.0, b in 0.001f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (r_lo, r_hi) = (bypass_rate(&conf, lo).unwrap(), bypass_rate(&conf, hi).unwrap());
        prop_assert!(r_hi <= r_lo);
        prop_assert!((0.0..=1.0).contains(&r_lo));
        if conf.iter().all(|c| *c >= f64::MIN_POSITIVE) {
            prop_assert_eq!(bypass_rate(&conf, f64::MIN_POSITIVE).unwrap(), 1.0);
        }
    }

    #[test]
    fn confidence_stats_match_recomputation(recs in records()) {
        let taus = [0.5, 0.9, 0.95, 0.99];
        let agg = confidence_stats(&recs, &taus).unwrap();
        let n = recs.len() as f64;
        let mean = recs.iter().map(|r| r.confidence).sum::<f64>() / n;
        prop_assert!((agg.mean_confidence - mean).abs() <= 1e-12);
        let fidelity = recs.iter().filter(|r| r.predicted == r.conditioned).count() as f64 / n;
        prop_assert_eq!(agg.label_fidelity, fidelity);
        prop_assert!((0.0..=1.0).contains(&agg.label_fidelity));
        for class in 0..5 {
            let mine: Vec<f64> = recs.iter().filter(|r| r.conditioned == class).map(|r| r.confidence).collect();
            let stats = agg.per_class.iter().find(|s| s.class == class);
            match stats {
                None => prop_assert!(mine.is_empty()),
                Some(s) => {
                    prop_assert_eq!(s.count, mine.len());
                    prop_assert!((s.mean - mine.iter().sum::<f64>() / mine.len() as f64).abs() <= 1e-12);
                    prop_assert_eq!(s.min, mine.iter().copied().fold(f64::INFINITY, f64::min));
                    prop_assert_eq!(s.max, mine.iter().copied().fold(f64::NEG_INFINITY, f64::max));
                }
            }
        }
        for (b, tau) in agg.bypass.iter().zip(taus) {
            let rate = recs.iter().filter(|r| r.confidence >= tau).count() as f64 / n;
            prop_assert_eq!(b.rate, rate);
        }
        for w in agg.bypass.windows(2) {
            prop_assert!(w[1].rate <= w[0].rate);
        }
    }

    #[test]
    fn epochs_visit_every_index_once(len in 1usize..300, batch in 1usize..64, seed in any::<u64>()) {
        let images = Tensor::from_vec(&[len, 1, 28, 28], vec![0.5f32; len * 784]).unwrap();
        let data = LabeledDataset::new("p", images, vec![0; len], 2).unwrap();
        let mut it = BatchIterator::new(&data, batch, seed).unwrap();
        for _ in 0..2 {
            let mut seen: Vec<usize> = it.next_epoch().flat_map(|b| b.indices).collect();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..len).collect::<Vec<_>>());
        }
        prop_assert_eq!(epoch_permutation(len, seed, 3), epoch_permutation(len, seed, 3));
    }

    #[test]
    fn conditioning_encodings(k in 2usize..12, label in 0usize..12, seed in any::<u64>(), row in any::<bool>()) {
        let label = label % k;
        let soft = sample_soft_condition(k, seed).unwrap();
        prop_assert!((soft.values().iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        prop_assert!(soft.values().iter().all(|v| *v >= 0.0));
        prop_assert_eq!(soft.label(), argmax(soft.values()));
        let hot = one_hot(label, k).unwrap();
        prop_assert_eq!(argmax(hot.values()), label);
        prop_assert_eq!(hot.values().iter().sum::<f64>(), 1.0);
        let axis = if row { AxisChoice::Row } else { AxisChoice::Column };
        let m = hot_matrix(label, k, axis, seed).unwrap();
        prop_assert_eq!(m.values().iter().filter(|v| **v == 1.0).count(), k);
        prop_assert_eq!(m.values().iter().sum::<f64>(), k as f64);
        for (i, v) in m.values().iter().enumerate() {
            let on = if row { i / k == label } else { i % k == label };
            prop_assert_eq!(*v, if on { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn normalization_round_trips(
        pixels in vec(0.0f32..=1.0, 12), mean in vec(0.0f64..1.0, 3), std in vec(0.05f64..1.0, 3),
    ) {
        let shape = ImageShape::new(3, 2, 2);
        let norm = Normalization::new(mean, std).unwrap();
        let back = norm.invert(&norm.apply(&pixels, shape), shape);
        for (a, b) in pixels.iter().zip(&back) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn nn_distance_matches_exhaustive_scan(
        queries in 1usize..12, refs in 1usize..40, dim in 1usize..20, seed in any::<u64>(),
    ) {
        let q = Tensor::<f32>::create(&[queries * dim], Init::Normal { mean: 0.5, std: 0.3, seed }).unwrap();
        let r = Tensor::<f32>::create(&[refs * dim], Init::Normal { mean: 0.5, std: 0.3, seed: seed ^ 1 }).unwrap();
        let fast = nn_distance(q.data(), r.data(), dim).unwrap();
        let slow = nn_distance_exhaustive(q.data(), r.data(), dim).unwrap();
        for (a, b) in fast.iter().zip(&slow) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn grid_has_one_tile_per_sample(rows in 1usize..5, cols in 1usize..6, rgb in any::<bool>()) {
        let shape = if rgb { ImageShape::new(3, 3, 2) } else { ImageShape::new(1, 2, 3) };
        let batches: Vec<CccBatch> = (0..rows)
            .map(|class| CccBatch {
                class,
                shape,
                pixels: vec![0.25; cols * shape.len()],
                predicted: vec![class; cols],
                confidences: vec![0.9; cols],
            })
            .collect();
        let grid = GridImage::tile(&batches, cols).unwrap();
        prop_assert_eq!(grid.annotations.len(), rows * cols);
        prop_assert_eq!(grid.width, cols * shape.width);
        prop_assert_eq!(grid.height, rows * shape.height);
        let pnm = grid.to_pnm().unwrap();
        let header = format!("{}\n{} {}\n255\n", if rgb { "P6" } else { "P5" }, grid.width, grid.height);
        prop_assert!(pnm.starts_with(header.as_bytes()));
        prop_assert_eq!(pnm.len(), header.len() + grid.width * grid.height * shape.channels);
    }

    #[test]
    fn dropout_eval_is_identity(p in 0.0f64..0.99, seed in any::<u64>(), n in 1usize..50) {
        let x = Tensor::<f64>::create(&[n], Init::Normal { mean: 0.0, std: 1.0, seed }).unwrap();
        let mut t = Tape::new();
        let v = t.leaf(x.clone());
        let y = t.dropout(v, p, false, seed).unwrap();
        prop_assert_eq!(t.data(y), x.data());
    }

    #[test]
    fn tensors_keep_shape_and_length_consistent(shape in vec(1usize..5, 1..4), seed in any::<u64>()) {
        let t = Tensor::<f32>::create(&shape, Init::Normal { mean: 0.0, std: 1.0, seed }).unwrap();
        prop_assert_eq!(t.len(), shape.iter().product::<usize>());
        prop_assert!(t.all_finite());
        prop_assert!(Tensor::<f32>::from_vec(&shape, vec![0.0; t.len() + 1]).is_err());
    }
}
