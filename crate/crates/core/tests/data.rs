use amdl_core::data::*;
use amdl_core::Tensor;
use proptest::prelude::*;

fn channel_means(d: &DatasetContainer, i: usize) -> [f64; 4] {
    let img = d.image(i);
    let mut m = [0.0, 0.0, 0.0, 1.0];
    for px in img.chunks(3) {
        for c in 0..3 {
            m[c] += px[c] as f64;
        }
    }
    let n = (img.len() / 3) as f64;
    for v in m.iter_mut().take(3) {
        *v /= n * 255.0;
    }
    m
}

/// Solves `a x = b` for a small dense system by Gaussian elimination with
/// partial pivoting. `b` has several right-hand sides.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in 0..n {
                    a[row][k] -= f * a[col][k];
                }
                for k in 0..b[row].len() {
                    b[row][k] -= f * b[col][k];
                }
            }
        }
    }
    (0..n).map(|i| b[i].iter().map(|v| v / a[i][i]).collect()).collect()
}

/// Least-squares linear probe on per-channel means with one-hot targets;
/// returns accuracy on `eval`.
fn mean_probe(train: &DatasetContainer, eval: &DatasetContainer) -> f64 {
    let c = train.num_classes as usize;
    let mut xtx = vec![vec![0.0; 4]; 4];
    let mut xty = vec![vec![0.0; c]; 4];
    for i in 0..train.len() {
        let f = channel_means(train, i);
        for r in 0..4 {
            for s in 0..4 {
                xtx[r][s] += f[r] * f[s];
            }
            xty[r][train.labels[i] as usize] += f[r];
        }
    }
    for (r, row) in xtx.iter_mut().enumerate() {
        row[r] += 1e-9;
    }
    let w = solve(xtx, xty);
    let correct = (0..eval.len())
        .filter(|&i| {
            let f = channel_means(eval, i);
            let score = |k: usize| (0..4).map(|r| f[r] * w[r][k]).sum::<f64>();
            let pred = (0..c).max_by(|&a, &b| score(a).total_cmp(&score(b))).unwrap();
            pred == eval.labels[i] as usize
        })
        .count();
    correct as f64 / eval.len() as f64
}

fn probe(kind: SynthKind) -> f64 {
    let [train, val, _] = generate_synthetic(kind, [1000, 400, 20], 11, 32).unwrap();
    mean_probe(&train, &val)
}

#[test]
fn channel_mean_probe_orders_difficulty() {
    let easy = probe(SynthKind::Easy);
    let medium = probe(SynthKind::Medium);
    let hard = probe(SynthKind::Hard);
    assert!(easy >= 0.95, "easy probe {easy}");
    assert!(hard <= 0.30, "hard probe {hard}");
    assert!(easy > medium && medium > hard, "{easy} {medium} {hard}");
}

#[test]
fn generator_rejects_too_few_images() {
    assert!(matches!(generate_synthetic(SynthKind::Hard, [5, 5, 5], 1, 32), Err(amdl_core::Error::Config(_))));
}

#[test]
fn bilinear_upsample_grid() {
    let out = resize_bilinear(&[0.0, 2.0, 2.0, 4.0], 2, 2, 1, 4, 4);
    let want = [0.0, 0.5, 1.5, 2.0, 0.5, 1.0, 2.0, 2.5, 1.5, 2.0, 3.0, 3.5, 2.0, 2.5, 3.5, 4.0];
    for (o, w) in out.iter().zip(want) {
        assert!((o - w).abs() < 1e-12, "{out:?}");
    }
}

#[test]
fn constant_image_standardizes_to_zero() {
    let d = DatasetContainer::new(8, 8, 3, 2, Split::Train, "const".into(), vec![0, 1], vec![128; 2 * 8 * 8 * 3]).unwrap();
    let norm = Normalization::fit(&d, (8, 8)).unwrap();
    let p = preprocess::<f32>(&d, (8, 8), &norm).unwrap();
    let first = p.images[0];
    assert!(first.is_finite() && first.abs() < 1e-3);
    assert!(p.images.iter().all(|&v| v == first));
}

#[test]
fn standardized_train_split_has_unit_statistics() {
    let [train, ..] = generate_synthetic(SynthKind::Medium, [50, 10, 10], 4, 32).unwrap();
    let norm = Normalization::fit(&train, (16, 16)).unwrap();
    let p = preprocess::<f64>(&train, (16, 16), &norm).unwrap();
    let plane = 16 * 16;
    for ch in 0..3 {
        let vals: Vec<f64> = (0..p.len()).flat_map(|i| p.images[(i * 3 + ch) * plane..(i * 3 + ch + 1) * plane].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-4, "{mean} {var}");
    }
}

#[test]
fn target_below_minimum_is_rejected() {
    let d = DatasetContainer::new(8, 8, 3, 2, Split::Train, String::new(), vec![0], vec![0; 192]).unwrap();
    assert!(Normalization::fit(&d, (4, 4)).is_err());
}

#[test]
fn batches_keep_partial_and_follow_seed() {
    let [train, ..] = generate_synthetic(SynthKind::Easy, [10, 2, 2], 0, 32).unwrap();
    let p = preprocess::<f32>(&train, (8, 8), &Normalization::identity(3)).unwrap();
    let order = p.batch_order(4, Some(3));
    assert_eq!(order.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2]);
    assert_eq!(order, p.batch_order(4, Some(3)));
    assert_ne!(order, p.batch_order(4, Some(4)));
    let (x, y): (Tensor<f32>, _) = p.batch(&order[2]);
    assert_eq!(x.shape(), &[2, 3, 8, 8]);
    assert_eq!(y, order[2].iter().map(|&i| train.labels[i] as usize).collect::<Vec<_>>());
}

#[test]
fn decathlon_metadata() {
    let specs = decathlon_fixture();
    assert_eq!(specs.len(), 10);
    let gtsrb = specs.iter().find(|s| s.name == "GTSRB").unwrap();
    assert_eq!((gtsrb.num_classes, gtsrb.split_sizes), (43, [31367, 7842, 12630]));
    assert_eq!(specs.iter().find(|s| s.name == "OGlt").unwrap().num_classes, 1623);
    assert_eq!(specs.iter().map(|s| s.num_classes).sum::<usize>(), 3128);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn synthetic_splits_are_balanced(n in 20usize..90, seed in any::<u64>(), k in 0usize..3) {
        let kind = SynthKind::ALL[k];
        let splits = generate_synthetic(kind, [n, n, n], seed, 32).unwrap();
        let c = kind.num_classes();
        for s in &splits {
            for count in s.class_counts() {
                prop_assert!((count as f64 - n as f64 / c as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn same_size_resize_is_identity(h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let mut rng = amdl_core::rng::SplitMix64::new(seed);
        let img: Vec<f64> = (0..h * w * 2).map(|_| rng.next_f64()).collect();
        prop_assert_eq!(resize_bilinear(&img, h, w, 2, h, w), img);
    }

    #[test]
    fn resize_stays_within_source_range(seed in any::<u64>(), th in 1usize..12, tw in 1usize..12) {
        let mut rng = amdl_core::rng::SplitMix64::new(seed);
        let img: Vec<f64> = (0..5 * 4).map(|_| rng.next_f64()).collect();
        let (lo, hi) = img.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        for v in resize_bilinear(&img, 5, 4, 1, th, tw) {
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}
