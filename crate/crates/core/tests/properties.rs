use densefold::data::*;
use densefold::eval::{confusion, run_stddev};
use densefold::kv;
use densefold::nn::{self, Mode};
use densefold::optim::{cross_entropy_loss, loss_and_grad, lr_at, LossKind, TrainHyper};
use densefold::{Rng, Tensor};
use proptest::prelude::*;

fn image() -> impl Strategy<Value = RawImage> {
    (1usize..12, 1usize..12, prop_oneof![Just(1usize), Just(3)]).prop_flat_map(|(w, h, c)| {
        proptest::collection::vec(any::<u8>(), w * h * c)
            .prop_map(move |px| RawImage::new(w, h, c, px).unwrap())
    })
}

/// Light paper with one dark rectangle of ink.
fn scan() -> impl Strategy<Value = RawImage> {
    (10usize..70, 10usize..70, any::<u64>()).prop_map(|(w, h, seed)| {
        let mut rng = Rng::new(seed);
        let (x0, y0) = (
            rng.below(w as u64 / 2) as usize,
            rng.below(h as u64 / 2) as usize,
        );
        let (sw, sh) = (
            2 + rng.below(w as u64 / 3) as usize,
            2 + rng.below(h as u64 / 3) as usize,
        );
        let px = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                if (x0..x0 + sw).contains(&x) && (y0..y0 + sh).contains(&y) {
                    rng.below(60) as u8
                } else {
                    200 + rng.below(56) as u8
                }
            })
            .collect();
        RawImage::new(w, h, 1, px).unwrap()
    })
}

fn logits(max_rows: usize) -> impl Strategy<Value = (Tensor<f64>, Vec<usize>)> {
    (1..max_rows).prop_flat_map(|n| {
        (
            proptest::collection::vec(-30.0f64..30.0, n * 10),
            proptest::collection::vec(0usize..10, n),
        )
            .prop_map(move |(z, l)| (Tensor::from_vec(&[n, 10], z).unwrap(), l))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn netpbm_round_trip(img in image()) {
        let bytes = encode_netpbm(&img);
        let fmt = ImageFormat::sniff(&bytes).unwrap();
        prop_assert_eq!(decode_image(&bytes, fmt).unwrap(), img);
    }

    #[test]
    fn packed_round_trip(imgs in proptest::collection::vec(any::<(u8, [u8; 12])>(), 0..20)) {
        let mut p = PackedDataset::new(2, 2, 3).unwrap();
        for (label, px) in &imgs {
            p.push(label % 10, &RawImage::new(2, 2, 3, px.to_vec()).unwrap()).unwrap();
        }
        let bytes = p.encode();
        let back = PackedDataset::decode(&bytes).unwrap();
        prop_assert_eq!(back.encode(), bytes);
        prop_assert_eq!(back, p);
    }

    #[test]
    fn prepare_reaches_a_fixed_point(img in scan()) {
        let once = prepare(&img).unwrap();
        prop_assert_eq!((once.width(), once.height(), once.channels()), (32, 32, 3));
        prop_assert!(is_prepared(&once));
        prop_assert_eq!(prepare(&once).unwrap(), once);
    }

    #[test]
    fn augmentation_keeps_shape_and_finiteness(seed in any::<u64>(), epoch in 1u64..200, index in 0u64..5000) {
        let img = synthetic::stroke_digits(1, 32, seed).unwrap().get(0).unwrap().1;
        let t = to_unit(&img);
        let out = augment(&t, &AugmentConfig::default(), seed, epoch, index).unwrap();
        prop_assert_eq!(out.shape(), &[3, 32, 32]);
        prop_assert!(out.data().iter().all(|v| v.is_finite()));
        prop_assert_eq!(out, augment(&t, &AugmentConfig::default(), seed, epoch, index).unwrap());
    }

    #[test]
    fn folds_partition_evenly(n in 10usize..3000, k in 2usize..11, seed in any::<u64>()) {
        let assign = kfold_assign(n, k, seed).unwrap();
        prop_assert_eq!(&assign, &kfold_assign(n, k, seed).unwrap());
        let sizes: Vec<usize> = (0..k).map(|f| fold_members(&assign, f).len()).collect();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in 0..k {
            let mut all = fold_members(&assign, f);
            all.extend(fold_complement(&assign, f));
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn batches_cover_each_index_once(n in 0usize..500, batch in 1usize..70, seed in any::<u64>()) {
        let idx: Vec<usize> = (0..n).collect();
        let batches = make_batches(&idx, batch, &mut Rng::new(seed)).unwrap();
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= batch));
        let mut seen: Vec<usize> = batches.concat();
        seen.sort_unstable();
        prop_assert_eq!(seen, idx);
    }

    #[test]
    fn softmax_rows_are_distributions((z, _) in logits(8)) {
        let p = nn::softmax(&z).unwrap();
        for row in p.data().chunks(10) {
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn losses_are_nonnegative((z, labels) in logits(8)) {
        let (ce, g) = cross_entropy_loss(&z, &labels).unwrap();
        prop_assert!(ce >= 0.0);
        for row in g.data().chunks(10) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
        let (mse, _) = loss_and_grad(LossKind::Mse, &z, &labels).unwrap();
        prop_assert!((0.0..=2.0).contains(&mse));
    }

    #[test]
    fn relu_is_nonnegative_and_dropout_is_identity_at_inference(v in proptest::collection::vec(-5.0f64..5.0, 1..64), seed in any::<u64>()) {
        let x = Tensor::from_vec(&[1, v.len()], v).unwrap();
        let (y, _) = nn::relu(&x);
        prop_assert!(y.data().iter().all(|&a| a >= 0.0));
        let (d, _) = nn::dropout(&x, 0.3, Mode::Infer, &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(d, x);
    }

    #[test]
    fn run_stats_bounds(acc in proptest::collection::vec(90.0f64..100.0, 1..12), shift in -50.0f64..50.0) {
        let s = run_stddev(&acc).unwrap();
        prop_assert!(s.sigma >= 0.0);
        let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.mu >= lo - 1e-9 && s.mu <= hi + 1e-9);
        let moved: Vec<f64> = acc.iter().map(|a| a + shift).collect();
        prop_assert!((run_stddev(&moved).unwrap().sigma - s.sigma).abs() < 1e-9);
    }

    #[test]
    fn confusion_rows_count_labels(pairs in proptest::collection::vec((0usize..10, 0usize..10), 1..300)) {
        let (pred, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let m = confusion(&pred, &labels).unwrap();
        prop_assert_eq!(m.total(), labels.len() as u64);
        for c in 0..10 {
            prop_assert_eq!(m.row_sum(c), labels.iter().filter(|&&l| l == c).count() as u64);
            prop_assert_eq!(m.col_sum(c), pred.iter().filter(|&&p| p == c).count() as u64);
        }
        let acc = m.overall_accuracy().unwrap();
        prop_assert_eq!(acc.num, pred.iter().zip(&labels).filter(|(p, l)| p == l).count() as u64);
    }

    #[test]
    fn learning_rate_never_rises(epoch in 1usize..400) {
        let h = TrainHyper::default();
        prop_assert!(lr_at(epoch + 1, &h) <= lr_at(epoch, &h));
        prop_assert!(lr_at(epoch, &h) > 0.0);
    }

    #[test]
    fn kv_text_round_trips(map in proptest::collection::btree_map("[a-z_]{1,12}", "[ -~&&[^=#\n]]{0,20}", 0..10)) {
        let pairs: Vec<(String, String)> = map
            .into_iter()
            .map(|(k, v)| (k, v.trim().to_string()))
            .collect();
        prop_assert_eq!(kv::parse(&kv::render(&pairs)).unwrap(), pairs);
    }

    #[test]
    fn sidecar_round_trips(counts in any::<[u16; 10]>(), seed in any::<u64>(), mean in 0.0f32..1.0, std in 0.01f32..1.0) {
        let meta = ManifestMeta {
            split: Split::Test,
            norm: Normalization { mean: vec![mean; 3], std: vec![std; 3] },
            fold_seed: seed,
            class_counts: counts.map(usize::from),
        };
        prop_assert_eq!(ManifestMeta::parse(&meta.render()).unwrap(), meta);
    }
}
