use ivimlab::fgr::{expected_tlv, roc};
use ivimlab::grid::{BinaryMask, Dims, VoxelSpacing};
use ivimlab::mask_ops::{dice, fuse, hausdorff, FusionStrategy};
use ivimlab::phantom::{boundary_flip, dilate, ellipsoid_mask, erode};
use ivimlab::stats::{self, shannon_entropy};
use proptest::prelude::*;

fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max, 1..=max, 1..=max).prop_flat_map(|(nz, ny, nx)| {
        proptest::collection::vec(any::<bool>(), nz * ny * nx).prop_map(move |data| {
            BinaryMask::new(Dims::new(nz, ny, nx).unwrap(), VoxelSpacing::unit(), data).unwrap()
        })
    })
}

fn mask_triple(max: usize) -> impl Strategy<Value = [BinaryMask; 3]> {
    (1..=max, 1..=max, 1..=max).prop_flat_map(|(nz, ny, nx)| {
        let n = nz * ny * nx;
        let one = move || proptest::collection::vec(any::<bool>(), n);
        (one(), one(), one()).prop_map(move |(a, b, c)| {
            let d = Dims::new(nz, ny, nx).unwrap();
            let m = |v| BinaryMask::new(d, VoxelSpacing::new(3.0, 1.0, 1.5).unwrap(), v).unwrap();
            [m(a), m(b), m(c)]
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fusion_is_nested(masks in mask_triple(6)) {
        let olp = fuse(&masks, FusionStrategy::Olp).unwrap();
        let avg = fuse(&masks, FusionStrategy::Avg).unwrap();
        let lc = fuse(&masks, FusionStrategy::Lc).unwrap();
        for i in 0..olp.data().len() {
            prop_assert!(!olp.data()[i] || avg.data()[i]);
            prop_assert!(!avg.data()[i] || lc.data()[i]);
        }
    }

    #[test]
    fn dice_and_hausdorff_are_symmetric(masks in mask_triple(6)) {
        let [a, b, _] = &masks;
        let d = dice(a, b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, dice(b, a).unwrap());
        if !a.is_empty() && !b.is_empty() {
            let h = hausdorff(a, b).unwrap();
            prop_assert_eq!(h, hausdorff(b, a).unwrap());
            prop_assert_eq!(h == 0.0, a == b);
        }
    }

    #[test]
    fn boundary_flip_only_touches_the_boundary(m in mask_strategy(6), seed in any::<u64>()) {
        let flipped = boundary_flip(&m, 0.5, seed).unwrap();
        let near = dilate(&m, 1);
        let core = erode(&m, 1);
        for i in 0..m.data().len() {
            if flipped.data()[i] != m.data()[i] {
                prop_assert!(near.data()[i] && !core.data()[i]);
            }
        }
    }

    #[test]
    fn entropy_is_bounded_and_permutation_invariant(
        mut values in proptest::collection::vec(-1e3f64..1e3, 1..200),
        bins in 1usize..80,
        scale in 0.01f64..100.0,
        shift in -50.0f64..50.0,
    ) {
        let h = shannon_entropy(&values, bins).unwrap();
        prop_assert!(h >= 0.0 && h <= (bins as f64).log2() + 1e-12);
        let shifted: Vec<f64> = values.iter().map(|v| v * scale + shift).collect();
        let h_affine = shannon_entropy(&shifted, bins).unwrap();
        // bin edges track [min, max]; values on an edge may round either way
        prop_assert!((h - h_affine).abs() < 0.05 || values.len() < 2, "{h} vs {h_affine}");
        values.reverse();
        prop_assert!((shannon_entropy(&values, bins).unwrap() - h).abs() < 1e-12);
    }

    #[test]
    fn cv_is_scale_invariant(values in proptest::collection::vec(1.0f64..10.0, 2..50), c in 0.1f64..100.0) {
        let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
        let a = stats::cv(&values).unwrap();
        let b = stats::cv(&scaled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        let shifted: Vec<f64> = values.iter().map(|v| v + 5.0).collect();
        if a > 1e-9 {
            prop_assert!(stats::cv(&shifted).unwrap() < a);
        }
    }

    #[test]
    fn auc_survives_monotone_transforms(
        scores in proptest::collection::vec(-5.0f64..5.0, 2..30),
        flips in proptest::collection::vec(any::<bool>(), 30),
    ) {
        let mut labels: Vec<bool> = flips[..scores.len()].to_vec();
        labels[0] = true;
        labels[1] = false;
        let r = roc(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
        let t = roc(&transformed, &labels).unwrap();
        prop_assert!((r.auc - t.auc).abs() < 1e-12);
        let partition = |s: &[f64], thr: f64| s.iter().map(|v| *v > thr).collect::<Vec<_>>();
        prop_assert_eq!(
            partition(&scores, r.youden_threshold),
            partition(&transformed, t.youden_threshold)
        );
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        prop_assert!((r.auc + roc(&scores, &flipped).unwrap().auc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn roc_curve_shape(raw in proptest::collection::btree_set(-1000i32..1000, 2..25)) {
        let scores: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
        let labels: Vec<bool> = (0..scores.len()).map(|i| i % 2 == 0).collect();
        let r = roc(&scores, &labels).unwrap();
        prop_assert_eq!(r.points.len(), scores.len() + 1);
        let first = r.points[0];
        let last = *r.points.last().unwrap();
        prop_assert_eq!((first.sensitivity, first.specificity), (0.0, 1.0));
        prop_assert_eq!((last.sensitivity, last.specificity), (1.0, 0.0));
        for w in r.points.windows(2) {
            prop_assert!(w[0].threshold > w[1].threshold);
        }
    }

    #[test]
    fn expected_tlv_matches_horner(ga in 15.0f64..45.0) {
        let horner = ((-0.0132 * ga + 1.14) * ga - 27.38) * ga + 207.5;
        let v = expected_tlv(ga).unwrap();
        prop_assert!((v - horner).abs() <= 1e-12 * horner.abs().max(1.0));
    }
}

#[test]
fn mann_whitney_exhaustive_agreement_for_twelve() {
    // every split of ranks 1..=12 into 6 + 6
    let ranks: Vec<f64> = (1..=12).map(f64::from).collect();
    let mut worst = 0.0f64;
    for bits in 0u32..(1 << 12) {
        if bits.count_ones() != 6 {
            continue;
        }
        let (x, y): (Vec<f64>, Vec<f64>) = {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for (k, &r) in ranks.iter().enumerate() {
                if bits & (1 << k) != 0 {
                    x.push(r);
                } else {
                    y.push(r);
                }
            }
            (x, y)
        };
        let e = stats::mann_whitney_u_exact(&x, &y).unwrap().p_value;
        let a = stats::mann_whitney_u_asymptotic(&x, &y).unwrap().p_value;
        worst = worst.max((e - a).abs());
    }
    assert!(worst <= 0.02, "{worst}");
}

#[test]
fn dice_falls_with_dilation_radius() {
    let m = ellipsoid_mask(Dims::new(8, 32, 32).unwrap(), VoxelSpacing::unit(), 0.6);
    let mut last = 1.0;
    for r in 1..=4 {
        let d = dice(&m, &dilate(&m, r)).unwrap();
        assert!(d < last, "radius {r}: {d} >= {last}");
        last = d;
    }
}
