use proptest::prelude::*;

use pgrain::eval::{compute_metrics, density_imbalanced_spec, generate_scene, mean_knn_distance_by_label};
use pgrain::eval::{Primitive, RegionSpec, SyntheticSceneSpec};
use pgrain::io::{encode_ply, format_xyz, parse_ply, parse_xyz, read_bundle, write_bundle, PlyEncoding, Tensor, TensorData};
use pgrain::{Error, PointCloud};

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, any::<f64>().prop_filter("finite", |v| v.is_finite())]
}

fn cloud(n_feat: usize, labeled: bool) -> impl Strategy<Value = PointCloud> {
    (1usize..40).prop_flat_map(move |n| {
        (
            prop::collection::vec([finite(), finite(), finite()], n),
            prop::collection::vec(prop::collection::vec(finite(), n_feat), n),
            prop::collection::vec(0u32..20, n),
        )
            .prop_map(move |(c, f, l)| PointCloud::new(c, f, labeled.then_some(l)).unwrap())
    })
}

fn rgb_cloud() -> impl Strategy<Value = PointCloud> {
    (1usize..40, any::<bool>()).prop_flat_map(|(n, labeled)| {
        (
            prop::collection::vec([finite(), finite(), finite()], n),
            prop::collection::vec(prop::collection::vec(0u8..=255, 3), n),
            prop::collection::vec(0u32..1000, n),
        )
            .prop_map(move |(c, f, l)| {
                let feats = f
                    .into_iter()
                    .map(|row| row.into_iter().map(|v| v as f64 / 255.0).collect())
                    .collect();
                PointCloud::new(c, feats, labeled.then_some(l)).unwrap()
            })
    })
}

fn assert_clouds_eq(a: &PointCloud, b: &PointCloud) {
    assert_eq!(a.coords(), b.coords());
    assert_eq!(a.features(), b.features());
    assert_eq!(a.labels(), b.labels());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn xyz_round_trip(c in (1usize..6, any::<bool>()).prop_flat_map(|(n, l)| cloud(n, l))) {
        let text = format_xyz(&c);
        let back = parse_xyz(&text, c.feature_dim(), c.labels().is_some()).unwrap();
        assert_clouds_eq(&c, &back);
    }

    #[test]
    fn ply_round_trip(c in rgb_cloud(), binary in any::<bool>()) {
        let enc = if binary { PlyEncoding::BinaryLittleEndian } else { PlyEncoding::Ascii };
        let back = parse_ply(&encode_ply(&c, enc).unwrap()).unwrap();
        assert_clouds_eq(&c, &back);
    }

    #[test]
    fn tensor_round_trip(dims in prop::collection::vec(0usize..5, 0..4), kind in 0u8..3, seed in any::<u64>()) {
        let len: usize = dims.iter().product();
        let data = match kind {
            0 => TensorData::F32((0..len).map(|i| (i as f32) * 0.5 - seed as f32).collect()),
            1 => TensorData::F64((0..len).map(|i| (i as f64).sin() * seed as f64).collect()),
            _ => TensorData::I64((0..len).map(|i| i as i64 - (seed >> 2) as i64).collect()),
        };
        let t = Tensor::new(dims, data).unwrap();
        prop_assert_eq!(Tensor::from_bytes(&t.to_bytes().unwrap()).unwrap(), t);
    }

    #[test]
    fn truncated_tensor_rejected(len in 1usize..20, cut in 1usize..8) {
        let t = Tensor::new(vec![len], TensorData::F64(vec![1.0; len])).unwrap();
        let bytes = t.to_bytes().unwrap();
        prop_assert!(Tensor::from_bytes(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn metric_invariants(
        (c, pairs) in (1usize..7).prop_flat_map(|c| (Just(c), prop::collection::vec((0..c as u32, 0..c as u32), 1..200))),
        seed in any::<u64>(),
    ) {
        let (pred, truth): (Vec<u32>, Vec<u32>) = pairs.iter().copied().unzip();
        let r = compute_metrics(&pred, &truth, c).unwrap();
        for k in 0..c {
            if let (Some(iou), Some(acc)) = (r.per_class_iou[k], r.per_class_acc[k]) {
                prop_assert!(iou <= acc);
            }
        }
        // OA is the frequency-weighted mean of per-class accuracy.
        let weighted: f64 = (0..c)
            .map(|k| {
                let freq = truth.iter().filter(|&&t| t as usize == k).count() as f64;
                freq * r.per_class_acc[k].unwrap_or(0.0)
            })
            .sum::<f64>() / truth.len() as f64;
        prop_assert!((weighted - r.oa).abs() < 1e-12);

        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let p2: Vec<u32> = order.iter().map(|&i| pred[i]).collect();
        let t2: Vec<u32> = order.iter().map(|&i| truth[i]).collect();
        prop_assert_eq!(compute_metrics(&p2, &t2, c).unwrap(), r);
    }
}

#[test]
fn bundle_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let tensors = vec![
        ("a".to_string(), Tensor::new(vec![2, 3], TensorData::F64(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])).unwrap()),
        ("scalar".to_string(), Tensor::new(vec![], TensorData::I64(vec![7])).unwrap()),
    ];
    write_bundle(dir.path(), &tensors).unwrap();
    assert_eq!(read_bundle(dir.path()).unwrap(), tensors);
}

#[test]
fn metrics_errors() {
    assert!(matches!(compute_metrics(&[0, 1], &[0], 2), Err(Error::LengthMismatch { .. })));
    assert!(matches!(compute_metrics(&[0, 3], &[0, 1], 3), Err(Error::LabelOutOfRange { .. })));
}

#[test]
fn density_regions_differ_in_spacing() {
    let spec = SyntheticSceneSpec {
        regions: vec![
            RegionSpec {
                primitive: Primitive::Plane,
                point_count: 300,
                density_scale: 1.0,
                class_label: 0,
                feature_noise_sigma: 0.1,
            },
            RegionSpec {
                primitive: Primitive::Plane,
                point_count: 300,
                density_scale: 10.0,
                class_label: 1,
                feature_noise_sigma: 0.1,
            },
        ],
        seed: 5,
    };
    let cloud = generate_scene(&spec).unwrap();
    let d = mean_knn_distance_by_label(&cloud, 8).unwrap();
    let ratio = d[0].1 / d[1].1;
    assert!(ratio >= 10f64.powf(1.0 / 3.0) / 2.0, "spacing ratio {ratio}");

    let imbalanced = generate_scene(&density_imbalanced_spec(0)).unwrap();
    let d = mean_knn_distance_by_label(&imbalanced, 8).unwrap();
    assert!(d[1].1 / d[0].1 >= 10f64.powf(1.0 / 3.0) / 2.0);
}
