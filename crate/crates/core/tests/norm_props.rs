use ndarray::{Array1, Array2};
use proptest::prelude::*;

use pgrain::eval::{generate_scene, Primitive, RegionSpec, SyntheticSceneSpec};
use pgrain::norm::{
    calibrate, group_wise_window_normalize, sigma_map, window_normalize, window_sigma, window_sigmas,
    SigmaMapOptions, Window,
};
use pgrain::spatial::build_index;
use pgrain::PointCloud;

fn window(max_k: usize, max_d: usize) -> impl Strategy<Value = (Array1<f64>, Array2<f64>)> {
    (2..=max_k, 1..=max_d).prop_flat_map(|(k, d)| {
        (
            prop::collection::vec(-5.0..5.0f64, d),
            prop::collection::vec(-5.0..5.0f64, k * d),
        )
            .prop_map(move |(c, x)| (Array1::from(c), Array2::from_shape_vec((k, d), x).unwrap()))
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn translation_leaves_output_unchanged((c, x) in window(16, 6), shift in -100.0..100.0f64) {
        let a = window_normalize(&Window::new(c.clone(), x.clone()).unwrap(), 1e-5).unwrap();
        let b = window_normalize(&Window::new(&c + shift, &x + shift).unwrap(), 1e-5).unwrap();
        for (u, v) in a.values().iter().zip(b.values()) {
            prop_assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn scale_response((c, x) in window(16, 6), alpha in 0.01..100.0f64) {
        let w = Window::new(c.clone(), x.clone()).unwrap();
        let scaled = Window::new(c.clone(), (&x - &c) * alpha + &c).unwrap();
        let s0 = window_sigma(&w).unwrap();
        let s1 = window_sigma(&scaled).unwrap();
        prop_assert!(close(s1, alpha * s0, 1e-12));
        // Epsilon must be positive; at 1e-300 it vanishes next to sigma.
        let a = window_normalize(&w, 1e-300).unwrap();
        let b = window_normalize(&scaled, 1e-300).unwrap();
        if s0 > 0.0 {
            for (u, v) in a.values().iter().zip(b.values()) {
                prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()));
            }
        }
    }

    #[test]
    fn unbiased_window_stays_centered((c, x) in window(12, 4)) {
        // Reflect the neighbors through the center so their mean is the center.
        let mirrored = ndarray::concatenate![ndarray::Axis(0), x, &c * 2.0 - &x];
        let nw = window_normalize(&Window::new(c.clone(), mirrored).unwrap(), 1e-5).unwrap();
        let rect = calibrate(&nw, c.view()).unwrap();
        let mean = rect.mean_axis(ndarray::Axis(0)).unwrap();
        for (m, cc) in mean.iter().zip(&c) {
            prop_assert!((m - cc).abs() <= 1e-10 * (1.0 + cc.abs()));
        }
    }

    #[test]
    fn grouped_matches_per_group_single((c, x) in window(16, 4), split in 0.0..1.0f64) {
        let k = x.nrows();
        let d = x.ncols();
        let m = 1 + ((k - 2) as f64 * split) as usize;
        prop_assume!(m * d >= 2 && (k - m) * d >= 2);
        let g = group_wise_window_normalize(&Window::new(c.clone(), x.clone()).unwrap(), m, 1e-5).unwrap();
        let head = window_normalize(&Window::new(c.clone(), x.slice(ndarray::s![..m, ..]).to_owned()).unwrap(), 1e-5).unwrap();
        let tail = window_normalize(&Window::new(c.clone(), x.slice(ndarray::s![m.., ..]).to_owned()).unwrap(), 1e-5).unwrap();
        let joined = ndarray::concatenate![ndarray::Axis(0), head.values(), tail.values()];
        prop_assert_eq!(g.values(), joined.view());
    }
}

fn single_region(primitive: Primitive, count: usize, density: f64, noise: f64, seed: u64) -> PointCloud {
    generate_scene(&SyntheticSceneSpec {
        regions: vec![RegionSpec {
            primitive,
            point_count: count,
            density_scale: density,
            class_label: 0,
            feature_noise_sigma: noise,
        }],
        seed,
    })
    .unwrap()
}

#[test]
fn tight_blob_has_no_flagged_points() {
    let cloud = single_region(Primitive::Sphere, 400, 1e6, 0.0, 1);
    assert!(sigma_map(&cloud, 16, 1.0).unwrap().is_empty());
}

#[test]
fn zero_threshold_flags_every_nondegenerate_window() {
    let cloud = single_region(Primitive::Plane, 200, 100.0, 0.1, 2);
    let sigmas = window_sigmas(&cloud, 8, SigmaMapOptions::default()).unwrap();
    let expected: Vec<usize> = (0..cloud.len()).filter(|&i| sigmas[i] > 0.0).collect();
    assert_eq!(expected.len(), cloud.len());
    assert_eq!(sigma_map(&cloud, 8, 0.0).unwrap(), expected);
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn sparser_windows_spread_wider() {
    let spec = SyntheticSceneSpec {
        regions: vec![
            RegionSpec {
                primitive: Primitive::Plane,
                point_count: 400,
                density_scale: 400.0,
                class_label: 0,
                feature_noise_sigma: 0.02,
            },
            RegionSpec {
                primitive: Primitive::Plane,
                point_count: 400,
                density_scale: 25.0,
                class_label: 0,
                feature_noise_sigma: 0.02,
            },
        ],
        seed: 8,
    };
    let cloud = generate_scene(&spec).unwrap();
    let k = 16;
    let sigmas = window_sigmas(&cloud, k, SigmaMapOptions::default()).unwrap();
    let index = build_index(&cloud).unwrap();
    let spacing: Vec<f64> = (0..cloud.len())
        .map(|i| {
            let nb = index.knn_of_point(i, k, false).unwrap();
            nb.distances().iter().sum::<f64>() / k as f64
        })
        .collect();
    let rho = spearman(&sigmas, &spacing);
    assert!(rho > 0.9, "rank correlation {rho}");
}
