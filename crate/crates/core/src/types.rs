//! Value types shared across the crate.
//!
//! Every type validates its invariants on construction and exposes read-only
//! accessors afterwards, so instances can be shared freely between threads.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// N points, each a coordinate plus an n-channel feature vector and an
/// optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    coords: Vec<Point3>,
    features: Array2<f64>,
    labels: Option<Vec<u32>>,
}

/// Checks the cloud invariants on raw parts.
///
/// Errors name the first offending point index.
pub fn validate_cloud(
    coords: &[Point3],
    features: &[Vec<f64>],
    labels: Option<&[u32]>,
) -> Result<()> {
    if coords.is_empty() && features.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if coords.len() != features.len() {
        let index = coords.len().min(features.len());
        return Err(Error::DimensionMismatch {
            index,
            expected: coords.len(),
            found: features.len(),
        });
    }
    let n = features[0].len();
    if n == 0 {
        return Err(Error::NoFeatures);
    }
    for (i, (c, f)) in coords.iter().zip(features).enumerate() {
        if f.len() != n {
            return Err(Error::DimensionMismatch {
                index: i,
                expected: n,
                found: f.len(),
            });
        }
        if !c.iter().chain(f.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite { index: i });
        }
    }
    if let Some(labels) = labels {
        if labels.len() != coords.len() {
            return Err(Error::DimensionMismatch {
                index: labels.len().min(coords.len()),
                expected: coords.len(),
                found: labels.len(),
            });
        }
    }
    Ok(())
}

impl PointCloud {
    pub fn new(coords: Vec<Point3>, features: Vec<Vec<f64>>, labels: Option<Vec<u32>>) -> Result<Self> {
        validate_cloud(&coords, &features, labels.as_deref())?;
        let n = features[0].len();
        let flat: Vec<f64> = features.into_iter().flatten().collect();
        let features = Array2::from_shape_vec((coords.len(), n), flat)
            .expect("row lengths validated above");
        Ok(PointCloud {
            coords,
            features,
            labels,
        })
    }

    pub fn from_array(coords: Vec<Point3>, features: Array2<f64>, labels: Option<Vec<u32>>) -> Result<Self> {
        if coords.is_empty() && features.nrows() == 0 {
            return Err(Error::EmptyCloud);
        }
        if features.nrows() != coords.len() {
            return Err(Error::DimensionMismatch {
                index: coords.len().min(features.nrows()),
                expected: coords.len(),
                found: features.nrows(),
            });
        }
        if features.ncols() == 0 {
            return Err(Error::NoFeatures);
        }
        for (i, (c, f)) in coords.iter().zip(features.rows()).enumerate() {
            if !c.iter().chain(f.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite { index: i });
            }
        }
        if let Some(l) = &labels {
            if l.len() != coords.len() {
                return Err(Error::DimensionMismatch {
                    index: l.len().min(coords.len()),
                    expected: coords.len(),
                    found: l.len(),
                });
            }
        }
        Ok(PointCloud {
            coords,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Feature dimension n.
    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn coords(&self) -> &[Point3] {
        &self.coords
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn feature(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// Sub-cloud made of the given point indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<PointCloud> {
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidIndex {
                    index: i,
                    len: self.len(),
                });
            }
        }
        let coords = indices.iter().map(|&i| self.coords[i]).collect();
        let features = self.features.select(ndarray::Axis(0), indices);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        PointCloud::from_array(coords, features, labels)
    }

    /// Row `i` as the concatenation `[c_i, x_i]`.
    pub fn joint_row(&self, i: usize) -> Array1<f64> {
        let mut v = Array1::zeros(3 + self.feature_dim());
        v.slice_mut(ndarray::s![..3])
            .assign(&ArrayView1::from(&self.coords[i][..]));
        v.slice_mut(ndarray::s![3..]).assign(&self.features.row(i));
        v
    }
}

/// The K neighbors of one center, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    center_index: Option<usize>,
    indices: Vec<usize>,
    distances: Vec<f64>,
}

impl Neighborhood {
    /// Rejects unsorted distances, equal-distance runs out of index order,
    /// negative or non-finite distances, and out-of-range indices.
    pub fn new(
        center_index: Option<usize>,
        indices: Vec<usize>,
        distances: Vec<f64>,
        cloud_len: usize,
    ) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::KOutOfRange {
                k: 0,
                available: cloud_len,
            });
        }
        if indices.len() != distances.len() {
            return Err(Error::shape(format!(
                "{} neighbor indices but {} distances",
                indices.len(),
                distances.len()
            )));
        }
        for (pos, (&i, &d)) in indices.iter().zip(&distances).enumerate() {
            if i >= cloud_len {
                return Err(Error::InvalidIndex {
                    index: i,
                    len: cloud_len,
                });
            }
            if !(d >= 0.0) || !d.is_finite() {
                return Err(Error::UnsortedNeighborhood { position: pos });
            }
            if pos > 0 {
                let (pd, pi) = (distances[pos - 1], indices[pos - 1]);
                if d < pd || (d == pd && i < pi) {
                    return Err(Error::UnsortedNeighborhood { position: pos });
                }
            }
        }
        Ok(Neighborhood {
            center_index,
            indices,
            distances,
        })
    }

    pub(crate) fn new_unchecked(center_index: Option<usize>, indices: Vec<usize>, distances: Vec<f64>) -> Self {
        debug_assert_eq!(indices.len(), distances.len());
        Neighborhood {
            center_index,
            indices,
            distances,
        }
    }

    pub fn center_index(&self) -> Option<usize> {
        self.center_index
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }
}

/// Spread statistics of one normalization window (or one group of it).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowStats {
    sigma: f64,
    lambda: f64,
    epsilon: f64,
    m: Option<usize>,
}

impl WindowStats {
    pub fn new(sigma: f64, epsilon: f64, m: Option<usize>) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidEpsilon(epsilon));
        }
        Ok(WindowStats {
            sigma,
            lambda: 1.0 / (sigma + epsilon),
            epsilon,
            m,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `1 / (sigma + epsilon)`.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Split size when these stats belong to a grouped window.
    pub fn m(&self) -> Option<usize> {
        self.m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BnMode {
    Training,
    Inference,
}

/// Per-channel batch normalization state.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    pub mode: BnMode,
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

impl BatchNormState {
    /// gamma = 1, beta = 0, running mean 0 and variance 1.
    pub fn identity(channels: usize) -> Self {
        BatchNormState {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            mode: BnMode::Training,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::shape("batch-norm arrays disagree on channel count"));
        }
        if self.running_var.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::shape("batch-norm running variance must be nonnegative"));
        }
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::shape("batch-norm momentum must lie in (0, 1)"));
        }
        let all = self
            .gamma
            .iter()
            .chain(&self.beta)
            .chain(&self.running_mean)
            .chain(&self.running_var);
        if !all.into_iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { index: 0 });
        }
        Ok(())
    }

    /// Folds one batch's statistics into the running estimates.
    /// `batch_var` is the biased variance; the running estimate stores the
    /// unbiased one.
    pub fn absorb(&mut self, batch_mean: &Array1<f64>, batch_var: &Array1<f64>, count: usize) {
        let unbias = if count > 1 {
            count as f64 / (count - 1) as f64
        } else {
            1.0
        };
        let mo = self.momentum;
        self.running_mean
            .zip_mut_with(batch_mean, |r, &b| *r = (1.0 - mo) * *r + mo * b);
        self.running_var
            .zip_mut_with(batch_var, |r, &b| *r = (1.0 - mo) * *r + mo * b * unbias);
    }
}

/// Learnable state of the PAGWN block: LB1 maps n+3 to n channels, LB2
/// maps 2n to 2n channels. Weights are stored input-major (`in x out`).
#[derive(Debug, Clone, PartialEq)]
pub struct PagwnParams {
    pub lb1_weight: Array2<f64>,
    pub lb1_bias: Array1<f64>,
    pub lb1_bn: BatchNormState,
    pub lb2_weight: Array2<f64>,
    pub lb2_bias: Array1<f64>,
    pub lb2_bn: BatchNormState,
}

/// Linear weights uniform in `±sqrt(1/fan_in)`.
pub(crate) fn uniform_weight(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let bound = (1.0 / fan_in as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..=bound))
}

impl PagwnParams {
    /// Seeded initialization: uniform weights, zero biases, identity BN.
    pub fn init(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(n, &mut rng)
    }

    pub(crate) fn init_with(n: usize, rng: &mut ChaCha8Rng) -> Self {
        let lb1_weight = uniform_weight(rng, n + 3, n);
        let lb2_weight = uniform_weight(rng, 2 * n, 2 * n);
        PagwnParams {
            lb1_weight,
            lb1_bias: Array1::zeros(n),
            lb1_bn: BatchNormState::identity(n),
            lb2_weight,
            lb2_bias: Array1::zeros(2 * n),
            lb2_bn: BatchNormState::identity(2 * n),
        }
    }

    /// Feature dimension n these parameters were built for.
    pub fn n(&self) -> usize {
        self.lb1_bias.len()
    }

    pub fn set_mode(&mut self, mode: BnMode) {
        self.lb1_bn.mode = mode;
        self.lb2_bn.mode = mode;
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::NoFeatures);
        }
        let dims_ok = self.lb1_weight.dim() == (n + 3, n)
            && self.lb2_weight.dim() == (2 * n, 2 * n)
            && self.lb2_bias.len() == 2 * n
            && self.lb1_bn.channels() == n
            && self.lb2_bn.channels() == 2 * n;
        if !dims_ok {
            return Err(Error::shape(format!("PAGWN parameters inconsistent with n = {n}")));
        }
        self.lb1_bn.validate()?;
        self.lb2_bn.validate()?;
        let finite = self
            .lb1_weight
            .iter()
            .chain(&self.lb1_bias)
            .chain(&self.lb2_weight)
            .chain(&self.lb2_bias)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite { index: 0 });
        }
        Ok(())
    }
}

/// Segmentation scores over an explicit class count.
///
/// Per-class entries are `None` for classes absent from both predictions
/// and ground truth (IoU) or from ground truth (accuracy).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class_acc: Vec<Option<f64>>,
    pub miou: f64,
    pub macc: f64,
    pub oa: f64,
}

impl MetricsReport {
    pub fn classes(&self) -> usize {
        self.per_class_iou.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: f64, n: usize) -> Vec<f64> {
        vec![v; n]
    }

    #[test]
    fn empty_cloud_rejected() {
        let err = PointCloud::new(vec![], vec![], None).unwrap_err();
        assert!(matches!(err, Error::EmptyCloud));
    }

    #[test]
    fn ragged_features_name_the_index() {
        let err = PointCloud::new(
            vec![[0.0; 3], [1.0; 3]],
            vec![row(0.0, 3), row(0.0, 4)],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { index: 1, .. }), "{err}");
    }

    #[test]
    fn non_finite_rejected() {
        let err = PointCloud::new(
            vec![[0.0; 3], [f64::NAN, 0.0, 0.0], [0.0; 3]],
            vec![row(0.0, 2); 3],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1 }));
    }

    #[test]
    fn well_formed_cloud_accepted() {
        let coords: Vec<Point3> = (0..100).map(|i| [i as f64, 0.5, -1.0]).collect();
        let feats: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 100.0, 1.0]).collect();
        let labels = Some((0..100).map(|i| (i % 3) as u32).collect());
        let cloud = PointCloud::new(coords, feats, labels).unwrap();
        assert_eq!(cloud.len(), 100);
        assert_eq!(cloud.feature_dim(), 2);
        assert_eq!(cloud.joint_row(5).to_vec(), vec![5.0, 0.5, -1.0, 0.05, 1.0]);
    }

    #[test]
    fn label_length_checked() {
        let err = PointCloud::new(vec![[0.0; 3]; 2], vec![row(1.0, 1); 2], Some(vec![0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn neighborhood_rejects_unsorted() {
        let err = Neighborhood::new(Some(0), vec![0, 1], vec![1.0, 0.5], 3).unwrap_err();
        assert!(matches!(err, Error::UnsortedNeighborhood { position: 1 }));
        let err = Neighborhood::new(Some(0), vec![2, 1], vec![1.0, 1.0], 3).unwrap_err();
        assert!(matches!(err, Error::UnsortedNeighborhood { position: 1 }));
        assert!(Neighborhood::new(Some(0), vec![1, 2], vec![1.0, 1.0], 3).is_ok());
        assert!(Neighborhood::new(None, vec![3], vec![1.0], 3).is_err());
    }

    #[test]
    fn lambda_inverts_sigma_plus_epsilon() {
        for &(s, e) in &[(0.0, 1e-5), (1.0, 1e-5), (3.7e4, 1e-9), (1e-7, 0.5)] {
            let w = WindowStats::new(s, e, None).unwrap();
            let rel = (w.lambda() * (w.sigma() + w.epsilon()) - 1.0).abs();
            assert!(rel < 1e-12, "{rel}");
        }
        assert!(WindowStats::new(-1.0, 1e-5, None).is_err());
        assert!(WindowStats::new(1.0, 0.0, None).is_err());
    }

    #[test]
    fn params_init_dims() {
        let p = PagwnParams::init(4, 0);
        p.validate().unwrap();
        assert_eq!(p.lb1_weight.dim(), (7, 4));
        assert_eq!(p.lb2_weight.dim(), (8, 8));
        let bound = (1.0f64 / 7.0).sqrt();
        assert!(p.lb1_weight.iter().all(|w| w.abs() <= bound));
        assert_eq!(PagwnParams::init(4, 0), p);
    }
}
