use std::hash::{DefaultHasher, Hash, Hasher};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use super::layers::{bn_backward, bn_forward, linear_backward, linear_forward, BnCache};
use crate::error::{Error, Result};
use crate::norm::{group_wise_window_normalize, normalize_backward, window_normalize, NormalizedWindow, Window};
use crate::types::{BnMode, Neighborhood, PagwnParams, Point3, PointCloud};

/// One center with its K neighbors, rows nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct PagwnInput {
    pub center_coord: Point3,
    pub center_feature: Array1<f64>,
    pub neighbor_coords: Array2<f64>,
    pub neighbor_features: Array2<f64>,
}

impl PagwnInput {
    pub fn new(
        center_coord: Point3,
        center_feature: Array1<f64>,
        neighbor_coords: Array2<f64>,
        neighbor_features: Array2<f64>,
    ) -> Result<Self> {
        let input = PagwnInput {
            center_coord,
            center_feature,
            neighbor_coords,
            neighbor_features,
        };
        input.validate()?;
        Ok(input)
    }

    pub fn from_cloud(cloud: &PointCloud, center: usize, nb: &Neighborhood) -> Result<Self> {
        if center >= cloud.len() {
            return Err(Error::InvalidIndex {
                index: center,
                len: cloud.len(),
            });
        }
        let k = nb.k();
        let mut neighbor_coords = Array2::zeros((k, 3));
        for (j, &i) in nb.indices().iter().enumerate() {
            if i >= cloud.len() {
                return Err(Error::InvalidIndex {
                    index: i,
                    len: cloud.len(),
                });
            }
            neighbor_coords.row_mut(j).assign(&Array1::from(cloud.coords()[i].to_vec()));
        }
        let neighbor_features = cloud.features().select(Axis(0), nb.indices());
        PagwnInput::new(
            cloud.coords()[center],
            cloud.feature(center).to_owned(),
            neighbor_coords,
            neighbor_features,
        )
    }

    pub fn k(&self) -> usize {
        self.neighbor_features.nrows()
    }

    pub fn n(&self) -> usize {
        self.center_feature.len()
    }

    fn validate(&self) -> Result<()> {
        let (k, n) = (self.neighbor_features.nrows(), self.center_feature.len());
        if n == 0 {
            return Err(Error::NoFeatures);
        }
        if k == 0 {
            return Err(Error::KOutOfRange { k: 0, available: 0 });
        }
        if self.neighbor_features.ncols() != n || self.neighbor_coords.dim() != (k, 3) {
            return Err(Error::shape(format!(
                "neighbor coords {:?} / features {:?} inconsistent with K = {k}, n = {n}",
                self.neighbor_coords.dim(),
                self.neighbor_features.dim()
            )));
        }
        let finite = self
            .center_coord
            .iter()
            .chain(&self.center_feature)
            .chain(&self.neighbor_coords)
            .chain(&self.neighbor_features)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite { index: 0 });
        }
        Ok(())
    }

    /// GWN input window over `[c, x]` rows.
    pub fn joint_window(&self) -> Result<Window> {
        let mut center = Array1::zeros(3 + self.n());
        center.slice_mut(s![..3]).assign(&Array1::from(self.center_coord.to_vec()));
        center.slice_mut(s![3..]).assign(&self.center_feature);
        let rows = concatenate(Axis(1), &[self.neighbor_coords.view(), self.neighbor_features.view()])
            .map_err(|e| Error::shape(e.to_string()))?;
        Window::new(center, rows)
    }
}

/// Normalization settings for the block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PagwnConfig {
    /// Texture-group size m; `None` normalizes the whole window as one group.
    pub split: Option<usize>,
    pub epsilon: f64,
}

impl Default for PagwnConfig {
    fn default() -> Self {
        PagwnConfig {
            split: Some(crate::norm::DEFAULT_SPLIT),
            epsilon: crate::norm::DEFAULT_EPSILON,
        }
    }
}

impl PagwnConfig {
    pub fn grouped(m: usize) -> Self {
        PagwnConfig {
            split: Some(m),
            ..Default::default()
        }
    }

    pub fn ungrouped() -> Self {
        PagwnConfig {
            split: None,
            ..Default::default()
        }
    }

    pub(crate) fn normalize(&self, window: &Window) -> Result<NormalizedWindow> {
        match self.split {
            Some(m) => group_wise_window_normalize(window, m, self.epsilon),
            None => window_normalize(window, self.epsilon),
        }
    }
}

/// Intermediate state retained for [`pagwn_backward`].
#[derive(Debug, Clone)]
pub struct PagwnCache {
    fingerprint: u64,
    offsets: Vec<usize>,
    windows: Vec<Window>,
    normalized: Vec<NormalizedWindow>,
    gwn: Array2<f64>,
    bn1: BnCache,
    joined: Array2<f64>,
    bn2: BnCache,
    /// Per center and channel, the row (within the center) holding the max.
    argmax: Vec<Vec<usize>>,
    pooled: Array2<f64>,
}

impl PagwnCache {
    pub fn argmax(&self) -> &[Vec<usize>] {
        &self.argmax
    }

    /// Pre-activation channel maxima, one row per center.
    pub fn pooled(&self) -> ArrayView2<'_, f64> {
        self.pooled.view()
    }

    /// Group sigmas of every normalized window.
    pub fn normalized(&self) -> &[NormalizedWindow] {
        &self.normalized
    }

    /// LB1 batch statistics `(mean, biased var, rows)` for running-stat updates.
    pub fn lb1_batch_stats(&self) -> (&Array1<f64>, &Array1<f64>, usize) {
        (&self.bn1.mean, &self.bn1.var, self.gwn.nrows())
    }

    pub fn lb2_batch_stats(&self) -> (&Array1<f64>, &Array1<f64>, usize) {
        (&self.bn2.mean, &self.bn2.var, self.joined.nrows())
    }
}

#[derive(Debug, Clone)]
pub struct PagwnOutput {
    /// `B x 2n`, one aggregated feature per center; entries are >= 0.
    pub aggregated: Array2<f64>,
    /// Pre-abstraction rows `LB1(GWN([c, x]))`, all centers stacked (`R x n`).
    pub pre_abstract: Array2<f64>,
    pub cache: PagwnCache,
}

impl PagwnOutput {
    /// Folds training-mode batch statistics into the running estimates.
    pub fn update_running_stats(&self, params: &mut PagwnParams) {
        if self.cache.bn1.mode == BnMode::Training {
            let (m, v, r) = self.cache.lb1_batch_stats();
            params.lb1_bn.absorb(m, v, r);
        }
        if self.cache.bn2.mode == BnMode::Training {
            let (m, v, r) = self.cache.lb2_batch_stats();
            params.lb2_bn.absorb(m, v, r);
        }
    }

    /// Pre-abstraction rows of center `b`.
    pub fn pre_abstract_rows(&self, b: usize) -> ArrayView2<'_, f64> {
        self.pre_abstract
            .slice(s![self.cache.offsets[b]..self.cache.offsets[b + 1], ..])
    }
}

/// Gradients for one input center.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGradient {
    pub center_coord: Array1<f64>,
    pub center_feature: Array1<f64>,
    pub neighbor_coords: Array2<f64>,
    pub neighbor_features: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PagwnGradients {
    pub lb1_weight: Array2<f64>,
    pub lb1_bias: Array1<f64>,
    pub lb1_gamma: Array1<f64>,
    pub lb1_beta: Array1<f64>,
    pub lb2_weight: Array2<f64>,
    pub lb2_bias: Array1<f64>,
    pub lb2_gamma: Array1<f64>,
    pub lb2_beta: Array1<f64>,
    pub inputs: Vec<InputGradient>,
}

impl PagwnParams {
    /// Plain SGD update of every learnable array.
    pub fn sgd_step(&mut self, grads: &PagwnGradients, lr: f64) {
        self.lb1_weight.scaled_add(-lr, &grads.lb1_weight);
        self.lb1_bias.scaled_add(-lr, &grads.lb1_bias);
        self.lb1_bn.gamma.scaled_add(-lr, &grads.lb1_gamma);
        self.lb1_bn.beta.scaled_add(-lr, &grads.lb1_beta);
        self.lb2_weight.scaled_add(-lr, &grads.lb2_weight);
        self.lb2_bias.scaled_add(-lr, &grads.lb2_bias);
        self.lb2_bn.gamma.scaled_add(-lr, &grads.lb2_gamma);
        self.lb2_bn.beta.scaled_add(-lr, &grads.lb2_beta);
    }

    /// Hash of every value the forward pass reads.
    pub(crate) fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let arrays = [
            self.lb1_weight.as_slice_memory_order(),
            self.lb1_bias.as_slice_memory_order(),
            self.lb1_bn.gamma.as_slice_memory_order(),
            self.lb1_bn.beta.as_slice_memory_order(),
            self.lb2_weight.as_slice_memory_order(),
            self.lb2_bias.as_slice_memory_order(),
            self.lb2_bn.gamma.as_slice_memory_order(),
            self.lb2_bn.beta.as_slice_memory_order(),
        ];
        for a in arrays.into_iter().flatten() {
            a.iter().for_each(|v| v.to_bits().hash(&mut h));
        }
        for bn in [&self.lb1_bn, &self.lb2_bn] {
            (bn.mode == BnMode::Training).hash(&mut h);
            bn.eps.to_bits().hash(&mut h);
            if bn.mode == BnMode::Inference {
                bn.running_mean.iter().chain(&bn.running_var).for_each(|v| v.to_bits().hash(&mut h));
            }
        }
        h.finish()
    }
}

/// `LB1(GWN([c_j, x_j]))` for a single center: a `K x n` matrix.
pub fn pre_abstract(input: &PagwnInput, params: &PagwnParams, config: &PagwnConfig) -> Result<Array2<f64>> {
    Ok(pagwn_forward_batch(std::slice::from_ref(input), params, config)?.pre_abstract)
}

pub fn pagwn_forward(input: &PagwnInput, params: &PagwnParams, config: &PagwnConfig) -> Result<PagwnOutput> {
    pagwn_forward_batch(std::slice::from_ref(input), params, config)
}

/// Forward pass over a mini-batch of centers.
///
/// Batch normalization statistics (training mode) are taken over all
/// neighbor rows of all centers in the batch.
pub fn pagwn_forward_batch(inputs: &[PagwnInput], params: &PagwnParams, config: &PagwnConfig) -> Result<PagwnOutput> {
    params.validate()?;
    if inputs.is_empty() {
        return Err(Error::shape("empty PAGWN batch"));
    }
    let n = params.n();
    let d = n + 3;
    let mut offsets = Vec::with_capacity(inputs.len() + 1);
    offsets.push(0);
    let mut windows = Vec::with_capacity(inputs.len());
    let mut normalized = Vec::with_capacity(inputs.len());
    for input in inputs {
        input.validate()?;
        if input.n() != n {
            return Err(Error::shape(format!(
                "input has {} feature channels, parameters expect {n}",
                input.n()
            )));
        }
        let w = input.joint_window()?;
        normalized.push(config.normalize(&w)?);
        windows.push(w);
        offsets.push(offsets.last().unwrap() + input.k());
    }
    let rows = *offsets.last().unwrap();

    let mut gwn = Array2::zeros((rows, d));
    for (b, nw) in normalized.iter().enumerate() {
        gwn.slice_mut(s![offsets[b]..offsets[b + 1], ..]).assign(&nw.values());
    }

    let a1 = linear_forward(gwn.view(), &params.lb1_weight, &params.lb1_bias);
    let (y1, bn1) = bn_forward(a1.view(), &params.lb1_bn);

    let mut joined = Array2::zeros((rows, 2 * n));
    joined.slice_mut(s![.., ..n]).assign(&y1);
    for (b, input) in inputs.iter().enumerate() {
        joined
            .slice_mut(s![offsets[b]..offsets[b + 1], n..])
            .assign(&input.center_feature.view().insert_axis(Axis(0)));
    }

    let a2 = linear_forward(joined.view(), &params.lb2_weight, &params.lb2_bias);
    let (y2, bn2) = bn_forward(a2.view(), &params.lb2_bn);

    let mut pooled = Array2::zeros((inputs.len(), 2 * n));
    let mut argmax = Vec::with_capacity(inputs.len());
    for b in 0..inputs.len() {
        let block = y2.slice(s![offsets[b]..offsets[b + 1], ..]);
        let mut arg = vec![0usize; 2 * n];
        for ch in 0..2 * n {
            let col = block.column(ch);
            let mut best = 0;
            for j in 1..col.len() {
                // Strict > routes ties to the lowest row.
                if col[j] > col[best] {
                    best = j;
                }
            }
            arg[ch] = best;
            pooled[[b, ch]] = col[best];
        }
        argmax.push(arg);
    }
    let aggregated = pooled.mapv(|v| v.max(0.0));

    Ok(PagwnOutput {
        aggregated,
        pre_abstract: y1,
        cache: PagwnCache {
            fingerprint: params.fingerprint(),
            offsets,
            windows,
            normalized,
            gwn,
            bn1,
            joined,
            bn2,
            argmax,
            pooled,
        },
    })
}

/// Analytic gradients of `sum(upstream * aggregated)`.
///
/// ReLU and maxpool use subgradients (0 at 0; ties to the lowest row). The
/// parameters must be the ones the forward pass ran with.
pub fn pagwn_backward(
    params: &PagwnParams,
    cache: &PagwnCache,
    upstream: ArrayView2<'_, f64>,
) -> Result<PagwnGradients> {
    if params.fingerprint() != cache.fingerprint {
        return Err(Error::StaleCache);
    }
    let n = params.n();
    let batch = cache.argmax.len();
    if upstream.dim() != (batch, 2 * n) {
        return Err(Error::shape(format!(
            "upstream gradient {:?}, expected ({batch}, {})",
            upstream.dim(),
            2 * n
        )));
    }
    let rows = cache.gwn.nrows();

    let mut dy2 = Array2::zeros((rows, 2 * n));
    for b in 0..batch {
        for ch in 0..2 * n {
            if cache.pooled[[b, ch]] > 0.0 {
                dy2[[cache.offsets[b] + cache.argmax[b][ch], ch]] += upstream[[b, ch]];
            }
        }
    }

    let (da2, lb2_gamma, lb2_beta) = bn_backward(dy2.view(), &cache.bn2, &params.lb2_bn.gamma);
    let (djoined, lb2_weight, lb2_bias) = linear_backward(cache.joined.view(), &params.lb2_weight, da2.view());
    let dy1 = djoined.slice(s![.., ..n]);
    let (da1, lb1_gamma, lb1_beta) = bn_backward(dy1, &cache.bn1, &params.lb1_bn.gamma);
    let (dgwn, lb1_weight, lb1_bias) = linear_backward(cache.gwn.view(), &params.lb1_weight, da1.view());

    let mut inputs = Vec::with_capacity(batch);
    for b in 0..batch {
        let range = cache.offsets[b]..cache.offsets[b + 1];
        let (dcenter, dnb) = normalize_backward(
            &cache.windows[b],
            &cache.normalized[b],
            dgwn.slice(s![range.clone(), ..]),
        )?;
        let broadcast = djoined.slice(s![range, n..]).sum_axis(Axis(0));
        inputs.push(InputGradient {
            center_coord: dcenter.slice(s![..3]).to_owned(),
            center_feature: &dcenter.slice(s![3..]) + &broadcast,
            neighbor_coords: dnb.slice(s![.., ..3]).to_owned(),
            neighbor_features: dnb.slice(s![.., 3..]).to_owned(),
        });
    }

    Ok(PagwnGradients {
        lb1_weight,
        lb1_bias,
        lb1_gamma,
        lb1_beta,
        lb2_weight,
        lb2_bias,
        lb2_gamma,
        lb2_beta,
        inputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::BatchNormState;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(rng: &mut ChaCha8Rng, k: usize, n: usize) -> PagwnInput {
        let mut g = || rng.random_range(-1.0..1.0);
        PagwnInput::new(
            [g(), g(), g()],
            Array1::from_shape_fn(n, |_| g()),
            Array2::from_shape_fn((k, 3), |_| g()),
            Array2::from_shape_fn((k, n), |_| g()),
        )
        .unwrap()
    }

    fn inference_identity(n: usize) -> PagwnParams {
        let mut p = PagwnParams::init(n, 0);
        p.lb1_bn = BatchNormState::identity(n);
        p.lb2_bn = BatchNormState::identity(2 * n);
        p.set_mode(BnMode::Inference);
        p.lb1_bn.eps = 0.0;
        p.lb2_bn.eps = 0.0;
        p
    }

    #[test]
    fn zero_lb1_gives_zero_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_input(&mut rng, 6, 4);
        let mut p = inference_identity(4);
        p.lb1_weight.fill(0.0);
        let rows = pre_abstract(&input, &p, &PagwnConfig::default()).unwrap();
        assert_eq!(rows.dim(), (6, 4));
        assert!(rows.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn selecting_lb1_reproduces_gwn_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 3;
        let input = random_input(&mut rng, 7, n);
        let mut p = inference_identity(n);
        p.lb1_weight.fill(0.0);
        for c in 0..n {
            p.lb1_weight[[3 + c, c]] = 1.0;
        }
        let cfg = PagwnConfig::grouped(3);
        let rows = pre_abstract(&input, &p, &cfg).unwrap();
        let gwn = group_wise_window_normalize(&input.joint_window().unwrap(), 3, cfg.epsilon).unwrap();
        assert_eq!(rows, gwn.values().slice(s![.., 3..]));
    }

    #[test]
    fn zero_lb2_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random_input(&mut rng, 5, 2);
        let mut p = inference_identity(2);
        p.lb2_weight.fill(0.0);
        let out = pagwn_forward(&input, &p, &PagwnConfig::default()).unwrap();
        assert_eq!(out.aggregated, Array2::<f64>::zeros((1, 4)));
    }

    #[test]
    fn single_neighbor_is_relu_of_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = random_input(&mut rng, 1, 3);
        let mut p = PagwnParams::init(3, 9);
        p.set_mode(BnMode::Inference);
        let out = pagwn_forward(&input, &p, &PagwnConfig::ungrouped()).unwrap();
        let lb1 = pre_abstract(&input, &p, &PagwnConfig::ungrouped()).unwrap();
        let joined = concatenate(Axis(1), &[lb1.view(), input.center_feature.view().insert_axis(Axis(0))]).unwrap();
        let (row, _) = bn_forward(linear_forward(joined.view(), &p.lb2_weight, &p.lb2_bias).view(), &p.lb2_bn);
        assert_eq!(out.aggregated.row(0), row.row(0).mapv(|v| v.max(0.0)));
        assert!(out.cache.argmax().iter().flatten().all(|&a| a == 0));
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs: Vec<_> = (0..3).map(|_| random_input(&mut rng, 5, 3)).collect();
        let p = PagwnParams::init(3, 1);
        let cfg = PagwnConfig::grouped(2);
        let out = pagwn_forward_batch(&inputs, &p, &cfg).unwrap();
        let g = pagwn_backward(&p, &out.cache, Array2::zeros((3, 6)).view()).unwrap();
        let all = g
            .lb1_weight
            .iter()
            .chain(&g.lb2_weight)
            .chain(&g.lb1_gamma)
            .chain(&g.lb2_beta)
            .chain(g.inputs.iter().flat_map(|i| i.neighbor_features.iter()));
        assert!(all.into_iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_cache_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let input = random_input(&mut rng, 5, 2);
        let mut p = PagwnParams::init(2, 1);
        let out = pagwn_forward(&input, &p, &PagwnConfig::grouped(2)).unwrap();
        p.lb2_weight[[0, 0]] += 0.1;
        let up = Array2::ones((1, 4));
        assert!(matches!(pagwn_backward(&p, &out.cache, up.view()), Err(Error::StaleCache)));
        // Running statistics do not feed a training-mode forward.
        p.lb2_weight[[0, 0]] -= 0.1;
        out.update_running_stats(&mut p);
        assert!(pagwn_backward(&p, &out.cache, up.view()).is_ok());
    }

    #[test]
    fn inference_forward_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = random_input(&mut rng, 8, 4);
        let mut p = PagwnParams::init(4, 2);
        p.set_mode(BnMode::Inference);
        let a = pagwn_forward(&input, &p, &PagwnConfig::default()).unwrap();
        let b = pagwn_forward(&input, &p, &PagwnConfig::default()).unwrap();
        assert_eq!(a.aggregated, b.aggregated);
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let input = random_input(&mut rng, 5, 3);
        let p = PagwnParams::init(2, 0);
        assert!(matches!(
            pagwn_forward(&input, &p, &PagwnConfig::default()),
            Err(Error::ShapeMismatch(_))
        ));
        let p = PagwnParams::init(3, 0);
        assert!(matches!(
            pagwn_forward(&input, &p, &PagwnConfig::grouped(5)),
            Err(Error::BadSplit { .. })
        ));
        assert!(PagwnInput::new([0.0; 3], Array1::zeros(2), Array2::zeros((4, 3)), Array2::zeros((3, 2))).is_err());
    }
}
