//! Shared-MLP + maxpool aggregators over ball-query or KNN neighborhoods.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{bn_backward, bn_forward, linear_backward, linear_forward, BnCache};
use crate::error::{Error, Result};
use crate::spatial::{BallQuery, KdIndex};
use crate::types::{uniform_weight, BatchNormState, BnMode, Point3, PointCloud};

/// Linear -> batch norm -> ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub bn: BatchNormState,
}

/// A stack of [`MlpLayer`]s. An empty stack is the identity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MlpParams {
    pub layers: Vec<MlpLayer>,
}

impl MlpParams {
    /// Seeded stack with channel widths `dims[0] -> dims[1] -> ...`.
    pub fn init(dims: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(dims, &mut rng)
    }

    pub(crate) fn init_with(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = dims
            .windows(2)
            .map(|w| MlpLayer {
                weight: uniform_weight(rng, w[0], w[1]),
                bias: Array1::zeros(w[1]),
                bn: BatchNormState::identity(w[1]),
            })
            .collect();
        MlpParams { layers }
    }

    /// One layer with identity weight and inference-mode identity BN
    /// (eps = 0). Acts as ReLU.
    pub fn identity(n: usize) -> Self {
        let mut bn = BatchNormState::identity(n);
        bn.mode = BnMode::Inference;
        bn.eps = 0.0;
        MlpParams {
            layers: vec![MlpLayer {
                weight: Array2::eye(n),
                bias: Array1::zeros(n),
                bn,
            }],
        }
    }

    pub fn set_mode(&mut self, mode: BnMode) {
        self.layers.iter_mut().for_each(|l| l.bn.mode = mode);
    }

    pub fn in_dim(&self) -> Option<usize> {
        self.layers.first().map(|l| l.weight.nrows())
    }

    pub fn out_dim(&self, input: usize) -> usize {
        self.layers.last().map_or(input, |l| l.weight.ncols())
    }

    pub fn validate(&self, input: usize) -> Result<()> {
        let mut width = input;
        for (i, l) in self.layers.iter().enumerate() {
            let (fan_in, fan_out) = l.weight.dim();
            if fan_in != width || l.bias.len() != fan_out || l.bn.channels() != fan_out {
                return Err(Error::shape(format!("MLP layer {i} expects {fan_in} inputs, gets {width}")));
            }
            l.bn.validate()?;
            width = fan_out;
        }
        Ok(())
    }

    pub fn sgd_step(&mut self, grads: &MlpGradients, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.weight.scaled_add(-lr, &g.weight);
            l.bias.scaled_add(-lr, &g.bias);
            l.bn.gamma.scaled_add(-lr, &g.gamma);
            l.bn.beta.scaled_add(-lr, &g.beta);
        }
    }
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    bn: BnCache,
    post_bn: Array2<f64>,
}

/// State kept by [`mlp_maxpool_forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpPoolCache {
    offsets: Vec<usize>,
    layers: Vec<LayerCache>,
    argmax: Vec<Option<Vec<usize>>>,
}

impl MlpPoolCache {
    /// Folds training-mode batch statistics into `mlp`'s running estimates.
    pub fn update_running_stats(&self, mlp: &mut MlpParams) {
        let rows = *self.offsets.last().unwrap();
        for (l, c) in mlp.layers.iter_mut().zip(&self.layers) {
            if c.bn.mode == BnMode::Training {
                l.bn.absorb(&c.bn.mean, &c.bn.var, rows);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayerGradient {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<MlpLayerGradient>,
    /// Gradient for every row of every group, same layout as the input.
    pub groups: Vec<Array2<f64>>,
}

/// `MaxPool{ MLP(rows) }` per group; all groups share one BN batch.
///
/// Groups with no rows produce a zero vector.
pub fn mlp_maxpool_forward(groups: &[Array2<f64>], mlp: &MlpParams) -> Result<(Array2<f64>, MlpPoolCache)> {
    let width = groups
        .iter()
        .find(|g| g.nrows() > 0)
        .map(|g| g.ncols())
        .or_else(|| mlp.in_dim())
        .ok_or_else(|| Error::shape("no rows to aggregate"))?;
    mlp.validate(width)?;
    let mut offsets = vec![0];
    for g in groups {
        if g.nrows() > 0 && g.ncols() != width {
            return Err(Error::shape("groups disagree on channel count"));
        }
        offsets.push(offsets.last().unwrap() + g.nrows());
    }
    let views: Vec<ArrayView2<'_, f64>> = groups.iter().filter(|g| g.nrows() > 0).map(|g| g.view()).collect();
    let mut x = if views.is_empty() {
        Array2::zeros((0, width))
    } else {
        ndarray::concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?
    };

    let mut layers = Vec::with_capacity(mlp.layers.len());
    for l in &mlp.layers {
        let a = linear_forward(x.view(), &l.weight, &l.bias);
        let (y, bn) = if a.nrows() > 0 {
            bn_forward(a.view(), &l.bn)
        } else {
            let c = l.weight.ncols();
            let empty = BnCache {
                xhat: Array2::zeros((0, c)),
                inv_std: Array1::zeros(c),
                mean: l.bn.running_mean.clone(),
                var: l.bn.running_var.clone(),
                mode: BnMode::Inference,
            };
            (Array2::zeros((0, c)), empty)
        };
        let out = y.mapv(|v| v.max(0.0));
        layers.push(LayerCache {
            input: x,
            bn,
            post_bn: y,
        });
        x = out;
    }

    let out_dim = x.ncols();
    let mut pooled = Array2::zeros((groups.len(), out_dim));
    let mut argmax = Vec::with_capacity(groups.len());
    for b in 0..groups.len() {
        let (lo, hi) = (offsets[b], offsets[b + 1]);
        if lo == hi {
            argmax.push(None);
            continue;
        }
        let block = x.slice(s![lo..hi, ..]);
        let mut arg = vec![0; out_dim];
        for ch in 0..out_dim {
            let col = block.column(ch);
            let mut best = 0;
            for j in 1..col.len() {
                if col[j] > col[best] {
                    best = j;
                }
            }
            arg[ch] = best;
            pooled[[b, ch]] = col[best];
        }
        argmax.push(Some(arg));
    }
    Ok((pooled, MlpPoolCache { offsets, layers, argmax }))
}

pub fn mlp_maxpool_backward(mlp: &MlpParams, cache: &MlpPoolCache, upstream: ArrayView2<'_, f64>) -> Result<MlpGradients> {
    let groups = cache.argmax.len();
    let rows = *cache.offsets.last().unwrap();
    let out_dim = cache
        .layers
        .last()
        .map_or_else(|| upstream.ncols(), |l| l.post_bn.ncols());
    if upstream.dim() != (groups, out_dim) {
        return Err(Error::shape(format!(
            "upstream gradient {:?}, expected ({groups}, {out_dim})",
            upstream.dim()
        )));
    }
    let mut dx = Array2::zeros((rows, out_dim));
    for (b, arg) in cache.argmax.iter().enumerate() {
        if let Some(arg) = arg {
            for (ch, &j) in arg.iter().enumerate() {
                dx[[cache.offsets[b] + j, ch]] += upstream[[b, ch]];
            }
        }
    }
    let mut layer_grads = Vec::with_capacity(mlp.layers.len());
    for (l, c) in mlp.layers.iter().zip(&cache.layers).rev() {
        let relu_mask = c.post_bn.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let dy = dx * relu_mask;
        let (da, gamma, beta) = if rows > 0 {
            bn_backward(dy.view(), &c.bn, &l.bn.gamma)
        } else {
            let ch = l.weight.ncols();
            (Array2::zeros((0, ch)), Array1::zeros(ch), Array1::zeros(ch))
        };
        let (dprev, weight, bias) = linear_backward(c.input.view(), &l.weight, da.view());
        layer_grads.push(MlpLayerGradient {
            weight,
            bias,
            gamma,
            beta,
        });
        dx = dprev;
    }
    layer_grads.reverse();
    let group_grads = (0..groups)
        .map(|b| dx.slice(s![cache.offsets[b]..cache.offsets[b + 1], ..]).to_owned())
        .collect();
    Ok(MlpGradients {
        layers: layer_grads,
        groups: group_grads,
    })
}

/// Aggregated features per sampled point; `empty[i]` marks ball queries that
/// found no neighbor (their row is zero).
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutput {
    pub features: Array2<f64>,
    pub empty: Vec<bool>,
}

fn gather(cloud: &PointCloud, indices: &[usize]) -> Array2<f64> {
    cloud.features().select(Axis(0), indices)
}

/// `MaxPool{ MLP([x_j]) }` over ball-query neighborhoods of the sampled points.
pub fn aggregate_bq_baseline(
    cloud: &PointCloud,
    sampled: &[usize],
    radius: f64,
    k_max: usize,
    mlp: &MlpParams,
) -> Result<BaselineOutput> {
    let centers = sampled
        .iter()
        .map(|&i| {
            cloud
                .coords()
                .get(i)
                .copied()
                .ok_or(Error::InvalidIndex { index: i, len: cloud.len() })
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_bq_at(cloud, &centers, radius, k_max, mlp)
}

/// Ball-query aggregation around arbitrary center coordinates.
pub fn aggregate_bq_at(
    cloud: &PointCloud,
    centers: &[Point3],
    radius: f64,
    k_max: usize,
    mlp: &MlpParams,
) -> Result<BaselineOutput> {
    let index = KdIndex::from_coords(cloud.coords().to_vec())?;
    let mut groups = Vec::with_capacity(centers.len());
    let mut empty = Vec::with_capacity(centers.len());
    for c in centers {
        match index.ball_query(c, radius, k_max)? {
            BallQuery::Region { neighborhood, .. } => {
                groups.push(gather(cloud, neighborhood.indices()));
                empty.push(false);
            }
            BallQuery::Empty => {
                groups.push(Array2::zeros((0, cloud.feature_dim())));
                empty.push(true);
            }
        }
    }
    let (features, _) = mlp_maxpool_forward(&groups, mlp)?;
    Ok(BaselineOutput { features, empty })
}

/// `MaxPool{ MLP([x_j]) }` over the K nearest points of each sampled point.
pub fn aggregate_knn_baseline(cloud: &PointCloud, sampled: &[usize], k: usize, mlp: &MlpParams) -> Result<BaselineOutput> {
    let index = KdIndex::from_coords(cloud.coords().to_vec())?;
    let groups = sampled
        .iter()
        .map(|&i| {
            let nb = index.knn_of_point(i, k, false)?;
            Ok(gather(cloud, nb.indices()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (features, _) = mlp_maxpool_forward(&groups, mlp)?;
    Ok(BaselineOutput {
        features,
        empty: vec![false; sampled.len()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cloud() -> PointCloud {
        let coords = (0..10).map(|i| [i as f64, 0.0, 0.0]).collect();
        let feats = (0..10).map(|i| vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0]).collect();
        PointCloud::new(coords, feats, None).unwrap()
    }

    #[test]
    fn identity_single_neighbor() {
        let c = cloud();
        let out = aggregate_bq_baseline(&c, &[4], 0.5, 1, &MlpParams::identity(2)).unwrap();
        assert_eq!(out.features.row(0), c.feature(4));
        let out = aggregate_knn_baseline(&c, &[7], 1, &MlpParams::identity(2)).unwrap();
        assert_eq!(out.features.row(0), c.feature(7));
        let out = aggregate_knn_baseline(&c, &[7], 1, &MlpParams::default()).unwrap();
        assert_eq!(out.features.row(0), c.feature(7));
    }

    #[test]
    fn empty_region_zero_and_flagged() {
        let c = cloud();
        let out = aggregate_bq_at(&c, &[[4.0, 0.0, 0.0], [4.5, 5.0, 0.0]], 0.5, 3, &MlpParams::identity(2)).unwrap();
        assert_eq!(out.empty, vec![false, true]);
        assert_eq!(out.features.row(0), c.feature(4));
        assert_eq!(out.features.row(1).to_vec(), vec![0.0, 0.0]);

        let groups = vec![Array2::zeros((0, 1)), array![[0.2], [0.9]]];
        let (pooled, cache) = mlp_maxpool_forward(&groups, &MlpParams::identity(1)).unwrap();
        assert_eq!(pooled, array![[0.0], [0.9]]);
        let g = mlp_maxpool_backward(&MlpParams::identity(1), &cache, array![[1.0], [1.0]].view()).unwrap();
        assert_eq!(g.groups[0].nrows(), 0);
        assert_eq!(g.groups[1], array![[0.0], [1.0]]);
    }

    #[test]
    fn mlp_backward_matches_differences() {
        let groups = vec![
            array![[0.3, -0.2], [1.1, 0.4], [-0.5, 0.9]],
            array![[0.0, 0.7], [0.8, -1.3]],
        ];
        let mlp = MlpParams::init(&[2, 4, 3], 11);
        let up = array![[0.4, -1.0, 0.3], [1.2, 0.5, -0.7]];
        let loss = |m: &MlpParams, g: &[Array2<f64>]| (mlp_maxpool_forward(g, m).unwrap().0 * &up).sum();
        let (_, cache) = mlp_maxpool_forward(&groups, &mlp).unwrap();
        let grads = mlp_maxpool_backward(&mlp, &cache, up.view()).unwrap();
        let h = 1e-6;
        for li in 0..2 {
            for idx in 0..mlp.layers[li].weight.len() {
                let (r, c) = (idx / mlp.layers[li].weight.ncols(), idx % mlp.layers[li].weight.ncols());
                let mut p = mlp.clone();
                p.layers[li].weight[[r, c]] += h;
                let mut m = mlp.clone();
                m.layers[li].weight[[r, c]] -= h;
                let fd = (loss(&p, &groups) - loss(&m, &groups)) / (2.0 * h);
                assert!((fd - grads.layers[li].weight[[r, c]]).abs() < 1e-6);
            }
        }
        for gi in 0..2 {
            for r in 0..groups[gi].nrows() {
                for c in 0..2 {
                    let mut p = groups.clone();
                    p[gi][[r, c]] += h;
                    let mut m = groups.clone();
                    m[gi][[r, c]] -= h;
                    let fd = (loss(&mlp, &p) - loss(&mlp, &m)) / (2.0 * h);
                    assert!((fd - grads.groups[gi][[r, c]]).abs() < 1e-6);
                }
            }
        }
    }
}
