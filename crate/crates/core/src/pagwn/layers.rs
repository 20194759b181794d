//! Linear and batch-norm layers over row-major `rows x channels` batches.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::types::{BatchNormState, BnMode};

/// `x * w + b` with `w` stored `in x out`.
pub(crate) fn linear_forward(x: ArrayView2<'_, f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Returns `(dx, dw, db)`.
pub(crate) fn linear_backward(
    x: ArrayView2<'_, f64>,
    w: &Array2<f64>,
    dy: ArrayView2<'_, f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let dx = dy.dot(&w.t());
    let dw = x.t().dot(&dy);
    let db = dy.sum_axis(Axis(0));
    (dx, dw, db)
}

#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub mean: Array1<f64>,
    /// Biased batch variance (training) or running variance (inference).
    pub var: Array1<f64>,
    pub mode: BnMode,
}

pub(crate) fn bn_forward(x: ArrayView2<'_, f64>, bn: &BatchNormState) -> (Array2<f64>, BnCache) {
    let (mean, var) = match bn.mode {
        BnMode::Training => {
            let rows = x.nrows() as f64;
            let mean = x.sum_axis(Axis(0)) / rows;
            let centered = &x - &mean;
            let var = (&centered * &centered).sum_axis(Axis(0)) / rows;
            (mean, var)
        }
        BnMode::Inference => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std = var.mapv(|v| 1.0 / (v + bn.eps).sqrt());
    let xhat = (&x - &mean) * &inv_std;
    let y = &xhat * &bn.gamma + &bn.beta;
    (
        y,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
            mode: bn.mode,
        },
    )
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn bn_backward(
    dy: ArrayView2<'_, f64>,
    cache: &BnCache,
    gamma: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dgamma = (&dy * &cache.xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let dxhat = &dy * gamma;
    let dx = match cache.mode {
        BnMode::Inference => dxhat * &cache.inv_std,
        BnMode::Training => {
            let rows = dy.nrows() as f64;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
            let inner = dxhat * rows - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat;
            inner * &(&cache.inv_std / rows)
        }
    };
    (dx, dgamma, dbeta)
}
