//! Window normalization.
//!
//! A window holds one center vector and its K neighbor rows. Deviations are
//! taken from the center (not from the window mean) and scaled by a single
//! scalar spread over all rows and channels:
//!
//! ```text
//! sigma = sqrt( sum_j |x_j - c|^2 / (K*d - 1) )
//! x_hat_j = (x_j - c) / (sigma + eps)
//! ```
//!
//! The grouped variant splits the rows at `m` (nearest `m` rows first) and
//! gives each group its own sigma.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spatial::KdIndex;
use crate::types::{Neighborhood, PointCloud, WindowStats};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_SPLIT: usize = 3;

/// A center vector and its neighbor rows, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    center: Array1<f64>,
    neighbors: Array2<f64>,
}

impl Window {
    pub fn new(center: Array1<f64>, neighbors: Array2<f64>) -> Result<Self> {
        let d = center.len();
        if d == 0 {
            return Err(Error::NoFeatures);
        }
        if neighbors.nrows() == 0 {
            return Err(Error::KOutOfRange { k: 0, available: 0 });
        }
        if neighbors.ncols() != d {
            return Err(Error::shape(format!(
                "center has {d} channels, neighbors have {}",
                neighbors.ncols()
            )));
        }
        if !center.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { index: 0 });
        }
        if let Some((row, _)) = neighbors
            .rows()
            .into_iter()
            .enumerate()
            .find(|(_, r)| !r.iter().all(|v| v.is_finite()))
        {
            return Err(Error::NonFinite { index: row });
        }
        Ok(Window { center, neighbors })
    }

    /// Window over `nb` in `cloud`. With `use_coords` rows are `[c, x]`
    /// (d = n + 3); otherwise features only.
    pub fn from_cloud(cloud: &PointCloud, center: usize, nb: &Neighborhood, use_coords: bool) -> Result<Self> {
        let row = |i: usize| -> Array1<f64> {
            if use_coords {
                cloud.joint_row(i)
            } else {
                cloud.feature(i).to_owned()
            }
        };
        if center >= cloud.len() {
            return Err(Error::InvalidIndex {
                index: center,
                len: cloud.len(),
            });
        }
        let c = row(center);
        let mut neighbors = Array2::zeros((nb.k(), c.len()));
        for (j, &i) in nb.indices().iter().enumerate() {
            if i >= cloud.len() {
                return Err(Error::InvalidIndex {
                    index: i,
                    len: cloud.len(),
                });
            }
            neighbors.row_mut(j).assign(&row(i));
        }
        Window::new(c, neighbors)
    }

    pub fn center(&self) -> ArrayView1<'_, f64> {
        self.center.view()
    }

    pub fn neighbors(&self) -> ArrayView2<'_, f64> {
        self.neighbors.view()
    }

    pub fn k(&self) -> usize {
        self.neighbors.nrows()
    }

    pub fn d(&self) -> usize {
        self.center.len()
    }
}

/// Spread of one normalized window: a single group or a texture/spatial split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormStats {
    Single(WindowStats),
    Grouped(WindowStats, WindowStats),
}

impl NormStats {
    /// Stats governing row `j`.
    pub fn for_row(&self, j: usize) -> &WindowStats {
        match self {
            NormStats::Single(s) => s,
            NormStats::Grouped(a, b) => {
                if j < a.m().expect("grouped stats carry m") {
                    a
                } else {
                    b
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWindow {
    values: Array2<f64>,
    stats: NormStats,
}

impl NormalizedWindow {
    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidEpsilon(eps));
    }
    Ok(())
}

fn group_sum_sq(window: &Window, rows: Range<usize>) -> f64 {
    let c = &window.center;
    window
        .neighbors
        .slice(ndarray::s![rows, ..])
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(c).map(|(x, c)| (x - c) * (x - c)).sum::<f64>())
        .sum()
}

/// Single scalar spread of the window about its center.
pub fn window_sigma(window: &Window) -> Result<f64> {
    let count = window.k() * window.d();
    if count < 2 {
        return Err(Error::DegenerateWindow { count });
    }
    Ok((group_sum_sq(window, 0..window.k()) / (count - 1) as f64).sqrt())
}

fn group_sigma(window: &Window, rows: Range<usize>, group: usize) -> Result<f64> {
    let count = rows.len() * window.d();
    if count < 2 {
        return Err(Error::DegenerateGroup { group, count });
    }
    Ok((group_sum_sq(window, rows) / (count - 1) as f64).sqrt())
}

fn scale_rows(window: &Window, out: &mut Array2<f64>, rows: Range<usize>, stats: &WindowStats) {
    let lambda = stats.lambda();
    for j in rows {
        let mut o = out.row_mut(j);
        for ((o, x), c) in o.iter_mut().zip(window.neighbors.row(j)).zip(&window.center) {
            *o = (x - c) * lambda;
        }
    }
}

/// Subtracts the center from every row and divides by `sigma + epsilon`.
pub fn window_normalize(window: &Window, epsilon: f64) -> Result<NormalizedWindow> {
    check_epsilon(epsilon)?;
    let sigma = window_sigma(window)?;
    let stats = WindowStats::new(sigma, epsilon, None)?;
    let mut values = Array2::zeros(window.neighbors.raw_dim());
    scale_rows(window, &mut values, 0..window.k(), &stats);
    Ok(NormalizedWindow {
        values,
        stats: NormStats::Single(stats),
    })
}

/// Normalizes rows `0..m` and `m..K` with separate spreads.
pub fn group_wise_window_normalize(window: &Window, m: usize, epsilon: f64) -> Result<NormalizedWindow> {
    check_epsilon(epsilon)?;
    let k = window.k();
    if m == 0 || m >= k {
        return Err(Error::BadSplit { m, k });
    }
    let s1 = WindowStats::new(group_sigma(window, 0..m, 1)?, epsilon, Some(m))?;
    let s2 = WindowStats::new(group_sigma(window, m..k, 2)?, epsilon, Some(m))?;
    let mut values = Array2::zeros(window.neighbors.raw_dim());
    scale_rows(window, &mut values, 0..m, &s1);
    scale_rows(window, &mut values, m..k, &s2);
    Ok(NormalizedWindow {
        values,
        stats: NormStats::Grouped(s1, s2),
    })
}

/// Rectified rows `x* = x_hat + center`.
pub fn calibrate(normalized: &NormalizedWindow, center: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
    if center.len() != normalized.values.ncols() {
        return Err(Error::shape(format!(
            "center has {} channels, normalized window has {}",
            center.len(),
            normalized.values.ncols()
        )));
    }
    Ok(&normalized.values + &center.insert_axis(Axis(0)))
}

/// Gradient of a (possibly grouped) window normalization.
///
/// Given `dL/dx_hat` for every row, returns `(dL/dcenter, dL/dneighbors)`.
/// The sigma path is included; a group with sigma = 0 contributes no sigma
/// gradient.
pub fn normalize_backward(
    window: &Window,
    normalized: &NormalizedWindow,
    grad: ArrayView2<'_, f64>,
) -> Result<(Array1<f64>, Array2<f64>)> {
    if grad.dim() != window.neighbors.dim() {
        return Err(Error::shape("gradient shape differs from window"));
    }
    let k = window.k();
    let d = window.d();
    let groups: Vec<(Range<usize>, WindowStats)> = match normalized.stats {
        NormStats::Single(s) => vec![(0..k, s)],
        NormStats::Grouped(a, b) => {
            let m = a.m().expect("grouped stats carry m");
            vec![(0..m, a), (m..k, b)]
        }
    };
    let mut g_nb = Array2::zeros((k, d));
    for (rows, stats) in groups {
        let lambda = stats.lambda();
        let sigma = stats.sigma();
        let denom = (rows.len() * d - 1) as f64;
        // dL/dsigma = -lambda^2 * sum_j <g_j, dev_j>
        let mut g_dot_dev = 0.0;
        for j in rows.clone() {
            for ch in 0..d {
                g_dot_dev += grad[[j, ch]] * (window.neighbors[[j, ch]] - window.center[ch]);
            }
        }
        let d_sigma = -lambda * lambda * g_dot_dev;
        // dsigma/ddev_j = dev_j / (sigma * denom)
        let coef = if sigma > 0.0 { d_sigma / (sigma * denom) } else { 0.0 };
        for j in rows {
            for ch in 0..d {
                let dev = window.neighbors[[j, ch]] - window.center[ch];
                g_nb[[j, ch]] = grad[[j, ch]] * lambda + coef * dev;
            }
        }
    }
    let g_center = -g_nb.sum_axis(Axis(0));
    Ok((g_center, g_nb))
}

/// Options for [`sigma_map_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaMapOptions {
    /// Build windows on `[coords, features]` rather than features alone.
    pub use_coords: bool,
    /// Drop each center from its own KNN window.
    pub exclude_self: bool,
}

impl Default for SigmaMapOptions {
    fn default() -> Self {
        SigmaMapOptions {
            use_coords: true,
            exclude_self: false,
        }
    }
}

/// Window sigma around every point of the cloud.
pub fn window_sigmas(cloud: &PointCloud, k: usize, opts: SigmaMapOptions) -> Result<Vec<f64>> {
    let index = KdIndex::from_coords(cloud.coords().to_vec())?;
    let available = cloud.len() - usize::from(opts.exclude_self);
    if k == 0 || k > available {
        return Err(Error::KOutOfRange { k, available });
    }
    (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let nb = index.knn_of_point(i, k, opts.exclude_self)?;
            let w = Window::from_cloud(cloud, i, &nb, opts.use_coords)?;
            window_sigma(&w)
        })
        .collect()
}

/// Centers whose window sigma exceeds `threshold`, ascending.
pub fn sigma_map(cloud: &PointCloud, k: usize, threshold: f64) -> Result<Vec<usize>> {
    sigma_map_with(cloud, k, threshold, SigmaMapOptions::default())
}

pub fn sigma_map_with(cloud: &PointCloud, k: usize, threshold: f64, opts: SigmaMapOptions) -> Result<Vec<usize>> {
    let sigmas = window_sigmas(cloud, k, opts)?;
    Ok(sigmas
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > threshold)
        .map(|(i, _)| i)
        .collect())
}
