//! Conversions between block parameters / inputs and named tensors.

use ndarray::{s, Array1, Array2, Array3, Axis};

use super::baseline::{MlpLayer, MlpParams};
use super::block::PagwnInput;
use crate::error::{Error, Result};
use crate::io::{bundle_get, Tensor};
use crate::types::{BatchNormState, BnMode, PagwnParams, BN_EPS, BN_MOMENTUM};

fn bn_tensors(prefix: &str, bn: &BatchNormState, out: &mut Vec<(String, Tensor)>) {
    out.push((format!("{prefix}_gamma"), Tensor::from_array1(&bn.gamma)));
    out.push((format!("{prefix}_beta"), Tensor::from_array1(&bn.beta)));
    out.push((format!("{prefix}_running_mean"), Tensor::from_array1(&bn.running_mean)));
    out.push((format!("{prefix}_running_var"), Tensor::from_array1(&bn.running_var)));
}

fn bn_from(bundle: &[(String, Tensor)], prefix: &str) -> Result<BatchNormState> {
    let get = |s: &str| bundle_get(bundle, &format!("{prefix}_{s}"))?.to_array1();
    let bn = BatchNormState {
        gamma: get("gamma")?,
        beta: get("beta")?,
        running_mean: get("running_mean")?,
        running_var: get("running_var")?,
        momentum: BN_MOMENTUM,
        eps: BN_EPS,
        mode: BnMode::Inference,
    };
    bn.validate()?;
    Ok(bn)
}

/// Tensors `{prefix}lb1_weight`, `{prefix}lb1_bias`, `{prefix}lb1_gamma`, ...
pub fn pagwn_params_to_tensors(prefix: &str, p: &PagwnParams) -> Vec<(String, Tensor)> {
    let mut out = vec![
        (format!("{prefix}lb1_weight"), Tensor::from_array2(&p.lb1_weight)),
        (format!("{prefix}lb1_bias"), Tensor::from_array1(&p.lb1_bias)),
    ];
    bn_tensors(&format!("{prefix}lb1"), &p.lb1_bn, &mut out);
    out.push((format!("{prefix}lb2_weight"), Tensor::from_array2(&p.lb2_weight)));
    out.push((format!("{prefix}lb2_bias"), Tensor::from_array1(&p.lb2_bias)));
    bn_tensors(&format!("{prefix}lb2"), &p.lb2_bn, &mut out);
    out
}

/// Inverse of [`pagwn_params_to_tensors`]; batch norm comes back in
/// inference mode.
pub fn pagwn_params_from_tensors(bundle: &[(String, Tensor)], prefix: &str) -> Result<PagwnParams> {
    let p = PagwnParams {
        lb1_weight: bundle_get(bundle, &format!("{prefix}lb1_weight"))?.to_array2()?,
        lb1_bias: bundle_get(bundle, &format!("{prefix}lb1_bias"))?.to_array1()?,
        lb1_bn: bn_from(bundle, &format!("{prefix}lb1"))?,
        lb2_weight: bundle_get(bundle, &format!("{prefix}lb2_weight"))?.to_array2()?,
        lb2_bias: bundle_get(bundle, &format!("{prefix}lb2_bias"))?.to_array1()?,
        lb2_bn: bn_from(bundle, &format!("{prefix}lb2"))?,
    };
    p.validate()?;
    Ok(p)
}

pub fn mlp_params_to_tensors(prefix: &str, mlp: &MlpParams) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for (i, l) in mlp.layers.iter().enumerate() {
        out.push((format!("{prefix}layer{i}_weight"), Tensor::from_array2(&l.weight)));
        out.push((format!("{prefix}layer{i}_bias"), Tensor::from_array1(&l.bias)));
        bn_tensors(&format!("{prefix}layer{i}"), &l.bn, &mut out);
    }
    out
}

pub fn mlp_params_from_tensors(bundle: &[(String, Tensor)], prefix: &str) -> Result<MlpParams> {
    let mut layers = Vec::new();
    for i in 0.. {
        let name = format!("{prefix}layer{i}_weight");
        if !bundle.iter().any(|(n, _)| *n == name) {
            break;
        }
        layers.push(MlpLayer {
            weight: bundle_get(bundle, &name)?.to_array2()?,
            bias: bundle_get(bundle, &format!("{prefix}layer{i}_bias"))?.to_array1()?,
            bn: bn_from(bundle, &format!("{prefix}layer{i}"))?,
        });
    }
    Ok(MlpParams { layers })
}

/// Stacks equal-K inputs into `center_coords [B,3]`, `center_features [B,n]`,
/// `neighbor_coords [B,K,3]` and `neighbor_features [B,K,n]`.
pub fn inputs_to_tensors(inputs: &[PagwnInput]) -> Result<Vec<(String, Tensor)>> {
    let first = inputs.first().ok_or_else(|| Error::shape("no inputs to serialize"))?;
    let (k, n) = (first.k(), first.n());
    if inputs.iter().any(|i| i.k() != k || i.n() != n) {
        return Err(Error::shape("serialized inputs must share K and n"));
    }
    let b = inputs.len();
    let mut cc = Array2::zeros((b, 3));
    let mut cf = Array2::zeros((b, n));
    let mut nc = Array3::zeros((b, k, 3));
    let mut nf = Array3::zeros((b, k, n));
    for (i, inp) in inputs.iter().enumerate() {
        cc.row_mut(i).assign(&Array1::from(inp.center_coord.to_vec()));
        cf.row_mut(i).assign(&inp.center_feature);
        nc.index_axis_mut(Axis(0), i).assign(&inp.neighbor_coords);
        nf.index_axis_mut(Axis(0), i).assign(&inp.neighbor_features);
    }
    Ok(vec![
        ("center_coords".into(), Tensor::from_array2(&cc)),
        ("center_features".into(), Tensor::from_array2(&cf)),
        ("neighbor_coords".into(), Tensor::from_arrayd(&nc.into_dyn())),
        ("neighbor_features".into(), Tensor::from_arrayd(&nf.into_dyn())),
    ])
}

pub fn inputs_from_tensors(bundle: &[(String, Tensor)]) -> Result<Vec<PagwnInput>> {
    let cc = bundle_get(bundle, "center_coords")?.to_array2()?;
    let cf = bundle_get(bundle, "center_features")?.to_array2()?;
    let nc = bundle_get(bundle, "neighbor_coords")?.to_arrayd();
    let nf = bundle_get(bundle, "neighbor_features")?.to_arrayd();
    let b = cc.nrows();
    let ok = cc.ncols() == 3
        && cf.nrows() == b
        && nc.ndim() == 3
        && nf.ndim() == 3
        && nc.shape()[0] == b
        && nf.shape()[0] == b
        && nc.shape()[2] == 3
        && nc.shape()[1] == nf.shape()[1]
        && nf.shape()[2] == cf.ncols();
    if !ok {
        return Err(Error::shape("input bundle tensors have inconsistent shapes"));
    }
    (0..b)
        .map(|i| {
            PagwnInput::new(
                [cc[[i, 0]], cc[[i, 1]], cc[[i, 2]]],
                cf.row(i).to_owned(),
                nc.slice(s![i, .., ..]).to_owned(),
                nf.slice(s![i, .., ..]).to_owned(),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_round_trip() {
        let mut p = PagwnParams::init(3, 4);
        p.lb2_bn.running_var[1] = 2.5;
        let t = pagwn_params_to_tensors("stage0.", &p);
        let mut back = pagwn_params_from_tensors(&t, "stage0.").unwrap();
        back.set_mode(BnMode::Training);
        assert_eq!(back, p);

        let mlp = MlpParams::init(&[3, 6, 6], 2);
        let t = mlp_params_to_tensors("s1.", &mlp);
        let mut back = mlp_params_from_tensors(&t, "s1.").unwrap();
        back.set_mode(BnMode::Training);
        assert_eq!(back, mlp);
    }
}
