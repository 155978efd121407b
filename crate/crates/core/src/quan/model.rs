//! Forward pass with cached intermediates and the matching reverse pass.

use ndarray::{s, Axis};

use super::layers::{layer_norm, layer_norm_backward, sab_backward, sab_forward, sigmoid, softmax_rows, softmax_rows_backward, LnCache, Mixing, SabCache};
use super::params::{Mat, ModelDims, ModelParams};
use super::Ablation;
use crate::circuits::TrajectoryRecord;
use crate::rng::StreamRng;
use crate::{Error, Result};

/// Code `2·b_first + b_second` of every cluster, `L × L` row-major: row `τ`
/// holds the `L/2` clusters of slice `2τ` followed by those of slice `2τ + 1`.
pub fn embed_codes(record: &TrajectoryRecord) -> Result<Vec<u8>> {
    let l = record.l;
    if l % 2 != 0 || record.bits.len() != 2 * l * l {
        return Err(Error::invalid(format!("record of shape L = {l} with {} bits cannot be embedded", record.bits.len())));
    }
    let mut codes = Vec::with_capacity(l * l);
    for t in 0..2 * l {
        let slice = record.time_slice(t);
        let offset = t % 2;
        for c in 0..l / 2 {
            let a = 2 * c + offset;
            let b = (a + 1) % l;
            codes.push(2 * slice[a] + slice[b]);
        }
    }
    Ok(codes)
}

/// Embedded record, shape `(L, n_e·L)`.
pub fn embed(record: &TrajectoryRecord, params: &ModelParams) -> Result<Mat> {
    check_record(record, &params.dims)?;
    Ok(embed_from_codes(&embed_codes(record)?, params))
}

fn embed_from_codes(codes: &[u8], params: &ModelParams) -> Mat {
    let ModelDims { l, n_e, .. } = params.dims;
    let mut x = Mat::zeros((l, n_e * l));
    for (i, &code) in codes.iter().enumerate() {
        let (tau, c) = (i / l, i % l);
        x.slice_mut(s![tau, c * n_e..(c + 1) * n_e]).assign(&params.embed.row(code as usize));
    }
    x
}

fn check_record(record: &TrajectoryRecord, dims: &ModelDims) -> Result<()> {
    if record.l != dims.l {
        return Err(Error::Metadata(format!("record has L = {}, model expects L = {}", record.l, dims.l)));
    }
    Ok(())
}

fn temporal_mixing(ablation: Ablation) -> Mixing {
    match ablation {
        Ablation::NoAttention => Mixing::Mean,
        _ => Mixing::Attention,
    }
}

#[derive(Debug, Clone)]
struct MemberCache {
    codes: Vec<u8>,
    sabs: Vec<SabCache>,
    xs: Mat,
    p: Mat,
    ln: LnCache,
    gn: Mat,
}

fn temporal_forward(params: &ModelParams, codes: Vec<u8>, ablation: Ablation, mut dropout: Option<(f64, &mut StreamRng)>) -> (Mat, MemberCache) {
    let scale = 1.0 / (params.dims.d_h as f64).sqrt();
    let mut x = embed_from_codes(&codes, params);
    let mut sabs = Vec::with_capacity(params.temporal.len());
    for layer in &params.temporal {
        let drop = dropout.as_mut().map(|(p, rng)| (*p, &mut **rng));
        let (out, cache) = sab_forward(layer, &x, scale, temporal_mixing(ablation), drop);
        sabs.push(cache);
        x = out;
    }
    let xs = x.mapv(sigmoid);
    let p = xs.dot(&params.t_ff.t());
    let (gn, ln) = layer_norm(&p.mapv(|v| v.max(0.0)), &params.t_ln_g, &params.t_ln_b);
    let y = gn.dot(&params.w_t.t()) + params.b_t[[0, 0]];
    (y.into_shape(params.dims.l).expect("column").insert_axis(Axis(0)), MemberCache { codes, sabs, xs, p, ln, gn })
}

fn temporal_backward(params: &ModelParams, g: &mut ModelParams, c: &MemberCache, dy: &Mat) {
    // dy is 1 × L; one readout per new slice
    let dyc = dy.t();
    g.w_t += &dyc.t().dot(&c.gn);
    g.b_t[[0, 0]] += dy.sum();
    let dgn = dyc.dot(&params.w_t);
    let mut dp = layer_norm_backward(&dgn, &params.t_ln_g, &c.ln, &mut g.t_ln_g, &mut g.t_ln_b);
    dp.zip_mut_with(&c.p, |d, &v| {
        if v <= 0.0 {
            *d = 0.0
        }
    });
    g.t_ff += &dp.t().dot(&c.xs);
    let mut dx = dp.dot(&params.t_ff);
    dx.zip_mut_with(&c.xs, |d, &s| *d *= s * (1.0 - s));
    for (i, cache) in c.sabs.iter().enumerate().rev() {
        dx = sab_backward(&params.temporal[i], &mut g.temporal[i], cache, &dx);
    }
    let n_e = params.dims.n_e;
    let l = params.dims.l;
    for (i, &code) in c.codes.iter().enumerate() {
        let (tau, cl) = (i / l, i % l);
        let mut row = g.embed.row_mut(code as usize);
        row += &dx.slice(s![tau, cl * n_e..(cl + 1) * n_e]);
    }
}

/// Temporal-block output of one record: one value per new slice.
pub fn temporal_output(params: &ModelParams, record: &TrajectoryRecord, ablation: Ablation) -> Result<Vec<f64>> {
    check_record(record, &params.dims)?;
    let (y, _) = temporal_forward(params, embed_codes(record)?, ablation, None);
    Ok(y.into_raw_vec())
}

#[derive(Debug, Clone)]
struct PabCache {
    z: Mat,
    zk: Mat,
    zv: Mat,
    attn: Mat,
    mixing: Mixing,
    ln1: LnCache,
    p1: Mat,
    pre: Mat,
    ln2: LnCache,
    r: Mat,
}

fn pab_forward(params: &ModelParams, z: &Mat, mixing: Mixing) -> (f64, PabCache) {
    let l = params.dims.l as f64;
    let zk = z.dot(&params.k_p.t());
    let zv = z.dot(&params.v_p.t());
    let attn = match mixing {
        Mixing::Attention => softmax_rows(&(params.seed.dot(&zk.t()) / l.sqrt())),
        Mixing::Mean => Mat::from_elem((1, z.nrows()), 1.0 / z.nrows() as f64),
    };
    let p = &params.seed + &attn.dot(&zv);
    let (p1, ln1) = layer_norm(&p, &params.p_ln1_g, &params.p_ln1_b);
    let pre = p1.dot(&params.f_p.t());
    let (r, ln2) = layer_norm(&(&p1 + &pre.mapv(|v| v.max(0.0))), &params.p_ln2_g, &params.p_ln2_b);
    let logit = r.dot(&params.w_p.t())[[0, 0]] + params.b_p[[0, 0]];
    (logit, PabCache { z: z.clone(), zk, zv, attn, mixing, ln1, p1, pre, ln2, r })
}

fn pab_backward(params: &ModelParams, g: &mut ModelParams, c: &PabCache, dlogit: f64) -> Mat {
    let l = params.dims.l as f64;
    g.b_p[[0, 0]] += dlogit;
    g.w_p.scaled_add(dlogit, &c.r);
    let dr = &params.w_p * dlogit;
    let dq = layer_norm_backward(&dr, &params.p_ln2_g, &c.ln2, &mut g.p_ln2_g, &mut g.p_ln2_b);
    let mut dpre = dq.clone();
    dpre.zip_mut_with(&c.pre, |d, &v| {
        if v <= 0.0 {
            *d = 0.0
        }
    });
    g.f_p += &dpre.t().dot(&c.p1);
    let dp1 = &dq + &dpre.dot(&params.f_p);
    let dp = layer_norm_backward(&dp1, &params.p_ln1_g, &c.ln1, &mut g.p_ln1_g, &mut g.p_ln1_b);
    g.seed += &dp;
    let dzv = c.attn.t().dot(&dp);
    let mut dz = dzv.dot(&params.v_p);
    g.v_p += &dzv.t().dot(&c.z);
    if c.mixing == Mixing::Attention {
        let da = dp.dot(&c.zv.t());
        let dsc = softmax_rows_backward(&c.attn, &da) / l.sqrt();
        g.seed += &dsc.dot(&c.zk);
        let dzk = dsc.t().dot(&params.seed);
        g.k_p += &dzk.t().dot(&c.z);
        dz += &dzk.dot(&params.k_p);
    }
    dz
}

/// Everything the reverse pass needs from one forward evaluation of a set.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Predicted probability of label 1.
    pub y: f64,
    pub logit: f64,
    /// Temporal-block outputs, `N × L`.
    pub temporal: Mat,
    /// Input of the pooling block, `N × L`.
    pub z: Mat,
    ablation: Ablation,
    members: Vec<MemberCache>,
    inter: Vec<SabCache>,
    pab: PabCache,
}

impl ForwardPass {
    /// Every attention matrix computed (before dropout): temporal layers per
    /// member, inter-trajectory layers, then the pooling weights.
    pub fn attention_matrices(&self) -> Vec<&Mat> {
        let mut out: Vec<&Mat> = self.members.iter().flat_map(|m| m.sabs.iter().map(|c| &c.attn)).collect();
        out.extend(self.inter.iter().map(|c| &c.attn));
        out.push(&self.pab.attn);
        out
    }

    /// Inter-trajectory attention weights of each layer, `N × N`.
    pub fn inter_attention(&self) -> Vec<&Mat> {
        self.inter.iter().map(|c| &c.attn).collect()
    }
}

/// Runs the full model on a set. With `dropout = Some((p_d, rng))` the
/// self-attention weights are masked as in training.
pub fn forward(params: &ModelParams, records: &[TrajectoryRecord], ablation: Ablation, mut dropout: Option<(f64, &mut StreamRng)>) -> Result<ForwardPass> {
    if records.is_empty() {
        return Err(Error::invalid("empty set"));
    }
    let l = params.dims.l;
    let mut temporal = Mat::zeros((records.len(), l));
    let mut members = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        check_record(r, &params.dims)?;
        let drop = dropout.as_mut().map(|(p, rng)| (*p, &mut **rng));
        let (y, cache) = temporal_forward(params, embed_codes(r)?, ablation, drop);
        temporal.row_mut(i).assign(&y.row(0));
        members.push(cache);
    }
    let mut inter = Vec::new();
    let z = if ablation == Ablation::Full {
        let scale = 1.0 / (l as f64).sqrt();
        let mut x = temporal.clone();
        for layer in &params.inter {
            let drop = dropout.as_mut().map(|(p, rng)| (*p, &mut **rng));
            let (out, cache) = sab_forward(layer, &x, scale, Mixing::Attention, drop);
            inter.push(cache);
            x = out;
        }
        x.mapv(sigmoid)
    } else {
        temporal.clone()
    };
    let (logit, pab) = pab_forward(params, &z, temporal_mixing(ablation));
    Ok(ForwardPass { y: sigmoid(logit), logit, temporal, z, ablation, members, inter, pab })
}

/// Eval-mode prediction.
pub fn predict(params: &ModelParams, records: &[TrajectoryRecord], ablation: Ablation) -> Result<f64> {
    Ok(forward(params, records, ablation, None)?.y)
}

/// Gradients of the binary cross-entropy of `pass` against `label`.
pub fn backward(params: &ModelParams, pass: &ForwardPass, label: u8) -> ModelParams {
    let mut g = params.zeros_like();
    backward_into(params, pass, label, &mut g);
    g
}

/// Like [`backward`], accumulating into `g`.
pub fn backward_into(params: &ModelParams, pass: &ForwardPass, label: u8, g: &mut ModelParams) {
    let dlogit = pass.y - f64::from(label);
    let mut dz = pab_backward(params, g, &pass.pab, dlogit);
    if pass.ablation == Ablation::Full {
        dz.zip_mut_with(&pass.z, |d, &s| *d *= s * (1.0 - s));
        for (i, cache) in pass.inter.iter().enumerate().rev() {
            dz = sab_backward(&params.inter[i], &mut g.inter[i], cache, &dz);
        }
    }
    for (i, member) in pass.members.iter().enumerate() {
        let dy = dz.slice(s![i..i + 1, ..]).to_owned();
        temporal_backward(params, g, member, &dy);
    }
}
