//! Row-wise building blocks with hand-written reverse passes. Every matrix holds
//! one token (time slice or set member) per row.

use ndarray::{Array1, Axis, Zip};
use rand::Rng;

use super::params::{Mat, SabParams};

pub const LN_EPS: f64 = 1e-5;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct LnCache {
    xhat: Mat,
    inv_std: Array1<f64>,
}

/// Layer norm over the feature axis of every row, with `1 × n` gain and bias.
pub fn layer_norm(x: &Mat, g: &Mat, b: &Mat) -> (Mat, LnCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        *s = 1.0 / (var + LN_EPS).sqrt();
        let is = *s;
        row.mapv_inplace(|v| v * is);
    }
    let y = &xhat * g + b;
    (y, LnCache { xhat, inv_std })
}

pub fn layer_norm_backward(dy: &Mat, g: &Mat, cache: &LnCache, dg: &mut Mat, db: &mut Mat) -> Mat {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let n = dy.ncols() as f64;
    let mut dx = dy * g;
    for ((mut row, xhat), &s) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
        let mean_d = row.sum() / n;
        let mean_dx = row.iter().zip(xhat).map(|(d, x)| d * x).sum::<f64>() / n;
        Zip::from(&mut row).and(&xhat).for_each(|d, &x| *d = s * (*d - mean_d - x * mean_dx));
    }
    dx
}

/// Softmax of every row.
pub fn softmax_rows(s: &Mat) -> Mat {
    let mut a = s.clone();
    for mut row in a.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    a
}

pub fn softmax_rows_backward(a: &Mat, da: &Mat) -> Mat {
    let mut ds = da.clone();
    for (mut row, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
        let dot: f64 = row.iter().zip(arow).map(|(d, a)| d * a).sum();
        Zip::from(&mut row).and(&arow).for_each(|d, &a| *d = a * (*d - dot));
    }
    ds
}

/// DropAttention on post-softmax weights: each entry survives with probability
/// `1 − p_d` and is rescaled by `1 / (1 − p_d)`. Identity outside training.
/// Returns the new weights and the mask that produced them.
pub fn drop_attention<R: Rng + ?Sized>(weights: &Mat, p_d: f64, rng: &mut R, training: bool) -> (Mat, Option<Mat>) {
    if !training || p_d <= 0.0 {
        return (weights.clone(), None);
    }
    let keep = 1.0 / (1.0 - p_d);
    let mask = Mat::from_shape_simple_fn(weights.dim(), || if rng.gen::<f64>() < p_d { 0.0 } else { keep });
    (weights * &mask, Some(mask))
}

/// How a self-attention block mixes its tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mixing {
    Attention,
    /// Uniform weights (mean pooling); used by the ablated model.
    Mean,
}

#[derive(Debug, Clone)]
pub struct SabCache {
    x: Mat,
    xq: Mat,
    xk: Mat,
    xv: Mat,
    /// Post-softmax weights before dropout.
    pub attn: Mat,
    mask: Option<Mat>,
    mixing: Mixing,
    scale: f64,
    ln1: LnCache,
    h1: Mat,
    pre: Mat,
    ln2: LnCache,
}

/// `h = XQᵀ + softmax(XQᵀ (XKᵀ)ᵀ · scale) XVᵀ`, `h1 = LN(h)`,
/// `out = LN(h1 + ReLU(h1 Oᵀ))`.
pub fn sab_forward<R: Rng + ?Sized>(
    p: &SabParams,
    x: &Mat,
    scale: f64,
    mixing: Mixing,
    dropout: Option<(f64, &mut R)>,
) -> (Mat, SabCache) {
    let xq = x.dot(&p.q.t());
    let xk = x.dot(&p.k.t());
    let xv = x.dot(&p.v.t());
    let attn = match mixing {
        Mixing::Attention => softmax_rows(&(xq.dot(&xk.t()) * scale)),
        Mixing::Mean => Mat::from_elem((x.nrows(), x.nrows()), 1.0 / x.nrows() as f64),
    };
    let (used, mask) = match dropout {
        Some((p_d, rng)) => drop_attention(&attn, p_d, rng, true),
        None => (attn.clone(), None),
    };
    let h = &xq + &used.dot(&xv);
    let (h1, ln1) = layer_norm(&h, &p.ln1_g, &p.ln1_b);
    let pre = h1.dot(&p.o.t());
    let r = &h1 + &pre.mapv(|v| v.max(0.0));
    let (out, ln2) = layer_norm(&r, &p.ln2_g, &p.ln2_b);
    let cache = SabCache { x: x.clone(), xq, xk, xv, attn, mask, mixing, scale, ln1, h1, pre, ln2 };
    (out, cache)
}

/// Accumulates parameter gradients into `g` and returns `dL/dx`.
pub fn sab_backward(p: &SabParams, g: &mut SabParams, c: &SabCache, dout: &Mat) -> Mat {
    let dr = layer_norm_backward(dout, &p.ln2_g, &c.ln2, &mut g.ln2_g, &mut g.ln2_b);
    let mut dpre = dr.clone();
    Zip::from(&mut dpre).and(&c.pre).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0
        }
    });
    g.o += &dpre.t().dot(&c.h1);
    let dh1 = &dr + &dpre.dot(&p.o);
    let dh = layer_norm_backward(&dh1, &p.ln1_g, &c.ln1, &mut g.ln1_g, &mut g.ln1_b);
    let used = match &c.mask {
        Some(m) => &c.attn * m,
        None => c.attn.clone(),
    };
    let mut dxq = dh.clone();
    let dxv = used.t().dot(&dh);
    let mut dxk = Mat::zeros(c.xk.dim());
    if c.mixing == Mixing::Attention {
        let mut dattn = dh.dot(&c.xv.t());
        if let Some(m) = &c.mask {
            dattn *= m;
        }
        let ds = softmax_rows_backward(&c.attn, &dattn) * c.scale;
        dxq += &ds.dot(&c.xk);
        dxk = ds.t().dot(&c.xq);
    }
    g.q += &dxq.t().dot(&c.x);
    g.k += &dxk.t().dot(&c.x);
    g.v += &dxv.t().dot(&c.x);
    dxq.dot(&p.q) + dxk.dot(&p.k) + dxv.dot(&p.v)
}
