//! Loop-based forward pass, generic over the scalar type, used as an
//! independent oracle: in double-double arithmetic its central differences
//! resolve gradients far below the f64 roundoff of the production pass.

use std::collections::HashMap;
use std::ops::{Add, Div, Mul, Neg, Sub};

use qd::Quad;

use mipt_core::circuits::TrajectoryRecord;
use mipt_core::quan::model::embed_codes;
use mipt_core::quan::{Ablation, ModelParams};

pub trait Real: Copy + From<f64> + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> + Neg<Output = Self> {
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn hi(self) -> f64;
}

impl Real for f64 {
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn hi(self) -> f64 {
        self
    }
}

impl Real for Quad {
    fn exp(self) -> Self {
        Quad::exp(self)
    }
    fn ln(self) -> Self {
        Quad::ln(self)
    }
    fn sqrt(self) -> Self {
        Quad::sqrt(self)
    }
    fn hi(self) -> f64 {
        self.0
    }
}

type M<T> = Vec<Vec<T>>;

/// Parameter tensors by name, one entry optionally shifted by `delta`.
pub struct RefParams<T> {
    tensors: HashMap<String, M<T>>,
}

impl<T: Real> RefParams<T> {
    pub fn new(params: &ModelParams, shift: Option<(usize, usize, T)>) -> Self {
        let mut tensors = HashMap::new();
        for (ti, (name, t)) in params.tensors().into_iter().enumerate() {
            let mut m: M<T> = t.rows().into_iter().map(|r| r.iter().map(|&v| c::<T>(v)).collect()).collect();
            if let Some((sti, idx, delta)) = shift {
                if sti == ti {
                    let cols = t.ncols();
                    let cell = &mut m[idx / cols][idx % cols];
                    *cell = *cell + delta;
                }
            }
            tensors.insert(name, m);
        }
        RefParams { tensors }
    }

    fn get(&self, name: &str) -> &M<T> {
        &self.tensors[name]
    }
}

fn c<T: Real>(x: f64) -> T {
    <T as From<f64>>::from(x)
}

fn zero<T: Real>() -> T {
    c(0.0)
}

/// `x wᵀ`.
fn mul_t<T: Real>(x: &M<T>, w: &M<T>) -> M<T> {
    x.iter()
        .map(|row| w.iter().map(|wr| row.iter().zip(wr).fold(zero::<T>(), |acc, (&a, &b)| acc + a * b)).collect())
        .collect()
}

fn add<T: Real>(a: &M<T>, b: &M<T>) -> M<T> {
    a.iter().zip(b).map(|(ra, rb)| ra.iter().zip(rb).map(|(&x, &y)| x + y).collect()).collect()
}

fn map<T: Real>(a: &M<T>, f: impl Fn(T) -> T) -> M<T> {
    a.iter().map(|r| r.iter().map(|&x| f(x)).collect()).collect()
}

fn relu<T: Real>(x: T) -> T {
    if x.hi() > 0.0 {
        x
    } else {
        zero()
    }
}

fn sigmoid<T: Real>(x: T) -> T {
    c::<T>(1.0) / (c::<T>(1.0) + (-x).exp())
}

fn layer_norm<T: Real>(x: &M<T>, g: &M<T>, b: &M<T>) -> M<T> {
    x.iter()
        .map(|row| {
            let n = c::<T>(row.len() as f64);
            let mean = row.iter().fold(zero::<T>(), |a, &v| a + v) / n;
            let var = row.iter().fold(zero::<T>(), |a, &v| a + (v - mean) * (v - mean)) / n;
            let inv = c::<T>(1.0) / (var + c::<T>(1e-5)).sqrt();
            row.iter().enumerate().map(|(j, &v)| (v - mean) * inv * g[0][j] + b[0][j]).collect()
        })
        .collect()
}

fn softmax_row<T: Real>(row: &[T]) -> Vec<T> {
    let max = row.iter().map(|v| v.hi()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<T> = row.iter().map(|&v| (v - c::<T>(max)).exp()).collect();
    let sum = e.iter().fold(zero::<T>(), |a, &v| a + v);
    e.into_iter().map(|v| v / sum).collect()
}

fn sab<T: Real>(p: &RefParams<T>, prefix: &str, x: &M<T>, scale: f64, uniform: bool) -> M<T> {
    let q = mul_t(x, p.get(&format!("{prefix}.q")));
    let k = mul_t(x, p.get(&format!("{prefix}.k")));
    let v = mul_t(x, p.get(&format!("{prefix}.v")));
    let n = x.len();
    let mut h = q.clone();
    for i in 0..n {
        let weights = if uniform {
            vec![c::<T>(1.0 / n as f64); n]
        } else {
            let scores: Vec<T> = (0..n)
                .map(|j| q[i].iter().zip(&k[j]).fold(zero::<T>(), |a, (&x, &y)| a + x * y) * c::<T>(scale))
                .collect();
            softmax_row(&scores)
        };
        for (j, &w) in weights.iter().enumerate() {
            for f in 0..h[i].len() {
                h[i][f] = h[i][f] + w * v[j][f];
            }
        }
    }
    let h1 = layer_norm(&h, p.get(&format!("{prefix}.ln1_g")), p.get(&format!("{prefix}.ln1_b")));
    let ff = map(&mul_t(&h1, p.get(&format!("{prefix}.o"))), relu);
    layer_norm(&add(&h1, &ff), p.get(&format!("{prefix}.ln2_g")), p.get(&format!("{prefix}.ln2_b")))
}

fn temporal<T: Real>(p: &RefParams<T>, record: &TrajectoryRecord, uniform: bool) -> Vec<T> {
    let l = record.l;
    let embed = p.get("embed");
    let codes = embed_codes(record).unwrap();
    let mut x: M<T> = (0..l)
        .map(|tau| (0..l).flat_map(|c| embed[codes[tau * l + c] as usize].clone()).collect())
        .collect();
    let d_h = p.get("t_ff").len();
    for layer in 0..2 {
        x = sab(p, &format!("temporal.{layer}"), &x, 1.0 / (d_h as f64).sqrt(), uniform);
    }
    let xs = map(&x, sigmoid);
    let g = layer_norm(&map(&mul_t(&xs, p.get("t_ff")), relu), p.get("t_ln_g"), p.get("t_ln_b"));
    mul_t(&g, p.get("w_t")).into_iter().map(|r| r[0] + p.get("b_t")[0][0]).collect()
}

/// Logit of the model output for one set.
pub fn logit<T: Real>(p: &RefParams<T>, records: &[TrajectoryRecord], ablation: Ablation) -> T {
    let uniform = ablation == Ablation::NoAttention;
    let y: M<T> = records.iter().map(|r| temporal(p, r, uniform)).collect();
    let l = y[0].len();
    let z = if ablation == Ablation::Full {
        let mut x = y;
        for layer in 0..2 {
            x = sab(p, &format!("inter.{layer}"), &x, 1.0 / (l as f64).sqrt(), false);
        }
        map(&x, sigmoid)
    } else {
        y
    };
    let seed = &p.get("seed")[0];
    let zk = mul_t(&z, p.get("k_p"));
    let zv = mul_t(&z, p.get("v_p"));
    let n = z.len();
    let weights = if uniform {
        vec![c::<T>(1.0 / n as f64); n]
    } else {
        let scores: Vec<T> = zk
            .iter()
            .map(|k| seed.iter().zip(k).fold(zero::<T>(), |a, (&s, &v)| a + s * v) * c::<T>(1.0 / (l as f64).sqrt()))
            .collect();
        softmax_row(&scores)
    };
    let mut pooled = vec![seed.clone()];
    for (j, &w) in weights.iter().enumerate() {
        for f in 0..l {
            pooled[0][f] = pooled[0][f] + w * zv[j][f];
        }
    }
    let p1 = layer_norm(&pooled, p.get("p_ln1_g"), p.get("p_ln1_b"));
    let r = layer_norm(&add(&p1, &map(&mul_t(&p1, p.get("f_p")), relu)), p.get("p_ln2_g"), p.get("p_ln2_b"));
    mul_t(&r, p.get("w_p"))[0][0] + p.get("b_p")[0][0]
}

/// Binary cross-entropy of one set, `ln(1 + e^{∓logit})`.
pub fn loss<T: Real>(p: &RefParams<T>, records: &[TrajectoryRecord], label: u8, ablation: Ablation) -> T {
    let z = logit(p, records, ablation);
    let signed = if label == 1 { -z } else { z };
    (c::<T>(1.0) + signed.exp()).ln()
}
