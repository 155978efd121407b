use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Mat = Array2<f64>;

/// Shape hyperparameters of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// System size; also the number of embedded time slices.
    pub l: usize,
    /// Embedding width per two-site cluster.
    pub n_e: usize,
    /// Hidden width of the temporal attention.
    pub d_h: usize,
}

impl ModelDims {
    pub fn embed_width(&self) -> usize {
        self.n_e * self.l
    }
}

/// One self-attention block: projections, feed-forward matrix and two norms.
/// Layer-norm gains and biases are stored as `1 × n` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SabParams {
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    pub o: Mat,
    pub ln1_g: Mat,
    pub ln1_b: Mat,
    pub ln2_g: Mat,
    pub ln2_b: Mat,
}

impl SabParams {
    fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        SabParams {
            q: uniform(hidden, input, rng),
            k: uniform(hidden, input, rng),
            v: uniform(hidden, input, rng),
            o: uniform(hidden, hidden, rng),
            ln1_g: Mat::ones((1, hidden)),
            ln1_b: Mat::zeros((1, hidden)),
            ln2_g: Mat::ones((1, hidden)),
            ln2_b: Mat::zeros((1, hidden)),
        }
    }

    fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        for (name, t) in [
            ("q", &self.q),
            ("k", &self.k),
            ("v", &self.v),
            ("o", &self.o),
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
        ] {
            out.push((format!("{prefix}.{name}"), t));
        }
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Mat>) {
        out.extend([
            &mut self.q,
            &mut self.k,
            &mut self.v,
            &mut self.o,
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.ln2_g,
            &mut self.ln2_b,
        ]);
    }
}

/// All trainable tensors of a QuAN model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    /// Rows for clusters 00, 01, 10, 11.
    pub embed: Mat,
    pub temporal: Vec<SabParams>,
    /// Feed-forward matrix, norm and readout of the temporal block.
    pub t_ff: Mat,
    pub t_ln_g: Mat,
    pub t_ln_b: Mat,
    pub w_t: Mat,
    pub b_t: Mat,
    pub inter: Vec<SabParams>,
    /// Pooling seed query `1 × L`.
    pub seed: Mat,
    pub k_p: Mat,
    pub v_p: Mat,
    pub f_p: Mat,
    pub p_ln1_g: Mat,
    pub p_ln1_b: Mat,
    pub p_ln2_g: Mat,
    pub p_ln2_b: Mat,
    pub w_p: Mat,
    pub b_p: Mat,
}

fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let bound = 1.0 / (cols as f64).sqrt();
    Mat::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..bound))
}

pub const TEMPORAL_LAYERS: usize = 2;
pub const INTER_LAYERS: usize = 2;

impl ModelParams {
    /// Uniform `±1/√fan_in` weights, unit norm gains, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Self {
        let ModelDims { l, n_e, d_h } = dims;
        let temporal = (0..TEMPORAL_LAYERS)
            .map(|i| SabParams::init(if i == 0 { n_e * l } else { d_h }, d_h, rng))
            .collect();
        let embed = uniform(4, n_e, rng);
        let t_ff = uniform(d_h, d_h, rng);
        let w_t = uniform(1, d_h, rng);
        let inter = (0..INTER_LAYERS).map(|_| SabParams::init(l, l, rng)).collect();
        ModelParams {
            dims,
            embed,
            temporal,
            t_ff,
            t_ln_g: Mat::ones((1, d_h)),
            t_ln_b: Mat::zeros((1, d_h)),
            w_t,
            b_t: Mat::zeros((1, 1)),
            inter,
            seed: uniform(1, l, rng),
            k_p: uniform(l, l, rng),
            v_p: uniform(l, l, rng),
            f_p: uniform(l, l, rng),
            p_ln1_g: Mat::ones((1, l)),
            p_ln1_b: Mat::zeros((1, l)),
            p_ln2_g: Mat::ones((1, l)),
            p_ln2_b: Mat::zeros((1, l)),
            w_p: uniform(1, l, rng),
            b_p: Mat::zeros((1, 1)),
        }
    }

    /// Same shapes, all zeros (gradient and moment buffers).
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Named tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = vec![("embed".to_string(), &self.embed)];
        for (i, layer) in self.temporal.iter().enumerate() {
            layer.tensors(&format!("temporal.{i}"), &mut out);
        }
        for (name, t) in [
            ("t_ff", &self.t_ff),
            ("t_ln_g", &self.t_ln_g),
            ("t_ln_b", &self.t_ln_b),
            ("w_t", &self.w_t),
            ("b_t", &self.b_t),
        ] {
            out.push((name.to_string(), t));
        }
        for (i, layer) in self.inter.iter().enumerate() {
            layer.tensors(&format!("inter.{i}"), &mut out);
        }
        for (name, t) in [
            ("seed", &self.seed),
            ("k_p", &self.k_p),
            ("v_p", &self.v_p),
            ("f_p", &self.f_p),
            ("p_ln1_g", &self.p_ln1_g),
            ("p_ln1_b", &self.p_ln1_b),
            ("p_ln2_g", &self.p_ln2_g),
            ("p_ln2_b", &self.p_ln2_b),
            ("w_p", &self.w_p),
            ("b_p", &self.b_p),
        ] {
            out.push((name.to_string(), t));
        }
        out
    }

    /// Mutable tensors in the order of [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![&mut self.embed];
        for layer in &mut self.temporal {
            layer.tensors_mut(&mut out);
        }
        out.extend([&mut self.t_ff, &mut self.t_ln_g, &mut self.t_ln_b, &mut self.w_t, &mut self.b_t]);
        for layer in &mut self.inter {
            layer.tensors_mut(&mut out);
        }
        out.extend([
            &mut self.seed,
            &mut self.k_p,
            &mut self.v_p,
            &mut self.f_p,
            &mut self.p_ln1_g,
            &mut self.p_ln1_b,
            &mut self.p_ln2_g,
            &mut self.p_ln2_b,
            &mut self.w_p,
            &mut self.b_p,
        ]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += alpha * other`, tensor by tensor.
    pub fn scaled_add(&mut self, alpha: f64, other: &ModelParams) {
        let theirs: Vec<&Mat> = other.tensors().into_iter().map(|(_, t)| t).collect();
        for (mine, t) in self.tensors_mut().into_iter().zip(theirs) {
            mine.scaled_add(alpha, t);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for t in self.tensors_mut() {
            t.mapv_inplace(|x| x * alpha);
        }
    }

    /// All entries in tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|(_, t)| t.iter().copied().collect::<Vec<_>>()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn shapes_and_counts() {
        let dims = ModelDims { l: 8, n_e: 4, d_h: 16 };
        let p = ModelParams::init(dims, &mut stream_rng(1, 0));
        assert_eq!(p.temporal[0].q.dim(), (16, 32));
        assert_eq!(p.temporal[1].q.dim(), (16, 16));
        assert_eq!(p.inter[0].k.dim(), (8, 8));
        assert_eq!(p.seed.dim(), (1, 8));
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), p.clone().tensors_mut().len());
        assert_eq!(names[0], "embed");
        assert!(names.contains(&"inter.1.ln2_b".to_string()));
        let t_layer = |i: usize| 3 * 16 * i + 16 * 16 + 4 * 16;
        let s_layer = 4 * 64 + 4 * 8;
        let expected = 16 + t_layer(32) + t_layer(16) + 256 + 16 * 3 + 1 + 2 * s_layer + 8 + 3 * 64 + 4 * 8 + 8 + 1;
        assert_eq!(p.num_params(), expected);
        assert!(p.temporal[0].q.iter().all(|x| x.abs() <= 1.0 / 32f64.sqrt()));
    }

    #[test]
    fn arithmetic_helpers() {
        let dims = ModelDims { l: 4, n_e: 2, d_h: 4 };
        let p = ModelParams::init(dims, &mut stream_rng(2, 0));
        let mut z = p.zeros_like();
        assert!(z.flatten().iter().all(|&x| x == 0.0));
        z.scaled_add(2.0, &p);
        z.scale(0.5);
        assert_eq!(z, p);
    }
}
