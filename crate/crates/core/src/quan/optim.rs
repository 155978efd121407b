//! Loss and optimizer.

use super::params::ModelParams;
use super::TrainConfig;

/// Mean binary cross-entropy, predictions clamped to `[1e-12, 1 − 1e-12]`.
pub fn bce_loss(predictions: &[f64], labels: &[u8]) -> f64 {
    assert_eq!(predictions.len(), labels.len(), "one label per prediction");
    let sum: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&y, &label)| {
            let y = y.clamp(1e-12, 1.0 - 1e-12);
            if label == 1 {
                -y.ln()
            } else {
                -(1.0 - y).ln()
            }
        })
        .sum();
    sum / predictions.len() as f64
}

/// Adam moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// One bias-corrected Adam update; `l2 · θ` is added to the gradient first.
pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, config: &TrainConfig) {
    state.step += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let grads: Vec<_> = grads.tensors().into_iter().map(|(_, t)| t).collect();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((theta, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
        ndarray::Zip::from(theta).and(g).and(m).and(v).for_each(|theta, &g, m, v| {
            let g = g + config.l2 * *theta;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *theta -= config.learning_rate * (*m / c1) / ((*v / c2).sqrt() + config.eps);
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quan::ModelDims;
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bce_examples() {
        assert_abs_diff_eq!(bce_loss(&[1.0, 0.0], &[1, 0]), 0.0, epsilon = 1e-11);
        assert_eq!(bce_loss(&[0.5; 3], &[0, 1, 1]), std::f64::consts::LN_2);
        assert_abs_diff_eq!(bce_loss(&[0.9, 0.2], &[1, 0]), -0.5 * (0.9f64.ln() + 0.8f64.ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(bce_loss(&[0.9, 0.2], &[1, 0]), 0.1643, epsilon = 1e-4);
        assert!(bce_loss(&[0.0], &[1]).is_finite());
    }

    fn setup() -> (ModelParams, TrainConfig) {
        let p = ModelParams::init(ModelDims { l: 4, n_e: 2, d_h: 4 }, &mut stream_rng(3, 0));
        (p, TrainConfig { l2: 0.0, ..TrainConfig::default() })
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (p, config) = setup();
        let mut q = p.clone();
        let mut state = AdamState::new(&q);
        adam_step(&mut q, &p.zeros_like(), &mut state, &config);
        assert_eq!(q, p);
    }

    #[test]
    fn constant_gradient_steps_by_lr() {
        let (p, config) = setup();
        let mut g = p.zeros_like();
        for (i, t) in g.tensors_mut().into_iter().enumerate() {
            t.fill(if i % 2 == 0 { 0.3 } else { -2.0 });
        }
        let mut q = p.clone();
        let mut state = AdamState::new(&q);
        let mut prev = q.clone();
        for _ in 0..1000 {
            prev = q.clone();
            adam_step(&mut q, &g, &mut state, &config);
        }
        let (after, before, grad) = (q.flatten(), prev.flatten(), g.flatten());
        for ((a, b), g) in after.iter().zip(&before).zip(&grad) {
            let step = b - a;
            assert!((step - config.learning_rate * g.signum()).abs() < 0.01 * config.learning_rate);
        }
        let mut r = p.clone();
        let mut state2 = AdamState::new(&r);
        for _ in 0..1000 {
            adam_step(&mut r, &g, &mut state2, &config);
        }
        assert_eq!(r, q);
    }
}
