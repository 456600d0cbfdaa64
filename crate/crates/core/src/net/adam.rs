//! Adam optimizer with bias correction and per-layer-kind learning rates
//! (convolution layers step faster than deconvolution layers).

use ndarray::{Array1, Array4};

use super::{Gradients, LayerKind, NetworkParams};

#[derive(Debug, Clone)]
struct Moments {
    m_w: Array4<f64>,
    v_w: Array4<f64>,
    m_b: Array1<f64>,
    v_b: Array1<f64>,
    m_s: Option<Array1<f64>>,
    v_s: Option<Array1<f64>>,
}

/// First/second moment estimates for every parameter array plus the shared
/// step counter and hyper-parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    slots: Vec<Moments>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub lr_conv: f64,
    pub lr_deconv: f64,
}

impl AdamState {
    pub fn new(params: &NetworkParams, lr_conv: f64, lr_deconv: f64) -> Self {
        let slots = params
            .layers
            .iter()
            .map(|l| Moments {
                m_w: Array4::zeros(l.weights.raw_dim()),
                v_w: Array4::zeros(l.weights.raw_dim()),
                m_b: Array1::zeros(l.bias.raw_dim()),
                v_b: Array1::zeros(l.bias.raw_dim()),
                m_s: l.prelu_slope.as_ref().map(|s| Array1::zeros(s.raw_dim())),
                v_s: l.prelu_slope.as_ref().map(|s| Array1::zeros(s.raw_dim())),
            })
            .collect();
        AdamState {
            slots,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lr_conv,
            lr_deconv,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Change the learning rates (stage switches keep the moments).
    pub fn set_rates(&mut self, lr_conv: f64, lr_deconv: f64) {
        self.lr_conv = lr_conv;
        self.lr_deconv = lr_deconv;
    }
}

fn update_array<D: ndarray::Dimension>(
    theta: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    t: u64,
) {
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    ndarray::Zip::from(theta).and(grad).and(m).and(v).for_each(|th, &g, m, v| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *th -= lr * m_hat / (v_hat.sqrt() + eps);
    });
}

/// One optimizer step: all parameter arrays of a layer share that layer's
/// learning rate.
pub fn adam_step(params: &mut NetworkParams, grads: &Gradients, state: &mut AdamState) {
    state.t += 1;
    let (b1, b2, eps, t) = (state.beta1, state.beta2, state.epsilon, state.t);
    for (li, layer) in params.layers.iter_mut().enumerate() {
        let lr = match layer.spec.kind {
            LayerKind::Conv => state.lr_conv,
            LayerKind::Deconv => state.lr_deconv,
        };
        let g = &grads.layers[li];
        let slot = &mut state.slots[li];
        update_array(&mut layer.weights, &g.weights, &mut slot.m_w, &mut slot.v_w, lr, b1, b2, eps, t);
        update_array(&mut layer.bias, &g.bias, &mut slot.m_b, &mut slot.v_b, lr, b1, b2, eps, t);
        if let (Some(s), Some(gs), Some(ms), Some(vs)) = (
            layer.prelu_slope.as_mut(),
            g.prelu_slope.as_ref(),
            slot.m_s.as_mut(),
            slot.v_s.as_mut(),
        ) {
            update_array(s, gs, ms, vs, lr, b1, b2, eps, t);
        }
    }
}
