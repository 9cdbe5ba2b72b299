//! Bias-corrected Adam over a list of flat parameter tensors.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    /// Zeroed moments for tensors of the given lengths.
    pub fn new(lengths: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<f64>> = lengths.into_iter().map(|n| vec![0.0; n]).collect();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

pub fn adam_step(
    params: Vec<&mut [f64]>,
    grads: Vec<&[f64]>,
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params
        .into_iter()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        assert_eq!(p.len(), g.len());
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}
