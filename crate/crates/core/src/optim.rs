//! L1 loss, an optional map smoothness penalty, and Adam.

use gtfmn_tensor::{Conv2dOptions, Element, Tensor, Var};

use crate::error::{GtfmnError, Result};

/// `mean(|pred − target|)`; the subgradient at ties is 0.
pub fn l1_loss<'t, T: Element>(pred: &Var<'t, T>, target: &Var<'t, T>) -> Result<Var<'t, T>> {
    if pred.shape() != target.shape() {
        return Err(GtfmnError::Input(format!(
            "l1_loss shape mismatch: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    Ok(pred.sub(target)?.abs().mean_all()?)
}

/// Mean absolute horizontal plus vertical difference of an N×1×H×W map.
/// Axes of extent one contribute nothing.
pub fn map_smoothness<'t, T: Element>(map: &Var<'t, T>) -> Result<Var<'t, T>> {
    let (_, _, h, w) = map.value().dims4("map_smoothness")?;
    let tape = map.tape();
    let one = T::one();
    let mut total = tape.constant(Tensor::scalar(T::zero()));
    for (shape, extent) in [([1, 1, 1, 2], w), ([1, 1, 2, 1], h)] {
        if extent < 2 {
            continue;
        }
        let kernel = tape.constant(Tensor::from_vec(&shape, vec![-one, one])?);
        let diff = map.conv2d(&kernel, None, Conv2dOptions::default())?;
        total = total.add(&diff.abs().mean_all()?)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Steps after which the learning rate halves.
    pub milestones: Vec<usize>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            milestones: Vec::new(),
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(GtfmnError::Config(format!("invalid Adam settings {self:?}")))
        }
    }

    /// Learning rate in effect for 1-based step `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| t > m).count();
        self.lr * 0.5f64.powi(passed as i32)
    }
}

/// Adam with bias correction. Moment buffers are kept in `f64`.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    t: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Steps taken so far.
    pub fn steps(&self) -> usize {
        self.t
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// Updates every tensor from its `grad` buffer. Nothing is modified when
    /// a gradient is missing, mis-sized or non-finite.
    pub fn step<T: Element>(&mut self, params: &mut [Tensor<T>]) -> Result<()> {
        if !self.m.is_empty() && self.m.len() != params.len() {
            return Err(GtfmnError::Optimizer(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            let g = p
                .grad()
                .ok_or_else(|| GtfmnError::Optimizer(format!("tensor {i} has no gradient")))?;
            if let Some(m) = self.m.get(i) {
                if m.len() != g.len() {
                    return Err(GtfmnError::Optimizer(format!(
                        "tensor {i} changed size from {} to {}",
                        m.len(),
                        g.len()
                    )));
                }
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                return Err(GtfmnError::Optimizer(format!(
                    "non-finite gradient {} in tensor {i} (shape {:?}) at index {j}",
                    g[j],
                    p.shape()
                )));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }

        self.t += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let lr = self.config.lr_at(self.t);
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (p, (m, v)) in params.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let (data, grad) = p.data_and_grad_mut();
            let grad = grad.expect("checked above");
            for i in 0..data.len() {
                let g = grad[i].as_f64();
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                if lr == 0.0 {
                    continue;
                }
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                let theta = data[i].as_f64() - lr * m_hat / (v_hat.sqrt() + eps);
                data[i] = T::from_f64_lossy(theta);
            }
        }
        Ok(())
    }
}
