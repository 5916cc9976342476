//! Training objectives and their gradients.
//!
//! Every `*_grad` function returns the loss value together with the gradient
//! with respect to its first tensor argument.

use serde::{Deserialize, Serialize};

use crate::error::{HexstError, Result};
use crate::numerics::{dot, is_constant, mean_std, norm, Tensor};

pub const DEFAULT_DEV_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mse: f64,
    pub pearson: f64,
    pub tfa: f64,
    pub dev: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            mse: 0.001,
            pearson: 1.0,
            tfa: 0.1,
            dev: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("mse", self.mse),
            ("pearson", self.pearson),
            ("tfa", self.tfa),
            ("dev", self.dev),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(HexstError::Input(format!("loss weight {name} = {v}")));
            }
        }
        Ok(())
    }

    /// Zeroes the weight of every disabled term.
    pub fn masked(&self, toggles: &LossToggles) -> LossWeights {
        let pick = |on: bool, w: f64| if on { w } else { 0.0 };
        LossWeights {
            mse: pick(toggles.mse, self.mse),
            pearson: pick(toggles.pearson, self.pearson),
            tfa: pick(toggles.tfa, self.tfa),
            dev: pick(toggles.dev, self.dev),
        }
    }
}

/// Per-term on/off switches for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossToggles {
    pub mse: bool,
    pub pearson: bool,
    pub tfa: bool,
    pub dev: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        LossToggles {
            mse: true,
            pearson: true,
            tfa: true,
            dev: true,
        }
    }
}

/// The four loss terms and their weighted total for one pass.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub mse: f64,
    pub pearson: f64,
    pub tfa: f64,
    pub dev: f64,
    pub total: f64,
}

impl LossReport {
    pub fn terms(&self) -> [(&'static str, f64); 4] {
        [
            ("mse", self.mse),
            ("pearson", self.pearson),
            ("tfa", self.tfa),
            ("dev", self.dev),
        ]
    }

    /// One structured log line for training step `step`.
    pub fn log_line(&self, step: usize) -> String {
        serde_json::json!({
            "step": step,
            "mse": self.mse,
            "pearson": self.pearson,
            "tfa": self.tfa,
            "dev": self.dev,
            "total": self.total,
        })
        .to_string()
    }
}

/// Weighted sum of already computed terms.
pub fn loss_total(mse: f64, pearson: f64, tfa: f64, dev: f64, weights: &LossWeights) -> LossReport {
    LossReport {
        mse,
        pearson,
        tfa,
        dev,
        total: weights.mse * mse + weights.pearson * pearson + weights.tfa * tfa + weights.dev * dev,
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(HexstError::Structural(format!(
            "{what}: shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn loss_mse(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    loss_mse_grad(y_hat, y).map(|(l, _)| l)
}

pub fn loss_mse_grad(y_hat: &Tensor, y: &Tensor) -> Result<(f64, Tensor)> {
    same_shape(y_hat, y, "mse")?;
    let count = y.len().max(1) as f64;
    let diff: Vec<f64> = y_hat.data().iter().zip(y.data()).map(|(a, b)| a - b).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;
    let grad = diff.iter().map(|d| 2.0 * d / count).collect();
    Ok((loss, Tensor::new(y.shape().to_vec(), grad)?))
}

pub fn loss_pearson(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    loss_pearson_grad(y_hat, y).map(|(l, _)| l)
}

/// `1 − mean_g PCC(ŷ_·g, y_·g)`; zero-variance columns count as PCC 0.
pub fn loss_pearson_grad(y_hat: &Tensor, y: &Tensor) -> Result<(f64, Tensor)> {
    same_shape(y_hat, y, "pearson")?;
    let (n, g) = (y.rows(), y.cols());
    if n < 2 {
        return Err(HexstError::Input(format!("pearson loss needs N >= 2 spots, got {n}")));
    }
    let mut grad = Tensor::zeros(&[n, g]);
    let mut total = 0.0;
    for j in 0..g {
        let a_col = y_hat.column(j);
        let b_col = y.column(j);
        if is_constant(&a_col) || is_constant(&b_col) {
            continue;
        }
        let (ma, _) = mean_std(&a_col);
        let (mb, _) = mean_std(&b_col);
        let a: Vec<f64> = a_col.iter().map(|v| v - ma).collect();
        let b: Vec<f64> = b_col.iter().map(|v| v - mb).collect();
        let (na, nb) = (norm(&a), norm(&b));
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        let r = dot(&a, &b) / (na * nb);
        total += r;
        for i in 0..n {
            let dr = b[i] / (na * nb) - r * a[i] / (na * na);
            grad.set(i, j, -dr / g as f64);
        }
    }
    Ok((1.0 - total / g as f64, grad))
}

pub fn loss_tfa(projected: &Tensor, t: &Tensor) -> Result<f64> {
    loss_tfa_grad(projected, t).map(|(l, _)| l)
}

/// `mean_i (1 − cos(p(z_i), t_i))` on already projected embeddings.
/// A zero vector on either side has cosine 0.
pub fn loss_tfa_grad(projected: &Tensor, t: &Tensor) -> Result<(f64, Tensor)> {
    same_shape(projected, t, "tfa")?;
    let n = t.rows();
    let mut grad = Tensor::zeros(projected.shape());
    let mut total = 0.0;
    for i in 0..n {
        let p = projected.row(i);
        let ti = t.row(i);
        let (np, nt) = (norm(p), norm(ti));
        if np == 0.0 || nt == 0.0 {
            total += 1.0;
            continue;
        }
        let c = dot(p, ti) / (np * nt);
        total += 1.0 - c;
        let row = grad.row_mut(i);
        for k in 0..p.len() {
            let dc = ti[k] / (np * nt) - c * p[k] / (np * np);
            row[k] = -dc / n as f64;
        }
    }
    Ok((total / n.max(1) as f64, grad))
}

/// TFA loss including the learnable projection `p(z) = z·W + b`.
pub fn loss_tfa_projected(z: &Tensor, t: &Tensor, weight: &Tensor, bias: &[f64]) -> Result<f64> {
    let mut p = z.matmul(weight)?;
    if bias.len() != p.cols() {
        return Err(HexstError::Structural("tfa projection bias length".into()));
    }
    p.add_row_vector(bias);
    loss_tfa(&p, t)
}

/// Ground-truth deviations standardized per gene: `(y − μ_g) / (σ_g + ε)`.
pub fn standardized_deviations(y: &Tensor, eps: f64) -> Tensor {
    let (n, g) = (y.rows(), y.cols());
    let mut out = Tensor::zeros(&[n, g]);
    for j in 0..g {
        let col = y.column(j);
        if is_constant(&col) {
            continue;
        }
        let (mu, sd) = mean_std(&col);
        for i in 0..n {
            out.set(i, j, (col[i] - mu) / (sd + eps));
        }
    }
    out
}

pub fn loss_dev(y_dev_hat: &Tensor, y: &Tensor, eps: f64) -> Result<f64> {
    loss_dev_grad(y_dev_hat, y, eps).map(|(l, _)| l)
}

/// Squared error between gene-wise standardized ground-truth deviations and
/// predicted deviations scaled by their own gene-wise standard deviation.
pub fn loss_dev_grad(y_dev_hat: &Tensor, y: &Tensor, eps: f64) -> Result<(f64, Tensor)> {
    same_shape(y_dev_hat, y, "dev")?;
    let (n, g) = (y.rows(), y.cols());
    if n < 2 {
        return Err(HexstError::Input(format!("deviation loss needs N >= 2 spots, got {n}")));
    }
    let target = standardized_deviations(y, eps);
    let count = (n * g) as f64;
    let mut grad = Tensor::zeros(&[n, g]);
    let mut total = 0.0;
    for j in 0..g {
        let col = y_dev_hat.column(j);
        let (mu, sd) = if is_constant(&col) {
            (col[0], 0.0)
        } else {
            mean_std(&col)
        };
        let denom = sd + eps;
        let mut e = vec![0.0; n];
        for i in 0..n {
            let d = col[i] / denom - target.get(i, j);
            total += d * d;
            e[i] = 2.0 * d / count;
        }
        // dL/dσ = −Σ e_i ȳ_i / (σ+ε)²;  dσ/dȳ_k = (ȳ_k − μ) / (N σ)
        let d_sd = -dot(&e, &col) / (denom * denom);
        for k in 0..n {
            let mut gk = e[k] / denom;
            if sd > 0.0 {
                gk += d_sd * (col[k] - mu) / (n as f64 * sd);
            }
            grad.set(k, j, gk);
        }
    }
    Ok((total / count, grad))
}
