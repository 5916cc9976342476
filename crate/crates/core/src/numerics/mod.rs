//! Dense `f64` tensors, the few kernels the model needs, and the
//! finite-difference oracle that certifies every hand-written gradient.

mod ops;
mod tensor;

pub use ops::{
    finite_diff_grad, gelu, gelu_grad, layer_norm, layer_norm_backward, layer_norm_forward,
    masked_softmax, softmax_in_place, LayerNormCache,
};
pub use tensor::{dot, norm, Mask, Tensor};

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// True when every entry equals the first one exactly.
pub fn is_constant(values: &[f64]) -> bool {
    values.iter().all(|v| *v == values[0])
}

/// Pearson correlation; zero when either argument has zero variance.
pub fn pcc(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    if a.is_empty() || a.len() != b.len() || is_constant(a) || is_constant(b) {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}
