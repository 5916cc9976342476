use super::tensor::{Mask, Tensor};
use crate::error::{HexstError, Result};

/// Softmax along `axis` restricted to positions where `valid` is set.
///
/// Invalid positions get exactly zero weight. A slice with no valid entry
/// comes back as all zeros.
pub fn masked_softmax(scores: &Tensor, valid: &Mask, axis: usize) -> Result<Tensor> {
    if scores.shape() != valid.shape() {
        return Err(HexstError::Structural(format!(
            "scores {:?} vs mask {:?}",
            scores.shape(),
            valid.shape()
        )));
    }
    let shape = scores.shape();
    if axis >= shape.len() {
        return Err(HexstError::Structural(format!(
            "axis {axis} out of range for rank {}",
            shape.len()
        )));
    }
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let src = scores.data();
    let flags = valid.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let idx = |k: usize| base + k * inner;
            let max = (0..len)
                .filter(|&k| flags[idx(k)])
                .map(|k| src[idx(k)])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for k in 0..len {
                if flags[idx(k)] {
                    let e = (src[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
            }
            for k in 0..len {
                out[idx(k)] /= total;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Softmax of one slice where every entry is valid.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Intermediate values of a layer normalization kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm(x: &Tensor, gain: &[f64], bias: &[f64], eps: f64) -> Result<Tensor> {
    layer_norm_forward(x, gain, bias, eps).map(|(y, _)| y)
}

/// Normalizes every vector along the last axis, then applies `gain` and `bias`.
pub fn layer_norm_forward(
    x: &Tensor,
    gain: &[f64],
    bias: &[f64],
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let d = *x.shape().last().unwrap_or(&0);
    if d == 0 {
        return Err(HexstError::Structural("layer_norm over empty axis".into()));
    }
    if gain.len() != d || bias.len() != d {
        return Err(HexstError::Structural(format!(
            "layer_norm gain/bias length {}/{} vs last axis {d}",
            gain.len(),
            bias.len()
        )));
    }
    let mut normalized = x.data().to_vec();
    let mut out = vec![0.0; normalized.len()];
    let mut inv_std = Vec::with_capacity(normalized.len() / d);
    for (row, orow) in normalized.chunks_mut(d).zip(out.chunks_mut(d)) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + eps).sqrt();
        inv_std.push(r);
        for ((v, o), (g, b)) in row.iter_mut().zip(orow.iter_mut()).zip(gain.iter().zip(bias)) {
            *v = (*v - mean) * r;
            *o = *v * g + b;
        }
    }
    let shape = x.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        LayerNormCache {
            normalized: Tensor::new(shape, normalized)?,
            inv_std,
        },
    ))
}

/// Returns `(d_input, d_gain, d_bias)`.
pub fn layer_norm_backward(
    d_out: &Tensor,
    cache: &LayerNormCache,
    gain: &[f64],
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let d = gain.len();
    let mut d_gain = vec![0.0; d];
    let mut d_bias = vec![0.0; d];
    let mut d_in = vec![0.0; d_out.len()];
    let rows = d_out.data().chunks(d).zip(cache.normalized.data().chunks(d));
    for (((dy, xhat), dx), &r) in rows.zip(d_in.chunks_mut(d)).zip(&cache.inv_std) {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for k in 0..d {
            d_gain[k] += dy[k] * xhat[k];
            d_bias[k] += dy[k];
            let g = dy[k] * gain[k];
            sum_g += g;
            sum_gx += g * xhat[k];
        }
        let n = d as f64;
        for k in 0..d {
            let g = dy[k] * gain[k];
            dx[k] = r * (g - sum_g / n - xhat[k] * sum_gx / n);
        }
    }
    (
        Tensor::new(d_out.shape().to_vec(), d_in).expect("shape preserved"),
        d_gain,
        d_bias,
    )
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Central-difference gradient of a scalar function.
pub fn finite_diff_grad<F>(f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(HexstError::Input(format!("step h must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(HexstError::Numeric(format!(
                "non-finite objective while perturbing coordinate {i}"
            )));
        }
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Tensor::new(x.shape().to_vec(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_uniform() {
        let s = Tensor::vector(vec![0.0, 0.0, 0.0]);
        let p = masked_softmax(&s, &Mask::from_flags(vec![true; 3]), 0).unwrap();
        assert!(close(p.data(), &[1.0 / 3.0; 3], 1e-15));
    }

    #[test]
    fn softmax_single_valid_entry() {
        let s = Tensor::vector(vec![5.0, -100.0]);
        let p = masked_softmax(&s, &Mask::from_flags(vec![true, false]), 0).unwrap();
        assert_eq!(p.data(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_ln2() {
        let s = Tensor::vector(vec![2f64.ln(), 0.0]);
        let p = masked_softmax(&s, &Mask::from_flags(vec![true, true]), 0).unwrap();
        assert!(close(p.data(), &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
    }

    #[test]
    fn softmax_fully_invalid_slice_is_zero() {
        let s = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = Mask::new(vec![2, 2], vec![true, true, false, false]).unwrap();
        let p = masked_softmax(&s, &m, 1).unwrap();
        assert_eq!(&p.data()[2..], &[0.0, 0.0]);
        assert!((p.data()[0] + p.data()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_along_leading_axis() {
        let s = Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let p = masked_softmax(&s, &Mask::all(&[2, 2]), 0).unwrap();
        assert!(close(p.data(), &[0.5; 4], 1e-15));
    }

    #[test]
    fn softmax_shape_mismatch() {
        let s = Tensor::vector(vec![0.0, 0.0]);
        assert!(matches!(
            masked_softmax(&s, &Mask::from_flags(vec![true; 3]), 0),
            Err(HexstError::Structural(_))
        ));
    }

    #[test]
    fn layer_norm_examples() {
        let ln = |x: Vec<f64>, g: f64, b: f64, eps: f64| {
            let n = x.len();
            layer_norm(&Tensor::vector(x), &vec![g; n], &vec![b; n], eps).unwrap()
        };
        assert_eq!(ln(vec![1.0, 1.0, 1.0], 1.0, 0.0, 1e-5).data(), &[0.0, 0.0, 0.0]);
        assert!(close(ln(vec![-1.0, 1.0], 1.0, 0.0, 0.0).data(), &[-1.0, 1.0], 1e-15));
        assert!(close(ln(vec![0.0, 2.0], 2.0, 1.0, 0.0).data(), &[-1.0, 3.0], 1e-15));
    }

    #[test]
    fn layer_norm_rejects_empty_axis() {
        let x = Tensor::zeros(&[3, 0]);
        assert!(layer_norm(&x, &[], &[], 1e-5).is_err());
    }

    #[test]
    fn finite_diff_quadratic_and_linear() {
        let g = finite_diff_grad(|t| Ok(t.data()[0] * t.data()[0]), &Tensor::vector(vec![3.0]), 1e-5)
            .unwrap();
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
        let x = Tensor::vector(vec![0.3, -2.0, 7.5]);
        let g = finite_diff_grad(|t| Ok(t.data().iter().sum()), &x, 1e-5).unwrap();
        assert!(close(g.data(), &[1.0; 3], 1e-9));
    }

    #[test]
    fn finite_diff_reports_non_finite() {
        let r = finite_diff_grad(|_| Ok(f64::NAN), &Tensor::vector(vec![1.0]), 1e-5);
        assert!(matches!(r, Err(HexstError::Numeric(_))));
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        let x = Tensor::matrix(2, 4, vec![0.3, -1.2, 2.0, 0.7, 1.1, 0.4, -0.5, 0.9]).unwrap();
        let gain = [1.3, 0.7, -0.4, 2.0];
        let bias = [0.1, 0.2, -0.3, 0.0];
        let w = Tensor::matrix(2, 4, vec![0.5, -1.0, 0.25, 2.0, -0.7, 0.3, 1.5, 0.2]).unwrap();
        let objective = |t: &Tensor| -> Result<f64> {
            let y = layer_norm(t, &gain, &bias, 1e-5)?;
            Ok(y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
        };
        let (_, cache) = layer_norm_forward(&x, &gain, &bias, 1e-5).unwrap();
        let (dx, _, _) = layer_norm_backward(&w, &cache, &gain);
        let fd = finite_diff_grad(objective, &x, 1e-5).unwrap();
        assert!(close(dx.data(), fd.data(), 1e-8));
    }

    #[test]
    fn gelu_grad_matches_finite_differences() {
        for &x in &[-3.0, -0.5, 0.0, 0.2, 1.7] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((gelu_grad(x) - fd).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn softmax_shift_invariant(scores in proptest::collection::vec(-20.0f64..20.0, 1..12),
                                   shift in -50.0f64..50.0,
                                   seed in any::<u64>()) {
            let n = scores.len();
            let mut flags: Vec<bool> = (0..n).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
            flags[0] = true;
            let mask = Mask::from_flags(flags);
            let a = masked_softmax(&Tensor::vector(scores.clone()), &mask, 0).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let b = masked_softmax(&Tensor::vector(shifted), &mask, 0).unwrap();
            prop_assert!(close(a.data(), b.data(), 1e-12));
            let total: f64 = a.data().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn layer_norm_affine_invariant(x in proptest::collection::vec(-10.0f64..10.0, 2..16),
                                       a in 0.1f64..10.0, b in -10.0f64..10.0) {
            let n = x.len();
            let spread = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - x.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-3);
            let ones = vec![1.0; n];
            let zeros = vec![0.0; n];
            let y1 = layer_norm(&Tensor::vector(x.clone()), &ones, &zeros, 0.0).unwrap();
            let t: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let y2 = layer_norm(&Tensor::vector(t), &ones, &zeros, 0.0).unwrap();
            prop_assert!(close(y1.data(), y2.data(), 1e-9));
        }
    }
}
