//! The weighted four-term training objective evaluated on a subset of
//! spots, with gradients routed back to the model's heads.

use crate::dataset::SpotDataset;
use crate::error::{HexstError, Result};
use crate::losses::{loss_dev_grad, loss_mse_grad, loss_pearson_grad, loss_tfa_grad, loss_total, LossReport, LossWeights};
use crate::model::{ForwardOutput, OutputGrads};
use crate::numerics::Tensor;

fn scatter(rows: &[usize], n: usize, g: &Tensor, weight: f64) -> Tensor {
    let mut out = Tensor::zeros(&[n, g.cols()]);
    for (r, &i) in rows.iter().enumerate() {
        for (o, v) in out.row_mut(i).iter_mut().zip(g.row(r)) {
            *o = weight * v;
        }
    }
    out
}

/// Loss terms on `rows` and, for every term with nonzero weight, the
/// weighted upstream gradients. Terms with zero weight are still reported
/// but contribute nothing to the gradients.
pub fn objective(
    out: &ForwardOutput,
    data: &SpotDataset,
    rows: &[usize],
    weights: &LossWeights,
    dev_eps: f64,
) -> Result<(LossReport, OutputGrads)> {
    let n = out.y_hat.rows();
    if data.len() != n {
        return Err(HexstError::Structural(format!("{} predictions for {} spots", n, data.len())));
    }
    if rows.len() < 2 {
        return Err(HexstError::Input(format!("objective needs at least 2 training spots, got {}", rows.len())));
    }
    let y = data.expression.select_rows(rows);
    let y_hat = out.y_hat.select_rows(rows);
    let (mse, g_mse) = loss_mse_grad(&y_hat, &y)?;
    let (pearson, g_pl) = loss_pearson_grad(&y_hat, &y)?;
    let (dev, g_dev) = loss_dev_grad(&out.y_dev_hat.select_rows(rows), &y, dev_eps)?;
    let (tfa, g_tfa) = match &data.transcriptomic {
        Some(t) => {
            let (l, g) = loss_tfa_grad(&out.projected.select_rows(rows), &t.select_rows(rows))?;
            (l, Some(g))
        }
        None if weights.tfa == 0.0 => (0.0, None),
        None => {
            return Err(HexstError::Input(
                "alignment loss enabled but the dataset has no transcriptomic embeddings".into(),
            ))
        }
    };

    let mut grads = OutputGrads::default();
    let mut y_grad: Option<Tensor> = None;
    for (w, g) in [(weights.mse, &g_mse), (weights.pearson, &g_pl)] {
        if w != 0.0 {
            let s = scatter(rows, n, g, w);
            match &mut y_grad {
                Some(acc) => acc.add_assign(&s),
                None => y_grad = Some(s),
            }
        }
    }
    grads.y_hat = y_grad;
    if weights.dev != 0.0 {
        grads.y_dev_hat = Some(scatter(rows, n, &g_dev, weights.dev));
    }
    if weights.tfa != 0.0 {
        grads.projected = g_tfa.map(|g| scatter(rows, n, &g, weights.tfa));
    }
    Ok((loss_total(mse, pearson, tfa, dev, weights), grads))
}
