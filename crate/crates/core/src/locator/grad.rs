//! Reverse-mode gradients of the batch-mean span loss.
//!
//! Non-smooth points use fixed subgradients: `|x|` has slope 0 at 0,
//! LeakyReLU takes its left slope at 0, and max-pool routes the whole
//! gradient to the lowest-index maximum. A degenerate cosine contributes no
//! gradient.

use super::{forward_trace, query_loss, ConvLayer, LocatorError, LocatorParams};
use crate::ingest::GoldSpan;
use crate::matrix::{dot, norm, Matrix};

/// One supervised (transcript, query) pair.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub transcript: &'a Matrix,
    pub query: &'a Matrix,
    pub golds: &'a [GoldSpan],
    pub length: usize,
}

fn accumulate_conv(grad: &mut ConvLayer, input: &Matrix, argmax: &[usize], upstream: &[f64]) {
    let pad = grad.width / 2;
    let n = input.rows();
    let d = grad.in_dim;
    for (ch, (&t, &g)) in argmax.iter().zip(upstream).enumerate() {
        if g == 0.0 {
            continue;
        }
        grad.bias[ch] += g;
        for off in 0..grad.width {
            let src = t + off;
            if src < pad || src - pad >= n {
                continue;
            }
            let row = input.row(src - pad);
            let w = &mut grad.kernel[(ch * grad.width + off) * d..][..d];
            for (wi, &x) in w.iter_mut().zip(row) {
                *wi += g * x;
            }
        }
    }
}

/// Adds `scale · ∂loss/∂params` for one example into `grad`; returns the loss.
fn accumulate_example(
    params: &LocatorParams,
    ex: &Example<'_>,
    scale: f64,
    grad: &mut LocatorParams,
) -> Result<f64, LocatorError> {
    let tr = forward_trace(params, ex.transcript, ex.query, ex.length)?;
    let (loss, best) = query_loss(tr.prediction, ex.golds, params.length_norm);
    let gold = ex.golds[best];
    let lm2 = params.length_norm * params.length_norm;

    // ∂loss/∂s then through |·|
    let targets = [gold.start as f64, gold.end as f64];
    let outs = [tr.prediction.start_raw, tr.prediction.end_raw];
    let mut d_out = [0.0; 2];
    for k in 0..2 {
        let ds = scale * (outs[k] - targets[k]) / lm2;
        d_out[k] = if tr.out_pre[k] > 0.0 {
            ds
        } else if tr.out_pre[k] < 0.0 {
            -ds
        } else {
            0.0
        };
    }

    grad.w3.add_outer(&d_out, &tr.hidden);
    grad.b3[0] += d_out[0];
    grad.b3[1] += d_out[1];
    let d_hidden = params.w3.matvec_t(&d_out);

    let d_pre: Vec<f64> = d_hidden
        .iter()
        .zip(&tr.hidden_pre)
        .map(|(&g, &x)| if x > 0.0 { g } else { g * params.leaky_slope })
        .collect();
    grad.w2.add_outer(&d_pre, &tr.features);
    for (b, g) in grad.b2.iter_mut().zip(&d_pre) {
        *b += g;
    }
    let d_features = params.w2.matvec_t(&d_pre);

    let e = params.projection_dim();
    let mut d_et = d_features[..e].to_vec();
    let mut d_eq = d_features[e..2 * e].to_vec();
    let d_sim = d_features[2 * e];
    if let Some(sim) = tr.sim {
        let (nt, nq) = (norm(&tr.e_t), norm(&tr.e_q));
        let inv = 1.0 / (nt * nq);
        for i in 0..e {
            d_et[i] += d_sim * (tr.e_q[i] * inv - sim * tr.e_t[i] / (nt * nt));
            d_eq[i] += d_sim * (tr.e_t[i] * inv - sim * tr.e_q[i] / (nq * nq));
        }
    }

    grad.w1.add_outer(&d_et, &tr.transcript_pooled);
    grad.w1.add_outer(&d_eq, &tr.query_pooled);
    for i in 0..e {
        grad.b1[i] += d_et[i] + d_eq[i];
    }
    let d_tp = params.w1.matvec_t(&d_et);
    let d_qp = params.w1.matvec_t(&d_eq);

    accumulate_conv(&mut grad.conv, ex.transcript, &tr.transcript_argmax, &d_tp);
    let qconv = grad.query_conv.as_mut().unwrap_or(&mut grad.conv);
    accumulate_conv(qconv, ex.query, &tr.query_argmax, &d_qp);
    Ok(loss)
}

/// Mean loss over `batch` and its gradient with respect to every tensor in
/// `params`. Examples are reduced in index order.
pub fn batch_gradients(
    params: &LocatorParams,
    batch: &[Example<'_>],
) -> Result<(f64, LocatorParams), LocatorError> {
    let mut grad = params.zeros_like();
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for ex in batch {
        total += accumulate_example(params, ex, scale, &mut grad)?;
    }
    Ok((total * scale, grad))
}

/// Mean loss only.
pub fn batch_loss(params: &LocatorParams, batch: &[Example<'_>]) -> Result<f64, LocatorError> {
    let mut total = 0.0;
    for ex in batch {
        let pred = super::locator_forward(params, ex.transcript, ex.query, ex.length)?;
        total += query_loss(pred, ex.golds, params.length_norm).0;
    }
    Ok(total / batch.len().max(1) as f64)
}

/// Euclidean norm across every gradient tensor.
pub fn gradient_norm(grad: &LocatorParams) -> f64 {
    grad.tensors()
        .iter()
        .map(|(_, t)| dot(t, t))
        .sum::<f64>()
        .sqrt()
}
