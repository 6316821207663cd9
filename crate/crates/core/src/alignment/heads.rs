//! The three contrastive head losses with analytic gradients.
//!
//! All heads take raw (pre-normalization) matrices, normalize rows
//! internally, and return gradients w.r.t. the raw inputs, so losses are
//! invariant to positive rescaling of any row and gradients flow back to the
//! encoder and the text projection. Reductions accumulate in a canonical
//! order, making every loss bit-identical under joint row permutations.

use crate::alignment::{AlignedBatch, ProjectionParams};
use crate::error::{Error, Result};
use crate::math::{
    axpy, dot, logsumexp, normalize, normalize_backward, sigmoid, softplus, sorted_sum, Mat,
};

/// Gradients shared by the softmax and sigmoid heads.
#[derive(Debug, Clone)]
pub struct PairGrads {
    /// d loss / d raw sequence rows (N × d).
    pub d_seq: Mat,
    /// d loss / d raw projected-text rows (N × d).
    pub d_text: Mat,
    pub d_log_tau: f64,
    /// Sigmoid head only; zero for the softmax head.
    pub d_bias: f64,
}

struct NormalizedRows {
    units: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

fn normalize_rows(m: &Mat, side: &str) -> Result<NormalizedRows> {
    let mut units = Vec::with_capacity(m.rows);
    let mut norms = Vec::with_capacity(m.rows);
    for i in 0..m.rows {
        let (unit, norm) = normalize(m.row(i)).map_err(|_| {
            Error::Degenerate(format!("zero-norm {side} embedding in row {i}"))
        })?;
        units.push(unit);
        norms.push(norm);
    }
    Ok(NormalizedRows { units, norms })
}

fn similarity_matrix(a: &NormalizedRows, b: &NormalizedRows) -> Vec<Vec<f64>> {
    let n = a.units.len();
    let mut s = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            s[i][j] = dot(&a.units[i], &b.units[j]);
        }
    }
    s
}

fn chain_to_raw(rows: &NormalizedRows, d_units: &[Vec<f64>]) -> Mat {
    let n = rows.units.len();
    let dim = rows.units[0].len();
    let mut out = Mat::zeros(n, dim);
    for i in 0..n {
        normalize_backward(&rows.units[i], rows.norms[i], &d_units[i], out.row_mut(i));
    }
    out
}

/// One directional InfoNCE term: mean over rows of (logsumexp(row) − diag).
/// Returns per-row probabilities for the gradient.
fn directional_loss(logits: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let n = logits.len();
    let mut row_losses = Vec::with_capacity(n);
    let mut probs = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        let lse = logsumexp(&logits[i]);
        row_losses.push(lse - logits[i][i]);
        for j in 0..n {
            probs[i][j] = (logits[i][j] - lse).exp();
        }
    }
    (sorted_sum(&mut row_losses) / n as f64, probs)
}

/// Symmetric softmax contrastive loss: the mean of the sequence→text and
/// text→sequence InfoNCE terms over temperature-scaled cosine logits.
/// Gradients cover both raw matrices and log-τ.
pub fn softmax_head_loss(batch: &AlignedBatch, log_tau: f64) -> Result<(f64, PairGrads)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    if batch.z_seq.cols != batch.z_text.cols {
        return Err(Error::DimensionMismatch {
            expected: batch.z_seq.cols,
            got: batch.z_text.cols,
        });
    }
    let tau = log_tau.exp();
    let seq = normalize_rows(&batch.z_seq, "sequence")?;
    let text = normalize_rows(&batch.z_text, "text")?;
    let sim = similarity_matrix(&seq, &text);
    if sim.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite similarity".into()));
    }

    let logits: Vec<Vec<f64>> = sim
        .iter()
        .map(|row| row.iter().map(|&s| s / tau).collect())
        .collect();
    let logits_t: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| logits[i][j]).collect())
        .collect();

    let (loss_st, p_row) = directional_loss(&logits);
    let (loss_ts, p_col_t) = directional_loss(&logits_t);
    let loss = 0.5 * (loss_st + loss_ts);

    // d loss / d logit_ij, then chain to similarities and log-τ
    let mut d_log_tau = 0.0;
    let dim = seq.units[0].len();
    let mut d_seq_units = vec![vec![0.0f64; dim]; n];
    let mut d_text_units = vec![vec![0.0f64; dim]; n];
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 2.0 } else { 0.0 };
            let d_logit = scale * (p_row[i][j] + p_col_t[j][i] - delta);
            if d_logit == 0.0 {
                continue;
            }
            // logit = sim/τ: d/d sim = 1/τ; d/d log τ = −logit
            let d_sim = d_logit / tau;
            axpy(d_sim, &text.units[j], &mut d_seq_units[i]);
            axpy(d_sim, &seq.units[i], &mut d_text_units[j]);
            d_log_tau -= d_logit * logits[i][j];
        }
    }

    Ok((
        loss,
        PairGrads {
            d_seq: chain_to_raw(&seq, &d_seq_units),
            d_text: chain_to_raw(&text, &d_text_units),
            d_log_tau,
            d_bias: 0.0,
        },
    ))
}

/// Pairwise binary sigmoid loss over all N² pairs: for pair (i, j) with
/// target y = +1 on the diagonal and −1 off it, the per-pair loss is
/// softplus(y·(b − τ·s_ij)); the batch loss is the sum divided by N.
pub fn sigmoid_head_loss(batch: &AlignedBatch, log_tau: f64, bias: f64) -> Result<(f64, PairGrads)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    if batch.z_seq.cols != batch.z_text.cols {
        return Err(Error::DimensionMismatch {
            expected: batch.z_seq.cols,
            got: batch.z_text.cols,
        });
    }
    let tau = log_tau.exp();
    let seq = normalize_rows(&batch.z_seq, "sequence")?;
    let text = normalize_rows(&batch.z_text, "text")?;
    let sim = similarity_matrix(&seq, &text);
    if sim.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite similarity".into()));
    }

    let mut pair_losses = Vec::with_capacity(n * n);
    let dim = seq.units[0].len();
    let mut d_seq_units = vec![vec![0.0f64; dim]; n];
    let mut d_text_units = vec![vec![0.0f64; dim]; n];
    let mut d_log_tau = 0.0;
    let mut d_bias = 0.0;
    let inv_n = 1.0 / n as f64;

    for i in 0..n {
        for j in 0..n {
            let y = if i == j { 1.0 } else { -1.0 };
            let margin = y * (bias - tau * sim[i][j]);
            pair_losses.push(softplus(margin));
            let d_margin = sigmoid(margin) * inv_n;
            let d_sim = d_margin * y * (-tau);
            axpy(d_sim, &text.units[j], &mut d_seq_units[i]);
            axpy(d_sim, &seq.units[i], &mut d_text_units[j]);
            d_bias += d_margin * y;
            // d margin / d log τ = −y·τ·s_ij
            d_log_tau += d_margin * y * (-tau * sim[i][j]);
        }
    }
    let loss = sorted_sum(&mut pair_losses) * inv_n;
    if !loss.is_finite() {
        return Err(Error::Degenerate("non-finite pairwise loss".into()));
    }

    Ok((
        loss,
        PairGrads {
            d_seq: chain_to_raw(&seq, &d_seq_units),
            d_text: chain_to_raw(&text, &d_text_units),
            d_log_tau,
            d_bias,
        },
    ))
}

/// Gradients of the ortho head.
#[derive(Debug, Clone)]
pub struct OrthoGrads {
    /// d loss / d raw sequence rows (N × d_out, pre-projection).
    pub d_seq: Mat,
    /// d loss / d raw projected-text rows (N × d_shared).
    pub d_text: Mat,
    pub d_proj_w: Mat,
    pub d_proj_b: Vec<f64>,
    pub d_log_tau: f64,
}

/// Orthogonality-regularized head: the projection head maps each raw
/// sequence embedding to a shared block (aligned with the text side through
/// the softmax loss) and a specific block; the regularizer is the squared
/// Frobenius norm of Z_sharedᵀ·Z_spec computed on the pre-normalization
/// projections. Total loss = softmax term + λ·regularizer.
pub fn ortho_head_loss(
    batch: &AlignedBatch,
    proj: &ProjectionParams,
    log_tau: f64,
    lambda_ortho: f64,
) -> Result<(f64, OrthoGrads)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    if lambda_ortho < 0.0 {
        return Err(Error::config("lambda_ortho", "must be >= 0"));
    }
    let d_shared = proj.d_shared;
    let d_spec = proj.d_spec;
    if batch.z_text.cols != d_shared {
        return Err(Error::DimensionMismatch {
            expected: d_shared,
            got: batch.z_text.cols,
        });
    }

    // project every raw embedding and stack the two blocks
    let mut shared = Mat::zeros(n, d_shared);
    let mut spec = Mat::zeros(n, d_spec);
    for i in 0..n {
        let (s, q) = proj.apply(batch.z_seq.row(i))?;
        shared.row_mut(i).copy_from_slice(&s);
        spec.row_mut(i).copy_from_slice(&q);
    }

    // alignment term on the (normalized) shared block
    let shared_batch = AlignedBatch {
        client_ids: batch.client_ids.clone(),
        z_seq: shared.clone(),
        z_text: batch.z_text.clone(),
    };
    let (align_loss, align_grads) = softmax_head_loss(&shared_batch, log_tau)?;

    // regularizer ‖ sharedᵀ·spec ‖²_F on pre-normalization projections;
    // inner sums accumulate in canonical order for permutation invariance
    let mut cross = Mat::zeros(d_shared, d_spec);
    for a in 0..d_shared {
        for b in 0..d_spec {
            let mut terms: Vec<f64> = (0..n).map(|i| shared.get(i, a) * spec.get(i, b)).collect();
            cross.set(a, b, sorted_sum(&mut terms));
        }
    }
    let mut squares: Vec<f64> = cross.data.iter().map(|&v| v * v).collect();
    let ortho_loss = sorted_sum(&mut squares);
    let loss = align_loss + lambda_ortho * ortho_loss;

    // d regularizer: dShared = 2·Spec·Mᵀ, dSpec = 2·Shared·M
    let mut d_shared_mat = align_grads.d_seq.clone();
    let mut d_spec_mat = Mat::zeros(n, d_spec);
    if lambda_ortho > 0.0 {
        for i in 0..n {
            for a in 0..d_shared {
                let mut acc = 0.0;
                for b in 0..d_spec {
                    acc += cross.get(a, b) * spec.get(i, b);
                }
                d_shared_mat.data[i * d_shared + a] += lambda_ortho * 2.0 * acc;
            }
            for b in 0..d_spec {
                let mut acc = 0.0;
                for a in 0..d_shared {
                    acc += cross.get(a, b) * shared.get(i, a);
                }
                d_spec_mat.data[i * d_spec + b] = lambda_ortho * 2.0 * acc;
            }
        }
    }

    // chain through the projection head
    let d_out = batch.z_seq.cols;
    let mut d_seq = Mat::zeros(n, d_out);
    let mut d_proj_w = Mat::zeros(d_shared + d_spec, d_out);
    let mut d_proj_b = vec![0.0; d_shared + d_spec];
    let mut d_p = vec![0.0; d_shared + d_spec];
    for i in 0..n {
        d_p[..d_shared].copy_from_slice(d_shared_mat.row(i));
        d_p[d_shared..].copy_from_slice(d_spec_mat.row(i));
        proj.w.tmatvec_add(&d_p, d_seq.row_mut(i));
        d_proj_w.add_outer(1.0, &d_p, batch.z_seq.row(i));
        axpy(1.0, &d_p, &mut d_proj_b);
    }

    Ok((
        loss,
        OrthoGrads {
            d_seq,
            d_text: align_grads.d_text,
            d_proj_w,
            d_proj_b,
            d_log_tau: align_grads.d_log_tau,
        },
    ))
}
