use ndarray::{Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How distance enters the category softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimSign {
    /// `sim(a, b) = −‖a − b‖`: nearer categories score higher.
    #[default]
    Negative,
    /// `sim(a, b) = +‖a − b‖`, kept only for comparison runs.
    Literal,
}

impl SimSign {
    fn factor(self) -> f64 {
        match self {
            SimSign::Negative => -1.0,
            SimSign::Literal => 1.0,
        }
    }
}

fn check_dims(context: &'static str, a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimMismatch {
            context,
            expected: a,
            actual: b,
        })
    }
}

/// `−‖a − b‖`.
pub fn sim(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    check_dims("similarity", a.len(), b.len())?;
    Ok(-distance(a, b))
}

pub(crate) fn distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `log Σ exp(v)` with the maximum factored out.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Softmax cross-entropy over categories for one semantic vector.
/// `phi` holds one category embedding per row.
pub fn stage_one_loss(s: ArrayView1<f64>, y: usize, phi: ArrayView2<f64>, sign: SimSign) -> Result<f64> {
    check_dims("stage-one loss", phi.ncols(), s.len())?;
    if y >= phi.nrows() {
        return Err(Error::NotFound {
            kind: "category index",
            name: y.to_string(),
        });
    }
    let logits: Vec<f64> = phi.rows().into_iter().map(|p| sign.factor() * distance(s, p)).collect();
    Ok(log_sum_exp(&logits) - logits[y])
}

/// Batch-mean stage-one loss with gradients.
#[derive(Debug, Clone)]
pub struct StageOneBatch {
    pub loss: f64,
    /// Fraction of rows whose highest-scoring category is the label.
    pub accuracy: f64,
    pub ds: Array2<f64>,
    pub dphi: Array2<f64>,
}

pub fn stage_one_batch(s: &ArrayView2<f64>, labels: &[usize], phi: &ArrayView2<f64>, sign: SimSign) -> Result<StageOneBatch> {
    check_dims("stage-one loss", phi.ncols(), s.ncols())?;
    check_dims("stage-one labels", s.nrows(), labels.len())?;
    if s.nrows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let b = s.nrows() as f64;
    let k = phi.nrows();
    let mut ds = Array2::zeros(s.raw_dim());
    let mut dphi = Array2::zeros(phi.raw_dim());
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut dist = vec![0.0; k];
    let mut logits = vec![0.0; k];
    for (i, (row, &y)) in s.rows().into_iter().zip(labels).enumerate() {
        if y >= k {
            return Err(Error::NotFound {
                kind: "category index",
                name: y.to_string(),
            });
        }
        for j in 0..k {
            dist[j] = distance(row, phi.row(j));
            logits[j] = sign.factor() * dist[j];
        }
        let lse = log_sum_exp(&logits);
        loss += lse - logits[y];
        let best = (0..k).max_by(|&a, &c| logits[a].total_cmp(&logits[c]).then(c.cmp(&a))).unwrap_or(0);
        correct += usize::from(best == y);
        let mut ds_row = ds.row_mut(i);
        for j in 0..k {
            let p = (logits[j] - lse).exp();
            let g = (p - f64::from(u8::from(j == y))) / b;
            // d‖s − φ‖/ds = (s − φ)/‖s − φ‖; zero at coincidence
            if dist[j] > 0.0 && g != 0.0 {
                let c = g * sign.factor() / dist[j];
                let mut dp = dphi.row_mut(j);
                Zip::from(&mut ds_row)
                    .and(&mut dp)
                    .and(&row)
                    .and(&phi.row(j))
                    .for_each(|d, q, &sv, &pv| {
                        let t = c * (sv - pv);
                        *d += t;
                        *q -= t;
                    });
            }
        }
    }
    Ok(StageOneBatch {
        loss: loss / b,
        accuracy: correct as f64 / b,
        ds,
        dphi,
    })
}

/// The two parts of the stage-two objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageTwoTerms {
    pub recovery: f64,
    pub alignment: f64,
    pub total: f64,
}

/// `‖ŝ − s‖² + λ‖ŝ − φ_y‖²`.
pub fn stage_two_loss(
    s_hat: ArrayView1<f64>,
    s_clean: ArrayView1<f64>,
    phi_y: ArrayView1<f64>,
    lambda: f64,
) -> Result<StageTwoTerms> {
    check_dims("stage-two loss", s_hat.len(), s_clean.len())?;
    check_dims("stage-two loss", s_hat.len(), phi_y.len())?;
    if lambda < 0.0 {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let recovery = distance(s_hat, s_clean).powi(2);
    let alignment = distance(s_hat, phi_y).powi(2);
    Ok(StageTwoTerms {
        recovery,
        alignment,
        total: recovery + lambda * alignment,
    })
}

/// Batch means of the stage-two terms and `d total / d ŝ`.
pub fn stage_two_batch(
    s_hat: &ArrayView2<f64>,
    s_clean: &ArrayView2<f64>,
    phi_y: &ArrayView2<f64>,
    lambda: f64,
) -> Result<(StageTwoTerms, Array2<f64>)> {
    if s_hat.shape() != s_clean.shape() || s_hat.shape() != phi_y.shape() {
        return Err(Error::DimMismatch {
            context: "stage-two batch",
            expected: s_hat.len(),
            actual: s_clean.len().min(phi_y.len()),
        });
    }
    if s_hat.nrows() == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let b = s_hat.nrows() as f64;
    let r = s_hat - s_clean;
    let a = s_hat - phi_y;
    let recovery = r.mapv(|v| v * v).sum() / b;
    let alignment = a.mapv(|v| v * v).sum() / b;
    let grad = (r * 2.0 + a * (2.0 * lambda)) / b;
    Ok((
        StageTwoTerms {
            recovery,
            alignment,
            total: recovery + lambda * alignment,
        },
        grad,
    ))
}

/// Row-wise `argmax sim`, the stage-one prediction rule.
pub fn nearest(s: ArrayView1<f64>, phi: &ArrayView2<f64>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, p) in phi.rows().into_iter().enumerate() {
        let d = distance(s, p);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}
