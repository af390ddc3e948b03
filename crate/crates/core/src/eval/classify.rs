use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::gcn::CategoryEmbeddingTable;

/// Nearest category to `s_hat`. Ties go to the smaller label, since the
/// table is sorted by label.
pub fn classify<'t>(s_hat: ArrayView1<f64>, table: &'t CategoryEmbeddingTable) -> Result<&'t str> {
    if table.is_empty() {
        return Err(Error::invalid("no candidate categories"));
    }
    if s_hat.len() != table.dim() {
        return Err(Error::DimMismatch {
            context: "classify",
            expected: table.dim(),
            actual: s_hat.len(),
        });
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, row) in table.vectors().rows().into_iter().enumerate() {
        let d: f64 = row.iter().zip(s_hat).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Ok(table.label(best))
}

/// Squared distances from every row of `s` to every row of `phi`, via
/// `‖s‖² − 2 s·φ + ‖φ‖²`.
pub fn squared_distances(s: &ArrayView2<f64>, phi: &ArrayView2<f64>) -> ndarray::Array2<f64> {
    let sn: Array1<f64> = s.rows().into_iter().map(|r| r.dot(&r)).collect();
    let pn: Array1<f64> = phi.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut d = s.dot(&phi.t());
    for ((i, j), v) in d.indexed_iter_mut() {
        *v = (sn[i] - 2.0 * *v + pn[j]).max(0.0);
    }
    d
}

/// Index of the nearest row of `phi` for every row of `s`; first index wins
/// ties.
pub fn classify_batch(s: &ArrayView2<f64>, phi: &ArrayView2<f64>) -> Result<Vec<usize>> {
    if phi.nrows() == 0 {
        return Err(Error::invalid("no candidate categories"));
    }
    if s.ncols() != phi.ncols() {
        return Err(Error::DimMismatch {
            context: "classify",
            expected: phi.ncols(),
            actual: s.ncols(),
        });
    }
    let d = squared_distances(s, phi);
    Ok(d.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v < r[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}
