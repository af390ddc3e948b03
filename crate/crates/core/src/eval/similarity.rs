use std::fmt::Write as _;

use ndarray::ArrayView2;

use super::classify::squared_distances;
use crate::error::{Error, Result};
use crate::gcn::CategoryEmbeddingTable;

/// Top-ranked categories for one received sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityRow {
    pub sample: usize,
    pub true_label: String,
    pub predicted: String,
    /// `(label, sim, confidence)`, best first. `sim` is the negative
    /// distance; confidence is its softmax over every category.
    pub top: Vec<(String, f64, f64)>,
}

/// Scores every row of `s_hat` against all categories and keeps the best
/// `top_n`.
pub fn similarity_report(
    s_hat: &ArrayView2<f64>,
    targets: &[usize],
    table: &CategoryEmbeddingTable,
    top_n: usize,
) -> Result<Vec<SimilarityRow>> {
    if table.is_empty() {
        return Err(Error::invalid("no candidate categories"));
    }
    if targets.len() != s_hat.nrows() {
        return Err(Error::DimMismatch {
            context: "similarity targets",
            expected: s_hat.nrows(),
            actual: targets.len(),
        });
    }
    if s_hat.ncols() != table.dim() {
        return Err(Error::DimMismatch {
            context: "similarity",
            expected: table.dim(),
            actual: s_hat.ncols(),
        });
    }
    let d2 = squared_distances(s_hat, &table.vectors().view());
    let mut out = Vec::with_capacity(targets.len());
    for (i, row) in d2.rows().into_iter().enumerate() {
        let sims: Vec<f64> = row.iter().map(|d| -d.sqrt()).collect();
        let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = sims.iter().map(|s| (s - max).exp()).sum();
        let mut order: Vec<usize> = (0..sims.len()).collect();
        // stable sort keeps ascending label order among ties, as classify does
        order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]));
        let top = order
            .iter()
            .take(top_n.max(1))
            .map(|&j| (table.label(j).to_string(), sims[j], (sims[j] - max).exp() / z))
            .collect();
        out.push(SimilarityRow {
            sample: i,
            true_label: table.label(targets[i]).to_string(),
            predicted: table.label(order[0]).to_string(),
            top,
        });
    }
    Ok(out)
}

/// `sample_id,true_label,predicted_label,label_1,score_1,confidence_1,...`.
pub fn similarity_csv(rows: &[SimilarityRow]) -> String {
    let n = rows.iter().map(|r| r.top.len()).max().unwrap_or(0);
    let mut out = String::from("sample_id,true_label,predicted_label");
    for k in 1..=n {
        let _ = write!(out, ",label_{k},score_{k},confidence_{k}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{},{},{}", r.sample, r.true_label, r.predicted);
        for (l, s, c) in &r.top {
            let _ = write!(out, ",{l},{s:.6},{c:.6}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::classify_batch;
    use crate::rng::rng_from;
    use ndarray::Array2;
    use rand::Rng as _;

    fn fixture() -> (Array2<f64>, CategoryEmbeddingTable) {
        let mut rng = rng_from(2);
        let table = CategoryEmbeddingTable::new(
            (0..8)
                .map(|i| (format!("c{i}"), i < 5, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()))
                .collect(),
        )
        .unwrap();
        let s = Array2::from_shape_simple_fn((40, 6), || rng.random_range(-1.0..1.0));
        (s, table)
    }

    #[test]
    fn sorted_and_consistent_with_classify() {
        let (s, table) = fixture();
        let targets = vec![0; 40];
        let rows = similarity_report(&s.view(), &targets, &table, 5).unwrap();
        let preds = classify_batch(&s.view(), &table.vectors().view()).unwrap();
        for (r, p) in rows.iter().zip(preds) {
            assert_eq!(r.top.len(), 5);
            assert!(r.top.windows(2).all(|w| w[0].1 >= w[1].1));
            assert_eq!(r.predicted, table.label(p));
            assert_eq!(r.top[0].0, r.predicted);
            let c: f64 = r.top.iter().map(|t| t.2).sum();
            assert!(c <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn confidences_sum_to_one_over_all() {
        let (s, table) = fixture();
        let rows = similarity_report(&s.view(), &[1; 40], &table, 8).unwrap();
        for r in &rows {
            assert!((r.top.iter().map(|t| t.2).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let csv = similarity_csv(&rows);
        assert_eq!(csv.lines().count(), 41);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 3 + 3 * 8);
    }
}
