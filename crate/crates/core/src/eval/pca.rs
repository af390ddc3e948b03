use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Principal-component projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// `(n, k)` coordinates of the centred inputs.
    pub coordinates: Array2<f64>,
    /// `(k, d)` unit directions, one per row.
    pub components: Array2<f64>,
    /// Share of total variance along each direction, descending.
    pub explained_ratio: Vec<f64>,
    /// Sample-covariance eigenvalues, all of them, descending.
    pub eigenvalues: Vec<f64>,
    pub mean: Array1<f64>,
}

/// Projects the rows of `x` onto their top `k` principal directions. Each
/// direction is signed so that its largest-magnitude entry is positive.
pub fn pca_project(x: &ArrayView2<f64>, k: usize) -> Result<Pca> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::invalid("PCA needs at least two vectors"));
    }
    if k > d {
        return Err(Error::invalid(format!("cannot keep {k} components of {d}-dimensional data")));
    }
    let mean = x.mean_axis(Axis(0)).expect("n >= 2");
    let centred = x - &mean;
    let scale = 1.0 / (n - 1) as f64;

    // Decompose the smaller of the covariance (d × d) and the Gram (n × n)
    // matrix; both share their non-zero spectrum.
    let (values, vectors) = if d <= n {
        let c = centred.t().dot(&centred) * scale;
        eigen_desc(&c)
    } else {
        let g = centred.dot(&centred.t()) * scale;
        let (vals, u) = eigen_desc(&g);
        // v = Xᵀu / ‖Xᵀu‖
        let mut v = centred.t().dot(&u);
        for mut col in v.columns_mut() {
            let norm = col.dot(&col).sqrt();
            if norm > 1e-12 {
                col.mapv_inplace(|c| c / norm);
            } else {
                col.fill(0.0);
            }
        }
        (vals, v)
    };
    let mut eigenvalues: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    eigenvalues.resize(d, 0.0);
    let total: f64 = eigenvalues.iter().sum();

    let mut components = Array2::zeros((k, d));
    for j in 0..k.min(vectors.ncols()) {
        let col = vectors.column(j);
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        components.row_mut(j).assign(&col.mapv(|v| v * sign));
    }
    let coordinates = centred.dot(&components.t());
    let explained_ratio = eigenvalues
        .iter()
        .take(k)
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(Pca {
        coordinates,
        components,
        explained_ratio,
        eigenvalues,
        mean,
    })
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending, eigenvectors as
/// columns.
fn eigen_desc(m: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let eig = SymmetricEigen::new(dm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng as _;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn line_has_one_component() {
        let x = Array2::from_shape_fn((6, 3), |(i, j)| i as f64 * [1.0, 2.0, -1.0][j]);
        let p = pca_project(&x.view(), 2).unwrap();
        assert!((p.explained_ratio[0] - 1.0).abs() < 1e-12);
        assert!(p.explained_ratio[1].abs() < 1e-12);
    }

    #[test]
    fn isotropic_gaussian_splits_evenly() {
        let mut rng = rng_from(4);
        let x = Array2::from_shape_simple_fn((20_000, 2), || StandardNormal.sample(&mut rng));
        let p = pca_project(&x.view(), 2).unwrap();
        for r in &p.explained_ratio {
            assert!((r - 0.5).abs() < 0.05, "{r}");
        }
    }

    #[test]
    fn reconstruction_error_is_trailing_spectrum() {
        let mut rng = rng_from(5);
        let x = Array2::from_shape_simple_fn((30, 6), || rng.random_range(-1.0..1.0));
        let p = pca_project(&x.view(), 2).unwrap();
        let recon = p.coordinates.dot(&p.components) + &p.mean;
        let err = (&x - &recon).mapv(|v| v * v).sum() / 29.0;
        let tail: f64 = p.eigenvalues[2..].iter().sum();
        assert!((err - tail).abs() < 1e-9, "{err} vs {tail}");
    }

    #[test]
    fn gram_path_matches_covariance_path() {
        let mut rng = rng_from(6);
        let wide = Array2::from_shape_simple_fn((5, 40), || rng.random_range(-1.0..1.0));
        let p = pca_project(&wide.view(), 3).unwrap();
        // every row of the components is unit length and orthogonal
        let g = p.components.dot(&p.components.t());
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - want).abs() < 1e-9);
            }
        }
        let total: f64 = p.eigenvalues.iter().sum();
        let var = (&wide - &p.mean).mapv(|v| v * v).sum() / 4.0;
        assert!((total - var).abs() < 1e-9);
    }

    #[test]
    fn order_invariant() {
        let mut rng = rng_from(7);
        let x = Array2::from_shape_simple_fn((12, 4), || rng.random_range(-1.0..1.0));
        let mut rev = x.clone();
        rev.invert_axis(Axis(0));
        let a = pca_project(&x.view(), 2).unwrap();
        let b = pca_project(&rev.view(), 2).unwrap();
        for (u, v) in a.components.iter().zip(b.components.iter()) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn errors() {
        assert!(pca_project(&Array2::zeros((1, 3)).view(), 1).is_err());
        assert!(pca_project(&Array2::zeros((4, 3)).view(), 4).is_err());
    }
}
