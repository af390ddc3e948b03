//! Dense building blocks with hand-written backward passes. Batches are
//! row-major: one sample (or graph node) per row.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use sha2::{Digest, Sha256};

use crate::rng::Rng;

/// A named view of one trainable tensor.
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

/// Uniform access to every trainable tensor of a model, in a fixed order.
/// `tensors` and `tensors_mut` must list the same tensors in the same order.
pub trait Parameters {
    fn tensors(&self) -> Vec<TensorRef<'_>>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }
}

/// SHA-256 over every tensor's shape and little-endian contents.
pub fn parameter_checksum<P: Parameters + ?Sized>(p: &P) -> [u8; 32] {
    let mut h = Sha256::new();
    for t in p.tensors() {
        h.update(t.name.as_bytes());
        for d in &t.shape {
            h.update((*d as u64).to_le_bytes());
        }
        for x in t.data {
            h.update(x.to_le_bytes());
        }
    }
    h.finalize().into()
}

pub(crate) fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameter arrays are contiguous")
}

pub(crate) fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter arrays are contiguous")
}

pub(crate) fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("parameter arrays are contiguous")
}

pub(crate) fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter arrays are contiguous")
}

/// Uniform in ±√(6 / (fan_in + fan_out)).
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

/// `y = x Wᵀ + b` with `W` stored as `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Self {
        Self {
            weight: glorot_uniform(output, input, rng),
            bias: Array1::zeros(output),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((output, input)),
            bias: Array1::zeros(output),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.output_dim())
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &ArrayView2<f64>, dy: &ArrayView2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight)
    }

    pub(crate) fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<TensorRef<'a>>) {
        out.push(TensorRef {
            name: format!("{prefix}.weight"),
            shape: self.weight.shape().to_vec(),
            data: slice2(&self.weight),
        });
        out.push(TensorRef {
            name: format!("{prefix}.bias"),
            shape: vec![self.bias.len()],
            data: slice1(&self.bias),
        });
    }

    pub(crate) fn push_tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(slice2_mut(&mut self.weight));
        out.push(slice1_mut(&mut self.bias));
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = Vec::new();
        self.push_tensors("linear", &mut v);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        self.push_tensors_mut(&mut v);
        v
    }
}

pub fn relu(x: Array2<f64>) -> Array2<f64> {
    x.mapv_into(|v| v.max(0.0))
}

/// Masks `dy` by `pre > 0`.
pub fn relu_backward(pre: &Array2<f64>, dy: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = dy.to_owned();
    ndarray::Zip::from(&mut out).and(pre).for_each(|d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    out
}

/// Layer normalization of a single vector with the biased variance.
pub fn layer_norm(k: ArrayView1<f64>, gamma: ArrayView1<f64>, eta: ArrayView1<f64>, eps: f64) -> Array1<f64> {
    let n = k.len() as f64;
    let mean = k.sum() / n;
    let var = k.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    let mut out = k.mapv(|x| (x - mean) * inv);
    out *= &gamma;
    out += &eta;
    out
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Row-wise layer normalization. Returns the output and what the backward
/// pass needs.
pub fn layer_norm_rows(
    x: &Array2<f64>,
    gamma: &Array1<f64>,
    eta: &Array1<f64>,
    eps: f64,
) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut normalized = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv = 1.0 / (var + eps).sqrt();
        let s = *inv;
        row.mapv_inplace(|v| v * s);
    }
    let out = &normalized * gamma + eta;
    (out, LayerNormCache { normalized, inv_std })
}

/// Returns `(dx, dgamma, deta)`.
pub fn layer_norm_rows_backward(
    dy: &Array2<f64>,
    cache: &LayerNormCache,
    gamma: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let d = dy.ncols() as f64;
    let dgamma = (dy * &cache.normalized).sum_axis(Axis(0));
    let deta = dy.sum_axis(Axis(0));
    let dxhat = dy * gamma;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((mut out, g), xh), &inv) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(cache.normalized.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        ndarray::Zip::from(&mut out)
            .and(&g)
            .and(&xh)
            .for_each(|o, &gi, &xi| *o = inv * (gi - mean_g - xi * mean_gx));
    }
    (dx, dgamma, deta)
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use crate::rng::rng_from;
    use ndarray::{arr1, Array};
    use proptest::prelude::*;

    #[test]
    fn constant_vector_normalizes_to_zero() {
        let out = layer_norm(arr1(&[3.0; 5]).view(), arr1(&[1.0; 5]).view(), arr1(&[0.0; 5]).view(), 1e-3);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_vector() {
        // σ² = 1, so with ε → 0 the output is the input
        let out = layer_norm(arr1(&[1.0, -1.0]).view(), arr1(&[1.0, 1.0]).view(), arr1(&[0.0, 0.0]).view(), 1e-15);
        assert!((out[0] - 1.0).abs() < 1e-12 && (out[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_scale_gives_shift() {
        let eta = arr1(&[0.5, -2.0, 7.0]);
        let out = layer_norm(arr1(&[1.0, 4.0, -9.0]).view(), arr1(&[0.0; 3]).view(), eta.view(), 1e-3);
        assert_eq!(out, eta);
    }

    proptest! {
        #[test]
        fn normalized_mean_and_variance(v in prop::collection::vec(-100.0f64..100.0, 2..64)) {
            let n = v.len();
            let k = Array::from(v);
            let out = layer_norm(k.view(), Array1::ones(n).view(), Array1::zeros(n).view(), 1e-3);
            let mean = out.sum() / n as f64;
            prop_assert!(mean.abs() < 1e-7);
            let kmean = k.sum() / n as f64;
            let kvar = k.iter().map(|x| (x - kmean).powi(2)).sum::<f64>() / n as f64;
            let var = out.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!((var - kvar / (kvar + 1e-3)).abs() < 1e-9);
        }
    }

    #[test]
    fn rows_agree_with_single_vector() {
        let mut rng = rng_from(3);
        let x = glorot_uniform(4, 6, &mut rng) * 10.0;
        let gamma = glorot_uniform(1, 6, &mut rng).row(0).to_owned();
        let eta = glorot_uniform(1, 6, &mut rng).row(0).to_owned();
        let (rows, _) = layer_norm_rows(&x, &gamma, &eta, 1e-3);
        for i in 0..4 {
            let single = layer_norm(x.row(i), gamma.view(), eta.view(), 1e-3);
            for j in 0..6 {
                assert!((rows[[i, j]] - single[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = rng_from(5);
        let x = glorot_uniform(3, 7, &mut rng) * 3.0;
        let mut gamma = glorot_uniform(1, 7, &mut rng).row(0).to_owned() + 1.0;
        let eta = glorot_uniform(1, 7, &mut rng).row(0).to_owned();
        let probe = glorot_uniform(3, 7, &mut rng);
        let loss = |x: &Array2<f64>, g: &Array1<f64>| (layer_norm_rows(x, g, &eta, 1e-3).0 * &probe).sum();

        let (_, cache) = layer_norm_rows(&x, &gamma, &eta, 1e-3);
        let (dx, dgamma, deta) = layer_norm_rows_backward(&probe, &cache, &gamma);

        let mut xs = x.clone();
        let shape = xs.raw_dim();
        let num_x = numeric_gradient(xs.as_slice_mut().unwrap(), 1e-5, |v| {
            loss(&Array2::from_shape_vec(shape, v.to_vec()).unwrap(), &gamma)
        });
        assert!(relative_error(dx.as_slice().unwrap(), &num_x) < 1e-7);

        let g0 = gamma.clone();
        let num_g = numeric_gradient(gamma.as_slice_mut().unwrap(), 1e-5, |v| loss(&x, &Array1::from(v.to_vec())));
        assert_eq!(gamma, g0);
        assert!(relative_error(dgamma.as_slice().unwrap(), &num_g) < 1e-7);
        // deta is the column sum of the probe
        assert!(relative_error(deta.as_slice().unwrap(), probe.sum_axis(Axis(0)).as_slice().unwrap()) < 1e-14);
    }

    #[test]
    fn linear_gradients() {
        let mut rng = rng_from(9);
        let mut layer = Linear::new(5, 3, &mut rng);
        layer.bias = arr1(&[0.1, -0.2, 0.3]);
        let x = glorot_uniform(4, 5, &mut rng);
        let probe = glorot_uniform(4, 3, &mut rng);
        let mut grad = layer.zeros_like();
        let dx = layer.backward(&x.view(), &probe.view(), &mut grad);

        let mut w = layer.weight.clone();
        let num_w = numeric_gradient(slice2_mut(&mut w), 1e-5, |v| {
            let mut l = layer.clone();
            l.weight = Array2::from_shape_vec((3, 5), v.to_vec()).unwrap();
            (l.forward(&x.view()) * &probe).sum()
        });
        assert!(relative_error(slice2(&grad.weight), &num_w) < 1e-8);

        let mut xs = x.clone();
        let num_x = numeric_gradient(slice2_mut(&mut xs), 1e-5, |v| {
            let xv = Array2::from_shape_vec((4, 5), v.to_vec()).unwrap();
            (layer.forward(&xv.view()) * &probe).sum()
        });
        assert!(relative_error(dx.as_slice().unwrap(), &num_x) < 1e-8);
        assert!(relative_error(slice1(&grad.bias), probe.sum_axis(Axis(0)).as_slice().unwrap()) < 1e-14);
    }

    #[test]
    fn relu_mask() {
        let pre = Array2::from_shape_vec((1, 3), vec![-1.0, 0.0, 2.0]).unwrap();
        let dy = Array2::from_shape_vec((1, 3), vec![5.0, 5.0, 5.0]).unwrap();
        assert_eq!(relu_backward(&pre, &dy.view()).row(0).to_vec(), [0.0, 0.0, 5.0]);
        assert_eq!(relu(pre).row(0).to_vec(), [0.0, 0.0, 2.0]);
    }

    #[test]
    fn checksum_tracks_contents() {
        let mut rng = rng_from(1);
        let mut a = Linear::new(3, 2, &mut rng);
        let before = parameter_checksum(&a);
        assert_eq!(before, parameter_checksum(&a.clone()));
        a.bias[1] += 1e-12;
        assert_ne!(before, parameter_checksum(&a));
    }
}
