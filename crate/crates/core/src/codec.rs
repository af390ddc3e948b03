//! Semantic and channel encoder/decoder stacks.
//!
//! ```text
//! x ─S_α→ s ─H_β→ z  ~channel~  ẑ ─H⁻¹_β̂→ u ─S⁻¹_α̂→ ŝ
//! ```
//!
//! All maps work on row batches. The channel encoder ends in a per-row power
//! normalization so every transmitted vector has unit mean-square power.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nn::{relu_backward, Linear, Parameters, TensorRef};
use crate::rng::Rng;

/// Widths of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CodecDims {
    /// Input feature dimension `F`.
    pub feature: usize,
    /// Semantic dimension, shared with the category embeddings.
    pub semantic: usize,
    /// Channel symbols per vector `N_z`.
    pub symbols: usize,
}

impl Default for CodecDims {
    fn default() -> Self {
        Self {
            feature: 2048,
            semantic: 2049,
            symbols: 512,
        }
    }
}

fn check_width(context: &'static str, expected: usize, x: &ArrayView2<f64>) -> Result<()> {
    if x.ncols() == expected {
        Ok(())
    } else {
        Err(Error::DimMismatch {
            context,
            expected,
            actual: x.ncols(),
        })
    }
}

/// `z · √n / ‖z‖` per row.
pub fn power_normalize(z: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = z.ncols() as f64;
    let mut out = z.to_owned();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::invalid("cannot power-normalize a zero or non-finite vector"));
        }
        let scale = n.sqrt() / norm;
        row.mapv_inplace(|v| v * scale);
    }
    Ok(out)
}

/// Gradient through [`power_normalize`] given its input `z`, output `y` and
/// the upstream gradient `dy`.
fn power_normalize_backward(z: &Array2<f64>, y: &Array2<f64>, dy: &ArrayView2<f64>) -> Array2<f64> {
    let n = z.ncols() as f64;
    let mut dz = Array2::zeros(z.raw_dim());
    for (((mut out, zr), yr), dr) in dz.rows_mut().into_iter().zip(z.rows()).zip(y.rows()).zip(dy.rows()) {
        let scale = n.sqrt() / zr.dot(&zr).sqrt();
        let proj = yr.dot(&dr) / n;
        ndarray::Zip::from(&mut out)
            .and(&dr)
            .and(&yr)
            .for_each(|o, &d, &y| *o = scale * (d - y * proj));
    }
    dz
}

/// `S_α`: affine, ReLU, affine.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEncoder {
    pub hidden: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone)]
pub struct SemanticEncoderCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

impl SemanticEncoder {
    pub fn new(feature: usize, semantic: usize, rng: &mut Rng) -> Self {
        Self {
            hidden: Linear::new(feature, semantic, rng),
            output: Linear::new(semantic, semantic, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output.output_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden: self.hidden.zeros_like(),
            output: self.output.zeros_like(),
        }
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &ArrayView2<f64>) -> Result<(Array2<f64>, SemanticEncoderCache)> {
        check_width("semantic encoder input", self.input_dim(), x)?;
        let pre = self.hidden.forward(x);
        let hidden = pre.mapv(|v| v.max(0.0));
        let s = self.output.forward(&hidden.view());
        Ok((
            s,
            SemanticEncoderCache {
                input: x.to_owned(),
                pre,
                hidden,
            },
        ))
    }

    pub fn backward(&self, cache: &SemanticEncoderCache, ds: &ArrayView2<f64>, grad: &mut Self) -> Array2<f64> {
        let dh = self.output.backward(&cache.hidden.view(), ds, &mut grad.output);
        let dpre = relu_backward(&cache.pre, &dh.view());
        self.hidden.backward(&cache.input.view(), &dpre.view(), &mut grad.hidden)
    }
}

impl Parameters for SemanticEncoder {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = Vec::new();
        self.hidden.push_tensors("semantic_encoder.hidden", &mut v);
        self.output.push_tensors("semantic_encoder.output", &mut v);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        self.hidden.push_tensors_mut(&mut v);
        self.output.push_tensors_mut(&mut v);
        v
    }
}

/// `H_β`: affine followed by power normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEncoder {
    pub linear: Linear,
}

#[derive(Debug, Clone)]
pub struct ChannelEncoderCache {
    input: Array2<f64>,
    pre: Array2<f64>,
    output: Array2<f64>,
}

impl ChannelEncoder {
    pub fn new(semantic: usize, symbols: usize, rng: &mut Rng) -> Self {
        Self {
            linear: Linear::new(semantic, symbols, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            linear: self.linear.zeros_like(),
        }
    }

    pub fn forward(&self, s: &ArrayView2<f64>) -> Result<Array2<f64>> {
        check_width("channel encoder input", self.linear.input_dim(), s)?;
        power_normalize(&self.linear.forward(s).view())
    }

    pub fn forward_cached(&self, s: &ArrayView2<f64>) -> Result<(Array2<f64>, ChannelEncoderCache)> {
        check_width("channel encoder input", self.linear.input_dim(), s)?;
        let pre = self.linear.forward(s);
        let z = power_normalize(&pre.view())?;
        Ok((
            z.clone(),
            ChannelEncoderCache {
                input: s.to_owned(),
                pre,
                output: z,
            },
        ))
    }

    pub fn backward(&self, cache: &ChannelEncoderCache, dz: &ArrayView2<f64>, grad: &mut Self) -> Array2<f64> {
        let dpre = power_normalize_backward(&cache.pre, &cache.output, dz);
        self.linear.backward(&cache.input.view(), &dpre.view(), &mut grad.linear)
    }
}

impl Parameters for ChannelEncoder {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = Vec::new();
        self.linear.push_tensors("channel_encoder", &mut v);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.linear.tensors_mut()
    }
}

/// `H⁻¹_β̂`: affine followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDecoder {
    pub linear: Linear,
}

#[derive(Debug, Clone)]
pub struct ChannelDecoderCache {
    input: Array2<f64>,
    pre: Array2<f64>,
}

impl ChannelDecoder {
    pub fn new(symbols: usize, semantic: usize, rng: &mut Rng) -> Self {
        Self {
            linear: Linear::new(symbols, semantic, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            linear: self.linear.zeros_like(),
        }
    }

    pub fn forward(&self, z: &ArrayView2<f64>) -> Result<Array2<f64>> {
        check_width("channel decoder input", self.linear.input_dim(), z)?;
        Ok(self.linear.forward(z).mapv_into(|v| v.max(0.0)))
    }

    pub fn forward_cached(&self, z: &ArrayView2<f64>) -> Result<(Array2<f64>, ChannelDecoderCache)> {
        check_width("channel decoder input", self.linear.input_dim(), z)?;
        let pre = self.linear.forward(z);
        let out = pre.mapv(|v| v.max(0.0));
        Ok((
            out,
            ChannelDecoderCache {
                input: z.to_owned(),
                pre,
            },
        ))
    }

    pub fn backward(&self, cache: &ChannelDecoderCache, du: &ArrayView2<f64>, grad: &mut Self) -> Array2<f64> {
        let dpre = relu_backward(&cache.pre, du);
        self.linear.backward(&cache.input.view(), &dpre.view(), &mut grad.linear)
    }
}

impl Parameters for ChannelDecoder {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = Vec::new();
        self.linear.push_tensors("channel_decoder", &mut v);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.linear.tensors_mut()
    }
}

/// `S⁻¹_α̂`: a single affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticDecoder {
    pub linear: Linear,
}

impl SemanticDecoder {
    pub fn new(semantic: usize, rng: &mut Rng) -> Self {
        Self {
            linear: Linear::new(semantic, semantic, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            linear: self.linear.zeros_like(),
        }
    }

    pub fn forward(&self, u: &ArrayView2<f64>) -> Result<Array2<f64>> {
        check_width("semantic decoder input", self.linear.input_dim(), u)?;
        Ok(self.linear.forward(u))
    }

    pub fn backward(&self, input: &ArrayView2<f64>, ds: &ArrayView2<f64>, grad: &mut Self) -> Array2<f64> {
        self.linear.backward(input, ds, &mut grad.linear)
    }
}

impl Parameters for SemanticDecoder {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = Vec::new();
        self.linear.push_tensors("semantic_decoder", &mut v);
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.linear.tensors_mut()
    }
}

/// All four stages.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecStack {
    pub semantic_encoder: SemanticEncoder,
    pub channel_encoder: ChannelEncoder,
    pub channel_decoder: ChannelDecoder,
    pub semantic_decoder: SemanticDecoder,
}

impl CodecStack {
    pub fn new(dims: CodecDims, rng: &mut Rng) -> Self {
        Self {
            semantic_encoder: SemanticEncoder::new(dims.feature, dims.semantic, rng),
            channel_encoder: ChannelEncoder::new(dims.semantic, dims.symbols, rng),
            channel_decoder: ChannelDecoder::new(dims.symbols, dims.semantic, rng),
            semantic_decoder: SemanticDecoder::new(dims.semantic, rng),
        }
    }

    pub fn dims(&self) -> CodecDims {
        CodecDims {
            feature: self.semantic_encoder.input_dim(),
            semantic: self.semantic_encoder.output_dim(),
            symbols: self.channel_encoder.linear.output_dim(),
        }
    }

    /// `x → s → z`.
    pub fn transmit(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        let s = self.semantic_encoder.forward(x)?;
        self.channel_encoder.forward(&s.view())
    }

    /// `ẑ → ŝ`.
    pub fn receive(&self, z_hat: &ArrayView2<f64>) -> Result<Array2<f64>> {
        let u = self.channel_decoder.forward(z_hat)?;
        self.semantic_decoder.forward(&u.view())
    }
}

impl Parameters for CodecStack {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut v = self.semantic_encoder.tensors();
        v.extend(self.channel_encoder.tensors());
        v.extend(self.channel_decoder.tensors());
        v.extend(self.semantic_decoder.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.semantic_encoder.tensors_mut();
        v.extend(self.channel_encoder.tensors_mut());
        v.extend(self.channel_decoder.tensors_mut());
        v.extend(self.semantic_decoder.tensors_mut());
        v
    }
}

/// Mean of squared components per row.
pub fn mean_square(z: &ArrayView2<f64>) -> Array1<f64> {
    z.mapv(|v| v * v).mean_axis(Axis(1)).unwrap_or_else(|| Array1::zeros(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testing::{numeric_gradient, relative_error};
    use crate::rng::rng_from;
    use ndarray::{arr2, Array2};
    use proptest::prelude::{prop, prop_assert, prop_assume, proptest};
    use rand::Rng as _;

    fn random(r: usize, c: usize, rng: &mut Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
    }

    fn random_biases<P: Parameters>(p: &mut P, rng: &mut Rng) {
        // biases start at zero; perturb them so their gradient path is exercised
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
    }

    /// Checks every tensor of `model` and the input against central differences
    /// of `Σ probe ⊙ f(model, x)`.
    fn check<P: Parameters + Clone>(
        model: &P,
        x: &Array2<f64>,
        analytic: (&P, &Array2<f64>),
        loss: impl Fn(&P, &Array2<f64>) -> f64,
    ) {
        let grads: Vec<Vec<f64>> = analytic.0.tensors().iter().map(|t| t.data.to_vec()).collect();
        for (idx, want) in grads.iter().enumerate() {
            let mut values: Vec<f64> = model.clone().tensors_mut()[idx].to_vec();
            let numeric = numeric_gradient(&mut values, 1e-5, |v| {
                let mut m = model.clone();
                m.tensors_mut()[idx].copy_from_slice(v);
                loss(&m, x)
            });
            let err = relative_error(want, &numeric);
            assert!(err < 1e-4, "{}: {err}", analytic.0.tensors()[idx].name);
        }
        let mut xs = x.clone();
        let shape = x.raw_dim();
        let numeric = numeric_gradient(xs.as_slice_mut().unwrap(), 1e-5, |v| {
            loss(model, &Array2::from_shape_vec(shape, v.to_vec()).unwrap())
        });
        assert!(relative_error(analytic.1.as_slice().unwrap(), &numeric) < 1e-4);
    }

    #[test]
    fn power_normalize_examples() {
        let ones = arr2(&[[1.0, 1.0, 1.0, 1.0]]);
        assert_eq!(power_normalize(&ones.view()).unwrap(), ones);
        let spike = arr2(&[[2.0, 0.0, 0.0, 0.0]]);
        // rms of (2,0,0,0) is 1
        assert_eq!(power_normalize(&spike.view()).unwrap(), spike);
        assert!(power_normalize(&arr2(&[[0.0, 0.0]]).view()).is_err());
    }

    proptest! {
        #[test]
        fn power_normalize_contract(v in prop::collection::vec(-10.0f64..10.0, 2..40), k in 0.01f64..100.0) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let z = Array2::from_shape_vec((1, v.len()), v).unwrap();
            let y = power_normalize(&z.view()).unwrap();
            prop_assert!((mean_square(&y.view())[0] - 1.0).abs() < 1e-9);
            let again = power_normalize(&y.view()).unwrap();
            let scaled = power_normalize(&(&z * k).view()).unwrap();
            for ((a, b), c) in y.iter().zip(again.iter()).zip(scaled.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
                prop_assert!((a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut rng = rng_from(1);
        let mut enc = SemanticEncoder::new(3, 4, &mut rng);
        enc.hidden = Linear::zeros(3, 4);
        enc.output = Linear::zeros(4, 4);
        enc.output.bias.fill(0.25);
        let out = enc.forward(&random(5, 3, &mut rng).view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn identity_encoder_is_relu() {
        let mut rng = rng_from(2);
        let mut enc = SemanticEncoder::new(6, 6, &mut rng);
        enc.hidden.weight = Array2::eye(6);
        enc.output.weight = Array2::eye(6);
        let x = random(4, 6, &mut rng);
        assert_eq!(enc.forward(&x.view()).unwrap(), x.mapv(|v| v.max(0.0)));
    }

    #[test]
    fn dimension_errors() {
        let mut rng = rng_from(3);
        let c = CodecStack::new(
            CodecDims {
                feature: 5,
                semantic: 6,
                symbols: 4,
            },
            &mut rng,
        );
        assert!(matches!(c.transmit(&Array2::zeros((1, 4)).view()), Err(Error::DimMismatch { .. })));
        assert!(matches!(c.receive(&Array2::zeros((1, 5)).view()), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn channel_symbols_have_unit_power() {
        let mut rng = rng_from(4);
        let c = CodecStack::new(
            CodecDims {
                feature: 8,
                semantic: 10,
                symbols: 6,
            },
            &mut rng,
        );
        let z = c.transmit(&random(20, 8, &mut rng).view()).unwrap();
        for p in mean_square(&z.view()) {
            assert!((p - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn toy_inverse_pair_recovers_input() {
        // identity maps everywhere: power normalization is a no-op on
        // unit-power input and the decoder ReLU is a no-op on positive input
        let mut rng = rng_from(5);
        let mut c = CodecStack::new(
            CodecDims {
                feature: 4,
                semantic: 4,
                symbols: 4,
            },
            &mut rng,
        );
        c.channel_encoder.linear.weight = Array2::eye(4);
        c.channel_decoder.linear.weight = Array2::eye(4);
        c.semantic_decoder.linear.weight = Array2::eye(4);
        let s = arr2(&[[1.0, 1.0, 1.0, 1.0], [2.0, 0.5, 0.1, 1.2]]);
        let s = power_normalize(&s.view()).unwrap();
        let z = c.channel_encoder.forward(&s.view()).unwrap();
        let s_hat = c.receive(&z.view()).unwrap();
        for (a, b) in s.iter().zip(s_hat.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn semantic_encoder_gradients() {
        let mut rng = rng_from(6);
        let mut enc = SemanticEncoder::new(5, 7, &mut rng);
        random_biases(&mut enc, &mut rng);
        let x = random(4, 5, &mut rng);
        let probe = random(4, 7, &mut rng);
        let (_, cache) = enc.forward_cached(&x.view()).unwrap();
        let mut grad = enc.zeros_like();
        let dx = enc.backward(&cache, &probe.view(), &mut grad);
        check(&enc, &x, (&grad, &dx), |m, x| (m.forward(&x.view()).unwrap() * &probe).sum());
    }

    #[test]
    fn channel_encoder_gradients() {
        let mut rng = rng_from(7);
        let mut enc = ChannelEncoder::new(6, 5, &mut rng);
        random_biases(&mut enc, &mut rng);
        let s = random(3, 6, &mut rng);
        let probe = random(3, 5, &mut rng);
        let (_, cache) = enc.forward_cached(&s.view()).unwrap();
        let mut grad = enc.zeros_like();
        let ds = enc.backward(&cache, &probe.view(), &mut grad);
        check(&enc, &s, (&grad, &ds), |m, s| (m.forward(&s.view()).unwrap() * &probe).sum());
    }

    #[test]
    fn channel_decoder_gradients() {
        let mut rng = rng_from(8);
        let mut dec = ChannelDecoder::new(5, 6, &mut rng);
        random_biases(&mut dec, &mut rng);
        let z = random(3, 5, &mut rng);
        let probe = random(3, 6, &mut rng);
        let (_, cache) = dec.forward_cached(&z.view()).unwrap();
        let mut grad = dec.zeros_like();
        let dz = dec.backward(&cache, &probe.view(), &mut grad);
        check(&dec, &z, (&grad, &dz), |m, z| (m.forward(&z.view()).unwrap() * &probe).sum());
    }

    #[test]
    fn semantic_decoder_gradients() {
        let mut rng = rng_from(9);
        let dec = SemanticDecoder::new(6, &mut rng);
        let u = random(3, 6, &mut rng);
        let probe = random(3, 6, &mut rng);
        let mut grad = dec.zeros_like();
        let du = dec.backward(&u.view(), &probe.view(), &mut grad);
        check(&dec, &u, (&grad, &du), |m, u| (m.forward(&u.view()).unwrap() * &probe).sum());
    }

    #[test]
    fn end_to_end_chain_gradients() {
        let mut rng = rng_from(10);
        let dims = CodecDims {
            feature: 6,
            semantic: 6,
            symbols: 6,
        };
        let mut c = CodecStack::new(dims, &mut rng);
        random_biases(&mut c, &mut rng);
        let x = random(3, 6, &mut rng);
        let probe = random(3, 6, &mut rng);

        let (s, c1) = c.semantic_encoder.forward_cached(&x.view()).unwrap();
        let (z, c2) = c.channel_encoder.forward_cached(&s.view()).unwrap();
        let (u, c3) = c.channel_decoder.forward_cached(&z.view()).unwrap();
        let mut g = CodecStack {
            semantic_encoder: c.semantic_encoder.zeros_like(),
            channel_encoder: c.channel_encoder.zeros_like(),
            channel_decoder: c.channel_decoder.zeros_like(),
            semantic_decoder: c.semantic_decoder.zeros_like(),
        };
        let du = c.semantic_decoder.backward(&u.view(), &probe.view(), &mut g.semantic_decoder);
        let dz = c.channel_decoder.backward(&c3, &du.view(), &mut g.channel_decoder);
        let ds = c.channel_encoder.backward(&c2, &dz.view(), &mut g.channel_encoder);
        let dx = c.semantic_encoder.backward(&c1, &ds.view(), &mut g.semantic_encoder);
        check(&c, &x, (&g, &dx), |m, x| {
            let z = m.transmit(&x.view()).unwrap();
            (m.receive(&z.view()).unwrap() * &probe).sum()
        });
    }

    #[test]
    fn pure_maps() {
        let mut rng = rng_from(11);
        let c = CodecStack::new(
            CodecDims {
                feature: 5,
                semantic: 7,
                symbols: 3,
            },
            &mut rng,
        );
        let x = random(4, 5, &mut rng);
        assert_eq!(c.transmit(&x.view()).unwrap(), c.transmit(&x.view()).unwrap());
    }
}
