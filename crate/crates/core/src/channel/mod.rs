//! Physical channel simulation.
//!
//! The analog channel is `ẑ = h z + n` with `n ~ N(0, σ²)` per component and
//! unit signal power, so the SNR alone fixes `σ`. The digital chain quantizes
//! each component, maps the bits onto Gray-coded 16-QAM, adds complex AWGN at
//! the configured per-symbol `Es/N0`, slices and dequantizes.

mod qam;
mod quant;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};

pub use qam::{qam16_constellation, qam16_demodulate, qam16_modulate, qam16_scale, Complex};
pub use quant::{dequantize, quantize, QamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelMode {
    #[default]
    Analog,
    Digital16qam,
}

impl fmt::Display for ChannelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelMode::Analog => "analog",
            ChannelMode::Digital16qam => "digital16qam",
        })
    }
}

impl FromStr for ChannelMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analog" => Ok(ChannelMode::Analog),
            "digital16qam" | "digital" | "16qam" => Ok(ChannelMode::Digital16qam),
            other => Err(Error::invalid(format!("unknown channel mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub gain: f64,
    pub snr_db: f64,
    pub mode: ChannelMode,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gain) {
            return Err(Error::invalid(format!("channel gain {} outside [0, 1]", self.gain)));
        }
        if self.snr_db.is_nan() {
            return Err(Error::invalid("SNR is NaN"));
        }
        Ok(())
    }
}

/// `σ = √(P / 10^(snr/10))`. An infinite SNR gives `σ = 0`.
pub fn snr_to_sigma(snr_db: f64, signal_power: f64) -> Result<f64> {
    if signal_power <= 0.0 || !signal_power.is_finite() {
        return Err(Error::invalid(format!("signal power must be positive, got {signal_power}")));
    }
    Ok((signal_power / 10f64.powf(snr_db / 10.0)).sqrt())
}

/// `h z + σ n` with one `σ` for every component.
pub fn awgn_analog(z: &ArrayView2<f64>, gain: f64, sigma: f64, rng: &mut Rng) -> Array2<f64> {
    z.mapv(|v| {
        let n: f64 = StandardNormal.sample(rng);
        gain * v + sigma * n
    })
}

/// `h z + σ_i n` with a separate `σ_i` for row `i`.
pub fn awgn_rows(z: &ArrayView2<f64>, gain: f64, sigmas: &[f64], rng: &mut Rng) -> Result<Array2<f64>> {
    if sigmas.len() != z.nrows() {
        return Err(Error::DimMismatch {
            context: "per-row noise levels",
            expected: z.nrows(),
            actual: sigmas.len(),
        });
    }
    let mut out = z.to_owned();
    for (mut row, &s) in out.rows_mut().into_iter().zip(sigmas) {
        row.mapv_inplace(|v| {
            let n: f64 = StandardNormal.sample(rng);
            gain * v + s * n
        });
    }
    Ok(out)
}

/// Quantize → 16-QAM → complex AWGN at `es_n0_db` → slice → dequantize.
/// Bit streams that do not fill a whole symbol are zero-padded.
pub fn digital_channel(
    z: &ArrayView2<f64>,
    gain: f64,
    es_n0_db: f64,
    q: &QamConfig,
    rng: &mut Rng,
) -> Result<Array2<f64>> {
    let flat: Vec<f64> = z.iter().copied().collect();
    let mut bits = quantize(&flat, q);
    let payload = bits.len();
    bits.resize(payload.div_ceil(4) * 4, 0);
    let mut symbols = qam16_modulate(&bits)?;
    // N0 = Es / 10^(Es/N0 / 10) with Es = 1, split over two real dimensions
    let sigma = if es_n0_db.is_infinite() && es_n0_db > 0.0 {
        0.0
    } else {
        (10f64.powf(-es_n0_db / 10.0) / 2.0).sqrt()
    };
    for s in &mut symbols {
        let nr: f64 = StandardNormal.sample(rng);
        let ni: f64 = StandardNormal.sample(rng);
        *s = Complex::new(gain * s.re + sigma * nr, gain * s.im + sigma * ni);
    }
    let mut received = qam16_demodulate(&symbols);
    received.truncate(payload);
    let values = dequantize(&received, q)?;
    Array2::from_shape_vec(z.raw_dim(), values).map_err(|e| Error::invalid(e.to_string()))
}

/// A configured channel owning its noise stream.
#[derive(Debug, Clone)]
pub struct Channel {
    cfg: ChannelConfig,
    qam: Option<QamConfig>,
    rng: Rng,
}

impl Channel {
    pub fn new(cfg: ChannelConfig, qam: Option<QamConfig>) -> Result<Self> {
        cfg.validate()?;
        if cfg.mode == ChannelMode::Digital16qam && qam.is_none() {
            return Err(Error::invalid("digital channel needs a quantizer configuration"));
        }
        Ok(Self {
            rng: rng_from(cfg.seed),
            cfg,
            qam,
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.cfg
    }

    pub fn transmit(&mut self, z: &ArrayView2<f64>) -> Result<Array2<f64>> {
        match (self.cfg.mode, &self.qam) {
            (ChannelMode::Analog, _) => {
                let sigma = snr_to_sigma(self.cfg.snr_db, 1.0)?;
                Ok(awgn_analog(z, self.cfg.gain, sigma, &mut self.rng))
            }
            (ChannelMode::Digital16qam, Some(q)) => digital_channel(z, self.cfg.gain, self.cfg.snr_db, q, &mut self.rng),
            (ChannelMode::Digital16qam, None) => unreachable!("checked in Channel::new"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng as _;
    use statrs::function::erf::erfc;

    fn q_function(x: f64) -> f64 {
        0.5 * erfc(x / 2f64.sqrt())
    }

    /// Textbook square 16-QAM symbol error rate.
    fn ser_closed_form(es_n0_db: f64) -> f64 {
        let es_n0 = 10f64.powf(es_n0_db / 10.0);
        let p = 1.5 * q_function((es_n0 / 5.0).sqrt());
        1.0 - (1.0 - p).powi(2)
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(snr_to_sigma(0.0, 1.0).unwrap(), 1.0);
        assert!((snr_to_sigma(10.0, 1.0).unwrap() - 0.316_227_766).abs() < 1e-8);
        assert!((snr_to_sigma(-10.0, 1.0).unwrap() - 3.162_277_660).abs() < 1e-8);
        assert_eq!(snr_to_sigma(f64::INFINITY, 1.0).unwrap(), 0.0);
        assert!(snr_to_sigma(0.0, 0.0).is_err());
    }

    #[test]
    fn noiseless_analog_is_identity() {
        let z = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64 - 5.0);
        let out = awgn_analog(&z.view(), 1.0, 0.0, &mut rng_from(0));
        assert_eq!(out, z);
    }

    #[test]
    fn noise_variance_matches_sigma() {
        for snr in [-10.0, 0.0, 15.0] {
            let sigma = snr_to_sigma(snr, 1.0).unwrap();
            let z = Array2::ones((1000, 1000));
            let out = awgn_analog(&z.view(), 0.0, sigma, &mut rng_from(snr as u64 + 100));
            let var = out.mapv(|v| v * v).mean().unwrap();
            assert!((var / (sigma * sigma) - 1.0).abs() < 0.02, "snr {snr}: {var}");
        }
    }

    #[test]
    fn empirical_snr_within_a_tenth_db() {
        let mut rng = rng_from(9);
        let z = Array2::from_shape_simple_fn((1000, 1000), || if rng.random::<bool>() { 1.0 } else { -1.0 });
        for snr in [-10.0, 0.0, 10.0] {
            let sigma = snr_to_sigma(snr, 1.0).unwrap();
            let out = awgn_analog(&z.view(), 1.0, sigma, &mut rng_from(1));
            let noise = &out - &z;
            let measured = 10.0 * (z.mapv(|v| v * v).mean().unwrap() / noise.mapv(|v| v * v).mean().unwrap()).log10();
            assert!((measured - snr).abs() < 0.1, "{snr} vs {measured}");
        }
    }

    #[test]
    fn analog_is_reproducible() {
        let z = Array2::ones((4, 8));
        let a = awgn_analog(&z.view(), 0.7, 0.5, &mut rng_from(5));
        let b = awgn_analog(&z.view(), 0.7, 0.5, &mut rng_from(5));
        assert_eq!(a, b);
    }

    #[test]
    fn per_row_noise() {
        let z = Array2::zeros((2, 100_000));
        let out = awgn_rows(&z.view(), 1.0, &[0.0, 2.0], &mut rng_from(2)).unwrap();
        assert!(out.row(0).iter().all(|&v| v == 0.0));
        let var = out.row(1).mapv(|v| v * v).mean().unwrap();
        assert!((var / 4.0 - 1.0).abs() < 0.02);
        assert!(awgn_rows(&z.view(), 1.0, &[1.0], &mut rng_from(2)).is_err());
    }

    #[test]
    fn monte_carlo_ser_matches_closed_form() {
        let mut rng = rng_from(11);
        let n = 1_000_000;
        let pts = qam16_constellation();
        for es_n0_db in [6.0, 10.0, 14.0] {
            let sigma = (10f64.powf(-es_n0_db / 10.0) / 2.0).sqrt();
            let mut errors = 0usize;
            for _ in 0..n {
                let k = rng.random_range(0..16usize);
                let nr: f64 = StandardNormal.sample(&mut rng);
                let ni: f64 = StandardNormal.sample(&mut rng);
                let r = Complex::new(pts[k].re + sigma * nr, pts[k].im + sigma * ni);
                let bits = qam16_demodulate(&[r]);
                let got = bits.iter().fold(0usize, |a, &b| (a << 1) | b as usize);
                errors += usize::from(got != k);
            }
            let measured = errors as f64 / n as f64;
            let want = ser_closed_form(es_n0_db);
            assert!((measured / want - 1.0).abs() < 0.1, "{es_n0_db} dB: {measured} vs {want}");
        }
    }

    #[test]
    fn noiseless_digital_equals_quantizer() {
        let q = QamConfig::new(8, -4.0, 4.0).unwrap();
        let mut rng = rng_from(4);
        let z = Array2::from_shape_simple_fn((5, 7), || rng.random_range(-5.0..5.0));
        let out = digital_channel(&z.view(), 1.0, f64::INFINITY, &q, &mut rng).unwrap();
        assert_eq!(out, z.mapv(|v| q.reconstruct(v)));
    }

    #[test]
    fn digital_output_on_grid_and_noisier_at_low_snr() {
        let q = QamConfig::new(8, -4.0, 4.0).unwrap();
        let mut rng = rng_from(6);
        let z = Array2::from_shape_simple_fn((50, 64), || rng.random_range(-3.0..3.0));
        let mse = |snr: f64, seed: u64| {
            let out = digital_channel(&z.view(), 1.0, snr, &q, &mut rng_from(seed)).unwrap();
            for &v in &out {
                let k = (v - q.clip_lo) / q.step() - 0.5;
                assert!((k - k.round()).abs() < 1e-9);
            }
            (&out - &z).mapv(|d| d * d).mean().unwrap()
        };
        assert!(mse(-10.0, 1) > mse(15.0, 1));
    }

    #[test]
    fn mode_parsing_and_validation() {
        assert_eq!("digital16qam".parse::<ChannelMode>().unwrap(), ChannelMode::Digital16qam);
        assert!("fm".parse::<ChannelMode>().is_err());
        let cfg = ChannelConfig {
            gain: 1.5,
            snr_db: 0.0,
            mode: ChannelMode::Analog,
            seed: 0,
        };
        assert!(Channel::new(cfg, None).is_err());
        let digital = ChannelConfig {
            gain: 1.0,
            mode: ChannelMode::Digital16qam,
            ..cfg
        };
        assert!(Channel::new(digital, None).is_err());
    }
}
