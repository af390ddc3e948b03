use crate::error::{Error, Result};

/// Quantizer and modulation settings for the digital chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QamConfig {
    /// Bits per real component; even, so each component fills whole half-symbols.
    pub bits_per_component: u32,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

impl QamConfig {
    pub fn new(bits_per_component: u32, clip_lo: f64, clip_hi: f64) -> Result<Self> {
        if bits_per_component == 0 || bits_per_component % 2 != 0 || bits_per_component > 16 {
            return Err(Error::invalid(format!(
                "bits per component must be even and in 2..=16, got {bits_per_component}"
            )));
        }
        if !(clip_lo < clip_hi) || !clip_lo.is_finite() || !clip_hi.is_finite() {
            return Err(Error::invalid(format!("invalid clip range [{clip_lo}, {clip_hi}]")));
        }
        Ok(Self {
            bits_per_component,
            clip_lo,
            clip_hi,
        })
    }

    /// Clip range `[−4σ_s, 4σ_s]`.
    pub fn for_symbol_std(bits_per_component: u32, sigma_s: f64) -> Result<Self> {
        Self::new(bits_per_component, -4.0 * sigma_s, 4.0 * sigma_s)
    }

    pub fn levels(&self) -> u64 {
        1u64 << self.bits_per_component
    }

    pub fn step(&self) -> f64 {
        (self.clip_hi - self.clip_lo) / self.levels() as f64
    }

    fn index(&self, v: f64) -> u64 {
        let i = ((v - self.clip_lo) / self.step()).floor();
        if i.is_nan() || i < 0.0 {
            0
        } else {
            (i as u64).min(self.levels() - 1)
        }
    }

    fn center(&self, i: u64) -> f64 {
        self.clip_lo + (i as f64 + 0.5) * self.step()
    }

    /// The value a component reads back as after quantization.
    pub fn reconstruct(&self, v: f64) -> f64 {
        self.center(self.index(v))
    }
}

/// Mid-rise uniform quantizer; bits MSB first, one entry per bit.
pub fn quantize(z: &[f64], q: &QamConfig) -> Vec<u8> {
    let b = q.bits_per_component;
    let mut bits = Vec::with_capacity(z.len() * b as usize);
    for &v in z {
        let i = q.index(v);
        for k in (0..b).rev() {
            bits.push(((i >> k) & 1) as u8);
        }
    }
    bits
}

/// Bin centers for each group of `bits_per_component` bits.
pub fn dequantize(bits: &[u8], q: &QamConfig) -> Result<Vec<f64>> {
    let b = q.bits_per_component as usize;
    if bits.len() % b != 0 {
        return Err(Error::invalid(format!("bit count {} is not a multiple of {b}", bits.len())));
    }
    Ok(bits
        .chunks_exact(b)
        .map(|c| q.center(c.iter().fold(0u64, |acc, &bit| (acc << 1) | u64::from(bit & 1))))
        .collect())
}
