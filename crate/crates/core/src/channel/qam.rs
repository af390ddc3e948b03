use crate::error::{Error, Result};

/// A complex baseband sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }
}

/// Amplitude-level scale giving unit average symbol energy: the mean of
/// `re² + im²` over the grid `{±1, ±3}²` is 10.
pub fn qam16_scale() -> f64 {
    1.0 / 10f64.sqrt()
}

/// Gray code for one axis: two bits → level in {−3, −1, 1, 3}.
fn gray_level(b0: u8, b1: u8) -> f64 {
    match (b0, b1) {
        (0, 0) => -3.0,
        (0, 1) => -1.0,
        (1, 1) => 1.0,
        _ => 3.0,
    }
}

/// Nearest level on one axis, returned as its two bits.
fn slice_axis(x: f64) -> (u8, u8) {
    let x = x / qam16_scale();
    if x < -2.0 {
        (0, 0)
    } else if x < 0.0 {
        (0, 1)
    } else if x < 2.0 {
        (1, 1)
    } else {
        (1, 0)
    }
}

/// The 16 constellation points; index bits `b0 b1 b2 b3` (MSB first) put
/// `b0 b1` on the in-phase axis and `b2 b3` on the quadrature axis.
pub fn qam16_constellation() -> [Complex; 16] {
    let mut pts = [Complex::default(); 16];
    for (i, p) in pts.iter_mut().enumerate() {
        let bit = |k: usize| ((i >> (3 - k)) & 1) as u8;
        *p = Complex::new(
            gray_level(bit(0), bit(1)) * qam16_scale(),
            gray_level(bit(2), bit(3)) * qam16_scale(),
        );
    }
    pts
}

/// Four bits per symbol.
pub fn qam16_modulate(bits: &[u8]) -> Result<Vec<Complex>> {
    if bits.len() % 4 != 0 {
        return Err(Error::invalid(format!("bit count {} is not a multiple of 4", bits.len())));
    }
    if bits.iter().any(|&b| b > 1) {
        return Err(Error::invalid("bits must be 0 or 1"));
    }
    let s = qam16_scale();
    Ok(bits
        .chunks_exact(4)
        .map(|c| Complex::new(gray_level(c[0], c[1]) * s, gray_level(c[2], c[3]) * s))
        .collect())
}

/// Minimum-distance hard decision. On a square grid the nearest point is
/// found independently per axis.
pub fn qam16_demodulate(symbols: &[Complex]) -> Vec<u8> {
    let mut bits = Vec::with_capacity(symbols.len() * 4);
    for s in symbols {
        let (a, b) = slice_axis(s.re);
        let (c, d) = slice_axis(s.im);
        bits.extend_from_slice(&[a, b, c, d]);
    }
    bits
}
