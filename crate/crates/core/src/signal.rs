//! PSK constellations with Gray labelling, Rayleigh channels, AWGN and
//! phase-sector detection.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, ComplexVector};
use crate::zf::BeamformingMatrix;

/// Unit-modulus M-PSK constellation.
///
/// Point `m` sits at angle `offset + 2 pi m / M` and carries the Gray label
/// `m ^ (m >> 1)`, so phase-adjacent points differ in exactly one bit. For
/// M >= 4 the offset is `pi / M` (QPSK contains `(1 + j)/sqrt(2)`); BPSK sits
/// on the real axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    order: usize,
    offset: f64,
    points: Vec<Complex64>,
    labels: Vec<u32>,
}

impl Constellation {
    pub fn new(order: usize) -> Result<Self> {
        if !matches!(order, 2 | 4 | 8 | 16) {
            return Err(Error::UnsupportedOrder(order));
        }
        let offset = if order == 2 { 0.0 } else { PI / order as f64 };
        let step = 2.0 * PI / order as f64;
        let points = (0..order)
            .map(|m| Complex64::from_polar(1.0, offset + step * m as f64))
            .collect();
        let labels = (0..order as u32).map(|m| m ^ (m >> 1)).collect();
        Ok(Self {
            order,
            offset,
            points,
            labels,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.order.trailing_zeros() as usize
    }

    /// Half-angle from a point to its decision thresholds, `pi / M`.
    pub fn threshold_angle(&self) -> f64 {
        PI / self.order as f64
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Complex64 {
        self.points[index]
    }

    pub fn label(&self, index: usize) -> u32 {
        self.labels[index]
    }

    /// Point index carrying the given Gray label.
    pub fn index_of_label(&self, label: u32) -> usize {
        // inverse Gray code
        let mut m = label;
        let mut shift = label >> 1;
        while shift != 0 {
            m ^= shift;
            shift >>= 1;
        }
        m as usize
    }

    /// Label bits of point `index`, most significant bit first.
    pub fn label_bits(&self, index: usize) -> impl Iterator<Item = u8> + '_ {
        let label = self.labels[index];
        let b = self.bits_per_symbol();
        (0..b).rev().map(move |i| ((label >> i) & 1) as u8)
    }

    /// Number of differing label bits between two point indices.
    pub fn bit_distance(&self, a: usize, b: usize) -> u32 {
        (self.labels[a] ^ self.labels[b]).count_ones()
    }

    /// Phase-sector decision: the point whose angle is closest to `arg(r)`.
    pub fn detect_index(&self, r: Complex64) -> usize {
        let step = 2.0 * PI / self.order as f64;
        let sector = ((r.arg() - self.offset) / step).round() as i64;
        sector.rem_euclid(self.order as i64) as usize
    }
}

/// Parses `bpsk`, `qpsk`, `8psk`, `16psk` (case-insensitive).
pub fn parse_modulation(name: &str) -> Result<usize> {
    match name.to_ascii_lowercase().as_str() {
        "bpsk" | "2psk" => Ok(2),
        "qpsk" | "4psk" => Ok(4),
        "8psk" => Ok(8),
        "16psk" => Ok(16),
        _ => Err(Error::BadParameter(format!("unknown modulation '{name}'"))),
    }
}

pub fn modulation_name(order: usize) -> &'static str {
    match order {
        2 => "bpsk",
        4 => "qpsk",
        8 => "8psk",
        16 => "16psk",
        _ => "unknown",
    }
}

/// K x N_t channel with user channel rows `h_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix {
    h: ComplexMatrix,
}

impl ChannelMatrix {
    pub fn from_matrix(h: ComplexMatrix) -> Result<Self> {
        let (k, nt) = h.shape();
        if k == 0 || k > nt {
            return Err(Error::BadDimensions(format!(
                "need 1 <= K <= N_t, got K = {k}, N_t = {nt}"
            )));
        }
        if !h.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { h })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.h
    }

    pub fn users(&self) -> usize {
        self.h.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.h.ncols()
    }
}

/// One `CN(0, variance)` sample.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let scale = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(scale * re, scale * im)
}

/// I.i.d. `CN(0, 1)` Rayleigh channel.
pub fn sample_channel<R: Rng + ?Sized>(k: usize, nt: usize, rng: &mut R) -> Result<ChannelMatrix> {
    if k == 0 || k > nt {
        return Err(Error::BadDimensions(format!(
            "need 1 <= K <= N_t, got K = {k}, N_t = {nt}"
        )));
    }
    // Column-major fill order; fixed so that a seed pins the realisation.
    let mut h = ComplexMatrix::zeros(k, nt);
    for col in 0..nt {
        for row in 0..k {
            h[(row, col)] = complex_gaussian(rng, 1.0);
        }
    }
    ChannelMatrix::from_matrix(h)
}

/// K data symbols drawn from a constellation.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolVector {
    values: ComplexVector,
    indices: Vec<usize>,
}

impl SymbolVector {
    pub fn from_indices(constellation: &Constellation, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= constellation.order()) {
            return Err(Error::BadParameter(format!(
                "symbol index {bad} outside a {}-point constellation",
                constellation.order()
            )));
        }
        let values =
            ComplexVector::from_iterator(indices.len(), indices.iter().map(|&i| constellation.point(i)));
        Ok(Self { values, indices })
    }

    /// Uniform symbols, equivalent to uniform source bits.
    pub fn sample<R: Rng + ?Sized>(k: usize, constellation: &Constellation, rng: &mut R) -> Self {
        let indices: Vec<usize> = (0..k)
            .map(|_| rng.random_range(0..constellation.order()))
            .collect();
        Self::from_indices(constellation, indices).expect("indices drawn in range")
    }

    pub fn values(&self) -> &ComplexVector {
        &self.values
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Source bits, K * log2(M) of them, MSB-first per symbol.
    pub fn bits(&self, constellation: &Constellation) -> Vec<u8> {
        self.indices
            .iter()
            .flat_map(|&i| constellation.label_bits(i))
            .collect()
    }
}

/// Noiseless receive vector `H x`.
pub fn receive_noiseless(h: &ChannelMatrix, x: &ComplexVector) -> Result<ComplexVector> {
    if x.len() != h.antennas() {
        return Err(Error::BadDimensions(format!(
            "precoded vector has {} entries for {} antennas",
            x.len(),
            h.antennas()
        )));
    }
    Ok(h.matrix() * x)
}

/// `r = H W s + n` with `n_k ~ CN(0, sigma2)`.
pub fn transmit<R: Rng + ?Sized>(
    w: &BeamformingMatrix,
    s: &SymbolVector,
    h: &ChannelMatrix,
    sigma2: f64,
    rng: &mut R,
) -> Result<ComplexVector> {
    if !(sigma2 >= 0.0) || !sigma2.is_finite() {
        return Err(Error::BadParameter(format!("noise variance {sigma2}")));
    }
    if s.len() != w.users() || h.users() != w.users() || h.antennas() != w.antennas() {
        return Err(Error::BadDimensions(format!(
            "W is {}x{}, s has {} entries, H is {}x{}",
            w.antennas(),
            w.users(),
            s.len(),
            h.users(),
            h.antennas()
        )));
    }
    let mut r = receive_noiseless(h, &w.apply(s.values()))?;
    if sigma2 > 0.0 {
        for rk in r.iter_mut() {
            *rk += complex_gaussian(rng, sigma2);
        }
    }
    Ok(r)
}

/// Detected symbols and the recovered bits.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub symbols: SymbolVector,
    pub bits: Vec<u8>,
}

pub fn detect(r: &ComplexVector, constellation: &Constellation) -> Detection {
    let indices: Vec<usize> = r.iter().map(|&z| constellation.detect_index(z)).collect();
    let symbols = SymbolVector::from_indices(constellation, indices).expect("detector output in range");
    let bits = symbols.bits(constellation);
    Detection { symbols, bits }
}
