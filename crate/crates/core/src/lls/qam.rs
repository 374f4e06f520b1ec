//! Gray-mapped square QAM with unit average energy.
//!
//! Bits of a symbol split in half: the first half picks the in-phase level,
//! the second the quadrature level. Each half is a Gray-coded PAM index with
//! bit value 0 on the positive side, so 4-QAM maps `00` to `(1 + j)/sqrt 2`.

use crate::error::{Error, Result};
use crate::linalg::{c, C64};

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    pub order: usize,
    pub bits_per_symbol: usize,
    /// `points[i]` carries the bit label `i`, most significant bit first.
    pub points: Vec<C64>,
}

fn pam_level(label: usize, bits: usize) -> f64 {
    // Gray label to binary index.
    let mut b = label;
    let mut shift = label >> 1;
    while shift > 0 {
        b ^= shift;
        shift >>= 1;
    }
    let levels = 1usize << bits;
    (levels as f64 - 1.0) - 2.0 * b as f64
}

pub fn qam_symbols(order: usize) -> Result<Constellation> {
    if !matches!(order, 4 | 16 | 64 | 256) {
        return Err(Error::InvalidModulation(order));
    }
    let bits = order.trailing_zeros() as usize;
    let half = bits / 2;
    let levels = (1usize << half) as f64;
    let scale = (2.0 * (levels * levels - 1.0) / 3.0).sqrt();
    let mask = (1usize << half) - 1;
    let points = (0..order)
        .map(|label| {
            let re = pam_level(label >> half, half);
            let im = pam_level(label & mask, half);
            c(re / scale, im / scale)
        })
        .collect();
    Ok(Constellation {
        order,
        bits_per_symbol: bits,
        points,
    })
}

impl Constellation {
    /// Maps bits (0/1 bytes) to symbols.
    pub fn modulate(&self, bits: &[u8]) -> Result<Vec<C64>> {
        let b = self.bits_per_symbol;
        if bits.len() % b != 0 {
            return Err(Error::Dimension(format!("{} bits do not fill {b}-bit symbols", bits.len())));
        }
        Ok(bits
            .chunks(b)
            .map(|chunk| {
                let label = chunk.iter().fold(0usize, |acc, &x| (acc << 1) | (x & 1) as usize);
                self.points[label]
            })
            .collect())
    }

    /// Nearest-point hard decision.
    pub fn demodulate_hard(&self, symbols: &[C64]) -> Vec<u8> {
        let b = self.bits_per_symbol;
        let mut out = Vec::with_capacity(symbols.len() * b);
        for s in symbols {
            let (label, _) = self
                .points
                .iter()
                .enumerate()
                .map(|(i, a)| (i, (s - a).norm_sqr()))
                .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
            for j in (0..b).rev() {
                out.push(((label >> j) & 1) as u8);
            }
        }
        out
    }

    /// Max-log LLRs of every bit of one equalized symbol, positive favouring 0.
    ///
    /// `z` is the filter output `g y`; its mean is `rho s` with
    /// `rho = gamma / (1 + gamma)`, so the distance is taken to `z / rho`.
    pub fn llrs(&self, z: C64, gamma: f64, out: &mut Vec<f64>) {
        let b = self.bits_per_symbol;
        if !(gamma > 0.0) || !gamma.is_finite() {
            out.extend(std::iter::repeat_n(0.0, b));
            return;
        }
        let rho = gamma / (1.0 + gamma);
        let y = z / rho;
        let mut min0 = [f64::INFINITY; 8];
        let mut min1 = [f64::INFINITY; 8];
        for (label, a) in self.points.iter().enumerate() {
            let d = (y - a).norm_sqr();
            for j in 0..b {
                let bit = (label >> (b - 1 - j)) & 1;
                let slot = if bit == 0 { &mut min0[j] } else { &mut min1[j] };
                if d < *slot {
                    *slot = d;
                }
            }
        }
        out.extend((0..b).map(|j| gamma * (min1[j] - min0[j])));
    }
}

/// LLR of bit `bit_index` of one equalized symbol.
pub fn llr(z: C64, gamma: f64, constellation: &Constellation, bit_index: usize) -> f64 {
    let mut v = Vec::with_capacity(constellation.bits_per_symbol);
    constellation.llrs(z, gamma, &mut v);
    v[bit_index]
}
