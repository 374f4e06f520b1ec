//! Forward error correction behind a small trait.
//!
//! The baseline codec is the 64-state convolutional code with octal
//! generators (133, 171), zero-terminated and decoded with a soft-input
//! Viterbi decoder. Puncturing gives 2/3, 3/4 and 5/6; repeating outputs
//! gives 1/3 and 1/4. Frames carry a CRC-16 that
//! decides success.

use crc::{Crc, CRC_16_IBM_3740};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CodeRate {
    Quarter,
    Third,
    Half,
    TwoThirds,
    ThreeQuarters,
    FiveSixths,
}

impl CodeRate {
    pub const ALL: [CodeRate; 6] = [
        CodeRate::Quarter,
        CodeRate::Third,
        CodeRate::Half,
        CodeRate::TwoThirds,
        CodeRate::ThreeQuarters,
        CodeRate::FiveSixths,
    ];

    pub fn value(self) -> f64 {
        match self {
            CodeRate::Quarter => 0.25,
            CodeRate::Third => 1.0 / 3.0,
            CodeRate::Half => 0.5,
            CodeRate::TwoThirds => 2.0 / 3.0,
            CodeRate::ThreeQuarters => 0.75,
            CodeRate::FiveSixths => 5.0 / 6.0,
        }
    }

    /// Copies sent of outputs `(A, B)` per input bit over one period.
    fn pattern(self) -> &'static [(u8, u8)] {
        match self {
            CodeRate::Quarter => &[(2, 2)],
            CodeRate::Third => &[(2, 1), (1, 2)],
            CodeRate::Half => &[(1, 1)],
            CodeRate::TwoThirds => &[(1, 1), (1, 0)],
            CodeRate::ThreeQuarters => &[(1, 1), (1, 0), (0, 1)],
            CodeRate::FiveSixths => &[(1, 1), (1, 0), (0, 1), (1, 0), (0, 1)],
        }
    }
}

/// A channel code mapping payload bits onto a fixed number of coded bits.
pub trait Codec: Send + Sync {
    /// Payload bits that fit into `coded_len` coded bits.
    fn payload_len(&self, rate: CodeRate, coded_len: usize) -> usize;
    /// Exactly `coded_len` coded bits.
    fn encode(&self, rate: CodeRate, payload: &[u8], coded_len: usize) -> Vec<u8>;
    /// Hard payload decisions from coded-bit LLRs (positive favouring 0).
    fn decode(&self, rate: CodeRate, llrs: &[f64], payload_len: usize) -> Vec<u8>;
}

const MEMORY: usize = 6;
const STATES: usize = 1 << MEMORY;
const G_A: usize = 0o133;
const G_B: usize = 0o171;

fn parity(x: usize) -> u8 {
    (x.count_ones() & 1) as u8
}

/// Output pair for `state` and `input`, and the next state.
fn branch(state: usize, input: usize) -> (u8, u8, usize) {
    let reg = (input << MEMORY) | state;
    (parity(reg & G_A), parity(reg & G_B), reg >> 1)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ConvolutionalCode;

impl Codec for ConvolutionalCode {
    fn payload_len(&self, rate: CodeRate, coded_len: usize) -> usize {
        let pat = rate.pattern();
        let out_per_period: usize = pat.iter().map(|&(a, b)| (a + b) as usize).sum();
        let inputs = coded_len / out_per_period * pat.len();
        inputs.saturating_sub(MEMORY)
    }

    fn encode(&self, rate: CodeRate, payload: &[u8], coded_len: usize) -> Vec<u8> {
        let pat = rate.pattern();
        let mut out = Vec::with_capacity(coded_len);
        let mut state = 0;
        let tail = std::iter::repeat_n(0u8, MEMORY);
        for (t, u) in payload.iter().copied().chain(tail).enumerate() {
            let (a, b, next) = branch(state, (u & 1) as usize);
            state = next;
            let (na, nb) = pat[t % pat.len()];
            out.extend(std::iter::repeat_n(a, na as usize));
            out.extend(std::iter::repeat_n(b, nb as usize));
        }
        assert!(out.len() <= coded_len, "payload too long for the frame");
        out.resize(coded_len, 0);
        out
    }

    fn decode(&self, rate: CodeRate, llrs: &[f64], payload_len: usize) -> Vec<u8> {
        let pat = rate.pattern();
        let steps = payload_len + MEMORY;
        // Per-step (A, B) soft values: copies add up, erased positions are 0.
        let mut soft = Vec::with_capacity(steps);
        let mut pos = 0;
        for t in 0..steps {
            let (na, nb) = pat[t % pat.len()];
            let mut take = |n: u8| {
                let v: f64 = llrs.iter().skip(pos).take(n as usize).sum();
                pos += n as usize;
                v
            };
            let a = take(na);
            let b = take(nb);
            soft.push((a, b));
        }
        let mut metric = [f64::NEG_INFINITY; STATES];
        metric[0] = 0.0;
        let mut survivors: Vec<u64> = Vec::with_capacity(steps);
        let mut next = [0.0; STATES];
        for &(la, lb) in &soft {
            let mut choice = 0u64;
            for ns in 0..STATES {
                let input = ns >> (MEMORY - 1);
                let mut best = f64::NEG_INFINITY;
                let mut best_x = 0;
                for x in 0..2 {
                    let s = ((ns & (STATES / 2 - 1)) << 1) | x;
                    if metric[s] == f64::NEG_INFINITY {
                        continue;
                    }
                    let (a, b, _) = branch(s, input);
                    let m = metric[s] + (1.0 - 2.0 * a as f64) * la + (1.0 - 2.0 * b as f64) * lb;
                    if m > best {
                        best = m;
                        best_x = x;
                    }
                }
                next[ns] = best;
                choice |= (best_x as u64) << ns;
            }
            metric = next;
            survivors.push(choice);
        }
        let mut state = 0;
        let mut bits = vec![0u8; steps];
        for t in (0..steps).rev() {
            bits[t] = (state >> (MEMORY - 1)) as u8;
            let x = ((survivors[t] >> state) & 1) as usize;
            state = ((state & (STATES / 2 - 1)) << 1) | x;
        }
        bits.truncate(payload_len);
        bits
    }
}

pub const CRC_BITS: usize = 16;
const CRC16: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

fn pack(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8)
        .map(|ch| ch.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b & 1) << (7 - i))))
        .collect()
}

pub fn crc16(bits: &[u8]) -> u16 {
    CRC16.checksum(&pack(bits))
}

/// `info || crc16(info)`.
pub fn attach_crc(info: &[u8]) -> Vec<u8> {
    let crc = crc16(info);
    let mut out = info.to_vec();
    out.extend((0..CRC_BITS).rev().map(|i| ((crc >> i) & 1) as u8));
    out
}

/// Info bits if the trailing CRC matches.
pub fn check_crc(payload: &[u8]) -> Option<&[u8]> {
    if payload.len() < CRC_BITS {
        return None;
    }
    let (info, tail) = payload.split_at(payload.len() - CRC_BITS);
    let got = tail.iter().fold(0u16, |acc, &b| (acc << 1) | b as u16);
    (got == crc16(info)).then_some(info)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RandomSource;

    #[test]
    fn clean_llrs_decode_exactly() {
        let mut rng = RandomSource::new(3);
        for rate in CodeRate::ALL {
            let coded = 600;
            let n = ConvolutionalCode.payload_len(rate, coded);
            let bits = rng.bits(n);
            let cw = ConvolutionalCode.encode(rate, &bits, coded);
            assert_eq!(cw.len(), coded);
            let llrs: Vec<f64> = cw.iter().map(|&b| if b == 0 { 4.0 } else { -4.0 }).collect();
            assert_eq!(ConvolutionalCode.decode(rate, &llrs, n), bits, "{rate:?}");
            let eff = n as f64 / coded as f64;
            assert!((eff - rate.value()).abs() < 0.03, "{rate:?} {eff}");
        }
    }

    #[test]
    fn corrects_scattered_errors() {
        let mut rng = RandomSource::new(4);
        let coded = 2000;
        let n = ConvolutionalCode.payload_len(CodeRate::Half, coded);
        let bits = rng.bits(n);
        let cw = ConvolutionalCode.encode(CodeRate::Half, &bits, coded);
        let llrs: Vec<f64> = cw
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let v = if b == 0 { 1.0 } else { -1.0 };
                if i % 23 == 7 { -v } else { v }
            })
            .collect();
        assert_eq!(ConvolutionalCode.decode(CodeRate::Half, &llrs, n), bits);
    }

    #[test]
    fn crc_detects_flip() {
        let mut rng = RandomSource::new(5);
        let info = rng.bits(101);
        let mut f = attach_crc(&info);
        assert_eq!(check_crc(&f), Some(&info[..]));
        f[40] ^= 1;
        assert!(check_crc(&f).is_none());
    }
}
