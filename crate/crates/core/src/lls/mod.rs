//! Link-level simulation of the SIC receiver.
//!
//! Every stream carries one coded frame of `S` QAM symbols. Each user detects
//! the common streams one at a time in decreasing post-processing SINR with
//! an MMSE nulling filter, decodes, re-encodes and cancels, then does the
//! same for its own private streams with the other users' private streams
//! left as interference. A frame counts when its CRC passes.
//!
//! Modulation and code rates per stream come from [`plan_streams`]: the
//! transmitter knows the channel, computes each stream's rate under the
//! receiver's ordering (the worst user for a common stream) and backs it
//! off before picking from the [`MODCODES`] table.

pub mod fec;
pub mod qam;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, CVec, C64};
use crate::rates::{self, PrecoderSet};
use crate::rng::RandomSource;

pub use fec::{attach_crc, check_crc, CodeRate, Codec, ConvolutionalCode, CRC_BITS};
pub use qam::{llr, qam_symbols, Constellation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModCode {
    pub qam_order: usize,
    pub code_rate: CodeRate,
}

impl ModCode {
    pub fn bits_per_symbol(&self) -> usize {
        self.qam_order.trailing_zeros() as usize
    }

    /// Nominal bits per channel use, `rate * log2(order)`.
    pub fn efficiency(&self) -> f64 {
        self.code_rate.value() * self.bits_per_symbol() as f64
    }
}

const fn mc(qam_order: usize, code_rate: CodeRate) -> ModCode {
    ModCode { qam_order, code_rate }
}

/// Available pairs in increasing efficiency. 64-QAM and 256-QAM at rate 1/2
/// are left out: a smaller constellation with a weaker code matches their
/// efficiency at a lower SNR.
pub const MODCODES: [ModCode; 16] = [
    mc(4, CodeRate::Quarter),
    mc(4, CodeRate::Third),
    mc(4, CodeRate::Half),
    mc(4, CodeRate::TwoThirds),
    mc(4, CodeRate::ThreeQuarters),
    mc(4, CodeRate::FiveSixths),
    mc(16, CodeRate::Half),
    mc(16, CodeRate::TwoThirds),
    mc(16, CodeRate::ThreeQuarters),
    mc(16, CodeRate::FiveSixths),
    mc(64, CodeRate::TwoThirds),
    mc(64, CodeRate::ThreeQuarters),
    mc(64, CodeRate::FiveSixths),
    mc(256, CodeRate::TwoThirds),
    mc(256, CodeRate::ThreeQuarters),
    mc(256, CodeRate::FiveSixths),
];

pub const DEFAULT_BACKOFF: f64 = 0.9;
/// SNR gap of the baseline codec to capacity, in dB.
pub const DEFAULT_SNR_GAP_DB: f64 = 3.0;

/// Most efficient pair with `efficiency <= rate * backoff`; `None` (stream
/// off) below the lowest one.
pub fn amc_select(stream_rate: f64, backoff: f64) -> Option<ModCode> {
    let budget = stream_rate * backoff;
    MODCODES.iter().rev().find(|m| m.efficiency() <= budget + 1e-12).copied()
}

/// `H_k^H p` for a precoder column `p`.
pub fn effective_channel(h_k: &CMat, precoder: &CMat, l: usize) -> CVec {
    h_k.adjoint() * precoder.column(l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullingFilter {
    /// Row filter: the equalized sample is `sum_i g[i] y[i]`.
    pub g: CVec,
    /// `1 - g h`, the MMSE of the unit-energy symbol.
    pub mse: f64,
}

impl NullingFilter {
    pub fn apply(&self, y: &CVec) -> C64 {
        self.g.iter().zip(y.iter()).map(|(a, b)| a * b).sum()
    }
}

/// MMSE nulling filter `g = h^H (noise I + h h^H + sum_o o o^H + B)^-1` for
/// a target stream with effective channel `h`, the other undetected streams
/// `others` and the covariance `B` of interference that is never cancelled.
pub fn nulling_filter(h: &CVec, others: &[&CVec], background: &CMat, noise: f64) -> Result<NullingFilter> {
    let q = h.len();
    // A floor keeps the noiseless case invertible.
    let mut r = linalg::identity(q) * c(noise.max(1e-12), 0.0) + background + h * h.adjoint();
    for o in others {
        r += *o * o.adjoint();
    }
    let x = linalg::solve_hpd(&r, &CMat::from_column_slice(q, 1, h.as_slice()))?;
    let g: CVec = x.column(0).map(|z| z.conj());
    let gh: C64 = g.iter().zip(h.iter()).map(|(a, b)| a * b).sum();
    Ok(NullingFilter {
        g,
        mse: (1.0 - gh.re).clamp(0.0, 1.0),
    })
}

/// `gamma = 1 / mse - 1`.
pub fn post_sinr(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        (1.0 / mse - 1.0).max(0.0)
    }
}

/// Entry of `undetected` with the largest SINR (`sinrs` aligned with it);
/// ties go to the lowest stream index.
pub fn select_next_stream(undetected: &[usize], sinrs: &[f64]) -> Option<usize> {
    undetected
        .iter()
        .zip(sinrs)
        .fold(None, |best: Option<(usize, f64)>, (&i, &s)| match best {
            Some((bi, bs)) if bs > s || (bs == s && bi < i) => Some((bi, bs)),
            _ => Some((i, s)),
        })
        .map(|(i, _)| i)
}

/// Greedy SIC over `streams` (effective channels): `(stream, gamma)` in
/// detection order, assuming every detected stream is cancelled.
pub fn sic_order(streams: &[CVec], background: &CMat, noise: f64) -> Result<Vec<(usize, f64)>> {
    let mut undetected: Vec<usize> = (0..streams.len()).collect();
    let mut out = Vec::with_capacity(streams.len());
    while !undetected.is_empty() {
        let mut sinrs = Vec::with_capacity(undetected.len());
        for &i in &undetected {
            let others: Vec<&CVec> = undetected.iter().filter(|&&j| j != i).map(|&j| &streams[j]).collect();
            sinrs.push(post_sinr(nulling_filter(&streams[i], &others, background, noise)?.mse));
        }
        let next = select_next_stream(&undetected, &sinrs).expect("non-empty");
        let pos = undetected.iter().position(|&i| i == next).unwrap();
        out.push((next, sinrs[pos]));
        undetected.remove(pos);
    }
    Ok(out)
}

fn covariance(vs: &[CVec], q: usize) -> CMat {
    vs.iter().fold(CMat::zeros(q, q), |acc, v| acc + v * v.adjoint())
}

fn columns(h_k: &CMat, p: &CMat) -> Vec<CVec> {
    (0..p.ncols()).map(|l| effective_channel(h_k, p, l)).collect()
}

fn nonzero(p: &CMat, l: usize) -> bool {
    p.column(l).norm_squared() > 0.0
}

/// Rate and modulation/code pair of every stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamPlan {
    /// Achievable rate of each common stream (worst user).
    pub common_rates: Vec<f64>,
    pub private_rates: Vec<Vec<f64>>,
    pub common: Vec<Option<ModCode>>,
    pub private: Vec<Vec<Option<ModCode>>>,
}

impl StreamPlan {
    /// Every stream with a nonzero precoder column gets `mc`.
    pub fn fixed(p: &PrecoderSet, mc: ModCode) -> Self {
        let pick = |m: &CMat, l| nonzero(m, l).then_some(mc);
        Self {
            common_rates: vec![f64::NAN; p.common.ncols()],
            private_rates: p.private.iter().map(|m| vec![f64::NAN; m.ncols()]).collect(),
            common: (0..p.common.ncols()).map(|l| pick(&p.common, l)).collect(),
            private: p.private.iter().map(|m| (0..m.ncols()).map(|l| pick(m, l)).collect()).collect(),
        }
    }

    /// Sum of nominal efficiencies of the streams switched on.
    pub fn efficiency(&self) -> f64 {
        self.common
            .iter()
            .chain(self.private.iter().flatten())
            .flatten()
            .map(|m| m.efficiency())
            .sum()
    }
}

/// Link adaptation: a stream with post-processing SINR `gamma` is offered
/// the rate `log2(1 + gamma / gap)`, then [`amc_select`] applies the backoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmcParams {
    pub backoff: f64,
    pub snr_gap_db: f64,
}

impl Default for AmcParams {
    fn default() -> Self {
        Self {
            backoff: DEFAULT_BACKOFF,
            snr_gap_db: DEFAULT_SNR_GAP_DB,
        }
    }
}

impl AmcParams {
    pub fn select(&self, shannon_rate: f64) -> Option<ModCode> {
        let gamma = shannon_rate.exp2() - 1.0;
        let gap = 10f64.powf(self.snr_gap_db / 10.0);
        amc_select((1.0 + gamma / gap).log2(), self.backoff)
    }
}

/// Per-stream rates `log2(1 + gamma)` under the receiver's ordering on the
/// true channel, then the modulation/code pair picked by `amc`.
pub fn plan_streams(p: &PrecoderSet, h: &ChannelMatrix, noise: f64, amc: &AmcParams) -> Result<StreamPlan> {
    let k = p.private.len();
    if h.num_users() != k {
        return Err(Error::Dimension(format!("{} channels for {k} users", h.num_users())));
    }
    let qc = p.common.ncols();
    let active_c: Vec<usize> = (0..qc).filter(|&l| nonzero(&p.common, l)).collect();
    let mut common_rates = vec![0.0; qc];
    if !active_c.is_empty() {
        common_rates.iter_mut().for_each(|r| *r = f64::INFINITY);
    }
    let mut private_rates: Vec<Vec<f64>> = p.private.iter().map(|m| vec![0.0; m.ncols()]).collect();
    for (u, hk) in h.users.iter().enumerate() {
        let q = hk.ncols();
        let all_private: Vec<Vec<CVec>> = p.private.iter().map(|m| columns(hk, m)).collect();
        let background = covariance(&all_private.concat(), q);
        let cols: Vec<CVec> = active_c.iter().map(|&l| effective_channel(hk, &p.common, l)).collect();
        for (idx, gamma) in sic_order(&cols, &background, noise)? {
            let r = &mut common_rates[active_c[idx]];
            *r = r.min((1.0 + gamma).log2());
        }
        let others: Vec<CVec> = all_private
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != u)
            .flat_map(|(_, v)| v.iter().cloned())
            .collect();
        let background = covariance(&others, q);
        let active_p: Vec<usize> = (0..p.private[u].ncols()).filter(|&l| nonzero(&p.private[u], l)).collect();
        let own: Vec<CVec> = active_p.iter().map(|&l| all_private[u][l].clone()).collect();
        for (idx, gamma) in sic_order(&own, &background, noise)? {
            private_rates[u][active_p[idx]] = (1.0 + gamma).log2();
        }
    }
    let common = common_rates.iter().map(|&r| amc.select(r)).collect();
    let private = private_rates.iter().map(|v| v.iter().map(|&r| amc.select(r)).collect()).collect();
    Ok(StreamPlan {
        common_rates,
        private_rates,
        common,
        private,
    })
}

/// `min_k R_c,k + sum_k R_p,k` on one channel: the Gaussian-signalling rate
/// the link-level throughput is measured against.
pub fn shannon_bound(p: &PrecoderSet, h: &ChannelMatrix, noise: f64) -> Result<f64> {
    let r = rates::rate_sample(h, p, noise)?;
    let common = if p.common.ncols() == 0 {
        0.0
    } else {
        r.common.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    Ok(common + r.private.iter().sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StreamId {
    Common(usize),
    Private(usize, usize),
}

/// One detection attempt at one user.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub user: usize,
    pub stream: StreamId,
    /// Detection position within its phase.
    pub position: usize,
    pub sinr: f64,
    pub decoded: bool,
    pub info_bits: usize,
    /// Power left on the stream's signature after cancellation.
    pub residual: f64,
}

/// One channel realization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkOutcome {
    /// Successfully decoded information bits credited to each user.
    pub decoded_bits: Vec<f64>,
    pub channel_uses: usize,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LlsReport {
    pub realizations: Vec<LinkOutcome>,
}

impl LlsReport {
    /// `sum_l sum_k D / sum_l S` in bits per channel use.
    pub fn throughput(&self) -> f64 {
        let bits: f64 = self.realizations.iter().flat_map(|r| r.decoded_bits.iter()).sum();
        let uses: usize = self.realizations.iter().map(|r| r.channel_uses).sum();
        if uses == 0 {
            0.0
        } else {
            bits / uses as f64
        }
    }

    pub fn push(&mut self, outcome: LinkOutcome) {
        self.realizations.push(outcome);
    }

    pub fn merge(&mut self, other: LlsReport) {
        self.realizations.extend(other.realizations);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkOptions {
    /// Channel uses per frame.
    pub symbols: usize,
}

impl Default for LinkOptions {
    fn default() -> Self {
        Self { symbols: 1024 }
    }
}

struct TxStream {
    id: StreamId,
    column: CVec,
    mc: ModCode,
    constellation: Constellation,
    info_bits: usize,
    symbols: Vec<C64>,
}

fn build_stream(
    id: StreamId,
    column: CVec,
    mc: ModCode,
    symbols: usize,
    codec: &dyn Codec,
    rng: &mut RandomSource,
) -> Result<Option<TxStream>> {
    let constellation = qam_symbols(mc.qam_order)?;
    let coded_len = symbols * mc.bits_per_symbol();
    let payload = codec.payload_len(mc.code_rate, coded_len);
    if payload <= CRC_BITS {
        return Ok(None);
    }
    let info = rng.bits(payload - CRC_BITS);
    let coded = codec.encode(mc.code_rate, &attach_crc(&info), coded_len);
    Ok(Some(TxStream {
        id,
        column,
        mc,
        symbols: constellation.modulate(&coded)?,
        constellation,
        info_bits: info.len(),
    }))
}

struct Detection {
    sinr: f64,
    decoded: bool,
    residual: f64,
}

/// Detects, decodes and cancels `targets` (indices into `tx`) from `y` in
/// SINR order. `background` covers every stream that is never cancelled.
fn sic_phase(
    y: &mut [CVec],
    eff: &[CVec],
    tx: &[TxStream],
    targets: &[usize],
    background: &CMat,
    noise: f64,
    codec: &dyn Codec,
    mut record: impl FnMut(usize, usize, Detection),
) -> Result<()> {
    let mut undetected: Vec<usize> = targets.to_vec();
    let mut position = 0;
    while !undetected.is_empty() {
        let mut filters = Vec::with_capacity(undetected.len());
        for &i in &undetected {
            let others: Vec<&CVec> = undetected.iter().filter(|&&j| j != i).map(|&j| &eff[j]).collect();
            filters.push(nulling_filter(&eff[i], &others, background, noise)?);
        }
        let sinrs: Vec<f64> = filters.iter().map(|f| post_sinr(f.mse)).collect();
        let next = select_next_stream(&undetected, &sinrs).expect("non-empty");
        let pos = undetected.iter().position(|&i| i == next).unwrap();
        let filter = &filters[pos];
        let gamma = sinrs[pos];
        let s = &tx[next];
        let mut llrs = Vec::with_capacity(y.len() * s.mc.bits_per_symbol());
        for yt in y.iter() {
            s.constellation.llrs(filter.apply(yt), gamma.min(1e12), &mut llrs);
        }
        let payload_len = s.info_bits + CRC_BITS;
        let payload = codec.decode(s.mc.code_rate, &llrs, payload_len);
        let decoded = check_crc(&payload).is_some();
        // Cancel the re-encoded decision, right or wrong.
        let coded = codec.encode(s.mc.code_rate, &payload, y.len() * s.mc.bits_per_symbol());
        let remod = s.constellation.modulate(&coded)?;
        let mut residual = 0.0;
        for (t, yt) in y.iter_mut().enumerate() {
            *yt -= &eff[next] * remod[t];
            residual += (&eff[next] * (s.symbols[t] - remod[t])).norm_squared();
        }
        record(next, position, Detection { sinr: gamma, decoded, residual: residual / y.len() as f64 });
        undetected.remove(pos);
        position += 1;
    }
    Ok(())
}

/// Simulates one frame per stream on the true channel `h`.
///
/// Common-stream bits are credited to the users in proportion to `shares`
/// (equal split when all shares are zero), and only to users that decode
/// the stream.
pub fn simulate_link(
    p: &PrecoderSet,
    h: &ChannelMatrix,
    plan: &StreamPlan,
    shares: &[f64],
    noise: f64,
    opts: &LinkOptions,
    codec: &dyn Codec,
    rng: &mut RandomSource,
) -> Result<LinkOutcome> {
    let k = p.private.len();
    if h.num_users() != k || shares.len() != k {
        return Err(Error::Dimension("users, channels and shares disagree".into()));
    }
    let s_len = opts.symbols;
    let mut tx: Vec<TxStream> = Vec::new();
    for (l, mc) in plan.common.iter().enumerate() {
        if let Some(mc) = mc {
            if let Some(s) = build_stream(StreamId::Common(l), p.common.column(l).into_owned(), *mc, s_len, codec, rng)? {
                tx.push(s);
            }
        }
    }
    for (u, streams) in plan.private.iter().enumerate() {
        for (l, mc) in streams.iter().enumerate() {
            if let Some(mc) = mc {
                let col = p.private[u].column(l).into_owned();
                if let Some(s) = build_stream(StreamId::Private(u, l), col, *mc, s_len, codec, rng)? {
                    tx.push(s);
                }
            }
        }
    }
    let share_total: f64 = shares.iter().map(|s| s.max(0.0)).sum();
    let credit: Vec<f64> = if share_total > 0.0 {
        shares.iter().map(|s| s.max(0.0) / share_total).collect()
    } else {
        vec![1.0 / k as f64; k]
    };

    let m = p.tx_antennas();
    let x: Vec<CVec> = (0..s_len)
        .map(|t| tx.iter().fold(CVec::zeros(m), |acc, s| acc + &s.column * s.symbols[t]))
        .collect();
    let mut decoded_bits = vec![0.0; k];
    let mut frames = Vec::new();
    for (u, hk) in h.users.iter().enumerate() {
        let q = hk.ncols();
        let hh = hk.adjoint();
        let mut y: Vec<CVec> = x
            .iter()
            .map(|xt| {
                let mut yt = &hh * xt;
                if noise > 0.0 {
                    yt.iter_mut().for_each(|v| *v += rng.complex_normal(noise));
                }
                yt
            })
            .collect();
        let eff: Vec<CVec> = tx.iter().map(|s| &hh * &s.column).collect();
        let common: Vec<usize> = (0..tx.len()).filter(|&i| matches!(tx[i].id, StreamId::Common(_))).collect();
        let private_all: Vec<usize> = (0..tx.len()).filter(|&i| matches!(tx[i].id, StreamId::Private(..))).collect();
        let own: Vec<usize> = private_all.iter().copied().filter(|&i| tx[i].id_user() == Some(u)).collect();
        let foreign: Vec<usize> = private_all.iter().copied().filter(|&i| tx[i].id_user() != Some(u)).collect();

        let bg_common = covariance(&private_all.iter().map(|&i| eff[i].clone()).collect::<Vec<_>>(), q);
        let mut rec = |i: usize, position: usize, d: Detection| {
            let s = &tx[i];
            if d.decoded {
                decoded_bits[u] += match s.id {
                    StreamId::Common(_) => s.info_bits as f64 * credit[u],
                    StreamId::Private(..) => s.info_bits as f64,
                };
            }
            frames.push(FrameRecord {
                user: u,
                stream: s.id,
                position,
                sinr: d.sinr,
                decoded: d.decoded,
                info_bits: s.info_bits,
                residual: d.residual,
            });
        };
        sic_phase(&mut y, &eff, &tx, &common, &bg_common, noise, codec, &mut rec)?;
        let bg_private = covariance(&foreign.iter().map(|&i| eff[i].clone()).collect::<Vec<_>>(), q);
        sic_phase(&mut y, &eff, &tx, &own, &bg_private, noise, codec, &mut rec)?;
    }
    Ok(LinkOutcome {
        decoded_bits,
        channel_uses: s_len,
        frames,
    })
}

impl TxStream {
    fn id_user(&self) -> Option<usize> {
        match self.id {
            StreamId::Private(u, _) => Some(u),
            StreamId::Common(_) => None,
        }
    }
}
