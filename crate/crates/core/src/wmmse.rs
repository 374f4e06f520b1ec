//! Augmented weighted MSE machinery and the sample-averaged coefficient
//! blocks that turn the precoder update into a quadratic program.
//!
//! For fixed receive filter `G` and weight `U` of a stream vector, the
//! augmented WMSE `tr(U E) - ln det U` is a quadratic in the precoders:
//!
//! ```text
//! sum_j p_j^H (I ⊗ C) p_j - 2 Re(a^H p_own) + phi
//! C   = H G^H U G H^H            (M x M core, one per stream vector)
//! a   = vec(H G^H U)
//! phi = sigma_n^2 tr(U G G^H) + tr(U) - ln det U
//! ```
//!
//! where `j` runs over every precoder that reaches this receiver (all of
//! them for the common stream, the private ones for a private stream) and
//! `p_own` is the stream's own precoder. Only the core is stored; the
//! Kronecker identity is expanded by the consumer with the column count of
//! the precoder it multiplies. Natural logarithms are used throughout, so the
//! minimized AWMSE equals `streams - rate` with the rate in nats.

use crate::channel::{ChannelMatrix, SampleSet};
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat};
use crate::rates::{self, PrecoderSet, StreamKind};

/// Eigenvalue cap on `U = E^-1`.
pub const MAX_WEIGHT_EIGENVALUE: f64 = 1e12;

/// `tr(U E) - ln det U`.
pub fn awmse(u: &CMat, e: &CMat) -> Result<f64> {
    if u.nrows() != e.nrows() || u.ncols() != e.ncols() {
        return Err(Error::Dimension("weight and MSE matrix shapes differ".into()));
    }
    if u.nrows() == 0 {
        return Ok(0.0);
    }
    let ld = linalg::logdet_hpd(&linalg::hermitian_part(u)).map_err(|_| Error::NotPositiveDefinite("AWMSE weight"))?;
    Ok(linalg::trace(&(u * e)).re - ld)
}

/// AWMSE of stream vector `kind` at user `k` for an arbitrary filter and weight.
pub fn awmse_for_filter(
    h: &CMat,
    p: &PrecoderSet,
    k: usize,
    kind: StreamKind,
    g: &CMat,
    u: &CMat,
    noise: f64,
) -> Result<f64> {
    let e = rates::mse_matrix(h, p, k, kind, g, noise)?;
    awmse(u, &e)
}

/// MMSE weight `U = E^-1`, Hermitian, eigenvalues capped.
pub fn optimal_weights(e: &CMat) -> Result<CMat> {
    if e.nrows() == 0 {
        return Ok(CMat::zeros(0, 0));
    }
    linalg::inverse_hpd_clamped(e, MAX_WEIGHT_EIGENVALUE)
}

/// Filters and weights of one user on one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    pub g_common: CMat,
    pub u_common: CMat,
    pub g_private: CMat,
    pub u_private: CMat,
}

/// Per-sample, per-user MMSE filters and weights at precoder `p`.
pub fn mmse_state(h: &ChannelMatrix, p: &PrecoderSet, noise: f64) -> Result<Vec<UserState>> {
    h.users
        .iter()
        .enumerate()
        .map(|(k, hk)| {
            let (g_common, g_private) = rates::mmse_equalizers(hk, p, k, noise)?;
            let (ec, ep) = rates::mmse_matrices(hk, p, k, noise)?;
            Ok(UserState {
                g_common,
                u_common: optimal_weights(&ec)?,
                g_private,
                u_private: optimal_weights(&ep)?,
            })
        })
        .collect()
}

/// Equalizers and weights for every sample; recomputed on demand since the
/// optimizer itself only consumes [`SafBlocks`].
pub fn equalizers_and_weights(samples: &SampleSet, p: &PrecoderSet, noise: f64) -> Result<Vec<Vec<UserState>>> {
    samples.iter().map(|h| mmse_state(h, p, noise)).collect()
}

/// Quadratic-form coefficients of one stream vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamBlock {
    /// `H G^H U G H^H`, M x M Hermitian PSD.
    pub core: CMat,
    /// `H G^H U`, M x (stream count); `vec` of it is the linear coefficient.
    pub linear: CMat,
    pub constant: f64,
}

impl StreamBlock {
    fn zeros(m: usize, streams: usize) -> Self {
        Self {
            core: CMat::zeros(m, m),
            linear: CMat::zeros(m, streams),
            constant: 0.0,
        }
    }

    fn from_state(h: &CMat, g: &CMat, u: &CMat, noise: f64) -> Result<Self> {
        let m = h.nrows();
        if g.nrows() == 0 {
            return Ok(Self::zeros(m, 0));
        }
        let hg = h * g.adjoint();
        let linear = &hg * u;
        let core = linalg::hermitian_part(&(&linear * hg.adjoint()));
        let ld = linalg::logdet_hpd(u)?;
        let constant = noise * linalg::trace(&(u * g * g.adjoint())).re + linalg::trace(u).re - ld;
        Ok(Self { core, linear, constant })
    }

    fn add_assign(&mut self, other: &Self) {
        self.core += &other.core;
        self.linear += &other.linear;
        self.constant += other.constant;
    }

    fn scale(&mut self, s: f64) {
        self.core *= c(s, 0.0);
        self.linear *= c(s, 0.0);
        self.constant *= s;
    }

    /// `I_cols ⊗ core`.
    pub fn expanded(&self, cols: usize) -> CMat {
        linalg::kron_identity(&self.core, cols)
    }

    /// `sum_j tr(P_j^H C P_j) - 2 Re tr(L^H P_own) + phi`.
    pub fn evaluate(&self, reaching: &[&CMat], own: &CMat) -> f64 {
        let quad: f64 = reaching
            .iter()
            .map(|pj| linalg::trace(&(pj.adjoint() * &self.core * *pj)).re)
            .sum();
        let lin = if own.ncols() == 0 {
            0.0
        } else {
            linalg::trace(&(self.linear.adjoint() * own)).re
        };
        quad - 2.0 * lin + self.constant
    }
}

/// Sample-averaged blocks for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserBlocks {
    pub common: StreamBlock,
    pub private: StreamBlock,
}

/// Sample-averaged coefficient blocks for all users.
#[derive(Debug, Clone, PartialEq)]
pub struct SafBlocks {
    pub users: Vec<UserBlocks>,
    pub samples: usize,
    pub noise: f64,
}

impl SafBlocks {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// Sample-averaged common AWMSE of user `k` at precoder `p`.
    pub fn common_awmse(&self, k: usize, p: &PrecoderSet) -> f64 {
        let mut reaching: Vec<&CMat> = vec![&p.common];
        reaching.extend(p.private.iter());
        self.users[k].common.evaluate(&reaching, &p.common)
    }

    /// Sample-averaged private AWMSE of user `k` at precoder `p`.
    pub fn private_awmse(&self, k: usize, p: &PrecoderSet) -> f64 {
        let reaching: Vec<&CMat> = p.private.iter().collect();
        self.users[k].private.evaluate(&reaching, &p.private[k])
    }

    pub fn is_finite(&self) -> bool {
        self.users.iter().all(|u| {
            [&u.common, &u.private]
                .iter()
                .all(|b| linalg::is_finite(&b.core) && linalg::is_finite(&b.linear) && b.constant.is_finite())
        })
    }
}

fn sample_blocks(h: &ChannelMatrix, p: &PrecoderSet, noise: f64) -> Result<Vec<UserBlocks>> {
    let state = mmse_state(h, p, noise)?;
    h.users
        .iter()
        .zip(state)
        .map(|(hk, s)| {
            Ok(UserBlocks {
                common: StreamBlock::from_state(hk, &s.g_common, &s.u_common, noise)?,
                private: StreamBlock::from_state(hk, &s.g_private, &s.u_private, noise)?,
            })
        })
        .collect()
}

const LEAF: usize = 8;

// Fixed-shape pairwise tree: the split points depend only on the index
// range, so the floating-point result is independent of thread count.
fn tree_sum(samples: &[ChannelMatrix], p: &PrecoderSet, noise: f64) -> Result<Vec<UserBlocks>> {
    if samples.len() <= LEAF {
        let mut acc = sample_blocks(&samples[0], p, noise)?;
        for h in &samples[1..] {
            let b = sample_blocks(h, p, noise)?;
            for (a, x) in acc.iter_mut().zip(&b) {
                a.common.add_assign(&x.common);
                a.private.add_assign(&x.private);
            }
        }
        return Ok(acc);
    }
    let mid = samples.len() / 2;
    let (left, right) = rayon::join(|| tree_sum(&samples[..mid], p, noise), || tree_sum(&samples[mid..], p, noise));
    let mut left = left?;
    let right = right?;
    for (a, x) in left.iter_mut().zip(&right) {
        a.common.add_assign(&x.common);
        a.private.add_assign(&x.private);
    }
    Ok(left)
}

/// STEP 1: MMSE filters and weights at `p` on every sample, averaged into
/// the quadratic-form blocks of the precoder subproblem.
pub fn step1_update(p: &PrecoderSet, samples: &SampleSet, noise: f64) -> Result<SafBlocks> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut users = tree_sum(&samples.samples, p, noise)?;
    let inv = 1.0 / samples.len() as f64;
    for u in &mut users {
        u.common.scale(inv);
        u.private.scale(inv);
    }
    let blocks = SafBlocks {
        users,
        samples: samples.len(),
        noise,
    };
    if !blocks.is_finite() {
        return Err(Error::NonFinite("SAF blocks"));
    }
    Ok(blocks)
}

/// Sample mean of the trace-form AWMSEs `(common, private)` per user, with
/// filters and weights taken at `p_filter` and the MSE evaluated at `p_eval`.
pub fn trace_form_awmse(
    samples: &SampleSet,
    p_filter: &PrecoderSet,
    p_eval: &PrecoderSet,
    noise: f64,
) -> Result<Vec<(f64, f64)>> {
    let k = p_eval.private.len();
    let mut acc = vec![(0.0, 0.0); k];
    for h in samples.iter() {
        let state = mmse_state(h, p_filter, noise)?;
        for (u, s) in state.iter().enumerate() {
            let hk = h.user(u);
            acc[u].0 += awmse_for_filter(hk, p_eval, u, StreamKind::Common, &s.g_common, &s.u_common, noise)?;
            acc[u].1 += awmse_for_filter(hk, p_eval, u, StreamKind::Private, &s.g_private, &s.u_private, noise)?;
        }
    }
    let n = samples.len() as f64;
    Ok(acc.into_iter().map(|(a, b)| (a / n, b / n)).collect())
}
