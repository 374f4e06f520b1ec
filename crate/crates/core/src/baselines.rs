//! MU-MIMO and two-user NOMA baselines, closed-form sum-DoF and the
//! single-user water-filling bound on NOMA.
//!
//! Both baselines run through the rate-splitting machinery: MU-MIMO with the
//! common stream switched off, NOMA with the weak user's message carried on
//! the common stream and no private stream for that user.

use log::warn;
use serde::Serialize;

use crate::ao::{self, AoOptions, OptResult, Scheme};
use crate::channel::{ChannelEstimate, SampleSet};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};

/// Inputs of the closed-form sum-DoF expressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DofInputs {
    pub m: usize,
    pub q: usize,
    pub k: usize,
    pub qc: usize,
    /// Total private streams, `min(M, KQ)` when every user is served.
    pub qp: usize,
    pub alpha: f64,
}

impl DofInputs {
    /// `Qp = min(M, KQ)`; `alpha = 1` stands in for perfect CSIT.
    pub fn from_config(config: &SystemConfig) -> Self {
        let alpha = match config.csit {
            crate::config::CsitQuality::Perfect => 1.0,
            crate::config::CsitQuality::Alpha(a) => a,
        };
        Self {
            m: config.tx_antennas,
            q: config.rx_antennas,
            k: config.users,
            qc: config.common_streams,
            qp: config.tx_antennas.min(config.users * config.rx_antennas),
            alpha,
        }
    }

    fn check(&self) -> Result<()> {
        if self.m == 0 || self.q == 0 || self.k == 0 {
            return Err(Error::InvalidConfig("M, Q and K must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// Sum-DoF of rate splitting: `M` when `M <= Q`, `Qc (1 - alpha) + Qp alpha`
/// when `M` is one of `2Q, 3Q, .., KQ`.
pub fn dof_rs(d: &DofInputs) -> Result<f64> {
    d.check()?;
    if d.m <= d.q {
        return Ok(d.m as f64);
    }
    if d.m % d.q == 0 && (2..=d.k).contains(&(d.m / d.q)) {
        return Ok(d.qc as f64 * (1.0 - d.alpha) + d.qp as f64 * d.alpha);
    }
    Err(Error::UnsupportedRegime { m: d.m, q: d.q })
}

/// `max(min(M, Q), Qp alpha)`.
pub fn dof_mu_mimo(d: &DofInputs) -> Result<f64> {
    d.check()?;
    Ok((d.m.min(d.q) as f64).max(d.qp as f64 * d.alpha))
}

/// `min(M, Q)`, whatever the CSIT quality.
pub fn dof_noma(d: &DofInputs) -> Result<f64> {
    d.check()?;
    Ok(d.m.min(d.q) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterFilling {
    pub powers: Vec<f64>,
    /// Water level `mu`; infinite when every gain is zero.
    pub level: f64,
    /// `sum log2(1 + g_i p_i)`.
    pub capacity: f64,
    /// All gains were zero and the budget was spread uniformly.
    pub degenerate: bool,
}

/// `p_i = (mu - 1/g_i)^+` with `sum p_i = Pt`, solved exactly over the
/// sorted gains.
pub fn waterfilling(gains: &[f64], pt: f64) -> Result<WaterFilling> {
    if !(pt > 0.0) || !pt.is_finite() {
        return Err(Error::InvalidConfig(format!("power budget {pt} must be positive")));
    }
    if gains.iter().any(|&g| !(g >= 0.0) || !g.is_finite()) {
        return Err(Error::InvalidConfig("gains must be finite and nonnegative".into()));
    }
    let n = gains.len();
    if n == 0 {
        return Err(Error::InvalidConfig("no channel gains".into()));
    }
    if gains.iter().all(|&g| g == 0.0) {
        warn!("water-filling over all-zero gains");
        return Ok(WaterFilling {
            powers: vec![pt / n as f64; n],
            level: f64::INFINITY,
            capacity: 0.0,
            degenerate: true,
        });
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| gains[i] > 0.0).collect();
    order.sort_by(|&a, &b| gains[b].partial_cmp(&gains[a]).unwrap());
    // Largest active set whose water level clears the weakest member's floor.
    let mut inv_sum = 0.0;
    let mut level = 0.0;
    for (used, &i) in order.iter().enumerate() {
        let trial_sum = inv_sum + 1.0 / gains[i];
        let trial = (pt + trial_sum) / (used + 1) as f64;
        if trial <= 1.0 / gains[i] {
            break;
        }
        inv_sum = trial_sum;
        level = trial;
    }
    let powers: Vec<f64> = gains
        .iter()
        .map(|&g| if g > 0.0 { (level - 1.0 / g).max(0.0) } else { 0.0 })
        .collect();
    let capacity = gains.iter().zip(&powers).map(|(g, p)| (1.0 + g * p).log2()).sum();
    Ok(WaterFilling {
        powers,
        level,
        capacity,
        degenerate: false,
    })
}

/// Eigen-gains of a user's M x Q channel at noise variance `noise`.
pub fn channel_gains(h: &CMat, noise: f64) -> Vec<f64> {
    let gram = h.adjoint() * h;
    linalg::hermitian_eigenvalues(&gram).into_iter().map(|e| e.max(0.0) / noise).collect()
}

/// `log2 det(I + H^H Q* H)` with `Q*` the water-filling covariance at
/// budget `Pt`: the single-user capacity of user `h`.
pub fn noma_sum_rate_upper_bound(h: &CMat, pt: f64, noise: f64) -> Result<f64> {
    Ok(waterfilling(&channel_gains(h, noise), pt)?.capacity)
}

/// The bound averaged over a sample set for the user decoding first (the one
/// that cancels every other message). Bounds the sample-average sum rate of
/// any NOMA point with that order.
pub fn noma_average_upper_bound(samples: &SampleSet, first: usize, pt: f64, noise: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let mut acc = 0.0;
    for s in samples.iter() {
        acc += noma_sum_rate_upper_bound(s.user(first), pt, noise)?;
    }
    Ok(acc / samples.len() as f64)
}

/// Decoding order of the two-user NOMA baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NomaOrder {
    /// Decodes the other user's message, cancels it, then its own.
    pub first: usize,
    /// Decodes only its own message.
    pub second: usize,
}

impl NomaOrder {
    pub const BOTH: [NomaOrder; 2] = [NomaOrder { first: 0, second: 1 }, NomaOrder { first: 1, second: 0 }];

    pub fn scheme(self) -> Scheme {
        Scheme::Noma { weak: self.second }
    }

    pub fn of(scheme: Scheme) -> Option<Self> {
        match scheme {
            Scheme::Noma { weak } if weak < 2 => Some(NomaOrder { first: 1 - weak, second: weak }),
            _ => None,
        }
    }
}

/// MU-MIMO: the rate-splitting problem with the common stream switched off.
pub fn mu_mimo_optimize(
    config: &SystemConfig,
    est: &ChannelEstimate,
    samples: &SampleSet,
    weights: &[f64],
    opts: &AoOptions,
) -> Result<OptResult> {
    ao::run_ao(config, est, samples, weights, Scheme::MuMimo, opts)
}

/// Runs NOMA in both decoding orders, in the order of [`NomaOrder::BOTH`].
pub fn noma_both_orders(
    config: &SystemConfig,
    est: &ChannelEstimate,
    samples: &SampleSet,
    weights: &[f64],
    opts: &AoOptions,
) -> Result<Vec<OptResult>> {
    if config.users != 2 {
        return Err(Error::Unsupported(format!("NOMA is implemented for 2 users, got {}", config.users)));
    }
    NomaOrder::BOTH
        .iter()
        .map(|o| ao::run_ao(config, est, samples, weights, o.scheme(), opts))
        .collect()
}

/// Two-user NOMA, best of both decoding orders.
pub fn noma_optimize_2user(
    config: &SystemConfig,
    est: &ChannelEstimate,
    samples: &SampleSet,
    weights: &[f64],
    opts: &AoOptions,
) -> Result<OptResult> {
    let runs = noma_both_orders(config, est, samples, weights, opts)?;
    Ok(runs
        .into_iter()
        .reduce(|a, b| if b.wasr > a.wasr { b } else { a })
        .expect("two orders"))
}
