//! Alternating optimization of the weighted average sum rate.
//!
//! Each iteration recomputes MMSE filters and weights on the sample set
//! (STEP 1), assembles the precoder QCQP and solves it (STEP 2). The QCQP
//! optimum is the WAMMSE objective; it is non-increasing across iterations.
//!
//! Objectives are in nats (natural-log AWMSE); every reported rate is in
//! bits per channel use.

use std::f64::consts::LN_2;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use log::{debug, warn};
use serde::Serialize;

use crate::channel::{ChannelEstimate, SampleSet};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{c, CMat};
use crate::qcqp::{self, InteriorPoint, QcqpSolver, ShareLayout, SolveStatus};
use crate::rates::{self, AverageRates, PrecoderSet};
use crate::wmmse;

/// Transmission strategy. All three run through the same machinery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scheme {
    RateSplitting,
    /// No common stream.
    MuMimo,
    /// Two-user NOMA: the weak user's message rides the common stream and it
    /// has no private stream; the other user decodes it first and cancels it.
    Noma { weak: usize },
}

impl Scheme {
    /// `(Qc, Q_k)` for this scheme under `config`.
    pub fn shape(&self, config: &SystemConfig) -> (usize, Vec<usize>) {
        match *self {
            Scheme::RateSplitting => (config.common_streams, config.private_streams.clone()),
            Scheme::MuMimo => (0, config.private_streams.clone()),
            Scheme::Noma { weak } => {
                let cap = config.tx_antennas.min(config.rx_antennas);
                let mut qk = config.private_streams.clone();
                let strong = 1 - weak;
                qk[weak] = 0;
                if qk[strong] == 0 {
                    qk[strong] = cap;
                }
                (cap, qk)
            }
        }
    }

    fn layout(&self) -> ShareLayout {
        match *self {
            Scheme::RateSplitting => ShareLayout::All,
            Scheme::MuMimo => ShareLayout::Disabled,
            Scheme::Noma { weak } => ShareLayout::Only(weak),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Scheme::RateSplitting => "rs",
            Scheme::MuMimo => "mumimo",
            Scheme::Noma { .. } => "noma",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AoOptions {
    /// Stop when the weighted objective moves less than this (weights are
    /// normalized to a largest entry of 1 for the test).
    pub eps: f64,
    pub max_iter: usize,
    pub solver: InteriorPoint,
    /// Allowed objective increase before a run is flagged non-monotone.
    pub monotone_tol: f64,
    /// One line per iteration: index, objective, largest constraint value.
    pub trace_path: Option<PathBuf>,
}

impl Default for AoOptions {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            max_iter: 2000,
            solver: InteriorPoint::default(),
            monotone_tol: 1e-6,
            trace_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AoStatus {
    Converged,
    MaxIter,
}

/// How a result was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Origin {
    Direct,
    /// Started from a baseline solution with a small common precoder.
    WarmStart,
    /// A baseline solution read as a point of the larger scheme.
    Embedded(Scheme),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub scheme: Scheme,
    pub origin: Origin,
    pub precoders: PrecoderSet,
    /// Common-rate shares in bits, `C_k = -x_k / ln 2`.
    pub shares: Vec<f64>,
    /// Average rates at the final precoders, shares attached.
    pub rates: AverageRates,
    pub weights: Vec<f64>,
    /// `sum_k mu_k (R_p,k + C_k)` in bits.
    pub wasr: f64,
    pub totals: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub status: AoStatus,
    /// Some iteration raised the objective by more than the tolerance.
    pub non_monotone: bool,
    /// Subproblems that stopped on the Newton-step cap.
    pub solver_max_iter: usize,
}

impl OptResult {
    pub fn final_objective(&self) -> Option<f64> {
        self.trace.last().map(|t| t.objective)
    }

    /// WASR implied by the final WAMMSE objective: `(sum mu_k Q_k - obj) / ln 2`.
    /// A lower bound on [`OptResult::wasr`], tight at convergence.
    pub fn objective_wasr(&self) -> Option<f64> {
        let streams: f64 = self
            .weights
            .iter()
            .zip(&self.precoders.private)
            .map(|(m, p)| m * p.ncols() as f64)
            .sum();
        self.final_objective().map(|o| (streams - o) / LN_2)
    }
}

fn unit_columns(h: &CMat, count: usize) -> CMat {
    let m = h.nrows();
    let mut out = CMat::zeros(m, count);
    for j in 0..count {
        let col = if j < h.ncols() { h.column(j).into_owned() } else { CMat::zeros(m, 1).column(0).into_owned() };
        let norm = col.norm();
        if norm > 0.0 {
            out.set_column(j, &(col / c(norm, 0.0)));
        } else {
            out[(j % m, j)] = c(1.0, 0.0);
        }
    }
    out
}

/// Leading `count` left singular vectors of `h`.
fn dominant_directions(h: &CMat, count: usize) -> CMat {
    let m = h.nrows();
    if count == 0 {
        return CMat::zeros(m, 0);
    }
    let svd = h.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let mut out = CMat::zeros(m, count);
    for j in 0..count {
        match order.get(j) {
            Some(&i) if svd.singular_values[i] > 0.0 => out.set_column(j, &u.column(i)),
            _ => out[(j % m, j)] = c(1.0, 0.0),
        }
    }
    out
}

/// Power of the common precoder at initialization.
///
/// `Pt - Pt^alpha` under the CSIT power law, `Pt / 2` with perfect CSIT,
/// never below 5% of `Pt` (the law gives zero at `alpha = 1` and a negative
/// value below unit power).
pub fn initial_common_power(config: &SystemConfig) -> f64 {
    let pt = config.power;
    let raw = match config.csit {
        crate::config::CsitQuality::Perfect => pt / 2.0,
        crate::config::CsitQuality::Alpha(a) => pt - pt.powf(a),
    };
    raw.max(0.05 * pt).min(pt)
}

fn mrt_private(est: &ChannelEstimate, qk: &[usize], pool: f64) -> Vec<CMat> {
    let active = qk.iter().filter(|&&q| q > 0).count().max(1);
    est.channel
        .users
        .iter()
        .zip(qk)
        .map(|(h, &q)| {
            if q == 0 {
                return CMat::zeros(h.nrows(), 0);
            }
            let per_stream = pool / active as f64 / q as f64;
            unit_columns(h, q) * c(per_stream.sqrt(), 0.0)
        })
        .collect()
}

/// Starting precoders. Rate splitting uses MRT private precoders and the
/// dominant singular directions of the stacked estimate for the common
/// precoder; MU-MIMO and NOMA use MRT with uniform power.
pub fn initialize_precoders(config: &SystemConfig, est: &ChannelEstimate, scheme: Scheme) -> PrecoderSet {
    let (qc, qk) = scheme.shape(config);
    let m = config.tx_antennas;
    let pt = config.power;
    let p = match scheme {
        Scheme::RateSplitting => {
            let qc_pow = if qc == 0 { 0.0 } else { initial_common_power(config) };
            let common = dominant_directions(&est.channel.stacked(), qc) * c((qc_pow / qc.max(1) as f64).sqrt(), 0.0);
            PrecoderSet {
                common,
                private: mrt_private(est, &qk, pt - qc_pow),
            }
        }
        Scheme::MuMimo => PrecoderSet {
            common: CMat::zeros(m, 0),
            private: mrt_private(est, &qk, pt),
        },
        Scheme::Noma { weak } => {
            let k = qk.len() as f64;
            let common = unit_columns(est.channel.user(weak), qc) * c((pt / k / qc as f64).sqrt(), 0.0);
            PrecoderSet {
                common,
                private: mrt_private(est, &qk, pt * (k - 1.0) / k),
            }
        }
    };
    p.normalized_to(pt)
}

/// Average rates, shares and WASR of a fixed point.
pub fn evaluate(
    samples: &SampleSet,
    precoders: &PrecoderSet,
    shares: &[f64],
    weights: &[f64],
    noise: f64,
) -> Result<(AverageRates, f64)> {
    let avg = rates::average_rates(samples, precoders, noise)?;
    let mut shares: Vec<f64> = shares.iter().map(|&s| s.max(0.0)).collect();
    let total: f64 = shares.iter().sum();
    if total > avg.common && total > 0.0 {
        let f = avg.common / total;
        shares.iter_mut().for_each(|s| *s *= f);
    }
    let avg = avg.with_shares(shares)?;
    let wasr = avg.weighted_sum(weights);
    Ok((avg, wasr))
}

fn check_inputs(config: &SystemConfig, samples: &SampleSet, weights: &[f64], scheme: Scheme) -> Result<()> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    if weights.len() != config.users {
        return Err(Error::Dimension(format!("{} weights for {} users", weights.len(), config.users)));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) || weights.iter().all(|&w| w == 0.0) {
        return Err(Error::InvalidConfig("weights must be nonnegative, finite and not all zero".into()));
    }
    if let Scheme::Noma { weak } = scheme {
        if config.users != 2 {
            return Err(Error::Unsupported(format!("NOMA is implemented for 2 users, got {}", config.users)));
        }
        if weak > 1 {
            return Err(Error::Dimension(format!("weak user {weak} out of range")));
        }
    }
    Ok(())
}

/// Runs the alternating optimization from MRT-based initial precoders.
pub fn run_ao(
    config: &SystemConfig,
    est: &ChannelEstimate,
    samples: &SampleSet,
    weights: &[f64],
    scheme: Scheme,
    opts: &AoOptions,
) -> Result<OptResult> {
    let init = initialize_precoders(config, est, scheme);
    run_ao_from(config, samples, weights, scheme, init, opts)
}

/// Runs the alternating optimization from the given precoders.
pub fn run_ao_from(
    config: &SystemConfig,
    samples: &SampleSet,
    weights: &[f64],
    scheme: Scheme,
    init: PrecoderSet,
    opts: &AoOptions,
) -> Result<OptResult> {
    check_inputs(config, samples, weights, scheme)?;
    let (qc, qk) = scheme.shape(config);
    if init.common_streams() != qc || init.private_streams() != qk || init.tx_antennas() != config.tx_antennas {
        return Err(Error::Dimension("initial precoders do not match the scheme shape".into()));
    }
    let noise = config.noise_variance;
    let wmax = weights.iter().cloned().fold(0.0, f64::max);
    let mut trace_out = match &opts.trace_path {
        Some(path) => Some(BufWriter::new(File::create(path)?)),
        None => None,
    };

    let mut p = if init.power() > config.power { init.normalized_to(config.power) } else { init };
    let mut x = vec![0.0; config.users];
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut status = AoStatus::MaxIter;
    let mut non_monotone = false;
    let mut solver_max_iter = 0;
    for it in 0..opts.max_iter {
        let blocks = wmmse::step1_update(&p, samples, noise)?;
        let prob = qcqp::assemble(&blocks, weights, config.power, scheme.layout(), &p)?;
        let sol = opts.solver.solve(&prob)?;
        match sol.status {
            SolveStatus::Infeasible => {
                warn!("subproblem infeasible at iteration {it}; keeping previous precoders");
                break;
            }
            SolveStatus::MaxIter => solver_max_iter += 1,
            SolveStatus::Converged => {}
        }
        let obj = sol.objective;
        if let Some(w) = trace_out.as_mut() {
            writeln!(w, "{it} {obj:.12e} {:.3e}", sol.max_residual)?;
        }
        let prev = trace.last().map(|t| t.objective);
        trace.push(TraceEntry {
            iteration: it,
            objective: obj,
            residual: sol.max_residual,
        });
        p = sol.precoders;
        x = sol.xhat;
        if let Some(prev) = prev {
            if obj > prev + opts.monotone_tol * wmax {
                debug!("objective rose from {prev} to {obj} at iteration {it}");
                non_monotone = true;
            }
            if (obj - prev).abs() < opts.eps * wmax {
                status = AoStatus::Converged;
                break;
            }
        }
    }
    if let Some(w) = trace_out.as_mut() {
        w.flush()?;
    }
    let shares: Vec<f64> = x.iter().map(|v| (-v / LN_2).max(0.0)).collect();
    let (avg, wasr) = evaluate(samples, &p, &shares, weights, noise)?;
    Ok(OptResult {
        scheme,
        origin: Origin::Direct,
        totals: avg.totals(),
        shares: avg.shares.clone(),
        rates: avg,
        precoders: p,
        weights: weights.to_vec(),
        wasr,
        iterations: trace.len(),
        trace,
        status,
        non_monotone,
        solver_max_iter,
    })
}

/// Pads precoders with zero columns up to the given shape, if it is larger.
pub fn padded(p: &PrecoderSet, qc: usize, qk: &[usize]) -> Option<PrecoderSet> {
    if p.common_streams() > qc || p.private.len() != qk.len() || p.private.iter().zip(qk).any(|(x, &q)| x.ncols() > q) {
        return None;
    }
    let m = p.tx_antennas();
    let grow = |a: &CMat, cols: usize| {
        let mut out = CMat::zeros(m, cols);
        out.view_mut((0, 0), (m, a.ncols())).copy_from(a);
        out
    };
    Some(PrecoderSet {
        common: grow(&p.common, qc),
        private: p.private.iter().zip(qk).map(|(x, &q)| grow(x, q)).collect(),
    })
}

/// Reads a MU-MIMO or NOMA solution as a rate-splitting point (zero columns
/// where the baseline has fewer streams). `None` if the shapes do not fit.
pub fn embed_as_rs(
    config: &SystemConfig,
    samples: &SampleSet,
    baseline: &OptResult,
) -> Result<Option<OptResult>> {
    let (qc, qk) = Scheme::RateSplitting.shape(config);
    let Some(p) = padded(&baseline.precoders, qc, &qk) else {
        return Ok(None);
    };
    let (avg, wasr) = evaluate(samples, &p, &baseline.shares, &baseline.weights, config.noise_variance)?;
    Ok(Some(OptResult {
        scheme: Scheme::RateSplitting,
        origin: Origin::Embedded(baseline.scheme),
        totals: avg.totals(),
        shares: avg.shares.clone(),
        rates: avg,
        precoders: p,
        wasr,
        ..baseline.clone()
    }))
}

/// Fraction of the power handed to the common precoder in the warm start.
const WARM_COMMON_FRACTION: f64 = 0.01;

/// Rate splitting, best of: the MRT-SVD start, a warm start from the MU-MIMO
/// solution with a small common precoder, and the baselines themselves read
/// as rate-splitting points. The last makes `RS >= MU-MIMO` (and `>= NOMA`
/// when shapes allow) hold exactly on the sample set.
pub fn rate_splitting_best(
    config: &SystemConfig,
    est: &ChannelEstimate,
    samples: &SampleSet,
    weights: &[f64],
    opts: &AoOptions,
    mu_mimo: &OptResult,
    others: &[&OptResult],
) -> Result<OptResult> {
    let mut best = run_ao(config, est, samples, weights, Scheme::RateSplitting, opts)?;
    let (qc, qk) = Scheme::RateSplitting.shape(config);
    if qc > 0 {
        if let Some(base) = padded(&mu_mimo.precoders, qc, &qk) {
            let pt = config.power;
            let common = dominant_directions(&est.channel.stacked(), qc)
                * c((WARM_COMMON_FRACTION * pt / qc as f64).sqrt(), 0.0);
            let start = PrecoderSet {
                common,
                private: base.scaled((1.0 - WARM_COMMON_FRACTION).sqrt()).private,
            };
            let mut warm = run_ao_from(config, samples, weights, Scheme::RateSplitting, start, opts)?;
            warm.origin = Origin::WarmStart;
            if warm.wasr > best.wasr {
                best = warm;
            }
        }
    }
    for cand in std::iter::once(mu_mimo).chain(others.iter().copied()) {
        if let Some(e) = embed_as_rs(config, samples, cand)? {
            if e.wasr > best.wasr {
                best = e;
            }
        }
    }
    Ok(best)
}
