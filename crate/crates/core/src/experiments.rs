//! Experiment protocols: rate regions, ESR-versus-SNR sweeps with fitted
//! slopes, closed-form DoF tables and link-level throughput sweeps.
//!
//! Realizations draw their channels from `seed` split by realization index,
//! so every SNR point and weight pair sees the same channel draws. Work runs
//! on the rayon pool and is reduced in index order.
//!
//! Output is CSV, one file per experiment, plus a JSON sidecar holding the
//! resolved spec. Rows are either per-realization (`row = realization`) or
//! averages (`row = mean`, empty `realization`). Columns:
//!
//! ```text
//! rate-region: row,scheme,qc,alpha,snr_db,seed,realization,mu1,mu2,rate1,rate2,sum_rate,wasr
//! esr-sweep:   row,scheme,qc,alpha,snr_db,seed,realization,esr,dof,slope
//! dof:         scheme,qc,alpha,m,q,k,qp,dof
//! lls:         row,scheme,qc,alpha,snr_db,seed,realization,throughput,shannon_bound,esr,decoded_bits,channel_uses
//! ```
//!
//! `scheme` is `rs`, `mumimo` or `noma`; `qc` is the common-stream count of
//! the run (0 for MU-MIMO). Rates are bits per channel use.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ao::{self, AoOptions, OptResult};
use crate::baselines::{self, DofInputs};
use crate::channel::{draw_realization, ChannelEstimate, SampleSet};
use crate::config::{db_to_linear, SystemConfig};
use crate::error::{Error, Result};
use crate::lls::{self, AmcParams, ConvolutionalCode, LinkOptions, LlsReport};
use crate::rng::RandomSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Rs,
    Mumimo,
    Noma,
}

impl SchemeKind {
    pub fn label(self) -> &'static str {
        match self {
            SchemeKind::Rs => "rs",
            SchemeKind::Mumimo => "mumimo",
            SchemeKind::Noma => "noma",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rs" => Ok(SchemeKind::Rs),
            "mumimo" | "mu-mimo" => Ok(SchemeKind::Mumimo),
            "noma" => Ok(SchemeKind::Noma),
            other => Err(Error::Parse(format!("unknown scheme `{other}` (expected rs, mumimo or noma)"))),
        }
    }
}

/// A scheme and its common-stream count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct SchemeTag {
    pub scheme: SchemeKind,
    pub qc: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    RateRegion,
    EsrSweep,
    DofTable,
    LlsSweep,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Base configuration; the power is replaced at every SNR point.
    pub config: SystemConfig,
    pub schemes: Vec<SchemeKind>,
    /// Common-stream counts to run rate splitting with.
    pub common_streams: Vec<usize>,
    pub snr_db: Vec<f64>,
    /// L
    pub realizations: usize,
    /// Weight vectors, one per rate-region point; sweeps use the first.
    pub weights: Vec<Vec<f64>>,
    /// Highest SNR points used in the slope fit.
    pub slope_points: usize,
    pub seed: u64,
    /// Channel uses per link-level frame.
    pub symbols: usize,
    pub amc: AmcParams,
    #[serde(skip)]
    pub ao: AoOptions,
}

/// `mu_2 = 10^e` for `e` in `-3, -1, -0.95, .., 0.95, 1, 3` with `mu_1 = 1`.
pub fn region_weights() -> Vec<Vec<f64>> {
    let mut exps = vec![-3.0];
    exps.extend((0..=40).map(|i| (-100 + 5 * i) as f64 / 100.0));
    exps.push(3.0);
    exps.into_iter().map(|e| vec![1.0, 10f64.powf(e)]).collect()
}

impl ExperimentSpec {
    /// Desk-scale defaults: L = 10 realizations, N = 100 samples.
    pub fn desk(kind: ExperimentKind, config: SystemConfig) -> Self {
        let k = config.users;
        let qc = config.common_streams;
        let weights = match kind {
            ExperimentKind::RateRegion => region_weights(),
            _ => vec![vec![1.0; k]],
        };
        let snr_db = match kind {
            ExperimentKind::EsrSweep => vec![20.0, 25.0, 30.0, 35.0],
            _ => vec![config.snr_db()],
        };
        let seed = config.seed;
        Self {
            kind,
            config: config.with_samples(100),
            schemes: vec![SchemeKind::Rs, SchemeKind::Mumimo, SchemeKind::Noma],
            common_streams: vec![qc],
            snr_db,
            realizations: 10,
            weights,
            slope_points: 4,
            seed,
            symbols: 1024,
            amc: AmcParams::default(),
            ao: AoOptions::default(),
        }
    }

    /// L = 100 realizations and N = 1000 samples.
    pub fn full_scale(mut self) -> Self {
        self.realizations = 100;
        self.config.samples = 1000;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.realizations == 0 {
            return Err(Error::InvalidConfig("at least one realization is required".into()));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("SNR grid must be non-empty and finite".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig("no schemes selected".into()));
        }
        let bound = self.config.tx_antennas.min(self.config.rx_antennas);
        if self.schemes.contains(&SchemeKind::Rs) && self.common_streams.iter().any(|&q| q > bound) {
            return Err(Error::InvalidConfig(format!("common-stream counts must not exceed min(M, Q) = {bound}")));
        }
        if self.weights.is_empty() || self.weights.iter().any(|w| w.len() != self.config.users) {
            return Err(Error::InvalidConfig("each weight vector needs one entry per user".into()));
        }
        if self.schemes.contains(&SchemeKind::Noma) && self.config.users != 2 {
            return Err(Error::Unsupported(format!("NOMA is implemented for 2 users, got {}", self.config.users)));
        }
        Ok(())
    }

    fn config_at(&self, snr_db: f64) -> SystemConfig {
        let mut c = self.config.clone();
        c.power = db_to_linear(snr_db);
        c.seed = self.seed;
        c
    }

    fn alpha(&self) -> String {
        self.config.csit.to_string()
    }

    fn realization_rng(&self, r: usize) -> RandomSource {
        RandomSource::new(self.seed).split_named("realization", r as u64)
    }
}

/// Runs every requested scheme on one realization. MU-MIMO always runs (it
/// warm-starts rate splitting) and so does NOMA for two users; rate
/// splitting keeps the best of its own runs and the baselines read as
/// rate-splitting points.
pub fn solve_schemes(
    spec: &ExperimentSpec,
    config: &SystemConfig,
    est: &ChannelEstimate,
    samples: &SampleSet,
    weights: &[f64],
) -> Result<Vec<(SchemeTag, OptResult)>> {
    let opts = &spec.ao;
    let mu = baselines::mu_mimo_optimize(config, est, samples, weights, opts)?;
    let noma = if config.users == 2 {
        Some(baselines::noma_optimize_2user(config, est, samples, weights, opts)?)
    } else {
        None
    };
    let mut out = Vec::new();
    if spec.schemes.contains(&SchemeKind::Rs) {
        for &qc in &spec.common_streams {
            let mut c = config.clone();
            c.common_streams = qc;
            let others: Vec<&OptResult> = noma.iter().collect();
            let rs = ao::rate_splitting_best(&c, est, samples, weights, opts, &mu, &others)?;
            out.push((SchemeTag { scheme: SchemeKind::Rs, qc }, rs));
        }
    }
    if spec.schemes.contains(&SchemeKind::Mumimo) {
        out.push((SchemeTag { scheme: SchemeKind::Mumimo, qc: 0 }, mu));
    }
    if spec.schemes.contains(&SchemeKind::Noma) {
        if let Some(n) = noma {
            let qc = n.precoders.common_streams();
            out.push((SchemeTag { scheme: SchemeKind::Noma, qc }, n));
        }
    }
    Ok(out)
}

fn grid<T: Send>(outer: usize, inner: usize, f: impl Fn(usize, usize) -> Result<T> + Sync) -> Result<Vec<Vec<T>>> {
    let flat: Vec<T> = (0..outer * inner)
        .into_par_iter()
        .map(|i| f(i / inner, i % inner))
        .collect::<Result<Vec<T>>>()?;
    let mut it = flat.into_iter();
    Ok((0..outer).map(|_| it.by_ref().take(inner).collect()).collect())
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionRow {
    pub row: &'static str,
    pub scheme: SchemeKind,
    pub qc: usize,
    pub alpha: String,
    pub snr_db: f64,
    pub seed: u64,
    pub realization: Option<usize>,
    pub mu1: f64,
    pub mu2: f64,
    pub rate1: f64,
    pub rate2: f64,
    pub sum_rate: f64,
    pub wasr: f64,
}

/// Per-user average totals for every weight pair, scheme and realization,
/// followed by the averaged boundary points.
pub fn rate_region(spec: &ExperimentSpec) -> Result<Vec<RegionRow>> {
    spec.validate()?;
    if spec.config.users != 2 {
        return Err(Error::Unsupported("rate regions are drawn for 2 users".into()));
    }
    let mut rows = Vec::new();
    for &snr in &spec.snr_db {
        let cfg = spec.config_at(snr);
        let results = grid(spec.weights.len(), spec.realizations, |w, r| {
            let (_, est, samples) = draw_realization(&cfg, &spec.realization_rng(r))?;
            solve_schemes(spec, &cfg, &est, &samples, &spec.weights[w])
        })?;
        for (w, per_real) in results.iter().enumerate() {
            let mu = &spec.weights[w];
            let row = |kind, tag: SchemeTag, r: Option<usize>, t: &[f64], wasr: f64| RegionRow {
                row: kind,
                scheme: tag.scheme,
                qc: tag.qc,
                alpha: spec.alpha(),
                snr_db: snr,
                seed: spec.seed,
                realization: r,
                mu1: mu[0],
                mu2: mu[1],
                rate1: t[0],
                rate2: t[1],
                sum_rate: t[0] + t[1],
                wasr,
            };
            for (r, res) in per_real.iter().enumerate() {
                for (tag, o) in res {
                    rows.push(row("realization", *tag, Some(r), &o.totals, o.wasr));
                }
            }
            for (i, (tag, _)) in per_real[0].iter().enumerate() {
                let t: Vec<f64> = (0..2).map(|u| mean(per_real.iter().map(|res| res[i].1.totals[u]))).collect();
                let wasr = mean(per_real.iter().map(|res| res[i].1.wasr));
                rows.push(row("mean", *tag, None, &t, wasr));
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EsrRow {
    pub row: &'static str,
    pub scheme: SchemeKind,
    pub qc: usize,
    pub alpha: String,
    pub snr_db: f64,
    pub seed: u64,
    pub realization: Option<usize>,
    pub esr: f64,
    /// Closed-form sum-DoF, where one exists.
    pub dof: Option<f64>,
    /// Fitted high-SNR slope, on mean rows.
    pub slope: Option<f64>,
}

/// Least-squares slope of ESR against `log2(Pt)` over the `top` highest
/// SNR points.
pub fn fit_slope(points: &[(f64, f64)], top: usize) -> Option<f64> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let pts = &pts[pts.len().saturating_sub(top.max(2))..];
    if pts.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0 / 10.0 * 10f64.log2()).collect();
    let mx = mean(xs.iter().copied());
    let my = mean(pts.iter().map(|p| p.1));
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(xs.iter().zip(pts).map(|(x, p)| (x - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

fn closed_form_dof(spec: &ExperimentSpec, tag: SchemeTag) -> Option<f64> {
    let mut d = DofInputs::from_config(&spec.config);
    d.qc = tag.qc;
    match tag.scheme {
        SchemeKind::Rs => baselines::dof_rs(&d).ok(),
        SchemeKind::Mumimo => baselines::dof_mu_mimo(&d).ok(),
        SchemeKind::Noma => baselines::dof_noma(&d).ok(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EsrSweep {
    pub rows: Vec<EsrRow>,
    pub slopes: Vec<(SchemeTag, Option<f64>)>,
}

/// Equal-weight ESR per scheme and SNR point, with fitted slopes.
pub fn esr_sweep(spec: &ExperimentSpec) -> Result<EsrSweep> {
    spec.validate()?;
    let weights = &spec.weights[0];
    let results = grid(spec.snr_db.len(), spec.realizations, |s, r| {
        let cfg = spec.config_at(spec.snr_db[s]);
        let (_, est, samples) = draw_realization(&cfg, &spec.realization_rng(r))?;
        solve_schemes(spec, &cfg, &est, &samples, weights)
    })?;
    let tags: Vec<SchemeTag> = results[0][0].iter().map(|(t, _)| *t).collect();
    let mut rows = Vec::new();
    let mut means = vec![Vec::new(); tags.len()];
    for (s, per_real) in results.iter().enumerate() {
        let snr = spec.snr_db[s];
        for (i, &tag) in tags.iter().enumerate() {
            let row = |kind, r: Option<usize>, esr: f64| EsrRow {
                row: kind,
                scheme: tag.scheme,
                qc: tag.qc,
                alpha: spec.alpha(),
                snr_db: snr,
                seed: spec.seed,
                realization: r,
                esr,
                dof: closed_form_dof(spec, tag),
                slope: None,
            };
            for (r, res) in per_real.iter().enumerate() {
                rows.push(row("realization", Some(r), res[i].1.rates.sum_rate()));
            }
            let m = mean(per_real.iter().map(|res| res[i].1.rates.sum_rate()));
            means[i].push((snr, m));
            rows.push(row("mean", None, m));
        }
    }
    let slopes: Vec<(SchemeTag, Option<f64>)> =
        tags.iter().zip(&means).map(|(t, m)| (*t, fit_slope(m, spec.slope_points))).collect();
    for row in rows.iter_mut().filter(|r| r.row == "mean") {
        row.slope = slopes.iter().find(|(t, _)| t.scheme == row.scheme && t.qc == row.qc).and_then(|(_, s)| *s);
    }
    Ok(EsrSweep { rows, slopes })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DofRow {
    pub scheme: SchemeKind,
    pub qc: usize,
    pub alpha: f64,
    pub m: usize,
    pub q: usize,
    pub k: usize,
    pub qp: usize,
    pub dof: f64,
}

/// Closed-form sum-DoF of every requested scheme; rate splitting once per
/// common-stream count.
pub fn dof_table(spec: &ExperimentSpec) -> Result<Vec<DofRow>> {
    let base = DofInputs::from_config(&spec.config);
    let row = |scheme, d: &DofInputs, dof| DofRow {
        scheme,
        qc: d.qc,
        alpha: d.alpha,
        m: d.m,
        q: d.q,
        k: d.k,
        qp: d.qp,
        dof,
    };
    let mut rows = Vec::new();
    for &s in &spec.schemes {
        match s {
            SchemeKind::Rs => {
                for &qc in &spec.common_streams {
                    let d = DofInputs { qc, ..base };
                    rows.push(row(s, &d, baselines::dof_rs(&d)?));
                }
            }
            SchemeKind::Mumimo => {
                let d = DofInputs { qc: 0, ..base };
                rows.push(row(s, &d, baselines::dof_mu_mimo(&d)?));
            }
            SchemeKind::Noma => {
                let d = DofInputs { qc: base.m.min(base.q), ..base };
                rows.push(row(s, &d, baselines::dof_noma(&d)?));
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlsRow {
    pub row: &'static str,
    pub scheme: SchemeKind,
    pub qc: usize,
    pub alpha: String,
    pub snr_db: f64,
    pub seed: u64,
    pub realization: Option<usize>,
    /// Decoded bits over channel uses.
    pub throughput: f64,
    /// Gaussian-signalling sum rate of the same precoders on the true channel.
    pub shannon_bound: f64,
    /// Average sum rate the optimizer reported on its sample set.
    pub esr: f64,
    pub decoded_bits: f64,
    pub channel_uses: usize,
}

/// Throughput of every scheme per SNR point: AO on the estimate, then one
/// frame per stream on the true channel.
pub fn lls_sweep(spec: &ExperimentSpec) -> Result<Vec<LlsRow>> {
    spec.validate()?;
    let weights = &spec.weights[0];
    let link = LinkOptions { symbols: spec.symbols };
    let results = grid(spec.snr_db.len(), spec.realizations, |s, r| {
        let cfg = spec.config_at(spec.snr_db[s]);
        let rng = spec.realization_rng(r);
        let (h, est, samples) = draw_realization(&cfg, &rng)?;
        let solved = solve_schemes(spec, &cfg, &est, &samples, weights)?;
        let mut out = Vec::with_capacity(solved.len());
        for (i, (tag, o)) in solved.into_iter().enumerate() {
            let plan = lls::plan_streams(&o.precoders, &h, cfg.noise_variance, &spec.amc)?;
            let mut link_rng = rng.split_named("link", s as u64).split(i as u64);
            let outcome = lls::simulate_link(
                &o.precoders,
                &h,
                &plan,
                &o.shares,
                cfg.noise_variance,
                &link,
                &ConvolutionalCode,
                &mut link_rng,
            )?;
            let bound = lls::shannon_bound(&o.precoders, &h, cfg.noise_variance)?;
            out.push((tag, outcome, bound, o.rates.sum_rate()));
        }
        Ok(out)
    })?;
    let mut rows = Vec::new();
    for (s, per_real) in results.iter().enumerate() {
        let snr = spec.snr_db[s];
        for i in 0..per_real[0].len() {
            let tag = per_real[0][i].0;
            let row = |kind, r, throughput, bound, esr, bits, uses| LlsRow {
                row: kind,
                scheme: tag.scheme,
                qc: tag.qc,
                alpha: spec.alpha(),
                snr_db: snr,
                seed: spec.seed,
                realization: r,
                throughput,
                shannon_bound: bound,
                esr,
                decoded_bits: bits,
                channel_uses: uses,
            };
            let mut report = LlsReport::default();
            for (r, res) in per_real.iter().enumerate() {
                let (_, outcome, bound, esr) = &res[i];
                let bits: f64 = outcome.decoded_bits.iter().sum();
                let single = LlsReport { realizations: vec![outcome.clone()] };
                rows.push(row("realization", Some(r), single.throughput(), *bound, *esr, bits, outcome.channel_uses));
                report.push(outcome.clone());
            }
            let bits: f64 = report.realizations.iter().flat_map(|o| o.decoded_bits.iter()).sum();
            let uses: usize = report.realizations.iter().map(|o| o.channel_uses).sum();
            rows.push(row(
                "mean",
                None,
                report.throughput(),
                mean(per_real.iter().map(|res| res[i].2)),
                mean(per_real.iter().map(|res| res[i].3)),
                bits,
                uses,
            ));
        }
    }
    Ok(rows)
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// `<out>.json` next to `<out>.csv`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

pub fn write_sidecar(out: &Path, spec: &ExperimentSpec) -> Result<()> {
    let text = serde_json::to_string_pretty(spec)?;
    std::fs::write(sidecar_path(out), text)?;
    Ok(())
}

/// Runs the experiment and writes its CSV and sidecar to `out`.
pub fn run_to(spec: &ExperimentSpec, out: &Path) -> Result<()> {
    match spec.kind {
        ExperimentKind::RateRegion => write_csv(out, &rate_region(spec)?)?,
        ExperimentKind::EsrSweep => write_csv(out, &esr_sweep(spec)?.rows)?,
        ExperimentKind::DofTable => write_csv(out, &dof_table(spec)?)?,
        ExperimentKind::LlsSweep => write_csv(out, &lls_sweep(spec)?)?,
    }
    write_sidecar(out, spec)
}
