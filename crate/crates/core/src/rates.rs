//! Rate algebra for linearly precoded common/private streams.
//!
//! User `k` first decodes the common stream vector treating every private
//! stream as noise, cancels it, then decodes its own private streams
//! treating the other users' private streams as noise. All rates returned
//! from this module are in bits per channel use unless a name ends in
//! `_nats`.

use std::f64::consts::LN_2;

use crate::channel::{ChannelMatrix, SampleSet};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat};

/// Which stream vector of a user a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Common,
    Private,
}

/// `P = [P_c, P_1, .., P_K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    pub common: CMat,
    pub private: Vec<CMat>,
}

impl PrecoderSet {
    pub fn zeros(m: usize, qc: usize, qk: &[usize]) -> Self {
        Self {
            common: CMat::zeros(m, qc),
            private: qk.iter().map(|&q| CMat::zeros(m, q)).collect(),
        }
    }

    pub fn for_config(cfg: &SystemConfig) -> Self {
        Self::zeros(cfg.tx_antennas, cfg.common_streams, &cfg.private_streams)
    }

    pub fn tx_antennas(&self) -> usize {
        self.common.nrows()
    }

    pub fn common_streams(&self) -> usize {
        self.common.ncols()
    }

    pub fn private_streams(&self) -> Vec<usize> {
        self.private.iter().map(|p| p.ncols()).collect()
    }

    /// `tr(P P^H)`.
    pub fn power(&self) -> f64 {
        linalg::fro2(&self.common) + self.private.iter().map(linalg::fro2).sum::<f64>()
    }

    pub fn common_power(&self) -> f64 {
        linalg::fro2(&self.common)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let z = c(s, 0.0);
        Self {
            common: &self.common * z,
            private: self.private.iter().map(|p| p * z).collect(),
        }
    }

    /// Rescales so that `tr(P P^H) = power` (no-op for all-zero precoders).
    pub fn normalized_to(&self, power: f64) -> Self {
        let cur = self.power();
        if cur > 0.0 {
            self.scaled((power / cur).sqrt())
        } else {
            self.clone()
        }
    }

    /// `sum_i P_i P_i^H` over the private precoders.
    pub fn private_covariance(&self) -> CMat {
        let m = self.tx_antennas();
        let mut acc = CMat::zeros(m, m);
        for p in &self.private {
            acc += p * p.adjoint();
        }
        acc
    }

    pub fn is_finite(&self) -> bool {
        linalg::is_finite(&self.common) && self.private.iter().all(linalg::is_finite)
    }

    pub(crate) fn check_user(&self, h: &CMat, k: usize) -> Result<()> {
        if k >= self.private.len() {
            return Err(Error::Dimension(format!("user index {k} out of range {}", self.private.len())));
        }
        if h.nrows() != self.tx_antennas() {
            return Err(Error::Dimension(format!(
                "channel has {} rows, precoders {}",
                h.nrows(),
                self.tx_antennas()
            )));
        }
        if self.private.iter().any(|p| p.nrows() != self.tx_antennas()) {
            return Err(Error::Dimension("private precoder row count differs from common".into()));
        }
        if !linalg::is_finite(h) || !self.is_finite() {
            return Err(Error::NonFinite("rate inputs"));
        }
        Ok(())
    }
}

/// Noise-plus-interference covariances at user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePair {
    /// `sigma_n^2 I + sum_i H^H P_i P_i^H H` (all private streams interfere).
    pub common: CMat,
    /// Same sum without `i = k`.
    pub private: CMat,
}

pub fn interference_covariances(h: &CMat, p: &PrecoderSet, k: usize, noise: f64) -> Result<CovariancePair> {
    p.check_user(h, k)?;
    let q = h.ncols();
    let mut rp = linalg::identity(q) * c(noise, 0.0);
    for (i, pi) in p.private.iter().enumerate() {
        if i == k || pi.ncols() == 0 {
            continue;
        }
        let f = h.adjoint() * pi;
        rp += &f * f.adjoint();
    }
    let fk = h.adjoint() * &p.private[k];
    let rc = &rp + &fk * fk.adjoint();
    Ok(CovariancePair {
        common: linalg::hermitian_part(&rc),
        private: linalg::hermitian_part(&rp),
    })
}

fn stream_parts<'a>(h: &CMat, p: &'a PrecoderSet, k: usize, kind: StreamKind, noise: f64) -> Result<(&'a CMat, CMat)> {
    let cov = interference_covariances(h, p, k, noise)?;
    Ok(match kind {
        StreamKind::Common => (&p.common, cov.common),
        StreamKind::Private => (&p.private[k], cov.private),
    })
}

/// `log det(I + P^H H R^-1 H^H P)` in nats, via a Cholesky whitening of `R`.
fn logdet_rate_nats(h: &CMat, pz: &CMat, r: &CMat) -> Result<f64> {
    if pz.ncols() == 0 {
        return Ok(0.0);
    }
    let f = h.adjoint() * pz;
    let w = linalg::solve_hpd(r, &f)?;
    let s = linalg::identity(pz.ncols()) + linalg::hermitian_part(&(f.adjoint() * w));
    linalg::logdet_hpd(&s)
}

/// `(R_{c,k}, R_{p,k})` in nats.
pub fn instantaneous_rates_nats(h: &CMat, p: &PrecoderSet, k: usize, noise: f64) -> Result<(f64, f64)> {
    let cov = interference_covariances(h, p, k, noise)?;
    let rc = logdet_rate_nats(h, &p.common, &cov.common)?;
    let rp = logdet_rate_nats(h, &p.private[k], &cov.private)?;
    Ok((rc.max(0.0), rp.max(0.0)))
}

/// `(R_{c,k}, R_{p,k})` in bits per channel use.
pub fn instantaneous_rates(h: &CMat, p: &PrecoderSet, k: usize, noise: f64) -> Result<(f64, f64)> {
    let (rc, rp) = instantaneous_rates_nats(h, p, k, noise)?;
    Ok((rc / LN_2, rp / LN_2))
}

/// MMSE receive filters `G = P^H H (H^H P P^H H + R)^-1` for the common and
/// private stream vectors of user `k`.
pub fn mmse_equalizers(h: &CMat, p: &PrecoderSet, k: usize, noise: f64) -> Result<(CMat, CMat)> {
    let gc = mmse_equalizer(h, p, k, StreamKind::Common, noise)?;
    let gp = mmse_equalizer(h, p, k, StreamKind::Private, noise)?;
    Ok((gc, gp))
}

pub fn mmse_equalizer(h: &CMat, p: &PrecoderSet, k: usize, kind: StreamKind, noise: f64) -> Result<CMat> {
    let (pz, r) = stream_parts(h, p, k, kind, noise)?;
    if pz.ncols() == 0 {
        return Ok(CMat::zeros(0, h.ncols()));
    }
    let f = h.adjoint() * pz;
    let t = linalg::hermitian_part(&(&f * f.adjoint() + r));
    // T is Hermitian, so (F^H T^-1) = (T^-1 F)^H.
    Ok(linalg::solve_hpd(&t, &f)?.adjoint())
}

/// MMSE matrices `E = (I + P^H H R^-1 H^H P)^-1` for common and private.
pub fn mmse_matrices(h: &CMat, p: &PrecoderSet, k: usize, noise: f64) -> Result<(CMat, CMat)> {
    Ok((
        mmse_matrix(h, p, k, StreamKind::Common, noise)?,
        mmse_matrix(h, p, k, StreamKind::Private, noise)?,
    ))
}

pub fn mmse_matrix(h: &CMat, p: &PrecoderSet, k: usize, kind: StreamKind, noise: f64) -> Result<CMat> {
    let (pz, r) = stream_parts(h, p, k, kind, noise)?;
    let n = pz.ncols();
    if n == 0 {
        return Ok(CMat::zeros(0, 0));
    }
    let f = h.adjoint() * pz;
    let w = linalg::solve_hpd(&r, &f)?;
    let s = linalg::identity(n) + linalg::hermitian_part(&(f.adjoint() * w));
    linalg::inverse_hpd(&s)
}

/// MSE matrix of an arbitrary receive filter `g`:
/// `E = G T G^H - G H^H P - P^H H G^H + I`, `T = H^H P P^H H + R`.
pub fn mse_matrix(h: &CMat, p: &PrecoderSet, k: usize, kind: StreamKind, g: &CMat, noise: f64) -> Result<CMat> {
    let (pz, r) = stream_parts(h, p, k, kind, noise)?;
    let n = pz.ncols();
    if g.nrows() != n || g.ncols() != h.ncols() {
        return Err(Error::Dimension(format!(
            "equalizer is {}x{}, expected {}x{}",
            g.nrows(),
            g.ncols(),
            n,
            h.ncols()
        )));
    }
    let f = h.adjoint() * pz;
    let t = &f * f.adjoint() + r;
    let gf = g * &f;
    let e = g * t * g.adjoint() - &gf - gf.adjoint() + linalg::identity(n);
    Ok(linalg::hermitian_part(&e))
}

/// Rate via the MMSE-matrix identity `R = log2 det(E^-1) = -log2 det E`.
pub fn rate_from_mmse(e: &CMat) -> Result<f64> {
    if e.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(-linalg::logdet_hpd(e)? / LN_2)
}

/// Instantaneous rates of every user on one channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSample {
    pub common: Vec<f64>,
    pub private: Vec<f64>,
}

pub fn rate_sample(h: &ChannelMatrix, p: &PrecoderSet, noise: f64) -> Result<RateSample> {
    let k = h.num_users();
    if k != p.private.len() {
        return Err(Error::Dimension(format!("{k} channels for {} precoders", p.private.len())));
    }
    let mut common = Vec::with_capacity(k);
    let mut private = Vec::with_capacity(k);
    for (u, hk) in h.users.iter().enumerate() {
        let (rc, rp) = instantaneous_rates(hk, p, u, noise)?;
        common.push(rc);
        private.push(rp);
    }
    Ok(RateSample { common, private })
}

/// Sample-averaged rates over an SAA set plus the common-rate split.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageRates {
    /// Per-user average common rate.
    pub common_per_user: Vec<f64>,
    pub private: Vec<f64>,
    /// `min_k common_per_user[k]`, the decodable common rate.
    pub common: f64,
    /// Common-rate shares; empty until assigned.
    pub shares: Vec<f64>,
}

impl AverageRates {
    /// Attaches shares after checking `C_k >= 0` and `sum C_k <= common + 1e-9`.
    pub fn with_shares(mut self, shares: Vec<f64>) -> Result<Self> {
        if shares.len() != self.private.len() {
            return Err(Error::Dimension("share vector length".into()));
        }
        if shares.iter().any(|&s| s < -1e-9) {
            return Err(Error::InvalidConfig("negative common-rate share".into()));
        }
        if shares.iter().sum::<f64>() > self.common + 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "common-rate shares sum {} exceed common rate {}",
                shares.iter().sum::<f64>(),
                self.common
            )));
        }
        self.shares = shares;
        Ok(self)
    }

    /// `R_p,k + C_k` (private only while shares are unset).
    pub fn totals(&self) -> Vec<f64> {
        self.private
            .iter()
            .enumerate()
            .map(|(k, rp)| rp + self.shares.get(k).copied().unwrap_or(0.0))
            .collect()
    }

    pub fn weighted_sum(&self, weights: &[f64]) -> f64 {
        self.totals().iter().zip(weights).map(|(r, w)| r * w).sum()
    }

    pub fn sum_rate(&self) -> f64 {
        self.totals().iter().sum()
    }
}

/// Sample average functions of the common and private rates.
pub fn average_rates(samples: &SampleSet, p: &PrecoderSet, noise: f64) -> Result<AverageRates> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let k = p.private.len();
    let mut common = vec![0.0; k];
    let mut private = vec![0.0; k];
    for s in samples.iter() {
        let r = rate_sample(s, p, noise)?;
        for u in 0..k {
            common[u] += r.common[u];
            private[u] += r.private[u];
        }
    }
    let n = samples.len() as f64;
    common.iter_mut().for_each(|x| *x /= n);
    private.iter_mut().for_each(|x| *x /= n);
    let min_common = if p.common_streams() == 0 {
        0.0
    } else {
        common.iter().copied().fold(f64::INFINITY, f64::min)
    };
    Ok(AverageRates {
        common_per_user: common,
        private,
        common: min_common,
        shares: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{CVec, C64};
    use crate::rng::RandomSource;

    fn complex_scalar(m: &CMat) -> C64 {
        m[(0, 0)]
    }

    fn random_instance(seed: u64, m: usize, q: usize, qc: usize, qk: &[usize]) -> (Vec<CMat>, PrecoderSet) {
        let mut rng = RandomSource::new(seed);
        let hs = (0..qk.len()).map(|_| rng.complex_normal_matrix(m, q, 1.0)).collect();
        let p = PrecoderSet {
            common: rng.complex_normal_matrix(m, qc, 2.0),
            private: qk.iter().map(|&s| rng.complex_normal_matrix(m, s, 1.5)).collect(),
        };
        (hs, p)
    }

    #[test]
    fn no_private_power_means_noise_only() {
        let mut rng = RandomSource::new(1);
        let h = rng.complex_normal_matrix(4, 2, 1.0);
        let mut p = PrecoderSet::zeros(4, 2, &[2, 2]);
        p.common = rng.complex_normal_matrix(4, 2, 1.0);
        let cov = interference_covariances(&h, &p, 0, 0.7).unwrap();
        let expected = linalg::identity(2) * c(0.7, 0.0);
        assert!((cov.common - &expected).norm() < 1e-15);
        assert!((cov.private - &expected).norm() < 1e-15);
    }

    #[test]
    fn single_user_private_covariance_is_noise() {
        let (hs, p) = random_instance(2, 3, 2, 1, &[2]);
        let cov = interference_covariances(&hs[0], &p, 0, 1.3).unwrap();
        assert!((cov.private - linalg::identity(2) * c(1.3, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn covariances_match_direct_summation() {
        let (hs, p) = random_instance(3, 4, 2, 2, &[2, 2]);
        let h = &hs[1];
        let noise = 0.9;
        // entrywise re-summation over every precoder column
        let mut rc = CMat::zeros(2, 2);
        let mut rp = CMat::zeros(2, 2);
        for a in 0..2 {
            for b in 0..2 {
                let mut acc_c = if a == b { c(noise, 0.0) } else { c(0.0, 0.0) };
                let mut acc_p = acc_c;
                for (i, pi) in p.private.iter().enumerate() {
                    for col in 0..pi.ncols() {
                        let mut ya = c(0.0, 0.0);
                        let mut yb = c(0.0, 0.0);
                        for r in 0..4 {
                            ya += h[(r, a)].conj() * pi[(r, col)];
                            yb += h[(r, b)].conj() * pi[(r, col)];
                        }
                        acc_c += ya * yb.conj();
                        if i != 1 {
                            acc_p += ya * yb.conj();
                        }
                    }
                }
                rc[(a, b)] = acc_c;
                rp[(a, b)] = acc_p;
            }
        }
        let cov = interference_covariances(h, &p, 1, noise).unwrap();
        assert!((&cov.common - rc).norm() < 1e-12);
        assert!((&cov.private - rp).norm() < 1e-12);
        let ev = linalg::hermitian_eigenvalues(&cov.private);
        assert!(ev[0] >= noise - 1e-9);
    }

    #[test]
    fn zero_common_precoder_has_zero_rate() {
        let (hs, mut p) = random_instance(4, 4, 2, 2, &[2, 2]);
        p.common = CMat::zeros(4, 2);
        let (rc, _) = instantaneous_rates(&hs[0], &p, 0, 1.0).unwrap();
        assert_eq!(rc, 0.0);
        let (gc, _) = mmse_equalizers(&hs[0], &p, 0, 1.0).unwrap();
        assert!(gc.norm() == 0.0);
    }

    #[test]
    fn scalar_shannon_rate() {
        let h = CMat::from_element(1, 1, c(1.0, 0.0));
        let p = PrecoderSet {
            common: CMat::zeros(1, 0),
            private: vec![CMat::from_element(1, 1, c(10.0, 0.0))],
        };
        let (_, rp) = instantaneous_rates(&h, &p, 0, 1.0).unwrap();
        assert!((rp - 101f64.log2()).abs() < 1e-12);
        assert!((rp - 6.6582).abs() < 1e-4);
        let (_, ep) = mmse_matrices(&h, &p, 0, 1.0).unwrap();
        assert!((complex_scalar(&ep).re - 1.0 / 101.0).abs() < 1e-15);
    }

    #[test]
    fn scalar_mmse_filter_is_one_half() {
        let h = CMat::from_element(1, 1, c(1.0, 0.0));
        let p = PrecoderSet {
            common: CMat::zeros(1, 0),
            private: vec![CMat::from_element(1, 1, c(1.0, 0.0))],
        };
        let (_, gp) = mmse_equalizers(&h, &p, 0, 1.0).unwrap();
        assert!((complex_scalar(&gp) - c(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn zero_precoders_give_identity_mmse() {
        let (hs, _) = random_instance(5, 4, 2, 2, &[2, 2]);
        let p = PrecoderSet::zeros(4, 2, &[2, 2]);
        let (ec, ep) = mmse_matrices(&hs[0], &p, 0, 1.0).unwrap();
        assert!((ec - linalg::identity(2)).norm() < 1e-15);
        assert!((ep - linalg::identity(2)).norm() < 1e-15);
    }

    #[test]
    fn logdet_and_mmse_paths_agree() {
        for seed in 0..20 {
            let (hs, p) = random_instance(100 + seed, 5, 3, 2, &[2, 3]);
            for k in 0..2 {
                let (rc, rp) = instantaneous_rates(&hs[k], &p, k, 1.0).unwrap();
                let (ec, ep) = mmse_matrices(&hs[k], &p, k, 1.0).unwrap();
                assert!((rc - rate_from_mmse(&ec).unwrap()).abs() < 1e-9);
                assert!((rp - rate_from_mmse(&ep).unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mmse_matrix_equals_mse_at_mmse_filter() {
        let (hs, p) = random_instance(7, 4, 2, 2, &[2, 2]);
        for kind in [StreamKind::Common, StreamKind::Private] {
            let g = mmse_equalizer(&hs[0], &p, 0, kind, 0.8).unwrap();
            let e_def = mse_matrix(&hs[0], &p, 0, kind, &g, 0.8).unwrap();
            let e_closed = mmse_matrix(&hs[0], &p, 0, kind, 0.8).unwrap();
            assert!((e_def - e_closed).norm() < 1e-10);
        }
    }

    #[test]
    fn mmse_filter_is_stationary() {
        let (hs, p) = random_instance(8, 4, 2, 2, &[2, 2]);
        let g = mmse_equalizer(&hs[1], &p, 1, StreamKind::Common, 1.0).unwrap();
        let base = linalg::trace(&mse_matrix(&hs[1], &p, 1, StreamKind::Common, &g, 1.0).unwrap()).re;
        let mut rng = RandomSource::new(99);
        for _ in 0..20 {
            let d = rng.complex_normal_matrix(g.nrows(), g.ncols(), 1e-12);
            let pert = linalg::trace(&mse_matrix(&hs[1], &p, 1, StreamKind::Common, &(&g + d), 1.0).unwrap()).re;
            assert!(pert >= base - 1e-14, "perturbation decreased MSE: {pert} < {base}");
        }
    }

    #[test]
    fn average_of_two_samples_is_mean() {
        // Scalar channels with private rates 2 and 4 bits: 1 + p^2 |h|^2 = 4 and 16.
        let p = PrecoderSet {
            common: CMat::zeros(1, 0),
            private: vec![CMat::from_element(1, 1, c(1.0, 0.0))],
        };
        let s = SampleSet {
            samples: vec![
                ChannelMatrix::new(vec![CMat::from_element(1, 1, c(3f64.sqrt(), 0.0))]),
                ChannelMatrix::new(vec![CMat::from_element(1, 1, c(15f64.sqrt(), 0.0))]),
            ],
        };
        let avg = average_rates(&s, &p, 1.0).unwrap();
        assert!((avg.private[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_sample_average_is_instantaneous() {
        let (hs, p) = random_instance(9, 4, 2, 2, &[2, 2]);
        let ch = ChannelMatrix::new(hs.clone());
        let avg = average_rates(&SampleSet::single(ch.clone()), &p, 1.0).unwrap();
        let inst = rate_sample(&ch, &p, 1.0).unwrap();
        assert_eq!(avg.common_per_user, inst.common);
        assert_eq!(avg.private, inst.private);
        assert_eq!(avg.common, inst.common[0].min(inst.common[1]));
    }

    #[test]
    fn empty_sample_set_is_an_error() {
        let p = PrecoderSet::zeros(2, 1, &[1]);
        assert!(matches!(
            average_rates(&SampleSet { samples: vec![] }, &p, 1.0),
            Err(Error::EmptySampleSet)
        ));
    }

    #[test]
    fn shares_are_validated() {
        let (hs, p) = random_instance(10, 4, 2, 2, &[2, 2]);
        let avg = average_rates(&SampleSet::single(ChannelMatrix::new(hs)), &p, 1.0).unwrap();
        let rc = avg.common;
        assert!(avg.clone().with_shares(vec![rc / 2.0, rc / 2.0]).is_ok());
        assert!(avg.clone().with_shares(vec![rc, rc]).is_err());
        assert!(avg.with_shares(vec![-1.0, 0.0]).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let h = CMat::zeros(3, 2);
        let p = PrecoderSet::zeros(4, 1, &[1]);
        assert!(matches!(instantaneous_rates(&h, &p, 0, 1.0), Err(Error::Dimension(_))));
    }

    #[test]
    fn vec_layout_is_column_major() {
        let m = CMat::from_fn(2, 2, |i, j| c((i + 2 * j) as f64, 0.0));
        let v: CVec = linalg::vec(&m);
        assert_eq!(v.iter().map(|z| z.re).collect::<Vec<_>>(), vec![0.0, 1.0, 2.0, 3.0]);
    }
}
