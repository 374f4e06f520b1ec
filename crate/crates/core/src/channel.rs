//! Rayleigh channels, Gaussian CSIT errors and conditional sample sets.

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::rng::RandomSource;

/// Per-user channels `H_k` (M x Q each); received signal is `H_k^H x + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub users: Vec<CMat>,
}

impl ChannelMatrix {
    pub fn new(users: Vec<CMat>) -> Self {
        Self { users }
    }

    pub fn user(&self, k: usize) -> &CMat {
        &self.users[k]
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn tx_antennas(&self) -> usize {
        self.users.first().map_or(0, |h| h.nrows())
    }

    /// `H = [H_1, .., H_K]`, M x (Q K).
    pub fn stacked(&self) -> CMat {
        let m = self.tx_antennas();
        let cols: usize = self.users.iter().map(|h| h.ncols()).sum();
        let mut out = CMat::zeros(m, cols);
        let mut off = 0;
        for h in &self.users {
            out.view_mut((0, off), (m, h.ncols())).copy_from(h);
            off += h.ncols();
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.users.iter().all(crate::linalg::is_finite)
    }
}

/// The transmitter's view: `H_hat = H - H_tilde` and the error powers.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub channel: ChannelMatrix,
    pub error_variances: Vec<f64>,
}

impl ChannelEstimate {
    /// An exactly known channel.
    pub fn perfect(channel: ChannelMatrix) -> Self {
        let k = channel.num_users();
        Self {
            channel,
            error_variances: vec![0.0; k],
        }
    }

    pub fn is_perfect(&self) -> bool {
        self.error_variances.iter().all(|&v| v == 0.0)
    }
}

/// Conditional realizations `H^(n) = H_hat + H_tilde^(n)` sharing one estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<ChannelMatrix>,
}

impl SampleSet {
    pub fn single(h: ChannelMatrix) -> Self {
        Self { samples: vec![h] }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ChannelMatrix> {
        self.samples.iter()
    }
}

/// Draws `H_k` with i.i.d. CN(0, sigma_k^2) entries.
pub fn draw_channel(config: &SystemConfig, rng: &mut RandomSource) -> ChannelMatrix {
    let (m, q) = (config.tx_antennas, config.rx_antennas);
    let users = config
        .channel_variances
        .iter()
        .map(|&var| rng.complex_normal_matrix(m, q, var))
        .collect();
    ChannelMatrix { users }
}

/// Forms the transmitter estimate `H_hat = H - H_tilde`, with
/// `H_tilde` entries CN(0, sigma_k^2 Pt^-alpha). Perfect CSIT returns `H`.
pub fn make_estimate(h: &ChannelMatrix, config: &SystemConfig, rng: &mut RandomSource) -> ChannelEstimate {
    if config.csit.is_perfect() {
        return ChannelEstimate::perfect(h.clone());
    }
    let error_variances: Vec<f64> = (0..h.num_users()).map(|k| config.error_variance(k)).collect();
    let users = h
        .users
        .iter()
        .zip(&error_variances)
        .map(|(hk, &ev)| hk - rng.complex_normal_matrix(hk.nrows(), hk.ncols(), ev))
        .collect();
    ChannelEstimate {
        channel: ChannelMatrix { users },
        error_variances,
    }
}

/// Draws the SAA set. A perfect estimate yields the single exact sample.
pub fn make_saa_samples(
    est: &ChannelEstimate,
    config: &SystemConfig,
    rng: &mut RandomSource,
) -> Result<SampleSet> {
    if est.is_perfect() {
        return Ok(SampleSet::single(est.channel.clone()));
    }
    if config.samples == 0 {
        return Err(Error::EmptySampleSet);
    }
    let samples = (0..config.samples)
        .map(|_| {
            let users = est
                .channel
                .users
                .iter()
                .zip(&est.error_variances)
                .map(|(hk, &ev)| hk + rng.complex_normal_matrix(hk.nrows(), hk.ncols(), ev))
                .collect();
            ChannelMatrix { users }
        })
        .collect();
    Ok(SampleSet { samples })
}

/// One full channel-state draw: true channel, estimate and SAA samples,
/// each from its own child stream of `rng`.
pub fn draw_realization(
    config: &SystemConfig,
    rng: &RandomSource,
) -> Result<(ChannelMatrix, ChannelEstimate, SampleSet)> {
    let h = draw_channel(config, &mut rng.split_named("channel", 0));
    let est = make_estimate(&h, config, &mut rng.split_named("estimate", 0));
    let samples = make_saa_samples(&est, config, &mut rng.split_named("saa", 0))?;
    Ok((h, est, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CsitQuality;

    fn cfg(alpha: CsitQuality) -> SystemConfig {
        SystemConfig::new(4, 2, 2, 2, 20.0, alpha)
    }

    #[test]
    fn zero_variance_gives_zero_channel() {
        let c = cfg(CsitQuality::Perfect).with_channel_variances(vec![0.0, 0.0]);
        let h = draw_channel(&c, &mut RandomSource::new(1));
        assert!(h.users.iter().all(|m| m.iter().all(|z| z.norm() == 0.0)));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let c = cfg(CsitQuality::Alpha(0.6)).with_samples(5);
        let a = draw_realization(&c, &RandomSource::new(77)).unwrap();
        let b = draw_realization(&c, &RandomSource::new(77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn second_moment_is_channel_variance() {
        let c = cfg(CsitQuality::Perfect);
        let mut rng = RandomSource::new(5);
        let mut acc = 0.0;
        let mut n = 0usize;
        while n < 100_000 {
            let h = draw_channel(&c, &mut rng);
            for m in &h.users {
                for z in m.iter() {
                    acc += z.norm_sqr();
                    n += 1;
                }
            }
        }
        let mean = acc / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean |h|^2 = {mean}");
    }

    #[test]
    fn perfect_estimate_is_exact() {
        let c = cfg(CsitQuality::Perfect);
        let h = draw_channel(&c, &mut RandomSource::new(2));
        let est = make_estimate(&h, &c, &mut RandomSource::new(3));
        assert_eq!(est.channel, h);
        assert!(est.error_variances.iter().all(|&v| v == 0.0));
        let s = make_saa_samples(&est, &c, &mut RandomSource::new(4)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.samples[0], h);
    }

    #[test]
    fn alpha_zero_error_equals_channel_variance() {
        let c = cfg(CsitQuality::Alpha(0.0)).with_channel_variances(vec![1.0, 0.3]);
        let h = draw_channel(&c, &mut RandomSource::new(2));
        let est = make_estimate(&h, &c, &mut RandomSource::new(3));
        assert_eq!(est.error_variances, vec![1.0, 0.3]);
    }

    #[test]
    fn imperfect_rejects_zero_samples() {
        let c = cfg(CsitQuality::Alpha(0.5)).with_samples(0);
        let h = draw_channel(&c, &mut RandomSource::new(2));
        let est = make_estimate(&h, &c, &mut RandomSource::new(3));
        assert!(matches!(
            make_saa_samples(&est, &c, &mut RandomSource::new(4)),
            Err(Error::EmptySampleSet)
        ));
    }

    #[test]
    fn sample_error_variance_matches_model() {
        // Pt = 100, alpha = 0.5 -> sigma_e^2 = 0.1
        let c = cfg(CsitQuality::Alpha(0.5)).with_snr_db(20.0).with_samples(1000);
        let h = draw_channel(&c, &mut RandomSource::new(8));
        let est = make_estimate(&h, &c, &mut RandomSource::new(9));
        assert!((est.error_variances[0] - 0.1).abs() < 1e-12);
        let s = make_saa_samples(&est, &c, &mut RandomSource::new(10)).unwrap();
        let mut acc = 0.0;
        let mut n = 0usize;
        for smp in s.iter() {
            for (hk, hhat) in smp.users.iter().zip(&est.channel.users) {
                for z in (hk - hhat).iter() {
                    acc += z.norm_sqr();
                    n += 1;
                }
            }
        }
        let var = acc / n as f64;
        assert!((var - 0.1).abs() < 0.005, "empirical error variance {var}");
    }

    #[test]
    fn error_covariance_is_scaled_identity_chi_square() {
        // Per-entry |e|^2 * 2 / sigma_e^2 is chi-square with 2 dof; the sum over
        // n draws is chi-square with 2n dof. Two-sided 1% test via the normal
        // approximation, z_{0.995} = 2.5758.
        let c = cfg(CsitQuality::Alpha(0.5)).with_samples(10_000);
        let h = draw_channel(&c, &mut RandomSource::new(21));
        let est = make_estimate(&h, &c, &mut RandomSource::new(22));
        let s = make_saa_samples(&est, &c, &mut RandomSource::new(23)).unwrap();
        let ev = est.error_variances[0];
        let m = c.tx_antennas;
        let mut diag = vec![0.0; m];
        let mut off = 0.0f64;
        for smp in s.iter() {
            let e = &smp.users[0] - &est.channel.users[0];
            for i in 0..m {
                diag[i] += e[(i, 0)].norm_sqr();
            }
            off += (e[(0, 0)] * e[(1, 0)].conj()).re;
        }
        let n = s.len() as f64;
        for d in diag {
            let stat = 2.0 * d / ev;
            let z = (stat - 2.0 * n) / (4.0 * n).sqrt();
            assert!(z.abs() < 2.5758, "diagonal z-score {z}");
        }
        // off-diagonal mean ~ N(0, ev^2 / (2n))
        let z = (off / n) / (ev / (2.0 * n).sqrt());
        assert!(z.abs() < 2.5758, "off-diagonal z-score {z}");
    }
}
