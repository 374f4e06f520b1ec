//! System configuration and its structured text (TOML) file format.
//!
//! ```toml
//! tx_antennas = 4          # M
//! rx_antennas = 2          # Q, per user
//! users = 2                # K
//! common_streams = 2       # Qc, 0 disables the common stream
//! private_streams = [2, 2] # Q_k per user; defaults to filling min(M, K*Q)
//! snr_db = 20.0            # or `power = 100.0` (linear, noise-normalized)
//! alpha = 0.6              # CSIT quality exponent in [0, 1], or "perfect"
//! channel_variances = [1.0, 1.0]
//! noise_variance = 1.0
//! samples = 1000           # N, SAA sample count
//! seed = 1
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// CSIT error model: power-law scaling `sigma_e^2 = sigma_k^2 * Pt^-alpha`,
/// or exactly known channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CsitQuality {
    Perfect,
    Alpha(f64),
}

impl CsitQuality {
    pub fn is_perfect(self) -> bool {
        matches!(self, CsitQuality::Perfect)
    }

    /// Estimation error variance for a user of channel variance `sigma2`.
    pub fn error_variance(self, sigma2: f64, power: f64) -> f64 {
        match self {
            CsitQuality::Perfect => 0.0,
            CsitQuality::Alpha(a) => sigma2 * power.powf(-a),
        }
    }
}

impl fmt::Display for CsitQuality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CsitQuality::Perfect => write!(f, "perfect"),
            CsitQuality::Alpha(a) => write!(f, "{a}"),
        }
    }
}

impl FromStr for CsitQuality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("perfect") {
            return Ok(CsitQuality::Perfect);
        }
        let a: f64 = t
            .parse()
            .map_err(|_| Error::Parse(format!("alpha must be a number or 'perfect', got '{s}'")))?;
        Ok(CsitQuality::Alpha(a))
    }
}

impl Serialize for CsitQuality {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            CsitQuality::Perfect => s.serialize_str("perfect"),
            CsitQuality::Alpha(a) => s.serialize_f64(*a),
        }
    }
}

impl<'de> Deserialize<'de> for CsitQuality {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(a) => Ok(CsitQuality::Alpha(a)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// M
    pub tx_antennas: usize,
    /// Q
    pub rx_antennas: usize,
    /// K
    pub users: usize,
    /// Qc
    pub common_streams: usize,
    /// Q_k per user.
    pub private_streams: Vec<usize>,
    /// Pt, linear and noise-normalized.
    pub power: f64,
    pub csit: CsitQuality,
    pub channel_variances: Vec<f64>,
    pub noise_variance: f64,
    /// N
    pub samples: usize,
    pub seed: u64,
}

impl SystemConfig {
    /// Symmetric configuration with unit channel variances and the default
    /// private-stream fill.
    pub fn new(m: usize, q: usize, k: usize, qc: usize, snr_db: f64, csit: CsitQuality) -> Self {
        Self {
            tx_antennas: m,
            rx_antennas: q,
            users: k,
            common_streams: qc,
            private_streams: default_private_streams(m, q, k),
            power: db_to_linear(snr_db),
            csit,
            channel_variances: vec![1.0; k],
            noise_variance: 1.0,
            samples: 1000,
            seed: 1,
        }
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.samples = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_snr_db(mut self, snr_db: f64) -> Self {
        self.power = db_to_linear(snr_db);
        self
    }

    pub fn with_channel_variances(mut self, v: Vec<f64>) -> Self {
        self.channel_variances = v;
        self
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * self.power.log10()
    }

    /// Q_p = min(M, K Q).
    pub fn total_private_budget(&self) -> usize {
        self.tx_antennas.min(self.users * self.rx_antennas)
    }

    pub fn total_private_streams(&self) -> usize {
        self.private_streams.iter().sum()
    }

    pub fn error_variance(&self, user: usize) -> f64 {
        self.csit.error_variance(self.channel_variances[user], self.power)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let (m, q, k) = (self.tx_antennas, self.rx_antennas, self.users);
        if m == 0 || q == 0 || k == 0 {
            return bad("antenna and user counts must be positive".into());
        }
        let cap = m.min(q);
        if self.common_streams > cap {
            return bad(format!("common_streams {} exceeds min(M, Q) = {cap}", self.common_streams));
        }
        if self.private_streams.len() != k {
            return bad(format!("private_streams has {} entries for {k} users", self.private_streams.len()));
        }
        if let Some(s) = self.private_streams.iter().find(|&&s| s > cap) {
            return bad(format!("private stream count {s} exceeds min(M, Q) = {cap}"));
        }
        if self.total_private_streams() > self.total_private_budget() {
            return bad(format!(
                "sum of private streams {} exceeds min(M, KQ) = {}",
                self.total_private_streams(),
                self.total_private_budget()
            ));
        }
        if self.channel_variances.len() != k {
            return bad(format!("channel_variances has {} entries for {k} users", self.channel_variances.len()));
        }
        if self.channel_variances.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return bad("channel variances must be finite and nonnegative".into());
        }
        if !(self.power > 0.0) || !self.power.is_finite() {
            return bad(format!("power must be positive, got {}", self.power));
        }
        if !(self.noise_variance > 0.0) || !self.noise_variance.is_finite() {
            return bad(format!("noise_variance must be positive, got {}", self.noise_variance));
        }
        if let CsitQuality::Alpha(a) = self.csit {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("alpha must lie in [0, 1], got {a}"));
            }
        }
        if !self.csit.is_perfect() && self.samples == 0 {
            return bad("samples must be at least 1 with imperfect CSIT".into());
        }
        Ok(())
    }

    /// Loads a configuration file; see the module docs for the schema.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        ConfigFile::from_toml_str(text)?.resolve()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }
}

/// On-disk form. Every field is optional; defaults mirror the
/// two-user, four-antenna setup.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub tx_antennas: Option<usize>,
    pub rx_antennas: Option<usize>,
    pub users: Option<usize>,
    pub common_streams: Option<usize>,
    pub private_streams: Option<Vec<usize>>,
    pub snr_db: Option<f64>,
    pub power: Option<f64>,
    pub alpha: Option<CsitQuality>,
    pub channel_variances: Option<Vec<f64>>,
    pub noise_variance: Option<f64>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

impl ConfigFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn resolve(self) -> Result<SystemConfig> {
        let m = self.tx_antennas.unwrap_or(4);
        let q = self.rx_antennas.unwrap_or(2);
        let k = self.users.unwrap_or(2);
        if self.snr_db.is_some() && self.power.is_some() {
            return Err(Error::InvalidConfig("give either snr_db or power, not both".into()));
        }
        let power = match (self.snr_db, self.power) {
            (_, Some(p)) => p,
            (Some(db), None) => db_to_linear(db),
            (None, None) => db_to_linear(20.0),
        };
        let cfg = SystemConfig {
            tx_antennas: m,
            rx_antennas: q,
            users: k,
            common_streams: self.common_streams.unwrap_or(m.min(q)),
            private_streams: self.private_streams.unwrap_or_else(|| default_private_streams(m, q, k)),
            power,
            csit: self.alpha.unwrap_or(CsitQuality::Perfect),
            channel_variances: self.channel_variances.unwrap_or_else(|| vec![1.0; k]),
            noise_variance: self.noise_variance.unwrap_or(1.0),
            samples: self.samples.unwrap_or(1000),
            seed: self.seed.unwrap_or(1),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Fills min(M, Q) private streams per user until min(M, K Q) are placed.
pub fn default_private_streams(m: usize, q: usize, k: usize) -> Vec<usize> {
    let per = m.min(q);
    let mut left = m.min(k * q);
    (0..k)
        .map(|_| {
            let s = per.min(left);
            left -= s;
            s
        })
        .collect()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
