//! Rate-splitting multiple access (RSMA) precoder optimization for
//! multi-antenna broadcast channels with imperfect CSIT.

pub mod ao;
pub mod baselines;
pub mod channel;
pub mod config;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod lls;
pub mod qcqp;
pub mod rates;
pub mod rng;
pub mod wmmse;

pub use ao::{AoOptions, OptResult, Scheme};
pub use channel::{ChannelEstimate, ChannelMatrix, SampleSet};
pub use config::{CsitQuality, SystemConfig};
pub use error::{Error, Result};
pub use experiments::{ExperimentKind, ExperimentSpec, SchemeKind};
pub use lls::{LlsReport, ModCode};
pub use rates::{AverageRates, PrecoderSet, StreamKind};
pub use rng::RandomSource;
