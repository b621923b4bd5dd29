//! Highway deep neural networks with tied transform/carry gates, trained with
//! frame-level cross entropy and lattice-based sMBR, plus gate-only speaker
//! adaptation on synthetic HMM corpora.

pub mod adaptation;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod mathcore;
pub mod network;
pub mod sequence;
pub mod training;

pub use error::{Error, Result};
