//! Few-shot multi-speaker speech synthesis with pretrained and jointly
//! optimized speaker representations.

pub mod corpus;
pub mod error;
pub mod features;
pub mod nn;
pub mod spkrep;
pub mod sv;
pub mod tts;
pub mod viz;
pub mod vocoder;

pub use error::{Error, Result};
