//! Speaker representations: fixed pretrained encoders and the jointly
//! optimized lookup table and global style tokens.

pub mod joint;
pub mod pretrained;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width of every speaker representation.
pub const REP_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Dvec,
    Xvec,
    Vc,
    Lookup,
    Gst,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [Scheme::Dvec, Scheme::Xvec, Scheme::Vc, Scheme::Lookup, Scheme::Gst];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Dvec => "dvec",
            Scheme::Xvec => "xvec",
            Scheme::Vc => "vc",
            Scheme::Lookup => "lookup",
            Scheme::Gst => "gst",
        }
    }

    /// Pretrained and frozen before TTS training, as opposed to learned with it.
    pub fn is_pretrained(self) -> bool {
        matches!(self, Scheme::Dvec | Scheme::Xvec | Scheme::Vc)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme {s:?}")))
    }
}

/// Canonical label for a set of schemes, e.g. `vc+lookup`.
pub fn schemes_label(schemes: &[Scheme]) -> String {
    let mut sorted = schemes.to_vec();
    sorted.sort();
    sorted.dedup();
    sorted.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("+")
}

/// An utterance- or speaker-level vector tagged with the scheme that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerRep {
    pub vector: Vec<f32>,
    pub scheme: Scheme,
}

impl SpeakerRep {
    pub fn new(vector: Vec<f32>, scheme: Scheme) -> Result<Self> {
        if vector.len() != REP_DIM {
            return Err(Error::LengthMismatch(format!(
                "{scheme} representation has {} entries, expected {REP_DIM}",
                vector.len()
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("{scheme} representation is not finite")));
        }
        Ok(SpeakerRep { vector, scheme })
    }

    /// Arithmetic mean, no renormalization.
    pub fn mean(reps: &[SpeakerRep]) -> Result<SpeakerRep> {
        let first = reps.first().ok_or(Error::EmptyInput("representation list"))?;
        let mut acc = vec![0f64; first.vector.len()];
        for rep in reps {
            if rep.scheme != first.scheme {
                return Err(Error::InvalidConfig(format!(
                    "cannot average {} with {}",
                    rep.scheme, first.scheme
                )));
            }
            for (a, &v) in acc.iter_mut().zip(&rep.vector) {
                *a += v as f64;
            }
        }
        let n = reps.len() as f64;
        SpeakerRep::new(acc.into_iter().map(|a| (a / n) as f32).collect(), first.scheme)
    }
}
