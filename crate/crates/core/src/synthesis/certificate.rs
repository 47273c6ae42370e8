//! JSON certificates: everything the online controller needs, together with
//! the model it was synthesized for and a hash binding the two.

use super::{
    region_excess, synthesize_act, synthesize_tb, verify_act, verify_tb, RegionMode, Synthesis, SynthesisOptions,
    INCLUSION_TOL, MARGIN_TOL,
};
use crate::error::{Error, Result};
use crate::models::{ActuatorParams, PeriodicTerminalIngredients, TerminalGain, TokenBucketParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "setup", rename_all = "snake_case")]
pub enum ModelParams {
    TokenBucket(TokenBucketParams),
    Actuator(ActuatorParams),
}

impl ModelParams {
    pub fn period(&self) -> usize {
        match self {
            ModelParams::TokenBucket(p) => p.period(),
            ModelParams::Actuator(p) => p.period(),
        }
    }

    /// Runs the synthesis matching the setup; actuator scheduling has no
    /// constraints, so the region mode only matters for the token bucket.
    pub fn synthesize(&self, mode: RegionMode, opts: &SynthesisOptions) -> Result<Synthesis> {
        match self {
            ModelParams::TokenBucket(p) => synthesize_tb(p, mode, opts),
            ModelParams::Actuator(p) => synthesize_act(p, opts),
        }
    }
}

/// SHA-256 over the canonical JSON encoding of the parameters.
pub fn parameter_hash(params: &ModelParams) -> String {
    let bytes = serde_json::to_vec(params).expect("parameters serialize");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub params: ModelParams,
    pub period: usize,
    pub ingredients: PeriodicTerminalIngredients,
    pub margins: Vec<f64>,
    pub inclusion_excess: Vec<f64>,
    pub sdp_margin: f64,
    pub param_hash: String,
}

/// Outcome of re-checking a certificate from scratch.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateCheck {
    pub hash_matches: bool,
    pub margins: Vec<f64>,
    pub inclusion_excess: Vec<f64>,
}

impl CertificateCheck {
    pub fn passed(&self) -> bool {
        self.hash_matches
            && self.margins.iter().all(|m| *m >= -MARGIN_TOL)
            && self.inclusion_excess.iter().all(|e| *e <= INCLUSION_TOL)
    }
}

impl Certificate {
    pub fn new(params: ModelParams, s: Synthesis) -> Self {
        Certificate {
            period: params.period(),
            param_hash: parameter_hash(&params),
            params,
            ingredients: s.ingredients,
            margins: s.margins,
            inclusion_excess: s.inclusion_excess,
            sdp_margin: s.sdp_margin,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Certificate = serde_json::from_str(s)?;
        c.ingredients.validate()?;
        if c.period != c.ingredients.period || c.period != c.params.period() {
            return Err(Error::Config("certificate period does not match its model".into()));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Certificate::from_json(&std::fs::read_to_string(path)?)
    }

    /// Recomputes the hash, the decrease margins and the region inclusions
    /// without trusting any stored number.
    pub fn check(&self) -> Result<CertificateCheck> {
        let hash_matches = parameter_hash(&self.params) == self.param_hash;
        let ing = &self.ingredients;
        let (margins, inclusion_excess) = match (&self.params, &ing.gain) {
            (ModelParams::TokenBucket(p), TerminalGain::Shared(k)) => {
                (verify_tb(&ing.costs, k, p)?, region_excess(ing, p)?)
            }
            (ModelParams::Actuator(p), TerminalGain::PerPhase(ks)) => (verify_act(&ing.costs, ks, p)?, Vec::new()),
            _ => return Err(Error::Config("certificate gain kind does not match its setup".into())),
        };
        Ok(CertificateCheck { hash_matches, margins, inclusion_excess })
    }
}
