//! Offline synthesis of the periodic terminal ingredients and their
//! independent verification.

pub mod actuator;
pub mod certificate;
pub mod token_bucket;

use crate::models::PeriodicTerminalIngredients;
use crate::numerics::SdpOptions;
use serde::{Deserialize, Serialize};

pub use actuator::{build_act_lmis, synthesize_act, verify_act, ActLmiProblem};
pub use certificate::{parameter_hash, Certificate, CertificateCheck, ModelParams};
pub use token_bucket::{build_tb_lmis, ellipsoid_excess, region_excess, synthesize_tb, verify_tb, TbLmiProblem};

/// Decrease margins must be at least this (negated) tolerance.
pub const MARGIN_TOL: f64 = 1e-6;
/// Set inclusions may be exceeded by at most this much.
pub const INCLUSION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMode {
    #[default]
    Polytopic,
    Ellipsoidal,
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub sdp: SdpOptions,
    pub max_invariant_iter: usize,
    /// Relative bisection tolerance on the ellipsoid level.
    pub level_rel_tol: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions { sdp: SdpOptions::default(), max_invariant_iter: 200, level_rel_tol: 1e-4 }
    }
}

/// Verified ingredients plus the numbers that certify them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Synthesis {
    pub ingredients: PeriodicTerminalIngredients,
    /// `λ_min(−LHS_j)` of each condensed decrease inequality.
    pub margins: Vec<f64>,
    /// Excess of each region inclusion (empty for unbounded regions).
    pub inclusion_excess: Vec<f64>,
    /// Common PSD margin achieved by the SDP.
    pub sdp_margin: f64,
}
