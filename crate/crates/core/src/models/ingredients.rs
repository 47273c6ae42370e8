use crate::error::{Error, Result};
use crate::numerics::{is_psd, quad_form, DenseMatrix, SymmetricMatrix, Vector};
use crate::polytope::PeriodicPolytopeFamily;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalGain {
    /// One gain `K` on `[x_p; u_s]`, used by the token-bucket phase-0 controller.
    Shared(#[serde(with = "crate::numerics::serde_matrix")] DenseMatrix),
    /// One gain `K_j` on `x_p` per phase (actuator scheduling).
    PerPhase(#[serde(with = "crate::numerics::serde_matrix::list")] Vec<DenseMatrix>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RegionFamily {
    Polytopic(PeriodicPolytopeFamily),
    /// `Z_j = {z : zᵀP_jz ≤ α}` with the terminal-cost matrices.
    Ellipsoidal {
        alpha: f64,
    },
    /// No terminal constraint.
    Unbounded,
}

/// Terminal costs `F_j(z) = zᵀP_jz`, gains and regions for `j = 0..M−1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicTerminalIngredients {
    pub period: usize,
    #[serde(with = "crate::numerics::serde_matrix::list")]
    pub costs: Vec<DenseMatrix>,
    pub gain: TerminalGain,
    pub region: RegionFamily,
}

impl PeriodicTerminalIngredients {
    pub fn validate(&self) -> Result<()> {
        if self.period == 0 || self.costs.len() != self.period {
            return Err(Error::InvalidModel("need one terminal cost per phase".into()));
        }
        let n = self.costs[0].nrows();
        for (j, p) in self.costs.iter().enumerate() {
            let s = SymmetricMatrix::new(p.clone())?;
            if s.dim() != n || !is_psd(&s, 0.0)? {
                return Err(Error::InvalidModel(format!("P_{j} is not a positive semidefinite {n}×{n} matrix")));
            }
        }
        if let TerminalGain::PerPhase(ks) = &self.gain {
            if ks.len() != self.period {
                return Err(Error::InvalidModel("need one gain per phase".into()));
            }
        }
        match &self.region {
            RegionFamily::Polytopic(family) => {
                if family.period() != self.period || family.dim() != n {
                    return Err(Error::InvalidModel("region family does not match the costs".into()));
                }
            }
            RegionFamily::Ellipsoidal { alpha } if !(*alpha > 0.0) => {
                return Err(Error::InvalidModel("ellipsoid level must be positive".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn cost_matrix(&self, j: usize) -> &DenseMatrix {
        &self.costs[j % self.period]
    }

    pub fn terminal_cost(&self, j: usize, z: &Vector) -> f64 {
        quad_form(self.cost_matrix(j), z)
    }

    pub fn shared_gain(&self) -> Option<&DenseMatrix> {
        match &self.gain {
            TerminalGain::Shared(k) => Some(k),
            TerminalGain::PerPhase(_) => None,
        }
    }

    pub fn phase_gain(&self, j: usize) -> Option<&DenseMatrix> {
        match &self.gain {
            TerminalGain::PerPhase(ks) => Some(&ks[j % self.period]),
            TerminalGain::Shared(_) => None,
        }
    }

    /// `z ∈ Z_j` within `tol`.
    pub fn region_contains(&self, j: usize, z: &Vector, tol: f64) -> Result<bool> {
        match &self.region {
            RegionFamily::Polytopic(family) => family.contains(j, z, tol),
            RegionFamily::Ellipsoidal { alpha } => {
                let p = self.cost_matrix(j);
                if p.nrows() != z.len() {
                    return Err(Error::InvalidMatrix("dimension mismatch in ellipsoid test".into()));
                }
                Ok(quad_form(p, z) <= alpha * (1.0 + tol))
            }
            RegionFamily::Unbounded => Ok(true),
        }
    }
}
