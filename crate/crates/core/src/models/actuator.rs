//! Actuator scheduling: per step only one actuator group receives a fresh
//! value; all other inputs are set to zero.

use crate::error::{Error, Result};
use crate::numerics::{quad_form, spd_inverse, DenseMatrix, Vector};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorParams {
    #[serde(with = "crate::numerics::serde_matrix")]
    pub a: DenseMatrix,
    #[serde(with = "crate::numerics::serde_matrix")]
    pub b: DenseMatrix,
    #[serde(with = "crate::numerics::serde_matrix")]
    pub q: DenseMatrix,
    /// Block diagonal with one block per actuator group.
    #[serde(with = "crate::numerics::serde_matrix")]
    pub r: DenseMatrix,
    pub widths: Vec<usize>,
    pub base_schedule: Vec<usize>,
}

impl ActuatorParams {
    pub fn new(
        a: DenseMatrix,
        b: DenseMatrix,
        q: DenseMatrix,
        r: DenseMatrix,
        widths: Vec<usize>,
        base_schedule: Vec<usize>,
    ) -> Result<Self> {
        let p = ActuatorParams { a, b, q, r, widths, base_schedule };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if !self.a.is_square() || self.b.nrows() != n || n == 0 {
            return Err(Error::InvalidModel("A must be n×n and B n×m".into()));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::InvalidModel("every actuator group needs width ≥ 1".into()));
        }
        let m: usize = self.widths.iter().sum();
        if self.b.ncols() != m {
            return Err(Error::InvalidModel(format!(
                "B has {} columns but the actuator widths sum to {m}",
                self.b.ncols()
            )));
        }
        if self.q.shape() != (n, n) || self.r.shape() != (m, m) {
            return Err(Error::InvalidModel("Q must be n×n and R m×m".into()));
        }
        spd_inverse(&self.q, "Q")?;
        for s in 0..self.widths.len() {
            spd_inverse(&self.r_sigma(s)?, "R_σ")?;
        }
        // R must not couple different groups
        for i in 0..m {
            for j in 0..m {
                if self.group_of(i) != self.group_of(j) && self.r[(i, j)] != 0.0 {
                    return Err(Error::InvalidModel("R must be block diagonal over the actuator groups".into()));
                }
            }
        }
        if self.base_schedule.len() != self.period() || self.base_schedule.iter().any(|&s| s >= self.widths.len()) {
            return Err(Error::InvalidModel(format!(
                "base schedule must list {} actuator indices below {}",
                self.period(),
                self.widths.len()
            )));
        }
        Ok(())
    }

    pub fn n_p(&self) -> usize {
        self.a.nrows()
    }

    pub fn m_p(&self) -> usize {
        self.b.ncols()
    }

    /// Number of actuator groups, which is also the period of the terminal
    /// ingredients.
    pub fn period(&self) -> usize {
        self.widths.len()
    }

    fn group_of(&self, col: usize) -> usize {
        let mut acc = 0;
        for (g, w) in self.widths.iter().enumerate() {
            acc += w;
            if col < acc {
                return g;
            }
        }
        self.widths.len()
    }

    fn offset(&self, sigma: usize) -> Result<usize> {
        if sigma >= self.widths.len() {
            return Err(Error::InvalidModel(format!("actuator index {sigma} out of range 0..{}", self.widths.len())));
        }
        Ok(self.widths[..sigma].iter().sum())
    }

    /// `Ω_σ`: selects the inputs of actuator `σ`.
    pub fn omega(&self, sigma: usize) -> Result<DenseMatrix> {
        act_omega(sigma, &self.widths)
    }

    /// `Π_σ`: extracts the inputs of actuator `σ`.
    pub fn pi(&self, sigma: usize) -> Result<DenseMatrix> {
        act_pi(sigma, &self.widths)
    }

    /// `R_σ = Π_σ R Π_σᵀ`.
    pub fn r_sigma(&self, sigma: usize) -> Result<DenseMatrix> {
        let off = self.offset(sigma)?;
        let w = self.widths[sigma];
        Ok(self.r.view((off, off), (w, w)).into_owned())
    }

    /// `BΠ_σᵀ`: the columns of `B` driven by actuator `σ`.
    pub fn b_sigma(&self, sigma: usize) -> Result<DenseMatrix> {
        let off = self.offset(sigma)?;
        Ok(self.b.columns(off, self.widths[sigma]).into_owned())
    }
}

pub fn act_omega(sigma: usize, widths: &[usize]) -> Result<DenseMatrix> {
    let pi = act_pi(sigma, widths)?;
    Ok(pi.transpose() * pi)
}

pub fn act_pi(sigma: usize, widths: &[usize]) -> Result<DenseMatrix> {
    if sigma >= widths.len() {
        return Err(Error::InvalidModel(format!("actuator index {sigma} out of range 0..{}", widths.len())));
    }
    let m: usize = widths.iter().sum();
    let off: usize = widths[..sigma].iter().sum();
    let mut pi = DMatrix::zeros(widths[sigma], m);
    for i in 0..widths[sigma] {
        pi[(i, off + i)] = 1.0;
    }
    Ok(pi)
}

/// `A x_p + BΩ_σ u_c`.
pub fn act_step(xp: &Vector, uc: &Vector, sigma: usize, p: &ActuatorParams) -> Result<Vector> {
    check_dims(xp, uc, p)?;
    Ok(&p.a * xp + &p.b * (p.omega(sigma)? * uc))
}

/// `x_pᵀQx_p + u_cᵀΩ_σRu_c`.
pub fn act_stage_cost(xp: &Vector, uc: &Vector, sigma: usize, p: &ActuatorParams) -> Result<f64> {
    check_dims(xp, uc, p)?;
    let masked = p.omega(sigma)? * uc;
    Ok(quad_form(&p.q, xp) + quad_form(&p.r, &masked))
}

fn check_dims(xp: &Vector, uc: &Vector, p: &ActuatorParams) -> Result<()> {
    if xp.len() != p.n_p() || uc.len() != p.m_p() {
        return Err(Error::InvalidModel("state or input dimension does not match the plant".into()));
    }
    Ok(())
}
