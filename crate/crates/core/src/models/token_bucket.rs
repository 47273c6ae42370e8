//! Control inputs sent over a token bucket network.
//!
//! The actuator holds its last received value `u_s`. A transmission costs
//! `c` tokens, the bucket refills by `g` per step and saturates at `b`, and
//! the bucket level may never go negative.

use super::ingredients::PeriodicTerminalIngredients;
use crate::error::{Error, Result};
use crate::numerics::{block_diag, quad_form, spd_inverse, DenseMatrix, Vector};
use crate::polytope::Polytope;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Absolute tolerance for "(x_p, u_s) = 0" in the resting branch of `S_j`.
pub const ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBucketParams {
    #[serde(with = "crate::numerics::serde_matrix")]
    pub a: DenseMatrix,
    #[serde(with = "crate::numerics::serde_matrix")]
    pub b: DenseMatrix,
    #[serde(with = "crate::numerics::serde_matrix")]
    pub q: DenseMatrix,
    #[serde(with = "crate::numerics::serde_matrix")]
    pub r: DenseMatrix,
    /// Tokens added per step.
    pub g: i64,
    /// Tokens consumed per transmission.
    pub c: i64,
    /// Bucket capacity.
    pub capacity: i64,
    pub state_set: Polytope,
    pub input_set: Polytope,
}

impl TokenBucketParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DenseMatrix,
        b: DenseMatrix,
        q: DenseMatrix,
        r: DenseMatrix,
        g: i64,
        c: i64,
        capacity: i64,
        state_set: Polytope,
        input_set: Polytope,
    ) -> Result<Self> {
        let p = TokenBucketParams { a, b, q, r, g, c, capacity, state_set, input_set };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.a.nrows(), self.b.ncols());
        if !self.a.is_square() || self.b.nrows() != n || n == 0 || m == 0 {
            return Err(Error::InvalidModel("A must be n×n and B n×m with n, m ≥ 1".into()));
        }
        if self.q.shape() != (n, n) || self.r.shape() != (m, m) {
            return Err(Error::InvalidModel("Q must be n×n and R m×m".into()));
        }
        spd_inverse(&self.q, "Q")?;
        spd_inverse(&self.r, "R")?;
        if self.g < 1 || self.c < self.g || self.capacity < self.c {
            return Err(Error::InvalidModel(format!(
                "bucket parameters need 1 ≤ g ≤ c ≤ b, got g={}, c={}, b={}",
                self.g, self.c, self.capacity
            )));
        }
        if self.state_set.dim() != n || self.input_set.dim() != m {
            return Err(Error::InvalidModel("constraint sets do not match plant dimensions".into()));
        }
        Ok(())
    }

    pub fn n_p(&self) -> usize {
        self.a.nrows()
    }

    pub fn m_p(&self) -> usize {
        self.b.ncols()
    }

    /// `M = ⌈c/g⌉`.
    pub fn period(&self) -> usize {
        ((self.c + self.g - 1) / self.g) as usize
    }

    /// Bucket threshold of `S_j`: `c − g` for `j = 0`, `(j − 1)g` otherwise.
    pub fn threshold(&self, j: usize) -> i64 {
        let j = j % self.period();
        if j == 0 {
            self.c - self.g
        } else {
            (j as i64 - 1) * self.g
        }
    }

    /// `[[A, 0], [0, 0]]`.
    pub fn a_tilde(&self) -> DenseMatrix {
        let (n, m) = (self.n_p(), self.m_p());
        let mut t = DMatrix::zeros(n + m, n + m);
        t.view_mut((0, 0), (n, n)).copy_from(&self.a);
        t
    }

    /// `[B; I]`.
    pub fn b_tilde(&self) -> DenseMatrix {
        let (n, m) = (self.n_p(), self.m_p());
        let mut t = DMatrix::zeros(n + m, m);
        t.view_mut((0, 0), (n, m)).copy_from(&self.b);
        t.view_mut((n, 0), (m, m)).fill_with_identity();
        t
    }

    /// `[[A, B], [0, I]]`: dynamics of `(x_p, u_s)` without transmission.
    pub fn a_prime(&self) -> DenseMatrix {
        let (n, m) = (self.n_p(), self.m_p());
        let mut t = DMatrix::identity(n + m, n + m);
        t.view_mut((0, 0), (n, n)).copy_from(&self.a);
        t.view_mut((0, n), (n, m)).copy_from(&self.b);
        t
    }

    /// `Ã + B̃K`: dynamics of `(x_p, u_s)` when `u_c = K[x_p; u_s]` is sent.
    pub fn a_double_prime(&self, k: &DenseMatrix) -> DenseMatrix {
        self.a_tilde() + self.b_tilde() * k
    }

    /// `X_p × U_p`.
    pub fn joint_set(&self) -> Polytope {
        Polytope::product(&self.state_set, &self.input_set)
    }

    /// `diag(Q, R)`.
    pub fn joint_weight(&self) -> DenseMatrix {
        block_diag(&[&self.q, &self.r])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBucketState {
    #[serde(with = "crate::numerics::serde_matrix::vector")]
    pub xp: Vector,
    #[serde(with = "crate::numerics::serde_matrix::vector")]
    pub us: Vector,
    pub beta: i64,
}

impl TokenBucketState {
    pub fn new(xp: Vector, us: Vector, beta: i64) -> Self {
        TokenBucketState { xp, us, beta }
    }

    /// `[x_p; u_s]`.
    pub fn z(&self) -> Vector {
        let mut z = DVector::zeros(self.xp.len() + self.us.len());
        z.rows_mut(0, self.xp.len()).copy_from(&self.xp);
        z.rows_mut(self.xp.len(), self.us.len()).copy_from(&self.us);
        z
    }

    pub fn from_z(z: &Vector, n_p: usize, beta: i64) -> Self {
        TokenBucketState { xp: z.rows(0, n_p).into_owned(), us: z.rows(n_p, z.len() - n_p).into_owned(), beta }
    }

    pub(crate) fn check(&self, p: &TokenBucketParams) -> Result<()> {
        if self.xp.len() != p.n_p() || self.us.len() != p.m_p() {
            return Err(Error::InvalidModel("state dimensions do not match the plant".into()));
        }
        Ok(())
    }

    /// `x ∈ X_p × U_p × I_[0,b]` within `tol`.
    pub fn admissible(&self, p: &TokenBucketParams, tol: f64) -> Result<bool> {
        self.check(p)?;
        Ok((0..=p.capacity).contains(&self.beta)
            && p.state_set.contains(&self.xp, tol)?
            && p.input_set.contains(&self.us, tol)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenBucketInput {
    #[serde(with = "crate::numerics::serde_matrix::vector")]
    pub uc: Vector,
    pub transmit: bool,
}

impl TokenBucketInput {
    pub fn hold(m_p: usize) -> Self {
        TokenBucketInput { uc: DVector::zeros(m_p), transmit: false }
    }

    pub fn send(uc: Vector) -> Self {
        TokenBucketInput { uc, transmit: true }
    }

    /// Input value acting on the plant: `(1−γ)u_s + γu_c`.
    pub fn applied(&self, s: &TokenBucketState) -> Vector {
        if self.transmit {
            self.uc.clone()
        } else {
            s.us.clone()
        }
    }
}

/// Next bucket level, or `InsufficientTokens` if a transmission would drain
/// the bucket below zero.
pub fn next_bucket_level(beta: i64, transmit: bool, p: &TokenBucketParams) -> Result<i64> {
    let next = beta + p.g - if transmit { p.c } else { 0 };
    if next < 0 {
        return Err(Error::InsufficientTokens { level: beta, needed: p.c - p.g });
    }
    Ok(next.min(p.capacity))
}

pub fn tb_step(s: &TokenBucketState, u: &TokenBucketInput, p: &TokenBucketParams) -> Result<TokenBucketState> {
    s.check(p)?;
    if u.uc.len() != p.m_p() {
        return Err(Error::InvalidModel("input dimension does not match the plant".into()));
    }
    let beta = next_bucket_level(s.beta, u.transmit, p)?;
    let a = u.applied(s);
    Ok(TokenBucketState { xp: &p.a * &s.xp + &p.b * &a, us: a, beta })
}

/// `x_pᵀQx_p + (1−γ)u_sᵀRu_s + γu_cᵀRu_c`.
pub fn tb_stage_cost(s: &TokenBucketState, u: &TokenBucketInput, p: &TokenBucketParams) -> f64 {
    quad_form(&p.q, &s.xp) + quad_form(&p.r, &u.applied(s))
}

/// Storage function `λ(x) = u_sᵀRu_s` of the dissipativity argument.
pub fn tb_storage(s: &TokenBucketState, p: &TokenBucketParams) -> f64 {
    quad_form(&p.r, &s.us)
}

fn at_rest(s: &TokenBucketState) -> bool {
    s.xp.iter().chain(s.us.iter()).all(|v| v.abs() <= ZERO_TOL)
}

/// Whether `s ∈ S_j`.
pub fn tb_terminal_membership(
    s: &TokenBucketState,
    j: usize,
    ing: &PeriodicTerminalIngredients,
    p: &TokenBucketParams,
) -> Result<bool> {
    s.check(p)?;
    if !(0..=p.capacity).contains(&s.beta) {
        return Ok(false);
    }
    let tau = p.threshold(j);
    if s.beta < tau {
        Ok(at_rest(s))
    } else {
        ing.region_contains(j, &s.z(), 1e-9)
    }
}

/// `κ_j`: phase 0 sends `K[x_p; u_s]` once the bucket allows it, every other
/// phase holds.
pub fn tb_terminal_controller(
    s: &TokenBucketState,
    j: usize,
    ing: &PeriodicTerminalIngredients,
    p: &TokenBucketParams,
) -> Result<TokenBucketInput> {
    if !tb_terminal_membership(s, j, ing, p)? {
        return Err(Error::NotInTerminalSet(j % p.period()));
    }
    let phase = j % p.period();
    if phase == 0 && s.beta >= p.threshold(0) {
        let k = ing
            .shared_gain()
            .ok_or_else(|| Error::InvalidModel("token-bucket ingredients need a shared gain".into()))?;
        Ok(TokenBucketInput::send(k * s.z()))
    } else {
        Ok(TokenBucketInput::hold(p.m_p()))
    }
}
