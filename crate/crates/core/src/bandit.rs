//! Per-user linear bandit state, cluster aggregates and the two confidence
//! functions used for item selection and edge deletion.
//!
//! Every estimator is a ridge least-squares solution with an identity prior:
//! `M = I + Σ x xᵀ`, `b = Σ a x`, `w = M⁻¹ b`. Both `M` and `M⁻¹` are kept so
//! that aggregates can be rebuilt by summing forward matrices without
//! inverting each member, while selection only touches the inverse.

use std::collections::BTreeSet;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Number of rank-one updates after which the inverse is recomputed from the
/// forward matrix to bound accumulated roundoff.
pub const REFRESH_INTERVAL: u32 = 10_000;

/// Sufficient statistics of one ridge estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct Gram {
    corr: Matrix,
    inv: Matrix,
    bias: Vector,
    weight: Vector,
    since_refresh: u32,
}

impl Gram {
    pub fn identity(dim: usize) -> Self {
        Self {
            corr: Matrix::identity(dim, dim),
            inv: Matrix::identity(dim, dim),
            bias: Vector::zeros(dim),
            weight: Vector::zeros(dim),
            since_refresh: 0,
        }
    }

    /// Builds the estimator from a forward matrix and bias, inverting once.
    fn from_parts(corr: Matrix, bias: Vector) -> Result<Self> {
        let inv = spd_inverse(&corr)?;
        let weight = &inv * &bias;
        Ok(Self {
            corr,
            inv,
            bias,
            weight,
            since_refresh: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.bias.len()
    }

    /// `M ← M + x xᵀ`, `b ← b + a x`, with the inverse adjusted by the
    /// Sherman–Morrison formula.
    pub fn absorb(&mut self, x: &Vector, payoff: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "context has dimension {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("context vector"));
        }
        if !payoff.is_finite() {
            return Err(Error::NonFinite("payoff"));
        }

        self.corr.ger(1.0, x, x, 1.0);
        self.since_refresh += 1;
        if self.since_refresh >= REFRESH_INTERVAL {
            self.inv = spd_inverse(&self.corr)?;
            self.since_refresh = 0;
        } else {
            let inv_x = &self.inv * x;
            let denom = 1.0 + x.dot(&inv_x);
            self.inv.ger(-1.0 / denom, &inv_x, &inv_x, 1.0);
        }
        self.bias.axpy(payoff, x, 1.0);
        self.weight = &self.inv * &self.bias;
        Ok(())
    }

    pub fn corr(&self) -> &Matrix {
        &self.corr
    }

    pub fn inv_corr(&self) -> &Matrix {
        &self.inv
    }

    pub fn bias(&self) -> &Vector {
        &self.bias
    }

    pub fn weight(&self) -> &Vector {
        &self.weight
    }
}

/// Anything that can score items: a weight vector and an inverse correlation
/// matrix.
pub trait LinearEstimate {
    fn weight(&self) -> &Vector;
    fn inv_corr(&self) -> &Matrix;
}

impl LinearEstimate for Gram {
    fn weight(&self) -> &Vector {
        &self.weight
    }
    fn inv_corr(&self) -> &Matrix {
        &self.inv
    }
}

/// Linear bandit hosted at a single user.
#[derive(Clone, Debug, PartialEq)]
pub struct BanditState {
    gram: Gram,
    serve_count: u64,
}

impl BanditState {
    pub fn new(dim: usize) -> Self {
        Self {
            gram: Gram::identity(dim),
            serve_count: 0,
        }
    }

    /// Records one served round: the chosen context and the observed payoff.
    pub fn rank_one_update(&mut self, x: &Vector, payoff: f64) -> Result<()> {
        self.gram.absorb(x, payoff)?;
        self.serve_count += 1;
        Ok(())
    }

    pub fn gram(&self) -> &Gram {
        &self.gram
    }

    pub fn corr(&self) -> &Matrix {
        self.gram.corr()
    }

    pub fn bias(&self) -> &Vector {
        self.gram.bias()
    }

    pub fn serve_count(&self) -> u64 {
        self.serve_count
    }

    pub fn dim(&self) -> usize {
        self.gram.dim()
    }
}

impl LinearEstimate for BanditState {
    fn weight(&self) -> &Vector {
        self.gram.weight()
    }
    fn inv_corr(&self) -> &Matrix {
        self.gram.inv_corr()
    }
}

/// Pooled estimator over the members of one cluster, as if all members had
/// been collapsed into a single user.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAggregate {
    members: BTreeSet<usize>,
    gram: Gram,
}

impl ClusterAggregate {
    /// Sums member forward matrices and biases and inverts the result once.
    ///
    /// A singleton copies its member's statistics verbatim, so a cluster of
    /// one is indistinguishable from the user's own bandit.
    pub fn build<I>(states: &[BanditState], members: I) -> Result<Self>
    where
        I: IntoIterator<Item = usize>,
    {
        let members: BTreeSet<usize> = members.into_iter().collect();
        let first = *members.first().ok_or(Error::Empty("cluster member set"))?;
        for &i in &members {
            if i >= states.len() {
                return Err(Error::UserOutOfRange {
                    id: i,
                    n: states.len(),
                });
            }
        }
        if members.len() == 1 {
            return Ok(Self {
                gram: states[first].gram.clone(),
                members,
            });
        }

        let dim = states[first].dim();
        let mut corr = Matrix::identity(dim, dim);
        let mut bias = Vector::zeros(dim);
        for &i in &members {
            let g = &states[i].gram;
            corr += &g.corr;
            bias += &g.bias;
            for k in 0..dim {
                corr[(k, k)] -= 1.0;
            }
        }
        Ok(Self {
            gram: Gram::from_parts(corr, bias)?,
            members,
        })
    }

    /// Applies one member's observation to the pooled statistics.
    pub fn absorb(&mut self, x: &Vector, payoff: f64) -> Result<()> {
        self.gram.absorb(x, payoff)
    }

    pub fn members(&self) -> &BTreeSet<usize> {
        &self.members
    }

    pub fn gram(&self) -> &Gram {
        &self.gram
    }

    pub fn corr(&self) -> &Matrix {
        self.gram.corr()
    }

    pub fn bias(&self) -> &Vector {
        self.gram.bias()
    }
}

impl LinearEstimate for ClusterAggregate {
    fn weight(&self) -> &Vector {
        self.gram.weight()
    }
    fn inv_corr(&self) -> &Matrix {
        self.gram.inv_corr()
    }
}

/// A round's candidate items.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextSet {
    vectors: Vec<Vector>,
    items: Option<Vec<usize>>,
    round: u64,
}

impl ContextSet {
    pub fn new(round: u64, vectors: Vec<Vector>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::Empty("context set"));
        }
        let dim = vectors[0].len();
        for v in &vectors {
            if v.len() != dim {
                return Err(Error::InvalidInput(
                    "context vectors of mixed dimension".into(),
                ));
            }
            if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFinite("context vector"));
            }
        }
        Ok(Self {
            vectors,
            items: None,
            round,
        })
    }

    /// Attaches a discrete item identity to every candidate.
    pub fn with_items(mut self, items: Vec<usize>) -> Result<Self> {
        if items.len() != self.vectors.len() {
            return Err(Error::InvalidInput(format!(
                "{} item ids for {} contexts",
                items.len(),
                self.vectors.len()
            )));
        }
        self.items = Some(items);
        Ok(self)
    }

    pub fn vectors(&self) -> &[Vector] {
        &self.vectors
    }

    pub fn items(&self) -> Option<&[usize]> {
        self.items.as_deref()
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }
}

/// Optimism bonus `α·sqrt(xᵀ M⁻¹ x · ln(t+1))`.
pub fn confidence_width(x: &Vector, inv_corr: &Matrix, t: f64, alpha: f64) -> f64 {
    let quad = x.dot(&(inv_corr * x)).max(0.0);
    alpha * (quad * (t + 1.0).ln()).sqrt()
}

/// Upper-confidence argmax over the candidates; ties go to the lowest index.
pub fn select_item<E: LinearEstimate + ?Sized>(
    est: &E,
    contexts: &[Vector],
    t: f64,
    alpha: f64,
) -> Result<usize> {
    if contexts.is_empty() {
        return Err(Error::Empty("context set"));
    }
    let w = est.weight();
    let inv = est.inv_corr();
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (k, x) in contexts.iter().enumerate() {
        let score = w.dot(x) + confidence_width(x, inv, t, alpha);
        if score > best_score {
            best = k;
            best_score = score;
        }
    }
    Ok(best)
}

/// Per-user radius `α₂·sqrt((1 + ln(1+T)) / (1+T))` governing edge deletion.
pub fn deletion_threshold(serve_count: f64, alpha2: f64) -> f64 {
    let s = 1.0 + serve_count;
    alpha2 * ((1.0 + s.ln()) / s).sqrt()
}

/// Inverse of a symmetric positive definite matrix through its Cholesky factor.
pub fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    Cholesky::new(m.clone())
        .map(|c| c.inverse())
        .ok_or(Error::NotPositiveDefinite)
}
