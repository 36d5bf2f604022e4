//! Synthetic clustered linear-payoff environment.

use std::collections::BTreeSet;

use nalgebra::SymmetricEigen;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bandit::{ContextSet, Matrix, Vector};
use crate::error::{Error, Result};

/// Cap on rejection-sampling draws when placing cluster parameters.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrivalKind {
    #[default]
    Uniform,
    PowerLaw,
}

fn default_exponent() -> f64 {
    1.5
}

fn default_context_size() -> usize {
    10
}

/// Serializable description of a synthetic environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub gamma: f64,
    pub sigma: f64,
    #[serde(default = "default_context_size")]
    pub context_size: usize,
    #[serde(default)]
    pub arrivals: ArrivalKind,
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    /// Explicit cluster sizes; equal sizes when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
}

impl EnvSpec {
    pub fn new(n: usize, m: usize, d: usize, gamma: f64, sigma: f64) -> Self {
        Self {
            n,
            m,
            d,
            gamma,
            sigma,
            context_size: default_context_size(),
            arrivals: ArrivalKind::Uniform,
            exponent: default_exponent(),
            cluster_sizes: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticEnv {
    spec: EnvSpec,
    assignment: Vec<usize>,
    params: Vec<Vector>,
    arrival_weights: Option<WeightedIndex<f64>>,
}

/// Empirical facts about the environment; nothing in the algorithms reads
/// them.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvDiagnostics {
    /// Smallest eigenvalue of the sample second-moment matrix of contexts.
    pub min_eigenvalue: f64,
    pub cluster_sizes: Vec<usize>,
}

/// Uniform draw on the unit sphere in `d` dimensions.
pub fn unit_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vector {
    loop {
        let v = Vector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

impl SyntheticEnv {
    pub fn make(spec: &EnvSpec) -> Result<Self> {
        let EnvSpec { n, m, d, gamma, sigma, .. } = *spec;
        if n == 0 || m == 0 || d == 0 {
            return Err(Error::InvalidInput("n, m and d must be positive".into()));
        }
        if m > n {
            return Err(Error::InvalidInput(format!("{m} clusters for {n} users")));
        }
        if !(gamma > 0.0 && gamma <= 2.0) {
            return Err(Error::InvalidInput(format!("separation {gamma} outside (0, 2]")));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("noise scale {sigma}")));
        }
        if spec.context_size == 0 {
            return Err(Error::InvalidInput("context size must be positive".into()));
        }

        let sizes = match &spec.cluster_sizes {
            Some(s) => {
                if s.len() != m || s.iter().sum::<usize>() != n || s.contains(&0) {
                    return Err(Error::InvalidInput(format!(
                        "cluster sizes {s:?} do not partition {n} users into {m} clusters"
                    )));
                }
                s.clone()
            }
            None => (0..m).map(|j| n / m + usize::from(j < n % m)).collect(),
        };
        let assignment: Vec<usize> = sizes
            .iter()
            .enumerate()
            .flat_map(|(j, &s)| std::iter::repeat_n(j, s))
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let params = place_parameters(m, d, gamma, &mut rng)?;

        let arrival_weights = match spec.arrivals {
            ArrivalKind::Uniform => None,
            ArrivalKind::PowerLaw => {
                if !(spec.exponent.is_finite() && spec.exponent > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "power-law exponent {}",
                        spec.exponent
                    )));
                }
                // Activity rank is shuffled so heavy users are spread over clusters.
                let mut rank: Vec<usize> = (0..n).collect();
                for k in (1..n).rev() {
                    rank.swap(k, rng.random_range(0..=k));
                }
                let w = rank.iter().map(|&r| ((r + 1) as f64).powf(-spec.exponent));
                Some(WeightedIndex::new(w).map_err(|e| Error::Construction(e.to_string()))?)
            }
        };

        Ok(Self {
            spec: spec.clone(),
            assignment,
            params,
            arrival_weights,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    pub fn dim(&self) -> usize {
        self.spec.d
    }

    pub fn context_size(&self) -> usize {
        self.spec.context_size
    }

    pub fn cluster_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn params(&self) -> &[Vector] {
        &self.params
    }

    pub fn user_param(&self, i: usize) -> &Vector {
        &self.params[self.assignment[i]]
    }

    pub fn true_partition(&self) -> Vec<BTreeSet<usize>> {
        let mut parts = vec![BTreeSet::new(); self.spec.m];
        for (i, &j) in self.assignment.iter().enumerate() {
            parts[j].insert(i);
        }
        parts
    }

    pub fn sample_user<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match &self.arrival_weights {
            Some(w) => w.sample(rng),
            None => rng.random_range(0..self.spec.n),
        }
    }

    /// Draws the user to serve and `context_size` i.i.d. unit contexts.
    pub fn sample_round<R: Rng + ?Sized>(&self, t: u64, rng: &mut R) -> (usize, ContextSet) {
        let user = self.sample_user(rng);
        let vectors = (0..self.spec.context_size)
            .map(|_| unit_sphere(self.spec.d, rng))
            .collect();
        let ctx = ContextSet::new(t, vectors).expect("sphere samples are finite and nonempty");
        (user, ctx)
    }

    pub fn expected_payoff(&self, i: usize, x: &Vector) -> f64 {
        self.user_param(i).dot(x)
    }

    /// Noisy payoff clamped to `[-1, 1]`; noise is uniform with variance σ².
    pub fn payoff<R: Rng + ?Sized>(&self, i: usize, x: &Vector, rng: &mut R) -> f64 {
        let half_width = self.spec.sigma * 3f64.sqrt();
        let noise = if half_width > 0.0 {
            rng.random_range(-half_width..=half_width)
        } else {
            0.0
        };
        (self.expected_payoff(i, x) + noise).clamp(-1.0, 1.0)
    }

    /// Gap between the best expected payoff in the set and the chosen one.
    pub fn instant_regret(&self, i: usize, contexts: &[Vector], chosen: usize) -> f64 {
        let u = self.user_param(i);
        let best = contexts
            .iter()
            .map(|x| u.dot(x))
            .fold(f64::NEG_INFINITY, f64::max);
        (best - u.dot(&contexts[chosen])).max(0.0)
    }

    pub fn diagnostics<R: Rng + ?Sized>(&self, samples: usize, rng: &mut R) -> EnvDiagnostics {
        let d = self.spec.d;
        let mut second = Matrix::zeros(d, d);
        for _ in 0..samples {
            let x = unit_sphere(d, rng);
            second.ger(1.0, &x, &x, 1.0);
        }
        second /= samples.max(1) as f64;
        let eig = SymmetricEigen::new(second);
        let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        EnvDiagnostics {
            min_eigenvalue,
            cluster_sizes: self.true_partition().iter().map(BTreeSet::len).collect(),
        }
    }
}

fn place_parameters<R: Rng + ?Sized>(m: usize, d: usize, gamma: f64, rng: &mut R) -> Result<Vec<Vector>> {
    if m == 2 && gamma >= 2.0 - 1e-12 {
        let u = unit_sphere(d, rng);
        return Ok(vec![u.clone(), -u]);
    }
    let mut params: Vec<Vector> = Vec::with_capacity(m);
    let mut attempts = 0;
    while params.len() < m {
        if attempts == MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::Construction(format!(
                "could not place {m} unit vectors in {d} dimensions with separation {gamma} \
                 after {MAX_PLACEMENT_ATTEMPTS} attempts"
            )));
        }
        attempts += 1;
        let cand = unit_sphere(d, rng);
        if params.iter().all(|u| (u - &cand).norm() >= gamma) {
            params.push(cand);
        }
    }
    Ok(params)
}
