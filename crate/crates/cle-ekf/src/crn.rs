//! Chemical reaction networks with product-of-affine-factor propensities.
//!
//! A network couples `n` species to `m` reaction channels through the
//! stoichiometric matrix `V` (n x m). Each channel `j` fires at a propensity
//! `a_j(x) = k_j * prod(factors)`, where every factor is affine in one
//! species: either `x_i` itself or a conserved-total complement `(total - x_i)`.
//! This covers mass-action kinetics and conserved-pool terms such as
//! `k_up * (P_tot - P_o)` while keeping analytic Jacobians exact.
//!
//! The discretized Langevin dynamics built on top of these pieces are
//!
//! ```text
//! x_{k+1} = x_k + delta * V * A(x_k) + sqrt(delta) * V * diag(sqrt(a_j)) * w_k
//! ```
//!
//! with `A(x)` the propensity vector. Propensities are clamped at zero before
//! use: complements can go negative under noise and `sqrt(a_j)` must stay
//! real. States themselves are never clamped (see the `sim` module docs).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One multiplicative term of a propensity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Factor {
    /// Evaluates to `x[species]`.
    SpeciesValue(usize),
    /// Evaluates to `total - x[species]` for a conserved pool.
    Complement { total: f64, species: usize },
}

impl Factor {
    fn eval(&self, x: &DVector<f64>) -> f64 {
        match *self {
            Factor::SpeciesValue(i) => x[i],
            Factor::Complement { total, species } => total - x[species],
        }
    }

    /// Species index this factor depends on.
    fn species(&self) -> usize {
        match *self {
            Factor::SpeciesValue(i) => i,
            Factor::Complement { species, .. } => species,
        }
    }

    /// d(factor)/d(x_species): +1 for a species value, -1 for a complement.
    fn slope(&self) -> f64 {
        match *self {
            Factor::SpeciesValue(_) => 1.0,
            Factor::Complement { .. } => -1.0,
        }
    }
}

/// A reaction channel: nonnegative rate coefficient times affine factors.
#[derive(Clone, Debug)]
pub struct Reaction {
    pub coefficient: f64,
    pub factors: Vec<Factor>,
}

impl Reaction {
    pub fn new(coefficient: f64, factors: Vec<Factor>) -> Self {
        Reaction {
            coefficient,
            factors,
        }
    }

    /// Unclamped propensity `k * prod(factors)`.
    fn raw_propensity(&self, x: &DVector<f64>) -> f64 {
        self.factors
            .iter()
            .fold(self.coefficient, |acc, f| acc * f.eval(x))
    }
}

/// A chemical reaction network: species names, reaction channels, and the
/// stoichiometric matrix (one column per channel).
#[derive(Clone, Debug)]
pub struct Crn {
    species: Vec<String>,
    reactions: Vec<Reaction>,
    stoich: DMatrix<f64>,
}

impl Crn {
    /// Build a network, validating dimensions and invariants:
    /// `stoich` must be n x m with no all-zero column, coefficients must be
    /// nonnegative and finite, and factors may only reference declared species.
    pub fn new(
        species: Vec<String>,
        reactions: Vec<Reaction>,
        stoich: DMatrix<f64>,
    ) -> Result<Self> {
        let n = species.len();
        let m = reactions.len();
        if n == 0 || m == 0 {
            return Err(Error::InvalidModel(
                "network needs at least one species and one reaction".into(),
            ));
        }
        if stoich.nrows() != n || stoich.ncols() != m {
            return Err(Error::InvalidModel(format!(
                "stoichiometric matrix must be {n}x{m}, got {}x{}",
                stoich.nrows(),
                stoich.ncols()
            )));
        }
        for j in 0..m {
            if stoich.column(j).iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidModel(format!(
                    "stoichiometric column {j} is all zeros"
                )));
            }
        }
        for (j, r) in reactions.iter().enumerate() {
            if !r.coefficient.is_finite() || r.coefficient < 0.0 {
                return Err(Error::InvalidModel(format!(
                    "reaction {j}: coefficient must be finite and >= 0, got {}",
                    r.coefficient
                )));
            }
            for f in &r.factors {
                if f.species() >= n {
                    return Err(Error::InvalidModel(format!(
                        "reaction {j}: factor references species index {} but only {n} species are declared",
                        f.species()
                    )));
                }
                if let Factor::Complement { total, .. } = *f {
                    if !total.is_finite() || total < 0.0 {
                        return Err(Error::InvalidModel(format!(
                            "reaction {j}: complement total must be finite and >= 0, got {total}"
                        )));
                    }
                }
            }
        }
        Ok(Crn {
            species,
            reactions,
            stoich,
        })
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn n_reactions(&self) -> usize {
        self.reactions.len()
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    /// Stoichiometric matrix `V` (n x m).
    pub fn stoichiometry(&self) -> &DMatrix<f64> {
        &self.stoich
    }

    fn check_state(&self, x: &DVector<f64>, context: &'static str) -> Result<()> {
        if x.len() != self.n_species() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.n_species(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Propensity vector `A(x)`, each entry clamped to `max(a_j, 0)`.
    pub fn propensities(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x, "propensities")?;
        Ok(DVector::from_iterator(
            self.n_reactions(),
            self.reactions.iter().map(|r| r.raw_propensity(x).max(0.0)),
        ))
    }

    /// Jacobian of the propensity vector, `m x n`, entry (j, i) = da_j/dx_i.
    ///
    /// Rows whose unclamped propensity is negative are zero, matching the
    /// sub-gradient of the clamp applied by [`Crn::propensities`].
    pub fn propensity_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_state(x, "propensity_jacobian")?;
        let (m, n) = (self.n_reactions(), self.n_species());
        let mut jac = DMatrix::zeros(m, n);
        for (j, r) in self.reactions.iter().enumerate() {
            if r.raw_propensity(x) < 0.0 {
                continue;
            }
            // Product rule over the affine factors.
            for (q, f) in r.factors.iter().enumerate() {
                let mut term = r.coefficient * f.slope();
                for (s, other) in r.factors.iter().enumerate() {
                    if s != q {
                        term *= other.eval(x);
                    }
                }
                jac[(j, f.species())] += term;
            }
        }
        Ok(jac)
    }

    /// One deterministic Euler step `f(x) = x + delta * V * A(x)`.
    pub fn drift(&self, x: &DVector<f64>, delta: f64) -> Result<DVector<f64>> {
        self.check_state(x, "drift")?;
        check_delta(delta)?;
        let a = self.propensities(x)?;
        let mut out = x.clone();
        out.gemv(delta, &self.stoich, &a, 1.0);
        Ok(out)
    }

    /// Diffusion coefficient `G = sqrt(delta) * V * diag(sqrt(a_j))`, n x m.
    pub fn diffusion(&self, x: &DVector<f64>, delta: f64) -> Result<DMatrix<f64>> {
        self.check_state(x, "diffusion")?;
        check_delta(delta)?;
        let a = self.propensities(x)?;
        let mut g = self.stoich.clone();
        for j in 0..self.n_reactions() {
            let scale = (delta * a[j]).sqrt();
            g.column_mut(j).scale_mut(scale);
        }
        Ok(g)
    }
}

pub(crate) fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::NonpositiveDelta(delta));
    }
    Ok(())
}

/// Largest singular value of `M`, via a symmetric eigensolve of the smaller
/// Gram matrix. The matrices here are tiny (n <= ~10), so robustness wins
/// over speed.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    let eig = gram.symmetric_eigen();
    eig.eigenvalues
        .iter()
        .fold(0.0_f64, |acc, &l| acc.max(l))
        .sqrt()
}

// ---------------------------------------------------------------------------
// JSON model files
// ---------------------------------------------------------------------------

/// On-disk model description.
///
/// ```json
/// {
///   "species": ["P_o", "T"],
///   "reactions": [
///     {
///       "coefficient": 0.5,
///       "factors": [{"complement": {"total": 10.0, "species": "P_o"}}],
///       "stoichiometry": {"P_o": 1}
///     }
///   ]
/// }
/// ```
///
/// The stoichiometric matrix is assembled column-per-reaction from each
/// reaction's `stoichiometry` map; absent species default to zero.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub species: Vec<String>,
    pub reactions: Vec<ReactionSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReactionSpec {
    pub coefficient: f64,
    #[serde(default)]
    pub factors: Vec<FactorSpec>,
    pub stoichiometry: BTreeMap<String, i64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FactorSpec {
    Species { species: String },
    Complement { complement: ComplementSpec },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComplementSpec {
    pub total: f64,
    pub species: String,
}

impl Crn {
    /// Build a network from a parsed model file, resolving species names.
    pub fn from_model(model: &ModelFile) -> Result<Self> {
        let index = |name: &str| -> Result<usize> {
            model
                .species
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::InvalidModel(format!("undeclared species: {name}")))
        };
        let n = model.species.len();
        let m = model.reactions.len();
        let mut stoich = DMatrix::zeros(n, m);
        let mut reactions = Vec::with_capacity(m);
        for (j, spec) in model.reactions.iter().enumerate() {
            let mut factors = Vec::with_capacity(spec.factors.len());
            for f in &spec.factors {
                factors.push(match f {
                    FactorSpec::Species { species } => Factor::SpeciesValue(index(species)?),
                    FactorSpec::Complement { complement } => Factor::Complement {
                        total: complement.total,
                        species: index(&complement.species)?,
                    },
                });
            }
            for (name, &change) in &spec.stoichiometry {
                stoich[(index(name)?, j)] = change as f64;
            }
            reactions.push(Reaction::new(spec.coefficient, factors));
        }
        Crn::new(model.species.clone(), reactions, stoich)
    }

    /// Parse a JSON model file.
    pub fn from_json(json: &str) -> Result<Self> {
        let model: ModelFile = serde_json::from_str(json)?;
        Crn::from_model(&model)
    }

    /// Serialize back to the on-disk description.
    pub fn to_model(&self) -> ModelFile {
        let reactions = self
            .reactions
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let factors = r
                    .factors
                    .iter()
                    .map(|f| match *f {
                        Factor::SpeciesValue(i) => FactorSpec::Species {
                            species: self.species[i].clone(),
                        },
                        Factor::Complement { total, species } => FactorSpec::Complement {
                            complement: ComplementSpec {
                                total,
                                species: self.species[species].clone(),
                            },
                        },
                    })
                    .collect();
                let stoichiometry = (0..self.n_species())
                    .filter(|&i| self.stoich[(i, j)] != 0.0)
                    .map(|i| (self.species[i].clone(), self.stoich[(i, j)] as i64))
                    .collect();
                ReactionSpec {
                    coefficient: r.coefficient,
                    factors,
                    stoichiometry,
                }
            })
            .collect();
        ModelFile {
            species: self.species.clone(),
            reactions,
        }
    }
}
