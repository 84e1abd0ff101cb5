//! Mean-square stability certificates for the estimate-dependent filter.
//!
//! Given Lipschitz and norm bounds on the network (`L_f`, `L_a`, a bound
//! `v` on the stoichiometry norm, `C_A` on the propensity norm, bounds on
//! the measurement noise and output map, and moment bounds `m1`, `m2` on
//! the posterior covariance spectrum), the squared estimation error
//! contracts per step by a factor `gamma(delta)` that is a cubic
//! polynomial in the sampling period plus one:
//!
//! ```text
//! gamma(delta) = 1 + a3*delta^3 + a2*delta^2 + a1*delta + (L_f^2 - 1)
//! ```
//!
//! With `L_f < 1` the constant term is negative while the cubic, quadratic,
//! and linear coefficients are nonnegative, so by Descartes' rule of signs
//! the polynomial has exactly one positive root: the largest stable
//! sampling period `delta_max`. Below it `gamma < 1` and the error is
//! exponentially bounded in mean square; above it the certificate fails.
//!
//! The polynomial is implemented in fully expanded form; the intermediate
//! `alpha = 1 + rho*c*delta*beta1` of the derivation is folded in rather
//! than stored, which avoids tracking delta-dependent constants.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::crn::{check_delta, spectral_norm, Crn};
use crate::error::{Error, Result};

/// System bounds feeding the stability certificate.
///
/// `m1`..`m4` are moment bounds on the posterior covariance spectrum
/// (`c_e * sum(lambda_i^q) <= m_q`). `m1` and `m2` are required for the
/// polynomial; `m3` and `m4` are accepted for completeness but affect only
/// the additive offset of the error bound, not `delta_max`, so they are
/// optional and unused here.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityParams {
    /// Drift Lipschitz constant; the certificate needs `0 < l_f < 1`.
    pub l_f: f64,
    /// Propensity Lipschitz constant.
    pub l_a: f64,
    /// Bound on the stoichiometric matrix norm `||V||`.
    pub v_bound: f64,
    /// Bound on the propensity vector norm `||A(x)||` over the operating region.
    pub c_a: f64,
    /// Lower bound on `||R||`.
    pub r_lb: f64,
    /// Upper bound on `||R||`.
    pub r_ub: f64,
    /// Bound on the output-map norm `||C||`.
    pub c_bound: f64,
    /// Number of reaction channels.
    pub m: usize,
    /// Number of measured outputs.
    pub p: usize,
    #[serde(default)]
    pub m1: Option<f64>,
    #[serde(default)]
    pub m2: Option<f64>,
    #[serde(default)]
    pub m3: Option<f64>,
    #[serde(default)]
    pub m4: Option<f64>,
}

impl StabilityParams {
    /// Check the domain of every field. `l_f >= 1` maps to
    /// [`Error::NotContractive`] since the whole bound theory needs a
    /// contractive drift.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("l_f", self.l_f),
            ("v_bound", self.v_bound),
            ("r_lb", self.r_lb),
            ("r_ub", self.r_ub),
            ("c_bound", self.c_bound),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be positive and finite, got {v}"),
                });
            }
        }
        // l_a and c_a may legitimately be zero (an inert region).
        for (name, v) in [("l_a", self.l_a), ("c_a", self.c_a)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be nonnegative and finite, got {v}"),
                });
            }
        }
        if self.l_f >= 1.0 {
            return Err(Error::NotContractive(self.l_f));
        }
        if self.r_ub < self.r_lb {
            return Err(Error::InvalidParameter {
                name: "r_ub",
                reason: format!("must be >= r_lb ({} < {})", self.r_ub, self.r_lb),
            });
        }
        if self.m == 0 || self.p == 0 {
            return Err(Error::InvalidParameter {
                name: "m",
                reason: "reaction and output counts must be at least 1".into(),
            });
        }
        for (name, v) in [
            ("m1", self.m1),
            ("m2", self.m2),
            ("m3", self.m3),
            ("m4", self.m4),
        ] {
            if let Some(v) = v {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidParameter {
                        name,
                        reason: format!("must be nonnegative and finite, got {v}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Closed-form combinations of the raw bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DerivedConstants {
    /// `c / r_lb`.
    pub rho: f64,
    /// `r_ub / r_lb`.
    pub r_s: f64,
    /// `v^2 * L_a`.
    pub beta0: f64,
    /// `v^2 * C_A / (1 - L_f^2)`.
    pub beta1: f64,
    /// `beta0 * rho * c`.
    pub beta: f64,
    /// `beta1 * rho * c`.
    pub c2: f64,
}

/// Evaluate the derived constants from validated parameters.
pub fn derive_constants(params: &StabilityParams) -> Result<DerivedConstants> {
    params.validate()?;
    let rho = params.c_bound / params.r_lb;
    let v_sq = params.v_bound * params.v_bound;
    let beta0 = v_sq * params.l_a;
    let beta1 = v_sq * params.c_a / (1.0 - params.l_f * params.l_f);
    let beta = beta0 * rho * params.c_bound;
    let c2 = beta1 * rho * params.c_bound;
    Ok(DerivedConstants {
        rho,
        r_s: params.r_ub / params.r_lb,
        beta0,
        beta1,
        beta,
        c2,
    })
}

/// Expanded polynomial coefficients `[a3, a2, a1, a0]` from the derived
/// constants. Kept separate from [`polynomial_coefficients`] so degenerate
/// combinations (for instance a zeroed `c2`) can be probed directly.
pub fn coefficients_from_constants(
    dc: &DerivedConstants,
    l_f: f64,
    v_bound: f64,
    c_a: f64,
    m: usize,
    p: usize,
    m1: f64,
    m2: f64,
) -> [f64; 4] {
    let m = m as f64;
    let p = p as f64;
    let lf_sq = l_f * l_f;
    let v_sq_ca = v_bound * v_bound * c_a;
    let a3 = m * v_sq_ca * dc.beta * dc.beta
        + dc.beta0 * dc.beta * (2.0 * m * dc.c2 + m * m1 * dc.beta);
    let a2 = dc.c2 * dc.c2 * lf_sq
        + (2.0 * m + p * dc.r_s) * dc.beta0 * dc.beta
        + dc.beta * dc.beta * lf_sq * (m1 * m1 + 6.0 * m2)
        + 2.0 * dc.beta * lf_sq * m1 * dc.c2;
    let a1 = 2.0 * dc.c2 * lf_sq + 2.0 * dc.beta * lf_sq * m1;
    let a0 = lf_sq - 1.0;
    [a3, a2, a1, a0]
}

/// Coefficients `[a3, a2, a1, a0]` of the contraction polynomial
/// `gamma(delta) - 1`. Requires the moment bounds `m1` and `m2`.
pub fn polynomial_coefficients(params: &StabilityParams) -> Result<[f64; 4]> {
    let m1 = params.m1.ok_or(Error::MissingField("m1"))?;
    let m2 = params.m2.ok_or(Error::MissingField("m2"))?;
    let dc = derive_constants(params)?;
    Ok(coefficients_from_constants(
        &dc,
        params.l_f,
        params.v_bound,
        params.c_a,
        params.m,
        params.p,
        m1,
        m2,
    ))
}

/// Sign of each coefficient as `'+'`, `'-'`, or `'0'`, highest power first.
pub fn sign_pattern(coefficients: &[f64; 4]) -> [char; 4] {
    coefficients.map(|c| {
        if c > 0.0 {
            '+'
        } else if c < 0.0 {
            '-'
        } else {
            '0'
        }
    })
}

/// Number of sign changes, skipping zero coefficients.
pub fn sign_changes(coefficients: &[f64; 4]) -> usize {
    let mut changes = 0;
    let mut last = 0.0_f64;
    for &c in coefficients {
        if c == 0.0 {
            continue;
        }
        if last != 0.0 && c.signum() != last.signum() {
            changes += 1;
        }
        last = c;
    }
    changes
}

fn horner(coefficients: &[f64; 4], delta: f64) -> f64 {
    ((coefficients[0] * delta + coefficients[1]) * delta + coefficients[2]) * delta
        + coefficients[3]
}

/// Largest stable sampling period: the unique positive root of the
/// contraction polynomial, found by bracketed bisection (the upper bracket
/// doubles until the polynomial turns positive).
pub fn delta_max(params: &StabilityParams) -> Result<f64> {
    let coefficients = polynomial_coefficients(params)?;
    delta_max_from_coefficients(&coefficients)
}

pub(crate) fn delta_max_from_coefficients(coefficients: &[f64; 4]) -> Result<f64> {
    if sign_changes(coefficients) != 1 || coefficients[3] >= 0.0 {
        return Err(Error::InvalidParameter {
            name: "coefficients",
            reason: format!(
                "sign pattern {:?} does not have exactly one change; no unique positive root",
                sign_pattern(coefficients)
            ),
        });
    }
    let mut hi = 1e-6_f64;
    let mut doubling = 0;
    while horner(coefficients, hi) <= 0.0 {
        hi *= 2.0;
        doubling += 1;
        if doubling > 1200 {
            return Err(Error::InvalidParameter {
                name: "coefficients",
                reason: "failed to bracket a positive root".into(),
            });
        }
    }
    let mut lo = 0.0_f64;
    // Bisect well past the specified 1e-9 relative tolerance; the extra
    // iterations are free and keep the residual at rounding level.
    while hi - lo > 1e-14 * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if horner(coefficients, mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Contraction factor `gamma(delta) = 1 + poly(delta)`. The error is
/// exponentially bounded in mean square exactly when `gamma(delta) < 1`,
/// i.e. when `delta < delta_max`.
pub fn gamma(params: &StabilityParams, delta: f64) -> Result<f64> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter {
            name: "delta",
            reason: format!("must be nonnegative and finite, got {delta}"),
        });
    }
    let coefficients = polynomial_coefficients(params)?;
    Ok(1.0 + horner(&coefficients, delta))
}

/// Numerically estimated bounds over an operating box.
#[derive(Clone, Debug, Serialize)]
pub struct EstimatedBounds {
    /// Estimated drift Lipschitz constant `sup ||I + delta*V*dA/dx||`,
    /// inflated by the safety factor.
    pub l_f: f64,
    /// Estimated propensity Lipschitz constant `sup ||dA/dx||`, inflated.
    pub l_a: f64,
    /// Estimated propensity norm bound `sup ||A(x)||`, inflated.
    pub c_a: f64,
    /// Exact `||V||` (no inflation; the matrix is known).
    pub v_bound: f64,
    /// Number of sampled interior points (box corners are added on top).
    pub samples: usize,
    /// Set when the inflated `l_f` estimate reaches 1: the certificate
    /// machinery does not apply on this box at this `delta`.
    pub l_f_flagged: bool,
}

/// Safety inflation applied to sampled suprema.
const INFLATION: f64 = 1.05;

/// Estimate `L_f`, `L_a`, and `C_A` over a per-species box by sampling, and
/// compute `||V||` exactly. Suprema are taken over uniform samples plus the
/// box corners (when there are at most 2^12 of them) and inflated by 5%.
/// An `l_f` estimate at or above 1 raises a flag, not an error.
pub fn estimate_bounds(
    crn: &Crn,
    bounds: &[(f64, f64)],
    delta: f64,
    samples: usize,
    seed: u64,
) -> Result<EstimatedBounds> {
    check_delta(delta)?;
    let n = crn.n_species();
    if bounds.len() != n {
        return Err(Error::DimensionMismatch {
            context: "estimate_bounds box",
            expected: n,
            actual: bounds.len(),
        });
    }
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter {
                name: "box",
                reason: format!("species {i}: invalid interval [{lo}, {hi}]"),
            });
        }
    }
    if samples < 100 {
        return Err(Error::InvalidParameter {
            name: "samples",
            reason: format!("need at least 100, got {samples}"),
        });
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut points: Vec<DVector<f64>> = (0..samples)
        .map(|_| {
            DVector::from_iterator(
                n,
                bounds.iter().map(|&(lo, hi)| {
                    if lo == hi {
                        lo
                    } else {
                        rng.gen_range(lo..hi)
                    }
                }),
            )
        })
        .collect();
    if n <= 12 {
        for corner in 0..(1_usize << n) {
            points.push(DVector::from_iterator(
                n,
                bounds
                    .iter()
                    .enumerate()
                    .map(|(i, &(lo, hi))| if corner >> i & 1 == 1 { hi } else { lo }),
            ));
        }
    }

    let eval = |x: &DVector<f64>| -> (f64, f64, f64) {
        let jac = crn.propensity_jacobian(x).expect("dims checked");
        let a = crn.propensities(x).expect("dims checked");
        let mut f_lin = DMatrix::identity(n, n);
        f_lin.gemm(delta, crn.stoichiometry(), &jac, 1.0);
        (spectral_norm(&f_lin), spectral_norm(&jac), a.norm())
    };
    let fold = |acc: (f64, f64, f64), v: (f64, f64, f64)| {
        (acc.0.max(v.0), acc.1.max(v.1), acc.2.max(v.2))
    };

    #[cfg(feature = "parallel")]
    let (sup_lf, sup_la, sup_ca) = {
        use rayon::prelude::*;
        points
            .par_iter()
            .map(eval)
            .reduce(|| (0.0, 0.0, 0.0), fold)
    };
    #[cfg(not(feature = "parallel"))]
    let (sup_lf, sup_la, sup_ca) = points.iter().map(eval).fold((0.0, 0.0, 0.0), fold);

    let l_f = sup_lf * INFLATION;
    Ok(EstimatedBounds {
        l_f,
        l_a: sup_la * INFLATION,
        c_a: sup_ca * INFLATION,
        v_bound: spectral_norm(crn.stoichiometry()),
        samples,
        l_f_flagged: l_f >= 1.0,
    })
}

/// Result of checking a mean-square error series against the exponential
/// bound `mse_k <= gamma^k * mse_0 + C0`.
#[derive(Clone, Debug, Serialize)]
pub struct BoundCheck {
    /// Contraction factor the series was checked against.
    pub gamma: f64,
    /// Decay rate fitted to the transient upper envelope; `None` when the
    /// series settles immediately and leaves nothing to fit.
    pub empirical_gamma: Option<f64>,
    /// Smallest offset making the bound hold at every step.
    pub c0: f64,
    /// Length of the transient segment used for the fit.
    pub transient_len: usize,
    /// Mean of the final quarter of the series.
    pub final_quarter_mean: f64,
    /// Whether the series satisfies the bound with the fitted offset.
    pub satisfied: bool,
}

/// Check a mean-square error series against exponential boundedness with
/// contraction `gamma` and unit leading constant.
///
/// The offset is made tight: `C0 = max_k (mse_k - gamma^k * mse_0)`, which
/// is nonnegative (the `k = 0` term vanishes). The fitted decay rate comes
/// from a log-linear fit over the transient only — from the start until the
/// series first drops below 1.05x its final-quarter mean — because the
/// steady-state floor would bias a whole-series fit toward 1.
pub fn check_exponential_bound(mse_series: &[f64], gamma: f64) -> Result<BoundCheck> {
    if mse_series.is_empty() {
        return Err(Error::InvalidParameter {
            name: "mse_series",
            reason: "must be nonempty".into(),
        });
    }
    if mse_series.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "mse_series",
            reason: "contains non-finite entries".into(),
        });
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter {
            name: "gamma",
            reason: format!("must lie in (0, 1), got {gamma}"),
        });
    }

    let n = mse_series.len();
    let fq_start = n - n.div_ceil(4);
    let fq = &mse_series[fq_start..];
    let final_quarter_mean = fq.iter().sum::<f64>() / fq.len() as f64;
    let fq_max = fq.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let threshold = 1.05 * final_quarter_mean;
    let transient_len = mse_series
        .iter()
        .position(|&v| v < threshold)
        .unwrap_or(n);

    // Log-linear fit over positive transient entries.
    let pts: Vec<(f64, f64)> = mse_series[..transient_len]
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(k, &v)| (k as f64, v.ln()))
        .collect();
    let empirical_gamma = if pts.len() >= 2 {
        let count = pts.len() as f64;
        let mean_k = pts.iter().map(|p| p.0).sum::<f64>() / count;
        let mean_l = pts.iter().map(|p| p.1).sum::<f64>() / count;
        let sxx = pts.iter().map(|p| (p.0 - mean_k).powi(2)).sum::<f64>();
        if sxx > 0.0 {
            let sxy = pts
                .iter()
                .map(|p| (p.0 - mean_k) * (p.1 - mean_l))
                .sum::<f64>();
            Some((sxy / sxx).exp())
        } else {
            None
        }
    } else {
        None
    };

    let mut c0 = f64::NEG_INFINITY;
    let mut decay = mse_series[0];
    for &v in mse_series {
        c0 = c0.max(v - decay);
        decay *= gamma;
    }

    let eps = 1e-6 * (1.0 + c0.abs());
    let satisfied = c0.is_finite() && fq_max <= c0 + eps;
    Ok(BoundCheck {
        gamma,
        empirical_gamma,
        c0,
        transient_len,
        final_quarter_mean,
        satisfied,
    })
}

/// Certificate summary emitted by the stability command.
#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    /// `[a3, a2, a1, a0]`, highest power first.
    pub coefficients: [f64; 4],
    pub delta_max: f64,
    pub gamma_at: GammaAt,
    pub sign_pattern: [char; 4],
    /// Echo of the inputs the certificate was computed from.
    pub inputs: StabilityParams,
    /// Names of input fields that were numerically estimated rather than
    /// supplied.
    pub estimated_fields: Vec<String>,
}

/// Contraction factor evaluated at the two pinned points.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GammaAt {
    /// `gamma(0) = L_f^2`.
    #[serde(rename = "0")]
    pub zero: f64,
    /// `gamma(delta_max) = 1` by definition of the root.
    pub delta_max: f64,
}

/// Assemble the full stability report for a parameter set.
pub fn report(params: &StabilityParams, estimated_fields: Vec<String>) -> Result<StabilityReport> {
    let coefficients = polynomial_coefficients(params)?;
    let root = delta_max_from_coefficients(&coefficients)?;
    Ok(StabilityReport {
        coefficients,
        delta_max: root,
        gamma_at: GammaAt {
            zero: 1.0 + horner(&coefficients, 0.0),
            delta_max: 1.0 + horner(&coefficients, root),
        },
        sign_pattern: sign_pattern(&coefficients),
        inputs: params.clone(),
        estimated_fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crn::test_models;
    use approx::assert_relative_eq;

    /// The gene-expression example bounds.
    pub(crate) fn example_params() -> StabilityParams {
        StabilityParams {
            l_f: 0.85,
            l_a: 0.8,
            v_bound: 2.7657,
            c_a: 100.0,
            r_lb: 10.0,
            r_ub: 15.0,
            c_bound: 1.0,
            m: 8,
            p: 2,
            m1: Some(80.0),
            m2: Some(800.0),
            m3: None,
            m4: None,
        }
    }

    #[test]
    fn derived_constants_match_closed_forms() {
        let params = example_params();
        let dc = derive_constants(&params).unwrap();
        // Independent hand evaluation of the defining formulas.
        let v_sq = 2.7657 * 2.7657;
        assert_relative_eq!(dc.rho, 1.0 / 10.0, max_relative = 1e-12);
        assert_relative_eq!(dc.r_s, 1.5, max_relative = 1e-12);
        assert_relative_eq!(dc.beta0, v_sq * 0.8, max_relative = 1e-12);
        assert_relative_eq!(dc.beta1, v_sq * 100.0 / (1.0 - 0.85 * 0.85), max_relative = 1e-12);
        assert_relative_eq!(dc.beta, v_sq * 0.8 * 0.1, max_relative = 1e-12);
        assert_relative_eq!(dc.c2, v_sq * 100.0 / (1.0 - 0.7225) * 0.1, max_relative = 1e-12);
        // Published rounded values, within 0.1%.
        assert_relative_eq!(dc.beta0, 6.119, max_relative = 1e-3);
        assert_relative_eq!(dc.beta1, 2756.5, max_relative = 1e-3);
        assert_relative_eq!(dc.beta, 0.6119, max_relative = 1e-3);
        assert_relative_eq!(dc.c2, 275.65, max_relative = 1e-3);
    }

    #[test]
    fn zero_lipschitz_zeroes_the_noise_constants() {
        let params = StabilityParams {
            l_a: 0.0,
            v_bound: 1.0,
            ..example_params()
        };
        let dc = derive_constants(&params).unwrap();
        assert_eq!(dc.beta0, 0.0);
        assert_eq!(dc.beta, 0.0);
    }

    #[test]
    fn noise_bound_scaling_is_homogeneous() {
        let base = example_params();
        let dc = derive_constants(&base).unwrap();
        let scaled = StabilityParams {
            r_lb: base.r_lb * 4.0,
            r_ub: base.r_ub * 4.0,
            ..base
        };
        let dc_s = derive_constants(&scaled).unwrap();
        assert_relative_eq!(dc_s.rho, dc.rho / 4.0, max_relative = 1e-12);
        assert_relative_eq!(dc_s.r_s, dc.r_s, max_relative = 1e-12);
    }

    #[test]
    fn non_contractive_drift_is_rejected() {
        let params = StabilityParams {
            l_f: 1.2,
            ..example_params()
        };
        match derive_constants(&params) {
            Err(Error::NotContractive(v)) => assert_eq!(v, 1.2),
            other => panic!("expected NotContractive, got {other:?}"),
        }
    }

    #[test]
    fn example_coefficients_match_published_values() {
        let coefficients = polynomial_coefficients(&example_params()).unwrap();
        let expected = [20274.482, 77497.805, 469.051, -0.277];
        for (got, want) in coefficients.iter().zip(expected) {
            assert!(
                (got - want).abs() <= 0.01 * want.abs(),
                "coefficient {got} vs {want}"
            );
        }
    }

    #[test]
    fn constant_term_is_fixed_by_l_f() {
        let coefficients = polynomial_coefficients(&example_params()).unwrap();
        assert_relative_eq!(coefficients[3], -0.2775, max_relative = 1e-12);
    }

    #[test]
    fn missing_moment_bounds_name_the_field() {
        let mut params = example_params();
        params.m1 = None;
        match polynomial_coefficients(&params) {
            Err(Error::MissingField(name)) => assert_eq!(name, "m1"),
            other => panic!("expected MissingField, got {other:?}"),
        }
        let mut params = example_params();
        params.m2 = None;
        assert!(matches!(
            polynomial_coefficients(&params),
            Err(Error::MissingField("m2"))
        ));
    }

    #[test]
    fn degenerate_moments_keep_one_sign_change() {
        // Zeroed c2 and moments: the linear coefficient vanishes, the
        // quadratic collapses to (2m + p r_s) beta0 beta, one change remains.
        let params = example_params();
        let mut dc = derive_constants(&params).unwrap();
        dc.c2 = 0.0;
        let coefficients = coefficients_from_constants(
            &dc,
            params.l_f,
            params.v_bound,
            params.c_a,
            params.m,
            params.p,
            0.0,
            0.0,
        );
        assert_eq!(coefficients[2], 0.0);
        assert_relative_eq!(
            coefficients[1],
            (2.0 * 8.0 + 2.0 * 1.5) * dc.beta0 * dc.beta,
            max_relative = 1e-12
        );
        assert_eq!(sign_pattern(&coefficients), ['+', '+', '0', '-']);
        assert_eq!(sign_changes(&coefficients), 1);
        assert!(delta_max_from_coefficients(&coefficients).is_ok());
    }

    #[test]
    fn example_delta_max_matches_published_root() {
        let root = delta_max(&example_params()).unwrap();
        assert!(
            (root - 5.42e-4).abs() <= 0.01 * 5.42e-4,
            "delta_max {root}"
        );
        let coefficients = polynomial_coefficients(&example_params()).unwrap();
        assert!(horner(&coefficients, root).abs() < 1e-9 * coefficients[3].abs());
    }

    #[test]
    fn linear_degenerate_root() {
        // a3 = a2 = 0, a1 = 1, a0 = -0.5 has the root 0.5.
        let root = delta_max_from_coefficients(&[0.0, 0.0, 1.0, -0.5]).unwrap();
        assert_relative_eq!(root, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn random_roots_verified_by_residual_and_bracketing() {
        use rand::rngs::StdRng;
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..100 {
            let params = StabilityParams {
                l_f: rng.gen_range(0.05..0.99),
                l_a: rng.gen_range(0.0..5.0),
                v_bound: rng.gen_range(0.2..8.0),
                c_a: rng.gen_range(0.1..500.0),
                r_lb: rng.gen_range(0.1..50.0),
                r_ub: 0.0,
                c_bound: rng.gen_range(0.1..5.0),
                m: rng.gen_range(1..16),
                p: rng.gen_range(1..4),
                m1: Some(rng.gen_range(0.0..500.0)),
                m2: Some(rng.gen_range(0.0..5000.0)),
                m3: None,
                m4: None,
            };
            let params = StabilityParams {
                r_ub: params.r_lb * rng.gen_range(1.0..5.0),
                ..params
            };
            let coefficients = polynomial_coefficients(&params).unwrap();
            if sign_changes(&coefficients) != 1 {
                continue; // degenerate all-zero noise terms
            }
            let root = delta_max(&params).unwrap();
            assert!(
                horner(&coefficients, root).abs() <= 1e-9 * coefficients[3].abs(),
                "residual too large"
            );
            // The polynomial must actually change sign across the root.
            assert!(horner(&coefficients, root * (1.0 - 1e-6)) < 0.0);
            assert!(horner(&coefficients, root * (1.0 + 1e-6)) > 0.0);
        }
    }

    #[test]
    fn gamma_at_zero_and_at_the_root() {
        let params = example_params();
        assert_relative_eq!(
            gamma(&params, 0.0).unwrap(),
            0.85 * 0.85,
            max_relative = 1e-12
        );
        let root = delta_max(&params).unwrap();
        assert!((gamma(&params, root).unwrap() - 1.0).abs() <= 1e-8);
        assert!(gamma(&params, 5e-4).unwrap() < 1.0);
        assert!(gamma(&params, 6e-4).unwrap() > 1.0);
    }

    #[test]
    fn inert_network_bounds_are_flagged() {
        let crn = test_models::inert();
        let est = estimate_bounds(&crn, &[(0.0, 10.0), (0.0, 10.0)], 0.01, 200, 1).unwrap();
        assert_eq!(est.l_a, 0.0);
        assert_eq!(est.c_a, 0.0);
        // sup ||I + 0|| = 1, inflated to 1.05 and flagged.
        assert_relative_eq!(est.l_f, 1.05, max_relative = 1e-12);
        assert!(est.l_f_flagged);
    }

    #[test]
    fn birth_death_bounds_reach_the_corner() {
        let crn = test_models::birth_death(10.0, 0.1);
        let est = estimate_bounds(&crn, &[(0.0, 200.0)], 0.01, 4000, 7).unwrap();
        // Constant Jacobian norm 0.1, inflated.
        assert_relative_eq!(est.l_a, 0.105, max_relative = 1e-12);
        // sup ||A|| is at the corner x = 200: sqrt(100 + 400) * 1.05.
        let expected = (100.0_f64 + 400.0).sqrt() * 1.05;
        assert_relative_eq!(est.c_a, expected, max_relative = 1e-9);
        assert!((est.c_a - 23.49).abs() < 0.02);
        assert!(!est.l_f_flagged);
    }

    #[test]
    fn geometric_series_bound_check() {
        let series: Vec<f64> = (0..60).map(|k| 10.0 * 0.5_f64.powi(k)).collect();
        let check = check_exponential_bound(&series, 0.6).unwrap();
        assert!(check.satisfied);
        assert!(check.c0.abs() <= 1e-12);
        let eg = check.empirical_gamma.unwrap();
        assert_relative_eq!(eg, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn constant_series_bound_check() {
        let series = vec![5.0; 200];
        let check = check_exponential_bound(&series, 0.6).unwrap();
        assert!(check.satisfied);
        assert_relative_eq!(check.c0, 5.0, max_relative = 1e-6);
        assert!(check.empirical_gamma.is_none());
    }

    #[test]
    fn bound_check_rejects_bad_inputs() {
        assert!(check_exponential_bound(&[], 0.5).is_err());
        assert!(check_exponential_bound(&[1.0, f64::NAN], 0.5).is_err());
        assert!(check_exponential_bound(&[1.0, 0.5], 1.0).is_err());
        assert!(check_exponential_bound(&[1.0, 0.5], 0.0).is_err());
    }

    #[test]
    fn report_serializes_with_pinned_gamma_keys() {
        let rep = report(&example_params(), vec![]).unwrap();
        let json = serde_json::to_value(&rep).unwrap();
        assert!(json["gamma_at"]["0"].as_f64().unwrap() > 0.0);
        assert!((json["gamma_at"]["delta_max"].as_f64().unwrap() - 1.0).abs() < 1e-8);
        assert_eq!(json["sign_pattern"][0], "+");
        assert_eq!(json["sign_pattern"][3], "-");
        assert_eq!(json["inputs"]["l_f"].as_f64().unwrap(), 0.85);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        prop_compose! {
            fn arb_params()(
                l_f in 0.05f64..0.99,
                l_a in 0.001f64..5.0,
                v_bound in 0.2f64..8.0,
                c_a in 0.1f64..500.0,
                r_lb in 0.1f64..50.0,
                r_scale in 1.0f64..5.0,
                c_bound in 0.1f64..5.0,
                m in 1usize..16,
                p in 1usize..4,
                m1 in 0.0f64..500.0,
                m2 in 0.0f64..5000.0,
            ) -> StabilityParams {
                StabilityParams {
                    l_f, l_a, v_bound, c_a, r_lb,
                    r_ub: r_lb * r_scale,
                    c_bound, m, p,
                    m1: Some(m1), m2: Some(m2),
                    m3: None, m4: None,
                }
            }
        }

        proptest! {
            #[test]
            fn descartes_sign_pattern_and_root_consistency(params in arb_params()) {
                let coefficients = polynomial_coefficients(&params).unwrap();
                prop_assert_eq!(sign_changes(&coefficients), 1);
                prop_assert!(coefficients[3] < 0.0);
                let root = delta_max(&params).unwrap();
                let g0 = gamma(&params, 0.0).unwrap();
                prop_assert!((g0 - params.l_f * params.l_f).abs() < 1e-12);
                let g_root = gamma(&params, root).unwrap();
                prop_assert!((g_root - 1.0).abs() <= 1e-8);
            }
        }
    }
}
