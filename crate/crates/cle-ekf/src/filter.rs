//! Extended Kalman filter whose process-noise covariance is recomputed each
//! step from the current state estimate.
//!
//! Instead of a constant, hand-tuned `Q`, every prediction rebuilds
//!
//! ```text
//! Q_k = G_k G_k^T = delta * V * diag(A(xhat_k)) * V^T
//! ```
//!
//! from the Langevin diffusion at the posterior estimate `xhat_k` of step
//! `k`, so the filter's model error tracks where the estimate actually is.
//!
//! The gain is computed in standard innovation form
//! `K = P^- C^T (C P^- C^T + R)^{-1}`; the information form
//! `K = P^+ C^T R^{-1}` is algebraically equivalent and enforced by test
//! rather than used directly, since it defines `K` through the posterior
//! covariance that itself needs `K`. Covariances are symmetrized after
//! every update; over millions of steps the drift otherwise breaks
//! positive-semidefiniteness checks.

use std::io::{self, Write};

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::crn::{check_delta, spectral_norm, Crn};
use crate::error::{Error, Result};
use crate::sim::{MeasurementModel, MeasurementSeries};
use crate::util::{full_precision, symmetrize};

/// Posterior mean and covariance after `step` corrections.
#[derive(Clone, Debug)]
pub struct FilterState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub step: usize,
}

impl FilterState {
    /// Initial state; the covariance is symmetrized and checked finite.
    pub fn new(mean: DVector<f64>, mut cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                context: "filter initial covariance",
                expected: mean.len(),
                actual: cov.nrows(),
            });
        }
        if !mean.iter().all(|v| v.is_finite()) || !cov.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { step: 0 });
        }
        symmetrize(&mut cov);
        Ok(FilterState { mean, cov, step: 0 })
    }
}

/// Output of the prediction half-step.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// Step index of the posterior this prediction propagated from.
    pub from_step: usize,
    /// Prior mean `f(xhat_k)`.
    pub prior_mean: DVector<f64>,
    /// Prior covariance `F P F^T + Q`, symmetrized.
    pub prior_cov: DMatrix<f64>,
    /// Linearized transition `F_k = I + delta * V * dA/dx`.
    pub jacobian: DMatrix<f64>,
    /// Estimate-dependent process noise `Q_k`.
    pub process_noise: DMatrix<f64>,
}

/// Everything the filter produced for one measurement step.
#[derive(Clone, Debug)]
pub struct StepRecord {
    /// Step index `k` of the posterior (1-based).
    pub step: usize,
    pub prior_mean: DVector<f64>,
    pub prior_cov: DMatrix<f64>,
    pub process_noise: DMatrix<f64>,
    pub jacobian: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub innovation: DVector<f64>,
    pub posterior: FilterState,
}

/// Process-noise covariance `Q = delta * V * diag(A(estimate)) * V^T`,
/// computed as the Gram matrix `G G^T` of the diffusion so the result is
/// positive semidefinite by construction.
pub fn process_noise_cov(crn: &Crn, estimate: &DVector<f64>, delta: f64) -> Result<DMatrix<f64>> {
    process_noise_cov_with(crn, estimate, delta, None)
}

/// Same with an explicit driving-noise covariance `Q0` (`G Q0 G^T`).
/// The default `Q0 = I` matches unit-variance reaction channels; the
/// override exists for scaled or correlated channel noise.
pub fn process_noise_cov_with(
    crn: &Crn,
    estimate: &DVector<f64>,
    delta: f64,
    q0: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let g = crn.diffusion(estimate, delta)?;
    let mut q = match q0 {
        None => &g * g.transpose(),
        Some(q0) => {
            let m = crn.n_reactions();
            if q0.nrows() != m || q0.ncols() != m {
                return Err(Error::DimensionMismatch {
                    context: "driving noise covariance Q0",
                    expected: m,
                    actual: q0.nrows(),
                });
            }
            &g * q0 * g.transpose()
        }
    };
    symmetrize(&mut q);
    Ok(q)
}

/// Prediction half-step: propagate the posterior of `state` through the
/// deterministic drift and linearized covariance update.
pub fn predict(state: &FilterState, crn: &Crn, delta: f64) -> Result<Prediction> {
    check_delta(delta)?;
    let n = crn.n_species();
    if state.mean.len() != n {
        return Err(Error::DimensionMismatch {
            context: "filter state",
            expected: n,
            actual: state.mean.len(),
        });
    }
    let prior_mean = crn.drift(&state.mean, delta)?;
    let prop_jac = crn.propensity_jacobian(&state.mean)?;
    let mut jacobian = DMatrix::identity(n, n);
    jacobian.gemm(delta, crn.stoichiometry(), &prop_jac, 1.0);
    let process_noise = process_noise_cov(crn, &state.mean, delta)?;
    let mut prior_cov = &jacobian * &state.cov * jacobian.transpose() + &process_noise;
    symmetrize(&mut prior_cov);
    if !prior_mean.iter().all(|v| v.is_finite()) || !prior_cov.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteState {
            step: state.step + 1,
        });
    }
    Ok(Prediction {
        from_step: state.step,
        prior_mean,
        prior_cov,
        jacobian,
        process_noise,
    })
}

/// Correction half-step: fold measurement `y` into the prediction.
///
/// Gain in standard form `K = P^- C^T S^{-1}` with `S = C P^- C^T + R`
/// solved through a Cholesky factorization of `S`; the posterior covariance
/// is `(I - K C) P^-`, symmetrized.
pub fn correct(
    prediction: &Prediction,
    y: &DVector<f64>,
    model: &MeasurementModel,
) -> Result<StepRecord> {
    let n = prediction.prior_mean.len();
    let p = model.n_outputs();
    if model.n_states() != n {
        return Err(Error::DimensionMismatch {
            context: "measurement map C columns",
            expected: n,
            actual: model.n_states(),
        });
    }
    if y.len() != p {
        return Err(Error::DimensionMismatch {
            context: "measurement vector",
            expected: p,
            actual: y.len(),
        });
    }

    let cp = &model.c * &prediction.prior_cov; // p x n
    let mut s = &cp * model.c.transpose() + &model.r;
    symmetrize(&mut s);
    let chol = Cholesky::new(s).ok_or(Error::SingularInnovation)?;
    let gain = chol.solve(&cp).transpose(); // (S^{-1} C P^-)^T = P^- C^T S^{-1}

    let innovation = y - &model.c * &prediction.prior_mean;
    let mean = &prediction.prior_mean + &gain * &innovation;
    let mut cov = &prediction.prior_cov - &gain * &cp;
    symmetrize(&mut cov);

    if !mean.iter().all(|v| v.is_finite()) || !cov.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteState {
            step: prediction.from_step + 1,
        });
    }
    let step = prediction.from_step + 1;
    Ok(StepRecord {
        step,
        prior_mean: prediction.prior_mean.clone(),
        prior_cov: prediction.prior_cov.clone(),
        process_noise: prediction.process_noise.clone(),
        jacobian: prediction.jacobian.clone(),
        gain,
        innovation,
        posterior: FilterState { mean, cov, step },
    })
}

/// Run the filter over a measurement series, streaming each [`StepRecord`]
/// into `sink` instead of retaining it. Returns the final posterior.
pub fn run_with(
    crn: &Crn,
    measurements: &MeasurementSeries,
    model: &MeasurementModel,
    init: FilterState,
    delta: f64,
    mut sink: impl FnMut(&StepRecord),
) -> Result<FilterState> {
    if measurements.values.ncols() != model.n_outputs() {
        return Err(Error::DimensionMismatch {
            context: "measurement series width",
            expected: model.n_outputs(),
            actual: measurements.values.ncols(),
        });
    }
    let mut state = init;
    for k in 1..=measurements.len() {
        let prediction = predict(&state, crn, delta).map_err(|e| e.at_step(k))?;
        let y = measurements.at(k);
        let record = correct(&prediction, &y, model).map_err(|e| e.at_step(k))?;
        state = record.posterior.clone();
        sink(&record);
    }
    Ok(state)
}

/// Run the filter, retaining every step record for diagnostics.
pub fn run(
    crn: &Crn,
    measurements: &MeasurementSeries,
    model: &MeasurementModel,
    init: FilterState,
    delta: f64,
) -> Result<Vec<StepRecord>> {
    let mut records = Vec::with_capacity(measurements.len());
    run_with(crn, measurements, model, init, delta, |r| {
        records.push(r.clone())
    })?;
    Ok(records)
}

/// Filter output CSV: `k,t,xhat_1..n,trace_P,norm_P,norm_Q,innov_1..p`,
/// 17 significant digits.
pub fn write_records_csv<W: Write>(
    records: &[StepRecord],
    delta: f64,
    out: &mut W,
) -> io::Result<()> {
    let (n, p) = match records.first() {
        Some(r) => (r.posterior.mean.len(), r.innovation.len()),
        None => (0, 0),
    };
    write!(out, "k,t")?;
    for i in 1..=n {
        write!(out, ",xhat_{i}")?;
    }
    write!(out, ",trace_P,norm_P,norm_Q")?;
    for i in 1..=p {
        write!(out, ",innov_{i}")?;
    }
    writeln!(out)?;
    for r in records {
        write!(out, "{},{}", r.step, full_precision(r.step as f64 * delta))?;
        for v in r.posterior.mean.iter() {
            write!(out, ",{}", full_precision(*v))?;
        }
        write!(
            out,
            ",{},{},{}",
            full_precision(r.posterior.cov.trace()),
            full_precision(spectral_norm(&r.posterior.cov)),
            full_precision(spectral_norm(&r.process_noise)),
        )?;
        for v in r.innovation.iter() {
            write!(out, ",{}", full_precision(*v))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Binary record dump. Layout, all little-endian:
///
/// ```text
/// magic   8 bytes   "CLEEKF01"
/// u64     n (state dim), p (output dim), count (records)
/// then per record:
///   u64   step
///   f64   prior_mean[n], prior_cov[n*n], process_noise[n*n],
///         jacobian[n*n], gain[n*p], innovation[p],
///         posterior_mean[n], posterior_cov[n*n]
/// ```
///
/// Matrices are row-major.
pub fn write_records_bin<W: Write>(records: &[StepRecord], out: &mut W) -> io::Result<()> {
    let (n, p) = match records.first() {
        Some(r) => (r.posterior.mean.len(), r.innovation.len()),
        None => (0, 0),
    };
    out.write_all(b"CLEEKF01")?;
    for v in [n as u64, p as u64, records.len() as u64] {
        out.write_all(&v.to_le_bytes())?;
    }
    let write_matrix = |out: &mut W, m: &DMatrix<f64>| -> io::Result<()> {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                out.write_all(&m[(i, j)].to_le_bytes())?;
            }
        }
        Ok(())
    };
    for r in records {
        out.write_all(&(r.step as u64).to_le_bytes())?;
        for v in r.prior_mean.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
        write_matrix(out, &r.prior_cov)?;
        write_matrix(out, &r.process_noise)?;
        write_matrix(out, &r.jacobian)?;
        write_matrix(out, &r.gain)?;
        for v in r.innovation.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in r.posterior.mean.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
        write_matrix(out, &r.posterior.cov)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crn::{test_models, Factor, Reaction};
    use crate::sim;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn birth_death() -> Crn {
        test_models::birth_death(10.0, 0.1)
    }

    #[test]
    fn process_noise_zero_for_inert_network() {
        let crn = test_models::inert();
        let q = process_noise_cov(&crn, &DVector::from_vec(vec![1.0, 2.0]), 0.01).unwrap();
        assert!(q.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn process_noise_birth_death_hand_value() {
        // V = [1, -1], propensities (10, 5), delta 0.01:
        // Q = 0.01 * (1*10*1 + (-1)*5*(-1)) = 0.15.
        let crn = birth_death();
        let q = process_noise_cov(&crn, &DVector::from_vec(vec![50.0]), 0.01).unwrap();
        assert_relative_eq!(q[(0, 0)], 0.15, max_relative = 1e-14);
    }

    #[test]
    fn process_noise_matches_dense_triple_product_oracle() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..40 {
            let crn = test_models::random_crn(4, 6, &mut rng);
            let x = DVector::from_fn(4, |_, _| rng.gen_range(0.0..100.0));
            let delta = rng.gen_range(1e-4..0.05);
            let q = process_noise_cov(&crn, &x, delta).unwrap();
            let a = crn.propensities(&x).unwrap();
            let v = crn.stoichiometry();
            // Explicit triple product, entry by entry.
            let mut expected = DMatrix::zeros(4, 4);
            for i in 0..4 {
                for l in 0..4 {
                    let mut acc = 0.0;
                    for j in 0..crn.n_reactions() {
                        acc += v[(i, j)] * a[j] * v[(l, j)];
                    }
                    expected[(i, l)] = delta * acc;
                }
            }
            let scale = spectral_norm(&expected).max(1e-30);
            assert!(spectral_norm(&(&q - &expected)) <= 1e-12 * scale);
        }
    }

    #[test]
    fn process_noise_q0_override_scales() {
        let crn = birth_death();
        let x = DVector::from_vec(vec![50.0]);
        let q_default = process_noise_cov(&crn, &x, 0.01).unwrap();
        let q0 = DMatrix::identity(2, 2) * 4.0;
        let q_scaled = process_noise_cov_with(&crn, &x, 0.01, Some(&q0)).unwrap();
        assert_relative_eq!(q_scaled[(0, 0)], 4.0 * q_default[(0, 0)], max_relative = 1e-13);
    }

    #[test]
    fn predict_identity_for_inert_network() {
        let crn = test_models::inert();
        let state = FilterState::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 4.0])),
        )
        .unwrap();
        let pred = predict(&state, &crn, 0.1).unwrap();
        assert_eq!(pred.prior_mean, state.mean);
        assert_eq!(pred.jacobian, DMatrix::identity(2, 2));
        assert_eq!(pred.prior_cov, state.cov);
        assert!(pred.process_noise.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predict_small_delta_limit() {
        let crn = birth_death();
        let state = FilterState::new(
            DVector::from_vec(vec![50.0]),
            DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        let pred = predict(&state, &crn, 1e-12).unwrap();
        assert!((pred.jacobian[(0, 0)] - 1.0).abs() < 1e-9);
        assert!(pred.process_noise[(0, 0)].abs() < 1e-9);
        assert_relative_eq!(pred.prior_cov[(0, 0)], 2.0, max_relative = 1e-9);
    }

    /// Two-species linear cascade: production, conversion, degradation.
    /// All propensities are affine, so the EKF must coincide with a plain
    /// linear Kalman filter.
    fn linear_cascade() -> Crn {
        Crn::new(
            vec!["a".into(), "b".into()],
            vec![
                Reaction::new(6.0, vec![]),
                Reaction::new(0.4, vec![Factor::SpeciesValue(0)]),
                Reaction::new(0.2, vec![Factor::SpeciesValue(1)]),
            ],
            DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, 0.0, 1.0, -1.0]),
        )
        .unwrap()
    }

    #[test]
    fn matches_hand_rolled_linear_kalman_filter() {
        let crn = linear_cascade();
        let delta = 0.01;
        let x0 = DVector::from_vec(vec![15.0, 30.0]);
        let traj = sim::simulate(&crn, &x0, delta, 400, 5).unwrap();
        let model = MeasurementModel::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
            DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        let series = sim::measure(&traj, &model, 5).unwrap();

        let init_mean = DVector::from_vec(vec![10.0, 10.0]);
        let init_cov = DMatrix::identity(2, 2) * 9.0;
        let records = run(
            &crn,
            &series,
            &model,
            FilterState::new(init_mean.clone(), init_cov.clone()).unwrap(),
            delta,
        )
        .unwrap();

        // Hand-rolled linear KF: constant F from the affine rates, explicit
        // inverse for the gain, Q rebuilt from the propensity formula.
        let v = crn.stoichiometry();
        let jac = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.4, 0.0, 0.0, 0.2]);
        let f_mat = DMatrix::identity(2, 2) + delta * v * &jac;
        let mut mean = init_mean;
        let mut cov = init_cov;
        for (k, rec) in records.iter().enumerate() {
            let a = crn.propensities(&mean).unwrap();
            let q = delta * v * DMatrix::from_diagonal(&a) * v.transpose();
            let prior_mean = &mean + delta * v * &a;
            let prior_cov = &f_mat * &cov * f_mat.transpose() + &q;
            let s = &model.c * &prior_cov * model.c.transpose() + &model.r;
            let k_gain = &prior_cov * model.c.transpose() * s.try_inverse().unwrap();
            let innov = series.at(k + 1) - &model.c * &prior_mean;
            mean = &prior_mean + &k_gain * &innov;
            cov = (DMatrix::identity(2, 2) - &k_gain * &model.c) * &prior_cov;

            assert_relative_eq!(rec.posterior.mean, mean, max_relative = 1e-10);
            let scale = spectral_norm(&cov).max(1e-30);
            assert!(spectral_norm(&(&rec.posterior.cov - &cov)) <= 1e-10 * scale);
        }
    }

    #[test]
    fn near_uninformative_measurement_leaves_prior() {
        let prior_mean = DVector::from_vec(vec![3.0, -1.0]);
        let prior_cov = DMatrix::identity(2, 2) * 2.0;
        let pred = Prediction {
            from_step: 0,
            prior_mean: prior_mean.clone(),
            prior_cov: prior_cov.clone(),
            jacobian: DMatrix::identity(2, 2),
            process_noise: DMatrix::zeros(2, 2),
        };
        let model = MeasurementModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 1e9,
        )
        .unwrap();
        let y = DVector::from_vec(vec![100.0, 100.0]);
        let rec = correct(&pred, &y, &model).unwrap();
        assert!(spectral_norm(&rec.gain) < 1e-6);
        assert_relative_eq!(rec.posterior.mean, prior_mean, max_relative = 1e-6);
        let scale = spectral_norm(&prior_cov);
        assert!(spectral_norm(&(&rec.posterior.cov - &prior_cov)) <= 1e-6 * scale);
    }

    #[test]
    fn symmetric_scalar_case_halves() {
        let pred = Prediction {
            from_step: 0,
            prior_mean: DVector::zeros(2),
            prior_cov: DMatrix::identity(2, 2),
            jacobian: DMatrix::identity(2, 2),
            process_noise: DMatrix::zeros(2, 2),
        };
        let model =
            MeasurementModel::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2)).unwrap();
        let rec = correct(&pred, &DVector::from_vec(vec![1.0, 1.0]), &model).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expected = if i == j { 0.5 } else { 0.0 };
                assert_relative_eq!(rec.gain[(i, j)], expected, epsilon = 1e-14);
                assert_relative_eq!(rec.posterior.cov[(i, j)], expected, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn gain_matches_information_form_on_random_spd_instances() {
        let mut rng = StdRng::seed_from_u64(61);
        for _ in 0..200 {
            let n = rng.gen_range(1..5);
            let p = rng.gen_range(1..=n);
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
            let mut prior_cov = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
            symmetrize(&mut prior_cov);
            let b = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
            let mut r = &b * b.transpose() + DMatrix::identity(p, p) * 0.5;
            symmetrize(&mut r);
            let c = DMatrix::from_fn(p, n, |_, _| rng.gen_range(-1.0..1.0));
            let model = MeasurementModel::new(c, r.clone()).unwrap();
            let pred = Prediction {
                from_step: 0,
                prior_mean: DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0)),
                prior_cov,
                jacobian: DMatrix::identity(n, n),
                process_noise: DMatrix::zeros(n, n),
            };
            let y = DVector::from_fn(p, |_, _| rng.gen_range(-5.0..5.0));
            let rec = correct(&pred, &y, &model).unwrap();
            // Information form K = P^+ C^T R^{-1}.
            let info = &rec.posterior.cov * model.c.transpose() * r.try_inverse().unwrap();
            let scale = spectral_norm(&rec.gain).max(1e-30);
            assert!(
                spectral_norm(&(&rec.gain - &info)) <= 1e-8 * scale,
                "information-form identity violated"
            );
        }
    }

    #[test]
    fn empty_measurement_series_is_a_no_op() {
        let crn = birth_death();
        let series = MeasurementSeries {
            values: DMatrix::zeros(0, 1),
            seed: 0,
        };
        let model =
            MeasurementModel::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1)).unwrap();
        let init = FilterState::new(
            DVector::from_vec(vec![42.0]),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let records = run(&crn, &series, &model, init.clone(), 0.01).unwrap();
        assert!(records.is_empty());
    }

    #[test]
    fn noise_free_linear_run_converges_to_truth() {
        let crn = linear_cascade();
        let delta = 0.01;
        let x0 = DVector::from_vec(vec![15.0, 30.0]);
        let traj = sim::simulate_with(&crn, &x0, delta, 500, 0, |_, w| w.fill(0.0)).unwrap();
        let model = MeasurementModel::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 1e-8,
        )
        .unwrap();
        let series = sim::measure_with(&traj, &model, 0, |_, v| v.fill(0.0)).unwrap();
        let init = FilterState::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DMatrix::identity(2, 2) * 100.0,
        )
        .unwrap();
        let final_state = run_with(&crn, &series, &model, init, delta, |_| {}).unwrap();
        let err = (&final_state.mean - traj.state_at(500)).norm();
        assert!(err < 1e-3 * 30.0, "terminal error {err}");
    }

    #[test]
    fn posterior_stays_symmetric_and_psd() {
        let crn = linear_cascade();
        let delta = 0.01;
        let x0 = DVector::from_vec(vec![15.0, 30.0]);
        let traj = sim::simulate(&crn, &x0, delta, 2000, 8).unwrap();
        let model = MeasurementModel::new(
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DMatrix::from_element(1, 1, 4.0),
        )
        .unwrap();
        let series = sim::measure(&traj, &model, 8).unwrap();
        let init = FilterState::new(
            DVector::from_vec(vec![5.0, 5.0]),
            DMatrix::identity(2, 2) * 25.0,
        )
        .unwrap();
        run_with(&crn, &series, &model, init, delta, |rec| {
            let cov = &rec.posterior.cov;
            assert_eq!(cov[(0, 1)], cov[(1, 0)]);
            let min_eig = cov
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |acc, &l| acc.min(l));
            assert!(min_eig >= -1e-10, "step {}: min eig {min_eig}", rec.step);
        })
        .unwrap();
    }

    #[test]
    fn csv_layout_matches_documented_header() {
        let crn = birth_death();
        let delta = 0.01;
        let traj = sim::simulate(&crn, &DVector::from_vec(vec![50.0]), delta, 5, 2).unwrap();
        let model =
            MeasurementModel::new(DMatrix::identity(1, 1), DMatrix::from_element(1, 1, 2.0))
                .unwrap();
        let series = sim::measure(&traj, &model, 2).unwrap();
        let init = FilterState::new(
            DVector::from_vec(vec![45.0]),
            DMatrix::from_element(1, 1, 10.0),
        )
        .unwrap();
        let records = run(&crn, &series, &model, init, delta).unwrap();
        let mut buf = Vec::new();
        write_records_csv(&records, delta, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "k,t,xhat_1,trace_P,norm_P,norm_Q,innov_1"
        );
        assert_eq!(lines.count(), 5);
    }

    #[test]
    fn binary_dump_round_trips() {
        let crn = birth_death();
        let delta = 0.01;
        let traj = sim::simulate(&crn, &DVector::from_vec(vec![50.0]), delta, 3, 2).unwrap();
        let model =
            MeasurementModel::new(DMatrix::identity(1, 1), DMatrix::from_element(1, 1, 2.0))
                .unwrap();
        let series = sim::measure(&traj, &model, 2).unwrap();
        let init = FilterState::new(
            DVector::from_vec(vec![45.0]),
            DMatrix::from_element(1, 1, 10.0),
        )
        .unwrap();
        let records = run(&crn, &series, &model, init, delta).unwrap();
        let mut buf = Vec::new();
        write_records_bin(&records, &mut buf).unwrap();
        assert_eq!(&buf[0..8], b"CLEEKF01");
        let read_u64 = |off: usize| u64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
        assert_eq!(read_u64(8), 1); // n
        assert_eq!(read_u64(16), 1); // p
        assert_eq!(read_u64(24), 3); // count
        // First record: step index then prior mean.
        assert_eq!(read_u64(32), 1);
        let prior_mean_0 = f64::from_le_bytes(buf[40..48].try_into().unwrap());
        assert_eq!(prior_mean_0, records[0].prior_mean[0]);
        // Fixed-size records: 8 + 8 * (n + 3n^2 + np + p + n + n^2) bytes each.
        let per_record = 8 + 8 * (1 + 3 + 1 + 1 + 1 + 1);
        assert_eq!(buf.len(), 32 + 3 * per_record);
    }
}
