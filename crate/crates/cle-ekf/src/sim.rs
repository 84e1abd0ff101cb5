//! Ground-truth trajectories from the discrete Langevin dynamics
//! (Euler-Maruyama) and noisy linear measurements of them.
//!
//! Every random draw comes from a counter-based generator keyed by
//! `(seed, step)`: the noise consumed at step `k` is a pure function of the
//! seed and `k`, independent of how many steps were generated before it.
//! Ensemble runs therefore parallelize without any sequence coupling, and
//! identical inputs reproduce bit-identical trajectories.
//!
//! States are deliberately *not* clamped to stay nonnegative; only the
//! propensities are (see [`crate::crn`]). Clamping states would bias the
//! error statistics the filter is judged on, so the raw dynamics are kept.

use std::io::{self, Write};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::crn::{check_delta, Crn};
use crate::error::{Error, Result};
use crate::util::full_precision;

/// Keystream id for process noise `w_k`.
const PROCESS_STREAM: u64 = 1;
/// Keystream id for measurement noise `v_k`.
const MEASUREMENT_STREAM: u64 = 2;

/// Counter-based standard-normal source.
///
/// `ChaCha12` is keyed by the seed, the stream id separates independent
/// purposes (process vs measurement noise), and the keystream position is
/// set from the step counter before each block of draws. Draws use
/// Box-Muller with a fixed consumption of two `u64`s per normal, so the
/// draw for step `k` never depends on previous calls.
pub struct NoiseSource {
    rng: ChaCha12Rng,
    words_per_step: u128,
    draws_per_step: usize,
}

impl NoiseSource {
    pub fn new(seed: u64, stream: u64, draws_per_step: usize) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NoiseSource {
            rng,
            // 2 u64 = 4 keystream words per normal draw.
            words_per_step: 4 * draws_per_step as u128,
            draws_per_step,
        }
    }

    /// The process-noise stream used by [`simulate`].
    pub fn process(seed: u64, draws_per_step: usize) -> Self {
        NoiseSource::new(seed, PROCESS_STREAM, draws_per_step)
    }

    /// The measurement-noise stream used by [`measure`].
    pub fn measurement(seed: u64, draws_per_step: usize) -> Self {
        NoiseSource::new(seed, MEASUREMENT_STREAM, draws_per_step)
    }

    /// Fill `out` with the standard normals assigned to `step`.
    pub fn fill_standard_normals(&mut self, step: u64, out: &mut [f64]) {
        assert!(
            out.len() <= self.draws_per_step,
            "noise source sized for {} draws per step, asked for {}",
            self.draws_per_step,
            out.len()
        );
        self.rng.set_word_pos(u128::from(step) * self.words_per_step);
        for z in out.iter_mut() {
            *z = standard_normal(&mut self.rng);
        }
    }
}

/// Box-Muller from two uniforms; consumes exactly two `u64`s.
fn standard_normal(rng: &mut impl RngCore) -> f64 {
    const SCALE: f64 = 1.0 / 9007199254740992.0; // 2^-53
    let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) * SCALE; // (0, 1]
    let u2 = (rng.next_u64() >> 11) as f64 * SCALE; // [0, 1)
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// A simulated state history: row `k` is the state at time `k * delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub delta: f64,
    /// `(steps + 1) x n`; row 0 is the initial condition.
    pub states: DMatrix<f64>,
    pub seed: u64,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.nrows() - 1
    }

    pub fn state_at(&self, k: usize) -> DVector<f64> {
        self.states.row(k).transpose()
    }
}

/// Linear measurement map `y = C x + v`, `v ~ N(0, R)`.
#[derive(Clone, Debug)]
pub struct MeasurementModel {
    pub c: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl MeasurementModel {
    /// Validate that `R` is symmetric positive definite and shaped `p x p`
    /// for a `p x n` output map.
    pub fn new(c: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let p = c.nrows();
        if p == 0 || c.ncols() == 0 {
            return Err(Error::InvalidModel("measurement map C is empty".into()));
        }
        if r.nrows() != p || r.ncols() != p {
            return Err(Error::DimensionMismatch {
                context: "measurement noise covariance R",
                expected: p,
                actual: r.nrows(),
            });
        }
        let asym = (&r - r.transpose()).abs().max();
        if asym > 1e-12 * r.abs().max().max(1.0) {
            return Err(Error::InvalidModel("R is not symmetric".into()));
        }
        if Cholesky::new(r.clone()).is_none() {
            return Err(Error::InvalidModel("R is not positive definite".into()));
        }
        Ok(MeasurementModel { c, r })
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.c.ncols()
    }

    /// Spectral norm of `R`, for checking declared bounds `r_lb <= ||R|| <= r_ub`.
    pub fn noise_norm(&self) -> f64 {
        crate::crn::spectral_norm(&self.r)
    }
}

/// Measurements `y_1 .. y_steps`; row `k - 1` observes state row `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementSeries {
    /// `steps x p`.
    pub values: DMatrix<f64>,
    pub seed: u64,
}

impl MeasurementSeries {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    /// Measurement taken at step `k` (1-based).
    pub fn at(&self, k: usize) -> DVector<f64> {
        self.values.row(k - 1).transpose()
    }
}

/// Euler-Maruyama simulation of the discrete Langevin dynamics:
/// `x_{k+1} = x_k + delta * V * A(x_k) + sqrt(delta) * V * diag(sqrt(a_j)) * w_k`
/// with `w_k ~ N(0, I_m)` drawn per `(seed, k)`.
pub fn simulate(
    crn: &Crn,
    x0: &DVector<f64>,
    delta: f64,
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    let mut noise = NoiseSource::new(seed, PROCESS_STREAM, crn.n_reactions());
    simulate_with(crn, x0, delta, steps, seed, |k, out| {
        noise.fill_standard_normals(k, out)
    })
}

/// Simulation with caller-supplied noise; `noise(k, w)` fills the step-`k`
/// draws. Passing a closure that zeroes `w` recovers the deterministic
/// Euler iteration exactly.
pub fn simulate_with(
    crn: &Crn,
    x0: &DVector<f64>,
    delta: f64,
    steps: usize,
    seed: u64,
    mut noise: impl FnMut(u64, &mut [f64]),
) -> Result<Trajectory> {
    check_delta(delta)?;
    if steps == 0 {
        return Err(Error::InvalidParameter {
            name: "steps",
            reason: "must be at least 1".into(),
        });
    }
    let n = crn.n_species();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            context: "simulate initial state",
            expected: n,
            actual: x0.len(),
        });
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteState { step: 0 });
    }

    let m = crn.n_reactions();
    let mut states = DMatrix::zeros(steps + 1, n);
    states.row_mut(0).tr_copy_from(x0);
    let mut x = x0.clone();
    let mut w = vec![0.0_f64; m];
    let mut update = DVector::zeros(m);
    for k in 0..steps {
        noise(k as u64, &mut w);
        em_step(crn, &mut x, delta, &w, &mut update)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { step: k + 1 });
        }
        states.row_mut(k + 1).tr_copy_from(&x);
    }
    Ok(Trajectory {
        delta,
        states,
        seed,
    })
}

/// One in-place Euler-Maruyama update with the given standard-normal draws.
/// The combined per-channel increment `delta * a_j + sqrt(delta * a_j) * w_j`
/// applies drift and diffusion in a single stoichiometry multiply.
pub(crate) fn em_step(
    crn: &Crn,
    x: &mut DVector<f64>,
    delta: f64,
    w: &[f64],
    update: &mut DVector<f64>,
) -> Result<()> {
    let a = crn.propensities(x)?;
    for j in 0..crn.n_reactions() {
        update[j] = delta * a[j] + (delta * a[j]).sqrt() * w[j];
    }
    x.gemv(1.0, crn.stoichiometry(), update, 1.0);
    Ok(())
}

/// Observe a trajectory: `y_k = C x_k + v_k`, `v_k ~ N(0, R)`, for
/// `k = 1..=steps`, with `v_k` drawn per `(seed, k)`.
pub fn measure(traj: &Trajectory, model: &MeasurementModel, seed: u64) -> Result<MeasurementSeries> {
    let p = model.n_outputs();
    let chol = Cholesky::new(model.r.clone()).ok_or(Error::SingularInnovation)?;
    let l = chol.l();
    let mut noise = NoiseSource::new(seed, MEASUREMENT_STREAM, p);
    let mut z = DVector::zeros(p);
    measure_with(traj, model, seed, |k, v| {
        noise.fill_standard_normals(k, z.as_mut_slice());
        v.gemv(1.0, &l, &z, 0.0);
    })
}

/// Measurement with caller-supplied noise; `noise(k, v)` must write the
/// additive noise vector for step `k` into `v`.
pub fn measure_with(
    traj: &Trajectory,
    model: &MeasurementModel,
    seed: u64,
    mut noise: impl FnMut(u64, &mut DVector<f64>),
) -> Result<MeasurementSeries> {
    let n = traj.states.ncols();
    if model.n_states() != n {
        return Err(Error::DimensionMismatch {
            context: "measurement map C columns",
            expected: n,
            actual: model.n_states(),
        });
    }
    let steps = traj.steps();
    let p = model.n_outputs();
    let mut values = DMatrix::zeros(steps, p);
    let mut v = DVector::zeros(p);
    let mut y = DVector::zeros(p);
    for k in 1..=steps {
        let x = traj.state_at(k);
        noise(k as u64, &mut v);
        y.gemv(1.0, &model.c, &x, 0.0);
        y += &v;
        values.row_mut(k - 1).tr_copy_from(&y);
    }
    Ok(MeasurementSeries {
        values,
        seed,
    })
}

/// Write a trajectory as CSV: header `t,<species...>`, time column `k * delta`,
/// 17 significant digits throughout.
pub fn write_trajectory_csv<W: Write>(
    traj: &Trajectory,
    species: &[String],
    out: &mut W,
) -> io::Result<()> {
    write!(out, "t")?;
    for s in species {
        write!(out, ",{s}")?;
    }
    writeln!(out)?;
    for k in 0..traj.states.nrows() {
        write!(out, "{}", full_precision(k as f64 * traj.delta))?;
        for v in traj.states.row(k).iter() {
            write!(out, ",{}", full_precision(*v))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Write measurements as CSV: header `t,y1..yp`, time column `k * delta`
/// starting at `k = 1`.
pub fn write_measurements_csv<W: Write>(
    series: &MeasurementSeries,
    delta: f64,
    out: &mut W,
) -> io::Result<()> {
    write!(out, "t")?;
    for j in 1..=series.values.ncols() {
        write!(out, ",y{j}")?;
    }
    writeln!(out)?;
    for k in 1..=series.values.nrows() {
        write!(out, "{}", full_precision(k as f64 * delta))?;
        for v in series.values.row(k - 1).iter() {
            write!(out, ",{}", full_precision(*v))?;
        }
        writeln!(out)?;
    }
    Ok(())
}
