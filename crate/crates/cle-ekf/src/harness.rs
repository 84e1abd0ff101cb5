//! The gene-expression benchmark network and Monte Carlo experiment
//! machinery: simulate ground truth, measure it, filter it, and aggregate
//! error statistics across an ensemble of independent runs.
//!
//! Runs execute concurrently (under the `parallel` feature) and are
//! combined by a pairwise reduction whose tree shape is fixed by run
//! indices, so the aggregated metrics are bit-identical no matter how many
//! workers participate.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::crn::{spectral_norm, Crn, Factor, Reaction};
use crate::error::{Error, Result};
use crate::filter::{self, FilterState, StepRecord};
use crate::sim::{self, MeasurementModel, MeasurementSeries, NoiseSource, Trajectory};
use crate::svg;
use crate::util::full_precision;

/// Names of the four species, in state-vector order.
pub const GENE_SPECIES: [&str; 4] = ["P_o", "T", "R_i", "X"];

/// Rate constants and pools of the four-species expression network:
/// polymerase availability `P_o`, transcript `T`, free ribosome `R_i`, and
/// protein `X`.
///
/// The default values are NOT taken from any publication. They are chosen
/// so the deterministic steady state `(5, 20, 5, 20)` sits comfortably
/// inside the physical box and every relaxation time is a few seconds;
/// every rate is a config field precisely because the benchmark's original
/// constants are not public.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneExpressionParams {
    /// Polymerase release (1/s).
    pub k_up: f64,
    /// Transcription initiation (1/s).
    pub k_tx: f64,
    /// Polymerase binding per unit inducer (1/s).
    pub k_bp: f64,
    /// Ribosome binding to transcript (1/(count*s)).
    pub k_br: f64,
    /// Ribosome unbinding (1/s).
    pub k_ur: f64,
    /// Translation (1/s).
    pub k_tl: f64,
    /// Transcript degradation (1/s).
    pub d_t: f64,
    /// Protein degradation (1/s).
    pub d_x: f64,
    /// Total polymerase pool.
    pub p_tot: f64,
    /// Total ribosome pool.
    pub r_tot: f64,
    /// Constant inducer level `G`.
    pub inducer: f64,
    /// Initial state `(P_o, T, R_i, X)`.
    pub initial: [f64; 4],
}

impl Default for GeneExpressionParams {
    fn default() -> Self {
        GeneExpressionParams {
            k_up: 0.5,
            k_tx: 0.5,
            k_bp: 1.0,
            k_br: 0.05,
            k_ur: 0.5,
            k_tl: 0.5,
            d_t: 0.125,
            d_x: 0.125,
            p_tot: 10.0,
            r_tot: 10.0,
            inducer: 1.0,
            initial: [5.0, 20.0, 5.0, 20.0],
        }
    }
}

impl GeneExpressionParams {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("k_up", self.k_up),
            ("k_tx", self.k_tx),
            ("k_bp", self.k_bp),
            ("k_br", self.k_br),
            ("k_ur", self.k_ur),
            ("k_tl", self.k_tl),
            ("d_t", self.d_t),
            ("d_x", self.d_x),
            ("p_tot", self.p_tot),
            ("r_tot", self.r_tot),
            ("inducer", self.inducer),
        ];
        for (name, v) in rates {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be nonnegative and finite, got {v}"),
                });
            }
        }
        if self.initial.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "initial",
                reason: "entries must be nonnegative and finite".into(),
            });
        }
        if self.initial[0] > self.p_tot {
            return Err(Error::InvalidParameter {
                name: "initial",
                reason: format!("P_o = {} exceeds p_tot = {}", self.initial[0], self.p_tot),
            });
        }
        if self.initial[2] > self.r_tot {
            return Err(Error::InvalidParameter {
                name: "initial",
                reason: format!("R_i = {} exceeds r_tot = {}", self.initial[2], self.r_tot),
            });
        }
        Ok(())
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.initial)
    }
}

/// Build the eight-channel gene expression network.
///
/// Channels, with their propensities and state changes `(P_o, T, R_i, X)`:
///
/// | # | propensity              | change          |
/// |---|-------------------------|-----------------|
/// | 1 | `k_bp * G * P_o`        | `(-1, 0, 0, 0)` |
/// | 2 | `k_up * (P_tot - P_o)`  | `(+1, 0, 0, 0)` |
/// | 3 | `k_tx * (P_tot - P_o)`  | `(+1, +1, 0, 0)`|
/// | 4 | `k_br * T * R_i`        | `(0, -1, -1, 0)`|
/// | 5 | `k_ur * (R_tot - R_i)`  | `(0, +1, +1, 0)`|
/// | 6 | `k_tl * (R_tot - R_i)`  | `(0, +1, +1, +1)`|
/// | 7 | `d_T * T`               | `(0, -1, 0, 0)` |
/// | 8 | `d_X * X`               | `(0, 0, 0, -1)` |
pub fn gene_expression_model(params: &GeneExpressionParams) -> Result<Crn> {
    params.validate()?;
    let species = GENE_SPECIES.iter().map(|s| s.to_string()).collect();
    let p_tot = params.p_tot;
    let r_tot = params.r_tot;
    let reactions = vec![
        Reaction::new(params.k_bp * params.inducer, vec![Factor::SpeciesValue(0)]),
        Reaction::new(params.k_up, vec![Factor::Complement { total: p_tot, species: 0 }]),
        Reaction::new(params.k_tx, vec![Factor::Complement { total: p_tot, species: 0 }]),
        Reaction::new(
            params.k_br,
            vec![Factor::SpeciesValue(1), Factor::SpeciesValue(2)],
        ),
        Reaction::new(params.k_ur, vec![Factor::Complement { total: r_tot, species: 2 }]),
        Reaction::new(params.k_tl, vec![Factor::Complement { total: r_tot, species: 2 }]),
        Reaction::new(params.d_t, vec![Factor::SpeciesValue(1)]),
        Reaction::new(params.d_x, vec![Factor::SpeciesValue(3)]),
    ];
    #[rustfmt::skip]
    let stoich = DMatrix::from_row_slice(4, 8, &[
        -1.0, 1.0, 1.0,  0.0, 0.0, 0.0,  0.0,  0.0,
         0.0, 0.0, 1.0, -1.0, 1.0, 1.0, -1.0,  0.0,
         0.0, 0.0, 0.0, -1.0, 1.0, 1.0,  0.0,  0.0,
         0.0, 0.0, 0.0,  0.0, 0.0, 1.0,  0.0, -1.0,
    ]);
    Crn::new(species, reactions, stoich)
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

/// Which network an experiment runs on.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ModelRef {
    /// The built-in gene expression network.
    #[serde(rename = "gene_expression")]
    GeneExpression(GeneExpressionParams),
    /// A model JSON file plus the initial truth state.
    #[serde(rename = "file")]
    File { path: PathBuf, initial: Vec<f64> },
}

impl Default for ModelRef {
    fn default() -> Self {
        ModelRef::GeneExpression(GeneExpressionParams::default())
    }
}

impl ModelRef {
    /// Resolve to a network and initial state.
    pub fn build(&self) -> Result<(Crn, DVector<f64>)> {
        match self {
            ModelRef::GeneExpression(params) => {
                Ok((gene_expression_model(params)?, params.initial_state()))
            }
            ModelRef::File { path, initial } => {
                let text = fs::read_to_string(path)?;
                let crn = Crn::from_json(&text)?;
                if initial.len() != crn.n_species() {
                    return Err(Error::DimensionMismatch {
                        context: "model initial state",
                        expected: crn.n_species(),
                        actual: initial.len(),
                    });
                }
                Ok((crn, DVector::from_row_slice(initial)))
            }
        }
    }
}

/// Measurement model as plain nested arrays (JSON-friendly).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeasurementSpec {
    pub c: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

impl MeasurementSpec {
    pub fn build(&self) -> Result<MeasurementModel> {
        MeasurementModel::new(matrix_from_rows(&self.c, "C")?, matrix_from_rows(&self.r, "R")?)
    }
}

/// Filter initialization as plain arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilterInitSpec {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl FilterInitSpec {
    pub fn build(&self) -> Result<FilterState> {
        FilterState::new(
            DVector::from_row_slice(&self.mean),
            matrix_from_rows(&self.cov, "P0")?,
        )
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], name: &'static str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::InvalidParameter {
            name,
            reason: "matrix has no rows".into(),
        });
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidParameter {
            name,
            reason: "matrix rows must be nonempty and equally sized".into(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// Full description of one Monte Carlo experiment.
///
/// The default value is the desk-scale reproduction setup: 100 runs of the
/// gene expression network over an 80 s horizon at `delta = 5e-4` (run with
/// `horizon = 800` for the full-length version), measuring `T` and `X` with
/// noise covariance `diag(12.5, 12.5)` — the midpoint of the declared
/// `[10, 15]` band.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelRef,
    /// Filter sampling period (s).
    pub delta: f64,
    /// Simulated horizon (s); must be an integral number of steps.
    pub horizon: f64,
    /// Ensemble size.
    pub runs: usize,
    /// Base seed; run `r` uses `seed + r`.
    pub seed: u64,
    /// Ground-truth substeps per filter step (truth integrates at
    /// `delta / truth_substeps`). Default 1: truth and filter share `delta`.
    pub truth_substeps: usize,
    pub measurement: MeasurementSpec,
    pub filter_init: FilterInitSpec,
    /// Where the experiment command writes artifacts.
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelRef::default(),
            delta: 5e-4,
            horizon: 80.0,
            runs: 100,
            seed: 73,
            truth_substeps: 1,
            measurement: MeasurementSpec {
                c: vec![vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 1.0]],
                r: vec![vec![12.5, 0.0], vec![0.0, 12.5]],
            },
            filter_init: FilterInitSpec {
                mean: vec![8.0, 12.0, 8.0, 12.0],
                cov: vec![
                    vec![25.0, 0.0, 0.0, 0.0],
                    vec![0.0, 25.0, 0.0, 0.0],
                    vec![0.0, 0.0, 25.0, 0.0],
                    vec![0.0, 0.0, 0.0, 25.0],
                ],
            },
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Number of filter steps implied by horizon and delta.
    pub fn steps(&self) -> Result<usize> {
        crate::crn::check_delta(self.delta)?;
        let ratio = self.horizon / self.delta;
        let rounded = ratio.round();
        if rounded < 1.0 || (ratio - rounded).abs() > 1e-6 * rounded.max(1.0) {
            return Err(Error::InvalidParameter {
                name: "horizon",
                reason: format!(
                    "horizon {} is not an integral number of steps of delta {}",
                    self.horizon, self.delta
                ),
            });
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.steps()?;
        if self.runs == 0 {
            return Err(Error::InvalidParameter {
                name: "runs",
                reason: "need at least one run".into(),
            });
        }
        if self.truth_substeps == 0 {
            return Err(Error::InvalidParameter {
                name: "truth_substeps",
                reason: "need at least one substep".into(),
            });
        }
        let (crn, x0) = self.model.build()?;
        let model = self.measurement.build()?;
        if model.n_states() != crn.n_species() {
            return Err(Error::DimensionMismatch {
                context: "measurement map C columns",
                expected: crn.n_species(),
                actual: model.n_states(),
            });
        }
        let init = self.filter_init.build()?;
        if init.mean.len() != crn.n_species() {
            return Err(Error::DimensionMismatch {
                context: "filter initial mean",
                expected: crn.n_species(),
                actual: init.mean.len(),
            });
        }
        if x0.len() != crn.n_species() {
            return Err(Error::DimensionMismatch {
                context: "initial truth state",
                expected: crn.n_species(),
                actual: x0.len(),
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Single-run metrics and the ensemble reduction
// ---------------------------------------------------------------------------

/// Per-step series from one run: squared error norm, `||P_k||`, `||Q_k||`,
/// indexed `k = 0..=steps` (`Q` at `k` is evaluated at the posterior
/// estimate of step `k`).
#[derive(Clone, Debug, PartialEq)]
pub struct RunSeries {
    pub sq_err: Vec<f64>,
    pub p_norm: Vec<f64>,
    pub q_norm: Vec<f64>,
}

impl RunSeries {
    fn zeros(len: usize) -> Self {
        RunSeries {
            sq_err: vec![0.0; len],
            p_norm: vec![0.0; len],
            q_norm: vec![0.0; len],
        }
    }

    fn add(&mut self, other: &RunSeries) {
        for (a, b) in self.sq_err.iter_mut().zip(&other.sq_err) {
            *a += b;
        }
        for (a, b) in self.p_norm.iter_mut().zip(&other.p_norm) {
            *a += b;
        }
        for (a, b) in self.q_norm.iter_mut().zip(&other.q_norm) {
            *a += b;
        }
    }
}

/// Ensemble means per step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnsembleMetrics {
    pub delta: f64,
    pub runs: usize,
    /// `E ||x_k - xhat_k||^2`.
    pub mse: Vec<f64>,
    /// Mean `||P_k||`.
    pub p_norm: Vec<f64>,
    /// Mean `||Q_k||`.
    pub q_norm: Vec<f64>,
}

struct RunSetup {
    crn: Crn,
    x0: DVector<f64>,
    model: MeasurementModel,
    init: FilterState,
    meas_chol: DMatrix<f64>,
    delta: f64,
    steps: usize,
    truth_substeps: usize,
}

impl RunSetup {
    fn from_config(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (crn, x0) = config.model.build()?;
        let model = config.measurement.build()?;
        let init = config.filter_init.build()?;
        let meas_chol = Cholesky::new(model.r.clone())
            .ok_or(Error::SingularInnovation)?
            .l();
        Ok(RunSetup {
            crn,
            x0,
            model,
            init,
            meas_chol,
            delta: config.delta,
            steps: config.steps()?,
            truth_substeps: config.truth_substeps,
        })
    }
}

/// One simulate–measure–filter run, streamed step by step so nothing of
/// trajectory length is retained. Noise is drawn from the same keyed
/// streams as [`sim::simulate`] and [`sim::measure`], so composing those
/// with [`run_metrics`] reproduces this function bit for bit.
fn run_single(setup: &RunSetup, seed: u64) -> Result<RunSeries> {
    let crn = &setup.crn;
    let m = crn.n_reactions();
    let p = setup.model.n_outputs();
    let substeps = setup.truth_substeps;
    let truth_delta = setup.delta / substeps as f64;

    let mut process_noise = NoiseSource::process(seed, m);
    let mut measurement_noise = NoiseSource::measurement(seed, p);
    let mut w = vec![0.0_f64; m];
    let mut update = DVector::zeros(m);
    let mut z = DVector::zeros(p);
    let mut v = DVector::zeros(p);
    let mut y = DVector::zeros(p);

    let mut x = setup.x0.clone();
    let mut state = setup.init.clone();
    let mut series = RunSeries::zeros(setup.steps + 1);
    series.sq_err[0] = (&x - &state.mean).norm_squared();
    series.p_norm[0] = spectral_norm(&state.cov);

    for k in 1..=setup.steps {
        for sub in 0..substeps {
            let counter = ((k - 1) * substeps + sub) as u64;
            process_noise.fill_standard_normals(counter, &mut w);
            sim::em_step(crn, &mut x, truth_delta, &w, &mut update).map_err(|e| e.at_step(k))?;
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { step: k });
        }
        measurement_noise.fill_standard_normals(k as u64, z.as_mut_slice());
        v.gemv(1.0, &setup.meas_chol, &z, 0.0);
        y.gemv(1.0, &setup.model.c, &x, 0.0);
        y += &v;

        let prediction = filter::predict(&state, crn, setup.delta).map_err(|e| e.at_step(k))?;
        series.q_norm[k - 1] = spectral_norm(&prediction.process_noise);
        let record = filter::correct(&prediction, &y, &setup.model).map_err(|e| e.at_step(k))?;
        state = record.posterior;
        series.sq_err[k] = (&x - &state.mean).norm_squared();
        series.p_norm[k] = spectral_norm(&state.cov);
    }
    let q_final = filter::process_noise_cov(crn, &state.mean, setup.delta)?;
    series.q_norm[setup.steps] = spectral_norm(&q_final);
    Ok(series)
}

/// Compute the same per-run series from fully materialized artifacts
/// (a trajectory and its measurements). Exists so runs can be composed from
/// the public simulate/measure/filter pieces and cross-checked against the
/// streaming path.
pub fn run_metrics(
    crn: &Crn,
    traj: &Trajectory,
    measurements: &MeasurementSeries,
    model: &MeasurementModel,
    init: FilterState,
    delta: f64,
) -> Result<RunSeries> {
    let steps = traj.steps();
    if measurements.len() != steps {
        return Err(Error::DimensionMismatch {
            context: "measurement series length",
            expected: steps,
            actual: measurements.len(),
        });
    }
    let mut series = RunSeries::zeros(steps + 1);
    series.sq_err[0] = (&traj.state_at(0) - &init.mean).norm_squared();
    series.p_norm[0] = spectral_norm(&init.cov);
    let final_state = filter::run_with(crn, measurements, model, init, delta, |record| {
        let k = record.step;
        series.q_norm[k - 1] = spectral_norm(&record.process_noise);
        series.sq_err[k] = (&traj.state_at(k) - &record.posterior.mean).norm_squared();
        series.p_norm[k] = spectral_norm(&record.posterior.cov);
    })?;
    let q_final = filter::process_noise_cov(crn, &final_state.mean, delta)?;
    series.q_norm[steps] = spectral_norm(&q_final);
    Ok(series)
}

fn finish(mut total: RunSeries, runs: usize, delta: f64) -> EnsembleMetrics {
    let scale = 1.0 / runs as f64;
    for v in total
        .sq_err
        .iter_mut()
        .chain(total.p_norm.iter_mut())
        .chain(total.q_norm.iter_mut())
    {
        *v *= scale;
    }
    EnsembleMetrics {
        delta,
        runs,
        mse: total.sq_err,
        p_norm: total.p_norm,
        q_norm: total.q_norm,
    }
}

fn leaf(setup: &RunSetup, seeds: &[u64], run: usize) -> Result<RunSeries> {
    run_single(setup, seeds[run]).map_err(|e| Error::RunFailed {
        run,
        source: Box::new(e),
    })
}

fn reduce_sequential(setup: &RunSetup, seeds: &[u64], lo: usize, hi: usize) -> Result<RunSeries> {
    if hi - lo == 1 {
        return leaf(setup, seeds, lo);
    }
    let mid = lo + (hi - lo) / 2;
    let mut left = reduce_sequential(setup, seeds, lo, mid)?;
    let right = reduce_sequential(setup, seeds, mid, hi)?;
    left.add(&right);
    Ok(left)
}

#[cfg(feature = "parallel")]
fn reduce_parallel(setup: &RunSetup, seeds: &[u64], lo: usize, hi: usize) -> Result<RunSeries> {
    if hi - lo == 1 {
        return leaf(setup, seeds, lo);
    }
    let mid = lo + (hi - lo) / 2;
    let (left, right) = rayon::join(
        || reduce_parallel(setup, seeds, lo, mid),
        || reduce_parallel(setup, seeds, mid, hi),
    );
    let mut left = left?;
    left.add(&right?);
    Ok(left)
}

/// Run the experiment with explicit per-run seeds (the ordinary entry
/// points assign `seed + r`). The combine tree is fixed by run index, so
/// the result does not depend on scheduling or worker count.
pub fn run_experiment_with_seeds(
    config: &ExperimentConfig,
    seeds: &[u64],
) -> Result<EnsembleMetrics> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter {
            name: "runs",
            reason: "need at least one run".into(),
        });
    }
    let setup = RunSetup::from_config(config)?;
    #[cfg(feature = "parallel")]
    let total = reduce_parallel(&setup, seeds, 0, seeds.len())?;
    #[cfg(not(feature = "parallel"))]
    let total = reduce_sequential(&setup, seeds, 0, seeds.len())?;
    Ok(finish(total, seeds.len(), config.delta))
}

/// Sequential twin of [`run_experiment`]; always available regardless of
/// features, and bit-identical to the parallel path.
pub fn run_experiment_sequential(config: &ExperimentConfig) -> Result<EnsembleMetrics> {
    let seeds = run_seeds(config);
    let setup = RunSetup::from_config(config)?;
    let total = reduce_sequential(&setup, &seeds, 0, seeds.len())?;
    Ok(finish(total, seeds.len(), config.delta))
}

/// Run the full Monte Carlo experiment described by `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<EnsembleMetrics> {
    run_experiment_with_seeds(config, &run_seeds(config))
}

fn run_seeds(config: &ExperimentConfig) -> Vec<u64> {
    (0..config.runs as u64)
        .map(|r| config.seed.wrapping_add(r))
        .collect()
}

// ---------------------------------------------------------------------------
// Innovation whiteness
// ---------------------------------------------------------------------------

/// Whiteness diagnostics for one output channel.
#[derive(Clone, Debug, Serialize)]
pub struct ChannelWhiteness {
    /// Normalized autocorrelation at lags `1..=max_lag`.
    pub autocorrelation: Vec<f64>,
    /// Ljung-Box portmanteau statistic over those lags.
    pub ljung_box: f64,
    /// Fraction of lags inside the two-sided 95% band `±1.96/sqrt(N)`.
    pub within_band_fraction: f64,
}

/// Innovation whiteness report across channels. Diagnostic only: a
/// consistent filter should keep most lags inside the band, but no
/// threshold is enforced here.
#[derive(Clone, Debug, Serialize)]
pub struct WhitenessReport {
    pub n: usize,
    pub max_lag: usize,
    pub band: f64,
    pub channels: Vec<ChannelWhiteness>,
}

/// Normalized innovation autocorrelations per channel, with a Ljung-Box
/// portmanteau statistic. Needs at least `10 * max_lag` records.
pub fn innovation_whiteness(records: &[StepRecord], max_lag: usize) -> Result<WhitenessReport> {
    if max_lag == 0 {
        return Err(Error::InvalidParameter {
            name: "max_lag",
            reason: "must be at least 1".into(),
        });
    }
    let n = records.len();
    if n < 10 * max_lag {
        return Err(Error::InvalidParameter {
            name: "records",
            reason: format!("need at least {} records for max_lag {max_lag}, got {n}", 10 * max_lag),
        });
    }
    let p = records[0].innovation.len();
    let band = 1.96 / (n as f64).sqrt();
    let mut channels = Vec::with_capacity(p);
    for c in 0..p {
        let z: Vec<f64> = records.iter().map(|r| r.innovation[c]).collect();
        let mean = z.iter().sum::<f64>() / n as f64;
        let denom: f64 = z.iter().map(|v| (v - mean).powi(2)).sum();
        let mut autocorrelation = Vec::with_capacity(max_lag);
        let mut ljung_box = 0.0;
        for lag in 1..=max_lag {
            let num: f64 = (0..n - lag)
                .map(|k| (z[k] - mean) * (z[k + lag] - mean))
                .sum();
            let r = if denom > 0.0 { num / denom } else { 1.0 };
            autocorrelation.push(r);
            ljung_box += r * r / (n - lag) as f64;
        }
        ljung_box *= n as f64 * (n as f64 + 2.0);
        let within = autocorrelation.iter().filter(|r| r.abs() <= band).count();
        channels.push(ChannelWhiteness {
            autocorrelation,
            ljung_box,
            within_band_fraction: within as f64 / max_lag as f64,
        });
    }
    Ok(WhitenessReport {
        n,
        max_lag,
        band,
        channels,
    })
}

// ---------------------------------------------------------------------------
// Experiment artifacts
// ---------------------------------------------------------------------------

/// Write `mse_norm.csv`, `p_norm.csv`, `q_norm.csv` (columns `k,t,value`),
/// and `config_echo.json` into `dir`; with `plot`, also one SVG per series.
/// Returns the paths written.
pub fn write_experiment_outputs(
    metrics: &EnsembleMetrics,
    config: &ExperimentConfig,
    dir: &Path,
    plot: bool,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let series = [
        ("mse_norm", "mean square filter error norm", &metrics.mse),
        ("p_norm", "posterior covariance norm (mean)", &metrics.p_norm),
        ("q_norm", "process noise covariance norm (mean)", &metrics.q_norm),
    ];
    for (name, title, values) in series {
        let path = dir.join(format!("{name}.csv"));
        let mut text = String::from("k,t,value\n");
        for (k, v) in values.iter().enumerate() {
            text.push_str(&format!(
                "{k},{},{}\n",
                full_precision(k as f64 * metrics.delta),
                full_precision(*v)
            ));
        }
        fs::write(&path, text)?;
        written.push(path);
        if plot {
            let pts: Vec<(f64, f64)> = values
                .iter()
                .enumerate()
                .map(|(k, &v)| (k as f64 * metrics.delta, v))
                .collect();
            let path = dir.join(format!("{name}.svg"));
            svg::write_line_plot(
                &path,
                title,
                "t (s)",
                name,
                &[svg::Series { name, points: &pts }],
            )?;
            written.push(path);
        }
    }

    let echo = serde_json::json!({
        "config": config,
        "runs": metrics.runs,
        "steps": metrics.mse.len() - 1,
        "conventions": {
            "propensity_clamping": "propensities are clamped at zero before use in drift, diffusion, and Q; states are never clamped",
            "q_evaluation": "Q_k is evaluated at the posterior estimate of step k",
            "error_definition": "e_k = x_k - xhat_k^+ (posterior)",
        },
    });
    let path = dir.join("config_echo.json");
    fs::write(&path, serde_json::to_string_pretty(&echo)?)?;
    written.push(path);
    Ok(written)
}
