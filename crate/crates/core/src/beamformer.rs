//! Phase-schedule optimization on the complex circle manifold.
//!
//! Each per-sensor objective is the quadratic form `f_j(w) = w^H R_j w` with
//! `R_j` Hermitian PSD; the feasible set is the set of unit-modulus vectors.
//! `riemannian_ascent` maximizes one such form with tangent-space projection,
//! elementwise-normalization retraction, and Armijo backtracking.
//! `bcgd_schedule` cycles over the R sensor objectives, warm-starting each
//! ascent from the previous solution; the phase vector recorded after the
//! t-th sweep becomes time slot t of the schedule.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::crlb::CrlbSurrogate;
use crate::error::{Error, Result};
use crate::geometry::C64;
use crate::scene::{BeamformingSchedule, SensorArray};

/// Complex vector with every entry on the unit circle.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitModulusVector {
    values: DVector<C64>,
}

impl UnitModulusVector {
    /// Wrap a vector, requiring every entry magnitude within 1e-10 of one.
    pub fn new(values: DVector<C64>) -> Result<Self> {
        for (i, z) in values.iter().enumerate() {
            let magnitude = z.norm();
            if (magnitude - 1.0).abs() > 1e-10 {
                return Err(Error::UnitModulus { index: i, magnitude });
            }
        }
        Ok(Self { values })
    }

    /// Build from phase angles in radians.
    pub fn from_phases(phases: &[f64]) -> Self {
        Self {
            values: DVector::from_iterator(
                phases.len(),
                phases.iter().map(|&p| C64::from_polar(1.0, p)),
            ),
        }
    }

    /// All-ones vector (zero phases).
    pub fn ones(len: usize) -> Self {
        Self {
            values: DVector::from_element(len, C64::new(1.0, 0.0)),
        }
    }

    /// Uniform random phases.
    pub fn random<R: Rng>(len: usize, rng: &mut R) -> Self {
        let phases: Vec<f64> = (0..len)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        Self::from_phases(&phases)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }

    pub fn values(&self) -> &DVector<C64> {
        &self.values
    }

    /// Phase angle of each entry, radians in (-pi, pi].
    pub fn phases(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.arg()).collect()
    }

    /// Largest deviation of any entry magnitude from one.
    pub fn feasibility_drift(&self) -> f64 {
        self.values
            .iter()
            .map(|z| (z.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Elementwise normalization back onto the manifold.
fn retract(v: &DVector<C64>) -> DVector<C64> {
    v.map(|z| z / z.norm())
}

/// Hermitian quadratic objective of one sensor, `R_j = B_j ⊙ C^T`.
#[derive(Debug, Clone)]
pub struct SensorObjective {
    /// Hermitian PSD MN x MN matrix.
    pub matrix: DMatrix<C64>,
}

impl SensorObjective {
    pub fn new(matrix: DMatrix<C64>) -> Result<Self> {
        let asym = hermitian_asymmetry(&matrix);
        let scale = matrix.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if asym > 1e-10 * scale.max(1.0) {
            return Err(Error::NotHermitian(asym));
        }
        Ok(Self { matrix })
    }

    /// Objective value w^H R w (real by Hermitian symmetry).
    pub fn value(&self, w: &DVector<C64>) -> f64 {
        let rw = &self.matrix * w;
        w.dotc(&rw).re
    }
}

fn hermitian_asymmetry(m: &DMatrix<C64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Per-sensor SNR objective `R_j = (a_j^H a_j) ⊙ ((A_u x)(A_u x)^H)^T`, where
/// `a_j` is the j-th row of `Xi * A_R` and `source_column = A_u x`. Both
/// factors are rank one, so `R_j` is the outer product `conj(u) u^T` with
/// `u = a_j ⊙ source_column`, and `w^H R_j w = |sum_i u_i w_i|^2` is the
/// received signal power at sensor j.
pub fn build_sensor_objective(
    sensor_index: usize,
    sensor_array: &SensorArray,
    source_column: &DVector<C64>,
) -> Result<SensorObjective> {
    if sensor_index >= sensor_array.sensor_count() {
        return Err(Error::DimensionMismatch(format!(
            "sensor index {sensor_index} out of range 0..{}",
            sensor_array.sensor_count()
        )));
    }
    if source_column.len() != sensor_array.element_count() {
        return Err(Error::DimensionMismatch(format!(
            "source column has {} entries, array has {}",
            source_column.len(),
            sensor_array.element_count()
        )));
    }
    let row = sensor_array.weighted_row(sensor_index);
    let u = DVector::from_fn(row.len(), |i, _| row[i] * source_column[i]);
    let matrix = DMatrix::from_fn(u.len(), u.len(), |p, q| u[p].conj() * u[q]);
    Ok(SensorObjective { matrix })
}

/// Trajectory of one manifold ascent.
#[derive(Debug, Clone)]
pub struct AscentReport {
    /// Objective value at the start and after every accepted step;
    /// non-decreasing.
    pub iterates: Vec<f64>,
    pub final_point: UnitModulusVector,
    /// Line-search backtrack count per accepted step.
    pub step_counts: Vec<usize>,
    /// Riemannian gradient norm at the final point.
    pub final_gradient_norm: f64,
}

impl AscentReport {
    pub fn final_value(&self) -> f64 {
        *self.iterates.last().expect("iterates never empty")
    }
}

/// Largest-magnitude eigenvalue estimate by power iteration; used only to
/// seed the Armijo step size.
fn estimate_spectral_radius(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    // Deterministic start with nonuniform phases so it is not orthogonal to
    // the leading eigenvector in structured cases.
    let mut v = DVector::from_fn(n, |i, _| C64::from_polar(1.0, 0.37 * i as f64));
    v /= C64::new(v.norm(), 0.0);
    let mut lambda = 0.0;
    for _ in 0..30 {
        let mv = m * &v;
        let norm = mv.norm();
        if norm < 1e-300 {
            return 0.0;
        }
        lambda = norm;
        v = mv / C64::new(norm, 0.0);
    }
    lambda
}

const ARMIJO_SHRINK: f64 = 0.5;
const ARMIJO_SLOPE: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

/// Maximize `w^H R w` over unit-modulus vectors by projected-gradient ascent
/// with retraction.
///
/// The Euclidean gradient is `g = 2 R w`; its tangent projection on the
/// per-entry circle is `r_i = g_i - Re(g_i conj(w_i)) w_i`. Steps use Armijo
/// backtracking from an initial step of `1 / (2 lambda_max)`. Stops after
/// `max_iters` accepted steps, when the Riemannian gradient norm drops to
/// `tol`, or when no step gives sufficient increase.
pub fn riemannian_ascent(
    objective: &SensorObjective,
    start: &UnitModulusVector,
    max_iters: usize,
    tol: f64,
) -> Result<AscentReport> {
    let base_step = armijo_base_step(objective);
    riemannian_ascent_with_step(objective, start, max_iters, tol, base_step)
}

/// Initial Armijo trial step 1 / (2 lambda_max) from a power-iteration
/// estimate.
fn armijo_base_step(objective: &SensorObjective) -> f64 {
    let lambda_max = estimate_spectral_radius(&objective.matrix);
    if lambda_max > 1e-300 {
        1.0 / (2.0 * lambda_max)
    } else {
        1.0
    }
}

fn riemannian_ascent_with_step(
    objective: &SensorObjective,
    start: &UnitModulusVector,
    max_iters: usize,
    tol: f64,
    base_step: f64,
) -> Result<AscentReport> {
    if objective.matrix.nrows() != start.len() {
        return Err(Error::DimensionMismatch(format!(
            "objective is {} x {}, start has {} entries",
            objective.matrix.nrows(),
            objective.matrix.ncols(),
            start.len()
        )));
    }

    let mut w = start.values().clone();
    let mut value = objective.value(&w);
    let mut iterates = vec![value];
    let mut step_counts = Vec::new();
    let mut gradient_norm = 0.0;

    for _ in 0..max_iters {
        let g = &objective.matrix * &w * C64::new(2.0, 0.0);
        let riem = DVector::from_fn(w.len(), |i, _| {
            g[i] - C64::new((g[i] * w[i].conj()).re, 0.0) * w[i]
        });
        gradient_norm = riem.norm();
        if gradient_norm <= tol || gradient_norm <= 1e-14 * g.norm().max(1e-300) {
            break;
        }

        let mut alpha = base_step;
        let mut accepted = false;
        for backtracks in 0..MAX_BACKTRACKS {
            let trial = retract(&(&w + &riem * C64::new(alpha, 0.0)));
            let trial_value = objective.value(&trial);
            if trial_value >= value + ARMIJO_SLOPE * alpha * gradient_norm * gradient_norm {
                w = trial;
                value = trial_value;
                iterates.push(value);
                step_counts.push(backtracks);
                accepted = true;
                break;
            }
            alpha *= ARMIJO_SHRINK;
        }
        if !accepted {
            break;
        }
    }

    Ok(AscentReport {
        iterates,
        final_point: UnitModulusVector::new(w)?,
        step_counts,
        final_gradient_norm: gradient_norm,
    })
}

/// Block-coordinate schedule optimization: for each slot, sweep all sensor
/// objectives once, warm-starting every ascent from the running point; the
/// sweep's final point becomes that slot's phase vector and seeds the next
/// slot. Deterministic given the initial point.
pub fn bcgd_schedule(
    objectives: &[SensorObjective],
    slots: usize,
    init: &UnitModulusVector,
    inner_iters: usize,
) -> Result<BeamformingSchedule> {
    bcgd_schedule_with_jitter(objectives, slots, init, inner_iters, 0.0, &mut NoJitter)
}

/// `bcgd_schedule` with an optional per-slot phase perturbation: every
/// emitted slot vector is rotated entrywise by independent Gaussian phases of
/// standard deviation `jitter_rad`. The perturbation adds slot diversity
/// (rank for the stacked measurement operator) at a small focusing cost; the
/// running chain point itself stays unperturbed, so the optimization
/// trajectory is the same as with zero jitter.
pub fn bcgd_schedule_with_jitter<R: Rng>(
    objectives: &[SensorObjective],
    slots: usize,
    init: &UnitModulusVector,
    inner_iters: usize,
    jitter_rad: f64,
    rng: &mut R,
) -> Result<BeamformingSchedule> {
    if objectives.is_empty() {
        return Err(Error::InvalidScenario("need at least one sensor objective".into()));
    }
    if slots == 0 {
        return Err(Error::InvalidScenario("schedule needs at least one slot".into()));
    }
    // The same objectives are swept every slot; estimate each step size once.
    let base_steps: Vec<f64> = objectives.iter().map(armijo_base_step).collect();
    let mut running = init.clone();
    let mut phase_vectors = Vec::with_capacity(slots);
    for _ in 0..slots {
        for (objective, &base_step) in objectives.iter().zip(base_steps.iter()) {
            let report =
                riemannian_ascent_with_step(objective, &running, inner_iters, 0.0, base_step)?;
            running = report.final_point;
        }
        if jitter_rad > 0.0 {
            let jittered = running.values().map(|z| {
                let eps: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
                z * C64::from_polar(1.0, jitter_rad * eps)
            });
            phase_vectors.push(UnitModulusVector::new(retract(&jittered))?);
        } else {
            phase_vectors.push(running.clone());
        }
    }
    BeamformingSchedule::new(phase_vectors)
}

/// Rng stand-in for the jitter-free path.
struct NoJitter;

impl rand::RngCore for NoJitter {
    fn next_u32(&mut self) -> u32 {
        unreachable!("jitter disabled")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("jitter disabled")
    }
    fn fill_bytes(&mut self, _dest: &mut [u8]) {
        unreachable!("jitter disabled")
    }
}

/// Independent uniform phases for every entry of every slot.
pub fn random_schedule<R: Rng>(slots: usize, size: usize, rng: &mut R) -> BeamformingSchedule {
    let phase_vectors = (0..slots)
        .map(|_| UnitModulusVector::random(size, rng))
        .collect();
    BeamformingSchedule::new(phase_vectors).expect("non-empty by construction")
}

/// Minimize the quadratic CRLB surrogate `omega^H S omega` over the stacked
/// unit-modulus vector of length T * MN (same machinery as the ascent, on the
/// negated objective), then split the result into T slot vectors.
pub fn crlb_min_schedule(
    surrogate: &CrlbSurrogate,
    slots: usize,
    init: &UnitModulusVector,
    max_iters: usize,
) -> Result<BeamformingSchedule> {
    let total = surrogate.matrix.nrows();
    if slots == 0 || total % slots != 0 {
        return Err(Error::DimensionMismatch(format!(
            "surrogate of size {total} cannot be split into {slots} slots"
        )));
    }
    if init.len() != total {
        return Err(Error::DimensionMismatch(format!(
            "initial point has {} entries, surrogate expects {total}",
            init.len()
        )));
    }
    let negated = SensorObjective::new(-surrogate.matrix.clone())?;
    let report = riemannian_ascent(&negated, init, max_iters, 0.0)?;
    let omega = report.final_point.values();
    let per_slot = total / slots;
    let phase_vectors = (0..slots)
        .map(|t| {
            UnitModulusVector::new(DVector::from_iterator(
                per_slot,
                (0..per_slot).map(|i| omega[t * per_slot + i]),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    BeamformingSchedule::new(phase_vectors)
}
