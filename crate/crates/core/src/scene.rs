//! Simulation scenario and observation synthesis.
//!
//! An observation stacks T snapshots, one per phase configuration of the
//! surface: `y_t = Xi * A_R * diag(w_t) * u + n_t`, where `u` is the combined
//! source column (sum over targets of steering column times PRS amplitude)
//! and `n_t` is circular complex Gaussian noise with per-entry variance
//! `sigma^2`. The stacked operator `Z` has block row t equal to
//! `Xi * A_R * diag(w_t)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::beamformer::UnitModulusVector;
use crate::error::{Error, Result};
use crate::geometry::{AnglePair, ArrayGeometry, Dictionary, C64};

/// Distance-dependent path loss rho = 1e-3 * (d_t / d_0)^(-alpha_0).
pub fn path_loss(distance_m: f64, reference_m: f64, exponent: f64) -> Result<f64> {
    if !(distance_m > 0.0) || !(reference_m > 0.0) {
        return Err(Error::InvalidScenario(format!(
            "path loss distances must be positive, got d_t = {distance_m}, d_0 = {reference_m}"
        )));
    }
    Ok(1e-3 * (distance_m / reference_m).powf(-exponent))
}

/// Path-loss parameters of the reflected link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    /// Path-loss exponent alpha_0.
    pub exponent: f64,
    /// Reference distance d_0 in meters.
    pub reference_m: f64,
    /// Link distance d_t in meters.
    pub distance_m: f64,
}

impl PathLossModel {
    pub fn weight(&self) -> Result<f64> {
        path_loss(self.distance_m, self.reference_m, self.exponent)
    }
}

/// Noise level: either a target received SNR or an explicit noise power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    /// Target receive SNR gamma in dB; sigma^2 is calibrated per schedule as
    /// `mean_t ||H_t x||^2 / gamma`.
    SnrDb(f64),
    /// Fixed noise power sigma^2 (0 means noiseless).
    Power(f64),
}

/// Complete simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub geometry: ArrayGeometry,
    /// Sensor directions as seen from the surface.
    pub sensors: Vec<AnglePair>,
    /// True target directions.
    pub targets: Vec<AnglePair>,
    pub path_loss: PathLossModel,
    /// PRS amplitudes, one complex value per target.
    #[serde(default)]
    pub prs_amplitudes: Option<Vec<[f64; 2]>>,
    /// Snapshot count T. Defaults to ceil(MN / R), the smallest count that
    /// gives the stacked operator full column rank.
    #[serde(default)]
    pub snapshots: Option<usize>,
    pub noise: NoiseSpec,
}

/// Default sensor directions: 10 pairs drawn once from a fixed seed
/// (uniform on [-60, 60] degrees per axis, rejecting pairs too close to the
/// direction-domain boundary) and frozen here.
pub const DEFAULT_SENSOR_ANGLES: [(f64, f64); 10] = [
    (16.73, -57.0),
    (-27.0, -33.21),
    (28.38, 21.2),
    (-9.37, -56.42),
    (-33.76, 0.64),
    (17.99, 5.39),
    (-33.55, 10.71),
    (36.7, 23.78),
    (-19.17, -41.34),
    (54.87, -19.61),
];

/// Target directions used by the headline experiments.
pub const PAPER_TARGET_ANGLES: [(f64, f64); 6] = [
    (-50.5, 8.2),
    (-33.7, -27.9),
    (-13.5, -40.3),
    (9.6, 31.8),
    (30.2, 23.5),
    (46.2, -16.3),
];

impl Scenario {
    /// Full-scale configuration: M = N = 20, R = 10, K = 6, d = lambda / 2,
    /// alpha_0 = 2.2, d_0 = 1 m, d_t = 10 m, SNR 10 dB.
    pub fn paper_default() -> Result<Self> {
        let geometry = ArrayGeometry::half_wavelength(20, 20)?;
        let sensors = DEFAULT_SENSOR_ANGLES
            .iter()
            .map(|&(t, p)| AnglePair::new(t, p))
            .collect::<Result<Vec<_>>>()?;
        let targets = PAPER_TARGET_ANGLES
            .iter()
            .map(|&(t, p)| AnglePair::new(t, p))
            .collect::<Result<Vec<_>>>()?;
        let scenario = Self {
            geometry,
            sensors,
            targets,
            path_loss: PathLossModel {
                exponent: 2.2,
                reference_m: 1.0,
                distance_m: 10.0,
            },
            prs_amplitudes: None,
            snapshots: None,
            noise: NoiseSpec::SnrDb(10.0),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensors.is_empty() {
            return Err(Error::InvalidScenario("need at least one sensor".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::InvalidScenario("need at least one target".into()));
        }
        if let Some(amps) = &self.prs_amplitudes {
            if amps.len() != self.targets.len() {
                return Err(Error::InvalidScenario(format!(
                    "{} PRS amplitudes for {} targets",
                    amps.len(),
                    self.targets.len()
                )));
            }
        }
        if let Some(t) = self.snapshots {
            if t < 1 {
                return Err(Error::InvalidScenario("snapshot count must be >= 1".into()));
            }
        }
        if let NoiseSpec::Power(p) = self.noise {
            if p < 0.0 {
                return Err(Error::InvalidScenario(format!("negative noise power {p}")));
            }
        }
        Ok(())
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    pub fn target_count(&self) -> usize {
        self.targets.len()
    }

    /// Snapshot count, defaulting to ceil(MN / R).
    pub fn snapshot_count(&self) -> usize {
        self.snapshots
            .unwrap_or_else(|| self.geometry.element_count().div_ceil(self.sensor_count()))
    }

    /// PRS amplitudes as complex values; all ones when unspecified.
    pub fn prs(&self) -> Vec<C64> {
        match &self.prs_amplitudes {
            Some(amps) => amps.iter().map(|&[re, im]| C64::new(re, im)).collect(),
            None => vec![C64::new(1.0, 0.0); self.targets.len()],
        }
    }
}

/// Receiver steering matrix A_R with the diagonal link weights Xi.
#[derive(Debug, Clone)]
pub struct SensorArray {
    /// R x MN matrix; row r is the flat steering vector at sensor r.
    pub steering: DMatrix<C64>,
    /// Diagonal of Xi (length R). All entries equal rho by default.
    pub weights: DVector<C64>,
}

impl SensorArray {
    pub fn from_scenario(scenario: &Scenario) -> Result<Self> {
        let rho = scenario.path_loss.weight()?;
        Self::new(&scenario.geometry, &scenario.sensors, rho)
    }

    pub fn new(geometry: &ArrayGeometry, sensors: &[AnglePair], rho: f64) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::InvalidScenario("need at least one sensor".into()));
        }
        let mn = geometry.element_count();
        let mut steering = DMatrix::zeros(sensors.len(), mn);
        for (r, angle) in sensors.iter().enumerate() {
            let row = geometry.upa_steering(angle);
            steering.set_row(r, &row.transpose());
        }
        Ok(Self {
            steering,
            weights: DVector::from_element(sensors.len(), C64::new(rho, 0.0)),
        })
    }

    pub fn sensor_count(&self) -> usize {
        self.steering.nrows()
    }

    pub fn element_count(&self) -> usize {
        self.steering.ncols()
    }

    /// Row r of Xi * A_R as a flat vector.
    pub fn weighted_row(&self, r: usize) -> DVector<C64> {
        self.steering.row(r).transpose() * self.weights[r]
    }
}

/// T unit-modulus phase vectors, the diagonals of the per-slot phase-shift
/// matrices.
#[derive(Debug, Clone)]
pub struct BeamformingSchedule {
    pub phase_vectors: Vec<UnitModulusVector>,
}

impl BeamformingSchedule {
    pub fn new(phase_vectors: Vec<UnitModulusVector>) -> Result<Self> {
        if phase_vectors.is_empty() {
            return Err(Error::InvalidScenario("schedule needs at least one slot".into()));
        }
        let len = phase_vectors[0].len();
        if phase_vectors.iter().any(|w| w.len() != len) {
            return Err(Error::DimensionMismatch(
                "phase vectors in a schedule must share one length".into(),
            ));
        }
        Ok(Self { phase_vectors })
    }

    pub fn slots(&self) -> usize {
        self.phase_vectors.len()
    }

    pub fn element_count(&self) -> usize {
        self.phase_vectors[0].len()
    }

    pub fn slot(&self, t: usize) -> &UnitModulusVector {
        &self.phase_vectors[t]
    }
}

/// Stacked measurement operator Z: block row t is `Xi * A_R * diag(w_t)`,
/// shape TR x MN.
pub fn measurement_operator(
    sensor_array: &SensorArray,
    schedule: &BeamformingSchedule,
) -> Result<DMatrix<C64>> {
    let r = sensor_array.sensor_count();
    let mn = sensor_array.element_count();
    if schedule.element_count() != mn {
        return Err(Error::DimensionMismatch(format!(
            "schedule has {} elements, array has {mn}",
            schedule.element_count()
        )));
    }
    let t_slots = schedule.slots();
    let mut z = DMatrix::zeros(t_slots * r, mn);
    for t in 0..t_slots {
        let w = schedule.slot(t).values();
        for row in 0..r {
            let weight = sensor_array.weights[row];
            for col in 0..mn {
                z[(t * r + row, col)] = weight * sensor_array.steering[(row, col)] * w[col];
            }
        }
    }
    Ok(z)
}

/// Exact (non-linearized) steering column at a target's true angle; ground
/// truth for data synthesis.
pub fn true_channel_column(target: &AnglePair, geometry: &ArrayGeometry) -> DVector<C64> {
    geometry.upa_steering(target)
}

/// First-order column `(a_a + delta_theta * b_a) ⊗ (a_e + delta_phi * b_e)`
/// built on the dictionary grids; offsets are taken against the nearest grid
/// points and applied per radian.
pub fn linearized_channel_column(
    target: &AnglePair,
    dictionary: &Dictionary,
    geometry: &ArrayGeometry,
) -> Result<DVector<C64>> {
    let (p_idx, d_theta_deg) = dictionary.azimuth_grid.nearest_decompose(target.azimuth_deg())?;
    let (q_idx, d_phi_deg) = dictionary
        .elevation_grid
        .nearest_decompose(target.elevation_deg())?;
    let az = dictionary.azimuth_atoms.column(p_idx)
        + dictionary.azimuth_derivs.column(p_idx) * C64::new(d_theta_deg.to_radians(), 0.0);
    let el = dictionary.elevation_atoms.column(q_idx)
        + dictionary.elevation_derivs.column(q_idx) * C64::new(d_phi_deg.to_radians(), 0.0);
    Ok(geometry.separable_column(&az.into_owned(), &el.into_owned()))
}

/// Which channel model generates the data.
#[derive(Debug, Clone, Copy)]
pub enum SynthesisMode<'a> {
    /// Exact steering vectors at the true angles.
    Exact,
    /// First-order Taylor model on the given dictionary's grids.
    Linearized(&'a Dictionary),
}

/// One synthesized multi-snapshot observation.
#[derive(Debug, Clone)]
pub struct Observation {
    /// Stacked TR-vector y, slot-major.
    pub stacked: DVector<C64>,
    /// Per-slot R-vectors y_t in slot order.
    pub per_slot: Vec<DVector<C64>>,
    /// Noise power sigma^2 actually applied.
    pub noise_power: f64,
    /// Measurement operator Z (TR x MN).
    pub operator: DMatrix<C64>,
}

impl Observation {
    pub fn sensor_count(&self) -> usize {
        self.per_slot[0].len()
    }

    pub fn slots(&self) -> usize {
        self.per_slot.len()
    }
}

/// Combined source column u = sum_k x_k c_k, where c_k is the exact or
/// linearized steering column of target k.
pub fn combined_source_column(scenario: &Scenario, mode: SynthesisMode<'_>) -> Result<DVector<C64>> {
    let amplitudes = scenario.prs();
    let mut u = DVector::zeros(scenario.geometry.element_count());
    for (target, &amp) in scenario.targets.iter().zip(amplitudes.iter()) {
        let column = match mode {
            SynthesisMode::Exact => true_channel_column(target, &scenario.geometry),
            SynthesisMode::Linearized(dict) => {
                linearized_channel_column(target, dict, &scenario.geometry)?
            }
        };
        u += column * amp;
    }
    Ok(u)
}

/// Resolve the scenario's noise spec against a given noiseless observation:
/// `sigma^2 = mean_t ||H_t x||^2 / gamma` for an SNR target.
fn resolve_noise_power(scenario: &Scenario, clean: &DVector<C64>, slots: usize) -> Result<f64> {
    match scenario.noise {
        NoiseSpec::Power(p) => Ok(p),
        NoiseSpec::SnrDb(snr_db) => {
            let gamma = 10f64.powf(snr_db / 10.0);
            let mean_power = clean.norm_squared() / slots as f64;
            if mean_power <= 0.0 {
                return Err(Error::NoiseCalibration(format!(
                    "zero signal power with finite SNR request {snr_db} dB"
                )));
            }
            Ok(mean_power / gamma)
        }
    }
}

/// Synthesize y = Z u + n with circular complex Gaussian noise of per-entry
/// variance sigma^2 (so E||n_t||^2 = R sigma^2).
pub fn synthesize_observation<R: Rng>(
    scenario: &Scenario,
    schedule: &BeamformingSchedule,
    mode: SynthesisMode<'_>,
    rng: &mut R,
) -> Result<Observation> {
    scenario.validate()?;
    let sensor_array = SensorArray::from_scenario(scenario)?;
    let operator = measurement_operator(&sensor_array, schedule)?;
    let u = combined_source_column(scenario, mode)?;
    let clean = &operator * &u;
    let noise_power = resolve_noise_power(scenario, &clean, schedule.slots())?;

    let r = sensor_array.sensor_count();
    let scale = (noise_power / 2.0).sqrt();
    let mut stacked = clean;
    let mut per_slot = Vec::with_capacity(schedule.slots());
    for t in 0..schedule.slots() {
        for i in 0..r {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            stacked[t * r + i] += C64::new(scale * re, scale * im);
        }
        per_slot.push(DVector::from_iterator(
            r,
            (0..r).map(|i| stacked[t * r + i]),
        ));
    }

    Ok(Observation {
        stacked,
        per_slot,
        noise_power,
        operator,
    })
}

/// Received SNR: total `||Hx||^2 / sigma^2` plus the per-sensor terms
/// `|(Hx)_j|^2 / sigma^2`.
#[derive(Debug, Clone)]
pub struct SnrReport {
    pub total: f64,
    pub per_sensor: Vec<f64>,
}

pub fn received_snr(channel_times_signal: &DVector<C64>, noise_power: f64) -> Result<SnrReport> {
    if !(noise_power > 0.0) {
        return Err(Error::InvalidScenario(format!(
            "noise power must be positive to form an SNR, got {noise_power}"
        )));
    }
    let per_sensor: Vec<f64> = channel_times_signal
        .iter()
        .map(|z| z.norm_sqr() / noise_power)
        .collect();
    Ok(SnrReport {
        total: channel_times_signal.norm_squared() / noise_power,
        per_sensor,
    })
}
