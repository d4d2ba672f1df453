//! File formats: experiment CSV, schedule text files, observation and
//! estimate JSON. All writers format numbers explicitly so identical inputs
//! produce byte-identical files.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::beamformer::UnitModulusVector;
use crate::config::{ExperimentConfig, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::estimator::DoaEstimate;
use crate::experiment::{FieldMap, TableRow};
use crate::geometry::{ArrayGeometry, C64};
use crate::scene::{BeamformingSchedule, Observation};

/// Experiment CSV header shared by `sweep`, `converge`, and `run`.
pub const TABLE_HEADER: &str =
    "method,snr_db,iteration,rmse_theta_deg,rmse_phi_deg,rmse_deg,crlb_deg,trials,converged_frac";

fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6e}"),
        None => String::new(),
    }
}

/// Render experiment rows as CSV text.
pub fn table_to_csv(rows: &[TableRow]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{:.4}\n",
            row.method,
            fmt_f64(row.snr_db),
            row.iteration,
            fmt_f64(row.rmse_theta_deg),
            fmt_f64(row.rmse_phi_deg),
            fmt_f64(row.rmse_deg),
            fmt_opt(row.crlb_deg),
            row.trials,
            row.converged_frac,
        ));
    }
    out
}

pub fn write_table_csv(path: &Path, rows: &[TableRow]) -> Result<()> {
    write_text(path, &table_to_csv(rows))
}

/// Long-format field map: one row per probe cell.
pub fn field_map_to_csv(map: &FieldMap) -> String {
    let mut out = String::from("theta_deg,phi_deg,power\n");
    for (q, &phi) in map.elevation_deg.iter().enumerate() {
        for (p, &theta) in map.azimuth_deg.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{:.9e}\n",
                fmt_f64(theta),
                fmt_f64(phi),
                map.power_at(q, p)
            ));
        }
    }
    out
}

pub fn write_field_map_csv(path: &Path, map: &FieldMap) -> Result<()> {
    write_text(path, &field_map_to_csv(map))
}

/// Schedule text format: one line per slot, each line the MN phase angles in
/// radians.
pub fn schedule_to_text(schedule: &BeamformingSchedule) -> String {
    let mut out = String::new();
    for t in 0..schedule.slots() {
        let phases = schedule.slot(t).phases();
        let line: Vec<String> = phases.iter().map(|p| format!("{p:.17e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_schedule(text: &str) -> Result<BeamformingSchedule> {
    let mut slots = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let phases: Vec<f64> = trimmed
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|e| {
                    Error::Config(format!("schedule line {}: bad phase '{tok}': {e}", lineno + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        slots.push(UnitModulusVector::from_phases(&phases));
    }
    BeamformingSchedule::new(slots)
}

/// Geometry sidecar carried next to a schedule file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleSidecar {
    pub schema_version: u32,
    pub m_count: usize,
    pub n_count: usize,
    pub spacing_m: f64,
    pub wavelength_m: f64,
    pub slots: usize,
}

impl ScheduleSidecar {
    pub fn new(geometry: &ArrayGeometry, slots: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            m_count: geometry.m_count,
            n_count: geometry.n_count,
            spacing_m: geometry.spacing,
            wavelength_m: geometry.wavelength,
            slots,
        }
    }
}

pub fn write_schedule(path: &Path, schedule: &BeamformingSchedule, geometry: &ArrayGeometry) -> Result<()> {
    write_text(path, &schedule_to_text(schedule))?;
    let sidecar = ScheduleSidecar::new(geometry, schedule.slots());
    let sidecar_path = path.with_extension("json");
    write_text(&sidecar_path, &(serde_json::to_string_pretty(&sidecar)? + "\n"))
}

pub fn read_schedule(path: &Path) -> Result<BeamformingSchedule> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_schedule(&text)
}

/// Serialized observation: stacked samples plus the measurement operator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationFile {
    pub schema_version: u32,
    pub sensors: usize,
    pub slots: usize,
    pub elements: usize,
    pub noise_power: f64,
    pub y_re: Vec<f64>,
    pub y_im: Vec<f64>,
    /// Operator Z flattened row-major, TR x MN.
    pub z_re: Vec<f64>,
    pub z_im: Vec<f64>,
}

impl ObservationFile {
    pub fn from_observation(observation: &Observation) -> Self {
        let z = &observation.operator;
        let mut z_re = Vec::with_capacity(z.nrows() * z.ncols());
        let mut z_im = Vec::with_capacity(z.nrows() * z.ncols());
        for i in 0..z.nrows() {
            for j in 0..z.ncols() {
                z_re.push(z[(i, j)].re);
                z_im.push(z[(i, j)].im);
            }
        }
        Self {
            schema_version: SCHEMA_VERSION,
            sensors: observation.sensor_count(),
            slots: observation.slots(),
            elements: z.ncols(),
            noise_power: observation.noise_power,
            y_re: observation.stacked.iter().map(|z| z.re).collect(),
            y_im: observation.stacked.iter().map(|z| z.im).collect(),
            z_re,
            z_im,
        }
    }

    pub fn into_observation(self) -> Result<Observation> {
        let tr = self.sensors * self.slots;
        if self.y_re.len() != tr || self.y_im.len() != tr {
            return Err(Error::Config(format!(
                "observation file: expected {tr} samples, found {}",
                self.y_re.len()
            )));
        }
        if self.z_re.len() != tr * self.elements || self.z_im.len() != tr * self.elements {
            return Err(Error::Config("observation file: operator size mismatch".into()));
        }
        let stacked = DVector::from_fn(tr, |i, _| C64::new(self.y_re[i], self.y_im[i]));
        let operator = DMatrix::from_fn(tr, self.elements, |i, j| {
            let idx = i * self.elements + j;
            C64::new(self.z_re[idx], self.z_im[idx])
        });
        let per_slot = (0..self.slots)
            .map(|t| {
                DVector::from_fn(self.sensors, |i, _| stacked[t * self.sensors + i])
            })
            .collect();
        Ok(Observation {
            stacked,
            per_slot,
            noise_power: self.noise_power,
            operator,
        })
    }
}

pub fn write_observation(path: &Path, observation: &Observation) -> Result<()> {
    let file = ObservationFile::from_observation(observation);
    write_text(path, &(serde_json::to_string(&file)? + "\n"))
}

pub fn read_observation(path: &Path) -> Result<Observation> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: ObservationFile = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))?;
    file.into_observation()
}

/// Estimate records: `{theta_grid, phi_grid, delta_theta, delta_phi,
/// amplitude_re, amplitude_im}` per target.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateFile {
    pub schema_version: u32,
    pub targets: Vec<crate::estimator::TargetEstimate>,
}

pub fn write_estimate(path: &Path, estimate: &DoaEstimate) -> Result<()> {
    let file = EstimateFile {
        schema_version: SCHEMA_VERSION,
        targets: estimate.targets.clone(),
    };
    write_text(path, &(serde_json::to_string_pretty(&file)? + "\n"))
}

pub fn read_estimate(path: &Path) -> Result<DoaEstimate> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: EstimateFile = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("cannot parse {}: {e}", path.display())))?;
    Ok(DoaEstimate {
        targets: file.targets,
    })
}

/// Serializable view of one alternating run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResultFile {
    pub schema_version: u32,
    pub converged: bool,
    pub iterations_used: usize,
    pub snr_warning: bool,
    /// Per-angle RMS bound (degrees) at the final schedule, when defined.
    pub crlb_deg: Option<f64>,
    pub iterations: Vec<RunIterationFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunIterationFile {
    pub iteration: usize,
    pub rmse_theta_deg: f64,
    pub rmse_phi_deg: f64,
    pub rmse_deg: f64,
    pub doa_change_deg: Option<f64>,
    pub per_sensor_snr: Option<Vec<f64>>,
    pub targets: Vec<crate::estimator::TargetEstimate>,
}

impl RunResultFile {
    pub fn from_result(result: &crate::experiment::RunResult) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            converged: result.converged,
            iterations_used: result.iterations_used,
            snr_warning: result.snr_warning,
            crlb_deg: result.crlb_deg,
            iterations: result
                .iterations
                .iter()
                .enumerate()
                .map(|(i, it)| RunIterationFile {
                    iteration: i,
                    rmse_theta_deg: it.rmse_theta_deg,
                    rmse_phi_deg: it.rmse_phi_deg,
                    rmse_deg: it.rmse_deg,
                    doa_change_deg: it.doa_change_deg,
                    per_sensor_snr: it.per_sensor_snr.clone(),
                    targets: it.estimate.targets.clone(),
                })
                .collect(),
        }
    }
}

pub fn write_run_result(path: &Path, result: &crate::experiment::RunResult) -> Result<()> {
    let file = RunResultFile::from_result(result);
    write_text(path, &(serde_json::to_string_pretty(&file)? + "\n"))
}

/// Run manifest: config echo plus reproducibility metadata. No wall-clock
/// fields, so reruns of the same seed are byte-identical.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub command: String,
    pub seed: u64,
    pub config: ExperimentConfig,
}

impl RunManifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            tool: format!("risdoa {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            seed: config.seed,
            config: config.clone(),
        }
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(manifest)? + "\n"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamformer::random_schedule;
    use crate::experiment::TableRow;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn table_csv_is_stable() {
        let rows = vec![TableRow {
            method: "bcgd".into(),
            snr_db: 10.0,
            iteration: 3,
            rmse_theta_deg: 0.123456789,
            rmse_phi_deg: 0.5,
            rmse_deg: 0.3117283945,
            crlb_deg: Some(1.25e-3),
            trials: 50,
            converged_frac: 0.98,
        }];
        let csv = table_to_csv(&rows);
        assert_eq!(
            csv,
            "method,snr_db,iteration,rmse_theta_deg,rmse_phi_deg,rmse_deg,crlb_deg,trials,converged_frac\n\
             bcgd,10.000000,3,0.123457,0.500000,0.311728,1.250000e-3,50,0.9800\n"
        );
    }

    #[test]
    fn schedule_text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let schedule = random_schedule(3, 5, &mut rng);
        let text = schedule_to_text(&schedule);
        let parsed = parse_schedule(&text).unwrap();
        assert_eq!(parsed.slots(), 3);
        for t in 0..3 {
            let diff = (parsed.slot(t).values() - schedule.slot(t).values()).norm();
            assert!(diff < 1e-12, "slot {t} differs by {diff}");
        }
    }

    #[test]
    fn observation_file_round_trip() {
        use crate::geometry::{AnglePair, ArrayGeometry};
        use crate::scene::{synthesize_observation, NoiseSpec, PathLossModel, Scenario, SynthesisMode};
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let scenario = Scenario {
            geometry: ArrayGeometry::half_wavelength(3, 3).unwrap(),
            sensors: vec![AnglePair::new(10.0, -5.0).unwrap(), AnglePair::new(-20.0, 8.0).unwrap()],
            targets: vec![AnglePair::new(30.0, 12.0).unwrap()],
            path_loss: PathLossModel {
                exponent: 2.2,
                reference_m: 1.0,
                distance_m: 10.0,
            },
            prs_amplitudes: None,
            snapshots: Some(5),
            noise: NoiseSpec::SnrDb(20.0),
        };
        let schedule = random_schedule(5, 9, &mut rng);
        let obs = synthesize_observation(&scenario, &schedule, SynthesisMode::Exact, &mut rng).unwrap();
        let file = ObservationFile::from_observation(&obs);
        let back = file.into_observation().unwrap();
        assert_eq!(back.noise_power, obs.noise_power);
        assert!((back.stacked - &obs.stacked).norm() < 1e-15);
        assert!((back.operator - &obs.operator).norm() < 1e-15);
    }

    #[test]
    fn parse_schedule_rejects_garbage() {
        assert!(parse_schedule("1.0 abc\n").is_err());
        assert!(parse_schedule("").is_err());
    }
}
