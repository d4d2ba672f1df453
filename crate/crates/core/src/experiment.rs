//! Alternating estimation/beamforming loop, Monte Carlo aggregation, and the
//! derived experiment tables.
//!
//! One run alternates: synthesize an observation under the current schedule
//! (a random schedule seeds iteration 0), estimate the angles, rebuild the
//! per-sensor objectives from the estimate, and reoptimize the schedule.
//! Runs terminate when the largest per-target angle change drops below the
//! configured tolerance or the iteration cap is reached.
//!
//! Monte Carlo trials are independent jobs on seed-derived RNG streams;
//! aggregation is order-independent, so identical configs and seeds give
//! identical tables at any parallelism.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::beamformer::{
    bcgd_schedule_with_jitter, build_sensor_objective, crlb_min_schedule, random_schedule,
    UnitModulusVector,
};
use crate::config::{BeamformerMethod, ExperimentConfig};
use crate::crlb::{build_crlb_surrogate, crlb, fisher_information};
use crate::error::{Error, Result};
use crate::estimator::{estimate, DoaEstimate, EstimatorOptions};
use crate::geometry::{AngleGrid, AnglePair, ArrayGeometry, Dictionary, C64};
use crate::scene::{
    combined_source_column, BeamformingSchedule, NoiseSpec, Scenario, SensorArray, SynthesisMode,
    synthesize_observation,
};

/// Worst-case per-axis error charged for each target an estimate failed to
/// produce: half the grid range.
fn missing_target_penalty_deg(grid: &AngleGrid) -> f64 {
    (grid.high_deg() - grid.low_deg()) / 2.0
}

/// Axis-wise RMSE over Monte Carlo trials, degrees.
#[derive(Debug, Clone, Copy)]
pub struct RmseSummary {
    pub rmse_theta_deg: f64,
    pub rmse_phi_deg: f64,
    /// Always the arithmetic mean of the two axis values.
    pub rmse_deg: f64,
    /// Trials that produced fewer targets than the truth.
    pub short_trials: usize,
}

/// Minimum-total-squared-distance assignment of truth entries to estimate
/// entries. Exhaustive for K <= 6, greedy beyond. Returns, per truth index,
/// the matched estimate index or None when the estimate ran short.
fn assign_targets(estimate: &DoaEstimate, truth: &[AnglePair]) -> Vec<Option<usize>> {
    let k = truth.len();
    let e = estimate.targets.len();
    let cost = |ti: usize, ei: usize| -> f64 {
        let t = &truth[ti];
        let est = &estimate.targets[ei];
        let dt = est.azimuth_deg() - t.azimuth_deg();
        let dp = est.elevation_deg() - t.elevation_deg();
        dt * dt + dp * dp
    };

    if k <= 6 {
        // Exhaustive search over injections truth -> estimates.
        let mut best: Option<(f64, Vec<Option<usize>>)> = None;
        let mut assignment = vec![None; k];
        let mut used = vec![false; e];
        fn recurse(
            ti: usize,
            k: usize,
            e: usize,
            cost: &dyn Fn(usize, usize) -> f64,
            assignment: &mut Vec<Option<usize>>,
            used: &mut Vec<bool>,
            acc: f64,
            best: &mut Option<(f64, Vec<Option<usize>>)>,
        ) {
            if ti == k {
                if best.as_ref().map_or(true, |(c, _)| acc < *c) {
                    *best = Some((acc, assignment.clone()));
                }
                return;
            }
            // Remaining truth targets must fit into remaining estimates;
            // otherwise some stay unmatched (allowed only when estimates run
            // short overall).
            let remaining_truth = k - ti;
            let remaining_est = used.iter().filter(|u| !**u).count();
            if remaining_est < remaining_truth {
                assignment[ti] = None;
                recurse(ti + 1, k, e, cost, assignment, used, acc, best);
            }
            for ei in 0..e {
                if used[ei] {
                    continue;
                }
                used[ei] = true;
                assignment[ti] = Some(ei);
                recurse(ti + 1, k, e, cost, assignment, used, acc + cost(ti, ei), best);
                used[ei] = false;
                assignment[ti] = None;
            }
        }
        recurse(0, k, e, &cost, &mut assignment, &mut used, 0.0, &mut best);
        best.expect("assignment search always yields a candidate").1
    } else {
        // Greedy: repeatedly take the globally cheapest unmatched pair.
        let mut pairs: Vec<(f64, usize, usize)> = (0..k)
            .flat_map(|ti| (0..e).map(move |ei| (ti, ei)))
            .map(|(ti, ei)| (cost(ti, ei), ti, ei))
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut assignment = vec![None; k];
        let mut used = vec![false; e];
        for (_, ti, ei) in pairs {
            if assignment[ti].is_none() && !used[ei] {
                assignment[ti] = Some(ei);
                used[ei] = true;
            }
        }
        assignment
    }
}

/// RMSE over trials against the true angles, with optimal per-trial
/// assignment and the documented penalty for missing targets.
pub fn rmse(estimates: &[DoaEstimate], truth: &[AnglePair], grid: &AngleGrid) -> Result<RmseSummary> {
    if estimates.is_empty() {
        return Err(Error::Estimation {
            message: "RMSE of an empty trial list".into(),
            iteration: None,
        });
    }
    if truth.is_empty() {
        return Err(Error::Estimation {
            message: "RMSE against an empty truth list".into(),
            iteration: None,
        });
    }
    let penalty = missing_target_penalty_deg(grid);
    let k = truth.len();
    let mut sum_theta = 0.0;
    let mut sum_phi = 0.0;
    let mut short_trials = 0;
    for estimate in estimates {
        if estimate.targets.len() < k {
            short_trials += 1;
        }
        let assignment = assign_targets(estimate, truth);
        for (ti, matched) in assignment.iter().enumerate() {
            match matched {
                Some(ei) => {
                    let est = &estimate.targets[*ei];
                    let dt = est.azimuth_deg() - truth[ti].azimuth_deg();
                    let dp = est.elevation_deg() - truth[ti].elevation_deg();
                    sum_theta += dt * dt;
                    sum_phi += dp * dp;
                }
                None => {
                    sum_theta += penalty * penalty;
                    sum_phi += penalty * penalty;
                }
            }
        }
    }
    let denom = (estimates.len() * k) as f64;
    let rmse_theta_deg = (sum_theta / denom).sqrt();
    let rmse_phi_deg = (sum_phi / denom).sqrt();
    Ok(RmseSummary {
        rmse_theta_deg,
        rmse_phi_deg,
        rmse_deg: (rmse_theta_deg + rmse_phi_deg) / 2.0,
        short_trials,
    })
}

/// Source column rebuilt from an estimate: sum over recovered targets of
/// `amplitude * (a_a + dtheta b_a) ⊗ (a_e + dphi b_e)` at the estimated grid
/// angles, offsets applied per radian.
pub fn estimated_source_column(estimate: &DoaEstimate, geometry: &ArrayGeometry) -> DVector<C64> {
    let mut u = DVector::zeros(geometry.element_count());
    for target in &estimate.targets {
        let az = geometry.azimuth_steering(target.theta_grid)
            + geometry.azimuth_derivative(target.theta_grid)
                * C64::new(target.delta_theta.to_radians(), 0.0);
        let el = geometry.elevation_steering(target.phi_grid)
            + geometry.elevation_derivative(target.phi_grid)
                * C64::new(target.delta_phi.to_radians(), 0.0);
        u += geometry.separable_column(&az, &el) * target.amplitude();
    }
    u
}

/// Angle pairs from an estimate, for guiding the next schedule. Estimated
/// pairs outside the representable direction domain (necessarily wrong) are
/// dropped after trying the bare grid point.
fn estimated_angle_pairs(estimate: &DoaEstimate) -> Vec<AnglePair> {
    estimate
        .targets
        .iter()
        .filter_map(|t| {
            AnglePair::new(t.azimuth_deg(), t.elevation_deg())
                .or_else(|_| AnglePair::new(t.theta_grid, t.phi_grid))
                .ok()
        })
        .collect()
}

/// One outer iteration of a run.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub estimate: DoaEstimate,
    pub rmse_theta_deg: f64,
    pub rmse_phi_deg: f64,
    pub rmse_deg: f64,
    /// Mean-over-slots per-sensor received SNR (linear), None when noiseless.
    pub per_sensor_snr: Option<Vec<f64>>,
    /// Largest per-target angle change against the previous iteration.
    pub doa_change_deg: Option<f64>,
}

/// Outcome of one alternating run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub iterations: Vec<IterationRecord>,
    pub final_schedule: BeamformingSchedule,
    /// Per-angle RMS bound in degrees at the final schedule, when the Fisher
    /// matrix was invertible and the run was noisy.
    pub crlb_deg: Option<f64>,
    pub converged: bool,
    pub iterations_used: usize,
    /// Set when the run ever fell below the configured minimum received SNR.
    pub snr_warning: bool,
}

impl RunResult {
    pub fn final_estimate(&self) -> &DoaEstimate {
        &self.iterations.last().expect("at least one iteration").estimate
    }
}

/// Largest per-target angle change between consecutive estimates, matching
/// entries by minimum total distance.
fn doa_change_deg(current: &DoaEstimate, previous: &DoaEstimate) -> f64 {
    let pairs: Vec<AnglePair> = previous
        .targets
        .iter()
        .filter_map(|t| AnglePair::new(t.azimuth_deg(), t.elevation_deg()).ok())
        .collect();
    if pairs.is_empty() || current.targets.is_empty() {
        return f64::INFINITY;
    }
    let assignment = assign_targets(current, &pairs);
    let mut worst = 0.0f64;
    for (ti, matched) in assignment.iter().enumerate() {
        match matched {
            Some(ei) => {
                let est = &current.targets[*ei];
                let dt = (est.azimuth_deg() - pairs[ti].azimuth_deg()).abs();
                let dp = (est.elevation_deg() - pairs[ti].elevation_deg()).abs();
                worst = worst.max(dt.max(dp));
            }
            None => return f64::INFINITY,
        }
    }
    worst
}

/// Options controlling one run beyond the shared config.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Ignore the convergence tolerance and always execute `max_outer`
    /// iterations (used by the convergence experiment).
    pub run_to_max: bool,
}

/// Algorithm of the alternating loop: estimate under the current schedule,
/// then reoptimize the schedule from the estimate.
pub fn alternating_optimize<R: Rng>(
    config: &ExperimentConfig,
    rng: &mut R,
    options: RunOptions,
) -> Result<RunResult> {
    config.validate()?;
    let scenario = &config.scenario;
    let geometry = &scenario.geometry;
    let mn = geometry.element_count();
    let slots = scenario.snapshot_count();
    let grid = config.grid.build()?;
    let dictionary = Dictionary::build(grid.clone(), grid.clone(), geometry);
    let sensor_array = SensorArray::from_scenario(scenario)?;
    let estimator_options = if config.estimator.k_known {
        EstimatorOptions::known_k(scenario.target_count())
    } else {
        EstimatorOptions::residual_stop(
            config.estimator.k_cap.unwrap_or(2 * scenario.target_count()),
            config.estimator.residual_tol,
        )
    };
    let rho = scenario.path_loss.weight()?;
    let prs = scenario.prs();

    let mut schedule = random_schedule(slots, mn, rng);
    let mut iterations: Vec<IterationRecord> = Vec::new();
    let mut converged = false;
    let mut snr_warning = false;
    let mut noise_floor = 0.0;
    // An SNR-specified scenario fixes the noise power at iteration 0, under
    // the initial random schedule. Later iterations keep that noise floor,
    // so a schedule that concentrates power on the sensors genuinely raises
    // the received SNR above the initial setting.
    let mut floor_scenario = scenario.clone();
    // All received slots so far; each outer estimate uses the whole stack,
    // so information accumulates and a poorly guided schedule cannot erase
    // what earlier snapshots already established.
    let mut stacked_operator: DMatrix<C64> = DMatrix::zeros(0, mn);
    let mut stacked_samples: DVector<C64> = DVector::zeros(0);

    for outer in 0..config.outer_loop.max_outer {
        let observation =
            synthesize_observation(&floor_scenario, &schedule, SynthesisMode::Exact, rng)?;
        if outer == 0 {
            noise_floor = observation.noise_power;
            floor_scenario.noise = NoiseSpec::Power(noise_floor);
        }
        let grown_rows = stacked_operator.nrows() + observation.operator.nrows();
        let mut grown_operator = DMatrix::zeros(grown_rows, mn);
        grown_operator
            .view_mut((0, 0), (stacked_operator.nrows(), mn))
            .copy_from(&stacked_operator);
        grown_operator
            .view_mut((stacked_operator.nrows(), 0), (observation.operator.nrows(), mn))
            .copy_from(&observation.operator);
        stacked_operator = grown_operator;
        let mut grown_samples = DVector::zeros(grown_rows);
        grown_samples
            .view_mut((0, 0), (stacked_samples.len(), 1))
            .copy_from(&stacked_samples);
        grown_samples
            .view_mut((stacked_samples.len(), 0), (observation.stacked.len(), 1))
            .copy_from(&observation.stacked);
        stacked_samples = grown_samples;

        let r_sensors = sensor_array.sensor_count();
        let accumulated = Observation {
            stacked: stacked_samples.clone(),
            per_slot: (0..stacked_samples.len() / r_sensors)
                .map(|t| {
                    DVector::from_fn(r_sensors, |i, _| stacked_samples[t * r_sensors + i])
                })
                .collect(),
            noise_power: noise_floor,
            operator: stacked_operator.clone(),
        };
        let (doa, _, _) = estimate(&accumulated, &dictionary, &estimator_options)
            .map_err(|e| Error::Estimation {
                message: e.to_string(),
                iteration: Some(outer),
            })?;

        let summary = rmse(std::slice::from_ref(&doa), &scenario.targets, &grid)?;
        let per_sensor_snr = if observation.noise_power > 0.0 {
            let clean = &observation.operator * combined_source_column(scenario, SynthesisMode::Exact)?;
            let r = observation.sensor_count();
            let mut per = vec![0.0; r];
            for t in 0..observation.slots() {
                for j in 0..r {
                    per[j] += clean[t * r + j].norm_sqr() / observation.noise_power;
                }
            }
            for v in per.iter_mut() {
                *v /= observation.slots() as f64;
            }
            if let Some(min_db) = config.min_snr_db {
                let total: f64 = per.iter().sum();
                if 10.0 * total.log10() < min_db {
                    snr_warning = true;
                }
            }
            Some(per)
        } else {
            None
        };
        let change = iterations
            .last()
            .map(|prev| doa_change_deg(&doa, &prev.estimate));
        iterations.push(IterationRecord {
            estimate: doa,
            rmse_theta_deg: summary.rmse_theta_deg,
            rmse_phi_deg: summary.rmse_phi_deg,
            rmse_deg: summary.rmse_deg,
            per_sensor_snr,
            doa_change_deg: change,
        });

        if !options.run_to_max {
            if let Some(change) = change {
                if change < config.outer_loop.doa_tol_deg {
                    converged = true;
                    break;
                }
            }
        }
        if outer + 1 == config.outer_loop.max_outer {
            break;
        }

        // Schedule update from the current estimate.
        let current = &iterations.last().expect("just pushed").estimate;
        schedule = match config.beamformer.method {
            BeamformerMethod::Random => random_schedule(slots, mn, rng),
            BeamformerMethod::Bcgd => {
                let source = estimated_source_column(current, geometry);
                let objectives = (0..sensor_array.sensor_count())
                    .map(|j| build_sensor_objective(j, &sensor_array, &source))
                    .collect::<Result<Vec<_>>>()?;
                let init = UnitModulusVector::random(mn, rng);
                bcgd_schedule_with_jitter(
                    &objectives,
                    slots,
                    &init,
                    config.beamformer.inner_iters,
                    config.beamformer.slot_jitter_rad,
                    rng,
                )?
            }
            BeamformerMethod::CrlbSurrogate => {
                let sigma2 = if observation.noise_power > 0.0 {
                    observation.noise_power
                } else {
                    1.0
                };
                let pairs = estimated_angle_pairs(current);
                if pairs.is_empty() {
                    // No usable angles to guide the surrogate.
                    random_schedule(slots, mn, rng)
                } else {
                    let surrogate =
                        build_crlb_surrogate(&pairs, &sensor_array, geometry, slots, rho, sigma2)?;
                    let init = UnitModulusVector::random(slots * mn, rng);
                    let budget = config.beamformer.inner_iters * sensor_array.sensor_count();
                    crlb_min_schedule(&surrogate, slots, &init, budget)?
                }
            }
        };
    }

    // Reference bound at the final schedule, against the true angles.
    let crlb_deg = if noise_floor > 0.0 {
        let z = crate::scene::measurement_operator(&sensor_array, &schedule)?;
        fisher_information(&z, &scenario.targets, &prs, noise_floor, geometry)
            .ok()
            .and_then(|fim| crlb(&fim).ok())
            .map(|value| value.per_angle_rms_deg())
    } else {
        None
    };

    let iterations_used = iterations.len();
    Ok(RunResult {
        iterations,
        final_schedule: schedule,
        crlb_deg,
        converged,
        iterations_used,
        snr_warning,
    })
}

/// One aggregated table row; shared by the sweep and convergence outputs.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub method: String,
    pub snr_db: f64,
    pub iteration: usize,
    pub rmse_theta_deg: f64,
    pub rmse_phi_deg: f64,
    pub rmse_deg: f64,
    pub crlb_deg: Option<f64>,
    pub trials: usize,
    pub converged_frac: f64,
}

/// Run `trials` independent alternating runs on seed-derived streams.
fn run_trials(
    config: &ExperimentConfig,
    stream_base: u64,
    trials: usize,
    options: RunOptions,
) -> Result<Vec<RunResult>> {
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(stream_base + trial as u64);
            alternating_optimize(config, &mut rng, options)
        })
        .collect()
}

/// RMSE versus SNR for each requested method. The random baseline runs a
/// single pass (its schedule never improves) unless `loop_random` is set.
pub fn snr_sweep(
    config: &ExperimentConfig,
    snr_list: &[f64],
    methods: &[BeamformerMethod],
) -> Result<Vec<TableRow>> {
    config.validate()?;
    let grid = config.grid.build()?;
    let mut rows = Vec::new();
    for (mi, &method) in methods.iter().enumerate() {
        for (si, &snr_db) in snr_list.iter().enumerate() {
            let mut cell_config = config.clone();
            cell_config.scenario.noise = NoiseSpec::SnrDb(snr_db);
            cell_config.beamformer.method = method;
            if method == BeamformerMethod::Random && !config.beamformer.loop_random {
                cell_config.outer_loop.max_outer = 1;
            }
            let stream_base = ((mi as u64) << 48) | ((si as u64) << 32);
            let results = run_trials(
                &cell_config,
                stream_base,
                config.monte_carlo.trials,
                RunOptions::default(),
            )?;

            let estimates: Vec<DoaEstimate> =
                results.iter().map(|r| r.final_estimate().clone()).collect();
            let summary = rmse(&estimates, &config.scenario.targets, &grid)?;
            let bounds: Vec<f64> = results.iter().filter_map(|r| r.crlb_deg).collect();
            let crlb_deg = if bounds.is_empty() {
                None
            } else {
                Some(bounds.iter().sum::<f64>() / bounds.len() as f64)
            };
            rows.push(TableRow {
                method: method.name().to_string(),
                snr_db,
                iteration: results.iter().map(|r| r.iterations_used).max().unwrap_or(0),
                rmse_theta_deg: summary.rmse_theta_deg,
                rmse_phi_deg: summary.rmse_phi_deg,
                rmse_deg: summary.rmse_deg,
                crlb_deg,
                trials: results.len(),
                converged_frac: results.iter().filter(|r| r.converged).count() as f64
                    / results.len() as f64,
            });
        }
    }
    Ok(rows)
}

/// RMSE per outer iteration, averaged over trials run to the full iteration
/// budget.
pub fn convergence_run(config: &ExperimentConfig) -> Result<Vec<TableRow>> {
    config.validate()?;
    let grid = config.grid.build()?;
    let snr_db = match config.scenario.noise {
        NoiseSpec::SnrDb(v) => v,
        NoiseSpec::Power(_) => f64::NAN,
    };
    let results = run_trials(
        config,
        u64::from(u32::MAX),
        config.monte_carlo.trials,
        RunOptions { run_to_max: true },
    )?;
    let iterations = config.outer_loop.max_outer;
    let mut rows = Vec::new();
    for iteration in 0..iterations {
        let estimates: Vec<DoaEstimate> = results
            .iter()
            .map(|r| r.iterations[iteration.min(r.iterations.len() - 1)].estimate.clone())
            .collect();
        let summary = rmse(&estimates, &config.scenario.targets, &grid)?;
        let bounds: Vec<f64> = results.iter().filter_map(|r| r.crlb_deg).collect();
        let crlb_deg = if bounds.is_empty() {
            None
        } else {
            Some(bounds.iter().sum::<f64>() / bounds.len() as f64)
        };
        rows.push(TableRow {
            method: config.beamformer.method.name().to_string(),
            snr_db,
            iteration,
            rmse_theta_deg: summary.rmse_theta_deg,
            rmse_phi_deg: summary.rmse_phi_deg,
            rmse_deg: summary.rmse_deg,
            crlb_deg,
            trials: results.len(),
            converged_frac: results.iter().filter(|r| r.converged).count() as f64
                / results.len() as f64,
        });
    }
    Ok(rows)
}

/// Radiated power over a probe grid: `|a(theta, phi)^H diag(w_t) u|^2`
/// averaged over slots, with `u` the scenario's exact combined source column.
#[derive(Debug, Clone)]
pub struct FieldMap {
    pub azimuth_deg: Vec<f64>,
    pub elevation_deg: Vec<f64>,
    /// Rows follow elevation, columns azimuth.
    pub power: DMatrix<f64>,
    /// Sensor directions for plot markers.
    pub sensor_angles: Vec<(f64, f64)>,
}

impl FieldMap {
    pub fn power_at(&self, elevation_idx: usize, azimuth_idx: usize) -> f64 {
        self.power[(elevation_idx, azimuth_idx)]
    }
}

/// Evaluate the radiated field of a schedule on a uniform probe grid. The
/// probe steering factorizes per axis, so the whole map is two matrix
/// products per slot.
pub fn field_map(
    schedule: &BeamformingSchedule,
    scenario: &Scenario,
    resolution_deg: f64,
) -> Result<FieldMap> {
    let geometry = &scenario.geometry;
    if schedule.element_count() != geometry.element_count() {
        return Err(Error::DimensionMismatch(
            "schedule and scenario geometry disagree".into(),
        ));
    }
    let probe = AngleGrid::new(-90.0, 90.0, resolution_deg)?;
    let u = combined_source_column(scenario, SynthesisMode::Exact)?;

    let m = geometry.m_count;
    let n = geometry.n_count;
    let mut az_probe = DMatrix::zeros(m, probe.len());
    let mut el_probe = DMatrix::zeros(n, probe.len());
    for (j, &angle) in probe.points().iter().enumerate() {
        az_probe.set_column(j, &geometry.azimuth_steering(angle));
        el_probe.set_column(j, &geometry.elevation_steering(angle));
    }

    let mut power = DMatrix::zeros(probe.len(), probe.len());
    for t in 0..schedule.slots() {
        let w = schedule.slot(t).values();
        // Element (m, n) of diag(w) u arranged as an M x N matrix.
        let x = DMatrix::from_fn(m, n, |mi, ni| {
            let idx = geometry.flat_index(mi + 1, ni + 1);
            w[idx] * u[idx]
        });
        // a(theta, phi)^H diag(w) u = az(theta)^H X conj(el(phi)).
        let gains = az_probe.adjoint() * x * el_probe.conjugate();
        for p in 0..probe.len() {
            for q in 0..probe.len() {
                power[(q, p)] += gains[(p, q)].norm_sqr() / schedule.slots() as f64;
            }
        }
    }

    Ok(FieldMap {
        azimuth_deg: probe.points().to_vec(),
        elevation_deg: probe.points().to_vec(),
        power,
        sensor_angles: scenario
            .sensors
            .iter()
            .map(|s| (s.azimuth_deg(), s.elevation_deg()))
            .collect(),
    })
}
