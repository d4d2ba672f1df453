//! Command-line driver: simulation, estimation, beamforming, bounds, and the
//! Monte Carlo experiment tables, all file based.
//!
//! Exit codes: 0 on success, 2 for configuration problems, 3 for numerical
//! failures.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ris_doa::beamformer::{
    bcgd_schedule_with_jitter, build_sensor_objective, crlb_min_schedule, random_schedule,
    UnitModulusVector,
};
use ris_doa::config::{BeamformerMethod, ExperimentConfig};
use ris_doa::crlb::{build_crlb_surrogate, crlb, fisher_information};
use ris_doa::error::Error;
use ris_doa::estimator::{estimate, EstimatorOptions};
use ris_doa::experiment::{
    alternating_optimize, convergence_run, field_map, snr_sweep, RunOptions, TableRow,
};
use ris_doa::geometry::Dictionary;
use ris_doa::output;
use ris_doa::scene::{
    combined_source_column, measurement_operator, BeamformingSchedule, NoiseSpec, Scenario,
    SensorArray, SynthesisMode, synthesize_observation,
};

#[derive(Parser)]
#[command(name = "risdoa", version, about = "RIS-assisted 3D DoA estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a default experiment configuration (full-scale scenario).
    Init {
        /// Target file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize one observation under a schedule and write it to a file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Schedule file; a fresh one is generated per --method when omitted.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Schedule generator when no file is given: random, bcgd, crlb_surrogate.
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate DoAs from an observation file; writes estimate.json.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        /// Observation file produced by `simulate`.
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the recovered target count.
        #[arg(short, long)]
        k: Option<usize>,
    },
    /// Optimize a phase schedule from the configured scenario.
    Beamform {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the Cramér–Rao bound for a scenario and schedule.
    Crlb {
        #[arg(long)]
        config: PathBuf,
        /// Schedule file; a seeded random schedule when omitted.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One alternating optimization run; writes run.csv and run.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// RMSE versus SNR over methods; writes sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated SNR list in dB, overriding the config.
        #[arg(long)]
        snr: Option<String>,
        /// Comma-separated method list, overriding the config.
        #[arg(long)]
        method: Option<String>,
        /// Monte Carlo trials per cell, overriding the config.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// RMSE versus iteration; writes converge.csv.
    Converge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Radiated-power map of a schedule; writes fieldmap.csv and sensors.csv.
    Fieldmap {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Probe grid step in degrees; must divide the 180-degree span.
        #[arg(long, default_value_t = 1.0)]
        resolution: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::InvalidAngle(_)
        | Error::InvalidGrid(_)
        | Error::InvalidScenario(_)
        | Error::DirectionDomain { .. }
        | Error::DimensionMismatch(_) => 2,
        Error::UnitModulus { .. }
        | Error::NotHermitian(_)
        | Error::SingularFisher { .. }
        | Error::NoiseCalibration(_)
        | Error::Estimation { .. } => 3,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(error) = dispatch(cli) {
        eprintln!("error: {error}");
        std::process::exit(exit_code(&error));
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn parse_methods(spec: &str) -> Result<Vec<BeamformerMethod>, Error> {
    spec.split(',')
        .map(|tok| tok.trim().parse::<BeamformerMethod>())
        .collect()
}

fn parse_snr_list(spec: &str) -> Result<Vec<f64>, Error> {
    spec.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad SNR value '{tok}': {e}")))
        })
        .collect()
}

/// Schedule for `simulate`/`beamform`/`fieldmap`: from the requested method,
/// seeded, with bcgd and the surrogate guided by the scenario's targets.
fn build_schedule(
    config: &ExperimentConfig,
    method: BeamformerMethod,
    rng: &mut ChaCha8Rng,
) -> Result<BeamformingSchedule, Error> {
    let scenario = &config.scenario;
    let mn = scenario.geometry.element_count();
    let slots = scenario.snapshot_count();
    match method {
        BeamformerMethod::Random => Ok(random_schedule(slots, mn, rng)),
        BeamformerMethod::Bcgd => {
            let sensor_array = SensorArray::from_scenario(scenario)?;
            let source = combined_source_column(scenario, SynthesisMode::Exact)?;
            let objectives = (0..sensor_array.sensor_count())
                .map(|j| build_sensor_objective(j, &sensor_array, &source))
                .collect::<Result<Vec<_>, Error>>()?;
            let init = UnitModulusVector::random(mn, rng);
            bcgd_schedule_with_jitter(
                &objectives,
                slots,
                &init,
                config.beamformer.inner_iters,
                config.beamformer.slot_jitter_rad,
                rng,
            )
        }
        BeamformerMethod::CrlbSurrogate => {
            let sensor_array = SensorArray::from_scenario(scenario)?;
            let rho = scenario.path_loss.weight()?;
            let sigma2 = resolve_sigma2(config, rng)?;
            let surrogate = build_crlb_surrogate(
                &scenario.targets,
                &sensor_array,
                &scenario.geometry,
                slots,
                rho,
                sigma2,
            )?;
            let init = UnitModulusVector::random(slots * mn, rng);
            let budget = config.beamformer.inner_iters * sensor_array.sensor_count();
            crlb_min_schedule(&surrogate, slots, &init, budget)
        }
    }
}

/// Noise power for bound evaluation: explicit when configured, otherwise
/// calibrated against a seeded random schedule.
fn resolve_sigma2(config: &ExperimentConfig, rng: &mut ChaCha8Rng) -> Result<f64, Error> {
    let scenario = &config.scenario;
    match scenario.noise {
        NoiseSpec::Power(p) if p > 0.0 => Ok(p),
        NoiseSpec::Power(_) => Err(Error::NoiseCalibration(
            "bound evaluation needs a positive noise power".into(),
        )),
        NoiseSpec::SnrDb(_) => {
            let schedule = random_schedule(
                scenario.snapshot_count(),
                scenario.geometry.element_count(),
                rng,
            );
            let obs = synthesize_observation(scenario, &schedule, SynthesisMode::Exact, rng)?;
            Ok(obs.noise_power)
        }
    }
}

fn print_rows(rows: &[TableRow]) {
    for row in rows {
        let crlb = row
            .crlb_deg
            .map(|v| format!("{v:.3e}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:>15}  snr {:>6.1} dB  iter {:>2}  rmse {:>9.4} deg (theta {:.4}, phi {:.4})  crlb {}  trials {}  converged {:.0}%",
            row.method,
            row.snr_db,
            row.iteration,
            row.rmse_deg,
            row.rmse_theta_deg,
            row.rmse_phi_deg,
            crlb,
            row.trials,
            row.converged_frac * 100.0
        );
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Init { out } => {
            let scenario = Scenario::paper_default()?;
            let config = ExperimentConfig::for_scenario(scenario);
            let text = serde_json::to_string_pretty(&config)? + "\n";
            match out {
                Some(path) => {
                    std::fs::write(&path, text)?;
                    println!("wrote {}", path.display());
                }
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Simulate {
            config,
            seed,
            schedule,
            method,
            out,
        } => {
            let config = load_config(&config, seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let schedule = match schedule {
                Some(path) => output::read_schedule(&path)?,
                None => {
                    let method = match method {
                        Some(name) => name.parse()?,
                        None => BeamformerMethod::Random,
                    };
                    build_schedule(&config, method, &mut rng)?
                }
            };
            let observation = synthesize_observation(
                &config.scenario,
                &schedule,
                SynthesisMode::Exact,
                &mut rng,
            )?;
            std::fs::create_dir_all(&out)?;
            output::write_observation(&out.join("observation.json"), &observation)?;
            output::write_manifest(&out.join("manifest.json"), &output::RunManifest::new("simulate", &config))?;
            println!(
                "wrote {} ({} slots x {} sensors, sigma2 {:.3e})",
                out.join("observation.json").display(),
                observation.slots(),
                observation.sensor_count(),
                observation.noise_power
            );
            Ok(())
        }
        Command::Estimate {
            config,
            obs,
            out,
            k,
        } => {
            let config = load_config(&config, None)?;
            let observation = output::read_observation(&obs)?;
            let grid = config.grid.build()?;
            let dictionary = Dictionary::build(grid.clone(), grid, &config.scenario.geometry);
            let options = match k {
                Some(k) => EstimatorOptions::known_k(k),
                None if config.estimator.k_known => {
                    EstimatorOptions::known_k(config.scenario.target_count())
                }
                None => EstimatorOptions::residual_stop(
                    config
                        .estimator
                        .k_cap
                        .unwrap_or(2 * config.scenario.target_count()),
                    config.estimator.residual_tol,
                ),
            };
            let (doa, solution, projection) = estimate(&observation, &dictionary, &options)?;
            std::fs::create_dir_all(&out)?;
            output::write_estimate(&out.join("estimate.json"), &doa)?;
            if projection.rank_flag {
                eprintln!("warning: measurement operator is rank deficient; back-projection truncated");
            }
            println!(
                "recovered {} targets, final residual {:.3e}",
                doa.len(),
                solution.residual_history.last().copied().unwrap_or(0.0)
            );
            for t in &doa.targets {
                println!(
                    "  theta {:>8.3} deg  phi {:>8.3} deg  (grid {:.1}/{:.1}, offsets {:+.3}/{:+.3})",
                    t.azimuth_deg(),
                    t.elevation_deg(),
                    t.theta_grid,
                    t.phi_grid,
                    t.delta_theta,
                    t.delta_phi
                );
            }
            Ok(())
        }
        Command::Beamform {
            config,
            seed,
            method,
            out,
        } => {
            let config = load_config(&config, seed)?;
            let method = match method {
                Some(name) => name.parse()?,
                None => config.beamformer.method,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let schedule = build_schedule(&config, method, &mut rng)?;
            std::fs::create_dir_all(&out)?;
            output::write_schedule(&out.join("schedule.txt"), &schedule, &config.scenario.geometry)?;
            output::write_manifest(&out.join("manifest.json"), &output::RunManifest::new("beamform", &config))?;
            println!(
                "wrote {} ({} slots of {} phases, method {})",
                out.join("schedule.txt").display(),
                schedule.slots(),
                schedule.element_count(),
                method.name()
            );
            Ok(())
        }
        Command::Crlb {
            config,
            schedule,
            seed,
            out,
        } => {
            let config = load_config(&config, seed)?;
            let scenario = &config.scenario;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let schedule = match schedule {
                Some(path) => output::read_schedule(&path)?,
                None => random_schedule(
                    scenario.snapshot_count(),
                    scenario.geometry.element_count(),
                    &mut rng,
                ),
            };
            let sensor_array = SensorArray::from_scenario(scenario)?;
            let z = measurement_operator(&sensor_array, &schedule)?;
            let sigma2 = match scenario.noise {
                NoiseSpec::Power(p) if p > 0.0 => p,
                NoiseSpec::Power(_) => {
                    return Err(Error::NoiseCalibration(
                        "bound evaluation needs a positive noise power".into(),
                    ))
                }
                NoiseSpec::SnrDb(snr_db) => {
                    let u = combined_source_column(scenario, SynthesisMode::Exact)?;
                    let clean = &z * u;
                    let gamma = 10f64.powf(snr_db / 10.0);
                    clean.norm_squared() / schedule.slots() as f64 / gamma
                }
            };
            let fim = fisher_information(&z, &scenario.targets, &scenario.prs(), sigma2, &scenario.geometry)?;
            let value = crlb(&fim)?;
            println!(
                "crlb: total {:.6e} deg^2 ({:.6e} rad^2), per-angle rms {:.6e} deg, condition {:.3e}",
                value.total_deg2(),
                value.total_rad2,
                value.per_angle_rms_deg(),
                fim.condition_number
            );
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                let report = serde_json::json!({
                    "schema_version": ris_doa::config::SCHEMA_VERSION,
                    "total_rad2": value.total_rad2,
                    "total_deg2": value.total_deg2(),
                    "per_parameter_deg2": value.per_parameter_deg2(),
                    "per_angle_rms_deg": value.per_angle_rms_deg(),
                    "condition_number": fim.condition_number,
                    "sigma2": sigma2,
                });
                std::fs::write(
                    dir.join("crlb.json"),
                    serde_json::to_string_pretty(&report)? + "\n",
                )?;
            }
            Ok(())
        }
        Command::Run { config, seed, out } => {
            let config = load_config(&config, seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let result = alternating_optimize(&config, &mut rng, RunOptions::default())?;
            std::fs::create_dir_all(&out)?;
            output::write_run_result(&out.join("run.json"), &result)?;
            let rows: Vec<TableRow> = result
                .iterations
                .iter()
                .enumerate()
                .map(|(i, it)| TableRow {
                    method: config.beamformer.method.name().to_string(),
                    snr_db: match config.scenario.noise {
                        NoiseSpec::SnrDb(v) => v,
                        NoiseSpec::Power(_) => f64::NAN,
                    },
                    iteration: i,
                    rmse_theta_deg: it.rmse_theta_deg,
                    rmse_phi_deg: it.rmse_phi_deg,
                    rmse_deg: it.rmse_deg,
                    crlb_deg: result.crlb_deg,
                    trials: 1,
                    converged_frac: if result.converged { 1.0 } else { 0.0 },
                })
                .collect();
            output::write_table_csv(&out.join("run.csv"), &rows)?;
            output::write_schedule(&out.join("schedule.txt"), &result.final_schedule, &config.scenario.geometry)?;
            output::write_manifest(&out.join("manifest.json"), &output::RunManifest::new("run", &config))?;
            if result.snr_warning {
                eprintln!("warning: received SNR fell below the configured minimum");
            }
            println!(
                "run: {} iterations, converged {}, final rmse {:.4} deg",
                result.iterations_used,
                result.converged,
                result.iterations.last().map(|it| it.rmse_deg).unwrap_or(f64::NAN)
            );
            print_rows(&rows);
            Ok(())
        }
        Command::Sweep {
            config,
            seed,
            snr,
            method,
            trials,
            out,
        } => {
            let mut config = load_config(&config, seed)?;
            if let Some(trials) = trials {
                config.monte_carlo.trials = trials;
            }
            let snr_list = match (&snr, &config.sweep) {
                (Some(spec), _) => parse_snr_list(spec)?,
                (None, Some(sweep)) => sweep.snr_db.clone(),
                (None, None) => vec![0.0, 5.0, 10.0, 15.0, 20.0],
            };
            let methods = match (&method, &config.sweep) {
                (Some(spec), _) => parse_methods(spec)?,
                (None, Some(sweep)) => sweep.methods.clone(),
                (None, None) => vec![BeamformerMethod::Random, BeamformerMethod::Bcgd],
            };
            let rows = snr_sweep(&config, &snr_list, &methods)?;
            std::fs::create_dir_all(&out)?;
            output::write_table_csv(&out.join("sweep.csv"), &rows)?;
            output::write_manifest(&out.join("manifest.json"), &output::RunManifest::new("sweep", &config))?;
            print_rows(&rows);
            Ok(())
        }
        Command::Converge {
            config,
            seed,
            trials,
            out,
        } => {
            let mut config = load_config(&config, seed)?;
            if let Some(trials) = trials {
                config.monte_carlo.trials = trials;
            }
            let rows = convergence_run(&config)?;
            std::fs::create_dir_all(&out)?;
            output::write_table_csv(&out.join("converge.csv"), &rows)?;
            output::write_manifest(&out.join("manifest.json"), &output::RunManifest::new("converge", &config))?;
            print_rows(&rows);
            Ok(())
        }
        Command::Fieldmap {
            config,
            schedule,
            seed,
            resolution,
            out,
        } => {
            let config = load_config(&config, seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let schedule = match schedule {
                Some(path) => output::read_schedule(&path)?,
                None => build_schedule(&config, config.beamformer.method, &mut rng)?,
            };
            let map = field_map(&schedule, &config.scenario, resolution)?;
            std::fs::create_dir_all(&out)?;
            output::write_field_map_csv(&out.join("fieldmap.csv"), &map)?;
            let mut sensors = String::from("theta_deg,phi_deg\n");
            for (t, p) in &map.sensor_angles {
                sensors.push_str(&format!("{t:.6},{p:.6}\n"));
            }
            std::fs::write(out.join("sensors.csv"), sensors)?;
            output::write_manifest(&out.join("manifest.json"), &output::RunManifest::new("fieldmap", &config))?;
            println!(
                "wrote {} ({} x {} probe grid)",
                out.join("fieldmap.csv").display(),
                map.elevation_deg.len(),
                map.azimuth_deg.len()
            );
            Ok(())
        }
    }
}
