//! Two-step sparse DoA estimation: pseudoinverse back-projection of the
//! stacked observation, then greedy joint recovery over the four coupled
//! coefficient matrices, then off-grid refinement.
//!
//! After back-projection the model is
//! `Y = [A_phi B_phi] [[P1, P2], [P3, P4]] [A_theta^T; B_theta^T]` with
//! `P1 = X`, `P2 = X G_alpha^T`, `P3 = G_beta X`, `P4 = G_beta X G_alpha^T`,
//! all four sharing one sparsity pattern. Each greedy iteration correlates
//! the residual against the four atom families, selects the strongest
//! (elevation, azimuth) cell, and jointly refits all selected atoms by least
//! squares. The off-grid offsets fall out of the coefficient ratios
//! `P2 / P1` and `P3 / P1` (per radian, converted to degrees at this
//! boundary and clipped to half a grid cell).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Dictionary, C64};
use crate::scene::Observation;

/// Relative singular-value cutoff for the back-projection pseudoinverse.
const BACKPROJECT_RCOND: f64 = 1e-10;

/// Relative singular-value cutoff for the per-iteration joint refit.
const REFIT_RCOND: f64 = 1e-12;

/// Division floor: offsets whose `|p1|` falls below this fraction of the
/// largest recovered amplitude are zeroed and flagged.
const AMPLITUDE_FLOOR_REL: f64 = 1e-6;

/// Back-projected observation `vec(Y) = Z^† y`, reshaped to N x M.
#[derive(Debug, Clone)]
pub struct BackProjection {
    /// N x M matrix Y under the project-wide column-major vec convention.
    pub matrix: DMatrix<C64>,
    /// Norm of `y - Z Z^† y`.
    pub residual_norm: f64,
    /// Set when singular values below tolerance were truncated (the operator
    /// is column-rank deficient at the working precision).
    pub rank_flag: bool,
}

/// Minimum-norm least-squares solve of `Z vec(Y) = y` via thin SVD.
pub fn backproject(
    z: &DMatrix<C64>,
    y: &DVector<C64>,
    n_rows: usize,
    m_cols: usize,
) -> Result<BackProjection> {
    if z.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "operator has {} rows, observation has {} entries",
            z.nrows(),
            y.len()
        )));
    }
    if z.ncols() != n_rows * m_cols {
        return Err(Error::DimensionMismatch(format!(
            "operator has {} columns, expected {n_rows} x {m_cols}",
            z.ncols()
        )));
    }

    let svd = z.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let cutoff = BACKPROJECT_RCOND * sigma_max;

    let full_rank = z.nrows().min(z.ncols());
    let mut coeffs = u.adjoint() * y;
    let mut kept = 0;
    for (i, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma > cutoff && sigma > 0.0 {
            coeffs[i] /= C64::new(sigma, 0.0);
            kept += 1;
        } else {
            coeffs[i] = C64::new(0.0, 0.0);
        }
    }
    let solution = v_t.adjoint() * coeffs;
    let residual_norm = (y - z * &solution).norm();
    // Rank deficiency also when the operator is too short to ever reach full
    // column rank.
    let rank_flag = kept < z.ncols() || full_rank < z.ncols();

    Ok(BackProjection {
        matrix: DMatrix::from_column_slice(n_rows, m_cols, solution.as_slice()),
        residual_norm,
        rank_flag,
    })
}

/// Joint sparse solution: selected grid cells with the four coefficient
/// values at each cell.
#[derive(Debug, Clone)]
pub struct SparseSolution {
    /// Selected (elevation index q, azimuth index p) cells in pick order.
    pub support: Vec<(usize, usize)>,
    /// X entries at the support.
    pub p1: Vec<C64>,
    /// X Gamma_alpha^T entries: p1 times the azimuth offset (radians).
    pub p2: Vec<C64>,
    /// Gamma_beta X entries: p1 times the elevation offset (radians).
    pub p3: Vec<C64>,
    /// Gamma_beta X Gamma_alpha^T entries; consistency product, unused by the
    /// estimate itself.
    pub p4: Vec<C64>,
    /// Residual norms: `||Y||` followed by the norm after each refit;
    /// non-increasing.
    pub residual_history: Vec<f64>,
}

impl SparseSolution {
    /// Consistency diagnostic per support entry: `|p4 - p2 p3 / p1|`, which
    /// vanishes when the four coefficients share one rank-one structure.
    /// Entries with unreliable `p1` report NaN.
    pub fn p4_consistency(&self) -> Vec<f64> {
        let max_p1 = self.p1.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        let floor = AMPLITUDE_FLOOR_REL * max_p1;
        self.p1
            .iter()
            .zip(self.p2.iter().zip(self.p3.iter().zip(self.p4.iter())))
            .map(|(p1, (p2, (p3, p4)))| {
                if p1.norm() < floor || p1.norm() == 0.0 {
                    f64::NAN
                } else {
                    (p4 - p2 * p3 / p1).norm()
                }
            })
            .collect()
    }
}

/// Column norms of a matrix.
fn column_norms(m: &DMatrix<C64>) -> Vec<f64> {
    (0..m.ncols()).map(|j| m.column(j).norm()).collect()
}

/// vec of the rank-one atom `el az^T` under column-major `vec`: the Kronecker
/// product `az ⊗ el`.
fn atom_column(az: nalgebra::DVectorView<C64>, el: nalgebra::DVectorView<C64>) -> DVector<C64> {
    let (m, n) = (az.len(), el.len());
    let mut out = DVector::zeros(m * n);
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = az[i] * el[j];
        }
    }
    out
}

/// Greedy joint recovery of `P1..P4` from the back-projected matrix.
///
/// Stops after `k_max` selections or once the residual norm falls to
/// `residual_tol * ||Y||` (a machine-precision floor on that threshold stops
/// the greedy loop when the residual is exhausted even with a zero
/// tolerance).
pub fn joint_2d_omp(
    y: &DMatrix<C64>,
    dictionary: &Dictionary,
    k_max: usize,
    residual_tol: f64,
) -> Result<SparseSolution> {
    let q_len = dictionary.elevation_len();
    let p_len = dictionary.azimuth_len();
    if dictionary.elevation_atoms.nrows() != y.nrows()
        || dictionary.azimuth_atoms.nrows() != y.ncols()
    {
        return Err(Error::DimensionMismatch(format!(
            "back-projection is {} x {}, dictionary expects {} x {}",
            y.nrows(),
            y.ncols(),
            dictionary.elevation_atoms.nrows(),
            dictionary.azimuth_atoms.nrows()
        )));
    }
    if k_max > p_len * q_len {
        return Err(Error::Estimation {
            message: format!("k_max {k_max} exceeds grid size {}", p_len * q_len),
            iteration: None,
        });
    }
    if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Estimation {
            message: "non-finite entries in back-projected matrix".into(),
            iteration: None,
        });
    }

    let az_atom_norm = column_norms(&dictionary.azimuth_atoms);
    let az_deriv_norm = column_norms(&dictionary.azimuth_derivs);
    let el_atom_norm = column_norms(&dictionary.elevation_atoms);
    let el_deriv_norm = column_norms(&dictionary.elevation_derivs);

    let norm_y = y.norm();
    let stop_norm = norm_y * residual_tol.max(1e-13);
    let vec_y = DVector::from_column_slice(y.as_slice());

    let mut support: Vec<(usize, usize)> = Vec::new();
    let mut residual = y.clone();
    let mut residual_history = vec![norm_y];
    let mut coefficients = DVector::zeros(0);

    while support.len() < k_max {
        if residual.norm() <= stop_norm {
            break;
        }

        // Correlations of the residual with the four atom families:
        // C = A_phi^H R A_theta^*, D = B_phi^H R A_theta^*,
        // E = A_phi^H R B_theta^*, F = B_phi^H R B_theta^*.
        let ca = dictionary.elevation_atoms.adjoint() * &residual * dictionary.azimuth_atoms.conjugate();
        let cd = dictionary.elevation_derivs.adjoint() * &residual * dictionary.azimuth_atoms.conjugate();
        let ce = dictionary.elevation_atoms.adjoint() * &residual * dictionary.azimuth_derivs.conjugate();
        let cf = dictionary.elevation_derivs.adjoint() * &residual * dictionary.azimuth_derivs.conjugate();

        // Joint score of a cell: sum of squared correlation magnitudes over
        // the four families, each normalized by its atom norm. Phase
        // invariant; derivative atoms with zero norm (grid edges) contribute
        // nothing.
        let mut best: Option<(f64, usize, usize)> = None;
        for p in 0..p_len {
            for q in 0..q_len {
                if support.contains(&(q, p)) {
                    continue;
                }
                let term = |value: C64, norm_a: f64, norm_b: f64| -> f64 {
                    let denom = norm_a * norm_b;
                    if denom > 0.0 {
                        let v = value.norm() / denom;
                        v * v
                    } else {
                        0.0
                    }
                };
                let score = term(ca[(q, p)], el_atom_norm[q], az_atom_norm[p])
                    + term(cd[(q, p)], el_deriv_norm[q], az_atom_norm[p])
                    + term(ce[(q, p)], el_atom_norm[q], az_deriv_norm[p])
                    + term(cf[(q, p)], el_deriv_norm[q], az_deriv_norm[p]);
                if best.map_or(true, |(s, _, _)| score > s) {
                    best = Some((score, q, p));
                }
            }
        }
        let (_, q, p) = best.expect("grid not exhausted while support < k_max");
        support.push((q, p));

        // Joint least-squares refit over all selected cells, four atoms per
        // cell: (a_e a_a^T), (a_e b_a^T), (b_e a_a^T), (b_e b_a^T).
        let cols = 4 * support.len();
        let mut phi = DMatrix::zeros(vec_y.len(), cols);
        for (s, &(sq, sp)) in support.iter().enumerate() {
            let aa = dictionary.azimuth_atoms.column(sp);
            let ba = dictionary.azimuth_derivs.column(sp);
            let ae = dictionary.elevation_atoms.column(sq);
            let be = dictionary.elevation_derivs.column(sq);
            phi.set_column(4 * s, &atom_column(aa, ae));
            phi.set_column(4 * s + 1, &atom_column(ba, ae));
            phi.set_column(4 * s + 2, &atom_column(aa, be));
            phi.set_column(4 * s + 3, &atom_column(ba, be));
        }
        let svd = phi.clone().svd(true, true);
        let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        coefficients = svd
            .solve(&vec_y, REFIT_RCOND * sigma_max)
            .map_err(|e| Error::Estimation {
                message: format!("joint refit failed: {e}"),
                iteration: Some(support.len()),
            })?;

        let fitted = &phi * &coefficients;
        let residual_vec = &vec_y - fitted;
        residual = DMatrix::from_column_slice(y.nrows(), y.ncols(), residual_vec.as_slice());
        residual_history.push(residual.norm());
    }

    let mut solution = SparseSolution {
        support: support.clone(),
        p1: Vec::new(),
        p2: Vec::new(),
        p3: Vec::new(),
        p4: Vec::new(),
        residual_history,
    };
    for s in 0..support.len() {
        solution.p1.push(coefficients[4 * s]);
        solution.p2.push(coefficients[4 * s + 1]);
        solution.p3.push(coefficients[4 * s + 2]);
        solution.p4.push(coefficients[4 * s + 3]);
    }
    Ok(solution)
}

/// One recovered target: grid cell plus off-grid offsets, all in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    /// Azimuth grid angle (degrees).
    pub theta_grid: f64,
    /// Elevation grid angle (degrees).
    pub phi_grid: f64,
    /// Azimuth offset (degrees), clipped to half the grid step.
    pub delta_theta: f64,
    /// Elevation offset (degrees), clipped to half the grid step.
    pub delta_phi: f64,
    pub amplitude_re: f64,
    pub amplitude_im: f64,
    /// False when `|p1|` fell below the division floor and the offsets were
    /// zeroed.
    #[serde(default = "serde_true")]
    pub offset_reliable: bool,
}

fn serde_true() -> bool {
    true
}

impl TargetEstimate {
    /// Total azimuth estimate in degrees.
    pub fn azimuth_deg(&self) -> f64 {
        self.theta_grid + self.delta_theta
    }

    /// Total elevation estimate in degrees.
    pub fn elevation_deg(&self) -> f64 {
        self.phi_grid + self.delta_phi
    }

    pub fn amplitude(&self) -> C64 {
        C64::new(self.amplitude_re, self.amplitude_im)
    }
}

/// Full estimate: one entry per recovered target, in selection order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DoaEstimate {
    pub targets: Vec<TargetEstimate>,
}

impl DoaEstimate {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Convert a sparse solution into angle estimates. Offsets come from
/// `Re(p2 / p1)` (azimuth) and `Re(p3 / p1)` (elevation) in radians, converted
/// to degrees and clipped to half a grid cell; entries whose `|p1|` is below
/// `1e-6` of the largest amplitude get zero offsets and a reliability flag.
pub fn recover_offgrid(solution: &SparseSolution, dictionary: &Dictionary) -> DoaEstimate {
    let max_p1 = solution.p1.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    let floor = AMPLITUDE_FLOOR_REL * max_p1;
    let az_half = dictionary.azimuth_grid.step_deg() / 2.0;
    let el_half = dictionary.elevation_grid.step_deg() / 2.0;

    let targets = solution
        .support
        .iter()
        .enumerate()
        .map(|(i, &(q, p))| {
            let p1 = solution.p1[i];
            let reliable = p1.norm() >= floor && p1.norm() > 0.0;
            let (delta_theta, delta_phi) = if reliable {
                let dt = (solution.p2[i] / p1).re.to_degrees();
                let dp = (solution.p3[i] / p1).re.to_degrees();
                (dt.clamp(-az_half, az_half), dp.clamp(-el_half, el_half))
            } else {
                (0.0, 0.0)
            };
            TargetEstimate {
                theta_grid: dictionary.azimuth_grid.point(p),
                phi_grid: dictionary.elevation_grid.point(q),
                delta_theta,
                delta_phi,
                amplitude_re: p1.re,
                amplitude_im: p1.im,
                offset_reliable: reliable,
            }
        })
        .collect();
    DoaEstimate { targets }
}

/// Stopping rule for the greedy stage.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorOptions {
    /// Maximum number of recovered targets; set to the known K when the
    /// target count is given.
    pub k_max: usize,
    /// Relative residual threshold for early stopping with unknown K; zero
    /// disables it.
    pub residual_tol: f64,
}

impl EstimatorOptions {
    /// Known target count: exactly `k` selections unless the residual is
    /// exhausted first.
    pub fn known_k(k: usize) -> Self {
        Self {
            k_max: k,
            residual_tol: 0.0,
        }
    }

    /// Unknown target count: stop on the residual threshold, never selecting
    /// more than `k_cap` cells.
    pub fn residual_stop(k_cap: usize, residual_tol: f64) -> Self {
        Self {
            k_max: k_cap,
            residual_tol,
        }
    }
}

/// Full pipeline: back-project, greedy joint recovery, off-grid refinement.
pub fn estimate(
    observation: &Observation,
    dictionary: &Dictionary,
    options: &EstimatorOptions,
) -> Result<(DoaEstimate, SparseSolution, BackProjection)> {
    let n_rows = dictionary.elevation_atoms.nrows();
    let m_cols = dictionary.azimuth_atoms.nrows();
    let projection = backproject(&observation.operator, &observation.stacked, n_rows, m_cols)?;
    let solution = joint_2d_omp(
        &projection.matrix,
        dictionary,
        options.k_max,
        options.residual_tol,
    )?;
    let doa = recover_offgrid(&solution, dictionary);
    Ok((doa, solution, projection))
}
