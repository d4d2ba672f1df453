//! Uniform planar array geometry, steering vectors, and grid dictionaries.
//!
//! Angle conventions used project-wide:
//!
//! - Public interfaces take azimuth/elevation in **degrees**, both restricted
//!   to [-90, 90].
//! - Steering-vector derivatives are computed **per radian**. Off-grid offsets
//!   cross back to degrees at a single boundary in the estimator.
//! - Element (m, n) of the M x N surface maps to flat index
//!   `(m - 1) * N + (n - 1)`: the elevation index varies fastest, so the flat
//!   UPA steering vector equals `azimuth_steering ⊗ elevation_steering`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};

/// Complex scalar used throughout the crate.
pub type C64 = Complex<f64>;

/// Convention mapping a 2-D element index to a flat vector index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum ElementOrdering {
    /// Element (m, n), 1-based, sits at flat index `(m - 1) * n_count + (n - 1)`.
    #[default]
    ElevationFastest,
}

impl ElementOrdering {
    /// Flat index of 1-based element (m, n) on an array with `n_count`
    /// elevation-axis elements.
    pub fn flat_index(self, m: usize, n: usize, n_count: usize) -> usize {
        match self {
            ElementOrdering::ElevationFastest => (m - 1) * n_count + (n - 1),
        }
    }
}

/// Uniform planar array: M x N elements, uniform spacing, fixed wavelength.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ArrayGeometry {
    /// Azimuth-axis element count M.
    pub m_count: usize,
    /// Elevation-axis element count N.
    pub n_count: usize,
    /// Element spacing d in meters.
    pub spacing: f64,
    /// Carrier wavelength lambda in meters.
    pub wavelength: f64,
    /// Element-to-flat-index convention.
    #[serde(default)]
    pub ordering: ElementOrdering,
}

impl ArrayGeometry {
    pub fn new(m_count: usize, n_count: usize, spacing: f64, wavelength: f64) -> Result<Self> {
        if m_count < 1 || n_count < 1 {
            return Err(Error::InvalidScenario(format!(
                "array needs at least one element per axis, got {m_count} x {n_count}"
            )));
        }
        if !(spacing > 0.0) || !(wavelength > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "spacing and wavelength must be positive, got d = {spacing}, lambda = {wavelength}"
            )));
        }
        Ok(Self {
            m_count,
            n_count,
            spacing,
            wavelength,
            ordering: ElementOrdering::ElevationFastest,
        })
    }

    /// Half-wavelength spacing with a 0.1 m carrier wavelength.
    pub fn half_wavelength(m_count: usize, n_count: usize) -> Result<Self> {
        let wavelength = 0.1;
        Self::new(m_count, n_count, wavelength / 2.0, wavelength)
    }

    /// Total element count MN.
    pub fn element_count(&self) -> usize {
        self.m_count * self.n_count
    }

    /// Flat index of 1-based element (m, n).
    pub fn flat_index(&self, m: usize, n: usize) -> usize {
        self.ordering.flat_index(m, n, self.n_count)
    }

    /// Phase advance 2*pi*d/lambda * (k - 1) * sin(angle) for element k.
    fn phase(&self, k: usize, sin_angle: f64) -> f64 {
        2.0 * PI / self.wavelength * (k as f64) * self.spacing * sin_angle
    }

    /// Azimuth steering vector: entry m is exp(-j * Psi_m(theta)) with
    /// Psi_m = (2 pi / lambda) (m - 1) d sin(theta). Length M, first entry 1.
    pub fn azimuth_steering(&self, theta_deg: f64) -> DVector<C64> {
        let s = theta_deg.to_radians().sin();
        DVector::from_fn(self.m_count, |m, _| {
            C64::from_polar(1.0, -self.phase(m, s))
        })
    }

    /// Elevation steering vector: entry n is exp(-j * Psi_n(phi)). Length N.
    pub fn elevation_steering(&self, phi_deg: f64) -> DVector<C64> {
        let s = phi_deg.to_radians().sin();
        DVector::from_fn(self.n_count, |n, _| {
            C64::from_polar(1.0, -self.phase(n, s))
        })
    }

    /// Derivative of `azimuth_steering` with respect to theta **in radians**:
    /// entry m is -j (2 pi / lambda) (m - 1) d cos(theta) exp(-j Psi_m).
    /// Entry 1 is always zero.
    pub fn azimuth_derivative(&self, theta_deg: f64) -> DVector<C64> {
        let rad = theta_deg.to_radians();
        let (s, c) = (rad.sin(), rad.cos());
        DVector::from_fn(self.m_count, |m, _| {
            let scale = 2.0 * PI / self.wavelength * (m as f64) * self.spacing * c;
            -C64::i() * scale * C64::from_polar(1.0, -self.phase(m, s))
        })
    }

    /// Derivative of `elevation_steering` with respect to phi in radians.
    pub fn elevation_derivative(&self, phi_deg: f64) -> DVector<C64> {
        let rad = phi_deg.to_radians();
        let (s, c) = (rad.sin(), rad.cos());
        DVector::from_fn(self.n_count, |n, _| {
            let scale = 2.0 * PI / self.wavelength * (n as f64) * self.spacing * c;
            -C64::i() * scale * C64::from_polar(1.0, -self.phase(n, s))
        })
    }

    /// Derivative of the steering vector along one angle axis, per radian.
    pub fn steering_derivative(&self, angle_deg: f64, axis: AngleAxis) -> DVector<C64> {
        match axis {
            AngleAxis::Azimuth => self.azimuth_derivative(angle_deg),
            AngleAxis::Elevation => self.elevation_derivative(angle_deg),
        }
    }

    /// Flat MN steering vector `azimuth_steering ⊗ elevation_steering` under
    /// the elevation-fastest ordering.
    pub fn upa_steering(&self, angle: &AnglePair) -> DVector<C64> {
        let az = self.azimuth_steering(angle.azimuth_deg());
        let el = self.elevation_steering(angle.elevation_deg());
        self.separable_column(&az, &el)
    }

    /// Assemble a flat MN vector from per-axis factors: flat entry of
    /// element (m, n) is `az[m] * el[n]`.
    pub fn separable_column(&self, az: &DVector<C64>, el: &DVector<C64>) -> DVector<C64> {
        assert_eq!(az.len(), self.m_count, "azimuth factor length");
        assert_eq!(el.len(), self.n_count, "elevation factor length");
        let mut out = DVector::zeros(self.element_count());
        for m in 1..=self.m_count {
            for n in 1..=self.n_count {
                out[self.flat_index(m, n)] = az[m - 1] * el[n - 1];
            }
        }
        out
    }
}

/// Which angle axis a 1-D operation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleAxis {
    Azimuth,
    Elevation,
}

/// Validated (azimuth, elevation) pair in degrees.
///
/// Both angles are confined to [-90, 90] and the pair must satisfy
/// cos^2(phi) >= sin^2(theta) so that the direction vector's first component
/// is real.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "AnglePairRaw", into = "AnglePairRaw")]
pub struct AnglePair {
    azimuth_deg: f64,
    elevation_deg: f64,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct AnglePairRaw {
    azimuth_deg: f64,
    elevation_deg: f64,
}

impl TryFrom<AnglePairRaw> for AnglePair {
    type Error = Error;
    fn try_from(raw: AnglePairRaw) -> Result<Self> {
        AnglePair::new(raw.azimuth_deg, raw.elevation_deg)
    }
}

impl From<AnglePair> for AnglePairRaw {
    fn from(p: AnglePair) -> Self {
        AnglePairRaw {
            azimuth_deg: p.azimuth_deg,
            elevation_deg: p.elevation_deg,
        }
    }
}

impl AnglePair {
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&azimuth_deg) || !azimuth_deg.is_finite() {
            return Err(Error::InvalidAngle(format!(
                "azimuth {azimuth_deg} deg outside [-90, 90]"
            )));
        }
        if !(-90.0..=90.0).contains(&elevation_deg) || !elevation_deg.is_finite() {
            return Err(Error::InvalidAngle(format!(
                "elevation {elevation_deg} deg outside [-90, 90]"
            )));
        }
        let disc = Self::discriminant(azimuth_deg, elevation_deg);
        if disc < 0.0 {
            return Err(Error::DirectionDomain {
                azimuth_deg,
                elevation_deg,
                discriminant: disc,
            });
        }
        Ok(Self {
            azimuth_deg,
            elevation_deg,
        })
    }

    /// cos^2(phi) - sin^2(theta); must be non-negative for a representable
    /// direction.
    pub fn discriminant(azimuth_deg: f64, elevation_deg: f64) -> f64 {
        let st = azimuth_deg.to_radians().sin();
        let cp = elevation_deg.to_radians().cos();
        cp * cp - st * st
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth_deg
    }

    pub fn elevation_deg(&self) -> f64 {
        self.elevation_deg
    }

    /// Unit direction vector [sqrt(cos^2 phi - sin^2 theta), sin theta, sin phi].
    pub fn direction_vector(&self) -> [f64; 3] {
        let st = self.azimuth_deg.to_radians().sin();
        let sp = self.elevation_deg.to_radians().sin();
        // Clamp tiny negative rounding residue on the boundary of the domain.
        let disc = Self::discriminant(self.azimuth_deg, self.elevation_deg).max(0.0);
        [disc.sqrt(), st, sp]
    }

    /// Draw a pair uniformly in [-max_abs_deg, max_abs_deg]^2, rejecting pairs
    /// whose direction discriminant falls below `margin`.
    pub fn sample_valid<R: rand::Rng>(rng: &mut R, max_abs_deg: f64, margin: f64) -> Self {
        loop {
            let theta = rng.random_range(-max_abs_deg..=max_abs_deg);
            let phi = rng.random_range(-max_abs_deg..=max_abs_deg);
            if Self::discriminant(theta, phi) >= margin {
                return Self::new(theta, phi).expect("sampled pair passed its own check");
            }
        }
    }
}

/// Equally spaced angle grid over [low, high] in degrees.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "AngleGridRaw", into = "AngleGridRaw")]
pub struct AngleGrid {
    low: f64,
    high: f64,
    step: f64,
    points: Vec<f64>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct AngleGridRaw {
    low_deg: f64,
    high_deg: f64,
    step_deg: f64,
}

impl TryFrom<AngleGridRaw> for AngleGrid {
    type Error = Error;
    fn try_from(raw: AngleGridRaw) -> Result<Self> {
        AngleGrid::new(raw.low_deg, raw.high_deg, raw.step_deg)
    }
}

impl From<AngleGrid> for AngleGridRaw {
    fn from(g: AngleGrid) -> Self {
        AngleGridRaw {
            low_deg: g.low,
            high_deg: g.high,
            step_deg: g.step,
        }
    }
}

impl AngleGrid {
    pub fn new(low: f64, high: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || high < low {
            return Err(Error::InvalidGrid(format!(
                "need low <= high and step > 0, got [{low}, {high}] step {step}"
            )));
        }
        let span = high - low;
        let intervals = (span / step).round();
        if (span - intervals * step).abs() > 1e-9 {
            return Err(Error::InvalidGrid(format!(
                "step {step} does not divide span [{low}, {high}] evenly"
            )));
        }
        let count = intervals as usize + 1;
        let points = (0..count).map(|i| low + i as f64 * step).collect();
        Ok(Self {
            low,
            high,
            step,
            points,
        })
    }

    /// The 61-point grid covering [-90, 90] with a 3-degree step.
    pub fn default_span() -> Self {
        Self::new(-90.0, 90.0, 3.0).expect("default grid is valid")
    }

    pub fn low_deg(&self) -> f64 {
        self.low
    }

    pub fn high_deg(&self) -> f64 {
        self.high
    }

    pub fn step_deg(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, index: usize) -> f64 {
        self.points[index]
    }

    /// Nearest grid point and the remaining offset, `angle = point + offset`.
    /// Midpoint ties resolve toward the lower grid point, so the offset is
    /// within [-step/2, step/2].
    pub fn nearest_decompose(&self, angle_deg: f64) -> Result<(usize, f64)> {
        if angle_deg < self.low || angle_deg > self.high || !angle_deg.is_finite() {
            return Err(Error::InvalidAngle(format!(
                "angle {angle_deg} deg outside grid range [{}, {}]",
                self.low, self.high
            )));
        }
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, &p) in self.points.iter().enumerate() {
            let dist = (angle_deg - p).abs();
            if dist < best_dist {
                best = i;
                best_dist = dist;
            }
        }
        Ok((best, angle_deg - self.points[best]))
    }
}

/// On-grid steering atoms and their per-radian derivative atoms for both axes.
#[derive(Debug, Clone)]
pub struct Dictionary {
    /// A_theta: M x P azimuth atoms.
    pub azimuth_atoms: DMatrix<C64>,
    /// A_phi: N x Q elevation atoms.
    pub elevation_atoms: DMatrix<C64>,
    /// B_theta: M x P azimuth derivative atoms (per radian).
    pub azimuth_derivs: DMatrix<C64>,
    /// B_phi: N x Q elevation derivative atoms (per radian).
    pub elevation_derivs: DMatrix<C64>,
    pub azimuth_grid: AngleGrid,
    pub elevation_grid: AngleGrid,
}

impl Dictionary {
    /// Populate all four atom matrices by evaluating the steering vectors and
    /// their derivatives on the two grids.
    pub fn build(azimuth_grid: AngleGrid, elevation_grid: AngleGrid, geometry: &ArrayGeometry) -> Self {
        let p = azimuth_grid.len();
        let q = elevation_grid.len();
        let mut azimuth_atoms = DMatrix::zeros(geometry.m_count, p);
        let mut azimuth_derivs = DMatrix::zeros(geometry.m_count, p);
        for (j, &theta) in azimuth_grid.points().iter().enumerate() {
            azimuth_atoms.set_column(j, &geometry.azimuth_steering(theta));
            azimuth_derivs.set_column(j, &geometry.azimuth_derivative(theta));
        }
        let mut elevation_atoms = DMatrix::zeros(geometry.n_count, q);
        let mut elevation_derivs = DMatrix::zeros(geometry.n_count, q);
        for (j, &phi) in elevation_grid.points().iter().enumerate() {
            elevation_atoms.set_column(j, &geometry.elevation_steering(phi));
            elevation_derivs.set_column(j, &geometry.elevation_derivative(phi));
        }
        Self {
            azimuth_atoms,
            elevation_atoms,
            azimuth_derivs,
            elevation_derivs,
            azimuth_grid,
            elevation_grid,
        }
    }

    /// Azimuth grid size P.
    pub fn azimuth_len(&self) -> usize {
        self.azimuth_grid.len()
    }

    /// Elevation grid size Q.
    pub fn elevation_len(&self) -> usize {
        self.elevation_grid.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn geom(m: usize, n: usize) -> ArrayGeometry {
        ArrayGeometry::half_wavelength(m, n).unwrap()
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn max_abs_diff(a: &DVector<C64>, b: &DVector<C64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn direction_vector_boresight() {
        let u = AnglePair::new(0.0, 0.0).unwrap().direction_vector();
        assert_abs_diff_eq!(u[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn direction_vector_axis_cases() {
        let u = AnglePair::new(90.0, 0.0).unwrap().direction_vector();
        assert_abs_diff_eq!(u[0], 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(u[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u[2], 0.0, epsilon = 1e-15);

        let u = AnglePair::new(0.0, 90.0).unwrap().direction_vector();
        assert_abs_diff_eq!(u[0], 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(u[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u[2], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn direction_vector_unit_norm() {
        let u = AnglePair::new(33.0, -21.0).unwrap().direction_vector();
        let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn direction_domain_rejected() {
        // cos^2(30 deg) < sin^2(80 deg)
        let err = AnglePair::new(80.0, 30.0).unwrap_err();
        assert!(matches!(err, Error::DirectionDomain { .. }));
        // (80, 10) sits exactly on the boundary (cos 10 = sin 80): allowed.
        assert!(AnglePair::new(80.0, 10.0).is_ok());
    }

    #[test]
    fn azimuth_steering_boresight_all_ones() {
        let a = geom(5, 3).azimuth_steering(0.0);
        for z in a.iter() {
            assert_abs_diff_eq!(z.re, 1.0, epsilon = 1e-15);
            assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn azimuth_steering_endfire_two_elements() {
        let a = geom(2, 2).azimuth_steering(90.0);
        assert_abs_diff_eq!((a[0] - c(1.0, 0.0)).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((a[1] - c(-1.0, 0.0)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn azimuth_steering_thirty_degrees() {
        // Psi_m = pi (m - 1) sin(30 deg) = pi (m - 1) / 2, so the entries are
        // exp(-j pi (m - 1) / 2) = [1, -j, -1].
        let a = geom(3, 2).azimuth_steering(30.0);
        assert!(max_abs_diff(&a, &DVector::from_vec(vec![c(1.0, 0.0), c(0.0, -1.0), c(-1.0, 0.0)])) < 1e-12);
    }

    #[test]
    fn elevation_steering_cases() {
        let g = geom(2, 2);
        for z in g.elevation_steering(0.0).iter() {
            assert_abs_diff_eq!((z - c(1.0, 0.0)).norm(), 0.0, epsilon = 1e-15);
        }
        let e = g.elevation_steering(30.0);
        assert_abs_diff_eq!((e[1] - c(0.0, -1.0)).norm(), 0.0, epsilon = 1e-12);
        // Odd symmetry of sin: negating the angle conjugates each entry.
        let e_neg = g.elevation_steering(-30.0);
        for (a, b) in e.iter().zip(e_neg.iter()) {
            assert_abs_diff_eq!((a.conj() - b).norm(), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn derivative_boresight_two_elements() {
        let b = geom(2, 2).azimuth_derivative(0.0);
        assert_abs_diff_eq!(b[0].norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((b[1] - c(0.0, -PI)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn derivative_first_entry_always_zero() {
        let g = geom(4, 4);
        for theta in [-80.0, -33.3, 0.0, 12.7, 89.0] {
            assert_eq!(g.azimuth_derivative(theta)[0], C64::new(0.0, 0.0));
            assert_eq!(g.elevation_derivative(theta)[0], C64::new(0.0, 0.0));
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let g = geom(4, 4);
        let theta = 20.0;
        let h_rad: f64 = 1e-6;
        let h_deg = h_rad.to_degrees();
        let plus = g.azimuth_steering(theta + h_deg);
        let minus = g.azimuth_steering(theta - h_deg);
        let fd = (plus - minus) / c(2.0 * h_rad, 0.0);
        let analytic = g.azimuth_derivative(theta);
        let rel = max_abs_diff(&fd, &analytic) / analytic.norm();
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn dictionary_shapes_at_paper_scale() {
        let g = geom(20, 20);
        let dict = Dictionary::build(AngleGrid::default_span(), AngleGrid::default_span(), &g);
        assert_eq!(dict.azimuth_atoms.shape(), (20, 61));
        assert_eq!(dict.elevation_atoms.shape(), (20, 61));
        assert_eq!(dict.azimuth_derivs.shape(), (20, 61));
        assert_eq!(dict.elevation_derivs.shape(), (20, 61));
    }

    #[test]
    fn dictionary_single_point_grid() {
        // Single-element array: the lone atom is [1] and its derivative [0].
        let g = geom(1, 1);
        let grid = AngleGrid::new(0.0, 0.0, 1.0).unwrap();
        assert_eq!(grid.len(), 1);
        let dict = Dictionary::build(grid.clone(), grid.clone(), &g);
        assert_abs_diff_eq!((dict.azimuth_atoms[(0, 0)] - c(1.0, 0.0)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(dict.azimuth_derivs[(0, 0)].norm(), 0.0, epsilon = 1e-15);

        // Larger array: single-point columns equal the steering evaluations.
        let g = geom(3, 3);
        let dict = Dictionary::build(grid.clone(), grid, &g);
        for z in dict.azimuth_atoms.column(0).iter() {
            assert_abs_diff_eq!((z - c(1.0, 0.0)).norm(), 0.0, epsilon = 1e-15);
        }
        let expected = g.azimuth_derivative(0.0);
        for (z, e) in dict.azimuth_derivs.column(0).iter().zip(expected.iter()) {
            assert_abs_diff_eq!((z - e).norm(), 0.0, epsilon = 1e-15);
        }
    }

    /// (A_theta ⊗ A_phi) vec(X) = vec(A_phi X A_theta^T), both sides assembled
    /// independently: the left through an explicit Kronecker matrix, the right
    /// through the two-sided product.
    #[test]
    fn kronecker_vec_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let g = geom(5, 5);
        let grid = AngleGrid::new(-60.0, 60.0, 30.0).unwrap(); // 5 points
        let dict = Dictionary::build(grid.clone(), grid, &g);
        let q = dict.elevation_len();
        let p = dict.azimuth_len();
        let x = DMatrix::from_fn(q, p, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });

        let kron = dict.azimuth_atoms.kronecker(&dict.elevation_atoms);
        let vec_x = DVector::from_column_slice(x.as_slice());
        let lhs = kron * vec_x;

        let rhs_mat = &dict.elevation_atoms * &x * dict.azimuth_atoms.transpose();
        let rhs = DVector::from_column_slice(rhs_mat.as_slice());

        let err = (lhs - rhs).norm();
        assert!(err < 1e-10, "kronecker/vec mismatch {err}");
    }

    #[test]
    fn upa_steering_boresight_and_kronecker_order() {
        let g = geom(2, 2);
        let flat = g.upa_steering(&AnglePair::new(0.0, 0.0).unwrap());
        for z in flat.iter() {
            assert_abs_diff_eq!((z - c(1.0, 0.0)).norm(), 0.0, epsilon = 1e-15);
        }

        // Kronecker of [1, -j] with itself.
        let flat = g.upa_steering(&AnglePair::new(30.0, 30.0).unwrap());
        let expected = [c(1.0, 0.0), c(0.0, -1.0), c(0.0, -1.0), c(-1.0, 0.0)];
        for (z, e) in flat.iter().zip(expected.iter()) {
            assert_abs_diff_eq!((z - e).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn upa_steering_flat_index_factorization() {
        let g = geom(4, 3);
        let pair = AnglePair::new(17.3, -42.1).unwrap();
        let flat = g.upa_steering(&pair);
        let az = g.azimuth_steering(pair.azimuth_deg());
        let el = g.elevation_steering(pair.elevation_deg());
        for m in 1..=g.m_count {
            for n in 1..=g.n_count {
                let idx = g.flat_index(m, n);
                assert_abs_diff_eq!((flat[idx] - az[m - 1] * el[n - 1]).norm(), 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn nearest_decompose_cases() {
        let grid = AngleGrid::default_span();
        // Exhaustive scan over all 61 points confirms 45 deg is nearest to 46.2.
        let brute = grid
            .points()
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (46.2 - **a).abs().partial_cmp(&(46.2 - **b).abs()).unwrap()
            })
            .unwrap()
            .0;
        let (idx, off) = grid.nearest_decompose(46.2).unwrap();
        assert_eq!(idx, brute);
        assert_abs_diff_eq!(grid.point(idx), 45.0, epsilon = 0.0);
        assert_abs_diff_eq!(off, 1.2, epsilon = 1e-12);

        let (idx, off) = grid.nearest_decompose(0.0).unwrap();
        assert_abs_diff_eq!(grid.point(idx), 0.0, epsilon = 0.0);
        assert_eq!(off, 0.0);

        // Exact midpoint resolves to the lower grid point.
        let (idx, off) = grid.nearest_decompose(1.5).unwrap();
        assert_abs_diff_eq!(grid.point(idx), 0.0, epsilon = 0.0);
        assert_abs_diff_eq!(off, 1.5, epsilon = 0.0);

        assert!(grid.nearest_decompose(90.5).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(AngleGrid::new(-90.0, 90.0, 7.0).is_err());
        assert_eq!(AngleGrid::default_span().len(), 61);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn steering_entries_unit_modulus(theta in -90.0..90.0f64) {
                let g = geom(6, 4);
                for z in g.azimuth_steering(theta).iter() {
                    prop_assert!((z.norm() - 1.0).abs() < 1e-12);
                }
                for z in g.elevation_steering(theta).iter() {
                    prop_assert!((z.norm() - 1.0).abs() < 1e-12);
                }
            }

            #[test]
            fn steering_conjugate_symmetry(theta in -90.0..90.0f64) {
                let g = geom(6, 4);
                let pos = g.azimuth_steering(theta);
                let neg = g.azimuth_steering(-theta);
                for (a, b) in pos.iter().zip(neg.iter()) {
                    prop_assert!((a.conj() - b).norm() < 1e-12);
                }
            }

            #[test]
            fn nearest_decompose_round_trip(angle in -90.0..=90.0f64) {
                let grid = AngleGrid::default_span();
                let (idx, off) = grid.nearest_decompose(angle).unwrap();
                prop_assert!(off.abs() <= grid.step_deg() / 2.0 + 1e-12);
                prop_assert_eq!(grid.point(idx) + off, angle);
            }
        }

        #[test]
        fn derivatives_match_finite_differences_everywhere() {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
            let g = geom(7, 5);
            let h_rad: f64 = 1e-6;
            let h_deg = h_rad.to_degrees();
            for _ in 0..100 {
                let angle: f64 = rng.random_range(-85.0..85.0);
                for axis in [AngleAxis::Azimuth, AngleAxis::Elevation] {
                    let steer = |a: f64| match axis {
                        AngleAxis::Azimuth => g.azimuth_steering(a),
                        AngleAxis::Elevation => g.elevation_steering(a),
                    };
                    let fd = (steer(angle + h_deg) - steer(angle - h_deg)) / C64::new(2.0 * h_rad, 0.0);
                    let analytic = g.steering_derivative(angle, axis);
                    let rel = max_abs_diff(&fd, &analytic) / analytic.norm();
                    assert!(rel < 1e-5, "axis {axis:?} angle {angle}: rel err {rel}");
                }
            }
        }
    }
}
