//! First-order (Born) forward model of the sensing hardware.
//!
//! A transmitter illuminates a 1-bit reflective metasurface; each atom re-radiates
//! with reflection coefficient ±1 towards the scene plane; each scene pixel scatters
//! in proportion to its reflectivity towards the receiver. Propagation uses the
//! scalar free-space Green's function `exp(ikr) / (4πr)`. The model is linear in the
//! scene, so noiseless measurements satisfy `y = H·x`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure_dim, Error, Result};
use crate::pattern::CodingPattern;

pub type Point3 = Vector3<f64>;

/// Scalar free-space Green's function between two points.
pub fn free_space_green(p: &Point3, q: &Point3, wavelength: f64) -> Result<Complex64> {
    if !(wavelength > 0.0) {
        return Err(Error::Domain(format!("wavelength must be positive, got {wavelength}")));
    }
    let r = (p - q).norm();
    if !(r > 0.0) {
        return Err(Error::Domain("Green's function evaluated at zero distance".into()));
    }
    Ok(green(r, 2.0 * PI / wavelength))
}

#[inline]
fn green(r: f64, k: f64) -> Complex64 {
    Complex64::from_polar(1.0 / (4.0 * PI * r), k * r)
}

/// Construction parameters of a [`SensingGeometry`]. Lengths in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryParams {
    pub atom_rows: usize,
    pub atom_cols: usize,
    pub atom_pitch: f64,
    pub wavelength: f64,
    pub scene_width: usize,
    pub scene_height: usize,
    pub scene_extent_x: f64,
    pub scene_extent_y: f64,
    /// Distance of the scene plane from the metasurface plane (z = 0).
    pub standoff: f64,
    pub tx: [f64; 3],
    pub rx: [f64; 3],
    pub noise_std: f64,
}

impl Default for GeometryParams {
    /// Desk-scale setup: 16×16 atoms at 54 mm pitch, 2.4 GHz, a 32×32 scene over
    /// 1 m × 1 m at 1.5 m standoff.
    fn default() -> Self {
        Self {
            atom_rows: 16,
            atom_cols: 16,
            atom_pitch: 0.054,
            wavelength: 0.125,
            scene_width: 32,
            scene_height: 32,
            scene_extent_x: 1.0,
            scene_extent_y: 1.0,
            standoff: 1.5,
            tx: [0.0, 0.6, 1.0],
            rx: [0.3, 0.0, 1.2],
            noise_std: 0.0,
        }
    }
}

impl GeometryParams {
    /// Same physical layout with a different atom grid and scene resolution.
    pub fn scaled(atoms_side: usize, scene_side: usize) -> Self {
        Self {
            atom_rows: atoms_side,
            atom_cols: atoms_side,
            scene_width: scene_side,
            scene_height: scene_side,
            ..Self::default()
        }
    }
}

/// Geometry of the sensing setup together with its precomputed propagators.
#[derive(Debug, Clone)]
pub struct SensingGeometry {
    params: GeometryParams,
    atom_positions: Vec<Point3>,
    scene_pixel_positions: Vec<Point3>,
    scene_pixel_area: f64,
    tx_to_atom: Vec<Complex64>,
    /// `P × N`, entry `(a, j)` = G(atom a, pixel j).
    atom_to_pixel: DMatrix<Complex64>,
    pixel_to_rx: Vec<Complex64>,
    /// Real and imaginary parts of the per-atom scene response operator
    /// `B[a, j] = G(tx, a)·G(a, j)·G(j, rx)·area`, so that noiseless `y = S·B·x`
    /// with `S` the ±1 coefficient matrix.
    response_re: DMatrix<f64>,
    response_im: DMatrix<f64>,
}

impl SensingGeometry {
    pub fn new(params: GeometryParams) -> Result<Self> {
        let p = &params;
        if !(p.wavelength > 0.0) {
            return Err(Error::Domain(format!(
                "wavelength must be positive, got {}",
                p.wavelength
            )));
        }
        if !(p.atom_pitch > 0.0) {
            return Err(Error::Domain(format!(
                "atom pitch must be positive, got {}",
                p.atom_pitch
            )));
        }
        if !(p.noise_std >= 0.0) || !p.noise_std.is_finite() {
            return Err(Error::Domain(format!(
                "noise_std must be nonnegative, got {}",
                p.noise_std
            )));
        }
        if p.atom_rows == 0 || p.atom_cols == 0 || p.scene_width == 0 || p.scene_height == 0 {
            return Err(Error::Domain("atom grid and scene grid must be non-empty".into()));
        }
        if !(p.scene_extent_x > 0.0 && p.scene_extent_y > 0.0) {
            return Err(Error::Domain("scene extent must be positive".into()));
        }
        if !(p.standoff > 0.0) {
            return Err(Error::Domain(format!(
                "scene standoff must be positive so pixels never meet atoms, got {}",
                p.standoff
            )));
        }

        let atom_positions: Vec<Point3> = (0..p.atom_rows)
            .flat_map(|r| {
                (0..p.atom_cols).map(move |c| {
                    Point3::new(
                        (c as f64 - (p.atom_cols as f64 - 1.0) / 2.0) * p.atom_pitch,
                        ((p.atom_rows as f64 - 1.0) / 2.0 - r as f64) * p.atom_pitch,
                        0.0,
                    )
                })
            })
            .collect();
        let dx = p.scene_extent_x / p.scene_width as f64;
        let dy = p.scene_extent_y / p.scene_height as f64;
        let scene_pixel_positions: Vec<Point3> = (0..p.scene_height)
            .flat_map(|i| {
                (0..p.scene_width).map(move |j| {
                    Point3::new(
                        (j as f64 + 0.5) * dx - p.scene_extent_x / 2.0,
                        p.scene_extent_y / 2.0 - (i as f64 + 0.5) * dy,
                        p.standoff,
                    )
                })
            })
            .collect();
        let tx = Point3::from(p.tx);
        let rx = Point3::from(p.rx);
        for (name, antenna) in [("tx", &tx), ("rx", &rx)] {
            let touches = atom_positions
                .iter()
                .chain(scene_pixel_positions.iter())
                .any(|q| !((q - antenna).norm() > 0.0));
            if touches {
                return Err(Error::Domain(format!(
                    "{name} antenna coincides with an atom or scene pixel"
                )));
            }
        }

        let k = 2.0 * PI / p.wavelength;
        let area = dx * dy;
        let tx_to_atom: Vec<Complex64> = atom_positions.iter().map(|a| green((tx - a).norm(), k)).collect();
        let pixel_to_rx: Vec<Complex64> = scene_pixel_positions
            .iter()
            .map(|q| green((q - rx).norm(), k))
            .collect();
        let atom_to_pixel = DMatrix::from_fn(atom_positions.len(), scene_pixel_positions.len(), |a, j| {
            green((atom_positions[a] - scene_pixel_positions[j]).norm(), k)
        });
        let response = DMatrix::from_fn(atom_positions.len(), scene_pixel_positions.len(), |a, j| {
            tx_to_atom[a] * atom_to_pixel[(a, j)] * pixel_to_rx[j] * area
        });

        Ok(Self {
            params,
            atom_positions,
            scene_pixel_positions,
            scene_pixel_area: area,
            tx_to_atom,
            atom_to_pixel,
            pixel_to_rx,
            response_re: response.map(|z| z.re),
            response_im: response.map(|z| z.im),
        })
    }

    pub fn params(&self) -> &GeometryParams {
        &self.params
    }

    pub fn wavelength(&self) -> f64 {
        self.params.wavelength
    }

    pub fn atom_pitch(&self) -> f64 {
        self.params.atom_pitch
    }

    pub fn noise_std(&self) -> f64 {
        self.params.noise_std
    }

    pub fn with_noise_std(mut self, noise_std: f64) -> Result<Self> {
        if !(noise_std >= 0.0) || !noise_std.is_finite() {
            return Err(Error::Domain(format!("noise_std must be nonnegative, got {noise_std}")));
        }
        self.params.noise_std = noise_std;
        Ok(self)
    }

    /// Same geometry with every scene pixel area multiplied by `factor`.
    pub fn with_pixel_area_scaled(&self, factor: f64) -> Self {
        let mut g = self.clone();
        g.scene_pixel_area *= factor;
        g.response_re *= factor;
        g.response_im *= factor;
        g
    }

    pub fn atom_positions(&self) -> &[Point3] {
        &self.atom_positions
    }

    pub fn scene_pixel_positions(&self) -> &[Point3] {
        &self.scene_pixel_positions
    }

    pub fn scene_pixel_area(&self) -> f64 {
        self.scene_pixel_area
    }

    pub fn tx_position(&self) -> Point3 {
        Point3::from(self.params.tx)
    }

    pub fn rx_position(&self) -> Point3 {
        Point3::from(self.params.rx)
    }

    /// Number of meta-atoms `P`.
    pub fn n_atoms(&self) -> usize {
        self.atom_positions.len()
    }

    /// Number of scene pixels `N`.
    pub fn n_pixels(&self) -> usize {
        self.scene_pixel_positions.len()
    }

    pub fn scene_shape(&self) -> (usize, usize) {
        (self.params.scene_width, self.params.scene_height)
    }

    pub fn tx_to_atom(&self) -> &[Complex64] {
        &self.tx_to_atom
    }

    pub fn atom_to_pixel(&self) -> &DMatrix<Complex64> {
        &self.atom_to_pixel
    }

    pub fn pixel_to_rx(&self) -> &[Complex64] {
        &self.pixel_to_rx
    }

    /// Per-atom responses `B·x` for a batch of scenes given as columns of an
    /// `N × B` matrix. Returns `(re, im)`, each `P × B`.
    pub fn atom_responses(&self, scenes: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        ensure_dim("atom responses (scene pixels)", self.n_pixels(), scenes.nrows())?;
        Ok((&self.response_re * scenes, &self.response_im * scenes))
    }

    /// Per-atom response of one pixel-space vector, as complex values.
    pub fn atom_response_of(&self, pixels: &[f64]) -> Result<Vec<Complex64>> {
        ensure_dim("atom response (scene pixels)", self.n_pixels(), pixels.len())?;
        let x = DVector::from_column_slice(pixels);
        let re = &self.response_re * &x;
        let im = &self.response_im * &x;
        Ok(re.iter().zip(im.iter()).map(|(&r, &i)| Complex64::new(r, i)).collect())
    }
}

/// Probed scene: real reflectivity in `[0, 1]` on a `width × height` grid (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
    label: Option<usize>,
}

impl SceneGrid {
    pub fn new(width: usize, height: usize, values: Vec<f64>, label: Option<usize>) -> Result<Self> {
        ensure_dim("scene values", width * height, values.len())?;
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("scene value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            values,
            label,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            label: None,
        }
    }

    /// Scene with a single unit pixel.
    pub fn delta(width: usize, height: usize, index: usize) -> Self {
        let mut s = Self::zeros(width, height);
        s.values[index] = 1.0;
        s
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Fraction of pixels above one half.
    pub fn foreground_fraction(&self) -> f64 {
        self.values.iter().filter(|&&v| v > 0.5).count() as f64 / self.values.len() as f64
    }
}

/// Raw data: one complex value per coding-pattern frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector {
    pub values: Vec<Complex64>,
}

impl MeasurementVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Field on every scene pixel produced by one metasurface configuration.
pub fn illumination_field(geom: &SensingGeometry, pattern_row: &[u8]) -> Result<Vec<Complex64>> {
    ensure_dim("illumination pattern row", geom.n_atoms(), pattern_row.len())?;
    let mut field = vec![Complex64::new(0.0, 0.0); geom.n_pixels()];
    for (a, &bit) in pattern_row.iter().enumerate() {
        let incident = geom.tx_to_atom[a] * CodingPattern::coefficient(bit);
        for (j, f) in field.iter_mut().enumerate() {
            *f += incident * geom.atom_to_pixel[(a, j)];
        }
    }
    Ok(field)
}

/// Linear sensing operator `H` (`M × N`) of a coding pattern.
pub fn sensing_matrix(geom: &SensingGeometry, pattern: &CodingPattern) -> Result<DMatrix<Complex64>> {
    ensure_dim("sensing matrix pattern columns", geom.n_atoms(), pattern.cols())?;
    let mut h = DMatrix::zeros(pattern.rows(), geom.n_pixels());
    for m in 0..pattern.rows() {
        let field = illumination_field(geom, pattern.row(m))?;
        for (j, f) in field.into_iter().enumerate() {
            h[(m, j)] = f * geom.pixel_to_rx[j] * geom.scene_pixel_area;
        }
    }
    Ok(h)
}

fn check_scene(geom: &SensingGeometry, scene: &SceneGrid) -> Result<()> {
    let (w, h) = geom.scene_shape();
    ensure_dim("scene width", w, scene.width())?;
    ensure_dim("scene height", h, scene.height())
}

/// Draws circularly-symmetric complex Gaussian noise with `E|n|² = std²`.
pub fn complex_noise<R: rand::Rng>(rng: &mut R, std: f64) -> Complex64 {
    let s = std / std::f64::consts::SQRT_2;
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// Noiseless measurement through the per-atom response path.
pub fn noiseless_measure(
    geom: &SensingGeometry,
    pattern: &CodingPattern,
    scene: &SceneGrid,
) -> Result<MeasurementVector> {
    check_scene(geom, scene)?;
    ensure_dim("forward pattern columns", geom.n_atoms(), pattern.cols())?;
    let response = geom.atom_response_of(scene.values())?;
    let values = (0..pattern.rows())
        .map(|m| {
            pattern
                .row(m)
                .iter()
                .zip(&response)
                .fold(Complex64::new(0.0, 0.0), |acc, (&bit, z)| {
                    acc + z * CodingPattern::coefficient(bit)
                })
        })
        .collect();
    Ok(MeasurementVector { values })
}

/// `y = H·x + n` with seeded noise of per-channel complex variance `noise_std²`.
pub fn forward_measure(
    geom: &SensingGeometry,
    pattern: &CodingPattern,
    scene: &SceneGrid,
    rng_seed: u64,
) -> Result<MeasurementVector> {
    let mut y = noiseless_measure(geom, pattern, scene)?;
    let std = geom.noise_std();
    if std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for v in &mut y.values {
            *v += complex_noise(&mut rng, std);
        }
    }
    Ok(y)
}

/// Noise level set to `relative` × median |H·x| over a calibration batch.
pub fn calibrate_noise_std(
    geom: &SensingGeometry,
    pattern: &CodingPattern,
    scenes: &[SceneGrid],
    relative: f64,
) -> Result<f64> {
    if scenes.is_empty() {
        return Err(Error::Data("noise calibration needs at least one scene".into()));
    }
    let mut mags = Vec::with_capacity(scenes.len() * pattern.rows());
    for s in scenes {
        mags.extend(noiseless_measure(geom, pattern, s)?.values.iter().map(|z| z.norm()));
    }
    Ok(relative * median(&mut mags))
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::PatternOrigin;

    fn toy() -> SensingGeometry {
        SensingGeometry::new(GeometryParams::scaled(2, 4)).unwrap()
    }

    fn rel_err(a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn green_half_and_full_wavelength() {
        let lambda = 0.125;
        let p = Point3::zeros();
        let g = free_space_green(&p, &Point3::new(lambda / 2.0, 0.0, 0.0), lambda).unwrap();
        assert!((g.re + 1.0 / (2.0 * PI * 0.125)).abs() < 1e-12);
        assert!((g.re + 1.27324).abs() < 1e-5);
        assert!(g.im.abs() < 1e-12);
        let g = free_space_green(&p, &Point3::new(0.0, lambda, 0.0), lambda).unwrap();
        assert!((g.re - 1.0 / (4.0 * PI * lambda)).abs() < 1e-12);
        assert!(g.im.abs() < 1e-12);
    }

    #[test]
    fn green_domain_errors() {
        let p = Point3::new(1.0, 2.0, 3.0);
        assert!(matches!(free_space_green(&p, &p, 0.1), Err(Error::Domain(_))));
        assert!(matches!(
            free_space_green(&p, &Point3::zeros(), 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn geometry_rejects_bad_parameters() {
        let p = GeometryParams {
            wavelength: -1.0,
            ..GeometryParams::default()
        };
        assert!(SensingGeometry::new(p).is_err());
        let p = GeometryParams {
            tx: [0.0, 0.0, 0.0],
            atom_rows: 3,
            atom_cols: 3,
            ..GeometryParams::default()
        };
        assert!(SensingGeometry::new(p).is_err(), "tx on the central atom");
        let p = GeometryParams {
            noise_std: -1e-3,
            ..GeometryParams::default()
        };
        assert!(SensingGeometry::new(p).is_err());
    }

    #[test]
    fn illumination_sign_symmetry() {
        let g = toy();
        let zeros = illumination_field(&g, &[0, 0, 0, 0]).unwrap();
        let ones = illumination_field(&g, &[1, 1, 1, 1]).unwrap();
        for (a, b) in zeros.iter().zip(&ones) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn illumination_single_atom() {
        let g = SensingGeometry::new(GeometryParams::scaled(1, 4)).unwrap();
        let field = illumination_field(&g, &[1]).unwrap();
        let tx = g.tx_position();
        let a = g.atom_positions()[0];
        for (j, q) in g.scene_pixel_positions().iter().enumerate() {
            let expect =
                -free_space_green(&tx, &a, g.wavelength()).unwrap() * free_space_green(&a, q, g.wavelength()).unwrap();
            assert!(rel_err(field[j], expect) < 1e-14);
        }
    }

    #[test]
    fn illumination_decomposes_into_single_atom_contributions() {
        let g = toy();
        let row = [1u8, 0, 0, 1];
        let field = illumination_field(&g, &row).unwrap();
        let tx = g.tx_position();
        for (j, q) in g.scene_pixel_positions().iter().enumerate() {
            let mut brute = Complex64::new(0.0, 0.0);
            for (a, pos) in g.atom_positions().iter().enumerate() {
                brute += CodingPattern::coefficient(row[a])
                    * free_space_green(&tx, pos, g.wavelength()).unwrap()
                    * free_space_green(pos, q, g.wavelength()).unwrap();
            }
            assert!(rel_err(field[j], brute) < 1e-12);
        }
    }

    #[test]
    fn illumination_length_mismatch() {
        assert!(matches!(
            illumination_field(&toy(), &[0, 1]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn sensing_columns_match_delta_scenes() {
        let g = toy();
        let pattern =
            CodingPattern::new(3, 4, vec![0, 1, 1, 0, 1, 1, 1, 0, 0, 0, 0, 1], PatternOrigin::Random).unwrap();
        let h = sensing_matrix(&g, &pattern).unwrap();
        for j in 0..g.n_pixels() {
            let y = forward_measure(&g, &pattern, &SceneGrid::delta(4, 4, j), 0).unwrap();
            for m in 0..3 {
                assert!(rel_err(y.values[m], h[(m, j)]) < 1e-12);
            }
        }
    }

    #[test]
    fn complementing_a_row_negates_it() {
        let g = toy();
        let mut pattern = CodingPattern::new(2, 4, vec![0, 1, 1, 0, 1, 0, 1, 0], PatternOrigin::Random).unwrap();
        let h = sensing_matrix(&g, &pattern).unwrap();
        pattern.complement_row(1);
        let h2 = sensing_matrix(&g, &pattern).unwrap();
        for j in 0..g.n_pixels() {
            assert_eq!(h[(0, j)], h2[(0, j)]);
            assert_eq!(h[(1, j)], -h2[(1, j)]);
        }
    }

    #[test]
    fn doubling_pixel_area_doubles_h() {
        let g = toy();
        let pattern = CodingPattern::new(1, 4, vec![0, 1, 1, 0], PatternOrigin::Random).unwrap();
        let h = sensing_matrix(&g, &pattern).unwrap();
        let h2 = sensing_matrix(&g.with_pixel_area_scaled(2.0), &pattern).unwrap();
        for (a, b) in h.iter().zip(h2.iter()) {
            assert!(rel_err(*b, *a * 2.0) < 1e-15);
        }
    }

    #[test]
    fn empty_pattern_is_rejected() {
        assert!(CodingPattern::new(0, 4, vec![], PatternOrigin::Random).is_err());
    }

    #[test]
    fn zero_scene_gives_zero_measurement() {
        let g = toy();
        let pattern = CodingPattern::new(1, 4, vec![0, 1, 1, 0], PatternOrigin::Random).unwrap();
        let y = forward_measure(&g, &pattern, &SceneGrid::zeros(4, 4), 3).unwrap();
        assert!(y.values.iter().all(|z| *z == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn noise_is_seeded_and_has_requested_variance() {
        let g = toy().with_noise_std(0.5).unwrap();
        let pattern = CodingPattern::new(1, 4, vec![0, 1, 1, 0], PatternOrigin::Random).unwrap();
        let scene = SceneGrid::zeros(4, 4);
        assert_eq!(
            forward_measure(&g, &pattern, &scene, 11).unwrap(),
            forward_measure(&g, &pattern, &scene, 11).unwrap()
        );
        let n = 10_000;
        let var = (0..n)
            .map(|s| forward_measure(&g, &pattern, &scene, s).unwrap().values[0].norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((var / 0.25 - 1.0).abs() < 0.05, "empirical variance {var}");
    }

    #[test]
    fn scene_dimension_mismatch() {
        let g = toy();
        let pattern = CodingPattern::new(1, 4, vec![0, 1, 1, 0], PatternOrigin::Random).unwrap();
        assert!(matches!(
            forward_measure(&g, &pattern, &SceneGrid::zeros(3, 4), 0),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn scene_values_validated() {
        assert!(SceneGrid::new(1, 2, vec![0.5, 1.5], None).is_err());
        assert!(SceneGrid::new(1, 2, vec![0.5], None).is_err());
    }
}
