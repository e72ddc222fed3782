//! Periodic-grid field algebra on the flat torus `[0, L)²`.
//!
//! Fields are sampled on a uniform `n × n` grid. Values are stored row-major
//! with the first index running along `x₁`: the sample at `(i·h, j·h)` lives at
//! `values[i * n + j]`.
//!
//! Fourier coefficients follow the normalized convention
//!
//! ```text
//! ĝ_k = (1/|𝕋²|) ∫ g(x) e^{−2πi k·x / L} dx ≈ (1/n²) Σ_x g(x) e^{−2πi k·x / L}
//! ```
//!
//! so a constant field `c` has `ĝ_0 = c` and `cos(2πx₁/L)` has coefficients
//! `1/2` at `k = (±1, 0)`. Odd-order derivative multipliers zero the Nyquist
//! row and column so that derivatives of real fields stay real.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Uniform periodic grid with cached FFT plans.
pub struct TorusGrid {
    n: usize,
    length: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TorusGrid")
            .field("n", &self.n)
            .field("length", &self.length)
            .finish()
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.length == other.length
    }
}

impl TorusGrid {
    pub fn new(n: usize, length: f64) -> Result<Arc<Self>> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidGrid(format!(
                "n must be a power of two and at least 8, got {n}"
            )));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "side length must be positive, got {length}"
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Arc::new(Self {
            n,
            length,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }))
    }

    /// Unit torus with `n` points per side.
    pub fn unit(n: usize) -> Result<Arc<Self>> {
        Self::new(n, 1.0)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Grid spacing `h = L / n`.
    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn cell_area(&self) -> f64 {
        let h = self.spacing();
        h * h
    }

    /// `|𝕋²| = L²`.
    pub fn area(&self) -> f64 {
        self.length * self.length
    }

    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    /// Signed integer wavenumber of FFT index `idx`, in `{−n/2, …, n/2 − 1}`.
    pub fn wavenumber(&self, idx: usize) -> i64 {
        let n = self.n as i64;
        let k = idx as i64;
        if k < n / 2 {
            k
        } else {
            k - n
        }
    }

    pub fn is_nyquist(&self, idx: usize) -> bool {
        idx == self.n / 2
    }

    /// Angular frequency `2πk/L` of FFT index `idx`.
    pub fn angular(&self, idx: usize) -> f64 {
        2.0 * PI * self.wavenumber(idx) as f64 / self.length
    }

    /// First-derivative multiplier (without the factor `i`), Nyquist zeroed.
    pub fn derivative_symbol(&self, idx: usize) -> f64 {
        if self.is_nyquist(idx) {
            0.0
        } else {
            self.angular(idx)
        }
    }

    /// `|2πk/L|²` for the mode at `(a, b)`.
    pub fn k_squared(&self, a: usize, b: usize) -> f64 {
        let k1 = self.angular(a);
        let k2 = self.angular(b);
        k1 * k1 + k2 * k2
    }

    /// Whether mode `(a, b)` survives the 2/3 truncation.
    pub fn dealias_keep(&self, a: usize, b: usize) -> bool {
        let n = self.n as i64;
        3 * self.wavenumber(a).abs() <= n && 3 * self.wavenumber(b).abs() <= n
    }

    fn fft2(&self, buf: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inverse } else { &self.forward };
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(buf, &mut scratch);
        transpose_square(buf, self.n);
        plan.process_with_scratch(buf, &mut scratch);
        transpose_square(buf, self.n);
    }

    fn same(self: &Arc<Self>, other: &Arc<Self>) -> bool {
        Arc::ptr_eq(self, other) || **self == **other
    }
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// Real scalar field sampled on a [`TorusGrid`].
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: Arc<TorusGrid>,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<TorusGrid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &Arc<TorusGrid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Arc<TorusGrid>, c: f64) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f(x₁, x₂)` at the grid nodes.
    pub fn from_fn(grid: &Arc<TorusGrid>, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let n = grid.n();
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..n {
            let x1 = grid.coord(i);
            for j in 0..n {
                values.push(f(x1, grid.coord(j)));
            }
        }
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n() + j]
    }

    pub fn check_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid.same(&other.grid) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    /// Grid quadrature `∫ g dx`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_area()
    }

    /// Average `⟨g⟩ = (1/|𝕋²|) ∫ g dx`.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_area()).sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.grid.cell_area()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `∫ self · other dx`.
    pub fn inner(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.grid.cell_area()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.grid.same(&other.grid));
        Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &ScalarField) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarField) -> Self {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn shift_constant(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Two-component real vector field.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField {
    pub fn new(x: ScalarField, y: ScalarField) -> Result<Self> {
        x.check_grid(&y)?;
        Ok(Self { x, y })
    }

    pub fn zeros(grid: &Arc<TorusGrid>) -> Self {
        Self::constant(grid, [0.0, 0.0])
    }

    pub fn constant(grid: &Arc<TorusGrid>, c: [f64; 2]) -> Self {
        Self {
            x: ScalarField::constant(grid, c[0]),
            y: ScalarField::constant(grid, c[1]),
        }
    }

    pub fn from_fn(grid: &Arc<TorusGrid>, mut f: impl FnMut(f64, f64) -> [f64; 2]) -> Self {
        let n = grid.n();
        let mut xs = Vec::with_capacity(grid.len());
        let mut ys = Vec::with_capacity(grid.len());
        for i in 0..n {
            for j in 0..n {
                let v = f(grid.coord(i), grid.coord(j));
                xs.push(v[0]);
                ys.push(v[1]);
            }
        }
        Self {
            x: ScalarField { grid: grid.clone(), values: xs },
            y: ScalarField { grid: grid.clone(), values: ys },
        }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        self.x.grid()
    }

    pub fn check_grid(&self, other: &VectorField) -> Result<()> {
        self.x.check_grid(&other.x)
    }

    pub fn mean(&self) -> [f64; 2] {
        [self.x.mean(), self.y.mean()]
    }

    pub fn integral(&self) -> [f64; 2] {
        [self.x.integral(), self.y.integral()]
    }

    pub fn l2_norm(&self) -> f64 {
        let a = self.x.l2_norm();
        let b = self.y.l2_norm();
        (a * a + b * b).sqrt()
    }

    /// Grid maximum of the pointwise Euclidean norm.
    pub fn sup_norm(&self) -> f64 {
        self.x
            .values()
            .iter()
            .zip(self.y.values())
            .fold(0.0_f64, |m, (a, b)| m.max(a.hypot(*b)))
    }

    /// `∫ self · other dx`.
    pub fn inner(&self, other: &VectorField) -> f64 {
        self.x.inner(&other.x) + self.y.inner(&other.y)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            x: self.x.scale(c),
            y: self.y.scale(c),
        }
    }

    pub fn add(&self, other: &VectorField) -> Self {
        Self {
            x: self.x.add(&other.x),
            y: self.y.add(&other.y),
        }
    }

    pub fn sub(&self, other: &VectorField) -> Self {
        Self {
            x: self.x.sub(&other.x),
            y: self.y.sub(&other.y),
        }
    }

    /// Pointwise product with a scalar field.
    pub fn mul_scalar(&self, s: &ScalarField) -> Self {
        Self {
            x: self.x.mul(s),
            y: self.y.mul(s),
        }
    }

    pub fn shift_constant(&self, c: [f64; 2]) -> Self {
        Self {
            x: self.x.shift_constant(c[0]),
            y: self.y.shift_constant(c[1]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Normalized Fourier coefficients of a real field.
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: Arc<TorusGrid>,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(grid: &Arc<TorusGrid>) -> Self {
        Self {
            grid: grid.clone(),
            coeffs: vec![Complex64::default(); grid.len()],
        }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Coefficient for the signed wavenumber `(k1, k2)`.
    pub fn coeff(&self, k1: i64, k2: i64) -> Complex64 {
        let n = self.grid.n() as i64;
        let a = k1.rem_euclid(n) as usize;
        let b = k2.rem_euclid(n) as usize;
        self.coeffs[a * self.grid.n() + b]
    }

    /// Applies `f(a, b, coeff)` to every mode, where `(a, b)` are FFT indices.
    pub fn map_modes(&self, f: impl Fn(usize, usize, Complex64) -> Complex64) -> Self {
        let n = self.grid.n();
        let mut coeffs = self.coeffs.clone();
        for a in 0..n {
            for b in 0..n {
                let idx = a * n + b;
                coeffs[idx] = f(a, b, coeffs[idx]);
            }
        }
        Self {
            grid: self.grid.clone(),
            coeffs,
        }
    }

    pub fn add(&self, other: &Spectrum) -> Self {
        Self {
            grid: self.grid.clone(),
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            coeffs: self.coeffs.iter().map(|a| a * c).collect(),
        }
    }

    /// `|𝕋²| Σ |ĝ_k|²`, which equals `‖g‖²_{L²}` by Parseval.
    pub fn energy(&self) -> f64 {
        self.grid.area() * self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()
    }
}

/// Forward transform with the normalized coefficient convention.
pub fn transform_forward(field: &ScalarField) -> Spectrum {
    let grid = field.grid();
    let mut buf: Vec<Complex64> = field
        .values()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    grid.fft2(&mut buf, false);
    let scale = 1.0 / grid.len() as f64;
    for c in &mut buf {
        *c *= scale;
    }
    Spectrum {
        grid: grid.clone(),
        coeffs: buf,
    }
}

/// Inverse transform; the (round-off sized) imaginary part is discarded.
pub fn transform_inverse(spectrum: &Spectrum) -> ScalarField {
    let grid = spectrum.grid();
    let mut buf = spectrum.coeffs.clone();
    grid.fft2(&mut buf, true);
    ScalarField {
        grid: grid.clone(),
        values: buf.into_iter().map(|c| c.re).collect(),
    }
}

/// Spectral partial derivative along axis 0 (`x₁`) or 1 (`x₂`).
pub fn partial_spectrum(spec: &Spectrum, axis: usize) -> Spectrum {
    let grid = spec.grid().clone();
    spec.map_modes(|a, b, c| {
        let k = if axis == 0 {
            grid.derivative_symbol(a)
        } else {
            grid.derivative_symbol(b)
        };
        c * Complex64::new(0.0, k)
    })
}

pub fn partial(field: &ScalarField, axis: usize) -> ScalarField {
    transform_inverse(&partial_spectrum(&transform_forward(field), axis))
}

pub fn gradient(field: &ScalarField) -> VectorField {
    let spec = transform_forward(field);
    VectorField {
        x: transform_inverse(&partial_spectrum(&spec, 0)),
        y: transform_inverse(&partial_spectrum(&spec, 1)),
    }
}

pub fn divergence(field: &VectorField) -> ScalarField {
    let dx = partial_spectrum(&transform_forward(&field.x), 0);
    let dy = partial_spectrum(&transform_forward(&field.y), 1);
    transform_inverse(&dx.add(&dy))
}

pub fn laplacian_spectrum(spec: &Spectrum) -> Spectrum {
    let grid = spec.grid().clone();
    spec.map_modes(|a, b, c| c * (-grid.k_squared(a, b)))
}

pub fn laplacian(field: &ScalarField) -> ScalarField {
    transform_inverse(&laplacian_spectrum(&transform_forward(field)))
}

pub fn vector_laplacian(field: &VectorField) -> VectorField {
    VectorField {
        x: laplacian(&field.x),
        y: laplacian(&field.y),
    }
}

/// Projects the spectral pair `(ûx, ûy)` onto the kernel of the discrete
/// divergence. The zero mode is untouched.
pub fn leray_project_spectra(sx: &Spectrum, sy: &Spectrum) -> (Spectrum, Spectrum) {
    let grid = sx.grid().clone();
    let n = grid.n();
    let mut ox = sx.clone();
    let mut oy = sy.clone();
    for a in 0..n {
        let k1 = grid.derivative_symbol(a);
        for b in 0..n {
            let k2 = grid.derivative_symbol(b);
            let kk = k1 * k1 + k2 * k2;
            if kk == 0.0 {
                continue;
            }
            let idx = a * n + b;
            let dot = sx.coeffs[idx] * k1 + sy.coeffs[idx] * k2;
            ox.coeffs[idx] -= dot * (k1 / kk);
            oy.coeffs[idx] -= dot * (k2 / kk);
        }
    }
    (ox, oy)
}

/// Leray projection `I − ∇Δ⁻¹div` onto divergence-free fields.
pub fn leray_project(field: &VectorField) -> VectorField {
    let (sx, sy) = leray_project_spectra(&transform_forward(&field.x), &transform_forward(&field.y));
    VectorField {
        x: transform_inverse(&sx),
        y: transform_inverse(&sy),
    }
}

fn check_mean_free(field: &ScalarField) -> Result<()> {
    let mean = field.mean();
    let norm = field.l2_norm();
    if mean.abs() > 1e-10 * norm.max(f64::MIN_POSITIVE) && mean.abs() > 1e-300 {
        return Err(Error::NotMeanFree { mean, norm });
    }
    Ok(())
}

/// Solves `Δφ = g` for mean-free `g`; the returned `φ` is mean-free.
pub fn invert_laplacian(field: &ScalarField) -> Result<ScalarField> {
    check_mean_free(field)?;
    Ok(transform_inverse(&invert_laplacian_spectrum(&transform_forward(field))))
}

/// Divides every nonzero mode by `−|k|²` and zeroes the mean.
pub fn invert_laplacian_spectrum(spec: &Spectrum) -> Spectrum {
    let grid = spec.grid().clone();
    spec.map_modes(|a, b, c| {
        let kk = grid.k_squared(a, b);
        if kk == 0.0 {
            Complex64::default()
        } else {
            c / (-kk)
        }
    })
}

/// Inverse of the discrete operator `div ∘ ∇` (Nyquist-zeroed symbols).
/// Modes annihilated by that operator are set to zero.
pub fn invert_discrete_laplacian(field: &ScalarField) -> ScalarField {
    let spec = transform_forward(field);
    let grid = spec.grid().clone();
    transform_inverse(&spec.map_modes(|a, b, c| {
        let k1 = grid.derivative_symbol(a);
        let k2 = grid.derivative_symbol(b);
        let kk = k1 * k1 + k2 * k2;
        if kk == 0.0 {
            Complex64::default()
        } else {
            c / (-kk)
        }
    }))
}

fn shift_factor(grid: &TorusGrid, idx: usize, offset: f64) -> Complex64 {
    let phase = grid.angular(idx) * offset;
    if grid.is_nyquist(idx) {
        Complex64::new(phase.cos(), 0.0)
    } else {
        Complex64::new(phase.cos(), phase.sin())
    }
}

/// Returns `x ↦ g(x + offset)`, exact for band-limited fields.
pub fn phase_shift(field: &ScalarField, offset: [f64; 2]) -> ScalarField {
    transform_inverse(&phase_shift_spectrum(&transform_forward(field), offset))
}

pub fn phase_shift_spectrum(spec: &Spectrum, offset: [f64; 2]) -> Spectrum {
    let grid = spec.grid().clone();
    let n = grid.n();
    let f1: Vec<Complex64> = (0..n).map(|a| shift_factor(&grid, a, offset[0])).collect();
    let f2: Vec<Complex64> = (0..n).map(|b| shift_factor(&grid, b, offset[1])).collect();
    spec.map_modes(|a, b, c| c * f1[a] * f2[b])
}

pub fn phase_shift_vector(field: &VectorField, offset: [f64; 2]) -> VectorField {
    VectorField {
        x: phase_shift(&field.x, offset),
        y: phase_shift(&field.y, offset),
    }
}

/// Homogeneous Sobolev norm `(|𝕋²| Σ |2πk/L|^{2s} |ĝ_k|²)^{1/2}`.
///
/// `s = 0` is the L² norm (mean included); `s > 0` drops the mean; `s < 0`
/// requires a mean-free input. On the unit torus `s = −1` gives the usual
/// `Ḣ⁻¹` norm `(Σ_{k≠0} |ĝ_k|² / |2πk|²)^{1/2}`.
pub fn sobolev_norm(field: &ScalarField, s: f64) -> Result<f64> {
    if s < 0.0 {
        check_mean_free(field)?;
    }
    Ok(sobolev_norm_spectrum(&transform_forward(field), s))
}

/// Same as [`sobolev_norm`] but always discards the zero mode.
pub fn sobolev_norm_fluctuation(field: &ScalarField, s: f64) -> f64 {
    let mut spec = transform_forward(field);
    spec.coeffs_mut()[0] = Complex64::default();
    sobolev_norm_spectrum(&spec, s)
}

fn sobolev_norm_spectrum(spec: &Spectrum, s: f64) -> f64 {
    let grid = spec.grid();
    let n = grid.n();
    let mut acc = 0.0;
    for a in 0..n {
        for b in 0..n {
            let kk = grid.k_squared(a, b);
            let weight = if kk == 0.0 {
                if s == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                kk.powf(s)
            };
            acc += weight * spec.coeffs[a * n + b].norm_sqr();
        }
    }
    (grid.area() * acc).sqrt()
}

pub fn sup_norm(field: &ScalarField) -> f64 {
    field.sup_norm()
}

pub fn mean(field: &ScalarField) -> f64 {
    field.mean()
}

/// Zeroes modes outside the 2/3 band.
pub fn dealias_spectrum(spec: &Spectrum) -> Spectrum {
    let grid = spec.grid().clone();
    spec.map_modes(|a, b, c| {
        if grid.dealias_keep(a, b) {
            c
        } else {
            Complex64::default()
        }
    })
}

pub fn dealias(field: &ScalarField) -> ScalarField {
    transform_inverse(&dealias_spectrum(&transform_forward(field)))
}
