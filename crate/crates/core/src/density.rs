//! Variable-density extension: density transport and the momentum update
//! `ρ(u_t + u·∇u) = Δu − ∇P − F_B`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluid::{advection, integrating_factor_step, FluidState};
use crate::particles::sample_vector;
use crate::spectral::{
    divergence, gradient, invert_discrete_laplacian, leray_project, vector_laplacian, ScalarField, TorusGrid, VectorField,
};

/// Bilinear interpolation of a scalar field (periodic).
fn interpolate(field: &ScalarField, p: [f64; 2]) -> f64 {
    crate::particles::sample_scalar(field, p)
}

/// Positive density with its initial bounds `ρ_* ≤ ρ ≤ ρ^*` and mean.
#[derive(Clone, Debug)]
pub struct DensityField {
    pub rho: ScalarField,
    pub lower: f64,
    pub upper: f64,
    pub mean: f64,
}

impl DensityField {
    pub fn new(rho: ScalarField) -> Result<Self> {
        let lower = rho.min();
        if !(lower > 0.0) {
            return Err(Error::DensityNotPositive(lower));
        }
        Ok(Self {
            lower,
            upper: rho.max(),
            mean: rho.mean(),
            rho,
        })
    }

    pub fn tolerance(&self) -> f64 {
        1e-10 * self.upper
    }

    pub fn check_bounds(&self) -> Result<()> {
        let (min, max) = (self.rho.min(), self.rho.max());
        let tol = self.tolerance();
        if min < self.lower - tol || max > self.upper + tol {
            return Err(Error::DensityBounds {
                min,
                max,
                lower: self.lower,
                upper: self.upper,
            });
        }
        Ok(())
    }
}

/// Piecewise-constant stripes in `x₁`, smoothed by a discrete Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum DensityProfile {
    Constant { value: f64 },
    /// Equal-width stripes `levels[0], levels[1], …` along `x₁`, smoothed with
    /// a kernel of standard deviation `smoothing_cells · h`.
    Piecewise { levels: Vec<f64>, smoothing_cells: f64 },
}

impl DensityProfile {
    pub fn build(&self, grid: &Arc<TorusGrid>) -> Result<ScalarField> {
        match self {
            DensityProfile::Constant { value } => {
                if !(*value > 0.0) {
                    return Err(Error::DensityNotPositive(*value));
                }
                Ok(ScalarField::constant(grid, *value))
            }
            DensityProfile::Piecewise { levels, smoothing_cells } => {
                if levels.is_empty() {
                    return Err(Error::Config("piecewise density needs at least one level".into()));
                }
                if let Some(bad) = levels.iter().find(|l| !(**l > 0.0)) {
                    return Err(Error::DensityNotPositive(*bad));
                }
                let n = grid.n();
                let stripes: Vec<f64> = (0..n).map(|i| levels[i * levels.len() / n]).collect();
                let smoothed = smooth_periodic(&stripes, *smoothing_cells);
                Ok(ScalarField::from_fn(grid, |x, _| {
                    let i = ((x / grid.spacing()).round() as usize) % n;
                    smoothed[i]
                }))
            }
        }
    }
}

/// Periodic convolution with a normalized, nonnegative sampled Gaussian.
/// Nonnegative weights keep the output within the input range.
fn smooth_periodic(data: &[f64], sigma_cells: f64) -> Vec<f64> {
    let n = data.len();
    if sigma_cells <= 0.0 {
        return data.to_vec();
    }
    let half = ((4.0 * sigma_cells).ceil() as usize).min(n / 2);
    let kernel: Vec<f64> = (0..=2 * half)
        .map(|k| {
            let d = k as f64 - half as f64;
            (-0.5 * d * d / (sigma_cells * sigma_cells)).exp()
        })
        .collect();
    let total: f64 = kernel.iter().sum();
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let j = (i + n + k - half) % n;
                acc += w * data[j];
            }
            (acc / total).clamp(
                data.iter().copied().fold(f64::INFINITY, f64::min),
                data.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            )
        })
        .collect()
}

/// Semi-Lagrangian transport of `ρ` by `u` over `dt` with RK2 departure
/// points and bilinear interpolation, then a bound-preserving correction that
/// restores `⟨ρ⟩ = target_mean`.
pub fn advect_density(
    rho: &ScalarField,
    u: &VectorField,
    dt: f64,
    lower: f64,
    upper: f64,
    target_mean: f64,
) -> Result<ScalarField> {
    if !(dt > 0.0) {
        return Err(Error::InvalidTimeStep(dt));
    }
    rho.check_grid(&u.x)?;
    let grid = rho.grid().clone();
    let n = grid.n();
    let mut values = Vec::with_capacity(grid.len());
    for i in 0..n {
        let x = grid.coord(i);
        for j in 0..n {
            let y = grid.coord(j);
            let u0 = [u.x.at(i, j), u.y.at(i, j)];
            let mid = [x - 0.5 * dt * u0[0], y - 0.5 * dt * u0[1]];
            let um = sample_vector(u, mid);
            let foot = [x - dt * um[0], y - dt * um[1]];
            values.push(interpolate(rho, foot));
        }
    }
    let advected = ScalarField::new(grid, values)?;
    Ok(correct_mean(&advected, lower, upper, target_mean))
}

/// Adds the mean deficit proportionally to the headroom below `upper` (or
/// removes an excess proportionally to the distance above `lower`), so the
/// bounds survive the correction.
pub fn correct_mean(rho: &ScalarField, lower: f64, upper: f64, target_mean: f64) -> ScalarField {
    let deficit = target_mean - rho.mean();
    if deficit == 0.0 {
        return rho.clone();
    }
    let room = if deficit > 0.0 {
        rho.map(|r| (upper - r).max(0.0))
    } else {
        rho.map(|r| (r - lower).max(0.0))
    };
    let avg = room.mean();
    if avg <= 0.0 {
        return rho.clone();
    }
    let c = deficit / avg;
    rho.zip_map(&room, |r, w| r + c * w)
}

/// Result of a variable-coefficient pressure solve.
#[derive(Clone, Debug)]
pub struct PoissonSolution {
    pub pressure: ScalarField,
    pub iterations: usize,
    pub residual: f64,
}

/// `div(σ ∇P)` with `σ = 1/ρ`.
pub fn varcoef_operator(sigma: &ScalarField, p: &ScalarField) -> ScalarField {
    divergence(&gradient(p).mul_scalar(sigma))
}

/// Solves `div((1/ρ) ∇P) = rhs` for mean-free `P` by preconditioned
/// fixed-point iteration, starting from `initial` when given.
pub fn varcoef_poisson_solve(
    rho: &ScalarField,
    rhs: &ScalarField,
    initial: Option<&ScalarField>,
    tol: f64,
    max_iters: usize,
) -> Result<PoissonSolution> {
    rho.check_grid(rhs)?;
    let min = rho.min();
    if !(min > 0.0) {
        return Err(Error::DensityNotPositive(min));
    }
    let rhs_norm = rhs.l2_norm();
    if rhs.mean().abs() > 1e-10 * rhs_norm.max(f64::MIN_POSITIVE) && rhs.mean().abs() > 1e-300 {
        return Err(Error::NotMeanFree {
            mean: rhs.mean(),
            norm: rhs_norm,
        });
    }
    let sigma = rho.map(|r| 1.0 / r);
    let sigma_bar = sigma.mean();
    let mut p = match initial {
        Some(p0) => p0.shift_constant(-p0.mean()),
        None => ScalarField::zeros(rho.grid()),
    };
    if rhs_norm == 0.0 && initial.is_none() {
        return Ok(PoissonSolution {
            pressure: p,
            iterations: 0,
            residual: 0.0,
        });
    }
    let scale = rhs_norm.max(f64::MIN_POSITIVE);
    let mut residual = f64::INFINITY;
    for it in 0..=max_iters {
        let r = rhs.sub(&varcoef_operator(&sigma, &p));
        let r = r.shift_constant(-r.mean());
        residual = r.l2_norm() / scale;
        if residual <= tol || r.l2_norm() == 0.0 {
            return Ok(PoissonSolution {
                pressure: p,
                iterations: it,
                residual,
            });
        }
        if it == max_iters {
            break;
        }
        let correction = invert_discrete_laplacian(&r).scale(1.0 / sigma_bar);
        p = p.add(&correction);
    }
    Err(Error::PressureNonConvergence {
        iterations: max_iters,
        residual,
    })
}

/// Pressure-solver settings for the variable-density step.
#[derive(Clone, Copy, Debug)]
pub struct PressureSettings {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PressureSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 200,
        }
    }
}

/// Stage tendency of the variable-density momentum equation with the
/// implicit part `Δu/ρ_ref` removed. Returns the tendency and the pressure.
pub fn inhomogeneous_tendency(
    rho: &ScalarField,
    u: &VectorField,
    brinkman: &VectorField,
    rho_ref: f64,
    warm: Option<&ScalarField>,
    settings: PressureSettings,
) -> Result<(VectorField, PoissonSolution)> {
    let sigma = rho.map(|r| 1.0 / r);
    let lap = vector_laplacian(u);
    let g = lap
        .mul_scalar(&sigma.shift_constant(-1.0 / rho_ref))
        .sub(&advection(u))
        .sub(&brinkman.mul_scalar(&sigma));
    let rhs = divergence(&g);
    let rhs = rhs.shift_constant(-rhs.mean());
    let solution = varcoef_poisson_solve(rho, &rhs, warm, settings.tol, settings.max_iters)?;
    let t = g.sub(&gradient(&solution.pressure).mul_scalar(&sigma));
    Ok((leray_project(&t), solution))
}

/// Pressures computed at the two stages of the last inhomogeneous step.
#[derive(Clone, Debug)]
pub struct InhomogeneousStep {
    pub fluid: FluidState,
    pub rho: ScalarField,
    pub pressure: ScalarField,
    pub iterations: [usize; 2],
}

/// One variable-density step with stage-wise drag supplied by `brinkman`.
///
/// Stage 0 uses `ρⁿ`, stage 1 the predicted density advected by `uⁿ`; the
/// final density is advected by `½(uⁿ + uⁿ⁺¹)`.
#[allow(clippy::too_many_arguments)]
pub fn step_inhomogeneous_with(
    density: &DensityField,
    state: &FluidState,
    dt: f64,
    rho_ref: f64,
    settings: PressureSettings,
    warm: Option<&ScalarField>,
    mut brinkman: impl FnMut(usize, &VectorField) -> Result<VectorField>,
) -> Result<InhomogeneousStep> {
    if !(dt > 0.0) {
        return Err(Error::InvalidTimeStep(dt));
    }
    crate::fluid::check_divergence_free(&state.u)?;
    let rho_n = density.rho.clone();
    let rho_star = advect_density(&rho_n, &state.u, dt, density.lower, density.upper, density.mean)?;
    let mut pressure = warm.cloned();
    let mut stage0_pressure = None;
    let mut iterations = [0usize; 2];
    let fluid = integrating_factor_step(state, dt, rho_ref, |stage, u| {
        let rho = if stage == 0 { &rho_n } else { &rho_star };
        let f = brinkman(stage, u)?;
        let (t, sol) = inhomogeneous_tendency(rho, u, &f, rho_ref, pressure.as_ref(), settings)?;
        iterations[stage] = sol.iterations;
        if stage == 0 {
            stage0_pressure = Some(sol.pressure.clone());
        }
        pressure = Some(sol.pressure);
        Ok(t)
    })?;
    let mid = state.u.add(&fluid.u).scale(0.5);
    let rho = advect_density(&rho_n, &mid, dt, density.lower, density.upper, density.mean)?;
    Ok(InhomogeneousStep {
        fluid,
        rho,
        pressure: stage0_pressure.expect("stage 0 always runs"),
        iterations,
    })
}

/// Fixed-drag convenience wrapper returning the new density and velocity.
pub fn step_inhomogeneous(
    density: &DensityField,
    state: &FluidState,
    brinkman: &VectorField,
    dt: f64,
) -> Result<(DensityField, FluidState)> {
    let step = step_inhomogeneous_with(
        density,
        state,
        dt,
        density.lower,
        PressureSettings::default(),
        None,
        |_, _| Ok(brinkman.clone()),
    )?;
    let next = DensityField {
        rho: step.rho,
        ..density.clone()
    };
    next.check_bounds()?;
    Ok((next, step.fluid))
}

/// `u̇ = (Δu − ∇P − F_B)/ρ`.
pub fn material_derivative_inhomogeneous(
    rho: &ScalarField,
    u: &VectorField,
    pressure: &ScalarField,
    brinkman: &VectorField,
) -> VectorField {
    let sigma = rho.map(|r| 1.0 / r);
    vector_laplacian(u).sub(&gradient(pressure)).sub(brinkman).mul_scalar(&sigma)
}

/// Mean-free pressure of the variable-density system at fixed `(ρ, u)`.
pub fn recover_pressure_inhomogeneous(
    rho: &ScalarField,
    u: &VectorField,
    brinkman: &VectorField,
    settings: PressureSettings,
) -> Result<ScalarField> {
    let sigma = rho.map(|r| 1.0 / r);
    let g = vector_laplacian(u)
        .mul_scalar(&sigma)
        .sub(&advection(u))
        .sub(&brinkman.mul_scalar(&sigma));
    let rhs = divergence(&g);
    let rhs = rhs.shift_constant(-rhs.mean());
    Ok(varcoef_poisson_solve(rho, &rhs, None, settings.tol, settings.max_iters)?.pressure)
}
