//! Pseudospectral Navier–Stokes with unit viscosity and Brinkman forcing.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{
    dealias_spectrum, divergence, gradient, invert_laplacian, leray_project, leray_project_spectra,
    transform_forward, transform_inverse, vector_laplacian, ScalarField, Spectrum, VectorField,
};

/// Relative divergence tolerance for velocity inputs.
pub const DIVERGENCE_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct FluidState {
    pub u: VectorField,
    pub t: f64,
}

impl FluidState {
    pub fn new(u: VectorField, t: f64) -> Result<Self> {
        check_divergence_free(&u)?;
        Ok(Self { u, t })
    }

    /// `½ ‖u‖²_{L²}`.
    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.u.l2_norm().powi(2)
    }
}

pub fn check_divergence_free(u: &VectorField) -> Result<()> {
    let norm = u.l2_norm();
    let div = divergence(u).l2_norm();
    if div > DIVERGENCE_TOL * norm.max(f64::MIN_POSITIVE) && div > 1e-300 {
        return Err(Error::NotDivergenceFree {
            ratio: div / norm.max(f64::MIN_POSITIVE),
        });
    }
    Ok(())
}

/// Taylor–Green vortex `a (sin 2πx₁ cos 2πx₂, −cos 2πx₁ sin 2πx₂)` on a torus of side `L`.
pub fn taylor_green(grid: &std::sync::Arc<crate::spectral::TorusGrid>, amplitude: f64) -> VectorField {
    let k = 2.0 * std::f64::consts::PI / grid.length();
    VectorField::from_fn(grid, |x, y| {
        [
            amplitude * (k * x).sin() * (k * y).cos(),
            -amplitude * (k * x).cos() * (k * y).sin(),
        ]
    })
}

fn spectra(u: &VectorField) -> (Spectrum, Spectrum) {
    (transform_forward(&u.x), transform_forward(&u.y))
}

fn physical(sx: &Spectrum, sy: &Spectrum) -> VectorField {
    VectorField {
        x: transform_inverse(sx),
        y: transform_inverse(sy),
    }
}

/// Dealiased advection `div(u ⊗ u)`: inputs and product are truncated to the
/// 2/3 band, which makes `∫ u · N(u) = 0` exact on the grid.
pub fn advection(u: &VectorField) -> VectorField {
    let (sx, sy) = spectra(u);
    let vx = transform_inverse(&dealias_spectrum(&sx));
    let vy = transform_inverse(&dealias_spectrum(&sy));
    let grid = u.grid().clone();
    let xx = transform_forward(&vx.mul(&vx));
    let xy = transform_forward(&vx.mul(&vy));
    let yy = transform_forward(&vy.mul(&vy));
    let n = grid.n();
    let mut nx = Spectrum::zeros(&grid);
    let mut ny = Spectrum::zeros(&grid);
    for a in 0..n {
        let k1 = grid.derivative_symbol(a);
        for b in 0..n {
            if !grid.dealias_keep(a, b) {
                continue;
            }
            let k2 = grid.derivative_symbol(b);
            let idx = a * n + b;
            let i = Complex64::new(0.0, 1.0);
            nx.coeffs_mut()[idx] = i * (xx.coeffs()[idx] * k1 + xy.coeffs()[idx] * k2);
            ny.coeffs_mut()[idx] = i * (xy.coeffs()[idx] * k1 + yy.coeffs()[idx] * k2);
        }
    }
    physical(&nx, &ny)
}

/// Projected tendency `P(−div(u ⊗ u) − F_B)` without the viscous term.
pub fn ns_rhs(u: &VectorField, brinkman: &VectorField) -> Result<VectorField> {
    u.check_grid(brinkman)?;
    let n = advection(u);
    Ok(leray_project(&n.add(brinkman).scale(-1.0)))
}

/// Integrating-factor Heun step for `u_t = Δu / ρ_ref + T(u)` where the
/// explicit tendency `T` is supplied per stage. Stage 0 is evaluated at
/// `(t, u)`, stage 1 at `(t + dt, u₁)` with `u₁` the forward-Euler predictor.
pub fn integrating_factor_step(
    state: &FluidState,
    dt: f64,
    rho_ref: f64,
    mut tendency: impl FnMut(usize, &VectorField) -> Result<VectorField>,
) -> Result<FluidState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidTimeStep(dt));
    }
    let grid = state.u.grid().clone();
    let n = grid.n();
    let factor: Vec<f64> = (0..n * n)
        .map(|idx| (-grid.k_squared(idx / n, idx % n) * dt / rho_ref).exp())
        .collect();
    let scale = |s: &Spectrum| {
        let mut out = s.clone();
        for (c, e) in out.coeffs_mut().iter_mut().zip(&factor) {
            *c *= *e;
        }
        out
    };

    let (ux, uy) = spectra(&state.u);
    let t0 = tendency(0, &state.u)?;
    let (t0x, t0y) = spectra(&t0);
    let u1x = scale(&ux.add(&t0x.scale(dt)));
    let u1y = scale(&uy.add(&t0y.scale(dt)));
    let u1 = physical(&u1x, &u1y);

    let t1 = tendency(1, &u1)?;
    let (t1x, t1y) = spectra(&t1);
    let ex = scale(&ux).add(&scale(&t0x).add(&t1x).scale(0.5 * dt));
    let ey = scale(&uy).add(&scale(&t0y).add(&t1y).scale(0.5 * dt));
    // The tendencies are solenoidal already; projecting again removes
    // round-off drift in the divergence over long runs.
    let (px, py) = leray_project_spectra(&ex, &ey);
    let u = physical(&px, &py);
    if !u.is_finite() {
        return Err(Error::Numerical {
            t: state.t + dt,
            what: "non-finite velocity".into(),
        });
    }
    Ok(FluidState { u, t: state.t + dt })
}

/// One step of the homogeneous momentum equation with a fixed drag field.
pub fn step_homogeneous(state: &FluidState, brinkman: &VectorField, dt: f64) -> Result<FluidState> {
    check_divergence_free(&state.u)?;
    integrating_factor_step(state, dt, 1.0, |_, u| ns_rhs(u, brinkman))
}

/// Mean-free pressure solving `ΔP = div(−div(u ⊗ u) − F_B)`.
pub fn recover_pressure(u: &VectorField, brinkman: &VectorField) -> Result<ScalarField> {
    u.check_grid(brinkman)?;
    let rhs = divergence(&advection(u).add(brinkman).scale(-1.0));
    let rhs = rhs.shift_constant(-rhs.mean());
    invert_laplacian(&rhs)
}

/// `u̇ = Δu − ∇P − F_B`, which equals `u_t + u·∇u` along solutions.
pub fn material_derivative(u: &VectorField, pressure: &ScalarField, brinkman: &VectorField) -> VectorField {
    vector_laplacian(u).sub(&gradient(pressure)).sub(brinkman)
}

/// Step-size bound `min(cfl·h/max(‖u‖_∞, ε), 0.5/max(n_max, 1), dt_max)`.
pub fn cfl_dt(u: &VectorField, nf_max: f64, cfl: f64, dt_max: f64) -> f64 {
    let h = u.grid().spacing();
    let speed = u.sup_norm().max(1e-12);
    (cfl * h / speed).min(0.5 / nf_max.max(1.0)).min(dt_max)
}
