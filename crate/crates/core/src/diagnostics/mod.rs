//! Energies, dissipation, modulated energy, Lyapunov quantities and balance
//! residuals.

pub mod fit;
pub mod profile;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::particles::{gather_velocity, MomentFields, ParticleEnsemble};
use crate::spectral::{
    partial, sobolev_norm_fluctuation, ScalarField, VectorField,
};

pub use fit::{fit_decay, lambda0_scale, DecayFit, DecayModel};
pub use profile::{ParticleProfile, ProfileAccumulator};

/// One recorded time level.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub energy: f64,
    pub dissipation: f64,
    pub modulated: f64,
    pub mass: f64,
    pub momentum: [f64; 2],
    pub mean_u: [f64; 2],
    pub u_inf: [f64; 2],
    pub energy_residual: f64,
    pub modulated_residual: f64,
    pub grad_u_l2: f64,
    pub grad2_u_l2: f64,
    pub grad_p_l2: f64,
    pub udot_l2: f64,
    pub nf_linf: f64,
    pub jf_linf: f64,
    pub ef_linf: f64,
    pub grad_u_linf: f64,
    pub lip_budget: f64,
    pub entropy: f64,
    pub w1_bound: f64,
    pub nf_profile_hm1: f64,
    pub pressure_cross_term: f64,
    pub density: Option<DensityColumns>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DensityColumns {
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_mean: f64,
    pub rho_profile_hm1: f64,
}

/// `E = ½∫ρ|u|² + ½Σw|V|²` (`ρ ≡ 1` when absent).
pub fn kinetic_energy(u: &VectorField, ensemble: &ParticleEnsemble, rho: Option<&ScalarField>) -> f64 {
    let fluid = match rho {
        Some(r) => 0.5 * (u.x.mul(&u.x).add(&u.y.mul(&u.y))).inner(r),
        None => 0.5 * u.l2_norm().powi(2),
    };
    fluid + ensemble.kinetic_energy()
}

/// `‖∇u‖²_{L²}` from the spectrum.
pub fn grad_u_squared(u: &VectorField) -> f64 {
    sobolev_norm_fluctuation(&u.x, 1.0).powi(2) + sobolev_norm_fluctuation(&u.y, 1.0).powi(2)
}

/// `‖∇²u‖_{L²}`, i.e. the `Ḣ²` seminorm.
pub fn grad2_u_l2(u: &VectorField) -> f64 {
    (sobolev_norm_fluctuation(&u.x, 2.0).powi(2) + sobolev_norm_fluctuation(&u.y, 2.0).powi(2)).sqrt()
}

/// `Σ w |u(X) − V|²`.
pub fn drag_dissipation(u: &VectorField, ensemble: &ParticleEnsemble) -> f64 {
    gather_velocity(u, ensemble)
        .iter()
        .zip(&ensemble.velocities)
        .zip(&ensemble.weights)
        .map(|((g, v), w)| {
            let (a, b) = (g[0] - v[0], g[1] - v[1]);
            w * (a * a + b * b)
        })
        .sum()
}

/// `D = ‖∇u‖² + Σ w |u(X) − V|²`.
pub fn dissipation(u: &VectorField, ensemble: &ParticleEnsemble) -> f64 {
    grad_u_squared(u) + drag_dissipation(u, ensemble)
}

/// The three terms of the modulated energy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModulatedParts {
    pub fluid: f64,
    pub kinetic: f64,
    pub coupling: f64,
}

impl ModulatedParts {
    pub fn total(&self) -> f64 {
        self.fluid + self.kinetic + self.coupling
    }
}

/// Modulated energy as written: fluctuation of `u` about `⟨u⟩` (or
/// `⟨ρu⟩/⟨ρ⟩`), fluctuation of `V` about `⟨j_f⟩/⟨n_f⟩`, and the scalar
/// coupling term. An empty ensemble contributes nothing.
pub fn modulated_energy_parts(
    u: &VectorField,
    ensemble: &ParticleEnsemble,
    rho: Option<&ScalarField>,
) -> Result<ModulatedParts> {
    let area = u.grid().area();
    let (fluid, bulk_u, fluid_mass) = match rho {
        None => {
            let mean = u.mean();
            let fluct = u.shift_constant([-mean[0], -mean[1]]);
            (0.5 * fluct.l2_norm().powi(2), mean, area)
        }
        Some(r) => {
            let r_mean = r.mean();
            if !(r_mean > 0.0) {
                return Err(Error::ZeroDenominator("mean fluid density"));
            }
            let bulk = [u.x.mul(r).mean() / r_mean, u.y.mul(r).mean() / r_mean];
            let fluct = u.shift_constant([-bulk[0], -bulk[1]]);
            let e = 0.5 * fluct.x.mul(&fluct.x).add(&fluct.y.mul(&fluct.y)).inner(r);
            (e, bulk, r.integral())
        }
    };
    let mass = ensemble.total_mass();
    if ensemble.is_empty() || mass == 0.0 {
        return Ok(ModulatedParts {
            fluid,
            kinetic: 0.0,
            coupling: 0.0,
        });
    }
    let p = ensemble.momentum();
    let bulk_v = [p[0] / mass, p[1] / mass];
    let kinetic = 0.5 * ensemble.second_moment_about(bulk_v);
    let weight = match rho {
        // ‖n_f‖_{L¹} / (⟨n_f⟩ + 1)
        None => mass / (mass / area + 1.0),
        // ‖n_f‖‖ρ‖ / (‖n_f‖ + ‖ρ‖)
        Some(_) => mass * fluid_mass / (mass + fluid_mass),
    };
    let d = [bulk_u[0] - bulk_v[0], bulk_u[1] - bulk_v[1]];
    let coupling = 0.5 * weight * (d[0] * d[0] + d[1] * d[1]);
    Ok(ModulatedParts {
        fluid,
        kinetic,
        coupling,
    })
}

pub fn modulated_energy(u: &VectorField, ensemble: &ParticleEnsemble, rho: Option<&ScalarField>) -> Result<f64> {
    Ok(modulated_energy_parts(u, ensemble, rho)?.total())
}

/// `u_∞ = ⟨u₀ + j_{f₀}⟩ / (1 + ⟨n_{f₀}⟩)`.
pub fn u_infinity(mean_u0: [f64; 2], mean_nf0: f64, mean_jf0: [f64; 2]) -> Result<[f64; 2]> {
    let den = 1.0 + mean_nf0;
    if !(den > 0.0) {
        return Err(Error::ZeroDenominator("1 + ⟨n_f0⟩"));
    }
    Ok([(mean_u0[0] + mean_jf0[0]) / den, (mean_u0[1] + mean_jf0[1]) / den])
}

/// `ū_∞ = ⟨ρ₀u₀ + j_{f₀}⟩ / (⟨n_{f₀}⟩ + ⟨ρ₀⟩)`.
pub fn u_infinity_inhomogeneous(
    mean_rho_u0: [f64; 2],
    mean_rho0: f64,
    mean_nf0: f64,
    mean_jf0: [f64; 2],
) -> Result<[f64; 2]> {
    let den = mean_nf0 + mean_rho0;
    if !(den > 0.0) {
        return Err(Error::ZeroDenominator("⟨n_f0⟩ + ⟨ρ0⟩"));
    }
    Ok([
        (mean_rho_u0[0] + mean_jf0[0]) / den,
        (mean_rho_u0[1] + mean_jf0[1]) / den,
    ])
}

/// Norm of `⟨u⟩ − u_∞ − (⟨n⟩/(1+⟨n⟩))(⟨u⟩ − ⟨j⟩/⟨n⟩)`; with `ρ` given, the
/// variable-density analogue with `⟨ρu⟩/⟨ρ⟩` and weight `⟨n⟩/(⟨n⟩+⟨ρ⟩)`.
pub fn u_infinity_identity_residual(
    bulk_u: [f64; 2],
    u_inf: [f64; 2],
    mean_n: f64,
    mean_j: [f64; 2],
    mean_rho: f64,
) -> f64 {
    let mut r = [bulk_u[0] - u_inf[0], bulk_u[1] - u_inf[1]];
    if mean_n > 0.0 {
        let w = mean_n / (mean_rho + mean_n);
        for c in 0..2 {
            r[c] -= w * (bulk_u[c] - mean_j[c] / mean_n);
        }
    }
    r[0].hypot(r[1])
}

/// `∫ n |log n| dx` with `0 log 0 = 0`.
pub fn entropy(n_f: &ScalarField) -> f64 {
    n_f.values()
        .iter()
        .map(|&n| if n > 0.0 { (n * n.ln()).abs() } else { 0.0 })
        .sum::<f64>()
        * n_f.grid().cell_area()
}

/// Affine bound `‖f₀ log f₀‖ + (t + log 2π) M₀ + 2e⁻¹|𝕋²| + ½ Σ w |V − ū|²`.
pub fn entropy_bound(f_log_f: f64, t: f64, mass: f64, area: f64, second_moment: f64) -> f64 {
    f_log_f + (t + (2.0 * std::f64::consts::PI).ln()) * mass + 2.0 * area / std::f64::consts::E + 0.5 * second_moment
}

/// Velocity gradient components `[∂₁u₁, ∂₂u₁, ∂₁u₂, ∂₂u₂]`.
pub fn velocity_gradient(u: &VectorField) -> [ScalarField; 4] {
    [partial(&u.x, 0), partial(&u.x, 1), partial(&u.y, 0), partial(&u.y, 1)]
}

/// Grid maximum of the Frobenius norm of `∇u`.
pub fn grad_u_sup(grad: &[ScalarField; 4]) -> f64 {
    let n = grad[0].values().len();
    (0..n)
        .map(|i| grad.iter().map(|g| g.values()[i].powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// `∫ (P − ⟨P⟩) ∇u : (∇u)ᵀ`.
pub fn pressure_cross_term(pressure: &ScalarField, grad: &[ScalarField; 4]) -> f64 {
    let [a, b, c, d] = grad;
    // Σ_ij ∂_j u_i ∂_i u_j = a² + 2bc + d²
    let contraction = a.mul(a).add(&b.mul(c).scale(2.0)).add(&d.mul(d));
    let p = pressure.shift_constant(-pressure.mean());
    p.inner(&contraction)
}

/// `∫ (P − ⟨P⟩) Tr((∇u)³)`, which vanishes for divergence-free `u`.
pub fn pressure_trace_cube(pressure: &ScalarField, grad: &[ScalarField; 4]) -> f64 {
    let n = grad[0].values().len();
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b, c, d) = (
                grad[0].values()[i],
                grad[1].values()[i],
                grad[2].values()[i],
                grad[3].values()[i],
            );
            // A = [[a, b], [c, d]]; Tr A³ = a³ + 3abc + 3bcd + d³
            a * a * a + 3.0 * a * b * c + 3.0 * b * c * d + d * d * d
        })
        .collect();
    let field = ScalarField::new(pressure.grid().clone(), values).expect("same grid");
    pressure.shift_constant(-pressure.mean()).inner(&field)
}

/// Quantities of the `H¹` and material-derivative estimates at one time.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LyapunovRecord {
    pub grad_u_sq: f64,
    pub grad2_u_l2: f64,
    pub grad_p_l2: f64,
    pub udot_l2: f64,
    pub sqrt_nf_udot_l2: f64,
    pub drag_dissipation: f64,
    pub pressure_cross_term: f64,
    pub grad_u_linf: f64,
    pub nf_linf: f64,
    pub jf_linf: f64,
    pub ef_linf: f64,
}

pub fn lyapunov_record(
    u: &VectorField,
    pressure: &ScalarField,
    udot: &VectorField,
    moments: &MomentFields,
) -> LyapunovRecord {
    let grad = velocity_gradient(u);
    let grad_p = crate::spectral::gradient(pressure);
    let sqrt_nf = moments.density.map(|n| n.max(0.0).sqrt());
    LyapunovRecord {
        grad_u_sq: grad_u_squared(u),
        grad2_u_l2: grad2_u_l2(u),
        grad_p_l2: grad_p.l2_norm(),
        udot_l2: udot.l2_norm(),
        sqrt_nf_udot_l2: udot.mul_scalar(&sqrt_nf).l2_norm(),
        drag_dissipation: moments.drag_dissipation,
        pressure_cross_term: pressure_cross_term(pressure, &grad),
        grad_u_linf: grad_u_sup(&grad),
        nf_linf: moments.density.sup_norm(),
        jf_linf: moments.momentum.sup_norm(),
        ef_linf: moments.energy.sup_norm(),
    }
}

/// `Σ w |V − u_∞| + ‖ñ_f − n_∞‖_{Ḣ⁻¹}` (mean mode dropped).
pub fn w1_upper_bound(ensemble: &ParticleEnsemble, u_inf: [f64; 2], shifted_nf: &ScalarField, profile: &ScalarField) -> f64 {
    ensemble.first_moment_about(u_inf) + sobolev_norm_fluctuation(&shifted_nf.sub(profile), -1.0)
}

/// Trapezoid integral on a uniform sample grid with the Euler–Maclaurin
/// end correction `−Δ²/12 (f'(b) − f'(a))`; derivatives are one-sided
/// second-order differences.
#[derive(Clone, Debug, Default)]
pub struct RunningIntegral {
    trapezoid: f64,
    samples: Vec<(f64, f64)>,
    head: [(f64, f64); 3],
}

impl RunningIntegral {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, y: f64) {
        if let Some(&(tp, yp)) = self.samples.last() {
            self.trapezoid += 0.5 * (t - tp) * (y + yp);
        }
        if self.samples.len() < 3 {
            self.head[self.samples.len()] = (t, y);
        }
        // keep only the last three samples beyond the head
        self.samples.push((t, y));
        if self.samples.len() > 3 {
            self.samples.remove(0);
        }
    }

    /// Trapezoid value without the end correction.
    pub fn trapezoid(&self) -> f64 {
        self.trapezoid
    }

    pub fn value(&self) -> f64 {
        let k = self.samples.len();
        if k < 3 {
            return self.trapezoid;
        }
        let (t0, y0) = self.head[0];
        let (t1, y1) = self.head[1];
        let (_, y2) = self.head[2];
        let h = t1 - t0;
        let (tb2, yb2) = self.samples[k - 3];
        let (_, yb1) = self.samples[k - 2];
        let (tb, yb) = self.samples[k - 1];
        if tb - tb2 <= 0.0 || h <= 0.0 {
            return self.trapezoid;
        }
        let hb = 0.5 * (tb - tb2);
        let da = (-3.0 * y0 + 4.0 * y1 - y2) / (2.0 * h);
        let db = (3.0 * yb - 4.0 * yb1 + yb2) / (2.0 * hb);
        self.trapezoid - h * hb / 12.0 * (db - da)
    }

    /// Size of the end correction, used as the quadrature error estimate.
    pub fn correction(&self) -> f64 {
        (self.value() - self.trapezoid).abs()
    }
}

/// Post-hoc balance residuals of a recorded history.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BalanceResiduals {
    /// `|E(t) + ∫₀ᵗ D − E₀|` per row.
    pub energy: Vec<f64>,
    /// `|H(t) + ∫₀ᵗ D − H₀|` per row.
    pub modulated: Vec<f64>,
    pub max_mass_drift: f64,
    pub max_momentum_drift: f64,
    /// Identity residual per row.
    pub identity: Vec<f64>,
    /// Quadrature error estimate per row.
    pub quadrature: Vec<f64>,
}

/// Residuals of the mass, momentum, energy and modulated-energy balances on
/// the recorded rows, integrating `D` at the recording cadence.
pub fn balance_residuals(rows: &[DiagnosticsRow], area: f64) -> BalanceResiduals {
    let mut out = BalanceResiduals::default();
    let Some(first) = rows.first() else {
        return out;
    };
    let mut integral = RunningIntegral::new();
    for row in rows {
        integral.push(row.t, row.dissipation);
        let dint = integral.value();
        out.energy.push((row.energy + dint - first.energy).abs());
        out.modulated.push((row.modulated + dint - first.modulated).abs());
        out.quadrature.push(integral.correction());
        out.max_mass_drift = out.max_mass_drift.max((row.mass - first.mass).abs());
        let dp = (row.momentum[0] - first.momentum[0]).hypot(row.momentum[1] - first.momentum[1]);
        out.max_momentum_drift = out.max_momentum_drift.max(dp);
        let mean_n = row.mass / area;
        let mean_rho = row.density.map_or(1.0, |d| d.rho_mean);
        // momentum = ∫(ρ)u + Σ w V, so ⟨j⟩ = momentum/|𝕋²| − ⟨ρ⟩ bulk_u
        let mean_j = [
            row.momentum[0] / area - mean_rho * row.mean_u[0],
            row.momentum[1] / area - mean_rho * row.mean_u[1],
        ];
        out.identity.push(u_infinity_identity_residual(row.mean_u, row.u_inf, mean_n, mean_j, mean_rho));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluid::taylor_green;
    use crate::spectral::{gradient, leray_project, transform_forward, TorusGrid};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn ensemble(xs: &[[f64; 2]], vs: &[[f64; 2]], w: f64) -> ParticleEnsemble {
        ParticleEnsemble::new(xs.to_vec(), vs.to_vec(), vec![w; xs.len()], 1.0).unwrap()
    }

    fn random_solenoidal(grid: &std::sync::Arc<TorusGrid>, seed: u64) -> VectorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = VectorField::from_fn(grid, |_, _| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        leray_project(&raw)
    }

    #[test]
    fn energy_and_dissipation_examples() {
        let grid = TorusGrid::unit(16).unwrap();
        let ens = ensemble(&[[0.3, 0.3]], &[[2.0, 0.0]], 1.0);
        let zero = VectorField::zeros(&grid);
        assert_relative_eq!(kinetic_energy(&zero, &ens, None), 2.0);
        assert_relative_eq!(dissipation(&zero, &ens), 4.0);

        let c = [0.4, -0.1];
        let u = VectorField::constant(&grid, c);
        let mono = ensemble(&[[0.1, 0.2], [0.7, 0.9]], &[c, c], 0.5);
        assert!(dissipation(&u, &mono) < 1e-28);
    }

    #[test]
    fn energy_quadrature_matches_parseval() {
        let grid = TorusGrid::unit(32).unwrap();
        let u = random_solenoidal(&grid, 3);
        let direct = kinetic_energy(&u, &ParticleEnsemble::empty(1.0), None);
        let spectral = 0.5 * (transform_forward(&u.x).energy() + transform_forward(&u.y).energy());
        assert_relative_eq!(direct, spectral, max_relative = 1e-10);
    }

    #[test]
    fn modulated_examples() {
        let grid = TorusGrid::unit(16).unwrap();
        let c = [0.4, -0.1];
        let eq = ensemble(&[[0.1, 0.2], [0.7, 0.9]], &[c, c], 0.5);
        assert!(modulated_energy(&VectorField::constant(&grid, c), &eq, None).unwrap() < 1e-28);

        let ens = ensemble(&[[0.1, 0.2], [0.7, 0.9]], &[[1.0, 0.0], [1.0, 0.0]], 0.5);
        let h = modulated_energy(&VectorField::zeros(&grid), &ens, None).unwrap();
        assert_relative_eq!(h, 0.25, max_relative = 1e-15);

        let tg = taylor_green(&grid, 1.0);
        let fluid_only = modulated_energy(&tg, &ParticleEnsemble::empty(1.0), None).unwrap();
        assert_relative_eq!(fluid_only, 0.5 * tg.l2_norm().powi(2), max_relative = 1e-14);
    }

    /// Expanding the squares gives `E − H = ½|∫ρu + Σw V|² / (‖ρ‖ + M)`.
    #[test]
    fn modulated_matches_bulk_reexpansion() {
        for (length, seed) in [(1.0, 1u64), (2.0, 2), (0.5, 3)] {
            let grid = TorusGrid::new(16, length).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_solenoidal(&grid, seed).shift_constant([0.3, -0.6]);
            let n = 50;
            let xs: Vec<_> = (0..n).map(|_| [rng.random_range(0.0..length), rng.random_range(0.0..length)]).collect();
            let vs: Vec<_> = (0..n).map(|_| [rng.random_range(-1.0..2.0), rng.random_range(-1.0..1.0)]).collect();
            let ws: Vec<_> = (0..n).map(|_| rng.random_range(0.0..0.1)).collect();
            let ens = ParticleEnsemble::new(xs, vs, ws, length).unwrap();
            let m = ens.total_mass();
            let p = ens.momentum();

            let h = modulated_energy(&u, &ens, None).unwrap();
            let e = kinetic_energy(&u, &ens, None);
            let iu = u.integral();
            let bulk = 0.5 * ((iu[0] + p[0]).powi(2) + (iu[1] + p[1]).powi(2)) / (grid.area() + m);
            assert_relative_eq!(e - h, bulk, max_relative = 1e-10);
            assert!(h <= e);

            let rho = ScalarField::from_fn(&grid, |x, _| 1.5 + 0.5 * (2.0 * PI * x / length).sin());
            let h = modulated_energy(&u, &ens, Some(&rho)).unwrap();
            let e = kinetic_energy(&u, &ens, Some(&rho));
            let ru = [u.x.inner(&rho), u.y.inner(&rho)];
            let bulk = 0.5 * ((ru[0] + p[0]).powi(2) + (ru[1] + p[1]).powi(2)) / (rho.integral() + m);
            assert_relative_eq!(e - h, bulk, max_relative = 1e-10);
        }
    }

    #[test]
    fn zero_dissipation_kills_fluctuation_terms() {
        let grid = TorusGrid::unit(16).unwrap();
        let c = [0.2, 0.7];
        let u = VectorField::constant(&grid, c);
        let ens = ensemble(&[[0.1, 0.5], [0.33, 0.8], [0.9, 0.01]], &[c, c, c], 0.3);
        assert!(dissipation(&u, &ens) < 1e-28);
        let parts = modulated_energy_parts(&u, &ens, None).unwrap();
        assert!(parts.fluid < 1e-28 && parts.kinetic < 1e-28);
    }

    #[test]
    fn u_infinity_examples() {
        assert_eq!(u_infinity([0.3, 0.1], 0.0, [0.0, 0.0]).unwrap(), [0.3, 0.1]);
        let u = u_infinity([0.2, 0.0], 1.0, [0.0, 0.0]).unwrap();
        assert_relative_eq!(u[0], 0.1);
        let v = u_infinity_inhomogeneous([0.4, 0.0], 2.0, 0.0, [0.0, 0.0]).unwrap();
        assert_relative_eq!(v[0], 0.2);
        assert!(u_infinity([0.0, 0.0], -1.0, [0.0, 0.0]).is_err());
    }

    #[test]
    fn identity_residual_vanishes_on_conserved_momentum() {
        let (u0, n, j0) = ([0.3, -0.2], 0.8, [0.5, 0.1]);
        let u_inf = u_infinity(u0, n, j0).unwrap();
        // exchange momentum between fluid and particles
        let (du, dj) = ([0.05, 0.02], [-0.05, -0.02]);
        let u = [u0[0] + du[0], u0[1] + du[1]];
        let j = [j0[0] + dj[0], j0[1] + dj[1]];
        assert!(u_infinity_identity_residual(u, u_inf, n, j, 1.0) < 1e-15);
    }

    #[test]
    fn entropy_examples() {
        let grid = TorusGrid::unit(16).unwrap();
        assert_eq!(entropy(&ScalarField::constant(&grid, 1.0)), 0.0);
        let half = ScalarField::from_fn(&grid, |x, _| if x < 0.5 { 2.0 } else { 0.0 });
        assert_relative_eq!(entropy(&half), 2f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn lyapunov_single_mode() {
        let grid = TorusGrid::unit(16).unwrap();
        let a = 0.7;
        let u = VectorField::from_fn(&grid, |_, y| [a * (2.0 * PI * y).sin(), 0.0]);
        let moments = MomentFields::zeros(&grid);
        let p = ScalarField::zeros(&grid);
        let rec = lyapunov_record(&u, &p, &VectorField::zeros(&grid), &moments);
        assert_relative_eq!(rec.grad_u_sq, 4.0 * PI * PI * a * a / 2.0, max_relative = 1e-12);
        assert_eq!(rec.pressure_cross_term, 0.0);
        let zero = lyapunov_record(&VectorField::zeros(&grid), &p, &VectorField::zeros(&grid), &moments);
        assert_eq!(zero.grad_u_sq, 0.0);
        assert_eq!(zero.grad_u_linf, 0.0);
    }

    #[test]
    fn trace_cube_identity_on_random_fields() {
        let grid = TorusGrid::unit(32).unwrap();
        for seed in 0..10 {
            let u = random_solenoidal(&grid, 100 + seed);
            let p = crate::spectral::divergence(&gradient(&u.x));
            let grad = velocity_gradient(&u);
            let scale = p.l2_norm() * grad.iter().map(|g| g.l2_norm()).sum::<f64>().powi(3);
            assert!(pressure_trace_cube(&p, &grad).abs() <= 1e-10 * scale.max(1.0));
        }
    }

    #[test]
    fn running_integral_is_exact_on_cubics() {
        let mut integral = RunningIntegral::new();
        let f = |t: f64| 1.0 + 2.0 * t - t * t + 0.5 * t * t * t;
        let h = 0.1;
        for k in 0..=20 {
            integral.push(k as f64 * h, f(k as f64 * h));
        }
        let exact = 2.0 + 4.0 - 8.0 / 3.0 + 0.5 * 4.0;
        // trapezoid alone is off by h²/12·(f'(2) − f'(0))
        assert!((integral.trapezoid() - exact).abs() > 1e-4);
        assert!((integral.value() - exact).abs() < 1e-5);
    }

    #[test]
    fn balance_examples() {
        let eq = DiagnosticsRow {
            t: 0.0,
            energy: 1.0,
            mass: 1.0,
            ..Default::default()
        };
        let rows = vec![eq.clone(), DiagnosticsRow { t: 1.0, ..eq.clone() }];
        let res = balance_residuals(&rows, 1.0);
        assert!(res.energy.iter().all(|r| *r == 0.0));
        assert_eq!(res.max_mass_drift, 0.0);

        let d = 0.3;
        let rows: Vec<_> = (0..11)
            .map(|k| {
                let t = k as f64 * 0.1;
                DiagnosticsRow { t, energy: 2.0 - d * t, dissipation: d, ..Default::default() }
            })
            .collect();
        let res = balance_residuals(&rows, 1.0);
        assert!(res.energy.iter().all(|r| *r < 1e-14));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn modulated_bounded_by_energy(seed in 0u64..10_000, mx in -1.0..1.0f64, my in -1.0..1.0f64) {
            let grid = TorusGrid::unit(8).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_solenoidal(&grid, seed).shift_constant([mx, my]);
            let xs: Vec<_> = (0..20).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
            let vs: Vec<_> = (0..20).map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
            let ens = ensemble(&xs, &vs, rng.random_range(0.0..0.2));
            let h = modulated_energy(&u, &ens, None).unwrap();
            let e = kinetic_energy(&u, &ens, None);
            prop_assert!(h >= 0.0);
            prop_assert!(h <= e * (1.0 + 1e-12));
        }

        #[test]
        fn modulated_equals_energy_without_bulk(seed in 0u64..10_000) {
            let grid = TorusGrid::unit(8).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_solenoidal(&grid, seed);
            let u = u.shift_constant({ let m = u.mean(); [-m[0], -m[1]] });
            let v: [f64; 2] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let ens = ensemble(&[[0.1, 0.1], [0.5, 0.5]], &[v, [-v[0], -v[1]]], 0.4);
            let h = modulated_energy(&u, &ens, None).unwrap();
            let e = kinetic_energy(&u, &ens, None);
            prop_assert!((h - e).abs() <= 1e-12 * e.max(1e-300));
        }
    }
}
