//! Limit profiles `n_∞` and `ρ̄_∞` built from time integrals of the
//! co-moving momentum deficit.

use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::nufft::SpectralDeposit;
use crate::particles::{MomentFields, ParticleEnsemble};
use crate::spectral::{divergence, phase_shift_vector, transform_inverse, ScalarField, Spectrum, TorusGrid, VectorField};

#[derive(Clone, Debug)]
pub struct ProfileAccumulator {
    flux_integral: VectorField,
    base: ScalarField,
    u_inf: [f64; 2],
    last: Option<(f64, VectorField)>,
    t_truncation: Option<f64>,
}

impl ProfileAccumulator {
    /// `base` is `n_{f₀}` (or `ρ₀`); `u_inf` must already be frozen.
    pub fn new(base: ScalarField, u_inf: [f64; 2]) -> Self {
        Self {
            flux_integral: VectorField::zeros(base.grid()),
            base,
            u_inf,
            last: None,
            t_truncation: None,
        }
    }

    pub fn u_inf(&self) -> [f64; 2] {
        self.u_inf
    }

    pub fn base(&self) -> &ScalarField {
        &self.base
    }

    pub fn flux_integral(&self) -> &VectorField {
        &self.flux_integral
    }

    /// Last accumulated time, which becomes the truncation time.
    pub fn t_truncation(&self) -> Option<f64> {
        self.t_truncation
    }

    /// Adds the trapezoid panel ending at `t` for an already co-moving
    /// integrand `g(t, x + t u_∞)`.
    pub fn accumulate_shifted(&mut self, t: f64, integrand: VectorField) {
        if let Some((t_prev, prev)) = self.last.take() {
            let half = 0.5 * (t - t_prev);
            self.flux_integral = self.flux_integral.add(&prev.add(&integrand).scale(half));
        }
        self.last = Some((t, integrand));
        self.t_truncation = Some(t);
    }

    /// Particle profile: integrand `j_f − n_f u_∞`.
    pub fn accumulate_moments(&mut self, t: f64, moments: &MomentFields) {
        let deficit = moments.momentum.sub(&VectorField {
            x: moments.density.scale(self.u_inf[0]),
            y: moments.density.scale(self.u_inf[1]),
        });
        self.accumulate_shifted(t, self.shift(t, &deficit));
    }

    /// Density profile: integrand `ρ(u − ū_∞)`.
    pub fn accumulate_density(&mut self, t: f64, rho: &ScalarField, u: &VectorField) {
        let deficit = u.shift_constant([-self.u_inf[0], -self.u_inf[1]]).mul_scalar(rho);
        self.accumulate_shifted(t, self.shift(t, &deficit));
    }

    fn shift(&self, t: f64, field: &VectorField) -> VectorField {
        if self.u_inf == [0.0, 0.0] {
            field.clone()
        } else {
            phase_shift_vector(field, [t * self.u_inf[0], t * self.u_inf[1]])
        }
    }

    /// `base − div(∫ shifted deficit dτ)`.
    pub fn finalize(&self) -> Result<ScalarField> {
        if self.last.is_none() {
            return Err(Error::EmptyAccumulator);
        }
        Ok(self.base.sub(&divergence(&self.flux_integral)))
    }
}

/// Particle profile `n_∞` built from band-limited deposits taken directly in
/// co-moving coordinates `X − t u_∞`.
///
/// Grid moments from cloud-in-cell are not linked by the spectral continuity
/// equation, which leaves a floor in `‖ñ_f(t) − n_∞‖_{Ḣ⁻¹}`. Here both `ñ_f`
/// and the flux come from the same truncated Fourier series of the particle
/// measure, so `ñ_f(T) = n_∞` up to time quadrature when `T = t_truncation`.
#[derive(Debug)]
pub struct ParticleProfile {
    deposit: SpectralDeposit,
    u_inf: [f64; 2],
    base: Spectrum,
    flux: [Vec<f64>; 2],
    last: Option<(f64, [Vec<f64>; 2])>,
    t_truncation: Option<f64>,
}

impl ParticleProfile {
    /// `initial` is the ensemble at `t = 0`; `u_inf` must already be frozen.
    pub fn new(grid: &Arc<TorusGrid>, initial: &ParticleEnsemble, u_inf: [f64; 2]) -> Self {
        Self::with_deposit(SpectralDeposit::new(grid), initial, u_inf)
    }

    pub fn with_deposit(deposit: SpectralDeposit, initial: &ParticleEnsemble, u_inf: [f64; 2]) -> Self {
        let grid = deposit.grid().clone();
        let flux = deposit.zeros::<2>();
        let mut profile = Self {
            base: Spectrum::zeros(&grid),
            deposit,
            u_inf,
            flux,
            last: None,
            t_truncation: None,
        };
        profile.base = profile.shifted_spectrum(0.0, initial);
        profile
    }

    pub fn u_inf(&self) -> [f64; 2] {
        self.u_inf
    }

    pub fn t_truncation(&self) -> Option<f64> {
        self.t_truncation
    }

    fn comoving(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        [x[0] - t * self.u_inf[0], x[1] - t * self.u_inf[1]]
    }

    fn shifted_spectrum(&self, t: f64, ensemble: &ParticleEnsemble) -> Spectrum {
        let mut buf = self.deposit.zeros::<1>();
        let points = ensemble
            .positions
            .iter()
            .zip(&ensemble.weights)
            .map(|(x, &w)| (self.comoving(t, *x), [w]));
        self.deposit.spread(points, &mut buf);
        let mut spec = self.deposit.spectrum(&buf[0]);
        // the mean is known exactly
        spec.coeffs_mut()[0] = Complex64::new(ensemble.total_mass() / self.deposit.grid().area(), 0.0);
        spec
    }

    /// Band-limited `ñ_f(t, x) = n_f(t, x + t u_∞)`.
    pub fn shifted_density(&self, t: f64, ensemble: &ParticleEnsemble) -> ScalarField {
        transform_inverse(&self.shifted_spectrum(t, ensemble))
    }

    /// Adds the trapezoid panel ending at `t` for the deficit `Σ w (V − u_∞)`.
    pub fn accumulate(&mut self, t: f64, ensemble: &ParticleEnsemble) {
        let mut cur = self.deposit.zeros::<2>();
        let u = self.u_inf;
        let points = ensemble
            .positions
            .iter()
            .zip(&ensemble.velocities)
            .zip(&ensemble.weights)
            .map(|((x, v), &w)| (self.comoving(t, *x), [w * (v[0] - u[0]), w * (v[1] - u[1])]));
        self.deposit.spread(points, &mut cur);
        if let Some((t_prev, prev)) = self.last.take() {
            let half = 0.5 * (t - t_prev);
            for c in 0..2 {
                for ((f, p), q) in self.flux[c].iter_mut().zip(&prev[c]).zip(&cur[c]) {
                    *f += half * (p + q);
                }
            }
        }
        self.last = Some((t, cur));
        self.t_truncation = Some(t);
    }

    /// `n_{f₀} − div ∫ j̃ dτ` on the grid.
    pub fn finalize(&self) -> Result<ScalarField> {
        if self.last.is_none() {
            return Err(Error::EmptyAccumulator);
        }
        let jx = self.deposit.spectrum(&self.flux[0]);
        let jy = self.deposit.spectrum(&self.flux[1]);
        let grid = self.base.grid().clone();
        let n = grid.n();
        let spec = self.base.map_modes(|a, b, c| {
            let div = Complex64::new(0.0, grid.derivative_symbol(a)) * jx.coeffs()[a * n + b]
                + Complex64::new(0.0, grid.derivative_symbol(b)) * jy.coeffs()[a * n + b];
            c - div
        });
        Ok(transform_inverse(&spec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::sobolev_norm_fluctuation;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn empty_accumulator_errors() {
        let grid = TorusGrid::unit(8).unwrap();
        let acc = ProfileAccumulator::new(ScalarField::constant(&grid, 1.0), [0.0, 0.0]);
        assert!(matches!(acc.finalize(), Err(Error::EmptyAccumulator)));
    }

    #[test]
    fn zero_flux_returns_base_exactly() {
        let grid = TorusGrid::unit(16).unwrap();
        let base = ScalarField::from_fn(&grid, |x, _| 1.0 + 0.5 * (2.0 * PI * x).cos());
        let mut acc = ProfileAccumulator::new(base.clone(), [0.5, 0.25]);
        for k in 0..10 {
            acc.accumulate_shifted(k as f64 * 0.1, VectorField::zeros(&grid));
        }
        let out = acc.finalize().unwrap();
        assert_eq!(out.values(), base.values());
        assert_relative_eq!(acc.t_truncation().unwrap(), 0.9);
    }

    #[test]
    fn unshifted_integral_is_plain_trapezoid() {
        let grid = TorusGrid::unit(16).unwrap();
        let base = ScalarField::constant(&grid, 1.0);
        let mut acc = ProfileAccumulator::new(base.clone(), [0.0, 0.0]);
        let shape = VectorField::from_fn(&grid, |x, _| [(2.0 * PI * x).sin(), 0.0]);
        // integrand linear in time: exact under the trapezoid rule
        for k in 0..=4 {
            let t = k as f64 * 0.25;
            acc.accumulate_shifted(t, shape.scale(t));
        }
        let expected_flux = shape.scale(0.5);
        assert!(acc.flux_integral().sub(&expected_flux).sup_norm() < 1e-15);
        let out = acc.finalize().unwrap();
        assert_relative_eq!(out.mean(), base.mean(), epsilon = 1e-13);
    }

    fn streaming(n: usize, count: usize) -> (Arc<TorusGrid>, ParticleEnsemble) {
        use rand::{Rng, SeedableRng};
        let grid = TorusGrid::unit(n).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let positions = (0..count).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let velocities = (0..count).map(|_| [rng.random::<f64>() - 0.3, rng.random::<f64>() - 0.5]).collect();
        let weights = (0..count).map(|_| rng.random::<f64>() / count as f64).collect();
        (grid, ParticleEnsemble::new(positions, velocities, weights, 1.0).unwrap())
    }

    #[test]
    fn particle_profile_matches_streamed_density() {
        // free streaming: ñ_f(T) = n_{f₀} − div ∫₀ᵀ j̃ up to the trapezoid error
        let (grid, e0) = streaming(16, 300);
        let u_inf = [0.2, -0.1];
        let at = |t: f64| {
            let mut e = e0.clone();
            for (x, v) in e.positions.iter_mut().zip(&e0.velocities) {
                *x = [x[0] + t * v[0], x[1] + t * v[1]];
            }
            e
        };
        let gap = |steps: usize| {
            let dt = 0.2 / steps as f64;
            // a wide kernel so that gridding error stays below the quadrature error
            let mut prof = ParticleProfile::with_deposit(SpectralDeposit::with_half_width(&grid, 9), &e0, u_inf);
            for k in 0..=steps {
                prof.accumulate(k as f64 * dt, &at(k as f64 * dt));
            }
            let n_inf = prof.finalize().unwrap();
            assert_relative_eq!(n_inf.mean(), e0.total_mass(), epsilon = 1e-12);
            let initial = sobolev_norm_fluctuation(&prof.shifted_density(0.0, &e0).sub(&n_inf), -1.0);
            (sobolev_norm_fluctuation(&prof.shifted_density(0.2, &at(0.2)).sub(&n_inf), -1.0), initial)
        };
        let (coarse, initial) = gap(100);
        let (fine, _) = gap(200);
        assert!(coarse < 1e-4 * initial, "{coarse:e} vs {initial:e}");
        assert!(coarse / fine > 3.5, "{coarse:e} / {fine:e}");
    }

    #[test]
    fn particle_profile_at_rest_is_initial_density() {
        let (grid, mut e) = streaming(16, 50);
        let c = [0.25, 0.5];
        e.velocities.iter_mut().for_each(|v| *v = c);
        let mut prof = ParticleProfile::new(&grid, &e, c);
        for k in 0..5 {
            let t = k as f64 * 0.1;
            prof.accumulate(t, &e);
            e.positions.iter_mut().for_each(|x| *x = [x[0] + 0.1 * c[0], x[1] + 0.1 * c[1]]);
        }
        let base = prof.shifted_density(0.0, &streaming(16, 50).1);
        assert_eq!(prof.finalize().unwrap().values(), base.values());
    }
}
