//! Run orchestration: initial data, the coupled time step, diagnostics at
//! the recording cadence, limit profiles, decay fits and the run summary.
//!
//! One coupled step from `tⁿ` to `tⁿ⁺¹`:
//! 1. deposit moments and drag at `(Xⁿ, Vⁿ, uⁿ)`;
//! 2. push a copy of the ensemble with `uⁿ` (predictor);
//! 3. integrating-factor Heun step of the fluid, the second stage taking its
//!    drag from the predictor ensemble and the predicted velocity;
//! 4. push the ensemble with `½(uⁿ + uⁿ⁺¹)`;
//! 5. shift the mean of `u` so total momentum matches its initial value.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{Mode, ProfileDeposit, SimConfig};
use crate::density::{
    material_derivative_inhomogeneous, recover_pressure_inhomogeneous, step_inhomogeneous_with, DensityField,
    PressureSettings,
};
use crate::diagnostics::{
    self, entropy, entropy_bound, fit_decay, grad_u_squared, kinetic_energy, lambda0_scale, lyapunov_record,
    modulated_energy, u_infinity, u_infinity_identity_residual, u_infinity_inhomogeneous, DecayFit, DecayModel,
    DensityColumns, DiagnosticsRow, ParticleProfile, ProfileAccumulator, RunningIntegral,
};
use crate::error::{Error, Result};
use crate::fluid::{
    cfl_dt, check_divergence_free, integrating_factor_step, material_derivative, ns_rhs, recover_pressure,
    taylor_green, FluidState, DIVERGENCE_TOL,
};
use crate::initial::InitialDistribution;
use crate::oracle::{compare_moments, MomentComparison, OracleRun, PhaseSpaceGrid};
use crate::particles::{
    deposit_brinkman_partitioned, deposit_moments_partitioned, push, push_into, sample_initial, MomentFields, ParticleEnsemble, VelocityHistory,
};
use crate::spectral::{phase_shift, sobolev_norm_fluctuation, ScalarField, TorusGrid, VectorField};

/// Floor of the monotonicity tolerance, relative to `H₀`.
pub const MONOTONICITY_FLOOR: f64 = 1e-12;

/// Initial fluid velocity described by the configuration.
pub fn initial_velocity(cfg: &SimConfig, grid: &Arc<TorusGrid>) -> VectorField {
    let k = 2.0 * std::f64::consts::PI / grid.length();
    let shear = cfg.fluid.shear;
    taylor_green(grid, cfg.fluid.taylor_green)
        .add(&VectorField::from_fn(grid, |_, y| [shear * (k * y).sin(), 0.0]))
        .shift_constant(cfg.fluid.mean)
}

/// Fields handed to the snapshot sink.
pub struct Snapshot<'a> {
    pub t: f64,
    pub step: usize,
    pub fields: Vec<(&'static str, &'a ScalarField)>,
}

/// Per-record quantities that are not CSV columns.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ExtraRow {
    /// `‖u − u_∞‖_{L²}`.
    pub u_deviation_l2: f64,
    /// `Σ w |V − u_∞|`.
    pub particle_spread: f64,
    /// `½ Σ w |V − ū|²` with `ū = ⟨j_f⟩/⟨n_f⟩`.
    pub thermal_second_moment: f64,
    pub entropy_bound: f64,
    /// Quadrature error estimate of `∫D` at this row.
    pub quadrature_error: f64,
    /// `‖j_f − n_f u_∞‖_{L²}`, the flux driving the limit profile.
    pub flux_deficit_l2: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitOutcome {
    pub fit: Option<DecayFit>,
    pub error: Option<String>,
}

impl FitOutcome {
    fn from(result: Result<DecayFit>) -> Self {
        match result {
            Ok(fit) => Self { fit: Some(fit), error: None },
            Err(e) => Self {
                fit: None,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tolerances {
    pub divergence_relative: f64,
    pub density_bounds: Option<f64>,
    pub pressure_tol: Option<f64>,
    pub monotonicity_floor_relative: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DensitySummary {
    pub lower: f64,
    pub upper: f64,
    pub mean: f64,
    pub max_pressure_iterations: usize,
    pub profile_source: String,
}

/// Everything a run reports besides the time series.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub preset: Option<String>,
    pub mode: Mode,
    pub status: String,
    pub error: Option<String>,
    pub t_reached: f64,
    pub steps: usize,
    pub dt: f64,
    pub record_every: usize,
    pub particles: usize,
    pub u_inf: [f64; 2],
    pub t_truncation: Option<f64>,
    /// `final` when profile distances were recomputed against the finalized
    /// profile, `running` when each row used the profile accumulated so far.
    pub profile_source: String,
    pub profile_deposit: ProfileDeposit,
    pub energy0: f64,
    pub modulated0: f64,
    pub mass0: f64,
    pub momentum0: [f64; 2],
    pub max_energy_residual: f64,
    pub max_modulated_residual: f64,
    pub quadrature_error_estimate: f64,
    pub max_identity_residual: f64,
    pub mass_drift: f64,
    pub momentum_drift: f64,
    /// Largest mean-mode velocity shift applied to close the momentum balance.
    pub max_momentum_correction: f64,
    pub monotonicity_violations: usize,
    pub entropy_bound_violations: usize,
    pub lip_t_start: Option<f64>,
    pub lip_budget: f64,
    pub f_log_f: f64,
    pub cubic_moment_sup: f64,
    pub lambda0_scale: f64,
    pub fit_window: [f64; 2],
    pub fits: BTreeMap<String, FitOutcome>,
    pub tolerances: Tolerances,
    pub density: Option<DensitySummary>,
    /// Set when `L ≠ 1`: the homogeneous coupling weight `‖n_f‖_{L¹}/(⟨n_f⟩ + 1)`
    /// mixes an integral with a mean, so `H` then differs from `E` minus the
    /// conserved bulk energy.
    pub notes: Vec<String>,
}

pub struct RunOutput {
    pub rows: Vec<DiagnosticsRow>,
    pub extras: Vec<ExtraRow>,
    pub summary: Summary,
    pub profile: Option<ScalarField>,
    pub rho_profile: Option<ScalarField>,
    /// Recorded velocities, when `keep_velocity_history` is set.
    pub history: Option<VelocityHistory>,
}

/// Particle limit profile on either deposit.
enum NfProfile {
    Cic(ProfileAccumulator),
    Spectral(ParticleProfile),
}

impl NfProfile {
    fn accumulate(&mut self, t: f64, m: &MomentFields, ensemble: &ParticleEnsemble) {
        match self {
            Self::Cic(p) => p.accumulate_moments(t, m),
            Self::Spectral(p) => p.accumulate(t, ensemble),
        }
    }

    fn shifted_density(&self, t: f64, cic: &ScalarField, ensemble: &ParticleEnsemble) -> ScalarField {
        match self {
            Self::Cic(p) if p.u_inf() == [0.0, 0.0] => cic.clone(),
            Self::Cic(p) => phase_shift(cic, [t * p.u_inf()[0], t * p.u_inf()[1]]),
            Self::Spectral(p) => p.shifted_density(t, ensemble),
        }
    }

    fn finalize(&self) -> Result<ScalarField> {
        match self {
            Self::Cic(p) => p.finalize(),
            Self::Spectral(p) => p.finalize(),
        }
    }

    fn t_truncation(&self) -> Option<f64> {
        match self {
            Self::Cic(p) => p.t_truncation(),
            Self::Spectral(p) => p.t_truncation(),
        }
    }
}

/// A configured run that can be stepped, inspected and finalized.
pub struct Simulation {
    pub config: SimConfig,
    pub grid: Arc<TorusGrid>,
    pub dt: f64,
    pub steps: usize,
    pub step_index: usize,
    pub fluid: FluidState,
    pub ensemble: ParticleEnsemble,
    pub density: Option<DensityField>,
    pub distribution: InitialDistribution,
    pub u_inf: [f64; 2],
    pub history: Option<VelocityHistory>,
    pub rows: Vec<DiagnosticsRow>,
    pub extras: Vec<ExtraRow>,
    target_momentum: [f64; 2],
    energy0: f64,
    modulated0: f64,
    mass0: f64,
    d_integral: RunningIntegral,
    lip_integral: f64,
    lip_start: Option<f64>,
    last_lip: Option<(f64, f64)>,
    profile: Option<NfProfile>,
    rho_profile: Option<ProfileAccumulator>,
    nf_snapshots: Vec<ScalarField>,
    rho_snapshots: Vec<ScalarField>,
    pressure_warm: Option<ScalarField>,
    max_pressure_iterations: usize,
    max_correction: f64,
    moments: Option<MomentFields>,
    f_log_f: f64,
    predictor: ParticleEnsemble,
}

impl Simulation {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let grid = TorusGrid::new(config.domain.n, config.domain.length)?;
        let u0 = initial_velocity(&config, &grid);
        check_divergence_free(&u0)?;
        let distribution = config.initial_distribution();
        let ensemble = if config.particles.count > 0 {
            sample_initial(&distribution, config.particles.count, config.particles.seed)?
        } else {
            ParticleEnsemble::empty(grid.length())
        };
        let density = match config.mode {
            Mode::Homogeneous => None,
            Mode::Inhomogeneous => {
                let rho = config.density.rho0.build(&grid)?;
                if rho.min() < config.density.rho_min_guard {
                    return Err(Error::Config(format!(
                        "initial density minimum {} is below rho_min_guard {}",
                        rho.min(),
                        config.density.rho_min_guard
                    )));
                }
                Some(DensityField::new(rho)?)
            }
        };

        let distribution_f_log_f = if ensemble.is_empty() { 0.0 } else { distribution.f_log_f_l1() };
        let area = grid.area();
        let moments0 = deposit_moments_partitioned(&ensemble, &grid, &u0, config.particles.partitions);
        let dt_nominal = match (config.time.dt, config.time.cfl) {
            (Some(dt), _) => dt,
            (None, Some(cfl)) => cfl_dt(&u0, moments0.density.sup_norm(), cfl, config.time.dt_max),
            (None, None) => unreachable!("validated"),
        };
        let t_end = config.time.t_end;
        let steps = ((t_end / dt_nominal) - 1e-9).ceil().max(1.0) as usize;
        let dt = t_end / steps as f64;

        let p_particles = ensemble.momentum();
        let mass0 = ensemble.total_mass();
        let mean_n = mass0 / area;
        let mean_j = [p_particles[0] / area, p_particles[1] / area];
        let (u_inf, fluid_momentum) = match &density {
            None => (u_infinity(u0.mean(), mean_n, mean_j)?, u0.integral()),
            Some(d) => {
                let rho_u = [u0.x.inner(&d.rho), u0.y.inner(&d.rho)];
                let u = u_infinity_inhomogeneous([rho_u[0] / area, rho_u[1] / area], d.rho.mean(), mean_n, mean_j)?;
                (u, rho_u)
            }
        };
        let target_momentum = [fluid_momentum[0] + p_particles[0], fluid_momentum[1] + p_particles[1]];
        let rho = density.as_ref().map(|d| &d.rho);
        let energy0 = kinetic_energy(&u0, &ensemble, rho);
        let modulated0 = modulated_energy(&u0, &ensemble, rho)?;

        let profile = (!ensemble.is_empty()).then(|| match config.diagnostics.profile_deposit {
            ProfileDeposit::Cic => NfProfile::Cic(ProfileAccumulator::new(moments0.density.clone(), u_inf)),
            ProfileDeposit::Spectral => NfProfile::Spectral(ParticleProfile::new(&grid, &ensemble, u_inf)),
        });
        let rho_profile = density.as_ref().map(|d| ProfileAccumulator::new(d.rho.clone(), u_inf));
        let history = config.diagnostics.keep_velocity_history.then(VelocityHistory::new);

        Ok(Self {
            grid,
            dt,
            steps,
            step_index: 0,
            fluid: FluidState::new(u0, 0.0)?,
            ensemble,
            density,
            distribution,
            u_inf,
            history,
            rows: Vec::new(),
            extras: Vec::new(),
            target_momentum,
            energy0,
            modulated0,
            mass0,
            d_integral: RunningIntegral::new(),
            lip_integral: 0.0,
            lip_start: None,
            last_lip: None,
            profile,
            rho_profile,
            nf_snapshots: Vec::new(),
            rho_snapshots: Vec::new(),
            pressure_warm: None,
            max_pressure_iterations: 0,
            max_correction: 0.0,
            moments: Some(moments0),
            f_log_f: distribution_f_log_f,
            predictor: ParticleEnsemble::empty(config.domain.length),
            config,
        })
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.dt
    }

    fn deposit(&self, ensemble: &ParticleEnsemble, u: &VectorField) -> MomentFields {
        deposit_moments_partitioned(ensemble, &self.grid, u, self.config.particles.partitions)
    }

    fn pressure_settings(&self) -> PressureSettings {
        PressureSettings {
            tol: self.config.density.pressure_tol,
            max_iters: self.config.density.max_iters,
        }
    }

    /// Runs to `t_end` without snapshots.
    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| Ok(()))
    }

    /// Runs to `t_end`, passing field snapshots to `sink` every
    /// `output.fields_every` steps.
    pub fn run_with(&mut self, mut sink: impl FnMut(&Snapshot) -> Result<()>) -> Result<()> {
        while self.step_index <= self.steps {
            let k = self.step_index;
            let t = self.time();
            let moments = match self.moments.take() {
                Some(m) => m,
                None => self.deposit(&self.ensemble, &self.fluid.u),
            };
            let d = grad_u_squared(&self.fluid.u) + moments.drag_dissipation;
            self.d_integral.push(t, d);
            if let Some(p) = self.profile.as_mut() {
                p.accumulate(t, &moments, &self.ensemble);
            }
            if let (Some(p), Some(dens)) = (self.rho_profile.as_mut(), self.density.as_ref()) {
                p.accumulate_density(t, &dens.rho, &self.fluid.u);
            }
            if k.is_multiple_of(self.config.time.record_every) || k == self.steps {
                self.record(t, &moments, d)?;
            }
            let every = self.config.output.fields_every;
            if every > 0 && (k.is_multiple_of(every) || k == self.steps) {
                let mut fields = vec![
                    ("ux", &self.fluid.u.x),
                    ("uy", &self.fluid.u.y),
                    ("n_f", &moments.density),
                    ("jx_f", &moments.momentum.x),
                    ("jy_f", &moments.momentum.y),
                    ("e_f", &moments.energy),
                ];
                if let Some(dens) = &self.density {
                    fields.push(("rho", &dens.rho));
                }
                sink(&Snapshot { t, step: k, fields })?;
            }
            if k == self.steps {
                break;
            }
            self.step(&moments)?;
        }
        Ok(())
    }

    /// Advances one step given the moments at the current time level.
    pub fn step(&mut self, m0: &MomentFields) -> Result<()> {
        let dt = self.dt;
        let t = self.time();
        let u_n = self.fluid.u.clone();
        let has_particles = !self.ensemble.is_empty();
        let predictor = if has_particles {
            push_into(&self.ensemble, &mut self.predictor, &u_n, dt)?;
            Some(&self.predictor)
        } else {
            None
        };
        let partitions = self.config.particles.partitions;
        let grid = self.grid.clone();
        let drag = |stage: usize, u: &VectorField| -> VectorField {
            match (stage, &predictor) {
                (0, _) | (_, None) => m0.brinkman.clone(),
                (_, Some(p)) => deposit_brinkman_partitioned(p, &grid, u, partitions),
            }
        };

        let next = match &self.density {
            None => integrating_factor_step(&self.fluid, dt, 1.0, |stage, u| ns_rhs(u, &drag(stage, u)))?,
            Some(dens) => {
                let step = step_inhomogeneous_with(
                    dens,
                    &self.fluid,
                    dt,
                    dens.lower,
                    self.pressure_settings(),
                    self.pressure_warm.as_ref(),
                    |stage, u| Ok(drag(stage, u)),
                )?;
                self.max_pressure_iterations = self.max_pressure_iterations.max(step.iterations[0].max(step.iterations[1]));
                self.pressure_warm = Some(step.pressure);
                let updated = DensityField {
                    rho: step.rho,
                    ..dens.clone()
                };
                updated.check_bounds().map_err(|e| Error::Numerical {
                    t: t + dt,
                    what: e.to_string(),
                })?;
                self.density = Some(updated);
                step.fluid
            }
        };

        if has_particles {
            let mid = u_n.add(&next.u).scale(0.5);
            push(&mut self.ensemble, &mid, dt)?;
            if !self.ensemble.is_finite() {
                return Err(Error::Numerical {
                    t: t + dt,
                    what: "non-finite particle state".into(),
                });
            }
        }

        // close the momentum balance with a uniform velocity shift
        let p = self.ensemble.momentum();
        let (fluid_p, fluid_mass) = match &self.density {
            None => (next.u.integral(), self.grid.area()),
            Some(d) => ([next.u.x.inner(&d.rho), next.u.y.inner(&d.rho)], d.rho.integral()),
        };
        let c = [
            (self.target_momentum[0] - fluid_p[0] - p[0]) / fluid_mass,
            (self.target_momentum[1] - fluid_p[1] - p[1]) / fluid_mass,
        ];
        self.max_correction = self.max_correction.max(c[0].hypot(c[1]));
        self.fluid = FluidState {
            u: next.u.shift_constant(c),
            t: t + dt,
        };
        self.step_index += 1;
        self.moments = None;
        Ok(())
    }

    fn record(&mut self, t: f64, m: &MomentFields, d: f64) -> Result<()> {
        let u = &self.fluid.u;
        if !u.is_finite() {
            return Err(Error::Numerical {
                t,
                what: "non-finite velocity".into(),
            });
        }
        let area = self.grid.area();
        let rho = self.density.as_ref().map(|d| &d.rho);
        let energy = kinetic_energy(u, &self.ensemble, rho);
        let modulated = modulated_energy(u, &self.ensemble, rho)?;
        let p_particles = self.ensemble.momentum();
        let (fluid_p, bulk_u) = match rho {
            None => (u.integral(), u.mean()),
            Some(r) => {
                let rp = [u.x.inner(r), u.y.inner(r)];
                let mass = r.integral();
                (rp, [rp[0] / mass, rp[1] / mass])
            }
        };
        let momentum = [fluid_p[0] + p_particles[0], fluid_p[1] + p_particles[1]];

        let (pressure, udot) = match rho {
            None => {
                let p = recover_pressure(u, &m.brinkman)?;
                let udot = material_derivative(u, &p, &m.brinkman);
                (p, udot)
            }
            Some(r) => {
                let p = recover_pressure_inhomogeneous(r, u, &m.brinkman, self.pressure_settings())?;
                let udot = material_derivative_inhomogeneous(r, u, &p, &m.brinkman);
                (p, udot)
            }
        };
        let lyap = lyapunov_record(u, &pressure, &udot, m);

        if self.lip_start.is_none() && d <= self.config.diagnostics.eta {
            self.lip_start = Some(t);
        }
        if self.lip_start.is_some() {
            if let Some((tp, gp)) = self.last_lip {
                self.lip_integral += 0.5 * (t - tp) * (gp + lyap.grad_u_linf);
            }
            self.last_lip = Some((t, lyap.grad_u_linf));
        }

        let energy_integral = self.d_integral.value();
        let shift_back = |f: &ScalarField| {
            if self.u_inf == [0.0, 0.0] {
                f.clone()
            } else {
                phase_shift(f, [t * self.u_inf[0], t * self.u_inf[1]])
            }
        };
        let has_particles = !self.ensemble.is_empty();
        let spread = self.ensemble.first_moment_about(self.u_inf);
        let (nf_profile_hm1, w1_bound) = match (&self.profile, has_particles) {
            (Some(acc), true) => {
                let shifted = acc.shifted_density(t, &m.density, &self.ensemble);
                let running = acc.finalize()?;
                let dist = sobolev_norm_fluctuation(&shifted.sub(&running), -1.0);
                if self.config.diagnostics.track_profile {
                    self.nf_snapshots.push(shifted);
                }
                (dist, spread + dist)
            }
            _ => (0.0, 0.0),
        };
        let density_columns = match (&self.density, &self.rho_profile) {
            (Some(dens), Some(acc)) => {
                let shifted = shift_back(&dens.rho);
                let running = acc.finalize()?;
                let dist = sobolev_norm_fluctuation(&shifted.sub(&running), -1.0);
                if self.config.diagnostics.track_profile {
                    self.rho_snapshots.push(shifted);
                }
                Some(DensityColumns {
                    rho_min: dens.rho.min(),
                    rho_max: dens.rho.max(),
                    rho_mean: dens.rho.mean(),
                    rho_profile_hm1: dist,
                })
            }
            _ => None,
        };

        let mass = self.ensemble.total_mass();
        let bulk_v = if mass > 0.0 {
            [p_particles[0] / mass, p_particles[1] / mass]
        } else {
            [0.0, 0.0]
        };
        let thermal = 0.5 * self.ensemble.second_moment_about(bulk_v);
        let bound = entropy_bound(self.f_log_f, t, self.mass0, area, 2.0 * thermal);

        let row = DiagnosticsRow {
            t,
            energy,
            dissipation: d,
            modulated,
            mass,
            momentum,
            mean_u: bulk_u,
            u_inf: self.u_inf,
            energy_residual: (energy + energy_integral - self.energy0).abs(),
            modulated_residual: (modulated + energy_integral - self.modulated0).abs(),
            grad_u_l2: lyap.grad_u_sq.sqrt(),
            grad2_u_l2: lyap.grad2_u_l2,
            grad_p_l2: lyap.grad_p_l2,
            udot_l2: lyap.udot_l2,
            nf_linf: lyap.nf_linf,
            jf_linf: lyap.jf_linf,
            ef_linf: lyap.ef_linf,
            grad_u_linf: lyap.grad_u_linf,
            lip_budget: self.lip_integral,
            entropy: entropy(&m.density),
            w1_bound,
            nf_profile_hm1,
            pressure_cross_term: lyap.pressure_cross_term,
            density: density_columns,
        };
        self.extras.push(ExtraRow {
            u_deviation_l2: u.shift_constant([-self.u_inf[0], -self.u_inf[1]]).l2_norm(),
            particle_spread: spread,
            thermal_second_moment: thermal,
            entropy_bound: bound,
            quadrature_error: self.d_integral.correction(),
            flux_deficit_l2: m
                .momentum
                .sub(&VectorField::new(m.density.scale(self.u_inf[0]), m.density.scale(self.u_inf[1]))?)
                .l2_norm(),
        });
        self.rows.push(row);
        if let Some(h) = self.history.as_mut() {
            h.push(t, u.clone());
        }
        Ok(())
    }

    /// Finalizes profiles and fits and assembles the summary. `error` is the
    /// failure that stopped the run, if any.
    pub fn finish(mut self, error: Option<&Error>) -> RunOutput {
        let profile = self.profile.as_ref().and_then(|p| p.finalize().ok());
        let rho_profile = self.rho_profile.as_ref().and_then(|p| p.finalize().ok());
        let track = self.config.diagnostics.track_profile;
        let mut profile_source = "running".to_string();
        if track && (profile.is_some() || rho_profile.is_some()) {
            profile_source = "final".into();
            let mut nf_iter = self.nf_snapshots.iter();
            let mut rho_iter = self.rho_snapshots.iter();
            for (row, extra) in self.rows.iter_mut().zip(&self.extras) {
                if let (Some(p), Some(s)) = (&profile, nf_iter.next()) {
                    row.nf_profile_hm1 = sobolev_norm_fluctuation(&s.sub(p), -1.0);
                    row.w1_bound = extra.particle_spread + row.nf_profile_hm1;
                }
                if let (Some(p), Some(s), Some(cols)) = (&rho_profile, rho_iter.next(), row.density.as_mut()) {
                    cols.rho_profile_hm1 = sobolev_norm_fluctuation(&s.sub(p), -1.0);
                }
            }
        }

        let area = self.grid.area();
        let balance = diagnostics::balance_residuals(&self.rows, area);
        let mut monotonicity_violations = 0;
        for (k, w) in self.rows.windows(2).enumerate() {
            let local = (self.extras[k + 1].quadrature_error - self.extras[k].quadrature_error).abs();
            let tol = 2.0 * local + MONOTONICITY_FLOOR * self.modulated0.abs();
            if w[1].modulated > w[0].modulated + tol {
                monotonicity_violations += 1;
            }
        }
        let entropy_bound_violations = self
            .rows
            .iter()
            .zip(&self.extras)
            .filter(|(r, e)| r.entropy > e.entropy_bound)
            .count();

        let (a, b) = self.config.fit_window();
        let model = self.config.diagnostics.fit_model;
        let mut fits = BTreeMap::new();
        let series = |f: &dyn Fn(usize) -> f64| -> Vec<(f64, f64)> {
            self.rows.iter().enumerate().map(|(i, r)| (r.t, f(i))).collect()
        };
        let fit = |s: Vec<(f64, f64)>, m: DecayModel| FitOutcome::from(fit_decay(&s, m, (a, b)));
        fits.insert("H".to_string(), fit(series(&|i| self.rows[i].modulated), model));
        fits.insert("u_deviation_L2".into(), fit(series(&|i| self.extras[i].u_deviation_l2), model));
        fits.insert("udot_L2".into(), fit(series(&|i| self.rows[i].udot_l2), model));
        if !self.ensemble.is_empty() {
            fits.insert("w1_bound".into(), fit(series(&|i| self.rows[i].w1_bound), model));
            fits.insert("particle_spread".into(), fit(series(&|i| self.extras[i].particle_spread), model));
        }

        let cubic = self.distribution.cubic_moment_sup(self.u_inf);
        let f_log_f = self.f_log_f;
        let mut notes = Vec::new();
        if (self.grid.length() - 1.0).abs() > 1e-15 && !self.ensemble.is_empty() && self.density.is_none() {
            notes.push(
                "L != 1: the coupling weight of H mixes ||n_f||_L1 with <n_f>; H follows the formula literally".into(),
            );
        }
        let t_truncation = match (&self.profile, &self.rho_profile) {
            (Some(p), _) => p.t_truncation(),
            (None, Some(p)) => p.t_truncation(),
            (None, None) => None,
        };
        let summary = Summary {
            preset: self.config.preset.clone(),
            mode: self.config.mode,
            status: if error.is_some() { "error".into() } else { "ok".into() },
            error: error.map(|e| e.to_string()),
            t_reached: self.rows.last().map_or(0.0, |r| r.t),
            steps: self.step_index,
            dt: self.dt,
            record_every: self.config.time.record_every,
            particles: self.ensemble.len(),
            u_inf: self.u_inf,
            t_truncation,
            profile_source,
            profile_deposit: self.config.diagnostics.profile_deposit,
            energy0: self.energy0,
            modulated0: self.modulated0,
            mass0: self.mass0,
            momentum0: self.target_momentum,
            max_energy_residual: self.rows.iter().map(|r| r.energy_residual).fold(0.0, f64::max),
            max_modulated_residual: self.rows.iter().map(|r| r.modulated_residual).fold(0.0, f64::max),
            quadrature_error_estimate: self.extras.last().map_or(0.0, |e| e.quadrature_error),
            max_identity_residual: balance.identity.iter().copied().fold(0.0, f64::max),
            mass_drift: balance.max_mass_drift,
            momentum_drift: balance.max_momentum_drift,
            max_momentum_correction: self.max_correction,
            monotonicity_violations,
            entropy_bound_violations,
            lip_t_start: self.lip_start,
            lip_budget: self.lip_integral,
            f_log_f,
            cubic_moment_sup: cubic,
            lambda0_scale: lambda0_scale(self.mass0, cubic),
            fit_window: [a, b],
            fits,
            tolerances: Tolerances {
                divergence_relative: DIVERGENCE_TOL,
                density_bounds: self.density.as_ref().map(|d| d.tolerance()),
                pressure_tol: self.density.as_ref().map(|_| self.config.density.pressure_tol),
                monotonicity_floor_relative: MONOTONICITY_FLOOR,
            },
            density: self.density.as_ref().map(|d| DensitySummary {
                lower: d.lower,
                upper: d.upper,
                mean: d.mean,
                max_pressure_iterations: self.max_pressure_iterations,
                profile_source: if track { "final".into() } else { "running".into() },
            }),
            notes,
        };
        RunOutput {
            rows: self.rows,
            extras: self.extras,
            summary,
            profile,
            rho_profile,
            history: self.history,
        }
    }

    /// Moments at the current state.
    pub fn current_moments(&self) -> MomentFields {
        self.deposit(&self.ensemble, &self.fluid.u)
    }

    /// Residual of the `u_∞` identity at the current state.
    pub fn identity_residual(&self) -> f64 {
        let area = self.grid.area();
        let p = self.ensemble.momentum();
        let mean_n = self.ensemble.total_mass() / area;
        let mean_j = [p[0] / area, p[1] / area];
        match &self.density {
            None => u_infinity_identity_residual(self.fluid.u.mean(), self.u_inf, mean_n, mean_j, 1.0),
            Some(d) => {
                let mass = d.rho.integral();
                let bulk = [self.fluid.u.x.inner(&d.rho) / mass, self.fluid.u.y.inner(&d.rho) / mass];
                u_infinity_identity_residual(bulk, self.u_inf, mean_n, mean_j, d.rho.mean())
            }
        }
    }
}

/// Runs a configuration to completion.
pub fn run(config: SimConfig) -> Result<RunOutput> {
    let mut sim = Simulation::new(config)?;
    match sim.run() {
        Ok(()) => Ok(sim.finish(None)),
        Err(e) => Err(e),
    }
}

/// Result of a particle versus phase-space-grid comparison.
#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub t: f64,
    pub velocity_nodes: usize,
    pub velocity_center: [f64; 2],
    pub velocity_half_width: f64,
    pub oracle_mass_drift: f64,
    pub oracle_edge_mass: f64,
    /// Relative errors of the particle moments against the oracle moments.
    pub errors: MomentComparison,
}

/// Runs the particle solver and the phase-space-grid oracle on the same
/// homogeneous configuration and compares their moments at `t_end`.
pub fn compare_with_oracle(config: &SimConfig, velocity_nodes: usize) -> Result<OracleReport> {
    if config.mode != Mode::Homogeneous {
        return Err(Error::Config("oracle comparison supports the homogeneous mode only".into()));
    }
    if config.particles.count == 0 {
        return Err(Error::Config("oracle comparison needs particles".into()));
    }
    let mut sim = Simulation::new(config.clone())?;
    let u0 = sim.fluid.u.clone();
    let vbar = config.particles.f0.velocity.mean;
    let offset = u0.shift_constant([-vbar[0], -vbar[1]]).sup_norm();
    let (center, half_width) = crate::scenario::oracle_velocity_box(config, offset);
    let f0 = PhaseSpaceGrid::from_distribution(&sim.distribution, &sim.grid, velocity_nodes, center, half_width)?;
    let mass0 = f0.mass();
    let mut oracle = OracleRun::new(f0, FluidState::new(u0, 0.0)?)?;
    oracle.run_until(config.time.t_end, sim.dt)?;
    sim.run()?;
    let particle_moments = sim.current_moments();
    let oracle_moments = oracle.moments()?;
    Ok(OracleReport {
        t: sim.time(),
        velocity_nodes,
        velocity_center: center,
        velocity_half_width: half_width,
        oracle_mass_drift: (oracle.f.mass() - mass0).abs() / mass0,
        oracle_edge_mass: oracle.f.edge_mass() / oracle.f.mass(),
        errors: compare_moments(&oracle_moments, &particle_moments)?,
    })
}
