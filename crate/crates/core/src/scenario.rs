//! Named run presets, one per regime of interest, and the matched setup
//! used to compare the particle solver against the phase-space grid.

use crate::config::{
    DensityConfig, DiagnosticsConfig, DomainConfig, F0Config, FluidConfig, Mode, ParticlesConfig, ProfileDeposit,
    SimConfig,
    TimeConfig, VelocityConfig,
};
use crate::density::DensityProfile;
use crate::diagnostics::DecayModel;
use crate::error::{Error, Result};
use crate::initial::SpatialProfile;

pub const PRESETS: [&str; 5] = ["homog-large", "homog-small-f0", "equilibrium", "inhomog-jump", "fluid-only"];

pub fn preset(name: &str) -> Result<SimConfig> {
    let cfg = match name {
        "homog-large" => homog_large(),
        "homog-small-f0" => homog_small_f0(),
        "equilibrium" => equilibrium(),
        "inhomog-jump" => inhomog_jump(),
        "fluid-only" => fluid_only(),
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(SimConfig {
        preset: Some(name.to_string()),
        ..cfg
    })
}

fn time(dt: f64, t_end: f64) -> TimeConfig {
    TimeConfig {
        dt: Some(dt),
        t_end,
        ..TimeConfig::default()
    }
}

fn particles(count: usize, spatial: SpatialProfile, mean: [f64; 2], temperature: f64, f0_scale: f64) -> ParticlesConfig {
    ParticlesConfig {
        count,
        seed: 20240607,
        f0: F0Config {
            spatial,
            velocity: VelocityConfig { mean, temperature },
        },
        f0_scale,
        ..ParticlesConfig::default()
    }
}

/// Large data: `H₀ = O(1)`, algebraic decay expected.
fn homog_large() -> SimConfig {
    SimConfig {
        domain: DomainConfig { n: 64, length: 1.0 },
        time: time(5e-4, 5.0),
        fluid: FluidConfig {
            taylor_green: 1.0,
            ..FluidConfig::default()
        },
        particles: particles(100_000, SpatialProfile::Cosine { epsilon: 0.5, axis: 1 }, [1.0, 0.0], 0.2, 1.0),
        diagnostics: DiagnosticsConfig {
            fit_model: DecayModel::Algebraic,
            fit_window: Some([1.0, 5.0]),
            ..DiagnosticsConfig::default()
        },
        ..SimConfig::default()
    }
}

/// Small `f₀`: exponential convergence to the monokinetic limit.
fn homog_small_f0() -> SimConfig {
    SimConfig {
        domain: DomainConfig { n: 32, length: 1.0 },
        time: time(1e-3, 12.0),
        fluid: FluidConfig {
            taylor_green: 0.5,
            ..FluidConfig::default()
        },
        particles: particles(16_384, SpatialProfile::Cosine { epsilon: 0.5, axis: 1 }, [0.5, 0.0], 0.1, 0.1),
        diagnostics: DiagnosticsConfig {
            fit_model: DecayModel::Exponential,
            fit_window: Some([2.0, 10.0]),
            track_profile: true,
            keep_velocity_history: true,
            profile_deposit: ProfileDeposit::Spectral,
            ..DiagnosticsConfig::default()
        },
        ..SimConfig::default()
    }
}

/// Monokinetic fixed point `u ≡ V ≡ c`.
fn equilibrium() -> SimConfig {
    let c = [0.5, 0.25];
    SimConfig {
        domain: DomainConfig { n: 32, length: 1.0 },
        time: time(1e-3, 1.0),
        fluid: FluidConfig {
            mean: c,
            ..FluidConfig::default()
        },
        particles: particles(4096, SpatialProfile::Uniform, c, 0.0, 1.0),
        diagnostics: DiagnosticsConfig {
            track_profile: true,
            ..DiagnosticsConfig::default()
        },
        ..SimConfig::default()
    }
}

/// Two density stripes with contrast 2:1, smoothed over two cells.
fn inhomog_jump() -> SimConfig {
    SimConfig {
        mode: Mode::Inhomogeneous,
        domain: DomainConfig { n: 64, length: 1.0 },
        time: time(5e-4, 2.0),
        fluid: FluidConfig {
            taylor_green: 1.0,
            ..FluidConfig::default()
        },
        particles: particles(20_000, SpatialProfile::Cosine { epsilon: 0.5, axis: 2 }, [0.5, 0.0], 0.1, 0.5),
        density: DensityConfig {
            rho0: DensityProfile::Piecewise {
                levels: vec![1.0, 2.0],
                smoothing_cells: 2.0,
            },
            rho_min_guard: 0.5,
            ..DensityConfig::default()
        },
        diagnostics: DiagnosticsConfig {
            track_profile: true,
            fit_model: DecayModel::Algebraic,
            ..DiagnosticsConfig::default()
        },
        ..SimConfig::default()
    }
}

/// Navier–Stokes alone, Taylor–Green initial data.
fn fluid_only() -> SimConfig {
    SimConfig {
        domain: DomainConfig { n: 32, length: 1.0 },
        time: time(1e-4, 0.05),
        fluid: FluidConfig {
            taylor_green: 1.0,
            ..FluidConfig::default()
        },
        ..SimConfig::default()
    }
}

/// Velocity nodes per direction of the phase-space grid in oracle runs.
pub const ORACLE_VELOCITY_NODES: usize = 16;

/// Data for the particle/grid comparison: a warm beam crossing a weak shear
/// on 16², with `n₀` and `u₀` varying across the beam so the comparison is
/// sensitive to transport but not dominated by grid diffusion along it.
pub fn oracle_comparison_config() -> SimConfig {
    SimConfig {
        preset: Some("oracle-comparison".into()),
        domain: DomainConfig { n: 16, length: 1.0 },
        time: TimeConfig {
            dt: Some(0.01),
            t_end: 1.0,
            record_every: 10,
            ..TimeConfig::default()
        },
        fluid: FluidConfig {
            mean: [1.0, 0.0],
            taylor_green: 0.05,
            shear: 0.2,
        },
        particles: particles(1 << 20, SpatialProfile::Cosine { epsilon: 0.2, axis: 2 }, [1.0, 0.0], 0.02, 1.0),
        ..SimConfig::default()
    }
}

/// Velocity box `(centre, half-width)` for the grid oracle: centred at `v̄`
/// with half-width `6√θ + sup|u₀ − v̄|`.
pub fn oracle_velocity_box(cfg: &SimConfig, u0_sup_offset: f64) -> ([f64; 2], f64) {
    let v = &cfg.particles.f0.velocity;
    (v.mean, 6.0 * v.temperature.sqrt() + u0_sup_offset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            assert_eq!(cfg.preset.as_deref(), Some(name));
            let text = cfg.to_toml().unwrap();
            assert_eq!(SimConfig::from_toml(&text).unwrap(), cfg);
        }
        oracle_comparison_config().validate().unwrap();
    }

    #[test]
    fn unknown_preset_is_config_error() {
        assert!(matches!(preset("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn large_preset_limit_velocity() {
        // ⟨u₀⟩ = 0, M₀ = 1, v̄ = (1, 0) on the unit torus → u_∞ = (1/2, 0)
        let cfg = preset("homog-large").unwrap();
        let dist = cfg.initial_distribution();
        let u = crate::diagnostics::u_infinity(cfg.fluid.mean, dist.mass(), dist.momentum()).unwrap();
        assert_eq!(u, [0.5, 0.0]);
    }
}
