//! Run configuration: TOML layered as preset, then file, then dotted
//! command-line overrides such as `time.dt=1e-4`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::density::DensityProfile;
use crate::diagnostics::DecayModel;
use crate::error::{Error, Result};
use crate::initial::{InitialDistribution, SpatialProfile};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Homogeneous,
    Inhomogeneous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub n: usize,
    pub length: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self { n: 32, length: 1.0 }
    }
}

/// Either `dt` or `cfl` must be set. With `cfl` the step is fixed once from
/// the initial state by [`crate::fluid::cfl_dt`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub dt: Option<f64>,
    pub cfl: Option<f64>,
    pub dt_max: f64,
    pub t_end: f64,
    pub record_every: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            dt: Some(1e-3),
            cfl: None,
            dt_max: 1e-2,
            t_end: 1.0,
            record_every: 10,
        }
    }
}

/// `u₀ = mean + taylor_green · TG + shear · (sin(2πx₂/L), 0)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluidConfig {
    pub mean: [f64; 2],
    pub taylor_green: f64,
    pub shear: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VelocityConfig {
    pub mean: [f64; 2],
    pub temperature: f64,
}

impl Default for VelocityConfig {
    fn default() -> Self {
        Self {
            mean: [0.0, 0.0],
            temperature: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct F0Config {
    pub spatial: SpatialProfile,
    pub velocity: VelocityConfig,
}

impl Default for F0Config {
    fn default() -> Self {
        Self {
            spatial: SpatialProfile::Uniform,
            velocity: VelocityConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticlesConfig {
    pub count: usize,
    pub seed: u64,
    pub f0: F0Config,
    /// Multiplies `f₀` at fixed shape, so `M₀ = f0_scale · L²`.
    pub f0_scale: f64,
    pub partitions: usize,
}

impl Default for ParticlesConfig {
    fn default() -> Self {
        Self {
            count: 0,
            seed: 1,
            f0: F0Config::default(),
            f0_scale: 1.0,
            partitions: crate::particles::DEFAULT_PARTITIONS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub rho0: DensityProfile,
    pub rho_min_guard: f64,
    pub pressure_tol: f64,
    pub max_iters: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            rho0: DensityProfile::Constant { value: 1.0 },
            rho_min_guard: 1e-3,
            pressure_tol: 1e-8,
            max_iters: 200,
        }
    }
}

/// `cic` reuses the grid moments; `spectral` deposits the truncated Fourier
/// series of the particles, which keeps `ñ_f` and the flux consistent with
/// the spectral divergence at several times the cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileDeposit {
    #[default]
    Cic,
    Spectral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// The Lipschitz budget starts at the first recorded time with `D ≤ eta`.
    pub eta: f64,
    /// Keep shifted `n_f` (and `ρ`) snapshots at every record so profile
    /// distances can be recomputed against the final profile.
    pub track_profile: bool,
    pub keep_velocity_history: bool,
    /// Deposit behind the particle limit profile.
    pub profile_deposit: ProfileDeposit,
    #[serde(with = "model_name")]
    pub fit_model: DecayModel,
    /// Defaults to `[t_end / 5, t_end]`.
    pub fit_window: Option<[f64; 2]>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            eta: 1e-2,
            track_profile: false,
            keep_velocity_history: false,
            profile_deposit: ProfileDeposit::Cic,
            fit_model: DecayModel::Exponential,
            fit_window: None,
        }
    }
}

mod model_name {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::diagnostics::DecayModel;

    pub fn serialize<S: Serializer>(m: &DecayModel, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match m {
            DecayModel::Exponential => "exp",
            DecayModel::Algebraic => "alg",
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DecayModel, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Snapshot cadence in steps; 0 disables snapshots.
    pub fields_every: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub preset: Option<String>,
    pub mode: Mode,
    pub domain: DomainConfig,
    pub time: TimeConfig,
    pub fluid: FluidConfig,
    pub particles: ParticlesConfig,
    pub density: DensityConfig,
    pub diagnostics: DiagnosticsConfig,
    pub output: OutputConfig,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Starts from `base`, merges the TOML `file` over it, then applies
    /// `key=value` overrides with dotted keys. Values are parsed as TOML and
    /// fall back to plain strings.
    pub fn layered(base: &SimConfig, file: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = toml::Value::try_from(base).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(text) = file {
            let layer: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
            merge(&mut value, layer);
        }
        for (key, raw) in overrides {
            set_dotted(&mut value, key, parse_scalar(raw))?;
        }
        let cfg: SimConfig = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let d = &self.domain;
        if d.n < 8 || !d.n.is_multiple_of(2) {
            return bad(format!("domain.n must be even and at least 8, got {}", d.n));
        }
        if !(d.length > 0.0 && d.length.is_finite()) {
            return bad(format!("domain.length must be positive, got {}", d.length));
        }
        let t = &self.time;
        match (t.dt, t.cfl) {
            (None, None) => return bad("set one of time.dt or time.cfl".into()),
            (Some(dt), _) if !(dt > 0.0 && dt.is_finite()) => return bad(format!("time.dt must be positive, got {dt}")),
            (None, Some(c)) if !(c > 0.0 && c.is_finite()) => return bad(format!("time.cfl must be positive, got {c}")),
            _ => {}
        }
        if !(t.dt_max > 0.0) {
            return bad(format!("time.dt_max must be positive, got {}", t.dt_max));
        }
        if !(t.t_end > 0.0 && t.t_end.is_finite()) {
            return bad(format!("time.t_end must be positive, got {}", t.t_end));
        }
        if t.record_every == 0 {
            return bad("time.record_every must be at least 1".into());
        }
        if !self.fluid.mean.iter().chain([&self.fluid.taylor_green, &self.fluid.shear]).all(|v| v.is_finite()) {
            return bad("fluid parameters must be finite".into());
        }
        let p = &self.particles;
        if p.count > 0 {
            if !(p.f0_scale > 0.0 && p.f0_scale.is_finite()) {
                return bad(format!("particles.f0_scale must be positive, got {}", p.f0_scale));
            }
            if p.partitions == 0 {
                return bad("particles.partitions must be at least 1".into());
            }
            self.initial_distribution()
                .validate()
                .map_err(|e| Error::Config(format!("particles.f0: {e}")))?;
        }
        if self.mode == Mode::Inhomogeneous {
            let dc = &self.density;
            if !(dc.rho_min_guard > 0.0) {
                return bad(format!("density.rho_min_guard must be positive, got {}", dc.rho_min_guard));
            }
            let levels: Vec<f64> = match &dc.rho0 {
                DensityProfile::Constant { value } => vec![*value],
                DensityProfile::Piecewise { levels, smoothing_cells } => {
                    if levels.is_empty() {
                        return bad("density.rho0.levels must not be empty".into());
                    }
                    if !(*smoothing_cells >= 0.0) {
                        return bad(format!("density.rho0.smoothing_cells must be nonnegative, got {smoothing_cells}"));
                    }
                    levels.clone()
                }
            };
            if let Some(l) = levels.iter().find(|l| !(**l >= dc.rho_min_guard)) {
                return bad(format!("density level {l} is below rho_min_guard {}", dc.rho_min_guard));
            }
            if !(dc.pressure_tol > 0.0) || dc.max_iters == 0 {
                return bad("density.pressure_tol and density.max_iters must be positive".into());
            }
        }
        let dg = &self.diagnostics;
        if !(dg.eta >= 0.0) {
            return bad(format!("diagnostics.eta must be nonnegative, got {}", dg.eta));
        }
        if let Some([a, b]) = dg.fit_window {
            if !(a < b) {
                return bad(format!("diagnostics.fit_window must satisfy a < b, got [{a}, {b}]"));
            }
        }
        Ok(())
    }

    pub fn initial_distribution(&self) -> InitialDistribution {
        InitialDistribution {
            spatial: self.particles.f0.spatial,
            mean_velocity: self.particles.f0.velocity.mean,
            temperature: self.particles.f0.velocity.temperature,
            scale: self.particles.f0_scale,
            length: self.domain.length,
        }
    }

    pub fn fit_window(&self) -> (f64, f64) {
        match self.diagnostics.fit_window {
            Some([a, b]) => (a, b),
            None => (0.2 * self.time.t_end, self.time.t_end),
        }
    }
}

fn merge(base: &mut toml::Value, layer: toml::Value) {
    match (base, layer) {
        (toml::Value::Table(b), toml::Value::Table(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    // tagged enums are replaced whole so stale variant fields do not linger
                    Some(existing) if existing.is_table() && v.is_table() && !v.as_table().unwrap().contains_key("kind") => {
                        merge(existing, v)
                    }
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, l) => *b = l,
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_dotted(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key '{key}'")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{key}' descends into a non-table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override '{key}' descends into a non-table")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = SimConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(SimConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn overrides_apply_last() {
        let file = "[time]\ndt = 0.002\nt_end = 3.0\n";
        let cfg = SimConfig::layered(
            &SimConfig::default(),
            Some(file),
            &[("time.dt".into(), "1e-4".into()), ("output.dir".into(), "runs/a".into())],
        )
        .unwrap();
        assert_eq!(cfg.time.dt, Some(1e-4));
        assert_eq!(cfg.time.t_end, 3.0);
        assert_eq!(cfg.output.dir, Some(PathBuf::from("runs/a")));
    }

    #[test]
    fn tagged_enum_replaced_whole() {
        let base = SimConfig {
            particles: ParticlesConfig {
                count: 10,
                f0: F0Config {
                    spatial: SpatialProfile::Cosine { epsilon: 0.5, axis: 2 },
                    ..Default::default()
                },
                ..Default::default()
            },
            ..Default::default()
        };
        let cfg = SimConfig::layered(&base, Some("[particles.f0.spatial]\nkind = \"uniform\"\n"), &[]).unwrap();
        assert_eq!(cfg.particles.f0.spatial, SpatialProfile::Uniform);
    }

    #[test]
    fn invalid_values_name_the_key() {
        let cases = [
            ("domain.n", "7"),
            ("time.t_end", "-1"),
            ("particles.f0.spatial", "{ kind = \"cosine\", epsilon = 1.5 }"),
            ("time.record_every", "0"),
        ];
        for (key, value) in cases {
            let mut over = vec![(key.to_string(), value.to_string())];
            if key.starts_with("particles") {
                over.push(("particles.count".into(), "10".into()));
            }
            let err = SimConfig::layered(&SimConfig::default(), None, &over).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{key}");
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = SimConfig::from_toml("[time]\nd_t = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("d_t"));
    }

    #[test]
    fn density_levels_checked_against_guard() {
        let over = [
            ("mode".to_string(), "\"inhomogeneous\"".to_string()),
            ("density.rho0".to_string(), "{ kind = \"piecewise\", levels = [1.0, 1e-5], smoothing_cells = 1.0 }".to_string()),
        ];
        assert!(SimConfig::layered(&SimConfig::default(), None, &over).is_err());
    }
}
