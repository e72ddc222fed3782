//! Product-form initial distributions `f₀(x, v) = s · n₀(x) · G_θ(v − v̄)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial profile `n₀`, normalized to average 1 over the torus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SpatialProfile {
    Uniform,
    /// `1 + ε cos(2π x_axis / L)` with `axis` 1 or 2.
    Cosine {
        epsilon: f64,
        #[serde(default = "default_axis")]
        axis: usize,
    },
}

fn default_axis() -> usize {
    1
}

impl SpatialProfile {
    pub fn value(&self, x: [f64; 2], length: f64) -> f64 {
        match *self {
            SpatialProfile::Uniform => 1.0,
            SpatialProfile::Cosine { epsilon, axis } => {
                1.0 + epsilon * (2.0 * PI * x[axis - 1] / length).cos()
            }
        }
    }

    pub fn max(&self) -> f64 {
        match *self {
            SpatialProfile::Uniform => 1.0,
            SpatialProfile::Cosine { epsilon, .. } => 1.0 + epsilon.abs(),
        }
    }
}

/// `f₀ = scale · n₀(x) · (2πθ)⁻¹ exp(−|v − v̄|² / 2θ)`; `θ = 0` is monokinetic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialDistribution {
    pub spatial: SpatialProfile,
    pub mean_velocity: [f64; 2],
    pub temperature: f64,
    pub scale: f64,
    pub length: f64,
}

impl InitialDistribution {
    pub fn validate(&self) -> Result<()> {
        if let SpatialProfile::Cosine { epsilon, axis } = self.spatial {
            if !(epsilon.abs() < 1.0) {
                return Err(Error::InvalidDistribution(format!(
                    "cosine amplitude must satisfy |ε| < 1, got {epsilon}"
                )));
            }
            if axis != 1 && axis != 2 {
                return Err(Error::InvalidDistribution(format!(
                    "cosine axis must be 1 or 2, got {axis}"
                )));
            }
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "temperature must be nonnegative, got {}",
                self.temperature
            )));
        }
        if !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidDistribution(format!(
                "amplitude scale must be nonnegative, got {}",
                self.scale
            )));
        }
        if !(self.length > 0.0) {
            return Err(Error::InvalidDistribution("side length must be positive".into()));
        }
        Ok(())
    }

    /// Spatial density `n_{f₀}(x)`.
    pub fn density(&self, x: [f64; 2]) -> f64 {
        self.scale * self.spatial.value(x, self.length)
    }

    /// `M₀ = ‖f₀‖_{L¹}`.
    pub fn mass(&self) -> f64 {
        self.scale * self.length * self.length
    }

    /// `∫ j_{f₀} dx = M₀ v̄`.
    pub fn momentum(&self) -> [f64; 2] {
        let m = self.mass();
        [m * self.mean_velocity[0], m * self.mean_velocity[1]]
    }

    /// `‖f₀ log f₀‖_{L¹}` by quadrature in `x_axis` and in `|v − v̄|`.
    /// Infinite for monokinetic data.
    pub fn f_log_f_l1(&self) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        let theta = self.temperature;
        if theta == 0.0 {
            return f64::INFINITY;
        }
        let l = self.length;
        let nx = 512;
        let nr = 4000;
        let r_max = 14.0;
        let dr = r_max / nr as f64;
        let norm = 1.0 / (2.0 * PI * theta);
        let mut total = 0.0;
        for ix in 0..nx {
            let xi = (ix as f64 + 0.5) * l / nx as f64;
            let a = self.density([xi, xi]);
            if a <= 0.0 {
                continue;
            }
            let mut radial = 0.0;
            for ir in 0..nr {
                // ρ = |v − v̄| / √θ; the Jacobian 2π r dr becomes 2πθ ρ dρ
                let rho = (ir as f64 + 0.5) * dr;
                let g = norm * (-0.5 * rho * rho).exp();
                let f = a * g;
                radial += (f * f.ln()).abs() * 2.0 * PI * theta * rho * dr;
            }
            total += radial * (l / nx as f64) * l;
        }
        total
    }

    /// `‖ |v − c|³ f₀ ‖_{L^∞}` in closed form.
    pub fn cubic_moment_sup(&self, c: [f64; 2]) -> f64 {
        if self.scale == 0.0 {
            return 0.0;
        }
        let theta = self.temperature;
        let d = (self.mean_velocity[0] - c[0]).hypot(self.mean_velocity[1] - c[1]);
        if theta == 0.0 {
            return f64::INFINITY;
        }
        // maximize (r + d)³ exp(−r²/2θ) along the ray pointing away from c
        let r = 0.5 * (-d + (d * d + 12.0 * theta).sqrt());
        let peak = (r + d).powi(3) * (-r * r / (2.0 * theta)).exp() / (2.0 * PI * theta);
        self.scale * self.spatial.max() * peak
    }

    /// Inverse of the normalized CDF of `n₀` along its varying axis.
    pub fn inverse_cdf(&self, q: f64) -> f64 {
        let l = self.length;
        match self.spatial {
            SpatialProfile::Uniform => q * l,
            SpatialProfile::Cosine { epsilon, .. } => {
                let k = 2.0 * PI / l;
                let cdf = |x: f64| (x + epsilon / k * (k * x).sin()) / l;
                let pdf = |x: f64| (1.0 + epsilon * (k * x).cos()) / l;
                let target = q.clamp(0.0, 1.0);
                let (mut lo, mut hi) = (0.0, l);
                let mut x = target * l;
                for _ in 0..100 {
                    let g = cdf(x) - target;
                    if g.abs() < 1e-15 {
                        break;
                    }
                    if g > 0.0 {
                        hi = x;
                    } else {
                        lo = x;
                    }
                    let next = x - g / pdf(x);
                    x = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
                }
                x
            }
        }
    }
}
