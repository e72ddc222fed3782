//! Least-squares decay fits on log scale.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of samples inside a fit window.
pub const MIN_SAMPLES: usize = 10;

/// Floor applied to non-positive samples before taking logarithms.
pub const VALUE_FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayModel {
    /// `log y = c − λ t`.
    Exponential,
    /// `log y = c + α log(1 + t)`.
    Algebraic,
}

impl std::str::FromStr for DecayModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp" | "exponential" => Ok(Self::Exponential),
            "alg" | "algebraic" | "power" => Ok(Self::Algebraic),
            other => Err(Error::Config(format!("unknown decay model `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub model: DecayModel,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub samples: usize,
    /// Set when some samples were floored at [`VALUE_FLOOR`].
    pub floored: bool,
}

impl DecayFit {
    /// Exponential decay rate `λ̂ = −slope`.
    pub fn rate(&self) -> f64 {
        -self.slope
    }

    /// Algebraic exponent `α` (negative for decay).
    pub fn exponent(&self) -> f64 {
        self.slope
    }
}

/// Fits `series` restricted to `window = (a, b)` (inclusive).
pub fn fit_decay(series: &[(f64, f64)], model: DecayModel, window: (f64, f64)) -> Result<DecayFit> {
    let mut floored = false;
    let points: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= window.0 && *t <= window.1)
        .map(|&(t, y)| {
            let y = if y > 0.0 {
                y
            } else {
                floored = true;
                VALUE_FLOOR
            };
            let x = match model {
                DecayModel::Exponential => t,
                DecayModel::Algebraic => t.ln_1p(),
            };
            (x, y.ln())
        })
        .collect();
    if points.len() < MIN_SAMPLES {
        return Err(Error::InsufficientSamples {
            needed: MIN_SAMPLES,
            found: points.len(),
        });
    }
    if floored {
        log::warn!("decay fit: non-positive samples floored at {VALUE_FLOOR:e}");
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::ZeroDenominator("decay fit abscissa spread"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(DecayFit {
        model,
        slope,
        intercept,
        r_squared,
        samples: points.len(),
        floored,
    })
}

/// Reference scale `(1 + M₀ log(1 + ‖|v − u_∞|³ f₀‖_∞))⁻¹` for exponential rates.
pub fn lambda0_scale(mass: f64, cubic_moment_sup: f64) -> f64 {
    1.0 / (1.0 + mass * cubic_moment_sup.ln_1p())
}
