//! Band-limited particle deposits by Gaussian gridding.
//!
//! For point masses `c_p` at `X_p` the truncated Fourier series
//!
//! ```text
//! n̂(k) = (1/L²) Σ_p c_p e^{−2πi k·X_p / L},   |k_i| < n/2,
//! ```
//!
//! is computed by spreading each particle with a periodized Gaussian onto a
//! twice-finer grid, transforming, and dividing by the Gaussian's symbol.
//! Unlike cloud-in-cell, the result satisfies the continuity equation mode
//! by mode: `d n̂/dt = −iκ·ĵ` whenever `Ẋ = V`, so density increments
//! match the spectral divergence of the deposited flux.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::spectral::{Spectrum, TorusGrid};

/// Oversampling ratio of the spreading grid.
const OVERSAMPLING: usize = 2;

/// Spreading half-width in fine-grid points; about four digits, which is
/// enough for the continuity mismatch to sit below the time-quadrature error.
pub const DEFAULT_HALF_WIDTH: usize = 4;

pub struct SpectralDeposit {
    grid: Arc<TorusGrid>,
    fine: usize,
    half_width: usize,
    tau: f64,
    plan: Arc<dyn Fft<f64>>,
    /// `√(π/τ) e^{τk²}` per axis index.
    deconvolve: Vec<f64>,
}

impl std::fmt::Debug for SpectralDeposit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralDeposit")
            .field("n", &self.grid.n())
            .field("fine", &self.fine)
            .field("half_width", &self.half_width)
            .finish()
    }
}

impl SpectralDeposit {
    pub fn new(grid: &Arc<TorusGrid>) -> Self {
        Self::with_half_width(grid, DEFAULT_HALF_WIDTH)
    }

    pub fn with_half_width(grid: &Arc<TorusGrid>, half_width: usize) -> Self {
        let n = grid.n();
        let fine = OVERSAMPLING * n;
        let r = OVERSAMPLING as f64;
        // Greengard–Lee choice balancing aliasing against truncation
        let tau = PI * half_width as f64 / ((n * n) as f64 * r * (r - 0.5));
        let plan = FftPlanner::new().plan_fft_forward(fine);
        let deconvolve = (0..n)
            .map(|a| {
                let k = grid.wavenumber(a) as f64;
                (PI / tau).sqrt() * (tau * k * k).exp()
            })
            .collect();
        Self {
            grid: grid.clone(),
            fine,
            half_width,
            tau,
            plan,
            deconvolve,
        }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    /// Side of the padded spreading buffer; footprints never wrap inside it.
    fn padded(&self) -> usize {
        self.fine + 2 * self.half_width
    }

    /// Length of a spreading buffer.
    pub fn buffer_len(&self) -> usize {
        self.padded() * self.padded()
    }

    pub fn zeros<const Q: usize>(&self) -> [Vec<f64>; Q] {
        std::array::from_fn(|_| vec![0.0; self.buffer_len()])
    }

    /// Adds the Gaussian footprints of `Q` weights per point to `out`.
    pub fn spread<const Q: usize>(
        &self,
        points: impl Iterator<Item = ([f64; 2], [f64; Q])>,
        out: &mut [Vec<f64>; Q],
    ) {
        let m = self.fine;
        let stride = self.padded();
        let w = 2 * self.half_width;
        let h = 2.0 * PI / m as f64;
        let to_angle = 2.0 * PI / self.grid.length();
        let inv4tau = 1.0 / (4.0 * self.tau);
        let mut ex = vec![0.0; w];
        let mut ey = vec![0.0; w];
        // fast Gaussian gridding: e^{−(d₀+sh)²/4τ} = e^{−d₀²/4τ} (e^{−d₀h/2τ})^s e^{−s²h²/4τ}
        let offsets: Vec<f64> = (0..w).map(|j| self.half_width as f64 - 1.0 - j as f64).collect();
        let square_part: Vec<f64> = offsets.iter().map(|s| (-s * s * h * h * inv4tau).exp()).collect();
        // padded index p holds fine index p − half_width + 1 (mod m)
        let footprint = |theta: f64, e: &mut [f64]| -> usize {
            let theta = theta.rem_euclid(2.0 * PI);
            let cell = ((theta / h).floor() as usize).min(m - 1);
            let d0 = theta - cell as f64 * h;
            let ratio = (-d0 * h * 2.0 * inv4tau).exp();
            // start at the largest offset s = half_width − 1 and step s down by one
            let mut power = ratio.powf(offsets[0]);
            let inv = 1.0 / ratio;
            let lead = (-d0 * d0 * inv4tau).exp();
            for (ej, sq) in e.iter_mut().zip(&square_part) {
                *ej = lead * power * sq;
                power *= inv;
            }
            cell
        };
        for (x, c) in points {
            let bx = footprint(x[0] * to_angle, &mut ex);
            let by = footprint(x[1] * to_angle, &mut ey);
            for (a, &wa) in ex.iter().enumerate() {
                let row = (bx + a) * stride + by;
                for q in 0..Q {
                    let s = wa * c[q];
                    for (t, &wb) in out[q][row..row + w].iter_mut().zip(&ey) {
                        *t += s * wb;
                    }
                }
            }
        }
    }

    /// Folds the padding back onto the periodic fine grid.
    fn fold(&self, buffer: &[f64]) -> Vec<Complex64> {
        let m = self.fine;
        let stride = self.padded();
        let shift = self.half_width - 1;
        let mut out = vec![Complex64::default(); m * m];
        for (p, row) in buffer.chunks_exact(stride).enumerate() {
            let i = (p + m - shift) % m;
            for (q, &v) in row.iter().enumerate() {
                out[i * m + (q + m - shift) % m].re += v;
            }
        }
        out
    }

    /// Normalized coefficients `(1/L²) Σ c e^{−iκ·X}` of a spread buffer,
    /// with Nyquist modes zeroed.
    pub fn spectrum(&self, buffer: &[f64]) -> Spectrum {
        let m = self.fine;
        let n = self.grid.n();
        let mut buf = self.fold(buffer);
        let mut scratch = vec![Complex64::default(); self.plan.get_inplace_scratch_len()];
        self.plan.process_with_scratch(&mut buf, &mut scratch);
        transpose(&mut buf, m);
        self.plan.process_with_scratch(&mut buf, &mut scratch);
        transpose(&mut buf, m);
        let fine_index = |a: usize| -> usize { (self.grid.wavenumber(a)).rem_euclid(m as i64) as usize };
        let scale = 1.0 / ((m * m) as f64 * self.grid.area());
        let mut out = Spectrum::zeros(&self.grid);
        let coeffs = out.coeffs_mut();
        for a in 0..n {
            for b in 0..n {
                if self.grid.is_nyquist(a) || self.grid.is_nyquist(b) {
                    continue;
                }
                let c = buf[fine_index(a) * m + fine_index(b)];
                coeffs[a * n + b] = c * (scale * self.deconvolve[a] * self.deconvolve[b]);
            }
        }
        out
    }
}

fn transpose(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}
