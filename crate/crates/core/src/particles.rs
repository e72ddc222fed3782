//! Weighted phase-space particles: sampling, pushing, cloud-in-cell transfer
//! and backward characteristic probes.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::initial::{InitialDistribution, SpatialProfile};
use crate::spectral::{ScalarField, TorusGrid, VectorField};

/// Default number of deposit partitions. Results depend on this count, not
/// on the number of worker threads.
pub const DEFAULT_PARTITIONS: usize = 16;

#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    length: f64,
}

#[inline]
pub(crate) fn wrap(x: f64, length: f64) -> f64 {
    // particles move less than a period per step, so one shift almost always suffices
    if (0.0..length).contains(&x) {
        return x;
    }
    let shifted = if x < 0.0 { x + length } else { x - length };
    if (0.0..length).contains(&shifted) {
        return shifted;
    }
    let r = x.rem_euclid(length);
    if r >= length {
        0.0
    } else {
        r
    }
}

impl ParticleEnsemble {
    pub fn new(
        positions: Vec<[f64; 2]>,
        velocities: Vec<[f64; 2]>,
        weights: Vec<f64>,
        length: f64,
    ) -> Result<Self> {
        if velocities.len() != positions.len() {
            return Err(Error::DimensionMismatch {
                expected: positions.len(),
                found: velocities.len(),
            });
        }
        if weights.len() != positions.len() {
            return Err(Error::DimensionMismatch {
                expected: positions.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidDistribution("particle weights must be nonnegative".into()));
        }
        let positions = positions
            .into_iter()
            .map(|p| [wrap(p[0], length), wrap(p[1], length)])
            .collect();
        Ok(Self {
            positions,
            velocities,
            weights,
            length,
        })
    }

    pub fn empty(length: f64) -> Self {
        Self {
            positions: Vec::new(),
            velocities: Vec::new(),
            weights: Vec::new(),
            length,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// `Σ w`.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Σ w V`.
    pub fn momentum(&self) -> [f64; 2] {
        let mut p = [0.0, 0.0];
        for (w, v) in self.weights.iter().zip(&self.velocities) {
            p[0] += w * v[0];
            p[1] += w * v[1];
        }
        p
    }

    /// `½ Σ w |V|²`.
    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self
            .weights
            .iter()
            .zip(&self.velocities)
            .map(|(w, v)| w * (v[0] * v[0] + v[1] * v[1]))
            .sum::<f64>()
    }

    /// `Σ w |V − c|`.
    pub fn first_moment_about(&self, c: [f64; 2]) -> f64 {
        self.weights
            .iter()
            .zip(&self.velocities)
            .map(|(w, v)| w * (v[0] - c[0]).hypot(v[1] - c[1]))
            .sum()
    }

    /// `Σ w |V − c|²`.
    pub fn second_moment_about(&self, c: [f64; 2]) -> f64 {
        self.weights
            .iter()
            .zip(&self.velocities)
            .map(|(w, v)| {
                let (a, b) = (v[0] - c[0], v[1] - c[1]);
                w * (a * a + b * b)
            })
            .sum()
    }

    pub fn max_speed(&self) -> f64 {
        self.velocities
            .iter()
            .fold(0.0_f64, |m, v| m.max(v[0].hypot(v[1])))
    }

    pub fn is_finite(&self) -> bool {
        self.positions
            .iter()
            .chain(&self.velocities)
            .all(|p| p[0].is_finite() && p[1].is_finite())
    }
}

/// Draws `count` equal-weight particles. Positions are jittered on an
/// `m × m` lattice in quantile space (`m = ⌊√count⌋`, the remainder drawn
/// uniformly) and mapped through the inverse CDF of `n₀`; velocities are
/// Gaussian.
pub fn sample_initial(dist: &InitialDistribution, count: usize, seed: u64) -> Result<ParticleEnsemble> {
    dist.validate()?;
    if count == 0 {
        return Err(Error::InvalidDistribution("particle count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = dist.length;
    let m = (count as f64).sqrt().floor() as usize;
    let m = if (m + 1) * (m + 1) <= count { m + 1 } else { m };
    let profile_axis = match dist.spatial {
        SpatialProfile::Uniform => 0,
        SpatialProfile::Cosine { axis, .. } => axis - 1,
    };
    let sigma = dist.temperature.sqrt();
    let mut positions = Vec::with_capacity(count);
    let mut velocities = Vec::with_capacity(count);
    for k in 0..count {
        let (q_profile, q_other) = if k < m * m {
            let (i, j) = (k / m, k % m);
            (
                (i as f64 + rng.random::<f64>()) / m as f64,
                (j as f64 + rng.random::<f64>()) / m as f64,
            )
        } else {
            (rng.random::<f64>(), rng.random::<f64>())
        };
        let mut p = [0.0; 2];
        p[profile_axis] = dist.inverse_cdf(q_profile);
        p[1 - profile_axis] = q_other * l;
        positions.push([wrap(p[0], l), wrap(p[1], l)]);

        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        velocities.push([
            dist.mean_velocity[0] + sigma * z0,
            dist.mean_velocity[1] + sigma * z1,
        ]);
    }
    let w = dist.mass() / count as f64;
    Ok(ParticleEnsemble {
        positions,
        velocities,
        weights: vec![w; count],
        length: l,
    })
}

/// Cloud-in-cell stencil: the four nodes around a point and their weights.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub nodes: [usize; 4],
    pub weights: [f64; 4],
}

#[derive(Clone, Copy, Debug)]
struct Cic {
    n: usize,
    inv_h: f64,
}

impl Cic {
    fn new(grid: &TorusGrid) -> Self {
        Self {
            n: grid.n(),
            inv_h: 1.0 / grid.spacing(),
        }
    }

    #[inline]
    fn axis(&self, x: f64) -> (usize, usize, f64) {
        let s = x * self.inv_h;
        let fl = s.floor();
        let i = fl as i64;
        let n = self.n as i64;
        let i0 = if (0..n).contains(&i) { i } else { i.rem_euclid(n) } as usize;
        let i1 = if i0 + 1 == self.n { 0 } else { i0 + 1 };
        (i0, i1, s - fl)
    }

    #[inline]
    fn stencil(&self, p: [f64; 2]) -> Stencil {
        let (a0, a1, fa) = self.axis(p[0]);
        let (b0, b1, fb) = self.axis(p[1]);
        let n = self.n;
        Stencil {
            nodes: [a0 * n + b0, a0 * n + b1, a1 * n + b0, a1 * n + b1],
            weights: [
                (1.0 - fa) * (1.0 - fb),
                (1.0 - fa) * fb,
                fa * (1.0 - fb),
                fa * fb,
            ],
        }
    }
}

pub fn stencil(grid: &TorusGrid, p: [f64; 2]) -> Stencil {
    Cic::new(grid).stencil(p)
}

#[inline]
fn gather_one(cic: &Cic, ux: &[f64], uy: &[f64], p: [f64; 2]) -> [f64; 2] {
    let s = cic.stencil(p);
    let mut out = [0.0, 0.0];
    for k in 0..4 {
        out[0] += s.weights[k] * ux[s.nodes[k]];
        out[1] += s.weights[k] * uy[s.nodes[k]];
    }
    out
}

/// Bilinear interpolation of `u` at one point.
pub fn sample_vector(u: &VectorField, p: [f64; 2]) -> [f64; 2] {
    let cic = Cic::new(u.grid());
    gather_one(&cic, u.x.values(), u.y.values(), p)
}

/// Bilinear interpolation of a scalar field at one point.
pub fn sample_scalar(f: &ScalarField, p: [f64; 2]) -> f64 {
    let cic = Cic::new(f.grid());
    let s = cic.stencil(p);
    (0..4).map(|k| s.weights[k] * f.values()[s.nodes[k]]).sum()
}

/// `u(X_p)` for every particle.
pub fn gather_velocity(u: &VectorField, ensemble: &ParticleEnsemble) -> Vec<[f64; 2]> {
    gather_at(u, &ensemble.positions)
}

pub fn gather_at(u: &VectorField, points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let cic = Cic::new(u.grid());
    let (ux, uy) = (u.x.values(), u.y.values());
    points.par_iter().map(|&p| gather_one(&cic, ux, uy, p)).collect()
}

/// Pushes a copy of `source` into `target`, reusing its storage.
pub fn push_into(source: &ParticleEnsemble, target: &mut ParticleEnsemble, u: &VectorField, dt: f64) -> Result<()> {
    target.positions.clone_from(&source.positions);
    target.velocities.clone_from(&source.velocities);
    target.weights.clone_from(&source.weights);
    target.length = source.length;
    push(target, u, dt)
}

/// Exponential-midpoint update of `dX = V dt`, `dV = (u(X) − V) dt`.
pub fn push(ensemble: &mut ParticleEnsemble, u: &VectorField, dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::InvalidTimeStep(dt));
    }
    let cic = Cic::new(u.grid());
    let (ux, uy) = (u.x.values(), u.y.values());
    let l = ensemble.length;
    let decay = (-dt).exp();
    let growth = -(-dt).exp_m1();
    ensemble
        .positions
        .par_iter_mut()
        .zip(ensemble.velocities.par_iter_mut())
        .for_each(|(x, v)| {
            let mid = [wrap(x[0] + 0.5 * dt * v[0], l), wrap(x[1] + 0.5 * dt * v[1], l)];
            let us = gather_one(&cic, ux, uy, mid);
            let old = *v;
            for c in 0..2 {
                v[c] = us[c] + decay * (old[c] - us[c]);
                x[c] = wrap(x[c] + dt * us[c] + growth * (old[c] - us[c]), l);
            }
        });
    Ok(())
}

/// Grid moments of the ensemble together with the drag it exerts on `u`.
#[derive(Clone, Debug)]
pub struct MomentFields {
    /// `n_f`.
    pub density: ScalarField,
    /// `j_f`.
    pub momentum: VectorField,
    /// `e_f = ½ ∫ |v|² f dv`.
    pub energy: ScalarField,
    /// `F_B = Σ w (u(X) − V) S(x − X) / h²`, the CIC deposit of the drag.
    pub brinkman: VectorField,
    /// `Σ w |u(X) − V|²`.
    pub drag_dissipation: f64,
}

impl MomentFields {
    /// Moments of an empty ensemble.
    pub fn zeros(grid: &Arc<TorusGrid>) -> Self {
        Self {
            density: ScalarField::zeros(grid),
            momentum: VectorField::zeros(grid),
            energy: ScalarField::zeros(grid),
            brinkman: VectorField::zeros(grid),
            drag_dissipation: 0.0,
        }
    }

    /// The drag in the grid-product form `n_f u − j_f`.
    pub fn grid_brinkman(&self, u: &VectorField) -> VectorField {
        u.mul_scalar(&self.density).sub(&self.momentum)
    }
}

/// Cloud-in-cell deposit of `n_f`, `j_f`, `e_f` and the drag, evaluated
/// with `u` gathered at the particle positions.
pub fn deposit_moments(ensemble: &ParticleEnsemble, grid: &Arc<TorusGrid>, u: &VectorField) -> MomentFields {
    deposit_moments_partitioned(ensemble, grid, u, DEFAULT_PARTITIONS)
}

pub fn deposit_moments_partitioned(
    ensemble: &ParticleEnsemble,
    grid: &Arc<TorusGrid>,
    u: &VectorField,
    partitions: usize,
) -> MomentFields {
    if ensemble.is_empty() {
        return MomentFields::zeros(grid);
    }
    let (channels, drag_dissipation) = deposit_channels(ensemble, grid, u, partitions, |w, v, rel| {
        [
            w,
            w * v[0],
            w * v[1],
            0.5 * w * (v[0] * v[0] + v[1] * v[1]),
            w * rel[0],
            w * rel[1],
        ]
    });
    let [n, jx, jy, e, fx, fy] = channels;
    MomentFields {
        density: n,
        momentum: VectorField { x: jx, y: jy },
        energy: e,
        brinkman: VectorField { x: fx, y: fy },
        drag_dissipation,
    }
}

/// Only the drag `F_B` of [`deposit_moments_partitioned`], bitwise equal to
/// its `brinkman` field.
pub fn deposit_brinkman_partitioned(
    ensemble: &ParticleEnsemble,
    grid: &Arc<TorusGrid>,
    u: &VectorField,
    partitions: usize,
) -> VectorField {
    if ensemble.is_empty() {
        return VectorField::zeros(grid);
    }
    let ([x, y], _) = deposit_channels(ensemble, grid, u, partitions, |w, _, rel| [w * rel[0], w * rel[1]]);
    VectorField { x, y }
}

/// CIC deposit of `CH` per-particle quantities `q(w, V, u(X) − V)`, summed
/// over fixed partitions; also returns `Σ w |u(X) − V|²`.
fn deposit_channels<const CH: usize>(
    ensemble: &ParticleEnsemble,
    grid: &Arc<TorusGrid>,
    u: &VectorField,
    partitions: usize,
    quantities: impl Fn(f64, [f64; 2], [f64; 2]) -> [f64; CH] + Sync,
) -> ([ScalarField; CH], f64) {
    let cells = grid.len();
    let np = ensemble.len();
    let cic = Cic::new(grid);
    let (ux, uy) = (u.x.values(), u.y.values());
    let chunk = np.div_ceil(partitions.max(1));
    let starts: Vec<usize> = (0..np).step_by(chunk).collect();
    let fill = |start: usize, buf: &mut [f64]| -> f64 {
        let end = (start + chunk).min(np);
        let mut dissipation = 0.0;
        for p in start..end {
            let x = ensemble.positions[p];
            let v = ensemble.velocities[p];
            let w = ensemble.weights[p];
            let s = cic.stencil(x);
            let mut up = [0.0, 0.0];
            for k in 0..4 {
                up[0] += s.weights[k] * ux[s.nodes[k]];
                up[1] += s.weights[k] * uy[s.nodes[k]];
            }
            let rel = [up[0] - v[0], up[1] - v[1]];
            dissipation += w * (rel[0] * rel[0] + rel[1] * rel[1]);
            let q = quantities(w, v, rel);
            for k in 0..4 {
                let base = s.nodes[k] * CH;
                let sw = s.weights[k];
                for c in 0..CH {
                    buf[base + c] += sw * q[c];
                }
            }
        }
        dissipation
    };

    // partition buffers are summed in partition order either way, so the
    // result does not depend on the thread count
    let mut total = vec![0.0; CH * cells];
    let mut dissipation = 0.0;
    let mut add = |buf: &[f64], d: f64| {
        for (t, b) in total.iter_mut().zip(buf) {
            *t += b;
        }
        dissipation += d;
    };
    if rayon::current_num_threads() == 1 {
        let mut scratch = vec![0.0; CH * cells];
        for &start in &starts {
            scratch.fill(0.0);
            let d = fill(start, &mut scratch);
            add(&scratch, d);
        }
    } else {
        let buffers: Vec<(Vec<f64>, f64)> = starts
            .into_par_iter()
            .map(|start| {
                let mut buf = vec![0.0; CH * cells];
                let d = fill(start, &mut buf);
                (buf, d)
            })
            .collect();
        for (buf, d) in &buffers {
            add(buf, *d);
        }
    }
    let inv_area = 1.0 / grid.cell_area();
    let fields = std::array::from_fn(|c| {
        let values = (0..cells).map(|i| total[i * CH + c] * inv_area).collect();
        ScalarField::new(grid.clone(), values).expect("deposit buffer matches grid")
    });
    (fields, dissipation)
}

/// Velocity fields stored at increasing times, linearly interpolated in time.
#[derive(Clone, Debug, Default)]
pub struct VelocityHistory {
    times: Vec<f64>,
    fields: Vec<VectorField>,
}

impl VelocityHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, u: VectorField) {
        debug_assert!(self.times.last().is_none_or(|&last| t > last));
        self.times.push(t);
        self.fields.push(u);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn covers(&self, t: f64) -> bool {
        match (self.times.first(), self.times.last()) {
            (Some(&a), Some(&b)) => t >= a - 1e-12 && t <= b + 1e-12,
            _ => false,
        }
    }

    fn sample(&self, t: f64, p: [f64; 2]) -> Result<[f64; 2]> {
        if !self.covers(t) {
            return Err(Error::HistoryGap(t));
        }
        if self.times.len() == 1 {
            return Ok(sample_vector(&self.fields[0], p));
        }
        let k = self.times.partition_point(|&s| s <= t).clamp(1, self.times.len() - 1);
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let a = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let u0 = sample_vector(&self.fields[k - 1], p);
        let u1 = sample_vector(&self.fields[k], p);
        Ok([(1.0 - a) * u0[0] + a * u1[0], (1.0 - a) * u0[1] + a * u1[1]])
    }

    fn min_spacing(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Integrates the characteristic system backward from `(t, x, v)` to `t_star`.
pub fn trace_back(x: [f64; 2], v: [f64; 2], t_star: f64, t: f64, history: &VelocityHistory) -> Result<([f64; 2], [f64; 2])> {
    if !history.covers(t) {
        return Err(Error::HistoryGap(t));
    }
    if !history.covers(t_star) {
        return Err(Error::HistoryGap(t_star));
    }
    let span = t - t_star;
    if span == 0.0 {
        return Ok((x, v));
    }
    let h_max = history.min_spacing().min(0.01);
    let steps = ((span.abs() / h_max).ceil() as usize * 2).max(1);
    let h = -span / steps as f64;
    let rhs = |tau: f64, y: [f64; 4]| -> Result<[f64; 4]> {
        let u = history.sample(tau, [y[0], y[1]])?;
        Ok([y[2], y[3], u[0] - y[2], u[1] - y[3]])
    };
    let mut y = [x[0], x[1], v[0], v[1]];
    let mut tau = t;
    let add = |y: [f64; 4], k: [f64; 4], s: f64| [y[0] + s * k[0], y[1] + s * k[1], y[2] + s * k[2], y[3] + s * k[3]];
    for i in 0..steps {
        let k1 = rhs(tau, y)?;
        let k2 = rhs(tau + 0.5 * h, add(y, k1, 0.5 * h))?;
        let k3 = rhs(tau + 0.5 * h, add(y, k2, 0.5 * h))?;
        let t_next = if i + 1 == steps { t_star } else { tau + h };
        let k4 = rhs(t_next, add(y, k3, h))?;
        for c in 0..4 {
            y[c] += h / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        tau = t_next;
    }
    Ok(([y[0], y[1]], [y[2], y[3]]))
}

/// Central-difference determinant of `v ↦ V(t_star; t, x, v)`.
pub fn flow_jacobian_probe(
    x: [f64; 2],
    v: [f64; 2],
    t_star: f64,
    t: f64,
    history: &VelocityHistory,
    delta: f64,
) -> Result<f64> {
    let mut cols = [[0.0; 2]; 2];
    for (i, col) in cols.iter_mut().enumerate() {
        let mut plus = v;
        let mut minus = v;
        plus[i] += delta;
        minus[i] -= delta;
        let (_, vp) = trace_back(x, plus, t_star, t, history)?;
        let (_, vm) = trace_back(x, minus, t_star, t, history)?;
        *col = [(vp[0] - vm[0]) / (2.0 * delta), (vp[1] - vm[1]) / (2.0 * delta)];
    }
    Ok(cols[0][0] * cols[1][1] - cols[1][0] * cols[0][1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn uniform(theta: f64, mean: [f64; 2]) -> InitialDistribution {
        InitialDistribution {
            spatial: SpatialProfile::Uniform,
            mean_velocity: mean,
            temperature: theta,
            scale: 1.0,
            length: 1.0,
        }
    }

    fn single(x: [f64; 2], v: [f64; 2], w: f64) -> ParticleEnsemble {
        ParticleEnsemble::new(vec![x], vec![v], vec![w], 1.0).unwrap()
    }

    #[test]
    fn sampling_basics() {
        let theta = 0.3;
        let ens = sample_initial(&uniform(theta, [0.5, -1.0]), 10_000, 7).unwrap();
        assert_eq!(ens.len(), 10_000);
        assert_relative_eq!(ens.total_mass(), 1.0, max_relative = 1e-12);
        let mean = ens.momentum();
        let bound = 4.0 * (theta / 10_000.0).sqrt();
        assert!((mean[0] - 0.5).abs() < bound);
        assert!((mean[1] + 1.0).abs() < bound);
        assert!(ens.positions.iter().all(|p| (0.0..1.0).contains(&p[0]) && (0.0..1.0).contains(&p[1])));

        let again = sample_initial(&uniform(theta, [0.5, -1.0]), 10_000, 7).unwrap();
        assert_eq!(ens.positions, again.positions);
        assert_eq!(ens.velocities, again.velocities);
    }

    #[test]
    fn monokinetic_and_errors() {
        let ens = sample_initial(&uniform(0.0, [0.25, 0.5]), 100, 1).unwrap();
        assert!(ens.velocities.iter().all(|v| *v == [0.25, 0.5]));
        assert!(sample_initial(&uniform(0.1, [0.0, 0.0]), 0, 1).is_err());
        let mut bad = uniform(0.1, [0.0, 0.0]);
        bad.spatial = SpatialProfile::Cosine { epsilon: 1.2, axis: 1 };
        assert!(sample_initial(&bad, 10, 1).is_err());
    }

    #[test]
    fn cosine_profile_deposit() {
        let grid = TorusGrid::unit(32).unwrap();
        let mut dist = uniform(0.1, [0.0, 0.0]);
        dist.spatial = SpatialProfile::Cosine { epsilon: 0.5, axis: 1 };
        let ens = sample_initial(&dist, 100_000, 3).unwrap();
        let m = deposit_moments(&ens, &grid, &VectorField::zeros(&grid));
        let expected = ScalarField::from_fn(&grid, |x, _| 1.0 + 0.5 * (2.0 * PI * x).cos());
        let rel = m.density.sub(&expected).l2_norm() / expected.l2_norm();
        assert!(rel <= 0.05, "relative error {rel}");
    }

    #[test]
    fn gather_cases() {
        let grid = TorusGrid::unit(16).unwrap();
        let c = VectorField::constant(&grid, [0.3, -0.7]);
        let ens = sample_initial(&uniform(0.1, [0.0, 0.0]), 50, 2).unwrap();
        for u in gather_velocity(&c, &ens) {
            assert_relative_eq!(u[0], 0.3, epsilon = 1e-15);
            assert_relative_eq!(u[1], -0.7, epsilon = 1e-15);
        }
        let f = VectorField::from_fn(&grid, |x, y| [(2.0 * PI * x).sin(), x * y]);
        let node = [5.0 / 16.0, 9.0 / 16.0];
        let got = sample_vector(&f, node);
        assert_relative_eq!(got[0], f.x.at(5, 9), epsilon = 1e-15);
        // affine in x₁ on the cell [3h, 4h]
        let lin = VectorField::from_fn(&grid, |x, _| [2.0 * x + 1.0, 0.0]);
        let p = [3.3 / 16.0, 0.4];
        assert_relative_eq!(sample_vector(&lin, p)[0], 2.0 * p[0] + 1.0, epsilon = 1e-14);
        // periodic wrap: the cell between the last node and x = 1
        let p = [15.5 / 16.0, 0.0];
        let wrap_f = VectorField::from_fn(&grid, |x, _| [x, 0.0]);
        assert_relative_eq!(sample_vector(&wrap_f, p)[0], 0.5 * (15.0 / 16.0), epsilon = 1e-15);
    }

    #[test]
    fn push_constant_field_closed_form() {
        let grid = TorusGrid::unit(16).unwrap();
        let u = VectorField::constant(&grid, [1.0, 0.0]);
        let mut ens = single([0.0, 0.0], [0.0, 0.0], 1.0);
        push(&mut ens, &u, 1.0).unwrap();
        let e = (-1.0f64).exp();
        assert!((ens.velocities[0][0] - (1.0 - e)).abs() < 1e-12);
        assert!((ens.positions[0][0] - e).abs() < 1e-12);
        assert_relative_eq!(ens.velocities[0][0], 0.632121, epsilon = 1e-6);
        assert_relative_eq!(ens.positions[0][0], 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn push_pure_damping_and_errors() {
        let grid = TorusGrid::unit(16).unwrap();
        let u = VectorField::zeros(&grid);
        let mut ens = single([0.1, 0.2], [0.3, -0.4], 2.0);
        let dt = 0.1;
        push(&mut ens, &u, dt).unwrap();
        let e = (-dt).exp();
        assert!((ens.velocities[0][0] - 0.3 * e).abs() < 1e-15);
        assert!((ens.positions[0][1] - (0.2 - 0.4 * (1.0 - e))).abs() < 1e-15);
        assert_eq!(ens.weights, vec![2.0]);
        assert!(push(&mut ens, &u, 0.0).is_err());
    }

    /// Single trajectory in a smooth rotating field compared against a
    /// fine-step RK4 reference of the exact (bilinear-interpolated) ODE.
    #[test]
    fn push_is_second_order_against_ode_reference() {
        let grid = TorusGrid::unit(32).unwrap();
        let u = VectorField::from_fn(&grid, |x, y| {
            [(2.0 * PI * y).sin(), (2.0 * PI * x).cos()]
        });
        let x0 = [0.31, 0.47];
        let v0 = [0.2, -0.1];
        let reference = |t_end: f64| {
            let steps = 20_000;
            let h = t_end / steps as f64;
            let f = |y: [f64; 4]| {
                let us = sample_vector(&u, [wrap(y[0], 1.0), wrap(y[1], 1.0)]);
                [y[2], y[3], us[0] - y[2], us[1] - y[3]]
            };
            let mut y = [x0[0], x0[1], v0[0], v0[1]];
            for _ in 0..steps {
                let k1 = f(y);
                let k2 = f(std::array::from_fn(|i| y[i] + 0.5 * h * k1[i]));
                let k3 = f(std::array::from_fn(|i| y[i] + 0.5 * h * k2[i]));
                let k4 = f(std::array::from_fn(|i| y[i] + h * k3[i]));
                for i in 0..4 {
                    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            y
        };
        let err = |dt: f64| {
            let mut ens = single(x0, v0, 1.0);
            push(&mut ens, &u, dt).unwrap();
            let r = reference(dt);
            (ens.velocities[0][0] - r[2]).hypot(ens.velocities[0][1] - r[3])
        };
        // Midpoint kernel crossings make the ODE only piecewise smooth, so
        // use small steps that stay inside one cell.
        let (e1, e2) = (err(0.004), err(0.002));
        let order = (e1 / e2).log2();
        assert!(order > 2.5, "local error order {order} (e1 {e1:e}, e2 {e2:e})");
    }

    #[test]
    fn deposit_single_particle() {
        let grid = TorusGrid::unit(16).unwrap();
        let ens = single([3.0 / 16.0, 5.0 / 16.0], [2.0, 0.0], 1.0);
        let m = deposit_moments(&ens, &grid, &VectorField::zeros(&grid));
        assert_relative_eq!(m.density.integral(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(m.density.at(3, 5), 256.0, max_relative = 1e-14);
        assert_relative_eq!(m.momentum.x.integral(), 2.0, max_relative = 1e-14);
        assert_relative_eq!(m.energy.integral(), 2.0, max_relative = 1e-14);
        assert_relative_eq!(m.drag_dissipation, 4.0, max_relative = 1e-14);
    }

    #[test]
    fn deposit_is_partition_independent_up_to_rounding() {
        let grid = TorusGrid::unit(16).unwrap();
        let ens = sample_initial(&uniform(0.2, [0.1, 0.0]), 5000, 9).unwrap();
        let u = VectorField::from_fn(&grid, |x, y| [(2.0 * PI * y).sin(), (2.0 * PI * x).sin()]);
        let a = deposit_moments_partitioned(&ens, &grid, &u, 1);
        let b = deposit_moments_partitioned(&ens, &grid, &u, 7);
        assert!(a.density.sub(&b.density).sup_norm() < 1e-10);
        let c = deposit_moments_partitioned(&ens, &grid, &u, 7);
        assert_eq!(b.density.values(), c.density.values());
        assert_eq!(b.brinkman.x.values(), c.brinkman.x.values());
        let f = deposit_brinkman_partitioned(&ens, &grid, &u, 7);
        assert_eq!(f.x.values(), b.brinkman.x.values());
        assert_eq!(f.y.values(), b.brinkman.y.values());
    }

    #[test]
    fn jacobian_probe_free_flow() {
        let grid = TorusGrid::unit(16).unwrap();
        let mut history = VelocityHistory::new();
        for k in 0..=20 {
            history.push(k as f64 * 0.1, VectorField::zeros(&grid));
        }
        let det = flow_jacobian_probe([0.3, 0.6], [0.5, -0.2], 0.5, 1.5, &history, 1e-4).unwrap();
        assert!((det - 2f64.exp()).abs() < 1e-4);
        assert_relative_eq!(det, 7.389056, epsilon = 1e-4);
        let one = flow_jacobian_probe([0.3, 0.6], [0.5, -0.2], 1.0, 1.0, &history, 1e-4).unwrap();
        assert_relative_eq!(one, 1.0, epsilon = 1e-12);
        assert!(matches!(
            flow_jacobian_probe([0.3, 0.6], [0.0, 0.0], 0.0, 3.0, &history, 1e-4),
            Err(Error::HistoryGap(_))
        ));
    }

    fn ensemble_strategy() -> impl Strategy<Value = ParticleEnsemble> {
        prop::collection::vec(
            (0.0..1.0f64, 0.0..1.0f64, -2.0..2.0f64, -2.0..2.0f64, 0.0..1.0f64),
            1..40,
        )
        .prop_map(|ps| {
            let positions = ps.iter().map(|p| [p.0, p.1]).collect();
            let velocities = ps.iter().map(|p| [p.2, p.3]).collect();
            let weights = ps.iter().map(|p| p.4).collect();
            ParticleEnsemble::new(positions, velocities, weights, 1.0).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn push_keeps_mass_and_wraps(mut ens in ensemble_strategy(), dt in 1e-3..0.5f64, a in -2.0..2.0f64) {
            let grid = TorusGrid::unit(8).unwrap();
            let u = VectorField::from_fn(&grid, |x, y| [a * (2.0 * PI * y).sin(), (2.0 * PI * x).cos()]);
            let mass = ens.total_mass();
            let weights = ens.weights.clone();
            push(&mut ens, &u, dt).unwrap();
            prop_assert_eq!(&ens.weights, &weights);
            prop_assert!((ens.total_mass() - mass).abs() <= 1e-14 * mass.max(1e-300));
            prop_assert!(ens.positions.iter().all(|p| (0.0..1.0).contains(&p[0]) && (0.0..1.0).contains(&p[1])));
        }

        #[test]
        fn push_contracts_velocities(mut ens in ensemble_strategy(), dt in 1e-3..0.5f64, a in 0.0..3.0f64) {
            let grid = TorusGrid::unit(8).unwrap();
            let u = VectorField::from_fn(&grid, |x, y| [a * (2.0 * PI * y).sin(), a * (2.0 * PI * x).cos()]);
            let vmax = ens.max_speed();
            let umax = u.sup_norm();
            push(&mut ens, &u, dt).unwrap();
            let bound = (-dt).exp() * vmax + (1.0 - (-dt).exp()) * umax;
            prop_assert!(ens.max_speed() <= bound * (1.0 + 1e-12) + 1e-15);
        }

        #[test]
        fn gather_deposit_adjoint(ens in ensemble_strategy(), c0 in -1.0..1.0f64, c1 in -1.0..1.0f64, seed in 0u64..1000) {
            let grid = TorusGrid::unit(8).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = VectorField::from_fn(&grid, |_, _| [rng.random_range(-1.0..1.0), 0.0]);
            let u = VectorField { x: u.x.clone(), y: u.x.scale(0.5) };
            let m = deposit_moments(&ens, &grid, &VectorField::zeros(&grid));
            let gathered = gather_velocity(&u, &ens);
            let lhs: f64 = ens.weights.iter().zip(&gathered).map(|(w, g)| w * (g[0] * c0 + g[1] * c1)).sum();
            let rhs = m.density.inner(&u.x) * c0 + m.density.inner(&u.y) * c1;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            prop_assert!((m.density.integral() - ens.total_mass()).abs() <= 1e-12 * (1.0 + ens.total_mass()));
            prop_assert!(m.energy.min() >= 0.0);
        }
    }
}
