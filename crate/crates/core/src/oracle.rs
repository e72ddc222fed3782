//! Reference kinetic solver on a tensor phase-space grid.
//!
//! `f` lives on `n² × m²` nodes: periodic cell-vertex nodes in `x` and
//! cell-centred nodes in a truncated velocity box. The characteristics of
//! `dX = V`, `dV = u(X) − V` are followed under a frozen `u` with linear
//! interpolation in every direction. It is slow and diffusive, and only
//! meant to cross-check the particle solver.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fluid::{advection, integrating_factor_step, FluidState};
use crate::initial::InitialDistribution;
use crate::particles::MomentFields;
use crate::spectral::{leray_project, ScalarField, TorusGrid, VectorField};

/// Upper bound on the number of phase-space nodes (32⁴).
pub const MAX_NODES: usize = 1 << 20;

/// Velocity-box leakage allowed per step, relative to the current mass.
pub const DEFAULT_LEAK_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct PhaseSpaceGrid {
    grid: Arc<TorusGrid>,
    nv: usize,
    center: [f64; 2],
    half_width: f64,
    /// `values[((i·n + j)·m + a)·m + b]` at `x = (x_i, x_j)`, `v = (v_a, v_b)`.
    values: Vec<f64>,
}

impl PhaseSpaceGrid {
    pub fn zeros(grid: &Arc<TorusGrid>, nv: usize, center: [f64; 2], half_width: f64) -> Result<Self> {
        if nv < 2 {
            return Err(Error::InvalidGrid(format!("velocity grid needs at least 2 nodes, got {nv}")));
        }
        if !(half_width > 0.0) || !center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "velocity box centre {center:?}, half-width {half_width}"
            )));
        }
        let nodes = grid.len() * nv * nv;
        if nodes > MAX_NODES {
            return Err(Error::InvalidGrid(format!(
                "{nodes} phase-space nodes exceed the cap of {MAX_NODES}"
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            nv,
            center,
            half_width,
            values: vec![0.0; nodes],
        })
    }

    /// Samples `f(x, v)` at every node.
    pub fn from_fn(
        grid: &Arc<TorusGrid>,
        nv: usize,
        center: [f64; 2],
        half_width: f64,
        f: impl Fn([f64; 2], [f64; 2]) -> f64 + Sync,
    ) -> Result<Self> {
        let mut out = Self::zeros(grid, nv, center, half_width)?;
        let block = nv * nv;
        let n = grid.n();
        let this = out.clone();
        out.values.par_chunks_mut(block).enumerate().for_each(|(node, chunk)| {
            let x = [grid.coord(node / n), grid.coord(node % n)];
            for (k, value) in chunk.iter_mut().enumerate() {
                *value = f(x, this.v_node2(k));
            }
        });
        if out.values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidDistribution("phase-space density must be nonnegative".into()));
        }
        Ok(out)
    }

    /// `f₀(x, v) = scale · n₀(x) · 𝒩(v; v̄, θ)` sampled at the nodes.
    pub fn from_distribution(
        dist: &InitialDistribution,
        grid: &Arc<TorusGrid>,
        nv: usize,
        center: [f64; 2],
        half_width: f64,
    ) -> Result<Self> {
        dist.validate()?;
        let theta = dist.temperature;
        if !(theta > 0.0) {
            return Err(Error::InvalidDistribution("grid oracle needs a positive temperature".into()));
        }
        let vbar = dist.mean_velocity;
        let norm = 1.0 / (2.0 * std::f64::consts::PI * theta);
        Self::from_fn(grid, nv, center, half_width, |x, v| {
            let d2 = (v[0] - vbar[0]).powi(2) + (v[1] - vbar[1]).powi(2);
            dist.density(x) * norm * (-0.5 * d2 / theta).exp()
        })
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn velocity_nodes(&self) -> usize {
        self.nv
    }

    pub fn center(&self) -> [f64; 2] {
        self.center
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn velocity_spacing(&self) -> f64 {
        2.0 * self.half_width / self.nv as f64
    }

    /// Velocity coordinate of node `a` along component `c`.
    pub fn v_node(&self, c: usize, a: usize) -> f64 {
        self.center[c] - self.half_width + (a as f64 + 0.5) * self.velocity_spacing()
    }

    fn v_node2(&self, k: usize) -> [f64; 2] {
        [self.v_node(0, k / self.nv), self.v_node(1, k % self.nv)]
    }

    fn cell_volume(&self) -> f64 {
        self.grid.cell_area() * self.velocity_spacing().powi(2)
    }

    /// `∫∫ f dx dv` by the tensor midpoint rule.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// Mass carried by the outermost ring of velocity cells.
    pub fn edge_mass(&self) -> f64 {
        let m = self.nv;
        let edge = |a: usize| a == 0 || a + 1 == m;
        self.values
            .chunks(m * m)
            .map(|chunk| {
                chunk
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| edge(k / m) || edge(k % m))
                    .map(|(_, v)| v)
                    .sum::<f64>()
            })
            .sum::<f64>()
            * self.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Linear (cloud-in-cell) split of a velocity coordinate over the two
/// nearest nodes, clamped to the outermost node inside the box. `None` when
/// `v` lies outside the box.
#[inline]
fn velocity_split(v: f64, lo: f64, hv: f64, m: usize) -> Option<[(usize, f64); 2]> {
    let s = (v - lo) / hv - 0.5;
    if !(s >= -0.5 && s <= m as f64 - 0.5) {
        return None;
    }
    if s <= 0.0 {
        return Some([(0, 1.0), (0, 0.0)]);
    }
    if s >= (m - 1) as f64 {
        return Some([(m - 1, 1.0), (m - 1, 0.0)]);
    }
    let a0 = s.floor() as usize;
    let frac = s - a0 as f64;
    Some([(a0, 1.0 - frac), (a0 + 1, frac)])
}

/// Relaxation `dV = (u − V) dt` over `dt` at one spatial node: every velocity
/// node is moved to `u + e^{−dt}(v − u)` and its value scattered linearly.
/// This is the transpose of backward linear interpolation, so mass and
/// momentum are conserved exactly. Returns the mass density that left the box.
fn relax_node(src: &[f64], dst: &mut [f64], u: [f64; 2], dt: f64, lo: [f64; 2], hv: f64, m: usize) -> f64 {
    let decay = (-dt).exp();
    dst.iter_mut().for_each(|d| *d = 0.0);
    let mut leaked = 0.0;
    for a in 0..m {
        let va = lo[0] + (a as f64 + 0.5) * hv;
        let ia = velocity_split(u[0] + decay * (va - u[0]), lo[0], hv, m);
        for b in 0..m {
            let value = src[a * m + b];
            if value == 0.0 {
                continue;
            }
            let vb = lo[1] + (b as f64 + 0.5) * hv;
            let ib = velocity_split(u[1] + decay * (vb - u[1]), lo[1], hv, m);
            match (ia, ib) {
                (Some(ia), Some(ib)) => {
                    for &(p, wp) in &ia {
                        for &(q, wq) in &ib {
                            dst[p * m + q] += wp * wq * value;
                        }
                    }
                }
                _ => leaked += value,
            }
        }
    }
    leaked
}

fn relax(f: &PhaseSpaceGrid, u: &VectorField, dt: f64) -> (PhaseSpaceGrid, f64) {
    let m = f.nv;
    let hv = f.velocity_spacing();
    let lo = [f.center[0] - f.half_width, f.center[1] - f.half_width];
    let (ux, uy) = (u.x.values(), u.y.values());
    let mut out = f.clone();
    let leaked: f64 = out
        .values
        .par_chunks_mut(m * m)
        .zip(f.values.par_chunks(m * m))
        .enumerate()
        .map(|(cell, (dst, src))| relax_node(src, dst, [ux[cell], uy[cell]], dt, lo, hv, m))
        .sum();
    (out, leaked * f.cell_volume())
}

/// Free streaming `dX = V dt`: each velocity slice is translated by
/// `dt·v` with backward bilinear interpolation in `x`.
fn stream(f: &PhaseSpaceGrid, dt: f64) -> PhaseSpaceGrid {
    let n = f.grid.n() as i64;
    let m = f.nv;
    let block = m * m;
    let h = f.grid.spacing();
    let shifts: Vec<[(i64, f64); 2]> = (0..block)
        .map(|k| {
            let v = f.v_node2(k);
            let axis = |c: usize| {
                let s = -dt * v[c] / h;
                let fl = s.floor();
                (fl as i64, s - fl)
            };
            [axis(0), axis(1)]
        })
        .collect();
    let src = &f.values;
    let mut out = f.clone();
    out.values.par_chunks_mut(block).enumerate().for_each(|(cell, dst)| {
        let (i, j) = ((cell as i64) / n, (cell as i64) % n);
        for (k, value) in dst.iter_mut().enumerate() {
            let [(oi, fx), (oj, fy)] = shifts[k];
            let i0 = (i + oi).rem_euclid(n);
            let i1 = (i0 + 1) % n;
            let j0 = (j + oj).rem_euclid(n);
            let j1 = (j0 + 1) % n;
            let at = |p: i64, q: i64| src[(p * n + q) as usize * block + k];
            *value = (1.0 - fx) * ((1.0 - fy) * at(i0, j0) + fy * at(i0, j1))
                + fx * ((1.0 - fy) * at(i1, j0) + fy * at(i1, j1));
        }
    });
    out
}

/// One step of `∂_t f + v·∇_x f + div_v((u − v) f) = 0` under the frozen
/// field `u`, Strang-split as relax(dt/2), stream(dt), relax(dt/2). Each
/// substep follows its characteristics exactly; in the continuum their
/// composition is `f(t + dt, x, v) = e^{2dt} f(t, X_b, V_b)`.
///
/// Mass scattered outside the velocity box is lost and must stay below
/// `leak_tolerance · mass`.
pub fn sl_vlasov_step(f: &PhaseSpaceGrid, u: &VectorField, dt: f64, leak_tolerance: f64) -> Result<PhaseSpaceGrid> {
    if !(dt > 0.0) {
        return Err(Error::InvalidTimeStep(dt));
    }
    if *f.grid != **u.grid() {
        return Err(Error::GridMismatch);
    }
    let mass = f.mass();
    let (half, leak_a) = relax(f, u, 0.5 * dt);
    let streamed = stream(&half, dt);
    let (out, leak_b) = relax(&streamed, u, 0.5 * dt);
    let leaked = leak_a + leak_b;
    if leaked > leak_tolerance * mass.max(f64::MIN_POSITIVE) {
        return Err(Error::VelocityBoxLeak { mass: leaked });
    }
    Ok(out)
}

/// Midpoint-rule moments `n`, `j`, `e` and the drag `n u − j` with its
/// dissipation `∫∫ |u − v|² f`.
pub fn grid_moments(f: &PhaseSpaceGrid, u: &VectorField) -> Result<MomentFields> {
    if *f.grid != **u.grid() {
        return Err(Error::GridMismatch);
    }
    let grid = f.grid.clone();
    let block = f.nv * f.nv;
    let dv = f.velocity_spacing().powi(2);
    let cells = grid.len();
    let (ux, uy) = (u.x.values(), u.y.values());
    let per_cell: Vec<[f64; 5]> = f
        .values
        .par_chunks(block)
        .enumerate()
        .map(|(cell, chunk)| {
            let mut acc = [0.0; 5];
            for (k, &value) in chunk.iter().enumerate() {
                let v = f.v_node2(k);
                let d = [ux[cell] - v[0], uy[cell] - v[1]];
                acc[0] += value;
                acc[1] += value * v[0];
                acc[2] += value * v[1];
                acc[3] += 0.5 * value * (v[0] * v[0] + v[1] * v[1]);
                acc[4] += value * (d[0] * d[0] + d[1] * d[1]);
            }
            acc.map(|a| a * dv)
        })
        .collect();
    let channel = |c: usize| ScalarField::new(grid.clone(), per_cell.iter().map(|a| a[c]).collect());
    let density = channel(0)?;
    let momentum = VectorField::new(channel(1)?, channel(2)?)?;
    let energy = channel(3)?;
    let drag_dissipation = per_cell.iter().map(|a| a[4]).sum::<f64>() * grid.cell_area();
    debug_assert_eq!(per_cell.len(), cells);
    let brinkman = u.mul_scalar(&density).sub(&momentum);
    Ok(MomentFields {
        density,
        momentum,
        energy,
        brinkman,
        drag_dissipation,
    })
}

/// Relative errors of one moment, normalized by the reference `a`.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct RelativeErrors {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct MomentComparison {
    pub density: RelativeErrors,
    pub momentum: RelativeErrors,
    pub energy: RelativeErrors,
}

fn relative_errors(reference: &[f64], other: &[f64], components: usize) -> RelativeErrors {
    // pointwise Euclidean magnitude over `components` interleaved channels
    let cells = reference.len() / components;
    let mag = |data: &dyn Fn(usize, usize) -> f64, i: usize| {
        (0..components).map(|c| data(c, i).powi(2)).sum::<f64>().sqrt()
    };
    let r = |c: usize, i: usize| reference[c * cells + i];
    let d = |c: usize, i: usize| other[c * cells + i] - reference[c * cells + i];
    let (mut n1, mut d1, mut n2, mut d2, mut ni, mut di) = (0.0, 0.0, 0.0, 0.0, 0.0f64, 0.0f64);
    for i in 0..cells {
        let (a, e) = (mag(&r, i), mag(&d, i));
        n1 += a;
        d1 += e;
        n2 += a * a;
        d2 += e * e;
        ni = ni.max(a);
        di = di.max(e);
    }
    let ratio = |e: f64, a: f64| if a > 0.0 { e / a } else if e == 0.0 { 0.0 } else { f64::INFINITY };
    RelativeErrors {
        l1: ratio(d1, n1),
        l2: ratio(d2.sqrt(), n2.sqrt()),
        linf: ratio(di, ni),
    }
}

/// Relative L¹, L², L∞ differences of `b` from the reference `a`.
pub fn compare_moments(a: &MomentFields, b: &MomentFields) -> Result<MomentComparison> {
    a.density.check_grid(&b.density)?;
    let stack = |v: &VectorField| [v.x.values(), v.y.values()].concat();
    Ok(MomentComparison {
        density: relative_errors(a.density.values(), b.density.values(), 1),
        momentum: relative_errors(&stack(&a.momentum), &stack(&b.momentum), 2),
        energy: relative_errors(a.energy.values(), b.energy.values(), 1),
    })
}

/// Coupled fluid + phase-space-grid run, stepped with the same Heun
/// structure as the particle solver: the drag at the second stage comes from
/// a predictor step of `f` under `u^n`, and `f` is finally advanced under
/// `½(u^n + u^{n+1})`.
#[derive(Clone, Debug)]
pub struct OracleRun {
    pub f: PhaseSpaceGrid,
    pub fluid: FluidState,
    pub leak_tolerance: f64,
}

impl OracleRun {
    pub fn new(f: PhaseSpaceGrid, fluid: FluidState) -> Result<Self> {
        if *f.grid != **fluid.u.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            f,
            fluid,
            leak_tolerance: DEFAULT_LEAK_TOLERANCE,
        })
    }

    pub fn moments(&self) -> Result<MomentFields> {
        grid_moments(&self.f, &self.fluid.u)
    }

    pub fn step(&mut self, dt: f64) -> Result<()> {
        let u0 = self.fluid.u.clone();
        let m0 = grid_moments(&self.f, &u0)?;
        let predictor = sl_vlasov_step(&self.f, &u0, dt, self.leak_tolerance)?;
        let mut stage_one = None;
        let next = integrating_factor_step(&self.fluid, dt, 1.0, |stage, u| {
            let drag = if stage == 0 {
                m0.brinkman.clone()
            } else {
                let m1 = grid_moments(&predictor, u)?;
                let drag = m1.brinkman.clone();
                stage_one = Some(m1);
                drag
            };
            Ok(leray_project(&advection(u).add(&drag).scale(-1.0)))
        })?;
        let u_mid = u0.add(&next.u).scale(0.5);
        self.f = sl_vlasov_step(&self.f, &u_mid, dt, self.leak_tolerance)?;
        self.fluid = next;
        Ok(())
    }

    /// Steps until `t_end`, shortening the last step to land on it.
    pub fn run_until(&mut self, t_end: f64, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidTimeStep(dt));
        }
        while self.fluid.t < t_end - 1e-12 * dt {
            let step = dt.min(t_end - self.fluid.t);
            self.step(step)?;
            if !self.f.values.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical {
                    t: self.fluid.t,
                    what: "non-finite phase-space density".into(),
                });
            }
        }
        Ok(())
    }
}
