//! Explicit monotone finite-difference solver for the obstacle equation
//!
//! ```text
//!     max{ c w - w_t + min_a H^a(t, x, Dw, D^2 w),  w - g } = 0
//!     w(T, .) = g
//! ```
//!
//! marching backward from the horizon. One step evaluates, per control,
//!
//! ```text
//!     cont(a) = exp(-c dt) * (dt f(a) + sum_j p_j(a) w_next(j))
//!     p(+-k)  = dt (sigma_kk^2 / (2 dx_k^2) + max(+-b_k, 0) / dx_k)
//!     p(0)    = 1 - sum_k (p(+k) + p(-k))
//! ```
//!
//! which is algebraically exp(-c dt) (w_next(i) - dt H^a) with H^a built
//! from upwind first differences and central second differences (a unit
//! test pins this identity against the Hamiltonian module). Taking
//! max_a and projecting onto the obstacle, w = min(max_a cont, g),
//! yields a monotone scheme whenever every weight is nonnegative, which
//! is the step bound
//!
//! ```text
//!     dt [ sum_k (sigma_kk^2 / dx_k^2 + |b_k| / dx_k) + c ] <= 1.
//! ```
//!
//! The c term is not needed for weight nonnegativity under exponential
//! discounting, but it is kept in the bound (slightly conservative) and
//! verified at every node; violations are reported, never smoothed
//! over. Boundary values are pinned to g on every slice, so the scheme
//! treats leaving the domain as forced stopping; the domain must be
//! wide enough that this bias stays below the target accuracy (the
//! verification suite checks this by doubling the box).
//!
//! The step count comes from the bound with a safety factor; the first
//! backward interval is shortened so the slice times land exactly on 0.
//! sigma sigma^T must be diagonal (the stencil has no cross terms) and
//! dim <= 2.

use crate::model::{ModelError, ProblemSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HjbError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("solver supports dim <= 2, got {0}")]
    UnsupportedDim(usize),
    #[error("grid needs at least 3 nodes per dimension, got {0}")]
    TooFewNodes(usize),
    #[error("grid bounds are inverted or empty in dimension {dim}: [{lo}, {hi}]")]
    EmptyExtent { dim: usize, lo: f64, hi: f64 },
    #[error("cfl_safety must lie in (0, 1], got {0}")]
    BadSafety(f64),
    #[error(
        "sigma sigma^T is not diagonal at x = {x:?}, control {control}: off-diagonal {max_off}"
    )]
    NonDiagonalDiffusion {
        x: Vec<f64>,
        control: usize,
        max_off: f64,
    },
    #[error(
        "step bound violated at t = {t}, x = {x:?}, control {control}: dt {dt} times load {load} exceeds 1"
    )]
    CflViolation {
        t: f64,
        x: Vec<f64>,
        control: usize,
        dt: f64,
        load: f64,
    },
}

/// Uniform rectangular spatial grid, dim <= 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub nx: Vec<usize>,
}

impl GridGeometry {
    pub fn dx(&self, k: usize) -> f64 {
        (self.x_max[k] - self.x_min[k]) / (self.nx[k] - 1) as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.nx.iter().product()
    }

    pub fn dim(&self) -> usize {
        self.nx.len()
    }

    /// Same box with every cell halved (nx -> 2 nx - 1), so old nodes
    /// are a subset of new ones.
    pub fn refined(&self) -> GridGeometry {
        GridGeometry {
            x_min: self.x_min.clone(),
            x_max: self.x_max.clone(),
            nx: self.nx.iter().map(|&n| 2 * n - 1).collect(),
        }
    }

    pub fn node_x(&self, node: usize, out: &mut [f64]) {
        let mut rem = node;
        for k in (0..self.nx.len()).rev() {
            let i = rem % self.nx[k];
            rem /= self.nx[k];
            out[k] = self.x_min[k] + i as f64 * self.dx(k);
        }
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let mut rem = node;
        for k in (0..self.nx.len()).rev() {
            let i = rem % self.nx[k];
            rem /= self.nx[k];
            if i == 0 || i == self.nx[k] - 1 {
                return true;
            }
        }
        false
    }

    /// Flat index of the nearest node, clamped to the box.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut idx = 0usize;
        for k in 0..self.nx.len() {
            let pos = (x[k] - self.x_min[k]) / self.dx(k);
            let i = pos.round().clamp(0.0, (self.nx[k] - 1) as f64) as usize;
            idx = idx * self.nx[k] + i;
        }
        idx
    }

    fn check(&self, dim: usize) -> Result<(), HjbError> {
        if dim > 2 {
            return Err(HjbError::UnsupportedDim(dim));
        }
        if self.x_min.len() != dim || self.x_max.len() != dim || self.nx.len() != dim {
            return Err(HjbError::EmptyExtent {
                dim,
                lo: f64::NAN,
                hi: f64::NAN,
            });
        }
        for k in 0..dim {
            if !(self.x_max[k] > self.x_min[k]) {
                return Err(HjbError::EmptyExtent {
                    dim: k,
                    lo: self.x_min[k],
                    hi: self.x_max[k],
                });
            }
            if self.nx[k] < 3 {
                return Err(HjbError::TooFewNodes(self.nx[k]));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    /// Fraction of the stability bound actually used, in (0, 1].
    pub cfl_safety: f64,
    /// Slack for flagging the stop region: flagged where w >= g - stop_tol.
    /// The projection writes g bitwise there, so this only widens the
    /// flagged set, never the computed values.
    pub stop_tol: f64,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            cfl_safety: 0.9,
            stop_tol: 1e-10,
        }
    }
}

/// Backward-in-time value table on a space-time grid.
#[derive(Debug)]
pub struct ValueGrid {
    pub geometry: GridGeometry,
    /// Ascending slice times, times[0] = 0 and times[last] = horizon.
    /// All intervals equal dt_nominal except possibly the first.
    pub times: Vec<f64>,
    /// Stopping cost at every node.
    pub g: Vec<f64>,
    /// The uniform step selected by the stability bound.
    pub dt_nominal: f64,
    /// Worst-case load the bound was computed from.
    pub cfl_load: f64,
    pub scheme: SchemeConfig,
    values: Vec<f64>,
    policy: Vec<u32>,
    stop: Vec<bool>,
}

impl ValueGrid {
    pub fn n_slices(&self) -> usize {
        self.times.len()
    }

    pub fn value(&self, slice: usize, node: usize) -> f64 {
        self.values[slice * self.geometry.n_nodes() + node]
    }

    /// Control attaining the max continuation (equivalently the min of
    /// the Hamiltonian candidates), ties to the lowest index. The
    /// terminal slice has no step; it reports 0.
    pub fn policy(&self, slice: usize, node: usize) -> usize {
        self.policy[slice * self.geometry.n_nodes() + node] as usize
    }

    pub fn stop_flag(&self, slice: usize, node: usize) -> bool {
        self.stop[slice * self.geometry.n_nodes() + node]
    }

    /// Index of the latest slice with time <= t (clamped at the ends).
    pub fn slice_at(&self, t: f64) -> usize {
        let upper = self.times.partition_point(|&s| s <= t);
        upper.saturating_sub(1).min(self.times.len() - 1)
    }

    /// Multilinear interpolation in x on the latest slice at or before
    /// t; x is clamped to the box first.
    pub fn value_at(&self, t: f64, x: &[f64]) -> f64 {
        let slice = self.slice_at(t);
        let row =
            &self.values[slice * self.geometry.n_nodes()..(slice + 1) * self.geometry.n_nodes()];
        let d = self.geometry.dim();
        // per-dimension cell index and fraction
        let mut i0 = [0usize; 2];
        let mut frac = [0.0f64; 2];
        for k in 0..d {
            let nk = self.geometry.nx[k];
            let pos =
                ((x[k] - self.geometry.x_min[k]) / self.geometry.dx(k)).clamp(0.0, (nk - 1) as f64);
            let base = (pos.floor() as usize).min(nk - 2);
            i0[k] = base;
            frac[k] = pos - base as f64;
        }
        match d {
            1 => {
                let a = row[i0[0]];
                let b = row[i0[0] + 1];
                a + frac[0] * (b - a)
            }
            _ => {
                let n2 = self.geometry.nx[1];
                let at = |i: usize, j: usize| row[i * n2 + j];
                let w00 = at(i0[0], i0[1]);
                let w01 = at(i0[0], i0[1] + 1);
                let w10 = at(i0[0] + 1, i0[1]);
                let w11 = at(i0[0] + 1, i0[1] + 1);
                let a = w00 + frac[1] * (w01 - w00);
                let b = w10 + frac[1] * (w11 - w10);
                a + frac[0] * (b - a)
            }
        }
    }

    /// Value at t = 0, interpolated.
    pub fn probe(&self, x: &[f64]) -> f64 {
        self.value_at(0.0, x)
    }

    /// Nearest-node policy lookup at the latest slice at or before t.
    pub fn policy_at(&self, t: f64, x: &[f64]) -> usize {
        self.policy(self.slice_at(t), self.geometry.nearest_node(x))
    }

    pub fn stop_at(&self, t: f64, x: &[f64]) -> bool {
        self.stop_flag(self.slice_at(t), self.geometry.nearest_node(x))
    }

    /// max over all slices and nodes of w - g; the projection keeps
    /// this <= 0 exactly.
    pub fn max_over_obstacle(&self) -> f64 {
        let n = self.geometry.n_nodes();
        let mut worst = f64::NEG_INFINITY;
        for slice in 0..self.n_slices() {
            for node in 0..n {
                worst = worst.max(self.value(slice, node) - self.g[node]);
            }
        }
        worst
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Largest uniform dt allowed by the stability bound, scanned over all
/// nodes and controls with coefficients frozen at the horizon, times
/// the safety factor. Every actual step re-verifies the bound with its
/// own slice time, so time-varying coefficients cannot slip through.
pub fn cfl_dt(
    spec: &ProblemSpec,
    geometry: &GridGeometry,
    safety: f64,
) -> Result<(f64, f64), HjbError> {
    if !(safety > 0.0 && safety <= 1.0) {
        return Err(HjbError::BadSafety(safety));
    }
    let d = spec.dim;
    let mut x = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut sigma = vec![0.0; d * d];
    let mut diag = vec![0.0; d];
    let mut worst = 0.0f64;
    for node in 0..geometry.n_nodes() {
        geometry.node_x(node, &mut x);
        let c = spec.discount_at(spec.horizon, &x);
        for ctrl in 0..spec.n_controls() {
            let a = spec.control(ctrl);
            spec.drift_into(spec.horizon, &x, a, &mut b);
            let max_off = spec.diffusion_sq_diag(spec.horizon, &x, a, &mut sigma, &mut diag);
            if max_off > 1e-12 {
                return Err(HjbError::NonDiagonalDiffusion {
                    x: x.clone(),
                    control: ctrl,
                    max_off,
                });
            }
            let mut load = c;
            for k in 0..d {
                let dx = geometry.dx(k);
                load += diag[k] / (dx * dx) + b[k].abs() / dx;
            }
            worst = worst.max(load);
        }
    }
    let dt = if worst > 0.0 {
        (safety / worst).min(spec.horizon)
    } else {
        spec.horizon
    };
    Ok((dt, worst))
}

/// One backward step: fills `w_out` (and the controller argmax) from
/// the slice at `t_next`, verifying diagonality and the step bound at
/// every interior node.
#[allow(clippy::too_many_arguments)]
pub fn step_backward(
    spec: &ProblemSpec,
    geometry: &GridGeometry,
    g: &[f64],
    w_next: &[f64],
    t_next: f64,
    dt: f64,
    w_out: &mut [f64],
    policy_out: &mut [u32],
) -> Result<(), HjbError> {
    let d = spec.dim;
    let nc = spec.n_controls();
    let mut x = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut sigma = vec![0.0; d * d];
    let mut diag = vec![0.0; d];
    let mut strides = vec![0usize; d];
    {
        let mut s = 1usize;
        for k in (0..d).rev() {
            strides[k] = s;
            s *= geometry.nx[k];
        }
    }

    for node in 0..geometry.n_nodes() {
        if geometry.is_boundary(node) {
            w_out[node] = g[node];
            policy_out[node] = 0;
            continue;
        }
        geometry.node_x(node, &mut x);
        let c = spec.discount_at(t_next, &x);
        if !c.is_finite() {
            return Err(ModelError::NonFinite {
                function: "discount",
                t: t_next,
                x: x.clone(),
                control: None,
            }
            .into());
        }
        let disc = (-c * dt).exp();
        let mut best = f64::NEG_INFINITY;
        let mut best_idx = 0u32;
        for ctrl in 0..nc {
            let a = spec.control(ctrl);
            spec.drift_into(t_next, &x, a, &mut b);
            let max_off = spec.diffusion_sq_diag(t_next, &x, a, &mut sigma, &mut diag);
            if max_off > 1e-12 {
                return Err(HjbError::NonDiagonalDiffusion {
                    x: x.clone(),
                    control: ctrl,
                    max_off,
                });
            }
            let f = spec.running_cost_at(t_next, &x, a);
            for v in b.iter().chain(diag.iter()).chain(std::iter::once(&f)) {
                if !v.is_finite() {
                    return Err(ModelError::NonFinite {
                        function: "drift/diffusion/running_cost",
                        t: t_next,
                        x: x.clone(),
                        control: Some(ctrl),
                    }
                    .into());
                }
            }
            let mut load = c;
            for k in 0..d {
                let dx = geometry.dx(k);
                load += diag[k] / (dx * dx) + b[k].abs() / dx;
            }
            if dt * load > 1.0 + 1e-12 {
                return Err(HjbError::CflViolation {
                    t: t_next,
                    x: x.clone(),
                    control: ctrl,
                    dt,
                    load,
                });
            }
            let mut acc = 0.0;
            let mut mass = 0.0;
            for k in 0..d {
                let dx = geometry.dx(k);
                let half = 0.5 * dt * diag[k] / (dx * dx);
                let p_up = half + dt * b[k].max(0.0) / dx;
                let p_dn = half + dt * (-b[k]).max(0.0) / dx;
                acc += p_up * w_next[node + strides[k]] + p_dn * w_next[node - strides[k]];
                mass += p_up + p_dn;
            }
            let p_stay = (1.0 - mass).max(0.0);
            let cont = disc * (dt * f + acc + p_stay * w_next[node]);
            if cont > best {
                best = cont;
                best_idx = ctrl as u32;
            }
        }
        w_out[node] = best.min(g[node]);
        policy_out[node] = best_idx;
    }
    Ok(())
}

/// Full backward solve on a stability-bounded time grid.
pub fn solve(
    spec: &ProblemSpec,
    geometry: &GridGeometry,
    scheme: &SchemeConfig,
) -> Result<ValueGrid, HjbError> {
    spec.check()?;
    geometry.check(spec.dim)?;
    let (dt, cfl_load) = cfl_dt(spec, geometry, scheme.cfl_safety)?;
    let horizon = spec.horizon;

    // slice times from the top so every full interval is exactly dt and
    // the first one absorbs the remainder
    let n_full = (horizon / dt).floor() as usize;
    let rem = horizon - n_full as f64 * dt;
    let shorten = rem > 1e-12 * horizon && n_full > 0;
    let n_slices = n_full + 1 + usize::from(shorten);
    let mut times = vec![0.0; n_slices];
    times[n_slices - 1] = horizon;
    for (back, t) in times.iter_mut().rev().enumerate().skip(1) {
        *t = horizon - back as f64 * dt;
    }
    times[0] = 0.0;

    let n_nodes = geometry.n_nodes();
    let mut g = vec![0.0; n_nodes];
    let mut x = vec![0.0; spec.dim];
    for node in 0..n_nodes {
        geometry.node_x(node, &mut x);
        let gv = spec.terminal_cost_at(&x);
        if !gv.is_finite() {
            return Err(ModelError::NonFinite {
                function: "terminal_cost",
                t: horizon,
                x: x.clone(),
                control: None,
            }
            .into());
        }
        g[node] = gv;
    }

    let mut values = vec![0.0; n_slices * n_nodes];
    let mut policy = vec![0u32; n_slices * n_nodes];
    values[(n_slices - 1) * n_nodes..].copy_from_slice(&g);

    for slice in (0..n_slices - 1).rev() {
        let step_dt = times[slice + 1] - times[slice];
        let (head, tail) = values.split_at_mut((slice + 1) * n_nodes);
        let w_next = &tail[..n_nodes];
        let w_out = &mut head[slice * n_nodes..];
        step_backward(
            spec,
            geometry,
            &g,
            w_next,
            times[slice + 1],
            step_dt,
            w_out,
            &mut policy[slice * n_nodes..(slice + 1) * n_nodes],
        )?;
    }

    let mut stop = vec![false; n_slices * n_nodes];
    for slice in 0..n_slices {
        for node in 0..n_nodes {
            stop[slice * n_nodes + node] =
                values[slice * n_nodes + node] >= g[node] - scheme.stop_tol;
        }
    }

    Ok(ValueGrid {
        geometry: geometry.clone(),
        times,
        g,
        dt_nominal: dt,
        cfl_load,
        scheme: scheme.clone(),
        values,
        policy,
        stop,
    })
}

/// Recomputes every backward step directly from the spec and returns
/// the largest |w - min(g, max_a cont)| over all interior nodes and
/// slices. A faithful solve makes this zero to round-off.
pub fn dpp_residual(spec: &ProblemSpec, grid: &ValueGrid) -> Result<f64, HjbError> {
    let geometry = &grid.geometry;
    let d = spec.dim;
    let nc = spec.n_controls();
    let n_nodes = geometry.n_nodes();
    let mut x = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut sigma = vec![0.0; d * d];
    let mut diag = vec![0.0; d];
    let mut strides = vec![0usize; d];
    {
        let mut s = 1usize;
        for k in (0..d).rev() {
            strides[k] = s;
            s *= geometry.nx[k];
        }
    }
    let mut worst = 0.0f64;
    for slice in 0..grid.n_slices() - 1 {
        let t_next = grid.times[slice + 1];
        let dt = t_next - grid.times[slice];
        for node in 0..n_nodes {
            if geometry.is_boundary(node) {
                continue;
            }
            geometry.node_x(node, &mut x);
            let disc = (-spec.discount_at(t_next, &x) * dt).exp();
            let mut best = f64::NEG_INFINITY;
            for ctrl in 0..nc {
                let a = spec.control(ctrl);
                spec.drift_into(t_next, &x, a, &mut b);
                spec.diffusion_sq_diag(t_next, &x, a, &mut sigma, &mut diag);
                let f = spec.running_cost_at(t_next, &x, a);
                let mut acc = 0.0;
                let mut mass = 0.0;
                for k in 0..d {
                    let dx = geometry.dx(k);
                    let half = 0.5 * dt * diag[k] / (dx * dx);
                    let p_up = half + dt * b[k].max(0.0) / dx;
                    let p_dn = half + dt * (-b[k]).max(0.0) / dx;
                    acc += p_up * grid.value(slice + 1, node + strides[k])
                        + p_dn * grid.value(slice + 1, node - strides[k]);
                    mass += p_up + p_dn;
                }
                let cont =
                    disc * (dt * f + acc + (1.0 - mass).max(0.0) * grid.value(slice + 1, node));
                best = best.max(cont);
            }
            let expect = best.min(grid.g[node]);
            worst = worst.max((grid.value(slice, node) - expect).abs());
        }
    }
    Ok(worst)
}
