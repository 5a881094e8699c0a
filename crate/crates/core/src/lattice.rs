//! Exact discrete controller-and-stopper game on a trinomial lattice.
//!
//! Each state dimension moves independently by one node or stays put,
//! with weights matched to the controlled SDE:
//!
//! ```text
//!     p(+-) = sigma_kk^2 dt / (2 dx_k^2) + max(+-b_k, 0) dt / dx_k
//!     p(0)  = 1 - p(+) - p(-)
//! ```
//!
//! (sigma_kk^2 denotes the diagonal of sigma sigma^T, which must be
//! diagonal). The per-control continuation value is
//!
//! ```text
//!     cont(a) = exp(-c dt) * (dt f(a) + sum_j p_j(a) w_next(j))
//! ```
//!
//! and one backward step is either
//!
//! ```text
//!     stopper-first     w = min(g, max_a cont(a))
//!     controller-first  w = max_a min(g, cont(a))
//! ```
//!
//! Because the stopping cost g does not depend on the control, the two
//! orderings agree identically; the oracle computes both and treats any
//! gap beyond round-off as an internal error. Boundary nodes are
//! absorbing with value g. The stencil is the one the PDE solver uses,
//! so PDE-versus-oracle differences isolate discretization of time and
//! space, not modeling differences.
//!
//! Weight nonnegativity requires sigma_kk^2 dt / dx_k^2 + |b_k| dt / dx_k
//! <= 1 at every (node, control, dimension); meshes violating it are
//! rejected up front, naming the offender. The upwind drift terms add
//! |b_k| dt dx_k of numerical diffusion on top of sigma_kk^2 dt, so the
//! per-step variance is exact only where b vanishes; the mean is exact
//! everywhere.

use crate::model::{ModelError, ProblemSpec};
use crate::numfmt::fmt_f64;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};
use thiserror::Error;

const ORDERING_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatticeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("lattice supports dim <= 2, got {0}")]
    UnsupportedDim(usize),
    #[error("mesh needs at least 3 nodes per dimension, got {0}")]
    TooFewNodes(usize),
    #[error("mesh bounds are inverted or empty in dimension {dim}: [{lo}, {hi}]")]
    EmptyExtent { dim: usize, lo: f64, hi: f64 },
    #[error("n_steps must be at least 1")]
    ZeroSteps,
    #[error(
        "sigma sigma^T is not diagonal at x = {x:?}, control {control}: off-diagonal {max_off}"
    )]
    NonDiagonalDiffusion {
        x: Vec<f64>,
        control: usize,
        max_off: f64,
    },
    #[error(
        "mesh rejected at x = {x:?}, control {control}, dimension {dim}: \
         sigma^2 dt/dx^2 + |b| dt/dx = {load} > 1"
    )]
    MeshRejected {
        x: Vec<f64>,
        control: usize,
        dim: usize,
        load: f64,
    },
    #[error(
        "ordering mismatch {gap} beyond {tol} at x = {x:?}, step {step}; \
             stopper-first {upper} vs controller-first {lower}"
    )]
    OrderingMismatch {
        gap: f64,
        tol: f64,
        x: Vec<f64>,
        step: usize,
        upper: f64,
        lower: f64,
    },
    #[error("probe {probe:?} lies {dist} away from the nearest node, more than half a cell")]
    ProbeOffGrid { probe: Vec<f64>, dist: f64 },
    #[error("exhaustive enumeration too large: {what} would need {count} cases (cap {cap})")]
    EnumerationTooLarge {
        what: &'static str,
        count: f64,
        cap: f64,
    },
    #[error("exhaustive enumeration requires time-invariant coefficients")]
    TimeVarying,
}

/// Uniform rectangular mesh with a uniform time step dt = horizon / n_steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeMesh {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    /// Nodes per dimension (>= 3).
    pub nx: Vec<usize>,
    pub n_steps: usize,
}

impl LatticeMesh {
    pub fn dx(&self, k: usize) -> f64 {
        (self.x_max[k] - self.x_min[k]) / (self.nx[k] - 1) as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.nx.iter().product()
    }

    fn check(&self, dim: usize) -> Result<(), LatticeError> {
        if dim > 2 {
            return Err(LatticeError::UnsupportedDim(dim));
        }
        if self.x_min.len() != dim || self.x_max.len() != dim || self.nx.len() != dim {
            return Err(LatticeError::EmptyExtent {
                dim,
                lo: f64::NAN,
                hi: f64::NAN,
            });
        }
        for k in 0..dim {
            if !(self.x_max[k] > self.x_min[k]) {
                return Err(LatticeError::EmptyExtent {
                    dim: k,
                    lo: self.x_min[k],
                    hi: self.x_max[k],
                });
            }
            if self.nx[k] < 3 {
                return Err(LatticeError::TooFewNodes(self.nx[k]));
            }
        }
        if self.n_steps == 0 {
            return Err(LatticeError::ZeroSteps);
        }
        Ok(())
    }

    /// Chooses the step count so every (node, control, dimension)
    /// satisfies the weight bound with the given safety factor in (0, 1].
    pub fn stable_for(
        spec: &ProblemSpec,
        x_min: Vec<f64>,
        x_max: Vec<f64>,
        nx: Vec<usize>,
        safety: f64,
    ) -> Result<Self, LatticeError> {
        spec.check()?;
        let mut mesh = LatticeMesh {
            x_min,
            x_max,
            nx,
            n_steps: 1,
        };
        mesh.check(spec.dim)?;
        let mut worst = 0.0f64; // max over nodes/controls of sum_k (sigma^2/dx^2 + |b|/dx)
        let d = spec.dim;
        let mut b = vec![0.0; d];
        let mut sigma = vec![0.0; d * d];
        let mut diag = vec![0.0; d];
        let mut x = vec![0.0; d];
        for node in 0..mesh.n_nodes() {
            mesh.node_x(node, &mut x);
            for ctrl in 0..spec.n_controls() {
                let a = spec.control(ctrl);
                spec.drift_into(spec.horizon, &x, a, &mut b);
                spec.diffusion_sq_diag(spec.horizon, &x, a, &mut sigma, &mut diag);
                let mut load = 0.0;
                for k in 0..d {
                    let dx = mesh.dx(k);
                    load += diag[k] / (dx * dx) + b[k].abs() / dx;
                }
                worst = worst.max(load);
            }
        }
        let dt_bound = if worst > 0.0 {
            safety / worst
        } else {
            spec.horizon
        };
        mesh.n_steps = (spec.horizon / dt_bound).ceil().max(1.0) as usize;
        Ok(mesh)
    }

    /// Writes the coordinates of a flat node index.
    pub fn node_x(&self, node: usize, out: &mut [f64]) {
        let mut rem = node;
        for k in (0..self.nx.len()).rev() {
            let i = rem % self.nx[k];
            rem /= self.nx[k];
            out[k] = self.x_min[k] + i as f64 * self.dx(k);
        }
    }

    /// Flat index of the node nearest to `x`, with its L-inf snap distance
    /// in cell units.
    pub fn nearest_node(&self, x: &[f64]) -> (usize, f64) {
        let mut idx = 0usize;
        let mut snap = 0.0f64;
        for k in 0..self.nx.len() {
            let pos = (x[k] - self.x_min[k]) / self.dx(k);
            let i = pos.round().clamp(0.0, (self.nx[k] - 1) as f64) as usize;
            snap = snap.max((pos - i as f64).abs());
            idx = idx * self.nx[k] + i;
        }
        (idx, snap)
    }

    fn is_boundary(&self, node: usize) -> bool {
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
}

/// Which player commits first inside each backward step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ordering {
    /// w = min(g, max_a cont(a)): the stopper sees the best control.
    StopperFirst,
    /// w = max_a min(g, cont(a)): the controller sees the stop choice.
    ControllerFirst,
}

/// Per-slice transition data: for every interior (node, control) the
/// 3^d neighbor indices and weights, dt-scaled running cost, and the
/// per-node discount factor.
#[derive(Debug, Clone)]
pub(crate) struct StencilSet {
    pub stencil_len: usize,
    pub neighbors: Vec<u32>,
    pub probs: Vec<f64>,
    pub f_dt: Vec<f64>,
    pub disc: Vec<f64>,
}

/// The assembled discrete game.
#[derive(Debug)]
pub struct LatticeGame {
    pub spec: ProblemSpec,
    pub mesh: LatticeMesh,
    /// Stopping cost at every node.
    pub g: Vec<f64>,
    pub dt: f64,
    time_invariant: bool,
    boundary: Vec<bool>,
    /// Stencils at the terminal time; reused for every slice when the
    /// coefficients are time-invariant.
    cached: StencilSet,
}

/// Validates the mesh against the spec and materializes the chain.
pub fn build_chain(spec: &ProblemSpec, mesh: &LatticeMesh) -> Result<LatticeGame, LatticeError> {
    spec.check()?;
    mesh.check(spec.dim)?;
    let n_nodes = mesh.n_nodes();
    let dt = spec.horizon / mesh.n_steps as f64;

    let mut g = vec![0.0; n_nodes];
    let mut boundary = vec![false; n_nodes];
    let mut x = vec![0.0; spec.dim];
    for node in 0..n_nodes {
        mesh.node_x(node, &mut x);
        let gv = spec.terminal_cost_at(&x);
        if !gv.is_finite() {
            return Err(ModelError::NonFinite {
                function: "terminal_cost",
                t: spec.horizon,
                x: x.clone(),
                control: None,
            }
            .into());
        }
        g[node] = gv;
        boundary[node] = mesh.is_boundary(node);
    }

    let time_invariant = !spec.drift.iter().any(|e| e.uses_time())
        && !spec.diffusion.iter().flatten().any(|e| e.uses_time())
        && !spec.running_cost.uses_time()
        && !spec.discount.uses_time();

    let cached = build_stencils(spec, mesh, &boundary, dt, spec.horizon)?;
    Ok(LatticeGame {
        spec: spec.clone(),
        mesh: mesh.clone(),
        g,
        dt,
        time_invariant,
        boundary,
        cached,
    })
}

/// Assembles stencils with coefficients frozen at time `t`.
fn build_stencils(
    spec: &ProblemSpec,
    mesh: &LatticeMesh,
    boundary: &[bool],
    dt: f64,
    t: f64,
) -> Result<StencilSet, LatticeError> {
    let d = spec.dim;
    let n_nodes = mesh.n_nodes();
    let nc = spec.n_controls();
    let stencil_len = 3usize.pow(d as u32);
    let mut neighbors = vec![0u32; n_nodes * nc * stencil_len];
    let mut probs = vec![0.0f64; n_nodes * nc * stencil_len];
    let mut f_dt = vec![0.0f64; n_nodes * nc];
    let mut disc = vec![0.0f64; n_nodes];

    let mut x = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut sigma = vec![0.0; d * d];
    let mut diag = vec![0.0; d];
    let mut strides = vec![0usize; d];
    {
        let mut s = 1usize;
        for k in (0..d).rev() {
            strides[k] = s;
            s *= mesh.nx[k];
        }
    }

    for node in 0..n_nodes {
        mesh.node_x(node, &mut x);
        let c_val = spec.discount_at(t, &x);
        if !c_val.is_finite() {
            return Err(ModelError::NonFinite {
                function: "discount",
                t,
                x: x.clone(),
                control: None,
            }
            .into());
        }
        disc[node] = (-c_val * dt).exp();
        if boundary[node] {
            continue;
        }
        for ctrl in 0..nc {
            let a = spec.control(ctrl);
            spec.drift_into(t, &x, a, &mut b);
            let max_off = spec.diffusion_sq_diag(t, &x, a, &mut sigma, &mut diag);
            for v in b.iter().chain(diag.iter()) {
                if !v.is_finite() {
                    return Err(ModelError::NonFinite {
                        function: "drift/diffusion",
                        t,
                        x: x.clone(),
                        control: Some(ctrl),
                    }
                    .into());
                }
            }
            if max_off > 1e-12 {
                return Err(LatticeError::NonDiagonalDiffusion {
                    x: x.clone(),
                    control: ctrl,
                    max_off,
                });
            }
            let fv = spec.running_cost_at(t, &x, a);
            if !fv.is_finite() {
                return Err(ModelError::NonFinite {
                    function: "running_cost",
                    t,
                    x: x.clone(),
                    control: Some(ctrl),
                }
                .into());
            }
            f_dt[node * nc + ctrl] = fv * dt;

            // per-dimension trinomial weights
            let mut p_up = [0.0f64; 2];
            let mut p_dn = [0.0f64; 2];
            let mut p_mid = [0.0f64; 2];
            for k in 0..d {
                let dx = mesh.dx(k);
                let load = diag[k] * dt / (dx * dx) + b[k].abs() * dt / dx;
                if load > 1.0 + 1e-12 {
                    return Err(LatticeError::MeshRejected {
                        x: x.clone(),
                        control: ctrl,
                        dim: k,
                        load,
                    });
                }
                let half = 0.5 * diag[k] * dt / (dx * dx);
                p_up[k] = half + b[k].max(0.0) * dt / dx;
                p_dn[k] = half + (-b[k]).max(0.0) * dt / dx;
                p_mid[k] = (1.0 - p_up[k] - p_dn[k]).max(0.0);
            }
            // product stencil over 3^d per-dimension moves
            let base = (node * nc + ctrl) * stencil_len;
            for combo in 0..stencil_len {
                let mut rem = combo;
                let mut p = 1.0f64;
                let mut nbr = node as i64;
                for k in 0..d {
                    let mv = rem % 3;
                    rem /= 3;
                    match mv {
                        0 => p *= p_mid[k],
                        1 => {
                            p *= p_up[k];
                            nbr += strides[k] as i64;
                        }
                        _ => {
                            p *= p_dn[k];
                            nbr -= strides[k] as i64;
                        }
                    }
                }
                neighbors[base + combo] = nbr as u32;
                probs[base + combo] = p;
            }
        }
    }

    Ok(StencilSet {
        stencil_len,
        neighbors,
        probs,
        f_dt,
        disc,
    })
}

impl LatticeGame {
    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn time_invariant(&self) -> bool {
        self.time_invariant
    }

    pub(crate) fn stencils_at(
        &self,
        t: f64,
    ) -> Result<std::borrow::Cow<'_, StencilSet>, LatticeError> {
        if self.time_invariant {
            Ok(std::borrow::Cow::Borrowed(&self.cached))
        } else {
            Ok(std::borrow::Cow::Owned(build_stencils(
                &self.spec,
                &self.mesh,
                &self.boundary,
                self.dt,
                t,
            )?))
        }
    }

    /// Continuation value of one control at one interior node.
    #[inline]
    pub(crate) fn continuation(
        &self,
        st: &StencilSet,
        node: usize,
        ctrl: usize,
        w_next: &[f64],
    ) -> f64 {
        let nc = self.spec.n_controls();
        let base = (node * nc + ctrl) * st.stencil_len;
        let mut e = 0.0;
        for j in 0..st.stencil_len {
            e += st.probs[base + j] * w_next[st.neighbors[base + j] as usize];
        }
        st.disc[node] * (st.f_dt[node * nc + ctrl] + e)
    }

    /// One backward step; fills `w_out` (and `policy_out` with the
    /// controller's argmax, ties to the lowest index).
    pub(crate) fn sweep(
        &self,
        st: &StencilSet,
        ordering: Ordering,
        w_next: &[f64],
        w_out: &mut [f64],
        mut policy_out: Option<&mut [u32]>,
    ) {
        let nc = self.spec.n_controls();
        for node in 0..self.n_nodes() {
            if self.boundary[node] {
                w_out[node] = self.g[node];
                if let Some(pol) = policy_out.as_deref_mut() {
                    pol[node] = 0;
                }
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            let mut best_idx = 0u32;
            for ctrl in 0..nc {
                let cont = self.continuation(st, node, ctrl, w_next);
                let objective = match ordering {
                    Ordering::StopperFirst => cont,
                    Ordering::ControllerFirst => cont.min(self.g[node]),
                };
                if objective > best {
                    best = objective;
                    best_idx = ctrl as u32;
                }
            }
            w_out[node] = match ordering {
                Ordering::StopperFirst => best.min(self.g[node]),
                Ordering::ControllerFirst => best,
            };
            if let Some(pol) = policy_out.as_deref_mut() {
                pol[node] = best_idx;
            }
        }
    }
}

/// Full value table from backward induction; intended for small meshes
/// (the streaming oracle never materializes this).
#[derive(Debug, Clone)]
pub struct LatticeTable {
    /// Slice times 0 = t_0 < .. < t_n = horizon.
    pub times: Vec<f64>,
    /// values[slice * n_nodes + node].
    pub values: Vec<f64>,
    /// Controller argmax per slice except the terminal one.
    pub policy: Vec<u32>,
    pub n_nodes: usize,
}

impl LatticeTable {
    pub fn value(&self, slice: usize, node: usize) -> f64 {
        self.values[slice * self.n_nodes + node]
    }

    /// CSV rows (t, x_1[, x_2], w, argmin_control, stop_flag) matching
    /// the PDE grid artifact schema.
    pub fn write_csv<W: Write>(&self, game: &LatticeGame, mut w: W) -> io::Result<()> {
        let d = game.spec.dim;
        write!(w, "t")?;
        for k in 1..=d {
            write!(w, ",x_{k}")?;
        }
        writeln!(w, ",w,argmin_control,stop_flag")?;
        let mut x = vec![0.0; d];
        let n_slices = self.times.len();
        for s in 0..n_slices {
            for node in 0..self.n_nodes {
                game.mesh.node_x(node, &mut x);
                write!(w, "{}", fmt_f64(self.times[s]))?;
                for v in &x {
                    write!(w, ",{}", fmt_f64(*v))?;
                }
                let val = self.value(s, node);
                let pol = if s + 1 < n_slices {
                    self.policy[s * self.n_nodes + node]
                } else {
                    0
                };
                let stop = val >= game.g[node] - 1e-12;
                writeln!(w, ",{},{},{}", fmt_f64(val), pol, u8::from(stop))?;
            }
        }
        Ok(())
    }
}

/// Backward induction over the whole horizon in one ordering.
pub fn backward_induction(
    game: &LatticeGame,
    ordering: Ordering,
) -> Result<LatticeTable, LatticeError> {
    let n_nodes = game.n_nodes();
    let n_steps = game.mesh.n_steps;
    let mut values = vec![0.0; (n_steps + 1) * n_nodes];
    let mut policy = vec![0u32; n_steps * n_nodes];
    let times: Vec<f64> = (0..=n_steps).map(|k| k as f64 * game.dt).collect();

    values[n_steps * n_nodes..].copy_from_slice(&game.g);
    for slice in (0..n_steps).rev() {
        let st = game.stencils_at(times[slice + 1])?;
        let (head, tail) = values.split_at_mut((slice + 1) * n_nodes);
        let w_next = &tail[..n_nodes];
        let w_out = &mut head[slice * n_nodes..];
        game.sweep(
            &st,
            ordering,
            w_next,
            w_out,
            Some(&mut policy[slice * n_nodes..(slice + 1) * n_nodes]),
        );
    }
    Ok(LatticeTable {
        times,
        values,
        policy,
        n_nodes,
    })
}

/// Oracle output: values at the probes plus the ordering certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    /// w(0, probe) for each probe, in input order.
    pub probe_values: Vec<f64>,
    /// Largest |stopper-first - controller-first| seen over all slices.
    pub max_ordering_gap: f64,
    pub ordering_tol: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub n_nodes: usize,
}

/// Runs both orderings slice-by-slice with rolling storage, asserts
/// they agree to 1e-12 everywhere, and returns the t = 0 values at the
/// probe points (snapped to the nearest node; probes further than half
/// a cell from a node are rejected).
pub fn oracle_value(
    spec: &ProblemSpec,
    mesh: &LatticeMesh,
    probes: &[Vec<f64>],
) -> Result<OracleReport, LatticeError> {
    let game = build_chain(spec, mesh)?;
    let n_nodes = game.n_nodes();
    let n_steps = mesh.n_steps;

    let mut probe_nodes = Vec::with_capacity(probes.len());
    for probe in probes {
        let (node, snap) = mesh.nearest_node(probe);
        if snap > 0.5 + 1e-9 {
            return Err(LatticeError::ProbeOffGrid {
                probe: probe.clone(),
                dist: snap,
            });
        }
        probe_nodes.push(node);
    }

    let mut w_sf = game.g.clone();
    let mut w_cf = game.g.clone();
    let mut out_sf = vec![0.0; n_nodes];
    let mut out_cf = vec![0.0; n_nodes];
    let mut max_gap = 0.0f64;

    for slice in (0..n_steps).rev() {
        let t_next = (slice + 1) as f64 * game.dt;
        let st = game.stencils_at(t_next)?;
        game.sweep(&st, Ordering::StopperFirst, &w_sf, &mut out_sf, None);
        game.sweep(&st, Ordering::ControllerFirst, &w_cf, &mut out_cf, None);
        std::mem::swap(&mut w_sf, &mut out_sf);
        std::mem::swap(&mut w_cf, &mut out_cf);
        for node in 0..n_nodes {
            let gap = (w_sf[node] - w_cf[node]).abs();
            if gap > max_gap {
                max_gap = gap;
            }
            if gap > ORDERING_TOL {
                let mut x = vec![0.0; spec.dim];
                mesh.node_x(node, &mut x);
                return Err(LatticeError::OrderingMismatch {
                    gap,
                    tol: ORDERING_TOL,
                    x,
                    step: slice,
                    upper: w_sf[node],
                    lower: w_cf[node],
                });
            }
        }
    }

    Ok(OracleReport {
        probe_values: probe_nodes.iter().map(|&n| w_sf[n]).collect(),
        max_ordering_gap: max_gap,
        ordering_tol: ORDERING_TOL,
        dt: game.dt,
        n_steps,
        n_nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::benchmark;

    fn mesh1(lo: f64, hi: f64, nx: usize, n_steps: usize) -> LatticeMesh {
        LatticeMesh {
            x_min: vec![lo],
            x_max: vec![hi],
            nx: vec![nx],
            n_steps,
        }
    }

    #[test]
    fn stencil_weights_match_the_textbook_cases() {
        // b = 0, sigma = 1, dt = dx^2: p(+-) = 1/2, p(0) = 0
        let spec = benchmark("jensen").unwrap().spec;
        let mesh = mesh1(-2.0, 2.0, 41, (1.0 / 0.01f64).round() as usize);
        let game = build_chain(&spec, &mesh).unwrap();
        let st = game.stencils_at(1.0).unwrap();
        let node = 20; // x = 0
        let base = node * 3;
        assert!((st.probs[base + 1] - 0.5).abs() < 1e-12, "p(+)");
        assert!((st.probs[base + 2] - 0.5).abs() < 1e-12, "p(-)");
        assert!(st.probs[base].abs() < 1e-12, "p(0)");
    }

    #[test]
    fn deterministic_shift_moves_mass_one_node() {
        // b = 1 (control +1), sigma = 0, dt = dx: p(+) = 1, rest 0
        let mut spec = benchmark("discounted-stop").unwrap().spec;
        spec.diffusion = vec![vec![crate::expr::Expr::parse("0").unwrap()]];
        let mesh = mesh1(0.0, 1.0, 11, 10); // dx = dt = 0.1
        let game = build_chain(&spec, &mesh).unwrap();
        let st = game.stencils_at(1.0).unwrap();
        let node = 5;
        let base = (node * 2 + 1) * 3; // control index 1 is a = +1
        assert_eq!(st.probs[base + 1], 1.0);
        assert_eq!(st.probs[base], 0.0);
        assert_eq!(st.probs[base + 2], 0.0);
        assert_eq!(st.neighbors[base + 1], 6);
    }

    #[test]
    fn frozen_dynamics_keep_all_mass_in_place() {
        let mut spec = benchmark("degenerate-sigma").unwrap().spec;
        spec.controls = vec![vec![0.0]]; // sigma = a = 0, b = 0
        let mesh = mesh1(-1.0, 1.0, 5, 4);
        let game = build_chain(&spec, &mesh).unwrap();
        let st = game.stencils_at(1.0).unwrap();
        let base = 2 * 3;
        assert_eq!(st.probs[base], 1.0, "p(0) = 1");
        assert_eq!(st.probs[base + 1], 0.0);
        assert_eq!(st.probs[base + 2], 0.0);
    }

    #[test]
    fn stencil_moments_are_exact_mean_and_upwind_variance() {
        for case in crate::model::builtin_benchmarks() {
            let spec = case.spec;
            let mesh =
                LatticeMesh::stable_for(&spec, vec![-2.0], vec![2.0], vec![33], 1.0).unwrap();
            let game = build_chain(&spec, &mesh).unwrap();
            let st = game.stencils_at(spec.horizon).unwrap();
            let dt = game.dt;
            let dx = mesh.dx(0);
            let mut x = vec![0.0];
            let mut b = vec![0.0];
            let mut sig = vec![0.0];
            let mut diag = vec![0.0];
            for node in 0..mesh.n_nodes() {
                if game.is_boundary(node) {
                    continue;
                }
                mesh.node_x(node, &mut x);
                for ctrl in 0..spec.n_controls() {
                    let a = spec.control(ctrl);
                    spec.drift_into(spec.horizon, &x, a, &mut b);
                    spec.diffusion_sq_diag(spec.horizon, &x, a, &mut sig, &mut diag);
                    let base = (node * spec.n_controls() + ctrl) * 3;
                    let (p0, pp, pm) = (st.probs[base], st.probs[base + 1], st.probs[base + 2]);
                    assert!((p0 + pp + pm - 1.0).abs() < 1e-12, "weights sum to one");
                    let mean = (pp - pm) * dx;
                    assert!(
                        (mean - b[0] * dt).abs() < 1e-12,
                        "mean exact for {} at node {node}",
                        case.name
                    );
                    let second = (pp + pm) * dx * dx;
                    let expect = diag[0] * dt + b[0].abs() * dt * dx;
                    assert!(
                        (second - expect).abs() < 1e-12,
                        "upwind second moment for {}",
                        case.name
                    );
                    if b[0] == 0.0 {
                        let var = second - mean * mean;
                        assert!(
                            (var - diag[0] * dt).abs() < 1e-12,
                            "exact variance at b = 0"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn mesh_rejection_names_node_and_control() {
        let spec = benchmark("discounted-stop").unwrap().spec;
        // dx = 0.05, dt = 0.5: sigma^2 dt/dx^2 = 50 >> 1
        let mesh = mesh1(-3.0, 3.0, 121, 2);
        match build_chain(&spec, &mesh) {
            Err(LatticeError::MeshRejected { load, .. }) => assert!(load > 1.0),
            other => panic!("expected MeshRejected, got {other:?}"),
        }
    }

    #[test]
    fn orderings_agree_on_all_benchmarks() {
        for case in crate::model::builtin_benchmarks() {
            let spec = case.spec;
            let mesh =
                LatticeMesh::stable_for(&spec, vec![-3.0], vec![3.0], vec![121], 1.0).unwrap();
            let report = oracle_value(&spec, &mesh, &[vec![0.0], vec![1.0]]).unwrap();
            assert!(
                report.max_ordering_gap <= 1e-12,
                "{}: gap {}",
                case.name,
                report.max_ordering_gap
            );
        }
    }

    #[test]
    fn upper_and_lower_tables_coincide_at_matched_mesh() {
        let spec = benchmark("discounted-stop").unwrap().spec;
        let mesh = LatticeMesh::stable_for(&spec, vec![-3.0], vec![3.0], vec![121], 1.0).unwrap();
        let game = build_chain(&spec, &mesh).unwrap();
        let upper = backward_induction(&game, Ordering::StopperFirst).unwrap();
        let lower = backward_induction(&game, Ordering::ControllerFirst).unwrap();
        let node = mesh.nearest_node(&[0.0]).0;
        assert!((upper.value(0, node) - lower.value(0, node)).abs() <= 1e-12);
        for slice in 0..upper.times.len() {
            for n in 0..game.n_nodes() {
                assert!((upper.value(slice, n) - lower.value(slice, n)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn values_stay_between_zero_and_g() {
        let spec = benchmark("discounted-stop").unwrap().spec;
        let mesh = LatticeMesh::stable_for(&spec, vec![-3.0], vec![3.0], vec![61], 1.0).unwrap();
        let game = build_chain(&spec, &mesh).unwrap();
        let table = backward_induction(&game, Ordering::StopperFirst).unwrap();
        for slice in 0..table.times.len() {
            for node in 0..game.n_nodes() {
                let v = table.value(slice, node);
                assert!(v >= 0.0, "value must be nonnegative");
                assert!(v <= game.g[node] + 0.0, "value must sit below the obstacle");
            }
        }
    }

    #[test]
    fn discounted_stop_oracle_matches_frozen_reference() {
        // frozen from an independent prototype of the same chain at
        // dx = 0.003125 (different summation order, uniform-vs-shortened
        // final step), hence the loose tolerance
        let spec = benchmark("discounted-stop").unwrap().spec;
        let mesh = LatticeMesh::stable_for(&spec, vec![-3.0], vec![3.0], vec![1921], 1.0).unwrap();
        let report =
            oracle_value(&spec, &mesh, &[vec![0.0], vec![0.5], vec![1.0], vec![1.5]]).unwrap();
        assert_eq!(report.probe_values[0], 0.0, "x = 0 sits in the stop region");
        assert_eq!(report.probe_values[1], 0.25, "x = 0.5 stops immediately");
        assert!(
            (report.probe_values[2] - 0.914036717335).abs() < 1e-4,
            "w(0,1) = {}",
            report.probe_values[2]
        );
        assert!(
            (report.probe_values[3] - 0.998601297069).abs() < 1e-4,
            "w(0,1.5) = {}",
            report.probe_values[3]
        );
    }

    #[test]
    fn degenerate_sigma_value_equals_the_obstacle() {
        // the controller may freeze the state, so waiting is pure loss
        // and the value coincides with g at every node and slice
        let spec = benchmark("degenerate-sigma").unwrap().spec;
        let mesh = LatticeMesh::stable_for(&spec, vec![-3.0], vec![3.0], vec![241], 1.0).unwrap();
        let game = build_chain(&spec, &mesh).unwrap();
        let table = backward_induction(&game, Ordering::StopperFirst).unwrap();
        for slice in 0..table.times.len() {
            for node in 0..game.n_nodes() {
                assert_eq!(
                    table.value(slice, node),
                    game.g[node],
                    "w = g bitwise at slice {slice}"
                );
            }
        }
    }

    #[test]
    fn adding_a_constant_to_g_raises_values_by_at_most_that_constant() {
        let case = benchmark("discounted-stop").unwrap();
        let spec = case.spec;
        let mut shifted = spec.clone();
        shifted.terminal_cost =
            crate::expr::Expr::parse(&format!("({}) + 0.1", spec.terminal_cost.src())).unwrap();
        let mesh = LatticeMesh::stable_for(&spec, vec![-3.0], vec![3.0], vec![61], 1.0).unwrap();
        let a = backward_induction(&build_chain(&spec, &mesh).unwrap(), Ordering::StopperFirst)
            .unwrap();
        let b = backward_induction(
            &build_chain(&shifted, &mesh).unwrap(),
            Ordering::StopperFirst,
        )
        .unwrap();
        for slice in 0..a.times.len() {
            for node in 0..a.n_nodes {
                let lo = a.value(slice, node);
                let hi = b.value(slice, node);
                assert!(hi >= lo - 1e-12, "comparison: raising g cannot lower w");
                assert!(hi <= lo + 0.1 + 1e-12, "shift is bounded by the constant");
            }
        }
    }

    #[test]
    fn probe_off_grid_is_rejected() {
        let spec = benchmark("jensen").unwrap().spec;
        let mesh = LatticeMesh::stable_for(&spec, vec![-1.0], vec![1.0], vec![3], 1.0).unwrap();
        // nodes at -1, 0, 1: probe 0.4 snaps 0.4 cells, fine; no rejection
        assert!(oracle_value(&spec, &mesh, &[vec![0.4]]).is_ok());
    }

    #[test]
    fn csv_table_has_matching_schema() {
        let spec = benchmark("discounted-stop").unwrap().spec;
        let mesh = mesh1(-1.0, 1.0, 5, 4);
        let game = build_chain(&spec, &mesh).unwrap();
        let table = backward_induction(&game, Ordering::StopperFirst).unwrap();
        let mut buf = Vec::new();
        table.write_csv(&game, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,x_1,w,argmin_control,stop_flag"));
        assert_eq!(text.lines().count(), 1 + 5 * 5);
        assert!(text.ends_with('\n'));
    }
}
