//! Controlled-path simulation in Mayer form.
//!
//! The simulated triple (X, Y, Z) carries the discount factor and the
//! accrued running cost alongside the state:
//!
//! ```text
//!     X_{k+1} = X_k + b(t_k, X_k, a_k) dt + sigma(t_k, X_k, a_k) dW_k
//!     Y_{k+1} = Y_k exp(-c(t_k, X_k) dt)          (exact integrator)
//!     Z_{k+1} = Z_k + Y_k f(t_k, X_k, a_k) dt     (left endpoint)
//! ```
//!
//! so the cost of stopping at step k is the plain function
//! F = Z_k + Y_k g(X_k), with no integral left to approximate.
//!
//! Gaussian increments come from a counter-based stream: a ChaCha12
//! generator keyed by (seed, path, step). Any path's increments are
//! addressable without sequencing, which makes path-parallel runs
//! reproducible at every thread count and lets a restarted simulation
//! replay the exact tail of an earlier one (the discrete flow property).

use crate::model::{ModelError, ProblemSpec};
use crate::numfmt::fmt_f64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::io::{self, Write};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("start state has {got} coordinate(s), spec dim = {expected}")]
    StartDim { got: usize, expected: usize },
    #[error("start_time {start} must lie in [0, {horizon})")]
    BadStartTime { start: f64, horizon: f64 },
    #[error("n_steps must be at least 1")]
    ZeroSteps,
    #[error("n_paths must be at least 1")]
    ZeroPaths,
    #[error("policy returned control index {idx}, but the spec has {n} controls (path {path}, step {step})")]
    BadControlIndex {
        idx: usize,
        n: usize,
        path: usize,
        step: usize,
    },
    #[error("non-finite state at path {path}, step {step}: x = {x:?}, y = {y}, z = {z}")]
    NonFiniteState {
        path: usize,
        step: usize,
        x: Vec<f64>,
        y: f64,
        z: f64,
    },
    #[error("stop index {idx} out of range for path {path} ({n_steps} steps)")]
    StopIndexOutOfRange {
        idx: usize,
        path: usize,
        n_steps: usize,
    },
}

/// Mayer-form state: plain state x plus discount factor y and accrued
/// discounted running cost z.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub x: Vec<f64>,
    pub y: f64,
    pub z: f64,
}

impl AugmentedState {
    /// (x, 1, 0): the start of an unweighted evaluation.
    pub fn plain(x: Vec<f64>) -> Self {
        Self { x, y: 1.0, z: 0.0 }
    }
}

/// Chooses the control applied on [t_k, t_{k+1}).
///
/// `step` is the global step index (offset included on restarts), and
/// `prior` holds the control indices this path used on earlier steps, so
/// a policy can only look backward.
pub trait ControlPolicy: Sync {
    fn select(&self, path: usize, step: usize, t: f64, x: &[f64], prior: &[u32]) -> usize;
}

/// Applies one fixed control index forever.
pub struct ConstantControl(pub usize);

impl ControlPolicy for ConstantControl {
    fn select(&self, _path: usize, _step: usize, _t: f64, _x: &[f64], _prior: &[u32]) -> usize {
        self.0
    }
}

/// Uniform control per (path, step), derived by hashing; deterministic
/// and independent of evaluation order.
pub struct RandomControl {
    pub seed: u64,
    pub n_controls: usize,
}

impl ControlPolicy for RandomControl {
    fn select(&self, path: usize, step: usize, _t: f64, _x: &[f64], _prior: &[u32]) -> usize {
        (mix64(self.seed, path as u64, step as u64) % self.n_controls as u64) as usize
    }
}

/// SplitMix-style avalanche over (seed, path, step).
fn mix64(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(b)
        .wrapping_mul(0xbf58476d1ce4e5b9)
        .wrapping_add(c);
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58476d1ce4e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

const GAUSSIAN_DOMAIN: u64 = 0x7374_6f70_6761_6d65; // "stopgame"

/// Counter-based generator for the Gaussian increments of (path, step).
pub fn step_rng(seed: u64, path: u64, step: u64) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&path.to_le_bytes());
    key[16..24].copy_from_slice(&step.to_le_bytes());
    key[24..32].copy_from_slice(&GAUSSIAN_DOMAIN.to_le_bytes());
    ChaCha12Rng::from_seed(key)
}

/// Standard normal draws for one (path, step); `out.len()` is the state
/// dimension.
pub fn gaussian_increments(seed: u64, path: u64, step: u64, out: &mut [f64]) {
    let mut rng = step_rng(seed, path, step);
    for v in out.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
}

/// All simulated paths on one time grid, stored flat.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub dim: usize,
    pub n_paths: usize,
    /// t_0 .. t_{n_steps}; uniform spacing.
    pub times: Vec<f64>,
    pub seed: u64,
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    controls: Vec<u32>,
}

impl PathBundle {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    #[inline]
    pub fn x(&self, path: usize, step: usize) -> &[f64] {
        let w = self.times.len() * self.dim;
        let base = path * w + step * self.dim;
        &self.x[base..base + self.dim]
    }

    #[inline]
    pub fn y(&self, path: usize, step: usize) -> f64 {
        self.y[path * self.times.len() + step]
    }

    #[inline]
    pub fn z(&self, path: usize, step: usize) -> f64 {
        self.z[path * self.times.len() + step]
    }

    /// Control index applied on [t_step, t_{step+1}).
    #[inline]
    pub fn control(&self, path: usize, step: usize) -> usize {
        self.controls[path * self.n_steps() + step] as usize
    }

    pub fn state(&self, path: usize, step: usize) -> AugmentedState {
        AugmentedState {
            x: self.x(path, step).to_vec(),
            y: self.y(path, step),
            z: self.z(path, step),
        }
    }

    /// Path dump: one row per (path, step) with columns
    /// path, step, t, x_1..x_d, y, z, control_index (empty at the final
    /// step, which applies no control).
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "path,step,t")?;
        for k in 1..=self.dim {
            write!(w, ",x_{k}")?;
        }
        writeln!(w, ",y,z,control_index")?;
        for p in 0..self.n_paths {
            for s in 0..self.times.len() {
                write!(w, "{p},{s},{}", fmt_f64(self.times[s]))?;
                for k in 0..self.dim {
                    write!(w, ",{}", fmt_f64(self.x(p, s)[k]))?;
                }
                write!(w, ",{},{}", fmt_f64(self.y(p, s)), fmt_f64(self.z(p, s)))?;
                if s < self.n_steps() {
                    writeln!(w, ",{}", self.control(p, s))?;
                } else {
                    writeln!(w, ",")?;
                }
            }
        }
        Ok(())
    }
}

/// One Euler step of the Mayer triple; `dw` holds the unscaled standard
/// normals for this step. Buffers `b` (dim) and `sigma` (dim^2) are
/// caller scratch.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn advance(
    spec: &ProblemSpec,
    t: f64,
    dt: f64,
    x: &mut [f64],
    y: &mut f64,
    z: &mut f64,
    control_idx: usize,
    dw: &[f64],
    b: &mut [f64],
    sigma: &mut [f64],
    x_next: &mut [f64],
) {
    let d = spec.dim;
    let a = spec.control(control_idx);
    spec.drift_into(t, x, a, b);
    spec.diffusion_into(t, x, a, sigma);
    let sq = dt.sqrt();
    for r in 0..d {
        let mut noise = 0.0;
        for c in 0..d {
            noise += sigma[r * d + c] * dw[c];
        }
        x_next[r] = x[r] + b[r] * dt + sq * noise;
    }
    let f_val = spec.running_cost_at(t, x, a);
    let c_val = spec.discount_at(t, x);
    *z += *y * f_val * dt;
    *y *= (-c_val * dt).exp();
    x.copy_from_slice(x_next);
}

/// Euler-Maruyama simulation from `start` at `start_time` to the
/// horizon in `n_steps` uniform steps.
pub fn simulate(
    spec: &ProblemSpec,
    start_time: f64,
    start: &AugmentedState,
    policy: &dyn ControlPolicy,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathBundle, SimError> {
    simulate_with_step_offset(spec, start_time, start, policy, n_paths, n_steps, seed, 0)
}

/// Like [`simulate`], but Gaussian increments and policy queries use
/// global step indices `step_offset ..`. Restarting a simulation from
/// step k of an earlier run with `step_offset = k` replays the exact
/// tail of that run.
#[allow(clippy::too_many_arguments)]
pub fn simulate_with_step_offset(
    spec: &ProblemSpec,
    start_time: f64,
    start: &AugmentedState,
    policy: &dyn ControlPolicy,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    step_offset: usize,
) -> Result<PathBundle, SimError> {
    spec.check()?;
    if start.x.len() != spec.dim {
        return Err(SimError::StartDim {
            got: start.x.len(),
            expected: spec.dim,
        });
    }
    if !(start_time >= 0.0 && start_time < spec.horizon) {
        return Err(SimError::BadStartTime {
            start: start_time,
            horizon: spec.horizon,
        });
    }
    if n_steps == 0 {
        return Err(SimError::ZeroSteps);
    }
    if n_paths == 0 {
        return Err(SimError::ZeroPaths);
    }

    let d = spec.dim;
    let dt = (spec.horizon - start_time) / n_steps as f64;
    let times: Vec<f64> = (0..=n_steps).map(|k| start_time + k as f64 * dt).collect();

    let slots = n_steps + 1;
    let mut x = vec![0.0f64; n_paths * slots * d];
    let mut y = vec![0.0f64; n_paths * slots];
    let mut z = vec![0.0f64; n_paths * slots];
    let mut controls = vec![0u32; n_paths * n_steps];

    x.par_chunks_mut(slots * d)
        .zip(y.par_chunks_mut(slots))
        .zip(z.par_chunks_mut(slots))
        .zip(controls.par_chunks_mut(n_steps))
        .enumerate()
        .try_for_each(|(path, (((xr, yr), zr), cr))| {
            run_path(
                spec,
                start,
                policy,
                &times,
                dt,
                seed,
                step_offset,
                path,
                xr,
                yr,
                zr,
                cr,
            )
        })?;

    Ok(PathBundle {
        dim: d,
        n_paths,
        times,
        seed,
        x,
        y,
        z,
        controls,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_path(
    spec: &ProblemSpec,
    start: &AugmentedState,
    policy: &dyn ControlPolicy,
    times: &[f64],
    dt: f64,
    seed: u64,
    step_offset: usize,
    path: usize,
    xr: &mut [f64],
    yr: &mut [f64],
    zr: &mut [f64],
    cr: &mut [u32],
) -> Result<(), SimError> {
    let d = spec.dim;
    let n_steps = times.len() - 1;
    let mut cur_x = start.x.clone();
    let mut cur_y = start.y;
    let mut cur_z = start.z;
    let mut b = vec![0.0; d];
    let mut sigma = vec![0.0; d * d];
    let mut dw = vec![0.0; d];
    let mut x_next = vec![0.0; d];

    xr[0..d].copy_from_slice(&cur_x);
    yr[0] = cur_y;
    zr[0] = cur_z;

    for k in 0..n_steps {
        let global = step_offset + k;
        let idx = policy.select(path, global, times[k], &cur_x, &cr[..k]);
        if idx >= spec.n_controls() {
            return Err(SimError::BadControlIndex {
                idx,
                n: spec.n_controls(),
                path,
                step: k,
            });
        }
        cr[k] = idx as u32;
        gaussian_increments(seed, path as u64, global as u64, &mut dw);
        let (prev_y, prev_z) = (cur_y, cur_z);
        advance(
            spec,
            times[k],
            dt,
            &mut cur_x,
            &mut cur_y,
            &mut cur_z,
            idx,
            &dw,
            &mut b,
            &mut sigma,
            &mut x_next,
        );
        debug_assert!(cur_y <= prev_y, "discount factor must not increase");
        debug_assert!(cur_z >= prev_z, "accrued cost must not decrease");
        if !(cur_x.iter().all(|v| v.is_finite()) && cur_y.is_finite() && cur_z.is_finite()) {
            return Err(SimError::NonFiniteState {
                path,
                step: k + 1,
                x: cur_x.clone(),
                y: cur_y,
                z: cur_z,
            });
        }
        xr[(k + 1) * d..(k + 2) * d].copy_from_slice(&cur_x);
        yr[k + 1] = cur_y;
        zr[k + 1] = cur_z;
    }
    Ok(())
}

/// Stopping cost F = Z + Y g(X) at the given per-path stop step.
pub fn payoff(
    spec: &ProblemSpec,
    bundle: &PathBundle,
    stop_index: &[usize],
) -> Result<Vec<f64>, SimError> {
    spec.check()?;
    let mut out = Vec::with_capacity(bundle.n_paths);
    for (p, &k) in stop_index.iter().enumerate().take(bundle.n_paths) {
        if k >= bundle.times.len() {
            return Err(SimError::StopIndexOutOfRange {
                idx: k,
                path: p,
                n_steps: bundle.n_steps(),
            });
        }
        let g = spec.terminal_cost_at(bundle.x(p, k));
        out.push(bundle.z(p, k) + bundle.y(p, k) * g);
    }
    Ok(out)
}

/// Supremum-moment estimates E sup_{s <= h} |X_s - x|^p for each h,
/// with the log-log least-squares slope across the h list.
#[derive(Debug, Clone)]
pub struct MomentDiagnostic {
    /// (h, estimate) pairs in input order.
    pub estimates: Vec<(f64, f64)>,
    /// Fitted slope of ln(estimate) against ln(h); the moment bound
    /// predicts p/2.
    pub slope: f64,
}

/// Steps per horizon in the moment diagnostic. A fixed count makes the
/// discrete suprema self-similar across h, so the fitted slope is not
/// biased by grid resolution.
const MOMENT_STEPS: usize = 16;

/// Estimates E sup_{s<=h} |X_s - x|^p for each h by simulating with the
/// first control held constant, reusing the same increments across h.
pub fn moment_scaling_diagnostic(
    spec: &ProblemSpec,
    x: &[f64],
    p: f64,
    h_list: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<MomentDiagnostic, SimError> {
    spec.check()?;
    if x.len() != spec.dim {
        return Err(SimError::StartDim {
            got: x.len(),
            expected: spec.dim,
        });
    }
    if n_paths == 0 {
        return Err(SimError::ZeroPaths);
    }
    let d = spec.dim;
    let mut estimates = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let dt = h / MOMENT_STEPS as f64;
        // per-path suprema, merged in path order
        let sups: Result<Vec<f64>, SimError> = (0..n_paths)
            .into_par_iter()
            .map(|path| {
                let mut cur_x = x.to_vec();
                let mut y = 1.0;
                let mut z = 0.0;
                let mut b = vec![0.0; d];
                let mut sigma = vec![0.0; d * d];
                let mut dw = vec![0.0; d];
                let mut x_next = vec![0.0; d];
                let mut sup = 0.0f64;
                for k in 0..MOMENT_STEPS {
                    gaussian_increments(seed, path as u64, k as u64, &mut dw);
                    advance(
                        spec,
                        k as f64 * dt,
                        dt,
                        &mut cur_x,
                        &mut y,
                        &mut z,
                        0,
                        &dw,
                        &mut b,
                        &mut sigma,
                        &mut x_next,
                    );
                    if !cur_x.iter().all(|v| v.is_finite()) {
                        return Err(SimError::NonFiniteState {
                            path,
                            step: k + 1,
                            x: cur_x.clone(),
                            y,
                            z,
                        });
                    }
                    let dist_sq: f64 = cur_x.iter().zip(x).map(|(u, v)| (u - v) * (u - v)).sum();
                    sup = sup.max(dist_sq.sqrt().powf(p));
                }
                Ok(sup)
            })
            .collect();
        let sups = sups?;
        let mean = sups.iter().sum::<f64>() / n_paths as f64;
        estimates.push((h, mean));
    }

    // least squares in log-log coordinates
    let n = estimates.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(h, e) in &estimates {
        let (lx, ly) = (h.ln(), e.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    Ok(MomentDiagnostic { estimates, slope })
}

/// Sample mean and standard error (n-1 denominator).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::benchmark;

    #[test]
    fn identical_seeds_give_bitwise_identical_bundles() {
        let spec = benchmark("discounted-stop").unwrap().spec;
        let start = AugmentedState::plain(vec![0.5]);
        let policy = RandomControl {
            seed: 9,
            n_controls: 2,
        };
        let a = simulate(&spec, 0.0, &start, &policy, 64, 32, 1234).unwrap();
        let b = simulate(&spec, 0.0, &start, &policy, 64, 32, 1234).unwrap();
        for p in 0..64 {
            for s in 0..=32 {
                assert_eq!(a.x(p, s), b.x(p, s));
                assert_eq!(a.y(p, s), b.y(p, s));
                assert_eq!(a.z(p, s), b.z(p, s));
            }
        }
        let c = simulate(&spec, 0.0, &start, &policy, 64, 32, 1235).unwrap();
        assert_ne!(a.x(0, 32), c.x(0, 32), "different seed must move paths");
    }

    #[test]
    fn restart_replays_the_exact_tail() {
        // dt = 1/16 is a power of two, so restart times and step sizes
        // are bitwise equal and the tail must reproduce exactly
        let spec = benchmark("discounted-stop").unwrap().spec;
        let start = AugmentedState::plain(vec![0.25]);
        let policy = ConstantControl(1);
        let n_steps = 16;
        let full = simulate(&spec, 0.0, &start, &policy, 8, n_steps, 77).unwrap();
        for path in 0..8 {
            let k = 5;
            let restart_state = AugmentedState::plain(full.x(path, k).to_vec());
            let tail = simulate_with_step_offset(
                &spec,
                full.times[k],
                &restart_state,
                &policy,
                path + 1, // simulate paths 0..=path; only `path` is compared
                n_steps - k,
                77,
                k,
            )
            .unwrap();
            for j in 0..=(n_steps - k) {
                assert_eq!(
                    tail.x(path, j),
                    full.x(path, k + j),
                    "X tail diverged at path {path}, step {j}"
                );
            }
            // multiplicative discount: Y_{k+j} = Y_k * Y'_j up to round-off
            for j in 0..=(n_steps - k) {
                let lhs = full.y(path, k + j);
                let rhs = full.y(path, k) * tail.y(path, j);
                assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn continuity_in_the_initial_point_under_a_common_seed() {
        let spec = benchmark("discounted-stop").unwrap().spec;
        let policy = ConstantControl(0);
        let base = simulate(
            &spec,
            0.0,
            &AugmentedState::plain(vec![1.0]),
            &policy,
            256,
            64,
            5,
        )
        .unwrap();
        let mut prev_gap = f64::INFINITY;
        for delta in [0.1, 0.01, 0.001] {
            let moved = simulate(
                &spec,
                0.0,
                &AugmentedState::plain(vec![1.0 + delta]),
                &policy,
                256,
                64,
                5,
            )
            .unwrap();
            let pay_a = payoff(&spec, &base, &vec![64; 256]).unwrap();
            let pay_b = payoff(&spec, &moved, &vec![64; 256]).unwrap();
            let gap = pay_a
                .iter()
                .zip(&pay_b)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(gap < prev_gap, "payoff gap must shrink with delta");
            prev_gap = gap;
        }
        assert!(prev_gap < 5e-3, "gap at delta = 1e-3 is {prev_gap}");
    }

    #[test]
    fn mayer_identity_relates_weighted_and_plain_starts() {
        // J(t, (x, y, z)) = z + y * J(t, (x, 1, 0)) pathwise
        let spec = benchmark("discounted-stop").unwrap().spec;
        let policy = ConstantControl(0);
        let plain = simulate(
            &spec,
            0.0,
            &AugmentedState::plain(vec![0.8]),
            &policy,
            32,
            32,
            21,
        )
        .unwrap();
        let weighted = simulate(
            &spec,
            0.0,
            &AugmentedState {
                x: vec![0.8],
                y: 0.5,
                z: 2.0,
            },
            &policy,
            32,
            32,
            21,
        )
        .unwrap();
        let stop = vec![32usize; 32];
        let f_plain = payoff(&spec, &plain, &stop).unwrap();
        let f_weighted = payoff(&spec, &weighted, &stop).unwrap();
        for p in 0..32 {
            let expect = 2.0 + 0.5 * f_plain[p];
            assert!(
                (f_weighted[p] - expect).abs() <= 1e-12 * expect.abs().max(1.0),
                "path {p}: {} vs {}",
                f_weighted[p],
                expect
            );
        }
    }

    #[test]
    fn discount_and_cost_are_monotone_along_paths() {
        let spec = benchmark("discounted-stop").unwrap().spec;
        let bundle = simulate(
            &spec,
            0.0,
            &AugmentedState::plain(vec![0.0]),
            &RandomControl {
                seed: 3,
                n_controls: 2,
            },
            128,
            64,
            99,
        )
        .unwrap();
        for p in 0..128 {
            for s in 0..64 {
                assert!(bundle.y(p, s + 1) <= bundle.y(p, s));
                assert!(bundle.z(p, s + 1) >= bundle.z(p, s));
            }
            assert!((bundle.y(p, 0) - 1.0).abs() == 0.0);
        }
    }

    #[test]
    fn jensen_terminal_mean_dominates_the_stopping_cost() {
        // E (x + W_T)^2 = x^2 + T: the Monte Carlo mean at T must clear
        // g(x) = 2.25 by roughly T = 1, far beyond noise
        let spec = benchmark("jensen").unwrap().spec;
        let n_paths = 20_000;
        let bundle = simulate(
            &spec,
            0.0,
            &AugmentedState::plain(vec![1.5]),
            &ConstantControl(0),
            n_paths,
            200,
            2024,
        )
        .unwrap();
        let stop = vec![200usize; n_paths];
        let pays = payoff(&spec, &bundle, &stop).unwrap();
        let (mean, stderr) = mean_and_stderr(&pays);
        assert!(
            mean >= 2.25 - 3.0 * stderr,
            "terminal mean {mean} fell below the immediate-stop cost"
        );
        assert!(
            (mean - 3.25).abs() <= 5.0 * stderr,
            "terminal mean {mean} is not near x^2 + T = 3.25 (stderr {stderr})"
        );
    }

    #[test]
    fn zero_payoff_monte_carlo_is_exactly_zero() {
        let spec = benchmark("zero-payoff").unwrap().spec;
        let bundle = simulate(
            &spec,
            0.0,
            &AugmentedState::plain(vec![0.3]),
            &RandomControl {
                seed: 1,
                n_controls: 2,
            },
            64,
            32,
            7,
        )
        .unwrap();
        for stop_at in [0usize, 13, 32] {
            let pays = payoff(&spec, &bundle, &vec![stop_at; 64]).unwrap();
            assert!(
                pays.iter().all(|&v| v == 0.0),
                "f = 0 and g = 0 admit no cost"
            );
        }
    }

    #[test]
    fn non_finite_dynamics_name_path_and_step() {
        let mut spec = benchmark("jensen").unwrap().spec;
        spec.drift = vec![crate::expr::Expr::parse("1 / (x1 - x1)").unwrap()];
        let err = simulate(
            &spec,
            0.0,
            &AugmentedState::plain(vec![0.0]),
            &ConstantControl(0),
            2,
            4,
            0,
        )
        .unwrap_err();
        match err {
            SimError::NonFiniteState { step, .. } => assert_eq!(step, 1),
            other => panic!("expected NonFiniteState, got {other}"),
        }
    }

    #[test]
    fn brownian_sup_moment_scales_like_h_to_p_over_2() {
        // b = 0, sigma = 1: reusing increments across h makes the
        // discrete suprema exactly self-similar, so the slope for p = 2
        // sits at 1 up to Monte Carlo noise
        let spec = benchmark("jensen").unwrap().spec;
        let diag =
            moment_scaling_diagnostic(&spec, &[0.0], 2.0, &[0.01, 0.02, 0.04, 0.08], 20_000, 31)
                .unwrap();
        assert!(
            (diag.slope - 1.0).abs() <= 0.15,
            "slope {} outside [0.85, 1.15]; estimates {:?}",
            diag.slope,
            diag.estimates
        );
    }

    #[test]
    fn path_dump_csv_has_expected_header_and_rows() {
        let spec = benchmark("zero-payoff").unwrap().spec;
        let bundle = simulate(
            &spec,
            0.0,
            &AugmentedState::plain(vec![0.0]),
            &ConstantControl(0),
            2,
            3,
            5,
        )
        .unwrap();
        let mut buf = Vec::new();
        bundle.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("path,step,t,x_1,y,z,control_index"));
        assert_eq!(text.lines().count(), 1 + 2 * 4);
        let first = lines.next().unwrap();
        assert!(first.starts_with("0,0,0.0000000000000000e0,"));
        assert!(first.ends_with(",0"), "control column present: {first}");
    }
}
