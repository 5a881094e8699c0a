//! Strategy extraction and Monte Carlo strategy evaluation.
//!
//! A solved value grid induces a candidate saddle point:
//!
//! * the feedback control map reads the stored argmax control at the
//!   nearest node of the latest slice at or before the current time;
//! * the stopping rule halts the first time the interpolated value is
//!   within `stop_tol` of the stopping cost g (on the grid the
//!   projection writes g bitwise in the stop region, so this threshold
//!   recovers the first entry into that region).
//!
//! Both read only (t, X_t), so they are non-anticipating by
//! construction; [`decision_trace`] exposes the decision stream for a
//! given shock sequence so replay tests can verify that two histories
//! agreeing up to step j produce identical decisions up to step j.
//!
//! [`evaluate_pair`] prices a (control policy, stopping rule) pair by
//! simulation, streaming paths so memory stays flat in the path count.
//! Paths are deterministic per (seed, path, step); per-path payoffs are
//! written into a preallocated slot by path index and reduced serially,
//! so results are bitwise reproducible at any thread count.
//!
//! [`sandwich_test`] plays extracted strategies against adversary
//! panels: the extracted controller must hold every stopper at or above
//! the PDE value, and the extracted stopper must hold every controller
//! at or below it, within Monte Carlo noise plus the scheme tolerance.
//! [`saddle_report`] checks the epsilon-saddle inequalities against
//! random unilateral deviations.

use crate::hjb::ValueGrid;
use crate::model::ProblemSpec;
use crate::sde::{gaussian_increments, ConstantControl, ControlPolicy, RandomControl, SimError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Feedback control read off a solved grid.
pub struct GridFeedbackPolicy<'a> {
    pub grid: &'a ValueGrid,
}

impl ControlPolicy for GridFeedbackPolicy<'_> {
    fn select(&self, _path: usize, _step: usize, t: f64, x: &[f64], _prior: &[u32]) -> usize {
        self.grid.policy_at(t, x)
    }
}

/// When the stopper halts; every variant decides from (t, X_t) alone.
pub enum StoppingRule<'a> {
    /// Stop once w(t, X_t) >= g(X_t) - tol: the grid's stop region.
    ValueThreshold { grid: &'a ValueGrid, tol: f64 },
    /// Stop at the first grid time >= t_star.
    ConstantTime { t_star: f64 },
    /// Stop when X_t leaves the open box (x_min, x_max).
    BoundaryHit { x_min: Vec<f64>, x_max: Vec<f64> },
}

impl StoppingRule<'_> {
    /// The rule extracted from a solved grid: first entry into the
    /// region where the value has merged with the obstacle.
    pub fn snell(grid: &ValueGrid) -> StoppingRule<'_> {
        StoppingRule::ValueThreshold {
            grid,
            tol: grid.scheme.stop_tol,
        }
    }

    pub fn wants_stop(&self, spec: &ProblemSpec, t: f64, x: &[f64]) -> bool {
        match self {
            StoppingRule::ValueThreshold { grid, tol } => {
                grid.value_at(t, x) >= spec.terminal_cost_at(x) - tol
            }
            StoppingRule::ConstantTime { t_star } => t >= *t_star - 1e-12,
            StoppingRule::BoundaryHit { x_min, x_max } => x
                .iter()
                .zip(x_min.iter().zip(x_max))
                .any(|(v, (lo, hi))| v <= lo || v >= hi),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            StoppingRule::ValueThreshold { .. } => "value-threshold",
            StoppingRule::ConstantTime { .. } => "constant-time",
            StoppingRule::BoundaryHit { .. } => "boundary-hit",
        }
    }
}

/// Monte Carlo price of one (policy, rule) pair.
#[derive(Debug, Clone, Serialize)]
pub struct PairValue {
    pub mean: f64,
    pub stderr: f64,
    pub mean_stop_time: f64,
    /// Latest stop step over all paths (n_steps when some path ran to
    /// the horizon).
    pub max_stop_step: usize,
    pub n_paths: usize,
    pub n_steps: usize,
}

/// Simulates `n_paths` from (0, x0), letting the rule inspect the state
/// before each step and forcing a stop at the horizon. Expected payoff
/// E[Z + Y g(X)] at the stop, with the sample standard error.
pub fn evaluate_pair(
    spec: &ProblemSpec,
    policy: &dyn ControlPolicy,
    rule: &StoppingRule<'_>,
    x0: &[f64],
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PairValue, SimError> {
    spec.check()?;
    if x0.len() != spec.dim {
        return Err(SimError::StartDim {
            got: x0.len(),
            expected: spec.dim,
        });
    }
    if n_steps == 0 {
        return Err(SimError::ZeroSteps);
    }
    if n_paths == 0 {
        return Err(SimError::ZeroPaths);
    }
    let dt = spec.horizon / n_steps as f64;

    let mut payoffs = vec![0.0f64; n_paths];
    let mut stop_steps = vec![0u32; n_paths];
    payoffs
        .par_iter_mut()
        .zip(stop_steps.par_iter_mut())
        .enumerate()
        .try_for_each(|(path, (payoff, stop_step))| -> Result<(), SimError> {
            let d = spec.dim;
            let mut x = x0.to_vec();
            let mut x_next = vec![0.0; d];
            let mut y = 1.0f64;
            let mut z = 0.0f64;
            let mut b = vec![0.0; d];
            let mut sigma = vec![0.0; d * d];
            let mut dw = vec![0.0; d];
            let mut prior: Vec<u32> = Vec::with_capacity(n_steps);

            let mut stopped_at = n_steps;
            for step in 0..n_steps {
                let t = step as f64 * dt;
                if rule.wants_stop(spec, t, &x) {
                    stopped_at = step;
                    break;
                }
                let ctrl = policy.select(path, step, t, &x, &prior);
                if ctrl >= spec.n_controls() {
                    return Err(SimError::BadControlIndex {
                        idx: ctrl,
                        n: spec.n_controls(),
                        path,
                        step,
                    });
                }
                gaussian_increments(seed, path as u64, step as u64, &mut dw);
                crate::sde::advance(
                    spec,
                    t,
                    dt,
                    &mut x,
                    &mut y,
                    &mut z,
                    ctrl,
                    &dw,
                    &mut b,
                    &mut sigma,
                    &mut x_next,
                );
                prior.push(ctrl as u32);
                if !(y.is_finite() && z.is_finite() && x.iter().all(|v| v.is_finite())) {
                    return Err(SimError::NonFiniteState {
                        path,
                        step: step + 1,
                        x: x.clone(),
                        y,
                        z,
                    });
                }
            }
            *payoff = z + y * spec.terminal_cost_at(&x);
            *stop_step = stopped_at as u32;
            Ok(())
        })?;

    let (mean, stderr) = crate::sde::mean_and_stderr(&payoffs);
    let mean_stop_time = stop_steps.iter().map(|&s| s as f64 * dt).sum::<f64>() / n_paths as f64;
    let max_stop_step = stop_steps.iter().map(|&s| s as usize).max().unwrap_or(0);
    Ok(PairValue {
        mean,
        stderr,
        mean_stop_time,
        max_stop_step,
        n_paths,
        n_steps,
    })
}

/// One decision the pair makes along a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue { control: usize },
    Stop,
}

/// Replays a pair against an explicit shock sequence (`shocks[k]` is
/// the step-k Gaussian vector) and returns the decision stream:
/// decisions up to and including the stop. Two shock sequences that
/// agree on steps < j yield identical prefixes of length j, which is
/// the non-anticipativity contract.
pub fn decision_trace(
    spec: &ProblemSpec,
    policy: &dyn ControlPolicy,
    rule: &StoppingRule<'_>,
    x0: &[f64],
    shocks: &[Vec<f64>],
) -> Result<Vec<Decision>, SimError> {
    spec.check()?;
    let n_steps = shocks.len();
    let dt = spec.horizon / n_steps as f64;
    let d = spec.dim;
    let mut x = x0.to_vec();
    let mut x_next = vec![0.0; d];
    let mut y = 1.0f64;
    let mut z = 0.0f64;
    let mut b = vec![0.0; d];
    let mut sigma = vec![0.0; d * d];
    let mut prior: Vec<u32> = Vec::new();
    let mut out = Vec::with_capacity(n_steps + 1);
    for (step, dw) in shocks.iter().enumerate() {
        let t = step as f64 * dt;
        if rule.wants_stop(spec, t, &x) {
            out.push(Decision::Stop);
            return Ok(out);
        }
        let ctrl = policy.select(0, step, t, &x, &prior);
        if ctrl >= spec.n_controls() {
            return Err(SimError::BadControlIndex {
                idx: ctrl,
                n: spec.n_controls(),
                path: 0,
                step,
            });
        }
        out.push(Decision::Continue { control: ctrl });
        crate::sde::advance(
            spec,
            t,
            dt,
            &mut x,
            &mut y,
            &mut z,
            ctrl,
            dw,
            &mut b,
            &mut sigma,
            &mut x_next,
        );
        prior.push(ctrl as u32);
    }
    out.push(Decision::Stop);
    Ok(out)
}

/// One cell of the adversary matrix.
#[derive(Debug, Clone, Serialize)]
pub struct SandwichCell {
    pub controller: String,
    pub stopper: String,
    pub value: PairValue,
    /// Some(margin): a bound this cell must respect, as
    /// estimate - bound for lower cells and bound - estimate for upper
    /// cells, already including 3 stderr + tolerance slack. Nonnegative
    /// means the bound holds.
    pub lower_margin: Option<f64>,
    pub upper_margin: Option<f64>,
}

/// Full adversary-matrix report around the grid value at (0, x0).
#[derive(Debug, Clone, Serialize)]
pub struct SandwichReport {
    pub grid_value: f64,
    pub scheme_tolerance: f64,
    pub cells: Vec<SandwichCell>,
    pub all_ok: bool,
}

/// Plays the extracted controller against a panel of stoppers (its
/// mean payoff must not fall below the grid value, net of noise and
/// scheme tolerance) and the extracted stopper against a panel of
/// controllers (no controller may push the mean above the grid value
/// plus the same slack).
#[allow(clippy::too_many_arguments)]
pub fn sandwich_test(
    spec: &ProblemSpec,
    grid: &ValueGrid,
    x0: &[f64],
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    scheme_tolerance: f64,
) -> Result<SandwichReport, SimError> {
    let grid_value = grid.probe(x0);
    let extracted = GridFeedbackPolicy { grid };
    let constant = ConstantControl(0);
    let random = RandomControl {
        seed: seed ^ 0x5deece66d,
        n_controls: spec.n_controls(),
    };
    let controllers: [(&str, &dyn ControlPolicy); 3] = [
        ("extracted", &extracted),
        ("constant-0", &constant),
        ("random", &random),
    ];

    let inner = |frac: f64| -> (Vec<f64>, Vec<f64>) {
        let lo = grid
            .geometry
            .x_min
            .iter()
            .zip(&grid.geometry.x_max)
            .map(|(lo, hi)| 0.5 * (lo + hi) - 0.5 * frac * (hi - lo))
            .collect();
        let hi = grid
            .geometry
            .x_min
            .iter()
            .zip(&grid.geometry.x_max)
            .map(|(lo, hi)| 0.5 * (lo + hi) + 0.5 * frac * (hi - lo))
            .collect();
        (lo, hi)
    };
    let (box_lo, box_hi) = inner(2.0 / 3.0);
    let stoppers: [StoppingRule<'_>; 3] = [
        StoppingRule::snell(grid),
        StoppingRule::ConstantTime {
            t_star: 0.5 * spec.horizon,
        },
        StoppingRule::BoundaryHit {
            x_min: box_lo,
            x_max: box_hi,
        },
    ];

    let mut cells = Vec::with_capacity(9);
    let mut all_ok = true;
    for (ci, (cname, policy)) in controllers.iter().enumerate() {
        for (si, rule) in stoppers.iter().enumerate() {
            let cell_seed = seed
                .wrapping_add(1 + ci as u64)
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add(si as u64);
            let value = evaluate_pair(spec, *policy, rule, x0, n_paths, n_steps, cell_seed)?;
            let slack = 3.0 * value.stderr + scheme_tolerance;
            let lower_margin = (ci == 0).then_some(value.mean - grid_value + slack);
            let upper_margin = (si == 0).then_some(grid_value - value.mean + slack);
            if lower_margin.is_some_and(|m| m < 0.0) || upper_margin.is_some_and(|m| m < 0.0) {
                all_ok = false;
            }
            cells.push(SandwichCell {
                controller: (*cname).to_string(),
                stopper: rule.name().to_string(),
                value,
                lower_margin,
                upper_margin,
            });
        }
    }
    Ok(SandwichReport {
        grid_value,
        scheme_tolerance,
        cells,
        all_ok,
    })
}

/// One unilateral deviation in the saddle check.
#[derive(Debug, Clone, Serialize)]
pub struct DeviationOutcome {
    pub name: String,
    pub value: PairValue,
    /// Slack left in the saddle inequality including epsilon and noise;
    /// nonnegative means the deviation did not beat the pair.
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SaddleReport {
    pub epsilon: f64,
    /// Value of the extracted pair played against itself.
    pub center: PairValue,
    pub controller_deviations: Vec<DeviationOutcome>,
    pub stopper_deviations: Vec<DeviationOutcome>,
    pub all_ok: bool,
}

/// Checks the epsilon-saddle property of the extracted pair: no
/// controller deviation gains more than epsilon against the extracted
/// stopper and no stopper deviation saves more than epsilon against the
/// extracted controller, each net of 3 combined stderr.
#[allow(clippy::too_many_arguments)]
pub fn saddle_report(
    spec: &ProblemSpec,
    grid: &ValueGrid,
    x0: &[f64],
    epsilon: f64,
    k_deviations: usize,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<SaddleReport, SimError> {
    let extracted = GridFeedbackPolicy { grid };
    let snell = StoppingRule::snell(grid);
    let center = evaluate_pair(spec, &extracted, &snell, x0, n_paths, n_steps, seed)?;

    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x6a09e667f3bcc908);
    let mut controller_deviations = Vec::with_capacity(k_deviations);
    let mut all_ok = true;
    for i in 0..k_deviations {
        let dev_seed = seed.wrapping_add(101 + i as u64);
        let (name, policy): (String, Box<dyn ControlPolicy>) = if i % 2 == 0 {
            let idx = rng.gen_range(0..spec.n_controls());
            (format!("constant-{idx}"), Box::new(ConstantControl(idx)))
        } else {
            (
                format!("random-{i}"),
                Box::new(RandomControl {
                    seed: rng.gen(),
                    n_controls: spec.n_controls(),
                }),
            )
        };
        let value = evaluate_pair(
            spec,
            policy.as_ref(),
            &snell,
            x0,
            n_paths,
            n_steps,
            dev_seed,
        )?;
        let margin = center.mean + epsilon + 3.0 * (center.stderr + value.stderr) - value.mean;
        if margin < 0.0 {
            all_ok = false;
        }
        controller_deviations.push(DeviationOutcome {
            name,
            value,
            margin,
        });
    }

    let mut stopper_deviations = Vec::with_capacity(k_deviations);
    for i in 0..k_deviations {
        let dev_seed = seed.wrapping_add(501 + i as u64);
        let (name, rule) = if i % 2 == 0 {
            let t_star = rng.gen_range(0.0..spec.horizon);
            (
                format!("constant-time-{t_star:.3}"),
                StoppingRule::ConstantTime { t_star },
            )
        } else {
            let frac: f64 = rng.gen_range(0.3..0.9);
            let lo = grid
                .geometry
                .x_min
                .iter()
                .zip(&grid.geometry.x_max)
                .map(|(lo, hi)| 0.5 * (lo + hi) - 0.5 * frac * (hi - lo))
                .collect::<Vec<_>>();
            let hi = grid
                .geometry
                .x_min
                .iter()
                .zip(&grid.geometry.x_max)
                .map(|(lo, hi)| 0.5 * (lo + hi) + 0.5 * frac * (hi - lo))
                .collect::<Vec<_>>();
            (
                format!("boundary-box-{frac:.2}"),
                StoppingRule::BoundaryHit {
                    x_min: lo,
                    x_max: hi,
                },
            )
        };
        let value = evaluate_pair(spec, &extracted, &rule, x0, n_paths, n_steps, dev_seed)?;
        let margin = value.mean + epsilon + 3.0 * (center.stderr + value.stderr) - center.mean;
        if margin < 0.0 {
            all_ok = false;
        }
        stopper_deviations.push(DeviationOutcome {
            name,
            value,
            margin,
        });
    }

    Ok(SaddleReport {
        epsilon,
        center,
        controller_deviations,
        stopper_deviations,
        all_ok,
    })
}
