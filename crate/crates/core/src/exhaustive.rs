//! Brute-force certification of the lattice game value on tiny instances.
//!
//! Backward induction claims its value is the saddle over all
//! non-anticipating strategy pairs. On instances small enough to
//! enumerate, this module verifies the claim from first principles:
//!
//! * `markov_lower`: max over ALL feedback control maps (one control per
//!   (step, interior node)) of the stopper's exact best reply, computed
//!   by per-map Snell induction. Every such map is a valid controller
//!   strategy, so this is a certified lower bound on the game value.
//! * `markov_upper`: min over ALL stop tables (stop/continue per
//!   (step, interior node)) of the controller's exact best reply,
//!   computed by per-table backward induction. Every table is a valid
//!   stopping rule, so this is a certified upper bound.
//! * `full_lower` / `full_upper` (horizons of one or two steps): the
//!   same bounds over the LITERAL history-dependent classes. Stop rules
//!   may condition on the full control-and-shock history, control maps
//!   on the full shock history; payoffs are evaluated by exact
//!   expectation over all shock paths.
//!
//! A sound solver must satisfy lower = value = upper to round-off. The
//! Markov classes are exhaustive certificates rather than heuristics:
//! the argmax feedback map attains the backward value from below and
//! the stop-when-the-value-touches-g table attains it from above, so
//! the enumerated extrema pinch the backward value exactly whenever the
//! induction is correct, and expose it when it is not.
//!
//! Boundary nodes are absorbing with value g, so decisions are only
//! enumerated at interior nodes.

use crate::lattice::{LatticeError, LatticeGame, LatticeMesh, StencilSet};
use crate::model::ProblemSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// 2^20 stop tables / 2 * 10^6 feedback maps keep a full sweep under a
/// few seconds at test optimization levels.
const MAX_TABLE_BITS: usize = 20;
const MAX_MAPS: f64 = 2_000_000.0;
/// Literal history-dependent classes are only tractable for one or two
/// steps; larger horizons skip them (the Markov classes still run).
const MAX_FULL_STEPS: usize = 2;
const MAX_FULL_BITS: usize = 16;

#[derive(Debug, Clone, Copy)]
enum StopKeying {
    /// Stop rules see (step, past controls, past shocks).
    ControlAndShock,
    /// Stopping times adapted to the shock filtration only; with the
    /// control map fixed, past controls are a function of past shocks,
    /// so this class is exactly the stopper's reply class.
    ShockOnly,
}

/// Enumerated bounds around the backward-induction value at one node.
#[derive(Debug, Clone)]
pub struct ExhaustiveReport {
    /// min(g, max_a cont) induction at the start node.
    pub stopper_first: f64,
    /// max_a min(g, cont) induction at the start node.
    pub controller_first: f64,
    /// max over feedback maps of the stopper's best reply.
    pub markov_lower: f64,
    /// min over stop tables of the controller's best reply.
    pub markov_upper: f64,
    /// Literal-class bounds; present only when n_steps <= 2.
    pub full_lower: Option<f64>,
    pub full_upper: Option<f64>,
}

impl ExhaustiveReport {
    /// Largest pairwise gap among all computed values.
    pub fn max_spread(&self) -> f64 {
        let mut vals = vec![
            self.stopper_first,
            self.controller_first,
            self.markov_lower,
            self.markov_upper,
        ];
        vals.extend(self.full_lower);
        vals.extend(self.full_upper);
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

/// Runs every enumeration the instance size permits, starting the game
/// at t = 0 from `start_node`.
pub fn exhaustive_cross_check(
    game: &LatticeGame,
    start_node: usize,
) -> Result<ExhaustiveReport, LatticeError> {
    if !game.time_invariant() {
        return Err(LatticeError::TimeVarying);
    }
    let st = game.stencils_at(game.spec.horizon)?;
    let n_nodes = game.n_nodes();
    let nc = game.spec.n_controls();
    let k_steps = game.mesh.n_steps;

    let interior: Vec<usize> = (0..n_nodes).filter(|&n| !game.is_boundary(n)).collect();
    let mut int_pos = vec![usize::MAX; n_nodes];
    for (pos, &node) in interior.iter().enumerate() {
        int_pos[node] = pos;
    }
    let n_int = interior.len();
    let slots = n_int * k_steps;

    if slots > MAX_TABLE_BITS {
        return Err(LatticeError::EnumerationTooLarge {
            what: "stop tables",
            count: (slots as f64).exp2(),
            cap: (MAX_TABLE_BITS as f64).exp2(),
        });
    }
    let n_maps = (nc as f64).powi(slots as i32);
    if n_maps > MAX_MAPS {
        return Err(LatticeError::EnumerationTooLarge {
            what: "feedback maps",
            count: n_maps,
            cap: MAX_MAPS,
        });
    }

    let bi = |ordering| -> f64 {
        let mut v_next = game.g.clone();
        let mut v = vec![0.0; n_nodes];
        for _ in 0..k_steps {
            game.sweep(&st, ordering, &v_next, &mut v, None);
            std::mem::swap(&mut v, &mut v_next);
        }
        v_next[start_node]
    };
    let stopper_first = bi(crate::lattice::Ordering::StopperFirst);
    let controller_first = bi(crate::lattice::Ordering::ControllerFirst);

    // min over stop tables of the controller's best reply
    let mut markov_upper = f64::INFINITY;
    let mut v = vec![0.0; n_nodes];
    let mut v_next = vec![0.0; n_nodes];
    for table in 0u64..(1u64 << slots) {
        v_next.copy_from_slice(&game.g);
        for k in (0..k_steps).rev() {
            for node in 0..n_nodes {
                if game.is_boundary(node) {
                    v[node] = game.g[node];
                    continue;
                }
                let slot = k * n_int + int_pos[node];
                if (table >> slot) & 1 == 1 {
                    v[node] = game.g[node];
                } else {
                    let mut best = f64::NEG_INFINITY;
                    for ctrl in 0..nc {
                        best = best.max(game.continuation(&st, node, ctrl, &v_next));
                    }
                    v[node] = best;
                }
            }
            std::mem::swap(&mut v, &mut v_next);
        }
        markov_upper = markov_upper.min(v_next[start_node]);
    }

    // max over feedback maps of the stopper's best reply (Snell)
    let mut pows = vec![1u64; slots + 1];
    for i in 1..=slots {
        pows[i] = pows[i - 1] * nc as u64;
    }
    let mut markov_lower = f64::NEG_INFINITY;
    for map_id in 0u64..pows[slots] {
        v_next.copy_from_slice(&game.g);
        for k in (0..k_steps).rev() {
            for node in 0..n_nodes {
                if game.is_boundary(node) {
                    v[node] = game.g[node];
                    continue;
                }
                let slot = k * n_int + int_pos[node];
                let ctrl = ((map_id / pows[slot]) % nc as u64) as usize;
                let cont = game.continuation(&st, node, ctrl, &v_next);
                v[node] = cont.min(game.g[node]);
            }
            std::mem::swap(&mut v, &mut v_next);
        }
        markov_lower = markov_lower.max(v_next[start_node]);
    }

    let (full_lower, full_upper) = if k_steps <= MAX_FULL_STEPS {
        full_class_bounds(game, &st, start_node, k_steps)
    } else {
        (None, None)
    };

    Ok(ExhaustiveReport {
        stopper_first,
        controller_first,
        markov_lower,
        markov_upper,
        full_lower,
        full_upper,
    })
}

/// Decision-slot index for a stop rule at (step, control prefix, shock
/// prefix). Only horizons of at most two steps reach this code, so the
/// prefixes reduce to the first control and first shock.
fn stop_slot(key: StopKeying, k: usize, a0: usize, xi1: usize, s_len: usize) -> usize {
    match (key, k) {
        (_, 0) => 0,
        (StopKeying::ControlAndShock, _) => 1 + a0 * s_len + xi1,
        (StopKeying::ShockOnly, _) => 1 + xi1,
    }
}

fn gamma_slot(k: usize, xi1: usize) -> usize {
    if k == 0 {
        0
    } else {
        1 + xi1
    }
}

/// Exact expected payoff of one (control map, stop rule) pair by
/// summation over all shock paths.
#[allow(clippy::too_many_arguments)]
fn literal_pair_value(
    game: &LatticeGame,
    st: &StencilSet,
    k_steps: usize,
    keying: StopKeying,
    stop_bits: u64,
    gamma_id: u64,
    gamma_pows: &[u64],
    node: usize,
    k: usize,
    a0: usize,
    xi1: usize,
    disc_acc: f64,
    run_acc: f64,
) -> f64 {
    let nc = game.spec.n_controls();
    let forced = game.is_boundary(node) || k == k_steps;
    if forced || (stop_bits >> stop_slot(keying, k, a0, xi1, st.stencil_len)) & 1 == 1 {
        return run_acc + disc_acc * game.g[node];
    }
    let ctrl = ((gamma_id / gamma_pows[gamma_slot(k, xi1)]) % nc as u64) as usize;
    let step_disc = st.disc[node];
    let next_run = run_acc + disc_acc * step_disc * st.f_dt[node * nc + ctrl];
    let next_disc = disc_acc * step_disc;
    let base = (node * nc + ctrl) * st.stencil_len;
    let mut total = 0.0;
    for j in 0..st.stencil_len {
        let p = st.probs[base + j];
        if p == 0.0 {
            continue;
        }
        total += p * literal_pair_value(
            game,
            st,
            k_steps,
            keying,
            stop_bits,
            gamma_id,
            gamma_pows,
            st.neighbors[base + j] as usize,
            k + 1,
            if k == 0 { ctrl } else { a0 },
            if k == 0 { j } else { xi1 },
            next_disc,
            next_run,
        );
    }
    total
}

/// Saddle bounds over the literal history-dependent classes.
fn full_class_bounds(
    game: &LatticeGame,
    st: &StencilSet,
    start_node: usize,
    k_steps: usize,
) -> (Option<f64>, Option<f64>) {
    let nc = game.spec.n_controls();
    let s_len = st.stencil_len;
    let rule_bits = if k_steps < 2 { 1 } else { 1 + nc * s_len };
    let tau_bits = if k_steps < 2 { 1 } else { 1 + s_len };
    let gamma_slots = if k_steps < 2 { 1 } else { 1 + s_len };
    if rule_bits > MAX_FULL_BITS {
        return (None, None);
    }
    let mut gamma_pows = vec![1u64; gamma_slots + 1];
    for i in 1..=gamma_slots {
        gamma_pows[i] = gamma_pows[i - 1] * nc as u64;
    }
    let n_gammas = gamma_pows[gamma_slots];
    if n_gammas as f64 * (1u64 << rule_bits) as f64 > 8e6 {
        return (None, None);
    }

    let j_val = |keying, stop_bits, gamma_id| {
        literal_pair_value(
            game,
            st,
            k_steps,
            keying,
            stop_bits,
            gamma_id,
            &gamma_pows,
            start_node,
            0,
            0,
            0,
            1.0,
            0.0,
        )
    };

    // upper: stop rules see controls and shocks; controller best-responds
    let mut upper = f64::INFINITY;
    for stop_bits in 0u64..(1u64 << rule_bits) {
        let mut best = f64::NEG_INFINITY;
        for gamma_id in 0..n_gammas {
            best = best.max(j_val(StopKeying::ControlAndShock, stop_bits, gamma_id));
        }
        upper = upper.min(best);
    }

    // lower: controller commits a shock-history map; stopper best-responds
    // with a shock-adapted stopping time
    let mut lower = f64::NEG_INFINITY;
    for gamma_id in 0..n_gammas {
        let mut best = f64::INFINITY;
        for stop_bits in 0u64..(1u64 << tau_bits) {
            best = best.min(j_val(StopKeying::ShockOnly, stop_bits, gamma_id));
        }
        lower = lower.max(best);
    }

    (Some(lower), Some(upper))
}

/// Deterministic generator of small well-posed one-dimensional
/// instances for enumeration and ordering checks. Drift and diffusion
/// are damped after drawing so the requested (nx, n_steps) pair always
/// passes the lattice weight bound; the step count is never changed,
/// which keeps short-horizon instances enumerable in full.
#[derive(Debug, Clone)]
pub struct InstanceParams {
    pub seed: u64,
    /// Odd, >= 3, so a center start node exists.
    pub nx: usize,
    pub n_controls: usize,
    pub n_steps: usize,
}

pub fn random_instance(p: &InstanceParams) -> (ProblemSpec, LatticeMesh) {
    assert!(p.nx >= 3 && p.nx % 2 == 1, "nx must be odd and >= 3");
    assert!(p.nx <= 21, "larger meshes blow up the enumeration sizes");
    assert!((1..=3).contains(&p.n_controls));
    assert!((1..=50).contains(&p.n_steps));
    let mut rng = ChaCha12Rng::seed_from_u64(p.seed);

    let mut controls = Vec::with_capacity(p.n_controls);
    let width = 2.0 / p.n_controls as f64;
    for i in 0..p.n_controls {
        let u: f64 = rng.gen();
        controls.push(vec![-1.0 + (i as f64 + u) * width]);
    }

    let cb1: f64 = rng.gen_range(-0.4..0.4);
    let cb2: f64 = rng.gen_range(-0.4..0.4);
    let cb3: f64 = rng.gen_range(-0.2..0.2);
    let cs1: f64 = rng.gen_range(0.1..0.5);
    let cs2: f64 = rng.gen_range(0.0..0.25);
    let cf1: f64 = rng.gen_range(0.0..0.3);
    let cf2: f64 = rng.gen_range(0.0..0.2);
    let cc: f64 = rng.gen_range(0.0..0.3);
    let g1: f64 = rng.gen_range(0.3..1.0);
    let g2: f64 = rng.gen_range(0.0..0.3);
    let g_src = match rng.gen_range(0u8..4) {
        0 => format!("abs(x1) * {g1} + {g2}"),
        1 => format!("min(1, x1^2) * {g1} + {g2}"),
        2 => format!("{g1} + {g1} * cos(x1)"),
        _ => format!("max(0, 1 - abs(x1)) * {g1} + {g2}"),
    };

    let drift_src = format!("{cb1} + {cb2} * a1 + {cb3} * sin(x1)");
    let sigma_src = format!("{cs1} + {cs2} * a1");
    let build = |drift: &str, sigma: &str| -> ProblemSpec {
        let json = serde_json::json!({
            "dim": 1,
            "horizon": 1.0,
            "controls": &controls,
            "drift": [drift],
            "diffusion": [[sigma]],
            "running_cost": format!("{cf1} + {cf2} * abs(a1)"),
            "terminal_cost": &g_src,
            "discount": format!("{cc}"),
            "discount_bound": 0.5,
            "lipschitz_k": 5.0,
            "growth_p": 2.0,
        });
        let spec: ProblemSpec = serde_json::from_value(json).expect("generated spec parses");
        spec.check().expect("generated spec is well formed");
        spec
    };
    let mesh = LatticeMesh {
        x_min: vec![-1.5],
        x_max: vec![1.5],
        nx: vec![p.nx],
        n_steps: p.n_steps,
    };
    let spec = build(&drift_src, &sigma_src);

    // worst-case trinomial load at the requested resolution, drift and
    // diffusion maximized separately so one factor bounds both terms
    let dt = spec.horizon / p.n_steps as f64;
    let dx = mesh.dx(0);
    let (mut diff_load, mut drift_load) = (0.0f64, 0.0f64);
    let mut x = [0.0];
    let mut b = [0.0];
    let mut sig = [0.0];
    let mut diag = [0.0];
    for node in 0..mesh.n_nodes() {
        mesh.node_x(node, &mut x);
        for ctrl in 0..spec.n_controls() {
            let a = spec.control(ctrl);
            spec.drift_into(spec.horizon, &x, a, &mut b);
            spec.diffusion_sq_diag(spec.horizon, &x, a, &mut sig, &mut diag);
            diff_load = diff_load.max(diag[0] * dt / (dx * dx));
            drift_load = drift_load.max(b[0].abs() * dt / dx);
        }
    }
    let target = 0.95;
    if diff_load + drift_load <= target {
        return (spec, mesh);
    }
    // scaling drift and diffusion by s scales the load terms by s and
    // s^2; the positive root of s^2 diff + s drift = target damps the
    // draw just enough
    let s = if diff_load > 0.0 {
        (-drift_load + (drift_load * drift_load + 4.0 * diff_load * target).sqrt())
            / (2.0 * diff_load)
    } else {
        target / drift_load
    };
    let damped = build(
        &format!("{s} * ({drift_src})"),
        &format!("{s} * ({sigma_src})"),
    );
    (damped, mesh)
}

/// Center node of an odd one-dimensional mesh.
pub fn center_node(mesh: &LatticeMesh) -> usize {
    mesh.nx[0] / 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_chain;

    fn check_instance(p: &InstanceParams, expect_full: bool) {
        let (spec, mesh) = random_instance(p);
        let game = build_chain(&spec, &mesh).unwrap();
        let report = exhaustive_cross_check(&game, center_node(&mesh)).unwrap();
        assert!(
            report.max_spread() <= 1e-12,
            "seed {}: spread {} report {report:?}",
            p.seed,
            report.max_spread()
        );
        if expect_full {
            assert!(report.full_lower.is_some() && report.full_upper.is_some());
        }
    }

    #[test]
    fn markov_classes_pinch_backward_induction() {
        for seed in 0..8 {
            let p = InstanceParams {
                seed,
                nx: 5,
                n_controls: 1 + (seed % 3) as usize,
                n_steps: 2 + (seed % 2) as usize,
            };
            check_instance(&p, false);
        }
    }

    #[test]
    fn literal_history_classes_pinch_at_two_steps() {
        for seed in 100..106 {
            let p = InstanceParams {
                seed,
                nx: 5,
                n_controls: 1 + (seed % 3) as usize,
                n_steps: 2,
            };
            check_instance(&p, true);
        }
    }

    #[test]
    fn one_step_games_agree_across_every_class() {
        for seed in 200..204 {
            let p = InstanceParams {
                seed,
                nx: 5,
                n_controls: 3,
                n_steps: 1,
            };
            check_instance(&p, true);
        }
    }

    #[test]
    fn frozen_diffusion_instance_agrees() {
        // sigma = 0 for one control: the chain can become deterministic,
        // the weakest spot for an off-by-one in the shock bookkeeping
        let json = serde_json::json!({
            "dim": 1,
            "horizon": 1.0,
            "controls": [[0.0], [0.5]],
            "drift": ["0.2 * a1"],
            "diffusion": [["a1"]],
            "running_cost": "0.05",
            "terminal_cost": "max(0, 1 + cos(x1))",
            "discount": "0.1",
            "discount_bound": 0.5,
            "lipschitz_k": 5.0,
            "growth_p": 2.0,
        });
        let spec: ProblemSpec = serde_json::from_value(json).unwrap();
        let mesh = LatticeMesh {
            x_min: vec![-1.5],
            x_max: vec![1.5],
            nx: vec![5],
            n_steps: 2,
        };
        let game = build_chain(&spec, &mesh).unwrap();
        let report = exhaustive_cross_check(&game, center_node(&mesh)).unwrap();
        assert!(report.max_spread() <= 1e-12, "{report:?}");
        assert!(report.full_lower.is_some());
    }

    #[test]
    fn oversized_instances_are_refused() {
        let p = InstanceParams {
            seed: 1,
            nx: 21,
            n_controls: 3,
            n_steps: 30,
        };
        let (spec, mesh) = random_instance(&p);
        let game = build_chain(&spec, &mesh).unwrap();
        match exhaustive_cross_check(&game, center_node(&mesh)) {
            Err(LatticeError::EnumerationTooLarge { .. }) => {}
            other => panic!("expected EnumerationTooLarge, got {other:?}"),
        }
    }

    #[test]
    fn time_varying_coefficients_are_refused() {
        let json = serde_json::json!({
            "dim": 1,
            "horizon": 1.0,
            "controls": [[0.0]],
            "drift": ["0.1 * t"],
            "diffusion": [["0.3"]],
            "running_cost": "0",
            "terminal_cost": "abs(x1)",
            "discount": "0",
            "discount_bound": 0.5,
            "lipschitz_k": 5.0,
            "growth_p": 2.0,
        });
        let spec: ProblemSpec = serde_json::from_value(json).unwrap();
        let mesh = LatticeMesh {
            x_min: vec![-1.0],
            x_max: vec![1.0],
            nx: vec![3],
            n_steps: 2,
        };
        let game = build_chain(&spec, &mesh).unwrap();
        match exhaustive_cross_check(&game, 1) {
            Err(LatticeError::TimeVarying) => {}
            other => panic!("expected TimeVarying, got {other:?}"),
        }
    }

    #[test]
    fn larger_control_sets_only_help_the_controller() {
        // dropping a control cannot raise the enumerated value
        let p = InstanceParams {
            seed: 7,
            nx: 5,
            n_controls: 3,
            n_steps: 2,
        };
        let (spec, mesh) = random_instance(&p);
        let mut reduced = spec.clone();
        reduced.controls.truncate(2);
        let full = exhaustive_cross_check(&build_chain(&spec, &mesh).unwrap(), center_node(&mesh))
            .unwrap();
        let part =
            exhaustive_cross_check(&build_chain(&reduced, &mesh).unwrap(), center_node(&mesh))
                .unwrap();
        assert!(part.markov_lower <= full.markov_lower + 1e-12);
    }
}
