//! Problem description for the controller-and-stopper game.
//!
//! A problem instance is the controlled diffusion
//!
//! ```text
//!     dX_s = b(s, X_s, a_s) ds + sigma(s, X_s, a_s) dW_s
//! ```
//!
//! on a finite horizon [0, T], a finite control list M, a running cost
//! f(t, x, a) >= 0, a terminal/stopping cost g(x) >= 0, and a discount
//! rate c(t, x) in [0, discount_bound]. The controller picks controls to
//! maximize the expected discounted cost, the stopper picks the stopping
//! time to minimize it.
//!
//! Well-posedness asks for Lipschitz b, sigma with linear growth and
//! polynomially growing f, g. Those are analytic statements about
//! functions, so [`validate_spec`] spot-checks them on pseudo-random
//! sample tuples and reports violations with witnesses instead of
//! proving them. Continuity of f in x (uniformly in the control) is
//! assumed, not checked.

use crate::expr::Expr;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Half-width of the state box validation samples are drawn from.
pub const VALIDATION_BOX_HALFWIDTH: f64 = 5.0;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("control list is empty")]
    EmptyControls,
    #[error("controls {0} and {1} are identical")]
    DuplicateControl(usize, usize),
    #[error("control {index} has {len} component(s), expected {expected}")]
    ControlLen {
        index: usize,
        len: usize,
        expected: usize,
    },
    #[error("drift has {got} component(s), expected dim = {expected}")]
    DriftLen { got: usize, expected: usize },
    #[error("diffusion must be a {expected}x{expected} matrix, got row {row} of length {len}")]
    DiffusionShape {
        row: usize,
        len: usize,
        expected: usize,
    },
    #[error("{field} references coordinate x{idx}, but dim = {dim}")]
    CoordOutOfRange {
        field: &'static str,
        idx: usize,
        dim: usize,
    },
    #[error("{field} references control component a{idx}, but controls have {m} component(s)")]
    ControlOutOfRange {
        field: &'static str,
        idx: usize,
        m: usize,
    },
    #[error("{field} may not depend on {what}")]
    ForbiddenDependence {
        field: &'static str,
        what: &'static str,
    },
    #[error("{name} must be positive, got {value}")]
    NonPositiveMetadata { name: &'static str, value: f64 },
    #[error("growth exponent must be >= 1, got {0}")]
    GrowthExponentTooSmall(f64),
    #[error(
        "{function} evaluated to a non-finite value at t = {t}, x = {x:?}{}",
        control.map(|k| format!(", control index {k}")).unwrap_or_default()
    )]
    NonFinite {
        function: &'static str,
        t: f64,
        x: Vec<f64>,
        control: Option<usize>,
    },
}

/// Full description of one game instance.
///
/// Fields are public for literal construction; every library entry point
/// runs [`ProblemSpec::check`] before using a spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    /// State dimension d >= 1.
    pub dim: usize,
    /// Horizon T > 0; the game runs on [0, T].
    pub horizon: f64,
    /// Finite control list; each entry is one control vector in R^m.
    pub controls: Vec<Vec<f64>>,
    /// Drift b, one expression per state coordinate.
    pub drift: Vec<Expr>,
    /// Diffusion sigma, a d x d matrix of expressions (row-major).
    pub diffusion: Vec<Vec<Expr>>,
    /// Running cost f(t, x, a) >= 0.
    pub running_cost: Expr,
    /// Stopping cost g(x) >= 0; also the terminal condition.
    pub terminal_cost: Expr,
    /// Discount rate c(t, x) in [0, discount_bound].
    pub discount: Expr,
    /// Upper bound for the discount rate.
    pub discount_bound: f64,
    /// Lipschitz/growth constant K.
    pub lipschitz_k: f64,
    /// Growth exponent for |f| + |g| <= K (1 + |x|^growth_p).
    pub growth_p: f64,
}

impl ProblemSpec {
    /// Structural invariants: shapes, index ranges, metadata signs,
    /// duplicate-free controls. Cheap; analytic conditions live in
    /// [`validate_spec`].
    pub fn check(&self) -> Result<(), ModelError> {
        if !(self.horizon > 0.0) {
            return Err(ModelError::NonPositiveHorizon(self.horizon));
        }
        if self.dim == 0 {
            return Err(ModelError::NonPositiveMetadata {
                name: "dim",
                value: 0.0,
            });
        }
        if self.controls.is_empty() {
            return Err(ModelError::EmptyControls);
        }
        let m = self.controls[0].len();
        if m == 0 {
            return Err(ModelError::ControlLen {
                index: 0,
                len: 0,
                expected: 1,
            });
        }
        for (i, c) in self.controls.iter().enumerate() {
            if c.len() != m {
                return Err(ModelError::ControlLen {
                    index: i,
                    len: c.len(),
                    expected: m,
                });
            }
            for (j, d) in self.controls.iter().enumerate().skip(i + 1) {
                if c == d {
                    return Err(ModelError::DuplicateControl(i, j));
                }
            }
        }
        if self.drift.len() != self.dim {
            return Err(ModelError::DriftLen {
                got: self.drift.len(),
                expected: self.dim,
            });
        }
        if self.diffusion.len() != self.dim {
            return Err(ModelError::DiffusionShape {
                row: self.diffusion.len(),
                len: 0,
                expected: self.dim,
            });
        }
        for (r, row) in self.diffusion.iter().enumerate() {
            if row.len() != self.dim {
                return Err(ModelError::DiffusionShape {
                    row: r,
                    len: row.len(),
                    expected: self.dim,
                });
            }
        }
        for (field, exprs) in [
            ("drift", &self.drift[..]),
            ("running_cost", std::slice::from_ref(&self.running_cost)),
            ("terminal_cost", std::slice::from_ref(&self.terminal_cost)),
            ("discount", std::slice::from_ref(&self.discount)),
        ] {
            for e in exprs {
                self.check_ranges(field, e)?;
            }
        }
        for row in &self.diffusion {
            for e in row {
                self.check_ranges("diffusion", e)?;
            }
        }
        if self.terminal_cost.uses_time() {
            return Err(ModelError::ForbiddenDependence {
                field: "terminal_cost",
                what: "time",
            });
        }
        if self.terminal_cost.uses_control() {
            return Err(ModelError::ForbiddenDependence {
                field: "terminal_cost",
                what: "the control",
            });
        }
        if self.discount.uses_control() {
            return Err(ModelError::ForbiddenDependence {
                field: "discount",
                what: "the control",
            });
        }
        for (name, value) in [
            ("discount_bound", self.discount_bound),
            ("lipschitz_k", self.lipschitz_k),
        ] {
            if !(value > 0.0) {
                return Err(ModelError::NonPositiveMetadata { name, value });
            }
        }
        if !(self.growth_p >= 1.0) {
            return Err(ModelError::GrowthExponentTooSmall(self.growth_p));
        }
        Ok(())
    }

    fn check_ranges(&self, field: &'static str, e: &Expr) -> Result<(), ModelError> {
        let mc = e.max_coord();
        if mc > self.dim {
            return Err(ModelError::CoordOutOfRange {
                field,
                idx: mc,
                dim: self.dim,
            });
        }
        let ma = e.max_control();
        let m = self.controls.first().map(|c| c.len()).unwrap_or(0);
        if ma > m {
            return Err(ModelError::ControlOutOfRange { field, idx: ma, m });
        }
        Ok(())
    }

    pub fn n_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn control(&self, idx: usize) -> &[f64] {
        &self.controls[idx]
    }

    /// Writes b(t, x, a) into `out` (length dim).
    #[inline]
    pub fn drift_into(&self, t: f64, x: &[f64], a: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.drift) {
            *o = e.eval(t, x, a);
        }
    }

    /// Writes sigma(t, x, a) into `out` row-major (length dim * dim).
    #[inline]
    pub fn diffusion_into(&self, t: f64, x: &[f64], a: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for r in 0..d {
            for c in 0..d {
                out[r * d + c] = self.diffusion[r][c].eval(t, x, a);
            }
        }
    }

    /// Fills the diagonal of sigma sigma^T and returns the largest
    /// absolute off-diagonal entry. `sigma_scratch` must hold dim * dim
    /// values; `diag_out` holds dim.
    pub fn diffusion_sq_diag(
        &self,
        t: f64,
        x: &[f64],
        a: &[f64],
        sigma_scratch: &mut [f64],
        diag_out: &mut [f64],
    ) -> f64 {
        let d = self.dim;
        self.diffusion_into(t, x, a, sigma_scratch);
        let mut max_off = 0.0f64;
        for r in 0..d {
            for c in r..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += sigma_scratch[r * d + k] * sigma_scratch[c * d + k];
                }
                if r == c {
                    diag_out[r] = s;
                } else {
                    max_off = max_off.max(s.abs());
                }
            }
        }
        max_off
    }

    #[inline]
    pub fn running_cost_at(&self, t: f64, x: &[f64], a: &[f64]) -> f64 {
        self.running_cost.eval(t, x, a)
    }

    #[inline]
    pub fn terminal_cost_at(&self, x: &[f64]) -> f64 {
        self.terminal_cost.eval(0.0, x, &[])
    }

    #[inline]
    pub fn discount_at(&self, t: f64, x: &[f64]) -> f64 {
        self.discount.eval(t, x, &[])
    }
}

/// How a benchmark's reference value is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    /// Closed-form value function.
    Analytic,
    /// Value equals the stopping cost; stopping immediately is optimal
    /// because continuation can only raise the expected cost.
    JensenImmediateStop,
    /// Value is identically zero.
    ZeroPayoff,
    /// Reference produced by the lattice backward-induction oracle.
    LatticeOracle,
}

/// A named instance with a known way to cross-check its value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub name: String,
    pub spec: ProblemSpec,
    pub reference_kind: ReferenceKind,
    /// Reference value as an expression over (t, x), when closed-form.
    pub reference_value: Option<Expr>,
}

impl BenchmarkCase {
    pub fn reference_at(&self, t: f64, x: &[f64]) -> Option<f64> {
        self.reference_value.as_ref().map(|e| e.eval(t, x, &[]))
    }
}

/// Which analytic condition a sample violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    RunningCostNegative,
    TerminalCostNegative,
    DiscountOutOfRange,
    CoefficientGrowth,
    CostGrowth,
    CoefficientLipschitz,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Condition::RunningCostNegative => "f >= 0",
            Condition::TerminalCostNegative => "g >= 0",
            Condition::DiscountOutOfRange => "0 <= c <= discount_bound",
            Condition::CoefficientGrowth => "|b| + |sigma| <= K (1 + |x|)",
            Condition::CostGrowth => "|f| + |g| <= K (1 + |x|^p)",
            Condition::CoefficientLipschitz => {
                "|b(t,x,a) - b(t,y,a)| + |sigma(t,x,a) - sigma(t,y,a)| <= K |x - y|"
            }
        };
        f.write_str(s)
    }
}

/// One failed sample: the condition plus the witnessing point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub condition: Condition,
    pub t: f64,
    pub x: Vec<f64>,
    /// Second state point for difference-quotient checks.
    pub y: Option<Vec<f64>>,
    pub control: Option<usize>,
    /// Observed left-hand side of the violated inequality.
    pub lhs: f64,
    /// Bound it had to satisfy.
    pub rhs: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} violated at t = {}, x = {:?}",
            self.condition, self.t, self.x
        )?;
        if let Some(y) = &self.y {
            write!(f, ", y = {y:?}")?;
        }
        if let Some(k) = self.control {
            write!(f, ", control index {k}")?;
        }
        write!(f, ": {} > {}", self.lhs, self.rhs)
    }
}

/// Result of sampling the analytic conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Spot-checks nonnegativity, linear growth, cost growth, and
/// Lipschitz difference quotients on `sample_count` pseudo-random
/// (t, x, y, a) tuples from [0, T] x [-5, 5]^d x controls. Deterministic
/// in (spec, sample_count, rng_seed). Non-finite coefficient values are
/// errors, not violations.
pub fn validate_spec(
    spec: &ProblemSpec,
    sample_count: usize,
    rng_seed: u64,
) -> Result<ValidationReport, ModelError> {
    spec.check()?;
    let d = spec.dim;
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    let mut violations = Vec::new();
    let half = VALIDATION_BOX_HALFWIDTH;

    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut bx = vec![0.0; d];
    let mut by = vec![0.0; d];
    let mut sx = vec![0.0; d * d];
    let mut sy = vec![0.0; d * d];

    let finite = |v: f64, function: &'static str, t: f64, x: &[f64], k: Option<usize>| {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ModelError::NonFinite {
                function,
                t,
                x: x.to_vec(),
                control: k,
            })
        }
    };

    for _ in 0..sample_count {
        let t = rng.gen_range(0.0..=spec.horizon);
        for k in 0..d {
            x[k] = rng.gen_range(-half..=half);
            y[k] = rng.gen_range(-half..=half);
        }
        let ai = rng.gen_range(0..spec.n_controls());
        let a = spec.control(ai);

        spec.drift_into(t, &x, a, &mut bx);
        spec.drift_into(t, &y, a, &mut by);
        spec.diffusion_into(t, &x, a, &mut sx);
        spec.diffusion_into(t, &y, a, &mut sy);
        for v in bx.iter().chain(sx.iter()) {
            finite(*v, "drift/diffusion", t, &x, Some(ai))?;
        }
        for v in by.iter().chain(sy.iter()) {
            finite(*v, "drift/diffusion", t, &y, Some(ai))?;
        }
        let f_val = finite(
            spec.running_cost_at(t, &x, a),
            "running_cost",
            t,
            &x,
            Some(ai),
        )?;
        let g_val = finite(spec.terminal_cost_at(&x), "terminal_cost", t, &x, None)?;
        let c_val = finite(spec.discount_at(t, &x), "discount", t, &x, None)?;

        let norm = |v: &[f64]| v.iter().map(|u| u * u).sum::<f64>().sqrt();
        let xnorm = norm(&x);
        let b_norm = norm(&bx);
        let s_norm = norm(&sx);

        if f_val < 0.0 {
            violations.push(Violation {
                condition: Condition::RunningCostNegative,
                t,
                x: x.clone(),
                y: None,
                control: Some(ai),
                lhs: -f_val,
                rhs: 0.0,
            });
        }
        if g_val < 0.0 {
            violations.push(Violation {
                condition: Condition::TerminalCostNegative,
                t,
                x: x.clone(),
                y: None,
                control: None,
                lhs: -g_val,
                rhs: 0.0,
            });
        }
        if c_val < 0.0 || c_val > spec.discount_bound {
            violations.push(Violation {
                condition: Condition::DiscountOutOfRange,
                t,
                x: x.clone(),
                y: None,
                control: None,
                lhs: c_val,
                rhs: spec.discount_bound,
            });
        }
        let growth_rhs = spec.lipschitz_k * (1.0 + xnorm);
        if b_norm + s_norm > growth_rhs {
            violations.push(Violation {
                condition: Condition::CoefficientGrowth,
                t,
                x: x.clone(),
                y: None,
                control: Some(ai),
                lhs: b_norm + s_norm,
                rhs: growth_rhs,
            });
        }
        let cost_rhs = spec.lipschitz_k * (1.0 + xnorm.powf(spec.growth_p));
        if f_val.abs() + g_val.abs() > cost_rhs {
            violations.push(Violation {
                condition: Condition::CostGrowth,
                t,
                x: x.clone(),
                y: None,
                control: Some(ai),
                lhs: f_val.abs() + g_val.abs(),
                rhs: cost_rhs,
            });
        }
        let mut diff = 0.0;
        for k in 0..d {
            diff += (bx[k] - by[k]).powi(2);
        }
        let b_diff = diff.sqrt();
        let mut sdiff = 0.0;
        for k in 0..d * d {
            sdiff += (sx[k] - sy[k]).powi(2);
        }
        let s_diff = sdiff.sqrt();
        let sep: f64 = x
            .iter()
            .zip(&y)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt();
        if b_diff + s_diff > spec.lipschitz_k * sep {
            violations.push(Violation {
                condition: Condition::CoefficientLipschitz,
                t,
                x: x.clone(),
                y: Some(y.clone()),
                control: Some(ai),
                lhs: b_diff + s_diff,
                rhs: spec.lipschitz_k * sep,
            });
        }
    }

    Ok(ValidationReport {
        samples: sample_count,
        violations,
    })
}

fn expr(src: &str) -> Expr {
    Expr::parse(src).expect("builtin expression parses")
}

/// The four builtin cases used throughout the test suite.
///
/// ```text
///     zero-payoff      g = 0; the stopper can always stop for free,
///                      so the value is identically zero.
///     jensen           b = 0, sigma = 1, f = c = 0, g = x^2; convex g
///                      makes continuation a mean-preserving spread,
///                      so immediate stopping is optimal and w = g.
///     discounted-stop  drift controls {-1,+1}, sigma = 0.5, f = 0.1,
///                      c = 0.1, g = min(1, x^2); genuine continuation
///                      region near the kink |x| = 1. Lattice oracle.
///     degenerate-sigma sigma = a in {0, 0.5}, b = 0, f = 0.05, c = 0,
///                      g = max(0, 1 + cos x); the controller may freeze
///                      the state, making every delay pure loss: w = g.
///                      Exercises degenerate diffusion end to end.
/// ```
pub fn builtin_benchmarks() -> Vec<BenchmarkCase> {
    let common = |controls: Vec<Vec<f64>>,
                  drift: &str,
                  diffusion: &str,
                  f: &str,
                  g: &str,
                  c: &str,
                  discount_bound: f64,
                  lipschitz_k: f64| ProblemSpec {
        dim: 1,
        horizon: 1.0,
        controls,
        drift: vec![expr(drift)],
        diffusion: vec![vec![expr(diffusion)]],
        running_cost: expr(f),
        terminal_cost: expr(g),
        discount: expr(c),
        discount_bound,
        lipschitz_k,
        growth_p: 2.0,
    };
    vec![
        BenchmarkCase {
            name: "zero-payoff".into(),
            spec: common(
                vec![vec![-1.0], vec![1.0]],
                "a1",
                "1",
                "0",
                "0",
                "0",
                1.0,
                2.0,
            ),
            reference_kind: ReferenceKind::ZeroPayoff,
            reference_value: Some(expr("0")),
        },
        BenchmarkCase {
            name: "jensen".into(),
            spec: common(vec![vec![0.0]], "0", "1", "0", "x1^2", "0", 1.0, 2.0),
            reference_kind: ReferenceKind::JensenImmediateStop,
            reference_value: Some(expr("x1^2")),
        },
        BenchmarkCase {
            name: "discounted-stop".into(),
            spec: common(
                vec![vec![-1.0], vec![1.0]],
                "a1",
                "0.5",
                "0.1",
                "min(1, x1^2)",
                "0.1",
                0.5,
                2.0,
            ),
            reference_kind: ReferenceKind::LatticeOracle,
            reference_value: None,
        },
        BenchmarkCase {
            name: "degenerate-sigma".into(),
            spec: common(
                vec![vec![0.0], vec![0.5]],
                "0",
                "a1",
                "0.05",
                "max(0, 1 + cos(x1))",
                "0",
                1.0,
                3.0,
            ),
            reference_kind: ReferenceKind::LatticeOracle,
            reference_value: None,
        },
    ]
}

pub fn benchmark(name: &str) -> Option<BenchmarkCase> {
    builtin_benchmarks().into_iter().find(|b| b.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn builtins_pass_structural_and_sampled_validation() {
        let cases = builtin_benchmarks();
        assert_eq!(cases.len(), 4);
        for case in &cases {
            case.spec
                .check()
                .unwrap_or_else(|e| panic!("benchmark {} fails structural check: {e}", case.name));
            let report = validate_spec(&case.spec, 2000, 7).unwrap();
            assert!(
                report.passed(),
                "benchmark {} has violations: {:?}",
                case.name,
                report.violations
            );
        }
    }

    #[test]
    fn zero_payoff_reference_is_zero() {
        let case = benchmark("zero-payoff").unwrap();
        assert_eq!(case.reference_kind, ReferenceKind::ZeroPayoff);
        for x in [-2.0, 0.0, 3.5] {
            assert_eq!(case.spec.terminal_cost_at(&[x]), 0.0);
            assert_eq!(case.reference_at(0.3, &[x]), Some(0.0));
        }
    }

    #[test]
    fn jensen_reference_matches_stopping_cost() {
        let case = benchmark("jensen").unwrap();
        assert_eq!(case.reference_at(0.3, &[1.5]), Some(2.25));
        assert_eq!(case.spec.terminal_cost_at(&[1.5]), 2.25);
    }

    #[test]
    fn exponential_growth_is_caught_with_witness() {
        // e^5 = 148.4 exceeds K (1 + 5^2) = 26, so the box must produce
        // witnesses well inside its right half.
        let mut spec = benchmark("jensen").unwrap().spec;
        spec.terminal_cost = expr("exp(x1)");
        spec.lipschitz_k = 1.0;
        spec.growth_p = 2.0;
        let report = validate_spec(&spec, 500, 11).unwrap();
        let growth: Vec<_> = report
            .violations
            .iter()
            .filter(|v| v.condition == Condition::CostGrowth)
            .collect();
        assert!(!growth.is_empty(), "no growth violation found");
        assert!(
            growth.iter().any(|v| v.x[0] > 2.0),
            "expected a witness to the right of x = 2, got {growth:?}"
        );
    }

    #[test]
    fn validation_is_deterministic_in_the_seed() {
        let spec = benchmark("discounted-stop").unwrap().spec;
        let a = validate_spec(&spec, 300, 42).unwrap();
        let b = validate_spec(&spec, 300, 42).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn lipschitz_violation_reports_both_points() {
        // sqrt has an unbounded difference quotient at the origin, so
        // sampled pairs must eventually violate any fixed K... but on a
        // coarse box the quotient stays modest; use a steep slope instead.
        let mut spec = benchmark("jensen").unwrap().spec;
        spec.drift = vec![expr("100 * x1")];
        spec.lipschitz_k = 2.0;
        let report = validate_spec(&spec, 200, 3).unwrap();
        let v = report
            .violations
            .iter()
            .find(|v| v.condition == Condition::CoefficientLipschitz)
            .expect("steep drift must violate the difference quotient");
        assert!(v.y.is_some());
    }

    #[test]
    fn structural_errors_name_the_problem() {
        let mut spec = benchmark("jensen").unwrap().spec;
        spec.horizon = 0.0;
        assert!(matches!(
            spec.check(),
            Err(ModelError::NonPositiveHorizon(_))
        ));

        let mut spec = benchmark("jensen").unwrap().spec;
        spec.controls = vec![];
        assert!(matches!(spec.check(), Err(ModelError::EmptyControls)));

        let mut spec = benchmark("zero-payoff").unwrap().spec;
        spec.controls = vec![vec![1.0], vec![1.0]];
        assert!(matches!(
            spec.check(),
            Err(ModelError::DuplicateControl(0, 1))
        ));

        let mut spec = benchmark("jensen").unwrap().spec;
        spec.terminal_cost = expr("x2");
        assert!(matches!(
            spec.check(),
            Err(ModelError::CoordOutOfRange { .. })
        ));

        let mut spec = benchmark("jensen").unwrap().spec;
        spec.terminal_cost = expr("x1 * t");
        assert!(matches!(
            spec.check(),
            Err(ModelError::ForbiddenDependence { .. })
        ));

        let mut spec = benchmark("jensen").unwrap().spec;
        spec.drift = vec![expr("a2")];
        assert!(matches!(
            spec.check(),
            Err(ModelError::ControlOutOfRange { .. })
        ));
    }

    #[test]
    fn non_finite_coefficient_is_an_error_not_a_violation() {
        let mut spec = benchmark("jensen").unwrap().spec;
        spec.drift = vec![expr("1 / (x1 - x1)")];
        let err = validate_spec(&spec, 10, 1).unwrap_err();
        assert!(
            matches!(err, ModelError::NonFinite { function, .. } if function == "drift/diffusion")
        );
    }

    proptest! {
        #[test]
        fn jensen_stopping_cost_is_midpoint_convex(x in -10.0f64..10.0, h in 0.01f64..5.0) {
            let g = benchmark("jensen").unwrap().spec.terminal_cost;
            let mid = 0.5 * (g.eval(0.0, &[x + h], &[]) + g.eval(0.0, &[x - h], &[]));
            prop_assert!(mid >= g.eval(0.0, &[x], &[]));
        }
    }
}
