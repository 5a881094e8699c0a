//! Pointwise Hamiltonian of the obstacle HJB equation.
//!
//! For a control a and derivative pair (p, A),
//!
//! ```text
//!     H^a(t, x, p, A) = -b(t,x,a).p - 1/2 Tr[sigma sigma^T(t,x,a) A] - f(t,x,a)
//!     H(t, x, p, A)   = min over the control list of H^a
//! ```
//!
//! The control list is finite, so the minimum is attained and H inherits
//! the coefficients' continuity; no upper/lower envelope distinction
//! arises. Ties in the minimum resolve to the lowest control index so
//! extracted policies are deterministic.

use crate::model::ProblemSpec;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HamiltonianError {
    #[error("gradient has {got} component(s), expected dim = {expected}")]
    GradientLen { got: usize, expected: usize },
    #[error("hessian must hold dim^2 = {expected} entries row-major, got {got}")]
    HessianLen { got: usize, expected: usize },
}

/// Point and derivatives the Hamiltonian is evaluated at. The Hessian is
/// symmetrized on construction, matching its role as a second-derivative
/// proxy.
#[derive(Debug, Clone)]
pub struct HamiltonianInput {
    pub t: f64,
    pub x: Vec<f64>,
    pub gradient: Vec<f64>,
    hessian: Vec<f64>,
}

impl HamiltonianInput {
    pub fn new(
        t: f64,
        x: Vec<f64>,
        gradient: Vec<f64>,
        hessian_row_major: Vec<f64>,
    ) -> Result<Self, HamiltonianError> {
        let d = x.len();
        if gradient.len() != d {
            return Err(HamiltonianError::GradientLen {
                got: gradient.len(),
                expected: d,
            });
        }
        if hessian_row_major.len() != d * d {
            return Err(HamiltonianError::HessianLen {
                got: hessian_row_major.len(),
                expected: d * d,
            });
        }
        let mut hessian = hessian_row_major;
        for r in 0..d {
            for c in r + 1..d {
                let s = 0.5 * (hessian[r * d + c] + hessian[c * d + r]);
                hessian[r * d + c] = s;
                hessian[c * d + r] = s;
            }
        }
        Ok(Self {
            t,
            x,
            gradient,
            hessian,
        })
    }

    pub fn hessian(&self) -> &[f64] {
        &self.hessian
    }
}

/// Reusable buffers so grid sweeps evaluate H without allocating.
#[derive(Debug, Clone)]
pub struct HamiltonianWorkspace {
    b: Vec<f64>,
    sigma: Vec<f64>,
}

impl HamiltonianWorkspace {
    pub fn new(dim: usize) -> Self {
        Self {
            b: vec![0.0; dim],
            sigma: vec![0.0; dim * dim],
        }
    }
}

/// H^a on borrowed slices; `hessian` is read as symmetric row-major.
pub fn hamiltonian_a_parts(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    control_index: usize,
    gradient: &[f64],
    hessian: &[f64],
    ws: &mut HamiltonianWorkspace,
) -> f64 {
    let d = spec.dim;
    let a = spec.control(control_index);
    spec.drift_into(t, x, a, &mut ws.b);
    spec.diffusion_into(t, x, a, &mut ws.sigma);

    let mut bp = 0.0;
    for k in 0..d {
        bp += ws.b[k] * gradient[k];
    }
    // Tr[sigma sigma^T A] = sum_{i,j} (sigma sigma^T)_{ij} A_{ij} for symmetric A
    let mut tr = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut ssq = 0.0;
            for k in 0..d {
                ssq += ws.sigma[i * d + k] * ws.sigma[j * d + k];
            }
            tr += ssq * hessian[i * d + j];
        }
    }
    -bp - 0.5 * tr - spec.running_cost_at(t, x, a)
}

/// H^a at a typed input point.
pub fn hamiltonian_a(spec: &ProblemSpec, input: &HamiltonianInput, control_index: usize) -> f64 {
    let mut ws = HamiltonianWorkspace::new(spec.dim);
    hamiltonian_a_parts(
        spec,
        input.t,
        &input.x,
        control_index,
        &input.gradient,
        input.hessian(),
        &mut ws,
    )
}

/// Minimum of H^a over the control list and its argmin index; ties go to
/// the lowest index.
pub fn hamiltonian_min(spec: &ProblemSpec, input: &HamiltonianInput) -> (f64, usize) {
    let mut ws = HamiltonianWorkspace::new(spec.dim);
    let mut best = f64::INFINITY;
    let mut best_idx = 0usize;
    for idx in 0..spec.n_controls() {
        let h = hamiltonian_a_parts(
            spec,
            input.t,
            &input.x,
            idx,
            &input.gradient,
            input.hessian(),
            &mut ws,
        );
        if h < best {
            best = h;
            best_idx = idx;
        }
    }
    (best, best_idx)
}
