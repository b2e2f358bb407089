//! The degenerate divergence-form operator sum_i D_i(|D_i u|^{p-2} D_i u)
//! with the nonlinear Neumann flux condition built in structurally: every
//! boundary face of the flux carries exactly zero, so the discrete operator
//! integrates to zero on any field and the dissipation identity
//! <apply(u), u> = -sum_i ||D_i u||_p^p holds to roundoff.

use crate::grid::{FaceField, Field, Grid};
use std::sync::Arc;
use thiserror::Error;

/// Gradient magnitude below which an unregularized linearization is
/// reported degenerate.
pub const EPS_FLOOR: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("p must exceed 2 (or enable p2_diagnostic), got {0}")]
    ExponentOutOfRange(f64),
    #[error("regularization must be >= 0, got {0}")]
    NegativeRegularization(f64),
    #[error("degenerate linearization: eps_reg = 0 and a face gradient of axis {axis} is below {floor:e}")]
    DegenerateLinearization { axis: usize, floor: f64 },
}

/// Parameters of the operator: exponent p, smoothing of the degenerate
/// coefficient, and the per-axis structural flux zeroing flags.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorParams {
    pub p: f64,
    pub eps_reg: f64,
    pub per_axis_flux_zero: [bool; 3],
}

impl OperatorParams {
    /// Standard construction, p > 2.
    pub fn new(p: f64, eps_reg: f64) -> Result<Self, OperatorError> {
        if !(p > 2.0) {
            return Err(OperatorError::ExponentOutOfRange(p));
        }
        Self::build(p, eps_reg)
    }

    /// Allows p = 2 (linear heat/wave operator) for diagnostics and
    /// analytic-reduction tests.
    pub fn diagnostic(p: f64, eps_reg: f64) -> Result<Self, OperatorError> {
        if !(p >= 2.0) {
            return Err(OperatorError::ExponentOutOfRange(p));
        }
        Self::build(p, eps_reg)
    }

    fn build(p: f64, eps_reg: f64) -> Result<Self, OperatorError> {
        if !(eps_reg >= 0.0) {
            return Err(OperatorError::NegativeRegularization(eps_reg));
        }
        Ok(OperatorParams {
            p,
            eps_reg,
            per_axis_flux_zero: [true; 3],
        })
    }

    /// Flux law q(s) = (s^2 + eps^2)^((p-2)/2) s; exactly |s|^{p-2} s when
    /// eps_reg = 0.
    #[inline]
    pub fn flux_law(&self, s: f64) -> f64 {
        (s * s + self.eps_reg * self.eps_reg).powf((self.p - 2.0) * 0.5) * s
    }

    /// Derivative of the flux law:
    /// (s^2 + eps^2)^((p-4)/2) ((p-1) s^2 + eps^2).
    #[inline]
    pub fn flux_law_derivative(&self, s: f64) -> f64 {
        let e2 = self.eps_reg * self.eps_reg;
        let s2 = s * s;
        (s2 + e2).powf((self.p - 4.0) * 0.5) * ((self.p - 1.0) * s2 + e2)
    }
}

/// Per-axis face-centered flux arrays. With the default flags every
/// boundary-face entry is exactly 0.
#[derive(Debug, Clone)]
pub struct FluxField {
    components: Vec<FaceField>,
}

impl FluxField {
    pub fn new(components: Vec<FaceField>) -> Self {
        FluxField { components }
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        FluxField {
            components: (0..grid.dim()).map(|a| FaceField::zeros(grid, a)).collect(),
        }
    }

    pub fn component(&self, axis: usize) -> &FaceField {
        &self.components[axis]
    }

    pub fn components(&self) -> &[FaceField] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// Nodal field sum_i D_i q_i.
    pub fn divergence(&self) -> Field {
        let mut it = self.components.iter();
        let mut out = it.next().expect("at least one axis").divergence();
        for c in it {
            out = out.add_scaled(1.0, &c.divergence());
        }
        out
    }

    /// self + c * other, component-wise.
    pub fn add_scaled(&self, c: f64, other: &FluxField) -> FluxField {
        FluxField {
            components: self
                .components
                .iter()
                .zip(other.components.iter())
                .map(|(a, b)| a.add_scaled(c, b))
                .collect(),
        }
    }

    /// Nodal field sum_i (q_i averaged to nodes); the scalar carrier of the
    /// accumulated flux in the Lq membership witnesses.
    pub fn sum_to_node(&self) -> Field {
        let mut it = self.components.iter();
        let mut out = it.next().expect("at least one axis").to_node();
        for c in it {
            out = out.add_scaled(1.0, &c.to_node());
        }
        out
    }

    pub fn boundary_faces_zero(&self) -> bool {
        self.components.iter().all(|c| c.boundary_faces_zero())
    }

    pub fn max_abs(&self) -> f64 {
        self.components
            .iter()
            .fold(0.0_f64, |m, c| m.max(c.max_abs()))
    }
}

/// Nonlinear flux q_i = flux_law(D_i u) on interior faces, zero on boundary
/// faces (the structural form of the Neumann condition).
pub fn flux(u: &Field, params: &OperatorParams) -> FluxField {
    let grid = u.grid().clone();
    let components = (0..grid.dim())
        .map(|a| {
            let mut q = u
                .face_gradient(a)
                .expect("axis in range")
                .map(|s| params.flux_law(s));
            if !params.per_axis_flux_zero[a] {
                extrapolate_boundary_faces(&mut q);
            }
            q
        })
        .collect();
    FluxField::new(components)
}

/// The operator value: nodal divergence of the nonlinear flux.
pub fn apply(u: &Field, params: &OperatorParams) -> Field {
    flux(u, params).divergence()
}

/// Face coefficients of the linearization at `u`, one per axis.
pub fn jacobian_coefficients(
    u: &Field,
    params: &OperatorParams,
) -> Result<Vec<FaceField>, OperatorError> {
    let grid = u.grid();
    let mut coeffs = Vec::with_capacity(grid.dim());
    for a in 0..grid.dim() {
        let s = u.face_gradient(a).expect("axis in range");
        if params.eps_reg == 0.0 {
            let n = grid.shape()[a];
            let degenerate = s
                .values()
                .indexed_iter()
                .any(|(idx, v)| idx[a] > 0 && idx[a] < n && v.abs() < EPS_FLOOR);
            if degenerate {
                return Err(OperatorError::DegenerateLinearization {
                    axis: a,
                    floor: EPS_FLOOR,
                });
            }
        }
        coeffs.push(s.map(|s| params.flux_law_derivative(s)));
    }
    Ok(coeffs)
}

/// Apply the linearization given precomputed face coefficients:
/// divergence of coeff_i * D_i v.
pub fn jacobian_apply(coeffs: &[FaceField], v: &Field) -> Field {
    let grid = v.grid().clone();
    let mut out = Field::zeros(&grid);
    for (a, c) in coeffs.iter().enumerate() {
        let mut q = v.face_gradient(a).expect("axis in range").mul_pointwise(c);
        zero_boundary_faces(&mut q);
        out = out.add_scaled(1.0, &q.divergence());
    }
    out
}

/// Directional derivative of `apply` at `u` in direction `v`.
pub fn jacobian_vec(
    u: &Field,
    v: &Field,
    params: &OperatorParams,
) -> Result<Field, OperatorError> {
    let coeffs = jacobian_coefficients(u, params)?;
    Ok(jacobian_apply(&coeffs, v))
}

/// Face coefficients (s^2 + eps^2)^((p-2)/2) of the lagged-diffusivity
/// (Picard) linear operator.
pub fn flux_coefficients(u: &Field, params: &OperatorParams) -> Vec<FaceField> {
    let grid = u.grid();
    (0..grid.dim())
        .map(|a| {
            u.face_gradient(a)
                .expect("axis in range")
                .map(|s| (s * s + params.eps_reg * params.eps_reg).powf((params.p - 2.0) * 0.5))
        })
        .collect()
}

/// The exact-discrete dissipation sum_axes sum_faces q(s) s fw, equal to
/// -<apply(u), u> by summation by parts.
pub fn dissipation(u: &Field, params: &OperatorParams) -> f64 {
    (0..u.grid().dim())
        .map(|a| {
            let s = u.face_gradient(a).expect("axis in range");
            let q = s.map(|s| params.flux_law(s));
            q.inner_face(&s)
        })
        .sum()
}

fn zero_boundary_faces(q: &mut FaceField) {
    let a = q.axis();
    let n = q.grid().shape()[a];
    for (idx, v) in q.values_mut().indexed_iter_mut() {
        if idx[a] == 0 || idx[a] == n {
            *v = 0.0;
        }
    }
}

/// Diagnostic mode with per_axis_flux_zero[a] = false: copy the adjacent
/// interior flux onto the boundary faces instead of zeroing them. This
/// deliberately breaks conservation and exists only to expose what the
/// structural boundary treatment buys.
fn extrapolate_boundary_faces(q: &mut FaceField) {
    let a = q.axis();
    let n = q.grid().shape()[a];
    let interior_first = q
        .values()
        .slice_axis(ndarray::Axis(a), ndarray::Slice::from(1..2))
        .to_owned();
    let interior_last = q
        .values()
        .slice_axis(ndarray::Axis(a), ndarray::Slice::from(n as isize - 1..n as isize))
        .to_owned();
    q.values_mut()
        .slice_axis_mut(ndarray::Axis(a), ndarray::Slice::from(0..1))
        .assign(&interior_first);
    q.values_mut()
        .slice_axis_mut(ndarray::Axis(a), ndarray::Slice::from(n as isize..))
        .assign(&interior_last);
}
