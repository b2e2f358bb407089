//! Axis-aligned box domains with uniform tensor grids.
//!
//! Nodal scalar fields carry trapezoid quadrature weights (half weight on
//! boundary nodes), and first differences live on a staggered face grid:
//! along axis `a` a line of `n` nodes has `n + 1` faces, the outermost two
//! being boundary faces. Boundary faces always carry value zero, which is
//! what makes the divergence-form operators built on top of this module
//! discretely conservative.

use ndarray::{ArrayD, Axis, IxDyn, Slice};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("dimension must be 1, 2 or 3, got {0}")]
    InvalidDim(usize),
    #[error("axis {axis} needs at least 3 nodes, got {nodes}")]
    TooFewNodes { axis: usize, nodes: usize },
    #[error("axis {axis} has inverted bounds: low {low} >= high {high}")]
    InvalidBounds { axis: usize, low: f64, high: f64 },
    #[error("node list has {nodes} axes but bounds list has {bounds}")]
    MismatchedAxes { nodes: usize, bounds: usize },
    #[error("axis {axis} out of range for dimension {dim}")]
    AxisOutOfRange { axis: usize, dim: usize },
    #[error("value shape {found:?} does not match grid shape {expected:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("field contains a non-finite value")]
    NonFinite,
    #[error("Lp exponent must be >= 1, got {0}")]
    InvalidExponent(f64),
}

/// Uniform tensor grid on an axis-aligned box.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    shape: Vec<usize>,
    bounds: Vec<(f64, f64)>,
    spacing: Vec<f64>,
    /// Per-axis trapezoid weights: h/2 on the two end nodes, h inside.
    axis_weights: Vec<Vec<f64>>,
    /// Tensor product of the axis weights, one entry per node.
    quad_weights: ArrayD<f64>,
    /// Per-axis face weights: spacing along the axis times the cross-axis
    /// trapezoid weights. Boundary faces carry weight 0.
    face_weights: Vec<ArrayD<f64>>,
    coords: Vec<Vec<f64>>,
    volume: f64,
}

impl Grid {
    /// Build a grid from per-axis node counts and (low, high) bounds.
    pub fn new(nodes_per_axis: &[usize], bounds: &[(f64, f64)]) -> Result<Arc<Self>, GridError> {
        let dim = nodes_per_axis.len();
        if !(1..=3).contains(&dim) {
            return Err(GridError::InvalidDim(dim));
        }
        if bounds.len() != dim {
            return Err(GridError::MismatchedAxes {
                nodes: dim,
                bounds: bounds.len(),
            });
        }
        for (axis, &n) in nodes_per_axis.iter().enumerate() {
            if n < 3 {
                return Err(GridError::TooFewNodes { axis, nodes: n });
            }
        }
        for (axis, &(low, high)) in bounds.iter().enumerate() {
            if !(low < high) || !low.is_finite() || !high.is_finite() {
                return Err(GridError::InvalidBounds { axis, low, high });
            }
        }

        let shape = nodes_per_axis.to_vec();
        let spacing: Vec<f64> = (0..dim)
            .map(|a| (bounds[a].1 - bounds[a].0) / (shape[a] - 1) as f64)
            .collect();
        let coords: Vec<Vec<f64>> = (0..dim)
            .map(|a| {
                (0..shape[a])
                    .map(|i| bounds[a].0 + i as f64 * spacing[a])
                    .collect()
            })
            .collect();
        let axis_weights: Vec<Vec<f64>> = (0..dim)
            .map(|a| {
                let h = spacing[a];
                (0..shape[a])
                    .map(|i| {
                        if i == 0 || i == shape[a] - 1 {
                            0.5 * h
                        } else {
                            h
                        }
                    })
                    .collect()
            })
            .collect();

        let mut quad_weights = ArrayD::ones(IxDyn(&shape));
        for a in 0..dim {
            scale_along_axis(&mut quad_weights, a, &axis_weights[a]);
        }

        let mut face_weights = Vec::with_capacity(dim);
        for a in 0..dim {
            let mut fshape = shape.clone();
            fshape[a] += 1;
            let mut fw = ArrayD::ones(IxDyn(&fshape));
            for b in 0..dim {
                if b != a {
                    scale_along_axis(&mut fw, b, &axis_weights[b]);
                }
            }
            let mut along = vec![spacing[a]; shape[a] + 1];
            along[0] = 0.0;
            along[shape[a]] = 0.0;
            scale_along_axis(&mut fw, a, &along);
            face_weights.push(fw);
        }

        let volume = (0..dim)
            .map(|a| bounds[a].1 - bounds[a].0)
            .product::<f64>();

        Ok(Arc::new(Grid {
            shape,
            bounds: bounds.to_vec(),
            spacing,
            axis_weights,
            quad_weights,
            face_weights,
            coords,
            volume,
        }))
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Node coordinates along one axis.
    pub fn coords(&self, axis: usize) -> &[f64] {
        &self.coords[axis]
    }

    pub fn axis_weights(&self, axis: usize) -> &[f64] {
        &self.axis_weights[axis]
    }

    pub fn quad_weights(&self) -> &ArrayD<f64> {
        &self.quad_weights
    }

    pub fn face_weights(&self, axis: usize) -> &ArrayD<f64> {
        &self.face_weights[axis]
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn node_count(&self) -> usize {
        self.shape.iter().product()
    }

    fn check_axis(&self, axis: usize) -> Result<(), GridError> {
        if axis >= self.dim() {
            return Err(GridError::AxisOutOfRange {
                axis,
                dim: self.dim(),
            });
        }
        Ok(())
    }
}

fn scale_along_axis(arr: &mut ArrayD<f64>, axis: usize, factors: &[f64]) {
    debug_assert_eq!(arr.shape()[axis], factors.len());
    for (idx, v) in arr.indexed_iter_mut() {
        *v *= factors[idx[axis]];
    }
}

/// Nodal scalar field on a [`Grid`].
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: ArrayD<f64>,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: ArrayD<f64>) -> Result<Self, GridError> {
        if values.shape() != grid.shape() {
            return Err(GridError::ShapeMismatch {
                expected: grid.shape().to_vec(),
                found: values.shape().to_vec(),
            });
        }
        let f = Field { grid, values };
        f.check_finite()?;
        Ok(f)
    }

    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Field {
            grid: grid.clone(),
            values: ArrayD::zeros(IxDyn(grid.shape())),
        }
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        Field {
            grid: grid.clone(),
            values: ArrayD::from_elem(IxDyn(grid.shape()), c),
        }
    }

    /// Evaluate `f` at every node coordinate.
    pub fn from_fn(
        grid: &Arc<Grid>,
        mut f: impl FnMut(&[f64]) -> f64,
    ) -> Result<Self, GridError> {
        let mut values = ArrayD::zeros(IxDyn(grid.shape()));
        let mut x = vec![0.0; grid.dim()];
        for (idx, v) in values.indexed_iter_mut() {
            for a in 0..grid.dim() {
                x[a] = grid.coords(a)[idx[a]];
            }
            *v = f(&x);
        }
        Field::new(grid.clone(), values)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &ArrayD<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut ArrayD<f64> {
        &mut self.values
    }

    pub fn check_finite(&self) -> Result<(), GridError> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(GridError::NonFinite)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Trapezoid approximation of the integral over the box; exact for
    /// piecewise-linear data.
    pub fn integrate(&self) -> f64 {
        self.values
            .iter()
            .zip(self.grid.quad_weights().iter())
            .map(|(v, w)| v * w)
            .sum()
    }

    /// Weighted L2 inner product with another field on the same grid.
    pub fn inner(&self, other: &Field) -> f64 {
        assert!(
            self.same_grid(other),
            "inner product requires fields on the same grid"
        );
        self.values
            .iter()
            .zip(other.values.iter())
            .zip(self.grid.quad_weights().iter())
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    /// Weighted L2(Omega) norm.
    pub fn l2_norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// (integral of |f|^r)^(1/r) via trapezoid quadrature.
    pub fn lp_norm(&self, r: f64) -> Result<f64, GridError> {
        if !(r >= 1.0) {
            return Err(GridError::InvalidExponent(r));
        }
        let sum: f64 = self
            .values
            .iter()
            .zip(self.grid.quad_weights().iter())
            .map(|(v, w)| v.abs().powf(r) * w)
            .sum();
        Ok(sum.powf(1.0 / r))
    }

    /// Plain euclidean norm of the nodal values (no quadrature weights).
    /// Used for solver step residuals.
    pub fn vec_norm2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.integrate() / self.grid.volume()
    }

    /// Two-point differences on the faces of `axis`; boundary faces are 0.
    pub fn face_gradient(&self, axis: usize) -> Result<FaceField, GridError> {
        self.grid.check_axis(axis)?;
        let n = self.grid.shape()[axis];
        let h = self.grid.spacing()[axis];
        let mut out = FaceField::zeros(&self.grid, axis);
        let hi = self.values.slice_axis(Axis(axis), Slice::from(1..));
        let lo = self
            .values
            .slice_axis(Axis(axis), Slice::from(..n as isize - 1));
        let mut interior = out
            .values
            .slice_axis_mut(Axis(axis), Slice::from(1..n as isize));
        ndarray::Zip::from(&mut interior)
            .and(&hi)
            .and(&lo)
            .for_each(|o, &a, &b| *o = (a - b) / h);
        Ok(out)
    }

    /// Face-quadrature value of sum_i ||D_i f||_p^p (gradient part of the
    /// W^1_p seminorm raised to the p-th power).
    pub fn grad_lp_pow(&self, p: f64) -> f64 {
        (0..self.grid.dim())
            .map(|a| {
                self.face_gradient(a)
                    .expect("axis in range")
                    .lp_pow(p)
            })
            .sum()
    }

    pub fn same_grid(&self, other: &Field) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.mapv(f),
        }
    }

    /// self + c * other
    pub fn add_scaled(&self, c: f64, other: &Field) -> Field {
        assert!(self.same_grid(other));
        let mut values = self.values.clone();
        values.zip_mut_with(&other.values, |a, b| *a += c * b);
        Field {
            grid: self.grid.clone(),
            values,
        }
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.add_scaled(-1.0, other)
    }

    pub fn mul_pointwise(&self, other: &Field) -> Field {
        assert!(self.same_grid(other));
        let mut values = self.values.clone();
        values.zip_mut_with(&other.values, |a, b| *a *= *b);
        Field {
            grid: self.grid.clone(),
            values,
        }
    }
}

/// Scalar samples on the faces of one axis (one entry per face, including
/// the two boundary faces of that axis).
#[derive(Debug, Clone)]
pub struct FaceField {
    grid: Arc<Grid>,
    axis: usize,
    values: ArrayD<f64>,
}

impl FaceField {
    pub fn zeros(grid: &Arc<Grid>, axis: usize) -> Self {
        let mut shape = grid.shape().to_vec();
        shape[axis] += 1;
        FaceField {
            grid: grid.clone(),
            axis,
            values: ArrayD::zeros(IxDyn(&shape)),
        }
    }

    pub fn axis(&self) -> usize {
        self.axis
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &ArrayD<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut ArrayD<f64> {
        &mut self.values
    }

    /// Apply `f` to every face value, keeping boundary faces untouched when
    /// they are zero (f(0) is written as-is; callers that must preserve the
    /// zero boundary structure pass maps with f(0) = 0).
    pub fn map(&self, f: impl Fn(f64) -> f64) -> FaceField {
        FaceField {
            grid: self.grid.clone(),
            axis: self.axis,
            values: self.values.mapv(f),
        }
    }

    pub fn add_scaled(&self, c: f64, other: &FaceField) -> FaceField {
        assert_eq!(self.axis, other.axis);
        let mut values = self.values.clone();
        values.zip_mut_with(&other.values, |a, b| *a += c * b);
        FaceField {
            grid: self.grid.clone(),
            axis: self.axis,
            values,
        }
    }

    pub fn mul_pointwise(&self, other: &FaceField) -> FaceField {
        assert_eq!(self.axis, other.axis);
        let mut values = self.values.clone();
        values.zip_mut_with(&other.values, |a, b| *a *= *b);
        FaceField {
            grid: self.grid.clone(),
            axis: self.axis,
            values,
        }
    }

    /// Nodal divergence contribution of this face flux: node k receives
    /// (q_above - q_below) / w_k with w_k the axis trapezoid weight, which
    /// is the one-sided control-volume form at the boundary nodes. Together
    /// with zero boundary faces this telescopes to zero total mass.
    pub fn divergence(&self) -> Field {
        let a = self.axis;
        let n = self.grid.shape()[a];
        let hi = self.values.slice_axis(Axis(a), Slice::from(1..));
        let lo = self.values.slice_axis(Axis(a), Slice::from(..n as isize));
        let mut values = &hi - &lo;
        let inv: Vec<f64> = self.grid.axis_weights(a).iter().map(|w| 1.0 / w).collect();
        scale_along_axis(&mut values, a, &inv);
        Field {
            grid: self.grid.clone(),
            values,
        }
    }

    /// Arithmetic average of the two adjacent faces at each node; boundary
    /// nodes average against the zero boundary face.
    pub fn to_node(&self) -> Field {
        let a = self.axis;
        let n = self.grid.shape()[a];
        let hi = self.values.slice_axis(Axis(a), Slice::from(1..));
        let lo = self.values.slice_axis(Axis(a), Slice::from(..n as isize));
        let values = (&hi + &lo) * 0.5;
        Field {
            grid: self.grid.clone(),
            values,
        }
    }

    /// Face-weighted integral of |q|^p (boundary faces carry weight 0).
    pub fn lp_pow(&self, p: f64) -> f64 {
        self.values
            .iter()
            .zip(self.grid.face_weights(self.axis).iter())
            .map(|(q, w)| q.abs().powf(p) * w)
            .sum()
    }

    /// Face-weighted inner product.
    pub fn inner_face(&self, other: &FaceField) -> f64 {
        assert_eq!(self.axis, other.axis);
        self.values
            .iter()
            .zip(other.values.iter())
            .zip(self.grid.face_weights(self.axis).iter())
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest interior-face count along the staggered axis.
    pub fn face_count(&self) -> usize {
        self.values.shape()[self.axis]
    }

    pub fn boundary_faces_zero(&self) -> bool {
        let a = self.axis;
        let n = self.grid.shape()[a];
        let first = self.values.slice_axis(Axis(a), Slice::from(0..1));
        let last = self
            .values
            .slice_axis(Axis(a), Slice::from(n as isize..n as isize + 1));
        first.iter().all(|v| *v == 0.0) && last.iter().all(|v| *v == 0.0)
    }
}
