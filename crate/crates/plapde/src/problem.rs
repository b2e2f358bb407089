//! Problem statements, solver configuration and the trajectory container
//! shared by every time integrator in the crate.

use crate::grid::{Field, Grid, GridError};
use crate::plap::{FluxField, OperatorError};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Parabolic,
    Hyperbolic,
    Integro,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Parabolic => "parabolic",
            Mode::Hyperbolic => "hyperbolic",
            Mode::Integro => "integro",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "parabolic" => Ok(Mode::Parabolic),
            "hyperbolic" => Ok(Mode::Hyperbolic),
            "integro" => Ok(Mode::Integro),
            other => Err(format!(
                "unknown mode '{other}' (expected parabolic, hyperbolic or integro)"
            )),
        }
    }
}

/// Shared closed-form function of (t, x).
pub type SpaceTimeFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Time-indexed scalar source, either a closed form over (t, x) or
/// per-step samples interpolated linearly in time.
#[derive(Clone)]
pub enum Source {
    Zero,
    Closed(SpaceTimeFn),
    Samples { times: Vec<f64>, fields: Vec<Field> },
}

impl std::fmt::Debug for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::Zero => write!(f, "Source::Zero"),
            Source::Closed(_) => write!(f, "Source::Closed(..)"),
            Source::Samples { times, .. } => {
                write!(f, "Source::Samples({} samples)", times.len())
            }
        }
    }
}

impl Source {
    pub fn closed(f: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Source::Closed(Arc::new(f))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Source::Zero)
    }

    /// Sample the source at time `t` as a nodal field.
    pub fn at(&self, t: f64, grid: &Arc<Grid>) -> Result<Field, SolverError> {
        match self {
            Source::Zero => Ok(Field::zeros(grid)),
            Source::Closed(f) => {
                Field::from_fn(grid, |x| f(t, x)).map_err(SolverError::Grid)
            }
            Source::Samples { times, fields } => {
                if times.is_empty() {
                    return Ok(Field::zeros(grid));
                }
                if t <= times[0] {
                    return Ok(fields[0].clone());
                }
                if t >= *times.last().unwrap() {
                    return Ok(fields.last().unwrap().clone());
                }
                let j = times.partition_point(|&s| s <= t);
                let (t0, t1) = (times[j - 1], times[j]);
                let w = (t - t0) / (t1 - t0);
                Ok(fields[j - 1].scale(1.0 - w).add_scaled(w, &fields[j]))
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("solver mode mismatch: problem is {found}, expected {expected}")]
    ModeMismatch { expected: &'static str, found: &'static str },
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
    #[error("u1 is required for hyperbolic and integro problems")]
    MissingInitialVelocity,
    #[error("initial data does not live on the problem grid")]
    DataGridMismatch,
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("newton tolerance must be positive, got {0}")]
    NonPositiveTolerance(f64),
    #[error("Newton did not converge at t = {t}: residual {residual:e} after {iterations} iterations")]
    NewtonDiverged { t: f64, residual: f64, iterations: usize },
    #[error("non-finite value detected at t = {t} during {context}")]
    NonFinite { t: f64, context: &'static str },
    #[error("stability guard violated at t = {t}: dt = {dt:e} exceeds {limit:e}; suggested dt <= {limit:e}")]
    StabilityGuard { t: f64, dt: f64, limit: f64 },
}

/// Full statement of one evolution problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub mode: Mode,
    pub p: f64,
    /// Allows the linear p = 2 operator for analytic-reduction diagnostics.
    pub p2_diagnostic: bool,
    /// Final time T.
    pub horizon: f64,
    pub grid: Arc<Grid>,
    pub u0: Field,
    /// Initial velocity; required for hyperbolic/integro modes.
    pub u1: Option<Field>,
    pub h: Source,
}

impl ProblemSpec {
    pub fn new(
        mode: Mode,
        p: f64,
        horizon: f64,
        grid: Arc<Grid>,
        u0: Field,
        u1: Option<Field>,
        h: Source,
    ) -> Result<Self, SolverError> {
        let spec = ProblemSpec {
            mode,
            p,
            p2_diagnostic: false,
            horizon,
            grid,
            u0,
            u1,
            h,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Construction with the p = 2 diagnostic mode unlocked.
    pub fn new_diagnostic(
        mode: Mode,
        p: f64,
        horizon: f64,
        grid: Arc<Grid>,
        u0: Field,
        u1: Option<Field>,
        h: Source,
    ) -> Result<Self, SolverError> {
        let spec = ProblemSpec {
            mode,
            p,
            p2_diagnostic: true,
            horizon,
            grid,
            u0,
            u1,
            h,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.horizon > 0.0) {
            return Err(SolverError::NonPositiveHorizon(self.horizon));
        }
        let p_ok = self.p > 2.0 || (self.p2_diagnostic && self.p >= 2.0);
        if !p_ok {
            return Err(SolverError::Operator(OperatorError::ExponentOutOfRange(
                self.p,
            )));
        }
        if self.u0.grid().shape() != self.grid.shape() {
            return Err(SolverError::DataGridMismatch);
        }
        match self.mode {
            Mode::Parabolic => {}
            Mode::Hyperbolic | Mode::Integro => {
                let u1 = self
                    .u1
                    .as_ref()
                    .ok_or(SolverError::MissingInitialVelocity)?;
                if u1.grid().shape() != self.grid.shape() {
                    return Err(SolverError::DataGridMismatch);
                }
            }
        }
        Ok(())
    }

    /// Operator parameters with the given regularization, honouring the
    /// diagnostic flag.
    pub fn operator_params(
        &self,
        eps_reg: f64,
    ) -> Result<crate::plap::OperatorParams, OperatorError> {
        if self.p2_diagnostic {
            crate::plap::OperatorParams::diagnostic(self.p, eps_reg)
        } else {
            crate::plap::OperatorParams::new(self.p, eps_reg)
        }
    }

    pub fn u1_or_zero(&self) -> Field {
        self.u1
            .clone()
            .unwrap_or_else(|| Field::zeros(&self.grid))
    }
}

/// Time-stepping configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    /// Tolerance on the plain 2-norm of the step residual.
    pub newton_tol: f64,
    pub newton_max_iters: usize,
    pub eps_reg: f64,
    pub line_search: bool,
}

impl SolverConfig {
    pub fn new(dt: f64) -> Self {
        SolverConfig {
            dt,
            newton_tol: 1e-10,
            newton_max_iters: 50,
            eps_reg: 1e-8,
            line_search: true,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt > 0.0) {
            return Err(SolverError::NonPositiveStep(self.dt));
        }
        if !(self.newton_tol > 0.0) {
            return Err(SolverError::NonPositiveTolerance(self.newton_tol));
        }
        Ok(())
    }

    /// Number of steps covering [0, T]: round-half-up of T/dt, at least 1.
    /// Keeps the final time within dt/2 of the horizon.
    pub fn step_count(&self, horizon: f64) -> usize {
        ((horizon / self.dt).round() as usize).max(1)
    }
}

/// Time-indexed sequence of states with per-step time derivatives and, for
/// hyperbolic/integro runs, the accumulated flux integrals.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Field>,
    /// Forward differences `(states[k+1] - states[k]) / dt`, one per step.
    pub dstates: Vec<Field>,
    /// Running integral of the nonlinear flux, aligned with `states`.
    /// Empty for parabolic runs.
    pub accumulated_flux: Vec<FluxField>,
    /// Newton step residuals of accepted states; empty for explicit runs.
    pub step_residuals: Vec<f64>,
}

impl Trajectory {
    pub fn step_count(&self) -> usize {
        self.states.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn final_state(&self) -> &Field {
        self.states.last().expect("trajectory is non-empty")
    }

    pub(crate) fn assemble(
        times: Vec<f64>,
        states: Vec<Field>,
        accumulated_flux: Vec<FluxField>,
        step_residuals: Vec<f64>,
    ) -> Self {
        assert!(states.len() >= 2, "trajectory needs at least one step");
        assert_eq!(times.len(), states.len());
        let dt = times[1] - times[0];
        let dstates = states
            .windows(2)
            .map(|w| w[1].sub(&w[0]).scale(1.0 / dt))
            .collect();
        Trajectory {
            times,
            states,
            dstates,
            accumulated_flux,
            step_residuals,
        }
    }
}
