//! Constructive Galerkin approximation specialized to the parabolic
//! problem: a tensor-cosine basis (zero normal derivative on every box
//! face, exactly), the per-step residual system tested against the basis,
//! and a damped Newton solve guarded by an empirical acute-angle
//! certificate sampled on coefficient spheres.

use crate::grid::{Field, Grid};
use crate::plap;
use crate::problem::{ProblemSpec, SolverConfig, SolverError, Trajectory};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GalerkinError {
    #[error("basis needs at least one mode")]
    EmptyBasis,
    #[error("truncation {m} exceeds the {available} modes resolvable on this grid (Nyquist limit per axis)")]
    NyquistExceeded { m: usize, available: usize },
    #[error("coefficient vector has length {found}, basis has {expected} modes")]
    CoefficientLength { expected: usize, found: usize },
    #[error("galerkin Newton failed at t = {t}: residual {residual:e} after {iterations} iterations")]
    NewtonFailed { t: f64, residual: f64, iterations: usize },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Tensor-cosine Neumann basis evaluated on the quadrature grid.
///
/// Modes are ordered by total wavenumber with lexicographic tie-breaks, so
/// truncation is deterministic. On uniform grids the trapezoid rule makes
/// the Gram matrix of these modes diagonal to roundoff.
#[derive(Debug, Clone)]
pub struct BasisSet {
    grid: Arc<Grid>,
    modes: Vec<Vec<usize>>,
    evaluated: Vec<Field>,
    norms: Vec<f64>,
}

impl BasisSet {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn mode(&self, j: usize) -> &[usize] {
        &self.modes[j]
    }

    pub fn evaluated(&self, j: usize) -> &Field {
        &self.evaluated[j]
    }

    /// Weighted L2 norm of mode j on the quadrature grid.
    pub fn norm(&self, j: usize) -> f64 {
        self.norms[j]
    }

    /// Linear combination sum_j c_j phi_j.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<Field, GalerkinError> {
        self.check_len(coeffs)?;
        let mut out = Field::zeros(&self.grid);
        for (c, phi) in coeffs.iter().zip(self.evaluated.iter()) {
            out = out.add_scaled(*c, phi);
        }
        Ok(out)
    }

    /// Orthogonal projection coefficients <f, phi_j> / ||phi_j||^2.
    pub fn project(&self, f: &Field) -> Vec<f64> {
        self.evaluated
            .iter()
            .zip(self.norms.iter())
            .map(|(phi, n)| f.inner(phi) / (n * n))
            .collect()
    }

    /// Largest relative off-diagonal Gram entry; diagnostic for the
    /// orthogonality invariant.
    pub fn gram_offdiagonal_rel(&self) -> f64 {
        let m = self.len();
        let mut worst = 0.0_f64;
        for j in 0..m {
            for k in 0..j {
                let g = self.evaluated[j].inner(&self.evaluated[k]);
                worst = worst.max(g.abs() / (self.norms[j] * self.norms[k]));
            }
        }
        worst
    }

    fn check_len(&self, coeffs: &[f64]) -> Result<(), GalerkinError> {
        if coeffs.len() != self.len() {
            return Err(GalerkinError::CoefficientLength {
                expected: self.len(),
                found: coeffs.len(),
            });
        }
        Ok(())
    }
}

/// First `m` tensor-cosine modes on `grid`, ordered by total wavenumber
/// (ties lexicographic). Errors when `m` asks for modes beyond the per-axis
/// Nyquist limit (n - 1) / 2.
pub fn neumann_basis(m: usize, grid: &Arc<Grid>) -> Result<BasisSet, GalerkinError> {
    if m == 0 {
        return Err(GalerkinError::EmptyBasis);
    }
    let dim = grid.dim();
    // k = n - 1 is the sampling limit: two nodes per wavelength. Up to
    // there the sampled cosines stay exactly orthogonal under the
    // trapezoid weights, so the full set spans the nodal space.
    let nyquist: Vec<usize> = (0..dim).map(|a| grid.shape()[a] - 1).collect();
    let mut tuples: Vec<Vec<usize>> = vec![vec![]];
    for a in 0..dim {
        let mut next = Vec::new();
        for t in &tuples {
            for k in 0..=nyquist[a] {
                let mut t2 = t.clone();
                t2.push(k);
                next.push(t2);
            }
        }
        tuples = next;
    }
    tuples.sort_by(|a, b| {
        let (sa, sb) = (a.iter().sum::<usize>(), b.iter().sum::<usize>());
        sa.cmp(&sb).then_with(|| a.cmp(b))
    });
    if m > tuples.len() {
        return Err(GalerkinError::NyquistExceeded {
            m,
            available: tuples.len(),
        });
    }
    tuples.truncate(m);

    let mut evaluated = Vec::with_capacity(m);
    let mut norms = Vec::with_capacity(m);
    for t in &tuples {
        let t = t.clone();
        let bounds = grid.bounds().to_vec();
        let phi = Field::from_fn(grid, |x| {
            let mut v = 1.0;
            for (a, &k) in t.iter().enumerate() {
                let (low, high) = bounds[a];
                v *= (k as f64 * std::f64::consts::PI * (x[a] - low) / (high - low)).cos();
            }
            v
        })
        .expect("cosine evaluation is finite");
        norms.push(phi.l2_norm());
        evaluated.push(phi);
    }
    Ok(BasisSet {
        grid: grid.clone(),
        modes: tuples,
        evaluated,
        norms,
    })
}

/// Residual of the implicit-Euler Galerkin system at coefficient vector
/// `coeffs`: Phi_k = <(u_c - u_k)/dt - Phi(u_c) - h(t), phi_k> with
/// u_c = sum_j c_j phi_j. `t` is the implicit time level.
pub fn residual(
    coeffs: &[f64],
    u_k: &Field,
    t: f64,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    basis: &BasisSet,
) -> Result<Vec<f64>, GalerkinError> {
    let params = spec.operator_params(cfg.eps_reg).map_err(SolverError::from)?;
    let u_c = basis.reconstruct(coeffs)?;
    let h_t = spec.h.at(t, &spec.grid)?;
    let r_field = u_c
        .sub(u_k)
        .scale(1.0 / cfg.dt)
        .sub(&plap::apply(&u_c, &params))
        .sub(&h_t);
    Ok((0..basis.len())
        .map(|k| r_field.inner(basis.evaluated(k)))
        .collect())
}

/// Outcome of sampling <Phi(c), c> on coefficient spheres.
#[derive(Debug, Clone)]
pub struct AcuteAngleCertificate {
    /// Data-dependent radius estimate r such that the pairing is
    /// guaranteed nonnegative for ||c|| >= r.
    pub radius: f64,
    pub radii: Vec<f64>,
    pub min_pairing: Vec<f64>,
    pub passed: bool,
    pub seed: u64,
}

/// Radius estimate: the pairing satisfies
/// <Phi(c), c> >= ||u_c|| (||u_c||/dt - ||u_k/dt + h||), and
/// ||u_c|| >= min_j ||phi_j|| ||c||, so any radius at or above
/// ||u_k + dt h|| / min_j ||phi_j|| certifies the acute angle.
pub fn certificate_radius(
    u_k: &Field,
    t: f64,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    basis: &BasisSet,
) -> Result<f64, GalerkinError> {
    let h_t = spec.h.at(t, &spec.grid)?;
    let data_norm = u_k.add_scaled(cfg.dt, &h_t).l2_norm();
    let min_phi = basis
        .norms
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    Ok(data_norm / min_phi * (1.0 + 1e-9))
}

const CERT_DIRECTIONS: usize = 64;
const CERT_SCALES: [f64; 3] = [1.0, 2.0, 4.0];

/// Sample the acute-angle condition on spheres of radius r, 2r, 4r with 64
/// seeded random directions each. Empirical evidence for solvability, not
/// a proof.
pub fn acute_angle_certificate(
    u_k: &Field,
    t: f64,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    basis: &BasisSet,
    seed: u64,
) -> Result<AcuteAngleCertificate, GalerkinError> {
    let r = certificate_radius(u_k, t, spec, cfg, basis)?;
    let m = basis.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut radii = Vec::with_capacity(CERT_SCALES.len());
    let mut min_pairing = Vec::with_capacity(CERT_SCALES.len());
    let slack = 1e-9 * (1.0 + r * r / cfg.dt);
    let mut passed = true;
    for scale in CERT_SCALES {
        let radius = r * scale;
        radii.push(radius);
        if radius == 0.0 {
            min_pairing.push(0.0);
            continue;
        }
        let mut min_val = f64::INFINITY;
        for _ in 0..CERT_DIRECTIONS {
            let mut dir: Vec<f64> = (0..m)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            for v in &mut dir {
                *v *= radius / norm;
            }
            let res = residual(&dir, u_k, t, spec, cfg, basis)?;
            let pairing: f64 = res.iter().zip(dir.iter()).map(|(a, b)| a * b).sum();
            min_val = min_val.min(pairing);
        }
        if min_val < -slack {
            passed = false;
        }
        min_pairing.push(min_val);
    }
    Ok(AcuteAngleCertificate {
        radius: r,
        radii,
        min_pairing,
        passed,
        seed,
    })
}

/// Converged coefficients of one Galerkin step plus the certificate that
/// preceded the solve.
#[derive(Debug, Clone)]
pub struct GalerkinState {
    pub coeffs: Vec<f64>,
    pub residual: Vec<f64>,
    pub residual_norm: f64,
    pub newton_iterations: usize,
    pub certificate: AcuteAngleCertificate,
}

/// Solve one implicit-Euler Galerkin step by damped Newton, recording the
/// acute-angle certificate. A failed certificate only warns (the solve
/// proceeds); a failed Newton is an error.
pub fn solve_step(
    u_k: &Field,
    t: f64,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    basis: &BasisSet,
    seed: u64,
) -> Result<GalerkinState, GalerkinError> {
    let params = spec.operator_params(cfg.eps_reg).map_err(SolverError::from)?;
    let certificate = acute_angle_certificate(u_k, t, spec, cfg, basis, seed)?;
    let m = basis.len();

    let mut coeffs = basis.project(u_k);
    let mut res = residual(&coeffs, u_k, t, spec, cfg, basis)?;
    let mut res_norm = norm2(&res);
    let mut iterations = 0;
    while res_norm > cfg.newton_tol && iterations < cfg.newton_max_iters {
        let u_c = basis.reconstruct(&coeffs)?;
        let jac_coeffs =
            plap::jacobian_coefficients(&u_c, &params).map_err(SolverError::from)?;
        let mut jac = DMatrix::zeros(m, m);
        for j in 0..m {
            let phi_j = basis.evaluated(j);
            let col = phi_j
                .scale(1.0 / cfg.dt)
                .sub(&plap::jacobian_apply(&jac_coeffs, phi_j));
            for k in 0..m {
                jac[(k, j)] = col.inner(basis.evaluated(k));
            }
        }
        let rhs = DVector::from_iterator(m, res.iter().map(|v| -v));
        let delta = jac.lu().solve(&rhs).ok_or(GalerkinError::NewtonFailed {
            t,
            residual: res_norm,
            iterations,
        })?;

        let mut alpha = 1.0;
        let mut accepted = false;
        let tries = if cfg.line_search { 12 } else { 1 };
        for _ in 0..tries {
            let trial: Vec<f64> = coeffs
                .iter()
                .zip(delta.iter())
                .map(|(c, d)| c + alpha * d)
                .collect();
            let trial_res = residual(&trial, u_k, t, spec, cfg, basis)?;
            let trial_norm = norm2(&trial_res);
            if trial_norm <= (1.0 - 1e-4 * alpha) * res_norm {
                coeffs = trial;
                res = trial_res;
                res_norm = trial_norm;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }
    if res_norm > cfg.newton_tol {
        return Err(GalerkinError::NewtonFailed {
            t,
            residual: res_norm,
            iterations,
        });
    }
    Ok(GalerkinState {
        coeffs,
        residual: res,
        residual_norm: res_norm,
        newton_iterations: iterations,
        certificate,
    })
}

/// March the spectral step over [0, T]. The trajectory starts from the
/// basis projection of u0 (the honest spectral initial state) so it can be
/// compared against the finite-difference path.
pub fn solve(
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    basis: &BasisSet,
    seed: u64,
) -> Result<(Trajectory, Vec<GalerkinState>), GalerkinError> {
    spec.validate()?;
    cfg.validate().map_err(GalerkinError::Solver)?;
    let steps = cfg.step_count(spec.horizon);
    let mut coeffs = basis.project(&spec.u0);
    let mut times = vec![0.0];
    let mut states = vec![basis.reconstruct(&coeffs)?];
    let mut reports = Vec::with_capacity(steps);
    for k in 0..steps {
        let t_next = (k + 1) as f64 * cfg.dt;
        let state = solve_step(states.last().unwrap(), t_next, spec, cfg, basis, seed)?;
        coeffs = state.coeffs.clone();
        times.push(t_next);
        states.push(basis.reconstruct(&coeffs)?);
        reports.push(state);
    }
    Ok((
        Trajectory::assemble(times, states, Vec::new(), Vec::new()),
        reports,
    ))
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
