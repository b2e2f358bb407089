//! Implicit Euler integration of the parabolic problem
//! u_t - sum_i D_i(|D_i u|^{p-2} D_i u) = h with zero nonlinear Neumann flux.
//!
//! Each step solves u_{k+1} - dt * Phi(u_{k+1}) = u_k + dt * h(t_{k+1}) by
//! damped Newton; the linearized systems are symmetric positive definite
//! after multiplication by the quadrature weights and are solved with
//! matrix-free conjugate gradients.

use crate::grid::Field;
use crate::plap;
use crate::problem::{Mode, ProblemSpec, SolverConfig, SolverError, Trajectory};

/// Diagnostics of one accepted implicit step.
#[derive(Debug, Clone, Copy)]
pub struct StepReport {
    pub residual: f64,
    pub newton_iterations: usize,
    pub picard_sweeps: usize,
}

const PICARD_SWEEPS: usize = 20;
const CG_REL_TOL: f64 = 1e-12;

/// One implicit Euler step from `u_k` at time `t_k`.
pub fn step(
    u_k: &Field,
    t_k: f64,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
) -> Result<(Field, StepReport), SolverError> {
    cfg.validate()?;
    let params = spec.operator_params(cfg.eps_reg)?;
    let dt = cfg.dt;
    let t_next = t_k + dt;
    let grid = spec.grid.clone();
    let h_next = spec.h.at(t_next, &grid)?;
    let b = u_k.add_scaled(dt, &h_next);
    let weights = Field::new(grid.clone(), grid.quad_weights().clone())
        .expect("quadrature weights are finite");

    let g_of = |u: &Field| -> Field { u.sub(&plap::apply(u, &params).scale(dt)).sub(&b) };

    let mut u = u_k.clone();
    let mut residual = g_of(&u);
    let mut res_norm = residual.vec_norm2();
    if !res_norm.is_finite() {
        return Err(SolverError::NonFinite {
            t: t_next,
            context: "newton residual",
        });
    }

    let mut newton_iterations = 0;
    let mut stalled = false;
    while res_norm > cfg.newton_tol && newton_iterations < cfg.newton_max_iters {
        let coeffs = plap::jacobian_coefficients(&u, &params)?;
        // Solve (W + dt A^T F C A) delta = -W r; symmetric positive definite
        // in the plain dot product.
        let rhs = residual.mul_pointwise(&weights).scale(-1.0);
        let delta = conjugate_gradient(
            |v| {
                v.sub(&plap::jacobian_apply(&coeffs, v).scale(dt))
                    .mul_pointwise(&weights)
            },
            &rhs,
        );

        let mut accepted = false;
        let mut alpha = 1.0;
        let alphas = if cfg.line_search { 12 } else { 1 };
        for _ in 0..alphas {
            let trial = u.add_scaled(alpha, &delta);
            let trial_res = g_of(&trial);
            let trial_norm = trial_res.vec_norm2();
            if !trial_norm.is_finite() {
                return Err(SolverError::NonFinite {
                    t: t_next,
                    context: "newton update",
                });
            }
            if trial_norm <= (1.0 - 1e-4 * alpha) * res_norm {
                u = trial;
                residual = trial_res;
                res_norm = trial_norm;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        newton_iterations += 1;
        if !accepted {
            stalled = true;
            break;
        }
    }

    let mut picard_sweeps = 0;
    if res_norm > cfg.newton_tol && (stalled || newton_iterations >= cfg.newton_max_iters) {
        // Lagged-diffusivity sweeps: freeze the flux coefficient at the
        // current iterate and solve the linear step for the next one.
        for _ in 0..PICARD_SWEEPS {
            let coeffs = plap::flux_coefficients(&u, &params);
            let rhs = b.mul_pointwise(&weights);
            u = conjugate_gradient(
                |v| {
                    v.sub(&plap::jacobian_apply(&coeffs, v).scale(dt))
                        .mul_pointwise(&weights)
                },
                &rhs,
            );
            picard_sweeps += 1;
            residual = g_of(&u);
            res_norm = residual.vec_norm2();
            if !res_norm.is_finite() {
                return Err(SolverError::NonFinite {
                    t: t_next,
                    context: "picard sweep",
                });
            }
            if res_norm <= cfg.newton_tol {
                break;
            }
        }
    }

    if res_norm > cfg.newton_tol {
        return Err(SolverError::NewtonDiverged {
            t: t_next,
            residual: res_norm,
            iterations: newton_iterations + picard_sweeps,
        });
    }
    u.check_finite()
        .map_err(|_| SolverError::NonFinite {
            t: t_next,
            context: "accepted state",
        })?;

    Ok((
        u,
        StepReport {
            residual: res_norm,
            newton_iterations,
            picard_sweeps,
        },
    ))
}

/// Integrate the parabolic problem over [0, T].
pub fn solve(spec: &ProblemSpec, cfg: &SolverConfig) -> Result<Trajectory, SolverError> {
    spec.validate()?;
    cfg.validate()?;
    if spec.mode != Mode::Parabolic {
        return Err(SolverError::ModeMismatch {
            expected: "parabolic",
            found: spec.mode.as_str(),
        });
    }
    let steps = cfg.step_count(spec.horizon);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut residuals = Vec::with_capacity(steps);
    times.push(0.0);
    states.push(spec.u0.clone());
    for k in 0..steps {
        let t_k = k as f64 * cfg.dt;
        let (next, report) = step(states.last().unwrap(), t_k, spec, cfg)?;
        times.push((k + 1) as f64 * cfg.dt);
        states.push(next);
        residuals.push(report.residual);
    }
    Ok(Trajectory::assemble(times, states, Vec::new(), residuals))
}

/// Matrix-free CG for symmetric positive definite systems, starting from
/// zero. The fixed iteration order keeps runs bit-reproducible.
fn conjugate_gradient(matvec: impl Fn(&Field) -> Field, rhs: &Field) -> Field {
    let mut x = Field::zeros(rhs.grid());
    let mut r = rhs.clone();
    let mut rs = plain_dot(&r, &r);
    let rhs_norm = rs.sqrt();
    if rhs_norm == 0.0 {
        return x;
    }
    let mut p = r.clone();
    let max_iters = 4 * rhs.grid().node_count();
    for _ in 0..max_iters {
        let ap = matvec(&p);
        let denom = plain_dot(&p, &ap);
        if denom <= 0.0 {
            break;
        }
        let alpha = rs / denom;
        x = x.add_scaled(alpha, &p);
        r = r.add_scaled(-alpha, &ap);
        let rs_next = plain_dot(&r, &r);
        if rs_next.sqrt() <= CG_REL_TOL * rhs_norm {
            break;
        }
        p = r.add_scaled(rs_next / rs, &p);
        rs = rs_next;
    }
    x
}

fn plain_dot(a: &Field, b: &Field) -> f64 {
    a.values()
        .iter()
        .zip(b.values().iter())
        .map(|(x, y)| x * y)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::problem::Source;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn unit_interval(n: usize) -> Arc<Grid> {
        Grid::new(&[n], &[(0.0, 1.0)]).unwrap()
    }

    fn parabolic_spec(p: f64, grid: &Arc<Grid>, u0: Field, h: Source, horizon: f64) -> ProblemSpec {
        ProblemSpec::new_diagnostic(Mode::Parabolic, p, horizon, grid.clone(), u0, None, h).unwrap()
    }

    #[test]
    fn constant_state_is_fixed_point() {
        let g = unit_interval(17);
        let spec = parabolic_spec(3.0, &g, Field::constant(&g, 1.3), Source::Zero, 1.0);
        let cfg = SolverConfig::new(1e-2);
        let (next, report) = step(&spec.u0, 0.0, &spec, &cfg).unwrap();
        assert!(next.sub(&Field::constant(&g, 1.3)).max_abs() < 1e-12);
        assert!(report.residual <= cfg.newton_tol);
    }

    #[test]
    fn p2_eigenmode_step_matches_closed_form() {
        let g = unit_interval(129);
        let u0 = Field::from_fn(&g, |x| (PI * x[0]).cos()).unwrap();
        let spec = parabolic_spec(2.0, &g, u0.clone(), Source::Zero, 1.0);
        let cfg = SolverConfig::new(1e-3);
        let (next, report) = step(&u0, 0.0, &spec, &cfg).unwrap();
        let expected = u0.scale(1.0 / (1.0 + cfg.dt * PI * PI));
        assert!(next.sub(&expected).max_abs() < 1e-6);
        assert!(report.residual <= cfg.newton_tol);
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let g = unit_interval(17);
        let spec = parabolic_spec(3.0, &g, Field::zeros(&g), Source::Zero, 0.01);
        let cfg = SolverConfig::new(1e-3);
        let traj = solve(&spec, &cfg).unwrap();
        for s in &traj.states {
            assert_eq!(s.max_abs(), 0.0);
        }
    }

    #[test]
    fn mass_is_conserved_without_source() {
        let g = unit_interval(33);
        let u0 = Field::from_fn(&g, |x| 1.0 + (PI * x[0]).cos()).unwrap();
        let spec = parabolic_spec(3.0, &g, u0, Source::Zero, 0.02);
        let mut cfg = SolverConfig::new(1e-3);
        cfg.newton_tol = 1e-12;
        let traj = solve(&spec, &cfg).unwrap();
        let m0 = traj.states[0].integrate();
        for s in &traj.states {
            assert_relative_eq!(s.integrate(), m0, max_relative = 1e-10);
        }
    }

    #[test]
    fn mass_identity_with_source() {
        let g = unit_interval(33);
        let u0 = Field::from_fn(&g, |x| (2.0 * PI * x[0]).cos()).unwrap();
        let h = Source::closed(|t, x| (1.0 + t) * (PI * x[0]).sin());
        let spec = parabolic_spec(3.0, &g, u0, h.clone(), 0.01);
        let mut cfg = SolverConfig::new(1e-3);
        cfg.newton_tol = 1e-12;
        let traj = solve(&spec, &cfg).unwrap();
        for k in 0..traj.step_count() {
            let dm = traj.states[k + 1].integrate() - traj.states[k].integrate();
            let src = h.at(traj.times[k + 1], &g).unwrap().integrate() * cfg.dt;
            assert_relative_eq!(dm, src, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn gradient_energy_dissipates_without_source() {
        let g = unit_interval(33);
        let u0 = Field::from_fn(&g, |x| (PI * x[0]).cos()).unwrap();
        for p in [2.5, 3.0, 4.0] {
            let spec = parabolic_spec(p, &g, u0.clone(), Source::Zero, 0.02);
            let mut cfg = SolverConfig::new(2e-3);
            cfg.newton_tol = 1e-12;
            let traj = solve(&spec, &cfg).unwrap();
            let mut prev = traj.states[0].grad_lp_pow(p) / p;
            for s in traj.states.iter().skip(1) {
                let cur = s.grad_lp_pow(p) / p;
                assert!(
                    cur <= prev + 1e-11 * prev.max(1.0),
                    "p={p}: {cur} > {prev}"
                );
                prev = cur;
            }
        }
    }

    #[test]
    fn step_residuals_meet_tolerance() {
        let g = unit_interval(33);
        let u0 = Field::from_fn(&g, |x| (PI * x[0]).cos()).unwrap();
        let spec = parabolic_spec(3.0, &g, u0, Source::Zero, 0.01);
        let cfg = SolverConfig::new(1e-3);
        let traj = solve(&spec, &cfg).unwrap();
        assert_eq!(traj.step_residuals.len(), traj.step_count());
        for r in &traj.step_residuals {
            assert!(*r <= cfg.newton_tol);
        }
    }

    #[test]
    fn unreachable_tolerance_aborts_with_diagnostics() {
        let g = unit_interval(17);
        let u0 = Field::from_fn(&g, |x| (PI * x[0]).cos()).unwrap();
        let spec = parabolic_spec(3.0, &g, u0, Source::Zero, 0.01);
        let mut cfg = SolverConfig::new(1e-3);
        cfg.newton_tol = 1e-30;
        cfg.newton_max_iters = 3;
        match solve(&spec, &cfg) {
            Err(SolverError::NewtonDiverged { t, residual, iterations }) => {
                assert!(t > 0.0);
                assert!(residual > 0.0);
                assert!(iterations >= 3);
            }
            other => panic!("expected NewtonDiverged, got {other:?}"),
        }
    }
}
