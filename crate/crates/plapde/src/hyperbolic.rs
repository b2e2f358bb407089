//! Explicit integration of the hyperbolic problem
//! u_tt - sum_i D_i(|D_i u|^{p-2} D_i u) = h (leapfrog) and of the
//! equivalent integro-differential first-order form
//! u_t = sum_i D_i int_0^t (|D_i u|^{p-2} D_i u) dtau + H + u1.
//!
//! The two paths cross-validate each other: with identical data and grids
//! their trajectories converge to each other under dt refinement.

use crate::grid::Field;
use crate::plap::{self, FluxField};
use crate::problem::{Mode, ProblemSpec, SolverConfig, SolverError, Source, Trajectory};

const GUARD_EPS: f64 = 1e-12;

/// Marching state of the wave/integro integrators: the two time levels, the
/// running flux integral and the running source integral H(t, x).
#[derive(Debug, Clone)]
pub struct WaveState {
    pub u_prev: Field,
    pub u_curr: Field,
    pub t: f64,
    pub accumulated_flux: FluxField,
    pub accumulated_h: Field,
}

/// Startup state at t = 0. The ghost level is Taylor-consistent:
/// u_prev = u0 - dt u1 + (dt^2/2)(Phi(u0) + h(0)).
pub fn initial_state(spec: &ProblemSpec, cfg: &SolverConfig) -> Result<WaveState, SolverError> {
    let params = spec.operator_params(cfg.eps_reg)?;
    let u1 = spec.u1_or_zero();
    let h0 = spec.h.at(0.0, &spec.grid)?;
    let accel = plap::apply(&spec.u0, &params).add_scaled(1.0, &h0);
    let u_prev = spec
        .u0
        .add_scaled(-cfg.dt, &u1)
        .add_scaled(0.5 * cfg.dt * cfg.dt, &accel);
    Ok(WaveState {
        u_prev,
        u_curr: spec.u0.clone(),
        t: 0.0,
        accumulated_flux: FluxField::zeros(&spec.grid),
        accumulated_h: Field::zeros(&spec.grid),
    })
}

/// Trapezoid update of H(t, x) = int_0^t h dtau from its value at t - dt.
pub fn accumulate_h(
    h: &Source,
    t: f64,
    dt: f64,
    prior: &Field,
) -> Result<Field, SolverError> {
    let grid = prior.grid();
    let a = h.at(t - dt, grid)?;
    let b = h.at(t, grid)?;
    Ok(prior.add_scaled(0.5 * dt, &a).add_scaled(0.5 * dt, &b))
}

/// Largest stable time step at the current state:
/// 0.5 * min_spacing / (max_face |s|^{(p-2)/2} + eps).
pub fn stability_limit(u: &Field, p: f64) -> f64 {
    let mut speed = 0.0_f64;
    for a in 0..u.grid().dim() {
        let s = u.face_gradient(a).expect("axis in range");
        speed = speed.max(
            s.values()
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs().powf((p - 2.0) * 0.5))),
        );
    }
    0.5 * u.grid().min_spacing() / (speed + GUARD_EPS)
}

fn check_guard(state: &WaveState, spec: &ProblemSpec, cfg: &SolverConfig) -> Result<(), SolverError> {
    let limit = stability_limit(&state.u_curr, spec.p);
    if cfg.dt > limit {
        return Err(SolverError::StabilityGuard {
            t: state.t,
            dt: cfg.dt,
            limit,
        });
    }
    Ok(())
}

/// One leapfrog step: u_next = 2 u_curr - u_prev + dt^2 (Phi(u_curr) + h(t)).
/// Accumulators advance by the trapezoid rule.
pub fn step_wave(
    state: &WaveState,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
) -> Result<WaveState, SolverError> {
    check_guard(state, spec, cfg)?;
    let params = spec.operator_params(cfg.eps_reg)?;
    let dt = cfg.dt;
    let h_t = spec.h.at(state.t, &spec.grid)?;
    let accel = plap::apply(&state.u_curr, &params).add_scaled(1.0, &h_t);
    let u_next = state
        .u_curr
        .scale(2.0)
        .sub(&state.u_prev)
        .add_scaled(dt * dt, &accel);
    if !u_next.is_finite() {
        return Err(SolverError::NonFinite {
            t: state.t + dt,
            context: "leapfrog update",
        });
    }
    let flux_curr = plap::flux(&state.u_curr, &params);
    let flux_next = plap::flux(&u_next, &params);
    let accumulated_flux = state
        .accumulated_flux
        .add_scaled(0.5 * dt, &flux_curr)
        .add_scaled(0.5 * dt, &flux_next);
    let accumulated_h = accumulate_h(&spec.h, state.t + dt, dt, &state.accumulated_h)?;
    Ok(WaveState {
        u_prev: state.u_curr.clone(),
        u_curr: u_next,
        t: state.t + dt,
        accumulated_flux,
        accumulated_h,
    })
}

/// One step of the first-order integro-differential form:
/// u_next = u_curr + dt (div A_k + H_k + u1), then A advances with the flux
/// of the new state. Deliberately first order; it exists for equivalence
/// auditing, not accuracy.
pub fn step_integro(
    state: &WaveState,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
) -> Result<WaveState, SolverError> {
    check_guard(state, spec, cfg)?;
    let params = spec.operator_params(cfg.eps_reg)?;
    let dt = cfg.dt;
    let u1 = spec.u1_or_zero();
    let rate = state
        .accumulated_flux
        .divergence()
        .add_scaled(1.0, &state.accumulated_h)
        .add_scaled(1.0, &u1);
    let u_next = state.u_curr.add_scaled(dt, &rate);
    if !u_next.is_finite() {
        return Err(SolverError::NonFinite {
            t: state.t + dt,
            context: "integro update",
        });
    }
    let accumulated_flux = state
        .accumulated_flux
        .add_scaled(dt, &plap::flux(&u_next, &params));
    let accumulated_h = accumulate_h(&spec.h, state.t + dt, dt, &state.accumulated_h)?;
    Ok(WaveState {
        u_prev: state.u_curr.clone(),
        u_curr: u_next,
        t: state.t + dt,
        accumulated_flux,
        accumulated_h,
    })
}

/// Integrate the hyperbolic problem (leapfrog) or its integro-differential
/// form over [0, T], keeping per-step flux-integral snapshots for auditing.
pub fn solve(spec: &ProblemSpec, cfg: &SolverConfig) -> Result<Trajectory, SolverError> {
    spec.validate()?;
    cfg.validate()?;
    if spec.mode == Mode::Parabolic {
        return Err(SolverError::ModeMismatch {
            expected: "hyperbolic or integro",
            found: spec.mode.as_str(),
        });
    }
    let steps = cfg.step_count(spec.horizon);
    let mut state = initial_state(spec, cfg)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut fluxes = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(spec.u0.clone());
    fluxes.push(state.accumulated_flux.clone());
    for k in 0..steps {
        state = match spec.mode {
            Mode::Hyperbolic => step_wave(&state, spec, cfg)?,
            Mode::Integro => step_integro(&state, spec, cfg)?,
            Mode::Parabolic => unreachable!(),
        };
        // keep node times exact multiples of dt instead of accumulating
        state.t = (k + 1) as f64 * cfg.dt;
        times.push(state.t);
        states.push(state.u_curr.clone());
        fluxes.push(state.accumulated_flux.clone());
    }
    Ok(Trajectory::assemble(times, states, fluxes, Vec::new()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn unit_interval(n: usize) -> Arc<Grid> {
        Grid::new(&[n], &[(0.0, 1.0)]).unwrap()
    }

    fn wave_spec(
        mode: Mode,
        p: f64,
        grid: &Arc<Grid>,
        u0: Field,
        u1: Field,
        h: Source,
        horizon: f64,
    ) -> ProblemSpec {
        ProblemSpec::new_diagnostic(mode, p, horizon, grid.clone(), u0, Some(u1), h).unwrap()
    }

    #[test]
    fn accumulate_h_examples() {
        let g = unit_interval(9);
        let zero = Field::zeros(&g);
        // h = 0 keeps H = 0
        let h0 = accumulate_h(&Source::Zero, 0.5, 0.1, &zero).unwrap();
        assert_eq!(h0.max_abs(), 0.0);
        // h = c gives H(t) = c t exactly
        let hc = Source::closed(|_, _| 2.0);
        let mut prior = Field::zeros(&g);
        for k in 0..10 {
            prior = accumulate_h(&hc, (k + 1) as f64 * 0.1, 0.1, &prior).unwrap();
        }
        assert_relative_eq!(prior.values()[ndarray::IxDyn(&[0])], 2.0, epsilon = 1e-13);
        // h(tau) = tau gives H(t) = t^2/2 exactly (trapezoid exact on linears)
        let ht = Source::closed(|t, _| t);
        let mut prior = Field::zeros(&g);
        for k in 0..10 {
            prior = accumulate_h(&ht, (k + 1) as f64 * 0.1, 0.1, &prior).unwrap();
        }
        assert_relative_eq!(prior.values()[ndarray::IxDyn(&[0])], 0.5, epsilon = 1e-13);
    }

    #[test]
    fn constant_data_stays_constant() {
        let g = unit_interval(17);
        for mode in [Mode::Hyperbolic, Mode::Integro] {
            let spec = wave_spec(
                mode,
                3.0,
                &g,
                Field::constant(&g, 0.7),
                Field::zeros(&g),
                Source::Zero,
                0.05,
            );
            let cfg = SolverConfig::new(1e-3);
            let traj = solve(&spec, &cfg).unwrap();
            for s in &traj.states {
                assert!(s.sub(&Field::constant(&g, 0.7)).max_abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_velocity_grows_linearly() {
        let g = unit_interval(17);
        let spec = wave_spec(
            Mode::Hyperbolic,
            3.0,
            &g,
            Field::zeros(&g),
            Field::constant(&g, 0.3),
            Source::Zero,
            0.05,
        );
        let cfg = SolverConfig::new(1e-3);
        let traj = solve(&spec, &cfg).unwrap();
        for (k, s) in traj.states.iter().enumerate() {
            let expected = 0.3 * traj.times[k];
            assert!(
                s.sub(&Field::constant(&g, expected)).max_abs() < 1e-12,
                "k={k}"
            );
        }
    }

    #[test]
    fn integro_spatial_mean_ode() {
        // spatially constant data: flux vanishes, u(t) = u0 + u1 t + int int h
        let g = unit_interval(17);
        let spec = wave_spec(
            Mode::Integro,
            3.0,
            &g,
            Field::constant(&g, 1.0),
            Field::constant(&g, 0.5),
            Source::closed(|t, _| t),
            0.1,
        );
        let cfg = SolverConfig::new(1e-4);
        let traj = solve(&spec, &cfg).unwrap();
        let t = *traj.times.last().unwrap();
        let expected = 1.0 + 0.5 * t + t * t * t / 6.0;
        let got = traj.final_state().mean();
        assert!((got - expected).abs() < 2e-4, "got {got}, want {expected}");
    }

    #[test]
    fn p2_eigenmode_tracks_cosine_in_time() {
        let g = unit_interval(65);
        let u0 = Field::from_fn(&g, |x| (PI * x[0]).cos()).unwrap();
        let spec = wave_spec(
            Mode::Hyperbolic,
            2.0,
            &g,
            u0,
            Field::zeros(&g),
            Source::Zero,
            0.5,
        );
        let cfg = SolverConfig::new(2e-3);
        let traj = solve(&spec, &cfg).unwrap();
        let t = *traj.times.last().unwrap();
        let exact = Field::from_fn(&g, |x| (PI * x[0]).cos() * (PI * t).cos()).unwrap();
        let err = traj.final_state().sub(&exact).max_abs();
        let h = g.spacing()[0];
        assert!(
            err < 10.0 * (cfg.dt * cfg.dt + h * h),
            "err={err:e} dt^2+h^2={:e}",
            cfg.dt * cfg.dt + h * h
        );
    }

    #[test]
    fn mean_second_difference_identity() {
        let g = unit_interval(33);
        let u0 = Field::from_fn(&g, |x| (PI * x[0]).cos()).unwrap();
        let h = Source::closed(|t, x| (1.0 + t) * (2.0 * PI * x[0]).cos() + 0.3);
        let spec = wave_spec(Mode::Hyperbolic, 3.0, &g, u0, Field::zeros(&g), h.clone(), 0.05);
        let cfg = SolverConfig::new(1e-3);
        let traj = solve(&spec, &cfg).unwrap();
        for k in 1..traj.step_count() {
            let second_diff = traj.states[k + 1].integrate() - 2.0 * traj.states[k].integrate()
                + traj.states[k - 1].integrate();
            let src = cfg.dt * cfg.dt * h.at(traj.times[k], &g).unwrap().integrate();
            assert!(
                (second_diff - src).abs() <= 1e-9 * src.abs().max(1.0),
                "k={k}: {second_diff} vs {src}"
            );
        }
    }

    #[test]
    fn leapfrog_energy_drift_is_second_order() {
        let g = unit_interval(65);
        let u0 = Field::from_fn(&g, |x| (PI * x[0]).cos()).unwrap();
        let drift = |dt: f64| -> f64 {
            let spec = wave_spec(
                Mode::Hyperbolic,
                2.0,
                &g,
                u0.clone(),
                Field::zeros(&g),
                Source::Zero,
                0.4,
            );
            let cfg = SolverConfig::new(dt);
            let traj = solve(&spec, &cfg).unwrap();
            let p = 2.0;
            let energy = |k: usize| {
                0.5 * traj.dstates[k].l2_norm().powi(2)
                    + 0.5 * (traj.states[k].grad_lp_pow(p) + traj.states[k + 1].grad_lp_pow(p))
                        / p
            };
            let e0 = energy(0);
            (0..traj.step_count())
                .map(|k| (energy(k) - e0).abs())
                .fold(0.0_f64, f64::max)
        };
        let d1 = drift(2e-3);
        let d2 = drift(1e-3);
        assert!(d1 / d2 > 3.0, "drift ratio {:.2}", d1 / d2);
    }

    #[test]
    fn leapfrog_is_time_reversible() {
        let g = unit_interval(33);
        let u0 = Field::from_fn(&g, |x| (PI * x[0]).cos()).unwrap();
        let u1 = Field::from_fn(&g, |x| 0.2 * (2.0 * PI * x[0]).cos()).unwrap();
        let spec = wave_spec(Mode::Hyperbolic, 3.0, &g, u0.clone(), u1, Source::Zero, 0.1);
        let cfg = SolverConfig::new(1e-3);
        let traj = solve(&spec, &cfg).unwrap();
        let n = traj.states.len();
        let mut back = WaveState {
            u_prev: traj.states[n - 1].clone(),
            u_curr: traj.states[n - 2].clone(),
            t: 0.0,
            accumulated_flux: FluxField::zeros(&g),
            accumulated_h: Field::zeros(&g),
        };
        for _ in 0..n - 2 {
            back = step_wave(&back, &spec, &cfg).unwrap();
        }
        assert!(back.u_curr.sub(&u0).max_abs() < 1e-8);
    }

    #[test]
    fn stability_guard_aborts_with_suggestion() {
        let g = unit_interval(65);
        let u0 = Field::from_fn(&g, |x| (PI * x[0]).cos()).unwrap();
        let spec = wave_spec(
            Mode::Hyperbolic,
            2.0,
            &g,
            u0,
            Field::zeros(&g),
            Source::Zero,
            0.5,
        );
        let cfg = SolverConfig::new(0.02); // above 0.5 h for h = 1/64
        match solve(&spec, &cfg) {
            Err(SolverError::StabilityGuard { limit, .. }) => {
                assert!(limit > 0.0 && limit < 0.02);
            }
            other => panic!("expected stability guard abort, got {other:?}"),
        }
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let g = unit_interval(17);
        for mode in [Mode::Hyperbolic, Mode::Integro] {
            let spec = wave_spec(mode, 3.0, &g, Field::zeros(&g), Field::zeros(&g), Source::Zero, 0.05);
            let traj = solve(&spec, &SolverConfig::new(1e-3)).unwrap();
            for s in &traj.states {
                assert_eq!(s.max_abs(), 0.0);
            }
        }
    }

    #[test]
    fn wave_and_integro_converge_to_each_other() {
        let g = unit_interval(33);
        let u0 = Field::from_fn(&g, |x| (PI * x[0]).cos()).unwrap();
        let gap = |dt: f64| -> f64 {
            let mk = |mode| {
                wave_spec(
                    mode,
                    3.0,
                    &g,
                    u0.clone(),
                    Field::zeros(&g),
                    Source::Zero,
                    0.1,
                )
            };
            let cfg = SolverConfig::new(dt);
            let a = solve(&mk(Mode::Hyperbolic), &cfg).unwrap();
            let b = solve(&mk(Mode::Integro), &cfg).unwrap();
            let mut acc = 0.0;
            for k in 0..a.states.len() {
                acc += a.states[k].sub(&b.states[k]).l2_norm().powi(2) * dt;
            }
            acc.sqrt()
        };
        let g1 = gap(2e-3);
        let g2 = gap(1e-3);
        let g3 = gap(5e-4);
        assert!(g1 > g2 && g2 > g3, "gaps not monotone: {g1} {g2} {g3}");
    }

    #[test]
    fn accumulated_flux_keeps_zero_boundary_faces() {
        let g = unit_interval(33);
        let u0 = Field::from_fn(&g, |x| (PI * x[0]).cos()).unwrap();
        for mode in [Mode::Hyperbolic, Mode::Integro] {
            let spec = wave_spec(
                mode,
                3.0,
                &g,
                u0.clone(),
                Field::zeros(&g),
                Source::closed(|t, x| (1.0 + t) * (2.0 * PI * x[0]).cos()),
                0.05,
            );
            let traj = solve(&spec, &SolverConfig::new(1e-3)).unwrap();
            for flux in &traj.accumulated_flux {
                assert!(flux.boundary_faces_zero());
            }
        }
    }
}
