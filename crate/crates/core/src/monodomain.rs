//! Parabolic and hyperbolic monodomain time stepping.
//!
//! The hyperbolic model is integrated as the first-order system
//! `dV/dt = Q`, `tau C_m dQ/dt + C_m Q - div(D grad V) = -I - tau dI/dt`,
//! with Godunov splitting of the gating update. Lumped mass multiplies the
//! time derivatives and consistent mass the reaction terms.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::fem::{assemble_mass, assemble_stiffness, cg_solve, lump_mass, CgOptions, FemError, SparseOperator};
use crate::ionic::{IonicModelInstance, ModelError, MAX_STATES};
use crate::mesh::{DiffusionSpec, FiberField, MeshError, SimplicialMesh};
use crate::scalar::Scalar;
use crate::stimulus::StimulusProtocol;

const PAR_NODES: usize = 8192;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("time step {dt} violates the CFL limit {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("non-finite {field} at node {node}, t = {t}")]
    NonFinite { field: &'static str, node: usize, t: f64 },
    #[error("at t = {t}: {source}")]
    At { t: f64, source: Box<SolverError> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntegratorOrder {
    /// Backward/forward Euler IMEX.
    #[default]
    First,
    /// Crank-Nicolson for the linear part, explicit trapezoid for reactions.
    Second,
}

impl TryFrom<u8> for IntegratorOrder {
    type Error = SolverError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Self::First),
            2 => Ok(Self::Second),
            _ => Err(SolverError::Config(format!("integrator order must be 1 or 2, got {v}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonodomainConfig<T> {
    pub tau: T,
    pub c_m: T,
    pub dt: T,
    pub order: IntegratorOrder,
    pub stimuli: Vec<StimulusProtocol<T>>,
    pub cg: CgOptions,
    /// Expected front speed; when set, `dt <= h_min / v_est` is enforced.
    pub v_est: Option<T>,
    /// Adds `tau dS/dt` to the source, so a switched stimulus also acts
    /// through the rate term. Off by default.
    pub stimulus_rate: bool,
}

impl<T: Scalar> MonodomainConfig<T> {
    pub fn new(tau: T, c_m: T, dt: T) -> Self {
        Self {
            tau,
            c_m,
            dt,
            order: IntegratorOrder::First,
            stimuli: Vec::new(),
            cg: CgOptions::default(),
            v_est: None,
            stimulus_rate: false,
        }
    }

    pub fn validate(&self, mesh: &SimplicialMesh<T>) -> Result<(), SolverError> {
        if !(self.tau >= T::zero()) {
            return Err(SolverError::Config("tau must be non-negative".into()));
        }
        if !(self.c_m > T::zero()) {
            return Err(SolverError::Config("C_m must be positive".into()));
        }
        if !(self.dt > T::zero()) {
            return Err(SolverError::Config("dt must be positive".into()));
        }
        for s in &self.stimuli {
            s.validate().map_err(SolverError::Config)?;
        }
        if let Some(v) = self.v_est {
            let limit = mesh.h_min() / v;
            if self.dt > limit {
                return Err(SolverError::Cfl {
                    dt: self.dt.to_f64().unwrap_or(f64::NAN),
                    limit: limit.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(())
    }
}

/// Nodal potential, its time derivative and the gating variables, stored
/// node-major with `n_states` entries per node.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState<T> {
    pub t: T,
    pub v: Vec<T>,
    pub q: Vec<T>,
    pub w: Vec<T>,
    pub n_states: usize,
}

impl<T: Scalar> SolverState<T> {
    /// Every node at the model's resting state with `Q = 0`.
    pub fn rest(n: usize, model: &IonicModelInstance<T>) -> Self {
        let ns = model.n_states();
        let mut w = vec![T::zero(); n * ns];
        for chunk in w.chunks_mut(ns.max(1)).take(if ns == 0 { 0 } else { n }) {
            model.initial_state(chunk);
        }
        Self { t: T::zero(), v: vec![model.rest_potential(); n], q: vec![T::zero(); n], w, n_states: ns }
    }

    pub fn n_nodes(&self) -> usize {
        self.v.len()
    }

    pub fn gates(&self, node: usize) -> &[T] {
        &self.w[node * self.n_states..(node + 1) * self.n_states]
    }

    pub fn check_finite(&self) -> Result<(), SolverError> {
        let t = self.t.to_f64().unwrap_or(f64::NAN);
        for (field, data, stride) in [("V", &self.v, 1), ("Q", &self.q, 1), ("gate", &self.w, self.n_states.max(1))] {
            if let Some(k) = data.iter().position(|x| !x.is_finite()) {
                return Err(SolverError::NonFinite { field, node: k / stride, t });
            }
        }
        Ok(())
    }
}

/// Assembled mass, lumped mass and stiffness on one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Operators<T> {
    pub mass: SparseOperator<T>,
    pub lumped: Vec<T>,
    pub stiffness: SparseOperator<T>,
}

impl<T: Scalar> Operators<T> {
    pub fn assemble(mesh: &SimplicialMesh<T>, fibers: &FiberField<T>, spec: &DiffusionSpec<T>) -> Result<Self, FemError> {
        let mass = assemble_mass(mesh)?;
        let lumped = lump_mass(&mass);
        let stiffness = assemble_stiffness(mesh, fibers, spec)?;
        Ok(Self { mass, lumped, stiffness })
    }

    pub fn n(&self) -> usize {
        self.lumped.len()
    }
}

/// Counters and wall-clock split of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolverStats {
    pub steps: usize,
    pub cg_solves: usize,
    pub cg_iterations_total: usize,
    pub cg_iterations_max: usize,
    pub reaction_time: Duration,
    pub diffusion_time: Duration,
}

impl SolverStats {
    pub(crate) fn record_cg(&mut self, iterations: usize) {
        self.cg_solves += 1;
        self.cg_iterations_total += iterations;
        self.cg_iterations_max = self.cg_iterations_max.max(iterations);
    }

    /// Fraction of the timed work spent in the reaction substeps.
    pub fn reaction_share(&self) -> f64 {
        let r = self.reaction_time.as_secs_f64();
        let total = r + self.diffusion_time.as_secs_f64();
        if total > 0.0 {
            r / total
        } else {
            0.0
        }
    }
}

fn for_each_node<T, F>(v: &[T], q: &[T], w: &mut [T], ns: usize, i_out: &mut [T], j_out: &mut [T], f: F)
where
    T: Scalar,
    F: Fn(T, T, &mut [T], &mut T, &mut T) + Sync,
{
    let n = v.len();
    let width = ns.max(1);
    if ns == 0 {
        let run = |(k, (i, j)): (usize, (&mut T, &mut T))| f(v[k], q[k], &mut [], i, j);
        if n >= PAR_NODES {
            i_out.par_iter_mut().zip(j_out.par_iter_mut()).enumerate().for_each(run);
        } else {
            i_out.iter_mut().zip(j_out.iter_mut()).enumerate().for_each(run);
        }
        return;
    }
    let run = |(k, ((wk, i), j)): (usize, ((&mut [T], &mut T), &mut T))| f(v[k], q[k], wk, i, j);
    if n >= PAR_NODES {
        w.par_chunks_mut(width).zip(i_out.par_iter_mut()).zip(j_out.par_iter_mut()).enumerate().for_each(run);
    } else {
        w.chunks_mut(width).zip(i_out.iter_mut()).zip(j_out.iter_mut()).enumerate().for_each(run);
    }
}

/// Advances the gates by one step with `V` frozen (forward Euler for
/// first order, Heun for second order) and evaluates the nodal current
/// `I* = I(V, w_new)` and, when `with_rate` is set, its rate
/// `J* = dI/dt(V, Q, w_new)`. Otherwise `J*` is zero.
#[allow(clippy::too_many_arguments)]
pub fn reaction_substep<T: Scalar>(
    model: &IonicModelInstance<T>,
    v: &[T],
    q: &[T],
    w: &mut [T],
    dt: T,
    order: IntegratorOrder,
    with_rate: bool,
    i_star: &mut [T],
    j_star: &mut [T],
) {
    let ns = model.n_states();
    let half = T::lit(0.5);
    for_each_node(v, q, w, ns, i_star, j_star, |vk, qk, wk, ik, jk| {
        if ns > 0 {
            let mut g1 = [T::zero(); MAX_STATES];
            model.rates(vk, wk, &mut g1[..ns]);
            match order {
                IntegratorOrder::First => {
                    for s in 0..ns {
                        wk[s] += dt * g1[s];
                    }
                }
                IntegratorOrder::Second => {
                    let mut pred = [T::zero(); MAX_STATES];
                    for s in 0..ns {
                        pred[s] = wk[s] + dt * g1[s];
                    }
                    let mut g2 = [T::zero(); MAX_STATES];
                    model.rates(vk, &pred[..ns], &mut g2[..ns]);
                    for s in 0..ns {
                        wk[s] += half * dt * (g1[s] + g2[s]);
                    }
                }
            }
        }
        *ik = model.i_ion(vk, wk);
        *jk = if with_rate { model.di_ion_dt(vk, qk, wk) } else { T::zero() };
    });
}

/// Nodal reaction `-(I + tau J)` at frozen gates.
pub(crate) fn reaction_values<T: Scalar>(model: &IonicModelInstance<T>, v: &[T], q: &[T], w: &[T], tau: T, out: &mut [T]) {
    let ns = model.n_states();
    let eval = |k: usize| {
        let wk = &w[k * ns..(k + 1) * ns];
        let i = model.i_ion(v[k], wk);
        if tau > T::zero() {
            -(i + tau * model.di_ion_dt(v[k], q[k], wk))
        } else {
            -i
        }
    };
    if v.len() >= PAR_NODES {
        out.par_iter_mut().enumerate().for_each(|(k, o)| *o = eval(k));
    } else {
        out.iter_mut().enumerate().for_each(|(k, o)| *o = eval(k));
    }
}

/// Consistent-mass load vectors `M S` of each stimulus at unit activity.
pub(crate) fn stimulus_loads<T: Scalar>(
    mesh: &SimplicialMesh<T>,
    mass: &SparseOperator<T>,
    stimuli: &[StimulusProtocol<T>],
) -> Vec<Vec<T>> {
    stimuli
        .iter()
        .map(|s| {
            let mut nodal = vec![T::zero(); mesh.n_nodes()];
            for i in s.region.nodes(mesh) {
                nodal[i] = s.amplitude;
            }
            mass.apply(&nodal)
        })
        .collect()
}

pub(crate) fn add_active_loads<T: Scalar>(stimuli: &[StimulusProtocol<T>], loads: &[Vec<T>], t: T, scale: T, out: &mut [T]) {
    for (s, load) in stimuli.iter().zip(loads) {
        if s.is_active(t) {
            for (o, &l) in out.iter_mut().zip(load) {
                *o += scale * l;
            }
        }
    }
}

/// Interface shared by the monodomain and bidomain steppers.
pub trait TimeStepper<T: Scalar> {
    fn step(&mut self) -> Result<(), SolverError>;
    fn time(&self) -> T;
    fn dt(&self) -> T;
    fn potential(&self) -> &[T];
    fn potential_rate(&self) -> &[T];
    fn extracellular(&self) -> Option<&[T]> {
        None
    }
    fn stats(&self) -> &SolverStats;
}

/// Monodomain stepper owning its state.
#[derive(Debug, Clone)]
pub struct MonodomainSolver<T> {
    ops: Operators<T>,
    model: IonicModelInstance<T>,
    config: MonodomainConfig<T>,
    system: SparseOperator<T>,
    loads: Vec<Vec<T>>,
    state: SolverState<T>,
    t0: T,
    stats: SolverStats,
    i_star: Vec<T>,
    j_star: Vec<T>,
    react: Vec<T>,
    rhs: Vec<T>,
    scratch: Vec<T>,
}

impl<T: Scalar> MonodomainSolver<T> {
    pub fn new(
        mesh: &SimplicialMesh<T>,
        ops: Operators<T>,
        model: IonicModelInstance<T>,
        config: MonodomainConfig<T>,
        state: SolverState<T>,
    ) -> Result<Self, SolverError> {
        config.validate(mesh)?;
        model.validate()?;
        let n = mesh.n_nodes();
        if ops.n() != n {
            return Err(FemError::Dimension { expected: n, got: ops.n() }.into());
        }
        if state.v.len() != n || state.q.len() != n || state.w.len() != n * model.n_states() {
            return Err(SolverError::Config("state size does not match mesh and model".into()));
        }
        let (dt, c_m, tau) = (config.dt, config.c_m, config.tau);
        let (diag_scale, k_scale) = match config.order {
            IntegratorOrder::First => (c_m * (tau + dt), dt * dt),
            IntegratorOrder::Second => (c_m * (tau + T::lit(0.5) * dt), T::lit(0.25) * dt * dt),
        };
        let diag: Vec<T> = ops.lumped.iter().map(|&m| diag_scale * m).collect();
        let system = ops.stiffness.scaled_plus_diagonal(k_scale, &diag)?;
        let loads = stimulus_loads(mesh, &ops.mass, &config.stimuli);
        let t0 = state.t;
        Ok(Self {
            ops,
            model,
            config,
            system,
            loads,
            state,
            t0,
            stats: SolverStats::default(),
            i_star: vec![T::zero(); n],
            j_star: vec![T::zero(); n],
            react: vec![T::zero(); n],
            rhs: vec![T::zero(); n],
            scratch: vec![T::zero(); n],
        })
    }

    /// Assembles operators on `mesh` and starts from rest.
    pub fn from_rest(
        mesh: &SimplicialMesh<T>,
        fibers: &FiberField<T>,
        spec: &DiffusionSpec<T>,
        model: IonicModelInstance<T>,
        config: MonodomainConfig<T>,
    ) -> Result<Self, SolverError> {
        let ops = Operators::assemble(mesh, fibers, spec)?;
        let state = SolverState::rest(mesh.n_nodes(), &model);
        Self::new(mesh, ops, model, config, state)
    }

    pub fn state(&self) -> &SolverState<T> {
        &self.state
    }

    pub fn operators(&self) -> &Operators<T> {
        &self.ops
    }

    pub fn config(&self) -> &MonodomainConfig<T> {
        &self.config
    }

    pub fn model(&self) -> &IonicModelInstance<T> {
        &self.model
    }

    fn time_at(&self, steps: usize) -> T {
        self.t0 + T::from_usize_lossy(steps) * self.config.dt
    }

    /// `rhs = tau C_m M_L Q^n - a K V^n + a M R`, where `react` holds the
    /// nodal reaction and the active stimulus loads are added at `t_s`.
    fn build_rhs(&mut self, a: T, t_s: &[(T, T)]) {
        let (tau, c_m) = (self.config.tau, self.config.c_m);
        self.ops.mass.matvec(&self.react, &mut self.rhs);
        for &(t, w) in t_s {
            add_active_loads(&self.config.stimuli, &self.loads, t, w, &mut self.rhs);
        }
        if self.config.stimulus_rate && tau > T::zero() {
            // backward difference of the stimulus as sampled by this scheme
            let (t_n, dt) = (self.state.t, self.config.dt);
            let (ahead, r) = match self.config.order {
                IntegratorOrder::First => (T::zero(), tau / dt),
                IntegratorOrder::Second => (dt, tau / (dt + dt)),
            };
            add_active_loads(&self.config.stimuli, &self.loads, t_n + ahead, r, &mut self.rhs);
            add_active_loads(&self.config.stimuli, &self.loads, t_n - dt, -r, &mut self.rhs);
        }
        self.ops.stiffness.matvec(&self.state.v, &mut self.scratch);
        for i in 0..self.rhs.len() {
            self.rhs[i] = tau * c_m * self.ops.lumped[i] * self.state.q[i] - a * self.scratch[i] + a * self.rhs[i];
        }
    }

    fn solve(&mut self, x: &mut [T]) -> Result<(), SolverError> {
        let rep = cg_solve(&self.system, &self.rhs, x, &self.config.cg)?;
        self.stats.record_cg(rep.iterations);
        Ok(())
    }

    fn step_first(&mut self, t_n: T) -> Result<(), SolverError> {
        let dt = self.config.dt;
        let tau = self.config.tau;
        let clock = Instant::now();
        reaction_substep(
            &self.model,
            &self.state.v,
            &self.state.q,
            &mut self.state.w,
            dt,
            IntegratorOrder::First,
            tau > T::zero(),
            &mut self.i_star,
            &mut self.j_star,
        );
        for i in 0..self.react.len() {
            self.react[i] = -(self.i_star[i] + tau * self.j_star[i]);
        }
        self.stats.reaction_time += clock.elapsed();

        let clock = Instant::now();
        self.build_rhs(dt, &[(t_n, T::one())]);
        let mut q = self.state.q.clone();
        self.solve(&mut q)?;
        for i in 0..q.len() {
            self.state.v[i] += dt * q[i];
        }
        self.state.q = q;
        self.stats.diffusion_time += clock.elapsed();
        Ok(())
    }

    fn step_second(&mut self, t_n: T) -> Result<(), SolverError> {
        let dt = self.config.dt;
        let tau = self.config.tau;
        let half = T::lit(0.5);
        let t_np1 = t_n + dt;

        let clock = Instant::now();
        reaction_substep(
            &self.model,
            &self.state.v,
            &self.state.q,
            &mut self.state.w,
            dt,
            IntegratorOrder::Second,
            false,
            &mut self.i_star,
            &mut self.j_star,
        );
        reaction_values(&self.model, &self.state.v, &self.state.q, &self.state.w, tau, &mut self.react);
        let r_n = self.react.clone();
        self.stats.reaction_time += clock.elapsed();

        // predictor with the reaction frozen at t^n
        let clock = Instant::now();
        self.build_rhs(half * dt, &[(t_n, T::one())]);
        let mut qbar = self.state.q.clone();
        self.solve(&mut qbar)?;
        let v_star: Vec<T> = self.state.v.iter().zip(&qbar).map(|(&v, &qb)| v + dt * qb).collect();
        let q_star: Vec<T> = if tau > T::zero() {
            qbar.iter().zip(&self.state.q).map(|(&qb, &q)| qb + qb - q).collect()
        } else {
            qbar.clone()
        };
        self.stats.diffusion_time += clock.elapsed();

        let clock = Instant::now();
        reaction_values(&self.model, &v_star, &q_star, &self.state.w, tau, &mut self.react);
        for (r, &a) in self.react.iter_mut().zip(&r_n) {
            *r = half * (*r + a);
        }
        self.stats.reaction_time += clock.elapsed();

        // corrector with the trapezoidal reaction average
        let clock = Instant::now();
        self.build_rhs(half * dt, &[(t_n, half), (t_np1, half)]);
        self.solve(&mut qbar)?;
        for i in 0..qbar.len() {
            self.state.v[i] += dt * qbar[i];
            self.state.q[i] = if tau > T::zero() { qbar[i] + qbar[i] - self.state.q[i] } else { qbar[i] };
        }
        self.stats.diffusion_time += clock.elapsed();
        Ok(())
    }
}

impl<T: Scalar> TimeStepper<T> for MonodomainSolver<T> {
    fn step(&mut self) -> Result<(), SolverError> {
        let t_n = self.state.t;
        let result = match self.config.order {
            IntegratorOrder::First => self.step_first(t_n),
            IntegratorOrder::Second => self.step_second(t_n),
        };
        self.stats.steps += 1;
        self.state.t = self.time_at(self.stats.steps);
        result
            .and_then(|_| self.state.check_finite())
            .map_err(|e| SolverError::At { t: t_n.to_f64().unwrap_or(f64::NAN), source: Box::new(e) })
    }

    fn time(&self) -> T {
        self.state.t
    }

    fn dt(&self) -> T {
        self.config.dt
    }

    fn potential(&self) -> &[T] {
        &self.state.v
    }

    fn potential_rate(&self) -> &[T] {
        &self.state.q
    }

    fn stats(&self) -> &SolverStats {
        &self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::SparseOperator;
    use crate::ionic::{AlievPanfilovParams, CubicParams, IonicModelInstance, ModelKind};
    use crate::mesh::{line_mesh, uniform_fiber_frame};
    use crate::stimulus::Region;
    use approx::assert_relative_eq;

    fn single_node(tau: f64, order: IntegratorOrder, model: IonicModelInstance<f64>, v0: f64, q0: f64) -> MonodomainSolver<f64> {
        single_node_dt(tau, order, model, v0, q0, 0.1)
    }

    fn single_node_dt(
        tau: f64,
        order: IntegratorOrder,
        model: IonicModelInstance<f64>,
        v0: f64,
        q0: f64,
        dt: f64,
    ) -> MonodomainSolver<f64> {
        let mesh = line_mesh(1.0, 1).unwrap();
        // two decoupled unit nodes: M = M_L = I, K = 0
        let ops = Operators {
            mass: SparseOperator::identity(2),
            lumped: vec![1.0, 1.0],
            stiffness: SparseOperator::from_triplets(2, [(0, 0, 0.0), (1, 1, 0.0)]).unwrap(),
        };
        let mut state = SolverState::rest(2, &model);
        state.v = vec![v0; 2];
        state.q = vec![q0; 2];
        let mut cfg = MonodomainConfig::new(tau, 1.0, dt);
        cfg.order = order;
        cfg.cg.rel_tol = 1e-14;
        MonodomainSolver::new(&mesh, ops, model, cfg, state).unwrap()
    }

    #[test]
    fn scalar_reduction_of_first_order_step() {
        let m = IonicModelInstance::cubic(0.1).unwrap();
        let (tau, dt, v, q) = (0.5, 0.1, 0.7, 0.3);
        let mut s = single_node(tau, IntegratorOrder::First, m, v, q);
        s.step().unwrap();
        let i = m.i_ion(v, &[]);
        let j = m.di_ion_dt(v, q, &[]);
        // reference form with reaction entering as -(I + tau J)
        let want = (tau * q - dt * (i + tau * j)) / (tau + dt);
        assert_relative_eq!(s.state().q[0], want, epsilon = 1e-13);
        assert_relative_eq!(s.state().v[0], v + dt * want, epsilon = 1e-13);
    }

    #[test]
    fn reaction_substep_examples() {
        let fk = IonicModelInstance::fenton_karma(3).unwrap();
        let mut w = vec![1.0, 1.0];
        let (mut i, mut j) = (vec![0.0], vec![0.0]);
        reaction_substep(&fk, &[0.5], &[0.0], &mut w, 0.25, IntegratorOrder::First, false, &mut i, &mut j);
        assert_relative_eq!(w[0], 1.0 - 0.25 / 3.33, epsilon = 1e-14);

        let ap = IonicModelInstance::aliev_panfilov(AlievPanfilovParams::default()).unwrap();
        let mut w = vec![0.0];
        reaction_substep(&ap, &[0.0], &[0.0], &mut w, 0.1, IntegratorOrder::Second, true, &mut i, &mut j);
        assert_eq!(w, vec![0.0]);

        let mk = IonicModelInstance::mckean(0.1).unwrap();
        reaction_substep(&mk, &[0.5], &[2.0], &mut [], 0.1, IntegratorOrder::First, true, &mut i, &mut j);
        assert_relative_eq!(i[0], -0.5);
        assert_relative_eq!(j[0], 2.0);
    }

    #[test]
    fn linear_decay_second_order() {
        // McKean far below threshold is exactly I = V, so with K = 0 the
        // parabolic equation is dV/dt = -V
        let err = |dt: f64, order: IntegratorOrder| {
            let mesh = line_mesh(1.0, 1).unwrap();
            let ops = Operators {
                mass: SparseOperator::identity(2),
                lumped: vec![1.0, 1.0],
                stiffness: SparseOperator::from_triplets(2, [(0, 0, 0.0), (1, 1, 0.0)]).unwrap(),
            };
            let model = IonicModelInstance::mckean(0.4).unwrap();
            let mut state = SolverState::rest(2, &model);
            state.v = vec![0.3; 2];
            let mut cfg = MonodomainConfig::new(0.0, 1.0, dt);
            cfg.order = order;
            cfg.cg.rel_tol = 1e-15;
            let mut s = MonodomainSolver::new(&mesh, ops, model, cfg, state).unwrap();
            let steps = (1.0 / dt).round() as usize;
            for _ in 0..steps {
                s.step().unwrap();
            }
            (s.state().v[0] - 0.3 * (-1.0f64).exp()).abs()
        };
        let r2 = (err(0.1, IntegratorOrder::Second) / err(0.05, IntegratorOrder::Second)).log2();
        let r1 = (err(0.1, IntegratorOrder::First) / err(0.05, IntegratorOrder::First)).log2();
        assert!(r2 > 1.9 && r2 < 2.1, "order {r2}");
        assert!(r1 > 0.9 && r1 < 1.1, "order {r1}");
    }

    #[test]
    fn o2_and_o1_agree_to_first_order_per_step() {
        let m = IonicModelInstance::cubic(0.1).unwrap();
        let diff = |dt: f64| {
            let mut a = single_node_dt(0.3, IntegratorOrder::First, m, 0.6, 0.2, dt);
            let mut b = single_node_dt(0.3, IntegratorOrder::Second, m, 0.6, 0.2, dt);
            a.step().unwrap();
            b.step().unwrap();
            (a.state().v[0] - b.state().v[0]).abs()
        };
        let ratio = diff(0.02) / diff(0.01);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn stimulus_rate_charges_passive_membrane_at_onset() {
        // passive membrane under a switched uniform current A: the rate term
        // makes V' jump to A / C_m at onset instead of relaxing over tau
        let passive = IonicModelInstance::new(ModelKind::Cubic(CubicParams { k: 0.0, alpha: 0.1 }));
        let run = |rate: bool| {
            let mut s = single_node(0.5, IntegratorOrder::First, passive, 0.0, 0.0);
            s.config.stimulus_rate = rate;
            s.config.stimuli.push(StimulusProtocol::pulse(Region::Interval { lo: -1.0, hi: 2.0 }, 2.0, 0.0, 1.0));
            s.loads = vec![vec![2.0, 2.0]];
            let mut q = Vec::new();
            for _ in 0..5 {
                s.step().unwrap();
                q.push(s.state().q[0]);
            }
            q
        };
        for q in run(true) {
            assert_relative_eq!(q, 2.0, epsilon = 1e-12);
        }
        let lagged = run(false);
        assert_relative_eq!(lagged[0], 2.0 * 0.1 / 0.6, epsilon = 1e-12);
    }

    fn line_solver(tau: f64, order: IntegratorOrder, stim: bool) -> MonodomainSolver<f64> {
        let mesh = line_mesh(10.0, 200).unwrap();
        let fibers = uniform_fiber_frame(&mesh, 0.0);
        let spec = DiffusionSpec::isotropic(1.0, 1.0).unwrap();
        let model = IonicModelInstance::mckean(0.1).unwrap();
        let mut cfg = MonodomainConfig::new(tau, 1.0, 0.01);
        cfg.order = order;
        if stim {
            cfg.stimuli.push(StimulusProtocol::pulse(Region::Interval { lo: 4.5, hi: 5.5 }, 1.0, 0.0, 1.0));
        }
        MonodomainSolver::from_rest(&mesh, &fibers, &spec, model, cfg).unwrap()
    }

    #[test]
    fn rest_stays_at_rest() {
        for order in [IntegratorOrder::First, IntegratorOrder::Second] {
            let mut s = line_solver(0.5, order, false);
            for _ in 0..50 {
                s.step().unwrap();
            }
            assert!(s.state().v.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn centered_stimulus_is_symmetric() {
        for order in [IntegratorOrder::First, IntegratorOrder::Second] {
            let mut s = line_solver(0.5, order, true);
            for _ in 0..300 {
                s.step().unwrap();
            }
            let v = &s.state().v;
            let n = v.len();
            for i in 0..n / 2 {
                assert!((v[i] - v[n - 1 - i]).abs() < 1e-10);
            }
            assert!(v[100] > 0.5);
        }
    }

    #[test]
    fn tau_zero_is_parabolic_bitwise() {
        let mut a = line_solver(0.0, IntegratorOrder::First, true);
        let mut b = line_solver(0.0, IntegratorOrder::First, true);
        for _ in 0..100 {
            a.step().unwrap();
            b.step().unwrap();
        }
        assert_eq!(a.state().v, b.state().v);
    }

    #[test]
    fn uniform_subthreshold_decay_follows_ode() {
        let mut s = line_solver(0.0, IntegratorOrder::First, false);
        s.state.v.iter_mut().for_each(|v| *v = 0.05);
        for _ in 0..100 {
            s.step().unwrap();
        }
        let v0 = s.state().v[0];
        assert!(s.state().v.iter().all(|&x| (x - v0).abs() < 1e-9));
        // forward Euler reaction: V_{n+1} = (1 - dt) V_n
        assert_relative_eq!(v0, 0.05 * 0.99f64.powi(100), max_relative = 1e-8);
    }

    #[test]
    fn lumped_mass_conserved_without_reaction() {
        let mesh = line_mesh(5.0, 100).unwrap();
        let fibers = uniform_fiber_frame(&mesh, 0.0);
        let spec = DiffusionSpec::isotropic(1.0, 1.0).unwrap();
        let model = IonicModelInstance::new(crate::ionic::ModelKind::Cubic(crate::ionic::CubicParams { k: 0.0, alpha: 0.5 }));
        let ops = Operators::assemble(&mesh, &fibers, &spec).unwrap();
        let mut state = SolverState::rest(mesh.n_nodes(), &model);
        for (i, v) in state.v.iter_mut().enumerate() {
            *v = (-((i as f64 - 40.0) / 5.0).powi(2)).exp();
        }
        let mut cfg = MonodomainConfig::new(0.0, 1.0, 0.01);
        cfg.cg.rel_tol = 1e-13;
        let total = |s: &SolverState<f64>, ml: &[f64]| s.v.iter().zip(ml).map(|(v, m)| v * m).sum::<f64>();
        let ml = ops.lumped.clone();
        let mut s = MonodomainSolver::new(&mesh, ops, model, cfg, state).unwrap();
        let before = total(s.state(), &ml);
        for _ in 0..100 {
            s.step().unwrap();
        }
        assert!((total(s.state(), &ml) - before).abs() < 1e-10);
    }

    #[test]
    fn cfl_check() {
        let mesh = line_mesh(1.0, 100).unwrap();
        let mut cfg = MonodomainConfig::new(0.1, 1.0, 0.02);
        cfg.v_est = Some(1.0);
        assert!(matches!(cfg.validate(&mesh), Err(SolverError::Cfl { .. })));
        cfg.dt = 0.005;
        assert!(cfg.validate(&mesh).is_ok());
        assert!(MonodomainConfig::new(-1.0, 1.0, 0.1).validate(&mesh).is_err());
    }

    #[test]
    fn nan_is_reported_with_node() {
        let mut s = line_solver(0.0, IntegratorOrder::First, false);
        s.state.v[17] = f64::NAN;
        match s.step() {
            Err(SolverError::At { source, .. }) => assert!(matches!(*source, SolverError::Fem(_) | SolverError::NonFinite { .. })),
            other => panic!("{other:?}"),
        }
    }
}
