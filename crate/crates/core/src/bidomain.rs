//! Hyperbolic bidomain stepping with a pure-Neumann extracellular solve.
//!
//! With `K_i`, `K_e` the intra- and extracellular stiffness matrices and
//! `K_ie = K_i + K_e`, one step solves
//!
//! ```text
//! [C_m (tau_i + dt) M_L + dt^2 K_i] Q' = tau_i C_m M_L Q - dt K_i (V + V_e) + dt M R
//! V' = V + dt Q'
//! K_ie V_e' = -K_i V' + (tau_e - tau_i) [C_m M_L (Q' - Q) / dt + M J] + M S_e
//! ```
//!
//! where `R = -(I + tau_i J) + S` is the nodal reaction. `V_e` is kept at
//! zero mean. Equal relaxation times give the hyperbolic-elliptic system and
//! zero relaxation times the classic parabolic-elliptic bidomain model.

use std::time::Instant;

use crate::fem::{assemble_mass, assemble_stiffness, cg_solve, lump_mass, CgOptions, FemError, SparseOperator};
use crate::ionic::IonicModelInstance;
use crate::mesh::{DiffusionSpec, FiberField, SimplicialMesh};
use crate::monodomain::{
    add_active_loads, reaction_substep, stimulus_loads, IntegratorOrder, SolverError, SolverStats, TimeStepper,
};
use crate::scalar::Scalar;
use crate::stimulus::StimulusProtocol;

#[derive(Debug, Clone, PartialEq)]
pub struct BidomainConfig<T> {
    pub tau_i: T,
    pub tau_e: T,
    pub c_m: T,
    pub dt: T,
    /// Transmembrane current stimuli, entering the `V` equation.
    pub stimuli: Vec<StimulusProtocol<T>>,
    /// Extracellular current stimuli, entering the `V_e` equation.
    pub extracellular_stimuli: Vec<StimulusProtocol<T>>,
    pub cg: CgOptions,
    /// Number of `Q` / `V_e` sweeps per step. One sweep lags `V_e`.
    pub coupling_iterations: usize,
}

impl<T: Scalar> BidomainConfig<T> {
    pub fn new(tau_i: T, tau_e: T, c_m: T, dt: T) -> Self {
        Self {
            tau_i,
            tau_e,
            c_m,
            dt,
            stimuli: Vec::new(),
            extracellular_stimuli: Vec::new(),
            cg: CgOptions::default(),
            coupling_iterations: 1,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.tau_i >= T::zero() && self.tau_e >= T::zero()) {
            return Err(SolverError::Config("relaxation times must be non-negative".into()));
        }
        if !(self.c_m > T::zero()) {
            return Err(SolverError::Config("C_m must be positive".into()));
        }
        if !(self.dt > T::zero()) {
            return Err(SolverError::Config("dt must be positive".into()));
        }
        if self.coupling_iterations == 0 {
            return Err(SolverError::Config("coupling_iterations must be at least one".into()));
        }
        for s in self.stimuli.iter().chain(&self.extracellular_stimuli) {
            s.validate().map_err(SolverError::Config)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BidomainOperators<T> {
    pub mass: SparseOperator<T>,
    pub lumped: Vec<T>,
    pub k_i: SparseOperator<T>,
    pub k_ie: SparseOperator<T>,
}

impl<T: Scalar> BidomainOperators<T> {
    pub fn assemble(
        mesh: &SimplicialMesh<T>,
        fibers: &FiberField<T>,
        intra: &DiffusionSpec<T>,
        extra: &DiffusionSpec<T>,
    ) -> Result<Self, FemError> {
        let mass = assemble_mass(mesh)?;
        let lumped = lump_mass(&mass);
        let k_i = assemble_stiffness(mesh, fibers, intra)?;
        let k_e = assemble_stiffness(mesh, fibers, extra)?;
        let k_ie = k_i.linear_combination(T::one(), &k_e, T::one())?;
        Ok(Self { mass, lumped, k_i, k_ie })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BidomainState<T> {
    pub t: T,
    pub v: Vec<T>,
    pub q: Vec<T>,
    pub ve: Vec<T>,
    pub w: Vec<T>,
    pub n_states: usize,
}

impl<T: Scalar> BidomainState<T> {
    pub fn rest(n: usize, model: &IonicModelInstance<T>) -> Self {
        let mono = crate::monodomain::SolverState::rest(n, model);
        Self { t: mono.t, v: mono.v, q: mono.q, ve: vec![T::zero(); n], w: mono.w, n_states: mono.n_states }
    }

    pub fn ve_mean(&self) -> T {
        self.ve.iter().copied().sum::<T>() / T::from_usize_lossy(self.ve.len().max(1))
    }

    fn check_finite(&self) -> Result<(), SolverError> {
        let t = self.t.to_f64().unwrap_or(f64::NAN);
        let stride = self.n_states.max(1);
        for (field, data, stride) in [("V", &self.v, 1), ("Q", &self.q, 1), ("Ve", &self.ve, 1), ("gate", &self.w, stride)] {
            if let Some(k) = data.iter().position(|x| !x.is_finite()) {
                return Err(SolverError::NonFinite { field, node: k / stride, t });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BidomainSolver<T> {
    ops: BidomainOperators<T>,
    model: IonicModelInstance<T>,
    config: BidomainConfig<T>,
    system: SparseOperator<T>,
    loads: Vec<Vec<T>>,
    loads_e: Vec<Vec<T>>,
    state: BidomainState<T>,
    t0: T,
    stats: SolverStats,
    ve_cg: CgOptions,
}

impl<T: Scalar> BidomainSolver<T> {
    pub fn new(
        mesh: &SimplicialMesh<T>,
        ops: BidomainOperators<T>,
        model: IonicModelInstance<T>,
        config: BidomainConfig<T>,
        state: BidomainState<T>,
    ) -> Result<Self, SolverError> {
        config.validate()?;
        model.validate()?;
        let n = mesh.n_nodes();
        if ops.lumped.len() != n {
            return Err(FemError::Dimension { expected: n, got: ops.lumped.len() }.into());
        }
        if state.v.len() != n || state.ve.len() != n || state.w.len() != n * model.n_states() {
            return Err(SolverError::Config("state size does not match mesh and model".into()));
        }
        let dt = config.dt;
        let diag: Vec<T> = ops.lumped.iter().map(|&m| config.c_m * (config.tau_i + dt) * m).collect();
        let system = ops.k_i.scaled_plus_diagonal(dt * dt, &diag)?;
        let loads = stimulus_loads(mesh, &ops.mass, &config.stimuli);
        let loads_e = stimulus_loads(mesh, &ops.mass, &config.extracellular_stimuli);
        let ve_cg = CgOptions { deflate: true, ..config.cg };
        let t0 = state.t;
        Ok(Self { ops, model, config, system, loads, loads_e, state, t0, stats: SolverStats::default(), ve_cg })
    }

    pub fn from_rest(
        mesh: &SimplicialMesh<T>,
        fibers: &FiberField<T>,
        intra: &DiffusionSpec<T>,
        extra: &DiffusionSpec<T>,
        model: IonicModelInstance<T>,
        config: BidomainConfig<T>,
    ) -> Result<Self, SolverError> {
        let ops = BidomainOperators::assemble(mesh, fibers, intra, extra)?;
        let state = BidomainState::rest(mesh.n_nodes(), &model);
        Self::new(mesh, ops, model, config, state)
    }

    pub fn state(&self) -> &BidomainState<T> {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut BidomainState<T> {
        &mut self.state
    }

    pub fn config(&self) -> &BidomainConfig<T> {
        &self.config
    }

    fn advance(&mut self) -> Result<(), SolverError> {
        let n = self.state.v.len();
        let BidomainConfig { tau_i, tau_e, c_m, dt, .. } = self.config;
        let t_n = self.state.t;
        let zero = T::zero();

        let clock = Instant::now();
        let mut i_star = vec![zero; n];
        let mut j_star = vec![zero; n];
        reaction_substep(
            &self.model,
            &self.state.v,
            &self.state.q,
            &mut self.state.w,
            dt,
            IntegratorOrder::First,
            tau_i > zero || tau_e != tau_i,
            &mut i_star,
            &mut j_star,
        );
        let react: Vec<T> = i_star.iter().zip(&j_star).map(|(&i, &j)| -(i + tau_i * j)).collect();
        self.stats.reaction_time += clock.elapsed();

        let clock = Instant::now();
        let mut m_react = self.ops.mass.apply(&react);
        add_active_loads(&self.config.stimuli, &self.loads, t_n, T::one(), &mut m_react);
        let mut ve_rhs_fixed = if tau_e != tau_i {
            let mj = self.ops.mass.apply(&j_star);
            mj.into_iter().map(|x| (tau_e - tau_i) * x).collect()
        } else {
            vec![zero; n]
        };
        add_active_loads(&self.config.extracellular_stimuli, &self.loads_e, t_n, T::one(), &mut ve_rhs_fixed);

        let k_i = &self.ops.k_i;
        let mut q_new = self.state.q.clone();
        let mut v_new = self.state.v.clone();
        let mut ve_new = self.state.ve.clone();
        let mut rhs = vec![zero; n];
        let mut tmp = vec![zero; n];
        for _ in 0..self.config.coupling_iterations {
            for i in 0..n {
                tmp[i] = self.state.v[i] + ve_new[i];
            }
            k_i.matvec(&tmp, &mut rhs);
            for i in 0..n {
                rhs[i] = tau_i * c_m * self.ops.lumped[i] * self.state.q[i] - dt * rhs[i] + dt * m_react[i];
            }
            let rep = cg_solve(&self.system, &rhs, &mut q_new, &self.config.cg)?;
            self.stats.record_cg(rep.iterations);
            for i in 0..n {
                v_new[i] = self.state.v[i] + dt * q_new[i];
            }

            k_i.matvec(&v_new, &mut rhs);
            for i in 0..n {
                let dq = c_m * self.ops.lumped[i] * (q_new[i] - self.state.q[i]) / dt;
                rhs[i] = -rhs[i] + (tau_e - tau_i) * dq + ve_rhs_fixed[i];
            }
            let rep = cg_solve(&self.ops.k_ie, &rhs, &mut ve_new, &self.ve_cg)?;
            self.stats.record_cg(rep.iterations);
        }
        self.state.q = q_new;
        self.state.v = v_new;
        self.state.ve = ve_new;
        self.stats.diffusion_time += clock.elapsed();
        Ok(())
    }
}

impl<T: Scalar> TimeStepper<T> for BidomainSolver<T> {
    fn step(&mut self) -> Result<(), SolverError> {
        let t_n = self.state.t;
        let result = self.advance();
        self.stats.steps += 1;
        self.state.t = self.t0 + T::from_usize_lossy(self.stats.steps) * self.config.dt;
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

    fn extracellular(&self) -> Option<&[T]> {
        Some(&self.state.ve)
    }

    fn stats(&self) -> &SolverStats {
        &self.stats
    }
}
