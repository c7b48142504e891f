//! The numerical studies driven by the command line.
//!
//! Conductivities of the Aliev-Panfilov and Fenton-Karma families are given
//! in mS/mm with `chi = 1` and `C_m = 1`; [`diffusivity`] converts them to
//! the cm-based solvers.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_4;

use hypercardio::analytic::{cubic_profile, cubic_speed, monodomain_diffusivity_factor};
use hypercardio::mesh::{line_mesh_from, rect_tri_mesh_at};
use hypercardio::{
    run, run_with, uniform_fiber_frame, AnalyticError, Bidomain,
    BidomainConfig, CgOptions, Diagonal, Diffusion, Front, IntegratorOrder, Mesh, MeshError, Model, ModelError,
    Monodomain, MonodomainConfig, NondimMap, Operators, Preconditioner, Region, RunOptions, SolverError, SolverState,
    SolverStats, Stimulus, TimeStepper,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::{self, MeasureError};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Fem(#[from] hypercardio::FemError),
    #[error("{0}")]
    Config(String),
}

/// `D [cm^2/ms]` for a conductivity in mS/mm (`chi = C_m = 1`).
pub fn diffusivity(sigma_ms_per_mm: f64) -> f64 {
    0.01 * sigma_ms_per_mm
}

fn model(name: &str, overrides: &BTreeMap<String, f64>) -> Result<Model, StudyError> {
    Ok(Model::from_name(name, overrides)?)
}

/// A 1D cable from rest with a single pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct Cable {
    pub length: f64,
    pub h: f64,
    pub dt: f64,
    pub stim_lo: f64,
    pub stim_hi: f64,
    pub amplitude: f64,
    pub start: f64,
    pub duration: f64,
    pub x1: f64,
    pub x2: f64,
    pub threshold: f64,
    pub t_max: f64,
    /// Let the stimulus act through the `tau dS/dt` term as well.
    pub stimulus_rate: bool,
}

impl Cable {
    pub fn elements(&self) -> usize {
        (self.length / self.h).round() as usize
    }

    fn mesh(&self) -> Result<Mesh, StudyError> {
        Ok(hypercardio::line_mesh(self.length, self.elements())?)
    }

    fn stimulus(&self) -> Stimulus {
        Stimulus::pulse(Region::Interval { lo: self.stim_lo, hi: self.stim_hi }, self.amplitude, self.start, self.duration)
    }

    /// Conduction velocity of the pulse launched in a cable with diffusivity `d`.
    pub fn velocity(&self, model: Model, d: f64, tau: f64) -> Result<(f64, SolverStats), StudyError> {
        let mesh = self.mesh()?;
        let fibers = uniform_fiber_frame(&mesh, 0.0);
        let spec = Diffusion::isotropic(d, 1.0)?;
        let mut cfg = MonodomainConfig::new(tau, 1.0, self.dt);
        cfg.stimuli.push(self.stimulus());
        cfg.stimulus_rate = self.stimulus_rate;
        let mut solver = Monodomain::from_rest(&mesh, &fibers, &spec, model, cfg)?;
        cable_velocity(&mesh, &mut solver, [self.x1, 0.0], [self.x2, 0.0], self.threshold, self.t_max)
    }
}

fn cable_velocity<S: TimeStepper<f64>>(
    mesh: &Mesh,
    solver: &mut S,
    x1: [f64; 2],
    x2: [f64; 2],
    threshold: f64,
    t_max: f64,
) -> Result<(f64, SolverStats), StudyError> {
    let (a, b) = (mesh.nearest_node(x1), mesh.nearest_node(x2));
    let mut opts = RunOptions::until(t_max);
    opts.activation_threshold = Some(threshold);
    opts.stop_when_activated = vec![a, b];
    let rec = run_with(solver, &opts, |_| Ok(()))?;
    let map = rec.activation.expect("activation requested");
    Ok((measure::node_velocity(mesh, &map, a, b)?, rec.stats))
}

// ---------------------------------------------------------------------------
// Exact speed

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedRow {
    pub alpha: f64,
    pub mu: f64,
    pub cv_measured: f64,
    pub cv_exact: f64,
    pub c_s: f64,
}

/// Nondimensional McKean fronts against the closed-form speed.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedStudy {
    pub alphas: Vec<f64>,
    pub mus: Vec<f64>,
    pub cable: Cable,
    /// Stimulus durations tried in turn until a front forms.
    pub durations: Vec<f64>,
}

impl Default for SpeedStudy {
    fn default() -> Self {
        Self {
            alphas: vec![0.1, 0.2, 0.3],
            mus: vec![0.0, 0.25, 0.5, 1.0, 2.0],
            cable: Cable {
                length: 50.0,
                h: 0.03125,
                dt: 0.003653,
                stim_lo: 24.5,
                stim_hi: 25.5,
                amplitude: 1.0,
                start: 0.03,
                duration: 1.0,
                x1: 30.0,
                x2: 32.0,
                threshold: 0.9,
                t_max: 200.0,
                stimulus_rate: false,
            },
            durations: vec![1.0, 3.0],
        }
    }
}

impl SpeedStudy {
    pub fn case(&self, alpha: f64, mu: f64) -> Result<SpeedRow, StudyError> {
        let exact = hypercardio::mckean_speed(alpha, mu)?;
        let mut cable = self.cable.clone();
        let mut result = Err(StudyError::Config("no stimulus durations".into()));
        for &d in &self.durations {
            cable.duration = d;
            result = cable.velocity(Model::mckean(alpha)?, 1.0, mu);
            if !matches!(result, Err(StudyError::Measure(MeasureError::NoFront { .. }))) {
                break;
            }
        }
        let (cv, _) = result?;
        let c_s = hypercardio::analytic::characteristic_speed(mu);
        Ok(SpeedRow { alpha, mu, cv_measured: cv, cv_exact: exact, c_s })
    }

    pub fn run(&self) -> Result<Vec<SpeedRow>, StudyError> {
        let mut rows = Vec::new();
        for &alpha in &self.alphas {
            for &mu in &self.mus {
                rows.push(self.case(alpha, mu)?);
            }
        }
        Ok(rows)
    }
}

// ---------------------------------------------------------------------------
// Convergence

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reaction {
    McKean,
    Cubic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub dt: f64,
    #[serde(rename = "err_V")]
    pub err_v: f64,
    #[serde(rename = "err_Q")]
    pub err_q: f64,
    #[serde(rename = "order_V")]
    pub order_v: Option<f64>,
    #[serde(rename = "order_Q")]
    pub order_q: Option<f64>,
}

/// Space-time refinement against a travelling front started at `x = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub reaction: Reaction,
    /// Relaxation time; equal to `mu` since all constants are one.
    pub tau: f64,
    pub order: u8,
    pub levels: usize,
    pub h0: f64,
    pub dt0: f64,
    pub alpha: f64,
    pub half_width: f64,
    pub t_end: f64,
    pub regularization: f64,
}

impl ConvergenceStudy {
    pub fn new(reaction: Reaction, tau: f64, order: u8) -> Self {
        Self {
            reaction,
            tau,
            order,
            levels: 6,
            h0: 0.2,
            dt0: 0.05,
            alpha: 0.1,
            half_width: 25.0,
            t_end: 1.0,
            regularization: 0.0,
        }
    }

    fn exact(&self, x: f64, t: f64) -> Result<(f64, f64), StudyError> {
        match self.reaction {
            Reaction::McKean => {
                let front = Front::new(self.alpha, self.tau)?;
                Ok(front.dimensional_state(&NondimMap::unit(self.tau), 0.0, 1.0, 0.0, x, t))
            }
            Reaction::Cubic => {
                let c = cubic_speed(self.alpha);
                let (u, du) = cubic_profile(x - c * t);
                Ok((u, -c * du))
            }
        }
    }

    /// Errors at `t_end` on one level.
    pub fn level(&self, h: f64, dt: f64) -> Result<(f64, f64), StudyError> {
        if self.reaction == Reaction::Cubic && self.tau != 0.0 {
            return Err(StudyError::Config("no exact cubic front for tau > 0".into()));
        }
        let n = (2.0 * self.half_width / h).round() as usize;
        let mesh = line_mesh_from(-self.half_width, 2.0 * self.half_width, n)?;
        let fibers = uniform_fiber_frame(&mesh, 0.0);
        let spec = Diffusion::isotropic(1.0, 1.0)?;
        let m = match self.reaction {
            Reaction::McKean => Model::mckean(self.alpha)?,
            Reaction::Cubic => Model::cubic(self.alpha)?,
        }
        .with_regularization(self.regularization)?;
        let ops = Operators::assemble(&mesh, &fibers, &spec).map_err(SolverError::from)?;
        let mass = ops.mass.clone();
        let mut state = SolverState::rest(mesh.n_nodes(), &m);
        for k in 0..mesh.n_nodes() {
            (state.v[k], state.q[k]) = self.exact(mesh.node(k)[0], 0.0)?;
        }
        let order = IntegratorOrder::try_from(self.order)?;
        let mut cfg = MonodomainConfig::new(self.tau, 1.0, dt);
        cfg.order = order;
        cfg.cg.rel_tol = 1e-12;
        let mut solver = Monodomain::new(&mesh, ops, m, cfg, state)?;
        let steps = (self.t_end / dt).round() as usize;
        for _ in 0..steps {
            solver.step()?;
        }
        let t = solver.time();
        let mut ev = Vec::with_capacity(mesh.n_nodes());
        let mut eq = Vec::with_capacity(mesh.n_nodes());
        for k in 0..mesh.n_nodes() {
            let (v, q) = self.exact(mesh.node(k)[0], t)?;
            ev.push(v);
            eq.push(q);
        }
        let s = solver.state();
        Ok((measure::l2_error(&mass, &s.v, &ev), measure::l2_error(&mass, &s.q, &eq)))
    }

    pub fn run(&self) -> Result<Vec<ConvergenceRow>, StudyError> {
        if self.levels < 2 {
            return Err(StudyError::Config("need at least two refinement levels".into()));
        }
        let mut rows: Vec<ConvergenceRow> = Vec::new();
        for l in 0..self.levels {
            let scale = 0.5f64.powi(l as i32);
            let (h, dt) = (self.h0 * scale, self.dt0 * scale);
            let (err_v, err_q) = self.level(h, dt)?;
            let (order_v, order_q) = match rows.last() {
                Some(p) => (Some((p.err_v / err_v).log2()), Some((p.err_q / err_q).log2())),
                None => (None, None),
            };
            rows.push(ConvergenceRow { h, dt, err_v, err_q, order_v, order_q });
        }
        Ok(rows)
    }
}

/// Fitted orders `(V, Q)` over all rows.
pub fn convergence_orders(rows: &[ConvergenceRow]) -> Result<(f64, f64), StudyError> {
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let ev: Vec<f64> = rows.iter().map(|r| r.err_v).collect();
    let eq: Vec<f64> = rows.iter().map(|r| r.err_q).collect();
    Ok((measure::fitted_order(&h, &ev)?, measure::fitted_order(&h, &eq)?))
}

// ---------------------------------------------------------------------------
// Conduction velocity against relaxation time

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTauRow {
    pub model: String,
    pub tau: f64,
    pub cv: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvTauStudy {
    pub model: String,
    pub parameters: BTreeMap<String, f64>,
    pub taus: Vec<f64>,
    /// Conductivity in mS/mm; the model family default when absent.
    pub sigma: Option<f64>,
    pub cable: Cable,
}

impl CvTauStudy {
    pub fn new(model: &str) -> Self {
        Self {
            model: model.to_string(),
            parameters: BTreeMap::new(),
            taus: vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
            sigma: None,
            cable: Cable {
                length: 5.0,
                h: 31.25e-4,
                dt: 0.003125,
                stim_lo: 2.45,
                stim_hi: 2.55,
                amplitude: 1.0,
                start: 0.03,
                duration: 1.0,
                x1: 3.0,
                x2: 4.0,
                threshold: 0.5,
                t_max: 400.0,
                stimulus_rate: false,
            },
        }
    }

    /// Aliev-Panfilov with the given excitability.
    pub fn aliev_panfilov(alpha: f64) -> Self {
        let mut s = Self::new("AP");
        s.parameters.insert("alpha".into(), alpha);
        s
    }

    pub fn label(&self) -> String {
        match self.parameters.get("alpha") {
            Some(a) if self.model == "AP" => format!("AP(alpha={a})"),
            _ => self.model.clone(),
        }
    }

    pub fn diffusivity(&self) -> Result<f64, StudyError> {
        let m = model(&self.model, &self.parameters)?;
        let sigma = match (self.sigma, m.tissue_defaults()) {
            (Some(s), _) => s,
            (None, Some(t)) => t.sigma_f,
            (None, None) => return Err(StudyError::Config(format!("model `{}` needs an explicit sigma", self.model))),
        };
        Ok(diffusivity(sigma))
    }

    pub fn velocity(&self, tau: f64) -> Result<f64, StudyError> {
        let m = model(&self.model, &self.parameters)?;
        Ok(self.cable.velocity(m, self.diffusivity()?, tau)?.0)
    }

    pub fn run(&self) -> Result<Vec<CvTauRow>, StudyError> {
        let label = self.label();
        self.taus
            .iter()
            .map(|&tau| Ok(CvTauRow { model: label.clone(), tau, cv: self.velocity(tau)? }))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Finite propagation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeRow {
    pub t: f64,
    /// Radius of the cone `r0 + c_s t + margin h`.
    pub radius: f64,
    /// `max |V - V_rest|` outside the cone, relative to the bump amplitude.
    pub outside: f64,
    /// `max |V - V_rest|` inside, same scaling.
    pub inside: f64,
}

/// A subthreshold smooth bump on a McKean cable, tracked against the
/// characteristic cone of the hyperbolic equation.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePropagationStudy {
    pub tau: f64,
    pub d: f64,
    pub alpha: f64,
    pub amplitude: f64,
    pub r0: f64,
    pub half_width: f64,
    pub h: f64,
    /// `c_s dt / h`.
    pub courant: f64,
    pub t_end: f64,
    pub margin: f64,
    pub record_every: usize,
    pub order: IntegratorOrder,
}

impl Default for FinitePropagationStudy {
    fn default() -> Self {
        Self {
            tau: 0.5,
            d: 1.0,
            alpha: 0.1,
            amplitude: 0.05,
            r0: 1.0,
            half_width: 8.0,
            h: 0.005,
            courant: 0.1,
            t_end: 2.0,
            margin: 3.0,
            record_every: 100,
            order: IntegratorOrder::Second,
        }
    }
}

impl FinitePropagationStudy {
    pub fn speed(&self) -> f64 {
        (self.d / self.tau).sqrt()
    }

    fn bump(&self, x: f64) -> f64 {
        let s = x / self.r0;
        if s.abs() < 1.0 {
            self.amplitude * (1.0 - 1.0 / (1.0 - s * s)).exp()
        } else {
            0.0
        }
    }

    pub fn run(&self) -> Result<Vec<ConeRow>, StudyError> {
        if !(self.tau > 0.0) {
            return Err(StudyError::Config("finite propagation needs tau > 0".into()));
        }
        let n = (2.0 * self.half_width / self.h).round() as usize;
        let mesh = line_mesh_from(-self.half_width, 2.0 * self.half_width, n)?;
        let fibers = uniform_fiber_frame(&mesh, 0.0);
        let spec = Diffusion::isotropic(self.d, 1.0)?;
        let model = Model::mckean(self.alpha)?;
        let c_s = self.speed();
        let mut cfg = MonodomainConfig::new(self.tau, 1.0, self.courant * self.h / c_s);
        cfg.order = self.order;
        cfg.cg.rel_tol = 1e-14;
        let mut state = SolverState::rest(mesh.n_nodes(), &model);
        let v_rest = state.v[0];
        for (k, v) in state.v.iter_mut().enumerate() {
            *v += self.bump(mesh.node(k)[0]);
        }
        let ops = Operators::assemble(&mesh, &fibers, &spec)?;
        let mut solver = Monodomain::new(&mesh, ops, model, cfg, state)?;
        let mut rows = Vec::new();
        let mut step = 0;
        while solver.time() < self.t_end - 0.5 * solver.dt() {
            solver.step()?;
            step += 1;
            if step % self.record_every == 0 || solver.time() >= self.t_end - 0.5 * solver.dt() {
                let t = solver.time();
                let radius = self.r0 + c_s * t + self.margin * self.h;
                let (mut outside, mut inside) = (0.0f64, 0.0f64);
                for (k, &v) in solver.potential().iter().enumerate() {
                    let dev = (v - v_rest).abs() / self.amplitude;
                    if mesh.node(k)[0].abs() > radius {
                        outside = outside.max(dev);
                    } else {
                        inside = inside.max(dev);
                    }
                }
                rows.push(ConeRow { t, radius, outside, inside });
            }
        }
        Ok(rows)
    }
}

// ---------------------------------------------------------------------------
// Anisotropy

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyRow {
    pub sigma: f64,
    pub tau: f64,
    pub cv: f64,
    /// `cv / cv(tau = 0)` at the same conductivity.
    pub cv_normalized: f64,
    /// `cv / v_1` at the same relaxation time.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnisotropyStudy {
    pub sigmas: Vec<f64>,
    pub taus: Vec<f64>,
    pub base: CvTauStudy,
}

impl Default for AnisotropyStudy {
    fn default() -> Self {
        let mut base = CvTauStudy::new("FK3");
        base.cable.h = 25e-4;
        base.cable.dt = 0.0025;
        Self { sigmas: vec![0.1, 0.05, 0.025, 0.0125], taus: vec![0.0, 0.2, 0.3, 0.4, 0.5, 0.75, 1.0], base }
    }
}

impl AnisotropyStudy {
    pub fn run(&self) -> Result<Vec<AnisotropyRow>, StudyError> {
        if self.taus.first() != Some(&0.0) {
            return Err(StudyError::Config("relaxation times must start at 0".into()));
        }
        let mut table = Vec::new();
        for &sigma in &self.sigmas {
            let study = CvTauStudy { sigma: Some(sigma), taus: self.taus.clone(), ..self.base.clone() };
            table.push(study.run()?);
        }
        let mut rows = Vec::new();
        for (s, &sigma) in self.sigmas.iter().enumerate() {
            for (t, &tau) in self.taus.iter().enumerate() {
                let cv = table[s][t].cv;
                rows.push(AnisotropyRow {
                    sigma,
                    tau,
                    cv,
                    cv_normalized: cv / table[s][0].cv,
                    ratio: cv / table[0][t].cv,
                });
            }
        }
        Ok(rows)
    }
}

/// Relaxation time past the enhancement peak at which the normalized
/// velocity returns to one, by linear interpolation.
pub fn matched_tau(rows: &[AnisotropyRow], sigma: f64) -> Option<f64> {
    let curve: Vec<(f64, f64)> = rows.iter().filter(|r| r.sigma == sigma).map(|r| (r.tau, r.cv_normalized)).collect();
    curve
        .windows(2)
        .skip(1)
        .find(|w| w[0].1 >= 1.0 && w[1].1 < 1.0)
        .map(|w| w[0].0 + (w[0].1 - 1.0) / (w[0].1 - w[1].1) * (w[1].0 - w[0].0))
}

// ---------------------------------------------------------------------------
// Mesh orientation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationRow {
    pub h_um: f64,
    pub diagonal: String,
    pub direction: String,
    pub cv: f64,
}

/// Corner-stimulated square with fibers at 45 degrees. `transverse` runs put
/// the fibers across the diagonal along which the front is measured.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationStudy {
    pub size: f64,
    pub spacings_um: Vec<f64>,
    pub dt: f64,
    pub tau: f64,
    pub sigma_f: f64,
    pub sigma_s: f64,
    pub stim_radius: f64,
    /// Diagonal distances of the two probes from the stimulated corner.
    pub probes: [f64; 2],
    pub threshold: f64,
    pub t_max: f64,
}

impl OrientationStudy {
    /// Quarter-scale version of the 12 cm benchmark.
    pub fn desk() -> Self {
        Self {
            size: 3.0,
            spacings_um: vec![240.0, 120.0, 60.0, 30.0],
            dt: 0.05,
            tau: 0.0,
            sigma_f: 0.1,
            sigma_s: 0.0125,
            stim_radius: 0.25,
            probes: [0.5, 1.0],
            threshold: 0.5,
            t_max: 300.0,
        }
    }

    pub fn full_scale() -> Self {
        Self { size: 12.0, spacings_um: vec![234.375, 117.1875], stim_radius: 1.0, probes: [2.0, 4.0], ..Self::desk() }
    }

    pub fn velocity(&self, h_um: f64, diagonal: Diagonal, transverse: bool) -> Result<f64, StudyError> {
        let n = (self.size / (h_um * 1e-4)).round() as usize;
        let mesh: Mesh = hypercardio::rect_tri_mesh(self.size, self.size, n, n, diagonal)?;
        let angle = if transverse { -FRAC_PI_4 } else { FRAC_PI_4 };
        let fibers = uniform_fiber_frame(&mesh, angle);
        let spec = Diffusion::transverse(diffusivity(self.sigma_f), diffusivity(self.sigma_s), 1.0)?;
        let mut cfg = MonodomainConfig::new(self.tau, 1.0, self.dt);
        cfg.stimuli.push(Stimulus::pulse(Region::L1Ball { center: [0.0, 0.0], radius: self.stim_radius }, 1.0, 0.0, 1.0));
        let mut solver = Monodomain::from_rest(&mesh, &fibers, &spec, model("FK3", &BTreeMap::new())?, cfg)?;
        let p = |d: f64| [d / std::f64::consts::SQRT_2; 2];
        Ok(cable_velocity(&mesh, &mut solver, p(self.probes[0]), p(self.probes[1]), self.threshold, self.t_max)?.0)
    }

    pub fn run(&self, include_longitudinal: bool) -> Result<Vec<OrientationRow>, StudyError> {
        let mut rows = Vec::new();
        let directions: &[bool] = if include_longitudinal { &[true, false] } else { &[true] };
        for &h in &self.spacings_um {
            for &transverse in directions {
                for (diagonal, name) in [(Diagonal::Right, "right"), (Diagonal::Left, "left")] {
                    rows.push(OrientationRow {
                        h_um: h,
                        diagonal: name.into(),
                        direction: if transverse { "transverse" } else { "longitudinal" }.into(),
                        cv: self.velocity(h, diagonal, transverse)?,
                    });
                }
            }
        }
        Ok(rows)
    }
}

/// Relative velocity gap `|cv_right - cv_left| / mean` per spacing for one
/// propagation direction, in the order of the rows.
pub fn orientation_discrepancy(rows: &[OrientationRow], direction: &str) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for r in rows.iter().filter(|r| r.direction == direction && r.diagonal == "right") {
        if let Some(l) = rows.iter().find(|l| l.direction == direction && l.diagonal == "left" && l.h_um == r.h_um) {
            out.push((r.h_um, (r.cv - l.cv).abs() / (0.5 * (r.cv + l.cv))));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Spiral

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiralReport {
    pub tau: f64,
    pub probe_activations: Vec<f64>,
    pub reentries: usize,
    pub front_nodes: usize,
    pub tail_nodes: usize,
}

/// S1-S2 spiral initiation on a square. Lengths scale with `scale`
/// relative to the 12 cm slab; the diffusivity scales with `scale^2` so the
/// dynamics are those of the full slab on a correspondingly coarser grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpiralStudy {
    pub scale: f64,
    pub elements: usize,
    pub dt: f64,
    pub tau: f64,
    pub sigma: f64,
    pub s2: bool,
    pub s2_time: f64,
    pub t_end: f64,
    pub threshold: f64,
    /// Minimum delay after a stimulus ends before an activation counts as
    /// unstimulated.
    pub quiet: f64,
    pub snapshot_stride: Option<usize>,
}

impl SpiralStudy {
    pub fn desk(tau: f64) -> Self {
        Self {
            scale: 0.25,
            elements: 300,
            dt: 0.125,
            tau,
            sigma: 0.1,
            s2: true,
            s2_time: 320.0,
            t_end: 1000.0,
            threshold: 0.5,
            quiet: 20.0,
            snapshot_stride: None,
        }
    }

    pub fn full_scale(tau: f64) -> Self {
        Self { scale: 1.0, elements: 1200, ..Self::desk(tau) }
    }

    pub fn mesh(&self) -> Result<Mesh, StudyError> {
        let l = 12.0 * self.scale;
        Ok(hypercardio::rect_tri_mesh(l, l, self.elements, self.elements, Diagonal::Alternating)?)
    }

    fn stimuli(&self) -> Vec<Stimulus> {
        let s = self.scale;
        let l = 12.0 * s;
        let mut v = vec![Stimulus::pulse(Region::Box { lo: [0.0, 0.0], hi: [l, 0.5 * s] }, 1.0, 0.0, 1.0)];
        if self.s2 {
            v.push(Stimulus::pulse(Region::Box { lo: [0.0, 0.0], hi: [6.0 * s, 7.0 * s] }, 1.0, self.s2_time, 1.0));
        }
        v
    }

    pub fn solver(&self, mesh: &Mesh) -> Result<Monodomain, StudyError> {
        let fibers = uniform_fiber_frame(mesh, std::f64::consts::FRAC_PI_2);
        let spec = Diffusion::isotropic(diffusivity(self.sigma) * self.scale * self.scale, 1.0)?;
        let mut cfg = MonodomainConfig::new(self.tau, 1.0, self.dt);
        cfg.stimuli = self.stimuli();
        Ok(Monodomain::from_rest(mesh, &fibers, &spec, model("FK3", &BTreeMap::new())?, cfg)?)
    }

    pub fn run_with<F>(&self, mut on_snapshot: F) -> Result<SpiralReport, StudyError>
    where
        F: FnMut(&Mesh, &hypercardio::Snapshot<f64>) -> Result<(), SolverError>,
    {
        let mesh = self.mesh()?;
        let mut solver = self.solver(&mesh)?;
        let l = 12.0 * self.scale;
        let probe = mesh.nearest_node([0.5 * l, 0.5 * l]);
        let mut opts = RunOptions::until(self.t_end);
        opts.probes = vec![probe];
        opts.snapshot_stride = self.snapshot_stride;
        let mut fronts = 0;
        let mut tails = 0;
        let rec = run_with(&mut solver, &opts, |s| {
            fronts = s.q.iter().filter(|&&q| q > 1e-3).count();
            tails = s.q.iter().filter(|&&q| q < -1e-3).count();
            on_snapshot(&mesh, s)
        })?;
        let q = solver.potential_rate();
        if self.snapshot_stride.is_none() {
            fronts = q.iter().filter(|&&q| q > 1e-3).count();
            tails = q.iter().filter(|&&q| q < -1e-3).count();
        }
        let windows: Vec<(f64, f64)> = self.stimuli().iter().map(|s| (s.start, s.start + s.duration)).collect();
        let series = rec.probe_series(0);
        let all = measure::upcrossings(&rec.probe_times, &series, self.threshold);
        // activations after the first that no stimulus window explains
        let free = measure::unstimulated_activations(&rec.probe_times, &series, self.threshold, &windows, self.quiet);
        let first = all.first().copied().unwrap_or(f64::INFINITY);
        let reentries = free.iter().filter(|&&t| t > first).count();
        Ok(SpiralReport { tau: self.tau, probe_activations: all, reentries, front_nodes: fronts, tail_nodes: tails })
    }

    pub fn run(&self) -> Result<SpiralReport, StudyError> {
        self.run_with(|_, _| Ok(()))
    }
}

// ---------------------------------------------------------------------------
// Virtual electrode

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualElectrodeReport {
    pub tau_i: f64,
    pub tau_e: f64,
    pub equal_anisotropy: bool,
    pub v_rest: f64,
    /// `V` at `(+d, 0)` and `(-d, 0)`, on the fiber axis.
    pub fiber_probes: [f64; 2],
    /// `V` at `(0, +d)` and `(0, -d)`, across the fibers.
    pub cross_probes: [f64; 2],
    pub v_min: f64,
    pub v_max: f64,
    /// Lowest `V` within `near_radius` of the electrode centre.
    pub v_min_near: f64,
}

/// Cathodal extracellular stimulation of a rectangular sheet with fibers
/// along `x`. The injected current is returned through strips of width
/// `return_width` along both short edges.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualElectrodeStudy {
    pub half_size: [f64; 2],
    pub elements: [usize; 2],
    pub dt: f64,
    pub t_obs: f64,
    pub tau_i: f64,
    pub tau_e: f64,
    pub amplitude: f64,
    pub electrode_half: [f64; 2],
    pub return_width: f64,
    /// `(f, s)` conductivities; multiplied by 0.01 to obtain cm^2/ms.
    pub sigma_i: [f64; 2],
    pub sigma_e: [f64; 2],
    pub probe_offset: f64,
    pub near_radius: f64,
}

impl VirtualElectrodeStudy {
    pub fn new(tau_i: f64, tau_e: f64) -> Self {
        Self {
            half_size: [2.0, 0.8],
            elements: [400, 160],
            dt: 0.01,
            t_obs: 2.0,
            tau_i,
            tau_e,
            amplitude: -100.0,
            electrode_half: [0.05, 0.01],
            return_width: 0.05,
            sigma_i: [2.3172, 0.2435],
            sigma_e: [1.5448, 1.0438],
            probe_offset: 0.3,
            near_radius: 0.5,
        }
    }

    /// Control with `sigma_e = lambda sigma_i`.
    pub fn equal_anisotropy(mut self, lambda: f64) -> Self {
        self.sigma_e = [lambda * self.sigma_i[0], lambda * self.sigma_i[1]];
        self
    }

    pub fn is_equal_anisotropy(&self) -> bool {
        let r = self.sigma_e[0] / self.sigma_i[0];
        (self.sigma_e[1] / self.sigma_i[1] - r).abs() < 1e-9 * r
    }

    pub fn mesh(&self) -> Result<Mesh, StudyError> {
        let [a, b] = self.half_size;
        Ok(rect_tri_mesh_at([-a, -b], 2.0 * a, 2.0 * b, self.elements[0], self.elements[1], Diagonal::Alternating)?)
    }

    /// Cathode and the two return strips, with the strip amplitude chosen so
    /// the net injected current vanishes.
    pub fn electrodes(&self, mesh: &Mesh) -> Result<Vec<Stimulus>, StudyError> {
        let [a, b] = self.half_size;
        let [ex, ey] = self.electrode_half;
        let w = self.return_width;
        let cathode = Region::Box { lo: [-ex, -ey], hi: [ex, ey] };
        let strips = [Region::Box { lo: [-a, -b], hi: [-a + w, b] }, Region::Box { lo: [a - w, -b], hi: [a, b] }];
        let lumped = hypercardio::fem::lump_mass(&hypercardio::fem::assemble_mass(mesh)?);
        let weight = |r: &Region<f64>| r.nodes(mesh).into_iter().map(|k| lumped[k]).sum::<f64>();
        let area: f64 = strips.iter().map(weight).sum();
        if area <= 0.0 {
            return Err(StudyError::Config("return strips contain no nodes".into()));
        }
        let back = -self.amplitude * weight(&cathode) / area;
        let duration = self.t_obs + self.dt;
        let mut out = vec![Stimulus::pulse(cathode, self.amplitude, 0.0, duration)];
        out.extend(strips.into_iter().map(|r| Stimulus::pulse(r, back, 0.0, duration)));
        Ok(out)
    }

    pub fn solver(&self, mesh: &Mesh) -> Result<Bidomain, StudyError> {
        let fibers = uniform_fiber_frame(mesh, 0.0);
        let intra = Diffusion::transverse(diffusivity(self.sigma_i[0]), diffusivity(self.sigma_i[1]), 1.0)?;
        let extra = Diffusion::transverse(diffusivity(self.sigma_e[0]), diffusivity(self.sigma_e[1]), 1.0)?;
        let mut cfg = BidomainConfig::new(self.tau_i, self.tau_e, 1.0, self.dt);
        cfg.extracellular_stimuli = self.electrodes(mesh)?;
        cfg.cg = CgOptions { precond: Preconditioner::Ssor(1.5), ..cfg.cg };
        Ok(Bidomain::from_rest(mesh, &fibers, &intra, &extra, model("FK3", &BTreeMap::new())?, cfg)?)
    }

    pub fn run(&self) -> Result<(VirtualElectrodeReport, Mesh, Bidomain), StudyError> {
        let mesh = self.mesh()?;
        let mut solver = self.solver(&mesh)?;
        run(&mut solver, &RunOptions::until(self.t_obs))?;
        let v = solver.potential();
        let v_rest = 0.0;
        let at = |p: [f64; 2]| v[mesh.nearest_node(p)];
        let d = self.probe_offset;
        let near = |k: usize| {
            let p = mesh.node(k);
            p[0].hypot(p[1]) <= self.near_radius
        };
        let report = VirtualElectrodeReport {
            tau_i: self.tau_i,
            tau_e: self.tau_e,
            equal_anisotropy: self.is_equal_anisotropy(),
            v_rest,
            fiber_probes: [at([d, 0.0]), at([-d, 0.0])],
            cross_probes: [at([0.0, d]), at([0.0, -d])],
            v_min: v.iter().copied().fold(f64::INFINITY, f64::min),
            v_max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            v_min_near: (0..v.len()).filter(|&k| near(k)).map(|k| v[k]).fold(f64::INFINITY, f64::min),
        };
        Ok((report, mesh, solver))
    }
}

// ---------------------------------------------------------------------------
// Monodomain reduction

/// Plane-wave velocities of a bidomain cable with `D_e = lambda D_i` and of
/// the equivalent monodomain cable.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionStudy {
    pub lambda: f64,
    pub tau: f64,
    pub sigma_i: f64,
    pub cable: Cable,
}

impl ReductionStudy {
    pub fn new(lambda: f64, tau: f64) -> Self {
        Self {
            lambda,
            tau,
            sigma_i: 0.1,
            cable: Cable {
                length: 3.0,
                h: 0.0025,
                dt: 0.005,
                stim_lo: 0.0,
                stim_hi: 0.1,
                amplitude: 1.0,
                start: 0.0,
                duration: 1.0,
                x1: 1.0,
                x2: 2.0,
                threshold: 0.5,
                t_max: 300.0,
                stimulus_rate: false,
            },
        }
    }

    /// `(bidomain, monodomain)` velocities.
    pub fn run(&self) -> Result<(f64, f64), StudyError> {
        let c = &self.cable;
        let mesh = c.mesh()?;
        let fibers = uniform_fiber_frame(&mesh, 0.0);
        let d_i = diffusivity(self.sigma_i);
        let intra = Diffusion::isotropic(d_i, 1.0)?;
        let extra = Diffusion::isotropic(self.lambda * d_i, 1.0)?;
        let mut cfg = BidomainConfig::new(self.tau, self.tau, 1.0, c.dt);
        cfg.stimuli.push(c.stimulus());
        cfg.cg = CgOptions { precond: Preconditioner::Ssor(1.5), ..cfg.cg };
        let fk = model("FK3", &BTreeMap::new())?;
        let mut bi = Bidomain::from_rest(&mesh, &fibers, &intra, &extra, fk.clone(), cfg)?;
        let (v_bi, _) = cable_velocity(&mesh, &mut bi, [c.x1, 0.0], [c.x2, 0.0], c.threshold, c.t_max)?;
        let d = d_i * monodomain_diffusivity_factor(self.lambda);
        let v_mono = c.velocity(fk, d, hypercardio::monodomain_tau(self.tau, self.tau, self.lambda)?)?.0;
        Ok((v_bi, v_mono))
    }
}

// ---------------------------------------------------------------------------
// Cost

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub model: String,
    pub tau: f64,
    pub steps: usize,
    pub cg_iterations_max: usize,
    pub cg_iterations_mean: f64,
    pub reaction_ms: f64,
    pub diffusion_ms: f64,
    pub reaction_share: f64,
}

/// Square sheet paced from one edge, timed over a fixed number of steps.
#[derive(Debug, Clone, PartialEq)]
pub struct CostStudy {
    pub models: Vec<String>,
    pub taus: Vec<f64>,
    pub elements: usize,
    pub size: f64,
    pub dt: f64,
    pub steps: usize,
    pub precond: Preconditioner,
}

impl Default for CostStudy {
    fn default() -> Self {
        Self {
            models: vec!["AP".into(), "FK3".into()],
            taus: vec![0.0, 0.4],
            elements: 100,
            size: 1.0,
            dt: 0.01,
            steps: 1000,
            precond: Preconditioner::Ssor(1.5),
        }
    }
}

impl CostStudy {
    pub fn case(&self, name: &str, tau: f64) -> Result<CostRow, StudyError> {
        let m = model(name, &BTreeMap::new())?;
        let t = m.tissue_defaults().ok_or_else(|| StudyError::Config(format!("`{name}` has no tissue defaults")))?;
        let n = self.elements;
        let mesh: Mesh = hypercardio::rect_tri_mesh(self.size, self.size, n, n, Diagonal::Right)?;
        let fibers = uniform_fiber_frame(&mesh, 0.0);
        let spec = Diffusion::transverse(diffusivity(t.sigma_f), diffusivity(t.sigma_s), 1.0)?;
        let mut cfg = MonodomainConfig::new(tau, 1.0, self.dt);
        cfg.cg.precond = self.precond;
        let edge = self.size / n as f64 * 2.0;
        cfg.stimuli.push(Stimulus::pulse(Region::Box { lo: [0.0, 0.0], hi: [edge, self.size] }, 1.0, 0.0, 1.0));
        let mut solver = Monodomain::from_rest(&mesh, &fibers, &spec, m, cfg)?;
        for _ in 0..self.steps {
            solver.step()?;
        }
        let s = solver.stats();
        Ok(CostRow {
            model: name.to_string(),
            tau,
            steps: s.steps,
            cg_iterations_max: s.cg_iterations_max,
            cg_iterations_mean: s.cg_iterations_total as f64 / s.cg_solves.max(1) as f64,
            reaction_ms: s.reaction_time.as_secs_f64() * 1e3,
            diffusion_ms: s.diffusion_time.as_secs_f64() * 1e3,
            reaction_share: s.reaction_share(),
        })
    }

    pub fn run(&self) -> Result<Vec<CostRow>, StudyError> {
        let mut rows = Vec::new();
        for name in &self.models {
            for &tau in &self.taus {
                rows.push(self.case(name, tau)?);
            }
        }
        Ok(rows)
    }
}
