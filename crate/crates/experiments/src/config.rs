//! Declarative experiment description read from JSON, and its runner.
//!
//! Conductivities are in solver units: the diffusion tensor is
//! `sigma / chi` and the potential equation is scaled by `c_m`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use hypercardio::mesh::{line_mesh_from, rect_tri_mesh_at};
use hypercardio::{
    run_with, uniform_fiber_frame, Bidomain, BidomainConfig, CgOptions, Diagonal, Diffusion, IntegratorOrder, Mesh,
    Model, Monodomain, MonodomainConfig, Preconditioner, Region, RunOptions, RunRecord, Snapshot, Stimulus,
    TimeStepper,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, IoError, ProbeTable};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Read(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Mesh(#[from] hypercardio::MeshError),
    #[error(transparent)]
    Model(#[from] hypercardio::ModelError),
    #[error(transparent)]
    Solver(#[from] hypercardio::SolverError),
    #[error(transparent)]
    Output(#[from] IoError),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub mesh: MeshSpec,
    /// Fiber direction, radians from the x axis.
    #[serde(default)]
    pub fiber_angle: f64,
    pub model: ModelSpec,
    pub tissue: TissueSpec,
    pub solver: SolverSpec,
    #[serde(default)]
    pub cg: CgSpec,
    #[serde(default)]
    pub stimuli: Vec<StimulusSpec>,
    pub t_end: f64,
    #[serde(default)]
    pub probes: Vec<[f64; 2]>,
    #[serde(default = "one")]
    pub probe_stride: usize,
    #[serde(default)]
    pub activation_threshold: Option<f64>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum MeshSpec {
    Line {
        length: f64,
        elements: usize,
        #[serde(default)]
        origin: f64,
    },
    Rect {
        lx: f64,
        ly: f64,
        nx: usize,
        ny: usize,
        #[serde(default)]
        diagonal: DiagonalSpec,
        #[serde(default)]
        origin: [f64; 2],
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagonalSpec {
    #[default]
    Right,
    Left,
    Alternating,
}

impl From<DiagonalSpec> for Diagonal {
    fn from(d: DiagonalSpec) -> Self {
        match d {
            DiagonalSpec::Right => Diagonal::Right,
            DiagonalSpec::Left => Diagonal::Left,
            DiagonalSpec::Alternating => Diagonal::Alternating,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// `McKean`, `Cubic`, `AP`, `FK3` .. `FK6`.
    pub name: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub regularization_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TissueSpec {
    pub sigma_f: f64,
    /// Defaults to `sigma_f`.
    #[serde(default)]
    pub sigma_s: Option<f64>,
    #[serde(default = "unit")]
    pub chi: f64,
}

impl TissueSpec {
    fn diffusion(&self) -> Result<Diffusion, ConfigError> {
        Ok(Diffusion::transverse(self.sigma_f, self.sigma_s.unwrap_or(self.sigma_f), self.chi)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SolverSpec {
    Monodomain {
        tau: f64,
        dt: f64,
        #[serde(default = "unit")]
        c_m: f64,
        #[serde(default = "order_one")]
        order: u8,
        #[serde(default)]
        stimulus_rate: bool,
    },
    Bidomain {
        tau_i: f64,
        tau_e: f64,
        dt: f64,
        #[serde(default = "unit")]
        c_m: f64,
        /// The `tissue` entry is the intracellular medium.
        extracellular: TissueSpec,
        #[serde(default = "one")]
        coupling_iterations: usize,
    },
}

fn order_one() -> u8 {
    1
}

impl SolverSpec {
    pub fn dt(&self) -> f64 {
        match *self {
            SolverSpec::Monodomain { dt, .. } | SolverSpec::Bidomain { dt, .. } => dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CgSpec {
    #[serde(default = "default_tol")]
    pub rel_tol: f64,
    #[serde(default)]
    pub max_iter: Option<usize>,
    /// `none`, `jacobi` or `ssor`.
    #[serde(default = "default_precond")]
    pub preconditioner: String,
    #[serde(default = "unit")]
    pub ssor_omega: f64,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_precond() -> String {
    "jacobi".into()
}

impl Default for CgSpec {
    fn default() -> Self {
        Self { rel_tol: default_tol(), max_iter: None, preconditioner: default_precond(), ssor_omega: 1.0 }
    }
}

impl CgSpec {
    pub fn options(&self) -> Result<CgOptions, ConfigError> {
        let precond = match self.preconditioner.parse::<Preconditioner>().map_err(ConfigError::Invalid)? {
            Preconditioner::Ssor(_) => Preconditioner::Ssor(self.ssor_omega),
            p => p,
        };
        Ok(CgOptions { rel_tol: self.rel_tol, max_iter: self.max_iter, precond, ..CgOptions::default() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionSpec {
    Interval { lo: f64, hi: f64 },
    Box { lo: [f64; 2], hi: [f64; 2] },
    L1Ball { center: [f64; 2], radius: f64 },
}

impl From<&RegionSpec> for Region<f64> {
    fn from(r: &RegionSpec) -> Self {
        match *r {
            RegionSpec::Interval { lo, hi } => Region::Interval { lo, hi },
            RegionSpec::Box { lo, hi } => Region::Box { lo, hi },
            RegionSpec::L1Ball { center, radius } => Region::L1Ball { center, radius },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusSpec {
    pub region: RegionSpec,
    pub amplitude: f64,
    pub start: f64,
    pub duration: f64,
    #[serde(default)]
    pub period: Option<f64>,
    #[serde(default = "one")]
    pub count: usize,
    /// Bidomain only: inject into the extracellular space.
    #[serde(default)]
    pub extracellular: bool,
}

impl StimulusSpec {
    fn protocol(&self) -> Stimulus {
        Stimulus { period: self.period, count: self.count, ..Stimulus::pulse((&self.region).into(), self.amplitude, self.start, self.duration) }
    }
}

/// Output file names, relative to the output directory. `None` disables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_probes")]
    pub probes: Option<String>,
    #[serde(default = "default_activation")]
    pub activation: Option<String>,
    #[serde(default)]
    pub snapshot_stride: Option<usize>,
    #[serde(default = "default_prefix")]
    pub snapshot_prefix: String,
}

fn default_probes() -> Option<String> {
    Some("probes.csv".into())
}

fn default_activation() -> Option<String> {
    Some("activation.csv".into())
}

fn default_prefix() -> String {
    "snapshot".into()
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            probes: default_probes(),
            activation: default_activation(),
            snapshot_stride: None,
            snapshot_prefix: default_prefix(),
        }
    }
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub steps: usize,
    pub t_final: f64,
    pub activated_nodes: Option<usize>,
    pub cg_iterations_max: usize,
    pub files: Vec<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks that do not need the mesh or the solver.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.t_end > 0.0) {
            return invalid("t_end must be positive");
        }
        if self.probe_stride == 0 {
            return invalid("probe_stride must be at least one");
        }
        self.model()?;
        let bidomain = matches!(self.solver, SolverSpec::Bidomain { .. });
        if let SolverSpec::Monodomain { order, .. } = self.solver {
            IntegratorOrder::try_from(order)?;
        }
        for s in &self.stimuli {
            if s.extracellular && !bidomain {
                return invalid("extracellular stimuli need the bidomain solver");
            }
            s.protocol().validate().map_err(ConfigError::Invalid)?;
        }
        if let Some(thr) = self.activation_threshold {
            if !thr.is_finite() {
                return invalid("activation_threshold must be finite");
            }
        }
        let (lo, hi) = self.extent();
        let tol = 1e-9 * (1.0 + hi[0].abs().max(hi[1].abs()));
        for p in &self.probes {
            if (0..2).any(|k| p[k] < lo[k] - tol || p[k] > hi[k] + tol) {
                return invalid(format!("probe {p:?} lies outside the domain"));
            }
        }
        Ok(())
    }

    fn extent(&self) -> ([f64; 2], [f64; 2]) {
        match self.mesh {
            MeshSpec::Line { length, origin, .. } => ([origin, 0.0], [origin + length, 0.0]),
            MeshSpec::Rect { lx, ly, origin, .. } => (origin, [origin[0] + lx, origin[1] + ly]),
        }
    }

    pub fn model(&self) -> Result<Model, ConfigError> {
        Ok(Model::from_name(&self.model.name, &self.model.parameters)?.with_regularization(self.model.regularization_eps)?)
    }

    pub fn build_mesh(&self) -> Result<Mesh, ConfigError> {
        Ok(match self.mesh {
            MeshSpec::Line { length, elements, origin } => line_mesh_from(origin, length, elements)?,
            MeshSpec::Rect { lx, ly, nx, ny, diagonal, origin } => rect_tri_mesh_at(origin, lx, ly, nx, ny, diagonal.into())?,
        })
    }

    /// Runs the experiment and writes the requested outputs into `out`.
    pub fn execute(&self, out: &Path) -> Result<RunSummary, ConfigError> {
        self.validate()?;
        std::fs::create_dir_all(out)?;
        let mesh = self.build_mesh()?;
        let fibers = uniform_fiber_frame(&mesh, self.fiber_angle);
        let intra = self.tissue.diffusion()?;
        let cg = self.cg.options()?;
        let (inner, outer): (Vec<_>, Vec<_>) = self.stimuli.iter().partition(|s| !s.extracellular);
        match &self.solver {
            SolverSpec::Monodomain { tau, dt, c_m, order, stimulus_rate } => {
                let mut cfg = MonodomainConfig::new(*tau, *c_m, *dt);
                cfg.order = IntegratorOrder::try_from(*order)?;
                cfg.stimuli = inner.iter().map(|s| s.protocol()).collect();
                cfg.stimulus_rate = *stimulus_rate;
                cfg.cg = cg;
                let mut solver = Monodomain::from_rest(&mesh, &fibers, &intra, self.model()?, cfg)?;
                self.drive(&mesh, &mut solver, out)
            }
            SolverSpec::Bidomain { tau_i, tau_e, dt, c_m, extracellular, coupling_iterations } => {
                let extra = extracellular.diffusion()?;
                let mut cfg = BidomainConfig::new(*tau_i, *tau_e, *c_m, *dt);
                cfg.stimuli = inner.iter().map(|s| s.protocol()).collect();
                cfg.extracellular_stimuli = outer.iter().map(|s| s.protocol()).collect();
                cfg.coupling_iterations = *coupling_iterations;
                cfg.cg = cg;
                let mut solver = Bidomain::from_rest(&mesh, &fibers, &intra, &extra, self.model()?, cfg)?;
                self.drive(&mesh, &mut solver, out)
            }
        }
    }

    fn drive<S: TimeStepper<f64>>(&self, mesh: &Mesh, solver: &mut S, out: &Path) -> Result<RunSummary, ConfigError> {
        let nodes: Vec<usize> = self.probes.iter().map(|&p| mesh.nearest_node(p)).collect();
        let mut opts = RunOptions::until(self.t_end);
        opts.probes = nodes;
        opts.probe_stride = self.probe_stride;
        opts.activation_threshold = self.activation_threshold;
        opts.snapshot_stride = self.outputs.snapshot_stride;
        let mut files = Vec::new();
        let mut snapshot_error = None;
        let record = run_with(solver, &opts, |snap| {
            match write_snapshot(mesh, snap, out, &self.outputs.snapshot_prefix, &self.name) {
                Ok(path) => files.push(path),
                Err(e) => snapshot_error = Some(e),
            }
            Ok(())
        })?;
        if let Some(e) = snapshot_error {
            return Err(e);
        }
        files.extend(self.write_tables(mesh, &record, out)?);
        Ok(RunSummary {
            name: self.name.clone(),
            steps: record.steps,
            t_final: solver.time(),
            activated_nodes: record.activation.as_ref().map(|a| a.activated()),
            cg_iterations_max: record.stats.cg_iterations_max,
            files,
        })
    }

    fn write_tables(&self, mesh: &Mesh, record: &RunRecord<f64>, out: &Path) -> Result<Vec<PathBuf>, ConfigError> {
        let mut files = Vec::new();
        if let (Some(name), false) = (&self.outputs.probes, self.probes.is_empty()) {
            let table = ProbeTable {
                labels: self.probes.iter().map(|&p| ProbeTable::label(p, mesh.dim())).collect(),
                times: record.probe_times.clone(),
                values: record.probe_values.clone(),
            };
            let path = out.join(name);
            table.write(BufWriter::new(File::create(&path)?))?;
            files.push(path);
        }
        if let (Some(name), Some(map)) = (&self.outputs.activation, &record.activation) {
            let path = out.join(name);
            io::save_rows(&path, &io::activation_rows(mesh, map))?;
            files.push(path);
        }
        Ok(files)
    }
}

fn write_snapshot(
    mesh: &Mesh,
    snap: &Snapshot<f64>,
    out: &Path,
    prefix: &str,
    title: &str,
) -> Result<PathBuf, ConfigError> {
    let path = out.join(format!("{prefix}_{:06}.vtk", snap.step));
    let mut fields: Vec<(&str, &[f64])> = vec![("V", &snap.v), ("Q", &snap.q)];
    if let Some(ve) = &snap.ve {
        fields.push(("Ve", ve));
    }
    io::write_vtk(File::create(&path)?, mesh, &format!("{title} t={}", snap.t), &fields)?;
    Ok(path)
}
