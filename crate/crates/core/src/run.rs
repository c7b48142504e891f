//! Time loop with probe, activation and snapshot recording.

use crate::monodomain::{SolverError, SolverStats, TimeStepper};
use crate::scalar::Scalar;

/// First upward threshold crossing per node, linearly interpolated between
/// the samples that bracket it. `None` marks nodes that never activated.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap<T> {
    pub threshold: T,
    pub times: Vec<Option<T>>,
}

impl<T: Scalar> ActivationMap<T> {
    pub fn new(n: usize, threshold: T) -> Self {
        Self { threshold, times: vec![None; n] }
    }

    /// Registers the transition from `(t0, v0)` to `(t1, v1)`.
    pub fn update(&mut self, t0: T, v0: &[T], t1: T, v1: &[T]) {
        let thr = self.threshold;
        for (k, slot) in self.times.iter_mut().enumerate() {
            if slot.is_none() && v0[k] < thr && v1[k] >= thr {
                let s = (thr - v0[k]) / (v1[k] - v0[k]);
                *slot = Some(t0 + s * (t1 - t0));
            }
        }
    }

    /// Nodes already above threshold at `t`.
    pub fn seed(&mut self, t: T, v: &[T]) {
        for (k, slot) in self.times.iter_mut().enumerate() {
            if slot.is_none() && v[k] >= self.threshold {
                *slot = Some(t);
            }
        }
    }

    pub fn get(&self, node: usize) -> Option<T> {
        self.times[node]
    }

    pub fn activated(&self) -> usize {
        self.times.iter().filter(|t| t.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions<T> {
    pub t_end: T,
    /// Node indices sampled into the probe table.
    pub probes: Vec<usize>,
    pub probe_stride: usize,
    pub activation_threshold: Option<T>,
    pub activation_stride: usize,
    pub snapshot_stride: Option<usize>,
    /// Stop early once all of these nodes have activated.
    pub stop_when_activated: Vec<usize>,
}

impl<T: Scalar> RunOptions<T> {
    pub fn until(t_end: T) -> Self {
        Self {
            t_end,
            probes: Vec::new(),
            probe_stride: 1,
            activation_threshold: None,
            activation_stride: 1,
            snapshot_stride: None,
            stop_when_activated: Vec::new(),
        }
    }
}

/// Fields captured at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<T> {
    pub step: usize,
    pub t: T,
    pub v: Vec<T>,
    pub q: Vec<T>,
    pub ve: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord<T> {
    pub probe_times: Vec<T>,
    /// One row per sample, one column per probe.
    pub probe_values: Vec<Vec<T>>,
    pub activation: Option<ActivationMap<T>>,
    pub steps: usize,
    pub stats: SolverStats,
}

impl<T: Scalar> RunRecord<T> {
    /// Time series of a single probe column.
    pub fn probe_series(&self, column: usize) -> Vec<T> {
        self.probe_values.iter().map(|row| row[column]).collect()
    }
}

fn snapshot<T: Scalar, S: TimeStepper<T>>(s: &S, step: usize) -> Snapshot<T> {
    Snapshot {
        step,
        t: s.time(),
        v: s.potential().to_vec(),
        q: s.potential_rate().to_vec(),
        ve: s.extracellular().map(<[T]>::to_vec),
    }
}

/// Advances `stepper` to `t_end`, calling `on_snapshot` at the snapshot
/// stride (including the initial state).
pub fn run_with<T, S, F>(stepper: &mut S, opts: &RunOptions<T>, mut on_snapshot: F) -> Result<RunRecord<T>, SolverError>
where
    T: Scalar,
    S: TimeStepper<T>,
    F: FnMut(&Snapshot<T>) -> Result<(), SolverError>,
{
    let dt = stepper.dt();
    let remaining = ((opts.t_end - stepper.time()) / dt - T::lit(1e-9)).ceil();
    let n_steps = remaining.to_usize().unwrap_or(0);
    let probe_stride = opts.probe_stride.max(1);
    let act_stride = opts.activation_stride.max(1);
    let mut record = RunRecord {
        probe_times: Vec::new(),
        probe_values: Vec::new(),
        activation: None,
        steps: 0,
        stats: *stepper.stats(),
    };
    let sample = |s: &S, rec: &mut RunRecord<T>| {
        rec.probe_times.push(s.time());
        rec.probe_values.push(opts.probes.iter().map(|&p| s.potential()[p]).collect());
    };
    let mut activation = opts.activation_threshold.map(|thr| {
        let mut a = ActivationMap::new(stepper.potential().len(), thr);
        a.seed(stepper.time(), stepper.potential());
        a
    });
    let mut last = (stepper.time(), stepper.potential().to_vec());
    if !opts.probes.is_empty() {
        sample(stepper, &mut record);
    }
    if opts.snapshot_stride.is_some() {
        on_snapshot(&snapshot(stepper, 0))?;
    }
    for n in 1..=n_steps {
        stepper.step()?;
        record.steps = n;
        if !opts.probes.is_empty() && n % probe_stride == 0 {
            sample(stepper, &mut record);
        }
        if let Some(act) = activation.as_mut() {
            if n % act_stride == 0 || n == n_steps {
                act.update(last.0, &last.1, stepper.time(), stepper.potential());
                last.0 = stepper.time();
                last.1.copy_from_slice(stepper.potential());
            }
        }
        if let Some(stride) = opts.snapshot_stride {
            if stride > 0 && n % stride == 0 {
                on_snapshot(&snapshot(stepper, n))?;
            }
        }
        if !opts.stop_when_activated.is_empty() {
            if let Some(act) = activation.as_ref() {
                if opts.stop_when_activated.iter().all(|&k| act.get(k).is_some()) {
                    break;
                }
            }
        }
    }
    record.activation = activation;
    record.stats = *stepper.stats();
    Ok(record)
}

/// [`run_with`] that keeps every snapshot in memory.
pub fn run<T: Scalar, S: TimeStepper<T>>(
    stepper: &mut S,
    opts: &RunOptions<T>,
) -> Result<(RunRecord<T>, Vec<Snapshot<T>>), SolverError> {
    let mut snaps = Vec::new();
    let rec = run_with(stepper, opts, |s| {
        snaps.push(s.clone());
        Ok(())
    })?;
    Ok((rec, snaps))
}
