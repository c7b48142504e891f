//! Observables extracted from solver output.

use hypercardio::{ActivationMap, Mesh, SparseOperator};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("no front reached node {node}")]
    NoFront { node: usize },
    #[error("nodes {a} and {b} activated simultaneously")]
    Simultaneous { a: usize, b: usize },
    #[error("need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },
}

/// Conduction velocity between the mesh nodes nearest to `x1` and `x2`.
pub fn conduction_velocity(
    mesh: &Mesh,
    map: &ActivationMap<f64>,
    x1: [f64; 2],
    x2: [f64; 2],
) -> Result<f64, MeasureError> {
    let a = mesh.nearest_node(x1);
    let b = mesh.nearest_node(x2);
    node_velocity(mesh, map, a, b)
}

pub fn node_velocity(mesh: &Mesh, map: &ActivationMap<f64>, a: usize, b: usize) -> Result<f64, MeasureError> {
    let ta = map.get(a).ok_or(MeasureError::NoFront { node: a })?;
    let tb = map.get(b).ok_or(MeasureError::NoFront { node: b })?;
    let dt = (tb - ta).abs();
    if dt == 0.0 {
        return Err(MeasureError::Simultaneous { a, b });
    }
    Ok(mesh.distance(a, b) / dt)
}

/// Times at which `series` crosses `threshold` upwards, linearly interpolated.
pub fn upcrossings(times: &[f64], series: &[f64], threshold: f64) -> Vec<f64> {
    times
        .windows(2)
        .zip(series.windows(2))
        .filter(|(_, v)| v[0] < threshold && v[1] >= threshold)
        .map(|(t, v)| t[0] + (threshold - v[0]) / (v[1] - v[0]) * (t[1] - t[0]))
        .collect()
}

/// Upcrossings that start no earlier than `quiet` after the end of every
/// stimulus window listed in `stimulus_windows`.
pub fn unstimulated_activations(
    times: &[f64],
    series: &[f64],
    threshold: f64,
    stimulus_windows: &[(f64, f64)],
    quiet: f64,
) -> Vec<f64> {
    upcrossings(times, series, threshold)
        .into_iter()
        .filter(|&t| !stimulus_windows.iter().any(|&(s, e)| t >= s && t <= e + quiet))
        .collect()
}

/// `log2(e_k / e_{k+1})` for successive halvings.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|e| (e[0] / e[1]).log2()).collect()
}

/// Least-squares slope of `log(err)` against `log(h)`.
pub fn fitted_order(h: &[f64], err: &[f64]) -> Result<f64, MeasureError> {
    let n = h.len().min(err.len());
    if n < 2 {
        return Err(MeasureError::TooShort { needed: 2, got: n });
    }
    let xs: Vec<f64> = h[..n].iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err[..n].iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

/// `sqrt(e^T M e)` with the consistent mass matrix.
pub fn l2_error(mass: &SparseOperator<f64>, numeric: &[f64], exact: &[f64]) -> f64 {
    let e: Vec<f64> = numeric.iter().zip(exact).map(|(a, b)| a - b).collect();
    mass.quadratic_form(&e).max(0.0).sqrt()
}
