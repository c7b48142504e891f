//! CSV tables and legacy-VTK snapshots.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use hypercardio::{ActivationMap, Mesh};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed table: {0}")]
    Format(String),
}

/// Writes serializable rows with a header derived from the field names.
pub fn write_rows<R: Serialize, W: Write>(out: W, rows: &[R]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: DeserializeOwned, I: Read>(input: I) -> Result<Vec<R>, IoError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(IoError::from)).collect()
}

pub fn save_rows<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), IoError> {
    write_rows(BufWriter::new(File::create(path)?), rows)
}

pub fn load_rows<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>, IoError> {
    read_rows(File::open(path)?)
}

/// Probe time series: one column per probe location.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTable {
    pub labels: Vec<String>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl ProbeTable {
    /// Labels of the form `V@x` (1D) or `V@x:y` (2D).
    pub fn label(point: [f64; 2], dim: usize) -> String {
        if dim == 1 {
            format!("V@{}", point[0])
        } else {
            format!("V@{}:{}", point[0], point[1])
        }
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), IoError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (t, row) in self.times.iter().zip(&self.values) {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<I: Read>(input: I) -> Result<Self, IoError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.get(0) != Some("t") {
            return Err(IoError::Format("probe table must start with column `t`".into()));
        }
        let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut table = ProbeTable { labels, times: Vec::new(), values: Vec::new() };
        for rec in r.records() {
            let rec = rec?;
            let mut nums = rec.iter().map(|s| s.parse::<f64>().map_err(|e| IoError::Format(format!("`{s}`: {e}"))));
            table.times.push(nums.next().ok_or_else(|| IoError::Format("empty row".into()))??);
            table.values.push(nums.collect::<Result<_, _>>()?);
        }
        Ok(table)
    }
}

/// One activation-map row. `t_act` is empty for nodes that never activated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRow {
    pub node: usize,
    pub x: f64,
    pub y: f64,
    pub t_act: Option<f64>,
}

pub fn activation_rows(mesh: &Mesh, map: &ActivationMap<f64>) -> Vec<ActivationRow> {
    (0..mesh.n_nodes())
        .map(|k| {
            let [x, y] = mesh.node(k);
            ActivationRow { node: k, x, y, t_act: map.get(k) }
        })
        .collect()
}

/// Legacy-VTK ASCII unstructured grid with one scalar point array per field.
pub fn write_vtk<W: Write>(out: W, mesh: &Mesh, title: &str, fields: &[(&str, &[f64])]) -> Result<(), IoError> {
    let mut w = BufWriter::new(out);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.lines().next().unwrap_or(""))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} float", mesh.n_nodes())?;
    for p in mesh.nodes() {
        writeln!(w, "{} {} 0", p[0] as f32, p[1] as f32)?;
    }
    let nv = if mesh.dim() == 1 { 2 } else { 3 };
    writeln!(w, "CELLS {} {}", mesh.n_elements(), mesh.n_elements() * (nv + 1))?;
    for e in mesh.elements() {
        write!(w, "{nv}")?;
        for v in e {
            write!(w, " {v}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "CELL_TYPES {}", mesh.n_elements())?;
    let cell_type = if mesh.dim() == 1 { 3 } else { 5 };
    for _ in 0..mesh.n_elements() {
        writeln!(w, "{cell_type}")?;
    }
    writeln!(w, "POINT_DATA {}", mesh.n_nodes())?;
    for (name, values) in fields {
        if values.len() != mesh.n_nodes() {
            return Err(IoError::Format(format!("field `{name}` has {} values for {} nodes", values.len(), mesh.n_nodes())));
        }
        writeln!(w, "SCALARS {name} float 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in *values {
            writeln!(w, "{}", *v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}
