//! Applied current protocols.

use crate::mesh::SimplicialMesh;
use crate::scalar::Scalar;

/// Geometric support of a stimulus. All regions are closed sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region<T> {
    /// `lo <= x <= hi` on the first coordinate.
    Interval { lo: T, hi: T },
    /// Axis-aligned box.
    Box { lo: [T; 2], hi: [T; 2] },
    /// `|x - center|_1 <= radius`.
    L1Ball { center: [T; 2], radius: T },
}

impl<T: Scalar> Region<T> {
    pub fn contains(&self, p: [T; 2]) -> bool {
        let tol = T::lit(1e-12);
        match *self {
            Region::Interval { lo, hi } => p[0] >= lo - tol && p[0] <= hi + tol,
            Region::Box { lo, hi } => (0..2).all(|k| p[k] >= lo[k] - tol && p[k] <= hi[k] + tol),
            Region::L1Ball { center, radius } => (p[0] - center[0]).abs() + (p[1] - center[1]).abs() <= radius + tol,
        }
    }

    pub fn nodes(&self, mesh: &SimplicialMesh<T>) -> Vec<usize> {
        (0..mesh.n_nodes()).filter(|&i| self.contains(mesh.node(i))).collect()
    }
}

/// A current pulse train on a region: `count` pulses of length `duration`
/// starting at `start`, repeated every `period`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StimulusProtocol<T> {
    pub region: Region<T>,
    pub amplitude: T,
    pub start: T,
    pub duration: T,
    pub period: Option<T>,
    pub count: usize,
}

impl<T: Scalar> StimulusProtocol<T> {
    pub fn pulse(region: Region<T>, amplitude: T, start: T, duration: T) -> Self {
        Self { region, amplitude, start, duration, period: None, count: 1 }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration > T::zero()) {
            return Err("stimulus duration must be positive".into());
        }
        if self.count == 0 {
            return Err("stimulus count must be at least one".into());
        }
        if self.count > 1 {
            match self.period {
                Some(p) if p > T::zero() => {}
                _ => return Err("repeated stimulus needs a positive period".into()),
            }
        }
        Ok(())
    }

    /// Whether `t` falls in one of the half-open windows `[s, s + duration)`.
    pub fn is_active(&self, t: T) -> bool {
        let tol = T::lit(1e-9) * (T::one() + t.abs());
        (0..self.count).any(|k| {
            let s = self.start + self.period.unwrap_or(T::zero()) * T::from_usize_lossy(k);
            t >= s - tol && t < s + self.duration - tol
        })
    }

    /// Same protocol delayed by `delta`.
    pub fn shifted(&self, delta: T) -> Self {
        Self { start: self.start + delta, ..*self }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{line_mesh, rect_tri_mesh, Diagonal};

    #[test]
    fn interval_nodes() {
        let mesh = line_mesh(50.0, 1600).unwrap();
        let r = Region::Interval { lo: 24.5, hi: 25.5 };
        let nodes = r.nodes(&mesh);
        assert_eq!(nodes.first(), Some(&784));
        assert_eq!(nodes.last(), Some(&816));
    }

    #[test]
    fn l1_ball_corner() {
        let mesh = rect_tri_mesh(3.0, 3.0, 3, 3, Diagonal::Right).unwrap();
        let r = Region::L1Ball { center: [0.0, 0.0], radius: 1.0 };
        assert_eq!(r.nodes(&mesh), vec![0, 1, 4]);
    }

    #[test]
    fn timing_windows() {
        let s = StimulusProtocol {
            region: Region::Interval { lo: 0.0, hi: 1.0 },
            amplitude: 1.0,
            start: 10.0,
            duration: 2.0,
            period: Some(100.0),
            count: 2,
        };
        assert!(!s.is_active(9.9));
        assert!(s.is_active(10.0));
        assert!(s.is_active(11.9));
        assert!(!s.is_active(12.0));
        assert!(s.is_active(110.5));
        assert!(!s.is_active(210.5));
        assert!(s.validate().is_ok());
        assert!(StimulusProtocol { count: 0, ..s }.validate().is_err());
        assert!(StimulusProtocol { period: None, ..s }.validate().is_err());
    }
}
