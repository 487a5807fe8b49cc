//! Piecewise-constant potential profiles confined to a finite interval.

use crate::error::{Result, TunnelError};

/// One constant-potential slab.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    /// Width in nm, strictly positive.
    pub width: f64,
    /// Height in eV; negative values model wells.
    pub height: f64,
}

/// Potential that vanishes outside `[a, b]` and is piecewise constant inside.
///
/// `a > 0` so an incident packet prepared around the origin starts strictly
/// to the left of the support.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialProfile {
    a: f64,
    segments: Vec<Segment>,
}

impl PotentialProfile {
    /// Profile from an ordered segment list.
    pub fn new(a: f64, segments: Vec<Segment>) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(TunnelError::Domain(format!(
                "left edge must satisfy a > 0, got {a}"
            )));
        }
        if segments.is_empty() {
            return Err(TunnelError::Domain("profile needs at least one segment".into()));
        }
        for s in &segments {
            if !(s.width > 0.0) || !s.width.is_finite() || !s.height.is_finite() {
                return Err(TunnelError::Domain(format!(
                    "invalid segment (width {}, height {})",
                    s.width, s.height
                )));
            }
        }
        Ok(Self { a, segments })
    }

    /// Rectangular barrier of height `v0` starting at `a` with width `d`.
    pub fn rectangular(v0: f64, a: f64, d: f64) -> Result<Self> {
        if !(d > 0.0) {
            return Err(TunnelError::Domain(format!("width must be positive, got {d}")));
        }
        Self::new(a, vec![Segment { width: d, height: v0 }])
    }

    /// Mirror image V(a + b - x): the profile seen by a wave incident from
    /// the right, as a left-incidence problem.
    pub fn invert(&self) -> Self {
        let mut segments = self.segments.clone();
        segments.reverse();
        Self {
            a: self.a,
            segments,
        }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// Right edge b = a + sum of widths.
    pub fn b(&self) -> f64 {
        self.a + self.width()
    }

    /// Total support width d = b - a.
    pub fn width(&self) -> f64 {
        self.segments.iter().map(|s| s.width).sum()
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b())
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// `(height, width)` when the profile is a single slab.
    pub fn as_rectangle(&self) -> Option<(f64, f64)> {
        match self.segments.as_slice() {
            [s] => Some((s.height, s.width)),
            _ => None,
        }
    }

    /// Right-continuous evaluation; zero for x < a and x >= b.
    pub fn value_at(&self, x: f64) -> f64 {
        if x < self.a || x >= self.b() {
            return 0.0;
        }
        let mut edge = self.a;
        for s in &self.segments {
            edge += s.width;
            if x < edge {
                return s.height;
            }
        }
        0.0
    }

    /// Distinct positive segment heights, ascending. These mark barrier-top
    /// energies where transmission switches between evanescent and
    /// oscillatory behaviour.
    pub fn barrier_tops(&self) -> Vec<f64> {
        let mut tops: Vec<f64> = self
            .segments
            .iter()
            .map(|s| s.height)
            .filter(|&v| v > 0.0)
            .collect();
        tops.sort_by(|a, b| a.partial_cmp(b).unwrap());
        tops.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        tops
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectangular_edges() {
        let p = PotentialProfile::rectangular(0.3, 100.0, 5.0).unwrap();
        assert_eq!(p.a(), 100.0);
        assert_eq!(p.b(), 105.0);
        assert_eq!(p.width(), 5.0);
        assert_eq!(p.midpoint(), 102.5);
    }

    #[test]
    fn free_space_profile() {
        let p = PotentialProfile::rectangular(0.0, 50.0, 10.0).unwrap();
        assert_eq!(p.value_at(55.0), 0.0);
        assert!(p.barrier_tops().is_empty());
    }

    #[test]
    fn invalid_construction() {
        assert!(PotentialProfile::rectangular(0.3, 0.0, 5.0).is_err());
        assert!(PotentialProfile::rectangular(0.3, -1.0, 5.0).is_err());
        assert!(PotentialProfile::rectangular(0.3, 1.0, 0.0).is_err());
        assert!(PotentialProfile::new(1.0, vec![]).is_err());
    }

    #[test]
    fn inversion_reverses_segments() {
        let p = PotentialProfile::new(
            10.0,
            vec![
                Segment { width: 2.0, height: 0.3 },
                Segment { width: 3.0, height: 0.1 },
            ],
        )
        .unwrap();
        let q = p.invert();
        assert_eq!(q.segments()[0], Segment { width: 3.0, height: 0.1 });
        assert_eq!(q.segments()[1], Segment { width: 2.0, height: 0.3 });
        assert_eq!(q.a(), p.a());
        assert_eq!(q.b(), p.b());
        assert_eq!(q.midpoint(), p.midpoint());
        assert_eq!(q.invert(), p);
    }

    #[test]
    fn symmetric_barrier_is_inversion_fixed_point() {
        let p = PotentialProfile::rectangular(0.3, 100.0, 5.0).unwrap();
        assert_eq!(p.invert(), p);
    }

    #[test]
    fn tiny_support_midpoint() {
        let p = PotentialProfile::rectangular(0.1, 1.0, 0.0001).unwrap();
        assert!((p.midpoint() - 1.00005).abs() < 1e-12);
    }

    #[test]
    fn evaluation_is_right_continuous() {
        let p = PotentialProfile::new(
            1.0,
            vec![
                Segment { width: 1.0, height: 0.5 },
                Segment { width: 1.0, height: -0.2 },
            ],
        )
        .unwrap();
        assert_eq!(p.value_at(0.999), 0.0);
        assert_eq!(p.value_at(1.0), 0.5);
        assert_eq!(p.value_at(2.0), -0.2);
        assert_eq!(p.value_at(3.0), 0.0);
        assert_eq!(p.value_at(10.0), 0.0);
    }

    #[test]
    fn inversion_preserves_edge_data() {
        let p = PotentialProfile::new(
            5.0,
            vec![
                Segment { width: 1.5, height: 0.4 },
                Segment { width: 0.5, height: 0.2 },
                Segment { width: 2.0, height: 0.4 },
            ],
        )
        .unwrap();
        let q = p.invert();
        assert_eq!(q.width(), p.width());
        assert_eq!(q.barrier_tops(), p.barrier_tops());
    }
}
