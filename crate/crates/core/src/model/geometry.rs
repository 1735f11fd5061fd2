//! Polyhedral mode domains: intersections of half-spaces `{θ : ⟨n, θ⟩ ≤ c}`.

use serde::{Deserialize, Serialize};

use super::ModelError;

const AXIS_TOL: f64 = 1e-12;

/// A closed half-space `⟨normal, θ⟩ ≤ offset` with a unit outward normal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

impl HalfSpace {
    /// Builds a half-space, rescaling `normal` (and `offset`) to unit length.
    pub fn new(normal: Vec<f64>, offset: f64) -> Result<Self, ModelError> {
        let norm = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 || !offset.is_finite() {
            return Err(ModelError::InvalidFace(format!(
                "face normal {normal:?} with offset {offset} is degenerate"
            )));
        }
        Ok(Self {
            normal: normal.iter().map(|v| v / norm).collect(),
            offset: offset / norm,
        })
    }

    /// `⟨n, x⟩ − c`: negative inside, zero on the bounding hyperplane.
    #[inline]
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        dot(&self.normal, x) - self.offset
    }

    /// Orthogonal projection onto the bounding hyperplane.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let g = self.signed_distance(x);
        x.iter().zip(&self.normal).map(|(xi, ni)| xi - g * ni).collect()
    }

    /// `Some((axis, sign))` when the normal is `sign · e_axis`.
    pub fn axis(&self) -> Option<(usize, f64)> {
        let mut found = None;
        for (k, &v) in self.normal.iter().enumerate() {
            if (v.abs() - 1.0).abs() < AXIS_TOL {
                found = Some((k, v.signum()));
            } else if v.abs() > AXIS_TOL {
                return None;
            }
        }
        found
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.signed_distance(x) <= tol
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Aabb {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn diameter(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l) * (h - l))
            .sum::<f64>()
            .sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }
}

/// Intersection of finitely many half-spaces in `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyDomain {
    dim: usize,
    faces: Vec<HalfSpace>,
}

impl PolyDomain {
    pub fn new(dim: usize, faces: Vec<HalfSpace>) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(ModelError::InvalidDimension(0));
        }
        if let Some(f) = faces.iter().find(|f| f.normal.len() != dim) {
            return Err(ModelError::InvalidFace(format!(
                "face normal {:?} does not have dimension {dim}",
                f.normal
            )));
        }
        Ok(Self { dim, faces })
    }

    /// Axis-aligned box `[lo, hi]` written as `2d` half-spaces, lower face of
    /// axis `k` at index `2k` and upper face at `2k + 1`.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self, ModelError> {
        let dim = lo.len();
        let mut faces = Vec::with_capacity(2 * dim);
        for k in 0..dim {
            let mut n = vec![0.0; dim];
            n[k] = -1.0;
            faces.push(HalfSpace::new(n.clone(), -lo[k])?);
            n[k] = 1.0;
            faces.push(HalfSpace::new(n, hi[k])?);
        }
        Self::new(dim, faces)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn faces(&self) -> &[HalfSpace] {
        &self.faces
    }

    pub fn face(&self, k: usize) -> &HalfSpace {
        &self.faces[k]
    }

    pub fn contains_strict(&self, x: &[f64]) -> bool {
        self.faces.iter().all(|f| f.signed_distance(x) < 0.0)
    }

    pub fn contains_closed(&self, x: &[f64], tol: f64) -> bool {
        self.faces.iter().all(|f| f.contains(x, tol))
    }

    /// Largest `max_k ⟨n_k, x⟩ − c_k`; negative iff `x` is strictly inside.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.faces
            .iter()
            .map(|f| f.signed_distance(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bounding box implied by the axis-aligned faces, if every axis is
    /// bounded on both sides by such a face.
    pub fn bounding_box(&self) -> Option<Aabb> {
        let mut lo = vec![f64::NEG_INFINITY; self.dim];
        let mut hi = vec![f64::INFINITY; self.dim];
        for f in &self.faces {
            if let Some((k, s)) = f.axis() {
                if s > 0.0 {
                    hi[k] = hi[k].min(f.offset);
                } else {
                    lo[k] = lo[k].max(-f.offset);
                }
            }
        }
        if lo.iter().chain(&hi).all(|v| v.is_finite()) {
            Some(Aabb { lo, hi })
        } else {
            None
        }
    }

    /// True when every face is axis-aligned and the domain is exactly its
    /// bounding box (one face per box side).
    pub fn is_box(&self) -> bool {
        if self.faces.len() != 2 * self.dim || self.bounding_box().is_none() {
            return false;
        }
        let mut seen = vec![[false; 2]; self.dim];
        for f in &self.faces {
            match f.axis() {
                Some((k, s)) => {
                    let side = usize::from(s > 0.0);
                    if seen[k][side] {
                        return false;
                    }
                    seen[k][side] = true;
                }
                None => return false,
            }
        }
        true
    }

    /// Length scale used for tolerances: the box diameter when bounded,
    /// otherwise `max(1, max_k |c_k|)`.
    pub fn scale(&self) -> f64 {
        match self.bounding_box() {
            Some(b) => b.diameter().max(f64::MIN_POSITIVE),
            None => self
                .faces
                .iter()
                .map(|f| f.offset.abs())
                .fold(1.0, f64::max),
        }
    }

    /// Finite sampling window: the bounding box on bounded axes and
    /// `[-W, W]` elsewhere, `W = 10 (1 + max_k |c_k|)`.
    fn window(&self) -> Aabb {
        let w = 10.0 * (1.0 + self.faces.iter().map(|f| f.offset.abs()).fold(0.0, f64::max));
        let mut lo = vec![-w; self.dim];
        let mut hi = vec![w; self.dim];
        for f in &self.faces {
            if let Some((k, s)) = f.axis() {
                if s > 0.0 {
                    hi[k] = hi[k].min(f.offset);
                } else {
                    lo[k] = lo[k].max(-f.offset);
                }
            }
        }
        Aabb { lo, hi }
    }

    fn lattice(&self, window: &Aabb) -> Vec<Vec<f64>> {
        let m: usize = match self.dim {
            1 => 17,
            2 => 13,
            3 => 7,
            _ => 4,
        };
        let total = m.pow(self.dim as u32);
        let mut pts = Vec::with_capacity(total);
        for idx in 0..total {
            let mut rem = idx;
            let mut p = vec![0.0; self.dim];
            for k in 0..self.dim {
                let i = rem % m;
                rem /= m;
                let t = (i as f64 + 0.5) / m as f64;
                p[k] = window.lo[k] + t * (window.hi[k] - window.lo[k]);
            }
            pts.push(p);
        }
        pts
    }

    /// A point well inside the domain, or `None` when no lattice point of the
    /// sampling window is strictly interior.
    pub fn interior_point(&self) -> Option<Vec<f64>> {
        let window = self.window();
        let mut candidates = self.lattice(&window);
        candidates.push(window.center());
        // Thin slabs can slip between lattice points; midpoints of the face
        // anchors `c_k n_k` catch them.
        let anchors: Vec<Vec<f64>> = self
            .faces
            .iter()
            .map(|f| f.normal.iter().map(|n| n * f.offset).collect())
            .collect();
        for (i, a) in anchors.iter().enumerate() {
            for b in &anchors[i + 1..] {
                candidates.push(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect());
            }
        }
        candidates
            .into_iter()
            .map(|p| (self.max_violation(&p), p))
            .filter(|(v, _)| *v < 0.0)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, p)| p)
    }

    /// Deterministic sample points in the relative interior of face `k`
    /// (strictly inside every other face, inside the sampling window).
    pub fn face_samples(&self, k: usize) -> Vec<Vec<f64>> {
        let face = &self.faces[k];
        let tol = 1e-9 * self.scale();
        let window = self.window();
        let candidates: Vec<Vec<f64>> = if self.dim == 1 {
            vec![face.normal.iter().map(|n| n * face.offset).collect()]
        } else {
            let mut c: Vec<Vec<f64>> =
                self.lattice(&window).iter().map(|p| face.project(p)).collect();
            c.push(face.project(&window.center()));
            c
        };
        candidates
            .into_iter()
            .filter(|p| {
                p.iter()
                    .enumerate()
                    .all(|(i, v)| *v >= window.lo[i] - tol && *v <= window.hi[i] + tol)
                    && self
                        .faces
                        .iter()
                        .enumerate()
                        .all(|(j, f)| j == k || f.signed_distance(p) < -tol)
            })
            .collect()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_space_is_normalized() {
        let h = HalfSpace::new(vec![3.0, 4.0], 10.0).unwrap();
        assert!((h.normal[0] - 0.6).abs() < 1e-15);
        assert!((h.offset - 2.0).abs() < 1e-15);
        assert!(HalfSpace::new(vec![0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn box_domain_properties() {
        let d = PolyDomain::from_box(&[0.0, -1.0], &[2.0, 1.0]).unwrap();
        assert!(d.is_box());
        let b = d.bounding_box().unwrap();
        assert_eq!(b.lo, vec![0.0, -1.0]);
        assert_eq!(b.hi, vec![2.0, 1.0]);
        assert!(d.contains_strict(&[1.0, 0.0]));
        assert!(!d.contains_strict(&[2.0, 0.0]));
        assert!(d.interior_point().is_some());
    }

    #[test]
    fn half_line_is_not_a_box() {
        let d = PolyDomain::new(1, vec![HalfSpace::new(vec![-1.0], -19.0).unwrap()]).unwrap();
        assert!(!d.is_box());
        assert!(d.bounding_box().is_none());
        let s = d.face_samples(0);
        assert_eq!(s, vec![vec![19.0]]);
        let p = d.interior_point().unwrap();
        assert!(p[0] > 19.0);
    }

    #[test]
    fn face_samples_exclude_corners() {
        let d = PolyDomain::from_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let s = d.face_samples(0);
        assert!(!s.is_empty());
        for p in s {
            assert_eq!(p[0], 0.0);
            assert!(p[1] > 0.0 && p[1] < 1.0);
        }
    }

    #[test]
    fn empty_domain_has_no_interior_point() {
        let d = PolyDomain::new(
            1,
            vec![
                HalfSpace::new(vec![1.0], 0.0).unwrap(),
                HalfSpace::new(vec![-1.0], -1.0).unwrap(),
            ],
        )
        .unwrap();
        assert!(d.interior_point().is_none());
    }
}
