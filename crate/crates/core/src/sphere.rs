//! Cubed-sphere lattices on `S^k`, gnomonic face charts, and maps between
//! spheres sampled on them.
//!
//! Nodes are cell centred, so no node lies on a face edge and the antipode
//! of a node is again a node (same axis, opposite face, mirrored index).

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{IsoflowError, Result};
use crate::interp::{Axis, GridInterpolant};
use crate::moser::DiffeoGrid;

/// Step of the default FD tangent push, in gnomonic units.
pub const FRAME_STEP: f64 = 1e-4;

/// The face `{x_axis = +-1}` of the cube circumscribing the sphere.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub positive: bool,
}

impl Face {
    fn sign(self) -> f64 {
        if self.positive {
            1.0
        } else {
            -1.0
        }
    }

    pub fn opposite(self) -> Face {
        Face { axis: self.axis, positive: !self.positive }
    }
}

/// Ambient coordinate carried by gnomonic coordinate `j` on a face.
fn ambient_index(face: Face, j: usize) -> usize {
    if j < face.axis {
        j
    } else {
        j + 1
    }
}

/// Gnomonic chart inverse: `a -> q/|q|` with `q_axis = +-1`, other entries `a`.
pub fn embed(face: Face, a: &[f64]) -> Vec<f64> {
    let mut q = Vec::with_capacity(a.len() + 1);
    q.extend_from_slice(&a[..face.axis]);
    q.push(face.sign());
    q.extend_from_slice(&a[face.axis..]);
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.iter().map(|v| v / norm).collect()
}

/// Columns `dp/da_j` of the gnomonic embedding, an `(k+1) x k` matrix.
pub fn embed_frame(face: Face, a: &[f64]) -> DMatrix<f64> {
    let k = a.len();
    let p = embed(face, a);
    let norm = (1.0 + a.iter().map(|v| v * v).sum::<f64>()).sqrt();
    DMatrix::from_fn(k + 1, k, |i, j| {
        let e = if i == ambient_index(face, j) { 1.0 } else { 0.0 };
        (e - p[i] * p[ambient_index(face, j)]) / norm
    })
}

/// Face of largest `|p_i|` and the gnomonic coordinates of `p` there.
pub fn gnomonic(p: &[f64]) -> (Face, Vec<f64>) {
    let mut axis = 0;
    for i in 1..p.len() {
        if p[i].abs() > p[axis].abs() {
            axis = i;
        }
    }
    let face = Face { axis, positive: p[axis] > 0.0 };
    let s = p[axis].abs();
    let a = (0..p.len()).filter(|&i| i != axis).map(|i| p[i] / s).collect();
    (face, a)
}

/// Round volume density in gnomonic coordinates on `S^k`.
pub fn gnomonic_density(a: &[f64]) -> f64 {
    let k = a.len() as f64;
    (1.0 + a.iter().map(|v| v * v).sum::<f64>()).powf(-0.5 * (k + 1.0))
}

/// Signed ratio `det[y | Y] / det[p | T]`: the pullback of the round volume
/// form through a map sending `p -> y` and tangent frame `T -> Y`.
pub fn volume_ratio(p: &[f64], frame: &DMatrix<f64>, y: &[f64], pushed: &DMatrix<f64>) -> f64 {
    let build = |v: &[f64], cols: &DMatrix<f64>| {
        let n = v.len();
        DMatrix::from_fn(n, n, |i, j| if j == 0 { v[i] } else { cols[(i, j - 1)] })
    };
    build(y, pushed).determinant() / build(p, frame).determinant()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CubedSphere {
    /// Dimension `k` of `S^k`.
    pub dim: usize,
    pub per_axis: usize,
}

impl CubedSphere {
    pub fn new(dim: usize, per_axis: usize) -> Result<Self> {
        if dim == 0 || per_axis < 2 {
            return Err(IsoflowError::Config(format!("cubed sphere needs dim >= 1 and >= 2 nodes per axis, got {dim}, {per_axis}")));
        }
        Ok(CubedSphere { dim, per_axis })
    }

    pub fn faces(&self) -> Vec<Face> {
        (0..=self.dim).flat_map(|axis| [false, true].map(|positive| Face { axis, positive })).collect()
    }

    fn per_face(&self) -> usize {
        self.per_axis.pow(self.dim as u32)
    }

    pub fn len(&self) -> usize {
        2 * (self.dim + 1) * self.per_face()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -1.0 + (2 * i + 1) as f64 / self.per_axis as f64
    }

    /// Face and gnomonic coordinates of node `flat`.
    pub fn node(&self, flat: usize) -> (Face, Vec<f64>) {
        let per_face = self.per_face();
        let face = self.faces()[flat / per_face];
        let mut rem = flat % per_face;
        let mut a = vec![0.0; self.dim];
        for j in (0..self.dim).rev() {
            a[j] = self.coordinate(rem % self.per_axis);
            rem /= self.per_axis;
        }
        (face, a)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let (face, a) = self.node(flat);
        embed(face, &a)
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.point(k)).collect()
    }

    pub fn antipode(&self, flat: usize) -> usize {
        let per_face = self.per_face();
        let face = flat / per_face;
        // faces are ordered (axis, negative), (axis, positive)
        let twin = face ^ 1;
        let mut rem = flat % per_face;
        let mut mirrored = 0;
        let mut scale = 1;
        for _ in 0..self.dim {
            mirrored += (self.per_axis - 1 - rem % self.per_axis) * scale;
            rem /= self.per_axis;
            scale *= self.per_axis;
        }
        twin * per_face + mirrored
    }

    /// Sample `map` at every node, with the signed round-volume ratio as the
    /// Jacobian determinant.
    pub fn sample(&self, map: &dyn SphereMap) -> Result<DiffeoGrid> {
        let mut grid = DiffeoGrid { nodes: Vec::with_capacity(self.len()), map: Vec::new(), jacobian_det: Vec::new() };
        for k in 0..self.len() {
            let (face, a) = self.node(k);
            let p = embed(face, &a);
            let frame = embed_frame(face, &a);
            let (y, pushed) = map.push_frame(face, &a)?;
            grid.jacobian_det.push(volume_ratio(&p, &frame, &y, &pushed));
            grid.nodes.push(p);
            grid.map.push(y);
        }
        Ok(grid)
    }
}

/// Index of the antipode of every node; errors if some node has none.
pub fn antipode_index(nodes: &[Vec<f64>]) -> Result<Vec<usize>> {
    const QUANTUM: f64 = 1e-9;
    let key = |p: &[f64], sign: f64| -> Vec<i64> { p.iter().map(|v| (sign * v / QUANTUM).round() as i64).collect() };
    let table: HashMap<Vec<i64>, usize> = nodes.iter().enumerate().map(|(i, p)| (key(p, 1.0), i)).collect();
    nodes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            table
                .get(&key(p, -1.0))
                .copied()
                .ok_or_else(|| IsoflowError::Config(format!("node {i} has no antipode in the grid")))
        })
        .collect()
}

/// A map `S^k -> S^k`.
pub trait SphereMap: Send + Sync {
    fn apply(&self, p: &[f64]) -> Result<Vec<f64>>;

    /// Image of the point `embed(face, a)` and of its gnomonic frame.
    fn push_frame(&self, face: Face, a: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let k = a.len();
        let y = self.apply(&embed(face, a))?;
        let mut cols = DMatrix::zeros(k + 1, k);
        for j in 0..k {
            let at = |s: f64| -> Result<Vec<f64>> {
                let mut b = a.to_vec();
                b[j] += s * FRAME_STEP;
                self.apply(&embed(face, &b))
            };
            let (p2, p1, m1, m2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
            for i in 0..=k {
                cols[(i, j)] = (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * FRAME_STEP);
            }
        }
        Ok((y, cols))
    }
}

pub struct IdentityMap;

impl SphereMap for IdentityMap {
    fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        Ok(p.to_vec())
    }
    fn push_frame(&self, face: Face, a: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        Ok((embed(face, a), embed_frame(face, a)))
    }
}

/// `p -> R p` for an orthogonal `R`.
pub struct Rotation(pub DMatrix<f64>);

impl Rotation {
    /// Rotation by `angle` in the coordinate plane `(i, j)` of `R^{k+1}`.
    pub fn plane(dim: usize, i: usize, j: usize, angle: f64) -> Self {
        let mut r = DMatrix::identity(dim + 1, dim + 1);
        let (s, c) = angle.sin_cos();
        r[(i, i)] = c;
        r[(j, j)] = c;
        r[(i, j)] = -s;
        r[(j, i)] = s;
        Rotation(r)
    }
}

impl SphereMap for Rotation {
    fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        Ok((&self.0 * nalgebra::DVector::from_column_slice(p)).iter().copied().collect())
    }
    fn push_frame(&self, face: Face, a: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        Ok((self.apply(&embed(face, a))?, &self.0 * embed_frame(face, a)))
    }
}

/// `p -> D p / |D p|` for a positive diagonal `D`; not an isometry unless
/// `D` is a multiple of the identity.
pub struct Squeeze(pub Vec<f64>);

impl SphereMap for Squeeze {
    fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        let q: Vec<f64> = p.iter().zip(&self.0).map(|(a, b)| a * b).collect();
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(q.iter().map(|v| v / n).collect())
    }
}

/// A density relative to the round volume form.
#[derive(Clone, Debug)]
pub enum SphereDensity {
    Uniform(f64),
    /// Node values on a cubed sphere, interpolated per face.
    Tabulated { grid: CubedSphere, faces: Vec<GridInterpolant> },
}

impl SphereDensity {
    pub fn tabulated(grid: CubedSphere, values: &[f64]) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(IsoflowError::Config(format!("density has {} values for {} nodes", values.len(), grid.len())));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(IsoflowError::InvalidDensity { min });
        }
        let per_face = grid.per_axis.pow(grid.dim as u32);
        let axis = Axis::spanning(grid.coordinate(0), grid.coordinate(grid.per_axis - 1), grid.per_axis);
        let order = 6.min(grid.per_axis);
        let faces = values
            .chunks(per_face)
            .map(|chunk| GridInterpolant::new(vec![axis; grid.dim], chunk.to_vec(), order))
            .collect();
        Ok(SphereDensity::Tabulated { grid, faces })
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        match self {
            SphereDensity::Uniform(v) => *v,
            SphereDensity::Tabulated { grid, faces } => {
                let (face, a) = gnomonic(p);
                let idx = grid.faces().iter().position(|f| *f == face).expect("face of the same sphere");
                faces[idx].eval(&a)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn antipodes_match_geometry() {
        for (dim, n) in [(2, 5), (3, 4)] {
            let g = CubedSphere::new(dim, n).unwrap();
            let pts = g.points();
            let idx = antipode_index(&pts).unwrap();
            for k in 0..g.len() {
                assert_eq!(g.antipode(k), idx[k]);
                let s: f64 = pts[k].iter().zip(&pts[idx[k]]).map(|(a, b)| (a + b).abs()).sum();
                assert!(s < 1e-15);
            }
        }
    }

    #[test]
    fn gnomonic_inverts_embed() {
        let g = CubedSphere::new(3, 3).unwrap();
        for k in 0..g.len() {
            let (face, a) = g.node(k);
            let (f2, b) = gnomonic(&embed(face, &a));
            assert_eq!(face, f2);
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-15));
        }
    }

    #[test]
    fn rotation_preserves_volume_and_squeeze_does_not() {
        let g = CubedSphere::new(2, 6).unwrap();
        let rot = g.sample(&Rotation::plane(2, 0, 1, 0.7)).unwrap();
        assert!(rot.jacobian_det.iter().all(|d| (d - 1.0).abs() < 1e-12));
        let sq = g.sample(&Squeeze(vec![1.3, 1.0, 1.0])).unwrap();
        assert!(sq.jacobian_det.iter().any(|d| (d - 1.0).abs() > 1e-2));
    }

    #[test]
    fn gnomonic_density_matches_frame_volume() {
        let face = Face { axis: 1, positive: false };
        let a = [0.3, -0.6, 0.2];
        let t = embed_frame(face, &a);
        let gram = t.transpose() * &t;
        assert!((gram.determinant().sqrt() - gnomonic_density(&a)).abs() < 1e-14);
    }

    #[test]
    fn tabulated_density_interpolates_smooth_data() {
        let g = CubedSphere::new(2, 12).unwrap();
        let f = |p: &[f64]| 2.0 + p[0] * p[1] + p[2];
        let vals: Vec<f64> = g.points().iter().map(|p| f(p)).collect();
        let d = SphereDensity::tabulated(g, &vals).unwrap();
        let q = embed(Face { axis: 2, positive: true }, &[0.13, -0.41]);
        assert!((d.eval(&q) - f(&q)).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn embed_lands_on_sphere(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, axis in 0usize..4, positive: bool) {
            let p = embed(Face { axis, positive }, &[a, b, c]);
            prop_assert!((p.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-14);
            let t = embed_frame(Face { axis, positive }, &[a, b, c]);
            for j in 0..3 {
                let dot: f64 = (0..4).map(|i| p[i] * t[(i, j)]).sum();
                prop_assert!(dot.abs() < 1e-14);
            }
        }
    }
}
