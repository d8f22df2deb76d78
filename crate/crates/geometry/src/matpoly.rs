//! Polytopes in matrix space, stored by their vertex matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{GeometryError, Result};
use crate::poly::Polytope;

/// Convex polytope of matrices given by a finite vertex list, e.g. a family
/// of closed-loop matrices `{A + B K}`. An H-representation over the
/// vectorized entries can be attached when one is available.
#[derive(Debug, Clone)]
pub struct MatrixPolytope {
    rows: usize,
    cols: usize,
    vertices: Vec<DMatrix<f64>>,
    hrep: Option<(DMatrix<f64>, DVector<f64>)>,
}

impl MatrixPolytope {
    pub fn from_vertices(vertices: Vec<DMatrix<f64>>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(GeometryError::EmptyInput);
        }
        let rows = vertices[0].nrows();
        let cols = vertices[0].ncols();
        for v in &vertices {
            if v.nrows() != rows || v.ncols() != cols {
                return Err(GeometryError::DimensionMismatch {
                    expected: rows * cols,
                    got: v.nrows() * v.ncols(),
                });
            }
        }
        let mut vertices = dedup_matrices(vertices);
        vertices = reduce_to_extreme(vertices, rows, cols);
        Ok(Self { rows, cols, vertices, hrep: None })
    }

    pub fn with_hrep(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Self {
        self.hrep = Some((g, h));
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn vertices(&self) -> &[DMatrix<f64>] {
        &self.vertices
    }

    pub fn hrep(&self) -> Option<(&DMatrix<f64>, &DVector<f64>)> {
        self.hrep.as_ref().map(|(g, h)| (g, h))
    }

    /// Image family `{f(M)}` over the vertex matrices.
    pub fn map<F: Fn(&DMatrix<f64>) -> DMatrix<f64>>(&self, f: F) -> Result<Self> {
        Self::from_vertices(self.vertices.iter().map(f).collect())
    }

    /// Hull of the union of images `M_j · P` over all vertex matrices:
    /// the tightest polytope containing `{M x | M in family, x in P}`.
    pub fn robust_image(&self, p: &Polytope) -> Result<Polytope> {
        if p.dim() != self.cols {
            return Err(GeometryError::DimensionMismatch { expected: self.cols, got: p.dim() });
        }
        let verts = p.vertices()?;
        if verts.is_empty() {
            return Ok(Polytope::empty(self.rows));
        }
        let mut pts = Vec::with_capacity(self.vertices.len() * verts.len());
        for m in &self.vertices {
            for v in verts {
                pts.push(m * v);
            }
        }
        Polytope::from_vertices(&pts)
    }
}

/// Keep only the extreme points of the family in vectorized space; image
/// families of higher-dimensional sets are mostly interior points, and
/// every downstream set iteration scales with this count.
fn reduce_to_extreme(list: Vec<DMatrix<f64>>, rows: usize, cols: usize) -> Vec<DMatrix<f64>> {
    let dim = rows * cols;
    if dim > 8 || list.len() <= dim + 1 {
        return list;
    }
    let points: Vec<DVector<f64>> = list
        .iter()
        .map(|m| DVector::from_iterator(dim, m.iter().copied()))
        .collect();
    match crate::dd::hull_from_points(&points, crate::poly::VERTEX_CAP) {
        Ok((_, _, verts)) => verts
            .into_iter()
            .map(|v| DMatrix::from_iterator(rows, cols, v.iter().copied()))
            .collect(),
        Err(_) => list,
    }
}

fn dedup_matrices(list: Vec<DMatrix<f64>>) -> Vec<DMatrix<f64>> {
    let scale = list.iter().map(|m| m.amax()).fold(0.0f64, f64::max);
    let tol = 1e-9 * (1.0 + scale);
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(list.len());
    for m in list {
        if !out.iter().any(|o| (o - &m).amax() <= tol) {
            out.push(m);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn robust_image_of_box() {
        let fam = MatrixPolytope::from_vertices(vec![
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]),
        ])
        .unwrap();
        let p = Polytope::box_centered(&[1.0, 1.0]).unwrap();
        let img = fam.robust_image(&p).unwrap();
        let e1 = DVector::from_row_slice(&[1.0, 0.0]);
        assert!((img.support(&e1).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn duplicates_merged() {
        let m = DMatrix::from_row_slice(1, 1, &[1.0]);
        let fam = MatrixPolytope::from_vertices(vec![m.clone(), m.clone(), m]).unwrap();
        assert_eq!(fam.vertices().len(), 1);
    }
}
