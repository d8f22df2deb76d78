//! JSON wire format for polytopes: `{ "G": [[..]], "h": [..], "vertices": [[..]]? }`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};
use crate::poly::Polytope;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolytopeJson {
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<Vec<f64>>>,
}

impl From<&Polytope> for PolytopeJson {
    fn from(p: &Polytope) -> Self {
        let (g, h) = p.facets();
        let rows = (0..g.nrows())
            .map(|i| g.row(i).iter().copied().collect())
            .collect();
        let vertices = if p.has_vertices() {
            Some(
                p.vertices()
                    .unwrap()
                    .iter()
                    .map(|v| v.iter().copied().collect())
                    .collect(),
            )
        } else {
            None
        };
        PolytopeJson { g: rows, h: h.iter().copied().collect(), vertices }
    }
}

impl PolytopeJson {
    pub fn to_polytope(&self) -> Result<Polytope> {
        if self.g.is_empty() {
            return Err(GeometryError::EmptyInput);
        }
        let dim = self.g[0].len();
        let mut flat = Vec::with_capacity(self.g.len() * dim);
        for row in &self.g {
            if row.len() != dim {
                return Err(GeometryError::DimensionMismatch { expected: dim, got: row.len() });
            }
            flat.extend_from_slice(row);
        }
        let g = DMatrix::from_row_slice(self.g.len(), dim, &flat);
        let h = DVector::from_vec(self.h.clone());
        // Re-enumerate rather than trust cached vertices from disk; the
        // invariant is that both representations agree.
        Polytope::from_halfspaces(g, h)
    }
}
