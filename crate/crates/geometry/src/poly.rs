//! Convex polytopes with a facet representation and a cached vertex list.

use nalgebra::{DMatrix, DVector};

use crate::dd;
use crate::error::{GeometryError, Result};
use crate::lp::{solve_standard, LpOutcome};

/// Hard cap on enumerated vertices (spec default).
pub const VERTEX_CAP: usize = 100_000;

/// Convex polytope `{x | G x <= h}` with unit facet normals and, for every
/// eagerly constructed set, the cached vertex list sorted lexicographically.
///
/// A cached `Some(vec![])` certifies emptiness. Lazily built sets (large
/// consistency polytopes) carry `None` until `ensure_vertices` runs.
#[derive(Debug, Clone)]
pub struct Polytope {
    dim: usize,
    g: DMatrix<f64>,
    h: DVector<f64>,
    vertices: Option<Vec<DVector<f64>>>,
}

impl Polytope {
    /// Build from inequalities and enumerate the vertex list.
    ///
    /// Errors on unbounded sets; an empty set is a legal value.
    pub fn from_halfspaces(g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        let mut p = Self::from_halfspaces_lazy(g, h)?;
        p.ensure_vertices()?;
        Ok(p)
    }

    /// Build from inequalities without enumerating vertices.
    pub fn from_halfspaces_lazy(g: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        if g.nrows() != h.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: g.nrows(),
                got: h.len(),
            });
        }
        let dim = g.ncols();
        if dim == 0 {
            return Err(GeometryError::EmptyInput);
        }
        let (g, h) = normalize_rows(&g, &h)?;
        Ok(Self { dim, g, h, vertices: None })
    }

    /// Hull of a point cloud; degenerate clouds come back with paired
    /// equality facets.
    pub fn from_vertices(points: &[DVector<f64>]) -> Result<Self> {
        let (g, h, vertices) = dd::hull_from_points(points, VERTEX_CAP)?;
        let dim = g.ncols();
        let (g, h) = normalize_rows(&g, &h)?;
        Ok(Self { dim, g, h, vertices: Some(vertices) })
    }

    /// Axis-aligned box `|x_i| <= half[i]`.
    pub fn box_centered(half: &[f64]) -> Result<Self> {
        let dim = half.len();
        if dim == 0 {
            return Err(GeometryError::EmptyInput);
        }
        if half.iter().any(|&r| r < 0.0) {
            return Err(GeometryError::Numerical("negative box half-width".into()));
        }
        if half.iter().all(|&r| r == 0.0) {
            return Self::singleton(&DVector::zeros(dim));
        }
        let mut g = DMatrix::<f64>::zeros(2 * dim, dim);
        let mut h = DVector::<f64>::zeros(2 * dim);
        for j in 0..dim {
            g[(2 * j, j)] = 1.0;
            h[2 * j] = half[j];
            g[(2 * j + 1, j)] = -1.0;
            h[2 * j + 1] = half[j];
        }
        Self::from_halfspaces(g, h)
    }

    /// Interval `[lo, hi]` in one dimension.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if lo > hi {
            return Ok(Self::empty(1));
        }
        let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let h = DVector::from_row_slice(&[hi, -lo]);
        Self::from_halfspaces(g, h)
    }

    /// The single point `{p}` as paired equality facets.
    pub fn singleton(p: &DVector<f64>) -> Result<Self> {
        Self::from_vertices(std::slice::from_ref(p))
    }

    /// Certified-empty set of the given dimension.
    pub fn empty(dim: usize) -> Self {
        let mut g = DMatrix::<f64>::zeros(1, dim);
        g[(0, 0)] = 1.0;
        Self {
            dim,
            g,
            h: DVector::from_element(1, f64::NEG_INFINITY),
            vertices: Some(Vec::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn facets(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.g, &self.h)
    }

    pub fn num_facets(&self) -> usize {
        self.g.nrows()
    }

    /// Enumerate and cache the vertex list if not already present.
    pub fn ensure_vertices(&mut self) -> Result<()> {
        if self.vertices.is_none() {
            let v = dd::vertices_from_halfspaces(&self.g, &self.h, VERTEX_CAP)?;
            self.vertices = Some(v);
        }
        Ok(())
    }

    pub fn vertices(&self) -> Result<&[DVector<f64>]> {
        self.vertices
            .as_deref()
            .ok_or_else(|| GeometryError::Numerical("vertices not enumerated".into()))
    }

    pub fn has_vertices(&self) -> bool {
        self.vertices.is_some()
    }

    pub fn is_empty(&self) -> bool {
        match &self.vertices {
            Some(v) => v.is_empty(),
            // Lazy sets: Chebyshev feasibility.
            None => !matches!(self.chebyshev(), Ok(Some(_))),
        }
    }

    /// Chebyshev center and inradius; `None` when empty.
    pub fn chebyshev(&self) -> Result<Option<(DVector<f64>, f64)>> {
        // max r s.t. Gx + r 1 <= h, solved in the dual.
        let m = self.g.nrows();
        let mut at = DMatrix::<f64>::zeros(self.dim + 1, m);
        for i in 0..m {
            for j in 0..self.dim {
                at[(j, i)] = self.g[(i, j)];
            }
            at[(self.dim, i)] = 1.0;
        }
        let mut d = DVector::zeros(self.dim + 1);
        d[self.dim] = 1.0;
        match solve_standard(&DVector::from(self.h.clone()), &at, &d) {
            LpOutcome::Optimal { value, multipliers, .. } => {
                if value < -dd::FACET_TOL * (1.0 + self.h.amax()) {
                    return Ok(None);
                }
                let center = multipliers.rows(0, self.dim).into_owned();
                Ok(Some((center, value.max(0.0))))
            }
            // Dual infeasible: the primal is unbounded, hence nonempty with
            // arbitrarily large inscribed balls.
            LpOutcome::Infeasible { .. } => Ok(Some((DVector::zeros(self.dim), f64::INFINITY))),
            LpOutcome::Unbounded => Ok(None),
        }
    }

    /// Support value `max_{x in P} <d, x>`.
    pub fn support(&self, d: &DVector<f64>) -> Result<f64> {
        if d.len() != self.dim {
            return Err(GeometryError::DimensionMismatch { expected: self.dim, got: d.len() });
        }
        if let Some(verts) = &self.vertices {
            if verts.is_empty() {
                return Err(GeometryError::InfeasibleSet);
            }
            return Ok(verts.iter().map(|v| d.dot(v)).fold(f64::NEG_INFINITY, f64::max));
        }
        match solve_standard(&DVector::from(self.h.clone()), &self.g.transpose(), d) {
            LpOutcome::Optimal { value, .. } => Ok(value),
            LpOutcome::Infeasible { .. } => Err(GeometryError::UnboundedInDirection),
            LpOutcome::Unbounded => Err(GeometryError::InfeasibleSet),
        }
    }

    /// Minkowski sum via vertex sums and a re-hull.
    pub fn minkowski_sum(&self, other: &Polytope) -> Result<Polytope> {
        self.check_dim(other)?;
        let a = self.vertices()?;
        let b = other.vertices()?;
        if a.is_empty() || b.is_empty() {
            return Ok(Polytope::empty(self.dim));
        }
        let mut pts = Vec::with_capacity(a.len() * b.len());
        for va in a {
            for vb in b {
                pts.push(va + vb);
            }
        }
        Polytope::from_vertices(&pts)
    }

    /// Pontryagin difference `{x | {x} + other ⊆ self}`.
    ///
    /// The result may be empty; emptiness is a flagged value, not an error.
    pub fn pontryagin_diff(&self, other: &Polytope) -> Result<Polytope> {
        self.check_dim(other)?;
        let mut h = self.h.clone();
        for i in 0..self.g.nrows() {
            let row: DVector<f64> = self.g.row(i).transpose();
            h[i] -= other.support(&row)?;
        }
        match Polytope::from_halfspaces(self.g.clone(), h) {
            Ok(p) => Ok(p),
            Err(GeometryError::UnboundedSet) => Err(GeometryError::UnboundedSet),
            Err(_) => Ok(Polytope::empty(self.dim)),
        }
    }

    /// Image `{M x | x in P}`; rank-deficient maps yield degenerate hulls.
    pub fn linear_image(&self, m: &DMatrix<f64>) -> Result<Polytope> {
        if m.ncols() != self.dim {
            return Err(GeometryError::DimensionMismatch { expected: self.dim, got: m.ncols() });
        }
        let verts = self.vertices()?;
        if verts.is_empty() {
            return Ok(Polytope::empty(m.nrows()));
        }
        let pts: Vec<DVector<f64>> = verts.iter().map(|v| m * v).collect();
        Polytope::from_vertices(&pts)
    }

    /// Hull of a finite union.
    pub fn convex_hull_union(sets: &[Polytope]) -> Result<Polytope> {
        if sets.is_empty() {
            return Err(GeometryError::EmptyInput);
        }
        let dim = sets[0].dim;
        let mut pts = Vec::new();
        for s in sets {
            if s.dim != dim {
                return Err(GeometryError::DimensionMismatch { expected: dim, got: s.dim });
            }
            pts.extend_from_slice(s.vertices()?);
        }
        if pts.is_empty() {
            return Ok(Polytope::empty(dim));
        }
        Polytope::from_vertices(&pts)
    }

    /// Intersection (stacked facets, re-enumerated).
    pub fn intersect(&self, other: &Polytope) -> Result<Polytope> {
        self.check_dim(other)?;
        let mut g = DMatrix::<f64>::zeros(self.g.nrows() + other.g.nrows(), self.dim);
        g.rows_mut(0, self.g.nrows()).copy_from(&self.g);
        g.rows_mut(self.g.nrows(), other.g.nrows()).copy_from(&other.g);
        let mut h = DVector::<f64>::zeros(g.nrows());
        h.rows_mut(0, self.h.len()).copy_from(&self.h);
        h.rows_mut(self.h.len(), other.h.len()).copy_from(&other.h);
        match Polytope::from_halfspaces(g, h) {
            Ok(p) => Ok(p),
            Err(GeometryError::UnboundedSet) => Err(GeometryError::UnboundedSet),
            Err(_) => Ok(Polytope::empty(self.dim)),
        }
    }

    /// Reflection `-P`.
    pub fn neg(&self) -> Result<Polytope> {
        let verts = self.vertices()?;
        if verts.is_empty() {
            return Ok(Polytope::empty(self.dim));
        }
        let pts: Vec<DVector<f64>> = verts.iter().map(|v| -v).collect();
        Polytope::from_vertices(&pts)
    }

    /// Scaled copy `s·P` for `s >= 0`.
    pub fn scale(&self, s: f64) -> Result<Polytope> {
        if s < 0.0 {
            return Err(GeometryError::Numerical("negative scale".into()));
        }
        if self.is_empty() {
            return Ok(Polytope::empty(self.dim));
        }
        if s == 0.0 {
            return Polytope::singleton(&DVector::zeros(self.dim));
        }
        let vertices = self
            .vertices
            .as_ref()
            .map(|vs| vs.iter().map(|v| v * s).collect::<Vec<_>>());
        Ok(Polytope {
            dim: self.dim,
            g: self.g.clone(),
            h: &self.h * s,
            vertices,
        })
    }

    /// Membership with Euclidean slack `min_i (h_i - g_i·x)`.
    pub fn contains_point(&self, x: &DVector<f64>) -> Result<(bool, f64)> {
        if x.len() != self.dim {
            return Err(GeometryError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let r = &self.h - &self.g * x;
        let margin = r.min();
        Ok((margin >= -dd::FACET_TOL, margin))
    }

    /// Set containment `other ⊆ self` by vertex checks, with the worst
    /// (facet, vertex) slack as margin.
    pub fn contains_poly(&self, other: &Polytope) -> Result<(bool, f64)> {
        self.check_dim(other)?;
        let verts = other.vertices()?;
        if verts.is_empty() {
            return Ok((true, f64::INFINITY));
        }
        let mut margin = f64::INFINITY;
        for v in verts {
            let r = &self.h - &self.g * v;
            margin = margin.min(r.min());
        }
        Ok((margin >= -dd::FACET_TOL, margin))
    }

    /// Euclidean radius `max_{v in vert} ||v||`.
    pub fn radius(&self) -> Result<f64> {
        let verts = self.vertices()?;
        if verts.is_empty() {
            return Err(GeometryError::InfeasibleSet);
        }
        Ok(verts.iter().map(|v| v.norm()).fold(0.0, f64::max))
    }

    /// Strict origin membership: every normalized offset positive.
    pub fn origin_interior(&self) -> bool {
        self.h.min() > dd::FACET_TOL
    }

    /// Boundedness certificate: finite support in every coordinate direction.
    pub fn is_bounded(&self) -> bool {
        if self.vertices.is_some() {
            return true;
        }
        matches!(dd::coordinate_bounds(&self.g, &self.h), Ok(Some(_)) | Ok(None))
    }

    fn check_dim(&self, other: &Polytope) -> Result<()> {
        if self.dim != other.dim {
            return Err(GeometryError::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        Ok(())
    }
}

/// Gauge (Minkowski functional) of `x` with respect to `w`:
/// `max_i (G_w x)_i / (h_w)_i`. Requires the origin strictly inside `w`.
pub fn gauge(w: &Polytope, x: &DVector<f64>) -> Result<f64> {
    if !w.origin_interior() {
        return Err(GeometryError::OriginNotInterior);
    }
    let (g, h) = w.facets();
    let gx = g * x;
    let mut val: f64 = 0.0;
    for i in 0..h.len() {
        val = val.max(gx[i] / h[i]);
    }
    Ok(val.max(0.0))
}

/// Induced gauge norm `||M||_W = min { c : M W ⊆ c W }`, evaluated as the
/// max gauge of the mapped vertices.
pub fn gauge_norm(m: &DMatrix<f64>, w: &Polytope) -> Result<f64> {
    if m.nrows() != w.dim() || m.ncols() != w.dim() {
        return Err(GeometryError::DimensionMismatch { expected: w.dim(), got: m.ncols() });
    }
    if !w.origin_interior() {
        return Err(GeometryError::OriginNotInterior);
    }
    let mut val: f64 = 0.0;
    for v in w.vertices()? {
        val = val.max(gauge(w, &(m * v))?);
    }
    Ok(val)
}

fn normalize_rows(g: &DMatrix<f64>, h: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(g.nrows());
    let mut offs: Vec<f64> = Vec::with_capacity(g.nrows());
    for i in 0..g.nrows() {
        let row: DVector<f64> = g.row(i).transpose();
        let nrm = row.norm();
        if nrm < 1e-14 {
            if h[i] < -dd::FACET_TOL {
                // 0 <= negative: encode certified emptiness.
                let dim = g.ncols();
                let mut gg = DMatrix::<f64>::zeros(1, dim);
                gg[(0, 0)] = 1.0;
                return Ok((gg, DVector::from_element(1, f64::NEG_INFINITY)));
            }
            continue;
        }
        rows.push(row / nrm);
        offs.push(h[i] / nrm);
    }
    if rows.is_empty() {
        return Err(GeometryError::UnboundedSet);
    }
    let mut gm = DMatrix::<f64>::zeros(rows.len(), g.ncols());
    for (i, r) in rows.iter().enumerate() {
        gm.row_mut(i).copy_from(&r.transpose());
    }
    Ok((gm, DVector::from_vec(offs)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boxp(a: f64, b: f64) -> Polytope {
        Polytope::box_centered(&[a, b]).unwrap()
    }

    #[test]
    fn support_box() {
        let p = boxp(1.0, 1.0);
        assert!((p.support(&DVector::from_row_slice(&[1.0, 0.0])).unwrap() - 1.0).abs() < 1e-9);
        assert!((p.support(&DVector::from_row_slice(&[1.0, 1.0])).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn support_triangle_hand_enumerated() {
        let p = Polytope::from_vertices(&[
            DVector::from_row_slice(&[0.0, 0.0]),
            DVector::from_row_slice(&[2.0, 0.0]),
            DVector::from_row_slice(&[0.0, 1.0]),
        ])
        .unwrap();
        // max of <(1,2), v> over the three vertices: 0, 2, 2 -> 2.
        assert!((p.support(&DVector::from_row_slice(&[1.0, 2.0])).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn minkowski_intervals() {
        let a = Polytope::interval(-1.0, 1.0).unwrap();
        let b = Polytope::interval(-2.0, 2.0).unwrap();
        let s = a.minkowski_sum(&b).unwrap();
        let one = DVector::from_row_slice(&[1.0]);
        assert!((s.support(&one).unwrap() - 3.0).abs() < 1e-9);
        assert!((s.support(&(-one.clone())).unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn minkowski_with_singleton_is_identity() {
        let p = boxp(1.0, 1.0);
        let z = Polytope::singleton(&DVector::zeros(2)).unwrap();
        let s = p.minkowski_sum(&z).unwrap();
        let (ok, m) = s.contains_poly(&p).unwrap();
        assert!(ok, "margin {m}");
        let (ok, _) = p.contains_poly(&s).unwrap();
        assert!(ok);
    }

    #[test]
    fn pontryagin_boxes() {
        let a = boxp(2.0, 2.0);
        let b = boxp(0.01, 0.01);
        let d = a.pontryagin_diff(&b).unwrap();
        let e1 = DVector::from_row_slice(&[1.0, 0.0]);
        assert!((d.support(&e1).unwrap() - 1.99).abs() < 1e-9);
    }

    #[test]
    fn pontryagin_identity_and_empty() {
        let a = boxp(1.0, 1.0);
        let z = Polytope::singleton(&DVector::zeros(2)).unwrap();
        let same = a.pontryagin_diff(&z).unwrap();
        assert!(a.contains_poly(&same).unwrap().0 && same.contains_poly(&a).unwrap().0);

        let big = boxp(2.0, 2.0);
        let e = a.pontryagin_diff(&big).unwrap();
        assert!(e.is_empty());
    }

    #[test]
    fn linear_image_cases() {
        let p = boxp(1.0, 1.0);
        let id = DMatrix::<f64>::identity(2, 2);
        let img = p.linear_image(&id).unwrap();
        assert!(p.contains_poly(&img).unwrap().0 && img.contains_poly(&p).unwrap().0);

        let zero = DMatrix::<f64>::zeros(2, 2);
        let z = p.linear_image(&zero).unwrap();
        assert_eq!(z.vertices().unwrap().len(), 1);

        // Shear of the unit box: vertices map to (±2, ±1), (0, ±1).
        let shear = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let s = p.linear_image(&shear).unwrap();
        for v in p.vertices().unwrap() {
            let (inside, _) = s.contains_point(&(&shear * v)).unwrap();
            assert!(inside);
        }
        assert!((s.support(&DVector::from_row_slice(&[1.0, 0.0])).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn hull_union_1d() {
        let a = Polytope::interval(-1.0, 0.0).unwrap();
        let b = Polytope::interval(0.0, 1.0).unwrap();
        let u = Polytope::convex_hull_union(&[a, b]).unwrap();
        let one = DVector::from_row_slice(&[1.0]);
        assert!((u.support(&one).unwrap() - 1.0).abs() < 1e-9);
        assert!((u.support(&(-one)).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gauge_norm_cases() {
        let w = boxp(1.0, 1.0);
        assert!(gauge_norm(&DMatrix::zeros(2, 2), &w).unwrap().abs() < 1e-12);
        assert!((gauge_norm(&DMatrix::identity(2, 2), &w).unwrap() - 1.0).abs() < 1e-9);
        // Row sums of the shear give 2 on any centered square.
        let shear = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        for c in [0.3, 1.0, 7.5] {
            let wc = boxp(c, c);
            assert!((gauge_norm(&shear, &wc).unwrap() - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gauge_rejects_no_interior() {
        let seg = Polytope::from_vertices(&[
            DVector::from_row_slice(&[0.0, 0.0]),
            DVector::from_row_slice(&[1.0, 0.0]),
        ])
        .unwrap();
        assert!(matches!(
            gauge_norm(&DMatrix::identity(2, 2), &seg),
            Err(GeometryError::OriginNotInterior)
        ));
    }

    #[test]
    fn contains_margins() {
        let big = boxp(2.0, 2.0);
        let small = boxp(1.0, 1.0);
        let (ok, margin) = big.contains_poly(&small).unwrap();
        assert!(ok);
        assert!((margin - 1.0).abs() < 1e-9);
        let (ok, _) = small.contains_poly(&big).unwrap();
        assert!(!ok);
    }

    #[test]
    fn radius_values() {
        assert!((boxp(1.0, 1.0).radius().unwrap() - 2.0_f64.sqrt()).abs() < 1e-9);
        let z = Polytope::singleton(&DVector::zeros(2)).unwrap();
        assert!(z.radius().unwrap() < 1e-12);
        let w = boxp(0.01, 0.01);
        assert!((w.radius().unwrap() - 2.0_f64.sqrt() * 1e-2).abs() < 1e-12);
    }

    #[test]
    fn chebyshev_box() {
        // Centers are non-unique along the long axis; check the radius and
        // that the ball actually fits.
        let p = boxp(1.0, 2.0);
        let (c, r) = p.chebyshev().unwrap().unwrap();
        assert!((r - 1.0).abs() < 1e-8);
        let (g, h) = p.facets();
        let resid = h - g * &c;
        assert!(resid.min() >= r - 1e-8);
    }

    #[test]
    fn scale_zero_is_origin() {
        let p = boxp(1.0, 1.0).scale(0.0).unwrap();
        assert_eq!(p.vertices().unwrap().len(), 1);
        assert!(p.vertices().unwrap()[0].amax() < 1e-12);
    }
}
