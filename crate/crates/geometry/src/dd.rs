//! Representation conversion: halfspace intersection to vertex list and
//! point hull to facet list.
//!
//! Vertex enumeration runs the double-description method seeded with an
//! LP-certified bounding box; facets are recovered from points through the
//! polar dual after projecting onto the affine hull, so lower-dimensional
//! hulls come back with explicit paired equality rows.

use nalgebra::{DMatrix, DVector};

use crate::error::{GeometryError, Result};
use crate::lp::{solve_standard, LpOutcome};

/// Absolute tolerance on facet residuals (spec default).
pub const FACET_TOL: f64 = 1e-9;
/// Singular-value cutoff for affine-hull / equality detection.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Clone)]
struct DdVertex {
    x: DVector<f64>,
    /// Indices of facets active at this vertex (box facets first).
    active: Vec<u32>,
}

/// Coordinate-wise support bounds of `{x : g x <= h}`.
///
/// Returns `Err(UnboundedSet)` when some coordinate direction has no finite
/// support, `Ok(None)` when the set is empty.
pub fn coordinate_bounds(
    g: &DMatrix<f64>,
    h: &DVector<f64>,
) -> Result<Option<Vec<(f64, f64)>>> {
    let dim = g.ncols();
    let gt = g.transpose();
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut hi = 0.0;
        let mut lo = 0.0;
        for (sign, slot) in [(1.0, 0usize), (-1.0, 1usize)] {
            let mut d = DVector::zeros(dim);
            d[j] = sign;
            // max d.x s.t. gx <= h  ==  min h.y s.t. g^T y = d, y >= 0
            match solve_standard(&DVector::from(h.clone()), &gt, &d) {
                LpOutcome::Optimal { value, .. } => {
                    if slot == 0 {
                        hi = value;
                    } else {
                        lo = -value;
                    }
                }
                LpOutcome::Infeasible { .. } => return Err(GeometryError::UnboundedSet),
                LpOutcome::Unbounded => return Ok(None),
            }
        }
        out.push((lo, hi));
    }
    Ok(Some(out))
}

/// Enumerate the vertices of `{x : g x <= h}` (rows need not be normalized).
///
/// An empty vertex list means the set is empty. Unbounded sets error.
pub fn vertices_from_halfspaces(
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    cap: usize,
) -> Result<Vec<DVector<f64>>> {
    let dim = g.ncols();
    if dim == 0 || g.nrows() != h.len() {
        return Err(GeometryError::DimensionMismatch {
            expected: g.nrows(),
            got: h.len(),
        });
    }
    let Some(bounds) = coordinate_bounds(g, h)? else {
        return Ok(Vec::new());
    };

    // Inflate the box so its facets never bind on the true set.
    let mut lo = DVector::zeros(dim);
    let mut hi = DVector::zeros(dim);
    for j in 0..dim {
        let span = (bounds[j].1 - bounds[j].0).abs();
        let pad = 0.25 * span + 1e-3;
        lo[j] = bounds[j].0 - pad;
        hi[j] = bounds[j].1 + pad;
    }

    // Seed with the box corners; box facet ids are 0..2*dim.
    let mut verts: Vec<DdVertex> = Vec::with_capacity(1usize << dim);
    for mask in 0u32..(1u32 << dim) {
        let mut x = DVector::zeros(dim);
        let mut active = Vec::with_capacity(dim);
        for j in 0..dim {
            if mask >> j & 1 == 1 {
                x[j] = hi[j];
                active.push(2 * j as u32);
            } else {
                x[j] = lo[j];
                active.push(2 * j as u32 + 1);
            }
        }
        active.sort_unstable();
        verts.push(DdVertex { x, active });
    }

    // Normal rows of all facets, box first, for active-set recomputation
    // and adjacency rank tests.
    let mut normals: Vec<DVector<f64>> = Vec::with_capacity(2 * dim + g.nrows());
    let mut offsets: Vec<f64> = Vec::with_capacity(2 * dim + g.nrows());
    for j in 0..dim {
        let mut e = DVector::zeros(dim);
        e[j] = 1.0;
        normals.push(e.clone());
        offsets.push(hi[j]);
        normals.push(-e);
        offsets.push(-lo[j]);
    }

    let scale = 1.0 + hi.amax().max(lo.amax());
    let ctol = FACET_TOL * scale.max(1.0);

    for r in 0..g.nrows() {
        let row: DVector<f64> = g.row(r).transpose();
        let nrm = row.norm();
        if nrm < 1e-14 {
            if h[r] < -ctol {
                return Ok(Vec::new());
            }
            continue;
        }
        let n = row / nrm;
        let b = h[r] / nrm;

        // Skip rows that cannot cut the current bounding box.
        let mut box_max = 0.0;
        for j in 0..dim {
            box_max += if n[j] >= 0.0 { n[j] * hi[j] } else { n[j] * lo[j] };
        }
        if box_max <= b + ctol {
            continue;
        }

        let facet_id = normals.len() as u32;
        normals.push(n.clone());
        offsets.push(b);

        let resid: Vec<f64> = verts.iter().map(|v| b - n.dot(&v.x)).collect();
        let any_neg = resid.iter().any(|&t| t < -ctol);
        if !any_neg {
            for (v, &t) in verts.iter_mut().zip(&resid) {
                if t.abs() <= ctol {
                    v.active.push(facet_id);
                }
            }
            continue;
        }
        let any_keep = resid.iter().any(|&t| t >= -ctol);
        if !any_keep {
            return Ok(Vec::new());
        }

        let mut next: Vec<DdVertex> = Vec::new();
        let pos_idx: Vec<usize> = (0..verts.len()).filter(|&i| resid[i] > ctol).collect();
        let neg_idx: Vec<usize> = (0..verts.len()).filter(|&i| resid[i] < -ctol).collect();
        for (i, v) in verts.iter().enumerate() {
            if resid[i] >= -ctol {
                let mut kept = v.clone();
                if resid[i] <= ctol {
                    kept.active.push(facet_id);
                    kept.active.sort_unstable();
                }
                next.push(kept);
            }
        }
        for &ip in &pos_idx {
            for &inn in &neg_idx {
                let u = &verts[ip];
                let w = &verts[inn];
                if !adjacent(u, w, &normals, dim) {
                    continue;
                }
                let t = resid[ip] / (resid[ip] - resid[inn]);
                let x = &u.x + (&w.x - &u.x) * t;
                // Recompute the active set against all processed facets at
                // the interpolated point; symbolic bookkeeping drifts under
                // degeneracy.
                let mut active = Vec::new();
                for (fid, (nv, ov)) in normals.iter().zip(&offsets).enumerate() {
                    if (ov - nv.dot(&x)).abs() <= 4.0 * ctol {
                        active.push(fid as u32);
                    }
                }
                next.push(DdVertex { x, active });
            }
        }
        dedup_vertices(&mut next, ctol);
        if next.len() > cap {
            return Err(GeometryError::VertexCapExceeded { cap });
        }
        verts = next;
    }

    // Any surviving vertex supported only by box facets would mean the LP
    // bounds were wrong; polish and drop box-only artifacts defensively.
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(verts.len());
    for v in &verts {
        if v.active.iter().all(|&f| (f as usize) < 2 * dim) && g.nrows() > 0 {
            continue;
        }
        out.push(polish(&v.x, &v.active, &normals, &offsets, dim));
    }
    if g.nrows() == 0 {
        out = verts.into_iter().map(|v| v.x).collect();
    }
    dedup_points(&mut out, ctol);
    sort_points(&mut out);
    Ok(out)
}

/// Edge test: the facets active at both vertices must span a (dim-1)-space.
fn adjacent(u: &DdVertex, w: &DdVertex, normals: &[DVector<f64>], dim: usize) -> bool {
    let mut shared: Vec<u32> = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    while i < u.active.len() && j < w.active.len() {
        match u.active[i].cmp(&w.active[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared.push(u.active[i]);
                i += 1;
                j += 1;
            }
        }
    }
    if shared.len() + 1 < dim {
        return false;
    }
    if dim == 1 {
        return true;
    }
    let mut m = DMatrix::<f64>::zeros(shared.len(), dim);
    for (r, &f) in shared.iter().enumerate() {
        m.row_mut(r).copy_from(&normals[f as usize].transpose());
    }
    numeric_rank(&m) == dim - 1
}

fn numeric_rank(m: &DMatrix<f64>) -> usize {
    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    if smax <= 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > RANK_TOL * smax.max(1.0))
        .count()
}

/// Least-squares re-solve of a vertex from its active facets.
fn polish(
    x: &DVector<f64>,
    active: &[u32],
    normals: &[DVector<f64>],
    offsets: &[f64],
    dim: usize,
) -> DVector<f64> {
    if active.len() < dim {
        return x.clone();
    }
    let mut a = DMatrix::<f64>::zeros(active.len(), dim);
    let mut b = DVector::<f64>::zeros(active.len());
    for (r, &f) in active.iter().enumerate() {
        a.row_mut(r).copy_from(&normals[f as usize].transpose());
        b[r] = offsets[f as usize];
    }
    let svd = a.svd(true, true);
    match svd.solve(&b, RANK_TOL) {
        Ok(sol) if (&sol - x).amax() < 1e-4 * (1.0 + x.amax()) => sol,
        _ => x.clone(),
    }
}

fn dedup_vertices(verts: &mut Vec<DdVertex>, tol: f64) {
    let mut out: Vec<DdVertex> = Vec::with_capacity(verts.len());
    for v in verts.drain(..) {
        if let Some(existing) = out.iter_mut().find(|e| (&e.x - &v.x).amax() <= tol) {
            // Merge active sets so adjacency keeps seeing every support.
            for f in v.active {
                if !existing.active.contains(&f) {
                    existing.active.push(f);
                }
            }
            existing.active.sort_unstable();
        } else {
            out.push(v);
        }
    }
    *verts = out;
}

pub(crate) fn dedup_points(points: &mut Vec<DVector<f64>>, tol: f64) {
    // Lexicographic sort, then compare only within the window where the
    // first coordinate is within tolerance.
    sort_points(points);
    let n = points.len();
    let mut keep = vec![true; n];
    for i in 0..n {
        if !keep[i] {
            continue;
        }
        for j in i + 1..n {
            if points[j][0] - points[i][0] > tol {
                break;
            }
            if keep[j] && close(&points[i], &points[j], tol) {
                keep[j] = false;
            }
        }
    }
    let mut idx = 0;
    points.retain(|_| {
        let k = keep[idx];
        idx += 1;
        k
    });
}

fn close(a: &DVector<f64>, b: &DVector<f64>, tol: f64) -> bool {
    for i in 0..a.len() {
        if (a[i] - b[i]).abs() > tol {
            return false;
        }
    }
    true
}

pub(crate) fn sort_points(points: &mut [DVector<f64>]) {
    points.sort_by(|a, b| {
        for i in 0..a.len() {
            match a[i].partial_cmp(&b[i]) {
                Some(std::cmp::Ordering::Equal) | None => continue,
                Some(o) => return o,
            }
        }
        std::cmp::Ordering::Equal
    });
}

/// Planar hull by monotone chain; `None` when the cloud is degenerate
/// (fewer than three extreme points), which falls back to the generic path.
fn hull_2d(
    points: &[DVector<f64>],
    tol: f64,
) -> Option<(DMatrix<f64>, DVector<f64>, Vec<DVector<f64>>)> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    pts.dedup_by(|a, b| (a.0 - b.0).abs() <= tol && (a.1 - b.1).abs() <= tol);
    if pts.len() < 3 {
        return None;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let scale: f64 = pts
        .iter()
        .map(|p| p.0.abs().max(p.1.abs()))
        .fold(0.0, f64::max);
    let area_tol = tol * (1.0 + scale);
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= area_tol {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= area_tol {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    let hull: Vec<(f64, f64)> = lower.into_iter().chain(upper).collect();
    if hull.len() < 3 {
        return None;
    }
    // Counter-clockwise chain: outward normal of edge p->q is (qy-py, px-qx).
    let mut g = DMatrix::<f64>::zeros(hull.len(), 2);
    let mut h = DVector::<f64>::zeros(hull.len());
    for i in 0..hull.len() {
        let p = hull[i];
        let q = hull[(i + 1) % hull.len()];
        let n = (q.1 - p.1, p.0 - q.0);
        let nrm = (n.0 * n.0 + n.1 * n.1).sqrt();
        if nrm <= tol {
            return None;
        }
        g[(i, 0)] = n.0 / nrm;
        g[(i, 1)] = n.1 / nrm;
        h[i] = (n.0 * p.0 + n.1 * p.1) / nrm;
    }
    let mut verts: Vec<DVector<f64>> = hull
        .iter()
        .map(|&(x, y)| DVector::from_row_slice(&[x, y]))
        .collect();
    sort_points(&mut verts);
    Some((g, h, verts))
}

/// Facet representation of `conv(points)`.
///
/// Returns `(g, h, hull_vertices)`. Lower-dimensional hulls carry paired
/// `±row` equality facets for each direction orthogonal to the affine hull.
pub fn hull_from_points(
    points: &[DVector<f64>],
    cap: usize,
) -> Result<(DMatrix<f64>, DVector<f64>, Vec<DVector<f64>>)> {
    if points.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    let dim = points[0].len();
    if dim == 2 && points.len() >= 3 {
        let scale = points.iter().map(|p| p.amax()).fold(0.0f64, f64::max);
        if let Some(out) = hull_2d(points, FACET_TOL * (1.0 + scale)) {
            return Ok(out);
        }
    }
    let mut pts: Vec<DVector<f64>> = points.to_vec();
    for p in &pts {
        if p.len() != dim {
            return Err(GeometryError::DimensionMismatch { expected: dim, got: p.len() });
        }
    }
    let scale = pts.iter().map(|p| p.amax()).fold(0.0f64, f64::max);
    dedup_points(&mut pts, FACET_TOL * (1.0 + scale));

    let center = {
        let mut c = DVector::zeros(dim);
        for p in &pts {
            c += p;
        }
        c / pts.len() as f64
    };

    // Affine hull via SVD of the centered cloud.
    let mut m = DMatrix::<f64>::zeros(pts.len(), dim);
    for (i, p) in pts.iter().enumerate() {
        m.row_mut(i).copy_from(&(p - &center).transpose());
    }
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.max().max(0.0);
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > RANK_TOL * smax.max(1.0))
        .count();

    // Orthonormal row-space basis, completed to a full basis of R^dim by
    // Gram-Schmidt over the canonical vectors (the thin SVD carries too few
    // rows when the cloud has fewer points than dimensions).
    let mut span: Vec<DVector<f64>> = (0..rank).map(|k| vt.row(k).transpose()).collect();
    let mut null_dirs: Vec<DVector<f64>> = Vec::new();
    for j in 0..dim {
        if span.len() + null_dirs.len() == dim {
            break;
        }
        let mut u = DVector::<f64>::zeros(dim);
        u[j] = 1.0;
        for b in span.iter().chain(null_dirs.iter()) {
            let proj = b.dot(&u);
            u -= b * proj;
        }
        let nrm = u.norm();
        if nrm > 1e-10 {
            null_dirs.push(u / nrm);
        }
    }

    let mut g_rows: Vec<DVector<f64>> = Vec::new();
    let mut h_vals: Vec<f64> = Vec::new();

    // Equality pairs for the directions orthogonal to the affine hull.
    for u in &null_dirs {
        let c = u.dot(&center);
        g_rows.push(u.clone());
        h_vals.push(c);
        g_rows.push(-u.clone());
        h_vals.push(-c);
    }

    if rank == 0 {
        let g = rows_to_matrix(&g_rows, dim);
        let h = DVector::from_vec(h_vals);
        return Ok((g, h, vec![center]));
    }

    // Project onto the affine-hull coordinates; the centroid maps to 0,
    // strictly interior, so the polar dual is bounded.
    let basis = rows_to_matrix(&span.drain(..).collect::<Vec<_>>(), dim).transpose(); // dim x rank
    let proj: Vec<DVector<f64>> = pts.iter().map(|p| basis.transpose() * (p - &center)).collect();

    let mut dual_rows: Vec<DVector<f64>> = Vec::new();
    for q in &proj {
        if q.norm() > 1e-13 * (1.0 + scale) {
            dual_rows.push(q.clone());
        }
    }
    if dual_rows.is_empty() {
        return Err(GeometryError::Numerical("hull collapsed to a point".into()));
    }
    let dual_g = rows_to_matrix(&dual_rows, rank);
    let dual_h = DVector::from_element(dual_rows.len(), 1.0);
    let dual_vertices = vertices_from_halfspaces(&dual_g, &dual_h, cap)?;
    if dual_vertices.is_empty() {
        return Err(GeometryError::Numerical("polar dual came back empty".into()));
    }

    let mut facet_g: Vec<DVector<f64>> = Vec::new();
    let mut facet_h: Vec<f64> = Vec::new();
    for y in &dual_vertices {
        let a: DVector<f64> = &basis * y;
        let nrm = a.norm();
        if nrm < 1e-13 {
            continue;
        }
        facet_g.push(&a / nrm);
        facet_h.push((1.0 + a.dot(&center)) / nrm);
    }

    // Hull vertices: enumerate the projected facet system, then lift.
    let proj_g = rows_to_matrix(
        &dual_vertices.iter().map(|y| y.clone()).collect::<Vec<_>>(),
        rank,
    );
    let proj_h = DVector::from_element(dual_vertices.len(), 1.0);
    let proj_vertices = vertices_from_halfspaces(&proj_g, &proj_h, cap)?;
    let mut vertices: Vec<DVector<f64>> = proj_vertices
        .iter()
        .map(|q| &center + &basis * q)
        .collect();
    dedup_points(&mut vertices, FACET_TOL * (1.0 + scale));
    sort_points(&mut vertices);

    for (a, b) in facet_g.into_iter().zip(facet_h) {
        g_rows.push(a);
        h_vals.push(b);
    }
    let g = rows_to_matrix(&g_rows, dim);
    let h = DVector::from_vec(h_vals);
    Ok((g, h, vertices))
}

fn rows_to_matrix(rows: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::zeros(rows.len(), dim);
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).copy_from(&r.transpose());
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box2(a: f64, b: f64) -> (DMatrix<f64>, DVector<f64>) {
        (
            DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
            DVector::from_row_slice(&[a, a, b, b]),
        )
    }

    #[test]
    fn box_vertices() {
        let (g, h) = box2(1.0, 2.0);
        let v = vertices_from_halfspaces(&g, &h, 1000).unwrap();
        assert_eq!(v.len(), 4);
        assert!(v.iter().any(|p| (p[0] - 1.0).abs() < 1e-9 && (p[1] - 2.0).abs() < 1e-9));
    }

    #[test]
    fn empty_intersection() {
        let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let h = DVector::from_row_slice(&[-1.0, -1.0]); // x <= -1 and x >= 1
        assert!(vertices_from_halfspaces(&g, &h, 10).unwrap().is_empty());
    }

    #[test]
    fn unbounded_errors() {
        let g = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let h = DVector::from_row_slice(&[1.0]);
        assert!(matches!(
            vertices_from_halfspaces(&g, &h, 10),
            Err(GeometryError::UnboundedSet)
        ));
    }

    #[test]
    fn degenerate_cut_to_segment() {
        // Unit square cut by y <= 0 and -y <= 0 leaves the segment y = 0.
        let g = DMatrix::from_row_slice(
            6,
            2,
            &[
                1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 1.0, 0.0, -1.0,
            ],
        );
        let h = DVector::from_row_slice(&[1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        let v = vertices_from_halfspaces(&g, &h, 100).unwrap();
        assert_eq!(v.len(), 2);
        for p in &v {
            assert!(p[1].abs() < 1e-8);
            assert!((p[0].abs() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn hull_of_triangle() {
        let pts = vec![
            DVector::from_row_slice(&[0.0, 0.0]),
            DVector::from_row_slice(&[2.0, 0.0]),
            DVector::from_row_slice(&[0.0, 1.0]),
            DVector::from_row_slice(&[0.5, 0.25]), // interior
        ];
        let (g, h, verts) = hull_from_points(&pts, 100).unwrap();
        assert_eq!(verts.len(), 3);
        assert_eq!(g.nrows(), 3);
        for p in &pts {
            let r = &h - &g * p;
            assert!(r.min() > -1e-8, "point outside hull: {r}");
        }
    }

    #[test]
    fn hull_degenerate_segment_in_3d() {
        let pts = vec![
            DVector::from_row_slice(&[0.0, 0.0, 0.0]),
            DVector::from_row_slice(&[1.0, 1.0, 1.0]),
            DVector::from_row_slice(&[0.5, 0.5, 0.5]),
        ];
        let (g, h, verts) = hull_from_points(&pts, 100).unwrap();
        assert_eq!(verts.len(), 2);
        // 2 equality pairs (4 rows) + 2 endpoint facets.
        assert_eq!(g.nrows(), 6);
        let mid = DVector::from_row_slice(&[0.25, 0.25, 0.25]);
        let r = &h - &g * &mid;
        assert!(r.min() > -1e-8);
        let off = DVector::from_row_slice(&[0.25, 0.3, 0.25]);
        let r = &h - &g * &off;
        assert!(r.min() < -1e-6);
    }

    #[test]
    fn hull_singleton() {
        let pts = vec![DVector::from_row_slice(&[1.5, -2.0])];
        let (g, h, verts) = hull_from_points(&pts, 10).unwrap();
        assert_eq!(verts.len(), 1);
        let r = &h - &g * &verts[0];
        assert!(r.amax() < 1e-10);
    }

    #[test]
    fn box_3d_count() {
        let g = DMatrix::from_row_slice(
            6,
            3,
            &[
                1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0,
                0.0, 0.0, -1.0,
            ],
        );
        let h = DVector::from_element(6, 1.0);
        let v = vertices_from_halfspaces(&g, &h, 100).unwrap();
        assert_eq!(v.len(), 8);
    }
}
