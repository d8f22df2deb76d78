//! Data-consistency polytopes in model space: the one-step sets, their
//! window/full intersections, the induced-gain bound γ*, and the closed-loop
//! matrix family used by the tube construction.
//!
//! The vectorization of a model pair `(A, B)` is row-blocked: coordinates
//! `r·(n+m) .. r·(n+m)+n` hold row `r` of `A` and the following `m` hold row
//! `r` of `B`. With an axis-aligned noise set every facet touches a single
//! row block, and vertex enumeration factors into `n` small problems; the
//! joint enumeration is kept for general noise polytopes.

use nalgebra::{DMatrix, DVector};
use trddpc_geometry::{gauge_norm, GeometryError, MatrixPolytope, Polytope};

use crate::data::Trajectory;
use crate::error::{Error, Result};

/// Cap on the vectorized dimension for joint vertex enumeration.
pub const ENUM_DIM_CAP: usize = 8;
/// Cap on enumerated model-set vertices.
pub const ENUM_VERTEX_CAP: usize = 100_000;

/// Polytope of model pairs `(A, B)` consistent with a window of one-step
/// transitions under the inflated noise bound.
#[derive(Debug, Clone)]
pub struct ConsistencySet {
    pub gamma: f64,
    pub state_dim: usize,
    pub input_dim: usize,
    /// Inclusive sample-index range whose transitions are constrained.
    pub window: (usize, usize),
    /// H-representation over the vectorized pair; vertices attach on demand.
    pub poly: Polytope,
    vertices: Option<Vec<(DMatrix<f64>, DMatrix<f64>)>>,
}

/// Closed-loop image family `{A + B K}` and input family `{B}`.
#[derive(Debug, Clone)]
pub struct ClosedLoopFamily {
    pub a_k: MatrixPolytope,
    pub b_set: MatrixPolytope,
    pub gain: DMatrix<f64>,
}

pub fn vec_dim(n: usize, m: usize) -> usize {
    n * (n + m)
}

fn decode(theta: &DVector<f64>, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let stride = n + m;
    let a = DMatrix::from_fn(n, n, |r, c| theta[r * stride + c]);
    let b = DMatrix::from_fn(n, m, |r, c| theta[r * stride + n + c]);
    (a, b)
}

/// Inequality rows of one transition `(x̂_i, u_i) -> x̂_{i+1}`:
/// `G_w (x̂_{i+1} - A x̂_i - B u_i) <= (1+γ) h_w` over the vectorized pair.
fn one_step_rows(
    x_i: &DVector<f64>,
    u_i: &DVector<f64>,
    x_next: &DVector<f64>,
    w: &Polytope,
    gamma: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let (gw, hw) = w.facets();
    let n = x_i.len();
    let m = u_i.len();
    let stride = n + m;
    let rows = gw.nrows();
    let mut g = DMatrix::<f64>::zeros(rows, n * stride);
    let mut h = DVector::<f64>::zeros(rows);
    let gx_next = gw * x_next;
    for rho in 0..rows {
        for r in 0..n {
            let w_coef = gw[(rho, r)];
            if w_coef == 0.0 {
                continue;
            }
            for c in 0..n {
                g[(rho, r * stride + c)] = -w_coef * x_i[c];
            }
            for c in 0..m {
                g[(rho, r * stride + n + c)] = -w_coef * u_i[c];
            }
        }
        h[rho] = (1.0 + gamma) * hw[rho] - gx_next[rho];
    }
    (g, h)
}

/// One-step consistency set for transition index `i`.
pub fn one_step_set(
    traj: &Trajectory,
    w: &Polytope,
    i: usize,
    gamma: f64,
) -> Result<ConsistencySet> {
    if i + 1 >= traj.len() {
        return Err(Error::IndexOutOfRange { index: i, limit: traj.len() - 1 });
    }
    if w.dim() != traj.state_dim() {
        return Err(Error::DimensionMismatch { expected: traj.state_dim(), got: w.dim() });
    }
    let x_i = traj.x_hat.column(i).into_owned();
    let u_i = traj.u.column(i).into_owned();
    let x_next = traj.x_hat.column(i + 1).into_owned();
    let (g, h) = one_step_rows(&x_i, &u_i, &x_next, w, gamma);
    let poly = Polytope::from_halfspaces_lazy(g, h).map_err(Error::Geometry)?;
    Ok(ConsistencySet {
        gamma,
        state_dim: traj.state_dim(),
        input_dim: traj.input_dim(),
        window: (i, i),
        poly,
        vertices: None,
    })
}

/// Stacked intersection of one-step sets sharing the same inflation level.
pub fn intersect_window(sets: &[ConsistencySet]) -> Result<ConsistencySet> {
    let first = sets.first().ok_or(Error::Format("empty set list".into()))?;
    let dim = vec_dim(first.state_dim, first.input_dim);
    let mut total_rows = 0;
    for s in sets {
        if (s.gamma - first.gamma).abs() > 1e-12 {
            return Err(Error::Format("mixed gamma levels in window intersection".into()));
        }
        if vec_dim(s.state_dim, s.input_dim) != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: vec_dim(s.state_dim, s.input_dim) });
        }
        total_rows += s.poly.num_facets();
    }
    let mut g = DMatrix::<f64>::zeros(total_rows, dim);
    let mut h = DVector::<f64>::zeros(total_rows);
    let mut at = 0;
    let mut lo = usize::MAX;
    let mut hi = 0usize;
    for s in sets {
        let (gs, hs) = s.poly.facets();
        g.rows_mut(at, gs.nrows()).copy_from(gs);
        h.rows_mut(at, hs.len()).copy_from(hs);
        at += gs.nrows();
        lo = lo.min(s.window.0);
        hi = hi.max(s.window.1);
    }
    let poly = Polytope::from_halfspaces_lazy(g, h).map_err(Error::Geometry)?;
    Ok(ConsistencySet {
        gamma: first.gamma,
        state_dim: first.state_dim,
        input_dim: first.input_dim,
        window: (lo, hi),
        poly,
        vertices: None,
    })
}

/// Full consistency set over all `T-1` transitions at the given inflation.
pub fn full_set(traj: &Trajectory, w: &Polytope, gamma: f64) -> Result<ConsistencySet> {
    let sets: Vec<ConsistencySet> = (0..traj.len() - 1)
        .map(|i| one_step_set(traj, w, i, gamma))
        .collect::<Result<_>>()?;
    let merged = intersect_window(&sets)?;
    if merged.poly.is_empty() {
        let restore = smallest_feasible_gamma(traj, w, gamma)?;
        return Err(Error::EmptyIntersection { gamma, restore });
    }
    Ok(merged)
}

/// Bisection diagnostic: smallest inflation restoring feasibility.
fn smallest_feasible_gamma(traj: &Trajectory, w: &Polytope, from: f64) -> Result<f64> {
    let feasible = |gamma: f64| -> Result<bool> {
        let sets: Vec<ConsistencySet> = (0..traj.len() - 1)
            .map(|i| one_step_set(traj, w, i, gamma))
            .collect::<Result<_>>()?;
        Ok(!intersect_window(&sets)?.poly.is_empty())
    };
    let mut hi = from.max(1e-6);
    let mut tries = 0;
    while !feasible(hi)? {
        hi = hi * 2.0 + 0.1;
        tries += 1;
        if tries > 60 {
            return Ok(f64::INFINITY);
        }
    }
    let mut lo = from.min(hi);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

impl ConsistencySet {
    pub fn vec_dim(&self) -> usize {
        vec_dim(self.state_dim, self.input_dim)
    }

    /// Enumerate (and cache) the vertex pairs, factoring by state row when
    /// every facet touches a single row block.
    pub fn enumerate(&mut self) -> Result<&[(DMatrix<f64>, DMatrix<f64>)]> {
        if self.vertices.is_none() {
            let thetas = self.enumerate_theta()?;
            let verts = thetas
                .iter()
                .map(|t| decode(t, self.state_dim, self.input_dim))
                .collect::<Vec<_>>();
            self.vertices = Some(verts);
        }
        Ok(self.vertices.as_deref().unwrap())
    }

    pub fn vertices(&self) -> Result<&[(DMatrix<f64>, DMatrix<f64>)]> {
        self.vertices
            .as_deref()
            .ok_or_else(|| Error::Format("consistency-set vertices not enumerated".into()))
    }

    pub fn has_vertices(&self) -> bool {
        self.vertices.is_some()
    }

    pub fn contains_pair(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(bool, f64)> {
        let theta = self.encode(a, b);
        self.poly.contains_point(&theta).map_err(Error::Geometry)
    }

    pub fn encode(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DVector<f64> {
        let n = self.state_dim;
        let m = self.input_dim;
        let stride = n + m;
        let mut theta = DVector::zeros(n * stride);
        for r in 0..n {
            for c in 0..n {
                theta[r * stride + c] = a[(r, c)];
            }
            for c in 0..m {
                theta[r * stride + n + c] = b[(r, c)];
            }
        }
        theta
    }

    fn enumerate_theta(&self) -> Result<Vec<DVector<f64>>> {
        let n = self.state_dim;
        let m = self.input_dim;
        let stride = n + m;
        let dim = n * stride;
        let (g, h) = self.poly.facets();

        // Row-separable fast path: each facet's support within one block.
        let mut per_block: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut separable = true;
        'rows: for i in 0..g.nrows() {
            let mut owner: Option<usize> = None;
            for j in 0..dim {
                if g[(i, j)].abs() > 1e-13 {
                    let block = j / stride;
                    match owner {
                        None => owner = Some(block),
                        Some(b) if b == block => {}
                        Some(_) => {
                            separable = false;
                            break 'rows;
                        }
                    }
                }
            }
            match owner {
                Some(b) => per_block[b].push(i),
                None => {
                    separable = false;
                    break;
                }
            }
        }

        if separable {
            let mut factor_vertices: Vec<Vec<DVector<f64>>> = Vec::with_capacity(n);
            for (r, rows) in per_block.iter().enumerate() {
                if rows.is_empty() {
                    return Err(Error::AssumptionViolated(format!(
                        "no constraints touch state row {r}; the model set is unbounded"
                    )));
                }
                let mut gf = DMatrix::<f64>::zeros(rows.len(), stride);
                let mut hf = DVector::<f64>::zeros(rows.len());
                for (k, &i) in rows.iter().enumerate() {
                    for c in 0..stride {
                        gf[(k, c)] = g[(i, r * stride + c)];
                    }
                    hf[k] = h[i];
                }
                let vs = trddpc_geometry::Polytope::from_halfspaces(gf, hf)
                    .map_err(map_unbounded)?
                    .vertices()
                    .map_err(Error::Geometry)?
                    .to_vec();
                if vs.is_empty() {
                    return Ok(Vec::new());
                }
                factor_vertices.push(vs);
            }
            let count: usize = factor_vertices.iter().map(|v| v.len()).product();
            if count > ENUM_VERTEX_CAP {
                return Err(Error::Geometry(GeometryError::VertexCapExceeded {
                    cap: ENUM_VERTEX_CAP,
                }));
            }
            let mut out: Vec<DVector<f64>> = Vec::with_capacity(count);
            let mut idx = vec![0usize; n];
            loop {
                let mut theta = DVector::zeros(dim);
                for r in 0..n {
                    theta
                        .rows_mut(r * stride, stride)
                        .copy_from(&factor_vertices[r][idx[r]]);
                }
                out.push(theta);
                let mut carry = 0;
                loop {
                    idx[carry] += 1;
                    if idx[carry] < factor_vertices[carry].len() {
                        break;
                    }
                    idx[carry] = 0;
                    carry += 1;
                    if carry == n {
                        return Ok(out);
                    }
                }
            }
        }

        if dim > ENUM_DIM_CAP {
            return Err(Error::AssumptionViolated(format!(
                "vectorized model dimension {dim} exceeds the enumeration cap {ENUM_DIM_CAP}"
            )));
        }
        let mut poly = self.poly.clone();
        poly.ensure_vertices().map_err(map_unbounded)?;
        Ok(poly.vertices().map_err(Error::Geometry)?.to_vec())
    }
}

fn map_unbounded(e: GeometryError) -> Error {
    match e {
        GeometryError::UnboundedSet => Error::AssumptionViolated(
            "model consistency set is unbounded; the stacked data matrix lacks full row rank"
                .into(),
        ),
        other => Error::Geometry(other),
    }
}

/// Options for the induced-gain fixed point.
#[derive(Debug, Clone)]
pub struct GammaOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GammaOptions {
    fn default() -> Self {
        Self { max_iter: 60, tol: 1e-6 }
    }
}

/// Certified induced-gain bound: fixed point of
/// `γ ↦ max { ||A||_W : (A, B) vertex of the full set at inflation γ }`,
/// started from the least-squares estimate and checked for self-consistency.
pub fn certify_gamma_star(
    traj: &Trajectory,
    w: &Polytope,
    opts: &GammaOptions,
) -> Result<f64> {
    let (a_ls, _) = least_squares_model(traj)?;
    let mut gamma = gauge_norm(&a_ls, w).map_err(Error::Geometry)?;
    let mut lo = gamma;
    let mut hi = gamma;
    for _ in 0..opts.max_iter {
        let next = match full_set(traj, w, gamma) {
            Ok(mut set) => {
                let verts = set.enumerate()?;
                let mut worst: f64 = 0.0;
                for (a, _) in verts {
                    worst = worst.max(gauge_norm(a, w).map_err(Error::Geometry)?);
                }
                worst
            }
            Err(Error::EmptyIntersection { restore, .. }) => {
                // Inflate past the feasibility threshold and continue.
                restore.max(gamma * 2.0 + 0.1)
            }
            Err(e) => return Err(e),
        };
        lo = lo.min(next);
        hi = hi.max(next);
        if (next - gamma).abs() < opts.tol {
            let fixed = next.max(gamma);
            // Soundness: the returned bound dominates the gauge of every
            // vertex of the set it induces.
            let mut set = full_set(traj, w, fixed)?;
            let verts = set.enumerate()?;
            let mut worst: f64 = 0.0;
            for (a, _) in verts {
                worst = worst.max(gauge_norm(a, w).map_err(Error::Geometry)?);
            }
            if worst <= fixed + opts.tol {
                return Ok(fixed.max(worst));
            }
            gamma = worst;
            continue;
        }
        gamma = next;
    }
    Err(Error::NoConvergence { iters: opts.max_iter, lo, hi })
}

/// Least-squares model fit `x̂⁺ ≈ A x̂ + B u` over all transitions.
pub fn least_squares_model(traj: &Trajectory) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let t = traj.len();
    if t < 2 {
        return Err(Error::Format("need at least two samples".into()));
    }
    let n = traj.state_dim();
    let m = traj.input_dim();
    let mut z0 = DMatrix::<f64>::zeros(n + m, t - 1);
    let mut x1 = DMatrix::<f64>::zeros(n, t - 1);
    for i in 0..t - 1 {
        z0.view_mut((0, i), (n, 1)).copy_from(&traj.x_hat.column(i));
        z0.view_mut((n, i), (m, 1)).copy_from(&traj.u.column(i));
        x1.column_mut(i).copy_from(&traj.x_hat.column(i + 1));
    }
    let gram = &z0 * z0.transpose();
    let rhs = &x1 * z0.transpose();
    let solved = gram.clone().lu().solve(&rhs.transpose()).ok_or_else(|| {
        Error::AssumptionViolated("stacked data matrix is rank deficient".into())
    })?;
    let mt = solved.transpose();
    let a = mt.columns(0, n).into_owned();
    let b = mt.columns(n, m).into_owned();
    Ok((a, b))
}

/// Per-vertex closed-loop images `{A + B K}` and `{B}`.
pub fn closed_loop_family(set: &ConsistencySet, gain: &DMatrix<f64>) -> Result<ClosedLoopFamily> {
    let verts = set.vertices()?;
    if gain.nrows() != set.input_dim || gain.ncols() != set.state_dim {
        return Err(Error::DimensionMismatch {
            expected: set.input_dim * set.state_dim,
            got: gain.nrows() * gain.ncols(),
        });
    }
    let a_k = MatrixPolytope::from_vertices(
        verts.iter().map(|(a, b)| a + b * gain).collect(),
    )
    .map_err(Error::Geometry)?;
    let b_set = MatrixPolytope::from_vertices(verts.iter().map(|(_, b)| b.clone()).collect())
        .map_err(Error::Geometry)?;
    Ok(ClosedLoopFamily { a_k, b_set, gain: gain.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Trajectory;

    fn scalar_traj(u: &[f64], x: &[f64]) -> Trajectory {
        Trajectory::new(
            DMatrix::from_row_slice(1, u.len(), u),
            DMatrix::from_row_slice(1, x.len(), x),
        )
        .unwrap()
    }

    fn interval_w(eps: f64) -> Polytope {
        Polytope::box_centered(&[eps]).unwrap()
    }

    #[test]
    fn one_sample_strip_by_hand() {
        // x⁺ = 1.1 x + 0.5 u with the sample (x̂=1, u=1, x̂⁺=1.6): the set at
        // γ=0 is the strip |1.6 - a - b| <= ε in the (a, b)-plane.
        let traj = scalar_traj(&[1.0, 0.0], &[1.0, 1.6]);
        let eps = 0.05;
        let set = one_step_set(&traj, &interval_w(eps), 0, 0.0).unwrap();
        let inside = set.contains_pair(
            &DMatrix::from_row_slice(1, 1, &[1.1]),
            &DMatrix::from_row_slice(1, 1, &[0.5]),
        );
        assert!(inside.unwrap().0);
        let outside = set.contains_pair(
            &DMatrix::from_row_slice(1, 1, &[1.1]),
            &DMatrix::from_row_slice(1, 1, &[0.5 + 2.0 * eps]),
        );
        assert!(!outside.unwrap().0);
    }

    #[test]
    fn inflation_grows_the_set() {
        let traj = scalar_traj(&[1.0, -0.5, 0.25, 0.0], &[1.0, 1.6, 1.51, 1.786]);
        let w = interval_w(0.05);
        let tight = full_set(&traj, &w, 0.0);
        let loose = full_set(&traj, &w, 0.5).unwrap();
        if let Ok(mut tight) = tight {
            let mut loose = loose;
            tight.enumerate().unwrap();
            loose.enumerate().unwrap();
            for (a, b) in tight.vertices().unwrap() {
                let (inside, _) = loose.contains_pair(a, b).unwrap();
                assert!(inside);
            }
        }
    }

    #[test]
    fn noise_free_singleton_recovers_truth() {
        // Rich noise-free data at γ=0 pins (a, b) = (1.1, 0.5) exactly.
        let mut u = vec![1.0, -1.0, 0.5, 0.25, -0.75];
        let mut x = vec![0.3];
        for i in 0..u.len() {
            let next = 1.1 * x[i] + 0.5 * u[i];
            x.push(next);
        }
        u.push(0.0);
        let traj = scalar_traj(&u, &x);
        let mut set = full_set(&traj, &interval_w(1e-9), 0.0).unwrap();
        let verts = set.enumerate().unwrap();
        assert!(!verts.is_empty());
        for (a, b) in verts {
            assert!((a[(0, 0)] - 1.1).abs() < 1e-6, "a = {}", a[(0, 0)]);
            assert!((b[(0, 0)] - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn least_squares_oracle_on_noise_free_data() {
        let mut u = vec![1.0, -1.0, 0.5, 0.25, -0.75, 0.4];
        let mut x = vec![0.3];
        for i in 0..u.len() {
            x.push(1.1 * x[i] + 0.5 * u[i]);
        }
        u.push(0.0);
        let traj = scalar_traj(&u, &x);
        let (a, b) = least_squares_model(&traj).unwrap();
        assert!((a[(0, 0)] - 1.1).abs() < 1e-10);
        assert!((b[(0, 0)] - 0.5).abs() < 1e-10);
    }

    #[test]
    fn gamma_star_tight_for_small_noise_sets() {
        let mut u = vec![1.0, -1.0, 0.5, 0.25, -0.75, 0.4];
        let mut x = vec![0.3];
        for i in 0..u.len() {
            x.push(1.1 * x[i] + 0.5 * u[i]);
        }
        u.push(0.0);
        let traj = scalar_traj(&u, &x);
        // Noise-free data with a tiny W: the consistency strips collapse
        // onto the truth and the fixed point lands at |a*| = 1.1.
        let g = certify_gamma_star(&traj, &interval_w(1e-7), &GammaOptions::default()).unwrap();
        assert!(g >= 1.1 - 1e-9);
        assert!(g < 1.1 + 1e-4, "gamma {g}");
    }

    #[test]
    fn gamma_star_within_interval_arithmetic_bound() {
        let mut u = vec![1.0, -1.0, 0.5, 0.25, -0.75, 0.4];
        let mut x = vec![0.3];
        for i in 0..u.len() {
            x.push(1.1 * x[i] + 0.5 * u[i]);
        }
        u.push(0.0);
        let traj = scalar_traj(&u, &x);
        let eps = 0.05;
        let g = certify_gamma_star(&traj, &interval_w(eps), &GammaOptions::default()).unwrap();
        assert!(g >= 1.1 - 1e-9);
        // Interval-arithmetic oracle on two strips: any (a, b) in the set
        // solves the 2x2 sample system up to residual (1+γ)ε, so
        // |a - a*| <= row-sum of the inverse times that residual.
        let m = DMatrix::from_row_slice(2, 2, &[x[0], u[0], x[1], u[1]]);
        let minv = m.try_inverse().unwrap();
        let delta_a = (minv[(0, 0)].abs() + minv[(0, 1)].abs()) * (1.0 + g) * eps;
        assert!(
            g <= 1.1 + delta_a + 1e-9,
            "gamma {g} exceeds interval bound {}",
            1.1 + delta_a
        );
    }

    #[test]
    fn closed_loop_family_scalar_interval() {
        let traj = scalar_traj(&[1.0, -0.5, 0.25, 0.0], &[1.0, 1.61, 1.51, 1.79]);
        let mut set = full_set(&traj, &interval_w(0.1), 0.2).unwrap();
        set.enumerate().unwrap();
        let k = DMatrix::from_row_slice(1, 1, &[-2.0]);
        let fam = closed_loop_family(&set, &k).unwrap();
        assert_eq!(fam.a_k.rows(), 1);
        for (i, (a, b)) in set.vertices().unwrap().iter().enumerate() {
            let expect = a[(0, 0)] - 2.0 * b[(0, 0)];
            assert!((fam.a_k.vertices()[i][(0, 0)] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn two_dim_separable_enumeration_contains_truth() {
        // Double-integrator-like data; W is an axis box so enumeration
        // should use the row-factored path and still contain the truth.
        let a_true = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        let b_true = DMatrix::from_row_slice(2, 1, &[0.5, 1.0]);
        let mut x = DMatrix::<f64>::zeros(2, 9);
        let u = DMatrix::from_row_slice(1, 9, &[1.0, -1.0, 0.5, -0.25, 0.75, -0.5, 0.3, -0.8, 0.0]);
        for i in 0..8 {
            let xi = x.column(i).into_owned();
            let next = &a_true * &xi + &b_true * u.column(i).into_owned();
            x.column_mut(i + 1).copy_from(&next);
        }
        let traj = Trajectory::new(u, x).unwrap();
        let w = Polytope::box_centered(&[0.01, 0.01]).unwrap();
        let mut set = full_set(&traj, &w, 0.3).unwrap();
        let verts = set.enumerate().unwrap();
        assert!(!verts.is_empty());
        let (inside, margin) = set.contains_pair(&a_true, &b_true).unwrap();
        assert!(inside, "truth outside, margin {margin}");
    }
}
