//! Offline-checkable data conditions behind the shift argument: the tail
//! deviation bound, the tail convex-coverage certificate, and the staged
//! data-collection loop that enforces both by construction.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use trddpc_geometry::{LpOutcome, Polytope};

use crate::data::{build_hankel, check_pe, HankelSystem, PeReport, SimplexCoefficient, Trajectory};
use crate::error::{Error, Result};

/// One step of interaction with the plant under test (harness-side truth).
pub trait PlantOracle {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Reset the true state and return the first measurement.
    fn reset(&mut self, x0: &DVector<f64>) -> DVector<f64>;
    /// Apply an input, advance one step, return the new measurement.
    fn step(&mut self, u: &DVector<f64>) -> DVector<f64>;
}

/// Per-column membership of the last-block-row deviation in the local
/// deviation set.
#[derive(Debug, Clone)]
pub struct TailDeviationReport {
    /// Worst slack per Hankel column (nonnegative means inside).
    pub slacks: Vec<f64>,
    pub pass: bool,
}

/// Deviations `(H_u[L] - K Ĥ_x[L]) e_i` checked against the deviation set.
pub fn check_tail_deviation(
    hs: &HankelSystem,
    gain: &DMatrix<f64>,
    v_poly: &Polytope,
) -> Result<TailDeviationReport> {
    let last_u = hs.block_u(hs.horizon);
    let last_x = hs.block_x(hs.horizon);
    let dev = &last_u - gain * &last_x;
    let mut slacks = Vec::with_capacity(dev.ncols());
    let mut pass = true;
    for c in 0..dev.ncols() {
        let (inside, slack) = v_poly
            .contains_point(&dev.column(c).into_owned())
            .map_err(Error::Geometry)?;
        pass &= inside;
        slacks.push(slack);
    }
    Ok(TailDeviationReport { slacks, pass })
}

/// Certificate that the tail window is reachable inside the convex hull of
/// the Hankel columns, with the supporting status checks.
#[derive(Debug, Clone)]
pub struct CoverageCertificate {
    pub h: SimplexCoefficient,
    /// l1 residual of the equality system at `h`.
    pub equality_residual: f64,
    pub tail_deviation: Option<TailDeviationReport>,
    pub pe: Option<PeReport>,
}

/// Outcome of the coverage LP: either a certificate or the best-effort
/// minimal-residual coefficient as a distance-to-coverage diagnostic.
#[derive(Debug, Clone)]
pub enum CoverageOutcome {
    Feasible(CoverageCertificate),
    Infeasible { residual: f64, closest: SimplexCoefficient },
}

fn tail_system(hs: &HankelSystem, traj: &Trajectory) -> (DMatrix<f64>, DVector<f64>) {
    let l = hs.horizon;
    let m = hs.input_dim;
    let n = hs.state_dim;
    let t = traj.len();
    let cols = hs.num_cols();
    let rows = l * (m + n);
    let mut a = DMatrix::<f64>::zeros(rows + 1, cols);
    a.rows_mut(0, l * m).copy_from(&hs.blocks_u(0, l - 1));
    a.rows_mut(l * m, l * n).copy_from(&hs.blocks_x(0, l - 1));
    for c in 0..cols {
        a[(rows, c)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(rows + 1);
    for step in 0..l {
        let src = t - l + step;
        for r in 0..m {
            b[step * m + r] = traj.u[(r, src)];
        }
        for r in 0..n {
            b[l * m + step * n + r] = traj.x_hat[(r, src)];
        }
    }
    b[rows] = 1.0;
    (a, b)
}

/// Solve the coverage feasibility program
/// `A_tail h = b_tail, 1ᵀh = 1, h >= 0`.
pub fn check_tail_coverage(hs: &HankelSystem, traj: &Trajectory) -> Result<CoverageOutcome> {
    if traj.len() < 2 * hs.horizon {
        return Err(Error::AssumptionViolated(format!(
            "tail coverage needs T >= 2L (T = {}, L = {})",
            traj.len(),
            hs.horizon
        )));
    }
    let (a, b) = tail_system(hs, traj);
    let cols = a.ncols();
    let scale = 1.0 + b.amax();

    // Row-normalize the equality system; mixed magnitudes (near-equilibrium
    // tails against excited prefixes) otherwise degrade conditioning.
    let mut a_s = a.clone();
    let mut b_s = b.clone();
    for i in 0..a_s.nrows() {
        let nrm = a_s.row(i).norm().max(1e-12);
        for j in 0..cols {
            a_s[(i, j)] /= nrm;
        }
        b_s[i] /= nrm;
    }

    // Phase-1 LP on the normalized system, then a least-squares polish on
    // its support; NNLS is the backup when the LP stalls on degeneracy.
    let zero_cost = DVector::<f64>::zeros(cols);
    let lp_x = match trddpc_geometry::solve_standard(&zero_cost, &a_s, &b_s) {
        LpOutcome::Optimal { x, .. } | LpOutcome::Infeasible { x, .. } => x,
        LpOutcome::Unbounded => {
            return Err(Error::SolverFailure("coverage feasibility unbounded".into()))
        }
    };
    let mut best: Option<(DVector<f64>, f64)> = None;
    for candidate in [lp_x, nnls(&a_s, &b_s, 8 * cols)] {
        let polished = polish_on_support(&a, &b, &candidate).unwrap_or(candidate);
        let mut g = polished.map(|v| v.max(0.0));
        let sum: f64 = g.iter().sum();
        if sum > 1e-12 {
            g /= sum;
        }
        let residual = (&a * &g - &b).abs().sum();
        if best.as_ref().is_none_or(|(_, r)| residual < *r) {
            best = Some((g, residual));
        }
        if best.as_ref().is_some_and(|(_, r)| *r <= 1e-8 * scale) {
            break;
        }
    }
    let (g, residual) = best.expect("at least one candidate");
    if residual <= 1e-8 * scale {
        let h = SimplexCoefficient::new(g, 1.0)
            .map_err(|e| Error::Format(format!("coverage solve returned invalid simplex: {e}")))?;
        return Ok(CoverageOutcome::Feasible(CoverageCertificate {
            h,
            equality_residual: residual,
            tail_deviation: None,
            pe: None,
        }));
    }
    Ok(CoverageOutcome::Infeasible {
        residual,
        closest: SimplexCoefficient { g, theta: 1.0 },
    })
}

/// Least-squares re-solve on the positive support of a candidate, exact
/// when the support is right.
fn polish_on_support(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
) -> Option<DVector<f64>> {
    let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] > 1e-11).collect();
    if support.is_empty() {
        return None;
    }
    let mut sub = DMatrix::<f64>::zeros(a.nrows(), support.len());
    for (k, &i) in support.iter().enumerate() {
        sub.column_mut(k).copy_from(&a.column(i));
    }
    let sol = sub.svd(true, true).solve(b, 1e-13).ok()?;
    if sol.min() < -1e-9 {
        return None;
    }
    let mut out = DVector::<f64>::zeros(x.len());
    for (k, &i) in support.iter().enumerate() {
        out[i] = sol[k].max(0.0);
    }
    Some(out)
}

/// Lawson-Hanson nonnegative least squares `min ||a x - b||, x >= 0`.
fn nnls(a: &DMatrix<f64>, b: &DVector<f64>, max_iter: usize) -> DVector<f64> {
    let n = a.ncols();
    let mut x = DVector::<f64>::zeros(n);
    let mut passive: Vec<usize> = Vec::new();
    let tol = 1e-12 * (1.0 + b.amax());
    for _ in 0..max_iter {
        let resid = b - a * &x;
        let w = a.transpose() * &resid;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive.contains(&j) && w[j] > tol {
                if best.is_none_or(|(_, bw)| w[j] > bw) {
                    best = Some((j, w[j]));
                }
            }
        }
        let Some((enter, _)) = best else { break };
        passive.push(enter);

        loop {
            let mut sub = DMatrix::<f64>::zeros(a.nrows(), passive.len());
            for (k, &i) in passive.iter().enumerate() {
                sub.column_mut(k).copy_from(&a.column(i));
            }
            let z = match sub.svd(true, true).solve(b, 1e-13) {
                Ok(z) => z,
                Err(_) => return x,
            };
            if z.min() > 0.0 {
                x.fill(0.0);
                for (k, &i) in passive.iter().enumerate() {
                    x[i] = z[k];
                }
                break;
            }
            // Step back to the boundary and drop newly zero coordinates.
            let mut alpha = f64::INFINITY;
            for (k, &i) in passive.iter().enumerate() {
                if z[k] <= 0.0 {
                    let xi = x[i];
                    if xi - z[k] > 1e-300 {
                        alpha = alpha.min(xi / (xi - z[k]));
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            for (k, &i) in passive.iter().enumerate() {
                x[i] += alpha * (z[k] - x[i]);
            }
            passive.retain(|&i| x[i] > 1e-14);
            if passive.is_empty() {
                return x;
            }
        }
    }
    x
}

/// Prune the certificate's support to at most `L(n+m) + 1` columns by
/// moving along kernel directions of the active equality columns until
/// weights hit zero. Exact: the equality system and the simplex sum are
/// preserved at every step.
pub fn caratheodory_reduce(
    hs: &HankelSystem,
    traj: &Trajectory,
    h: &SimplexCoefficient,
) -> Result<SimplexCoefficient> {
    let (a, _) = tail_system(hs, traj);
    let target = hs.horizon * (hs.input_dim + hs.state_dim) + 1;
    let mut g = h.g.clone();
    let tol = 1e-12;
    loop {
        let support: Vec<usize> = (0..g.len()).filter(|&i| g[i] > tol).collect();
        if support.len() <= target {
            break;
        }
        // Kernel direction of the support columns (rows include the 1ᵀ row,
        // so moving along it keeps both the equalities and the sum).
        let mut sub = DMatrix::<f64>::zeros(a.nrows(), support.len());
        for (k, &i) in support.iter().enumerate() {
            sub.column_mut(k).copy_from(&a.column(i));
        }
        let svd = sub.clone().svd(false, true);
        let vt = svd.v_t.as_ref().expect("svd v_t");
        let smax = svd.singular_values.max().max(1e-300);
        let mut kernel: Option<DVector<f64>> = None;
        for k in (0..vt.nrows()).rev() {
            let sv = if k < svd.singular_values.len() {
                svd.singular_values[k]
            } else {
                0.0
            };
            if sv <= 1e-10 * smax {
                kernel = Some(vt.row(k).transpose());
                break;
            }
        }
        let Some(d) = kernel else {
            // Support columns are linearly independent; Caratheodory bound
            // already met by rank, nothing further to prune.
            break;
        };
        // Step until the first weight hits zero.
        let mut t_star = f64::INFINITY;
        for (k, &i) in support.iter().enumerate() {
            if d[k] > 1e-12 {
                t_star = t_star.min(g[i] / d[k]);
            }
        }
        if !t_star.is_finite() {
            // Flip the direction if it never decreases a weight.
            let mut t_neg = f64::INFINITY;
            for (k, &i) in support.iter().enumerate() {
                if d[k] < -1e-12 {
                    t_neg = t_neg.min(g[i] / -d[k]);
                }
            }
            if !t_neg.is_finite() {
                break;
            }
            for (k, &i) in support.iter().enumerate() {
                g[i] += t_neg * d[k];
            }
        } else {
            for (k, &i) in support.iter().enumerate() {
                g[i] -= t_star * d[k];
            }
        }
        for v in g.iter_mut() {
            if *v < tol {
                *v = 0.0;
            }
        }
        let sum: f64 = g.iter().sum();
        if sum > 0.0 {
            g /= sum;
        }
    }
    SimplexCoefficient::new(g, 1.0)
        .map_err(|e| Error::Format(format!("reduction produced invalid simplex: {e}")))
}

/// Phase lengths for the staged collection.
#[derive(Debug, Clone)]
pub struct CollectLengths {
    /// Local-excitation phase length (grows by 1.5x on retry).
    pub t_loc: usize,
    /// Recovery phase length.
    pub t_pre2: usize,
}

#[derive(Clone)]
pub struct CollectOptions {
    pub lengths: CollectLengths,
    /// Initial true state of the collection episode.
    pub x0: DVector<f64>,
    /// Feedback used for the arbitrary prefix inputs (defaults to the
    /// collection gain); an LQ-style approach gain keeps the prefix window
    /// close to the plans the controller will later anchor on.
    pub prefix_gain: Option<DMatrix<f64>>,
    /// Feedforward sequence for the prefix: applied as `K x̂ + plan[i]`,
    /// taking precedence over `prefix_gain`. An admissible approach plan
    /// makes the opening data window itself a feasible plan from `x0`.
    pub prefix_plan: Option<Vec<DVector<f64>>>,
    /// Receding prefix policy `u = f(x̂, i)`, taking precedence over both
    /// `prefix_plan` and `prefix_gain`: re-planning at every prefix step
    /// keeps each opening window near-optimal from its own start.
    pub prefix_controller: Option<std::sync::Arc<dyn Fn(&DVector<f64>, usize) -> Option<DVector<f64>> + Send + Sync>>,
    /// Prefix inputs are clamped into this set (defaults to none).
    pub input_clamp: Option<Polytope>,
    /// Dither amplitude in the prefix, as a multiple of the deviation set.
    pub prefix_dither: f64,
    pub retry_cap: usize,
    /// Cap on phase growth relative to the nominal lengths; past it the
    /// loop keeps retrying at the capped size with fresh realizations.
    pub max_growth: f64,
}

impl std::fmt::Debug for CollectOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CollectOptions")
            .field("lengths", &self.lengths)
            .field("x0", &self.x0)
            .field("prefix_dither", &self.prefix_dither)
            .field("retry_cap", &self.retry_cap)
            .field("max_growth", &self.max_growth)
            .finish_non_exhaustive()
    }
}

impl CollectOptions {
    pub fn new(lengths: CollectLengths, x0: DVector<f64>) -> Self {
        Self {
            lengths,
            x0,
            prefix_gain: None,
            prefix_plan: None,
            prefix_controller: None,
            input_clamp: None,
            prefix_dither: 0.25,
            retry_cap: 40,
            max_growth: 4.0,
        }
    }
}

/// Staged data collection: an arbitrary-input prefix of length `L`, a
/// local phase `u = K x̂ + v` with `v` drawn from the deviation-set
/// vertices, then recovery and tail phases under pure feedback. The loop
/// re-collects with a 1.5x longer local phase until excitation, tail
/// deviation and tail coverage all certify.
pub fn collect_data<P: PlantOracle + ?Sized>(
    plant: &mut P,
    gain: &DMatrix<f64>,
    v_poly: &Polytope,
    horizon: usize,
    opts: &CollectOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(Trajectory, CoverageCertificate)> {
    let n = plant.state_dim();
    let m = plant.input_dim();
    let order = horizon + n + 1;
    let v_vertices: Vec<DVector<f64>> = v_poly.vertices().map_err(Error::Geometry)?.to_vec();
    if v_vertices.is_empty() {
        return Err(Error::AssumptionViolated("deviation set is empty".into()));
    }
    let base_loc = opts.lengths.t_loc.max(horizon);
    let base_pre2 = opts.lengths.t_pre2.max(horizon);
    let mut t_loc = base_loc;
    let mut t_pre2 = base_pre2;
    let loc_cap = ((base_loc as f64) * opts.max_growth).ceil() as usize;
    let pre2_cap = ((base_pre2 as f64) * opts.max_growth).ceil() as usize;
    let mut last_reason = String::new();

    for attempt in 0..opts.retry_cap {
        // Each attempt sees a fresh noise realization; phase lengths are
        // re-chosen per iteration (1.5x growth after a failure, capped).
        if attempt > 0 {
            t_loc = ((t_loc * 3).div_ceil(2)).min(loc_cap);
            t_pre2 = ((t_pre2 * 3).div_ceil(2)).min(pre2_cap);
        }
        let t_total = horizon + t_loc + t_pre2 + horizon;
        let mut u = DMatrix::<f64>::zeros(m, t_total);
        let mut xh = DMatrix::<f64>::zeros(n, t_total);
        let mut meas = plant.reset(&opts.x0);
        let prefix_gain = opts.prefix_gain.as_ref().unwrap_or(gain);
        for i in 0..t_total {
            xh.column_mut(i).copy_from(&meas);
            let ui = if i < horizon {
                // Arbitrary prefix: an admissible approach toward the
                // equilibrium with a small dither, so the first data window
                // is itself a feasible plan from the operating point.
                let mut cand = match (&opts.prefix_controller, &opts.prefix_plan) {
                    (Some(policy), _) => match policy(&meas, i) {
                        Some(u) => u,
                        None => prefix_gain * &meas,
                    },
                    (None, Some(plan)) if i < plan.len() => gain * &meas + &plan[i],
                    _ => prefix_gain * &meas,
                };
                cand += random_vertex(&v_vertices, rng) * opts.prefix_dither;
                if let Some(clamp) = &opts.input_clamp {
                    let reach = trddpc_geometry::gauge(clamp, &cand).map_err(Error::Geometry)?;
                    if reach > 1.0 {
                        cand /= reach;
                    }
                }
                cand
            } else if i < horizon + t_loc {
                gain * &meas + random_vertex(&v_vertices, rng)
            } else {
                gain * &meas
            };
            u.column_mut(i).copy_from(&ui);
            if i + 1 < t_total {
                meas = plant.step(&ui);
            } else {
                plant.step(&ui);
            }
        }
        let mut traj = Trajectory::new(u, xh)?;
        traj.noise_ref = Some("collection".into());

        let pe = check_pe(&traj.u, order);
        if !pe.ok {
            last_reason = format!(
                "persistency of excitation failed: {}",
                pe.reason.clone().unwrap_or_default()
            );
            continue;
        }
        let hs = build_hankel(&traj, horizon + 1)?;
        let dev = check_tail_deviation(&hs, gain, v_poly)?;
        if !dev.pass {
            let worst = dev.slacks.iter().cloned().fold(f64::INFINITY, f64::min);
            last_reason = format!("tail deviation escaped the deviation set (worst slack {worst:.3e})");
            continue;
        }
        match check_tail_coverage(&hs, &traj)? {
            CoverageOutcome::Feasible(mut cert) => {
                cert.tail_deviation = Some(dev);
                cert.pe = Some(pe);
                return Ok((traj, cert));
            }
            CoverageOutcome::Infeasible { residual, .. } => {
                last_reason = format!("tail coverage infeasible (distance {residual:.3e})");
            }
        }
    }
    Err(Error::RetryCapExceeded { cap: opts.retry_cap, reason: last_reason })
}

fn random_vertex(vertices: &[DVector<f64>], rng: &mut ChaCha8Rng) -> DVector<f64> {
    vertices[rng.random_range(0..vertices.len())].clone()
}
