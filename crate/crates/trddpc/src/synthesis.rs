//! Offline controller design: stabilizing-gain synthesis over the model
//! family, terminal weight, invariant-tube computation, constraint
//! tightening, terminal-set construction, and the stability constants.

use nalgebra::{DMatrix, DVector};
use trddpc_geometry::{maximize, MatrixPolytope, MaxOutcome, Polytope};

use crate::consistency::ClosedLoopFamily;
use crate::error::{Error, Result};

/// Gain with its quadratic-decrease certificate: for every vertex pair the
/// block matrix `[[P - βI, A P + B Y], [·ᵀ, P]]` is positive semidefinite
/// (within `-1e-7` on the smallest eigenvalue), with `Y = K P`.
#[derive(Debug, Clone)]
pub struct GainCertificate {
    pub gain: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub beta: f64,
    /// Smallest eigenvalue of each vertex block at the returned point.
    pub residual_eigs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SdpOptions {
    /// Re-certify an existing gain instead of synthesizing one.
    pub fixed_gain: Option<DMatrix<f64>>,
    pub tol: f64,
    pub max_iter: usize,
    pub gain_cap: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self { fixed_gain: None, tol: 1e-9, max_iter: 400, gain_cap: 1e3 }
    }
}

/// Maximize the decrease margin β subject to the per-vertex block LMIs and
/// the normalization `trace(P) = n`, by outer linearization: eigenvector
/// cuts `vᵀ M_j(θ) v >= 0` accumulate until the LP maximizer is feasible
/// for every vertex, at which point it is the exact optimum of the
/// relaxation hierarchy.
pub fn solve_gain_sdp(
    vertices: &[(DMatrix<f64>, DMatrix<f64>)],
    opts: &SdpOptions,
) -> Result<GainCertificate> {
    let (a0, b0) = vertices
        .first()
        .ok_or_else(|| Error::SdpInfeasible("empty vertex list".into()))?;
    let n = a0.nrows();
    let m = b0.ncols();

    // Fixed-gain mode folds K into the A-part and drops the Y block.
    let (eff, y_dim): (Vec<(DMatrix<f64>, DMatrix<f64>)>, usize) = match &opts.fixed_gain {
        Some(k) => {
            if k.nrows() != m || k.ncols() != n {
                return Err(Error::DimensionMismatch { expected: m * n, got: k.nrows() * k.ncols() });
            }
            (
                vertices
                    .iter()
                    .map(|(a, b)| (a + b * k, DMatrix::zeros(n, 0)))
                    .collect(),
                0,
            )
        }
        None => (vertices.to_vec(), m * n),
    };

    // θ = [vech(P) | vec(Y) | β]
    let np = n * (n + 1) / 2;
    let dim = np + y_dim + 1;
    let p_index = |i: usize, j: usize| -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * n - i * (i + 1) / 2 + j
    };

    let mut cuts_g: Vec<DVector<f64>> = Vec::new();
    let mut cuts_h: Vec<f64> = Vec::new();

    // Box bounds keep the LP compact: trace-normalized P has entries in
    // [-n, n]; β in [-1, n]; Y capped by the configured gain bound.
    for idx in 0..dim {
        let mut row = DVector::zeros(dim);
        row[idx] = 1.0;
        let bound = if idx < np {
            n as f64
        } else if idx < np + y_dim {
            opts.gain_cap
        } else {
            n as f64
        };
        cuts_g.push(row.clone());
        cuts_h.push(bound);
        cuts_g.push(-row);
        cuts_h.push(if idx == dim - 1 { 1.0 } else { bound });
    }

    let mut e = DMatrix::<f64>::zeros(1, dim);
    for i in 0..n {
        e[(0, p_index(i, i))] = 1.0;
    }
    let f = DVector::from_element(1, n as f64);

    let mut objective = DVector::<f64>::zeros(dim);
    objective[dim - 1] = 1.0;

    let decode = |theta: &DVector<f64>| -> (DMatrix<f64>, DMatrix<f64>, f64) {
        let p = DMatrix::from_fn(n, n, |i, j| theta[p_index(i, j)]);
        let y = DMatrix::from_fn(m, n, |r, c| {
            if y_dim == 0 { 0.0 } else { theta[np + r * n + c] }
        });
        (p, y, theta[dim - 1])
    };

    let mut best: Option<(DMatrix<f64>, DMatrix<f64>, f64, Vec<f64>)> = None;
    for _ in 0..opts.max_iter {
        let g = stack_rows(&cuts_g, dim);
        let h = DVector::from_vec(cuts_h.clone());
        // Cuts are of the form a·θ >= 0, stored as -a·θ <= 0 already.
        let theta = match maximize(&objective, &g, &h, &e, &f) {
            MaxOutcome::Optimal { x, .. } => x,
            MaxOutcome::Infeasible => {
                return Err(Error::SdpInfeasible(
                    "cut system became infeasible; no common quadratic certificate".into(),
                ))
            }
            MaxOutcome::Unbounded => {
                return Err(Error::SdpInfeasible("relaxation unbounded".into()))
            }
        };
        let (p, y, beta) = decode(&theta);

        let mut worst = f64::INFINITY;
        let mut resids = Vec::with_capacity(eff.len());
        let mut new_cuts: Vec<(DVector<f64>, f64)> = Vec::new();
        for (a_j, b_j) in &eff {
            let s = if y_dim == 0 { a_j * &p } else { a_j * &p + b_j * &y };
            let mut block = DMatrix::<f64>::zeros(2 * n, 2 * n);
            block.view_mut((0, 0), (n, n)).copy_from(&(&p - DMatrix::identity(n, n) * beta));
            block.view_mut((0, n), (n, n)).copy_from(&s);
            block.view_mut((n, 0), (n, n)).copy_from(&s.transpose());
            block.view_mut((n, n), (n, n)).copy_from(&p);
            let sym = (block.clone() + block.transpose()) * 0.5;
            let eig = sym.symmetric_eigen();
            let mut min_eig = f64::INFINITY;
            for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
                min_eig = min_eig.min(lam);
                if lam < opts.tol {
                    let v = eig.eigenvectors.column(idx).into_owned();
                    new_cuts.push(lmi_cut(&v, a_j, b_j, n, y_dim, np, &p_index));
                }
            }
            resids.push(min_eig);
            worst = worst.min(min_eig);
        }

        if worst >= -opts.tol {
            best = Some((p, y, beta, resids));
            break;
        }
        for (row, rhs) in new_cuts {
            cuts_g.push(row);
            cuts_h.push(rhs);
        }
    }

    let Some((p, y, beta, resids)) = best else {
        return Err(Error::SdpInfeasible(format!(
            "cutting-plane loop did not certify within {} iterations",
            opts.max_iter
        )));
    };
    if beta <= 1e-9 {
        return Err(Error::SdpInfeasible(format!(
            "certified decrease margin β = {beta:.3e} is not positive; data too poor or noise too large"
        )));
    }
    let gain = match &opts.fixed_gain {
        Some(k) => k.clone(),
        None => {
            let p_inv = p
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::SdpInfeasible("certified P not invertible".into()))?;
            &y * p_inv
        }
    };
    Ok(GainCertificate { gain, p, beta, residual_eigs: resids })
}

/// Linear coefficients of `vᵀ M_j(θ) v` in θ (constraint `>= 0`, encoded as
/// `-aᵀθ <= 0` rows for the maximizer).
fn lmi_cut(
    v: &DVector<f64>,
    a_j: &DMatrix<f64>,
    b_j: &DMatrix<f64>,
    n: usize,
    y_dim: usize,
    np: usize,
    p_index: &dyn Fn(usize, usize) -> usize,
) -> (DVector<f64>, f64) {
    let dim = np + y_dim + 1;
    let v1 = v.rows(0, n).into_owned();
    let v2 = v.rows(n, n).into_owned();
    let at_v1 = a_j.transpose() * &v1;
    // vᵀMv = v1ᵀPv1 + v2ᵀPv2 + 2 v1ᵀ(A P + B Y) v2 - β v1ᵀv1
    let mut coef = DVector::<f64>::zeros(dim);
    let mut c_p = &v1 * v1.transpose() + &v2 * v2.transpose();
    c_p += &v2 * at_v1.transpose() + &at_v1 * v2.transpose();
    for i in 0..n {
        for j in i..n {
            coef[p_index(i, j)] += if i == j { c_p[(i, i)] } else { c_p[(i, j)] + c_p[(j, i)] };
        }
    }
    if y_dim > 0 {
        let bt_v1 = b_j.transpose() * &v1;
        let m = b_j.ncols();
        for r in 0..m {
            for c in 0..n {
                coef[np + r * n + c] += 2.0 * bt_v1[r] * v2[c];
            }
        }
    }
    coef[dim - 1] = -v1.norm_squared();
    (-coef, 0.0)
}

fn stack_rows(rows: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    let mut g = DMatrix::<f64>::zeros(rows.len(), dim);
    for (i, r) in rows.iter().enumerate() {
        g.row_mut(i).copy_from(&r.transpose());
    }
    g
}

/// Terminal weight and decrease margins derived from a gain certificate.
#[derive(Debug, Clone)]
pub struct TerminalWeight {
    pub p_l: DMatrix<f64>,
    pub lambda: f64,
    pub c_p: f64,
    pub eta: f64,
}

/// Convert the dual decrease certificate into a primal terminal weight:
/// `λ = β / λ_max(P)`, `P_L = c_p P⁻¹` with
/// `c_p = (1+μ) λ_max(P^{1/2} S P^{1/2}) / λ`, and margin
/// `η = λ - λ_max(P_L^{-1/2} S P_L^{-1/2}) > 0`.
pub fn terminal_weight(
    p: &DMatrix<f64>,
    beta: f64,
    gain: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<TerminalWeight> {
    let n = p.nrows();
    let s = q + gain.transpose() * r * gain;
    let lambda = beta / sym_eig_max(p);
    let sqrt_p = spd_sqrt(p)?;
    let mid = &sqrt_p * &s * &sqrt_p;
    let base = sym_eig_max(&mid) / lambda;

    let mut mu = 0.1;
    for _ in 0..20 {
        let c_p = (1.0 + mu) * base;
        let p_inv = p
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SdpInfeasible("P not invertible".into()))?;
        let p_l = p_inv * c_p;
        let p_l_inv_sqrt = spd_inv_sqrt(&p_l)?;
        let eta = lambda - sym_eig_max(&(&p_l_inv_sqrt * &s * &p_l_inv_sqrt));
        if eta > 1e-12 * lambda.max(1.0) {
            let _ = n;
            return Ok(TerminalWeight { p_l, lambda, c_p, eta });
        }
        mu *= 2.0;
    }
    Err(Error::MarginNonpositive { retries: 20 })
}

/// Invariant set for the family under an additive disturbance: iterate
/// `F ← co(∪_j A_j F) ⊕ dist` from the origin, stop at the first scaled
/// iterate `(1+ε)F` that passes an explicit invariance check, and return it
/// with the final inner iterate (an inner approximation of the limit).
pub fn rpi_synthesis(
    family: &MatrixPolytope,
    dist: &Polytope,
    eps_outer: f64,
) -> Result<(Polytope, Polytope)> {
    rpi_synthesis_within(family, dist, eps_outer, None)
}

/// As `rpi_synthesis`, aborting early (with `TerminalDesignInfeasible`)
/// once an iterate escapes `within`: the iterates grow monotonically, so
/// escape falsifies any containment requirement on the limit.
pub fn rpi_synthesis_within(
    family: &MatrixPolytope,
    dist: &Polytope,
    eps_outer: f64,
    within: Option<&Polytope>,
) -> Result<(Polytope, Polytope)> {
    let dim = dist.dim();
    let (zero_in, _) = dist.contains_point(&DVector::zeros(dim)).map_err(Error::Geometry)?;
    if !zero_in {
        return Err(Error::AssumptionViolated("disturbance set must contain the origin".into()));
    }
    let cap = 500;
    let mut f = Polytope::singleton(&DVector::zeros(dim)).map_err(Error::Geometry)?;
    for _ in 0..cap {
        let image = family.robust_image(&f).map_err(Error::Geometry)?;
        let next = image.minkowski_sum(dist).map_err(Error::Geometry)?;
        if let Some(bound) = within {
            let (inside, _) = bound.contains_poly(&next).map_err(Error::Geometry)?;
            if !inside {
                return Err(Error::TerminalDesignInfeasible);
            }
        }
        let candidate = f.scale(1.0 + eps_outer).map_err(Error::Geometry)?;
        let (contained, _) = candidate.contains_poly(&next).map_err(Error::Geometry)?;
        if contained {
            let cand_image = family
                .robust_image(&candidate)
                .map_err(Error::Geometry)?
                .minkowski_sum(dist)
                .map_err(Error::Geometry)?;
            let (certified, _) = candidate.contains_poly(&cand_image).map_err(Error::Geometry)?;
            if certified {
                return Ok((candidate, f));
            }
        }
        f = next;
    }
    Err(Error::NoTermination { cap })
}

/// Tube cross-sections and the tightened constraint sets.
#[derive(Debug, Clone)]
pub struct TubeDesign {
    /// Initial-anchoring invariant tube.
    pub error_rpi: Polytope,
    /// Measurement-noise image bound γ*·W.
    pub noise_tube: Polytope,
    /// Propagated anchoring mismatch co(A_K·E).
    pub online_tube: Polytope,
    /// Data-mismatch bound θ(1+γ*)·W.
    pub offline_tube: Polytope,
    /// Aggregate disturbance (1+θ)(1+γ*)·W driving the error tube.
    pub disturbance: Polytope,
    /// Tightened state set.
    pub state_tight: Polytope,
    /// Tightened input set.
    pub input_tight: Polytope,
    pub theta: f64,
}

/// Aggregate error disturbance at the given simplex scale.
pub fn error_disturbance(w: &Polytope, gamma_star: f64, theta: f64) -> Result<Polytope> {
    w.scale((1.0 + theta) * (1.0 + gamma_star)).map_err(Error::Geometry)
}

/// Tighten the state and input constraints by the three tube terms.
pub fn tighten(
    x_set: &Polytope,
    u_set: &Polytope,
    w: &Polytope,
    gamma_star: f64,
    error_rpi: &Polytope,
    family: &ClosedLoopFamily,
    theta: f64,
) -> Result<TubeDesign> {
    let noise_tube = w.scale(gamma_star).map_err(Error::Geometry)?;
    let offline_tube = w.scale(theta * (1.0 + gamma_star)).map_err(Error::Geometry)?;
    let disturbance = error_disturbance(w, gamma_star, theta)?;
    let online_tube = family.a_k.robust_image(error_rpi).map_err(Error::Geometry)?;

    let shrink = offline_tube
        .minkowski_sum(&online_tube)
        .map_err(Error::Geometry)?
        .minkowski_sum(&noise_tube)
        .map_err(Error::Geometry)?;
    let state_tight = x_set.pontryagin_diff(&shrink).map_err(Error::Geometry)?;
    let gain_tube = error_rpi.linear_image(&family.gain).map_err(Error::Geometry)?;
    let input_tight = u_set.pontryagin_diff(&gain_tube).map_err(Error::Geometry)?;

    if state_tight.is_empty() || input_tight.is_empty() {
        let which = if state_tight.is_empty() {
            "state tightening X ⊖ (offline ⊕ online ⊕ noise tubes)"
        } else {
            "input tightening U ⊖ K·E"
        };
        let max_scale = max_scale_before_empty(x_set, &shrink)
            .min(max_scale_before_empty(u_set, &gain_tube));
        return Err(Error::TightenedSetEmpty { which: which.into(), max_scale });
    }
    Ok(TubeDesign {
        error_rpi: error_rpi.clone(),
        noise_tube,
        online_tube,
        offline_tube,
        disturbance,
        state_tight,
        input_tight,
        theta,
    })
}

/// Largest multiple of the subtracted tube (relative to its current size)
/// that keeps the difference nonempty, holding the gain and γ* fixed.
fn max_scale_before_empty(outer: &Polytope, tube: &Polytope) -> f64 {
    let (g, h) = outer.facets();
    let mut scale = f64::INFINITY;
    for i in 0..g.nrows() {
        let row: DVector<f64> = g.row(i).transpose();
        let Ok(s) = tube.support(&row) else { continue };
        if s > 1e-12 {
            scale = scale.min(h[i] / s);
        }
    }
    scale
}

/// Terminal ingredients: local deviation set, aggregated disturbance,
/// terminal invariant set and the terminal weight, with the condition
/// margins that certify them.
#[derive(Debug, Clone)]
pub struct TerminalDesign {
    pub weight: TerminalWeight,
    pub z_f: Polytope,
    pub v_poly: Polytope,
    /// Scale applied to the candidate deviation set by the bisection.
    pub v_scale: f64,
    pub omega: Polytope,
    /// co{B v}: the input-matrix family image of the deviation set.
    pub bv: Polytope,
    /// Margins: inner-iterate ⊆ Z_f, Z_f ⊆ Z, K Z_f ⊕ V ⊆ Û, RPI condition.
    pub margins: TerminalMargins,
}

#[derive(Debug, Clone)]
pub struct TerminalMargins {
    pub minimal_set: f64,
    pub state: f64,
    pub input: f64,
    pub invariance: f64,
}

/// Build the terminal set for a given deviation polytope scale, verifying
/// the three admissibility conditions. Fails fast on violation so the
/// caller can bisect the scale.
pub fn terminal_set_at_scale(
    tube: &TubeDesign,
    family: &ClosedLoopFamily,
    w: &Polytope,
    gamma_star: f64,
    weight: &TerminalWeight,
    v_base: &Polytope,
    v_scale: f64,
    eps_outer: f64,
) -> Result<TerminalDesign> {
    let v_poly = v_base.scale(v_scale).map_err(Error::Geometry)?;
    let bv = family.b_set.robust_image(&v_poly).map_err(Error::Geometry)?;
    let omega = w
        .scale(tube.theta * (1.0 + gamma_star))
        .map_err(Error::Geometry)?
        .minkowski_sum(&bv)
        .map_err(Error::Geometry)?;
    // Iterates escaping the tightened state set doom the attempt early.
    let (z_f, inner) =
        rpi_synthesis_within(&family.a_k, &omega, eps_outer, Some(&tube.state_tight))?;

    let (ok_min, minimal_set) = z_f.contains_poly(&inner).map_err(Error::Geometry)?;
    let (ok_state, state) = tube.state_tight.contains_poly(&z_f).map_err(Error::Geometry)?;
    let kz = z_f.linear_image(&family.gain).map_err(Error::Geometry)?;
    let kz_v = kz.minkowski_sum(&v_poly).map_err(Error::Geometry)?;
    let (ok_input, input) = tube.input_tight.contains_poly(&kz_v).map_err(Error::Geometry)?;
    let image = family
        .a_k
        .robust_image(&z_f)
        .map_err(Error::Geometry)?
        .minkowski_sum(&omega)
        .map_err(Error::Geometry)?;
    let (ok_inv, invariance) = z_f.contains_poly(&image).map_err(Error::Geometry)?;

    if !(ok_min && ok_state && ok_input && ok_inv) {
        return Err(Error::TerminalDesignInfeasible);
    }
    Ok(TerminalDesign {
        weight: weight.clone(),
        z_f,
        v_poly,
        v_scale,
        omega,
        bv,
        margins: TerminalMargins { minimal_set, state, input, invariance },
    })
}

/// Largest deviation-set scale in `(0, 1]` passing the terminal conditions,
/// found by bisection after a coarse downward sweep.
pub fn terminal_set(
    tube: &TubeDesign,
    family: &ClosedLoopFamily,
    w: &Polytope,
    gamma_star: f64,
    weight: &TerminalWeight,
    v_base: &Polytope,
    eps_outer: f64,
) -> Result<TerminalDesign> {
    let attempt = |scale: f64| {
        terminal_set_at_scale(tube, family, w, gamma_star, weight, v_base, scale, eps_outer)
    };
    if let Ok(d) = attempt(1.0) {
        return Ok(d);
    }
    // Find any feasible scale going down, then bisect up toward the largest.
    let mut lo = 0.5;
    let mut lo_design = None;
    while lo > 1e-3 {
        match attempt(lo) {
            Ok(d) => {
                lo_design = Some((lo, d));
                break;
            }
            Err(_) => lo *= 0.5,
        }
    }
    let Some((mut lo, mut design)) = lo_design else {
        return Err(Error::TerminalDesignInfeasible);
    };
    let mut hi = (2.0 * lo).min(1.0);
    for _ in 0..12 {
        if hi - lo < 0.02 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match attempt(mid) {
            Ok(d) => {
                lo = mid;
                design = d;
            }
            Err(_) => hi = mid,
        }
    }
    Ok(design)
}

/// Computable stability constants.
#[derive(Debug, Clone)]
pub struct IssCertificate {
    pub beta_h: f64,
    pub c_delta: f64,
    pub c_v: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub eta: f64,
    pub underline_alpha_v: f64,
    pub overline_alpha_v: f64,
    /// Quadratic coefficients of the comparison functions.
    pub alpha1_coeff: f64,
    pub alpha2_coeff: f64,
    /// Euclidean radius of the noise set.
    pub eps: f64,
}

impl IssCertificate {
    /// Disturbance bias entering the terminal decrease.
    pub fn c_omega(&self) -> f64 {
        self.c_delta * self.eps * self.eps + self.c_v
    }

    /// Bias of the measured-state decrease inequality.
    pub fn c_xhat(&self) -> f64 {
        let front = self
            .underline_alpha_v
            .max(2.0 * self.overline_alpha_v)
            .max(2.0 * self.kappa);
        (self.c_delta + front * self.beta_h * self.beta_h) * self.eps * self.eps + self.c_v
    }
}

/// Assemble the stability constants from the finished design.
#[allow(clippy::too_many_arguments)]
pub fn iss_constants(
    tube: &TubeDesign,
    term: &TerminalDesign,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gamma_star: f64,
    horizon: usize,
    w: &Polytope,
) -> Result<IssCertificate> {
    let lambda = term.weight.lambda;
    if lambda >= 1.0 {
        return Err(Error::LambdaGeOne { lambda });
    }
    let eta = term.weight.eta;
    let alpha = eta / (1.0 - lambda);
    let pl_max = sym_eig_max(&term.weight.p_l);
    let q_min = sym_eig_min(q);
    let kappa = 0.5 * q_min;

    let eps = w.radius().map_err(Error::Geometry)?;
    let rad_e = tube.error_rpi.radius().map_err(Error::Geometry)?;
    let beta_h = if eps > 0.0 { rad_e / eps } else { 0.0 };

    let amp = 1.0 + 1.0 / alpha;
    let delta_gain = tube.theta * (1.0 + gamma_star);
    let c_delta = amp * 2.0 * pl_max * delta_gain * delta_gain;
    let d_v = term.bv.radius().map_err(Error::Geometry)?;
    let c_v = amp * 2.0 * pl_max * d_v * d_v;

    // Value-function comparison constants: the lower slope is the stage
    // coercivity; the upper slope anchors the global value bound over the
    // compact tightened sets to the terminal set's inscribed ball.
    let underline_alpha_v = q_min;
    let rad_z = tube.state_tight.radius().map_err(Error::Geometry)?;
    let rad_u = tube.input_tight.radius().map_err(Error::Geometry)?;
    let rad_zf = term.z_f.radius().map_err(Error::Geometry)?;
    let v_max = horizon as f64 * (sym_eig_max(q) * rad_z * rad_z + sym_eig_max(r) * rad_u * rad_u)
        + pl_max * rad_zf * rad_zf;
    let inradius = match term.z_f.chebyshev().map_err(Error::Geometry)? {
        Some((_, r)) if r.is_finite() && r > 0.0 => r,
        _ => rad_zf.max(1e-9),
    };
    let overline_alpha_v = (v_max / (inradius * inradius)).max(underline_alpha_v);

    Ok(IssCertificate {
        beta_h,
        c_delta,
        c_v,
        kappa,
        alpha,
        lambda,
        eta,
        underline_alpha_v,
        overline_alpha_v,
        alpha1_coeff: 0.5 * underline_alpha_v,
        alpha2_coeff: 2.0 * overline_alpha_v,
        eps,
    })
}

/// Maximal constraint-admissible positively invariant set of `z⁺ = A z`
/// inside `{z ∈ state_set : K z ∈ input_set}` (model-based comparator
/// machinery). Backward iteration with vertex-based redundancy cleanup.
pub fn max_invariant_set(
    a_cl: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    state_set: &Polytope,
    input_set: &Polytope,
) -> Result<Polytope> {
    let (gz, hz) = state_set.facets();
    let (gu, hu) = input_set.facets();
    let gu_k = gu * gain;
    let mut g_rows = DMatrix::<f64>::zeros(gz.nrows() + gu_k.nrows(), gz.ncols());
    g_rows.rows_mut(0, gz.nrows()).copy_from(gz);
    g_rows.rows_mut(gz.nrows(), gu_k.nrows()).copy_from(&gu_k);
    let mut h_rows = DVector::<f64>::zeros(hz.len() + hu.len());
    h_rows.rows_mut(0, hz.len()).copy_from(hz);
    h_rows.rows_mut(hz.len(), hu.len()).copy_from(hu);
    let base_g = g_rows.clone();
    let base_h = h_rows.clone();

    let mut current = Polytope::from_halfspaces(g_rows, h_rows).map_err(Error::Geometry)?;
    for _ in 0..200 {
        if current.is_empty() {
            return Ok(current);
        }
        // Pull the base constraints back one step and intersect.
        let (gc, _) = current.facets();
        let mut g_next = DMatrix::<f64>::zeros(base_g.nrows() + gc.nrows(), base_g.ncols());
        g_next.rows_mut(0, base_g.nrows()).copy_from(&base_g);
        let pulled = current.facets().0 * a_cl;
        g_next.rows_mut(base_g.nrows(), pulled.nrows()).copy_from(&pulled);
        let mut h_next = DVector::<f64>::zeros(base_h.len() + current.facets().1.len());
        h_next.rows_mut(0, base_h.len()).copy_from(&base_h);
        h_next
            .rows_mut(base_h.len(), current.facets().1.len())
            .copy_from(current.facets().1);
        let next = Polytope::from_halfspaces(g_next, h_next).map_err(Error::Geometry)?;
        let (same, _) = next.contains_poly(&current).map_err(Error::Geometry)?;
        if same {
            return Ok(current);
        }
        // Rebuild from vertices to shed redundant rows before iterating.
        current = Polytope::from_vertices(next.vertices().map_err(Error::Geometry)?)
            .map_err(Error::Geometry)?;
    }
    Err(Error::NoTermination { cap: 200 })
}

/// LQ-optimal state feedback `u = K x` for a model estimate, via the
/// discrete Riccati fixed point.
pub fn dare_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut p = q.clone();
    for _ in 0..10_000 {
        let rb = r + b.transpose() * &p * b;
        let rb_inv = rb
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SolverFailure("Riccati inner inverse failed".into()))?;
        let next = q + a.transpose() * &p * a
            - a.transpose() * &p * b * &rb_inv * b.transpose() * &p * a;
        let diff = (&next - &p).amax();
        p = next;
        if diff < 1e-12 * (1.0 + p.amax()) {
            let rb = r + b.transpose() * &p * b;
            let rb_inv = rb
                .try_inverse()
                .ok_or_else(|| Error::SolverFailure("Riccati gain inverse failed".into()))?;
            let k = -(&rb_inv * b.transpose() * &p * a);
            let _ = n;
            return Ok(k);
        }
    }
    Err(Error::NoConvergence { iters: 10_000, lo: 0.0, hi: 0.0 })
}

pub fn sym_eig_max(m: &DMatrix<f64>) -> f64 {
    let sym = (m.clone() + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.max()
}

pub fn sym_eig_min(m: &DMatrix<f64>) -> f64 {
    let sym = (m.clone() + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

/// Spectral radius via complex eigenvalues.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

fn spd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_power(m, 0.5)
}

fn spd_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_power(m, -0.5)
}

fn spd_power(m: &DMatrix<f64>, pow: f64) -> Result<DMatrix<f64>> {
    let sym = (m.clone() + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    if eig.eigenvalues.min() <= 0.0 {
        return Err(Error::SdpInfeasible("matrix not positive definite".into()));
    }
    let mut d = DMatrix::<f64>::zeros(m.nrows(), m.nrows());
    for i in 0..m.nrows() {
        d[(i, i)] = eig.eigenvalues[i].powf(pow);
    }
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat1(v: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 1, &[v])
    }

    #[test]
    fn sdp_singleton_schur_family() {
        // A already Schur, B = 0: feasible with any gain; β must be positive.
        let cert = solve_gain_sdp(&[(mat1(0.5), mat1(0.0))], &SdpOptions::default()).unwrap();
        assert!(cert.beta > 0.0);
        assert!(cert.residual_eigs.iter().all(|&e| e >= -1e-7));
    }

    #[test]
    fn sdp_scalar_interval_family_hand_check() {
        // a in [1.05, 1.15], b in [0.45, 0.55]; with trace(P)=1 the LMI
        // reduces to (1-β) >= (a + b K)² at all four corners.
        let mut vertices = Vec::new();
        for a in [1.05, 1.15] {
            for b in [0.45, 0.55] {
                vertices.push((mat1(a), mat1(b)));
            }
        }
        let cert = solve_gain_sdp(&vertices, &SdpOptions::default()).unwrap();
        assert!((cert.p[(0, 0)] - 1.0).abs() < 1e-7);
        let k = cert.gain[(0, 0)];
        for (a, b) in &vertices {
            let cl = a[(0, 0)] + b[(0, 0)] * k;
            assert!(
                cl * cl <= 1.0 - cert.beta + 1e-6,
                "vertex ({}, {}) violates: cl² = {} vs 1-β = {}",
                a[(0, 0)],
                b[(0, 0)],
                cl * cl,
                1.0 - cert.beta
            );
        }
        // The gain must stabilize the worst vertex.
        assert!(vertices.iter().all(|(a, b)| (a[(0, 0)] + b[(0, 0)] * k).abs() < 1.0));
    }

    #[test]
    fn sdp_fixed_gain_recertification() {
        let mut vertices = Vec::new();
        for a in [1.05, 1.15] {
            for b in [0.45, 0.55] {
                vertices.push((mat1(a), mat1(b)));
            }
        }
        let free = solve_gain_sdp(&vertices, &SdpOptions::default()).unwrap();
        let opts = SdpOptions { fixed_gain: Some(free.gain.clone()), ..Default::default() };
        let fixed = solve_gain_sdp(&vertices, &opts).unwrap();
        assert!(fixed.beta > 0.0);
        assert_eq!(fixed.gain, free.gain);
    }

    #[test]
    fn sdp_unstabilizable_family_rejected() {
        // b spans zero with a > 1: no single gain stabilizes both signs.
        let vertices = vec![(mat1(1.5), mat1(1.0)), (mat1(1.5), mat1(-1.0))];
        assert!(solve_gain_sdp(&vertices, &SdpOptions::default()).is_err());
    }

    #[test]
    fn terminal_weight_scalar_closed_form() {
        // P = 1, β = 0.19: λ = 0.19, c_p = 1.1 S / λ and η = λμ/(1+μ).
        let p = mat1(1.0);
        let k = mat1(-2.0);
        let q = mat1(1.0);
        let r = mat1(0.1);
        let tw = terminal_weight(&p, 0.19, &k, &q, &r).unwrap();
        let s = 1.0 + 4.0 * 0.1;
        assert!((tw.lambda - 0.19).abs() < 1e-12);
        assert!((tw.c_p - 1.1 * s / 0.19).abs() < 1e-9);
        assert!((tw.p_l[(0, 0)] - tw.c_p).abs() < 1e-9);
        let eta_expect = 0.19 * 0.1 / 1.1;
        assert!((tw.eta - eta_expect).abs() < 1e-9, "eta {} vs {}", tw.eta, eta_expect);
    }

    #[test]
    fn terminal_weight_small_stage_cost_limit() {
        let p = mat1(1.0);
        let k = mat1(0.0);
        let q = mat1(1e-6);
        let r = mat1(1e-6);
        let tw = terminal_weight(&p, 0.19, &k, &q, &r).unwrap();
        assert!(tw.c_p < 1e-4);
        assert!((tw.eta - 0.19 * 0.1 / 1.1).abs() < 1e-6);
    }

    #[test]
    fn rpi_zero_map_returns_disturbance() {
        let fam = MatrixPolytope::from_vertices(vec![DMatrix::zeros(2, 2)]).unwrap();
        let dist = Polytope::box_centered(&[1.0, 0.5]).unwrap();
        let (rpi, _) = rpi_synthesis(&fam, &dist, 1e-3).unwrap();
        let (ok, _) = rpi.contains_poly(&dist).unwrap();
        assert!(ok);
        // And not much larger than the disturbance itself.
        let (ok, _) = dist.scale(1.002).unwrap().contains_poly(&rpi).unwrap();
        assert!(ok);
    }

    #[test]
    fn rpi_scalar_geometric_series() {
        let fam = MatrixPolytope::from_vertices(vec![mat1(0.5)]).unwrap();
        let dist = Polytope::interval(-1.0, 1.0).unwrap();
        let (rpi, _) = rpi_synthesis(&fam, &dist, 1e-3).unwrap();
        let hi = rpi.support(&DVector::from_row_slice(&[1.0])).unwrap();
        // Limit is [-2, 2]; the certified set is within the outer tolerance.
        assert!(hi >= 2.0 - 1e-6 && hi <= 2.0 * 1.0035, "support {hi}");
        // Certified invariance: 0.5·rpi ⊕ dist ⊆ rpi.
        let image = rpi.scale(0.5).unwrap().minkowski_sum(&dist).unwrap();
        assert!(rpi.contains_poly(&image).unwrap().0);
    }

    #[test]
    fn max_invariant_set_double_integrator() {
        let a_cl = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.4]);
        let k = DMatrix::from_row_slice(1, 2, &[-0.5, -0.5]);
        let z = Polytope::box_centered(&[1.0, 1.0]).unwrap();
        let u = Polytope::box_centered(&[0.6]).unwrap();
        let inv = max_invariant_set(&a_cl, &k, &z, &u).unwrap();
        assert!(!inv.is_empty());
        // Invariance: A_cl · inv ⊆ inv, and constraints hold on it.
        let img = inv.linear_image(&a_cl).unwrap();
        assert!(inv.contains_poly(&img).unwrap().0);
        assert!(z.contains_poly(&inv).unwrap().0);
        let ku = inv.linear_image(&k).unwrap();
        assert!(u.contains_poly(&ku).unwrap().0);
    }

    #[test]
    fn spectral_radius_rotation() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -0.9, 0.9, 0.0]);
        assert!((spectral_radius(&m) - 0.9).abs() < 1e-12);
    }
}
