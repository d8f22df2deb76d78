//! Offline design orchestration: from a collected trajectory to the full set
//! of controller ingredients, plus the staged pilot/collect/design flow that
//! produces both the dataset and the certified design together.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use trddpc_geometry::{Polytope, PolytopeJson};

use crate::consistency::{self, ClosedLoopFamily, GammaOptions};
use crate::controller::{assemble_qp, OcpProblem, QpCanonical};
use crate::coverage::{
    self, check_tail_coverage, CollectOptions, CoverageCertificate, CoverageOutcome, PlantOracle,
};
use crate::data::{build_hankel, HankelSystem, SimplexCoefficient, Trajectory};
use crate::error::{Error, Result};
use crate::synthesis::{
    self, iss_constants, rpi_synthesis, solve_gain_sdp, terminal_set, terminal_set_at_scale,
    terminal_weight, tighten, GainCertificate, IssCertificate, SdpOptions, TerminalDesign,
    TubeDesign,
};

/// Problem description consumed by the offline design.
#[derive(Debug, Clone)]
pub struct DesignInputs {
    pub x_set: Polytope,
    pub u_set: Polytope,
    pub w_set: Polytope,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub horizon: usize,
    pub theta: f64,
    pub eps_outer: f64,
    pub solver_tol: f64,
    /// Scale applied to the minimal certified error tube (scaling an
    /// invariant set up preserves invariance); larger anchors trade
    /// tightened-input margin for re-anchoring freedom.
    pub anchor_inflate: f64,
}

/// Complete offline output: the contract between design and run stages.
#[derive(Debug, Clone)]
pub struct DesignArtifacts {
    pub gain_cert: GainCertificate,
    pub gamma_star: f64,
    pub tube: TubeDesign,
    pub terminal: TerminalDesign,
    pub iss: IssCertificate,
    pub tail: SimplexCoefficient,
    pub inputs: DesignInputs,
    pub data_len: usize,
}

impl DesignArtifacts {
    /// Online problem bound to a dataset's Hankel system.
    pub fn ocp(&self, hankel: HankelSystem) -> OcpProblem {
        OcpProblem {
            hankel,
            gain: self.gain_cert.gain.clone(),
            q: self.inputs.q.clone(),
            r: self.inputs.r.clone(),
            p_l: self.terminal.weight.p_l.clone(),
            anchor: self.tube.error_rpi.clone(),
            state_tight: self.tube.state_tight.clone(),
            input_tight: self.tube.input_tight.clone(),
            terminal: self.terminal.z_f.clone(),
            theta: self.inputs.theta,
            solver_tol: self.inputs.solver_tol,
        }
    }

    pub fn controller(&self, traj: &Trajectory) -> Result<(OcpProblem, QpCanonical)> {
        let hankel = build_hankel(traj, self.inputs.horizon + 1)?;
        let problem = self.ocp(hankel);
        let qp = assemble_qp(&problem)?;
        Ok((problem, qp))
    }
}

/// Induced-gain bound with the noise-free degenerate case mapped to zero.
pub fn certified_gamma(traj: &Trajectory, w: &Polytope) -> Result<f64> {
    if is_degenerate_noise(w) {
        return Ok(0.0);
    }
    consistency::certify_gamma_star(traj, w, &GammaOptions::default())
}

fn is_degenerate_noise(w: &Polytope) -> bool {
    !w.origin_interior()
}

/// Offline design from a dataset. When `fixed_gain` is given the gain is
/// re-certified on this dataset's model set instead of re-synthesized, and
/// `v_fixed` pins the deviation set chosen at collection time (scale 1.0 is
/// attempted first and the bisection only shrinks on violation).
pub fn design_from_data(
    traj: &Trajectory,
    inputs: &DesignInputs,
    fixed_gain: Option<&DMatrix<f64>>,
    v_fixed: Option<&Polytope>,
) -> Result<DesignArtifacts> {
    if !inputs.x_set.origin_interior() || !inputs.u_set.origin_interior() {
        return Err(Error::AssumptionViolated(
            "state and input constraint sets must contain the origin strictly".into(),
        ));
    }
    let gamma_star = certified_gamma(traj, &inputs.w_set)?;
    let mut model_set = consistency::full_set(traj, &inputs.w_set, gamma_star)?;
    model_set.enumerate()?;

    let sdp_opts = SdpOptions { fixed_gain: fixed_gain.cloned(), ..Default::default() };
    let gain_cert = solve_gain_sdp(model_set.vertices()?, &sdp_opts)?;
    let family = consistency::closed_loop_family(&model_set, &gain_cert.gain)?;

    let disturbance =
        synthesis::error_disturbance(&inputs.w_set, gamma_star, inputs.theta)?;
    let (error_rpi, _) = rpi_synthesis(&family.a_k, &disturbance, inputs.eps_outer)?;
    let error_rpi = error_rpi
        .scale(inputs.anchor_inflate.max(1.0))
        .map_err(Error::Geometry)?;
    let tube = tighten(
        &inputs.x_set,
        &inputs.u_set,
        &inputs.w_set,
        gamma_star,
        &error_rpi,
        &family,
        inputs.theta,
    )?;

    let weight = terminal_weight(
        &gain_cert.p,
        gain_cert.beta,
        &gain_cert.gain,
        &inputs.q,
        &inputs.r,
    )?;
    let terminal = match v_fixed {
        Some(v) => terminal_set_at_scale(
            &tube,
            &family,
            &inputs.w_set,
            gamma_star,
            &weight,
            v,
            1.0,
            inputs.eps_outer,
        )?,
        None => {
            let base = deviation_base(&inputs.u_set, &gain_cert.gain, &inputs.x_set)?;
            terminal_set(
                &tube,
                &family,
                &inputs.w_set,
                gamma_star,
                &weight,
                &base,
                inputs.eps_outer,
            )?
        }
    };
    let iss = iss_constants(
        &tube,
        &terminal,
        &inputs.q,
        &inputs.r,
        gamma_star,
        inputs.horizon,
        &inputs.w_set,
    )?;

    // Tail certificate for the shift construction.
    let hs = build_hankel(traj, inputs.horizon + 1)?;
    let tail = match check_tail_coverage(&hs, traj)? {
        CoverageOutcome::Feasible(cert) => cert.h,
        CoverageOutcome::Infeasible { residual, .. } => {
            return Err(Error::AssumptionViolated(format!(
                "tail coverage certificate missing (distance {residual:.3e})"
            )))
        }
    };

    Ok(DesignArtifacts {
        gain_cert,
        gamma_star,
        tube,
        terminal,
        iss,
        tail,
        inputs: inputs.clone(),
        data_len: traj.len(),
    })
}

/// Default deviation-set shape: the origin-centered symmetrization of the
/// input margin left by the gain over the state set, falling back to the
/// symmetrized input set when that margin is empty.
pub fn deviation_base(
    u_set: &Polytope,
    gain: &DMatrix<f64>,
    x_set: &Polytope,
) -> Result<Polytope> {
    let kx = x_set.linear_image(gain).map_err(Error::Geometry)?;
    let margin = u_set.pontryagin_diff(&kx).map_err(Error::Geometry)?;
    let candidate = if margin.is_empty() { u_set.clone() } else { margin };
    let neg = candidate.neg().map_err(Error::Geometry)?;
    let sym = candidate.intersect(&neg).map_err(Error::Geometry)?;
    if sym.is_empty() || !sym.origin_interior() {
        return Err(Error::AssumptionViolated(
            "deviation-set symmetrization came back degenerate".into(),
        ));
    }
    Ok(sym)
}

/// Options steering the staged preparation.
#[derive(Debug, Clone)]
pub struct PrepareOptions {
    pub collect: CollectOptions,
    /// Pilot episode length for the initial gain certificate.
    pub pilot_len: usize,
    /// Input amplitude of the pilot excitation, as a fraction of the
    /// symmetrized input set.
    pub pilot_input_scale: f64,
    /// Safety shrink applied to the deviation scale found on pilot data.
    pub v_safety: f64,
    /// Outer retries when the design stage rejects the collected data.
    pub design_retries: usize,
    /// Margins of the prefix approach plan relative to the pilot sets.
    pub approach_anchor: f64,
    pub approach_input: f64,
    pub approach_state: f64,
    pub approach_terminal: f64,
}

/// Dataset plus certified design from one staged interaction with the
/// plant: pilot episode -> pilot gain -> deviation-set sizing -> staged
/// collection -> design with the gain re-certified on the final data.
pub fn prepare(
    plant: &mut dyn PlantOracle,
    inputs: &DesignInputs,
    opts: &PrepareOptions,
    rng: &mut ChaCha8Rng,
) -> Result<(Trajectory, CoverageCertificate, DesignArtifacts)> {
    let pilot = run_pilot(plant, inputs, opts, rng)?;
    let pilot_gamma = certified_gamma(&pilot, &inputs.w_set)?;
    let mut pilot_set = consistency::full_set(&pilot, &inputs.w_set, pilot_gamma)?;
    pilot_set.enumerate()?;
    let mut gain_cert = solve_gain_sdp(pilot_set.vertices()?, &SdpOptions::default())?;

    // Pilot-stage sizing: deviation set for the local excitation, the
    // tightened input set as the prefix clamp, and an admissible approach
    // plan from x0 so the opening data window is itself plan-shaped.
    let mut sizing = pilot_sizing(&pilot, inputs, &gain_cert, pilot_gamma, opts)?;

    let mut last_err: Option<Error> = None;
    for _ in 0..opts.design_retries.max(1) {
        let mut collect_opts = opts.collect.clone();
        if collect_opts.input_clamp.is_none() {
            collect_opts.input_clamp =
                Some(sizing.input_tight.scale(0.995).map_err(Error::Geometry)?);
        }
        if collect_opts.prefix_controller.is_none() && collect_opts.prefix_plan.is_none() {
            collect_opts.prefix_plan =
                approach_plan(&pilot, inputs, &gain_cert, &sizing, &collect_opts.x0, opts);
        }
        if collect_opts.prefix_gain.is_none() {
            let (a_ls, b_ls) = consistency::least_squares_model(&pilot)?;
            collect_opts.prefix_gain =
                synthesis::dare_gain(&a_ls, &b_ls, &inputs.q, &inputs.r).ok();
        }

        let (traj, cert) = coverage::collect_data(
            plant,
            &gain_cert.gain,
            &sizing.v_poly,
            inputs.horizon,
            &collect_opts,
            rng,
        )?;
        match design_from_data(&traj, inputs, Some(&gain_cert.gain), Some(&sizing.v_poly)) {
            Ok(artifacts) => return Ok((traj, cert, artifacts)),
            Err(Error::SdpInfeasible(_)) => {
                // Gain no longer certifies on the final model set: re-solve
                // on that set and collect again with the new gain.
                let gamma = certified_gamma(&traj, &inputs.w_set)?;
                let mut set = consistency::full_set(&traj, &inputs.w_set, gamma)?;
                set.enumerate()?;
                gain_cert = solve_gain_sdp(set.vertices()?, &SdpOptions::default())?;
                sizing = pilot_sizing(&traj, inputs, &gain_cert, gamma, opts)?;
                last_err = Some(Error::SdpInfeasible("re-certification retry".into()));
            }
            Err(Error::TerminalDesignInfeasible) => {
                sizing.v_poly = sizing.v_poly.scale(0.6).map_err(Error::Geometry)?;
                last_err = Some(Error::TerminalDesignInfeasible);
            }
            Err(other) => return Err(other),
        }
    }
    Err(last_err.unwrap_or(Error::TerminalDesignInfeasible))
}

/// Pilot-derived quantities steering the collection.
struct PilotSizing {
    v_poly: Polytope,
    input_tight: Polytope,
    state_tight: Polytope,
    anchor: Polytope,
    terminal: Polytope,
    p_l: DMatrix<f64>,
}

fn pilot_sizing(
    traj: &Trajectory,
    inputs: &DesignInputs,
    gain_cert: &GainCertificate,
    gamma: f64,
    opts: &PrepareOptions,
) -> Result<PilotSizing> {
    let mut set = consistency::full_set(traj, &inputs.w_set, gamma)?;
    set.enumerate()?;
    let family = consistency::closed_loop_family(&set, &gain_cert.gain)?;
    let disturbance = synthesis::error_disturbance(&inputs.w_set, gamma, inputs.theta)?;
    let (error_rpi, _) = rpi_synthesis(&family.a_k, &disturbance, inputs.eps_outer)?;
    let error_rpi = error_rpi
        .scale(inputs.anchor_inflate.max(1.0))
        .map_err(Error::Geometry)?;
    let tube = tighten(
        &inputs.x_set,
        &inputs.u_set,
        &inputs.w_set,
        gamma,
        &error_rpi,
        &family,
        inputs.theta,
    )?;
    let weight = terminal_weight(
        &gain_cert.p,
        gain_cert.beta,
        &gain_cert.gain,
        &inputs.q,
        &inputs.r,
    )?;
    let base = deviation_base(&inputs.u_set, &gain_cert.gain, &inputs.x_set)?;
    let design = terminal_set(
        &tube,
        &family,
        &inputs.w_set,
        gamma,
        &weight,
        &base,
        inputs.eps_outer,
    )?;
    Ok(PilotSizing {
        v_poly: base
            .scale(design.v_scale * opts.v_safety)
            .map_err(Error::Geometry)?,
        input_tight: tube.input_tight.clone(),
        state_tight: tube.state_tight.clone(),
        anchor: error_rpi,
        terminal: design.z_f.clone(),
        p_l: weight.p_l,
    })
}

/// Tube approach plan for the prefix, solved once from `x0` on the pilot's
/// least-squares model inside margin-scaled pilot sets: executing its
/// feedforward under the collection gain keeps the opening window an
/// admissible plan from the operating point. `None` when no plan exists
/// (the prefix then falls back to the clamped approach gain).
fn approach_plan(
    pilot: &Trajectory,
    inputs: &DesignInputs,
    gain_cert: &GainCertificate,
    sizing: &PilotSizing,
    x0: &DVector<f64>,
    opts: &PrepareOptions,
) -> Option<Vec<DVector<f64>>> {
    let (a_ls, b_ls) = consistency::least_squares_model(pilot).ok()?;
    let problem = crate::controller::BaselineProblem {
        a: a_ls,
        b: b_ls,
        gain: gain_cert.gain.clone(),
        q: inputs.q.clone(),
        r: inputs.r.clone(),
        p_l: sizing.p_l.clone(),
        // Margins: the realized prefix drifts from the nominal plan by the
        // tube radius, and the recorded inputs must stay plan-admissible.
        anchor: sizing.anchor.scale(opts.approach_anchor.max(1e-6)).ok()?,
        state_tight: sizing.state_tight.scale(opts.approach_state).ok()?,
        input_tight: sizing.input_tight.scale(opts.approach_input).ok()?,
        terminal: sizing.terminal.scale(opts.approach_terminal).ok()?,
        horizon: inputs.horizon,
        solver_tol: inputs.solver_tol,
    };
    let qp = crate::controller::assemble_baseline(&problem).ok()?;
    let sol = crate::controller::solve_baseline(&problem, &qp, x0).ok()?;
    Some(sol.v)
}

fn run_pilot(
    plant: &mut dyn PlantOracle,
    inputs: &DesignInputs,
    opts: &PrepareOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let n = plant.state_dim();
    let m = plant.input_dim();
    let len = opts.pilot_len.max(2 * (n + m));
    let neg = inputs.u_set.neg().map_err(Error::Geometry)?;
    let sym_u = inputs.u_set.intersect(&neg).map_err(Error::Geometry)?;
    let amps: Vec<f64> = (0..m)
        .map(|j| {
            let mut d = DVector::zeros(m);
            d[j] = 1.0;
            sym_u.support(&d).map(|s| s * opts.pilot_input_scale).unwrap_or(0.1)
        })
        .collect();
    let mut u = DMatrix::<f64>::zeros(m, len);
    let mut xh = DMatrix::<f64>::zeros(n, len);
    let mut meas = plant.reset(&DVector::zeros(n));
    for i in 0..len {
        xh.column_mut(i).copy_from(&meas);
        let ui = DVector::from_iterator(
            m,
            (0..m).map(|j| if rng.random_range(0..2) == 0 { -amps[j] } else { amps[j] }),
        );
        u.column_mut(i).copy_from(&ui);
        meas = plant.step(&ui);
    }
    Trajectory::new(u, xh)
}


/// Margin summary of the load-bearing invariance conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertifiedMargins {
    pub error_rpi: f64,
    pub terminal_minimal: f64,
    pub terminal_state: f64,
    pub terminal_input: f64,
    pub terminal_invariance: f64,
}

/// Re-verify the invariance containments of a finished design.
pub fn verify_margins(art: &DesignArtifacts, family: &ClosedLoopFamily) -> Result<CertifiedMargins> {
    let image = family
        .a_k
        .robust_image(&art.tube.error_rpi)
        .map_err(Error::Geometry)?
        .minkowski_sum(&art.tube.disturbance)
        .map_err(Error::Geometry)?;
    let (_, error_rpi) = art.tube.error_rpi.contains_poly(&image).map_err(Error::Geometry)?;
    Ok(CertifiedMargins {
        error_rpi,
        terminal_minimal: art.terminal.margins.minimal_set,
        terminal_state: art.terminal.margins.state,
        terminal_input: art.terminal.margins.input,
        terminal_invariance: art.terminal.margins.invariance,
    })
}

/// Rebuild the enumerated closed-loop family for a dataset and design.
pub fn family_for(art: &DesignArtifacts, traj: &Trajectory) -> Result<ClosedLoopFamily> {
    let mut set = consistency::full_set(traj, &art.inputs.w_set, art.gamma_star)?;
    set.enumerate()?;
    consistency::closed_loop_family(&set, &art.gain_cert.gain)
}

// ---------------------------------------------------------------------------
// Serialization: one JSON document holding every artifact.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactsJson {
    pub gain: Vec<Vec<f64>>,
    pub p_quad: Vec<Vec<f64>>,
    pub beta: f64,
    pub residual_eigs: Vec<f64>,
    pub gamma_star: f64,
    pub theta: f64,
    pub horizon: usize,
    pub data_len: usize,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub p_l: Vec<Vec<f64>>,
    pub c_p: f64,
    pub lambda: f64,
    pub eta: f64,
    pub eps_outer: f64,
    pub solver_tol: f64,
    pub anchor_inflate: f64,
    pub v_scale: f64,
    pub sets: ArtifactSets,
    pub iss: IssJson,
    pub tail: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactSets {
    pub x: PolytopeJson,
    pub u: PolytopeJson,
    pub w: PolytopeJson,
    pub error_rpi: PolytopeJson,
    pub noise_tube: PolytopeJson,
    pub online_tube: PolytopeJson,
    pub offline_tube: PolytopeJson,
    pub disturbance: PolytopeJson,
    pub state_tight: PolytopeJson,
    pub input_tight: PolytopeJson,
    pub terminal: PolytopeJson,
    pub v_poly: PolytopeJson,
    pub omega: PolytopeJson,
    pub bv: PolytopeJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IssJson {
    pub beta_h: f64,
    pub c_delta: f64,
    pub c_v: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub eta: f64,
    pub underline_alpha_v: f64,
    pub overline_alpha_v: f64,
    pub alpha1_coeff: f64,
    pub alpha2_coeff: f64,
    pub eps: f64,
}

fn mat_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn rows_mat(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Format("empty matrix".into()));
    }
    let cols = rows[0].len();
    let mut flat = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        if r.len() != cols {
            return Err(Error::Format("ragged matrix".into()));
        }
        flat.extend_from_slice(r);
    }
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

impl DesignArtifacts {
    pub fn to_json(&self) -> ArtifactsJson {
        ArtifactsJson {
            gain: mat_rows(&self.gain_cert.gain),
            p_quad: mat_rows(&self.gain_cert.p),
            beta: self.gain_cert.beta,
            residual_eigs: self.gain_cert.residual_eigs.clone(),
            gamma_star: self.gamma_star,
            theta: self.inputs.theta,
            horizon: self.inputs.horizon,
            data_len: self.data_len,
            q: mat_rows(&self.inputs.q),
            r: mat_rows(&self.inputs.r),
            p_l: mat_rows(&self.terminal.weight.p_l),
            c_p: self.terminal.weight.c_p,
            lambda: self.terminal.weight.lambda,
            eta: self.terminal.weight.eta,
            eps_outer: self.inputs.eps_outer,
            solver_tol: self.inputs.solver_tol,
            anchor_inflate: self.inputs.anchor_inflate,
            v_scale: self.terminal.v_scale,
            sets: ArtifactSets {
                x: (&self.inputs.x_set).into(),
                u: (&self.inputs.u_set).into(),
                w: (&self.inputs.w_set).into(),
                error_rpi: (&self.tube.error_rpi).into(),
                noise_tube: (&self.tube.noise_tube).into(),
                online_tube: (&self.tube.online_tube).into(),
                offline_tube: (&self.tube.offline_tube).into(),
                disturbance: (&self.tube.disturbance).into(),
                state_tight: (&self.tube.state_tight).into(),
                input_tight: (&self.tube.input_tight).into(),
                terminal: (&self.terminal.z_f).into(),
                v_poly: (&self.terminal.v_poly).into(),
                omega: (&self.terminal.omega).into(),
                bv: (&self.terminal.bv).into(),
            },
            iss: IssJson {
                beta_h: self.iss.beta_h,
                c_delta: self.iss.c_delta,
                c_v: self.iss.c_v,
                kappa: self.iss.kappa,
                alpha: self.iss.alpha,
                lambda: self.iss.lambda,
                eta: self.iss.eta,
                underline_alpha_v: self.iss.underline_alpha_v,
                overline_alpha_v: self.iss.overline_alpha_v,
                alpha1_coeff: self.iss.alpha1_coeff,
                alpha2_coeff: self.iss.alpha2_coeff,
                eps: self.iss.eps,
            },
            tail: self.tail.g.iter().copied().collect(),
        }
    }

    pub fn from_json(j: &ArtifactsJson) -> Result<Self> {
        let gain = rows_mat(&j.gain)?;
        let p = rows_mat(&j.p_quad)?;
        let to_poly = |pj: &PolytopeJson| pj.to_polytope().map_err(Error::Geometry);
        let inputs = DesignInputs {
            x_set: to_poly(&j.sets.x)?,
            u_set: to_poly(&j.sets.u)?,
            w_set: to_poly(&j.sets.w)?,
            q: rows_mat(&j.q)?,
            r: rows_mat(&j.r)?,
            horizon: j.horizon,
            theta: j.theta,
            eps_outer: j.eps_outer,
            solver_tol: j.solver_tol,
            anchor_inflate: j.anchor_inflate,
        };
        let tube = TubeDesign {
            error_rpi: to_poly(&j.sets.error_rpi)?,
            noise_tube: to_poly(&j.sets.noise_tube)?,
            online_tube: to_poly(&j.sets.online_tube)?,
            offline_tube: to_poly(&j.sets.offline_tube)?,
            disturbance: to_poly(&j.sets.disturbance)?,
            state_tight: to_poly(&j.sets.state_tight)?,
            input_tight: to_poly(&j.sets.input_tight)?,
            theta: j.theta,
        };
        let terminal = TerminalDesign {
            weight: synthesis::TerminalWeight {
                p_l: rows_mat(&j.p_l)?,
                lambda: j.lambda,
                c_p: j.c_p,
                eta: j.eta,
            },
            z_f: to_poly(&j.sets.terminal)?,
            v_poly: to_poly(&j.sets.v_poly)?,
            v_scale: j.v_scale,
            omega: to_poly(&j.sets.omega)?,
            bv: to_poly(&j.sets.bv)?,
            margins: synthesis::TerminalMargins {
                minimal_set: 0.0,
                state: 0.0,
                input: 0.0,
                invariance: 0.0,
            },
        };
        let iss = IssCertificate {
            beta_h: j.iss.beta_h,
            c_delta: j.iss.c_delta,
            c_v: j.iss.c_v,
            kappa: j.iss.kappa,
            alpha: j.iss.alpha,
            lambda: j.iss.lambda,
            eta: j.iss.eta,
            underline_alpha_v: j.iss.underline_alpha_v,
            overline_alpha_v: j.iss.overline_alpha_v,
            alpha1_coeff: j.iss.alpha1_coeff,
            alpha2_coeff: j.iss.alpha2_coeff,
            eps: j.iss.eps,
        };
        Ok(DesignArtifacts {
            gain_cert: GainCertificate {
                gain,
                p,
                beta: j.beta,
                residual_eigs: j.residual_eigs.clone(),
            },
            gamma_star: j.gamma_star,
            tube,
            terminal,
            iss,
            tail: SimplexCoefficient::new(DVector::from_vec(j.tail.clone()), 1.0)
                .map_err(|e| Error::Format(format!("bad tail certificate: {e}")))?,
            inputs,
            data_len: j.data_len,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deviation_base_falls_back_when_margin_empty() {
        let u = Polytope::interval(-1.0, 1.0).unwrap();
        let x = Polytope::box_centered(&[2.0]).unwrap();
        let k = DMatrix::from_row_slice(1, 1, &[-2.2]); // K X = ±4.4 swallows U
        let v = deviation_base(&u, &k, &x).unwrap();
        let one = DVector::from_row_slice(&[1.0]);
        assert!((v.support(&one).unwrap() - 1.0).abs() < 1e-9);
    }
}
