//! Closed-loop harness with ground-truth plant, seeded noise, invariant
//! auditing, the model-based tube comparator, and the admissible-noise
//! search.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use trddpc_geometry::{gauge_norm, Polytope};

use crate::controller::{
    assemble_baseline, control_input, shift_candidate, solve_baseline, solve_ocp,
    BaselineProblem, CandidateReport, SlackReport,
};
use crate::coverage::{CollectOptions, PlantOracle};
use crate::data::Trajectory;
use crate::error::{Error, Result};
use crate::pipeline::{prepare, DesignArtifacts, DesignInputs, PrepareOptions};
use crate::synthesis::{max_invariant_set, rpi_synthesis, spectral_radius};

/// How measurement noise is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseMode {
    Zero,
    UniformBox,
    UniformVertices,
    WorstCaseVertex,
}

use serde::{Deserialize, Serialize};

/// Scenario description: harness-side truth plus design knobs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub a_star: DMatrix<f64>,
    pub b_star: DMatrix<f64>,
    pub x_set: Polytope,
    pub u_set: Polytope,
    pub w_set: Polytope,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub horizon: usize,
    pub steps: usize,
    pub x0: DVector<f64>,
    pub theta: f64,
    pub eps_outer: f64,
    pub solver_tol: f64,
    pub noise_mode: NoiseMode,
    pub collect: CollectOptions,
    pub pilot_len: usize,
    pub pilot_input_scale: f64,
    pub v_safety: f64,
    /// Approach-plan margins (anchor, input, state, terminal) relative to
    /// the pilot-tightened sets.
    pub approach_margins: (f64, f64, f64, f64),
    /// Scale on the minimal certified error tube.
    pub anchor_inflate: f64,
}

impl Scenario {
    pub fn state_dim(&self) -> usize {
        self.a_star.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b_star.ncols()
    }

    pub fn design_inputs(&self) -> DesignInputs {
        DesignInputs {
            x_set: self.x_set.clone(),
            u_set: self.u_set.clone(),
            w_set: self.w_set.clone(),
            q: self.q.clone(),
            r: self.r.clone(),
            horizon: self.horizon,
            theta: self.theta,
            eps_outer: self.eps_outer,
            solver_tol: self.solver_tol,
            anchor_inflate: self.anchor_inflate,
        }
    }

    pub fn prepare_options(&self) -> PrepareOptions {
        PrepareOptions {
            collect: self.collect.clone(),
            pilot_len: self.pilot_len,
            pilot_input_scale: self.pilot_input_scale,
            v_safety: self.v_safety,
            design_retries: 5,
            approach_anchor: self.approach_margins.0,
            approach_input: self.approach_margins.1,
            approach_state: self.approach_margins.2,
            approach_terminal: self.approach_margins.3,
        }
    }

    /// Copy with the noise set (and collection noise) scaled by `s`.
    pub fn with_noise_scale(&self, s: f64) -> Result<Scenario> {
        let mut out = self.clone();
        out.w_set = self.w_set.scale(s).map_err(Error::Geometry)?;
        Ok(out)
    }

    /// Controllability of the harness truth (rank of the reachability
    /// matrix) and initial-state admissibility.
    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        let m = self.input_dim();
        let mut reach = DMatrix::<f64>::zeros(n, n * m);
        let mut power = DMatrix::<f64>::identity(n, n);
        for k in 0..n {
            let block = &power * &self.b_star;
            reach.view_mut((0, k * m), (n, m)).copy_from(&block);
            power = &self.a_star * power;
        }
        let svd = reach.svd(false, false);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|&&s| s > 1e-10 * smax.max(1.0))
            .count();
        if rank < n {
            return Err(Error::AssumptionViolated(format!(
                "harness pair not controllable (rank {rank} < {n})"
            )));
        }
        let (inside, _) = self.x_set.contains_point(&self.x0).map_err(Error::Geometry)?;
        if !inside {
            return Err(Error::AssumptionViolated("x0 outside the state set".into()));
        }
        Ok(())
    }
}

/// Seeded noise sampler over the bounded set; unit draws are scale
/// invariant so scaling `W` scales the realization pointwise.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    mode: NoiseMode,
    w_set: Polytope,
    box_half: Option<Vec<f64>>,
    rng: ChaCha8Rng,
}

impl NoiseSampler {
    pub fn new(w_set: &Polytope, mode: NoiseMode, seed: u64) -> Result<Self> {
        let zero = !w_set.origin_interior();
        let mode = if zero { NoiseMode::Zero } else { mode };
        let box_half = axis_box_halfwidths(w_set);
        Ok(Self {
            mode,
            w_set: w_set.clone(),
            box_half,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Draw the next noise vector; the state steers the adversarial mode.
    pub fn sample(&mut self, state: &DVector<f64>) -> DVector<f64> {
        let n = self.w_set.dim();
        match self.mode {
            NoiseMode::Zero => DVector::zeros(n),
            NoiseMode::UniformBox => {
                if let Some(half) = &self.box_half {
                    DVector::from_iterator(
                        n,
                        half.iter().map(|&h| self.rng.random_range(-1.0..1.0) * h),
                    )
                } else {
                    // Rejection sampling inside the coordinate bounding box.
                    let verts = self.w_set.vertices().expect("noise set vertices");
                    let hi: Vec<f64> = (0..n)
                        .map(|j| verts.iter().map(|v| v[j]).fold(f64::MIN, f64::max))
                        .collect();
                    let lo: Vec<f64> = (0..n)
                        .map(|j| verts.iter().map(|v| v[j]).fold(f64::MAX, f64::min))
                        .collect();
                    for _ in 0..1000 {
                        let cand = DVector::from_iterator(
                            n,
                            (0..n).map(|j| {
                                lo[j] + self.rng.random_range(0.0..1.0) * (hi[j] - lo[j])
                            }),
                        );
                        if self.w_set.contains_point(&cand).map(|(ok, _)| ok).unwrap_or(false) {
                            return cand;
                        }
                    }
                    DVector::zeros(n)
                }
            }
            NoiseMode::UniformVertices => {
                let verts = self.w_set.vertices().expect("noise set vertices");
                verts[self.rng.random_range(0..verts.len())].clone()
            }
            NoiseMode::WorstCaseVertex => {
                // Push the measurement outward along the current state.
                let verts = self.w_set.vertices().expect("noise set vertices");
                let mut best = verts[0].clone();
                let mut score = f64::MIN;
                for v in verts {
                    let s = v.dot(state);
                    if s > score {
                        score = s;
                        best = v.clone();
                    }
                }
                best
            }
        }
    }
}

fn axis_box_halfwidths(w: &Polytope) -> Option<Vec<f64>> {
    let (g, h) = w.facets();
    let n = w.dim();
    if g.nrows() != 2 * n {
        return None;
    }
    let mut half = vec![f64::NAN; n];
    for i in 0..g.nrows() {
        let row = g.row(i);
        let mut nz = None;
        for j in 0..n {
            if row[j].abs() > 1e-12 {
                if nz.is_some() {
                    return None;
                }
                nz = Some(j);
            }
        }
        let j = nz?;
        if (row[j].abs() - 1.0).abs() > 1e-9 {
            return None;
        }
        if half[j].is_nan() {
            half[j] = h[i];
        } else if (half[j] - h[i]).abs() > 1e-12 {
            return None; // asymmetric box: sample by rejection instead
        }
    }
    if half.iter().any(|v| v.is_nan()) {
        None
    } else {
        Some(half)
    }
}

/// Harness-side true plant with internal noise stream.
pub struct TruePlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    x: DVector<f64>,
    sampler: NoiseSampler,
}

impl TruePlant {
    pub fn new(scenario: &Scenario, seed: u64) -> Result<Self> {
        Ok(Self {
            a: scenario.a_star.clone(),
            b: scenario.b_star.clone(),
            x: DVector::zeros(scenario.state_dim()),
            sampler: NoiseSampler::new(&scenario.w_set, scenario.noise_mode, seed)?,
        })
    }

    pub fn true_state(&self) -> &DVector<f64> {
        &self.x
    }
}

impl PlantOracle for TruePlant {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn reset(&mut self, x0: &DVector<f64>) -> DVector<f64> {
        self.x = x0.clone();
        &self.x + self.sampler.sample(&self.x)
    }

    fn step(&mut self, u: &DVector<f64>) -> DVector<f64> {
        self.x = &self.a * &self.x + &self.b * u;
        &self.x + self.sampler.sample(&self.x)
    }
}

/// Per-step log entry.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub k: usize,
    pub x_true: DVector<f64>,
    pub noise: DVector<f64>,
    pub x_meas: DVector<f64>,
    pub u: DVector<f64>,
    pub z_plan: Vec<DVector<f64>>,
    pub v_plan: Vec<DVector<f64>>,
    pub objective: f64,
    pub slack: SlackReport,
    pub solve_seconds: f64,
    /// Shift-candidate report checked against this step's measurement
    /// (absent at step 0).
    pub candidate: Option<(CandidateReport, f64)>,
}

/// Closed-loop log with aggregates.
#[derive(Debug, Clone)]
pub struct SimulationRecord {
    pub steps: Vec<StepRecord>,
    pub stage_cost_sum: f64,
    pub input_violations: usize,
    pub state_violations: usize,
    pub worst_input_slack: f64,
    pub worst_state_slack: f64,
    pub infeasible_at: Option<usize>,
    /// Anchoring margins of the step-0 plan against a fixed-plan rollout.
    pub plan_rollout_margins: Vec<f64>,
    pub seed: u64,
}

impl SimulationRecord {
    /// Mean state norm over the last quarter of the run (at least 3 steps).
    pub fn terminal_window_mean(&self) -> f64 {
        let n = self.steps.len();
        let window = (n / 4).max(3).min(n);
        let tail = &self.steps[n - window..];
        tail.iter().map(|s| s.x_true.norm()).sum::<f64>() / window as f64
    }
}

const SLACK_TOL: f64 = 1e-9;

/// Run the receding-horizon loop for `steps` steps from the scenario's
/// initial state, recording plans, margins and candidate audits.
pub fn run_closed_loop(
    scenario: &Scenario,
    artifacts: &DesignArtifacts,
    traj: &Trajectory,
    seed: u64,
) -> Result<SimulationRecord> {
    let (problem, qp) = artifacts.controller(traj)?;
    let mut sampler = NoiseSampler::new(&scenario.w_set, scenario.noise_mode, seed)?;
    let mut rollout_sampler =
        NoiseSampler::new(&scenario.w_set, scenario.noise_mode, seed ^ 0x9e3779b97f4a7c15)?;

    let mut x = scenario.x0.clone();
    let mut w = sampler.sample(&x);
    let mut x_meas = &x + &w;
    let mut steps: Vec<StepRecord> = Vec::with_capacity(scenario.steps);
    let mut stage_cost_sum = 0.0;
    let mut input_violations = 0;
    let mut state_violations = 0;
    let mut worst_input_slack = f64::INFINITY;
    let mut worst_state_slack = f64::INFINITY;
    let mut plan_rollout_margins = Vec::new();
    let mut prev_solution: Option<crate::controller::OcpSolution> = None;

    for k in 0..scenario.steps {
        // Candidate built from the previous optimum, audited at the new
        // measurement before re-optimizing.
        let candidate = match &prev_solution {
            Some(sol) => {
                let cand = shift_candidate(
                    &problem,
                    sol,
                    &artifacts.tail,
                    &x_meas,
                    &artifacts.terminal.v_poly,
                )?;
                Some((cand.report, cand.cost))
            }
            None => None,
        };

        let t0 = Instant::now();
        let sol = match solve_ocp(&problem, &qp, &x_meas) {
            Ok(sol) => sol,
            Err(Error::OcpInfeasible) => {
                return if k == 0 {
                    Err(Error::OcpInfeasible)
                } else {
                    Err(Error::StepInfeasible { step: k })
                };
            }
            Err(e) => return Err(e),
        };
        let solve_seconds = t0.elapsed().as_secs_f64();
        let u = control_input(&sol, &artifacts.gain_cert.gain, &x_meas);

        // Step-0 plan-conditioned rollout: hold the plan fixed, roll the
        // plant with fresh noise, and track the anchoring error.
        if k == 0 {
            let mut xr = x.clone();
            let mut wr = w.clone();
            for (l, z_l) in sol.z.iter().enumerate() {
                let meas = &xr + &wr;
                let (_, margin) = artifacts
                    .tube
                    .error_rpi
                    .contains_point(&(z_l - &meas))
                    .map_err(Error::Geometry)?;
                plan_rollout_margins.push(margin);
                if l < sol.v.len() {
                    let ur = &sol.v[l] + &artifacts.gain_cert.gain * &meas;
                    xr = &scenario.a_star * &xr + &scenario.b_star * &ur;
                    wr = rollout_sampler.sample(&xr);
                }
            }
        }

        stage_cost_sum += (x.transpose() * &scenario.q * &x)[(0, 0)]
            + (u.transpose() * &scenario.r * &u)[(0, 0)];
        let (u_ok, u_slack) = scenario.u_set.contains_point(&u).map_err(Error::Geometry)?;
        worst_input_slack = worst_input_slack.min(u_slack);
        if !u_ok && u_slack < -SLACK_TOL {
            input_violations += 1;
        }

        let x_next = &scenario.a_star * &x + &scenario.b_star * &u;
        let (x_ok, x_slack) = scenario.x_set.contains_point(&x_next).map_err(Error::Geometry)?;
        worst_state_slack = worst_state_slack.min(x_slack);
        if !x_ok && x_slack < -SLACK_TOL {
            state_violations += 1;
        }

        steps.push(StepRecord {
            k,
            x_true: x.clone(),
            noise: w.clone(),
            x_meas: x_meas.clone(),
            u: u.clone(),
            z_plan: sol.z.clone(),
            v_plan: sol.v.clone(),
            objective: sol.objective,
            slack: sol.slack.clone(),
            solve_seconds,
            candidate,
        });
        prev_solution = Some(sol);

        x = x_next;
        w = sampler.sample(&x);
        x_meas = &x + &w;
    }

    Ok(SimulationRecord {
        steps,
        stage_cost_sum,
        input_violations,
        state_violations,
        worst_input_slack,
        worst_state_slack,
        infeasible_at: None,
        plan_rollout_margins,
        seed,
    })
}

/// Theorem audit over a finished record.
#[derive(Debug, Clone)]
pub struct AuditReport {
    pub constraints_ok: bool,
    pub worst_input_slack: f64,
    pub worst_state_slack: f64,
    pub anchoring_ok: bool,
    pub worst_anchor_slack: f64,
    pub recursive_ok: bool,
    pub candidate_ok: bool,
    pub worst_candidate_margin: f64,
    pub candidate_cost_ok: bool,
    pub iss_decrease_ok: bool,
    pub worst_iss_residual: f64,
    pub sandwich_ok: bool,
    pub rollout_ok: bool,
}

impl AuditReport {
    pub fn all_ok(&self) -> bool {
        self.constraints_ok
            && self.anchoring_ok
            && self.recursive_ok
            && self.candidate_ok
            && self.candidate_cost_ok
            && self.iss_decrease_ok
            && self.sandwich_ok
            && self.rollout_ok
    }
}

pub fn audit_theorems(rec: &SimulationRecord, artifacts: &DesignArtifacts) -> AuditReport {
    let constraints_ok = rec.input_violations == 0
        && rec.state_violations == 0
        && rec.worst_input_slack >= -SLACK_TOL
        && rec.worst_state_slack >= -SLACK_TOL;

    let mut worst_anchor = f64::INFINITY;
    for s in &rec.steps {
        worst_anchor = worst_anchor.min(s.slack.anchor);
    }
    let anchoring_ok = worst_anchor >= -SLACK_TOL;

    let recursive_ok = rec.infeasible_at.is_none();

    let mut worst_candidate = f64::INFINITY;
    let mut candidate_ok = true;
    let mut candidate_cost_ok = true;
    for s in &rec.steps {
        if let Some((report, cost)) = &s.candidate {
            worst_candidate = worst_candidate
                .min(report.stage_state)
                .min(report.stage_input)
                .min(report.initial)
                .min(report.terminal)
                .min(report.appended_deviation);
            candidate_ok &= report.all_pass(1e-7);
            // Optimality: the re-optimized value cannot exceed the
            // candidate's cost (small solver slop allowed).
            candidate_cost_ok &= s.objective <= cost + 1e-6 * (1.0 + cost.abs());
        }
    }

    let c_xhat = artifacts.iss.c_xhat();
    let kappa = artifacts.iss.kappa;
    let mut iss_ok = true;
    let mut worst_iss = f64::NEG_INFINITY;
    for pair in rec.steps.windows(2) {
        let v_now = pair[0].objective;
        let v_next = pair[1].objective;
        let xn = pair[0].x_meas.norm_squared();
        let residual = v_next - v_now + kappa * xn - c_xhat;
        worst_iss = worst_iss.max(residual);
        iss_ok &= residual <= 1e-7 * (1.0 + v_now.abs());
    }

    let mut sandwich_ok = true;
    for s in &rec.steps {
        let xn = s.x_meas.norm_squared();
        let lower = artifacts.iss.alpha1_coeff * xn - c_xhat;
        let upper = artifacts.iss.alpha2_coeff * xn + c_xhat;
        sandwich_ok &= s.objective >= lower - 1e-7 && s.objective <= upper + 1e-7;
    }

    let rollout_ok = rec.plan_rollout_margins.iter().all(|&m| m >= -SLACK_TOL);

    AuditReport {
        constraints_ok,
        worst_input_slack: rec.worst_input_slack,
        worst_state_slack: rec.worst_state_slack,
        anchoring_ok,
        worst_anchor_slack: worst_anchor,
        recursive_ok,
        candidate_ok,
        worst_candidate_margin: worst_candidate,
        candidate_cost_ok,
        iss_decrease_ok: iss_ok,
        worst_iss_residual: worst_iss,
        sandwich_ok,
        rollout_ok,
    }
}

/// Ingredients of the model-based tube comparator.
#[derive(Debug, Clone)]
pub struct BaselineArtifacts {
    pub problem: BaselineProblem,
}

/// Classical tube controller built from the harness truth with the same
/// gain, weights and horizon; the offline-mismatch term is absent so the
/// error tube is driven by `γ̃ W ⊕ W` with `γ̃ = ||A*||_W`.
pub fn baseline_synthesize(
    scenario: &Scenario,
    artifacts: &DesignArtifacts,
) -> Result<BaselineArtifacts> {
    let gain = artifacts.gain_cert.gain.clone();
    let a_cl = &scenario.a_star + &scenario.b_star * &gain;
    if spectral_radius(&a_cl) >= 1.0 {
        return Err(Error::AssumptionViolated(
            "shared gain does not stabilize the harness truth".into(),
        ));
    }
    let gamma_tilde = if scenario.w_set.origin_interior() {
        gauge_norm(&scenario.a_star, &scenario.w_set).map_err(Error::Geometry)?
    } else {
        0.0
    };
    let d_base = scenario.w_set.scale(1.0 + gamma_tilde).map_err(Error::Geometry)?;
    let family = trddpc_geometry::MatrixPolytope::from_vertices(vec![a_cl.clone()])
        .map_err(Error::Geometry)?;
    let (e_base, _) = rpi_synthesis(&family, &d_base, scenario.eps_outer)?;

    let e_on = e_base.linear_image(&a_cl).map_err(Error::Geometry)?;
    let noise_tube = scenario.w_set.scale(gamma_tilde).map_err(Error::Geometry)?;
    let state_tight = scenario
        .x_set
        .pontryagin_diff(&e_on.minkowski_sum(&noise_tube).map_err(Error::Geometry)?)
        .map_err(Error::Geometry)?;
    let gain_tube = e_base.linear_image(&gain).map_err(Error::Geometry)?;
    let input_tight = scenario.u_set.pontryagin_diff(&gain_tube).map_err(Error::Geometry)?;
    if state_tight.is_empty() || input_tight.is_empty() {
        return Err(Error::TightenedSetEmpty {
            which: "baseline tightening".into(),
            max_scale: 0.0,
        });
    }
    let terminal = max_invariant_set(&a_cl, &gain, &state_tight, &input_tight)?;
    if terminal.is_empty() {
        return Err(Error::TerminalDesignInfeasible);
    }
    Ok(BaselineArtifacts {
        problem: BaselineProblem {
            a: scenario.a_star.clone(),
            b: scenario.b_star.clone(),
            gain,
            q: scenario.q.clone(),
            r: scenario.r.clone(),
            p_l: artifacts.terminal.weight.p_l.clone(),
            anchor: e_base,
            state_tight,
            input_tight,
            terminal,
            horizon: scenario.horizon,
            solver_tol: scenario.solver_tol,
        },
    })
}

/// Closed loop under the model-based comparator, paired noise-wise with the
/// data-driven run at the same seed.
pub fn baseline_tube_mpc(
    scenario: &Scenario,
    base: &BaselineArtifacts,
    seed: u64,
) -> Result<SimulationRecord> {
    let qp = assemble_baseline(&base.problem)?;
    let mut sampler = NoiseSampler::new(&scenario.w_set, scenario.noise_mode, seed)?;
    let mut x = scenario.x0.clone();
    let mut w = sampler.sample(&x);
    let mut x_meas = &x + &w;
    let mut steps = Vec::with_capacity(scenario.steps);
    let mut stage_cost_sum = 0.0;
    let mut input_violations = 0;
    let mut state_violations = 0;
    let mut worst_input_slack = f64::INFINITY;
    let mut worst_state_slack = f64::INFINITY;

    for k in 0..scenario.steps {
        let t0 = Instant::now();
        let sol = match solve_baseline(&base.problem, &qp, &x_meas) {
            Ok(sol) => sol,
            Err(Error::OcpInfeasible) if k > 0 => return Err(Error::StepInfeasible { step: k }),
            Err(e) => return Err(e),
        };
        let solve_seconds = t0.elapsed().as_secs_f64();
        let u = &sol.v[0] + &base.problem.gain * &x_meas;

        stage_cost_sum += (x.transpose() * &scenario.q * &x)[(0, 0)]
            + (u.transpose() * &scenario.r * &u)[(0, 0)];
        let (u_ok, u_slack) = scenario.u_set.contains_point(&u).map_err(Error::Geometry)?;
        worst_input_slack = worst_input_slack.min(u_slack);
        if !u_ok && u_slack < -SLACK_TOL {
            input_violations += 1;
        }
        let x_next = &scenario.a_star * &x + &scenario.b_star * &u;
        let (x_ok, x_slack) = scenario.x_set.contains_point(&x_next).map_err(Error::Geometry)?;
        worst_state_slack = worst_state_slack.min(x_slack);
        if !x_ok && x_slack < -SLACK_TOL {
            state_violations += 1;
        }

        steps.push(StepRecord {
            k,
            x_true: x.clone(),
            noise: w.clone(),
            x_meas: x_meas.clone(),
            u,
            z_plan: sol.z.clone(),
            v_plan: sol.v.clone(),
            objective: sol.objective,
            slack: SlackReport {
                anchor: f64::INFINITY,
                state: f64::INFINITY,
                input: f64::INFINITY,
                terminal: f64::INFINITY,
                simplex: f64::INFINITY,
                hankel_residual: 0.0,
            },
            solve_seconds,
            candidate: None,
        });

        x = x_next;
        w = sampler.sample(&x);
        x_meas = &x + &w;
    }
    Ok(SimulationRecord {
        steps,
        stage_cost_sum,
        input_violations,
        state_violations,
        worst_input_slack,
        worst_state_slack,
        infeasible_at: None,
        plan_rollout_margins: Vec::new(),
        seed,
    })
}

/// Stage outputs of a fully prepared scenario.
pub struct Prepared {
    pub trajectory: Trajectory,
    pub coverage: crate::coverage::CoverageCertificate,
    pub artifacts: DesignArtifacts,
}

/// Collect data and design for a scenario with the given master seed.
pub fn prepare_scenario(scenario: &Scenario, seed: u64) -> Result<Prepared> {
    scenario.validate()?;
    let mut plant = TruePlant::new(scenario, seed)?;
    let inputs = scenario.design_inputs();
    let opts = scenario.prepare_options();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let (trajectory, coverage, artifacts) = prepare(&mut plant, &inputs, &opts, &mut rng)?;
    Ok(Prepared { trajectory, coverage, artifacts })
}

/// Run a batch of seeded closed loops: seeds fan out over worker threads
/// against the shared immutable artifacts, results merge in seed order.
pub fn run_batch(
    scenario: &Scenario,
    prepared: &Prepared,
    seeds: &[u64],
) -> Vec<Result<SimulationRecord>> {
    let workers = std::thread::available_parallelism().map(|p| p.get()).unwrap_or(4);
    let chunk = seeds.len().div_ceil(workers.max(1)).max(1);
    let mut results: Vec<Option<Result<SimulationRecord>>> = Vec::new();
    results.resize_with(seeds.len(), || None);
    std::thread::scope(|scope| {
        for (seed_chunk, out_chunk) in seeds.chunks(chunk).zip(results.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (slot, &seed) in out_chunk.iter_mut().zip(seed_chunk) {
                    *slot =
                        Some(run_closed_loop(scenario, &prepared.artifacts, &prepared.trajectory, seed));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("all seeds run")).collect()
}

/// Options for the admissible-noise search.
#[derive(Debug, Clone)]
pub struct NoiseSearchOptions {
    pub seeds: usize,
    pub rel_width: f64,
    pub max_doublings: usize,
    pub master_seed: u64,
}

impl Default for NoiseSearchOptions {
    fn default() -> Self {
        Self { seeds: 20, rel_width: 0.01, max_doublings: 16, master_seed: 1 }
    }
}

/// Result of the admissible-noise bisection.
#[derive(Debug, Clone)]
pub struct NoiseSearchResult {
    /// Multiplier on the scenario's noise set.
    pub scale: f64,
    /// Corresponding infinity-norm bound of the scaled noise set.
    pub w_inf_bound: f64,
}

fn w_inf(w: &Polytope) -> f64 {
    let n = w.dim();
    let mut bound: f64 = 0.0;
    for j in 0..n {
        let mut d = DVector::zeros(n);
        d[j] = 1.0;
        bound = bound.max(w.support(&d).unwrap_or(0.0));
        d[j] = -1.0;
        bound = bound.max(w.support(&d).unwrap_or(0.0));
    }
    bound
}

/// Largest noise-set multiple for which the whole pipeline (collection,
/// design with its assumption checks, and a seeded run batch) succeeds.
pub fn search_max_noise(scenario: &Scenario, opts: &NoiseSearchOptions) -> Result<NoiseSearchResult> {
    let succeeds = |scale: f64| -> bool {
        let Ok(scaled) = scenario.with_noise_scale(scale) else {
            return false;
        };
        let Ok(prepared) = prepare_scenario(&scaled, opts.master_seed) else {
            return false;
        };
        let seeds: Vec<u64> = (0..opts.seeds as u64).collect();
        run_batch(&scaled, &prepared, &seeds).iter().all(|r| match r {
            Ok(rec) => {
                rec.input_violations == 0
                    && rec.state_violations == 0
                    && rec.infeasible_at.is_none()
            }
            Err(_) => false,
        })
    };

    if !succeeds(1.0) {
        return Ok(NoiseSearchResult { scale: 0.0, w_inf_bound: 0.0 });
    }
    let mut lo = 1.0f64;
    let mut hi = 2.0f64;
    let mut bracketed = false;
    for _ in 0..opts.max_doublings {
        if succeeds(hi) {
            lo = hi;
            hi *= 2.0;
        } else {
            bracketed = true;
            break;
        }
    }
    if bracketed {
        while (hi - lo) > opts.rel_width * hi {
            let mid = 0.5 * (lo + hi);
            if succeeds(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    Ok(NoiseSearchResult {
        scale: lo,
        w_inf_bound: lo * w_inf(&scenario.w_set),
    })
}
