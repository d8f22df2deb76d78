//! End-to-end checks on the two-state flight-vehicle benchmark.

use nalgebra::{DMatrix, DVector};
use trddpc::coverage::{CollectLengths, CollectOptions};
use trddpc::simulation::{
    audit_theorems, baseline_synthesize, baseline_tube_mpc, prepare_scenario, run_closed_loop,
    NoiseMode, Scenario,
};
use trddpc::synthesis::spectral_radius;
use trddpc_geometry::Polytope;

pub fn flight_scenario(noise: f64) -> Scenario {
    Scenario {
        a_star: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        b_star: DMatrix::from_row_slice(2, 1, &[0.5, 1.0]),
        x_set: Polytope::box_centered(&[2.0, 2.0]).unwrap(),
        u_set: Polytope::box_centered(&[1.0]).unwrap(),
        w_set: Polytope::box_centered(&[noise, noise]).unwrap(),
        q: DMatrix::identity(2, 2),
        r: DMatrix::from_row_slice(1, 1, &[0.1]),
        horizon: 6,
        steps: 10,
        x0: DVector::from_row_slice(&[-1.0, -1.0]),
        theta: 1.0,
        eps_outer: 1e-3,
        solver_tol: 1e-8,
        noise_mode: NoiseMode::UniformBox,
        collect: CollectOptions::new(
            CollectLengths { t_loc: 40, t_pre2: 148 },
            DVector::from_row_slice(&[-1.0, -1.0]),
        ),
        pilot_len: 30,
        pilot_input_scale: 0.3,
        v_safety: 0.9,
        approach_margins: (0.9, 0.95, 0.98, 0.9),
        anchor_inflate: 1.0,
    }
}

#[test]
fn flight_pipeline_runs_and_audits() {
    let scenario = flight_scenario(1e-2);
    let prepared = prepare_scenario(&scenario, 0).expect("preparation");
    let art = &prepared.artifacts;
    println!(
        "T={} gain {:?} gamma* {:.4} E r {:.4} Z r {:.4} U^ r {:.4} Zf r {:.4}",
        prepared.trajectory.len(),
        art.gain_cert.gain.as_slice(),
        art.gamma_star,
        art.tube.error_rpi.radius().unwrap(),
        art.tube.state_tight.radius().unwrap(),
        art.tube.input_tight.radius().unwrap(),
        art.terminal.z_f.radius().unwrap(),
    );
    assert!(art.gamma_star >= 2.0 - 1e-6, "gamma* {}", art.gamma_star);

    let a_cl = &scenario.a_star + &scenario.b_star * &art.gain_cert.gain;
    assert!(spectral_radius(&a_cl) < 1.0);

    let rec = run_closed_loop(&scenario, art, &prepared.trajectory, 42).expect("run");
    println!("cost {:.6}", rec.stage_cost_sum);
    let audit = audit_theorems(&rec, art);
    println!("audit: {audit:?}");
    assert!(audit.all_ok(), "{audit:?}");
}

#[test]
fn flight_baseline_gap_small() {
    let scenario = flight_scenario(1e-2);
    let prepared = prepare_scenario(&scenario, 0).expect("preparation");
    let base = baseline_synthesize(&scenario, &prepared.artifacts).expect("baseline");
    let mut worst_gap = f64::MIN;
    for seed in 0..5 {
        let ours = run_closed_loop(&scenario, &prepared.artifacts, &prepared.trajectory, seed)
            .expect("run");
        let theirs = baseline_tube_mpc(&scenario, &base, seed).expect("baseline run");
        let gap = (ours.stage_cost_sum - theirs.stage_cost_sum) / theirs.stage_cost_sum;
        worst_gap = worst_gap.max(gap);
        println!(
            "seed {seed}: ours {:.6} baseline {:.6} gap {:.3}%",
            ours.stage_cost_sum,
            theirs.stage_cost_sum,
            100.0 * gap
        );
    }
    assert!(worst_gap < 0.02, "worst gap {:.3}%", 100.0 * worst_gap);
}
