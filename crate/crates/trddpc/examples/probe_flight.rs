// temporary probe: flight coverage rate + gap across splits/seeds
use nalgebra::{DMatrix, DVector};
use trddpc::coverage::{CollectLengths, CollectOptions};
use trddpc::simulation::*;
use trddpc_geometry::Polytope;

fn scenario(t_loc: usize, t_pre2: usize, retry: usize) -> Scenario {
    let mut collect = CollectOptions::new(
        CollectLengths { t_loc, t_pre2 },
        DVector::from_row_slice(&[-1.0, -1.0]),
    );
    collect.prefix_dither = 0.8;
    collect.retry_cap = retry;
    collect.max_growth = 1.0;
    Scenario {
        a_star: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        b_star: DMatrix::from_row_slice(2, 1, &[0.5, 1.0]),
        x_set: Polytope::box_centered(&[2.0, 2.0]).unwrap(),
        u_set: Polytope::box_centered(&[1.0]).unwrap(),
        w_set: Polytope::box_centered(&[1e-2, 1e-2]).unwrap(),
        q: DMatrix::identity(2, 2),
        r: DMatrix::from_row_slice(1, 1, &[0.1]),
        horizon: 6,
        steps: 10,
        x0: DVector::from_row_slice(&[-1.0, -1.0]),
        theta: 1.0,
        eps_outer: 1e-3,
        solver_tol: 1e-8,
        noise_mode: NoiseMode::UniformBox,
        collect,
        pilot_len: 30,
        pilot_input_scale: 0.3,
        v_safety: 1.0,
        approach_margins: (0.9, 0.97, 0.99, 0.9),
        anchor_inflate: 1.0,
    }
}

fn main() {
    for (t_loc, t_pre2) in [(40usize, 148usize), (24, 164), (40, 348), (40, 548)] {
        let mut pass = 0;
        let mut tried = 0;
        let mut gaps: Vec<(u64, f64)> = Vec::new();
        for seed in 0..24u64 {
            let s = scenario(t_loc, t_pre2, 1);
            tried += 1;
            let Ok(prep) = prepare_scenario(&s, seed) else { continue };
            pass += 1;
            let Ok(base) = baseline_synthesize(&s, &prep.artifacts) else { continue };
            let mut worst: f64 = f64::MIN;
            let mut ok = true;
            for rs in 0..5u64 {
                match run_closed_loop(&s, &prep.artifacts, &prep.trajectory, rs) {
                    Ok(ours) => {
                        let theirs = baseline_tube_mpc(&s, &base, rs).unwrap();
                        worst = worst
                            .max((ours.stage_cost_sum - theirs.stage_cost_sum) / theirs.stage_cost_sum);
                        ok &= audit_theorems(&ours, &prep.artifacts).all_ok();
                    }
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                gaps.push((seed, worst));
            }
        }
        let shown: Vec<String> = gaps.iter().map(|(s, g)| format!("{s}:{:.2}%", 100.0 * g)).collect();
        println!("t_loc={t_loc} t_pre2={t_pre2} (T={}): coverage {pass}/{tried}; gaps {shown:?}",
                 6 + t_loc + t_pre2 + 6);
    }
}
