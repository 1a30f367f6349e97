use rayon::prelude::*;
use transfer_gp::bo::{run_bo, BoConfig, Objective};
use transfer_gp::families::{default_grid_density, true_minimum, FamilyTask};
use transfer_gp::ModelKind;

#[test]
fn gpbo_reaches_low_regret_on_forrester() {
    let task = FamilyTask::Forrester { a: 1.0, b: 0.0, c: 0.0 };
    let min = true_minimum(&task, default_grid_density(1)).unwrap();
    let finals: Vec<f64> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = BoConfig::new(ModelKind::Gpbo, Objective::Family { task: task.clone(), sigma: 0.0 }, vec![], 30, seed);
            let trace = run_bo(&cfg).unwrap();
            assert!(trace.failure.is_none(), "seed {seed}: {:?}", trace.failure);
            trace.records.last().unwrap().best_so_far - min.f
        })
        .collect();
    assert!(finals.iter().all(|r| *r >= -1e-9), "{finals:?}");
    let hits = finals.iter().filter(|r| **r < 0.1).count();
    assert!(hits >= 16, "{hits}/20 seeds below 0.1: {finals:?}");
}
