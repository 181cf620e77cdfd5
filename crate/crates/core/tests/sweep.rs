//! Sweep-level behaviour on the taboo-island fixture.

use timpath_core::harness::sweep::{run_sweep, SweepConfig, SweepEntry};
use timpath_core::{fixtures, EvalSettings, ObjectiveConfig};

#[test]
fn all_zero_weights_rarely_converge() {
    // With every weight at zero the loss is constant, so nothing steers the
    // search away from taboo zones or voids.
    let zero = ObjectiveConfig {
        w_comp_cool: 0.0,
        w_comp_over: 0.0,
        w_comp_tab: 0.0,
        w_init_over: 0.0,
        w_void_bin: 0.0,
        w_void_area: 0.0,
        ..ObjectiveConfig::default()
    };
    let sweep = SweepConfig {
        configs: vec![SweepEntry { label: None, config: zero }],
        runs_per_config: 20,
        segments: [5, 10],
        iterations: 10,
        seed: 3,
        stall_iterations: None,
        eval: EvalSettings::default(),
    };
    let rows = run_sweep(&fixtures::taboo_islands(), &sweep, 1, None, false, &|_, _| {}).unwrap();
    let r = &rows[0];
    assert_eq!(r.runs, 20);
    assert!(r.convergence_ratio <= 0.15, "convergence ratio {}", r.convergence_ratio);
}
