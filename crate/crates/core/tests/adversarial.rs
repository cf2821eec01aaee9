mod common;

use stpa_plus::controller::Strategy;

#[test]
fn naive_baseline_violates_where_the_pipeline_does_not() {
    for name in common::ADVERSARIAL {
        let cfg = common::config(name);
        let seed = cfg.run.seed;
        let stpa = common::run(&cfg, seed);
        assert_eq!(stpa.pc_violations(), 0, "{name}: pipeline");

        let mut naive_cfg = cfg.clone();
        naive_cfg.controller.strategy = Strategy::Naive;
        let naive = common::run(&naive_cfg, seed);
        assert!(naive.pc_violations() >= 1, "{name}: baseline stayed clean");
        assert!(naive.emitted().is_empty(), "{name}: baseline logs no scenarios");
    }
}
