//! Runs every acceptance criterion and prints one PASS/FAIL line each.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stpa_plus::behavior::{
    derive_prescriptive, horizon, validate_execution, BehaviorSpec, LinkedBehavior, PerformanceConstraint,
    TransitionPredicates,
};
use stpa_plus::config::{parse_config, PlantConfig};
use stpa_plus::controller::Strategy as ControlStrategy;
use stpa_plus::plant::Terminal;
use stpa_plus::process::{aggregate, CondValue, ValueSet};
use stpa_plus::scenario::{D1Kind, Scenario};
use stpa_plus::trace::trace_to_string;
use stpa_plus::window::{can_window, Interval, Tick, WindowSet};

type Outcome = Result<String, String>;

fn cases(n: u32) -> Config {
    // no source file to persist regressions next to outside the test harness
    Config {
        cases: n,
        failure_persistence: None,
        ..Config::default()
    }
}

const H: Tick = 64;

fn grid(s: &WindowSet) -> Vec<bool> {
    (0..H).map(|t| s.contains(t)).collect()
}

fn window_set() -> impl Strategy<Value = WindowSet> {
    prop::collection::vec((0..H, 0..H), 0..6).prop_map(|p| {
        let pairs: Vec<(Tick, Tick)> = p.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
        WindowSet::from_pairs(&pairs)
    })
}

struct Bits([Vec<bool>; 4]);

impl TransitionPredicates for Bits {
    fn start_safe_until(&self, t: Tick) -> bool {
        self.0[0][t as usize]
    }
    fn start_feasible(&self, t: Tick) -> bool {
        self.0[1][t as usize]
    }
    fn stop_safe_until(&self, t: Tick) -> bool {
        self.0[2][t as usize]
    }
    fn stop_feasible(&self, t: Tick) -> bool {
        self.0[3][t as usize]
    }
}

fn window_laws() -> Outcome {
    const CASES: u32 = 1000;
    let mut runner = TestRunner::new(cases(CASES));
    runner
        .run(&(window_set(), window_set(), window_set()), |(a, b, c)| {
            let (ga, gb, gc) = (grid(&a), grid(&b), grid(&c));
            let domain = Interval::new(0, H).unwrap();
            for t in 0..H as usize {
                prop_assert_eq!(a.union(&b).contains(t as Tick), ga[t] || gb[t]);
                prop_assert_eq!(a.intersect(&b).contains(t as Tick), ga[t] && gb[t]);
                prop_assert_eq!(a.difference(&b).contains(t as Tick), ga[t] && !gb[t]);
                prop_assert_eq!(a.complement(domain).unwrap().contains(t as Tick), !ga[t]);
                prop_assert_eq!(can_window(&a, &b, &c).contains(t as Tick), gc[t] && !ga[t] && !gb[t]);
            }
            prop_assert_eq!(a.is_subset(&b), ga.iter().zip(&gb).all(|(p, q)| !p || *q));
            prop_assert_eq!(a == b, ga == gb);
            Ok(())
        })
        .map_err(|e| format!("set algebra: {e}"))?;

    let link = |n: &str| LinkedBehavior {
        name: n.into(),
        pc: PerformanceConstraint::universal(n),
    };
    let spec = BehaviorSpec::new("b", PerformanceConstraint::universal("b"), link("i"), link("o")).unwrap();
    let bits = || prop::collection::vec(any::<bool>(), H as usize);
    let mut runner = TestRunner::new(cases(CASES));
    runner
        .run(&((bits(), bits(), bits(), bits()), 0..H, 1i64..12), |((a, b, c, d), now, m)| {
            let pcs = derive_prescriptive(&spec, &Bits([a, b, c, d]), now, horizon(0, H).unwrap(), m);
            let w = &pcs.windows;
            prop_assert!(w.cst.intersect(&w.mst.union(&w.nst)).is_empty());
            prop_assert!(w.csp.intersect(&w.msp.union(&w.nsp)).is_empty());
            Ok(())
        })
        .map_err(|e| format!("window separation: {e}"))?;
    Ok(format!("{CASES} set-algebra cases and {CASES} derivations agree with the per-tick oracle"))
}

fn validation_agreement() -> Outcome {
    use common::validation::{constraints, instance, oracle, trace};
    const CASES: u32 = 500;
    let mut runner = TestRunner::new(cases(CASES));
    runner
        .run(&instance(), |inst| {
            let report = validate_execution(&trace(&inst), &constraints(&inst)).unwrap();
            let got: Vec<_> = report.violations.iter().map(|v| (v.clause, v.tick)).collect();
            prop_assert_eq!(got, oracle(&inst));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{CASES} executions match the pointwise checker"))
}

fn evtol_aggregation() -> Outcome {
    let mut found = Vec::new();
    for (nominal, want) in [(true, ValueSet::interval(5.0, 8.0)), (false, ValueSet::interval(3.0, 8.0))] {
        let mut cfg = common::config("evtol_nominal");
        cfg.conditions.insert("Nom".into(), CondValue::Bool(nominal));
        let plant = cfg.build_plant().map_err(|e| e.to_string())?;
        let model = cfg.build_model(&*plant).map_err(|e| e.to_string())?;
        let dcs = aggregate(&model, &cfg.conditions).map_err(|e| e.to_string())?;
        let angle = model.construct().resolve("x.angle").map_err(|e| e.to_string())?;
        let got = dcs.set(angle);
        if got != want {
            return Err(format!("Nom={nominal}: angle set {got:?}, expected {want:?}"));
        }
        found.push(format!("Nom={nominal} -> {:?}", got.pieces()));
    }
    Ok(found.join(", "))
}

fn taxonomy() -> Outcome {
    for (name, scenario, tick) in common::TAXONOMY {
        let out = common::run_named(name);
        let want = BTreeSet::from([(tick, scenario)]);
        if out.emitted() != want {
            return Err(format!("{name}: controller logged {:?}", out.emitted()));
        }
        if out.verdict.event_keys() != want {
            return Err(format!("{name}: monitor derived {:?}", out.verdict.event_keys()));
        }
    }
    Ok(format!("{} fixtures, each with exactly its event at the expected tick", common::TAXONOMY.len()))
}

fn corpus_agreement() -> Outcome {
    let cfg = common::config(common::CORPUS);
    let mut events = 0;
    for seed in common::CORPUS_SEEDS {
        let out = common::run(&cfg, seed);
        if out.emitted() != out.verdict.event_keys() {
            return Err(format!("seed {seed}: controller {:?} vs monitor {:?}", out.emitted(), out.verdict.event_keys()));
        }
        events += out.emitted().len();
    }
    Ok(format!("{} seeds agree ({events} events)", common::CORPUS_SEEDS.end - common::CORPUS_SEEDS.start))
}

fn hazard_freedom() -> Outcome {
    let cfg = common::config(common::CORPUS);
    let PlantConfig::Merge(m) = &cfg.plant else {
        return Err("corpus is not a merge config".into());
    };
    let mut fallbacks = 0;
    for seed in common::CORPUS_SEEDS {
        let out = common::run(&cfg, seed);
        let summary = &out.trace.footer.as_ref().ok_or("missing footer")?.summary;
        if out.emitted().iter().any(|(_, s)| *s == Scenario::D1(D1Kind::NoDecision)) {
            fallbacks += 1;
            if summary.terminal != Terminal::FallbackComplete || summary.final_state[0] >= m.lane_end {
                return Err(format!("seed {seed}: {:?} at s={}", summary.terminal, summary.final_state[0]));
            }
        } else if !summary.pc_violations.is_empty() {
            return Err(format!("seed {seed}: {} pc violations", summary.pc_violations.len()));
        }
    }
    Ok(format!("{} seeds hazard-free, {fallbacks} completed fallbacks", common::CORPUS_SEEDS.end - common::CORPUS_SEEDS.start))
}

fn baseline_comparison() -> Outcome {
    let mut counts = Vec::new();
    for name in common::ADVERSARIAL {
        let cfg = common::config(name);
        let stpa = common::run(&cfg, cfg.run.seed).pc_violations();
        let mut naive_cfg = cfg.clone();
        naive_cfg.controller.strategy = ControlStrategy::Naive;
        let naive = common::run(&naive_cfg, cfg.run.seed).pc_violations();
        if naive == 0 || stpa != 0 {
            return Err(format!("{name}: baseline {naive}, pipeline {stpa}"));
        }
        counts.push(format!("{name} {naive}/{stpa}"));
    }
    Ok(format!("baseline/pipeline violations: {}", counts.join(", ")))
}

fn delay_compensation() -> Outcome {
    let run = |compensated: bool| {
        let mut cfg = common::config("taxonomy/d2_time_coupling");
        cfg.controller.reference_compensation = compensated;
        common::run(&cfg, 0)
    };
    let dev = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let onset_error = |out: &common::Outcome| -> Result<f64, String> {
        let onset = out.trace.records.iter().find(|r| !r.world.mode.is_before()).ok_or("no merge")?.tick;
        let reference = out
            .trace
            .records
            .iter()
            .filter_map(|r| r.decision.adopted.as_ref())
            .filter(|r| r.t3 <= onset)
            .last()
            .ok_or("no reference at onset")?;
        let planned = reference.state_at(onset).ok_or("reference ends before onset")?;
        Ok(dev(&out.trace.records[onset as usize].world.state, planned))
    };

    let with = run(true);
    let first = with.trace.records.iter().find_map(|r| r.decision.adopted.clone()).ok_or("no reference")?;
    let d13 = common::config("taxonomy/d2_time_coupling").controller_config().map_err(|e| e.to_string())?.delays.d13();
    if d13 != 10 {
        return Err(format!("fixture has d13={d13}"));
    }
    let prediction_err = dev(&first.x_hat, &with.trace.records[first.t3 as usize].world.state);
    if prediction_err > 1e-9 {
        return Err(format!("x_hat off by {prediction_err}"));
    }
    let (e_with, e_without) = (onset_error(&with)?, onset_error(&run(false))?);
    if e_without <= e_with {
        return Err(format!("tracking error uncompensated {e_without} <= compensated {e_with}"));
    }
    Ok(format!(
        "prediction error {prediction_err:e}; onset tracking error {e_without:.3} uncompensated vs {e_with:.3} compensated"
    ))
}

fn determinism() -> Outcome {
    const CONFIGS: [&str; 10] = [
        "merge_nominal",
        "merge_dense",
        "merge_random",
        "evtol_nominal",
        "evtol_backup_pad",
        "adversarial/merge_alongside",
        "adversarial/evtol_corridor_busy",
        "taxonomy/d1_previously_safe",
        "taxonomy/d2_previously_safe",
        "taxonomy/d3_previously_safe",
    ];
    for name in CONFIGS {
        let a = trace_to_string(&common::run_named(name).trace);
        let b = trace_to_string(&common::run_named(name).trace);
        if a != b {
            return Err(format!("{name}: traces differ"));
        }
    }
    Ok(format!("{} configs byte-identical across runs", CONFIGS.len()))
}

fn parser_fuzz() -> Outcome {
    const MUTATIONS: usize = 10_000;
    let sources: Vec<String> = ["merge_nominal", "evtol_nominal", "merge_random", "taxonomy/d3_no_decision"]
        .iter()
        .map(|n| std::fs::read_to_string(common::configs_dir().join(format!("{n}.toml"))).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(10_000);
    let mut rejected = 0;
    for k in 0..MUTATIONS {
        let mut bytes = sources[k % sources.len()].as_bytes().to_vec();
        for _ in 0..rng.gen_range(1..=3) {
            let at = rng.gen_range(0..bytes.len());
            match rng.gen_range(0..3) {
                0 => bytes[at] = rng.gen(),
                1 => bytes.insert(at, b"0123456789.-=[]\"\n"[rng.gen_range(0..17)]),
                _ => {
                    bytes.remove(at);
                }
            }
        }
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let parsed = catch_unwind(AssertUnwindSafe(|| parse_config(&text)))
            .map_err(|_| format!("parser panicked on mutation {k}"))?;
        match parsed {
            Err(e) if e.issues.is_empty() => return Err(format!("mutation {k}: error without issues")),
            Err(_) => rejected += 1,
            Ok(c) => {
                let dt = c.run.dt.to_f64();
                let h = c.run.horizon;
                if (h.ticks as f64 * dt - h.value.to_f64()).abs() > 1e-9 {
                    return Err(format!("mutation {k}: horizon {} s accepted as {} ticks", h.value, h.ticks));
                }
            }
        }
    }
    Ok(format!("{MUTATIONS} mutations, {rejected} rejected with structured errors, no panics"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("window set laws", window_laws),
        ("execution validation", validation_agreement),
        ("eVTOL constraint aggregation", evtol_aggregation),
        ("scenario taxonomy fixtures", taxonomy),
        ("monitor/controller agreement", corpus_agreement),
        ("hazard freedom", hazard_freedom),
        ("baseline comparison", baseline_comparison),
        ("delay compensation", delay_compensation),
        ("deterministic replay", determinism),
        ("config parser fuzz", parser_fuzz),
    ];
    let mut failed = 0;
    for (i, (title, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("criterion {}: PASS {title}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {title}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
