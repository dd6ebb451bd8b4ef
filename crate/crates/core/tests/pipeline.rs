//! End-to-end runs through the public API: training, caching, custom
//! strategies and evaluation.

use swarm_amr::harness::{
    evaluate, records_csv, run_key, train_cached, EvalSuite, HarnessError, LearnedStrategy, MarkingStrategy, StepView,
    StrategyParams, StrategyRegistry, SweepKind, UniformStrategy,
};
use swarm_amr::mesh::MarkVector;
use swarm_amr::problems::PdeFamily;
use swarm_amr::rl::{PpoConfig, Variant};
use swarm_amr::rng::StreamRng;

fn tiny(variant: Variant, alpha: f64) -> PpoConfig {
    let mut cfg = PpoConfig::new(variant, alpha);
    cfg.iterations = 2;
    cfg.samples_per_iteration = 8;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.horizon = 2;
    cfg
}

fn suite() -> EvalSuite {
    EvalSuite::build_with(PdeFamily::Laplace, 3, 2, 0.6, 2).unwrap()
}

#[test]
fn cached_training_is_reused_and_evaluates_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(Variant::Asmr, 0.1);
    let mut rows = 0;
    let first = train_cached(&cfg, PdeFamily::Laplace, 0, dir.path(), |_| rows += 1).unwrap();
    assert!(first.trained);
    assert_eq!(rows, 2);
    assert!(first.dir.ends_with(run_key(&cfg, PdeFamily::Laplace, 0)));
    assert!(first.dir.join("final.ckpt").exists());

    let second = train_cached(&cfg, PdeFamily::Laplace, 0, dir.path(), |_| panic!("should not train")).unwrap();
    assert!(!second.trained);

    let s = suite();
    let a = records_csv(&evaluate(&LearnedStrategy { agent: first.agent }, &s, 2, 0.1, 0).unwrap());
    let b = records_csv(&evaluate(&LearnedStrategy { agent: second.agent }, &s, 2, 0.1, 0).unwrap());
    assert_eq!(a, b);
}

#[test]
fn run_keys_separate_configurations() {
    let a = tiny(Variant::Asmr, 0.1);
    let b = tiny(Variant::Asmr, 0.2);
    let c = tiny(Variant::Shared, 0.1);
    let keys = [
        run_key(&a, PdeFamily::Laplace, 0),
        run_key(&a, PdeFamily::Laplace, 1),
        run_key(&a, PdeFamily::Poisson, 0),
        run_key(&b, PdeFamily::Laplace, 0),
        run_key(&c, PdeFamily::Laplace, 0),
    ];
    for i in 0..keys.len() {
        for j in 0..i {
            assert_ne!(keys[i], keys[j]);
        }
    }
}

/// Marks every element on the first step only.
struct OneSweep;

impl MarkingStrategy for OneSweep {
    fn name(&self) -> &str {
        "one-sweep"
    }

    fn marks(&self, view: &StepView, _rng: &mut StreamRng) -> Result<MarkVector, HarnessError> {
        Ok(MarkVector::new(vec![view.state.step == 0; view.num_elements()]))
    }
}

#[test]
fn registered_strategies_are_selected_by_name() {
    let mut registry = StrategyRegistry::with_defaults();
    registry.register("one-sweep", SweepKind::UniformSteps, Box::new(|_| Ok(Box::new(OneSweep))));
    assert!(registry.names().contains(&"one-sweep"));
    let params = StrategyParams { value: 1.0, horizon: 3, ..Default::default() };
    let custom = registry.create("one-sweep", &params).unwrap();
    let s = suite();
    let mine = evaluate(custom.as_ref(), &s, 3, 1.0, 0).unwrap();
    let uniform = evaluate(&UniformStrategy { k: 1 }, &s, 3, 1.0, 0).unwrap();
    for (a, b) in mine.iter().zip(&uniform) {
        assert_eq!(a.method, "one-sweep");
        assert_eq!((a.final_elements, a.squared_error), (b.final_elements, b.squared_error));
    }
    assert!(matches!(registry.create("nope", &params), Err(HarnessError::UnknownMethod(_))));
}
