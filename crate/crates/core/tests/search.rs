use ehjscc::models::{ArrivalModel, ChannelModel, LeakageModel, SourceModel};
use ehjscc::policy::SystemConfig;
use ehjscc::search::{
    capacity_sweep, default_c_bounds, tune_constant_kappa, tune_constants, SearchError,
    SearchSpec,
};
use ehjscc::Execution;

fn system(source: SourceModel, capacity: f64) -> SystemConfig {
    SystemConfig::new(
        source,
        ChannelModel::Awgn { noise: 1.0 },
        ArrivalModel {
            delta: 1.0,
            lambda: 1.0,
        },
        LeakageModel::Zero,
        capacity,
    )
}

const GAUSS: SourceModel = SourceModel::Gaussian { variance: 1.0 };

#[test]
fn seeded_search_is_reproducible_across_modes() {
    let sys = system(GAUSS, 3.0);
    let spec = SearchSpec::for_system(&sys).with_budget(60).with_seed(5);
    let a = tune_constants(&sys, &spec, Execution::Sequential).unwrap();
    let b = tune_constants(&sys, &spec, Execution::Parallel).unwrap();
    assert_eq!(a, b);
    assert!(a.evaluations <= 60);
    assert!(a.solution.feasible);
    assert!(a.d_avg >= sys.lower_bound().unwrap());
}

#[test]
fn larger_budget_never_hurts() {
    let sys = system(SourceModel::Bernoulli { p: 0.5 }, 2.0);
    let small = tune_constants(&sys, &SearchSpec::for_system(&sys).with_budget(30), Execution::Parallel)
        .unwrap();
    let large = tune_constants(&sys, &SearchSpec::for_system(&sys).with_budget(300), Execution::Parallel)
        .unwrap();
    assert!(large.d_avg <= small.d_avg + 1e-12);
}

#[test]
fn invalid_specs_are_rejected() {
    let sys = system(GAUSS, 3.0);
    let mut spec = SearchSpec::for_system(&sys);
    spec.beta_bounds = (0.5, -0.5);
    assert!(matches!(
        tune_constants(&sys, &spec, Execution::Sequential),
        Err(SearchError::InvalidSpec(_))
    ));
    let spec = SearchSpec::for_system(&sys).with_budget(0);
    assert!(tune_constants(&sys, &spec, Execution::Sequential).is_err());
}

#[test]
fn constant_kappa_beats_nothing_but_the_bound() {
    let sys = system(GAUSS, 4.0);
    let t = tune_constant_kappa(&sys, default_c_bounds(&sys).unwrap(), 80).unwrap();
    assert!(t.solution.feasible);
    assert!(t.d_avg > sys.lower_bound().unwrap());
    assert!(t.d_avg < sys.source.d_max());
}

#[test]
fn sweep_rows_follow_capacities() {
    let sys = system(GAUSS, 1.0);
    let spec = SearchSpec::for_system(&sys).with_budget(40);
    let res = capacity_sweep(&sys, &[1.0, 3.0], &spec, Execution::Parallel).unwrap();
    assert_eq!(res.rows.len(), 2);
    assert_eq!(res.rows[0].capacity, 1.0);
    assert!(res.all_feasible(), "{:?}", res.rows);
    assert!(res.rows[1].d_lb < res.rows[0].d_lb);
    for r in &res.rows {
        assert!(r.d_avg_adaptive.unwrap() <= r.d_avg_constk.unwrap());
    }
}
