use regmin::driver::{run_algorithm1, run_algorithm2, AcceptanceRule, SigmaRule, SolverConfig, SubsolverChoice, Trace};
use regmin::metric_policy::{min_floor_condition2, MetricPolicy, PolicyKind};
use regmin::{Metric, ProblemInstance};

fn bits(trace: &Trace) -> Vec<u64> {
    let mut out = Vec::new();
    for rec in &trace.records {
        out.extend(rec.x.iter().chain(rec.s.iter()).map(|v| v.to_bits()));
        out.extend([rec.f_x, rec.sigma, rec.model_grad_norm, rec.model_decrease, rec.f_trial].map(f64::to_bits));
        out.push(rec.accepted as u64);
    }
    out.extend(trace.final_x.iter().map(|v| v.to_bits()));
    out
}

fn ratio_run(name: &str) -> Trace {
    let p = ProblemInstance::by_name(name).unwrap();
    let q0 = Metric::scaled_identity(p.dim(), 0.4).unwrap();
    let pol = MetricPolicy::new(PolicyKind::ShrinkToFloor { weight: 0.2 }, q0, 0.2, 0.0).unwrap();
    let cfg = SolverConfig {
        tau: 0.02,
        acceptance: AcceptanceRule::RatioModel,
        subsolver: SubsolverChoice::Descent { max_inner: 10_000 },
        ..SolverConfig::default()
    };
    run_algorithm1(&p, &cfg, &pol, p.start()).unwrap()
}

#[test]
fn repeated_runs_are_bit_identical() {
    for name in ["dquad-d5-k10", "logistic", "quartic-d3"] {
        let first = ratio_run(name);
        let second = ratio_run(name);
        assert!(first.iterations() > 1, "{name}");
        assert_eq!(bits(&first), bits(&second), "{name}");
    }
}

#[test]
fn always_accept_runs_are_bit_identical() {
    let p = ProblemInstance::by_name("lse-d5").unwrap();
    let a = min_floor_condition2(0.0, p.lipschitz().unwrap().value, 0.5);
    let pol = MetricPolicy::new(PolicyKind::Inflated, Metric::scaled_identity(5, a).unwrap(), a, 0.5).unwrap();
    let cfg = SolverConfig {
        eta: 0.5,
        acceptance: AcceptanceRule::Always,
        sigma_rule: SigmaRule::Constant { value: 1.0 },
        ..SolverConfig::default()
    };
    let runs: Vec<Trace> = (0..3)
        .map(|_| run_algorithm2(&p, &cfg, &pol, p.start()).unwrap())
        .collect();
    assert_eq!(bits(&runs[0]), bits(&runs[1]));
    assert_eq!(bits(&runs[1]), bits(&runs[2]));
}
