use std::time::{Duration, Instant};

use qhedge::engine::DualSolution;
use qhedge::verify::*;

struct Criterion {
    name: &'static str,
    checks: Vec<Check>,
}

impl Criterion {
    fn new(name: &'static str, checks: Vec<Check>) -> Self {
        Self { name, checks }
    }

    fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(Check::passed)
    }
}

fn runtime(label: &str, elapsed: Duration, limit: f64) -> Check {
    Check::at_most(format!("runtime-{label}"), elapsed.as_secs_f64(), limit).with_detail("seconds".into())
}

fn solved(problem: &Problem) -> DualSolution {
    let mut p = problem.clone();
    p.engine.audit = Some(true);
    p.solve().expect("backward induction")
}

#[test]
fn acceptance() {
    let cfg = VerifyConfig::default();
    let tol = cfg.tolerances;
    let x0 = 30.0;
    let put = Problem::put_example();
    let spread = Problem::put_spread_example();
    let put_sol = solved(&put);
    let spread_sol = solved(&spread);
    let mut criteria = Vec::new();

    let start = Instant::now();
    let tree = check_tree_duality(&put, x0, cfg.tree_steps, cfg.tree_grid, tol.tree_duality).unwrap();
    criteria.push(Criterion::new("tree duality", vec![tree, runtime("tree", start.elapsed(), 10.0)]));

    let start = Instant::now();
    let mut eu = check_european_reduction(&put, x0, &cfg.european_levels, tol.european_rel).unwrap();
    eu.push(runtime("european", start.elapsed(), 30.0));
    criteria.push(Criterion::new("european reduction", eu));

    let mut sup = check_superhedge_boundary(&put_sol, cfg.superhedge_range, x0, tol.superhedge_rel).unwrap();
    let atm = put_sol.query(0.0, x0, qhedge::engine::AxisPoint::P(1.0)).unwrap();
    sup.push(Check::at_most("superhedge-atm-near-2.98", (atm - 2.98).abs(), 0.005).with_detail(format!("v = {atm}")));
    criteria.push(Criterion::new("superhedge boundary", sup));

    criteria.push(Criterion::new(
        "p_min consistency",
        vec![
            check_pmin(&put_sol, x0, cfg.pmin_paths, cfg.seed, tol.pmin_std_errors).unwrap(),
            check_pmin(&spread_sol, x0, cfg.pmin_paths, cfg.seed, tol.pmin_std_errors).unwrap(),
        ],
    ));

    criteria.push(Criterion::new(
        "propagator agreement",
        check_propagators(&put, cfg.mc_paths, cfg.seed, &tol).unwrap(),
    ));

    criteria.push(Criterion::new(
        "obstacle route equivalence",
        vec![check_route_equivalence(&put_sol, "put"), check_route_equivalence(&spread_sol, "put-spread")],
    ));

    let mut inv = check_invariants(&put_sol, "put", cfg.derivative_paths, cfg.seed, &tol).unwrap();
    inv.extend(check_invariants(&spread_sol, "put-spread", cfg.derivative_paths, cfg.seed, &tol).unwrap());
    criteria.push(Criterion::new("invariant suite", inv));

    criteria.push(Criterion::new(
        "qualitative figure facts",
        vec![check_superhedge_dip(&spread_sol, "put-spread"), check_regions(&put_sol, "put")],
    ));

    criteria.push(Criterion::new(
        "dual-optimal feasibility",
        check_success(&put_sol, x0, &cfg.success_levels, cfg.success_paths, cfg.seed, tol.success_std_errors)
            .unwrap(),
    ));

    let mut all = true;
    for c in &criteria {
        let ok = c.passed();
        all &= ok;
        println!("{} {}", if ok { "PASS" } else { "FAIL" }, c.name);
        for k in &c.checks {
            println!(
                "    {:<4} {} measured {} tolerance {}{}",
                if k.passed() { "ok" } else { "bad" },
                k.check,
                k.measured,
                k.tolerance,
                k.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default()
            );
        }
    }
    assert!(all, "acceptance criteria failed");
}
