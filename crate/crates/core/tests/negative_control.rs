use qhedge::dual::check_slice;
use qhedge::verify::*;
use qhedge::Error;

#[test]
fn corrupted_slice_fails_with_node_coordinates() {
    let mut p = Problem::put_example();
    p.engine.grid.nx = 41;
    p.engine.grid.nq = 81;
    p.engine.grid.np = 81;
    let sol = p.solve().unwrap();
    let w = &sol.continuation[1];
    assert!(check_slice(w, sol.eps_dual).is_ok());
    let bad = corrupt_slice(w, 17, 40, 0.5).unwrap();
    match check_slice(&bad, sol.eps_dual) {
        Err(Error::InvariantViolation { x_index, axis_index, time, .. }) => {
            assert_eq!(x_index, 17);
            assert!((39..=41).contains(&axis_index), "{axis_index}");
            assert_eq!(time, w.time);
        }
        other => panic!("expected a violation, got {other:?}"),
    }
}

#[test]
fn strict_tolerance_turns_checks_into_failures() {
    let mut p = Problem::put_example();
    p.engine.grid.nx = 41;
    p.engine.grid.nq = 81;
    p.engine.grid.np = 81;
    let checks = check_european_reduction(&p, 30.0, &[0.9], 1e-12).unwrap();
    assert!(!checks[0].passed());
    let report = serde_json::to_value(&checks).unwrap();
    assert_eq!(report[0]["status"], "fail");
}
