use laser::laser;
use pyo3::ffi::c_str;
use pyo3::prelude::*;

fn with_module<F: FnOnce(Python<'_>)>(f: F) {
    pyo3::append_to_inittab!(laser);
    Python::initialize();
    Python::attach(f);
}

#[test]
fn module_functions_from_python() {
    with_module(|py| {
        let code = c_str!(
            r#"
import laser
a, b = laser.alloc_rank1(4, 4, 100.0)
assert abs(a - 50.0) < 1e-9 and abs(b - 50.0) < 1e-9
assert abs(laser.lambda_zsgd(10, 10, 100.0) - 1.0) < 1e-12
assert laser.lambda_zsgd(10, 10) == 0.0
assert laser.compress([[1.0, 2.0], [3.0, 4.0]], "identity") == [[1.0, 2.0], [3.0, 4.0]]
try:
    laser.compress([[1.0]], "bogus")
    raise AssertionError("accepted")
except ValueError:
    pass
cfg = laser.default_config().replace("rounds = 1000", "rounds = 5")
assert [r.round for r in laser.run_experiment(cfg)] == [0, 1, 2, 3, 4]
"#
        );
        py.run(code, None, None).map_err(|e| e.display(py)).unwrap();
    });
}
