use pyo3::prelude::*;
use spatial_bd_py::spatial_bd_py as module;

fn run(code: &std::ffi::CStr) {
    pyo3::append_to_inittab!(module);
    Python::initialize();
    Python::attach(|py| {
        if let Err(e) = py.run(code, None, None) {
            e.display(py);
            panic!("python check failed");
        }
    });
}

#[test]
fn bindings_round_trip() {
    run(cr#"
import json, math
import spatial_bd_py as s

k = s.Kernel.triangular(1.0, 1.0, 1)
assert k.mass() == 1.0 and k.dim == 1
assert s.Kernel.from_json(k.to_json()).mass() == 1.0
assert s.riemann_upper_sum(k, 0.5) == 1.5

cert = s.certify(k, k)
assert cert["theta"] > 0
rep = s.verify(k, k, cert["omega"], cert["theta"], cert["r"], trials=500)
assert rep["violations"] == 0
assert s.u_theta([[0.0]], k, k, 1.0, cert["theta"]) == 1.0

e = math.e
assert abs(s.norm_bound("bp", 0, 1, 1, 1, 1, 1) - (8 / e**2 + (1 + e) / e)) < 1e-12
try:
    s.norm_bound("bp", 1, 1)
    raise AssertionError("expected ValueError")
except ValueError:
    pass

cfg = {
    "model": {"variant": "migration", "immigration": {"kind": "constant", "rate": 1.0}},
    "torus": {"side": 5.0, "dim": 1},
    "schedule": {"t_end": 1.0, "snapshot_times": [1.0]},
}
a = s.simulate(json.dumps(cfg), replica=2)
b = s.simulate(json.dumps(cfg), replica=2)
assert a == b and a["status"] == "completed"
assert s.surgailis_density(1.0, 1.0, 1.0, 1.0) == 1.0
"#);
}
