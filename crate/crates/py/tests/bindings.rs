use pyo3::ffi::c_str;
use largemvc_py::largemvc_module;
use pyo3::prelude::*;

#[test]
fn module_works_from_embedded_python() {
    pyo3::append_to_inittab!(largemvc_module);
    Python::initialize();
    Python::attach(|py| {
        py.run(
            c_str!(
                r#"
import largemvc as mvc
ds = mvc.Dataset.synthetic(n=60, clusters=2, dims=[4, 5], seed=3)
assert ds.n_samples == 60 and ds.n_views == 2
fit = mvc.solve(ds.normalized("zscore"), anchors=2, max_iters=20)
assert len(fit["h"]) == 60 and len(fit["h"][0]) == 2
assert mvc.accuracy([0, 1, 1], [1, 0, 0]) == 1.0
try:
    mvc.soft_threshold([[1.0]], -1.0)
    raise AssertionError("negative threshold accepted")
except ValueError:
    pass
"#
            ),
            None,
            None,
        )
        .unwrap_or_else(|e| panic!("python error: {e}"));
    });
}
