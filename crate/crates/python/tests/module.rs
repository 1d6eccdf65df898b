use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<F: FnOnce(&Bound<'_, PyModule>)>(f: F) {
    Python::attach(|py| {
        let m = PyModule::new(py, "kcontrast").unwrap();
        kcontrast_py::register(&m).unwrap();
        f(&m);
    });
}

#[test]
fn simulate_and_fit_round_trip() {
    with_module(|m| {
        let p = m.getattr("simulate").unwrap().call1(("S3", 7u64)).unwrap();
        let n: usize = p.len().unwrap();
        assert!(n > 300 && n < 700, "{n}");
        let kw = PyDict::new(m.py());
        kw.set_item("penalty_r", 2.5).unwrap();
        let fit = m.getattr("fit").unwrap().call((p, "exp(a+b*x)", 3u64), Some(&kw)).unwrap();
        let theta: Vec<f64> = fit.get_item("theta_hat").unwrap().extract().unwrap();
        assert_eq!(theta.len(), 2);
        let tau: f64 = fit.get_item("penalty").unwrap().get_item("tau").unwrap().extract().unwrap();
        assert!((tau - 0.16).abs() < 1e-12);
    });
}

#[test]
fn bad_input_raises_value_error() {
    with_module(|m| {
        let err = m.getattr("simulate").unwrap().call1(("S9", 1u64)).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(m.py()));
        let pattern = m.getattr("Pattern").unwrap();
        assert!(pattern.call1((vec![0.1, 0.2], vec![0.1])).is_err());
    });
}

#[test]
fn k_function_matches_grid_shape() {
    with_module(|m| {
        let p = m.getattr("simulate").unwrap().call1(("ST2", 4u64)).unwrap();
        let kw = PyDict::new(m.py());
        kw.set_item("n_r", 5).unwrap();
        kw.set_item("n_h", 3).unwrap();
        let k = m.getattr("k_function").unwrap().call((p,), Some(&kw)).unwrap();
        let values: Vec<f64> = k.get_item("values").unwrap().extract().unwrap();
        assert_eq!(values.len(), 15);
        assert_eq!(k.get_item("kind").unwrap().extract::<String>().unwrap(), "homogeneous");
    });
}
