use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module(f: impl FnOnce(Python<'_>, &Bound<'_, PyModule>)) {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "cadenet").unwrap();
        cadenet::cadenet(&m).unwrap();
        f(py, &m);
    });
}

#[test]
fn geometry_helpers() {
    with_module(|_, m| {
        let v: f64 = m.getattr("iou").unwrap().call1(((0.0, 0.0, 10.0, 10.0), (5.0, 0.0, 15.0, 10.0))).unwrap().extract().unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
        let pairs: Vec<(usize, usize)> = m.getattr("hungarian").unwrap().call1((vec![vec![4.0, 1.0], vec![2.0, 8.0]],)).unwrap().extract().unwrap();
        assert_eq!(pairs, vec![(0, 1), (1, 0)]);
        assert!(m.getattr("iou").unwrap().call1(((0.0, 0.0, 0.0, 10.0), (0.0, 0.0, 1.0, 1.0))).is_err());
    });
}

#[test]
fn enhance_reports_alpha() {
    with_module(|py, m| {
        let data: Vec<u8> = (0..32 * 32 * 3).map(|i| (100 + (i % 97)) as u8).collect();
        let image = m.getattr("Image").unwrap().call1((32usize, 32usize, 3usize, data)).unwrap();
        let kwargs = PyDict::new(py);
        kwargs.set_item("condition", "fog").unwrap();
        kwargs.set_item("severity", 0.5).unwrap();
        let (_, report): (Bound<'_, PyAny>, Bound<'_, PyDict>) =
            m.getattr("enhance").unwrap().call((image,), Some(&kwargs)).unwrap().extract().unwrap();
        let alpha: f64 = report.get_item("alpha").unwrap().unwrap().extract().unwrap();
        assert!((alpha - 0.7).abs() < 1e-12);
        let bad = PyDict::new(py);
        bad.set_item("condition", "hail").unwrap();
        let image = m.getattr("Image").unwrap().call1((4usize, 4usize, 1usize, vec![0u8; 16])).unwrap();
        assert!(m.getattr("enhance").unwrap().call((image,), Some(&bad)).is_err());
    });
}

#[test]
fn simulate_is_deterministic() {
    with_module(|_, m| {
        let sim = m.getattr("simulate").unwrap();
        let a: String = sim.call1((20usize,)).unwrap().extract().unwrap();
        let b: String = sim.call1((20usize,)).unwrap().extract().unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    });
}
