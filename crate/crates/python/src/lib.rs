//! Python bindings: models, realizations, families and experiment runs.
//! Structured results cross the boundary as plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use simart::analysis::{
    box_dimension, coarse_cell_masses, correlation_dimension, fourier_dimension_estimate, tree_occupancy, ProbeLattice,
};
use simart::experiment::{render_raster, run_experiment, ExperimentConfig, RunOptions};
use simart::families::FamilyParam;
use simart::intersect::{family_mass, mass_sequence, EngineOptions};
use simart::{Density, Error, ModelSpec, Realization, SeedPath};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Validation(_) | Error::InvalidParameter(_) | Error::Parse(_) | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io(_) => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| py_err(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| py_err(e.into()))
}

/// A model description parsed from its JSON form.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: ModelSpec,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(json: &str) -> PyResult<Self> {
        let inner: ModelSpec = parse_json(json)?;
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn alpha(&self) -> PyResult<f64> {
        self.inner.alpha().map_err(py_err)
    }

    #[getter]
    fn growth_constant(&self) -> PyResult<f64> {
        self.inner.growth_constant().map_err(py_err)
    }

    #[pyo3(signature = (depth, seed, path = Vec::new()))]
    fn realize(&self, py: Python<'_>, depth: usize, seed: u64, path: Vec<u64>) -> PyResult<PyRealization> {
        let seed = SeedPath::new(seed).extend(&path);
        let inner = py.detach(|| self.inner.realize(depth, &seed)).map_err(py_err)?;
        Ok(PyRealization { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| py_err(e.into()))
    }

    fn __repr__(&self) -> String {
        format!("Model({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

/// One sampled run of a model, truncated at its sampling depth.
#[pyclass(name = "Realization", frozen)]
struct PyRealization {
    inner: Realization,
}

#[pymethods]
impl PyRealization {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Realization::parse(text).map_err(py_err)?,
        })
    }

    fn serialize(&self) -> PyResult<String> {
        self.inner.serialize().map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn max_level(&self) -> usize {
        self.inner.max_level()
    }

    #[getter]
    fn is_cutout(&self) -> bool {
        self.inner.as_cutout().is_some()
    }

    /// `mu_n(x)`.
    fn evaluate(&self, x: Vec<f64>, n: usize) -> PyResult<f64> {
        if x.len() != self.inner.dim() {
            return Err(PyValueError::new_err("point has the wrong dimension"));
        }
        Ok(self.inner.evaluate(&x, n))
    }

    fn total_mass(&self, n: usize) -> f64 {
        self.inner.total_mass(n)
    }

    /// `(Y_n, method)` for a family given as JSON (`{"plane": ...}`,
    /// `{"curve": ...}` or `{"ifs": ...}`).
    #[pyo3(signature = (family, n, engine = None))]
    fn family_mass(&self, py: Python<'_>, family: &str, n: usize, engine: Option<&str>) -> PyResult<(f64, String)> {
        let fam = parse_family(family)?;
        let opts = parse_engine(engine)?;
        let (y, m) = py.detach(|| family_mass(&self.inner, &fam, n, &opts)).map_err(py_err)?;
        Ok((y, m.as_str().to_string()))
    }

    /// `Y_0, ..., Y_{n_max}` with increments and decay fit, as a dict.
    #[pyo3(signature = (family, n_max, engine = None))]
    fn mass_sequence<'py>(
        &self,
        py: Python<'py>,
        family: &str,
        n_max: usize,
        engine: Option<&str>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let fam = parse_family(family)?;
        let opts = parse_engine(engine)?;
        let seq = py.detach(|| mass_sequence(&self.inner, &fam, "family", n_max, &opts)).map_err(py_err)?;
        to_py(py, &seq)
    }

    /// Rows of `mu_n` on a `resolution^d` grid (`d <= 2`), highest row last.
    fn raster(&self, py: Python<'_>, n: usize, resolution: usize) -> PyResult<Vec<Vec<f64>>> {
        let r = py.detach(|| render_raster(&self.inner, n, resolution)).map_err(py_err)?;
        match r.d {
            1 => Ok(vec![r.values]),
            2 => Ok(r.values.chunks(r.res).map(|c| c.to_vec()).collect()),
            _ => Err(PyValueError::new_err("raster export supports d = 1 or 2")),
        }
    }

    /// 16-bit PGM bytes of `mu_n` (`d = 2`).
    fn pgm(&self, py: Python<'_>, n: usize, resolution: usize) -> PyResult<Vec<u8>> {
        py.detach(|| render_raster(&self.inner, n, resolution).and_then(|r| simart::experiment::pgm_bytes(&r)))
            .map_err(py_err)
    }

    /// Box-counting (or, with `correlation=True`, correlation) dimension fit
    /// of a subdivision realization.
    #[pyo3(signature = (n = None, correlation = false))]
    fn dimension<'py>(&self, py: Python<'py>, n: Option<usize>, correlation: bool) -> PyResult<Bound<'py, PyAny>> {
        let tree = self
            .inner
            .as_tree()
            .ok_or_else(|| PyValueError::new_err("dimension fits from Python need a subdivision model"))?;
        let n = n.unwrap_or(tree.max_level());
        let fit = if correlation {
            let masses: Vec<_> = (0..=n).map(|m| (m, coarse_cell_masses(tree, n, m))).collect();
            correlation_dimension(&masses, None)
        } else {
            box_dimension(&tree_occupancy(tree, n), None)
        }
        .map_err(py_err)?;
        to_py(py, &fit)
    }

    /// Band-peak Fourier decay scan.
    #[pyo3(signature = (n, k_max, half_integer = false))]
    fn fourier<'py>(&self, py: Python<'py>, n: usize, k_max: usize, half_integer: bool) -> PyResult<Bound<'py, PyAny>> {
        let lattice = if half_integer {
            ProbeLattice::HalfInteger
        } else {
            ProbeLattice::Integer
        };
        let rep = py
            .detach(|| fourier_dimension_estimate(&self.inner, n, k_max, lattice))
            .map_err(py_err)?;
        to_py(py, &rep)
    }
}

fn parse_family(text: &str) -> PyResult<FamilyParam> {
    let mut v: serde_json::Value = parse_json(text)?;
    if let Some(obj) = v.as_object_mut() {
        obj.entry("id").or_insert_with(|| "family".into());
    }
    let entry: simart::experiment::FamilyEntry = serde_json::from_value(v).map_err(|e| py_err(e.into()))?;
    entry.family().map_err(py_err)
}

fn parse_engine(text: Option<&str>) -> PyResult<EngineOptions> {
    match text {
        Some(t) => parse_json(t),
        None => Ok(EngineOptions::default()),
    }
}

/// Parses and validates an experiment config; raises `ValueError` on failure.
#[pyfunction]
fn validate_config(text: &str) -> PyResult<()> {
    ExperimentConfig::parse(text).map(|_| ()).map_err(py_err)
}

/// Runs a config and returns its manifest as a dict.
#[pyfunction]
#[pyo3(signature = (config, out_dir, threads = None, seed_override = None))]
fn run<'py>(
    py: Python<'py>,
    config: &str,
    out_dir: PathBuf,
    threads: Option<usize>,
    seed_override: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let opts = RunOptions {
        out_dir: Some(out_dir),
        threads,
        seed_override,
        cache_dir: std::env::var_os("SIMART_CACHE").map(PathBuf::from),
    };
    let summary = py.detach(|| run_experiment(config, &opts)).map_err(py_err)?;
    to_py(py, &summary.manifest)
}

#[pymodule]
fn pysimart(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyRealization>()?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
