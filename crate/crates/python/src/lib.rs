//! Python bindings: the length-vector pipeline, metrics, fingerprint store,
//! and trace synthesizer exposed as the `tlsprint_py` extension module.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict, PyList};

use tlsprint_core::db;
use tlsprint_core::extract::{self, ExtractOptions};
use tlsprint_core::flow::DirectionMode;
use tlsprint_core::metrics::{self, LengthVector, VectorMode};
use tlsprint_core::synth;
use tlsprint_core::tls::{suite_list_fingerprint, ClientHelloSummary, RecordTypeSet};

fn value_error(err: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn length_vector(values: Vec<u32>) -> PyResult<LengthVector> {
    LengthVector::new(values).map_err(value_error)
}

fn parse_mode(mode: &str) -> PyResult<VectorMode> {
    mode.parse().map_err(value_error)
}

fn parse_direction(direction: &str) -> PyResult<DirectionMode> {
    match direction {
        "both" => Ok(DirectionMode::Both),
        "client" => Ok(DirectionMode::ClientOnly),
        "server" => Ok(DirectionMode::ServerOnly),
        other => Err(PyValueError::new_err(format!(
            "unknown direction {other:?}, expected both|client|server"
        ))),
    }
}

/// Cosine of the angle between two equal-length vectors.
#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::cosine_similarity(&a, &b).map_err(value_error)
}

/// `1 - cosine_similarity(a, b)`.
#[pyfunction]
fn cosine_dissimilarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::cosine_dissimilarity(&a, &b).map_err(value_error)
}

/// Piecewise-linear resampling of a length vector onto `target_len` samples.
#[pyfunction]
fn interpolate(values: Vec<u32>, target_len: usize) -> PyResult<Vec<f64>> {
    let vector = length_vector(values)?;
    Ok(metrics::interpolate(&vector, target_len)
        .map_err(value_error)?
        .into_values())
}

/// Compare two length vectors, resampling the shorter one up when lengths
/// differ. Returns `(similarity, dissimilarity, common_len)`.
#[pyfunction]
fn compare(a: Vec<u32>, b: Vec<u32>) -> PyResult<(f64, f64, usize)> {
    let left = length_vector(a)?;
    let right = length_vector(b)?;
    let cmp = metrics::compare(&left, &right).map_err(value_error)?;
    Ok((cmp.similarity, cmp.dissimilarity, cmp.common_len))
}

fn client_hello_dict<'py>(
    py: Python<'py>,
    hello: &ClientHelloSummary,
) -> PyResult<Bound<'py, PyDict>> {
    let dict = PyDict::new(py);
    let suites: Vec<String> = hello
        .cipher_suites
        .iter()
        .map(|c| format!("{c:04x}"))
        .collect();
    let extensions: Vec<String> = hello
        .extensions
        .iter()
        .map(|c| format!("{c:04x}"))
        .collect();
    dict.set_item("cipher_suites", suites)?;
    dict.set_item("extensions", extensions)?;
    dict.set_item("sni", hello.sni.clone())?;
    dict.set_item("alpn", hello.alpn.clone())?;
    let versions: Vec<String> = hello
        .supported_versions
        .iter()
        .map(|v| format!("{v:04x}"))
        .collect();
    dict.set_item("supported_versions", versions)?;
    dict.set_item("fingerprint", suite_list_fingerprint(hello))?;
    Ok(dict)
}

/// Extract per-session length vectors from a classic pcap byte string.
///
/// Returns a list of dicts with `flow`, `frames`, `lengths`,
/// `suite_fingerprint`, and `client_hello` keys.
#[pyfunction(signature = (
    pcap,
    mode = "frame",
    port = 443,
    direction = "both",
    include = "hs,app",
    tls_only = false,
    merge_flows = false,
))]
#[allow(clippy::too_many_arguments)]
fn extract_vectors<'py>(
    py: Python<'py>,
    pcap: &[u8],
    mode: &str,
    port: u16,
    direction: &str,
    include: &str,
    tls_only: bool,
    merge_flows: bool,
) -> PyResult<Bound<'py, PyList>> {
    let options = ExtractOptions {
        port_filter: (port != 0).then_some(port),
        mode: parse_mode(mode)?,
        direction: parse_direction(direction)?,
        tls_only,
        include: include.parse::<RecordTypeSet>().map_err(value_error)?,
        merge_flows,
    };
    let report = extract::extract_sessions(pcap, &options).map_err(value_error)?;
    let out = PyList::empty(py);
    for session in &report.sessions {
        let entry = PyDict::new(py);
        entry.set_item("flow", session.flow_key.to_string())?;
        entry.set_item("frames", session.frame_count)?;
        entry.set_item("lengths", session.vector.values().to_vec())?;
        entry.set_item("suite_fingerprint", session.suite_fingerprint.clone())?;
        match &session.client_hello {
            Some(hello) => entry.set_item("client_hello", client_hello_dict(py, hello)?)?,
            None => entry.set_item("client_hello", py.None())?,
        }
        out.append(entry)?;
    }
    Ok(out)
}

/// Synthesize a deterministic session from a profile JSON document.
/// Returns `(pcap_bytes, plan_json)`.
#[pyfunction(signature = (profile_json, seed = 0))]
fn synth_session<'py>(
    py: Python<'py>,
    profile_json: &str,
    seed: u64,
) -> PyResult<(Bound<'py, PyBytes>, String)> {
    let profile: synth::BrowserProfile =
        serde_json::from_str(profile_json).map_err(value_error)?;
    let (pcap, plan) = synth::synth_session(&profile, seed).map_err(value_error)?;
    Ok((PyBytes::new(py, &pcap), plan.to_json()))
}

/// Labeled fingerprint store with pairwise reports and classification.
#[pyclass]
struct FingerprintDb {
    inner: db::FingerprintDb,
}

#[pymethods]
impl FingerprintDb {
    #[new]
    fn new() -> Self {
        FingerprintDb {
            inner: db::FingerprintDb::new(),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Insert or replace the vector stored under `(browser, url, mode)`.
    /// Returns True when an existing record was replaced.
    #[pyo3(signature = (browser, url, mode, lengths, suite_fingerprint = None))]
    fn add(
        &mut self,
        browser: String,
        url: String,
        mode: &str,
        lengths: Vec<u32>,
        suite_fingerprint: Option<String>,
    ) -> PyResult<bool> {
        let record = db::FingerprintRecord {
            browser,
            url,
            mode: parse_mode(mode)?,
            vector: length_vector(lengths)?,
            suite_fingerprint,
        };
        Ok(self.inner.add(record))
    }

    /// One dict per unordered browser pair: `browsers`, `per_url` rows, and
    /// `mean_dissimilarity`.
    #[pyo3(signature = (mode = "frame"))]
    fn pairwise_report<'py>(&self, py: Python<'py>, mode: &str) -> PyResult<Bound<'py, PyList>> {
        let reports = self
            .inner
            .pairwise_report(parse_mode(mode)?)
            .map_err(value_error)?;
        let out = PyList::empty(py);
        for report in &reports {
            let entry = PyDict::new(py);
            entry.set_item("browsers", report.browsers.clone())?;
            let rows = PyList::empty(py);
            for row in &report.per_url {
                let cell = PyDict::new(py);
                cell.set_item("url", row.url.clone())?;
                cell.set_item("similarity", row.similarity)?;
                cell.set_item("dissimilarity", row.dissimilarity)?;
                rows.append(cell)?;
            }
            entry.set_item("per_url", rows)?;
            entry.set_item("mean_dissimilarity", report.mean_dissimilarity)?;
            out.append(entry)?;
        }
        Ok(out)
    }

    /// Rendered pairwise report: `format` is table, csv, or json.
    #[pyo3(signature = (mode = "frame", format = "table"))]
    fn render_report(&self, mode: &str, format: &str) -> PyResult<String> {
        let reports = self
            .inner
            .pairwise_report(parse_mode(mode)?)
            .map_err(value_error)?;
        match format {
            "table" => Ok(tlsprint_core::report::render_table(&reports)),
            "csv" => Ok(tlsprint_core::report::render_csv(&reports)),
            "json" => Ok(tlsprint_core::report::render_json(&reports)),
            other => Err(PyValueError::new_err(format!(
                "unknown format {other:?}, expected table|csv|json"
            ))),
        }
    }

    /// Rank stored browsers against an unknown vector. Returns a dict with
    /// `decision`, `margin`, and the `ranked` list.
    #[pyo3(signature = (lengths, mode = "frame"))]
    fn classify<'py>(
        &self,
        py: Python<'py>,
        lengths: Vec<u32>,
        mode: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        let unknown = length_vector(lengths)?;
        let result = self
            .inner
            .classify(&unknown, parse_mode(mode)?)
            .map_err(value_error)?;
        let out = PyDict::new(py);
        out.set_item("decision", result.decision.clone())?;
        out.set_item("margin", result.margin)?;
        let ranked = PyList::empty(py);
        for entry in &result.ranked {
            let row = PyDict::new(py);
            row.set_item("browser", entry.browser.clone())?;
            row.set_item("best_similarity", entry.best_similarity)?;
            row.set_item("matched_url", entry.matched_url.clone())?;
            ranked.append(row)?;
        }
        out.set_item("ranked", ranked)?;
        Ok(out)
    }

    /// Write the store as JSON lines.
    fn save(&self, path: &str) -> PyResult<()> {
        self.inner
            .save(std::path::Path::new(path))
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// Load a JSON-lines store. Returns `(db, malformed)` where `malformed`
    /// lists `(line_number, message)` pairs for lines that were skipped.
    #[staticmethod]
    fn load(path: &str) -> PyResult<(Self, Vec<(usize, String)>)> {
        let outcome = db::FingerprintDb::load(std::path::Path::new(path))
            .map_err(|e| PyIOError::new_err(e.to_string()))?;
        let malformed = outcome
            .malformed
            .into_iter()
            .map(|m| (m.line, m.message))
            .collect();
        Ok((
            FingerprintDb {
                inner: outcome.db,
            },
            malformed,
        ))
    }
}

#[pymodule]
fn tlsprint_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_dissimilarity, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(extract_vectors, m)?)?;
    m.add_function(wrap_pyfunction!(synth_session, m)?)?;
    m.add_class::<FingerprintDb>()?;
    Ok(())
}
