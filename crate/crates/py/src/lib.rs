//! Python bindings. Markings cross the boundary as
//! `{place: {label: count}}` dicts; nets and scenarios as JSON text.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

use changenet::analysis::{check_consistency, export_dot, reachable, Verdict, DEFAULT_BOUND};
use changenet::scenario::{load_scenario, load_scenario_file, ScenarioConfig};
use changenet::{Marking, PlaceId, TransitionId};

type RawMarking = BTreeMap<String, BTreeMap<String, u32>>;

fn to_marking(raw: RawMarking) -> Marking {
    let mut m = Marking::new();
    for (place, bag) in raw {
        for (label, count) in bag {
            m.add(&PlaceId::new(&place), &changenet::TokenLabel::new(&label), count);
        }
    }
    m
}

fn from_marking(m: &Marking) -> RawMarking {
    m.iter()
        .map(|(p, bag)| (p.to_string(), bag.iter().map(|(l, &c)| (l.to_string(), c)).collect()))
        .collect()
}

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A validated labeled Petri net.
#[pyclass(name = "Net", module = "pychangenet", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyNet(changenet::Net);

#[pymethods]
impl PyNet {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text).map(PyNet).map_err(value_error)
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.0).expect("plain data")
    }

    fn to_dot(&self, marking: Option<RawMarking>) -> String {
        let m = marking.map(to_marking);
        export_dot(&self.0, m.as_ref())
    }

    fn places(&self) -> Vec<String> {
        self.0.places().map(|p| p.to_string()).collect()
    }

    fn transitions(&self) -> Vec<String> {
        self.0.transitions().map(|t| t.to_string()).collect()
    }

    #[getter]
    fn p_in(&self) -> String {
        self.0.p_in().to_string()
    }

    #[getter]
    fn p_out(&self) -> String {
        self.0.p_out().to_string()
    }

    fn enabled(&self, marking: RawMarking, transition: &str) -> PyResult<bool> {
        changenet::enabled(&self.0, &to_marking(marking), &TransitionId::new(transition)).map_err(value_error)
    }

    /// Fires one transition and returns the successor marking.
    fn fire(&self, marking: RawMarking, transition: &str) -> PyResult<RawMarking> {
        changenet::fire(&self.0, &to_marking(marking), &TransitionId::new(transition))
            .map(|m| from_marking(&m))
            .map_err(value_error)
    }

    fn fire_sequence(&self, marking: RawMarking, transitions: Vec<String>) -> PyResult<RawMarking> {
        let seq: Vec<TransitionId> = transitions.iter().map(TransitionId::new).collect();
        changenet::fire_sequence(&self.0, &to_marking(marking), &seq)
            .map(|m| from_marking(&m))
            .map_err(value_error)
    }

    /// Returns `(marking_count, truncated)`.
    #[pyo3(signature = (marking, bound = DEFAULT_BOUND))]
    fn reachable_count(&self, marking: RawMarking, bound: usize) -> (usize, bool) {
        let set = reachable(&self.0, &to_marking(marking), bound);
        (set.len(), set.truncated)
    }

    /// Returns `(verdict, witness)`; verdict is "true", "false" or
    /// "indeterminate".
    #[pyo3(signature = (marking, bound = DEFAULT_BOUND))]
    fn consistency(&self, marking: RawMarking, bound: usize) -> (String, Option<Vec<String>>) {
        let result = check_consistency(&self.0, &to_marking(marking), bound);
        let witness = result
            .as_ref()
            .ok()
            .and_then(|c| c.witness.as_ref())
            .map(|w| w.iter().map(|t| t.to_string()).collect());
        (Verdict::of(&result).to_string(), witness)
    }

    fn __repr__(&self) -> String {
        format!(
            "Net(places={}, transitions={}, arcs={})",
            self.0.place_count(),
            self.0.transition_count(),
            self.0.arc_count()
        )
    }
}

/// Result of a simulation run.
#[pyclass(name = "Trace", module = "pychangenet", frozen)]
struct PyTrace {
    #[pyo3(get)]
    lines: Vec<String>,
    #[pyo3(get)]
    status: String,
    #[pyo3(get)]
    exit_code: i32,
    #[pyo3(get)]
    ticks: u64,
    #[pyo3(get)]
    generations: u64,
}

#[pymethods]
impl PyTrace {
    fn text(&self) -> String {
        self.lines.iter().map(|l| format!("{l}\n")).collect()
    }

    fn __repr__(&self) -> String {
        format!("Trace(status={}, ticks={}, lines={})", self.status, self.ticks, self.lines.len())
    }
}

#[pyclass(name = "Scenario", module = "pychangenet", frozen)]
struct PyScenario(ScenarioConfig);

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_scenario_file(&path).map(PyScenario).map_err(value_error)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        load_scenario(text).map(PyScenario).map_err(value_error)
    }

    /// The built-in healthcare orchestration with no faults scheduled.
    #[staticmethod]
    fn healthcare() -> Self {
        PyScenario(changenet::scenario::healthcare_scenario())
    }

    #[getter]
    fn name(&self) -> String {
        self.0.name.clone()
    }

    fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.0).expect("plain data")
    }

    /// Flattened process net.
    fn process_net(&self) -> PyNet {
        PyNet(self.0.process_net())
    }

    fn initial_marking(&self) -> RawMarking {
        from_marking(&self.0.initial(&self.0.process_net()))
    }

    fn run(&self, py: Python<'_>) -> PyResult<PyTrace> {
        let trace = py.detach(|| changenet::simenv::run(&self.0)).map_err(value_error)?;
        Ok(PyTrace {
            status: trace.status().to_string(),
            exit_code: trace.exit_code(),
            ticks: trace.ticks,
            generations: trace.state.pnac.generation,
            lines: trace.lines,
        })
    }

    /// Runs `count` random fault schedules; returns `None` when every case
    /// passes, else a dict describing the first failure.
    #[pyo3(signature = (count = 50, seed = None))]
    fn fuzz(&self, py: Python<'_>, count: u32, seed: Option<u64>) -> PyResult<Option<BTreeMap<String, String>>> {
        let seed = seed.unwrap_or(self.0.seed);
        let report = py.detach(|| changenet::fuzz::fuzz(&self.0, count, seed)).map_err(value_error)?;
        Ok(report.failure.map(|f| {
            BTreeMap::from([
                ("case".to_owned(), f.case.to_string()),
                ("case_seed".to_owned(), f.case_seed.to_string()),
                ("invariant".to_owned(), f.violation.invariant.to_owned()),
                ("detail".to_owned(), f.violation.detail),
                ("reproducer".to_owned(), serde_json::to_string(&f.reproducer).expect("plain data")),
            ])
        }))
    }
}

/// Change-net template for one service: `(net, initial_marking)`.
/// `kind` is "nonfunctional" or "functional".
#[pyfunction]
#[pyo3(signature = (service_id, kind = "nonfunctional"))]
fn change_template(service_id: &str, kind: &str) -> PyResult<(PyNet, RawMarking)> {
    let t = match kind {
        "nonfunctional" => changenet::change::nonfunctional_template(service_id),
        "functional" => changenet::change::functional_template(service_id),
        other => return Err(PyKeyError::new_err(format!("unknown template kind `{other}`"))),
    };
    Ok((PyNet(t.net), from_marking(&t.initial)))
}

#[pymodule]
fn pychangenet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNet>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyTrace>()?;
    m.add_function(wrap_pyfunction!(change_template, m)?)?;
    m.add("DEFAULT_BOUND", DEFAULT_BOUND)?;
    Ok(())
}
