//! Python bindings: `import cortexsim`.

use std::sync::{Arc, Mutex};

use cortexsim::axon::DELAY_CLASSES;
use cortexsim::engine::{MemorySink, RunSummary};
use cortexsim::fixed::{Code4, Count4, Leak8, MiniAddr};
use cortexsim::netio::auditory::{gen_auditory as gen_files, AuditoryConfig};
use cortexsim::netio::{load_network, parse_stimulus, NetworkDesc};
use cortexsim::neuron::NEURON_TYPES;
use cortexsim::{Engine as CoreEngine, EngineConfig, Event, ParamLut};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// 8-bit leak code for a time constant in ms.
#[pyfunction]
fn leak_code(tau_ms: f64) -> PyResult<u8> {
    cortexsim::leak_code(tau_ms)
        .map(Leak8::code)
        .map_err(value_err)
}

/// One stochastic decay of a 4-bit code with dither `r` in 0..32.
#[pyfunction]
fn decay_stochastic(x: i32, leak: u8, r: u8) -> PyResult<i8> {
    if r >= 32 {
        return Err(PyValueError::new_err(format!("dither {r} out of 0..32")));
    }
    let x = Code4::new(x).map_err(value_err)?;
    Ok(cortexsim::decay_stochastic(x, Leak8::new(leak), r).code())
}

/// `(thresholds, cumulative)` for the 16 delay classes.
#[pyfunction]
fn delay_thresholds() -> (Vec<u32>, Vec<u32>) {
    let (r, cum) = cortexsim::delay_thresholds();
    debug_assert_eq!(r.len(), DELAY_CLASSES);
    (r.to_vec(), cum.to_vec())
}

/// Modelled hardware step time in ns.
#[pyfunction]
#[pyo3(signature = (tm_minicolumns, slot_cycles = 200, clock_ns = 5.0))]
fn hw_time_model(tm_minicolumns: usize, slot_cycles: u32, clock_ns: f64) -> f64 {
    cortexsim::hw_time_model(tm_minicolumns, slot_cycles, clock_ns)
}

/// Auditory network and stimulus as `(network_text, stimulus_text)`.
#[pyfunction]
#[pyo3(signature = (channels = 10, hypercolumns = 10, seed = 1, sweep_ms = 10, repeats = 10, rate_hz = 10.0))]
fn gen_auditory(
    channels: u32,
    hypercolumns: u32,
    seed: u64,
    sweep_ms: u64,
    repeats: u64,
    rate_hz: f64,
) -> PyResult<(String, String)> {
    gen_files(&AuditoryConfig {
        channels,
        hypercolumns,
        seed,
        sweep_ms,
        repeats,
        rate_hz,
        ..Default::default()
    })
    .map_err(value_err)
}

/// A parsed and validated network.
#[pyclass(frozen)]
struct Network {
    desc: NetworkDesc,
    lut: Arc<ParamLut>,
}

#[pymethods]
impl Network {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        let (desc, lut) = load_network(text).map_err(value_err)?;
        Ok(Self {
            desc,
            lut: Arc::new(lut),
        })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        Self::new(&text)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.lut.seed()
    }

    #[getter]
    fn range_count(&self) -> usize {
        self.lut.range_count()
    }

    /// Network text in canonical form.
    fn to_text(&self) -> String {
        cortexsim::netio::serialize_network(&self.desc)
    }
}

/// Simulation engine bound to one network.
#[pyclass(frozen)]
struct Engine {
    inner: Mutex<CoreEngine<'static>>,
}

fn parse_events(events: Vec<(u64, u32, Vec<u8>)>) -> PyResult<Vec<(u64, Event)>> {
    events
        .into_iter()
        .map(|(t, addr, counts)| {
            if counts.len() > NEURON_TYPES {
                return Err(PyValueError::new_err(format!(
                    "at most {NEURON_TYPES} counts per event"
                )));
            }
            let mut c = [Count4::ZERO; NEURON_TYPES];
            for (dst, n) in c.iter_mut().zip(counts) {
                *dst = Count4::new(n).map_err(value_err)?;
            }
            let source = MiniAddr::new(addr).map_err(value_err)?;
            Ok((t, Event { source, counts: c }))
        })
        .collect()
}

fn summary_dict<'py>(py: Python<'py>, s: &RunSummary) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("steps", s.steps)?;
    d.set_item("wall_seconds", s.wall_seconds)?;
    d.set_item("neuron_updates", s.neuron_updates)?;
    d.set_item("updates_per_second", s.updates_per_second())?;
    d.set_item("spikes", s.spikes)?;
    d.set_item("events_tx", s.events_tx)?;
    d.set_item("events_rx", s.events_rx)?;
    d.set_item("peak_active", s.peak_active)?;
    d.set_item("mean_active", s.mean_active)?;
    d.set_item("gate", s.gate)?;
    d.set_item("class1_delay_steps", s.class1_delay_steps)?;
    d.set_item("hw_step_ns", s.hw_step_ns)?;
    Ok(d)
}

#[pymethods]
impl Engine {
    #[new]
    #[pyo3(signature = (network, seed = 0, tm_minicolumns = None, gate = None, burst = None, workers = 0))]
    fn new(
        network: &Network,
        seed: u64,
        tm_minicolumns: Option<usize>,
        gate: Option<u16>,
        burst: Option<usize>,
        workers: usize,
    ) -> PyResult<Self> {
        let d = EngineConfig::default();
        let cfg = EngineConfig {
            tm_minicolumns: tm_minicolumns.unwrap_or(d.tm_minicolumns),
            burst: burst.unwrap_or(d.burst),
            gate,
            seed,
            workers,
            ..d
        };
        let inner = CoreEngine::shared(cfg, network.lut.clone()).map_err(value_err)?;
        Ok(Self {
            inner: Mutex::new(inner),
        })
    }

    /// Current step.
    #[getter]
    fn time(&self) -> u64 {
        self.inner.lock().unwrap().time()
    }

    /// Queue `(t, addr, counts)` events; times must not decrease.
    fn inject(&self, events: Vec<(u64, u32, Vec<u8>)>) -> PyResult<()> {
        let events = parse_events(events)?;
        self.inner.lock().unwrap().inject(events).map_err(value_err)
    }

    /// Queue events from stimulus-file text.
    fn inject_text(&self, text: &str) -> PyResult<()> {
        let events = parse_stimulus(text).map_err(value_err)?;
        self.inner.lock().unwrap().inject(events).map_err(value_err)
    }

    /// Advance `steps` ms. Returns a dict with `summary`, `stats`
    /// (`(t, active, spikes, events_tx, events_rx)`), `events`
    /// (`(t, addr, counts)`) and `spikes` (`(t, addr, bitmap)`).
    fn run<'py>(&self, py: Python<'py>, steps: u64) -> PyResult<Bound<'py, PyDict>> {
        let mut sink = MemorySink::default();
        let summary = py
            .detach(|| self.inner.lock().unwrap().run(steps, &mut sink))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let d = PyDict::new(py);
        d.set_item("summary", summary_dict(py, &summary)?)?;
        let stats: Vec<_> = sink
            .stats
            .iter()
            .map(|s| (s.t, s.active, s.spikes, s.events_tx, s.events_rx))
            .collect();
        d.set_item("stats", stats)?;
        let events: Vec<_> = sink
            .events
            .iter()
            .map(|(t, e)| (*t, e.source.raw(), e.counts.map(Count4::get).to_vec()))
            .collect();
        d.set_item("events", events)?;
        let spikes: Vec<_> = sink
            .spikes
            .iter()
            .map(|(t, a, b)| (*t, a.raw(), *b))
            .collect();
        d.set_item("spikes", spikes)?;
        Ok(d)
    }
}

#[pymodule(name = "cortexsim")]
fn cortexsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(leak_code, m)?)?;
    m.add_function(wrap_pyfunction!(decay_stochastic, m)?)?;
    m.add_function(wrap_pyfunction!(delay_thresholds, m)?)?;
    m.add_function(wrap_pyfunction!(hw_time_model, m)?)?;
    m.add_function(wrap_pyfunction!(gen_auditory, m)?)?;
    m.add_class::<Network>()?;
    m.add_class::<Engine>()?;
    m.add("NEURON_TYPES", NEURON_TYPES)?;
    m.add("DELAY_CLASSES", DELAY_CLASSES)?;
    Ok(())
}
