//! Time-multiplexed step loop.
//!
//! The TM slot space is cut into segments of 1024 slots. Every segment gets
//! one axon opportunity whose read-out flows into the arbiters; then the
//! segment's bound slots are flushed, stepped (in parallel, one RNG stream
//! per slot and step) and committed in slot order. Quiescent slots are
//! released at the end of the step.

use std::collections::VecDeque;
use std::io;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::axon::{AxonArray, AxonConfig, AxonError, DelayedEvent, Event, DEFAULT_BURST};
use crate::fixed::{Code4, Count4, MiniAddr};
use crate::neuron::{MinicolumnKernel, NeuronState, NEURONS_PER_MINICOLUMN, NEURON_TYPES};
use crate::param_lut::ParamLut;
use crate::rng::RngStream;
use crate::synapse::{
    map_destinations, modulate, ArbiterBank, PreSynapticContribution, SynapseError, ARBITERS,
};

pub const SEGMENT_SIZE: usize = 1024;
pub const MAX_TM_MINICOLUMNS: usize = 1 << 20;
pub const DEFAULT_TM_MINICOLUMNS: usize = 176 * 1024;
/// Key separating the axon stream from per-slot streams.
const AXON_STREAM: u64 = u64::MAX;
/// Destination lists kept before the cache is cleared.
const DEST_CACHE_LIMIT: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Axon(#[from] AxonError),
    #[error("step {t}: {source}; {active} slots bound, occupancy per arbiter {occupancy:?}")]
    ArbiterFull {
        t: u64,
        source: SynapseError,
        active: usize,
        occupancy: [u32; ARBITERS],
    },
    #[error("stimulus event at t={t} follows an event at t={prev}")]
    Unsorted { t: u64, prev: u64 },
    #[error("stimulus event at t={t} is in the past (next step is {next})")]
    Past { t: u64, next: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Inclusive address range for monitoring.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AddrRange {
    pub lo: u32,
    pub hi: u32,
}

impl AddrRange {
    pub fn contains(&self, a: MiniAddr) -> bool {
        (self.lo..=self.hi).contains(&a.raw())
    }
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub tm_minicolumns: usize,
    pub burst: usize,
    /// `None` picks the light-load calibration for this segment count.
    pub gate: Option<u16>,
    pub seed: u64,
    /// Empty means everything is monitored.
    pub monitor: Vec<AddrRange>,
    pub class_capacity: usize,
    pub staging_capacity: usize,
    /// 0 lets the thread pool choose.
    pub workers: usize,
    pub bypass: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let axon = AxonConfig::default();
        Self {
            tm_minicolumns: DEFAULT_TM_MINICOLUMNS,
            burst: DEFAULT_BURST,
            gate: None,
            seed: 0,
            monitor: Vec::new(),
            class_capacity: axon.class_capacity,
            staging_capacity: axon.staging_capacity,
            workers: 0,
            bypass: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let tm = self.tm_minicolumns;
        if tm == 0 || !tm.is_multiple_of(SEGMENT_SIZE) || tm > MAX_TM_MINICOLUMNS {
            return Err(EngineError::Config(format!(
                "tm_minicolumns {tm} must be a positive multiple of 1024 up to 2^20"
            )));
        }
        if self.burst == 0 {
            return Err(EngineError::Config("burst must be at least 1".into()));
        }
        Ok(())
    }

    pub fn segments(&self) -> usize {
        self.tm_minicolumns / SEGMENT_SIZE
    }

    pub fn effective_gate(&self) -> u16 {
        self.gate
            .unwrap_or_else(|| crate::axon::DelayGenerator::calibrated_gate(self.segments()))
    }

    fn monitored(&self, a: MiniAddr) -> bool {
        self.monitor.is_empty() || self.monitor.iter().any(|r| r.contains(a))
    }
}

/// Modeled hardware wall time of one step in ns:
/// `(tm / 1024) * (1024 + slot_cycles) * clock_ns`.
pub fn hw_time_model(tm_minicolumns: usize, slot_cycles: u32, clock_ns: f64) -> f64 {
    (tm_minicolumns / SEGMENT_SIZE) as f64 * (SEGMENT_SIZE as f64 + slot_cycles as f64) * clock_ns
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepStats {
    pub t: u64,
    pub active: usize,
    pub occupancy: [u32; ARBITERS],
    pub events_tx: u64,
    pub events_rx: u64,
    pub spikes: u64,
    pub updated: u64,
    pub stall_opportunities: u64,
}

/// Receives per-step output records.
pub trait RecordSink {
    fn spike(&mut self, _t: u64, _addr: MiniAddr, _bitmap: u128) -> io::Result<()> {
        Ok(())
    }
    fn event(&mut self, _t: u64, _ev: &Event) -> io::Result<()> {
        Ok(())
    }
    fn stats(&mut self, _s: &StepStats) -> io::Result<()> {
        Ok(())
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

pub struct NullSink;

impl RecordSink for NullSink {}

/// Keeps every record in memory.
#[derive(Clone, Debug, Default)]
pub struct MemorySink {
    pub spikes: Vec<(u64, MiniAddr, u128)>,
    pub events: Vec<(u64, Event)>,
    pub stats: Vec<StepStats>,
}

impl RecordSink for MemorySink {
    fn spike(&mut self, t: u64, addr: MiniAddr, bitmap: u128) -> io::Result<()> {
        self.spikes.push((t, addr, bitmap));
        Ok(())
    }
    fn event(&mut self, t: u64, ev: &Event) -> io::Result<()> {
        self.events.push((t, *ev));
        Ok(())
    }
    fn stats(&mut self, s: &StepStats) -> io::Result<()> {
        self.stats.push(s.clone());
        Ok(())
    }
}

/// Packed per-slot neuron state, 100 bytes per TM slot.
///
/// Segments are copied out before stepping and written back afterwards, so
/// the data being computed never aliases the data being stored.
#[derive(Clone, Debug)]
pub struct StateStore {
    bytes: Vec<u8>,
}

impl StateStore {
    pub fn new(tm_minicolumns: usize) -> Self {
        Self {
            bytes: vec![0; tm_minicolumns * NEURONS_PER_MINICOLUMN],
        }
    }

    pub fn load(&self, slot: u32) -> [NeuronState; NEURONS_PER_MINICOLUMN] {
        let base = slot as usize * NEURONS_PER_MINICOLUMN;
        std::array::from_fn(|n| NeuronState::unpack(self.bytes[base + n]))
    }

    pub fn store(&mut self, slot: u32, states: &[NeuronState; NEURONS_PER_MINICOLUMN]) {
        self.store_packed(slot, &states.map(NeuronState::pack));
    }

    pub fn load_packed(&self, slot: u32) -> [u8; NEURONS_PER_MINICOLUMN] {
        let base = slot as usize * NEURONS_PER_MINICOLUMN;
        self.bytes[base..base + NEURONS_PER_MINICOLUMN]
            .try_into()
            .unwrap()
    }

    pub fn store_packed(&mut self, slot: u32, packed: &[u8; NEURONS_PER_MINICOLUMN]) {
        let base = slot as usize * NEURONS_PER_MINICOLUMN;
        self.bytes[base..base + NEURONS_PER_MINICOLUMN].copy_from_slice(packed);
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub steps: u64,
    pub wall_seconds: f64,
    pub neuron_updates: u64,
    pub spikes: u64,
    pub events_tx: u64,
    pub events_rx: u64,
    pub peak_active: usize,
    pub mean_active: f64,
    pub gate: u16,
    /// Realized mean class-1 residence in steps, if any class-1 event was read.
    pub class1_delay_steps: Option<f64>,
    pub hw_step_ns: f64,
}

impl RunSummary {
    pub fn updates_per_second(&self) -> f64 {
        if self.wall_seconds > 0.0 {
            self.neuron_updates as f64 / self.wall_seconds
        } else {
            0.0
        }
    }
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "steps: {}", self.steps)?;
        writeln!(f, "wall time: {:.3} s", self.wall_seconds)?;
        writeln!(f, "neuron updates: {}", self.neuron_updates)?;
        writeln!(f, "neuron updates/sec: {:.3e}", self.updates_per_second())?;
        writeln!(f, "spikes: {}", self.spikes)?;
        writeln!(f, "events tx/rx: {}/{}", self.events_tx, self.events_rx)?;
        writeln!(
            f,
            "active minicolumns: peak {} mean {:.1}",
            self.peak_active, self.mean_active
        )?;
        writeln!(f, "gate f: {}", self.gate)?;
        match self.class1_delay_steps {
            Some(d) => writeln!(f, "class-1 mean delay: {d:.3} steps")?,
            None => writeln!(f, "class-1 mean delay: n/a")?,
        }
        write!(f, "modeled hardware step: {:.0} ns", self.hw_step_ns)
    }
}

struct Work {
    slot: u32,
    addr: MiniAddr,
    w: [Code4; NEURON_TYPES],
    kernel: usize,
    packed: [u8; NEURONS_PER_MINICOLUMN],
    counts: [Count4; NEURON_TYPES],
    spikes: u128,
}

/// Borrowed or shared parameter LUT.
#[derive(Clone)]
enum LutRef<'a> {
    Borrowed(&'a ParamLut),
    Shared(Arc<ParamLut>),
}

impl std::ops::Deref for LutRef<'_> {
    type Target = ParamLut;
    fn deref(&self) -> &ParamLut {
        match self {
            LutRef::Borrowed(l) => l,
            LutRef::Shared(l) => l,
        }
    }
}

pub struct Engine<'a> {
    cfg: EngineConfig,
    lut: LutRef<'a>,
    axon: AxonArray,
    bank: ArbiterBank,
    states: StateStore,
    /// One per parameter type of the LUT.
    kernels: Vec<MinicolumnKernel>,
    axon_rng: RngStream,
    pending: VecDeque<(u64, Event)>,
    last_stim_t: Option<u64>,
    pool: rayon::ThreadPool,
    dest_cache: FxHashMap<(u32, u8), Box<[MiniAddr]>>,
    t: u64,
    step: StepStats,
}

impl Engine<'static> {
    /// Engine that shares ownership of its LUT.
    pub fn shared(cfg: EngineConfig, lut: Arc<ParamLut>) -> Result<Self, EngineError> {
        Self::with_lut(cfg, LutRef::Shared(lut))
    }
}

impl<'a> Engine<'a> {
    pub fn new(cfg: EngineConfig, lut: &'a ParamLut) -> Result<Self, EngineError> {
        Self::with_lut(cfg, LutRef::Borrowed(lut))
    }

    fn with_lut(cfg: EngineConfig, lut: LutRef<'a>) -> Result<Self, EngineError> {
        cfg.validate()?;
        let axon = AxonArray::new(&AxonConfig {
            gate: cfg.effective_gate(),
            burst: cfg.burst,
            class_capacity: cfg.class_capacity,
            staging_capacity: cfg.staging_capacity,
        })?;
        let mut bank = ArbiterBank::for_tm_minicolumns(cfg.tm_minicolumns);
        bank.set_bypass(cfg.bypass);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| EngineError::Config(e.to_string()))?;
        Ok(Self {
            axon_rng: RngStream::derive(cfg.seed, &[AXON_STREAM]),
            states: StateStore::new(cfg.tm_minicolumns),
            kernels: lut
                .param_types()
                .iter()
                .map(|p| MinicolumnKernel::new(&p.layout, &p.types))
                .collect(),
            cfg,
            lut,
            axon,
            bank,
            pending: VecDeque::new(),
            last_stim_t: None,
            pool,
            dest_cache: FxHashMap::default(),
            t: 0,
            step: StepStats::default(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn axon(&self) -> &AxonArray {
        &self.axon
    }

    pub fn bank(&self) -> &ArbiterBank {
        &self.bank
    }

    /// Next step to run.
    pub fn time(&self) -> u64 {
        self.t
    }

    /// Queues external events; each enters the axon at the start of its step.
    pub fn inject(
        &mut self,
        events: impl IntoIterator<Item = (u64, Event)>,
    ) -> Result<(), EngineError> {
        for (t, ev) in events {
            if let Some(prev) = self.last_stim_t {
                if t < prev {
                    return Err(EngineError::Unsorted { t, prev });
                }
            }
            if t < self.t {
                return Err(EngineError::Past { t, next: self.t });
            }
            self.last_stim_t = Some(t);
            self.pending.push_back((t, ev));
        }
        Ok(())
    }

    /// Accumulates one read-out event into the arbiters.
    fn deliver(&mut self, ev: &DelayedEvent) -> Result<(), SynapseError> {
        let Some(rule) = self.lut.pre_connection(ev.source, ev.slot) else {
            return Ok(());
        };
        let w = modulate(&ev.counts, rule);
        if w.iter().all(|x| *x == Code4::ZERO) {
            return Ok(());
        }
        if self.dest_cache.len() >= DEST_CACHE_LIMIT {
            self.dest_cache.clear();
        }
        let seed = self.lut.seed();
        let dests = self
            .dest_cache
            .entry((ev.source.raw(), ev.slot))
            .or_insert_with(|| map_destinations(seed, ev, rule).into_boxed_slice());
        for &dest in dests.iter() {
            let (slot, newly) = self.bank.accumulate(&PreSynapticContribution { dest, w })?;
            if newly {
                self.states
                    .store_packed(slot, self.kernels[self.lut.param_type_of(dest)].rest());
            }
        }
        Ok(())
    }

    fn opportunity(&mut self) -> Result<(), EngineError> {
        let out = self.axon.opportunity(&mut self.axon_rng);
        self.step.events_rx += out.len() as u64;
        for ev in &out {
            self.deliver(ev).map_err(|e| self.arbiter_full(e))?;
        }
        Ok(())
    }

    fn arbiter_full(&self, source: SynapseError) -> EngineError {
        EngineError::ArbiterFull {
            t: self.t,
            source,
            active: self.bank.bound_count(),
            occupancy: self.bank.occupancy(),
        }
    }

    fn emit(&mut self, ev: &Event) {
        let post = self.lut.post_connections(ev.source);
        self.step.events_tx += self.axon.tx_enqueue(ev, post) as u64;
    }

    /// Runs one logical millisecond.
    pub fn run_step(&mut self, sink: &mut dyn RecordSink) -> Result<StepStats, EngineError> {
        let t = self.t;
        self.step = StepStats {
            t,
            ..Default::default()
        };

        while let Some(&(et, ev)) = self.pending.front() {
            if et > t {
                break;
            }
            self.pending.pop_front();
            self.emit(&ev);
        }

        let seed = self.cfg.seed;
        let lut = self.lut.clone();
        let mut quiescent = Vec::new();
        for seg in 0..self.cfg.segments() {
            self.opportunity()?;

            let lo = (seg * SEGMENT_SIZE) as u32;
            let slots = self.bank.bound_in(lo, lo + SEGMENT_SIZE as u32);
            if slots.is_empty() {
                continue;
            }
            let mut work: Vec<Work> = slots
                .into_iter()
                .map(|slot| {
                    let (addr, w) = self.bank.flush(slot);
                    Work {
                        slot,
                        addr,
                        w,
                        kernel: lut.param_type_of(addr),
                        packed: self.states.load_packed(slot),
                        counts: [Count4::ZERO; NEURON_TYPES],
                        spikes: 0,
                    }
                })
                .collect();

            let kernels = &self.kernels;
            self.pool.install(|| {
                work.par_iter_mut().with_min_len(8).for_each(|item| {
                    let mut rng = RngStream::derive(seed, &[item.slot as u64, t]);
                    let out = kernels[item.kernel].step_packed(&mut item.packed, &item.w, &mut rng);
                    item.counts = out.counts;
                    item.spikes = out.spikes;
                });
            });

            for item in &work {
                self.states.store_packed(item.slot, &item.packed);
                self.step.updated += 1;
                if item.w.iter().all(|x| *x == Code4::ZERO)
                    && item.packed == *self.kernels[item.kernel].rest()
                {
                    quiescent.push(item.slot);
                }
                if item.spikes == 0 {
                    continue;
                }
                let ev = Event {
                    source: item.addr,
                    counts: item.counts,
                };
                self.step.spikes += item.spikes.count_ones() as u64;
                if self.cfg.monitored(item.addr) {
                    sink.spike(t, item.addr, item.spikes)?;
                    sink.event(t, &ev)?;
                }
                self.emit(&ev);
                while self.axon.backpressure() {
                    self.step.stall_opportunities += 1;
                    self.opportunity()?;
                }
            }
        }

        for slot in quiescent {
            if self.bank.is_bound(slot) && !self.bank.is_pending(slot) {
                self.bank.release(slot);
            }
        }

        self.step.active = self.bank.bound_count();
        self.step.occupancy = self.bank.occupancy();
        sink.stats(&self.step)?;
        self.t += 1;
        Ok(self.step.clone())
    }

    pub fn run(
        &mut self,
        steps: u64,
        sink: &mut dyn RecordSink,
    ) -> Result<RunSummary, EngineError> {
        let start = Instant::now();
        let mut sum = RunSummary {
            gate: self.axon.generator().gate(),
            hw_step_ns: hw_time_model(self.cfg.tm_minicolumns, 200, 5.0),
            ..Default::default()
        };
        let mut active_total = 0u64;
        for _ in 0..steps {
            let s = self.run_step(sink)?;
            sum.steps += 1;
            sum.neuron_updates += s.updated * NEURONS_PER_MINICOLUMN as u64;
            sum.spikes += s.spikes;
            sum.events_tx += s.events_tx;
            sum.events_rx += s.events_rx;
            sum.peak_active = sum.peak_active.max(s.active);
            active_total += s.active as u64;
        }
        sink.flush()?;
        sum.wall_seconds = start.elapsed().as_secs_f64();
        if sum.steps > 0 {
            sum.mean_active = active_total as f64 / sum.steps as f64;
        }
        sum.class1_delay_steps = self
            .axon
            .stats()
            .mean(1)
            .map(|opps| opps / self.cfg.segments() as f64);
        Ok(sum)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::Count4;
    use crate::neuron::{MinicolumnLayout, NeuronTypeParams};
    use crate::param_lut::{
        ConnectionRule, ConnectionSet, MinicolumnParams, PostConnection, RangeCam, RangeRecord,
    };

    fn single_lut(conn: ConnectionSet) -> ParamLut {
        ParamLut::new(
            RangeCam::new(vec![0]).unwrap(),
            vec![RangeRecord {
                param_type: 0,
                conn: 0,
            }],
            vec![MinicolumnParams {
                layout: MinicolumnLayout::uniform(0).unwrap(),
                types: [NeuronTypeParams::default(); NEURON_TYPES],
            }],
            vec![conn],
            1,
        )
        .unwrap()
    }

    fn small_cfg() -> EngineConfig {
        EngineConfig {
            tm_minicolumns: 1024,
            gate: Some(0),
            burst: 1024,
            ..Default::default()
        }
    }

    #[test]
    fn hw_time_examples() {
        assert_eq!(hw_time_model(176 * 1024, 200, 5.0), 1_077_120.0);
        assert_eq!(hw_time_model(1024, 0, 5.0), 5120.0);
        assert_eq!(hw_time_model(1 << 20, 200, 5.0), 6_266_880.0);
    }

    #[test]
    fn config_validation() {
        let mut c = small_cfg();
        c.tm_minicolumns = 1000;
        assert!(c.validate().is_err());
        c.tm_minicolumns = (1 << 20) + 1024;
        assert!(c.validate().is_err());
        c.tm_minicolumns = 1 << 20;
        assert!(c.validate().is_ok());
        assert_eq!(EngineConfig::default().effective_gate(), 985);
    }

    #[test]
    fn empty_network_is_silent() {
        let lut = single_lut(ConnectionSet::default());
        let mut e = Engine::new(small_cfg(), &lut).unwrap();
        let mut sink = MemorySink::default();
        let s = e.run(20, &mut sink).unwrap();
        assert_eq!(s.spikes, 0);
        assert!(sink.stats.iter().all(|x| x.active == 0 && x.events_rx == 0));
        assert_eq!(sink.stats.len(), 20);
    }

    #[test]
    fn state_store_roundtrip() {
        let mut st = StateStore::new(1024);
        let mut s = [NeuronState::default(); 100];
        s[7].vmem = Code4::saturating(-3);
        s[99].psc = Code4::saturating(5);
        st.store(1023, &s);
        assert_eq!(st.load(1023), s);
        assert_eq!(st.load(0), [NeuronState::default(); 100]);
    }

    fn feedforward_lut() -> ParamLut {
        let w = [Code4::saturating(7); NEURON_TYPES];
        let mut masks = [0u8; NEURON_TYPES];
        masks[0] = 1;
        let mut conn = ConnectionSet {
            post: PostConnection::with_slots(&[(0, 1)]).unwrap(),
            ..Default::default()
        };
        conn.rules[0] = Some(ConnectionRule::new(1, 4, 4, w, masks).unwrap());
        let params = MinicolumnParams {
            layout: MinicolumnLayout::uniform(0).unwrap(),
            types: [NeuronTypeParams::default(); NEURON_TYPES],
        };
        ParamLut::new(
            RangeCam::new(vec![0, 4 << 7]).unwrap(),
            vec![
                RangeRecord {
                    param_type: 0,
                    conn: 0,
                },
                RangeRecord {
                    param_type: 0,
                    conn: 1,
                },
            ],
            vec![params],
            vec![conn, ConnectionSet::default()],
            1,
        )
        .unwrap()
    }

    fn kick(e: &mut Engine<'_>) {
        let src = MiniAddr::from_parts(3, 0).unwrap();
        let mut counts = [Count4::ZERO; NEURON_TYPES];
        counts[0] = Count4::saturating(1);
        e.inject([(
            0,
            Event {
                source: src,
                counts,
            },
        )])
        .unwrap();
    }

    #[test]
    fn feedforward_event_drives_target_then_quiesces() {
        let lut = feedforward_lut();
        let mut e = Engine::new(small_cfg(), &lut).unwrap();
        kick(&mut e);
        let mut sink = MemorySink::default();
        e.run(200, &mut sink).unwrap();
        assert!(sink.stats.iter().any(|s| s.active > 0));
        assert!(!sink.spikes.is_empty());
        assert!(sink
            .spikes
            .iter()
            .all(|(_, a, _)| a.hyper() == 4 && a.mini() < 4));
        assert_eq!(sink.stats.last().unwrap().active, 0, "activity dies out");
        assert_eq!(e.axon().enqueued(), e.axon().consumed());
    }

    #[test]
    fn shared_lut_matches_borrowed() {
        let lut = feedforward_lut();
        let mut a = Engine::new(small_cfg(), &lut).unwrap();
        let mut b = Engine::shared(small_cfg(), Arc::new(lut.clone())).unwrap();
        kick(&mut a);
        kick(&mut b);
        let (mut sa, mut sb) = (MemorySink::default(), MemorySink::default());
        a.run(60, &mut sa).unwrap();
        b.run(60, &mut sb).unwrap();
        assert_eq!(sa.spikes, sb.spikes);
        assert_eq!(sa.stats, sb.stats);
    }

    #[test]
    fn unsorted_stimulus_rejected() {
        let lut = single_lut(ConnectionSet::default());
        let mut e = Engine::new(small_cfg(), &lut).unwrap();
        let ev = Event {
            source: MiniAddr::default(),
            counts: [Count4::ZERO; 8],
        };
        assert!(matches!(
            e.inject([(5, ev), (4, ev)]),
            Err(EngineError::Unsorted { t: 4, prev: 5 })
        ));
    }
}
