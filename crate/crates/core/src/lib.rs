//! Time-multiplexed, dynamically assigned spiking cortex simulator with
//! stochastic fixed-point LIF neurons and hierarchical event routing.

pub mod axon;
pub mod cli;
pub mod engine;
pub mod fixed;
pub mod netio;
pub mod neuron;
pub mod param_lut;
pub mod rng;
pub mod synapse;

pub use axon::{delay_thresholds, AxonArray, DelayGenerator, DelayStore, DelayedEvent, Event};
pub use engine::{
    hw_time_model, Engine, EngineConfig, EngineError, RecordSink, RunSummary, StepStats,
};
pub use fixed::{decay_stochastic, leak_code, Code4, Count4, Gain8, Leak8, MiniAddr};
pub use neuron::{minicolumn_step, MinicolumnKernel, NeuronState, NeuronTypeParams};
pub use param_lut::ParamLut;
pub use rng::RngStream;
pub use synapse::{ArbiterBank, PreSynapticContribution, SynapseError};
