//! `cortexsim` command line.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::engine::{AddrRange, Engine, EngineConfig, DEFAULT_TM_MINICOLUMNS};
use crate::netio::auditory::{
    gen_auditory, AuditoryConfig, AuditoryLayout, EXCITATORY_TYPES, INHIBITORY_TYPES,
};
use crate::netio::figures::{activity_grid, grid_csv, trace_csv};
use crate::netio::records::{read_events, read_stats};
use crate::netio::{load_network, parse_stimulus, FileSink};

#[derive(Parser, Debug)]
#[command(
    name = "cortexsim",
    version,
    about = "Time-multiplexed spiking cortex simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the auditory-cortex network and tone-sweep stimulus.
    GenAuditory(GenArgs),
    /// Run a network with a stimulus file.
    Run(RunArgs),
    /// Parse and validate a network file.
    Validate {
        #[arg(long)]
        net: PathBuf,
    },
    /// Turn event and stats records into channel grids and an activity trace.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = 10)]
    pub channels: u32,
    #[arg(long, default_value_t = 10)]
    pub hypercolumns: u32,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub stim: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub sweep_ms: u64,
    #[arg(long, default_value_t = 10)]
    pub repeats: u64,
    /// Long-run mean rate of each Poisson source in Hz.
    #[arg(long, default_value_t = 10.0)]
    pub rate_hz: f64,
    /// Weight code (-8..7) of Poisson source events onto L4 excitatory neurons.
    #[arg(long, default_value_t = AuditoryConfig::default().poisson_weight, allow_hyphen_values = true)]
    pub poisson_weight: i32,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub stim: Option<PathBuf>,
    #[arg(long)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TM_MINICOLUMNS)]
    pub tm_minicolumns: usize,
    /// Readout gate (0..1023); calibrated from the segment count when omitted.
    #[arg(long)]
    pub f_gate: Option<u16>,
    /// Monitored address ranges, `lo-hi` in hex, comma separated.
    #[arg(long)]
    pub monitor: Option<String>,
    #[arg(long)]
    pub spikes: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Maximum events read per axon opportunity.
    #[arg(long, default_value_t = crate::axon::DEFAULT_BURST)]
    pub burst: usize,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Generated network file; supplies the channel layout.
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[arg(long)]
    pub channels: Option<u32>,
    #[arg(long)]
    pub hypercolumns: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub bin_ms: u64,
    /// Grid length in ms; defaults to the stats length or the last event.
    #[arg(long)]
    pub duration_ms: Option<u64>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn parse_monitor(list: &str) -> Result<Vec<AddrRange>> {
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi) = part.split_once('-').unwrap_or((part, part));
        let lo = u32::from_str_radix(lo.trim(), 16)
            .with_context(|| format!("bad monitor range '{part}'"))?;
        let hi = u32::from_str_radix(hi.trim(), 16)
            .with_context(|| format!("bad monitor range '{part}'"))?;
        if lo > hi {
            bail!("monitor range '{part}' is empty");
        }
        out.push(AddrRange { lo, hi });
    }
    Ok(out)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenAuditory(a) => {
            let cfg = AuditoryConfig {
                channels: a.channels,
                hypercolumns: a.hypercolumns,
                seed: a.seed,
                sweep_ms: a.sweep_ms,
                repeats: a.repeats,
                rate_hz: a.rate_hz,
                poisson_weight: a.poisson_weight,
                ..Default::default()
            };
            let (net, stim) = gen_auditory(&cfg)?;
            fs::write(&a.out, net).with_context(|| format!("writing {}", a.out.display()))?;
            fs::write(&a.stim, stim).with_context(|| format!("writing {}", a.stim.display()))?;
        }
        Command::Validate { net } => {
            let (_, lut) =
                load_network(&read(&net)?).with_context(|| format!("in {}", net.display()))?;
            println!("{}: ok, {} ranges", net.display(), lut.range_count());
        }
        Command::Run(a) => run(a)?,
        Command::Report(a) => report(a)?,
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let (_, lut) =
        load_network(&read(&a.net)?).with_context(|| format!("in {}", a.net.display()))?;
    let stim = match &a.stim {
        Some(p) => parse_stimulus(&read(p)?).with_context(|| format!("in {}", p.display()))?,
        None => Vec::new(),
    };
    let cfg = EngineConfig {
        tm_minicolumns: a.tm_minicolumns,
        burst: a.burst,
        gate: a.f_gate,
        seed: a.seed,
        monitor: a
            .monitor
            .as_deref()
            .map(parse_monitor)
            .transpose()?
            .unwrap_or_default(),
        workers: a.workers,
        ..Default::default()
    };
    if let Some(f) = a.f_gate {
        if f > crate::axon::GATE_MAX {
            bail!("--f-gate {f} exceeds 1023");
        }
    }
    let mut engine = Engine::new(cfg, &lut)?;
    engine.inject(stim)?;
    let mut sink = FileSink::create(a.spikes.as_deref(), a.events.as_deref(), a.stats.as_deref())?;
    let summary = engine.run(a.steps, &mut sink)?;
    println!("{summary}");
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    if a.events.is_none() && a.stats.is_none() {
        bail!("report needs --events and/or --stats");
    }
    let layout = match (&a.net, a.channels, a.hypercolumns) {
        (Some(net), _, _) => AuditoryLayout::from_meta(&read(net)?)
            .with_context(|| format!("{} has no auditory layout comment", net.display()))?,
        (None, Some(c), Some(h)) => AuditoryLayout::new(c, h)?,
        _ => bail!("report needs --net or both --channels and --hypercolumns"),
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let stats = match &a.stats {
        Some(p) => {
            read_stats(read(p)?.as_bytes()).with_context(|| format!("in {}", p.display()))?
        }
        None => Vec::new(),
    };
    if !stats.is_empty() || a.stats.is_some() {
        fs::write(a.out.join("active_trace.csv"), trace_csv(&stats))?;
    }
    if let Some(p) = &a.events {
        let events =
            read_events(read(p)?.as_bytes()).with_context(|| format!("in {}", p.display()))?;
        let duration = a.duration_ms.unwrap_or_else(|| {
            let last = events.iter().map(|e| e.t + 1).max().unwrap_or(0);
            last.max(stats.len() as u64)
        });
        for (name, types) in [
            ("rates_excitatory.csv", &EXCITATORY_TYPES),
            ("rates_inhibitory.csv", &INHIBITORY_TYPES),
        ] {
            let grid = activity_grid(&events, &layout, types, a.bin_ms, duration);
            fs::write(a.out.join(name), grid_csv(&grid, a.bin_ms))?;
        }
    }
    Ok(())
}
