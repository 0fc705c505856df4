//! Output records.
//!
//! spikes: `t,addr,bitmap` (addr 7 hex digits, bitmap 25 hex digits, bit n = neuron n)
//! events: `t,addr,type,count`, one line per nonzero type
//! stats:  `t,active`

use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use super::{err, NetioError};
use crate::axon::Event;
use crate::engine::{RecordSink, StepStats};
use crate::fixed::MiniAddr;

/// Writes whichever record streams were given a destination.
pub struct FileSink {
    spikes: Option<Box<dyn Write>>,
    events: Option<Box<dyn Write>>,
    stats: Option<Box<dyn Write>>,
}

fn open(path: Option<&Path>) -> io::Result<Option<Box<dyn Write>>> {
    path.map(|p| File::create(p).map(|f| Box::new(BufWriter::new(f)) as Box<dyn Write>))
        .transpose()
}

impl FileSink {
    pub fn create(
        spikes: Option<&Path>,
        events: Option<&Path>,
        stats: Option<&Path>,
    ) -> io::Result<Self> {
        Ok(Self {
            spikes: open(spikes)?,
            events: open(events)?,
            stats: open(stats)?,
        })
    }

    pub fn from_writers(
        spikes: Option<Box<dyn Write>>,
        events: Option<Box<dyn Write>>,
        stats: Option<Box<dyn Write>>,
    ) -> Self {
        Self {
            spikes,
            events,
            stats,
        }
    }
}

impl RecordSink for FileSink {
    fn spike(&mut self, t: u64, addr: MiniAddr, bitmap: u128) -> io::Result<()> {
        match &mut self.spikes {
            Some(w) => writeln!(w, "{t},{addr},{bitmap:025x}"),
            None => Ok(()),
        }
    }

    fn event(&mut self, t: u64, ev: &Event) -> io::Result<()> {
        let Some(w) = &mut self.events else {
            return Ok(());
        };
        for (ty, c) in ev.counts.iter().enumerate() {
            if c.get() > 0 {
                writeln!(w, "{t},{},{ty},{}", ev.source, c.get())?;
            }
        }
        Ok(())
    }

    fn stats(&mut self, s: &StepStats) -> io::Result<()> {
        match &mut self.stats {
            Some(w) => writeln!(w, "{},{}", s.t, s.active),
            None => Ok(()),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        for w in [&mut self.spikes, &mut self.events, &mut self.stats]
            .into_iter()
            .flatten()
        {
            w.flush()?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventRecord {
    pub t: u64,
    pub addr: MiniAddr,
    pub ty: usize,
    pub count: u8,
}

fn csv_fields(line: usize, s: &str, n: usize) -> Result<Vec<&str>, NetioError> {
    let f: Vec<&str> = s.trim().split(',').collect();
    if f.len() != n {
        return Err(err(
            line,
            format!("expected {n} comma-separated fields, found {}", f.len()),
        ));
    }
    Ok(f)
}

fn dec<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, NetioError> {
    s.parse()
        .map_err(|_| err(line, format!("invalid number '{s}'")))
}

pub fn read_events(r: impl BufRead) -> Result<Vec<EventRecord>, NetioError> {
    let mut out = Vec::new();
    for (i, l) in r.lines().enumerate() {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        let f = csv_fields(i + 1, &l, 4)?;
        let raw = u32::from_str_radix(f[1], 16)
            .map_err(|_| err(i + 1, format!("invalid address '{}'", f[1])))?;
        out.push(EventRecord {
            t: dec(i + 1, f[0])?,
            addr: MiniAddr::new(raw).map_err(|e| err(i + 1, e.to_string()))?,
            ty: dec(i + 1, f[2])?,
            count: dec(i + 1, f[3])?,
        });
    }
    Ok(out)
}

pub fn read_stats(r: impl BufRead) -> Result<Vec<(u64, usize)>, NetioError> {
    let mut out = Vec::new();
    for (i, l) in r.lines().enumerate() {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        let f = csv_fields(i + 1, &l, 2)?;
        out.push((dec(i + 1, f[0])?, dec(i + 1, f[1])?));
    }
    Ok(out)
}
