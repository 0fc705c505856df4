//! Stimulus files: `ev <t_ms> <addr hex> <c0> ... <c7>`, sorted by time.

use std::fmt::Write as _;

use super::{err, NetioError};
use crate::axon::Event;
use crate::fixed::{Count4, MiniAddr};
use crate::neuron::NEURON_TYPES;

pub fn parse_stimulus(text: &str) -> Result<Vec<(u64, Event)>, NetioError> {
    let mut out: Vec<(u64, Event)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let f: Vec<&str> = content.split_whitespace().collect();
        if f[0] != "ev" {
            return Err(err(line, format!("unknown keyword '{}'", f[0])));
        }
        if f.len() != 3 + NEURON_TYPES {
            return Err(err(line, format!("expected 10 fields, found {}", f.len())));
        }
        let t: u64 = f[1]
            .parse()
            .map_err(|_| err(line, format!("invalid time '{}'", f[1])))?;
        let raw_addr = u32::from_str_radix(f[2], 16)
            .map_err(|_| err(line, format!("invalid address '{}'", f[2])))?;
        let source = MiniAddr::new(raw_addr).map_err(|e| err(line, e.to_string()))?;
        let mut counts = [Count4::ZERO; NEURON_TYPES];
        for (c, s) in counts.iter_mut().zip(&f[3..]) {
            let n: u8 = s
                .parse()
                .map_err(|_| err(line, format!("invalid count '{s}'")))?;
            *c = Count4::new(n).map_err(|e| err(line, e.to_string()))?;
        }
        if let Some(&(prev, _)) = out.last() {
            if t < prev {
                return Err(err(
                    line,
                    format!("time {t} precedes the previous event at {prev}"),
                ));
            }
        }
        out.push((t, Event { source, counts }));
    }
    Ok(out)
}

pub fn serialize_stimulus(events: &[(u64, Event)]) -> String {
    let mut s = String::new();
    for (t, ev) in events {
        write!(s, "ev {t} {}", ev.source).unwrap();
        for c in ev.counts {
            write!(s, " {}", c.get()).unwrap();
        }
        s.push('\n');
    }
    s
}
