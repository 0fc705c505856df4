//! Line-oriented network description.
//!
//! ```text
//! seed <u64>
//! type <ptid> <slot 0-7> <count> <tau_epsc> <tau_ipsc> <tau_mem> <tau_rfc> <g_syn> <g_psc> <v_init> <v_reset>
//! range <index> <start hex> <ptid> <conn>
//! post <conn> <slot 0-15> <delay 1-16, or 0 to declare a connection set without enabling the slot>
//! pre <conn> <slot> <offset hex> <fanout> <dest_hc_size>
//! weights <conn> <slot> <w0> ... <w7>
//! masks <conn> <slot> <m0 hex> ... <m7 hex>
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::{err, NetioError};
use crate::fixed::{Code4, MiniAddr};
use crate::neuron::{MinicolumnLayout, NeuronTypeParams, NEURON_TYPES};
use crate::param_lut::{
    ConnectionRule, ConnectionSet, MinicolumnParams, ParamLut, RangeCam, RangeRecord, MAX_RANGES,
    MAX_SLOTS,
};

/// An item tagged with its source line. Equality ignores the line.
#[derive(Clone, Debug)]
pub struct Located<T> {
    pub line: usize,
    pub item: T,
}

impl<T: PartialEq> PartialEq for Located<T> {
    fn eq(&self, other: &Self) -> bool {
        self.item == other.item
    }
}

impl<T> Located<T> {
    pub fn new(line: usize, item: T) -> Self {
        Self { line, item }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TypeLine {
    pub ptid: usize,
    pub slot: usize,
    pub count: u32,
    pub tau_epsc: f64,
    pub tau_ipsc: f64,
    pub tau_mem: f64,
    pub tau_rfc: f64,
    pub g_syn: f64,
    pub g_psc: f64,
    pub v_init: i32,
    pub v_reset: i32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RangeLine {
    pub index: usize,
    pub start: u32,
    pub ptid: usize,
    pub conn: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PostLine {
    pub conn: usize,
    pub slot: usize,
    pub delay: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreLine {
    pub conn: usize,
    pub slot: usize,
    pub offset: u32,
    pub fanout: u8,
    pub dest_hc_size: u8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightsLine {
    pub conn: usize,
    pub slot: usize,
    pub weights: [i32; NEURON_TYPES],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MasksLine {
    pub conn: usize,
    pub slot: usize,
    pub masks: [u8; NEURON_TYPES],
}

/// Parsed but not yet cross-validated network file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NetworkDesc {
    pub seed: u64,
    pub types: Vec<Located<TypeLine>>,
    pub ranges: Vec<Located<RangeLine>>,
    pub posts: Vec<Located<PostLine>>,
    pub pres: Vec<Located<PreLine>>,
    pub weights: Vec<Located<WeightsLine>>,
    pub masks: Vec<Located<MasksLine>>,
}

struct Fields<'a> {
    line: usize,
    it: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str, NetioError> {
        self.it
            .next()
            .ok_or_else(|| err(self.line, format!("missing {what}")))
    }

    fn dec<T: std::str::FromStr>(&mut self, what: &str) -> Result<T, NetioError> {
        let s = self.next(what)?;
        s.parse()
            .map_err(|_| err(self.line, format!("invalid {what} '{s}'")))
    }

    fn hex(&mut self, what: &str) -> Result<u32, NetioError> {
        let s = self.next(what)?;
        u32::from_str_radix(s.trim_start_matches("0x"), 16)
            .map_err(|_| err(self.line, format!("invalid hex {what} '{s}'")))
    }

    fn finish(mut self) -> Result<(), NetioError> {
        match self.it.next() {
            Some(extra) => Err(err(self.line, format!("unexpected field '{extra}'"))),
            None => Ok(()),
        }
    }
}

pub fn parse_network(text: &str) -> Result<NetworkDesc, NetioError> {
    let mut d = NetworkDesc::default();
    let mut seen_seed = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut f = Fields {
            line,
            it: content.split_whitespace(),
        };
        let kw = f.next("keyword")?;
        match kw {
            "seed" => {
                if seen_seed {
                    return Err(err(line, "duplicate seed line"));
                }
                seen_seed = true;
                d.seed = f.dec("seed")?;
            }
            "type" => {
                let t = TypeLine {
                    ptid: f.dec("param type id")?,
                    slot: f.dec("type slot")?,
                    count: f.dec("neuron count")?,
                    tau_epsc: f.dec("tau_epsc")?,
                    tau_ipsc: f.dec("tau_ipsc")?,
                    tau_mem: f.dec("tau_mem")?,
                    tau_rfc: f.dec("tau_rfc")?,
                    g_syn: f.dec("g_syn")?,
                    g_psc: f.dec("g_psc")?,
                    v_init: f.dec("v_init")?,
                    v_reset: f.dec("v_reset")?,
                };
                d.types.push(Located::new(line, t));
            }
            "range" => {
                let r = RangeLine {
                    index: f.dec("range index")?,
                    start: f.hex("start address")?,
                    ptid: f.dec("param type id")?,
                    conn: f.dec("connection id")?,
                };
                d.ranges.push(Located::new(line, r));
            }
            "post" => {
                let p = PostLine {
                    conn: f.dec("connection id")?,
                    slot: f.dec("slot")?,
                    delay: f.dec("delay")?,
                };
                d.posts.push(Located::new(line, p));
            }
            "pre" => {
                let p = PreLine {
                    conn: f.dec("connection id")?,
                    slot: f.dec("slot")?,
                    offset: f.hex("offset")?,
                    fanout: f.dec("fanout")?,
                    dest_hc_size: f.dec("destination size")?,
                };
                d.pres.push(Located::new(line, p));
            }
            "weights" => {
                let conn = f.dec("connection id")?;
                let slot = f.dec("slot")?;
                let mut weights = [0i32; NEURON_TYPES];
                for w in &mut weights {
                    *w = f.dec("weight")?;
                }
                d.weights.push(Located::new(
                    line,
                    WeightsLine {
                        conn,
                        slot,
                        weights,
                    },
                ));
            }
            "masks" => {
                let conn = f.dec("connection id")?;
                let slot = f.dec("slot")?;
                let mut masks = [0u8; NEURON_TYPES];
                for m in &mut masks {
                    let v = f.hex("mask")?;
                    *m = u8::try_from(v)
                        .map_err(|_| err(line, format!("mask {v:#x} exceeds 8 bits")))?;
                }
                d.masks
                    .push(Located::new(line, MasksLine { conn, slot, masks }));
            }
            other => return Err(err(line, format!("unknown keyword '{other}'"))),
        }
        f.finish()?;
    }
    Ok(d)
}

pub fn serialize_network(d: &NetworkDesc) -> String {
    let mut s = String::new();
    writeln!(s, "seed {}", d.seed).unwrap();
    for t in &d.types {
        let t = &t.item;
        writeln!(
            s,
            "type {} {} {} {} {} {} {} {} {} {} {}",
            t.ptid,
            t.slot,
            t.count,
            t.tau_epsc,
            t.tau_ipsc,
            t.tau_mem,
            t.tau_rfc,
            t.g_syn,
            t.g_psc,
            t.v_init,
            t.v_reset
        )
        .unwrap();
    }
    for r in &d.ranges {
        let r = &r.item;
        writeln!(s, "range {} {:07x} {} {}", r.index, r.start, r.ptid, r.conn).unwrap();
    }
    for p in &d.posts {
        let p = &p.item;
        writeln!(s, "post {} {} {}", p.conn, p.slot, p.delay).unwrap();
    }
    for p in &d.pres {
        let p = &p.item;
        writeln!(
            s,
            "pre {} {} {:05x} {} {}",
            p.conn, p.slot, p.offset, p.fanout, p.dest_hc_size
        )
        .unwrap();
    }
    for w in &d.weights {
        let w = &w.item;
        write!(s, "weights {} {}", w.conn, w.slot).unwrap();
        for x in w.weights {
            write!(s, " {x}").unwrap();
        }
        s.push('\n');
    }
    for m in &d.masks {
        let m = &m.item;
        write!(s, "masks {} {}", m.conn, m.slot).unwrap();
        for x in m.masks {
            write!(s, " {x:02x}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn code4(line: usize, v: i32, what: &str) -> Result<Code4, NetioError> {
    Code4::new(v).map_err(|e| err(line, format!("{what}: {e}")))
}

/// Cross-validates the description and builds the lookup tables.
pub fn build_lut(d: &NetworkDesc) -> Result<ParamLut, NetioError> {
    // parameter types
    let mut type_slots: BTreeMap<usize, BTreeMap<usize, &Located<TypeLine>>> = BTreeMap::new();
    for t in &d.types {
        if t.item.slot >= NEURON_TYPES {
            return Err(err(
                t.line,
                format!("type slot {} outside 0..8", t.item.slot),
            ));
        }
        let slots = type_slots.entry(t.item.ptid).or_default();
        if slots.insert(t.item.slot, t).is_some() {
            return Err(err(
                t.line,
                format!(
                    "duplicate type slot {} for param type {}",
                    t.item.slot, t.item.ptid
                ),
            ));
        }
    }
    let mut ptid_index = BTreeMap::new();
    let mut param_types = Vec::new();
    for (&ptid, slots) in &type_slots {
        let mut counts = [0u32; NEURON_TYPES];
        let mut types = [NeuronTypeParams::default(); NEURON_TYPES];
        let mut last_line = 0;
        for (&slot, t) in slots {
            let x = &t.item;
            last_line = last_line.max(t.line);
            counts[slot] = x.count;
            types[slot] = NeuronTypeParams::from_physical(
                x.tau_epsc,
                x.tau_ipsc,
                x.tau_mem,
                x.tau_rfc,
                x.g_syn,
                x.g_psc,
                code4(t.line, x.v_init, "v_init")?,
                code4(t.line, x.v_reset, "v_reset")?,
            )
            .map_err(|e| err(t.line, e.to_string()))?;
        }
        let layout = MinicolumnLayout::from_counts(counts)
            .map_err(|e| err(last_line, format!("param type {ptid}: {e}")))?;
        ptid_index.insert(ptid, param_types.len());
        param_types.push(MinicolumnParams { layout, types });
    }

    // connection sets, declared by post lines
    let mut conns: BTreeMap<usize, ConnectionSet> = BTreeMap::new();
    let mut declared: BTreeSet<(usize, usize)> = BTreeSet::new();
    for p in &d.posts {
        let x = &p.item;
        if x.slot >= MAX_SLOTS {
            return Err(err(p.line, format!("slot {} outside 0..16", x.slot)));
        }
        if !declared.insert((x.conn, x.slot)) {
            return Err(err(
                p.line,
                format!("duplicate post line for conn {} slot {}", x.conn, x.slot),
            ));
        }
        let set = conns.entry(x.conn).or_default();
        if x.delay != 0 {
            set.post
                .enable(x.slot, x.delay)
                .map_err(|e| err(p.line, e.to_string()))?;
        }
    }
    let enabled = |conn: usize, slot: usize, line: usize, kind: &str| -> Result<(), NetioError> {
        match conns.get(&conn) {
            None => Err(err(
                line,
                format!("{kind} line references unknown connection {conn}"),
            )),
            Some(set) if set.post.delay(slot).is_none() => Err(err(
                line,
                format!("{kind} line for conn {conn} slot {slot}, which is not enabled"),
            )),
            Some(_) => Ok(()),
        }
    };

    let mut pres: BTreeMap<(usize, usize), &Located<PreLine>> = BTreeMap::new();
    for p in &d.pres {
        enabled(p.item.conn, p.item.slot, p.line, "pre")?;
        if pres.insert((p.item.conn, p.item.slot), p).is_some() {
            return Err(err(p.line, "duplicate pre line"));
        }
    }
    let mut weights: BTreeMap<(usize, usize), &Located<WeightsLine>> = BTreeMap::new();
    for w in &d.weights {
        enabled(w.item.conn, w.item.slot, w.line, "weights")?;
        if weights.insert((w.item.conn, w.item.slot), w).is_some() {
            return Err(err(w.line, "duplicate weights line"));
        }
    }
    let mut masks: BTreeMap<(usize, usize), &Located<MasksLine>> = BTreeMap::new();
    for m in &d.masks {
        enabled(m.item.conn, m.item.slot, m.line, "masks")?;
        if masks.insert((m.item.conn, m.item.slot), m).is_some() {
            return Err(err(m.line, "duplicate masks line"));
        }
    }

    let post_lines: BTreeMap<(usize, usize), usize> = d
        .posts
        .iter()
        .map(|p| ((p.item.conn, p.item.slot), p.line))
        .collect();
    for (conn, set) in conns.iter_mut() {
        for (slot, _) in set.post.enabled().collect::<Vec<_>>() {
            let slot = slot as usize;
            let line = post_lines[&(*conn, slot)];
            let missing = |kind: &str| {
                err(
                    line,
                    format!("conn {conn} slot {slot} is enabled but has no {kind} line"),
                )
            };
            let p = pres.get(&(*conn, slot)).ok_or_else(|| missing("pre"))?;
            let w = weights
                .get(&(*conn, slot))
                .ok_or_else(|| missing("weights"))?;
            let m = masks.get(&(*conn, slot)).ok_or_else(|| missing("masks"))?;
            let mut wc = [Code4::ZERO; NEURON_TYPES];
            for (c, &v) in wc.iter_mut().zip(&w.item.weights) {
                *c = code4(w.line, v, "weight")?;
            }
            let rule = ConnectionRule::new(
                p.item.offset,
                p.item.fanout,
                p.item.dest_hc_size,
                wc,
                m.item.masks,
            )
            .map_err(|e| err(p.line, e.to_string()))?;
            set.rules[slot] = Some(rule);
        }
    }
    let conn_index: BTreeMap<usize, usize> =
        conns.keys().enumerate().map(|(i, &c)| (c, i)).collect();

    // ranges
    let mut thresholds = Vec::with_capacity(d.ranges.len());
    let mut records = Vec::with_capacity(d.ranges.len());
    for (i, r) in d.ranges.iter().enumerate() {
        let x = &r.item;
        if i >= MAX_RANGES {
            return Err(err(
                r.line,
                format!("range table exceeds the capacity of {MAX_RANGES} ranges"),
            ));
        }
        if x.index != i {
            return Err(err(
                r.line,
                format!("range index {} out of sequence (expected {i})", x.index),
            ));
        }
        if x.start > MiniAddr::MAX_RAW {
            return Err(err(
                r.line,
                format!("start address {:#x} exceeds 27 bits", x.start),
            ));
        }
        if i == 0 && x.start != 0 {
            return Err(err(r.line, "first range must start at address 0"));
        }
        if let Some(&prev) = thresholds.last() {
            if x.start <= prev {
                return Err(err(
                    r.line,
                    format!("range start {:07x} overlaps the previous range", x.start),
                ));
            }
        }
        let param_type = *ptid_index
            .get(&x.ptid)
            .ok_or_else(|| err(r.line, format!("unknown param type {}", x.ptid)))?;
        let conn = *conn_index
            .get(&x.conn)
            .ok_or_else(|| err(r.line, format!("unknown connection {}", x.conn)))?;
        thresholds.push(x.start);
        records.push(RangeRecord { param_type, conn });
    }
    if thresholds.is_empty() {
        return Err(err(0, "no range lines; address 0 must be covered"));
    }
    let cam = RangeCam::new(thresholds).map_err(|e| err(0, e.to_string()))?;
    ParamLut::new(
        cam,
        records,
        param_types,
        conns.into_values().collect(),
        d.seed,
    )
    .map_err(|e| err(0, e.to_string()))
}

/// Parse and validate in one go.
pub fn load_network(text: &str) -> Result<(NetworkDesc, ParamLut), NetioError> {
    let d = parse_network(text)?;
    let lut = build_lut(&d)?;
    Ok((d, lut))
}
