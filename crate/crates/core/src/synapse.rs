//! Synapse array: destination mapping, weight modulation and the
//! sixteen-arbiter dynamic assignment of minicolumn addresses to TM slots.

use std::collections::BTreeSet;

use rustc_hash::FxHashMap;

use thiserror::Error;

use crate::axon::DelayedEvent;
use crate::fixed::{addr_wrap_add, Code4, Count4, MiniAddr};
use crate::neuron::NEURON_TYPES;
use crate::param_lut::ConnectionRule;
use crate::rng::{derive_seed, RngStream};

pub const ARBITERS: usize = 16;
pub const GROUP_SIZE: usize = 8;
pub const FULL_GROUPS_PER_ARBITER: usize = 8192;
const KEY_MASK: u32 = (1 << 20) - 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynapseError {
    #[error("arbiter {arbiter} has no free group for {addr} ({groups} groups bound)")]
    ArbiterFull {
        arbiter: usize,
        addr: MiniAddr,
        groups: usize,
    },
}

/// One destination's saturated per-type input from one delayed event.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PreSynapticContribution {
    pub dest: MiniAddr,
    pub w: [Code4; NEURON_TYPES],
}

/// The first `fanout` entries of a seeded Fisher-Yates shuffle of
/// `[0, dest_hc_size)`, placed in hypercolumn `source.hyper + offset`.
pub fn map_destinations(net_seed: u64, ev: &DelayedEvent, rule: &ConnectionRule) -> Vec<MiniAddr> {
    let dest_hyper = addr_wrap_add(ev.source.hyper(), rule.offset);
    let mut rng = RngStream::new(derive_seed(
        net_seed,
        &[dest_hyper as u64, ev.source.mini() as u64, ev.slot as u64],
    ));
    let n = rule.dest_hc_size as usize;
    let mut perm = [0u8; 128];
    for (i, p) in perm.iter_mut().enumerate().take(n) {
        *p = i as u8;
    }
    for i in 0..rule.fanout as usize {
        let j = i + (rng.next_u64() % (n - i) as u64) as usize;
        perm.swap(i, j);
    }
    perm[..rule.fanout as usize]
        .iter()
        .map(|&m| MiniAddr::from_parts_unchecked(dest_hyper, m as u32))
        .collect()
}

/// `w[d] = clamp(sum over s in masks[d] of counts[s] * weights[s])`.
pub fn modulate(counts: &[Count4; NEURON_TYPES], rule: &ConnectionRule) -> [Code4; NEURON_TYPES] {
    let mut w = [Code4::ZERO; NEURON_TYPES];
    for (d, out) in w.iter_mut().enumerate() {
        let mask = rule.masks[d];
        let mut raw = 0i32;
        for (s, (n, wt)) in counts.iter().zip(&rule.weights).enumerate() {
            if mask & (1 << s) != 0 {
                raw += n.get() as i32 * wt.code() as i32;
            }
        }
        *out = Code4::saturating(raw);
    }
    w
}

#[inline]
fn join(arbiter: usize, key: u32, low: usize) -> MiniAddr {
    MiniAddr::new(((arbiter as u32) << 23) | (key << 3) | low as u32).expect("27-bit address")
}

#[inline]
fn split(addr: MiniAddr) -> (usize, u32, usize) {
    let raw = addr.raw();
    (
        (raw >> 23) as usize,
        (raw >> 3) & KEY_MASK,
        (raw & 7) as usize,
    )
}

#[derive(Clone, Debug)]
struct Arbiter {
    key_to_group: FxHashMap<u32, u32>,
    group_key: Vec<Option<u32>>,
    group_bound: Vec<u8>,
    acc: Vec<[i32; NEURON_TYPES]>,
    cursor: usize,
    bound_groups: usize,
    last: Option<(u32, u32)>,
    lookups: u64,
    bypass_hits: u64,
}

impl Arbiter {
    fn new(groups: usize) -> Self {
        Self {
            key_to_group: FxHashMap::default(),
            group_key: vec![None; groups],
            group_bound: vec![0; groups],
            acc: vec![[0; NEURON_TYPES]; groups * GROUP_SIZE],
            cursor: 0,
            bound_groups: 0,
            last: None,
            lookups: 0,
            bypass_hits: 0,
        }
    }

    fn find(&mut self, key: u32, bypass: bool) -> Option<u32> {
        if bypass {
            if let Some((k, g)) = self.last {
                if k == key {
                    self.bypass_hits += 1;
                    return Some(g);
                }
            }
        }
        self.lookups += 1;
        let g = self.key_to_group.get(&key).copied();
        if let Some(g) = g {
            self.last = Some((key, g));
        }
        g
    }

    fn allocate(&mut self, key: u32) -> Option<u32> {
        let n = self.group_key.len();
        if self.bound_groups >= n {
            return None;
        }
        let mut g = self.cursor;
        while self.group_key[g].is_some() {
            g = (g + 1) % n;
        }
        self.group_key[g] = Some(key);
        self.key_to_group.insert(key, g as u32);
        self.bound_groups += 1;
        self.cursor = (g + 1) % n;
        self.last = Some((key, g as u32));
        Some(g as u32)
    }
}

/// Sixteen arbiters; arbiter `b` serves addresses whose top four bits are `b`.
///
/// Each arbiter binds 20-bit group keys to groups of eight consecutive TM
/// slots. Accumulators are wide and clamp once at flush, so accumulation is
/// order independent.
#[derive(Clone, Debug)]
pub struct ArbiterBank {
    arbiters: Vec<Arbiter>,
    groups_per_arbiter: usize,
    bypass: bool,
    bound: BTreeSet<u32>,
}

impl ArbiterBank {
    pub fn new(groups_per_arbiter: usize) -> Self {
        assert!((1..=FULL_GROUPS_PER_ARBITER).contains(&groups_per_arbiter));
        Self {
            arbiters: (0..ARBITERS)
                .map(|_| Arbiter::new(groups_per_arbiter))
                .collect(),
            groups_per_arbiter,
            bypass: true,
            bound: BTreeSet::new(),
        }
    }

    /// Bank sized so that the slot ids cover `tm_minicolumns` exactly.
    pub fn for_tm_minicolumns(tm_minicolumns: usize) -> Self {
        Self::new(tm_minicolumns / (ARBITERS * GROUP_SIZE))
    }

    pub fn set_bypass(&mut self, on: bool) {
        self.bypass = on;
        for a in &mut self.arbiters {
            a.last = None;
        }
    }

    pub fn groups_per_arbiter(&self) -> usize {
        self.groups_per_arbiter
    }

    pub fn slots_per_arbiter(&self) -> usize {
        self.groups_per_arbiter * GROUP_SIZE
    }

    pub fn total_slots(&self) -> usize {
        ARBITERS * self.slots_per_arbiter()
    }

    fn slot_id(&self, arbiter: usize, group: u32, low: usize) -> u32 {
        (arbiter * self.slots_per_arbiter() + group as usize * GROUP_SIZE + low) as u32
    }

    fn locate(&self, slot: u32) -> (usize, usize, usize) {
        let spa = self.slots_per_arbiter();
        let s = slot as usize;
        (s / spa, (s % spa) / GROUP_SIZE, s % GROUP_SIZE)
    }

    /// Adds `c.w` to the slot bound to `c.dest`, binding one if needed.
    /// Returns the slot id and whether it was newly bound.
    pub fn accumulate(&mut self, c: &PreSynapticContribution) -> Result<(u32, bool), SynapseError> {
        let (b, key, low) = split(c.dest);
        let bypass = self.bypass;
        let arb = &mut self.arbiters[b];
        let group = match arb.find(key, bypass) {
            Some(g) => g,
            None => arb.allocate(key).ok_or(SynapseError::ArbiterFull {
                arbiter: b,
                addr: c.dest,
                groups: arb.bound_groups,
            })?,
        };
        let g = group as usize;
        let newly = arb.group_bound[g] & (1 << low) == 0;
        arb.group_bound[g] |= 1 << low;
        let acc = &mut arb.acc[g * GROUP_SIZE + low];
        for (a, w) in acc.iter_mut().zip(c.w) {
            *a += w.code() as i32;
        }
        let id = self.slot_id(b, group, low);
        if newly {
            self.bound.insert(id);
        }
        Ok((id, newly))
    }

    /// Bound address and clamped accumulators of `slot`; clears the accumulators.
    pub fn flush(&mut self, slot: u32) -> (MiniAddr, [Code4; NEURON_TYPES]) {
        let (b, g, low) = self.locate(slot);
        let arb = &mut self.arbiters[b];
        let key = arb.group_key[g].expect("flush of an unbound slot");
        assert!(
            arb.group_bound[g] & (1 << low) != 0,
            "flush of an unbound slot"
        );
        let acc = std::mem::take(&mut arb.acc[g * GROUP_SIZE + low]);
        (join(b, key, low), acc.map(Code4::saturating))
    }

    /// True when the slot has accumulated input since its last flush.
    pub fn is_pending(&self, slot: u32) -> bool {
        let (b, g, low) = self.locate(slot);
        self.arbiters[b].acc[g * GROUP_SIZE + low] != [0; NEURON_TYPES]
    }

    pub fn address_of(&self, slot: u32) -> Option<MiniAddr> {
        let (b, g, low) = self.locate(slot);
        let arb = &self.arbiters[b];
        let key = arb.group_key[g]?;
        (arb.group_bound[g] & (1 << low) != 0).then(|| join(b, key, low))
    }

    /// Unbinds `slot`; its group is freed once all eight slots are free.
    pub fn release(&mut self, slot: u32) {
        let (b, g, low) = self.locate(slot);
        let arb = &mut self.arbiters[b];
        assert!(
            arb.group_bound[g] & (1 << low) != 0,
            "release of an unbound slot"
        );
        arb.group_bound[g] &= !(1 << low);
        arb.acc[g * GROUP_SIZE + low] = [0; NEURON_TYPES];
        self.bound.remove(&slot);
        if arb.group_bound[g] == 0 {
            let key = arb.group_key[g].take().expect("bound group has a key");
            arb.key_to_group.remove(&key);
            arb.bound_groups -= 1;
            if arb.last.is_some_and(|(k, _)| k == key) {
                arb.last = None;
            }
        }
    }

    pub fn is_bound(&self, slot: u32) -> bool {
        self.bound.contains(&slot)
    }

    pub fn bound_count(&self) -> usize {
        self.bound.len()
    }

    /// Bound slot ids in `[lo, hi)`, ascending.
    pub fn bound_in(&self, lo: u32, hi: u32) -> Vec<u32> {
        self.bound.range(lo..hi).copied().collect()
    }

    pub fn bound_slots(&self) -> impl Iterator<Item = u32> + '_ {
        self.bound.iter().copied()
    }

    /// Bound slot count per arbiter.
    pub fn occupancy(&self) -> [u32; ARBITERS] {
        let spa = self.slots_per_arbiter() as u32;
        let mut occ = [0u32; ARBITERS];
        for &s in &self.bound {
            occ[(s / spa) as usize] += 1;
        }
        occ
    }

    pub fn bound_groups(&self, arbiter: usize) -> usize {
        self.arbiters[arbiter].bound_groups
    }

    /// `(full lookups, bypass hits)` summed over arbiters.
    pub fn lookup_counts(&self) -> (u64, u64) {
        self.arbiters
            .iter()
            .fold((0, 0), |(l, h), a| (l + a.lookups, h + a.bypass_hits))
    }
}
