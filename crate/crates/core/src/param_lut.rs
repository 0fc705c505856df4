//! Range-CAM parameter lookup.
//!
//! A sorted list of threshold addresses partitions the 27-bit minicolumn
//! space into at most 512 ranges. Each range points at a parameter type
//! (layout plus eight neuron types) and a connection set (post-connection
//! slots plus one connection rule per enabled slot). Tables are immutable
//! once built.

use thiserror::Error;

use crate::fixed::{Code4, MiniAddr};
use crate::neuron::{MinicolumnLayout, NeuronTypeParams, NEURON_TYPES};

pub const MAX_RANGES: usize = 512;
pub const MAX_SLOTS: usize = 16;
pub const MAX_DELAY_MS: u8 = 16;
pub const MAX_HC_SIZE: u8 = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LutError {
    #[error("range table is empty; address 0 must be covered")]
    Empty,
    #[error("first threshold must be 0, found {0:#x}")]
    FirstNotZero(u32),
    #[error("threshold {index} ({addr:#x}) is not above its predecessor")]
    NotIncreasing { index: usize, addr: u32 },
    #[error("threshold {0:#x} does not fit in 27 bits")]
    AddressTooWide(u32),
    #[error("{0} ranges exceed the capacity of 512")]
    Capacity(usize),
    #[error("range {range} references unknown parameter type {id}")]
    UnknownParamType { range: usize, id: usize },
    #[error("range {range} references unknown connection set {id}")]
    UnknownConnection { range: usize, id: usize },
    #[error("slot {0} out of range 0..16")]
    SlotOutOfRange(usize),
    #[error("delay {0} ms outside 1..=16")]
    DelayOutOfRange(u8),
    #[error("fanout {fanout} exceeds destination hypercolumn size {dest}")]
    FanoutExceedsDest { fanout: u8, dest: u8 },
    #[error("size {0} outside 1..=128")]
    SizeOutOfRange(u8),
    #[error("offset {0:#x} does not fit in 20 bits")]
    OffsetTooWide(u32),
    #[error("slot {0} is enabled but has no connection rule")]
    MissingRule(usize),
    #[error("slot {0} is disabled but has a connection rule")]
    RuleOnDisabledSlot(usize),
}

/// Sorted thresholds; range `i` covers `[A[i], A[i+1])`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RangeCam {
    thresholds: Vec<u32>,
}

impl RangeCam {
    pub fn new(thresholds: Vec<u32>) -> Result<Self, LutError> {
        if thresholds.is_empty() {
            return Err(LutError::Empty);
        }
        if thresholds.len() > MAX_RANGES {
            return Err(LutError::Capacity(thresholds.len()));
        }
        if thresholds[0] != 0 {
            return Err(LutError::FirstNotZero(thresholds[0]));
        }
        for (i, &a) in thresholds.iter().enumerate() {
            if a > MiniAddr::MAX_RAW {
                return Err(LutError::AddressTooWide(a));
            }
            if i > 0 && a <= thresholds[i - 1] {
                return Err(LutError::NotIncreasing { index: i, addr: a });
            }
        }
        Ok(Self { thresholds })
    }

    /// Largest `i` with `A[i] <= addr`.
    #[inline]
    pub fn lookup(&self, addr: MiniAddr) -> usize {
        self.thresholds.partition_point(|&a| a <= addr.raw()) - 1
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn thresholds(&self) -> &[u32] {
        &self.thresholds
    }
}

/// Up to 16 outgoing hypercolumn connections, each with a delay class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PostConnection {
    delays: [Option<u8>; MAX_SLOTS],
}

impl PostConnection {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enable(&mut self, slot: usize, delay_ms: u8) -> Result<(), LutError> {
        if slot >= MAX_SLOTS {
            return Err(LutError::SlotOutOfRange(slot));
        }
        if !(1..=MAX_DELAY_MS).contains(&delay_ms) {
            return Err(LutError::DelayOutOfRange(delay_ms));
        }
        self.delays[slot] = Some(delay_ms);
        Ok(())
    }

    pub fn with_slots(slots: &[(usize, u8)]) -> Result<Self, LutError> {
        let mut p = Self::new();
        for &(slot, delay) in slots {
            p.enable(slot, delay)?;
        }
        Ok(p)
    }

    pub fn delay(&self, slot: usize) -> Option<u8> {
        self.delays.get(slot).copied().flatten()
    }

    /// `(slot, delay_ms)` for every enabled slot, in slot order.
    pub fn enabled(&self) -> impl Iterator<Item = (u8, u8)> + '_ {
        self.delays
            .iter()
            .enumerate()
            .filter_map(|(s, d)| d.map(|d| (s as u8, d)))
    }

    pub fn enabled_count(&self) -> usize {
        self.delays.iter().filter(|d| d.is_some()).count()
    }
}

/// How one source range connects through one slot.
///
/// `masks[d]` bit `s` enables source type `s` onto destination type `d`;
/// `weights[s]` is the weight of source type `s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConnectionRule {
    pub offset: u32,
    pub fanout: u8,
    pub dest_hc_size: u8,
    pub weights: [Code4; NEURON_TYPES],
    pub masks: [u8; NEURON_TYPES],
}

impl ConnectionRule {
    pub fn new(
        offset: u32,
        fanout: u8,
        dest_hc_size: u8,
        weights: [Code4; NEURON_TYPES],
        masks: [u8; NEURON_TYPES],
    ) -> Result<Self, LutError> {
        if offset >= 1 << 20 {
            return Err(LutError::OffsetTooWide(offset));
        }
        for size in [fanout, dest_hc_size] {
            if !(1..=MAX_HC_SIZE).contains(&size) {
                return Err(LutError::SizeOutOfRange(size));
            }
        }
        if fanout > dest_hc_size {
            return Err(LutError::FanoutExceedsDest {
                fanout,
                dest: dest_hc_size,
            });
        }
        Ok(Self {
            offset,
            fanout,
            dest_hc_size,
            weights,
            masks,
        })
    }
}

/// Layout and per-type parameters shared by every minicolumn of a range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MinicolumnParams {
    pub layout: MinicolumnLayout,
    pub types: [NeuronTypeParams; NEURON_TYPES],
}

impl MinicolumnParams {
    /// True when every neuron sits at its type's initial value with zero current.
    pub fn at_rest(&self, states: &[crate::neuron::NeuronState]) -> bool {
        states
            .iter()
            .enumerate()
            .all(|(n, s)| s.at_rest(self.types[self.layout.neuron_type(n)].v_init))
    }
}

/// Post-connection slots plus the rule behind each enabled slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConnectionSet {
    pub post: PostConnection,
    pub rules: [Option<ConnectionRule>; MAX_SLOTS],
}

impl ConnectionSet {
    pub fn validate(&self) -> Result<(), LutError> {
        for slot in 0..MAX_SLOTS {
            match (self.post.delay(slot), self.rules[slot]) {
                (Some(_), None) => return Err(LutError::MissingRule(slot)),
                (None, Some(_)) => return Err(LutError::RuleOnDisabledSlot(slot)),
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RangeRecord {
    pub param_type: usize,
    pub conn: usize,
}

/// The full lookup structure: CAM, buffer indirections and network seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLut {
    cam: RangeCam,
    records: Vec<RangeRecord>,
    param_types: Vec<MinicolumnParams>,
    conns: Vec<ConnectionSet>,
    seed: u64,
}

impl ParamLut {
    pub fn new(
        cam: RangeCam,
        records: Vec<RangeRecord>,
        param_types: Vec<MinicolumnParams>,
        conns: Vec<ConnectionSet>,
        seed: u64,
    ) -> Result<Self, LutError> {
        assert_eq!(cam.len(), records.len(), "one record per range");
        for (range, r) in records.iter().enumerate() {
            if r.param_type >= param_types.len() {
                return Err(LutError::UnknownParamType {
                    range,
                    id: r.param_type,
                });
            }
            if r.conn >= conns.len() {
                return Err(LutError::UnknownConnection { range, id: r.conn });
            }
        }
        for c in &conns {
            c.validate()?;
        }
        Ok(Self {
            cam,
            records,
            param_types,
            conns,
            seed,
        })
    }

    #[inline]
    pub fn cam_lookup(&self, addr: MiniAddr) -> usize {
        self.cam.lookup(addr)
    }

    pub fn record(&self, range: usize) -> RangeRecord {
        self.records[range]
    }

    #[inline]
    pub fn minicolumn_params(&self, addr: MiniAddr) -> &MinicolumnParams {
        &self.param_types[self.param_type_of(addr)]
    }

    #[inline]
    pub fn param_type_of(&self, addr: MiniAddr) -> usize {
        self.records[self.cam_lookup(addr)].param_type
    }

    pub fn param_types(&self) -> &[MinicolumnParams] {
        &self.param_types
    }

    #[inline]
    pub fn connection_set(&self, addr: MiniAddr) -> &ConnectionSet {
        &self.conns[self.records[self.cam_lookup(addr)].conn]
    }

    #[inline]
    pub fn post_connections(&self, addr: MiniAddr) -> &PostConnection {
        &self.connection_set(addr).post
    }

    /// `None` only when the slot is disabled for this address.
    #[inline]
    pub fn pre_connection(&self, addr: MiniAddr, slot: u8) -> Option<&ConnectionRule> {
        self.connection_set(addr).rules.get(slot as usize)?.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cam(&self) -> &RangeCam {
        &self.cam
    }

    pub fn range_count(&self) -> usize {
        self.cam.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn addr(raw: u32) -> MiniAddr {
        MiniAddr::new(raw).unwrap()
    }

    fn params() -> MinicolumnParams {
        MinicolumnParams {
            layout: MinicolumnLayout::uniform(0).unwrap(),
            types: [NeuronTypeParams::default(); NEURON_TYPES],
        }
    }

    fn rule(offset: u32) -> ConnectionRule {
        ConnectionRule::new(offset, 8, 100, [Code4::ZERO; 8], [0; 8]).unwrap()
    }

    fn conn(slots: &[(usize, u8)]) -> ConnectionSet {
        let mut c = ConnectionSet {
            post: PostConnection::with_slots(slots).unwrap(),
            ..Default::default()
        };
        for &(s, _) in slots {
            c.rules[s] = Some(rule(s as u32));
        }
        c
    }

    #[test]
    fn cam_boundaries() {
        let cam = RangeCam::new(vec![0, 100, 500]).unwrap();
        assert_eq!(cam.lookup(addr(0)), 0);
        assert_eq!(cam.lookup(addr(99)), 0);
        assert_eq!(cam.lookup(addr(100)), 1);
        assert_eq!(cam.lookup(addr(499)), 1);
        assert_eq!(cam.lookup(addr(500)), 2);
        assert_eq!(cam.lookup(addr((1 << 27) - 1)), 2);
    }

    #[test]
    fn cam_validation() {
        assert_eq!(RangeCam::new(vec![]), Err(LutError::Empty));
        assert_eq!(RangeCam::new(vec![5]), Err(LutError::FirstNotZero(5)));
        assert!(matches!(
            RangeCam::new(vec![0, 10, 10]),
            Err(LutError::NotIncreasing { index: 2, .. })
        ));
        assert!(RangeCam::new((0..512).collect()).is_ok());
        assert_eq!(
            RangeCam::new((0..513).collect()),
            Err(LutError::Capacity(513))
        );
        assert!(RangeCam::new(vec![0, 1 << 27]).is_err());
    }

    #[test]
    fn shared_param_type_different_connections() {
        let cam = RangeCam::new(vec![0, 1000]).unwrap();
        let lut = ParamLut::new(
            cam,
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
            vec![params()],
            vec![conn(&[(0, 1)]), conn(&[(0, 2), (1, 3), (2, 3)])],
            7,
        )
        .unwrap();
        assert_eq!(
            lut.minicolumn_params(addr(5)),
            lut.minicolumn_params(addr(5000))
        );
        assert_eq!(lut.post_connections(addr(5)).enabled_count(), 1);
        assert_eq!(lut.post_connections(addr(5000)).enabled_count(), 3);
        assert_eq!(lut.pre_connection(addr(5000), 2).unwrap().offset, 2);
        assert!(lut.pre_connection(addr(5000), 3).is_none());
    }

    #[test]
    fn dangling_ids_rejected() {
        let cam = RangeCam::new(vec![0]).unwrap();
        let err = ParamLut::new(
            cam.clone(),
            vec![RangeRecord {
                param_type: 1,
                conn: 0,
            }],
            vec![params()],
            vec![conn(&[])],
            0,
        );
        assert_eq!(err, Err(LutError::UnknownParamType { range: 0, id: 1 }));
        let err = ParamLut::new(
            cam,
            vec![RangeRecord {
                param_type: 0,
                conn: 4,
            }],
            vec![params()],
            vec![conn(&[])],
            0,
        );
        assert_eq!(err, Err(LutError::UnknownConnection { range: 0, id: 4 }));
    }

    #[test]
    fn rule_and_slot_validation() {
        assert!(ConnectionRule::new(0, 9, 8, [Code4::ZERO; 8], [0; 8]).is_err());
        assert!(ConnectionRule::new(0, 0, 8, [Code4::ZERO; 8], [0; 8]).is_err());
        assert!(ConnectionRule::new(1 << 20, 1, 8, [Code4::ZERO; 8], [0; 8]).is_err());
        assert!(ConnectionRule::new(0, 128, 128, [Code4::ZERO; 8], [0; 8]).is_ok());
        let mut p = PostConnection::new();
        assert!(p.enable(16, 1).is_err());
        assert!(p.enable(0, 0).is_err());
        assert!(p.enable(0, 17).is_err());
        let full =
            PostConnection::with_slots(&(0..16).map(|s| (s, s as u8 + 1)).collect::<Vec<_>>())
                .unwrap();
        assert_eq!(full.enabled_count(), 16);
        let mut missing = conn(&[(0, 1)]);
        missing.rules[0] = None;
        assert_eq!(missing.validate(), Err(LutError::MissingRule(0)));
    }

    proptest! {
        #[test]
        fn lookup_is_total_and_consistent(
            mut t in proptest::collection::btree_set(1u32..(1 << 27), 0..40),
            a in 0u32..(1 << 27),
        ) {
            t.insert(0);
            let thresholds: Vec<u32> = t.into_iter().collect();
            let cam = RangeCam::new(thresholds.clone()).unwrap();
            let i = cam.lookup(addr(a));
            prop_assert!(i < thresholds.len());
            prop_assert!(thresholds[i] <= a);
            if i + 1 < thresholds.len() {
                prop_assert!(a < thresholds[i + 1]);
            }
            prop_assert_eq!(i, cam.lookup(addr(a)));
        }
    }
}
