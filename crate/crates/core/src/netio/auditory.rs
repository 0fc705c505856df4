//! Auditory-cortex network and tone-sweep stimulus generator.
//!
//! Channel `c`, hypercolumn `h` lives at hypercolumn address `(c*H + h) * S`
//! where the stride `S = max(1, 2^20 / (2*C*H))` spreads channels across the
//! arbiters. Poisson source `k` of channel `c` lives at hypercolumn
//! `P + (c*H + k mod H) * S` (minicolumn 0), with `P = C*H*S`, and a single
//! rule with offset `-P` lands it on hypercolumn `k mod H` of its channel.
//!
//! Each channel needs three ranges (first, middle and last hypercolumn, so
//! the neighbour offsets can wrap inside the channel) plus one shared range
//! for all Poisson sources.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::network::{
    Located, MasksLine, NetworkDesc, PostLine, PreLine, RangeLine, TypeLine, WeightsLine,
};
use super::NetioError;
use crate::axon::Event;
use crate::fixed::{Count4, MiniAddr, HYPER_BITS};
use crate::neuron::NEURON_TYPES;
use crate::param_lut::MAX_RANGES;
use crate::rng::derive_seed;

const HYPER_SPACE: u64 = 1 << HYPER_BITS;
const CONN_FIRST: usize = 0;
const CONN_MID: usize = 1;
const CONN_LAST: usize = 2;
const CONN_POISSON: usize = 3;
const STIM_STREAM: u64 = 0x5354_494d;

/// Per-type neuron counts: L2/3 E/I, L4 E/I, L5/6 E/I.
pub const TYPE_COUNTS: [u32; 6] = [32, 8, 16, 4, 32, 8];
pub const L4_EXCITATORY: usize = 2;
pub const EXCITATORY_TYPES: [usize; 3] = [0, 2, 4];
pub const INHIBITORY_TYPES: [usize; 3] = [1, 3, 5];

/// `masks[d]` bit `s`: source type `s` drives destination type `d`.
/// L4E -> L2/3 E,I; L2/3E -> L5/6 E,I; L5/6E -> L2/3E; each I -> own layer's E.
pub const INTRA_MASKS: [u8; NEURON_TYPES] = [0x16, 0x04, 0x08, 0x00, 0x21, 0x01, 0x00, 0x00];
/// L2/3E -> L4E, L2/3E; L5/6E -> L5/6E.
pub const INTER_MASKS: [u8; NEURON_TYPES] = [0x01, 0x00, 0x01, 0x00, 0x10, 0x00, 0x00, 0x00];

#[derive(Clone, Debug, PartialEq)]
pub struct AuditoryConfig {
    pub channels: u32,
    pub hypercolumns: u32,
    pub minicolumns: u8,
    pub fanout: u8,
    pub sources_per_channel: u32,
    pub seed: u64,
    pub sweep_ms: u64,
    pub repeats: u64,
    /// Long-run mean rate of each Poisson source.
    pub rate_hz: f64,
    pub exc_weight: i32,
    pub inh_weight: i32,
    pub poisson_weight: i32,
    pub intra_delay: u8,
    pub inter_delay: u8,
    pub tau_epsc: f64,
    pub tau_ipsc: f64,
    pub tau_mem: f64,
    pub tau_rfc: f64,
    pub g_syn: f64,
    pub g_psc: f64,
    pub v_init: i32,
    pub v_reset: i32,
}

impl Default for AuditoryConfig {
    fn default() -> Self {
        Self {
            channels: 10,
            hypercolumns: 10,
            minicolumns: 100,
            fanout: 8,
            sources_per_channel: 10,
            seed: 1,
            sweep_ms: 10,
            repeats: 10,
            rate_hz: 10.0,
            exc_weight: 3,
            inh_weight: -8,
            poisson_weight: 7,
            intra_delay: 1,
            inter_delay: 2,
            tau_epsc: 5.8,
            tau_ipsc: 5.8,
            tau_mem: 5.8,
            tau_rfc: 3.0,
            g_syn: 1.0,
            g_psc: 1.0,
            v_init: 0,
            v_reset: -4,
        }
    }
}

/// Address arithmetic shared by the generator and the figure emitters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuditoryLayout {
    pub channels: u32,
    pub hypercolumns: u32,
    pub stride: u32,
}

impl AuditoryLayout {
    pub fn new(channels: u32, hypercolumns: u32) -> Result<Self, NetioError> {
        if channels == 0 {
            return Err(NetioError::Invalid(
                "at least one channel is required".into(),
            ));
        }
        if hypercolumns < 3 {
            return Err(NetioError::Invalid(
                "at least three hypercolumns per channel are required".into(),
            ));
        }
        let total = channels as u64 * hypercolumns as u64;
        if 2 * total > HYPER_SPACE {
            return Err(NetioError::Invalid(format!(
                "{channels} x {hypercolumns} hypercolumns plus sources exceed the 2^20 hypercolumn space"
            )));
        }
        if 3 * channels as usize + 1 > MAX_RANGES {
            return Err(NetioError::Invalid(format!(
                "{channels} channels need {} ranges, more than {MAX_RANGES}",
                3 * channels + 1
            )));
        }
        let stride = (HYPER_SPACE / (2 * total)).max(1) as u32;
        Ok(Self {
            channels,
            hypercolumns,
            stride,
        })
    }

    pub fn with_stride(channels: u32, hypercolumns: u32, stride: u32) -> Self {
        Self {
            channels,
            hypercolumns,
            stride,
        }
    }

    pub fn poisson_base(&self) -> u32 {
        self.channels * self.hypercolumns * self.stride
    }

    pub fn hyper(&self, channel: u32, h: u32) -> u32 {
        (channel * self.hypercolumns + h) * self.stride
    }

    pub fn source(&self, channel: u32, k: u32) -> MiniAddr {
        let h = self.poisson_base()
            + (channel * self.hypercolumns + k % self.hypercolumns) * self.stride;
        MiniAddr::from_parts(h, 0).expect("source inside hypercolumn space")
    }

    /// Channel of a cortical minicolumn; `None` for source addresses.
    pub fn channel_of(&self, addr: MiniAddr) -> Option<u32> {
        let h = addr.hyper();
        (h < self.poisson_base()).then(|| h / self.stride / self.hypercolumns)
    }

    /// Channel of a Poisson source address.
    pub fn source_channel(&self, addr: MiniAddr) -> Option<u32> {
        let h = addr.hyper().checked_sub(self.poisson_base())?;
        let c = h / self.stride / self.hypercolumns;
        (c < self.channels).then_some(c)
    }

    pub fn meta_comment(&self) -> String {
        format!(
            "# auditory channels={} hypercolumns={} stride={}",
            self.channels, self.hypercolumns, self.stride
        )
    }

    /// Reads the layout back from a generated network file's comment.
    pub fn from_meta(text: &str) -> Option<Self> {
        for line in text.lines() {
            let Some(rest) = line.trim().strip_prefix("# auditory ") else {
                continue;
            };
            let mut vals = [None; 3];
            for kv in rest.split_whitespace() {
                let (k, v) = kv.split_once('=')?;
                let i = match k {
                    "channels" => 0,
                    "hypercolumns" => 1,
                    "stride" => 2,
                    _ => continue,
                };
                vals[i] = v.parse::<u32>().ok();
            }
            return Some(Self::with_stride(vals[0]?, vals[1]?, vals[2]?));
        }
        None
    }
}

fn wrap(delta: i64) -> u32 {
    delta.rem_euclid(HYPER_SPACE as i64) as u32
}

/// Builds the network description.
pub fn auditory_network(cfg: &AuditoryConfig) -> Result<(AuditoryLayout, NetworkDesc), NetioError> {
    let layout = AuditoryLayout::new(cfg.channels, cfg.hypercolumns)?;
    if cfg.fanout == 0 || cfg.fanout > cfg.minicolumns || cfg.minicolumns > 128 {
        return Err(NetioError::Invalid(format!(
            "fanout {} and hypercolumn size {} must satisfy 1 <= fanout <= size <= 128",
            cfg.fanout, cfg.minicolumns
        )));
    }
    let mut d = NetworkDesc {
        seed: cfg.seed,
        ..Default::default()
    };
    for (slot, &count) in TYPE_COUNTS.iter().enumerate() {
        d.types.push(Located::new(
            0,
            TypeLine {
                ptid: 0,
                slot,
                count,
                tau_epsc: cfg.tau_epsc,
                tau_ipsc: cfg.tau_ipsc,
                tau_mem: cfg.tau_mem,
                tau_rfc: cfg.tau_rfc,
                g_syn: cfg.g_syn,
                g_psc: cfg.g_psc,
                v_init: cfg.v_init,
                v_reset: cfg.v_reset,
            },
        ));
    }

    let s = layout.stride as i64;
    let h = cfg.hypercolumns as i64;
    let cortex_weights = {
        let mut w = [0i32; NEURON_TYPES];
        for &t in &EXCITATORY_TYPES {
            w[t] = cfg.exc_weight;
        }
        for &t in &INHIBITORY_TYPES {
            w[t] = cfg.inh_weight;
        }
        w
    };
    let cortex = [
        (CONN_FIRST, [0, s, (h - 1) * s]),
        (CONN_MID, [0, s, -s]),
        (CONN_LAST, [0, -(h - 1) * s, -s]),
    ];
    let push_rule = |d: &mut NetworkDesc, conn, slot, delay, offset, weights, masks| {
        d.posts
            .push(Located::new(0, PostLine { conn, slot, delay }));
        d.pres.push(Located::new(
            0,
            PreLine {
                conn,
                slot,
                offset,
                fanout: cfg.fanout,
                dest_hc_size: cfg.minicolumns,
            },
        ));
        d.weights.push(Located::new(
            0,
            WeightsLine {
                conn,
                slot,
                weights,
            },
        ));
        d.masks
            .push(Located::new(0, MasksLine { conn, slot, masks }));
    };
    for (conn, offsets) in cortex {
        for (slot, &off) in offsets.iter().enumerate() {
            let (delay, masks) = if slot == 0 {
                (cfg.intra_delay, INTRA_MASKS)
            } else {
                (cfg.inter_delay, INTER_MASKS)
            };
            push_rule(&mut d, conn, slot, delay, wrap(off), cortex_weights, masks);
        }
    }
    let mut pw = [0i32; NEURON_TYPES];
    pw[0] = cfg.poisson_weight;
    let mut pm = [0u8; NEURON_TYPES];
    pm[L4_EXCITATORY] = 0x01;
    push_rule(
        &mut d,
        CONN_POISSON,
        0,
        cfg.intra_delay,
        wrap(-(layout.poisson_base() as i64)),
        pw,
        pm,
    );

    let mut push_range = |start: MiniAddr, conn: usize| {
        let index = d.ranges.len();
        d.ranges.push(Located::new(
            0,
            RangeLine {
                index,
                start: start.raw(),
                ptid: 0,
                conn,
            },
        ));
    };
    for c in 0..cfg.channels {
        let at = |hc: u32| MiniAddr::from_parts(layout.hyper(c, hc), 0).expect("in range");
        push_range(at(0), CONN_FIRST);
        push_range(at(1), CONN_MID);
        push_range(at(cfg.hypercolumns - 1), CONN_LAST);
    }
    push_range(
        MiniAddr::from_parts(layout.poisson_base(), 0).expect("in range"),
        CONN_POISSON,
    );
    Ok((layout, d))
}

/// Poisson tone-sweep stimulus. Channel `c` is driven during
/// `[(r*C + c) * sweep_ms, (r*C + c + 1) * sweep_ms)` for each repeat `r`;
/// inside its window each source fires at `rate_hz * C` so the long-run mean
/// is `rate_hz`.
pub fn auditory_stimulus(
    cfg: &AuditoryConfig,
    layout: &AuditoryLayout,
) -> Result<Vec<(u64, Event)>, NetioError> {
    let per_ms = cfg.rate_hz * cfg.channels as f64 / 1000.0;
    let dist = if per_ms > 0.0 {
        Some(Poisson::new(per_ms).map_err(|e| NetioError::Invalid(e.to_string()))?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STIM_STREAM]));
    let mut out = Vec::new();
    for r in 0..cfg.repeats {
        for c in 0..cfg.channels {
            let start = (r * cfg.channels as u64 + c as u64) * cfg.sweep_ms;
            for ms in 0..cfg.sweep_ms {
                for k in 0..cfg.sources_per_channel {
                    let n = dist.as_ref().map_or(0.0, |p| p.sample(&mut rng)) as u32;
                    if n == 0 {
                        continue;
                    }
                    let mut counts = [Count4::ZERO; NEURON_TYPES];
                    counts[0] = Count4::saturating(n);
                    out.push((
                        start + ms,
                        Event {
                            source: layout.source(c, k),
                            counts,
                        },
                    ));
                }
            }
        }
    }
    Ok(out)
}

/// Network text (with the layout comment) and stimulus text.
pub fn gen_auditory(cfg: &AuditoryConfig) -> Result<(String, String), NetioError> {
    let (layout, desc) = auditory_network(cfg)?;
    let stim = auditory_stimulus(cfg, &layout)?;
    let net = format!(
        "{}\n{}",
        layout.meta_comment(),
        super::network::serialize_network(&desc)
    );
    Ok((net, super::stimulus::serialize_stimulus(&stim)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netio::network::{build_lut, parse_network, serialize_network};

    fn desk() -> AuditoryConfig {
        AuditoryConfig::default()
    }

    #[test]
    fn desk_layout() {
        let l = AuditoryLayout::new(10, 10).unwrap();
        assert_eq!(l.stride, 5242);
        assert_eq!(l.poisson_base(), 524_200);
        let full = AuditoryLayout::new(100, 100).unwrap();
        assert_eq!(full.stride, 52);
        assert!(AuditoryLayout::new(171, 3).is_err());
        assert!(AuditoryLayout::new(10, 2).is_err());
        assert!(AuditoryLayout::new(1024, 1024).is_err());
    }

    #[test]
    fn network_parses_and_roundtrips() {
        let (net, _) = gen_auditory(&desk()).unwrap();
        let d = parse_network(&net).unwrap();
        let lut = build_lut(&d).unwrap();
        assert_eq!(lut.range_count(), 31);
        assert_eq!(parse_network(&serialize_network(&d)).unwrap(), d);
        assert_eq!(
            AuditoryLayout::from_meta(&net),
            Some(AuditoryLayout::new(10, 10).unwrap())
        );
    }

    #[test]
    fn full_scale_counts() {
        let cfg = AuditoryConfig {
            channels: 100,
            hypercolumns: 100,
            repeats: 1,
            ..desk()
        };
        let (layout, d) = auditory_network(&cfg).unwrap();
        assert_eq!(d.ranges.len(), 301);
        let minicolumns = 100u64 * 100 * 100;
        assert_eq!(minicolumns * 100, 100_000_000);
        assert!(layout.hyper(99, 99) < layout.poisson_base());
        let exc: u32 = EXCITATORY_TYPES.iter().map(|&t| TYPE_COUNTS[t]).sum();
        let inh: u32 = INHIBITORY_TYPES.iter().map(|&t| TYPE_COUNTS[t]).sum();
        assert_eq!((exc, inh), (80, 20));
    }

    #[test]
    fn rules_stay_inside_channel() {
        let cfg = desk();
        let (layout, d) = auditory_network(&cfg).unwrap();
        let lut = build_lut(&d).unwrap();
        for c in 0..cfg.channels {
            for h in 0..cfg.hypercolumns {
                let a = MiniAddr::from_parts(layout.hyper(c, h), 42).unwrap();
                let post = lut.post_connections(a);
                assert_eq!(post.enabled_count(), 3);
                let mut dests = Vec::new();
                for (slot, _) in post.enabled() {
                    let rule = lut.pre_connection(a, slot).unwrap();
                    let dh = crate::fixed::addr_wrap_add(a.hyper(), rule.offset);
                    let dest = MiniAddr::from_parts(dh, 0).unwrap();
                    assert_eq!(layout.channel_of(dest), Some(c));
                    dests.push((dh / layout.stride) % cfg.hypercolumns);
                }
                let hh = cfg.hypercolumns;
                assert_eq!(dests, vec![h, (h + 1) % hh, (h + hh - 1) % hh]);
            }
            for k in 0..cfg.sources_per_channel {
                let s = layout.source(c, k);
                assert_eq!(layout.source_channel(s), Some(c));
                assert_eq!(layout.channel_of(s), None);
                let rule = lut.pre_connection(s, 0).unwrap();
                let dh = crate::fixed::addr_wrap_add(s.hyper(), rule.offset);
                assert_eq!(dh, layout.hyper(c, k % cfg.hypercolumns));
                assert_eq!(rule.masks, [0, 0, 1, 0, 0, 0, 0, 0]);
            }
        }
    }

    #[test]
    fn stimulus_windows_and_rate() {
        let cfg = desk();
        let (layout, _) = auditory_network(&cfg).unwrap();
        let stim = auditory_stimulus(&cfg, &layout).unwrap();
        let mut prev = 0;
        let mut total = 0u64;
        for (t, ev) in &stim {
            assert!(*t >= prev);
            prev = *t;
            let c = layout.source_channel(ev.source).unwrap() as u64;
            assert_eq!((t / cfg.sweep_ms) % cfg.channels as u64, c);
            total += ev.counts[0].get() as u64;
        }
        let duration_s = (cfg.repeats * cfg.channels as u64 * cfg.sweep_ms) as f64 / 1000.0;
        let rate = total as f64 / (duration_s * (cfg.channels * cfg.sources_per_channel) as f64);
        assert!((rate - 10.0).abs() < 2.0, "rate {rate}");
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(
            gen_auditory(&desk()).unwrap(),
            gen_auditory(&desk()).unwrap()
        );
        let other = AuditoryConfig { seed: 2, ..desk() };
        assert_ne!(
            gen_auditory(&desk()).unwrap().1,
            gen_auditory(&other).unwrap().1
        );
    }
}
