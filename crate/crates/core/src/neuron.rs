//! The physical-minicolumn kernel: 100 stochastic conductance-based LIF
//! neurons in 25 groups of four, up to eight neuron types.
//!
//! Both the post-synaptic current and the membrane potential are 4-bit
//! codes. A spike is an overflow of the membrane code driven by an
//! excitatory current.

use thiserror::Error;

use crate::fixed::{decay_raw, decay_stochastic, Code4, Count4, FixedError, Gain8, Leak8};
use crate::rng::RngStream;
use wide::{i16x8, u8x16};

pub const NEURONS_PER_MINICOLUMN: usize = 100;
pub const NEURONS_PER_GROUP: usize = 4;
pub const GROUPS_PER_MINICOLUMN: usize = NEURONS_PER_MINICOLUMN / NEURONS_PER_GROUP;
pub const NEURON_TYPES: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeuronError {
    #[error(transparent)]
    Fixed(#[from] FixedError),
    #[error("v_reset {v_reset} exceeds v_init {v_init}")]
    ResetAboveInit { v_init: i8, v_reset: i8 },
    #[error("type {ty} has {count} neurons, not a multiple of four")]
    CountNotMultipleOfFour { ty: usize, count: u32 },
    #[error("neuron counts sum to {0}, expected 100")]
    CountSum(u32),
    #[error("neuron type index {0} out of range")]
    TypeOutOfRange(usize),
}

/// One neuron's stored state, packed into a byte as `psc << 4 | vmem`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct NeuronState {
    pub psc: Code4,
    pub vmem: Code4,
}

impl NeuronState {
    pub const fn rest(v_init: Code4) -> Self {
        Self {
            psc: Code4::ZERO,
            vmem: v_init,
        }
    }

    #[inline]
    pub const fn pack(self) -> u8 {
        (self.psc.to_nibble() << 4) | self.vmem.to_nibble()
    }

    #[inline]
    pub const fn unpack(b: u8) -> Self {
        Self {
            psc: Code4::from_nibble(b >> 4),
            vmem: Code4::from_nibble(b),
        }
    }

    #[inline]
    pub fn at_rest(self, v_init: Code4) -> bool {
        self.psc == Code4::ZERO && self.vmem == v_init
    }
}

/// Per-type neuron parameters in hardware codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NeuronTypeParams {
    pub leak_epsc: Leak8,
    pub leak_ipsc: Leak8,
    pub leak_mem: Leak8,
    pub leak_rfc: Leak8,
    pub g_syn: Gain8,
    pub g_psc: Gain8,
    pub v_init: Code4,
    pub v_reset: Code4,
}

impl NeuronTypeParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        leak_epsc: Leak8,
        leak_ipsc: Leak8,
        leak_mem: Leak8,
        leak_rfc: Leak8,
        g_syn: Gain8,
        g_psc: Gain8,
        v_init: Code4,
        v_reset: Code4,
    ) -> Result<Self, NeuronError> {
        if v_reset > v_init {
            return Err(NeuronError::ResetAboveInit {
                v_init: v_init.code(),
                v_reset: v_reset.code(),
            });
        }
        Ok(Self {
            leak_epsc,
            leak_ipsc,
            leak_mem,
            leak_rfc,
            g_syn,
            g_psc,
            v_init,
            v_reset,
        })
    }

    /// Builds codes from time constants in ms and real-valued gains.
    #[allow(clippy::too_many_arguments)]
    pub fn from_physical(
        tau_epsc: f64,
        tau_ipsc: f64,
        tau_mem: f64,
        tau_rfc: f64,
        g_syn: f64,
        g_psc: f64,
        v_init: Code4,
        v_reset: Code4,
    ) -> Result<Self, NeuronError> {
        Self::new(
            Leak8::from_tau(tau_epsc)?,
            Leak8::from_tau(tau_ipsc)?,
            Leak8::from_tau(tau_mem)?,
            Leak8::from_tau(tau_rfc)?,
            Gain8::from_real(g_syn)?,
            Gain8::from_real(g_psc)?,
            v_init,
            v_reset,
        )
    }
}

impl Default for NeuronTypeParams {
    /// 5.8 ms synaptic and membrane constants, 3 ms refractory constant,
    /// unity gains, `v_init = 0`, `v_reset = -4`.
    fn default() -> Self {
        Self::from_physical(
            5.8,
            5.8,
            5.8,
            3.0,
            1.0,
            1.0,
            Code4::ZERO,
            Code4::saturating(-4),
        )
        .expect("default parameters are valid")
    }
}

/// Assignment of the 25 four-neuron groups to neuron types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MinicolumnLayout {
    group_type: [u8; GROUPS_PER_MINICOLUMN],
}

impl MinicolumnLayout {
    /// All 100 neurons of one type.
    pub fn uniform(ty: usize) -> Result<Self, NeuronError> {
        if ty >= NEURON_TYPES {
            return Err(NeuronError::TypeOutOfRange(ty));
        }
        Ok(Self {
            group_type: [ty as u8; GROUPS_PER_MINICOLUMN],
        })
    }

    /// Groups are handed out in type order: type 0 takes the first
    /// `counts[0] / 4` groups, and so on.
    pub fn from_counts(counts: [u32; NEURON_TYPES]) -> Result<Self, NeuronError> {
        let mut group_type = [0u8; GROUPS_PER_MINICOLUMN];
        let mut g = 0usize;
        let total: u32 = counts.iter().sum();
        if total != NEURONS_PER_MINICOLUMN as u32 {
            return Err(NeuronError::CountSum(total));
        }
        for (ty, &count) in counts.iter().enumerate() {
            if count % NEURONS_PER_GROUP as u32 != 0 {
                return Err(NeuronError::CountNotMultipleOfFour { ty, count });
            }
            for _ in 0..count / NEURONS_PER_GROUP as u32 {
                group_type[g] = ty as u8;
                g += 1;
            }
        }
        Ok(Self { group_type })
    }

    pub fn counts(&self) -> [u32; NEURON_TYPES] {
        let mut c = [0u32; NEURON_TYPES];
        for &t in &self.group_type {
            c[t as usize] += NEURONS_PER_GROUP as u32;
        }
        c
    }

    #[inline]
    pub fn neuron_type(&self, neuron: usize) -> usize {
        self.group_type[neuron / NEURONS_PER_GROUP] as usize
    }

    pub fn group_types(&self) -> &[u8; GROUPS_PER_MINICOLUMN] {
        &self.group_type
    }
}

/// Post-synaptic current update.
///
/// The sign of the stored current selects the EPSC or IPSC leak.
#[inline]
pub fn psc_step(psc: Code4, w: Code4, p: &NeuronTypeParams, r: u8) -> Code4 {
    let leak = if psc.code() >= 0 {
        p.leak_epsc
    } else {
        p.leak_ipsc
    };
    let decayed = decay_stochastic(psc, leak, r).code() as i32;
    Code4::saturating(decayed + p.g_syn.apply(w))
}

/// Soma update. Returns the new membrane code and whether it spiked.
#[inline]
pub fn soma_step(s: NeuronState, psc_new: Code4, p: &NeuronTypeParams, r: u8) -> (Code4, bool) {
    let v_init = p.v_init.code() as i32;
    let vmem = s.vmem.code() as i32;
    let deviation = vmem - v_init;
    let v_raw = if vmem >= v_init {
        v_init + decay_raw(deviation, p.leak_mem, r) + p.g_psc.apply(psc_new)
    } else {
        // refractory: the incoming current is discarded
        v_init + decay_raw(deviation, p.leak_rfc, r)
    };
    let overflow = v_raw > Code4::MAX as i32;
    let underflow = v_raw < Code4::MIN as i32;
    let spiked = overflow && psc_new.code() > 0;
    let v_next = if overflow || underflow {
        p.v_reset
    } else {
        Code4::saturating(v_raw)
    };
    (v_next, spiked)
}

/// Spike counts per type plus the per-neuron spike bitmap (bit n = neuron n).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MinicolumnOutput {
    pub counts: [Count4; NEURON_TYPES],
    pub spikes: u128,
}

impl MinicolumnOutput {
    pub fn any_spike(&self) -> bool {
        self.spikes != 0
    }
}

/// Per-type constants of the inner loop, unpacked to plain integers.
#[derive(Clone, Copy)]
struct TypeConsts {
    leak_e: i32,
    leak_i: i32,
    leak_mem: i32,
    leak_rfc: i32,
    g_psc: i32,
    v_init: i32,
    v_reset: i32,
    w_in: i32,
}

impl TypeConsts {
    fn new(p: &NeuronTypeParams, w: Code4) -> Self {
        Self {
            leak_e: p.leak_epsc.code() as i32,
            leak_i: p.leak_ipsc.code() as i32,
            leak_mem: p.leak_mem.code() as i32,
            leak_rfc: p.leak_rfc.code() as i32,
            g_psc: p.g_psc.code() as i32,
            v_init: p.v_init.code() as i32,
            v_reset: p.v_reset.code() as i32,
            w_in: p.g_syn.apply(w),
        }
    }
}

const DRAWS_PER_WORD: usize = 6;

/// Advances all 100 neurons of one minicolumn by one step, in place.
///
/// Neuron n takes bits `[10k, 10k + 10)` of the `n / 6`-th 64-bit word
/// pulled from `rng`, with `k = n % 6`: the low five bits dither the
/// current, the high five the soma. On a fresh stream this is the same
/// as two `draw5` calls per neuron in neuron order. Neurons of type k all
/// receive `w[k]`.
pub fn minicolumn_step(
    states: &mut [NeuronState; NEURONS_PER_MINICOLUMN],
    layout: &MinicolumnLayout,
    w: &[Code4; NEURON_TYPES],
    params: &[NeuronTypeParams; NEURON_TYPES],
    rng: &mut RngStream,
) -> MinicolumnOutput {
    let consts: [TypeConsts; NEURON_TYPES] =
        std::array::from_fn(|k| TypeConsts::new(&params[k], w[k]));
    let mut r_psc = [0i32; NEURONS_PER_MINICOLUMN];
    let mut r_soma = [0i32; NEURONS_PER_MINICOLUMN];
    for (rp, rs) in r_psc
        .chunks_mut(DRAWS_PER_WORD)
        .zip(r_soma.chunks_mut(DRAWS_PER_WORD))
    {
        let mut word = rng.next_u64();
        for (p, s) in rp.iter_mut().zip(rs.iter_mut()) {
            *p = (word & 31) as i32;
            *s = ((word >> 5) & 31) as i32;
            word >>= 10;
        }
    }

    let lo = Code4::MIN as i32;
    let hi = Code4::MAX as i32;
    let mut raw_counts = [0u32; NEURON_TYPES];
    let mut spikes = 0u128;
    for (g, &ty) in layout.group_types().iter().enumerate() {
        let c = consts[ty as usize];
        let mut group_spikes = 0u32;
        for j in 0..NEURONS_PER_GROUP {
            let n = g * NEURONS_PER_GROUP + j;
            let s = &mut states[n];

            let psc = s.psc.code() as i32;
            let leak = if psc >= 0 { c.leak_e } else { c.leak_i };
            let decayed = ((psc * leak + 8 * r_psc[n]) >> 8).clamp(lo, hi);
            let psc_new = (decayed + c.w_in).clamp(lo, hi);

            let vmem = s.vmem.code() as i32;
            let active = vmem >= c.v_init;
            // refractory: the incoming current is discarded
            let leak = if active { c.leak_mem } else { c.leak_rfc };
            let drive = if active { (c.g_psc * psc_new) >> 4 } else { 0 };
            let v_raw = c.v_init + (((vmem - c.v_init) * leak + 8 * r_soma[n]) >> 8) + drive;
            let overflow = v_raw > hi;
            let v_next = if overflow | (v_raw < lo) {
                c.v_reset
            } else {
                v_raw
            };
            let spiked = overflow & (psc_new > 0);

            *s = NeuronState {
                psc: Code4::saturating(psc_new),
                vmem: Code4::saturating(v_next),
            };
            group_spikes |= (spiked as u32) << j;
        }
        raw_counts[ty as usize] += group_spikes.count_ones();
        spikes |= (group_spikes as u128) << (g * NEURONS_PER_GROUP);
    }
    MinicolumnOutput {
        counts: raw_counts.map(Count4::saturating),
        spikes,
    }
}

const N: usize = NEURONS_PER_MINICOLUMN;
const LANES: usize = 8;
/// Neurons padded to whole 16-byte loads.
const PADDED: usize = 112;
const CHUNKS: usize = PADDED / LANES;
const WORDS: usize = N.div_ceil(DRAWS_PER_WORD);

type Lanes = [i16x8; CHUNKS];

fn spread(f: impl Fn(usize) -> i16) -> Lanes {
    std::array::from_fn(|c| {
        i16x8::new(std::array::from_fn(|l| {
            let n = c * LANES + l;
            if n < N {
                f(n)
            } else {
                0
            }
        }))
    })
}

/// `minicolumn_step` for a fixed parameter set, working in place on
/// packed state bytes (`NeuronState::pack`) with 8-wide lane arithmetic.
/// Results are bit-identical. All intermediates fit in i16: the widest
/// is `15 * 255 + 8 * 31`.
#[derive(Clone, Debug)]
pub struct MinicolumnKernel {
    layout: MinicolumnLayout,
    g_syn: [Gain8; NEURON_TYPES],
    neuron_type: [u8; N],
    type_mask: [u128; NEURON_TYPES],
    leak_e: Lanes,
    leak_i: Lanes,
    leak_mem: Lanes,
    leak_rfc: Lanes,
    g_psc: Lanes,
    v_init: Lanes,
    v_reset: Lanes,
    rest: [u8; N],
}

impl MinicolumnKernel {
    pub fn new(layout: &MinicolumnLayout, params: &[NeuronTypeParams; NEURON_TYPES]) -> Self {
        let per = |f: fn(&NeuronTypeParams) -> i16| spread(|n| f(&params[layout.neuron_type(n)]));
        let mut type_mask = [0u128; NEURON_TYPES];
        for n in 0..N {
            type_mask[layout.neuron_type(n)] |= 1 << n;
        }
        Self {
            layout: *layout,
            g_syn: params.map(|p| p.g_syn),
            neuron_type: std::array::from_fn(|n| layout.neuron_type(n) as u8),
            type_mask,
            leak_e: per(|p| p.leak_epsc.code() as i16),
            leak_i: per(|p| p.leak_ipsc.code() as i16),
            leak_mem: per(|p| p.leak_mem.code() as i16),
            leak_rfc: per(|p| p.leak_rfc.code() as i16),
            g_psc: per(|p| p.g_psc.code() as i16),
            v_init: per(|p| p.v_init.code() as i16),
            v_reset: per(|p| p.v_reset.code() as i16),
            rest: std::array::from_fn(|n| {
                NeuronState::rest(params[layout.neuron_type(n)].v_init).pack()
            }),
        }
    }

    pub fn layout(&self) -> &MinicolumnLayout {
        &self.layout
    }

    /// Packed states of a minicolumn at rest.
    pub fn rest(&self) -> &[u8; N] {
        &self.rest
    }

    pub fn step(
        &self,
        states: &mut [NeuronState; N],
        w: &[Code4; NEURON_TYPES],
        rng: &mut RngStream,
    ) -> MinicolumnOutput {
        let mut packed = states.map(NeuronState::pack);
        let out = self.step_packed(&mut packed, w, rng);
        *states = packed.map(NeuronState::unpack);
        out
    }

    pub fn step_packed(
        &self,
        packed: &mut [u8; N],
        w: &[Code4; NEURON_TYPES],
        rng: &mut RngStream,
    ) -> MinicolumnOutput {
        let mut r10 = [0i16; PADDED];
        for chunk in r10[..WORDS * DRAWS_PER_WORD].chunks_exact_mut(DRAWS_PER_WORD) {
            let word = rng.next_u64();
            for (k, r) in chunk.iter_mut().enumerate() {
                *r = ((word >> (10 * k)) & 1023) as i16;
            }
        }
        let w_type: [i16; NEURON_TYPES] = std::array::from_fn(|k| self.g_syn[k].apply(w[k]) as i16);
        let mut w_in = [0i16; PADDED];
        for (x, &ty) in w_in.iter_mut().zip(&self.neuron_type) {
            *x = w_type[ty as usize];
        }
        let mut bytes = [0u8; PADDED];
        bytes[..N].copy_from_slice(packed);

        let lo = i16x8::splat(Code4::MIN as i16);
        let hi = i16x8::splat(Code4::MAX as i16);
        let zero = i16x8::ZERO;
        let eight = i16x8::splat(8);
        let nibble = i16x8::splat(0x0f);
        let dither = i16x8::splat(31);
        let mut spikes = 0u128;
        for (pair, out) in bytes.chunks_exact_mut(2 * LANES).enumerate() {
            let raw = u8x16::new(out.try_into().unwrap());
            let halves = [i16x8::from_u8x16_low(raw), i16x8::from_u8x16_high(raw)];
            let mut next = [zero; 2];
            for (h, x) in halves.into_iter().enumerate() {
                let c = 2 * pair + h;
                let at = c * LANES;
                let r = i16x8::new(r10[at..at + LANES].try_into().unwrap());
                let p = x.unbounded_shl_scalar(8).unbounded_shr_scalar(12);
                let v = x.unbounded_shl_scalar(12).unbounded_shr_scalar(12);

                let leak = p.simd_lt(zero).select(self.leak_i[c], self.leak_e[c]);
                let decayed = (p * leak + eight * (r & dither))
                    .unbounded_shr_scalar(8)
                    .max(lo)
                    .min(hi);
                let w = i16x8::new(w_in[at..at + LANES].try_into().unwrap());
                let psc_new = (decayed + w).max(lo).min(hi);

                let v_init = self.v_init[c];
                // refractory: the incoming current is discarded
                let refractory = v.simd_lt(v_init);
                let leak = refractory.select(self.leak_rfc[c], self.leak_mem[c]);
                let drive =
                    refractory.select(zero, (self.g_psc[c] * psc_new).unbounded_shr_scalar(4));
                let soma_r = r.unbounded_shr_scalar(5);
                let v_raw =
                    v_init + ((v - v_init) * leak + eight * soma_r).unbounded_shr_scalar(8) + drive;
                let overflow = v_raw.simd_gt(hi);
                let v_next = (overflow | v_raw.simd_lt(lo)).select(self.v_reset[c], v_raw);
                let spiked = overflow & psc_new.simd_gt(zero);
                spikes |= (spiked.to_bitmask() as u128) << at;
                next[h] = ((psc_new & nibble).unbounded_shl_scalar(4)) | (v_next & nibble);
            }
            out.copy_from_slice(&u8x16::narrow_i16x8(next[0], next[1]).to_array());
        }
        packed.copy_from_slice(&bytes[..N]);

        let spikes = spikes & ((1u128 << N) - 1);
        MinicolumnOutput {
            counts: self
                .type_mask
                .map(|m| Count4::saturating((spikes & m).count_ones())),
            spikes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unity() -> NeuronTypeParams {
        NeuronTypeParams::default()
    }

    fn c(v: i32) -> Code4 {
        Code4::new(v).unwrap()
    }

    #[test]
    fn psc_rest_stays_at_rest() {
        for r in 0..32 {
            assert_eq!(psc_step(Code4::ZERO, Code4::ZERO, &unity(), r), Code4::ZERO);
        }
    }

    #[test]
    fn psc_integrates_weighted_input() {
        for r in 0..32 {
            assert_eq!(psc_step(Code4::ZERO, c(3), &unity(), r), c(3));
        }
    }

    #[test]
    fn psc_saturates() {
        let mut p = unity();
        p.g_syn = Gain8::new(255).unwrap();
        for r in 0..32 {
            assert_eq!(psc_step(c(7), c(7), &p, r), c(7));
        }
    }

    #[test]
    fn psc_uses_sign_selected_leak() {
        let mut p = unity();
        p.leak_epsc = Leak8::new(0);
        p.leak_ipsc = Leak8::new(255);
        assert_eq!(psc_step(c(5), Code4::ZERO, &p, 0), Code4::ZERO);
        assert_eq!(psc_step(c(-5), Code4::ZERO, &p, 31), c(-5));
    }

    #[test]
    fn soma_rest_is_fixed_point() {
        let p = unity();
        for r in 0..32 {
            let (v, spk) = soma_step(NeuronState::rest(p.v_init), Code4::ZERO, &p, r);
            assert_eq!(v, p.v_init);
            assert!(!spk);
        }
    }

    #[test]
    fn soma_overflow_spikes_and_resets() {
        let p = unity();
        let s = NeuronState {
            psc: c(7),
            vmem: c(7),
        };
        for r in 0..32 {
            let (v, spk) = soma_step(s, c(7), &p, r);
            assert!(spk);
            assert_eq!(v, p.v_reset);
        }
    }

    #[test]
    fn soma_underflow_resets_without_spike() {
        let mut p = unity();
        p.g_psc = Gain8::new(255).unwrap();
        let s = NeuronState {
            psc: c(-7),
            vmem: c(7),
        };
        // 7 decays to at most 7, and floor(255 * -7 / 16) = -112
        for r in 0..32 {
            let (v, spk) = soma_step(s, c(-7), &p, r);
            assert!(!spk);
            assert_eq!(v, p.v_reset);
        }
    }

    #[test]
    fn refractory_discards_current() {
        let p = unity();
        let s = NeuronState {
            psc: Code4::ZERO,
            vmem: c(-3),
        };
        for r in 0..32 {
            for psc in -8..=7 {
                assert_eq!(
                    soma_step(s, c(psc), &p, r),
                    soma_step(s, Code4::ZERO, &p, r)
                );
            }
        }
    }

    #[test]
    fn spike_requires_excitatory_current() {
        for vm in -8..=7 {
            for psc in -8..=7 {
                for r in 0..32 {
                    let mut p = unity();
                    p.g_psc = Gain8::new(200).unwrap();
                    let s = NeuronState {
                        psc: Code4::ZERO,
                        vmem: c(vm),
                    };
                    let (_, spk) = soma_step(s, c(psc), &p, r);
                    if spk {
                        assert!(psc > 0);
                    }
                }
            }
        }
    }

    #[test]
    fn pack_is_one_byte_roundtrip() {
        for psc in -8..=7 {
            for vm in -8..=7 {
                let s = NeuronState {
                    psc: c(psc),
                    vmem: c(vm),
                };
                assert_eq!(NeuronState::unpack(s.pack()), s);
            }
        }
        assert_eq!(std::mem::size_of::<[u8; NEURONS_PER_MINICOLUMN]>(), 100);
    }

    #[test]
    fn layout_from_counts() {
        let l = MinicolumnLayout::from_counts([32, 8, 16, 4, 32, 8, 0, 0]).unwrap();
        assert_eq!(l.counts(), [32, 8, 16, 4, 32, 8, 0, 0]);
        assert_eq!(l.neuron_type(0), 0);
        assert_eq!(l.neuron_type(31), 0);
        assert_eq!(l.neuron_type(32), 1);
        assert_eq!(l.neuron_type(99), 5);
        assert!(MinicolumnLayout::from_counts([30, 10, 16, 4, 32, 8, 0, 0]).is_err());
        assert!(MinicolumnLayout::from_counts([32, 8, 16, 4, 32, 4, 0, 0]).is_err());
        // seven types summing to 100
        assert!(MinicolumnLayout::from_counts([16, 16, 16, 16, 16, 12, 8, 0]).is_ok());
    }

    #[test]
    fn minicolumn_at_rest_is_silent() {
        let params = [unity(); NEURON_TYPES];
        let layout = MinicolumnLayout::uniform(0).unwrap();
        let mut states = [NeuronState::rest(Code4::ZERO); NEURONS_PER_MINICOLUMN];
        let mut rng = RngStream::new(1);
        let out = minicolumn_step(&mut states, &layout, &[Code4::ZERO; 8], &params, &mut rng);
        assert_eq!(out, MinicolumnOutput::default());
        assert!(states.iter().all(|s| s.at_rest(Code4::ZERO)));
    }

    #[test]
    fn counts_saturate_at_fifteen() {
        let params = [unity(); NEURON_TYPES];
        let layout = MinicolumnLayout::uniform(0).unwrap();
        let mut states = [NeuronState {
            psc: c(7),
            vmem: c(7),
        }; NEURONS_PER_MINICOLUMN];
        let mut w = [Code4::ZERO; 8];
        w[0] = c(7);
        let mut rng = RngStream::new(1);
        let out = minicolumn_step(&mut states, &layout, &w, &params, &mut rng);
        assert_eq!(out.counts[0].get(), 15);
        assert_eq!(out.spikes.count_ones(), 100);
    }

    #[test]
    fn counts_bounded_by_population() {
        let params = [unity(); NEURON_TYPES];
        let layout = MinicolumnLayout::from_counts([32, 8, 16, 4, 32, 8, 0, 0]).unwrap();
        let pops = layout.counts();
        let mut states = [NeuronState::rest(Code4::ZERO); NEURONS_PER_MINICOLUMN];
        let mut rng = RngStream::new(5);
        let w = [c(7); 8];
        for _ in 0..50 {
            let out = minicolumn_step(&mut states, &layout, &w, &params, &mut rng);
            for (k, &pop) in pops.iter().enumerate() {
                assert!(out.counts[k].get() as u32 <= pop);
                let bits = (0..100)
                    .filter(|&n| layout.neuron_type(n) == k && out.spikes >> n & 1 == 1)
                    .count() as u32;
                assert_eq!(out.counts[k].get() as u32, bits.min(15));
            }
        }
    }

    #[test]
    fn identical_neurons_diverge_under_distinct_dither() {
        // Two neurons, same parameters and input, different streams.
        let p = unity();
        let trials = 200;
        let mut diverged = 0;
        for t in 0..trials {
            let mut a = NeuronState::rest(p.v_init);
            let mut b = a;
            let mut ra = RngStream::derive(11, &[t, 0]);
            let mut rb = RngStream::derive(11, &[t, 1]);
            let mut differ = false;
            for step in 0..100 {
                let w = if step % 7 == 0 { c(3) } else { Code4::ZERO };
                a.psc = psc_step(a.psc, w, &p, ra.draw5());
                a.vmem = soma_step(a, a.psc, &p, ra.draw5()).0;
                b.psc = psc_step(b.psc, w, &p, rb.draw5());
                b.vmem = soma_step(b, b.psc, &p, rb.draw5()).0;
                if a != b {
                    differ = true;
                    break;
                }
            }
            if differ {
                diverged += 1;
            }
        }
        assert!(
            diverged as f64 / trials as f64 > 0.99,
            "{diverged}/{trials}"
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn params() -> impl Strategy<Value = NeuronTypeParams> {
            (any::<[u8; 4]>(), 1u8.., 1u8.., -8i32..=7, -8i32..=7).prop_map(|(l, gs, gp, a, b)| {
                NeuronTypeParams {
                    leak_epsc: Leak8::new(l[0]),
                    leak_ipsc: Leak8::new(l[1]),
                    leak_mem: Leak8::new(l[2]),
                    leak_rfc: Leak8::new(l[3]),
                    g_syn: Gain8::new(gs).unwrap(),
                    g_psc: Gain8::new(gp).unwrap(),
                    v_init: c(a.max(b)),
                    v_reset: c(a.min(b)),
                }
            })
        }

        proptest! {
            #[test]
            fn batched_step_matches_scalar(
                ps in proptest::array::uniform8(params()),
                ws in proptest::array::uniform8(-8i32..=7),
                groups in proptest::array::uniform25(0u8..8),
                codes in proptest::collection::vec((-8i32..=7, -8i32..=7), 100),
                seed in any::<u64>(),
            ) {
                let mut counts = [0u32; NEURON_TYPES];
                for &g in &groups {
                    counts[g as usize] += 4;
                }
                let layout = MinicolumnLayout::from_counts(counts).unwrap();
                let w = ws.map(c);
                let mut states: [NeuronState; 100] =
                    std::array::from_fn(|n| NeuronState { psc: c(codes[n].0), vmem: c(codes[n].1) });
                let mut expect = states;
                let mut scalar_rng = RngStream::new(seed);
                let mut expect_spikes = 0u128;
                for (n, s) in expect.iter_mut().enumerate() {
                    let ty = layout.neuron_type(n);
                    let psc = psc_step(s.psc, w[ty], &ps[ty], scalar_rng.draw5());
                    let (vmem, spk) = soma_step(*s, psc, &ps[ty], scalar_rng.draw5());
                    *s = NeuronState { psc, vmem };
                    expect_spikes |= (spk as u128) << n;
                }
                let mut kernel_states = states;
                let out = minicolumn_step(&mut states, &layout, &w, &ps, &mut RngStream::new(seed));
                prop_assert_eq!(states, expect);
                prop_assert_eq!(out.spikes, expect_spikes);
                let kernel = MinicolumnKernel::new(&layout, &ps);
                let kout = kernel.step(&mut kernel_states, &w, &mut RngStream::new(seed));
                prop_assert_eq!(kernel_states, expect);
                prop_assert_eq!(kout, out);
            }
        }
    }
}
