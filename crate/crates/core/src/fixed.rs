//! Fixed-point codes and the dithered decay primitive.
//!
//! Every neuron state variable is a signed 4-bit code. Exponential decay is
//! realised by multiplying with an 8-bit leakage rate and shifting right by
//! eight bits, with the discarded low byte regenerated by a 5-bit uniform
//! draw so the decay is unbiased in expectation.

use std::fmt;

use thiserror::Error;

/// Number of bits in a full minicolumn address.
pub const ADDR_BITS: u32 = 27;
/// Number of bits in a hypercolumn address.
pub const HYPER_BITS: u32 = 20;
/// Number of bits in a minicolumn index inside a hypercolumn.
pub const MINI_BITS: u32 = 7;

const ADDR_MASK: u32 = (1 << ADDR_BITS) - 1;
const HYPER_MASK: u32 = (1 << HYPER_BITS) - 1;
const MINI_MASK: u32 = (1 << MINI_BITS) - 1;

/// Largest time constant (in steps) the 5-bit dither can resolve.
pub const MAX_TAU_MS: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FixedError {
    #[error("time constant {0} ms outside (0, 30]")]
    TauOutOfRange(f64),
    #[error("4-bit code {0} outside [-8, 7]")]
    CodeOutOfRange(i32),
    #[error("gain {0} outside [1/16, 255/16]")]
    GainOutOfRange(f64),
    #[error("address {0:#x} does not fit in 27 bits")]
    AddressOutOfRange(u32),
    #[error("hypercolumn {hyper:#x} / minicolumn {mini} out of range")]
    PartsOutOfRange { hyper: u32, mini: u32 },
}

/// Signed 4-bit two's-complement code; `value = code / 8`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Code4(i8);

impl Code4 {
    pub const MIN: i8 = -8;
    pub const MAX: i8 = 7;
    pub const ZERO: Code4 = Code4(0);

    pub fn new(code: i32) -> Result<Self, FixedError> {
        if (Self::MIN as i32..=Self::MAX as i32).contains(&code) {
            Ok(Code4(code as i8))
        } else {
            Err(FixedError::CodeOutOfRange(code))
        }
    }

    /// Clamps any wide integer into the 4-bit range.
    #[inline]
    pub const fn saturating(v: i32) -> Self {
        let c = if v < Self::MIN as i32 {
            Self::MIN
        } else if v > Self::MAX as i32 {
            Self::MAX
        } else {
            v as i8
        };
        Code4(c)
    }

    /// Nearest code to a normalised value, saturating at the range ends.
    pub fn nearest(value: f64) -> Self {
        Self::saturating((value * 8.0).round() as i32)
    }

    #[inline]
    pub const fn code(self) -> i8 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 8.0
    }

    /// Low nibble of the two's-complement representation.
    #[inline]
    pub const fn to_nibble(self) -> u8 {
        (self.0 as u8) & 0x0f
    }

    #[inline]
    pub const fn from_nibble(n: u8) -> Self {
        // sign-extend bit 3
        Code4((((n & 0x0f) << 4) as i8) >> 4)
    }
}

impl fmt::Display for Code4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Unsigned 8-bit gain with four fractional bits; `value = code / 16`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Gain8(u8);

impl Gain8 {
    pub const UNITY: Gain8 = Gain8(16);

    pub fn new(code: u8) -> Result<Self, FixedError> {
        if code == 0 {
            Err(FixedError::GainOutOfRange(0.0))
        } else {
            Ok(Gain8(code))
        }
    }

    pub fn from_real(gain: f64) -> Result<Self, FixedError> {
        let code = (gain * 16.0).round();
        if !(1.0..=255.0).contains(&code) {
            return Err(FixedError::GainOutOfRange(gain));
        }
        Ok(Gain8(code as u8))
    }

    #[inline]
    pub const fn code(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 16.0
    }

    /// `floor(code * x / 16)`, the gain product before saturation.
    #[inline]
    pub fn apply(self, x: Code4) -> i32 {
        (self.0 as i32 * x.code() as i32) >> 4
    }
}

impl Default for Gain8 {
    fn default() -> Self {
        Self::UNITY
    }
}

/// 8-bit leakage rate; one step multiplies by `L / 256`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Leak8(u8);

impl Leak8 {
    pub const fn new(code: u8) -> Self {
        Leak8(code)
    }

    pub fn from_tau(tau_ms: f64) -> Result<Self, FixedError> {
        leak_code(tau_ms)
    }

    #[inline]
    pub const fn code(self) -> u8 {
        self.0
    }

    pub fn factor(self) -> f64 {
        self.0 as f64 / 256.0
    }
}

/// Saturating 4-bit spike count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Count4(u8);

impl Count4 {
    pub const MAX: u8 = 15;
    pub const ZERO: Count4 = Count4(0);

    #[inline]
    pub const fn saturating(n: u32) -> Self {
        Count4(if n > Self::MAX as u32 {
            Self::MAX
        } else {
            n as u8
        })
    }

    pub fn new(n: u8) -> Result<Self, FixedError> {
        if n <= Self::MAX {
            Ok(Count4(n))
        } else {
            Err(FixedError::CodeOutOfRange(n as i32))
        }
    }

    #[inline]
    pub const fn get(self) -> u8 {
        self.0
    }
}

/// 27-bit minicolumn address: 20-bit hypercolumn, 7-bit minicolumn index.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MiniAddr(u32);

impl MiniAddr {
    pub const MAX_RAW: u32 = ADDR_MASK;

    pub fn new(raw: u32) -> Result<Self, FixedError> {
        if raw > ADDR_MASK {
            Err(FixedError::AddressOutOfRange(raw))
        } else {
            Ok(MiniAddr(raw))
        }
    }

    pub fn from_parts(hyper: u32, mini: u32) -> Result<Self, FixedError> {
        if hyper > HYPER_MASK || mini > MINI_MASK {
            return Err(FixedError::PartsOutOfRange { hyper, mini });
        }
        Ok(MiniAddr((hyper << MINI_BITS) | mini))
    }

    /// Caller guarantees `hyper < 2^20` and `mini < 128`.
    #[inline]
    pub(crate) const fn from_parts_unchecked(hyper: u32, mini: u32) -> Self {
        MiniAddr(((hyper & HYPER_MASK) << MINI_BITS) | (mini & MINI_MASK))
    }

    #[inline]
    pub const fn raw(self) -> u32 {
        self.0
    }

    #[inline]
    pub const fn hyper(self) -> u32 {
        self.0 >> MINI_BITS
    }

    #[inline]
    pub const fn mini(self) -> u32 {
        self.0 & MINI_MASK
    }
}

impl fmt::Display for MiniAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:07x}", self.0)
    }
}

/// Leakage code for a time constant: `round(256 * tau / (tau + 1))`,
/// half-up, clamped to 255.
pub fn leak_code(tau_ms: f64) -> Result<Leak8, FixedError> {
    if !(tau_ms > 0.0 && tau_ms <= MAX_TAU_MS) {
        return Err(FixedError::TauOutOfRange(tau_ms));
    }
    let l = (256.0 * tau_ms / (tau_ms + 1.0) + 0.5).floor();
    Ok(Leak8(l.min(255.0) as u8))
}

/// Unclamped dithered decay: `floor((x * L + 8 * r) / 256)`.
///
/// `x` may exceed the 4-bit range (the soma decays a deviation from its
/// initial value, which spans [-15, 15]).
#[inline]
pub fn decay_raw(x: i32, leak: Leak8, r: u8) -> i32 {
    debug_assert!(r < 32);
    (x * leak.code() as i32 + 8 * r as i32) >> 8
}

/// Dithered decay of a 4-bit code with saturation.
#[inline]
pub fn decay_stochastic(x: Code4, leak: Leak8, r: u8) -> Code4 {
    Code4::saturating(decay_raw(x.code() as i32, leak, r))
}

/// `(hyper + offset) mod 2^20`.
#[inline]
pub const fn addr_wrap_add(hyper: u32, offset: u32) -> u32 {
    hyper.wrapping_add(offset) & HYPER_MASK
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn leak_codes_for_reference_taus() {
        assert_eq!(leak_code(3.0).unwrap().code(), 192);
        assert_eq!(leak_code(5.8).unwrap().code(), 218);
        assert_eq!(leak_code(30.0).unwrap().code(), 248);
        assert_eq!(leak_code(10.0).unwrap().code(), 233);
    }

    #[test]
    fn leak_code_rejects_out_of_range() {
        assert!(leak_code(0.0).is_err());
        assert!(leak_code(-1.0).is_err());
        assert!(leak_code(30.01).is_err());
        assert!(leak_code(f64::NAN).is_err());
    }

    fn dither_mean(x: i8, l: u8) -> f64 {
        (0..32u8)
            .map(|r| decay_stochastic(Code4::saturating(x as i32), Leak8::new(l), r).code() as f64)
            .sum::<f64>()
            / 32.0
    }

    #[test]
    fn zero_is_a_fixed_point() {
        for l in 0..=255u8 {
            for r in 0..32 {
                assert_eq!(decay_stochastic(Code4::ZERO, Leak8::new(l), r), Code4::ZERO);
            }
        }
    }

    #[test]
    fn dither_means_match_enumeration() {
        // floor((1631 + 8r) / 256) is 6 for r <= 20 and 7 for the other 11 draws
        assert_eq!(dither_mean(7, 233), 6.34375);
        assert!((dither_mean(7, 233) - 7.0 * 233.0 / 256.0).abs() <= 1.0 / 32.0);
        assert_eq!(dither_mean(-8, 192), -6.0);
    }

    #[test]
    fn dither_error_bounded_for_all_codes() {
        for x in -8i8..=7 {
            for l in 0..=255u8 {
                let exact = x as f64 * l as f64 / 256.0;
                assert!(
                    (dither_mean(x, l) - exact).abs() <= 1.0 / 32.0,
                    "x={x} l={l}"
                );
            }
        }
    }

    #[test]
    fn addr_wrap() {
        assert_eq!(addr_wrap_add(0x00005, 0), 0x00005);
        assert_eq!(addr_wrap_add(0xFFFFF, 1), 0);
        assert_eq!(addr_wrap_add(0x12345, 0x10), 0x12355);
    }

    #[test]
    fn nibble_roundtrip() {
        for c in -8..=7 {
            let code = Code4::new(c).unwrap();
            assert_eq!(Code4::from_nibble(code.to_nibble()), code);
        }
    }

    #[test]
    fn gain_from_real() {
        assert_eq!(Gain8::from_real(1.0).unwrap().code(), 16);
        assert_eq!(Gain8::from_real(0.0625).unwrap().code(), 1);
        assert_eq!(Gain8::from_real(15.9375).unwrap().code(), 255);
        assert!(Gain8::from_real(0.01).is_err());
        assert!(Gain8::from_real(16.0).is_err());
    }

    #[test]
    fn address_parts() {
        let a = MiniAddr::from_parts(0x12345, 99).unwrap();
        assert_eq!(a.hyper(), 0x12345);
        assert_eq!(a.mini(), 99);
        assert!(MiniAddr::new(1 << 27).is_err());
        assert!(MiniAddr::from_parts(1 << 20, 0).is_err());
        assert!(MiniAddr::from_parts(0, 128).is_err());
        assert_eq!(a.to_string().len(), 7);
    }

    proptest! {
        #[test]
        fn wrap_add_identity_and_associativity(a in 0u32..(1 << 20), b in 0u32..(1 << 20), c in 0u32..(1 << 20)) {
            prop_assert_eq!(addr_wrap_add(a, 0), a);
            prop_assert_eq!(
                addr_wrap_add(addr_wrap_add(a, b), c),
                addr_wrap_add(a, addr_wrap_add(b, c))
            );
        }

        #[test]
        fn decay_expectation_shrinks_magnitude(x in -8i8..=7, l in 0u8..=255) {
            let mean = dither_mean(x, l);
            prop_assert!(mean.abs() <= (x as f64).abs() * l as f64 / 256.0 + 1.0 / 32.0);
        }

        #[test]
        fn count_saturates(n in 0u32..10_000) {
            prop_assert_eq!(Count4::saturating(n).get() as u32, n.min(15));
        }
    }
}
