//! Software emulation of IEEE-754 binary16 storage.
//!
//! Values stay in 32-bit (or 64-bit) containers but are constrained to the
//! binary16 grid: 11 significand bits, exponent range [-14, 15], subnormals
//! down to 2^-24, largest finite magnitude 65504.

/// Largest finite binary16 magnitude.
pub const HALF_MAX: f32 = 65504.0;

/// Smallest magnitude that rounds to infinity (midpoint between 65504 and 2^16).
const HALF_OVERFLOW: f64 = 65520.0;

/// A 32-bit value known to lie on the binary16 grid (including ±inf and NaN).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct HalfEmulated(f32);

impl HalfEmulated {
    pub fn from_f32(v: f32) -> Self {
        HalfEmulated(round_to_half(v))
    }

    pub fn get(self) -> f32 {
        self.0
    }

    pub fn is_overflow(self) -> bool {
        self.0.is_infinite()
    }
}

impl From<HalfEmulated> for f32 {
    fn from(h: HalfEmulated) -> f32 {
        h.0
    }
}

/// Rounds to the nearest binary16 value, ties to even. Magnitudes at or above
/// 65520 become ±inf; NaN stays NaN.
#[inline]
pub fn round_to_half(x: f32) -> f32 {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() {
        return x;
    }
    if a as f64 >= HALF_OVERFLOW {
        return f32::INFINITY.copysign(x);
    }
    let exp = ((a.to_bits() >> 23) & 0xff) as i32 - 127;
    let quantum = f32::from_bits(((exp.max(-14) - 10 + 127) as u32) << 23);
    ((a / quantum).round_ties_even() * quantum).copysign(x)
}

/// `f64` variant of [`round_to_half`]; single rounding straight to the grid.
#[inline]
pub fn round_f64_to_half(x: f64) -> f64 {
    let a = x.abs();
    if a == 0.0 || !a.is_finite() {
        return x;
    }
    if a >= HALF_OVERFLOW {
        return f64::INFINITY.copysign(x);
    }
    let exp = ((a.to_bits() >> 52) & 0x7ff) as i64 - 1023;
    let quantum = f64::from_bits(((exp.max(-14) - 10 + 1023) as u64) << 52);
    ((a / quantum).round_ties_even() * quantum).copysign(x)
}

pub fn slice_to_half(values: &mut [f32]) {
    for v in values {
        *v = round_to_half(*v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_values_survive() {
        assert_eq!(round_to_half(1.0), 1.0);
        assert_eq!(round_to_half(-0.5), -0.5);
        assert_eq!(round_to_half(65504.0), 65504.0);
    }

    #[test]
    fn ties_go_to_even() {
        // 2049 lies halfway between 2048 and 2050; 2048 has the even significand.
        assert_eq!(round_to_half(2049.0), 2048.0);
        assert_eq!(round_to_half(2051.0), 2052.0);
    }

    #[test]
    fn overflow_becomes_infinity() {
        assert_eq!(round_to_half(65520.0), f32::INFINITY);
        assert_eq!(round_to_half(-70000.0), f32::NEG_INFINITY);
        assert_eq!(round_to_half(65519.0), 65504.0);
        assert!(HalfEmulated::from_f32(1e6).is_overflow());
    }

    #[test]
    fn subnormals() {
        let tiny = 2f32.powi(-24);
        assert_eq!(round_to_half(tiny), tiny);
        assert_eq!(round_to_half(tiny * 0.5), 0.0);
        assert_eq!(round_to_half(tiny * 0.75), tiny);
    }

    proptest! {
        #[test]
        fn agrees_with_reference_conversion(bits in any::<u32>()) {
            let x = f32::from_bits(bits);
            let ours = round_to_half(x);
            let reference = ::half::f16::from_f32(x).to_f32();
            if x.is_nan() {
                prop_assert!(ours.is_nan());
            } else {
                prop_assert_eq!(ours.to_bits(), reference.to_bits());
            }
        }

        #[test]
        fn idempotent(bits in any::<u32>()) {
            let x = f32::from_bits(bits);
            prop_assume!(!x.is_nan());
            let once = round_to_half(x);
            prop_assert_eq!(round_to_half(once).to_bits(), once.to_bits());
        }

        #[test]
        fn f64_route_matches_f32_route(x in -70000.0f32..70000.0) {
            prop_assert_eq!(round_f64_to_half(x as f64) as f32, round_to_half(x));
        }
    }
}
