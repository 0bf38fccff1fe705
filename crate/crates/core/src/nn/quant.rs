use crate::error::{Error, Result};

/// Uniform quantizer on `[-1, 1]` with `2^bits` levels, both endpoints
/// included.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Quantizer {
    bits: u8,
}

impl Quantizer {
    pub const MAX_BITS: u8 = 16;

    pub fn new(bits: u8) -> Result<Self> {
        if !(1..=Self::MAX_BITS).contains(&bits) {
            return Err(Error::config(format!(
                "quantizer bits must be in 1..={}, got {bits}",
                Self::MAX_BITS
            )));
        }
        Ok(Quantizer { bits })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn levels(&self) -> u32 {
        1u32 << self.bits
    }

    fn steps(&self) -> f64 {
        (self.levels() - 1) as f64
    }

    /// Clamp to `[-1, 1]` and snap to the nearest level.
    pub fn quantize(&self, v: f64) -> f64 {
        let c = v.clamp(-1.0, 1.0);
        let k = ((c + 1.0) / 2.0 * self.steps()).round();
        self.level(k as u32)
    }

    /// Value of level `k` (0 is −1, `levels() - 1` is +1).
    pub fn level(&self, k: u32) -> f64 {
        2.0 * k as f64 / self.steps() - 1.0
    }

    pub fn is_level(&self, v: f64) -> bool {
        self.quantize(v) == v
    }

    /// Straight-through gradient: upstream passes unchanged where the input
    /// was inside the clamp range and is zeroed outside it.
    pub fn ste_grad(&self, input: f64, upstream: f64) -> f64 {
        if (-1.0..=1.0).contains(&input) {
            upstream
        } else {
            0.0
        }
    }

    pub fn quantize_slice(&self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|&x| self.quantize(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let one = Quantizer::new(1).unwrap();
        assert_eq!(one.quantize(0.3), 1.0);
        assert_eq!(one.quantize(-0.3), -1.0);
        let eight = Quantizer::new(8).unwrap();
        assert_eq!(eight.quantize(-1.0), -1.0);
        assert_eq!(eight.quantize(2.5), 1.0);
        // 127.5 rounds half away from zero to level 128
        assert_eq!(eight.quantize(0.0), 2.0 * 128.0 / 255.0 - 1.0);
        assert!(Quantizer::new(0).is_err());
    }

    #[test]
    fn level_count() {
        for bits in 1..=8u8 {
            let q = Quantizer::new(bits).unwrap();
            let mut seen: Vec<f64> = (0..=4000)
                .map(|i| q.quantize(-1.2 + 2.4 * i as f64 / 4000.0))
                .collect();
            seen.dedup();
            assert_eq!(seen.len() as u32, q.levels(), "bits {bits}");
            assert_eq!(seen[0], -1.0);
            assert_eq!(*seen.last().unwrap(), 1.0);
        }
    }

    #[test]
    fn ste_masks_outside_range() {
        let q = Quantizer::new(8).unwrap();
        assert_eq!(q.ste_grad(0.4, 2.0), 2.0);
        assert_eq!(q.ste_grad(1.5, 2.0), 0.0);
        assert_eq!(q.ste_grad(-1.0, 2.0), 2.0);
    }

    proptest! {
        #[test]
        fn idempotent(bits in 1u8..=8, v in -3.0f64..3.0) {
            let q = Quantizer::new(bits).unwrap();
            let once = q.quantize(v);
            prop_assert_eq!(q.quantize(once), once);
            prop_assert!(q.is_level(once));
        }

        #[test]
        fn monotone(bits in 1u8..=8, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let q = Quantizer::new(bits).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(q.quantize(lo) <= q.quantize(hi));
        }
    }
}
