use crate::codebook::KSchedule;

/// `⌈log₂ k⌉`, the bits needed for an index into `k` entries.
pub fn index_bits(k: u32) -> u32 {
    if k <= 1 {
        0
    } else {
        32 - (k - 1).leading_zeros()
    }
}

/// Payload length: `Σ_{i: K_i > 1} (⌈log₂K_i⌉·M + ⌈log₂C⌉·(M − 1))` over
/// sampling steps `2..=steps`.
pub fn rate_bits(sizes: &KSchedule, steps: usize, depth: u32, coeffs: u32) -> u64 {
    let coeff_bits = if depth > 1 { index_bits(coeffs) as u64 } else { 0 };
    (2..=steps)
        .map(|i| sizes.size(i))
        .filter(|&k| k > 1)
        .map(|k| index_bits(k) as u64 * depth as u64 + coeff_bits * (depth as u64 - 1))
        .sum()
}

/// Bits per pixel for a caller-supplied pixel count.
pub fn bpp(bits: u64, pixels: u64) -> f64 {
    bits as f64 / pixels as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_bit_widths() {
        let expect = [(1, 0), (2, 1), (3, 2), (4, 2), (5, 3), (256, 8), (257, 9), (8192, 13)];
        for (k, b) in expect {
            assert_eq!(index_bits(k), b, "K = {k}");
            assert_eq!(b, (k as f64).log2().ceil() as u32);
        }
    }

    #[test]
    fn worked_rates() {
        assert_eq!(rate_bits(&KSchedule::Uniform(256), 100, 1, 0), 99 * 8);
        assert_eq!(rate_bits(&KSchedule::Uniform(1), 100, 1, 0), 0);
        assert_eq!(rate_bits(&KSchedule::Uniform(16), 10, 3, 4), 9 * (4 * 3 + 2 * 2));
        let adapted = KSchedule::Adapted { k: 256, first: 400, last: 899 };
        assert_eq!(rate_bits(&adapted, 1000, 1, 0), 500 * 8);
        let b = rate_bits(&KSchedule::Uniform(8192), 1000, 1, 0);
        assert!((bpp(b, 768 * 768) - 0.0220).abs() < 1e-4);
    }
}
