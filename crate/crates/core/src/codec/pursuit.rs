//! Matching-pursuit refinement of the selected noise.
//!
//! Round 1 picks `k_1 = argmax ⟨C(k), r⟩`. With more than one round the
//! running noise starts as `z = C(k_1) / rms(C(k_1))`, and every later round
//! picks the pair `(k, γ)` with `γ ∈ {1/C, 2/C, ..., 1}` that maximizes
//! `⟨v, r⟩ / rms(v)` for `v = γ z + (1 - γ) C(k)`, then sets `z = v / rms(v)`.
//! Here `rms(v) = sqrt(Σ v² / d)`, the empirical standard deviation about
//! zero. Ties go to the lowest `k`, then the lowest `γ`. Choosing `γ = 1`
//! keeps `z`, so no round lowers the objective.

use crate::codebook::CodebookSource;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::selection::select_compression;

#[derive(Debug, Clone, PartialEq)]
pub struct PursuitOutcome {
    pub noise: Vec<f64>,
    /// `k^(1), ..., k^(M)`.
    pub indices: Vec<u32>,
    /// Coefficient ids `c` for rounds `2..=M`; `γ = c / C`.
    pub coeff_ids: Vec<u32>,
    /// `⟨z^(m), r⟩ / ‖r‖` after each round, with `z` at unit rms.
    pub correlations: Vec<f64>,
}

/// The coefficient set `Γ`, evenly spaced in `(0, 1]`.
pub fn gammas(c: u32) -> Vec<f64> {
    (1..=c).map(|j| j as f64 / c as f64).collect()
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn normalize(v: &mut [f64]) -> Result<()> {
    let s = rms(v);
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::DegenerateNoise);
    }
    for x in v.iter_mut() {
        *x /= s;
    }
    Ok(())
}

/// `z ← (γ z + (1 - γ) entry) / rms(·)`. Encoder and decoder share this.
pub fn combine(z: &mut [f64], entry: &[f64], gamma: f64) -> Result<()> {
    for (a, b) in z.iter_mut().zip(entry) {
        *a = gamma * *a + (1.0 - gamma) * b;
    }
    normalize(z)
}

fn correlation(z: &[f64], r: &[f64], r_norm: f64) -> f64 {
    if r_norm == 0.0 {
        0.0
    } else {
        z.iter().zip(r).map(|(a, b)| a * b).sum::<f64>() / r_norm
    }
}

/// Greedy `M`-round pursuit against `residual` using the codebook at
/// `timestep` and `C = coeffs` coefficient levels.
pub fn mp_refine(
    residual: &[f64],
    book: &dyn CodebookSource,
    timestep: usize,
    depth: u32,
    coeffs: u32,
) -> Result<PursuitOutcome> {
    if depth == 0 {
        return Err(Error::InvalidConfig("pursuit depth must be at least 1".into()));
    }
    if depth > 1 && coeffs < 2 {
        return Err(Error::InvalidConfig(
            "pursuit needs at least 2 coefficient levels".into(),
        ));
    }
    let d = book.dim();
    check_dim(d, residual.len())?;
    check_finite("residual", residual)?;
    let r_norm = residual.iter().map(|x| x * x).sum::<f64>().sqrt();

    let k1 = select_compression(residual, book, timestep)?.index();
    let first = book.entry(timestep, k1)?;
    if depth == 1 {
        let corr = correlation(first, residual, r_norm) / rms(first).max(f64::MIN_POSITIVE);
        return Ok(PursuitOutcome {
            noise: first.to_vec(),
            indices: vec![k1],
            coeff_ids: Vec::new(),
            correlations: vec![corr],
        });
    }

    let mut z = first.to_vec();
    normalize(&mut z)?;
    let mut indices = vec![k1];
    let mut coeff_ids = Vec::with_capacity(depth as usize - 1);
    let mut correlations = vec![correlation(&z, residual, r_norm)];
    let levels = gammas(coeffs);
    let block = book.block(timestep)?;
    let df = d as f64;

    for _ in 1..depth {
        // Expand ⟨v, r⟩ and ‖v‖² in terms of per-entry inner products.
        let zr: f64 = z.iter().zip(residual).map(|(a, b)| a * b).sum();
        let zz: f64 = z.iter().map(|a| a * a).sum();
        let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
        for (j, row) in block.chunks_exact(d).enumerate() {
            let (mut cr, mut zc, mut cc) = (0.0, 0.0, 0.0);
            for ((c, zi), ri) in row.iter().zip(&z).zip(residual) {
                cr += c * ri;
                zc += c * zi;
                cc += c * c;
            }
            for (g_idx, &g) in levels.iter().enumerate() {
                let h = 1.0 - g;
                let vv = g * g * zz + 2.0 * g * h * zc + h * h * cc;
                if !(vv > 0.0) {
                    continue;
                }
                let obj = (g * zr + h * cr) / (vv / df).sqrt();
                if obj > best.0 {
                    best = (obj, j, g_idx);
                }
            }
        }
        if best.0 == f64::NEG_INFINITY {
            return Err(Error::DegenerateNoise);
        }
        let (k, c) = (best.1 as u32 + 1, best.2 as u32 + 1);
        combine(&mut z, book.entry(timestep, k)?, levels[best.2])?;
        indices.push(k);
        coeff_ids.push(c);
        correlations.push(correlation(&z, residual, r_norm));
    }
    Ok(PursuitOutcome {
        noise: z,
        indices,
        coeff_ids,
        correlations,
    })
}

/// Rebuilds the refined noise from stored indices. `refinements` holds
/// `(k, c)` for rounds `2..=M`; an empty list yields the raw entry.
pub fn pursuit_noise(
    book: &dyn CodebookSource,
    timestep: usize,
    first: u32,
    refinements: &[(u32, u32)],
    coeffs: u32,
) -> Result<Vec<f64>> {
    let mut z = book.entry(timestep, first)?.to_vec();
    if refinements.is_empty() {
        return Ok(z);
    }
    normalize(&mut z)?;
    for &(k, c) in refinements {
        if c == 0 || c > coeffs {
            return Err(Error::CorruptPayload(format!(
                "coefficient id {c} outside 1..={coeffs}"
            )));
        }
        combine(&mut z, book.entry(timestep, k)?, c as f64 / coeffs as f64)?;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{CodebookSpec, Codebooks, FixtureCodebook, KSchedule};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut impl Rng, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn single_round_is_plain_selection() {
        let b = Codebooks::new(CodebookSpec::new(1, 8, 5, KSchedule::Uniform(64))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let r = randn(&mut rng, 8);
            let out = mp_refine(&r, &b, 3, 1, 4).unwrap();
            let k = select_compression(&r, &b, 3).unwrap().index();
            assert_eq!(out.indices, vec![k]);
            assert_eq!(out.noise, b.entry(3, k).unwrap());
        }
    }

    #[test]
    fn two_rounds_match_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let entries: Vec<Vec<f64>> = (0..3).map(|_| randn(&mut rng, 4)).collect();
            let f = FixtureCodebook::new(&entries).unwrap();
            let r = randn(&mut rng, 4);
            let out = mp_refine(&r, &f, 2, 2, 2).unwrap();

            let score = |v: &[f64]| {
                let s = (v.iter().map(|x| x * x).sum::<f64>() / 4.0).sqrt();
                v.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / s
            };
            let dot = |v: &[f64]| v.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>();
            let k1 = (0..3).rev().max_by(|&a, &b| dot(&entries[a]).total_cmp(&dot(&entries[b]))).unwrap();
            let s1 = (entries[k1].iter().map(|x| x * x).sum::<f64>() / 4.0).sqrt();
            let z: Vec<f64> = entries[k1].iter().map(|x| x / s1).collect();
            let mut best = (f64::NEG_INFINITY, 0, 0);
            for (k, e) in entries.iter().enumerate() {
                for (c, g) in [0.5, 1.0].iter().enumerate() {
                    let v: Vec<f64> = z.iter().zip(e).map(|(a, b)| g * a + (1.0 - g) * b).collect();
                    let s = score(&v);
                    if s > best.0 {
                        best = (s, k, c);
                    }
                }
            }
            // `γ = 1`, and `k = k_1` at any `γ`, reproduce `z`, so ties with
            // `z` itself are common.
            assert_eq!(out.indices[0], k1 as u32 + 1);
            assert!((score(&out.noise) - best.0).abs() < 1e-9);
            if (best.0 - score(&z)).abs() > 1e-9 {
                assert_eq!(out.indices[1], best.1 as u32 + 1);
                assert_eq!(out.coeff_ids, vec![best.2 as u32 + 1]);
            } else {
                assert!(out.indices[1] == 1 || out.indices[1] == k1 as u32 + 1);
            }
        }
    }

    #[test]
    fn correlation_never_decreases() {
        let b = Codebooks::new(CodebookSpec::new(3, 16, 3, KSchedule::Uniform(128))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let r = randn(&mut rng, 16);
            let out = mp_refine(&r, &b, 2, 5, 4).unwrap();
            for w in out.correlations.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "{:?}", out.correlations);
            }
            assert!((rms(&out.noise) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn decoder_rebuilds_encoder_noise() {
        let b = Codebooks::new(CodebookSpec::new(4, 8, 3, KSchedule::Uniform(32))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for depth in 1..=4 {
            let r = randn(&mut rng, 8);
            let out = mp_refine(&r, &b, 3, depth, 8).unwrap();
            let refinements: Vec<(u32, u32)> = out.indices[1..]
                .iter()
                .copied()
                .zip(out.coeff_ids.iter().copied())
                .collect();
            let rebuilt = pursuit_noise(&b, 3, out.indices[0], &refinements, 8).unwrap();
            assert_eq!(rebuilt, out.noise);
        }
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        let f = FixtureCodebook::new(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(mp_refine(&[1.0, 0.0], &f, 2, 2, 2), Err(Error::DegenerateNoise)));
        assert!(mp_refine(&[1.0, 0.0], &f, 2, 1, 2).is_ok());
        assert!(mp_refine(&[1.0, 0.0], &f, 2, 0, 2).is_err());
        assert!(mp_refine(&[1.0, 0.0], &f, 2, 2, 1).is_err());
        assert_eq!(gammas(4), vec![0.25, 0.5, 0.75, 1.0]);
    }
}
