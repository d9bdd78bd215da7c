//! Codebook update and fuzzy C-means initialization.

use crate::error::{Result, SegError};
use crate::types::{Codebook, ImageField, Membership, ObservationMask};

/// Phase weights below this are treated as an empty phase.
pub const EMPTY_PHASE_WEIGHT: f64 = 1e-12;

/// Fuzzifier of the C-means initializer.
pub const FCM_FUZZIFIER: f64 = 2.0;

/// Weighted phase means `c_{i,j} = Σ g_j ω u_i / Σ ω u_i`.
///
/// A phase whose total observed weight is below [`EMPTY_PHASE_WEIGHT`] keeps
/// its entry from `previous`, so it can re-acquire pixels later.
pub fn update_c(g: &ImageField, u: &Membership, omega: &ObservationMask, previous: &Codebook) -> Result<Codebook> {
    if u.width() != g.width() || u.height() != g.height() || !omega.matches(g) {
        return Err(SegError::DimensionMismatch("image, membership and mask sizes differ".into()));
    }
    if previous.phases() != u.phases() || previous.channels() != g.channels() {
        return Err(SegError::DimensionMismatch("codebook shape does not match".into()));
    }
    let mut c = previous.clone();
    let w = omega.data();
    for i in 0..u.phases() {
        let ui = u.phase(i);
        let denom: f64 = ui.iter().zip(w).map(|(a, b)| a * b).sum();
        if denom < EMPTY_PHASE_WEIGHT {
            continue;
        }
        for j in 0..g.channels() {
            let num: f64 = g.plane(j).iter().zip(ui).zip(w).map(|((gv, a), b)| gv * a * b).sum();
            c.set(i, j, num / denom);
        }
    }
    Ok(c)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Fuzzy memberships (fuzzifier 2) of one sample against all centers.
fn fcm_weights(x: &[f64], centers: &[Vec<f64>], out: &mut [f64]) {
    let d: Vec<f64> = centers.iter().map(|c| sq_dist(x, c)).collect();
    let zeros = d.iter().filter(|&&v| v == 0.0).count();
    if zeros > 0 {
        for (o, &v) in out.iter_mut().zip(&d) {
            *o = if v == 0.0 { 1.0 / zeros as f64 } else { 0.0 };
        }
        return;
    }
    // exponent 2/(m-1) on distances is 1/(m-1) on squared distances
    let e = 1.0 / (FCM_FUZZIFIER - 1.0);
    for (k, o) in out.iter_mut().enumerate() {
        let s: f64 = d.iter().map(|dj| (d[k] / dj).powf(e)).sum();
        *o = 1.0 / s;
    }
}

/// Fuzzy C-means on the observed pixels.
///
/// Centers start at `K` evenly spaced quantiles of the distinct observed
/// values (ranked by channel mean) and are returned sorted ascending by their
/// first channel. Unobserved pixels get uniform memberships.
pub fn fcm_init(f: &ImageField, omega: &ObservationMask, phases: usize, iters: usize) -> Result<(Codebook, Membership)> {
    if !omega.matches(f) {
        return Err(SegError::DimensionMismatch("mask and image sizes differ".into()));
    }
    if phases < 2 {
        return Err(SegError::InvalidInput(format!("need at least 2 phases, got {phases}")));
    }
    let nc = f.channels();
    let n = f.pixels();
    let observed: Vec<usize> = (0..n).filter(|&p| omega.is_observed(p)).collect();
    let samples: Vec<Vec<f64>> = observed.iter().map(|&p| (0..nc).map(|j| f.plane(j)[p]).collect()).collect();

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut distinct: Vec<&Vec<f64>> = samples.iter().collect();
    distinct.sort_by(|a, b| mean(a).total_cmp(&mean(b)).then_with(|| {
        a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    }));
    distinct.dedup();
    if distinct.len() < phases {
        return Err(SegError::Degenerate(format!(
            "{} distinct observed values for {phases} phases",
            distinct.len()
        )));
    }
    let mut centers: Vec<Vec<f64>> = (0..phases)
        .map(|k| {
            let q = ((k as f64 + 0.5) * distinct.len() as f64 / phases as f64).floor() as usize;
            distinct[q.min(distinct.len() - 1)].clone()
        })
        .collect();

    let mut weights = vec![0.0; samples.len() * phases];
    for _ in 0..iters {
        for (s, x) in samples.iter().enumerate() {
            fcm_weights(x, &centers, &mut weights[s * phases..(s + 1) * phases]);
        }
        let mut moved = 0.0f64;
        for (k, center) in centers.iter_mut().enumerate() {
            let mut num = vec![0.0; nc];
            let mut den = 0.0;
            for (s, x) in samples.iter().enumerate() {
                let wm = weights[s * phases + k].powf(FCM_FUZZIFIER);
                den += wm;
                num.iter_mut().zip(x).for_each(|(a, b)| *a += wm * b);
            }
            if den > 0.0 {
                let next: Vec<f64> = num.iter().map(|v| v / den).collect();
                moved = moved.max(sq_dist(&next, center));
                *center = next;
            }
        }
        if moved == 0.0 {
            break;
        }
    }

    let mut order: Vec<usize> = (0..phases).collect();
    order.sort_by(|&a, &b| centers[a][0].total_cmp(&centers[b][0]));
    let values: Vec<f64> = order.iter().flat_map(|&k| centers[k].iter().copied()).collect();
    let codebook = Codebook::new(phases, nc, values)?;

    let sorted: Vec<Vec<f64>> = order.iter().map(|&k| centers[k].clone()).collect();
    let mut u = Membership::uniform(f.width(), f.height(), phases);
    let mut row = vec![0.0; phases];
    for (&p, x) in observed.iter().zip(&samples) {
        fcm_weights(x, &sorted, &mut row);
        u.set_at(p, &row);
    }
    Ok((codebook, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{LabelMap, Validate};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn half_labels(w: usize, h: usize) -> LabelMap {
        LabelMap::new(w, h, 2, (0..w * h).map(|p| usize::from(p % w >= w / 2)).collect()).unwrap()
    }

    #[test]
    fn mean_of_constant_region() {
        let labels = half_labels(4, 3);
        let u = Membership::from_labels(&labels);
        let g = ImageField::new(4, 3, 1, labels.labels().iter().map(|&l| if l == 0 { 0.2 } else { 0.8 }).collect()).unwrap();
        let c = update_c(&g, &u, &ObservationMask::full(4, 3), &Codebook::gray(&[0.0, 0.0])).unwrap();
        assert_relative_eq!(c.get(0, 0), 0.2, epsilon = 1e-15);
        assert_relative_eq!(c.get(1, 0), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn constant_image_gives_constant_codebook() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut u = Membership::uniform(5, 5, 3);
        for p in 0..25 {
            let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 0.1).collect();
            let s: f64 = raw.iter().sum();
            u.set_at(p, &raw.iter().map(|r| r / s).collect::<Vec<_>>());
        }
        let g = ImageField::constant(5, 5, 2, 0.37);
        let omega = ObservationMask::from_bools(5, 5, &(0..25).map(|p| p % 4 != 0).collect::<Vec<_>>()).unwrap();
        let c = update_c(&g, &u, &omega, &Codebook::new(3, 2, vec![0.0; 6]).unwrap()).unwrap();
        assert!(c.values().iter().all(|v| (v - 0.37).abs() < 1e-14));
    }

    #[test]
    fn empty_phase_keeps_previous_value() {
        let labels = LabelMap::new(2, 2, 3, vec![0, 0, 1, 1]).unwrap();
        let u = Membership::from_labels(&labels);
        let g = ImageField::new(2, 2, 1, vec![0.1, 0.1, 0.5, 0.5]).unwrap();
        let c = update_c(&g, &u, &ObservationMask::full(2, 2), &Codebook::gray(&[0.0, 0.0, 0.77])).unwrap();
        assert_eq!(c.values(), &[0.1, 0.5, 0.77]);
    }

    #[test]
    fn matches_double_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (w, h, k, nc) = (6, 6, 3, 2);
        let n = w * h;
        let g = ImageField::new(w, h, nc, (0..n * nc).map(|_| rng.random()).collect()).unwrap();
        let mut u = Membership::uniform(w, h, k);
        for p in 0..n {
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            u.set_at(p, &raw.iter().map(|r| r / s).collect::<Vec<_>>());
        }
        let omega = ObservationMask::from_bools(w, h, &(0..n).map(|_| rng.random::<f64>() >= 0.3).collect::<Vec<_>>()).unwrap();
        let c = update_c(&g, &u, &omega, &Codebook::new(k, nc, vec![0.0; k * nc]).unwrap()).unwrap();
        for i in 0..k {
            for j in 0..nc {
                let (mut num, mut den) = (0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let p = y * w + x;
                        let wt = omega.data()[p] * u.get(p, i);
                        num += g.get(x, y, j) * wt;
                        den += wt;
                    }
                }
                assert_relative_eq!(c.get(i, j), num / den, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn fcm_two_values() {
        let data: Vec<f64> = (0..64).map(|p| if (p / 8 + p % 8) % 3 == 0 { 0.9 } else { 0.1 }).collect();
        let f = ImageField::new(8, 8, 1, data).unwrap();
        let (c, u) = fcm_init(&f, &ObservationMask::full(8, 8), 2, 100).unwrap();
        assert!((c.get(0, 0) - 0.1).abs() < 1e-6);
        assert!((c.get(1, 0) - 0.9).abs() < 1e-6);
        assert!(u.validate().is_ok());
    }

    #[test]
    fn fcm_distinct_values_become_centers() {
        let f = ImageField::new(3, 2, 1, vec![0.7, 0.2, 0.2, 0.45, 0.7, 0.7]).unwrap();
        let (c, _) = fcm_init(&f, &ObservationMask::full(3, 2), 3, 100).unwrap();
        for (a, b) in c.values().iter().zip([0.2, 0.45, 0.7]) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn fcm_degenerate_input() {
        let f = ImageField::new(2, 2, 1, vec![0.3, 0.3, 0.3, 0.9]).unwrap();
        let omega = ObservationMask::from_bools(2, 2, &[true, true, true, false]).unwrap();
        assert!(matches!(fcm_init(&f, &omega, 2, 100), Err(SegError::Degenerate(_))));
    }

    #[test]
    fn fcm_masked_pixels_are_uniform_and_ignored() {
        let data: Vec<f64> = (0..36).map(|p| if p % 6 < 3 { 0.2 } else { 0.6 }).collect();
        let mut noisy = data.clone();
        // hidden outliers must not move the centers
        noisy[0] = 1.0;
        noisy[35] = 0.0;
        let f = ImageField::new(6, 6, 1, noisy).unwrap();
        let omega = ObservationMask::from_bools(6, 6, &(0..36).map(|p| p != 0 && p != 35).collect::<Vec<_>>()).unwrap();
        let (c, u) = fcm_init(&f, &omega, 2, 100).unwrap();
        assert!((c.get(0, 0) - 0.2).abs() < 1e-9 && (c.get(1, 0) - 0.6).abs() < 1e-9);
        assert_eq!(u.at(0), vec![0.5, 0.5]);
        assert_eq!(u.at(35), vec![0.5, 0.5]);
    }

    /// Plain textbook FCM with a different starting rule, run to 1000 iterations.
    fn oracle_fcm(x: &[f64], k: usize) -> Vec<f64> {
        let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut c: Vec<f64> = (0..k).map(|i| lo + (hi - lo) * (i as f64 + 1.0) / (k as f64 + 1.0)).collect();
        for _ in 0..1000 {
            let mut num = vec![0.0; k];
            let mut den = vec![0.0; k];
            for &xi in x {
                let d: Vec<f64> = c.iter().map(|cj| (xi - cj).powi(2).max(1e-300)).collect();
                for j in 0..k {
                    let uij = 1.0 / d.iter().map(|dl| d[j] / dl).sum::<f64>();
                    num[j] += uij * uij * xi;
                    den[j] += uij * uij;
                }
            }
            for j in 0..k {
                c[j] = num[j] / den[j];
            }
        }
        c.sort_by(f64::total_cmp);
        c
    }

    #[test]
    fn fcm_three_levels_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let levels = [0.1, 0.5, 0.9];
        let data: Vec<f64> = (0..256).map(|p| levels[(p % 16) * 3 / 16] + noise.sample(&mut rng)).collect();
        let f = ImageField::new(16, 16, 1, data.clone()).unwrap();
        let (c, u) = fcm_init(&f, &ObservationMask::full(16, 16), 3, 100).unwrap();
        let oracle = oracle_fcm(&data, 3);
        for i in 0..3 {
            assert!((c.get(i, 0) - levels[i]).abs() < 0.02);
            assert!((c.get(i, 0) - oracle[i]).abs() < 1e-6);
        }
        assert!(u.validate().is_ok());
    }

    #[test]
    fn fcm_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = ImageField::new(12, 12, 3, (0..432).map(|_| rng.random()).collect()).unwrap();
        let a = fcm_init(&f, &ObservationMask::full(12, 12), 4, 100).unwrap();
        let b = fcm_init(&f, &ObservationMask::full(12, 12), 4, 100).unwrap();
        assert_eq!(a.0.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.1, b.1);
    }

    proptest! {
        #[test]
        fn update_c_shift_equivariant_and_bounded(seed in 0u64..500, delta in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = ImageField::new(5, 4, 1, (0..20).map(|_| rng.random()).collect()).unwrap();
            let mut u = Membership::uniform(5, 4, 2);
            for p in 0..20 {
                let a: f64 = rng.random();
                u.set_at(p, &[a, 1.0 - a]);
            }
            let omega = ObservationMask::from_bools(5, 4, &(0..20).map(|_| rng.random::<f64>() > 0.2).collect::<Vec<_>>()).unwrap();
            let prev = Codebook::gray(&[0.0, 0.0]);
            let c = update_c(&g, &u, &omega, &prev).unwrap();
            let shifted = ImageField::new(5, 4, 1, g.data().iter().map(|v| v + delta).collect()).unwrap();
            let cs = update_c(&shifted, &u, &omega, &prev).unwrap();
            let obs: Vec<f64> = (0..20).filter(|&p| omega.is_observed(p)).map(|p| g.data()[p]).collect();
            let lo = obs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = obs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for i in 0..2 {
                prop_assert!((cs.get(i, 0) - c.get(i, 0) - delta).abs() < 1e-12);
                if !obs.is_empty() {
                    prop_assert!(c.get(i, 0) >= lo - 1e-12 && c.get(i, 0) <= hi + 1e-12);
                }
            }
        }
    }
}
