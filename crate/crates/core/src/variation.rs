//! Per-event first variation of the contrast, its image rendering, and
//! threshold-based classification into fit and residual events.
//!
//! The magnitude of the contrast gradient with respect to an event's own
//! coordinates scores how much that event supports the current motion
//! hypothesis: events aligned with the hypothesis sit on steep flanks of
//! sharp IWE structure and score high, misaligned events sit in low-contrast
//! blur and score near zero.

use crate::error::{Error, Result};
use crate::event::EventSlice;
use crate::objective;
use crate::warp::{self, MotionModel, WarpKind};

/// Per-event variation magnitudes with their [0, 255] scaling.
#[derive(Debug, Clone)]
pub struct VariationField {
    /// Euclidean norm of dC/dx_k per event.
    pub magnitudes: Vec<f64>,
    /// 255 * (m - min) / (max - min); all zero when max == min.
    pub scaled: Vec<f64>,
    min: f64,
    max: f64,
}

impl VariationField {
    pub fn from_magnitudes(magnitudes: Vec<f64>) -> Self {
        let min = magnitudes.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = magnitudes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scaled = if magnitudes.is_empty() || max <= min {
            vec![0.0; magnitudes.len()]
        } else {
            magnitudes
                .iter()
                .map(|&m| 255.0 * (m - min) / (max - min))
                .collect()
        };
        VariationField {
            magnitudes,
            scaled,
            min,
            max,
        }
    }

    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    /// Inverse of the min-max scaling.
    pub fn scaled_to_raw(&self, s: f64) -> f64 {
        self.min + s / 255.0 * (self.max - self.min)
    }
}

/// Which side of the threshold counts as the fitting cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRule {
    /// Magnitudes strictly above the threshold form the cluster (default).
    AboveIsFit,
    /// Inverted rule, exposed because the source material is ambiguous
    /// about the direction.
    BelowIsFit,
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule::AboveIsFit
    }
}

#[derive(Debug, Clone)]
pub struct SplitResult {
    pub fit_indices: Vec<usize>,
    pub residual_indices: Vec<usize>,
    pub threshold_used: f64,
    pub rule: SplitRule,
}

/// First variation per event: the IWE-space gradient mapped back through
/// the warp's coordinate Jacobian.
pub fn variation(
    slice: &EventSlice,
    model: &MotionModel,
    epsilon: f64,
    use_polarity: bool,
) -> Result<VariationField> {
    let warped = warp::warp(slice, model)?;
    let iwe = objective::accumulate_iwe(&warped, epsilon, use_polarity)?;
    let coord_grads = objective::grad_wrt_warped_coords_with_iwe(&warped, &iwe);

    let identity_jacobian = !matches!(model.kind(), WarpKind::Rotation3D);
    let mut magnitudes = Vec::with_capacity(coord_grads.len());
    for (k, g) in coord_grads.iter().enumerate() {
        let (gx, gy) = if identity_jacobian {
            (g[0], g[1])
        } else {
            let j = warp::coord_jacobian(slice, model, k)?;
            // Row vector dC/dx' times the 2x2 Jacobian dx'/dx.
            (
                g[0] * j[0][0] + g[1] * j[1][0],
                g[0] * j[0][1] + g[1] * j[1][1],
            )
        };
        magnitudes.push((gx * gx + gy * gy).sqrt());
    }
    Ok(VariationField::from_magnitudes(magnitudes))
}

/// Mean variation image: per pixel, the average variation magnitude of the
/// warped events binned there (nearest pixel); empty pixels are zero.
pub fn mvi(
    slice: &EventSlice,
    model: &MotionModel,
    epsilon: f64,
    use_polarity: bool,
) -> Result<Vec<f64>> {
    let warped = warp::warp(slice, model)?;
    let field = variation(slice, model, epsilon, use_polarity)?;
    let g = slice.geometry();
    let mut sums = vec![0.0f64; g.n_pixels()];
    let mut counts = vec![0u32; g.n_pixels()];
    for (c, &m) in warped.coords.iter().zip(&field.magnitudes) {
        let ix = c[0].round();
        let iy = c[1].round();
        if ix < 0.0 || iy < 0.0 || ix >= g.width as f64 || iy >= g.height as f64 {
            continue;
        }
        let idx = iy as usize * g.width as usize + ix as usize;
        sums[idx] += m;
        counts[idx] += 1;
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            *s /= n as f64;
        }
    }
    Ok(sums)
}

const HISTOGRAM_BINS: usize = 256;

/// Quantize a scaled magnitude into one of the 256 histogram bins.
fn bin_of(scaled: f64) -> usize {
    (scaled.round() as i64).clamp(0, HISTOGRAM_BINS as i64 - 1) as usize
}

pub fn histogram(field: &VariationField) -> [u64; HISTOGRAM_BINS] {
    let mut hist = [0u64; HISTOGRAM_BINS];
    for &s in &field.scaled {
        hist[bin_of(s)] += 1;
    }
    hist
}

/// Between-class variance of the cut that puts bins `0..=t` in one class,
/// the rest in the other. Used by both the production path and the test
/// oracle's exhaustive search.
pub fn between_class_variance(hist: &[u64; HISTOGRAM_BINS], t: usize) -> f64 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let sum_total: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &h)| i as f64 * h as f64)
        .sum();
    let w0: u64 = hist[..=t].iter().sum();
    let w1 = total - w0;
    if w0 == 0 || w1 == 0 {
        return 0.0;
    }
    let sum0: f64 = hist[..=t]
        .iter()
        .enumerate()
        .map(|(i, &h)| i as f64 * h as f64)
        .sum();
    let m0 = sum0 / w0 as f64;
    let m1 = (sum_total - sum0) / w1 as f64;
    (w0 as f64) * (w1 as f64) * (m0 - m1) * (m0 - m1)
}

/// Otsu's threshold over the 256-bin histogram of scaled magnitudes, mapped
/// back to raw units. Ties pick the lowest qualifying cut.
pub fn otsu_threshold(field: &VariationField) -> Result<f64> {
    if field.len() < 2 {
        return Err(Error::Degenerate(format!(
            "need at least 2 magnitudes for a threshold, got {}",
            field.len()
        )));
    }
    if field.max <= field.min {
        return Err(Error::Degenerate(
            "all variation magnitudes are equal".into(),
        ));
    }
    let hist = histogram(field);

    let total: u64 = hist.iter().sum();
    let sum_total: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &h)| i as f64 * h as f64)
        .sum();

    // Single pass with running class statistics.
    let mut w0: u64 = 0;
    let mut sum0: f64 = 0.0;
    let mut best_t = 0usize;
    let mut best_var = f64::NEG_INFINITY;
    for t in 0..HISTOGRAM_BINS - 1 {
        w0 += hist[t];
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let m0 = sum0 / w0 as f64;
        let m1 = (sum_total - sum0) / w1 as f64;
        let var = (w0 as f64) * (w1 as f64) * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best_t = t;
        }
    }

    // The cut separates quantized levels <= t from > t; half a level above
    // the cut bin sits strictly between the classes.
    Ok(field.scaled_to_raw(best_t as f64 + 0.5))
}

/// Classify events against a threshold on raw magnitudes. With the default
/// rule, magnitudes strictly above the threshold fit the motion; ties go to
/// the residual side.
pub fn split(field: &VariationField, threshold: f64, rule: SplitRule) -> SplitResult {
    let mut fit_indices = Vec::new();
    let mut residual_indices = Vec::new();
    for (k, &m) in field.magnitudes.iter().enumerate() {
        let above = m > threshold;
        let is_fit = match rule {
            SplitRule::AboveIsFit => above,
            SplitRule::BelowIsFit => !above,
        };
        if is_fit {
            fit_indices.push(k);
        } else {
            residual_indices.push(k);
        }
    }
    SplitResult {
        fit_indices,
        residual_indices,
        threshold_used: threshold,
        rule,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Event, SensorGeometry};
    use crate::warp::MotionModel;
    use proptest::prelude::*;

    #[test]
    fn translation_variation_equals_coord_gradient_norm() {
        let g = SensorGeometry::with_size(64, 64);
        let events: Vec<Event> = (0..30)
            .map(|i| Event {
                x: 10.0 + (i % 6) as f64,
                y: 12.0 + (i / 6) as f64,
                t: i as f64 * 1e-4,
                p: 1,
            })
            .collect();
        let slice = EventSlice::new(events, g).unwrap();
        let model = MotionModel::Translation2D { v: [40.0, 10.0] };
        let field = variation(&slice, &model, 1.0, false).unwrap();

        let warped = crate::warp::warp(&slice, &model).unwrap();
        let grads = objective::grad_wrt_warped_coords(&warped, 1.0, false).unwrap();
        for (m, g) in field.magnitudes.iter().zip(&grads) {
            let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
            assert_eq!(*m, norm);
        }
    }

    #[test]
    fn isolated_event_variation_is_tiny() {
        let g = SensorGeometry::with_size(64, 64);
        let slice = EventSlice::new(
            vec![Event { x: 32.0, y: 32.0, t: 0.0, p: 1 }],
            g,
        )
        .unwrap();
        let model = MotionModel::Translation2D { v: [0.0, 0.0] };
        let field = variation(&slice, &model, 1.0, false).unwrap();
        assert!(field.magnitudes[0] <= 1e-6);
    }

    #[test]
    fn scaled_field_covers_0_to_255() {
        let field = VariationField::from_magnitudes(vec![0.5, 1.0, 2.5]);
        assert_eq!(field.scaled[0], 0.0);
        assert_eq!(field.scaled[2], 255.0);
        assert!((field.scaled[1] - 255.0 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn constant_field_scales_to_zero() {
        let field = VariationField::from_magnitudes(vec![3.0; 5]);
        assert!(field.scaled.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn mvi_is_mean_of_colocated_magnitudes() {
        // Two events landing on one pixel at t_ref: MVI = mean of their
        // magnitudes. Use a hand-assembled field via the public pieces.
        let g = SensorGeometry::with_size(32, 32);
        let events = vec![
            Event { x: 10.0, y: 10.0, t: 0.0, p: 1 },
            Event { x: 10.2, y: 10.1, t: 0.0, p: 1 },
            Event { x: 20.0, y: 20.0, t: 0.0, p: 1 },
        ];
        let slice = EventSlice::new(events, g).unwrap();
        let model = MotionModel::Translation2D { v: [0.0, 0.0] };
        let field = variation(&slice, &model, 1.0, false).unwrap();
        let image = mvi(&slice, &model, 1.0, false).unwrap();
        let idx = 10 * 32 + 10;
        let expect = (field.magnitudes[0] + field.magnitudes[1]) / 2.0;
        assert!((image[idx] - expect).abs() < 1e-15);
        let idx_single = 20 * 32 + 20;
        assert!((image[idx_single] - field.magnitudes[2]).abs() < 1e-15);
        assert_eq!(image[0], 0.0);
    }

    /// Exhaustive-search oracle: evaluate every cut position naively.
    fn otsu_oracle_bin(field: &VariationField) -> usize {
        let hist = histogram(field);
        let mut best_t = 0;
        let mut best = f64::NEG_INFINITY;
        for t in 0..HISTOGRAM_BINS - 1 {
            let v = between_class_variance(&hist, t);
            if v > best {
                best = v;
                best_t = t;
            }
        }
        best_t
    }

    fn otsu_bin_of_threshold(field: &VariationField, raw: f64) -> usize {
        // Invert the raw mapping back to the cut index.
        let s = 255.0 * (raw - field.min()) / (field.max() - field.min());
        (s - 0.5).round() as usize
    }

    #[test]
    fn otsu_sits_between_separated_clumps() {
        let field =
            VariationField::from_magnitudes(vec![0.1, 0.1, 0.1, 5.0, 5.0]);
        let t = otsu_threshold(&field).unwrap();
        assert!(t > 0.1 && t < 5.0, "threshold {t}");
        assert_eq!(otsu_bin_of_threshold(&field, t), otsu_oracle_bin(&field));
    }

    #[test]
    fn otsu_matches_oracle_on_gaussian_clumps() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let mut mags = Vec::new();
            for _ in 0..150 {
                mags.push(1e-5 + 2e-6 * rng.gen_range(-1.0..1.0f64));
            }
            for _ in 0..60 {
                mags.push(6e-5 + 5e-6 * rng.gen_range(-1.0..1.0f64));
            }
            let field = VariationField::from_magnitudes(mags);
            let t = otsu_threshold(&field).unwrap();
            assert_eq!(
                otsu_bin_of_threshold(&field, t),
                otsu_oracle_bin(&field),
                "threshold bin disagrees with exhaustive search"
            );
        }
    }

    #[test]
    fn otsu_rejects_equal_magnitudes() {
        let field = VariationField::from_magnitudes(vec![2.0; 10]);
        assert!(matches!(
            otsu_threshold(&field),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn split_boundaries() {
        let field = VariationField::from_magnitudes(vec![1.0, 2.0, 3.0]);
        let all_fit = split(&field, 0.5, SplitRule::AboveIsFit);
        assert_eq!(all_fit.fit_indices, vec![0, 1, 2]);
        assert!(all_fit.residual_indices.is_empty());
        let none_fit = split(&field, 3.5, SplitRule::AboveIsFit);
        assert!(none_fit.fit_indices.is_empty());
        // Ties go to the residual side.
        let tie = split(&field, 2.0, SplitRule::AboveIsFit);
        assert_eq!(tie.fit_indices, vec![2]);
        assert_eq!(tie.residual_indices, vec![0, 1]);
    }

    #[test]
    fn inverted_rule_swaps_sides() {
        let field = VariationField::from_magnitudes(vec![1.0, 2.0, 3.0]);
        let inv = split(&field, 2.0, SplitRule::BelowIsFit);
        assert_eq!(inv.fit_indices, vec![0, 1]);
        assert_eq!(inv.residual_indices, vec![2]);
    }

    proptest! {
        #[test]
        fn split_is_a_partition(
            mags in proptest::collection::vec(0.0f64..10.0, 1..200),
            threshold in 0.0f64..10.0,
        ) {
            let field = VariationField::from_magnitudes(mags.clone());
            let res = split(&field, threshold, SplitRule::AboveIsFit);
            let mut all: Vec<usize> = res.fit_indices.iter().chain(&res.residual_indices).cloned().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..mags.len()).collect::<Vec<_>>());
        }

        #[test]
        fn raising_threshold_never_adds_fit_events(
            mags in proptest::collection::vec(0.0f64..10.0, 1..100),
            t1 in 0.0f64..5.0,
            dt in 0.0f64..5.0,
        ) {
            let field = VariationField::from_magnitudes(mags);
            let lo = split(&field, t1, SplitRule::AboveIsFit);
            let hi = split(&field, t1 + dt, SplitRule::AboveIsFit);
            for k in &hi.fit_indices {
                prop_assert!(lo.fit_indices.contains(k));
            }
        }

        #[test]
        fn classification_is_scale_invariant(
            mags in proptest::collection::vec(1e-7f64..1.0, 2..100),
            threshold in 1e-7f64..1.0,
            // Powers of two scale exactly in binary floating point, so the
            // invariance holds bit-for-bit, not just approximately.
            exp in -10i32..10,
        ) {
            let c = 2.0f64.powi(exp);
            let field = VariationField::from_magnitudes(mags.clone());
            let scaled_field = VariationField::from_magnitudes(
                mags.iter().map(|m| m * c).collect(),
            );
            let a = split(&field, threshold, SplitRule::AboveIsFit);
            let b = split(&scaled_field, threshold * c, SplitRule::AboveIsFit);
            prop_assert_eq!(a.fit_indices, b.fit_indices);
        }
    }
}
