//! Image of warped events, variance contrast, and exact gradients of the
//! contrast with respect to warped coordinates and model parameters.
//!
//! Each event deposits a truncated bivariate Gaussian onto pixel centers.
//! The gradient ops differentiate exactly that truncated forward model, so
//! finite differences of `contrast(accumulate_iwe(...))` reproduce them.

use crate::error::{Error, Result};
use crate::event::{EventSlice, SensorGeometry};
use crate::warp::{self, MotionModel, WarpKind, WarpedEvents};

/// Default Gaussian std of the event footprint, in pixels.
pub const DEFAULT_EPSILON: f64 = 1.0;

/// Kernel support half-width in units of epsilon (Chebyshev radius).
const TRUNCATION_RADIUS: f64 = 4.0;

/// Dense accumulation of warped events over the sensor frame.
#[derive(Debug, Clone)]
pub struct Iwe {
    pixels: Vec<f64>,
    geometry: SensorGeometry,
    epsilon: f64,
    use_polarity: bool,
    n_events: usize,
    n_outside: usize,
}

impl Iwe {
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn geometry(&self) -> &SensorGeometry {
        &self.geometry
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn use_polarity(&self) -> bool {
        self.use_polarity
    }

    pub fn at(&self, ix: u32, iy: u32) -> f64 {
        self.pixels[iy as usize * self.geometry.width as usize + ix as usize]
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().sum()
    }

    /// Fraction of warped events whose center fell outside the frame.
    pub fn out_of_domain_fraction(&self) -> f64 {
        if self.n_events == 0 {
            0.0
        } else {
            self.n_outside as f64 / self.n_events as f64
        }
    }
}

/// Contrast value with the statistics it came from.
#[derive(Debug, Clone)]
pub struct ContrastReport {
    /// Variance of the IWE over the full frame.
    pub value: f64,
    /// Mean of the IWE over the full frame, zeros included.
    pub mean: f64,
    /// Fraction of warped events outside the frame.
    pub out_of_domain_fraction: f64,
    pub iwe: Iwe,
}

/// Inclusive pixel range covered by the truncation window on one axis.
fn support_range(center: f64, radius: f64, limit: u32) -> Option<(u32, u32)> {
    let lo = (center - radius).ceil();
    let hi = (center + radius).floor();
    let lo = lo.max(0.0);
    let hi = hi.min(limit as f64 - 1.0);
    if lo > hi {
        return None;
    }
    Some((lo as u32, hi as u32))
}

/// Accumulate warped events into an IWE. Each event deposits
/// `b_k * G(x; x'_k, eps^2)` onto pixel centers within a Chebyshev radius of
/// 4*eps; mass falling outside the frame is discarded.
pub fn accumulate_iwe(warped: &WarpedEvents, epsilon: f64, use_polarity: bool) -> Result<Iwe> {
    if !(epsilon > 0.0) {
        return Err(Error::Spec(format!("epsilon must be positive, got {epsilon}")));
    }
    let g = warped.geometry;
    let mut pixels = vec![0.0f64; g.n_pixels()];
    let radius = TRUNCATION_RADIUS * epsilon;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * epsilon * epsilon);
    let inv_two_eps2 = 1.0 / (2.0 * epsilon * epsilon);
    let mut n_outside = 0usize;

    for (c, &p) in warped.coords.iter().zip(&warped.polarities) {
        if !g.contains(c[0], c[1]) {
            n_outside += 1;
        }
        let b = if use_polarity { p as f64 } else { 1.0 };
        let Some((x0, x1)) = support_range(c[0], radius, g.width) else {
            continue;
        };
        let Some((y0, y1)) = support_range(c[1], radius, g.height) else {
            continue;
        };
        for iy in y0..=y1 {
            let dy = iy as f64 - c[1];
            let row = iy as usize * g.width as usize;
            for ix in x0..=x1 {
                let dx = ix as f64 - c[0];
                pixels[row + ix as usize] +=
                    b * norm * (-(dx * dx + dy * dy) * inv_two_eps2).exp();
            }
        }
    }

    Ok(Iwe {
        pixels,
        geometry: g,
        epsilon,
        use_polarity,
        n_events: warped.len(),
        n_outside,
    })
}

/// Variance of the IWE over the full frame (zeros included).
pub fn contrast(iwe: &Iwe) -> ContrastReport {
    let n = iwe.pixels.len() as f64;
    let mean = iwe.pixels.iter().sum::<f64>() / n;
    let value = iwe.pixels.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    ContrastReport {
        value,
        mean,
        out_of_domain_fraction: iwe.out_of_domain_fraction(),
        iwe: iwe.clone(),
    }
}

/// Convenience: contrast of a slice under a model.
pub fn contrast_of(
    slice: &EventSlice,
    model: &MotionModel,
    epsilon: f64,
    use_polarity: bool,
) -> Result<ContrastReport> {
    let warped = warp::warp(slice, model)?;
    let iwe = accumulate_iwe(&warped, epsilon, use_polarity)?;
    Ok(contrast(&iwe))
}

/// Exact gradient of `contrast(accumulate_iwe(...))` w.r.t. each warped
/// coordinate.
///
/// With mu the full-frame mean, sum_x (I(x) - mu) vanishes identically, so
/// the mean's dependence on the coordinates drops out of the derivative and
/// per event only its own truncated support contributes:
/// dC/dx'_k = (2/|O|) sum_x (I(x) - mu) * b_k * G * (x - x'_k) / eps^2.
pub fn grad_wrt_warped_coords(
    warped: &WarpedEvents,
    epsilon: f64,
    use_polarity: bool,
) -> Result<Vec<[f64; 2]>> {
    let iwe = accumulate_iwe(warped, epsilon, use_polarity)?;
    Ok(grad_wrt_warped_coords_with_iwe(warped, &iwe))
}

/// As `grad_wrt_warped_coords` but reusing an already-accumulated IWE of the
/// same warped events.
pub fn grad_wrt_warped_coords_with_iwe(warped: &WarpedEvents, iwe: &Iwe) -> Vec<[f64; 2]> {
    let g = warped.geometry;
    let n_pix = g.n_pixels() as f64;
    let mean = iwe.pixels.iter().sum::<f64>() / n_pix;
    let epsilon = iwe.epsilon;
    let radius = TRUNCATION_RADIUS * epsilon;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * epsilon * epsilon);
    let inv_two_eps2 = 1.0 / (2.0 * epsilon * epsilon);
    let inv_eps2 = 1.0 / (epsilon * epsilon);
    let scale = 2.0 / n_pix;

    let mut grads = Vec::with_capacity(warped.len());
    for (c, &p) in warped.coords.iter().zip(&warped.polarities) {
        let b = if iwe.use_polarity { p as f64 } else { 1.0 };
        let mut gx = 0.0;
        let mut gy = 0.0;
        if let (Some((x0, x1)), Some((y0, y1))) = (
            support_range(c[0], radius, g.width),
            support_range(c[1], radius, g.height),
        ) {
            for iy in y0..=y1 {
                let dy = iy as f64 - c[1];
                let row = iy as usize * g.width as usize;
                for ix in x0..=x1 {
                    let dx = ix as f64 - c[0];
                    let gauss = norm * (-(dx * dx + dy * dy) * inv_two_eps2).exp();
                    let w = (iwe.pixels[row + ix as usize] - mean) * b * gauss * inv_eps2;
                    gx += w * dx;
                    gy += w * dy;
                }
            }
        }
        grads.push([scale * gx, scale * gy]);
    }
    grads
}

/// Contrast and its gradient w.r.t. the model parameters, sharing one IWE
/// evaluation. This is the inner loop of the optimizer.
pub fn contrast_and_param_grad(
    slice: &EventSlice,
    model: &MotionModel,
    epsilon: f64,
    use_polarity: bool,
) -> Result<(f64, Vec<f64>)> {
    let dof = model.kind().dof();
    if dof == 0 {
        return Err(Error::Model(
            "denseflow parameters are fixed inputs, not optimizable".into(),
        ));
    }
    let warped = warp::warp(slice, model)?;
    let iwe = accumulate_iwe(&warped, epsilon, use_polarity)?;
    let report = contrast(&iwe);
    let coord_grads = grad_wrt_warped_coords_with_iwe(&warped, &iwe);

    let mut grad = vec![0.0f64; dof];
    match model {
        MotionModel::Translation2D { .. } => {
            let t_ref = slice.t_ref();
            for (e, cg) in slice.events().iter().zip(&coord_grads) {
                let dt = e.t - t_ref;
                grad[0] -= dt * cg[0];
                grad[1] -= dt * cg[1];
            }
        }
        MotionModel::Rotation3D { .. } => {
            // dx'/dtheta per event by central differences on the warp map.
            const THETA_STEP: f64 = 1e-6;
            for (k, cg) in coord_grads.iter().enumerate() {
                let cols = warp::param_jacobian(slice, model, k, THETA_STEP)?;
                for (j, col) in cols.iter().enumerate() {
                    grad[j] += cg[0] * col[0] + cg[1] * col[1];
                }
            }
        }
        MotionModel::DenseFlow { .. } => unreachable!(),
    }
    Ok((report.value, grad))
}

/// Gradient of the contrast w.r.t. the model parameters (chain rule through
/// the warped coordinates). DenseFlow is rejected.
pub fn grad_wrt_params(
    slice: &EventSlice,
    model: &MotionModel,
    epsilon: f64,
    use_polarity: bool,
) -> Result<Vec<f64>> {
    if model.kind() == WarpKind::DenseFlow {
        return Err(Error::Model(
            "denseflow parameters are fixed inputs, not optimizable".into(),
        ));
    }
    contrast_and_param_grad(slice, model, epsilon, use_polarity).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Event;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(w: u32, h: u32) -> SensorGeometry {
        SensorGeometry::with_size(w, h)
    }

    fn warped_from(coords: Vec<[f64; 2]>, g: SensorGeometry) -> WarpedEvents {
        let n = coords.len();
        WarpedEvents::from_coords(coords, vec![1; n], g)
    }

    #[test]
    fn single_event_peak_value() {
        let w = warped_from(vec![[20.0, 20.0]], geom(64, 64));
        let iwe = accumulate_iwe(&w, 1.0, false).unwrap();
        let peak = iwe.at(20, 20);
        assert!(
            (peak - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-12,
            "peak {peak}"
        );
    }

    #[test]
    fn single_interior_event_has_unit_mass() {
        let w = warped_from(vec![[30.3, 25.7]], geom(64, 64));
        let iwe = accumulate_iwe(&w, 1.0, false).unwrap();
        assert!((iwe.sum() - 1.0).abs() < 1e-3, "sum {}", iwe.sum());
    }

    #[test]
    fn accumulation_is_linear_in_events() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 300;
        let coords: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.gen_range(6.0..58.0), rng.gen_range(6.0..58.0)])
            .collect();
        let w = warped_from(coords, geom(64, 64));
        let iwe = accumulate_iwe(&w, 1.0, false).unwrap();
        assert!((iwe.sum() - n as f64).abs() < 1e-3 * n as f64);
    }

    #[test]
    fn polarity_off_pixels_nonnegative() {
        let g = geom(32, 32);
        let w = WarpedEvents::from_coords(vec![[10.0, 10.0], [10.4, 10.1]], vec![1, -1], g);
        let iwe = accumulate_iwe(&w, 1.0, false).unwrap();
        assert!(iwe.pixels().iter().all(|&v| v >= 0.0));
        // With polarities on, opposite signs cancel.
        let iwe_p = accumulate_iwe(&w, 1.0, true).unwrap();
        assert!(iwe_p.sum().abs() < 1e-3);
    }

    #[test]
    fn contrast_of_constant_image_is_zero() {
        let iwe = Iwe {
            pixels: vec![3.25; 100],
            geometry: geom(10, 10),
            epsilon: 1.0,
            use_polarity: false,
            n_events: 0,
            n_outside: 0,
        };
        assert_eq!(contrast(&iwe).value, 0.0);
    }

    #[test]
    fn contrast_of_two_level_image() {
        let mut pixels = vec![1.0; 50];
        pixels.extend(vec![5.0; 50]);
        let iwe = Iwe {
            pixels,
            geometry: geom(10, 10),
            epsilon: 1.0,
            use_polarity: false,
            n_events: 0,
            n_outside: 0,
        };
        let c = contrast(&iwe);
        assert!((c.value - 4.0).abs() < 1e-12); // (a-b)^2/4 = 16/4
        assert!((c.mean - 3.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_domain_fraction_counts_centers() {
        let g = geom(32, 32);
        let w = WarpedEvents::from_coords(
            vec![[10.0, 10.0], [-3.0, 5.0], [40.0, 10.0], [5.0, 31.5]],
            vec![1; 4],
            g,
        );
        let iwe = accumulate_iwe(&w, 1.0, false).unwrap();
        assert!((iwe.out_of_domain_fraction() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn isolated_event_gradient_vanishes_by_symmetry() {
        let w = warped_from(vec![[32.0, 32.0]], geom(64, 64));
        let grads = grad_wrt_warped_coords(&w, 1.0, false).unwrap();
        assert!(grads[0][0].abs() <= 1e-6 && grads[0][1].abs() <= 1e-6);
    }

    #[test]
    fn close_pair_attracts_along_x() {
        let w = warped_from(vec![[30.0, 32.0], [31.0, 32.0]], geom(64, 64));
        let grads = grad_wrt_warped_coords(&w, 1.0, false).unwrap();
        // Moving the left event right (toward its neighbor) sharpens the
        // stack and raises the variance: ascent direction points inward.
        assert!(grads[0][0] > 0.0, "left event gx = {}", grads[0][0]);
        assert!(grads[1][0] < 0.0, "right event gx = {}", grads[1][0]);
    }

    fn contrast_of_coords(coords: &[[f64; 2]], g: SensorGeometry) -> f64 {
        let w = warped_from(coords.to_vec(), g);
        let iwe = accumulate_iwe(&w, 1.0, false).unwrap();
        contrast(&iwe).value
    }

    #[test]
    fn coord_gradient_matches_finite_differences() {
        let g = geom(48, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-3;
        // Keep fractional parts away from the truncation-window crossings at
        // integer coordinates; the forward model is only piecewise smooth.
        let n = 40;
        let coords: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                [
                    rng.gen_range(6i32..42) as f64 + rng.gen_range(0.02..0.98),
                    rng.gen_range(6i32..34) as f64 + rng.gen_range(0.02..0.98),
                ]
            })
            .collect();
        let w = warped_from(coords.clone(), g);
        let grads = grad_wrt_warped_coords(&w, 1.0, false).unwrap();
        for k in 0..n {
            for axis in 0..2 {
                let mut plus = coords.clone();
                let mut minus = coords.clone();
                plus[k][axis] += h;
                minus[k][axis] -= h;
                let fd = (contrast_of_coords(&plus, g) - contrast_of_coords(&minus, g)) / (2.0 * h);
                let gv = grads[k][axis];
                if gv.abs() > 1e-10 {
                    let rel = (gv - fd).abs() / gv.abs().max(fd.abs());
                    assert!(rel <= 1e-4, "event {k} axis {axis}: {gv} vs fd {fd} rel {rel}");
                }
            }
        }
    }

    #[test]
    fn param_gradient_zero_when_all_events_at_t_ref() {
        let g = geom(64, 64);
        let events: Vec<Event> = (0..20)
            .map(|i| Event {
                x: 10.0 + i as f64,
                y: 20.0,
                t: 0.5,
                p: 1,
            })
            .collect();
        let slice = EventSlice::new(events, g).unwrap();
        let model = MotionModel::Translation2D { v: [5.0, 5.0] };
        let grad = grad_wrt_params(&slice, &model, 1.0, false).unwrap();
        assert!(grad.iter().all(|&v| v.abs() < 1e-15), "grad {grad:?}");
    }

    #[test]
    fn param_gradient_rejects_denseflow() {
        let g = geom(8, 8);
        let slice = EventSlice::new(
            vec![Event { x: 4.0, y: 4.0, t: 0.0, p: 1 }],
            g,
        )
        .unwrap();
        let flow = crate::warp::FlowField {
            width: 8,
            height: 8,
            v: vec![[0.0, 0.0]; 64],
        };
        let model = MotionModel::DenseFlow { flow };
        assert!(matches!(
            grad_wrt_params(&slice, &model, 1.0, false),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn param_gradient_matches_objective_finite_differences() {
        let g = geom(64, 52);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let events: Vec<Event> = {
            let mut ts: Vec<f64> = (0..60).map(|_| rng.gen_range(0.0..0.02)).collect();
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ts.iter()
                .map(|&t| Event {
                    x: rng.gen_range(10i32..54) as f64,
                    y: rng.gen_range(10i32..42) as f64,
                    t,
                    p: 1,
                })
                .collect()
        };
        let slice = EventSlice::new(events, g).unwrap();
        let h = 1e-4;

        for (kind, theta0) in [
            (WarpKind::Translation2D, vec![12.0, -7.0]),
            (WarpKind::Rotation3D, vec![0.4, -0.2, 0.9]),
        ] {
            let model = MotionModel::from_params(kind, &theta0).unwrap();
            let grad = grad_wrt_params(&slice, &model, 1.0, false).unwrap();
            for j in 0..theta0.len() {
                let mut plus = theta0.clone();
                let mut minus = theta0.clone();
                plus[j] += h;
                minus[j] -= h;
                let cp = contrast_of(
                    &slice,
                    &MotionModel::from_params(kind, &plus).unwrap(),
                    1.0,
                    false,
                )
                .unwrap()
                .value;
                let cm = contrast_of(
                    &slice,
                    &MotionModel::from_params(kind, &minus).unwrap(),
                    1.0,
                    false,
                )
                .unwrap()
                .value;
                let fd = (cp - cm) / (2.0 * h);
                let gv = grad[j];
                let rel = (gv - fd).abs() / gv.abs().max(fd.abs()).max(1e-12);
                assert!(
                    rel <= 1e-3,
                    "{kind:?} component {j}: {gv} vs fd {fd} rel {rel}"
                );
            }
        }
    }

    #[test]
    fn integer_shift_preserves_contrast() {
        let g = geom(60, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let coords: Vec<[f64; 2]> = (0..80)
            .map(|_| [rng.gen_range(8.0..40.0), rng.gen_range(8.0..40.0)])
            .collect();
        let shifted: Vec<[f64; 2]> = coords.iter().map(|c| [c[0] + 7.0, c[1] + 9.0]).collect();
        let c0 = contrast_of_coords(&coords, g);
        let c1 = contrast_of_coords(&shifted, g);
        assert!((c0 - c1).abs() <= 1e-9 * c0.abs(), "{c0} vs {c1}");
    }
}
