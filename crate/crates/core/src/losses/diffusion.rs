use super::perceptual::PerceptualMetric;
use crate::error::{Error, Result};
use crate::image::Image;

/// Outcome of the gated generated-view loss for one render/generated pair.
#[derive(Clone, Debug)]
pub struct GatedLoss {
    pub distance: f64,
    /// `distance` when the gate is open, else exactly 0.
    pub value: f64,
    /// ∂value/∂rendered; exactly zero when the gate is closed.
    pub grad: Image,
    pub active: bool,
}

/// `𝟙(d ≤ ε)·d` with `d = metric(rendered, generated)`; the indicator gates
/// the gradient as well. The generated image is a constant.
pub fn diffusion_loss(
    rendered: &Image,
    generated: &Image,
    metric: &dyn PerceptualMetric,
    epsilon: f64,
) -> Result<GatedLoss> {
    if !rendered.same_shape(generated) {
        return Err(Error::invalid("rendered and generated images differ in shape"));
    }
    let (distance, grad) = metric.distance(rendered, generated)?;
    if !distance.is_finite() || distance < 0.0 {
        return Err(Error::Oracle(format!(
            "metric {} returned invalid distance {distance}",
            metric.name()
        )));
    }
    if distance <= epsilon {
        Ok(GatedLoss {
            distance,
            value: distance,
            grad,
            active: true,
        })
    } else {
        Ok(GatedLoss {
            distance,
            value: 0.0,
            grad: Image::new(rendered.width, rendered.height),
            active: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{MsSsimDistance, PrecomputedDistance};

    fn smooth(w: usize, h: usize, phase: f64, amp: f64) -> Image {
        let mut img = Image::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let v = 0.5 + amp * ((x as f64 * 0.25 + phase).sin() * (y as f64 * 0.3).cos());
                img.set_pixel(x, y, [v, v * 0.8, 1.0 - v]);
            }
        }
        img
    }

    #[test]
    fn identical_pair_is_inside_gate() {
        let a = smooth(32, 32, 0.0, 0.3);
        let l = diffusion_loss(&a, &a, &MsSsimDistance, 0.5).unwrap();
        assert!(l.active);
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn above_threshold_is_exactly_zero() {
        let a = Image::new(8, 8);
        let l = diffusion_loss(&a, &a, &PrecomputedDistance::constant(0.6), 0.5).unwrap();
        assert!(!l.active);
        assert_eq!(l.value, 0.0);
        assert!(l.grad.data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn below_threshold_passes_through() {
        let a = Image::new(8, 8);
        let l = diffusion_loss(&a, &a, &PrecomputedDistance::constant(0.3), 0.5).unwrap();
        assert!(l.active);
        assert_eq!(l.value, 0.3);
    }

    #[test]
    fn gate_brackets_epsilon() {
        let a = smooth(32, 32, 0.0, 0.3);
        let b = smooth(32, 32, 0.9, 0.3);
        let d = MsSsimDistance.distance(&a, &b).unwrap().0;
        let open = diffusion_loss(&a, &b, &MsSsimDistance, d + 1e-9).unwrap();
        let shut = diffusion_loss(&a, &b, &MsSsimDistance, d - 1e-9).unwrap();
        assert!(open.active && open.value == d && open.grad.data.iter().any(|&g| g != 0.0));
        assert!(!shut.active && shut.value == 0.0 && shut.grad.data.iter().all(|&g| g == 0.0));
    }
}
