use nalgebra::Vector2;
use rand::Rng;
use rand_distr::StandardNormal;

/// Kinect-style disparity constant.
pub const DEFAULT_DISPARITY_CONSTANT: f64 = 35130.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Pixel noise standard deviation (px).
    pub sigma_pixel: f64,
    /// Standard deviation of the perturbation added to the depth before the
    /// disparity round trip (m).
    pub sigma_depth: f64,
    pub disparity_constant: f64,
    pub enabled: bool,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { sigma_pixel: 1.0, sigma_depth: 1.0 / 6.0, disparity_constant: DEFAULT_DISPARITY_CONSTANT, enabled: true }
    }
}

impl NoiseParams {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), super::SimError> {
        let ok = self.sigma_pixel >= 0.0
            && self.sigma_depth >= 0.0
            && self.disparity_constant > 0.0
            && [self.sigma_pixel, self.sigma_depth, self.disparity_constant].iter().all(|v| v.is_finite());
        if ok { Ok(()) } else { Err(super::SimError::InvalidSpec("noise parameters out of range".into())) }
    }
}

/// `u = u_hat + alpha`, `alpha ~ N(0, sigma^2 I)`; draws x then y.
pub fn perturb_pixel<R: Rng + ?Sized>(pixel: &Vector2<f64>, sigma: f64, rng: &mut R) -> Vector2<f64> {
    let ax: f64 = rng.sample(StandardNormal);
    let ay: f64 = rng.sample(StandardNormal);
    Vector2::new(pixel.x + sigma * ax, pixel.y + sigma * ay)
}

/// Depth through the noisy disparity model, `d = m / (m / (d_hat + alpha) + 0.5)`.
pub fn disparity_depth(depth: f64, alpha: f64, m: f64) -> f64 {
    m / (m / (depth + alpha) + 0.5)
}

/// One Gaussian draw through [`disparity_depth`]. Returns `None` when the
/// result is not a positive finite depth.
pub fn perturb_depth<R: Rng + ?Sized>(depth: f64, sigma: f64, m: f64, rng: &mut R) -> Option<f64> {
    let alpha: f64 = rng.sample(StandardNormal);
    let d = disparity_depth(depth, sigma * alpha, m);
    (d.is_finite() && d > 0.0).then_some(d)
}
