//! Synthetic sample renderer.
//!
//! Each eye crop is a light sclera ellipse with a dark iris disk whose
//! center encodes the gaze: offset from the eye center by
//! (GAIN * yaw/yaw_max, -GAIN * pitch/pitch_max) pixels, plus Gaussian
//! jitter. The face composites both eyes at quarter scale, a nose wedge and
//! a yaw-dependent shading gradient, plus additive pixel noise; with some
//! probability one eye region in the face alone is hidden by a gray box, so
//! the dedicated eye crops stay strictly more informative than the face.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{spherical_to_vector, GazeVector, SphericalGaze};
use crate::tensor::Tensor;

/// Generator angle range: |yaw| <= 100 degrees.
pub const YAW_MAX_DEG: f64 = 100.0;
/// Generator angle range: |pitch| <= 50 degrees.
pub const PITCH_MAX_DEG: f64 = 50.0;
/// Iris offset per full yaw/pitch deflection, in pixels.
pub const IRIS_GAIN_PX: f64 = 14.0;

pub const IMAGE_SIZE: usize = 64;

/// Noise and occlusion knobs. The defaults are the dataset-generation
/// settings; tests use [`RenderConfig::noiseless`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub jitter_sigma_px: f64,
    pub pixel_noise_sigma: f64,
    pub occlusion_prob: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            jitter_sigma_px: 0.5,
            pixel_noise_sigma: 0.02,
            occlusion_prob: 0.15,
        }
    }
}

impl RenderConfig {
    pub fn noiseless() -> Self {
        RenderConfig { jitter_sigma_px: 0.0, pixel_noise_sigma: 0.0, occlusion_prob: 0.0 }
    }
}

/// Rendered (pre-normalization) images in [0,1] plus the gaze label.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSample {
    pub face: Tensor<f32>,
    pub left_eye: Tensor<f32>,
    pub right_eye: Tensor<f32>,
    pub gaze: GazeVector,
}

/// Iris center offset (dx, dy) in eye-crop pixels for a gaze direction.
/// dx is positive toward increasing column, dy toward increasing row.
pub fn iris_offset(s: &SphericalGaze) -> (f64, f64) {
    let dx = IRIS_GAIN_PX * s.yaw.to_degrees() / YAW_MAX_DEG;
    let dy = -IRIS_GAIN_PX * s.pitch.to_degrees() / PITCH_MAX_DEG;
    (dx, dy)
}

const SKIN: [f32; 3] = [0.72, 0.58, 0.50];
const SCLERA: [f32; 3] = [0.92, 0.92, 0.88];
const IRIS: [f32; 3] = [0.22, 0.16, 0.10];
const PUPIL: [f32; 3] = [0.04, 0.04, 0.04];
const NOSE: [f32; 3] = [0.62, 0.48, 0.40];
const OCCLUDER: [f32; 3] = [0.5, 0.5, 0.5];

const SCLERA_RX: f64 = 26.0;
const SCLERA_RY: f64 = 16.0;
const IRIS_R: f64 = 7.0;
const PUPIL_R: f64 = 3.0;

/// Smooth 1px-wide coverage of a point at signed distance `d` inside (< 0)
/// or outside (> 0) a shape boundary.
#[inline]
fn coverage(d: f64) -> f64 {
    (0.5 - d).clamp(0.0, 1.0)
}

fn mix(dst: &mut [f32], px: usize, color: [f32; 3], alpha: f64, plane: usize) {
    let a = alpha as f32;
    for (ch, &col) in color.iter().enumerate() {
        let idx = ch * plane + px;
        dst[idx] = dst[idx] * (1.0 - a) + col * a;
    }
}

/// Draw one eye (sclera + iris + pupil) into a 3xHxW buffer at `scale`,
/// centered at (cx, cy) with the iris displaced by `offset` pixels
/// (pre-scale units).
fn draw_eye(
    img: &mut [f32],
    width: usize,
    plane: usize,
    cx: f64,
    cy: f64,
    scale: f64,
    offset: (f64, f64),
) {
    let rx = SCLERA_RX * scale;
    let ry = SCLERA_RY * scale;
    let iris_cx = cx + offset.0 * scale;
    let iris_cy = cy + offset.1 * scale;
    let ir = IRIS_R * scale;
    let pr = PUPIL_R * scale;
    let height = plane / width;

    let y0 = ((cy - ry - 1.0).floor().max(0.0)) as usize;
    let y1 = ((cy + ry + 2.0).ceil() as usize).min(height);
    let x0 = ((cx - rx - 1.0).floor().max(0.0)) as usize;
    let x1 = ((cx + rx + 2.0).ceil() as usize).min(width);
    for y in y0..y1 {
        for x in x0..x1 {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            // approximate signed distance to the ellipse boundary
            let en = ((fx - cx) / rx).powi(2) + ((fy - cy) / ry).powi(2);
            let d_ell = (en.sqrt() - 1.0) * ry.min(rx);
            let a = coverage(d_ell);
            if a <= 0.0 {
                continue;
            }
            let px = y * width + x;
            mix(img, px, SCLERA, a, plane);
            let d_iris = ((fx - iris_cx).powi(2) + (fy - iris_cy).powi(2)).sqrt() - ir;
            let ai = coverage(d_iris) * a;
            if ai > 0.0 {
                mix(img, px, IRIS, ai, plane);
            }
            let d_pupil = ((fx - iris_cx).powi(2) + (fy - iris_cy).powi(2)).sqrt() - pr;
            let ap = coverage(d_pupil) * a;
            if ap > 0.0 {
                mix(img, px, PUPIL, ap, plane);
            }
        }
    }
}

fn skin_canvas(shading_slope: f64) -> Vec<f32> {
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let mut img = vec![0.0f32; 3 * plane];
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let shade = 1.0 + shading_slope * ((x as f64 - 31.5) / 31.5);
            for (ch, &base) in SKIN.iter().enumerate() {
                img[ch * plane + y * IMAGE_SIZE + x] = (base as f64 * shade) as f32;
            }
        }
    }
    img
}

fn draw_nose(img: &mut [f32], plane: usize) {
    for y in 30..45usize {
        let half = (y - 30) as f64 * 0.28;
        let x0 = (32.0 - half).floor() as usize;
        let x1 = (32.0 + half).ceil() as usize;
        for x in x0..=x1.min(IMAGE_SIZE - 1) {
            mix(img, y * IMAGE_SIZE + x, NOSE, 0.85, plane);
        }
    }
}

/// Eye centers in the face image: (cx, cy) for the left and right crops.
const FACE_EYE_CENTERS: [(f64, f64); 2] = [(20.0, 26.0), (44.0, 26.0)];
const FACE_EYE_SCALE: f64 = 0.25;
/// Half-extent of the gray occlusion box around an eye center.
const OCCLUDER_HALF: usize = 8;

/// Render one sample. The rng draw order is fixed: left-eye jitter (x, y),
/// right-eye jitter (x, y), occlusion coin, occluded-side coin, then face
/// pixel noise in channel-row-column order.
pub fn render_sample(
    spherical: &SphericalGaze,
    cfg: &RenderConfig,
    rng: &mut ChaCha8Rng,
) -> Result<RawSample> {
    if spherical.yaw.to_degrees().abs() > YAW_MAX_DEG
        || spherical.pitch.to_degrees().abs() > PITCH_MAX_DEG
    {
        return Err(Error::arg(
            "render",
            format!(
                "angles ({:.3}, {:.3}) rad outside generator range",
                spherical.yaw, spherical.pitch
            ),
        ));
    }
    let plane = IMAGE_SIZE * IMAGE_SIZE;
    let (ox, oy) = iris_offset(spherical);
    let jitter = Normal::new(0.0f64, cfg.jitter_sigma_px.max(f64::MIN_POSITIVE)).unwrap();
    let mut jit = |rng: &mut ChaCha8Rng| {
        if cfg.jitter_sigma_px > 0.0 {
            jitter.sample(rng)
        } else {
            let _ = rng.random::<f64>(); // keep the draw count stable
            0.0
        }
    };
    let left_off = (ox + jit(rng), oy + jit(rng));
    let right_off = (ox + jit(rng), oy + jit(rng));
    let occlude = rng.random::<f64>() < cfg.occlusion_prob;
    let occlude_right = rng.random::<f64>() < 0.5;

    let mut left = vec![0.0f32; 3 * plane];
    let mut right = vec![0.0f32; 3 * plane];
    for (buf, _) in [(&mut left, 0), (&mut right, 1)] {
        for (ch, &base) in SKIN.iter().enumerate() {
            buf[ch * plane..(ch + 1) * plane].fill(base);
        }
    }
    draw_eye(&mut left, IMAGE_SIZE, plane, 32.0, 32.0, 1.0, left_off);
    draw_eye(&mut right, IMAGE_SIZE, plane, 32.0, 32.0, 1.0, right_off);

    let shading_slope = 0.15 * spherical.yaw.to_degrees() / YAW_MAX_DEG;
    let mut face = skin_canvas(shading_slope);
    draw_nose(&mut face, plane);
    for (side, &(cx, cy)) in FACE_EYE_CENTERS.iter().enumerate() {
        let off = if side == 0 { left_off } else { right_off };
        draw_eye(&mut face, IMAGE_SIZE, plane, cx, cy, FACE_EYE_SCALE, off);
    }
    if occlude {
        let (cx, cy) = FACE_EYE_CENTERS[if occlude_right { 1 } else { 0 }];
        let (cx, cy) = (cx as usize, cy as usize);
        for y in cy.saturating_sub(OCCLUDER_HALF)..(cy + OCCLUDER_HALF).min(IMAGE_SIZE) {
            for x in cx.saturating_sub(OCCLUDER_HALF)..(cx + OCCLUDER_HALF).min(IMAGE_SIZE) {
                mix(&mut face, y * IMAGE_SIZE + x, OCCLUDER, 1.0, plane);
            }
        }
    }
    if cfg.pixel_noise_sigma > 0.0 {
        let noise = Normal::new(0.0f64, cfg.pixel_noise_sigma).unwrap();
        for v in face.iter_mut() {
            *v += noise.sample(rng) as f32;
        }
    } else {
        for _ in 0..face.len() {
            let _ = rng.random::<f64>();
        }
    }
    for v in face
        .iter_mut()
        .chain(left.iter_mut())
        .chain(right.iter_mut())
    {
        *v = v.clamp(0.0, 1.0);
    }

    let shape = [3, IMAGE_SIZE, IMAGE_SIZE];
    Ok(RawSample {
        face: Tensor::new(shape.to_vec(), face)?,
        left_eye: Tensor::new(shape.to_vec(), left)?,
        right_eye: Tensor::new(shape.to_vec(), right)?,
        gaze: spherical_to_vector(spherical),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn darkest_pixel(img: &Tensor<f32>) -> (usize, usize) {
        // mean over channels, argmin
        let (h, w) = (img.shape()[1], img.shape()[2]);
        let mut best = (0, 0);
        let mut best_v = f32::MAX;
        for y in 0..h {
            for x in 0..w {
                let v: f32 = (0..3).map(|c| img.at(&[c, y, x])).sum();
                if v < best_v {
                    best_v = v;
                    best = (y, x);
                }
            }
        }
        best
    }

    #[test]
    fn centered_gaze_centers_the_iris() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = render_sample(
            &SphericalGaze::new(0.0, 0.0),
            &RenderConfig::noiseless(),
            &mut rng,
        )
        .unwrap();
        for img in [&s.left_eye, &s.right_eye] {
            let (y, x) = darkest_pixel(img);
            assert!((y as i64 - 32).abs() <= 1 && (x as i64 - 32).abs() <= 1, "({y},{x})");
        }
    }

    #[test]
    fn full_yaw_shifts_iris_by_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = render_sample(
            &SphericalGaze::new(YAW_MAX_DEG.to_radians(), 0.0),
            &RenderConfig::noiseless(),
            &mut rng,
        )
        .unwrap();
        let (dx, dy) = iris_offset(&SphericalGaze::new(YAW_MAX_DEG.to_radians(), 0.0));
        assert!((dx - 14.0).abs() < 1e-12 && dy.abs() < 1e-12);
        let (y, x) = darkest_pixel(&s.left_eye);
        assert!((x as f64 - (32.0 + 14.0)).abs() <= 1.0, "x={x}");
        assert!((y as f64 - 32.0).abs() <= 1.0, "y={y}");
    }

    #[test]
    fn same_rng_state_renders_bit_identical_samples() {
        let cfg = RenderConfig::default();
        let s = SphericalGaze::new(0.3, -0.2);
        let a = render_sample(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = render_sample(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_range_angles_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = render_sample(
            &SphericalGaze::new(101.0f64.to_radians() * 1.8, 0.0),
            &RenderConfig::noiseless(),
            &mut rng,
        );
        assert!(err.is_err());
    }

    #[test]
    fn pixels_stay_in_unit_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = render_sample(
            &SphericalGaze::new(-1.2, 0.6),
            &RenderConfig::default(),
            &mut rng,
        )
        .unwrap();
        for img in [&s.face, &s.left_eye, &s.right_eye] {
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
