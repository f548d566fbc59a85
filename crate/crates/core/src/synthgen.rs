//! Synthetic infrared-like scene generation.
//!
//! Scenes are a smooth low-rank background (a short sum of cosine outer
//! products), small Gaussian point targets, target-like distractor blobs,
//! and additive white noise, clamped to `[0, 1]`.
//!
//! Randomness contract: all sampling uses `ChaCha8Rng` seeded from a `u64`.
//! The background layout is drawn from the base seed only, so it is stable
//! across frames of a sequence; per-frame noise uses a seed derived with
//! [`derive_frame_seed`], so any single frame can be regenerated without
//! replaying the ones before it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::types::{BBox, GroundTruth};

/// Derive the noise seed for one frame from the sequence seed.
///
/// SplitMix64 finalizer over `seed XOR (frame + 1) * odd-constant`; cheap,
/// stateless, and distinct from the base seed itself (which seeds the
/// background layout).
pub fn derive_frame_seed(seed: u64, frame: u64) -> u64 {
    let mut z = seed ^ (frame.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Isotropic Gaussian intensity bump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBlob {
    /// Center, continuous pixel coordinates.
    pub x: f64,
    pub y: f64,
    /// Spatial standard deviation in pixels.
    pub sigma: f64,
    /// Peak amplitude added on top of the background.
    pub intensity: f64,
}

impl GaussianBlob {
    /// Annotation box: the 3-sigma extent around the center.
    pub fn bbox(&self) -> BBox {
        let r = 3.0 * self.sigma;
        BBox::new(self.x - r, self.y - r, self.x + r, self.y + r)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidInput(format!("{what}: sigma must be > 0")));
        }
        if !self.intensity.is_finite() || !self.x.is_finite() || !self.y.is_finite() {
            return Err(Error::InvalidInput(format!("{what}: non-finite blob")));
        }
        Ok(())
    }
}

/// A blob with a per-frame velocity; positions reflect off the image border
/// (inset by the 3-sigma radius) so annotation boxes stay inside the frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingBlob {
    #[serde(flatten)]
    pub blob: GaussianBlob,
    #[serde(default)]
    pub vx: f64,
    #[serde(default)]
    pub vy: f64,
    /// Frame windows `[start, end)` during which the blob is occluded:
    /// neither rendered nor annotated. Empty means always visible.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hidden: Vec<(usize, usize)>,
}

impl MovingBlob {
    /// Whether the blob appears in frame `frame`.
    pub fn visible(&self, frame: usize) -> bool {
        !self.hidden.iter().any(|&(start, end)| (start..end).contains(&frame))
    }
}

/// Background shape: `rank` cosine outer products summing to at most
/// `amplitude`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub rank: usize,
    pub amplitude: f64,
}

impl Default for BackgroundSpec {
    fn default() -> Self {
        Self { rank: 3, amplitude: 0.5 }
    }
}

/// Full description of one synthetic sequence (one frame is just
/// `frames = 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    #[serde(default)]
    pub background: BackgroundSpec,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub targets: Vec<MovingBlob>,
    #[serde(default)]
    pub distractors: Vec<MovingBlob>,
}

fn default_noise_sigma() -> f64 {
    0.02
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            height: 512,
            width: 512,
            frames: 1,
            background: BackgroundSpec::default(),
            noise_sigma: default_noise_sigma(),
            targets: Vec::new(),
            distractors: Vec::new(),
        }
    }
}

impl SequenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::InvalidInput(format!(
                "image must be at least 16x16, got {}x{}",
                self.height, self.width
            )));
        }
        if self.frames == 0 {
            return Err(Error::InvalidInput("sequence needs at least one frame".into()));
        }
        if self.background.rank == 0 {
            return Err(Error::InvalidInput("background rank must be >= 1".into()));
        }
        if !(self.background.amplitude >= 0.0) || !self.background.amplitude.is_finite() {
            return Err(Error::InvalidInput("background amplitude must be >= 0".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidInput("noise sigma must be >= 0".into()));
        }
        for (i, t) in self.targets.iter().enumerate() {
            t.blob.validate(&format!("target {i}"))?;
            validate_hidden(&t.hidden, &format!("target {i}"))?;
        }
        for (i, d) in self.distractors.iter().enumerate() {
            d.blob.validate(&format!("distractor {i}"))?;
            validate_hidden(&d.hidden, &format!("distractor {i}"))?;
        }
        Ok(())
    }
}

fn validate_hidden(hidden: &[(usize, usize)], what: &str) -> Result<()> {
    for &(start, end) in hidden {
        if start >= end {
            return Err(Error::InvalidInput(format!(
                "{what}: empty or reversed hidden window ({start}, {end})"
            )));
        }
    }
    Ok(())
}

/// Per-frame annotations: identified targets plus unidentified
/// target-like distractors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame: usize,
    pub targets: Vec<GroundTruth>,
    pub distractors: Vec<BBox>,
}

/// One rendered frame with its annotations.
#[derive(Debug, Clone)]
pub struct Frame {
    pub image: Matrix,
    pub truth: FrameTruth,
}

/// Sample the background layout and render it.
///
/// Each component is `amp/rank * a(y) b(x)^T` with `a`, `b` raised cosines
/// in `[0, 1]`; the result is entrywise in `[0, amplitude]` and its matrix
/// rank is at most `rank`.
pub fn gen_background(spec: &SequenceSpec, seed: u64) -> Result<Matrix> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (spec.height, spec.width);
    let mut bg = Matrix::zeros(h, w);
    let scale = spec.background.amplitude / spec.background.rank as f64;
    for _ in 0..spec.background.rank {
        let fy = rng.gen_range(1..=3) as f64;
        let fx = rng.gen_range(1..=3) as f64;
        let py = rng.gen_range(0.0..std::f64::consts::TAU);
        let px = rng.gen_range(0.0..std::f64::consts::TAU);
        let a: Vec<f64> = (0..h)
            .map(|y| 0.5 + 0.5 * (std::f64::consts::TAU * fy * y as f64 / h as f64 + py).cos())
            .collect();
        let b: Vec<f64> = (0..w)
            .map(|x| 0.5 + 0.5 * (std::f64::consts::TAU * fx * x as f64 / w as f64 + px).cos())
            .collect();
        for y in 0..h {
            for x in 0..w {
                bg.set(y, x, bg.get(y, x) + scale * a[y] * b[x]);
            }
        }
    }
    Ok(bg)
}

/// Advected positions of the blobs visible in `frame`, tagged with each
/// blob's index in the spec (the stable identity across frames).
fn blob_positions_at(
    blobs: &[MovingBlob],
    frame: usize,
    h: usize,
    w: usize,
) -> Vec<(usize, GaussianBlob)> {
    blobs
        .iter()
        .enumerate()
        .filter(|(_, m)| m.visible(frame))
        .map(|(i, m)| {
            let margin = 3.0 * m.blob.sigma;
            let x = reflect(m.blob.x + m.vx * frame as f64, margin, w as f64 - margin);
            let y = reflect(m.blob.y + m.vy * frame as f64, margin, h as f64 - margin);
            (i, GaussianBlob { x, y, ..m.blob })
        })
        .collect()
}

/// Fold `v` back into `[lo, hi]` by mirror reflection.
fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        // blob larger than the image: park it at the center
        return (lo + hi) / 2.0;
    }
    let span = hi - lo;
    let mut t = (v - lo).rem_euclid(2.0 * span);
    if t > span {
        t = 2.0 * span - t;
    }
    lo + t
}

fn add_blob(image: &mut Matrix, blob: &GaussianBlob) {
    let inv = 1.0 / (2.0 * blob.sigma * blob.sigma);
    for y in 0..image.rows() {
        let dy = y as f64 + 0.5 - blob.y;
        for x in 0..image.cols() {
            let dx = x as f64 + 0.5 - blob.x;
            let v = image.get(y, x) + blob.intensity * (-(dx * dx + dy * dy) * inv).exp();
            image.set(y, x, v);
        }
    }
}

/// Render frame `frame` of the sequence: background + advected blobs +
/// per-frame white noise, clamped to `[0, 1]`. Target `i` keeps id `i`
/// across every frame.
pub fn gen_frame(spec: &SequenceSpec, seed: u64, frame: usize) -> Result<Frame> {
    spec.validate()?;
    if frame >= spec.frames {
        return Err(Error::InvalidInput(format!(
            "frame {frame} out of range for a {}-frame sequence",
            spec.frames
        )));
    }
    let mut image = gen_background(spec, seed)?;
    let targets = blob_positions_at(&spec.targets, frame, spec.height, spec.width);
    let distractors = blob_positions_at(&spec.distractors, frame, spec.height, spec.width);
    for (_, b) in targets.iter().chain(distractors.iter()) {
        add_blob(&mut image, b);
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_frame_seed(seed, frame as u64));
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::InvalidInput(format!("noise distribution: {e}")))?;
        for v in image.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    for v in image.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    let truth = FrameTruth {
        frame,
        targets: targets
            .iter()
            .map(|&(i, ref b)| GroundTruth { bbox: b.bbox(), id: i as u32 })
            .collect(),
        distractors: distractors.iter().map(|(_, b)| b.bbox()).collect(),
    };
    Ok(Frame { image, truth })
}

/// Render every frame of the sequence in order.
pub fn gen_sequence(spec: &SequenceSpec, seed: u64) -> Result<Vec<Frame>> {
    (0..spec.frames).map(|f| gen_frame(spec, seed, f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> SequenceSpec {
        SequenceSpec {
            height: 32,
            width: 32,
            frames: 4,
            background: BackgroundSpec { rank: 2, amplitude: 0.4 },
            noise_sigma: 0.01,
            targets: vec![MovingBlob {
                blob: GaussianBlob { x: 10.0, y: 12.0, sigma: 1.5, intensity: 0.5 },
                vx: 1.0,
                vy: 0.5,
                hidden: Vec::new(),
            }],
            distractors: vec![MovingBlob {
                blob: GaussianBlob { x: 24.0, y: 20.0, sigma: 1.5, intensity: 0.4 },
                vx: -0.5,
                vy: 0.0,
                hidden: Vec::new(),
            }],
        }
    }

    #[test]
    fn background_range_and_determinism() {
        let spec = small_spec();
        let a = gen_background(&spec, 7).unwrap();
        let b = gen_background(&spec, 7).unwrap();
        assert_eq!(a, b);
        let other = gen_background(&spec, 8).unwrap();
        assert_ne!(a, other);
        let amp = spec.background.amplitude;
        assert!(a.data().iter().all(|&v| (0.0..=amp + 1e-12).contains(&v)));
    }

    #[test]
    fn annotation_box_is_three_sigma() {
        let blob = GaussianBlob { x: 100.0, y: 100.0, sigma: 1.5, intensity: 1.0 };
        let b = blob.bbox();
        assert_eq!((b.x1, b.y1, b.x2, b.y2), (95.5, 95.5, 104.5, 104.5));
    }

    #[test]
    fn frame_is_reproducible_and_clamped() {
        let spec = small_spec();
        let f1 = gen_frame(&spec, 42, 2).unwrap();
        let f2 = gen_frame(&spec, 42, 2).unwrap();
        assert_eq!(f1.image, f2.image);
        assert_eq!(f1.truth, f2.truth);
        assert!(f1.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn noise_differs_between_frames_but_layout_does_not() {
        let mut spec = small_spec();
        spec.targets.clear();
        spec.distractors.clear();
        let f0 = gen_frame(&spec, 3, 0).unwrap();
        let f1 = gen_frame(&spec, 3, 1).unwrap();
        assert_ne!(f0.image, f1.image, "per-frame noise must differ");

        spec.noise_sigma = 0.0;
        let c0 = gen_frame(&spec, 3, 0).unwrap();
        let c1 = gen_frame(&spec, 3, 1).unwrap();
        assert_eq!(c0.image, c1.image, "static noiseless scene is constant");
    }

    #[test]
    fn target_brightens_its_center_pixel() {
        let mut spec = small_spec();
        spec.noise_sigma = 0.0;
        spec.distractors.clear();
        let with = gen_frame(&spec, 1, 0).unwrap();
        let mut bare = spec.clone();
        bare.targets.clear();
        let without = gen_frame(&bare, 1, 0).unwrap();
        let (x, y) = (10, 12);
        assert!(with.image.get(y, x) > without.image.get(y, x) + 0.3);
    }

    #[test]
    fn motion_advances_and_ids_are_stable() {
        let spec = small_spec();
        let frames = gen_sequence(&spec, 5).unwrap();
        assert_eq!(frames.len(), 4);
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f.truth.frame, i);
            assert_eq!(f.truth.targets[0].id, 0);
            assert_eq!(f.truth.distractors.len(), 1);
        }
        let c0 = frames[0].truth.targets[0].bbox.center();
        let c1 = frames[1].truth.targets[0].bbox.center();
        assert!((c1.0 - c0.0 - 1.0).abs() < 1e-12);
        assert!((c1.1 - c0.1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reflection_keeps_boxes_inside_the_image() {
        let mut spec = small_spec();
        spec.frames = 60;
        spec.targets[0].vx = 2.3; // bounces several times in 60 frames
        spec.targets[0].vy = -1.7;
        let frames = gen_sequence(&spec, 9).unwrap();
        for f in &frames {
            let b = frames[0].truth.targets[0].bbox;
            assert!(b.is_valid());
            let bb = f.truth.targets[0].bbox;
            assert!(bb.x1 >= -1e-9 && bb.y1 >= -1e-9);
            assert!(bb.x2 <= spec.width as f64 + 1e-9);
            assert!(bb.y2 <= spec.height as f64 + 1e-9);
        }
    }

    #[test]
    fn reflect_folds_like_a_mirror() {
        assert_eq!(reflect(5.0, 0.0, 10.0), 5.0);
        assert_eq!(reflect(-3.0, 0.0, 10.0), 3.0);
        assert_eq!(reflect(13.0, 0.0, 10.0), 7.0);
        assert_eq!(reflect(23.0, 0.0, 10.0), 3.0); // two bounces
        assert_eq!(reflect(4.0, 4.0, 4.0), 4.0);
    }

    #[test]
    fn frame_seed_derivation_spreads() {
        let a = derive_frame_seed(1, 0);
        let b = derive_frame_seed(1, 1);
        let c = derive_frame_seed(2, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, 1, "derived seed must differ from the base seed");
    }

    #[test]
    fn spec_validation_catches_bad_fields() {
        let mut s = small_spec();
        s.height = 8;
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.targets[0].blob.sigma = 0.0;
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.noise_sigma = -0.1;
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.frames = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn sequence_spec_json_round_trip() {
        let spec = small_spec();
        let js = serde_json::to_string(&spec).unwrap();
        let back: SequenceSpec = serde_json::from_str(&js).unwrap();
        assert_eq!(back, spec);
        // velocities default to zero when omitted
        let min: SequenceSpec = serde_json::from_str(
            r#"{"height":32,"width":32,"frames":1,
                "targets":[{"x":5.0,"y":6.0,"sigma":1.0,"intensity":0.5}]}"#,
        )
        .unwrap();
        assert_eq!(min.targets[0].vx, 0.0);
        assert_eq!(min.targets[0].vy, 0.0);
    }
}
