//! End-to-end toy detector: deterministic fixed-filter feature pyramid,
//! rank-sparsity refinement on the last two stages, prior-guided memory
//! attention on the deepest stage, and a peak-extraction decoder.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feasibility::{build_field, make_gate_map, sample_prior};
use crate::memory::{encode_memory, read_attend, write_memory, MemoryBank, PgmaParams};
use crate::numeric::{downsample_avg, sigmoid, Matrix, Tensor3};
use crate::pifr::{refine, PifrParams};
use crate::types::{BBox, Detection};

/// Channel count of every pyramid stage.
pub const STAGE_CHANNELS: usize = 8;

/// Stage strides relative to the input image.
pub const STRIDES: [usize; 3] = [4, 8, 16];

/// Fixed gain per pyramid channel. Contrast channels are amplified so that
/// small-target evidence survives the decoder's channel-mean projection;
/// image-scale channels stay near unit gain.
pub const CHANNEL_GAINS: [f64; STAGE_CHANNELS] = [1.0, 4.0, 4.0, 4.0, 8.0, 8.0, 24.0, 8.0];

/// Multi-scale feature stack; `stages[i]` has grid `ceil(image / STRIDES[i])`.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub stages: Vec<Tensor3>,
}

/// Everything the detector needs besides the image itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Expected input size `(height, width)`; frames must match it.
    pub image_size: (usize, usize),
    /// Peaks below this score are not decoded.
    pub score_threshold: f64,
    /// Greedy NMS suppresses a box overlapping a kept one above this IoU.
    pub nms_iou: f64,
    pub max_detections: usize,
    /// Bias of the decoder's 1x1 score projection. The projection weights
    /// average the (nonnegative) channels, so a negative bias is what
    /// spreads scores across the sigmoid's active range.
    pub score_bias: f64,
    /// Refinement parameters for the last two stages, in stage order.
    pub pifr: [PifrParams; 2],
    pub pgma: PgmaParams,
    /// Width multiplier of the feasibility field Gaussians.
    pub kappa: f64,
    /// Detections below this score do not shape the feasibility field.
    pub field_score_floor: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            image_size: (512, 512),
            score_threshold: 0.5,
            nms_iou: 0.5,
            max_detections: 100,
            score_bias: -2.0,
            pifr: [PifrParams::new(STAGE_CHANNELS), PifrParams::new(STAGE_CHANNELS)],
            pgma: PgmaParams::new(STAGE_CHANNELS),
            kappa: 2.0,
            field_score_floor: 0.3,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h < 16 || w < 16 {
            return Err(Error::InvalidInput(format!(
                "image size must be at least 16x16, got {h}x{w}"
            )));
        }
        for (name, v) in [("score_threshold", self.score_threshold), ("nms_iou", self.nms_iou)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::InvalidInput(format!("{name} must be in (0,1), got {v}")));
            }
        }
        if self.max_detections == 0 {
            return Err(Error::InvalidInput("max_detections must be >= 1".into()));
        }
        if !self.score_bias.is_finite() {
            return Err(Error::InvalidInput("score_bias must be finite".into()));
        }
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::InvalidInput("kappa must be positive".into()));
        }
        if !self.field_score_floor.is_finite() {
            return Err(Error::InvalidInput("field_score_floor must be finite".into()));
        }
        for p in &self.pifr {
            p.validate(STAGE_CHANNELS)?;
        }
        self.pgma.validate(STAGE_CHANNELS)?;
        Ok(())
    }
}

fn grid_for(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

/// Absolute central difference along rows (horizontal), replicated border.
fn grad_x_abs(m: &Matrix) -> Matrix {
    let (h, w) = (m.rows(), m.cols());
    let mut out = Matrix::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let xl = x.saturating_sub(1);
            let xr = (x + 1).min(w - 1);
            out.set(y, x, (m.get(y, xr) - m.get(y, xl)).abs() / 2.0);
        }
    }
    out
}

fn grad_y_abs(m: &Matrix) -> Matrix {
    let (h, w) = (m.rows(), m.cols());
    let mut out = Matrix::zeros(h, w);
    for y in 0..h {
        let yu = y.saturating_sub(1);
        let yd = (y + 1).min(h - 1);
        for x in 0..w {
            out.set(y, x, (m.get(yd, x) - m.get(yu, x)).abs() / 2.0);
        }
    }
    out
}

/// Absolute 4-neighbor Laplacian, replicated border.
fn laplacian_abs(m: &Matrix) -> Matrix {
    let (h, w) = (m.rows(), m.cols());
    let mut out = Matrix::zeros(h, w);
    for y in 0..h {
        let yu = y.saturating_sub(1);
        let yd = (y + 1).min(h - 1);
        for x in 0..w {
            let xl = x.saturating_sub(1);
            let xr = (x + 1).min(w - 1);
            let v =
                m.get(yu, x) + m.get(yd, x) + m.get(y, xl) + m.get(y, xr) - 4.0 * m.get(y, x);
            out.set(y, x, v.abs());
        }
    }
    out
}

/// 3x3-window contrast statistics (windows clipped at the border):
/// `(max - mean, mean - min)` per cell, both nonnegative.
fn local_contrast(m: &Matrix) -> (Matrix, Matrix) {
    let (h, w) = (m.rows(), m.cols());
    let mut hi = Matrix::zeros(h, w);
    let mut lo = Matrix::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut mx = f64::NEG_INFINITY;
            let mut mn = f64::INFINITY;
            let mut sum = 0.0;
            let mut n = 0.0;
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let v = m.get(yy, xx);
                    mx = mx.max(v);
                    mn = mn.min(v);
                    sum += v;
                    n += 1.0;
                }
            }
            let mean = sum / n;
            hi.set(y, x, mx - mean);
            lo.set(y, x, mean - mn);
        }
    }
    (hi, lo)
}

/// Full-resolution statistics within each pyramid cell (the same
/// near-equal block partition `downsample_avg` uses): peak contrast above
/// the block mean, and the block standard deviation.
fn block_stats(image: &Matrix, gh: usize, gw: usize) -> (Matrix, Matrix) {
    let (h, w) = (image.rows(), image.cols());
    let mut peak = Matrix::zeros(gh, gw);
    let mut std = Matrix::zeros(gh, gw);
    for by in 0..gh {
        let r0 = by * h / gh;
        let r1 = ((by + 1) * h / gh).max(r0 + 1);
        for bx in 0..gw {
            let c0 = bx * w / gw;
            let c1 = ((bx + 1) * w / gw).max(c0 + 1);
            let mut sum = 0.0;
            let mut sq = 0.0;
            let mut mx = f64::NEG_INFINITY;
            let n = ((r1 - r0) * (c1 - c0)) as f64;
            for y in r0..r1 {
                for x in c0..c1 {
                    let v = image.get(y, x);
                    sum += v;
                    sq += v * v;
                    mx = mx.max(v);
                }
            }
            let mean = sum / n;
            peak.set(by, bx, mx - mean);
            std.set(by, bx, (sq / n - mean * mean).max(0.0).sqrt());
        }
    }
    (peak, std)
}

/// Deterministic 8-channel fixed-filter pyramid at strides 4, 8, 16.
///
/// Channels per stage, each scaled by its [`CHANNEL_GAINS`] entry: block
/// mean, |horizontal gradient|, |vertical gradient|, |Laplacian|, 3x3
/// max-minus-mean, 3x3 mean-minus-min, within-block peak-minus-mean,
/// within-block standard deviation. On a constant image every channel but
/// the first is identically zero.
pub fn extract_pyramid(image: &Matrix) -> Result<Pyramid> {
    let (h, w) = (image.rows(), image.cols());
    if h == 0 || w == 0 {
        return Err(Error::InvalidInput("empty image".into()));
    }
    if h < 16 || w < 16 {
        return Err(Error::InvalidInput(format!(
            "image must be at least 16x16, got {h}x{w}"
        )));
    }
    if !image.is_finite() || image.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidInput("image values must be finite in [0,1]".into()));
    }
    let mut stages = Vec::with_capacity(STRIDES.len());
    for stride in STRIDES {
        let (gh, gw) = (grid_for(h, stride), grid_for(w, stride));
        let mean = downsample_avg(image, gh, gw)?;
        let gx = grad_x_abs(&mean);
        let gy = grad_y_abs(&mean);
        let lap = laplacian_abs(&mean);
        let (cmax, cmin) = local_contrast(&mean);
        let (bpeak, bstd) = block_stats(image, gh, gw);
        let mut planes = vec![mean, gx, gy, lap, cmax, cmin, bpeak, bstd];
        for (plane, gain) in planes.iter_mut().zip(CHANNEL_GAINS) {
            if gain != 1.0 {
                for v in plane.data_mut() {
                    *v *= gain;
                }
            }
        }
        stages.push(Tensor3::from_planes(planes)?);
    }
    Ok(Pyramid { stages })
}

/// Score map of the decoder: sigmoid of the channel mean plus a bias.
pub(crate) fn score_map(feature: &Tensor3, bias: f64) -> Matrix {
    let (c, h, w) = (feature.channels(), feature.height(), feature.width());
    let inv = 1.0 / c as f64;
    let mut s = Matrix::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let mut z = 0.0;
            for ch in 0..c {
                z += feature.get(ch, y, x);
            }
            s.set(y, x, sigmoid(z * inv + bias));
        }
    }
    s
}

/// Grow the >= half-peak region around a peak cell (4-connected, confined
/// to an 11x11 cell window) and return its bounding cell rectangle.
fn flood_region(s: &Matrix, py: usize, px: usize) -> (usize, usize, usize, usize) {
    const REACH: usize = 5;
    let (h, w) = (s.rows(), s.cols());
    let floor = 0.5 * s.get(py, px);
    let y0 = py.saturating_sub(REACH);
    let x0 = px.saturating_sub(REACH);
    let y1 = (py + REACH).min(h - 1);
    let x1 = (px + REACH).min(w - 1);
    let mut seen = vec![false; (y1 - y0 + 1) * (x1 - x0 + 1)];
    let idx = |y: usize, x: usize| (y - y0) * (x1 - x0 + 1) + (x - x0);
    let mut queue = vec![(py, px)];
    seen[idx(py, px)] = true;
    let (mut ry0, mut rx0, mut ry1, mut rx1) = (py, px, py, px);
    while let Some((y, x)) = queue.pop() {
        ry0 = ry0.min(y);
        rx0 = rx0.min(x);
        ry1 = ry1.max(y);
        rx1 = rx1.max(x);
        let mut push = |yy: usize, xx: usize, queue: &mut Vec<(usize, usize)>| {
            if !seen[idx(yy, xx)] && s.get(yy, xx) >= floor {
                seen[idx(yy, xx)] = true;
                queue.push((yy, xx));
            }
        };
        if y > y0 {
            push(y - 1, x, &mut queue);
        }
        if y < y1 {
            push(y + 1, x, &mut queue);
        }
        if x > x0 {
            push(y, x - 1, &mut queue);
        }
        if x < x1 {
            push(y, x + 1, &mut queue);
        }
    }
    (ry0, rx0, ry1, rx1)
}

/// Peak-extraction decoder on the deepest stage.
///
/// Strict 8-neighborhood local maxima of the score map above
/// `score_threshold` seed boxes via half-peak flood fill; boxes are mapped
/// to image pixels through the stage's block partition, then greedily
/// NMS-filtered. The result is sorted by descending score.
pub fn decode_detections(feature: &Tensor3, config: &PipelineConfig) -> Result<Vec<Detection>> {
    if !feature.is_finite() {
        return Err(Error::InvalidInput("decode: non-finite feature".into()));
    }
    let (h, w) = (feature.height(), feature.width());
    if h == 0 || w == 0 {
        return Err(Error::InvalidInput("decode: empty feature".into()));
    }
    let (img_h, img_w) = config.image_size;
    let s = score_map(feature, config.score_bias);

    let mut peaks: Vec<(usize, usize, f64)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = s.get(y, x);
            if v <= config.score_threshold {
                continue;
            }
            let mut strict = true;
            'nb: for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    if (yy, xx) != (y, x) && s.get(yy, xx) >= v {
                        strict = false;
                        break 'nb;
                    }
                }
            }
            if strict {
                peaks.push((y, x, v));
            }
        }
    }
    // descending score, stable on raster order for exact determinism
    peaks.sort_by(|a, b| b.2.total_cmp(&a.2));

    let cell_x = |cx: usize| (cx * img_w / w) as f64;
    let cell_y = |cy: usize| (cy * img_h / h) as f64;
    let mut kept: Vec<Detection> = Vec::new();
    for (py, px, score) in peaks {
        let (ry0, rx0, ry1, rx1) = flood_region(&s, py, px);
        let bbox = BBox::new(cell_x(rx0), cell_y(ry0), cell_x(rx1 + 1), cell_y(ry1 + 1));
        let overlaps = kept.iter().any(|k| {
            let iw = (bbox.x2.min(k.bbox.x2) - bbox.x1.max(k.bbox.x1)).max(0.0);
            let ih = (bbox.y2.min(k.bbox.y2) - bbox.y1.max(k.bbox.y1)).max(0.0);
            let inter = iw * ih;
            let union = bbox.area() + k.bbox.area() - inter;
            union > 0.0 && inter / union > config.nms_iou
        });
        if !overlaps {
            kept.push(Detection { bbox, score });
            if kept.len() == config.max_detections {
                break;
            }
        }
    }
    Ok(kept)
}

/// Run the full detector on one frame.
///
/// With memory (`state = Some`): the deepest refined stage is fused with
/// the bank before decoding, and afterwards the frame is written back —
/// the pre-attention refined feature, gated by a feasibility field built
/// from this frame's own detections. Without memory the stage decodes
/// directly and nothing is stored.
pub fn detect_frame(
    image: &Matrix,
    config: &PipelineConfig,
    state: Option<&mut MemoryBank>,
) -> Result<Vec<Detection>> {
    config.validate()?;
    if (image.rows(), image.cols()) != config.image_size {
        return Err(Error::Shape(format!(
            "image is {}x{} but the config expects {}x{}",
            image.rows(),
            image.cols(),
            config.image_size.0,
            config.image_size.1
        )));
    }
    let (decoded_feature, refined_deep) = decoded_feature(image, config, state.as_deref())?;
    let detections = decode_detections(&decoded_feature, config)?;

    if let Some(bank) = state {
        let field = build_field(
            &detections,
            image.rows(),
            image.cols(),
            config.kappa,
            config.field_score_floor,
        )?;
        let (gh, gw) = (refined_deep.height(), refined_deep.width());
        let prior = sample_prior(&field, gh, gw)?;
        let gate = make_gate_map(&field, gh, gw, &config.pgma.gate_kernel, config.pgma.gate_bias)?;
        let encoded = encode_memory(&refined_deep.to_tokens(), &gate, config.pgma.beta)?;
        let frame = bank.last_frame().map_or(0, |f| f + 1);
        write_memory(bank, frame, &encoded, &prior, &config.pgma)?;
    }
    Ok(detections)
}

/// Deepest-stage feature actually decoded for `image`: PIFR-refined and,
/// when a non-empty bank is present, fused with the memory readout. Returns
/// the decoded feature together with the pre-attention refined stage (the
/// tensor that would be written back to memory).
pub(crate) fn decoded_feature(
    image: &Matrix,
    config: &PipelineConfig,
    bank: Option<&MemoryBank>,
) -> Result<(Tensor3, Tensor3)> {
    let pyramid = extract_pyramid(image)?;
    let (refined_mid, _) = refine(&pyramid.stages[1], &config.pifr[0])?;
    let (refined_deep, _) = refine(&pyramid.stages[2], &config.pifr[1])?;
    let _ = refined_mid; // reserved for decoders that consume multiple scales

    let decoded = match bank {
        Some(bank) => {
            let fused = read_attend(&refined_deep.to_tokens(), bank, &config.pgma)?;
            Tensor3::from_tokens(&fused, refined_deep.height(), refined_deep.width())?
        }
        None => refined_deep.clone(),
    };
    Ok((decoded, refined_deep))
}

/// Detect every frame of an ordered sequence, threading one memory bank
/// through the whole run. Frame 1 sees an empty bank and therefore behaves
/// exactly like single-frame detection.
pub fn track_sequence(images: &[Matrix], config: &PipelineConfig) -> Result<Vec<Vec<Detection>>> {
    if images.is_empty() {
        return Err(Error::InvalidInput("track_sequence needs at least one frame".into()));
    }
    config.validate()?;
    let mut bank = MemoryBank::new(config.pgma.capacity)?;
    images
        .iter()
        .map(|image| detect_frame(image, config, Some(&mut bank)))
        .collect()
}
