//! Detection metrics: IoU, greedy matching, precision/recall/F1, AP at a
//! fixed IoU threshold, signal-to-clutter ratio, and a temporal
//! association-accuracy metric for sequence runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::synthgen::FrameTruth;
use crate::types::{BBox, Detection};

/// IoU threshold used throughout evaluation.
pub const IOU_THRESHOLD: f64 = 0.5;

/// Intersection-over-union of two boxes. Zero-area boxes are rejected.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    if !a.is_valid() || a.area() == 0.0 {
        return Err(Error::InvalidInput(format!("degenerate box {a:?}")));
    }
    if !b.is_valid() || b.area() == 0.0 {
        return Err(Error::InvalidInput(format!("degenerate box {b:?}")));
    }
    Ok(overlap(a, b))
}

/// IoU without validity checks; any degenerate configuration scores 0.
fn overlap(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Outcome of matching one frame's detections against its ground truth.
///
/// Per-detection entries are ordered by descending score (stable for ties).
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Index of the claimed GT box per sorted detection, `None` for FP.
    pub matched: Vec<Option<usize>>,
    /// Original index of each sorted detection.
    pub order: Vec<usize>,
    /// Scores in the sorted order.
    pub scores: Vec<f64>,
}

impl MatchResult {
    /// TP flag per detection, in descending-score order.
    pub fn flags(&self) -> Vec<bool> {
        self.matched.iter().map(|m| m.is_some()).collect()
    }
}

/// Greedy score-ordered matching: each detection, highest score first,
/// claims the unmatched GT box with the highest IoU, provided it reaches
/// `iou_threshold`. Detections are sorted internally.
pub fn match_detections(dets: &[Detection], gts: &[BBox], iou_threshold: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut taken = vec![false; gts.len()];
    let mut matched = Vec::with_capacity(dets.len());
    let mut scores = Vec::with_capacity(dets.len());
    let mut tp = 0;
    for &di in &order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let ov = overlap(&dets[di].bbox, gt);
            if ov >= iou_threshold && best.map_or(true, |(_, b)| ov > b) {
                best = Some((gi, ov));
            }
        }
        match best {
            Some((gi, _)) => {
                taken[gi] = true;
                tp += 1;
                matched.push(Some(gi));
            }
            None => matched.push(None),
        }
        scores.push(dets[di].score);
    }
    MatchResult {
        true_positives: tp,
        false_positives: dets.len() - tp,
        false_negatives: gts.len() - tp,
        matched,
        order,
        scores,
    }
}

/// Precision, recall, and F1 from a match result.
///
/// Empty-case conventions: with no detections, precision is 1 only when
/// there is also no GT, otherwise 0; with no GT, recall is 1. F1 is the
/// harmonic mean, 0 when both components vanish.
pub fn pr_f1(m: &MatchResult) -> (f64, f64, f64) {
    let tp = m.true_positives as f64;
    let predictions = m.true_positives + m.false_positives;
    let truths = m.true_positives + m.false_negatives;
    let p = if predictions == 0 {
        if truths == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        tp / predictions as f64
    };
    let r = if truths == 0 { 1.0 } else { tp / truths as f64 };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

/// One frame's predictions paired with its ground-truth boxes.
#[derive(Debug, Clone, Default)]
pub struct FrameEval {
    pub detections: Vec<Detection>,
    pub truths: Vec<BBox>,
}

/// One point of the dataset-level precision-recall sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub score: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Sweep the globally score-sorted detection list, matching per frame, and
/// report precision/recall after each detection. Errors when the dataset
/// contains no ground truth.
pub fn pr_sweep(frames: &[FrameEval], iou_threshold: f64) -> Result<Vec<PrPoint>> {
    let total_gt: usize = frames.iter().map(|f| f.truths.len()).sum();
    if total_gt == 0 {
        return Err(Error::InvalidInput(
            "AP is undefined on a dataset with no ground truth".into(),
        ));
    }
    let mut pool: Vec<(usize, usize)> = Vec::new(); // (frame, det index)
    for (fi, f) in frames.iter().enumerate() {
        for di in 0..f.detections.len() {
            pool.push((fi, di));
        }
    }
    pool.sort_by(|&(fa, da), &(fb, db)| {
        frames[fb].detections[db].score.total_cmp(&frames[fa].detections[da].score)
    });
    let mut taken: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.truths.len()]).collect();
    let mut tp = 0usize;
    let mut out = Vec::with_capacity(pool.len());
    for (rank, &(fi, di)) in pool.iter().enumerate() {
        let det = &frames[fi].detections[di];
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in frames[fi].truths.iter().enumerate() {
            if taken[fi][gi] {
                continue;
            }
            let ov = overlap(&det.bbox, gt);
            if ov >= iou_threshold && best.map_or(true, |(_, b)| ov > b) {
                best = Some((gi, ov));
            }
        }
        if let Some((gi, _)) = best {
            taken[fi][gi] = true;
            tp += 1;
        }
        out.push(PrPoint {
            score: det.score,
            precision: tp as f64 / (rank + 1) as f64,
            recall: tp as f64 / total_gt as f64,
        });
    }
    Ok(out)
}

/// All-point interpolated average precision over the global sweep.
pub fn ap50(frames: &[FrameEval], iou_threshold: f64) -> Result<f64> {
    let sweep = pr_sweep(frames, iou_threshold)?;
    Ok(area_under_pr(&sweep))
}

/// Exact area under the precision envelope of a ranked PR sweep.
fn area_under_pr(sweep: &[PrPoint]) -> f64 {
    let n = sweep.len();
    if n == 0 {
        return 0.0;
    }
    // precision envelope: max precision at this rank or any later one
    let mut envelope = vec![0.0; n];
    let mut running = 0.0f64;
    for i in (0..n).rev() {
        running = running.max(sweep[i].precision);
        envelope[i] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..n {
        ap += (sweep[i].recall - prev_recall) * envelope[i];
        prev_recall = sweep[i].recall;
    }
    ap
}

/// Signal-to-clutter ratio of a target region:
/// `(mean inside box - mean of a 10 px surrounding annulus) / (annulus std + 1e-12)`.
///
/// The annulus is clipped to the image. A pixel belongs to a region when
/// its center does.
pub fn scr(image: &Matrix, target: &BBox) -> Result<f64> {
    const BAND: f64 = 10.0;
    let (h, w) = (image.rows() as f64, image.cols() as f64);
    if !target.is_valid() || target.x1 < 0.0 || target.y1 < 0.0 || target.x2 > w || target.y2 > h
    {
        return Err(Error::InvalidInput(format!(
            "target box {target:?} is not inside the {w}x{h} image"
        )));
    }
    let inside = |x: f64, y: f64, b: &BBox| x >= b.x1 && x <= b.x2 && y >= b.y1 && y <= b.y2;
    let outer = BBox::new(target.x1 - BAND, target.y1 - BAND, target.x2 + BAND, target.y2 + BAND);
    let mut box_vals = Vec::new();
    let mut ann_vals = Vec::new();
    for y in 0..image.rows() {
        let py = y as f64 + 0.5;
        for x in 0..image.cols() {
            let px = x as f64 + 0.5;
            if inside(px, py, target) {
                box_vals.push(image.get(y, x));
            } else if inside(px, py, &outer) {
                ann_vals.push(image.get(y, x));
            }
        }
    }
    if box_vals.is_empty() {
        return Err(Error::InvalidInput("target box contains no pixels".into()));
    }
    if ann_vals.is_empty() {
        return Err(Error::InvalidInput("background annulus is empty".into()));
    }
    // shift by a reference value: a mathematical no-op that keeps constant
    // images at exactly zero contrast
    let shift = box_vals[0];
    for v in box_vals.iter_mut().chain(ann_vals.iter_mut()) {
        *v -= shift;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mu_t = mean(&box_vals);
    let mu_b = mean(&ann_vals);
    let var = ann_vals.iter().map(|v| (v - mu_b) * (v - mu_b)).sum::<f64>() / ann_vals.len() as f64;
    Ok((mu_t - mu_b) / (var.sqrt() + 1e-12))
}

/// Fraction of frames after the first that are "clean": every annotated
/// target is matched at `iou_threshold` and no detection lands on a
/// distractor box at that threshold.
pub fn association_accuracy(
    dets: &[Vec<Detection>],
    truths: &[FrameTruth],
    iou_threshold: f64,
) -> Result<f64> {
    if dets.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} detection frames vs {} truth frames",
            dets.len(),
            truths.len()
        )));
    }
    if truths.len() < 2 {
        return Err(Error::InvalidInput(
            "association accuracy needs at least two frames".into(),
        ));
    }
    let mut clean = 0usize;
    let eligible = truths.len() - 1;
    for (frame_dets, truth) in dets.iter().zip(truths.iter()).skip(1) {
        let boxes: Vec<BBox> = truth.targets.iter().map(|t| t.bbox).collect();
        let m = match_detections(frame_dets, &boxes, iou_threshold);
        let all_targets = m.true_positives == boxes.len();
        let distractor_hit = frame_dets.iter().any(|d| {
            truth
                .distractors
                .iter()
                .any(|db| overlap(&d.bbox, db) >= iou_threshold)
        });
        if all_targets && !distractor_hit {
            clean += 1;
        }
    }
    Ok(clean as f64 / eligible as f64)
}

/// Dataset-level metric summary serialized as the metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap50: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_scr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub association_accuracy: Option<f64>,
}

/// Aggregate P/R/F1 (micro-averaged over pooled counts) and AP over frames.
pub fn summarize(frames: &[FrameEval], iou_threshold: f64) -> Result<MetricReport> {
    let mut tp = 0;
    let mut fp = 0;
    let mut fnn = 0;
    for f in frames {
        let m = match_detections(&f.detections, &f.truths, iou_threshold);
        tp += m.true_positives;
        fp += m.false_positives;
        fnn += m.false_negatives;
    }
    let pooled = MatchResult {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fnn,
        matched: Vec::new(),
        order: Vec::new(),
        scores: Vec::new(),
    };
    let (p, r, f1) = pr_f1(&pooled);
    let ap = if frames.iter().all(|f| f.truths.is_empty()) {
        0.0
    } else {
        ap50(frames, iou_threshold)?
    };
    Ok(MetricReport {
        precision: p,
        recall: r,
        f1,
        ap50: ap,
        mean_scr: None,
        association_accuracy: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2)
    }

    fn det(b: BBox, score: f64) -> Detection {
        Detection { bbox: b, score }
    }

    #[test]
    fn iou_basic_cases() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &bx(5.0, 5.0, 7.0, 7.0)).unwrap(), 0.0);
        // overlap 1x2 = 2, union 4 + 4 - 2 = 6
        let v = iou(&a, &bx(1.0, 0.0, 3.0, 2.0)).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_is_symmetric_and_rejects_degenerate() {
        let a = bx(0.0, 0.0, 3.0, 1.0);
        let b = bx(1.0, 0.0, 2.0, 5.0);
        assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
        assert!(iou(&a, &bx(1.0, 1.0, 1.0, 4.0)).is_err());
    }

    #[test]
    fn matching_perfect_and_double_claim() {
        let gts = vec![bx(0.0, 0.0, 4.0, 4.0), bx(10.0, 10.0, 14.0, 14.0)];
        let dets = vec![det(gts[0], 0.9), det(gts[1], 0.8)];
        let m = match_detections(&dets, &gts, 0.5);
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (2, 0, 0));

        // two detections over one GT: the higher score claims it
        let dets = vec![det(gts[0], 0.7), det(gts[0], 0.9)];
        let m = match_detections(&dets, &[gts[0]], 0.5);
        assert_eq!((m.true_positives, m.false_positives, m.false_negatives), (1, 1, 0));
        assert_eq!(m.order, vec![1, 0], "sorted by descending score");
        assert_eq!(m.flags(), vec![true, false]);
    }

    #[test]
    fn greedy_matches_brute_force_on_most_seeded_instances() {
        // brute-force maximum bipartite matching via augmenting paths
        fn augment(
            d: usize,
            adj: &[Vec<usize>],
            seen: &mut [bool],
            owner: &mut [Option<usize>],
        ) -> bool {
            for &g in &adj[d] {
                if seen[g] {
                    continue;
                }
                seen[g] = true;
                if owner[g].is_none()
                    || augment(owner[g].unwrap(), adj, seen, owner)
                {
                    owner[g] = Some(d);
                    return true;
                }
            }
            false
        }

        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut agree = 0;
        let trials = 1000;
        for trial in 0..trials {
            let nd = rng.gen_range(1..=6);
            let ng = rng.gen_range(1..=6);
            let mk = |rng: &mut ChaCha8Rng| {
                let x = rng.gen_range(0.0..16.0);
                let y = rng.gen_range(0.0..16.0);
                let w = rng.gen_range(2.0..6.0);
                let h = rng.gen_range(2.0..6.0);
                bx(x, y, x + w, y + h)
            };
            let dets: Vec<Detection> =
                (0..nd).map(|_| det(mk(&mut rng), rng.gen_range(0.0..1.0))).collect();
            let gts: Vec<BBox> = (0..ng).map(|_| mk(&mut rng)).collect();

            let greedy = match_detections(&dets, &gts, 0.5).true_positives;

            let adj: Vec<Vec<usize>> = dets
                .iter()
                .map(|d| {
                    gts.iter()
                        .enumerate()
                        .filter(|(_, g)| overlap(&d.bbox, g) >= 0.5)
                        .map(|(i, _)| i)
                        .collect()
                })
                .collect();
            let mut owner: Vec<Option<usize>> = vec![None; ng];
            let mut maximum = 0;
            for d in 0..nd {
                let mut seen = vec![false; ng];
                if augment(d, &adj, &mut seen, &mut owner) {
                    maximum += 1;
                }
            }

            assert!(greedy <= maximum, "greedy can never beat the maximum");
            if greedy == maximum {
                agree += 1;
            } else {
                eprintln!("trial {trial}: greedy {greedy} < maximum {maximum}");
            }
        }
        assert!(
            agree as f64 >= 0.95 * trials as f64,
            "greedy agreed on only {agree}/{trials} instances"
        );
    }

    #[test]
    fn pr_f1_values_and_conventions() {
        let m = MatchResult {
            true_positives: 9,
            false_positives: 1,
            false_negatives: 1,
            matched: Vec::new(),
            order: Vec::new(),
            scores: Vec::new(),
        };
        let (p, r, f1) = pr_f1(&m);
        assert!((p - 0.9).abs() < 1e-15 && (r - 0.9).abs() < 1e-15 && (f1 - 0.9).abs() < 1e-15);

        // nothing predicted, nothing to find
        let empty = match_detections(&[], &[], 0.5);
        assert_eq!(pr_f1(&empty), (1.0, 1.0, 1.0));

        // nothing predicted but targets exist: precision pinned to 0
        let miss = match_detections(&[], &[bx(0.0, 0.0, 2.0, 2.0)], 0.5);
        assert_eq!(pr_f1(&miss), (0.0, 0.0, 0.0));
    }

    #[test]
    fn ap_single_true_positive_is_one() {
        let g = bx(2.0, 2.0, 6.0, 6.0);
        let frames = vec![FrameEval { detections: vec![det(g, 0.9)], truths: vec![g] }];
        assert_eq!(ap50(&frames, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn ap_tp_fp_tp_case_is_five_sixths() {
        // two GT in one frame; scores order the list as [TP, FP, TP]
        let g1 = bx(0.0, 0.0, 4.0, 4.0);
        let g2 = bx(20.0, 20.0, 24.0, 24.0);
        let frames = vec![FrameEval {
            detections: vec![
                det(g1, 0.9),
                det(bx(40.0, 40.0, 44.0, 44.0), 0.8),
                det(g2, 0.7),
            ],
            truths: vec![g1, g2],
        }];
        let ap = ap50(&frames, 0.5).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn ap_all_false_positives_is_zero_and_no_gt_errors() {
        let frames = vec![FrameEval {
            detections: vec![det(bx(0.0, 0.0, 2.0, 2.0), 0.9)],
            truths: vec![bx(10.0, 10.0, 12.0, 12.0)],
        }];
        assert_eq!(ap50(&frames, 0.5).unwrap(), 0.0);
        let none = vec![FrameEval { detections: vec![], truths: vec![] }];
        assert!(ap50(&none, 0.5).is_err());
    }

    #[test]
    fn ap_never_rises_when_appending_a_trailing_false_positive() {
        let g1 = bx(0.0, 0.0, 4.0, 4.0);
        let g2 = bx(20.0, 0.0, 24.0, 4.0);
        let mut frame = FrameEval {
            detections: vec![det(g1, 0.9), det(bx(40.0, 0.0, 44.0, 4.0), 0.5)],
            truths: vec![g1, g2],
        };
        let before = ap50(std::slice::from_ref(&frame), 0.5).unwrap();
        frame.detections.push(det(bx(60.0, 0.0, 64.0, 4.0), 0.1));
        let after = ap50(std::slice::from_ref(&frame), 0.5).unwrap();
        assert!(after <= before + 1e-15);
    }

    #[test]
    fn ap_pools_scores_across_frames() {
        // high-scoring FP in frame 2 must outrank frame 1's TP globally
        let g = bx(0.0, 0.0, 4.0, 4.0);
        let frames = vec![
            FrameEval { detections: vec![det(g, 0.6)], truths: vec![g] },
            FrameEval {
                detections: vec![det(bx(30.0, 30.0, 34.0, 34.0), 0.95)],
                truths: vec![],
            },
        ];
        let sweep = pr_sweep(&frames, 0.5).unwrap();
        assert_eq!(sweep[0].precision, 0.0, "global ordering puts the FP first");
        let ap = ap50(&frames, 0.5).unwrap();
        assert!((ap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scr_constant_image_is_zero() {
        let img = Matrix::from_vec(32, 32, vec![0.7; 1024]).unwrap();
        let v = scr(&img, &bx(10.0, 10.0, 20.0, 20.0)).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn scr_monte_carlo_matches_predicted_contrast() {
        use rand_distr::{Distribution, Normal};
        // clean scene: flat 0.5 plus a Gaussian bump well inside the frame
        let (h, w) = (48, 48);
        let blob = crate::synthgen::GaussianBlob { x: 24.0, y: 24.0, sigma: 1.5, intensity: 0.3 };
        let tb = blob.bbox();
        let noise_sigma = 0.03;
        let mut clean = Matrix::from_vec(h, w, vec![0.5; h * w]).unwrap();
        let inv = 1.0 / (2.0 * blob.sigma * blob.sigma);
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 + 0.5 - blob.x;
                let dy = y as f64 + 0.5 - blob.y;
                let v = clean.get(y, x) + blob.intensity * (-(dx * dx + dy * dy) * inv).exp();
                clean.set(y, x, v);
            }
        }
        // predicted SCR: clean contrast over the known noise deviation
        let clean_numerator = {
            let mut tvals = Vec::new();
            let mut avals = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let in_t =
                        px >= tb.x1 && px <= tb.x2 && py >= tb.y1 && py <= tb.y2;
                    let in_o = px >= tb.x1 - 10.0
                        && px <= tb.x2 + 10.0
                        && py >= tb.y1 - 10.0
                        && py <= tb.y2 + 10.0;
                    if in_t {
                        tvals.push(clean.get(y, x));
                    } else if in_o {
                        avals.push(clean.get(y, x));
                    }
                }
            }
            tvals.iter().sum::<f64>() / tvals.len() as f64
                - avals.iter().sum::<f64>() / avals.len() as f64
        };
        let predicted = clean_numerator / noise_sigma;

        let normal = Normal::new(0.0, noise_sigma).unwrap();
        let mut total = 0.0;
        let seeds = 100;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut noisy = clean.clone();
            for v in noisy.data_mut() {
                *v += normal.sample(&mut rng);
            }
            total += scr(&noisy, &tb).unwrap();
        }
        let mean_scr = total / seeds as f64;
        assert!(
            (mean_scr - predicted).abs() <= 0.15 * predicted,
            "measured {mean_scr:.3} vs predicted {predicted:.3}"
        );
    }

    #[test]
    fn scr_strictly_increases_with_amplitude() {
        let mut weak = Matrix::from_vec(32, 32, vec![0.2; 1024]).unwrap();
        let mut strong = weak.clone();
        // fixed mild clutter so the denominator is nonzero
        for y in 0..32 {
            for x in 0..32 {
                let c = 0.02 * ((x * 31 + y * 17) % 7) as f64;
                weak.set(y, x, weak.get(y, x) + c);
                strong.set(y, x, strong.get(y, x) + c);
            }
        }
        for y in 14..18 {
            for x in 14..18 {
                weak.set(y, x, weak.get(y, x) + 0.2);
                strong.set(y, x, strong.get(y, x) + 0.4);
            }
        }
        let b = bx(13.0, 13.0, 19.0, 19.0);
        assert!(scr(&strong, &b).unwrap() > scr(&weak, &b).unwrap());
    }

    #[test]
    fn scr_rejects_out_of_image_boxes() {
        let img = Matrix::from_vec(16, 16, vec![0.5; 256]).unwrap();
        assert!(scr(&img, &bx(-1.0, 0.0, 4.0, 4.0)).is_err());
        assert!(scr(&img, &bx(0.0, 0.0, 20.0, 4.0)).is_err());
    }

    fn truth_frame(frame: usize, targets: &[BBox], distractors: &[BBox]) -> FrameTruth {
        FrameTruth {
            frame,
            targets: targets
                .iter()
                .enumerate()
                .map(|(i, b)| crate::types::GroundTruth { bbox: *b, id: i as u32 })
                .collect(),
            distractors: distractors.to_vec(),
        }
    }

    #[test]
    fn association_perfect_and_distractor_locked() {
        let t = bx(4.0, 4.0, 10.0, 10.0);
        let d = bx(40.0, 40.0, 46.0, 46.0);
        let truths: Vec<FrameTruth> =
            (0..5).map(|f| truth_frame(f, &[t], &[d])).collect();

        let perfect: Vec<Vec<Detection>> = (0..5).map(|_| vec![det(t, 0.9)]).collect();
        assert_eq!(association_accuracy(&perfect, &truths, 0.5).unwrap(), 1.0);

        let locked: Vec<Vec<Detection>> = (0..5).map(|_| vec![det(d, 0.9)]).collect();
        assert_eq!(association_accuracy(&locked, &truths, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn association_counts_clean_eligible_frames() {
        let t = bx(4.0, 4.0, 10.0, 10.0);
        let d = bx(40.0, 40.0, 46.0, 46.0);
        let truths: Vec<FrameTruth> = (0..11).map(|f| truth_frame(f, &[t], &[d])).collect();
        // 10 eligible frames (2..11); dirty on two of them
        let dets: Vec<Vec<Detection>> = (0..11)
            .map(|f| match f {
                3 => vec![],                           // missed target
                7 => vec![det(t, 0.9), det(d, 0.8)],   // distractor hit
                _ => vec![det(t, 0.9)],
            })
            .collect();
        let acc = association_accuracy(&dets, &truths, 0.5).unwrap();
        assert!((acc - 0.8).abs() < 1e-15);
    }

    #[test]
    fn association_requires_two_frames() {
        let t = bx(0.0, 0.0, 4.0, 4.0);
        let truths = vec![truth_frame(0, &[t], &[])];
        let dets = vec![vec![det(t, 0.9)]];
        assert!(association_accuracy(&dets, &truths, 0.5).is_err());
    }

    #[test]
    fn summarize_micro_averages_counts() {
        let g = bx(0.0, 0.0, 4.0, 4.0);
        let frames = vec![
            FrameEval { detections: vec![det(g, 0.9)], truths: vec![g] },
            FrameEval {
                detections: vec![det(bx(20.0, 20.0, 24.0, 24.0), 0.8)],
                truths: vec![g],
            },
        ];
        let rep = summarize(&frames, 0.5).unwrap();
        assert!((rep.precision - 0.5).abs() < 1e-15);
        assert!((rep.recall - 0.5).abs() < 1e-15);
        assert!((rep.f1 - 0.5).abs() < 1e-15);
        assert!(rep.ap50 > 0.0 && rep.ap50 <= 1.0);
    }

    #[test]
    fn metric_bounds_hold_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let mk = |rng: &mut ChaCha8Rng| {
                let x = rng.gen_range(0.0..20.0);
                let y = rng.gen_range(0.0..20.0);
                bx(x, y, x + rng.gen_range(1.0..5.0), y + rng.gen_range(1.0..5.0))
            };
            let dets: Vec<Detection> = (0..rng.gen_range(0..5))
                .map(|_| det(mk(&mut rng), rng.gen_range(0.0..1.0)))
                .collect();
            let gts: Vec<BBox> = (0..rng.gen_range(0..5)).map(|_| mk(&mut rng)).collect();
            let (p, r, f1) = pr_f1(&match_detections(&dets, &gts, 0.5));
            for v in [p, r, f1] {
                assert!((0.0..=1.0).contains(&v));
            }
            if !gts.is_empty() {
                let frames = vec![FrameEval { detections: dets.clone(), truths: gts.clone() }];
                let ap = ap50(&frames, 0.5).unwrap();
                assert!((0.0..=1.0).contains(&ap));
            }
        }
    }
}
