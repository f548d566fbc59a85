//! Training objectives (L1 box, GIoU, classification) combined at a fixed
//! 2:1:1 ratio, plus a coordinate-wise finite-difference tuner for the
//! handful of scalar parameters this library learns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::match_detections;
use crate::types::{BBox, Detection};

/// Weights of the composite loss: `total = 2*bbox + 1*cls + 1*giou`.
pub const BBOX_WEIGHT: f64 = 2.0;
pub const CLS_WEIGHT: f64 = 1.0;
pub const GIOU_WEIGHT: f64 = 1.0;

/// Per-component loss values for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bbox: f64,
    pub cls: f64,
    pub giou: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn zero() -> Self {
        Self { bbox: 0.0, cls: 0.0, giou: 0.0, total: 0.0 }
    }

    /// Combine components under the fixed 2:1:1 weighting.
    pub fn compose(bbox: f64, cls: f64, giou: f64) -> Self {
        Self {
            bbox,
            cls,
            giou,
            total: BBOX_WEIGHT * bbox + CLS_WEIGHT * cls + GIOU_WEIGHT * giou,
        }
    }
}

fn check_positive_area(b: &BBox, what: &str) -> Result<()> {
    if !b.is_valid() || b.width() <= 0.0 || b.height() <= 0.0 {
        return Err(Error::InvalidInput(format!("{what}: degenerate box {b:?}")));
    }
    Ok(())
}

/// Generalized-IoU loss `1 - GIoU`, in `[0, 2)`.
///
/// `GIoU = IoU - |C \ (A∪B)| / |C|` with `C` the tightest box enclosing
/// both inputs; identical boxes score 0.
pub fn giou_loss(pred: &BBox, gt: &BBox) -> Result<f64> {
    check_positive_area(pred, "giou pred")?;
    check_positive_area(gt, "giou gt")?;
    let iw = (pred.x2.min(gt.x2) - pred.x1.max(gt.x1)).max(0.0);
    let ih = (pred.y2.min(gt.y2) - pred.y1.max(gt.y1)).max(0.0);
    let inter = iw * ih;
    let union = pred.area() + gt.area() - inter;
    let cw = pred.x2.max(gt.x2) - pred.x1.min(gt.x1);
    let ch = pred.y2.max(gt.y2) - pred.y1.min(gt.y1);
    let enclosing = cw * ch;
    let giou = inter / union - (enclosing - union) / enclosing;
    Ok(1.0 - giou)
}

/// Analytic gradient of [`giou_loss`] with respect to the four predicted
/// coordinates `(x1, y1, x2, y2)`. Piecewise smooth; not defined exactly at
/// boundary-contact configurations (where box edges coincide).
pub fn giou_loss_grad(pred: &BBox, gt: &BBox) -> Result<[f64; 4]> {
    check_positive_area(pred, "giou pred")?;
    check_positive_area(gt, "giou gt")?;
    let (pw, ph) = (pred.width(), pred.height());
    let iw = (pred.x2.min(gt.x2) - pred.x1.max(gt.x1)).max(0.0);
    let ih = (pred.y2.min(gt.y2) - pred.y1.max(gt.y1)).max(0.0);
    let inter = iw * ih;
    let union = pred.area() + gt.area() - inter;
    let cw = pred.x2.max(gt.x2) - pred.x1.min(gt.x1);
    let ch = pred.y2.max(gt.y2) - pred.y1.min(gt.y1);
    let enclosing = cw * ch;

    let active = iw > 0.0 && ih > 0.0;
    // d(iw)/d(px1) etc.: the pred edge moves the intersection only when it
    // is the binding edge of an active overlap
    let diw = [
        if active && pred.x1 > gt.x1 { -1.0 } else { 0.0 },
        if active && pred.x2 < gt.x2 { 1.0 } else { 0.0 },
    ];
    let dih = [
        if active && pred.y1 > gt.y1 { -1.0 } else { 0.0 },
        if active && pred.y2 < gt.y2 { 1.0 } else { 0.0 },
    ];
    // enclosing-box edges bind when the pred edge sticks out
    let dcw = [
        if pred.x1 < gt.x1 { -1.0 } else { 0.0 },
        if pred.x2 > gt.x2 { 1.0 } else { 0.0 },
    ];
    let dch = [
        if pred.y1 < gt.y1 { -1.0 } else { 0.0 },
        if pred.y2 > gt.y2 { 1.0 } else { 0.0 },
    ];
    // dA_pred per coordinate
    let da = [-ph, -pw, ph, pw];

    let mut grad = [0.0; 4];
    for (k, g) in grad.iter_mut().enumerate() {
        let (d_i, d_c) = match k {
            0 => (diw[0] * ih, dcw[0] * ch),
            1 => (dih[0] * iw, dch[0] * cw),
            2 => (diw[1] * ih, dcw[1] * ch),
            _ => (dih[1] * iw, dch[1] * cw),
        };
        let d_u = da[k] - d_i;
        // loss = 2 - I/U - U/C
        *g = -(d_i * union - inter * d_u) / (union * union)
            - (d_u * enclosing - union * d_c) / (enclosing * enclosing);
    }
    Ok(grad)
}

/// Mean absolute coordinate difference, each axis normalized by the image
/// extent along it.
pub fn bbox_l1(pred: &BBox, gt: &BBox, image_size: (usize, usize)) -> Result<f64> {
    let (h, w) = image_size;
    if h == 0 || w == 0 {
        return Err(Error::InvalidInput("image size must be positive".into()));
    }
    let (wf, hf) = (w as f64, h as f64);
    Ok(((pred.x1 - gt.x1).abs() / wf
        + (pred.y1 - gt.y1).abs() / hf
        + (pred.x2 - gt.x2).abs() / wf
        + (pred.y2 - gt.y2).abs() / hf)
        / 4.0)
}

/// Binary cross-entropy over `(score, is_matched)` pairs, scores clamped
/// into `[1e-7, 1 - 1e-7]`. Empty input scores 0.
pub fn cls_loss(scored: &[(f64, bool)]) -> f64 {
    if scored.is_empty() {
        return 0.0;
    }
    let sum: f64 = scored
        .iter()
        .map(|&(s, matched)| {
            let s = s.clamp(1e-7, 1.0 - 1e-7);
            if matched {
                -s.ln()
            } else {
                -(1.0 - s).ln()
            }
        })
        .sum();
    sum / scored.len() as f64
}

/// Composite loss over one frame: predictions are greedily matched to GT at
/// IoU 0.5; box terms average over matched pairs, the classification term
/// covers every prediction (matched -> positive label).
pub fn total_loss(
    preds: &[Detection],
    gts: &[BBox],
    image_size: (usize, usize),
) -> Result<LossBreakdown> {
    if preds.is_empty() && gts.is_empty() {
        return Ok(LossBreakdown::zero());
    }
    let m = match_detections(preds, gts, 0.5);
    let mut bbox_sum = 0.0;
    let mut giou_sum = 0.0;
    let mut pairs = 0usize;
    let mut scored = Vec::with_capacity(preds.len());
    for (pos, claimed) in m.matched.iter().enumerate() {
        let det = &preds[m.order[pos]];
        match claimed {
            Some(gi) => {
                bbox_sum += bbox_l1(&det.bbox, &gts[*gi], image_size)?;
                giou_sum += giou_loss(&det.bbox, &gts[*gi])?;
                pairs += 1;
                scored.push((det.score, true));
            }
            None => scored.push((det.score, false)),
        }
    }
    let bbox = if pairs > 0 { bbox_sum / pairs as f64 } else { 0.0 };
    let giou = if pairs > 0 { giou_sum / pairs as f64 } else { 0.0 };
    Ok(LossBreakdown::compose(bbox, cls_loss(&scored), giou))
}

/// One row of the tuning trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub bbox: f64,
    pub cls: f64,
    pub giou: f64,
    pub total: f64,
}

/// Outcome of a tuning run.
#[derive(Debug, Clone)]
pub struct TuneResult {
    /// Parameter vector with the lowest observed full-evaluation loss.
    pub best: Vec<f64>,
    pub best_loss: f64,
    /// Loss at the initial point and after every step, in order.
    pub trace: Vec<TraceRow>,
    /// Set when a probe produced a non-finite loss; the trace up to the
    /// abort is preserved.
    pub aborted: Option<String>,
}

/// Coordinate-wise central-finite-difference gradient descent over a small
/// scalar parameter vector.
///
/// Probes (`2 * len` per step) are evaluated in parallel; updates apply to
/// all coordinates at once, with each per-coordinate move clipped to
/// `step_size` and the iterate projected onto `bounds` when given. The
/// returned parameters are the best full evaluation seen, which makes the
/// best-so-far loss non-increasing even when individual steps overshoot.
pub fn tune_scalars<F>(
    init: &[f64],
    bounds: Option<&[(f64, f64)]>,
    steps: usize,
    fd_h: f64,
    step_size: f64,
    eval_loss: F,
) -> Result<TuneResult>
where
    F: Fn(&[f64]) -> Result<LossBreakdown> + Sync,
{
    if init.is_empty() {
        return Err(Error::InvalidInput("no parameters to tune".into()));
    }
    if steps == 0 {
        return Err(Error::InvalidInput("tuning needs at least one step".into()));
    }
    if !(fd_h > 0.0) {
        return Err(Error::InvalidInput("finite-difference h must be > 0".into()));
    }
    if let Some(b) = bounds {
        if b.len() != init.len() {
            return Err(Error::Shape(format!(
                "{} bounds for {} parameters",
                b.len(),
                init.len()
            )));
        }
        if b.iter().any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::InvalidInput("tuning bounds must satisfy lo <= hi".into()));
        }
        if init.iter().zip(b).any(|(v, (lo, hi))| v < lo || v > hi) {
            return Err(Error::InvalidInput("initial parameters outside the bounds".into()));
        }
    }
    let project = |params: &mut [f64]| {
        if let Some(b) = bounds {
            for (v, (lo, hi)) in params.iter_mut().zip(b) {
                *v = v.clamp(*lo, *hi);
            }
        }
    };
    let mut current = init.to_vec();
    let first = eval_loss(&current)?;
    let mut trace = vec![TraceRow {
        step: 0,
        bbox: first.bbox,
        cls: first.cls,
        giou: first.giou,
        total: first.total,
    }];
    if !first.total.is_finite() {
        return Ok(TuneResult {
            best: current,
            best_loss: first.total,
            trace,
            aborted: Some("non-finite loss at the initial point".into()),
        });
    }
    let mut best = current.clone();
    let mut best_loss = first.total;

    for step in 1..=steps {
        let probes: Vec<Result<(f64, f64)>> = (0..current.len())
            .into_par_iter()
            .map(|i| {
                let mut plus = current.clone();
                plus[i] += fd_h;
                let mut minus = current.clone();
                minus[i] -= fd_h;
                Ok((eval_loss(&plus)?.total, eval_loss(&minus)?.total))
            })
            .collect();
        let mut grad = Vec::with_capacity(current.len());
        for p in probes {
            let (hi, lo) = p?;
            if !hi.is_finite() || !lo.is_finite() {
                return Ok(TuneResult {
                    best,
                    best_loss,
                    trace,
                    aborted: Some(format!("non-finite loss in a step-{step} probe")),
                });
            }
            grad.push((hi - lo) / (2.0 * fd_h));
        }
        for (c, g) in current.iter_mut().zip(grad.iter()) {
            // trust-region move: the loss has detection-count steps whose FD
            // slopes explode; never move a coordinate more than step_size
            *c -= (step_size * g).clamp(-step_size, step_size);
        }
        project(&mut current);
        let here = eval_loss(&current)?;
        trace.push(TraceRow {
            step,
            bbox: here.bbox,
            cls: here.cls,
            giou: here.giou,
            total: here.total,
        });
        if !here.total.is_finite() {
            return Ok(TuneResult {
                best,
                best_loss,
                trace,
                aborted: Some(format!("non-finite loss after step {step}")),
            });
        }
        if here.total < best_loss {
            best_loss = here.total;
            best = current.clone();
        }
    }
    Ok(TuneResult { best, best_loss, trace, aborted: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2)
    }

    #[test]
    fn giou_identical_boxes() {
        let b = bx(3.0, 4.0, 10.0, 12.0);
        assert!(giou_loss(&b, &b).unwrap().abs() < 1e-15);
    }

    #[test]
    fn giou_touching_boxes_is_one() {
        // IoU 0, union 2, enclosing 2 -> GIoU 0 -> loss 1
        let v = giou_loss(&bx(0.0, 0.0, 1.0, 1.0), &bx(1.0, 0.0, 2.0, 1.0)).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn giou_far_disjoint_case() {
        // enclosing 100, union 2 -> GIoU = -(98/100) -> loss 1.98
        let v = giou_loss(&bx(0.0, 0.0, 1.0, 1.0), &bx(9.0, 9.0, 10.0, 10.0)).unwrap();
        assert!((v - 1.98).abs() < 1e-12);
    }

    #[test]
    fn giou_range_and_iou_dominance_on_random_boxes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                let x = rng.gen_range(0.0..20.0);
                let y = rng.gen_range(0.0..20.0);
                bx(x, y, x + rng.gen_range(0.5..6.0), y + rng.gen_range(0.5..6.0))
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let loss = giou_loss(&a, &b).unwrap();
            assert!((0.0..2.0).contains(&loss));
            let giou = 1.0 - loss;
            let iou = crate::eval::iou(&a, &b).unwrap();
            assert!(giou <= iou + 1e-12, "GIoU can never exceed IoU");
        }
    }

    #[test]
    fn giou_rejects_degenerate_boxes() {
        let ok = bx(0.0, 0.0, 2.0, 2.0);
        assert!(giou_loss(&bx(1.0, 1.0, 1.0, 3.0), &ok).is_err());
        assert!(giou_loss(&ok, &bx(0.0, 5.0, 3.0, 5.0)).is_err());
    }

    #[test]
    fn giou_gradient_matches_central_differences() {
        // overlapping, disjoint, and contained configurations, all away
        // from edge-contact kinks
        let gt = bx(2.0, 2.0, 6.0, 6.0);
        let preds = [
            bx(3.0, 1.0, 7.0, 5.0),   // partial overlap
            bx(8.5, 7.5, 11.0, 10.0), // disjoint
            bx(2.7, 3.1, 5.2, 5.4),   // contained
            bx(0.5, 0.6, 7.3, 7.8),   // containing
        ];
        let h = 1e-6;
        for pred in preds {
            let grad = giou_loss_grad(&pred, &gt).unwrap();
            let coords = [pred.x1, pred.y1, pred.x2, pred.y2];
            for k in 0..4 {
                let mut up = coords;
                up[k] += h;
                let mut dn = coords;
                dn[k] -= h;
                let lp = giou_loss(&bx(up[0], up[1], up[2], up[3]), &gt).unwrap();
                let lm = giou_loss(&bx(dn[0], dn[1], dn[2], dn[3]), &gt).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let scale = fd.abs().max(grad[k].abs()).max(1e-8);
                assert!(
                    (fd - grad[k]).abs() / scale <= 1e-4,
                    "coord {k} of {pred:?}: analytic {} vs fd {fd}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn bbox_l1_cases() {
        let a = bx(10.0, 10.0, 20.0, 20.0);
        assert_eq!(bbox_l1(&a, &a, (512, 512)).unwrap(), 0.0);
        let b = bx(11.0, 11.0, 21.0, 21.0);
        let v = bbox_l1(&a, &b, (512, 512)).unwrap();
        assert!((v - 1.0 / 512.0).abs() < 1e-15);
        assert_eq!(
            bbox_l1(&a, &b, (512, 512)).unwrap(),
            bbox_l1(&b, &a, (512, 512)).unwrap()
        );
    }

    #[test]
    fn cls_loss_cases() {
        assert_eq!(cls_loss(&[]), 0.0);
        let near_perfect = cls_loss(&[(1.0 - 1e-7, true), (1e-7, false)]);
        assert!(near_perfect < 1e-6);
        let half = cls_loss(&[(0.5, true), (0.5, false), (0.5, true)]);
        assert!((half - std::f64::consts::LN_2).abs() < 1e-12);
        // clamping keeps exact 0/1 finite
        assert!(cls_loss(&[(0.0, true), (1.0, false)]).is_finite());
    }

    #[test]
    fn composite_ratio_is_two_one_one() {
        let b = LossBreakdown::compose(1.0, 1.0, 1.0);
        assert_eq!(b.total, 4.0);
    }

    #[test]
    fn total_loss_empty_and_perfect() {
        assert_eq!(total_loss(&[], &[], (64, 64)).unwrap(), LossBreakdown::zero());

        let g = bx(10.0, 10.0, 20.0, 20.0);
        let perfect = vec![Detection { bbox: g, score: 1.0 - 1e-7 }];
        let l = total_loss(&perfect, &[g], (64, 64)).unwrap();
        assert!(l.total < 1e-6);
    }

    #[test]
    fn total_loss_composes_component_values() {
        let g = bx(10.0, 10.0, 20.0, 20.0);
        let p = bx(11.0, 11.0, 21.0, 21.0);
        let det = Detection { bbox: p, score: 0.8 };
        let l = total_loss(&[det], &[g], (64, 64)).unwrap();
        let expect_bbox = bbox_l1(&p, &g, (64, 64)).unwrap();
        let expect_giou = giou_loss(&p, &g).unwrap();
        let expect_cls = cls_loss(&[(0.8, true)]);
        assert!((l.bbox - expect_bbox).abs() < 1e-15);
        assert!((l.giou - expect_giou).abs() < 1e-15);
        assert!((l.cls - expect_cls).abs() < 1e-15);
        assert!((l.total - (2.0 * expect_bbox + expect_cls + expect_giou)).abs() < 1e-15);
    }

    #[test]
    fn total_loss_missed_gt_has_no_box_terms() {
        let g = bx(10.0, 10.0, 20.0, 20.0);
        let l = total_loss(&[], &[g], (64, 64)).unwrap();
        assert_eq!(l.bbox, 0.0);
        assert_eq!(l.giou, 0.0);
        assert_eq!(l.cls, 0.0);
    }

    #[test]
    fn tune_zero_step_size_keeps_params() {
        let quad = |p: &[f64]| {
            let v = (p[0] - 3.0) * (p[0] - 3.0);
            Ok(LossBreakdown { bbox: 0.0, cls: v, giou: 0.0, total: v })
        };
        let r = tune_scalars(&[1.0], None, 1, 1e-4, 0.0, quad).unwrap();
        assert_eq!(r.best, vec![1.0]);
        assert!(r.aborted.is_none());
        assert_eq!(r.trace.len(), 2);
    }

    #[test]
    fn tune_converges_on_a_convex_slice() {
        // grid-search optimum of (x - 1.4)^2 is 1.4; descent from 0 must
        // land within one step size of it
        let quad = |p: &[f64]| {
            let v = (p[0] - 1.4) * (p[0] - 1.4);
            Ok(LossBreakdown { bbox: 0.0, cls: 0.0, giou: v, total: v })
        };
        let grid_best = (0..=280)
            .map(|i| i as f64 * 0.01)
            .min_by(|a, b| {
                let fa = (a - 1.4) * (a - 1.4);
                let fb = (b - 1.4) * (b - 1.4);
                fa.total_cmp(&fb)
            })
            .unwrap();
        let r = tune_scalars(&[0.0], None, 100, 1e-4, 0.05, quad).unwrap();
        assert!((r.best[0] - grid_best).abs() <= 0.05);
        assert!(r.best_loss < 1e-3);
    }

    #[test]
    fn tune_best_so_far_is_non_increasing() {
        // oscillation-prone objective: step size overshoots, best must not
        let bump = |p: &[f64]| {
            let v = p[0] * p[0] * 30.0;
            Ok(LossBreakdown { bbox: 0.0, cls: 0.0, giou: v, total: v })
        };
        let r = tune_scalars(&[1.0], None, 40, 1e-4, 0.05, bump).unwrap();
        let mut best = f64::INFINITY;
        let mut history = Vec::new();
        for row in &r.trace {
            best = best.min(row.total);
            history.push(best);
        }
        for w in history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!((r.best_loss - history.last().unwrap()).abs() < 1e-15);
    }

    #[test]
    fn tune_aborts_on_non_finite_probe() {
        let fragile = |p: &[f64]| {
            let v = if p[0] > 0.1 { f64::NAN } else { 1.0 - p[0] };
            Ok(LossBreakdown { bbox: 0.0, cls: 0.0, giou: v, total: v })
        };
        let r = tune_scalars(&[0.05], None, 10, 1e-4, 10.0, fragile).unwrap();
        assert!(r.aborted.is_some());
        assert!(!r.trace.is_empty());
    }

    #[test]
    fn tune_rejects_bad_arguments() {
        let f = |_p: &[f64]| Ok(LossBreakdown::zero());
        assert!(tune_scalars(&[], None, 5, 1e-4, 0.05, f).is_err());
        assert!(tune_scalars(&[1.0], None, 0, 1e-4, 0.05, f).is_err());
        assert!(tune_scalars(&[1.0], None, 5, 0.0, 0.05, f).is_err());
    }
}
