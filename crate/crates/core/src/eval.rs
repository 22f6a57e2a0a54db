//! Annotation and detection quality metrics.
//!
//! F1 uses optimal (Hungarian) one-to-one matching per frame and class. AP
//! follows the KITTI recipe: a score-ordered greedy sweep, then precision
//! interpolated at 40 equally spaced recall points.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detect_io::DetectionFrameSet;
use crate::geometry::{Box7, IouMetric, ObjectClass};
use crate::mot::hungarian;
use crate::track::Tracklet;

/// IoU threshold for annotation-quality F1.
pub const DEFAULT_F1_IOU: f64 = 0.3;
pub const RECALL_POINTS: usize = 40;

/// Per-class AP thresholds.
pub fn default_ap_threshold(class: ObjectClass) -> f64 {
    match class {
        ObjectClass::Vehicle | ObjectClass::Bus | ObjectClass::Truck => 0.7,
        ObjectClass::Pedestrian | ObjectClass::Motorcycle | ObjectClass::Cyclist => 0.5,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMatch {
    /// `(pred index, gt index, iou)`
    pub tp: Vec<(usize, usize, f64)>,
    pub fp: Vec<usize>,
    pub fn_: Vec<usize>,
}

/// Optimal one-to-one matching of predictions to ground truth.
///
/// Pairs with IoU below `iou_threshold` never match. The matching maximises
/// the number of pairs, then the summed IoU.
pub fn match_frame(preds: &[Box7], gts: &[Box7], iou_threshold: f64, metric: IouMetric) -> FrameMatch {
    let ious: Vec<Vec<f64>> = preds.iter().map(|p| gts.iter().map(|g| metric.iou(p, g)).collect()).collect();
    let cost: Vec<Vec<f64>> = ious
        .iter()
        .map(|row| row.iter().map(|&v| if v >= iou_threshold && v > 0.0 { 1.0 - v } else { f64::INFINITY }).collect())
        .collect();
    let assignment = if gts.is_empty() { vec![None; preds.len()] } else { hungarian(&cost) };

    let mut out = FrameMatch::default();
    let mut gt_used = vec![false; gts.len()];
    for (p, a) in assignment.iter().enumerate() {
        match a {
            Some(g) => {
                gt_used[*g] = true;
                out.tp.push((p, *g, ious[p][*g]));
            }
            None => out.fp.push(p),
        }
    }
    out.fn_ = (0..gts.len()).filter(|&g| !gt_used[g]).collect();
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ap_3d: Option<f64>,
    pub ap_bev: Option<f64>,
}

impl ClassReport {
    fn from_counts(counts: Counts) -> Self {
        Self {
            counts,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            ap_3d: None,
            ap_bev: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub metric: IouMetric,
    pub classes: BTreeMap<ObjectClass, ClassReport>,
    pub overall: ClassReport,
}

impl EvalReport {
    /// Mean F1 over the classes present.
    pub fn mean_f1(&self) -> f64 {
        if self.classes.is_empty() {
            return 0.0;
        }
        self.classes.values().map(|c| c.f1).sum::<f64>() / self.classes.len() as f64
    }

    /// Plain-text table, one row per class.
    pub fn to_table(&self) -> String {
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v));
        let mut s = String::new();
        let _ = writeln!(s, "IoU threshold {:.2} ({})", self.iou_threshold, self.metric.as_str());
        let _ = writeln!(
            s,
            "{:<12} {:>6} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "class", "TP", "FP", "FN", "P(%)", "R(%)", "F1(%)", "3D AP", "BEV AP"
        );
        let rows = self.classes.iter().map(|(c, r)| (c.as_str(), r)).chain([("all", &self.overall)]);
        for (name, r) in rows {
            let _ = writeln!(
                s,
                "{:<12} {:>6} {:>6} {:>6} {:>8.2} {:>8.2} {:>8.2} {:>8} {:>8}",
                name,
                r.counts.tp,
                r.counts.fp,
                r.counts.fn_,
                100.0 * r.precision,
                100.0 * r.recall,
                100.0 * r.f1,
                fmt_opt(r.ap_3d),
                fmt_opt(r.ap_bev)
            );
        }
        s
    }
}

/// Boxes of one class grouped by frame.
fn by_frame(tracks: &[Tracklet], class: ObjectClass) -> BTreeMap<usize, Vec<Box7>> {
    let mut m: BTreeMap<usize, Vec<Box7>> = BTreeMap::new();
    for t in tracks.iter().filter(|t| t.class == class) {
        for e in &t.entries {
            m.entry(e.frame).or_default().push(e.bbox);
        }
    }
    m
}

fn classes_of(a: &[Tracklet], b: &[Tracklet]) -> BTreeSet<ObjectClass> {
    a.iter().chain(b).map(|t| t.class).collect()
}

/// Per-class precision, recall and F1 of predicted against reference tracks.
pub fn f1_report(pred_tracks: &[Tracklet], gt_tracks: &[Tracklet], iou_threshold: f64, metric: IouMetric) -> EvalReport {
    let mut classes = BTreeMap::new();
    let mut overall = Counts::default();
    for class in classes_of(pred_tracks, gt_tracks) {
        let preds = by_frame(pred_tracks, class);
        let gts = by_frame(gt_tracks, class);
        let frames: BTreeSet<usize> = preds.keys().chain(gts.keys()).copied().collect();
        let mut counts = Counts::default();
        for f in frames {
            let p = preds.get(&f).map_or(&[][..], Vec::as_slice);
            let g = gts.get(&f).map_or(&[][..], Vec::as_slice);
            let m = match_frame(p, g, iou_threshold, metric);
            counts.add(Counts { tp: m.tp.len(), fp: m.fp.len(), fn_: m.fn_.len() });
        }
        overall.add(counts);
        classes.insert(class, ClassReport::from_counts(counts));
    }
    EvalReport { iou_threshold, metric, classes, overall: ClassReport::from_counts(overall) }
}

/// A scored detection tagged with its frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameDetection {
    pub frame: usize,
    pub bbox: Box7,
    pub score: f64,
}

/// Interpolated average precision over `RECALL_POINTS` recall levels.
///
/// Returns `None` when there is no ground truth.
pub fn average_precision(dets: &[FrameDetection], gts: &[(usize, Box7)], iou_threshold: f64, metric: IouMetric) -> Option<f64> {
    if gts.is_empty() {
        return None;
    }
    let mut gt_by_frame: BTreeMap<usize, Vec<Box7>> = BTreeMap::new();
    for (f, b) in gts {
        gt_by_frame.entry(*f).or_default().push(*b);
    }
    let mut used: BTreeMap<usize, Vec<bool>> = gt_by_frame.iter().map(|(f, v)| (*f, vec![false; v.len()])).collect();

    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));

    let mut tp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(dets.len());
    for (k, &i) in order.iter().enumerate() {
        let d = &dets[i];
        if let Some(frame_gts) = gt_by_frame.get(&d.frame) {
            let taken = used.get_mut(&d.frame).expect("same keys");
            let best = frame_gts
                .iter()
                .enumerate()
                .filter(|(g, _)| !taken[*g])
                .map(|(g, b)| (g, metric.iou(&d.bbox, b)))
                .filter(|(_, v)| *v >= iou_threshold && *v > 0.0)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((g, _)) = best {
                taken[g] = true;
                tp += 1;
            }
        }
        curve.push((tp as f64 / gts.len() as f64, tp as f64 / (k + 1) as f64));
    }

    // Precision envelope: best precision at any recall at least r.
    let mut envelope = vec![0.0; curve.len()];
    let mut best = 0.0f64;
    for i in (0..curve.len()).rev() {
        best = best.max(curve[i].1);
        envelope[i] = best;
    }
    let mut sum = 0.0;
    for k in 1..=RECALL_POINTS {
        let r = k as f64 / RECALL_POINTS as f64;
        if let Some(i) = curve.iter().position(|(rec, _)| *rec >= r - 1e-12) {
            sum += envelope[i];
        }
    }
    Some(sum / RECALL_POINTS as f64)
}

/// AP for every class with ground truth, at the per-class default thresholds.
pub fn ap_report(dets: &DetectionFrameSet, gt_tracks: &[Tracklet]) -> BTreeMap<ObjectClass, (Option<f64>, Option<f64>)> {
    let mut out = BTreeMap::new();
    let classes: BTreeSet<ObjectClass> =
        gt_tracks.iter().map(|t| t.class).chain(dets.iter_flat().map(|(_, d)| d.class)).collect();
    for class in classes {
        let d: Vec<FrameDetection> = dets
            .iter_flat()
            .filter(|(_, d)| d.class == class)
            .map(|(frame, d)| FrameDetection { frame, bbox: d.bbox, score: d.score })
            .collect();
        let g: Vec<(usize, Box7)> = gt_tracks
            .iter()
            .filter(|t| t.class == class)
            .flat_map(|t| t.entries.iter().map(|e| (e.frame, e.bbox)))
            .collect();
        let thr = default_ap_threshold(class);
        out.insert(class, (average_precision(&d, &g, thr, IouMetric::ThreeD), average_precision(&d, &g, thr, IouMetric::Bev)));
    }
    out
}

/// F1 report with AP columns filled from scored detections.
pub fn full_report(
    pred_tracks: &[Tracklet],
    dets: &DetectionFrameSet,
    gt_tracks: &[Tracklet],
    iou_threshold: f64,
    metric: IouMetric,
) -> EvalReport {
    let mut report = f1_report(pred_tracks, gt_tracks, iou_threshold, metric);
    for (class, (ap3, apb)) in ap_report(dets, gt_tracks) {
        let entry = report.classes.entry(class).or_insert_with(|| ClassReport::from_counts(Counts::default()));
        entry.ap_3d = ap3;
        entry.ap_bev = apb;
    }
    report
}

/// Number of times a reference object's matched prediction id changes.
///
/// Diagnostic only; frames where the object is unmatched are skipped.
pub fn count_id_switches(pred_tracks: &[Tracklet], gt_tracks: &[Tracklet], iou_threshold: f64) -> usize {
    let frames: BTreeSet<usize> = gt_tracks.iter().flat_map(|t| t.entries.iter().map(|e| e.frame)).collect();
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    let mut switches = 0;
    for f in frames {
        for class in classes_of(pred_tracks, gt_tracks) {
            let g: Vec<(u64, Box7)> = gt_tracks
                .iter()
                .filter(|t| t.class == class)
                .filter_map(|t| t.entry_at(f).map(|e| (t.id, e.bbox)))
                .collect();
            let p: Vec<(u64, Box7)> = pred_tracks
                .iter()
                .filter(|t| t.class == class)
                .filter_map(|t| t.entry_at(f).map(|e| (t.id, e.bbox)))
                .collect();
            if g.is_empty() || p.is_empty() {
                continue;
            }
            let pb: Vec<Box7> = p.iter().map(|x| x.1).collect();
            let gb: Vec<Box7> = g.iter().map(|x| x.1).collect();
            for (pi, gi, _) in match_frame(&pb, &gb, iou_threshold, IouMetric::Bev).tp {
                let (gid, pid) = (g[gi].0, p[pi].0);
                if let Some(prev) = last.insert(gid, pid) {
                    if prev != pid {
                        switches += 1;
                    }
                }
            }
        }
    }
    switches
}
