//! Benchmark harness: ground-truth ingestion, original-vs-enhanced
//! comparison, per-image flags, micro and macro metrics, and ablations.

mod bench;
mod voc;

pub use bench::{
    ablate, render_ablations, run_benchmark, AblationRun, BenchmarkConfig, BenchmarkReport, ImageResult, Routing,
};
pub use voc::{
    corpus_from_synthetic, load_corpus, parse_manifest, parse_voc, render_manifest, write_corpus,
    write_voc, ClassMap, Corpus, CorpusImage, GtImage, ManifestEntry, VocAnnotation, MANIFEST_NAME,
};

use crate::cape::CapeError;
use crate::detect::DetectError;
use crate::geometry::{iou, BBox, Detection};
use crate::imaging::ImagingError;
use crate::wem::Condition;
use serde::{Deserialize, Serialize};
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use thiserror::Error;

/// IoU needed for a detection to count as a true positive.
pub const MATCH_IOU: f64 = 0.5;
/// Half-width of the unchanged band around zero ΔF1.
pub const FLAG_DEADBAND: f64 = 0.01;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Format(String),
    #[error("{0}: no condition label for ground-truth routing")]
    MissingLabel(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Enhance(#[from] CapeError),
    #[error(transparent)]
    Detect(#[from] DetectError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1_score(self.precision(), self.recall())
    }
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), |a, b| a + b)
    }
}

/// Harmonic mean with 0/0 taken as 0.
pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Greedy matching in descending confidence. Each detection at or above
/// `conf_thresh` claims the highest-IoU unmatched same-class box with IoU at
/// least `iou_thresh`; ties go to the earlier box.
pub fn match_image(dets: &[Detection], gt: &[(u32, BBox)], iou_thresh: f64, conf_thresh: f64) -> Counts {
    let mut order: Vec<&Detection> = dets.iter().filter(|d| d.conf >= conf_thresh).collect();
    order.sort_by(|a, b| b.conf.total_cmp(&a.conf));
    let mut taken = vec![false; gt.len()];
    let mut c = Counts::default();
    for d in order {
        let best = gt
            .iter()
            .enumerate()
            .filter(|(j, (cls, _))| !taken[*j] && *cls == d.class_id)
            .map(|(j, (_, b))| (j, iou(&d.bbox, b)))
            .filter(|(_, o)| *o >= iou_thresh)
            .fold(None::<(usize, f64)>, |acc, cand| match acc {
                Some(a) if a.1 >= cand.1 => Some(a),
                _ => Some(cand),
            });
        match best {
            Some((j, _)) => {
                taken[j] = true;
                c.tp += 1;
            }
            None => c.fp += 1,
        }
    }
    c.fn_ = taken.iter().filter(|t| !**t).count();
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Flag {
    /// Unchanged.
    F0,
    /// Improved.
    F1,
    /// Degraded.
    F2,
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Deadband classification; the boundary belongs to the flagged side.
pub fn flag(delta_f1: f64) -> Flag {
    if delta_f1.abs() < FLAG_DEADBAND {
        Flag::F0
    } else if delta_f1 > 0.0 {
        Flag::F1
    } else {
        Flag::F2
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagSummary {
    pub f0: usize,
    pub f1: usize,
    pub f2: usize,
}

impl FlagSummary {
    pub fn add(&mut self, f: Flag) {
        match f {
            Flag::F0 => self.f0 += 1,
            Flag::F1 => self.f1 += 1,
            Flag::F2 => self.f2 += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.f0 + self.f1 + self.f2
    }
}

impl std::ops::Add for FlagSummary {
    type Output = FlagSummary;

    fn add(self, o: FlagSummary) -> FlagSummary {
        FlagSummary {
            f0: self.f0 + o.f0,
            f1: self.f1 + o.f1,
            f2: self.f2 + o.f2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Detector on the original frame.
    C1,
    /// Detector on the enhanced frame.
    C2,
}

/// One JSONL line of per-image results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image: String,
    pub variant: Variant,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
    pub flag: Flag,
}

impl EvalRecord {
    pub fn new(image: &str, variant: Variant, c: Counts, flag: Flag) -> Self {
        Self {
            image: image.to_string(),
            variant,
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            p: c.precision(),
            r: c.recall(),
            f1: c.f1(),
            flag,
        }
    }
}

/// Image-count-weighted mean of per-group F1.
pub fn weighted_macro(rows: &[(usize, f64)]) -> f64 {
    let n: usize = rows.iter().map(|r| r.0).sum();
    if n == 0 {
        return 0.0;
    }
    rows.iter().map(|&(k, f)| k as f64 * f).sum::<f64>() / n as f64
}

pub fn unweighted_macro(f1s: &[f64]) -> f64 {
    if f1s.is_empty() {
        0.0
    } else {
        f1s.iter().sum::<f64>() / f1s.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: Condition,
    pub n: usize,
    pub c1: Counts,
    pub c2: Counts,
    pub flags: FlagSummary,
}

impl ConditionRow {
    pub fn delta_f1(&self) -> f64 {
        self.c2.f1() - self.c1.f1()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<ConditionRow>,
    pub micro_c1: Counts,
    pub micro_c2: Counts,
    pub flags: FlagSummary,
}

impl Summary {
    pub fn images(&self) -> usize {
        self.rows.iter().map(|r| r.n).sum()
    }

    /// Weighted macro F1 for (C1, C2).
    pub fn macro_weighted(&self) -> (f64, f64) {
        let c1: Vec<_> = self.rows.iter().map(|r| (r.n, r.c1.f1())).collect();
        let c2: Vec<_> = self.rows.iter().map(|r| (r.n, r.c2.f1())).collect();
        (weighted_macro(&c1), weighted_macro(&c2))
    }

    pub fn macro_unweighted(&self) -> (f64, f64) {
        let c1: Vec<_> = self.rows.iter().map(|r| r.c1.f1()).collect();
        let c2: Vec<_> = self.rows.iter().map(|r| r.c2.f1()).collect();
        (unweighted_macro(&c1), unweighted_macro(&c2))
    }

    pub fn delta_f1(&self) -> f64 {
        let (a, b) = self.macro_weighted();
        b - a
    }

    pub fn delta_recall(&self) -> f64 {
        self.micro_c2.recall() - self.micro_c1.recall()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<8} {:>6} {:>8} {:>8} {:>8} {:>6} {:>6} {:>6}",
            "cond", "N", "C1 F1", "C2 F1", "dF1", "F0", "F1", "F2"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<8} {:>6} {:>8.3} {:>8.3} {:>+8.3} {:>6} {:>6} {:>6}",
                r.condition.as_str(),
                r.n,
                r.c1.f1(),
                r.c2.f1(),
                r.delta_f1(),
                r.flags.f0,
                r.flags.f1,
                r.flags.f2
            );
        }
        let (m1, m2) = self.macro_weighted();
        let _ = writeln!(
            s,
            "{:<8} {:>6} {:>8.3} {:>8.3} {:>+8.3} {:>6} {:>6} {:>6}",
            "macro",
            self.images(),
            m1,
            m2,
            m2 - m1,
            self.flags.f0,
            self.flags.f1,
            self.flags.f2
        );
        let (u1, u2) = self.macro_unweighted();
        let _ = writeln!(
            s,
            "{:<8} {:>6} {:>8.3} {:>8.3} {:>+8.3}   (unweighted mean over conditions)",
            "macro-u", "", u1, u2, u2 - u1
        );
        let (a, b) = (self.micro_c1, self.micro_c2);
        let _ = writeln!(
            s,
            "micro    C1 P/R/F1 {:.4}/{:.4}/{:.4}  C2 P/R/F1 {:.4}/{:.4}/{:.4}",
            a.precision(),
            a.recall(),
            a.f1(),
            b.precision(),
            b.recall(),
            b.f1()
        );
        let _ = writeln!(
            s,
            "recall   {:+.4} ({:+} TP, {:+} FN, {:+} FP)",
            self.delta_recall(),
            b.tp as i64 - a.tp as i64,
            b.fn_ as i64 - a.fn_ as i64,
            b.fp as i64 - a.fp as i64
        );
        let _ = writeln!(s, "note: {RECALL_CAVEAT}");
        s
    }
}

pub const RECALL_CAVEAT: &str = "recall change is the headline metric. Ground truth drawn on \
degraded frames cannot credit objects that only become visible after enhancement, so those \
count as false positives and the reported F1 change is a lower bound on the true change.";

/// Pools per-image results into per-condition rows (in condition order)
/// and corpus-wide micro counts.
pub fn aggregate(results: &[ImageResult]) -> Summary {
    let mut rows: Vec<ConditionRow> = Vec::new();
    for r in results {
        let row = match rows.iter_mut().find(|row| row.condition == r.condition) {
            Some(row) => row,
            None => {
                rows.push(ConditionRow {
                    condition: r.condition,
                    n: 0,
                    c1: Counts::default(),
                    c2: Counts::default(),
                    flags: FlagSummary::default(),
                });
                rows.last_mut().expect("just pushed")
            }
        };
        row.n += 1;
        row.c1 = row.c1 + r.c1;
        row.c2 = row.c2 + r.c2;
        row.flags.add(r.flag());
    }
    rows.sort_by_key(|r| r.condition.code());
    Summary {
        micro_c1: rows.iter().map(|r| r.c1).sum(),
        micro_c2: rows.iter().map(|r| r.c2).sum(),
        flags: rows.iter().fold(FlagSummary::default(), |a, r| a + r.flags),
        rows,
    }
}

pub fn render_jsonl(results: &[ImageResult]) -> String {
    let mut s = String::new();
    for r in results {
        for rec in r.records() {
            s.push_str(&serde_json::to_string(&rec).expect("records serialize"));
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Stream;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn det(bb: BBox, conf: f64) -> Detection {
        Detection::new(bb, 0, conf, Stream::Quality)
    }

    #[test]
    fn exact_detections_score_one() {
        let gt = vec![(0, b(0.0, 0.0, 10.0, 10.0)), (0, b(20.0, 0.0, 30.0, 10.0))];
        let dets: Vec<_> = gt.iter().map(|(_, bb)| det(*bb, 1.0)).collect();
        let c = match_image(&dets, &gt, MATCH_IOU, 0.25);
        assert_eq!((c.precision(), c.recall(), c.f1()), (1.0, 1.0, 1.0));
    }

    #[test]
    fn no_detections_zero_recall() {
        let gt = vec![(0, b(0.0, 0.0, 10.0, 10.0)); 3];
        let c = match_image(&[], &gt, MATCH_IOU, 0.25);
        assert_eq!(c, Counts { tp: 0, fp: 0, fn_: 3 });
        assert_eq!(c.recall(), 0.0);
        assert_eq!(c.f1(), 0.0);
    }

    #[test]
    fn low_confidence_is_dropped_and_class_must_match() {
        let gt = vec![(0, b(0.0, 0.0, 10.0, 10.0))];
        let weak = det(b(0.0, 0.0, 10.0, 10.0), 0.2);
        assert_eq!(match_image(&[weak], &gt, MATCH_IOU, 0.25), Counts { tp: 0, fp: 0, fn_: 1 });
        let other = Detection::new(b(0.0, 0.0, 10.0, 10.0), 3, 0.9, Stream::Quality);
        assert_eq!(match_image(&[other], &gt, MATCH_IOU, 0.25), Counts { tp: 0, fp: 1, fn_: 1 });
    }

    #[test]
    fn pooled_fixture() {
        let c = Counts { tp: 3, fp: 1, fn_: 1 };
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.75, 0.75, 0.75));
    }

    #[test]
    fn flags_and_boundaries() {
        assert_eq!(flag(0.005), Flag::F0);
        assert_eq!(flag(0.153), Flag::F1);
        assert_eq!(flag(-0.01), Flag::F2);
        assert_eq!(flag(0.01), Flag::F1);
        assert_eq!(flag(-0.0099), Flag::F0);
    }

    #[test]
    fn jsonl_keys() {
        let rec = EvalRecord::new("a.png", Variant::C2, Counts { tp: 1, fp: 1, fn_: 0 }, Flag::F1);
        let v: serde_json::Value = serde_json::to_value(&rec).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["f1", "flag", "fn", "fp", "image", "p", "r", "tp", "variant"]);
        assert_eq!(v["variant"], "C2");
        assert_eq!(v["flag"], "F1");
    }

    #[test]
    fn single_image_micro_equals_image() {
        let r = ImageResult {
            image: "x".into(),
            condition: Condition::Fog,
            c1: Counts { tp: 1, fp: 2, fn_: 3 },
            c2: Counts { tp: 2, fp: 2, fn_: 2 },
        };
        let s = aggregate(std::slice::from_ref(&r));
        assert_eq!(s.micro_c1, r.c1);
        assert_eq!(s.micro_c2, r.c2);
        assert_eq!(s.macro_weighted(), (r.c1.f1(), r.c2.f1()));
        assert_eq!(s.flags.total(), 1);
    }
}
