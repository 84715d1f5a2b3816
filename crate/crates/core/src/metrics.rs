//! LSTQ evaluation and box-level identity bookkeeping.
//!
//! LSTQ is the geometric mean of a classification score (class IoU over
//! all points of all frames) and an association score over 4D instance
//! tubes. Small ground-truth instances can be excluded from the
//! association score only, via `min_points`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::association::solve_assignment;
use crate::classes::{self, UNLABELED};
use crate::geometry::{iou3d, Box3D, SemanticClass};
use crate::tracker::TrackedBox;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("frame {frame}: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        frame: usize,
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("min_points must be at least 1")]
    InvalidMinPoints,
}

/// How the `min_points` rule measures instance size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum SizeFilter {
    /// Drop the instance in frames where it has fewer points.
    #[default]
    PerFrame,
    /// Drop the whole tube if its total size is smaller.
    PerTube,
}

/// Labels of one frame: ground truth and prediction, point-aligned.
#[derive(Debug, Clone, Copy)]
pub struct EvalFrame<'a> {
    pub gt_semantic: &'a [SemanticClass],
    pub gt_instance: &'a [u32],
    pub pred_semantic: &'a [SemanticClass],
    pub pred_instance: &'a [u32],
}

impl EvalFrame<'_> {
    fn check(&self, frame: usize) -> Result<usize, EvalError> {
        let expected = self.gt_semantic.len();
        for (what, got) in [
            ("gt instance", self.gt_instance.len()),
            ("pred semantic", self.pred_semantic.len()),
            ("pred instance", self.pred_instance.len()),
        ] {
            if got != expected {
                return Err(EvalError::LengthMismatch {
                    frame,
                    what,
                    got,
                    expected,
                });
            }
        }
        Ok(expected)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct ClassCounts {
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl ClassCounts {
    fn iou(&self) -> f64 {
        let den = self.tp + self.fp + self.fn_;
        if den == 0 {
            0.0
        } else {
            self.tp as f64 / den as f64
        }
    }
}

type TubeId = (u32, u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct CellKey {
    seq: u32,
    frame: u32,
    gt: Option<u32>,
    pred: Option<u32>,
}

/// Sufficient statistics for LSTQ over any number of sequences.
///
/// Accumulators of different sequences merge with [`LstqAccumulator::merge`];
/// sequence indices keep instance ids of different sequences apart.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LstqAccumulator {
    classes: BTreeMap<SemanticClass, ClassCounts>,
    // point counts per (frame, gt tube, pred tube) combination
    cells: BTreeMap<CellKey, u64>,
    gt_votes: BTreeMap<TubeId, BTreeMap<SemanticClass, u64>>,
    frames: usize,
}

impl LstqAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Add one frame of sequence `seq`. Points with ground-truth class 0
    /// are ignored entirely. Ground-truth tubes are Things points with a
    /// nonzero instance id; prediction tubes are all points with a
    /// nonzero predicted instance id.
    pub fn add_frame(&mut self, seq: u32, frame: u32, labels: EvalFrame<'_>) -> Result<(), EvalError> {
        let n = labels.check(frame as usize)?;
        for i in 0..n {
            let g = labels.gt_semantic[i];
            if g == UNLABELED {
                continue;
            }
            let p = labels.pred_semantic[i];
            if g == p {
                self.classes.entry(g).or_default().tp += 1;
            } else {
                self.classes.entry(g).or_default().fn_ += 1;
                if p != UNLABELED {
                    self.classes.entry(p).or_default().fp += 1;
                }
            }
            let gt = (classes::is_thing(g) && labels.gt_instance[i] != 0).then_some(labels.gt_instance[i]);
            let pred = (labels.pred_instance[i] != 0).then_some(labels.pred_instance[i]);
            if gt.is_none() && pred.is_none() {
                continue;
            }
            if let Some(id) = gt {
                *self.gt_votes.entry((seq, id)).or_default().entry(g).or_default() += 1;
            }
            *self.cells.entry(CellKey { seq, frame, gt, pred }).or_default() += 1;
        }
        self.frames += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: LstqAccumulator) {
        for (c, k) in other.classes {
            let e = self.classes.entry(c).or_default();
            e.tp += k.tp;
            e.fp += k.fp;
            e.fn_ += k.fn_;
        }
        for (k, v) in other.cells {
            *self.cells.entry(k).or_default() += v;
        }
        for (t, votes) in other.gt_votes {
            let e = self.gt_votes.entry(t).or_default();
            for (c, v) in votes {
                *e.entry(c).or_default() += v;
            }
        }
        self.frames += other.frames;
    }

    /// Per-class IoU for every class seen in ground truth or prediction.
    pub fn class_iou(&self) -> BTreeMap<SemanticClass, f64> {
        self.classes
            .iter()
            .filter(|(_, k)| k.tp + k.fp + k.fn_ > 0)
            .map(|(&c, k)| (c, k.iou()))
            .collect()
    }

    /// Mean class IoU.
    pub fn s_cls(&self) -> f64 {
        mean(self.class_iou().values().copied())
    }

    /// Association score of every ground-truth tube surviving the size
    /// filter, with the tube's majority class.
    pub fn tube_scores(&self, min_points: usize, filter: SizeFilter) -> Result<Vec<(SemanticClass, f64)>, EvalError> {
        Ok(self.tubes(min_points, filter)?.0)
    }

    // tube scores plus whether any predicted tube survives the filter
    fn tubes(&self, min_points: usize, filter: SizeFilter) -> Result<(Vec<(SemanticClass, f64)>, bool), EvalError> {
        if min_points == 0 {
            return Err(EvalError::InvalidMinPoints);
        }
        let min = min_points as u64;
        let mut frame_size: BTreeMap<(u32, u32, u32), u64> = BTreeMap::new();
        let mut tube_total: BTreeMap<TubeId, u64> = BTreeMap::new();
        for (k, &c) in &self.cells {
            if let Some(g) = k.gt {
                *frame_size.entry((k.seq, k.frame, g)).or_default() += c;
                *tube_total.entry((k.seq, g)).or_default() += c;
            }
        }
        let kept = |k: &CellKey| match k.gt {
            None => true,
            Some(g) => match filter {
                SizeFilter::PerFrame => frame_size[&(k.seq, k.frame, g)] >= min,
                SizeFilter::PerTube => tube_total[&(k.seq, g)] >= min,
            },
        };

        let mut gt_size: BTreeMap<TubeId, u64> = BTreeMap::new();
        let mut pred_size: BTreeMap<TubeId, u64> = BTreeMap::new();
        let mut inter: BTreeMap<(TubeId, TubeId), u64> = BTreeMap::new();
        for (k, &c) in self.cells.iter().filter(|(k, _)| kept(k)) {
            if let Some(g) = k.gt {
                *gt_size.entry((k.seq, g)).or_default() += c;
            }
            if let Some(p) = k.pred {
                *pred_size.entry((k.seq, p)).or_default() += c;
            }
            if let (Some(g), Some(p)) = (k.gt, k.pred) {
                *inter.entry(((k.seq, g), (k.seq, p))).or_default() += c;
            }
        }

        let mut per_tube: BTreeMap<TubeId, f64> = gt_size.keys().map(|&t| (t, 0.0)).collect();
        for (&(t, s), &tpa) in &inter {
            let (tpa, gt, pr) = (tpa as f64, gt_size[&t] as f64, pred_size[&s] as f64);
            *per_tube.get_mut(&t).unwrap() += tpa * tpa / (gt + pr - tpa);
        }
        let scores = per_tube
            .into_iter()
            .map(|(t, score)| (majority(&self.gt_votes[&t]), score / gt_size[&t] as f64))
            .collect();
        Ok((scores, !pred_size.is_empty()))
    }

    /// Association score. Without any ground-truth tube the score is 1
    /// when no tube was predicted either and 0 otherwise.
    pub fn s_assoc(&self, min_points: usize, filter: SizeFilter) -> Result<f64, EvalError> {
        let (tubes, any_pred) = self.tubes(min_points, filter)?;
        if tubes.is_empty() {
            return Ok(if any_pred { 0.0 } else { 1.0 });
        }
        Ok(mean(tubes.iter().map(|t| t.1)))
    }

    pub fn report(&self, min_points: usize, filter: SizeFilter) -> Result<LstqReport, EvalError> {
        let class_iou = self.class_iou();
        let tubes = self.tube_scores(min_points, filter)?;
        let s_cls = self.s_cls();
        let s_assoc = self.s_assoc(min_points, filter)?;

        let mut rows: Vec<ScoreRow> = class_iou
            .iter()
            .map(|(&c, &iou)| {
                let assoc: Vec<f64> = tubes.iter().filter(|t| t.0 == c).map(|t| t.1).collect();
                let assoc = classes::is_thing(c).then(|| if assoc.is_empty() { 0.0 } else { mean(assoc.into_iter()) });
                ScoreRow::new(classes::name(c).to_string(), Some(c), assoc, iou)
            })
            .collect();
        let things_cls: Vec<f64> = class_iou
            .iter()
            .filter(|(c, _)| classes::is_thing(**c))
            .map(|(_, v)| *v)
            .collect();
        if !things_cls.is_empty() {
            rows.push(ScoreRow::new("things".into(), None, Some(s_assoc), mean(things_cls.into_iter())));
        }
        rows.push(ScoreRow::new("all".into(), None, Some(s_assoc), s_cls));
        Ok(LstqReport {
            min_points,
            filter,
            s_assoc,
            s_cls,
            lstq: (s_assoc * s_cls).sqrt(),
            rows,
        })
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn majority(votes: &BTreeMap<SemanticClass, u64>) -> SemanticClass {
    // ties resolve to the lowest class id
    votes
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&c, _)| c)
        .unwrap_or(UNLABELED)
}

/// One report line. `s_assoc` is `None` for Stuff classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub name: String,
    pub class_id: Option<SemanticClass>,
    pub s_assoc: Option<f64>,
    pub s_cls: f64,
    pub lstq: Option<f64>,
}

impl ScoreRow {
    fn new(name: String, class_id: Option<SemanticClass>, s_assoc: Option<f64>, s_cls: f64) -> Self {
        ScoreRow {
            name,
            class_id,
            s_assoc,
            s_cls,
            lstq: s_assoc.map(|a| (a * s_cls).sqrt()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstqReport {
    pub min_points: usize,
    pub filter: SizeFilter,
    pub s_assoc: f64,
    pub s_cls: f64,
    pub lstq: f64,
    pub rows: Vec<ScoreRow>,
}

impl LstqReport {
    /// Human-readable table with scores in percent.
    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v));
        let mut out = format!("LSTQ (min_points = {})\n", self.min_points);
        let _ = writeln!(out, "{:<16} {:>8} {:>8} {:>8}", "class", "LSTQ", "S_assoc", "S_cls");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} {:>8} {:>8} {:>8}",
                r.name,
                pct(r.lstq),
                pct(r.s_assoc),
                pct(Some(r.s_cls))
            );
        }
        out
    }

    /// Line-delimited `key=value` form with full precision.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "min_points={}", self.min_points);
        let _ = writeln!(out, "lstq={:.17}", self.lstq);
        let _ = writeln!(out, "s_assoc={:.17}", self.s_assoc);
        let _ = writeln!(out, "s_cls={:.17}", self.s_cls);
        for r in &self.rows {
            let _ = writeln!(out, "{}.s_cls={:.17}", r.name, r.s_cls);
            if let (Some(a), Some(l)) = (r.s_assoc, r.lstq) {
                let _ = writeln!(out, "{}.s_assoc={:.17}", r.name, a);
                let _ = writeln!(out, "{}.lstq={:.17}", r.name, l);
            }
        }
        out
    }
}

/// Parse `key=value` report lines into a map, skipping malformed lines.
pub fn parse_key_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// A ground-truth object in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtObject {
    pub object_id: u32,
    pub bbox: Box3D,
}

/// Identity statistics of emitted tracks against ground-truth boxes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdentityStats {
    /// Changes of the matched track identity of a ground-truth object,
    /// per ground-truth class.
    pub id_switches: BTreeMap<SemanticClass, usize>,
    /// Frames where a previously matched object had no matching track,
    /// per ground-truth class.
    pub missed_after_first_match: BTreeMap<SemanticClass, usize>,
    /// First and last frame of every emitted track identity.
    pub lifetimes: BTreeMap<(String, u32), (usize, usize)>,
}

impl IdentityStats {
    pub fn total_id_switches(&self) -> usize {
        self.id_switches.values().sum()
    }

    pub fn total_missed(&self) -> usize {
        self.missed_after_first_match.values().sum()
    }
}

/// Counts identity switches frame by frame. Tracks and ground-truth
/// boxes are matched one-to-one by maximum total IoU, keeping pairs with
/// IoU at least `min_iou`.
#[derive(Debug, Clone)]
pub struct IdentityCounter {
    min_iou: f64,
    frame: usize,
    last_track: BTreeMap<u32, (String, u32)>,
    stats: IdentityStats,
    seen: BTreeSet<u32>,
}

impl IdentityCounter {
    pub fn new(min_iou: f64) -> Self {
        IdentityCounter {
            min_iou,
            frame: 0,
            last_track: BTreeMap::new(),
            stats: IdentityStats::default(),
            seen: BTreeSet::new(),
        }
    }

    pub fn add_frame(&mut self, gt: &[GtObject], tracks: &[TrackedBox]) {
        let frame = self.frame;
        self.frame += 1;
        for t in tracks {
            let key = (t.group.as_str().to_string(), t.track_id);
            let e = self.stats.lifetimes.entry(key).or_insert((frame, frame));
            e.1 = frame;
        }
        let mut sim = DMatrix::zeros(gt.len(), tracks.len());
        for (i, g) in gt.iter().enumerate() {
            for (j, t) in tracks.iter().enumerate() {
                sim[(i, j)] = iou3d(&g.bbox, &t.bbox).unwrap_or(0.0);
            }
        }
        let matched: BTreeMap<usize, usize> = solve_assignment(&sim)
            .into_iter()
            .filter(|&(i, j)| sim[(i, j)] >= self.min_iou && sim[(i, j)] > 0.0)
            .collect();
        for (i, g) in gt.iter().enumerate() {
            let class = g.bbox.class_id;
            match matched.get(&i) {
                Some(&j) => {
                    let id = (tracks[j].group.as_str().to_string(), tracks[j].track_id);
                    if let Some(prev) = self.last_track.get(&g.object_id) {
                        if *prev != id {
                            *self.stats.id_switches.entry(class).or_default() += 1;
                        }
                    }
                    self.last_track.insert(g.object_id, id);
                    self.seen.insert(g.object_id);
                }
                None if self.seen.contains(&g.object_id) => {
                    *self.stats.missed_after_first_match.entry(class).or_default() += 1;
                }
                None => {}
            }
        }
    }

    pub fn finish(self) -> IdentityStats {
        self.stats
    }
}
