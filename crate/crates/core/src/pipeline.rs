//! Sequence-level driver: detections from network labels, Stage 1
//! tracking, Stage 2 labelling, identity statistics and evaluation.
//!
//! Input sequences follow the SemanticKITTI layout with the network's
//! per-frame panoptic labels under `predictions/` and optional per-point
//! confidences under `confidences/`. Output sequences receive the final
//! labels under their own `predictions/`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Matrix4;
use thiserror::Error;

use crate::classes::ClassGroup;
use crate::config::{FrameMode, PipelineConfig};
use crate::geometry::Box3D;
use crate::kittiio::{self, FramePanoptic, KittiError, LabelFrame, SequenceDir};
use crate::metrics::{EvalError, EvalFrame, GtObject, IdentityCounter, IdentityStats, LstqAccumulator};
use crate::pointlabel::{self, IdMemory, LabelError, OverlapStats};
use crate::tracker::{Tracker, TrackedBox, TrackerError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] KittiError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("sequence {sequence}: {source}")]
    Eval { sequence: String, source: EvalError },
    #[error("sequence {sequence}: {msg}")]
    Mismatch { sequence: String, msg: String },
    #[error("{path}: line {line}: {msg}")]
    TrackFile { path: String, line: usize, msg: String },
}

/// Tracked boxes of every frame of a sequence.
pub type TrackLog = Vec<Vec<TrackedBox>>;

/// Per-frame transforms for the configured frame mode.
pub fn frame_transforms(seq: &SequenceDir, frames: usize, mode: FrameMode) -> Result<Vec<Matrix4<f64>>, KittiError> {
    match mode {
        FrameMode::World => seq.world_poses(frames),
        FrameMode::Ego => Ok(vec![Matrix4::identity(); frames]),
    }
}

/// Network panoptic labels of one frame, canonicalized.
pub fn read_network_frame(seq: &SequenceDir, frame: usize) -> Result<FramePanoptic, KittiError> {
    let conf = seq.confidences(frame);
    let mut f = kittiio::read_frame(
        &seq.velodyne(frame),
        &seq.predictions(frame),
        conf.exists().then_some(conf.as_path()),
    )?;
    f.canonicalize();
    Ok(f)
}

/// Ground-truth labels of one frame, canonicalized.
pub fn read_gt_frame(seq: &SequenceDir, frame: usize) -> Result<FramePanoptic, KittiError> {
    let mut f = kittiio::read_frame(&seq.velodyne(frame), &seq.labels(frame), None)?;
    f.canonicalize();
    Ok(f)
}

/// Stage 1 over a whole sequence.
pub fn track_sequence(seq: &SequenceDir, config: &PipelineConfig) -> Result<TrackLog, PipelineError> {
    let n = seq.frame_count()?;
    let poses = frame_transforms(seq, n, config.frame_mode)?;
    let mut tracker = Tracker::new(&config.tracker)?;
    let mut log = Vec::with_capacity(n);
    for (f, pose) in poses.iter().enumerate() {
        let frame = read_network_frame(seq, f)?;
        let dets = kittiio::extract_detections(&frame, pose);
        log.push(tracker.step(&dets)?);
    }
    Ok(log)
}

/// Stage 2 over a whole sequence: writes the final labels of every frame
/// into `out` and returns the accumulated overlap statistics.
pub fn label_sequence(
    seq: &SequenceDir,
    out: &SequenceDir,
    tracks: &TrackLog,
    config: &PipelineConfig,
) -> Result<OverlapStats, PipelineError> {
    let n = seq.frame_count()?;
    if tracks.len() != n {
        return Err(PipelineError::Mismatch {
            sequence: seq.path.display().to_string(),
            msg: format!("track log covers {} frames, sequence has {n}", tracks.len()),
        });
    }
    let poses = frame_transforms(seq, n, config.frame_mode)?;
    let mut memory = IdMemory::new();
    let mut total = OverlapStats::default();
    for (f, pose) in poses.iter().enumerate() {
        let frame = read_network_frame(seq, f)?.transformed(pose);
        let (labels, stats) =
            pointlabel::label_tracked_frame(&frame, &tracks[f], &mut memory, config.stage2.ignore_size)?;
        total.overlapping_pairs += stats.overlapping_pairs;
        total.reassigned_points += stats.reassigned_points;
        kittiio::write_predictions(out, f, &labels.semantic, &labels.instance)?;
    }
    Ok(total)
}

/// Identity statistics of a track log against the ground-truth labels of
/// `seq`, or `None` when the sequence has no labels.
pub fn identity_stats(
    seq: &SequenceDir,
    tracks: &TrackLog,
    config: &PipelineConfig,
) -> Result<Option<IdentityStats>, PipelineError> {
    let n = tracks.len();
    if n == 0 || !seq.labels(0).exists() {
        return Ok(None);
    }
    let poses = frame_transforms(seq, n, config.frame_mode)?;
    let mut counter = IdentityCounter::new(config.eval.identity_iou);
    for (f, pose) in poses.iter().enumerate() {
        let gt = read_gt_frame(seq, f)?;
        let objects: Vec<GtObject> = kittiio::extract_instances(&gt, pose)
            .into_iter()
            .map(|(object_id, bbox)| GtObject { object_id, bbox })
            .collect();
        counter.add_frame(&objects, &tracks[f]);
    }
    Ok(Some(counter.finish()))
}

/// LSTQ statistics of one sequence: ground-truth labels of `gt` against
/// the `predictions/` of `pred`.
pub fn evaluate_sequence(gt: &SequenceDir, pred: &SequenceDir, index: u32) -> Result<LstqAccumulator, PipelineError> {
    let name = gt.path.display().to_string();
    let n = gt.frame_count()?;
    let mut acc = LstqAccumulator::new();
    for f in 0..n {
        let path = pred.predictions(f);
        if !path.exists() {
            return Err(PipelineError::Mismatch {
                sequence: name,
                msg: format!("{n} ground-truth frames but no prediction {}", path.display()),
            });
        }
        let g = LabelFrame::read(&gt.labels(f))?;
        let p = LabelFrame::read(&path)?;
        let canon = |l: &LabelFrame| -> Vec<u16> { l.semantic().into_iter().map(crate::classes::canonical).collect() };
        let (gs, ps) = (canon(&g), canon(&p));
        let (gi, pi) = (g.instance(), p.instance());
        let frame = EvalFrame {
            gt_semantic: &gs,
            gt_instance: &gi,
            pred_semantic: &ps,
            pred_instance: &pi,
        };
        acc.add_frame(index, f as u32, frame).map_err(|source| PipelineError::Eval {
            sequence: name.clone(),
            source,
        })?;
    }
    if pred.predictions(n).exists() {
        return Err(PipelineError::Mismatch {
            sequence: name,
            msg: format!("prediction has more frames than the {n} ground-truth frames"),
        });
    }
    Ok(acc)
}

const TRACKS_HEADER: &str = "# frame group track_id class cx cy cz theta l w h score";

/// Plain-text track log, one emitted box per line.
pub fn format_tracks(tracks: &TrackLog) -> String {
    let mut out = format!("{TRACKS_HEADER}\n# frames {}\n", tracks.len());
    for (f, boxes) in tracks.iter().enumerate() {
        for t in boxes {
            let b = &t.bbox;
            let _ = writeln!(
                out,
                "{f} {} {} {} {} {} {} {} {} {} {} {}",
                t.group, t.track_id, t.class_id, b.cx, b.cy, b.cz, b.theta, b.l, b.w, b.h, b.score
            );
        }
    }
    out
}

pub fn write_tracks(path: &Path, tracks: &TrackLog) -> Result<(), KittiError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| KittiError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, format_tracks(tracks)).map_err(|source| KittiError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_tracks(text: &str, path: &str) -> Result<TrackLog, PipelineError> {
    let err = |line: usize, msg: String| PipelineError::TrackFile {
        path: path.to_string(),
        line,
        msg,
    };
    let mut log: TrackLog = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        if let Some(rest) = line.strip_prefix("# frames ") {
            let n: usize = rest.trim().parse().map_err(|e| err(line_no, format!("{e}")))?;
            log.resize(log.len().max(n), Vec::new());
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 12 {
            return Err(err(line_no, format!("expected 12 fields, found {}", f.len())));
        }
        let frame: usize = f[0].parse().map_err(|e| err(line_no, format!("frame: {e}")))?;
        let group: ClassGroup = f[1].parse().map_err(|e: String| err(line_no, e))?;
        let track_id: u32 = f[2].parse().map_err(|e| err(line_no, format!("track_id: {e}")))?;
        let class_id: u16 = f[3].parse().map_err(|e| err(line_no, format!("class: {e}")))?;
        let v: Vec<f64> = f[4..]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| err(line_no, format!("{e}")))?;
        let bbox = Box3D {
            cx: v[0],
            cy: v[1],
            cz: v[2],
            theta: v[3],
            l: v[4],
            w: v[5],
            h: v[6],
            score: v[7],
            class_id,
        };
        if log.len() <= frame {
            log.resize(frame + 1, Vec::new());
        }
        log[frame].push(TrackedBox {
            group,
            track_id,
            class_id,
            bbox,
        });
    }
    Ok(log)
}

pub fn read_tracks(path: &Path) -> Result<TrackLog, PipelineError> {
    let text = fs::read_to_string(path).map_err(|source| KittiError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_tracks(&text, &path.display().to_string())
}

/// Per-sequence summary of a tracking run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackSummary {
    pub frames: usize,
    pub overlap: OverlapStats,
    pub identity: Option<IdentityStats>,
    /// (group, track id, first frame, last frame) per emitted identity.
    pub lifetimes: Vec<(ClassGroup, u32, usize, usize)>,
}

impl TrackSummary {
    pub fn new(tracks: &TrackLog, overlap: OverlapStats, identity: Option<IdentityStats>) -> Self {
        let mut spans: std::collections::BTreeMap<(ClassGroup, u32), (usize, usize)> = Default::default();
        for (f, boxes) in tracks.iter().enumerate() {
            for t in boxes {
                spans.entry((t.group, t.track_id)).or_insert((f, f)).1 = f;
            }
        }
        TrackSummary {
            frames: tracks.len(),
            overlap,
            identity,
            lifetimes: spans.into_iter().map(|((g, id), (a, b))| (g, id, a, b)).collect(),
        }
    }

    pub fn track_count(&self) -> usize {
        self.lifetimes.len()
    }

    /// `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "frames={}", self.frames);
        let _ = writeln!(out, "tracks={}", self.track_count());
        let _ = writeln!(out, "overlapping_pairs={}", self.overlap.overlapping_pairs);
        let _ = writeln!(out, "reassigned_points={}", self.overlap.reassigned_points);
        if let Some(id) = &self.identity {
            let _ = writeln!(out, "id_switches={}", id.total_id_switches());
            let _ = writeln!(out, "missed_after_first_match={}", id.total_missed());
            for (c, n) in &id.id_switches {
                let _ = writeln!(out, "id_switches.{}={n}", crate::classes::name(*c));
            }
        }
        for (g, id, a, b) in &self.lifetimes {
            let _ = writeln!(out, "track.{g}.{id}={a}-{b}");
        }
        out
    }
}
