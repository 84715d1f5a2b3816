//! SemanticKITTI file formats.
//!
//! * `velodyne/FFFFFF.bin`: N records of four little-endian f32 (x, y, z, remission)
//! * `labels/FFFFFF.label`, `predictions/FFFFFF.label`: N little-endian u32,
//!   semantic class in the low 16 bits, instance id in the high 16 bits
//! * `confidences/FFFFFF.conf`: N little-endian f32 per-point scores
//! * `poses.txt`: one row-major 3x4 transform per frame
//! * `calib.txt`: `Tr:` row-major 3x4 velodyne-to-camera transform

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Point3};
use thiserror::Error;

use crate::classes;
use crate::geometry::{Box3D, SemanticClass};
use crate::motion::MIN_DIMENSION;

pub const POINT_RECORD_BYTES: usize = 16;
pub const LABEL_BYTES: usize = 4;
pub const MAX_INSTANCE_ID: u32 = u16::MAX as u32;

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(
        "{labels}: {label_bytes} bytes ({} entries) but {cloud} holds {points} points; \
         expected {} bytes, first unmatched byte offset {}",
        label_bytes / record,
        points * record,
        (*label_bytes).min(points * record)
    )]
    SizeMismatch {
        labels: PathBuf,
        label_bytes: usize,
        cloud: PathBuf,
        points: usize,
        record: usize,
    },
    #[error("frame {frame}: instance id {id} does not fit the 16-bit label field")]
    IdOverflow { frame: usize, id: u32 },
    #[error("invalid pose: {0}")]
    Pose(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KittiError + '_ {
    move |source| KittiError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, KittiError> {
    fs::read(path).map_err(io_err(path))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), KittiError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

/// Raw scan: `(x, y, z, remission)` per point.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloudFrame {
    pub points: Vec<[f32; 4]>,
}

impl PointCloudFrame {
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self, KittiError> {
        if !bytes.len().is_multiple_of(POINT_RECORD_BYTES) {
            return Err(KittiError::Format {
                path: path.to_path_buf(),
                msg: format!(
                    "{} bytes is not a multiple of the {POINT_RECORD_BYTES}-byte point record \
                     ({} trailing bytes at offset {})",
                    bytes.len(),
                    bytes.len() % POINT_RECORD_BYTES,
                    bytes.len() - bytes.len() % POINT_RECORD_BYTES
                ),
            });
        }
        let points: Vec<[f32; 4]> = bytes
            .chunks_exact(POINT_RECORD_BYTES)
            .map(|rec| {
                let f = |k: usize| f32::from_le_bytes(rec[4 * k..4 * k + 4].try_into().unwrap());
                [f(0), f(1), f(2), f(3)]
            })
            .collect();
        if let Some(i) = points.iter().position(|p| p[..3].iter().any(|v| !v.is_finite())) {
            return Err(KittiError::Format {
                path: path.to_path_buf(),
                msg: format!("non-finite coordinate in point {i} (byte offset {})", i * POINT_RECORD_BYTES),
            });
        }
        Ok(PointCloudFrame { points })
    }

    pub fn encode(&self) -> Vec<u8> {
        self.points
            .iter()
            .flat_map(|p| p.iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self, KittiError> {
        Self::decode(&read_bytes(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<(), KittiError> {
        write_bytes(path, &self.encode())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Packed per-point labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelFrame {
    pub words: Vec<u32>,
}

pub fn pack_label(semantic: SemanticClass, instance: u16) -> u32 {
    (u32::from(instance) << 16) | u32::from(semantic)
}

pub fn unpack_label(word: u32) -> (SemanticClass, u16) {
    ((word & 0xFFFF) as SemanticClass, (word >> 16) as u16)
}

impl LabelFrame {
    /// Pack semantic/instance arrays; fails if an instance id exceeds 16 bits.
    pub fn from_parts(semantic: &[SemanticClass], instance: &[u32], frame: usize) -> Result<Self, KittiError> {
        assert_eq!(semantic.len(), instance.len());
        let words = semantic
            .iter()
            .zip(instance)
            .map(|(&s, &id)| {
                u16::try_from(id)
                    .map(|id| pack_label(s, id))
                    .map_err(|_| KittiError::IdOverflow { frame, id })
            })
            .collect::<Result<_, _>>()?;
        Ok(LabelFrame { words })
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self, KittiError> {
        if !bytes.len().is_multiple_of(LABEL_BYTES) {
            return Err(KittiError::Format {
                path: path.to_path_buf(),
                msg: format!("{} bytes is not a multiple of {LABEL_BYTES}", bytes.len()),
            });
        }
        Ok(LabelFrame {
            words: bytes
                .chunks_exact(LABEL_BYTES)
                .map(|w| u32::from_le_bytes(w.try_into().unwrap()))
                .collect(),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    pub fn read(path: &Path) -> Result<Self, KittiError> {
        Self::decode(&read_bytes(path)?, path)
    }

    pub fn write(&self, path: &Path) -> Result<(), KittiError> {
        write_bytes(path, &self.encode())
    }

    pub fn semantic(&self) -> Vec<SemanticClass> {
        self.words.iter().map(|&w| unpack_label(w).0).collect()
    }

    pub fn instance(&self) -> Vec<u32> {
        self.words.iter().map(|&w| u32::from(unpack_label(w).1)).collect()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

pub fn read_confidences(path: &Path) -> Result<Vec<f32>, KittiError> {
    let bytes = read_bytes(path)?;
    if bytes.len() % 4 != 0 {
        return Err(KittiError::Format {
            path: path.to_path_buf(),
            msg: format!("{} bytes is not a multiple of 4", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

pub fn write_confidences(path: &Path, conf: &[f32]) -> Result<(), KittiError> {
    let bytes: Vec<u8> = conf.iter().flat_map(|c| c.to_le_bytes()).collect();
    write_bytes(path, &bytes)
}

/// One scan with its per-point panoptic labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FramePanoptic {
    pub points: Vec<[f64; 3]>,
    pub semantic: Vec<SemanticClass>,
    pub instance: Vec<u32>,
    pub confidence: Vec<f32>,
}

impl FramePanoptic {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Fold raw ids onto the evaluated class set (see [`classes::canonical`]).
    pub fn canonicalize(&mut self) {
        for s in &mut self.semantic {
            *s = classes::canonical(*s);
        }
    }

    /// Copy with every point mapped through `transform`.
    pub fn transformed(&self, transform: &Matrix4<f64>) -> Self {
        FramePanoptic {
            points: self
                .points
                .iter()
                .map(|p| {
                    let q = transform.transform_point(&Point3::new(p[0], p[1], p[2]));
                    [q.x, q.y, q.z]
                })
                .collect(),
            ..self.clone()
        }
    }

    pub fn is_thing_point(&self, i: usize) -> bool {
        classes::is_thing(self.semantic[i])
    }
}

/// Load a scan, its labels and optional confidences. Missing confidences
/// default to 1.0.
pub fn read_frame(bin: &Path, label: &Path, conf: Option<&Path>) -> Result<FramePanoptic, KittiError> {
    let cloud = PointCloudFrame::read(bin)?;
    let label_bytes = read_bytes(label)?;
    if label_bytes.len() != cloud.len() * LABEL_BYTES {
        return Err(KittiError::SizeMismatch {
            labels: label.to_path_buf(),
            label_bytes: label_bytes.len(),
            cloud: bin.to_path_buf(),
            points: cloud.len(),
            record: LABEL_BYTES,
        });
    }
    let labels = LabelFrame::decode(&label_bytes, label)?;
    let confidence = match conf {
        Some(path) => {
            let c = read_confidences(path)?;
            if c.len() != cloud.len() {
                return Err(KittiError::SizeMismatch {
                    labels: path.to_path_buf(),
                    label_bytes: c.len() * 4,
                    cloud: bin.to_path_buf(),
                    points: cloud.len(),
                    record: 4,
                });
            }
            c
        }
        None => vec![1.0; cloud.len()],
    };
    Ok(FramePanoptic {
        points: cloud
            .points
            .iter()
            .map(|p| [f64::from(p[0]), f64::from(p[1]), f64::from(p[2])])
            .collect(),
        semantic: labels.semantic(),
        instance: labels.instance(),
        confidence,
    })
}

/// One axis-aligned box per Things instance (instance id > 0), from the
/// point extents after applying `pose`. Score is the highest point
/// confidence; class the instance's most frequent semantic label (lowest
/// id on ties). Boxes come back ordered by instance id.
pub fn extract_detections(frame: &FramePanoptic, pose: &Matrix4<f64>) -> Vec<Box3D> {
    extract_instances(frame, pose).into_iter().map(|(_, b)| b).collect()
}

/// [`extract_detections`] keeping the instance id of each box.
pub fn extract_instances(frame: &FramePanoptic, pose: &Matrix4<f64>) -> Vec<(u32, Box3D)> {
    struct Acc {
        lo: [f64; 3],
        hi: [f64; 3],
        score: f32,
        votes: BTreeMap<SemanticClass, usize>,
    }
    let mut instances: BTreeMap<u32, Acc> = BTreeMap::new();
    for i in 0..frame.len() {
        let id = frame.instance[i];
        if id == 0 || !frame.is_thing_point(i) {
            continue;
        }
        let p = frame.points[i];
        let q = pose.transform_point(&Point3::new(p[0], p[1], p[2]));
        let q = [q.x, q.y, q.z];
        let acc = instances.entry(id).or_insert(Acc {
            lo: q,
            hi: q,
            score: f32::NEG_INFINITY,
            votes: BTreeMap::new(),
        });
        for (k, &v) in q.iter().enumerate() {
            acc.lo[k] = acc.lo[k].min(v);
            acc.hi[k] = acc.hi[k].max(v);
        }
        acc.score = acc.score.max(frame.confidence[i]);
        *acc.votes.entry(frame.semantic[i]).or_default() += 1;
    }
    instances
        .into_iter()
        .map(|(id, acc)| {
            let class_id = acc
                .votes
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&c, _)| c)
                .unwrap();
            let mut center = [0.0; 3];
            let mut dims = [0.0; 3];
            for k in 0..3 {
                center[k] = (acc.lo[k] + acc.hi[k]) / 2.0;
                dims[k] = (acc.hi[k] - acc.lo[k]).max(MIN_DIMENSION);
            }
            let b = Box3D {
                cx: center[0],
                cy: center[1],
                cz: center[2],
                theta: 0.0,
                l: dims[0],
                w: dims[1],
                h: dims[2],
                score: f64::from(acc.score).clamp(0.0, 1.0),
                class_id,
            };
            (id, b)
        })
        .collect()
}

fn parse_row_3x4(text: &str, path: &Path, line: usize) -> Result<Matrix4<f64>, KittiError> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| KittiError::Format {
            path: path.to_path_buf(),
            msg: format!("line {line}: {e}"),
        })?;
    if vals.len() != 12 {
        return Err(KittiError::Format {
            path: path.to_path_buf(),
            msg: format!("line {line}: expected 12 values, found {}", vals.len()),
        });
    }
    let mut m = Matrix4::identity();
    for r in 0..3 {
        for c in 0..4 {
            m[(r, c)] = vals[4 * r + c];
        }
    }
    check_rigid(&m).map_err(|msg| KittiError::Format {
        path: path.to_path_buf(),
        msg: format!("line {line}: {msg}"),
    })?;
    Ok(m)
}

fn check_rigid(m: &Matrix4<f64>) -> Result<(), String> {
    let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > 1e-6 {
        return Err(format!("rotation block is not orthonormal (error {err:.3e})"));
    }
    Ok(())
}

pub fn read_poses(path: &Path) -> Result<Vec<Matrix4<f64>>, KittiError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| parse_row_3x4(l, path, n + 1))
        .collect()
}

pub fn write_poses(path: &Path, poses: &[Matrix4<f64>]) -> Result<(), KittiError> {
    let mut out = String::new();
    for p in poses {
        out.push_str(&format_row_3x4(p));
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

fn format_row_3x4(m: &Matrix4<f64>) -> String {
    let mut vals = Vec::with_capacity(12);
    for r in 0..3 {
        for c in 0..4 {
            vals.push(format!("{:e}", m[(r, c)]));
        }
    }
    vals.join(" ")
}

/// The `Tr:` entry of `calib.txt`, or identity when absent.
pub fn read_calibration(path: &Path) -> Result<Matrix4<f64>, KittiError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    for (n, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix("Tr:") {
            return parse_row_3x4(rest, path, n + 1);
        }
    }
    Ok(Matrix4::identity())
}

pub fn write_calibration(path: &Path, tr: &Matrix4<f64>) -> Result<(), KittiError> {
    write_bytes(path, format!("Tr: {}\n", format_row_3x4(tr)).as_bytes())
}

/// Velodyne-to-world transform: `Tr⁻¹ · pose · Tr`.
pub fn world_from_ego(pose: &Matrix4<f64>, calib: &Matrix4<f64>) -> Result<Matrix4<f64>, KittiError> {
    check_rigid(pose).map_err(KittiError::Pose)?;
    let inv = calib
        .try_inverse()
        .ok_or_else(|| KittiError::Pose("calibration is singular".into()))?;
    Ok(inv * pose * calib)
}

/// Paths of one `sequences/NN` directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceDir {
    pub path: PathBuf,
}

impl SequenceDir {
    pub fn new(root: &Path, sequence: &str) -> Self {
        SequenceDir {
            path: root.join("sequences").join(sequence),
        }
    }

    fn frame_file(&self, dir: &str, frame: usize, ext: &str) -> PathBuf {
        self.path.join(dir).join(format!("{frame:06}.{ext}"))
    }

    pub fn velodyne(&self, frame: usize) -> PathBuf {
        self.frame_file("velodyne", frame, "bin")
    }

    pub fn labels(&self, frame: usize) -> PathBuf {
        self.frame_file("labels", frame, "label")
    }

    pub fn predictions(&self, frame: usize) -> PathBuf {
        self.frame_file("predictions", frame, "label")
    }

    pub fn confidences(&self, frame: usize) -> PathBuf {
        self.frame_file("confidences", frame, "conf")
    }

    pub fn poses(&self) -> PathBuf {
        self.path.join("poses.txt")
    }

    pub fn calib(&self) -> PathBuf {
        self.path.join("calib.txt")
    }

    /// Number of `.bin` scans, which must be named contiguously from 0.
    pub fn frame_count(&self) -> Result<usize, KittiError> {
        let dir = self.path.join("velodyne");
        let n = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "bin"))
            .count();
        if let Some(missing) = (0..n).find(|&f| !self.velodyne(f).exists()) {
            return Err(KittiError::Format {
                path: dir,
                msg: format!("scans are not numbered contiguously: {missing:06}.bin missing"),
            });
        }
        Ok(n)
    }

    /// Per-frame world transforms; identity for every frame when the
    /// sequence has no `poses.txt`.
    pub fn world_poses(&self, frames: usize) -> Result<Vec<Matrix4<f64>>, KittiError> {
        if !self.poses().exists() {
            return Ok(vec![Matrix4::identity(); frames]);
        }
        let poses = read_poses(&self.poses())?;
        if poses.len() < frames {
            return Err(KittiError::Format {
                path: self.poses(),
                msg: format!("{} poses for {frames} scans", poses.len()),
            });
        }
        let calib = if self.calib().exists() {
            read_calibration(&self.calib())?
        } else {
            Matrix4::identity()
        };
        poses[..frames].iter().map(|p| world_from_ego(p, &calib)).collect()
    }
}

/// Write one frame of predicted labels under `predictions/`.
pub fn write_predictions(
    seq: &SequenceDir,
    frame: usize,
    semantic: &[SemanticClass],
    instance: &[u32],
) -> Result<PathBuf, KittiError> {
    let labels = LabelFrame::from_parts(semantic, instance, frame)?;
    let path = seq.predictions(frame);
    labels.write(&path)?;
    Ok(path)
}
