//! Synthetic scenarios: moving boxes filled with random points, written
//! as a small SemanticKITTI-style dataset with ground truth labels and a
//! corrupted copy playing the role of per-frame network predictions.
//!
//! Scenario files are TOML:
//!
//! ```toml
//! frames = 30
//! seed = 7
//! ego_velocity = [0.5, 0.0, 0.0]    # metres per frame, optional
//!
//! [noise]
//! dropout = 0.05                     # per object and frame
//! class_flip = 0.0
//! jitter_sigma = 0.1                 # metres, shifts the predicted mask
//! score = [0.75, 1.0]                # per object and frame confidence range
//!
//! [ground]
//! points = 400
//! extent = 30.0
//!
//! [[objects]]
//! id = 1
//! class = 10
//! birth = 0
//! death = 29                         # last frame, inclusive
//! position = [5.0, 2.0, -0.9]        # world position at birth
//! velocity = [1.0, 0.0, 0.0]         # metres per frame
//! size = [4.0, 1.8, 1.5]
//! points = [150, 150]                # count at birth and at death, linear in between
//! occlusions = [[8, 12]]             # inclusive frame windows hidden from the prediction
//! ```
//!
//! Two independent random streams are used: one renders the scene and the
//! ground truth, the other applies prediction noise, so ground truth does
//! not depend on the noise settings.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector3};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes;
use crate::geometry::Box3D;
use crate::kittiio::{self, KittiError, LabelFrame, PointCloudFrame, SequenceDir, MAX_INSTANCE_ID};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("invalid scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot read scenario {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] KittiError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub dropout: f64,
    pub class_flip: f64,
    pub jitter_sigma: f64,
    pub score: [f64; 2],
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            dropout: 0.0,
            class_flip: 0.0,
            jitter_sigma: 0.0,
            score: [0.9, 0.9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundSpec {
    pub points: usize,
    pub extent: f64,
    pub height: f64,
}

impl Default for GroundSpec {
    fn default() -> Self {
        GroundSpec {
            points: 200,
            extent: 30.0,
            height: -1.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub id: u32,
    pub class: u16,
    pub birth: usize,
    pub death: usize,
    pub position: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    pub size: [f64; 3],
    /// Point count at birth and at death.
    pub points: [usize; 2],
    #[serde(default)]
    pub occlusions: Vec<[usize; 2]>,
    /// Overrides the scenario-wide score range.
    #[serde(default)]
    pub score: Option<[f64; 2]>,
}

impl ObjectSpec {
    pub fn alive(&self, frame: usize) -> bool {
        (self.birth..=self.death).contains(&frame)
    }

    pub fn occluded(&self, frame: usize) -> bool {
        self.occlusions.iter().any(|w| (w[0]..=w[1]).contains(&frame))
    }

    /// Ground-truth box in world coordinates.
    pub fn box_at(&self, frame: usize) -> Box3D {
        let t = frame as f64 - self.birth as f64;
        let c = [
            self.position[0] + t * self.velocity[0],
            self.position[1] + t * self.velocity[1],
            self.position[2] + t * self.velocity[2],
        ];
        Box3D::new(c, self.size, 1.0, self.class).expect("validated object")
    }

    pub fn point_count(&self, frame: usize) -> usize {
        let [a, b] = self.points;
        if self.death == self.birth {
            return a;
        }
        let t = (frame - self.birth) as f64 / (self.death - self.birth) as f64;
        (a as f64 + t * (b as f64 - a as f64)).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub frames: usize,
    pub seed: u64,
    #[serde(default)]
    pub ego_velocity: [f64; 3],
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub ground: GroundSpec,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path).map_err(|source| SynthError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.frames == 0 {
            return bad("frames must be at least 1".into());
        }
        let n = &self.noise;
        for (name, p) in [("noise.dropout", n.dropout), ("noise.class_flip", n.class_flip)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        if !(n.jitter_sigma >= 0.0 && n.jitter_sigma.is_finite()) {
            return bad(format!("noise.jitter_sigma {} must be finite and non-negative", n.jitter_sigma));
        }
        check_score_range("noise.score", n.score)?;
        if !(self.ground.extent > 0.0 && self.ground.extent.is_finite()) {
            return bad("ground.extent must be positive".into());
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if o.id == 0 || o.id > MAX_INSTANCE_ID {
                return bad(format!("object id {} outside 1..={MAX_INSTANCE_ID}", o.id));
            }
            if !ids.insert(o.id) {
                return bad(format!("object id {} used more than once", o.id));
            }
            if !classes::is_thing(o.class) {
                return bad(format!("object {}: class {} is not a Things class", o.id, o.class));
            }
            if o.birth > o.death || o.death >= self.frames {
                return bad(format!(
                    "object {}: lifetime {}..={} outside 0..{}",
                    o.id, o.birth, o.death, self.frames
                ));
            }
            if o.size.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
                return bad(format!("object {}: size must be positive", o.id));
            }
            if o.position.iter().chain(&o.velocity).any(|v| !v.is_finite()) {
                return bad(format!("object {}: non-finite position or velocity", o.id));
            }
            if let Some(s) = o.score {
                check_score_range(&format!("object {} score", o.id), s)?;
            }
        }
        Ok(())
    }

    /// Ego pose (world from sensor) of a frame: pure translation.
    pub fn ego_pose(&self, frame: usize) -> Matrix4<f64> {
        let v = Vector3::from(self.ego_velocity) * frame as f64;
        Matrix4::new_translation(&v)
    }

    /// Ground-truth boxes of a frame in world coordinates, with object ids.
    pub fn gt_boxes(&self, frame: usize) -> Vec<(u32, Box3D)> {
        self.objects
            .iter()
            .filter(|o| o.alive(frame))
            .map(|o| (o.id, o.box_at(frame)))
            .collect()
    }
}

fn check_score_range(name: &str, s: [f64; 2]) -> Result<(), SynthError> {
    if !(0.0 <= s[0] && s[0] <= s[1] && s[1] <= 1.0) {
        return Err(SynthError::Config(format!("{name} [{}, {}] is not a range within [0, 1]", s[0], s[1])));
    }
    Ok(())
}

/// One rendered frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthFrame {
    /// Sensor-frame points.
    pub points: Vec<[f32; 4]>,
    pub gt_semantic: Vec<u16>,
    pub gt_instance: Vec<u32>,
    pub pred_semantic: Vec<u16>,
    pub pred_instance: Vec<u32>,
    pub confidence: Vec<f32>,
}

// second stream of the same seed, used only for prediction noise
const NOISE_STREAM: u64 = 1;

/// Render all frames of a scenario.
pub fn render(scenario: &Scenario) -> Result<Vec<SynthFrame>, SynthError> {
    scenario.validate()?;
    let mut scene_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    noise_rng.set_stream(NOISE_STREAM);
    let jitter = Normal::new(0.0, scenario.noise.jitter_sigma).map_err(|e| SynthError::Config(e.to_string()))?;

    let mut frames = Vec::with_capacity(scenario.frames);
    for f in 0..scenario.frames {
        let ego = Vector3::from(scenario.ego_velocity) * f as f64;
        let mut out = SynthFrame::default();
        let g = &scenario.ground;
        for _ in 0..g.points {
            let x = ego.x + scene_rng.random_range(-g.extent..=g.extent);
            let y = ego.y + scene_rng.random_range(-g.extent..=g.extent);
            let z = g.height + scene_rng.random_range(-0.02..=0.02);
            out.push_point([x, y, z], ego, classes::ROAD, 0);
        }
        let start = out.points.len();
        for o in scenario.objects.iter().filter(|o| o.alive(f)) {
            let b = o.box_at(f);
            let (lo, hi) = (b.min_corner(), b.max_corner());
            for _ in 0..o.point_count(f) {
                let p = [0, 1, 2].map(|k| scene_rng.random_range(lo[k]..=hi[k]));
                out.push_point(p, ego, o.class, o.id);
            }
        }
        out.pred_semantic = out.gt_semantic.clone();
        out.pred_instance = vec![0; out.points.len()];
        out.confidence = vec![1.0; out.points.len()];
        corrupt(scenario, f, start, ego, &mut out, &mut noise_rng, &jitter);
        frames.push(out);
    }
    Ok(frames)
}

impl SynthFrame {
    fn push_point(&mut self, world: [f64; 3], ego: Vector3<f64>, class: u16, id: u32) {
        let p = [world[0] - ego.x, world[1] - ego.y, world[2] - ego.z];
        self.points.push([p[0] as f32, p[1] as f32, p[2] as f32, 0.5]);
        self.gt_semantic.push(class);
        self.gt_instance.push(id);
    }
}

/// Apply prediction noise to the object points `start..` of one frame.
/// Surviving objects get per-frame instance ids in random order.
fn corrupt(
    scenario: &Scenario,
    frame: usize,
    start: usize,
    ego: Vector3<f64>,
    out: &mut SynthFrame,
    rng: &mut ChaCha8Rng,
    jitter: &Normal<f64>,
) {
    let noise = &scenario.noise;
    let alive: Vec<&ObjectSpec> = scenario.objects.iter().filter(|o| o.alive(frame)).collect();
    let mut labels: Vec<u32> = (1..=alive.len() as u32).collect();
    labels.shuffle(rng);
    let mut offset = start;
    for (o, label) in alive.into_iter().zip(labels) {
        let count = o.point_count(frame);
        let range = offset..offset + count;
        offset += count;
        // draw every variate unconditionally so one object's settings do
        // not shift the stream for the others
        let dropped = rng.random_bool(noise.dropout);
        let flip = rng.random_bool(noise.class_flip);
        let flip_to = *classes::THINGS.choose(rng).expect("non-empty");
        let shift = [jitter.sample(rng), jitter.sample(rng), jitter.sample(rng)];
        let [lo, hi] = o.score.unwrap_or(noise.score);
        let score = rng.random_range(lo..=hi) as f32;

        if dropped || o.occluded(frame) {
            for i in range {
                out.pred_semantic[i] = 0;
            }
            continue;
        }
        let class = if flip && flip_to != o.class { flip_to } else { o.class };
        let b = o.box_at(frame);
        let mask = Box3D {
            cx: b.cx + shift[0] - ego.x,
            cy: b.cy + shift[1] - ego.y,
            cz: b.cz + shift[2] - ego.z,
            ..b
        };
        for i in range {
            let p = out.points[i];
            if mask.contains([f64::from(p[0]), f64::from(p[1]), f64::from(p[2])]) {
                out.pred_semantic[i] = class;
                out.pred_instance[i] = label;
                out.confidence[i] = score;
            } else {
                out.pred_semantic[i] = 0;
            }
        }
    }
}

/// Write a rendered scenario as sequence `sequence` under `root`:
/// scans, ground-truth labels, predictions, confidences, poses and an
/// identity calibration. Returns the sequence directory.
pub fn generate(scenario: &Scenario, root: &Path, sequence: &str) -> Result<PathBuf, SynthError> {
    let frames = render(scenario)?;
    let seq = SequenceDir::new(root, sequence);
    for (f, fr) in frames.iter().enumerate() {
        PointCloudFrame { points: fr.points.clone() }.write(&seq.velodyne(f))?;
        LabelFrame::from_parts(&fr.gt_semantic, &fr.gt_instance, f)?.write(&seq.labels(f))?;
        LabelFrame::from_parts(&fr.pred_semantic, &fr.pred_instance, f)?.write(&seq.predictions(f))?;
        kittiio::write_confidences(&seq.confidences(f), &fr.confidence)?;
    }
    let poses: Vec<Matrix4<f64>> = (0..scenario.frames).map(|f| scenario.ego_pose(f)).collect();
    kittiio::write_poses(&seq.poses(), &poses)?;
    kittiio::write_calibration(&seq.calib(), &Matrix4::identity())?;
    Ok(seq.path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn car(id: u32) -> ObjectSpec {
        ObjectSpec {
            id,
            class: classes::CAR,
            birth: 0,
            death: 9,
            position: [5.0 * id as f64, 0.0, -0.9],
            velocity: [0.5, 0.0, 0.0],
            size: [4.0, 1.8, 1.5],
            points: [100, 100],
            occlusions: vec![],
            score: None,
        }
    }

    fn scenario() -> Scenario {
        Scenario {
            frames: 10,
            seed: 3,
            ego_velocity: [0.3, 0.0, 0.0],
            noise: NoiseSpec::default(),
            ground: GroundSpec::default(),
            objects: vec![car(1), car(3)],
        }
    }

    #[test]
    fn noise_free_prediction_matches_gt_semantics() {
        let frames = render(&scenario()).unwrap();
        for f in &frames {
            assert_eq!(f.pred_semantic, f.gt_semantic);
            // per-frame ids induce the same partition as the gt ids
            for i in 0..f.points.len() {
                for j in 0..f.points.len() {
                    assert_eq!(f.gt_instance[i] == f.gt_instance[j], f.pred_instance[i] == f.pred_instance[j]);
                }
            }
        }
    }

    #[test]
    fn occluded_frames_lack_the_instance() {
        let mut s = scenario();
        s.objects[0].occlusions = vec![[2, 4]];
        let frames = render(&s).unwrap();
        for (k, f) in frames.iter().enumerate() {
            let visible = (0..f.points.len()).any(|i| f.gt_instance[i] == 1 && f.pred_instance[i] != 0);
            assert_eq!(visible, !(2..=4).contains(&k), "frame {k}");
        }
    }

    #[test]
    fn gt_ignores_noise_settings() {
        let a = render(&scenario()).unwrap();
        let mut noisy = scenario();
        noisy.noise = NoiseSpec {
            dropout: 0.3,
            class_flip: 0.2,
            jitter_sigma: 0.4,
            score: [0.1, 0.9],
        };
        let b = render(&noisy).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((&x.points, &x.gt_semantic, &x.gt_instance), (&y.points, &y.gt_semantic, &y.gt_instance));
        }
    }

    #[test]
    fn point_count_ramp() {
        let mut o = car(1);
        o.points = [22, 290];
        assert_eq!(o.point_count(0), 22);
        assert_eq!(o.point_count(9), 290);
        assert!(o.point_count(5) > o.point_count(4));
    }

    #[test]
    fn objects_stay_inside_their_boxes() {
        let s = scenario();
        let frames = render(&s).unwrap();
        for (k, f) in frames.iter().enumerate() {
            let ego = s.ego_pose(k);
            for (id, b) in s.gt_boxes(k) {
                for i in (0..f.points.len()).filter(|&i| f.gt_instance[i] == id) {
                    let p = f.points[i];
                    let w = ego.transform_point(&nalgebra::Point3::new(p[0] as f64, p[1] as f64, p[2] as f64));
                    let grown = Box3D { l: b.l + 1e-4, w: b.w + 1e-4, h: b.h + 1e-4, ..b };
                    assert!(grown.contains([w.x, w.y, w.z]));
                }
            }
        }
    }

    #[test]
    fn validation() {
        let mut s = scenario();
        s.objects[1].id = 1;
        assert!(matches!(s.validate(), Err(SynthError::Config(m)) if m.contains("more than once")));
        let mut s = scenario();
        s.objects[0].class = classes::ROAD;
        assert!(s.validate().is_err());
        let mut s = scenario();
        s.objects[0].death = 10;
        assert!(s.validate().is_err());
        assert!(Scenario::from_toml("frames = 3\nseed = 1\nunknown = 2").is_err());
    }

    #[test]
    fn toml_example_parses() {
        let text = "frames = 5\nseed = 9\n[[objects]]\nid = 2\nclass = 30\nbirth = 0\ndeath = 4\nposition = [1.0, 1.0, 0.0]\nsize = [0.6, 0.6, 1.7]\npoints = [22, 290]\n";
        let s = Scenario::from_toml(text).unwrap();
        assert_eq!(s.objects[0].class, classes::PERSON);
        assert_eq!(s.noise, NoiseSpec::default());
    }
}
