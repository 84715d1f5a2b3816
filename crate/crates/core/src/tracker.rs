//! Stage 1: per-frame box tracking with candidate/active tracklets.
//!
//! Each class group runs independently. Per frame: predict every
//! tracklet, split detections by score, associate against active
//! tracklets first and candidates second, spawn candidates from leftover
//! high-score detections, then apply the lifecycle transitions.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::association::{base_block, AssociationError, MatchThresholds, TrackTarget};
use crate::classes::ClassGroup;
use crate::geometry::{Box3D, MatchingMetric, SemanticClass};
use crate::motion::{self, KalmanParams, KalmanState, Measurement, MotionError};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("invalid tracker configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Association(#[from] AssociationError),
}

impl From<MotionError> for TrackerError {
    fn from(e: MotionError) -> Self {
        TrackerError::Association(e.into())
    }
}

/// Lifecycle and association parameters of one class group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    /// Detections scoring at least this are "high".
    pub det_split_threshold: f64,
    pub high_match_threshold: f64,
    pub low_match_threshold: f64,
    pub min_hits: u32,
    pub max_age: u32,
    pub death_age: u32,
}

impl GroupConfig {
    pub const VEHICLES: GroupConfig = GroupConfig {
        det_split_threshold: 0.7,
        high_match_threshold: -0.2,
        low_match_threshold: -0.5,
        min_hits: 2,
        max_age: 7,
        death_age: 10,
    };
    pub const BIKES: GroupConfig = GroupConfig {
        det_split_threshold: 0.8,
        high_match_threshold: -0.4,
        low_match_threshold: -0.7,
        min_hits: 3,
        max_age: 4,
        death_age: 7,
    };
    pub const PEDESTRIAN: GroupConfig = GroupConfig {
        det_split_threshold: 0.3,
        high_match_threshold: -0.4,
        low_match_threshold: -0.7,
        min_hits: 3,
        max_age: 4,
        death_age: 7,
    };

    pub fn defaults_for(group: ClassGroup) -> GroupConfig {
        match group {
            ClassGroup::Vehicles => Self::VEHICLES,
            ClassGroup::Bikes => Self::BIKES,
            ClassGroup::Pedestrian => Self::PEDESTRIAN,
        }
    }

    fn validate(&self, group: ClassGroup) -> Result<(), TrackerError> {
        let fail = |msg: String| Err(TrackerError::Config(format!("{group}: {msg}")));
        if !(0.0..=1.0).contains(&self.det_split_threshold) {
            return fail(format!("det_split_threshold {} outside [0, 1]", self.det_split_threshold));
        }
        for (name, t) in [
            ("high_match_threshold", self.high_match_threshold),
            ("low_match_threshold", self.low_match_threshold),
        ] {
            if !(t > -1.0 && t <= 1.0) {
                return fail(format!("{name} {t} outside (-1, 1]"));
            }
        }
        if self.min_hits == 0 {
            return fail("min_hits must be at least 1".into());
        }
        if self.death_age <= self.max_age {
            return fail(format!(
                "death_age ({}) must exceed max_age ({})",
                self.death_age, self.max_age
            ));
        }
        Ok(())
    }
}

/// Switches reproducing the component ablations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub use_kalman: bool,
    pub matching_metric: MatchingMetric,
    pub use_candidate_state: bool,
    pub use_score_split: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            use_kalman: true,
            matching_metric: MatchingMetric::Diou,
            use_candidate_state: true,
            use_score_split: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub vehicles: GroupConfig,
    pub bikes: GroupConfig,
    pub pedestrian: GroupConfig,
    pub ablation: Ablation,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            vehicles: GroupConfig::VEHICLES,
            bikes: GroupConfig::BIKES,
            pedestrian: GroupConfig::PEDESTRIAN,
            ablation: Ablation::default(),
        }
    }
}

impl TrackerConfig {
    pub fn group(&self, group: ClassGroup) -> &GroupConfig {
        match group {
            ClassGroup::Vehicles => &self.vehicles,
            ClassGroup::Bikes => &self.bikes,
            ClassGroup::Pedestrian => &self.pedestrian,
        }
    }

    pub fn validate(&self) -> Result<(), TrackerError> {
        for g in ClassGroup::ALL {
            self.group(g).validate(g)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LifecycleState {
    Candidate,
    Active,
}

/// One tracked object.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub track_id: u32,
    pub group: ClassGroup,
    pub kstate: KalmanState,
    pub state: LifecycleState,
    /// Consecutive frames with a matched detection.
    pub hit_streak: u32,
    pub time_since_update: u32,
    pub age: u32,
    /// Classes of every absorbed detection, oldest first.
    pub class_votes: Vec<SemanticClass>,
    pub last_score: f64,
}

impl Tracklet {
    fn birth(track_id: u32, group: ClassGroup, det: &Box3D, params: &KalmanParams, state: LifecycleState) -> Self {
        Tracklet {
            track_id,
            group,
            kstate: motion::init(det, params),
            state,
            hit_streak: 1,
            time_since_update: 0,
            age: 1,
            class_votes: vec![det.class_id],
            last_score: det.score,
        }
    }

    pub fn majority_class(&self) -> SemanticClass {
        majority_class(&self.class_votes)
    }

    /// Current box estimate, labelled with the majority class.
    pub fn current_box(&self) -> Box3D {
        self.kstate.to_box(self.last_score, self.majority_class())
    }
}

/// Mode of the votes; ties go to the class voted most recently.
///
/// # Panics
/// On an empty vote list.
pub fn majority_class(votes: &[SemanticClass]) -> SemanticClass {
    assert!(!votes.is_empty(), "tracklet without class votes");
    // (count, position of latest vote)
    let mut tally: Vec<(SemanticClass, usize, usize)> = Vec::new();
    for (pos, &c) in votes.iter().enumerate() {
        match tally.iter_mut().find(|(k, _, _)| *k == c) {
            Some(entry) => {
                entry.1 += 1;
                entry.2 = pos;
            }
            None => tally.push((c, 1, pos)),
        }
    }
    tally
        .into_iter()
        .max_by_key(|&(_, count, last)| (count, last))
        .map(|(c, _, _)| c)
        .unwrap()
}

/// Mutable view that lets the base block correct a tracklet.
struct FilterView<'a> {
    tracklet: &'a mut Tracklet,
    params: &'a KalmanParams,
    use_kalman: bool,
}

impl TrackTarget for FilterView<'_> {
    fn predicted_box(&self) -> Box3D {
        self.tracklet.current_box()
    }

    fn absorb(&mut self, detection: &Box3D) -> Result<(), MotionError> {
        let t = &mut *self.tracklet;
        let z = Measurement::from_box(detection);
        if self.use_kalman {
            t.kstate = motion::update(&t.kstate, &z, self.params)?;
        } else {
            t.kstate.x.fixed_rows_mut::<{ motion::MEAS_DIM }>(0).copy_from(&z.z);
        }
        t.hit_streak += 1;
        t.time_since_update = 0;
        t.class_votes.push(detection.class_id);
        t.last_score = detection.score;
        Ok(())
    }
}

fn views<'a>(
    items: Vec<(usize, &'a mut Tracklet)>,
    params: &'a KalmanParams,
    use_kalman: bool,
) -> (Vec<usize>, Vec<FilterView<'a>>) {
    items
        .into_iter()
        .map(|(k, tracklet)| {
            (
                k,
                FilterView {
                    tracklet,
                    params,
                    use_kalman,
                },
            )
        })
        .unzip()
}

/// A tracklet box emitted for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedBox {
    pub group: ClassGroup,
    pub track_id: u32,
    /// Majority class of the tracklet.
    pub class_id: SemanticClass,
    pub bbox: Box3D,
}

/// Split by score; `score >= threshold` is high. Order is preserved.
pub fn split_detections(dets: &[Box3D], threshold: f64) -> (Vec<Box3D>, Vec<Box3D>) {
    dets.iter().partition(|d| d.score >= threshold)
}

#[derive(Debug, Clone)]
struct GroupTracker {
    group: ClassGroup,
    config: GroupConfig,
    params: KalmanParams,
    tracklets: Vec<Tracklet>,
    next_id: u32,
}

impl GroupTracker {
    fn new(group: ClassGroup, config: GroupConfig) -> Self {
        GroupTracker {
            group,
            config,
            params: motion::params_for_group(group),
            tracklets: Vec::new(),
            next_id: 1,
        }
    }

    fn corrected(&self, dets: &[Box3D]) -> Vec<Box3D> {
        dets.iter()
            .filter_map(|d| {
                match motion::apply_offsets(&Measurement::from_box(d), &self.params) {
                    Ok(z) => Some(z.to_box(d.score, d.class_id)),
                    Err(e) => {
                        warn!(group = %self.group, "dropping detection: {e}");
                        None
                    }
                }
            })
            .collect()
    }

    fn step(&mut self, dets: &[Box3D], ablation: &Ablation) -> Result<(), TrackerError> {
        let cfg = self.config;

        for t in &mut self.tracklets {
            if ablation.use_kalman {
                t.kstate = motion::predict(&t.kstate, &self.params);
            }
            t.age += 1;
            t.time_since_update += 1;
        }

        let dets = self.corrected(dets);
        let (high, low) = if ablation.use_score_split {
            split_detections(&dets, cfg.det_split_threshold)
        } else {
            (dets, Vec::new())
        };
        let thresholds = MatchThresholds {
            high: cfg.high_match_threshold,
            low: cfg.low_match_threshold,
        };

        let was_active: Vec<bool> = self
            .tracklets
            .iter()
            .map(|t| t.state == LifecycleState::Active)
            .collect();
        let mut matched = vec![false; self.tracklets.len()];

        let (active, candidates): (Vec<_>, Vec<_>) = self
            .tracklets
            .iter_mut()
            .enumerate()
            .partition(|(k, _)| was_active[*k]);
        let (active_idx, mut active_views) = views(active, &self.params, ablation.use_kalman);
        let (cand_idx, mut cand_views) = views(candidates, &self.params, ablation.use_kalman);

        let first = base_block(&high, &low, &mut active_views, thresholds, ablation.matching_metric)?;
        for &(t, _) in &first.matched {
            matched[active_idx[t]] = true;
        }
        let rest_high: Vec<Box3D> = first.unmatched_high.iter().map(|&i| high[i]).collect();
        let rest_low: Vec<Box3D> = first.unmatched_low.iter().map(|&i| low[i]).collect();

        let second = base_block(&rest_high, &rest_low, &mut cand_views, thresholds, ablation.matching_metric)?;
        for &(t, _) in &second.matched {
            matched[cand_idx[t]] = true;
        }
        drop(active_views);
        drop(cand_views);

        for (t, hit) in self.tracklets.iter_mut().zip(&matched) {
            if !hit {
                t.hit_streak = 0;
            }
        }

        // leftover low-score detections are discarded
        let newborn_state = if ablation.use_candidate_state {
            LifecycleState::Candidate
        } else {
            LifecycleState::Active
        };
        for &i in &second.unmatched_high {
            let id = self.next_id;
            self.next_id += 1;
            self.tracklets
                .push(Tracklet::birth(id, self.group, &rest_high[i], &self.params, newborn_state));
            matched.push(true);
        }

        let mut k = 0;
        self.tracklets.retain_mut(|t| {
            let hit = matched[k];
            k += 1;
            transition(t, hit, &cfg, ablation.use_candidate_state)
        });
        Ok(())
    }

    fn emitted(&self) -> impl Iterator<Item = TrackedBox> + '_ {
        self.tracklets
            .iter()
            .filter(|t| t.state == LifecycleState::Active)
            .map(|t| {
                let bbox = t.current_box();
                TrackedBox {
                    group: self.group,
                    track_id: t.track_id,
                    class_id: bbox.class_id,
                    bbox,
                }
            })
    }
}

/// Apply the lifecycle rules after association. Returns false when the
/// tracklet is terminated.
fn transition(t: &mut Tracklet, matched: bool, cfg: &GroupConfig, candidate_state: bool) -> bool {
    match t.state {
        LifecycleState::Active if t.time_since_update > cfg.max_age => {
            if !candidate_state {
                return false;
            }
            t.state = LifecycleState::Candidate;
            t.hit_streak = 0;
            true
        }
        LifecycleState::Active => true,
        LifecycleState::Candidate => {
            if matched && t.hit_streak >= cfg.min_hits && t.time_since_update < cfg.max_age {
                t.state = LifecycleState::Active;
                true
            } else {
                t.time_since_update <= cfg.death_age
            }
        }
    }
}

/// Stage-1 tracker over all class groups of one sequence.
#[derive(Debug, Clone)]
pub struct Tracker {
    ablation: Ablation,
    groups: [GroupTracker; 3],
}

impl Tracker {
    pub fn new(config: &TrackerConfig) -> Result<Self, TrackerError> {
        config.validate()?;
        Ok(Tracker {
            ablation: config.ablation,
            groups: ClassGroup::ALL.map(|g| GroupTracker::new(g, *config.group(g))),
        })
    }

    /// Advance one frame. Detections are raw (offsets are applied here);
    /// classes outside the tracked groups are ignored. Returns the active
    /// tracklets, ordered by group then track id.
    pub fn step(&mut self, detections: &[Box3D]) -> Result<Vec<TrackedBox>, TrackerError> {
        let mut out = Vec::new();
        for g in &mut self.groups {
            let mine: Vec<Box3D> = detections
                .iter()
                .filter(|d| ClassGroup::of(d.class_id) == Some(g.group))
                .copied()
                .collect();
            g.step(&mine, &self.ablation)?;
            out.extend(g.emitted());
        }
        Ok(out)
    }

    /// Live tracklets (candidate and active) of a group, by track id.
    pub fn tracklets(&self, group: ClassGroup) -> &[Tracklet] {
        &self.groups[group.index()].tracklets
    }
}

/// Run a whole sequence through a fresh tracker.
pub fn run_sequence<I, E>(frames: I, config: &TrackerConfig) -> Result<Vec<Vec<TrackedBox>>, E>
where
    I: IntoIterator<Item = Result<Vec<Box3D>, E>>,
    E: From<TrackerError>,
{
    let mut tracker = Tracker::new(config)?;
    frames
        .into_iter()
        .map(|dets| Ok(tracker.step(&dets?)?))
        .collect()
}
