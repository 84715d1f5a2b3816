//! Stage 2: turn tracked boxes into per-point panoptic labels.
//!
//! Each emitted box claims the Things points inside it plus the whole
//! network instance nearest to its center. Points claimed by several
//! boxes go to the box for which they make up the larger share. Box
//! identities are mapped to sequence-unique instance ids through
//! [`IdMemory`]; the remaining network instances are relabelled or
//! suppressed by size.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::classes::{self, ClassGroup};
use crate::geometry::{points_in_box, Box3D, SemanticClass};
use crate::kittiio::{FramePanoptic, MAX_INSTANCE_ID};
use crate::spatial::KdTree;
use crate::tracker::TrackedBox;

/// Untracked network instances smaller than this are cleared to (0, 0).
pub const DEFAULT_IGNORE_SIZE: usize = 25;

/// Box pairs sharing more than this many points count as overlapping.
pub const OVERLAP_MIN_SHARED: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabelError {
    #[error("instance id space exhausted (more than {MAX_INSTANCE_ID} ids in one sequence)")]
    IdsExhausted,
}

/// Nearest-instance lookup over the Things points of one frame that
/// carry a network instance id.
#[derive(Debug, Clone)]
pub struct ThingsIndex {
    tree: KdTree,
    frame_index: Vec<usize>,
}

impl ThingsIndex {
    pub fn build(frame: &FramePanoptic) -> Self {
        let frame_index: Vec<usize> = (0..frame.len())
            .filter(|&i| frame.is_thing_point(i) && frame.instance[i] != 0)
            .collect();
        let pts: Vec<[f64; 3]> = frame_index.iter().map(|&i| frame.points[i]).collect();
        ThingsIndex {
            tree: KdTree::build(&pts),
            frame_index,
        }
    }

    /// Frame index of the indexed point closest to `query`.
    pub fn nearest(&self, query: [f64; 3]) -> Option<usize> {
        self.tree.nearest(query).map(|(k, _)| self.frame_index[k])
    }
}

/// Points a tracked box claims: Things points inside the box, united
/// with every point of the network instance nearest to the box center.
/// Sorted ascending.
pub fn associate_box_points(bbox: &Box3D, frame: &FramePanoptic, index: &ThingsIndex) -> Vec<usize> {
    let mut claimed: BTreeSet<usize> = points_in_box(&frame.points, bbox)
        .into_iter()
        .filter(|&i| frame.is_thing_point(i))
        .collect();
    if let Some(seed) = index.nearest(bbox.center()) {
        let inst = frame.instance[seed];
        claimed.extend((0..frame.len()).filter(|&i| frame.instance[i] == inst && frame.is_thing_point(i)));
    }
    claimed.into_iter().collect()
}

/// Points claimed by one tracked box.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxPoints {
    pub group: ClassGroup,
    pub track_id: u32,
    pub class_id: SemanticClass,
    /// Sorted frame indices.
    pub points: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OverlapStats {
    /// Pairs sharing more than [`OVERLAP_MIN_SHARED`] points.
    pub overlapping_pairs: usize,
    /// Points that had to be taken from a box.
    pub reassigned_points: usize,
}

fn share(shared: usize, total: usize) -> f64 {
    shared as f64 / total as f64
}

/// Make claimed point sets disjoint.
///
/// Boxes are visited pairwise in ascending `(track_id, group)` order. The
/// shared points of a pair go to the box whose shared/total ratio is
/// larger (the earlier box on ties); the same rule applies to pairs
/// sharing only a handful of points, since a point can carry one instance.
pub fn resolve_overlaps(boxes: &mut [BoxPoints]) -> OverlapStats {
    boxes.sort_by_key(|b| (b.track_id, b.group));
    let mut stats = OverlapStats::default();
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            let shared: BTreeSet<usize> = {
                let a: BTreeSet<_> = boxes[i].points.iter().collect();
                boxes[j].points.iter().filter(|p| a.contains(p)).copied().collect()
            };
            if shared.is_empty() {
                continue;
            }
            if shared.len() > OVERLAP_MIN_SHARED {
                stats.overlapping_pairs += 1;
            }
            stats.reassigned_points += shared.len();
            let ratio_i = share(shared.len(), boxes[i].points.len());
            let ratio_j = share(shared.len(), boxes[j].points.len());
            let loser = if ratio_i >= ratio_j { j } else { i };
            boxes[loser].points.retain(|p| !shared.contains(p));
        }
    }
    stats
}

/// Maps `(class group, track id)` to sequence-unique instance ids and
/// hands out fresh ids for untracked instances from the same counter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdMemory {
    ids: BTreeMap<(ClassGroup, u32), u32>,
    next_free: u32,
}

impl Default for IdMemory {
    fn default() -> Self {
        IdMemory {
            ids: BTreeMap::new(),
            next_free: 1,
        }
    }
}

impl IdMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lookup(&self, group: ClassGroup, track_id: u32) -> Option<u32> {
        self.ids.get(&(group, track_id)).copied()
    }

    pub fn get_or_allocate(&mut self, group: ClassGroup, track_id: u32) -> Result<u32, LabelError> {
        if let Some(id) = self.lookup(group, track_id) {
            return Ok(id);
        }
        let id = self.fresh()?;
        self.ids.insert((group, track_id), id);
        Ok(id)
    }

    /// An id never handed out before in this sequence.
    pub fn fresh(&mut self) -> Result<u32, LabelError> {
        if self.next_free > MAX_INSTANCE_ID {
            return Err(LabelError::IdsExhausted);
        }
        let id = self.next_free;
        self.next_free += 1;
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Final per-point labels of one frame.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabeledFrame {
    pub semantic: Vec<SemanticClass>,
    pub instance: Vec<u32>,
}

/// Assign the output label of every point.
///
/// * points of a tracked box: the box's class and its [`IdMemory`] id
/// * leftover network Things instances of at least `ignore_size` points:
///   network class and a fresh id
/// * smaller leftovers, and Things points without a network instance: (0, 0)
/// * Stuff: network class, instance 0
///
/// `tracked` must be disjoint (see [`resolve_overlaps`]).
pub fn label_frame(
    frame: &FramePanoptic,
    tracked: &[BoxPoints],
    memory: &mut IdMemory,
    ignore_size: usize,
) -> Result<LabeledFrame, LabelError> {
    let n = frame.len();
    let mut out = LabeledFrame {
        semantic: frame.semantic.clone(),
        instance: vec![0; n],
    };
    let mut claimed = vec![false; n];
    for b in tracked {
        if b.points.is_empty() {
            continue;
        }
        let id = memory.get_or_allocate(b.group, b.track_id)?;
        for &p in &b.points {
            debug_assert!(!claimed[p], "point {p} claimed twice");
            claimed[p] = true;
            out.semantic[p] = b.class_id;
            out.instance[p] = id;
        }
    }

    let mut leftovers: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for i in (0..n).filter(|&i| !claimed[i] && frame.is_thing_point(i)) {
        leftovers.entry(frame.instance[i]).or_default().push(i);
    }
    for (inst, pts) in leftovers {
        if inst != 0 && pts.len() >= ignore_size {
            let id = memory.fresh()?;
            for p in pts {
                out.instance[p] = id;
            }
        } else {
            for p in pts {
                out.semantic[p] = classes::UNLABELED;
            }
        }
    }
    Ok(out)
}

/// Full Stage 2 for one frame: box-point association, overlap resolution
/// and labelling. `frame` must be in the same coordinate frame as the boxes.
pub fn label_tracked_frame(
    frame: &FramePanoptic,
    boxes: &[TrackedBox],
    memory: &mut IdMemory,
    ignore_size: usize,
) -> Result<(LabeledFrame, OverlapStats), LabelError> {
    let index = ThingsIndex::build(frame);
    let mut claims: Vec<BoxPoints> = boxes
        .iter()
        .map(|t| BoxPoints {
            group: t.group,
            track_id: t.track_id,
            class_id: t.class_id,
            points: associate_box_points(&t.bbox, frame, &index),
        })
        .collect();
    let stats = resolve_overlaps(&mut claims);
    Ok((label_frame(frame, &claims, memory, ignore_size)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::{CAR, PERSON, ROAD, TRUCK, VEGETATION};

    fn frame(points: Vec<([f64; 3], u16, u32)>) -> FramePanoptic {
        FramePanoptic {
            semantic: points.iter().map(|p| p.1).collect(),
            instance: points.iter().map(|p| p.2).collect(),
            confidence: vec![1.0; points.len()],
            points: points.into_iter().map(|p| p.0).collect(),
        }
    }

    fn bx(center: [f64; 3], dims: [f64; 3]) -> Box3D {
        Box3D::new(center, dims, 1.0, CAR).unwrap()
    }

    #[test]
    fn box_over_isolated_instance() {
        let f = frame(vec![
            ([0.0, 0.0, 0.0], CAR, 1),
            ([0.5, 0.0, 0.0], CAR, 1),
            ([10.0, 0.0, 0.0], CAR, 2),
            ([0.2, 0.2, -0.5], ROAD, 0),
        ]);
        let idx = ThingsIndex::build(&f);
        assert_eq!(associate_box_points(&bx([0.25, 0.0, 0.0], [1.0, 1.0, 2.0]), &f, &idx), vec![0, 1]);
    }

    #[test]
    fn stuff_only_box_takes_nearest_instance() {
        let f = frame(vec![
            ([0.0, 0.0, 0.0], VEGETATION, 0),
            ([0.1, 0.0, 0.0], ROAD, 0),
            ([2.0, 0.0, 0.0], CAR, 4),
            ([2.3, 0.0, 0.0], CAR, 4),
            ([6.0, 0.0, 0.0], CAR, 5),
        ]);
        let idx = ThingsIndex::build(&f);
        assert_eq!(associate_box_points(&bx([0.0; 3], [1.0; 3]), &f, &idx), vec![2, 3]);
    }

    #[test]
    fn no_things_means_nothing_claimed() {
        let f = frame(vec![([0.0; 3], ROAD, 0)]);
        let idx = ThingsIndex::build(&f);
        assert!(associate_box_points(&bx([0.0; 3], [1.0; 3]), &f, &idx).is_empty());
    }

    fn claim(track_id: u32, points: Vec<usize>) -> BoxPoints {
        BoxPoints {
            group: ClassGroup::Vehicles,
            track_id,
            class_id: CAR,
            points,
        }
    }

    #[test]
    fn shared_points_follow_higher_ratio() {
        // 18 shared: 18/130 = 13.8% of red, 18/205 = 8.8% of blue
        let shared: Vec<usize> = (0..18).collect();
        let red: Vec<usize> = shared.iter().copied().chain(100..212).collect();
        let blue: Vec<usize> = shared.iter().copied().chain(300..487).collect();
        assert_eq!((red.len(), blue.len()), (130, 205));
        let mut boxes = vec![claim(2, blue), claim(1, red)];
        let stats = resolve_overlaps(&mut boxes);
        assert_eq!(stats.overlapping_pairs, 1);
        let red = boxes.iter().find(|b| b.track_id == 1).unwrap();
        let blue = boxes.iter().find(|b| b.track_id == 2).unwrap();
        assert!(shared.iter().all(|p| red.points.contains(p)));
        assert!(shared.iter().all(|p| !blue.points.contains(p)));
        assert_eq!(blue.points.len(), 187);
    }

    #[test]
    fn small_overlaps_use_the_same_rule() {
        let mut boxes = vec![claim(1, vec![0, 1, 2, 3, 4, 5, 6, 7]), claim(2, vec![7, 8])];
        let stats = resolve_overlaps(&mut boxes);
        assert_eq!(stats.overlapping_pairs, 0);
        assert_eq!(boxes[1].points, vec![7, 8]);
        assert_eq!(boxes[0].points, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn disjoint_claims_unchanged() {
        let mut boxes = vec![claim(1, vec![0, 1]), claim(2, vec![2, 3])];
        let before = boxes.clone();
        assert_eq!(resolve_overlaps(&mut boxes), OverlapStats::default());
        assert_eq!(boxes, before);
    }

    #[test]
    fn three_way_overlap_becomes_disjoint() {
        let mut boxes = vec![
            claim(3, vec![0, 1, 2, 3, 4, 10, 11]),
            claim(1, vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 9]),
            claim(2, vec![3, 4, 5, 6, 12]),
        ];
        let union: BTreeSet<usize> = boxes.iter().flat_map(|b| b.points.clone()).collect();
        resolve_overlaps(&mut boxes);
        let total: usize = boxes.iter().map(|b| b.points.len()).sum();
        let after: BTreeSet<usize> = boxes.iter().flat_map(|b| b.points.clone()).collect();
        assert_eq!(total, after.len());
        assert_eq!(after, union);
    }

    #[test]
    fn id_memory_is_keyed_by_group() {
        let mut m = IdMemory::new();
        let a = m.get_or_allocate(ClassGroup::Vehicles, 1).unwrap();
        let b = m.get_or_allocate(ClassGroup::Pedestrian, 1).unwrap();
        assert_ne!(a, b);
        assert_eq!(m.get_or_allocate(ClassGroup::Vehicles, 1).unwrap(), a);
        let f = m.fresh().unwrap();
        assert!(f != a && f != b);
    }

    #[test]
    fn id_memory_fails_past_16_bits() {
        let mut m = IdMemory::new();
        for _ in 0..MAX_INSTANCE_ID {
            m.fresh().unwrap();
        }
        assert_eq!(m.fresh(), Err(LabelError::IdsExhausted));
    }

    #[test]
    fn small_untracked_blob_is_cleared() {
        let mut pts: Vec<([f64; 3], u16, u32)> = (0..24).map(|k| ([k as f64, 0.0, 0.0], PERSON, 7)).collect();
        pts.extend((0..25).map(|k| ([k as f64, 5.0, 0.0], TRUCK, 8)));
        pts.push(([0.0, -3.0, 0.0], ROAD, 0));
        pts.push(([0.0, -4.0, 0.0], CAR, 0));
        let f = frame(pts);
        let mut m = IdMemory::new();
        let out = label_frame(&f, &[], &mut m, DEFAULT_IGNORE_SIZE).unwrap();
        assert!((0..24).all(|i| out.semantic[i] == 0 && out.instance[i] == 0));
        assert!((24..49).all(|i| out.semantic[i] == TRUCK && out.instance[i] == 1));
        assert_eq!((out.semantic[49], out.instance[49]), (ROAD, 0));
        assert_eq!((out.semantic[50], out.instance[50]), (0, 0));
    }

    #[test]
    fn tracked_points_take_track_class_and_memory_id() {
        let f = frame(vec![([0.0; 3], TRUCK, 3), ([1.0, 0.0, 0.0], TRUCK, 3), ([5.0, 0.0, 0.0], ROAD, 0)]);
        let mut m = IdMemory::new();
        m.fresh().unwrap();
        let out = label_frame(&f, &[claim(4, vec![0, 1])], &mut m, DEFAULT_IGNORE_SIZE).unwrap();
        assert_eq!(out.semantic, vec![CAR, CAR, ROAD]);
        assert_eq!(out.instance, vec![2, 2, 0]);
        let again = label_frame(&f, &[claim(4, vec![0, 1])], &mut m, DEFAULT_IGNORE_SIZE).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn labelling_is_idempotent_from_the_same_memory() {
        let pts: Vec<([f64; 3], u16, u32)> = (0..30).map(|k| ([k as f64, 0.0, 0.0], CAR, 2)).collect();
        let f = frame(pts);
        let m0 = IdMemory::new();
        let (mut a, mut b) = (m0.clone(), m0.clone());
        assert_eq!(
            label_frame(&f, &[], &mut a, 25).unwrap(),
            label_frame(&f, &[], &mut b, 25).unwrap()
        );
    }
}
