//! Detection-to-tracklet data association.
//!
//! Affinities are box similarities (DIoU by default), matched with a
//! rectangular Hungarian solver and then cut at a per-pass threshold.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geometry::{Box3D, GeometryError, MatchingMetric};
use crate::motion::MotionError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssociationError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Motion(#[from] MotionError),
}

/// Maximum-total-similarity matching of `min(rows, cols)` pairs.
///
/// Pairs come back sorted by row. Entries must be finite.
pub fn solve_assignment(similarity: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let (rows, cols) = similarity.shape();
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    debug_assert!(similarity.iter().all(|v| v.is_finite()));
    if rows <= cols {
        let cost = |i: usize, j: usize| -similarity[(i, j)];
        hungarian(rows, cols, cost)
            .into_iter()
            .enumerate()
            .collect()
    } else {
        let cost = |i: usize, j: usize| -similarity[(j, i)];
        let mut pairs: Vec<_> = hungarian(cols, rows, cost)
            .into_iter()
            .enumerate()
            .map(|(j, i)| (i, j))
            .collect();
        pairs.sort_unstable();
        pairs
    }
}

/// Shortest augmenting path Hungarian method with row/column potentials.
/// Requires `n <= m`; returns the column assigned to each row.
fn hungarian(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based internally; index 0 is the virtual source column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[col0] = true;
            let i0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = col0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    col1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![usize::MAX; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// One association problem: detections (rows) against tracklet
/// predictions (columns).
#[derive(Debug, Clone)]
pub struct AssociationProblem {
    pub affinity: DMatrix<f64>,
    pub threshold: f64,
}

impl AssociationProblem {
    pub fn new(
        detections: &[Box3D],
        predictions: &[Box3D],
        threshold: f64,
        metric: MatchingMetric,
    ) -> Result<Self, GeometryError> {
        let mut affinity = DMatrix::zeros(detections.len(), predictions.len());
        for (i, d) in detections.iter().enumerate() {
            for (j, t) in predictions.iter().enumerate() {
                affinity[(i, j)] = metric.similarity(d, t)?;
            }
        }
        Ok(AssociationProblem {
            affinity,
            threshold,
        })
    }

    pub fn num_detections(&self) -> usize {
        self.affinity.nrows()
    }

    pub fn num_tracklets(&self) -> usize {
        self.affinity.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub detection: usize,
    pub tracklet: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssociationResult {
    pub matches: Vec<Match>,
    pub unmatched_detections: Vec<usize>,
    pub unmatched_tracklets: Vec<usize>,
}

/// Hungarian matching followed by removal of pairs below the threshold.
pub fn associate(problem: &AssociationProblem) -> AssociationResult {
    let mut det_used = vec![false; problem.num_detections()];
    let mut trk_used = vec![false; problem.num_tracklets()];
    let mut matches = Vec::new();
    for (i, j) in solve_assignment(&problem.affinity) {
        let similarity = problem.affinity[(i, j)];
        if similarity >= problem.threshold {
            det_used[i] = true;
            trk_used[j] = true;
            matches.push(Match {
                detection: i,
                tracklet: j,
                similarity,
            });
        }
    }
    let unused = |flags: Vec<bool>| {
        flags
            .into_iter()
            .enumerate()
            .filter(|(_, used)| !used)
            .map(|(k, _)| k)
            .collect()
    };
    AssociationResult {
        matches,
        unmatched_detections: unused(det_used),
        unmatched_tracklets: unused(trk_used),
    }
}

/// Something the base block can match against and correct.
pub trait TrackTarget {
    /// Box predicted for the current frame.
    fn predicted_box(&self) -> Box3D;
    /// Fold a matched detection into the track.
    fn absorb(&mut self, detection: &Box3D) -> Result<(), MotionError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchThresholds {
    pub high: f64,
    pub low: f64,
}

/// Which pass matched a tracklet, with the detection index in that pass's
/// input list.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchedDetection {
    High(usize),
    Low(usize),
}

/// Output ports of one base block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BaseBlockOutput {
    /// OUT1: high-score detections left after the first pass.
    pub unmatched_high: Vec<usize>,
    /// OUT2: low-score detections left after the second pass.
    pub unmatched_low: Vec<usize>,
    /// OUT3: tracklet index and the detection it absorbed.
    pub matched: Vec<(usize, MatchedDetection)>,
    /// OUT4: tracklets matched in neither pass.
    pub unmatched_tracklets: Vec<usize>,
}

/// Two-pass association: high-score detections against every tracklet,
/// then low-score detections against the leftovers. Matched tracklets are
/// updated in place.
///
/// Unmatched high-score detections are not offered to the second pass.
pub fn base_block<T: TrackTarget>(
    high: &[Box3D],
    low: &[Box3D],
    tracklets: &mut [T],
    thresholds: MatchThresholds,
    metric: MatchingMetric,
) -> Result<BaseBlockOutput, AssociationError> {
    let predictions: Vec<Box3D> = tracklets.iter().map(|t| t.predicted_box()).collect();

    let first = associate(&AssociationProblem::new(high, &predictions, thresholds.high, metric)?);
    let mut matched: Vec<(usize, MatchedDetection)> = first
        .matches
        .iter()
        .map(|m| (m.tracklet, MatchedDetection::High(m.detection)))
        .collect();

    let leftover = &first.unmatched_tracklets;
    let leftover_preds: Vec<Box3D> = leftover.iter().map(|&j| predictions[j]).collect();
    let second = associate(&AssociationProblem::new(low, &leftover_preds, thresholds.low, metric)?);
    matched.extend(
        second
            .matches
            .iter()
            .map(|m| (leftover[m.tracklet], MatchedDetection::Low(m.detection))),
    );
    matched.sort_unstable_by_key(|(t, _)| *t);

    for &(t, det) in &matched {
        let b = match det {
            MatchedDetection::High(i) => &high[i],
            MatchedDetection::Low(i) => &low[i],
        };
        tracklets[t].absorb(b)?;
    }

    Ok(BaseBlockOutput {
        unmatched_high: first.unmatched_detections,
        unmatched_low: second.unmatched_detections,
        matched,
        unmatched_tracklets: second
            .unmatched_tracklets
            .iter()
            .map(|&k| leftover[k])
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::diou3d;
    use proptest::prelude::*;

    fn cube_at(x: f64, score: f64) -> Box3D {
        Box3D::new([x, 0.0, 0.0], [1.0, 1.0, 1.0], score, 10).unwrap()
    }

    fn brute_force_best(sim: &DMatrix<f64>) -> f64 {
        fn rec(sim: &DMatrix<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == sim.nrows() {
                *best = best.max(acc);
                return;
            }
            for j in 0..sim.ncols() {
                if !used[j] {
                    used[j] = true;
                    rec(sim, row + 1, used, acc + sim[(row, j)], best);
                    used[j] = false;
                }
            }
        }
        // enumerate over the smaller side
        let sim = if sim.nrows() > sim.ncols() { sim.transpose() } else { sim.clone() };
        let mut best = f64::NEG_INFINITY;
        rec(&sim, 0, &mut vec![false; sim.ncols()], 0.0, &mut best);
        best
    }

    #[test]
    fn diagonal_dominant_matrix() {
        let m = DMatrix::from_row_slice(3, 3, &[0.9, 0.1, 0.2, 0.0, 0.8, 0.1, 0.3, 0.2, 0.7]);
        assert_eq!(solve_assignment(&m), vec![(0, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn single_cell_and_empty() {
        assert_eq!(solve_assignment(&DMatrix::from_element(1, 1, -0.4)), vec![(0, 0)]);
        assert!(solve_assignment(&DMatrix::<f64>::zeros(0, 3)).is_empty());
        assert!(solve_assignment(&DMatrix::<f64>::zeros(2, 0)).is_empty());
    }

    #[test]
    fn rectangular_both_orientations() {
        let wide = DMatrix::from_row_slice(2, 3, &[0.1, 0.9, 0.2, 0.8, 0.7, 0.0]);
        assert_eq!(solve_assignment(&wide), vec![(0, 1), (1, 0)]);
        let tall = wide.transpose();
        assert_eq!(solve_assignment(&tall), vec![(0, 1), (1, 0)]);
    }

    proptest! {
        #[test]
        fn solver_matches_brute_force(rows in 1usize..7, cols in 1usize..7, seed in prop::collection::vec(-256i32..=256, 36)) {
            // dyadic entries keep every partial sum exact
            let m = DMatrix::from_fn(rows, cols, |i, j| seed[i * 6 + j] as f64 / 256.0);
            let pairs = solve_assignment(&m);
            prop_assert_eq!(pairs.len(), rows.min(cols));
            let total: f64 = pairs.iter().map(|&(i, j)| m[(i, j)]).sum();
            prop_assert_eq!(total, brute_force_best(&m));
        }

        #[test]
        fn partition_and_monotone_threshold(
            xs in prop::collection::vec(-4.0f64..4.0, 0..6),
            ys in prop::collection::vec(-4.0f64..4.0, 0..6),
            t1 in -1.0f64..1.0,
            t2 in -1.0f64..1.0,
        ) {
            let dets: Vec<_> = xs.iter().map(|&x| cube_at(x, 1.0)).collect();
            let trks: Vec<_> = ys.iter().map(|&y| cube_at(y, 1.0)).collect();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = associate(&AssociationProblem::new(&dets, &trks, lo, MatchingMetric::Diou).unwrap());
            let b = associate(&AssociationProblem::new(&dets, &trks, hi, MatchingMetric::Diou).unwrap());
            for r in [&a, &b] {
                prop_assert_eq!(r.matches.len() + r.unmatched_detections.len(), dets.len());
                prop_assert_eq!(r.matches.len() + r.unmatched_tracklets.len(), trks.len());
            }
            prop_assert!(b.matches.len() <= a.matches.len());
            for m in &b.matches {
                prop_assert!(m.similarity >= hi);
            }
        }
    }

    #[test]
    fn threshold_cuts_weak_pairs() {
        // vehicles first-pass threshold
        let problem = AssociationProblem {
            affinity: DMatrix::from_row_slice(2, 2, &[-0.3, -5.0, -5.0, -0.1]),
            threshold: -0.2,
        };
        let r = associate(&problem);
        assert_eq!(r.matches.len(), 1);
        assert_eq!((r.matches[0].detection, r.matches[0].tracklet), (1, 1));
        assert_eq!(r.unmatched_detections, vec![0]);
        assert_eq!(r.unmatched_tracklets, vec![0]);
    }

    #[test]
    fn everything_below_threshold_is_unmatched() {
        let dets = [cube_at(0.0, 1.0), cube_at(20.0, 1.0)];
        let trks = [cube_at(50.0, 1.0)];
        let r = associate(&AssociationProblem::new(&dets, &trks, 0.0, MatchingMetric::Diou).unwrap());
        assert!(r.matches.is_empty());
        assert_eq!(r.unmatched_detections, vec![0, 1]);
        assert_eq!(r.unmatched_tracklets, vec![0]);
    }

    #[derive(Debug, Clone)]
    struct Fixed {
        b: Box3D,
        hits: usize,
    }

    impl TrackTarget for Fixed {
        fn predicted_box(&self) -> Box3D {
            self.b
        }
        fn absorb(&mut self, detection: &Box3D) -> Result<(), MotionError> {
            self.b = *detection;
            self.hits += 1;
            Ok(())
        }
    }

    const TH: MatchThresholds = MatchThresholds { high: -0.2, low: -0.5 };

    #[test]
    fn base_block_without_tracklets() {
        let mut none: Vec<Fixed> = Vec::new();
        let out = base_block(&[cube_at(0.0, 0.9)], &[cube_at(3.0, 0.2)], &mut none, TH, MatchingMetric::Diou).unwrap();
        assert_eq!(out.unmatched_high, vec![0]);
        assert_eq!(out.unmatched_low, vec![0]);
        assert!(out.matched.is_empty() && out.unmatched_tracklets.is_empty());
    }

    #[test]
    fn base_block_coincident_high_detection() {
        let mut trks = vec![Fixed { b: cube_at(1.0, 0.9), hits: 0 }];
        let out = base_block(&[cube_at(1.0, 0.95)], &[], &mut trks, TH, MatchingMetric::Diou).unwrap();
        assert_eq!(out.matched, vec![(0, MatchedDetection::High(0))]);
        assert!(out.unmatched_high.is_empty() && out.unmatched_low.is_empty() && out.unmatched_tracklets.is_empty());
        assert_eq!(trks[0].hits, 1);
        assert_eq!(trks[0].b.score, 0.95);
    }

    #[test]
    fn low_detection_rescues_tracklet_in_second_pass() {
        // unit cubes 0.8 apart along x: IoU = 0.2/1.8, enclosing diagonal^2 = 1.8^2 + 2
        let offset = 0.8;
        let low_diou = 0.2 / 1.8 - offset * offset / (1.8 * 1.8 + 2.0);
        let trk = cube_at(0.0, 1.0);
        let low = cube_at(offset, 0.3);
        assert!((diou3d(&trk, &low).unwrap() - low_diou).abs() < 1e-12);
        // pick thresholds so the pair fails pass one but passes pass two
        let th = MatchThresholds { high: low_diou + 0.05, low: low_diou - 0.05 };
        let mut trks = vec![Fixed { b: trk, hits: 0 }];
        let high = [cube_at(30.0, 0.9)];
        let out = base_block(&high, &[low], &mut trks, th, MatchingMetric::Diou).unwrap();
        assert_eq!(out.matched, vec![(0, MatchedDetection::Low(0))]);
        assert_eq!(out.unmatched_high, vec![0]);
        assert!(out.unmatched_low.is_empty());
        assert_eq!(trks[0].b, low);
    }

    #[test]
    fn pass_one_match_is_not_reoffered() {
        let mut trks = vec![Fixed { b: cube_at(0.0, 1.0), hits: 0 }, Fixed { b: cube_at(10.0, 1.0), hits: 0 }];
        let high = [cube_at(0.0, 0.9)];
        // this low detection sits on track 0, which is already taken
        let low = [cube_at(0.1, 0.2)];
        let out = base_block(&high, &low, &mut trks, TH, MatchingMetric::Diou).unwrap();
        assert_eq!(out.matched, vec![(0, MatchedDetection::High(0))]);
        assert_eq!(out.unmatched_low, vec![0]);
        assert_eq!(out.unmatched_tracklets, vec![1]);
        assert_eq!(trks[0].hits, 1);
    }
}
