//! Association score by explicit tube enumeration.

use std::collections::{BTreeMap, BTreeSet};

/// One frame: (gt class, gt instance, pred instance) per point.
pub type Frame = Vec<(u16, u32, u32)>;

fn is_thing(c: u16) -> bool {
    [10, 11, 15, 18, 20, 30, 31, 32].contains(&c)
}

/// Mean over ground-truth tubes of (1/|t|) * sum over predicted tubes s
/// of |s ∩ t| * IoU(s, t). Ground-truth instances with fewer than
/// `min_points` points in a frame are removed from that frame, together
/// with their points' predictions.
pub fn s_assoc(frames: &[Frame], min_points: usize) -> f64 {
    let mut gt: BTreeMap<u32, BTreeSet<(usize, usize)>> = BTreeMap::new();
    let mut pred: BTreeMap<u32, BTreeSet<(usize, usize)>> = BTreeMap::new();
    for (f, points) in frames.iter().enumerate() {
        let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
        for &(c, g, _) in points {
            if c != 0 && is_thing(c) && g != 0 {
                *sizes.entry(g).or_default() += 1;
            }
        }
        for (i, &(c, g, p)) in points.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let gt_point = is_thing(c) && g != 0;
            if gt_point && sizes[&g] < min_points {
                continue;
            }
            if gt_point {
                gt.entry(g).or_default().insert((f, i));
            }
            if p != 0 {
                pred.entry(p).or_default().insert((f, i));
            }
        }
    }
    if gt.is_empty() {
        return if pred.is_empty() { 1.0 } else { 0.0 };
    }
    let mut total = 0.0;
    for t in gt.values() {
        let mut score = 0.0;
        for s in pred.values() {
            let inter = s.intersection(t).count();
            if inter > 0 {
                let union = s.union(t).count();
                score += inter as f64 * (inter as f64 / union as f64);
            }
        }
        total += score / t.len() as f64;
    }
    total / gt.len() as f64
}
