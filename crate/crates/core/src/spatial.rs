//! Static 3D k-d tree for nearest-point queries.

/// Balanced k-d tree over a fixed point set. Query results refer to
/// positions in the slice the tree was built from.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    // implicit tree: node at the median of each range, split axis by depth
    order: Vec<usize>,
}

impl KdTree {
    pub fn build(points: &[[f64; 3]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build_range(points, &mut order, 0);
        KdTree {
            points: points.to_vec(),
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the closest point. Equidistant
    /// points resolve to the lowest index.
    pub fn nearest(&self, query: [f64; 3]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        self.search(&self.order, 0, query, &mut best);
        best
    }

    fn search(&self, range: &[usize], depth: usize, q: [f64; 3], best: &mut Option<(usize, f64)>) {
        if range.is_empty() {
            return;
        }
        let mid = range.len() / 2;
        let idx = range[mid];
        let p = self.points[idx];
        let d2 = dist2(p, q);
        let better = match *best {
            None => true,
            Some((bi, bd)) => d2 < bd || (d2 == bd && idx < bi),
        };
        if better {
            *best = Some((idx, d2));
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff <= 0.0 {
            (&range[..mid], &range[mid + 1..])
        } else {
            (&range[mid + 1..], &range[..mid])
        };
        self.search(near, depth + 1, q, best);
        // <= keeps equidistant candidates on the far side reachable
        if best.is_none_or(|(_, bd)| diff * diff <= bd) {
            self.search(far, depth + 1, q, best);
        }
    }
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn build_range(points: &[[f64; 3]], range: &mut [usize], depth: usize) {
    if range.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = range.len() / 2;
    range.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let (left, right) = range.split_at_mut(mid);
    build_range(points, left, depth + 1);
    build_range(points, &mut right[1..], depth + 1);
}
