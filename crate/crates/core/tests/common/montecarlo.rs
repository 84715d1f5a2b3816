//! Sampling estimate of the IoU of two axis-aligned boxes.

use nextstop::geometry::Box3D;
use rand::Rng;

pub fn iou(a: &Box3D, b: &Box3D, samples: usize, rng: &mut impl Rng) -> f64 {
    let (alo, ahi, blo, bhi) = (a.min_corner(), a.max_corner(), b.min_corner(), b.max_corner());
    let lo: Vec<f64> = (0..3).map(|k| alo[k].min(blo[k])).collect();
    let hi: Vec<f64> = (0..3).map(|k| ahi[k].max(bhi[k])).collect();
    let inside = |p: &[f64; 3], lo: &[f64; 3], hi: &[f64; 3]| (0..3).all(|k| lo[k] <= p[k] && p[k] <= hi[k]);
    let (mut both, mut either) = (0u64, 0u64);
    for _ in 0..samples {
        let p = [
            rng.random_range(lo[0]..hi[0]),
            rng.random_range(lo[1]..hi[1]),
            rng.random_range(lo[2]..hi[2]),
        ];
        let (ia, ib) = (inside(&p, &alo, &ahi), inside(&p, &blo, &bhi));
        both += u64::from(ia && ib);
        either += u64::from(ia || ib);
    }
    both as f64 / either.max(1) as f64
}
