//! Exact 2D nearest-neighbor index.
//!
//! Median-split kd-tree stored as a reordered index array; queries prune
//! with non-strict comparisons so results match an exhaustive scan exactly,
//! including the tie rule (smallest original index among equidistant
//! points).

/// Immutable kd-tree over 2D points.
#[derive(Debug, Clone)]
pub struct KdTree2 {
    points: Vec<[f64; 2]>,
    /// Original indices arranged so every subtree occupies a contiguous
    /// slice with its split point at the middle.
    order: Vec<u32>,
}

impl KdTree2 {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        build(&points, &mut order, 0);
        KdTree2 { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Returns `(original index, distance)` of the nearest point, breaking
    /// distance ties by smallest index. `None` when the tree is empty.
    pub fn nearest(&self, query: [f64; 2]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = Candidate {
            index: u32::MAX,
            dist_sq: f64::INFINITY,
        };
        self.search(&self.order, 0, query, &mut best);
        Some((best.index as usize, best.dist_sq.sqrt()))
    }

    fn search(&self, slice: &[u32], axis: usize, query: [f64; 2], best: &mut Candidate) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let index = slice[mid];
        let point = self.points[index as usize];
        let dx = point[0] - query[0];
        let dy = point[1] - query[1];
        let dist_sq = dx * dx + dy * dy;
        if dist_sq < best.dist_sq || (dist_sq == best.dist_sq && index < best.index) {
            *best = Candidate { index, dist_sq };
        }

        let diff = query[axis] - point[axis];
        let (near, far) = if diff < 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        self.search(near, axis ^ 1, query, best);
        // Non-strict: equidistant points across the plane stay reachable so
        // the tie rule is honored.
        if diff * diff <= best.dist_sq {
            self.search(far, axis ^ 1, query, best);
        }
    }
}

struct Candidate {
    index: u32,
    dist_sq: f64,
}

fn build(points: &[[f64; 2]], slice: &mut [u32], axis: usize) {
    if slice.len() <= 1 {
        return;
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .partial_cmp(&points[b as usize][axis])
            .expect("finite coordinates")
            .then(a.cmp(&b))
    });
    let (lo, rest) = slice.split_at_mut(mid);
    build(points, lo, axis ^ 1);
    build(points, &mut rest[1..], axis ^ 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(points: &[[f64; 2]], query: [f64; 2]) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = (p[0] - query[0]).powi(2) + (p[1] - query[1]).powi(2);
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, best.1.sqrt())
    }

    #[test]
    fn empty_tree_returns_none() {
        assert!(KdTree2::new(vec![]).nearest([0.0, 0.0]).is_none());
    }

    #[test]
    fn single_point() {
        let tree = KdTree2::new(vec![[3.0, 4.0]]);
        let (i, d) = tree.nearest([0.0, 0.0]).unwrap();
        assert_eq!(i, 0);
        assert!((d - 5.0).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let points: Vec<[f64; 2]> = (0..2000)
            .map(|_| [rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)])
            .collect();
        let tree = KdTree2::new(points.clone());
        for _ in 0..500 {
            let q = [rng.gen_range(-10.0..110.0), rng.gen_range(-10.0..110.0)];
            let (ti, td) = tree.nearest(q).unwrap();
            let (bi, bd) = brute_force(&points, q);
            assert_eq!(ti, bi);
            assert_eq!(td, bd);
        }
    }

    #[test]
    fn ties_resolve_to_smallest_index() {
        // Integer grid points queried at cell centers: four-way ties.
        let mut points = Vec::new();
        for y in 0..10 {
            for x in 0..10 {
                points.push([x as f64, y as f64]);
            }
        }
        let tree = KdTree2::new(points.clone());
        for y in 0..9 {
            for x in 0..9 {
                let q = [x as f64 + 0.5, y as f64 + 0.5];
                let (ti, td) = tree.nearest(q).unwrap();
                let (bi, bd) = brute_force(&points, q);
                assert_eq!(ti, bi, "query {q:?}");
                assert_eq!(td, bd);
            }
        }
    }

    #[test]
    fn duplicate_points_return_first_occurrence() {
        let points = vec![[2.0, 2.0], [1.0, 1.0], [1.0, 1.0]];
        let tree = KdTree2::new(points);
        let (i, d) = tree.nearest([1.0, 1.0]).unwrap();
        assert_eq!(i, 1);
        assert_eq!(d, 0.0);
    }
}
