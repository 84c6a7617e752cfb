//! Exact nearest-neighbor search over 3-D points.

/// A static k-d tree over borrowed points. Queries return the same distances
/// as an exhaustive scan.
#[derive(Debug, Clone)]
pub struct KdTree<'a> {
    points: &'a [[f64; 3]],
    nodes: Vec<Node>,
    root: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

pub(crate) fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

impl<'a> KdTree<'a> {
    pub fn new(points: &'a [[f64; 3]]) -> Self {
        let mut tree = Self {
            points,
            nodes: Vec::with_capacity(points.len()),
            root: None,
        };
        let mut idx: Vec<usize> = (0..points.len()).collect();
        tree.root = tree.build(&mut idx, 0);
        tree
    }

    fn build(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        let pts = self.points;
        idx.select_nth_unstable_by(mid, |&a, &b| pts[a][axis].total_cmp(&pts[b][axis]));
        let point = idx[mid];
        let (lo, hi) = idx.split_at_mut(mid);
        let left = self.build(lo, depth + 1);
        let right = self.build(&mut hi[1..], depth + 1);
        self.nodes.push(Node {
            point,
            axis,
            left,
            right,
        });
        Some(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the closest point, skipping index
    /// `exclude`. Ties resolve to the lowest index.
    pub fn nearest_excluding(&self, q: &[f64; 3], exclude: Option<usize>) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        if let Some(root) = self.root {
            self.search(root, q, exclude, &mut best);
        }
        best
    }

    pub fn nearest(&self, q: &[f64; 3]) -> Option<(usize, f64)> {
        self.nearest_excluding(q, None)
    }

    fn search(&self, node: usize, q: &[f64; 3], exclude: Option<usize>, best: &mut Option<(usize, f64)>) {
        let n = self.nodes[node];
        let p = &self.points[n.point];
        if exclude != Some(n.point) {
            let d = squared_distance(q, p);
            let better = match *best {
                None => true,
                Some((bi, bd)) => d < bd || (d == bd && n.point < bi),
            };
            if better {
                *best = Some((n.point, d));
            }
        }
        let diff = q[n.axis] - p[n.axis];
        let (near, far) = if diff < 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        if let Some(c) = near {
            self.search(c, q, exclude, best);
        }
        if let Some(c) = far {
            // Points across the plane are at least |diff| away; equality is
            // still visited so ties can resolve by index.
            if best.map_or(true, |(_, bd)| diff * diff <= bd) {
                self.search(c, q, exclude, best);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(points: &[[f64; 3]], q: &[f64; 3], exclude: Option<usize>) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if Some(i) == exclude {
                continue;
            }
            let d = squared_distance(q, p);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best
    }

    #[test]
    fn empty_tree() {
        let pts: Vec<[f64; 3]> = Vec::new();
        assert!(KdTree::new(&pts).nearest(&[0.0; 3]).is_none());
    }

    #[test]
    fn duplicates_resolve_to_lowest_index() {
        let pts = vec![[1.0, 1.0, 1.0], [0.0; 3], [0.0; 3], [0.0; 3]];
        let t = KdTree::new(&pts);
        assert_eq!(t.nearest(&[0.0; 3]), Some((1, 0.0)));
        assert_eq!(t.nearest_excluding(&[0.0; 3], Some(1)), Some((2, 0.0)));
    }

    proptest! {
        #[test]
        fn matches_exhaustive_scan(
            pts in prop::collection::vec(prop::array::uniform3(-5.0f64..5.0), 1..80),
            qs in prop::collection::vec(prop::array::uniform3(-6.0f64..6.0), 1..20),
        ) {
            let t = KdTree::new(&pts);
            for q in &qs {
                prop_assert_eq!(t.nearest(q), brute(&pts, q, None));
            }
            for (i, p) in pts.iter().enumerate() {
                prop_assert_eq!(t.nearest_excluding(p, Some(i)), brute(&pts, p, Some(i)));
            }
        }
    }
}
