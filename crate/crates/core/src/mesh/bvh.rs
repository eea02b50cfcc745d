use nalgebra::Vector3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        b
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn distance_squared(&self, p: &Vector3<f64>) -> f64 {
        let d = (self.min - p).sup(&(p - self.max)).sup(&Vector3::zeros());
        d.norm_squared()
    }

    /// Slab test; returns the entry parameter if the ray hits before `t_max`.
    fn ray_entry(&self, origin: &Vector3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for i in 0..3 {
            let a = (self.min[i] - origin[i]) * inv_dir[i];
            let b = (self.max[i] - origin[i]) * inv_dir[i];
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            // NaN (0·∞) means the ray is parallel and on a slab plane; keep the interval.
            if !lo.is_nan() {
                t0 = t0.max(lo);
            }
            if !hi.is_nan() {
                t1 = t1.min(hi);
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { bounds: Aabb, start: usize, len: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Median-split bounding-volume hierarchy over primitive boxes.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn build(boxes: &[Aabb]) -> Self {
        let mut order: Vec<usize> = (0..boxes.len()).collect();
        let centers: Vec<Vector3<f64>> = boxes.iter().map(Aabb::center).collect();
        let mut nodes = Vec::with_capacity(2 * boxes.len() / LEAF_SIZE + 1);
        if !boxes.is_empty() {
            Self::build_rec(boxes, &centers, &mut order, 0, boxes.len(), &mut nodes);
        }
        Self { nodes, order }
    }

    fn build_rec(
        boxes: &[Aabb],
        centers: &[Vector3<f64>],
        order: &mut [usize],
        start: usize,
        end: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let bounds = order[start..end]
            .iter()
            .fold(Aabb::empty(), |acc, &i| acc.merge(&boxes[i]));
        let idx = nodes.len();
        if end - start <= LEAF_SIZE {
            nodes.push(Node::Leaf { bounds, start, len: end - start });
            return idx;
        }
        let cb = Aabb::from_points(order[start..end].iter().map(|&i| &centers[i]));
        let ext = cb.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centers[a][axis].total_cmp(&centers[b][axis])
        });
        nodes.push(Node::Leaf { bounds, start: 0, len: 0 });
        let left = Self::build_rec(boxes, centers, order, start, mid, nodes);
        let right = Self::build_rec(boxes, centers, order, mid, end, nodes);
        nodes[idx] = Node::Inner { bounds, left, right };
        idx
    }

    /// Minimises `dist2(prim)` over all primitives, pruning by box distance.
    pub fn nearest<T, F>(&self, p: &Vector3<f64>, mut dist2: F) -> Option<(usize, T)>
    where
        F: FnMut(usize) -> (f64, T),
    {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(usize, T)> = None;
        let mut best_d = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            if self.nodes[n].bounds().distance_squared(p) > best_d {
                continue;
            }
            match &self.nodes[n] {
                Node::Leaf { start, len, .. } => {
                    for &prim in &self.order[*start..*start + *len] {
                        let (d, payload) = dist2(prim);
                        // Ties resolve to the lowest primitive index for determinism.
                        let better = d < best_d
                            || (d == best_d && best.as_ref().is_some_and(|(b, _)| prim < *b));
                        if better {
                            best_d = d;
                            best = Some((prim, payload));
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let dl = self.nodes[*left].bounds().distance_squared(p);
                    let dr = self.nodes[*right].bounds().distance_squared(p);
                    if dl < dr {
                        stack.push(*right);
                        stack.push(*left);
                    } else {
                        stack.push(*left);
                        stack.push(*right);
                    }
                }
            }
        }
        best
    }

    /// Smallest positive hit parameter over all primitives.
    pub fn raycast<F>(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, mut hit: F) -> Option<(f64, usize)>
    where
        F: FnMut(usize) -> Option<f64>,
    {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut best: Option<(f64, usize)> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let t_max = best.map_or(f64::INFINITY, |b| b.0);
            if self.nodes[n].bounds().ray_entry(origin, &inv, t_max).is_none() {
                continue;
            }
            match &self.nodes[n] {
                Node::Leaf { start, len, .. } => {
                    for &prim in &self.order[*start..*start + *len] {
                        if let Some(t) = hit(prim) {
                            if best.is_none_or(|b| t < b.0) {
                                best = Some((t, prim));
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        best
    }
}
