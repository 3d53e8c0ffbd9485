//! HDBSCAN* over 3D points: core distances, mutual reachability, Prim's MST,
//! single-linkage hierarchy, condensed tree, excess-of-mass selection with
//! epsilon merging.
//!
//! Node numbering follows the usual layout: points are `0..n`, single-linkage
//! merges are `n..2n-1`, and condensed-tree clusters start at `n` (the root).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::DiscoveryError;
use crate::exec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdbscanParams {
    /// Neighborhood size for core distances, counting the point itself.
    pub min_samples: usize,
    pub min_cluster_size: usize,
    /// Cluster selection epsilon in meters; 0 disables merging.
    pub epsilon: f64,
    /// Whether the root of the condensed tree may be selected.
    pub allow_single_cluster: bool,
}

pub const DEFAULT_MIN_SAMPLES: usize = 5;
pub const DEFAULT_EPSILON: f64 = 0.05;
/// Fraction of the dynamic set used as the default minimum cluster size.
pub const MIN_CLUSTER_FRACTION: f64 = 0.004;
pub const MIN_CLUSTER_FLOOR: usize = 10;

/// `max(10, 0.004·Q)` for a dynamic set of `q` Gaussians.
pub fn default_min_cluster_size(q: usize) -> usize {
    MIN_CLUSTER_FLOOR.max((MIN_CLUSTER_FRACTION * q as f64).ceil() as usize)
}

impl Default for HdbscanParams {
    fn default() -> Self {
        HdbscanParams {
            min_samples: DEFAULT_MIN_SAMPLES,
            min_cluster_size: MIN_CLUSTER_FLOOR,
            epsilon: DEFAULT_EPSILON,
            allow_single_cluster: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabeling {
    /// Per-point cluster id, `None` for noise.
    pub labels: Vec<Option<usize>>,
    pub cluster_count: usize,
    /// Excess-of-mass stability of each selected cluster.
    pub stability: Vec<f64>,
}

impl ClusterLabeling {
    pub fn all_noise(n: usize) -> Self {
        ClusterLabeling {
            labels: vec![None; n],
            cluster_count: 0,
            stability: Vec::new(),
        }
    }

    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == Some(k))
            .collect()
    }

    pub fn noise(&self) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i].is_none())
            .collect()
    }

    /// Labels with `-1` for noise.
    pub fn signed_labels(&self) -> Vec<i64> {
        self.labels
            .iter()
            .map(|l| l.map_or(-1, |k| k as i64))
            .collect()
    }
}

#[inline]
fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Distance to the `min_samples`-th nearest point, the point itself included.
pub fn core_distances(points: &[[f64; 3]], min_samples: usize) -> Vec<f64> {
    let k = min_samples.saturating_sub(1);
    exec::map_range(points.len(), |i| {
        let mut row: Vec<f64> = points.iter().map(|q| dist(&points[i], q)).collect();
        let (_, kth, _) = row.select_nth_unstable_by(k, f64::total_cmp);
        *kth
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Prim's algorithm on the dense mutual-reachability graph, computed on the
/// fly. Among equal candidates the lowest point index wins.
pub fn mutual_reachability_mst(points: &[[f64; 3]], core: &[f64]) -> Vec<MstEdge> {
    let n = points.len();
    if n < 2 {
        return Vec::new();
    }
    let mut remaining: Vec<usize> = (1..n).collect();
    let mut best = vec![f64::INFINITY; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0;
    while !remaining.is_empty() {
        let mut pick = 0;
        let mut pick_w = f64::INFINITY;
        for (slot, &j) in remaining.iter().enumerate() {
            let mr = core[current]
                .max(core[j])
                .max(dist(&points[current], &points[j]));
            if mr < best[j] {
                best[j] = mr;
            }
            if best[j] < pick_w || (slot == 0 && pick_w == f64::INFINITY) {
                pick_w = best[j];
                pick = slot;
            }
        }
        let next = remaining.remove(pick);
        edges.push(MstEdge {
            a: current,
            b: next,
            weight: pick_w,
        });
        current = next;
    }
    edges
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkageNode {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

/// Merge MST edges in ascending weight (ties by endpoint pair) into a
/// single-linkage dendrogram.
pub fn single_linkage(n: usize, mst: &[MstEdge]) -> Vec<LinkageNode> {
    let mut edges = mst.to_vec();
    edges.sort_by(|x, y| {
        let kx = (x.a.min(x.b), x.a.max(x.b));
        let ky = (y.a.min(y.b), y.a.max(y.b));
        x.weight.total_cmp(&y.weight).then(kx.cmp(&ky))
    });
    let total = 2 * n - 1;
    let mut parent: Vec<usize> = (0..total).collect();
    let mut size = vec![0usize; total];
    size[..n].fill(1);
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        while parent[x] != root {
            let up = parent[x];
            parent[x] = root;
            x = up;
        }
        root
    }
    let mut nodes = Vec::with_capacity(n.saturating_sub(1));
    for (i, e) in edges.iter().enumerate() {
        let l = find(&mut parent, e.a);
        let r = find(&mut parent, e.b);
        let label = n + i;
        size[label] = size[l] + size[r];
        parent[l] = label;
        parent[r] = label;
        nodes.push(LinkageNode {
            left: l,
            right: r,
            distance: e.weight,
            size: size[label],
        });
    }
    nodes
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondensedRow {
    pub parent: usize,
    pub child: usize,
    /// `1 / distance` at which the child leaves the parent.
    pub lambda: f64,
    pub size: usize,
}

fn bfs_hierarchy(hierarchy: &[LinkageNode], root: usize) -> Vec<usize> {
    let n = hierarchy.len() + 1;
    let mut result = Vec::new();
    let mut queue = vec![root];
    while !queue.is_empty() {
        result.extend_from_slice(&queue);
        queue = queue
            .iter()
            .filter(|&&x| x >= n)
            .flat_map(|&x| [hierarchy[x - n].left, hierarchy[x - n].right])
            .collect();
    }
    result
}

/// Subtrees hanging below `node` once every merge at exactly `node`'s
/// distance is undone, left to right. Consumed same-level nodes are marked.
fn same_level_branches(hierarchy: &[LinkageNode], node: usize, ignore: &mut [bool]) -> Vec<usize> {
    let n = hierarchy.len() + 1;
    let level = hierarchy[node - n].distance;
    let mut out = Vec::new();
    let mut stack = vec![hierarchy[node - n].right, hierarchy[node - n].left];
    while let Some(x) = stack.pop() {
        if x >= n && hierarchy[x - n].distance == level {
            ignore[x] = true;
            stack.push(hierarchy[x - n].right);
            stack.push(hierarchy[x - n].left);
        } else {
            out.push(x);
        }
    }
    out
}

/// Runt-prune the dendrogram: splits where a side has fewer than
/// `min_cluster_size` points shed those points instead of forming clusters.
///
/// Merges at equal distance are undone together, so a split may have more
/// than two children and the result does not depend on how tied MST edges
/// were ordered.
pub fn condense_tree(hierarchy: &[LinkageNode], min_cluster_size: usize) -> Vec<CondensedRow> {
    let root = 2 * hierarchy.len();
    let n = hierarchy.len() + 1;
    let mut next_label = n + 1;
    let order = bfs_hierarchy(hierarchy, root);
    let mut relabel = vec![0usize; root + 1];
    relabel[root] = n;
    let mut ignore = vec![false; root + 1];
    let mut rows = Vec::new();
    let size_of = |x: usize| if x >= n { hierarchy[x - n].size } else { 1 };

    for node in order {
        if ignore[node] || node < n {
            continue;
        }
        let distance = hierarchy[node - n].distance;
        let lambda = if distance > 0.0 {
            1.0 / distance
        } else {
            f64::INFINITY
        };
        let parent = relabel[node];
        let branches = same_level_branches(hierarchy, node, &mut ignore);
        let big = branches
            .iter()
            .filter(|&&b| size_of(b) >= min_cluster_size)
            .count();
        for b in branches {
            let count = size_of(b);
            if count < min_cluster_size {
                for sub in bfs_hierarchy(hierarchy, b) {
                    if sub < n {
                        rows.push(CondensedRow {
                            parent,
                            child: sub,
                            lambda,
                            size: 1,
                        });
                    }
                    ignore[sub] = true;
                }
            } else if big == 1 {
                relabel[b] = parent;
            } else {
                relabel[b] = next_label;
                next_label += 1;
                rows.push(CondensedRow {
                    parent,
                    child: relabel[b],
                    lambda,
                    size: count,
                });
            }
        }
    }
    rows
}

/// Excess-of-mass stability per condensed cluster id.
pub fn cluster_stability(tree: &[CondensedRow]) -> BTreeMap<usize, f64> {
    let root = tree.iter().map(|r| r.parent).min().unwrap_or(0);
    let mut birth: BTreeMap<usize, f64> = BTreeMap::new();
    for r in tree {
        birth.insert(r.child, r.lambda);
    }
    birth.insert(root, 0.0);
    let mut stability: BTreeMap<usize, f64> = BTreeMap::new();
    for r in tree {
        *stability.entry(r.parent).or_insert(0.0) += (r.lambda - birth[&r.parent]) * r.size as f64;
    }
    stability
}

struct ClusterTree<'a> {
    rows: Vec<&'a CondensedRow>,
    root: usize,
}

impl ClusterTree<'_> {
    fn children(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.rows
            .iter()
            .filter(move |r| r.parent == node)
            .map(|r| r.child)
    }

    fn birth_lambda(&self, node: usize) -> f64 {
        self.rows
            .iter()
            .find(|r| r.child == node)
            .map_or(0.0, |r| r.lambda)
    }

    fn parent(&self, node: usize) -> usize {
        self.rows
            .iter()
            .find(|r| r.child == node)
            .map_or(self.root, |r| r.parent)
    }

    fn subtree(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut queue = vec![node];
        while !queue.is_empty() {
            out.extend_from_slice(&queue);
            let next: Vec<usize> = self
                .rows
                .iter()
                .filter(|r| queue.contains(&r.parent))
                .map(|r| r.child)
                .collect();
            queue = next;
        }
        out
    }

    fn traverse_upwards(&self, epsilon: f64, leaf: usize, allow_single_cluster: bool) -> usize {
        let mut node = leaf;
        loop {
            let parent = self.parent(node);
            if parent == self.root {
                return if allow_single_cluster { parent } else { node };
            }
            if 1.0 / self.birth_lambda(parent) > epsilon {
                return parent;
            }
            node = parent;
        }
    }

    fn epsilon_search(
        &self,
        leaves: &BTreeSet<usize>,
        epsilon: f64,
        allow_single_cluster: bool,
    ) -> BTreeSet<usize> {
        let mut selected = BTreeSet::new();
        let mut processed = BTreeSet::new();
        for &leaf in leaves {
            let eps = 1.0 / self.birth_lambda(leaf);
            if eps < epsilon {
                if !processed.contains(&leaf) {
                    let chosen = self.traverse_upwards(epsilon, leaf, allow_single_cluster);
                    selected.insert(chosen);
                    processed.extend(self.subtree(chosen).into_iter().filter(|&s| s != chosen));
                }
            } else {
                selected.insert(leaf);
            }
        }
        selected
    }
}

/// Excess-of-mass selection followed by epsilon merging. Returns the
/// selected condensed-tree cluster ids.
pub fn select_clusters(
    tree: &[CondensedRow],
    stability: &BTreeMap<usize, f64>,
    epsilon: f64,
    allow_single_cluster: bool,
) -> BTreeSet<usize> {
    let mut stability = stability.clone();
    let mut nodes: Vec<usize> = stability.keys().rev().copied().collect();
    if !allow_single_cluster {
        nodes.pop();
    }
    let ct = ClusterTree {
        rows: tree.iter().filter(|r| r.size > 1).collect(),
        root: tree.iter().map(|r| r.parent).min().unwrap_or(0),
    };
    let mut is_cluster: BTreeMap<usize, bool> = nodes.iter().map(|&c| (c, true)).collect();
    for &node in &nodes {
        let subtree: f64 = ct.children(node).map(|c| stability[&c]).sum();
        if subtree > stability[&node] {
            is_cluster.insert(node, false);
            stability.insert(node, subtree);
        } else {
            for sub in ct.subtree(node) {
                if sub != node {
                    is_cluster.insert(sub, false);
                }
            }
        }
    }

    if epsilon != 0.0 && !ct.rows.is_empty() {
        let eom: BTreeSet<usize> = is_cluster
            .iter()
            .filter(|(_, &v)| v)
            .map(|(&c, _)| c)
            .collect();
        let chosen = if eom.len() == 1 && eom.contains(&ct.root) {
            if allow_single_cluster {
                eom
            } else {
                BTreeSet::new()
            }
        } else {
            ct.epsilon_search(&eom, epsilon, allow_single_cluster)
        };
        for (c, v) in is_cluster.iter_mut() {
            *v = chosen.contains(c);
        }
    }
    is_cluster
        .into_iter()
        .filter(|(_, v)| *v)
        .map(|(c, _)| c)
        .collect()
}

/// Assign every point to the selected cluster that contains it.
fn label_points(
    tree: &[CondensedRow],
    clusters: &BTreeSet<usize>,
    allow_single_cluster: bool,
    epsilon: f64,
) -> Vec<Option<usize>> {
    let root = tree.iter().map(|r| r.parent).min().unwrap_or(0);
    let max_parent = tree.iter().map(|r| r.parent).max().unwrap_or(0);
    let label_of: BTreeMap<usize, usize> =
        clusters.iter().enumerate().map(|(i, &c)| (c, i)).collect();

    // Union by rank, as rows arrive parent-first the representative is the
    // topmost unselected ancestor.
    let mut parent: Vec<usize> = (0..=max_parent).collect();
    let mut rank = vec![0u32; max_parent + 1];
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut x = x;
        while parent[x] != root {
            let up = parent[x];
            parent[x] = root;
            x = up;
        }
        root
    }
    for r in tree {
        if clusters.contains(&r.child) {
            continue;
        }
        let xr = find(&mut parent, r.parent);
        let yr = find(&mut parent, r.child);
        if rank[xr] < rank[yr] {
            parent[xr] = yr;
        } else if rank[xr] > rank[yr] {
            parent[yr] = xr;
        } else {
            parent[yr] = xr;
            rank[xr] += 1;
        }
    }

    (0..root)
        .map(|p| {
            let c = find(&mut parent, p);
            if c != root {
                return label_of.get(&c).copied();
            }
            if clusters.len() == 1 && allow_single_cluster {
                let exit = tree.iter().find(|r| r.child == p).map_or(0.0, |r| r.lambda);
                let threshold = if epsilon != 0.0 {
                    1.0 / epsilon
                } else {
                    tree.iter()
                        .filter(|r| r.parent == c)
                        .map(|r| r.lambda)
                        .fold(f64::NEG_INFINITY, f64::max)
                };
                if exit >= threshold {
                    return label_of.get(&c).copied();
                }
            }
            None
        })
        .collect()
}

/// Cluster 3D points. Clusters that end up with fewer than
/// `min_cluster_size` members are reported as noise.
pub fn hdbscan(
    points: &[[f64; 3]],
    params: &HdbscanParams,
) -> Result<ClusterLabeling, DiscoveryError> {
    if params.min_samples < 1 {
        return Err(DiscoveryError::InvalidParameter(
            "min_samples must be at least 1".into(),
        ));
    }
    if params.min_cluster_size < 2 {
        return Err(DiscoveryError::InvalidParameter(
            "min_cluster_size must be at least 2".into(),
        ));
    }
    if !(params.epsilon >= 0.0 && params.epsilon.is_finite()) {
        return Err(DiscoveryError::InvalidParameter(
            "epsilon must be finite and non-negative".into(),
        ));
    }
    if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(DiscoveryError::NonFinitePoint(i));
    }
    let n = points.len();
    if n < params.min_samples {
        return Err(DiscoveryError::TooFewPoints {
            points: n,
            min_samples: params.min_samples,
        });
    }
    if n < 2 || n < params.min_cluster_size {
        return Ok(ClusterLabeling::all_noise(n));
    }

    let core = core_distances(points, params.min_samples);
    let mst = mutual_reachability_mst(points, &core);
    let hierarchy = single_linkage(n, &mst);
    let tree = condense_tree(&hierarchy, params.min_cluster_size);
    let stability = cluster_stability(&tree);
    let selected = select_clusters(
        &tree,
        &stability,
        params.epsilon,
        params.allow_single_cluster,
    );
    let raw = label_points(
        &tree,
        &selected,
        params.allow_single_cluster,
        params.epsilon,
    );

    // Drop undersized clusters and renumber in order of condensed id.
    let selected: Vec<usize> = selected.into_iter().collect();
    let mut counts = vec![0usize; selected.len()];
    for l in raw.iter().flatten() {
        counts[*l] += 1;
    }
    let mut remap = vec![None; selected.len()];
    let mut kept_stability = Vec::new();
    for (k, &c) in selected.iter().enumerate() {
        if counts[k] >= params.min_cluster_size {
            remap[k] = Some(kept_stability.len());
            kept_stability.push(stability[&c]);
        }
    }
    Ok(ClusterLabeling {
        labels: raw.into_iter().map(|l| l.and_then(|k| remap[k])).collect(),
        cluster_count: kept_stability.len(),
        stability: kept_stability,
    })
}

/// True when two labelings induce the same partition, noise included.
pub fn same_partition(a: &[Option<usize>], b: &[Option<usize>]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd: BTreeMap<usize, usize> = BTreeMap::new();
    let mut bwd: BTreeMap<usize, usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (None, None) => {}
            (Some(x), Some(y)) => {
                if *fwd.entry(*x).or_insert(*y) != *y || *bwd.entry(*y).or_insert(*x) != *x {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(rng: &mut ChaCha8Rng, center: [f64; 3], sigma: f64, n: usize) -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| {
                std::array::from_fn(|k| {
                    // Box-Muller
                    let u1: f64 = rng.gen_range(1e-12..1.0);
                    let u2: f64 = rng.gen();
                    center[k] + sigma * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                })
            })
            .collect()
    }

    fn params(min_samples: usize, min_cluster_size: usize, epsilon: f64) -> HdbscanParams {
        HdbscanParams {
            min_samples,
            min_cluster_size,
            epsilon,
            allow_single_cluster: true,
        }
    }

    #[test]
    fn two_blobs_with_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma = 0.1;
        let mut pts = blob(&mut rng, [0.0, 0.0, 0.0], sigma, 50);
        pts.extend(blob(&mut rng, [10.0 * sigma, 0.0, 0.0], sigma, 50));
        let outliers = [
            [3.0, 3.0, 3.0],
            [-3.0, 2.0, 0.5],
            [0.5, -3.0, -3.0],
            [4.0, -2.0, 1.0],
            [-2.5, -2.5, 2.5],
        ];
        pts.extend_from_slice(&outliers);
        let lab = hdbscan(&pts, &params(5, 10, 0.05)).unwrap();
        assert_eq!(lab.cluster_count, 2);
        for i in 100..105 {
            assert_eq!(lab.labels[i], None, "outlier {i}");
        }
        for (range, other) in [(0..50, 50..100), (50..100, 0..50)] {
            let mut votes = [0usize; 2];
            for i in range.clone() {
                if let Some(k) = lab.labels[i] {
                    votes[k] += 1;
                }
            }
            let major = if votes[0] >= votes[1] { 0 } else { 1 };
            assert!(votes[major] >= 45, "{votes:?}");
            assert!(other.clone().all(|i| lab.labels[i] != Some(major)));
        }
    }

    #[test]
    fn tight_group_is_one_cluster_without_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<[f64; 3]> = (0..40)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-0.01..0.01)))
            .collect();
        let lab = hdbscan(&pts, &params(5, 10, 0.05)).unwrap();
        assert_eq!(lab.cluster_count, 1);
        assert!(lab.labels.iter().all(|l| *l == Some(0)));
    }

    #[test]
    fn fewer_points_than_min_cluster_size_is_all_noise() {
        let pts: Vec<[f64; 3]> = (0..8).map(|i| [i as f64 * 0.001, 0.0, 0.0]).collect();
        let lab = hdbscan(&pts, &params(5, 10, 0.05)).unwrap();
        assert_eq!(lab.cluster_count, 0);
        assert!(lab.labels.iter().all(Option::is_none));
    }

    #[test]
    fn too_few_points_for_min_samples_is_an_error() {
        let pts = [[0.0; 3]; 3];
        assert!(matches!(
            hdbscan(&pts, &params(5, 2, 0.0)),
            Err(DiscoveryError::TooFewPoints {
                points: 3,
                min_samples: 5
            })
        ));
        assert!(hdbscan(&pts, &params(0, 2, 0.0)).is_err());
        assert!(hdbscan(&pts, &params(1, 1, 0.0)).is_err());
        assert!(matches!(
            hdbscan(&[[f64::NAN, 0.0, 0.0]], &params(1, 2, 0.0)),
            Err(DiscoveryError::NonFinitePoint(0))
        ));
    }

    #[test]
    fn core_distance_counts_the_point_itself() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        assert_eq!(core_distances(&pts, 1), vec![0.0, 0.0, 0.0]);
        assert_eq!(core_distances(&pts, 2), vec![1.0, 1.0, 2.0]);
        assert_eq!(core_distances(&pts, 3), vec![3.0, 2.0, 3.0]);
    }

    #[test]
    fn mst_total_weight_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<[f64; 3]> = (0..30)
            .map(|_| std::array::from_fn(|_| rng.gen()))
            .collect();
        let core = core_distances(&pts, 3);
        let mst = mutual_reachability_mst(&pts, &core);
        assert_eq!(mst.len(), 29);
        // Kruskal over all pairs.
        let mut all = Vec::new();
        for i in 0..30 {
            for j in i + 1..30 {
                all.push((core[i].max(core[j]).max(dist(&pts[i], &pts[j])), i, j));
            }
        }
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut comp: Vec<usize> = (0..30).collect();
        let mut total = 0.0;
        for (w, i, j) in all {
            let (ci, cj) = (comp[i], comp[j]);
            if ci != cj {
                total += w;
                comp.iter_mut().filter(|c| **c == cj).for_each(|c| *c = ci);
            }
        }
        let prim: f64 = mst.iter().map(|e| e.weight).sum();
        assert!((prim - total).abs() < 1e-12);
    }

    #[test]
    fn same_partition_ignores_label_names() {
        let a = [Some(0), Some(0), None, Some(1)];
        let b = [Some(1), Some(1), None, Some(0)];
        let c = [Some(1), Some(0), None, Some(0)];
        assert!(same_partition(&a, &b));
        assert!(!same_partition(&a, &c));
        assert!(!same_partition(&a, &[Some(0), Some(0), Some(2), Some(1)]));
    }

    #[test]
    fn default_min_cluster_size_scales_with_set_size() {
        assert_eq!(default_min_cluster_size(50), 10);
        assert_eq!(default_min_cluster_size(100_000), 400);
    }
}
