//! Single-linkage filtration tree over trajectories.
//!
//! Leaves are the input trajectories (ids `0..M`), born at threshold 0.
//! Each merge creates a node whose birth is the merge distance; its two
//! children die at that distance. A node is alive at `b` iff
//! `birth <= b < death`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::DistanceMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterNode {
    pub id: NodeId,
    /// Leaf indices covered by this node, ascending.
    pub members: Vec<usize>,
    pub birth: f64,
    /// `None` for the root.
    pub death: Option<f64>,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

impl ClusterNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn alive_at(&self, b: f64) -> bool {
        self.birth <= b && self.death.is_none_or(|d| b < d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterTree {
    nodes: Vec<ClusterNode>,
    root: NodeId,
    labels: Vec<String>,
    depth: Vec<usize>,
}

impl ClusterTree {
    /// Single-linkage agglomeration of `d`, with `labels[i]` naming leaf `i`.
    ///
    /// Among pairs at the minimum distance, the pair with the smallest
    /// `(i, j)` node ids is merged first; merged clusters take ids `M, M+1, ...`.
    pub fn single_linkage(d: &DistanceMatrix, labels: Vec<String>) -> Result<Self> {
        let m = d.size();
        if labels.len() != m {
            return invalid(format!("{} labels for a {m}x{m} matrix", labels.len()));
        }
        let total = 2 * m - 1;
        let mut dist = vec![f64::INFINITY; total * total];
        for i in 0..m {
            for j in 0..m {
                dist[i * total + j] = d.get(i, j);
            }
        }
        let mut nodes: Vec<ClusterNode> = (0..m)
            .map(|i| ClusterNode {
                id: NodeId(i),
                members: vec![i],
                birth: 0.0,
                death: None,
                parent: None,
                children: Vec::new(),
            })
            .collect();
        let mut active: Vec<usize> = (0..m).collect();

        let row_nn = |dist: &[f64], active: &[usize], i: usize| -> (f64, usize) {
            let mut best = (f64::INFINITY, usize::MAX);
            for &j in active {
                if j != i {
                    let v = dist[i * total + j];
                    if v < best.0 || (v == best.0 && j < best.1) {
                        best = (v, j);
                    }
                }
            }
            best
        };
        let mut nn = vec![(f64::INFINITY, usize::MAX); total];
        for &i in &active {
            nn[i] = row_nn(&dist, &active, i);
        }

        for step in 0..m.saturating_sub(1) {
            // `active` is kept sorted, so the first row attaining the minimum
            // is the smallest id; its neighbour is then the smallest partner.
            let mut a = active[0];
            for &i in &active[1..] {
                if nn[i].0 < nn[a].0 {
                    a = i;
                }
            }
            let (h, b) = nn[a];
            let new = m + step;
            for &k in &active {
                if k != a && k != b {
                    let v = dist[a * total + k].min(dist[b * total + k]);
                    dist[new * total + k] = v;
                    dist[k * total + new] = v;
                }
            }
            dist[new * total + new] = 0.0;
            let mut members = nodes[a].members.clone();
            members.extend_from_slice(&nodes[b].members);
            members.sort_unstable();
            for c in [a, b] {
                nodes[c].death = Some(h);
                nodes[c].parent = Some(NodeId(new));
            }
            nodes.push(ClusterNode {
                id: NodeId(new),
                members,
                birth: h,
                death: None,
                parent: None,
                children: vec![NodeId(a), NodeId(b)],
            });
            active.retain(|&k| k != a && k != b);
            active.push(new);
            for idx in 0..active.len() - 1 {
                let k = active[idx];
                if nn[k].1 == a || nn[k].1 == b {
                    nn[k] = row_nn(&dist, &active, k);
                } else if dist[k * total + new] < nn[k].0 {
                    nn[k] = (dist[k * total + new], new);
                }
            }
            nn[new] = row_nn(&dist, &active, new);
        }
        let root = NodeId(nodes.len() - 1);
        Self::from_parts(nodes, root, labels)
    }

    /// A tree whose only internal node is the root, joining every leaf at
    /// `height`. With one label this is a single-node tree.
    pub fn flat(labels: Vec<String>, height: f64) -> Result<Self> {
        let m = labels.len();
        if m == 0 {
            return invalid("flat tree needs at least one leaf");
        }
        if m == 1 {
            let node = ClusterNode {
                id: NodeId(0),
                members: vec![0],
                birth: 0.0,
                death: None,
                parent: None,
                children: Vec::new(),
            };
            return Self::from_parts(vec![node], NodeId(0), labels);
        }
        if !(height > 0.0 && height.is_finite()) {
            return invalid("flat tree height must be positive and finite");
        }
        let mut nodes: Vec<ClusterNode> = (0..m)
            .map(|i| ClusterNode {
                id: NodeId(i),
                members: vec![i],
                birth: 0.0,
                death: Some(height),
                parent: Some(NodeId(m)),
                children: Vec::new(),
            })
            .collect();
        nodes.push(ClusterNode {
            id: NodeId(m),
            members: (0..m).collect(),
            birth: height,
            death: None,
            parent: None,
            children: (0..m).map(NodeId).collect(),
        });
        Self::from_parts(nodes, NodeId(m), labels)
    }

    fn from_parts(nodes: Vec<ClusterNode>, root: NodeId, labels: Vec<String>) -> Result<Self> {
        let mut tree = ClusterTree { depth: vec![0; nodes.len()], nodes, root, labels };
        tree.validate()?;
        // Children always precede parents in id order.
        for i in (0..tree.nodes.len()).rev() {
            if let Some(p) = tree.nodes[i].parent {
                tree.depth[i] = tree.depth[p.0] + 1;
            }
        }
        Ok(tree)
    }

    fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        let m = self.labels.len();
        if m == 0 || self.root.0 >= n {
            return invalid("tree has no leaves or a dangling root");
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id.0 != i {
                return invalid(format!("node at position {i} has id {}", node.id));
            }
            if (i < m) != node.is_leaf() {
                return invalid(format!("leaves must be exactly nodes 0..{m}; node {i} disagrees"));
            }
            if !(node.birth >= 0.0 && node.birth.is_finite()) {
                return invalid(format!("node {i} has invalid birth {}", node.birth));
            }
            match (node.parent, node.death) {
                (None, None) if node.id == self.root => {}
                (Some(p), Some(d)) => {
                    if p.0 >= n || p.0 <= i {
                        return invalid(format!("node {i} has invalid parent {p}"));
                    }
                    if self.nodes[p.0].birth != d || d < node.birth {
                        return invalid(format!("node {i}: death {d} must equal parent birth"));
                    }
                    if !self.nodes[p.0].children.contains(&node.id) {
                        return invalid(format!("parent {p} does not list child {i}"));
                    }
                }
                _ => return invalid(format!("node {i}: parent/death must both be set except at the root")),
            }
            if node.is_leaf() {
                if node.members != [i] || node.birth != 0.0 {
                    return invalid(format!("leaf {i} must have members [{i}] and birth 0"));
                }
            } else {
                if node.children.len() < 2 {
                    return invalid(format!("internal node {i} has fewer than two children"));
                }
                let mut union: Vec<usize> = Vec::new();
                for c in &node.children {
                    if c.0 >= i {
                        return invalid(format!("node {i} lists child {c} with a larger id"));
                    }
                    union.extend_from_slice(&self.nodes[c.0].members);
                }
                union.sort_unstable();
                if union != node.members {
                    return invalid(format!("node {i} members are not the union of its children"));
                }
            }
        }
        if self.nodes[self.root.0].members.len() != m {
            return invalid("root does not cover every leaf");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        self.labels.len()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn nodes(&self) -> &[ClusterNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &ClusterNode {
        &self.nodes[id.0]
    }

    pub fn get(&self, id: NodeId) -> Result<&ClusterNode> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::InvalidInput(format!("unknown node id {id}")))
    }

    pub fn label(&self, leaf: usize) -> &str {
        &self.labels[leaf]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> {
        (0..self.labels.len()).map(NodeId)
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        id.0 < self.labels.len()
    }

    pub fn birth(&self, id: NodeId) -> f64 {
        self.nodes[id.0].birth
    }

    pub fn root_birth(&self) -> f64 {
        self.birth(self.root)
    }

    /// Merge heights in construction order (non-decreasing for single linkage).
    pub fn merge_heights(&self) -> Vec<f64> {
        self.nodes[self.leaf_count()..].iter().map(|n| n.birth).collect()
    }

    /// Distinct level values: 0 and every merge height, ascending.
    pub fn level_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = std::iter::once(0.0).chain(self.merge_heights()).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// The level `C_b`: nodes with `birth <= b < death`, ascending by id.
    pub fn alive_at(&self, b: f64) -> Vec<NodeId> {
        self.nodes.iter().filter(|n| n.alive_at(b)).map(|n| n.id).collect()
    }

    /// The ancestor of `node` (possibly itself) alive at `b`, if any.
    pub fn ancestor_alive_at(&self, node: NodeId, b: f64) -> Option<NodeId> {
        let mut cur = node;
        loop {
            let n = &self.nodes[cur.0];
            if n.alive_at(b) {
                return Some(cur);
            }
            if n.birth > b {
                return None;
            }
            cur = n.parent?;
        }
    }

    pub fn lowest_common_ancestor(&self, c1: NodeId, c2: NodeId) -> Result<NodeId> {
        self.get(c1)?;
        self.get(c2)?;
        let (mut a, mut b) = (c1, c2);
        while self.depth[a.0] > self.depth[b.0] {
            a = self.nodes[a.0].parent.expect("non-root has a parent");
        }
        while self.depth[b.0] > self.depth[a.0] {
            b = self.nodes[b.0].parent.expect("non-root has a parent");
        }
        while a != b {
            a = self.nodes[a.0].parent.expect("non-root has a parent");
            b = self.nodes[b.0].parent.expect("non-root has a parent");
        }
        Ok(a)
    }

    /// Birth of the first shared ancestor, counting each node as its own
    /// ancestor.
    pub fn tree_class_distance(&self, c1: NodeId, c2: NodeId) -> Result<f64> {
        Ok(self.birth(self.lowest_common_ancestor(c1, c2)?))
    }

    /// Internal node ids in bottom-up order.
    pub fn internal_ids(&self) -> impl Iterator<Item = NodeId> {
        (self.leaf_count()..self.nodes.len()).map(NodeId)
    }

    /// `node` and all of its descendants.
    pub fn subtree(&self, node: NodeId) -> Vec<NodeId> {
        let mut out = vec![node];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&self.nodes[out[i].0].children);
            i += 1;
        }
        out
    }

    /// Smallest merge height at which at most `ceil(M/2)` classes are alive.
    pub fn default_coarse_level(&self) -> f64 {
        let m = self.leaf_count();
        let target = m.div_ceil(2);
        for b in self.level_values() {
            if self.alive_at(b).len() <= target {
                return b;
            }
        }
        self.root_birth()
    }

    /// Indented text rendering, root first.
    pub fn dendrogram(&self) -> String {
        let mut out = String::new();
        self.render(self.root, 0, &mut out);
        out
    }

    fn render(&self, id: NodeId, indent: usize, out: &mut String) {
        let n = &self.nodes[id.0];
        let pad = "  ".repeat(indent);
        if n.is_leaf() {
            let _ = writeln!(out, "{pad}- {} [{}]", self.labels[id.0], id);
        } else {
            let _ = writeln!(out, "{pad}+ [{}] birth={:.6} size={}", id, n.birth, n.members.len());
            for &c in &n.children {
                self.render(c, indent + 1, out);
            }
        }
    }

    pub fn to_json(&self) -> TreeJson {
        TreeJson {
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeJson {
                    id: n.id,
                    members: n.members.iter().map(|&i| self.labels[i].clone()).collect(),
                    birth: n.birth,
                    death: n.death,
                    parent: n.parent,
                    children: n.children.clone(),
                })
                .collect(),
            root: self.root,
        }
    }

    pub fn from_json(doc: TreeJson) -> Result<Self> {
        let m = doc.nodes.iter().filter(|n| n.children.is_empty()).count();
        let mut labels = vec![String::new(); m];
        for n in doc.nodes.iter().filter(|n| n.children.is_empty()) {
            if n.id.0 >= m || n.members.len() != 1 {
                return invalid(format!("leaf {} must be a singleton with id < {m}", n.id));
            }
            labels[n.id.0] = n.members[0].clone();
        }
        let index: std::collections::HashMap<&str, usize> =
            labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        if index.len() != m {
            return invalid("leaf labels must be unique");
        }
        let mut nodes = Vec::with_capacity(doc.nodes.len());
        for n in doc.nodes {
            let mut members = n
                .members
                .iter()
                .map(|l| {
                    index
                        .get(l.as_str())
                        .copied()
                        .ok_or_else(|| Error::InvalidInput(format!("unknown member {l:?}")))
                })
                .collect::<Result<Vec<usize>>>()?;
            members.sort_unstable();
            nodes.push(ClusterNode {
                id: n.id,
                members,
                birth: n.birth,
                death: n.death,
                parent: n.parent,
                children: n.children,
            });
        }
        nodes.sort_by_key(|n| n.id);
        Self::from_parts(nodes, doc.root, labels)
    }
}

/// On-disk tree document. The root's death serializes as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeJson {
    pub nodes: Vec<NodeJson>,
    pub root: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeJson {
    pub id: NodeId,
    pub members: Vec<String>,
    pub birth: f64,
    pub death: Option<f64>,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn labels(m: usize) -> Vec<String> {
        (1..=m).map(|i| i.to_string()).collect()
    }

    fn three() -> ClusterTree {
        let d = DistanceMatrix::from_rows(vec![
            vec![0.0, 1.0, 4.0],
            vec![1.0, 0.0, 2.0],
            vec![4.0, 2.0, 0.0],
        ])
        .unwrap();
        ClusterTree::single_linkage(&d, labels(3)).unwrap()
    }

    #[test]
    fn single_node_tree() {
        let d = DistanceMatrix::from_rows(vec![vec![0.0]]).unwrap();
        let t = ClusterTree::single_linkage(&d, labels(1)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.root(), NodeId(0));
        assert_eq!(t.node(NodeId(0)).birth, 0.0);
        assert_eq!(t.node(NodeId(0)).death, None);
        assert_eq!(t.alive_at(0.0), vec![NodeId(0)]);
        assert_eq!(t.alive_at(10.0), vec![NodeId(0)]);
    }

    #[test]
    fn hand_traced_three() {
        let t = three();
        // {1,2} at 1, then {{1,2},3} at min(4,2) = 2.
        let n3 = t.node(NodeId(3));
        assert_eq!(n3.members, vec![0, 1]);
        assert_eq!(n3.birth, 1.0);
        assert_eq!(n3.death, Some(2.0));
        let root = t.node(t.root());
        assert_eq!(root.id, NodeId(4));
        assert_eq!(root.birth, 2.0);
        assert_eq!(root.children, vec![NodeId(2), NodeId(3)]);
        assert_eq!(t.merge_heights(), vec![1.0, 2.0]);
    }

    #[test]
    fn alive_sets() {
        let t = three();
        assert_eq!(t.alive_at(0.0), vec![NodeId(0), NodeId(1), NodeId(2)]);
        assert_eq!(t.alive_at(1.5), vec![NodeId(2), NodeId(3)]);
        assert_eq!(t.alive_at(2.0), vec![t.root()]);
        assert_eq!(t.alive_at(100.0), vec![t.root()]);
        assert_eq!(t.ancestor_alive_at(NodeId(0), 1.5), Some(NodeId(3)));
        assert_eq!(t.ancestor_alive_at(NodeId(3), 0.5), None);
    }

    #[test]
    fn class_distances() {
        let t = three();
        assert_eq!(t.tree_class_distance(NodeId(0), NodeId(2)).unwrap(), 2.0);
        assert_eq!(t.tree_class_distance(NodeId(0), NodeId(1)).unwrap(), 1.0);
        assert_eq!(t.tree_class_distance(NodeId(3), NodeId(3)).unwrap(), 1.0);
        assert_eq!(t.tree_class_distance(NodeId(1), NodeId(1)).unwrap(), 0.0);
        assert!(t.tree_class_distance(NodeId(0), NodeId(9)).is_err());
    }

    #[test]
    fn lca_cases() {
        let t = three();
        assert_eq!(t.lowest_common_ancestor(NodeId(2), NodeId(2)).unwrap(), NodeId(2));
        assert_eq!(t.lowest_common_ancestor(NodeId(0), t.root()).unwrap(), t.root());
        assert_eq!(t.lowest_common_ancestor(NodeId(0), NodeId(1)).unwrap(), NodeId(3));
        assert!(t.lowest_common_ancestor(NodeId(7), NodeId(1)).is_err());
    }

    #[test]
    fn ties_merge_smallest_pair_first() {
        let d = DistanceMatrix::from_rows(vec![
            vec![0.0, 1.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0, 1.0],
            vec![1.0, 1.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0, 0.0],
        ])
        .unwrap();
        let t = ClusterTree::single_linkage(&d, labels(4)).unwrap();
        assert_eq!(t.node(NodeId(4)).children, vec![NodeId(0), NodeId(1)]);
        assert_eq!(t.node(NodeId(5)).children, vec![NodeId(2), NodeId(3)]);
        assert_eq!(t.node(NodeId(6)).children, vec![NodeId(4), NodeId(5)]);
    }

    #[test]
    fn zero_height_merges_keep_partition() {
        let d = DistanceMatrix::from_rows(vec![
            vec![0.0, 0.0, 3.0],
            vec![0.0, 0.0, 3.0],
            vec![3.0, 3.0, 0.0],
        ])
        .unwrap();
        let t = ClusterTree::single_linkage(&d, labels(3)).unwrap();
        assert_eq!(t.alive_at(0.0), vec![NodeId(2), NodeId(3)]);
    }

    #[test]
    fn json_round_trip_and_null_death() {
        let t = three();
        let doc = t.to_json();
        let text = serde_json::to_string(&doc).unwrap();
        assert!(text.contains("\"death\":null"));
        let back = ClusterTree::from_json(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn from_json_rejects_broken_links() {
        let mut doc = three().to_json();
        doc.nodes[0].death = Some(5.0);
        assert!(ClusterTree::from_json(doc).is_err());
    }

    #[test]
    fn flat_tree_shape() {
        let t = ClusterTree::flat(labels(4), 3.0).unwrap();
        assert_eq!(t.alive_at(0.0).len(), 4);
        assert_eq!(t.alive_at(3.0), vec![NodeId(4)]);
        assert_eq!(t.tree_class_distance(NodeId(0), NodeId(3)).unwrap(), 3.0);
        let single = ClusterTree::flat(labels(1), 1.0).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn dendrogram_lists_every_leaf() {
        let text = three().dendrogram();
        for l in ["- 1 [0]", "- 2 [1]", "- 3 [2]", "+ [4] birth=2.000000"] {
            assert!(text.contains(l), "{text}");
        }
    }

    #[test]
    fn default_coarse_level_halves_classes() {
        let t = three();
        assert_eq!(t.default_coarse_level(), 1.0);
    }
}
