//! Binary regression trees and greedy CART fitting.
//!
//! Vertices are numbered from 1 (the root). Every internal vertex has an
//! even child, taken when `X_{c1, t-c2} >= c3`, and the following odd
//! child, taken otherwise.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lagged predictors `X_t, ..., X_{t-p+1}` used to forecast `Y_{t+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorWindow {
    m: usize,
    p_lags: usize,
    /// Lag-major: entry `(lag - 1) * m + (feature - 1)`.
    values: Vec<f64>,
}

impl PredictorWindow {
    /// Build from `lags[k]` = `X_{t-k}` (an `m`-vector each).
    pub fn from_lags(lags: &[Vec<f64>]) -> Result<Self> {
        let p_lags = lags.len();
        if p_lags == 0 {
            return Err(Error::Shape("window needs at least one lag".into()));
        }
        let m = lags[0].len();
        if m == 0 || lags.iter().any(|l| l.len() != m) {
            return Err(Error::Shape("window lags must share a nonzero width".into()));
        }
        let values: Vec<f64> = lags.iter().flatten().copied().collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("window entries must be finite".into()));
        }
        Ok(Self { m, p_lags, values })
    }

    /// Single-lag window holding one predictor vector.
    pub fn single(x: Vec<f64>) -> Result<Self> {
        Self::from_lags(&[x])
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p_lags(&self) -> usize {
        self.p_lags
    }

    /// `X_{feature, t+1-lag}` with 1-based feature and lag.
    pub fn get(&self, feature: usize, lag: usize) -> f64 {
        self.values[(lag - 1) * self.m + (feature - 1)]
    }

    fn column(&self, col: usize) -> f64 {
        self.values[col]
    }
}

/// Split label `c_v = (feature, lag, threshold)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitLabel {
    pub feature: usize,
    pub lag: usize,
    pub threshold: f64,
}

/// Indicator `f(X, c_v, w)`.
pub fn split_indicator(window: &PredictorWindow, label: &SplitLabel, child: usize) -> u8 {
    let x = window.get(label.feature, label.lag);
    let ge = x >= label.threshold;
    u8::from((ge && child % 2 == 0) || (!ge && child % 2 == 1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    Internal { label: SplitLabel, even: usize },
    Leaf { value: f64 },
}

/// Fitted or hand-built regression tree.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryTree {
    m: usize,
    p_lags: usize,
    nodes: BTreeMap<usize, Node>,
    parent: BTreeMap<usize, usize>,
    sigma: f64,
}

impl BinaryTree {
    /// Validate and assemble a tree from its graph and labels.
    pub fn from_parts(
        vertices: &[usize],
        edges: &[(usize, usize)],
        labels: &BTreeMap<usize, SplitLabel>,
        leaf_values: &BTreeMap<usize, f64>,
        sigma: f64,
        m: usize,
        p_lags: usize,
    ) -> Result<Self> {
        let vset: BTreeSet<usize> = vertices.iter().copied().collect();
        if vset.len() != vertices.len() || !vset.contains(&1) {
            return Err(Error::Integrity("vertices must be distinct and include the root 1".into()));
        }
        let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut parent = BTreeMap::new();
        for &(v, w) in edges {
            if v >= w || !vset.contains(&v) || !vset.contains(&w) {
                return Err(Error::Integrity(format!("invalid edge ({v}, {w})")));
            }
            if parent.insert(w, v).is_some() {
                return Err(Error::Integrity(format!("vertex {w} has two parents")));
            }
            children.entry(v).or_default().push(w);
        }
        if parent.contains_key(&1) {
            return Err(Error::Integrity("root has a parent".into()));
        }
        let mut nodes = BTreeMap::new();
        for &v in &vset {
            if v != 1 && !parent.contains_key(&v) {
                return Err(Error::Integrity(format!("vertex {v} is unreachable")));
            }
            match children.get(&v) {
                None => {
                    let value = *leaf_values
                        .get(&v)
                        .ok_or_else(|| Error::Integrity(format!("leaf {v} has no value")))?;
                    nodes.insert(v, Node::Leaf { value });
                }
                Some(ch) => {
                    let mut ch = ch.clone();
                    ch.sort_unstable();
                    if ch.len() != 2 || ch[0] % 2 != 0 || ch[1] != ch[0] + 1 {
                        return Err(Error::Integrity(format!(
                            "vertex {v} must have an even child and the next odd one, got {ch:?}"
                        )));
                    }
                    let label =
                        *labels.get(&v).ok_or_else(|| Error::Integrity(format!("internal vertex {v} has no label")))?;
                    if label.feature == 0 || label.feature > m || label.lag == 0 || label.lag > p_lags {
                        return Err(Error::Integrity(format!("label of vertex {v} out of range")));
                    }
                    nodes.insert(v, Node::Internal { label, even: ch[0] });
                }
            }
        }
        // walks exist: edges go to larger ids and every non-root vertex has a parent
        Ok(Self { m, p_lags, nodes, parent, sigma })
    }

    /// Single-vertex tree.
    pub fn leaf(value: f64, sigma: f64, m: usize, p_lags: usize) -> Self {
        Self { m, p_lags, nodes: BTreeMap::from([(1, Node::Leaf { value })]), parent: BTreeMap::new(), sigma }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p_lags(&self) -> usize {
        self.p_lags
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn vertices(&self) -> Vec<usize> {
        self.nodes.keys().copied().collect()
    }

    /// Edges in ascending order; consecutive pairs share their parent.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self.parent.iter().map(|(&w, &v)| (v, w)).collect();
        e.sort_unstable();
        e
    }

    /// `(F(V), F̄(V))`: leaves and internal vertices.
    pub fn leaves(&self) -> (Vec<usize>, Vec<usize>) {
        let (mut f, mut fbar) = (Vec::new(), Vec::new());
        for (&v, node) in &self.nodes {
            match node {
                Node::Leaf { .. } => f.push(v),
                Node::Internal { .. } => fbar.push(v),
            }
        }
        (f, fbar)
    }

    pub fn label(&self, v: usize) -> Option<SplitLabel> {
        match self.nodes.get(&v) {
            Some(Node::Internal { label, .. }) => Some(*label),
            _ => None,
        }
    }

    pub fn leaf_value(&self, v: usize) -> Option<f64> {
        match self.nodes.get(&v) {
            Some(Node::Leaf { value }) => Some(*value),
            _ => None,
        }
    }

    /// Edges of the walk from the root to leaf `v`.
    pub fn root_to_leaf_walk(&self, v: usize) -> Result<Vec<(usize, usize)>> {
        if self.leaf_value(v).is_none() {
            return Err(Error::Domain(format!("vertex {v} is not a leaf")));
        }
        let mut walk = Vec::new();
        let mut cur = v;
        while let Some(&p) = self.parent.get(&cur) {
            walk.push((p, cur));
            cur = p;
        }
        walk.reverse();
        Ok(walk)
    }

    fn check_window(&self, w: &PredictorWindow) {
        assert!(
            w.m() == self.m && w.p_lags() >= self.p_lags,
            "window has m = {}, p = {}; tree expects m = {}, p = {}",
            w.m(),
            w.p_lags(),
            self.m,
            self.p_lags
        );
    }

    /// Sum over leaves of `b_u` times the indicator product along its walk.
    pub fn predict(&self, window: &PredictorWindow) -> f64 {
        self.check_window(window);
        let (leaves, _) = self.leaves();
        leaves
            .iter()
            .map(|&u| {
                let walk = self.root_to_leaf_walk(u).expect("leaf");
                let prod: u8 = walk
                    .iter()
                    .map(|&(v, w)| split_indicator(window, &self.label(v).expect("internal"), w))
                    .product();
                self.leaf_value(u).unwrap() * prod as f64
            })
            .sum()
    }

    /// Leaf reached by descending from the root.
    pub fn leaf_of(&self, window: &PredictorWindow) -> usize {
        let mut v = 1;
        while let Node::Internal { label, even } = self.nodes[&v] {
            v = if window.get(label.feature, label.lag) >= label.threshold { even } else { even + 1 };
        }
        v
    }

    /// Imperative evaluation, equal to [`BinaryTree::predict`].
    pub fn predict_descend(&self, window: &PredictorWindow) -> f64 {
        self.check_window(window);
        self.leaf_value(self.leaf_of(window)).unwrap()
    }

    pub fn depth(&self) -> usize {
        let (leaves, _) = self.leaves();
        leaves.iter().map(|&u| self.root_to_leaf_walk(u).unwrap().len()).max().unwrap_or(0)
    }

    fn nested(&self, v: usize) -> NestedNode {
        match self.nodes[&v] {
            Node::Leaf { value } => NestedNode { id: v, label: None, value: Some(value), children: Vec::new() },
            Node::Internal { label, even } => NestedNode {
                id: v,
                label: Some(label),
                value: None,
                children: vec![self.nested(even), self.nested(even + 1)],
            },
        }
    }

    pub fn to_document(&self) -> TreeDocument {
        TreeDocument { m: self.m, p_lags: self.p_lags, sigma: self.sigma, root: self.nested(1) }
    }

    pub fn from_document(doc: &TreeDocument) -> Result<Self> {
        let (mut vertices, mut edges) = (Vec::new(), Vec::new());
        let (mut labels, mut values) = (BTreeMap::new(), BTreeMap::new());
        let mut stack = vec![&doc.root];
        while let Some(node) = stack.pop() {
            vertices.push(node.id);
            if let Some(l) = node.label {
                labels.insert(node.id, l);
            }
            if let Some(v) = node.value {
                values.insert(node.id, v);
            }
            for ch in &node.children {
                edges.push((node.id, ch.id));
                stack.push(ch);
            }
        }
        Self::from_parts(&vertices, &edges, &labels, &values, doc.sigma, doc.m, doc.p_lags)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(s)?)
    }
}

/// Nested serialization of one vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedNode {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<SplitLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<NestedNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub m: usize,
    pub p_lags: usize,
    pub sigma: f64,
    pub root: NestedNode,
}

struct Builder<'a> {
    y: &'a [f64],
    windows: &'a [PredictorWindow],
    /// Sample indices sorted by each column, ties by index.
    order: Vec<Vec<usize>>,
    min_leaf: usize,
    m: usize,
    nodes: BTreeMap<usize, Node>,
    parent: BTreeMap<usize, usize>,
    next_id: usize,
    sse: f64,
}

struct BestSplit {
    col: usize,
    threshold: f64,
    sse: f64,
}

fn node_sse(y: &[f64], idx: &[usize]) -> (f64, f64) {
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
    let sse = idx.iter().map(|&i| (y[i] - mean).powi(2)).sum();
    (mean, sse)
}

impl Builder<'_> {
    fn best_split(&self, member: &[bool], count: usize, mean: f64) -> Option<BestSplit> {
        let mut best: Option<BestSplit> = None;
        let ncols = self.order.len();
        let mut xs = Vec::with_capacity(count);
        let mut ys = Vec::with_capacity(count);
        // columns visited in (feature, lag) order
        let mut cols: Vec<usize> = (0..ncols).collect();
        cols.sort_by_key(|&c| (c % self.m, c / self.m));
        for col in cols {
            xs.clear();
            ys.clear();
            for &i in &self.order[col] {
                if member[i] {
                    xs.push(self.windows[i].column(col));
                    ys.push(self.y[i] - mean);
                }
            }
            let total: f64 = ys.iter().sum();
            let total2: f64 = ys.iter().map(|v| v * v).sum();
            let (mut s1, mut s2) = (0.0, 0.0);
            for k in 0..count - 1 {
                s1 += ys[k];
                s2 += ys[k] * ys[k];
                let nl = k + 1;
                let nr = count - nl;
                if nl < self.min_leaf || nr < self.min_leaf || xs[k] == xs[k + 1] {
                    continue;
                }
                let left = s2 - s1 * s1 / nl as f64;
                let r1 = total - s1;
                let right = (total2 - s2) - r1 * r1 / nr as f64;
                let sse = left.max(0.0) + right.max(0.0);
                if best.as_ref().is_none_or(|b| sse < b.sse - 1e-12 * total2) {
                    best = Some(BestSplit { col, threshold: 0.5 * (xs[k] + xs[k + 1]), sse });
                }
            }
        }
        best
    }

    fn grow(&mut self, id: usize, idx: Vec<usize>) {
        let (mean, sse) = node_sse(self.y, &idx);
        let n = idx.len();
        let split = if n >= 2 * self.min_leaf && sse > 0.0 {
            let mut member = vec![false; self.y.len()];
            idx.iter().for_each(|&i| member[i] = true);
            self.best_split(&member, n, mean).filter(|b| sse - b.sse > 1e-12 * sse)
        } else {
            None
        };
        match split {
            None => {
                self.sse += sse;
                self.nodes.insert(id, Node::Leaf { value: mean });
            }
            Some(b) => {
                let label = SplitLabel { feature: b.col % self.m + 1, lag: b.col / self.m + 1, threshold: b.threshold };
                let even = self.next_id;
                self.next_id += 2;
                self.nodes.insert(id, Node::Internal { label, even });
                self.parent.insert(even, id);
                self.parent.insert(even + 1, id);
                let (ge, lt): (Vec<usize>, Vec<usize>) =
                    idx.into_iter().partition(|&i| self.windows[i].column(b.col) >= b.threshold);
                self.grow(even, ge);
                self.grow(even + 1, lt);
            }
        }
    }
}

/// Greedy CART: split while some midpoint threshold lowers the SSE and both
/// children keep at least `min_leaf` samples.
pub fn fit_cart(targets: &[f64], windows: &[PredictorWindow], min_leaf: usize) -> Result<BinaryTree> {
    if min_leaf < 1 {
        return Err(Error::Config("min_leaf must be at least 1".into()));
    }
    if targets.len() != windows.len() || targets.is_empty() {
        return Err(Error::Shape(format!("{} targets for {} windows", targets.len(), windows.len())));
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("targets must be finite".into()));
    }
    let (m, p_lags) = (windows[0].m(), windows[0].p_lags());
    if windows.iter().any(|w| w.m() != m || w.p_lags() != p_lags) {
        return Err(Error::Shape("windows must share m and p_lags".into()));
    }
    let ncols = m * p_lags;
    let order = (0..ncols)
        .map(|c| {
            let mut o: Vec<usize> = (0..targets.len()).collect();
            o.sort_by(|&a, &b| windows[a].column(c).total_cmp(&windows[b].column(c)).then(a.cmp(&b)));
            o
        })
        .collect();
    let mut b = Builder {
        y: targets,
        windows,
        order,
        min_leaf,
        m,
        nodes: BTreeMap::new(),
        parent: BTreeMap::new(),
        next_id: 2,
        sse: 0.0,
    };
    b.grow(1, (0..targets.len()).collect());
    let sigma = (b.sse / targets.len() as f64).sqrt();
    Ok(BinaryTree { m, p_lags, nodes: b.nodes, parent: b.parent, sigma })
}

/// Training SSE of a tree.
pub fn training_sse(tree: &BinaryTree, targets: &[f64], windows: &[PredictorWindow]) -> f64 {
    targets.iter().zip(windows).map(|(y, w)| (y - tree.predict_descend(w)).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{brute_force_sse, example_window, sample_tree, random_data};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn leaf_sets_and_walks() {
        let t = sample_tree();
        assert_eq!(t.leaves(), (vec![3, 4, 6, 7], vec![1, 2, 5]));
        assert_eq!(t.root_to_leaf_walk(7).unwrap(), vec![(1, 2), (2, 5), (5, 7)]);
        assert_eq!(t.root_to_leaf_walk(3).unwrap(), vec![(1, 3)]);
        assert_eq!(t.root_to_leaf_walk(4).unwrap(), vec![(1, 2), (2, 4)]);
        assert!(matches!(t.root_to_leaf_walk(2), Err(Error::Domain(_))));
        assert_eq!(t.edges(), vec![(1, 2), (1, 3), (2, 4), (2, 5), (5, 6), (5, 7)]);
        let single = BinaryTree::leaf(7.0, 0.0, 3, 2);
        assert_eq!(single.leaves(), (vec![1], vec![]));
        assert!(single.root_to_leaf_walk(1).unwrap().is_empty());
        assert_eq!(single.predict(&example_window()), 7.0);
    }

    #[test]
    fn example_indicator_products() {
        let t = sample_tree();
        let w = example_window();
        let product = |leaf: usize| -> u8 {
            t.root_to_leaf_walk(leaf)
                .unwrap()
                .iter()
                .map(|&(v, c)| split_indicator(&w, &t.label(v).unwrap(), c))
                .product()
        };
        assert_eq!([product(3), product(4), product(6), product(7)], [1, 0, 0, 0]);
        assert_eq!(t.predict(&w), 30.0);
        assert_eq!(t.predict_descend(&w), 30.0);
    }

    #[test]
    fn boundary_convention() {
        let w = PredictorWindow::single(vec![1.5]).unwrap();
        let l = SplitLabel { feature: 1, lag: 1, threshold: 1.5 };
        assert_eq!(split_indicator(&w, &l, 2), 1);
        assert_eq!(split_indicator(&w, &l, 3), 0);
    }

    #[test]
    fn invalid_graphs_rejected() {
        let labels = BTreeMap::from([(1, SplitLabel { feature: 1, lag: 1, threshold: 0.0 })]);
        let values = BTreeMap::from([(2, 1.0), (3, 2.0), (4, 0.0)]);
        let bad = |v: &[usize], e: &[(usize, usize)]| BinaryTree::from_parts(v, e, &labels, &values, 0.0, 1, 1).is_err();
        assert!(bad(&[1, 2], &[(1, 2)]));
        assert!(bad(&[1, 3, 4], &[(1, 3), (1, 4)]));
        assert!(bad(&[1, 2, 3, 4], &[(1, 2), (1, 3)]));
        assert!(bad(&[1, 2, 3], &[(2, 1), (1, 3)]));
        assert!(!bad(&[1, 2, 3], &[(1, 2), (1, 3)]));
    }

    #[test]
    fn constant_and_step_targets() {
        let windows: Vec<_> = (0..10).map(|k| PredictorWindow::single(vec![k as f64]).unwrap()).collect();
        let t = fit_cart(&[3.0; 10], &windows, 2).unwrap();
        assert_eq!(t.vertices(), vec![1]);
        assert_eq!(t.leaf_value(1), Some(3.0));
        assert_eq!(t.sigma(), 0.0);

        let xs = [-2.0, -1.0, -0.5, 0.5, 1.0, 3.0];
        let windows: Vec<_> = xs.iter().map(|&x| PredictorWindow::single(vec![x]).unwrap()).collect();
        let y: Vec<f64> = xs.iter().map(|&x| f64::from(x >= 0.0)).collect();
        let t = fit_cart(&y, &windows, 1).unwrap();
        assert_eq!(t.depth(), 1);
        assert_eq!(t.label(1).unwrap().threshold, 0.0);
        assert_eq!(training_sse(&t, &y, &windows), 0.0);
        assert!(fit_cart(&y, &windows, 0).is_err());
    }

    #[test]
    fn cart_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let rows = rng.random_range(10..=40);
            let (y, w) = random_data(&mut rng, rows, 3, 2);
            let t = fit_cart(&y, &w, 5).unwrap();
            let sse = training_sse(&t, &y, &w);
            let oracle = brute_force_sse(&y, &w, (0..rows).collect(), 5);
            assert!((sse - oracle).abs() < 1e-9 * (1.0 + oracle), "{sse} vs {oracle}");
            assert!((t.sigma() - (sse / rows as f64).sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn monotone_transform_keeps_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (y, w) = random_data(&mut rng, 40, 3, 2);
        let t = fit_cart(&y, &w, 4).unwrap();
        let w2: Vec<PredictorWindow> = w
            .iter()
            .map(|x| {
                let lags: Vec<Vec<f64>> = (1..=2)
                    .map(|l| (1..=3).map(|f| if f == 2 { x.get(f, l).exp() } else { x.get(f, l) }).collect())
                    .collect();
                PredictorWindow::from_lags(&lags).unwrap()
            })
            .collect();
        let t2 = fit_cart(&y, &w2, 4).unwrap();
        let labels = |t: &BinaryTree| -> Vec<(usize, usize, usize)> {
            t.leaves().1.iter().map(|&v| (v, t.label(v).unwrap().feature, t.label(v).unwrap().lag)).collect()
        };
        assert_eq!(labels(&t), labels(&t2));
        for (a, b) in w.iter().zip(&w2) {
            assert_eq!(t.leaf_of(a), t2.leaf_of(b));
        }
    }

    #[test]
    fn json_round_trip() {
        let t = sample_tree();
        let back = BinaryTree::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        let json = t.to_json().unwrap();
        assert!(json.contains("\"threshold\": 1.5"));
    }

    proptest! {
        #[test]
        fn tree_invariants(seed in 0u64..5000, rows in 12usize..50, min_leaf in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (y, w) = random_data(&mut rng, rows, 3, 2);
            let t = fit_cart(&y, &w, min_leaf).unwrap();
            let (f, fbar) = t.leaves();
            prop_assert_eq!(f.len(), fbar.len() + 1);
            let mut counts: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for (yy, x) in y.iter().zip(&w) {
                // exactly one leaf product is 1
                let ones: usize = f.iter().filter(|&&u| {
                    t.root_to_leaf_walk(u).unwrap().iter()
                        .all(|&(v, c)| split_indicator(x, &t.label(v).unwrap(), c) == 1)
                }).count();
                prop_assert_eq!(ones, 1);
                prop_assert_eq!(t.predict(x), t.predict_descend(x));
                counts.entry(t.leaf_of(x)).or_default().push(*yy);
            }
            for (leaf, ys) in &counts {
                prop_assert!(ys.len() >= min_leaf);
                let mean = ys.iter().sum::<f64>() / ys.len() as f64;
                prop_assert!((t.leaf_value(*leaf).unwrap() - mean).abs() < 1e-9);
            }
            // SSE does not increase with depth
            let shallow = fit_cart(&y, &w, rows).unwrap();
            prop_assert!(training_sse(&t, &y, &w) <= training_sse(&shallow, &y, &w) + 1e-9);
        }
    }
}
