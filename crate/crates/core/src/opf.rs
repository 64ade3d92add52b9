//! Optimum-path forests over complete Euclidean graphs.
//!
//! Path cost is `f_max`: the largest edge weight along the path, so the optimum
//! cost between two nodes is their bottleneck (minimax) distance. Forests are
//! computed by the image foresting transform: best-first expansion from the
//! roots, popping equal-cost nodes in insertion order.

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::projection::SquareMatrix;
use crate::Label;

/// Edge weights of a complete graph.
pub trait Metric {
    fn len(&self) -> usize;

    fn dist(&self, i: usize, j: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Metric for FeatureMatrix {
    fn len(&self) -> usize {
        self.n_samples()
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        self.row(i).iter().zip(self.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
    }
}

/// Precomputed Euclidean distances.
#[derive(Debug, Clone)]
pub struct DistanceMatrix(SquareMatrix);

impl DistanceMatrix {
    pub fn euclidean(points: &FeatureMatrix) -> Self {
        let mut m = crate::projection::pairwise_sq_dists(points);
        m.data_mut().iter_mut().for_each(|v| *v = v.sqrt());
        Self(m)
    }
}

impl Metric for DistanceMatrix {
    fn len(&self) -> usize {
        self.0.n()
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }
}

/// Dense min-priority queue keyed by `(cost, insertion stamp)`: equal costs pop FIFO.
struct FifoMinQueue {
    key: Vec<f64>,
    stamp: Vec<u64>,
    queued: Vec<bool>,
    len: usize,
    clock: u64,
}

impl FifoMinQueue {
    fn new(n: usize) -> Self {
        Self { key: vec![f64::INFINITY; n], stamp: vec![0; n], queued: vec![false; n], len: 0, clock: 0 }
    }

    /// Inserts `i`, or moves it to the back of its new cost level.
    fn push(&mut self, i: usize, key: f64) {
        if !self.queued[i] {
            self.queued[i] = true;
            self.len += 1;
        }
        self.key[i] = key;
        self.stamp[i] = self.clock;
        self.clock += 1;
    }

    fn pop(&mut self) -> Option<usize> {
        if self.len == 0 {
            return None;
        }
        let mut best: Option<usize> = None;
        for i in 0..self.key.len() {
            if !self.queued[i] {
                continue;
            }
            best = match best {
                Some(b) if (self.key[b], self.stamp[b]) <= (self.key[i], self.stamp[i]) => Some(b),
                _ => Some(i),
            };
        }
        let b = best?;
        self.queued[b] = false;
        self.len -= 1;
        Some(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestResult {
    pub cost: Vec<f64>,
    pub pred: Vec<Option<usize>>,
    pub root: Vec<usize>,
    pub root_label: Vec<Label>,
}

impl ForestResult {
    /// Nodes from `node` back to its root, inclusive.
    pub fn path_to_root(&self, mut node: usize) -> Vec<usize> {
        let mut path = vec![node];
        while let Some(p) = self.pred[node] {
            path.push(p);
            node = p;
        }
        path
    }
}

/// Minimax-path forest from labeled `roots` over the complete graph of `metric`.
///
/// Roots enter the queue in the order given; a repeated root is ignored.
pub fn minimax_forest<M: Metric + ?Sized>(metric: &M, roots: &[(usize, Label)]) -> Result<ForestResult> {
    if roots.is_empty() {
        return Err(Error::EmptyRoots);
    }
    let n = metric.len();
    let mut cost = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    let mut root: Vec<usize> = (0..n).collect();
    let mut root_label = vec![0; n];
    let mut done = vec![false; n];
    let mut queue = FifoMinQueue::new(n);

    for &(r, label) in roots {
        if r >= n {
            return Err(Error::InvalidArgument(format!("root {r} outside graph of {n} nodes")));
        }
        if cost[r] == 0.0 {
            continue;
        }
        cost[r] = 0.0;
        root_label[r] = label;
        queue.push(r, 0.0);
    }

    while let Some(p) = queue.pop() {
        done[p] = true;
        for q in 0..n {
            if done[q] {
                continue;
            }
            let offered = cost[p].max(metric.dist(p, q));
            if offered < cost[q] {
                cost[q] = offered;
                pred[q] = Some(p);
                root[q] = root[p];
                root_label[q] = root_label[p];
                queue.push(q, offered);
            }
        }
    }
    Ok(ForestResult { cost, pred, root, root_label })
}

/// `1 - k_a / (k_a + k_b)`, and 0.5 when both costs are zero.
pub fn confidence(k_a: f64, k_b: f64) -> Result<f64> {
    if !(k_a >= 0.0) || !(k_b >= 0.0) || k_a > k_b {
        return Err(Error::InvalidArgument(format!("confidence needs 0 <= k_a <= k_b, got ({k_a}, {k_b})")));
    }
    let total = k_a + k_b;
    Ok(if total > 0.0 { 1.0 - k_a / total } else { 0.5 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatedSample {
    pub id: usize,
    pub label: Label,
    /// Cost offered by the conquering class.
    pub k_a: f64,
    /// Best cost offered by any other class.
    pub k_b: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagationResult {
    pub samples: Vec<PropagatedSample>,
}

impl PropagationResult {
    pub fn get(&self, id: usize) -> Option<&PropagatedSample> {
        self.samples.binary_search_by_key(&id, |s| s.id).ok().map(|i| &self.samples[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.samples.iter().map(|s| s.id)
    }

    /// One `id label k_A k_B confidence` line per sample; reals round-trip exactly.
    pub fn render(&self) -> String {
        self.samples
            .iter()
            .map(|s| format!("{} {} {:?} {:?} {:?}\n", s.id, s.label, s.k_a, s.k_b, s.confidence))
            .collect()
    }

    pub fn parse(path: &std::path::Path, text: &str) -> Result<Self> {
        let mut samples = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::format(path, idx + 1, format!("expected `id label k_A k_B confidence`, got `{line}`"));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(bad());
            }
            let real = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
            samples.push(PropagatedSample {
                id: f[0].parse().map_err(|_| bad())?,
                label: f[1].parse().map_err(|_| bad())?,
                k_a: real(f[2])?,
                k_b: real(f[3])?,
                confidence: real(f[4])?,
            });
        }
        samples.sort_by_key(|s| s.id);
        Ok(Self { samples })
    }
}

/// OPF-Semi: one forest per class rooted at that class's supervised nodes,
/// each spanning every node of `metric`.
///
/// Result ids are node indices of `metric`, in the order of `unsupervised`.
/// Ties on the winning cost go to the smallest class id.
pub fn opf_semi_propagate<M: Metric + ?Sized>(
    metric: &M,
    supervised: &[(usize, Label)],
    unsupervised: &[usize],
) -> Result<PropagationResult> {
    let n = metric.len();
    let mut seen = vec![false; n];
    for &i in supervised.iter().map(|(i, _)| i).chain(unsupervised) {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidArgument(format!("node {i} is out of range or listed twice")));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidArgument("supervised and unsupervised nodes must cover the graph".into()));
    }
    let mut classes: Vec<Label> = supervised.iter().map(|(_, l)| *l).collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClassSupervision);
    }

    let per_class: Vec<Vec<f64>> = classes
        .iter()
        .map(|&c| {
            let roots: Vec<(usize, Label)> = supervised.iter().copied().filter(|(_, l)| *l == c).collect();
            minimax_forest(metric, &roots).map(|f| f.cost)
        })
        .collect::<Result<_>>()?;

    let samples = unsupervised
        .iter()
        .map(|&s| {
            let mut winner = 0;
            for ci in 1..classes.len() {
                if per_class[ci][s] < per_class[winner][s] {
                    winner = ci;
                }
            }
            let k_a = per_class[winner][s];
            let k_b = (0..classes.len()).filter(|&ci| ci != winner).map(|ci| per_class[ci][s]).fold(f64::INFINITY, f64::min);
            Ok(PropagatedSample { id: s, label: classes[winner], k_a, k_b, confidence: confidence(k_a, k_b)? })
        })
        .collect::<Result<_>>()?;
    Ok(PropagationResult { samples })
}

/// Supervised OPF classifier.
#[derive(Debug, Clone)]
pub struct OpfModel {
    points: FeatureMatrix,
    pub labels: Vec<Label>,
    /// Label of each node's conquering prototype.
    pub forest_labels: Vec<Label>,
    pub trained_cost: Vec<f64>,
    pub prototypes: Vec<usize>,
    /// Training nodes by ascending `(trained_cost, index)`.
    order: Vec<usize>,
}

/// Above this many training points distances are recomputed instead of cached.
const DENSE_DISTANCE_LIMIT: usize = 6000;

pub fn opf_train(points: &FeatureMatrix, labels: &[Label]) -> Result<OpfModel> {
    if labels.is_empty() {
        return Err(Error::EmptyTraining);
    }
    if labels.len() != points.n_samples() {
        return Err(Error::DimensionMismatch { expected: points.n_samples(), actual: labels.len() });
    }
    if points.n_samples() <= DENSE_DISTANCE_LIMIT {
        train_with(&DistanceMatrix::euclidean(points), points, labels)
    } else {
        train_with(points, points, labels)
    }
}

/// Prim's algorithm over the complete graph; `parent[v]` joins `v` to the tree.
fn minimum_spanning_tree<M: Metric + ?Sized>(metric: &M) -> Vec<Option<usize>> {
    let n = metric.len();
    let mut key = vec![f64::INFINITY; n];
    let mut parent = vec![None; n];
    let mut in_tree = vec![false; n];
    key[0] = 0.0;
    for _ in 0..n {
        let mut u = usize::MAX;
        for v in 0..n {
            if !in_tree[v] && (u == usize::MAX || key[v] < key[u]) {
                u = v;
            }
        }
        in_tree[u] = true;
        for v in 0..n {
            if !in_tree[v] {
                let d = metric.dist(u, v);
                if d < key[v] {
                    key[v] = d;
                    parent[v] = Some(u);
                }
            }
        }
    }
    parent
}

fn train_with<M: Metric + ?Sized>(metric: &M, points: &FeatureMatrix, labels: &[Label]) -> Result<OpfModel> {
    let n = labels.len();
    let single_class = labels.iter().all(|l| *l == labels[0]);
    let prototypes: Vec<usize> = if single_class {
        (0..n).collect()
    } else {
        let parent = minimum_spanning_tree(metric);
        let mut is_proto = vec![false; n];
        for (v, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                if labels[p] != labels[v] {
                    is_proto[p] = true;
                    is_proto[v] = true;
                }
            }
        }
        (0..n).filter(|&i| is_proto[i]).collect()
    };
    let roots: Vec<(usize, Label)> = prototypes.iter().map(|&p| (p, labels[p])).collect();
    let forest = minimax_forest(metric, &roots)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| forest.cost[a].total_cmp(&forest.cost[b]).then(a.cmp(&b)));
    Ok(OpfModel {
        points: points.clone(),
        labels: labels.to_vec(),
        forest_labels: forest.root_label,
        trained_cost: forest.cost,
        prototypes,
        order,
    })
}

impl OpfModel {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Label of the training node `t` minimizing `max(trained_cost(t), d(t, x))`;
    /// ties go to the smaller trained cost, then the smaller index.
    pub fn classify(&self, x: &[f64]) -> Result<(Label, f64)> {
        if x.len() != self.points.n_dims() {
            return Err(Error::DimensionMismatch { expected: self.points.n_dims(), actual: x.len() });
        }
        let mut best = (f64::INFINITY, usize::MAX);
        for &t in &self.order {
            let tc = self.trained_cost[t];
            if tc >= best.0 {
                break;
            }
            let d = self.points.row(t).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let c = tc.max(d);
            if c < best.0 {
                best = (c, t);
            }
        }
        Ok((self.forest_labels[best.1], best.0))
    }

    pub fn classify_all(&self, x: &FeatureMatrix) -> Result<Vec<Label>> {
        x.rows().map(|r| self.classify(r).map(|(l, _)| l)).collect()
    }
}

pub fn opf_classify(model: &OpfModel, x: &[f64]) -> Result<(Label, f64)> {
    model.classify(x)
}
