//! CART regression tree.
//!
//! Greedy binary splitting on squared error. At every node each feature's
//! samples are scanned in sorted order and every midpoint between two
//! consecutive distinct values is a candidate threshold; the candidate with
//! the lowest summed child squared error wins, ties going to the lower
//! feature index and then the lower threshold. Rows with
//! `feature <= threshold` go left. Leaves predict the mean of their training
//! targets.
//!
//! Sorted index lists are computed once at the root and partitioned stably on
//! the way down, so a node costs `O(n * features)`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{Dataset, FEATURE_COUNT, FEATURE_NAMES};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Smallest accepted drop in node mean squared error for a split.
    pub min_mse_decrease: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_depth: 8,
            min_samples_leaf: 50,
            min_mse_decrease: 1e-7,
        }
    }
}

impl TrainConfig {
    /// Grows until every leaf is pure.
    pub fn interpolating() -> Self {
        TrainConfig {
            max_depth: usize::MAX,
            min_samples_leaf: 1,
            min_mse_decrease: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 || self.min_samples_leaf < 1 {
            return Err(Error::invalid("max_depth and min_samples_leaf must be at least 1"));
        }
        if !(self.min_mse_decrease >= 0.0) {
            return Err(Error::invalid("min_mse_decrease must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }
}

/// A fitted tree over a fixed number of features.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub n_features: usize,
    pub root: TreeNode,
}

/// Best split found at a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Summed squared error of the two children.
    pub children_sse: f64,
    pub left_count: usize,
}

/// Column-major training matrix.
struct Columns<'a> {
    cols: Vec<Vec<f64>>,
    targets: &'a [f64],
}

/// Fits a tree to the rows of `dataset` in contract feature order.
pub fn fit_tree(dataset: &Dataset, cfg: &TrainConfig) -> Result<DecisionTree> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData(format!(
            "dataset for {} is empty",
            dataset.segment
        )));
    }
    let rows: Vec<&[f64]> = dataset.rows.iter().map(|r| &r.features[..]).collect();
    let targets = dataset.targets();
    fit_tree_rows(&rows, &targets, cfg)
}

/// Fits a tree to arbitrary row-major features.
pub fn fit_tree_rows<R: AsRef<[f64]>>(rows: &[R], targets: &[f64], cfg: &TrainConfig) -> Result<DecisionTree> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::InsufficientData("empty dataset".into()));
    }
    if rows.len() != targets.len() {
        return Err(Error::invalid(format!(
            "{} rows but {} targets",
            rows.len(),
            targets.len()
        )));
    }
    let n_features = rows[0].as_ref().len();
    if n_features == 0 || rows.iter().any(|r| r.as_ref().len() != n_features) {
        return Err(Error::invalid("rows must share a non-zero feature count"));
    }
    if rows.iter().flat_map(|r| r.as_ref()).chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::invalid("features and targets must be finite"));
    }
    let data = Columns {
        cols: (0..n_features)
            .map(|f| rows.iter().map(|r| r.as_ref()[f]).collect())
            .collect(),
        targets,
    };
    let sorted: Vec<Vec<u32>> = data
        .cols
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..col.len() as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut in_left = vec![false; targets.len()];
    let root = grow(&data, sorted, 0, cfg, &mut in_left);
    Ok(DecisionTree { n_features, root })
}

fn node_mean(targets: &[f64], idx: &[u32]) -> f64 {
    let first = targets[idx[0] as usize];
    if idx.iter().all(|&i| targets[i as usize] == first) {
        return first;
    }
    idx.iter().map(|&i| targets[i as usize]).sum::<f64>() / idx.len() as f64
}

/// Squared error of `idx` around `center`-shifted sums.
fn sse(sum: f64, sumsq: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (sumsq - sum * sum / n as f64).max(0.0)
}

/// Searches every feature and midpoint for the lowest children SSE.
///
/// `sorted[f]` lists the node's rows ordered by feature `f`.
fn best_split(data: &Columns<'_>, sorted: &[Vec<u32>], min_leaf: usize) -> Option<(SplitChoice, f64)> {
    let idx = &sorted[0];
    let n = idx.len();
    let center = idx.iter().map(|&i| data.targets[i as usize]).sum::<f64>() / n as f64;
    let (mut total, mut total_sq) = (0.0, 0.0);
    for &i in idx {
        let d = data.targets[i as usize] - center;
        total += d;
        total_sq += d * d;
    }
    let parent_sse = sse(total, total_sq, n);

    let mut best: Option<SplitChoice> = None;
    for (f, order) in sorted.iter().enumerate() {
        let col = &data.cols[f];
        let (mut s, mut sq) = (0.0, 0.0);
        for pos in 0..n - 1 {
            let i = order[pos] as usize;
            let d = data.targets[i] - center;
            s += d;
            sq += d * d;
            let left = pos + 1;
            if left < min_leaf || n - left < min_leaf {
                continue;
            }
            let (x0, x1) = (col[i], col[order[pos + 1] as usize]);
            if !(x0 < x1) {
                continue;
            }
            let children = sse(s, sq, left) + sse(total - s, total_sq - sq, n - left);
            if best.is_none_or(|b| children < b.children_sse) {
                let mut threshold = x0 + (x1 - x0) / 2.0;
                if threshold >= x1 {
                    threshold = x0;
                }
                best = Some(SplitChoice {
                    feature: f,
                    threshold,
                    children_sse: children,
                    left_count: left,
                });
            }
        }
    }
    best.map(|b| (b, parent_sse))
}

fn grow(data: &Columns<'_>, sorted: Vec<Vec<u32>>, depth: usize, cfg: &TrainConfig, in_left: &mut [bool]) -> TreeNode {
    let idx = &sorted[0];
    let n = idx.len();
    let value = node_mean(data.targets, idx);
    let pure = idx.iter().all(|&i| data.targets[i as usize] == data.targets[idx[0] as usize]);
    if pure || depth >= cfg.max_depth || n < 2 * cfg.min_samples_leaf {
        return TreeNode::Leaf { value };
    }
    let Some((choice, parent_sse)) = best_split(data, &sorted, cfg.min_samples_leaf) else {
        return TreeNode::Leaf { value };
    };
    let decrease = (parent_sse - choice.children_sse) / n as f64;
    if !(choice.children_sse < parent_sse) || decrease < cfg.min_mse_decrease {
        return TreeNode::Leaf { value };
    }
    debug_assert!(choice.children_sse <= parent_sse, "split increased training error");

    let col = &data.cols[choice.feature];
    for &i in idx {
        in_left[i as usize] = col[i as usize] <= choice.threshold;
    }
    let mut left_sorted = Vec::with_capacity(sorted.len());
    let mut right_sorted = Vec::with_capacity(sorted.len());
    for order in &sorted {
        let (l, r): (Vec<u32>, Vec<u32>) = order.iter().partition(|&&i| in_left[i as usize]);
        left_sorted.push(l);
        right_sorted.push(r);
    }
    drop(sorted);
    debug_assert_eq!(left_sorted[0].len(), choice.left_count);
    let left = grow(data, left_sorted, depth + 1, cfg, in_left);
    let right = grow(data, right_sorted, depth + 1, cfg, in_left);
    TreeNode::Split {
        feature: choice.feature,
        threshold: choice.threshold,
        left: Box::new(left),
        right: Box::new(right),
    }
}

/// The split `fit_tree` would make at the root, if any.
pub fn root_split<R: AsRef<[f64]>>(rows: &[R], targets: &[f64], min_samples_leaf: usize) -> Option<SplitChoice> {
    let tree = fit_tree_rows(
        rows,
        targets,
        &TrainConfig {
            max_depth: 1,
            min_samples_leaf,
            min_mse_decrease: 0.0,
        },
    )
    .ok()?;
    let TreeNode::Split { feature, threshold, .. } = tree.root else {
        return None;
    };
    let left: Vec<f64> = rows
        .iter()
        .zip(targets)
        .filter(|(r, _)| r.as_ref()[feature] <= threshold)
        .map(|(_, y)| *y)
        .collect();
    let right: Vec<f64> = rows
        .iter()
        .zip(targets)
        .filter(|(r, _)| r.as_ref()[feature] > threshold)
        .map(|(_, y)| *y)
        .collect();
    let direct = |ys: &[f64]| {
        let m = ys.iter().sum::<f64>() / ys.len() as f64;
        ys.iter().map(|y| (y - m).powi(2)).sum::<f64>()
    };
    Some(SplitChoice {
        feature,
        threshold,
        children_sse: direct(&left) + direct(&right),
        left_count: left.len(),
    })
}

impl DecisionTree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if row[*feature] <= *threshold { left } else { right },
            }
        }
    }

    /// Predicts every row; each must have exactly `n_features` values.
    pub fn predict<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<f64>> {
        if let Some(bad) = rows.iter().find(|r| r.as_ref().len() != self.n_features) {
            return Err(Error::invalid(format!(
                "row has {} features, model expects {}",
                bad.as_ref().len(),
                self.n_features
            )));
        }
        Ok(rows.iter().map(|r| self.predict_row(r.as_ref())).collect())
    }

    pub fn predict_dataset(&self, d: &Dataset) -> Result<Vec<f64>> {
        let rows: Vec<&[f64]> = d.rows.iter().map(|r| &r.features[..]).collect();
        self.predict(&rows)
    }

    /// Line-oriented text form; parsing it back yields an identical tree.
    ///
    /// ```text
    /// # pigline regression tree
    /// # split-rule le-left
    /// # features 9 mean8,min8,...
    /// node 0 split 6 0.0712 1 4
    /// node 1 leaf 0.25
    /// ```
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("# pigline regression tree\n");
        out.push_str("# split-rule le-left\n");
        let names = if self.n_features == FEATURE_COUNT {
            FEATURE_NAMES.join(",")
        } else {
            (0..self.n_features).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",")
        };
        let _ = writeln!(out, "# features {} {names}", self.n_features);
        let mut next_id = 0usize;
        write_node(&self.root, &mut next_id, &mut out);
        out
    }

    pub fn from_text(text: &str) -> Result<DecisionTree> {
        parse_tree(text, Path::new("<model>"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DecisionTree> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_tree(&text, path)
    }
}

fn write_node(node: &TreeNode, next_id: &mut usize, out: &mut String) {
    let id = *next_id;
    *next_id += 1;
    match node {
        TreeNode::Leaf { value } => {
            let _ = writeln!(out, "node {id} leaf {value}");
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            // preorder: left child is id+1, right child follows the left subtree
            let left_id = id + 1;
            let right_id = left_id + count_nodes(left);
            let _ = writeln!(out, "node {id} split {feature} {threshold} {left_id} {right_id}");
            write_node(left, next_id, out);
            write_node(right, next_id, out);
        }
    }
}

fn count_nodes(node: &TreeNode) -> usize {
    match node {
        TreeNode::Leaf { .. } => 1,
        TreeNode::Split { left, right, .. } => 1 + count_nodes(left) + count_nodes(right),
    }
}

enum RawNode {
    Leaf(f64),
    Split(usize, f64, usize, usize),
}

fn parse_tree(text: &str, path: &Path) -> Result<DecisionTree> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut nodes: HashMap<usize, RawNode> = HashMap::new();
    let mut declared_features: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let mut parts = meta.split_whitespace();
            match parts.next() {
                Some("split-rule") if parts.next() != Some("le-left") => {
                    return Err(err(line_no, "unsupported split rule".into()));
                }
                Some("features") => {
                    let n = parts
                        .next()
                        .and_then(|n| n.parse().ok())
                        .ok_or_else(|| err(line_no, "bad feature count".into()))?;
                    declared_features = Some(n);
                }
                _ => {}
            }
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| -> Result<usize> { s.parse().map_err(|_| err(line_no, format!("bad integer `{s}`"))) };
        let real = |s: &str| -> Result<f64> { s.parse().map_err(|_| err(line_no, format!("bad number `{s}`"))) };
        let (id, node) = match parts.as_slice() {
            ["node", id, "leaf", v] => (num(id)?, RawNode::Leaf(real(v)?)),
            ["node", id, "split", f, t, l, r] => (num(id)?, RawNode::Split(num(f)?, real(t)?, num(l)?, num(r)?)),
            _ => return Err(err(line_no, format!("unrecognized line `{line}`"))),
        };
        if nodes.insert(id, node).is_some() {
            return Err(err(line_no, format!("duplicate node id {id}")));
        }
    }
    if nodes.is_empty() {
        return Err(err(0, "model has no nodes".into()));
    }
    let mut used = 0usize;
    let root = build(&nodes, 0, &mut used, 0).map_err(|m| err(0, m))?;
    if used != nodes.len() {
        return Err(err(0, format!("{} nodes unreachable from the root", nodes.len() - used)));
    }
    let max_feature = max_feature(&root);
    let n_features = declared_features.unwrap_or(max_feature.map_or(FEATURE_COUNT, |m| m + 1));
    if max_feature.is_some_and(|m| m >= n_features) {
        return Err(err(0, "split feature index beyond declared feature count".into()));
    }
    Ok(DecisionTree { n_features, root })
}

fn build(nodes: &HashMap<usize, RawNode>, id: usize, used: &mut usize, depth: usize) -> std::result::Result<TreeNode, String> {
    if depth > nodes.len() {
        return Err("cycle in node references".into());
    }
    *used += 1;
    match nodes.get(&id) {
        None => Err(format!("missing node {id}")),
        Some(RawNode::Leaf(v)) => Ok(TreeNode::Leaf { value: *v }),
        Some(RawNode::Split(f, t, l, r)) => Ok(TreeNode::Split {
            feature: *f,
            threshold: *t,
            left: Box::new(build(nodes, *l, used, depth + 1)?),
            right: Box::new(build(nodes, *r, used, depth + 1)?),
        }),
    }
}

fn max_feature(node: &TreeNode) -> Option<usize> {
    match node {
        TreeNode::Leaf { .. } => None,
        TreeNode::Split { feature, left, right, .. } => {
            Some((*feature).max(max_feature(left).unwrap_or(0)).max(max_feature(right).unwrap_or(0)))
        }
    }
}
