//! Regression trees, their sigmoid-softened form and conversion to TSK rules.
//!
//! Trees route left when `x[feature] < threshold`. Fuzzifying a tree replaces
//! each test by a complementary pair of sigmoids sharing the threshold, so an
//! input reaches every leaf with the product of the grades along its path and
//! those path grades sum to one.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{design_with_intercept, weighted_least_squares};
use crate::tsk::{
    clamp_width, normalize, Aggregation, Antecedent, Clause, Consequent, MembershipFunction, Rule,
    TskModel,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    Leaf {
        leaf: Consequent,
    },
}

impl Node {
    fn leaf_count(&self) -> usize {
        match self {
            Self::Leaf { .. } => 1,
            Self::Internal { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        match self {
            Self::Leaf { leaf } => match leaf {
                Consequent::Affine { slopes, .. } if slopes.len() != d => Err(Error::InvalidModel(
                    format!("leaf has {} slopes for input dimension {d}", slopes.len()),
                )),
                _ => Ok(()),
            },
            Self::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                if *feature >= d || !threshold.is_finite() {
                    return Err(Error::InvalidModel(format!(
                        "split on feature {feature} at {threshold} is invalid for dimension {d}"
                    )));
                }
                left.validate(d)?;
                right.validate(d)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeWire<Node>", into = "TreeWire<Node>")]
pub struct RegressionTree {
    input_dim: usize,
    /// Training ranges per feature; the fallback scale for fuzzification.
    feature_ranges: Vec<(f64, f64)>,
    root: Node,
}

#[derive(Serialize, Deserialize)]
struct TreeWire<N> {
    input_dim: usize,
    feature_ranges: Vec<(f64, f64)>,
    root: N,
}

impl From<RegressionTree> for TreeWire<Node> {
    fn from(t: RegressionTree) -> Self {
        Self {
            input_dim: t.input_dim,
            feature_ranges: t.feature_ranges,
            root: t.root,
        }
    }
}

impl TryFrom<TreeWire<Node>> for RegressionTree {
    type Error = Error;

    fn try_from(w: TreeWire<Node>) -> Result<Self> {
        Self::new(w.input_dim, w.feature_ranges, w.root)
    }
}

impl RegressionTree {
    pub fn new(input_dim: usize, feature_ranges: Vec<(f64, f64)>, root: Node) -> Result<Self> {
        if input_dim == 0 || feature_ranges.len() != input_dim {
            return Err(Error::InvalidModel(format!(
                "tree over {input_dim} inputs needs as many feature ranges, got {}",
                feature_ranges.len()
            )));
        }
        root.validate(input_dim)?;
        Ok(Self {
            input_dim,
            feature_ranges,
            root,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn feature_ranges(&self) -> &[(f64, f64)] {
        &self.feature_ranges
    }

    pub fn num_leaves(&self) -> usize {
        self.root.leaf_count()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.input_dim, x.len())?;
        Ok(self.leaf_for(x).eval(x))
    }

    fn leaf_for(&self, x: &[f64]) -> &Consequent {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { leaf } => return leaf,
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    /// Leaf index (depth-first, left before right) reached by `x`.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        fn walk(n: &Node, x: &[f64], offset: usize) -> usize {
            match n {
                Node::Leaf { .. } => offset,
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if x[*feature] < *threshold {
                        walk(left, x, offset)
                    } else {
                        walk(right, x, offset + left.leaf_count())
                    }
                }
            }
        }
        walk(&self.root, x, 0)
    }

    pub fn batch_predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        check_dim(self.input_dim, data.dim())?;
        Ok(data.rows().map(|x| self.leaf_for(x).eval(x)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestOp {
    Less,
    GreaterEq,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Test {
    pub feature: usize,
    pub op: TestOp,
    pub threshold: f64,
}

impl Test {
    pub fn holds(&self, x: &[f64]) -> bool {
        match self.op {
            TestOp::Less => x[self.feature] < self.threshold,
            TestOp::GreaterEq => x[self.feature] >= self.threshold,
        }
    }
}

/// Conjunction of crisp tests leading to one leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrispRule {
    pub tests: Vec<Test>,
    pub consequent: Consequent,
}

impl CrispRule {
    pub fn matches(&self, x: &[f64]) -> bool {
        self.tests.iter().all(|t| t.holds(x))
    }
}

pub(crate) fn fmt_num(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e6) {
        format!("{v:.2}")
    } else {
        format!("{v:.3e}")
    }
}

pub(crate) fn format_consequent(c: &Consequent, num: fn(f64) -> String) -> String {
    match c {
        Consequent::Constant(v) => num(*v),
        Consequent::Affine { slopes, intercept } => {
            let mut s = String::new();
            for (i, a) in slopes.iter().enumerate() {
                if *a != 0.0 {
                    s.push_str(&format!("{}*x{i} + ", num(*a)));
                }
            }
            s.push_str(&num(*intercept));
            s
        }
    }
}

impl fmt::Display for CrispRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ante = if self.tests.is_empty() {
            "TRUE".to_string()
        } else {
            self.tests
                .iter()
                .map(|t| {
                    let op = match t.op {
                        TestOp::Less => "<",
                        TestOp::GreaterEq => ">=",
                    };
                    format!("x{} {op} {}", t.feature, fmt_num(t.threshold))
                })
                .collect::<Vec<_>>()
                .join(" AND ")
        };
        write!(
            f,
            "IF {ante} THEN y = {}",
            format_consequent(&self.consequent, fmt_num)
        )
    }
}

/// One rule per leaf, depth-first, left before right.
pub fn extract_crisp_rules(tree: &RegressionTree) -> Vec<CrispRule> {
    fn walk(n: &Node, path: &mut Vec<Test>, out: &mut Vec<CrispRule>) {
        match n {
            Node::Leaf { leaf } => out.push(CrispRule {
                tests: path.clone(),
                consequent: leaf.clone(),
            }),
            Node::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                for (op, child) in [(TestOp::Less, left), (TestOp::GreaterEq, right)] {
                    path.push(Test {
                        feature: *feature,
                        op,
                        threshold: *threshold,
                    });
                    walk(child, path, out);
                    path.pop();
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(&tree.root, &mut Vec::new(), &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Reduction in the sum of squared errors.
    pub gain: f64,
}

/// Best variance-reduction split of the examples in `idx`, candidates at
/// midpoints of consecutive distinct values. Ties go to the lowest feature,
/// then the lowest threshold.
pub fn best_split(data: &Dataset, idx: &[usize], min_leaf: usize) -> Option<Split> {
    let n = idx.len();
    if n < 2 * min_leaf.max(1) {
        return None;
    }
    let y = data.targets();
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
    let mut best: Option<Split> = None;
    let mut order = idx.to_vec();
    for f in 0..data.dim() {
        order.sort_by(|&a, &b| data.row(a)[f].total_cmp(&data.row(b)[f]));
        let total: f64 = order.iter().map(|&i| y[i] - mean).sum();
        let mut left_sum = 0.0;
        for j in 0..n - 1 {
            left_sum += y[order[j]] - mean;
            let (lo, hi) = (data.row(order[j])[f], data.row(order[j + 1])[f]);
            let n_left = j + 1;
            let n_right = n - n_left;
            if lo == hi || n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64;
            if gain > best.map_or(0.0, |b| b.gain) {
                let mut t = 0.5 * (lo + hi);
                if !(lo < t && t <= hi) {
                    t = hi;
                }
                best = Some(Split {
                    feature: f,
                    threshold: t,
                    gain,
                });
            }
        }
    }
    best
}

enum Grow {
    Leaf(Vec<usize>, Option<Split>),
    Split(usize, f64, usize, usize),
}

/// Best-first growth: repeatedly split the leaf with the largest SSE
/// reduction until `max_leaves` leaves exist or no split reduces the error.
/// Leaves predict their mean target.
pub fn fit_tree(data: &Dataset, max_leaves: usize, min_leaf: usize) -> Result<RegressionTree> {
    if data.is_empty() {
        return Err(Error::Input(
            "cannot grow a tree on an empty dataset".into(),
        ));
    }
    if max_leaves == 0 || min_leaf == 0 {
        return Err(Error::InvalidArgument(
            "max_leaves and min_leaf must be at least 1".into(),
        ));
    }
    let all: Vec<usize> = (0..data.len()).collect();
    let first = best_split(data, &all, min_leaf);
    let mut arena = vec![Grow::Leaf(all, first)];
    let mut leaves = 1;
    while leaves < max_leaves {
        let mut pick: Option<(usize, Split)> = None;
        for (id, node) in arena.iter().enumerate() {
            if let Grow::Leaf(_, Some(s)) = node {
                if pick.map_or(true, |(_, b)| s.gain > b.gain) {
                    pick = Some((id, *s));
                }
            }
        }
        let Some((id, s)) = pick else { break };
        let Grow::Leaf(idx, _) = std::mem::replace(&mut arena[id], Grow::Leaf(Vec::new(), None))
        else {
            unreachable!()
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| data.row(i)[s.feature] < s.threshold);
        let ls = best_split(data, &l, min_leaf);
        let rs = best_split(data, &r, min_leaf);
        arena.push(Grow::Leaf(l, ls));
        arena.push(Grow::Leaf(r, rs));
        arena[id] = Grow::Split(s.feature, s.threshold, arena.len() - 2, arena.len() - 1);
        leaves += 1;
    }
    fn build(arena: &[Grow], id: usize, y: &[f64]) -> Node {
        match &arena[id] {
            Grow::Leaf(idx, _) => Node::Leaf {
                leaf: Consequent::Constant(
                    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64,
                ),
            },
            Grow::Split(f, t, l, r) => Node::Internal {
                feature: *f,
                threshold: *t,
                left: Box::new(build(arena, *l, y)),
                right: Box::new(build(arena, *r, y)),
            },
        }
    }
    let root = build(&arena, 0, data.targets());
    let ranges = data.feature_ranges().expect("non-empty dataset");
    RegressionTree::new(data.dim(), ranges, root)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FuzzyNode {
    Internal {
        feature: usize,
        threshold: f64,
        alpha: f64,
        left: Box<FuzzyNode>,
        right: Box<FuzzyNode>,
    },
    Leaf {
        leaf: Consequent,
    },
}

impl FuzzyNode {
    fn validate(&self, d: usize) -> Result<()> {
        match self {
            Self::Leaf { .. } => Ok(()),
            Self::Internal {
                feature,
                threshold,
                alpha,
                left,
                right,
            } => {
                if *feature >= d || !threshold.is_finite() || !(*alpha > 0.0) || !alpha.is_finite()
                {
                    return Err(Error::InvalidModel(format!(
                        "fuzzy split (feature {feature}, threshold {threshold}, alpha {alpha}) is invalid"
                    )));
                }
                left.validate(d)?;
                right.validate(d)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeWire<FuzzyNode>", into = "TreeWire<FuzzyNode>")]
pub struct FuzzyRegressionTree {
    input_dim: usize,
    feature_ranges: Vec<(f64, f64)>,
    root: FuzzyNode,
}

impl From<FuzzyRegressionTree> for TreeWire<FuzzyNode> {
    fn from(t: FuzzyRegressionTree) -> Self {
        Self {
            input_dim: t.input_dim,
            feature_ranges: t.feature_ranges,
            root: t.root,
        }
    }
}

impl TryFrom<TreeWire<FuzzyNode>> for FuzzyRegressionTree {
    type Error = Error;

    fn try_from(w: TreeWire<FuzzyNode>) -> Result<Self> {
        Self::new(w.input_dim, w.feature_ranges, w.root)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SteepnessPolicy {
    /// `alpha = scale / gap`, where `gap` is the distance from a threshold to
    /// the nearest other threshold on the same feature in the tree, or a
    /// tenth of the feature's training range when there is none.
    Gap { scale: f64 },
    /// The same steepness at every node.
    Fixed { alpha: f64 },
}

impl Default for SteepnessPolicy {
    fn default() -> Self {
        Self::Gap { scale: 8.0 }
    }
}

impl FuzzyRegressionTree {
    pub fn new(input_dim: usize, feature_ranges: Vec<(f64, f64)>, root: FuzzyNode) -> Result<Self> {
        if input_dim == 0 || feature_ranges.len() != input_dim {
            return Err(Error::InvalidModel(
                "feature ranges must match the input dimension".into(),
            ));
        }
        root.validate(input_dim)?;
        Ok(Self {
            input_dim,
            feature_ranges,
            root,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn root(&self) -> &FuzzyNode {
        &self.root
    }

    pub fn feature_ranges(&self) -> &[(f64, f64)] {
        &self.feature_ranges
    }

    /// `(path grade, leaf)` for every leaf, depth-first.
    pub fn leaf_grades<'a>(&'a self, x: &[f64]) -> Vec<(f64, &'a Consequent)> {
        fn walk<'a>(n: &'a FuzzyNode, x: &[f64], g: f64, out: &mut Vec<(f64, &'a Consequent)>) {
            match n {
                FuzzyNode::Leaf { leaf } => out.push((g, leaf)),
                FuzzyNode::Internal {
                    feature,
                    threshold,
                    alpha,
                    left,
                    right,
                } => {
                    let v = x[*feature];
                    let gl =
                        MembershipFunction::sigmoid_down(*alpha, *threshold).grade_unchecked(v);
                    let gr = MembershipFunction::sigmoid_up(*alpha, *threshold).grade_unchecked(v);
                    walk(left, x, g * gl, out);
                    walk(right, x, g * gr, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, x, 1.0, &mut out);
        out
    }

    pub fn path_grade_sum(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.input_dim, x.len())?;
        Ok(self.leaf_grades(x).iter().map(|(g, _)| g).sum())
    }

    /// Path-grade weighted average of the leaf outputs.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.input_dim, x.len())?;
        Ok(self.predict_unchecked(x))
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let lg = self.leaf_grades(x);
        let total: f64 = lg.iter().map(|(g, _)| g).sum();
        lg.iter().map(|(g, c)| g * c.eval(x)).sum::<f64>() / total
    }

    pub fn batch_predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        check_dim(self.input_dim, data.dim())?;
        Ok(data.rows().map(|x| self.predict_unchecked(x)).collect())
    }
}

pub fn fuzzify_tree(tree: &RegressionTree, policy: SteepnessPolicy) -> Result<FuzzyRegressionTree> {
    match policy {
        SteepnessPolicy::Gap { scale: a } | SteepnessPolicy::Fixed { alpha: a }
            if !(a > 0.0) || !a.is_finite() =>
        {
            return Err(Error::InvalidArgument(format!(
                "steepness parameter must be > 0, got {a}"
            )));
        }
        _ => {}
    }
    let mut thresholds: Vec<Vec<f64>> = vec![Vec::new(); tree.input_dim];
    fn collect(n: &Node, out: &mut [Vec<f64>]) {
        if let Node::Internal {
            feature,
            threshold,
            left,
            right,
        } = n
        {
            out[*feature].push(*threshold);
            collect(left, out);
            collect(right, out);
        }
    }
    collect(&tree.root, &mut thresholds);

    let alpha_for = |feature: usize, t: f64| -> f64 {
        match policy {
            SteepnessPolicy::Fixed { alpha } => alpha,
            SteepnessPolicy::Gap { scale } => {
                let gap = thresholds[feature]
                    .iter()
                    .filter(|&&o| o != t)
                    .map(|o| (o - t).abs())
                    .fold(f64::INFINITY, f64::min);
                let gap = if gap.is_finite() {
                    gap
                } else {
                    let (lo, hi) = tree.feature_ranges[feature];
                    if hi > lo {
                        (hi - lo) / 10.0
                    } else {
                        1.0
                    }
                };
                scale / gap
            }
        }
    };
    fn convert(n: &Node, alpha_for: &dyn Fn(usize, f64) -> f64) -> FuzzyNode {
        match n {
            Node::Leaf { leaf } => FuzzyNode::Leaf { leaf: leaf.clone() },
            Node::Internal {
                feature,
                threshold,
                left,
                right,
            } => FuzzyNode::Internal {
                feature: *feature,
                threshold: *threshold,
                alpha: alpha_for(*feature, *threshold),
                left: Box::new(convert(left, alpha_for)),
                right: Box::new(convert(right, alpha_for)),
            },
        }
    }
    let root = convert(&tree.root, &alpha_for);
    FuzzyRegressionTree::new(tree.input_dim, tree.feature_ranges.clone(), root)
}

/// One rule per leaf with the path's sigmoids as clauses. A path that tests a
/// feature more than once yields a path antecedent whose clauses multiply.
pub fn fuzzy_tree_to_tsk(tree: &FuzzyRegressionTree, upgrade_affine: bool) -> Result<TskModel> {
    fn walk(n: &FuzzyNode, path: &mut Vec<Clause>, out: &mut Vec<(Vec<Clause>, Consequent)>) {
        match n {
            FuzzyNode::Leaf { leaf } => out.push((path.clone(), leaf.clone())),
            FuzzyNode::Internal {
                feature,
                threshold,
                alpha,
                left,
                right,
            } => {
                path.push(Clause::new(
                    *feature,
                    MembershipFunction::sigmoid_down(*alpha, *threshold),
                ));
                walk(left, path, out);
                path.pop();
                path.push(Clause::new(
                    *feature,
                    MembershipFunction::sigmoid_up(*alpha, *threshold),
                ));
                walk(right, path, out);
                path.pop();
            }
        }
    }
    let mut leaves = Vec::new();
    walk(&tree.root, &mut Vec::new(), &mut leaves);
    let d = tree.input_dim;
    let rules = leaves
        .into_iter()
        .map(|(clauses, leaf)| {
            let antecedent =
                Antecedent::new(clauses.clone()).unwrap_or_else(|_| Antecedent::path(clauses));
            let consequent = if upgrade_affine {
                leaf.to_affine(d)
            } else {
                leaf
            };
            Rule::new(antecedent, consequent)
        })
        .collect();
    TskModel::new(d, rules, Aggregation::WeightedAverage)
}

/// Gaussian-weighted local affine model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPartition {
    pub means: Vec<f64>,
    pub widths: Vec<f64>,
    pub model: Consequent,
}

impl SupportPartition {
    /// `exp(-sum_i (x_i - m_i)^2 / sigma_i^2)`
    pub fn weight(&self, x: &[f64]) -> f64 {
        let e: f64 = x
            .iter()
            .zip(&self.means)
            .zip(&self.widths)
            .map(|((xi, m), s)| {
                let d = xi - m;
                -(d * d) / (s * s)
            })
            .sum();
        e.exp()
    }
}

/// Fits one affine model per tree leaf on the examples that reach it, with
/// Gaussian weights from the in-partition feature means and sample standard
/// deviations.
pub fn fit_support(data: &Dataset, tree: &RegressionTree) -> Result<Vec<SupportPartition>> {
    check_dim(tree.input_dim, data.dim())?;
    let d = data.dim();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); tree.num_leaves()];
    for (n, x) in data.rows().enumerate() {
        members[tree.leaf_index(x)].push(n);
    }
    let small: Vec<usize> = members
        .iter()
        .enumerate()
        .filter(|(_, m)| m.len() < d + 2)
        .map(|(k, _)| k)
        .collect();
    if !small.is_empty() {
        return Err(Error::DegenerateRules {
            rules: small,
            reason: format!("each partition needs at least {} examples", d + 2),
        });
    }
    let mut out = Vec::with_capacity(members.len());
    for (k, idx) in members.iter().enumerate() {
        let part = data.subset(idx);
        let n = part.len() as f64;
        let mut means = vec![0.0; d];
        let mut widths = vec![0.0; d];
        for i in 0..d {
            means[i] = part.rows().map(|x| x[i]).sum::<f64>() / n;
            let var = part.rows().map(|x| (x[i] - means[i]).powi(2)).sum::<f64>() / (n - 1.0);
            widths[i] = clamp_width(var.sqrt());
        }
        let a = design_with_intercept(part.rows(), d);
        let b = DVector::from_column_slice(part.targets());
        let c = weighted_least_squares(&a, &b, &vec![1.0; part.len()]).map_err(|_| {
            Error::DegenerateRules {
                rules: vec![k],
                reason: "partition inputs are rank deficient".into(),
            }
        })?;
        out.push(SupportPartition {
            means,
            widths,
            model: Consequent::affine(c.as_slice()[..d].to_vec(), c[d]),
        });
    }
    Ok(out)
}

/// Weighted average of the partition models.
pub fn support_predict(partitions: &[SupportPartition], x: &[f64]) -> Result<f64> {
    let first = partitions
        .first()
        .ok_or_else(|| Error::InvalidModel("no partitions".into()))?;
    check_dim(first.means.len(), x.len())?;
    let w = normalize(partitions.iter().map(|p| p.weight(x)).collect());
    Ok(w.iter()
        .zip(partitions)
        .map(|(w, p)| w * p.model.eval(x))
        .sum())
}
