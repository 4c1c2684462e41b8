//! Regression tree on (moneyness, maturity) with a leaf cap and
//! cost-complexity pruning.
//!
//! Splits are chosen greedily, best-first: among all current leaves the split
//! with the largest reduction in residual sum of squares is taken until the
//! leaf cap is reached or no split reduces the SSE. Candidate thresholds are
//! midpoints between consecutive distinct predictor values. Observations with
//! a predictor value `<= split_point` go left.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::surface_data::PanelSeries;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("need at least {needed} observations, have {available}")]
    TooFewObservations { needed: usize, available: usize },
    #[error("invalid tree parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitVar {
    Moneyness,
    Maturity,
}

/// One training observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreePoint<T> {
    pub moneyness: T,
    pub maturity: T,
    pub iv: T,
}

impl<T: Scalar> TreePoint<T> {
    #[inline]
    fn get(&self, var: SplitVar) -> T {
        match var {
            SplitVar::Moneyness => self.moneyness,
            SplitVar::Maturity => self.maturity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct Split<T> {
    pub split_var: SplitVar,
    pub split_point: T,
    pub left: Box<TreeNode<T>>,
    pub right: Box<TreeNode<T>>,
}

/// A fitted (sub)tree. Every node records the mean response routed to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct TreeNode<T> {
    pub prediction: T,
    pub n_obs: usize,
    pub node_sse: T,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split<T>>,
}

impl<T: Scalar> TreeNode<T> {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    pub fn leaf_count(&self) -> usize {
        match &self.split {
            None => 1,
            Some(s) => s.left.leaf_count() + s.right.leaf_count(),
        }
    }

    /// Total SSE over the leaves.
    pub fn sse(&self) -> T {
        match &self.split {
            None => self.node_sse,
            Some(s) => s.left.sse() + s.right.sse(),
        }
    }

    pub fn predict(&self, moneyness: T, maturity: T) -> T {
        let mut node = self;
        while let Some(s) = &node.split {
            let v = match s.split_var {
                SplitVar::Moneyness => moneyness,
                SplitVar::Maturity => maturity,
            };
            node = if v <= s.split_point { &s.left } else { &s.right };
        }
        node.prediction
    }

    fn stump(&self) -> TreeNode<T> {
        TreeNode {
            prediction: self.prediction,
            n_obs: self.n_obs,
            node_sse: self.node_sse,
            split: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

pub fn predict_tree<T: Scalar>(tree: &TreeNode<T>, moneyness: T, maturity: T) -> T {
    tree.predict(moneyness, maturity)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_leaves: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_leaves: 10,
            min_leaf: 5,
        }
    }
}

/// Best split of `idx` (already any order) as `(var, point, gain, left_count)`.
fn best_split<T: Scalar>(
    points: &[TreePoint<T>],
    idx: &[usize],
    min_leaf: usize,
    node_mean: T,
) -> Option<(SplitVar, T, T)> {
    let n = idx.len();
    if n < 2 * min_leaf {
        return None;
    }
    let total_ss: T = idx.iter().map(|&i| points[i].iv * points[i].iv).sum();
    let threshold = T::epsilon() * T::lit(64.0) * total_ss;
    let centered: Vec<T> = idx.iter().map(|&i| points[i].iv - node_mean).collect();
    let (sum_all, sq_all) = centered
        .iter()
        .fold((T::zero(), T::zero()), |(s, q), &e| (s + e, q + e * e));
    let parent_sse = sq_all - sum_all * sum_all / T::lit(n as f64);

    let mut best: Option<(SplitVar, T, T)> = None;
    let mut order: Vec<usize> = (0..n).collect();
    for var in [SplitVar::Moneyness, SplitVar::Maturity] {
        order.sort_by(|&a, &b| {
            points[idx[a]]
                .get(var)
                .partial_cmp(&points[idx[b]].get(var))
                .expect("finite predictors")
                .then(a.cmp(&b))
        });
        let (mut s, mut q) = (T::zero(), T::zero());
        for (i, &o) in order.iter().enumerate().take(n - min_leaf) {
            s = s + centered[o];
            q = q + centered[o] * centered[o];
            let left_n = i + 1;
            if left_n < min_leaf {
                continue;
            }
            let lo = points[idx[o]].get(var);
            let hi = points[idx[order[i + 1]]].get(var);
            if !(hi > lo) {
                continue;
            }
            let ln = T::lit(left_n as f64);
            let rn = T::lit((n - left_n) as f64);
            let left_sse = q - s * s / ln;
            let rs = sum_all - s;
            let right_sse = (sq_all - q) - rs * rs / rn;
            let gain = parent_sse - left_sse - right_sse;
            if gain > threshold && best.map_or(true, |b| gain > b.2) {
                let mut point = (lo + hi) / T::lit(2.0);
                if point >= hi {
                    point = lo;
                }
                best = Some((var, point, gain));
            }
        }
    }
    best
}

struct GrowNode<T> {
    idx: Vec<usize>,
    mean: T,
    sse: T,
    candidate: Option<(SplitVar, T, T)>,
    children: Option<(SplitVar, T, usize, usize)>,
}

fn node_stats<T: Scalar>(points: &[TreePoint<T>], idx: &[usize]) -> (T, T) {
    let n = T::lit(idx.len() as f64);
    let mean = idx.iter().map(|&i| points[i].iv).sum::<T>() / n;
    let sse = idx
        .iter()
        .map(|&i| (points[i].iv - mean) * (points[i].iv - mean))
        .sum();
    (mean, sse)
}

/// Grows a best-first regression tree.
pub fn grow_tree<T: Scalar>(
    points: &[TreePoint<T>],
    params: &TreeParams,
) -> Result<TreeNode<T>, TreeError> {
    if params.max_leaves < 2 {
        return Err(TreeError::InvalidParams("max_leaves must be >= 2".into()));
    }
    if params.min_leaf == 0 {
        return Err(TreeError::InvalidParams("min_leaf must be >= 1".into()));
    }
    if points.len() < 2 * params.min_leaf {
        return Err(TreeError::TooFewObservations {
            needed: 2 * params.min_leaf,
            available: points.len(),
        });
    }
    let make = |idx: Vec<usize>| {
        let (mean, sse) = node_stats(points, &idx);
        let candidate = best_split(points, &idx, params.min_leaf, mean);
        GrowNode {
            idx,
            mean,
            sse,
            candidate,
            children: None,
        }
    };
    let mut arena = vec![make((0..points.len()).collect())];
    let mut leaves = vec![0usize];
    while leaves.len() < params.max_leaves {
        let pick = leaves
            .iter()
            .enumerate()
            .filter_map(|(pos, &id)| arena[id].candidate.map(|c| (pos, id, c.2)))
            .fold(None::<(usize, usize, T)>, |acc, cur| match acc {
                Some(a) if a.2 >= cur.2 => Some(a),
                _ => Some(cur),
            });
        let Some((pos, id, _)) = pick else { break };
        let (var, point, _) = arena[id].candidate.expect("picked leaf has a candidate");
        let (l, r): (Vec<usize>, Vec<usize>) = arena[id]
            .idx
            .iter()
            .partition(|&&i| points[i].get(var) <= point);
        let (li, ri) = (arena.len(), arena.len() + 1);
        arena.push(make(l));
        arena.push(make(r));
        arena[id].children = Some((var, point, li, ri));
        leaves.swap_remove(pos);
        leaves.push(li);
        leaves.push(ri);
        leaves.sort_unstable();
    }
    fn build<T: Scalar>(arena: &[GrowNode<T>], id: usize) -> TreeNode<T> {
        let g = &arena[id];
        TreeNode {
            prediction: g.mean,
            n_obs: g.idx.len(),
            node_sse: g.sse,
            split: g.children.map(|(var, point, l, r)| Split {
                split_var: var,
                split_point: point,
                left: Box::new(build(arena, l)),
                right: Box::new(build(arena, r)),
            }),
        }
    }
    Ok(build(&arena, 0))
}

/// Per-α cross-validation result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvError<T> {
    /// Representative complexity used for the fold trees.
    pub alpha: T,
    pub sse: T,
    pub std_error: T,
}

/// Weakest-link pruning sequence. `subtrees[k]` is optimal for
/// `alphas[k] <= α < alphas[k+1]`; `alphas[0] = 0` is the full tree and the
/// last entry is the root stump.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneSchedule<T> {
    pub alphas: Vec<T>,
    pub subtrees: Vec<TreeNode<T>>,
    pub cv_errors: Vec<CvError<T>>,
}

impl<T: Scalar> PruneSchedule<T> {
    pub fn index_at(&self, alpha: T) -> usize {
        self.alphas
            .iter()
            .rposition(|&a| a <= alpha)
            .unwrap_or(0)
    }

    /// The subtree minimising `SSE + α·leaves`.
    pub fn subtree_at(&self, alpha: T) -> &TreeNode<T> {
        &self.subtrees[self.index_at(alpha)]
    }

    /// Geometric midpoints of the α intervals; the open-ended last interval
    /// uses twice its lower end.
    pub fn representative_alphas(&self) -> Vec<T> {
        let k = self.alphas.len();
        (0..k)
            .map(|i| {
                if i + 1 < k {
                    (self.alphas[i] * self.alphas[i + 1]).sqrt()
                } else {
                    self.alphas[i] * T::lit(2.0)
                }
            })
            .collect()
    }
}

/// Smallest per-leaf SSE increase over the internal nodes of `node`.
fn weakest_link<T: Scalar>(node: &TreeNode<T>) -> Option<T> {
    let s = node.split.as_ref()?;
    let own = (node.node_sse - node.sse()) / T::lit((node.leaf_count() - 1) as f64);
    let children = [weakest_link(&s.left), weakest_link(&s.right)];
    Some(children.into_iter().flatten().fold(own, T::min))
}

fn collapse_weakest<T: Scalar>(node: &TreeNode<T>, cutoff: T) -> TreeNode<T> {
    let Some(s) = &node.split else {
        return node.clone();
    };
    let g = (node.node_sse - node.sse()) / T::lit((node.leaf_count() - 1) as f64);
    if g <= cutoff {
        return node.stump();
    }
    TreeNode {
        split: Some(Split {
            split_var: s.split_var,
            split_point: s.split_point,
            left: Box::new(collapse_weakest(&s.left, cutoff)),
            right: Box::new(collapse_weakest(&s.right, cutoff)),
        }),
        ..node.stump()
    }
}

/// Cost-complexity pruning path of `tree`.
pub fn prune_path<T: Scalar>(tree: &TreeNode<T>) -> PruneSchedule<T> {
    let mut alphas = vec![T::zero()];
    let mut subtrees = vec![tree.clone()];
    let tie = T::lit(1e-10);
    loop {
        let current = subtrees.last().expect("non-empty");
        let Some(g) = weakest_link(current) else { break };
        let next = collapse_weakest(current, g + g.abs() * tie);
        let last = alphas.len() - 1;
        if last > 0 && g <= alphas[last] {
            subtrees[last] = next;
        } else {
            alphas.push(g.max(T::zero()));
            subtrees.push(next);
        }
    }
    PruneSchedule {
        alphas,
        subtrees,
        cv_errors: Vec::new(),
    }
}

/// Grows a tree and prunes it at a fixed complexity.
pub fn fit_pruned<T: Scalar>(
    points: &[TreePoint<T>],
    params: &TreeParams,
    alpha: T,
) -> Result<TreeNode<T>, TreeError> {
    let full = grow_tree(points, params)?;
    Ok(prune_path(&full).subtree_at(alpha).clone())
}

pub fn series_points<T: Scalar>(series: &PanelSeries) -> Vec<TreePoint<T>> {
    series
        .panels
        .iter()
        .flat_map(|p| &p.quotes)
        .map(|q| TreePoint {
            moneyness: T::lit(q.moneyness),
            maturity: T::lit(q.maturity),
            iv: T::lit(q.iv),
        })
        .collect()
}

/// Outcome of complexity selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexitySelection<T> {
    pub alpha_star: T,
    /// Pruning path of the tree grown on all pooled observations, with the
    /// cross-validated error of each entry.
    pub schedule: PruneSchedule<T>,
    pub selected_index: usize,
}

/// Chooses the complexity parameter by k-fold cross-validation over the
/// pooled in-sample quotes.
pub fn select_complexity<T: Scalar>(
    in_sample: &PanelSeries,
    folds: usize,
    seed: u64,
    params: &TreeParams,
) -> Result<ComplexitySelection<T>, TreeError> {
    select_complexity_points(&series_points(in_sample), folds, seed, params)
}

pub fn select_complexity_points<T: Scalar>(
    points: &[TreePoint<T>],
    folds: usize,
    seed: u64,
    params: &TreeParams,
) -> Result<ComplexitySelection<T>, TreeError> {
    if folds < 2 {
        return Err(TreeError::InvalidParams("folds must be >= 2".into()));
    }
    let needed = (2 * params.min_leaf * folds).div_ceil(folds - 1).max(folds);
    if points.len() < needed {
        return Err(TreeError::TooFewObservations {
            needed,
            available: points.len(),
        });
    }
    let full = grow_tree(points, params)?;
    let mut schedule = prune_path(&full);
    let reps = schedule.representative_alphas();

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0usize; points.len()];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    // squared_errors[k][i]: held-out squared error of point i at reps[k]
    let mut squared_errors = vec![vec![T::zero(); points.len()]; reps.len()];
    for f in 0..folds {
        let train: Vec<TreePoint<T>> = (0..points.len())
            .filter(|&i| fold_of[i] != f)
            .map(|i| points[i])
            .collect();
        let fold_schedule = prune_path(&grow_tree(&train, params)?);
        for (k, &a) in reps.iter().enumerate() {
            let sub = fold_schedule.subtree_at(a);
            for i in (0..points.len()).filter(|&i| fold_of[i] == f) {
                let e = points[i].iv - sub.predict(points[i].moneyness, points[i].maturity);
                squared_errors[k][i] = e * e;
            }
        }
    }
    let n = T::lit(points.len() as f64);
    schedule.cv_errors = reps
        .iter()
        .zip(&squared_errors)
        .map(|(&alpha, errs)| {
            let sse: T = errs.iter().copied().sum();
            let mean = sse / n;
            let var = errs.iter().map(|&e| (e - mean) * (e - mean)).sum::<T>() / (n - T::one());
            CvError {
                alpha,
                sse,
                std_error: (var * n).sqrt(),
            }
        })
        .collect();
    // lowest CV error; exact ties go to the simpler tree
    let mut selected_index = reps.len() - 1;
    for k in (0..reps.len()).rev() {
        if schedule.cv_errors[k].sse < schedule.cv_errors[selected_index].sse {
            selected_index = k;
        }
    }
    Ok(ComplexitySelection {
        alpha_star: reps[selected_index],
        schedule,
        selected_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn pt(m: f64, t: f64, iv: f64) -> TreePoint<f64> {
        TreePoint {
            moneyness: m,
            maturity: t,
            iv,
        }
    }

    fn random_points(seed: u64, n: usize) -> Vec<TreePoint<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let m = rng.gen_range(90.0..110.0);
                let t = rng.gen_range(0.1..2.0);
                let signal = if t < 0.7 { 0.35 } else { 0.25 } + if m > 103.0 { 0.05 } else { 0.0 };
                pt(m, t, signal + rng.gen_range(-0.03..0.03))
            })
            .collect()
    }

    fn step_points() -> Vec<TreePoint<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (0..100)
            .map(|_| {
                let t = rng.gen_range(0.1..2.0);
                pt(rng.gen_range(90.0..110.0), t, if t < 1.0 { 0.2 } else { 0.4 })
            })
            .collect()
    }

    #[test]
    fn separable_step_single_split() {
        let tree = grow_tree(&step_points(), &TreeParams::default()).unwrap();
        assert_eq!(tree.leaf_count(), 2);
        let s = tree.split.as_ref().unwrap();
        assert_eq!(s.split_var, SplitVar::Maturity);
        assert!((s.left.prediction - 0.2).abs() < 1e-12);
        assert!((s.right.prediction - 0.4).abs() < 1e-12);
    }

    #[test]
    fn constant_response_single_leaf() {
        let pts: Vec<_> = random_points(2, 50).into_iter().map(|p| pt(p.moneyness, p.maturity, 0.3)).collect();
        let tree = grow_tree(&pts, &TreeParams::default()).unwrap();
        assert!(tree.is_leaf());
        assert_eq!(prune_path(&tree).alphas.len(), 1);
    }

    #[test]
    fn too_few_observations() {
        let pts = random_points(3, 9);
        assert_eq!(
            grow_tree(&pts, &TreeParams::default()).unwrap_err(),
            TreeError::TooFewObservations { needed: 10, available: 9 }
        );
    }

    /// Exhaustive scan over all midpoints with direct two-pass SSE.
    fn oracle_first_split(pts: &[TreePoint<f64>], min_leaf: usize) -> (SplitVar, f64, f64) {
        let sse = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        };
        let all: Vec<f64> = pts.iter().map(|p| p.iv).collect();
        let parent = sse(&all);
        let mut best = (SplitVar::Moneyness, 0.0, f64::NEG_INFINITY);
        for var in [SplitVar::Moneyness, SplitVar::Maturity] {
            let mut vals: Vec<f64> = pts.iter().map(|p| p.get(var)).collect();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let c = (w[0] + w[1]) / 2.0;
                let (l, r): (Vec<f64>, Vec<f64>) = {
                    let l = pts.iter().filter(|p| p.get(var) <= c).map(|p| p.iv).collect::<Vec<_>>();
                    let r = pts.iter().filter(|p| p.get(var) > c).map(|p| p.iv).collect::<Vec<_>>();
                    (l, r)
                };
                if l.len() < min_leaf || r.len() < min_leaf {
                    continue;
                }
                let gain = parent - sse(&l) - sse(&r);
                if gain > best.2 {
                    best = (var, c, gain);
                }
            }
        }
        best
    }

    #[test]
    fn first_split_matches_exhaustive_scan() {
        for seed in 0..20 {
            let pts = random_points(100 + seed, 200);
            let tree = grow_tree(&pts, &TreeParams { max_leaves: 4, min_leaf: 5 }).unwrap();
            let s = tree.split.as_ref().unwrap();
            let (var, point, _) = oracle_first_split(&pts, 5);
            assert_eq!(s.split_var, var);
            assert!((s.split_point - point).abs() < 1e-12);
        }
    }

    #[test]
    fn leaf_cap_and_sse_partition() {
        let pts = random_points(4, 500);
        let tree = grow_tree(&pts, &TreeParams::default()).unwrap();
        assert!(tree.leaf_count() <= 10);
        // every split strictly reduces SSE
        fn check(n: &TreeNode<f64>) {
            if let Some(s) = &n.split {
                assert!(s.left.node_sse + s.right.node_sse < n.node_sse);
                assert_eq!(s.left.n_obs + s.right.n_obs, n.n_obs);
                check(&s.left);
                check(&s.right);
            }
        }
        check(&tree);
        // leaf SSE sums to training SSE
        let train_sse: f64 = pts
            .iter()
            .map(|p| (p.iv - tree.predict(p.moneyness, p.maturity)).powi(2))
            .sum();
        assert!((train_sse - tree.sse()).abs() < 1e-10);
    }

    #[test]
    fn tie_goes_left() {
        let tree = grow_tree(&step_points(), &TreeParams::default()).unwrap();
        let s = tree.split.as_ref().unwrap();
        assert_eq!(tree.predict(100.0, s.split_point), s.left.prediction);
        assert_eq!(tree.predict(100.0, s.split_point + 1e-9), s.right.prediction);
    }

    #[test]
    fn single_leaf_prediction() {
        let leaf = TreeNode {
            prediction: 0.3,
            n_obs: 1,
            node_sse: 0.0,
            split: None,
        };
        assert_eq!(predict_tree(&leaf, 91.0, 1.5), 0.3);
    }

    #[test]
    fn predictions_are_region_means() {
        let pts = random_points(6, 400);
        let tree = grow_tree(&pts, &TreeParams::default()).unwrap();
        // collect leaf rectangles independently
        fn rects(n: &TreeNode<f64>, b: [f64; 4], out: &mut Vec<([f64; 4], f64)>) {
            match &n.split {
                None => out.push((b, n.prediction)),
                Some(s) => {
                    let (mut l, mut r) = (b, b);
                    match s.split_var {
                        SplitVar::Moneyness => {
                            l[1] = l[1].min(s.split_point);
                            r[0] = r[0].max(s.split_point);
                        }
                        SplitVar::Maturity => {
                            l[3] = l[3].min(s.split_point);
                            r[2] = r[2].max(s.split_point);
                        }
                    }
                    rects(&s.left, l, out);
                    rects(&s.right, r, out);
                }
            }
        }
        let mut regions = Vec::new();
        rects(&tree, [f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY], &mut regions);
        let inside = |b: &[f64; 4], m: f64, t: f64| m > b[0] && m <= b[1] && t > b[2] && t <= b[3];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let (m, t) = (rng.gen_range(88.0..112.0), rng.gen_range(0.0..2.2));
            let (b, _) = regions.iter().find(|(b, _)| inside(b, m, t)).unwrap();
            let members: Vec<f64> = pts.iter().filter(|p| inside(b, p.moneyness, p.maturity)).map(|p| p.iv).collect();
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            assert!((tree.predict(m, t) - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_predictor_transform_invariance() {
        let pts = random_points(8, 300);
        let warped: Vec<_> = pts.iter().map(|p| pt(p.moneyness.powi(3), p.maturity.ln(), p.iv)).collect();
        let a = grow_tree(&pts, &TreeParams::default()).unwrap();
        let b = grow_tree(&warped, &TreeParams::default()).unwrap();
        assert_eq!(a.leaf_count(), b.leaf_count());
        for (p, w) in pts.iter().zip(&warped) {
            assert_eq!(a.predict(p.moneyness, p.maturity), b.predict(w.moneyness, w.maturity));
        }
    }

    #[test]
    fn two_leaf_schedule() {
        let tree = grow_tree(&step_points(), &TreeParams::default()).unwrap();
        let sched = prune_path(&tree);
        assert_eq!(sched.alphas.len(), 2);
        assert!(sched.alphas[1] > 0.0);
        assert!(sched.subtrees[1].is_leaf());
    }

    /// All prunings of `node` as (sse, leaves).
    fn prunings(node: &TreeNode<f64>) -> Vec<(f64, usize)> {
        let mut out = vec![(node.node_sse, 1)];
        if let Some(s) = &node.split {
            for l in prunings(&s.left) {
                for r in prunings(&s.right) {
                    out.push((l.0 + r.0, l.1 + r.1));
                }
            }
        }
        out
    }

    #[test]
    fn prune_path_matches_brute_force() {
        for seed in 0..25 {
            let pts = random_points(200 + seed, 300);
            let tree = grow_tree(&pts, &TreeParams::default()).unwrap();
            let sched = prune_path(&tree);
            assert!(sched.alphas.windows(2).all(|w| w[1] > w[0]));
            assert!(sched.subtrees.last().unwrap().is_leaf());
            assert!(sched.subtrees.windows(2).all(|w| w[1].leaf_count() < w[0].leaf_count()));
            let all = prunings(&tree);
            for k in 0..sched.alphas.len() {
                let mid = if k + 1 < sched.alphas.len() {
                    0.5 * (sched.alphas[k] + sched.alphas[k + 1])
                } else {
                    2.0 * sched.alphas[k] + 1.0
                };
                for alpha in [sched.alphas[k], mid] {
                    let best = all
                        .iter()
                        .map(|&(s, l)| s + alpha * l as f64)
                        .fold(f64::INFINITY, f64::min);
                    let sub = &sched.subtrees[k];
                    let cost = sub.sse() + alpha * sub.leaf_count() as f64;
                    assert!((cost - best).abs() <= 1e-10 * best.max(1e-12), "seed {seed} k {k}");
                }
            }
        }
    }

    #[test]
    fn cv_selects_two_leaf_tree_on_step_data() {
        let sel = select_complexity_points(&step_points(), 10, 3, &TreeParams::default()).unwrap();
        assert_eq!(sel.schedule.subtree_at(sel.alpha_star).leaf_count(), 2);
        let again = select_complexity_points(&step_points(), 10, 3, &TreeParams::default()).unwrap();
        assert_eq!(sel, again);
    }

    #[test]
    fn cv_prefers_stump_on_noise() {
        let mut hits = 0;
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<_> = (0..300)
                .map(|_| pt(rng.gen_range(90.0..110.0), rng.gen_range(0.1..2.0), rng.gen_range(0.2..0.4)))
                .collect();
            let sel = select_complexity_points(&pts, 10, seed, &TreeParams::default()).unwrap();
            let cv = &sel.schedule.cv_errors;
            let stump = cv.last().unwrap();
            let best = &cv[sel.selected_index];
            if stump.sse <= best.sse + best.std_error {
                hits += 1;
            }
        }
        assert!(hits >= 19, "stump within one SE in {hits}/20 runs");
    }

    #[test]
    fn pruning_monotone_in_alpha() {
        let tree = grow_tree(&random_points(9, 400), &TreeParams::default()).unwrap();
        let sched = prune_path(&tree);
        let mut prev = usize::MAX;
        for i in 0..200 {
            let a = i as f64 * 0.002;
            let leaves = sched.subtree_at(a).leaf_count();
            assert!(leaves <= prev);
            prev = leaves;
        }
    }

    #[test]
    fn json_round_trip() {
        let tree = grow_tree(&random_points(10, 200), &TreeParams::default()).unwrap();
        let json = tree.to_json();
        assert!(json.contains("\"split_var\"") && json.contains("\"split_point\""));
        assert_eq!(TreeNode::<f64>::from_json(&json).unwrap(), tree);
    }

    #[test]
    fn grows_in_f32() {
        let pts: Vec<TreePoint<f32>> = step_points()
            .iter()
            .map(|p| TreePoint { moneyness: p.moneyness as f32, maturity: p.maturity as f32, iv: p.iv as f32 })
            .collect();
        assert_eq!(grow_tree(&pts, &TreeParams::default()).unwrap().leaf_count(), 2);
    }
}
