//! Gradient-boosted regression trees on pre-binned features.
//!
//! Squared-error loss, so each tree is grown on the current residuals and a
//! leaf predicts the learning rate times the mean residual it holds. Splits
//! are searched over per-feature quantile bins; the sibling histogram of a
//! split is obtained by subtraction from the parent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Column, TrainRows};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{tags, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Fraction of training rows drawn without replacement for each tree.
    pub subsample: f64,
    /// At most 256.
    pub max_bins: usize,
    pub min_samples_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            n_trees: 300,
            max_depth: 3,
            learning_rate: 0.1,
            subsample: 0.8,
            max_bins: 256,
            min_samples_leaf: 1,
        }
    }
}

impl TreeParams {
    pub(crate) fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_trees == 0 {
            return bad("n_trees must be >= 1".into());
        }
        if self.max_depth == 0 {
            return bad("max_depth must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad(format!("subsample must lie in (0, 1], got {}", self.subsample));
        }
        if !(2..=256).contains(&self.max_bins) {
            return bad(format!("max_bins must lie in [2, 256], got {}", self.max_bins));
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be >= 1".into());
        }
        Ok(())
    }
}

/// Every column quantized to at most `max_bins` ordered bins.
///
/// `edges[j]` is strictly increasing; a value `x` falls in bin
/// `#{e in edges[j] : e < x}`, so `bin <= s` exactly when `x <= edges[j][s]`.
pub(crate) struct BinnedMatrix {
    bins: Vec<Vec<u8>>,
    edges: Vec<Vec<f64>>,
}

impl BinnedMatrix {
    pub(crate) fn new(data: &Dataset, max_bins: usize) -> Self {
        let (bins, edges) = data
            .columns()
            .iter()
            .map(|col| {
                let edges = quantile_edges(col, max_bins);
                let bins = col.iter().map(|&x| edges.partition_point(|&e| e < x) as u8).collect();
                (bins, edges)
            })
            .unzip();
        Self { bins, edges }
    }

    fn n_bins(&self, j: usize) -> usize {
        self.edges[j].len() + 1
    }
}

fn quantile_edges(col: &[f64], max_bins: usize) -> Vec<f64> {
    let mut sorted = col.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut uniq: Vec<(f64, usize)> = Vec::new();
    for &v in &sorted {
        match uniq.last_mut() {
            Some((u, c)) if *u == v => *c += 1,
            _ => uniq.push((v, 1)),
        }
    }
    let mid = |a: usize| 0.5 * (uniq[a].0 + uniq[a + 1].0);
    if uniq.len() <= max_bins {
        return (0..uniq.len() - 1).map(mid).collect();
    }
    let n = sorted.len() as f64;
    let mut edges = Vec::with_capacity(max_bins - 1);
    let mut cum = 0usize;
    let mut next = 1usize;
    for (a, &(_, count)) in uniq[..uniq.len() - 1].iter().enumerate() {
        cum += count;
        if cum as f64 >= next as f64 * n / max_bins as f64 {
            let e = mid(a);
            if edges.last().is_none_or(|&last| e > last) {
                edges.push(e);
            }
            while next < max_bins && cum as f64 >= next as f64 * n / max_bins as f64 {
                next += 1;
            }
            if edges.len() == max_bins - 1 {
                break;
            }
        }
    }
    edges
}

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    feature: u32,
    bin: u8,
    threshold: f64,
    left: u32,
    right: u32,
    value: f64,
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, cols: &[Column<'_>], i: usize) -> f64 {
        let mut k = 0usize;
        loop {
            let node = &self.nodes[k];
            if node.left == LEAF {
                return node.value;
            }
            k = if cols[node.feature as usize].get(i) <= node.threshold {
                node.left
            } else {
                node.right
            } as usize;
        }
    }

    /// Traversal on one row's bins.
    fn predict_bins(&self, row: &[u8]) -> f64 {
        let mut k = 0usize;
        loop {
            let node = &self.nodes[k];
            if node.left == LEAF {
                return node.value;
            }
            k = if row[node.feature as usize] <= node.bin {
                node.left
            } else {
                node.right
            } as usize;
        }
    }

    fn predict_binned(&self, bins: &BinnedMatrix, i: usize) -> f64 {
        let mut k = 0usize;
        loop {
            let node = &self.nodes[k];
            if node.left == LEAF {
                return node.value;
            }
            k = if bins.bins[node.feature as usize][i] <= node.bin {
                node.left
            } else {
                node.right
            } as usize;
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Ensemble {
    base: f64,
    trees: Vec<Tree>,
}

impl Ensemble {
    pub(crate) fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub(crate) fn predict_row(&self, cols: &[Column<'_>], i: usize) -> f64 {
        self.trees.iter().fold(self.base, |acc, t| acc + t.predict_row(cols, i))
    }

    pub(crate) fn fit(
        params: &TreeParams,
        bins: &BinnedMatrix,
        y: &[f64],
        rows: &TrainRows<'_>,
        subset: &[usize],
        stream: &RngStream,
    ) -> Self {
        let train: Vec<u32> = rows.to_vec().into_iter().map(|i| i as u32).collect();
        let n_train = train.len();
        let base = rows.mean_of(y);
        let mut pred = vec![base; y.len()];
        let mut resid = vec![0.0; y.len()];
        let m = ((params.subsample * n_train as f64).round() as usize).clamp(1, n_train);

        let mut offsets = Vec::with_capacity(subset.len());
        let mut total = 0;
        for &j in subset {
            offsets.push(total);
            total += bins.n_bins(j);
        }
        let mut pool = train.clone();
        let mut sample: Vec<u32> = Vec::with_capacity(m);
        let mut chosen = vec![false; y.len()];
        let mut trees = Vec::with_capacity(params.n_trees);
        for t in 0..params.n_trees {
            for &i in &train {
                resid[i as usize] = y[i as usize] - pred[i as usize];
            }
            sample.clear();
            if m < n_train {
                let mut g = stream.child(tags::TREE, t as u64).generator();
                for a in 0..m {
                    let b = g.random_range(a..n_train);
                    pool.swap(a, b);
                }
                // ascending order without sorting: flag the drawn rows, then scan
                for &r in &pool[..m] {
                    chosen[r as usize] = true;
                }
                for &r in &train {
                    if std::mem::take(&mut chosen[r as usize]) {
                        sample.push(r);
                    }
                }
            } else {
                sample.extend_from_slice(&train);
            }
            let mut builder = Builder {
                bins,
                subset,
                offsets: &offsets,
                total,
                resid: &resid,
                params,
                nodes: Vec::new(),
                scratch: Vec::with_capacity(m),
            };
            let (g_sum, hist) = builder.root_hist(&sample);
            builder.grow(&mut sample, hist, g_sum, 0);
            let tree = Tree { nodes: builder.nodes };
            for &i in &train {
                pred[i as usize] += tree.predict_binned(bins, i as usize);
            }
            trees.push(tree);
        }
        Ensemble { base, trees }
    }
}

/// Dropout evaluation of a fitted ensemble over every prefix of an ordering.
///
/// Adding a feature to the prefix only changes the trees that split on it,
/// so per-tree predictions are kept and recomputed selectively. Row
/// predictions are always re-summed in tree order, which makes them
/// bit-identical to [`Ensemble::predict_row`] on mean-imputed columns.
pub(crate) struct DropoutWalker {
    ens: Ensemble,
    p: usize,
    /// Row-major bins of the evaluation rows.
    row_bins: Vec<u8>,
    /// Bin of each column's imputation value.
    mean_bins: Vec<u8>,
    trees_using: Vec<Vec<usize>>,
}

impl DropoutWalker {
    pub(crate) fn new(ens: &Ensemble, bins: &BinnedMatrix, means: &[f64], rows: &[usize]) -> Self {
        let p = bins.bins.len();
        let mut row_bins = Vec::with_capacity(rows.len() * p);
        for &r in rows {
            row_bins.extend(bins.bins.iter().map(|c| c[r]));
        }
        let mean_bins = means
            .iter()
            .zip(&bins.edges)
            .map(|(&m, e)| e.partition_point(|&x| x < m) as u8)
            .collect();
        let mut trees_using = vec![Vec::new(); p];
        for (t, tree) in ens.trees.iter().enumerate() {
            let mut used: Vec<usize> = tree
                .nodes
                .iter()
                .filter(|n| n.left != LEAF)
                .map(|n| n.feature as usize)
                .collect();
            used.sort_unstable();
            used.dedup();
            for j in used {
                trees_using[j].push(t);
            }
        }
        Self {
            ens: ens.clone(),
            p,
            row_bins,
            mean_bins,
            trees_using,
        }
    }

    /// Calls `visit(k, predictions)` for the prefixes of length k = 0..=p of `perm`.
    pub(crate) fn walk(&self, perm: &[usize], mut visit: impl FnMut(usize, &[f64]) -> Result<()>) -> Result<()> {
        let p = self.p;
        let n = self.row_bins.len() / p.max(1);
        let mut cur: Vec<u8> = Vec::with_capacity(n * p);
        for _ in 0..n {
            cur.extend_from_slice(&self.mean_bins);
        }
        let trees = &self.ens.trees;
        let imputed: Vec<f64> = trees.iter().map(|t| t.predict_bins(&self.mean_bins)).collect();
        let mut per_tree: Vec<Vec<f64>> = imputed.iter().map(|&v| vec![v; n]).collect();
        let mut pred = vec![0.0; n];
        let mut emit = |per_tree: &[Vec<f64>], k: usize| {
            pred.fill(self.ens.base);
            for col in per_tree {
                for (a, b) in pred.iter_mut().zip(col) {
                    *a += b;
                }
            }
            visit(k, &pred)
        };
        emit(&per_tree, 0)?;
        for (step, &j) in perm.iter().enumerate() {
            for r in 0..n {
                cur[r * p + j] = self.row_bins[r * p + j];
            }
            for &t in &self.trees_using[j] {
                let tree = &trees[t];
                for (r, out) in per_tree[t].iter_mut().enumerate() {
                    *out = tree.predict_bins(&cur[r * p..(r + 1) * p]);
                }
            }
            emit(&per_tree, step + 1)?;
        }
        Ok(())
    }
}

struct Hist {
    sums: Vec<f64>,
    counts: Vec<u32>,
}

struct Builder<'a> {
    bins: &'a BinnedMatrix,
    subset: &'a [usize],
    offsets: &'a [usize],
    total: usize,
    resid: &'a [f64],
    params: &'a TreeParams,
    nodes: Vec<Node>,
    scratch: Vec<u32>,
}

impl Builder<'_> {
    fn root_hist(&self, rows: &[u32]) -> (f64, Hist) {
        let g_sum = rows.iter().map(|&r| self.resid[r as usize]).sum();
        (g_sum, self.hist(rows))
    }

    fn hist(&self, rows: &[u32]) -> Hist {
        let mut sums = vec![0.0; self.total];
        let mut counts = vec![0u32; self.total];
        for (&j, &off) in self.subset.iter().zip(self.offsets) {
            let col = &self.bins.bins[j];
            let s = &mut sums[off..];
            let c = &mut counts[off..];
            for &r in rows {
                let b = col[r as usize] as usize;
                s[b] += self.resid[r as usize];
                c[b] += 1;
            }
        }
        Hist { sums, counts }
    }

    fn leaf(&mut self, g_sum: f64, n: usize) -> u32 {
        self.nodes.push(Node {
            feature: 0,
            bin: 0,
            threshold: 0.0,
            left: LEAF,
            right: LEAF,
            value: self.params.learning_rate * g_sum / n as f64,
        });
        (self.nodes.len() - 1) as u32
    }

    fn best_split(&self, hist: &Hist, g_sum: f64, n: usize) -> Option<(usize, u8, f64)> {
        let min_leaf = self.params.min_samples_leaf;
        let parent = g_sum * g_sum / n as f64;
        let mut best: Option<(usize, u8, f64)> = None;
        let mut best_gain = 0.0;
        for (f, &j) in self.subset.iter().enumerate() {
            let off = self.offsets[f];
            let nb = self.bins.n_bins(j);
            let mut gl = 0.0;
            let mut nl = 0usize;
            for b in 0..nb - 1 {
                gl += hist.sums[off + b];
                nl += hist.counts[off + b] as usize;
                if nl < min_leaf {
                    continue;
                }
                let nr = n - nl;
                if nr < min_leaf {
                    break;
                }
                if hist.counts[off + b] == 0 {
                    continue;
                }
                let gr = g_sum - gl;
                let gain = gl * gl / nl as f64 + gr * gr / nr as f64 - parent;
                if gain > best_gain {
                    best_gain = gain;
                    best = Some((j, b as u8, gain));
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: &mut [u32], hist: Hist, g_sum: f64, depth: usize) -> u32 {
        let n = rows.len();
        if depth >= self.params.max_depth || n < 2 * self.params.min_samples_leaf {
            return self.leaf(g_sum, n);
        }
        let Some((j, bin, _)) = self.best_split(&hist, g_sum, n) else {
            return self.leaf(g_sum, n);
        };
        // stable partition keeps rows ascending for cache-friendly histogram passes
        let col = &self.bins.bins[j];
        self.scratch.clear();
        let mut nl = 0;
        for a in 0..n {
            let r = rows[a];
            if col[r as usize] <= bin {
                rows[nl] = r;
                nl += 1;
            } else {
                self.scratch.push(r);
            }
        }
        rows[nl..].copy_from_slice(&self.scratch);
        let (left_rows, right_rows) = rows.split_at_mut(nl);
        let gl: f64 = left_rows.iter().map(|&r| self.resid[r as usize]).sum();
        let gr = g_sum - gl;

        let id = self.nodes.len();
        self.nodes.push(Node {
            feature: j as u32,
            bin,
            threshold: self.bins.edges[j][bin as usize],
            left: LEAF,
            right: LEAF,
            value: 0.0,
        });
        let children_split = depth + 1 < self.params.max_depth;
        let (lh, rh) = if children_split {
            let mut parent = hist;
            if left_rows.len() <= right_rows.len() {
                let small = self.hist(left_rows);
                subtract(&mut parent, &small);
                (Some(small), Some(parent))
            } else {
                let small = self.hist(right_rows);
                subtract(&mut parent, &small);
                (Some(parent), Some(small))
            }
        } else {
            (None, None)
        };
        let left = match lh {
            Some(h) => self.grow(left_rows, h, gl, depth + 1),
            None => self.leaf(gl, left_rows.len()),
        };
        let right = match rh {
            Some(h) => self.grow(right_rows, h, gr, depth + 1),
            None => self.leaf(gr, right_rows.len()),
        };
        self.nodes[id].left = left;
        self.nodes[id].right = right;
        id as u32
    }
}

fn subtract(parent: &mut Hist, child: &Hist) {
    for (p, c) in parent.sums.iter_mut().zip(&child.sums) {
        *p -= c;
    }
    for (p, c) in parent.counts.iter_mut().zip(&child.counts) {
        *p -= c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{fit, value, LearnerSpec};

    #[test]
    fn edges_respect_bin_budget() {
        let col: Vec<f64> = (0..1000).map(|i| ((i * 37) % 1000) as f64).collect();
        let e = quantile_edges(&col, 16);
        assert!(e.len() <= 15);
        assert!(e.windows(2).all(|w| w[0] < w[1]));
        let few = quantile_edges(&[1.0, 1.0, 2.0, 3.0], 256);
        assert_eq!(few, [1.5, 2.5]);
        assert!(quantile_edges(&[5.0; 10], 256).is_empty());
    }

    #[test]
    fn binned_and_raw_traversal_agree() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 13) % 97) as f64 * 0.1).collect();
        let z: Vec<f64> = (0..300).map(|i| ((i * 7) % 31) as f64).collect();
        let y: Vec<f64> = x.iter().zip(&z).map(|(a, b)| a.sin() + 0.1 * b).collect();
        let d = Dataset::new(vec![x, z], vec!["x".into(), "z".into()], y).unwrap();
        let params = TreeParams {
            n_trees: 20,
            ..Default::default()
        };
        let bins = BinnedMatrix::new(&d, params.max_bins);
        let e = Ensemble::fit(
            &params,
            &bins,
            d.response(),
            &TrainRows::All(300),
            &[0, 1],
            &RngStream::new(1),
        );
        let cols: Vec<Column<'_>> = d.columns().iter().map(|c| Column::Data(c)).collect();
        for i in 0..300 {
            let raw: f64 = e.trees.iter().map(|t| t.predict_row(&cols, i)).sum();
            let binned: f64 = e.trees.iter().map(|t| t.predict_binned(&bins, i)).sum();
            assert_eq!(raw, binned);
        }
    }

    #[test]
    fn constant_response_gives_constant_model() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let d = Dataset::new(vec![x], vec!["x".into()], vec![2.5; 50]).unwrap();
        let m = fit(&LearnerSpec::default(), &d, &[0], &RngStream::new(0)).unwrap();
        let (mse, _) = value(&m, &d).unwrap();
        assert_eq!(mse, 0.0);
    }

    #[test]
    fn step_function_is_learned() {
        // fewer distinct values than bins, so the step falls on a bin edge
        let x: Vec<f64> = (0..200).map(|i| i as f64 / 200.0).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v > 0.5 { 3.0 } else { -1.0 }).collect();
        let d = Dataset::new(vec![x], vec!["x".into()], y).unwrap();
        let m = fit(&LearnerSpec::default(), &d, &[0], &RngStream::new(0)).unwrap();
        let (mse, _) = value(&m, &d).unwrap();
        assert!(mse < 1e-6, "mse {mse}");
    }

    #[test]
    fn deterministic_given_stream() {
        let x: Vec<f64> = (0..200).map(|i| ((i * 17) % 53) as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| (v / 7.0).cos()).collect();
        let d = Dataset::new(vec![x], vec!["x".into()], y).unwrap();
        let a = fit(&LearnerSpec::default(), &d, &[0], &RngStream::new(9)).unwrap();
        let b = fit(&LearnerSpec::default(), &d, &[0], &RngStream::new(9)).unwrap();
        let pa = a.predict(&d).unwrap();
        let pb = b.predict(&d).unwrap();
        assert!(pa.iter().zip(&pb).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}
