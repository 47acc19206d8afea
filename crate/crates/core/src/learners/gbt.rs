//! Histogram-based gradient-boosted regression trees.
//!
//! Features are quantized once into at most 255 bins per column. Trees are
//! grown depth-wise; each node's histogram of gradient and hessian sums is
//! either accumulated directly (smaller child) or obtained by subtracting the
//! sibling from the parent.

use ndarray::ArrayView2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::glm::{logit, sigmoid};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub trees: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    /// L2 penalty on leaf values.
    pub l2: f64,
    pub max_bins: usize,
    /// Fraction of rows sampled (without replacement) for each tree.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            trees: 100,
            depth: 2,
            learning_rate: 0.1,
            min_leaf: 20,
            l2: 1.0,
            max_bins: 255,
            subsample: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Squared,
    Logistic,
}

/// Per-feature bin upper edges. Bin `b` of feature `f` holds values in
/// `(edges[f][b-1], edges[f][b]]`; the last bin is unbounded above.
#[derive(Debug, Clone, PartialEq)]
pub struct Binner {
    edges: Vec<Vec<f64>>,
}

impl Binner {
    pub fn fit(x: ArrayView2<f64>, max_bins: usize) -> Self {
        let max_bins = max_bins.clamp(2, 256);
        let edges = x
            .columns()
            .into_iter()
            .map(|col| {
                let mut v: Vec<f64> = col.to_vec();
                v.sort_by(|a, b| a.total_cmp(b));
                let mut distinct = v.clone();
                distinct.dedup();
                if distinct.len() <= max_bins {
                    distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
                } else {
                    let n = v.len();
                    let mut e: Vec<f64> = (1..max_bins)
                        .map(|b| {
                            let pos = b * n / max_bins;
                            let lo = v[pos - 1];
                            let hi = v[pos];
                            0.5 * (lo + hi)
                        })
                        .collect();
                    e.dedup();
                    e
                }
            })
            .collect();
        Self { edges }
    }

    pub fn n_bins(&self, f: usize) -> usize {
        self.edges[f].len() + 1
    }

    fn bin_of(&self, f: usize, v: f64) -> u8 {
        self.edges[f].partition_point(|&e| e < v) as u8
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> BinnedMatrix {
        let n = x.nrows();
        let cols = (0..self.edges.len())
            .map(|f| x.column(f).iter().map(|&v| self.bin_of(f, v)).collect())
            .collect();
        BinnedMatrix {
            n,
            cols,
            n_bins: (0..self.edges.len()).map(|f| self.n_bins(f)).collect(),
        }
    }

    fn threshold(&self, f: usize, bin: u8) -> f64 {
        self.edges[f][bin as usize]
    }
}

/// Column-major quantized feature matrix.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    n: usize,
    cols: Vec<Vec<u8>>,
    n_bins: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    /// `usize::MAX` marks a leaf.
    feature: usize,
    bin: u8,
    threshold: f64,
    left: usize,
    right: usize,
    value: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_binned(&self, data: &BinnedMatrix, i: usize) -> f64 {
        let mut k = 0;
        loop {
            let node = &self.nodes[k];
            if node.feature == usize::MAX {
                return node.value;
            }
            k = if data.cols[node.feature][i] <= node.bin {
                node.left
            } else {
                node.right
            };
        }
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            let node = &self.nodes[k];
            if node.feature == usize::MAX {
                return node.value;
            }
            k = if row[node.feature] <= node.threshold {
                node.left
            } else {
                node.right
            };
        }
    }
}

/// A fitted boosted ensemble. Predictions are on the raw (additive) scale;
/// apply [`Booster::predict`] for the response scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Booster {
    base: f64,
    trees: Vec<Tree>,
    loss: Loss,
}

impl Booster {
    pub fn predict_raw(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let mut row = vec![0.0; x.ncols()];
        x.rows()
            .into_iter()
            .map(|r| {
                for (dst, src) in row.iter_mut().zip(r.iter()) {
                    *dst = *src;
                }
                self.base + self.trees.iter().map(|t| t.predict_row(&row)).sum::<f64>()
            })
            .collect()
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let raw = self.predict_raw(x);
        match self.loss {
            Loss::Squared => raw,
            Loss::Logistic => raw.into_iter().map(sigmoid).collect(),
        }
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

#[derive(Clone)]
struct Histogram {
    /// (gradient sum, hessian sum, count) per (feature, bin), flattened.
    cells: Vec<(f64, f64, u32)>,
}

struct Layout {
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    fn new(n_bins: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(n_bins.len());
        let mut total = 0;
        for &b in n_bins {
            offsets.push(total);
            total += b;
        }
        Self { offsets, total }
    }
}

fn build_histogram(
    data: &BinnedMatrix,
    layout: &Layout,
    rows: &[u32],
    grad: &[f64],
    hess: &[f64],
) -> Histogram {
    let mut cells = vec![(0.0, 0.0, 0u32); layout.total];
    for (f, col) in data.cols.iter().enumerate() {
        let cells = &mut cells[layout.offsets[f]..layout.offsets[f] + data.n_bins[f]];
        for &i in rows {
            let i = i as usize;
            let c = &mut cells[col[i] as usize];
            c.0 += grad[i];
            c.1 += hess[i];
            c.2 += 1;
        }
    }
    Histogram { cells }
}

fn subtract(parent: &Histogram, child: &Histogram) -> Histogram {
    Histogram {
        cells: parent
            .cells
            .iter()
            .zip(&child.cells)
            .map(|(p, c)| (p.0 - c.0, p.1 - c.1, p.2 - c.2))
            .collect(),
    }
}

struct Split {
    feature: usize,
    bin: u8,
    gain: f64,
}

const MIN_CHILD_HESSIAN: f64 = 1e-6;

fn best_split(
    hist: &Histogram,
    layout: &Layout,
    n_bins: &[usize],
    totals: (f64, f64, u32),
    params: &GbtParams,
) -> Option<Split> {
    let (g, h, count) = totals;
    let lambda = params.l2;
    let parent_score = g * g / (h + lambda);
    let min_leaf = params.min_leaf.max(1) as u32;
    let mut best: Option<Split> = None;
    for (f, &nb) in n_bins.iter().enumerate() {
        let cells = &hist.cells[layout.offsets[f]..layout.offsets[f] + nb];
        let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0u32);
        for (b, cell) in cells.iter().enumerate().take(nb - 1) {
            gl += cell.0;
            hl += cell.1;
            cl += cell.2;
            if cell.2 == 0 {
                continue;
            }
            let cr = count - cl;
            if cl < min_leaf {
                continue;
            }
            if cr < min_leaf {
                break;
            }
            let (gr, hr) = (g - gl, h - hl);
            if hl < MIN_CHILD_HESSIAN || hr < MIN_CHILD_HESSIAN {
                continue;
            }
            let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent_score;
            if gain > 1e-12 && best.as_ref().is_none_or(|s| gain > s.gain) {
                best = Some(Split {
                    feature: f,
                    bin: b as u8,
                    gain,
                });
            }
        }
    }
    best
}

struct Pending {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
    hist: Histogram,
    totals: (f64, f64, u32),
}

fn grow_tree(
    data: &BinnedMatrix,
    binner: &Binner,
    layout: &Layout,
    rows: &mut [u32],
    grad: &[f64],
    hess: &[f64],
    params: &GbtParams,
) -> Tree {
    let leaf_value = |g: f64, h: f64| -g / (h + params.l2) * params.learning_rate;
    let root_hist = build_histogram(data, layout, rows, grad, hess);
    let totals = rows.iter().fold((0.0, 0.0, 0u32), |acc, &i| {
        (
            acc.0 + grad[i as usize],
            acc.1 + hess[i as usize],
            acc.2 + 1,
        )
    });
    let mut nodes = vec![Node {
        feature: usize::MAX,
        bin: 0,
        threshold: 0.0,
        left: 0,
        right: 0,
        value: leaf_value(totals.0, totals.1),
    }];
    let mut stack = vec![Pending {
        node: 0,
        start: 0,
        end: rows.len(),
        depth: 0,
        hist: root_hist,
        totals,
    }];
    while let Some(p) = stack.pop() {
        if p.depth >= params.depth || p.totals.2 < 2 * params.min_leaf.max(1) as u32 {
            continue;
        }
        let Some(split) = best_split(&p.hist, layout, &data.n_bins, p.totals, params) else {
            continue;
        };
        // partition rows[start..end] so that left rows come first
        let segment = &mut rows[p.start..p.end];
        let col = &data.cols[split.feature];
        let mut mid = 0;
        for k in 0..segment.len() {
            if col[segment[k] as usize] <= split.bin {
                segment.swap(mid, k);
                mid += 1;
            }
        }
        let (left_rows, right_rows) = segment.split_at(mid);
        let left_small = left_rows.len() <= right_rows.len();
        let small = if left_small { left_rows } else { right_rows };
        let small_hist = build_histogram(data, layout, small, grad, hess);
        let large_hist = subtract(&p.hist, &small_hist);
        let (left_hist, right_hist) = if left_small {
            (small_hist, large_hist)
        } else {
            (large_hist, small_hist)
        };
        let sum = |rs: &[u32]| {
            rs.iter().fold((0.0, 0.0, 0u32), |acc, &i| {
                (
                    acc.0 + grad[i as usize],
                    acc.1 + hess[i as usize],
                    acc.2 + 1,
                )
            })
        };
        let lt = sum(left_rows);
        let rt = sum(right_rows);
        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node {
            feature: usize::MAX,
            bin: 0,
            threshold: 0.0,
            left: 0,
            right: 0,
            value: leaf_value(lt.0, lt.1),
        });
        nodes.push(Node {
            feature: usize::MAX,
            bin: 0,
            threshold: 0.0,
            left: 0,
            right: 0,
            value: leaf_value(rt.0, rt.1),
        });
        let node = &mut nodes[p.node];
        node.feature = split.feature;
        node.bin = split.bin;
        node.threshold = binner.threshold(split.feature, split.bin);
        node.left = left;
        node.right = right;
        stack.push(Pending {
            node: right,
            start: p.start + mid,
            end: p.end,
            depth: p.depth + 1,
            hist: right_hist,
            totals: rt,
        });
        stack.push(Pending {
            node: left,
            start: p.start,
            end: p.start + mid,
            depth: p.depth + 1,
            hist: left_hist,
            totals: lt,
        });
    }
    Tree { nodes }
}

/// Fit one booster on pre-binned data. `y` holds responses (in [0, 1] for
/// the logistic loss).
pub fn fit_binned(
    data: &BinnedMatrix,
    binner: &Binner,
    y: &[f64],
    params: &GbtParams,
    loss: Loss,
    stream: u64,
) -> Booster {
    let n = data.n;
    let layout = Layout::new(&data.n_bins);
    let mean = y.iter().sum::<f64>() / n as f64;
    let base = match loss {
        Loss::Squared => mean,
        Loss::Logistic => logit(mean.clamp(1e-6, 1.0 - 1e-6)),
    };
    let mut raw = vec![base; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![1.0; n];
    let mut trees = Vec::with_capacity(params.trees);
    let mut rng = rng::stream(params.seed, &[stream]);
    let sample_size = ((params.subsample.clamp(0.0, 1.0) * n as f64).round() as usize).clamp(1, n);
    let all_rows: Vec<u32> = (0..n as u32).collect();
    for _ in 0..params.trees {
        match loss {
            Loss::Squared => {
                for i in 0..n {
                    grad[i] = raw[i] - y[i];
                }
            }
            Loss::Logistic => {
                for i in 0..n {
                    let p = sigmoid(raw[i]);
                    grad[i] = p - y[i];
                    hess[i] = (p * (1.0 - p)).max(1e-12);
                }
            }
        }
        let mut rows: Vec<u32> = if sample_size < n {
            let mut v: Vec<u32> = index::sample(&mut rng, n, sample_size)
                .into_iter()
                .map(|i| i as u32)
                .collect();
            v.sort_unstable();
            v
        } else {
            all_rows.clone()
        };
        let tree = grow_tree(data, binner, &layout, &mut rows, &grad, &hess, params);
        if tree.nodes.len() == 1 && tree.nodes[0].value.abs() < 1e-15 {
            trees.push(tree);
            break;
        }
        for (i, r) in raw.iter_mut().enumerate() {
            *r += tree.predict_binned(data, i);
        }
        trees.push(tree);
    }
    Booster { base, trees, loss }
}

pub fn fit(x: ArrayView2<f64>, y: &[f64], params: &GbtParams, loss: Loss) -> Booster {
    let binner = Binner::fit(x, params.max_bins);
    let data = binner.transform(x);
    fit_binned(&data, &binner, y, params, loss, 0)
}
