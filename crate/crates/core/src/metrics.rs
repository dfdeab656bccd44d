//! Graph-set evaluation by maximum mean discrepancy.
//!
//! Degree and clustering statistics are normalized histograms compared
//! with a Gaussian kernel over total-variation distance. The orbit
//! statistic is each graph's mean per-node count of the six connected
//! 4-node graphlets, compared with a Euclidean Gaussian kernel. Connected
//! 4-node subsets are enumerated with the ESU algorithm, so sparse graphs
//! never touch all `C(n, 4)` subsets.

use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::graphs::Graph;

pub const CLUSTERING_BINS: usize = 100;
/// Graphlet order used by `orbit_counts`: path, star, cycle, paw, diamond, K₄.
pub const GRAPHLETS: [&str; 6] = ["path", "star", "cycle", "paw", "diamond", "k4"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(−TV(x,y)² / 2bw²)` on histograms, `TV = ½‖x − y‖₁` with zero padding.
    GaussianTv,
    /// `exp(−‖x − y‖² / 2bw²)`, zero padding.
    GaussianRbf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Degree,
    Clustering,
    Orbit,
    Adjacency,
}

impl Statistic {
    pub fn name(self) -> &'static str {
        match self {
            Self::Degree => "degree",
            Self::Clustering => "clustering",
            Self::Orbit => "orbit",
            Self::Adjacency => "adjacency",
        }
    }
}

impl std::str::FromStr for Statistic {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "degree" => Ok(Self::Degree),
            "clustering" => Ok(Self::Clustering),
            "orbit" => Ok(Self::Orbit),
            "adjacency" => Ok(Self::Adjacency),
            other => Err(precondition(format!("unknown statistic `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MmdResult {
    pub value: f64,
    pub bandwidth: f64,
}

fn degrees(a: &Array2<f64>) -> Vec<usize> {
    a.rows().into_iter().map(|r| r.iter().filter(|v| **v != 0.0).count()).collect()
}

/// Normalized degree histogram with bins `0..n`.
pub fn degree_hist(g: &Graph) -> Vec<f64> {
    let n = g.n();
    let mut h = vec![0.0; n.max(1)];
    for d in degrees(&g.a) {
        h[d] += 1.0;
    }
    let total: f64 = h.iter().sum();
    if total > 0.0 {
        h.iter_mut().for_each(|v| *v /= total);
    } else {
        h[0] = 1.0;
    }
    h
}

/// Local clustering coefficient of every node (0 when degree < 2).
pub fn clustering_coefficients(g: &Graph) -> Vec<f64> {
    let n = g.n();
    let adj = neighbor_lists(&g.a);
    (0..n)
        .map(|i| {
            let nb = &adj[i];
            let k = nb.len();
            if k < 2 {
                return 0.0;
            }
            let mut tri = 0usize;
            for (p, &u) in nb.iter().enumerate() {
                for &w in &nb[p + 1..] {
                    if g.a[[u, w]] != 0.0 {
                        tri += 1;
                    }
                }
            }
            tri as f64 / (k * (k - 1) / 2) as f64
        })
        .collect()
}

/// Clustering coefficients binned into 100 equal bins on `[0, 1]`.
pub fn clustering_hist(g: &Graph) -> Vec<f64> {
    let mut h = vec![0.0; CLUSTERING_BINS];
    let cs = clustering_coefficients(g);
    if cs.is_empty() {
        h[0] = 1.0;
        return h;
    }
    for c in &cs {
        h[((c * CLUSTERING_BINS as f64) as usize).min(CLUSTERING_BINS - 1)] += 1.0;
    }
    h.iter_mut().for_each(|v| *v /= cs.len() as f64);
    h
}

fn neighbor_lists(a: &Array2<f64>) -> Vec<Vec<usize>> {
    a.rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| (0..r.len()).filter(|&j| j != i && r[j] != 0.0).collect())
        .collect()
}

fn classify(a: &Array2<f64>, s: &[usize; 4]) -> Option<usize> {
    let mut deg = [0usize; 4];
    let mut edges = 0;
    for p in 0..4 {
        for q in (p + 1)..4 {
            if a[[s[p], s[q]]] != 0.0 {
                deg[p] += 1;
                deg[q] += 1;
                edges += 1;
            }
        }
    }
    deg.sort_unstable();
    match (edges, deg) {
        (3, [1, 1, 2, 2]) => Some(0),
        (3, [1, 1, 1, 3]) => Some(1),
        (4, [2, 2, 2, 2]) => Some(2),
        (4, [1, 2, 2, 3]) => Some(3),
        (5, _) => Some(4),
        (6, _) => Some(5),
        _ => None,
    }
}

/// Per-node counts of connected 4-node graphlet memberships (`n × 6`,
/// columns in `GRAPHLETS` order).
pub fn orbit_counts(g: &Graph) -> Array2<f64> {
    let n = g.n();
    let mut out = Array2::zeros((n, 6));
    if n < 4 {
        return out;
    }
    let adj = neighbor_lists(&g.a);
    let mut in_closed = vec![0u32; n];
    for v in 0..n {
        let ext: Vec<usize> = adj[v].iter().copied().filter(|&u| u > v).collect();
        let mut sub = vec![v];
        mark(&adj, &mut in_closed, v, 1);
        esu(&g.a, &adj, &mut sub, ext, v, &mut in_closed, &mut out);
        mark(&adj, &mut in_closed, v, -1);
    }
    out
}

fn mark(adj: &[Vec<usize>], closed: &mut [u32], w: usize, delta: i32) {
    let bump = |c: &mut u32| *c = (*c as i32 + delta) as u32;
    bump(&mut closed[w]);
    for &u in &adj[w] {
        bump(&mut closed[u]);
    }
}

fn esu(
    a: &Array2<f64>,
    adj: &[Vec<usize>],
    sub: &mut Vec<usize>,
    mut ext: Vec<usize>,
    root: usize,
    closed: &mut [u32],
    out: &mut Array2<f64>,
) {
    if sub.len() == 4 {
        let s = [sub[0], sub[1], sub[2], sub[3]];
        if let Some(k) = classify(a, &s) {
            for &v in &s {
                out[[v, k]] += 1.0;
            }
        }
        return;
    }
    while let Some(w) = ext.pop() {
        let mut next = ext.clone();
        for &u in &adj[w] {
            if u > root && closed[u] == 0 && !next.contains(&u) {
                next.push(u);
            }
        }
        sub.push(w);
        mark(adj, closed, w, 1);
        esu(a, adj, sub, next, root, closed, out);
        mark(adj, closed, w, -1);
        sub.pop();
    }
}

/// Mean per-node graphlet counts (the orbit statistic vector).
pub fn orbit_stat(g: &Graph) -> Vec<f64> {
    let c = orbit_counts(g);
    if g.n() == 0 {
        return vec![0.0; 6];
    }
    c.mean_axis(ndarray::Axis(0)).expect("non-empty").to_vec()
}

fn padded_distance_sq(x: &[f64], y: &[f64], kernel: Kernel) -> f64 {
    let len = x.len().max(y.len());
    let get = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    match kernel {
        Kernel::GaussianTv => {
            let tv = 0.5 * (0..len).map(|i| (get(x, i) - get(y, i)).abs()).sum::<f64>();
            tv * tv
        }
        Kernel::GaussianRbf => (0..len).map(|i| (get(x, i) - get(y, i)).powi(2)).sum(),
    }
}

/// Kernel value `exp(−dist² / 2bw²)`.
pub fn kernel_value(x: &[f64], y: &[f64], kernel: Kernel, bandwidth: f64) -> f64 {
    (-padded_distance_sq(x, y, kernel) / (2.0 * bandwidth * bandwidth)).exp()
}

/// Mean kernel value over `a × b`, rows summed in parallel then in order.
fn mean_kernel(a: &[Vec<f64>], b: &[Vec<f64>], kernel: Kernel, bw: f64) -> f64 {
    let rows: Vec<f64> = a
        .par_iter()
        .map(|x| b.iter().map(|y| kernel_value(x, y, kernel, bw)).sum::<f64>())
        .collect();
    rows.iter().sum::<f64>() / (a.len() * b.len()) as f64
}

/// Biased MMD² estimator, clipped at 0. Symmetric in its arguments
/// bit-for-bit; identical sets give exactly 0.
pub fn mmd(set_a: &[Vec<f64>], set_b: &[Vec<f64>], kernel: Kernel, bandwidth: f64) -> Result<MmdResult> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(precondition("MMD needs two non-empty sets"));
    }
    if !(bandwidth > 0.0) {
        return Err(precondition(format!("bandwidth {bandwidth} must be positive")));
    }
    let kaa = mean_kernel(set_a, set_a, kernel, bandwidth);
    let kbb = mean_kernel(set_b, set_b, kernel, bandwidth);
    let cross = 0.5 * (mean_kernel(set_a, set_b, kernel, bandwidth) + mean_kernel(set_b, set_a, kernel, bandwidth));
    Ok(MmdResult {
        value: ((kaa + kbb) - 2.0 * cross).max(0.0),
        bandwidth,
    })
}

/// MMD with a Euclidean Gaussian kernel over flattened adjacency matrices.
pub fn adjacency_mmd(graphs_a: &[Graph], graphs_b: &[Graph], bandwidth: f64) -> Result<MmdResult> {
    let n = graphs_a.first().map(|g| g.n());
    if graphs_a.iter().chain(graphs_b).any(|g| Some(g.n()) != n) {
        return Err(Error::Shape("adjacency MMD needs graphs of one size".into()));
    }
    let flat = |gs: &[Graph]| -> Vec<Vec<f64>> { gs.iter().map(|g| g.a.iter().copied().collect()).collect() };
    mmd(&flat(graphs_a), &flat(graphs_b), Kernel::GaussianRbf, bandwidth)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub degree: f64,
    pub clustering: f64,
    pub orbit: f64,
    pub adjacency: f64,
}

impl Default for Bandwidths {
    fn default() -> Self {
        Self {
            degree: 1.0,
            clustering: 0.1,
            orbit: 30.0,
            adjacency: 1.0,
        }
    }
}

pub fn statistic_vectors(graphs: &[Graph], stat: Statistic) -> Vec<Vec<f64>> {
    graphs
        .par_iter()
        .map(|g| match stat {
            Statistic::Degree => degree_hist(g),
            Statistic::Clustering => clustering_hist(g),
            Statistic::Orbit => orbit_stat(g),
            Statistic::Adjacency => g.a.iter().copied().collect(),
        })
        .collect()
}

/// One statistic's MMD.
pub fn statistic_mmd(generated: &[Graph], test: &[Graph], stat: Statistic, bw: &Bandwidths) -> Result<MmdResult> {
    match stat {
        Statistic::Degree => mmd(&statistic_vectors(generated, stat), &statistic_vectors(test, stat), Kernel::GaussianTv, bw.degree),
        Statistic::Clustering => mmd(
            &statistic_vectors(generated, stat),
            &statistic_vectors(test, stat),
            Kernel::GaussianTv,
            bw.clustering,
        ),
        Statistic::Orbit => mmd(&statistic_vectors(generated, stat), &statistic_vectors(test, stat), Kernel::GaussianRbf, bw.orbit),
        Statistic::Adjacency => adjacency_mmd(generated, test, bw.adjacency),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<(Statistic, MmdResult)>,
    /// Arithmetic mean of the row values.
    pub avg: f64,
    pub n_generated: usize,
    pub n_test: usize,
}

impl MetricsTable {
    pub fn get(&self, stat: Statistic) -> Option<f64> {
        self.rows.iter().find(|(s, _)| *s == stat).map(|(_, r)| r.value)
    }
}

pub const DEFAULT_STATISTICS: [Statistic; 3] = [Statistic::Degree, Statistic::Clustering, Statistic::Orbit];

pub fn evaluate(generated: &[Graph], test: &[Graph], stats: &[Statistic], bw: &Bandwidths) -> Result<MetricsTable> {
    if generated.is_empty() || test.is_empty() {
        return Err(precondition("evaluation needs non-empty generated and test sets"));
    }
    if stats.is_empty() {
        return Err(precondition("no statistics requested"));
    }
    let rows = stats
        .iter()
        .map(|&s| Ok((s, statistic_mmd(generated, test, s, bw)?)))
        .collect::<Result<Vec<_>>>()?;
    let avg = rows.iter().map(|(_, r)| r.value).sum::<f64>() / rows.len() as f64;
    Ok(MetricsTable {
        rows,
        avg,
        n_generated: generated.len(),
        n_test: test.len(),
    })
}

pub const METRICS_HEADER: &str = "dataset,method,statistic,mmd,bandwidth,n_generated,n_test,seed";

/// Appends the table's rows (plus an `avg` row) in the metrics CSV schema.
pub fn write_metrics_rows<W: Write>(table: &MetricsTable, dataset: &str, method: &str, seed: u64, mut w: W) -> Result<()> {
    for (s, r) in &table.rows {
        writeln!(
            w,
            "{dataset},{method},{},{},{},{},{},{seed}",
            s.name(),
            r.value,
            r.bandwidth,
            table.n_generated,
            table.n_test
        )?;
    }
    writeln!(w, "{dataset},{method},avg,{},,{},{},{seed}", table.avg, table.n_generated, table.n_test)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        let mut a = Array2::zeros((n, n));
        for &(i, j) in edges {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        Graph::new(Array2::ones((n, 1)), a, false).unwrap()
    }

    fn er(n: usize, p: f64, seed: u64) -> Graph {
        let mut r = rng::seeded(seed);
        let mut e = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if r.random_bool(p) {
                    e.push((i, j));
                }
            }
        }
        graph(n, &e)
    }

    #[test]
    fn degree_examples() {
        let c4 = graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        assert_eq!(degree_hist(&c4), vec![0.0, 0.0, 1.0, 0.0]);
        let star = graph(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        let h = degree_hist(&star);
        assert!((h[1] - 0.8).abs() < 1e-15 && (h[4] - 0.2).abs() < 1e-15);
        assert_eq!(degree_hist(&graph(3, &[]))[0], 1.0);
    }

    #[test]
    fn clustering_examples() {
        let k3 = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        assert_eq!(clustering_coefficients(&k3), vec![1.0; 3]);
        assert_eq!(clustering_hist(&k3)[99], 1.0);
        let tree = graph(5, &[(0, 1), (0, 2), (1, 3), (1, 4)]);
        assert!(clustering_coefficients(&tree).iter().all(|c| *c == 0.0));
        // K4 minus edge (2,3): nodes 0,1 have 2 triangles of 3 pairs; 2,3 have 1 of 1
        let k4m = graph(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3)]);
        let c = clustering_coefficients(&k4m);
        assert!((c[0] - 2.0 / 3.0).abs() < 1e-15 && (c[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!((c[2], c[3]), (1.0, 1.0));
    }

    #[test]
    fn orbit_examples() {
        let mut e = Vec::new();
        for i in 0..5 {
            for j in (i + 1)..5 {
                e.push((i, j));
            }
        }
        let k5 = orbit_counts(&graph(5, &e));
        for v in 0..5 {
            assert_eq!(k5.row(v).to_vec(), vec![0.0, 0.0, 0.0, 0.0, 0.0, 4.0]);
        }
        let p4 = orbit_counts(&graph(4, &[(0, 1), (1, 2), (2, 3)]));
        assert_eq!(p4.sum(), 4.0);
        assert!(p4.column(0).iter().all(|v| *v == 1.0));
        assert_eq!(orbit_counts(&graph(6, &[])).sum(), 0.0);
        assert_eq!(orbit_counts(&graph(3, &[(0, 1), (1, 2)])).sum(), 0.0);
    }

    #[test]
    fn orbit_matches_bruteforce_random() {
        for seed in 0..30 {
            let g = er(9, 0.1 + 0.03 * seed as f64, seed);
            assert_eq!(orbit_counts(&g), crate::oracles::orbit_counts_bruteforce(&g.a));
        }
    }

    #[test]
    fn mmd_identities() {
        let mut r = rng::seeded(3);
        let set = |r: &mut rng::GsdmRng, k: usize| -> Vec<Vec<f64>> {
            (0..k).map(|_| (0..5).map(|_| r.random::<f64>()).collect()).collect()
        };
        let a = set(&mut r, 7);
        let b = set(&mut r, 4);
        for kernel in [Kernel::GaussianTv, Kernel::GaussianRbf] {
            assert_eq!(mmd(&a, &a, kernel, 1.0).unwrap().value, 0.0);
            assert_eq!(mmd(&a, &b, kernel, 0.5).unwrap().value, mmd(&b, &a, kernel, 0.5).unwrap().value);
        }
        let x = vec![vec![1.0, 0.0]];
        let y = vec![vec![0.0, 1.0]];
        let v = mmd(&x, &y, Kernel::GaussianTv, 1.0).unwrap().value;
        assert!((v - (2.0 - 2.0 * (-0.5f64).exp())).abs() < 1e-15);
        assert!(mmd(&[], &y, Kernel::GaussianTv, 1.0).is_err());
    }

    #[test]
    fn adjacency_mmd_cases() {
        let gs: Vec<Graph> = (0..5).map(|s| er(6, 0.4, s)).collect();
        assert_eq!(adjacency_mmd(&gs, &gs, 1.0).unwrap().value, 0.0);
        let shifted: Vec<Graph> = gs
            .iter()
            .map(|g| {
                let mut a = g.a.clone() + 0.3;
                for i in 0..6 {
                    a[[i, i]] = 0.3;
                }
                Graph::new(g.x.clone(), a, true).unwrap()
            })
            .collect();
        let v = adjacency_mmd(&gs, &shifted, 1e6).unwrap().value;
        assert!(v < 1e-10);
        assert!(adjacency_mmd(&gs, &[er(7, 0.4, 1)], 1.0).is_err());
    }

    #[test]
    fn evaluate_separates_densities() {
        let dense: Vec<Graph> = (0..50).map(|s| er(12, 0.5, s)).collect();
        let sparse: Vec<Graph> = (0..50).map(|s| er(12, 0.1, 100 + s)).collect();
        let bw = Bandwidths::default();
        let t = evaluate(&dense, &sparse, &DEFAULT_STATISTICS, &bw).unwrap();
        let deg = t.get(Statistic::Degree).unwrap();
        assert!(deg > 0.1, "degree mmd {deg}");
        let mean = t.rows.iter().map(|(_, r)| r.value).sum::<f64>() / 3.0;
        assert!((t.avg - mean).abs() < 1e-12);
        let same = evaluate(&dense, &dense, &DEFAULT_STATISTICS, &bw).unwrap();
        assert!(same.rows.iter().all(|(_, r)| r.value == 0.0));
        let mut rev = sparse.clone();
        rev.reverse();
        let t2 = evaluate(&dense, &rev, &DEFAULT_STATISTICS, &bw).unwrap();
        for ((_, a), (_, b)) in t.rows.iter().zip(&t2.rows) {
            assert!((a.value - b.value).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_csv_rows() {
        let gs: Vec<Graph> = (0..3).map(|s| er(6, 0.4, s)).collect();
        let t = evaluate(&gs, &gs, &DEFAULT_STATISTICS, &Bandwidths::default()).unwrap();
        let mut buf = Vec::new();
        write_metrics_rows(&t, "toy", "gsdm", 7, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        for line in text.lines() {
            assert_eq!(line.split(',').count(), METRICS_HEADER.split(',').count());
        }
    }
}
