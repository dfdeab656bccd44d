//! Synthetic graph generators and the JSON-lines dataset format.
//!
//! Binary generators attach one-hot degree features (degrees above `d_max`
//! share the last bin), so every binary dataset has `d = d_max + 1`.
//! Weighted synthetic-spectrum graphs carry a single constant feature.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::graphs::{recompose_parts, Graph};
use crate::rng::{self, normal};

pub const DEFAULT_D_MAX: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    CommunitySmall,
    Grid,
    EgoSmall,
    SyntheticEven,
    SyntheticModerate,
    SyntheticSkewed,
}

impl DatasetName {
    pub fn name(self) -> &'static str {
        match self {
            Self::CommunitySmall => "community-small",
            Self::Grid => "grid",
            Self::EgoSmall => "ego-small",
            Self::SyntheticEven => "synthetic-even",
            Self::SyntheticModerate => "synthetic-moderate",
            Self::SyntheticSkewed => "synthetic-skewed",
        }
    }
}

impl std::fmt::Display for DatasetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DatasetName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "community-small" => Self::CommunitySmall,
            "grid" => Self::Grid,
            "ego-small" => Self::EgoSmall,
            "synthetic-even" => Self::SyntheticEven,
            "synthetic-moderate" => Self::SyntheticModerate,
            "synthetic-skewed" => Self::SyntheticSkewed,
            other => return Err(Error::Dataset(format!("unknown dataset `{other}`"))),
        })
    }
}

/// Eigenvalue distribution of the synthetic-spectrum datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigDist {
    Even,
    Moderate,
    Skewed,
}

impl std::str::FromStr for EigDist {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "even" => Ok(Self::Even),
            "moderate" => Ok(Self::Moderate),
            "skewed" => Ok(Self::Skewed),
            other => Err(Error::Dataset(format!("unknown eigenvalue distribution `{other}`"))),
        }
    }
}

impl std::fmt::Display for EigDist {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Even => "even",
            Self::Moderate => "moderate",
            Self::Skewed => "skewed",
        })
    }
}

/// Generator settings. Fields a generator does not use are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub count: usize,
    /// Node-count range (community-small, ego-small) or side-length range (grid).
    pub n_min: usize,
    pub n_max: usize,
    /// Node count of the synthetic-spectrum datasets.
    pub n_fixed: usize,
    pub p_intra: f64,
    /// Expected inter-community edges per node.
    pub inter_rate: f64,
    pub d_max: usize,
    /// Size of the scale-free host graph for ego extraction.
    pub ego_host_nodes: usize,
    /// Dominant-eigenvalue factor for the skewed spectrum (`λ₁ = c·n`).
    pub skew_factor: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn default_for(name: DatasetName) -> Self {
        let (count, n_min, n_max) = match name {
            DatasetName::CommunitySmall => (100, 12, 20),
            DatasetName::Grid => (100, 10, 20),
            DatasetName::EgoSmall => (200, 4, 18),
            _ => (200, 16, 16),
        };
        Self {
            name,
            count,
            n_min,
            n_max,
            n_fixed: 16,
            p_intra: 0.7,
            inter_rate: 0.05,
            d_max: DEFAULT_D_MAX,
            ego_host_nodes: 1000,
            skew_factor: 0.5,
            train_fraction: 0.8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Dataset("count must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Dataset(format!("split fraction {} not in (0,1)", self.train_fraction)));
        }
        if self.n_min > self.n_max {
            return Err(Error::Dataset(format!("empty node range [{}, {}]", self.n_min, self.n_max)));
        }
        Ok(())
    }
}

/// One-hot degree features, degrees ≥ `d_max` in the last bin.
pub fn degree_features(a: &Array2<f64>, d_max: usize) -> Array2<f64> {
    let n = a.nrows();
    let mut x = Array2::zeros((n, d_max + 1));
    for i in 0..n {
        let deg = a.row(i).iter().filter(|v| **v != 0.0).count();
        x[[i, deg.min(d_max)]] = 1.0;
    }
    x
}

fn binary_graph(a: Array2<f64>, d_max: usize) -> Graph {
    let x = degree_features(&a, d_max);
    Graph::new(x, a, false).expect("generator builds symmetric adjacency")
}

fn set_edge(a: &mut Array2<f64>, i: usize, j: usize) {
    a[[i, j]] = 1.0;
    a[[j, i]] = 1.0;
}

/// Two-community graphs; sizes `⌈n/2⌉` and `⌊n/2⌋`.
pub fn gen_community_small(spec: &DatasetSpec) -> Result<Vec<Graph>> {
    spec.validate()?;
    if spec.n_min < 12 || spec.n_max > 20 {
        return Err(Error::Dataset(format!(
            "community-small node range [{}, {}] must lie within [12, 20]",
            spec.n_min, spec.n_max
        )));
    }
    Ok((0..spec.count)
        .map(|g| {
            let mut r = rng::substream(spec.seed, 1, g as u64);
            let n = r.random_range(spec.n_min..=spec.n_max);
            let c1 = n.div_ceil(2);
            let mut a = Array2::zeros((n, n));
            for i in 0..n {
                for j in (i + 1)..n {
                    let same = (i < c1) == (j < c1);
                    if same && r.random_bool(spec.p_intra) {
                        set_edge(&mut a, i, j);
                    }
                }
            }
            let pairs = c1 * (n - c1);
            let p_inter = (spec.inter_rate * n as f64 / pairs as f64).min(1.0);
            let mut inter = 0;
            for i in 0..c1 {
                for j in c1..n {
                    if r.random_bool(p_inter) {
                        set_edge(&mut a, i, j);
                        inter += 1;
                    }
                }
            }
            if inter == 0 {
                let i = r.random_range(0..c1);
                let j = r.random_range(c1..n);
                set_edge(&mut a, i, j);
            }
            binary_graph(a, spec.d_max)
        })
        .collect())
}

/// `w × h` lattice adjacency, node `r·w + c`.
pub fn grid_adjacency(w: usize, h: usize) -> Array2<f64> {
    let n = w * h;
    let mut a = Array2::zeros((n, n));
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                set_edge(&mut a, i, i + 1);
            }
            if r + 1 < h {
                set_edge(&mut a, i, i + w);
            }
        }
    }
    a
}

/// Lattices with side lengths drawn from `[n_min, n_max]`.
pub fn gen_grid(spec: &DatasetSpec) -> Result<Vec<Graph>> {
    spec.validate()?;
    if spec.n_min * spec.n_min < 100 || spec.n_max * spec.n_max > 400 {
        return Err(Error::Dataset(format!(
            "grid sides [{}, {}] must give 100 ≤ w·h ≤ 400",
            spec.n_min, spec.n_max
        )));
    }
    Ok((0..spec.count)
        .map(|g| {
            let mut r = rng::substream(spec.seed, 2, g as u64);
            let w = r.random_range(spec.n_min..=spec.n_max);
            let h = r.random_range(spec.n_min..=spec.n_max);
            binary_graph(grid_adjacency(w, h), spec.d_max)
        })
        .collect())
}

/// Preferential-attachment host graph (two edges per new node).
fn scale_free_host<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut targets: Vec<usize> = Vec::new();
    let seed_nodes = 3.min(n);
    for i in 0..seed_nodes {
        for j in (i + 1)..seed_nodes {
            adj[i].push(j);
            adj[j].push(i);
            targets.extend([i, j]);
        }
    }
    for v in seed_nodes..n {
        let mut chosen = Vec::with_capacity(2);
        while chosen.len() < 2.min(v) {
            let u = targets[rng.random_range(0..targets.len())];
            if !chosen.contains(&u) {
                chosen.push(u);
            }
        }
        for u in chosen {
            adj[v].push(u);
            adj[u].push(v);
            targets.extend([u, v]);
        }
    }
    adj
}

/// Ego networks of a seeded scale-free host; sizes clamped to `[n_min, n_max]`
/// by rejecting small egos and subsampling large neighborhoods.
pub fn gen_ego_small(spec: &DatasetSpec) -> Result<Vec<Graph>> {
    spec.validate()?;
    if spec.n_min < 2 {
        return Err(Error::Dataset("ego size lower bound must be at least 2".into()));
    }
    let mut r = rng::substream(spec.seed, 3, 0);
    let host = scale_free_host(spec.ego_host_nodes.max(spec.n_max + 1), &mut r);
    let mut out = Vec::with_capacity(spec.count);
    let mut attempts = 0usize;
    while out.len() < spec.count {
        attempts += 1;
        if attempts > 1000 * spec.count {
            return Err(Error::Dataset("could not extract enough ego networks".into()));
        }
        let center = r.random_range(0..host.len());
        if host[center].len() + 1 < spec.n_min {
            continue;
        }
        let mut nbrs = host[center].clone();
        nbrs.shuffle(&mut r);
        nbrs.truncate(spec.n_max - 1);
        nbrs.sort_unstable();
        let nodes: Vec<usize> = std::iter::once(center).chain(nbrs).collect();
        let n = nodes.len();
        let mut a = Array2::zeros((n, n));
        for (i, &u) in nodes.iter().enumerate() {
            for (j, &v) in nodes.iter().enumerate().skip(i + 1) {
                if host[u].contains(&v) {
                    set_edge(&mut a, i, j);
                }
            }
        }
        out.push(binary_graph(a, spec.d_max));
    }
    Ok(out)
}

/// Orthonormal matrix by modified Gram–Schmidt on a Gaussian matrix.
pub fn random_orthonormal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array2<f64> {
    let mut q = Array2::from_shape_fn((n, n), |_| normal(rng));
    for k in 0..n {
        for _ in 0..2 {
            for p in 0..k {
                let dot = q.column(p).dot(&q.column(k));
                let qp = q.column(p).to_owned();
                q.column_mut(k).scaled_add(-dot, &qp);
            }
        }
        let norm = q.column(k).dot(&q.column(k)).sqrt();
        q.column_mut(k).mapv_inplace(|v| v / norm);
    }
    q
}

/// Eigenvalues for one synthetic graph.
pub fn draw_spectrum<R: Rng + ?Sized>(n: usize, dist: EigDist, skew_factor: f64, rng: &mut R) -> Array1<f64> {
    let sign = |r: &mut R| if r.random_bool(0.5) { 1.0 } else { -1.0 };
    match dist {
        EigDist::Even => Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0)),
        EigDist::Moderate => Array1::from_shape_fn(n, |i| sign(rng) * 0.7f64.powi(i as i32)),
        EigDist::Skewed => Array1::from_shape_fn(n, |i| {
            if i == 0 {
                skew_factor * n as f64
            } else {
                0.1 * rng.random_range(-1.0..1.0)
            }
        }),
    }
}

/// Weighted graphs `U diag(Λ) Uᵀ` with `U` Haar-like orthonormal.
pub fn gen_synthetic_spectrum(spec: &DatasetSpec, dist: EigDist) -> Result<Vec<Graph>> {
    spec.validate()?;
    let n = spec.n_fixed;
    if n < 2 {
        return Err(Error::Dataset("synthetic spectrum needs n ≥ 2".into()));
    }
    if dist == EigDist::Skewed && spec.skew_factor * n as f64 <= 0.5 {
        return Err(Error::Dataset("skew factor too small for a dominant eigenvalue".into()));
    }
    (0..spec.count)
        .map(|g| {
            let mut r = rng::substream(spec.seed, 4, g as u64);
            let lambda = draw_spectrum(n, dist, spec.skew_factor, &mut r);
            let u = random_orthonormal(n, &mut r);
            let a = recompose_parts(&u, &lambda)?;
            Graph::new(Array2::ones((n, 1)), a, true)
        })
        .collect()
}

pub fn generate(spec: &DatasetSpec) -> Result<Vec<Graph>> {
    match spec.name {
        DatasetName::CommunitySmall => gen_community_small(spec),
        DatasetName::Grid => gen_grid(spec),
        DatasetName::EgoSmall => gen_ego_small(spec),
        DatasetName::SyntheticEven => gen_synthetic_spectrum(spec, EigDist::Even),
        DatasetName::SyntheticModerate => gen_synthetic_spectrum(spec, EigDist::Moderate),
        DatasetName::SyntheticSkewed => gen_synthetic_spectrum(spec, EigDist::Skewed),
    }
}

/// Seeded permutation split; the first `round(fraction·N)` go to train
/// (at least one graph on each side when `N ≥ 2`).
pub fn split(graphs: &[Graph], fraction: f64, seed: u64) -> Result<(Vec<Graph>, Vec<Graph>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(precondition(format!("split fraction {fraction} not in (0,1)")));
    }
    let mut idx: Vec<usize> = (0..graphs.len()).collect();
    idx.shuffle(&mut rng::substream(seed, 5, 0));
    let mut k = (fraction * graphs.len() as f64).round() as usize;
    if graphs.len() >= 2 {
        k = k.clamp(1, graphs.len() - 1);
    }
    let train = idx[..k].iter().map(|&i| graphs[i].clone()).collect();
    let test = idx[k..].iter().map(|&i| graphs[i].clone()).collect();
    Ok((train, test))
}

#[derive(Serialize, Deserialize)]
struct Record {
    n: usize,
    d: usize,
    x: Vec<f64>,
    a: Vec<f64>,
    weighted: bool,
}

fn to_record(g: &Graph) -> Record {
    Record {
        n: g.n(),
        d: g.d(),
        x: g.x.iter().copied().collect(),
        a: g.a.iter().copied().collect(),
        weighted: g.weighted,
    }
}

fn from_record(r: Record, line: usize) -> Result<Graph> {
    let bad = |msg: String| Error::Parse { line, msg };
    if r.x.len() != r.n * r.d || r.a.len() != r.n * r.n {
        return Err(bad(format!("expected {}·{} features and {}² adjacency entries", r.n, r.d, r.n)));
    }
    let x = Array2::from_shape_vec((r.n, r.d), r.x).map_err(|e| bad(e.to_string()))?;
    let a = Array2::from_shape_vec((r.n, r.n), r.a).map_err(|e| bad(e.to_string()))?;
    Graph::new(x, a, r.weighted).map_err(|e| bad(e.to_string()))
}

/// One JSON object per line, fields in the order n, d, x, a, weighted.
/// Floats use the shortest representation that round-trips exactly.
pub fn write_dataset<W: Write>(graphs: &[Graph], mut w: W) -> Result<()> {
    for g in graphs {
        serde_json::to_writer(&mut w, &to_record(g)).map_err(|e| Error::Dataset(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<Graph>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(from_record(rec, i + 1)?);
    }
    Ok(out)
}

pub fn save_dataset(graphs: &[Graph], path: &Path) -> Result<()> {
    write_dataset(graphs, BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_dataset(path: &Path) -> Result<Vec<Graph>> {
    let graphs = read_dataset(BufReader::new(std::fs::File::open(path)?))?;
    if graphs.is_empty() {
        log::warn!("dataset {} is empty", path.display());
    }
    Ok(graphs)
}
