//! Score networks for node features and spectrum (or, for the full-rank
//! baseline, node features and adjacency).
//!
//! All networks are size-agnostic: the same parameters apply to any node
//! count. Outputs are noise predictions; the score used by the samplers is
//! `output / std(t)`, so the std²-weighted denoising loss reduces to
//! `‖output + ε‖²`.
//!
//! Feature network (θ): two rounds of message passing over a row-normalized
//! message matrix (`U diag(Λ_t) Uᵀ` for the spectral model, `A_t` for the
//! full-rank baseline), then a per-node MLP. Spectrum network (φ): a
//! per-eigenpair MLP over the eigenvalue, sign-invariant statistics of its
//! eigenvector, pooled context and the time embedding, with one mean-pooled
//! interaction layer. Adjacency network (φ, full rank): node embeddings by
//! message passing, then an edge MLP over `p_i + p_j` and the noisy entry.

pub mod checkpoint;
pub mod tape;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};
use crate::graphs::recompose_parts;
use crate::schedules::NoiseSchedule;
use tape::{Tape, Var};

/// Which structure the model diffuses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Spectral,
    FullRank,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Self::Spectral),
            "fullrank" | "full-rank" => Ok(Self::FullRank),
            other => Err(precondition(format!("unknown variant `{other}`"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Spectral => "spectral",
            Self::FullRank => "fullrank",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub variant: Variant,
    pub feature_dim: usize,
    pub hidden: usize,
    pub time_dim: usize,
    /// Feed eigenvector statistics to the spectrum network.
    pub eigvec_features: bool,
}

impl Arch {
    pub fn new(variant: Variant, feature_dim: usize, hidden: usize, time_dim: usize) -> Self {
        Self {
            variant,
            feature_dim,
            hidden,
            time_dim,
            eigvec_features: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden == 0 || self.time_dim < 2 || !self.time_dim.is_multiple_of(2) {
            return Err(precondition(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }
}

// per-node structural inputs: row sum, diagonal, log n
const NODE_EXTRA: usize = 3;
// per-eigenpair scalars: λ, mean λ, max |λ|, log n, then five eigenvector statistics
const EIG_SCALARS: usize = 9;
const DEGREE_SCALE: f64 = 0.2;
const LAMBDA_SCALE: f64 = 0.25;

#[derive(Clone, Copy, Debug)]
enum Init {
    FanIn(usize),
    Zero,
}

#[derive(Clone, Copy, Debug)]
struct TensorSpec {
    rows: usize,
    cols: usize,
    init: Init,
}

fn spec(rows: usize, cols: usize, init: Init) -> TensorSpec {
    TensorSpec { rows, cols, init }
}

fn feature_layout(a: &Arch) -> Vec<TensorSpec> {
    let (d, h, e) = (a.feature_dim, a.hidden, a.time_dim);
    let inp = d + NODE_EXTRA;
    vec![
        spec(inp, h, Init::FanIn(inp + e)),
        spec(e, h, Init::FanIn(inp + e)),
        spec(1, h, Init::Zero),
        spec(h, h, Init::FanIn(2 * h)),
        spec(h, h, Init::FanIn(2 * h)),
        spec(1, h, Init::Zero),
        spec(h, h, Init::FanIn(2 * h)),
        spec(h, h, Init::FanIn(2 * h)),
        spec(1, h, Init::Zero),
        spec(h, h, Init::FanIn(h)),
        spec(1, h, Init::Zero),
        spec(h, d, Init::Zero),
        spec(1, d, Init::Zero),
    ]
}

fn spectrum_layout(a: &Arch) -> Vec<TensorSpec> {
    let (d, h, e) = (a.feature_dim, a.hidden, a.time_dim);
    let inp = EIG_SCALARS + 2 * d;
    vec![
        spec(inp, h, Init::FanIn(inp + e)),
        spec(e, h, Init::FanIn(inp + e)),
        spec(1, h, Init::Zero),
        spec(h, h, Init::FanIn(2 * h)),
        spec(h, h, Init::FanIn(2 * h)),
        spec(1, h, Init::Zero),
        spec(h, 1, Init::Zero),
        spec(1, 1, Init::Zero),
    ]
}

fn adjacency_layout(a: &Arch) -> Vec<TensorSpec> {
    let (d, h, e) = (a.feature_dim, a.hidden, a.time_dim);
    let inp = d + NODE_EXTRA;
    vec![
        spec(inp, h, Init::FanIn(inp + e)),
        spec(e, h, Init::FanIn(inp + e)),
        spec(1, h, Init::Zero),
        spec(h, h, Init::FanIn(2 * h)),
        spec(h, h, Init::FanIn(2 * h)),
        spec(1, h, Init::Zero),
        spec(h, h, Init::FanIn(h + 2 + e)),
        spec(2, h, Init::FanIn(h + 2 + e)),
        spec(e, h, Init::FanIn(h + 2 + e)),
        spec(1, h, Init::Zero),
        spec(h, 1, Init::Zero),
        spec(1, 1, Init::Zero),
    ]
}

fn structure_layout(a: &Arch) -> Vec<TensorSpec> {
    match a.variant {
        Variant::Spectral => spectrum_layout(a),
        Variant::FullRank => adjacency_layout(a),
    }
}

/// Parameters of both networks. `theta` drives the feature score, `phi`
/// the spectrum (or adjacency) score. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNetParams {
    pub arch: Arch,
    pub theta: Vec<Array2<f64>>,
    pub phi: Vec<Array2<f64>>,
}

fn init_tensors<R: Rng + ?Sized>(specs: &[TensorSpec], rng: &mut R, zero_final: bool) -> Vec<Array2<f64>> {
    specs
        .iter()
        .map(|s| match s.init {
            Init::Zero if zero_final => Array2::zeros((s.rows, s.cols)),
            Init::Zero => Array2::from_shape_fn((s.rows, s.cols), |_| rng.random_range(-0.5..0.5)),
            Init::FanIn(fan) => {
                let bound = 1.0 / (fan as f64).sqrt();
                Array2::from_shape_fn((s.rows, s.cols), |_| rng.random_range(-bound..bound))
            }
        })
        .collect()
}

impl ScoreNetParams {
    /// Fan-in scaled uniform hidden layers, zero output layers.
    pub fn init<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            theta: init_tensors(&feature_layout(&arch), rng, true),
            phi: init_tensors(&structure_layout(&arch), rng, true),
        })
    }

    /// Every tensor random, including output layers (for gradient checks).
    pub fn random<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            theta: init_tensors(&feature_layout(&arch), rng, false),
            phi: init_tensors(&structure_layout(&arch), rng, false),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |v: &Vec<Array2<f64>>| v.iter().map(|a| Array2::zeros(a.raw_dim())).collect();
        Self {
            arch: self.arch,
            theta: z(&self.theta),
            phi: z(&self.phi),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.theta.iter().chain(self.phi.iter())
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.theta.iter_mut().chain(self.phi.iter_mut())
    }

    /// Tensor `slot`, counting θ tensors first.
    pub fn slot(&self, slot: usize) -> &Array2<f64> {
        let nt = self.theta.len();
        if slot < nt {
            &self.theta[slot]
        } else {
            &self.phi[slot - nt]
        }
    }

    pub fn slot_mut(&mut self, slot: usize) -> &mut Array2<f64> {
        let nt = self.theta.len();
        if slot < nt {
            &mut self.theta[slot]
        } else {
            &mut self.phi[slot - nt]
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(|a| a.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(|a| a.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn check_layout(&self) -> Result<()> {
        let check = |tensors: &[Array2<f64>], specs: &[TensorSpec]| {
            tensors.len() == specs.len()
                && tensors.iter().zip(specs).all(|(t, s)| t.dim() == (s.rows, s.cols))
        };
        if check(&self.theta, &feature_layout(&self.arch))
            && check(&self.phi, &structure_layout(&self.arch))
        {
            Ok(())
        } else {
            Err(Error::Shape("parameter tensors do not match architecture".into()))
        }
    }

    fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            a.scaled_add(scale, b);
        }
    }
}

/// Sinusoidal embedding with frequencies geometric from 1 to 10⁴.
pub fn time_embedding(t: f64, dim: usize) -> Array2<f64> {
    let half = dim / 2;
    let mut out = Array2::zeros((1, dim));
    for k in 0..half {
        let freq = if half > 1 {
            10f64.powf(4.0 * k as f64 / (half - 1) as f64)
        } else {
            1.0
        };
        out[[0, k]] = (t * freq).sin();
        out[[0, half + k]] = (t * freq).cos();
    }
    out
}

/// Row-normalized message matrix and per-node structural inputs.
fn message_inputs(m: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let n = m.nrows();
    let mut normalized = m.clone();
    let mut extra = Array2::zeros((n, NODE_EXTRA));
    let log_n = (n as f64).ln() / 3.0;
    for i in 0..n {
        let abs_sum: f64 = m.row(i).iter().map(|v| v.abs()).sum();
        normalized.row_mut(i).mapv_inplace(|v| v / (1.0 + abs_sum));
        extra[[i, 0]] = DEGREE_SCALE * m.row(i).sum();
        extra[[i, 1]] = m[[i, i]];
        extra[[i, 2]] = log_n;
    }
    (normalized, extra)
}

fn concat_cols(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("row counts agree")
}

fn params_on_tape(tape: &mut Tape, tensors: &[Array2<f64>], offset: usize) -> Vec<Var> {
    tensors
        .iter()
        .enumerate()
        .map(|(i, t)| tape.param(t.clone(), offset + i))
        .collect()
}

/// Message-passing encoder shared by the feature and adjacency networks.
/// Uses the first six tensors of `p`; returns the final node embedding.
fn node_encoder(tape: &mut Tape, p: &[Var], x: &Array2<f64>, msg: &Array2<f64>, extra: &Array2<f64>, temb: Var, rounds: usize) -> Var {
    let inp = tape.constant(concat_cols(x, extra));
    let msg = tape.constant(msg.clone());
    let z = tape.matmul(inp, p[0]);
    let tv = tape.matmul(temb, p[1]);
    let z = tape.add_row(z, tv);
    let z = tape.add_row(z, p[2]);
    let mut h = tape.tanh(z);
    for r in 0..rounds {
        let (w_msg, w_self, b) = (p[3 + 3 * r], p[4 + 3 * r], p[5 + 3 * r]);
        let hm = tape.matmul(h, w_msg);
        let agg = tape.matmul(msg, hm);
        let hs = tape.matmul(h, w_self);
        let z = tape.add(agg, hs);
        let z = tape.add_row(z, b);
        let z = tape.tanh(z);
        h = tape.add(z, h);
    }
    h
}

fn feature_net(tape: &mut Tape, p: &[Var], x: &Array2<f64>, msg: &Array2<f64>, extra: &Array2<f64>, temb: Var) -> Var {
    let h = node_encoder(tape, p, x, msg, extra, temb, 2);
    let z = tape.matmul(h, p[9]);
    let z = tape.add_row(z, p[10]);
    let z = tape.tanh(z);
    let o = tape.matmul(z, p[11]);
    tape.add_row(o, p[12])
}

/// Per-eigenpair inputs: eigenvalue context, eigenvector statistics,
/// pooled features and squared feature projections.
fn eigen_inputs(x: &Array2<f64>, lambda: &Array1<f64>, u: &Array2<f64>, eigvec_features: bool) -> Array2<f64> {
    let n = lambda.len();
    let d = x.ncols();
    let nf = n as f64;
    let mean_l = lambda.sum() / nf;
    let max_l = lambda.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let pooled = x.mean_axis(Axis(0)).expect("non-empty graph");
    let proj = u.t().dot(x);
    let mut out = Array2::zeros((n, EIG_SCALARS + 2 * d));
    for i in 0..n {
        let col = u.column(i);
        out[[i, 0]] = LAMBDA_SCALE * lambda[i];
        out[[i, 1]] = LAMBDA_SCALE * mean_l;
        out[[i, 2]] = LAMBDA_SCALE * max_l;
        out[[i, 3]] = nf.ln() / 3.0;
        if eigvec_features {
            let sum: f64 = col.sum();
            out[[i, 4]] = sum * sum / nf;
            out[[i, 5]] = col.iter().map(|v| v.powi(4)).sum::<f64>();
            out[[i, 6]] = col.iter().map(|v| v.abs()).sum::<f64>() / nf.sqrt();
            let pos = col.iter().filter(|v| **v > 0.0).count() as f64;
            let neg = col.iter().filter(|v| **v < 0.0).count() as f64;
            out[[i, 7]] = (pos - neg).abs() / nf;
            out[[i, 8]] = col.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        }
        for c in 0..d {
            out[[i, EIG_SCALARS + c]] = pooled[c];
            out[[i, EIG_SCALARS + d + c]] = proj[[i, c]] * proj[[i, c]];
        }
    }
    out
}

fn spectrum_net(tape: &mut Tape, p: &[Var], inputs: Array2<f64>, temb: Var) -> Var {
    let f = tape.constant(inputs);
    let z = tape.matmul(f, p[0]);
    let tv = tape.matmul(temb, p[1]);
    let z = tape.add_row(z, tv);
    let z = tape.add_row(z, p[2]);
    let h1 = tape.tanh(z);
    let ctx = tape.mean_rows(h1);
    let cv = tape.matmul(ctx, p[4]);
    let z = tape.matmul(h1, p[3]);
    let z = tape.add_row(z, cv);
    let z = tape.add_row(z, p[5]);
    let z = tape.tanh(z);
    let h2 = tape.add(z, h1);
    let o = tape.matmul(h2, p[6]);
    tape.add_row(o, p[7])
}

fn adjacency_net(tape: &mut Tape, p: &[Var], x: &Array2<f64>, a: &Array2<f64>, temb: Var) -> Var {
    let n = a.nrows();
    let (msg, extra) = message_inputs(a);
    let h = node_encoder(tape, p, x, &msg, &extra, temb, 1);
    let proj = tape.matmul(h, p[6]);
    let pairs = tape.pair_sum(proj);
    let edge_const = Array2::from_shape_fn((n * n, 2), |(r, c)| {
        let v = a[[r / n, r % n]];
        if c == 0 {
            v
        } else {
            v * v
        }
    });
    let ec = tape.constant(edge_const);
    let ev = tape.matmul(ec, p[7]);
    let z = tape.add(pairs, ev);
    let tv = tape.matmul(temb, p[8]);
    let z = tape.add_row(z, tv);
    let z = tape.add_row(z, p[9]);
    let z = tape.tanh(z);
    let o = tape.matmul(z, p[10]);
    tape.add_row(o, p[11])
}

fn check_finite<'a>(items: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    if items.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(precondition(format!("non-finite values in {what}")))
    }
}

fn check_spectral_shapes(params: &ScoreNetParams, x: &Array2<f64>, lambda: &Array1<f64>, u: &Array2<f64>) -> Result<()> {
    let n = lambda.len();
    if n == 0 || x.nrows() != n || u.dim() != (n, n) || x.ncols() != params.arch.feature_dim {
        return Err(Error::Shape(format!(
            "X {:?}, Λ {}, U {:?} for feature dim {}",
            x.dim(),
            n,
            u.dim(),
            params.arch.feature_dim
        )));
    }
    if params.arch.variant != Variant::Spectral {
        return Err(precondition("spectral score requested from a full-rank network"));
    }
    check_finite(x.iter().chain(lambda.iter()).chain(u.iter()), "score-network input")
}

/// Raw outputs of both spectral networks on one tape.
struct SpectralPass {
    tape: Tape,
    out_x: Var,
    out_lambda: Var,
}

fn spectral_pass(params: &ScoreNetParams, x: &Array2<f64>, lambda: &Array1<f64>, u: &Array2<f64>, t: f64) -> Result<SpectralPass> {
    check_spectral_shapes(params, x, lambda, u)?;
    let mut tape = Tape::new();
    let nt = params.theta.len();
    let theta = params_on_tape(&mut tape, &params.theta, 0);
    let phi = params_on_tape(&mut tape, &params.phi, nt);
    let temb = tape.constant(time_embedding(t, params.arch.time_dim));
    let a_tilde = recompose_parts(u, lambda)?;
    let (msg, extra) = message_inputs(&a_tilde);
    let out_x = feature_net(&mut tape, &theta, x, &msg, &extra, temb);
    let inputs = eigen_inputs(x, lambda, u, params.arch.eigvec_features);
    let out_lambda = spectrum_net(&mut tape, &phi, inputs, temb);
    Ok(SpectralPass { tape, out_x, out_lambda })
}

struct FullPass {
    tape: Tape,
    out_x: Var,
    out_a: Var,
}

fn full_pass(params: &ScoreNetParams, x: &Array2<f64>, a: &Array2<f64>, t: f64) -> Result<FullPass> {
    let n = a.nrows();
    if params.arch.variant != Variant::FullRank {
        return Err(precondition("adjacency score requested from a spectral network"));
    }
    if n == 0 || a.ncols() != n || x.nrows() != n || x.ncols() != params.arch.feature_dim {
        return Err(Error::Shape(format!("X {:?}, A {:?}", x.dim(), a.dim())));
    }
    check_finite(x.iter().chain(a.iter()), "score-network input")?;
    let mut tape = Tape::new();
    let nt = params.theta.len();
    let theta = params_on_tape(&mut tape, &params.theta, 0);
    let phi = params_on_tape(&mut tape, &params.phi, nt);
    let temb = tape.constant(time_embedding(t, params.arch.time_dim));
    let (msg, extra) = message_inputs(a);
    let out_x = feature_net(&mut tape, &theta, x, &msg, &extra, temb);
    let out_a = adjacency_net(&mut tape, &phi, x, a, temb);
    Ok(FullPass { tape, out_x, out_a })
}

/// Spectrum network output, one value per eigenpair.
pub fn spectrum_score(params: &ScoreNetParams, x: &Array2<f64>, lambda: &Array1<f64>, u: &Array2<f64>, t: f64) -> Result<Array1<f64>> {
    let pass = spectral_pass(params, x, lambda, u, t)?;
    Ok(pass.tape.value(pass.out_lambda).column(0).to_owned())
}

/// Feature network output, `n × d`.
pub fn feature_score(params: &ScoreNetParams, x: &Array2<f64>, lambda: &Array1<f64>, u: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
    let pass = spectral_pass(params, x, lambda, u, t)?;
    Ok(pass.tape.value(pass.out_x).clone())
}

/// Both spectral network outputs from one pass.
pub fn spectral_outputs(params: &ScoreNetParams, x: &Array2<f64>, lambda: &Array1<f64>, u: &Array2<f64>, t: f64) -> Result<(Array2<f64>, Array1<f64>)> {
    let pass = spectral_pass(params, x, lambda, u, t)?;
    Ok((
        pass.tape.value(pass.out_x).clone(),
        pass.tape.value(pass.out_lambda).column(0).to_owned(),
    ))
}

/// Both full-rank network outputs; the adjacency output is symmetric.
pub fn full_outputs(params: &ScoreNetParams, x: &Array2<f64>, a: &Array2<f64>, t: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    let n = a.nrows();
    let pass = full_pass(params, x, a, t)?;
    let flat = pass.tape.value(pass.out_a);
    let out_a = Array2::from_shape_fn((n, n), |(i, j)| flat[[i * n + j, 0]]);
    Ok((pass.tape.value(pass.out_x).clone(), out_a))
}

/// Noisy structure of one training example.
#[derive(Clone, Debug)]
pub enum NoisyStructure {
    Spectral {
        u: Array2<f64>,
        lambda_t: Array1<f64>,
        eps: Array1<f64>,
    },
    /// `a_t` and `eps` symmetric with zero diagonal; the loss covers `i < j`.
    Full { a_t: Array2<f64>, eps: Array2<f64> },
}

/// One corrupted training example with its noise draws.
#[derive(Clone, Debug)]
pub struct NoisyExample {
    pub x_t: Array2<f64>,
    pub eps_x: Array2<f64>,
    pub t: f64,
    pub structure: NoisyStructure,
}

impl NoisyExample {
    /// Corrupts `(X₀, Λ₀)` at time `t`.
    pub fn spectral<R: Rng + ?Sized>(
        x0: &Array2<f64>,
        u: &Array2<f64>,
        lambda0: &Array1<f64>,
        t: f64,
        sched_x: &NoiseSchedule,
        sched_lambda: &NoiseSchedule,
        rng: &mut R,
    ) -> Result<Self> {
        let (x_t, eps_x) = crate::diffusion::perturb(x0, t, sched_x, rng)?;
        let (lambda_t, eps) = crate::diffusion::perturb(lambda0, t, sched_lambda, rng)?;
        Ok(Self {
            x_t,
            eps_x,
            t,
            structure: NoisyStructure::Spectral {
                u: u.clone(),
                lambda_t,
                eps,
            },
        })
    }

    /// Corrupts `(X₀, A₀)` with symmetric noise on the strict upper triangle.
    pub fn full<R: Rng + ?Sized>(
        x0: &Array2<f64>,
        a0: &Array2<f64>,
        t: f64,
        sched_x: &NoiseSchedule,
        sched_adj: &NoiseSchedule,
        rng: &mut R,
    ) -> Result<Self> {
        let (x_t, eps_x) = crate::diffusion::perturb(x0, t, sched_x, rng)?;
        let n = a0.nrows();
        let m = sched_adj.marginal(t)?;
        let mut eps = Array2::zeros((n, n));
        let mut a_t = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let e = crate::rng::normal(rng);
                let v = m.mean_coef * a0[[i, j]] + m.std * e;
                eps[[i, j]] = e;
                eps[[j, i]] = e;
                a_t[[i, j]] = v;
                a_t[[j, i]] = v;
            }
        }
        Ok(Self {
            x_t,
            eps_x,
            t,
            structure: NoisyStructure::Full { a_t, eps },
        })
    }
}

/// Batch loss split into its two terms, with gradients.
#[derive(Clone, Debug)]
pub struct LossAndGrads {
    pub loss: f64,
    pub loss_x: f64,
    pub loss_structure: f64,
    pub grads: ScoreNetParams,
}

struct ExampleLoss {
    loss_x: f64,
    loss_s: f64,
    grads: Option<Vec<Option<Array2<f64>>>>,
}

fn example_loss(params: &ScoreNetParams, ex: &NoisyExample, with_grads: bool) -> Result<ExampleLoss> {
    let n_slots = params.theta.len() + params.phi.len();
    let (tape, out_x, out_s, seed_s, loss_s) = match &ex.structure {
        NoisyStructure::Spectral { u, lambda_t, eps } => {
            let pass = spectral_pass(params, &ex.x_t, lambda_t, u, ex.t)?;
            let r = pass.tape.value(pass.out_lambda);
            let resid = Array2::from_shape_fn(r.raw_dim(), |(i, _)| r[[i, 0]] + eps[i]);
            let loss = resid.iter().map(|v| v * v).sum::<f64>();
            (pass.tape, pass.out_x, pass.out_lambda, resid.mapv(|v| 2.0 * v), loss)
        }
        NoisyStructure::Full { a_t, eps } => {
            let n = a_t.nrows();
            let pass = full_pass(params, &ex.x_t, a_t, ex.t)?;
            let r = pass.tape.value(pass.out_a);
            let mut seed = Array2::zeros(r.raw_dim());
            let mut loss = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    let resid = r[[i * n + j, 0]] + eps[[i, j]];
                    loss += resid * resid;
                    seed[[i * n + j, 0]] = 2.0 * resid;
                }
            }
            (pass.tape, pass.out_x, pass.out_a, seed, loss)
        }
    };
    let rx = tape.value(out_x) + &ex.eps_x;
    let loss_x = rx.iter().map(|v| v * v).sum::<f64>();
    let grads = with_grads.then(|| tape.backward(&[(out_x, rx.mapv(|v| 2.0 * v)), (out_s, seed_s)], n_slots));
    Ok(ExampleLoss { loss_x, loss_s, grads })
}

/// Mean over the batch of `‖out_x + ε_x‖² + ‖out_s + ε_s‖²`, which equals
/// the std²-weighted distance between the implied scores and the
/// conditional scores. Gradients are reduced in batch order.
pub fn loss_and_grads(params: &ScoreNetParams, batch: &[NoisyExample]) -> Result<LossAndGrads> {
    if batch.is_empty() {
        return Err(precondition("empty batch"));
    }
    params.check_layout()?;
    let per: Vec<ExampleLoss> = batch
        .par_iter()
        .map(|ex| example_loss(params, ex, true))
        .collect::<Result<_>>()?;
    let nb = batch.len() as f64;
    let mut grads = params.zeros_like();
    let (mut lx, mut ls) = (0.0, 0.0);
    for ex in &per {
        lx += ex.loss_x;
        ls += ex.loss_s;
        let g = ex.grads.as_ref().expect("gradients requested");
        for (slot, gs) in g.iter().enumerate() {
            if let Some(gs) = gs {
                grads.slot_mut(slot).scaled_add(1.0 / nb, gs);
            }
        }
    }
    let (loss_x, loss_structure) = (lx / nb, ls / nb);
    let loss = loss_x + loss_structure;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            step: 0,
            what: "loss".into(),
        });
    }
    Ok(LossAndGrads {
        loss,
        loss_x,
        loss_structure,
        grads,
    })
}

/// Batch loss without gradients.
pub fn batch_loss(params: &ScoreNetParams, batch: &[NoisyExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(precondition("empty batch"));
    }
    let mut total = 0.0;
    for ex in batch {
        let l = example_loss(params, ex, false)?;
        total += l.loss_x + l.loss_s;
    }
    Ok(total / batch.len() as f64)
}

/// Largest relative discrepancy between reverse-mode gradients and central
/// differences with step `h`, over every parameter entry.
pub fn grad_check(params: &ScoreNetParams, batch: &[NoisyExample], h: f64) -> Result<f64> {
    if h <= 0.0 {
        return Err(precondition("finite-difference step must be positive"));
    }
    let analytic = loss_and_grads(params, batch)?.grads;
    let mut worst = 0.0_f64;
    let mut probe = params.clone();
    for slot in 0..(params.theta.len() + params.phi.len()) {
        for idx in 0..params.slot(slot).len() {
            let orig = params.slot(slot).as_slice().expect("standard layout")[idx];
            let set = |p: &mut ScoreNetParams, v: f64| p.slot_mut(slot).as_slice_mut().expect("standard layout")[idx] = v;
            set(&mut probe, orig + h);
            let up = batch_loss(&probe, batch)?;
            set(&mut probe, orig - h);
            let down = batch_loss(&probe, batch)?;
            set(&mut probe, orig);
            let cd = (up - down) / (2.0 * h);
            let an = analytic.slot(slot).as_slice().expect("standard layout")[idx];
            let denom = an.abs() + cd.abs() + 1e-12;
            worst = worst.max((an - cd).abs() / denom);
        }
    }
    Ok(worst)
}

/// Score functions consumed by the spectral samplers.
pub trait SpectralScore: Sync {
    /// `(∇_X log p_t, ∇_Λ log p_t)` at the given state.
    fn scores(&self, x: &Array2<f64>, lambda: &Array1<f64>, u: &Array2<f64>, t: f64) -> Result<(Array2<f64>, Array1<f64>)>;
}

/// Score functions consumed by the full-rank sampler.
pub trait FullRankScore: Sync {
    /// `(∇_X log p_t, ∇_A log p_t)`; the adjacency score is symmetric.
    fn scores(&self, x: &Array2<f64>, a: &Array2<f64>, t: f64) -> Result<(Array2<f64>, Array2<f64>)>;
}

/// Trained networks plus the schedules they were trained with.
#[derive(Clone, Copy, Debug)]
pub struct NetworkScore<'a> {
    pub params: &'a ScoreNetParams,
    pub sched_x: NoiseSchedule,
    pub sched_structure: NoiseSchedule,
}

impl<'a> NetworkScore<'a> {
    pub fn new(params: &'a ScoreNetParams, sched_x: NoiseSchedule, sched_structure: NoiseSchedule) -> Self {
        Self {
            params,
            sched_x,
            sched_structure,
        }
    }

    fn inv_std(sched: &NoiseSchedule, t: f64) -> Result<f64> {
        let sd = sched.marginal(t)?.std;
        if sd <= 0.0 {
            return Err(precondition("score requested at t = 0"));
        }
        Ok(1.0 / sd)
    }
}

impl SpectralScore for NetworkScore<'_> {
    fn scores(&self, x: &Array2<f64>, lambda: &Array1<f64>, u: &Array2<f64>, t: f64) -> Result<(Array2<f64>, Array1<f64>)> {
        let (ox, ol) = spectral_outputs(self.params, x, lambda, u, t)?;
        let sx = Self::inv_std(&self.sched_x, t)?;
        let sl = Self::inv_std(&self.sched_structure, t)?;
        Ok((ox * sx, ol * sl))
    }
}

impl FullRankScore for NetworkScore<'_> {
    fn scores(&self, x: &Array2<f64>, a: &Array2<f64>, t: f64) -> Result<(Array2<f64>, Array2<f64>)> {
        let (ox, oa) = full_outputs(self.params, x, a, t)?;
        let sx = Self::inv_std(&self.sched_x, t)?;
        let sa = Self::inv_std(&self.sched_structure, t)?;
        Ok((ox * sx, oa * sa))
    }
}

/// In-place Adam / SGD state over a parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: ScoreNetParams,
    pub v: ScoreNetParams,
}

impl OptimizerState {
    pub fn new(params: &ScoreNetParams) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn sgd_step(&mut self, params: &mut ScoreNetParams, grads: &ScoreNetParams, lr: f64) {
        self.step += 1;
        params.add_scaled(grads, -lr);
    }

    pub fn adam_step(&mut self, params: &mut ScoreNetParams, grads: &ScoreNetParams, lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.step += 1;
        let bc1 = 1.0 - B1.powi(self.step as i32);
        let bc2 = 1.0 - B2.powi(self.step as i32);
        let iter = params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in iter {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = B1 * *m + (1.0 - B1) * g;
                *v = B2 * *v + (1.0 - B2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + EPS);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::eig_decompose;
    use crate::rng;
    use crate::schedules::ScheduleFamily;

    fn random_graph(n: usize, d: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut r = rng::seeded(seed);
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                if r.random_bool(0.4) {
                    a[[i, j]] = 1.0;
                    a[[j, i]] = 1.0;
                }
            }
        }
        let x = Array2::from_shape_fn((n, d), |_| rng::normal(&mut r));
        (x, a)
    }

    fn tiny(variant: Variant) -> Arch {
        Arch::new(variant, 3, 4, 4)
    }

    #[test]
    fn zero_init_gives_zero_outputs() {
        let arch = Arch::new(Variant::Spectral, 3, 8, 8);
        let params = ScoreNetParams::init(arch, &mut rng::seeded(1)).unwrap();
        let (x, a) = random_graph(6, 3, 2);
        let s = eig_decompose(&a).unwrap();
        assert!(spectrum_score(&params, &x, &s.lambda, &s.u, 0.5).unwrap().iter().all(|v| *v == 0.0));
        assert!(feature_score(&params, &x, &s.lambda, &s.u, 0.5).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn size_agnostic_outputs() {
        let params = ScoreNetParams::random(Arch::new(Variant::Spectral, 3, 8, 8), &mut rng::seeded(3)).unwrap();
        for n in [5, 17, 40] {
            let (x, a) = random_graph(n, 3, n as u64);
            let s = eig_decompose(&a).unwrap();
            let (fx, fl) = spectral_outputs(&params, &x, &s.lambda, &s.u, 0.3).unwrap();
            assert_eq!(fl.len(), n);
            assert_eq!(fx.dim(), (n, 3));
            assert!(fl.iter().chain(fx.iter()).all(|v| v.is_finite()));
        }
    }

    #[test]
    fn spectrum_net_equivariant_under_eigen_reordering() {
        let params = ScoreNetParams::random(Arch::new(Variant::Spectral, 3, 8, 8), &mut rng::seeded(4)).unwrap();
        let (x, a) = random_graph(7, 3, 5);
        let s = eig_decompose(&a).unwrap();
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let lp = Array1::from_shape_fn(7, |k| s.lambda[perm[k]]);
        let up = Array2::from_shape_fn((7, 7), |(r, k)| s.u[[r, perm[k]]]);
        let base = spectrum_score(&params, &x, &s.lambda, &s.u, 0.4).unwrap();
        let permuted = spectrum_score(&params, &x, &lp, &up, 0.4).unwrap();
        for k in 0..7 {
            assert!((permuted[k] - base[perm[k]]).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_net_equivariant_under_node_permutation() {
        let params = ScoreNetParams::random(Arch::new(Variant::Spectral, 3, 8, 8), &mut rng::seeded(6)).unwrap();
        let (x, a) = random_graph(6, 3, 7);
        let s = eig_decompose(&a).unwrap();
        let perm = [2, 5, 0, 1, 4, 3];
        let xp = Array2::from_shape_fn((6, 3), |(i, c)| x[[perm[i], c]]);
        let up = Array2::from_shape_fn((6, 6), |(i, k)| s.u[[perm[i], k]]);
        let base = feature_score(&params, &x, &s.lambda, &s.u, 0.7).unwrap();
        let permuted = feature_score(&params, &xp, &s.lambda, &up, 0.7).unwrap();
        for i in 0..6 {
            for c in 0..3 {
                assert!((permuted[[i, c]] - base[[perm[i], c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn large_inputs_stay_finite() {
        let params = ScoreNetParams::random(Arch::new(Variant::Spectral, 3, 8, 8), &mut rng::seeded(8)).unwrap();
        let (x, a) = random_graph(6, 3, 9);
        let s = eig_decompose(&a).unwrap();
        let fx = feature_score(&params, &(x * 1e3), &(&s.lambda * 1e3), &s.u, 0.2).unwrap();
        assert!(fx.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn rejects_non_finite_and_mismatched_inputs() {
        let params = ScoreNetParams::init(Arch::new(Variant::Spectral, 3, 4, 4), &mut rng::seeded(1)).unwrap();
        let (mut x, a) = random_graph(4, 3, 1);
        let s = eig_decompose(&a).unwrap();
        x[[0, 0]] = f64::NAN;
        assert!(spectrum_score(&params, &x, &s.lambda, &s.u, 0.5).is_err());
        let x2 = Array2::zeros((4, 2));
        assert!(spectrum_score(&params, &x2, &s.lambda, &s.u, 0.5).is_err());
        let full = ScoreNetParams::init(Arch::new(Variant::FullRank, 3, 4, 4), &mut rng::seeded(1)).unwrap();
        assert!(spectrum_score(&full, &Array2::zeros((4, 3)), &s.lambda, &s.u, 0.5).is_err());
    }

    #[test]
    fn full_rank_adjacency_output_symmetric() {
        let params = ScoreNetParams::random(tiny(Variant::FullRank), &mut rng::seeded(10)).unwrap();
        let (x, a) = random_graph(5, 3, 11);
        let (_, oa) = full_outputs(&params, &x, &a, 0.5).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!((oa[[i, j]] - oa[[j, i]]).abs() < 1e-12);
            }
        }
    }

    fn batch(variant: Variant, seed: u64) -> Vec<NoisyExample> {
        let sch = NoiseSchedule::vp(ScheduleFamily::Linear);
        let mut r = rng::seeded(seed);
        (0..3)
            .map(|k| {
                let (x, a) = random_graph(4 + k, 3, seed + k as u64);
                let t = 0.1 + 0.3 * k as f64;
                match variant {
                    Variant::Spectral => {
                        let s = eig_decompose(&a).unwrap();
                        NoisyExample::spectral(&x, &s.u, &s.lambda, t, &sch, &sch, &mut r).unwrap()
                    }
                    Variant::FullRank => NoisyExample::full(&x, &a, t, &sch, &sch, &mut r).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn exact_network_has_zero_loss_and_gradient() {
        let params = ScoreNetParams::init(tiny(Variant::Spectral), &mut rng::seeded(1)).unwrap();
        let mut b = batch(Variant::Spectral, 2);
        for ex in &mut b {
            ex.eps_x.fill(0.0);
            if let NoisyStructure::Spectral { eps, .. } = &mut ex.structure {
                eps.fill(0.0);
            }
        }
        let lg = loss_and_grads(&params, &b).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grads.tensors().all(|t| t.iter().all(|v| *v == 0.0)));
        assert_eq!(grad_check(&params, &b, 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for variant in [Variant::Spectral, Variant::FullRank] {
            let params = ScoreNetParams::random(tiny(variant), &mut rng::seeded(20)).unwrap();
            let b = batch(variant, 21);
            let err = grad_check(&params, &b, 1e-5).unwrap();
            assert!(err < 1e-4, "{variant}: {err}");
            let coarse = grad_check(&params, &b, 1e-1).unwrap();
            assert!(coarse > err, "{variant}: coarse {coarse} fine {err}");
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let params = ScoreNetParams::init(tiny(Variant::Spectral), &mut rng::seeded(1)).unwrap();
        assert!(loss_and_grads(&params, &[]).is_err());
        assert!(grad_check(&params, &batch(Variant::Spectral, 1), 0.0).is_err());
    }

    #[test]
    fn deterministic_forward() {
        let params = ScoreNetParams::random(tiny(Variant::Spectral), &mut rng::seeded(30)).unwrap();
        let (x, a) = random_graph(6, 3, 31);
        let s = eig_decompose(&a).unwrap();
        let a1 = spectral_outputs(&params, &x, &s.lambda, &s.u, 0.3).unwrap();
        let a2 = spectral_outputs(&params, &x, &s.lambda, &s.u, 0.3).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn time_embedding_bounded() {
        for t in [0.0, 0.37, 1.0] {
            let e = time_embedding(t, 16);
            let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 8f64.sqrt()).abs() < 1e-12);
        }
    }
}
