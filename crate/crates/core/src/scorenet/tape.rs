//! Minimal reverse-mode differentiation over dense matrices.
//!
//! Only the handful of operations the score networks use are supported.
//! Every node holds a 2-D value; a backward pass from a seeded output
//! accumulates gradients for all nodes that (transitively) depend on a
//! parameter leaf.

use ndarray::{Array2, Axis};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(usize),
    MatMul(usize, usize),
    Add(usize, usize),
    /// `a (m×k) + b (1×k)` broadcast over rows.
    AddRow(usize, usize),
    Tanh(usize),
    /// `(n×h) → (n²×h)`, row `i·n + j` equals `p_i + p_j`.
    PairSum(usize),
    /// `(m×k) → (1×k)` column means.
    MeanRows(usize),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Const, false)
    }

    /// Parameter leaf; `slot` identifies it when collecting gradients.
    pub fn param(&mut self, value: Array2<f64>, slot: usize) -> Var {
        self.push(value, Op::Param(slot), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::MatMul(a.0, b.0), g)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let g = self.needs(a) || self.needs(b);
        self.push(v, Op::Add(a.0, b.0), g)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) + self.value(row);
        let g = self.needs(a) || self.needs(row);
        self.push(v, Op::AddRow(a.0, row.0), g)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        let g = self.needs(a);
        self.push(v, Op::Tanh(a.0), g)
    }

    pub fn pair_sum(&mut self, p: Var) -> Var {
        let pv = self.value(p);
        let (n, h) = pv.dim();
        let mut out = Array2::zeros((n * n, h));
        for i in 0..n {
            for j in 0..n {
                let mut row = out.row_mut(i * n + j);
                row.assign(&pv.row(i));
                row += &pv.row(j);
            }
        }
        let g = self.needs(p);
        self.push(out, Op::PairSum(p.0), g)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean of empty matrix")
            .insert_axis(Axis(0));
        let g = self.needs(a);
        self.push(v, Op::MeanRows(a.0), g)
    }

    /// Backpropagates `seeds` (node, dL/dnode) and returns gradients for
    /// parameter slots `0..n_slots`.
    pub fn backward(&self, seeds: &[(Var, Array2<f64>)], n_slots: usize) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        fn acc(grads: &mut [Option<Array2<f64>>], idx: usize, g: Array2<f64>) {
            match &mut grads[idx] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }
        for (v, g) in seeds {
            acc(&mut grads, v.0, g.clone());
        }
        let mut out = vec![None; n_slots];
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match node.op {
                Op::Const => {}
                Op::Param(slot) => out[slot] = Some(g.as_standard_layout().into_owned()),
                Op::MatMul(a, b) => {
                    if self.nodes[a].needs_grad {
                        acc(&mut grads, a, g.dot(&self.nodes[b].value.t()));
                    }
                    if self.nodes[b].needs_grad {
                        acc(&mut grads, b, self.nodes[a].value.t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    if self.nodes[a].needs_grad {
                        acc(&mut grads, a, g.clone());
                    }
                    if self.nodes[b].needs_grad {
                        acc(&mut grads, b, g);
                    }
                }
                Op::AddRow(a, b) => {
                    if self.nodes[b].needs_grad {
                        acc(&mut grads, b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.nodes[a].needs_grad {
                        acc(&mut grads, a, g);
                    }
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&node.value, |gi, &y| *gi *= 1.0 - y * y);
                    acc(&mut grads, a, ga);
                }
                Op::PairSum(p) => {
                    let (n, h) = self.nodes[p].value.dim();
                    let mut gp = Array2::zeros((n, h));
                    for i in 0..n {
                        for j in 0..n {
                            let row = g.row(i * n + j);
                            {
                                let mut gi = gp.row_mut(i);
                                gi += &row;
                            }
                            let mut gj = gp.row_mut(j);
                            gj += &row;
                        }
                    }
                    acc(&mut grads, p, gp);
                }
                Op::MeanRows(a) => {
                    let m = self.nodes[a].value.nrows();
                    let ga = Array2::from_shape_fn((m, g.ncols()), |(_, c)| g[[0, c]] / m as f64);
                    acc(&mut grads, a, ga);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// L = Σ seed ⊙ f(params); compares tape gradients to central differences.
    fn check(build: impl Fn(&mut Tape, &[Array2<f64>]) -> Var, params: Vec<Array2<f64>>) {
        let mut tape = Tape::new();
        let out = build(&mut tape, &params);
        let seed = Array2::from_shape_fn(tape.value(out).dim(), |(i, j)| 0.3 + 0.1 * (i + 2 * j) as f64);
        let loss = |ps: &[Array2<f64>]| {
            let mut t = Tape::new();
            let o = build(&mut t, ps);
            (t.value(o) * &seed).sum()
        };
        let grads = tape.backward(&[(out, seed.clone())], params.len());
        let h = 1e-6;
        for (slot, p) in params.iter().enumerate() {
            let g = grads[slot].as_ref().expect("gradient missing");
            for idx in 0..p.len() {
                let mut plus = params.clone();
                plus[slot].as_slice_mut().unwrap()[idx] += h;
                let mut minus = params.clone();
                minus[slot].as_slice_mut().unwrap()[idx] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let an = g.as_slice().unwrap()[idx];
                assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "slot {slot} idx {idx}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn matmul_addrow_tanh() {
        let x = array![[0.5, -1.0], [2.0, 0.1], [0.0, 0.3]];
        check(
            |t, p| {
                let xi = t.constant(x.clone());
                let w = t.param(p[0].clone(), 0);
                let b = t.param(p[1].clone(), 1);
                let z = t.matmul(xi, w);
                let z = t.add_row(z, b);
                t.tanh(z)
            },
            vec![array![[0.2, -0.4, 0.1], [0.7, 0.05, -0.3]], array![[0.1, 0.0, -0.2]]],
        );
    }

    #[test]
    fn pair_sum_mean_rows_add() {
        check(
            |t, p| {
                let a = t.param(p[0].clone(), 0);
                let ps = t.pair_sum(a);
                let th = t.tanh(ps);
                let m = t.mean_rows(th);
                let w = t.param(p[1].clone(), 1);
                let mw = t.matmul(m, w);
                let r = t.add_row(th, mw);
                t.add(r, th)
            },
            vec![array![[0.3, -0.2], [0.1, 0.5], [-0.4, 0.2]], array![[0.5, -0.5], [0.25, 1.0]]],
        );
    }

    #[test]
    fn constants_get_no_gradient_work() {
        let mut t = Tape::new();
        let c = t.constant(array![[1.0, 2.0]]);
        let d = t.tanh(c);
        let grads = t.backward(&[(d, array![[1.0, 1.0]])], 0);
        assert!(grads.is_empty());
    }
}
