//! Graph and spectrum types.
//!
//! The eigensolver is a cyclic Jacobi iteration: deterministic sweep order,
//! unconditional convergence for real symmetric input, and adequate speed
//! for the graph sizes handled here (n ≤ 400).

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{precondition, Error, Result};

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-12;

/// Node features plus a symmetric adjacency matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub x: Array2<f64>,
    pub a: Array2<f64>,
    /// Weighted graphs (synthetic spectra) skip binarization and are
    /// evaluated with adjacency MMD.
    pub weighted: bool,
}

impl Graph {
    pub fn new(x: Array2<f64>, a: Array2<f64>, weighted: bool) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Shape(format!("adjacency is {}x{}", n, a.ncols())));
        }
        if x.nrows() != n {
            return Err(Error::Shape(format!(
                "feature rows {} != node count {n}",
                x.nrows()
            )));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if a[[i, j]] != a[[j, i]] {
                    return Err(precondition(format!("adjacency asymmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { x, a, weighted })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// True when the adjacency is {0,1}-valued with an empty diagonal.
    pub fn is_binary(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| {
            self.a[[i, i]] == 0.0 && (0..n).all(|j| self.a[[i, j]] == 0.0 || self.a[[i, j]] == 1.0)
        })
    }

    pub fn edge_count(&self) -> usize {
        let n = self.n();
        let mut m = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if self.a[[i, j]] != 0.0 {
                    m += 1;
                }
            }
        }
        m
    }
}

/// How eigenpairs are ranked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenOrder {
    /// Descending by |λ|.
    #[default]
    Magnitude,
    /// Descending by signed λ.
    Signed,
}

impl std::str::FromStr for EigenOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(Self::Magnitude),
            "signed" => Ok(Self::Signed),
            other => Err(precondition(format!("unknown eigen order `{other}`"))),
        }
    }
}

/// Orthonormal eigenvectors (columns of `u`) with their eigenvalues.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub u: Array2<f64>,
    pub lambda: Array1<f64>,
    /// `order[k]` is the solver's raw index of the k-th ranked eigenpair.
    pub order: Vec<usize>,
}

impl Spectrum {
    pub fn n(&self) -> usize {
        self.lambda.len()
    }
}

/// Eigendecomposition ranked by magnitude.
pub fn eig_decompose(a: &Array2<f64>) -> Result<Spectrum> {
    eig_decompose_with(a, EigenOrder::Magnitude)
}

pub fn eig_decompose_with(a: &Array2<f64>, order: EigenOrder) -> Result<Spectrum> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(precondition(format!("matrix is {}x{}, not square", n, a.ncols())));
    }
    let scale = a.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[[i, j]] - a[[j, i]]).abs() > SYMMETRY_TOL * scale {
                return Err(precondition(format!("matrix asymmetric at ({i},{j})")));
            }
        }
    }

    let (values, vectors) = jacobi(a)?;

    let mut idx: Vec<usize> = (0..n).collect();
    match order {
        EigenOrder::Magnitude => idx.sort_by(|&p, &q| {
            values[q]
                .abs()
                .total_cmp(&values[p].abs())
                .then(values[q].total_cmp(&values[p]))
        }),
        EigenOrder::Signed => idx.sort_by(|&p, &q| values[q].total_cmp(&values[p])),
    }

    let mut u = Array2::zeros((n, n));
    let mut lambda = Array1::zeros(n);
    for (k, &src) in idx.iter().enumerate() {
        lambda[k] = values[src];
        // sign convention: largest-magnitude component positive
        let mut best = 0;
        for r in 0..n {
            if vectors[r * n + src].abs() > vectors[best * n + src].abs() {
                best = r;
            }
        }
        let sign = if vectors[best * n + src] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            u[[r, k]] = sign * vectors[r * n + src];
        }
    }
    Ok(Spectrum { u, lambda, order: idx })
}

/// Cyclic Jacobi on a row-major copy. Returns (eigenvalues, eigenvectors
/// row-major with eigenvectors in columns).
fn jacobi(a: &Array2<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = a.nrows();
    let mut m: Vec<f64> = a.iter().copied().collect();
    // exact symmetry so the rotation updates below can mirror freely
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = avg;
            m[j * n + i] = avg;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = OFF_DIAGONAL_TOL * frob.max(1.0);

    let off_norm = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += m[i * n + j] * m[i * n + j];
            }
        }
        (2.0 * s).sqrt()
    };

    let mut residual = off_norm(&m);
    let mut sweeps = 0;
    while residual >= tol {
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps, residual });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    let new_p = c * akp - s * akq;
                    let new_q = s * akp + c * akq;
                    m[k * n + p] = new_p;
                    m[p * n + k] = new_p;
                    m[k * n + q] = new_q;
                    m[q * n + k] = new_q;
                }
                m[p * n + p] = app - t * apq;
                m[q * n + q] = aqq + t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        residual = off_norm(&m);
    }
    let values = (0..n).map(|i| m[i * n + i]).collect();
    Ok((values, v))
}

/// `U diag(λ) Uᵀ`, exactly symmetric.
pub fn recompose(spectrum: &Spectrum) -> Result<Array2<f64>> {
    recompose_parts(&spectrum.u, &spectrum.lambda)
}

pub fn recompose_parts(u: &Array2<f64>, lambda: &Array1<f64>) -> Result<Array2<f64>> {
    let n = u.nrows();
    if u.ncols() != lambda.len() {
        return Err(Error::Shape(format!(
            "eigenvector matrix has {} columns but {} eigenvalues",
            u.ncols(),
            lambda.len()
        )));
    }
    let scaled = u * &lambda.view().insert_axis(Axis(0));
    let mut out = scaled.dot(&u.t());
    for i in 0..n {
        for j in (i + 1)..n {
            let v = out[[i, j]];
            out[[j, i]] = v;
        }
    }
    Ok(out)
}

/// Number of eigenpairs retained at quantile `alpha`: `max(1, floor(alpha·n))`.
pub fn retained_count(n: usize, alpha: f64) -> usize {
    // guard against 0.9*10 = 8.999…
    let k = (alpha * n as f64 + 1e-9).floor() as usize;
    k.clamp(1, n.max(1))
}

/// Keeps the top `floor(alpha·n)` ranked eigenpairs, zeroing the rest of
/// the eigenvalues. Eigenvectors are left in place.
pub fn truncate_spectrum(spectrum: &Spectrum, alpha: f64) -> Result<Spectrum> {
    check_alpha(alpha)?;
    let k = retained_count(spectrum.n(), alpha);
    let mut out = spectrum.clone();
    out.lambda.iter_mut().skip(k).for_each(|v| *v = 0.0);
    Ok(out)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(precondition(format!("alpha {alpha} outside (0, 1]")));
    }
    Ok(())
}

/// Symmetrizes by averaging, then thresholds strictly; the diagonal is cleared.
pub fn binarize(a: &Array2<f64>, threshold: f64) -> Array2<f64> {
    let n = a.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (a[[i, j]] + a[[j, i]]);
            if avg > threshold {
                out[[i, j]] = 1.0;
                out[[j, i]] = 1.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;
    use proptest::prelude::*;

    fn random_symmetric(n: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::seeded(seed);
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v = rng::normal(&mut r);
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        a
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn identity_decomposes_to_unit_eigenvalues() {
        let a = Array2::eye(3);
        let s = eig_decompose(&a).unwrap();
        assert_eq!(s.lambda.to_vec(), vec![1.0, 1.0, 1.0]);
        assert_eq!(recompose(&s).unwrap(), a);
    }

    #[test]
    fn diagonal_sorted_by_magnitude() {
        let a = Array2::from_diag(&array![3.0, -5.0, 1.0]);
        let s = eig_decompose(&a).unwrap();
        assert_eq!(s.lambda.to_vec(), vec![-5.0, 3.0, 1.0]);
        assert_eq!(s.order, vec![1, 0, 2]);
    }

    #[test]
    fn signed_order_available() {
        let a = Array2::from_diag(&array![3.0, -5.0, 1.0]);
        let s = eig_decompose_with(&a, EigenOrder::Signed).unwrap();
        assert_eq!(s.lambda.to_vec(), vec![3.0, 1.0, -5.0]);
    }

    #[test]
    fn random_6x6_reconstructs() {
        let a = random_symmetric(6, 11);
        let s = eig_decompose(&a).unwrap();
        let r = recompose(&s).unwrap();
        assert!(max_abs(&(&r - &a)) < 1e-10);
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        assert!(matches!(
            eig_decompose(&Array2::zeros((2, 3))),
            Err(Error::Precondition(_))
        ));
        let a = array![[0.0, 1.0], [0.5, 0.0]];
        assert!(matches!(eig_decompose(&a), Err(Error::Precondition(_))));
    }

    #[test]
    fn recompose_simple_cases() {
        let s = Spectrum {
            u: Array2::eye(2),
            lambda: array![2.0, 7.0],
            order: vec![0, 1],
        };
        assert_eq!(recompose(&s).unwrap(), array![[2.0, 0.0], [0.0, 7.0]]);
        let z = Spectrum {
            u: Array2::eye(3),
            lambda: Array1::zeros(3),
            order: vec![0, 1, 2],
        };
        assert_eq!(recompose(&z).unwrap(), Array2::<f64>::zeros((3, 3)));
        let bad = Spectrum {
            u: Array2::eye(3),
            lambda: Array1::zeros(2),
            order: vec![0, 1],
        };
        assert!(matches!(recompose(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn round_trip_8x8() {
        let a = random_symmetric(8, 3);
        let r = recompose(&eig_decompose(&a).unwrap()).unwrap();
        assert!(max_abs(&(&r - &a)) < 1e-8);
    }

    #[test]
    fn truncation_counts() {
        let s = eig_decompose(&random_symmetric(4, 5)).unwrap();
        assert_eq!(truncate_spectrum(&s, 1.0).unwrap(), s);
        let t = truncate_spectrum(&s, 0.5).unwrap();
        assert_eq!(t.lambda.iter().filter(|v| **v != 0.0).count(), 2);
        assert_eq!(retained_count(10, 0.9), 9);
        assert_eq!(retained_count(5, 0.1), 1);
        assert!(truncate_spectrum(&s, 0.0).is_err());
        assert!(truncate_spectrum(&s, 1.5).is_err());
    }

    #[test]
    fn truncation_error_equals_discarded_energy() {
        let a = random_symmetric(10, 8);
        let s = eig_decompose(&a).unwrap();
        let t = truncate_spectrum(&s, 0.9).unwrap();
        let r = recompose(&t).unwrap();
        let frob = (&r - &a).iter().map(|v| v * v).sum::<f64>().sqrt();
        // independent: the discarded eigenvalue is the smallest |λ| of a
        // fresh decomposition, looked up by scanning
        let smallest = s.lambda.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        assert!((frob - smallest).abs() < 1e-9, "{frob} vs {smallest}");
    }

    #[test]
    fn binarize_rules() {
        let full = Array2::from_elem((4, 4), 0.9);
        let b = binarize(&full, 0.5);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(b[[i, j]], if i == j { 0.0 } else { 1.0 });
            }
        }
        let empty = binarize(&Array2::from_elem((4, 4), 0.1), 0.5);
        assert!(empty.iter().all(|v| *v == 0.0));
        let mut pair = Array2::zeros((2, 2));
        pair[[0, 1]] = 0.8;
        pair[[1, 0]] = 0.4;
        assert_eq!(binarize(&pair, 0.5)[[1, 0]], 1.0);
    }

    #[test]
    fn graph_rejects_bad_shapes() {
        assert!(Graph::new(Array2::zeros((3, 1)), Array2::zeros((2, 2)), false).is_err());
        let a = array![[0.0, 1.0], [0.0, 0.0]];
        assert!(Graph::new(Array2::zeros((2, 1)), a, false).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn decomposition_invariants(n in 2usize..=50, seed in any::<u64>()) {
            let a = random_symmetric(n, seed);
            let s = eig_decompose(&a).unwrap();
            let r = recompose(&s).unwrap();
            prop_assert!(max_abs(&(&r - &a)) < 1e-8);
            let gram = s.u.t().dot(&s.u) - Array2::<f64>::eye(n);
            prop_assert!(max_abs(&gram) < 1e-8);
            let trace: f64 = (0..n).map(|i| a[[i, i]]).sum();
            prop_assert!((s.lambda.sum() - trace).abs() < 1e-8);
            for w in s.lambda.to_vec().windows(2) {
                prop_assert!(w[0].abs() >= w[1].abs());
            }
            prop_assert_eq!(truncate_spectrum(&s, 1.0).unwrap().lambda, s.lambda.clone());
        }

        #[test]
        fn binarize_symmetric_zero_diagonal(n in 1usize..12, seed in any::<u64>(), thr in -1.0f64..1.0) {
            let mut r = rng::seeded(seed);
            let a = Array2::from_shape_fn((n, n), |_| rng::normal(&mut r));
            let b = binarize(&a, thr);
            for i in 0..n {
                prop_assert_eq!(b[[i, i]], 0.0);
                for j in 0..n {
                    prop_assert_eq!(b[[i, j]], b[[j, i]]);
                    prop_assert!(b[[i, j]] == 0.0 || b[[i, j]] == 1.0);
                }
            }
        }
    }
}
