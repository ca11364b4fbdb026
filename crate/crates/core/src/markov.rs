//! Finite Markov chain utilities shared by the channel model, the battery
//! chains and the policy evaluation code.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{invalid, Error, Result};

/// Row-stochastic matrix stored as sparse rows of `(column, probability)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseStochastic {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseStochastic {
    /// Builds the matrix, merging duplicate columns and dropping zeros.
    /// Rows must sum to one within `tol`.
    pub fn new(rows: Vec<Vec<(usize, f64)>>, tol: f64) -> Result<Self> {
        let n = rows.len();
        let mut merged = Vec::with_capacity(n);
        for (i, row) in rows.into_iter().enumerate() {
            let mut row: Vec<(usize, f64)> = row.into_iter().filter(|&(_, p)| p != 0.0).collect();
            row.sort_by_key(|&(j, _)| j);
            let mut out: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for (j, p) in row {
                if j >= n {
                    return Err(invalid(format!("row {i} references column {j} of {n}")));
                }
                if !(0.0..=1.0 + tol).contains(&p) {
                    return Err(invalid(format!("entry ({i},{j}) = {p} outside [0,1]")));
                }
                match out.last_mut() {
                    Some(last) if last.0 == j => last.1 += p,
                    _ => out.push((j, p)),
                }
            }
            let sum: f64 = out.iter().map(|&(_, p)| p).sum();
            if (sum - 1.0).abs() > tol {
                return Err(invalid(format!("row {i} sums to {sum}")));
            }
            merged.push(out);
        }
        Ok(Self { rows: merged })
    }

    pub fn from_dense(matrix: &[Vec<f64>], tol: f64) -> Result<Self> {
        let n = matrix.len();
        let rows = matrix
            .iter()
            .enumerate()
            .map(|(i, row)| {
                if row.len() != n {
                    return Err(invalid(format!("row {i} has {} entries, expected {n}", row.len())));
                }
                Ok(row.iter().copied().enumerate().collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows, tol)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// Largest deviation of a row sum from one.
    pub fn max_row_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| (r.iter().map(|&(_, p)| p).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `x · P` for a row vector `x`.
    pub fn left_mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (i, row) in self.rows.iter().enumerate() {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for &(j, p) in row {
                out[j] += xi * p;
            }
        }
        out
    }

    /// Closed communicating classes, each sorted ascending, in order of
    /// their smallest member.
    pub fn closed_classes(&self) -> Vec<Vec<usize>> {
        let n = self.len();
        let mut graph = DiGraph::<(), ()>::with_capacity(n, 0);
        let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, _) in row {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
        let sccs = tarjan_scc(&graph);
        let mut component = vec![0usize; n];
        for (c, scc) in sccs.iter().enumerate() {
            for node in scc {
                component[node.index()] = c;
            }
        }
        let mut closed: Vec<Vec<usize>> = sccs
            .iter()
            .enumerate()
            .filter(|(c, scc)| {
                scc.iter().all(|node| {
                    self.rows[node.index()].iter().all(|&(j, _)| component[j] == *c)
                })
            })
            .map(|(_, scc)| {
                let mut v: Vec<usize> = scc.iter().map(|n| n.index()).collect();
                v.sort_unstable();
                v
            })
            .collect();
        closed.sort_by_key(|c| c[0]);
        closed
    }
}

/// Unique stationary distribution `π = πP`, `Σπ = 1`.
///
/// Fails with [`Error::Ambiguous`] when the chain has more than one closed
/// class. Transient states receive zero mass. The balance equations are
/// solved directly on the closed class by LU decomposition, or by power
/// iteration on the lazy chain `(P + I)/2` when the class is large.
pub fn stationary(matrix: &SparseStochastic) -> Result<Vec<f64>> {
    let n = matrix.len();
    if n == 0 {
        return Err(invalid("empty transition matrix"));
    }
    let closed = matrix.closed_classes();
    if closed.len() != 1 {
        let shown: Vec<String> = closed
            .iter()
            .take(4)
            .map(|c| format!("{:?}", &c[..c.len().min(6)]))
            .collect();
        return Err(Error::Ambiguous(format!(
            "{} closed classes, e.g. {}",
            closed.len(),
            shown.join(", ")
        )));
    }
    stationary_on_class(matrix, &closed[0])
}

/// Stationary distribution supported on one closed class of `matrix`.
pub fn stationary_on_class(matrix: &SparseStochastic, class: &[usize]) -> Result<Vec<f64>> {
    let n = matrix.len();
    if class.is_empty() {
        return Err(invalid("empty class"));
    }
    if class.len() > DIRECT_LIMIT {
        return power_iteration(matrix, class);
    }
    let m = class.len();
    let mut local = vec![usize::MAX; n];
    for (k, &s) in class.iter().enumerate() {
        local[s] = k;
    }

    // (Pᵀ - I) π = 0 with the last equation replaced by Σπ = 1.
    let mut a = DMatrix::<f64>::zeros(m, m);
    for (k, &s) in class.iter().enumerate() {
        for &(j, p) in matrix.row(s) {
            a[(local[j], k)] += p;
        }
        a[(k, k)] -= 1.0;
    }
    for k in 0..m {
        a[(m - 1, k)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(m);
    b[m - 1] = 1.0;
    let solved = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Ambiguous("singular balance equations".into()))?;

    let mut pi = vec![0.0; n];
    for (k, &s) in class.iter().enumerate() {
        pi[s] = solved[k].max(0.0);
    }
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

/// Largest closed class solved by dense LU.
const DIRECT_LIMIT: usize = 2500;

fn power_iteration(matrix: &SparseStochastic, class: &[usize]) -> Result<Vec<f64>> {
    let n = matrix.len();
    let mut pi = vec![0.0; n];
    for &s in class {
        pi[s] = 1.0 / class.len() as f64;
    }
    let max_iter = 2_000_000;
    for _ in 0..max_iter {
        let moved = matrix.left_mul(&pi);
        let mut diff = 0.0f64;
        for (p, m) in pi.iter_mut().zip(&moved) {
            let next = 0.5 * (*p + m);
            diff = diff.max((next - *p).abs());
            *p = next;
        }
        if diff < 1e-14 {
            let total: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|p| *p /= total);
            return Ok(pi);
        }
    }
    Err(Error::Convergence { iterations: max_iter, span: stationary_residual(matrix, &pi) })
}

/// Long-run occupancy of `matrix` started from `init`. With several closed
/// classes each class is weighted by its absorption probability.
pub fn limiting_distribution(matrix: &SparseStochastic, init: &[f64]) -> Result<Vec<f64>> {
    let classes = matrix.closed_classes();
    let weights = if classes.len() == 1 { vec![1.0] } else { absorption(matrix, &classes, init)? };
    let mut pi = vec![0.0; matrix.len()];
    for (class, w) in classes.iter().zip(&weights) {
        if *w == 0.0 {
            continue;
        }
        let local = stationary_on_class(matrix, class)?;
        for (p, l) in pi.iter_mut().zip(&local) {
            *p += w * l;
        }
    }
    Ok(pi)
}

/// Probability of ending in each closed class when starting from `init`.
pub fn absorption(matrix: &SparseStochastic, classes: &[Vec<usize>], init: &[f64]) -> Result<Vec<f64>> {
    let mut owner = vec![usize::MAX; matrix.len()];
    for (c, class) in classes.iter().enumerate() {
        for &s in class {
            owner[s] = c;
        }
    }
    let mut weights = vec![0.0; classes.len()];
    let mut mass = init.to_vec();
    for _ in 0..1_000_000 {
        for (s, m) in mass.iter_mut().enumerate() {
            if owner[s] != usize::MAX && *m > 0.0 {
                weights[owner[s]] += *m;
                *m = 0.0;
            }
        }
        let left: f64 = mass.iter().sum();
        if left < 1e-15 {
            let total: f64 = weights.iter().sum();
            return Ok(weights.into_iter().map(|w| w / total).collect());
        }
        mass = matrix.left_mul(&mass);
    }
    Err(Error::Ambiguous(format!("{} closed classes and absorption did not settle", classes.len())))
}


/// `max_j |(πP)_j − π_j|`.
pub fn stationary_residual(matrix: &SparseStochastic, pi: &[f64]) -> f64 {
    matrix
        .left_mul(pi)
        .iter()
        .zip(pi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}
