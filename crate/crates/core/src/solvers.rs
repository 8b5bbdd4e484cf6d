//! Output-layer solves on interpolation matrices.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::DEFAULT_RANK_TOL;
use crate::linalg::{from_rows, inf_norm, lstsq_min_norm, rank, solve_square};

/// Residual bound every returned exact solution must meet.
pub const SOLUTION_TOL: f64 = 1e-8;

pub const DEFAULT_MAX_COMBOS: usize = 10_000;

/// Block lower-triangular system `Phi * alpha = y` with square diagonal
/// blocks. `lower[i][j]` holds block `(i, j)` for `j < i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTriangularSystem {
    diagonal: Vec<DMatrix<f64>>,
    lower: Vec<Vec<DMatrix<f64>>>,
    targets: Vec<DVector<f64>>,
}

impl BlockTriangularSystem {
    pub fn new(diagonal: Vec<DMatrix<f64>>, lower: Vec<Vec<DMatrix<f64>>>, targets: Vec<DVector<f64>>) -> Result<Self> {
        let n = diagonal.len();
        if lower.len() != n || targets.len() != n {
            return Err(Error::DimensionMismatch {
                context: "block counts",
                expected: n,
                got: if lower.len() != n { lower.len() } else { targets.len() },
            });
        }
        for (i, d) in diagonal.iter().enumerate() {
            if !d.is_square() || d.nrows() == 0 {
                return Err(Error::usage(format!("diagonal block {i} is not a non-empty square matrix")));
            }
            if targets[i].len() != d.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "block target length",
                    expected: d.nrows(),
                    got: targets[i].len(),
                });
            }
            if lower[i].len() != i {
                return Err(Error::DimensionMismatch {
                    context: "sub-diagonal blocks per block row",
                    expected: i,
                    got: lower[i].len(),
                });
            }
            for (j, u) in lower[i].iter().enumerate() {
                if u.shape() != (d.nrows(), diagonal[j].ncols()) {
                    return Err(Error::usage(format!("block ({i},{j}) has shape {:?}", u.shape())));
                }
            }
        }
        Ok(Self { diagonal, lower, targets })
    }

    /// Splits a full matrix by square block sizes. Blocks above the diagonal
    /// must be exactly zero.
    pub fn from_matrix(phi: &DMatrix<f64>, block_sizes: &[usize], y: &DVector<f64>) -> Result<Self> {
        let total: usize = block_sizes.iter().sum();
        if !phi.is_square() || phi.nrows() != total {
            return Err(Error::DimensionMismatch { context: "block sizes vs matrix", expected: total, got: phi.nrows() });
        }
        if y.len() != total {
            return Err(Error::DimensionMismatch { context: "target length", expected: total, got: y.len() });
        }
        let offsets: Vec<usize> = block_sizes
            .iter()
            .scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let block = |i: usize, j: usize| phi.view((offsets[i], offsets[j]), (block_sizes[i], block_sizes[j])).into_owned();
        let n = block_sizes.len();
        for i in 0..n {
            for j in i + 1..n {
                if block(i, j).iter().any(|&v| v != 0.0) {
                    return Err(Error::usage(format!("block ({i},{j}) above the diagonal is not zero")));
                }
            }
        }
        Self::new(
            (0..n).map(|i| block(i, i)).collect(),
            (0..n).map(|i| (0..i).map(|j| block(i, j)).collect()).collect(),
            (0..n).map(|i| y.rows(offsets[i], block_sizes[i]).into_owned()).collect(),
        )
    }

    pub fn block_count(&self) -> usize {
        self.diagonal.len()
    }

    pub fn assemble(&self) -> (DMatrix<f64>, DVector<f64>) {
        let sizes: Vec<usize> = self.diagonal.iter().map(|d| d.nrows()).collect();
        let total: usize = sizes.iter().sum();
        let mut phi = DMatrix::zeros(total, total);
        let mut y = DVector::zeros(total);
        let mut row = 0;
        for i in 0..sizes.len() {
            let mut col = 0;
            for (j, width) in sizes.iter().enumerate().take(i + 1) {
                let b = if j == i { &self.diagonal[i] } else { &self.lower[i][j] };
                phi.view_mut((row, col), b.shape()).copy_from(b);
                col += width;
            }
            y.rows_mut(row, sizes[i]).copy_from(&self.targets[i]);
            row += sizes[i];
        }
        (phi, y)
    }

    /// Forward substitution block by block. Block indices in errors are
    /// 0-based.
    pub fn solve(&self, rank_tol: f64) -> Result<Vec<DVector<f64>>> {
        let mut alphas: Vec<DVector<f64>> = Vec::with_capacity(self.block_count());
        for (i, p) in self.diagonal.iter().enumerate() {
            let mut rhs = self.targets[i].clone();
            for (j, u) in self.lower[i].iter().enumerate() {
                rhs -= u * &alphas[j];
            }
            let alpha = solve_square(p, &rhs, rank_tol).ok_or(Error::SingularBlock { block: i })?;
            alphas.push(alpha);
        }
        Ok(alphas)
    }
}

/// Binomial coefficient `C(m, c)`, the number of square column selections.
pub fn count_combos(m: usize, c: usize) -> Result<u128> {
    if m < c {
        return Err(Error::usage(format!("cannot choose {c} columns out of {m}")));
    }
    let k = c.min(m - c) as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (m - i) / (i + 1) stays integral at every step.
        acc = acc
            .checked_mul(m as u128 - i)
            .ok_or_else(|| Error::Budget(format!("C({m}, {c}) overflows u128")))?
            / (i + 1);
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Enumeration {
    Lexicographic,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverparamOptions {
    /// Values of unchosen coefficients; missing entries are `0`.
    pub free_values: BTreeMap<usize, f64>,
    pub enumeration: Enumeration,
    pub max_combos: usize,
    pub stop_at_first: bool,
    pub rank_tol: f64,
}

impl Default for OverparamOptions {
    fn default() -> Self {
        Self {
            free_values: BTreeMap::new(),
            enumeration: Enumeration::Lexicographic,
            max_combos: DEFAULT_MAX_COMBOS,
            stop_at_first: false,
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Solved,
    NoNonsingularCombination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverparamSolution {
    pub chosen_columns: Vec<usize>,
    pub alpha: Vec<f64>,
    /// `||Psi alpha - y||_inf`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverparamReport {
    pub status: SolveStatus,
    pub combos_tried: usize,
    pub solutions: Vec<OverparamSolution>,
}

/// Enumerates `C`-column subsets of `psi` (`C` = row count). Each subset with
/// a nonsingular square block is solved against `y` minus the contribution
/// of the free columns.
pub fn solve_overparam(psi: &DMatrix<f64>, y: &DVector<f64>, opts: &OverparamOptions) -> Result<OverparamReport> {
    let (c, m) = psi.shape();
    if y.len() != c {
        return Err(Error::DimensionMismatch { context: "target length", expected: c, got: y.len() });
    }
    if m < c {
        return Err(Error::usage(format!("overparameterized solve needs at least {c} columns, got {m}")));
    }
    if let Some((&bad, _)) = opts.free_values.iter().find(|(&k, _)| k >= m) {
        return Err(Error::usage(format!("free value given for column {bad}, matrix has {m}")));
    }
    let combos = enumerate_combos(m, c, opts.enumeration, opts.max_combos);
    let attempt = |cols: &Vec<usize>| solve_combo(psi, y, cols, &opts.free_values, opts.rank_tol);

    let (solutions, tried) = if opts.stop_at_first {
        let mut tried = 0;
        let mut found = Vec::new();
        for cols in &combos {
            tried += 1;
            if let Some(s) = attempt(cols) {
                found.push(s);
                break;
            }
        }
        (found, tried)
    } else {
        let found: Vec<OverparamSolution> = combos.par_iter().filter_map(attempt).collect();
        (found, combos.len())
    };
    let status = if solutions.is_empty() { SolveStatus::NoNonsingularCombination } else { SolveStatus::Solved };
    Ok(OverparamReport { status, combos_tried: tried, solutions })
}

fn solve_combo(
    psi: &DMatrix<f64>,
    y: &DVector<f64>,
    cols: &[usize],
    free_values: &BTreeMap<usize, f64>,
    rank_tol: f64,
) -> Option<OverparamSolution> {
    let m = psi.ncols();
    let mut alpha = DVector::from_fn(m, |r, _| free_values.get(&r).copied().unwrap_or(0.0));
    for &k in cols {
        alpha[k] = 0.0;
    }
    let reduced_y = y - psi * &alpha;
    let square = psi.select_columns(cols);
    let chosen = solve_square(&square, &reduced_y, rank_tol)?;
    for (i, &k) in cols.iter().enumerate() {
        alpha[k] = chosen[i];
    }
    let residual = inf_norm(&(psi * &alpha - y));
    (residual < SOLUTION_TOL).then(|| OverparamSolution {
        chosen_columns: cols.to_vec(),
        alpha: alpha.iter().copied().collect(),
        residual,
    })
}

/// Up to `max` distinct `c`-subsets of `0..m`, sorted within each subset.
fn enumerate_combos(m: usize, c: usize, how: Enumeration, max: usize) -> Vec<Vec<usize>> {
    match how {
        Enumeration::Lexicographic => LexCombos::new(m, c).take(max).collect(),
        Enumeration::Random { seed } => {
            let total = count_combos(m, c).map(|t| t.min(max as u128) as usize).unwrap_or(max);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(total);
            let mut attempts = 0usize;
            while out.len() < total && attempts < total.saturating_mul(50).max(1000) {
                attempts += 1;
                let mut pick = rand::seq::index::sample(&mut rng, m, c).into_vec();
                pick.sort_unstable();
                if seen.insert(pick.clone()) {
                    out.push(pick);
                }
            }
            out
        }
    }
}

/// `c`-subsets of `0..m` in lexicographic order.
struct LexCombos {
    m: usize,
    current: Option<Vec<usize>>,
}

impl LexCombos {
    fn new(m: usize, c: usize) -> Self {
        Self { m, current: (c <= m).then(|| (0..c).collect()) }
    }
}

impl Iterator for LexCombos {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.take()?;
        let c = out.len();
        let mut next = out.clone();
        if let Some(i) = (0..c).rev().find(|&i| next[i] < self.m - c + i) {
            next[i] += 1;
            for j in i + 1..c {
                next[j] = next[j - 1] + 1;
            }
            self.current = Some(next);
        }
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha: Vec<f64>,
    /// `||Psi alpha - y||_2`.
    pub residual: f64,
}

/// Minimum-norm least-squares output weights.
pub fn fit_output_layer(psi: &DMatrix<f64>, y: &DVector<f64>) -> Result<FitResult> {
    if y.len() != psi.nrows() {
        return Err(Error::DimensionMismatch { context: "target length", expected: psi.nrows(), got: y.len() });
    }
    let alpha = lstsq_min_norm(psi, &DMatrix::from_column_slice(y.len(), 1, y.as_slice()), DEFAULT_RANK_TOL).column(0).into_owned();
    let residual = (psi * &alpha - y).norm();
    Ok(FitResult { alpha: alpha.iter().copied().collect(), residual })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiFitResult {
    /// One coefficient vector per target column.
    pub alphas: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

/// Least-squares fit of every column of `targets` with one factorization.
pub fn solve_multi_output(psi: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<MultiFitResult> {
    if targets.nrows() != psi.nrows() {
        return Err(Error::DimensionMismatch { context: "target rows", expected: psi.nrows(), got: targets.nrows() });
    }
    let alpha = lstsq_min_norm(psi, targets, DEFAULT_RANK_TOL);
    let fitted = psi * &alpha;
    Ok(MultiFitResult {
        alphas: alpha.column_iter().map(|c| c.iter().copied().collect()).collect(),
        residuals: (0..targets.ncols()).map(|k| (fitted.column(k) - targets.column(k)).norm()).collect(),
    })
}

/// A `k`-flat `x0 + sum t_j lambda_j` in `(x, y)` space of dimension `n + 1`
/// and the linear-output matrix mapping output weights to hyperplane
/// coefficients `(w', b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowDimConstraint {
    pub x0: Vec<f64>,
    pub lambdas: Vec<Vec<f64>>,
    /// `(n + 1) x nu` row-major, rows indexed by `(w'_1, .., w'_n, b)`.
    pub w_out: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LowDimSolution {
    Feasible {
        alpha: Vec<f64>,
        /// Coefficients `(w', b)` realised by `alpha`.
        coefficients: Vec<f64>,
        /// `||A w - b||_inf` with `w = (w', -1)`.
        residual: f64,
    },
    Infeasible { rank: usize, augmented_rank: usize },
}

/// Output weights whose hyperplane `y = w'.x + b` contains the flat. The
/// last coordinate of every point is the output value; the hyperplane
/// normal is `w = (w', -1)`.
pub fn solve_lowdim(c: &LowDimConstraint, rank_tol: f64) -> Result<LowDimSolution> {
    let dim = c.x0.len();
    if dim < 2 {
        return Err(Error::usage("flat must live in a space of dimension n + 1 >= 2"));
    }
    let n = dim - 1;
    let k = c.lambdas.len();
    if k >= n {
        return Err(Error::usage(format!("flat dimension {k} must be below the input dimension {n}")));
    }
    if let Some(l) = c.lambdas.iter().find(|l| l.len() != dim) {
        return Err(Error::DimensionMismatch { context: "direction length", expected: dim, got: l.len() });
    }
    if c.w_out.len() != dim {
        return Err(Error::DimensionMismatch { context: "linear-output matrix rows", expected: dim, got: c.w_out.len() });
    }
    let nu = c.w_out[0].len();
    if let Some(r) = c.w_out.iter().find(|r| r.len() != nu) {
        return Err(Error::DimensionMismatch { context: "linear-output matrix columns", expected: nu, got: r.len() });
    }
    let w_out = from_rows(&c.w_out, nu);
    let directions = DMatrix::from_fn(k, dim, |r, j| c.lambdas[r][j]);
    if k > 0 && rank(&directions, rank_tol) < k {
        return Err(Error::usage("flat directions are linearly dependent"));
    }

    // Constraints on (w', b): lambda_j' . w' = lambda_j[n], x0' . w' + b = x0[n].
    let mut g = DMatrix::zeros(k + 1, dim);
    let mut h = DVector::zeros(k + 1);
    for (r, l) in c.lambdas.iter().enumerate() {
        g.view_mut((r, 0), (1, n)).copy_from_slice(&l[..n]);
        h[r] = l[n];
    }
    g.view_mut((k, 0), (1, n)).copy_from_slice(&c.x0[..n]);
    g[(k, n)] = 1.0;
    h[k] = c.x0[n];

    let gw = &g * &w_out;
    let mut augmented = DMatrix::zeros(k + 1, gw.ncols() + 1);
    augmented.view_mut((0, 0), gw.shape()).copy_from(&gw);
    augmented.set_column(gw.ncols(), &h);
    let (r1, r2) = (rank(&gw, rank_tol), rank(&augmented, rank_tol));
    if r1 != r2 {
        return Ok(LowDimSolution::Infeasible { rank: r1, augmented_rank: r2 });
    }
    let alpha = lstsq_min_norm(&gw, &DMatrix::from_column_slice(k + 1, 1, h.as_slice()), rank_tol).column(0).into_owned();
    let coefficients = &w_out * &alpha;

    let mut a = directions.clone().insert_row(k, 0.0);
    a.row_mut(k).copy_from_slice(&c.x0);
    let mut w = DVector::from_element(dim, -1.0);
    w.rows_mut(0, n).copy_from(&coefficients.rows(0, n));
    let mut b = DVector::zeros(k + 1);
    b[k] = -coefficients[n];
    let residual = inf_norm(&(&a * &w - b));
    Ok(LowDimSolution::Feasible {
        alpha: alpha.iter().copied().collect(),
        coefficients: coefficients.iter().copied().collect(),
        residual,
    })
}
