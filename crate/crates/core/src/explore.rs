//! Sampling of alternative decompositions of a dataset into subsets that are
//! each fitted by one affine function, induced by random hyperplane cuts of
//! the input space.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::DEFAULT_RANK_TOL;
use crate::linalg::lstsq_min_norm;
use crate::model::{region_signature, Dataset, Hyperplane, RegionSignature};

/// Fit residuals below this are reported as exactly zero.
pub const ZERO_RESIDUAL: f64 = 1e-10;
/// Cut offsets are drawn from the data's bounding box grown by this
/// fraction of its extent on every side.
pub const BOX_MARGIN: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetFit {
    /// Per output: input weights followed by the bias.
    pub coefficients: Vec<Vec<f64>>,
    /// Euclidean norm of the fit error over the subset.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub cuts: Vec<Hyperplane>,
    /// Point indices per cell, cells in order of first point.
    pub subsets: Vec<Vec<usize>>,
    pub fits: Vec<SubsetFit>,
    pub total_residual: f64,
}

impl Decomposition {
    pub fn is_exact(&self) -> bool {
        self.total_residual == 0.0
    }
}

/// Groups point indices by their signature against `cuts`.
pub fn partition_by_cuts(data: &Dataset, cuts: &[Hyperplane], tau_act: f64) -> Result<Vec<Vec<usize>>> {
    let mut cells: Vec<(RegionSignature, Vec<usize>)> = Vec::new();
    for (i, p) in data.points().iter().enumerate() {
        let sig = region_signature(cuts, &p.x, tau_act)?;
        match cells.iter_mut().find(|(s, _)| *s == sig) {
            Some((_, members)) => members.push(i),
            None => cells.push((sig, vec![i])),
        }
    }
    Ok(cells.into_iter().map(|(_, m)| m).collect())
}

/// Least-squares affine fit `y = W x + b` of the points in `subset`.
pub fn fit_subset(data: &Dataset, subset: &[usize]) -> SubsetFit {
    let n = data.input_dim().unwrap_or(0);
    let q = data.output_dim().unwrap_or(0);
    let pts = data.points();
    let a = DMatrix::from_fn(subset.len(), n + 1, |r, c| if c < n { pts[subset[r]].x[c] } else { 1.0 });
    let y = DMatrix::from_fn(subset.len(), q, |r, c| pts[subset[r]].y[c]);
    let coef = lstsq_min_norm(&a, &y, DEFAULT_RANK_TOL);
    let mut residual = (&a * &coef - &y).norm();
    if residual < ZERO_RESIDUAL {
        residual = 0.0;
    }
    SubsetFit { coefficients: (0..q).map(|c| coef.column(c).iter().copied().collect()).collect(), residual }
}

fn random_cut<R: Rng>(lo: &[f64], hi: &[f64], rng: &mut R) -> Hyperplane {
    let n = lo.len();
    loop {
        let w = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = w.norm();
        if norm < 1e-12 {
            continue;
        }
        let w = w / norm;
        let p = DVector::from_fn(n, |i, _| if hi[i] > lo[i] { rng.gen_range(lo[i]..hi[i]) } else { lo[i] });
        return Hyperplane::new(w.clone(), -w.dot(&p)).expect("unit normal");
    }
}

/// Draws `samples` arrangements of `n_cuts` random hyperplanes, fits every
/// cell, drops repeated partitions (first occurrence wins) and sorts by
/// total residual, then by subset count.
pub fn explore_decompositions(data: &Dataset, n_cuts: usize, samples: usize, seed: u64) -> Result<Vec<Decomposition>> {
    if samples == 0 {
        return Err(Error::usage("samples must be at least 1"));
    }
    let n = data.input_dim().ok_or_else(|| Error::InvalidDataset("dataset is empty".into()))?;
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for p in data.points() {
        for i in 0..n {
            lo[i] = lo[i].min(p.x[i]);
            hi[i] = hi[i].max(p.x[i]);
        }
    }
    for i in 0..n {
        let pad = if hi[i] > lo[i] { BOX_MARGIN * (hi[i] - lo[i]) } else { 1.0 };
        lo[i] -= pad;
        hi[i] += pad;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arrangements: Vec<Vec<Hyperplane>> =
        (0..samples).map(|_| (0..n_cuts).map(|_| random_cut(&lo, &hi, &mut rng)).collect()).collect();
    let evaluated: Vec<Decomposition> = arrangements
        .into_par_iter()
        .map(|cuts| {
            let subsets = partition_by_cuts(data, &cuts, 0.0)?;
            let fits: Vec<SubsetFit> = subsets.iter().map(|s| fit_subset(data, s)).collect();
            let total_residual = fits.iter().map(|f| f.residual).sum();
            Ok(Decomposition { cuts, subsets, fits, total_residual })
        })
        .collect::<Result<_>>()?;

    let mut seen = HashSet::new();
    let mut out: Vec<Decomposition> = evaluated
        .into_iter()
        .filter(|d| {
            let mut key = d.subsets.clone();
            key.sort();
            seen.insert(key)
        })
        .collect();
    out.sort_by(|a, b| a.total_residual.total_cmp(&b.total_residual).then(a.subsets.len().cmp(&b.subsets.len())));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data(xs: &[f64], ys: &[f64]) -> Dataset {
        Dataset::from_xy(xs.iter().map(|&x| vec![x]).collect(), ys.iter().map(|&y| vec![y]).collect()).unwrap()
    }

    #[test]
    fn colinear_points_split_in_several_ways() {
        let data = line_data(&[0.0, 1.0, 2.0], &[0.0, 2.0, 4.0]);
        let d = explore_decompositions(&data, 1, 40, 1).unwrap();
        assert!(d.len() >= 2);
        assert!(d.iter().any(|d| d.subsets.len() == 1));
        assert!(d.iter().any(|d| d.subsets.len() == 2));
        assert!(d.iter().all(Decomposition::is_exact));
        // Sorted by subset count among equal residuals.
        assert_eq!(d[0].subsets, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn single_point() {
        let d = explore_decompositions(&line_data(&[3.0], &[1.0]), 2, 10, 0).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].subsets, vec![vec![0]]);
        assert_eq!(d[0].total_residual, 0.0);
    }

    #[test]
    fn two_lines() {
        let data = line_data(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.0, 1.0, 0.0]);
        let d = explore_decompositions(&data, 1, 30, 5).unwrap();
        assert!(d.len() >= 2);
        assert!(d[0].is_exact());
        assert_eq!(d[0].subsets, vec![vec![0, 1], vec![2, 3]]);
        let f = &d[0].fits;
        assert!((f[0].coefficients[0][0] - 1.0).abs() < 1e-12 && f[0].coefficients[0][1].abs() < 1e-12);
        assert!((f[1].coefficients[0][0] + 1.0).abs() < 1e-12 && (f[1].coefficients[0][1] - 3.0).abs() < 1e-12);
        assert!(d.iter().skip_while(|d| d.is_exact()).all(|d| !d.is_exact()));
    }

    #[test]
    fn zero_samples_rejected() {
        assert!(explore_decompositions(&line_data(&[0.0], &[0.0]), 1, 0, 0).is_err());
    }

    #[test]
    fn small_subsets_fit_exactly() {
        let data = Dataset::from_xy(
            vec![vec![0.0, 0.0], vec![1.0, 0.3], vec![-0.4, 2.0]],
            vec![vec![5.0], vec![-1.0], vec![0.5]],
        )
        .unwrap();
        assert_eq!(fit_subset(&data, &[0, 1, 2]).residual, 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn decompositions_are_reproducible(
                xs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -3.0f64..3.0), 1..9),
                cuts in 0usize..4,
                seed in any::<u64>(),
            ) {
                let data = Dataset::from_xy(
                    xs.iter().map(|&(a, b, _)| vec![a, b]).collect(),
                    xs.iter().map(|&(_, _, y)| vec![y]).collect(),
                ).unwrap();
                let first = explore_decompositions(&data, cuts, 6, seed).unwrap();
                prop_assert_eq!(&first, &explore_decompositions(&data, cuts, 6, seed).unwrap());
                let mut keys = HashSet::new();
                for d in &first {
                    prop_assert_eq!(&partition_by_cuts(&data, &d.cuts, 0.0).unwrap(), &d.subsets);
                    let mut all: Vec<usize> = d.subsets.iter().flatten().copied().collect();
                    all.sort_unstable();
                    prop_assert_eq!(all, (0..data.len()).collect::<Vec<_>>());
                    for (s, f) in d.subsets.iter().zip(&d.fits) {
                        let a = DMatrix::from_fn(s.len(), 3, |r, c| if c < 2 { data.points()[s[r]].x[c] } else { 1.0 });
                        if crate::linalg::rank(&a, 1e-6) == s.len() {
                            prop_assert!(f.residual < 1e-6);
                        }
                    }
                    let mut key = d.subsets.clone();
                    key.sort();
                    prop_assert!(keys.insert(key));
                }
                prop_assert!(first.windows(2).all(|w| w[0].total_residual <= w[1].total_residual));
            }
        }
    }
}
