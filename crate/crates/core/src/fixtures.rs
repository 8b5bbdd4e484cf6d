//! Small reference instances used by tests, benches and the CLI docs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::construct::{default_epsilons, perturbed_rows};
use crate::error::{Error, Result};
use crate::model::{Activation, AffineLayer, DataPoint, Dataset, Hyperplane, Network};

/// `1 -> 2 -> 1` network computing `|x|` with hidden units `relu(x)` and
/// `relu(-x)`.
pub fn abs_net() -> Network {
    let hidden = AffineLayer::new(
        DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
        DVector::zeros(2),
        Activation::Relu,
    )
    .expect("valid layer");
    let out = AffineLayer::new(
        DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        DVector::zeros(1),
        Activation::Linear,
    )
    .expect("valid layer");
    Network::new(1, vec![hidden, out]).expect("valid network")
}

/// Points `-1, 0, 2` with targets `|x|`.
pub fn abs_data() -> Dataset {
    Dataset::from_xy(
        vec![vec![-1.0], vec![0.0], vec![2.0]],
        vec![vec![1.0], vec![0.0], vec![2.0]],
    )
    .expect("valid dataset")
}

/// Faces of the triangle with vertices `(0,0), (1,0), (0,1)`, oriented inward.
pub fn triangle_faces() -> Vec<Hyperplane> {
    vec![
        Hyperplane::from_slice(&[1.0, 0.0], 0.0).unwrap(),
        Hyperplane::from_slice(&[0.0, 1.0], 0.0).unwrap(),
        Hyperplane::from_slice(&[-1.0, -1.0], 1.0).unwrap(),
    ]
}

/// Two `*`-points inside the triangle followed by three `o`-points outside.
/// Targets are `1` for `*` and `0` for `o`.
pub fn triangle_data() -> Dataset {
    labelled_points(
        &[[0.2, 0.2], [0.1, 0.6]],
        &[[1.0, 1.0], [-0.5, 0.5], [0.5, -0.5]],
    )
}

/// Faces of the quadrilateral `(0,0), (2,0), (1.5,1), (0,1)`, oriented inward.
pub fn quadrilateral_faces() -> Vec<Hyperplane> {
    vec![
        Hyperplane::from_slice(&[0.0, 1.0], 0.0).unwrap(),
        Hyperplane::from_slice(&[-2.0, -1.0], 4.0).unwrap(),
        Hyperplane::from_slice(&[0.0, -1.0], 1.0).unwrap(),
        Hyperplane::from_slice(&[1.0, 0.0], 0.0).unwrap(),
    ]
}

pub fn quadrilateral_data() -> Dataset {
    labelled_points(
        &[[0.5, 0.5], [1.5, 0.3], [0.2, 0.9], [1.0, 0.1]],
        &[[-0.5, 0.5], [1.0, -0.5], [2.2, 0.5], [1.0, 1.5], [-1.0, -1.0], [3.0, 3.0]],
    )
}

/// Dataset with `*`-points (target 1, subdomain 1) then `o`-points (target 0,
/// subdomain 2).
pub fn labelled_points(stars: &[[f64; 2]], os: &[[f64; 2]]) -> Dataset {
    let star = stars.iter().map(|p| DataPoint { x: p.to_vec(), y: vec![1.0], subdomain: Some(1) });
    let o = os.iter().map(|p| DataPoint { x: p.to_vec(), y: vec![0.0], subdomain: Some(2) });
    Dataset::new(star.chain(o).collect()).expect("valid dataset")
}

/// One-hidden-layer network and dataset whose interpolation matrix is block
/// lower-triangular with positive, nonsingular diagonal blocks.
#[derive(Debug, Clone)]
pub struct ArrangementInstance {
    pub network: Network,
    pub data: Dataset,
    /// Rows and columns per block, `n + 1` each.
    pub block_sizes: Vec<usize>,
}

/// Distance between consecutive clusters along the sorting direction.
const CLUSTER_SPACING: f64 = 3.0;
const CLUSTER_RADIUS: f64 = 0.5;
const SIDE_MARGIN: f64 = 1e-3;

/// Builds `blocks` clusters of `n + 1` affinely independent points, sorted
/// along a random direction `u`, for `n` in `{1, 2}`. Unit group `j` is one
/// hyperplane with normal `u` separating clusters `< j` from clusters
/// `>= j`, replicated `n + 1` times by perturbing its coefficient vector
/// `(w, b)` until the split of the data is unchanged. Cluster `i` is
/// subdomain `i + 1`; targets are uniform in `[-1, 1]`.
pub fn distinguishable_arrangement<R: Rng>(n: usize, blocks: usize, rng: &mut R) -> Result<ArrangementInstance> {
    if !(1..=2).contains(&n) {
        return Err(Error::usage("arrangements are generated for 1D and 2D inputs only"));
    }
    if blocks == 0 {
        return Err(Error::usage("need at least one block"));
    }
    let u: DVector<f64> = if n == 1 {
        DVector::from_element(1, if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
    } else {
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        DVector::from_column_slice(&[a.cos(), a.sin()])
    };
    let normal = if n == 2 { DVector::from_column_slice(&[-u[1], u[0]]) } else { DVector::zeros(1) };

    let mut points = Vec::with_capacity(blocks * (n + 1));
    let mut clusters: Vec<Vec<DVector<f64>>> = Vec::with_capacity(blocks);
    for i in 0..blocks {
        let center = &u * (i as f64 * CLUSTER_SPACING) + &normal * rng.gen_range(-1.0..1.0);
        let cluster: Vec<DVector<f64>> = if n == 1 {
            let r = rng.gen_range(0.2..CLUSTER_RADIUS);
            vec![&center - &u * r, &center + &u * r]
        } else {
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            (0..3)
                .map(|k| {
                    let a = phase + k as f64 * std::f64::consts::TAU / 3.0 + rng.gen_range(-0.3..0.3);
                    let r = rng.gen_range(0.25..CLUSTER_RADIUS);
                    &center + (&u * a.cos() + &normal * a.sin()) * r
                })
                .collect()
        };
        for x in &cluster {
            points.push(DataPoint {
                x: x.iter().copied().collect(),
                y: vec![rng.gen_range(-1.0..1.0)],
                subdomain: Some(i + 1),
            });
        }
        clusters.push(cluster);
    }

    let mut rows: Vec<DVector<f64>> = Vec::with_capacity(blocks * (n + 1));
    for j in 0..blocks {
        let offset = (j as f64 - 0.5) * CLUSTER_SPACING;
        let base = Hyperplane::new(u.clone(), -offset)?.lambda();
        let mut eps = default_epsilons(n + 1);
        let group = loop {
            let (m, _) = perturbed_rows(&base, &eps);
            let keeps_split = clusters.iter().enumerate().all(|(i, cluster)| {
                cluster.iter().all(|x| {
                    let xh = x.clone().insert_row(n, 1.0);
                    (&m * xh).iter().all(|&v| if i >= j { v > SIDE_MARGIN } else { v < -SIDE_MARGIN })
                })
            });
            if keeps_split {
                break m;
            }
            if eps[0] < 1e-12 {
                return Err(Error::Construction("replicas cannot keep the cluster split".into()));
            }
            eps.iter_mut().for_each(|e| *e *= 0.5);
        };
        rows.extend(group.row_iter().map(|r| r.transpose()));
    }

    let m = rows.len();
    let weights = DMatrix::from_fn(m, n, |r, c| rows[r][c]);
    let biases = DVector::from_fn(m, |r, _| rows[r][n]);
    let hidden = AffineLayer::new(weights, biases, Activation::Relu)?;
    let out = AffineLayer::new(DMatrix::zeros(1, m), DVector::zeros(1), Activation::Linear)?;
    Ok(ArrangementInstance {
        network: Network::new(n, vec![hidden, out])?,
        data: Dataset::new(points)?,
        block_sizes: vec![n + 1; blocks],
    })
}
