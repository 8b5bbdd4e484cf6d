//! Networks, datasets, hyperplanes and forward evaluation.
//!
//! A [`Network`] is a chain of fully connected affine layers. Every layer but
//! the last applies a ReLU; the last one is either linear (interpolation
//! networks) or ReLU (the sign-based classifiers in [`crate::construct`]).
//!
//! Activation is decided with a threshold `tau_act`: a unit is activated iff
//! its pre-activation is strictly greater than `tau_act`. Pre-activations in
//! `[-tau_act, tau_act]` are on the zero side, matching `relu(0) = 0`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default activation threshold.
pub const DEFAULT_TAU_ACT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    /// `out_dim x in_dim`.
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
    pub activation: Activation,
}

impl AffineLayer {
    pub fn new(weights: DMatrix<f64>, biases: DVector<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != biases.len() {
            return Err(Error::DimensionMismatch {
                context: "layer biases",
                expected: weights.nrows(),
                got: biases.len(),
            });
        }
        if weights.nrows() == 0 {
            return Err(Error::InvalidNetwork("layer with zero units".into()));
        }
        Ok(Self { weights, biases, activation })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn pre_activation(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weights * x + &self.biases
    }

    /// Hyperplane of unit `unit` in this layer's input space.
    pub fn unit_hyperplane(&self, unit: usize) -> Result<Hyperplane> {
        Hyperplane::new(self.weights.row(unit).transpose(), self.biases[unit])
    }
}

/// Feedforward network. The layer list always contains the output layer as
/// its last element, so a network has `layers.len() - 1` hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkJson", into = "NetworkJson")]
pub struct Network {
    input_dim: usize,
    layers: Vec<AffineLayer>,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<AffineLayer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidNetwork("input_dim must be positive".into()));
        }
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        let mut width = input_dim;
        for (k, layer) in layers.iter().enumerate() {
            if layer.in_dim() != width {
                return Err(Error::InvalidNetwork(format!(
                    "layer {k} expects input width {} but receives {width}",
                    layer.in_dim()
                )));
            }
            if k + 1 < layers.len() && layer.activation != Activation::Relu {
                return Err(Error::InvalidNetwork(format!(
                    "hidden layer {k} must use relu activation"
                )));
            }
            width = layer.out_dim();
        }
        Ok(Self { input_dim, layers })
    }

    /// Random network with the given hidden widths and output width.
    /// Parameters are uniform in `[-1, 1] / sqrt(fan_in)`.
    pub fn random<R: Rng>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        let widths = hidden.iter().copied().chain(std::iter::once(output_dim));
        let count = hidden.len() + 1;
        for (k, width) in widths.enumerate() {
            let scale = 1.0 / (fan_in as f64).sqrt();
            let w = DMatrix::from_fn(width, fan_in, |_, _| rng.gen_range(-1.0..=1.0) * scale);
            let b = DVector::from_fn(width, |_, _| rng.gen_range(-1.0..=1.0) * scale);
            let act = if k + 1 == count { output_activation } else { Activation::Relu };
            layers.push(AffineLayer::new(w, b, act)?);
            fan_in = width;
        }
        Self::new(input_dim, layers)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(AffineLayer::out_dim).unwrap_or(0)
    }

    pub fn layers(&self) -> &[AffineLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [AffineLayer] {
        &mut self.layers
    }

    pub fn hidden_count(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.hidden_count()].iter().map(AffineLayer::out_dim).collect()
    }

    pub fn output_layer(&self) -> &AffineLayer {
        self.layers.last().expect("network has at least one layer")
    }

    /// Plain forward pass: `relu(s) = max(0, s)`.
    pub fn eval(&self, x: &[f64]) -> Result<Trace> {
        self.forward(x, 0.0)
    }

    /// Forward pass where ReLU units with pre-activation `<= tau_act` output
    /// exactly zero. With `tau_act = 0` this is the plain ReLU.
    pub fn forward(&self, x: &[f64], tau_act: f64) -> Result<Trace> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "network input",
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let mut current = DVector::from_column_slice(x);
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let s = layer.pre_activation(&current);
            let a = match layer.activation {
                Activation::Relu => s.map(|v| if v > tau_act { v } else { 0.0 }),
                Activation::Linear => s.clone(),
            };
            pre.push(s);
            post.push(a.clone());
            current = a;
        }
        Ok(Trace { pre, post })
    }

    /// Output vector of [`Network::eval`].
    pub fn output(&self, x: &[f64]) -> Result<DVector<f64>> {
        Ok(self.eval(x)?.output().clone())
    }
}

#[derive(Serialize, Deserialize)]
struct LayerJson {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    activation: Activation,
}

#[derive(Serialize, Deserialize)]
struct NetworkJson {
    input_dim: usize,
    layers: Vec<LayerJson>,
}

impl TryFrom<NetworkJson> for Network {
    type Error = Error;

    fn try_from(raw: NetworkJson) -> Result<Self> {
        let mut layers = Vec::with_capacity(raw.layers.len());
        for (k, l) in raw.layers.into_iter().enumerate() {
            let ncols = l.weights.first().map(Vec::len).unwrap_or(0);
            if l.weights.iter().any(|r| r.len() != ncols) {
                return Err(Error::InvalidNetwork(format!("layers[{k}].weights is ragged")));
            }
            let w = linalg::from_rows(&l.weights, ncols);
            layers.push(AffineLayer::new(w, DVector::from_vec(l.biases), l.activation)?);
        }
        Network::new(raw.input_dim, layers)
    }
}

impl From<Network> for NetworkJson {
    fn from(net: Network) -> Self {
        NetworkJson {
            input_dim: net.input_dim,
            layers: net
                .layers
                .into_iter()
                .map(|l| LayerJson {
                    weights: linalg::to_rows(&l.weights),
                    biases: l.biases.iter().copied().collect(),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

/// Per-layer pre- and post-activations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub pre: Vec<DVector<f64>>,
    pub post: Vec<DVector<f64>>,
}

impl Trace {
    pub fn output(&self) -> &DVector<f64> {
        self.post.last().expect("trace of a non-empty network")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subdomain: Option<usize>,
}

/// Finite dataset of `(x, y)` pairs with optional subdomain labels.
///
/// Programmatic datasets may be empty; the JSON form requires at least one
/// point.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "DatasetJson")]
pub struct Dataset {
    points: Vec<DataPoint>,
}

#[derive(Deserialize)]
struct DatasetJson {
    points: Vec<DataPoint>,
}

impl TryFrom<DatasetJson> for Dataset {
    type Error = Error;

    fn try_from(raw: DatasetJson) -> Result<Self> {
        if raw.points.is_empty() {
            return Err(Error::InvalidDataset("points must not be empty".into()));
        }
        Dataset::new(raw.points)
    }
}

impl Dataset {
    pub fn new(points: Vec<DataPoint>) -> Result<Self> {
        if let Some(first) = points.first() {
            let (n, mu) = (first.x.len(), first.y.len());
            if n == 0 {
                return Err(Error::InvalidDataset("points[0].x is empty".into()));
            }
            let labelled = first.subdomain.is_some();
            for (k, p) in points.iter().enumerate() {
                if p.x.len() != n {
                    return Err(Error::InvalidDataset(format!(
                        "points[{k}].x has length {} (expected {n})",
                        p.x.len()
                    )));
                }
                if p.y.len() != mu {
                    return Err(Error::InvalidDataset(format!(
                        "points[{k}].y has length {} (expected {mu})",
                        p.y.len()
                    )));
                }
                if p.subdomain.is_some() != labelled {
                    return Err(Error::InvalidDataset(format!(
                        "points[{k}].subdomain: either every point has a label or none does"
                    )));
                }
                if p.subdomain == Some(0) {
                    return Err(Error::InvalidDataset(format!(
                        "points[{k}].subdomain: ids start at 1"
                    )));
                }
            }
        }
        Ok(Self { points })
    }

    /// Unlabelled dataset from inputs and targets.
    pub fn from_xy(xs: Vec<Vec<f64>>, ys: Vec<Vec<f64>>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset targets",
                expected: xs.len(),
                got: ys.len(),
            });
        }
        Self::new(
            xs.into_iter()
                .zip(ys)
                .map(|(x, y)| DataPoint { x, y, subdomain: None })
                .collect(),
        )
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.points.first().map(|p| p.x.len())
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.points.first().map(|p| p.y.len())
    }

    pub fn is_labelled(&self) -> bool {
        self.points.first().is_some_and(|p| p.subdomain.is_some())
    }

    /// Point indices per subdomain id, ascending by id.
    pub fn subdomains(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (k, p) in self.points.iter().enumerate() {
            if let Some(id) = p.subdomain {
                map.entry(id).or_default().push(k);
            }
        }
        map
    }

    /// Row partition induced by the subdomain labels, or `None` when the
    /// dataset is unlabelled.
    pub fn row_partition(&self) -> Option<Vec<Vec<usize>>> {
        self.is_labelled()
            .then(|| self.subdomains().into_values().collect())
    }

    /// `C x mu` target matrix.
    pub fn targets(&self) -> DMatrix<f64> {
        let mu = self.output_dim().unwrap_or(0);
        DMatrix::from_fn(self.len(), mu, |r, c| self.points[r].y[c])
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut points = Vec::with_capacity(indices.len());
        for &i in indices {
            points.push(
                self.points
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::usage(format!("point index {i} out of range")))?,
            );
        }
        Dataset::new(points)
    }
}

/// Affine hyperplane `w . x + b = 0`, with `|w| > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HyperplaneJson", into = "HyperplaneJson")]
pub struct Hyperplane {
    w: DVector<f64>,
    b: f64,
}

#[derive(Serialize, Deserialize)]
struct HyperplaneJson {
    w: Vec<f64>,
    b: f64,
}

impl TryFrom<HyperplaneJson> for Hyperplane {
    type Error = Error;

    fn try_from(raw: HyperplaneJson) -> Result<Self> {
        Hyperplane::new(DVector::from_vec(raw.w), raw.b)
    }
}

impl From<Hyperplane> for HyperplaneJson {
    fn from(h: Hyperplane) -> Self {
        HyperplaneJson { w: h.w.iter().copied().collect(), b: h.b }
    }
}

impl Hyperplane {
    pub fn new(w: DVector<f64>, b: f64) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidDataset("hyperplane normal has length 0".into()));
        }
        let norm = w.norm();
        if norm == 0.0 || !norm.is_finite() || !b.is_finite() {
            return Err(Error::DegenerateHyperplane);
        }
        Ok(Self { w, b })
    }

    pub fn from_slice(w: &[f64], b: f64) -> Result<Self> {
        Self::new(DVector::from_column_slice(w), b)
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// `w . x + b`.
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.w.dot(x) + self.b
    }

    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b
    }

    /// `[w; b]`, the coefficient vector acting on `[x; 1]`.
    pub fn lambda(&self) -> DVector<f64> {
        let mut l = self.w.clone().resize_vertically(self.dim() + 1, 0.0);
        l[self.dim()] = self.b;
        l
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.w * c, self.b * c)
    }

    pub fn flipped(&self) -> Self {
        Self { w: -&self.w, b: -self.b }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Zero,
}

/// Plus/zero pattern of a point against an ordered hyperplane set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegionSignature(pub Vec<Side>);

impl RegionSignature {
    pub fn from_values(values: impl IntoIterator<Item = f64>, tau_act: f64) -> Self {
        Self(
            values
                .into_iter()
                .map(|v| if v > tau_act { Side::Plus } else { Side::Zero })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn plus_count(&self) -> usize {
        self.0.iter().filter(|s| **s == Side::Plus).count()
    }
}

pub fn region_signature(hyperplanes: &[Hyperplane], x: &[f64], tau_act: f64) -> Result<RegionSignature> {
    for h in hyperplanes {
        if h.dim() != x.len() {
            return Err(Error::DimensionMismatch {
                context: "region signature",
                expected: h.dim(),
                got: x.len(),
            });
        }
    }
    Ok(RegionSignature::from_values(hyperplanes.iter().map(|h| h.value_at(x)), tau_act))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ZeroRegion {
    Found { witness: Vec<f64> },
    NotFound,
}

impl ZeroRegion {
    pub fn witness(&self) -> Option<&[f64]> {
        match self {
            ZeroRegion::Found { witness } => Some(witness),
            ZeroRegion::NotFound => None,
        }
    }
}

/// Default iteration budget for [`zero_region_exists`].
pub const DEFAULT_ZERO_REGION_BUDGET: usize = 10_000;

/// Searches for a point strictly on the zero side of every hyperplane,
/// i.e. `w_k . x + b_k < -tau` for all `k`.
///
/// First tries the least-squares point with every normalised value equal to
/// `-(1 + max |b|)`, which succeeds whenever the normals are independent.
/// Otherwise runs deterministic subgradient descent on `max_k (w_k . x + b_k)`
/// (rows normalised to unit length) starting from the centroid of the
/// projections of the origin onto the hyperplanes, with step `s0 / sqrt(t + 1)`.
/// `NotFound` only means the budget ran out.
pub fn zero_region_exists(hyperplanes: &[Hyperplane], tau: f64, budget: usize) -> Result<ZeroRegion> {
    let Some(first) = hyperplanes.first() else {
        return Err(Error::usage("zero_region_exists needs at least one hyperplane"));
    };
    let n = first.dim();
    if let Some(h) = hyperplanes.iter().find(|h| h.dim() != n) {
        return Err(Error::DimensionMismatch {
            context: "zero region hyperplanes",
            expected: n,
            got: h.dim(),
        });
    }

    let unit: Vec<(DVector<f64>, f64)> = hyperplanes
        .iter()
        .map(|h| {
            let norm = h.w().norm();
            (h.w() / norm, h.b() / norm)
        })
        .collect();

    let scale = 1.0 + unit.iter().map(|(_, b)| b.abs()).fold(0.0, f64::max);
    let satisfied = |x: &DVector<f64>| hyperplanes.iter().all(|h| h.value(x) < -tau);

    // Independent normals: put every hyperplane at unit depth directly.
    let a = DMatrix::from_fn(unit.len(), n, |r, c| unit[r].0[c]);
    let target = DMatrix::from_fn(unit.len(), 1, |r, _| -unit[r].1 - scale);
    let direct = linalg::lstsq_min_norm(&a, &target, 1e-12).column(0).into_owned();
    if satisfied(&direct) {
        return Ok(ZeroRegion::Found { witness: direct.iter().copied().collect() });
    }

    let mut x = DVector::zeros(n);
    for (w, b) in &unit {
        x -= w * *b;
    }
    x /= unit.len() as f64;

    for t in 0..=budget {
        if satisfied(&x) {
            return Ok(ZeroRegion::Found { witness: x.iter().copied().collect() });
        }
        let (active, _) = unit
            .iter()
            .enumerate()
            .map(|(k, (w, b))| (k, w.dot(&x) + b))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        let step = scale / ((t + 1) as f64).sqrt();
        x -= &unit[active].0 * step;
    }
    Ok(ZeroRegion::NotFound)
}
