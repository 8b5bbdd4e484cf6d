//! Activation routes, collapse sets, layerwise sparsity, network
//! decomposition and the disentanglement check.
//!
//! Layers are 0-based hidden-layer indices. A route keeps, for every hidden
//! layer, the units activated by at least one point of its source subset.
//! The route subnetwork is the network with every off-route unit forced to
//! zero. On the points of the source subset it coincides with the full
//! network; collapse sets and trajectories are computed in it.

use std::collections::{BTreeSet, HashMap};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{build_interp_matrix, sparsity, ColMeta, InterpMatrix, RowMeta};
use crate::model::{Activation, Dataset, Network, RegionSignature};

/// Perceptron epoch cap used for the `separable_but_entangled` signal.
pub const PERCEPTRON_EPOCHS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    /// Activated unit indices per hidden layer, sorted.
    pub layers: Vec<Vec<usize>>,
    /// Point indices the route was traced on.
    pub source: Vec<usize>,
}

impl Route {
    pub fn contains(&self, layer: usize, unit: usize) -> bool {
        self.layers[layer].binary_search(&unit).is_ok()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(Vec::len).collect()
    }
}

fn check_indices(indices: &[usize], len: usize) -> Result<()> {
    match indices.iter().find(|&&i| i >= len) {
        Some(&i) => Err(Error::usage(format!("point index {i} out of range for {len} points"))),
        None => Ok(()),
    }
}

/// Union of the hidden units with post-activation `> 0` over `subset`.
pub fn trace_route(net: &Network, data: &Dataset, subset: &[usize], tau_act: f64) -> Result<Route> {
    if subset.is_empty() {
        return Err(Error::usage("route of an empty subset"));
    }
    check_indices(subset, data.len())?;
    let hidden = net.hidden_count();
    let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); hidden];
    for &i in subset {
        let trace = net.forward(&data.points()[i].x, tau_act)?;
        for (layer, set) in sets.iter_mut().enumerate() {
            set.extend(trace.post[layer].iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(u, _)| u));
        }
    }
    let mut source = subset.to_vec();
    source.sort_unstable();
    source.dedup();
    Ok(Route { layers: sets.into_iter().map(|s| s.into_iter().collect()).collect(), source })
}

/// Route of every point carrying subdomain label `id`.
pub fn trace_subdomain_route(net: &Network, data: &Dataset, id: usize, tau_act: f64) -> Result<Route> {
    let members = data
        .subdomains()
        .remove(&id)
        .ok_or_else(|| Error::usage(format!("no points with subdomain {id}")))?;
    trace_route(net, data, &members, tau_act)
}

fn check_input(net: &Network, data: &Dataset) -> Result<()> {
    match data.input_dim() {
        Some(n) if n != net.input_dim() => {
            Err(Error::DimensionMismatch { context: "dataset input", expected: net.input_dim(), got: n })
        }
        _ => Ok(()),
    }
}

fn check_route(net: &Network, route: &Route) -> Result<()> {
    let widths = net.hidden_widths();
    if route.layers.len() != widths.len() {
        return Err(Error::DimensionMismatch { context: "route depth", expected: widths.len(), got: route.layers.len() });
    }
    for (units, &w) in route.layers.iter().zip(&widths) {
        if let Some(&u) = units.iter().find(|&&u| u >= w) {
            return Err(Error::usage(format!("route unit {u} exceeds layer width {w}")));
        }
    }
    Ok(())
}

/// Hidden-layer pre- and post-activations of the route subnetwork.
struct MaskedTrace {
    pre: Vec<DVector<f64>>,
    post: Vec<DVector<f64>>,
}

fn masked_forward(net: &Network, route: &Route, x: &[f64], tau_act: f64) -> MaskedTrace {
    let mut current = DVector::from_column_slice(x);
    let hidden = net.hidden_count();
    let mut pre = Vec::with_capacity(hidden);
    let mut post = Vec::with_capacity(hidden);
    for (layer, l) in net.layers()[..hidden].iter().enumerate() {
        let s = l.pre_activation(&current);
        let a = DVector::from_fn(s.len(), |u, _| {
            if route.contains(layer, u) && s[u] > tau_act { s[u] } else { 0.0 }
        });
        pre.push(s);
        post.push(a.clone());
        current = a;
    }
    MaskedTrace { pre, post }
}

fn route_values(v: &DVector<f64>, units: &[usize]) -> Vec<f64> {
    units.iter().map(|&u| v[u]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseSet {
    /// Hidden layer whose route units all vanish on the members.
    pub layer: usize,
    pub members: Vec<usize>,
    /// Route-unit outputs at hidden layers `layer..d`, shared by all members.
    pub trajectory: Vec<Vec<f64>>,
    /// Every member reproduced the trajectory bit for bit.
    pub identical: bool,
    /// Members that belong to the route's source subset.
    pub source_members: Vec<usize>,
    /// Every member activates no off-route unit of the full network, so the
    /// trajectory is also the full network's route-unit output.
    pub full_network_consistent: bool,
    /// The last trajectory vector is zero.
    pub zero_terminal: bool,
    /// The trajectory enters the zero side of every route unit at every
    /// later layer, which forces `zero_terminal`.
    pub later_layers_zero: bool,
}

impl CollapseSet {
    pub fn cardinality(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub route: Route,
    /// One entry per hidden layer, possibly with no members.
    pub sets: Vec<CollapseSet>,
}

/// For each hidden layer `nu`, the points whose route-subnetwork input to
/// layer `nu` deactivates every route unit of that layer, with their common
/// trajectory through the remaining route layers.
pub fn collapse_sets(net: &Network, route: &Route, data: &Dataset, tau_act: f64) -> Result<CollapseReport> {
    check_route(net, route)?;
    check_input(net, data)?;
    check_indices(&route.source, data.len())?;
    let traces: Vec<(MaskedTrace, Vec<DVector<f64>>)> = data
        .points()
        .par_iter()
        .map(|p| {
            let masked = masked_forward(net, route, &p.x, tau_act);
            let full = net.forward(&p.x, tau_act).map(|t| t.post)?;
            Ok((masked, full))
        })
        .collect::<Result<_>>()?;

    let hidden = net.hidden_count();
    let mut sets = Vec::with_capacity(hidden);
    for nu in 0..hidden {
        let units = &route.layers[nu];
        let members: Vec<usize> = (0..data.len())
            .filter(|&i| units.iter().all(|&u| traces[i].0.pre[nu][u] <= tau_act))
            .collect();
        let trajectory_of = |i: usize| -> Vec<Vec<f64>> {
            (nu..hidden).map(|k| route_values(&traces[i].0.post[k], &route.layers[k])).collect()
        };
        let trajectory = members.first().map(|&i| trajectory_of(i)).unwrap_or_default();
        let identical = members.iter().all(|&i| {
            trajectory_of(i).iter().flatten().map(|v| v.to_bits()).eq(trajectory.iter().flatten().map(|v| v.to_bits()))
        });
        let full_network_consistent = members.iter().all(|&i| {
            (0..hidden).all(|k| traces[i].0.post[k].iter().zip(traces[i].1[k].iter()).all(|(a, b)| a.to_bits() == b.to_bits()))
        });
        let zero_terminal = !members.is_empty() && trajectory.last().is_some_and(|v| v.iter().all(|&x| x == 0.0));
        let later_layers_zero = !members.is_empty()
            && members.iter().all(|&i| {
                (nu + 1..hidden).all(|k| route.layers[k].iter().all(|&u| traces[i].0.pre[k][u] <= tau_act))
            });
        let source_members = members.iter().copied().filter(|i| route.source.binary_search(i).is_ok()).collect();
        sets.push(CollapseSet {
            layer: nu,
            members,
            trajectory,
            identical,
            source_members,
            full_network_consistent,
            zero_terminal,
            later_layers_zero,
        });
    }
    Ok(CollapseReport { route: route.clone(), sets })
}

/// Last-hidden-layer outputs of the route subnetwork, one column per route
/// unit of that layer.
pub fn route_matrix(net: &Network, data: &Dataset, route: &Route, tau_act: f64) -> Result<InterpMatrix> {
    check_route(net, route)?;
    check_input(net, data)?;
    let last = net.hidden_count().checked_sub(1).ok_or_else(|| Error::usage("network has no hidden layer"))?;
    let units = &route.layers[last];
    let rows: Vec<Vec<f64>> = data
        .points()
        .par_iter()
        .map(|p| route_values(&masked_forward(net, route, &p.x, tau_act).post[last], units))
        .collect();
    let values = DMatrix::from_fn(rows.len(), units.len(), |r, c| rows[r][c]);
    let row_meta = data.points().iter().enumerate().map(|(i, p)| RowMeta { point: i, subdomain: p.subdomain }).collect();
    let col_meta = units.iter().map(|&u| ColMeta { layer: last, unit: u }).collect();
    InterpMatrix::with_meta(values, row_meta, col_meta, Some(last))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateCount {
    pub layer: usize,
    pub count: usize,
}

/// For every collapse set with at least two members, checks that their rows
/// are bitwise identical and returns the counts. `m` is either the route
/// matrix or a full last-hidden matrix, whose route columns are then used.
pub fn duplicate_rows(m: &DMatrix<f64>, report: &CollapseReport) -> Result<Vec<DuplicateCount>> {
    let units = report.route.layers.last().map(Vec::as_slice).unwrap_or(&[]);
    let restricted = if m.ncols() == units.len() {
        m.clone()
    } else if units.iter().all(|&u| u < m.ncols()) {
        m.select_columns(units)
    } else {
        return Err(Error::DimensionMismatch { context: "route columns", expected: units.len(), got: m.ncols() });
    };
    let mut counts = Vec::new();
    for set in report.sets.iter().filter(|s| s.cardinality() >= 2) {
        if let Some(&i) = set.members.iter().find(|&&i| i >= restricted.nrows()) {
            return Err(Error::usage(format!("collapse member {i} outside the matrix")));
        }
        let first = restricted.row(set.members[0]);
        for &i in &set.members[1..] {
            let row = restricted.row(i);
            if !row.iter().zip(first.iter()).all(|(a, b)| a.to_bits() == b.to_bits()) {
                return Err(Error::InvariantViolation(format!(
                    "rows {} and {i} of collapse set at layer {} differ",
                    set.members[0], set.layer
                )));
            }
        }
        counts.push(DuplicateCount { layer: set.layer, count: set.cardinality() });
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer: usize,
    /// Fraction of zero entries of the layer's activation matrix.
    pub sparsity: f64,
}

/// Sparsity of every hidden layer's activation matrix on `data`, in depth
/// order.
pub fn layerwise_sparsity(net: &Network, data: &Dataset, tau_act: f64) -> Result<Vec<LayerSparsity>> {
    (0..net.hidden_count())
        .map(|layer| {
            let m = build_interp_matrix(net, data, layer, tau_act)?;
            Ok(LayerSparsity { layer, sparsity: sparsity(m.values()) })
        })
        .collect()
}

/// Splits a network with `d >= 2` hidden layers into the first `d - 1`
/// hidden layers and the three-layer tail `(last hidden, output)`.
pub fn decompose_network(net: &Network) -> Result<(Network, Network)> {
    let d = net.hidden_count();
    if d < 2 {
        return Err(Error::usage(format!("decomposition needs at least 2 hidden layers, got {d}")));
    }
    let layers = net.layers();
    let front = Network::new(net.input_dim(), layers[..d - 1].to_vec())?;
    let back = Network::new(layers[d - 1].in_dim(), layers[d - 1..].to_vec())?;
    Ok((front, back))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionGroup {
    pub signature: RegionSignature,
    pub points: Vec<usize>,
}

/// Groups points by the sign pattern of the last hidden layer's
/// pre-activations, in order of first appearance.
pub fn region_partition(net: &Network, data: &Dataset, tau_act: f64) -> Result<Vec<RegionGroup>> {
    let last = net.hidden_count().checked_sub(1).ok_or_else(|| Error::usage("network has no hidden layer"))?;
    let mut groups: Vec<RegionGroup> = Vec::new();
    for (i, p) in data.points().iter().enumerate() {
        let t = net.forward(&p.x, tau_act)?;
        let signature = RegionSignature::from_values(t.pre[last].iter().copied(), tau_act);
        match groups.iter_mut().find(|g| g.signature == signature) {
            Some(g) => g.points.push(i),
            None => groups.push(RegionGroup { signature, points: vec![i] }),
        }
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerInjectivity {
    pub layer: usize,
    pub injective: bool,
    /// Groups of distinct inputs with bitwise identical outputs.
    pub collisions: Vec<Vec<usize>>,
}

/// Per hidden layer, whether distinct data points keep distinct images.
pub fn bijectivity_check(net: &Network, data: &Dataset, tau_act: f64) -> Result<Vec<LayerInjectivity>> {
    let traces = data
        .points()
        .iter()
        .map(|p| net.forward(&p.x, tau_act))
        .collect::<Result<Vec<_>>>()?;
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
    let mut out = Vec::with_capacity(net.hidden_count());
    for layer in 0..net.hidden_count() {
        let mut by_image: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
        let mut order = Vec::new();
        for (i, t) in traces.iter().enumerate() {
            let key = bits(t.post[layer].as_slice());
            by_image.entry(key.clone()).or_insert_with(|| {
                order.push(key.clone());
                Vec::new()
            }).push(i);
        }
        let collisions: Vec<Vec<usize>> = order
            .iter()
            .filter_map(|k| {
                let group = &by_image[k];
                let distinct: BTreeSet<Vec<u64>> = group.iter().map(|&i| bits(&data.points()[i].x)).collect();
                (distinct.len() > 1).then(|| group.clone())
            })
            .collect();
        out.push(LayerInjectivity { layer, injective: collisions.is_empty(), collisions });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum EntanglementReason {
    /// `column` is activated by every listed category.
    SharedColumn { column: usize, categories: Vec<usize> },
    /// Category (index into the category list) has no points or activates
    /// no column.
    EmptyCategory { category: usize },
    /// Point activates no column, so no code-space hyperplane through its
    /// category's columns can reach it.
    InactivePoint { point: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisentangleVerdict {
    pub disentangled: bool,
    /// First reason found when not disentangled.
    pub reason: Option<EntanglementReason>,
    /// Columns activated by each category.
    pub category_columns: Vec<Vec<usize>>,
    /// Columns activated by no category.
    pub unused_columns: Vec<usize>,
    /// Category columns in category order, then unused columns. When
    /// disentangled this makes the matrix block diagonal.
    pub column_permutation: Vec<usize>,
    /// One-vs-rest linear separability of the codes when not disentangled.
    pub separable_but_entangled: Option<bool>,
}

/// Disentanglement of a code matrix whose rows are grouped into categories:
/// per-category activated column sets must be nonempty and pairwise
/// disjoint, and every point must activate some column.
pub fn disentangle_matrix(m: &DMatrix<f64>, categories: &[Vec<usize>], tau_act: f64) -> Result<DisentangleVerdict> {
    for cat in categories {
        check_indices(cat, m.nrows())?;
    }
    let active = |r: usize, c: usize| m[(r, c)] > tau_act;
    let category_columns: Vec<Vec<usize>> = categories
        .iter()
        .map(|rows| (0..m.ncols()).filter(|&c| rows.iter().any(|&r| active(r, c))).collect())
        .collect();
    let mut owners: Vec<Vec<usize>> = vec![Vec::new(); m.ncols()];
    for (k, cols) in category_columns.iter().enumerate() {
        for &c in cols {
            owners[c].push(k);
        }
    }
    let unused_columns: Vec<usize> = (0..m.ncols()).filter(|&c| owners[c].is_empty()).collect();
    let column_permutation: Vec<usize> = category_columns.iter().flatten().copied().chain(unused_columns.iter().copied()).collect();

    let reason = if let Some(c) = (0..m.ncols()).find(|&c| owners[c].len() > 1) {
        Some(EntanglementReason::SharedColumn { column: c, categories: owners[c].clone() })
    } else if let Some(k) = (0..categories.len()).find(|&k| category_columns[k].is_empty()) {
        Some(EntanglementReason::EmptyCategory { category: k })
    } else {
        categories
            .iter()
            .flatten()
            .find(|&&r| !(0..m.ncols()).any(|c| active(r, c)))
            .map(|&point| EntanglementReason::InactivePoint { point })
    };
    let disentangled = reason.is_none();
    let column_permutation = if disentangled {
        column_permutation
    } else {
        // Shared columns appear once, under their first category.
        let mut seen = BTreeSet::new();
        column_permutation.into_iter().filter(|c| seen.insert(*c)).collect()
    };
    let separable_but_entangled = (!disentangled).then(|| one_vs_rest_separable(m, categories));
    Ok(DisentangleVerdict {
        disentangled,
        reason,
        category_columns,
        unused_columns,
        column_permutation,
        separable_but_entangled,
    })
}

/// Disentanglement of the last hidden layer's codes, one category per
/// subdomain label in ascending order.
pub fn disentangle_check(net: &Network, data: &Dataset, tau_act: f64) -> Result<DisentangleVerdict> {
    let categories = data
        .row_partition()
        .ok_or_else(|| Error::InvalidDataset("disentangle check needs subdomain labels".into()))?;
    let last = net.hidden_count().checked_sub(1).ok_or_else(|| Error::usage("network has no hidden layer"))?;
    let m = build_interp_matrix(net, data, last, tau_act)?;
    disentangle_matrix(m.values(), &categories, tau_act)
}

/// Separating hyperplane `(w, b)` in code space for a disentangled category:
/// the sum over its columns minus half the smallest such sum among its points.
pub fn category_separator(m: &DMatrix<f64>, verdict: &DisentangleVerdict, categories: &[Vec<usize>], k: usize) -> Option<(DVector<f64>, f64)> {
    if !verdict.disentangled {
        return None;
    }
    let cols = &verdict.category_columns[k];
    let mut w = DVector::zeros(m.ncols());
    for &c in cols {
        w[c] = 1.0;
    }
    let min = categories[k].iter().map(|&r| m.row(r).transpose().dot(&w)).fold(f64::INFINITY, f64::min);
    Some((w, -0.5 * min))
}

fn one_vs_rest_separable(m: &DMatrix<f64>, categories: &[Vec<usize>]) -> bool {
    (0..categories.len()).all(|k| {
        let mut samples: Vec<(usize, f64)> = Vec::new();
        for (j, rows) in categories.iter().enumerate() {
            let label = if j == k { 1.0 } else { -1.0 };
            samples.extend(rows.iter().map(|&r| (r, label)));
        }
        perceptron_separates(m, &samples)
    })
}

/// Classic perceptron with bias on the rows of `m`; true if an epoch passes
/// without mistakes within the cap.
fn perceptron_separates(m: &DMatrix<f64>, samples: &[(usize, f64)]) -> bool {
    let mut w = DVector::zeros(m.ncols());
    let mut b = 0.0;
    for _ in 0..PERCEPTRON_EPOCHS {
        let mut mistakes = 0;
        for &(r, y) in samples {
            let x = m.row(r).transpose();
            if y * (w.dot(&x) + b) <= 0.0 {
                w += &x * y;
                b += y;
                mistakes += 1;
            }
        }
        if mistakes == 0 {
            return true;
        }
    }
    false
}

/// Whether `net` uses a ReLU output, as the constructed classifiers do.
pub fn has_relu_output(net: &Network) -> bool {
    net.output_layer().activation == Activation::Relu
}
