//! Deep classifiers for points enclosed by a convex polytope.
//!
//! Each hidden layer has `n` units built from one face: the face itself plus
//! `n - 1` perturbed copies through a common anchor `x0` on the face. Points
//! on the zero side of the face collapse onto the image of `x0`, points on
//! the positive side pass through an invertible affine map. The anchor of
//! each layer sits on the zero side of the next face, so collapsed points
//! keep being collapsed until the final unit, which is the last face.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    zero_region_exists, Activation, AffineLayer, Dataset, Hyperplane, Network, DEFAULT_ZERO_REGION_BUDGET,
};

/// Number of times the perturbations are halved before giving up.
pub const MAX_EPS_HALVINGS: usize = 60;

/// Differences below this are reported as agreement by
/// [`verify_affine_transmission`].
pub const TRANSMISSION_TOL: f64 = 1e-9;

/// Intersection of open half-spaces `w_i . x + b_i > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolytopeJson", into = "PolytopeJson")]
pub struct ConvexPolytope {
    faces: Vec<Hyperplane>,
    interior_witness: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolytopeJson {
    faces: Vec<Hyperplane>,
}

impl TryFrom<PolytopeJson> for ConvexPolytope {
    type Error = Error;

    fn try_from(raw: PolytopeJson) -> Result<Self> {
        ConvexPolytope::new(raw.faces)
    }
}

impl From<ConvexPolytope> for PolytopeJson {
    fn from(p: ConvexPolytope) -> Self {
        PolytopeJson { faces: p.faces }
    }
}

impl ConvexPolytope {
    /// Faces oriented inward. Fails if no interior point is found.
    pub fn new(faces: Vec<Hyperplane>) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::usage("polytope needs at least one face"));
        }
        let flipped: Vec<Hyperplane> = faces.iter().map(Hyperplane::flipped).collect();
        let witness = zero_region_exists(&flipped, 0.0, DEFAULT_ZERO_REGION_BUDGET)?;
        let Some(w) = witness.witness() else {
            return Err(Error::usage("polytope interior is empty"));
        };
        Ok(Self { interior_witness: w.to_vec(), faces })
    }

    pub fn faces(&self) -> &[Hyperplane] {
        &self.faces
    }

    pub fn dim(&self) -> usize {
        self.faces[0].dim()
    }

    pub fn interior_witness(&self) -> &[f64] {
        &self.interior_witness
    }

    /// Fewer than `n + 1` faces cannot bound an `n`-polytope.
    pub fn possibly_unbounded(&self) -> bool {
        self.faces.len() < self.dim() + 1
    }

    pub fn contains(&self, x: &[f64], tau_act: f64) -> bool {
        self.faces.iter().all(|f| f.value_at(x) > tau_act)
    }
}

/// Rows `base` and `base + (eps_1^k, .., eps_{n-1}^k)` for `k = 1..n-1`,
/// where the perturbation skips the pivot coordinate (largest `|base_p|`,
/// first on ties). Nonsingular when the `eps_j` are distinct and nonzero.
pub fn perturbed_rows(base: &DVector<f64>, eps: &[f64]) -> (DMatrix<f64>, usize) {
    let n = base.len();
    assert_eq!(eps.len() + 1, n, "need one perturbation per non-pivot coordinate");
    let pivot = (0..n).fold(0, |p, i| if base[i].abs() > base[p].abs() { i } else { p });
    let others: Vec<usize> = (0..n).filter(|&i| i != pivot).collect();
    let mut w = DMatrix::from_fn(n, n, |_, c| base[c]);
    for k in 1..n {
        for (j, &c) in others.iter().enumerate() {
            w[(k, c)] += eps[j].powi(k as i32);
        }
    }
    (w, pivot)
}

/// `0.5 * j / n` for `j = 1..n-1`.
pub fn default_epsilons(n: usize) -> Vec<f64> {
    (1..n).map(|j| 0.5 * j as f64 / n as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollapseLayer {
    pub weights: DMatrix<f64>,
    /// `-(W x0)`, so every unit vanishes at the anchor.
    pub biases: DVector<f64>,
    pub anchor: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Coordinate left unperturbed.
    pub pivot: usize,
}

/// First point whose activation pattern disagrees with the leading face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollapseViolation {
    pub point: usize,
    pub face_value: f64,
    pub worst_unit_value: f64,
}

impl CollapseLayer {
    pub fn from_parts(face: &Hyperplane, anchor: &DVector<f64>, eps: &[f64]) -> Self {
        let (weights, pivot) = perturbed_rows(face.w(), eps);
        let biases = -(&weights * anchor);
        Self { weights, biases, anchor: anchor.iter().copied().collect(), epsilons: eps.to_vec(), pivot }
    }

    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn leading_face(&self) -> Hyperplane {
        Hyperplane::new(self.weights.row(0).transpose(), self.biases[0]).expect("leading row is a face normal")
    }

    pub fn affine_layer(&self) -> AffineLayer {
        AffineLayer::new(self.weights.clone(), self.biases.clone(), Activation::Relu).expect("square layer")
    }

    pub fn pre_activation(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.weights * x + &self.biases
    }

    /// ReLU output with the `> tau_act` activation rule.
    pub fn apply(&self, x: &DVector<f64>, tau_act: f64) -> DVector<f64> {
        self.pre_activation(x).map(|v| if v > tau_act { v } else { 0.0 })
    }

    /// `W x0 + b`, which is exactly zero by construction.
    pub fn anchor_residual(&self) -> DVector<f64> {
        self.pre_activation(&DVector::from_column_slice(&self.anchor))
    }

    /// Points on the positive side of the leading face must activate every
    /// unit; points on the zero side must activate none.
    pub fn validate(&self, points: &[DVector<f64>], tau_act: f64) -> std::result::Result<(), CollapseViolation> {
        for (i, x) in points.iter().enumerate() {
            let pre = self.pre_activation(x);
            let face_value = pre[0];
            let (ok, worst) = if face_value > tau_act {
                let m = pre.min();
                (m > tau_act, m)
            } else {
                let m = pre.max();
                (m <= tau_act, m)
            };
            if !ok {
                return Err(CollapseViolation { point: i, face_value, worst_unit_value: worst });
            }
        }
        Ok(())
    }

    /// `h` expressed in this layer's output coordinates, valid for points
    /// that activate every unit.
    pub fn transform_hyperplane(&self, h: &Hyperplane) -> Result<Hyperplane> {
        let inv = self
            .weights
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Construction("collapse layer is singular".into()))?;
        let w = inv.transpose() * h.w();
        let b = h.b() - w.dot(&self.biases);
        Hyperplane::new(w, b).map_err(|_| Error::Construction("transformed face is not finite".into()))
    }
}

/// Collapse layer for `face` anchored at `x0`. The perturbations start at
/// `initial_eps` and are halved until every point in `points` keeps its
/// side of the face.
pub fn build_collapse_layer(
    face: &Hyperplane,
    x0: &[f64],
    points: &[DVector<f64>],
    initial_eps: &[f64],
    tau_act: f64,
) -> Result<CollapseLayer> {
    let n = face.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch { context: "anchor", expected: n, got: x0.len() });
    }
    if initial_eps.len() + 1 != n {
        return Err(Error::DimensionMismatch { context: "perturbation count", expected: n - 1, got: initial_eps.len() });
    }
    if initial_eps.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(Error::usage("perturbations must lie in (0, 1)"));
    }
    if let Some(p) = points.iter().find(|p| p.len() != n) {
        return Err(Error::DimensionMismatch { context: "collapse point", expected: n, got: p.len() });
    }
    let anchor = DVector::from_column_slice(x0);
    let on_face_tol = tau_act.max(1e-12 * (1.0 + face.w().norm() * anchor.norm() + face.b().abs()));
    if face.value(&anchor).abs() > on_face_tol {
        return Err(Error::usage(format!("anchor is off the face by {:e}", face.value(&anchor))));
    }

    let mut eps = initial_eps.to_vec();
    let mut last = None;
    for _ in 0..=MAX_EPS_HALVINGS {
        let layer = CollapseLayer::from_parts(face, &anchor, &eps);
        match layer.validate(points, tau_act) {
            Ok(()) => return Ok(layer),
            Err(v) => last = Some(v),
        }
        eps.iter_mut().for_each(|e| *e *= 0.5);
    }
    let v = last.expect("at least one attempt");
    Err(Error::Construction(format!(
        "no perturbation preserves the face split; point {} (face value {:e}) has a unit at {:e}",
        v.point, v.face_value, v.worst_unit_value
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Star,
    O,
}

/// `Star` iff the final pre-activation exceeds `tau_act`.
pub fn classify(net: &Network, x: &[f64], tau_act: f64) -> Result<Class> {
    let trace = net.forward(x, tau_act)?;
    let pre = trace.pre.last().expect("non-empty network");
    Ok(if pre[0] > tau_act { Class::Star } else { Class::O })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolytopeClassifier {
    pub network: Network,
    /// Face indices in processing order; the last one is the output unit.
    pub face_order: Vec<usize>,
    pub collapse_layers: Vec<CollapseLayer>,
    /// Last face in the coordinates of the last hidden layer.
    pub final_face: Hyperplane,
}

/// Splits a classifier dataset into `*`-points and `o`-points. Labelled
/// data uses subdomain `1` for `*`; unlabelled data uses `y[0] > 0.5`.
pub fn split_classes(data: &Dataset) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let labelled = data.is_labelled();
    data.points().iter().fold((Vec::new(), Vec::new()), |(mut s, mut o), p| {
        let star = if labelled { p.subdomain == Some(1) } else { p.y.first().is_some_and(|y| *y > 0.5) };
        if star { s.push(p.x.clone()) } else { o.push(p.x.clone()) }
        (s, o)
    })
}

/// Network `n -> n x (d-1) -> 1` whose final ReLU is positive exactly on the
/// supplied `*`-points. Tries face orderings until one validates.
pub fn build_polytope_classifier(
    polytope: &ConvexPolytope,
    stars: &[Vec<f64>],
    os: &[Vec<f64>],
    tau_act: f64,
) -> Result<PolytopeClassifier> {
    let n = polytope.dim();
    for x in stars.iter().chain(os) {
        if x.len() != n {
            return Err(Error::DimensionMismatch { context: "classifier point", expected: n, got: x.len() });
        }
    }
    if let Some(i) = stars.iter().position(|x| !polytope.contains(x, tau_act)) {
        return Err(Error::InvalidDataset(format!("*-point {i} is not strictly inside the polytope")));
    }
    if let Some(i) = os.iter().position(|x| polytope.faces().iter().all(|f| f.value_at(x) > 0.0)) {
        return Err(Error::InvalidDataset(format!("o-point {i} lies inside the polytope")));
    }
    let d = polytope.faces().len();
    let mut last_err = None;
    for order in face_orderings(d) {
        match build_for_order(polytope, &order, stars, os, tau_act) {
            Ok(c) => return Ok(c),
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::Construction(format!(
        "no face ordering produced a separating network ({})",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// All orderings in lexicographic order for `d <= 6`, otherwise rotations
/// of the input order and of its reverse.
fn face_orderings(d: usize) -> Vec<Vec<usize>> {
    if d <= 6 {
        let mut out = Vec::new();
        let mut p: Vec<usize> = (0..d).collect();
        loop {
            out.push(p.clone());
            let Some(i) = (1..d).rev().find(|&i| p[i - 1] < p[i]) else { break };
            let j = (i..d).rev().find(|&j| p[j] > p[i - 1]).expect("successor exists");
            p.swap(i - 1, j);
            p[i..].reverse();
        }
        out
    } else {
        let forward = (0..d).map(|k| (0..d).map(|i| (i + k) % d).collect());
        let backward = (0..d).map(|k| (0..d).map(|i| (d + k - i) % d).collect());
        forward.chain(backward).collect()
    }
}

fn build_for_order(
    polytope: &ConvexPolytope,
    order: &[usize],
    stars: &[Vec<f64>],
    os: &[Vec<f64>],
    tau_act: f64,
) -> Result<PolytopeClassifier> {
    let n = polytope.dim();
    let d = order.len();
    let mut faces: Vec<Hyperplane> = order.iter().map(|&i| polytope.faces()[i].clone()).collect();
    let mut images: Vec<DVector<f64>> = stars.iter().chain(os).map(|x| DVector::from_column_slice(x)).collect();
    let star_count = stars.len();
    let mut collapse_layers = Vec::with_capacity(d.saturating_sub(1));

    for i in 0..d.saturating_sub(1) {
        let (face, next) = (&faces[i], &faces[i + 1]);
        let mut chosen = None;
        for x0 in anchor_candidates(face, next, &images[..star_count], &images) {
            if next.value(&x0) >= -tau_act {
                continue;
            }
            let Ok(layer) = build_collapse_layer(face, x0.as_slice(), &images, &default_epsilons(n), tau_act) else {
                continue;
            };
            let Ok(rest) = faces[i + 1..].iter().map(|f| layer.transform_hyperplane(f)).collect::<Result<Vec<_>>>() else {
                continue;
            };
            chosen = Some((layer, rest));
            break;
        }
        let (layer, rest) = chosen.ok_or_else(|| Error::Construction(format!("no anchor found for face {}", order[i])))?;
        images = images.iter().map(|x| layer.apply(x, tau_act)).collect();
        faces.truncate(i + 1);
        faces.extend(rest);
        collapse_layers.push(layer);
    }

    let final_face = faces[d - 1].clone();
    let mut layers: Vec<AffineLayer> = collapse_layers.iter().map(CollapseLayer::affine_layer).collect();
    layers.push(AffineLayer::new(
        DMatrix::from_row_slice(1, n, final_face.w().as_slice()),
        DVector::from_element(1, final_face.b()),
        Activation::Relu,
    )?);
    let network = Network::new(n, layers)?;

    for (k, x) in stars.iter().chain(os).enumerate() {
        let pre = network.forward(x, tau_act)?.pre.last().expect("output layer")[0];
        let ok = if k < star_count { pre > tau_act } else { pre <= tau_act };
        if !ok {
            return Err(Error::Construction(format!("point {k} ends on the wrong side ({pre:e})")));
        }
    }
    Ok(PolytopeClassifier { network, face_order: order.to_vec(), collapse_layers, final_face })
}

/// Points on `face` where `next` is negative. Starts from the projection of
/// the `*`-centroid onto the face, moves against the in-face gradient of
/// `next` to several target depths, then jitters along the remaining in-face
/// directions.
fn anchor_candidates(face: &Hyperplane, next: &Hyperplane, stars: &[DVector<f64>], all: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let n = face.dim();
    let source = if stars.is_empty() { all } else { stars };
    let centroid = if source.is_empty() {
        DVector::zeros(n)
    } else {
        source.iter().fold(DVector::zeros(n), |acc, x| acc + x) / source.len() as f64
    };
    let spread = all.iter().map(|x| (x - &centroid).norm()).fold(0.0, f64::max);
    let scale = if spread > 0.0 { spread } else { 1.0 };

    let w = face.w();
    let wn2 = w.norm_squared();
    let p0 = &centroid - w * (face.value(&centroid) / wn2);
    let u = next.w() - w * (next.w().dot(w) / wn2);
    let u_norm = u.norm();

    let mut bases = Vec::new();
    if u_norm > 1e-12 * next.w().norm() {
        let dir = &u / u_norm;
        let g0 = next.value(&p0);
        for depth in [1.0, 0.25, 4.0, 0.05, 16.0, 0.01, 100.0] {
            let t = (g0 + depth * scale) / u_norm;
            bases.push(&p0 - &dir * t);
        }
    } else {
        bases.push(p0);
    }

    // In-face directions orthogonal to the face normal and to `u`.
    let mut frame: Vec<DVector<f64>> = vec![w / wn2.sqrt()];
    if u_norm > 0.0 {
        frame.push(&u / u_norm);
    }
    let mut jitter = Vec::new();
    for k in 0..n {
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        for f in &frame {
            e -= f * f.dot(&e);
        }
        if e.norm() > 1e-8 {
            let e = e.normalize();
            frame.push(e.clone());
            jitter.push(e);
        }
    }

    let mut out = bases.clone();
    for mult in [0.5, 1.0, 2.0] {
        for e in &jitter {
            for base in &bases {
                out.push(base + e * (mult * scale));
                out.push(base - e * (mult * scale));
            }
        }
    }
    // Snap back onto the face to remove drift.
    out.into_iter().map(|x| &x - w * (face.value(&x) / wn2)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransmissionReport {
    pub max_abs_diff: f64,
    pub agrees: bool,
    /// Points that do not activate every unit and were skipped.
    pub skipped: Vec<usize>,
}

/// Compares `h(x)` with `h'(layer(x))`, where `h'` is `h` carried into the
/// layer's output coordinates, over the points that activate every unit.
pub fn verify_affine_transmission(
    layer: &CollapseLayer,
    points: &[DVector<f64>],
    hyperplanes: &[Hyperplane],
    tau_act: f64,
) -> Result<TransmissionReport> {
    let transformed: Vec<Hyperplane> = hyperplanes.iter().map(|h| layer.transform_hyperplane(h)).collect::<Result<_>>()?;
    let mut max_abs_diff: f64 = 0.0;
    let mut skipped = Vec::new();
    for (i, x) in points.iter().enumerate() {
        let pre = layer.pre_activation(x);
        if pre.iter().any(|&v| v <= tau_act) {
            skipped.push(i);
            continue;
        }
        let image = layer.apply(x, tau_act);
        for (h, t) in hyperplanes.iter().zip(&transformed) {
            max_abs_diff = max_abs_diff.max((h.value(x) - t.value(&image)).abs());
        }
    }
    Ok(TransmissionReport { max_abs_diff, agrees: max_abs_diff < TRANSMISSION_TOL, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{quadrilateral_data, quadrilateral_faces, triangle_data, triangle_faces};
    use crate::model::DEFAULT_TAU_ACT;

    const TAU: f64 = DEFAULT_TAU_ACT;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn x_axis_face() -> Hyperplane {
        Hyperplane::from_slice(&[1.0, 0.0], 0.0).unwrap()
    }

    #[test]
    fn collapse_layer_example() {
        let layer = CollapseLayer::from_parts(&x_axis_face(), &v(&[0.0, 0.0]), &[0.5]);
        assert_eq!(layer.weights, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.5]));
        assert_eq!(layer.biases, v(&[0.0, 0.0]));
        assert!((layer.weights.determinant() - 0.5).abs() < 1e-15);
        assert_eq!(layer.pre_activation(&v(&[1.0, 0.0])), v(&[1.0, 1.0]));
        assert_eq!(layer.pre_activation(&v(&[-1.0, 0.1])), v(&[-1.0, -0.95]));
        assert_eq!(layer.apply(&v(&[-1.0, 0.1]), TAU), v(&[0.0, 0.0]));
    }

    #[test]
    fn pivot_avoids_zero_leading_weight() {
        let face = Hyperplane::from_slice(&[0.0, 2.0, 1.0], -1.0).unwrap();
        let layer = CollapseLayer::from_parts(&face, &v(&[3.0, 0.5, 0.0]), &default_epsilons(3));
        assert_eq!(layer.pivot, 1);
        assert!(layer.weights.determinant().abs() > 1e-6);
        assert!(layer.anchor_residual().iter().all(|&r| r == 0.0));
        assert_eq!(layer.leading_face().w(), face.w());
        assert_eq!(layer.leading_face().value_at(&[3.0, 0.5, 0.0]), 0.0);
    }

    #[test]
    fn build_collapse_layer_shrinks_eps() {
        // A point just inside the face with a large off-face offset forces
        // several halvings.
        let points = vec![v(&[0.01, -5.0]), v(&[-1.0, 3.0]), v(&[2.0, 2.0])];
        let layer = build_collapse_layer(&x_axis_face(), &[0.0, 0.0], &points, &[0.5], TAU).unwrap();
        assert!(layer.epsilons[0] < 0.5);
        assert!(layer.validate(&points, TAU).is_ok());
        assert!(build_collapse_layer(&x_axis_face(), &[1.0, 0.0], &points, &[0.5], TAU).is_err());
        // A point on the face other than the anchor cannot be collapsed when
        // it sits on the wrong side of every perturbed row.
        let on_face = vec![v(&[0.0, 1.0])];
        let layer = build_collapse_layer(&x_axis_face(), &[0.0, 0.0], &on_face, &[0.5], 0.0);
        assert!(matches!(layer, Err(Error::Construction(_))));
    }

    #[test]
    fn halving_keeps_validity() {
        let points = vec![v(&[0.3, -2.0]), v(&[-0.2, 1.0]), v(&[1.5, 0.7]), v(&[-3.0, -3.0])];
        let layer = build_collapse_layer(&x_axis_face(), &[0.0, 0.5], &points, &[0.5], TAU).unwrap();
        let mut eps = layer.epsilons.clone();
        for _ in 0..10 {
            eps.iter_mut().for_each(|e| *e *= 0.5);
            let smaller = CollapseLayer::from_parts(&x_axis_face(), &v(&[0.0, 0.5]), &eps);
            assert!(smaller.validate(&points, TAU).is_ok());
        }
    }

    fn check_classifier(faces: Vec<Hyperplane>, data: Dataset) -> PolytopeClassifier {
        let polytope = ConvexPolytope::new(faces).unwrap();
        let (stars, os) = split_classes(&data);
        let c = build_polytope_classifier(&polytope, &stars, &os, TAU).unwrap();
        assert_eq!(c.network.hidden_widths(), vec![polytope.dim(); polytope.faces().len() - 1]);
        for s in &stars {
            assert_eq!(classify(&c.network, s, TAU).unwrap(), Class::Star);
        }
        for o in &os {
            let pre = c.network.forward(o, TAU).unwrap().pre.last().unwrap()[0];
            assert!(pre <= 0.0, "o-point {o:?} has final value {pre}");
        }
        for layer in &c.collapse_layers {
            assert!(layer.weights.determinant() != 0.0);
            assert!(layer.anchor_residual().iter().all(|&r| r == 0.0));
        }
        c
    }

    #[test]
    fn triangle_classifier() {
        let c = check_classifier(triangle_faces(), triangle_data());
        assert_eq!(c.network.hidden_widths(), vec![2, 2]);
        assert_eq!(classify(&c.network, &[0.2, 0.2], TAU).unwrap(), Class::Star);
        assert_eq!(classify(&c.network, &[1.0, 1.0], TAU).unwrap(), Class::O);
    }

    #[test]
    fn quadrilateral_classifier() {
        check_classifier(quadrilateral_faces(), quadrilateral_data());
    }

    #[test]
    fn single_face_has_no_hidden_layers() {
        let face = Hyperplane::from_slice(&[1.0], -1.0).unwrap();
        let p = ConvexPolytope::new(vec![face]).unwrap();
        assert!(p.possibly_unbounded());
        let c = build_polytope_classifier(&p, &[vec![2.0], vec![3.0]], &[vec![0.0], vec![1.0]], TAU).unwrap();
        assert_eq!(c.network.hidden_count(), 0);
        assert_eq!(classify(&c.network, &[1.0], TAU).unwrap(), Class::O);
    }

    #[test]
    fn preconditions() {
        let p = ConvexPolytope::new(triangle_faces()).unwrap();
        let inside_o = build_polytope_classifier(&p, &[vec![0.2, 0.2]], &[vec![0.3, 0.3]], TAU);
        assert!(matches!(inside_o, Err(Error::InvalidDataset(_))));
        let outside_star = build_polytope_classifier(&p, &[vec![2.0, 2.0]], &[], TAU);
        assert!(matches!(outside_star, Err(Error::InvalidDataset(_))));
        let empty = vec![
            Hyperplane::from_slice(&[1.0], -1.0).unwrap(),
            Hyperplane::from_slice(&[-1.0], 0.0).unwrap(),
        ];
        assert!(ConvexPolytope::new(empty).is_err());
    }

    #[test]
    fn boundary_point_on_final_face_is_o() {
        let c = check_classifier(triangle_faces(), triangle_data());
        let last = c.face_order[2];
        let boundary = match last {
            0 => [0.0, 0.5],
            1 => [0.5, 0.0],
            _ => [0.5, 0.5],
        };
        assert_eq!(classify(&c.network, &boundary, TAU).unwrap(), Class::O);
    }

    #[test]
    fn transmission_through_layers() {
        let identity = CollapseLayer {
            weights: DMatrix::identity(2, 2),
            biases: DVector::zeros(2),
            anchor: vec![0.0, 0.0],
            epsilons: vec![],
            pivot: 0,
        };
        let pts = vec![v(&[1.0, 2.0]), v(&[0.5, 0.25])];
        let r = verify_affine_transmission(&identity, &pts, &triangle_faces(), TAU).unwrap();
        assert_eq!(r.max_abs_diff, 0.0);

        let c = check_classifier(triangle_faces(), triangle_data());
        let (stars, os) = split_classes(&triangle_data());
        let star_pts: Vec<_> = stars.iter().map(|s| v(s)).collect();
        let first = &c.collapse_layers[0];
        let r = verify_affine_transmission(first, &star_pts, &triangle_faces(), TAU).unwrap();
        assert!(r.agrees && r.skipped.is_empty(), "{r:?}");

        // Collapsed points land on the anchor's image.
        for o in &os {
            let x = v(o);
            if first.pre_activation(&x).iter().all(|&p| p <= TAU) {
                assert_eq!(first.apply(&x, TAU), first.apply(&v(&first.anchor), TAU));
            }
        }
    }

    #[test]
    fn polytope_json() {
        let p = ConvexPolytope::new(triangle_faces()).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.starts_with(r#"{"faces":[{"w":[1.0,0.0],"b":0.0}"#));
        assert_eq!(serde_json::from_str::<ConvexPolytope>(&json).unwrap(), p);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn collapse_layers_are_exact_and_invertible(
                w in prop::collection::vec(-3.0f64..3.0, 2..5),
                t in prop::collection::vec(-2.0f64..2.0, 4),
            ) {
                prop_assume!(w.iter().any(|x| x.abs() > 0.1));
                let face = Hyperplane::from_slice(&w, 0.7).unwrap();
                let n = w.len();
                let mut x0 = DVector::from_fn(n, |i, _| t[i % t.len()]);
                x0 -= face.w() * (face.value(&x0) / face.w().norm_squared());
                let layer = CollapseLayer::from_parts(&face, &x0, &default_epsilons(n));
                prop_assert!(layer.anchor_residual().iter().all(|&r| r == 0.0));
                prop_assert!(layer.weights.determinant().abs() > 0.0);
                prop_assert_eq!(layer.weights.row(0).transpose(), face.w().clone());
            }

            #[test]
            fn random_triangles_are_separated(
                a in (-2.0f64..2.0, -2.0f64..2.0),
                b in (-2.0f64..2.0, -2.0f64..2.0),
                c in (-2.0f64..2.0, -2.0f64..2.0),
                probes in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 5..20),
            ) {
                let pts = [[a.0, a.1], [b.0, b.1], [c.0, c.1]];
                let area = (pts[1][0] - pts[0][0]) * (pts[2][1] - pts[0][1]) - (pts[2][0] - pts[0][0]) * (pts[1][1] - pts[0][1]);
                prop_assume!(area.abs() > 0.5);
                let faces: Vec<Hyperplane> = (0..3)
                    .map(|i| {
                        let (p, q, r) = (pts[i], pts[(i + 1) % 3], pts[(i + 2) % 3]);
                        let w = [q[1] - p[1], p[0] - q[0]];
                        let b = -(w[0] * p[0] + w[1] * p[1]);
                        let s = if w[0] * r[0] + w[1] * r[1] + b > 0.0 { 1.0 } else { -1.0 };
                        Hyperplane::from_slice(&[s * w[0], s * w[1]], s * b).unwrap()
                    })
                    .collect();
                let polytope = ConvexPolytope::new(faces.clone()).unwrap();
                let margin = 1e-3;
                let mut stars = vec![(0..2).map(|k| (pts[0][k] + pts[1][k] + pts[2][k]) / 3.0).collect::<Vec<f64>>()];
                let mut os = Vec::new();
                for (x, y) in probes {
                    let vals: Vec<f64> = faces.iter().map(|f| f.value_at(&[x, y])).collect();
                    if vals.iter().all(|v| *v > margin) {
                        stars.push(vec![x, y]);
                    } else if vals.iter().any(|v| *v < -margin) {
                        os.push(vec![x, y]);
                    }
                }
                let cl = build_polytope_classifier(&polytope, &stars, &os, TAU).unwrap();
                for s in &stars {
                    prop_assert_eq!(classify(&cl.network, s, TAU).unwrap(), Class::Star);
                }
                for o in &os {
                    prop_assert_eq!(classify(&cl.network, o, TAU).unwrap(), Class::O);
                }
            }
        }
    }
}
