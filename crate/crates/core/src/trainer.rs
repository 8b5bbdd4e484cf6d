//! Full-batch gradient descent on the quadratic loss, region occupancy
//! diagnostics, and the alternating output-solve / hidden-training search.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{last_hidden_matrix, DEFAULT_RANK_TOL};
use crate::model::{Activation, Dataset, Network, RegionSignature, DEFAULT_TAU_ACT};
use crate::solvers::{solve_multi_output, solve_overparam, OverparamOptions, SolveStatus};

/// Loss above which training is considered divergent.
pub const DIVERGENCE_LOSS: f64 = 1e12;
/// Largest output error accepted by the space step of [`spacetime_search`].
pub const SPACE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// Layer indices (output layer = hidden count) left untouched.
    #[serde(default)]
    pub freeze: BTreeSet<usize>,
    /// Seed for [`initialize`].
    #[serde(default)]
    pub seed: u64,
    pub record_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.01, steps: 1000, freeze: BTreeSet::new(), seed: 0, record_every: 10 }
    }
}

impl TrainConfig {
    pub fn validate(&self, net: &Network) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::usage(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.record_every == 0 {
            return Err(Error::usage("record_every must be at least 1"));
        }
        if let Some(&l) = self.freeze.iter().find(|&&l| l >= net.layers().len()) {
            return Err(Error::usage(format!("frozen layer {l} does not exist")));
        }
        Ok(())
    }
}

/// Seeded network with uniform `[-1, 1] / sqrt(fan_in)` parameters.
pub fn initialize(input_dim: usize, hidden: &[usize], output_dim: usize, seed: u64) -> Result<Network> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Network::random(input_dim, hidden, output_dim, Activation::Linear, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    Diverged { step: usize, loss: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    /// Distinct last-hidden region signatures per subdomain label.
    pub occupancy: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainTrace {
    pub status: TrainStatus,
    pub records: Vec<TrainRecord>,
    pub steps_run: usize,
    pub network: Network,
}

impl TrainTrace {
    pub fn loss_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn diverged(&self) -> bool {
        matches!(self.status, TrainStatus::Diverged { .. })
    }

    /// CSV with columns `step,loss` followed by one occupancy column per
    /// subdomain.
    pub fn to_csv_string(&self) -> String {
        let ids: BTreeSet<usize> = self.records.iter().flat_map(|r| r.occupancy.keys().copied()).collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> =
            ["step".to_string(), "loss".to_string()].into_iter().chain(ids.iter().map(|i| format!("occupancy_{i}"))).collect();
        w.write_record(&header).expect("in-memory write");
        for r in &self.records {
            let row: Vec<String> = [r.step.to_string(), format!("{:.16e}", r.loss)]
                .into_iter()
                .chain(ids.iter().map(|i| r.occupancy.get(i).map_or(String::new(), usize::to_string)))
                .collect();
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }
}

fn check_dims(net: &Network, data: &Dataset) -> Result<()> {
    if data.input_dim().is_some_and(|n| n != net.input_dim()) {
        return Err(Error::DimensionMismatch { context: "dataset input", expected: net.input_dim(), got: data.input_dim().unwrap_or(0) });
    }
    if data.output_dim().is_some_and(|n| n != net.output_dim()) {
        return Err(Error::DimensionMismatch { context: "dataset target", expected: net.output_dim(), got: data.output_dim().unwrap_or(0) });
    }
    Ok(())
}

/// `(1/C) * sum_k ||net(x_k) - y_k||^2`.
pub fn quadratic_loss(net: &Network, data: &Dataset) -> Result<f64> {
    check_dims(net, data)?;
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for p in data.points() {
        let out = net.output(&p.x)?;
        total += out.iter().zip(&p.y).map(|(o, y)| (o - y).powi(2)).sum::<f64>();
    }
    Ok(total / data.len() as f64)
}

/// Distinct signatures of the last hidden layer's pre-activations among
/// the points of subdomain `id`.
pub fn region_occupancy(net: &Network, data: &Dataset, id: usize, tau_act: f64) -> Result<usize> {
    let members = data.subdomains().remove(&id).ok_or_else(|| Error::usage(format!("no points with subdomain {id}")))?;
    let last = net.hidden_count().checked_sub(1).ok_or_else(|| Error::usage("network has no hidden layer"))?;
    let mut seen = BTreeSet::new();
    for i in members {
        let t = net.forward(&data.points()[i].x, tau_act)?;
        seen.insert(RegionSignature::from_values(t.pre[last].iter().copied(), tau_act));
    }
    Ok(seen.len())
}

fn occupancy(net: &Network, data: &Dataset) -> Result<BTreeMap<usize, usize>> {
    if net.hidden_count() == 0 {
        return Ok(BTreeMap::new());
    }
    data.subdomains().keys().map(|&id| Ok((id, region_occupancy(net, data, id, DEFAULT_TAU_ACT)?))).collect()
}

/// Weight and bias gradient of one layer.
type LayerGrad = (DMatrix<f64>, DVector<f64>);

/// Loss and parameter gradients of the whole batch.
fn loss_and_gradients(net: &Network, data: &Dataset) -> Result<(f64, Vec<LayerGrad>)> {
    let mut grads: Vec<LayerGrad> =
        net.layers().iter().map(|l| (DMatrix::zeros(l.out_dim(), l.in_dim()), DVector::zeros(l.out_dim()))).collect();
    let scale = 1.0 / data.len().max(1) as f64;
    let mut loss = 0.0;
    for p in data.points() {
        let t = net.eval(&p.x)?;
        let y = DVector::from_column_slice(&p.y);
        let err = t.output() - y;
        loss += err.iter().map(|e| e.powi(2)).sum::<f64>();
        let mut delta = err * (2.0 * scale);
        for (k, layer) in net.layers().iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                delta.zip_apply(&t.pre[k], |d, s| {
                    if s <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let input = if k == 0 { DVector::from_column_slice(&p.x) } else { t.post[k - 1].clone() };
            grads[k].0 += &delta * input.transpose();
            grads[k].1 += &delta;
            if k > 0 {
                delta = layer.weights.transpose() * &delta;
            }
        }
    }
    Ok((loss / data.len().max(1) as f64, grads))
}

/// Full-batch (sub)gradient descent; the ReLU derivative at 0 is 0. Loss is
/// recorded at step 0, every `record_every` steps and after the last step.
/// A loss above [`DIVERGENCE_LOSS`] or a non-finite loss stops the run.
pub fn train_full_batch(net: &Network, data: &Dataset, config: &TrainConfig) -> Result<TrainTrace> {
    config.validate(net)?;
    check_dims(net, data)?;
    let mut net = net.clone();
    let mut records = Vec::new();
    for step in 0..=config.steps {
        let (loss, grads) = loss_and_gradients(&net, data)?;
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            records.push(TrainRecord { step, loss, occupancy: occupancy(&net, data)? });
            return Ok(TrainTrace { status: TrainStatus::Diverged { step, loss }, records, steps_run: step, network: net });
        }
        if step % config.record_every == 0 || step == config.steps {
            records.push(TrainRecord { step, loss, occupancy: occupancy(&net, data)? });
        }
        if step == config.steps {
            break;
        }
        for (k, (gw, gb)) in grads.into_iter().enumerate() {
            if config.freeze.contains(&k) {
                continue;
            }
            let layer = &mut net.layers_mut()[k];
            layer.weights -= gw * config.learning_rate;
            layer.biases -= gb * config.learning_rate;
        }
    }
    Ok(TrainTrace { status: TrainStatus::Completed, records, steps_run: config.steps, network: net })
}

/// Learning-rate bound `1 / lambda_max(2/C * A^T A)` with `A = [Psi, 1]`,
/// below which training only the output layer never increases the loss.
pub fn output_layer_step_bound(net: &Network, data: &Dataset) -> Result<f64> {
    let psi = last_hidden_matrix(net, data, 0.0)?;
    let (c, m) = psi.values().shape();
    let a = DMatrix::from_fn(c, m + 1, |r, j| if j < m { psi.values()[(r, j)] } else { 1.0 });
    let h = a.transpose() * a * (2.0 / c as f64);
    let lmax = SymmetricEigen::new(h).eigenvalues.max();
    Ok(if lmax > 0.0 { 1.0 / lmax } else { f64::INFINITY })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SpacetimeOutcome {
    Solved {
        /// Output weights, one row per output.
        alpha: Vec<Vec<f64>>,
        residual: f64,
        time_blocks: usize,
        training_steps: usize,
        network: Network,
    },
    Unsolved {
        best_residual: f64,
        time_blocks: usize,
        trace: Option<TrainTrace>,
        network: Network,
    },
}

impl SpacetimeOutcome {
    pub fn is_solved(&self) -> bool {
        matches!(self, SpacetimeOutcome::Solved { .. })
    }
}

/// Largest absolute output error over the dataset.
fn max_error(net: &Network, data: &Dataset, tau_act: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for p in data.points() {
        let t = net.forward(&p.x, tau_act)?;
        worst = t.output().iter().zip(&p.y).map(|(o, y)| (o - y).abs()).fold(worst, f64::max);
    }
    Ok(worst)
}

/// Space step: output weights from the last-hidden matrix, bias zero.
/// Returns the candidate network and its largest output error.
fn space_step(net: &Network, data: &Dataset, max_combos: usize) -> Result<(Network, Vec<Vec<f64>>, f64)> {
    let psi = last_hidden_matrix(net, data, DEFAULT_TAU_ACT)?;
    let psi = psi.values();
    let targets = data.targets();
    let mut alphas: Vec<Vec<f64>> = Vec::new();
    if targets.ncols() == 1 && psi.ncols() >= psi.nrows() && psi.nrows() > 0 {
        let opts = OverparamOptions { max_combos, stop_at_first: true, rank_tol: DEFAULT_RANK_TOL, ..Default::default() };
        let report = solve_overparam(psi, &targets.column(0).into_owned(), &opts)?;
        if report.status == SolveStatus::Solved {
            alphas = vec![report.solutions[0].alpha.clone()];
        }
    }
    if alphas.is_empty() {
        alphas = solve_multi_output(psi, &targets)?.alphas;
    }
    let mut candidate = net.clone();
    let out = candidate.layers_mut().last_mut().expect("output layer");
    for (r, a) in alphas.iter().enumerate() {
        for (c, v) in a.iter().enumerate() {
            out.weights[(r, c)] = *v;
        }
    }
    out.biases.fill(0.0);
    let err = max_error(&candidate, data, DEFAULT_TAU_ACT)?;
    Ok((candidate, alphas, err))
}

/// Alternates the space step with `blocks` time blocks of `config.steps`
/// steps of hidden-layer training (output layer frozen). Stops at the first
/// space step with output error below [`SPACE_TOL`].
pub fn spacetime_search(net: &Network, data: &Dataset, config: &TrainConfig, blocks: usize, max_combos: usize) -> Result<SpacetimeOutcome> {
    config.validate(net)?;
    check_dims(net, data)?;
    if net.hidden_count() == 0 {
        return Err(Error::usage("network has no hidden layer"));
    }
    let mut current = net.clone();
    let mut best = f64::INFINITY;
    let mut trace = None;
    let mut time_config = config.clone();
    time_config.freeze.insert(net.hidden_count());
    for block in 0..=blocks {
        let (candidate, alpha, err) = space_step(&current, data, max_combos)?;
        if err < SPACE_TOL {
            return Ok(SpacetimeOutcome::Solved {
                alpha,
                residual: err,
                time_blocks: block,
                training_steps: block * config.steps,
                network: candidate,
            });
        }
        best = best.min(err);
        if block == blocks {
            break;
        }
        let t = train_full_batch(&current, data, &time_config)?;
        current = t.network.clone();
        let diverged = t.diverged();
        trace = Some(t);
        if diverged {
            return Ok(SpacetimeOutcome::Unsolved { best_residual: best, time_blocks: block + 1, trace, network: current });
        }
    }
    Ok(SpacetimeOutcome::Unsolved { best_residual: best, time_blocks: blocks, trace, network: current })
}
