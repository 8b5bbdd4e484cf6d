use std::collections::BTreeSet;

use anyhow::Context;
use nalgebra::{DMatrix, DVector};
use relu_interp::{
    auto_group_columns, build_interp_matrix, build_polytope_classifier, classify, collapse_sets,
    disentangle_check, disentangle_matrix, duplicate_rows, explore_decompositions, extract_mode,
    fit_output_layer, initialize, layerwise_sparsity, necessary_condition_check, normalize_mode,
    rank_and_singularity, route_matrix, solve_multi_output, solve_overparam, spacetime_search,
    sparsity as zero_fraction, split_classes, trace_route, train_full_batch, BlockTriangularSystem,
    Class, ConvexPolytope, Dataset, EntanglementReason, Enumeration, InterpMatrix, Network,
    NormalForm, OverparamOptions, SolveStatus, SpacetimeOutcome, TrainConfig, TrainStatus,
};
use serde_json::json;

use crate::io::{input_error, load_matrix, load_mode, load_targets, parse_assignments, parse_groups, parse_list, read_json, to_json};
use crate::{
    ConstructCmd, DecomposeCmd, DisentangleCmd, Format, GlobalOpts, MatrixCmd, ModeCmd, RouteCmd, RouteSource, SearchCmd,
    SolveCmd, SparsityCmd, TargetArgs, TrainArgs, TrainCmd,
};

/// Rendered artifact plus a one-line summary. `failed` marks a
/// mathematical failure whose report is still worth writing.
pub struct Outcome {
    pub artifact: String,
    pub summary: String,
    pub failed: bool,
}

impl Outcome {
    fn ok(artifact: String, summary: String) -> Self {
        Self { artifact, summary, failed: false }
    }
}

fn json_only(g: &GlobalOpts, what: &str) -> anyhow::Result<()> {
    match g.format {
        Format::Json => Ok(()),
        Format::Csv => Err(input_error(format!("{what} has no CSV form; use --format json"))),
    }
}

fn load_network(path: &std::path::Path) -> anyhow::Result<Network> {
    read_json(path, "network")
}

fn load_data(path: &std::path::Path) -> anyhow::Result<Dataset> {
    read_json(path, "dataset")
}

fn targets(args: &TargetArgs) -> anyhow::Result<DMatrix<f64>> {
    match (&args.data, &args.targets) {
        (Some(d), None) => Ok(load_data(d)?.targets()),
        (None, Some(t)) => load_targets(t),
        _ => Err(input_error("give exactly one of --data or --targets")),
    }
}

fn single_target(args: &TargetArgs) -> anyhow::Result<DVector<f64>> {
    let t = targets(args)?;
    if t.ncols() != 1 {
        return Err(input_error(format!("expected one target per point, got {} columns (use `solve multi`)", t.ncols())));
    }
    Ok(t.column(0).into_owned())
}

fn matrix_csv(m: &DMatrix<f64>) -> anyhow::Result<String> {
    Ok(InterpMatrix::from_values(m.clone())
        .map(|im| im.to_csv_string())
        .unwrap_or_else(|_| {
            // Solutions may be negative, which the interpolation-matrix type rejects.
            (0..m.nrows())
                .map(|r| m.row(r).iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(",") + "\n")
                .collect()
        }))
}

pub fn matrix(cmd: MatrixCmd, g: &GlobalOpts) -> anyhow::Result<Outcome> {
    match cmd {
        MatrixCmd::Build { network, data, layer } => {
            let net = load_network(&network)?;
            let data = load_data(&data)?;
            let layer = match layer {
                Some(l) => l,
                None => net.hidden_count().checked_sub(1).ok_or_else(|| input_error("network has no hidden layer"))?,
            };
            let m = build_interp_matrix(&net, &data, layer, g.tau_act)?;
            let artifact = match g.format {
                Format::Json => to_json(&m)?,
                Format::Csv => m.to_csv_string(),
            };
            let summary = format!(
                "built {}x{} interpolation matrix from hidden layer {layer} (sparsity {:.4})",
                m.nrows(),
                m.ncols(),
                zero_fraction(m.values())
            );
            Ok(Outcome::ok(artifact, summary))
        }
        MatrixCmd::Analyze { matrix, input_dim } => {
            json_only(g, "matrix analyze")?;
            let m = load_matrix(&matrix)?;
            let rank = rank_and_singularity(m.values(), g.tol);
            let necessary = match input_dim {
                Some(n) if m.is_square() => Some(necessary_condition_check(m.values(), n)?),
                Some(_) => return Err(input_error("--input-dim needs a square matrix")),
                None => None,
            };
            let report = json!({
                "rows": m.nrows(),
                "cols": m.ncols(),
                "rank": rank.rank,
                "singular": rank.singular,
                "min_singular_value": rank.min_singular_value,
                "tol_used": rank.tol_used,
                "sparsity": zero_fraction(m.values()),
                "necessary_condition": necessary,
            });
            let summary = format!(
                "{}x{} matrix: rank {}{}",
                m.nrows(),
                m.ncols(),
                rank.rank,
                if m.is_square() { if rank.singular { ", singular" } else { ", nonsingular" } } else { "" }
            );
            Ok(Outcome::ok(to_json(&report)?, summary))
        }
    }
}

pub fn mode(cmd: ModeCmd, g: &GlobalOpts) -> anyhow::Result<Outcome> {
    match cmd {
        ModeCmd::Extract { matrix, rows, data, cols } => {
            let m = load_matrix(&matrix)?;
            let row_groups = match (rows, data) {
                (Some(r), None) => parse_groups(&r, "--rows")?,
                (None, Some(d)) => load_data(&d)?
                    .row_partition()
                    .ok_or_else(|| input_error("dataset has no subdomain labels"))?,
                _ => return Err(input_error("give exactly one of --rows or --data")),
            };
            let col_groups = match cols {
                Some(c) => parse_groups(&c, "--cols")?,
                None => auto_group_columns(m.values(), &row_groups, g.tau_act)?,
            };
            let mode = extract_mode(m.values(), &row_groups, &col_groups, g.tau_act)?;
            let artifact = match g.format {
                Format::Json => to_json(&json!({ "mode": mode, "row_groups": row_groups, "col_groups": col_groups }))?,
                Format::Csv => mode
                    .symbols()
                    .iter()
                    .map(|r| r.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(",") + "\n")
                    .collect(),
            };
            Ok(Outcome::ok(artifact, format!("{}x{} mode matrix", mode.nrows(), mode.ncols())))
        }
        ModeCmd::Normalize { mode } => {
            json_only(g, "mode normalize")?;
            let m = load_mode(&mode)?;
            let r = normalize_mode(&m)?;
            let failed = r.achieved_form == NormalForm::Failed;
            let summary = if failed {
                "no permutation reaches a lower-triangular form".to_string()
            } else {
                format!("normalized to {:?} with row order {:?}", r.achieved_form, r.row_perm)
            };
            Ok(Outcome { artifact: to_json(&r)?, summary, failed })
        }
    }
}

pub fn solve(cmd: SolveCmd, g: &GlobalOpts) -> anyhow::Result<Outcome> {
    match cmd {
        SolveCmd::Triangular { matrix, targets, blocks } => {
            let m = load_matrix(&matrix)?;
            let y = single_target(&targets)?;
            let sizes = parse_list(&blocks, "--blocks")?;
            let system = BlockTriangularSystem::from_matrix(m.values(), &sizes, &y)?;
            let parts = system.solve(g.tol)?;
            let alpha: Vec<f64> = parts.iter().flat_map(|p| p.iter().copied()).collect();
            let residual = (m.values() * DVector::from_column_slice(&alpha) - &y).amax();
            let artifact = match g.format {
                Format::Json => to_json(&json!({ "alpha": alpha, "residual": residual }))?,
                Format::Csv => matrix_csv(&DMatrix::from_column_slice(alpha.len(), 1, &alpha))?,
            };
            Ok(Outcome::ok(artifact, format!("solved {} blocks, residual {residual:.3e}", sizes.len())))
        }
        SolveCmd::Overparam { matrix, targets, free, random, all } => {
            json_only(g, "solve overparam")?;
            let m = load_matrix(&matrix)?;
            let y = single_target(&targets)?;
            let opts = OverparamOptions {
                free_values: free.as_deref().map(parse_assignments).transpose()?.unwrap_or_default().into_iter().collect(),
                enumeration: if random { Enumeration::Random { seed: g.seed } } else { Enumeration::Lexicographic },
                max_combos: g.max_combos,
                stop_at_first: !all,
                rank_tol: g.tol,
            };
            let report = solve_overparam(m.values(), &y, &opts)?;
            let failed = report.status == SolveStatus::NoNonsingularCombination;
            let summary = if failed {
                format!("no nonsingular combination among {} tried", report.combos_tried)
            } else {
                format!("{} solution(s) after {} combination(s)", report.solutions.len(), report.combos_tried)
            };
            Ok(Outcome { artifact: to_json(&report)?, summary, failed })
        }
        SolveCmd::Fit { matrix, targets } => {
            let m = load_matrix(&matrix)?;
            let y = single_target(&targets)?;
            let fit = fit_output_layer(m.values(), &y)?;
            let artifact = match g.format {
                Format::Json => to_json(&fit)?,
                Format::Csv => matrix_csv(&DMatrix::from_column_slice(fit.alpha.len(), 1, &fit.alpha))?,
            };
            Ok(Outcome::ok(artifact, format!("least-squares fit, residual {:.3e}", fit.residual)))
        }
        SolveCmd::Multi { matrix, data } => {
            let m = load_matrix(&matrix)?;
            let t = load_data(&data)?.targets();
            let fit = solve_multi_output(m.values(), &t)?;
            let artifact = match g.format {
                Format::Json => to_json(&fit)?,
                Format::Csv => {
                    let cols = fit.alphas.len();
                    let rows = fit.alphas.first().map_or(0, Vec::len);
                    matrix_csv(&DMatrix::from_fn(rows, cols, |r, c| fit.alphas[c][r]))?
                }
            };
            let worst = fit.residuals.iter().copied().fold(0.0, f64::max);
            Ok(Outcome::ok(artifact, format!("fitted {} outputs, largest residual {worst:.3e}", fit.alphas.len())))
        }
    }
}

pub fn construct(cmd: ConstructCmd, g: &GlobalOpts) -> anyhow::Result<Outcome> {
    json_only(g, "construct classifier")?;
    let ConstructCmd::Classifier { polytope, data } = cmd;
    let polytope: ConvexPolytope = read_json(&polytope, "polytope")?;
    let data = load_data(&data)?;
    let (stars, os) = split_classes(&data);
    let classifier = build_polytope_classifier(&polytope, &stars, &os, g.tau_act)?;
    let mut separated = 0;
    for x in &stars {
        separated += usize::from(classify(&classifier.network, x, g.tau_act)? == Class::Star);
    }
    for x in &os {
        separated += usize::from(classify(&classifier.network, x, g.tau_act)? == Class::O);
    }
    let total = stars.len() + os.len();
    Ok(Outcome {
        artifact: to_json(&classifier.network)?,
        summary: format!("{separated}/{total} points separated (face order {:?})", classifier.face_order),
        failed: separated != total,
    })
}

fn route_subset(src: &RouteSource, data: &Dataset) -> anyhow::Result<Vec<usize>> {
    match (&src.points, src.subdomain) {
        (Some(p), None) => parse_list(p, "--points"),
        (None, Some(id)) => data
            .subdomains()
            .remove(&id)
            .ok_or_else(|| input_error(format!("no points with subdomain {id}"))),
        _ => Ok((0..data.len()).collect()),
    }
}

pub fn route(cmd: RouteCmd, g: &GlobalOpts) -> anyhow::Result<Outcome> {
    json_only(g, "route reports")?;
    let (src, collapse) = match cmd {
        RouteCmd::Trace(s) => (s, false),
        RouteCmd::Collapse(s) => (s, true),
    };
    let net = load_network(&src.network)?;
    let data = load_data(&src.data)?;
    let subset = route_subset(&src, &data)?;
    let route = trace_route(&net, &data, &subset, g.tau_act)?;
    if !collapse {
        let summary = format!("route widths {:?} over {} point(s)", route.widths(), route.source.len());
        return Ok(Outcome::ok(to_json(&route)?, summary));
    }
    let report = collapse_sets(&net, &route, &data, g.tau_act)?;
    let m = route_matrix(&net, &data, &route, g.tau_act)?;
    let duplicates = duplicate_rows(m.values(), &report).context("duplicate-row check")?;
    let sizes: Vec<usize> = report.sets.iter().map(|s| s.cardinality()).collect();
    let summary = format!("collapse set sizes per layer {sizes:?}, {} duplicate group(s) confirmed", duplicates.len());
    Ok(Outcome::ok(to_json(&json!({ "route": route, "sets": report.sets, "duplicates": duplicates }))?, summary))
}

pub fn sparsity(cmd: SparsityCmd, g: &GlobalOpts) -> anyhow::Result<Outcome> {
    let SparsityCmd::Report { network, data } = cmd;
    let net = load_network(&network)?;
    let data = load_data(&data)?;
    let series = layerwise_sparsity(&net, &data, g.tau_act)?;
    let artifact = match g.format {
        Format::Json => to_json(&series)?,
        Format::Csv => std::iter::once("layer,sparsity\n".to_string())
            .chain(series.iter().map(|l| format!("{},{:.16e}\n", l.layer, l.sparsity)))
            .collect(),
    };
    let monotone = series.windows(2).all(|w| w[0].sparsity <= w[1].sparsity);
    let values: Vec<String> = series.iter().map(|l| format!("{:.3}", l.sparsity)).collect();
    let summary = format!("sparsity by layer [{}]{}", values.join(", "), if monotone { ", non-decreasing" } else { "" });
    Ok(Outcome::ok(artifact, summary))
}

pub fn decompose(cmd: DecomposeCmd, g: &GlobalOpts) -> anyhow::Result<Outcome> {
    json_only(g, "decompose explore")?;
    let DecomposeCmd::Explore { data, cuts, samples } = cmd;
    let data = load_data(&data)?;
    let found = explore_decompositions(&data, cuts, samples, g.seed)?;
    let exact = found.iter().filter(|d| d.is_exact()).count();
    Ok(Outcome::ok(to_json(&found)?, format!("{} distinct decomposition(s), {exact} exact", found.len())))
}

pub fn disentangle(cmd: DisentangleCmd, g: &GlobalOpts) -> anyhow::Result<Outcome> {
    json_only(g, "disentangle check")?;
    let DisentangleCmd::Check { network, matrix, data } = cmd;
    let data = load_data(&data)?;
    let verdict = match (network, matrix) {
        (Some(n), None) => disentangle_check(&load_network(&n)?, &data, g.tau_act)?,
        (None, Some(m)) => {
            let m = load_matrix(&m)?;
            if m.nrows() != data.len() {
                return Err(input_error(format!("matrix has {} rows but the dataset has {} points", m.nrows(), data.len())));
            }
            let categories = data.row_partition().ok_or_else(|| input_error("dataset has no subdomain labels"))?;
            disentangle_matrix(m.values(), &categories, g.tau_act)?
        }
        _ => return Err(input_error("give exactly one of --network or --matrix")),
    };
    let summary = match &verdict.reason {
        None => format!("disentangled, column order {:?}", verdict.column_permutation),
        Some(EntanglementReason::SharedColumn { column, categories }) => {
            format!("entangled: column {column} shared by categories {categories:?}")
        }
        Some(EntanglementReason::EmptyCategory { category }) => format!("entangled: category {category} activates no column"),
        Some(EntanglementReason::InactivePoint { point }) => format!("entangled: point {point} activates no column"),
    };
    Ok(Outcome::ok(to_json(&verdict)?, summary))
}

fn training_setup(args: &TrainArgs, g: &GlobalOpts) -> anyhow::Result<(Network, Dataset, TrainConfig)> {
    let data = load_data(&args.data)?;
    let net = match (&args.network, &args.hidden) {
        (Some(p), None) => load_network(p)?,
        (None, Some(h)) => {
            let n = data.input_dim().ok_or_else(|| input_error("dataset is empty"))?;
            let q = data.output_dim().unwrap_or(1);
            initialize(n, &parse_list(h, "--hidden")?, q, g.seed)?
        }
        _ => return Err(input_error("give exactly one of --network or --hidden")),
    };
    let freeze: BTreeSet<usize> = args.freeze.as_deref().map(|f| parse_list(f, "--freeze")).transpose()?.unwrap_or_default().into_iter().collect();
    let config = TrainConfig { learning_rate: args.lr, steps: args.steps, freeze, seed: g.seed, record_every: args.record_every };
    config.validate(&net)?;
    Ok((net, data, config))
}

pub fn train(cmd: TrainCmd, g: &GlobalOpts) -> anyhow::Result<Outcome> {
    let TrainCmd::Run(args) = cmd;
    let (net, data, config) = training_setup(&args, g)?;
    let trace = train_full_batch(&net, &data, &config)?;
    let artifact = match g.format {
        Format::Json => to_json(&trace)?,
        Format::Csv => trace.to_csv_string(),
    };
    let (summary, failed) = match trace.status {
        TrainStatus::Completed => (format!("trained {} steps, final loss {:.6e}", trace.steps_run, trace.final_loss()), false),
        TrainStatus::Diverged { step, loss } => (format!("diverged at step {step} (loss {loss:.3e})"), true),
    };
    Ok(Outcome { artifact, summary, failed })
}

pub fn search(cmd: SearchCmd, g: &GlobalOpts) -> anyhow::Result<Outcome> {
    json_only(g, "search spacetime")?;
    let SearchCmd::Spacetime(args) = cmd;
    let (net, data, config) = training_setup(&args, g)?;
    let outcome = spacetime_search(&net, &data, &config, g.budget, g.max_combos)?;
    let (summary, failed) = match &outcome {
        SpacetimeOutcome::Solved { time_blocks, residual, .. } => {
            (format!("solved after {time_blocks} time block(s), residual {residual:.3e}"), false)
        }
        SpacetimeOutcome::Unsolved { best_residual, time_blocks, .. } => {
            (format!("unsolved after {time_blocks} time block(s), best residual {best_residual:.3e}"), true)
        }
    };
    Ok(Outcome { artifact: to_json(&outcome)?, summary, failed })
}
