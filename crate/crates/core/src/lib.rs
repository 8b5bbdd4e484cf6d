//! Interpolation-matrix analysis for feedforward ReLU networks.
//!
//! The crate builds the matrices of hidden-unit outputs a network produces on
//! a finite dataset and analyses them: rank and singularity, activation-mode
//! classification and normal forms, exact and overparameterized output-layer
//! solves, constructive deep classifiers for convex polytopes, activation
//! routes and collapse sets, layerwise sparsity, disentanglement, and a small
//! full-batch trainer.
//!
//! ```
//! use relu_interp::fixtures::{abs_data, abs_net};
//! use relu_interp::{build_interp_matrix, fit_output_layer, rank_and_singularity, DEFAULT_RANK_TOL, DEFAULT_TAU_ACT};
//!
//! let m = build_interp_matrix(&abs_net(), &abs_data(), 0, DEFAULT_TAU_ACT)?;
//! let report = rank_and_singularity(m.values(), DEFAULT_RANK_TOL);
//! assert_eq!(report.rank, 2);
//! let fit = fit_output_layer(m.values(), &abs_data().targets().column(0).into_owned())?;
//! assert!(fit.residual < 1e-12);
//! # Ok::<(), relu_interp::Error>(())
//! ```

pub mod construct;
pub mod error;
pub mod explore;
pub mod fixtures;
pub mod interp;
pub mod linalg;
pub mod mode;
pub mod model;
pub mod routes;
pub mod solvers;
pub mod trainer;

pub use construct::{
    build_collapse_layer, build_polytope_classifier, classify, split_classes,
    verify_affine_transmission, Class, CollapseLayer, ConvexPolytope, PolytopeClassifier,
    TransmissionReport,
};
pub use error::{Error, Result};
pub use explore::{explore_decompositions, fit_subset, partition_by_cuts, Decomposition, SubsetFit};
pub use interp::{
    block_view, build_interp_matrix, necessary_condition_check, rank_and_singularity, sparsity,
    BlockGrid, InterpMatrix, NecessaryCondition, RankReport, DEFAULT_RANK_TOL,
};
pub use mode::{
    auto_group_columns, classify_block, extract_mode, normalize_mode, ModeMatrix, NormalForm,
    NormalizationResult, Symbol,
};
pub use model::{
    region_signature, zero_region_exists, Activation, AffineLayer, DataPoint, Dataset, Hyperplane,
    Network, RegionSignature, Side, Trace, ZeroRegion, DEFAULT_TAU_ACT,
};
pub use routes::{
    bijectivity_check, collapse_sets, decompose_network, disentangle_check, disentangle_matrix,
    duplicate_rows, layerwise_sparsity, region_partition, route_matrix, trace_route,
    trace_subdomain_route, CollapseReport, CollapseSet, DisentangleVerdict, DuplicateCount,
    EntanglementReason, LayerInjectivity, LayerSparsity, RegionGroup, Route,
};
pub use solvers::{
    count_combos, fit_output_layer, solve_lowdim, solve_multi_output, solve_overparam,
    BlockTriangularSystem, Enumeration, FitResult, LowDimConstraint, LowDimSolution,
    MultiFitResult, OverparamOptions, OverparamReport, OverparamSolution, SolveStatus,
};
pub use trainer::{
    initialize, output_layer_step_bound, quadratic_loss, region_occupancy, spacetime_search,
    train_full_batch, SpacetimeOutcome, TrainConfig, TrainRecord, TrainStatus, TrainTrace,
};
