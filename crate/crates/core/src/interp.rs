//! Interpolation (activation) matrices and their rank / zero-structure
//! analyses.
//!
//! Row `k` of an [`InterpMatrix`] holds the post-activations of one hidden
//! layer when the network is fed data point `k`. Entries whose
//! pre-activation is `<= tau_act` are stored as exact zeros so that zero
//! counting and block classification do not depend on rounding noise.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, Network};

/// Default relative rank tolerance.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowMeta {
    pub point: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subdomain: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColMeta {
    pub layer: usize,
    pub unit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InterpMatrixJson", into = "InterpMatrixJson")]
pub struct InterpMatrix {
    values: DMatrix<f64>,
    row_meta: Vec<RowMeta>,
    col_meta: Vec<ColMeta>,
    source_layer: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct InterpMatrixJson {
    rows: usize,
    cols: usize,
    values: Vec<Vec<f64>>,
    #[serde(default)]
    row_meta: Option<Vec<RowMeta>>,
    #[serde(default)]
    col_meta: Option<Vec<ColMeta>>,
    #[serde(default)]
    source_layer: Option<usize>,
}

impl TryFrom<InterpMatrixJson> for InterpMatrix {
    type Error = Error;

    fn try_from(raw: InterpMatrixJson) -> Result<Self> {
        if raw.values.len() != raw.rows {
            return Err(Error::Parse(format!(
                "matrix declares {} rows but has {}",
                raw.rows,
                raw.values.len()
            )));
        }
        if let Some(r) = raw.values.iter().position(|r| r.len() != raw.cols) {
            return Err(Error::Parse(format!("values[{r}] does not have {} entries", raw.cols)));
        }
        let mut m = InterpMatrix::from_values(linalg::from_rows(&raw.values, raw.cols))?;
        if let Some(rm) = raw.row_meta {
            if rm.len() != raw.rows {
                return Err(Error::Parse("row_meta length differs from rows".into()));
            }
            m.row_meta = rm;
        }
        if let Some(cm) = raw.col_meta {
            if cm.len() != raw.cols {
                return Err(Error::Parse("col_meta length differs from cols".into()));
            }
            m.col_meta = cm;
        }
        m.source_layer = raw.source_layer;
        Ok(m)
    }
}

impl From<InterpMatrix> for InterpMatrixJson {
    fn from(m: InterpMatrix) -> Self {
        InterpMatrixJson {
            rows: m.values.nrows(),
            cols: m.values.ncols(),
            values: linalg::to_rows(&m.values),
            row_meta: Some(m.row_meta),
            col_meta: Some(m.col_meta),
            source_layer: m.source_layer,
        }
    }
}

impl InterpMatrix {
    /// Wraps a raw matrix (e.g. read from CSV). Entries must be finite and
    /// non-negative.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Parse(format!(
                "interpolation matrix entries must be finite and >= 0, found {v}"
            )));
        }
        let row_meta = (0..values.nrows()).map(|point| RowMeta { point, subdomain: None }).collect();
        let col_meta = (0..values.ncols()).map(|unit| ColMeta { layer: 0, unit }).collect();
        Ok(Self { values, row_meta, col_meta, source_layer: None })
    }

    pub(crate) fn with_meta(
        values: DMatrix<f64>,
        row_meta: Vec<RowMeta>,
        col_meta: Vec<ColMeta>,
        source_layer: Option<usize>,
    ) -> Result<Self> {
        if row_meta.len() != values.nrows() || col_meta.len() != values.ncols() {
            return Err(Error::InvariantViolation("matrix metadata does not match its shape".into()));
        }
        Ok(Self { values, row_meta, col_meta, source_layer })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::Parse("ragged matrix rows".into()));
        }
        Self::from_values(linalg::from_rows(rows, ncols))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row_meta(&self) -> &[RowMeta] {
        &self.row_meta
    }

    pub fn col_meta(&self) -> &[ColMeta] {
        &self.col_meta
    }

    pub fn source_layer(&self) -> Option<usize> {
        self.source_layer
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.nrows() == self.ncols()
    }

    /// Column sub-matrix keeping the given columns in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<InterpMatrix> {
        if let Some(&c) = cols.iter().find(|&&c| c >= self.ncols()) {
            return Err(Error::usage(format!("column {c} out of range")));
        }
        Ok(InterpMatrix {
            values: self.values.select_columns(cols),
            row_meta: self.row_meta.clone(),
            col_meta: cols.iter().map(|&c| self.col_meta[c]).collect(),
            source_layer: self.source_layer,
        })
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.values.row(r).iter().copied().collect()
    }

    /// Row-major CSV, no header, 17 significant digits per entry.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        for r in 0..self.nrows() {
            w.write_record(self.values.row(r).iter().map(|v| format!("{v:.16e}")))?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(input);
        let mut rows = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .enumerate()
                .map(|(c, field)| {
                    field
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("row {r}, column {c}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }
}

/// Builds the matrix of post-activations of hidden layer `layer` (0-based)
/// over every data point. For the last hidden layer this is the matrix seen
/// by the output layer.
pub fn build_interp_matrix(net: &Network, data: &Dataset, layer: usize, tau_act: f64) -> Result<InterpMatrix> {
    if layer >= net.hidden_count() {
        return Err(Error::usage(format!(
            "layer {layer} is not a hidden layer (network has {} hidden layers)",
            net.hidden_count()
        )));
    }
    if let Some(n) = data.input_dim() {
        if n != net.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "dataset input",
                expected: net.input_dim(),
                got: n,
            });
        }
    }
    let width = net.layers()[layer].out_dim();
    let mut values = DMatrix::zeros(data.len(), width);
    for (k, p) in data.points().iter().enumerate() {
        let trace = net.forward(&p.x, tau_act)?;
        values.row_mut(k).copy_from(&trace.post[layer].transpose());
    }
    let row_meta = data
        .points()
        .iter()
        .enumerate()
        .map(|(point, p)| RowMeta { point, subdomain: p.subdomain })
        .collect();
    let col_meta = (0..width).map(|unit| ColMeta { layer, unit }).collect();
    Ok(InterpMatrix { values, row_meta, col_meta, source_layer: Some(layer) })
}

/// Interpolation matrix of the last hidden layer.
pub fn last_hidden_matrix(net: &Network, data: &Dataset, tau_act: f64) -> Result<InterpMatrix> {
    if net.hidden_count() == 0 {
        return Err(Error::usage("network has no hidden layer"));
    }
    build_interp_matrix(net, data, net.hidden_count() - 1, tau_act)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankReport {
    pub rank: usize,
    pub singular: bool,
    pub min_singular_value: f64,
    pub tol_used: f64,
}

/// SVD rank with threshold `tol * sigma_max`. `singular` is only ever true
/// for square matrices.
pub fn rank_and_singularity(m: &DMatrix<f64>, tol: f64) -> RankReport {
    let sv = linalg::singular_values(m);
    let max = sv.first().copied().unwrap_or(0.0);
    let threshold = tol * max;
    let rank = if max > 0.0 { sv.iter().filter(|&&s| s > threshold).count() } else { 0 };
    let square = m.nrows() == m.ncols();
    RankReport {
        rank,
        singular: square && rank < m.nrows(),
        min_singular_value: sv.last().copied().unwrap_or(0.0),
        tol_used: threshold,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NecessaryCondition {
    Pass,
    /// `n + 2` columns without zero entries: the matrix cannot be
    /// nonsingular.
    Violation { columns: Vec<usize> },
}

/// Looks for `n + 2` columns whose entries are all positive.
pub fn necessary_condition_check(m: &DMatrix<f64>, input_dim: usize) -> Result<NecessaryCondition> {
    if m.nrows() != m.ncols() {
        return Err(Error::usage(format!(
            "necessary condition check needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let needed = input_dim + 2;
    let positive: Vec<usize> = (0..m.ncols())
        .filter(|&c| m.nrows() > 0 && m.column(c).iter().all(|&v| v > 0.0))
        .take(needed)
        .collect();
    Ok(if positive.len() == needed {
        NecessaryCondition::Violation { columns: positive }
    } else {
        NecessaryCondition::Pass
    })
}

/// Fraction of entries equal to exact zero; 0 for an empty matrix.
pub fn sparsity(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.iter().filter(|&&v| v == 0.0).count() as f64 / m.len() as f64
}

/// Checks that `parts` is a disjoint cover of `0..len`.
pub fn validate_partition(parts: &[Vec<usize>], len: usize, what: &str) -> Result<()> {
    let mut seen = vec![false; len];
    for part in parts {
        if part.is_empty() {
            return Err(Error::usage(format!("{what} partition contains an empty group")));
        }
        for &i in part {
            if i >= len {
                return Err(Error::usage(format!("{what} partition index {i} out of range 0..{len}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::usage(format!("{what} partition uses index {i} twice")));
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::usage(format!("{what} partition misses index {i}")));
    }
    Ok(())
}

/// Grid of blocks `B[nu][mu]`: rows of group `nu`, columns of group `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    pub row_partition: Vec<Vec<usize>>,
    pub col_partition: Vec<Vec<usize>>,
    pub blocks: Vec<Vec<DMatrix<f64>>>,
}

impl BlockGrid {
    pub fn block(&self, nu: usize, mu: usize) -> &DMatrix<f64> {
        &self.blocks[nu][mu]
    }

    /// Scatters every block back to its original positions.
    pub fn reassemble(&self) -> DMatrix<f64> {
        let rows = self.row_partition.iter().map(Vec::len).sum();
        let cols = self.col_partition.iter().map(Vec::len).sum();
        let mut m = DMatrix::zeros(rows, cols);
        for (nu, rp) in self.row_partition.iter().enumerate() {
            for (mu, cp) in self.col_partition.iter().enumerate() {
                let b = &self.blocks[nu][mu];
                for (i, &r) in rp.iter().enumerate() {
                    for (j, &c) in cp.iter().enumerate() {
                        m[(r, c)] = b[(i, j)];
                    }
                }
            }
        }
        m
    }
}

pub fn block_view(m: &DMatrix<f64>, row_partition: &[Vec<usize>], col_partition: &[Vec<usize>]) -> Result<BlockGrid> {
    validate_partition(row_partition, m.nrows(), "row")?;
    validate_partition(col_partition, m.ncols(), "column")?;
    let blocks = row_partition
        .iter()
        .map(|rp| {
            col_partition
                .iter()
                .map(|cp| DMatrix::from_fn(rp.len(), cp.len(), |i, j| m[(rp[i], cp[j])]))
                .collect()
        })
        .collect();
    Ok(BlockGrid {
        row_partition: row_partition.to_vec(),
        col_partition: col_partition.to_vec(),
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{abs_data, abs_net};
    use crate::model::{Activation, AffineLayer, Dataset};
    use nalgebra::DVector;

    fn abs_matrix() -> InterpMatrix {
        build_interp_matrix(&abs_net(), &abs_data(), 0, 1e-9).unwrap()
    }

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        let v: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        linalg::from_rows(&v, v[0].len())
    }

    #[test]
    fn abs_net_matrix() {
        let m = abs_matrix();
        assert_eq!(m.values(), &mat(&[&[0.0, 1.0], &[0.0, 0.0], &[2.0, 0.0]]));
        assert_eq!(m.col_meta()[1], ColMeta { layer: 0, unit: 1 });
    }

    #[test]
    fn empty_dataset_gives_zero_rows() {
        let m = build_interp_matrix(&abs_net(), &Dataset::default(), 0, 1e-9).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (0, 2));
        assert_eq!(sparsity(m.values()), 0.0);
    }

    #[test]
    fn output_layer_is_not_hidden() {
        assert!(matches!(
            build_interp_matrix(&abs_net(), &abs_data(), 1, 1e-9),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn collapsed_rows_equal_relu_of_second_layer_bias() {
        // Layer 1 kills every x <= 0; layer 2 then sees the zero vector.
        let l1 = AffineLayer::new(DMatrix::from_row_slice(2, 1, &[1.0, 2.0]), DVector::zeros(2), Activation::Relu).unwrap();
        let l2 = AffineLayer::new(
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.5, 0.5]),
            DVector::from_vec(vec![0.3, -0.2]),
            Activation::Relu,
        )
        .unwrap();
        let out = AffineLayer::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::zeros(1), Activation::Linear).unwrap();
        let net = Network::new(1, vec![l1, l2, out]).unwrap();
        let data = Dataset::from_xy(
            vec![vec![-1.0], vec![-3.0], vec![2.0]],
            vec![vec![0.0]; 3],
        )
        .unwrap();
        let m = build_interp_matrix(&net, &data, 1, 1e-9).unwrap();
        assert_eq!(m.row(0), vec![0.3, 0.0]);
        assert_eq!(m.row(0), m.row(1));
    }

    #[test]
    fn rank_examples() {
        let r = rank_and_singularity(abs_matrix().values(), DEFAULT_RANK_TOL);
        assert_eq!(r.rank, 2);
        assert!(!r.singular);

        let r = rank_and_singularity(&DMatrix::identity(3, 3), DEFAULT_RANK_TOL);
        assert_eq!(r.rank, 3);
        assert!(!r.singular);
        assert_eq!(r.min_singular_value, 1.0);

        // Four always-active units on one-dimensional input.
        let hidden = AffineLayer::new(
            DMatrix::from_row_slice(4, 1, &[1.0, 2.0, -1.0, 0.5]),
            DVector::from_vec(vec![5.0, 6.0, 7.0, 8.0]),
            Activation::Relu,
        )
        .unwrap();
        let out = AffineLayer::new(DMatrix::from_element(1, 4, 1.0), DVector::zeros(1), Activation::Linear).unwrap();
        let net = Network::new(1, vec![hidden, out]).unwrap();
        let data = Dataset::from_xy(
            vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]],
            vec![vec![0.0]; 4],
        )
        .unwrap();
        let m = build_interp_matrix(&net, &data, 0, 1e-9).unwrap();
        assert!(m.values().iter().all(|&v| v > 0.0));
        let r = rank_and_singularity(m.values(), DEFAULT_RANK_TOL);
        assert!(r.rank <= 2);
        assert!(r.singular);
    }

    #[test]
    fn necessary_condition_examples() {
        let v = necessary_condition_check(&mat(&[&[1.0, 1.0, 1.0], &[2.0, 1.0, 3.0], &[1.0, 4.0, 1.0]]), 1).unwrap();
        assert_eq!(v, NecessaryCondition::Violation { columns: vec![0, 1, 2] });
        let p = necessary_condition_check(&mat(&[&[1.0, 0.0, 1.0], &[2.0, 1.0, 0.0], &[0.0, 4.0, 1.0]]), 1).unwrap();
        assert_eq!(p, NecessaryCondition::Pass);
        let p = necessary_condition_check(&DMatrix::from_element(3, 3, 1.0), 5).unwrap();
        assert_eq!(p, NecessaryCondition::Pass);
        assert!(necessary_condition_check(abs_matrix().values(), 1).is_err());
    }

    #[test]
    fn sparsity_examples() {
        assert_eq!(sparsity(abs_matrix().values()), 4.0 / 6.0);
        assert_eq!(sparsity(&DMatrix::zeros(2, 2)), 1.0);
        assert_eq!(sparsity(&DMatrix::from_element(2, 2, 3.0)), 0.0);
    }

    #[test]
    fn block_view_examples() {
        let g = block_view(&DMatrix::identity(2, 2), &[vec![0], vec![1]], &[vec![0], vec![1]]).unwrap();
        assert_eq!(g.blocks.len(), 2);
        assert!(g.blocks.iter().flatten().all(|b| b.shape() == (1, 1)));

        let m = abs_matrix();
        let g = block_view(m.values(), &[vec![0, 1], vec![2]], &[vec![0], vec![1]]).unwrap();
        assert_eq!(g.block(0, 0), &mat(&[&[0.0], &[0.0]]));
        assert_eq!(g.block(0, 1), &mat(&[&[1.0], &[0.0]]));
        assert_eq!(g.block(1, 0), &mat(&[&[2.0]]));
        assert_eq!(g.block(1, 1), &mat(&[&[0.0]]));
        assert_eq!(&g.reassemble(), m.values());
    }

    #[test]
    fn bad_partitions() {
        let m = DMatrix::<f64>::identity(3, 3);
        let cols = [vec![0, 1, 2]];
        assert!(block_view(&m, &[vec![0, 1], vec![1, 2]], &cols).is_err());
        assert!(block_view(&m, &[vec![0, 1]], &cols).is_err());
        assert!(block_view(&m, &[vec![0, 1, 2, 3]], &cols).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let m = InterpMatrix::from_values(DMatrix::from_fn(3, 4, |r, c| {
            ((r * 7 + c) as f64).sqrt() / 3.0 + 1e-17 * c as f64
        }))
        .unwrap();
        let text = m.to_csv_string();
        let back = InterpMatrix::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.values(), m.values());
    }

    #[test]
    fn json_keeps_metadata() {
        let m = abs_matrix();
        let json = serde_json::to_string(&m).unwrap();
        let back: InterpMatrix = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix_and_partitions() -> impl Strategy<Value = (DMatrix<f64>, Vec<Vec<usize>>, Vec<Vec<usize>>)> {
            (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
                (
                    prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..10.0], r * c),
                    prop::collection::vec(0usize..3, r),
                    prop::collection::vec(0usize..3, c),
                )
                    .prop_map(move |(vals, rg, cg)| {
                        let m = DMatrix::from_vec(r, c, vals);
                        (m, groups(&rg), groups(&cg))
                    })
            })
        }

        fn groups(labels: &[usize]) -> Vec<Vec<usize>> {
            (0..3)
                .map(|g| (0..labels.len()).filter(|&i| labels[i] == g).collect::<Vec<_>>())
                .filter(|g| !g.is_empty())
                .collect()
        }

        proptest! {
            #[test]
            fn block_view_reassembles_exactly((m, rp, cp) in matrix_and_partitions()) {
                let g = block_view(&m, &rp, &cp).unwrap();
                prop_assert_eq!(g.reassemble(), m);
            }
        }
    }
}
