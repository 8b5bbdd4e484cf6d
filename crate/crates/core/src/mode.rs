//! Symbolic activation modes of block-partitioned interpolation matrices and
//! their lower-triangular normal forms.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{block_view, validate_partition};

/// Largest block count accepted by [`normalize_mode`].
pub const MAX_NORMALIZE_BLOCKS: usize = 12;

/// Classification of one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Symbol {
    /// Every entry positive.
    #[serde(rename = "P")]
    P,
    /// Every entry zero.
    #[serde(rename = "0")]
    Z,
    /// Mixed entries, no all-zero column.
    #[serde(rename = "U")]
    U,
    /// Mixed entries with at least one all-zero column.
    #[serde(rename = "0'")]
    Zp,
}

impl Symbol {
    pub const ALL: [Symbol; 4] = [Symbol::P, Symbol::Z, Symbol::U, Symbol::Zp];

    pub fn as_str(self) -> &'static str {
        match self {
            Symbol::P => "P",
            Symbol::Z => "0",
            Symbol::U => "U",
            Symbol::Zp => "0'",
        }
    }

    /// `Z` is the special case of `Zp` where every column is zero.
    pub fn is_zero_like(self) -> bool {
        matches!(self, Symbol::Z | Symbol::Zp)
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `P` if every entry is `> tau_act`, else `0` if every entry is `<= tau_act`,
/// else `0'` if some column is entirely `<= tau_act`, else `U`.
pub fn classify_block(block: &DMatrix<f64>, tau_act: f64) -> Result<Symbol> {
    if block.is_empty() {
        return Err(Error::usage("cannot classify an empty block"));
    }
    let positive = |v: &f64| *v > tau_act;
    Ok(if block.iter().all(positive) {
        Symbol::P
    } else if !block.iter().any(positive) {
        Symbol::Z
    } else if block.column_iter().any(|c| !c.iter().any(positive)) {
        Symbol::Zp
    } else {
        Symbol::U
    })
}

/// `N x M` grid of block symbols. Serialised as a bare grid of strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Symbol>>", into = "Vec<Vec<Symbol>>")]
pub struct ModeMatrix {
    symbols: Vec<Vec<Symbol>>,
    row_labels: Vec<usize>,
    col_labels: Vec<usize>,
}

impl TryFrom<Vec<Vec<Symbol>>> for ModeMatrix {
    type Error = Error;

    fn try_from(grid: Vec<Vec<Symbol>>) -> Result<Self> {
        ModeMatrix::new(grid)
    }
}

impl From<ModeMatrix> for Vec<Vec<Symbol>> {
    fn from(m: ModeMatrix) -> Self {
        m.symbols
    }
}

impl ModeMatrix {
    /// Grid with default labels `0..N` and `0..M`.
    pub fn new(symbols: Vec<Vec<Symbol>>) -> Result<Self> {
        let cols = symbols.first().map(Vec::len).unwrap_or(0);
        if symbols.iter().any(|r| r.len() != cols) {
            return Err(Error::Parse("mode matrix rows differ in length".into()));
        }
        Ok(Self {
            row_labels: (0..symbols.len()).collect(),
            col_labels: (0..cols).collect(),
            symbols,
        })
    }

    /// Parses a whitespace separated grid such as `"P 0\nU P"`.
    pub fn parse(text: &str) -> Result<Self> {
        let grid = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split_whitespace()
                    .map(|t| match t {
                        "P" => Ok(Symbol::P),
                        "0" => Ok(Symbol::Z),
                        "U" => Ok(Symbol::U),
                        "0'" => Ok(Symbol::Zp),
                        other => Err(Error::Parse(format!("unknown mode symbol {other:?}"))),
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<Symbol>>>>()?;
        Self::new(grid)
    }

    pub fn symbols(&self) -> &[Vec<Symbol>] {
        &self.symbols
    }

    pub fn row_labels(&self) -> &[usize] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[usize] {
        &self.col_labels
    }

    pub fn nrows(&self) -> usize {
        self.symbols.len()
    }

    pub fn ncols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn get(&self, r: usize, c: usize) -> Symbol {
        self.symbols[r][c]
    }

    /// `out[i][j] = self[row_perm[i]][col_perm[j]]`, labels permuted alike.
    pub fn permuted(&self, row_perm: &[usize], col_perm: &[usize]) -> ModeMatrix {
        ModeMatrix {
            symbols: row_perm
                .iter()
                .map(|&r| col_perm.iter().map(|&c| self.symbols[r][c]).collect())
                .collect(),
            row_labels: row_perm.iter().map(|&r| self.row_labels[r]).collect(),
            col_labels: col_perm.iter().map(|&c| self.col_labels[c]).collect(),
        }
    }

    /// Symbols equal, ignoring labels.
    pub fn same_symbols(&self, other: &ModeMatrix) -> bool {
        self.symbols == other.symbols
    }

    /// Whether the grid is already in `form` (square, `P` diagonal, strict
    /// upper triangle `0`, or `0`/`0'` for the relaxed form).
    pub fn is_in_form(&self, form: NormalForm) -> bool {
        let Some(allowed) = form.upper_allowed() else {
            return false;
        };
        let n = self.nrows();
        n == self.ncols()
            && (0..n).all(|i| {
                self.symbols[i][i] == Symbol::P && (i + 1..n).all(|j| allowed(self.symbols[i][j]))
            })
    }
}

impl fmt::Display for ModeMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.symbols {
            let cells: Vec<String> = row.iter().map(|s| format!("{:<2}", s.as_str())).collect();
            writeln!(f, "{}", cells.join(" ").trim_end())?;
        }
        Ok(())
    }
}

/// `symbols[nu][mu] = classify_block(B[nu][mu])`. Rows are subdomains,
/// columns are unit groups.
pub fn extract_mode(
    m: &DMatrix<f64>,
    row_partition: &[Vec<usize>],
    col_partition: &[Vec<usize>],
    tau_act: f64,
) -> Result<ModeMatrix> {
    let grid = block_view(m, row_partition, col_partition)?;
    let symbols = grid
        .blocks
        .iter()
        .map(|row| row.iter().map(|b| classify_block(b, tau_act)).collect())
        .collect::<Result<Vec<Vec<Symbol>>>>()?;
    ModeMatrix::new(symbols)
}

/// Groups columns by the set of row groups that activate them (some row of
/// the group has an entry `> tau_act`). Groups are ordered by their first
/// column.
pub fn auto_group_columns(m: &DMatrix<f64>, row_partition: &[Vec<usize>], tau_act: f64) -> Result<Vec<Vec<usize>>> {
    validate_partition(row_partition, m.nrows(), "row")?;
    let mut signatures: Vec<Vec<bool>> = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for c in 0..m.ncols() {
        let sig: Vec<bool> = row_partition
            .iter()
            .map(|rows| rows.iter().any(|&r| m[(r, c)] > tau_act))
            .collect();
        match signatures.iter().position(|s| *s == sig) {
            Some(g) => groups[g].push(c),
            None => {
                signatures.push(sig);
                groups.push(vec![c]);
            }
        }
    }
    Ok(groups)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalForm {
    /// `P` diagonal, strict upper triangle `0`.
    StrictLowerTriangularPDiag,
    /// `P` diagonal, strict upper triangle `0` or `0'`.
    RelaxedLowerTriangular,
    Failed,
}

impl NormalForm {
    fn upper_allowed(self) -> Option<fn(Symbol) -> bool> {
        match self {
            NormalForm::StrictLowerTriangularPDiag => Some(|s| s == Symbol::Z),
            NormalForm::RelaxedLowerTriangular => Some(Symbol::is_zero_like),
            NormalForm::Failed => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NormalizationResult {
    pub row_perm: Vec<usize>,
    pub col_perm: Vec<usize>,
    pub normalized: ModeMatrix,
    pub achieved_form: NormalForm,
}

/// Searches row and column permutations bringing `mode` into the strict
/// form, or failing that the relaxed form. Among valid permutation pairs the
/// lexicographically smallest row permutation wins, then the smallest column
/// permutation. On failure the permutations are the identity.
pub fn normalize_mode(mode: &ModeMatrix) -> Result<NormalizationResult> {
    let n = mode.nrows();
    let identity = |k: usize| (0..k).collect::<Vec<_>>();
    let failed = || NormalizationResult {
        row_perm: identity(mode.nrows()),
        col_perm: identity(mode.ncols()),
        normalized: mode.clone(),
        achieved_form: NormalForm::Failed,
    };
    if n != mode.ncols() {
        return Ok(failed());
    }
    if n > MAX_NORMALIZE_BLOCKS {
        return Err(Error::Budget(format!(
            "normal-form search supports at most {MAX_NORMALIZE_BLOCKS} blocks, got {n}"
        )));
    }
    for form in [NormalForm::StrictLowerTriangularPDiag, NormalForm::RelaxedLowerTriangular] {
        let allowed = form.upper_allowed().expect("searchable form");
        let search = PermutationSearch::new(mode, allowed);
        if let Some((row_perm, col_perm)) = search.run() {
            let normalized = mode.permuted(&row_perm, &col_perm);
            return Ok(NormalizationResult { row_perm, col_perm, normalized, achieved_form: form });
        }
    }
    Ok(failed())
}

/// Backtracking over row orders. A row order `r_0..r_{n-1}` admits a column
/// assignment iff the bipartite graph "position `i` may take column `c` when
/// `m[r_i][c] = P` and `m[r_k][c]` is allowed for all `k < i`" has a perfect
/// matching. Prefixes are pruned with the relaxation that places every
/// remaining row after the whole prefix.
struct PermutationSearch {
    n: usize,
    /// `p[r]`: bitmask of columns where row `r` has `P`.
    p: Vec<u32>,
    /// `a[r]`: bitmask of columns where row `r` has an allowed upper symbol.
    a: Vec<u32>,
}

impl PermutationSearch {
    fn new(mode: &ModeMatrix, allowed: fn(Symbol) -> bool) -> Self {
        let n = mode.nrows();
        let mask = |r: usize, f: &dyn Fn(Symbol) -> bool| {
            (0..n).filter(|&c| f(mode.get(r, c))).fold(0u32, |m, c| m | (1 << c))
        };
        Self {
            n,
            p: (0..n).map(|r| mask(r, &|s| s == Symbol::P)).collect(),
            a: (0..n).map(|r| mask(r, &allowed)).collect(),
        }
    }

    fn run(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        let mut prefix = Vec::with_capacity(self.n);
        if !self.dfs(&mut prefix) {
            return None;
        }
        let cols = self.smallest_columns(&prefix)?;
        Some((prefix, cols))
    }

    fn dfs(&self, prefix: &mut Vec<usize>) -> bool {
        if prefix.len() == self.n {
            return true;
        }
        for r in 0..self.n {
            if prefix.contains(&r) {
                continue;
            }
            prefix.push(r);
            if self.feasible(prefix) && self.dfs(prefix) {
                return true;
            }
            prefix.pop();
        }
        false
    }

    /// Candidate columns for every slot: the prefix positions in order, then
    /// the remaining rows constrained by the whole prefix.
    fn slot_masks(&self, prefix: &[usize]) -> Vec<u32> {
        let mut masks = Vec::with_capacity(self.n);
        let mut above = u32::MAX;
        for &r in prefix {
            masks.push(self.p[r] & above);
            above &= self.a[r];
        }
        for r in (0..self.n).filter(|r| !prefix.contains(r)) {
            masks.push(self.p[r] & above);
        }
        masks
    }

    fn feasible(&self, prefix: &[usize]) -> bool {
        perfect_matching(&self.slot_masks(prefix), 0).is_some()
    }

    /// Lexicographically smallest column assignment for a complete row order.
    fn smallest_columns(&self, rows: &[usize]) -> Option<Vec<usize>> {
        let masks = self.slot_masks(rows);
        let mut chosen = Vec::with_capacity(self.n);
        let mut used = 0u32;
        for i in 0..self.n {
            let pick = (0..self.n).find(|&c| {
                if masks[i] & !used & (1 << c) == 0 {
                    return false;
                }
                let rest: Vec<u32> = masks[i + 1..].to_vec();
                perfect_matching(&rest, used | (1 << c)).is_some()
            })?;
            used |= 1 << pick;
            chosen.push(pick);
        }
        Some(chosen)
    }
}

/// Kuhn's augmenting-path matching of slots to columns not in `blocked`.
fn perfect_matching(masks: &[u32], blocked: u32) -> Option<Vec<usize>> {
    let mut owner: [Option<usize>; 32] = [None; 32];
    fn augment(slot: usize, masks: &[u32], blocked: u32, seen: &mut u32, owner: &mut [Option<usize>; 32]) -> bool {
        let mut cand = masks[slot] & !blocked & !*seen;
        while cand != 0 {
            let c = cand.trailing_zeros() as usize;
            cand &= cand - 1;
            *seen |= 1 << c;
            if owner[c].is_none_or(|other| augment(other, masks, blocked, seen, owner)) {
                owner[c] = Some(slot);
                return true;
            }
        }
        false
    }
    for slot in 0..masks.len() {
        let mut seen = 0u32;
        if !augment(slot, masks, blocked, &mut seen, &mut owner) {
            return None;
        }
    }
    let mut assignment = vec![0; masks.len()];
    for (c, o) in owner.iter().enumerate() {
        if let Some(s) = o {
            assignment[*s] = c;
        }
    }
    Some(assignment)
}
