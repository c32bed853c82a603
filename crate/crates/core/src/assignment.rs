//! Order-invariant target assignment for body rows.
//!
//! Target rows are padded with null rows up to the number of slots. Each
//! (slot, target) pair costs minus the summed probability the slot's greedy
//! first-cell rollout gives to the target's first-cell tokens; null targets
//! cost nothing. The minimum-cost one-to-one matching decides which target
//! each slot is trained on.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{first_cell_rollout, DecoderState, Session};
use crate::tokenizer::{TokenId, SEP};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TargetRow {
    /// Content tokens of a real row (cells joined by SEP, no terminal).
    Real(Vec<TokenId>),
    Null,
}

impl TargetRow {
    /// Tokens strictly before the first SEP; empty for null rows.
    pub fn first_cell(&self) -> &[TokenId] {
        match self {
            TargetRow::Real(t) => {
                let end = t.iter().position(|&x| x == SEP).unwrap_or(t.len());
                &t[..end]
            }
            TargetRow::Null => &[],
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, TargetRow::Null)
    }
}

/// Exactly `slots` target rows: the real ones followed by null padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedTargets {
    pub rows: Vec<TargetRow>,
}

impl PaddedTargets {
    pub fn new(real: Vec<Vec<TokenId>>, slots: usize) -> Result<Self> {
        if real.len() > slots {
            return Err(Error::Data(format!(
                "{} target rows exceed {} row slots",
                real.len(),
                slots
            )));
        }
        let mut rows: Vec<TargetRow> = real.into_iter().map(TargetRow::Real).collect();
        rows.resize(slots, TargetRow::Null);
        Ok(Self { rows })
    }

    pub fn from_rows(rows: Vec<TargetRow>) -> Self {
        Self { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn first_cell_len(&self, j: usize) -> usize {
        self.rows[j].first_cell().len()
    }

    pub fn max_first_cell_len(&self) -> usize {
        (0..self.rows.len()).map(|j| self.first_cell_len(j)).max().unwrap_or(0)
    }

    pub fn real_count(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_null()).count()
    }
}

/// Square matrix of finite costs; entry `(m, j)` prices slot `m` taking target `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::Shape {
                    op: "cost_matrix",
                    left: vec![n, n],
                    right: vec![i, r.len()],
                });
            }
            if let Some(v) = r.iter().find(|v| !v.is_finite()) {
                return Err(Error::Data(format!("cost matrix row {i} holds non-finite {v}")));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, m: usize, j: usize) -> f64 {
        self.data[m * self.n + j]
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.data[m * self.n..(m + 1) * self.n]
    }

    /// Sum of `C[m, perm[m]]` taken in slot order.
    pub fn cost_of(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(m, &j)| self.get(m, j)).sum()
    }

    /// Aligned text rendering, marking the assigned entry of each row with `*`.
    pub fn dump(&self, assignment: Option<&Assignment>) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:>6}", "");
        for j in 0..self.n {
            let _ = write!(out, " {:>10}", format!("t{j}"));
        }
        out.push('\n');
        for m in 0..self.n {
            let _ = write!(out, "{:>6}", format!("s{m}"));
            for j in 0..self.n {
                let mark = match assignment {
                    Some(a) if a.perm[m] == j => "*",
                    _ => " ",
                };
                let _ = write!(out, " {:>9.5}{}", self.get(m, j), mark);
            }
            out.push('\n');
        }
        if let Some(a) = assignment {
            let _ = writeln!(out, "total {:.6}", a.total_cost);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// `perm[m]` is the target index given to slot `m`.
    pub perm: Vec<usize>,
    pub total_cost: f64,
}

/// `C(m, j) = -sum_k P^m_k(y^j_k)` over the first-cell tokens of real target
/// `j`, and 0 for null targets. `dists[m][k]` is slot `m`'s distribution at step `k`.
pub fn build_cost_matrix(dists: &[Vec<Vec<f64>>], targets: &PaddedTargets) -> Result<CostMatrix> {
    let n = targets.len();
    if dists.len() != n {
        return Err(Error::Shape {
            op: "build_cost_matrix",
            left: vec![dists.len()],
            right: vec![n],
        });
    }
    let mut rows = Vec::with_capacity(n);
    for (m, dist) in dists.iter().enumerate() {
        let mut row = Vec::with_capacity(n);
        for target in &targets.rows {
            let first = target.first_cell();
            if target.is_null() {
                row.push(0.0);
                continue;
            }
            if dist.len() < first.len() {
                return Err(Error::Data(format!(
                    "rollout of slot {m} has {} steps but a first cell needs {}",
                    dist.len(),
                    first.len()
                )));
            }
            let mut c = 0.0;
            for (k, &tok) in first.iter().enumerate() {
                let p = dist[k]
                    .get(tok as usize)
                    .copied()
                    .ok_or_else(|| Error::Index(format!("token {tok} outside distribution")))?;
                c -= p;
            }
            row.push(c);
        }
        rows.push(row);
    }
    CostMatrix::new(rows)
}

/// Minimum-cost perfect matching.
///
/// Shortest augmenting paths with potentials find an optimum and an optimal
/// dual; among all optimal matchings (exactly the perfect matchings on tight
/// edges of that dual) the lexicographically smallest permutation is returned.
pub fn hungarian(c: &CostMatrix) -> Assignment {
    let n = c.size();
    if n == 0 {
        return Assignment {
            perm: Vec::new(),
            total_cost: 0.0,
        };
    }
    let (u, v) = solve_duals(c);
    let scale = c.data.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    let tol = 1e-9 * scale;
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| (c.get(i, j) - u[i] - v[j]).abs() <= tol).collect())
        .collect();
    let perm = lexicographic_matching(&tight);
    Assignment {
        total_cost: c.cost_of(&perm),
        perm,
    }
}

/// Row and column potentials of an optimal dual (`u[i] + v[j] <= C[i][j]`).
fn solve_duals(c: &CostMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = c.size();
    let inf = f64::INFINITY;
    // 1-based with a phantom column 0.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = c.get(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (u[1..].to_vec(), v[1..].to_vec())
}

/// Lexicographically smallest perfect matching within `allowed`, which must admit one.
fn lexicographic_matching(allowed: &[Vec<bool>]) -> Vec<usize> {
    let n = allowed.len();
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    let mut col_used = vec![false; n];
    for m in 0..n {
        let mut chosen = None;
        for j in 0..n {
            if col_used[j] || !allowed[m][j] {
                continue;
            }
            col_used[j] = true;
            if has_perfect_matching(allowed, m + 1, &col_used) {
                chosen = Some(j);
                break;
            }
            col_used[j] = false;
        }
        // A perfect matching always extends the prefix; fall back defensively
        // to the first free column should rounding have broken tightness.
        let j = chosen.unwrap_or_else(|| {
            let j = (0..n).find(|&j| !col_used[j]).expect("a free column remains");
            col_used[j] = true;
            j
        });
        fixed.push(j);
    }
    fixed
}

/// Whether rows `from..n` can be matched to the unused columns (Kuhn's algorithm).
fn has_perfect_matching(allowed: &[Vec<bool>], from: usize, col_used: &[bool]) -> bool {
    let n = allowed.len();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    fn augment(row: usize, allowed: &[Vec<bool>], col_used: &[bool], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for j in 0..allowed.len() {
            if col_used[j] || !allowed[row][j] || seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|r| augment(r, allowed, col_used, seen, owner)) {
                owner[j] = Some(row);
                return true;
            }
        }
        false
    }
    for row in from..n {
        let mut seen = vec![false; n];
        if !augment(row, allowed, col_used, &mut seen, &mut owner) {
            return false;
        }
    }
    true
}

/// Rolls out the first cells of every slot, prices them against `targets`
/// and solves the matching. `state` must hold the finished header; the
/// rollout runs one step beyond the longest target first cell.
pub fn assign_targets(session: &mut Session<'_>, state: &DecoderState, targets: &PaddedTargets) -> Result<(Assignment, CostMatrix)> {
    let steps = targets.max_first_cell_len() + 1;
    let dists = first_cell_rollout(session, state, steps)?;
    let cost = build_cost_matrix(&dists, targets)?;
    Ok((hungarian(&cost), cost))
}
