//! Two-phase dense tableau simplex with Bland's rule.
//!
//! Bland's rule (lowest eligible index for both entering and leaving
//! variables) guarantees termination without cycling and makes every solve
//! deterministic. Before introducing artificial variables, rows are crashed
//! onto structural unit columns when possible; the policy LPs produced by
//! this crate then start from a feasible basis and skip phase 1 entirely.

use super::{LpInstance, LpSolution, LpStatus, Relation};

const TOL_ENTER: f64 = 1e-9;
const TOL_PIVOT: f64 = 1e-9;
const TOL_FEAS: f64 = 1e-8;

/// Mapping from an original variable to its column(s) in the tableau.
enum VarMap {
    /// Column holds `x - lower`.
    Shifted { col: usize, lower: f64 },
    /// Free variable split as `x = plus - minus`.
    Split { plus: usize, minus: usize },
}

pub(super) fn solve(lp: &LpInstance) -> LpSolution {
    let n_orig = lp.n_vars();
    let (lower, upper) = lp.bounds();

    // Expand variables: shift finite lower bounds to zero, split free
    // variables, and queue finite upper bounds as extra rows.
    let mut maps = Vec::with_capacity(n_orig);
    let mut n_cols = 0usize;
    for j in 0..n_orig {
        if lower[j].is_finite() {
            maps.push(VarMap::Shifted {
                col: n_cols,
                lower: lower[j],
            });
            n_cols += 1;
        } else {
            maps.push(VarMap::Split {
                plus: n_cols,
                minus: n_cols + 1,
            });
            n_cols += 2;
        }
    }

    // Dense rows over the expanded structural columns.
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rels: Vec<Relation> = Vec::new();
    let mut rhss: Vec<f64> = Vec::new();

    for con in lp.constraints() {
        let mut row = vec![0.0; n_cols];
        let mut rhs = con.rhs;
        for &(v, c) in &con.coeffs {
            match &maps[v.0] {
                VarMap::Shifted { col, lower } => {
                    row[*col] += c;
                    rhs -= c * lower;
                }
                VarMap::Split { plus, minus } => {
                    row[*plus] += c;
                    row[*minus] -= c;
                }
            }
        }
        rows.push(row);
        rels.push(con.relation);
        rhss.push(rhs);
    }
    for j in 0..n_orig {
        if upper[j].is_finite() {
            let mut row = vec![0.0; n_cols];
            let mut rhs = upper[j];
            match &maps[j] {
                VarMap::Shifted { col, lower } => {
                    row[*col] = 1.0;
                    rhs -= lower;
                }
                VarMap::Split { plus, minus } => {
                    row[*plus] = 1.0;
                    row[*minus] = -1.0;
                }
            }
            rows.push(row);
            rels.push(Relation::Le);
            rhss.push(rhs);
        }
    }

    // Normalize right-hand sides to be nonnegative.
    for i in 0..rows.len() {
        if rhss[i] < 0.0 {
            for a in rows[i].iter_mut() {
                *a = -*a;
            }
            rhss[i] = -rhss[i];
            rels[i] = match rels[i] {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            };
        }
    }

    let m = rows.len();

    // Count nonzeros per structural column to detect crashable unit columns.
    let mut nnz = vec![0usize; n_cols];
    let mut unit_row = vec![usize::MAX; n_cols];
    for (i, row) in rows.iter().enumerate() {
        for (j, &a) in row.iter().enumerate() {
            if a != 0.0 {
                nnz[j] += 1;
                unit_row[j] = i;
            }
        }
    }

    // Column layout: structural | slack+surplus | artificial | rhs.
    let n_slack = rels
        .iter()
        .filter(|r| !matches!(r, Relation::Eq))
        .count();
    let mut basis = vec![usize::MAX; m];
    let mut slack_col_of_row = vec![usize::MAX; m];
    let mut next_slack = n_cols;
    for i in 0..m {
        match rels[i] {
            Relation::Le => {
                basis[i] = next_slack;
                slack_col_of_row[i] = next_slack;
                next_slack += 1;
            }
            Relation::Ge => {
                slack_col_of_row[i] = next_slack;
                next_slack += 1;
            }
            Relation::Eq => {}
        }
    }
    debug_assert_eq!(next_slack, n_cols + n_slack);

    // Crash uncovered rows onto structural unit columns where possible.
    let mut col_used = vec![false; n_cols];
    for i in 0..m {
        if basis[i] != usize::MAX {
            continue;
        }
        for j in 0..n_cols {
            if nnz[j] == 1 && unit_row[j] == i && rows[i][j] == 1.0 && !col_used[j] {
                basis[i] = j;
                col_used[j] = true;
                break;
            }
        }
    }

    let art_rows: Vec<usize> = (0..m).filter(|&i| basis[i] == usize::MAX).collect();
    let n_art = art_rows.len();
    let width = n_cols + n_slack + n_art + 1;
    let rhs_col = width - 1;

    // Assemble the tableau.
    let mut t: Vec<Vec<f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let mut row = vec![0.0; width];
        row[..n_cols].copy_from_slice(&rows[i]);
        match rels[i] {
            Relation::Le => row[slack_col_of_row[i]] = 1.0,
            Relation::Ge => row[slack_col_of_row[i]] = -1.0,
            Relation::Eq => {}
        }
        row[rhs_col] = rhss[i];
        t.push(row);
    }
    for (a, &i) in art_rows.iter().enumerate() {
        let col = n_cols + n_slack + a;
        t[i][col] = 1.0;
        basis[i] = col;
    }
    let art_start = n_cols + n_slack;

    // Normalize crashed basic columns (coefficient is exactly 1 in their row
    // and 0 elsewhere by construction, so nothing to eliminate), and make
    // sure crashed rows are consistent for rows where the same structural
    // column appeared with other entries. The crash predicate above already
    // guarantees single-nonzero columns.

    // Phase 1: drive the artificial variables to zero.
    if n_art > 0 {
        let mut d = vec![0.0; width];
        for i in 0..m {
            if basis[i] >= art_start {
                let row = t[i].clone();
                for (dj, rj) in d.iter_mut().zip(row.iter()) {
                    *dj -= rj;
                }
            }
        }
        // Artificial columns price to zero for their own basic rows.
        for (a, _) in art_rows.iter().enumerate() {
            d[art_start + a] += 1.0;
        }
        let status = run_simplex(&mut t, &mut basis, &mut d, rhs_col, width, None);
        debug_assert!(status != SimplexOutcome::Unbounded);
        if d[rhs_col] < -TOL_FEAS {
            return LpSolution {
                status: LpStatus::Infeasible,
                objective_value: f64::NAN,
                values: vec![f64::NAN; n_orig],
            };
        }
        // Pivot remaining artificial variables out of the basis, dropping
        // redundant rows.
        let mut drop_rows = Vec::new();
        for i in 0..m {
            if basis[i] < art_start {
                continue;
            }
            let mut pivoted = false;
            for j in 0..art_start {
                if t[i][j].abs() > TOL_PIVOT {
                    pivot_slice(&mut t, &mut d, i, j);
                    basis[i] = j;
                    pivoted = true;
                    break;
                }
            }
            if !pivoted {
                drop_rows.push(i);
            }
        }
        if !drop_rows.is_empty() {
            let mut keep = vec![true; t.len()];
            for &i in &drop_rows {
                keep[i] = false;
            }
            let mut idx = 0;
            t.retain(|_| {
                let k = keep[idx];
                idx += 1;
                k
            });
            let mut idx = 0;
            basis.retain(|_| {
                let k = keep[idx];
                idx += 1;
                k
            });
        }
    }

    // Phase 2: optimize the real objective over the expanded columns.
    let obj = lp.objective();
    let mut d = vec![0.0; width];
    let mut cost = vec![0.0; width];
    for j in 0..n_orig {
        match &maps[j] {
            VarMap::Shifted { col, .. } => cost[*col] += obj[j],
            VarMap::Split { plus, minus } => {
                cost[*plus] += obj[j];
                cost[*minus] -= obj[j];
            }
        }
    }
    for j in 0..width - 1 {
        d[j] = -cost[j];
    }
    for (i, &b) in basis.iter().enumerate() {
        let cb = cost[b];
        if cb != 0.0 {
            let row = t[i].clone();
            for (dj, rj) in d.iter_mut().zip(row.iter()) {
                *dj += cb * rj;
            }
        }
    }
    let status = run_simplex(&mut t, &mut basis, &mut d, rhs_col, width, Some(art_start));
    if status == SimplexOutcome::Unbounded {
        return LpSolution {
            status: LpStatus::Unbounded,
            objective_value: f64::NAN,
            values: vec![f64::NAN; n_orig],
        };
    }

    // Recover original variable values.
    let mut expanded = vec![0.0; n_cols];
    for (i, &b) in basis.iter().enumerate() {
        if b < n_cols {
            expanded[b] = t[i][rhs_col];
        }
    }
    let mut values = vec![0.0; n_orig];
    for j in 0..n_orig {
        values[j] = match &maps[j] {
            VarMap::Shifted { col, lower } => lower + expanded[*col],
            VarMap::Split { plus, minus } => expanded[*plus] - expanded[*minus],
        };
    }
    let objective_value: f64 = values.iter().zip(obj.iter()).map(|(v, c)| v * c).sum();

    LpSolution {
        status: LpStatus::Optimal,
        objective_value,
        values,
    }
}

#[derive(PartialEq)]
enum SimplexOutcome {
    Optimal,
    Unbounded,
}

/// Runs simplex iterations on the tableau until no entering column remains
/// (optimal) or an unbounded ray is found. `forbidden_from` excludes columns
/// at or beyond that index from entering (used to keep artificial columns
/// out in phase 2).
///
/// Entering rule: Dantzig (most negative reduced cost, ties to the lowest
/// index) while progress is normal, switching permanently to Bland's rule
/// (lowest eligible index) after `bland_after` iterations so that cycling
/// on degenerate vertices cannot occur. Both rules are deterministic.
fn run_simplex(
    t: &mut [Vec<f64>],
    basis: &mut [usize],
    d: &mut [f64],
    rhs_col: usize,
    width: usize,
    forbidden_from: Option<usize>,
) -> SimplexOutcome {
    let limit = forbidden_from.unwrap_or(width - 1).min(width - 1);
    let bland_after = 20 * (t.len() + width) + 1000;
    let mut iterations = 0usize;
    loop {
        iterations += 1;
        let bland = iterations > bland_after;
        let mut enter = usize::MAX;
        let mut most_negative = -TOL_ENTER;
        for (j, &dj) in d.iter().enumerate().take(limit) {
            if dj < most_negative {
                enter = j;
                if bland {
                    break;
                }
                most_negative = dj;
            }
        }
        if enter == usize::MAX {
            return SimplexOutcome::Optimal;
        }
        // Bland: leaving row minimizes the ratio, ties broken by the lowest
        // basic variable index.
        let mut leave = usize::MAX;
        let mut best = f64::INFINITY;
        for (i, row) in t.iter().enumerate() {
            let a = row[enter];
            if a > TOL_PIVOT {
                let ratio = row[rhs_col] / a;
                let better = leave == usize::MAX
                    || ratio < best - 1e-12
                    || ((ratio - best).abs() <= 1e-12 && basis[i] < basis[leave]);
                if better {
                    best = ratio;
                    leave = i;
                }
            }
        }
        if leave == usize::MAX {
            return SimplexOutcome::Unbounded;
        }
        pivot_slice(t, d, leave, enter);
        basis[leave] = enter;
    }
}

fn pivot_slice(t: &mut [Vec<f64>], d: &mut [f64], pr: usize, pc: usize) {
    let piv = t[pr][pc];
    let inv = 1.0 / piv;
    for a in t[pr].iter_mut() {
        *a *= inv;
    }
    t[pr][pc] = 1.0;
    let (before, rest) = t.split_at_mut(pr);
    let (prow_s, after) = rest.split_at_mut(1);
    let prow = &prow_s[0];
    for row in before.iter_mut().chain(after.iter_mut()) {
        let f = row[pc];
        if f != 0.0 {
            for (r, p) in row.iter_mut().zip(prow.iter()) {
                *r -= f * p;
            }
            row[pc] = 0.0;
        }
    }
    let f = d[pc];
    if f != 0.0 {
        for (r, p) in d.iter_mut().zip(prow.iter()) {
            *r -= f * p;
        }
        d[pc] = 0.0;
    }
}
