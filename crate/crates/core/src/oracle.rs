//! Brute-force reference implementations for tests.
//!
//! Everything here enumerates explicitly and is only usable on tiny
//! instances; nothing on the solve path calls into this module. The point
//! of these oracles is to pin down expected values independently of the
//! dynamic-programming implementations they check.

use crate::decomposition::{ChainDecomposition, SubgraphId, SubgraphPotentials};
use crate::model::{energy, GridModel, Labeling};
use crate::numeric::log_sum_exp;
use crate::{Error, Result};

/// Cap on the number of enumerated configurations.
#[derive(Debug, Clone, Copy)]
pub struct EnumerationBudget {
    pub max_configs: usize,
}

impl Default for EnumerationBudget {
    fn default() -> Self {
        EnumerationBudget { max_configs: 1_000_000 }
    }
}

fn config_count(model: &GridModel, budget: &EnumerationBudget) -> Result<usize> {
    let mut total: usize = 1;
    for _ in 0..model.num_nodes() {
        total = total
            .checked_mul(model.labels())
            .filter(|&t| t <= budget.max_configs)
            .ok_or_else(|| {
                Error::Input(format!(
                    "labeling space exceeds the enumeration budget of {}",
                    budget.max_configs
                ))
            })?;
    }
    Ok(total)
}

/// Advances a mixed-radix counter in lexicographic order (last node fastest).
fn next_labeling(labels: &mut [usize], radix: usize) -> bool {
    for slot in labels.iter_mut().rev() {
        *slot += 1;
        if *slot < radix {
            return true;
        }
        *slot = 0;
    }
    false
}

/// Global minimizer and minimum energy by exhaustive enumeration; ties go to
/// the lexicographically smallest labeling.
pub fn enum_min_energy(model: &GridModel, budget: &EnumerationBudget) -> Result<(Labeling, f64)> {
    config_count(model, budget)?;
    let mut current = vec![0usize; model.num_nodes()];
    let mut best = current.clone();
    let mut best_energy = energy(model, &Labeling(current.clone()))?;
    while next_labeling(&mut current, model.labels()) {
        let e = energy(model, &Labeling(current.clone()))?;
        if e < best_energy {
            best_energy = e;
            best.copy_from_slice(&current);
        }
    }
    Ok((Labeling(best), best_energy))
}

/// Literal soft minimum of one subgraph's energy over the full labeling
/// space: `-rho * ln(sum_x exp(-E_i(x) / rho))`, max-shifted for stability.
pub fn enum_softmin(
    pots: &SubgraphPotentials,
    dec: &ChainDecomposition,
    model: &GridModel,
    rho: f64,
    budget: &EnumerationBudget,
) -> Result<f64> {
    if rho <= 0.0 {
        return Err(Error::Input("smoothing parameter must be positive".into()));
    }
    let n = config_count(model, budget)?;
    let mut logs = Vec::with_capacity(n);
    let mut current = vec![0usize; model.num_nodes()];
    loop {
        logs.push(-pots.labeling_energy(dec, &current) / rho);
        if !next_labeling(&mut current, model.labels()) {
            break;
        }
    }
    Ok(-rho * log_sum_exp(&logs))
}

/// Exact Gibbs marginals of one subgraph distribution by enumeration.
///
/// Returns `(unary, pair)` where `unary` has the layout of the model's unary
/// table and `pair` the layout of the subgraph's own pairwise table
/// (`pairwise_h` for the horizontal subgraph, `pairwise_v` for the
/// vertical).
pub fn enum_gibbs_marginals(
    pots: &SubgraphPotentials,
    dec: &ChainDecomposition,
    model: &GridModel,
    rho: f64,
    budget: &EnumerationBudget,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rho <= 0.0 {
        return Err(Error::Input("smoothing parameter must be positive".into()));
    }
    config_count(model, budget)?;
    let l = model.labels();
    let ll = l * l;
    let edge_count = match pots.id {
        SubgraphId::Horizontal => model.num_h_edges(),
        SubgraphId::Vertical => model.num_v_edges(),
    };

    // Two passes: find the max shift, then accumulate shifted weights.
    let mut max_log = f64::NEG_INFINITY;
    let mut current = vec![0usize; model.num_nodes()];
    loop {
        max_log = max_log.max(-pots.labeling_energy(dec, &current) / rho);
        if !next_labeling(&mut current, l) {
            break;
        }
    }

    let mut unary = vec![0.0; model.num_nodes() * l];
    let mut pair = vec![0.0; edge_count * ll];
    let mut z = 0.0;
    current.fill(0);
    loop {
        let w = (-pots.labeling_energy(dec, &current) / rho - max_log).exp();
        z += w;
        for (v, &a) in current.iter().enumerate() {
            unary[v * l + a] += w;
        }
        for chain in dec.chains(pots.id) {
            for j in 0..chain.len().saturating_sub(1) {
                let e = pots.edge_index_from(chain[j]);
                pair[(e * l + current[chain[j]]) * l + current[chain[j + 1]]] += w;
            }
        }
        if !next_labeling(&mut current, l) {
            break;
        }
    }
    for x in unary.iter_mut().chain(pair.iter_mut()) {
        *x /= z;
    }
    Ok((unary, pair))
}

/// Central-difference gradient estimate of `f` at `point` with step `h`.
pub fn finite_diff<F: FnMut(&[f64]) -> f64>(mut f: F, point: &[f64], h: f64) -> Vec<f64> {
    let mut work = point.to_vec();
    let mut grad = vec![0.0; point.len()];
    for i in 0..point.len() {
        work[i] = point[i] + h;
        let up = f(&work);
        work[i] = point[i] - h;
        let down = f(&work);
        work[i] = point[i];
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Reference transportation optimum by enumerating basic feasible solutions
/// (spanning-tree bases of the bipartite support graph). Only for matrices
/// up to 3x3.
pub fn enum_transport_vertices(
    cost: &[f64],
    rows: &[f64],
    cols: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let (m, n) = (rows.len(), cols.len());
    if m == 0 || n == 0 || m > 3 || n > 3 {
        return Err(Error::Input("vertex enumeration only supports sizes up to 3x3".into()));
    }
    if cost.len() != m * n {
        return Err(Error::Input("cost matrix does not match the marginal sizes".into()));
    }
    let basis_size = m + n - 1;
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let mut best: Option<(Vec<f64>, f64)> = None;

    // all subsets of cells with exactly m + n - 1 members
    for mask in 0..(1u32 << cells.len()) {
        if mask.count_ones() as usize != basis_size {
            continue;
        }
        if let Some(plan) = solve_basis(&cells, mask, rows, cols, m, n) {
            let value: f64 = plan.iter().zip(cost).map(|(p, c)| p * c).sum();
            if best.as_ref().is_none_or(|(_, v)| value < *v) {
                best = Some((plan, value));
            }
        }
    }
    best.ok_or_else(|| Error::Numeric("no feasible transportation basis found".into()))
}

/// Solves the flow system of one candidate basis by repeatedly peeling rows
/// or columns with a single unsolved basic cell; rejects bases that are
/// cyclic, non-spanning, or infeasible.
fn solve_basis(
    cells: &[(usize, usize)],
    mask: u32,
    rows: &[f64],
    cols: &[f64],
    m: usize,
    n: usize,
) -> Option<Vec<f64>> {
    const TOL: f64 = 1e-9;
    let mut unsolved: Vec<(usize, usize)> = cells
        .iter()
        .enumerate()
        .filter(|(k, _)| mask & (1 << k) != 0)
        .map(|(_, &c)| c)
        .collect();
    let mut plan = vec![0.0; m * n];
    let mut rsup = rows.to_vec();
    let mut csup = cols.to_vec();
    let mut row_count = vec![0usize; m];
    let mut col_count = vec![0usize; n];
    for &(i, j) in &unsolved {
        row_count[i] += 1;
        col_count[j] += 1;
    }
    while !unsolved.is_empty() {
        let pos = unsolved
            .iter()
            .position(|&(i, j)| row_count[i] == 1 || col_count[j] == 1)?;
        let (i, j) = unsolved.swap_remove(pos);
        let flow = if row_count[i] == 1 { rsup[i] } else { csup[j] };
        if flow < -TOL {
            return None;
        }
        plan[i * n + j] = flow.max(0.0);
        rsup[i] -= flow;
        csup[j] -= flow;
        row_count[i] -= 1;
        col_count[j] -= 1;
    }
    if rsup.iter().chain(csup.iter()).any(|r| r.abs() > TOL) {
        return None;
    }
    Some(plan)
}
