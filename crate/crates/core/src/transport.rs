//! Dense small-matrix transportation solvers.
//!
//! [`solve_transport`] finds an exact minimum-cost pairwise table matching
//! given row and column marginals with a transportation simplex
//! (north-west-corner start, Bland's rule). [`solve_entropic_transport`]
//! solves the KL-regularized variant by alternating scaling in the log
//! domain. Matrices here are one edge's label-pair table, so sizes stay
//! tiny; determinism and robustness matter more than asymptotics.

use crate::numeric::log_sum_exp;
use crate::{Error, Result};

/// Marginal-sum agreement required of inputs.
const MARGINAL_AGREEMENT_TOL: f64 = 1e-12;
/// Pivoting tolerance for reduced costs.
const REDUCED_COST_TOL: f64 = 1e-12;
/// Sinkhorn stopping tolerance on marginal residuals.
const SINKHORN_TOL: f64 = 1e-10;
/// Total Sinkhorn iteration cap across annealing stages.
const SINKHORN_MAX_ITERS: usize = 10_000;

/// One edge's transportation problem: a cost table with fixed row and column
/// marginals (both summing to one).
#[derive(Debug, Clone)]
pub struct TransportProblem {
    pub cost: Vec<f64>,
    pub row_marginals: Vec<f64>,
    pub col_marginals: Vec<f64>,
}

impl TransportProblem {
    pub fn new(cost: Vec<f64>, row_marginals: Vec<f64>, col_marginals: Vec<f64>) -> Result<Self> {
        let (m, n) = (row_marginals.len(), col_marginals.len());
        if m == 0 || n == 0 || cost.len() != m * n {
            return Err(Error::Input("cost matrix does not match marginal dimensions".into()));
        }
        if cost.iter().any(|c| !c.is_finite()) {
            return Err(Error::Input("transport costs must be finite".into()));
        }
        let mut rows = row_marginals;
        let mut cols = col_marginals;
        for x in rows.iter_mut().chain(cols.iter_mut()) {
            if !x.is_finite() || *x < -MARGINAL_AGREEMENT_TOL {
                return Err(Error::Input(format!("marginals must be nonnegative, got {x}")));
            }
            if *x < 0.0 {
                *x = 0.0;
            }
        }
        let rs: f64 = rows.iter().sum();
        let cs: f64 = cols.iter().sum();
        if (rs - cs).abs() > MARGINAL_AGREEMENT_TOL {
            return Err(Error::Input(format!(
                "row and column marginal sums disagree: {rs} vs {cs}"
            )));
        }
        Ok(TransportProblem {
            cost,
            row_marginals: rows,
            col_marginals: cols,
        })
    }

    fn dims(&self) -> (usize, usize) {
        (self.row_marginals.len(), self.col_marginals.len())
    }
}

/// `<cost, plan>` for a plan in the same layout as the cost table.
pub fn transport_objective(cost: &[f64], plan: &[f64]) -> f64 {
    cost.iter().zip(plan).map(|(c, p)| c * p).sum()
}

/// KL-regularized objective
/// `<cost, plan> + rho * n_uv * sum_ab plan_ab ln(plan_ab / (r_a c_b))`,
/// with zero entries contributing nothing.
pub fn entropic_objective(p: &TransportProblem, plan: &[f64], rho: f64, n_uv: u32) -> f64 {
    let (m, n) = p.dims();
    let mut kl = 0.0;
    for i in 0..m {
        for j in 0..n {
            let x = plan[i * n + j];
            if x > 0.0 {
                let prod = p.row_marginals[i] * p.col_marginals[j];
                if prod > 0.0 {
                    kl += x * (x / prod).ln();
                }
            }
        }
    }
    transport_objective(&p.cost, plan) + rho * n_uv as f64 * kl
}

/// Rows/columns with zero mass carry no plan; solve on the support and
/// re-insert zeros afterwards.
struct Reduction {
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl Reduction {
    fn of(p: &TransportProblem) -> Reduction {
        Reduction {
            rows: (0..p.row_marginals.len()).filter(|&i| p.row_marginals[i] > 0.0).collect(),
            cols: (0..p.col_marginals.len()).filter(|&j| p.col_marginals[j] > 0.0).collect(),
        }
    }

    fn reduced(&self, p: &TransportProblem) -> TransportProblem {
        let cost = self
            .rows
            .iter()
            .flat_map(|&i| self.cols.iter().map(move |&j| p.cost[i * p.col_marginals.len() + j]))
            .collect();
        TransportProblem {
            cost,
            row_marginals: self.rows.iter().map(|&i| p.row_marginals[i]).collect(),
            col_marginals: self.cols.iter().map(|&j| p.col_marginals[j]).collect(),
        }
    }

    fn expand(&self, p: &TransportProblem, plan: Vec<f64>) -> Vec<f64> {
        let n_full = p.col_marginals.len();
        let mut full = vec![0.0; p.row_marginals.len() * n_full];
        for (ri, &i) in self.rows.iter().enumerate() {
            for (ci, &j) in self.cols.iter().enumerate() {
                full[i * n_full + j] = plan[ri * self.cols.len() + ci];
            }
        }
        full
    }
}

/// Exact minimum-cost transportation plan.
///
/// The returned table is nonnegative, reproduces the row and column
/// marginals to tight tolerance, and attains the optimum over the
/// transportation polytope.
pub fn solve_transport(p: &TransportProblem) -> Result<Vec<f64>> {
    let red = Reduction::of(p);
    if red.rows.is_empty() {
        return Ok(vec![0.0; p.cost.len()]);
    }
    let sub = red.reduced(p);
    let (plan, _, _) = simplex(&sub)?;
    Ok(red.expand(p, plan))
}

/// Returns the optimal plan together with the optimal dual potentials of the
/// final basis.
fn simplex(p: &TransportProblem) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let (m, n) = p.dims();
    let mut flow = vec![0.0f64; m * n];
    let mut in_basis = vec![false; m * n];

    // north-west corner start: advances one index per step, which yields
    // exactly m + n - 1 basic cells (some possibly at zero flow)
    let mut rs = p.row_marginals.clone();
    let mut cs = p.col_marginals.clone();
    let (mut i, mut j) = (0usize, 0usize);
    loop {
        let f = rs[i].min(cs[j]).max(0.0);
        flow[i * n + j] = f;
        in_basis[i * n + j] = true;
        rs[i] -= f;
        cs[j] -= f;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if (rs[i] <= cs[j] && i < m - 1) || j == n - 1 {
            i += 1;
        } else {
            j += 1;
        }
    }

    let scale = 1.0 + p.cost.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
    let max_pivots = 1000 * (m + n) * (m + n);
    for _ in 0..max_pivots {
        let (u, v) = basis_duals(p, &in_basis)?;
        // Bland: enter the lowest-index cell with negative reduced cost
        let mut entering = None;
        'search: for a in 0..m {
            for b in 0..n {
                if !in_basis[a * n + b] && p.cost[a * n + b] - u[a] - v[b] < -REDUCED_COST_TOL * scale {
                    entering = Some((a, b));
                    break 'search;
                }
            }
        }
        let Some((ei, ej)) = entering else {
            return Ok((flow, u, v));
        };

        let cycle = basis_cycle(&in_basis, m, n, ei, ej)?;
        // odd positions of the cycle lose flow; the first minimizer in cycle
        // order leaves, which keeps pivoting deterministic
        let mut theta = f64::INFINITY;
        let mut leaving = (usize::MAX, usize::MAX);
        for (k, &(a, b)) in cycle.iter().enumerate() {
            if k % 2 == 1 && flow[a * n + b] < theta {
                theta = flow[a * n + b];
                leaving = (a, b);
            }
        }
        for (k, &(a, b)) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                flow[a * n + b] += theta;
            } else {
                flow[a * n + b] = (flow[a * n + b] - theta).max(0.0);
            }
        }
        in_basis[ei * n + ej] = true;
        in_basis[leaving.0 * n + leaving.1] = false;
        flow[leaving.0 * n + leaving.1] = 0.0;
    }
    Err(Error::Numeric("transportation simplex did not terminate".into()))
}

/// Dual potentials of the current basis tree (`u[0] = 0`).
fn basis_duals(p: &TransportProblem, in_basis: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (m, n) = p.dims();
    let mut u = vec![f64::NAN; m];
    let mut v = vec![f64::NAN; n];
    u[0] = 0.0;
    let mut settled = 1;
    while settled < m + n {
        let before = settled;
        for a in 0..m {
            for b in 0..n {
                if in_basis[a * n + b] {
                    if !u[a].is_nan() && v[b].is_nan() {
                        v[b] = p.cost[a * n + b] - u[a];
                        settled += 1;
                    } else if u[a].is_nan() && !v[b].is_nan() {
                        u[a] = p.cost[a * n + b] - v[b];
                        settled += 1;
                    }
                }
            }
        }
        if settled == before {
            return Err(Error::Numeric("transportation basis is not a spanning tree".into()));
        }
    }
    Ok((u, v))
}

/// Alternating cycle created by adding `(ei, ej)` to the basis tree, starting
/// at the entering cell. Found by walking the unique tree path from row `ei`
/// to column `ej`.
fn basis_cycle(in_basis: &[bool], m: usize, n: usize, ei: usize, ej: usize) -> Result<Vec<(usize, usize)>> {
    // nodes: rows 0..m, then columns m..m+n
    let mut parent = vec![usize::MAX; m + n];
    let mut seen = vec![false; m + n];
    let mut queue = std::collections::VecDeque::new();
    seen[ei] = true;
    queue.push_back(ei);
    while let Some(node) = queue.pop_front() {
        if node == m + ej {
            break;
        }
        if node < m {
            for b in 0..n {
                if in_basis[node * n + b] && !seen[m + b] {
                    seen[m + b] = true;
                    parent[m + b] = node;
                    queue.push_back(m + b);
                }
            }
        } else {
            let b = node - m;
            for a in 0..m {
                if in_basis[a * n + b] && !seen[a] {
                    seen[a] = true;
                    parent[a] = node;
                    queue.push_back(a);
                }
            }
        }
    }
    if !seen[m + ej] {
        return Err(Error::Numeric("entering cell closes no cycle in the basis".into()));
    }
    // tree path from col ej back to row ei, as cells
    let mut path_cells = Vec::new();
    let mut node = m + ej;
    while node != ei {
        let par = parent[node];
        let (a, b) = if node < m { (node, par - m) } else { (par, node - m) };
        path_cells.push((a, b));
        node = par;
    }
    let mut cycle = Vec::with_capacity(path_cells.len() + 1);
    cycle.push((ei, ej));
    cycle.extend(path_cells);
    Ok(cycle)
}

/// KL-regularized transportation plan at temperature `rho * n_uv`.
///
/// Solves `min <cost, plan> + rho * n_uv * KL(plan || rows x cols)` over the
/// transportation polytope by log-domain alternating scaling; the fixed
/// point satisfies `plan_ab ∝ r_a c_b exp(-cost_ab / (rho n_uv))` rescaled
/// by row and column multipliers. At temperatures far below the cost spread
/// the scaling potentials are warm-started from the exact LP duals, which
/// puts the iteration inside its contraction basin instead of the max-plus
/// stalling regime.
pub fn solve_entropic_transport(p: &TransportProblem, rho: f64, n_uv: u32) -> Result<Vec<f64>> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Input(format!("smoothing parameter must be positive, got {rho}")));
    }
    let red = Reduction::of(p);
    if red.rows.is_empty() {
        return Ok(vec![0.0; p.cost.len()]);
    }
    let sub = red.reduced(p);
    let plan = sinkhorn(&sub, rho * n_uv as f64)?;
    Ok(red.expand(p, plan))
}

fn sinkhorn(p: &TransportProblem, eps: f64) -> Result<Vec<f64>> {
    let (m, n) = p.dims();
    let log_r: Vec<f64> = p.row_marginals.iter().map(|x| x.ln()).collect();
    let log_c: Vec<f64> = p.col_marginals.iter().map(|x| x.ln()).collect();
    let c_min = p.cost.iter().copied().fold(f64::INFINITY, f64::min);
    let c_max = p.cost.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = c_max - c_min;

    let mut sigma = vec![0.0f64; m];
    let mut tau = vec![0.0f64; n];
    if range > 8.0 * eps {
        let (_, _, v) = simplex(p)?;
        for (t, vj) in tau.iter_mut().zip(&v) {
            *t = vj / eps;
        }
    }
    let mut scratch = vec![0.0f64; m.max(n)];

    let mut residual = f64::INFINITY;
    for _ in 0..SINKHORN_MAX_ITERS {
        for (i, s) in sigma.iter_mut().enumerate() {
            for (j, sc) in scratch[..n].iter_mut().enumerate() {
                *sc = log_c[j] + tau[j] - p.cost[i * n + j] / eps;
            }
            *s = -log_sum_exp(&scratch[..n]);
        }
        for (j, t) in tau.iter_mut().enumerate() {
            for (i, sc) in scratch[..m].iter_mut().enumerate() {
                *sc = log_r[i] + sigma[i] - p.cost[i * n + j] / eps;
            }
            *t = -log_sum_exp(&scratch[..m]);
        }
        // columns are exact after the tau update; rows measure progress
        residual = 0.0;
        for i in 0..m {
            let mut row = 0.0;
            for j in 0..n {
                row += (log_r[i] + sigma[i] + log_c[j] + tau[j] - p.cost[i * n + j] / eps).exp();
            }
            residual = residual.max((row - p.row_marginals[i]).abs());
        }
        if residual < SINKHORN_TOL {
            break;
        }
    }
    if residual >= SINKHORN_TOL {
        return Err(Error::Numeric(format!(
            "entropic transport did not converge: residual {residual:.3e} (temperature {eps:.3e}, cost range {range:.3e})"
        )));
    }

    let mut plan = vec![0.0f64; m * n];
    for i in 0..m {
        for j in 0..n {
            plan[i * n + j] = (log_r[i] + sigma[i] + log_c[j] + tau[j] - p.cost[i * n + j] / eps).exp();
        }
    }
    // snap rows onto their marginals exactly; columns stay within the
    // Sinkhorn residual
    for i in 0..m {
        let row_sum: f64 = plan[i * n..(i + 1) * n].iter().sum();
        if row_sum > 0.0 {
            let fix = p.row_marginals[i] / row_sum;
            for x in &mut plan[i * n..(i + 1) * n] {
                *x *= fix;
            }
        }
    }
    for j in 0..n {
        let col_sum: f64 = (0..m).map(|i| plan[i * n + j]).sum();
        if (col_sum - p.col_marginals[j]).abs() > 1e-8 {
            return Err(Error::Numeric(format!(
                "entropic transport column residual {:.3e} exceeds tolerance",
                (col_sum - p.col_marginals[j]).abs()
            )));
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::enum_transport_vertices;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feasible(p: &TransportProblem, plan: &[f64], tol: f64) {
        let (m, n) = (p.row_marginals.len(), p.col_marginals.len());
        for x in plan {
            assert!(*x >= -tol, "negative plan entry {x}");
        }
        for i in 0..m {
            let s: f64 = plan[i * n..(i + 1) * n].iter().sum();
            assert!((s - p.row_marginals[i]).abs() <= tol, "row {i}: {s} vs {}", p.row_marginals[i]);
        }
        for j in 0..n {
            let s: f64 = (0..m).map(|i| plan[i * n + j]).sum();
            assert!((s - p.col_marginals[j]).abs() <= tol, "col {j}: {s} vs {}", p.col_marginals[j]);
        }
    }

    fn random_problem(rng: &mut ChaCha8Rng, m: usize, n: usize) -> TransportProblem {
        let cost: Vec<f64> = (0..m * n).map(|_| rng.random::<f64>()).collect();
        let mut rows: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.05).collect();
        let mut cols: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
        let rs: f64 = rows.iter().sum();
        for r in &mut rows {
            *r /= rs;
        }
        let cs: f64 = cols.iter().sum();
        for c in &mut cols {
            *c /= cs;
        }
        TransportProblem::new(cost, rows, cols).unwrap()
    }

    #[test]
    fn forced_point_marginals() {
        let p = TransportProblem::new(vec![5.0, 7.0, 1.0, 2.0], vec![1.0, 0.0], vec![0.0, 1.0]).unwrap();
        let plan = solve_transport(&p).unwrap();
        assert_eq!(plan, vec![0.0, 1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(transport_objective(&p.cost, &plan), 7.0);
    }

    #[test]
    fn symmetric_half_half_prefers_diagonal() {
        let p = TransportProblem::new(vec![0.0, 1.0, 1.0, 0.0], vec![0.5, 0.5], vec![0.5, 0.5]).unwrap();
        let plan = solve_transport(&p).unwrap();
        assert_abs_diff_eq!(transport_objective(&p.cost, &plan), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(plan[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(plan[3], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn constant_cost_objective_is_the_constant() {
        let p = TransportProblem::new(vec![3.0; 6], vec![0.3, 0.7], vec![0.2, 0.5, 0.3]).unwrap();
        let plan = solve_transport(&p).unwrap();
        feasible(&p, &plan, 1e-12);
        assert_abs_diff_eq!(transport_objective(&p.cost, &plan), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn matches_vertex_enumeration_on_random_small_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..60 {
            let m = 1 + (trial % 3);
            let n = 1 + ((trial / 3) % 3);
            let p = random_problem(&mut rng, m, n);
            let plan = solve_transport(&p).unwrap();
            feasible(&p, &plan, 1e-10);
            let (_, best) = enum_transport_vertices(&p.cost, &p.row_marginals, &p.col_marginals).unwrap();
            let got = transport_objective(&p.cost, &plan);
            assert!((got - best).abs() < 1e-9, "trial {trial}: {got} vs vertex optimum {best}");
        }
    }

    #[test]
    fn zero_marginal_rows_force_zero_plan_rows() {
        let p = TransportProblem::new(
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
            vec![0.5, 0.0, 0.5],
            vec![0.25, 0.0, 0.75],
        )
        .unwrap();
        let lp = solve_transport(&p).unwrap();
        let ent = solve_entropic_transport(&p, 0.5, 1).unwrap();
        for j in 0..3 {
            assert_eq!(lp[3 + j], 0.0);
            assert_eq!(ent[3 + j], 0.0);
        }
        for i in 0..3 {
            assert_eq!(lp[i * 3 + 1], 0.0);
            assert_eq!(ent[i * 3 + 1], 0.0);
        }
        feasible(&p, &lp, 1e-10);
        feasible(&p, &ent, 1e-8);
    }

    #[test]
    fn inconsistent_marginals_are_rejected() {
        assert!(TransportProblem::new(vec![0.0; 4], vec![0.6, 0.6], vec![0.5, 0.5]).is_err());
        assert!(TransportProblem::new(vec![0.0; 4], vec![-0.1, 1.1], vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn entropic_zero_cost_gives_product_plan() {
        let p = TransportProblem::new(vec![0.0; 6], vec![0.4, 0.6], vec![0.1, 0.2, 0.7]).unwrap();
        let plan = solve_entropic_transport(&p, 1.3, 1).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_abs_diff_eq!(plan[i * 3 + j], p.row_marginals[i] * p.col_marginals[j], epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(entropic_objective(&p, &plan, 1.3, 1), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn entropic_high_temperature_approaches_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = random_problem(&mut rng, 3, 3);
        let plan = solve_entropic_transport(&p, 1e6, 1).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let prod = p.row_marginals[i] * p.col_marginals[j];
                assert!((plan[i * 3 + j] - prod).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn entropic_low_temperature_approaches_lp_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..5 {
            let p = random_problem(&mut rng, 3, 2);
            let lp = solve_transport(&p).unwrap();
            let lp_obj = transport_objective(&p.cost, &lp);
            let ent = solve_entropic_transport(&p, 1e-4, 1).unwrap();
            feasible(&p, &ent, 1e-8);
            let ent_obj = transport_objective(&p.cost, &ent);
            assert!((ent_obj - lp_obj).abs() < 1e-3, "{ent_obj} vs {lp_obj}");
            // a feasible plan can never beat the LP optimum
            assert!(ent_obj >= lp_obj - 1e-9);
        }
    }

    #[test]
    fn entropic_rejects_bad_rho() {
        let p = TransportProblem::new(vec![0.0; 4], vec![0.5, 0.5], vec![0.5, 0.5]).unwrap();
        assert!(solve_entropic_transport(&p, 0.0, 1).is_err());
        assert!(solve_entropic_transport(&p, -0.3, 1).is_err());
    }
}
