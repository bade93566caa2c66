//! Two-subgraph dual decomposition of a grid model.
//!
//! The edge set is partitioned into horizontal edges (rows as chains) and
//! vertical edges (columns as chains); both subgraphs contain every node. A
//! dual vector `lambda` splits each unary potential between the two halves.
//! The non-smooth dual is the sum of the two subgraph minimum energies; its
//! smooth approximation replaces each minimum by a soft minimum with
//! parameter `rho`. Both are evaluated chain by chain with dynamic
//! programming carried out entirely in the log domain.

use crate::model::GridModel;
use crate::numeric::{log_sum_exp, softmax_in_place};
use crate::{Error, Result};

/// Which half of the edge partition a quantity belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubgraphId {
    /// Subgraph 1: all horizontal edges, rows as chains.
    Horizontal,
    /// Subgraph 2: all vertical edges, columns as chains.
    Vertical,
}

impl SubgraphId {
    pub const BOTH: [SubgraphId; 2] = [SubgraphId::Horizontal, SubgraphId::Vertical];

    pub fn index(self) -> usize {
        match self {
            SubgraphId::Horizontal => 0,
            SubgraphId::Vertical => 1,
        }
    }
}

/// Partition of the grid's edges into two acyclic subgraphs covering all
/// nodes: rows (horizontal edges) and columns (vertical edges). Nodes of a
/// degenerate direction form singleton chains.
#[derive(Debug, Clone)]
pub struct ChainDecomposition {
    chains: [Vec<Vec<usize>>; 2],
    edge_counts: [usize; 2],
}

impl ChainDecomposition {
    /// Ordered node lists of the chains of one subgraph.
    pub fn chains(&self, id: SubgraphId) -> &[Vec<usize>] {
        &self.chains[id.index()]
    }

    pub fn edge_count(&self, id: SubgraphId) -> usize {
        self.edge_counts[id.index()]
    }

    /// Number of subgraphs containing each node (always 2 here).
    pub fn n_v(&self) -> u32 {
        2
    }

    /// Number of subgraphs containing each edge (always 1 here).
    pub fn n_uv(&self) -> u32 {
        1
    }
}

/// Splits a grid into its row chains and column chains.
pub fn split_grid(model: &GridModel) -> ChainDecomposition {
    let (h, w) = (model.height(), model.width());
    let rows: Vec<Vec<usize>> = (0..h).map(|r| (0..w).map(|c| model.node(r, c)).collect()).collect();
    let cols: Vec<Vec<usize>> = (0..w).map(|c| (0..h).map(|r| model.node(r, c)).collect()).collect();
    ChainDecomposition {
        chains: [rows, cols],
        edge_counts: [model.num_h_edges(), model.num_v_edges()],
    }
}

/// Dual variables: one real per (node, label), same layout as the unary
/// potential table.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    pub values: Vec<f64>,
}

impl DualVector {
    pub fn zeros(model: &GridModel) -> Self {
        DualVector {
            values: vec![0.0; model.num_nodes() * model.labels()],
        }
    }

    pub fn check_dims(&self, model: &GridModel) -> Result<()> {
        if self.values.len() != model.num_nodes() * model.labels() {
            return Err(Error::Input(format!(
                "dual vector has {} entries, expected {}",
                self.values.len(),
                model.num_nodes() * model.labels()
            )));
        }
        Ok(())
    }
}

/// Potentials of one subgraph: reparametrized unaries plus the model's own
/// pairwise tables on the subgraph's edges.
pub struct SubgraphPotentials<'a> {
    pub id: SubgraphId,
    /// `theta^i_v`, laid out like the model's unary table.
    pub unary: Vec<f64>,
    model: &'a GridModel,
}

impl<'a> SubgraphPotentials<'a> {
    pub fn unary_at(&self, node: usize, label: usize) -> f64 {
        self.unary[node * self.model.labels() + label]
    }

    /// Pairwise table of the chain edge leaving `node` in chain direction
    /// (rightwards for rows, downwards for columns).
    pub fn edge_table_from(&self, node: usize) -> &[f64] {
        let w = self.model.width();
        let (r, c) = (node / w, node % w);
        match self.id {
            SubgraphId::Horizontal => self.model.pairwise_h_table(self.model.h_edge(r, c)),
            SubgraphId::Vertical => self.model.pairwise_v_table(self.model.v_edge(r, c)),
        }
    }

    /// Flat index of the chain edge leaving `node`, within this subgraph's
    /// pairwise table layout.
    pub fn edge_index_from(&self, node: usize) -> usize {
        let w = self.model.width();
        let (r, c) = (node / w, node % w);
        match self.id {
            SubgraphId::Horizontal => self.model.h_edge(r, c),
            SubgraphId::Vertical => self.model.v_edge(r, c),
        }
    }

    /// Energy of a full labeling restricted to this subgraph's terms.
    pub fn labeling_energy(&self, dec: &ChainDecomposition, labels: &[usize]) -> f64 {
        let l = self.model.labels();
        let mut total = 0.0;
        for chain in dec.chains(self.id) {
            for (j, &v) in chain.iter().enumerate() {
                total += self.unary[v * l + labels[v]];
                if j + 1 < chain.len() {
                    total += self.edge_table_from(v)[labels[v] * l + labels[chain[j + 1]]];
                }
            }
        }
        total
    }
}

/// Splits the unary potentials between the two subgraphs:
/// `theta^1_v = theta_v / 2 + lambda_v` and `theta^2_v = theta_v - theta^1_v`,
/// so the two halves sum back to `theta_v` exactly.
pub fn reparametrize<'a>(
    model: &'a GridModel,
    lambda: &DualVector,
    id: SubgraphId,
) -> Result<SubgraphPotentials<'a>> {
    lambda.check_dims(model)?;
    let n = model.num_nodes() * model.labels();
    let mut unary = Vec::with_capacity(n);
    for v in 0..model.num_nodes() {
        for a in 0..model.labels() {
            let i = v * model.labels() + a;
            let theta = model.unary(v, a);
            let first = theta / 2.0 + lambda.values[i];
            let mut second = theta - first;
            // push the rounding residual into the second half so the two
            // stored values sum back to theta
            second += theta - (first + second);
            unary.push(match id {
                SubgraphId::Horizontal => first,
                SubgraphId::Vertical => second,
            });
        }
    }
    Ok(SubgraphPotentials { id, unary, model })
}

/// Minimum energy of one subgraph: min-plus dynamic programming per chain,
/// summed over chains. Singleton chains contribute the minimum of their
/// unary potentials.
pub fn chain_min_energy(pots: &SubgraphPotentials, dec: &ChainDecomposition) -> f64 {
    let l = pots.model.labels();
    let mut total = 0.0;
    for chain in dec.chains(pots.id) {
        let mut msg: Vec<f64> = pots.unary[chain[0] * l..(chain[0] + 1) * l].to_vec();
        for j in 1..chain.len() {
            let table = pots.edge_table_from(chain[j - 1]);
            let next = chain[j];
            let mut out = vec![f64::INFINITY; l];
            for (b, o) in out.iter_mut().enumerate() {
                let mut best = f64::INFINITY;
                for a in 0..l {
                    let cand = msg[a] + table[a * l + b];
                    if cand < best {
                        best = cand;
                    }
                }
                *o = best + pots.unary[next * l + b];
            }
            msg = out;
        }
        total += msg.iter().copied().fold(f64::INFINITY, f64::min);
    }
    total
}

/// The non-smooth dual lower bound: sum of both subgraph minimum energies.
pub fn dual_value(model: &GridModel, dec: &ChainDecomposition, lambda: &DualVector) -> Result<f64> {
    let mut total = 0.0;
    for id in SubgraphId::BOTH {
        total += chain_min_energy(&reparametrize(model, lambda, id)?, dec);
    }
    Ok(total)
}

/// Soft minimum of one subgraph's energy at temperature `rho`:
/// `-rho * ln(sum_x exp(-E_i(x) / rho))`, which factorizes into an additive
/// contribution per chain. Computed by forward sum-product DP in the log
/// domain.
pub fn subgraph_softmin(pots: &SubgraphPotentials, dec: &ChainDecomposition, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    let l = pots.model.labels();
    let mut total = 0.0;
    let mut scratch = vec![0.0f64; l];
    for chain in dec.chains(pots.id) {
        let mut msg: Vec<f64> = (0..l).map(|a| -pots.unary[chain[0] * l + a] / rho).collect();
        for j in 1..chain.len() {
            let table = pots.edge_table_from(chain[j - 1]);
            let next = chain[j];
            let mut out = vec![0.0; l];
            for (b, o) in out.iter_mut().enumerate() {
                for a in 0..l {
                    scratch[a] = msg[a] - table[a * l + b] / rho;
                }
                *o = log_sum_exp(&scratch) - pots.unary[next * l + b] / rho;
            }
            msg = out;
        }
        total += -rho * log_sum_exp(&msg);
    }
    Ok(total)
}

/// The smoothed dual: sum of the two subgraph soft minima.
pub fn smoothed_dual(model: &GridModel, dec: &ChainDecomposition, lambda: &DualVector, rho: f64) -> Result<f64> {
    let mut total = 0.0;
    for id in SubgraphId::BOTH {
        total += subgraph_softmin(&reparametrize(model, lambda, id)?, dec, rho)?;
    }
    Ok(total)
}

/// Exact Gibbs marginals of both subgraph distributions at temperature
/// `rho`: unary tables for every node and pairwise tables for each
/// subgraph's own edges.
#[derive(Debug, Clone)]
pub struct ChainMarginals {
    /// Unary marginals per subgraph, laid out like the unary potential table.
    pub unary: [Vec<f64>; 2],
    /// Pairwise marginals of subgraph 1, laid out like `pairwise_h`.
    pub pair_h: Vec<f64>,
    /// Pairwise marginals of subgraph 2, laid out like `pairwise_v`.
    pub pair_v: Vec<f64>,
}

impl ChainMarginals {
    pub fn unary_row(&self, id: SubgraphId, node: usize, labels: usize) -> &[f64] {
        &self.unary[id.index()][node * labels..(node + 1) * labels]
    }
}

/// Smoothed dual value together with the chain marginals that produced it.
pub struct SmoothedEval {
    /// Total smoothed dual value.
    pub value: f64,
    /// Per-subgraph soft minima.
    pub per_side: [f64; 2],
    pub marginals: ChainMarginals,
}

/// One forward-backward pass per chain of both subgraphs: returns the
/// smoothed dual and the full set of Gibbs marginals.
pub fn smoothed_eval(
    model: &GridModel,
    dec: &ChainDecomposition,
    lambda: &DualVector,
    rho: f64,
) -> Result<SmoothedEval> {
    check_rho(rho)?;
    let l = model.labels();
    let ll = l * l;
    let mut unary = [
        vec![0.0; model.num_nodes() * l],
        vec![0.0; model.num_nodes() * l],
    ];
    let mut pair_h = vec![0.0; model.num_h_edges() * ll];
    let mut pair_v = vec![0.0; model.num_v_edges() * ll];
    let mut per_side = [0.0f64; 2];

    for id in SubgraphId::BOTH {
        let pots = reparametrize(model, lambda, id)?;
        let pair_out: &mut Vec<f64> = match id {
            SubgraphId::Horizontal => &mut pair_h,
            SubgraphId::Vertical => &mut pair_v,
        };
        let mut scratch = vec![0.0f64; l];
        for chain in dec.chains(id) {
            let k = chain.len();
            // alpha includes the node's own unary, beta excludes it; both in
            // units of -theta/rho.
            let mut alpha = vec![0.0f64; k * l];
            let mut beta = vec![0.0f64; k * l];
            for a in 0..l {
                alpha[a] = -pots.unary[chain[0] * l + a] / rho;
            }
            for j in 1..k {
                let table = pots.edge_table_from(chain[j - 1]);
                for b in 0..l {
                    for a in 0..l {
                        scratch[a] = alpha[(j - 1) * l + a] - table[a * l + b] / rho;
                    }
                    alpha[j * l + b] = log_sum_exp(&scratch) - pots.unary[chain[j] * l + b] / rho;
                }
            }
            for j in (0..k - 1).rev() {
                let table = pots.edge_table_from(chain[j]);
                for a in 0..l {
                    for b in 0..l {
                        scratch[b] = -table[a * l + b] / rho - pots.unary[chain[j + 1] * l + b] / rho
                            + beta[(j + 1) * l + b];
                    }
                    beta[j * l + a] = log_sum_exp(&scratch);
                }
            }
            let log_z = log_sum_exp(&alpha[(k - 1) * l..k * l]);
            per_side[id.index()] += -rho * log_z;

            for (j, &v) in chain.iter().enumerate() {
                let row = &mut unary[id.index()][v * l..(v + 1) * l];
                for a in 0..l {
                    row[a] = alpha[j * l + a] + beta[j * l + a];
                }
                softmax_in_place(row);
            }
            for j in 0..k - 1 {
                let table = pots.edge_table_from(chain[j]);
                let e = pots.edge_index_from(chain[j]);
                let out = &mut pair_out[e * ll..(e + 1) * ll];
                for a in 0..l {
                    for b in 0..l {
                        out[a * l + b] = alpha[j * l + a] - table[a * l + b] / rho
                            - pots.unary[chain[j + 1] * l + b] / rho
                            + beta[(j + 1) * l + b];
                    }
                }
                softmax_in_place(out);
            }
        }
    }

    Ok(SmoothedEval {
        value: per_side[0] + per_side[1],
        per_side,
        marginals: ChainMarginals { unary, pair_h, pair_v },
    })
}

/// Gibbs marginals of both subgraph distributions (see [`smoothed_eval`]).
pub fn chain_marginals(
    model: &GridModel,
    dec: &ChainDecomposition,
    lambda: &DualVector,
    rho: f64,
) -> Result<ChainMarginals> {
    Ok(smoothed_eval(model, dec, lambda, rho)?.marginals)
}

/// Gradient of the smoothed dual in `lambda`: per coordinate, the difference
/// of the two subgraphs' unary marginals.
pub fn grad_smoothed_dual(
    model: &GridModel,
    dec: &ChainDecomposition,
    lambda: &DualVector,
    rho: f64,
) -> Result<DualVector> {
    let marg = chain_marginals(model, dec, lambda, rho)?;
    Ok(grad_from_marginals(&marg))
}

/// Gradient assembled from already-computed marginals.
pub fn grad_from_marginals(marg: &ChainMarginals) -> DualVector {
    let values = marg.unary[0]
        .iter()
        .zip(&marg.unary[1])
        .map(|(a, b)| a - b)
        .collect();
    DualVector { values }
}

/// Derivative of the smoothed dual in `rho`:
/// `U~/rho - (1/rho) * sum_i <theta^i, nu^i>`, where the inner product runs
/// over the subgraph's unary and pairwise terms.
pub fn d_smoothed_dual_d_rho(
    model: &GridModel,
    dec: &ChainDecomposition,
    lambda: &DualVector,
    rho: f64,
) -> Result<f64> {
    let eval = smoothed_eval(model, dec, lambda, rho)?;
    d_rho_from_eval(model, dec, lambda, rho, &eval)
}

/// Same as [`d_smoothed_dual_d_rho`], reusing an existing evaluation.
pub fn d_rho_from_eval(
    model: &GridModel,
    dec: &ChainDecomposition,
    lambda: &DualVector,
    rho: f64,
    eval: &SmoothedEval,
) -> Result<f64> {
    let l = model.labels();
    let ll = l * l;
    let mut expectation = 0.0;
    for id in SubgraphId::BOTH {
        let pots = reparametrize(model, lambda, id)?;
        for (t, m) in pots.unary.iter().zip(&eval.marginals.unary[id.index()]) {
            expectation += t * m;
        }
        let (margs, count) = match id {
            SubgraphId::Horizontal => (&eval.marginals.pair_h, model.num_h_edges()),
            SubgraphId::Vertical => (&eval.marginals.pair_v, model.num_v_edges()),
        };
        for e in 0..count {
            let t = match id {
                SubgraphId::Horizontal => model.pairwise_h_table(e),
                SubgraphId::Vertical => model.pairwise_v_table(e),
            };
            for (ti, mi) in t.iter().zip(&margs[e * ll..(e + 1) * ll]) {
                expectation += ti * mi;
            }
        }
    }
    Ok(eval.value / rho - expectation / rho)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Input(format!("smoothing parameter must be positive, got {rho}")));
    }
    Ok(())
}
