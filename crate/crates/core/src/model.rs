//! Grid MRF model types: potentials, labelings, relaxed marginal vectors,
//! exact and relaxed energies, local-polytope feasibility, the
//! tree-reweighted free energy, and random instance generation.
//!
//! Nodes are indexed row-major: `node(r, c) = r * width + c`. Horizontal
//! edges connect `(r, c)` to `(r, c + 1)` and are indexed `r * (width - 1) +
//! c`; vertical edges connect `(r, c)` to `(r + 1, c)` and are indexed
//! `r * width + c`. Every pairwise table stores `L * L` entries with the
//! first index belonging to the left (respectively top) endpoint.

use crate::decomposition::ChainDecomposition;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A pairwise MRF on a `height x width` grid with a uniform label count.
///
/// Immutable after construction; all potentials are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    height: usize,
    width: usize,
    labels: usize,
    unary: Vec<f64>,
    pairwise_h: Vec<f64>,
    pairwise_v: Vec<f64>,
    log_labelspace: f64,
}

impl GridModel {
    /// Builds a model from flat potential tables.
    ///
    /// `unary[v * L + a]` is the unary potential of label `a` at node `v`;
    /// `pairwise_h[e * L * L + a * L + b]` is the potential of the pair
    /// (left = `a`, right = `b`) on horizontal edge `e`, and analogously for
    /// `pairwise_v` (top, bottom). Rejects empty grids, zero label counts,
    /// wrong table sizes and non-finite entries.
    pub fn from_tables(
        height: usize,
        width: usize,
        labels: usize,
        unary: Vec<f64>,
        pairwise_h: Vec<f64>,
        pairwise_v: Vec<f64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Input("grid dimensions must be at least 1x1".into()));
        }
        if labels == 0 {
            return Err(Error::Input("label count must be at least 1".into()));
        }
        let nodes = height * width;
        let ll = labels * labels;
        if unary.len() != nodes * labels {
            return Err(Error::Input(format!(
                "unary table has {} entries, expected {}",
                unary.len(),
                nodes * labels
            )));
        }
        let n_h = height * (width - 1);
        let n_v = (height - 1) * width;
        if pairwise_h.len() != n_h * ll {
            return Err(Error::Input(format!(
                "horizontal pairwise table has {} entries, expected {}",
                pairwise_h.len(),
                n_h * ll
            )));
        }
        if pairwise_v.len() != n_v * ll {
            return Err(Error::Input(format!(
                "vertical pairwise table has {} entries, expected {}",
                pairwise_v.len(),
                n_v * ll
            )));
        }
        for (name, table) in [("unary", &unary), ("horizontal", &pairwise_h), ("vertical", &pairwise_v)] {
            if let Some(i) = table.iter().position(|x| !x.is_finite()) {
                return Err(Error::Input(format!(
                    "{name} potential table contains a non-finite value at flat index {i}"
                )));
            }
        }
        let log_labelspace = nodes as f64 * (labels as f64).ln();
        Ok(GridModel {
            height,
            width,
            labels,
            unary,
            pairwise_h,
            pairwise_v,
            log_labelspace,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn num_nodes(&self) -> usize {
        self.height * self.width
    }

    pub fn num_h_edges(&self) -> usize {
        self.height * (self.width - 1)
    }

    pub fn num_v_edges(&self) -> usize {
        (self.height - 1) * self.width
    }

    pub fn num_edges(&self) -> usize {
        self.num_h_edges() + self.num_v_edges()
    }

    /// Natural log of the labeling-space size, `height * width * ln(labels)`.
    pub fn log_labelspace(&self) -> f64 {
        self.log_labelspace
    }

    pub fn node(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    /// Index of the horizontal edge with left endpoint `(row, col)`.
    pub fn h_edge(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col + 1 < self.width);
        row * (self.width - 1) + col
    }

    /// Index of the vertical edge with top endpoint `(row, col)`.
    pub fn v_edge(&self, row: usize, col: usize) -> usize {
        debug_assert!(row + 1 < self.height && col < self.width);
        row * self.width + col
    }

    pub fn unary(&self, node: usize, label: usize) -> f64 {
        self.unary[node * self.labels + label]
    }

    /// Unary potentials of one node as a slice of length `labels`.
    pub fn unary_row(&self, node: usize) -> &[f64] {
        &self.unary[node * self.labels..(node + 1) * self.labels]
    }

    pub fn pairwise_h(&self, edge: usize, left: usize, right: usize) -> f64 {
        self.pairwise_h[(edge * self.labels + left) * self.labels + right]
    }

    pub fn pairwise_v(&self, edge: usize, top: usize, bottom: usize) -> f64 {
        self.pairwise_v[(edge * self.labels + top) * self.labels + bottom]
    }

    /// Full `L x L` table of one horizontal edge.
    pub fn pairwise_h_table(&self, edge: usize) -> &[f64] {
        let ll = self.labels * self.labels;
        &self.pairwise_h[edge * ll..(edge + 1) * ll]
    }

    /// Full `L x L` table of one vertical edge.
    pub fn pairwise_v_table(&self, edge: usize) -> &[f64] {
        let ll = self.labels * self.labels;
        &self.pairwise_v[edge * ll..(edge + 1) * ll]
    }
}

/// One label index per node, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling(pub Vec<usize>);

impl Labeling {
    pub fn constant(model: &GridModel, label: usize) -> Self {
        Labeling(vec![label; model.num_nodes()])
    }

    /// Checks length and label range against a model.
    pub fn validate(&self, model: &GridModel) -> Result<()> {
        if self.0.len() != model.num_nodes() {
            return Err(Error::Input(format!(
                "labeling has {} entries, expected {}",
                self.0.len(),
                model.num_nodes()
            )));
        }
        if let Some((v, &a)) = self.0.iter().enumerate().find(|(_, &a)| a >= model.labels()) {
            return Err(Error::Input(format!(
                "label {a} at node {v} is out of range (labels = {})",
                model.labels()
            )));
        }
        Ok(())
    }
}

/// A relaxed primal point: unary and pairwise marginal tables, laid out like
/// the corresponding potential tables of a [`GridModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalVector {
    pub unary: Vec<f64>,
    pub pair_h: Vec<f64>,
    pub pair_v: Vec<f64>,
}

impl MarginalVector {
    pub fn zeros(model: &GridModel) -> Self {
        let l = model.labels();
        MarginalVector {
            unary: vec![0.0; model.num_nodes() * l],
            pair_h: vec![0.0; model.num_h_edges() * l * l],
            pair_v: vec![0.0; model.num_v_edges() * l * l],
        }
    }

    /// The 0/1 indicator vector of an integral labeling.
    pub fn indicator(model: &GridModel, x: &Labeling) -> Result<Self> {
        x.validate(model)?;
        let l = model.labels();
        let mut mu = MarginalVector::zeros(model);
        for (v, &a) in x.0.iter().enumerate() {
            mu.unary[v * l + a] = 1.0;
        }
        for r in 0..model.height() {
            for c in 0..model.width() - 1 {
                let e = model.h_edge(r, c);
                let (a, b) = (x.0[model.node(r, c)], x.0[model.node(r, c + 1)]);
                mu.pair_h[(e * l + a) * l + b] = 1.0;
            }
        }
        for r in 0..model.height().saturating_sub(1) {
            for c in 0..model.width() {
                let e = model.v_edge(r, c);
                let (a, b) = (x.0[model.node(r, c)], x.0[model.node(r + 1, c)]);
                mu.pair_v[(e * l + a) * l + b] = 1.0;
            }
        }
        Ok(mu)
    }

    fn check_dims(&self, model: &GridModel) -> Result<()> {
        let l = model.labels();
        if self.unary.len() != model.num_nodes() * l
            || self.pair_h.len() != model.num_h_edges() * l * l
            || self.pair_v.len() != model.num_v_edges() * l * l
        {
            return Err(Error::Input("marginal vector does not match model dimensions".into()));
        }
        Ok(())
    }

    pub fn unary_row(&self, model: &GridModel, node: usize) -> &[f64] {
        let l = model.labels();
        &self.unary[node * l..(node + 1) * l]
    }
}

/// Exact energy of an integral labeling: the sum of its unary and pairwise
/// potential entries.
pub fn energy(model: &GridModel, x: &Labeling) -> Result<f64> {
    x.validate(model)?;
    let mut total = 0.0;
    for (v, &a) in x.0.iter().enumerate() {
        total += model.unary(v, a);
    }
    for r in 0..model.height() {
        for c in 0..model.width() - 1 {
            let e = model.h_edge(r, c);
            total += model.pairwise_h(e, x.0[model.node(r, c)], x.0[model.node(r, c + 1)]);
        }
    }
    for r in 0..model.height().saturating_sub(1) {
        for c in 0..model.width() {
            let e = model.v_edge(r, c);
            total += model.pairwise_v(e, x.0[model.node(r, c)], x.0[model.node(r + 1, c)]);
        }
    }
    Ok(total)
}

/// Relaxed objective `<theta, mu>` over unary and pairwise tables.
pub fn relaxed_energy(model: &GridModel, mu: &MarginalVector) -> Result<f64> {
    mu.check_dims(model)?;
    let mut total = 0.0;
    for (t, m) in model.unary.iter().zip(&mu.unary) {
        total += t * m;
    }
    for (t, m) in model.pairwise_h.iter().zip(&mu.pair_h) {
        total += t * m;
    }
    for (t, m) in model.pairwise_v.iter().zip(&mu.pair_v) {
        total += t * m;
    }
    Ok(total)
}

/// Tests all four local-polytope constraint families within `tol`: unary
/// normalization, row and column pairwise-to-unary consistency, and
/// nonnegativity.
pub fn check_local_polytope(model: &GridModel, mu: &MarginalVector, tol: f64) -> Result<bool> {
    mu.check_dims(model)?;
    if tol <= 0.0 {
        return Err(Error::Input("tolerance must be positive".into()));
    }
    let l = model.labels();
    if mu.unary.iter().chain(&mu.pair_h).chain(&mu.pair_v).any(|&x| x < -tol) {
        return Ok(false);
    }
    for v in 0..model.num_nodes() {
        let sum: f64 = mu.unary_row(model, v).iter().sum();
        if (sum - 1.0).abs() > tol {
            return Ok(false);
        }
    }
    let consistent = |table: &[f64], e: usize, u: usize, v: usize| -> bool {
        for a in 0..l {
            let row_sum: f64 = (0..l).map(|b| table[(e * l + a) * l + b]).sum();
            if (row_sum - mu.unary[u * l + a]).abs() > tol {
                return false;
            }
        }
        for b in 0..l {
            let col_sum: f64 = (0..l).map(|a| table[(e * l + a) * l + b]).sum();
            if (col_sum - mu.unary[v * l + b]).abs() > tol {
                return false;
            }
        }
        true
    };
    for r in 0..model.height() {
        for c in 0..model.width() - 1 {
            let e = model.h_edge(r, c);
            if !consistent(&mu.pair_h, e, model.node(r, c), model.node(r, c + 1)) {
                return Ok(false);
            }
        }
    }
    for r in 0..model.height().saturating_sub(1) {
        for c in 0..model.width() {
            let e = model.v_edge(r, c);
            if !consistent(&mu.pair_v, e, model.node(r, c), model.node(r + 1, c)) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn xlnx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

/// Tree-reweighted free energy of a feasible point:
/// `<theta, mu> + rho * (sum_v N_v sum_a mu_va ln mu_va
///   + sum_uv N_uv sum_ab mu_uv,ab ln(mu_uv,ab / (mu_u,a mu_v,b)))`,
/// with `0 ln 0 := 0` and zero pairwise entries contributing nothing.
pub fn trw_free_energy(
    model: &GridModel,
    dec: &ChainDecomposition,
    mu: &MarginalVector,
    rho: f64,
) -> Result<f64> {
    mu.check_dims(model)?;
    let l = model.labels();
    let n_v = dec.n_v() as f64;
    let n_uv = dec.n_uv() as f64;

    let mut node_block = 0.0;
    for &m in &mu.unary {
        node_block += xlnx(m);
    }

    let mut edge_block = 0.0;
    let mut kl = |table: &[f64], e: usize, u: usize, v: usize| {
        for a in 0..l {
            for b in 0..l {
                let m = table[(e * l + a) * l + b];
                if m > 0.0 {
                    let prod = mu.unary[u * l + a] * mu.unary[v * l + b];
                    if prod > 0.0 {
                        edge_block += m * (m / prod).ln();
                    }
                }
            }
        }
    };
    for r in 0..model.height() {
        for c in 0..model.width() - 1 {
            kl(&mu.pair_h, model.h_edge(r, c), model.node(r, c), model.node(r, c + 1));
        }
    }
    for r in 0..model.height().saturating_sub(1) {
        for c in 0..model.width() {
            kl(&mu.pair_v, model.v_edge(r, c), model.node(r, c), model.node(r + 1, c));
        }
    }

    Ok(relaxed_energy(model, mu)? + rho * (n_v * node_block + n_uv * edge_block))
}

/// Generates a grid with all unary and pairwise entries drawn i.i.d.
/// uniformly from `[0, 1)` using ChaCha8 keyed by `seed`.
///
/// Draw order is fixed: unary entries node-major then label, then all
/// horizontal edge tables, then all vertical ones. Equal arguments produce
/// bit-identical models.
pub fn generate_random_grid(height: usize, width: usize, labels: usize, seed: u64) -> Result<GridModel> {
    if height == 0 || width == 0 || labels == 0 {
        return Err(Error::Input("grid dimensions and label count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes = height * width;
    let ll = labels * labels;
    let unary: Vec<f64> = (0..nodes * labels).map(|_| rng.random::<f64>()).collect();
    let pairwise_h: Vec<f64> = (0..height * (width - 1) * ll).map(|_| rng.random::<f64>()).collect();
    let pairwise_v: Vec<f64> = (0..(height - 1) * width * ll).map(|_| rng.random::<f64>()).collect();
    GridModel::from_tables(height, width, labels, unary, pairwise_h, pairwise_v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::split_grid;

    /// 1x2 grid, two labels: unaries (0,1) at both nodes, pairwise
    /// [[0,2],[2,0]] on the single edge.
    pub(crate) fn t1() -> GridModel {
        GridModel::from_tables(1, 2, 2, vec![0.0, 1.0, 0.0, 1.0], vec![0.0, 2.0, 2.0, 0.0], vec![])
            .unwrap()
    }

    fn zero_model(h: usize, w: usize, l: usize) -> GridModel {
        GridModel::from_tables(
            h,
            w,
            l,
            vec![0.0; h * w * l],
            vec![0.0; h * (w - 1) * l * l],
            vec![0.0; (h - 1) * w * l * l],
        )
        .unwrap()
    }

    #[test]
    fn energy_of_t1_labelings() {
        let m = t1();
        assert_eq!(energy(&m, &Labeling(vec![0, 0])).unwrap(), 0.0);
        assert_eq!(energy(&m, &Labeling(vec![0, 1])).unwrap(), 3.0);
        assert_eq!(energy(&m, &Labeling(vec![1, 0])).unwrap(), 3.0);
        assert_eq!(energy(&m, &Labeling(vec![1, 1])).unwrap(), 2.0);
    }

    #[test]
    fn energy_zero_potentials() {
        let m = zero_model(3, 3, 2);
        assert_eq!(energy(&m, &Labeling(vec![1; 9])).unwrap(), 0.0);
    }

    #[test]
    fn energy_rejects_bad_labelings() {
        let m = t1();
        assert!(energy(&m, &Labeling(vec![0])).is_err());
        assert!(energy(&m, &Labeling(vec![0, 2])).is_err());
    }

    #[test]
    fn model_rejects_non_finite_and_bad_sizes() {
        assert!(GridModel::from_tables(1, 2, 2, vec![0.0; 4], vec![f64::INFINITY; 4], vec![]).is_err());
        assert!(GridModel::from_tables(1, 2, 2, vec![0.0; 3], vec![0.0; 4], vec![]).is_err());
        assert!(GridModel::from_tables(0, 2, 2, vec![], vec![], vec![]).is_err());
        assert!(GridModel::from_tables(1, 1, 0, vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn relaxed_energy_matches_energy_on_indicators() {
        let m = generate_random_grid(2, 3, 2, 7).unwrap();
        // exhaustive over all 2^6 labelings
        for bits in 0..64usize {
            let x = Labeling((0..6).map(|i| (bits >> i) & 1).collect());
            let mu = MarginalVector::indicator(&m, &x).unwrap();
            let e = energy(&m, &x).unwrap();
            let re = relaxed_energy(&m, &mu).unwrap();
            assert!((e - re).abs() < 1e-12, "bits {bits}: {e} vs {re}");
        }
    }

    #[test]
    fn relaxed_energy_uniform_t1() {
        let m = t1();
        let mu = MarginalVector {
            unary: vec![0.5; 4],
            pair_h: vec![0.25; 4],
            pair_v: vec![],
        };
        assert!((relaxed_energy(&m, &mu).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn local_polytope_accepts_indicators_and_products() {
        let m = generate_random_grid(2, 2, 3, 3).unwrap();
        let x = Labeling(vec![0, 2, 1, 1]);
        let mu = MarginalVector::indicator(&m, &x).unwrap();
        assert!(check_local_polytope(&m, &mu, 1e-12).unwrap());

        // product of uniform unaries
        let l = 3;
        let mut uni = MarginalVector::zeros(&m);
        uni.unary.fill(1.0 / l as f64);
        uni.pair_h.fill(1.0 / (l * l) as f64);
        uni.pair_v.fill(1.0 / (l * l) as f64);
        assert!(check_local_polytope(&m, &uni, 1e-12).unwrap());
    }

    #[test]
    fn local_polytope_rejects_bad_normalization() {
        let m = t1();
        let mut mu = MarginalVector::indicator(&m, &Labeling(vec![0, 0])).unwrap();
        mu.unary[0] = 0.6;
        mu.unary[1] = 0.6;
        assert!(!check_local_polytope(&m, &mu, 1e-9).unwrap());
        let mut neg = MarginalVector::indicator(&m, &Labeling(vec![0, 0])).unwrap();
        neg.pair_h[1] = -1e-3;
        assert!(!check_local_polytope(&m, &neg, 1e-9).unwrap());
    }

    #[test]
    fn convex_combinations_of_indicators_stay_feasible() {
        let m = generate_random_grid(2, 2, 2, 11).unwrap();
        let xs = [
            Labeling(vec![0, 0, 0, 0]),
            Labeling(vec![1, 0, 1, 0]),
            Labeling(vec![1, 1, 1, 1]),
        ];
        let weights = [0.2, 0.5, 0.3];
        let mut mix = MarginalVector::zeros(&m);
        for (x, &w) in xs.iter().zip(&weights) {
            let ind = MarginalVector::indicator(&m, x).unwrap();
            for (acc, v) in mix.unary.iter_mut().zip(&ind.unary) {
                *acc += w * v;
            }
            for (acc, v) in mix.pair_h.iter_mut().zip(&ind.pair_h) {
                *acc += w * v;
            }
            for (acc, v) in mix.pair_v.iter_mut().zip(&ind.pair_v) {
                *acc += w * v;
            }
        }
        assert!(check_local_polytope(&m, &mix, 1e-12).unwrap());
    }

    #[test]
    fn free_energy_on_integral_points_equals_energy() {
        let m = generate_random_grid(2, 3, 2, 5).unwrap();
        let dec = split_grid(&m);
        let x = Labeling(vec![1, 0, 1, 0, 0, 1]);
        let mu = MarginalVector::indicator(&m, &x).unwrap();
        for rho in [0.1, 1.0, 3.0] {
            let fe = trw_free_energy(&m, &dec, &mu, rho).unwrap();
            assert!((fe - energy(&m, &x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn free_energy_zero_model_uniform() {
        let m = zero_model(1, 2, 2);
        let dec = split_grid(&m);
        let mu = MarginalVector {
            unary: vec![0.5; 4],
            pair_h: vec![0.25; 4],
            pair_v: vec![],
        };
        let fe = trw_free_energy(&m, &dec, &mu, 1.0).unwrap();
        assert!((fe - (-2.0 * 4.0_f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn free_energy_is_affine_in_rho() {
        let m = generate_random_grid(2, 2, 2, 9).unwrap();
        let dec = split_grid(&m);
        let mut mu = MarginalVector::zeros(&m);
        mu.unary.fill(0.5);
        mu.pair_h.fill(0.25);
        mu.pair_v.fill(0.25);
        let base = relaxed_energy(&m, &mu).unwrap();
        let at = |rho: f64| trw_free_energy(&m, &dec, &mu, rho).unwrap();
        assert!((at(0.0) - base).abs() < 1e-14);
        let slope1 = at(1.0) - base;
        let slope2 = (at(2.0) - base) / 2.0;
        assert!((slope1 - slope2).abs() < 1e-12);
    }

    #[test]
    fn random_grid_is_reproducible_and_in_range() {
        let a = generate_random_grid(4, 3, 3, 42).unwrap();
        let b = generate_random_grid(4, 3, 3, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_random_grid(4, 3, 3, 43).unwrap();
        assert_ne!(a, c);
        assert!(a.unary.iter().chain(&a.pairwise_h).chain(&a.pairwise_v).all(|&x| (0.0..1.0).contains(&x)));
        assert_eq!(a.unary.len(), 36);
        assert_eq!(a.log_labelspace(), 12.0 * 3.0_f64.ln());
    }

    #[test]
    fn single_node_single_label_grid() {
        let m = generate_random_grid(1, 1, 1, 0).unwrap();
        let x = Labeling(vec![0]);
        assert_eq!(energy(&m, &x).unwrap(), m.unary(0, 0));
    }
}
