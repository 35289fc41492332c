//! Exact discrete OT via the transportation simplex (MODI / u-v method).
//!
//! The basis is a spanning tree over the `n + m` row and column nodes with
//! exactly `n + m - 1` basic cells. The start is a least-cost greedy
//! allocation completed with zero-flow cells. Pricing is Dantzig (most
//! negative reduced cost, lowest cell index on ties); after a run of
//! degenerate pivots the solver switches to Bland's rule (lowest-index
//! entering and leaving cells) until the objective moves again, which rules
//! out cycling.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{cost_matrix, validate_costs, validate_weights, DiscreteMeasure, TransportPlan, MARGINAL_TOL};

/// Exact OT between two discrete measures under `cost`.
///
/// Returns `(Σ γ_ij C_ij, γ)` for an optimal coupling `γ`.
pub fn exact_ot<F>(a: &DiscreteMeasure, b: &DiscreteMeasure, cost: F) -> Result<(f64, TransportPlan)>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    let c = cost_matrix(a, b, cost);
    exact_ot_matrix(a.weights(), b.weights(), &c)
}

/// Exact OT for explicit weights and cost matrix.
pub fn exact_ot_matrix(a: &[f64], b: &[f64], cost: &Matrix) -> Result<(f64, TransportPlan)> {
    let sa = validate_weights(a, "source")?;
    let sb = validate_weights(b, "target")?;
    if (sa - sb).abs() > MARGINAL_TOL {
        return Err(Error::MassMismatch { source_mass: sa, target_mass: sb });
    }
    validate_costs(cost, a.len(), b.len())?;
    if let Some(c) = cost.as_slice().iter().find(|c| **c < 0.0) {
        return Err(Error::Domain(format!("negative cost {c}")));
    }

    let mut solver = Transportation::new(a, b, cost);
    solver.solve()?;
    let plan = TransportPlan::from_matrix(solver.plan());
    Ok((plan.cost(cost), plan))
}

struct Transportation<'a> {
    n: usize,
    m: usize,
    cost: &'a Matrix,
    /// Basic cells as `(row, col)`; index is the cell id within the basis.
    cells: Vec<(usize, usize)>,
    flow: Vec<f64>,
    /// Node adjacency: rows are `0..n`, columns are `n..n+m`; entries are basis ids.
    adj: Vec<Vec<usize>>,
    u: Vec<f64>,
    v: Vec<f64>,
    parent_edge: Vec<usize>,
    depth: Vec<usize>,
}

const NO_EDGE: usize = usize::MAX;

impl<'a> Transportation<'a> {
    fn new(a: &[f64], b: &[f64], cost: &'a Matrix) -> Self {
        let (n, m) = (a.len(), b.len());
        let mut s = Self {
            n,
            m,
            cost,
            cells: Vec::with_capacity(n + m - 1),
            flow: Vec::with_capacity(n + m - 1),
            adj: vec![Vec::new(); n + m],
            u: vec![0.0; n],
            v: vec![0.0; m],
            parent_edge: vec![NO_EDGE; n + m],
            depth: vec![0; n + m],
        };
        s.initial_basis(a, b);
        s
    }

    fn add_cell(&mut self, i: usize, j: usize, x: f64) {
        let id = self.cells.len();
        self.cells.push((i, j));
        self.flow.push(x);
        self.adj[i].push(id);
        self.adj[self.n + j].push(id);
    }

    /// Least-cost greedy allocation, then zero cells to complete a spanning tree.
    fn initial_basis(&mut self, a: &[f64], b: &[f64]) {
        let (n, m) = (self.n, self.m);
        let mut order: Vec<usize> = (0..n * m).collect();
        order.sort_by(|&x, &y| {
            self.cost.as_slice()[x]
                .partial_cmp(&self.cost.as_slice()[y])
                .unwrap()
                .then(x.cmp(&y))
        });

        let mut supply = a.to_vec();
        let mut demand = b.to_vec();
        let mut row_alive = vec![true; n];
        let mut col_alive = vec![true; m];
        let mut uf = UnionFind::new(n + m);
        for &cell in &order {
            let (i, j) = (cell / m, cell % m);
            if !row_alive[i] || !col_alive[j] {
                continue;
            }
            let x = supply[i].min(demand[j]);
            supply[i] -= x;
            demand[j] -= x;
            self.add_cell(i, j, x);
            uf.union(i, n + j);
            // Retire exactly one node per cell so the basis stays a forest
            // whose components each keep at most one live node.
            if supply[i] <= demand[j] {
                row_alive[i] = false;
            } else {
                col_alive[j] = false;
            }
            if self.cells.len() == n + m - 1 {
                break;
            }
        }
        if self.cells.len() < n + m - 1 {
            for &cell in &order {
                let (i, j) = (cell / m, cell % m);
                if uf.find(i) != uf.find(n + j) {
                    uf.union(i, n + j);
                    self.add_cell(i, j, 0.0);
                    if self.cells.len() == n + m - 1 {
                        break;
                    }
                }
            }
        }
        debug_assert_eq!(self.cells.len(), n + m - 1);
    }

    /// Recomputes potentials `u_i + v_j = C_ij` on basic cells, plus the
    /// BFS parent structure rooted at row 0.
    fn refresh_tree(&mut self) {
        let n = self.n;
        let total = self.n + self.m;
        let mut seen = vec![false; total];
        let mut queue = Vec::with_capacity(total);
        seen[0] = true;
        self.u[0] = 0.0;
        self.parent_edge[0] = NO_EDGE;
        self.depth[0] = 0;
        queue.push(0);
        let mut head = 0;
        while head < queue.len() {
            let node = queue[head];
            head += 1;
            for &e in &self.adj[node] {
                let (i, j) = self.cells[e];
                let other = if node < n { n + j } else { i };
                if seen[other] {
                    continue;
                }
                seen[other] = true;
                let c = self.cost.get(i, j);
                if other >= n {
                    self.v[j] = c - self.u[i];
                } else {
                    self.u[i] = c - self.v[j];
                }
                self.parent_edge[other] = e;
                self.depth[other] = self.depth[node] + 1;
                queue.push(other);
            }
        }
        debug_assert!(seen.iter().all(|&s| s), "basis is not spanning");
    }

    fn other_end(&self, e: usize, node: usize) -> usize {
        let (i, j) = self.cells[e];
        if node < self.n {
            self.n + j
        } else {
            i
        }
    }

    /// Basis edges on the tree path from column `j` to row `i`, in order.
    fn cycle_path(&self, i: usize, j: usize) -> Vec<usize> {
        let mut from_col = Vec::new();
        let mut from_row = Vec::new();
        let (mut x, mut y) = (self.n + j, i);
        while self.depth[x] > self.depth[y] {
            let e = self.parent_edge[x];
            from_col.push(e);
            x = self.other_end(e, x);
        }
        while self.depth[y] > self.depth[x] {
            let e = self.parent_edge[y];
            from_row.push(e);
            y = self.other_end(e, y);
        }
        while x != y {
            let ex = self.parent_edge[x];
            from_col.push(ex);
            x = self.other_end(ex, x);
            let ey = self.parent_edge[y];
            from_row.push(ey);
            y = self.other_end(ey, y);
        }
        from_col.extend(from_row.into_iter().rev());
        from_col
    }

    fn entering(&self, bland: bool, tol: f64) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        let mut best_rc = -tol;
        for i in 0..self.n {
            let row = self.cost.row(i);
            let ui = self.u[i];
            for (j, &c) in row.iter().enumerate() {
                let rc = c - ui - self.v[j];
                if rc < best_rc {
                    if bland {
                        return Some((i, j));
                    }
                    best_rc = rc;
                    best = Some((i, j));
                }
            }
        }
        best
    }

    fn solve(&mut self) -> Result<()> {
        let (n, m) = (self.n, self.m);
        let tol = 1e-12 * self.cost.max_abs().max(1.0);
        let max_pivots = 100 * (n * m) + 1000;
        let mut degenerate_run = 0usize;
        let bland_after = 2 * (n + m);
        for _ in 0..max_pivots {
            self.refresh_tree();
            let bland = degenerate_run >= bland_after;
            let Some((ei, ej)) = self.entering(bland, tol) else {
                return Ok(());
            };
            let path = self.cycle_path(ei, ej);
            // Odd positions along the path (0, 2, ...) lose flow.
            let mut leave_pos = usize::MAX;
            let mut theta = f64::INFINITY;
            let mut leave_key = usize::MAX;
            for (k, &e) in path.iter().enumerate().step_by(2) {
                let x = self.flow[e];
                let (ci, cj) = self.cells[e];
                let key = ci * m + cj;
                if x < theta || (x == theta && key < leave_key) {
                    theta = x;
                    leave_pos = k;
                    leave_key = key;
                }
            }
            for (k, &e) in path.iter().enumerate() {
                if k % 2 == 0 {
                    self.flow[e] -= theta;
                } else {
                    self.flow[e] += theta;
                }
            }
            if theta > 0.0 {
                degenerate_run = 0;
            } else {
                degenerate_run += 1;
            }
            let leaving = path[leave_pos];
            self.flow[leaving] = 0.0;
            self.replace_cell(leaving, ei, ej, theta);
        }
        Err(Error::NumericalFailure {
            step: max_pivots,
            what: "transportation simplex exceeded its pivot budget".into(),
        })
    }

    fn replace_cell(&mut self, id: usize, i: usize, j: usize, x: f64) {
        let n = self.n;
        let (oi, oj) = self.cells[id];
        self.adj[oi].retain(|&e| e != id);
        self.adj[n + oj].retain(|&e| e != id);
        self.cells[id] = (i, j);
        self.flow[id] = x;
        self.adj[i].push(id);
        self.adj[n + j].push(id);
    }

    fn plan(&self) -> Matrix {
        let mut p = Matrix::zeros(self.n, self.m);
        for (&(i, j), &x) in self.cells.iter().zip(&self.flow) {
            p.add_at(i, j, x.max(0.0));
        }
        p
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }
}
