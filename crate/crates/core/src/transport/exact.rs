//! Transportation simplex on the bipartite support graph.
//!
//! The basis is a spanning tree of `m + n - 1` cells (degenerate cells carry
//! zero flow). Dual potentials are recomputed along the tree each pivot; the
//! entering cell has the most negative reduced cost (lowest linear index on
//! ties) and the leaving cell is the lowest-index cell among the minimisers of
//! the ratio test. After a long run of degenerate pivots pricing switches to
//! the first negative cell, which rules out cycling.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, LP_SIZE_LIMIT};

use super::{Cost, TransportPlan};

const DEGENERATE_STREAK: usize = 64;

/// Optimal plan of the discrete Kantorovich problem for `cost`, with dual
/// potentials certifying optimality.
pub fn solve_exact(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cost: &Cost) -> Result<TransportPlan> {
    cost.validate()?;
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    check_size(mu, nu)?;
    solve_exact_with_matrix(mu, nu, cost.matrix(mu, nu))
}

/// As [`solve_exact`] with an explicit row-major `|μ| × |ν|` cost matrix.
pub fn solve_exact_with_matrix(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cost: Vec<f64>) -> Result<TransportPlan> {
    check_size(mu, nu)?;
    let (m, n) = (mu.len(), nu.len());
    if cost.len() != m * n {
        return Err(Error::DimensionMismatch { expected: m * n, got: cost.len() });
    }
    if let Some(k) = cost.iter().position(|c| !c.is_finite()) {
        return Err(Error::param("cost", format!("non-finite entry at ({}, {})", k / n, k % n)));
    }
    let mut simplex = Simplex::new(mu.weights(), nu.weights(), &cost);
    let iterations = simplex.run()?;
    let mut gamma = vec![0.0; m * n];
    for cell in &simplex.cells {
        gamma[cell.i * n + cell.j] += cell.x;
    }
    let (u, v) = simplex.duals();
    let mut plan = TransportPlan::new(mu.clone(), nu.clone(), gamma, &cost);
    plan.duals = Some((u, v));
    plan.iterations = iterations;
    Ok(plan)
}

fn check_size(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<()> {
    if mu.len() > LP_SIZE_LIMIT || nu.len() > LP_SIZE_LIMIT {
        return Err(Error::TooLarge { rows: mu.len(), cols: nu.len(), limit: LP_SIZE_LIMIT });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    i: usize,
    j: usize,
    x: f64,
}

struct Simplex<'a> {
    m: usize,
    n: usize,
    cost: &'a [f64],
    cells: Vec<Cell>,
    // tree adjacency: node k < m is row k, node m + j is column j
    adj: Vec<Vec<usize>>,
    u: Vec<f64>,
    v: Vec<f64>,
    tol: f64,
}

impl<'a> Simplex<'a> {
    fn new(a: &[f64], b: &[f64], cost: &'a [f64]) -> Self {
        let (m, n) = (a.len(), b.len());
        let mut ra = a.to_vec();
        let mut rb = b.to_vec();
        let mut cells = Vec::with_capacity(m + n - 1);
        let (mut i, mut j) = (0usize, 0usize);
        // north-west corner rule: exactly m + n - 1 cells
        loop {
            if i == m - 1 && j == n - 1 {
                cells.push(Cell { i, j, x: rb[j].max(0.0) });
                break;
            }
            let move_row = if i == m - 1 {
                false
            } else if j == n - 1 {
                true
            } else {
                ra[i] <= rb[j]
            };
            if move_row {
                let x = ra[i].max(0.0);
                rb[j] = (rb[j] - x).max(0.0);
                cells.push(Cell { i, j, x });
                i += 1;
            } else {
                let x = rb[j].max(0.0);
                ra[i] = (ra[i] - x).max(0.0);
                cells.push(Cell { i, j, x });
                j += 1;
            }
        }
        let scale = cost.iter().fold(0.0f64, |s, c| s.max(c.abs())).max(1e-300);
        let mut s = Simplex {
            m,
            n,
            cost,
            cells,
            adj: vec![Vec::new(); m + n],
            u: vec![0.0; m],
            v: vec![0.0; n],
            tol: 1e-13 * scale,
        };
        s.rebuild_adjacency();
        s
    }

    fn rebuild_adjacency(&mut self) {
        for list in &mut self.adj {
            list.clear();
        }
        for (k, c) in self.cells.iter().enumerate() {
            self.adj[c.i].push(k);
            self.adj[self.m + c.j].push(k);
        }
    }

    fn compute_duals(&mut self) {
        let (m, n) = (self.m, self.n);
        let mut seen = vec![false; m + n];
        let mut queue = VecDeque::new();
        self.u[0] = 0.0;
        seen[0] = true;
        queue.push_back(0usize);
        while let Some(node) = queue.pop_front() {
            for &k in &self.adj[node] {
                let c = self.cells[k];
                let cij = self.cost[c.i * n + c.j];
                if node < m {
                    let col = m + c.j;
                    if !seen[col] {
                        self.v[c.j] = cij - self.u[c.i];
                        seen[col] = true;
                        queue.push_back(col);
                    }
                } else if !seen[c.i] {
                    self.u[c.i] = cij - self.v[c.j];
                    seen[c.i] = true;
                    queue.push_back(c.i);
                }
            }
        }
    }

    fn duals(&self) -> (Vec<f64>, Vec<f64>) {
        (self.u.clone(), self.v.clone())
    }

    /// Entering cell: most negative reduced cost, or the first negative one
    /// under Bland's rule.
    fn price(&self, bland: bool) -> Option<(usize, usize)> {
        let n = self.n;
        let mut best: Option<(usize, usize)> = None;
        let mut best_r = -self.tol;
        for i in 0..self.m {
            let ui = self.u[i];
            let row = &self.cost[i * n..(i + 1) * n];
            for (j, &c) in row.iter().enumerate() {
                let r = c - ui - self.v[j];
                if r < best_r {
                    best = Some((i, j));
                    if bland {
                        return best;
                    }
                    best_r = r;
                }
            }
        }
        best
    }

    /// Tree path (cell indices) from row node `i` to column node `m + j`.
    fn path(&self, i: usize, j: usize) -> Vec<usize> {
        let total = self.m + self.n;
        let mut via = vec![usize::MAX; total];
        let mut seen = vec![false; total];
        let mut queue = VecDeque::new();
        seen[i] = true;
        queue.push_back(i);
        let goal = self.m + j;
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            for &k in &self.adj[node] {
                let c = self.cells[k];
                let other = if node < self.m { self.m + c.j } else { c.i };
                if !seen[other] {
                    seen[other] = true;
                    via[other] = k;
                    queue.push_back(other);
                }
            }
        }
        let mut out = Vec::new();
        let mut node = goal;
        while node != i {
            let k = via[node];
            out.push(k);
            let c = self.cells[k];
            node = if node < self.m { self.m + c.j } else { c.i };
        }
        out
    }

    fn run(&mut self) -> Result<usize> {
        let limit = 200 * (self.m + self.n) * (self.m + self.n) + 1000;
        let mut streak = 0usize;
        for iter in 0..limit {
            self.compute_duals();
            let Some((i, j)) = self.price(streak >= DEGENERATE_STREAK) else {
                return Ok(iter);
            };
            // cycle: entering (i, j) +, then path from column j back to row i
            // alternates -, +, -, ...
            let path = self.path(i, j);
            let mut theta = f64::INFINITY;
            let mut leave = usize::MAX;
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    let c = self.cells[k];
                    let lin = c.i * self.n + c.j;
                    let better =
                        c.x < theta || (c.x == theta && lin < self.cells[leave].i * self.n + self.cells[leave].j);
                    if better {
                        theta = c.x;
                        leave = k;
                    }
                }
            }
            for (pos, &k) in path.iter().enumerate() {
                let c = &mut self.cells[k];
                if pos % 2 == 0 {
                    c.x = if k == leave { 0.0 } else { (c.x - theta).max(0.0) };
                } else {
                    c.x += theta;
                }
            }
            self.cells[leave] = Cell { i, j, x: theta };
            self.rebuild_adjacency();
            streak = if theta > 0.0 { 0 } else { streak + 1 };
        }
        Err(Error::Unsupported(format!("transportation simplex did not terminate in {limit} pivots")))
    }
}
