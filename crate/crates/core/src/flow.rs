//! Min-cost flow on the 16-direction lattice graph of a 2D grid, used for
//! `W_1` between grid measures.
//!
//! Successive shortest paths with Dijkstra on reduced costs. Arcs carry no
//! capacity, so each augmentation exhausts a source, a sink, or a reverse arc.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::grid::Grid;

/// Lattice directions `(a, b)` with `max(|a|,|b|) <= 2` and `gcd(|a|,|b|) = 1`.
pub(crate) const STENCIL: [(i64, i64); 16] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
    (2, 1),
    (2, -1),
    (-2, 1),
    (-2, -1),
    (1, 2),
    (1, -2),
    (-1, 2),
    (-1, -2),
];

const MASS_TOL: f64 = 1e-17;

#[derive(Clone, Copy, PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    // min-heap on distance, ties by node index
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub(crate) struct LatticeGraph {
    pub tail: Vec<usize>,
    pub head: Vec<usize>,
    pub cost: Vec<f64>,
    out_start: Vec<usize>,
    in_start: Vec<usize>,
    in_arcs: Vec<usize>,
}

impl LatticeGraph {
    pub fn new(grid: &Grid) -> Self {
        assert_eq!(grid.dim(), 2);
        let (n0, n1) = (grid.shape()[0], grid.shape()[1]);
        let (h0, h1) = (grid.spacing(0), grid.spacing(1));
        let nodes = n0 * n1;
        let mut tail = Vec::new();
        let mut head = Vec::new();
        let mut cost = Vec::new();
        let mut out_start = Vec::with_capacity(nodes + 1);
        for i in 0..n0 {
            for j in 0..n1 {
                out_start.push(head.len());
                for &(a, b) in &STENCIL {
                    let (ti, tj) = (i as i64 + a, j as i64 + b);
                    let target = if grid.is_periodic() {
                        let ti = ti.rem_euclid(n0 as i64) as usize;
                        let tj = tj.rem_euclid(n1 as i64) as usize;
                        Some(ti * n1 + tj)
                    } else if ti >= 0 && tj >= 0 && (ti as usize) < n0 && (tj as usize) < n1 {
                        Some(ti as usize * n1 + tj as usize)
                    } else {
                        None
                    };
                    if let Some(t) = target {
                        if t == i * n1 + j {
                            continue;
                        }
                        tail.push(i * n1 + j);
                        head.push(t);
                        let (da, db) = (a as f64 * h0, b as f64 * h1);
                        cost.push((da * da + db * db).sqrt());
                    }
                }
            }
        }
        out_start.push(head.len());
        let mut counts = vec![0usize; nodes + 1];
        for &t in &head {
            counts[t + 1] += 1;
        }
        for k in 0..nodes {
            counts[k + 1] += counts[k];
        }
        let in_start = counts.clone();
        let mut fill = counts;
        let mut in_arcs = vec![0usize; head.len()];
        for (arc, &t) in head.iter().enumerate() {
            in_arcs[fill[t]] = arc;
            fill[t] += 1;
        }
        LatticeGraph { tail, head, cost, out_start, in_start, in_arcs }
    }

    fn nodes(&self) -> usize {
        self.out_start.len() - 1
    }

    /// Min-cost flow from `supply` to `demand` (equal totals). Returns the cost.
    pub fn transport(&self, supply: &[f64], demand: &[f64]) -> f64 {
        let nodes = self.nodes();
        let mut excess: Vec<f64> = supply.iter().zip(demand).map(|(s, d)| s - d).collect();
        let mut flow = vec![0.0f64; self.head.len()];
        let mut pot = vec![0.0f64; nodes];
        let mut dist = vec![f64::INFINITY; nodes];
        let mut done = vec![false; nodes];
        // (arc, forward) used to reach a node
        let mut pred: Vec<(usize, bool)> = vec![(usize::MAX, true); nodes];
        let mut touched: Vec<usize> = Vec::new();
        let mut settled: Vec<usize> = Vec::new();
        let mut heap = BinaryHeap::new();

        loop {
            heap.clear();
            for (v, &e) in excess.iter().enumerate() {
                if e > MASS_TOL {
                    dist[v] = 0.0;
                    pred[v] = (usize::MAX, true);
                    touched.push(v);
                    heap.push(Entry(0.0, v));
                }
            }
            if heap.is_empty() {
                break;
            }
            let mut target = None;
            while let Some(Entry(d, u)) = heap.pop() {
                if done[u] || d > dist[u] {
                    continue;
                }
                done[u] = true;
                settled.push(u);
                if excess[u] < -MASS_TOL {
                    target = Some(u);
                    break;
                }
                for arc in self.out_start[u]..self.out_start[u + 1] {
                    let v = self.head[arc];
                    let rc = (self.cost[arc] + pot[u] - pot[v]).max(0.0);
                    let nd = d + rc;
                    if nd < dist[v] {
                        if dist[v].is_infinite() {
                            touched.push(v);
                        }
                        dist[v] = nd;
                        pred[v] = (arc, true);
                        heap.push(Entry(nd, v));
                    }
                }
                for k in self.in_start[u]..self.in_start[u + 1] {
                    let arc = self.in_arcs[k];
                    if flow[arc] <= MASS_TOL {
                        continue;
                    }
                    let v = self.tail[arc];
                    let rc = (-self.cost[arc] + pot[u] - pot[v]).max(0.0);
                    let nd = d + rc;
                    if nd < dist[v] {
                        if dist[v].is_infinite() {
                            touched.push(v);
                        }
                        dist[v] = nd;
                        pred[v] = (arc, false);
                        heap.push(Entry(nd, v));
                    }
                }
            }
            let Some(t) = target else {
                // remaining imbalance is round-off
                break;
            };
            let dt = dist[t];
            // bottleneck along the path
            let mut delta = -excess[t];
            let mut v = t;
            while pred[v].0 != usize::MAX {
                let (arc, fwd) = pred[v];
                if fwd {
                    v = self.tail[arc];
                } else {
                    delta = delta.min(flow[arc]);
                    v = self.head[arc];
                }
            }
            let s = v;
            delta = delta.min(excess[s]);
            let mut v = t;
            while pred[v].0 != usize::MAX {
                let (arc, fwd) = pred[v];
                if fwd {
                    flow[arc] += delta;
                    v = self.tail[arc];
                } else {
                    flow[arc] = (flow[arc] - delta).max(0.0);
                    v = self.head[arc];
                }
            }
            excess[s] -= delta;
            excess[t] += delta;
            for &u in &settled {
                pot[u] += dist[u] - dt;
            }
            for &u in &touched {
                dist[u] = f64::INFINITY;
                done[u] = false;
            }
            for &u in &settled {
                done[u] = false;
            }
            touched.clear();
            settled.clear();
        }
        flow.iter().zip(&self.cost).map(|(f, c)| f * c).sum()
    }

    /// All-pairs shortest path lengths (test oracle use).
    #[cfg(test)]
    pub fn distances_from(&self, source: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.nodes()];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Entry(0.0, source));
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for arc in self.out_start[u]..self.out_start[u + 1] {
                let v = self.head[arc];
                if d + self.cost[arc] < dist[v] {
                    dist[v] = d + self.cost[arc];
                    heap.push(Entry(dist[v], v));
                }
            }
        }
        dist
    }
}

/// `W_1` on the lattice graph between two mass vectors on a 2D grid.
pub(crate) fn lattice_w1(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    LatticeGraph::new(grid).transport(a, b)
}
