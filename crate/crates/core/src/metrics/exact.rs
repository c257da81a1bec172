//! Exact discrete optimal transport between uniform point clouds.
//!
//! Equal sizes reduce to an assignment problem, solved with the
//! shortest-augmenting-path Hungarian method. Unequal sizes go through a
//! primal network simplex on the complete bipartite graph, with the uniform
//! marginals `1/n`, `1/m` scaled to integers by `L = lcm(n, m)` so the flow
//! arithmetic is exact.

use num_integer::Integer;
use serde::{Deserialize, Serialize};

use super::{check_same_dim, uniform, EmbeddingSet, MetricError, Result, TransportPlan};
use crate::linalg::{pairwise_dists, pairwise_sq_dists, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostPower {
    /// `‖x − y‖²`, giving W₂².
    Squared,
    /// `‖x − y‖`, giving W₁.
    Linear,
}

pub fn exact_ot(x: &EmbeddingSet, y: &EmbeddingSet, power: CostPower) -> Result<TransportPlan> {
    check_same_dim(x, y)?;
    let cost = match power {
        CostPower::Squared => pairwise_sq_dists(x.points(), y.points())?,
        CostPower::Linear => pairwise_dists(x.points(), y.points())?,
    };
    exact_ot_with_cost(&cost)
}

/// Optimal plan between uniform marginals for an arbitrary cost matrix.
pub fn exact_ot_with_cost(cost: &Matrix) -> Result<TransportPlan> {
    let (n, m) = (cost.rows(), cost.cols());
    if n == 0 || m == 0 {
        return Err(MetricError::TooFewSamples { needed: 1, found: 0 });
    }
    if !cost.is_finite() {
        return Err(MetricError::SolverFailure("non-finite cost".into()));
    }
    let mut weights = Matrix::zeros(n, m);
    if n == m {
        let w = 1.0 / n as f64;
        for (i, j) in solve_assignment(cost)?.into_iter().enumerate() {
            weights[(i, j)] = w;
        }
    } else {
        let l = n.lcm(&m);
        let flow = network_simplex(cost, &vec![(l / n) as i64; n], &vec![(l / m) as i64; m])?;
        for (w, f) in weights.as_mut_slice().iter_mut().zip(flow) {
            if f != 0 {
                *w = f as f64 / l as f64;
            }
        }
    }
    let total_cost = weights
        .as_slice()
        .iter()
        .zip(cost.as_slice())
        .filter(|(w, _)| **w != 0.0)
        .map(|(w, c)| w * c)
        .sum();
    Ok(TransportPlan {
        weights,
        row_marginal: uniform(n),
        col_marginal: uniform(m),
        total_cost,
    })
}

/// Minimum-cost perfect matching on a square cost matrix; entry `i` of the
/// result is the column matched to row `i`.
pub fn solve_assignment(cost: &Matrix) -> Result<Vec<usize>> {
    if !cost.is_square() {
        return Err(MetricError::DimensionMismatch {
            left: cost.rows(),
            right: cost.cols(),
        });
    }
    let n = cost.rows();
    // 1-based potentials; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let row = cost.row(i0 - 1);
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = row[j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if j1 == 0 {
                return Err(MetricError::SolverFailure("assignment search stalled".into()));
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// Min-cost flow from `supplies` (rows) to `demands` (columns) over the
/// complete bipartite graph with arc costs `cost[i][j]`. Returns the
/// row-major integer flow. Supplies and demands must be positive and balance.
pub fn network_simplex(cost: &Matrix, supplies: &[i64], demands: &[i64]) -> Result<Vec<i64>> {
    let (n, m) = (cost.rows(), cost.cols());
    if supplies.len() != n || demands.len() != m {
        return Err(MetricError::DimensionMismatch {
            left: supplies.len() * demands.len(),
            right: n * m,
        });
    }
    if supplies.iter().chain(demands).any(|&s| s <= 0) {
        return Err(MetricError::SolverFailure("supplies and demands must be positive".into()));
    }
    if supplies.iter().sum::<i64>() != demands.iter().sum::<i64>() {
        return Err(MetricError::SolverFailure("supplies and demands do not balance".into()));
    }
    let mut s = Simplex::new(cost, supplies, demands);
    s.run()?;
    if s.flow[n * m..].iter().any(|&f| f != 0) {
        return Err(MetricError::SolverFailure("artificial arcs still carry flow".into()));
    }
    s.flow.truncate(n * m);
    Ok(s.flow)
}

/// Spanning-tree state for the primal network simplex.
///
/// Nodes `0..n` are supplies, `n..n+m` demands and `n+m` an artificial root.
/// Arc `i·m + j` is the real arc `i → n+j`; arcs `nm + i` (`i → root`) and
/// `nm + n + j` (`root → n+j`) form the initial big-M basis.
struct Simplex {
    n: usize,
    m: usize,
    root: usize,
    src: Vec<usize>,
    dst: Vec<usize>,
    cost: Vec<f64>,
    flow: Vec<i64>,
    tree_adj: Vec<Vec<usize>>,
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    potential: Vec<f64>,
    next_arc: usize,
    block: usize,
    rc_tol: f64,
}

impl Simplex {
    fn new(cost: &Matrix, supplies: &[i64], demands: &[i64]) -> Self {
        let (n, m) = (cost.rows(), cost.cols());
        let nodes = n + m + 1;
        let root = n + m;
        let real = n * m;
        let arcs = real + n + m;
        let max_cost = cost.max_abs();
        let big = (max_cost + 1.0) * nodes as f64;

        let mut src = Vec::with_capacity(arcs);
        let mut dst = Vec::with_capacity(arcs);
        let mut arc_cost = Vec::with_capacity(arcs);
        for i in 0..n {
            for j in 0..m {
                src.push(i);
                dst.push(n + j);
                arc_cost.push(cost[(i, j)]);
            }
        }
        let mut flow = vec![0i64; arcs];
        let mut tree_adj = vec![Vec::new(); nodes];
        for (i, &s) in supplies.iter().enumerate() {
            let a = real + i;
            src.push(i);
            dst.push(root);
            arc_cost.push(big);
            flow[a] = s;
            tree_adj[i].push(a);
            tree_adj[root].push(a);
        }
        for (j, &d) in demands.iter().enumerate() {
            let a = real + n + j;
            src.push(root);
            dst.push(n + j);
            arc_cost.push(big);
            flow[a] = d;
            tree_adj[n + j].push(a);
            tree_adj[root].push(a);
        }
        let mut s = Self {
            n,
            m,
            root,
            src,
            dst,
            cost: arc_cost,
            flow,
            tree_adj,
            parent: vec![0; nodes],
            parent_arc: vec![usize::MAX; nodes],
            depth: vec![0; nodes],
            potential: vec![0.0; nodes],
            next_arc: 0,
            block: ((real as f64).sqrt() as usize).max(16).min(real.max(1)),
            rc_tol: 1e-12 * max_cost.max(1.0),
        };
        s.rebuild_tree();
        s
    }

    fn rebuild_tree(&mut self) {
        let root = self.root;
        self.parent[root] = root;
        self.parent_arc[root] = usize::MAX;
        self.depth[root] = 0;
        self.potential[root] = 0.0;
        let mut stack = vec![root];
        while let Some(u) = stack.pop() {
            for &a in &self.tree_adj[u] {
                if a == self.parent_arc[u] {
                    continue;
                }
                let (child, pot) = if self.src[a] == u {
                    (self.dst[a], self.potential[u] + self.cost[a])
                } else {
                    (self.src[a], self.potential[u] - self.cost[a])
                };
                self.parent[child] = u;
                self.parent_arc[child] = a;
                self.depth[child] = self.depth[u] + 1;
                self.potential[child] = pot;
                stack.push(child);
            }
        }
    }

    fn reduced_cost(&self, a: usize) -> f64 {
        self.cost[a] + self.potential[self.src[a]] - self.potential[self.dst[a]]
    }

    /// Block-search pricing over the real arcs.
    fn entering_arc(&mut self) -> Option<usize> {
        let real = self.n * self.m;
        let mut best = None;
        let mut best_rc = -self.rc_tol;
        let mut scanned = 0;
        while scanned < real {
            let end = (scanned + self.block).min(real);
            for _ in scanned..end {
                let a = self.next_arc;
                self.next_arc = if a + 1 == real { 0 } else { a + 1 };
                if self.flow[a] == 0 {
                    let rc = self.reduced_cost(a);
                    if rc < best_rc {
                        best_rc = rc;
                        best = Some(a);
                    }
                }
            }
            scanned = end;
            if best.is_some() {
                break;
            }
        }
        best
    }

    fn run(&mut self) -> Result<()> {
        let arcs = self.src.len();
        let max_pivots = 64 * arcs + 10_000;
        for _ in 0..max_pivots {
            let Some(entering) = self.entering_arc() else {
                return Ok(());
            };
            self.pivot(entering)?;
        }
        Err(MetricError::SolverFailure(format!("no optimum after {max_pivots} pivots")))
    }

    fn pivot(&mut self, entering: usize) -> Result<()> {
        let (u, v) = (self.src[entering], self.dst[entering]);
        let mut a = u;
        let mut b = v;
        while a != b {
            if self.depth[a] >= self.depth[b] {
                a = self.parent[a];
            } else {
                b = self.parent[b];
            }
        }
        let apex = a;

        // The cycle runs apex → … → u → v → … → apex. Arcs against that
        // direction lose flow and may block; ties go to the last blocking
        // arc met from the apex, which keeps the tree strongly feasible.
        let mut delta = i64::MAX;
        let mut leaving = None;
        let mut x = v;
        while x != apex {
            let arc = self.parent_arc[x];
            if self.src[arc] != x && self.flow[arc] <= delta {
                delta = self.flow[arc];
                leaving = Some(arc);
            }
            x = self.parent[x];
        }
        let mut x = u;
        while x != apex {
            let arc = self.parent_arc[x];
            if self.src[arc] == x && self.flow[arc] < delta {
                delta = self.flow[arc];
                leaving = Some(arc);
            }
            x = self.parent[x];
        }
        let Some(leaving) = leaving else {
            return Err(MetricError::SolverFailure("unbounded pivot cycle".into()));
        };

        if delta > 0 {
            let mut x = v;
            while x != apex {
                let arc = self.parent_arc[x];
                self.flow[arc] += if self.src[arc] == x { delta } else { -delta };
                x = self.parent[x];
            }
            let mut x = u;
            while x != apex {
                let arc = self.parent_arc[x];
                self.flow[arc] += if self.src[arc] == x { -delta } else { delta };
                x = self.parent[x];
            }
        }
        self.flow[entering] = delta;

        for end in [self.src[leaving], self.dst[leaving]] {
            self.tree_adj[end].retain(|&t| t != leaving);
        }
        self.tree_adj[u].push(entering);
        self.tree_adj[v].push(entering);
        self.rebuild_tree();
        Ok(())
    }
}
