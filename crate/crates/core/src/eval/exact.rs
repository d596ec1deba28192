//! Exact discrete optimal transport by the network simplex method on the
//! bipartite transportation polytope.

use nalgebra::DMatrix;

use super::{check_p, merge_duplicates, point_set};
use crate::error::{Error, Result};
use crate::measures::{cost_matrix, DiscreteMeasure};

/// Largest number of distinct atoms per side accepted by
/// [`wasserstein_exact`].
pub const DEFAULT_CAP: usize = 5000;

/// Optimal vertex plan. Indices refer to the atoms of the input measures;
/// mass sent between merged duplicates is split in proportion to their
/// weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlanExact {
    pub pairs: Vec<(usize, usize, f64)>,
    pub objective: f64,
}

pub fn wasserstein_exact(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<(f64, TransportPlanExact)> {
    wasserstein_exact_with_cap(mu, nu, p, DEFAULT_CAP)
}

pub fn wasserstein_exact_with_cap(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    p: f64,
    cap: usize,
) -> Result<(f64, TransportPlanExact)> {
    check_p(p)?;
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            context: "transport supports",
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    let side_a = Side::new(mu)?;
    let side_b = Side::new(nu)?;
    for s in [&side_a, &side_b] {
        if s.weights.len() > cap {
            return Err(Error::CapExceeded {
                size: s.weights.len(),
                cap,
            });
        }
    }
    let cost = cost_matrix(&point_set(&side_a.points)?, &point_set(&side_b.points)?, p)?;
    let flows = network_simplex(&side_a.weights, &side_b.weights, &cost)?;

    let mut pairs = Vec::new();
    let mut objective = 0.0;
    for (i, j, mass) in flows {
        if mass <= 0.0 {
            continue;
        }
        objective += mass * cost[(i, j)];
        for &(oi, fi) in &side_a.members[i] {
            for &(oj, fj) in &side_b.members[j] {
                pairs.push((oi, oj, mass * fi * fj));
            }
        }
    }
    pairs.sort_by_key(|x| (x.0, x.1));
    Ok((objective, TransportPlanExact { pairs, objective }))
}

/// Distinct positive-weight atoms of one measure, with the original indices
/// and weight fractions behind each.
struct Side {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    members: Vec<Vec<(usize, f64)>>,
}

impl Side {
    fn new(measure: &DiscreteMeasure) -> Result<Self> {
        if measure.is_empty() {
            return Err(Error::InvalidMeasure("empty measure".into()));
        }
        let (points, weights, map) = merge_duplicates(measure);
        let mut members = vec![Vec::new(); points.len()];
        for (orig, &merged) in map.iter().enumerate() {
            let w = measure.weights()[orig];
            if w > 0.0 {
                members[merged].push((orig, w / weights[merged]));
            }
        }
        let keep: Vec<usize> = (0..points.len()).filter(|&k| weights[k] > 0.0).collect();
        if keep.is_empty() {
            return Err(Error::InvalidMeasure("measure has no mass".into()));
        }
        Ok(Self {
            points: keep.iter().map(|&k| points[k].clone()).collect(),
            weights: keep.iter().map(|&k| weights[k]).collect(),
            members: keep.iter().map(|&k| std::mem::take(&mut members[k])).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    i: usize,
    j: usize,
    flow: f64,
}

/// Spanning tree over `m + n` nodes (rows first, then columns) with
/// potentials, rebuilt from the basic arcs after every pivot.
struct Tree {
    offsets: Vec<usize>,
    adj: Vec<(usize, usize)>,
    parent: Vec<usize>,
    parent_arc: Vec<usize>,
    depth: Vec<usize>,
    potential: Vec<f64>,
    queue: Vec<usize>,
}

impl Tree {
    fn new(nodes: usize) -> Self {
        Self {
            offsets: vec![0; nodes + 1],
            adj: Vec::new(),
            parent: vec![usize::MAX; nodes],
            parent_arc: vec![usize::MAX; nodes],
            depth: vec![0; nodes],
            potential: vec![0.0; nodes],
            queue: Vec::with_capacity(nodes),
        }
    }

    fn rebuild(&mut self, arcs: &[Arc], m: usize, cost: &DMatrix<f64>) {
        let nodes = self.parent.len();
        self.offsets.fill(0);
        for a in arcs {
            self.offsets[a.i + 1] += 1;
            self.offsets[m + a.j + 1] += 1;
        }
        for k in 0..nodes {
            self.offsets[k + 1] += self.offsets[k];
        }
        self.adj.resize(2 * arcs.len(), (0, 0));
        let mut fill = self.offsets.clone();
        for (e, a) in arcs.iter().enumerate() {
            self.adj[fill[a.i]] = (m + a.j, e);
            fill[a.i] += 1;
            self.adj[fill[m + a.j]] = (a.i, e);
            fill[m + a.j] += 1;
        }

        self.parent.fill(usize::MAX);
        self.queue.clear();
        self.queue.push(0);
        self.parent[0] = 0;
        self.depth[0] = 0;
        self.potential[0] = 0.0;
        let mut head = 0;
        while head < self.queue.len() {
            let node = self.queue[head];
            head += 1;
            for k in self.offsets[node]..self.offsets[node + 1] {
                let (next, e) = self.adj[k];
                if self.parent[next] != usize::MAX {
                    continue;
                }
                self.parent[next] = node;
                self.parent_arc[next] = e;
                self.depth[next] = self.depth[node] + 1;
                let c = cost[(arcs[e].i, arcs[e].j)];
                self.potential[next] = c - self.potential[node];
                self.queue.push(next);
            }
        }
        debug_assert_eq!(self.queue.len(), nodes, "basis is not a spanning tree");
    }

    /// Arcs on the tree path from `a` to `b`, in order from `a`.
    fn path(&self, mut a: usize, mut b: usize, out: &mut Vec<usize>) {
        out.clear();
        let mut tail = Vec::new();
        while self.depth[a] > self.depth[b] {
            out.push(self.parent_arc[a]);
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            tail.push(self.parent_arc[b]);
            b = self.parent[b];
        }
        while a != b {
            out.push(self.parent_arc[a]);
            a = self.parent[a];
            tail.push(self.parent_arc[b]);
            b = self.parent[b];
        }
        out.extend(tail.into_iter().rev());
    }
}

/// Northwest-corner start: a staircase of `m + n - 1` arcs, possibly with
/// zero flows, that always forms a spanning tree.
fn northwest_corner(a: &[f64], b: &[f64]) -> Vec<Arc> {
    let (m, n) = (a.len(), b.len());
    let mut arcs = Vec::with_capacity(m + n - 1);
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0], b[0]);
    loop {
        let flow = ra.min(rb).max(0.0);
        arcs.push(Arc { i, j, flow });
        ra -= flow;
        rb -= flow;
        if i + 1 == m && j + 1 == n {
            break;
        }
        if j + 1 == n || (i + 1 < m && ra <= rb) {
            i += 1;
            ra += a[i];
        } else {
            j += 1;
            rb += b[j];
        }
    }
    arcs
}

/// Solves `min <C, P>` over nonnegative `P` with row sums `a` and column
/// sums `b`. Returns the basic arcs of an optimal vertex.
pub(crate) fn network_simplex(a: &[f64], b: &[f64], cost: &DMatrix<f64>) -> Result<Vec<(usize, usize, f64)>> {
    let (m, n) = (a.len(), b.len());
    let mut arcs = northwest_corner(a, b);
    if m == 1 || n == 1 {
        return Ok(arcs.iter().map(|x| (x.i, x.j, x.flow)).collect());
    }

    let scale = cost.iter().fold(0.0f64, |s, c| s.max(c.abs()));
    let tol = 1e-14 * (1.0 + scale);
    let cells = m * n;
    let block = ((cells as f64).sqrt() as usize).max(32).min(cells);
    let max_pivots = 100_000usize.max(500 * (m + n));

    let mut tree = Tree::new(m + n);
    let mut cycle = Vec::new();
    let mut cursor = 0usize;
    for _ in 0..max_pivots {
        tree.rebuild(&arcs, m, cost);
        let (u, v) = tree.potential.split_at(m);

        // block search pricing: best candidate in the first block that has one
        let mut entering = None;
        let mut scanned = 0;
        while scanned < cells && entering.is_none() {
            let mut best = -tol;
            for _ in 0..block.min(cells - scanned) {
                let (i, j) = (cursor % m, cursor / m);
                let rc = cost[(i, j)] - u[i] - v[j];
                if rc < best {
                    best = rc;
                    entering = Some((i, j));
                }
                cursor = (cursor + 1) % cells;
                scanned += 1;
            }
        }
        let Some((ei, ej)) = entering else {
            return Ok(arcs.iter().map(|x| (x.i, x.j, x.flow)).collect());
        };

        // cycle = entering arc + tree path from row ei to column ej;
        // arcs at even positions of the path lose flow
        tree.path(ei, m + ej, &mut cycle);
        let mut theta = f64::INFINITY;
        let mut leaving = 0;
        for (k, &e) in cycle.iter().enumerate().step_by(2) {
            if arcs[e].flow < theta {
                theta = arcs[e].flow;
                leaving = k;
            }
        }
        for (k, &e) in cycle.iter().enumerate() {
            if k % 2 == 0 {
                arcs[e].flow -= theta;
            } else {
                arcs[e].flow += theta;
            }
        }
        arcs[cycle[leaving]] = Arc {
            i: ei,
            j: ej,
            flow: theta,
        };
    }
    Err(Error::PivotLimit(max_pivots))
}
