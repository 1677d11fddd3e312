use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use nalgebra::{DMatrix, DVector, Matrix6};

use crate::error::Result;
use crate::factors::NodeId;
use crate::solver::{Graph, Values};

/// Smallest diagonal entry used when damping.
const MIN_DIAGONAL: f64 = 1e-12;

/// Gauss-Newton normal equations `J^T J` and `J^T r` in 6x6 node blocks.
#[derive(Clone, Debug)]
pub struct NormalEquations {
    /// Dense block index to node id, ascending by id.
    pub ids: Vec<NodeId>,
    /// Upper-triangular blocks keyed by `(row, col)` with `row <= col`.
    pub blocks: BTreeMap<(usize, usize), Matrix6<f64>>,
    /// `J^T r`.
    pub gradient: DVector<f64>,
    /// Total cost at the linearization point.
    pub cost: f64,
}

/// Assembles the normal equations at `values`, factor by factor in graph order.
pub fn linearize(graph: &Graph, values: &Values) -> Result<NormalEquations> {
    let ids = graph.node_ids();
    let index: HashMap<NodeId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut blocks: BTreeMap<(usize, usize), Matrix6<f64>> = BTreeMap::new();
    let mut gradient = DVector::zeros(ids.len() * 6);
    let mut cost = 0.0;

    for factor in graph.factors() {
        let poses = values.gather(factor)?;
        let lin = factor.linearize(&poses);
        cost += lin.residual.norm_squared();
        let keys = factor.keys();
        for (a, id_a) in keys.iter().enumerate() {
            let ia = index[id_a];
            let ja = &lin.jacobians[a];
            let mut g = gradient.fixed_rows_mut::<6>(ia * 6);
            g += ja.transpose() * lin.residual;
            for (b, id_b) in keys.iter().enumerate() {
                let ib = index[id_b];
                if ia > ib {
                    continue;
                }
                let block = ja.transpose() * lin.jacobians[b];
                *blocks.entry((ia, ib)).or_insert_with(Matrix6::zeros) += block;
            }
        }
    }

    Ok(NormalEquations {
        ids,
        blocks,
        gradient,
        cost,
    })
}

impl NormalEquations {
    pub fn dim(&self) -> usize {
        self.ids.len() * 6
    }

    /// Full symmetric `J^T J` as a dense matrix.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        for (&(i, j), block) in &self.blocks {
            h.view_mut((i * 6, j * 6), (6, 6)).copy_from(block);
            if i != j {
                h.view_mut((j * 6, i * 6), (6, 6)).copy_from(&block.transpose());
            }
        }
        h
    }

    /// Solves `(J^T J + lambda * diag(J^T J)) delta = -J^T r`.
    ///
    /// Returns `None` when the damped matrix is not numerically positive definite.
    pub fn solve_damped(&self, lambda: f64) -> Option<DVector<f64>> {
        let order = self.ordering();
        let mut skyline = Skyline::assemble(self, &order, lambda);
        if !skyline.factor() {
            return None;
        }
        // rhs in permuted order
        let n = self.dim();
        let mut rhs = DVector::zeros(n);
        for (new, &old) in order.iter().enumerate() {
            for k in 0..6 {
                rhs[new * 6 + k] = -self.gradient[old * 6 + k];
            }
        }
        let x = skyline.solve(rhs);
        let mut delta = DVector::zeros(n);
        for (new, &old) in order.iter().enumerate() {
            for k in 0..6 {
                delta[old * 6 + k] = x[new * 6 + k];
            }
        }
        Some(delta)
    }

    /// Reverse Cuthill-McKee ordering of the block adjacency graph.
    /// Entry `k` is the block index eliminated at position `k`.
    pub fn ordering(&self) -> Vec<usize> {
        let n = self.ids.len();
        let mut adjacency: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &(i, j) in self.blocks.keys() {
            if i != j {
                adjacency[i].insert(j);
                adjacency[j].insert(i);
            }
        }
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        // Components are started from their lowest-degree, lowest-index node.
        let mut starts: Vec<usize> = (0..n).collect();
        starts.sort_by_key(|&i| (adjacency[i].len(), i));
        for start in starts {
            if visited[start] {
                continue;
            }
            visited[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(node) = queue.pop_front() {
                order.push(node);
                let mut next: Vec<usize> = adjacency[node]
                    .iter()
                    .copied()
                    .filter(|&m| !visited[m])
                    .collect();
                next.sort_by_key(|&m| (adjacency[m].len(), m));
                for m in next {
                    visited[m] = true;
                    queue.push_back(m);
                }
            }
        }
        order.reverse();
        order
    }
}

/// Symmetric matrix in variable-band (envelope) storage with in-place Cholesky.
struct Skyline {
    /// First stored column of each row.
    first: Vec<usize>,
    /// Row `i` holds columns `first[i]..=i`.
    rows: Vec<Vec<f64>>,
}

impl Skyline {
    fn assemble(eq: &NormalEquations, order: &[usize], lambda: f64) -> Self {
        let nb = order.len();
        let mut position = vec![0; nb];
        for (new, &old) in order.iter().enumerate() {
            position[old] = new;
        }
        let mut first_block: Vec<usize> = (0..nb).collect();
        for &(i, j) in eq.blocks.keys() {
            let (pi, pj) = (position[i], position[j]);
            let (lo, hi) = (pi.min(pj), pi.max(pj));
            first_block[hi] = first_block[hi].min(lo);
        }
        let n = nb * 6;
        let mut first = vec![0; n];
        let mut rows = Vec::with_capacity(n);
        for r in 0..n {
            first[r] = first_block[r / 6] * 6;
            rows.push(vec![0.0; r - first[r] + 1]);
        }
        let mut skyline = Self { first, rows };
        for (&(i, j), block) in &eq.blocks {
            let (pi, pj) = (position[i], position[j]);
            for a in 0..6 {
                for b in 0..6 {
                    let (r, c) = (pi * 6 + a, pj * 6 + b);
                    if r >= c {
                        skyline.add(r, c, block[(a, b)]);
                    } else if i != j {
                        // mirrored entry of an off-diagonal block
                        skyline.add(c, r, block[(a, b)]);
                    }
                }
            }
        }
        for r in 0..n {
            let d = skyline.rows[r].last_mut().expect("row has a diagonal");
            *d += lambda * d.max(MIN_DIAGONAL);
        }
        skyline
    }

    fn add(&mut self, r: usize, c: usize, v: f64) {
        let f = self.first[r];
        self.rows[r][c - f] += v;
    }

    /// Row-oriented Cholesky `A = L L^T`, overwriting the lower triangle.
    fn factor(&mut self) -> bool {
        let n = self.rows.len();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let start = fi.max(fj);
                let mut s = self.rows[i][j - fi];
                for k in start..j {
                    s -= self.rows[i][k - fi] * self.rows[j][k - fj];
                }
                if j < i {
                    let djj = self.rows[j][j - fj];
                    self.rows[i][j - fi] = s / djj;
                } else {
                    if !(s > 0.0 && s.is_finite()) {
                        return false;
                    }
                    self.rows[i][i - fi] = s.sqrt();
                }
            }
        }
        true
    }

    fn solve(&self, mut b: DVector<f64>) -> DVector<f64> {
        let n = self.rows.len();
        // L y = b
        for i in 0..n {
            let fi = self.first[i];
            let mut s = b[i];
            for k in fi..i {
                s -= self.rows[i][k - fi] * b[k];
            }
            b[i] = s / self.rows[i][i - fi];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let fi = self.first[i];
            b[i] /= self.rows[i][i - fi];
            let xi = b[i];
            for k in fi..i {
                b[k] -= self.rows[i][k - fi] * xi;
            }
        }
        b
    }
}

/// Dense damped solve used as a cross-check for the skyline path.
#[cfg(test)]
pub(crate) fn solve_damped_dense(eq: &NormalEquations, lambda: f64) -> Option<DVector<f64>> {
    let mut h = eq.to_dense();
    for i in 0..h.nrows() {
        let d = h[(i, i)];
        h[(i, i)] += lambda * d.max(MIN_DIAGONAL);
    }
    h.cholesky().map(|c| c.solve(&(-&eq.gradient)))
}
