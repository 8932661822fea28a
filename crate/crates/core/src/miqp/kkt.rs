//! Quasi-definite KKT factorization.
//!
//! The matrix `[[P + δI, A'], [A, -(H + δI)]]` is reordered with reverse
//! Cuthill-McKee and factored as `L D L'` in skyline (variable band) storage.
//! Pivots with the wrong sign or too small a magnitude are replaced by a
//! dynamic regularization of the expected sign.

use std::collections::VecDeque;

use super::sparse::CsrMatrix;

const DYN_REG_EPS: f64 = 1e-13;
const DYN_REG_DELTA: f64 = 2e-7;

#[derive(Debug, Clone)]
pub(crate) struct Kkt {
    n: usize,
    dim: usize,
    // new index -> old index and back
    perm: Vec<usize>,
    iperm: Vec<usize>,
    // row i (new order) stores columns first[i]..=i at vals[start[i]..]
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
    consts: Vec<(usize, f64)>,
    diag_slot: Vec<usize>,
    d: Vec<f64>,
    pub(crate) dynamic_bumps: usize,
}

impl Kkt {
    /// `p_upper` holds the upper triangle of P (n x n), `a` is m x n.
    pub(crate) fn new(p_upper: &CsrMatrix, a: &CsrMatrix) -> Self {
        let n = p_upper.nrows;
        let m = a.nrows;
        let dim = n + m;
        let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(p_upper.nnz() + a.nnz());
        for (i, j, v) in p_upper.triplets() {
            edges.push((i.min(j), i.max(j), v));
        }
        for (r, j, v) in a.triplets() {
            edges.push((j, n + r, v));
        }
        let mut adj = vec![Vec::new(); dim];
        for &(i, j, _) in &edges {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut iperm = vec![0; dim];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }
        let mut first: Vec<usize> = (0..dim).collect();
        for (old, list) in adj.iter().enumerate() {
            let i = iperm[old];
            for &nb in list {
                let j = iperm[nb];
                if j < i {
                    first[i] = first[i].min(j);
                }
            }
        }
        let mut start = vec![0; dim + 1];
        for i in 0..dim {
            start[i + 1] = start[i] + (i - first[i] + 1);
        }
        let slot = |i: usize, j: usize| {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            start[r] + (c - first[r])
        };
        let consts = edges.iter().map(|&(i, j, v)| (slot(iperm[i], iperm[j]), v)).collect();
        let diag_slot = (0..dim).map(|old| slot(iperm[old], iperm[old])).collect();
        Self {
            n,
            dim,
            perm,
            iperm,
            vals: vec![0.0; start[dim]],
            first,
            start,
            consts,
            diag_slot,
            d: vec![0.0; dim],
            dynamic_bumps: 0,
        }
    }

    /// Factor with `diag[k]` added to diagonal entry `k` (original order).
    pub(crate) fn factor(&mut self, diag: &[f64]) {
        debug_assert_eq!(diag.len(), self.dim);
        self.vals.iter_mut().for_each(|v| *v = 0.0);
        for &(s, v) in &self.consts {
            self.vals[s] += v;
        }
        for (k, &dv) in diag.iter().enumerate() {
            self.vals[self.diag_slot[k]] += dv;
        }
        self.dynamic_bumps = 0;
        // Row-oriented skyline LDL': row i holds L[i, first[i]..i] and D[i].
        let mut w = vec![0.0; self.dim];
        for i in 0..self.dim {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..i {
                let fj = self.first[j];
                let sj = self.start[j];
                let lo = fi.max(fj);
                // w[k] = L[i,k] D[k] for k < j already computed
                let mut acc = self.vals[si + (j - fi)];
                for k in lo..j {
                    acc -= w[k] * self.vals[sj + (k - fj)];
                }
                w[j] = acc;
                self.vals[si + (j - fi)] = acc / self.d[j];
            }
            let mut dii = self.vals[si + (i - fi)];
            for k in fi..i {
                dii -= w[k] * self.vals[si + (k - fi)];
            }
            let primal = self.perm[i] < self.n;
            if primal && dii <= DYN_REG_EPS {
                dii = DYN_REG_DELTA;
                self.dynamic_bumps += 1;
            } else if !primal && dii >= -DYN_REG_EPS {
                dii = -DYN_REG_DELTA;
                self.dynamic_bumps += 1;
            }
            self.d[i] = dii;
            self.vals[si + (i - fi)] = 1.0;
        }
    }

    /// Solve in place; `rhs` is in the original ordering.
    pub(crate) fn solve(&self, rhs: &mut [f64]) {
        let mut y: Vec<f64> = (0..self.dim).map(|i| rhs[self.perm[i]]).collect();
        for i in 0..self.dim {
            let fi = self.first[i];
            let si = self.start[i];
            let mut acc = y[i];
            for k in fi..i {
                acc -= self.vals[si + (k - fi)] * y[k];
            }
            y[i] = acc;
        }
        for i in 0..self.dim {
            y[i] /= self.d[i];
        }
        for i in (0..self.dim).rev() {
            let fi = self.first[i];
            let si = self.start[i];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.vals[si + (k - fi)] * yi;
            }
        }
        for (old, r) in rhs.iter_mut().enumerate() {
            *r = y[self.iperm[old]];
        }
    }
}

/// Reverse Cuthill-McKee over every connected component.
fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let dim = adj.len();
    let mut order = Vec::with_capacity(dim);
    let mut seen = vec![false; dim];
    let mut by_degree: Vec<usize> = (0..dim).collect();
    by_degree.sort_by_key(|&v| (adj[v].len(), v));
    for &root in &by_degree {
        if seen[root] {
            continue;
        }
        let root = pseudo_peripheral(adj, root);
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !seen[u]).collect();
            next.sort_by_key(|&u| (adj[u].len(), u));
            for u in next {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(adj: &[Vec<usize>], start: usize) -> usize {
    let mut root = start;
    let mut ecc = 0;
    for _ in 0..8 {
        let (far, depth) = farthest(adj, root);
        if depth <= ecc {
            break;
        }
        ecc = depth;
        root = far;
    }
    root
}

fn farthest(adj: &[Vec<usize>], root: usize) -> (usize, usize) {
    let mut level = vec![usize::MAX; adj.len()];
    level[root] = 0;
    let mut queue = VecDeque::from([root]);
    let mut best = (root, 0);
    while let Some(v) = queue.pop_front() {
        let l = level[v];
        if l > best.1 || (l == best.1 && adj[v].len() < adj[best.0].len()) {
            best = (v, l);
        }
        for &u in &adj[v] {
            if level[u] == usize::MAX {
                level[u] = l + 1;
                queue.push_back(u);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn dense_kkt(p: &DMatrix<f64>, a: &DMatrix<f64>, diag: &[f64]) -> DMatrix<f64> {
        let (n, m) = (p.nrows(), a.nrows());
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(p);
        k.view_mut((n, 0), (m, n)).copy_from(a);
        k.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        for (i, d) in diag.iter().enumerate() {
            k[(i, i)] += d;
        }
        k
    }

    fn csr(m: &DMatrix<f64>, upper: bool) -> CsrMatrix {
        let mut t = vec![];
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 && (!upper || j >= i) {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        CsrMatrix::from_triplets(m.nrows(), m.ncols(), &t)
    }

    #[test]
    fn matches_dense_solve() {
        let p = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 2.0, -1.0]);
        let diag = [1e-9, 1e-9, 1e-9, -0.5, -1.5];
        let mut kkt = Kkt::new(&csr(&p, true), &csr(&a, false));
        kkt.factor(&diag);
        assert_eq!(kkt.dynamic_bumps, 0);
        let rhs = [1.0, -2.0, 0.5, 3.0, -1.0];
        let mut x = rhs;
        kkt.solve(&mut x);
        let k = dense_kkt(&p, &a, &diag);
        let want = k.lu().solve(&DVector::from_row_slice(&rhs)).unwrap();
        for i in 0..5 {
            assert!((x[i] - want[i]).abs() < 1e-10, "{i}: {} vs {}", x[i], want[i]);
        }
    }

    #[test]
    fn rcm_is_a_permutation() {
        let adj = vec![vec![3], vec![2], vec![1], vec![0], vec![]];
        let mut order = reverse_cuthill_mckee(&adj);
        order.sort();
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn zero_primal_pivot_is_bumped() {
        let p = DMatrix::zeros(1, 1);
        let a = DMatrix::zeros(0, 1);
        let mut kkt = Kkt::new(&csr(&p, true), &csr(&a, false));
        kkt.factor(&[0.0]);
        assert_eq!(kkt.dynamic_bumps, 1);
    }
}
