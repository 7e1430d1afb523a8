//! Symmetric positive-definite solves on 6x6 block-sparse systems.
//!
//! The block graph is renumbered with reverse Cuthill-McKee and factored in
//! envelope (skyline) form, so the work follows the bandwidth of the pose
//! graph rather than the cube of its size.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DVector, Matrix6};

/// Upper block triangle of a symmetric matrix with 6x6 blocks.
#[derive(Debug, Clone)]
pub(crate) struct BlockMatrix {
    pub diag: Vec<Matrix6<f64>>,
    /// Block `(a, b)` with `a < b`; its transpose sits at `(b, a)`.
    pub off: BTreeMap<(usize, usize), Matrix6<f64>>,
}

impl BlockMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { diag: vec![Matrix6::zeros(); n], off: BTreeMap::new() }
    }

    pub fn blocks(&self) -> usize {
        self.diag.len()
    }

    /// Adds `m` at block `(a, b)`; callers add each symmetric pair once
    /// per ordered pair, and only the `a <= b` half is kept.
    pub fn add(&mut self, a: usize, b: usize, m: &Matrix6<f64>) {
        use std::cmp::Ordering::*;
        match a.cmp(&b) {
            Equal => self.diag[a] += m,
            Less => *self.off.entry((a, b)).or_insert_with(Matrix6::zeros) += m,
            Greater => {}
        }
    }
}

/// Reverse Cuthill-McKee order over the block graph: `order[k]` is the
/// original block placed at position `k`.
pub(crate) fn rcm_order(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut adj = vec![Vec::new(); n];
    for (a, b) in edges {
        if a != b {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (adj[v].len(), v));
    for &start in &by_degree {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
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

/// Envelope Cholesky factor `L` of a permuted block matrix.
pub(crate) struct EnvelopeCholesky {
    /// `perm[original_block] = position`.
    perm: Vec<usize>,
    /// First stored column of each scalar row.
    first: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl EnvelopeCholesky {
    /// Factors `m + diag(extra)` (extra indexed by original scalar index).
    /// `None` when the matrix is not numerically positive definite.
    pub fn factor(m: &BlockMatrix, order: &[usize], extra: &[f64]) -> Option<Self> {
        let nb = m.blocks();
        let mut perm = vec![0; nb];
        for (pos, &b) in order.iter().enumerate() {
            perm[b] = pos;
        }
        let mut first_block: Vec<usize> = (0..nb).collect();
        for &(a, b) in m.off.keys() {
            let (pa, pb) = (perm[a], perm[b]);
            let (lo, hi) = (pa.min(pb), pa.max(pb));
            first_block[hi] = first_block[hi].min(lo);
        }
        let n = nb * 6;
        let first: Vec<usize> = (0..n).map(|r| first_block[r / 6] * 6).collect();
        let mut rows: Vec<Vec<f64>> = (0..n).map(|r| vec![0.0; r - first[r] + 1]).collect();

        // scatter the lower triangle in permuted coordinates
        let mut put = |pr: usize, pc: usize, blk: &Matrix6<f64>, transpose: bool| {
            for i in 0..6 {
                for j in 0..6 {
                    let (r, c) = (pr * 6 + i, pc * 6 + j);
                    if c <= r {
                        let v = if transpose { blk[(j, i)] } else { blk[(i, j)] };
                        rows[r][c - first[r]] += v;
                    }
                }
            }
        };
        for (b, blk) in m.diag.iter().enumerate() {
            put(perm[b], perm[b], blk, false);
        }
        for (&(a, b), blk) in &m.off {
            let (pa, pb) = (perm[a], perm[b]);
            if pa > pb {
                put(pa, pb, blk, false);
            } else {
                put(pb, pa, blk, true);
            }
        }
        for (b, &pb) in perm.iter().enumerate() {
            for i in 0..6 {
                let r = pb * 6 + i;
                rows[r][r - first[r]] += extra[b * 6 + i];
            }
        }

        for r in 0..n {
            let fr = first[r];
            for c in fr..=r {
                let fc = first[c].max(fr);
                let mut sum = rows[r][c - fr];
                let (row_r, row_c) = if c < r {
                    let (head, tail) = rows.split_at(r);
                    (&tail[0], &head[c])
                } else {
                    (&rows[r], &rows[r])
                };
                for k in fc..c {
                    sum -= row_r[k - fr] * row_c[k - first[c]];
                }
                if c < r {
                    let d = rows[c][c - first[c]];
                    rows[r][c - fr] = sum / d;
                } else {
                    if !(sum > 0.0) || !sum.is_finite() {
                        return None;
                    }
                    rows[r][r - fr] = sum.sqrt();
                }
            }
        }
        Some(Self { perm, first, rows })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.rows.len();
        let mut y = DVector::zeros(n);
        for (blk, &pb) in self.perm.iter().enumerate() {
            for i in 0..6 {
                y[pb * 6 + i] = b[blk * 6 + i];
            }
        }
        for r in 0..n {
            let fr = self.first[r];
            let mut s = y[r];
            for k in fr..r {
                s -= self.rows[r][k - fr] * y[k];
            }
            y[r] = s / self.rows[r][r - fr];
        }
        for r in (0..n).rev() {
            let fr = self.first[r];
            y[r] /= self.rows[r][r - fr];
            let yr = y[r];
            for k in fr..r {
                y[k] -= self.rows[r][k - fr] * yr;
            }
        }
        let mut x = DVector::zeros(n);
        for (blk, &pb) in self.perm.iter().enumerate() {
            for i in 0..6 {
                x[blk * 6 + i] = y[pb * 6 + i];
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_cholesky() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nb = 9;
        let mut m = BlockMatrix::zeros(nb);
        let pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (7, 8), (0, 8), (2, 6)];
        let mut dense = DMatrix::zeros(nb * 6, nb * 6);
        for &(a, b) in &pairs {
            let j = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let jb = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
            // J^T J style contributions keep the sum positive semi-definite
            for (x, jx) in [(a, &j), (b, &jb)] {
                for (y, jy) in [(a, &j), (b, &jb)] {
                    let blk = jx.transpose() * jy;
                    m.add(x, y, &blk);
                    let mut v = dense.fixed_view_mut::<6, 6>(x * 6, y * 6);
                    v += blk;
                }
            }
        }
        let extra: Vec<f64> = (0..nb * 6).map(|i| 0.5 + (i % 5) as f64 * 0.1).collect();
        for (i, e) in extra.iter().enumerate() {
            dense[(i, i)] += e;
        }
        let order = rcm_order(nb, m.off.keys().copied());
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..nb).collect::<Vec<_>>());
        let b = DVector::from_fn(nb * 6, |i, _| (i as f64 * 0.37).sin());
        let x = EnvelopeCholesky::factor(&m, &order, &extra).unwrap().solve(&b);
        let want = dense.cholesky().unwrap().solve(&b);
        assert!((x - want).amax() < 1e-9);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut m = BlockMatrix::zeros(1);
        m.add(0, 0, &(-Matrix6::identity()));
        assert!(EnvelopeCholesky::factor(&m, &[0], &[0.0; 6]).is_none());
    }
}
