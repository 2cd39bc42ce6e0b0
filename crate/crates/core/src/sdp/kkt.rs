//! Normal equations of the Newton system.
//!
//! With `H` the NT scaling on conic blocks, each step solves
//!
//! ```text
//! [ A_K H A_K'  A_f ] [dy ]   [r1]
//! [ A_f'        0   ] [dxf] = [r2]
//! ```
//!
//! Rows are grouped into connected components of the "shares a conic block"
//! relation, which makes `M = A_K H A_K'` block diagonal. Free variables are
//! eliminated with the dense complement `S = A_f' M^{-1} A_f`.

use faer::linalg::matmul::matmul;
use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::{Accum, Mat, Par};

use super::cones::{BlockScaling, ConeSet, Kind};
use super::linalg::{chol_solve_vec, cholesky_regularized, SQRT2};
use super::SparseMatrix;

const REG_EPS: f64 = 1e-18;
const REG_DELTA: f64 = 1e-16;

struct PsdPart {
    block: usize,
    /// `(local row, entries (a, b, F_ab) with a <= b)`, sorted by local row.
    rows: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

struct NonnegPart {
    block: usize,
    /// `(index within block, [(local row, value)])`
    cols: Vec<(usize, Vec<(usize, f64)>)>,
}

struct Group {
    rows: Vec<usize>,
    psd: Vec<PsdPart>,
    nonneg: Vec<NonnegPart>,
    /// Global free indices touched by the group, sorted.
    free_cols: Vec<usize>,
    /// `(local row, position in free_cols, value)`
    free_entries: Vec<(usize, usize, f64)>,
    factor: Mat<f64>,
}

pub(super) struct Kkt {
    groups: Vec<Group>,
    n_free: usize,
    /// `A_f` by row: `(free index, value)`.
    free_by_row: Vec<Vec<(usize, f64)>>,
    s_factor: Mat<f64>,
    pub regularized: usize,
}

impl Kkt {
    pub fn new(a: &SparseMatrix, cones: &ConeSet) -> Self {
        let m = a.nrows;
        // variable -> (conic block, local index) or free index
        let mut owner: Vec<Option<(usize, usize)>> = vec![None; cones.n_vars];
        for (k, b) in cones.blocks.iter().enumerate() {
            for i in 0..b.dim {
                owner[b.offset + i] = Some((k, i));
            }
        }
        let mut free_pos = vec![usize::MAX; cones.n_vars];
        for (f, &g) in cones.free.iter().enumerate() {
            free_pos[g] = f;
        }

        // union-find rows through shared conic blocks
        let mut parent: Vec<usize> = (0..m).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut block_row = vec![usize::MAX; cones.blocks.len()];
        for r in 0..m {
            for (c, _) in a.row(r) {
                if let Some((k, _)) = owner[c] {
                    if block_row[k] == usize::MAX {
                        block_row[k] = r;
                    } else {
                        let (x, y) = (find(&mut parent, r), find(&mut parent, block_row[k]));
                        if x != y {
                            parent[x.max(y)] = x.min(y);
                        }
                    }
                }
            }
        }
        let mut group_of_root = vec![usize::MAX; m];
        let mut groups: Vec<Group> = Vec::new();
        let mut local = vec![0usize; m];
        let mut row_group = vec![0usize; m];
        for r in 0..m {
            let root = find(&mut parent, r);
            if group_of_root[root] == usize::MAX {
                group_of_root[root] = groups.len();
                groups.push(Group {
                    rows: Vec::new(),
                    psd: Vec::new(),
                    nonneg: Vec::new(),
                    free_cols: Vec::new(),
                    free_entries: Vec::new(),
                    factor: Mat::zeros(0, 0),
                });
            }
            let g = group_of_root[root];
            local[r] = groups[g].rows.len();
            row_group[r] = g;
            groups[g].rows.push(r);
        }

        // conic entries per block, then distribute into groups
        let mut psd_rows: Vec<Vec<(usize, Vec<(usize, usize, f64)>)>> = vec![Vec::new(); cones.blocks.len()];
        let mut nn_cols: Vec<std::collections::BTreeMap<usize, Vec<(usize, f64)>>> =
            vec![Default::default(); cones.blocks.len()];
        let mut free_by_row = vec![Vec::new(); m];
        for r in 0..m {
            let mut per_block: std::collections::BTreeMap<usize, Vec<(usize, usize, f64)>> = Default::default();
            for (c, v) in a.row(r) {
                match owner[c] {
                    Some((k, i)) => match cones.blocks[k].kind {
                        Kind::Psd => {
                            let (p, q) = super::linalg::svec_pair(i, cones.blocks[k].n);
                            let f = if p == q { v } else { v / SQRT2 };
                            per_block.entry(k).or_default().push((p, q, f));
                        }
                        Kind::Nonneg => nn_cols[k].entry(i).or_default().push((local[r], v)),
                    },
                    None => free_by_row[r].push((free_pos[c], v)),
                }
            }
            for (k, e) in per_block {
                psd_rows[k].push((local[r], e));
            }
        }
        for (k, rows) in psd_rows.into_iter().enumerate() {
            if !rows.is_empty() {
                let g = row_group[block_row[k]];
                groups[g].psd.push(PsdPart { block: k, rows });
            }
        }
        for (k, cols) in nn_cols.into_iter().enumerate() {
            if !cols.is_empty() {
                let g = row_group[block_row[k]];
                groups[g].nonneg.push(NonnegPart { block: k, cols: cols.into_iter().collect() });
            }
        }
        for g in groups.iter_mut() {
            let mut cols: Vec<usize> = g.rows.iter().flat_map(|&r| free_by_row[r].iter().map(|e| e.0)).collect();
            cols.sort_unstable();
            cols.dedup();
            for (lr, &r) in g.rows.iter().enumerate() {
                for &(f, v) in &free_by_row[r] {
                    let pos = cols.binary_search(&f).unwrap();
                    g.free_entries.push((lr, pos, v));
                }
            }
            g.free_cols = cols;
        }
        Self { groups, n_free: cones.free.len(), free_by_row, s_factor: Mat::zeros(0, 0), regularized: 0 }
    }

    /// Builds and factors `M` per group and the free-variable complement.
    pub fn factor(&mut self, cones: &ConeSet, sc: &[BlockScaling]) -> Result<(), String> {
        self.regularized = 0;
        // buffers are reused across iterations; the dense blocks dominate memory
        let mut s = reset(std::mem::replace(&mut self.s_factor, Mat::new()), self.n_free);
        for g in self.groups.iter_mut() {
            let nr = g.rows.len();
            let mut mg = reset(std::mem::replace(&mut g.factor, Mat::new()), nr);
            for part in &g.psd {
                let BlockScaling::Psd { w, .. } = &sc[part.block] else { unreachable!() };
                psd_schur(&mut mg, w, cones.blocks[part.block].n, &part.rows);
            }
            for part in &g.nonneg {
                let BlockScaling::Nonneg { w2, .. } = &sc[part.block] else { unreachable!() };
                for (i, entries) in &part.cols {
                    for (p, &(rp, vp)) in entries.iter().enumerate() {
                        for &(rq, vq) in &entries[..=p] {
                            let (hi, lo) = if rp >= rq { (rp, rq) } else { (rq, rp) };
                            mg[(hi, lo)] += vp * vq * w2[*i];
                        }
                    }
                }
            }
            self.regularized += cholesky_regularized(mg.as_mut(), REG_EPS, REG_DELTA)
                .ok_or_else(|| "Schur complement factorization failed".to_string())?;
            if !g.free_cols.is_empty() {
                let nf = g.free_cols.len();
                let mut y = Mat::<f64>::zeros(nr, nf);
                for &(lr, pos, v) in &g.free_entries {
                    y[(lr, pos)] += v;
                }
                solve_lower_triangular_in_place(mg.as_ref(), y.as_mut(), Par::Seq);
                let mut local = Mat::<f64>::zeros(nf, nf);
                matmul(local.as_mut(), Accum::Replace, y.transpose(), y.as_ref(), 1.0, Par::Seq);
                for (j, &cj) in g.free_cols.iter().enumerate() {
                    for (i, &ci) in g.free_cols.iter().enumerate() {
                        s[(ci, cj)] += local[(i, j)];
                    }
                }
            }
            g.factor = mg;
        }
        if self.n_free > 0 {
            self.regularized += cholesky_regularized(s.as_mut(), REG_EPS, REG_DELTA)
                .ok_or_else(|| "free-variable complement factorization failed".to_string())?;
        }
        self.s_factor = s;
        Ok(())
    }

    fn m_solve(&self, v: &mut [f64]) {
        let mut buf = Vec::new();
        for g in &self.groups {
            buf.clear();
            buf.extend(g.rows.iter().map(|&r| v[r]));
            chol_solve_vec(g.factor.as_ref(), &mut buf);
            for (&r, &x) in g.rows.iter().zip(&buf) {
                v[r] = x;
            }
        }
    }

    /// One pass of the block elimination (no refinement).
    pub fn solve_once(&self, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut u = r1.to_vec();
        self.m_solve(&mut u);
        if self.n_free == 0 {
            return (u, Vec::new());
        }
        let mut t: Vec<f64> = r2.iter().map(|v| -v).collect();
        for (r, entries) in self.free_by_row.iter().enumerate() {
            for &(f, v) in entries {
                t[f] += v * u[r];
            }
        }
        chol_solve_vec(self.s_factor.as_ref(), &mut t);
        let mut w = r1.to_vec();
        for (r, entries) in self.free_by_row.iter().enumerate() {
            for &(f, v) in entries {
                w[r] -= v * t[f];
            }
        }
        self.m_solve(&mut w);
        (w, t)
    }

    /// Solves with iterative refinement against the exact operator `apply`.
    pub fn solve(
        &self,
        r1: &[f64],
        r2: &[f64],
        apply: &dyn Fn(&[f64], &[f64]) -> (Vec<f64>, Vec<f64>),
    ) -> (Vec<f64>, Vec<f64>) {
        let (mut dy, mut dxf) = self.solve_once(r1, r2);
        let scale = 1e-14 * (1.0 + super::linalg::norm_inf(r1).max(super::linalg::norm_inf(r2)));
        let residual = |dy: &[f64], dxf: &[f64]| {
            let (k1, k2) = apply(dy, dxf);
            let e1: Vec<f64> = r1.iter().zip(&k1).map(|(a, b)| a - b).collect();
            let e2: Vec<f64> = r2.iter().zip(&k2).map(|(a, b)| a - b).collect();
            let n = super::linalg::norm_inf(&e1).max(super::linalg::norm_inf(&e2));
            (e1, e2, n)
        };
        let (mut e1, mut e2, mut err) = residual(&dy, &dxf);
        for _ in 0..4 {
            if err <= scale {
                break;
            }
            let (cy, cf) = self.solve_once(&e1, &e2);
            let ny: Vec<f64> = dy.iter().zip(&cy).map(|(a, b)| a + b).collect();
            let nf: Vec<f64> = dxf.iter().zip(&cf).map(|(a, b)| a + b).collect();
            let (f1, f2, nerr) = residual(&ny, &nf);
            if !(nerr < err) {
                break;
            }
            dy = ny;
            dxf = nf;
            e1 = f1;
            e2 = f2;
            err = nerr;
        }
        (dy, dxf)
    }
}

fn reset(mut m: Mat<f64>, n: usize) -> Mat<f64> {
    if m.nrows() == n && m.ncols() == n {
        m.fill(0.0);
        m
    } else {
        Mat::zeros(n, n)
    }
}

/// Adds `<F_i, W F_j W>` for all row pairs of one PSD block into the lower
/// triangle of `m`.
fn psd_schur(m: &mut Mat<f64>, w: &Mat<f64>, n: usize, rows: &[(usize, Vec<(usize, usize, f64)>)]) {
    // W F_j W as a rank-2k product U V' built from columns of W
    let width = rows.iter().map(|(_, f)| 2 * f.len()).max().unwrap_or(0);
    let mut u = Mat::<f64>::zeros(n, width);
    let mut v = Mat::<f64>::zeros(n, width);
    let mut t = Mat::<f64>::zeros(n, n);
    for (jpos, (jrow, fj)) in rows.iter().enumerate() {
        let mut k = 0;
        for &(a, b, f) in fj {
            let (wa, wb) = (w.col_as_slice(a), w.col_as_slice(b));
            u.col_as_slice_mut(k).copy_from_slice(wa);
            v.col_as_slice_mut(k).iter_mut().zip(wb).for_each(|(x, y)| *x = f * y);
            k += 1;
            if a != b {
                u.col_as_slice_mut(k).copy_from_slice(wb);
                v.col_as_slice_mut(k).iter_mut().zip(wa).for_each(|(x, y)| *x = f * y);
                k += 1;
            }
        }
        matmul(t.as_mut(), Accum::Replace, u.get(.., ..k), v.get(.., ..k).transpose(), 1.0, Par::Seq);
        for (irow, fi) in &rows[jpos..] {
            let mut s = 0.0;
            for &(a, b, f) in fi {
                s += if a == b { f * t[(a, a)] } else { 2.0 * f * t[(a, b)] };
            }
            m[(*irow, *jrow)] += s;
        }
    }
}
