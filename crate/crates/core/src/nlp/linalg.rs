//! Direct solver for the square, indefinite KKT systems of the QP.
//!
//! Small systems use a dense LU. Larger ones are reordered with reverse
//! Cuthill-McKee and factored as a band matrix with partial pivoting; a few
//! very high-degree unknowns (parameters shared by every stage) are moved to
//! a border and eliminated through a dense Schur complement.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::sparse::Triplets;
use crate::error::{Error, Result};

const DENSE_LIMIT: usize = 400;
const MAX_BORDER: usize = 64;
const PIVOT_REL: f64 = 1e-14;

/// LU factorization of a sparse square matrix.
pub struct SparseLu {
    n: usize,
    matrix: Triplets,
    scale: f64,
    kind: LuKind,
}

enum LuKind {
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Banded(Box<BorderedBand>),
}

impl SparseLu {
    pub fn factor(a: &Triplets) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::Dimension(format!("{}x{} matrix is not square", a.nrows, a.ncols)));
        }
        let n = a.nrows;
        let mut matrix = a.clone();
        matrix.compress();
        let scale = matrix.abs_max();
        if matrix.entries.iter().any(|e| !e.2.is_finite()) {
            return Err(Error::Singular);
        }
        let kind = if n <= DENSE_LIMIT {
            let lu = matrix.to_dense().lu();
            let tiny = PIVOT_REL * scale.max(1.0);
            let u = lu.u();
            if (0..n).any(|i| !(u[(i, i)].abs() > tiny)) {
                return Err(Error::Singular);
            }
            LuKind::Dense(lu)
        } else {
            LuKind::Banded(Box::new(BorderedBand::factor(&matrix, scale)?))
        };
        Ok(Self { n, matrix, scale, kind })
    }

    fn solve_raw(&self, b: &[f64]) -> Vec<f64> {
        match &self.kind {
            LuKind::Dense(lu) => {
                let rhs = DVector::from_column_slice(b);
                lu.solve(&rhs).map(|x| x.as_slice().to_vec()).unwrap_or_else(|| vec![f64::NAN; self.n])
            }
            LuKind::Banded(bb) => bb.solve(b),
        }
    }

    /// Solves `A x = b` with up to two steps of iterative refinement.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.n);
        let mut x = self.solve_raw(b);
        let bnorm = inf_norm(b);
        let mut rel = f64::INFINITY;
        for _ in 0..3 {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Singular);
            }
            let ax = self.matrix.mul_vec(&x);
            let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let denom = self.scale * inf_norm(&x) + bnorm;
            rel = if denom > 0.0 { inf_norm(&r) / denom } else { 0.0 };
            if rel <= 1e-15 {
                break;
            }
            let dx = self.solve_raw(&r);
            x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
        }
        if !(rel <= 1e-9) {
            return Err(Error::Singular);
        }
        Ok(x)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Band LU with partial pivoting, LAPACK `gbtrf` storage.
///
/// `A[r][c]` lives at `ab[kv + r - c + c * ldab]` with `kv = kl + ku`; the
/// extra `kl` rows above the band receive fill from row interchanges.
struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    ab: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandLu {
    fn ldab(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    fn kv(&self) -> usize {
        self.kl + self.ku
    }

    fn new(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        Self { n, kl, ku, ab: vec![0.0; ldab * n], ipiv: vec![0; n] }
    }

    #[inline]
    fn add(&mut self, r: usize, c: usize, v: f64) {
        let (kv, ldab) = (self.kv(), self.ldab());
        self.ab[kv + r - c + c * ldab] += v;
    }

    fn factor(&mut self, tiny: f64) -> Result<()> {
        let (n, kl, ku, kv, ldab) = (self.n, self.kl, self.ku, self.kv(), self.ldab());
        let ab = &mut self.ab;
        let mut ju = 0usize;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ldab;
            let mut jp = 0;
            let mut best = ab[kv + col].abs();
            for p in 1..=km {
                let v = ab[kv + p + col].abs();
                if v > best {
                    best = v;
                    jp = p;
                }
            }
            self.ipiv[j] = j + jp;
            if !(best > tiny) {
                return Err(Error::Singular);
            }
            ju = ju.max((j + ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let base = kv + c * ldab;
                    ab.swap(base + j - c, base + j + jp - c);
                }
            }
            let piv = ab[kv + col];
            for p in 1..=km {
                ab[kv + p + col] /= piv;
            }
            for c in j + 1..=ju {
                let base = kv + c * ldab;
                let t = ab[base + j - c];
                if t != 0.0 {
                    for p in 1..=km {
                        ab[base + j + p - c] -= ab[kv + p + col] * t;
                    }
                }
            }
        }
        Ok(())
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl, kv, ldab) = (self.n, self.kl, self.kv(), self.ldab());
        let ab = &self.ab;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let l = self.ipiv[j];
            if l != j {
                b.swap(l, j);
            }
            let bj = b[j];
            if bj != 0.0 {
                for p in 1..=km {
                    b[j + p] -= ab[kv + p + j * ldab] * bj;
                }
            }
        }
        for j in (0..n).rev() {
            let base = kv + j * ldab;
            b[j] /= ab[base];
            let t = b[j];
            if t != 0.0 {
                for i in j.saturating_sub(kv)..j {
                    b[i] -= ab[base + i - j] * t;
                }
            }
        }
    }
}

struct BorderedBand {
    /// `perm[new] = old`
    perm: Vec<usize>,
    ni: usize,
    band: BandLu,
    /// `A11⁻¹ A12`, `ni × nb`
    x12: DMatrix<f64>,
    /// Sparse rows of `A21` in permuted interior indices.
    a21: Vec<Vec<(usize, f64)>>,
    schur: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl BorderedBand {
    fn factor(a: &Triplets, scale: f64) -> Result<Self> {
        let n = a.nrows;
        let adj = symmetric_adjacency(a);
        let avg = adj.iter().map(Vec::len).sum::<usize>() as f64 / n as f64;
        let threshold = 3.0 * avg + 20.0;
        let mut border: Vec<usize> = (0..n).filter(|&i| adj[i].len() as f64 > threshold).collect();
        if border.len() > MAX_BORDER {
            border.clear();
        }
        let mut is_border = vec![false; n];
        border.iter().for_each(|&i| is_border[i] = true);

        let interior_order = reverse_cuthill_mckee(&adj, &is_border);
        let ni = interior_order.len();
        let nb = border.len();
        let mut perm = interior_order;
        perm.extend_from_slice(&border);
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        let (mut kl, mut ku) = (0usize, 0usize);
        for &(r, c, _) in &a.entries {
            let (pr, pc) = (inv[r], inv[c]);
            if pr < ni && pc < ni {
                if pr > pc {
                    kl = kl.max(pr - pc);
                } else {
                    ku = ku.max(pc - pr);
                }
            }
        }
        let mut band = BandLu::new(ni, kl, ku);
        let mut a12 = DMatrix::zeros(ni, nb);
        let mut a21: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nb];
        let mut a22 = DMatrix::<f64>::zeros(nb, nb);
        for &(r, c, v) in &a.entries {
            let (pr, pc) = (inv[r], inv[c]);
            match (pr < ni, pc < ni) {
                (true, true) => band.add(pr, pc, v),
                (true, false) => a12[(pr, pc - ni)] += v,
                (false, true) => a21[pr - ni].push((pc, v)),
                (false, false) => a22[(pr - ni, pc - ni)] += v,
            }
        }
        band.factor(PIVOT_REL * scale.max(1.0))?;

        let mut x12 = a12;
        for k in 0..nb {
            let mut col: Vec<f64> = x12.column(k).iter().copied().collect();
            band.solve_in_place(&mut col);
            x12.set_column(k, &DVector::from_vec(col));
        }
        let schur = if nb > 0 {
            let mut s = a22;
            for (r, row) in a21.iter().enumerate() {
                for &(c, v) in row {
                    for k in 0..nb {
                        s[(r, k)] -= v * x12[(c, k)];
                    }
                }
            }
            let lu = s.lu();
            let u = lu.u();
            if (0..nb).any(|i| !(u[(i, i)].abs() > PIVOT_REL * scale.max(1.0))) {
                return Err(Error::Singular);
            }
            Some(lu)
        } else {
            None
        };
        Ok(Self { perm, ni, band, x12, a21, schur })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let ni = self.ni;
        let mut pb: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        let (b1, b2) = pb.split_at_mut(ni);
        self.band.solve_in_place(b1);
        if let Some(lu) = &self.schur {
            let mut rhs = DVector::from_column_slice(b2);
            for (r, row) in self.a21.iter().enumerate() {
                rhs[r] -= row.iter().map(|&(c, v)| v * b1[c]).sum::<f64>();
            }
            let z = lu.solve(&rhs).unwrap_or_else(|| DVector::from_element(rhs.len(), f64::NAN));
            for i in 0..ni {
                let mut acc = 0.0;
                for k in 0..z.len() {
                    acc += self.x12[(i, k)] * z[k];
                }
                b1[i] -= acc;
            }
            b2.copy_from_slice(z.as_slice());
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = pb[new];
        }
        x
    }
}

fn symmetric_adjacency(a: &Triplets) -> Vec<Vec<usize>> {
    let n = a.nrows;
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(r, c, _) in &a.entries {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// Reverse Cuthill-McKee ordering of the nodes not flagged in `skip`.
fn reverse_cuthill_mckee(adj: &[Vec<usize>], skip: &[bool]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = (0..n).map(|i| adj[i].iter().filter(|&&j| !skip[j]).count()).collect();
    let mut visited = skip.to_vec();
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).filter(|&i| !skip[i]).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));

    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(adj, skip, &degree, seed);
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut nbrs = Vec::new();
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(adj[v].iter().copied().filter(|&w| !visited[w]));
            nbrs.sort_by_key(|&w| (degree[w], w));
            for &w in &nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(adj: &[Vec<usize>], skip: &[bool], degree: &[usize], seed: usize) -> usize {
    let mut start = seed;
    let mut ecc = 0;
    for _ in 0..4 {
        let (levels, last) = bfs_levels(adj, skip, start);
        if levels <= ecc {
            break;
        }
        ecc = levels;
        start = *last.iter().min_by_key(|&&v| (degree[v], v)).unwrap_or(&start);
    }
    start
}

fn bfs_levels(adj: &[Vec<usize>], skip: &[bool], start: usize) -> (usize, Vec<usize>) {
    let mut seen = std::collections::HashSet::from([start]);
    let mut level = vec![start];
    let mut depth = 0;
    loop {
        let mut next = Vec::new();
        for &v in &level {
            for &w in &adj[v] {
                if !skip[w] && seen.insert(w) {
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return (depth, level);
        }
        depth += 1;
        level = next;
    }
}
