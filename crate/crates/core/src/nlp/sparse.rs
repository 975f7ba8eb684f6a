use nalgebra::DMatrix;

/// Sparse matrix in coordinate form. Duplicate entries add up.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self { nrows, ncols, entries: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols, "({r}, {c}) outside {}x{}", self.nrows, self.ncols);
        if v != 0.0 {
            self.entries.push((r, c, v));
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Self::new(m.nrows(), m.ncols());
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                t.push(r, c, m[(r, c)]);
            }
        }
        t
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    /// `A x`
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// `Aᵀ y`
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.ncols];
        for &(r, c, v) in &self.entries {
            x[c] += v * y[r];
        }
        x
    }

    /// Adds `Aᵀ y` into `out`.
    pub fn tr_mul_add(&self, y: &[f64], out: &mut [f64]) {
        for &(r, c, v) in &self.entries {
            out[c] += v * y[r];
        }
    }

    /// Entries of row-major rows, duplicates merged.
    pub fn rows(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.nrows];
        for &(r, c, v) in &self.entries {
            rows[r].push((c, v));
        }
        for row in &mut rows {
            merge_sorted(row);
        }
        rows
    }

    /// Sorts entries and merges duplicates.
    pub fn compress(&mut self) {
        self.entries.sort_unstable_by_key(|a| (a.0, a.1));
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(self.entries.len());
        for &(r, c, v) in &self.entries {
            match out.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => out.push((r, c, v)),
            }
        }
        out.retain(|e| e.2 != 0.0);
        self.entries = out;
    }

    pub fn abs_max(&self) -> f64 {
        self.entries.iter().fold(0.0_f64, |m, e| m.max(e.2.abs()))
    }
}

fn merge_sorted(row: &mut Vec<(usize, f64)>) {
    row.sort_unstable_by_key(|e| e.0);
    let mut w = 0;
    for i in 0..row.len() {
        if w > 0 && row[w - 1].0 == row[i].0 {
            row[w - 1].1 += row[i].1;
        } else {
            row[w] = row[i];
            w += 1;
        }
    }
    row.truncate(w);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn products_and_duplicates() {
        let mut t = Triplets::new(2, 3);
        t.push(0, 0, 1.0);
        t.push(0, 2, 2.0);
        t.push(1, 1, 3.0);
        t.push(0, 0, 4.0);
        t.push(1, 2, 0.0);
        assert_eq!(t.entries.len(), 4);
        assert_eq!(t.mul_vec(&[1.0, 1.0, 1.0]), vec![7.0, 3.0]);
        assert_eq!(t.tr_mul_vec(&[1.0, 2.0]), vec![5.0, 6.0, 2.0]);
        assert_eq!(t.to_dense()[(0, 0)], 5.0);
        assert_eq!(t.rows()[0], vec![(0, 5.0), (2, 2.0)]);
        let mut c = t.clone();
        c.compress();
        assert_eq!(c.entries.len(), 3);
        assert_eq!(c.to_dense(), t.to_dense());
        assert_eq!(Triplets::from_dense(&t.to_dense()).to_dense(), t.to_dense());
    }
}
