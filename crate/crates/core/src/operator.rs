//! Sparse tensor-product operators on a register of qubits and truncated
//! oscillators.
//!
//! Sites are ordered as given to [`Space::new`]; the first site is the most
//! significant digit of a basis index. A [`ProductTerm`] stores only its
//! non-identity factors, so commutators of single-site drive terms stay short.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Dimensions and strides of a tensor-product space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Space {
    dims: Vec<usize>,
    strides: Vec<usize>,
}

impl Space {
    pub fn new(dims: Vec<usize>) -> Self {
        let mut strides = vec![1usize; dims.len()];
        for s in (0..dims.len().saturating_sub(1)).rev() {
            strides[s] = strides[s + 1].saturating_mul(dims[s + 1]);
        }
        Space { dims, strides }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn stride(&self, site: usize) -> usize {
        self.strides[site]
    }

    /// Saturates at `usize::MAX` for spaces too large to index.
    pub fn len(&self) -> usize {
        self.dims.iter().fold(1usize, |a, &d| a.saturating_mul(d))
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Digit of basis index `idx` on `site`.
    pub fn digit(&self, idx: usize, site: usize) -> usize {
        (idx / self.strides[site]) % self.dims[site]
    }
}

/// Sparse square operator on one site, stored by column.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalOp {
    dim: usize,
    cols: Vec<Vec<(usize, C64)>>,
}

impl LocalOp {
    pub fn zeros(dim: usize) -> Self {
        LocalOp { dim, cols: vec![Vec::new(); dim] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![ONE; dim])
    }

    pub fn diagonal(values: &[C64]) -> Self {
        let mut op = Self::zeros(values.len());
        for (c, &v) in values.iter().enumerate() {
            op.push(c, c, v);
        }
        op
    }

    pub fn from_dense(rows: &[Vec<C64>]) -> Self {
        let dim = rows.len();
        let mut op = Self::zeros(dim);
        for c in 0..dim {
            for (r, row) in rows.iter().enumerate() {
                op.push(r, c, row[c]);
            }
        }
        op
    }

    pub fn sigma_x() -> Self {
        Self::from_dense(&[vec![ZERO, ONE], vec![ONE, ZERO]])
    }

    pub fn sigma_y() -> Self {
        let i = C64::i();
        Self::from_dense(&[vec![ZERO, -i], vec![i, ZERO]])
    }

    pub fn sigma_z() -> Self {
        Self::diagonal(&[ONE, -ONE])
    }

    /// Annihilation operator on `levels` Fock states.
    pub fn annihilation(levels: usize) -> Self {
        let mut op = Self::zeros(levels);
        for n in 1..levels {
            op.push(n - 1, n, C64::new((n as f64).sqrt(), 0.0));
        }
        op
    }

    pub fn creation(levels: usize) -> Self {
        Self::annihilation(levels).adjoint()
    }

    pub fn number(levels: usize) -> Self {
        Self::diagonal(&(0..levels).map(|n| C64::new(n as f64, 0.0)).collect::<Vec<_>>())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn push(&mut self, row: usize, col: usize, v: C64) {
        if v != ZERO {
            self.cols[col].push((row, v));
            self.cols[col].sort_by_key(|e| e.0);
        }
    }

    /// Entries of column `col` as (row, value).
    pub fn column(&self, col: usize) -> &[(usize, C64)] {
        &self.cols[col]
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.cols[col].iter().find(|e| e.0 == row).map_or(ZERO, |e| e.1)
    }

    pub fn adjoint(&self) -> Self {
        let mut op = Self::zeros(self.dim);
        for (c, col) in self.cols.iter().enumerate() {
            for &(r, v) in col {
                op.cols[r].push((c, v.conj()));
            }
        }
        for col in &mut op.cols {
            col.sort_by_key(|e| e.0);
        }
        op
    }

    /// Matrix product `self · other`.
    pub fn mul(&self, other: &LocalOp) -> LocalOp {
        assert_eq!(self.dim, other.dim, "local dimension mismatch");
        let mut out = Self::zeros(self.dim);
        let mut acc = vec![ZERO; self.dim];
        for c in 0..self.dim {
            for &(k, b) in &other.cols[c] {
                for &(r, a) in &self.cols[k] {
                    acc[r] += a * b;
                }
            }
            for (r, v) in acc.iter_mut().enumerate() {
                if *v != ZERO {
                    out.cols[c].push((r, *v));
                    *v = ZERO;
                }
            }
        }
        out
    }

    pub fn add_scaled(&self, other: &LocalOp, s: C64) -> LocalOp {
        assert_eq!(self.dim, other.dim, "local dimension mismatch");
        let mut out = self.clone();
        for c in 0..self.dim {
            for &(r, v) in &other.cols[c] {
                match out.cols[c].iter_mut().find(|e| e.0 == r) {
                    Some(e) => e.1 += s * v,
                    None => out.cols[c].push((r, s * v)),
                }
            }
            out.cols[c].retain(|e| e.1 != ZERO);
            out.cols[c].sort_by_key(|e| e.0);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.cols.iter().all(Vec::is_empty)
    }

    pub fn is_identity(&self) -> bool {
        self.cols.iter().enumerate().all(|(c, col)| col.len() == 1 && col[0] == (c, ONE))
    }
}

/// Scalar times a tensor product of local operators; absent sites are identity.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductTerm {
    pub coeff: C64,
    pub ops: BTreeMap<usize, LocalOp>,
}

impl ProductTerm {
    pub fn identity() -> Self {
        ProductTerm { coeff: ONE, ops: BTreeMap::new() }
    }

    pub fn single(site: usize, op: LocalOp) -> Self {
        Self::identity().with(site, op)
    }

    /// Multiply `op` onto `site` from the right.
    pub fn with(mut self, site: usize, op: LocalOp) -> Self {
        let merged = match self.ops.remove(&site) {
            Some(existing) => existing.mul(&op),
            None => op,
        };
        self.insert(site, merged);
        self
    }

    fn insert(&mut self, site: usize, op: LocalOp) {
        if op.is_zero() {
            self.coeff = ZERO;
        } else if !op.is_identity() {
            self.ops.insert(site, op);
        }
    }

    pub fn scaled(mut self, s: C64) -> Self {
        self.coeff *= s;
        self
    }

    pub fn is_zero(&self) -> bool {
        self.coeff == ZERO
    }

    pub fn adjoint(&self) -> Self {
        ProductTerm { coeff: self.coeff.conj(), ops: self.ops.iter().map(|(&s, o)| (s, o.adjoint())).collect() }
    }

    fn site_products(&self, other: &ProductTerm) -> Vec<(usize, LocalOp, LocalOp)> {
        let sites: std::collections::BTreeSet<usize> = self.ops.keys().chain(other.ops.keys()).copied().collect();
        sites
            .into_iter()
            .map(|s| {
                let (ab, ba) = match (self.ops.get(&s), other.ops.get(&s)) {
                    (Some(a), Some(b)) => (a.mul(b), b.mul(a)),
                    (Some(a), None) => (a.clone(), a.clone()),
                    (None, Some(b)) => (b.clone(), b.clone()),
                    (None, None) => unreachable!(),
                };
                (s, ab, ba)
            })
            .collect()
    }

    pub fn mul(&self, other: &ProductTerm) -> ProductTerm {
        let mut out = ProductTerm { coeff: self.coeff * other.coeff, ops: BTreeMap::new() };
        for (s, ab, _) in self.site_products(other) {
            out.insert(s, ab);
        }
        out
    }

    /// `[self, other]`, collapsed to one term when the factors differ on a single site.
    pub fn commutator(&self, other: &ProductTerm) -> OpSum {
        let c = self.coeff * other.coeff;
        if c == ZERO {
            return OpSum::default();
        }
        let factors = self.site_products(other);
        let differing: Vec<usize> = (0..factors.len()).filter(|&i| factors[i].1 != factors[i].2).collect();
        match differing.as_slice() {
            [] => OpSum::default(),
            [only] => {
                let mut t = ProductTerm { coeff: c, ops: BTreeMap::new() };
                for (i, (s, ab, ba)) in factors.into_iter().enumerate() {
                    if i == *only {
                        t.insert(s, ab.add_scaled(&ba, -ONE));
                    } else {
                        t.insert(s, ab);
                    }
                }
                OpSum::from_terms(vec![t])
            }
            _ => {
                let mut ab = ProductTerm { coeff: c, ops: BTreeMap::new() };
                let mut ba = ProductTerm { coeff: -c, ops: BTreeMap::new() };
                for (s, x, y) in factors {
                    ab.insert(s, x);
                    ba.insert(s, y);
                }
                OpSum::from_terms(vec![ab, ba])
            }
        }
    }
}

/// Sum of product terms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OpSum {
    pub terms: Vec<ProductTerm>,
}

impl OpSum {
    pub fn from_terms(terms: Vec<ProductTerm>) -> Self {
        let mut s = OpSum { terms };
        s.simplify();
        s
    }

    /// Merge terms with identical factors and drop zeros. Term order follows
    /// first appearance.
    pub fn simplify(&mut self) {
        let mut merged: Vec<ProductTerm> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            if t.is_zero() {
                continue;
            }
            match merged.iter_mut().find(|m| m.ops == t.ops) {
                Some(m) => m.coeff += t.coeff,
                None => merged.push(t),
            }
        }
        merged.retain(|t| !t.is_zero());
        self.terms = merged;
    }

    pub fn extend(&mut self, other: OpSum) {
        self.terms.extend(other.terms);
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

/// A product term's action on a state vector, precomputed for repeated use.
///
/// The affected sites span a small block; `moves` lists every nonzero
/// (input offset, output offset, value) inside that block and `bases` every
/// index whose affected digits are all zero.
#[derive(Clone, Debug)]
pub struct CompiledTerm {
    moves: Vec<(usize, usize, C64)>,
    bases: Vec<usize>,
}

impl CompiledTerm {
    pub fn new(term: &ProductTerm, space: &Space) -> Self {
        let mut moves = vec![(0usize, 0usize, term.coeff)];
        for (&site, op) in &term.ops {
            assert_eq!(op.dim(), space.dims()[site], "operator dimension does not match site {site}");
            let stride = space.stride(site);
            let mut next = Vec::with_capacity(moves.len() * op.dim());
            for &(i, o, v) in &moves {
                for c in 0..op.dim() {
                    for &(r, a) in op.column(c) {
                        next.push((i + c * stride, o + r * stride, v * a));
                    }
                }
            }
            moves = next;
        }
        let affected: Vec<usize> = term.ops.keys().copied().collect();
        let bases = (0..space.len()).filter(|&idx| affected.iter().all(|&s| space.digit(idx, s) == 0)).collect();
        CompiledTerm { moves, bases }
    }

    /// out += c · term · psi
    pub fn apply_add(&self, c: C64, psi: &[C64], out: &mut [C64]) {
        if c == ZERO {
            return;
        }
        let scaled: Vec<(usize, usize, C64)> = self.moves.iter().map(|&(i, o, v)| (i, o, c * v)).collect();
        for &b in &self.bases {
            let (src, dst) = (&psi[b..], &mut out[b..]);
            for &(i, o, w) in &scaled {
                dst[o] += w * src[i];
            }
        }
    }
}

/// Dense matrix of an operator sum, for tests on small spaces.
pub fn dense_matrix(sum: &OpSum, space: &Space) -> Vec<Vec<C64>> {
    let n = space.len();
    let mut m = vec![vec![ZERO; n]; n];
    let mut e = vec![ZERO; n];
    let mut col = vec![ZERO; n];
    let compiled: Vec<CompiledTerm> = sum.terms.iter().map(|t| CompiledTerm::new(t, space)).collect();
    for j in 0..n {
        e[j] = ONE;
        col.iter_mut().for_each(|x| *x = ZERO);
        for ct in &compiled {
            ct.apply_add(ONE, &e, &mut col);
        }
        for i in 0..n {
            m[i][j] = col[i];
        }
        e[j] = ZERO;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kron(a: &[Vec<C64>], b: &[Vec<C64>]) -> Vec<Vec<C64>> {
        let (n, m) = (a.len(), b.len());
        let mut out = vec![vec![ZERO; n * m]; n * m];
        for i in 0..n {
            for j in 0..n {
                for k in 0..m {
                    for l in 0..m {
                        out[i * m + k][j * m + l] = a[i][j] * b[k][l];
                    }
                }
            }
        }
        out
    }

    fn dense_local(op: &LocalOp) -> Vec<Vec<C64>> {
        (0..op.dim()).map(|r| (0..op.dim()).map(|c| op.get(r, c)).collect()).collect()
    }

    fn matmul(a: &[Vec<C64>], b: &[Vec<C64>]) -> Vec<Vec<C64>> {
        let n = a.len();
        (0..n).map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum()).collect()).collect()
    }

    fn max_diff(a: &[Vec<C64>], b: &[Vec<C64>]) -> f64 {
        a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn ladder_commutator_is_truncated_identity() {
        let a = LocalOp::annihilation(4);
        let ad = LocalOp::creation(4);
        let c = a.mul(&ad).add_scaled(&ad.mul(&a), -ONE);
        for n in 0..3 {
            assert!((c.get(n, n) - ONE).norm() < 1e-15);
        }
        assert!((c.get(3, 3) - C64::new(-3.0, 0.0)).norm() < 1e-15);
        assert!(LocalOp::sigma_x().mul(&LocalOp::sigma_x()).is_identity());
    }

    #[test]
    fn compiled_terms_match_kronecker_products() {
        let space = Space::new(vec![2, 2, 3]);
        let t = ProductTerm::single(0, LocalOp::sigma_x())
            .with(2, LocalOp::annihilation(3))
            .scaled(C64::new(0.3, -0.2));
        let got = dense_matrix(&OpSum::from_terms(vec![t]), &space);
        let id2 = dense_local(&LocalOp::identity(2));
        let want = kron(&kron(&dense_local(&LocalOp::sigma_x()), &id2), &dense_local(&LocalOp::annihilation(3)));
        let want: Vec<Vec<C64>> = want.iter().map(|r| r.iter().map(|x| x * C64::new(0.3, -0.2)).collect()).collect();
        assert!(max_diff(&got, &want) < 1e-15);
    }

    #[test]
    fn symbolic_commutators_match_dense() {
        let space = Space::new(vec![2, 2, 3, 3]);
        let ops = [
            ProductTerm::single(0, LocalOp::sigma_x()).with(2, LocalOp::annihilation(3)),
            ProductTerm::single(1, LocalOp::sigma_x()).with(2, LocalOp::creation(3)),
            ProductTerm::single(0, LocalOp::sigma_x()).with(3, LocalOp::creation(3)),
            ProductTerm::single(0, LocalOp::sigma_z()).with(2, LocalOp::creation(3)),
            ProductTerm::single(0, LocalOp::sigma_y()).with(1, LocalOp::sigma_z()),
        ];
        for a in &ops {
            for b in &ops {
                let sym = dense_matrix(&a.commutator(b), &space);
                let da = dense_matrix(&OpSum::from_terms(vec![a.clone()]), &space);
                let db = dense_matrix(&OpSum::from_terms(vec![b.clone()]), &space);
                let ab = matmul(&da, &db);
                let ba = matmul(&db, &da);
                let want: Vec<Vec<C64>> =
                    ab.iter().zip(&ba).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x - y).collect()).collect();
                assert!(max_diff(&sym, &want) < 1e-14);
            }
        }
    }

    #[test]
    fn cross_mode_and_shared_qubit_commutators_vanish() {
        let a = ProductTerm::single(0, LocalOp::sigma_x()).with(2, LocalOp::annihilation(5));
        let b = ProductTerm::single(0, LocalOp::sigma_x()).with(3, LocalOp::creation(5));
        assert!(a.commutator(&b).is_empty());
    }

    #[test]
    fn simplify_merges_equal_terms() {
        let t = ProductTerm::single(1, LocalOp::number(3));
        let s = OpSum::from_terms(vec![t.clone(), t.clone().scaled(C64::new(2.0, 0.0)), t.scaled(-C64::new(3.0, 0.0))]);
        assert!(s.is_empty());
    }
}
