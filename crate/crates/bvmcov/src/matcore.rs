//! Dense symmetric-matrix kernel: half-vectorization, elimination maps,
//! the implied covariance of symmetric matrix-normal laws, norms, and a
//! Cholesky factorization that reports the failing leading minor.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::UGraph;

/// Relative tolerance for symmetry / commutation / PSD checks.
pub const SYM_TOL: f64 = 1e-10;
/// Relative tolerance for Cholesky reconstruction.
pub const CHOL_TOL: f64 = 1e-12;

/// Symmetric p x p matrix. The lower triangle is authoritative: the upper
/// triangle is mirrored bitwise at construction, so stored symmetry is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    m: DMatrix<f64>,
}

impl SymMatrix {
    /// Build from a dense matrix, checking near-symmetry at `SYM_TOL`
    /// (relative to the largest entry), then mirroring the lower triangle.
    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: m.ncols(),
            });
        }
        let scale = m.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
        for i in 0..m.nrows() {
            for j in 0..i {
                let dev = (m[(i, j)] - m[(j, i)]).abs();
                if dev > SYM_TOL * scale {
                    return Err(Error::NotSymmetric { i, j, dev });
                }
            }
        }
        Ok(Self::from_lower(m.nrows(), |i, j| m[(i, j)]))
    }

    /// Build from a function over the lower triangle (i >= j).
    pub fn from_lower(p: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(p, p);
        for j in 0..p {
            for i in j..p {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix { m }
    }

    pub fn zeros(p: usize) -> Self {
        SymMatrix {
            m: DMatrix::zeros(p, p),
        }
    }

    pub fn identity(p: usize) -> Self {
        SymMatrix {
            m: DMatrix::identity(p, p),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    /// Entrywise linear combination `a*self + b*other`.
    pub fn axpy(&self, a: f64, other: &SymMatrix, b: f64) -> SymMatrix {
        SymMatrix {
            m: &self.m * a + &other.m * b,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|x| x.is_finite())
    }
}

/// Symmetric positive definite matrix, verified via Cholesky at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    s: SymMatrix,
}

impl SpdMatrix {
    pub fn new(s: SymMatrix) -> Result<Self> {
        try_cholesky(s.as_matrix())?;
        Ok(SpdMatrix { s })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        Self::new(SymMatrix::from_dense(m)?)
    }

    pub fn identity(p: usize) -> Self {
        SpdMatrix {
            s: SymMatrix::identity(p),
        }
    }

    /// Diagonal SPD matrix; all entries must be strictly positive.
    pub fn from_diagonal(d: &[f64]) -> Result<Self> {
        if let Some(k) = d.iter().position(|x| *x <= 0.0 || !x.is_finite()) {
            return Err(Error::NotPositiveDefinite { index: k + 1 });
        }
        Ok(SpdMatrix {
            s: SymMatrix::from_lower(d.len(), |i, j| if i == j { d[i] } else { 0.0 }),
        })
    }

    pub fn dim(&self) -> usize {
        self.s.dim()
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.s
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.s.as_matrix()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.s.get(i, j)
    }

    /// Lower-triangular Cholesky factor, L L^T = A.
    pub fn cholesky_lower(&self) -> DMatrix<f64> {
        try_cholesky(self.as_matrix()).expect("verified at construction")
    }

    pub fn log_det(&self) -> f64 {
        let l = self.cholesky_lower();
        2.0 * (0..self.dim()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> SpdMatrix {
        let l = self.cholesky_lower();
        let p = self.dim();
        // A^{-1} = L^{-T} L^{-1}
        let linv = invert_lower(&l);
        let inv = linv.transpose() * &linv;
        SpdMatrix {
            s: SymMatrix::from_lower(p, |i, j| inv[(i, j)]),
        }
    }

    /// Solve A x = b.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let l = self.cholesky_lower();
        let y = forward_solve(&l, b);
        back_solve_transposed(&l, &y)
    }

    pub fn scale(&self, c: f64) -> Result<SpdMatrix> {
        if c <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "scale factor must be positive, got {c}"
            )));
        }
        Ok(SpdMatrix {
            s: SymMatrix::from_lower(self.dim(), |i, j| c * self.get(i, j)),
        })
    }
}

/// Half-vectorization of a symmetric matrix: lower triangle including the
/// diagonal, stacked column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfVec {
    p: usize,
    values: DVector<f64>,
}

impl HalfVec {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        let p = dim_from_triangular(values.len())?;
        Ok(HalfVec { p, values })
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }
}

/// p from p(p+1)/2, rejecting non-triangular lengths.
fn dim_from_triangular(len: usize) -> Result<usize> {
    let p = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    if p * (p + 1) / 2 != len {
        return Err(Error::NotTriangularLength { len });
    }
    Ok(p)
}

/// vech(A): elements on and below the diagonal, column-wise.
pub fn vech(a: &SymMatrix) -> HalfVec {
    let p = a.dim();
    let mut v = DVector::zeros(p * (p + 1) / 2);
    let mut r = 0;
    for j in 0..p {
        for i in j..p {
            v[r] = a.get(i, j);
            r += 1;
        }
    }
    HalfVec { p, values: v }
}

/// Inverse of `vech`: rebuild the symmetric matrix. Rejects lengths that are
/// not triangular numbers.
pub fn vech_inverse(values: &[f64]) -> Result<SymMatrix> {
    let p = dim_from_triangular(values.len())?;
    let mut m = DMatrix::zeros(p, p);
    let mut r = 0;
    for j in 0..p {
        for i in j..p {
            m[(i, j)] = values[r];
            m[(j, i)] = values[r];
            r += 1;
        }
    }
    Ok(SymMatrix { m })
}

/// vec(A): full column stacking, index j*p + i (0-based).
pub fn vec_of(a: &DMatrix<f64>) -> DVector<f64> {
    let (p, q) = (a.nrows(), a.ncols());
    let mut v = DVector::zeros(p * q);
    for j in 0..q {
        for i in 0..p {
            v[j * p + i] = a[(i, j)];
        }
    }
    v
}

/// 0/1 elimination map selecting unique coordinates of vec(A).
///
/// Each row holds a single 1; row r selects vec position `j*p + i` for the
/// r-th retained coordinate (i, j), i >= j, in column-stacked lower-triangle
/// order. The full map (all i >= j) extracts vech; a graph-restricted map
/// keeps the diagonal plus edge coordinates only.
#[derive(Debug, Clone, PartialEq)]
pub struct EliminationMap {
    p: usize,
    coords: Vec<(usize, usize)>,
}

impl EliminationMap {
    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn rows(&self) -> usize {
        self.coords.len()
    }

    pub fn cols(&self) -> usize {
        self.p * self.p
    }

    /// Retained (i, j) coordinates, i >= j, in row order.
    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    /// Column of the single 1 in row r.
    pub fn col_of_row(&self, r: usize) -> usize {
        let (i, j) = self.coords[r];
        j * self.p + i
    }

    /// Apply to vec(A) of a p x p matrix.
    pub fn apply_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.cols() {
            return Err(Error::DimensionMismatch {
                expected: self.cols(),
                got: v.len(),
            });
        }
        let mut out = DVector::zeros(self.rows());
        for r in 0..self.rows() {
            out[r] = v[self.col_of_row(r)];
        }
        Ok(out)
    }

    /// Read the retained coordinates directly off a symmetric matrix.
    pub fn apply_sym(&self, a: &SymMatrix) -> Result<DVector<f64>> {
        if a.dim() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: a.dim(),
            });
        }
        let mut out = DVector::zeros(self.rows());
        for (r, &(i, j)) in self.coords.iter().enumerate() {
            out[r] = a.get(i, j);
        }
        Ok(out)
    }

    /// Scatter retained coordinates back into a symmetric matrix, zero
    /// elsewhere.
    pub fn scatter(&self, v: &DVector<f64>) -> Result<SymMatrix> {
        if v.len() != self.rows() {
            return Err(Error::DimensionMismatch {
                expected: self.rows(),
                got: v.len(),
            });
        }
        let mut m = DMatrix::zeros(self.p, self.p);
        for (r, &(i, j)) in self.coords.iter().enumerate() {
            m[(i, j)] = v[r];
            m[(j, i)] = v[r];
        }
        Ok(SymMatrix { m })
    }

    /// Dense 0/1 matrix, rows x p^2. Test and inspection aid.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows(), self.cols());
        for r in 0..self.rows() {
            m[(r, self.col_of_row(r))] = 1.0;
        }
        m
    }
}

/// Full elimination map: row for (i, j) sits at index (j-1)p + i - j(j-1)/2
/// in 1-based terms, with its 1 in column (j-1)p + i.
pub fn elimination_matrix(p: usize) -> EliminationMap {
    let mut coords = Vec::with_capacity(p * (p + 1) / 2);
    for j in 0..p {
        for i in j..p {
            coords.push((i, j));
        }
    }
    EliminationMap { p, coords }
}

/// Graph-restricted elimination map: diagonal entries plus one row per edge,
/// in column-stacked lower-triangle order. Rows = p + |E|.
pub fn graph_elimination_map(g: &UGraph) -> EliminationMap {
    let p = g.vertex_count();
    let mut coords = Vec::with_capacity(p + g.edge_count());
    for j in 0..p {
        coords.push((j, j));
        for i in (j + 1)..p {
            if g.has_edge(i, j) {
                coords.push((i, j));
            }
        }
    }
    EliminationMap { p, coords }
}

/// Covariance of the retained coordinates of a symmetric matrix-normal law.
#[derive(Debug, Clone)]
pub struct HalfVecCov {
    p: usize,
    coords: Vec<(usize, usize)>,
    cov: DMatrix<f64>,
}

impl HalfVecCov {
    pub fn dim(&self) -> usize {
        self.p
    }

    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn size(&self) -> usize {
        self.cov.nrows()
    }

    pub fn cholesky_lower(&self) -> Result<DMatrix<f64>> {
        try_cholesky(&self.cov)
    }
}

/// Covariance of vech(X) (or of the graph-restricted coordinates) implied by
/// the trace-form density
/// `exp{-tr(psi1^{-1} (X-M) psi2^{-1} (X-M)) / (2 factor)}` on the symmetric
/// (or graph-constrained symmetric) matrices.
///
/// The scale pair must commute. The covariance is `factor` times the inverse
/// of the trace-form quadratic form restricted to the retained coordinates;
/// for the full coordinate set with psi1 = psi2 = psi this reduces entrywise
/// to `factor/2 * (psi_ik psi_jl + psi_il psi_jk)`.
pub fn smn_halfvec_cov(
    psi1: &SpdMatrix,
    psi2: &SpdMatrix,
    factor: f64,
    graph: Option<&UGraph>,
) -> Result<HalfVecCov> {
    let p = psi1.dim();
    if psi2.dim() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: psi2.dim(),
        });
    }
    if factor <= 0.0 || !factor.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "variance factor must be positive, got {factor}"
        )));
    }
    check_commuting(psi1, psi2)?;
    if let Some(g) = graph {
        if g.vertex_count() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: g.vertex_count(),
            });
        }
    }

    let map = match graph {
        Some(g) => graph_elimination_map(g),
        None => elimination_matrix(p),
    };
    let coords = map.coords().to_vec();
    let h = trace_form_quadform(psi1, psi2, &coords);

    // C = factor * H^{-1} via Cholesky.
    let l = try_cholesky(&h).map_err(|_| Error::NotPsd { min_eig: f64::NAN })?;
    let linv = invert_lower(&l);
    let hinv = linv.transpose() * &linv;
    let m = coords.len();
    let cov = DMatrix::from_fn(m, m, |a, b| factor * 0.5 * (hinv[(a, b)] + hinv[(b, a)]));

    let max_diag = (0..m).fold(0.0f64, |acc, i| acc.max(cov[(i, i)]));
    let min_eig = min_symmetric_eigenvalue(&cov);
    if min_eig < -SYM_TOL * max_diag.max(1.0) {
        return Err(Error::NotPsd { min_eig });
    }

    Ok(HalfVecCov { p, coords, cov })
}

/// Quadratic-form matrix H of `tr(psi1^{-1} X psi2^{-1} X)` over the retained
/// symmetric coordinates: the form equals x^T H x for x the coordinate vector.
fn trace_form_quadform(
    psi1: &SpdMatrix,
    psi2: &SpdMatrix,
    coords: &[(usize, usize)],
) -> DMatrix<f64> {
    let l1 = psi1.inverse();
    let l2 = psi2.inverse();
    let l1 = l1.as_matrix();
    let l2 = l2.as_matrix();
    let m = coords.len();
    // vec-space kernel: M[(i,j),(k,l)] = (L2_jl L1_ik + L1_jl L2_ik) / 2,
    // summed over the symmetric orbits of both coordinates.
    let kernel = |i: usize, j: usize, k: usize, l: usize| {
        0.5 * (l2[(j, l)] * l1[(i, k)] + l1[(j, l)] * l2[(i, k)])
    };
    DMatrix::from_fn(m, m, |a, b| {
        let (i, j) = coords[a];
        let (k, l) = coords[b];
        let mut s = kernel(i, j, k, l);
        if k != l {
            s += kernel(i, j, l, k);
        }
        if i != j {
            s += kernel(j, i, k, l);
            if k != l {
                s += kernel(j, i, l, k);
            }
        }
        s
    })
}

fn check_commuting(psi1: &SpdMatrix, psi2: &SpdMatrix) -> Result<()> {
    let a = psi1.as_matrix() * psi2.as_matrix();
    let b = psi2.as_matrix() * psi1.as_matrix();
    let scale = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs())).max(1.0);
    let dev = (&a - &b).iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if dev > SYM_TOL * scale {
        return Err(Error::NonCommutingScales { dev });
    }
    Ok(())
}

/// Matrix norms used throughout: spectral (largest singular value),
/// Frobenius, entrywise max, and max absolute row sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixNorms {
    pub spectral: f64,
    pub frobenius: f64,
    pub max: f64,
    pub inf_inf: f64,
}

pub fn norms(a: &DMatrix<f64>) -> MatrixNorms {
    MatrixNorms {
        spectral: spectral_norm(a),
        frobenius: a.iter().map(|x| x * x).sum::<f64>().sqrt(),
        max: a.iter().fold(0.0f64, |acc, x| acc.max(x.abs())),
        inf_inf: (0..a.nrows())
            .map(|i| (0..a.ncols()).map(|j| a[(i, j)].abs()).sum::<f64>())
            .fold(0.0f64, f64::max),
    }
}

pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .singular_values()
        .iter()
        .fold(0.0f64, |acc, s| acc.max(*s))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let sym = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    sym.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, e| acc.min(*e))
}

/// Lower-triangular Cholesky, L L^T = A. Fails with the 1-based index of the
/// first non-positive leading minor.
pub fn try_cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    if p != a.ncols() {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: a.ncols(),
        });
    }
    let mut l = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j + 1 });
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..p {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(l)
}

/// Cholesky of an `SpdMatrix` (cannot fail: verified at construction).
pub fn cholesky(a: &SpdMatrix) -> DMatrix<f64> {
    a.cholesky_lower()
}

/// Inverse of a lower triangular matrix by forward substitution.
pub fn invert_lower(l: &DMatrix<f64>) -> DMatrix<f64> {
    let p = l.nrows();
    let mut inv = DMatrix::zeros(p, p);
    for j in 0..p {
        inv[(j, j)] = 1.0 / l[(j, j)];
        for i in (j + 1)..p {
            let mut s = 0.0;
            for k in j..i {
                s += l[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -s / l[(i, i)];
        }
    }
    inv
}

/// Solve L y = b for lower-triangular L.
pub fn forward_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let p = l.nrows();
    let mut y = DVector::zeros(p);
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solve L^T x = y for lower-triangular L.
pub fn back_solve_transposed(l: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let p = l.nrows();
    let mut x = DVector::zeros(p);
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in (i + 1)..p {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::UGraph;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_sym(p: usize, rng: &mut StdRng) -> SymMatrix {
        SymMatrix::from_lower(p, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn random_spd(p: usize, rng: &mut StdRng) -> SpdMatrix {
        let a = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
        let m = &a * a.transpose() + DMatrix::identity(p, p) * (p as f64);
        SpdMatrix::from_dense(&m).unwrap()
    }

    #[test]
    fn vech_reads_off_lower_triangle() {
        let a =
            SymMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0])).unwrap();
        assert_eq!(vech(&a).as_vector().as_slice(), &[1.0, 2.0, 3.0]);

        let id3 = vech(&SymMatrix::identity(3));
        assert_eq!(id3.as_vector().as_slice(), &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn vech_equals_elimination_times_vec() {
        let mut rng = StdRng::seed_from_u64(11);
        for p in 1..=8 {
            let a = random_sym(p, &mut rng);
            let lhs = elimination_matrix(p)
                .apply_vec(&vec_of(a.as_matrix()))
                .unwrap();
            assert_eq!(lhs, *vech(&a).as_vector());
        }
    }

    #[test]
    fn vech_inverse_round_trips() {
        let v = [1.0, 2.0, 3.0];
        let a = vech_inverse(&v).unwrap();
        assert_eq!(
            a.as_matrix(),
            &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0])
        );

        let z = vech_inverse(&[0.0; 6]).unwrap();
        assert_eq!(z.as_matrix(), &DMatrix::zeros(3, 3));

        let mut rng = StdRng::seed_from_u64(5);
        let vals: Vec<f64> = (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let a = vech_inverse(&vals).unwrap();
        assert_eq!(vech(&a).as_vector().as_slice(), vals.as_slice());

        assert!(matches!(
            vech_inverse(&[1.0, 2.0, 3.0, 4.0]),
            Err(Error::NotTriangularLength { len: 4 })
        ));
    }

    #[test]
    fn elimination_matrix_matches_position_formula() {
        // 1-based: coordinate (i, j) -> row (j-1)p + i - j(j-1)/2, column (j-1)p + i.
        for p in 1..=6 {
            let map = elimination_matrix(p);
            for (r, &(i0, j0)) in map.coords().iter().enumerate() {
                let (i, j) = (i0 + 1, j0 + 1);
                assert_eq!(r + 1, (j - 1) * p + i - j * (j - 1) / 2);
                assert_eq!(map.col_of_row(r) + 1, (j - 1) * p + i);
            }
        }
        // p=2 spot checks: (2,1) -> row 2, col 2; (2,2) -> row 3, col 4.
        let map = elimination_matrix(2);
        assert_eq!(map.coords()[1], (1, 0));
        assert_eq!(map.col_of_row(1) + 1, 2);
        assert_eq!(map.coords()[2], (1, 1));
        assert_eq!(map.col_of_row(2) + 1, 4);
    }

    #[test]
    fn elimination_matrix_p3_example() {
        let a = SymMatrix::from_dense(&DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0],
        ))
        .unwrap();
        let got = elimination_matrix(3)
            .apply_vec(&vec_of(a.as_matrix()))
            .unwrap();
        assert_eq!(got.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn graph_elimination_map_cases() {
        // Empty graph on 3 vertices: selects vec positions 1, 5, 9 (1-based).
        let empty = UGraph::new(3, &[]).unwrap();
        let map = graph_elimination_map(&empty);
        assert_eq!(map.rows(), 3);
        let cols: Vec<usize> = (0..3).map(|r| map.col_of_row(r) + 1).collect();
        assert_eq!(cols, vec![1, 5, 9]);

        // Complete graph: identical action to the full elimination matrix.
        let complete = UGraph::complete(3);
        assert_eq!(graph_elimination_map(&complete), elimination_matrix(3));

        // Star with hub 1: rows (1,1),(2,1),(3,1),(2,2),(3,3); (3,2) skipped.
        let star = UGraph::new(3, &[(0, 1), (0, 2)]).unwrap();
        let map = graph_elimination_map(&star);
        assert_eq!(map.coords(), &[(0, 0), (1, 0), (2, 0), (1, 1), (2, 2)]);
    }

    #[test]
    fn smn_halfvec_cov_identity_p2() {
        let id = SpdMatrix::identity(2);
        let c = smn_halfvec_cov(&id, &id, 2.0, None).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 2.0]));
        assert_relative_eq!(c.as_matrix(), &want, epsilon = 1e-12);
    }

    #[test]
    fn smn_halfvec_cov_scalar() {
        let s = SpdMatrix::from_diagonal(&[3.0]).unwrap();
        let c = smn_halfvec_cov(&s, &s, 2.0, None).unwrap();
        assert_relative_eq!(c.as_matrix()[(0, 0)], 2.0 * 9.0, epsilon = 1e-12);
    }

    #[test]
    fn smn_halfvec_cov_star_graph() {
        let id = SpdMatrix::identity(3);
        let star = UGraph::new(3, &[(0, 1), (0, 2)]).unwrap();
        let c = smn_halfvec_cov(&id, &id, 2.0, Some(&star)).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 1.0, 2.0, 2.0]));
        assert_relative_eq!(c.as_matrix(), &want, epsilon = 1e-12);
    }

    // Brute-force oracle: build the duplication matrix D (vec = D vech), its
    // pseudoinverse, the commutation matrix K, and form
    // D^+ (factor/2)(I + K)(psi (x) psi) D^{+T}.
    fn duplication_oracle(psi: &SpdMatrix, factor: f64) -> DMatrix<f64> {
        let p = psi.dim();
        let m = p * (p + 1) / 2;
        let coords = elimination_matrix(p).coords().to_vec();
        let mut d = DMatrix::zeros(p * p, m);
        for (r, &(i, j)) in coords.iter().enumerate() {
            d[(j * p + i, r)] = 1.0;
            d[(i * p + j, r)] = 1.0;
        }
        let dtd = d.transpose() * &d;
        let dplus = dtd.try_inverse().unwrap() * d.transpose();
        let mut k = DMatrix::zeros(p * p, p * p);
        for i in 0..p {
            for j in 0..p {
                k[(j * p + i, i * p + j)] = 1.0;
            }
        }
        let pm = psi.as_matrix();
        let mut kron = DMatrix::zeros(p * p, p * p);
        for a in 0..p {
            for b in 0..p {
                for c in 0..p {
                    for e in 0..p {
                        // (psi (x) psi)[(b,a),(e,c)] with vec index a*p+b.
                        kron[(a * p + b, c * p + e)] = pm[(a, c)] * pm[(b, e)];
                    }
                }
            }
        }
        let vcov = (DMatrix::identity(p * p, p * p) + k) * kron * (factor / 2.0);
        &dplus * vcov * dplus.transpose()
    }

    #[test]
    fn smn_halfvec_cov_matches_duplication_oracle() {
        let mut rng = StdRng::seed_from_u64(42);
        for p in [2usize, 3, 4] {
            let psi = random_spd(p, &mut rng);
            let c = smn_halfvec_cov(&psi, &psi, 2.0, None).unwrap();
            let want = duplication_oracle(&psi, 2.0);
            assert_relative_eq!(c.as_matrix(), &want, epsilon = 1e-9);
        }
    }

    #[test]
    fn smn_halfvec_cov_matches_entrywise_formula() {
        let mut rng = StdRng::seed_from_u64(7);
        let psi = random_spd(4, &mut rng);
        let f = 2.0;
        let c = smn_halfvec_cov(&psi, &psi, f, None).unwrap();
        for (a, &(i, j)) in c.coords().iter().enumerate() {
            for (b, &(k, l)) in c.coords().iter().enumerate() {
                let want =
                    f / 2.0 * (psi.get(i, k) * psi.get(j, l) + psi.get(i, l) * psi.get(j, k));
                assert_relative_eq!(c.as_matrix()[(a, b)], want, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn smn_halfvec_cov_relabeling_invariance() {
        let mut rng = StdRng::seed_from_u64(3);
        let p = 4;
        let psi = random_spd(p, &mut rng);
        let perm = [2usize, 0, 3, 1];
        let psi_p =
            SpdMatrix::from_dense(&DMatrix::from_fn(p, p, |i, j| psi.get(perm[i], perm[j])))
                .unwrap();
        let c = smn_halfvec_cov(&psi, &psi, 2.0, None).unwrap();
        let cp = smn_halfvec_cov(&psi_p, &psi_p, 2.0, None).unwrap();
        // Cov(X'_{ij}, X'_{kl}) under relabeled scales equals
        // Cov(X_{perm(i) perm(j)}, X_{perm(k) perm(l)}).
        let full = elimination_matrix(p);
        let index_of = |i: usize, j: usize| {
            let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
            full.coords().iter().position(|&c| c == (hi, lo)).unwrap()
        };
        for (a, &(i, j)) in cp.coords().iter().enumerate() {
            for (b, &(k, l)) in cp.coords().iter().enumerate() {
                let a0 = index_of(perm[i], perm[j]);
                let b0 = index_of(perm[k], perm[l]);
                assert_relative_eq!(
                    cp.as_matrix()[(a, b)],
                    c.as_matrix()[(a0, b0)],
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn smn_halfvec_cov_rejects_noncommuting() {
        let a =
            SpdMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
        let b = SpdMatrix::from_diagonal(&[1.0, 3.0]).unwrap();
        assert!(matches!(
            smn_halfvec_cov(&a, &b, 2.0, None),
            Err(Error::NonCommutingScales { .. })
        ));
    }

    #[test]
    fn norm_values() {
        let id = DMatrix::<f64>::identity(3, 3);
        let n = norms(&id);
        assert_relative_eq!(n.spectral, 1.0, epsilon = 1e-12);
        assert_relative_eq!(n.frobenius, 3.0f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(n.max, 1.0, epsilon = 1e-12);
        assert_relative_eq!(n.inf_inf, 1.0, epsilon = 1e-12);

        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        let n = norms(&a);
        assert_relative_eq!(n.spectral, 2.0, epsilon = 1e-12);
        assert_relative_eq!(n.inf_inf, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn spectral_norm_of_symmetric_equals_max_abs_eigenvalue() {
        let mut rng = StdRng::seed_from_u64(99);
        let a = random_sym(5, &mut rng);
        let eigs = a.as_matrix().clone().symmetric_eigen().eigenvalues;
        let want = eigs.iter().fold(0.0f64, |acc, e| acc.max(e.abs()));
        assert_relative_eq!(spectral_norm(a.as_matrix()), want, epsilon = 1e-10);
    }

    #[test]
    fn cholesky_cases() {
        let id = SpdMatrix::identity(4);
        assert_relative_eq!(
            id.cholesky_lower(),
            DMatrix::identity(4, 4),
            epsilon = 1e-15
        );

        let a =
            SpdMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 2.0])).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]);
        assert_relative_eq!(a.cholesky_lower(), want, epsilon = 1e-14);

        let mut rng = StdRng::seed_from_u64(1);
        let s = random_spd(6, &mut rng);
        let l = s.cholesky_lower();
        let back = &l * l.transpose();
        let rel = norms(&(back - s.as_matrix())).max / norms(s.as_matrix()).max;
        assert!(rel < CHOL_TOL, "reconstruction error {rel}");
    }

    #[test]
    fn cholesky_reports_leading_minor() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match try_cholesky(&a) {
            Err(Error::NotPositiveDefinite { index }) => assert_eq!(index, 2),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn spd_inverse_and_solve() {
        let mut rng = StdRng::seed_from_u64(13);
        let a = random_spd(5, &mut rng);
        let inv = a.inverse();
        let prod = a.as_matrix() * inv.as_matrix();
        assert_relative_eq!(prod, DMatrix::identity(5, 5), epsilon = 1e-10);

        let b = DVector::from_fn(5, |i, _| (i as f64) - 2.0);
        let x = a.solve_vec(&b);
        assert_relative_eq!(a.as_matrix() * x, b, epsilon = 1e-10);
    }
}
