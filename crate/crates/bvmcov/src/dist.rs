//! Samplers and normalized log-densities: multivariate normal data, Wishart,
//! inverse Wishart, symmetric matrix-normal (full and graph-restricted), and
//! the G-Wishart on a decomposable graph with exact junction-tree sampling
//! and a closed-form normalizing constant.
//!
//! Every sampler is a pure function of its parameters and the generator
//! state handed in, so fixed streams reproduce draws bit for bit.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::{junction_tree, membership_pg, JunctionTree, UGraph};
use crate::matcore::{
    graph_elimination_map, smn_halfvec_cov, try_cholesky, vech, EliminationMap, HalfVecCov,
    SpdMatrix, SymMatrix, SYM_TOL,
};

const LN_2PI: f64 = 1.837877066409345483560659472811;
/// Absolute tolerance on off-graph entries before a density evaluates to
/// -infinity.
pub const ZERO_PATTERN_TOL: f64 = 1e-12;

/// log of the multivariate gamma function Gamma_q(a).
pub fn ln_mvgamma(q: usize, a: f64) -> f64 {
    let qf = q as f64;
    qf * (qf - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (0..q).map(|j| ln_gamma(a - j as f64 / 2.0)).sum::<f64>()
}

fn std_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn chi_squared(df: f64, rng: &mut impl Rng) -> f64 {
    Gamma::new(df / 2.0, 2.0)
        .expect("valid chi-squared df")
        .sample(rng)
}

fn trace_prod_sym(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            s += a[(i, j)] * b[(j, i)];
        }
    }
    s
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn spd_inverse_dense(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = try_cholesky(a)?;
    let linv = crate::matcore::invert_lower(&l);
    Ok(linv.transpose() * &linv)
}

// ---------------------------------------------------------------------------
// Multivariate normal data
// ---------------------------------------------------------------------------

/// n i.i.d. rows from N_p(0, sigma).
pub fn mvn_sample(sigma: &SpdMatrix, n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let p = sigma.dim();
    let l = sigma.cholesky_lower();
    let mut y: DMatrix<f64> = DMatrix::zeros(n, p);
    let mut z: DVector<f64> = DVector::zeros(p);
    for r in 0..n {
        for k in 0..p {
            z[k] = std_normal(rng);
        }
        let x = &l * &z;
        for k in 0..p {
            y[(r, k)] = x[k];
        }
    }
    y
}

/// S = (1/n) sum_i Y_i Y_i^T from a data matrix with rows Y_i.
pub fn sample_cov(y: &DMatrix<f64>) -> SymMatrix {
    let n = y.nrows();
    let p = y.ncols();
    let mut s: DMatrix<f64> = DMatrix::zeros(p, p);
    for r in 0..n {
        for i in 0..p {
            let yi = y[(r, i)];
            for j in 0..=i {
                s[(i, j)] += yi * y[(r, j)];
            }
        }
    }
    SymMatrix::from_lower(p, |i, j| s[(i, j)] / n as f64)
}

/// Streaming version: the sample covariance without materializing the data.
pub fn mvn_sample_cov(sigma: &SpdMatrix, n: usize, rng: &mut impl Rng) -> SymMatrix {
    let p = sigma.dim();
    let l = sigma.cholesky_lower();
    let mut s: DMatrix<f64> = DMatrix::zeros(p, p);
    let mut z: DVector<f64> = DVector::zeros(p);
    for _ in 0..n {
        for k in 0..p {
            z[k] = std_normal(rng);
        }
        let x = &l * &z;
        for i in 0..p {
            for j in 0..=i {
                s[(i, j)] += x[i] * x[j];
            }
        }
    }
    SymMatrix::from_lower(p, |i, j| s[(i, j)] / n as f64)
}

// ---------------------------------------------------------------------------
// Wishart and inverse Wishart
// ---------------------------------------------------------------------------

/// Wishart in the textbook (df, scale) convention:
/// density proportional to det(X)^{(df-p-1)/2} exp(-tr(scale^{-1} X)/2),
/// E[X] = df * scale. Sampling needs df > p - 1.
#[derive(Debug, Clone)]
pub struct WishartParams {
    pub df: f64,
    pub scale: SpdMatrix,
}

impl WishartParams {
    pub fn new(df: f64, scale: SpdMatrix) -> Result<Self> {
        if df <= scale.dim() as f64 - 1.0 {
            return Err(Error::InvalidParameter(format!(
                "Wishart df must exceed p - 1 = {}, got {df}",
                scale.dim() - 1
            )));
        }
        Ok(WishartParams { df, scale })
    }
}

/// Bartlett construction: W = (L A)(L A)^T with L the Cholesky factor of the
/// scale, A lower triangular with chi-squared diagonal and standard normal
/// subdiagonal.
pub fn wishart_sample(params: &WishartParams, rng: &mut impl Rng) -> SpdMatrix {
    let l = params.scale.cholesky_lower();
    let w = wishart_sample_with_chol(params.df, &l, rng);
    SpdMatrix::from_dense(&w).expect("Wishart draw is positive definite")
}

/// Bartlett draw given the Cholesky factor of the scale. Returns the dense
/// symmetric matrix.
pub fn wishart_sample_with_chol(df: f64, scale_chol: &DMatrix<f64>, rng: &mut impl Rng) -> DMatrix<f64> {
    let p = scale_chol.nrows();
    let mut a: DMatrix<f64> = DMatrix::zeros(p, p);
    for i in 0..p {
        a[(i, i)] = chi_squared(df - i as f64, rng).sqrt();
        for j in 0..i {
            a[(i, j)] = std_normal(rng);
        }
    }
    let la = scale_chol * a;
    let w = &la * la.transpose();
    DMatrix::from_fn(p, p, |i, j| 0.5 * (w[(i, j)] + w[(j, i)]))
}

/// Fully normalized Wishart log-density; -infinity off the PD cone.
pub fn wishart_logpdf(params: &WishartParams, x: &SymMatrix) -> f64 {
    let p = params.scale.dim() as f64;
    let lx = match try_cholesky(x.as_matrix()) {
        Ok(l) => l,
        Err(_) => return f64::NEG_INFINITY,
    };
    let logdet_x = 2.0 * (0..x.dim()).map(|i| lx[(i, i)].ln()).sum::<f64>();
    let scale_inv = params.scale.inverse();
    let tr = trace_prod_sym(scale_inv.as_matrix(), x.as_matrix());
    let m = params.df;
    (m - p - 1.0) / 2.0 * logdet_x - 0.5 * tr
        - m * p / 2.0 * std::f64::consts::LN_2
        - m / 2.0 * params.scale.log_det()
        - ln_mvgamma(x.dim(), m / 2.0)
}

/// Inverse Wishart with density proportional to
/// det(X)^{-(nu+2p)/2} exp(-tr(psi X^{-1})/2); equivalently X^{-1} is Wishart
/// with df nu + p - 1 and scale psi^{-1}. Requires nu > 0.
pub fn invwishart_sample(nu: f64, psi: &SpdMatrix, rng: &mut impl Rng) -> Result<SpdMatrix> {
    let p = psi.dim() as f64;
    if nu <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "inverse Wishart needs nu > 0, got {nu}"
        )));
    }
    let w = wishart_sample(&WishartParams::new(nu + p - 1.0, psi.inverse())?, rng);
    Ok(w.inverse())
}

/// Fully normalized inverse-Wishart log-density; -infinity off the PD cone.
pub fn invwishart_logpdf(nu: f64, psi: &SpdMatrix, x: &SymMatrix) -> f64 {
    let p = psi.dim() as f64;
    let lx = match try_cholesky(x.as_matrix()) {
        Ok(l) => l,
        Err(_) => return f64::NEG_INFINITY,
    };
    let logdet_x = 2.0 * (0..x.dim()).map(|i| lx[(i, i)].ln()).sum::<f64>();
    // tr(psi X^{-1}) via solves against the Cholesky factor of X.
    let linv = crate::matcore::invert_lower(&lx);
    let xinv = linv.transpose() * &linv;
    let tr = trace_prod_sym(psi.as_matrix(), &xinv);
    let m = nu + p - 1.0;
    -(nu + 2.0 * p) / 2.0 * logdet_x - 0.5 * tr
        - (m * p / 2.0) * std::f64::consts::LN_2
        - ln_mvgamma(x.dim(), m / 2.0)
        + m / 2.0 * psi.log_det()
}

// ---------------------------------------------------------------------------
// Symmetric matrix-normal
// ---------------------------------------------------------------------------

/// Symmetric matrix-normal law: vech(X) is Gaussian with mean vech(M) and
/// the trace-form covariance from `smn_halfvec_cov`.
#[derive(Debug, Clone)]
pub struct SMNParams {
    m: SymMatrix,
    psi1: SpdMatrix,
    factor: f64,
    cov: HalfVecCov,
    cov_chol: DMatrix<f64>,
    logdet_cov: f64,
    mean_vec: DVector<f64>,
    /// Cholesky factor of psi1 when the two scales coincide; enables the
    /// direct symmetric-noise construction.
    equal_scale_chol: Option<DMatrix<f64>>,
}

impl SMNParams {
    pub fn new(m: SymMatrix, psi1: SpdMatrix, psi2: SpdMatrix, factor: f64) -> Result<Self> {
        let cov = smn_halfvec_cov(&psi1, &psi2, factor, None)?;
        if m.dim() != psi1.dim() {
            return Err(Error::DimensionMismatch {
                expected: psi1.dim(),
                got: m.dim(),
            });
        }
        let cov_chol = cov.cholesky_lower()?;
        let logdet_cov = 2.0 * (0..cov.size()).map(|i| cov_chol[(i, i)].ln()).sum::<f64>();
        let mean_vec = vech(&m).as_vector().clone();
        let scale_dev = (psi1.as_matrix() - psi2.as_matrix())
            .iter()
            .fold(0.0f64, |a, x| a.max(x.abs()));
        let scale_mag = psi1
            .as_matrix()
            .iter()
            .fold(0.0f64, |a, x| a.max(x.abs()))
            .max(1.0);
        let equal_scale_chol = if scale_dev <= SYM_TOL * scale_mag {
            Some(psi1.cholesky_lower())
        } else {
            None
        };
        Ok(SMNParams {
            m,
            psi1,
            factor,
            cov,
            cov_chol,
            logdet_cov,
            mean_vec,
            equal_scale_chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.dim()
    }

    pub fn mean(&self) -> &SymMatrix {
        &self.m
    }

    pub fn cov(&self) -> &HalfVecCov {
        &self.cov
    }

    pub fn psi1(&self) -> &SpdMatrix {
        &self.psi1
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }
}

/// Draw one symmetric matrix. With equal scales this is
/// M + sqrt(factor/2) A Z A^T for A A^T = psi and Z symmetric with N(0,2)
/// diagonal and N(0,1) off-diagonal entries; otherwise the draw goes through
/// the Cholesky factor of the half-vectorization covariance.
pub fn smn_sample(params: &SMNParams, rng: &mut impl Rng) -> SymMatrix {
    let p = params.dim();
    if let Some(a) = &params.equal_scale_chol {
        let z = SymMatrix::from_lower(p, |i, j| {
            let g: f64 = std_normal(rng);
            if i == j {
                g * std::f64::consts::SQRT_2
            } else {
                g
            }
        });
        let scaled = a * z.as_matrix() * a.transpose() * (params.factor / 2.0).sqrt();
        SymMatrix::from_lower(p, |i, j| params.m.get(i, j) + 0.5 * (scaled[(i, j)] + scaled[(j, i)]))
    } else {
        let k = params.cov.size();
        let mut z: DVector<f64> = DVector::zeros(k);
        for i in 0..k {
            z[i] = std_normal(rng);
        }
        let v = &params.mean_vec + &params.cov_chol * z;
        crate::matcore::vech_inverse(v.as_slice()).expect("triangular length by construction")
    }
}

/// Normalized log-density of the half-vectorization Gaussian.
pub fn smn_logpdf(params: &SMNParams, x: &SymMatrix) -> f64 {
    let d = vech(x).as_vector() - &params.mean_vec;
    let z = crate::matcore::forward_solve(&params.cov_chol, &d);
    let k = params.cov.size() as f64;
    -0.5 * z.norm_squared() - 0.5 * k * LN_2PI - 0.5 * params.logdet_cov
}

// ---------------------------------------------------------------------------
// Sparse symmetric matrix-normal
// ---------------------------------------------------------------------------

/// Graph-restricted symmetric matrix-normal: the free coordinates (diagonal
/// plus edges of a decomposable graph) are Gaussian; off-graph entries are
/// exactly zero.
#[derive(Debug, Clone)]
pub struct SSMNParams {
    graph: UGraph,
    m: SymMatrix,
    cov: HalfVecCov,
    map: EliminationMap,
    cov_chol: DMatrix<f64>,
    logdet_cov: f64,
    mean_vec: DVector<f64>,
}

impl SSMNParams {
    pub fn new(
        graph: UGraph,
        m: SymMatrix,
        psi1: SpdMatrix,
        psi2: SpdMatrix,
        factor: f64,
    ) -> Result<Self> {
        if !crate::graph::mcs_decomposable(&graph).0 {
            return Err(Error::NotDecomposable);
        }
        let p = graph.vertex_count();
        if m.dim() != p || psi1.dim() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: m.dim(),
            });
        }
        for i in 0..p {
            for j in 0..i {
                if !graph.has_edge(i, j) && m.get(i, j).abs() > ZERO_PATTERN_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "mean matrix violates the zero pattern at ({i}, {j})"
                    )));
                }
            }
        }
        let cov = smn_halfvec_cov(&psi1, &psi2, factor, Some(&graph))?;
        let map = graph_elimination_map(&graph);
        let cov_chol = cov.cholesky_lower()?;
        let logdet_cov = 2.0 * (0..cov.size()).map(|i| cov_chol[(i, i)].ln()).sum::<f64>();
        let mean_vec = map.apply_sym(&m)?;
        Ok(SSMNParams {
            graph,
            m,
            cov,
            map,
            cov_chol,
            logdet_cov,
            mean_vec,
        })
    }

    pub fn graph(&self) -> &UGraph {
        &self.graph
    }

    pub fn mean(&self) -> &SymMatrix {
        &self.m
    }

    pub fn cov(&self) -> &HalfVecCov {
        &self.cov
    }

    pub fn map(&self) -> &EliminationMap {
        &self.map
    }

    pub fn free_count(&self) -> usize {
        self.cov.size()
    }
}

pub fn ssmn_sample(params: &SSMNParams, rng: &mut impl Rng) -> SymMatrix {
    let k = params.cov.size();
    let mut z: DVector<f64> = DVector::zeros(k);
    for i in 0..k {
        z[i] = std_normal(rng);
    }
    let v = &params.mean_vec + &params.cov_chol * z;
    params.map.scatter(&v).expect("coordinate count matches")
}

/// Normalized log-density on the free coordinates; -infinity if the zero
/// pattern is violated beyond `ZERO_PATTERN_TOL`.
pub fn ssmn_logpdf(params: &SSMNParams, x: &SymMatrix) -> f64 {
    let p = params.graph.vertex_count();
    for i in 0..p {
        for j in 0..i {
            if !params.graph.has_edge(i, j) && x.get(i, j).abs() > ZERO_PATTERN_TOL {
                return f64::NEG_INFINITY;
            }
        }
    }
    let free = params.map.apply_sym(x).expect("dimension checked");
    let d = free - &params.mean_vec;
    let z = crate::matcore::forward_solve(&params.cov_chol, &d);
    let k = params.cov.size() as f64;
    -0.5 * z.norm_squared() - 0.5 * k * LN_2PI - 0.5 * params.logdet_cov
}

// ---------------------------------------------------------------------------
// G-Wishart on a decomposable graph
// ---------------------------------------------------------------------------

/// G-Wishart with density proportional to
/// det(Omega)^{beta/2} exp(-tr(psi Omega)/2) on P_G, beta > 0, G decomposable.
#[derive(Debug, Clone)]
pub struct GWishartParams {
    graph: UGraph,
    beta: f64,
    psi: SpdMatrix,
    jt: JunctionTree,
    lognorm: f64,
    first: FirstCliquePrep,
    later: Vec<LaterCliquePrep>,
}

#[derive(Debug, Clone)]
struct FirstCliquePrep {
    verts: Vec<usize>,
    df: f64,
    scale_chol: DMatrix<f64>,
}

#[derive(Debug, Clone)]
struct LaterCliquePrep {
    sep: Vec<usize>,
    res: Vec<usize>,
    df: f64,
    u_scale_chol: DMatrix<f64>,
    b_mean: DMatrix<f64>,
    col_chol: DMatrix<f64>,
}

impl GWishartParams {
    pub fn new(graph: UGraph, beta: f64, psi: SpdMatrix) -> Result<Self> {
        if beta <= 0.0 || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "G-Wishart needs beta > 0, got {beta}"
            )));
        }
        if psi.dim() != graph.vertex_count() {
            return Err(Error::DimensionMismatch {
                expected: graph.vertex_count(),
                got: psi.dim(),
            });
        }
        let jt = junction_tree(&graph)?;
        let lognorm = lognorm_from_tree(&jt, beta, &psi)?;

        let pm = psi.as_matrix();
        let c1 = &jt.cliques[0];
        let q1 = c1.len();
        let psi_c1 = submatrix(pm, c1, c1);
        let first = FirstCliquePrep {
            verts: c1.clone(),
            df: beta + q1 as f64 + 1.0,
            scale_chol: try_cholesky(&spd_inverse_dense(&psi_c1)?)?,
        };

        let mut later = Vec::with_capacity(jt.cliques.len().saturating_sub(1));
        for (k, c) in jt.cliques.iter().enumerate().skip(1) {
            let sep = jt.separators[k - 1].clone();
            let res: Vec<usize> = c.iter().copied().filter(|v| !sep.contains(v)).collect();
            let (r, s) = (res.len(), sep.len());
            let d_rr = submatrix(pm, &res, &res);
            if s == 0 {
                later.push(LaterCliquePrep {
                    sep,
                    res,
                    df: beta + r as f64 + 1.0,
                    u_scale_chol: try_cholesky(&spd_inverse_dense(&d_rr)?)?,
                    b_mean: DMatrix::zeros(r, 0),
                    col_chol: DMatrix::zeros(0, 0),
                });
                continue;
            }
            let d_ss = submatrix(pm, &sep, &sep);
            let d_rs = submatrix(pm, &res, &sep);
            let d_ss_inv = spd_inverse_dense(&d_ss)?;
            let b_mean = &d_rs * &d_ss_inv;
            let d_res_given_sep = &d_rr - &b_mean * d_rs.transpose();
            later.push(LaterCliquePrep {
                sep,
                res,
                df: beta + (s + r) as f64 + 1.0,
                u_scale_chol: try_cholesky(&spd_inverse_dense(&d_res_given_sep)?)?,
                b_mean,
                col_chol: try_cholesky(&d_ss_inv)?,
            });
        }

        Ok(GWishartParams {
            graph,
            beta,
            psi,
            jt,
            lognorm,
            first,
            later,
        })
    }

    pub fn graph(&self) -> &UGraph {
        &self.graph
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn psi(&self) -> &SpdMatrix {
        &self.psi
    }

    pub fn junction(&self) -> &JunctionTree {
        &self.jt
    }

    /// log of the integral of the unnormalized density over P_G.
    pub fn lognorm(&self) -> f64 {
        self.lognorm
    }
}

/// Clique/separator term: log integral over the complete case on a vertex
/// set A with |A| = q.
fn log_j_term(beta: f64, psi_a: &DMatrix<f64>) -> Result<f64> {
    let q = psi_a.nrows();
    if q == 0 {
        return Ok(0.0);
    }
    let l = try_cholesky(psi_a)?;
    let logdet = 2.0 * (0..q).map(|i| l[(i, i)].ln()).sum::<f64>();
    let a = beta + q as f64 + 1.0;
    Ok(a * q as f64 / 2.0 * std::f64::consts::LN_2 + ln_mvgamma(q, a / 2.0) - a / 2.0 * logdet)
}

fn lognorm_from_tree(jt: &JunctionTree, beta: f64, psi: &SpdMatrix) -> Result<f64> {
    let pm = psi.as_matrix();
    let mut total = 0.0;
    for c in &jt.cliques {
        total += log_j_term(beta, &submatrix(pm, c, c))?;
    }
    for s in &jt.separators {
        total -= log_j_term(beta, &submatrix(pm, s, s))?;
    }
    Ok(total)
}

/// Normalizing constant without building a sampler.
pub fn gwishart_lognorm(graph: &UGraph, beta: f64, psi: &SpdMatrix) -> Result<f64> {
    if beta <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "G-Wishart needs beta > 0, got {beta}"
        )));
    }
    let jt = junction_tree(graph)?;
    lognorm_from_tree(&jt, beta, psi)
}

/// Exact draw from the G-Wishart: clique marginals of Sigma = Omega^{-1} are
/// inverse Wishart, combined consistently along the junction tree, then
/// completed to Omega in P_G through the clique/separator inverse sums.
pub fn gwishart_sample(params: &GWishartParams, rng: &mut impl Rng) -> SpdMatrix {
    let p = params.graph.vertex_count();
    let mut sigma: DMatrix<f64> = DMatrix::zeros(p, p);

    // First clique: Sigma_C = W^{-1}.
    let w = wishart_sample_with_chol(params.first.df, &params.first.scale_chol, rng);
    let s1 = spd_inverse_dense(&w).expect("Wishart draw is invertible");
    for (a, &i) in params.first.verts.iter().enumerate() {
        for (b, &j) in params.first.verts.iter().enumerate() {
            sigma[(i, j)] = s1[(a, b)];
        }
    }

    for prep in &params.later {
        let (r, s) = (prep.res.len(), prep.sep.len());
        let w_u = wishart_sample_with_chol(prep.df, &prep.u_scale_chol, rng);
        let u = spd_inverse_dense(&w_u).expect("Wishart draw is invertible");
        if s == 0 {
            for (a, &i) in prep.res.iter().enumerate() {
                for (b, &j) in prep.res.iter().enumerate() {
                    sigma[(i, j)] = u[(a, b)];
                }
            }
            continue;
        }
        let sigma_ss = submatrix(&sigma, &prep.sep, &prep.sep);
        let u_chol = try_cholesky(&u).expect("conditional covariance is PD");
        let mut z: DMatrix<f64> = DMatrix::zeros(r, s);
        for i in 0..r {
            for j in 0..s {
                z[(i, j)] = std_normal(rng);
            }
        }
        let b = &prep.b_mean + u_chol * z * prep.col_chol.transpose();
        let rs = &b * &sigma_ss;
        let rr = &u + &rs * b.transpose();
        for (a, &i) in prep.res.iter().enumerate() {
            for (bb, &j) in prep.sep.iter().enumerate() {
                sigma[(i, j)] = rs[(a, bb)];
                sigma[(j, i)] = rs[(a, bb)];
            }
            for (bb, &j) in prep.res.iter().enumerate() {
                sigma[(i, j)] = 0.5 * (rr[(a, bb)] + rr[(bb, a)]);
            }
        }
    }

    // Completion: Omega = sum_C pad((Sigma_C)^{-1}) - sum_S pad((Sigma_S)^{-1}).
    let omega = complete_from_clique_marginals(&sigma, &params.jt);
    SpdMatrix::from_dense(&omega).expect("completed matrix is positive definite")
}

/// The decomposable completion formula shared with the constrained MLE.
pub(crate) fn complete_from_clique_marginals(sigma: &DMatrix<f64>, jt: &JunctionTree) -> DMatrix<f64> {
    let p = sigma.nrows();
    let mut omega: DMatrix<f64> = DMatrix::zeros(p, p);
    for c in &jt.cliques {
        let inv = spd_inverse_dense(&submatrix(sigma, c, c)).expect("clique block is PD");
        for (a, &i) in c.iter().enumerate() {
            for (b, &j) in c.iter().enumerate() {
                omega[(i, j)] += inv[(a, b)];
            }
        }
    }
    for sset in &jt.separators {
        if sset.is_empty() {
            continue;
        }
        let inv = spd_inverse_dense(&submatrix(sigma, sset, sset)).expect("separator block is PD");
        for (a, &i) in sset.iter().enumerate() {
            for (b, &j) in sset.iter().enumerate() {
                omega[(i, j)] -= inv[(a, b)];
            }
        }
    }
    DMatrix::from_fn(p, p, |i, j| 0.5 * (omega[(i, j)] + omega[(j, i)]))
}

/// Normalized log-density on the free coordinates of P_G; -infinity outside.
pub fn gwishart_logpdf(params: &GWishartParams, omega: &SymMatrix) -> f64 {
    let tol = ZERO_PATTERN_TOL
        * (1.0 + omega.as_matrix().iter().fold(0.0f64, |a, x| a.max(x.abs())));
    if !membership_pg(omega, &params.graph, tol) {
        return f64::NEG_INFINITY;
    }
    let l = match try_cholesky(omega.as_matrix()) {
        Ok(l) => l,
        Err(_) => return f64::NEG_INFINITY,
    };
    let logdet = 2.0 * (0..omega.dim()).map(|i| l[(i, i)].ln()).sum::<f64>();
    let tr = trace_prod_sym(params.psi.as_matrix(), omega.as_matrix());
    params.beta / 2.0 * logdet - 0.5 * tr - params.lognorm
}
