//! Built-in smoke checks over the hand-checkable identities of every module.
//! Each check is tiny and deterministic; the CLI prints one line per check.

use nalgebra::DMatrix;

use crate::dist::{
    gwishart_lognorm, ln_mvgamma, smn_logpdf, ssmn_sample, SMNParams, SSMNParams,
};
use crate::div::tv_exact_mc;
use crate::graph::{band, enumerate_decomposable, membership_pg, star, UGraph};
use crate::matcore::{
    cholesky, elimination_matrix, graph_elimination_map, norms, vech, vech_inverse, SpdMatrix,
    SymMatrix,
};
use crate::post::{center, gwishart_posterior, iw_posterior, mle_graph_auto, CenterTag};
use crate::prior::log_graph_prior;
use crate::rng::RngStream;

pub struct SelftestOutcome {
    pub name: &'static str,
    pub result: Result<(), String>,
}

fn check(cond: bool, msg: &str) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Run every built-in check; the CLI exits zero only when all pass.
pub fn selftest() -> Vec<SelftestOutcome> {
    let mut out: Vec<SelftestOutcome> = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn() -> Result<(), String>| {
        out.push(SelftestOutcome { name, result: f() });
    };

    run("vech reads the lower triangle column-wise", &|| {
        let a = SymMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0]))
            .map_err(|e| e.to_string())?;
        check(vech(&a).as_vector().as_slice() == [1.0, 2.0, 3.0], "2x2 read-off")?;
        check(
            vech(&SymMatrix::identity(3)).as_vector().as_slice()
                == [1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
            "identity 3x3",
        )
    });

    run("vech_inverse round-trips and rejects bad lengths", &|| {
        let a = vech_inverse(&[1.0, 2.0, 3.0]).map_err(|e| e.to_string())?;
        check(a.get(0, 1) == 2.0 && a.get(1, 1) == 3.0, "rebuild 2x2")?;
        let z = vech_inverse(&[0.0; 6]).map_err(|e| e.to_string())?;
        check(z.as_matrix() == &DMatrix::zeros(3, 3), "zero vector to zero matrix")?;
        check(vech_inverse(&[1.0; 4]).is_err(), "length 4 rejected")
    });

    run("elimination matrix places ones per the position formula", &|| {
        let map = elimination_matrix(2);
        check(map.coords()[1] == (1, 0) && map.col_of_row(1) == 1, "(2,1) at row 2, col 2")?;
        check(map.coords()[2] == (1, 1) && map.col_of_row(2) == 3, "(2,2) at row 3, col 4")
    });

    run("graph elimination map selects diagonal and edges", &|| {
        let empty = UGraph::empty(3);
        let map = graph_elimination_map(&empty);
        let cols: Vec<usize> = (0..3).map(|r| map.col_of_row(r) + 1).collect();
        check(cols == [1, 5, 9], "empty graph selects vec positions 1,5,9")?;
        check(
            graph_elimination_map(&UGraph::complete(3)) == elimination_matrix(3),
            "complete graph equals the full map",
        )
    });

    run("cholesky hand cases", &|| {
        let id = SpdMatrix::identity(3);
        check(cholesky(&id) == DMatrix::identity(3, 3), "identity factor")?;
        let a = SpdMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 2.0]))
            .map_err(|e| e.to_string())?;
        let l = cholesky(&a);
        check(
            close(l[(0, 0)], 2.0, 1e-14) && close(l[(1, 0)], 1.0, 1e-14) && close(l[(1, 1)], 1.0, 1e-14),
            "2x2 factor",
        )
    });

    run("norms on identity and a rank-one matrix", &|| {
        let n = norms(&DMatrix::identity(3, 3));
        check(
            close(n.spectral, 1.0, 1e-12)
                && close(n.frobenius, 3.0f64.sqrt(), 1e-12)
                && close(n.inf_inf, 1.0, 1e-12),
            "identity norms",
        )?;
        let n = norms(&DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]));
        check(close(n.spectral, 2.0, 1e-12) && close(n.inf_inf, 2.0, 1e-12), "rank one")
    });

    run("scalar matrix-normal density matches N(0, 2 s^2)", &|| {
        let s = 1.3;
        let params = SMNParams::new(
            SymMatrix::zeros(1),
            SpdMatrix::from_diagonal(&[s]).map_err(|e| e.to_string())?,
            SpdMatrix::from_diagonal(&[s]).map_err(|e| e.to_string())?,
            2.0,
        )
        .map_err(|e| e.to_string())?;
        let var = 2.0 * s * s;
        let x = vech_inverse(&[0.4]).map_err(|e| e.to_string())?;
        let want = -0.5 * 0.4 * 0.4 / var
            - 0.5 * ((2.0 * std::f64::consts::PI).ln() + var.ln());
        check(close(smn_logpdf(&params, &x), want, 1e-12), "density value")
    });

    run("graph generators", &|| {
        check(star(3).edges() == [(0, 1), (0, 2)], "star(3) edge set")?;
        check(band(4, 1).edges() == [(0, 1), (1, 2), (2, 3)], "band(4,1) is the path")
    });

    run("decomposable enumeration counts at p = 2 and 3", &|| {
        check(enumerate_decomposable(2).map_err(|e| e.to_string())?.len() == 2, "p=2")?;
        check(enumerate_decomposable(3).map_err(|e| e.to_string())?.len() == 8, "p=3")
    });

    run("membership in P_G", &|| {
        check(membership_pg(&SymMatrix::identity(4), &UGraph::empty(4), 1e-10), "identity")?;
        let dense = SymMatrix::from_lower(3, |i, j| if i == j { 2.0 } else { 0.5 });
        check(!membership_pg(&dense, &UGraph::empty(3), 1e-8), "dense matrix rejected")
    });

    run("constrained MLE on complete and empty graphs", &|| {
        let s = SpdMatrix::from_dense(&DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 0.5, 0.2, 0.5, 1.5, 0.3, 0.2, 0.3, 1.0],
        ))
        .map_err(|e| e.to_string())?;
        let complete = mle_graph_auto(&UGraph::complete(3), s.as_sym()).map_err(|e| e.to_string())?;
        let inv = s.inverse();
        check(
            (0..3).all(|i| (0..3).all(|j| close(complete.estimate.get(i, j), inv.get(i, j), 1e-10))),
            "complete graph gives the inverse",
        )?;
        let empty = mle_graph_auto(&UGraph::empty(3), s.as_sym()).map_err(|e| e.to_string())?;
        check(
            (0..3).all(|i| close(empty.estimate.get(i, i), 1.0 / s.get(i, i), 1e-12))
                && empty.estimate.get(1, 0) == 0.0,
            "empty graph inverts the diagonal",
        )
    });

    run("conjugate updates", &|| {
        let s2 = vech_inverse(&[2.0]).map_err(|e| e.to_string())?;
        let post = iw_posterior(
            1.0,
            &SpdMatrix::from_diagonal(&[1.0]).map_err(|e| e.to_string())?,
            10,
            &s2,
        )
        .map_err(|e| e.to_string())?;
        check(close(post.shape_name(), 11.0, 1e-14) && close(post.psi().get(0, 0), 21.0, 1e-14), "scalar pair (11, 21)")?;
        let prior_back = iw_posterior(3.0, &SpdMatrix::identity(2), 0, &SymMatrix::zeros(2))
            .map_err(|e| e.to_string())?;
        check(prior_back.nu() == 3.0, "no data returns the prior")?;
        let g = star(3);
        let gp = gwishart_posterior(&g, 3.0, &SpdMatrix::identity(3), 0, &SymMatrix::zeros(3))
            .map_err(|e| e.to_string())?;
        check(gp.beta() == 3.0, "graph posterior with no data returns the prior")
    });

    run("G-Wishart normalizer on complete and empty graphs", &|| {
        let p = 3usize;
        let beta = 2.5;
        let psi = SpdMatrix::identity(p);
        let complete = gwishart_lognorm(&UGraph::complete(p), beta, &psi).map_err(|e| e.to_string())?;
        let m = beta + p as f64 + 1.0;
        let want = m * p as f64 / 2.0 * std::f64::consts::LN_2 + ln_mvgamma(p, m / 2.0);
        check(close(complete, want, 1e-12), "complete graph matches the Wishart normalizer")?;
        let empty = gwishart_lognorm(&UGraph::empty(2), beta, &SpdMatrix::identity(2))
            .map_err(|e| e.to_string())?;
        let a = beta / 2.0 + 1.0;
        let per = statrs::function::gamma::ln_gamma(a) + a * std::f64::consts::LN_2;
        check(close(empty, 2.0 * per, 1e-12), "empty graph is a product of gamma terms")
    });

    run("restricted matrix-normal keeps the zero pattern", &|| {
        let params = SSMNParams::new(
            star(3),
            SymMatrix::zeros(3),
            SpdMatrix::identity(3),
            SpdMatrix::identity(3),
            2.0,
        )
        .map_err(|e| e.to_string())?;
        let x = ssmn_sample(&params, &mut RngStream::new(1, 1).rng());
        check(x.get(2, 1) == 0.0, "off-graph entry is exactly zero")
    });

    run("total variation of identical densities is zero", &|| {
        let xs: Vec<f64> = (0..2000).map(|k| (k as f64) / 100.0 - 10.0).collect();
        let est = tv_exact_mc(|_x: &f64| -1.0, |_x: &f64| -1.0, &xs).map_err(|e| e.to_string())?;
        check(est.value == 0.0, "estimator returns zero")
    });

    run("graph prior arithmetic", &|| {
        check(log_graph_prior(&UGraph::empty(4), 1.0, 6) == 0.0, "empty graph mass is the constant")?;
        let cyc = UGraph::new(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).map_err(|e| e.to_string())?;
        check(
            log_graph_prior(&cyc, 1.0, 6) == f64::NEG_INFINITY,
            "non-decomposable graphs carry no mass",
        )
    });

    run("centering transform", &|| {
        let anchor = SymMatrix::identity(2);
        let z = center(&[anchor.clone()], &anchor, 49, CenterTag::T1).map_err(|e| e.to_string())?;
        check(z[0].as_matrix() == SymMatrix::zeros(2).as_matrix(), "anchor maps to zero")?;
        let x = SymMatrix::from_lower(2, |i, j| if i == j { 2.0 } else { 0.5 });
        let t = center(&[x.clone()], &anchor, 49, CenterTag::T1).map_err(|e| e.to_string())?;
        let back = t[0].axpy(1.0 / 7.0, &anchor, 1.0);
        check(
            (0..2).all(|i| (0..2).all(|j| close(back.get(i, j), x.get(i, j), 1e-12))),
            "round trip",
        )
    });

    run("samplers reproduce per stream", &|| {
        let params = crate::dist::GWishartParams::new(star(4), 2.0, SpdMatrix::identity(4))
            .map_err(|e| e.to_string())?;
        let a = crate::dist::gwishart_sample(&params, &mut RngStream::new(3, 3).rng());
        let b = crate::dist::gwishart_sample(&params, &mut RngStream::new(3, 3).rng());
        check(a.as_matrix() == b.as_matrix(), "same stream, same draw")
    });

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_selftests_pass() {
        for t in selftest() {
            if let Err(e) = &t.result {
                panic!("selftest {:?} failed: {e}", t.name);
            }
        }
    }
}
