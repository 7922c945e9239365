//! True covariance/precision generators for the simulation scenarios.

use nalgebra::DMatrix;

use crate::bench::config::{ExperimentConfig, MatrixIs, TruthGenerator};
use crate::error::{Error, Result};
use crate::matcore::SpdMatrix;

/// AR(1) covariance: entries rho^{|i-j|}.
pub fn ar1(p: usize, rho: f64) -> Result<SpdMatrix> {
    if rho.abs() >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "ar1 needs |rho| < 1, got {rho}"
        )));
    }
    SpdMatrix::from_dense(&DMatrix::from_fn(p, p, |i, j| {
        rho.powi((i as i32 - j as i32).abs())
    }))
}

/// Banded precision: unit diagonal, rho^{|i-j|} within the band.
pub fn banded_precision(p: usize, bandwidth: usize, rho: f64) -> Result<SpdMatrix> {
    SpdMatrix::from_dense(&DMatrix::from_fn(p, p, |i, j| {
        let d = (i as i32 - j as i32).unsigned_abs() as usize;
        if d == 0 {
            1.0
        } else if d <= bandwidth {
            rho.powi(d as i32)
        } else {
            0.0
        }
    }))
}

/// Star precision: unit diagonal with weight `hub` between vertex 0 and the
/// leaves. Positive definite for hub^2 (p-1) < 1.
pub fn star_precision(p: usize, hub: f64) -> Result<SpdMatrix> {
    SpdMatrix::from_dense(&DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else if i == 0 || j == 0 {
            hub
        } else {
            0.0
        }
    }))
}

/// Truth at a grid point as (covariance, precision).
pub fn build_truth(cfg: &ExperimentConfig, p: usize) -> Result<(SpdMatrix, SpdMatrix)> {
    let (sigma, omega) = match cfg.truth.generator {
        TruthGenerator::Ar1 => {
            let sigma = ar1(p, cfg.truth.rho)?;
            let omega = sigma.inverse();
            (sigma, omega)
        }
        TruthGenerator::BandedPrecision => {
            let omega = banded_precision(p, cfg.truth.bandwidth, cfg.truth.rho)?;
            let sigma = omega.inverse();
            (sigma, omega)
        }
        TruthGenerator::StarPrecision => {
            let omega = star_precision(p, cfg.truth.hub)?;
            let sigma = omega.inverse();
            (sigma, omega)
        }
        TruthGenerator::Custom => {
            let file = cfg.truth.file.as_ref().ok_or_else(|| Error::Config {
                location: "[truth] file".into(),
                msg: "custom truth needs a file".into(),
            })?;
            let m = read_dense_csv(std::path::Path::new(file))?;
            if m.nrows() != p {
                return Err(Error::Config {
                    location: "[truth] file".into(),
                    msg: format!("matrix is {}x{}, grid wants p={p}", m.nrows(), m.ncols()),
                });
            }
            let spd = SpdMatrix::from_dense(&m)?;
            match cfg.truth.matrix_is {
                MatrixIs::Covariance => {
                    let omega = spd.inverse();
                    (spd, omega)
                }
                MatrixIs::Precision => {
                    let sigma = spd.inverse();
                    (sigma, spd)
                }
            }
        }
    };
    Ok((sigma, omega))
}

/// Dense numeric CSV (no header), one matrix row per line.
pub fn read_dense_csv(path: &std::path::Path) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config {
                location: format!("{}:{}", path.display(), k + 1),
                msg: e.to_string(),
            })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Config {
                    location: format!("{}:{}", path.display(), k + 1),
                    msg: "ragged rows".into(),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Config {
            location: path.display().to_string(),
            msg: "empty matrix file".into(),
        });
    }
    let (r, c) = (rows.len(), rows[0].len());
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{band, membership_pg, star};
    use approx::assert_relative_eq;

    #[test]
    fn ar1_shape() {
        let s = ar1(3, 0.5).unwrap();
        assert_relative_eq!(s.get(0, 1), 0.5);
        assert_relative_eq!(s.get(0, 2), 0.25);
        assert_relative_eq!(s.get(1, 1), 1.0);
    }

    #[test]
    fn banded_precision_matches_band_graph() {
        let om = banded_precision(6, 1, 0.4).unwrap();
        assert!(membership_pg(om.as_sym(), &band(6, 1), 0.0));
    }

    #[test]
    fn star_precision_matches_star_graph() {
        let om = star_precision(5, 0.3).unwrap();
        assert!(membership_pg(om.as_sym(), &star(5), 0.0));
    }
}
