//! Monte Carlo divergence estimators: one-sided total variation from exact
//! samples of f, the power-integral family (Hellinger, alpha-divergence,
//! Renyi), a sliced total-variation lower bound for targets with Gaussian
//! free coordinates, and the inequality audit tying them together.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// How an estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivMethod {
    ExactMc,
    Sliced,
    Quadrature,
}

impl DivMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            DivMethod::ExactMc => "exact-mc",
            DivMethod::Sliced => "sliced",
            DivMethod::Quadrature => "quadrature",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DivergenceEstimate {
    pub value: f64,
    pub mc_stderr: f64,
    pub method: DivMethod,
    pub sample_size: usize,
    /// Sliced estimates only bound the full total variation from below.
    pub lower_bound: bool,
    /// Set when the estimator's own reliability check fired (heavy tails).
    pub flagged: bool,
}

/// Fraction of samples allowed to produce a non-finite log-ratio before the
/// total-variation estimator refuses to answer.
const MAX_BAD_RATIO_FRACTION: f64 = 0.001;

/// One-sided total variation estimate from exact samples of f:
/// TV = E_f (1 - g/f)_+ . Both densities must be normalized. A log-ratio of
/// -infinity is a legitimate support gap and contributes one; NaN counts as
/// a failure.
pub fn tv_exact_mc<T>(
    logf: impl Fn(&T) -> f64,
    logg: impl Fn(&T) -> f64,
    samples: &[T],
) -> Result<DivergenceEstimate> {
    if samples.is_empty() {
        return Err(Error::UnreliableEstimate("no samples".into()));
    }
    let mut bad = 0usize;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let n = samples.len();
    for x in samples {
        let lf = logf(x);
        let lg = logg(x);
        let ratio = lg - lf;
        let term = if ratio.is_nan() || !lf.is_finite() {
            bad += 1;
            0.0
        } else {
            (1.0 - ratio.exp()).max(0.0)
        };
        sum += term;
        sumsq += term * term;
    }
    if (bad as f64) > MAX_BAD_RATIO_FRACTION * n as f64 {
        return Err(Error::UnreliableEstimate(format!(
            "{bad} of {n} samples had a non-finite log-ratio"
        )));
    }
    let mean = sum / n as f64;
    let var = (sumsq / n as f64 - mean * mean).max(0.0);
    Ok(DivergenceEstimate {
        value: mean,
        mc_stderr: (var / n as f64).sqrt(),
        method: DivMethod::ExactMc,
        sample_size: n,
        lower_bound: false,
        flagged: false,
    })
}

/// Monte Carlo estimate of the power integral B = int f^alpha g^{1-alpha}
/// as E_f (g/f)^{1-alpha}, with its standard error.
fn power_integral<T>(
    logf: &dyn Fn(&T) -> f64,
    logg: &dyn Fn(&T) -> f64,
    samples: &[T],
    alpha: f64,
) -> Result<(f64, f64)> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    if samples.is_empty() {
        return Err(Error::UnreliableEstimate("no samples".into()));
    }
    let n = samples.len();
    let mut bad = 0usize;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for x in samples {
        let ratio = logg(x) - logf(x);
        let term = if ratio.is_nan() {
            bad += 1;
            0.0
        } else {
            ((1.0 - alpha) * ratio).exp()
        };
        sum += term;
        sumsq += term * term;
    }
    if (bad as f64) > MAX_BAD_RATIO_FRACTION * n as f64 {
        return Err(Error::UnreliableEstimate(format!(
            "{bad} of {n} samples had a non-finite log-ratio"
        )));
    }
    let mean = sum / n as f64;
    let var = (sumsq / n as f64 - mean * mean).max(0.0);
    Ok((mean, (var / n as f64).sqrt()))
}

/// The family of estimates derived from one power integral at a fixed alpha.
/// The identity renyi = log(1 - alpha(1-alpha) d_alpha) / (alpha - 1) holds
/// exactly by construction.
#[derive(Debug, Clone, Copy)]
pub struct AlphaDivergences {
    pub alpha: f64,
    /// int f^alpha g^{1-alpha}
    pub power_integral: DivergenceEstimate,
    pub d_alpha: DivergenceEstimate,
    pub renyi: DivergenceEstimate,
    /// Squared Hellinger distance int (sqrt f - sqrt g)^2; only populated at
    /// alpha = 1/2 where it equals d_alpha / 2.
    pub hellinger_sq: Option<DivergenceEstimate>,
}

pub fn alpha_divergences_mc<T>(
    logf: impl Fn(&T) -> f64,
    logg: impl Fn(&T) -> f64,
    samples: &[T],
    alpha: f64,
) -> Result<AlphaDivergences> {
    let (b, se_b) = power_integral(&logf, &logg, samples, alpha)?;
    let n = samples.len();
    let flagged = b > 0.0 && se_b / b > 0.25;
    let mk = |value: f64, se: f64| DivergenceEstimate {
        value,
        mc_stderr: se,
        method: DivMethod::ExactMc,
        sample_size: n,
        lower_bound: false,
        flagged,
    };
    let aa = alpha * (1.0 - alpha);
    let d_alpha = (1.0 - b) / aa;
    let renyi = (1.0 - aa * d_alpha).max(1e-300).ln() / (alpha - 1.0);
    let hellinger_sq = if (alpha - 0.5).abs() < 1e-12 {
        Some(mk(d_alpha / 2.0, se_b / aa / 2.0))
    } else {
        None
    };
    Ok(AlphaDivergences {
        alpha,
        power_integral: mk(b, se_b),
        d_alpha: mk(d_alpha, se_b / aa),
        renyi: mk(renyi, se_b / ((1.0 - alpha) * b.max(1e-300))),
        hellinger_sq,
    })
}

/// Squared Hellinger distance via the alpha = 1/2 power integral.
pub fn hellinger_sq_mc<T>(
    logf: impl Fn(&T) -> f64,
    logg: impl Fn(&T) -> f64,
    samples: &[T],
) -> Result<DivergenceEstimate> {
    Ok(alpha_divergences_mc(logf, logg, samples, 0.5)?
        .hellinger_sq
        .expect("alpha = 1/2 populates the Hellinger slot"))
}

pub fn d_alpha_mc<T>(
    logf: impl Fn(&T) -> f64,
    logg: impl Fn(&T) -> f64,
    samples: &[T],
    alpha: f64,
) -> Result<DivergenceEstimate> {
    Ok(alpha_divergences_mc(logf, logg, samples, alpha)?.d_alpha)
}

pub fn renyi_mc<T>(
    logf: impl Fn(&T) -> f64,
    logg: impl Fn(&T) -> f64,
    samples: &[T],
    alpha: f64,
) -> Result<DivergenceEstimate> {
    Ok(alpha_divergences_mc(logf, logg, samples, alpha)?.renyi)
}

// ---------------------------------------------------------------------------
// Sliced total variation
// ---------------------------------------------------------------------------

const SLICED_GRID: usize = 512;
const SLICED_HALF_WIDTH_SD: f64 = 6.0;
const SLICED_MIN_SAMPLES: usize = 1000;

/// Lower bound on TV(f, g) for a Gaussian target g on free coordinates:
/// the largest one-dimensional total variation between projected samples of
/// f (Gaussian-kernel smoothed, Silverman bandwidth) and the projected
/// analytic normal, over random unit directions.
pub fn sliced_tv(
    samples: &[DVector<f64>],
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    directions: usize,
    stream: RngStream,
) -> Result<DivergenceEstimate> {
    if samples.len() < SLICED_MIN_SAMPLES {
        return Err(Error::UnreliableEstimate(format!(
            "sliced TV needs at least {SLICED_MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let dim = mean.len();
    if samples.iter().any(|s| s.len() != dim) || cov.nrows() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: cov.nrows(),
        });
    }
    let mut rng = stream.rng();
    let mut best = f64::NEG_INFINITY;
    let mut best_half_gap = 0.0;
    let m = samples.len();
    let mut proj = vec![0.0f64; m];
    for _ in 0..directions.max(1) {
        let mut u = DVector::from_fn(dim, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            g
        });
        let norm = u.norm();
        if norm <= 0.0 {
            continue;
        }
        u /= norm;
        for (k, s) in samples.iter().enumerate() {
            proj[k] = u.dot(s);
        }
        let mu = u.dot(mean);
        let sd = (u.dot(&(cov * &u))).sqrt();
        if !(sd > 0.0) {
            continue;
        }
        let tv = one_dim_tv(&proj, mu, sd);
        if tv > best {
            best = tv;
            // Split-half spread on the maximizing direction as an error proxy.
            let h = m / 2;
            let tv1 = one_dim_tv(&proj[..h], mu, sd);
            let tv2 = one_dim_tv(&proj[h..], mu, sd);
            best_half_gap = 0.5 * (tv1 - tv2).abs();
        }
    }
    if !best.is_finite() {
        return Err(Error::UnreliableEstimate(
            "no usable direction for the sliced estimate".into(),
        ));
    }
    Ok(DivergenceEstimate {
        value: best.clamp(0.0, 1.0),
        mc_stderr: best_half_gap.max(0.5 / (m as f64).sqrt()),
        method: DivMethod::Sliced,
        sample_size: m,
        lower_bound: true,
        flagged: false,
    })
}

/// Trapezoidal L1 distance between the kernel-smoothed empirical density of
/// the projections and N(mu, sd^2), on a fixed grid of +-6 sd around mu.
fn one_dim_tv(proj: &[f64], mu: f64, sd: f64) -> f64 {
    let m = proj.len();
    let mf = m as f64;
    let mean = proj.iter().sum::<f64>() / mf;
    let var = proj.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / mf;
    let emp_sd = var.sqrt();
    let mut sorted: Vec<f64> = proj.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite projections"));
    let q = |f: f64| sorted[((f * (m - 1) as f64).round() as usize).min(m - 1)];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 {
        emp_sd.min(iqr / 1.34)
    } else {
        emp_sd
    };
    let bw = (0.9 * spread * mf.powf(-0.2)).max(1e-12 * sd);

    let lo = mu - SLICED_HALF_WIDTH_SD * sd;
    let hi = mu + SLICED_HALF_WIDTH_SD * sd;
    let step = (hi - lo) / (SLICED_GRID as f64 - 1.0);
    let inv_sqrt_2pi = 0.3989422804014327;
    let mut l1 = 0.0;
    let mut prev_diff = 0.0;
    for k in 0..SLICED_GRID {
        let x = lo + step * k as f64;
        // KDE at x; projections outside the window still contribute mass.
        let mut fhat = 0.0;
        for &p in proj {
            let z = (x - p) / bw;
            if z.abs() < 8.5 {
                fhat += (-0.5 * z * z).exp();
            }
        }
        fhat *= inv_sqrt_2pi / (mf * bw);
        let z = (x - mu) / sd;
        let phi = inv_sqrt_2pi / sd * (-0.5 * z * z).exp();
        let diff = (fhat - phi).abs();
        if k > 0 {
            l1 += 0.5 * (prev_diff + diff) * step;
        }
        prev_diff = diff;
    }
    0.5 * l1
}

// ---------------------------------------------------------------------------
// Inequality audit
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct AuditCheck {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
    /// Three combined standard errors of slack built into the comparison.
    pub slack: f64,
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct AuditReport {
    pub checks: Vec<AuditCheck>,
    pub all_pass: bool,
}

/// Check the divergence inequalities on estimates computed from the same
/// sample set: alpha(1-alpha) D_alpha <= TV, TV^2 <= H^2 (1 - H^2/4), and
/// H^2 <= 2 TV, each with three combined standard errors of slack.
pub fn inequality_audit(
    tv: &DivergenceEstimate,
    hellinger_sq: &DivergenceEstimate,
    d_alpha: &DivergenceEstimate,
    alpha: f64,
) -> AuditReport {
    let mut checks = Vec::new();
    let mut push = |name: &'static str, lhs: f64, rhs: f64, se: f64| {
        let slack = 3.0 * se;
        let margin = rhs + slack - lhs;
        checks.push(AuditCheck {
            name,
            lhs,
            rhs,
            slack,
            margin,
            pass: margin >= 0.0,
        });
    };

    let aa = alpha * (1.0 - alpha);
    push(
        "alpha(1-alpha) D_alpha <= TV",
        aa * d_alpha.value,
        tv.value,
        (aa * aa * d_alpha.mc_stderr.powi(2) + tv.mc_stderr.powi(2)).sqrt(),
    );

    let h2 = hellinger_sq.value;
    let lhs = tv.value * tv.value;
    let rhs = h2 * (1.0 - h2 / 4.0);
    let se = ((2.0 * tv.value * tv.mc_stderr).powi(2)
        + ((1.0 - h2 / 2.0) * hellinger_sq.mc_stderr).powi(2))
    .sqrt();
    push("TV^2 <= H^2 (1 - H^2/4)", lhs, rhs, se);

    push(
        "H^2 <= 2 TV",
        h2,
        2.0 * tv.value,
        (hellinger_sq.mc_stderr.powi(2) + 4.0 * tv.mc_stderr.powi(2)).sqrt(),
    );

    let all_pass = checks.iter().all(|c| c.pass);
    AuditReport { checks, all_pass }
}
