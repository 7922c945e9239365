//! Result rows with a stable CSV schema, the run manifest, and the summary
//! report. results.csv is a pure function of (config, master seed): rows are
//! sorted and numbers formatted with fixed precision before writing, and
//! anything timing-related lives in manifest.json instead.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::bench::config::ExperimentConfig;
use crate::error::Result;

/// Column order of results.csv. Append-only: downstream readers key on it.
pub const CSV_HEADER: &str = "scenario,grid_index,n,p,replicate,stream_id,status,functional,\
contraction_multiplier,tv,tv_se,sliced_tv,sliced_tv_se,hellinger_sq,hellinger_sq_se,\
d_alpha,d_alpha_se,renyi,renyi_se,mass_out_spectral,mass_out_frobenius,coverage_smn,\
coverage_quantile,int_len_ratio,flatness_rho,flatness_candidates,post_prob_g0,modal_hit,\
ghat_edges,ghat_is_superset,ghat_decomposable,edge_count,a_g,d_stat,ratio_p5_n,\
ratio_spectral_rate,ratio_frobenius_rate,ratio_bvm_reg";

/// One emitted measurement. Optional fields print empty when absent so every
/// run kind shares one schema.
#[derive(Debug, Clone, Default)]
pub struct ResultRow {
    pub scenario: String,
    pub grid_index: usize,
    pub n: usize,
    pub p: usize,
    pub replicate: usize,
    pub stream_id: u64,
    /// "ok" or "failed:<reason>".
    pub status: String,
    pub functional: Option<String>,
    pub contraction_multiplier: Option<f64>,
    pub tv: Option<f64>,
    pub tv_se: Option<f64>,
    pub sliced_tv: Option<f64>,
    pub sliced_tv_se: Option<f64>,
    pub hellinger_sq: Option<f64>,
    pub hellinger_sq_se: Option<f64>,
    pub d_alpha: Option<f64>,
    pub d_alpha_se: Option<f64>,
    pub renyi: Option<f64>,
    pub renyi_se: Option<f64>,
    pub mass_out_spectral: Option<f64>,
    pub mass_out_frobenius: Option<f64>,
    pub coverage_smn: Option<f64>,
    pub coverage_quantile: Option<f64>,
    pub int_len_ratio: Option<f64>,
    pub flatness_rho: Option<f64>,
    pub flatness_candidates: Option<usize>,
    pub post_prob_g0: Option<f64>,
    pub modal_hit: Option<f64>,
    pub ghat_edges: Option<usize>,
    pub ghat_is_superset: Option<f64>,
    pub ghat_decomposable: Option<f64>,
    pub edge_count: Option<usize>,
    pub a_g: Option<usize>,
    pub d_stat: Option<usize>,
    pub ratio_p5_n: Option<f64>,
    pub ratio_spectral_rate: Option<f64>,
    pub ratio_frobenius_rate: Option<f64>,
    pub ratio_bvm_reg: Option<f64>,
}

fn fmt_opt(v: &Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.12e}"),
        None => String::new(),
    }
}

fn fmt_opt_usize(v: &Option<usize>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => String::new(),
    }
}

impl ResultRow {
    pub fn ok(scenario: &str, grid_index: usize, n: usize, p: usize, replicate: usize, stream_id: u64) -> Self {
        ResultRow {
            scenario: scenario.to_string(),
            grid_index,
            n,
            p,
            replicate,
            stream_id,
            status: "ok".into(),
            ..Default::default()
        }
    }

    pub fn failed(
        scenario: &str,
        grid_index: usize,
        n: usize,
        p: usize,
        replicate: usize,
        stream_id: u64,
        reason: &str,
    ) -> Self {
        ResultRow {
            scenario: scenario.to_string(),
            grid_index,
            n,
            p,
            replicate,
            stream_id,
            status: format!("failed:{}", reason.replace([',', '\n'], ";")),
            ..Default::default()
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn to_csv_line(&self) -> String {
        let cols = [
            self.scenario.clone(),
            self.grid_index.to_string(),
            self.n.to_string(),
            self.p.to_string(),
            self.replicate.to_string(),
            self.stream_id.to_string(),
            self.status.clone(),
            self.functional.clone().unwrap_or_default(),
            fmt_opt(&self.contraction_multiplier),
            fmt_opt(&self.tv),
            fmt_opt(&self.tv_se),
            fmt_opt(&self.sliced_tv),
            fmt_opt(&self.sliced_tv_se),
            fmt_opt(&self.hellinger_sq),
            fmt_opt(&self.hellinger_sq_se),
            fmt_opt(&self.d_alpha),
            fmt_opt(&self.d_alpha_se),
            fmt_opt(&self.renyi),
            fmt_opt(&self.renyi_se),
            fmt_opt(&self.mass_out_spectral),
            fmt_opt(&self.mass_out_frobenius),
            fmt_opt(&self.coverage_smn),
            fmt_opt(&self.coverage_quantile),
            fmt_opt(&self.int_len_ratio),
            fmt_opt(&self.flatness_rho),
            fmt_opt_usize(&self.flatness_candidates),
            fmt_opt(&self.post_prob_g0),
            fmt_opt(&self.modal_hit),
            fmt_opt_usize(&self.ghat_edges),
            fmt_opt(&self.ghat_is_superset),
            fmt_opt(&self.ghat_decomposable),
            fmt_opt_usize(&self.edge_count),
            fmt_opt_usize(&self.a_g),
            fmt_opt_usize(&self.d_stat),
            fmt_opt(&self.ratio_p5_n),
            fmt_opt(&self.ratio_spectral_rate),
            fmt_opt(&self.ratio_frobenius_rate),
            fmt_opt(&self.ratio_bvm_reg),
        ];
        cols.join(",")
    }
}

/// Deterministic results.csv: rows sorted by (grid, replicate, functional,
/// multiplier).
pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (a.grid_index, a.replicate, &a.functional, a.contraction_multiplier.map(ordered))
            .partial_cmp(&(b.grid_index, b.replicate, &b.functional, b.contraction_multiplier.map(ordered)))
            .expect("finite sort keys")
    });
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{CSV_HEADER}")?;
    for r in sorted {
        writeln!(f, "{}", r.to_csv_line())?;
    }
    Ok(())
}

fn ordered(x: f64) -> u64 {
    // Total order for non-negative finite multipliers.
    x.to_bits()
}

#[derive(Debug, Clone, Serialize)]
pub struct GridTiming {
    pub grid_index: usize,
    pub n: usize,
    pub p: usize,
    pub wall_ms: u128,
    pub failures: usize,
    pub aborted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub master_seed: u64,
    pub config: &'a ExperimentConfig,
    pub grid: Vec<(usize, usize)>,
    pub timings: Vec<GridTiming>,
    pub notes: Vec<String>,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(path, text)?;
    Ok(())
}

/// A single pass/fail line of summary.txt.
#[derive(Debug, Clone)]
pub struct SummaryCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

pub fn write_summary(path: &Path, lines: &[String], checks: &[SummaryCheck]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for l in lines {
        writeln!(f, "{l}")?;
    }
    if !checks.is_empty() {
        writeln!(f)?;
        for c in checks {
            writeln!(
                f,
                "{} {}: {}",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            )?;
        }
    }
    Ok(())
}

/// Mean and standard error of the mean over the Some-valued entries.
pub fn mean_se(values: impl Iterator<Item = f64>) -> Option<(f64, f64, usize)> {
    let vals: Vec<f64> = values.collect();
    if vals.is_empty() {
        return None;
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(2.0 - 1.0);
    Some((mean, (var / n).sqrt(), vals.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_schema_is_stable() {
        let row = ResultRow::ok("x", 0, 10, 2, 0, 7);
        let line = row.to_csv_line();
        assert_eq!(
            line.split(',').count(),
            CSV_HEADER.split(',').count(),
            "row arity must match the header"
        );
    }

    #[test]
    fn rows_sort_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let mut a = ResultRow::ok("x", 1, 10, 2, 0, 1);
        a.tv = Some(0.25);
        let b = ResultRow::ok("x", 0, 10, 2, 1, 2);
        let c = ResultRow::ok("x", 0, 10, 2, 0, 3);
        write_results_csv(&path, &[a, b, c]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[1].starts_with("x,0,10,2,0"));
        assert!(lines[2].starts_with("x,0,10,2,1"));
        assert!(lines[3].starts_with("x,1,10,2,0"));
        assert!(lines[3].contains("2.500000000000e-1"));
    }
}
