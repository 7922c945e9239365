//! Experiment configuration: a TOML file with sections for the scenario,
//! the true matrix, the prior, the (n, p) grid, Monte Carlo sizes, and
//! output. Unknown fields are rejected so typos fail loudly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{band, mcs_decomposable, star, UGraph};
use crate::matcore::SpdMatrix;
use crate::prior::{GraphPrior, MixingFamily, PriorSpec};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSection,
    pub truth: TruthSection,
    #[serde(default)]
    pub graph: GraphSection,
    pub prior: PriorSection,
    pub grid: GridSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub contraction: ContractionSection,
    #[serde(default)]
    pub coverage: CoverageSection,
    #[serde(default)]
    pub flatness: FlatnessSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub kind: ScenarioKind,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub enum ScenarioKind {
    #[serde(rename = "unstructured-sigma")]
    UnstructuredSigma,
    #[serde(rename = "unstructured-omega")]
    UnstructuredOmega,
    #[serde(rename = "graph-known")]
    GraphKnown,
    #[serde(rename = "graph-unknown")]
    GraphUnknown,
}

impl ScenarioKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioKind::UnstructuredSigma => "unstructured-sigma",
            ScenarioKind::UnstructuredOmega => "unstructured-omega",
            ScenarioKind::GraphKnown => "graph-known",
            ScenarioKind::GraphUnknown => "graph-unknown",
        }
    }

    pub fn is_graph(&self) -> bool {
        matches!(self, ScenarioKind::GraphKnown | ScenarioKind::GraphUnknown)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    pub generator: TruthGenerator,
    /// ar1 correlation, or the banded-precision off-diagonal base.
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: usize,
    /// Hub weight of the star precision matrix.
    #[serde(default = "default_hub")]
    pub hub: f64,
    /// Dense CSV for the custom generator.
    #[serde(default)]
    pub file: Option<String>,
    /// Whether a custom matrix is a covariance or a precision matrix.
    #[serde(default)]
    pub matrix_is: MatrixIs,
}

fn default_rho() -> f64 {
    0.5
}
fn default_bandwidth() -> usize {
    1
}
fn default_hub() -> f64 {
    0.3
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub enum TruthGenerator {
    #[serde(rename = "ar1")]
    Ar1,
    #[serde(rename = "banded-precision")]
    BandedPrecision,
    #[serde(rename = "star-precision")]
    StarPrecision,
    #[serde(rename = "custom")]
    Custom,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
pub enum MatrixIs {
    #[serde(rename = "covariance")]
    Covariance,
    #[default]
    #[serde(rename = "precision")]
    Precision,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    #[serde(default)]
    pub kind: GraphKind,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: usize,
    #[serde(default)]
    pub file: Option<String>,
    /// Unknown-graph scenario: plug in the true graph instead of estimating.
    #[serde(default)]
    pub force_true: bool,
    /// Threshold constant of the partial-correlation graph estimator.
    #[serde(default = "default_threshold_c")]
    pub threshold_c: f64,
}

fn default_threshold_c() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
pub enum GraphKind {
    #[default]
    #[serde(rename = "star")]
    Star,
    #[serde(rename = "band")]
    Band,
    #[serde(rename = "complete")]
    Complete,
    #[serde(rename = "custom")]
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PriorSection {
    pub family: PriorFamily,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default)]
    pub nu_star: f64,
    #[serde(default = "default_c_nu")]
    pub c_nu: f64,
    /// "gamma2:<rate>", "lognormal:<mu>,<sigma>", "truncnormal:<mu>,<sigma>",
    /// or "uniform:<a>,<b>".
    #[serde(default = "default_mixing")]
    pub mixing: String,
    /// "identity" or "scaled:<c>".
    #[serde(default = "default_psi")]
    pub psi: String,
    /// Multiply the scale matrix by n^k at each grid point (negative control
    /// for the flatness study when k = 2).
    #[serde(default)]
    pub psi_scale_n_pow: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// 0 means the maximum p(p-1)/2.
    #[serde(default)]
    pub r_max: usize,
}

fn default_nu() -> f64 {
    3.0
}
fn default_c_nu() -> f64 {
    1.0
}
fn default_mixing() -> String {
    "gamma2:1.0".into()
}
fn default_psi() -> String {
    "identity".into()
}
fn default_beta() -> f64 {
    3.0
}
fn default_tau() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
pub enum PriorFamily {
    #[serde(rename = "iw")]
    Iw,
    #[serde(rename = "dsiw")]
    Dsiw,
    #[serde(rename = "matrix-f")]
    MatrixF,
    #[serde(rename = "g-wishart")]
    GWishart,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Explicit [n, p] pairs.
    #[serde(default)]
    pub pairs: Vec<[usize; 2]>,
    /// Sample sizes expanded with p = ceil(n^{1/6}) and appended to `pairs`.
    #[serde(default)]
    pub joint_growth: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// 0 derives the chain length so that `draws` survive the 20% burn-in.
    #[serde(default)]
    pub gibbs_iters: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub divergence: DivergenceChoice,
    #[serde(default = "default_directions")]
    pub sliced_directions: usize,
}

impl Default for McSection {
    fn default() -> Self {
        McSection {
            replicates: default_replicates(),
            draws: default_draws(),
            seed: default_seed(),
            gibbs_iters: 0,
            alpha: default_alpha(),
            divergence: DivergenceChoice::default(),
            sliced_directions: default_directions(),
        }
    }
}

fn default_replicates() -> usize {
    50
}
fn default_draws() -> usize {
    5000
}
fn default_seed() -> u64 {
    20250810
}
fn default_alpha() -> f64 {
    0.5
}
fn default_directions() -> usize {
    100
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq, Default)]
pub enum DivergenceChoice {
    #[default]
    #[serde(rename = "exact-mc")]
    ExactMc,
    #[serde(rename = "sliced")]
    Sliced,
    #[serde(rename = "both")]
    Both,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ContractionSection {
    #[serde(default = "default_multipliers")]
    pub multipliers: Vec<f64>,
}

impl Default for ContractionSection {
    fn default() -> Self {
        ContractionSection {
            multipliers: default_multipliers(),
        }
    }
}

fn default_multipliers() -> Vec<f64> {
    vec![2.0, 4.0, 8.0]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CoverageSection {
    #[serde(default = "default_level")]
    pub level: f64,
    /// Matrix entries as "i,j" with 1-based indices.
    #[serde(default = "default_functionals")]
    pub functionals: Vec<String>,
}

impl Default for CoverageSection {
    fn default() -> Self {
        CoverageSection {
            level: default_level(),
            functionals: default_functionals(),
        }
    }
}

fn default_level() -> f64 {
    0.9
}
fn default_functionals() -> Vec<String> {
    vec!["1,1".into()]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FlatnessSection {
    #[serde(default = "default_budget")]
    pub budget: usize,
}

impl Default for FlatnessSection {
    fn default() -> Self {
        FlatnessSection {
            budget: default_budget(),
        }
    }
}

fn default_budget() -> usize {
    400
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    #[serde(default)]
    pub dump_draws: bool,
}

impl ExperimentConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            location: e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "unknown".into()),
            msg: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            location: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_str(&text)
    }

    /// The resolved (n, p) grid.
    pub fn grid_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = self
            .grid
            .pairs
            .iter()
            .map(|&[n, p]| (n, p))
            .collect();
        for &n in &self.grid.joint_growth {
            let p = (n as f64).powf(1.0 / 6.0).ceil() as usize;
            pairs.push((n, p.max(2)));
        }
        pairs
    }

    pub fn validate(&self) -> Result<()> {
        let pairs = self.grid_pairs();
        if pairs.is_empty() {
            return Err(Error::Config {
                location: "[grid]".into(),
                msg: "need at least one (n, p) pair".into(),
            });
        }
        for &(n, p) in &pairs {
            if p < 2 {
                return Err(Error::Config {
                    location: "[grid]".into(),
                    msg: format!("p must be at least 2, got {p}"),
                });
            }
            if n <= p {
                return Err(Error::Config {
                    location: "[grid]".into(),
                    msg: format!("theorem-verification grids need n > p, got n={n}, p={p}"),
                });
            }
        }
        if self.mc.replicates == 0 {
            return Err(Error::Config {
                location: "[mc] replicates".into(),
                msg: "need at least one replicate".into(),
            });
        }
        if !(self.mc.alpha > 0.0 && self.mc.alpha < 1.0) {
            return Err(Error::Config {
                location: "[mc] alpha".into(),
                msg: format!("alpha must be in (0, 1), got {}", self.mc.alpha),
            });
        }
        if !(self.coverage.level > 0.0 && self.coverage.level < 1.0) {
            return Err(Error::Config {
                location: "[coverage] level".into(),
                msg: format!("level must be in (0, 1), got {}", self.coverage.level),
            });
        }
        if self.scenario.kind.is_graph() {
            let ps: std::collections::BTreeSet<usize> = pairs.iter().map(|&(_, p)| p).collect();
            if ps.len() != 1 {
                return Err(Error::Config {
                    location: "[grid]".into(),
                    msg: "graph scenarios need a single p across the grid".into(),
                });
            }
            if self.prior.family != PriorFamily::GWishart {
                return Err(Error::Config {
                    location: "[prior] family".into(),
                    msg: "graph scenarios use the g-wishart prior".into(),
                });
            }
            let p = *ps.iter().next().expect("non-empty");
            let g = self.build_graph(p)?;
            if !mcs_decomposable(&g).0 {
                return Err(Error::Config {
                    location: "[graph]".into(),
                    msg: "the model graph must be decomposable".into(),
                });
            }
        } else if self.prior.family == PriorFamily::GWishart {
            return Err(Error::Config {
                location: "[prior] family".into(),
                msg: "the g-wishart prior needs a graph scenario".into(),
            });
        }
        self.parse_mixing()?;
        for f in &self.coverage.functionals {
            parse_entry(f)?;
        }
        Ok(())
    }

    pub fn build_graph(&self, p: usize) -> Result<UGraph> {
        match self.graph.kind {
            GraphKind::Star => Ok(star(p)),
            GraphKind::Band => Ok(band(p, self.graph.bandwidth)),
            GraphKind::Complete => Ok(UGraph::complete(p)),
            GraphKind::Custom => {
                let file = self.graph.file.as_ref().ok_or_else(|| Error::Config {
                    location: "[graph] file".into(),
                    msg: "custom graph needs a file".into(),
                })?;
                let g = UGraph::from_edge_list_str(&std::fs::read_to_string(file)?)?;
                if g.vertex_count() != p {
                    return Err(Error::Config {
                        location: "[graph] file".into(),
                        msg: format!("graph has {} vertices, grid wants {p}", g.vertex_count()),
                    });
                }
                Ok(g)
            }
        }
    }

    pub fn parse_mixing(&self) -> Result<MixingFamily> {
        parse_mixing_str(&self.prior.mixing)
    }

    /// Scale matrix at a grid point: the base choice times n^{psi_scale_n_pow}.
    pub fn build_psi(&self, p: usize, n: usize) -> Result<SpdMatrix> {
        let base = if self.prior.psi == "identity" {
            SpdMatrix::identity(p)
        } else if let Some(c) = self.prior.psi.strip_prefix("scaled:") {
            let c: f64 = c.parse().map_err(|_| Error::Config {
                location: "[prior] psi".into(),
                msg: format!("bad scale in {:?}", self.prior.psi),
            })?;
            SpdMatrix::identity(p).scale(c)?
        } else {
            return Err(Error::Config {
                location: "[prior] psi".into(),
                msg: format!("unknown psi spec {:?}", self.prior.psi),
            });
        };
        if self.prior.psi_scale_n_pow == 0.0 {
            Ok(base)
        } else {
            base.scale((n as f64).powf(self.prior.psi_scale_n_pow))
        }
    }

    /// The prior spec resolved at a grid point.
    pub fn build_prior(&self, p: usize, n: usize) -> Result<PriorSpec> {
        let psi = self.build_psi(p, n)?;
        let spec = match self.prior.family {
            PriorFamily::Iw => PriorSpec::InvWishart {
                nu: self.prior.nu,
                psi,
            },
            PriorFamily::Dsiw => PriorSpec::Dsiw {
                nu: self.prior.nu,
                c_nu: self.prior.c_nu,
                mixing: vec![self.parse_mixing()?],
            },
            PriorFamily::MatrixF => PriorSpec::MatrixF {
                nu: self.prior.nu,
                nu_star: if self.prior.nu_star > 0.0 {
                    self.prior.nu_star
                } else {
                    p as f64 + 2.0
                },
                psi,
            },
            PriorFamily::GWishart => PriorSpec::GWishart {
                graph: self.build_graph(p)?,
                beta: self.prior.beta,
                psi,
            },
        };
        spec.validate(p)?;
        Ok(spec)
    }

    pub fn graph_prior(&self, p: usize) -> GraphPrior {
        GraphPrior {
            tau: self.prior.tau,
            r_max: if self.prior.r_max == 0 {
                p * (p - 1) / 2
            } else {
                self.prior.r_max
            },
        }
    }

    pub fn gibbs_iters(&self) -> usize {
        if self.mc.gibbs_iters > 0 {
            self.mc.gibbs_iters
        } else {
            // 20% burn-in leaves mc.draws retained draws.
            self.mc.draws * 5 / 4 + 1
        }
    }
}

pub fn parse_entry(text: &str) -> Result<(usize, usize)> {
    let mut it = text.split(',');
    let bad = || Error::Config {
        location: "[coverage] functionals".into(),
        msg: format!("expected \"i,j\" with 1-based indices, got {text:?}"),
    };
    let i: usize = it.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
    let j: usize = it.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
    if it.next().is_some() || i == 0 || j == 0 {
        return Err(bad());
    }
    Ok((i - 1, j - 1))
}

pub fn parse_mixing_str(text: &str) -> Result<MixingFamily> {
    let bad = |msg: String| Error::Config {
        location: "[prior] mixing".into(),
        msg,
    };
    let (name, args) = text
        .split_once(':')
        .ok_or_else(|| bad(format!("expected family:params, got {text:?}")))?;
    let nums: Vec<f64> = args
        .split(',')
        .map(|a| a.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| bad(format!("bad number in {text:?}: {e}")))?;
    let fam = match (name, nums.as_slice()) {
        ("gamma2", [rate]) => MixingFamily::GammaShape2 { rate: *rate },
        ("lognormal", [mu, sigma]) => MixingFamily::LogNormal {
            mu: *mu,
            sigma: *sigma,
        },
        ("truncnormal", [mu, sigma]) => MixingFamily::TruncNormal {
            mu: *mu,
            sigma: *sigma,
        },
        ("uniform", [a, b]) => MixingFamily::Uniform { a: *a, b: *b },
        _ => return Err(bad(format!("unknown mixing {text:?}"))),
    };
    Ok(fam)
}
