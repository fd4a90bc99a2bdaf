//! JSON instance files.
//!
//! ```json
//! {
//!   "schema": "persuasion.instance/v1",
//!   "name": "two_uniform_xi_increasing",
//!   "grid_size": 1024,
//!   "buyers": [{"kind": "uniform", "lo": 0, "hi": 1}, {"kind": "uniform", "lo": 0, "hi": 1}],
//!   "quality": {
//!     "distribution": {"kind": "uniform", "lo": 0, "hi": 1},
//!     "alpha": {"kind": "constant", "value": 1},
//!     "reserve": {"kind": "linear", "intercept": 0, "slope": 0.8}
//!   },
//!   "valuation": "linear"
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dist::{locate, GriddedDistribution, GriddedFunction};
use crate::error::{Error, Result};
use crate::instance::{ProblemInstance, QualityModel};
use crate::valuation::{GeneralValuation, TypeFactor, ValuationForm};
use crate::verify::Tolerances;

pub const INSTANCE_SCHEMA: &str = "persuasion.instance/v1";

pub const DEFAULT_GRID: usize = 1024;
pub const DEFAULT_SEED: u64 = 20240601;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionDecl {
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Density values on a grid, resampled onto the working grid by linear
    /// interpolation.
    Table {
        grid: Vec<f64>,
        pdf: Vec<f64>,
    },
}

/// A curve over quality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CurveDecl {
    Constant {
        value: f64,
    },
    Linear {
        intercept: f64,
        slope: f64,
    },
    /// `scale * q^exponent`
    Power {
        scale: f64,
        exponent: f64,
    },
    /// `offset + scale * |q - center|`
    Abs {
        center: f64,
        scale: f64,
        offset: f64,
    },
    /// Values on a grid, linearly interpolated and held constant outside.
    Table {
        grid: Vec<f64>,
        values: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityDecl {
    pub distribution: DistributionDecl,
    pub alpha: CurveDecl,
    pub reserve: CurveDecl,
}

/// `v(t, q) = value_type(t) * value_quality(q)`, with the derivative in `t`
/// declared the same way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralDecl {
    pub value_type: TypeFactor,
    pub value_quality: CurveDecl,
    pub slope_type: TypeFactor,
    pub slope_quality: CurveDecl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ValuationDecl {
    Named(String),
    General {
        kind: String,
        #[serde(flatten)]
        decl: GeneralDecl,
    },
}

impl Default for ValuationDecl {
    fn default() -> Self {
        ValuationDecl::Named("linear".into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub schema: String,
    #[serde(default)]
    pub name: Option<String>,
    pub buyers: Vec<DistributionDecl>,
    pub quality: QualityDecl,
    #[serde(default)]
    pub valuation: ValuationDecl,
    #[serde(default)]
    pub grid_size: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerances: Option<Tolerances>,
}

fn config_err(at: &str, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{at}: {e}"))
}

fn finite(at: &str, xs: &[f64]) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(k) => Err(config_err(at, format!("value {k} is not finite"))),
        None => Ok(()),
    }
}

fn table_fn(at: &str, grid: &[f64], vals: &[f64]) -> Result<GriddedFunction> {
    finite(at, grid)?;
    finite(at, vals)?;
    GriddedFunction::new(grid.to_vec(), vals.to_vec()).map_err(|e| config_err(at, e))
}

impl DistributionDecl {
    pub fn build(&self, m: usize, at: &str) -> Result<GriddedDistribution> {
        match self {
            DistributionDecl::Uniform { lo, hi } => {
                finite(at, &[*lo, *hi])?;
                GriddedDistribution::uniform(*lo, *hi, m).map_err(|e| config_err(at, e))
            }
            DistributionDecl::Table { grid, pdf } => {
                let f = table_fn(at, grid, pdf)?;
                if pdf.iter().any(|&p| p < 0.0) {
                    return Err(config_err(at, "density must be non-negative"));
                }
                GriddedDistribution::from_density(f.lo(), f.hi(), |x| f.at(x), m).map_err(|e| config_err(at, e))
            }
        }
    }
}

impl CurveDecl {
    pub fn eval_fn(&self, at: &str) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
        Ok(match self.clone() {
            CurveDecl::Constant { value } => {
                finite(at, &[value])?;
                Box::new(move |_| value)
            }
            CurveDecl::Linear { intercept, slope } => {
                finite(at, &[intercept, slope])?;
                Box::new(move |q| intercept + slope * q)
            }
            CurveDecl::Power { scale, exponent } => {
                finite(at, &[scale, exponent])?;
                Box::new(move |q: f64| scale * q.max(0.0).powf(exponent))
            }
            CurveDecl::Abs { center, scale, offset } => {
                finite(at, &[center, scale, offset])?;
                Box::new(move |q: f64| offset + scale * (q - center).abs())
            }
            CurveDecl::Table { grid, values } => {
                let f = table_fn(at, &grid, &values)?;
                Box::new(move |q| {
                    let (k, w) = locate(f.grid(), q.clamp(f.lo(), f.hi()));
                    let v = f.vals();
                    if w == 0.0 {
                        v[k]
                    } else {
                        v[k] + w * (v[k + 1] - v[k])
                    }
                })
            }
        })
    }

    /// The curve tabulated on `grid`.
    pub fn on_grid(&self, grid: &[f64], at: &str) -> Result<GriddedFunction> {
        let f = self.eval_fn(at)?;
        let vals: Vec<f64> = grid.iter().map(|&q| f(q)).collect();
        finite(at, &vals)?;
        GriddedFunction::new(grid.to_vec(), vals).map_err(|e| config_err(at, e))
    }
}

impl InstanceConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: InstanceConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema != INSTANCE_SCHEMA {
            return Err(config_err("schema", format!("expected {INSTANCE_SCHEMA:?}, found {:?}", cfg.schema)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(&path.display().to_string(), e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn grid(&self) -> usize {
        self.grid_size.unwrap_or(DEFAULT_GRID)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn tolerances(&self) -> Tolerances {
        self.tolerances.unwrap_or_default()
    }

    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or("instance")
    }

    /// The instance on `m`-node grids (the config's grid size if `None`).
    pub fn build(&self, m: Option<usize>) -> Result<ProblemInstance> {
        let m = m.unwrap_or(self.grid());
        if m < 3 {
            return Err(config_err("grid_size", "need at least 3 nodes"));
        }
        if self.buyers.is_empty() {
            return Err(config_err("buyers", "need at least one buyer"));
        }
        let buyers = self
            .buyers
            .iter()
            .enumerate()
            .map(|(i, d)| d.build(m, &format!("buyers[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let qd = self.quality.distribution.build(m, "quality.distribution")?;
        let grid = qd.grid().to_vec();
        let alpha = self.quality.alpha.on_grid(&grid, "quality.alpha")?;
        if alpha.min() <= 0.0 {
            return Err(config_err("quality.alpha", "alpha must be positive"));
        }
        let reserve = self.quality.reserve.on_grid(&grid, "quality.reserve")?;
        let quality = QualityModel::new(qd, &alpha, &reserve).map_err(|e| config_err("quality", e))?;
        let valuation = match &self.valuation {
            ValuationDecl::Named(s) if s == "linear" => ValuationForm::Linear,
            ValuationDecl::Named(s) => return Err(config_err("valuation", format!("unknown valuation {s:?}"))),
            ValuationDecl::General { kind, decl } => {
                if kind != "general" {
                    return Err(config_err("valuation.kind", format!("unknown valuation {kind:?}")));
                }
                ValuationForm::General(GeneralValuation {
                    value_type: decl.value_type.clone(),
                    value_quality: decl.value_quality.on_grid(&grid, "valuation.value_quality")?,
                    slope_type: decl.slope_type.clone(),
                    slope_quality: decl.slope_quality.on_grid(&grid, "valuation.slope_quality")?,
                })
            }
        };
        ProblemInstance::new(buyers, quality, valuation).map_err(|e| config_err("valuation", e))
    }
}
