//! Run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynlap::BoundaryCondition;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("exactly one of `builtin` and `traj` must be set")]
    Source,
    #[error("unknown builtin flow `{0}` (expected `double_gyre` or `identity`)")]
    UnknownBuiltin(String),
    #[error("`{0}` must be at least {1}")]
    TooSmall(&'static str, usize),
    #[error("`{0}` must be positive and finite, got {1}")]
    NotPositive(&'static str, f64),
    #[error("{0}")]
    Invalid(String),
}

/// Built-in velocity fields on the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    DoubleGyre,
    Identity,
}

impl std::str::FromStr for Builtin {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "double_gyre" => Ok(Self::DoubleGyre),
            "identity" => Ok(Self::Identity),
            other => Err(ConfigError::UnknownBuiltin(other.to_string())),
        }
    }
}

/// Which Cheeger ratio to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheegerMode {
    Static,
    Dynamic,
    /// Time average over the trajectory meshes; works for files too.
    Slice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheegerConfig {
    /// Eigenfunction whose nodal domains are packed; also the packing size.
    pub n: usize,
    /// Threshold grid size per domain.
    pub thresholds: usize,
    /// `dynamic` needs a built-in flow; `slice` does not.
    pub mode: CheegerMode,
    /// Segment length for boundary advection during the scan.
    pub max_seg: f64,
}

impl Default for CheegerConfig {
    fn default() -> Self {
        Self {
            n: 2,
            thresholds: 50,
            mode: CheegerMode::Dynamic,
            max_seg: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub builtin: Option<Builtin>,
    /// Trajectory CSV (`id,t,x,y`).
    pub traj: Option<PathBuf>,
    /// Seed grid `nx × ny` on the unit square for built-in flows.
    pub seeds: [usize; 2],
    /// Number of uniformly spaced sample times for built-in flows.
    pub times: usize,
    pub bc: BoundaryCondition,
    pub k: usize,
    pub seba_r: Option<usize>,
    pub reject_below: f64,
    pub alpha: Option<f64>,
    pub dt: f64,
    pub max_seg: f64,
    pub tol: f64,
    pub seed: u64,
    pub cheeger: Option<CheegerConfig>,
    pub output_dir: PathBuf,
    pub vtk: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            builtin: None,
            traj: None,
            seeds: [50, 50],
            times: 11,
            bc: BoundaryCondition::Neumann,
            k: 4,
            seba_r: None,
            reject_below: crate::seba::DEFAULT_REJECTION_LEVEL,
            alpha: None,
            dt: 1e-2,
            max_seg: 1e-3,
            tol: 1e-8,
            seed: 0,
            cheeger: None,
            output_dir: PathBuf::from("dynlap-out"),
            vtk: false,
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::NotPositive(name, v))
    }
}

fn at_least(name: &'static str, v: usize, min: usize) -> Result<(), ConfigError> {
    if v >= min {
        Ok(())
    } else {
        Err(ConfigError::TooSmall(name, min))
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.builtin.is_some() == self.traj.is_some() {
            return Err(ConfigError::Source);
        }
        at_least("k", self.k, 1)?;
        at_least("seeds", self.seeds[0].min(self.seeds[1]), 2)?;
        at_least("times", self.times, 1)?;
        positive("dt", self.dt)?;
        positive("max_seg", self.max_seg)?;
        positive("tol", self.tol)?;
        if let Some(alpha) = self.alpha {
            positive("alpha", alpha)?;
        }
        if let Some(r) = self.seba_r {
            at_least("seba_r", r, 1)?;
            if r > self.k {
                return Err(ConfigError::Invalid(format!(
                    "`seba_r` = {r} exceeds the eigenpair count k = {}",
                    self.k
                )));
            }
        }
        if !self.reject_below.is_finite() {
            return Err(ConfigError::Invalid("`reject_below` must be finite".into()));
        }
        if let Some(c) = &self.cheeger {
            at_least("cheeger.n", c.n, 1)?;
            at_least("cheeger.thresholds", c.thresholds, 1)?;
            positive("cheeger.max_seg", c.max_seg)?;
            if c.n > self.k {
                return Err(ConfigError::Invalid(format!(
                    "`cheeger.n` = {} exceeds the eigenpair count k = {}",
                    c.n, self.k
                )));
            }
            if c.mode == CheegerMode::Dynamic && self.builtin.is_none() {
                return Err(ConfigError::Invalid(
                    "dynamic Cheeger ratios need a built-in flow; use mode `static` for trajectory files".into(),
                ));
            }
        }
        Ok(())
    }
}
