//! End-to-end runs: trajectories → assembled pencil → eigenpairs → SEBA →
//! Cheeger report → files.

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use log::info;
use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::cheeger::{
    dynamic_cheeger_ratio, slice_cheeger_ratio, static_cheeger_ratio, threshold_scan, CheegerError, PackingReport,
    RatioKind, ThresholdScan,
};
use crate::config::{Builtin, CheegerMode, ConfigError, RunConfig};
use crate::dynlap::{assemble_system, AssembleOptions, BoundaryCondition, DynLapError, DynLapSystem};
use crate::eigen::{solve_gevp, EigenError, EigenOptions, EigenResult};
use crate::flow::{
    double_gyre_field, generate_trajectories, uniform_times, zero_field, AdvectOptions, FlowError, FlowField,
    TrajectoryEnsemble,
};
use crate::io::{export_fields, load_trajectories, save_trajectories, write_json, EigenTable, IoError};
use crate::mesh::grid_points;
use crate::seba::{
    euclidean_basis, reliability, seba, span_residual, ColumnReliability, SebaBasis, SebaError, SebaOptions,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("generate: {0}")]
    Generate(#[source] FlowError),
    #[error("load: {0}")]
    Load(#[source] IoError),
    #[error("assemble: {0}")]
    Assemble(#[source] DynLapError),
    #[error("eigen: {0}")]
    Eigen(#[source] EigenError),
    #[error("seba: {0}")]
    Seba(#[source] SebaError),
    #[error("cheeger: {0}")]
    Cheeger(#[source] CheegerError),
    #[error("export: {0}")]
    Export(#[source] IoError),
}

impl PipelineError {
    /// 1 for invalid input, 2 for numerical failure, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(ConfigError::Read { .. }) => 3,
            Self::Config(_) => 1,
            Self::Generate(FlowError::NonFiniteState { .. } | FlowError::RefinementExplosion(_)) => 2,
            Self::Generate(_) => 1,
            Self::Load(IoError::IoFailure { .. }) | Self::Export(_) => 3,
            Self::Load(_) => 1,
            Self::Assemble(
                DynLapError::SliceTooSparse { .. }
                | DynLapError::CollinearSlice { .. }
                | DynLapError::InitialSliceIncomplete { .. },
            ) => 1,
            Self::Eigen(EigenError::InvalidCount { .. }) => 1,
            Self::Assemble(_) | Self::Eigen(_) | Self::Seba(_) | Self::Cheeger(_) => 2,
        }
    }
}

pub fn builtin_field(builtin: Builtin) -> FlowField {
    match builtin {
        Builtin::DoubleGyre => double_gyre_field(),
        Builtin::Identity => zero_field((0.0, 1.0)),
    }
}

/// Trajectories of the configured source, with the flow field for built-in
/// sources and the ids rejected while loading a file.
pub struct Source {
    pub ensemble: TrajectoryEnsemble,
    pub field: Option<FlowField>,
    pub rejected: Vec<String>,
    pub label: String,
}

pub fn load_source(config: &RunConfig) -> Result<Source, PipelineError> {
    config.validate()?;
    if let Some(builtin) = config.builtin {
        let field = builtin_field(builtin);
        let (t0, t1) = field.time_span();
        let seeds = grid_points(config.seeds[0], config.seeds[1], 0.0, 1.0, 0.0, 1.0);
        let times = uniform_times(t0, t1, config.times);
        let ensemble = generate_trajectories(&field, &seeds, &times, config.dt).map_err(PipelineError::Generate)?;
        Ok(Source {
            ensemble,
            label: field.name().to_string(),
            field: Some(field),
            rejected: Vec::new(),
        })
    } else {
        let path = config.traj.as_ref().expect("validated source");
        let loaded = load_trajectories(path).map_err(PipelineError::Load)?;
        Ok(Source {
            ensemble: loaded.ensemble,
            field: None,
            rejected: loaded.rejected,
            label: path.display().to_string(),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SebaSummary {
    pub r: usize,
    pub mu: f64,
    pub iterations: usize,
    pub dropped: Vec<usize>,
    pub span_residual: f64,
    pub reject_below: f64,
    pub columns: Vec<ColumnReliability>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub source: String,
    pub bc: BoundaryCondition,
    pub trajectories: usize,
    pub times: usize,
    pub rejected_trajectories: usize,
    pub active_nodes: usize,
    pub shift: f64,
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `√(−2λ_n)` for each eigenvalue.
    pub bounds: Vec<f64>,
    pub seba: Option<SebaSummary>,
    pub cheeger: Option<PackingReport>,
    pub files: Vec<PathBuf>,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "source {} ({} trajectories, {} times, {} rejected), {} boundary, {} active nodes",
            self.source, self.trajectories, self.times, self.rejected_trajectories, self.bc, self.active_nodes
        )?;
        writeln!(f, "  k  lambda                    residual   sqrt(-2 lambda)")?;
        for (k, ((l, r), b)) in self
            .eigenvalues
            .iter()
            .zip(&self.residuals)
            .zip(&self.bounds)
            .enumerate()
        {
            writeln!(f, "{:>3}  {l:<24e}  {r:<9.2e}  {b:.4}", k + 1)?;
        }
        if let Some(s) = &self.seba {
            writeln!(
                f,
                "SEBA r = {}, mu = {:.4e}, {} iterations, span residual {:.4}",
                s.r, s.mu, s.iterations, s.span_residual
            )?;
            for (k, c) in s.columns.iter().enumerate() {
                let flag = if c.spurious { "spurious" } else { "ok" };
                writeln!(f, "  s{}  min {:.4}  {flag}", k + 1, c.min_value)?;
            }
            if !s.dropped.is_empty() {
                writeln!(f, "  dropped columns {:?}", s.dropped)?;
            }
        }
        if let Some(c) = &self.cheeger {
            let ratios: Vec<String> = c.ratios.iter().map(|r| format!("{r:.4}")).collect();
            writeln!(
                f,
                "Cheeger ({:?}) ratios [{}], max {:.4}, bound {}, {}",
                c.kind,
                ratios.join(", "),
                c.max_ratio,
                c.bound.map_or("-".into(), |b| format!("{b:.4}")),
                match c.satisfied {
                    Some(true) => "satisfied",
                    Some(false) => "violated",
                    None => "unchecked",
                }
            )?;
        }
        for p in &self.files {
            writeln!(f, "wrote {}", p.display())?;
        }
        Ok(())
    }
}

/// Everything a run produces, in memory.
pub struct RunOutput {
    pub summary: Summary,
    pub ensemble: TrajectoryEnsemble,
    pub system: DynLapSystem,
    pub eigen: EigenResult,
    pub seba: Option<SebaBasis>,
    pub scan: Option<ThresholdScan>,
    /// Exported fields over all nodes: `f1..fk`, then `s1..`.
    pub fields: Vec<(String, Vec<f64>)>,
}

/// Writes the trajectories of the configured source to
/// `output_dir/trajectories.csv`.
pub fn generate(config: &RunConfig) -> Result<PathBuf, PipelineError> {
    let source = load_source(config)?;
    std::fs::create_dir_all(&config.output_dir).map_err(|source| {
        PipelineError::Export(IoError::IoFailure {
            path: config.output_dir.clone(),
            source,
        })
    })?;
    let path = config.output_dir.join("trajectories.csv");
    save_trajectories(&source.ensemble, &path).map_err(PipelineError::Export)?;
    Ok(path)
}

pub fn run_pipeline(config: &RunConfig) -> Result<RunOutput, PipelineError> {
    let clock = Instant::now();
    let source = load_source(config)?;
    let ensemble = source.ensemble;
    info!(
        "{} trajectories at {} times ({:.2?})",
        ensemble.len(),
        ensemble.num_times(),
        clock.elapsed()
    );

    let opts = AssembleOptions {
        alpha: config.alpha,
        keep_slice_meshes: config.cheeger.as_ref().is_some_and(|c| c.mode == CheegerMode::Slice),
    };
    let system = assemble_system(&ensemble, config.bc, &opts).map_err(PipelineError::Assemble)?;
    info!(
        "assembled {} active nodes ({:.2?})",
        system.active_nodes.len(),
        clock.elapsed()
    );

    let eopts = EigenOptions {
        tol: config.tol,
        seed: config.seed,
        max_iter: None,
    };
    let eigen = solve_gevp(&system.a, &system.m, config.k, &eopts).map_err(PipelineError::Eigen)?;
    info!(
        "{} eigenpairs, {} solves ({:.2?})",
        eigen.len(),
        eigen.iterations,
        clock.elapsed()
    );

    let mut fields: Vec<(String, Vec<f64>)> = eigen
        .eigenvectors
        .iter()
        .enumerate()
        .map(|(k, v)| (format!("f{}", k + 1), system.expand(v)))
        .collect();

    let mut seba_basis = None;
    let mut seba_summary = None;
    if let Some(r) = config.seba_r {
        let n = system.active_nodes.len();
        let v = DMatrix::from_fn(n, r, |i, j| eigen.eigenvectors[j][i]);
        let basis = seba(&v, Some(&system.m), &SebaOptions::default()).map_err(PipelineError::Seba)?;
        let q = euclidean_basis(&v, Some(&system.m)).map_err(PipelineError::Seba)?;
        for (j, col) in basis.vectors.column_iter().enumerate() {
            let active: Vec<f64> = col.iter().copied().collect();
            fields.push((format!("s{}", j + 1), system.expand(&active)));
        }
        seba_summary = Some(SebaSummary {
            r,
            mu: basis.mu,
            iterations: basis.iterations,
            dropped: basis.dropped.clone(),
            span_residual: span_residual(&q, &basis.vectors),
            reject_below: config.reject_below,
            columns: reliability(&basis, config.reject_below),
        });
        seba_basis = Some(basis);
        info!("SEBA done ({:.2?})", clock.elapsed());
    }

    let mut scan = None;
    if let Some(c) = &config.cheeger {
        let field = &fields[c.n - 1].1;
        // A is negative semidefinite; a positive value is rounding
        let lambda = eigen.eigenvalues[c.n - 1].min(0.0);
        let mesh = &system.mesh0;
        let times = ensemble.times().to_vec();
        let result = match (c.mode, &source.field) {
            (CheegerMode::Dynamic, Some(flow)) => {
                let aopts = AdvectOptions {
                    dt: config.dt,
                    max_seg: c.max_seg,
                    ..Default::default()
                };
                threshold_scan(
                    field,
                    mesh,
                    c.n,
                    c.thresholds,
                    Some(lambda),
                    RatioKind::Dynamic,
                    config.bc,
                    |s| dynamic_cheeger_ratio(s, mesh, flow, &times, &aopts, config.bc),
                )
            }
            (CheegerMode::Slice, _) => {
                let slices = system.slice_meshes.as_deref().expect("kept for slice mode");
                threshold_scan(
                    field,
                    mesh,
                    c.n,
                    c.thresholds,
                    Some(lambda),
                    RatioKind::Slice,
                    config.bc,
                    |s| slice_cheeger_ratio(s, slices, &times, config.bc),
                )
            }
            _ => threshold_scan(
                field,
                mesh,
                c.n,
                c.thresholds,
                Some(lambda),
                RatioKind::Static,
                config.bc,
                |s| static_cheeger_ratio(s, mesh, config.bc),
            ),
        };
        scan = Some(result.map_err(PipelineError::Cheeger)?);
        info!("threshold scan done ({:.2?})", clock.elapsed());
    }

    let table = EigenTable {
        eigenvalues: eigen.eigenvalues.clone(),
        residuals: eigen.residuals.clone(),
    };
    let dir = &config.output_dir;
    let mut files = export_fields(&system.mesh0, ensemble.ids(), &fields, Some(&table), dir, config.vtk)
        .map_err(PipelineError::Export)?;
    if let Some(s) = &scan {
        let path = dir.join("cheeger.json");
        write_json(&s.best, &path).map_err(PipelineError::Export)?;
        files.push(path);
    }

    let mut summary = Summary {
        source: source.label,
        bc: config.bc,
        trajectories: ensemble.len(),
        times: ensemble.num_times(),
        rejected_trajectories: source.rejected.len(),
        active_nodes: system.active_nodes.len(),
        shift: eigen.shift,
        eigenvalues: eigen.eigenvalues.clone(),
        residuals: eigen.residuals.clone(),
        bounds: eigen.eigenvalues.iter().map(|l| (-2.0 * l).max(0.0).sqrt()).collect(),
        seba: seba_summary,
        cheeger: scan.as_ref().map(|s| s.best.clone()),
        files: Vec::new(),
    };
    let summary_path = dir.join("summary.json");
    files.push(summary_path.clone());
    summary.files = files;
    write_json(&summary, &summary_path).map_err(PipelineError::Export)?;
    info!("run finished ({:.2?})", clock.elapsed());

    Ok(RunOutput {
        summary,
        ensemble,
        system,
        eigen,
        seba: seba_basis,
        scan,
        fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_k_fails_before_any_work() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig {
            builtin: Some(Builtin::DoubleGyre),
            k: 0,
            output_dir: dir.path().join("out"),
            ..Default::default()
        };
        let err = run_pipeline(&config).err().unwrap();
        assert!(matches!(err, PipelineError::Config(_)));
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().starts_with("config:"));
        assert!(!dir.path().join("out").exists());
    }

    #[test]
    fn missing_file_is_an_io_failure() {
        let config = RunConfig {
            traj: Some("/nonexistent/traj.csv".into()),
            ..Default::default()
        };
        let err = run_pipeline(&config).err().unwrap();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().starts_with("load:"));
    }

    #[test]
    fn small_identity_run() {
        let dir = tempfile::tempdir().unwrap();
        let config = RunConfig {
            builtin: Some(Builtin::Identity),
            seeds: [12, 12],
            times: 2,
            k: 3,
            seba_r: Some(2),
            output_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        let out = run_pipeline(&config).unwrap();
        assert_eq!(out.fields.len(), 5);
        assert!(out.summary.eigenvalues[0].abs() < 1e-8);
        let text = out.summary.to_string();
        assert!(text.contains("SEBA r = 2"));
        for f in ["nodes.csv", "eigenvalues.csv", "summary.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn slice_mode_matches_static_without_motion() {
        let dir = tempfile::tempdir().unwrap();
        let base = RunConfig {
            builtin: Some(Builtin::Identity),
            seeds: [15, 15],
            times: 3,
            k: 2,
            output_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        let report = |mode| {
            let config = RunConfig {
                cheeger: Some(crate::config::CheegerConfig {
                    mode,
                    thresholds: 6,
                    ..Default::default()
                }),
                ..base.clone()
            };
            run_pipeline(&config).unwrap().summary.cheeger.unwrap()
        };
        let st = report(CheegerMode::Static);
        let sl = report(CheegerMode::Slice);
        assert_eq!(sl.kind, RatioKind::Slice);
        assert_eq!(st.sets, sl.sets);
        for (a, b) in st.ratios.iter().zip(&sl.ratios) {
            assert!((a - b).abs() <= 1e-12 * a);
        }
    }
}
