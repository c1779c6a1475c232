//! Trajectory CSV ingestion and result export.
//!
//! Trajectories are stored long-form as `id,t,x,y`, one row per
//! observation; a missing `(id, t)` row means the observation is absent.
//! Floats are written with Rust's shortest round-trip formatting so that a
//! save/load cycle is bit-exact.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use thiserror::Error;

use crate::flow::{FlowError, Polyline, TrajectoryEnsemble};
use crate::mesh::{export::write_vtk, Point, TriMesh};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}, line {line}: {message}", path.display())]
    MalformedRow { path: PathBuf, line: u64, message: String },
    #[error("time {t} is observed by {count} trajectories, at least 3 required")]
    NoCommonTimeGrid { t: f64, count: usize },
    #[error("no trajectory is usable ({rejected} rejected)")]
    NoUsableTrajectories { rejected: usize },
    #[error("field `{name}` has {len} values, expected {expected}")]
    FieldLength { name: String, len: usize, expected: usize },
    #[error(transparent)]
    Ensemble(#[from] FlowError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => IoError::IoFailure {
            path: path.to_path_buf(),
            source,
        },
        kind => IoError::MalformedRow {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// A loaded ensemble together with the trajectories that had to be
/// dropped.
#[derive(Debug, Clone)]
pub struct LoadedTrajectories {
    pub ensemble: TrajectoryEnsemble,
    /// Ids of trajectories absent at the earliest time, or never observed
    /// at two consecutive times.
    pub rejected: Vec<String>,
}

const TRAJECTORY_HEADER: [&str; 4] = ["id", "t", "x", "y"];

/// Reads a long-form `id,t,x,y` trajectory file.
///
/// The time grid is the sorted set of distinct `t` values. Trajectories are
/// ordered by first appearance in the file.
pub fn load_trajectories(path: &Path) -> Result<LoadedTrajectories, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(TRAJECTORY_HEADER) {
        return Err(IoError::MalformedRow {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "expected header `id,t,x,y`, found `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<(usize, f64, Point, u64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let malformed = |message: String| IoError::MalformedRow {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() != 4 {
            return Err(malformed(format!("expected 4 fields, found {}", record.len())));
        }
        let num = |k: usize| -> Result<f64, IoError> {
            let v: f64 = record[k]
                .parse()
                .map_err(|_| malformed(format!("`{}` is not a number", &record[k])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(malformed(format!("`{}` is not finite", &record[k])))
            }
        };
        let (t, x, y) = (num(1)?, num(2)?, num(3)?);
        let id = &record[0];
        if id.is_empty() {
            return Err(malformed("empty trajectory id".into()));
        }
        let i = *index.entry(id.to_string()).or_insert_with(|| {
            ids.push(id.to_string());
            ids.len() - 1
        });
        rows.push((i, t, [x, y], line));
    }

    let mut times: Vec<f64> = rows.iter().map(|r| r.1).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let nt = times.len();
    let n = ids.len();
    let mut positions = vec![[f64::NAN; 2]; n * nt];
    let mut present = vec![false; n * nt];
    for &(i, t, p, line) in &rows {
        let l = times.binary_search_by(|s| s.total_cmp(&t)).expect("time in grid");
        if present[i * nt + l] {
            return Err(IoError::MalformedRow {
                path: path.to_path_buf(),
                line,
                message: format!("duplicate observation of `{}` at t = {t}", ids[i]),
            });
        }
        present[i * nt + l] = true;
        positions[i * nt + l] = p;
    }

    let usable = |i: usize| {
        let row = &present[i * nt..(i + 1) * nt];
        row[0] && (nt < 2 || row.windows(2).any(|w| w[0] && w[1]))
    };
    let keep: Vec<usize> = (0..n).filter(|&i| usable(i)).collect();
    let rejected: Vec<String> = (0..n).filter(|&i| !usable(i)).map(|i| ids[i].clone()).collect();
    if !rejected.is_empty() {
        warn!(
            "{}: rejected {} trajectories absent at the earliest time or without two consecutive observations",
            path.display(),
            rejected.len()
        );
    }
    if keep.is_empty() {
        return Err(IoError::NoUsableTrajectories {
            rejected: rejected.len(),
        });
    }
    for (l, &t) in times.iter().enumerate() {
        let count = keep.iter().filter(|&&i| present[i * nt + l]).count();
        if count < 3 {
            return Err(IoError::NoCommonTimeGrid { t, count });
        }
    }

    let ensemble = TrajectoryEnsemble::new(
        keep.iter().map(|&i| ids[i].clone()).collect(),
        times,
        keep.iter()
            .flat_map(|&i| positions[i * nt..(i + 1) * nt].to_vec())
            .collect(),
        keep.iter()
            .flat_map(|&i| present[i * nt..(i + 1) * nt].to_vec())
            .collect(),
    )?;
    Ok(LoadedTrajectories { ensemble, rejected })
}

/// Writes every present observation, trajectory by trajectory.
pub fn save_trajectories(ensemble: &TrajectoryEnsemble, path: &Path) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let run = |w: &mut csv::Writer<_>| -> csv::Result<()> {
        w.write_record(TRAJECTORY_HEADER)?;
        for (i, id) in ensemble.ids().iter().enumerate() {
            for (l, t) in ensemble.times().iter().enumerate() {
                if let Some(p) = ensemble.position(i, l) {
                    w.write_record([id.as_str(), &t.to_string(), &p[0].to_string(), &p[1].to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    };
    run(&mut w).map_err(|e| csv_err(path, e))
}

/// Node table as written to `nodes.csv`: `id,x,y,<field names>`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTable {
    pub ids: Vec<String>,
    pub points: Vec<Point>,
    pub names: Vec<String>,
    /// One vector per name, each of length `ids.len()`.
    pub fields: Vec<Vec<f64>>,
}

impl NodeTable {
    pub fn new(ids: Vec<String>, points: Vec<Point>, fields: Vec<(String, Vec<f64>)>) -> Result<Self, IoError> {
        let n = points.len();
        if ids.len() != n {
            return Err(IoError::FieldLength {
                name: "id".into(),
                len: ids.len(),
                expected: n,
            });
        }
        for (name, f) in &fields {
            if f.len() != n {
                return Err(IoError::FieldLength {
                    name: name.clone(),
                    len: f.len(),
                    expected: n,
                });
            }
        }
        let (names, fields) = fields.into_iter().unzip();
        Ok(Self {
            ids,
            points,
            names,
            fields,
        })
    }

    pub fn field(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.fields[k].as_slice())
    }

    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let run = |w: &mut csv::Writer<_>| -> csv::Result<()> {
            let mut header = vec!["id".to_string(), "x".into(), "y".into()];
            header.extend(self.names.iter().cloned());
            w.write_record(&header)?;
            for (i, p) in self.points.iter().enumerate() {
                let mut row = vec![self.ids[i].clone(), p[0].to_string(), p[1].to_string()];
                row.extend(self.fields.iter().map(|f| f[i].to_string()));
                w.write_record(&row)?;
            }
            w.flush()?;
            Ok(())
        };
        run(&mut w).map_err(|e| csv_err(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut reader = csv::Reader::from_reader(file);
        let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
        if header.len() < 3 || &header[0] != "id" || &header[1] != "x" || &header[2] != "y" {
            return Err(IoError::MalformedRow {
                path: path.to_path_buf(),
                line: 1,
                message: "expected header starting with `id,x,y`".into(),
            });
        }
        let names: Vec<String> = header.iter().skip(3).map(String::from).collect();
        let mut ids = Vec::new();
        let mut points = Vec::new();
        let mut fields = vec![Vec::new(); names.len()];
        for record in reader.records() {
            let record = record.map_err(|e| csv_err(path, e))?;
            let line = record.position().map_or(0, |p| p.line());
            let num = |k: usize| -> Result<f64, IoError> {
                record[k].parse().map_err(|_| IoError::MalformedRow {
                    path: path.to_path_buf(),
                    line,
                    message: format!("`{}` is not a number", &record[k]),
                })
            };
            ids.push(record[0].to_string());
            points.push([num(1)?, num(2)?]);
            for (k, f) in fields.iter_mut().enumerate() {
                f.push(num(3 + k)?);
            }
        }
        Ok(Self {
            ids,
            points,
            names,
            fields,
        })
    }
}

/// Rows of `eigenvalues.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenTable {
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl EigenTable {
    pub fn write(&self, path: &Path) -> Result<(), IoError> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let run = |w: &mut csv::Writer<_>| -> csv::Result<()> {
            w.write_record(["k", "lambda", "residual"])?;
            for (k, (l, r)) in self.eigenvalues.iter().zip(&self.residuals).enumerate() {
                w.write_record([(k + 1).to_string(), l.to_string(), r.to_string()])?;
            }
            w.flush()?;
            Ok(())
        };
        run(&mut w).map_err(|e| csv_err(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, IoError> {
        let file = File::open(path).map_err(io_err(path))?;
        let mut reader = csv::Reader::from_reader(file);
        let mut table = Self {
            eigenvalues: Vec::new(),
            residuals: Vec::new(),
        };
        for record in reader.records() {
            let record = record.map_err(|e| csv_err(path, e))?;
            let line = record.position().map_or(0, |p| p.line());
            let parse = |k: usize| -> Result<f64, IoError> {
                record
                    .get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| IoError::MalformedRow {
                        path: path.to_path_buf(),
                        line,
                        message: "expected `k,lambda,residual`".into(),
                    })
            };
            table.eigenvalues.push(parse(1)?);
            table.residuals.push(parse(2)?);
        }
        Ok(table)
    }
}

/// Writes `nodes.csv` (node ids and positions of `mesh`, then the named
/// fields in the given order), `eigenvalues.csv` if `eigen` is given, and
/// `mesh.vtk` if `vtk` is set. Returns the written paths.
pub fn export_fields(
    mesh: &TriMesh,
    ids: &[String],
    fields: &[(String, Vec<f64>)],
    eigen: Option<&EigenTable>,
    dir: &Path,
    vtk: bool,
) -> Result<Vec<PathBuf>, IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let table = NodeTable::new(ids.to_vec(), mesh.nodes.clone(), fields.to_vec())?;
    let mut written = Vec::new();

    let nodes = dir.join("nodes.csv");
    table.write(&nodes)?;
    written.push(nodes);

    if let Some(eigen) = eigen {
        let path = dir.join("eigenvalues.csv");
        eigen.write(&path)?;
        written.push(path);
    }
    if vtk {
        let path = dir.join("mesh.vtk");
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut out = BufWriter::new(file);
        write_vtk(mesh, fields, &mut out)
            .and_then(|_| out.flush())
            .map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Two-column `x,y` listing of a curve's vertices; a closed curve repeats
/// its first vertex at the end.
pub fn write_polyline_csv(curve: &Polyline, path: &Path) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let run = |w: &mut csv::Writer<_>| -> csv::Result<()> {
        w.write_record(["x", "y"])?;
        let closing = curve.closed.then(|| curve.vertices[0]);
        for p in curve.vertices.iter().chain(closing.as_ref()) {
            w.write_record([p[0].to_string(), p[1].to_string()])?;
        }
        w.flush()?;
        Ok(())
    };
    run(&mut w).map_err(|e| csv_err(path, e))
}

/// Serializes `value` as pretty JSON.
pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<(), IoError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(std::io::Error::from)
        .and_then(|_| writeln!(out))
        .and_then(|_| out.flush())
        .map_err(io_err(path))
}
