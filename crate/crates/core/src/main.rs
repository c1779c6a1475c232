use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use dynlap::config::{Builtin, CheegerMode, RunConfig};
use dynlap::dynlap::BoundaryCondition;
use dynlap::io::{EigenTable, IoError, NodeTable};
use dynlap::mesh::{delaunay_triangulate, export::write_vtk};
use dynlap::pipeline::{generate, run_pipeline, PipelineError};

#[derive(Parser)]
#[command(
    name = "dynlap",
    version,
    about = "Finite-time coherent sets from trajectories via the dynamic Laplacian"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a built-in flow and write trajectories.csv
    Generate(Common),
    /// Eigenpairs, plus SEBA and Cheeger report when configured
    Run(Common),
    /// Eigenpairs only
    Eigs(Common),
    /// Eigenpairs followed by SEBA
    Seba {
        #[command(flatten)]
        common: Common,
        /// Number of leading eigenvectors to sparsify (default: k)
        #[arg(long)]
        r: Option<usize>,
    },
    /// Eigenpairs followed by a Cheeger threshold scan
    Cheeger {
        #[command(flatten)]
        common: Common,
        /// static, dynamic (needs a built-in flow) or slice (trajectory meshes)
        #[arg(long)]
        mode: Option<String>,
    },
    /// Re-export nodes.csv and eigenvalues.csv from a previous run
    Export {
        /// Directory of a previous run
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write mesh.vtk (mesh rebuilt from the node positions)
        #[arg(long)]
        vtk: bool,
        #[arg(long)]
        alpha: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in flow: double_gyre or identity
    #[arg(long, conflicts_with = "traj")]
    builtin: Option<String>,
    /// Trajectory CSV with header id,t,x,y
    #[arg(long)]
    traj: Option<PathBuf>,
    /// neumann or dirichlet
    #[arg(long)]
    bc: Option<String>,
    /// Number of eigenpairs
    #[arg(long)]
    k: Option<usize>,
    /// Alpha-shape radius for the slice meshes
    #[arg(long)]
    alpha: Option<f64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write mesh.vtk
    #[arg(long)]
    vtk: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn invalid(message: String) -> Failure {
    Failure { code: 1, message }
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p).map_err(PipelineError::from)?,
            None => RunConfig::default(),
        };
        if let Some(b) = &self.builtin {
            c.builtin = Some(b.parse::<Builtin>().map_err(|e| invalid(format!("config: {e}")))?);
            c.traj = None;
        }
        if let Some(t) = &self.traj {
            c.traj = Some(t.clone());
            c.builtin = None;
        }
        if let Some(bc) = &self.bc {
            c.bc = bc
                .parse::<BoundaryCondition>()
                .map_err(|e| invalid(format!("config: {e}")))?;
        }
        if let Some(k) = self.k {
            c.k = k;
        }
        if self.alpha.is_some() {
            c.alpha = self.alpha;
        }
        if let Some(out) = &self.out {
            c.output_dir = out.clone();
        }
        c.vtk |= self.vtk;
        Ok(c)
    }
}

fn export(from: &Path, out: &Path, vtk: bool, alpha: Option<f64>) -> Result<Vec<PathBuf>, Failure> {
    let io_fail = |e: IoError| Failure {
        code: match e {
            IoError::IoFailure { .. } => 3,
            _ => 1,
        },
        message: format!("export: {e}"),
    };
    let table = NodeTable::read(&from.join("nodes.csv")).map_err(io_fail)?;
    std::fs::create_dir_all(out).map_err(|source| {
        io_fail(IoError::IoFailure {
            path: out.to_path_buf(),
            source,
        })
    })?;
    let mut written = vec![out.join("nodes.csv")];
    table.write(&written[0]).map_err(io_fail)?;
    let eig = from.join("eigenvalues.csv");
    if eig.exists() {
        let path = out.join("eigenvalues.csv");
        EigenTable::read(&eig).map_err(io_fail)?.write(&path).map_err(io_fail)?;
        written.push(path);
    }
    if vtk {
        let mesh = delaunay_triangulate(&table.points, alpha).map_err(|e| Failure {
            code: 2,
            message: format!("export: {e}"),
        })?;
        let fields: Vec<(String, Vec<f64>)> = table.names.iter().cloned().zip(table.fields.iter().cloned()).collect();
        let path = out.join("mesh.vtk");
        let write = || -> std::io::Result<()> {
            let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
            write_vtk(&mesh, &fields, &mut w)?;
            std::io::Write::flush(&mut w)
        };
        write().map_err(|source| {
            io_fail(IoError::IoFailure {
                path: path.clone(),
                source,
            })
        })?;
        written.push(path);
    }
    Ok(written)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let run = |mut c: RunConfig, seba: Option<Option<usize>>, cheeger: Option<Option<String>>| -> Result<(), Failure> {
        match seba {
            Some(r) => c.seba_r = Some(r.or(c.seba_r).unwrap_or(c.k)),
            None if cheeger.is_some() => c.seba_r = None,
            None => {}
        }
        if let Some(mode) = cheeger {
            let mut cc = c.cheeger.take().unwrap_or_default();
            if c.builtin.is_none() {
                cc.mode = CheegerMode::Static;
            }
            match mode.as_deref() {
                Some("static") => cc.mode = CheegerMode::Static,
                Some("dynamic") => cc.mode = CheegerMode::Dynamic,
                Some("slice") => cc.mode = CheegerMode::Slice,
                Some(other) => return Err(invalid(format!("config: unknown Cheeger mode `{other}`"))),
                None => {}
            }
            c.cheeger = Some(cc);
        }
        let out = run_pipeline(&c)?;
        print!("{}", out.summary);
        Ok(())
    };
    match cli.command {
        Command::Generate(common) => {
            let path = generate(&common.resolve()?)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Run(common) => run(common.resolve()?, None, None),
        Command::Eigs(common) => {
            let mut c = common.resolve()?;
            c.seba_r = None;
            c.cheeger = None;
            run(c, None, None)
        }
        Command::Seba { common, r } => {
            let mut c = common.resolve()?;
            c.cheeger = None;
            run(c, Some(r), None)
        }
        Command::Cheeger { common, mode } => run(common.resolve()?, None, Some(mode)),
        Command::Export { from, out, vtk, alpha } => {
            for p in export(&from, &out, vtk, alpha)? {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    if let Ok(threads) = std::env::var("DYNLAP_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    error!("could not size the thread pool: {e}");
                }
            }
            _ => {
                eprintln!("error: DYNLAP_THREADS must be a positive integer, got `{threads}`");
                return ExitCode::from(1);
            }
        }
    }

    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
