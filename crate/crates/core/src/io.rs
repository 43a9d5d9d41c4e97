//! Run configuration files and result persistence.
//!
//! A configuration is a flat INI file:
//!
//! ```ini
//! [mesh]
//! ; lo hi in 1D, xlo xhi ylo yhi in 2D
//! domain = -3 3
//! ; one count per axis
//! cells = 64
//! ; alternatively: file = mesh.txt
//!
//! [time]
//! n = 32
//! T = 1.0
//!
//! [model]
//! q = 2
//! ; box | box(v) | constant(c) | barenblatt(t0) | cosine(k) | file(path)
//! u0 = barenblatt(1.0)
//!
//! [solver]
//! tolerance = 1e-11
//! max_newton = 50
//! max_halvings = 30
//! ; auto | direct | krylov
//! linear = auto
//! newton = true
//! fallback = true
//! max_fallback_sweeps = 200000
//! seed = 7
//!
//! [output]
//! dir = out
//! ```
//!
//! The `[solver]` and `[output]` sections are optional. Relative paths are resolved
//! against the directory holding the configuration file.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ini::Ini;
use thiserror::Error;

use crate::convergence::{ConvergenceError, ConvergenceTable, Coupling, ReferenceSolution, StudySpec};
use crate::discrete_ops::{fmt_real, CellVector, DiscreteError, SpaceTimeField};
use crate::mesh::{self, AdmissibleMesh, BoxDomain, MeshError};
use crate::solver::{self, LinearSolver, RunReport, SolverConfig};
use crate::time_algebra::{NormRow, TimeError, TimeGrid};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed configuration: {0}")]
    Syntax(String),
    #[error("missing key `{key}` in section [{section}]")]
    MissingKey { section: &'static str, key: &'static str },
    #[error("invalid value for `{key}` in [{section}]: {message}")]
    InvalidValue {
        section: String,
        key: String,
        message: String,
    },
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key `{key}` in section [{section}]")]
    UnknownKey { section: String, key: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error("initial data: {0}")]
    Initial(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSource {
    Grid { domain: BoxDomain, counts: Vec<usize> },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    /// `value` on the central half of the bounding box, zero elsewhere.
    Box {
        value: f64,
    },
    Constant(f64),
    /// Unit-mass Barenblatt profile centred in the bounding box, taken at time `t0`.
    Barenblatt {
        t0: f64,
    },
    /// `1 + cos(kπ(x − lo)/L)` along every axis, the linear-mode reference.
    Cosine {
        mode: u32,
    },
    /// Cell values from a `cell_id,value` CSV file.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mesh: MeshSource,
    pub steps: usize,
    pub horizon: f64,
    pub initial: InitialData,
    pub solver: SolverConfig,
    pub output_dir: Option<PathBuf>,
}

const SECTIONS: [(&str, &[&str]); 5] = [
    ("mesh", &["domain", "cells", "file"]),
    ("time", &["n", "T"]),
    ("model", &["q", "u0"]),
    (
        "solver",
        &[
            "tolerance",
            "max_newton",
            "max_halvings",
            "linear",
            "newton",
            "fallback",
            "max_fallback_sweeps",
            "seed",
        ],
    ),
    ("output", &["dir"]),
];

struct Sections<'a> {
    ini: &'a Ini,
}

impl<'a> Sections<'a> {
    fn get(&self, section: &'static str, key: &'static str) -> Option<&'a str> {
        self.ini.section(Some(section)).and_then(|p| p.get(key)).map(str::trim)
    }

    fn require(&self, section: &'static str, key: &'static str) -> Result<&'a str, ConfigError> {
        self.get(section, key).ok_or(ConfigError::MissingKey { section, key })
    }

    fn parse<T: std::str::FromStr>(&self, section: &'static str, key: &'static str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(section, key)
            .map(|v| v.parse::<T>().map_err(|e| invalid(section, key, e)))
            .transpose()
    }
}

fn invalid(section: &str, key: &str, message: impl std::fmt::Display) -> ConfigError {
    ConfigError::InvalidValue {
        section: section.into(),
        key: key.into(),
        message: message.to_string(),
    }
}

fn numbers<T: std::str::FromStr>(section: &str, key: &str, text: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| invalid(section, key, format!("`{s}`: {e}"))))
        .collect()
}

/// Splits `name(arg)` into its name and optional argument.
fn call_syntax(text: &str) -> Result<(&str, Option<&str>), String> {
    match text.find('(') {
        None => Ok((text.trim(), None)),
        Some(open) => {
            let rest = text[open + 1..].trim_end();
            let inner = rest
                .strip_suffix(')')
                .ok_or_else(|| format!("unbalanced parentheses in `{text}`"))?;
            Ok((text[..open].trim(), Some(inner.trim())))
        }
    }
}

fn parse_initial(text: &str, base: &Path) -> Result<InitialData, ConfigError> {
    let bad = |m: String| invalid("model", "u0", m);
    let (name, arg) = call_syntax(text).map_err(bad)?;
    let number = |arg: Option<&str>, default: Option<f64>| -> Result<f64, ConfigError> {
        match (arg, default) {
            (Some(a), _) => a.parse::<f64>().map_err(|e| bad(format!("`{a}`: {e}"))),
            (None, Some(d)) => Ok(d),
            (None, None) => Err(bad(format!("`{name}` needs an argument"))),
        }
    };
    let data = match name {
        "box" => InitialData::Box {
            value: number(arg, Some(1.0))?,
        },
        "constant" => InitialData::Constant(number(arg, None)?),
        "barenblatt" => {
            let t0 = number(arg, Some(1.0))?;
            if !(t0 > 0.0) {
                return Err(bad(format!("t0 must be positive, got {t0}")));
            }
            InitialData::Barenblatt { t0 }
        }
        "cosine" => {
            let mode = arg
                .unwrap_or("1")
                .parse::<u32>()
                .map_err(|e| bad(format!("mode: {e}")))?;
            InitialData::Cosine { mode }
        }
        "file" => {
            let path = arg
                .filter(|a| !a.is_empty())
                .ok_or_else(|| bad("`file` needs a path".into()))?;
            InitialData::File(base.join(path))
        }
        other => return Err(bad(format!("unknown preset `{other}`"))),
    };
    if let InitialData::Box { value } | InitialData::Constant(value) = data {
        if !value.is_finite() {
            return Err(bad(format!("non-finite value {value}")));
        }
    }
    Ok(data)
}

fn parse_bool(section: &'static str, key: &'static str, v: &str) -> Result<bool, ConfigError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(invalid(section, key, format!("expected a boolean, got `{other}`"))),
    }
}

/// Parses configuration text; relative paths are taken relative to `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    for (name, props) in ini.iter() {
        let Some(name) = name else {
            if let Some((key, _)) = props.iter().next() {
                return Err(ConfigError::UnknownKey {
                    section: "<none>".into(),
                    key: key.into(),
                });
            }
            continue;
        };
        let (_, keys) = SECTIONS
            .iter()
            .find(|(s, _)| *s == name)
            .ok_or_else(|| ConfigError::UnknownSection(name.into()))?;
        for (key, _) in props.iter() {
            if !keys.contains(&key) {
                return Err(ConfigError::UnknownKey {
                    section: name.into(),
                    key: key.into(),
                });
            }
        }
    }
    let s = Sections { ini: &ini };

    let mesh = match s.get("mesh", "file") {
        Some(path) => {
            if s.get("mesh", "domain").is_some() || s.get("mesh", "cells").is_some() {
                return Err(invalid("mesh", "file", "`file` excludes `domain` and `cells`"));
            }
            MeshSource::File(base.join(path))
        }
        None => {
            let bounds: Vec<f64> = numbers("mesh", "domain", s.require("mesh", "domain")?)?;
            let counts: Vec<usize> = numbers("mesh", "cells", s.require("mesh", "cells")?)?;
            if bounds.len() != 2 * counts.len() {
                return Err(invalid(
                    "mesh",
                    "domain",
                    format!("{} bounds given for {} axes", bounds.len(), counts.len()),
                ));
            }
            let lo: Vec<f64> = bounds.iter().step_by(2).copied().collect();
            let hi: Vec<f64> = bounds.iter().skip(1).step_by(2).copied().collect();
            if lo
                .iter()
                .zip(&hi)
                .any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite())
            {
                return Err(invalid("mesh", "domain", "each axis needs finite bounds with lo < hi"));
            }
            let domain = BoxDomain::new(&lo, &hi);
            if counts.contains(&0) {
                return Err(invalid("mesh", "cells", "counts must be positive"));
            }
            MeshSource::Grid { domain, counts }
        }
    };

    let steps: usize = s.parse("time", "n")?.ok_or(ConfigError::MissingKey {
        section: "time",
        key: "n",
    })?;
    let horizon: f64 = s.parse("time", "T")?.ok_or(ConfigError::MissingKey {
        section: "time",
        key: "T",
    })?;
    if steps == 0 {
        return Err(invalid("time", "n", "at least one step is required"));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(invalid("time", "T", format!("horizon must be positive, got {horizon}")));
    }

    let q: f64 = s.parse("model", "q")?.ok_or(ConfigError::MissingKey {
        section: "model",
        key: "q",
    })?;
    let initial = parse_initial(s.require("model", "u0")?, base)?;

    let mut solver = SolverConfig::with_q(q);
    if let Some(v) = s.parse("solver", "tolerance")? {
        solver.tolerance = v;
    }
    if let Some(v) = s.parse("solver", "max_newton")? {
        solver.max_newton_iterations = v;
    }
    if let Some(v) = s.parse("solver", "max_halvings")? {
        solver.max_halvings = v;
    }
    if let Some(v) = s.parse("solver", "max_fallback_sweeps")? {
        solver.max_fallback_sweeps = v;
    }
    if let Some(v) = s.get("solver", "linear") {
        solver.linear_solver = match v.to_ascii_lowercase().as_str() {
            "auto" => LinearSolver::Auto,
            "direct" => LinearSolver::Direct,
            "krylov" => LinearSolver::Krylov,
            other => return Err(invalid("solver", "linear", format!("unknown solver `{other}`"))),
        };
    }
    if let Some(v) = s.get("solver", "newton") {
        solver.newton = parse_bool("solver", "newton", v)?;
    }
    if let Some(v) = s.get("solver", "fallback") {
        solver.fallback = parse_bool("solver", "fallback", v)?;
    }
    solver.seed = s.parse("solver", "seed")?;
    solver.validate().map_err(|e| invalid("model", "q", e))?;

    let output_dir = s.get("output", "dir").map(|d| base.join(d));
    Ok(RunConfig {
        mesh,
        steps,
        horizon,
        initial,
        solver,
        output_dir,
    })
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}

/// Reads a `cell_id,value` CSV file as written by [`CellVector::write_csv`].
pub fn read_cell_vector(path: impl AsRef<Path>) -> Result<Vec<f64>, ConfigError> {
    let path = path.as_ref();
    let fail = |m: String| ConfigError::Initial(format!("{}: {m}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| fail(e.to_string()))?;
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| fail(e.to_string()))?;
        let id: usize = record
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| fail(format!("row {}: bad cell id", row + 1)))?;
        if id != row {
            return Err(fail(format!("row {}: expected cell id {row}, got {id}", row + 1)));
        }
        let value: f64 = record
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| fail(format!("row {}: bad value", row + 1)))?;
        values.push(value);
    }
    Ok(values)
}

impl RunConfig {
    pub fn build_mesh(&self) -> Result<AdmissibleMesh, ConfigError> {
        Ok(match &self.mesh {
            MeshSource::Grid { domain, counts } => mesh::build_uniform_grid(domain, counts)?,
            MeshSource::File(path) => mesh::load_mesh(path)?,
        })
    }

    pub fn time_grid(&self) -> Result<TimeGrid, ConfigError> {
        Ok(TimeGrid::uniform(self.steps, self.horizon)?)
    }

    fn domain_of(mesh: &AdmissibleMesh) -> BoxDomain {
        let (lo, hi) = mesh.bounding_box();
        let d = mesh.dim();
        BoxDomain::new(&lo[..d], &hi[..d])
    }

    /// Exact solution matching the initial preset, when there is one.
    pub fn reference(&self, mesh: &AdmissibleMesh) -> Result<Option<ReferenceSolution>, ConvergenceError> {
        let domain = Self::domain_of(mesh);
        Ok(match self.initial {
            InitialData::Barenblatt { t0 } => {
                let mut center = [0.0; 2];
                for ax in 0..domain.dim() {
                    center[ax] = 0.5 * (domain.lo[ax] + domain.hi[ax]);
                }
                Some(ReferenceSolution::barenblatt(self.solver.q, domain.dim(), t0, center)?)
            }
            InitialData::Cosine { mode } if self.solver.q == 1.0 => Some(ReferenceSolution::heat_cosine(
                &domain,
                1.0,
                1.0,
                &vec![mode; domain.dim()],
            )?),
            _ => None,
        })
    }

    /// Discrete initial vector on `mesh`.
    pub fn initial_vector(&self, mesh: &AdmissibleMesh) -> Result<CellVector, ConfigError> {
        let domain = Self::domain_of(mesh);
        let d = domain.dim();
        let u0 = match &self.initial {
            InitialData::Box { value } => solver::discretize_initial(mesh, |p| {
                let inside = (0..d).all(|ax| {
                    let (lo, hi) = (domain.lo[ax], domain.hi[ax]);
                    let w = hi - lo;
                    p[ax] >= lo + 0.25 * w && p[ax] <= hi - 0.25 * w
                });
                if inside {
                    *value
                } else {
                    0.0
                }
            }),
            InitialData::Constant(c) => CellVector::constant(mesh.num_cells(), *c),
            InitialData::Barenblatt { .. } | InitialData::Cosine { .. } => {
                let reference = self
                    .reference(mesh)
                    .map_err(|e| ConfigError::Initial(e.to_string()))?
                    .ok_or_else(|| ConfigError::Initial("the cosine preset requires q = 1".into()))?;
                solver::discretize_initial(mesh, |p| reference.eval(p, 0.0))
            }
            InitialData::File(path) => {
                let values = read_cell_vector(path)?;
                CellVector::on_mesh(mesh, values).map_err(|e| ConfigError::Initial(e.to_string()))?
            }
        };
        Ok(u0)
    }

    /// Study description for a refinement run starting from this configuration.
    pub fn study(&self, levels: usize, coupling: Coupling) -> Result<StudySpec, ConfigError> {
        match &self.mesh {
            MeshSource::Grid { domain, counts } => Ok(StudySpec {
                domain: domain.clone(),
                base_counts: counts.clone(),
                base_steps: self.steps,
                horizon: self.horizon,
                levels,
                coupling,
            }),
            MeshSource::File(_) => Err(invalid(
                "mesh",
                "file",
                "refinement studies need a generated grid (`domain` and `cells`)",
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Encode {
        path: PathBuf,
        #[source]
        source: DiscreteError,
    },
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), OutputError> {
    fs::create_dir_all(dir).map_err(|source| OutputError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|source| OutputError::Io {
        path: path.clone(),
        source,
    })?;
    Ok((path, BufWriter::new(file)))
}

fn write_with(
    dir: &Path,
    name: &str,
    f: impl FnOnce(BufWriter<File>) -> Result<(), DiscreteError>,
) -> Result<PathBuf, OutputError> {
    let (path, out) = create(dir, name)?;
    f(out).map_err(|source| OutputError::Encode {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes `trajectory.csv`, `report.csv` and `final.csv` into `dir`.
pub fn write_run_outputs(dir: &Path, field: &SpaceTimeField, report: &RunReport) -> Result<Vec<PathBuf>, OutputError> {
    let last = CellVector::new(field.slot(field.num_slots() - 1).to_vec()).expect("finite trajectory");
    Ok(vec![
        write_with(dir, "trajectory.csv", |w| field.write_csv(w))?,
        write_with(dir, "report.csv", |w| report.write_csv(w))?,
        write_with(dir, "final.csv", |w| last.write_csv(w))?,
    ])
}

pub fn write_convergence(dir: &Path, table: &ConvergenceTable) -> Result<PathBuf, OutputError> {
    write_with(dir, "convergence.csv", |w| table.write_csv(w))
}

/// Writes `n,rule,norm1_Ainv,pass` rows.
pub fn write_norm_table<W: std::io::Write>(rows: &[NormRow], out: W) -> Result<(), DiscreteError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "rule", "norm1_Ainv", "pass"])?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.rule.to_string(),
            fmt_real(r.norm),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
