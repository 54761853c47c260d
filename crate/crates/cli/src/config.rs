use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    LowNn,
    MinCut,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProc,
    Tcp,
}

fn parse_enum<T>(key: &str, v: &str, table: &[(&str, T)]) -> Result<T, CliError>
where
    T: Copy,
{
    table
        .iter()
        .find(|(name, _)| *name == v)
        .map(|(_, x)| *x)
        .ok_or_else(|| {
            let names: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
            CliError::Usage(format!("{key}: expected one of {}, got {v:?}", names.join("|")))
        })
}

impl FromStr for Method {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        parse_enum("method", s, &[("lownn", Method::LowNn), ("mincut", Method::MinCut), ("both", Method::Both)])
    }
}

impl FromStr for Precision {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        parse_enum("precision", s, &[("single", Precision::Single), ("double", Precision::Double)])
    }
}

impl FromStr for TransportKind {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        parse_enum("transport", s, &[("inproc", TransportKind::InProc), ("tcp", TransportKind::Tcp)])
    }
}

/// Settings shared by all commands, after merging defaults, the config
/// file and command-line flags (in increasing priority).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub structure: Option<PathBuf>,
    pub basis: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub r_cut: f64,
    pub l_max: usize,
    pub width: usize,
    pub layers: usize,
    pub n_gaussians: usize,
    pub seed: u64,
    pub depth: Option<u32>,
    pub parts: Option<usize>,
    pub method: Method,
    pub precision: Precision,
    pub transport: TransportKind,
    pub out_dir: PathBuf,
    pub steps: usize,
    pub lr: f64,
    pub symmetrize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            structure: None,
            basis: None,
            target: None,
            checkpoint: None,
            r_cut: 4.0,
            l_max: 4,
            width: 16,
            layers: 2,
            n_gaussians: 32,
            seed: 0,
            depth: None,
            parts: None,
            method: Method::LowNn,
            precision: Precision::Single,
            transport: TransportKind::InProc,
            out_dir: PathBuf::from("out"),
            steps: 100,
            lr: 3e-4,
            symmetrize: false,
        }
    }
}

/// Flags accepted by every command; each overrides the same key in the
/// config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Flat `key = value` file; flags take precedence over it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Extended-XYZ structure.
    #[arg(long)]
    pub structure: Option<PathBuf>,
    /// Basis file with `Symbol = l l ...` lines.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Target Hamiltonian blocks (text format).
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Model checkpoint to start from.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub r_cut: Option<f64>,
    #[arg(long)]
    pub l_max: Option<usize>,
    /// Channels per (l, m).
    #[arg(long)]
    pub width: Option<usize>,
    /// Message-passing layers.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub n_gaussians: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bisection depth (2^depth parts).
    #[arg(long)]
    pub depth: Option<u32>,
    /// Part count (min-cut accepts any count).
    #[arg(long)]
    pub parts: Option<usize>,
    /// lownn | mincut | both
    #[arg(long)]
    pub method: Option<String>,
    /// single | double
    #[arg(long)]
    pub precision: Option<String>,
    /// inproc | tcp
    #[arg(long)]
    pub transport: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Average H_ij with H_jiᵀ in written predictions.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub symmetrize: Option<bool>,
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::Usage(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<(), CliError> {
        let path = |v: &str| base.join(v);
        match key {
            "structure" => self.structure = Some(path(v)),
            "basis" => self.basis = Some(path(v)),
            "target" => self.target = Some(path(v)),
            "checkpoint" => self.checkpoint = Some(path(v)),
            "out_dir" => self.out_dir = path(v),
            "r_cut" => self.r_cut = value(key, v)?,
            "l_max" => self.l_max = value(key, v)?,
            "width" => self.width = value(key, v)?,
            "layers" => self.layers = value(key, v)?,
            "n_gaussians" => self.n_gaussians = value(key, v)?,
            "seed" => self.seed = value(key, v)?,
            "depth" => self.depth = Some(value(key, v)?),
            "parts" => self.parts = Some(value(key, v)?),
            "method" => self.method = v.parse()?,
            "precision" => self.precision = v.parse()?,
            "transport" => self.transport = v.parse()?,
            "steps" => self.steps = value(key, v)?,
            "lr" => self.lr = value(key, v)?,
            "symmetrize" => self.symmetrize = value(key, v)?,
            other => return Err(CliError::Usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Apply a `key = value` file. Relative paths are taken relative to the
    /// file's directory.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
            self.set(k.trim(), v.trim(), base)
                .map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_flags(&mut self, o: &Overrides) -> Result<(), CliError> {
        macro_rules! take {
            ($($f:ident),*) => {$(if let Some(v) = &o.$f { self.$f = v.clone().into(); })*};
        }
        take!(structure, basis, target, checkpoint, out_dir, r_cut, l_max, width, layers, n_gaussians, seed, steps, lr, symmetrize);
        if let Some(d) = o.depth {
            self.depth = Some(d);
        }
        if let Some(p) = o.parts {
            self.parts = Some(p);
        }
        if let Some(m) = &o.method {
            self.method = m.parse()?;
        }
        if let Some(p) = &o.precision {
            self.precision = p.parse()?;
        }
        if let Some(t) = &o.transport {
            self.transport = t.parse()?;
        }
        Ok(())
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let mut c = RunConfig::default();
        if let Some(path) = &o.config {
            c.apply_file(path)?;
        }
        c.apply_flags(o)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.l_max > 6 {
            return Err(CliError::Usage(format!("l_max {} exceeds 6", self.l_max)));
        }
        if self.width == 0 || self.n_gaussians < 2 {
            return Err(CliError::Usage("width must be ≥ 1 and n_gaussians ≥ 2".into()));
        }
        if !(self.r_cut > 0.0) {
            return Err(CliError::Usage("r_cut must be positive".into()));
        }
        if self.parts == Some(0) {
            return Err(CliError::Usage("parts must be ≥ 1".into()));
        }
        for p in [&self.structure, &self.basis, &self.target, &self.checkpoint].into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::Usage(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn require<'a>(&self, what: &str, p: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
        p.as_deref().ok_or_else(|| CliError::Usage(format!("--{what} is required")))
    }

    /// Number of parts implied by depth/parts for one method.
    pub fn n_parts(&self, method: Method) -> Result<usize, CliError> {
        match (method, self.depth, self.parts) {
            (_, Some(d), Some(p)) if 1usize.checked_shl(d) != Some(p) => {
                Err(CliError::Usage(format!("depth {d} and parts {p} disagree")))
            }
            (_, Some(d), _) => 1usize.checked_shl(d).ok_or_else(|| CliError::Usage(format!("depth {d} too large"))),
            (Method::LowNn, None, Some(p)) if !p.is_power_of_two() => {
                Err(CliError::Usage(format!("lownn needs a power-of-two part count, got {p}")))
            }
            (_, None, Some(p)) => Ok(p),
            (_, None, None) => Ok(1),
        }
    }
}
