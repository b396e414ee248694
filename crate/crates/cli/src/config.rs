//! Command-line parsing and `key = value` config files.

use clap::{Args, Parser, Subcommand};
use recurlab::builders::CuttingStackingRecipe;
use recurlab::rational::parse_q;
use recurlab::{IntervalSet, Q};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "recurlab", version, about = "Exact recurrence experiments on cutting-and-stacking maps")]
pub struct Cli {
    /// Config file of `key = value` lines; command-line flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for the manifest, CSVs and SVGs.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Record per-operation timings in the manifest.
    #[arg(long, global = true)]
    pub timing: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a stage and report its column.
    Build(BuildArgs),
    /// Correlation table `n ↦ μ(TⁿA ∩ B)`.
    Correlate(SetArgs),
    /// Finite-horizon recurrence verdict.
    Classify(SetArgs),
    /// Inductive strictly over-recurrent set.
    ConstructOverrec(OverArgs),
    /// Carry a set to a discrete-spectrum target.
    Transfer(TransferArgs),
    /// Tower multiplexing of a rigid and a mixing seed.
    Towerplex(PlexArgs),
    /// Re-render a correlation CSV and summarize it.
    Report(ReportArgs),
}

#[derive(Args, Debug, Default)]
pub struct BuildArgs {
    /// Builtin recipe name or recipe file.
    #[arg(long)]
    pub recipe: Option<String>,
    #[arg(long)]
    pub stage: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct SetArgs {
    #[arg(long)]
    pub recipe: Option<String>,
    #[arg(long)]
    pub stage: Option<String>,
    /// `lo:hi,lo:hi` with rational endpoints.
    #[arg(long)]
    pub set: Option<String>,
    /// Second set for cross-correlations (defaults to `--set`).
    #[arg(long = "set-b")]
    pub set_b: Option<String>,
    #[arg(long)]
    pub horizon: Option<String>,
    #[arg(long)]
    pub eps: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct OverArgs {
    #[arg(long)]
    pub recipe: Option<String>,
    #[arg(long)]
    pub stage: Option<String>,
    #[arg(long)]
    pub a: Option<String>,
    #[arg(long)]
    pub stages: Option<String>,
    #[arg(long)]
    pub window: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct TransferArgs {
    #[arg(long)]
    pub recipe: Option<String>,
    #[arg(long)]
    pub stage: Option<String>,
    #[arg(long)]
    pub a: Option<String>,
    #[arg(long)]
    pub stages: Option<String>,
    #[arg(long)]
    pub window: Option<String>,
    /// Transfer this set instead of constructing one.
    #[arg(long)]
    pub set: Option<String>,
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub eps: Option<String>,
    #[arg(long)]
    pub horizon: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct PlexArgs {
    #[arg(long)]
    pub stages: Option<String>,
    #[arg(long)]
    pub h1: Option<String>,
    /// `geometric:<ratio>` gives `ε_n = ratioⁿ`.
    #[arg(long)]
    pub eps: Option<String>,
    #[arg(long)]
    pub kappa: Option<String>,
    #[arg(long = "seed-R")]
    pub seed_r: Option<String>,
    #[arg(long = "seed-S")]
    pub seed_s: Option<String>,
    #[arg(long = "stage-R")]
    pub stage_r: Option<String>,
    #[arg(long = "stage-S")]
    pub stage_s: Option<String>,
    /// `const:<p/q>` or `half-inverse:<offset>`.
    #[arg(long)]
    pub r: Option<String>,
    #[arg(long)]
    pub s: Option<String>,
    #[arg(long)]
    pub delta: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct ReportArgs {
    #[arg(long)]
    pub csv: Option<String>,
    #[arg(long)]
    pub title: Option<String>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Build(_) => "build",
            Command::Correlate(_) => "correlate",
            Command::Classify(_) => "classify",
            Command::ConstructOverrec(_) => "construct-overrec",
            Command::Transfer(_) => "transfer",
            Command::Towerplex(_) => "towerplex",
            Command::Report(_) => "report",
        }
    }

    /// Flag values with their defaults.
    fn pairs(&self) -> Vec<(&'static str, Option<&String>, Option<&'static str>)> {
        match self {
            Command::Build(a) => vec![("recipe", a.recipe.as_ref(), Some("staircase")), ("stage", a.stage.as_ref(), Some("4"))],
            Command::Correlate(a) | Command::Classify(a) => vec![
                ("recipe", a.recipe.as_ref(), Some("odometer")),
                ("stage", a.stage.as_ref(), Some("1")),
                ("set", a.set.as_ref(), None),
                ("set-b", a.set_b.as_ref(), None),
                ("horizon", a.horizon.as_ref(), Some("1")),
                ("eps", a.eps.as_ref(), None),
            ],
            Command::ConstructOverrec(a) => vec![
                ("recipe", a.recipe.as_ref(), Some("staircase")),
                ("stage", a.stage.as_ref(), Some("8")),
                ("a", a.a.as_ref(), Some("1/5")),
                ("stages", a.stages.as_ref(), Some("2")),
                ("window", a.window.as_ref(), Some("4")),
            ],
            Command::Transfer(a) => vec![
                ("recipe", a.recipe.as_ref(), Some("staircase")),
                ("stage", a.stage.as_ref(), Some("8")),
                ("a", a.a.as_ref(), Some("1/5")),
                ("stages", a.stages.as_ref(), Some("2")),
                ("window", a.window.as_ref(), Some("4")),
                ("set", a.set.as_ref(), None),
                ("target", a.target.as_ref(), Some("odometer")),
                ("eps", a.eps.as_ref(), Some("1/5")),
                ("horizon", a.horizon.as_ref(), None),
            ],
            Command::Towerplex(a) => vec![
                ("stages", a.stages.as_ref(), Some("3")),
                ("h1", a.h1.as_ref(), Some("8")),
                ("eps", a.eps.as_ref(), Some("geometric:1/4")),
                ("kappa", a.kappa.as_ref(), Some("8")),
                ("seed-R", a.seed_r.as_ref(), Some("odometer")),
                ("seed-S", a.seed_s.as_ref(), Some("staircase")),
                ("stage-R", a.stage_r.as_ref(), Some("8")),
                ("stage-S", a.stage_s.as_ref(), Some("6")),
                ("r", a.r.as_ref(), Some("const:1/2")),
                ("s", a.s.as_ref(), Some("half-inverse:2")),
                ("delta", a.delta.as_ref(), None),
            ],
            Command::Report(a) => vec![("csv", a.csv.as_ref(), None), ("title", a.title.as_ref(), Some("correlations"))],
        }
    }
}

/// Effective parameters of one run: flags, then config file, then defaults.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunConfig {
    pub subcommand: String,
    pub params: BTreeMap<String, String>,
    pub out: Option<PathBuf>,
    pub timing: bool,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::precondition("ConfigParse", format!("line {}: expected key = value", i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

impl RunConfig {
    pub fn from_cli(cli: &Cli) -> Result<RunConfig, CliError> {
        let file = match &cli.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::precondition("ConfigRead", format!("{}: {e}", p.display())))?;
                parse_config_text(&text)?
            }
            None => BTreeMap::new(),
        };
        let pairs = cli.command.pairs();
        for k in file.keys() {
            if k != "out" && !pairs.iter().any(|(name, _, _)| name == k) {
                return Err(CliError::precondition("ConfigParse", format!("unknown key `{k}` for {}", cli.command.name())));
            }
        }
        let mut params = BTreeMap::new();
        for (k, flag, default) in pairs {
            let v = flag.cloned().or_else(|| file.get(k).cloned()).or_else(|| default.map(str::to_string));
            if let Some(v) = v {
                params.insert(k.to_string(), v);
            }
        }
        let out = cli.out.clone().or_else(|| file.get("out").map(PathBuf::from));
        Ok(RunConfig { subcommand: cli.command.name().to_string(), params, out, timing: cli.timing })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.params.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key).ok_or_else(|| CliError::precondition("MissingParameter", format!("--{key} is required")))
    }

    pub fn rational(&self, key: &str) -> Result<Q, CliError> {
        let v = self.require(key)?;
        parse_q(v).map_err(|e| CliError::precondition("BadRational", format!("--{key} {v}: {e}")))
    }

    pub fn opt_rational(&self, key: &str) -> Result<Option<Q>, CliError> {
        self.get(key).map(|_| self.rational(key)).transpose()
    }

    pub fn integer(&self, key: &str) -> Result<u64, CliError> {
        let v = self.require(key)?;
        v.parse().map_err(|_| CliError::precondition("BadInteger", format!("--{key} {v}: not a nonnegative integer")))
    }

    pub fn opt_integer(&self, key: &str) -> Result<Option<u64>, CliError> {
        self.get(key).map(|_| self.integer(key)).transpose()
    }

    pub fn set(&self, key: &str) -> Result<IntervalSet, CliError> {
        let v = self.require(key)?;
        let s = IntervalSet::parse_spec(v).map_err(|e| CliError::precondition("BadSet", format!("--{key} {v}: {e}")))?;
        if !s.in_unit() {
            return Err(CliError::precondition("BadSet", format!("--{key} {v}: not inside [0, 1)")));
        }
        Ok(s)
    }

    pub fn recipe(&self, key: &str) -> Result<CuttingStackingRecipe, CliError> {
        load_recipe(self.require(key)?)
    }
}

/// A builtin name, or else a recipe file.
pub fn load_recipe(v: &str) -> Result<CuttingStackingRecipe, CliError> {
    if let Ok(r) = CuttingStackingRecipe::builtin(v) {
        return Ok(r);
    }
    let path = Path::new(v);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::precondition("RecipeRead", format!("{v}: {e}")))?;
        return CuttingStackingRecipe::from_text(&text).map_err(CliError::from);
    }
    Err(CliError::precondition("UnknownRecipe", format!("`{v}` is neither a builtin recipe nor a file")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines() {
        let m = parse_config_text("# run\na = 1/5\n\nstages=2 # two\n").unwrap();
        assert_eq!(m.get("a").unwrap(), "1/5");
        assert_eq!(m.get("stages").unwrap(), "2");
        assert!(parse_config_text("nonsense").is_err());
    }

    #[test]
    fn flags_win_over_file_and_defaults() {
        let dir = std::env::temp_dir().join(format!("recurlab-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "stages = 3\nwindow = 6\n").unwrap();
        let cli = Cli::parse_from(["recurlab", "--config", path.to_str().unwrap(), "construct-overrec", "--stages", "1"]);
        let cfg = RunConfig::from_cli(&cli).unwrap();
        assert_eq!(cfg.get("stages"), Some("1"));
        assert_eq!(cfg.get("window"), Some("6"));
        assert_eq!(cfg.get("a"), Some("1/5"));
        std::fs::write(&path, "bogus = 1\n").unwrap();
        let cli = Cli::parse_from(["recurlab", "--config", path.to_str().unwrap(), "construct-overrec"]);
        assert!(RunConfig::from_cli(&cli).is_err());
    }
}
