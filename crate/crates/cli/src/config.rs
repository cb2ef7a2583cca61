//! Run configuration: one TOML file plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use eqpide_core::{CoefficientFn, MarketSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// A coefficient given as a constant or as samples on a uniform grid of
/// `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Constant(f64),
    Samples(Vec<f64>),
}

impl Coefficient {
    fn build(&self, horizon: f64, key: &str) -> Result<CoefficientFn, CliError> {
        match self {
            Coefficient::Constant(v) => Ok(CoefficientFn::constant(horizon, *v)),
            Coefficient::Samples(v) => CoefficientFn::from_samples(horizon, v.clone())
                .map_err(|e| CliError::Config(format!("market.{key}: {e}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub size: f64,
    pub intensity: f64,
    pub coefficient: Coefficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub r0: Coefficient,
    pub r: Coefficient,
    pub sigma: Coefficient,
    pub mu: f64,
    pub horizon: f64,
    pub x0: f64,
    #[serde(default)]
    pub atoms: Vec<AtomConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub nz: usize,
    pub nt: usize,
    pub lo: f64,
    pub hi: f64,
    pub max_policy_iters: usize,
    pub policy_tol: f64,
    /// Every `csv_stride`-th time slice goes to the field CSVs.
    pub csv_stride: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nx: 41, nz: 41, nt: 100, lo: -2.0, hi: 2.0, max_policy_iters: 20, policy_tol: 1e-4, csv_stride: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeConfig {
    pub n_steps: usize,
    pub quad_steps: usize,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self { n_steps: 10_000, quad_steps: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { n_paths: 100_000, n_steps: 500, seed: 20240601, antithetic: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub times: Vec<f64>,
    /// Spike values as offsets from the strategy coefficient at each time.
    pub offsets: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Standard errors allowed in Monte Carlo checks.
    pub k_se: f64,
    pub identity_tol: f64,
    pub ode_tol: f64,
    pub pide_tol: f64,
    pub policy_tol: f64,
    pub reduction_tol: f64,
    pub adjoint_intervals: usize,
    pub hbar_points: usize,
    pub hbar_lo: f64,
    pub hbar_hi: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            times: vec![0.0, 0.25, 0.5, 0.75],
            offsets: vec![-1.0, -0.5, 0.5, 1.0],
            epsilons: vec![0.04, 0.02, 0.01],
            k_se: 3.0,
            identity_tol: 1e-8,
            ode_tol: 1e-8,
            pide_tol: 5e-3,
            policy_tol: 5e-3,
            reduction_tol: 1e-8,
            adjoint_intervals: 4,
            hbar_points: 401,
            hbar_lo: -2.0,
            hbar_hi: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Constant coefficients `alpha` for `u = alpha X`.
    pub constants: Vec<f64>,
    /// Multiples of the equilibrium coefficient.
    pub scales: Vec<f64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { constants: vec![0.0, 0.5, 1.0, 1.5], scales: vec![0.5, 1.5] }
    }
}

/// Strategy checked by `verify` and listed first by `compare`; the
/// equilibrium unless overridden.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    /// Multiplies the equilibrium coefficient.
    pub scale: Option<f64>,
    /// CSV with columns `s,alpha` on a uniform grid of `[0, T]`.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub ode: OdeConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub compare: CompareConfig,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// A parsed configuration and the digest identifying it in every output.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub hash: String,
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `section.key=value`; the value is read as TOML, falling back to
/// a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override `{assignment}` has an empty key")));
    }
    let (last, parents) = keys.split_last().unwrap();
    let mut cur = table;
    for k in parents {
        let entry = cur.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{assignment}`: `{k}` is not a section")))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn parse_error(source: &str, e: toml::de::Error) -> CliError {
    let msg = e.message().to_string();
    match e.span() {
        Some(span) => {
            let before = &source[..span.start.min(source.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
            CliError::Config(format!("{source_name} line {line}, column {column}: {msg}", source_name = "config"))
        }
        None => CliError::Config(format!("config: {msg}")),
    }
}

/// Parses `source`, applies the overrides, and validates the result.
pub fn load_str(source: &str, overrides: &[String]) -> Result<LoadedConfig, CliError> {
    let text = if overrides.is_empty() {
        source.to_string()
    } else {
        let mut table: toml::Table = toml::from_str(source).map_err(|e| parse_error(source, e))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?
    };
    let config: RunConfig = toml::from_str(&text).map_err(|e| parse_error(&text, e))?;
    config.validate()?;
    let hash = config_hash(&config)?;
    Ok(LoadedConfig { config, hash })
}

/// SHA-256 of the canonical TOML form, excluding the output directory, plus
/// the contents of a strategy file if one is named.
fn config_hash(config: &RunConfig) -> Result<String, CliError> {
    let mut hashed = config.clone();
    hashed.output = OutputConfig::default();
    let canonical = toml::to_string(&hashed).map_err(|e| CliError::Config(e.to_string()))?;
    let mut digest = Sha256::new();
    digest.update(canonical.as_bytes());
    if let Some(path) = &config.strategy.file {
        let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("strategy.file {}: {e}", path.display())))?;
        digest.update(&bytes);
    }
    Ok(hex::encode(digest.finalize()))
}

pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig, CliError> {
    let source = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    load_str(&source, overrides)
}

fn positive(name: &str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        Err(CliError::Config(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

fn positive_f(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{name} must be a positive number, got {v}")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        positive_f("market.horizon", self.market.horizon)?;
        let g = &self.grid;
        positive("grid.nx", g.nx)?;
        positive("grid.nz", g.nz)?;
        positive("grid.nt", g.nt)?;
        positive("grid.max_policy_iters", g.max_policy_iters)?;
        positive("grid.csv_stride", g.csv_stride)?;
        positive_f("grid.policy_tol", g.policy_tol)?;
        if g.nx != g.nz {
            return Err(CliError::Config(format!("grid.nx ({}) and grid.nz ({}) must match", g.nx, g.nz)));
        }
        if !(g.lo < g.hi) {
            return Err(CliError::Config(format!("grid bounds must be ordered, got lo = {} and hi = {}", g.lo, g.hi)));
        }
        positive("ode.n_steps", self.ode.n_steps)?;
        positive("ode.quad_steps", self.ode.quad_steps)?;
        positive("mc.n_paths", self.mc.n_paths)?;
        positive("mc.n_steps", self.mc.n_steps)?;
        let v = &self.verify;
        for (name, tol) in [
            ("verify.k_se", v.k_se),
            ("verify.identity_tol", v.identity_tol),
            ("verify.ode_tol", v.ode_tol),
            ("verify.pide_tol", v.pide_tol),
            ("verify.policy_tol", v.policy_tol),
            ("verify.reduction_tol", v.reduction_tol),
        ] {
            positive_f(name, tol)?;
        }
        positive("verify.adjoint_intervals", v.adjoint_intervals)?;
        if v.hbar_points < 2 || !(v.hbar_lo < v.hbar_hi) {
            return Err(CliError::Config("verify.hbar_* must describe an ordered grid of at least two points".into()));
        }
        if v.epsilons.is_empty() || v.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(CliError::Config("verify.epsilons must be a non-empty list of positive lengths".into()));
        }
        if let Some(s) = self.strategy.scale {
            if !s.is_finite() {
                return Err(CliError::Config("strategy.scale must be finite".into()));
            }
        }
        if self.strategy.scale.is_some() && self.strategy.file.is_some() {
            return Err(CliError::Config("strategy.scale and strategy.file are mutually exclusive".into()));
        }
        Ok(())
    }

    pub fn market_spec(&self) -> Result<MarketSpec, CliError> {
        let m = &self.market;
        let t = m.horizon;
        let mut spec = MarketSpec::constant(0.0, 0.0, 0.0, m.mu, t, m.x0);
        spec.r0 = m.r0.build(t, "r0")?;
        spec.r = m.r.build(t, "r")?;
        spec.sigma = m.sigma.build(t, "sigma")?;
        for (i, a) in m.atoms.iter().enumerate() {
            spec = spec.with_atom(a.size, a.intensity, 0.0);
            spec.jumps.atoms[i].coefficient = a.coefficient.build(t, &format!("atoms[{i}].coefficient"))?;
        }
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const E0: &str = "[market]\nr0 = 0.02\nr = 0.06\nsigma = 0.2\nmu = 1.0\nhorizon = 1.0\nx0 = 1.0\n";

    #[test]
    fn defaults_fill_missing_sections() {
        let c = load_str(E0, &[]).unwrap().config;
        assert_eq!(c.grid, GridConfig::default());
        assert_eq!(c.mc.n_steps, 500);
        assert!(c.market.atoms.is_empty());
    }

    #[test]
    fn missing_key_is_named() {
        let src = E0.replace("horizon = 1.0\n", "");
        let err = load_str(&src, &[]).unwrap_err().to_string();
        assert!(err.contains("horizon"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn syntax_error_has_position() {
        let err = load_str("[market]\nr0 = = 1\n", &[]).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn overrides_change_values_and_hash() {
        let a = load_str(E0, &[]).unwrap();
        let b = load_str(E0, &["mc.seed=7".into(), "market.sigma=0.3".into()]).unwrap();
        assert_eq!(b.config.mc.seed, 7);
        assert_eq!(b.config.market.sigma, Coefficient::Constant(0.3));
        assert_ne!(a.hash, b.hash);
        assert_eq!(a.hash, load_str(E0, &[]).unwrap().hash);
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = load_str(E0, &[]).unwrap();
        let b = load_str(&format!("# comment\n{}", E0.replace(" = ", "=")), &[]).unwrap();
        assert_eq!(a.hash, b.hash);
    }

    #[test]
    fn output_dir_does_not_change_hash() {
        let a = load_str(E0, &[]).unwrap();
        let b = load_str(E0, &["output.dir=\"elsewhere\"".into()]).unwrap();
        assert_eq!(b.config.output.dir, PathBuf::from("elsewhere"));
        assert_eq!(a.hash, b.hash);
    }

    #[test]
    fn invalid_counts_and_bounds_are_rejected() {
        assert!(load_str(E0, &["mc.n_paths=0".into()]).is_err());
        assert!(load_str(E0, &["grid.lo=3.0".into()]).is_err());
        assert!(load_str(E0, &["verify.k_se=-1.0".into()]).is_err());
        assert!(load_str(E0, &["bogus".into()]).is_err());
    }

    #[test]
    fn atoms_and_sampled_coefficients() {
        let src = format!("{E0}[[market.atoms]]\nsize = 1.0\nintensity = 2.0\ncoefficient = -0.1\n");
        let c = load_str(&src, &["market.r0=[0.01, 0.02, 0.03]".into()]).unwrap().config;
        let spec = c.market_spec().unwrap();
        assert_eq!(spec.jumps.len(), 1);
        assert!((spec.r0.eval(0.5) - 0.02).abs() < 1e-15);
    }
}
