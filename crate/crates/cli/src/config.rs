//! Run configuration files and built-in presets.

use std::path::Path;

use nde_core::equation::{EquationSpec, SmallDenominator};
use nde_core::fixed_point_solver::IterationOptions;
use nde_core::hypothesis_checker::{Majorant, TailOptions};
use nde_core::parameter_dependence::{params_from_template, FamilyOptions, FamilySpec};
use nde_core::{GammaSpec, OddRational, ParseError, ScalarFn, SequenceExpr};
use serde::Deserialize;
use thiserror::Error;

pub const PRESETS: &[(&str, &str)] = &[
    ("example1", include_str!("../presets/example1.toml")),
    ("example2", include_str!("../presets/example2.toml")),
    ("sturm-liouville", include_str!("../presets/sturm-liouville.toml")),
    ("zero", include_str!("../presets/zero.toml")),
    ("family-linear", include_str!("../presets/family-linear.toml")),
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Toml { path: String, source: toml::de::Error },
    #[error("{key}: {source}")]
    Expr { key: String, source: ParseError },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("the config has no [family] section")]
    NoFamily,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub equation: EquationSection,
    pub solver: SolverSection,
    #[serde(default)]
    pub tails: TailsSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    pub family: Option<FamilySection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquationSection {
    pub r: String,
    pub p: String,
    pub q: String,
    pub a: String,
    pub gamma_num: String,
    pub gamma_den: String,
    pub alpha: String,
    pub k: usize,
    pub f: String,
    #[serde(default)]
    pub start: usize,
    #[serde(default)]
    pub monotone_tails: bool,
    pub small_denominator: Option<SmallDenominatorSection>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallDenominatorSection {
    pub expr: String,
    pub threshold: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub d: f64,
    pub window: usize,
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub initial: f64,
    #[serde(default)]
    pub strict_budget: bool,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailsSection {
    pub eps_tail: f64,
    pub max_terms: usize,
    pub a_majorant: Option<MajorantSection>,
    pub q_majorant: Option<MajorantSection>,
    pub alpha_majorant: Option<MajorantSection>,
    pub beta_majorant: Option<MajorantSection>,
}

impl Default for TailsSection {
    fn default() -> Self {
        TailsSection { eps_tail: 1e-15, max_terms: 200_000, a_majorant: None, q_majorant: None, alpha_majorant: None, beta_majorant: None }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MajorantSection {
    pub term: String,
    pub tail: String,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub trials: usize,
    pub members: usize,
    pub seed: u64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection { trials: 100, members: 8, seed: 17 }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySection {
    pub g: String,
    /// Template in `m` (and optionally `n`) for `u^m`.
    pub params: String,
    pub members: usize,
    pub u0: String,
    #[serde(rename = "D1")]
    pub d1_const: f64,
    #[serde(rename = "D2")]
    pub d2_const: f64,
    pub d1: f64,
    pub d2: f64,
    pub initial: f64,
    #[serde(default = "default_growth_samples")]
    pub growth_samples: usize,
}

fn default_growth_samples() -> usize {
    20_000
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

fn seq(key: &str, text: &str) -> Result<SequenceExpr, ConfigError> {
    SequenceExpr::parse(text).map_err(|source| ConfigError::Expr { key: key.into(), source })
}

fn invalid(key: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { key: key.into(), message: message.to_string() }
}

fn majorant(key: &str, m: &Option<MajorantSection>) -> Result<Option<Majorant>, ConfigError> {
    m.as_ref().map(|m| Ok(Majorant { term: seq(&format!("{key}.term"), &m.term)?, tail: seq(&format!("{key}.tail"), &m.tail)? })).transpose()
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|source| ConfigError::Toml { path: origin.into(), source })?;
        cfg.equation()?;
        cfg.tail_options()?;
        if let Some(f) = &cfg.family {
            cfg.family_spec_from(f)?;
        }
        Ok(cfg)
    }

    /// A file path, or the name of a built-in preset when no such file exists.
    pub fn load(path_or_preset: &str) -> Result<Self, ConfigError> {
        let path = Path::new(path_or_preset);
        if !path.exists() {
            if let Some((_, text)) = PRESETS.iter().find(|(name, _)| *name == path_or_preset) {
                return RunConfig::parse(text, path_or_preset);
            }
        }
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path_or_preset.into(), source })?;
        RunConfig::parse(&text, path_or_preset)
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| invalid("preset", format!("unknown preset {name}")))?;
        RunConfig::parse(text, name)
    }

    pub fn equation(&self) -> Result<EquationSpec, ConfigError> {
        let e = &self.equation;
        let alpha: OddRational = e.alpha.parse().map_err(|err| invalid("equation.alpha", err))?;
        let small_denominator = match &e.small_denominator {
            Some(sd) => Some(SmallDenominator { expr: seq("equation.small_denominator.expr", &sd.expr)?, threshold: sd.threshold }),
            None => None,
        };
        let eq = EquationSpec {
            r: seq("equation.r", &e.r)?,
            p: seq("equation.p", &e.p)?,
            q: seq("equation.q", &e.q)?,
            a: seq("equation.a", &e.a)?,
            gamma: GammaSpec::new(seq("equation.gamma_num", &e.gamma_num)?, seq("equation.gamma_den", &e.gamma_den)?),
            alpha,
            k: e.k,
            f: ScalarFn::parse(&e.f).map_err(|source| ConfigError::Expr { key: "equation.f".into(), source })?,
            start: e.start,
            monotone_tails: e.monotone_tails,
            small_denominator,
        };
        eq.validate().map_err(|err| invalid("equation", err))?;
        Ok(eq)
    }

    pub fn tail_options(&self) -> Result<TailOptions, ConfigError> {
        let t = &self.tails;
        if t.eps_tail.is_nan() || t.eps_tail <= 0.0 || t.max_terms == 0 {
            return Err(invalid("tails", "eps_tail and max_terms must be positive"));
        }
        let mut opts = TailOptions::heuristic(t.eps_tail, t.max_terms);
        opts.a = majorant("tails.a_majorant", &t.a_majorant)?;
        opts.q = majorant("tails.q_majorant", &t.q_majorant)?;
        opts.alpha = majorant("tails.alpha_majorant", &t.alpha_majorant)?;
        opts.beta = majorant("tails.beta_majorant", &t.beta_majorant)?;
        Ok(opts)
    }

    pub fn iteration(&self) -> IterationOptions {
        IterationOptions { tol: self.solver.tol, max_iter: self.solver.max_iter, strict_budget: self.solver.strict_budget }
    }

    fn family_spec_from(&self, f: &FamilySection) -> Result<FamilySpec, ConfigError> {
        Ok(FamilySpec {
            base: self.equation()?,
            g: ScalarFn::parse(&f.g).map_err(|source| ConfigError::Expr { key: "family.g".into(), source })?,
            u0: seq("family.u0", &f.u0)?,
            params: params_from_template(&f.params, f.members).map_err(|source| ConfigError::Expr { key: "family.params".into(), source })?,
            d1_const: f.d1_const,
            d2_const: f.d2_const,
            d1: f.d1,
            d2: f.d2,
        })
    }

    pub fn family(&self) -> Result<(FamilySpec, FamilyOptions, &FamilySection), ConfigError> {
        let f = self.family.as_ref().ok_or(ConfigError::NoFamily)?;
        let opts = FamilyOptions { d: self.solver.d, window_end: self.solver.window, iteration: self.iteration(), initial: f.initial };
        Ok((self.family_spec_from(f)?, opts, f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for (name, _) in PRESETS {
            RunConfig::preset(name).unwrap();
        }
        let cfg = RunConfig::preset("example1").unwrap();
        assert_eq!(cfg.equation().unwrap().k, 2);
        assert_eq!(cfg.solver.window, 200);
        assert!(RunConfig::preset("family-linear").unwrap().family().is_ok());
        assert!(matches!(cfg.family(), Err(ConfigError::NoFamily)));
    }

    #[test]
    fn errors_name_the_key() {
        let text = PRESETS[0].1.replace("p = \"1/2\"", "p = \"1/+\"");
        let err = RunConfig::parse(&text, "x.toml").unwrap_err();
        assert!(err.to_string().starts_with("equation.p:"), "{err}");
        assert!(err.to_string().contains("column"), "{err}");

        let text = PRESETS[0].1.replace("alpha = \"5/1\"", "alpha = \"2/1\"");
        assert!(RunConfig::parse(&text, "x.toml").unwrap_err().to_string().starts_with("equation.alpha"));

        let err = RunConfig::parse("[equation]\nr = 1", "bad.toml").unwrap_err();
        assert!(matches!(err, ConfigError::Toml { .. }));
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
