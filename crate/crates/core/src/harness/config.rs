//! Experiment configuration (TOML).

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::function_class::ClassSpec;
use crate::lattice::{all_evectors, EVector, Shape};
use crate::model::ModelSpec;
use crate::supremum::MAX_Q;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckType {
    Global,
    Local,
    Vc,
    Iid,
    Lemmas,
}

impl fmt::Display for CheckType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckType::Global => "global",
            CheckType::Local => "local",
            CheckType::Vc => "vc",
            CheckType::Iid => "iid",
            CheckType::Lemmas => "lemmas",
        })
    }
}

/// `"all"` or an explicit list of bit strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Directions {
    Keyword(String),
    List(Vec<EVector>),
}

impl Default for Directions {
    fn default() -> Self {
        Directions::Keyword("all".into())
    }
}

impl Directions {
    pub fn resolve(&self, dim: usize) -> Result<Vec<EVector>> {
        match self {
            Directions::Keyword(k) if k == "all" => all_evectors(dim),
            Directions::Keyword(k) => Err(config(format!("directions must be \"all\" or a list, got {k:?}"))),
            Directions::List(list) => {
                if list.is_empty() {
                    return Err(config("directions list is empty"));
                }
                for e in list {
                    if e.dim() != dim || e.is_zero() {
                        return Err(config(format!("direction {e} is not a nonzero K = {dim} vector")));
                    }
                }
                Ok(list.clone())
            }
        }
    }
}

/// Where `J_e` comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMethod {
    /// `(A, v)` fitted on the projected class, then the closed-form integrand.
    Vc,
    /// Greedy covers on empirical measures over factor space.
    Empirical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
}

impl FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            _ => Err(format!("unknown format {s:?} (expected json or csv)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Largest admissible max ratio / min ratio within a group.
    pub stability: f64,
    /// Monte Carlo z-score used by the monotonicity checks.
    pub z: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { stability: 2.0, z: 4.0 }
    }
}

/// Sampling effort for the VC fit and the empirical entropy integral.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub draws: usize,
    pub measures: usize,
    /// Members kept (evenly strided) when covers are computed.
    pub max_members: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings { draws: 1000, measures: 5, max_members: 1500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalSettings {
    /// Target values of `σ_e/‖P_e F‖`; each gets its own calibrated radius.
    /// Empty: one row per shape with the configured class and default `σ_e`.
    pub deltas: Vec<f64>,
    pub calibration_draws: usize,
}

impl Default for LocalSettings {
    fn default() -> Self {
        LocalSettings { deltas: Vec::new(), calibration_draws: 20_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaSettings {
    pub orlicz_draws: usize,
    pub degeneracy_configs: usize,
    pub degeneracy_replications: usize,
    pub degeneracy_min_pass: usize,
    pub partition_max_dim: usize,
    pub partition_max_n: usize,
}

impl Default for LemmaSettings {
    fn default() -> Self {
        LemmaSettings {
            orlicz_draws: 100_000,
            degeneracy_configs: 100,
            degeneracy_replications: 500,
            degeneracy_min_pass: 95,
            partition_max_dim: 4,
            partition_max_n: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings { dir: None, format: OutputFormat::Json }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub class: ClassSpec,
    pub shapes: Vec<Shape>,
    #[serde(default)]
    pub directions: Directions,
    #[serde(default = "default_q")]
    pub q: Vec<f64>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_inner")]
    pub inner_draws: usize,
    #[serde(default = "default_entropy")]
    pub entropy: EntropyMethod,
    /// Member decomposed by `sepex decompose`.
    #[serde(default)]
    pub member: usize,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub fit: FitSettings,
    #[serde(default)]
    pub local: LocalSettings,
    #[serde(default)]
    pub lemmas: LemmaSettings,
    #[serde(default)]
    pub output: OutputSettings,
}

fn default_q() -> Vec<f64> {
    vec![1.0]
}

fn default_replications() -> usize {
    200
}

fn default_inner() -> usize {
    256
}

fn default_entropy() -> EntropyMethod {
    EntropyMethod::Vc
}

fn squares(dim: usize) -> Vec<Shape> {
    [8, 16, 32, 64].iter().map(|&n| Shape::square(n, dim).expect("valid shape")).collect()
}

fn coefficients(pairs: &[(&str, f64)]) -> ModelSpec {
    ModelSpec::Additive { coefficients: Some(pairs.iter().map(|&(k, c)| (k.to_string(), c)).collect()) }
}

impl ExperimentConfig {
    /// The built-in experiment for each check type.
    pub fn default_for(check: CheckType) -> Self {
        let mut c = ExperimentConfig {
            check: Some(check),
            seed: None,
            model: ModelSpec::default(),
            class: ClassSpec::default(),
            shapes: squares(2),
            directions: Directions::default(),
            q: vec![1.0, 2.0],
            replications: 200,
            inner_draws: default_inner(),
            entropy: EntropyMethod::Vc,
            member: 0,
            thresholds: Thresholds::default(),
            fit: FitSettings::default(),
            local: LocalSettings::default(),
            lemmas: LemmaSettings::default(),
            output: OutputSettings::default(),
        };
        match check {
            CheckType::Global | CheckType::Vc => {}
            CheckType::Local => {
                // coordinate 1 carries almost all of X, so P_(1,0) keeps the
                // indicator jumps of the differences
                c.model = coefficients(&[("10", 1.0), ("01", 0.001), ("11", 0.001)]);
                c.class = ClassSpec::LocalizedDifferences { grid: 501, range: None, radius: 1.0 };
                c.shapes = vec![Shape::square(32, 2).expect("valid shape")];
                c.directions = Directions::List(vec![EVector::parse("10").expect("valid")]);
                c.q = vec![1.0];
                c.replications = 300;
                c.entropy = EntropyMethod::Empirical;
                c.thresholds.stability = 3.0;
                c.local.deltas = vec![0.05, 0.1, 0.2, 0.4];
            }
            CheckType::Iid => {
                c.model = coefficients(&[("1", 1.0)]);
                c.shapes = [64, 256, 1024].iter().map(|&n| Shape::new(vec![n]).expect("valid shape")).collect();
                c.directions = Directions::List(vec![EVector::parse("1").expect("valid")]);
                c.q = vec![1.0];
                c.replications = 300;
            }
            CheckType::Lemmas => {
                c.shapes = vec![Shape::square(8, 2).expect("valid shape")];
            }
        }
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn dim(&self) -> usize {
        self.shapes.first().map(|s| s.dim()).unwrap_or(0)
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| config("seed is required (set `seed` in the config or pass --seed)"))
    }

    pub fn check_type(&self) -> Result<CheckType> {
        self.check.ok_or_else(|| config("check type is not set"))
    }

    pub fn directions(&self) -> Result<Vec<EVector>> {
        self.directions.resolve(self.dim())
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        let check = self.check_type()?;
        let first = self.shapes.first().ok_or_else(|| config("shape grid is empty"))?;
        if let Some(s) = self.shapes.iter().find(|s| s.dim() != first.dim()) {
            return Err(config(format!("shape grid mixes K = {} ({first}) and K = {} ({s})", first.dim(), s.dim())));
        }
        self.directions()?;
        if self.q.is_empty() {
            return Err(config("q list is empty"));
        }
        if let Some(q) = self.q.iter().find(|&&q| !(1.0..=MAX_Q).contains(&q)) {
            return Err(config(format!("q = {q} outside [1, {MAX_Q}]")));
        }
        if self.replications < 2 {
            return Err(config("replications must be at least 2"));
        }
        if !(self.thresholds.stability >= 1.0) || !(self.thresholds.z > 0.0) {
            return Err(config("thresholds need stability >= 1 and z > 0"));
        }
        if self.fit.measures == 0 || self.fit.draws < self.fit.measures || self.fit.max_members == 0 {
            return Err(config("fit needs measures >= 1, draws >= measures and max_members >= 1"));
        }
        match check {
            CheckType::Iid if first.dim() != 1 => {
                return Err(config(format!("the iid check needs K = 1 shapes, got {first}")));
            }
            CheckType::Local if !self.local.deltas.is_empty() => {
                if self.shapes.len() != 1 {
                    return Err(config("calibrated local checks run at a single shape"));
                }
                if !matches!(self.class, ClassSpec::LocalizedDifferences { .. }) {
                    return Err(config("calibrated local checks need a localized_differences class"));
                }
                if let Some(d) = self.local.deltas.iter().find(|&&d| !(d > 0.0 && d <= 1.0)) {
                    return Err(config(format!("local delta {d} outside (0, 1]")));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_once_seeded() {
        for check in [CheckType::Global, CheckType::Local, CheckType::Vc, CheckType::Iid, CheckType::Lemmas] {
            let mut c = ExperimentConfig::default_for(check);
            assert!(c.validate().is_err());
            c.seed = Some(1);
            c.validate().unwrap();
            let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn parses_minimal_file() {
        let c = ExperimentConfig::from_toml(
            r#"
            check = "global"
            seed = 3
            shapes = [[8, 8], [16, 16]]
            directions = ["10", "11"]
            [class]
            kind = "half_interval"
            grid = 21
            "#,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.directions().unwrap().len(), 2);
        assert_eq!(c.q, vec![1.0]);
        assert_eq!(c.replications, 200);
    }

    #[test]
    fn rejects_bad_grids() {
        let mixed = ExperimentConfig::from_toml("check = \"global\"\nseed = 1\nshapes = [[8, 8], [8, 8, 8]]").unwrap();
        let err = mixed.validate().unwrap_err().to_string();
        assert!(err.contains("mixes"), "{err}");
        let empty = ExperimentConfig::from_toml("check = \"global\"\nseed = 1\nshapes = []").unwrap();
        assert!(empty.validate().is_err());
        assert!(ExperimentConfig::from_toml("seed = 1\nshapes = [[8]]\nbogus = 2").is_err());
        let dirs = ExperimentConfig::from_toml("check = \"vc\"\nseed = 1\nshapes = [[8, 8]]\ndirections = [\"101\"]").unwrap();
        assert!(dirs.validate().is_err());
        let kw = ExperimentConfig::from_toml("check = \"vc\"\nseed = 1\nshapes = [[8, 8]]\ndirections = \"some\"").unwrap();
        assert!(kw.validate().is_err());
    }
}
