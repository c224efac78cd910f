//! TOML run configuration. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::AppError;

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Subcommand the file is meant for; checked against the command line.
    pub command: Option<String>,
    /// Seed for the randomized sweeps of `verify`.
    pub seed: Option<u64>,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub lambda: LambdaConfig,
    #[serde(default)]
    pub gap: GapConfig,
    #[serde(default)]
    pub edge: EdgeConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Base family: `free`, `const_shift`, `mathieu` or `layered`.
    pub base: Option<String>,
    /// Base parameters in table order.
    pub params: Option<Vec<f64>>,
    /// Domain start `a`.
    pub a: Option<f64>,
    pub moment_class: Option<u8>,
    /// Treat the perturbation as living on the whole line, split at `a`.
    pub full_line: Option<bool>,
    #[serde(default)]
    pub perturbation: Vec<PerturbationConfig>,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub family: String,
    #[serde(default)]
    pub params: Vec<f64>,
    /// `q` (default), `inv_p` or `r`.
    pub component: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LambdaConfig {
    pub value: Option<f64>,
    pub range: Option<[f64; 2]>,
    pub points: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GapConfig {
    /// 1-based index among the gaps found in `lambda.range`.
    pub index: Option<usize>,
    pub interval: Option<[f64; 2]>,
    pub alpha: Option<f64>,
    pub samples: Option<usize>,
    pub edge_margin: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    /// 1-based index among the edges found in `lambda.range`.
    pub index: Option<usize>,
    pub lambda: Option<f64>,
    pub n_max: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    /// `decaying`, `second` or `both`.
    pub kind: Option<String>,
    pub truncation: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub periods: Option<usize>,
    pub per_period: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    pub ode: Option<f64>,
    pub edge: Option<f64>,
    pub scan_resolution: Option<f64>,
    pub eigenvalue: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub json: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, AppError> {
        toml::from_str(text).map_err(|e| {
            let at = e.span().map(|s| line_col(text, s.start));
            AppError::Config { at, message: e.message().to_string() }
        })
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::Io { path: path.to_path_buf(), source: e })?;
        Self::parse(&text)
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |i| before.len() - i - 1) + 1;
    (line, col)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_file_parses() {
        let cfg = RunConfig::parse(
            r#"
command = "gap-eigs"
seed = 3

[problem]
base = "mathieu"
params = [1.0]
moment_class = 1

[[problem.perturbation]]
family = "square_well_pert"
params = [-2.0, 2.0]

[lambda]
range = [-1.0, 5.0]

[gap]
index = 1
alpha = 0.5
"#,
        )
        .unwrap();
        assert_eq!(cfg.problem.perturbation.len(), 1);
        assert_eq!(cfg.gap.index, Some(1));
        assert_eq!(cfg.lambda.range, Some([-1.0, 5.0]));
    }

    #[test]
    fn unknown_key_reports_line() {
        let err = RunConfig::parse("[problem]\nbase = \"free\"\ngama = 2\n").unwrap_err();
        match err {
            AppError::Config { at, message } => {
                assert_eq!(at.map(|a| a.0), Some(3));
                assert!(message.contains("gama"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }
}
