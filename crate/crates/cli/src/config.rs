use std::path::PathBuf;

use clap::{Args, Subcommand};
use dbarlab_core::WeightSpec;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 0x5eed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    CheckWeight,
    Assemble,
    Spectrum,
    Oracle,
    Study,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::CheckWeight => "check-weight",
            Task::Assemble => "assemble",
            Task::Spectrum => "spectrum",
            Task::Oracle => "oracle",
            Task::Study => "study",
        }
    }
}

/// Everything a run needs. Flags and JSON config files both land here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub weight: String,
    #[serde(default = "one")]
    pub n: usize,
    #[serde(rename = "R", default)]
    pub half_width: Option<f64>,
    #[serde(default)]
    pub h: Option<f64>,
    #[serde(default)]
    pub ladder: Vec<f64>,
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub lambda_cap: Option<f64>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub kmax: Option<usize>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub strict: bool,
}

fn one() -> usize {
    1
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl RunConfig {
    /// Parses a JSON config; syntax and schema errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))?;
        Ok(cfg)
    }

    /// Checks that the parameters needed by the task are present and sane.
    pub fn validate(&self) -> Result<WeightSpec, ConfigError> {
        let err = |m: String| Err(ConfigError(m));
        let w = WeightSpec::parse(&self.weight, self.n).map_err(|e| ConfigError(format!("--weight: {e}")))?;
        let positive = |name: &str, v: Option<f64>| -> Result<(), ConfigError> {
            match v {
                Some(x) if !(x > 0.0 && x.is_finite()) => Err(ConfigError(format!("{name} must be positive, got {x}"))),
                _ => Ok(()),
            }
        };
        positive("--R", self.half_width)?;
        positive("--h", self.h)?;
        positive("--lambda-cap", self.lambda_cap)?;
        positive("--tol", self.tol)?;
        if let Some(t) = self.theta {
            if !(t > 0.0 && t < 1.0) {
                return err(format!("--theta must lie in (0, 1), got {t}"));
            }
        }
        if let Some(e) = self.eps.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return err(format!("--eps values must be positive, got {e}"));
        }
        if self.count == Some(0) {
            return err("--count must be at least 1".into());
        }
        match self.task {
            Task::Assemble | Task::Spectrum => {
                if self.half_width.is_none() || self.h.is_none() {
                    return err(format!("{} needs --R and --h", self.task.name()));
                }
            }
            Task::Study => {
                if self.ladder.len() < 3 {
                    return err(format!("study needs --ladder with at least 3 radii, got {}", self.ladder.len()));
                }
                if self.h.is_none() {
                    return err("study needs --h".into());
                }
            }
            Task::Oracle => {
                if self.n != 1 || !w.is_radial() {
                    return err("oracle needs a radial weight with n = 1".into());
                }
                if self.kmax.is_some_and(|k| k < 2) {
                    return err("--kmax must be at least 2".into());
                }
            }
            Task::CheckWeight => {}
        }
        Ok(w)
    }
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Weight: `fock`, `quartic`, `poly: ...` or `radial: ...`.
    #[arg(long)]
    pub weight: String,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Exit with status 4 on an inconclusive verdict.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Args, Clone, Debug)]
pub struct Grid {
    #[arg(long = "R")]
    pub half_width: f64,
    #[arg(long)]
    pub h: f64,
}

#[derive(Subcommand, Clone, Debug)]
pub enum Command {
    /// Sample plurisubharmonicity and the asymptotic conditions of a weight.
    CheckWeight {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
    },
    /// Assemble the discrete operators and export them in Matrix Market format.
    Assemble {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Grid,
    },
    /// Lowest eigenvalues of the complex Laplacian on (0,1)-forms.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: Grid,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        lambda_cap: Option<f64>,
    },
    /// Radial moments and singular values of the canonical solution operator.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kmax: Option<usize>,
    },
    /// Compactness study over a ladder of box sizes.
    Study {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        ladder: Vec<f64>,
        #[arg(long)]
        h: f64,
        #[arg(long, value_delimiter = ',')]
        eps: Vec<f64>,
        #[arg(long)]
        lambda_cap: Option<f64>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Run a task described by a JSON config file.
    Run {
        config: PathBuf,
    },
}

impl Command {
    pub fn into_config(self) -> Result<RunConfig, ConfigError> {
        let base = |task: Task, c: Common| RunConfig {
            task,
            weight: c.weight,
            n: c.n,
            half_width: None,
            h: None,
            ladder: Vec::new(),
            eps: Vec::new(),
            theta: None,
            lambda_cap: None,
            count: None,
            kmax: None,
            tol: c.tol,
            seed: c.seed,
            out: c.out,
            strict: c.strict,
        };
        Ok(match self {
            Command::CheckWeight { common, theta, eps } => RunConfig { theta, eps, ..base(Task::CheckWeight, common) },
            Command::Assemble { common, grid } => RunConfig {
                half_width: Some(grid.half_width),
                h: Some(grid.h),
                ..base(Task::Assemble, common)
            },
            Command::Spectrum { common, grid, count, lambda_cap } => RunConfig {
                half_width: Some(grid.half_width),
                h: Some(grid.h),
                count,
                lambda_cap,
                ..base(Task::Spectrum, common)
            },
            Command::Oracle { common, kmax } => RunConfig { kmax, ..base(Task::Oracle, common) },
            Command::Study { common, ladder, h, eps, lambda_cap, count } => RunConfig {
                ladder,
                h: Some(h),
                eps,
                lambda_cap,
                count,
                ..base(Task::Study, common)
            },
            Command::Run { config } => {
                let text = std::fs::read_to_string(&config)
                    .map_err(|e| ConfigError(format!("{}: {e}", config.display())))?;
                RunConfig::from_json(&text).map_err(|e| ConfigError(format!("{}: {e}", config.display())))?
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_errors_are_line_precise() {
        let text = "{\n  \"task\": \"study\",\n  \"weight\": \"fock\",\n  \"bogus\": 1\n}";
        let e = RunConfig::from_json(text).unwrap_err().to_string();
        assert!(e.contains("line 4"), "{e}");
    }

    #[test]
    fn weight_errors_are_reported() {
        let cfg = RunConfig::from_json(r#"{"task": "check-weight", "weight": "poly: x1^2 +"}"#).unwrap();
        let e = cfg.validate().unwrap_err().to_string();
        assert!(e.contains("line 1"), "{e}");
    }

    #[test]
    fn task_parameters_are_required() {
        let cfg = RunConfig::from_json(r#"{"task": "study", "weight": "fock", "ladder": [6, 8]}"#).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::from_json(r#"{"task": "oracle", "weight": "poly: x1^2", "kmax": 20}"#).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::from_json(r#"{"task": "spectrum", "weight": "fock", "R": 4, "h": 0.5}"#).unwrap();
        assert!(cfg.validate().is_ok());
    }
}
