//! Experiment configuration: TOML file keys, command-line overrides, validation.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Subcommand the file was written for; checked against the one invoked.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    pub s: f64,
    pub a_min: f64,
    pub q: f64,
    pub grid: usize,
    /// Grid of the reference solutions; defaults to `grid`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_grid: Option<usize>,
    pub samples: usize,
    pub samples_per_cell: usize,
    pub seed: u32,
    /// Seed of the subdomain-to-parameter assignment; defaults to `seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assignment_seed: Option<u32>,
    pub m: usize,
    pub eps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<usize>>,
    /// Partitions studied per requested cell count.
    pub candidates: usize,
    pub n_max: usize,
    pub greedy_n_max: usize,
    /// Greedy stops once the largest training error is at most this.
    pub greedy_eps: f64,
    pub training_count: usize,
    pub max_terms: usize,
    /// Number of measurements `L`.
    pub measurements: usize,
    pub lambda: f64,
    pub ystar: f64,
    pub r: Vec<f64>,
    pub width_constant: f64,
    pub bound_n: u64,
    pub sigma: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            s: 4.0,
            a_min: 0.1,
            q: 1.0,
            grid: 64,
            truth_grid: None,
            samples: 1000,
            samples_per_cell: 200,
            seed: nlrm::rng::DEFAULT_SEED,
            assignment_seed: None,
            m: 5,
            eps: 1e-4,
            eta: None,
            cells: None,
            candidates: 3,
            n_max: 80,
            greedy_n_max: 40,
            greedy_eps: 1e-5,
            training_count: 200,
            max_terms: 100,
            measurements: 20,
            lambda: nlrm::estimation::DEFAULT_LAMBDA,
            ystar: 0.5384,
            r: vec![0.5, 1.0, 2.0],
            width_constant: 1.0,
            bound_n: 10,
            sigma: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            output: None,
            cache_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::ConfigFile {
            path: origin.to_string(),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::ConfigFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_text(&text, &path.display().to_string())
    }

    pub fn truth_grid(&self) -> usize {
        self.truth_grid.unwrap_or(self.grid)
    }

    pub fn assignment_seed(&self) -> u32 {
        self.assignment_seed.unwrap_or(self.seed)
    }

    /// Fills the defaulted fields with their effective values so the
    /// metadata echo is complete.
    pub fn resolved(&self, command: &str, default_cells: &[usize]) -> Self {
        let mut c = self.clone();
        c.experiment = Some(command.to_string());
        c.truth_grid = Some(self.truth_grid());
        c.assignment_seed = Some(self.assignment_seed());
        if c.eta.is_none() && c.cells.is_none() && !default_cells.is_empty() {
            c.cells = Some(default_cells.to_vec());
        }
        c
    }

    /// `key=value` pairs in key order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let table = toml::Table::try_from(self).expect("config serializes");
        table
            .into_iter()
            .map(|(k, v)| {
                let v = match v {
                    toml::Value::String(s) => s,
                    other => other.to_string(),
                };
                (k, v)
            })
            .collect()
    }

    pub fn validate(&self, command: &str) -> Result<()> {
        if let Some(e) = &self.experiment {
            if e != command {
                return Err(CliError::field("experiment", format!("file is for `{e}`, invoked `{command}`")));
            }
        }
        check("s", self.s > 0.5 && self.s.is_finite(), "must exceed 1/2")?;
        check("a_min", self.a_min > 0.0 && self.a_min < 1.0, "must lie in (0, 1)")?;
        check("q", self.q > 0.0 && self.q < 2.0, "must lie in (0, 2)")?;
        check("grid", self.grid >= 8 && self.grid.is_multiple_of(8), "must be a positive multiple of 8")?;
        let tg = self.truth_grid();
        check(
            "truth_grid",
            tg >= self.grid && tg.is_multiple_of(self.grid),
            "must be a multiple of grid",
        )?;
        check("samples", self.samples >= 1, "must be at least 1")?;
        check("samples_per_cell", self.samples_per_cell >= 1, "must be at least 1")?;
        check("eps", self.eps > 0.0 && self.eps.is_finite(), "must be positive")?;
        if let Some(eta) = &self.eta {
            check("eta", !eta.is_empty(), "must not be empty")?;
            check("eta", eta.iter().all(|e| *e > 0.0 && e.is_finite()), "entries must be positive")?;
        }
        if let Some(cells) = &self.cells {
            check("cells", !cells.is_empty(), "must not be empty")?;
            check("cells", cells.iter().all(|c| *c >= 1), "entries must be at least 1")?;
        }
        check("candidates", self.candidates >= 1, "must be at least 1")?;
        check("n_max", self.n_max >= 1, "must be at least 1")?;
        check("greedy_n_max", self.greedy_n_max >= 1, "must be at least 1")?;
        check("greedy_eps", self.greedy_eps >= 0.0 && self.greedy_eps.is_finite(), "must be nonnegative")?;
        check(
            "training_count",
            self.training_count >= self.greedy_n_max,
            "must be at least greedy_n_max",
        )?;
        check("max_terms", self.max_terms >= 1, "must be at least 1")?;
        check("measurements", self.measurements >= 1, "must be at least 1")?;
        check("lambda", self.lambda > 0.0 && self.lambda.is_finite(), "must be positive")?;
        check("ystar", self.ystar.abs() <= 1.0, "must lie in [-1, 1]")?;
        check("r", !self.r.is_empty(), "must not be empty")?;
        check("r", self.r.iter().all(|r| *r > 0.0 && r.is_finite()), "entries must be positive")?;
        check(
            "width_constant",
            self.width_constant > 0.0 && self.width_constant.is_finite(),
            "must be positive",
        )?;
        check("bound_n", self.bound_n >= 1, "must be at least 1")?;
        check(
            "sigma",
            self.sigma.iter().all(|s| *s > 0.0 && *s < 1.0),
            "entries must lie in (0, 1)",
        )?;
        Ok(())
    }
}

fn check(field: &str, ok: bool, message: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::field(field, message))
    }
}

macro_rules! overrides {
    (plain { $($f:ident: $t:ty),* $(,)? } optional { $($o:ident: $ot:ty),* $(,)? } lists { $($l:ident: $lt:ty),* $(,)? }) => {
        /// Flags overriding config file keys of the same name.
        #[derive(Debug, Clone, Default, Args)]
        pub struct Overrides {
            $(#[arg(long)] pub $f: Option<$t>,)*
            $(#[arg(long)] pub $o: Option<$ot>,)*
            $(#[arg(long, value_delimiter = ',', num_args = 1..)] pub $l: Option<Vec<$lt>>,)*
        }

        impl Overrides {
            pub fn apply(&self, cfg: &mut ExperimentConfig) {
                $(if let Some(v) = &self.$f { cfg.$f = v.clone(); })*
                $(if let Some(v) = &self.$o { cfg.$o = Some(v.clone()); })*
                $(if let Some(v) = &self.$l { cfg.$l = v.clone().into(); })*
            }
        }
    };
}

overrides! {
    plain {
        s: f64, a_min: f64, q: f64, grid: usize, samples: usize, samples_per_cell: usize,
        seed: u32, m: usize, eps: f64, candidates: usize, n_max: usize, greedy_n_max: usize, greedy_eps: f64,
        training_count: usize, max_terms: usize, measurements: usize, lambda: f64, ystar: f64,
        width_constant: f64, bound_n: u64,
    }
    optional {
        truth_grid: usize, assignment_seed: u32, output: PathBuf, cache_dir: PathBuf,
    }
    lists {
        eta: f64, cells: usize, r: f64, sigma: f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let c = ExperimentConfig::default();
        let text = toml::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_text(&text, "mem").unwrap(), c);
        assert!(c.validate("bounds").is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_text("sead = 3\n", "mem").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("sead"), "{err}");
    }

    #[test]
    fn validation_names_the_field() {
        let bad = ExperimentConfig {
            a_min: 1.5,
            ..Default::default()
        };
        let err = bad.validate("linear-compare").unwrap_err();
        assert!(err.to_string().contains("`a_min`"), "{err}");
        assert_eq!(err.exit_code(), 2);
        let wrong = ExperimentConfig {
            experiment: Some("bounds".into()),
            ..Default::default()
        };
        assert!(wrong.validate("state-est").unwrap_err().to_string().contains("experiment"));
        let coarse_truth = ExperimentConfig {
            truth_grid: Some(72),
            ..Default::default()
        };
        assert!(coarse_truth.validate("linear-compare").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let mut c = ExperimentConfig::from_text("s = 2.0\nseed = 7\n", "mem").unwrap();
        let o = Overrides {
            seed: Some(9),
            cells: Some(vec![1, 8]),
            truth_grid: Some(128),
            ..Default::default()
        };
        o.apply(&mut c);
        assert_eq!((c.s, c.seed), (2.0, 9));
        assert_eq!(c.cells, Some(vec![1, 8]));
        assert_eq!(c.truth_grid(), 128);
        assert_eq!(c.assignment_seed(), 9);
    }

    #[test]
    fn resolved_entries_are_sorted_and_complete() {
        let c = ExperimentConfig::default().resolved("partition-table", &[1, 8]);
        let e = c.entries();
        let keys: Vec<&str> = e.iter().map(|(k, _)| k.as_str()).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(e.contains(&("cells".to_string(), "[1, 8]".to_string())));
        assert!(e.contains(&("truth_grid".to_string(), "64".to_string())));
        assert!(e.contains(&("experiment".to_string(), "partition-table".to_string())));
    }
}
