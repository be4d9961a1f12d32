//! Run configuration: a JSON file whose every key has a matching flag.
//!
//! Top-level keys map to `--key` and section keys to `--section-key`, with
//! underscores turned into dashes (`sc.n_max` is `--sc-n-max`). Flags
//! override the file, the file overrides the defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use frscn::dataset::{CsvSpec, Shift};
use frscn::eval::ModelSpec;
use frscn::{Activation, EsnConfig, FcmConfig, ModelKind, ScConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; all cores when unset.
    pub threads: Option<usize>,
    pub model_kind: ModelKind,
    pub rules: usize,
    pub washout: usize,
    /// Input and target column names for CSV data.
    pub inputs: Vec<String>,
    pub targets: Vec<String>,
    /// Lagged input columns, `column:lag`.
    pub shifts: Vec<Shift>,
    /// Train, validation and test lengths of the generated task.
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub grid_rules: Vec<usize>,
    pub grid_nodes: Vec<usize>,
    /// Row stride of `fire_strengths.csv`.
    pub fire_stride: usize,
    /// Online gain factor `a` in (0, 1].
    pub gain: f64,
    /// Online initialization constant `c > 0`; the gain matrix starts at `I / c`.
    pub init: f64,
    /// Print machine-readable JSON instead of text.
    pub json: bool,
    pub data: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// JSON matrix (`rows`, `cols`, row-major `data`) used as the online reference readout.
    pub reference: Option<PathBuf>,
    pub sc: ScConfig,
    pub fcm: FcmConfig,
    pub esn: EsnConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            model_kind: ModelKind::Frscn,
            rules: 5,
            washout: 100,
            inputs: vec!["y".into(), "u".into()],
            targets: vec!["y_next".into()],
            shifts: Vec::new(),
            sizes: vec![2000, 1000, 1000],
            trials: 10,
            grid_rules: vec![1, 3, 5, 10, 15],
            grid_nodes: vec![25, 50, 75, 100],
            fire_stride: 1,
            gain: frscn::online::DEFAULT_GAIN,
            init: frscn::online::DEFAULT_INIT,
            json: false,
            data: None,
            val: None,
            test: None,
            model: None,
            out: None,
            reference: None,
            sc: ScConfig::default(),
            fcm: FcmConfig::default(),
            esn: EsnConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            kind: self.model_kind,
            rules: self.rules,
            sc: self.sc.clone(),
            fcm: self.fcm.clone(),
            esn: self.esn.clone(),
        }
    }

    pub fn csv_spec(&self) -> CsvSpec {
        CsvSpec {
            input_columns: self.inputs.clone(),
            target_columns: self.targets.clone(),
            shifts: self.shifts.clone(),
            washout: self.washout,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == Some(0) {
            bail!("threads must be >= 1");
        }
        if self.sizes.len() != 3 || self.sizes.iter().any(|&s| s < 5) {
            bail!("sizes must be three lengths (train, val, test), each >= 5, got {:?}", self.sizes);
        }
        if self.trials == 0 {
            bail!("trials must be >= 1");
        }
        if self.grid_rules.is_empty() || self.grid_nodes.is_empty() {
            bail!("grid_rules and grid_nodes must be nonempty");
        }
        if self.grid_rules.contains(&0) || self.grid_nodes.contains(&0) {
            bail!("grid_rules and grid_nodes entries must be >= 1");
        }
        if self.fire_stride == 0 {
            bail!("fire_stride must be >= 1");
        }
        if !(self.gain > 0.0 && self.gain <= 1.0) {
            bail!("gain must lie in (0, 1], got {}", self.gain);
        }
        if !(self.init > 0.0 && self.init.is_finite()) {
            bail!("init must be > 0, got {}", self.init);
        }
        if self.targets.is_empty() {
            bail!("targets must name at least one column");
        }
        if self.inputs.is_empty() && self.shifts.is_empty() {
            bail!("inputs or shifts must name at least one column");
        }
        self.model_spec().validate()?;
        Ok(())
    }
}

/// Flags mirroring [`RunConfig`]; every one is optional and overrides the
/// config file.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// JSON run configuration; flags override its values
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Base seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    pub threads: Option<usize>,
    /// Model kind: frscn, rscn (frscn with one rule), fesn or esn
    #[arg(long)]
    pub model_kind: Option<ModelKind>,
    /// Number of fuzzy rules
    #[arg(long)]
    pub rules: Option<usize>,
    /// Leading samples excluded from fitting and metrics
    #[arg(long)]
    pub washout: Option<usize>,
    /// Input column names
    #[arg(long, value_delimiter = ',')]
    pub inputs: Option<Vec<String>>,
    /// Target column names
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<String>>,
    /// Lagged inputs as column:lag
    #[arg(long, value_delimiter = ',')]
    pub shifts: Option<Vec<Shift>>,
    /// Generated train,val,test lengths
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Seeded trials per experiment or grid cell
    #[arg(long)]
    pub trials: Option<usize>,
    /// Rule counts searched by gridsearch
    #[arg(long, value_delimiter = ',')]
    pub grid_rules: Option<Vec<usize>>,
    /// Reservoir sizes searched by gridsearch
    #[arg(long, value_delimiter = ',')]
    pub grid_nodes: Option<Vec<usize>>,
    /// Row stride of fire_strengths.csv
    #[arg(long)]
    pub fire_stride: Option<usize>,
    /// Online gain factor a in (0, 1]
    #[arg(long)]
    pub gain: Option<f64>,
    /// Online initialization constant c > 0
    #[arg(long)]
    pub init: Option<f64>,
    /// Print JSON
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub json: Option<bool>,
    /// Data CSV
    #[arg(long, value_name = "CSV")]
    pub data: Option<PathBuf>,
    /// Validation CSV
    #[arg(long, value_name = "CSV")]
    pub val: Option<PathBuf>,
    /// Test CSV
    #[arg(long, value_name = "CSV")]
    pub test: Option<PathBuf>,
    /// Model JSON file
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Reference readout for the online deviation column
    #[arg(long, value_name = "FILE")]
    pub reference: Option<PathBuf>,

    /// Maximum reservoir size per rule
    #[arg(long)]
    pub sc_n_max: Option<usize>,
    /// Nodes drawn before supervised growth
    #[arg(long)]
    pub sc_initial_size: Option<usize>,
    /// Candidates per weight scale
    #[arg(long)]
    pub sc_g_max: Option<usize>,
    /// Residual norm tolerance
    #[arg(long)]
    pub sc_epsilon: Option<f64>,
    /// Candidate weight scales
    #[arg(long, value_delimiter = ',')]
    pub sc_lambda_grid: Option<Vec<f64>>,
    /// Contraction factors r
    #[arg(long, value_delimiter = ',')]
    pub sc_r_schedule: Option<Vec<f64>>,
    /// Connection density range lo,hi
    #[arg(long, value_delimiter = ',')]
    pub sc_sparsity_range: Option<Vec<f64>>,
    /// Spectral scaling factor
    #[arg(long)]
    pub sc_alpha: Option<f64>,
    /// Readout ridge penalty
    #[arg(long)]
    pub sc_ridge: Option<f64>,
    /// Activation: tanh or sigmoid
    #[arg(long)]
    pub sc_activation: Option<Activation>,
    /// Random r relaxations after the schedule
    #[arg(long)]
    pub sc_max_random_relaxations: Option<usize>,
    /// Mask input weights of candidate rows
    #[arg(long)]
    pub sc_mask_inputs: Option<bool>,
    /// Mask the self-connection of candidate rows
    #[arg(long)]
    pub sc_mask_self: Option<bool>,

    /// Fuzzy c-means exponent m > 1
    #[arg(long)]
    pub fcm_fuzziness: Option<f64>,
    /// Fuzzy c-means iteration cap
    #[arg(long)]
    pub fcm_max_iter: Option<usize>,
    /// Fuzzy c-means center-shift tolerance
    #[arg(long)]
    pub fcm_tolerance: Option<f64>,
    /// Fuzzy c-means seed offset
    #[arg(long)]
    pub fcm_seed: Option<u64>,

    /// Echo-state reservoir size
    #[arg(long)]
    pub esn_nodes: Option<usize>,
    /// Echo-state spectral radius
    #[arg(long)]
    pub esn_alpha: Option<f64>,
    /// Echo-state feedback density
    #[arg(long)]
    pub esn_density: Option<f64>,
    /// Echo-state readout ridge penalty
    #[arg(long)]
    pub esn_ridge: Option<f64>,
    /// Echo-state activation
    #[arg(long)]
    pub esn_activation: Option<Activation>,
}

macro_rules! overlay {
    ($flags:expr, $cfg:expr; $($flag:ident => $($field:ident).+),* $(,)?) => {
        $(if let Some(v) = $flags.$flag.clone() {
            $cfg.$($field).+ = v;
        })*
    };
}

impl ConfigFlags {
    /// Loads the config file (if any), applies the flags and validates.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        overlay!(self, cfg;
            seed => seed, model_kind => model_kind, rules => rules, washout => washout,
            inputs => inputs, targets => targets, shifts => shifts, sizes => sizes, trials => trials,
            grid_rules => grid_rules, grid_nodes => grid_nodes, fire_stride => fire_stride,
            gain => gain, init => init, json => json,
            sc_n_max => sc.n_max, sc_initial_size => sc.initial_size, sc_g_max => sc.g_max,
            sc_epsilon => sc.epsilon, sc_lambda_grid => sc.lambda_grid, sc_r_schedule => sc.r_schedule,
            sc_alpha => sc.alpha, sc_ridge => sc.ridge, sc_activation => sc.activation,
            sc_max_random_relaxations => sc.max_random_relaxations,
            sc_mask_inputs => sc.mask_inputs, sc_mask_self => sc.mask_self,
            fcm_fuzziness => fcm.fuzziness, fcm_max_iter => fcm.max_iter,
            fcm_tolerance => fcm.tolerance, fcm_seed => fcm.seed,
            esn_nodes => esn.nodes, esn_alpha => esn.alpha, esn_density => esn.density,
            esn_ridge => esn.ridge, esn_activation => esn.activation,
        );
        let paths = [
            (&self.data, &mut cfg.data),
            (&self.val, &mut cfg.val),
            (&self.test, &mut cfg.test),
            (&self.model, &mut cfg.model),
            (&self.out, &mut cfg.out),
            (&self.reference, &mut cfg.reference),
        ];
        for (flag, slot) in paths {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if let Some(range) = &self.sc_sparsity_range {
            match range.as_slice() {
                &[lo, hi] => cfg.sc.sparsity_range = [lo, hi],
                _ => bail!("sc.sparsity_range takes exactly two values, got {}", range.len()),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::{CommandFactory, Parser};
    use std::collections::BTreeSet;

    #[derive(Parser)]
    struct Probe {
        #[command(flatten)]
        flags: ConfigFlags,
    }

    fn config_keys() -> BTreeSet<String> {
        let value = serde_json::to_value(RunConfig::default()).unwrap();
        let mut keys = BTreeSet::new();
        for (k, v) in value.as_object().unwrap() {
            match v.as_object() {
                Some(section) => keys.extend(section.keys().map(|s| format!("{k}-{s}"))),
                None => {
                    keys.insert(k.clone());
                }
            }
        }
        keys.into_iter().map(|k| k.replace('_', "-")).collect()
    }

    #[test]
    fn flags_and_config_keys_are_one_to_one() {
        let flags: BTreeSet<String> = Probe::command()
            .get_arguments()
            .filter_map(|a| a.get_long().map(str::to_string))
            .filter(|f| f != "config")
            .collect();
        assert_eq!(flags, config_keys());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"rules": 3, "sc": {"n_max": 40}}"#).unwrap();
        let probe = Probe::try_parse_from(["x", "--config", path.to_str().unwrap(), "--sc-n-max", "20"]).unwrap();
        let cfg = probe.flags.resolve().unwrap();
        assert_eq!(cfg.rules, 3);
        assert_eq!(cfg.sc.n_max, 20);
        assert_eq!(cfg.sc.g_max, ScConfig::default().g_max);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"sc": {"n_maxx": 40}}"#).unwrap();
        let err = RunConfig::from_file(&path).unwrap_err();
        assert!(format!("{err:#}").contains("n_maxx"), "{err:#}");
    }

    #[test]
    fn invalid_values_name_the_field() {
        let probe = Probe::try_parse_from(["x", "--sc-alpha", "1.5"]).unwrap();
        let err = probe.flags.resolve().unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");
        let probe = Probe::try_parse_from(["x", "--gain", "0"]).unwrap();
        assert!(probe.flags.resolve().unwrap_err().to_string().contains("gain"));
        let probe = Probe::try_parse_from(["x", "--sc-sparsity-range", "0.1"]).unwrap();
        assert!(probe.flags.resolve().unwrap_err().to_string().contains("sparsity_range"));
    }

    #[test]
    fn list_flags_split_on_commas() {
        let probe = Probe::try_parse_from(["x", "--sizes", "200,100,100", "--shifts", "y:1,u:2"]).unwrap();
        let cfg = probe.flags.resolve().unwrap();
        assert_eq!(cfg.sizes, vec![200, 100, 100]);
        assert_eq!(cfg.shifts.len(), 2);
        assert_eq!(cfg.shifts[1].lag, 2);
    }

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.validate().is_ok());
    }
}
