//! Run configuration: a JSON file mirroring the command-line flags, with
//! flags taking precedence.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use dpbo::bo::{AcquisitionRule, DEFAULT_WARM_START};
use dpbo::dp::ScaleForm;
use dpbo::gp::KernelSpec;
use dpbo::preprocess::GroupingScheme;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const DEFAULT_AZ_STEP: f64 = 5.0;
pub const DEFAULT_TILT_STEP: f64 = 3.0;
pub const DEFAULT_ITERS: usize = 100;
pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1.0;
pub const DEFAULT_SWEEP_SAMPLES: usize = 10_000;
pub const DEFAULT_SWEEP_EPSILONS: [f64; 7] = [0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0];
pub const DEFAULT_SWEEP_DELTAS: [f64; 2] = [0.01, 0.1];

/// Every option, all optional. Deserialized from `--config` and parsed from
/// flags; [`Options::merge`] layers the two.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    /// JSON file with any of these options (flags win)
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Scenario JSON for `synth`
    #[arg(long, value_name = "FILE")]
    pub scenario: Option<PathBuf>,
    /// Generation CSV (`timestamp,power_w`)
    #[arg(long, value_name = "FILE")]
    pub generation: Option<PathBuf>,
    /// Irradiance CSV
    #[arg(long, value_name = "FILE")]
    pub irradiance: Option<PathBuf>,
    /// Output directory of a previous `infer` run
    #[arg(long, value_name = "DIR")]
    pub trace: Option<PathBuf>,
    /// JSON with a `location` object, e.g. the `ground_truth.json` from `synth`
    #[arg(long, value_name = "FILE")]
    pub site: Option<PathBuf>,
    /// JSON with an `orientation` object used as the sweep reference
    #[arg(long, value_name = "FILE")]
    pub reference: Option<PathBuf>,

    #[arg(long, allow_hyphen_values = true)]
    pub latitude: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub longitude: Option<f64>,
    #[arg(long)]
    pub site_id: Option<String>,

    /// Azimuth grid spacing, degrees
    #[arg(long)]
    pub grid_az_step: Option<f64>,
    /// Tilt grid spacing, degrees
    #[arg(long)]
    pub grid_tilt_step: Option<f64>,
    /// BO budget T
    #[arg(long = "iters", value_name = "T")]
    pub iters: Option<usize>,
    /// Number of random initial points
    #[arg(long)]
    pub warm_start: Option<usize>,
    /// Privacy budget; a comma-separated list for `sweep`
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub epsilon: Option<Vec<f64>>,
    /// Failure probability; a comma-separated list for `sweep`
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub delta: Option<Vec<f64>>,
    /// Number of releases to draw
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Kernel lengthscales `AZ,TILT` in degrees
    #[arg(long, value_delimiter = ',', value_name = "AZ,TILT")]
    pub lengthscales: Option<Vec<f64>>,
    /// Use exp(-|x - y|^2) on raw degrees with no azimuth wraparound
    #[arg(long)]
    #[serde(default)]
    pub unit_kernel: bool,
    /// `ucb`, or `ucb_unvisited` to visit every grid point once before repeating
    #[arg(long, value_parser = parse_acquisition)]
    pub acquisition: Option<AcquisitionRule>,
    /// `twice_sensitivity` or `phi_plus_c`
    #[arg(long, value_parser = parse_scale_form)]
    pub scale_form: Option<ScaleForm>,
    /// `monthly` or `iso_weekly`
    #[arg(long, value_parser = parse_grouping)]
    pub grouping: Option<GroupingScheme>,
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|e| e.to_string())
}

fn parse_acquisition(s: &str) -> std::result::Result<AcquisitionRule, String> {
    parse_enum(s)
}

fn parse_scale_form(s: &str) -> std::result::Result<ScaleForm, String> {
    parse_enum(s)
}

fn parse_grouping(s: &str) -> std::result::Result<GroupingScheme, String> {
    parse_enum(s)
}

impl Options {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// Fields set in `flags` replace those in `self`.
    pub fn merge(self, flags: Options) -> Options {
        macro_rules! pick {
            ($($f:ident),*) => {
                Options {
                    config: flags.config.or(self.config),
                    unit_kernel: flags.unit_kernel || self.unit_kernel,
                    $($f: flags.$f.or(self.$f),)*
                }
            };
        }
        pick!(
            scenario,
            generation,
            irradiance,
            trace,
            site,
            reference,
            latitude,
            longitude,
            site_id,
            grid_az_step,
            grid_tilt_step,
            iters,
            warm_start,
            epsilon,
            delta,
            samples,
            seed,
            out,
            lengthscales,
            acquisition,
            scale_form,
            grouping
        )
    }

    /// Reads `--config` when given and layers the flags on top.
    pub fn load(flags: Options) -> Result<Options> {
        match &flags.config {
            Some(path) => Ok(Options::from_file(path)?.merge(flags)),
            None => Ok(flags),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        if self.unit_kernel {
            if self.lengthscales.is_some() {
                return Err(CliError::Validation(
                    "--unit-kernel and --lengthscales are exclusive".into(),
                ));
            }
            return Ok(KernelSpec::unit());
        }
        let mut k = KernelSpec::default();
        if let Some(ls) = &self.lengthscales {
            let [a, t] = ls[..] else {
                return Err(CliError::Validation(
                    "lengthscales takes exactly two values".into(),
                ));
            };
            k.lengthscales = [a, t];
        }
        Ok(k)
    }

    pub fn budget(&self) -> usize {
        self.iters.unwrap_or(DEFAULT_ITERS)
    }

    pub fn warm_start(&self) -> usize {
        self.warm_start.unwrap_or_else(|| {
            DEFAULT_WARM_START
                .min(self.budget().saturating_sub(1))
                .max(1)
        })
    }

    pub fn grid_steps(&self) -> (f64, f64) {
        (
            self.grid_az_step.unwrap_or(DEFAULT_AZ_STEP),
            self.grid_tilt_step.unwrap_or(DEFAULT_TILT_STEP),
        )
    }

    /// Single ε for `publish`.
    pub fn single_epsilon(&self) -> Result<f64> {
        single("epsilon", &self.epsilon, DEFAULT_EPSILON)
    }

    /// Single δ, if given.
    pub fn single_delta(&self) -> Result<Option<f64>> {
        match &self.delta {
            None => Ok(None),
            Some(_) => single("delta", &self.delta, DEFAULT_DELTA).map(Some),
        }
    }

    pub fn required<'a>(&self, name: &str, v: &'a Option<PathBuf>) -> Result<&'a Path> {
        v.as_deref()
            .ok_or_else(|| CliError::Validation(format!("missing required option --{name}")))
    }
}

fn single(name: &str, v: &Option<Vec<f64>>, default: f64) -> Result<f64> {
    match v.as_deref() {
        None => Ok(default),
        Some([x]) => Ok(*x),
        Some(xs) => Err(CliError::Validation(format!(
            "--{name} takes one value here, got {}",
            xs.len()
        ))),
    }
}

/// Digest of the resolved settings and the bytes of every input file. Output
/// locations are excluded so that a rerun into another directory carries the
/// same header.
pub fn config_hash(
    command: &str,
    settings: &serde_json::Value,
    inputs: &[&Path],
) -> Result<String> {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update([0]);
    h.update(settings.to_string().as_bytes());
    for p in inputs {
        h.update([0]);
        h.update(fs::read(p).map_err(|e| CliError::io(p, e))?);
    }
    Ok(hex::encode(&h.finalize()[..8]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: Options = serde_json::from_str(
            r#"{"iters": 50, "seed": 3, "epsilon": [0.5], "unit_kernel": false}"#,
        )
        .unwrap();
        let flags = Options {
            seed: Some(9),
            ..Options::default()
        };
        let m = file.merge(flags);
        assert_eq!(m.iters, Some(50));
        assert_eq!(m.seed, Some(9));
        assert_eq!(m.single_epsilon().unwrap(), 0.5);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<Options>(r#"{"itres": 5}"#).is_err());
    }

    #[test]
    fn enum_values_parse_with_dashes() {
        assert_eq!(
            parse_acquisition("ucb-unvisited").unwrap(),
            AcquisitionRule::UcbUnvisited
        );
        assert_eq!(parse_scale_form("phi_plus_c").unwrap(), ScaleForm::PhiPlusC);
        assert_eq!(
            parse_grouping("iso-weekly").unwrap(),
            GroupingScheme::IsoWeekly
        );
        assert!(parse_grouping("daily").is_err());
    }

    #[test]
    fn warm_start_defaults_below_budget() {
        let o = Options {
            iters: Some(4),
            ..Options::default()
        };
        assert_eq!(o.warm_start(), 3);
        assert_eq!(Options::default().warm_start(), DEFAULT_WARM_START);
    }

    #[test]
    fn kernel_options() {
        let o = Options {
            lengthscales: Some(vec![60.0, 20.0]),
            ..Options::default()
        };
        assert_eq!(o.kernel().unwrap().lengthscales, [60.0, 20.0]);
        let u = Options {
            unit_kernel: true,
            ..Options::default()
        };
        assert_eq!(u.kernel().unwrap(), KernelSpec::unit());
    }
}
