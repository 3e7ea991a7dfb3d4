//! Option resolution: command-line flag, then config file, then default.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use lambda_core::genealogy::TimeSeriesData;
use lambda_core::kv::KvFile;
use lambda_core::prior::PriorSpec;
use lambda_core::{Error, LambdaMeasure, MutationModel};

use crate::CliError;

#[derive(Debug, Default)]
pub struct Config {
    kv: KvFile,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = read(p)?;
                Ok(Self { kv: KvFile::parse(&text)? })
            }
        }
    }

    /// Flag value if given, else the config entry `key`, else `default`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick_opt(flag, key)?.unwrap_or(default))
    }

    pub fn pick_opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.kv.get_str(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| CliError::Core(Error::Data(format!("config key `{key}`: {e}")))),
        }
    }

    /// Prior settings from the keys eta, truncation, alpha0 and sigma_prior.
    pub fn prior(&self, truncation: Option<usize>, alpha0: Option<f64>, eta: Option<f64>) -> Result<PriorSpec, CliError> {
        let d = PriorSpec::default();
        let sigma_prior = match self.kv.get_tuples("sigma_prior", 2)? {
            Some(t) if t.len() == 1 => (t[0][0], t[0][1]),
            Some(_) => return Err(CliError::Core(Error::Data("sigma_prior must be a single pair".into()))),
            None => d.sigma_prior,
        };
        let spec = PriorSpec {
            eta: self.pick(eta, "eta", d.eta)?,
            truncation: self.pick(truncation, "truncation", d.truncation)?,
            alpha0: self.pick(alpha0, "alpha0", d.alpha0)?,
            sigma_prior,
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Core(Error::Data(format!("cannot read {}: {e}", path.display()))))
}

/// A built-in measure name, or a key-value measure file.
pub fn measure(spec: &str) -> Result<LambdaMeasure, CliError> {
    if let Some(m) = LambdaMeasure::named(spec)? {
        return Ok(m);
    }
    let path = Path::new(spec);
    if path.exists() {
        return Ok(LambdaMeasure::from_kv(&KvFile::parse(&read(path)?)?)?);
    }
    Err(CliError::Core(Error::Data(format!("`{spec}` is neither a built-in measure nor a readable file"))))
}

pub fn dataset(path: &Path) -> Result<TimeSeriesData, CliError> {
    let text = read(path)?;
    TimeSeriesData::parse(&text).map_err(|e| match e {
        Error::Parse { line, msg } => CliError::Core(Error::Data(format!("{}:{line}: {msg}", path.display()))),
        other => CliError::Core(other),
    })
}

/// `binary-loci` (one uniformly chosen locus flips per event) or `pim`
/// (parent-independent over `types` labels 0..d).
pub fn mutation_model(kind: &str, theta: f64, loci: usize, types: usize) -> Result<MutationModel, CliError> {
    match kind {
        "binary-loci" => Ok(MutationModel::binary_loci(theta, loci)?),
        "pim" => Ok(MutationModel::parent_independent(theta, types)?),
        _ => Err(CliError::Usage(format!("unknown model `{kind}` (expected binary-loci or pim)"))),
    }
}
