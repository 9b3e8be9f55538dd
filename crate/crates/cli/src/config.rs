use kernlab::expsum::Backend;
use num_complex::Complex64;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;

/// Parameters of one run. Every field is optional here; each command states
/// which ones it needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<u64>,
    /// Enumeration level `n`, or the truncation depth for local zeta runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
    /// Valuation `m` of `t = p^m`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_val: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<i64>,
    /// Six rationals `a11, a12, a21, a22, y1, y2`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<String>>,
    /// Complex, written `a+bi`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<String>,
    /// `chi(p)`, complex.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conductor: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cmax: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<Backend>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = Result<T, ConfigError>;

impl RunConfig {
    pub fn load(path: &Path) -> ConfigResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> ConfigResult<Self> {
        toml::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))
    }

    #[cfg(test)]
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain fields serialize")
    }

    /// Fields set in `other` win.
    pub fn overlay(self, other: RunConfig) -> Self {
        macro_rules! pick {
            ($($f:ident),*) => { RunConfig { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(command, p, level, t_val, b, alpha, s, chi, conductor, height, cmax, grid, backend, seed, samples, out)
    }

    pub fn require<T: Clone>(&self, field: &Option<T>, name: &str) -> ConfigResult<T> {
        field
            .clone()
            .ok_or_else(|| ConfigError(format!("missing required field `{name}`")))
    }

    pub fn alpha_rational(&self) -> ConfigResult<Option<[BigRational; 6]>> {
        let Some(entries) = &self.alpha else {
            return Ok(None);
        };
        if entries.len() != 6 {
            return Err(ConfigError(format!("alpha needs 6 entries, got {}", entries.len())));
        }
        let mut out: Vec<BigRational> = vec![];
        for e in entries {
            out.push(
                BigRational::from_str(e.trim()).map_err(|_| ConfigError(format!("alpha entry {e:?} is not a rational")))?,
            );
        }
        Ok(Some(out.try_into().expect("six entries")))
    }
}

/// Parses `a`, `bi`, `a+bi`, `a-bi`, `i`, `-i`.
pub fn parse_complex(text: &str) -> ConfigResult<Complex64> {
    let err = || ConfigError(format!("{text:?} is not a complex number of the form a+bi"));
    let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if t.is_empty() {
        return Err(err());
    }
    let Some(body) = t.strip_suffix('i') else {
        return t.parse::<f64>().map(|x| Complex64::new(x, 0.0)).map_err(|_| err());
    };
    // split at the last sign that is not the leading one or part of an exponent
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let (re, im) = match split {
        Some(k) => (&body[..k], &body[k..]),
        None => ("0", body),
    };
    let im = match im {
        "" | "+" => 1.0,
        "-" => -1.0,
        x => x.parse::<f64>().map_err(|_| err())?,
    };
    let re = re.parse::<f64>().map_err(|_| err())?;
    Ok(Complex64::new(re, im))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complex_forms() {
        assert_eq!(parse_complex("2").unwrap(), Complex64::new(2.0, 0.0));
        assert_eq!(parse_complex("1+0.7i").unwrap(), Complex64::new(1.0, 0.7));
        assert_eq!(parse_complex("1.5-2i").unwrap(), Complex64::new(1.5, -2.0));
        assert_eq!(parse_complex("i").unwrap(), Complex64::new(0.0, 1.0));
        assert_eq!(parse_complex("-i").unwrap(), Complex64::new(0.0, -1.0));
        assert_eq!(parse_complex("-1").unwrap(), Complex64::new(-1.0, 0.0));
        assert_eq!(parse_complex("1e-3+2e-2i").unwrap(), Complex64::new(1e-3, 2e-2));
        assert!(parse_complex("x").is_err());
    }

    #[test]
    fn config_round_trips() {
        let c = RunConfig {
            command: Some("verify-localzeta".into()),
            p: Some(3),
            level: Some(4),
            t_val: Some(2),
            b: Some(-1),
            alpha: Some(vec!["1/2".into(), "0".into(), "3".into(), "1".into(), "-2/3".into(), "9".into()]),
            s: Some("1+0.7i".into()),
            chi: Some("i".into()),
            conductor: Some(2),
            height: Some(4),
            cmax: Some(4),
            grid: Some(12),
            backend: Some(Backend::Floating),
            seed: Some(7),
            samples: Some(10),
            out: Some("r.json".into()),
        };
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(RunConfig::from_toml(&RunConfig::default().to_toml()).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("p = 3\nprime = 5\n").is_err());
    }

    #[test]
    fn overlay_prefers_flags() {
        let file = RunConfig::from_toml("p = 3\nseed = 1\n").unwrap();
        let flags = RunConfig {
            seed: Some(9),
            ..Default::default()
        };
        let c = file.overlay(flags);
        assert_eq!((c.p, c.seed), (Some(3), Some(9)));
    }
}
