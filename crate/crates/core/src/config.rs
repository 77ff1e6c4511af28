//! Run configuration: defaults, a flat `key = value` file format and
//! one-based column ranges.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::MetricsMode;
use crate::mlfit::DEFAULT_INITS;
use crate::screen::{AltCov, Pi0Grid, ScreenOptions};
use crate::tweedie::RegimeShift;

/// Default survival thresholds.
pub const DEFAULT_TARGETS: [f64; 4] = [20.0, 40.0, 60.0, 80.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScreenConfig {
    /// Zero-based column indices of the control regime.
    pub control_cols: Vec<usize>,
    /// Zero-based column indices of the test regime.
    pub test_cols: Vec<usize>,
    pub row_fraction: f64,
    pub control_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
    pub inits: (f64, f64),
    pub shift: RegimeShift,
    pub targets: Vec<f64>,
    pub pi0_grid: Pi0Grid,
    pub ngridpts: usize,
    pub prune: f64,
    pub zeta: f64,
    pub digits: u32,
    pub alt_cov: AltCov,
    pub metrics_mode: MetricsMode,
    pub threads: Option<usize>,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        ScreenConfig {
            control_cols: Vec::new(),
            test_cols: Vec::new(),
            row_fraction: 1.0,
            control_fraction: 1.0,
            test_fraction: 1.0,
            seed: 1,
            inits: DEFAULT_INITS,
            shift: RegimeShift::default(),
            targets: DEFAULT_TARGETS.to_vec(),
            pi0_grid: Pi0Grid::default(),
            ngridpts: 10,
            prune: 0.2,
            zeta: 5.0,
            digits: 3,
            alt_cov: AltCov::default(),
            metrics_mode: MetricsMode::default(),
            threads: None,
        }
    }
}

/// Recognised configuration keys, in file order.
pub const KEYS: [&str; 17] = [
    "control_cols",
    "test_cols",
    "row_fraction",
    "control_fraction",
    "test_fraction",
    "seed",
    "inits",
    "shift",
    "targets",
    "pi0_grid",
    "ngridpts",
    "prune",
    "zeta",
    "digits",
    "alt_cov",
    "metrics_mode",
    "threads",
];

impl ScreenConfig {
    /// Read a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = ScreenConfig::default();
        cfg.merge_file(path)?;
        Ok(cfg)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_str(&text).map_err(|e| match e {
            Error::Parse { line, column, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                column,
                message,
            },
            other => other,
        })
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn merge_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: Default::default(),
                line: n as u64 + 1,
                column: 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(())
    }

    /// Set one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "control_cols" => self.control_cols = parse_columns(value)?,
            "test_cols" => self.test_cols = parse_columns(value)?,
            "row_fraction" => self.row_fraction = parse_num(key, value)?,
            "control_fraction" => self.control_fraction = parse_num(key, value)?,
            "test_fraction" => self.test_fraction = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "inits" => {
                let v = parse_list::<2>(key, value)?;
                self.inits = (v[0], v[1]);
            }
            "shift" => {
                let v = parse_list::<3>(key, value)?;
                self.shift = RegimeShift::new(v[0], v[1], v[2])?;
            }
            "targets" => {
                self.targets = split_list(value)
                    .map(|s| parse_num(key, s))
                    .collect::<Result<_>>()?;
            }
            "pi0_grid" => {
                let v = parse_list::<3>(key, value)?;
                self.pi0_grid = Pi0Grid {
                    from: v[0],
                    to: v[1],
                    step: v[2],
                };
            }
            "ngridpts" => self.ngridpts = parse_num(key, value)?,
            "prune" => self.prune = parse_num(key, value)?,
            "zeta" => self.zeta = parse_num(key, value)?,
            "digits" => self.digits = parse_num(key, value)?,
            "alt_cov" => {
                self.alt_cov = match value {
                    "empirical" => AltCov::Empirical,
                    "control" => AltCov::Control,
                    _ => return Err(Error::Config(format!("alt_cov must be empirical or control, got `{value}`"))),
                }
            }
            "metrics_mode" => {
                self.metrics_mode = match value {
                    "plugin" => MetricsMode::Plugin,
                    "predictive" => MetricsMode::Predictive,
                    _ => {
                        return Err(Error::Config(format!(
                            "metrics_mode must be plugin or predictive, got `{value}`"
                        )))
                    }
                }
            }
            "threads" => {
                self.threads = if value == "auto" {
                    None
                } else {
                    Some(parse_num(key, value)?)
                }
            }
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.control_cols.is_empty() || self.test_cols.is_empty() {
            return Err(Error::Config("control_cols and test_cols must both be set".into()));
        }
        if let Some(c) = self.control_cols.iter().find(|c| self.test_cols.contains(c)) {
            return Err(Error::Config(format!("column {} is in both regimes", c + 1)));
        }
        for (name, f) in [
            ("row_fraction", self.row_fraction),
            ("control_fraction", self.control_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {f}")));
            }
        }
        if self.targets.is_empty() || self.targets.iter().any(|d| !d.is_finite()) {
            return Err(Error::Config("targets must be a nonempty list of finite numbers".into()));
        }
        if self.digits > 15 {
            return Err(Error::Config("digits must be at most 15".into()));
        }
        self.options().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn options(&self) -> ScreenOptions {
        ScreenOptions {
            ngridpts: self.ngridpts,
            prune: self.prune,
            shift: self.shift,
            zeta: self.zeta,
            pi0_grid: self.pi0_grid,
            alt_cov: self.alt_cov,
            inits: self.inits,
            threads: self.threads,
        }
    }

    /// Textual value of every key, in the config file syntax.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let values = [
            format_columns(&self.control_cols),
            format_columns(&self.test_cols),
            self.row_fraction.to_string(),
            self.control_fraction.to_string(),
            self.test_fraction.to_string(),
            self.seed.to_string(),
            list(&[self.inits.0, self.inits.1]),
            list(&[self.shift.psi, self.shift.delta, self.shift.rho]),
            list(&self.targets),
            list(&[self.pi0_grid.from, self.pi0_grid.to, self.pi0_grid.step]),
            self.ngridpts.to_string(),
            self.prune.to_string(),
            self.zeta.to_string(),
            self.digits.to_string(),
            match self.alt_cov {
                AltCov::Empirical => "empirical".into(),
                AltCov::Control => "control".into(),
            },
            match self.metrics_mode {
                MetricsMode::Plugin => "plugin".into(),
                MetricsMode::Predictive => "predictive".into(),
            },
            self.threads.map_or("auto".into(), |t| t.to_string()),
        ];
        KEYS.into_iter().zip(values).collect()
    }

    /// Render as a config file that reads back to the same value.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn split_list(value: &str) -> impl Iterator<Item = &str> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
}

fn parse_list<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let items: Vec<f64> = split_list(value).map(|s| parse_num(key, s)).collect::<Result<_>>()?;
    items
        .try_into()
        .map_err(|_| Error::Config(format!("{key}: expected {N} numbers, got `{value}`")))
}

/// Parse one-based ranges such as `1-44,50` into zero-based indices.
pub fn parse_columns(spec: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || Error::Config(format!("bad column range `{part}`"));
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (
                a.trim().parse::<usize>().map_err(|_| bad())?,
                b.trim().parse::<usize>().map_err(|_| bad())?,
            ),
            None => {
                let v = part.parse::<usize>().map_err(|_| bad())?;
                (v, v)
            }
        };
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        for c in lo..=hi {
            if out.contains(&(c - 1)) {
                return Err(Error::Config(format!("column {c} listed twice")));
            }
            out.push(c - 1);
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("empty column list `{spec}`")));
    }
    Ok(out)
}

/// Inverse of [`parse_columns`], merging consecutive runs.
pub fn format_columns(cols: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < cols.len() {
        let mut j = i;
        while j + 1 < cols.len() && cols[j + 1] == cols[j] + 1 {
            j += 1;
        }
        parts.push(if i == j {
            format!("{}", cols[i] + 1)
        } else {
            format!("{}-{}", cols[i] + 1, cols[j] + 1)
        });
        i = j + 1;
    }
    parts.join(",")
}
