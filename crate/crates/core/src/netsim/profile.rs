use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use thiserror::Error;

use crate::model::rng::mix64;

/// Per-connection share of a 50 Gb/s interface split over 32 connections.
pub const PRESET_BANDWIDTH: f64 = 50e9 / 8.0 / 32.0;
/// Token-bucket depth.
pub const BURST_BYTES: f64 = 64.0 * 1024.0;

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("unknown preset {0:?} (expected identity, low, med, high, high-congested or a file path)")]
    UnknownPreset(String),
    #[error("reading {path}: {msg}")]
    Io { path: String, msg: String },
}

/// Link conditions applied to every connection of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct NetProfile {
    pub rtt: Duration,
    /// Bytes per second per connection; infinite means unshaped.
    pub bandwidth: f64,
    pub congested_fraction: f64,
    /// Bandwidth multiplier on congested connections.
    pub congestion_factor: f64,
    /// Standard deviation of the one-way jitter draw.
    pub jitter: Duration,
    pub seed: u64,
    /// Connection count the congested subset is drawn from when the shaping
    /// side cannot see the client's fan-out.
    pub connections: usize,
}

impl Default for NetProfile {
    fn default() -> Self {
        Self::identity()
    }
}

impl NetProfile {
    pub fn identity() -> Self {
        Self {
            rtt: Duration::ZERO,
            bandwidth: f64::INFINITY,
            congested_fraction: 0.0,
            congestion_factor: 1.0,
            jitter: Duration::ZERO,
            seed: 0,
            connections: 32,
        }
    }

    fn with_rtt_ms(rtt_ms: f64) -> Self {
        Self {
            rtt: Duration::from_secs_f64(rtt_ms / 1000.0),
            bandwidth: PRESET_BANDWIDTH,
            ..Self::identity()
        }
    }

    /// Named presets: `identity`, `low` (0.5 ms), `med` (20 ms), `high`
    /// (150 ms) and `high-congested` (150 ms, a quarter of the connections
    /// at 1/8 bandwidth).
    pub fn preset(name: &str) -> Option<Self> {
        Some(match name {
            "identity" => Self::identity(),
            "low" => Self::with_rtt_ms(0.5),
            "med" | "medium" => Self::with_rtt_ms(20.0),
            "high" => Self::with_rtt_ms(150.0),
            "high-congested" => Self {
                congested_fraction: 0.25,
                congestion_factor: 0.125,
                seed: 7,
                ..Self::with_rtt_ms(150.0)
            },
            _ => return None,
        })
    }

    /// A preset name or a path to a profile file.
    pub fn resolve(name_or_path: &str) -> Result<Self, ProfileError> {
        if let Some(p) = Self::preset(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        if path.exists() {
            return Self::load(path);
        }
        Err(ProfileError::UnknownPreset(name_or_path.into()))
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path).map_err(|e| ProfileError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// Parses `key=value` lines; `#` starts a comment. Missing keys keep
    /// their identity values.
    pub fn parse(text: &str) -> Result<Self, ProfileError> {
        let mut p = Self::identity();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ProfileError::Parse { line: i + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            let num = || v.parse::<f64>().map_err(|_| err(format!("{k}: {v:?} is not a number")));
            match k {
                "rtt_ms" => p.rtt = secs(num()? / 1000.0).ok_or_else(|| err("rtt_ms must be >= 0".into()))?,
                "bw_bytes_per_s" => {
                    p.bandwidth = if v == "inf" || v == "0" { f64::INFINITY } else { num()? }
                }
                "congested_fraction" => p.congested_fraction = num()?,
                "congestion_factor" => p.congestion_factor = num()?,
                "jitter_ms" => p.jitter = secs(num()? / 1000.0).ok_or_else(|| err("jitter_ms must be >= 0".into()))?,
                "seed" => p.seed = v.parse().map_err(|_| err(format!("seed: {v:?} is not an integer")))?,
                "connections" => {
                    p.connections = v.parse().map_err(|_| err(format!("connections: {v:?} is not an integer")))?
                }
                _ => return Err(err(format!("unknown key {k:?}"))),
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "rtt_ms={}", self.rtt.as_secs_f64() * 1000.0);
        if self.bandwidth.is_finite() {
            let _ = writeln!(s, "bw_bytes_per_s={}", self.bandwidth);
        } else {
            let _ = writeln!(s, "bw_bytes_per_s=inf");
        }
        let _ = writeln!(s, "congested_fraction={}", self.congested_fraction);
        let _ = writeln!(s, "congestion_factor={}", self.congestion_factor);
        let _ = writeln!(s, "jitter_ms={}", self.jitter.as_secs_f64() * 1000.0);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "connections={}", self.connections);
        s
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if !(self.bandwidth > 0.0) {
            return Err(ProfileError::Invalid(format!("bandwidth {} must be > 0", self.bandwidth)));
        }
        if !(0.0..=1.0).contains(&self.congested_fraction) {
            return Err(ProfileError::Invalid(format!("congested_fraction {} outside [0, 1]", self.congested_fraction)));
        }
        if !(self.congestion_factor > 0.0 && self.congestion_factor <= 1.0) {
            return Err(ProfileError::Invalid(format!("congestion_factor {} outside (0, 1]", self.congestion_factor)));
        }
        if self.connections == 0 {
            return Err(ProfileError::Invalid("connections must be >= 1".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.rtt.is_zero() && self.bandwidth.is_infinite() && self.jitter.is_zero()
    }

    pub fn one_way(&self) -> Duration {
        self.rtt / 2
    }

    /// Number of congested connections among `n`.
    pub fn congested_count(&self, n: usize) -> usize {
        ((self.congested_fraction * n as f64) + 1e-9).floor() as usize
    }

    /// Congestion flag per connection index: the first
    /// [`NetProfile::congested_count`] indices ranked by a seeded hash.
    pub fn congested_set(&self, n: usize) -> Vec<bool> {
        let mut ranked: Vec<usize> = (0..n).collect();
        ranked.sort_by_key(|&i| (mix64(self.seed ^ mix64(i as u64)), i));
        let mut out = vec![false; n];
        for &i in ranked.iter().take(self.congested_count(n)) {
            out[i] = true;
        }
        out
    }

    /// Bandwidth of connection `index` out of `n`.
    pub fn link_rate(&self, index: usize, n: usize) -> f64 {
        if self.congested_set(n)[index] {
            self.bandwidth * self.congestion_factor
        } else {
            self.bandwidth
        }
    }
}

fn secs(s: f64) -> Option<Duration> {
    Duration::try_from_secs_f64(s).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_of_32_is_exactly_8_and_stable() {
        let p = NetProfile::preset("high-congested").unwrap();
        let a = p.congested_set(32);
        assert_eq!(a.iter().filter(|&&c| c).count(), 8);
        assert_eq!(a, p.congested_set(32));
        let other = NetProfile { seed: 8, ..p.clone() };
        assert_ne!(a, other.congested_set(32));
    }

    #[test]
    fn floor_of_fraction() {
        let p = NetProfile { congested_fraction: 0.3, ..NetProfile::identity() };
        assert_eq!(p.congested_count(10), 3);
        assert_eq!(p.congested_count(3), 0);
        assert_eq!(p.congested_count(4), 1);
    }

    #[test]
    fn text_round_trip() {
        for name in ["identity", "low", "med", "high", "high-congested"] {
            let p = NetProfile::preset(name).unwrap();
            assert_eq!(NetProfile::parse(&p.to_text()).unwrap(), p, "{name}");
        }
    }

    #[test]
    fn parse_reports_line_numbers() {
        let e = NetProfile::parse("rtt_ms=1\nbogus=2\n").unwrap_err();
        assert_eq!(e, ProfileError::Parse { line: 2, msg: "unknown key \"bogus\"".into() });
        assert!(NetProfile::parse("congestion_factor=0").is_err());
        assert!(NetProfile::parse("congested_fraction=1.5").is_err());
    }
}
