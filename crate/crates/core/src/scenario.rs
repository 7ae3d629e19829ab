//! Run configuration: the `key = value` config format, parameter defaults,
//! and the derived quantities the topology builder needs.
//!
//! The topology is a two-switch path: client hosts reach SW1 over 155.52
//! Mbps access links, a single 45 Mbps trunk joins SW1 and SW2, and server
//! hosts hang off SW2 over 155.52 Mbps links. All links are 1000 km, so the
//! one-way path is 15 ms, the round trip 30 ms, and rate feedback from the
//! trunk queue reaches a server and returns as fresh load in 10 ms.

use thiserror::Error;

use crate::abr::SesParams;
use crate::engine::SimTime;
use crate::erica::EricaParams;
use crate::fabric::CELL_BITS;
use crate::tcp::TcpParams;
use crate::www::PER_CLIENT_LOAD_MBPS;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {msg}")]
    Value {
        line: usize,
        key: String,
        msg: String,
    },
    #[error("invalid configuration: {msg}")]
    Invariant { msg: String },
}

/// Source end-system settings. Peak and initial rates default from the
/// access-link cell rate when not given explicitly.
#[derive(Clone, Copy, Debug, Default)]
pub struct SesConfig {
    pub pcr: Option<f64>,
    pub mcr: f64,
    pub icr: Option<f64>,
    pub nrm: u32,
    pub adtf: SimTime,
}

#[derive(Clone, Copy, Debug)]
pub struct ScenarioConfig {
    pub n_servers: u32,
    pub k_clients_per_server: u32,
    pub bottleneck_rate_bps: f64,
    pub access_rate_bps: f64,
    pub link_length_km: f64,
    pub sim_duration: SimTime,
    /// Initial span excluded from throughput accounting (never from queue
    /// maxima).
    pub warmup: SimTime,
    pub seed: u64,
    pub erica: EricaParams,
    pub ses: SesConfig,
    pub tcp: TcpParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_servers: 1,
            k_clients_per_server: 15,
            bottleneck_rate_bps: 45e6,
            access_rate_bps: 155.52e6,
            link_length_km: 1000.0,
            sim_duration: SimTime::from_secs(100),
            warmup: SimTime::ZERO,
            seed: 1,
            erica: EricaParams::default(),
            ses: SesConfig {
                pcr: None,
                mcr: 0.0,
                icr: None,
                nrm: 32,
                adtf: SimTime::from_millis(500),
            },
            tcp: TcpParams::default(),
        }
    }
}

impl ScenarioConfig {
    /// Parses the config text onto the paper defaults.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines onto this configuration. Unknown keys
    /// and out-of-range values are rejected with the offending line.
    pub fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: content.to_string(),
                });
            };
            let key = key.trim();
            let value = value.trim();
            self.apply_key(line, key, value)?;
        }
        self.validate()
    }

    fn apply_key(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |msg: String| ConfigError::Value {
            line,
            key: key.to_string(),
            msg,
        };
        match key {
            "n_servers" => self.n_servers = parse_count(value).map_err(bad)?,
            "k_clients_per_server" => self.k_clients_per_server = parse_count(value).map_err(bad)?,
            "bottleneck_rate" => self.bottleneck_rate_bps = parse_rate_bps(value).map_err(bad)?,
            "access_rate" => self.access_rate_bps = parse_rate_bps(value).map_err(bad)?,
            "link_length_km" => {
                let v: f64 = value.parse().map_err(|_| bad("not a number".into()))?;
                if !(v >= 0.0) {
                    return Err(bad("must be non-negative".into()));
                }
                self.link_length_km = v;
            }
            "sim_duration" => self.sim_duration = parse_duration(value).map_err(bad)?,
            "warmup" => self.warmup = parse_duration(value).map_err(bad)?,
            "seed" => self.seed = value.parse().map_err(|_| bad("not a 64-bit integer".into()))?,

            "erica.interval_cells" => self.erica.interval_cells = parse_count(value).map_err(bad)?,
            "erica.interval_time" => self.erica.interval_time = parse_duration(value).map_err(bad)?,
            "erica.t0" => self.erica.t0 = parse_duration(value).map_err(bad)?,
            "erica.a" => {
                let v: f64 = value.parse().map_err(|_| bad("not a number".into()))?;
                if !(v > 1.0) {
                    return Err(bad("a must exceed 1".into()));
                }
                self.erica.a = v;
            }
            "erica.b" => {
                let v: f64 = value.parse().map_err(|_| bad("not a number".into()))?;
                if !(v > 1.0) {
                    return Err(bad("b must exceed 1".into()));
                }
                self.erica.b = v;
            }
            "erica.qdlf" => {
                let v: f64 = value.parse().map_err(|_| bad("not a number".into()))?;
                if !(v > 0.0 && v <= 1.0) {
                    return Err(bad("qdlf must be in (0, 1]".into()));
                }
                self.erica.qdlf = v;
            }

            "ses.pcr" => self.ses.pcr = Some(parse_rate_cells(value).map_err(bad)?),
            "ses.mcr" => self.ses.mcr = parse_rate_cells(value).map_err(bad)?,
            "ses.icr" => self.ses.icr = Some(parse_rate_cells(value).map_err(bad)?),
            "ses.nrm" => self.ses.nrm = parse_count(value).map_err(bad)?,
            "ses.adtf" => self.ses.adtf = parse_duration(value).map_err(bad)?,

            "tcp.mss" => self.tcp.mss = parse_count(value).map_err(bad)?,
            "tcp.max_window" => {
                self.tcp.max_window = value.parse().map_err(|_| bad("not an integer".into()))?
            }
            "tcp.timer_granularity" => {
                self.tcp.timer_granularity = parse_duration(value).map_err(bad)?
            }
            "tcp.idle_restart" => {
                self.tcp.idle_restart = match value {
                    "true" | "on" | "1" => true,
                    "false" | "off" | "0" => false,
                    other => return Err(bad(format!("expected true/false, got `{other}`"))),
                }
            }

            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |msg: String| ConfigError::Invariant { msg };
        if self.n_servers < 1 {
            return Err(inv("n_servers must be at least 1".into()));
        }
        if self.k_clients_per_server < 1 {
            return Err(inv("k_clients_per_server must be at least 1".into()));
        }
        if !(self.bottleneck_rate_bps > 0.0) || !(self.access_rate_bps > 0.0) {
            return Err(inv("link rates must be positive".into()));
        }
        if self.sim_duration <= self.warmup {
            return Err(inv(format!(
                "sim_duration ({}) must exceed warmup ({})",
                self.sim_duration, self.warmup
            )));
        }
        self.erica.validate().map_err(|m| inv(format!("erica: {m}")))?;
        self.ses_params()
            .validate()
            .map_err(|m| inv(format!("ses: {m}")))?;
        self.tcp.validate().map_err(|m| inv(format!("tcp: {m}")))?;
        Ok(())
    }

    /// Access-link capacity in cells/s.
    pub fn access_cell_rate(&self) -> f64 {
        self.access_rate_bps / CELL_BITS
    }

    /// Trunk capacity in cells/s.
    pub fn bottleneck_cell_rate(&self) -> f64 {
        self.bottleneck_rate_bps / CELL_BITS
    }

    /// Resolves source parameters: PCR defaults to the access-link cell
    /// rate and ICR to a tenth of PCR.
    pub fn ses_params(&self) -> SesParams {
        let pcr = self.ses.pcr.unwrap_or_else(|| self.access_cell_rate());
        SesParams {
            pcr,
            mcr: self.ses.mcr,
            icr: self.ses.icr.unwrap_or(pcr / 10.0),
            nrm: self.ses.nrm,
            adtf: self.ses.adtf,
        }
    }

    pub fn total_clients(&self) -> u32 {
        self.n_servers * self.k_clients_per_server
    }

    /// Unconstrained aggregate demand, printed in the run header as a
    /// planning aid.
    pub fn expected_offered_load_mbps(&self) -> f64 {
        self.total_clients() as f64 * PER_CLIENT_LOAD_MBPS
    }
}

fn parse_count(s: &str) -> Result<u32, String> {
    let v: u32 = s.parse().map_err(|_| "not a positive integer".to_string())?;
    if v == 0 {
        return Err("must be at least 1".into());
    }
    Ok(v)
}

/// Duration with a unit suffix: `ns`, `us`, `ms`, or `s`.
pub fn parse_duration(s: &str) -> Result<SimTime, String> {
    let s = s.trim();
    let (num, scale) = if let Some(v) = s.strip_suffix("ns") {
        (v, 1.0)
    } else if let Some(v) = s.strip_suffix("us") {
        (v, 1e3)
    } else if let Some(v) = s.strip_suffix("ms") {
        (v, 1e6)
    } else if let Some(v) = s.strip_suffix('s') {
        (v, 1e9)
    } else {
        return Err(format!("`{s}` needs a unit suffix (ns/us/ms/s)"));
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("`{num}` is not a number"))?;
    if !(v >= 0.0) || !v.is_finite() {
        return Err("must be a non-negative finite duration".into());
    }
    Ok(SimTime::from_nanos((v * scale).round() as u64))
}

/// Link rate with a unit suffix (`Mbps`, `kbps`, or `cps`), in bits/s.
pub fn parse_rate_bps(s: &str) -> Result<f64, String> {
    let (v, unit) = split_rate(s)?;
    Ok(match unit {
        RateUnit::Mbps => v * 1e6,
        RateUnit::Kbps => v * 1e3,
        RateUnit::Cps => v * CELL_BITS,
    })
}

/// Cell rate with a unit suffix (`Mbps`, `kbps`, or `cps`), in cells/s.
pub fn parse_rate_cells(s: &str) -> Result<f64, String> {
    let (v, unit) = split_rate(s)?;
    Ok(match unit {
        RateUnit::Mbps => v * 1e6 / CELL_BITS,
        RateUnit::Kbps => v * 1e3 / CELL_BITS,
        RateUnit::Cps => v,
    })
}

enum RateUnit {
    Mbps,
    Kbps,
    Cps,
}

fn split_rate(s: &str) -> Result<(f64, RateUnit), String> {
    let s = s.trim();
    let (num, unit) = if let Some(v) = s.strip_suffix("Mbps") {
        (v, RateUnit::Mbps)
    } else if let Some(v) = s.strip_suffix("kbps") {
        (v, RateUnit::Kbps)
    } else if let Some(v) = s.strip_suffix("cps") {
        (v, RateUnit::Cps)
    } else {
        return Err(format!("`{s}` needs a unit suffix (Mbps/kbps/cps)"));
    };
    let v: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("`{num}` is not a number"))?;
    if !(v >= 0.0) || !v.is_finite() {
        return Err("must be a non-negative finite rate".into());
    }
    Ok((v, unit))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_yields_full_defaults() {
        let cfg = ScenarioConfig::parse("").unwrap();
        assert_eq!(cfg.k_clients_per_server, 15);
        assert_eq!(cfg.bottleneck_rate_bps, 45e6);
        assert_eq!(cfg.access_rate_bps, 155.52e6);
        assert_eq!(cfg.erica.a, 1.15);
        assert_eq!(cfg.erica.b, 1.05);
        assert_eq!(cfg.erica.t0, SimTime::from_micros(500));
        assert_eq!(cfg.erica.qdlf, 0.5);
        assert_eq!(cfg.erica.interval_cells, 500);
        assert_eq!(cfg.erica.interval_time, SimTime::from_millis(5));
        assert_eq!(cfg.ses.nrm, 32);
        assert_eq!(cfg.ses.adtf, SimTime::from_millis(500));
        assert_eq!(cfg.tcp.mss, 512);
        assert_eq!(cfg.tcp.max_window, 1_048_576);
        let ses = cfg.ses_params();
        assert!((ses.pcr - 366_792.45).abs() < 0.01);
        assert!((ses.icr - ses.pcr / 10.0).abs() < 1e-9);
    }

    #[test]
    fn single_override_keeps_other_defaults() {
        let cfg = ScenarioConfig::parse("n_servers = 5").unwrap();
        assert_eq!(cfg.n_servers, 5);
        assert_eq!(cfg.k_clients_per_server, 15);
    }

    #[test]
    fn comments_and_units_parse() {
        let text = "\
# topology
n_servers = 2
bottleneck_rate = 45 Mbps   # T3
erica.t0 = 500 us
ses.icr = 36679 cps
sim_duration = 30 s
tcp.idle_restart = off
";
        let cfg = ScenarioConfig::parse(text).unwrap();
        assert_eq!(cfg.n_servers, 2);
        assert_eq!(cfg.sim_duration, SimTime::from_secs(30));
        assert_eq!(cfg.ses_params().icr, 36_679.0);
        assert!(!cfg.tcp.idle_restart);
    }

    #[test]
    fn curve_parameter_below_one_is_rejected() {
        let err = ScenarioConfig::parse("erica.a = 0.9").unwrap_err();
        match err {
            ConfigError::Value { line, key, msg } => {
                assert_eq!(line, 1);
                assert_eq!(key, "erica.a");
                assert!(msg.contains("exceed 1"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = ScenarioConfig::parse("n_servers = 1\nbogus = 3\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey {
                line: 2,
                key: "bogus".into()
            }
        );
    }

    #[test]
    fn malformed_line_is_rejected() {
        let err = ScenarioConfig::parse("what even is this").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, .. }));
    }

    #[test]
    fn duration_requires_suffix() {
        assert!(parse_duration("100").is_err());
        assert_eq!(parse_duration("100ms").unwrap(), SimTime::from_millis(100));
        assert_eq!(parse_duration("2.5 s").unwrap(), SimTime::from_millis(2500));
        assert_eq!(parse_duration("500 us").unwrap(), SimTime::from_micros(500));
    }

    #[test]
    fn warmup_must_fit_in_duration() {
        let err = ScenarioConfig::parse("sim_duration = 10s\nwarmup = 10s").unwrap_err();
        assert!(matches!(err, ConfigError::Invariant { .. }));
    }

    #[test]
    fn offered_load_planning_figures() {
        let mut cfg = ScenarioConfig::default();
        cfg.n_servers = 5;
        assert!((cfg.expected_offered_load_mbps() - 36.0).abs() < 1e-9);
        cfg.n_servers = 15;
        assert!((cfg.expected_offered_load_mbps() - 108.0).abs() < 1e-9);
        cfg.n_servers = 1;
        assert!((cfg.expected_offered_load_mbps() - 7.2).abs() < 1e-9);
    }

    #[test]
    fn cell_rate_of_bottleneck() {
        let cfg = ScenarioConfig::default();
        assert!((cfg.bottleneck_cell_rate() - 106_132.075).abs() < 0.01);
        assert!((cfg.access_cell_rate() - 366_792.45).abs() < 0.01);
    }
}
