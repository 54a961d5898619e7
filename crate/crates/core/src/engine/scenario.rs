//! Scenario documents: simulation settings, ACL, traffic and failure schedule.
//!
//! ```toml
//! name = "example"
//!
//! [config]
//! seed = 7
//! strategy = "raf"
//!
//! [[acl]]
//! src = "10.0.0.1"
//! verdict = "deny"
//!
//! [[flows]]
//! src = "h1"
//! dst = "h2"
//! packets = 100
//! gap_ms = 0.5
//!
//! [[failures]]
//! link = "s1-s2"
//! at_ms = 20.0
//! repair_ms = 40.0
//! ```

use std::net::Ipv4Addr;

use serde::Deserialize;
use thiserror::Error;

use crate::controller::{AclEntry, AclVerdict, ControllerConfig};
use crate::dataplane::{Millis, DEFAULT_TABLE_CAPACITY, IP_PROTO_UDP};
use crate::pathfinder::{CountMode, SelectionConfig, Strategy, TierTable, DEFAULT_PATH_CAP};
use crate::reliability::{PathReliabilityRule, ReliabilityMode, DEFAULT_WINDOW};
use crate::topology::line_column;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    /// One-way controller↔switch latency.
    pub ctrl_rtt_ms: Millis,
    /// Per-lookup processing time at a switch.
    pub switch_proc_ms: Millis,
    /// Controller handling time per upstream message.
    pub ctrl_proc_ms: Millis,
    pub tick_interval_ms: Millis,
    /// Absolute stop time; defaults to the last scheduled event plus ten seconds.
    pub horizon_ms: Option<Millis>,
    pub table_capacity: usize,
    pub strategy: Strategy,
    pub count_mode: CountMode,
    pub path_rule: PathReliabilityRule,
    pub reliability_mode: ReliabilityMode,
    pub window: usize,
    pub path_cap: usize,
    pub disjoint_alternates: bool,
    /// Report port changes immediately instead of waiting for the next feature reply.
    pub port_status_notice: bool,
    pub idle_timeout_ms: Millis,
    pub hard_timeout_ms: Millis,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            ctrl_rtt_ms: 0.5,
            switch_proc_ms: 0.05,
            ctrl_proc_ms: 0.0,
            tick_interval_ms: 100.0,
            horizon_ms: None,
            table_capacity: DEFAULT_TABLE_CAPACITY,
            strategy: Strategy::Raf,
            count_mode: CountMode::Total,
            path_rule: PathReliabilityRule::Product,
            reliability_mode: ReliabilityMode::Static,
            window: DEFAULT_WINDOW,
            path_cap: DEFAULT_PATH_CAP,
            disjoint_alternates: false,
            port_status_notice: false,
            idle_timeout_ms: 0.0,
            hard_timeout_ms: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let delays = [
            ("ctrl_rtt_ms", self.ctrl_rtt_ms),
            ("switch_proc_ms", self.switch_proc_ms),
            ("ctrl_proc_ms", self.ctrl_proc_ms),
            ("idle_timeout_ms", self.idle_timeout_ms),
            ("hard_timeout_ms", self.hard_timeout_ms),
        ];
        for (name, v) in delays {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ScenarioError::Invalid(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        if !(self.tick_interval_ms.is_finite() && self.tick_interval_ms > 0.0) {
            return Err(ScenarioError::Invalid(
                "tick_interval_ms must be > 0".into(),
            ));
        }
        if let Some(h) = self.horizon_ms {
            if !(h.is_finite() && h >= 0.0) {
                return Err(ScenarioError::Invalid("horizon_ms must be >= 0".into()));
            }
        }
        for (name, v) in [
            ("table_capacity", self.table_capacity),
            ("window", self.window),
            ("path_cap", self.path_cap),
        ] {
            if v == 0 {
                return Err(ScenarioError::Invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn controller_config(&self) -> ControllerConfig {
        ControllerConfig {
            selection: SelectionConfig {
                strategy: self.strategy,
                rule: self.path_rule,
                tiers: TierTable::default().with_count_mode(self.count_mode),
                path_cap: self.path_cap,
                disjoint_alternates: self.disjoint_alternates,
            },
            reliability_mode: self.reliability_mode,
            window: self.window,
            idle_timeout: self.idle_timeout_ms,
            hard_timeout: self.hard_timeout_ms,
        }
    }
}

/// Traffic between two hosts named in the topology.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowDecl {
    pub src: String,
    pub dst: String,
    pub packets: u64,
    #[serde(default = "default_payload")]
    pub payload: u32,
    #[serde(default)]
    pub gap_ms: Millis,
    #[serde(default)]
    pub start_ms: Millis,
    #[serde(default = "default_proto")]
    pub nw_proto: u8,
}

fn default_payload() -> u32 {
    62
}

fn default_proto() -> u8 {
    IP_PROTO_UDP
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureDecl {
    pub link: String,
    pub at_ms: Millis,
    #[serde(default)]
    pub repair_ms: Option<Millis>,
    /// Uniform random delay in `[0, jitter_ms)` added to both times.
    #[serde(default)]
    pub jitter_ms: Millis,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct AclDecl {
    #[serde(default)]
    src: Option<String>,
    #[serde(default)]
    dst: Option<String>,
    #[serde(default)]
    nw_proto: Option<u8>,
    verdict: AclVerdict,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default)]
    config: SimConfig,
    #[serde(default)]
    acl: Vec<AclDecl>,
    #[serde(default)]
    flows: Vec<FlowDecl>,
    #[serde(default)]
    failures: Vec<FailureDecl>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub config: SimConfig,
    pub acl: Vec<AclEntry>,
    pub flows: Vec<FlowDecl>,
    pub failures: Vec<FailureDecl>,
}

fn address(field: &str, value: Option<String>) -> Result<Option<Ipv4Addr>, ScenarioError> {
    match value.as_deref() {
        None | Some("any") | Some("*") => Ok(None),
        Some(s) => s
            .parse()
            .map(Some)
            .map_err(|_| ScenarioError::Invalid(format!("acl {field}: bad address `{s}`"))),
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|span| line_column(text, span.start))
            .unwrap_or((0, 0));
        ScenarioError::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    file.config.validate()?;
    for (i, f) in file.flows.iter().enumerate() {
        if f.packets == 0 {
            return Err(ScenarioError::Invalid(format!(
                "flow {i}: packets must be >= 1"
            )));
        }
        if !(f.gap_ms.is_finite() && f.gap_ms >= 0.0 && f.start_ms.is_finite() && f.start_ms >= 0.0)
        {
            return Err(ScenarioError::Invalid(format!(
                "flow {i}: gap_ms and start_ms must be >= 0"
            )));
        }
    }
    for f in &file.failures {
        let times_ok = f.at_ms.is_finite()
            && f.at_ms >= 0.0
            && f.jitter_ms.is_finite()
            && f.jitter_ms >= 0.0
            && f.repair_ms.is_none_or(|r| r.is_finite() && r >= f.at_ms);
        if !times_ok {
            return Err(ScenarioError::Invalid(format!(
                "failure of `{}`: times must be >= 0 and repair after failure",
                f.link
            )));
        }
    }
    let acl = file
        .acl
        .into_iter()
        .map(|a| {
            Ok(AclEntry {
                src: address("src", a.src)?,
                dst: address("dst", a.dst)?,
                nw_proto: a.nw_proto,
                verdict: a.verdict,
            })
        })
        .collect::<Result<_, ScenarioError>>()?;
    Ok(Scenario {
        name: file.name,
        config: file.config,
        acl,
        flows: file.flows,
        failures: file.failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scenario_uses_defaults() {
        let s = parse_scenario("name = \"x\"").unwrap();
        assert_eq!(s.config, SimConfig::default());
        assert!(s.flows.is_empty() && s.acl.is_empty() && s.failures.is_empty());
    }

    #[test]
    fn full_scenario() {
        let text = r#"
name = "full"
[config]
seed = 9
strategy = "all-paths"
count_mode = "alternates"
path_rule = "min"
reliability_mode = "estimated"
port_status_notice = true
[[acl]]
src = "10.0.0.1"
dst = "any"
nw_proto = 6
verdict = "deny"
[[acl]]
verdict = "allow"
[[flows]]
src = "h1"
dst = "h2"
packets = 3
gap_ms = 10
[[failures]]
link = "l1"
at_ms = 5
repair_ms = 9
"#;
        let s = parse_scenario(text).unwrap();
        assert_eq!(s.config.seed, 9);
        assert_eq!(s.config.strategy, Strategy::AllPaths);
        assert_eq!(s.config.count_mode, CountMode::Alternates);
        assert_eq!(s.acl[0].src, Some(Ipv4Addr::new(10, 0, 0, 1)));
        assert_eq!(s.acl[0].dst, None);
        assert_eq!(s.acl[0].nw_proto, Some(6));
        assert_eq!(s.acl[1].src, None);
        assert_eq!(s.flows[0].payload, 62);
        assert_eq!(s.flows[0].nw_proto, IP_PROTO_UDP);
        assert_eq!(s.flows[0].gap_ms, 10.0);
        assert_eq!(s.failures[0].repair_ms, Some(9.0));
        let cc = s.config.controller_config();
        assert_eq!(cc.selection.tiers.count_mode(), CountMode::Alternates);
    }

    #[test]
    fn rejects_unknown_keys_with_position() {
        let err = parse_scenario("name = \"x\"\n[config]\nsede = 1\n").unwrap_err();
        match err {
            ScenarioError::Syntax { line, .. } => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(parse_scenario("name = \"x\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            "name = \"x\"\n[config]\nctrl_rtt_ms = -1.0\n",
            "name = \"x\"\n[config]\ntick_interval_ms = 0.0\n",
            "name = \"x\"\n[config]\ntable_capacity = 0\n",
            "name = \"x\"\n[config]\nstrategy = \"fastest\"\n",
            "name = \"x\"\n[[flows]]\nsrc = \"a\"\ndst = \"b\"\npackets = 0\n",
            "name = \"x\"\n[[flows]]\nsrc = \"a\"\ndst = \"b\"\npackets = 1\ngap_ms = -1\n",
            "name = \"x\"\n[[failures]]\nlink = \"l\"\nat_ms = 5\nrepair_ms = 1\n",
            "name = \"x\"\n[[acl]]\nsrc = \"10.0.0\"\nverdict = \"deny\"\n",
        ];
        for text in bad {
            assert!(parse_scenario(text).is_err(), "accepted: {text}");
        }
    }
}
