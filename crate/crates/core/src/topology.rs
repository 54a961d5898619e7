//! Static network description: switches, hosts and bidirectional links annotated with a
//! reliability weight and a propagation delay.
//!
//! Topologies are read from a small TOML document with three sections:
//!
//! ```toml
//! switches = ["s1", "s2"]
//!
//! [[hosts]]
//! id = "h1"
//! address = "10.0.0.1"
//! attach = "s1:1"
//! delay_ms = 0.0          # optional, access-link delay
//!
//! [[links]]
//! id = "l12"
//! a = "s1:2"
//! b = "s2:1"
//! reliability = 0.9
//! delay_ms = 1.0
//! status = "down"         # optional, defaults to "up"
//! ```
//!
//! Unknown keys are rejected. Port numbers are explicit and start at 1; port 0 is the
//! out-of-band controller channel and never appears in the file.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a switch in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SwitchId(pub u32);

/// Index of a host in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HostId(pub u32);

/// Index of a link in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub u32);

/// Switch-local port number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortId(pub u16);

impl PortId {
    /// Reserved for the controller channel.
    pub const CONTROLLER: PortId = PortId(0);
}

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LinkStatus {
    #[default]
    Up,
    Down,
}

impl LinkStatus {
    pub fn is_up(&self) -> bool {
        *self == LinkStatus::Up
    }
}

/// A `(switch, port)` attachment point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Endpoint {
    pub switch: SwitchId,
    pub port: PortId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: LinkId,
    pub name: String,
    pub end_a: Endpoint,
    pub end_b: Endpoint,
    /// Probability that the link is usable, in `[0, 1]`.
    pub reliability: f64,
    /// One-way propagation delay in milliseconds.
    pub delay_ms: f64,
    pub status: LinkStatus,
}

impl Link {
    /// The endpoint opposite to `switch`, if the link touches it.
    pub fn peer_of(&self, switch: SwitchId) -> Option<Endpoint> {
        if self.end_a.switch == switch {
            Some(self.end_b)
        } else if self.end_b.switch == switch {
            Some(self.end_a)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Host {
    pub id: HostId,
    pub name: String,
    pub address: Ipv4Addr,
    pub attach: Endpoint,
    /// Access-link delay in milliseconds.
    pub delay_ms: f64,
}

/// One incident link as seen from a switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub link: LinkId,
    /// Egress port on the local switch.
    pub port: PortId,
    pub peer: SwitchId,
}

/// What sits behind a switch port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortTarget {
    Link { link: LinkId, peer: Endpoint },
    Host(HostId),
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("duplicate host address {0}")]
    DuplicateAddress(Ipv4Addr),
    #[error("invalid address `{0}`")]
    BadAddress(String),
    #[error("link `{link}`: reliability {value} outside [0,1]")]
    ReliabilityOutOfRange { link: String, value: f64 },
    #[error("`{id}`: negative delay {value}")]
    NegativeDelay { id: String, value: f64 },
    #[error("`{id}` references undeclared switch `{switch}`")]
    DanglingEndpoint { id: String, switch: String },
    #[error("port collision on {switch}:{port}")]
    PortCollision { switch: String, port: u16 },
    #[error("`{id}`: malformed endpoint `{text}`, expected `switch:port`")]
    BadEndpoint { id: String, text: String },
    #[error("`{id}`: port 0 is reserved for the controller channel")]
    ReservedPort { id: String },
    #[error("link `{0}` is a self-loop")]
    SelfLoop(String),
    #[error("unknown switch `{0}`")]
    UnknownSwitch(String),
    #[error("unknown host `{0}`")]
    UnknownHost(String),
    #[error("unknown link `{0}`")]
    UnknownLink(String),
    #[error("unknown address {0}")]
    UnknownAddress(Ipv4Addr),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    switches: Vec<String>,
    #[serde(default)]
    hosts: Vec<HostEntry>,
    #[serde(default)]
    links: Vec<LinkEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HostEntry {
    id: String,
    address: String,
    attach: String,
    #[serde(default, skip_serializing_if = "is_zero")]
    delay_ms: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkEntry {
    id: String,
    a: String,
    b: String,
    reliability: f64,
    delay_ms: f64,
    #[serde(default, skip_serializing_if = "LinkStatus::is_up")]
    status: LinkStatus,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

/// Immutable network description. The only mutation offered is the per-link status flag, used
/// by the controller to keep its own view in sync with reported failures.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    switch_names: Vec<String>,
    hosts: Vec<Host>,
    links: Vec<Link>,
    adjacency: Vec<Vec<Neighbor>>,
    ports: BTreeMap<Endpoint, PortTarget>,
    switch_index: HashMap<String, SwitchId>,
    host_by_addr: BTreeMap<Ipv4Addr, HostId>,
}

/// Parse and validate a topology document.
pub fn parse_topology(text: &str) -> Result<Topology, TopologyError> {
    let file: TopologyFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e
            .span()
            .map(|span| line_column(text, span.start))
            .unwrap_or((0, 0));
        TopologyError::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    Topology::from_file(file)
}

/// Render a topology back into the document format accepted by [`parse_topology`].
pub fn render_topology(topo: &Topology) -> String {
    let endpoint = |e: Endpoint| format!("{}:{}", topo.switch_name(e.switch), e.port);
    let file = TopologyFile {
        switches: topo.switch_names.clone(),
        hosts: topo
            .hosts
            .iter()
            .map(|h| HostEntry {
                id: h.name.clone(),
                address: h.address.to_string(),
                attach: endpoint(h.attach),
                delay_ms: h.delay_ms,
            })
            .collect(),
        links: topo
            .links
            .iter()
            .map(|l| LinkEntry {
                id: l.name.clone(),
                a: endpoint(l.end_a),
                b: endpoint(l.end_b),
                reliability: l.reliability,
                delay_ms: l.delay_ms,
                status: l.status,
            })
            .collect(),
    };
    toml::to_string(&file).expect("topology document always serializes")
}

pub(crate) fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before
        .rfind('\n')
        .map_or(before.len(), |i| before.len() - i - 1)
        + 1;
    (line, column)
}

impl Topology {
    fn from_file(file: TopologyFile) -> Result<Self, TopologyError> {
        let mut switch_index = HashMap::new();
        for (i, name) in file.switches.iter().enumerate() {
            if switch_index
                .insert(name.clone(), SwitchId(i as u32))
                .is_some()
            {
                return Err(TopologyError::DuplicateId {
                    kind: "switch",
                    id: name.clone(),
                });
            }
        }

        let resolve = |id: &str, text: &str| -> Result<Endpoint, TopologyError> {
            let (sw, port) = text
                .rsplit_once(':')
                .ok_or_else(|| TopologyError::BadEndpoint {
                    id: id.to_string(),
                    text: text.to_string(),
                })?;
            let port: u16 = port
                .trim()
                .parse()
                .map_err(|_| TopologyError::BadEndpoint {
                    id: id.to_string(),
                    text: text.to_string(),
                })?;
            if port == 0 {
                return Err(TopologyError::ReservedPort { id: id.to_string() });
            }
            let switch =
                *switch_index
                    .get(sw.trim())
                    .ok_or_else(|| TopologyError::DanglingEndpoint {
                        id: id.to_string(),
                        switch: sw.trim().to_string(),
                    })?;
            Ok(Endpoint {
                switch,
                port: PortId(port),
            })
        };

        let mut ports: BTreeMap<Endpoint, PortTarget> = BTreeMap::new();
        let mut claim = |e: Endpoint, target: PortTarget| -> Result<(), TopologyError> {
            if ports.insert(e, target).is_some() {
                return Err(TopologyError::PortCollision {
                    switch: file.switches[e.switch.0 as usize].clone(),
                    port: e.port.0,
                });
            }
            Ok(())
        };

        let mut links = Vec::with_capacity(file.links.len());
        let mut link_names = HashMap::new();
        for (i, entry) in file.links.iter().enumerate() {
            let id = LinkId(i as u32);
            if link_names.insert(entry.id.clone(), id).is_some() {
                return Err(TopologyError::DuplicateId {
                    kind: "link",
                    id: entry.id.clone(),
                });
            }
            if !(0.0..=1.0).contains(&entry.reliability) {
                return Err(TopologyError::ReliabilityOutOfRange {
                    link: entry.id.clone(),
                    value: entry.reliability,
                });
            }
            if entry.delay_ms.is_nan() || entry.delay_ms < 0.0 {
                return Err(TopologyError::NegativeDelay {
                    id: entry.id.clone(),
                    value: entry.delay_ms,
                });
            }
            let end_a = resolve(&entry.id, &entry.a)?;
            let end_b = resolve(&entry.id, &entry.b)?;
            if end_a.switch == end_b.switch {
                return Err(TopologyError::SelfLoop(entry.id.clone()));
            }
            claim(
                end_a,
                PortTarget::Link {
                    link: id,
                    peer: end_b,
                },
            )?;
            claim(
                end_b,
                PortTarget::Link {
                    link: id,
                    peer: end_a,
                },
            )?;
            links.push(Link {
                id,
                name: entry.id.clone(),
                end_a,
                end_b,
                reliability: entry.reliability,
                delay_ms: entry.delay_ms,
                status: entry.status,
            });
        }

        let mut hosts = Vec::with_capacity(file.hosts.len());
        let mut host_names = HashMap::new();
        let mut host_by_addr = BTreeMap::new();
        for (i, entry) in file.hosts.iter().enumerate() {
            let id = HostId(i as u32);
            if host_names.insert(entry.id.clone(), id).is_some() {
                return Err(TopologyError::DuplicateId {
                    kind: "host",
                    id: entry.id.clone(),
                });
            }
            let address: Ipv4Addr = entry
                .address
                .parse()
                .map_err(|_| TopologyError::BadAddress(entry.address.clone()))?;
            if host_by_addr.insert(address, id).is_some() {
                return Err(TopologyError::DuplicateAddress(address));
            }
            if entry.delay_ms.is_nan() || entry.delay_ms < 0.0 {
                return Err(TopologyError::NegativeDelay {
                    id: entry.id.clone(),
                    value: entry.delay_ms,
                });
            }
            let attach = resolve(&entry.id, &entry.attach)?;
            claim(attach, PortTarget::Host(id))?;
            hosts.push(Host {
                id,
                name: entry.id.clone(),
                address,
                attach,
                delay_ms: entry.delay_ms,
            });
        }

        let mut adjacency = vec![Vec::new(); file.switches.len()];
        for link in &links {
            for (local, remote) in [(link.end_a, link.end_b), (link.end_b, link.end_a)] {
                adjacency[local.switch.0 as usize].push(Neighbor {
                    link: link.id,
                    port: local.port,
                    peer: remote.switch,
                });
            }
        }
        for list in &mut adjacency {
            list.sort_by_key(|n| n.port);
        }

        Ok(Topology {
            switch_names: file.switches,
            hosts,
            links,
            adjacency,
            ports,
            switch_index,
            host_by_addr,
        })
    }

    pub fn switch_count(&self) -> usize {
        self.switch_names.len()
    }

    pub fn switches(&self) -> impl Iterator<Item = SwitchId> + '_ {
        (0..self.switch_names.len() as u32).map(SwitchId)
    }

    pub fn switch_name(&self, id: SwitchId) -> &str {
        &self.switch_names[id.0 as usize]
    }

    pub fn contains_switch(&self, id: SwitchId) -> bool {
        (id.0 as usize) < self.switch_names.len()
    }

    pub fn switch_by_name(&self, name: &str) -> Result<SwitchId, TopologyError> {
        self.switch_index
            .get(name)
            .copied()
            .ok_or_else(|| TopologyError::UnknownSwitch(name.to_string()))
    }

    pub fn hosts(&self) -> &[Host] {
        &self.hosts
    }

    pub fn host(&self, id: HostId) -> &Host {
        &self.hosts[id.0 as usize]
    }

    pub fn host_by_name(&self, name: &str) -> Result<&Host, TopologyError> {
        self.hosts
            .iter()
            .find(|h| h.name == name)
            .ok_or_else(|| TopologyError::UnknownHost(name.to_string()))
    }

    /// Resolve a network address to the unique host that owns it.
    pub fn host_lookup(&self, addr: Ipv4Addr) -> Result<&Host, TopologyError> {
        self.host_by_addr
            .get(&addr)
            .map(|id| self.host(*id))
            .ok_or(TopologyError::UnknownAddress(addr))
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: LinkId) -> Result<&Link, TopologyError> {
        self.links
            .get(id.0 as usize)
            .ok_or_else(|| TopologyError::UnknownLink(format!("#{}", id.0)))
    }

    pub fn link_by_name(&self, name: &str) -> Result<&Link, TopologyError> {
        self.links
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| TopologyError::UnknownLink(name.to_string()))
    }

    /// Every link incident to `s` regardless of status, ordered by local egress port.
    pub fn neighbors(&self, s: SwitchId) -> Result<&[Neighbor], TopologyError> {
        self.adjacency
            .get(s.0 as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| TopologyError::UnknownSwitch(format!("#{}", s.0)))
    }

    pub fn port_target(&self, at: Endpoint) -> Option<PortTarget> {
        self.ports.get(&at).copied()
    }

    /// All configured ports of a switch, ascending.
    pub fn ports_of(&self, s: SwitchId) -> impl Iterator<Item = (PortId, PortTarget)> + '_ {
        let lo = Endpoint {
            switch: s,
            port: PortId(0),
        };
        let hi = Endpoint {
            switch: s,
            port: PortId(u16::MAX),
        };
        self.ports.range(lo..=hi).map(|(e, t)| (e.port, *t))
    }

    pub fn set_link_status(&mut self, id: LinkId, status: LinkStatus) -> Result<(), TopologyError> {
        let link = self
            .links
            .get_mut(id.0 as usize)
            .ok_or_else(|| TopologyError::UnknownLink(format!("#{}", id.0)))?;
        link.status = status;
        Ok(())
    }
}
