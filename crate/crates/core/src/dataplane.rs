//! Per-switch forwarding state.
//!
//! Matching is exact on the four header fields. Among matching entries the table is scanned by
//! descending priority and the first usable action wins; a `Forward` whose egress port is down
//! is skipped, so lower-priority backups take over locally the moment a port dies.

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::topology::{LinkStatus, PortId, SwitchId};

pub const DEFAULT_TABLE_CAPACITY: usize = 1500;
pub const ETH_TYPE_IPV4: u16 = 0x0800;
pub const IP_PROTO_UDP: u8 = 17;

/// Simulated time in milliseconds.
pub type Millis = f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowMatch {
    pub dl_type: u16,
    pub nw_proto: u8,
    pub nw_src: Ipv4Addr,
    pub nw_dst: Ipv4Addr,
}

impl FlowMatch {
    pub fn of(pkt: &Packet) -> Self {
        Self {
            dl_type: pkt.dl_type,
            nw_proto: pkt.nw_proto,
            nw_src: pkt.src,
            nw_dst: pkt.dst,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Forward(PortId),
    Drop,
    ToController,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRule {
    pub matches: FlowMatch,
    pub priority: u32,
    pub action: Action,
    /// Milliseconds without a hit before removal; 0 disables.
    pub idle_timeout: Millis,
    /// Milliseconds after installation before removal; 0 disables.
    pub hard_timeout: Millis,
    pub cookie: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub dl_type: u16,
    pub nw_proto: u8,
    pub size: u32,
    pub seq: u64,
    pub created_at: Millis,
    /// Remaining switch traversals before the packet is dropped.
    pub ttl: u8,
}

/// Initial hop budget of every injected packet.
pub const DEFAULT_TTL: u8 = 64;

/// Why a packet is punted to the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissReason {
    /// No entry matches.
    Miss,
    /// Entries match but every forward port is down.
    AllDead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Forward(PortId),
    Drop,
    ToController(MissReason),
}

/// Which entries a removal targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleSelector {
    Cookie(u64),
    Match(FlowMatch),
    EgressPort(PortId),
    /// One installed path of a flow set: the entry with this cookie and priority.
    Exact {
        cookie: u64,
        priority: u32,
    },
}

impl RuleSelector {
    fn selects(&self, m: &FlowMatch, e: &FlowEntry) -> bool {
        match *self {
            RuleSelector::Cookie(c) => e.rule.cookie == c,
            RuleSelector::Match(sel) => *m == sel,
            RuleSelector::EgressPort(p) => e.rule.action == Action::Forward(p),
            RuleSelector::Exact { cookie, priority } => {
                e.rule.cookie == cookie && e.rule.priority == priority
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DataplaneError {
    #[error("flow table full ({capacity} entries)")]
    TableFull { capacity: usize },
    #[error("switch has no port {0}")]
    UnknownPort(PortId),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowEntry {
    pub rule: FlowRule,
    pub installed_at: Millis,
    pub last_hit: Millis,
}

/// Bounded set of flow entries keyed by `(match, priority)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTable {
    entries: BTreeMap<(FlowMatch, Reverse<u32>), FlowEntry>,
    capacity: usize,
}

impl FlowTable {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "flow table capacity must be positive");
        Self {
            entries: BTreeMap::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &FlowEntry> {
        self.entries.values()
    }

    /// Entries for one match, highest priority first.
    fn matching(
        &self,
        m: FlowMatch,
    ) -> impl Iterator<Item = (&(FlowMatch, Reverse<u32>), &FlowEntry)> {
        self.entries.range((m, Reverse(u32::MAX))..=(m, Reverse(0)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchState {
    pub id: SwitchId,
    ports: BTreeMap<PortId, LinkStatus>,
    table: FlowTable,
}

/// Emitted whenever a port changes state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortStatusChange {
    pub switch: SwitchId,
    pub port: PortId,
    pub status: LinkStatus,
}

impl SwitchState {
    pub fn new(id: SwitchId, ports: impl IntoIterator<Item = PortId>, capacity: usize) -> Self {
        Self {
            id,
            ports: ports.into_iter().map(|p| (p, LinkStatus::Up)).collect(),
            table: FlowTable::new(capacity),
        }
    }

    pub fn table(&self) -> &FlowTable {
        &self.table
    }

    pub fn port_status(&self, port: PortId) -> Option<LinkStatus> {
        self.ports.get(&port).copied()
    }

    pub fn ports(&self) -> impl Iterator<Item = (PortId, LinkStatus)> + '_ {
        self.ports.iter().map(|(p, s)| (*p, *s))
    }

    /// Add a rule, replacing any entry with the same match and priority.
    pub fn install_rule(&mut self, rule: FlowRule, now: Millis) -> Result<(), DataplaneError> {
        if let Action::Forward(port) = rule.action {
            if !self.ports.contains_key(&port) {
                return Err(DataplaneError::UnknownPort(port));
            }
        }
        let key = (rule.matches, Reverse(rule.priority));
        if !self.table.entries.contains_key(&key) && self.table.len() == self.table.capacity {
            return Err(DataplaneError::TableFull {
                capacity: self.table.capacity,
            });
        }
        self.table.entries.insert(
            key,
            FlowEntry {
                rule,
                installed_at: now,
                last_hit: now,
            },
        );
        Ok(())
    }

    fn select(&self, pkt: &Packet) -> (Verdict, Option<(FlowMatch, Reverse<u32>)>) {
        let mut matched = false;
        for (key, entry) in self.table.matching(FlowMatch::of(pkt)) {
            matched = true;
            match entry.rule.action {
                Action::Forward(port) if self.port_status(port) != Some(LinkStatus::Up) => continue,
                Action::Forward(port) => return (Verdict::Forward(port), Some(*key)),
                Action::Drop => return (Verdict::Drop, Some(*key)),
                Action::ToController => {
                    return (Verdict::ToController(MissReason::Miss), Some(*key))
                }
            }
        }
        let reason = if matched {
            MissReason::AllDead
        } else {
            MissReason::Miss
        };
        (Verdict::ToController(reason), None)
    }

    /// Decide what to do with `pkt` without touching idle-timeout bookkeeping.
    pub fn lookup(&self, pkt: &Packet) -> Verdict {
        self.select(pkt).0
    }

    /// Like [`lookup`](Self::lookup) but records the hit time on the selected entry.
    pub fn process(&mut self, pkt: &Packet, now: Millis) -> Verdict {
        let (verdict, key) = self.select(pkt);
        if let Some(entry) = key.and_then(|k| self.table.entries.get_mut(&k)) {
            entry.last_hit = now;
        }
        verdict
    }

    pub fn remove_rules(&mut self, by: RuleSelector) -> usize {
        let before = self.table.len();
        self.table
            .entries
            .retain(|(m, _), entry| !by.selects(m, entry));
        before - self.table.len()
    }

    pub fn set_port_status(
        &mut self,
        port: PortId,
        status: LinkStatus,
    ) -> Result<PortStatusChange, DataplaneError> {
        let slot = self
            .ports
            .get_mut(&port)
            .ok_or(DataplaneError::UnknownPort(port))?;
        *slot = status;
        Ok(PortStatusChange {
            switch: self.id,
            port,
            status,
        })
    }

    /// Drop entries whose hard or idle timeout has elapsed at `now`.
    pub fn sweep_timeouts(&mut self, now: Millis) -> usize {
        let before = self.table.len();
        self.table.entries.retain(|_, e| {
            let hard = e.rule.hard_timeout > 0.0 && now - e.installed_at >= e.rule.hard_timeout;
            let idle = e.rule.idle_timeout > 0.0 && now - e.last_hit >= e.rule.idle_timeout;
            !(hard || idle)
        });
        before - self.table.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt() -> Packet {
        Packet {
            src: Ipv4Addr::new(10, 0, 0, 1),
            dst: Ipv4Addr::new(10, 0, 0, 2),
            dl_type: ETH_TYPE_IPV4,
            nw_proto: IP_PROTO_UDP,
            size: 62,
            seq: 0,
            created_at: 0.0,
            ttl: DEFAULT_TTL,
        }
    }

    fn rule(priority: u32, action: Action, cookie: u64) -> FlowRule {
        FlowRule {
            matches: FlowMatch::of(&pkt()),
            priority,
            action,
            idle_timeout: 0.0,
            hard_timeout: 0.0,
            cookie,
        }
    }

    fn switch(capacity: usize) -> SwitchState {
        SwitchState::new(SwitchId(0), (1..=4).map(PortId), capacity)
    }

    #[test]
    fn install_and_reinstall_is_idempotent() {
        let mut sw = switch(10);
        sw.install_rule(rule(1000, Action::Forward(PortId(1)), 1), 0.0)
            .unwrap();
        assert_eq!(sw.table().len(), 1);
        sw.install_rule(rule(1000, Action::Forward(PortId(1)), 1), 5.0)
            .unwrap();
        assert_eq!(sw.table().len(), 1);
    }

    #[test]
    fn full_table_rejects_new_rules_only() {
        let mut sw = switch(2);
        sw.install_rule(rule(1000, Action::Forward(PortId(1)), 1), 0.0)
            .unwrap();
        sw.install_rule(rule(990, Action::Forward(PortId(2)), 1), 0.0)
            .unwrap();
        assert_eq!(
            sw.install_rule(rule(980, Action::Forward(PortId(3)), 1), 0.0),
            Err(DataplaneError::TableFull { capacity: 2 })
        );
        // replacing an existing entry is still allowed
        sw.install_rule(rule(990, Action::Forward(PortId(4)), 1), 0.0)
            .unwrap();
        assert_eq!(sw.table().len(), 2);
    }

    #[test]
    fn forward_to_unknown_port_is_rejected() {
        let mut sw = switch(2);
        assert_eq!(
            sw.install_rule(rule(1, Action::Forward(PortId(9)), 1), 0.0),
            Err(DataplaneError::UnknownPort(PortId(9)))
        );
    }

    #[test]
    fn empty_table_misses() {
        assert_eq!(
            switch(4).lookup(&pkt()),
            Verdict::ToController(MissReason::Miss)
        );
    }

    #[test]
    fn dead_primary_falls_back_to_next_priority() {
        let mut sw = switch(4);
        sw.install_rule(rule(1000, Action::Forward(PortId(2)), 1), 0.0)
            .unwrap();
        sw.install_rule(rule(990, Action::Forward(PortId(3)), 1), 0.0)
            .unwrap();
        assert_eq!(sw.lookup(&pkt()), Verdict::Forward(PortId(2)));
        sw.set_port_status(PortId(2), LinkStatus::Down).unwrap();
        // scan: 1000 -> port 2 down, skip; 990 -> port 3 up, take
        assert_eq!(sw.lookup(&pkt()), Verdict::Forward(PortId(3)));
        sw.set_port_status(PortId(3), LinkStatus::Down).unwrap();
        assert_eq!(
            sw.lookup(&pkt()),
            Verdict::ToController(MissReason::AllDead)
        );
        sw.set_port_status(PortId(2), LinkStatus::Up).unwrap();
        assert_eq!(sw.lookup(&pkt()), Verdict::Forward(PortId(2)));
    }

    #[test]
    fn drop_entry_drops() {
        let mut sw = switch(4);
        sw.install_rule(rule(1000, Action::Drop, 1), 0.0).unwrap();
        assert_eq!(sw.lookup(&pkt()), Verdict::Drop);
    }

    #[test]
    fn port_status_is_idempotent_and_checked() {
        let mut sw = switch(4);
        sw.set_port_status(PortId(1), LinkStatus::Down).unwrap();
        let before = sw.clone();
        sw.set_port_status(PortId(1), LinkStatus::Down).unwrap();
        assert_eq!(sw, before);
        assert_eq!(
            sw.set_port_status(PortId(42), LinkStatus::Down),
            Err(DataplaneError::UnknownPort(PortId(42)))
        );
    }

    #[test]
    fn remove_by_selectors() {
        let mut sw = switch(10);
        for (i, cookie) in [7, 7, 7, 8, 9].iter().enumerate() {
            let mut r = rule(
                1000 - 10 * i as u32,
                Action::Forward(PortId(1 + (i % 2) as u16)),
                *cookie,
            );
            if *cookie == 9 {
                r.matches.nw_dst = Ipv4Addr::new(10, 0, 0, 9);
            }
            sw.install_rule(r, 0.0).unwrap();
        }
        assert_eq!(sw.remove_rules(RuleSelector::EgressPort(PortId(4))), 0);
        assert_eq!(sw.remove_rules(RuleSelector::Cookie(7)), 3);
        assert_eq!(sw.table().len(), 2);

        // by match: every priority of the packet's match goes, the other match stays
        let m = FlowMatch::of(&pkt());
        let before = sw.table().entries().filter(|e| e.rule.matches == m).count();
        assert_eq!(before, 1);
        assert_eq!(sw.remove_rules(RuleSelector::Match(m)), before);
        assert_eq!(sw.table().len(), 1);
        assert!(sw.table().entries().all(|e| e.rule.matches != m));

        assert_eq!(
            sw.remove_rules(RuleSelector::Exact {
                cookie: 9,
                priority: 960
            }),
            1
        );
        assert!(sw.table().is_empty());
    }

    #[test]
    fn timeouts() {
        let mut sw = switch(10);
        sw.install_rule(rule(1000, Action::Forward(PortId(1)), 1), 0.0)
            .unwrap();
        assert_eq!(sw.sweep_timeouts(1e9), 0);

        let mut idle = rule(990, Action::Forward(PortId(1)), 1);
        idle.idle_timeout = 100.0;
        sw.install_rule(idle, 0.0).unwrap();
        // never hit; last hit is the install time, 150 ms ago
        assert_eq!(sw.sweep_timeouts(150.0), 1);

        let mut hard = rule(980, Action::Forward(PortId(1)), 1);
        hard.hard_timeout = 500.0;
        sw.install_rule(hard, 100.0).unwrap();
        assert_eq!(sw.sweep_timeouts(500.0), 0);
        assert_eq!(sw.sweep_timeouts(600.0), 1);
        assert_eq!(sw.table().len(), 1);
    }

    #[test]
    fn process_refreshes_idle_timer() {
        let mut sw = switch(10);
        let mut r = rule(1000, Action::Forward(PortId(1)), 1);
        r.idle_timeout = 100.0;
        sw.install_rule(r, 0.0).unwrap();
        assert_eq!(sw.process(&pkt(), 80.0), Verdict::Forward(PortId(1)));
        assert_eq!(sw.sweep_timeouts(150.0), 0);
        assert_eq!(sw.sweep_timeouts(180.0), 1);
    }
}
