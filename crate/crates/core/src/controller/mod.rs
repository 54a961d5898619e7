//! Logically centralized control plane.
//!
//! The controller keeps its own copy of the topology whose link states follow the periodic
//! feature replies (or port-status notices when enabled). Flows are installed reactively on
//! packet-in: the ACL is checked, paths are selected by the configured strategy and one rule
//! per hop is emitted, destination switch first. A failure that leaves at least one installed
//! path alive only triggers cleanup of the dead paths' rules; losing every path triggers a fresh
//! computation.

pub mod acl;

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, trace};
use thiserror::Error;

use crate::dataplane::{Action, FlowMatch, FlowRule, Millis, MissReason, Packet, RuleSelector};
use crate::pathfinder::{select_paths, Path, PathError, PathSet, SelectionConfig};
use crate::reliability::{LinkEstimator, ReliabilityMode, DEFAULT_WINDOW};
use crate::topology::{
    Endpoint, LinkId, LinkStatus, PortId, PortTarget, SwitchId, Topology, TopologyError,
};

pub use acl::{Acl, AclEntry, AclVerdict};

/// Priority of the primary path's rules.
pub const PRIMARY_PRIORITY: u32 = 1000;
/// Priority gap between consecutive ranks.
pub const PRIORITY_STEP: u32 = 10;

/// Flows are identified by their exact-match header fields.
pub type FlowKey = FlowMatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkReport {
    pub link: LinkId,
    /// Current port state as seen by the reporting switch.
    pub status: LinkStatus,
    /// Liveness sample fed to the reliability estimator.
    pub observation: LinkStatus,
}

/// Controller/switch vocabulary. Every message names exactly one switch.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlMessage {
    Hello {
        switch: SwitchId,
    },
    FeatureRequest {
        switch: SwitchId,
    },
    FeatureReply {
        switch: SwitchId,
        links: Vec<LinkReport>,
    },
    PacketIn {
        switch: SwitchId,
        packet: Packet,
        reason: MissReason,
    },
    PacketOut {
        switch: SwitchId,
        packet: Packet,
        port: PortId,
    },
    FlowModAdd {
        switch: SwitchId,
        rule: FlowRule,
    },
    FlowModDelete {
        switch: SwitchId,
        selector: RuleSelector,
    },
    PortStatusNotice {
        switch: SwitchId,
        port: PortId,
        status: LinkStatus,
    },
}

impl ControlMessage {
    pub fn switch(&self) -> SwitchId {
        match self {
            ControlMessage::Hello { switch }
            | ControlMessage::FeatureRequest { switch }
            | ControlMessage::FeatureReply { switch, .. }
            | ControlMessage::PacketIn { switch, .. }
            | ControlMessage::PacketOut { switch, .. }
            | ControlMessage::FlowModAdd { switch, .. }
            | ControlMessage::FlowModDelete { switch, .. }
            | ControlMessage::PortStatusNotice { switch, .. } => *switch,
        }
    }

    /// Whether the message travels switch → controller.
    pub fn is_upstream(&self) -> bool {
        matches!(
            self,
            ControlMessage::FeatureReply { .. }
                | ControlMessage::PacketIn { .. }
                | ControlMessage::PortStatusNotice { .. }
        )
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Path(#[from] PathError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub selection: SelectionConfig,
    pub reliability_mode: ReliabilityMode,
    pub window: usize,
    pub idle_timeout: Millis,
    pub hard_timeout: Millis,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            selection: SelectionConfig::default(),
            reliability_mode: ReliabilityMode::Static,
            window: DEFAULT_WINDOW,
            idle_timeout: 0.0,
            hard_timeout: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ControllerCounters {
    pub path_computations: u64,
    pub candidates_ranked: u64,
    pub flow_mod_adds: u64,
    pub flow_mod_deletes: u64,
    pub packet_ins: u64,
    pub packet_outs: u64,
    pub bootstrap_msgs: u64,
    pub feature_replies: u64,
    pub port_status_msgs: u64,
    /// Packets that reached the controller and were not released.
    pub discarded: u64,
}

impl ControllerCounters {
    pub fn flow_mods(&self) -> u64 {
        self.flow_mod_adds + self.flow_mod_deletes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstalledPath {
    pub path: Path,
    pub reliability: f64,
    pub priority: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstalledFlow {
    pub cookie: u64,
    pub verdict: AclVerdict,
    /// Switch the flow's first packet-in came from; recomputations start here.
    pub ingress: SwitchId,
    pub egress: Endpoint,
    /// Live installed paths in rank order. Empty for denied flows.
    pub paths: Vec<InstalledPath>,
}

/// One path computation, kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct Computation {
    pub key: FlowKey,
    pub primary_reliability: f64,
    pub tier_count: usize,
    pub candidates: usize,
}

#[derive(Debug, Clone)]
pub struct Controller {
    view: Topology,
    config: ControllerConfig,
    estimator: LinkEstimator,
    acl: Acl,
    installed: BTreeMap<FlowKey, InstalledFlow>,
    bootstrapped: BTreeSet<SwitchId>,
    next_cookie: u64,
    counters: ControllerCounters,
    history: Vec<Computation>,
}

/// Priority of rank `rank` in a set of `n` paths: 1000, 990, ... with the base raised when the
/// set is long enough that the last rank would go negative.
pub fn path_priority(rank: usize, n: usize) -> u32 {
    let base = PRIMARY_PRIORITY.max(PRIORITY_STEP * n.saturating_sub(1) as u32);
    base - PRIORITY_STEP * rank as u32
}

impl Controller {
    pub fn new(view: Topology, config: ControllerConfig, acl: Acl) -> Self {
        let estimator = LinkEstimator::new(config.reliability_mode, config.window.max(1));
        Self {
            view,
            config,
            estimator,
            acl,
            installed: BTreeMap::new(),
            bootstrapped: BTreeSet::new(),
            next_cookie: 1,
            counters: ControllerCounters::default(),
            history: Vec::new(),
        }
    }

    pub fn view(&self) -> &Topology {
        &self.view
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn counters(&self) -> &ControllerCounters {
        &self.counters
    }

    pub fn installed(&self) -> &BTreeMap<FlowKey, InstalledFlow> {
        &self.installed
    }

    pub fn history(&self) -> &[Computation] {
        &self.history
    }

    pub fn estimator(&self) -> &LinkEstimator {
        &self.estimator
    }

    pub fn is_bootstrapped(&self) -> bool {
        self.bootstrapped.len() == self.view.switch_count()
    }

    /// Hello and FeatureRequest to every switch.
    pub fn bootstrap(&mut self) -> Vec<ControlMessage> {
        let msgs: Vec<ControlMessage> = self
            .view
            .switches()
            .flat_map(|switch| {
                [
                    ControlMessage::Hello { switch },
                    ControlMessage::FeatureRequest { switch },
                ]
            })
            .collect();
        self.counters.bootstrap_msgs += msgs.len() as u64;
        msgs
    }

    /// Entry point for every upstream message.
    pub fn handle(&mut self, msg: ControlMessage) -> Result<Vec<ControlMessage>, ControllerError> {
        match msg {
            ControlMessage::FeatureReply { switch, links } => {
                self.handle_feature_reply(switch, &links)
            }
            ControlMessage::PacketIn {
                switch,
                packet,
                reason,
            } => self.handle_packet_in(switch, packet, reason),
            ControlMessage::PortStatusNotice {
                switch,
                port,
                status,
            } => self.handle_port_status(switch, port, status),
            other => Err(ControllerError::Protocol(format!(
                "unexpected message at controller: {other:?}"
            ))),
        }
    }

    fn check_switch(&self, switch: SwitchId) -> Result<(), ControllerError> {
        if self.view.contains_switch(switch) {
            Ok(())
        } else {
            Err(ControllerError::Protocol(format!(
                "message from undeclared switch #{}",
                switch.0
            )))
        }
    }

    /// Record one observation per reported link and mirror status changes. A link reported down
    /// while up in the view is treated as a failure.
    pub fn handle_feature_reply(
        &mut self,
        switch: SwitchId,
        links: &[LinkReport],
    ) -> Result<Vec<ControlMessage>, ControllerError> {
        self.check_switch(switch)?;
        if self.bootstrapped.insert(switch) {
            self.counters.bootstrap_msgs += 1;
        } else {
            self.counters.feature_replies += 1;
        }
        for report in links {
            self.view.link(report.link)?;
        }

        let mut out = Vec::new();
        for report in links {
            self.estimator.record(report.link, report.observation);
            let current = self.view.link(report.link)?.status;
            match (current, report.status) {
                (LinkStatus::Up, LinkStatus::Down) => {
                    out.extend(self.handle_link_failure(report.link)?)
                }
                (LinkStatus::Down, LinkStatus::Up) => {
                    self.view.set_link_status(report.link, LinkStatus::Up)?
                }
                _ => {}
            }
        }
        Ok(out)
    }

    pub fn handle_port_status(
        &mut self,
        switch: SwitchId,
        port: PortId,
        status: LinkStatus,
    ) -> Result<Vec<ControlMessage>, ControllerError> {
        self.check_switch(switch)?;
        self.counters.port_status_msgs += 1;
        let Some(PortTarget::Link { link, .. }) = self.view.port_target(Endpoint { switch, port })
        else {
            return Ok(Vec::new());
        };
        match status {
            LinkStatus::Down => self.handle_link_failure(link),
            LinkStatus::Up => {
                self.view.set_link_status(link, LinkStatus::Up)?;
                Ok(Vec::new())
            }
        }
    }

    fn rules_expire(&self) -> bool {
        self.config.idle_timeout > 0.0 || self.config.hard_timeout > 0.0
    }

    pub fn handle_packet_in(
        &mut self,
        switch: SwitchId,
        packet: Packet,
        reason: MissReason,
    ) -> Result<Vec<ControlMessage>, ControllerError> {
        self.check_switch(switch)?;
        self.counters.packet_ins += 1;
        let key = FlowMatch::of(&packet);
        self.view.host_lookup(packet.src)?;
        let dst = self.view.host_lookup(packet.dst)?.attach;

        if let Some(flow) = self.installed.get(&key) {
            return Ok(self.packet_in_for_installed(switch, packet, reason, flow.clone()));
        }

        let cookie = self.next_cookie;
        self.next_cookie += 1;

        if self.acl.check(packet.src, packet.dst, packet.nw_proto) == AclVerdict::Deny {
            debug!("flow {} -> {} denied", packet.src, packet.dst);
            self.installed.insert(
                key,
                InstalledFlow {
                    cookie,
                    verdict: AclVerdict::Deny,
                    ingress: switch,
                    egress: dst,
                    paths: Vec::new(),
                },
            );
            self.counters.discarded += 1;
            self.counters.flow_mod_adds += 1;
            return Ok(vec![self.drop_rule(switch, key, cookie)]);
        }

        let mut out = Vec::new();
        match self.compute_and_install(key, cookie, switch, dst, &mut out)? {
            Some(flow) => {
                let (first, port) = flow.paths[0].path.hops(dst.port)[0];
                debug_assert_eq!(first, switch);
                self.installed.insert(key, flow);
                self.counters.packet_outs += 1;
                out.push(ControlMessage::PacketOut {
                    switch,
                    packet,
                    port,
                });
            }
            None => self.counters.discarded += 1,
        }
        Ok(out)
    }

    fn packet_in_for_installed(
        &mut self,
        switch: SwitchId,
        packet: Packet,
        reason: MissReason,
        flow: InstalledFlow,
    ) -> Vec<ControlMessage> {
        if flow.verdict == AclVerdict::Deny {
            // only reachable when the drop entry expired
            self.counters.discarded += 1;
            self.counters.flow_mod_adds += 1;
            return vec![self.drop_rule(switch, FlowMatch::of(&packet), flow.cookie)];
        }
        if reason == MissReason::AllDead {
            // the failure is learned from the next link-state report, not from the data path
            trace!(
                "discarding packet {} at {:?}: all ports dead",
                packet.seq,
                switch
            );
            self.counters.discarded += 1;
            return Vec::new();
        }
        let Some(on_path) = flow
            .paths
            .iter()
            .find(|p| p.path.switches().contains(&switch))
        else {
            self.counters.discarded += 1;
            return Vec::new();
        };
        let port = on_path
            .path
            .egress_at(switch, flow.egress.port)
            .expect("switch lies on the path");

        let mut out = Vec::new();
        if self.rules_expire() {
            // the miss may come from an expired entry: reinstall this switch's share
            for p in &flow.paths {
                if let Some(egress) = p.path.egress_at(switch, flow.egress.port) {
                    out.push(self.forward_rule(
                        switch,
                        FlowMatch::of(&packet),
                        p.priority,
                        egress,
                        flow.cookie,
                    ));
                }
            }
            self.counters.flow_mod_adds += out.len() as u64;
        }
        self.counters.packet_outs += 1;
        out.push(ControlMessage::PacketOut {
            switch,
            packet,
            port,
        });
        out
    }

    fn compute(&self, src: SwitchId, dst: SwitchId) -> Result<PathSet, PathError> {
        select_paths(&self.view, src, dst, &self.config.selection, |l| {
            self.estimator
                .link_reliability(&self.view, l)
                .expect("links come from the view")
        })
    }

    /// Run a path computation and emit the flow-mods for every selected path. Returns `None` when
    /// source and destination are disconnected in the current view.
    fn compute_and_install(
        &mut self,
        key: FlowKey,
        cookie: u64,
        ingress: SwitchId,
        egress: Endpoint,
        out: &mut Vec<ControlMessage>,
    ) -> Result<Option<InstalledFlow>, ControllerError> {
        self.counters.path_computations += 1;
        let set = match self.compute(ingress, egress.switch) {
            Ok(set) => set,
            Err(PathError::NoPath { .. }) => {
                self.history.push(Computation {
                    key,
                    primary_reliability: 0.0,
                    tier_count: 0,
                    candidates: 0,
                });
                return Ok(None);
            }
            Err(e) => return Err(e.into()),
        };
        self.counters.candidates_ranked += set.candidates as u64;
        self.history.push(Computation {
            key,
            primary_reliability: set.primary.reliability,
            tier_count: set.tier_count,
            candidates: set.candidates,
        });
        debug!(
            "{} -> {}: primary reliability {:.4}, installing {} of {} paths",
            key.nw_src, key.nw_dst, set.primary.reliability, set.tier_count, set.candidates
        );

        let n = set.tier_count;
        let mut paths = Vec::with_capacity(n);
        for (rank, ranked) in set.paths().enumerate() {
            let priority = path_priority(rank, n);
            for (switch, port) in ranked.path.hops(egress.port).into_iter().rev() {
                out.push(self.forward_rule(switch, key, priority, port, cookie));
                self.counters.flow_mod_adds += 1;
            }
            paths.push(InstalledPath {
                path: ranked.path.clone(),
                reliability: ranked.reliability,
                priority,
            });
        }
        Ok(Some(InstalledFlow {
            cookie,
            verdict: AclVerdict::Allow,
            ingress,
            egress,
            paths,
        }))
    }

    fn forward_rule(
        &self,
        switch: SwitchId,
        key: FlowKey,
        priority: u32,
        port: PortId,
        cookie: u64,
    ) -> ControlMessage {
        ControlMessage::FlowModAdd {
            switch,
            rule: FlowRule {
                matches: key,
                priority,
                action: Action::Forward(port),
                idle_timeout: self.config.idle_timeout,
                hard_timeout: self.config.hard_timeout,
                cookie,
            },
        }
    }

    fn drop_rule(&self, switch: SwitchId, key: FlowKey, cookie: u64) -> ControlMessage {
        ControlMessage::FlowModAdd {
            switch,
            rule: FlowRule {
                matches: key,
                priority: PRIMARY_PRIORITY,
                action: Action::Drop,
                idle_timeout: self.config.idle_timeout,
                hard_timeout: self.config.hard_timeout,
                cookie,
            },
        }
    }

    /// Mark `link` down, clean up the rules of every installed path that used it and recompute
    /// flows that lost all of their paths.
    pub fn handle_link_failure(
        &mut self,
        link: LinkId,
    ) -> Result<Vec<ControlMessage>, ControllerError> {
        if !self.view.link(link)?.status.is_up() {
            return Ok(Vec::new());
        }
        self.view.set_link_status(link, LinkStatus::Down)?;

        let affected: Vec<FlowKey> = self
            .installed
            .iter()
            .filter(|(_, f)| f.paths.iter().any(|p| p.path.uses_link(link)))
            .map(|(k, _)| *k)
            .collect();

        let mut out = Vec::new();
        for key in affected {
            let mut flow = self
                .installed
                .remove(&key)
                .expect("affected key is installed");
            let (dead, alive): (Vec<_>, Vec<_>) =
                flow.paths.into_iter().partition(|p| p.path.uses_link(link));
            for p in &dead {
                for switch in p.path.switches() {
                    out.push(ControlMessage::FlowModDelete {
                        switch: *switch,
                        selector: RuleSelector::Exact {
                            cookie: flow.cookie,
                            priority: p.priority,
                        },
                    });
                    self.counters.flow_mod_deletes += 1;
                }
            }
            flow.paths = alive;
            if !flow.paths.is_empty() {
                debug!(
                    "{} -> {}: {} path(s) survive, no recomputation",
                    key.nw_src,
                    key.nw_dst,
                    flow.paths.len()
                );
                self.installed.insert(key, flow);
                continue;
            }
            if let Some(fresh) =
                self.compute_and_install(key, flow.cookie, flow.ingress, flow.egress, &mut out)?
            {
                self.installed.insert(key, fresh);
            }
        }
        Ok(out)
    }
}
