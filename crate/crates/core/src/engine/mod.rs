//! Discrete-event kernel.
//!
//! Delay model: a packet leaving a host reaches its access switch after the host's access delay.
//! Each switch lookup costs `switch_proc_ms`, then the packet crosses the egress link. A table
//! miss sends a packet-in that reaches the controller `ctrl_rtt_ms` later; controller output
//! leaves after `ctrl_proc_ms` and takes another `ctrl_rtt_ms`. A packet released by packet-out
//! goes straight onto the named port, so a miss costs exactly `2 * ctrl_rtt_ms + ctrl_proc_ms`.

pub mod scenario;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use log::{debug, info};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::controller::{Acl, ControlMessage, Controller, ControllerError, LinkReport};
use crate::dataplane::{
    DataplaneError, FlowRule, Millis, Packet, SwitchState, Verdict, DEFAULT_TTL, ETH_TYPE_IPV4,
};
use crate::metrics::{Delivery, MetricsReport, SwitchRules};
use crate::pathfinder::Strategy;
use crate::reliability::ReliabilityMode;
use crate::topology::{
    Endpoint, HostId, LinkId, LinkStatus, PortId, PortTarget, SwitchId, Topology, TopologyError,
};

pub use scenario::{parse_scenario, FailureDecl, FlowDecl, Scenario, ScenarioError, SimConfig};

/// Extra simulated time after the last scheduled event before the run stops.
pub const DEFAULT_HORIZON_SLACK_MS: Millis = 10_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("cannot schedule at {at} ms: clock is already at {now} ms")]
    TimeTravel { at: Millis, now: Millis },
    #[error("invalid flow: {0}")]
    BadFlow(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Dataplane(#[from] DataplaneError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSpec {
    pub src: HostId,
    pub dst: HostId,
    pub n_packets: u64,
    /// Bytes per packet.
    pub payload: u32,
    pub gap: Millis,
    pub start: Millis,
    pub nw_proto: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// A host emits a packet onto its access link.
    HostSend {
        host: HostId,
        packet: Packet,
    },
    PacketAtSwitch {
        switch: SwitchId,
        packet: Packet,
    },
    PacketAtHost {
        host: HostId,
        packet: Packet,
    },
    ControlDelivery(ControlMessage),
    LinkFail(LinkId),
    LinkRepair(LinkId),
    FeatureReplyTick,
}

impl EventKind {
    fn carries_packet(&self) -> bool {
        match self {
            EventKind::PacketAtSwitch { .. } | EventKind::PacketAtHost { .. } => true,
            EventKind::ControlDelivery(m) => matches!(
                m,
                ControlMessage::PacketIn { .. } | ControlMessage::PacketOut { .. }
            ),
            _ => false,
        }
    }

    /// Events that represent outstanding work rather than background control traffic.
    fn is_pending_work(&self) -> bool {
        self.carries_packet()
            || matches!(
                self,
                EventKind::HostSend { .. } | EventKind::LinkFail(_) | EventKind::LinkRepair(_)
            )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: Millis,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    /// Reversed so the max-heap pops the earliest `(time, seq)` first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub struct Simulation {
    scenario: String,
    /// Ground truth; the controller holds its own view.
    topo: Topology,
    config: SimConfig,
    clock: Millis,
    next_seq: u64,
    last_scheduled: Millis,
    queue: BinaryHeap<Event>,
    switches: Vec<SwitchState>,
    bootstrap_replied: Vec<bool>,
    controller: Controller,
    rng: ChaCha8Rng,
    metrics: MetricsReport,
    peaks: Vec<usize>,
    started: bool,
    horizon: Millis,
    trace: Option<Vec<(Millis, u64)>>,
}

impl Simulation {
    pub fn new(topo: &Topology, config: SimConfig, acl: Acl) -> Result<Self, EngineError> {
        config.validate()?;
        let switches: Vec<SwitchState> = topo
            .switches()
            .map(|s| SwitchState::new(s, topo.ports_of(s).map(|(p, _)| p), config.table_capacity))
            .collect();
        let controller = Controller::new(topo.clone(), config.controller_config(), acl);
        let n = switches.len();
        Ok(Self {
            scenario: String::new(),
            topo: topo.clone(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            metrics: MetricsReport {
                strategy: config.strategy.name().to_string(),
                ..MetricsReport::default()
            },
            config,
            clock: 0.0,
            next_seq: 0,
            last_scheduled: 0.0,
            queue: BinaryHeap::new(),
            switches,
            bootstrap_replied: vec![false; n],
            controller,
            peaks: vec![0; n],
            started: false,
            horizon: 0.0,
            trace: None,
        })
    }

    /// Build a simulation from a parsed scenario, overriding its strategy when given.
    pub fn from_scenario(
        topo: &Topology,
        scenario: &Scenario,
        strategy: Option<Strategy>,
    ) -> Result<Self, EngineError> {
        let mut config = scenario.config.clone();
        if let Some(s) = strategy {
            config.strategy = s;
        }
        let mut sim = Simulation::new(topo, config, Acl::new(scenario.acl.clone()))?;
        sim.scenario = scenario.name.clone();
        sim.metrics.scenario = scenario.name.clone();
        for f in &scenario.flows {
            let spec = FlowSpec {
                src: topo.host_by_name(&f.src)?.id,
                dst: topo.host_by_name(&f.dst)?.id,
                n_packets: f.packets,
                payload: f.payload,
                gap: f.gap_ms,
                start: f.start_ms,
                nw_proto: f.nw_proto,
            };
            sim.inject_flow(spec)?;
        }
        for f in &scenario.failures {
            let link = topo.link_by_name(&f.link)?.id;
            let jitter = if f.jitter_ms > 0.0 {
                sim.rng.random_range(0.0..f.jitter_ms)
            } else {
                0.0
            };
            sim.inject_failure(link, f.at_ms + jitter)?;
            if let Some(r) = f.repair_ms {
                sim.inject_repair(link, r + jitter)?;
            }
        }
        Ok(sim)
    }

    pub fn clock(&self) -> Millis {
        self.clock
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn switch(&self, id: SwitchId) -> &SwitchState {
        &self.switches[id.0 as usize]
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Record `(time, seq)` of every dispatched event.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[(Millis, u64)]> {
        self.trace.as_deref()
    }

    pub fn schedule(&mut self, time: Millis, kind: EventKind) -> Result<u64, EngineError> {
        if time < self.clock || time.is_nan() {
            return Err(EngineError::TimeTravel {
                at: time,
                now: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.last_scheduled = self.last_scheduled.max(time);
        self.queue.push(Event { time, seq, kind });
        Ok(seq)
    }

    /// Remove and return the next event without dispatching it.
    pub fn pop_event(&mut self) -> Option<Event> {
        let ev = self.queue.pop()?;
        self.clock = ev.time;
        Some(ev)
    }

    /// Schedule one host emission per packet at `start + i * gap`.
    pub fn inject_flow(&mut self, spec: FlowSpec) -> Result<(), EngineError> {
        let n_hosts = self.topo.hosts().len() as u32;
        for h in [spec.src, spec.dst] {
            if h.0 >= n_hosts {
                return Err(TopologyError::UnknownHost(format!("#{}", h.0)).into());
            }
        }
        if spec.n_packets == 0 {
            return Err(EngineError::BadFlow(
                "a flow needs at least one packet".into(),
            ));
        }
        if !(spec.gap >= 0.0 && spec.start >= 0.0) {
            return Err(EngineError::BadFlow("gap and start must be >= 0".into()));
        }
        let (src, dst) = (self.topo.host(spec.src), self.topo.host(spec.dst));
        let (src_addr, dst_addr) = (src.address, dst.address);
        for i in 0..spec.n_packets {
            let time = spec.start + i as f64 * spec.gap;
            let packet = Packet {
                src: src_addr,
                dst: dst_addr,
                dl_type: ETH_TYPE_IPV4,
                nw_proto: spec.nw_proto,
                size: spec.payload,
                seq: i,
                created_at: time,
                ttl: DEFAULT_TTL,
            };
            self.schedule(
                time,
                EventKind::HostSend {
                    host: spec.src,
                    packet,
                },
            )?;
        }
        Ok(())
    }

    pub fn inject_failure(&mut self, link: LinkId, at: Millis) -> Result<(), EngineError> {
        self.topo.link(link)?;
        self.schedule(at, EventKind::LinkFail(link)).map(|_| ())
    }

    pub fn inject_repair(&mut self, link: LinkId, at: Millis) -> Result<(), EngineError> {
        self.topo.link(link)?;
        self.schedule(at, EventKind::LinkRepair(link)).map(|_| ())
    }

    /// Install a rule directly, bypassing the controller.
    pub fn preinstall(&mut self, switch: SwitchId, rule: FlowRule) -> Result<(), EngineError> {
        if !self.topo.contains_switch(switch) {
            return Err(TopologyError::UnknownSwitch(format!("#{}", switch.0)).into());
        }
        let i = switch.0 as usize;
        self.switches[i].install_rule(rule, self.clock)?;
        self.peaks[i] = self.peaks[i].max(self.switches[i].table().len());
        Ok(())
    }

    pub fn run(mut self) -> Result<MetricsReport, EngineError> {
        self.run_to_horizon()?;
        Ok(self.report())
    }

    /// Dispatch events until the queue drains or the next event lies past the horizon.
    pub fn run_to_horizon(&mut self) -> Result<(), EngineError> {
        self.start()?;
        while let Some(next) = self.queue.peek() {
            if next.time > self.horizon {
                break;
            }
            let ev = self.pop_event().expect("peeked");
            if let Some(t) = self.trace.as_mut() {
                t.push((ev.time, ev.seq));
            }
            self.dispatch(ev.kind)?;
        }
        Ok(())
    }

    fn start(&mut self) -> Result<(), EngineError> {
        if self.started {
            return Ok(());
        }
        self.started = true;
        if self.queue.is_empty() {
            // nothing to simulate
            self.horizon = self.clock;
            return Ok(());
        }
        self.horizon = self
            .config
            .horizon_ms
            .unwrap_or(self.last_scheduled + DEFAULT_HORIZON_SLACK_MS);
        let hello = self.controller.bootstrap();
        self.metrics.bootstrap_msgs += hello.len() as u64;
        let at = self.clock + self.config.ctrl_rtt_ms;
        for msg in hello {
            self.schedule(at, EventKind::ControlDelivery(msg))?;
        }
        let first_tick = self.clock + self.config.tick_interval_ms;
        if first_tick <= self.horizon {
            self.schedule(first_tick, EventKind::FeatureReplyTick)?;
        }
        info!(
            "{} / {}: {} events queued, horizon {} ms",
            self.scenario,
            self.config.strategy,
            self.queue.len(),
            self.horizon
        );
        Ok(())
    }

    /// Metrics as of the current clock.
    pub fn report(&self) -> MetricsReport {
        let mut m = self.metrics.clone();
        m.in_flight = self
            .queue
            .iter()
            .filter(|e| e.kind.carries_packet())
            .count() as u64;
        m.horizon_truncated = self.queue.iter().any(|e| e.kind.is_pending_work());
        let c = self.controller.counters();
        m.path_computations = c.path_computations;
        m.candidates_ranked = c.candidates_ranked;
        m.per_switch_rules = self
            .switches
            .iter()
            .zip(&self.peaks)
            .map(|(s, peak)| SwitchRules {
                switch: self.topo.switch_name(s.id).to_string(),
                peak: *peak,
                final_count: s.table().len(),
            })
            .collect();
        m
    }

    fn dispatch(&mut self, kind: EventKind) -> Result<(), EngineError> {
        match kind {
            EventKind::HostSend { host, packet } => {
                self.metrics.injected += 1;
                let h = self.topo.host(host);
                let (attach, delay) = (h.attach, h.delay_ms);
                self.schedule(
                    self.clock + delay,
                    EventKind::PacketAtSwitch {
                        switch: attach.switch,
                        packet,
                    },
                )?;
            }
            EventKind::PacketAtSwitch { switch, packet } => {
                self.packet_at_switch(switch, packet)?
            }
            EventKind::PacketAtHost { host, packet } => {
                if self.topo.host(host).address == packet.dst {
                    self.metrics.delivered += 1;
                    self.metrics.deliveries.push(Delivery {
                        seq: packet.seq,
                        created_at: packet.created_at,
                        latency: self.clock - packet.created_at,
                    });
                } else {
                    self.metrics.dropped += 1;
                }
            }
            EventKind::ControlDelivery(msg) if msg.is_upstream() => self.at_controller(msg)?,
            EventKind::ControlDelivery(msg) => self.at_switch(msg)?,
            EventKind::LinkFail(link) => self.set_link(link, LinkStatus::Down)?,
            EventKind::LinkRepair(link) => self.set_link(link, LinkStatus::Up)?,
            EventKind::FeatureReplyTick => self.tick()?,
        }
        Ok(())
    }

    fn packet_at_switch(
        &mut self,
        switch: SwitchId,
        mut packet: Packet,
    ) -> Result<(), EngineError> {
        if packet.ttl == 0 {
            debug!(
                "ttl expired for packet {} at {}",
                packet.seq,
                self.topo.switch_name(switch)
            );
            self.metrics.dropped += 1;
            return Ok(());
        }
        packet.ttl -= 1;
        let now = self.clock;
        let done = now + self.config.switch_proc_ms;
        match self.switches[switch.0 as usize].process(&packet, now) {
            Verdict::Forward(port) => self.send_out(switch, port, packet, done)?,
            Verdict::Drop => self.metrics.dropped += 1,
            Verdict::ToController(reason) => {
                self.metrics.packet_ins += 1;
                self.schedule(
                    done + self.config.ctrl_rtt_ms,
                    EventKind::ControlDelivery(ControlMessage::PacketIn {
                        switch,
                        packet,
                        reason,
                    }),
                )?;
            }
        }
        Ok(())
    }

    /// Put `packet` on the wire behind `port` at time `at`.
    fn send_out(
        &mut self,
        switch: SwitchId,
        port: PortId,
        packet: Packet,
        at: Millis,
    ) -> Result<(), EngineError> {
        let target = self.topo.port_target(Endpoint { switch, port });
        let up = self.switches[switch.0 as usize].port_status(port) == Some(LinkStatus::Up);
        match target {
            Some(PortTarget::Link { link, peer }) if up => {
                let delay = self.topo.link(link)?.delay_ms;
                self.schedule(
                    at + delay,
                    EventKind::PacketAtSwitch {
                        switch: peer.switch,
                        packet,
                    },
                )?;
            }
            Some(PortTarget::Host(host)) if up => {
                let delay = self.topo.host(host).delay_ms;
                self.schedule(at + delay, EventKind::PacketAtHost { host, packet })?;
            }
            _ => self.metrics.dropped += 1,
        }
        Ok(())
    }

    fn at_controller(&mut self, msg: ControlMessage) -> Result<(), EngineError> {
        let releases_packet = matches!(msg, ControlMessage::PacketIn { .. });
        let out = self.controller.handle(msg)?;
        if releases_packet
            && !out
                .iter()
                .any(|m| matches!(m, ControlMessage::PacketOut { .. }))
        {
            self.metrics.dropped += 1;
        }
        let at = self.clock + self.config.ctrl_proc_ms + self.config.ctrl_rtt_ms;
        for m in out {
            match m {
                ControlMessage::FlowModAdd { .. } => self.metrics.flow_mod_adds += 1,
                ControlMessage::FlowModDelete { .. } => self.metrics.flow_mod_deletes += 1,
                ControlMessage::PacketOut { .. } => self.metrics.packet_outs += 1,
                _ => {}
            }
            self.schedule(at, EventKind::ControlDelivery(m))?;
        }
        Ok(())
    }

    fn at_switch(&mut self, msg: ControlMessage) -> Result<(), EngineError> {
        let now = self.clock;
        match msg {
            ControlMessage::Hello { .. } => {}
            ControlMessage::FeatureRequest { switch } => {
                let i = switch.0 as usize;
                if !self.bootstrap_replied[i] {
                    self.bootstrap_replied[i] = true;
                    self.metrics.bootstrap_msgs += 1;
                } else {
                    self.metrics.feature_replies += 1;
                }
                let links = self.link_reports(switch, false);
                self.schedule(
                    now + self.config.ctrl_rtt_ms,
                    EventKind::ControlDelivery(ControlMessage::FeatureReply { switch, links }),
                )?;
            }
            ControlMessage::FlowModAdd { switch, rule } => {
                let i = switch.0 as usize;
                match self.switches[i].install_rule(rule, now) {
                    Ok(()) => self.peaks[i] = self.peaks[i].max(self.switches[i].table().len()),
                    Err(DataplaneError::TableFull { capacity }) => {
                        debug!(
                            "table full at {} ({capacity})",
                            self.topo.switch_name(switch)
                        );
                        self.metrics.table_full_events += 1;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            ControlMessage::FlowModDelete { switch, selector } => {
                self.switches[switch.0 as usize].remove_rules(selector);
            }
            ControlMessage::PacketOut {
                switch,
                packet,
                port,
            } => self.send_out(switch, port, packet, now)?,
            other => {
                return Err(ControllerError::Protocol(format!(
                    "upstream message routed to a switch: {other:?}"
                ))
                .into())
            }
        }
        Ok(())
    }

    /// One report per link incident to `switch`. `sample` draws an estimated-mode observation.
    fn link_reports(&mut self, switch: SwitchId, sample: bool) -> Vec<LinkReport> {
        let estimated = sample && self.config.reliability_mode == ReliabilityMode::Estimated;
        let neighbors = self
            .topo
            .neighbors(switch)
            .expect("switch ids come from the topology")
            .to_vec();
        neighbors
            .into_iter()
            .map(|n| {
                let status = self.switches[switch.0 as usize]
                    .port_status(n.port)
                    .expect("link ports exist on the switch");
                let observation = if estimated && status.is_up() {
                    let r = self.topo.links()[n.link.0 as usize].reliability;
                    if self.rng.random_bool(r) {
                        LinkStatus::Up
                    } else {
                        LinkStatus::Down
                    }
                } else {
                    status
                };
                LinkReport {
                    link: n.link,
                    status,
                    observation,
                }
            })
            .collect()
    }

    fn tick(&mut self) -> Result<(), EngineError> {
        let now = self.clock;
        let at = now + self.config.ctrl_rtt_ms;
        let ids: Vec<SwitchId> = self.topo.switches().collect();
        for switch in ids {
            self.switches[switch.0 as usize].sweep_timeouts(now);
            let links = self.link_reports(switch, true);
            self.metrics.feature_replies += 1;
            self.schedule(
                at,
                EventKind::ControlDelivery(ControlMessage::FeatureReply { switch, links }),
            )?;
        }
        let next = now + self.config.tick_interval_ms;
        if next <= self.horizon {
            self.schedule(next, EventKind::FeatureReplyTick)?;
        }
        Ok(())
    }

    fn set_link(&mut self, link: LinkId, status: LinkStatus) -> Result<(), EngineError> {
        let l = self.topo.link(link)?;
        if l.status == status {
            return Ok(());
        }
        let ends = [l.end_a, l.end_b];
        self.topo.set_link_status(link, status)?;
        debug!(
            "{} at {} ms: link {} {:?}",
            self.scenario, self.clock, link.0, status
        );
        for end in ends {
            self.switches[end.switch.0 as usize].set_port_status(end.port, status)?;
            if self.config.port_status_notice {
                self.metrics.port_status_msgs += 1;
                self.schedule(
                    self.clock + self.config.ctrl_rtt_ms,
                    EventKind::ControlDelivery(ControlMessage::PortStatusNotice {
                        switch: end.switch,
                        port: end.port,
                        status,
                    }),
                )?;
            }
        }
        Ok(())
    }
}

/// Run `scenario` once per strategy, spreading runs over up to `workers` threads. Reports come
/// back in the order of `strategies` regardless of the worker count.
pub fn run_sweep(
    topo: &Topology,
    scenario: &Scenario,
    strategies: &[Strategy],
    workers: usize,
) -> Result<Vec<MetricsReport>, EngineError> {
    let run_one = |s: Strategy| Simulation::from_scenario(topo, scenario, Some(s))?.run();
    let workers = workers.clamp(1, strategies.len().max(1));
    if workers == 1 {
        return strategies.iter().map(|s| run_one(*s)).collect();
    }
    let mut slots: Vec<Option<Result<MetricsReport, EngineError>>> =
        strategies.iter().map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let run_one = &run_one;
                scope.spawn(move || {
                    strategies
                        .iter()
                        .enumerate()
                        .skip(w)
                        .step_by(workers)
                        .map(|(i, s)| (i, run_one(*s)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("simulation worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots
        .into_iter()
        .map(|r| r.expect("every strategy ran"))
        .collect()
}
