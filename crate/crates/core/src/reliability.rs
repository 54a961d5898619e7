//! Link and path reliability.

use std::collections::{BTreeMap, VecDeque};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::topology::{LinkId, LinkStatus, Topology, TopologyError};

/// Where per-link reliability comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReliabilityMode {
    /// The value declared in the topology file.
    #[default]
    Static,
    /// Up-ratio over the most recent link-state observations.
    Estimated,
}

/// How per-link reliabilities are folded into a path reliability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathReliabilityRule {
    /// Series system with independent failures.
    #[default]
    Product,
    /// Weakest link.
    Min,
}

impl FromStr for ReliabilityMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(Self::Static),
            "estimated" => Ok(Self::Estimated),
            _ => Err(format!(
                "unknown reliability mode `{s}` (expected static|estimated)"
            )),
        }
    }
}

impl FromStr for PathReliabilityRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "product" => Ok(Self::Product),
            "min" => Ok(Self::Min),
            _ => Err(format!("unknown path rule `{s}` (expected product|min)")),
        }
    }
}

pub const DEFAULT_WINDOW: usize = 100;

/// Bounded FIFO of up/down samples for one link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationWindow {
    capacity: usize,
    samples: VecDeque<LinkStatus>,
}

impl ObservationWindow {
    /// # Panics
    ///
    /// If `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "observation window needs a positive capacity");
        Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = LinkStatus> + '_ {
        self.samples.iter().copied()
    }

    /// Append a sample, evicting the oldest one when full.
    pub fn record(&mut self, status: LinkStatus) {
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(status);
    }

    /// Fraction of up samples; an empty window is treated as fully reliable.
    pub fn up_ratio(&self) -> f64 {
        if self.samples.is_empty() {
            return 1.0;
        }
        let up = self.samples.iter().filter(|s| s.is_up()).count();
        up as f64 / self.samples.len() as f64
    }
}

/// Per-link reliability as seen by the controller.
#[derive(Debug, Clone)]
pub struct LinkEstimator {
    mode: ReliabilityMode,
    window: usize,
    windows: BTreeMap<LinkId, ObservationWindow>,
}

impl LinkEstimator {
    pub fn new(mode: ReliabilityMode, window: usize) -> Self {
        assert!(window > 0, "observation window needs a positive capacity");
        Self {
            mode,
            window,
            windows: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> ReliabilityMode {
        self.mode
    }

    pub fn record(&mut self, link: LinkId, status: LinkStatus) {
        let window = self.window;
        self.windows
            .entry(link)
            .or_insert_with(|| ObservationWindow::new(window))
            .record(status);
    }

    pub fn window(&self, link: LinkId) -> Option<&ObservationWindow> {
        self.windows.get(&link)
    }

    pub fn link_reliability(&self, topo: &Topology, link: LinkId) -> Result<f64, TopologyError> {
        link_reliability(self.mode, topo, self.windows.get(&link), link)
    }
}

/// Reliability of a single link under `mode`. In estimated mode a missing window behaves like an
/// empty one.
pub fn link_reliability(
    mode: ReliabilityMode,
    topo: &Topology,
    window: Option<&ObservationWindow>,
    link: LinkId,
) -> Result<f64, TopologyError> {
    let declared = topo.link(link)?.reliability;
    Ok(match mode {
        ReliabilityMode::Static => declared,
        ReliabilityMode::Estimated => window.map_or(1.0, ObservationWindow::up_ratio),
    })
}

/// Aggregate link reliabilities along a path. The empty path is fully reliable.
pub fn path_reliability(rule: PathReliabilityRule, rels: &[f64]) -> f64 {
    match rule {
        PathReliabilityRule::Product => {
            // fixed multiplication order keeps the result permutation-invariant bit for bit
            let mut sorted = rels.to_vec();
            sorted.sort_by(f64::total_cmp);
            sorted.iter().product()
        }
        PathReliabilityRule::Min => rels.iter().copied().fold(1.0, f64::min),
    }
}
