//! Candidate path enumeration, ranking and the reliability-tier selection rule.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reliability::{path_reliability, PathReliabilityRule};
use crate::topology::{LinkId, PortId, SwitchId, Topology, TopologyError};

pub const DEFAULT_PATH_CAP: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("no path between {src} and {dst}")]
    NoPath { src: String, dst: String },
    #[error("path cap must be positive")]
    ZeroCap,
    #[error("invalid tier table: {0}")]
    BadTierTable(&'static str),
}

/// A loop-free route through the switch graph.
///
/// `egress[i]` is the port on `switches[i]` that leads over `links[i]` to `switches[i + 1]`.
/// The final switch's egress depends on the destination host and is supplied separately, see
/// [`Path::hops`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    switches: Vec<SwitchId>,
    links: Vec<LinkId>,
    egress: Vec<PortId>,
}

impl Path {
    /// A path that starts and ends on the same switch.
    pub fn local(switch: SwitchId) -> Self {
        Self {
            switches: vec![switch],
            links: Vec::new(),
            egress: Vec::new(),
        }
    }

    pub fn switches(&self) -> &[SwitchId] {
        &self.switches
    }

    pub fn links(&self) -> &[LinkId] {
        &self.links
    }

    /// Number of switches traversed.
    pub fn hop_count(&self) -> usize {
        self.switches.len()
    }

    pub fn source(&self) -> SwitchId {
        self.switches[0]
    }

    pub fn destination(&self) -> SwitchId {
        *self.switches.last().expect("paths are never empty")
    }

    pub fn uses_link(&self, link: LinkId) -> bool {
        self.links.contains(&link)
    }

    /// `(switch, egress port)` per traversed switch, ending with the host-facing port.
    pub fn hops(&self, dst_attach: PortId) -> Vec<(SwitchId, PortId)> {
        self.switches
            .iter()
            .copied()
            .zip(
                self.egress
                    .iter()
                    .copied()
                    .chain(std::iter::once(dst_attach)),
            )
            .collect()
    }

    /// Egress port used on `switch`, if the path visits it.
    pub fn egress_at(&self, switch: SwitchId, dst_attach: PortId) -> Option<PortId> {
        let i = self.switches.iter().position(|s| *s == switch)?;
        Some(self.egress.get(i).copied().unwrap_or(dst_attach))
    }

    fn cmp_sequence(&self, other: &Self) -> Ordering {
        self.switches
            .cmp(&other.switches)
            .then_with(|| self.links.cmp(&other.links))
    }
}

/// Result of a (possibly truncated) enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    pub paths: Vec<Path>,
    /// Set when the cap stopped the search before it was exhaustive.
    pub truncated: bool,
}

/// Enumerate simple paths from `src` to `dst` over up links in depth-first order, visiting
/// neighbors by ascending egress port. Stops after `cap` paths.
pub fn enumerate_simple_paths(
    topo: &Topology,
    src: SwitchId,
    dst: SwitchId,
    cap: usize,
) -> Result<Enumeration, PathError> {
    if cap == 0 {
        return Err(PathError::ZeroCap);
    }
    topo.neighbors(src)?;
    topo.neighbors(dst)?;
    if src == dst {
        return Ok(Enumeration {
            paths: vec![Path::local(src)],
            truncated: false,
        });
    }

    let mut search = Dfs {
        topo,
        dst,
        cap,
        visited: vec![false; topo.switch_count()],
        current: Path::local(src),
        found: Vec::new(),
        truncated: false,
    };
    search.visited[src.0 as usize] = true;
    search.descend(src);
    Ok(Enumeration {
        paths: search.found,
        truncated: search.truncated,
    })
}

struct Dfs<'a> {
    topo: &'a Topology,
    dst: SwitchId,
    cap: usize,
    visited: Vec<bool>,
    current: Path,
    found: Vec<Path>,
    truncated: bool,
}

impl Dfs<'_> {
    fn descend(&mut self, at: SwitchId) {
        let neighbors = self.topo.neighbors(at).expect("validated switch");
        for n in neighbors {
            if self.truncated {
                return;
            }
            let link = &self.topo.links()[n.link.0 as usize];
            if !link.status.is_up() || self.visited[n.peer.0 as usize] {
                continue;
            }
            self.current.switches.push(n.peer);
            self.current.links.push(n.link);
            self.current.egress.push(n.port);
            if n.peer == self.dst {
                if self.found.len() == self.cap {
                    self.truncated = true;
                } else {
                    self.found.push(self.current.clone());
                }
            } else {
                self.visited[n.peer.0 as usize] = true;
                self.descend(n.peer);
                self.visited[n.peer.0 as usize] = false;
            }
            self.current.switches.pop();
            self.current.links.pop();
            self.current.egress.pop();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankMode {
    /// Most reliable first.
    #[default]
    Raf,
    /// Highest reliability per traversed switch first.
    Distance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedPath {
    pub path: Path,
    pub reliability: f64,
    /// Ranking key: the reliability itself in [`RankMode::Raf`], reliability divided by hop
    /// count in [`RankMode::Distance`].
    pub score: f64,
}

/// Rank paths into a strict total order.
///
/// * `Raf`: reliability desc, hop count asc, switch sequence asc.
/// * `Distance`: reliability / hop count desc, reliability desc, switch sequence asc.
pub fn rank_paths<F>(
    paths: Vec<Path>,
    mode: RankMode,
    rule: PathReliabilityRule,
    link_reliability: F,
) -> Vec<RankedPath>
where
    F: Fn(LinkId) -> f64,
{
    let mut ranked: Vec<RankedPath> = paths
        .into_iter()
        .map(|path| {
            let rels: Vec<f64> = path.links().iter().map(|l| link_reliability(*l)).collect();
            let reliability = path_reliability(rule, &rels);
            let score = match mode {
                RankMode::Raf => reliability,
                RankMode::Distance => reliability / path.hop_count() as f64,
            };
            RankedPath {
                path,
                reliability,
                score,
            }
        })
        .collect();
    ranked.sort_by(|a, b| match mode {
        RankMode::Raf => b
            .reliability
            .total_cmp(&a.reliability)
            .then_with(|| a.path.hop_count().cmp(&b.path.hop_count()))
            .then_with(|| a.path.cmp_sequence(&b.path)),
        RankMode::Distance => b
            .score
            .total_cmp(&a.score)
            .then_with(|| b.reliability.total_cmp(&a.reliability))
            .then_with(|| a.path.cmp_sequence(&b.path)),
    });
    ranked
}

/// Whether tier counts denote the total number of installed paths or only the alternates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountMode {
    #[default]
    Total,
    Alternates,
}

impl FromStr for CountMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "total" => Ok(Self::Total),
            "alternates" => Ok(Self::Alternates),
            _ => Err(format!(
                "unknown count mode `{s}` (expected total|alternates)"
            )),
        }
    }
}

/// Maps primary-path reliability to a number of paths to install.
///
/// Intervals are half-open from above: a reliability strictly greater than `boundaries[i]` (and
/// at most the previous boundary) selects `counts[i]`. Anything at or below the last boundary
/// installs every available path.
#[derive(Debug, Clone, PartialEq)]
pub struct TierTable {
    boundaries: Vec<f64>,
    counts: Vec<usize>,
    count_mode: CountMode,
}

impl Default for TierTable {
    fn default() -> Self {
        Self {
            boundaries: vec![0.9, 0.8, 0.7, 0.6, 0.5],
            counts: vec![1, 2, 3, 4, 5],
            count_mode: CountMode::Total,
        }
    }
}

impl TierTable {
    pub fn new(
        boundaries: Vec<f64>,
        counts: Vec<usize>,
        count_mode: CountMode,
    ) -> Result<Self, PathError> {
        if boundaries.len() != counts.len() {
            return Err(PathError::BadTierTable("one count per boundary"));
        }
        if boundaries.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(PathError::BadTierTable("boundaries must lie in (0,1)"));
        }
        if boundaries.windows(2).any(|w| w[0] <= w[1]) {
            return Err(PathError::BadTierTable("boundaries must strictly descend"));
        }
        if counts.contains(&0) {
            return Err(PathError::BadTierTable("counts must be positive"));
        }
        Ok(Self {
            boundaries,
            counts,
            count_mode,
        })
    }

    pub fn with_count_mode(mut self, count_mode: CountMode) -> Self {
        self.count_mode = count_mode;
        self
    }

    pub fn count_mode(&self) -> CountMode {
        self.count_mode
    }

    fn effective_count(&self, tier: usize) -> usize {
        match self.count_mode {
            CountMode::Total => self.counts[tier],
            // the top tier installs no alternate; the rest read as "n alternates"
            CountMode::Alternates if tier == 0 => 1,
            CountMode::Alternates => 1 + self.counts[tier],
        }
    }
}

/// Number of paths to install for a primary of reliability `r_primary` when `available`
/// candidates exist. Always within `[1, available]`.
pub fn tier_path_count(r_primary: f64, available: usize, table: &TierTable) -> usize {
    let available = available.max(1);
    table
        .boundaries
        .iter()
        .position(|b| r_primary > *b)
        .map_or(available, |tier| table.effective_count(tier).min(available))
}

/// Flow installation strategy.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    Raf,
    RafDistance,
    AllPaths,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Raf, Strategy::RafDistance, Strategy::AllPaths];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Raf => "raf",
            Strategy::RafDistance => "raf-distance",
            Strategy::AllPaths => "all-paths",
        }
    }

    pub fn rank_mode(self) -> RankMode {
        match self {
            Strategy::RafDistance => RankMode::Distance,
            Strategy::Raf | Strategy::AllPaths => RankMode::Raf,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (expected raf|raf-distance|all-paths)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub strategy: Strategy,
    pub rule: PathReliabilityRule,
    pub tiers: TierTable,
    pub path_cap: usize,
    /// Only keep alternates that share no link with any previously selected path.
    pub disjoint_alternates: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Raf,
            rule: PathReliabilityRule::Product,
            tiers: TierTable::default(),
            path_cap: DEFAULT_PATH_CAP,
            disjoint_alternates: false,
        }
    }
}

/// The primary path and its ordered alternates.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub primary: RankedPath,
    pub alternates: Vec<RankedPath>,
    /// Total number of selected paths, `1 + alternates.len()`.
    pub tier_count: usize,
    /// Number of enumerated candidates that were ranked.
    pub candidates: usize,
    pub truncated: bool,
}

impl PathSet {
    /// Primary first, then alternates in rank order.
    pub fn paths(&self) -> impl Iterator<Item = &RankedPath> {
        std::iter::once(&self.primary).chain(self.alternates.iter())
    }
}

/// Enumerate, rank and cut the candidate list according to the strategy.
pub fn select_paths<F>(
    topo: &Topology,
    src: SwitchId,
    dst: SwitchId,
    config: &SelectionConfig,
    link_reliability: F,
) -> Result<PathSet, PathError>
where
    F: Fn(LinkId) -> f64,
{
    let enumeration = enumerate_simple_paths(topo, src, dst, config.path_cap)?;
    let candidates = enumeration.paths.len();
    if candidates == 0 {
        return Err(PathError::NoPath {
            src: topo.switch_name(src).to_string(),
            dst: topo.switch_name(dst).to_string(),
        });
    }
    let ranked = rank_paths(
        enumeration.paths,
        config.strategy.rank_mode(),
        config.rule,
        link_reliability,
    );

    let chosen: Vec<RankedPath> = match config.strategy {
        Strategy::AllPaths => ranked,
        Strategy::Raf | Strategy::RafDistance => {
            let pool = if config.disjoint_alternates {
                link_disjoint(ranked)
            } else {
                ranked
            };
            let count = tier_path_count(pool[0].reliability, pool.len(), &config.tiers);
            pool.into_iter().take(count).collect()
        }
    };

    let mut it = chosen.into_iter();
    let primary = it.next().expect("at least one candidate");
    let alternates: Vec<RankedPath> = it.collect();
    Ok(PathSet {
        tier_count: 1 + alternates.len(),
        primary,
        alternates,
        candidates,
        truncated: enumeration.truncated,
    })
}

fn link_disjoint(ranked: Vec<RankedPath>) -> Vec<RankedPath> {
    let mut kept: Vec<RankedPath> = Vec::new();
    for candidate in ranked {
        let overlaps = kept
            .iter()
            .any(|k| candidate.path.links().iter().any(|l| k.path.uses_link(*l)));
        if !overlaps {
            kept.push(candidate);
        }
    }
    kept
}
