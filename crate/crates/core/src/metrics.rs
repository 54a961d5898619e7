//! Run metrics, summaries and CSV export.
//!
//! The exported file starts with a schema comment, followed by one header row and one value row
//! for the run totals, a blank line, and a per-switch section with its own header.

use thiserror::Error;

use crate::dataplane::Millis;

pub const CSV_SCHEMA: &str = "# rafsim-metrics v1";
pub const COMPARISON_SCHEMA: &str = "# rafsim-comparison v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchRules {
    pub switch: String,
    pub peak: usize,
    pub final_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub seq: u64,
    pub created_at: Millis,
    pub latency: Millis,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub scenario: String,
    pub strategy: String,
    pub path_computations: u64,
    /// Candidate paths enumerated and ranked over all computations.
    pub candidates_ranked: u64,
    pub flow_mod_adds: u64,
    pub flow_mod_deletes: u64,
    pub packet_ins: u64,
    pub packet_outs: u64,
    pub feature_replies: u64,
    pub bootstrap_msgs: u64,
    pub port_status_msgs: u64,
    pub table_full_events: u64,
    pub per_switch_rules: Vec<SwitchRules>,
    pub injected: u64,
    pub delivered: u64,
    pub dropped: u64,
    /// Packets still travelling when the run stopped.
    pub in_flight: u64,
    /// In delivery order.
    pub deliveries: Vec<Delivery>,
    pub horizon_truncated: bool,
}

impl MetricsReport {
    pub fn flow_mods_sent(&self) -> u64 {
        self.flow_mod_adds + self.flow_mod_deletes
    }

    /// Every message exchanged between the controller and the switches.
    pub fn control_messages(&self) -> u64 {
        self.flow_mods_sent()
            + self.packet_ins
            + self.packet_outs
            + self.feature_replies
            + self.bootstrap_msgs
            + self.port_status_msgs
    }

    pub fn delays(&self) -> impl Iterator<Item = Millis> + '_ {
        self.deliveries.iter().map(|d| d.latency)
    }

    pub fn max_peak_rules(&self) -> usize {
        self.per_switch_rules
            .iter()
            .map(|s| s.peak)
            .max()
            .unwrap_or(0)
    }

    pub fn total_final_rules(&self) -> usize {
        self.per_switch_rules.iter().map(|s| s.final_count).sum()
    }
}

/// Flat record of everything exported in the totals row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    pub scenario: String,
    pub strategy: String,
    pub path_computations: u64,
    pub candidates_ranked: u64,
    pub flow_mods_sent: u64,
    pub flow_mod_adds: u64,
    pub flow_mod_deletes: u64,
    pub packet_ins: u64,
    pub packet_outs: u64,
    pub feature_replies: u64,
    pub bootstrap_msgs: u64,
    pub port_status_msgs: u64,
    pub control_messages: u64,
    pub table_full_events: u64,
    pub max_peak_rules: u64,
    pub total_final_rules: u64,
    pub injected: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub delay_mean_ms: Option<f64>,
    pub delay_median_ms: Option<f64>,
    pub delay_p99_ms: Option<f64>,
    pub horizon_truncated: bool,
}

const COLUMNS: [&str; 24] = [
    "scenario",
    "strategy",
    "path_computations",
    "candidates_ranked",
    "flow_mods_sent",
    "flow_mod_adds",
    "flow_mod_deletes",
    "packet_ins",
    "packet_outs",
    "feature_replies",
    "bootstrap_msgs",
    "port_status_msgs",
    "control_messages",
    "table_full_events",
    "max_peak_rules",
    "total_final_rules",
    "injected",
    "delivered",
    "dropped",
    "in_flight",
    "delay_mean_ms",
    "delay_median_ms",
    "delay_p99_ms",
    "horizon_truncated",
];

const SWITCH_COLUMNS: [&str; 3] = ["switch", "peak_rules", "final_rules"];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("reports belong to different scenarios (`{0}` vs `{1}`)")]
    ScenarioMismatch(String, String),
    #[error("malformed metrics csv: {0}")]
    Malformed(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Median of `sorted`; mean of the middle pair for even lengths.
fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

/// Nearest-rank percentile of `sorted`.
fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn summarize(r: &MetricsReport) -> MetricsSummary {
    let delays: Vec<f64> = r.delays().collect();
    let mut sorted = delays.clone();
    sorted.sort_by(f64::total_cmp);
    MetricsSummary {
        scenario: r.scenario.clone(),
        strategy: r.strategy.clone(),
        path_computations: r.path_computations,
        candidates_ranked: r.candidates_ranked,
        flow_mods_sent: r.flow_mods_sent(),
        flow_mod_adds: r.flow_mod_adds,
        flow_mod_deletes: r.flow_mod_deletes,
        packet_ins: r.packet_ins,
        packet_outs: r.packet_outs,
        feature_replies: r.feature_replies,
        bootstrap_msgs: r.bootstrap_msgs,
        port_status_msgs: r.port_status_msgs,
        control_messages: r.control_messages(),
        table_full_events: r.table_full_events,
        max_peak_rules: r.max_peak_rules() as u64,
        total_final_rules: r.total_final_rules() as u64,
        injected: r.injected,
        delivered: r.delivered,
        dropped: r.dropped,
        in_flight: r.in_flight,
        delay_mean_ms: mean(&delays),
        delay_median_ms: median(&sorted),
        delay_p99_ms: percentile(&sorted, 99.0),
        horizon_truncated: r.horizon_truncated,
    }
}

fn real(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl MetricsSummary {
    fn fields(&self) -> Vec<String> {
        let counts = [
            self.path_computations,
            self.candidates_ranked,
            self.flow_mods_sent,
            self.flow_mod_adds,
            self.flow_mod_deletes,
            self.packet_ins,
            self.packet_outs,
            self.feature_replies,
            self.bootstrap_msgs,
            self.port_status_msgs,
            self.control_messages,
            self.table_full_events,
            self.max_peak_rules,
            self.total_final_rules,
            self.injected,
            self.delivered,
            self.dropped,
            self.in_flight,
        ];
        let mut out = vec![self.scenario.clone(), self.strategy.clone()];
        out.extend(counts.iter().map(u64::to_string));
        out.push(real(self.delay_mean_ms));
        out.push(real(self.delay_median_ms));
        out.push(real(self.delay_p99_ms));
        out.push(u8::from(self.horizon_truncated).to_string());
        out
    }

    fn from_fields(f: &csv::StringRecord) -> Result<Self, MetricsError> {
        if f.len() != COLUMNS.len() {
            return Err(MetricsError::Malformed(format!(
                "expected {} columns, found {}",
                COLUMNS.len(),
                f.len()
            )));
        }
        let count = |i: usize| -> Result<u64, MetricsError> {
            f[i].parse()
                .map_err(|_| MetricsError::Malformed(format!("{}: `{}`", COLUMNS[i], &f[i])))
        };
        let real = |i: usize| -> Result<Option<f64>, MetricsError> {
            if f[i].is_empty() {
                return Ok(None);
            }
            f[i].parse()
                .map(Some)
                .map_err(|_| MetricsError::Malformed(format!("{}: `{}`", COLUMNS[i], &f[i])))
        };
        Ok(Self {
            scenario: f[0].to_string(),
            strategy: f[1].to_string(),
            path_computations: count(2)?,
            candidates_ranked: count(3)?,
            flow_mods_sent: count(4)?,
            flow_mod_adds: count(5)?,
            flow_mod_deletes: count(6)?,
            packet_ins: count(7)?,
            packet_outs: count(8)?,
            feature_replies: count(9)?,
            bootstrap_msgs: count(10)?,
            port_status_msgs: count(11)?,
            control_messages: count(12)?,
            table_full_events: count(13)?,
            max_peak_rules: count(14)?,
            total_final_rules: count(15)?,
            injected: count(16)?,
            delivered: count(17)?,
            dropped: count(18)?,
            in_flight: count(19)?,
            delay_mean_ms: real(20)?,
            delay_median_ms: real(21)?,
            delay_p99_ms: real(22)?,
            horizon_truncated: count(23)? != 0,
        })
    }
}

fn write_rows<I, R>(out: &mut String, rows: I)
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        w.write_record(row).expect("writing to memory");
    }
    let bytes = w.into_inner().expect("writing to memory");
    out.push_str(&String::from_utf8(bytes).expect("fields are utf-8"));
}

pub fn export_csv(r: &MetricsReport) -> String {
    let mut out = format!("{CSV_SCHEMA}\n");
    write_rows(
        &mut out,
        [COLUMNS.map(String::from).to_vec(), summarize(r).fields()],
    );
    out.push('\n');
    let mut rows = vec![SWITCH_COLUMNS.map(String::from).to_vec()];
    rows.extend(r.per_switch_rules.iter().map(|s| {
        vec![
            s.switch.clone(),
            s.peak.to_string(),
            s.final_count.to_string(),
        ]
    }));
    write_rows(&mut out, rows);
    out
}

/// Inverse of [`export_csv`] up to the 6-decimal rounding of real columns.
pub fn parse_csv(text: &str) -> Result<(MetricsSummary, Vec<SwitchRules>), MetricsError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>()?;
    let mut it = records.into_iter();
    let header = it
        .next()
        .ok_or_else(|| MetricsError::Malformed("empty file".into()))?;
    if header.iter().ne(COLUMNS) {
        return Err(MetricsError::Malformed("unexpected header".into()));
    }
    let summary = MetricsSummary::from_fields(
        &it.next()
            .ok_or_else(|| MetricsError::Malformed("missing totals row".into()))?,
    )?;
    let switch_header = it
        .next()
        .ok_or_else(|| MetricsError::Malformed("missing per-switch section".into()))?;
    if switch_header.iter().ne(SWITCH_COLUMNS) {
        return Err(MetricsError::Malformed(
            "unexpected per-switch header".into(),
        ));
    }
    let switches = it
        .map(|row| {
            let bad = || MetricsError::Malformed(format!("per-switch row {row:?}"));
            if row.len() != 3 {
                return Err(bad());
            }
            Ok(SwitchRules {
                switch: row[0].to_string(),
                peak: row[1].parse().map_err(|_| bad())?,
                final_count: row[2].parse().map_err(|_| bad())?,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok((summary, switches))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRatio {
    pub metric: &'static str,
    pub value: Option<f64>,
    pub baseline: Option<f64>,
    /// `value / baseline`; absent when either side is absent or the baseline is zero.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub scenario: String,
    pub strategy: String,
    pub baseline: String,
    pub ratios: Vec<MetricRatio>,
}

impl Comparison {
    pub fn ratio(&self, metric: &str) -> Option<f64> {
        self.ratios
            .iter()
            .find(|r| r.metric == metric)
            .and_then(|r| r.ratio)
    }
}

type Getter = fn(&MetricsSummary) -> Option<f64>;

/// Per-metric ratios of `a` over `baseline`.
pub fn compare(a: &MetricsReport, baseline: &MetricsReport) -> Result<Comparison, MetricsError> {
    if a.scenario != baseline.scenario {
        return Err(MetricsError::ScenarioMismatch(
            a.scenario.clone(),
            baseline.scenario.clone(),
        ));
    }
    let (sa, sb) = (summarize(a), summarize(baseline));
    let metrics: [(&'static str, Getter); 13] = [
        ("path_computations", |s| Some(s.path_computations as f64)),
        ("candidates_ranked", |s| Some(s.candidates_ranked as f64)),
        ("flow_mods_sent", |s| Some(s.flow_mods_sent as f64)),
        ("packet_ins", |s| Some(s.packet_ins as f64)),
        ("packet_outs", |s| Some(s.packet_outs as f64)),
        ("control_messages", |s| Some(s.control_messages as f64)),
        ("table_full_events", |s| Some(s.table_full_events as f64)),
        ("max_peak_rules", |s| Some(s.max_peak_rules as f64)),
        ("total_final_rules", |s| Some(s.total_final_rules as f64)),
        ("delivered", |s| Some(s.delivered as f64)),
        ("dropped", |s| Some(s.dropped as f64)),
        ("delay_mean_ms", |s| s.delay_mean_ms),
        ("delay_p99_ms", |s| s.delay_p99_ms),
    ];
    let ratios = metrics
        .iter()
        .map(|(metric, get)| {
            let (value, base) = (get(&sa), get(&sb));
            let ratio = match (value, base) {
                (Some(v), Some(b)) if b != 0.0 => Some(v / b),
                _ => None,
            };
            MetricRatio {
                metric,
                value,
                baseline: base,
                ratio,
            }
        })
        .collect();
    Ok(Comparison {
        scenario: a.scenario.clone(),
        strategy: a.strategy.clone(),
        baseline: baseline.strategy.clone(),
        ratios,
    })
}

pub fn export_comparison_csv(comparisons: &[Comparison]) -> String {
    let mut out = format!("{COMPARISON_SCHEMA}\n");
    let mut rows = vec![[
        "scenario",
        "strategy",
        "baseline",
        "metric",
        "value",
        "baseline_value",
        "ratio",
    ]
    .map(String::from)
    .to_vec()];
    for c in comparisons {
        for r in &c.ratios {
            rows.push(vec![
                c.scenario.clone(),
                c.strategy.clone(),
                c.baseline.clone(),
                r.metric.to_string(),
                real(r.value),
                real(r.baseline),
                real(r.ratio),
            ]);
        }
    }
    write_rows(&mut out, rows);
    out
}
