//! Profile data model, derived metrics, series merging and multi-profile
//! statistics. Everything in here is pure computation over immutable values.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Newest profile schema this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;

/// Shortest allowed sampling period in seconds (10 samples per second).
pub const MIN_SAMPLE_PERIOD: f64 = 0.1;

/// Sampling period used when nothing else is configured.
pub const DEFAULT_SAMPLE_PERIOD: f64 = 1.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("elapsed time must be positive to compute a rate (got {0} s)")]
    NonPositiveElapsed(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no profiles given")]
    NoProfiles,
    #[error("profile key mismatch: expected {expected}, found {found}")]
    KeyMismatch { expected: String, found: String },
}

/// Free-form `key=value` annotations that tell apart runs of one command line.
pub type Tags = BTreeMap<String, String>;

/// Parses a `key=value` tag.
pub fn parse_tag(s: &str) -> Result<(String, String), ModelError> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(ModelError::InvalidArgument(format!("tag {s:?} is not of the form key=value"))),
    }
}

/// Collapses runs of whitespace and trims; argument order is kept.
pub fn normalize_command(command: &str) -> String {
    command.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Search index of a stored profile: normalized command line plus tag set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProfileKey {
    pub command: String,
    pub tags: Tags,
}

impl ProfileKey {
    pub fn new(command: &str, tags: Tags) -> Self {
        ProfileKey { command: normalize_command(command), tags }
    }
}

impl fmt::Display for ProfileKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.command)?;
        for (k, v) in &self.tags {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemInfo {
    pub core_count: u32,
    /// Hz.
    pub max_cpu_freq: u64,
    /// Bytes.
    pub total_memory: u64,
    pub host_id: String,
    pub os_id: String,
}

/// Per-sample quality markers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleFlags(u8);

impl SampleFlags {
    /// Counter values were extrapolated from a time-multiplexed counter.
    pub const SCALED: SampleFlags = SampleFlags(1);
    /// The source could not be read; quantities are zero.
    pub const GAP: SampleFlags = SampleFlags(2);
    /// A negative delta (counter wrap, restart) was clamped to zero.
    pub const CLAMPED: SampleFlags = SampleFlags(4);

    pub const fn empty() -> Self {
        SampleFlags(0)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn from_bits(bits: u8) -> Self {
        SampleFlags(bits)
    }

    pub fn contains(self, other: SampleFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: SampleFlags) {
        self.0 |= other.0;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "CpuRow", into = "CpuRow")]
pub struct CpuSample {
    pub t: f64,
    pub instructions: u64,
    pub cycles_used: u64,
    pub cycles_stalled_frontend: u64,
    pub cycles_stalled_backend: u64,
    pub flags: SampleFlags,
}

#[derive(Serialize, Deserialize)]
struct CpuRow(f64, u64, u64, u64, u64, u8);

impl From<CpuRow> for CpuSample {
    fn from(r: CpuRow) -> Self {
        CpuSample {
            t: r.0,
            instructions: r.1,
            cycles_used: r.2,
            cycles_stalled_frontend: r.3,
            cycles_stalled_backend: r.4,
            flags: SampleFlags(r.5),
        }
    }
}

impl From<CpuSample> for CpuRow {
    fn from(s: CpuSample) -> Self {
        CpuRow(s.t, s.instructions, s.cycles_used, s.cycles_stalled_frontend, s.cycles_stalled_backend, s.flags.0)
    }
}

/// `rss` and `peak` are absolute; `allocated`/`freed` are per-sample deltas
/// reconstructed from consecutive RSS readings.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "MemRow", into = "MemRow")]
pub struct MemSample {
    pub t: f64,
    pub rss: u64,
    pub peak: u64,
    pub allocated: u64,
    pub freed: u64,
    pub flags: SampleFlags,
}

#[derive(Serialize, Deserialize)]
struct MemRow(f64, u64, u64, u64, u64, u8);

impl From<MemRow> for MemSample {
    fn from(r: MemRow) -> Self {
        MemSample { t: r.0, rss: r.1, peak: r.2, allocated: r.3, freed: r.4, flags: SampleFlags(r.5) }
    }
}

impl From<MemSample> for MemRow {
    fn from(s: MemSample) -> Self {
        MemRow(s.t, s.rss, s.peak, s.allocated, s.freed, s.flags.0)
    }
}

impl MemSample {
    /// Builds a sample from an RSS reading, deriving allocated/freed from the
    /// previous reading (`max(0, ΔRSS)` and `max(0, -ΔRSS)`).
    pub fn from_rss(t: f64, rss: u64, peak: u64, prev_rss: u64) -> Self {
        MemSample {
            t,
            rss,
            peak: peak.max(rss),
            allocated: rss.saturating_sub(prev_rss),
            freed: prev_rss.saturating_sub(rss),
            flags: SampleFlags::empty(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "StorageRow", into = "StorageRow")]
pub struct StorageSample {
    pub t: f64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub flags: SampleFlags,
}

#[derive(Serialize, Deserialize)]
struct StorageRow(f64, u64, u64, u8);

impl From<StorageRow> for StorageSample {
    fn from(r: StorageRow) -> Self {
        StorageSample { t: r.0, bytes_read: r.1, bytes_written: r.2, flags: SampleFlags(r.3) }
    }
}

impl From<StorageSample> for StorageRow {
    fn from(s: StorageSample) -> Self {
        StorageRow(s.t, s.bytes_read, s.bytes_written, s.flags.0)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Series {
    pub cpu: Vec<CpuSample>,
    pub mem: Vec<MemSample>,
    pub storage: Vec<StorageSample>,
}

impl Series {
    pub fn sample_count(&self) -> usize {
        self.cpu.len() + self.mem.len() + self.storage.len()
    }
}

/// Integrated totals. Delta metrics are exact integer sums; `rss_max` and
/// `peak` are series maxima.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub cycles_used: u64,
    pub instructions: u64,
    pub cycles_stalled_frontend: u64,
    pub cycles_stalled_backend: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub mem_allocated: u64,
    pub mem_freed: u64,
    pub rss_max: u64,
    pub peak: u64,
}

impl Totals {
    /// Metric names in a fixed order, paired with their values.
    pub fn metrics(&self) -> [(&'static str, u64); 10] {
        [
            ("cycles_used", self.cycles_used),
            ("instructions", self.instructions),
            ("cycles_stalled_frontend", self.cycles_stalled_frontend),
            ("cycles_stalled_backend", self.cycles_stalled_backend),
            ("bytes_read", self.bytes_read),
            ("bytes_written", self.bytes_written),
            ("mem_allocated", self.mem_allocated),
            ("mem_freed", self.mem_freed),
            ("rss_max", self.rss_max),
            ("peak", self.peak),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CounterSource {
    Hardware,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DerivedMetrics {
    pub efficiency: f64,
    /// Set when no cycles of any kind were recorded and efficiency is 0/0.
    #[serde(default)]
    pub efficiency_degenerate: bool,
    pub utilization: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flops: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flop_rate: Option<f64>,
}

/// Process accounting collected when the child was reaped.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExitInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal: Option<i32>,
    pub user_time: f64,
    pub system_time: f64,
    /// Bytes.
    pub max_rss: u64,
}

impl ExitInfo {
    pub fn success(&self) -> bool {
        self.code == Some(0) && self.signal.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub schema_version: u32,
    pub command: String,
    #[serde(default)]
    pub tags: Tags,
    pub system: SystemInfo,
    pub sample_period: f64,
    /// Seconds since the Unix epoch.
    pub start_time: f64,
    /// Wall-clock execution time of the profiled process.
    pub runtime: f64,
    pub counter_source: CounterSource,
    #[serde(default)]
    pub exit: ExitInfo,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub series: Series,
    pub totals: Totals,
    pub derived: DerivedMetrics,
}

impl Profile {
    /// An empty profile with totals and derived metrics already consistent.
    pub fn new(command: &str, tags: Tags, system: SystemInfo, sample_period: f64) -> Self {
        let mut p = Profile {
            schema_version: SCHEMA_VERSION,
            command: normalize_command(command),
            tags,
            system,
            sample_period,
            start_time: 0.0,
            runtime: 0.0,
            counter_source: CounterSource::Hardware,
            exit: ExitInfo::default(),
            notes: Vec::new(),
            series: Series::default(),
            totals: Totals::default(),
            derived: DerivedMetrics::default(),
        };
        p.recompute();
        p
    }

    pub fn key(&self) -> ProfileKey {
        ProfileKey::new(&self.command, self.tags.clone())
    }

    pub fn sample_count(&self) -> usize {
        self.series.sample_count()
    }

    /// Recomputes totals from the series and derived metrics from totals.
    /// FLOPs are kept if they were set, since they come from calibration.
    pub fn recompute(&mut self) {
        self.totals = integrate_totals(self);
        let eff = efficiency(
            self.totals.cycles_used,
            self.totals.cycles_stalled_frontend,
            self.totals.cycles_stalled_backend,
        );
        self.derived.efficiency = eff.value;
        self.derived.efficiency_degenerate = eff.degenerate;
        self.derived.utilization = if self.runtime > 0.0 && self.system.max_cpu_freq > 0 {
            utilization(self.totals.cycles_used, self.runtime, self.system.max_cpu_freq, 1).unwrap_or(0.0)
        } else {
            0.0
        };
        if let Some(flops) = self.derived.flops {
            self.derived.flop_rate = (self.runtime > 0.0).then(|| flops as f64 / self.runtime);
        }
    }

    /// Fills the optional FLOP metrics from a calibrated FLOPs-per-cycle ratio.
    pub fn set_flops_per_cycle(&mut self, flops_per_cycle: f64) {
        let flops = (self.totals.cycles_used as f64 * flops_per_cycle).round() as u64;
        self.derived.flops = Some(flops);
        self.derived.flop_rate = (self.runtime > 0.0).then(|| flops as f64 / self.runtime);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Efficiency {
    pub value: f64,
    pub degenerate: bool,
}

/// `cycles_used / (cycles_used + stalled_frontend + stalled_backend)`.
///
/// Frontend and backend stalls may overlap, so stalled cycles can be counted
/// twice; the formula is applied as is. All-zero input yields 0.0 with the
/// degenerate flag set.
pub fn efficiency(cycles_used: u64, stalled_frontend: u64, stalled_backend: u64) -> Efficiency {
    let spent = cycles_used as u128 + stalled_frontend as u128 + stalled_backend as u128;
    if spent == 0 {
        return Efficiency { value: 0.0, degenerate: true };
    }
    Efficiency { value: cycles_used as f64 / spent as f64, degenerate: false }
}

/// `cycles_used / (max_freq * elapsed * cores_assumed)`, deliberately not
/// clamped to 1.
pub fn utilization(cycles_used: u64, elapsed: f64, max_freq: u64, cores_assumed: u32) -> Result<f64, ModelError> {
    if !(elapsed > 0.0) {
        return Err(ModelError::NonPositiveElapsed(elapsed));
    }
    if max_freq == 0 {
        return Err(ModelError::InvalidArgument("max_freq must be positive".into()));
    }
    if cores_assumed == 0 {
        return Err(ModelError::InvalidArgument("cores_assumed must be at least 1".into()));
    }
    let cycles_max = max_freq as f64 * elapsed * cores_assumed as f64;
    Ok(cycles_used as f64 / cycles_max)
}

/// All resource deltas that fall into one global sampling slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MergedSample {
    pub index: u64,
    pub cycles_used: u64,
    pub instructions: u64,
    pub mem_allocated: u64,
    pub mem_freed: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
}

impl MergedSample {
    pub fn is_idle(&self) -> bool {
        self.cycles_used == 0
            && self.mem_allocated == 0
            && self.mem_freed == 0
            && self.bytes_read == 0
            && self.bytes_written == 0
    }
}

fn to_nanos(seconds: f64) -> u64 {
    if seconds <= 0.0 {
        0
    } else {
        (seconds * 1e9).round() as u64
    }
}

/// Slot of a timestamp: `floor(t / period)`, evaluated on nanosecond integers
/// so that e.g. 0.3 s at a 0.1 s period lands in slot 3.
pub fn slot_of(t: f64, sample_period: f64) -> u64 {
    let period = to_nanos(sample_period).max(1);
    to_nanos(t) / period
}

/// Bins every watcher sample into slot `floor(t / sample_period)` and emits
/// one [`MergedSample`] per slot from 0 to the last occupied slot. Empty slots
/// are kept as all-zero entries since they carry ordering information.
pub fn merge_series(profile: &Profile) -> Vec<MergedSample> {
    let period = profile.sample_period;
    let s = &profile.series;
    let last = s
        .cpu
        .iter()
        .map(|x| x.t)
        .chain(s.mem.iter().map(|x| x.t))
        .chain(s.storage.iter().map(|x| x.t))
        .map(|t| slot_of(t, period))
        .max();
    let Some(last) = last else {
        return Vec::new();
    };
    let mut out: Vec<MergedSample> = (0..=last).map(|index| MergedSample { index, ..Default::default() }).collect();
    for c in &s.cpu {
        let m = &mut out[slot_of(c.t, period) as usize];
        m.cycles_used += c.cycles_used;
        m.instructions += c.instructions;
    }
    for x in &s.mem {
        let m = &mut out[slot_of(x.t, period) as usize];
        m.mem_allocated += x.allocated;
        m.mem_freed += x.freed;
    }
    for x in &s.storage {
        let m = &mut out[slot_of(x.t, period) as usize];
        m.bytes_read += x.bytes_read;
        m.bytes_written += x.bytes_written;
    }
    out
}

pub fn integrate_totals(profile: &Profile) -> Totals {
    let s = &profile.series;
    let mut t = Totals::default();
    for c in &s.cpu {
        t.cycles_used += c.cycles_used;
        t.instructions += c.instructions;
        t.cycles_stalled_frontend += c.cycles_stalled_frontend;
        t.cycles_stalled_backend += c.cycles_stalled_backend;
    }
    for m in &s.mem {
        t.mem_allocated += m.allocated;
        t.mem_freed += m.freed;
        t.rss_max = t.rss_max.max(m.rss);
        t.peak = t.peak.max(m.peak);
    }
    for x in &s.storage {
        t.bytes_read += x.bytes_read;
        t.bytes_written += x.bytes_written;
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileStats {
    pub key: ProfileKey,
    pub n: usize,
    /// `runtime` followed by every total, in [`Totals::metrics`] order.
    pub metrics: Vec<MetricStats>,
}

impl ProfileStats {
    pub fn get(&self, metric: &str) -> Option<&MetricStats> {
        self.metrics.iter().find(|m| m.metric == metric)
    }
}

/// Two-pass mean and sample standard deviation (n - 1 denominator).
fn describe(metric: &str, values: &[f64]) -> MetricStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // Rounding can push the mean a hair outside [min, max] for equal values.
    MetricStats { metric: metric.to_string(), mean: mean.clamp(min, max), std, min, max }
}

/// Per-metric statistics over repeated profiles of one (command, tags) key.
pub fn aggregate_stats(profiles: &[Profile]) -> Result<ProfileStats, ModelError> {
    let first = profiles.first().ok_or(ModelError::NoProfiles)?;
    let key = first.key();
    if let Some(other) = profiles.iter().map(Profile::key).find(|k| *k != key) {
        return Err(ModelError::KeyMismatch { expected: key.to_string(), found: other.to_string() });
    }
    let mut metrics = Vec::new();
    let runtimes: Vec<f64> = profiles.iter().map(|p| p.runtime).collect();
    metrics.push(describe("runtime", &runtimes));
    for (i, (name, _)) in first.totals.metrics().iter().enumerate() {
        let values: Vec<f64> = profiles.iter().map(|p| p.totals.metrics()[i].1 as f64).collect();
        metrics.push(describe(name, &values));
    }
    Ok(ProfileStats { key, n: profiles.len(), metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys() -> SystemInfo {
        SystemInfo {
            core_count: 1,
            max_cpu_freq: 2_000_000_000,
            total_memory: 1 << 30,
            host_id: "h".into(),
            os_id: "linux".into(),
        }
    }

    fn cpu(t: f64, cycles: u64) -> CpuSample {
        CpuSample { t, cycles_used: cycles, ..Default::default() }
    }

    fn storage(t: f64, read: u64, written: u64) -> StorageSample {
        StorageSample { t, bytes_read: read, bytes_written: written, flags: SampleFlags::empty() }
    }

    #[test]
    fn efficiency_examples() {
        assert_eq!(efficiency(100, 0, 0).value, 1.0);
        assert_eq!(efficiency(0, 50, 50).value, 0.0);
        assert!(!efficiency(0, 50, 50).degenerate);
        assert_eq!(efficiency(300, 50, 150).value, 0.6);
        let e = efficiency(0, 0, 0);
        assert_eq!(e.value, 0.0);
        assert!(e.degenerate);
    }

    #[test]
    fn utilization_examples() {
        assert_eq!(utilization(1_000_000_000, 1.0, 2_000_000_000, 1).unwrap(), 0.5);
        assert_eq!(utilization(2_000_000_000, 1.0, 2_000_000_000, 1).unwrap(), 1.0);
        assert_eq!(utilization(4_000_000_000, 1.0, 2_000_000_000, 1).unwrap(), 2.0);
        assert_eq!(utilization(1, 0.0, 2_000_000_000, 1), Err(ModelError::NonPositiveElapsed(0.0)));
        assert!(utilization(1, 1.0, 0, 1).is_err());
        assert!(utilization(1, 1.0, 1, 0).is_err());
    }

    #[test]
    fn merge_colocated_samples_share_a_slot() {
        let mut p = Profile::new("x", Tags::new(), sys(), 0.1);
        p.series.cpu.push(cpu(0.1, 5_000_000));
        p.series.storage.push(storage(0.1, 1 << 20, 0));
        let m = merge_series(&p);
        assert_eq!(m.len(), 2);
        assert!(m[0].is_idle());
        assert_eq!(m[1].index, 1);
        assert_eq!(m[1].cycles_used, 5_000_000);
        assert_eq!(m[1].bytes_read, 1 << 20);
    }

    #[test]
    fn merge_slot_arithmetic() {
        let mut p = Profile::new("x", Tags::new(), sys(), 0.1);
        p.series.cpu.extend([cpu(0.1, 11), cpu(0.2, 22)]);
        p.series.storage.push(storage(0.2, 33, 0));
        let m = merge_series(&p);
        assert_eq!(m.iter().map(|s| s.index).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!((m[1].cycles_used, m[1].bytes_read), (11, 0));
        assert_eq!((m[2].cycles_used, m[2].bytes_read), (22, 33));
    }

    #[test]
    fn merge_drifting_watchers() {
        let mut p = Profile::new("x", Tags::new(), sys(), 0.1);
        p.series.cpu.push(cpu(0.101, 7));
        p.series.storage.push(storage(0.099, 0, 9));
        let m = merge_series(&p);
        assert_eq!(m[0].bytes_written, 9);
        assert_eq!(m[1].cycles_used, 7);
    }

    #[test]
    fn slot_boundaries_are_exact_in_decimal() {
        assert_eq!(slot_of(0.3, 0.1), 3);
        assert_eq!(slot_of(0.7, 0.1), 7);
        assert_eq!(slot_of(0.0999, 0.1), 0);
        assert_eq!(slot_of(2.0, 1.0), 2);
    }

    #[test]
    fn merge_empty_profile() {
        let p = Profile::new("x", Tags::new(), sys(), 1.0);
        assert!(merge_series(&p).is_empty());
    }

    #[test]
    fn totals_examples() {
        let mut p = Profile::new("x", Tags::new(), sys(), 1.0);
        assert_eq!(integrate_totals(&p), Totals::default());
        p.series.cpu.extend([cpu(0.0, 10), cpu(1.0, 20), cpu(2.0, 30)]);
        const MIB: u64 = 1 << 20;
        let (mut prev, mut peak) = (0, 0);
        for (i, rss) in [100 * MIB, 180 * MIB, 120 * MIB].into_iter().enumerate() {
            peak = peak.max(rss);
            p.series.mem.push(MemSample::from_rss(i as f64, rss, peak, prev));
            prev = rss;
        }
        let t = integrate_totals(&p);
        assert_eq!(t.cycles_used, 60);
        assert_eq!(t.rss_max, 180 * MIB);
        assert_eq!(t.mem_allocated, 180 * MIB);
        assert_eq!(t.mem_freed, 60 * MIB);
    }

    #[test]
    fn derived_allocated_and_freed() {
        let s = MemSample::from_rss(1.0, 50, 80, 70);
        assert_eq!((s.allocated, s.freed, s.peak), (0, 20, 80));
        let s = MemSample::from_rss(1.0, 90, 80, 70);
        assert_eq!((s.allocated, s.freed, s.peak), (20, 0, 90));
    }

    fn with_runtime(rt: f64) -> Profile {
        let mut p = Profile::new("./app  --x", Tags::new(), sys(), 1.0);
        p.runtime = rt;
        p.recompute();
        p
    }

    #[test]
    fn stats_textbook() {
        let ps: Vec<_> = [10.0, 12.0, 14.0].into_iter().map(with_runtime).collect();
        let s = aggregate_stats(&ps).unwrap();
        let rt = s.get("runtime").unwrap();
        assert_eq!(s.n, 3);
        assert_eq!(rt.mean, 12.0);
        assert_eq!(rt.std, 2.0);
        assert_eq!((rt.min, rt.max), (10.0, 14.0));

        let single = aggregate_stats(&ps[..1]).unwrap();
        assert!(single.metrics.iter().all(|m| m.std == 0.0));
    }

    #[test]
    fn stats_errors() {
        assert_eq!(aggregate_stats(&[]), Err(ModelError::NoProfiles));
        let a = with_runtime(1.0);
        let mut b = with_runtime(1.0);
        b.tags.insert("steps".into(), "10".into());
        assert!(matches!(aggregate_stats(&[a, b]), Err(ModelError::KeyMismatch { .. })));
    }

    #[test]
    fn command_normalization() {
        assert_eq!(normalize_command("  ./spin   5\t x "), "./spin 5 x");
        assert_eq!(ProfileKey::new("a  b", Tags::new()), ProfileKey::new("a b", Tags::new()));
        assert_eq!(parse_tag("steps=1e4").unwrap(), ("steps".into(), "1e4".into()));
        assert!(parse_tag("novalue").is_err());
        assert!(parse_tag("=v").is_err());
    }

    #[test]
    fn recompute_marks_degenerate_efficiency() {
        let p = with_runtime(1.0);
        assert!(p.derived.efficiency_degenerate);
        assert_eq!(p.derived.utilization, 0.0);
        assert_eq!(p.derived.flops, None);
    }
}
