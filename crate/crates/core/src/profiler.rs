//! Per-allocation compressibility histograms and target-ratio selection
//! under a buddy threshold.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{size_class, Block128, SizeClass, BLOCK_BYTES};
use crate::error::{Error, Result};
use crate::memory::{Snapshot, TargetRatio, Targets};

pub const DEFAULT_BUDDY_THRESHOLD: f64 = 0.30;
pub const DEFAULT_CARVEOUT_CAP: f64 = 4.0;

/// Size-class counts over every (entry, snapshot) sample of one allocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressibilityHistogram {
    pub alloc_id: u64,
    /// Largest entry count seen for this allocation; used as its footprint.
    pub entries: usize,
    pub snapshots_seen: usize,
    /// Indexed by [`SizeClass::index`].
    pub counts: [u64; 6],
    pub sample_count: u64,
}

impl CompressibilityHistogram {
    pub fn new(alloc_id: u64) -> Self {
        Self {
            alloc_id,
            entries: 0,
            snapshots_seen: 0,
            counts: [0; 6],
            sample_count: 0,
        }
    }

    pub fn count(&self, class: SizeClass) -> u64 {
        self.counts[class.index()]
    }

    /// Adds one snapshot's worth of samples.
    pub fn add_snapshot(&mut self, classes: impl IntoIterator<Item = SizeClass>) {
        let mut n = 0;
        for c in classes {
            self.counts[c.index()] += 1;
            n += 1;
        }
        self.sample_count += n as u64;
        self.entries = self.entries.max(n);
        self.snapshots_seen += 1;
    }

    /// Samples that would touch buddy memory under `candidate`.
    pub fn overflow_count(&self, candidate: TargetRatio) -> u64 {
        SizeClass::ALL
            .iter()
            .filter(|&&c| {
                if candidate.is_zero_mode() {
                    !c.fits_8b()
                } else {
                    c.sectors() > candidate.device_sectors()
                }
            })
            .map(|&c| self.count(c))
            .sum()
    }
}

pub fn build_histograms(snapshots: &[Snapshot]) -> Result<Vec<CompressibilityHistogram>> {
    if snapshots.is_empty() {
        return Err(Error::Config("cannot profile an empty snapshot series".into()));
    }
    let jobs: Vec<(usize, usize)> = snapshots
        .iter()
        .enumerate()
        .flat_map(|(s, snap)| (0..snap.allocations.len()).map(move |a| (s, a)))
        .collect();
    let per_job: Vec<Vec<SizeClass>> = jobs
        .par_iter()
        .map(|&(s, a)| {
            snapshots[s].allocations[a]
                .data
                .par_chunks_exact(BLOCK_BYTES)
                .map(|c| size_class(&Block128::from_bytes(c)))
                .collect()
        })
        .collect();

    let mut order = Vec::new();
    let mut hists: BTreeMap<u64, CompressibilityHistogram> = BTreeMap::new();
    for (&(s, a), classes) in jobs.iter().zip(per_job) {
        let id = snapshots[s].allocations[a].record.alloc_id;
        hists
            .entry(id)
            .or_insert_with(|| {
                order.push(id);
                CompressibilityHistogram::new(id)
            })
            .add_snapshot(classes);
    }
    Ok(order.into_iter().map(|id| hists.remove(&id).unwrap()).collect())
}

pub fn overflow_fraction(hist: &CompressibilityHistogram, candidate: TargetRatio) -> f64 {
    if hist.sample_count == 0 {
        return 0.0;
    }
    hist.overflow_count(candidate) as f64 / hist.sample_count as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdConfig {
    pub buddy_threshold: f64,
    pub zero_mode_enabled: bool,
    pub carveout_cap: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            buddy_threshold: DEFAULT_BUDDY_THRESHOLD,
            zero_mode_enabled: true,
            carveout_cap: DEFAULT_CARVEOUT_CAP,
        }
    }
}

impl ThresholdConfig {
    pub fn with_threshold(buddy_threshold: f64) -> Result<Self> {
        let cfg = Self {
            buddy_threshold,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.buddy_threshold) {
            return Err(Error::Config(format!(
                "buddy threshold {} outside [0, 1]",
                self.buddy_threshold
            )));
        }
        if self.carveout_cap.is_nan() || self.carveout_cap < 1.0 {
            return Err(Error::Config(format!("carve-out cap {} below 1", self.carveout_cap)));
        }
        Ok(())
    }
}

/// Overflow fraction at every candidate ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct OverflowTable {
    pub R1: f64,
    pub R4over3: f64,
    pub R2: f64,
    pub R4: f64,
    pub R16zero: f64,
}

impl OverflowTable {
    pub fn of(hist: &CompressibilityHistogram) -> Self {
        Self {
            R1: overflow_fraction(hist, TargetRatio::R1),
            R4over3: overflow_fraction(hist, TargetRatio::R4over3),
            R2: overflow_fraction(hist, TargetRatio::R2),
            R4: overflow_fraction(hist, TargetRatio::R4),
            R16zero: overflow_fraction(hist, TargetRatio::R16zero),
        }
    }

    pub fn get(&self, t: TargetRatio) -> f64 {
        match t {
            TargetRatio::R1 => self.R1,
            TargetRatio::R4over3 => self.R4over3,
            TargetRatio::R2 => self.R2,
            TargetRatio::R4 => self.R4,
            TargetRatio::R16zero => self.R16zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProfile {
    pub alloc_id: u64,
    pub target: TargetRatio,
    pub overflow: OverflowTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub ratio: f64,
    pub buddy_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub unconstrained_best_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileResult {
    pub threshold: f64,
    pub allocations: Vec<AllocationProfile>,
    pub predicted_ratio: f64,
    pub predicted_buddy_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepTable>,
}

impl ProfileResult {
    pub fn targets(&self) -> Targets {
        self.allocations.iter().map(|a| (a.alloc_id, a.target)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(format!("bad profile JSON: {e}")))
    }
}

/// Footprint-weighted capacity ratio of a target assignment.
pub fn predicted_ratio(hists: &[CompressibilityHistogram], targets: &Targets) -> f64 {
    let mut logical = 0u64;
    let mut device = 0u64;
    for h in hists {
        let t = targets.get(&h.alloc_id).copied().unwrap_or(TargetRatio::R1);
        logical += (h.entries * BLOCK_BYTES) as u64;
        device += (h.entries * t.device_bytes()) as u64;
    }
    if device == 0 {
        return 1.0;
    }
    logical as f64 / device as f64
}

/// Sample-weighted fraction of accesses that reach buddy memory.
pub fn predicted_buddy_fraction(hists: &[CompressibilityHistogram], targets: &Targets) -> f64 {
    let mut over = 0u64;
    let mut total = 0u64;
    for h in hists {
        let t = targets.get(&h.alloc_id).copied().unwrap_or(TargetRatio::R1);
        over += h.overflow_count(t);
        total += h.sample_count;
    }
    if total == 0 {
        return 0.0;
    }
    over as f64 / total as f64
}

/// Highest-ratio candidate whose overflow stays within the threshold.
fn choose_target(hist: &CompressibilityHistogram, cfg: &ThresholdConfig) -> TargetRatio {
    if cfg.zero_mode_enabled && overflow_fraction(hist, TargetRatio::R16zero) <= cfg.buddy_threshold {
        return TargetRatio::R16zero;
    }
    TargetRatio::SECTORED
        .into_iter()
        .rev()
        .find(|&t| overflow_fraction(hist, t) <= cfg.buddy_threshold)
        .unwrap_or(TargetRatio::R1)
}

/// Demotes zero-mode allocations, largest footprint first, to R4 until the
/// overall ratio fits under `cap`.
pub fn enforce_carveout_cap(targets: &Targets, hists: &[CompressibilityHistogram], cap: f64) -> Targets {
    let mut out = targets.clone();
    let mut zero: Vec<&CompressibilityHistogram> = hists
        .iter()
        .filter(|h| out.get(&h.alloc_id) == Some(&TargetRatio::R16zero))
        .collect();
    zero.sort_by(|a, b| b.entries.cmp(&a.entries).then(a.alloc_id.cmp(&b.alloc_id)));
    for h in zero {
        if predicted_ratio(hists, &out) <= cap {
            break;
        }
        out.insert(h.alloc_id, TargetRatio::R4);
    }
    out
}

pub fn select_targets(hists: &[CompressibilityHistogram], cfg: &ThresholdConfig) -> ProfileResult {
    let chosen: Targets = hists.iter().map(|h| (h.alloc_id, choose_target(h, cfg))).collect();
    let targets = enforce_carveout_cap(&chosen, hists, cfg.carveout_cap);
    ProfileResult {
        threshold: cfg.buddy_threshold,
        allocations: hists
            .iter()
            .map(|h| AllocationProfile {
                alloc_id: h.alloc_id,
                target: targets[&h.alloc_id],
                overflow: OverflowTable::of(h),
            })
            .collect(),
        predicted_ratio: predicted_ratio(hists, &targets),
        predicted_buddy_fraction: predicted_buddy_fraction(hists, &targets),
        sweep: None,
    }
}

/// One row per threshold, plus the ratio reached when the threshold never binds.
pub fn sweep_thresholds(
    hists: &[CompressibilityHistogram],
    thresholds: &[f64],
    base: &ThresholdConfig,
) -> Result<SweepTable> {
    if thresholds.is_empty() {
        return Err(Error::Config("threshold sweep needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(thresholds.len());
    for &th in thresholds {
        let cfg = ThresholdConfig {
            buddy_threshold: th,
            ..*base
        };
        cfg.validate()?;
        let r = select_targets(hists, &cfg);
        rows.push(SweepRow {
            threshold: th,
            ratio: r.predicted_ratio,
            buddy_fraction: r.predicted_buddy_fraction,
        });
    }
    let free = ThresholdConfig {
        buddy_threshold: 1.0,
        ..*base
    };
    Ok(SweepTable {
        rows,
        unconstrained_best_ratio: select_targets(hists, &free).predicted_ratio,
    })
}
