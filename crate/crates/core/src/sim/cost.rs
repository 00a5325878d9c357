//! Bandwidth-bound slowdown estimate.
//!
//! Device traffic (data plus metadata) and interconnect traffic are assumed
//! to overlap perfectly, so the compressed run takes as long as the busier of
//! the two; the baseline streams the uncompressed bytes over device memory.
//! This is a trend model, not a timing model. The decompression latency is
//! carried for reporting only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::TrafficCounters;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModelParams {
    pub device_gbps: f64,
    pub link_gbps: f64,
    pub decompress_latency_cycles: u32,
}

impl Default for CostModelParams {
    fn default() -> Self {
        Self {
            device_gbps: 900.0,
            link_gbps: 150.0,
            decompress_latency_cycles: 11,
        }
    }
}

impl CostModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.device_gbps > 0.0 && self.link_gbps > 0.0) || !self.device_gbps.is_finite() || !self.link_gbps.is_finite() {
            return Err(Error::Config(format!(
                "bandwidths must be positive (device {}, link {})",
                self.device_gbps, self.link_gbps
            )));
        }
        Ok(())
    }
}

pub fn cost_estimate(counters: &TrafficCounters, params: &CostModelParams, baseline_logical_bytes: u64) -> Result<f64> {
    params.validate()?;
    if baseline_logical_bytes == 0 {
        return Err(Error::Config("slowdown is undefined for a zero-byte baseline".into()));
    }
    let device = (counters.device_bytes + counters.metadata_fill_bytes + counters.metadata_writeback_bytes) as f64
        / params.device_gbps;
    let link = counters.buddy_bytes as f64 / params.link_gbps;
    let baseline = baseline_logical_bytes as f64 / params.device_gbps;
    Ok(device.max(link) / baseline)
}
