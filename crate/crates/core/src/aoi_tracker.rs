//! Per-sensor age of information, peak records and block maxima.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AoiError {
    #[error("update interval must be non-negative, got {0}")]
    NegativeInterval(f64),
    #[error("query time {now} precedes the last update at {last}")]
    TimeReversal { last: f64, now: f64 },
    #[error("block size must be at least 1")]
    BlockSize,
}

/// Age just before a successful delivery reset it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakRecord {
    /// Peak age b_m in seconds.
    pub value: f64,
    /// 1-based index m of the successful delivery.
    pub index: u64,
    /// Wall-clock time t_n of the delivery.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AoiState {
    /// Age tau(t_n) at the last transmission instant, seconds.
    pub age: f64,
    /// Number of successful deliveries so far.
    pub success_count: u64,
    pub peaks: Vec<PeakRecord>,
}

impl AoiState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Applies one transmission interval of length `interval` ending at
    /// `wall_time`. The age resets only when this sensor was scheduled, the
    /// packet decoded and the power was positive.
    pub fn advance(
        &mut self,
        interval: f64,
        scheduled: bool,
        decoded: bool,
        power_positive: bool,
        wall_time: f64,
    ) -> Result<Option<PeakRecord>, AoiError> {
        if !(interval >= 0.0) {
            return Err(AoiError::NegativeInterval(interval));
        }
        let aged = self.age + interval;
        if scheduled && decoded && power_positive {
            self.age = 0.0;
            self.success_count += 1;
            let record = PeakRecord {
                value: aged,
                index: self.success_count,
                wall_time,
            };
            self.peaks.push(record);
            Ok(Some(record))
        } else {
            self.age = aged;
            Ok(None)
        }
    }

    pub fn peak_values(&self) -> Vec<f64> {
        self.peaks.iter().map(|p| p.value).collect()
    }

    /// Drops recorded peaks but keeps the current age and the success count.
    pub fn clear_peaks(&mut self) {
        self.peaks.clear();
    }
}

/// Age at continuous time `now` given the age at the last update instant.
pub fn instantaneous_age(
    age_at_update: f64,
    last_update_time: f64,
    now: f64,
) -> Result<f64, AoiError> {
    if now < last_update_time {
        return Err(AoiError::TimeReversal {
            last: last_update_time,
            now,
        });
    }
    Ok(age_at_update + (now - last_update_time))
}

/// Maxima of consecutive disjoint blocks of `block_size` values. A trailing
/// partial block is dropped.
pub fn block_maxima(values: &[f64], block_size: usize) -> Result<Vec<f64>, AoiError> {
    if block_size == 0 {
        return Err(AoiError::BlockSize);
    }
    Ok(values
        .chunks_exact(block_size)
        .map(|block| block.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// Writes `sensor,m,t_n,b_m` rows for every recorded peak.
pub fn write_peaks_csv<W: Write>(out: W, sensors: &[AoiState]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sensor", "m", "t_n", "b_m"])?;
    for (k, state) in sensors.iter().enumerate() {
        for p in &state.peaks {
            w.write_record(&[
                (k + 1).to_string(),
                p.index.to_string(),
                p.wall_time.to_string(),
                p.value.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
