//! Append-only accounting of model transfers.

use std::io::Write;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transfer {
    pub round: usize,
    pub client_id: String,
    pub direction: Direction,
    pub bytes: u64,
}

/// Record of every model exchanged between server and clients.
///
/// Uplinks are always counted. Downlinks are counted only when
/// `count_downlink` is set; otherwise `record_transfer` drops them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostLedger {
    entries: Vec<Transfer>,
    model_bytes: u64,
    count_downlink: bool,
    total: u64,
}

impl CostLedger {
    pub fn new(model_bytes: u64, count_downlink: bool) -> Self {
        Self {
            entries: Vec::new(),
            model_bytes,
            count_downlink,
            total: 0,
        }
    }

    pub fn model_bytes(&self) -> u64 {
        self.model_bytes
    }

    pub fn counts_downlink(&self) -> bool {
        self.count_downlink
    }

    /// Appends one model-sized transfer. Returns whether an entry was written.
    pub fn record_transfer(&mut self, round: usize, client_id: &str, direction: Direction) -> bool {
        if direction == Direction::Down && !self.count_downlink {
            return false;
        }
        self.entries.push(Transfer {
            round,
            client_id: client_id.to_owned(),
            direction,
            bytes: self.model_bytes,
        });
        self.total += self.model_bytes;
        true
    }

    pub fn entries(&self) -> &[Transfer] {
        &self.entries
    }

    pub fn total_bytes(&self) -> u64 {
        self.total
    }

    /// Sum over entries, independent of the running total.
    pub fn recomputed_total(&self) -> u64 {
        self.entries.iter().map(|e| e.bytes).sum()
    }

    pub fn total_cost_gb(&self) -> f64 {
        self.total as f64 / 1e9
    }

    /// Number of uplink transfers, i.e. client participations.
    pub fn uplinks(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.direction == Direction::Up)
            .count()
    }

    /// CSV with columns `round,client_id,direction,bytes`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["round", "client_id", "direction", "bytes"])?;
        for e in &self.entries {
            w.write_record([
                e.round.to_string(),
                e.client_id.clone(),
                e.direction.as_str().to_owned(),
                e.bytes.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Bytes expressed in decimal gigabytes.
pub fn bytes_to_gb(bytes: u64) -> f64 {
    bytes as f64 / 1e9
}
