//! Timed take-off schedules produced by the schedulers.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scenario::Scenario;

/// One take-off: the final service grant of a request on a pad.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TakeoffSlot {
    pub request_id: u32,
    pub class_id: u32,
    /// Pad index within the class's pad pool.
    pub pad: u32,
    /// Start of the take-off grant, seconds.
    pub start: u64,
    /// End of the granted service, seconds.
    pub service_end: u64,
}

/// Ordered assignment of take-offs to pads and times; slot `i` belongs to
/// `scenario.requests[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Schedule {
    pub slots: Vec<TakeoffSlot>,
}

impl Schedule {
    /// Stable content digest for triplet records.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.slots {
            h.update(s.request_id.to_le_bytes());
            h.update(s.class_id.to_le_bytes());
            h.update(s.pad.to_le_bytes());
            h.update(s.start.to_le_bytes());
            h.update(s.service_end.to_le_bytes());
        }
        let out = h.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Checks that no pad serves two grants whose intervals overlap or sit
    /// closer than the class separation. Slots count as grants here.
    pub fn respects_pad_exclusivity(&self, scenario: &Scenario) -> bool {
        let mut by_pad: std::collections::HashMap<(u32, u32), Vec<(u64, u64)>> =
            std::collections::HashMap::new();
        for s in &self.slots {
            by_pad
                .entry((s.class_id, s.pad))
                .or_default()
                .push((s.start, s.service_end));
        }
        for ((class_id, _), grants) in by_pad.iter_mut() {
            let sep = scenario
                .class(*class_id)
                .map(|c| c.separation)
                .unwrap_or(0);
            grants.sort_unstable();
            for w in grants.windows(2) {
                if w[0].1 + sep > w[1].0 {
                    return false;
                }
            }
        }
        true
    }
}
