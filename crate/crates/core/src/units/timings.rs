use serde::{Deserialize, Serialize};

/// Per-unit latencies in cycles. Loaded from the `[timings]` table of a run
/// configuration; every field has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnitTimings {
    /// Adder/comparator tree levels resolved per pipeline stage.
    pub reduction_levels_per_stage: u32,
    pub elementwise_latency: u64,
    pub fp_exp_latency: u64,
    pub fp_recip_latency: u64,
    pub topk_per_element: u64,
    pub scalar_latency: u64,
    pub branch_latency: u64,
    /// Fixed cost of an FP SRAM → Vector SRAM transfer.
    pub sram_transfer_latency: u64,
}

impl Default for UnitTimings {
    fn default() -> Self {
        Self {
            reduction_levels_per_stage: 1,
            elementwise_latency: 4,
            fp_exp_latency: 4,
            fp_recip_latency: 4,
            topk_per_element: 1,
            scalar_latency: 1,
            branch_latency: 1,
            sram_transfer_latency: 2,
        }
    }
}

impl UnitTimings {
    /// Pipeline depth of a `vlen`-lane reduction tree: one stage per
    /// `reduction_levels_per_stage` tree levels plus one output stage.
    pub fn reduction_latency(&self, vlen: usize) -> u64 {
        let levels = (vlen.max(1) as f64).log2().ceil() as u64;
        let per_stage = self.reduction_levels_per_stage.max(1) as u64;
        levels.div_ceil(per_stage) + 1
    }

    /// Issue plus fill for one reduction over at most `vlen` lanes.
    pub fn reduction_cost(&self, vlen: usize) -> u64 {
        self.reduction_latency(vlen) + 1
    }

    pub fn elementwise_cost(&self) -> u64 {
        self.elementwise_latency + 1
    }

    /// Streaming insertion consumes one element per `topk_per_element` cycles.
    pub fn topk_cost(&self, n: usize) -> u64 {
        n as u64 * self.topk_per_element + 1
    }

    pub fn transfer_cost(&self, n: usize, vlen: usize) -> u64 {
        self.sram_transfer_latency + n.div_ceil(vlen.max(1)) as u64
    }

    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("elementwise_latency", self.elementwise_latency),
            ("fp_exp_latency", self.fp_exp_latency),
            ("fp_recip_latency", self.fp_recip_latency),
            ("topk_per_element", self.topk_per_element),
            ("scalar_latency", self.scalar_latency),
            ("branch_latency", self.branch_latency),
            ("sram_transfer_latency", self.sram_transfer_latency),
            (
                "reduction_levels_per_stage",
                self.reduction_levels_per_stage as u64,
            ),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(format!("timing `{name}` must be positive")),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_reduction_latency_is_log_depth_plus_one() {
        let t = UnitTimings::default();
        assert_eq!(t.reduction_latency(64), 7);
        assert_eq!(t.reduction_latency(2048), 12);
        assert_eq!(t.reduction_latency(100), 8);
        assert_eq!(t.reduction_latency(1), 1);
    }

    #[test]
    fn grouped_levels() {
        let t = UnitTimings {
            reduction_levels_per_stage: 6,
            ..Default::default()
        };
        assert_eq!(t.reduction_latency(2048), 3);
        assert_eq!(t.reduction_latency(64), 2);
    }

    #[test]
    fn elementwise_is_latency_plus_one() {
        assert_eq!(UnitTimings::default().elementwise_cost(), 5);
    }

    #[test]
    fn zero_latency_rejected() {
        let t = UnitTimings {
            scalar_latency: 0,
            ..Default::default()
        };
        assert!(t.validate().is_err());
    }
}
