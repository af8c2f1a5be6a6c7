use crate::numerics::Scalar;

/// Sorted buffer of the k largest values seen so far, modelled on a chain of
/// k comparators with shift registers.
///
/// Entries are ordered by value descending; equal values keep arrival order,
/// so with indices streamed in ascending order ties favour the lower index.
#[derive(Clone, Debug)]
pub struct TopKState<F> {
    k: usize,
    entries: Vec<(F, usize)>,
    comparisons: u64,
}

impl<F: Scalar> TopKState<F> {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            entries: Vec::with_capacity(k + 1),
            comparisons: 0,
        }
    }

    pub fn insert(&mut self, value: F, index: usize) {
        if self.k == 0 {
            return;
        }
        // Every slot compares against the incoming value in parallel; the
        // first slot holding a strictly smaller value takes it and shifts the
        // tail down by one.
        self.comparisons += self.entries.len() as u64;
        let slot = self
            .entries
            .iter()
            .position(|(v, _)| value > *v)
            .unwrap_or(self.entries.len());
        if slot < self.k {
            self.entries.insert(slot, (value, index));
            self.entries.truncate(self.k);
        }
    }

    pub fn entries(&self) -> &[(F, usize)] {
        &self.entries
    }

    /// Total slot comparisons performed so far.
    pub fn comparisons(&self) -> u64 {
        self.comparisons
    }
}

/// Transfer mask: the `k` most confident eligible positions (or every eligible
/// position when fewer than `k` exist). Ineligible positions never enter the
/// buffer.
pub fn topk_mask<F: Scalar>(confidence: &[F], eligible: &[bool], k: usize) -> Vec<bool> {
    let mut state = TopKState::new(k);
    for (i, (&c, &ok)) in confidence.iter().zip(eligible).enumerate() {
        if ok {
            state.insert(c, i);
        }
    }
    let mut mask = vec![false; confidence.len()];
    for &(_, i) in state.entries() {
        mask[i] = true;
    }
    mask
}
