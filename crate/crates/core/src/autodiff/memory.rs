use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Running account of activation scalars retained for the backward pass.
///
/// Charges are attributed to an owner: a top-level graph node, or the
/// pseudo-owner for graph inputs. Transient forward values that the tape
/// does not retain are never charged.
#[derive(Debug, Clone, Default)]
pub struct Meter {
    current: usize,
    peak: usize,
    owners: Vec<String>,
    by_owner: Vec<usize>,
    at_peak: Vec<usize>,
    pub(crate) recomputes: usize,
}

pub(crate) const INPUT_OWNER: &str = "<inputs>";

impl Meter {
    pub(crate) fn register_owners(&mut self, names: impl Iterator<Item = String>) {
        if !self.owners.is_empty() {
            return;
        }
        self.owners = names.collect();
        self.owners.push(INPUT_OWNER.into());
        self.by_owner = vec![0; self.owners.len()];
        self.at_peak = vec![0; self.owners.len()];
    }

    pub(crate) fn input_owner(&self) -> usize {
        self.owners.len().saturating_sub(1)
    }

    pub(crate) fn charge(&mut self, owner: usize, n: usize) {
        self.current += n;
        if let Some(o) = self.by_owner.get_mut(owner) {
            *o += n;
        }
        if self.current > self.peak {
            self.peak = self.current;
            self.at_peak.clone_from(&self.by_owner);
        }
    }

    pub(crate) fn release(&mut self, owner: usize, n: usize) {
        debug_assert!(self.current >= n, "meter underflow");
        self.current -= n;
        if let Some(o) = self.by_owner.get_mut(owner) {
            *o -= n;
        }
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn peak(&self) -> usize {
        self.peak
    }

    pub fn recomputes(&self) -> usize {
        self.recomputes
    }

    pub fn report(&self, bytes_per_element: usize) -> MemoryReport {
        MemoryReport {
            peak_stored_scalars: self.peak,
            peak_bytes: self.peak * bytes_per_element,
            bytes_per_element,
            per_layer: self
                .owners
                .iter()
                .zip(&self.at_peak)
                .filter(|(_, &n)| n > 0)
                .map(|(name, &n)| (name.clone(), n))
                .collect(),
            recompute_count: self.recomputes,
        }
    }
}

/// Peak activation storage of one forward+backward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryReport {
    pub peak_stored_scalars: usize,
    pub peak_bytes: usize,
    pub bytes_per_element: usize,
    /// Stored scalars per top-level node at the moment of the peak.
    pub per_layer: Vec<(String, usize)>,
    /// Extra forward evaluations performed during backward.
    pub recompute_count: usize,
}

impl fmt::Display for MemoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "peak_stored_scalars {}", self.peak_stored_scalars)?;
        writeln!(f, "peak_bytes {}", self.peak_bytes)?;
        writeln!(f, "recompute_count {}", self.recompute_count)?;
        for (name, n) in &self.per_layer {
            writeln!(f, "layer {name} {n}")?;
        }
        Ok(())
    }
}
