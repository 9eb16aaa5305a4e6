//! Knowledge evaluation: similarity screening of incremental data and
//! maintenance of the episodic memory.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mlp::Normalizer;
use crate::policy::{Dataset, Provenance, Sample, N_FEATURES};
use crate::{Error, Result};

/// Squared Euclidean distance between the normalized inputs of two samples
/// (steer excluded). Larger means more dissimilar.
pub fn similarity(a: &Sample, b: &Sample, normalizer: &Normalizer) -> f64 {
    sq_dist(&normalize(a, normalizer), &normalize(b, normalizer))
}

fn normalize(s: &Sample, n: &Normalizer) -> [f64; N_FEATURES] {
    let f = s.features();
    let mut out = [0.0; N_FEATURES];
    for i in 0..N_FEATURES {
        out[i] = (f[i] - n.mean[i]) / n.std[i];
    }
    out
}

fn sq_dist(a: &[f64; N_FEATURES], b: &[f64; N_FEATURES]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Which quantity scores knowledge quality (lower is better).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalScore {
    /// `steer^2`.
    #[default]
    ControlEffort,
    /// `(vx * yaw_rate)^2`, a comfort-oriented alternative.
    LateralAccel,
}

impl EvalScore {
    pub fn score(self, s: &Sample) -> f64 {
        match self {
            EvalScore::ControlEffort => s.effort,
            EvalScore::LateralAccel => (s.state_feat[0] * s.state_feat[2]).powi(2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodicMemory {
    entries: Vec<Sample>,
    normalized: Vec<[f64; N_FEATURES]>,
    pub eta_m: f64,
    pub normalizer: Normalizer,
    pub capacity: Option<usize>,
    pub score: EvalScore,
}

impl EpisodicMemory {
    pub fn new(eta_m: f64, normalizer: Normalizer) -> Self {
        Self {
            entries: Vec::new(),
            normalized: Vec::new(),
            eta_m,
            normalizer,
            capacity: None,
            score: EvalScore::ControlEffort,
        }
    }

    /// Memory holding `entries` verbatim (no deduplication).
    pub fn from_entries(entries: Vec<Sample>, eta_m: f64, normalizer: Normalizer) -> Self {
        let normalized = entries.iter().map(|s| normalize(s, &normalizer)).collect();
        Self { entries, normalized, eta_m, normalizer, capacity: None, score: EvalScore::ControlEffort }
    }

    pub fn entries(&self) -> &[Sample] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends without any similarity check (plain LLL memory growth).
    pub fn push_raw(&mut self, s: Sample) {
        self.normalized.push(normalize(&s, &self.normalizer));
        self.entries.push(s);
    }

    /// Uniform random batch of at most `n` entries (without replacement).
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Sample> {
        if n >= self.entries.len() {
            return self.entries.clone();
        }
        rand::seq::index::sample(rng, self.entries.len(), n)
            .into_iter()
            .map(|i| self.entries[i])
            .collect()
    }

    /// Inserts one sample under the neighborhood rule. Returns whether the
    /// memory changed.
    ///
    /// With `S` the entries within `eta_m` of `s`: if `S` is empty, `s` is
    /// appended. Otherwise `s` enters only if it scores strictly lower than
    /// every member of `S`, in which case it takes the slot of the first
    /// member and the rest of `S` is removed; on a tie the incumbents stay.
    pub fn insert(&mut self, s: Sample) -> bool {
        let z = normalize(&s, &self.normalizer);
        let neighbors: Vec<usize> = self
            .normalized
            .iter()
            .enumerate()
            .filter(|(_, e)| sq_dist(&z, e) <= self.eta_m)
            .map(|(i, _)| i)
            .collect();
        if neighbors.is_empty() {
            if self.capacity.is_some_and(|c| self.entries.len() >= c) {
                return false;
            }
            self.entries.push(s);
            self.normalized.push(z);
            return true;
        }
        let incoming = self.score.score(&s);
        let best = neighbors
            .iter()
            .map(|&i| self.score.score(&self.entries[i]))
            .fold(f64::INFINITY, f64::min);
        if incoming >= best {
            return false;
        }
        let first = neighbors[0];
        self.entries[first] = s;
        self.normalized[first] = z;
        for &i in neighbors[1..].iter().rev() {
            self.entries.remove(i);
            self.normalized.remove(i);
        }
        true
    }

    /// Whether `s` passes incremental-data screening against this memory.
    ///
    /// Kept when no entry is closer than `eta_d`, or when among the entries
    /// within `eta_d` the sample scores no worse than every one of them.
    pub fn passes_screen(&self, s: &Sample, eta_d: f64) -> bool {
        let z = normalize(s, &self.normalizer);
        let score = self.score.score(s);
        let mut all_far = true;
        let mut any_near = false;
        let mut beats_near = true;
        for (e, ez) in self.entries.iter().zip(&self.normalized) {
            let d = sq_dist(&z, ez);
            if d < eta_d {
                all_far = false;
            }
            if d <= eta_d {
                any_near = true;
                if score > self.score.score(e) {
                    beats_near = false;
                }
            }
        }
        all_far || (any_near && beats_near)
    }
}

/// Screens incremental data against the memory, preserving input order.
pub fn screen_incremental(data: &Dataset, memory: &EpisodicMemory, eta_d: f64) -> Dataset {
    let samples = data
        .samples
        .iter()
        .filter(|s| memory.passes_screen(s, eta_d))
        .copied()
        .collect();
    Dataset::new(samples, data.provenance)
}

/// Folds screened samples into the memory in order. Returns the number of
/// samples that changed it.
pub fn update_memory(memory: &mut EpisodicMemory, screened: &Dataset) -> usize {
    screened.samples.iter().filter(|s| memory.insert(**s)).count()
}

/// Builds the initial memory from a shuffled copy of the demonstration.
pub fn init_memory<R: Rng + ?Sized>(
    demonstration: &Dataset,
    eta_m: f64,
    normalizer: Normalizer,
    rng: &mut R,
) -> Result<EpisodicMemory> {
    if demonstration.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut shuffled = demonstration.samples.clone();
    shuffled.shuffle(rng);
    let mut memory = EpisodicMemory::new(eta_m, normalizer);
    update_memory(&mut memory, &Dataset::new(shuffled, Provenance::Demonstration));
    Ok(memory)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn id() -> Normalizer {
        Normalizer::identity(N_FEATURES)
    }

    fn sample(f: [f64; 5], steer: f64) -> Sample {
        Sample::from_features(&f, steer)
    }

    #[test]
    fn similarity_basics() {
        let a = sample([0.0; 5], 0.1);
        let b = sample([3.0, 4.0, 0.0, 0.0, 0.0], 0.3);
        assert_eq!(similarity(&a, &a, &id()), 0.0);
        assert_eq!(similarity(&a, &b, &id()), 25.0);
        assert_eq!(similarity(&b, &a, &id()), 25.0);
    }

    #[test]
    fn screening_lesser_effort() {
        let f = [10.0, 0.1, 0.02, 0.3, 0.05];
        let mem = EpisodicMemory::from_entries(vec![sample(f, 0.2)], 0.05, id());
        let data = Dataset::new(vec![sample(f, 0.1), sample(f, 0.3)], Provenance::Execution(0));
        let out = screen_incremental(&data, &mem, 0.05);
        assert_eq!(out.samples, vec![sample(f, 0.1)]);
    }

    #[test]
    fn screening_empty_memory_passes_all() {
        let mem = EpisodicMemory::new(0.05, id());
        let data = Dataset::new(vec![sample([1.0; 5], 0.3), sample([2.0; 5], 0.1)], Provenance::Execution(0));
        assert_eq!(screen_incremental(&data, &mem, 0.05), data);
    }

    #[test]
    fn memory_insert_rules() {
        let mut mem = EpisodicMemory::new(0.05, id());
        assert!(mem.insert(sample([0.0; 5], 0.2)));
        // far sample extends coverage
        assert!(mem.insert(sample([1.0, 0.0, 0.0, 0.0, 0.0], 0.2)));
        assert_eq!(mem.len(), 2);
        // duplicate with higher effort: unchanged
        assert!(!mem.insert(sample([0.0; 5], 0.3)));
        // equal effort: incumbent kept
        assert!(!mem.insert(sample([0.0; 5], -0.2)));
        assert_eq!(mem.entries()[0].steer, 0.2);
        // lower effort replaces
        assert!(mem.insert(sample([0.1, 0.0, 0.0, 0.0, 0.0], 0.05)));
        assert_eq!(mem.len(), 2);
        assert_eq!(mem.entries()[0].steer, 0.05);
    }

    #[test]
    fn winner_replaces_whole_neighborhood() {
        let mut mem = EpisodicMemory::from_entries(
            vec![
                sample([0.0, 0.0, 0.0, 0.0, 0.0], 0.2),
                sample([5.0, 0.0, 0.0, 0.0, 0.0], 0.2),
                sample([0.4, 0.0, 0.0, 0.0, 0.0], 0.3),
            ],
            0.05,
            id(),
        );
        assert!(mem.insert(sample([0.2, 0.0, 0.0, 0.0, 0.0], 0.01)));
        assert_eq!(mem.len(), 2);
        assert_eq!(mem.entries()[0].steer, 0.01);
        assert_eq!(mem.entries()[1].state_feat[0], 5.0);
    }

    #[test]
    fn init_memory_dedups() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let same = Dataset::new(vec![sample([1.0; 5], 0.1); 20], Provenance::Demonstration);
        assert_eq!(init_memory(&same, 0.05, id(), &mut rng).unwrap().len(), 1);
        let distinct = Dataset::new(
            (0..20).map(|i| sample([i as f64 * 1e-3, 0.0, 0.0, 0.0, 0.0], 0.1)).collect(),
            Provenance::Demonstration,
        );
        assert_eq!(init_memory(&distinct, 0.0, id(), &mut rng).unwrap().len(), 20);
        let empty = Dataset::new(vec![], Provenance::Demonstration);
        assert!(matches!(init_memory(&empty, 0.05, id(), &mut rng), Err(Error::EmptyDataset)));
    }

    #[test]
    fn capacity_limits_growth() {
        let mut mem = EpisodicMemory::new(0.05, id());
        mem.capacity = Some(1);
        assert!(mem.insert(sample([0.0; 5], 0.2)));
        assert!(!mem.insert(sample([9.0; 5], 0.2)));
        assert!(mem.insert(sample([0.0; 5], 0.1)));
    }
}
