use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ConfidenceResult, Oracle, Phase, Result};
use crate::tensorops::ImageTensor;

/// Snapshot of how many underlying oracle calls were made, split by phase.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryLedger {
    pub total_queries: u64,
    pub per_phase: BTreeMap<Phase, u64>,
}

impl QueryLedger {
    pub fn count(&self, phase: Phase) -> u64 {
        self.per_phase.get(&phase).copied().unwrap_or(0)
    }
}

/// Counts every call that reaches the wrapped oracle.
pub struct Counted<O> {
    inner: O,
    counts: [AtomicU64; Phase::ALL.len()],
}

impl<O: Oracle> Counted<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            counts: Default::default(),
        }
    }

    pub fn ledger(&self) -> QueryLedger {
        let per_phase: BTreeMap<Phase, u64> = Phase::ALL
            .iter()
            .map(|&p| (p, self.counts[p.slot()].load(Ordering::Relaxed)))
            .filter(|(_, n)| *n > 0)
            .collect();
        QueryLedger {
            total_queries: per_phase.values().sum(),
            per_phase,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|c| c.load(Ordering::Relaxed)).sum()
    }

    pub fn into_inner(self) -> O {
        self.inner
    }
}

impl<O: Oracle> Oracle for Counted<O> {
    fn confidences(&self, image: &ImageTensor) -> Result<ConfidenceResult> {
        self.confidences_in_phase(image, Phase::Other)
    }

    fn confidences_in_phase(&self, image: &ImageTensor, phase: Phase) -> Result<ConfidenceResult> {
        // Counted before the call: a failed request still reached the victim.
        self.counts[phase.slot()].fetch_add(1, Ordering::Relaxed);
        self.inner.confidences_in_phase(image, phase)
    }
}

/// Content hash of the 8-bit representation a remote API would receive.
pub fn content_key(image: &ImageTensor) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update((image.height() as u64).to_le_bytes());
    hasher.update((image.width() as u64).to_le_bytes());
    hasher.update(image.to_rgb8());
    hasher.finalize().into()
}

/// Memoizes responses keyed by [`content_key`].
pub struct Cached<O> {
    inner: O,
    memo: Mutex<HashMap<[u8; 32], ConfidenceResult>>,
    hits: AtomicU64,
}

impl<O: Oracle> Cached<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            memo: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
        }
    }

    /// Number of calls answered from memory.
    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    /// Always forwards to the wrapped oracle, then records the answer so later
    /// lookups of the same content are free.
    pub fn refresh(&self, image: &ImageTensor, phase: Phase) -> Result<ConfidenceResult> {
        let result = self.inner.confidences_in_phase(image, phase)?;
        self.memo
            .lock()
            .expect("cache lock poisoned")
            .insert(content_key(image), result.clone());
        Ok(result)
    }
}

impl<O: Oracle> Oracle for Cached<O> {
    fn confidences(&self, image: &ImageTensor) -> Result<ConfidenceResult> {
        self.confidences_in_phase(image, Phase::Other)
    }

    fn confidences_in_phase(&self, image: &ImageTensor, phase: Phase) -> Result<ConfidenceResult> {
        let key = content_key(image);
        if let Some(hit) = self.memo.lock().expect("cache lock poisoned").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        let result = self.inner.confidences_in_phase(image, phase)?;
        self.memo
            .lock()
            .expect("cache lock poisoned")
            .insert(key, result.clone());
        Ok(result)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{query, SyntheticOracle, SyntheticOracleSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn oracle() -> SyntheticOracle {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        SyntheticOracle::new(SyntheticOracleSpec {
            labels: vec!["cat".into(), "dog".into()],
            height: 3,
            width: 3,
            temperature: 1.0,
            templates: (0..2).map(|_| (0..27).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        })
        .unwrap()
    }

    fn random_image(rng: &mut ChaCha8Rng) -> ImageTensor {
        ImageTensor::from_fn(3, 3, |_, _, _| rng.gen()).unwrap()
    }

    #[test]
    fn identical_queries_hit_the_cache() {
        let counted = Counted::new(oracle());
        let cached = Cached::new(&counted);
        let img = ImageTensor::filled(3, 3, 0.3).unwrap();
        let a = query(&cached, &img, "dog", Phase::Initial).unwrap();
        let b = query(&cached, &img, "dog", Phase::Baseline).unwrap();
        assert_eq!(a, b);
        assert_eq!(counted.ledger().total_queries, 1);
        assert_eq!(counted.ledger().count(Phase::Initial), 1);
        assert_eq!(cached.hits(), 1);
    }

    #[test]
    fn distinct_queries_are_all_counted() {
        let counted = Counted::new(oracle());
        let cached = Cached::new(&counted);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..25 {
            let img = ImageTensor::filled(3, 3, i as f64 / 24.0).unwrap();
            query(&cached, &img, "cat", Phase::GradientProbe).unwrap();
        }
        let _ = random_image(&mut rng);
        let ledger = counted.ledger();
        assert_eq!(ledger.total_queries, 25);
        assert_eq!(ledger.total_queries, ledger.per_phase.values().sum::<u64>());
    }

    #[test]
    fn quantization_equal_images_share_a_key() {
        let a = ImageTensor::filled(2, 2, 0.5).unwrap();
        let b = ImageTensor::filled(2, 2, 0.5 + 1e-4).unwrap();
        assert_eq!(content_key(&a), content_key(&b));
        let c = ImageTensor::filled(2, 2, 0.6).unwrap();
        assert_ne!(content_key(&a), content_key(&c));
        // Same bytes, different shape.
        let d = ImageTensor::filled(1, 4, 0.5).unwrap();
        assert_ne!(content_key(&a), content_key(&d));
    }

    #[test]
    fn refresh_always_reaches_the_oracle() {
        let counted = Counted::new(oracle());
        let cached = Cached::new(&counted);
        let img = ImageTensor::filled(3, 3, 0.1).unwrap();
        cached.refresh(&img, Phase::FitnessCheck).unwrap();
        cached.refresh(&img, Phase::FitnessCheck).unwrap();
        query(&cached, &img, "cat", Phase::Baseline).unwrap();
        assert_eq!(counted.total(), 2);
        assert_eq!(cached.hits(), 1);
    }

    #[test]
    fn counting_is_thread_safe() {
        let counted = Counted::new(oracle());
        std::thread::scope(|s| {
            for t in 0..4 {
                let counted = &counted;
                s.spawn(move || {
                    let img = ImageTensor::filled(3, 3, t as f64 / 4.0).unwrap();
                    for _ in 0..50 {
                        query(counted, &img, "cat", Phase::Other).unwrap();
                    }
                });
            }
        });
        assert_eq!(counted.total(), 200);
    }

    proptest::proptest! {
        #[test]
        fn cached_is_observationally_equivalent(seed in proptest::prelude::any::<u64>(), picks in proptest::collection::vec(0usize..5, 1..30)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pool: Vec<ImageTensor> = (0..5).map(|_| random_image(&mut rng)).collect();
            let plain = oracle();
            let cached = Cached::new(oracle());
            for i in picks {
                proptest::prop_assert_eq!(
                    plain.confidences(&pool[i]).unwrap(),
                    cached.confidences(&pool[i]).unwrap()
                );
            }
        }
    }
}
