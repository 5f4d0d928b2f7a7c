use std::collections::HashMap;

use parking_lot::RwLock;
use rayon::prelude::*;

use super::{ParameterGrid, Result, ScanError};
use crate::models::{derive_seed, AutoregressiveModel, AxisPoint, TokenId, TokenSequence};

/// Stage-1 samples for every grid point plus a score cache.
///
/// Identical token sequences are interned: every sample refers to an entry of
/// a shared table, and each (point, sequence) pair is scored at most once.
/// The cache permits concurrent readers; writers are serialized per point.
#[derive(Debug)]
pub struct SampleStore {
    points: Vec<AxisPoint>,
    n_tokens: usize,
    seed: u64,
    point_seeds: Vec<u64>,
    samples: Vec<Vec<TokenSequence>>,
    ids: Vec<Vec<u32>>,
    unique: Vec<Vec<TokenId>>,
    scores: Vec<RwLock<HashMap<u32, f64>>>,
}

/// Draws `n_samples` continuations at every grid point, in parallel across
/// points. Point `i` uses seed `derive_seed(seed, i)`.
pub fn stage1_generate<M: AutoregressiveModel + ?Sized>(
    model: &M,
    grid: &ParameterGrid,
    n_samples: usize,
    n_tokens: usize,
    seed: u64,
) -> Result<SampleStore> {
    if n_samples == 0 {
        return Err(ScanError::InvalidSettings("n_samples must be at least 1".into()));
    }
    let points = grid.points().to_vec();
    let point_seeds: Vec<u64> = (0..points.len()).map(|i| derive_seed(seed, i as u64)).collect();
    let samples = points
        .par_iter()
        .zip(point_seeds.par_iter())
        .map(|(p, &s)| {
            model
                .generate(p, n_samples, n_tokens, s)
                .map_err(ScanError::at(p))
        })
        .collect::<Result<Vec<_>>>()?;
    log::debug!(
        "stage 1: {} points x {} samples x {} tokens",
        points.len(),
        n_samples,
        n_tokens
    );
    SampleStore::from_samples(points, samples, seed, point_seeds)
}

impl SampleStore {
    /// Wraps pre-generated samples. Every point must hold the same number of
    /// sequences.
    pub fn from_samples(
        points: Vec<AxisPoint>,
        samples: Vec<Vec<TokenSequence>>,
        seed: u64,
        point_seeds: Vec<u64>,
    ) -> Result<Self> {
        if points.len() != samples.len() || points.len() != point_seeds.len() {
            return Err(ScanError::InvalidSettings(format!(
                "{} points, {} sample sets, {} seeds",
                points.len(),
                samples.len(),
                point_seeds.len()
            )));
        }
        let expected = samples.first().map_or(0, Vec::len);
        if expected == 0 {
            return Err(ScanError::InvalidSettings("empty sample sets".into()));
        }
        if let Some((index, s)) = samples.iter().enumerate().find(|(_, s)| s.len() != expected) {
            return Err(ScanError::UnequalSampleSets {
                index,
                expected,
                found: s.len(),
            });
        }
        let mut table: HashMap<Vec<TokenId>, u32> = HashMap::new();
        let mut unique = Vec::new();
        let ids = samples
            .iter()
            .map(|set| {
                set.iter()
                    .map(|s| {
                        *table.entry(s.tokens.clone()).or_insert_with(|| {
                            unique.push(s.tokens.clone());
                            (unique.len() - 1) as u32
                        })
                    })
                    .collect()
            })
            .collect();
        let n_tokens = samples[0][0].len();
        Ok(Self {
            scores: (0..points.len()).map(|_| RwLock::new(HashMap::new())).collect(),
            points,
            n_tokens,
            seed,
            point_seeds,
            samples,
            ids,
            unique,
        })
    }

    pub fn points(&self) -> &[AxisPoint] {
        &self.points
    }

    pub fn n_samples(&self) -> usize {
        self.samples[0].len()
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn point_seeds(&self) -> &[u64] {
        &self.point_seeds
    }

    pub fn samples(&self, point: usize) -> &[TokenSequence] {
        &self.samples[point]
    }

    /// Total number of stored sequences (with repetition).
    pub fn n_sequences(&self) -> usize {
        self.samples.iter().map(Vec::len).sum()
    }

    pub fn unique_sequences(&self) -> &[Vec<TokenId>] {
        &self.unique
    }

    /// Interned id of every sample at `point`, in generation order.
    pub fn sequence_ids(&self, point: usize) -> &[u32] {
        &self.ids[point]
    }

    /// Number of (point, sequence) scores held in the cache.
    pub fn cached_scores(&self) -> usize {
        self.scores.iter().map(|m| m.read().len()).sum()
    }

    /// Checks that `grid` covers exactly the stored points.
    pub(crate) fn check_grid(&self, grid: &ParameterGrid) -> Result<()> {
        if grid.points() != self.points.as_slice() {
            return Err(ScanError::InvalidSettings(
                "grid points do not match the sample store".into(),
            ));
        }
        Ok(())
    }

    /// Log-probability of sequence `uid` at grid point `point`, if cached.
    pub fn cached_log_prob(&self, point: usize, uid: u32) -> Option<f64> {
        self.scores[point].read().get(&uid).copied()
    }

    /// Scores every uid missing from the cache of `point`.
    pub(crate) fn ensure_scores<M: AutoregressiveModel + ?Sized>(
        &self,
        model: &M,
        point: usize,
        uids: &[u32],
    ) -> Result<()> {
        let missing: Vec<u32> = {
            let cache = self.scores[point].read();
            uids.iter().copied().filter(|u| !cache.contains_key(u)).collect()
        };
        if missing.is_empty() {
            return Ok(());
        }
        let p = &self.points[point];
        let computed = missing
            .par_iter()
            .map(|&u| {
                let lp = model.score(p, &self.unique[u as usize]).map_err(ScanError::at(p))?;
                if lp.is_nan() || lp > 1e-9 {
                    return Err(ScanError::InvalidSettings(format!(
                        "model returned log-probability {lp} at {p}"
                    )));
                }
                Ok((u, lp))
            })
            .collect::<Result<Vec<_>>>()?;
        self.scores[point].write().extend(computed);
        Ok(())
    }

    /// Sorted distinct uids generated at any of `points`.
    pub(crate) fn uids_at(&self, points: impl IntoIterator<Item = usize>) -> Vec<u32> {
        let mut out: Vec<u32> = points
            .into_iter()
            .flat_map(|p| self.ids[p].iter().copied())
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Read access to one point's cache for the duration of `f`.
    pub(crate) fn with_scores<R>(
        &self,
        points: &[usize],
        f: impl FnOnce(&[&HashMap<u32, f64>]) -> R,
    ) -> R {
        let guards: Vec<_> = points.iter().map(|&p| self.scores[p].read()).collect();
        let maps: Vec<&HashMap<u32, f64>> = guards.iter().map(|g| &**g).collect();
        f(&maps)
    }
}
