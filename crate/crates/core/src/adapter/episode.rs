//! Episode construction for pseudo-incremental training.
//!
//! One episode draws `ways` pseudo-base classes from the first split and
//! `ways` pseudo-novel classes from the second, with `shots` support and
//! `queries_per_class` query samples per class, support and query
//! disjoint. A [`EpisodePass`] draws episodes without replacement until
//! one side can no longer field `ways` classes, so over a pass every
//! sample is selected at most once (exactly once when class sizes are
//! multiples of `shots + queries_per_class` and both sides exhaust
//! together).

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom as _;

use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::Real;

/// One embedding with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub class_id: u32,
    pub vector: Vec<Real>,
}

/// Embeddings grouped by class, the sampler's input.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClassEmbeddings {
    dim: usize,
    by_class: BTreeMap<u32, Vec<Vec<Real>>>,
}

impl ClassEmbeddings {
    pub fn new(dim: usize) -> Self {
        ClassEmbeddings { dim, by_class: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add(&mut self, class_id: u32, vector: Vec<Real>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(CoreError::shape(format_args!(
                "embedding of length {} in a dim-{} set",
                vector.len(),
                self.dim
            )));
        }
        self.by_class.entry(class_id).or_default().push(vector);
        Ok(())
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.by_class.keys().copied().collect()
    }

    pub fn num_classes(&self) -> usize {
        self.by_class.len()
    }

    pub fn count(&self, class_id: u32) -> usize {
        self.by_class.get(&class_id).map_or(0, Vec::len)
    }

    pub fn total_samples(&self) -> usize {
        self.by_class.values().map(Vec::len).sum()
    }

    pub fn get(&self, class_id: u32, index: usize) -> Option<&Vec<Real>> {
        self.by_class.get(&class_id).and_then(|v| v.get(index))
    }

    pub fn samples(&self, class_id: u32) -> &[Vec<Real>] {
        self.by_class.get(&class_id).map_or(&[], Vec::as_slice)
    }

    /// Mean vector of one class.
    pub fn class_mean(&self, class_id: u32) -> Result<Vec<Real>> {
        let samples = self
            .by_class
            .get(&class_id)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| CoreError::invalid(format_args!("class {class_id} has no samples")))?;
        let mut mean = alloc::vec![0.0 as Real; self.dim];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += *v;
            }
        }
        let inv = 1.0 / samples.len() as Real;
        mean.iter_mut().for_each(|m| *m *= inv);
        Ok(mean)
    }
}

/// Episode shape and the training hyperparameters tied to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeConfig {
    /// Classes drawn from each split per episode (N).
    pub ways: usize,
    /// Support samples per class (K).
    pub shots: usize,
    /// Query samples per class (K_q).
    pub queries_per_class: usize,
    /// Full passes over the base data.
    pub epochs: usize,
    /// SGD learning rate for adapter training.
    pub learning_rate: Real,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig { ways: 5, shots: 5, queries_per_class: 15, epochs: 20, learning_rate: 2e-4 as Real }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ways == 0 || self.shots == 0 || self.queries_per_class == 0 {
            return Err(CoreError::invalid("ways, shots and queries_per_class must be >= 1"));
        }
        Ok(())
    }

    fn per_class(&self) -> usize {
        self.shots + self.queries_per_class
    }
}

/// One support/query batch. Support and query rows are grouped by class,
/// pseudo-base classes first, in the order of the class lists.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeBatch {
    pub dim: usize,
    pub shots: usize,
    pub queries_per_class: usize,
    pub pseudo_base_classes: Vec<u32>,
    pub pseudo_novel_classes: Vec<u32>,
    pub support: Vec<LabeledEmbedding>,
    pub query: Vec<LabeledEmbedding>,
    /// `(class_id, sample_index)` provenance of each support row.
    pub support_origin: Vec<(u32, usize)>,
    /// `(class_id, sample_index)` provenance of each query row.
    pub query_origin: Vec<(u32, usize)>,
}

impl EpisodeBatch {
    /// Class order used for loss labels: pseudo-base then pseudo-novel.
    pub fn class_order(&self) -> Vec<u32> {
        self.pseudo_base_classes
            .iter()
            .chain(&self.pseudo_novel_classes)
            .copied()
            .collect()
    }

    /// Structural sanity check used by tests.
    pub fn validate(&self) -> Result<()> {
        let order = self.class_order();
        let n = order.len();
        if self.support.len() != n * self.shots || self.query.len() != n * self.queries_per_class {
            return Err(CoreError::invalid("episode has wrong support/query counts"));
        }
        for (ci, &c) in order.iter().enumerate() {
            for s in 0..self.shots {
                if self.support[ci * self.shots + s].class_id != c {
                    return Err(CoreError::invalid("support rows not grouped by class"));
                }
            }
            for q in 0..self.queries_per_class {
                if self.query[ci * self.queries_per_class + q].class_id != c {
                    return Err(CoreError::invalid("query rows not grouped by class"));
                }
            }
        }
        for so in &self.support_origin {
            if self.query_origin.contains(so) {
                return Err(CoreError::invalid("support and query overlap"));
            }
        }
        Ok(())
    }
}

/// Draw one episode with fresh randomness (sampling without replacement
/// inside the episode only). Every chosen class needs at least
/// `shots + queries_per_class` samples.
pub fn build_pseudo_episode(
    d01: &ClassEmbeddings,
    d02: &ClassEmbeddings,
    cfg: &EpisodeConfig,
    rng: &mut Rng,
) -> Result<EpisodeBatch> {
    cfg.validate()?;
    if d01.dim() != d02.dim() {
        return Err(CoreError::shape("split embedding dims differ"));
    }
    let mut pass = EpisodePass::new(d01, d02, cfg, rng)?;
    pass.next_episode(rng)?
        .ok_or_else(|| CoreError::invalid("not enough classes or samples for one episode"))
}

struct SidePool {
    /// class -> shuffled, not-yet-consumed sample indices
    remaining: BTreeMap<u32, Vec<usize>>,
}

impl SidePool {
    fn new(data: &ClassEmbeddings, rng: &mut Rng) -> Self {
        let mut remaining = BTreeMap::new();
        for c in data.class_ids() {
            let mut idx: Vec<usize> = (0..data.count(c)).collect();
            idx.shuffle(rng);
            remaining.insert(c, idx);
        }
        SidePool { remaining }
    }

    fn fieldable(&self, per_class: usize) -> usize {
        self.remaining.values().filter(|v| v.len() >= per_class).count()
    }

    /// Pick `ways` classes, most-remaining first with a seeded shuffle as
    /// the tie break, so balanced pools drain completely.
    fn pick_classes(&self, ways: usize, per_class: usize, rng: &mut Rng) -> Vec<u32> {
        let mut candidates: Vec<u32> = self
            .remaining
            .iter()
            .filter(|(_, v)| v.len() >= per_class)
            .map(|(c, _)| *c)
            .collect();
        candidates.shuffle(rng);
        candidates.sort_by_key(|c| core::cmp::Reverse(self.remaining[c].len()));
        candidates.truncate(ways);
        candidates
    }

    fn take(&mut self, class: u32, n: usize) -> Vec<usize> {
        let pool = self.remaining.get_mut(&class).expect("picked class exists");
        pool.split_off(pool.len() - n)
    }

    fn unused(&self) -> usize {
        self.remaining.values().map(Vec::len).sum()
    }
}

/// One sampling pass over both splits.
pub struct EpisodePass<'a> {
    d01: &'a ClassEmbeddings,
    d02: &'a ClassEmbeddings,
    cfg: EpisodeConfig,
    base_pool: SidePool,
    novel_pool: SidePool,
}

impl<'a> EpisodePass<'a> {
    pub fn new(
        d01: &'a ClassEmbeddings,
        d02: &'a ClassEmbeddings,
        cfg: &EpisodeConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        if d01.dim() != d02.dim() {
            return Err(CoreError::shape("split embedding dims differ"));
        }
        Ok(EpisodePass {
            d01,
            d02,
            cfg: *cfg,
            base_pool: SidePool::new(d01, rng),
            novel_pool: SidePool::new(d02, rng),
        })
    }

    /// Samples still unconsumed on either side.
    pub fn unused_samples(&self) -> usize {
        self.base_pool.unused() + self.novel_pool.unused()
    }

    /// Next episode of the pass, or `None` when a side cannot field
    /// `ways` classes with enough samples left.
    pub fn next_episode(&mut self, rng: &mut Rng) -> Result<Option<EpisodeBatch>> {
        let per_class = self.cfg.per_class();
        if self.base_pool.fieldable(per_class) < self.cfg.ways
            || self.novel_pool.fieldable(per_class) < self.cfg.ways
        {
            return Ok(None);
        }
        let base_classes = self.base_pool.pick_classes(self.cfg.ways, per_class, rng);
        let novel_classes = self.novel_pool.pick_classes(self.cfg.ways, per_class, rng);

        let mut episode = EpisodeBatch {
            dim: self.d01.dim(),
            shots: self.cfg.shots,
            queries_per_class: self.cfg.queries_per_class,
            pseudo_base_classes: base_classes.clone(),
            pseudo_novel_classes: novel_classes.clone(),
            support: Vec::new(),
            query: Vec::new(),
            support_origin: Vec::new(),
            query_origin: Vec::new(),
        };

        let shots = self.cfg.shots;
        let fill = |classes: &[u32], pool: &mut SidePool, data: &ClassEmbeddings, ep: &mut EpisodeBatch| {
            // supports for all classes of this side, then its queries,
            // keeping per-class grouping within each section
            let picks: Vec<(u32, Vec<usize>)> =
                classes.iter().map(|&c| (c, pool.take(c, per_class))).collect();
            for (c, idx) in &picks {
                for &i in &idx[..shots] {
                    ep.support.push(LabeledEmbedding {
                        class_id: *c,
                        vector: data.get(*c, i).expect("index in range").clone(),
                    });
                    ep.support_origin.push((*c, i));
                }
            }
            for (c, idx) in &picks {
                for &i in &idx[shots..] {
                    ep.query.push(LabeledEmbedding {
                        class_id: *c,
                        vector: data.get(*c, i).expect("index in range").clone(),
                    });
                    ep.query_origin.push((*c, i));
                }
            }
        };
        fill(&base_classes, &mut self.base_pool, self.d01, &mut episode);
        fill(&novel_classes, &mut self.novel_pool, self.d02, &mut episode);
        Ok(Some(episode))
    }
}
