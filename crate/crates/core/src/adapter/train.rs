//! Episodic training of the prototype adapter.
//!
//! Per episode: pseudo-base prototypes are plain per-class means of the
//! base-side supports, novel prototypes come from the generation block
//! over the novel-side supports, all queries are adapted against the
//! stacked prototypes, and the cross-entropy of the cosine scores against
//! the query labels drives one SGD step. An epoch is one full
//! sample-once pass over both splits.

use alloc::vec::Vec;

use crate::adapter::episode::{ClassEmbeddings, EpisodeBatch, EpisodeConfig, EpisodePass};
use crate::adapter::{adapt_queries, generate_prototypes, BoundAttention, PrototypeAdapter};
use crate::error::{CoreError, Result};
use crate::optim::Optimizer;
use crate::rng;
use crate::tensor::{Tape, TensorId};
use crate::Real;

/// Loss trace of one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdapterTrainLog {
    pub episodes_per_epoch: Vec<usize>,
    pub mean_loss_per_epoch: Vec<Real>,
}

impl AdapterTrainLog {
    pub fn total_episodes(&self) -> usize {
        self.episodes_per_epoch.iter().sum()
    }
}

/// Build the episode loss graph on `tape`: returns the scalar loss node.
///
/// The class order for labels is pseudo-base classes followed by
/// pseudo-novel classes, matching the prototype stack.
pub fn episode_loss_graph(
    tape: &mut Tape,
    proto_gen: &BoundAttention,
    query_adapt: &BoundAttention,
    episode: &EpisodeBatch,
    temperature: Real,
) -> Result<TensorId> {
    let d = episode.dim;
    let n_base = episode.pseudo_base_classes.len();
    let shots = episode.shots;

    // pseudo-base prototypes: plain per-class means of base-side supports
    let mut base_protos = Vec::with_capacity(n_base * d);
    for (ci, _) in episode.pseudo_base_classes.iter().enumerate() {
        let block = &episode.support[ci * shots..(ci + 1) * shots];
        for j in 0..d {
            base_protos.push(block.iter().map(|e| e.vector[j]).sum::<Real>() / shots as Real);
        }
    }
    let base_protos = tape.constant(base_protos, alloc::vec![n_base, d])?;

    // novel prototypes through the generation block
    let novel_rows: Vec<Real> = episode.support[n_base * shots..]
        .iter()
        .flat_map(|e| e.vector.iter().copied())
        .collect();
    let n_novel = episode.pseudo_novel_classes.len();
    let novel_support = tape.constant(novel_rows, alloc::vec![n_novel * shots, d])?;
    let novel_protos = generate_prototypes(tape, proto_gen, novel_support, shots)?;

    let prototypes = tape.concat_rows(&[base_protos, novel_protos])?;

    // queries and their labels in stack order
    let class_order = episode.class_order();
    let query_rows: Vec<Real> = episode.query.iter().flat_map(|e| e.vector.iter().copied()).collect();
    let queries = tape.constant(query_rows, alloc::vec![episode.query.len(), d])?;
    let labels: Vec<usize> = episode
        .query
        .iter()
        .map(|e| {
            class_order
                .iter()
                .position(|c| *c == e.class_id)
                .ok_or_else(|| CoreError::invalid("query label outside episode classes"))
        })
        .collect::<Result<_>>()?;

    let out = adapt_queries(tape, query_adapt, prototypes, queries, temperature)?;
    tape.cross_entropy(out.scores, &labels)
}

/// Forward-only episode loss with the current (frozen) parameters.
pub fn episode_loss(adapter: &PrototypeAdapter, episode: &EpisodeBatch) -> Result<Real> {
    let mut tape = Tape::new();
    let bound = adapter.bind(&mut tape, false)?;
    let loss = episode_loss_graph(&mut tape, &bound.proto_gen, &bound.query_adapt, episode, adapter.temperature)?;
    Ok(tape.value(loss)[0])
}

/// Train the adapter episodically over `cfg.epochs` sample-once passes.
/// All randomness derives from `seed`.
pub fn train_adapter(
    adapter: &mut PrototypeAdapter,
    d01: &ClassEmbeddings,
    d02: &ClassEmbeddings,
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<AdapterTrainLog> {
    cfg.validate()?;
    if d01.dim() != adapter.dim || d02.dim() != adapter.dim {
        return Err(CoreError::shape("embedding dim does not match adapter dim"));
    }
    let mut rng = rng::stage_rng(seed, "adapter-episodes");
    let mut opt = Optimizer::sgd(cfg.learning_rate);
    let mut log = AdapterTrainLog::default();

    for _epoch in 0..cfg.epochs {
        let mut pass = EpisodePass::new(d01, d02, cfg, &mut rng)?;
        let mut losses = Vec::new();
        while let Some(episode) = pass.next_episode(&mut rng)? {
            let mut tape = Tape::new();
            let bound = adapter.bind(&mut tape, true)?;
            let loss =
                episode_loss_graph(&mut tape, &bound.proto_gen, &bound.query_adapt, &episode, adapter.temperature)?;
            losses.push(tape.value(loss)[0]);
            tape.backward(loss)?;
            adapter.zero_grads();
            adapter.accumulate_grads(&tape, &bound);
            opt.step(adapter.params_mut())?;
        }
        if losses.is_empty() {
            return Err(CoreError::invalid("splits cannot field a single episode"));
        }
        log.mean_loss_per_epoch
            .push(losses.iter().sum::<Real>() / losses.len() as Real);
        log.episodes_per_epoch.push(losses.len());
    }
    adapter.zero_grads();
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::episode::build_pseudo_episode;
    use crate::adapter::DEFAULT_TEMPERATURE;
    use rand::Rng as _;

    fn gaussian_split(
        class_ids: core::ops::Range<u32>,
        per_class: usize,
        dim: usize,
        spread: Real,
        rng: &mut crate::rng::Rng,
    ) -> ClassEmbeddings {
        // crude Box-Muller is enough for test data
        let mut normal = |rng: &mut crate::rng::Rng| -> Real {
            let u1: Real = rng.random_range(1e-9..1.0);
            let u2: Real = rng.random_range(0.0..1.0);
            crate::math::sqrt(-2.0 * crate::math::ln(u1)) * crate::math::cos(2.0 * crate::math::PI * u2)
        };
        let mut set = ClassEmbeddings::new(dim);
        for c in class_ids {
            let center: Vec<Real> = (0..dim).map(|_| normal(rng) * spread).collect();
            for _ in 0..per_class {
                let v = center.iter().map(|m| m + normal(rng)).collect();
                set.add(c, v).unwrap();
            }
        }
        set
    }

    #[test]
    fn zero_learning_rate_leaves_adapter_unchanged() {
        let mut rng = crate::rng::seeded(2);
        let d01 = gaussian_split(0..4, 8, 6, 8.0, &mut rng);
        let d02 = gaussian_split(4..8, 8, 6, 8.0, &mut rng);
        let mut adapter = PrototypeAdapter::init(6, false, DEFAULT_TEMPERATURE, &mut rng).unwrap();
        let before = adapter.clone();
        let cfg = EpisodeConfig {
            ways: 2,
            shots: 2,
            queries_per_class: 2,
            epochs: 3,
            learning_rate: 0.0,
        };
        train_adapter(&mut adapter, &d01, &d02, &cfg, 5).unwrap();
        assert_eq!(adapter, before);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let mut rng = crate::rng::seeded(8);
        let d01 = gaussian_split(0..4, 8, 5, 8.0, &mut rng);
        let d02 = gaussian_split(4..8, 8, 5, 8.0, &mut rng);
        let cfg = EpisodeConfig {
            ways: 2,
            shots: 2,
            queries_per_class: 2,
            epochs: 2,
            learning_rate: 2e-4,
        };
        let run = || {
            let mut r = crate::rng::seeded(13);
            let mut adapter = PrototypeAdapter::init(5, false, DEFAULT_TEMPERATURE, &mut r).unwrap();
            let log = train_adapter(&mut adapter, &d01, &d02, &cfg, 21).unwrap();
            (adapter, log)
        };
        let (a1, l1) = run();
        let (a2, l2) = run();
        assert_eq!(a1, a2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn training_improves_held_out_episode_loss() {
        // separable clusters: trained adapter should beat its init on
        // held-out episodes, averaged over seeds
        let mut wins = 0;
        for seed in [101u64, 202, 303] {
            let mut rng = crate::rng::seeded(seed);
            let d01 = gaussian_split(0..8, 20, 16, 10.0, &mut rng);
            let d02 = gaussian_split(8..12, 20, 16, 10.0, &mut rng);
            let held01 = gaussian_split(20..24, 8, 16, 10.0, &mut rng);
            let held02 = gaussian_split(24..28, 8, 16, 10.0, &mut rng);
            let cfg = EpisodeConfig {
                ways: 4,
                shots: 5,
                queries_per_class: 15,
                epochs: 25,
                learning_rate: 2e-4,
            };
            let mut adapter = PrototypeAdapter::init(16, false, DEFAULT_TEMPERATURE, &mut rng).unwrap();
            let eval_cfg = EpisodeConfig { ways: 2, shots: 3, queries_per_class: 5, ..cfg };
            let episodes: Vec<_> = (0..6)
                .map(|i| {
                    let mut er = crate::rng::seeded(seed ^ (i + 1));
                    build_pseudo_episode(&held01, &held02, &eval_cfg, &mut er).unwrap()
                })
                .collect();
            let mean_loss = |a: &PrototypeAdapter| -> Real {
                episodes.iter().map(|e| episode_loss(a, e).unwrap()).sum::<Real>()
                    / episodes.len() as Real
            };
            let before = mean_loss(&adapter);
            train_adapter(&mut adapter, &d01, &d02, &cfg, seed).unwrap();
            let after = mean_loss(&adapter);
            if after < before {
                wins += 1;
            }
        }
        assert!(wins >= 2, "training helped on only {wins}/3 seeds");
    }
}
