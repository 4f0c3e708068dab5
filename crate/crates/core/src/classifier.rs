//! The dynamically expanded prototype classifier.
//!
//! One prototype per class. The base store holds plain class means of the
//! base-session embeddings. Each incremental session generates prototypes
//! for its novel classes, adapts the whole stack against the session's
//! query embeddings, and persists the consolidated result; the naive
//! baseline appends plain support means instead and leaves old entries
//! untouched. Prediction is a cosine argmax, either directly against the
//! stored prototypes or after a read-only adaptation pass with the test
//! embedding as the single query.

use alloc::vec::Vec;

use crate::adapter::episode::{ClassEmbeddings, LabeledEmbedding};
use crate::adapter::{adapt_queries, generate_prototypes, ConsolidateMode, PrototypeAdapter};
use crate::error::{CoreError, Result};
use crate::math;
use crate::tensor::Tape;
use crate::Real;

/// How [`predict`](PrototypeStore::predict) scores a test embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalMode {
    /// Cosine against the stored prototypes as-is.
    Plain,
    /// Run the adapter with the test embedding as the single query and
    /// score against the per-query updated prototypes (store unchanged).
    #[default]
    Adapted,
}

/// Decision for one test embedding. `scores` is parallel to the store's
/// class order; `class_id` is the argmax with ties broken by the lowest
/// class id.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_id: u32,
    pub scores: Vec<Real>,
}

/// Ordered set of `(class_id, prototype)` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeStore {
    dim: usize,
    session_index: u32,
    entries: Vec<(u32, Vec<Real>)>,
}

impl PrototypeStore {
    /// Base classifier: one mean-vector prototype per class, session 0.
    pub fn build_base(embeddings: &ClassEmbeddings) -> Result<Self> {
        if embeddings.num_classes() == 0 {
            return Err(CoreError::invalid("base store needs at least one class"));
        }
        let mut entries = Vec::with_capacity(embeddings.num_classes());
        for c in embeddings.class_ids() {
            entries.push((c, embeddings.class_mean(c)?));
        }
        Ok(PrototypeStore { dim: embeddings.dim(), session_index: 0, entries })
    }

    /// Rebuild from parts (checkpoint load).
    pub fn from_parts(dim: usize, session_index: u32, entries: Vec<(u32, Vec<Real>)>) -> Result<Self> {
        let mut seen = alloc::collections::BTreeSet::new();
        for (c, p) in &entries {
            if p.len() != dim {
                return Err(CoreError::shape("prototype length does not match dim"));
            }
            if !seen.insert(*c) {
                return Err(CoreError::DuplicateClass(*c));
            }
        }
        Ok(PrototypeStore { dim, session_index, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn session_index(&self) -> u32 {
        self.session_index
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.entries.iter().map(|(c, _)| *c).collect()
    }

    pub fn entries(&self) -> &[(u32, Vec<Real>)] {
        &self.entries
    }

    pub fn prototype(&self, class_id: u32) -> Option<&[Real]> {
        self.entries
            .iter()
            .find(|(c, _)| *c == class_id)
            .map(|(_, p)| p.as_slice())
    }

    /// Serialized prototype payload size in float elements
    /// (`classes * dim`).
    pub fn payload_elements(&self) -> usize {
        self.entries.len() * self.dim
    }

    /// FNV-1a over class ids and prototype bits; used to assert that
    /// reads leave the store untouched.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        eat(&self.session_index.to_le_bytes());
        for (c, p) in &self.entries {
            eat(&c.to_le_bytes());
            for v in p {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Group labeled support embeddings into contiguous per-class blocks
    /// (ascending class id), checking disjointness against the store and
    /// equal per-class counts.
    fn group_support(&self, support: &[LabeledEmbedding]) -> Result<(Vec<u32>, usize, Vec<Real>)> {
        if support.is_empty() {
            return Err(CoreError::invalid("session support set is empty"));
        }
        let mut by_class: alloc::collections::BTreeMap<u32, Vec<&LabeledEmbedding>> =
            alloc::collections::BTreeMap::new();
        for e in support {
            if e.vector.len() != self.dim {
                return Err(CoreError::shape("support embedding dim does not match store"));
            }
            if self.entries.iter().any(|(c, _)| *c == e.class_id) {
                return Err(CoreError::DuplicateClass(e.class_id));
            }
            by_class.entry(e.class_id).or_default().push(e);
        }
        let shots = by_class.values().next().map_or(0, Vec::len);
        if by_class.values().any(|v| v.len() != shots) || shots == 0 {
            return Err(CoreError::invalid("support must hold the same shot count for every class"));
        }
        let classes: Vec<u32> = by_class.keys().copied().collect();
        let mut rows = Vec::with_capacity(by_class.len() * shots * self.dim);
        for items in by_class.values() {
            for e in items {
                rows.extend_from_slice(&e.vector);
            }
        }
        Ok((classes, shots, rows))
    }

    /// Expand with one incremental session through the adapter: generate
    /// novel prototypes from the supports, adapt the full stack against
    /// the session's query embeddings, persist the consolidated result,
    /// and append the novel classes.
    pub fn expand_session(
        &mut self,
        adapter: &PrototypeAdapter,
        support: &[LabeledEmbedding],
        queries: &[Vec<Real>],
        mode: ConsolidateMode,
    ) -> Result<()> {
        if adapter.dim != self.dim {
            return Err(CoreError::shape("adapter dim does not match store"));
        }
        if queries.is_empty() {
            return Err(CoreError::invalid("session query set is empty"));
        }
        if queries.iter().any(|q| q.len() != self.dim) {
            return Err(CoreError::shape("query embedding dim does not match store"));
        }
        let (new_classes, shots, support_rows) = self.group_support(support)?;

        let mut tape = Tape::new();
        let bound = adapter.bind(&mut tape, false)?;
        let support_t = tape.constant(support_rows, alloc::vec![new_classes.len() * shots, self.dim])?;
        let novel = generate_prototypes(&mut tape, &bound.proto_gen, support_t, shots)?;
        let old_rows: Vec<Real> = self.entries.iter().flat_map(|(_, p)| p.iter().copied()).collect();
        let old = tape.constant(old_rows, alloc::vec![self.entries.len(), self.dim])?;
        let stack = tape.concat_rows(&[old, novel])?;
        let query_rows: Vec<Real> = queries.iter().flat_map(|q| q.iter().copied()).collect();
        let queries_t = tape.constant(query_rows, alloc::vec![queries.len(), self.dim])?;
        let out = adapt_queries(&mut tape, &bound.query_adapt, stack, queries_t, adapter.temperature)?;
        let consolidated = crate::adapter::consolidate_prototypes(&tape, &out.per_query_prototypes, mode)?;

        debug_assert_eq!(consolidated.len(), self.entries.len() + new_classes.len());
        for (entry, proto) in self.entries.iter_mut().zip(&consolidated) {
            entry.1.clone_from(proto);
        }
        for (c, proto) in new_classes.iter().zip(&consolidated[self.entries.len()..]) {
            self.entries.push((*c, proto.clone()));
        }
        self.session_index += 1;
        Ok(())
    }

    /// Ablation baseline: append plain per-class support means, leaving
    /// existing prototypes bit-identical.
    pub fn naive_expand(&mut self, support: &[LabeledEmbedding]) -> Result<()> {
        let (new_classes, shots, rows) = self.group_support(support)?;
        for (ci, c) in new_classes.iter().enumerate() {
            let mut mean = alloc::vec![0.0 as Real; self.dim];
            for s in 0..shots {
                let row = &rows[(ci * shots + s) * self.dim..(ci * shots + s + 1) * self.dim];
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += *v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= shots as Real);
            self.entries.push((*c, mean));
        }
        self.session_index += 1;
        Ok(())
    }

    /// Score one embedding against every stored class. `Adapted` mode
    /// needs the adapter and never mutates the store.
    pub fn predict(
        &self,
        embedding: &[Real],
        mode: EvalMode,
        adapter: Option<&PrototypeAdapter>,
    ) -> Result<Prediction> {
        if self.entries.is_empty() {
            return Err(CoreError::invalid("prototype store is empty"));
        }
        if embedding.len() != self.dim {
            return Err(CoreError::shape("embedding dim does not match store"));
        }
        let scores: Vec<Real> = match mode {
            EvalMode::Plain => {
                let qn = math::norm_clamped(embedding);
                self.entries
                    .iter()
                    .map(|(_, p)| math::dot(embedding, p) / (qn * math::norm_clamped(p)))
                    .collect()
            }
            EvalMode::Adapted => {
                let adapter = adapter.ok_or_else(|| {
                    CoreError::invalid("adapted prediction needs the prototype adapter")
                })?;
                if adapter.dim != self.dim {
                    return Err(CoreError::shape("adapter dim does not match store"));
                }
                let mut tape = Tape::new();
                let bound = adapter.bind(&mut tape, false)?;
                let rows: Vec<Real> = self.entries.iter().flat_map(|(_, p)| p.iter().copied()).collect();
                let protos = tape.constant(rows, alloc::vec![self.entries.len(), self.dim])?;
                let q = tape.constant(embedding.to_vec(), alloc::vec![1, self.dim])?;
                let out = adapt_queries(&mut tape, &bound.query_adapt, protos, q, adapter.temperature)?;
                tape.value(out.scores).to_vec()
            }
        };
        let mut best = 0usize;
        for i in 1..scores.len() {
            let better = scores[i] > scores[best]
                || (scores[i] == scores[best] && self.entries[i].0 < self.entries[best].0);
            if better {
                best = i;
            }
        }
        Ok(Prediction { class_id: self.entries[best].0, scores })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::DEFAULT_TEMPERATURE;
    use crate::rng;
    use alloc::vec;

    fn store_2d() -> PrototypeStore {
        let mut set = ClassEmbeddings::new(2);
        set.add(0, vec![1.0, 0.0]).unwrap();
        set.add(1, vec![0.0, 1.0]).unwrap();
        PrototypeStore::build_base(&set).unwrap()
    }

    fn labeled(class_id: u32, v: Vec<Real>) -> LabeledEmbedding {
        LabeledEmbedding { class_id, vector: v }
    }

    #[test]
    fn base_prototypes_are_class_means() {
        let mut set = ClassEmbeddings::new(2);
        set.add(3, vec![0.0, 0.0]).unwrap();
        set.add(3, vec![2.0, 2.0]).unwrap();
        set.add(5, vec![1.0, -1.0]).unwrap();
        let store = PrototypeStore::build_base(&set).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.prototype(3).unwrap(), &[1.0, 1.0]);
        // single embedding: prototype equals it
        assert_eq!(store.prototype(5).unwrap(), &[1.0, -1.0]);
        assert_eq!(store.session_index(), 0);
    }

    #[test]
    fn plain_predict_matches_stored_prototype() {
        let store = store_2d();
        let p = store.predict(&[1.0, 0.0], EvalMode::Plain, None).unwrap();
        assert_eq!(p.class_id, 0);
        assert!((p.scores[0] - 1.0).abs() < 1e-12);
        assert!(p.scores[1].abs() < 1e-12);
    }

    #[test]
    fn plain_predict_is_scale_invariant() {
        let store = store_2d();
        let e = [0.8, 0.31];
        let a = store.predict(&e, EvalMode::Plain, None).unwrap();
        for alpha in [0.01 as Real, 3.0, 1e4] {
            let scaled: Vec<Real> = e.iter().map(|v| v * alpha).collect();
            let b = store.predict(&scaled, EvalMode::Plain, None).unwrap();
            assert_eq!(a.class_id, b.class_id);
        }
    }

    #[test]
    fn predict_leaves_store_untouched() {
        let mut rng = rng::seeded(3);
        let adapter = PrototypeAdapter::init(2, false, DEFAULT_TEMPERATURE, &mut rng).unwrap();
        let store = store_2d();
        let before = store.content_hash();
        for i in 0..20 {
            let e = [0.1 * i as Real - 0.7, 0.3];
            store.predict(&e, EvalMode::Plain, None).unwrap();
            store.predict(&e, EvalMode::Adapted, Some(&adapter)).unwrap();
        }
        assert_eq!(store.content_hash(), before);
    }

    #[test]
    fn naive_expand_appends_means_only() {
        let mut store = store_2d();
        let old_hash_entries: Vec<_> = store.entries().to_vec();
        store
            .naive_expand(&[
                labeled(7, vec![2.0, 0.0]),
                labeled(7, vec![4.0, 0.0]),
                labeled(9, vec![0.0, 5.0]),
                labeled(9, vec![0.0, 7.0]),
            ])
            .unwrap();
        assert_eq!(store.len(), 4);
        assert_eq!(store.prototype(7).unwrap(), &[3.0, 0.0]);
        assert_eq!(store.prototype(9).unwrap(), &[0.0, 6.0]);
        // existing prototypes bit-identical
        assert_eq!(&store.entries()[..2], &old_hash_entries[..]);
        assert_eq!(store.session_index(), 1);
        // single-shot expansion copies the embedding
        let mut s2 = store_2d();
        s2.naive_expand(&[labeled(4, vec![0.5, 0.5])]).unwrap();
        assert_eq!(s2.prototype(4).unwrap(), &[0.5, 0.5]);
    }

    #[test]
    fn expansion_rejects_label_collision() {
        let mut store = store_2d();
        let err = store.naive_expand(&[labeled(0, vec![1.0, 1.0])]);
        assert!(matches!(err, Err(CoreError::DuplicateClass(0))));
        let mut rng = rng::seeded(1);
        let adapter = PrototypeAdapter::init(2, false, DEFAULT_TEMPERATURE, &mut rng).unwrap();
        let err = store.expand_session(
            &adapter,
            &[labeled(1, vec![1.0, 1.0])],
            &[vec![0.2, 0.4]],
            ConsolidateMode::Mean,
        );
        assert!(matches!(err, Err(CoreError::DuplicateClass(1))));
    }

    #[test]
    fn adapter_expansion_grows_store_per_session() {
        let mut rng = rng::seeded(5);
        let dim = 4;
        let adapter = PrototypeAdapter::init(dim, false, DEFAULT_TEMPERATURE, &mut rng).unwrap();
        let mut set = ClassEmbeddings::new(dim);
        for c in 0..10u32 {
            set.add(c, (0..dim).map(|j| (c as Real) + j as Real).collect()).unwrap();
        }
        let mut store = PrototypeStore::build_base(&set).unwrap();
        assert_eq!(store.len(), 10);

        for (round, base) in [(1u32, 10u32), (2, 15)] {
            let support: Vec<LabeledEmbedding> = (base..base + 5)
                .flat_map(|c| {
                    (0..3).map(move |s| labeled(c, (0..dim).map(|j| c as Real + s as Real * 0.1 + j as Real).collect()))
                })
                .collect();
            let queries: Vec<Vec<Real>> =
                (0..4).map(|q| (0..dim).map(|j| q as Real * 0.3 + j as Real).collect()).collect();
            store
                .expand_session(&adapter, &support, &queries, ConsolidateMode::Mean)
                .unwrap();
            assert_eq!(store.len(), 10 + 5 * round as usize);
            assert_eq!(store.session_index(), round);
        }
        // ids unique
        let mut ids = store.class_ids();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 20);
    }

    #[test]
    fn adapted_predict_matches_manual_pipeline() {
        // toy instance checked against the adapter ops directly
        let mut rng = rng::seeded(17);
        let adapter = PrototypeAdapter::init(2, false, DEFAULT_TEMPERATURE, &mut rng).unwrap();
        let store = store_2d();
        let e = [0.9 as Real, -0.2];
        let got = store.predict(&e, EvalMode::Adapted, Some(&adapter)).unwrap();

        let mut tape = Tape::new();
        let bound = adapter.bind(&mut tape, false).unwrap();
        let protos = tape.constant(vec![1.0, 0.0, 0.0, 1.0], vec![2, 2]).unwrap();
        let q = tape.constant(e.to_vec(), vec![1, 2]).unwrap();
        let out = adapt_queries(&mut tape, &bound.query_adapt, protos, q, adapter.temperature).unwrap();
        assert_eq!(got.scores, tape.value(out.scores));
    }

    #[test]
    fn payload_accounting() {
        let mut set = ClassEmbeddings::new(512);
        for c in 0..40u32 {
            set.add(c, vec![0.5; 512]).unwrap();
        }
        let store = PrototypeStore::build_base(&set).unwrap();
        assert_eq!(store.payload_elements(), 20480);
    }

    #[test]
    fn empty_store_prediction_is_an_error() {
        let store = PrototypeStore::from_parts(2, 0, vec![]).unwrap();
        assert!(store.predict(&[1.0, 0.0], EvalMode::Plain, None).is_err());
    }
}
