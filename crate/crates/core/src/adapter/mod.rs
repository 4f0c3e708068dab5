//! Self-attention prototype adaptation.
//!
//! Two modules share one single-head self-attention block:
//!
//! * **prototype generation** — attention over the novel-class support
//!   embeddings followed by a per-class mean, producing one prototype per
//!   novel class;
//! * **query adaptation** — for each query embedding, attention over the
//!   stack `[old prototypes; novel prototypes; query]`, producing updated
//!   prototypes, an updated query embedding, and temperature-scaled cosine
//!   scores used both as training logits and as decision scores.
//!
//! The attention block computes
//! `out = layer_norm(W_o(softmax(W_q X (W_k X)^T / sqrt(D)) W_v X) + X)`
//! row-wise, with four `D x D` linear maps (bias optional, off by
//! default).

pub mod episode;
pub mod train;

use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::math;
use crate::optim::{self, Param};
use crate::rng::Rng;
use crate::tensor::{Tape, TensorId};
use crate::Real;

/// Default temperature for cosine logits; raw cosines in `[-1, 1]` give
/// weak cross-entropy gradients.
pub const DEFAULT_TEMPERATURE: Real = 10.0 as Real;

/// The four projections of one self-attention block, bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundAttention {
    pub w_query: TensorId,
    pub w_key: TensorId,
    pub w_value: TensorId,
    pub w_out: TensorId,
    pub biases: Option<[TensorId; 4]>,
}

impl BoundAttention {
    pub fn new(w_query: TensorId, w_key: TensorId, w_value: TensorId, w_out: TensorId) -> Self {
        BoundAttention { w_query, w_key, w_value, w_out, biases: None }
    }
}

/// Single-head self-attention with residual sum and row-wise layer norm:
/// takes `x [n, d]`, returns `[n, d]`.
pub fn attention_block(tape: &mut Tape, attn: &BoundAttention, x: TensorId) -> Result<TensorId> {
    let d = {
        let s = tape.shape(x);
        if s.len() != 2 {
            return Err(CoreError::shape("attention input must be [n, d]"));
        }
        s[1]
    };
    let b = |i: usize| attn.biases.map(|bs| bs[i]);
    let q = tape.linear(x, attn.w_query, b(0))?;
    let k = tape.linear(x, attn.w_key, b(1))?;
    let v = tape.linear(x, attn.w_value, b(2))?;
    let kt = tape.transpose(k)?;
    let raw = tape.matmul(q, kt)?;
    let scaled = tape.scale(raw, 1.0 / math::sqrt(d as Real));
    let weights = tape.softmax_rows(scaled)?;
    let mixed = tape.matmul(weights, v)?;
    let projected = tape.linear(mixed, attn.w_out, b(3))?;
    let summed = tape.add(projected, x)?;
    tape.layer_norm_rows(summed)
}

/// Attention over all support embeddings jointly, then a per-class mean.
/// `support` is `[n_classes * shots, d]` with each class's `shots` rows
/// contiguous; the output is `[n_classes, d]` in block order.
pub fn generate_prototypes(
    tape: &mut Tape,
    attn: &BoundAttention,
    support: TensorId,
    shots: usize,
) -> Result<TensorId> {
    let rows = tape.shape(support)[0];
    if shots == 0 || rows % shots != 0 {
        return Err(CoreError::shape(format_args!(
            "support rows {rows} not divisible into groups of {shots}"
        )));
    }
    let adapted = attention_block(tape, attn, support)?;
    tape.group_mean_rows(adapted, shots)
}

/// Result of adapting a batch of queries against a prototype stack.
#[derive(Debug)]
pub struct AdaptOutput {
    /// `[n_queries, n_classes]` temperature-scaled cosine scores.
    pub scores: TensorId,
    /// `[n_queries, d]` updated query embeddings.
    pub updated_queries: TensorId,
    /// Per-query updated prototype stacks, each `[n_classes, d]`.
    pub per_query_prototypes: Vec<TensorId>,
}

/// For each query row, run attention over `[prototypes; query]`, split the
/// result back into updated prototypes and an updated query, and score the
/// query against every updated prototype by temperature-scaled cosine
/// similarity.
pub fn adapt_queries(
    tape: &mut Tape,
    attn: &BoundAttention,
    prototypes: TensorId,
    queries: TensorId,
    temperature: Real,
) -> Result<AdaptOutput> {
    if temperature <= 0.0 {
        return Err(CoreError::invalid("temperature must be positive"));
    }
    let (ps, qs) = (tape.shape(prototypes).to_vec(), tape.shape(queries).to_vec());
    if ps.len() != 2 || qs.len() != 2 || ps[1] != qs[1] {
        return Err(CoreError::shape(format_args!(
            "prototypes {ps:?} and queries {qs:?} must share the embedding dim"
        )));
    }
    let n_classes = ps[0];
    let n_queries = qs[0];
    let mut score_rows = Vec::with_capacity(n_queries);
    let mut query_rows = Vec::with_capacity(n_queries);
    let mut proto_stacks = Vec::with_capacity(n_queries);
    for qi in 0..n_queries {
        let e = tape.slice_rows(queries, qi, 1)?;
        let stack = tape.concat_rows(&[prototypes, e])?;
        let out = attention_block(tape, attn, stack)?;
        let new_protos = tape.slice_rows(out, 0, n_classes)?;
        let new_query = tape.slice_rows(out, n_classes, 1)?;
        let cos = tape.cosine_scores(new_query, new_protos)?;
        score_rows.push(tape.scale(cos, temperature));
        query_rows.push(new_query);
        proto_stacks.push(new_protos);
    }
    Ok(AdaptOutput {
        scores: tape.concat_rows(&score_rows)?,
        updated_queries: tape.concat_rows(&query_rows)?,
        per_query_prototypes: proto_stacks,
    })
}

/// How the per-query prototype stacks collapse into the one set that
/// persists in the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConsolidateMode {
    /// Element-wise mean over queries.
    #[default]
    Mean,
    /// Keep the last query's stack.
    Last,
}

/// Collapse per-query prototype stacks into one `[n_classes, d]` matrix of
/// plain values.
pub fn consolidate_prototypes(
    tape: &Tape,
    per_query: &[TensorId],
    mode: ConsolidateMode,
) -> Result<Vec<Vec<Real>>> {
    let Some(&first) = per_query.first() else {
        return Err(CoreError::invalid("consolidate needs at least one query stack"));
    };
    let shape = tape.shape(first).to_vec();
    let (rows, cols) = (shape[0], shape[1]);
    match mode {
        ConsolidateMode::Last => {
            let data = tape.value(*per_query.last().unwrap());
            Ok((0..rows).map(|r| data[r * cols..(r + 1) * cols].to_vec()).collect())
        }
        ConsolidateMode::Mean => {
            let mut acc = alloc::vec![0.0 as Real; rows * cols];
            for &t in per_query {
                if tape.shape(t) != shape.as_slice() {
                    return Err(CoreError::shape("inconsistent prototype stacks"));
                }
                for (a, v) in acc.iter_mut().zip(tape.value(t)) {
                    *a += *v;
                }
            }
            let inv = 1.0 / per_query.len() as Real;
            acc.iter_mut().for_each(|a| *a *= inv);
            Ok((0..rows).map(|r| acc[r * cols..(r + 1) * cols].to_vec()).collect())
        }
    }
}

/// The prototype adaptation network: one attention block that generates
/// novel-class prototypes and one that adapts prototypes and queries, plus
/// the cosine-logit temperature. Parameters live in one flat list so the
/// optimizer and checkpoint code see a single slice.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeAdapter {
    pub dim: usize,
    pub bias: bool,
    pub temperature: Real,
    params: Vec<Param>,
}

impl PrototypeAdapter {
    /// Fan-in-scaled uniform init of both attention blocks from a seed.
    pub fn init(dim: usize, bias: bool, temperature: Real, rng: &mut Rng) -> Result<Self> {
        if dim < 2 {
            return Err(CoreError::invalid("adapter dim must be >= 2"));
        }
        if temperature <= 0.0 {
            return Err(CoreError::invalid("temperature must be positive"));
        }
        let mut params = Vec::new();
        for module in ["gen", "adapt"] {
            for role in ["query", "key", "value", "out"] {
                params.push(Param::uniform_init(
                    alloc::format!("{module}.w_{role}"),
                    alloc::vec![dim, dim],
                    dim,
                    rng,
                ));
            }
            if bias {
                for role in ["query", "key", "value", "out"] {
                    params.push(Param::zeros(alloc::format!("{module}.b_{role}"), alloc::vec![1, dim]));
                }
            }
        }
        Ok(PrototypeAdapter { dim, bias, temperature, params })
    }

    fn per_module(&self) -> usize {
        if self.bias { 8 } else { 4 }
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    /// Rebuild from a flat parameter list (checkpoint load).
    pub fn from_parts(dim: usize, bias: bool, temperature: Real, params: Vec<Param>) -> Result<Self> {
        let expected = if bias { 16 } else { 8 };
        if params.len() != expected {
            return Err(CoreError::invalid(format_args!(
                "adapter expects {expected} parameters, got {}",
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            let want: &[usize] = if (i % (expected / 2)) < 4 { &[dim, dim] } else { &[1, dim] };
            if p.shape != want {
                return Err(CoreError::shape(format_args!("adapter parameter {i} has shape {:?}", p.shape)));
            }
        }
        Ok(PrototypeAdapter { dim, bias, temperature, params })
    }

    /// Bind both attention blocks on a tape. With `trainable` the leaves
    /// require gradients and [`PrototypeAdapter::accumulate_grads`] can
    /// pull them back.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundAdapter> {
        let ids: Vec<TensorId> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.data.clone(), p.shape.clone(), trainable))
            .collect::<Result<_>>()?;
        let m = self.per_module();
        let module = |offset: usize| -> BoundAttention {
            BoundAttention {
                w_query: ids[offset],
                w_key: ids[offset + 1],
                w_value: ids[offset + 2],
                w_out: ids[offset + 3],
                biases: self
                    .bias
                    .then(|| [ids[offset + 4], ids[offset + 5], ids[offset + 6], ids[offset + 7]]),
            }
        };
        Ok(BoundAdapter { proto_gen: module(0), query_adapt: module(m), ids })
    }

    /// Pull tape gradients for a binding back into the parameter
    /// accumulators.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &BoundAdapter) {
        optim::accumulate_grads(tape, &bound.ids, &mut self.params);
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }
}

/// A [`PrototypeAdapter`] bound onto a tape.
#[derive(Debug)]
pub struct BoundAdapter {
    pub proto_gen: BoundAttention,
    pub query_adapt: BoundAttention,
    ids: Vec<TensorId>,
}
