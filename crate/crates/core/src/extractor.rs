//! Embedding extractor: a small ResNet-style convolutional network over
//! log mel-spectrograms.
//!
//! Architecture: one 3x3 stem convolution, four stages of residual blocks
//! (two per stage; each block is conv-ReLU-conv plus the residual sum and
//! a final ReLU; stages 2-4 downsample by stride 2 with a 1x1 projection
//! on the residual path), global average pooling, a fully connected layer
//! whose output is the embedding, and a classification head used only
//! during training. Widths are `(w, 2w, 4w, 8w)` with
//! `w = base_width * width_scale`. There is no batch normalization, so
//! every forward pass is batch-independent and deterministic.
//!
//! After [`EmbeddingExtractor::freeze`] the head leaves the inference
//! path and the parameters can no longer be trained.

use alloc::string::String;
use alloc::vec::Vec;

use crate::dsp::LogMelSpectrogram;
use crate::error::{CoreError, Result};
use crate::optim::{self, Optimizer, Param};
use crate::rng;
use crate::tensor::{Tape, TensorId};
use crate::Real;

use rand::seq::SliceRandom as _;

/// Network hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EEConfig {
    /// Mel bins expected on the input spectrograms.
    pub mel_bins: usize,
    /// Embedding dimension D (the FC output width).
    pub embedding_dim: usize,
    /// Classes of the training head.
    pub num_classes: usize,
    /// Width of the first stage before scaling.
    pub base_width: usize,
    /// Multiplier applied to all stage widths.
    pub width_scale: Real,
    /// Residual blocks per stage.
    pub blocks_per_stage: usize,
}

impl EEConfig {
    /// Full-scale configuration (512-dim embeddings over 128 mel bins).
    pub fn full(num_classes: usize) -> Self {
        EEConfig {
            mel_bins: 128,
            embedding_dim: 512,
            num_classes,
            base_width: 32,
            width_scale: 1.0,
            blocks_per_stage: 2,
        }
    }

    /// Desk-scale preset for fast tests: `width_scale` 0.125, 16-dim
    /// embeddings, 32 mel bins.
    pub fn desk(num_classes: usize) -> Self {
        EEConfig {
            mel_bins: 32,
            embedding_dim: 16,
            num_classes,
            base_width: 32,
            width_scale: 0.125,
            blocks_per_stage: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim < 2 {
            return Err(CoreError::invalid("embedding_dim must be >= 2"));
        }
        if self.num_classes == 0 || self.mel_bins == 0 || self.blocks_per_stage == 0 {
            return Err(CoreError::invalid("num_classes, mel_bins and blocks_per_stage must be >= 1"));
        }
        if self.width_scale <= 0.0 || self.base_width == 0 {
            return Err(CoreError::invalid("widths must be positive"));
        }
        Ok(())
    }

    /// Channel widths of the four stages.
    pub fn stage_widths(&self) -> [usize; 4] {
        let w = ((self.base_width as Real * self.width_scale) + 0.5) as usize;
        let w = w.max(1);
        [w, 2 * w, 4 * w, 8 * w]
    }

    /// Total residual blocks (spec shape: 4 stages x blocks_per_stage).
    pub fn num_blocks(&self) -> usize {
        4 * self.blocks_per_stage
    }
}

/// Shapes and init fan-ins of every parameter, in serialization order.
fn layout(cfg: &EEConfig) -> Vec<(String, Vec<usize>, Option<usize>)> {
    let widths = cfg.stage_widths();
    let mut out: Vec<(String, Vec<usize>, Option<usize>)> = Vec::new();
    out.push(("stem.k".into(), alloc::vec![widths[0], 1, 3, 3], Some(9)));
    out.push(("stem.b".into(), alloc::vec![widths[0]], None));
    let mut prev = widths[0];
    for (s, &w) in widths.iter().enumerate() {
        for b in 0..cfg.blocks_per_stage {
            let in_ch = if b == 0 { prev } else { w };
            let tag = alloc::format!("stage{s}.block{b}");
            out.push((alloc::format!("{tag}.conv1.k"), alloc::vec![w, in_ch, 3, 3], Some(9 * in_ch)));
            out.push((alloc::format!("{tag}.conv1.b"), alloc::vec![w], None));
            out.push((alloc::format!("{tag}.conv2.k"), alloc::vec![w, w, 3, 3], Some(9 * w)));
            out.push((alloc::format!("{tag}.conv2.b"), alloc::vec![w], None));
            if b == 0 && s > 0 {
                out.push((alloc::format!("{tag}.proj.k"), alloc::vec![w, in_ch, 1, 1], Some(in_ch)));
            }
        }
        prev = w;
    }
    out.push(("fc.w".into(), alloc::vec![cfg.embedding_dim, widths[3]], Some(widths[3])));
    out.push(("fc.b".into(), alloc::vec![1, cfg.embedding_dim], None));
    out.push(("head.w".into(), alloc::vec![cfg.num_classes, cfg.embedding_dim], Some(cfg.embedding_dim)));
    out.push(("head.b".into(), alloc::vec![1, cfg.num_classes], None));
    out
}

/// conv-ReLU-conv, residual sum (optionally through a 1x1 projection),
/// then ReLU.
fn residual_block(
    tape: &mut Tape,
    x: TensorId,
    conv1_k: TensorId,
    conv1_b: TensorId,
    conv2_k: TensorId,
    conv2_b: TensorId,
    proj_k: Option<TensorId>,
    stride: usize,
) -> Result<TensorId> {
    let h = tape.conv2d(x, conv1_k, stride, 1)?;
    let h = tape.add_channel_bias(h, conv1_b)?;
    let h = tape.relu(h);
    let h = tape.conv2d(h, conv2_k, 1, 1)?;
    let h = tape.add_channel_bias(h, conv2_b)?;
    let shortcut = match proj_k {
        Some(p) => tape.conv2d(x, p, stride, 0)?,
        None => x,
    };
    let sum = tape.add(h, shortcut)?;
    Ok(tape.relu(sum))
}

/// Per-epoch training trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EeTrainLog {
    pub epoch_loss: Vec<Real>,
    pub epoch_accuracy: Vec<Real>,
}

/// The trainable (then frozen) embedding network.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingExtractor {
    config: EEConfig,
    params: Vec<Param>,
    frozen: bool,
}

impl EmbeddingExtractor {
    /// Build with fan-in-scaled uniform weights and zero biases from a
    /// seed.
    pub fn build(config: EEConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stage_rng(seed, "ee-init");
        let params = layout(&config)
            .into_iter()
            .map(|(name, shape, fan_in)| match fan_in {
                Some(f) => Param::uniform_init(name, shape, f, &mut rng),
                None => Param::zeros(name, shape),
            })
            .collect();
        Ok(EmbeddingExtractor { config, params, frozen: false })
    }

    /// Rebuild from a flat parameter list (checkpoint load).
    pub fn from_parts(config: EEConfig, params: Vec<Param>, frozen: bool) -> Result<Self> {
        config.validate()?;
        let expect = layout(&config);
        if params.len() != expect.len() {
            return Err(CoreError::invalid(format_args!(
                "extractor expects {} parameters, got {}",
                expect.len(),
                params.len()
            )));
        }
        for (p, (name, shape, _)) in params.iter().zip(&expect) {
            if &p.shape != shape {
                return Err(CoreError::shape(format_args!("parameter {name} has shape {:?}", p.shape)));
            }
        }
        Ok(EmbeddingExtractor { config, params, frozen })
    }

    pub fn config(&self) -> &EEConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// FNV-1a over the parameter value bits.
    pub fn param_bytes_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in &self.params {
            for v in &p.data {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Freeze: training is rejected and the head leaves the inference
    /// path. Idempotent.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    fn check_input(&self, spect: &LogMelSpectrogram) -> Result<()> {
        if spect.bins != self.config.mel_bins {
            return Err(CoreError::shape(format_args!(
                "spectrogram has {} mel bins, extractor expects {}",
                spect.bins, self.config.mel_bins
            )));
        }
        if spect.frames == 0 {
            return Err(CoreError::invalid("empty spectrogram"));
        }
        Ok(())
    }

    /// Forward one spectrogram through bound parameters; returns the
    /// embedding node and the head logits node.
    fn forward(
        &self,
        tape: &mut Tape,
        ids: &[TensorId],
        spect: &LogMelSpectrogram,
    ) -> Result<(TensorId, TensorId)> {
        let mut cursor = ids.iter().copied();
        let mut next = || cursor.next().ok_or_else(|| CoreError::invalid("parameter cursor exhausted"));

        let x = tape.constant(spect.values.clone(), alloc::vec![1, spect.frames, spect.bins])?;
        let stem_k = next()?;
        let stem_b = next()?;
        let mut h = tape.conv2d(x, stem_k, 1, 1)?;
        h = tape.add_channel_bias(h, stem_b)?;
        h = tape.relu(h);

        for s in 0..4 {
            for b in 0..self.config.blocks_per_stage {
                let entry = b == 0 && s > 0;
                let stride = if entry { 2 } else { 1 };
                let c1k = next()?;
                let c1b = next()?;
                let c2k = next()?;
                let c2b = next()?;
                let proj = if entry { Some(next()?) } else { None };
                h = residual_block(tape, h, c1k, c1b, c2k, c2b, proj, stride)?;
            }
        }

        let shape = tape.shape(h).to_vec();
        let pooled = tape.avg_pool(h, shape[1], shape[2])?;
        let flat = tape.reshape(pooled, alloc::vec![1, shape[0]])?;
        let fc_w = next()?;
        let fc_b = next()?;
        let embedding = tape.linear(flat, fc_w, Some(fc_b))?;
        let head_w = next()?;
        let head_b = next()?;
        let logits = tape.linear(embedding, head_w, Some(head_b))?;
        Ok((embedding, logits))
    }

    fn bind_frozen(&self, tape: &mut Tape) -> Result<Vec<TensorId>> {
        self.params
            .iter()
            .map(|p| tape.constant(p.data.clone(), p.shape.clone()))
            .collect()
    }

    /// The embedding of one clip: the FC-layer output. Deterministic in
    /// (parameters, input); works before and after freezing.
    pub fn embed(&self, spect: &LogMelSpectrogram) -> Result<Vec<Real>> {
        self.check_input(spect)?;
        let mut tape = Tape::new();
        let ids = self.bind_frozen(&mut tape)?;
        let (embedding, _) = self.forward(&mut tape, &ids, spect)?;
        Ok(tape.value(embedding).to_vec())
    }

    /// Head logits, only available while the head is still part of the
    /// inference path (before freezing).
    pub fn logits(&self, spect: &LogMelSpectrogram) -> Result<Vec<Real>> {
        if self.frozen {
            return Err(CoreError::Frozen);
        }
        self.check_input(spect)?;
        let mut tape = Tape::new();
        let ids = self.bind_frozen(&mut tape)?;
        let (_, logits) = self.forward(&mut tape, &ids, spect)?;
        Ok(tape.value(logits).to_vec())
    }

    /// Supervised training with Adam on cross-entropy. Returns the
    /// per-epoch mean loss and training accuracy.
    pub fn train(
        &mut self,
        data: &[(&LogMelSpectrogram, u32)],
        epochs: usize,
        learning_rate: Real,
        batch_size: usize,
        seed: u64,
    ) -> Result<EeTrainLog> {
        if self.frozen {
            return Err(CoreError::Frozen);
        }
        if data.is_empty() || batch_size == 0 {
            return Err(CoreError::invalid("training needs data and a positive batch size"));
        }
        for (spect, label) in data {
            self.check_input(spect)?;
            if *label as usize >= self.config.num_classes {
                return Err(CoreError::LabelOutOfRange {
                    label: *label as usize,
                    classes: self.config.num_classes,
                });
            }
        }
        let mut rng = rng::stage_rng(seed, "ee-train");
        let mut opt = Optimizer::adam(learning_rate);
        let mut log = EeTrainLog::default();
        let mut order: Vec<usize> = (0..data.len()).collect();

        for _epoch in 0..epochs {
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0 as Real;
            let mut correct = 0usize;
            for batch in order.chunks(batch_size) {
                let mut tape = Tape::new();
                let ids = optim::bind(&mut tape, &self.params)?;
                let mut logit_rows = Vec::with_capacity(batch.len());
                let mut labels = Vec::with_capacity(batch.len());
                for &i in batch {
                    let (spect, label) = data[i];
                    let (_, logits) = self.forward(&mut tape, &ids, spect)?;
                    let row = tape.value(logits);
                    let pred = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(core::cmp::Ordering::Equal))
                        .map(|(j, _)| j)
                        .unwrap_or(0);
                    correct += usize::from(pred == label as usize);
                    logit_rows.push(logits);
                    labels.push(label as usize);
                }
                let all_logits = tape.concat_rows(&logit_rows)?;
                let loss = tape.cross_entropy(all_logits, &labels)?;
                loss_sum += tape.value(loss)[0] * batch.len() as Real;
                tape.backward(loss)?;
                for p in &mut self.params {
                    p.zero_grad();
                }
                optim::accumulate_grads(&tape, &ids, &mut self.params);
                opt.step(&mut self.params)?;
            }
            log.epoch_loss.push(loss_sum / data.len() as Real);
            log.epoch_accuracy.push(correct as Real / data.len() as Real);
        }
        for p in &mut self.params {
            p.zero_grad();
        }
        Ok(log)
    }

    /// Mean cross-entropy of the current parameters over a dataset,
    /// without updating anything.
    pub fn eval_loss(&self, data: &[(&LogMelSpectrogram, u32)]) -> Result<Real> {
        if data.is_empty() {
            return Err(CoreError::invalid("eval over an empty dataset"));
        }
        let mut total = 0.0 as Real;
        for (spect, label) in data {
            self.check_input(spect)?;
            let mut tape = Tape::new();
            let ids = self.bind_frozen(&mut tape)?;
            let (_, logits) = self.forward(&mut tape, &ids, spect)?;
            let loss = tape.cross_entropy(logits, &[*label as usize])?;
            total += tape.value(loss)[0];
        }
        Ok(total / data.len() as Real)
    }
}
