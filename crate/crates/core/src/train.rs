//! Stochastic gradient training of the embedding network.
//!
//! With one worker, training is a pure function of the training set and the
//! seed. With more workers, disjoint mini-batches are processed concurrently
//! against shared parameters that are updated without locks; concurrent
//! updates to the same row may be lost, so results are not reproducible.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::huffman::HuffmanTree;
use crate::index::{CorpusIndex, TermId};
use crate::manifest::Manifest;
use crate::model::{rlm_gradient, rpe_gradient, EmbeddingModel, Gradient, ModelKind, ParamView, DEFAULT_DIM};
use crate::pipeline::{noise_distribution, TrainingExample, TrainingSet, DEFAULT_NOISE_EXPONENT};
use crate::sampling::TermSampler;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub dim: usize,
    pub learning_rate: f64,
    /// Queries per mini-batch; the batch gradient is the mean over queries.
    pub batch_size: usize,
    pub epochs: usize,
    /// Positive samples per query (RPE).
    pub eta_pos: usize,
    /// Negative samples per query as a multiple of `eta_pos` (RPE).
    pub eta_neg_multiple: usize,
    pub noise_exponent: f64,
    pub seed: u64,
    pub workers: usize,
    pub bias: bool,
    /// Linearly decay the learning rate towards zero over training.
    pub lr_decay: bool,
    /// RLM only: when non-zero, each query's target is replaced by the
    /// empirical distribution of this many draws from p(w|R).
    pub rlm_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::Rlm,
            dim: DEFAULT_DIM,
            learning_rate: 0.1,
            batch_size: 64,
            epochs: 5,
            eta_pos: 20,
            eta_neg_multiple: 5,
            noise_exponent: DEFAULT_NOISE_EXPONENT,
            seed: 42,
            workers: 1,
            bias: false,
            lr_decay: false,
            rlm_samples: 0,
        }
    }
}

impl TrainConfig {
    pub fn eta_neg(&self) -> usize {
        self.eta_pos * self.eta_neg_multiple
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.dim == 0 || self.batch_size == 0 || self.epochs == 0 || self.workers == 0 {
            return bad("dim, batch size, epochs and workers must all be at least 1".into());
        }
        if self.kind == ModelKind::Rpe && (self.eta_pos == 0 || self.eta_neg_multiple == 0) {
            return bad("RPE needs at least one positive and one negative sample per query".into());
        }
        if !(self.noise_exponent > 0.0) {
            return bad(format!("noise exponent must be positive, got {}", self.noise_exponent));
        }
        if self.bias && self.kind == ModelKind::Rlm {
            return bad("the output bias is only defined for RPE".into());
        }
        Ok(())
    }

    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("train.kind", self.kind)
            .set("train.dim", self.dim)
            .set("train.learning_rate", self.learning_rate)
            .set("train.batch_size", self.batch_size)
            .set("train.epochs", self.epochs)
            .set("train.eta_pos", self.eta_pos)
            .set("train.eta_neg_multiple", self.eta_neg_multiple)
            .set("train.noise_exponent", self.noise_exponent)
            .set("train.bias", self.bias)
            .set("train.lr_decay", self.lr_decay)
            .set("train.rlm_samples", self.rlm_samples)
            .set("seed", self.seed)
            .set("workers", self.workers);
        m
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EmbeddingModel,
    /// Mean per-query loss of every epoch, measured before each update.
    pub epoch_losses: Vec<f64>,
}

/// Huffman weights: aggregate relevance mass, or p(w|C) for terms that never
/// appear in any relevance distribution.
pub fn huffman_weights(index: &CorpusIndex, training: &TrainingSet) -> Vec<f64> {
    let mass = training.relevance_mass(index.vocab().len());
    mass.into_iter()
        .enumerate()
        .map(|(t, m)| if m > 0.0 { m } else { index.collection_prob(t) })
        .collect()
}

/// Trains with the noise table derived from the training set's unigram
/// counts (RPE) or without one (RLM).
pub fn train(index: &CorpusIndex, training: &TrainingSet, config: &TrainConfig) -> Result<TrainOutcome> {
    let noise = match config.kind {
        ModelKind::Rpe => Some(noise_distribution(&training.unigram, config.noise_exponent)?),
        ModelKind::Rlm => None,
    };
    train_with_noise(index, training, noise.as_deref(), config)
}

struct Samplers {
    positives: Vec<TermSampler>,
    noise: Option<TermSampler>,
}

fn build_samplers(training: &TrainingSet, noise: Option<&[f64]>, config: &TrainConfig) -> Result<Samplers> {
    let needs_positive = config.kind == ModelKind::Rpe || config.rlm_samples > 0;
    let positives = if needs_positive {
        training
            .examples
            .iter()
            .map(|ex| TermSampler::new(ex.relevance.probs()))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let noise = match config.kind {
        ModelKind::Rpe => {
            let table = noise.ok_or_else(|| Error::InvalidArgument("RPE training needs a noise table".into()))?;
            Some(TermSampler::from_dense(table)?)
        }
        ModelKind::Rlm => None,
    };
    Ok(Samplers { positives, noise })
}

/// Draws what one query needs (sampled targets or positives/negatives) and
/// computes its gradient against `view`.
fn query_gradient<P: ParamView, R: Rng>(
    view: &P,
    tree: Option<&HuffmanTree>,
    example: &TrainingExample,
    sampler_idx: usize,
    samplers: &Samplers,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Gradient> {
    match config.kind {
        ModelKind::Rlm => {
            let tree = tree.expect("RLM training has a tree");
            if config.rlm_samples == 0 {
                rlm_gradient(view, tree, &example.terms, example.relevance.probs())
            } else {
                let target = sampled_target(&samplers.positives[sampler_idx], config.rlm_samples, rng);
                rlm_gradient(view, tree, &example.terms, &target)
            }
        }
        ModelKind::Rpe => {
            let mut pos = Vec::with_capacity(config.eta_pos);
            let mut neg = Vec::with_capacity(config.eta_neg());
            samplers.positives[sampler_idx].sample_n(rng, config.eta_pos, &mut pos);
            samplers.noise.as_ref().unwrap().sample_n(rng, config.eta_neg(), &mut neg);
            rpe_gradient(view, &example.terms, &pos, &neg, config.bias)
        }
    }
}

/// Empirical distribution of `n` draws, each draw carrying weight 1/n.
pub fn sampled_target<R: Rng + ?Sized>(sampler: &TermSampler, n: usize, rng: &mut R) -> Vec<(TermId, f64)> {
    let mut draws = Vec::with_capacity(n);
    sampler.sample_n(rng, n, &mut draws);
    draws.sort_unstable();
    let w = 1.0 / n as f64;
    let mut target: Vec<(TermId, f64)> = Vec::new();
    for t in draws {
        match target.last_mut() {
            Some((last, p)) if *last == t => *p += w,
            _ => target.push((t, w)),
        }
    }
    target
}

fn learning_rate(config: &TrainConfig, done: usize, total: usize) -> f64 {
    if config.lr_decay {
        let progress = done as f64 / total.max(1) as f64;
        config.learning_rate * (1.0 - progress).max(1e-4)
    } else {
        config.learning_rate
    }
}

pub fn train_with_noise(
    index: &CorpusIndex,
    training: &TrainingSet,
    noise: Option<&[f64]>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if training.is_empty() {
        return Err(Error::NoUsableQueries);
    }
    let vocab = index.vocab();
    if let Some(n) = noise {
        if n.len() != vocab.len() {
            return Err(Error::InvalidArgument("noise table does not match the vocabulary".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tree = match config.kind {
        ModelKind::Rlm => Some(HuffmanTree::build(&huffman_weights(index, training))?),
        ModelKind::Rpe => None,
    };
    let mut model = EmbeddingModel::init(config.kind, vocab.terms().to_vec(), config.dim, tree, config.bias, &mut rng)?;
    let samplers = build_samplers(training, noise, config)?;

    let m = training.len();
    let batches_per_epoch = m.div_ceil(config.batch_size);
    let total_batches = batches_per_epoch * config.epochs;
    let mut order: Vec<usize> = (0..m).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let loss_sum = if config.workers == 1 {
            run_epoch_serial(&mut model, training, &order, &samplers, config, epoch * batches_per_epoch, total_batches, &mut rng)?
        } else {
            let epoch_seed = rng.random::<u64>();
            run_epoch_parallel(&mut model, training, &order, &samplers, config, epoch * batches_per_epoch, total_batches, epoch_seed)?
        };
        let mean = loss_sum / m as f64;
        if !mean.is_finite() {
            return Err(Error::Diverged { epoch: epoch + 1, loss: mean });
        }
        info!("epoch {}/{}: mean loss {:.6}", epoch + 1, config.epochs, mean);
        epoch_losses.push(mean);
    }
    model.validate().map_err(|_| Error::Diverged {
        epoch: config.epochs,
        loss: f64::NAN,
    })?;
    Ok(TrainOutcome { model, epoch_losses })
}

#[allow(clippy::too_many_arguments)]
fn run_epoch_serial(
    model: &mut EmbeddingModel,
    training: &TrainingSet,
    order: &[usize],
    samplers: &Samplers,
    config: &TrainConfig,
    batches_before: usize,
    total_batches: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut loss_sum = 0.0;
    for (b, batch) in order.chunks(config.batch_size).enumerate() {
        let lr = learning_rate(config, batches_before + b, total_batches);
        let mut grads = Vec::with_capacity(batch.len());
        for &i in batch {
            let g = query_gradient(&*model, model.tree(), &training.examples[i], i, samplers, config, rng)?;
            if !g.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch: batches_before / order.len().div_ceil(config.batch_size) + 1,
                    loss: g.loss,
                });
            }
            loss_sum += g.loss;
            grads.push(g);
        }
        let scale = lr / batch.len() as f64;
        for g in &grads {
            model.apply(g, scale);
        }
    }
    Ok(loss_sum)
}

/// Parameters shared between workers as relaxed atomics holding f64 bits.
struct SharedParams {
    kind: ModelKind,
    dim: usize,
    vocab_size: usize,
    query: Vec<AtomicU64>,
    output: Vec<AtomicU64>,
    bias: Option<Vec<AtomicU64>>,
}

fn to_atomic(values: &[f64]) -> Vec<AtomicU64> {
    values.iter().map(|x| AtomicU64::new(x.to_bits())).collect()
}

fn from_atomic(values: &[AtomicU64], out: &mut [f64]) {
    for (o, a) in out.iter_mut().zip(values) {
        *o = f64::from_bits(a.load(Ordering::Relaxed));
    }
}

#[inline]
fn atomic_add(cell: &AtomicU64, delta: f64) {
    let cur = f64::from_bits(cell.load(Ordering::Relaxed));
    cell.store((cur + delta).to_bits(), Ordering::Relaxed);
}

impl SharedParams {
    fn new(model: &EmbeddingModel) -> Self {
        let output = match model.kind {
            ModelKind::Rlm => &model.node_vectors,
            ModelKind::Rpe => &model.term_vectors,
        };
        SharedParams {
            kind: model.kind,
            dim: model.dim(),
            vocab_size: model.vocab_size(),
            query: to_atomic(model.query_vectors.as_slice()),
            output: to_atomic(output.as_slice()),
            bias: model.bias.as_deref().map(to_atomic),
        }
    }

    fn write_back(&self, model: &mut EmbeddingModel) {
        from_atomic(&self.query, model.query_vectors.as_mut_slice());
        let output = match self.kind {
            ModelKind::Rlm => &mut model.node_vectors,
            ModelKind::Rpe => &mut model.term_vectors,
        };
        from_atomic(&self.output, output.as_mut_slice());
        if let (Some(src), Some(dst)) = (&self.bias, &mut model.bias) {
            from_atomic(src, dst);
        }
    }

    fn apply(&self, grad: &Gradient, scale: f64) {
        let d = self.dim;
        for (t, g) in &grad.query_rows {
            for (cell, x) in self.query[t * d..(t + 1) * d].iter().zip(g) {
                atomic_add(cell, scale * x);
            }
        }
        for (r, g) in &grad.output_rows {
            for (cell, x) in self.output[r * d..(r + 1) * d].iter().zip(g) {
                atomic_add(cell, scale * x);
            }
        }
        if let Some(b) = &self.bias {
            for &(t, g) in &grad.bias {
                atomic_add(&b[t], scale * g);
            }
        }
    }
}

impl ParamView for SharedParams {
    fn dim(&self) -> usize {
        self.dim
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn read_query_row(&self, term: TermId, out: &mut [f64]) {
        from_atomic(&self.query[term * self.dim..(term + 1) * self.dim], out);
    }

    fn read_output_row(&self, row: usize, out: &mut [f64]) {
        from_atomic(&self.output[row * self.dim..(row + 1) * self.dim], out);
    }

    fn output_bias(&self, row: usize) -> f64 {
        match (&self.bias, self.kind) {
            (Some(b), ModelKind::Rpe) => f64::from_bits(b[row].load(Ordering::Relaxed)),
            _ => 0.0,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_epoch_parallel(
    model: &mut EmbeddingModel,
    training: &TrainingSet,
    order: &[usize],
    samplers: &Samplers,
    config: &TrainConfig,
    batches_before: usize,
    total_batches: usize,
    epoch_seed: u64,
) -> Result<f64> {
    let shared = SharedParams::new(model);
    let tree = model.tree.clone();
    let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
    let next = AtomicUsize::new(0);

    let results: Vec<Result<f64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.workers)
            .map(|w| {
                let (shared, tree, batches, next) = (&shared, tree.as_ref(), &batches, &next);
                scope.spawn(move || -> Result<f64> {
                    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed ^ (w as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    let mut loss = 0.0;
                    loop {
                        let b = next.fetch_add(1, Ordering::Relaxed);
                        let Some(batch) = batches.get(b) else { break };
                        let lr = learning_rate(config, batches_before + b, total_batches);
                        let mut grads = Vec::with_capacity(batch.len());
                        for &i in batch.iter() {
                            let g = query_gradient(shared, tree, &training.examples[i], i, samplers, config, &mut rng)?;
                            loss += g.loss;
                            grads.push(g);
                        }
                        let scale = lr / batch.len() as f64;
                        for g in &grads {
                            shared.apply(g, scale);
                        }
                    }
                    Ok(loss)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
    });
    shared.write_back(model);
    results.into_iter().sum()
}
