//! Toy-scale training harness: a synthetic long-range task, a small classifier
//! built around the attention layers, AdamW with freeze masks, finite-difference
//! gradient checks and the ablation sweep.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attend::Window;
use crate::attention::{mha_on_tape, Mha, MhaTrace, MhaVars};
use crate::chm::HeadSample;
use crate::config::ManarConfig;
use crate::error::{Error, Result};
use crate::manar::{manar_on_tape, AttentionTrace, ManarLayer, ManarVars};
use crate::memory::KeyMode;
use crate::params::{join, Parameters};
use crate::tensor::{finite_diff_grad, Scalar, Tape, Tensor, Var};
use crate::transfer::{copy_mha_weights, staged_unfreeze, FreezeMask};

/// Binary classification: label 1 iff the tokens at `first_position` and
/// `first_position + distance` are equal. With `distance > 2l` no ROI window holds
/// both positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongRangeTask {
    pub vocab: usize,
    /// Tokens `0..payload_vocab` appear only at the marked positions; filler
    /// tokens elsewhere are drawn from `payload_vocab..vocab`. Equal to `vocab`
    /// means no separation.
    pub payload_vocab: usize,
    pub seq_len: usize,
    pub distance: usize,
    pub half_window: usize,
    pub first_position: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for LongRangeTask {
    fn default() -> Self {
        LongRangeTask {
            vocab: 5,
            payload_vocab: 4,
            seq_len: 64,
            distance: 40,
            half_window: 8,
            first_position: 12,
            train_size: 32768,
            test_size: 512,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

impl LongRangeTask {
    pub fn marked_positions(&self) -> (usize, usize) {
        (self.first_position, self.first_position + self.distance)
    }

    pub fn validate(&self) -> Result<()> {
        if self.distance >= self.seq_len {
            return Err(Error::arg(format!(
                "pair distance {} must be below the sequence length {}",
                self.distance, self.seq_len
            )));
        }
        if self.distance <= 2 * self.half_window {
            return Err(Error::arg(format!(
                "pair distance {} must exceed 2l = {}",
                self.distance,
                2 * self.half_window
            )));
        }
        if self.first_position + self.distance >= self.seq_len {
            return Err(Error::arg("second marked position falls outside the sequence"));
        }
        if self.payload_vocab < 2 || self.payload_vocab > self.vocab {
            return Err(Error::arg(format!(
                "payload vocabulary must lie in 2..={}, got {}",
                self.vocab, self.payload_vocab
            )));
        }
        Ok(())
    }

    /// Label of a raw token sequence.
    pub fn label_of(&self, tokens: &[usize]) -> usize {
        let (a, b) = self.marked_positions();
        usize::from(tokens[a] == tokens[b])
    }

    /// Deterministic under `seed`. Each split holds exactly `⌈size/2⌉` negatives.
    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut split = |size: usize| {
            let mut out: Vec<Example> = (0..size)
                .map(|i| {
                    let label = i % 2;
                    let filler = if self.payload_vocab < self.vocab { self.payload_vocab } else { 0 };
                    let mut tokens: Vec<usize> = (0..self.seq_len).map(|_| rng.random_range(filler..self.vocab)).collect();
                    let (a, b) = self.marked_positions();
                    let pv = self.payload_vocab;
                    tokens[a] = rng.random_range(0..pv);
                    tokens[b] = if label == 1 {
                        tokens[a]
                    } else {
                        (tokens[a] + rng.random_range(1..pv)) % pv
                    };
                    Example { tokens, label }
                })
                .collect();
            out.shuffle(&mut rng);
            out
        };
        let train = split(self.train_size);
        let test = split(self.test_size);
        Ok(Dataset { train, test })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Full standard attention.
    Mha,
    /// The memory-augmented layer (`acr_size = 0` gives the window-only control).
    Manar,
}

/// Shape of the toy classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub arch: Arch,
    pub vocab: usize,
    pub seq_len: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    pub classes: usize,
    /// Layer hyperparameters; only the widths are used for [`Arch::Mha`].
    pub layer: ManarConfig,
}

impl ToyConfig {
    /// The acceptance setup: `D = 32`, two heads of width 16, `M = 16`, `m = 8`,
    /// `k_top = 2`, `l = 8`, two layers.
    pub fn long_range(task: &LongRangeTask, acr_size: usize) -> Self {
        ToyConfig {
            arch: Arch::Manar,
            vocab: task.vocab,
            seq_len: task.seq_len,
            layers: 2,
            ffn_dim: 64,
            classes: 2,
            layer: ManarConfig {
                model_dim: 32,
                heads: 2,
                head_dim: 16,
                memory_size: 16,
                acr_size,
                k_top: 2,
                half_window: task.half_window,
                key_mode: KeyMode::Flat,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.layer.validate()?;
        if self.layers == 0 || self.vocab == 0 || self.seq_len == 0 || self.classes < 2 || self.ffn_dim == 0 {
            return Err(Error::config("toy model needs layers, vocabulary, length, ffn width and two classes"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Mixer<P> {
    Mha(Mha<P>),
    Manar(ManarLayer<P>),
}

/// Pre-norm residual block: `x + mixer(LN(x))`, then `x + FFN(LN(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Block<P> {
    pub ln1_gain: P,
    pub ln1_bias: P,
    pub mixer: Mixer<P>,
    pub ln2_gain: P,
    pub ln2_bias: P,
    pub ff_w1: P,
    pub ff_b1: P,
    pub ff_w2: P,
    pub ff_b2: P,
}

/// Token and absolute position embeddings, blocks, final norm, mean pooling and
/// a linear classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyModel<P> {
    pub tok_emb: P,
    pub pos_emb: P,
    pub blocks: Vec<Block<P>>,
    pub lnf_gain: P,
    pub lnf_bias: P,
    pub head_w: P,
    pub head_b: P,
}

impl<P> ToyModel<P> {
    pub fn map_named<Q>(&self, f: &mut dyn FnMut(&str, &P) -> Q) -> ToyModel<Q> {
        let blocks = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let p = format!("block{i}");
                let mp = join(&p, "mixer");
                Block {
                    ln1_gain: f(&join(&p, "ln1.gain"), &b.ln1_gain),
                    ln1_bias: f(&join(&p, "ln1.bias"), &b.ln1_bias),
                    mixer: match &b.mixer {
                        Mixer::Mha(m) => Mixer::Mha(m.map_named(&mp, f)),
                        Mixer::Manar(m) => Mixer::Manar(m.map_named(&mp, f)),
                    },
                    ln2_gain: f(&join(&p, "ln2.gain"), &b.ln2_gain),
                    ln2_bias: f(&join(&p, "ln2.bias"), &b.ln2_bias),
                    ff_w1: f(&join(&p, "ff.w1"), &b.ff_w1),
                    ff_b1: f(&join(&p, "ff.b1"), &b.ff_b1),
                    ff_w2: f(&join(&p, "ff.w2"), &b.ff_w2),
                    ff_b2: f(&join(&p, "ff.b2"), &b.ff_b2),
                }
            })
            .collect();
        ToyModel {
            tok_emb: f("tok_emb", &self.tok_emb),
            pos_emb: f("pos_emb", &self.pos_emb),
            blocks,
            lnf_gain: f("ln_f.gain", &self.lnf_gain),
            lnf_bias: f("ln_f.bias", &self.lnf_bias),
            head_w: f("head.w", &self.head_w),
            head_b: f("head.b", &self.head_b),
        }
    }
}

impl<P> Parameters<P> for ToyModel<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a P)) {
        f(join(prefix, "tok_emb"), &self.tok_emb);
        f(join(prefix, "pos_emb"), &self.pos_emb);
        for (i, b) in self.blocks.iter().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            f(join(&p, "ln1.gain"), &b.ln1_gain);
            f(join(&p, "ln1.bias"), &b.ln1_bias);
            match &b.mixer {
                Mixer::Mha(m) => m.visit(&join(&p, "mixer"), f),
                Mixer::Manar(m) => m.visit(&join(&p, "mixer"), f),
            }
            f(join(&p, "ln2.gain"), &b.ln2_gain);
            f(join(&p, "ln2.bias"), &b.ln2_bias);
            f(join(&p, "ff.w1"), &b.ff_w1);
            f(join(&p, "ff.b1"), &b.ff_b1);
            f(join(&p, "ff.w2"), &b.ff_w2);
            f(join(&p, "ff.b2"), &b.ff_b2);
        }
        f(join(prefix, "ln_f.gain"), &self.lnf_gain);
        f(join(prefix, "ln_f.bias"), &self.lnf_bias);
        f(join(prefix, "head.w"), &self.head_w);
        f(join(prefix, "head.b"), &self.head_b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut P)) {
        f(join(prefix, "tok_emb"), &mut self.tok_emb);
        f(join(prefix, "pos_emb"), &mut self.pos_emb);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let p = join(prefix, &format!("block{i}"));
            f(join(&p, "ln1.gain"), &mut b.ln1_gain);
            f(join(&p, "ln1.bias"), &mut b.ln1_bias);
            match &mut b.mixer {
                Mixer::Mha(m) => m.visit_mut(&join(&p, "mixer"), f),
                Mixer::Manar(m) => m.visit_mut(&join(&p, "mixer"), f),
            }
            f(join(&p, "ln2.gain"), &mut b.ln2_gain);
            f(join(&p, "ln2.bias"), &mut b.ln2_bias);
            f(join(&p, "ff.w1"), &mut b.ff_w1);
            f(join(&p, "ff.b1"), &mut b.ff_b1);
            f(join(&p, "ff.w2"), &mut b.ff_w2);
            f(join(&p, "ff.b2"), &mut b.ff_b2);
        }
        f(join(prefix, "ln_f.gain"), &mut self.lnf_gain);
        f(join(prefix, "ln_f.bias"), &mut self.lnf_bias);
        f(join(prefix, "head.w"), &mut self.head_w);
        f(join(prefix, "head.b"), &mut self.head_b);
    }
}

pub type ToyWeights<T = f32> = ToyModel<Tensor<T>>;

impl<T: Scalar> ToyModel<Tensor<T>> {
    pub fn init(cfg: &ToyConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let dm = cfg.layer.model_dim;
        let ones = || Tensor::full(&[1, dm], T::one());
        let zeros = |c: usize| Tensor::zeros(&[1, c]);
        let mut blocks = Vec::with_capacity(cfg.layers);
        for _ in 0..cfg.layers {
            let mixer = match cfg.arch {
                Arch::Mha => Mixer::Mha(Mha::init(cfg.layer.heads, cfg.layer.head_dim, rng)),
                Arch::Manar => Mixer::Manar(ManarLayer::init(&cfg.layer, rng)?),
            };
            blocks.push(Block {
                ln1_gain: ones(),
                ln1_bias: zeros(dm),
                mixer,
                ln2_gain: ones(),
                ln2_bias: zeros(dm),
                ff_w1: Tensor::glorot(dm, cfg.ffn_dim, rng),
                ff_b1: zeros(cfg.ffn_dim),
                ff_w2: Tensor::glorot(cfg.ffn_dim, dm, rng),
                ff_b2: zeros(dm),
            });
        }
        Ok(ToyModel {
            tok_emb: Tensor::randn(cfg.vocab, dm, 1.0, rng),
            pos_emb: Tensor::randn(cfg.seq_len, dm, 1.0, rng),
            blocks,
            lnf_gain: ones(),
            lnf_bias: zeros(dm),
            head_w: Tensor::glorot(dm, cfg.classes, rng),
            head_b: zeros(cfg.classes),
        })
    }

    pub fn cast<U: Scalar>(&self) -> ToyModel<Tensor<U>> {
        self.map_named(&mut |_, t| t.cast())
    }
}

pub(crate) enum LayerVars {
    Mha(MhaVars),
    Manar(ManarVars),
}

/// Records one sequence through the model; returns `1×classes` logits.
pub(crate) fn forward_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    model: &ToyModel<Var>,
    cfg: &ToyConfig,
    tokens: &[usize],
) -> Result<(Var, Vec<LayerVars>)> {
    if tokens.len() != cfg.seq_len {
        return Err(Error::arg(format!(
            "sequence has {} tokens, model expects {}",
            tokens.len(),
            cfg.seq_len
        )));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t >= cfg.vocab) {
        return Err(Error::arg(format!("token {t} outside vocabulary of {}", cfg.vocab)));
    }
    let emb = tape.gather_rows(model.tok_emb, tokens)?;
    let mut x = tape.add(emb, model.pos_emb)?;
    let mut layers = Vec::with_capacity(model.blocks.len());
    for b in &model.blocks {
        let h = tape.layer_norm(x, b.ln1_gain, b.ln1_bias)?;
        let (mixed, vars) = match &b.mixer {
            Mixer::Mha(m) => {
                let v = mha_on_tape(tape, h, m, Window::Full)?;
                (v.out, LayerVars::Mha(v))
            }
            Mixer::Manar(m) => {
                let v = manar_on_tape(tape, h, m, &cfg.layer)?;
                (v.out, LayerVars::Manar(v))
            }
        };
        layers.push(vars);
        x = tape.add(x, mixed)?;
        let h = tape.layer_norm(x, b.ln2_gain, b.ln2_bias)?;
        let h = tape.matmul(h, b.ff_w1)?;
        let h = tape.add_row(h, b.ff_b1)?;
        let h = tape.gelu(h);
        let h = tape.matmul(h, b.ff_w2)?;
        let h = tape.add_row(h, b.ff_b2)?;
        x = tape.add(x, h)?;
    }
    let x = tape.layer_norm(x, model.lnf_gain, model.lnf_bias)?;
    let pooled = tape.mean_rows(x);
    let logits = tape.matmul(pooled, model.head_w)?;
    Ok((tape.add_row(logits, model.head_b)?, layers))
}

fn leaves<T: Scalar>(tape: &mut Tape<T>, model: &ToyWeights<T>, mask: Option<&FreezeMask>) -> ToyModel<Var> {
    model.map_named(&mut |name, t| {
        let trainable = mask.is_none_or(|m| m.is_trainable(name));
        tape.leaf(t.clone(), trainable && mask.is_some())
    })
}

/// Mean cross-entropy and logits of a batch, without gradients.
pub fn evaluate<T: Scalar>(model: &ToyWeights<T>, cfg: &ToyConfig, batch: &[Example]) -> Result<(f64, Vec<Vec<T>>)> {
    let mut total = 0.0;
    let mut logits = Vec::with_capacity(batch.len());
    for ex in batch {
        let mut tape = Tape::new();
        let vars = leaves(&mut tape, model, None);
        let (l, _) = forward_on_tape(&mut tape, &vars, cfg, &ex.tokens)?;
        let loss = tape.cross_entropy(l, &[ex.label])?;
        total += tape.value(loss).data()[0].as_f64();
        logits.push(tape.value(l).data().to_vec());
    }
    Ok((total / batch.len().max(1) as f64, logits))
}

/// Fraction of examples whose argmax logit equals the label.
pub fn accuracy<T: Scalar>(model: &ToyWeights<T>, cfg: &ToyConfig, batch: &[Example]) -> Result<f64> {
    let (_, logits) = evaluate(model, cfg, batch)?;
    let correct = logits
        .iter()
        .zip(batch)
        .filter(|(l, ex)| {
            let best = (0..l.len()).fold(0, |b, j| if l[j] > l[b] { j } else { b });
            best == ex.label
        })
        .count();
    Ok(correct as f64 / batch.len().max(1) as f64)
}

/// Loss and gradients of a batch. Parameters frozen by `mask` get no gradient.
pub fn loss_and_grads<T: Scalar>(
    model: &ToyWeights<T>,
    cfg: &ToyConfig,
    batch: &[Example],
    mask: &FreezeMask,
) -> Result<(f64, Vec<(String, Tensor<T>)>)> {
    let mut tape = Tape::new();
    let vars = leaves(&mut tape, model, Some(mask));
    let mut all = Vec::with_capacity(batch.len());
    for ex in batch {
        all.push(forward_on_tape(&mut tape, &vars, cfg, &ex.tokens)?.0);
    }
    let logits = tape.concat_rows(&all)?;
    let targets: Vec<usize> = batch.iter().map(|e| e.label).collect();
    let loss = tape.cross_entropy(logits, &targets)?;
    tape.backward(loss)?;
    let mut grads = Vec::new();
    vars.visit("", &mut |name, v| {
        if tape.requires_grad(*v) {
            let g = tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(*v).shape()));
            grads.push((name, g));
        }
    });
    Ok((tape.value(loss).data()[0].as_f64(), grads))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWSettings {
    fn default() -> Self {
        AdamWSettings {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW moments and per-parameter step counts, keyed by parameter name.
#[derive(Clone, Debug)]
pub struct OptimizerState<T: Scalar = f32> {
    pub settings: AdamWSettings,
    slots: std::collections::BTreeMap<String, (Tensor<T>, Tensor<T>, u64)>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(settings: AdamWSettings) -> Self {
        OptimizerState {
            settings,
            slots: Default::default(),
        }
    }

    /// Updates exactly the parameters named in `grads`; everything else is untouched.
    pub fn step(&mut self, model: &mut impl Parameters<Tensor<T>>, grads: &[(String, Tensor<T>)]) {
        let s = self.settings;
        let lookup: std::collections::HashMap<&str, &Tensor<T>> = grads.iter().map(|(n, g)| (n.as_str(), g)).collect();
        let slots = &mut self.slots;
        model.visit_mut("", &mut |name, p| {
            let Some(g) = lookup.get(name.as_str()) else {
                return;
            };
            let (m, v, t) = slots
                .entry(name)
                .or_insert_with(|| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape()), 0));
            *t += 1;
            let bc1 = 1.0 - s.beta1.powi(*t as i32);
            let bc2 = 1.0 - s.beta2.powi(*t as i32);
            let (b1, b2) = (T::lit(s.beta1), T::lit(s.beta2));
            let (lr, wd, eps) = (T::lit(s.lr), T::lit(s.weight_decay), T::lit(s.eps));
            let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
            let pd = p.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                let mi = b1 * m.data()[i] + (T::one() - b1) * gi;
                let vi = b2 * v.data()[i] + (T::one() - b2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let update = (mi / bc1) / ((vi / bc2).sqrt() + eps);
                pd[i] = pd[i] - lr * (update + wd * pd[i]);
            }
        });
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWSettings,
    /// Seed for batch sampling.
    pub seed: u64,
    /// Mask applies before this step; all parameters trainable from it on.
    pub thaw_step: Option<usize>,
    /// Training examples used for the initial and final loss.
    pub eval_examples: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            steps: 2000,
            batch_size: 16,
            optimizer: AdamWSettings::default(),
            seed: 0,
            thaw_step: None,
            eval_examples: 256,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Scalar = f32> {
    pub weights: ToyWeights<T>,
    /// Minibatch loss at every step.
    pub losses: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub test_accuracy: f64,
}

/// Trains `weights` in place of a copy. `on_step(step, weights)` runs after every
/// update. Fails with the step index if the loss stops being finite.
pub fn train_model<T: Scalar>(
    cfg: &ToyConfig,
    weights: &ToyWeights<T>,
    data: &Dataset,
    settings: &TrainSettings,
    mask: &FreezeMask,
    mut on_step: impl FnMut(usize, &ToyWeights<T>),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.train.is_empty() || settings.batch_size == 0 {
        return Err(Error::arg("training needs examples and a positive batch size"));
    }
    let eval_set = &data.train[..settings.eval_examples.min(data.train.len())];
    let mut w = weights.clone();
    let (initial_loss, _) = evaluate(&w, cfg, eval_set)?;
    let mut opt = OptimizerState::new(settings.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut losses = Vec::with_capacity(settings.steps);
    for step in 0..settings.steps {
        let active = match settings.thaw_step {
            Some(k) => staged_unfreeze(mask, step, k),
            None => mask.clone(),
        };
        let batch: Vec<Example> = (0..settings.batch_size)
            .map(|_| data.train[rng.random_range(0..data.train.len())].clone())
            .collect();
        let (loss, grads) = loss_and_grads(&w, cfg, &batch, &active)?;
        if !loss.is_finite() {
            return Err(Error::Training { step, loss });
        }
        opt.step(&mut w, &grads);
        losses.push(loss);
        if step % 100 == 0 {
            log::debug!("step {step}: loss {loss:.4}");
        }
        on_step(step, &w);
    }
    let (final_loss, _) = evaluate(&w, cfg, eval_set)?;
    if !final_loss.is_finite() {
        return Err(Error::Training { step: settings.steps, loss: final_loss });
    }
    let test_accuracy = accuracy(&w, cfg, &data.test)?;
    Ok(TrainOutcome {
        weights: w,
        losses,
        initial_loss,
        final_loss,
        test_accuracy,
    })
}

/// Minimum loss of each consecutive `window`-step block of the curve.
pub fn windowed_minima(losses: &[f64], window: usize) -> Vec<f64> {
    losses
        .chunks(window.max(1))
        .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
        .collect()
}

/// Copies every block's attention weights from a standard-attention model into a
/// memory-augmented one, plus embeddings, norms, feed-forward and head. Everything
/// copied is frozen; only the memory path stays trainable.
pub fn transfer_model<T: Scalar>(src: &ToyWeights<T>, dst: &mut ToyWeights<T>) -> Result<FreezeMask> {
    if src.blocks.len() != dst.blocks.len() {
        return Err(Error::config("source and destination differ in depth"));
    }
    let mut mask = FreezeMask::default();
    let mut shared: Vec<(String, Tensor<T>)> = Vec::new();
    src.visit("", &mut |name, t| {
        if !name.contains(".mixer.") {
            shared.push((name, t.clone()));
        }
    });
    let lookup: std::collections::HashMap<String, Tensor<T>> = shared.into_iter().collect();
    let mut err = None;
    dst.visit_mut("", &mut |name, t| {
        if let Some(s) = lookup.get(&name) {
            if s.shape() != t.shape() {
                err = Some(Error::config(format!("shape mismatch for {name}")));
            }
            *t = s.clone();
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    for name in lookup.keys() {
        mask.set(name, false);
    }
    for (i, (s, d)) in src.blocks.iter().zip(dst.blocks.iter_mut()).enumerate() {
        let (Mixer::Mha(s), Mixer::Manar(d)) = (&s.mixer, &mut d.mixer) else {
            return Err(Error::config("transfer goes from standard attention blocks to memory blocks"));
        };
        mask.extend(copy_mha_weights(s, d, &format!("block{i}.mixer"))?);
    }
    Ok(mask)
}

/// Per-layer intermediates of one sequence.
#[derive(Clone, Debug)]
pub enum LayerTrace<T = f32> {
    Mha(MhaTrace<T>),
    Manar(AttentionTrace<T>),
}

pub fn trace_model<T: Scalar>(model: &ToyWeights<T>, cfg: &ToyConfig, tokens: &[usize]) -> Result<Vec<LayerTrace<T>>> {
    let mut tape = Tape::new();
    let vars = leaves(&mut tape, model, None);
    let (_, lv) = forward_on_tape(&mut tape, &vars, cfg, tokens)?;
    Ok(lv
        .iter()
        .map(|l| match l {
            LayerVars::Mha(m) => LayerTrace::Mha(m.trace(&tape)),
            LayerVars::Manar(m) => LayerTrace::Manar(m.trace(&tape, &cfg.layer)),
        })
        .collect())
}

/// Per-layer head samples (token values and pre-projection outputs) of a batch,
/// for the convex hull report.
pub fn chm_samples(model: &ToyWeights<f64>, cfg: &ToyConfig, batch: &[Example]) -> Result<Vec<Vec<HeadSample>>> {
    let mut layers: Vec<Vec<HeadSample>> = (0..cfg.layers).map(|_| Vec::new()).collect();
    for ex in batch {
        let mut tape = Tape::new();
        let vars = leaves(&mut tape, model, None);
        let (_, lv) = forward_on_tape(&mut tape, &vars, cfg, &ex.tokens)?;
        for (slot, l) in layers.iter_mut().zip(&lv) {
            match l {
                LayerVars::Mha(m) => slot.extend(m.heads.iter().map(|h| HeadSample {
                    values: tape.value(h.v).clone(),
                    outputs: tape.value(h.out).clone(),
                })),
                LayerVars::Manar(m) => slot.extend(m.heads.iter().map(|h| HeadSample {
                    values: tape.value(h.v).clone(),
                    outputs: tape.value(h.out).clone(),
                })),
            }
        }
    }
    Ok(layers)
}

/// Maximum relative gradient error of one parameter group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupError {
    pub name: String,
    pub rel_error: f64,
    /// Entries skipped because a perturbation changed a top-k selection.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupError>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.rel_error).fold(0.0, f64::max)
    }
}

fn selection_signature(tape: &Tape<f64>, layers: &[LayerVars]) -> Vec<usize> {
    let mut sig = Vec::new();
    for l in layers {
        if let LayerVars::Manar(m) = l {
            for h in &m.heads {
                if let Some(c) = h.concepts {
                    for s in tape.selections(c).unwrap_or(&[]) {
                        sig.extend(&s.indices);
                    }
                }
            }
        }
    }
    sig
}

fn loss_with_signature(model: &ToyWeights<f64>, cfg: &ToyConfig, batch: &[Example]) -> Result<(f64, Vec<usize>)> {
    let mut tape = Tape::new();
    let vars = leaves(&mut tape, model, None);
    let mut all = Vec::new();
    let mut sig = Vec::new();
    for ex in batch {
        let (l, lv) = forward_on_tape(&mut tape, &vars, cfg, &ex.tokens)?;
        sig.extend(selection_signature(&tape, &lv));
        all.push(l);
    }
    let logits = tape.concat_rows(&all)?;
    let targets: Vec<usize> = batch.iter().map(|e| e.label).collect();
    let loss = tape.cross_entropy(logits, &targets)?;
    Ok((tape.value(loss).data()[0], sig))
}

/// Tape gradients of the cross-entropy loss against central differences, for every
/// parameter group of a freshly initialised 64-bit model. Perturbations that flip
/// a top-k selection are skipped; those entries have no gradient by design.
pub fn gradcheck_model(cfg: &ToyConfig, seed: u64, step: f64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = ToyWeights::<f64>::init(cfg, &mut rng)?;
    let batch: Vec<Example> = (0..2)
        .map(|i| Example {
            tokens: (0..cfg.seq_len).map(|_| rng.random_range(0..cfg.vocab)).collect(),
            label: i % cfg.classes,
        })
        .collect();
    let all = FreezeMask::all_trainable(&model, "");
    let (_, grads) = loss_and_grads(&model, cfg, &batch, &all)?;
    let (_, base_sig) = loss_with_signature(&model, cfg, &batch)?;
    let mut groups = Vec::with_capacity(grads.len());
    for (name, analytic) in grads {
        let probe = |x: &Tensor<f64>| -> f64 {
            let mut m = model.clone();
            m.visit_mut("", &mut |n, t| {
                if n == name {
                    *t = x.clone();
                }
            });
            let (loss, sig) = loss_with_signature(&m, cfg, &batch).expect("probe forward");
            if sig != base_sig {
                f64::NAN
            } else {
                loss
            }
        };
        let current = model.named().into_iter().find(|(n, _)| *n == name).map(|(_, t)| t.clone());
        let current = current.expect("gradient names match parameters");
        let numeric = finite_diff_grad(probe, &current, step);
        let skipped = numeric.data().iter().filter(|v| v.is_nan()).count();
        let mut diff: f64 = 0.0;
        let mut scale: f64 = 1e-6;
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            if n.is_nan() {
                continue;
            }
            diff = diff.max((a - n).abs());
            scale = scale.max(a.abs()).max(n.abs());
        }
        groups.push(GroupError {
            name,
            rel_error: diff / scale,
            skipped,
        });
    }
    Ok(GradcheckReport { groups })
}

/// Small configurations for [`gradcheck_model`]: `n = 6`, `d = 2`, `M = 4`.
pub fn gradcheck_config(arch: Arch, key_mode: KeyMode) -> ToyConfig {
    ToyConfig {
        arch,
        vocab: 5,
        seq_len: 6,
        layers: 2,
        ffn_dim: 6,
        classes: 2,
        layer: ManarConfig {
            model_dim: 4,
            heads: 2,
            head_dim: 2,
            memory_size: 4,
            acr_size: 2,
            k_top: 2,
            half_window: 2,
            key_mode,
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Context window `C` against ACR size `m`, memory fixed.
    CwlAcr,
    /// Memory size `M` against ACR size `m`, window fixed.
    MemAcr,
}

impl SweepAxis {
    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::CwlAcr => "cwl-acr",
            SweepAxis::MemAcr => "mem-acr",
        }
    }

    /// Grid cells as `(M, m, C)`.
    pub fn grid(self) -> Vec<(usize, usize, usize)> {
        let acr = [2, 4, 8];
        match self {
            SweepAxis::CwlAcr => [4, 8, 16]
                .iter()
                .flat_map(|&c| acr.iter().map(move |&m| (16, m, c)))
                .collect(),
            SweepAxis::MemAcr => [4, 16, 64]
                .iter()
                .flat_map(|&big_m| acr.iter().map(move |&m| (big_m, m, 16)))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub memory_size: usize,
    pub acr_size: usize,
    pub context_window: usize,
    pub seed: u64,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub test_accuracy: f64,
}

pub const SWEEP_CSV_HEADER: [&str; 9] = [
    "axis",
    "memory_size",
    "acr_size",
    "context_window",
    "seed",
    "steps",
    "initial_loss",
    "final_loss",
    "test_accuracy",
];

/// Trains one toy model per grid cell on the long-range task. Cells run in order
/// with a per-cell seed derived from `seed`.
pub fn run_sweep(
    axis: SweepAxis,
    task: &LongRangeTask,
    settings: &TrainSettings,
    seed: u64,
    mut on_row: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (big_m, m, c) in axis.grid() {
        let task = LongRangeTask {
            half_window: c / 2,
            seed,
            ..*task
        };
        let data = task.generate()?;
        let mut cfg = ToyConfig::long_range(&task, m);
        cfg.layer.memory_size = big_m;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = ToyWeights::<f32>::init(&cfg, &mut rng)?;
        let mask = FreezeMask::all_trainable(&w, "");
        let s = TrainSettings { seed, ..*settings };
        let out = train_model(&cfg, &w, &data, &s, &mask, |_, _| {})?;
        let row = SweepRow {
            axis: axis.label().to_string(),
            memory_size: big_m,
            acr_size: m,
            context_window: c,
            seed,
            steps: s.steps,
            initial_loss: out.initial_loss,
            final_loss: out.final_loss,
            test_accuracy: out.test_accuracy,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    crate::csvio::write_records(rows, &SWEEP_CSV_HEADER, path)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    crate::csvio::read_records(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub loss: f64,
}

pub fn write_loss_csv(losses: &[f64], path: &Path) -> Result<()> {
    let rows: Vec<LossRow> = losses.iter().enumerate().map(|(step, &loss)| LossRow { step, loss }).collect();
    crate::csvio::write_records(&rows, &["step", "loss"], path)
}
