//! Character-level ConvNet + BiLSTM classifier.
//!
//! ```text
//! one-hot [l, d]
//!   -> (conv1d + ReLU + maxpool) per kernel width
//!   -> forward LSTM final state ++ backward LSTM final state
//!   -> dense + ReLU -> dropout -> dense -> softmax
//! ```
//!
//! Convolutions are unpadded with stride 1; pooling is non-overlapping with
//! the remainder dropped. [`ClstmConfig::stage_lengths`] checks that a
//! configuration leaves a non-empty sequence for the LSTMs.

use std::fmt::Write as _;
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::{Charset, Corpus, Label};
use crate::envelope::{self, Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::ops::{conv1d_len, maxpool1d_len};
use crate::nn::{AdamConfig, AdamState, Tape, Tensor, Var};
use crate::scores::Scores;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LIDC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ClstmConfig {
    pub seq_len: usize,
    /// One-hot width; equals the charset size (UNK included) once trained.
    pub charset_dim: usize,
    pub conv_features: usize,
    pub conv_kernels: Vec<usize>,
    pub pool: usize,
    pub lstm_hidden: usize,
    pub dense_units: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClstmConfig {
    fn default() -> Self {
        ClstmConfig {
            seq_len: 256,
            charset_dim: 218,
            conv_features: 256,
            conv_kernels: vec![7, 7, 3],
            pool: 3,
            lstm_hidden: 128,
            dense_units: 1024,
            dropout_rate: 0.5,
            num_classes: 12,
            adam: AdamConfig::default(),
            epochs: 20,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl ClstmConfig {
    /// Sequence length after each conv and each pool, in pipeline order.
    pub fn stage_lengths(&self) -> Result<Vec<usize>> {
        let mut len = self.seq_len;
        let mut out = Vec::with_capacity(2 * self.conv_kernels.len());
        for (i, &width) in self.conv_kernels.iter().enumerate() {
            len = conv1d_len(len, width)
                .map_err(|_| Error::Config(format!("conv stage {} (width {width}) gets only {len} steps", i + 1)))?;
            out.push(len);
            len = maxpool1d_len(len, self.pool)
                .map_err(|_| Error::Config(format!("pool stage {} (size {}) gets only {len} steps", i + 1, self.pool)))?;
            out.push(len);
        }
        Ok(out)
    }

    /// Length of the sequence entering the LSTMs.
    pub fn lstm_steps(&self) -> Result<usize> {
        Ok(*self.stage_lengths()?.last().unwrap_or(&self.seq_len))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("seq_len", self.seq_len),
            ("charset_dim", self.charset_dim),
            ("conv_features", self.conv_features),
            ("pool", self.pool),
            ("lstm_hidden", self.lstm_hidden),
            ("dense_units", self.dense_units),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.conv_kernels.is_empty() {
            return Err(Error::Config("at least one conv stage is required".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes must be >= 2, got {}", self.num_classes)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate)));
        }
        let a = &self.adam;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(a.lr) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !positive(a.eps) {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        self.stage_lengths().map(|_| ())
    }

    /// Sets one field from its textual form, as used by config files and CLI
    /// overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
        }
        match key {
            "seq_len" => self.seq_len = parse(key, value)?,
            "charset_dim" => self.charset_dim = parse(key, value)?,
            "conv_features" => self.conv_features = parse(key, value)?,
            "conv_kernels" => {
                self.conv_kernels = value
                    .split(',')
                    .map(|v| parse(key, v))
                    .collect::<Result<_>>()?
            }
            "pool" => self.pool = parse(key, value)?,
            "lstm_hidden" => self.lstm_hidden = parse(key, value)?,
            "dense_units" => self.dense_units = parse(key, value)?,
            "dropout_rate" => self.dropout_rate = parse(key, value)?,
            "num_classes" => self.num_classes = parse(key, value)?,
            "lr" => self.adam.lr = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "eps" => self.adam.eps = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses a flat `key = value` file over the defaults. `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ClstmConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Format {
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            cfg.set(k.trim(), v).map_err(|e| Error::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let kernels: Vec<String> = self.conv_kernels.iter().map(|k| k.to_string()).collect();
        let mut s = String::new();
        for (k, v) in [
            ("seq_len", self.seq_len.to_string()),
            ("charset_dim", self.charset_dim.to_string()),
            ("conv_features", self.conv_features.to_string()),
            ("conv_kernels", kernels.join(",")),
            ("pool", self.pool.to_string()),
            ("lstm_hidden", self.lstm_hidden.to_string()),
            ("dense_units", self.dense_units.to_string()),
            ("dropout_rate", self.dropout_rate.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("lr", self.adam.lr.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("eps", self.adam.eps.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
        ] {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernels: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Every learnable tensor of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ClstmParams {
    pub conv: Vec<ConvLayer>,
    pub lstm_fwd: LstmParams,
    pub lstm_bwd: LstmParams,
    pub hidden: DenseLayer,
    pub output: DenseLayer,
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

impl ClstmParams {
    /// Glorot-uniform weights, zero biases, forget-gate biases at 1.
    pub fn init(config: &ClstmConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let f = config.conv_features;
        let mut in_ch = config.charset_dim;
        let mut conv = Vec::with_capacity(config.conv_kernels.len());
        for &w in &config.conv_kernels {
            conv.push(ConvLayer {
                kernels: glorot(&mut rng, &[f, w, in_ch], w * in_ch, w * f),
                bias: Tensor::zeros(&[f]),
            });
            in_ch = f;
        }
        let h = config.lstm_hidden;
        let lstm = |rng: &mut ChaCha8Rng| {
            let mut bias = Tensor::zeros(&[4 * h]);
            bias.data_mut()[h..2 * h].fill(1.0);
            LstmParams {
                w_ih: glorot(rng, &[4 * h, f], f, 4 * h),
                w_hh: glorot(rng, &[4 * h, h], h, 4 * h),
                bias,
            }
        };
        let lstm_fwd = lstm(&mut rng);
        let lstm_bwd = lstm(&mut rng);
        let d = config.dense_units;
        let k = config.num_classes;
        Ok(ClstmParams {
            conv,
            lstm_fwd,
            lstm_bwd,
            hidden: DenseLayer {
                weights: glorot(&mut rng, &[d, 2 * h], 2 * h, d),
                bias: Tensor::zeros(&[d]),
            },
            output: DenseLayer {
                weights: glorot(&mut rng, &[k, d], d, k),
                bias: Tensor::zeros(&[k]),
            },
        })
    }

    /// Parameters in a fixed canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for c in &self.conv {
            v.push(&c.kernels);
            v.push(&c.bias);
        }
        for l in [&self.lstm_fwd, &self.lstm_bwd] {
            v.extend([&l.w_ih, &l.w_hh, &l.bias]);
        }
        v.extend([&self.hidden.weights, &self.hidden.bias, &self.output.weights, &self.output.bias]);
        v
    }

    /// Same order as [`ClstmParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for c in &mut self.conv {
            v.push(&mut c.kernels);
            v.push(&mut c.bias);
        }
        for l in [&mut self.lstm_fwd, &mut self.lstm_bwd] {
            v.push(&mut l.w_ih);
            v.push(&mut l.w_hh);
            v.push(&mut l.bias);
        }
        v.push(&mut self.hidden.weights);
        v.push(&mut self.hidden.bias);
        v.push(&mut self.output.weights);
        v.push(&mut self.output.bias);
        v
    }

    /// Names aligned with [`ClstmParams::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut v = Vec::new();
        for i in 0..self.conv.len() {
            v.push(format!("conv{}.kernels", i + 1));
            v.push(format!("conv{}.bias", i + 1));
        }
        for d in ["lstm_fwd", "lstm_bwd"] {
            for p in ["w_ih", "w_hh", "bias"] {
                v.push(format!("{d}.{p}"));
            }
        }
        v.extend(["hidden.weights", "hidden.bias", "output.weights", "output.bias"].map(String::from));
        v
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn check_shapes(&self, config: &ClstmConfig) -> Result<()> {
        let reference = ClstmParams::shapes(config);
        let actual: Vec<Vec<usize>> = self.tensors().iter().map(|t| t.shape().to_vec()).collect();
        if reference != actual {
            return Err(Error::Shape("parameter shapes do not match the configuration".into()));
        }
        Ok(())
    }

    fn shapes(config: &ClstmConfig) -> Vec<Vec<usize>> {
        let (f, h, d, k) = (
            config.conv_features,
            config.lstm_hidden,
            config.dense_units,
            config.num_classes,
        );
        let mut v = Vec::new();
        let mut in_ch = config.charset_dim;
        for &w in &config.conv_kernels {
            v.push(vec![f, w, in_ch]);
            v.push(vec![f]);
            in_ch = f;
        }
        for _ in 0..2 {
            v.extend([vec![4 * h, f], vec![4 * h, h], vec![4 * h]]);
        }
        v.extend([vec![d, 2 * h], vec![d], vec![k, d], vec![k]]);
        v
    }
}

/// One-hot rows for the first `l` characters of `text`; later rows are zero.
pub fn encode(text: &str, charset: &Charset, l: usize) -> Tensor {
    let d = charset.size();
    let mut m = Tensor::zeros(&[l, d]);
    let data = m.data_mut();
    for (t, c) in text.chars().take(l).enumerate() {
        data[t * d + charset.lookup(c)] = 1.0;
    }
    m
}

/// Encoded inputs and class targets for one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub inputs: Vec<Tensor>,
    pub targets: Vec<usize>,
}

impl EncodedBatch {
    pub fn encode<'a>(
        items: impl IntoIterator<Item = (&'a str, usize)>,
        charset: &Charset,
        l: usize,
    ) -> Self {
        let (inputs, targets) = items
            .into_iter()
            .map(|(text, target)| (encode(text, charset, l), target))
            .unzip();
        EncodedBatch { inputs, targets }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// splitmix64 finalizer, for deriving independent per-use seeds.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct ParamVars {
    vars: Vec<Var>,
}

fn record_params(tape: &mut Tape, params: &ClstmParams) -> Result<ParamVars> {
    let vars = params
        .tensors()
        .into_iter()
        .map(|t| tape.param(t.clone()))
        .collect::<Result<_>>()?;
    Ok(ParamVars { vars })
}

/// Records one instance and returns its logits node.
fn record_instance(
    tape: &mut Tape,
    pv: &ParamVars,
    config: &ClstmConfig,
    input: &Tensor,
    train: bool,
    dropout_seed: u64,
) -> Result<Var> {
    if input.shape() != [config.seq_len, config.charset_dim] {
        return Err(Error::Shape(format!(
            "input {:?} does not match [{}, {}]",
            input.shape(),
            config.seq_len,
            config.charset_dim
        )));
    }
    let p = &pv.vars;
    let mut x = tape.constant(input.clone())?;
    let stages = config.conv_kernels.len();
    for s in 0..stages {
        x = tape.conv1d(x, p[2 * s], p[2 * s + 1])?;
        x = tape.relu(x)?;
        x = tape.maxpool1d(x, config.pool)?;
    }
    let base = 2 * stages;
    let steps = tape.value(x)?.dims2()?.0;
    let fwd = tape.lstm(x, p[base], p[base + 1], p[base + 2], false)?;
    let bwd = tape.lstm(x, p[base + 3], p[base + 4], p[base + 5], true)?;
    let fwd_last = tape.row(fwd, steps - 1)?;
    let bwd_last = tape.row(bwd, 0)?;
    let merged = tape.concat(&[fwd_last, bwd_last])?;
    let hidden = tape.dense(merged, p[base + 6], p[base + 7])?;
    let hidden = tape.relu(hidden)?;
    let hidden = tape.dropout(hidden, config.dropout_rate, dropout_seed, train)?;
    tape.dense(hidden, p[base + 8], p[base + 9])
}

/// Result of a batch forward pass (and, when requested, backward pass).
pub struct BatchOutput {
    pub loss: f64,
    pub probs: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub grads: Option<Vec<Tensor>>,
}

fn run_batch(
    params: &ClstmParams,
    config: &ClstmConfig,
    batch: &EncodedBatch,
    train: bool,
    seed: u64,
    want_grads: bool,
) -> Result<BatchOutput> {
    if batch.is_empty() || batch.inputs.len() != batch.targets.len() {
        return Err(Error::Shape("batch must hold one target per input".into()));
    }
    let mut tape = Tape::new();
    let pv = record_params(&mut tape, params)?;
    let mut losses = Vec::with_capacity(batch.len());
    let mut probs = Vec::with_capacity(batch.len());
    let mut logits = Vec::with_capacity(batch.len());
    for (i, (input, &target)) in batch.inputs.iter().zip(&batch.targets).enumerate() {
        let z = record_instance(&mut tape, &pv, config, input, train, mix(seed, i as u64, 0xd0))?;
        logits.push(tape.value(z)?.data().to_vec());
        let (loss, p) = tape.softmax_cross_entropy(z, target)?;
        losses.push(loss);
        probs.push(p.into_data());
    }
    let loss_var = tape.mean(&losses)?;
    let loss = tape.value(loss_var)?.data()[0];
    let grads = if want_grads {
        let g = tape.backward(loss_var)?;
        Some(pv.vars.iter().map(|&v| g.wrt(v)).collect::<Result<_>>()?)
    } else {
        None
    };
    Ok(BatchOutput {
        loss,
        probs,
        logits,
        grads,
    })
}

/// Mean cross-entropy over the batch and per-row class probabilities.
pub fn forward(
    params: &ClstmParams,
    config: &ClstmConfig,
    batch: &EncodedBatch,
    train: bool,
    seed: u64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    params.check_shapes(config)?;
    let out = run_batch(params, config, batch, train, seed, false)?;
    Ok((out.loss, out.probs))
}

/// Loss plus gradients aligned with [`ClstmParams::tensors`].
pub fn loss_and_gradients(
    params: &ClstmParams,
    config: &ClstmConfig,
    batch: &EncodedBatch,
    train: bool,
    seed: u64,
) -> Result<(f64, Vec<Tensor>)> {
    params.check_shapes(config)?;
    let out = run_batch(params, config, batch, train, seed, true)?;
    Ok((out.loss, out.grads.expect("requested")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: Option<f64>,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,dev_accuracy\n");
    for r in history {
        let dev = r.dev_accuracy.map(|a| a.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, dev);
    }
    s
}

/// A trained network together with everything needed to apply it.
#[derive(Debug, Clone, PartialEq)]
pub struct ClstmModel {
    pub config: ClstmConfig,
    pub charset: Charset,
    pub labels: Vec<Label>,
    pub params: ClstmParams,
}

impl ClstmModel {
    /// Mini-batch Adam over seeded shuffles. Keeps the parameters from the
    /// epoch with the best dev accuracy (earliest on ties), or the last epoch
    /// when `dev` is empty.
    pub fn train(
        corpus: &Corpus,
        dev: &Corpus,
        charset: &Charset,
        mut config: ClstmConfig,
    ) -> Result<(ClstmModel, Vec<EpochRecord>)> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        config.charset_dim = charset.size();
        config.num_classes = corpus.labels().len();
        config.validate()?;
        let labels = corpus.labels().to_vec();
        let targets: Vec<usize> = corpus
            .instances()
            .iter()
            .map(|inst| corpus.label_index(&inst.label.code).expect("label set covers instances"))
            .collect();

        let mut model = ClstmModel {
            params: ClstmParams::init(&config)?,
            config,
            charset: charset.clone(),
            labels,
        };
        let mut adam = AdamState::new(model.config.adam, model.params.tensors());
        let mut history = Vec::with_capacity(model.config.epochs);
        let mut best: Option<(f64, ClstmParams)> = None;
        let mut order: Vec<usize> = (0..corpus.len()).collect();

        for epoch in 1..=model.config.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(model.config.seed, epoch as u64, 0x5f));
            order.shuffle(&mut rng);
            let mut loss_sum = 0.0;
            for (b, chunk) in order.chunks(model.config.batch_size).enumerate() {
                let batch = EncodedBatch::encode(
                    chunk
                        .iter()
                        .map(|&i| (corpus.instances()[i].text.as_str(), targets[i])),
                    &model.charset,
                    model.config.seq_len,
                );
                let seed = mix(model.config.seed, epoch as u64, b as u64 + 1);
                let out = run_batch(&model.params, &model.config, &batch, true, seed, true);
                let out = match out {
                    Ok(o) => o,
                    Err(Error::NonFinite(_)) => {
                        return Err(Error::Divergence { epoch, batch: b, loss: f64::NAN })
                    }
                    Err(e) => return Err(e),
                };
                if !out.loss.is_finite() {
                    return Err(Error::Divergence { epoch, batch: b, loss: out.loss });
                }
                loss_sum += out.loss * chunk.len() as f64;
                let grads = out.grads.expect("requested");
                adam.update(&mut model.params.tensors_mut(), &grads)?;
            }
            let dev_accuracy = (!dev.is_empty()).then(|| model.accuracy(dev));
            history.push(EpochRecord {
                epoch,
                train_loss: loss_sum / corpus.len() as f64,
                dev_accuracy,
            });
            if let Some(acc) = dev_accuracy {
                if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                    best = Some((acc, model.params.clone()));
                }
            }
        }
        if let Some((_, params)) = best {
            model.params = params;
        }
        Ok((model, history))
    }

    /// Eval-mode log-probabilities per label.
    pub fn predict(&self, texts: &[&str]) -> Result<Vec<Scores>> {
        const CHUNK: usize = 32;
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(CHUNK) {
            let batch = EncodedBatch::encode(chunk.iter().map(|t| (*t, 0)), &self.charset, self.config.seq_len);
            let res = run_batch(&self.params, &self.config, &batch, false, 0, false)?;
            for z in res.logits {
                out.push(Scores::from_values(&self.labels, log_softmax(&z)));
            }
        }
        Ok(out)
    }

    pub fn accuracy(&self, corpus: &Corpus) -> f64 {
        if corpus.is_empty() {
            return 0.0;
        }
        let texts: Vec<&str> = corpus.instances().iter().map(|i| i.text.as_str()).collect();
        let Ok(scores) = self.predict(&texts) else { return 0.0 };
        let correct = scores
            .iter()
            .zip(corpus.instances())
            .filter(|(s, inst)| s.best.code == inst.label.code)
            .count();
        correct as f64 / corpus.len() as f64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.str(&self.config.to_kv());
        envelope::write_charset(&mut w, &self.charset);
        w.u64(self.charset.fingerprint());
        envelope::write_labels(&mut w, &self.labels);
        let tensors = self.params.tensors();
        w.len(tensors.len());
        for t in tensors {
            w.len(t.rank());
            for &d in t.shape() {
                w.len(d);
            }
            for &v in t.data() {
                w.f64(v);
            }
        }
        envelope::seal(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let payload = envelope::open(CHECKPOINT_MAGIC, &[CHECKPOINT_VERSION], bytes)?;
        let mut r = Reader::new(payload);
        let config = ClstmConfig::from_kv(&r.str()?).map_err(|e| Error::Payload(e.to_string()))?;
        let charset = envelope::read_charset(&mut r)?;
        let fingerprint = r.u64()?;
        if fingerprint != charset.fingerprint() {
            return Err(Error::Compatibility("stored charset does not match its fingerprint".into()));
        }
        let labels = envelope::read_labels(&mut r)?;
        let n = r.len()?;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let rank = r.len()?;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            tensors.push(Tensor::new(shape, data).map_err(|e| Error::Payload(e.to_string()))?);
        }
        r.finish()?;

        if config.charset_dim != charset.size() || config.num_classes != labels.len() {
            return Err(Error::Compatibility(
                "checkpoint config disagrees with its charset or label set".into(),
            ));
        }
        let mut params = ClstmParams::init(&ClstmConfig { seed: 0, ..config.clone() })
            .map_err(|e| Error::Payload(e.to_string()))?;
        if params.tensors().len() != tensors.len() {
            return Err(Error::Payload("parameter count does not match config".into()));
        }
        for (slot, t) in params.tensors_mut().into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(Error::Payload("parameter shape does not match config".into()));
            }
            *slot = t;
        }
        Ok(ClstmModel {
            config,
            charset,
            labels,
            params,
        })
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads a checkpoint and insists its charset is `expected`.
    pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &Charset) -> Result<Self> {
        let model = Self::load_checkpoint(path)?;
        if model.charset.fingerprint() != expected.fingerprint() {
            return Err(Error::Compatibility(format!(
                "checkpoint charset fingerprint {:016x} differs from expected {:016x}",
                model.charset.fingerprint(),
                expected.fingerprint()
            )));
        }
        Ok(model)
    }
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v - log_sum).collect()
}
