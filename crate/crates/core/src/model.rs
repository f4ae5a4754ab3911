//! Configuration and parameter storage for the encoder, the LSTM and the
//! classifier head.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Which positions of a layer's hidden states form the chunk vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    #[default]
    Cls,
    MeanOverMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ff_mult: usize,
    pub max_window: usize,
    pub representation: Representation,
    pub layer_norm_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 1000,
            dim: 32,
            n_layers: 4,
            n_heads: 2,
            ff_mult: 2,
            max_window: 512,
            representation: Representation::Cls,
            layer_norm_eps: 1e-5,
        }
    }
}

impl EncoderConfig {
    /// Width of one chunk embedding: four concatenated layer states.
    pub fn output_width(&self) -> usize {
        4 * self.dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers < 4 {
            return Err(Error::Config(format!(
                "encoder needs at least 4 layers, got {}",
                self.n_layers
            )));
        }
        if self.dim == 0 || self.n_heads == 0 || !self.dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "n_heads {} must divide dim {}",
                self.n_heads, self.dim
            )));
        }
        if self.ff_mult == 0 || self.max_window < 3 || self.vocab_size < 5 {
            return Err(Error::Config(
                "ff_mult must be >= 1, max_window >= 3 and vocab_size >= 5".into(),
            ));
        }
        Ok(())
    }
}

/// How the LSTM hidden sequence becomes one document vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    #[default]
    Final,
    Mean,
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecurrenceConfig {
    pub input_width: usize,
    pub hidden_width: usize,
    pub bidirectional: bool,
    pub pooling: Pooling,
}

impl Default for RecurrenceConfig {
    fn default() -> Self {
        RecurrenceConfig {
            input_width: 128,
            hidden_width: 32,
            bidirectional: false,
            pooling: Pooling::Final,
        }
    }
}

impl RecurrenceConfig {
    pub fn output_width(&self) -> usize {
        if self.bidirectional {
            2 * self.hidden_width
        } else {
            self.hidden_width
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Content tokens per chunk, excluding CLS and SEP.
    pub chunk_size: usize,
    pub overlap: usize,
    /// Maximum number of chunk windows per encoder pass.
    pub max_c: usize,
    pub encoder: EncoderConfig,
    pub recurrence: RecurrenceConfig,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            chunk_size: 510,
            overlap: 0,
            max_c: 15,
            encoder: EncoderConfig::default(),
            recurrence: RecurrenceConfig::default(),
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.chunk_size < 2 {
            return Err(Error::Config(format!("chunk_size {} < 2", self.chunk_size)));
        }
        if self.chunk_size + 2 > self.encoder.max_window {
            return Err(Error::Config(format!(
                "chunk_size + 2 = {} exceeds encoder max_window {}",
                self.chunk_size + 2,
                self.encoder.max_window
            )));
        }
        if self.overlap > self.chunk_size || !self.overlap.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "overlap {} must be even and at most chunk_size {}",
                self.overlap, self.chunk_size
            )));
        }
        if self.max_c == 0 {
            return Err(Error::Config("max_c must be at least 1".into()));
        }
        if self.recurrence.input_width != self.encoder.output_width() {
            return Err(Error::Config(format!(
                "recurrence input_width {} != 4 x encoder dim = {}",
                self.recurrence.input_width,
                self.encoder.output_width()
            )));
        }
        if self.recurrence.hidden_width == 0 {
            return Err(Error::Config("hidden_width must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        Ok(())
    }

    /// Small configuration where every dimension is derived from `dim`.
    pub fn toy(vocab_size: usize, dim: usize, chunk_size: usize, overlap: usize) -> Self {
        let encoder = EncoderConfig {
            vocab_size,
            dim,
            n_layers: 4,
            n_heads: 2,
            ff_mult: 2,
            max_window: chunk_size + 2,
            ..EncoderConfig::default()
        };
        PipelineConfig {
            chunk_size,
            overlap,
            max_c: 15,
            recurrence: RecurrenceConfig {
                input_width: encoder.output_width(),
                hidden_width: dim,
                ..RecurrenceConfig::default()
            },
            encoder,
            ..PipelineConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Embedding,
    EncoderLayer(usize),
    Recurrence,
    Classifier,
}

impl ParamGroup {
    /// The fine-tuning default: last encoder layer, LSTM and classifier.
    pub fn trainable_by_default(self, n_layers: usize) -> bool {
        match self {
            ParamGroup::Embedding => false,
            ParamGroup::EncoderLayer(i) => i + 1 == n_layers,
            ParamGroup::Recurrence | ParamGroup::Classifier => true,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    Uniform(f64),
    Ones,
    Zeros,
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    init: Init,
}

fn spec(name: String, shape: &[usize], group: ParamGroup, init: Init) -> ParamSpec {
    ParamSpec {
        name,
        shape: shape.to_vec(),
        group,
        init,
    }
}

/// Names, shapes and groups of every parameter, in storage order.
pub fn param_specs(cfg: &PipelineConfig) -> Vec<ParamSpec> {
    let e = &cfg.encoder;
    let d = e.dim;
    let f = e.ff_mult * d;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![
        spec(
            "embed.token".into(),
            &[e.vocab_size, d],
            ParamGroup::Embedding,
            Init::Uniform(scale),
        ),
        spec(
            "embed.position".into(),
            &[e.max_window, d],
            ParamGroup::Embedding,
            Init::Uniform(scale),
        ),
        spec("embed.ln.gain".into(), &[d], ParamGroup::Embedding, Init::Ones),
        spec("embed.ln.bias".into(), &[d], ParamGroup::Embedding, Init::Zeros),
    ];
    for l in 0..e.n_layers {
        let g = ParamGroup::EncoderLayer(l);
        let p = |s: &str| format!("layer{l}.{s}");
        let ff_scale = 1.0 / (f as f64).sqrt();
        out.extend([
            spec(p("attn.wq"), &[d, d], g, Init::Uniform(scale)),
            spec(p("attn.bq"), &[d], g, Init::Zeros),
            spec(p("attn.wk"), &[d, d], g, Init::Uniform(scale)),
            spec(p("attn.wv"), &[d, d], g, Init::Uniform(scale)),
            spec(p("attn.bv"), &[d], g, Init::Zeros),
            spec(p("attn.wo"), &[d, d], g, Init::Uniform(scale)),
            spec(p("attn.bo"), &[d], g, Init::Zeros),
            spec(p("ln1.gain"), &[d], g, Init::Ones),
            spec(p("ln1.bias"), &[d], g, Init::Zeros),
            spec(p("ff.w1"), &[d, f], g, Init::Uniform(scale)),
            spec(p("ff.b1"), &[f], g, Init::Zeros),
            spec(p("ff.w2"), &[f, d], g, Init::Uniform(ff_scale)),
            spec(p("ff.b2"), &[d], g, Init::Zeros),
            spec(p("ln2.gain"), &[d], g, Init::Ones),
            spec(p("ln2.bias"), &[d], g, Init::Zeros),
        ]);
    }
    let r = &cfg.recurrence;
    let h = r.hidden_width;
    let rs = 1.0 / (h as f64).sqrt();
    let dirs: &[&str] = if r.bidirectional { &["fwd", "bwd"] } else { &["fwd"] };
    for dir in dirs {
        out.extend([
            spec(
                format!("lstm.{dir}.w_ih"),
                &[r.input_width, 4 * h],
                ParamGroup::Recurrence,
                Init::Uniform(rs),
            ),
            spec(
                format!("lstm.{dir}.w_hh"),
                &[h, 4 * h],
                ParamGroup::Recurrence,
                Init::Uniform(rs),
            ),
            spec(
                format!("lstm.{dir}.bias"),
                &[4 * h],
                ParamGroup::Recurrence,
                Init::Zeros,
            ),
        ]);
    }
    let o = r.output_width();
    out.extend([
        spec(
            "classifier.w".into(),
            &[o, 1],
            ParamGroup::Classifier,
            Init::Uniform(1.0 / (o as f64).sqrt()),
        ),
        spec("classifier.b".into(), &[1], ParamGroup::Classifier, Init::Zeros),
    ]);
    out
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub group: ParamGroup,
    pub trainable: bool,
    pub value: Arc<Tensor<T>>,
}

/// All model parameters plus the configuration that shaped them.
#[derive(Clone, Debug)]
pub struct ModelState<T> {
    pub config: PipelineConfig,
    pub params: Vec<Param<T>>,
}

impl<T: Scalar> ModelState<T> {
    pub fn init(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n_layers = config.encoder.n_layers;
        let params = param_specs(&config)
            .into_iter()
            .map(|s| {
                let value = match s.init {
                    Init::Uniform(b) => Tensor::uniform(&s.shape, b, &mut rng),
                    Init::Ones => Tensor::full(&s.shape, T::one()),
                    Init::Zeros => Tensor::zeros(&s.shape),
                };
                Param {
                    trainable: s.group.trainable_by_default(n_layers),
                    name: s.name,
                    group: s.group,
                    value: Arc::new(value),
                }
            })
            .collect();
        Ok(ModelState { config, params })
    }

    /// Builds a state from explicit tensors, checking names and shapes
    /// against the configuration.
    pub fn from_parts(config: PipelineConfig, tensors: Vec<(String, bool, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters for this config, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(specs.len());
        for (s, (name, trainable, value)) in specs.into_iter().zip(tensors) {
            if s.name != name || s.shape != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} {:?} does not match config's {} {:?}",
                    value.shape(),
                    s.name,
                    s.shape
                )));
            }
            params.push(Param {
                name,
                group: s.group,
                trainable,
                value: Arc::new(value),
            });
        }
        Ok(ModelState { config, params })
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn set_trainable(&mut self, pred: impl Fn(&Param<T>) -> bool) {
        for p in &mut self.params {
            p.trainable = pred(p);
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Puts every parameter on the tape, trainable ones as gradient leaves.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(Arc::clone(&p.value), p.trainable))
            .collect();
        Bound::from_vars(&self.config, vars).expect("param layout matches config")
    }

    /// Same state in another precision.
    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        ModelState {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    group: p.group,
                    trainable: p.trainable,
                    value: Arc::new(p.value.map_into()),
                })
                .collect(),
        }
    }
}

impl<T: Scalar> Tensor<T> {
    fn map_into<U: Scalar>(&self) -> Tensor<U> {
        Tensor::new(
            self.shape().to_vec(),
            self.data().iter().map(|&x| U::of(x.as_f64())).collect(),
        )
        .expect("same shape")
    }
}

#[derive(Clone, Debug)]
pub struct LayerVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
}

#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub token: Var,
    pub position: Var,
    pub ln_gain: Var,
    pub ln_bias: Var,
    pub layers: Vec<LayerVars>,
}

#[derive(Clone, Debug)]
pub struct LstmVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub bias: Var,
}

#[derive(Clone, Debug)]
pub struct Bound {
    pub encoder: EncoderVars,
    pub forward: LstmVars,
    pub backward: Option<LstmVars>,
    pub classifier_w: Var,
    pub classifier_b: Var,
    /// Every parameter variable, in storage order.
    pub all: Vec<Var>,
}

impl Bound {
    /// `vars` must follow the order of [`param_specs`].
    pub fn from_vars(cfg: &PipelineConfig, vars: Vec<Var>) -> Result<Self> {
        let expected = param_specs(cfg).len();
        if vars.len() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} parameter variables, got {}",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        let token = next();
        let position = next();
        let ln_gain = next();
        let ln_bias = next();
        let layers = (0..cfg.encoder.n_layers)
            .map(|_| LayerVars {
                wq: next(),
                bq: next(),
                wk: next(),
                wv: next(),
                bv: next(),
                wo: next(),
                bo: next(),
                ln1_gain: next(),
                ln1_bias: next(),
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
                ln2_gain: next(),
                ln2_bias: next(),
            })
            .collect();
        let forward = LstmVars {
            w_ih: next(),
            w_hh: next(),
            bias: next(),
        };
        let backward = cfg.recurrence.bidirectional.then(|| LstmVars {
            w_ih: next(),
            w_hh: next(),
            bias: next(),
        });
        let classifier_w = next();
        let classifier_b = next();
        Ok(Bound {
            encoder: EncoderVars {
                token,
                position,
                ln_gain,
                ln_bias,
                layers,
            },
            forward,
            backward,
            classifier_w,
            classifier_b,
            all: vars,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_trainable_set() {
        let cfg = PipelineConfig::toy(50, 8, 6, 2);
        let state = ModelState::<f64>::init(cfg).unwrap();
        for p in &state.params {
            let expect =
                p.name.starts_with("layer3.") || p.name.starts_with("lstm.") || p.name.starts_with("classifier.");
            assert_eq!(p.trainable, expect, "{}", p.name);
        }
    }

    #[test]
    fn config_contradictions_rejected() {
        let mut cfg = PipelineConfig::toy(50, 8, 6, 2);
        cfg.encoder.max_window = 7;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::toy(50, 8, 6, 2);
        cfg.encoder.n_layers = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::toy(50, 8, 6, 2);
        cfg.recurrence.input_width = 16;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::toy(50, 8, 6, 2);
        cfg.overlap = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = PipelineConfig::toy(50, 8, 6, 2);
        let a = ModelState::<f32>::init(cfg.clone()).unwrap();
        let b = ModelState::<f32>::init(cfg).unwrap();
        for (x, y) in a.params.iter().zip(&b.params) {
            assert_eq!(x.value, y.value);
        }
    }

    #[test]
    fn bidirectional_adds_backward_lstm() {
        let mut cfg = PipelineConfig::toy(50, 8, 6, 2);
        cfg.recurrence.bidirectional = true;
        let state = ModelState::<f64>::init(cfg).unwrap();
        assert!(state.param("lstm.bwd.w_hh").is_some());
        assert_eq!(state.param("classifier.w").unwrap().value.shape(), &[16, 1]);
    }
}
