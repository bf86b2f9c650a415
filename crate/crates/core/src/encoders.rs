//! Character-level sequence encoders: CNN, WaveNet, bidirectional LSTM and
//! Transformer. Each maps a formula string to one fixed-size vector.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fol::{CharVocab, SignatureTable, PAD};
use crate::par;
use crate::tensor::{load_checkpoint, save_checkpoint, CheckpointError, Graph, ParamId, ParamStore, Scalar, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Cnn,
    WaveNet,
    BiLstm,
    Transformer,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Cnn, Arch::WaveNet, Arch::BiLstm, Arch::Transformer];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Cnn => "cnn",
            Arch::WaveNet => "wavenet",
            Arch::BiLstm => "bilstm",
            Arch::Transformer => "transformer",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown architecture {s:?} (expected cnn, wavenet, bilstm or transformer)"))
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub arch: Arch,
    #[serde(default = "defaults::token_dim")]
    pub token_dim: usize,
    #[serde(default = "defaults::output_dim")]
    pub output_dim: usize,
    /// Convolution, recurrence or attention blocks.
    #[serde(default = "defaults::layers")]
    pub layers: usize,
    #[serde(default = "defaults::heads")]
    pub heads: usize,
    #[serde(default = "defaults::max_len")]
    pub max_len: usize,
    /// Transformer feed-forward width; defaults to twice `token_dim`.
    #[serde(default)]
    pub ff_dim: Option<usize>,
    /// LSTM hidden width per direction; defaults to `token_dim`.
    #[serde(default)]
    pub hidden_dim: Option<usize>,
    /// CNN output channels per layer; defaults to `token_dim` everywhere.
    #[serde(default)]
    pub channels: Option<Vec<usize>>,
    /// Extra relu + linear layers after the aggregation map.
    #[serde(default)]
    pub fc_layers: usize,
    /// Final linear projection width, if any.
    #[serde(default)]
    pub projection_dim: Option<usize>,
}

mod defaults {
    pub fn token_dim() -> usize {
        128
    }
    pub fn output_dim() -> usize {
        128
    }
    pub fn layers() -> usize {
        6
    }
    pub fn heads() -> usize {
        8
    }
    pub fn max_len() -> usize {
        256
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    Zero(&'static str),
    #[error("{heads} heads do not divide token_dim {token_dim}")]
    Heads { heads: usize, token_dim: usize },
    #[error("{given} CNN channel counts given for {layers} layers")]
    Channels { given: usize, layers: usize },
}

impl EncoderConfig {
    /// Paper-scale defaults: 128-dimensional tokens and output, six layers
    /// (two for the LSTM), eight attention heads, strings up to 256 chars.
    pub fn new(arch: Arch) -> Self {
        EncoderConfig {
            arch,
            token_dim: 128,
            output_dim: 128,
            layers: if arch == Arch::BiLstm { 2 } else { 6 },
            heads: 8,
            max_len: 256,
            ff_dim: None,
            hidden_dim: None,
            channels: None,
            fc_layers: 0,
            projection_dim: None,
        }
    }

    /// CNN for multi-task property training, with filter counts doubling from
    /// 1 up to 128. Both 8 and 9 layers are used for this model.
    pub fn explicit_cnn(layers: usize) -> Self {
        let channels = (0..layers).map(|l| (1usize << l).min(128)).collect();
        EncoderConfig { layers, channels: Some(channels), ..Self::new(Arch::Cnn) }
    }

    /// Three bidirectional layers of width 256 for multi-task training.
    pub fn explicit_bilstm() -> Self {
        EncoderConfig { layers: 3, hidden_dim: Some(256), ..Self::new(Arch::BiLstm) }
    }

    /// Smaller dims for quick experiments and tests.
    pub fn small(arch: Arch, dim: usize, layers: usize) -> Self {
        EncoderConfig { token_dim: dim, output_dim: dim, layers, heads: 4.min(dim), ..Self::new(arch) }
    }

    /// Width of the vector produced by the encoder.
    pub fn embedding_dim(&self) -> usize {
        self.projection_dim.unwrap_or(self.output_dim)
    }

    pub fn ff_width(&self) -> usize {
        self.ff_dim.unwrap_or(2 * self.token_dim)
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden_dim.unwrap_or(self.token_dim)
    }

    pub fn cnn_channels(&self) -> Vec<usize> {
        self.channels.clone().unwrap_or_else(|| vec![self.token_dim; self.layers])
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("token_dim", self.token_dim),
            ("output_dim", self.output_dim),
            ("layers", self.layers),
            ("max_len", self.max_len),
            ("heads", self.heads),
        ] {
            if v == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        if self.projection_dim == Some(0) {
            return Err(ConfigError::Zero("projection_dim"));
        }
        if self.arch == Arch::Transformer && self.token_dim % self.heads != 0 {
            return Err(ConfigError::Heads { heads: self.heads, token_dim: self.token_dim });
        }
        if let Some(c) = &self.channels {
            if c.len() != self.layers {
                return Err(ConfigError::Channels { given: c.len(), layers: self.layers });
            }
            if c.contains(&0) {
                return Err(ConfigError::Zero("channels"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Linear {
    pub(crate) w: ParamId,
    pub(crate) b: ParamId,
}

impl Linear {
    pub(crate) fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::glorot(vec![fan_in, fan_out], fan_in, fan_out, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![fan_out]));
        Linear { w, b }
    }

    pub(crate) fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.linear(x, w, b)
    }
}

/// A linear map without bias.
#[derive(Debug, Clone, Copy)]
struct Projection(ParamId);

impl Projection {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Projection(store.add(name, Tensor::glorot(vec![fan_in, fan_out], fan_in, fan_out, rng)))
    }

    fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Var {
        let w = g.param(self.0);
        g.matmul(x, w)
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
    kernel: usize,
    dilation: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::glorot(vec![kernel * cin, cout], kernel * cin, cout, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![cout]));
        Conv { w, b, kernel, dilation }
    }

    fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.conv1d(x, w, b, self.kernel, self.dilation)
    }
}

#[derive(Debug, Clone, Copy)]
struct LstmDir {
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
}

impl LstmDir {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound_in = 1.0 / (input as f64).sqrt();
        let bound_h = 1.0 / (hidden as f64).sqrt();
        let w_ih = store.add(format!("{name}.w_ih"), Tensor::uniform(vec![input, 4 * hidden], bound_in, rng));
        let w_hh = store.add(format!("{name}.w_hh"), Tensor::uniform(vec![hidden, 4 * hidden], bound_h, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![4 * hidden]));
        LstmDir { w_ih, w_hh, b }
    }

    fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var, reverse: bool) -> Var {
        let w_ih = g.param(self.w_ih);
        let w_hh = g.param(self.w_hh);
        let b = g.param(self.b);
        g.lstm(x, w_ih, w_hh, b, reverse)
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    q: Projection,
    k: Projection,
    v: Projection,
    out: Linear,
    ff_in: Linear,
    ff_out: Linear,
}

#[derive(Debug, Clone)]
enum Body {
    Cnn(Vec<Conv>),
    WaveNet(Vec<Conv>),
    BiLstm(Vec<[LstmDir; 2]>),
    Transformer { positions: ParamId, aggregate: ParamId, blocks: Vec<Block> },
}

/// Parameter handles of one encoder inside a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    embed: ParamId,
    body: Body,
    aggregate: Linear,
    head: Vec<Linear>,
    projection: Option<Linear>,
}

impl Encoder {
    /// Registers freshly initialized parameters under the `enc.` prefix.
    pub fn new<T: Scalar>(config: &EncoderConfig, vocab_size: usize, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) -> Self {
        config.validate().expect("invalid encoder config");
        let d = config.token_dim;
        let embed = store.add("enc.embed", Tensor::uniform(vec![vocab_size, d], (3.0 / d as f64).sqrt(), rng));
        let (body, width) = match config.arch {
            Arch::Cnn => {
                let mut cin = d;
                let mut convs = Vec::new();
                for (l, cout) in config.cnn_channels().into_iter().enumerate() {
                    convs.push(Conv::new(store, &format!("enc.conv{l}"), cin, cout, 3, 1, rng));
                    cin = cout;
                }
                (Body::Cnn(convs), cin)
            }
            Arch::WaveNet => {
                let convs = (0..config.layers)
                    .map(|l| Conv::new(store, &format!("enc.dconv{l}"), d, d, 2, 1 << l, rng))
                    .collect();
                (Body::WaveNet(convs), d)
            }
            Arch::BiLstm => {
                let h = config.hidden_width();
                let layers = (0..config.layers)
                    .map(|l| {
                        let input = if l == 0 { d } else { 2 * h };
                        [
                            LstmDir::new(store, &format!("enc.lstm{l}.fwd"), input, h, rng),
                            LstmDir::new(store, &format!("enc.lstm{l}.bwd"), input, h, rng),
                        ]
                    })
                    .collect();
                (Body::BiLstm(layers), 2 * h)
            }
            Arch::Transformer => {
                let positions =
                    store.add("enc.positions", Tensor::uniform(vec![config.max_len + 1, d], (3.0 / d as f64).sqrt(), rng));
                let aggregate = store.add("enc.aggregate", Tensor::uniform(vec![d], (3.0 / d as f64).sqrt(), rng));
                let ff = config.ff_width();
                let blocks = (0..config.layers)
                    .map(|l| {
                        let p = format!("enc.block{l}");
                        Block {
                            q: Projection::new(store, &format!("{p}.q"), d, d, rng),
                            k: Projection::new(store, &format!("{p}.k"), d, d, rng),
                            v: Projection::new(store, &format!("{p}.v"), d, d, rng),
                            out: Linear::new(store, &format!("{p}.out"), d, d, rng),
                            ff_in: Linear::new(store, &format!("{p}.ff_in"), d, ff, rng),
                            ff_out: Linear::new(store, &format!("{p}.ff_out"), ff, d, rng),
                        }
                    })
                    .collect();
                (Body::Transformer { positions, aggregate, blocks }, d)
            }
        };
        let out = config.output_dim;
        let aggregate = Linear::new(store, "enc.aggregate_map", width, out, rng);
        let head = (0..config.fc_layers).map(|i| Linear::new(store, &format!("enc.fc{i}"), out, out, rng)).collect();
        let projection = config.projection_dim.map(|p| Linear::new(store, "enc.projection", out, p, rng));
        Encoder { config: config.clone(), embed, body, aggregate, head, projection }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Character ids of `s`: truncated to `max_len`, a lone PAD for the empty
    /// string.
    pub fn tokenize(&self, vocab: &CharVocab, s: &str) -> Vec<usize> {
        let ids = vocab.encode(s, self.config.max_len);
        if ids.is_empty() {
            vec![PAD]
        } else {
            ids
        }
    }

    /// Records the forward pass and returns a `[1, embedding_dim]` node.
    ///
    /// Trailing PAD ids are masked by dropping them, so padding a sequence
    /// never changes its encoding.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ids: &[usize]) -> Var {
        let valid = ids.iter().rposition(|&i| i != PAD).map_or(1, |p| p + 1);
        let ids = &ids[..valid.min(ids.len()).max(1)];
        assert!(ids.len() <= self.config.max_len, "sequence of {} ids exceeds max_len {}", ids.len(), self.config.max_len);
        let table = g.param(self.embed);
        let x = g.embedding(table, ids);
        let pooled = match &self.body {
            Body::Cnn(convs) => {
                let mut h = x;
                for c in convs {
                    let y = c.apply(g, h);
                    let y = g.relu(y);
                    h = g.max_pool1d(y, 2);
                }
                g.max_pool_time(h)
            }
            Body::WaveNet(convs) => {
                let mut h = x;
                for c in convs {
                    let y = c.apply(g, h);
                    let y = g.relu(y);
                    h = g.add(h, y);
                }
                g.mean_pool_time(h)
            }
            Body::BiLstm(layers) => {
                let mut h = x;
                let mut last = None;
                for [fwd, bwd] in layers {
                    let f = fwd.apply(g, h, false);
                    let b = bwd.apply(g, h, true);
                    let len = g.shape(f).0;
                    let f_last = g.row(f, len - 1);
                    let b_first = g.row(b, 0);
                    last = Some(g.concat_cols(&[f_last, b_first]));
                    h = g.concat_cols(&[f, b]);
                }
                last.expect("at least one LSTM layer")
            }
            Body::Transformer { positions, aggregate, blocks } => {
                let agg = g.param(*aggregate);
                let seq = g.concat_rows(&[agg, x]);
                let table = g.param(*positions);
                let pos = g.rows(table, 0, ids.len() + 1);
                let mut h = g.add(seq, pos);
                for b in blocks {
                    h = transformer_block(g, b, h, self.config.heads);
                }
                let h = g.layer_norm(h);
                g.row(h, 0)
            }
        };
        let mut out = self.aggregate.apply(g, pooled);
        for fc in &self.head {
            let r = g.relu(out);
            out = fc.apply(g, r);
        }
        if let Some(p) = self.projection {
            out = p.apply(g, out);
        }
        out
    }
}

fn transformer_block<T: Scalar>(g: &mut Graph<T>, b: &Block, x: Var, heads: usize) -> Var {
    let n = g.layer_norm(x);
    let q = b.q.apply(g, n);
    let k = b.k.apply(g, n);
    let v = b.v.apply(g, n);
    let a = g.scaled_dot_attention(q, k, v, heads);
    let a = b.out.apply(g, a);
    let h = g.add(x, a);
    let n = g.layer_norm(h);
    let f = b.ff_in.apply(g, n);
    let f = g.relu(f);
    let f = b.ff_out.apply(g, f);
    g.add(h, f)
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("invalid config: {0}")]
    Config(#[from] ConfigError),
}

/// Sidecar metadata stored next to a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub config: EncoderConfig,
    pub vocab: CharVocab,
    #[serde(default)]
    pub signature: Option<SignatureTable>,
    /// How the encoder was trained (`recursive`, `difference`, `explicit`).
    #[serde(default)]
    pub mode: Option<String>,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

pub fn write_meta(path: &Path, meta: &ModelMeta) -> Result<(), ModelError> {
    let json = serde_json::to_string_pretty(meta).map_err(|e| ModelError::Metadata(e.to_string()))?;
    fs::write(meta_path(path), json).map_err(CheckpointError::from)?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<ModelMeta, ModelError> {
    let text = fs::read_to_string(meta_path(path)).map_err(CheckpointError::from)?;
    serde_json::from_str(&text).map_err(|e| ModelError::Metadata(e.to_string()))
}

/// An encoder together with its vocabulary and parameter values.
#[derive(Debug, Clone)]
pub struct EncoderModel<T: Scalar> {
    pub vocab: CharVocab,
    pub store: ParamStore<T>,
    pub encoder: Encoder,
}

pub fn build_vocab<'a>(corpus: impl IntoIterator<Item = &'a str>) -> CharVocab {
    CharVocab::build(corpus)
}

impl<T: Scalar> EncoderModel<T> {
    pub fn new(config: &EncoderConfig, vocab: CharVocab, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(config, vocab.len(), &mut store, &mut rng);
        EncoderModel { vocab, store, encoder }
    }

    pub fn config(&self) -> &EncoderConfig {
        self.encoder.config()
    }

    pub fn embedding_dim(&self) -> usize {
        self.config().embedding_dim()
    }

    pub fn tokenize(&self, s: &str) -> Vec<usize> {
        self.encoder.tokenize(&self.vocab, s)
    }

    /// Records the encoding of `s` on `g`.
    pub fn encode_on(&self, g: &mut Graph<T>, s: &str) -> Var {
        let ids = self.tokenize(s);
        self.encoder.forward(g, &ids)
    }

    pub fn encode_ids(&self, ids: &[usize]) -> Vec<T> {
        let mut g = Graph::new(&self.store);
        let v = self.encoder.forward(&mut g, ids);
        g.value(v).to_vec()
    }

    pub fn encode_string(&self, s: &str) -> Vec<T> {
        self.encode_ids(&self.tokenize(s))
    }

    /// Encodes many strings, in parallel when enabled; order is preserved.
    pub fn encode_batch<S: AsRef<str> + Sync>(&self, strings: &[S]) -> Vec<Vec<T>> {
        par::map(strings, |s| self.encode_string(s.as_ref()))
    }
}

impl EncoderModel<f32> {
    pub fn save(&self, path: &Path, signature: Option<&SignatureTable>) -> Result<(), ModelError> {
        save_checkpoint(&self.store, path).map_err(CheckpointError::from)?;
        write_meta(path, &ModelMeta { config: self.config().clone(), vocab: self.vocab.clone(), signature: signature.cloned(), mode: None })
    }

    /// Loads the encoder part of a checkpoint; decoder parameters stored
    /// alongside are ignored.
    pub fn load(path: &Path) -> Result<(Self, ModelMeta), ModelError> {
        let meta = read_meta(path)?;
        meta.config.validate()?;
        let mut model = EncoderModel::new(&meta.config, meta.vocab.clone(), 0);
        load_checkpoint(&mut model.store, path, true)?;
        Ok((model, meta))
    }

    /// Loads a checkpoint into a model built from `config`; fails naming the
    /// first parameter that is missing or has another shape.
    pub fn load_with_config(path: &Path, config: &EncoderConfig, vocab: CharVocab) -> Result<Self, ModelError> {
        config.validate()?;
        let mut model = EncoderModel::new(config, vocab, 0);
        load_checkpoint(&mut model.store, path, true)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> CharVocab {
        build_vocab(["![X]: (p(X) & q(X,Y)) | ~r => f(a,b) <=> ?[Z]: s"])
    }

    fn tiny(arch: Arch) -> EncoderConfig {
        EncoderConfig { heads: 2, ..EncoderConfig::small(arch, 8, 2) }
    }

    #[test]
    fn output_width_for_every_arch_and_length() {
        for arch in Arch::ALL {
            let m = EncoderModel::<f32>::new(&tiny(arch), vocab(), 1);
            for s in ["", "p", "p & q", "![X]: (p(X) & q(X,Y)) | ~r => f(a,b) <=> ?[Z]: s"] {
                assert_eq!(m.encode_string(s).len(), 8, "{arch} {s:?}");
            }
        }
        let m = EncoderModel::<f32>::new(&EncoderConfig::new(Arch::Cnn), vocab(), 1);
        assert_eq!(m.encode_string("p & q").len(), 128);
    }

    #[test]
    fn deterministic() {
        for arch in Arch::ALL {
            let m = EncoderModel::<f32>::new(&tiny(arch), vocab(), 3);
            assert_eq!(m.encode_string("p & q"), m.encode_string("p & q"));
            let again = EncoderModel::<f32>::new(&tiny(arch), vocab(), 3);
            assert_eq!(m.store, again.store);
        }
    }

    #[test]
    fn trailing_padding_is_masked() {
        for arch in Arch::ALL {
            let m = EncoderModel::<f32>::new(&tiny(arch), vocab(), 5);
            let ids = m.tokenize("q(X,Y)");
            let mut padded = ids.clone();
            padded.extend([PAD; 10]);
            let a = m.encode_ids(&ids);
            let b = m.encode_ids(&padded);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-5);
            }
        }
    }

    #[test]
    fn cnn_sees_distant_characters() {
        // Six pool-2 layers give every output a receptive field of at least
        // 64 positions; flipping the first character of a 64-character string
        // must still move the encoding.
        let config = EncoderConfig { max_len: 64, ..EncoderConfig::small(Arch::Cnn, 16, 6) };
        let m = EncoderModel::<f64>::new(&config, vocab(), 9);
        let base: String = "p".repeat(64);
        let flipped = format!("q{}", &base[1..]);
        let (a, b) = (m.encode_string(&base), m.encode_string(&flipped));
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-9));
    }

    #[test]
    fn explicit_presets() {
        let eight = EncoderConfig::explicit_cnn(8);
        assert_eq!(eight.cnn_channels(), vec![1, 2, 4, 8, 16, 32, 64, 128]);
        let nine = EncoderConfig::explicit_cnn(9);
        assert_eq!(nine.cnn_channels().len(), 9);
        nine.validate().unwrap();
        assert_eq!(EncoderConfig::explicit_bilstm().hidden_width(), 256);
        let proj = EncoderConfig { projection_dim: Some(32), fc_layers: 1, ..tiny(Arch::Cnn) };
        let m = EncoderModel::<f32>::new(&proj, vocab(), 0);
        assert_eq!(m.encode_string("p").len(), 32);
    }

    #[test]
    fn config_validation() {
        let bad = EncoderConfig { heads: 3, ..EncoderConfig::new(Arch::Transformer) };
        assert_eq!(bad.validate(), Err(ConfigError::Heads { heads: 3, token_dim: 128 }));
        let json = r#"{"arch": "cnn", "token_dim": 16, "bogus": 1}"#;
        assert!(serde_json::from_str::<EncoderConfig>(json).is_err());
        let ok: EncoderConfig = serde_json::from_str(r#"{"arch": "transformer"}"#).unwrap();
        assert_eq!(ok, EncoderConfig::new(Arch::Transformer));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        let m = EncoderModel::<f32>::new(&tiny(Arch::Transformer), vocab(), 11);
        m.save(&path, None).unwrap();
        let (back, meta) = EncoderModel::load(&path).unwrap();
        assert_eq!(back.store, m.store);
        assert_eq!(meta.config, *m.config());
        assert_eq!(back.encode_string("p & q"), m.encode_string("p & q"));

        let other = EncoderModel::<f32>::load_with_config(&path, &tiny(Arch::Cnn), vocab());
        let err = other.unwrap_err().to_string();
        assert!(err.contains("enc.conv0.w"), "{err}");

        fs::write(&path, b"garbage\n").unwrap();
        assert!(EncoderModel::load(&path).is_err());
    }
}
