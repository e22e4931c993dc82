//! The GViT architecture: GCN features over the chain graph, uniform pooling
//! to a fixed token count, a prepended class token, a stack of transformer
//! encoder blocks and a linear head producing two normalised concentrations.

use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{gcn_stack, AdjacencyMode, ChainAdjacency, Composition, GasGroup, SensorGraph, SENSOR_CHANNELS};
use crate::tensor::{Tape, Tensor, Var};

/// Normalised concentration below which a gas is reported absent.
pub const PRESENCE_THRESHOLD: f64 = 0.01;

const CHECKPOINT_FORMAT: &str = "gvit-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Where layer normalisation sits relative to the residual branches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPlacement {
    /// `x + f(LN(x))`
    #[default]
    Pre,
    /// `LN(x + f(x))`
    Post,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GViTConfig {
    pub in_features: usize,
    pub gcn_layers: usize,
    pub gcn_filters: usize,
    pub d_model: usize,
    pub pooled_nodes: usize,
    pub encoder_blocks: usize,
    pub attention_heads: usize,
    pub mlp_hidden: usize,
    pub out_gases: usize,
    pub positional_embedding: bool,
    pub adjacency: AdjacencyMode,
    pub norm_placement: NormPlacement,
    pub layer_norm_eps: f64,
    pub seed: u64,
}

impl Default for GViTConfig {
    fn default() -> Self {
        GViTConfig {
            in_features: SENSOR_CHANNELS,
            gcn_layers: 3,
            gcn_filters: 16,
            d_model: 48,
            pooled_nodes: 300,
            encoder_blocks: 18,
            attention_heads: 4,
            mlp_hidden: 4 * 48,
            out_gases: 2,
            positional_embedding: true,
            adjacency: AdjacencyMode::Symmetric,
            norm_placement: NormPlacement::Pre,
            layer_norm_eps: crate::tensor::LAYER_NORM_EPS,
            seed: 0,
        }
    }
}

impl GViTConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.in_features != SENSOR_CHANNELS {
            return fail(format!("in_features must be {SENSOR_CHANNELS}, got {}", self.in_features));
        }
        if self.out_gases != 2 {
            return fail(format!("out_gases must be 2, got {}", self.out_gases));
        }
        if self.gcn_layers == 0 || self.gcn_filters == 0 {
            return fail("gcn_layers and gcn_filters must be >= 1".into());
        }
        if self.gcn_layers * self.gcn_filters != self.d_model {
            return fail(format!(
                "gcn_layers ({}) x gcn_filters ({}) must equal d_model ({})",
                self.gcn_layers, self.gcn_filters, self.d_model
            ));
        }
        if self.attention_heads == 0 || self.d_model % self.attention_heads != 0 {
            return fail(format!(
                "d_model ({}) must be divisible by attention_heads ({})",
                self.d_model, self.attention_heads
            ));
        }
        if self.pooled_nodes == 0 {
            return fail("pooled_nodes must be >= 1".into());
        }
        if self.encoder_blocks == 0 {
            return fail("encoder_blocks must be >= 1".into());
        }
        if self.mlp_hidden == 0 {
            return fail("mlp_hidden must be >= 1".into());
        }
        if !(self.layer_norm_eps > 0.0) {
            return fail(format!("layer_norm_eps must be > 0, got {}", self.layer_norm_eps));
        }
        Ok(())
    }

    /// Token count after pooling and class-token concatenation.
    pub fn tokens(&self) -> usize {
        self.pooled_nodes + 1
    }
}

/// Attention projections, generic over parameter indices or tape handles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MhaWeights<T> {
    pub w_q: T,
    pub b_q: T,
    pub w_k: T,
    pub b_k: T,
    pub w_v: T,
    pub b_v: T,
    pub w_out: T,
    pub b_out: T,
}

impl<T: Copy> MhaWeights<T> {
    fn map<U>(&self, f: impl Fn(T) -> U) -> MhaWeights<U> {
        MhaWeights {
            w_q: f(self.w_q),
            b_q: f(self.b_q),
            w_k: f(self.w_k),
            b_k: f(self.b_k),
            w_v: f(self.w_v),
            b_v: f(self.b_v),
            w_out: f(self.w_out),
            b_out: f(self.b_out),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockWeights<T> {
    pub norm1_gain: T,
    pub norm1_bias: T,
    pub attn: MhaWeights<T>,
    pub norm2_gain: T,
    pub norm2_bias: T,
    pub mlp_w1: T,
    pub mlp_b1: T,
    pub mlp_w2: T,
    pub mlp_b2: T,
}

impl<T: Copy> BlockWeights<T> {
    fn map<U>(&self, f: impl Fn(T) -> U + Copy) -> BlockWeights<U> {
        BlockWeights {
            norm1_gain: f(self.norm1_gain),
            norm1_bias: f(self.norm1_bias),
            attn: self.attn.map(f),
            norm2_gain: f(self.norm2_gain),
            norm2_bias: f(self.norm2_bias),
            mlp_w1: f(self.mlp_w1),
            mlp_b1: f(self.mlp_b1),
            mlp_w2: f(self.mlp_w2),
            mlp_b2: f(self.mlp_b2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Init {
    Xavier,
    Zeros,
    Ones,
    Normal,
}

/// Index of every parameter tensor inside the flat parameter list.
#[derive(Clone, Debug, PartialEq)]
struct Layout {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    inits: Vec<Init>,
    gcn: Vec<usize>,
    class_token: usize,
    pos_embed: Option<usize>,
    blocks: Vec<BlockWeights<usize>>,
    head_w: usize,
    head_b: usize,
}

impl Layout {
    fn new(cfg: &GViTConfig) -> Layout {
        let mut l = Layout {
            names: Vec::new(),
            shapes: Vec::new(),
            inits: Vec::new(),
            gcn: Vec::new(),
            class_token: 0,
            pos_embed: None,
            blocks: Vec::new(),
            head_w: 0,
            head_b: 0,
        };
        let d = cfg.d_model;
        let mut fan_in = cfg.in_features;
        for i in 0..cfg.gcn_layers {
            let idx = l.push(format!("gcn.{i}.weight"), vec![fan_in, cfg.gcn_filters], Init::Xavier);
            l.gcn.push(idx);
            fan_in = cfg.gcn_filters;
        }
        l.class_token = l.push("class_token".into(), vec![1, d], Init::Normal);
        if cfg.positional_embedding {
            l.pos_embed = Some(l.push("pos_embed".into(), vec![cfg.tokens(), d], Init::Normal));
        }
        for b in 0..cfg.encoder_blocks {
            let p = |s: &str| format!("blocks.{b}.{s}");
            let norm1_gain = l.push(p("norm1.gain"), vec![d], Init::Ones);
            let norm1_bias = l.push(p("norm1.bias"), vec![d], Init::Zeros);
            let proj = |l: &mut Layout, name: &str| {
                (
                    l.push(p(&format!("attn.{name}.weight")), vec![d, d], Init::Xavier),
                    l.push(p(&format!("attn.{name}.bias")), vec![d], Init::Zeros),
                )
            };
            let (w_q, b_q) = proj(&mut l, "q");
            let (w_k, b_k) = proj(&mut l, "k");
            let (w_v, b_v) = proj(&mut l, "v");
            let (w_out, b_out) = proj(&mut l, "out");
            let norm2_gain = l.push(p("norm2.gain"), vec![d], Init::Ones);
            let norm2_bias = l.push(p("norm2.bias"), vec![d], Init::Zeros);
            let mlp_w1 = l.push(p("mlp.fc1.weight"), vec![d, cfg.mlp_hidden], Init::Xavier);
            let mlp_b1 = l.push(p("mlp.fc1.bias"), vec![cfg.mlp_hidden], Init::Zeros);
            let mlp_w2 = l.push(p("mlp.fc2.weight"), vec![cfg.mlp_hidden, d], Init::Xavier);
            let mlp_b2 = l.push(p("mlp.fc2.bias"), vec![d], Init::Zeros);
            l.blocks.push(BlockWeights {
                norm1_gain,
                norm1_bias,
                attn: MhaWeights {
                    w_q,
                    b_q,
                    w_k,
                    b_k,
                    w_v,
                    b_v,
                    w_out,
                    b_out,
                },
                norm2_gain,
                norm2_bias,
                mlp_w1,
                mlp_b1,
                mlp_w2,
                mlp_b2,
            });
        }
        l.head_w = l.push("head.weight".into(), vec![d, cfg.out_gases], Init::Xavier);
        l.head_b = l.push("head.bias".into(), vec![cfg.out_gases], Init::Zeros);
        l
    }

    fn push(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }
}

/// Gas group and per-gas ppm maxima the model was trained against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataContext {
    pub group: GasGroup,
    pub gas_maxima: [f64; 2],
}

/// Full parameter set for one GViT instance.
#[derive(Clone, Debug, PartialEq)]
pub struct GViTModel {
    config: GViTConfig,
    layout: Layout,
    params: Vec<Tensor>,
    feature_scale: Vec<f64>,
    context: Option<DataContext>,
}

/// Parameters registered on a tape for one forward pass.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl GViTModel {
    /// Randomly initialised model, deterministic in `config.seed`.
    pub fn new(config: GViTConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let params = layout
            .shapes
            .iter()
            .zip(&layout.inits)
            .map(|(shape, init)| {
                let n: usize = shape.iter().product();
                let data: Vec<f64> = match init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Normal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                    Init::Xavier => {
                        let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                        (0..n).map(|_| rng.random_range(-a..a)).collect()
                    }
                };
                Tensor::from_parts(shape.clone(), data)
            })
            .collect();
        Ok(GViTModel {
            feature_scale: vec![1.0; config.in_features],
            config,
            layout,
            params,
            context: None,
        })
    }

    pub fn config(&self) -> &GViTConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Mutable parameter access for optimizers. Shapes must not change.
    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.layout.names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn feature_scale(&self) -> &[f64] {
        &self.feature_scale
    }

    /// Per-channel divisors applied to node features before the GCN.
    pub fn set_feature_scale(&mut self, scale: Vec<f64>) -> Result<()> {
        if scale.len() != self.config.in_features {
            return Err(Error::dim("feature_scale", &[scale.len()], &[self.config.in_features]));
        }
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Domain("feature scales must be finite and > 0".into()));
        }
        self.feature_scale = scale;
        Ok(())
    }

    pub fn context(&self) -> Option<&DataContext> {
        self.context.as_ref()
    }

    pub fn set_context(&mut self, context: DataContext) {
        self.context = Some(context);
    }

    /// Index of a named parameter.
    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.layout.names.iter().position(|n| n == name)
    }

    /// Indices of every encoder-block parameter.
    pub fn encoder_param_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for b in &self.layout.blocks {
            let a = b.attn;
            out.extend([
                b.norm1_gain, b.norm1_bias, a.w_q, a.b_q, a.w_k, a.b_k, a.w_v, a.b_v, a.w_out,
                a.b_out, b.norm2_gain, b.norm2_bias, b.mlp_w1, b.mlp_b1, b.mlp_w2, b.mlp_b2,
            ]);
        }
        out
    }

    /// Stable hash of all parameter bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for p in &self.params {
            p.shape().hash(&mut h);
            for v in p.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    /// Registers every parameter on `tape`, tracked when `track` is set.
    pub fn bind(&self, tape: &mut Tape, track: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if track {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        BoundParams { vars }
    }

    fn scaled_features(&self, x: &Tensor) -> Tensor {
        let c = x.cols();
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, s) in row.iter_mut().zip(&self.feature_scale) {
                *v /= s;
            }
        }
        Tensor::from_parts(x.shape().to_vec(), data)
    }

    /// Records the full forward pass and returns the `1×2` raw head output.
    pub fn forward_on(&self, tape: &mut Tape, bound: &BoundParams, g: &SensorGraph) -> Result<Var> {
        let trace = self.trace_on(tape, bound, g)?;
        Ok(trace.output)
    }

    /// Like [`GViTModel::forward_on`] but also returns the intermediate stages.
    pub fn trace_on(&self, tape: &mut Tape, bound: &BoundParams, g: &SensorGraph) -> Result<ForwardTrace> {
        self.trace_features(tape, bound, g.node_features())
    }

    /// Forward pass over an unlabelled `N×16` node-feature matrix.
    pub fn trace_features(&self, tape: &mut Tape, bound: &BoundParams, features: &Tensor) -> Result<ForwardTrace> {
        let v = |i: usize| bound.vars[i];
        let cfg = &self.config;
        let (n, f) = features.as_matrix("forward")?;
        if n == 0 || f != cfg.in_features {
            return Err(Error::dim("forward", features.shape(), &[n.max(1), cfg.in_features]));
        }
        let x = tape.constant(self.scaled_features(features));
        let a_hat = Rc::new(ChainAdjacency::new(n)?.normalize(cfg.adjacency));
        let gcn_w: Vec<Var> = self.layout.gcn.iter().map(|&i| v(i)).collect();
        let graph_matrix = gcn_stack(tape, x, &a_hat, &gcn_w, cfg.d_model)?;
        let pooled = uniform_pool(tape, graph_matrix, cfg.pooled_nodes)?;
        let mut tokens = prepend_class_token(tape, pooled, v(self.layout.class_token))?;
        if let Some(pos) = self.layout.pos_embed {
            tokens = tape.add(tokens, v(pos))?;
        }
        let class_matrix = tokens;
        let mut h = tokens;
        for block in &self.layout.blocks {
            h = encoder_block(
                tape,
                h,
                &block.map(v),
                cfg.attention_heads,
                cfg.norm_placement,
                cfg.layer_norm_eps,
            )?;
        }
        let cls = tape.slice_rows(h, 0, 1)?;
        let projected = tape.matmul(cls, v(self.layout.head_w))?;
        let output = tape.add_row(projected, v(self.layout.head_b))?;
        Ok(ForwardTrace {
            graph_matrix,
            pooled,
            class_matrix,
            encoded: h,
            output,
        })
    }

    /// Raw (unclamped) concentrations for one graph.
    pub fn forward(&self, g: &SensorGraph) -> Result<[f64; 2]> {
        self.forward_features(g.node_features())
    }

    /// Raw concentrations for an unlabelled node-feature matrix.
    pub fn forward_features(&self, features: &Tensor) -> Result<[f64; 2]> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = self.trace_features(&mut tape, &bound, features)?.output;
        let d = tape.value(out).data();
        Ok([d[0], d[1]])
    }

    /// Concentrations clamped to `[0, 1]` for reporting.
    pub fn predict(&self, g: &SensorGraph) -> Result<[f64; 2]> {
        Ok(self.forward(g)?.map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            feature_scale: self.feature_scale.clone(),
            context: self.context,
            params: self
                .layout
                .names
                .iter()
                .zip(&self.params)
                .map(|(name, t)| NamedTensor {
                    name: name.clone(),
                    tensor: t.clone(),
                })
                .collect(),
        };
        let text = serde_json::to_string(&ckpt)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        GViTModel::from_checkpoint(ckpt)
    }

    fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        ckpt.config.validate()?;
        let layout = Layout::new(&ckpt.config);
        if ckpt.params.len() != layout.names.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} tensors, config implies {}",
                ckpt.params.len(),
                layout.names.len()
            )));
        }
        for (nt, (name, shape)) in ckpt.params.iter().zip(layout.names.iter().zip(&layout.shapes)) {
            if &nt.name != name || nt.tensor.shape() != shape.as_slice() {
                return Err(Error::Data(format!(
                    "checkpoint tensor {} {:?} does not match expected {name} {shape:?}",
                    nt.name,
                    nt.tensor.shape()
                )));
            }
        }
        let mut model = GViTModel {
            config: ckpt.config,
            layout,
            params: ckpt.params.into_iter().map(|nt| nt.tensor).collect(),
            feature_scale: Vec::new(),
            context: ckpt.context,
        };
        model.set_feature_scale(ckpt.feature_scale)?;
        Ok(model)
    }
}

/// Intermediate stages of a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardTrace {
    /// `N×D` GCN output.
    pub graph_matrix: Var,
    /// `M×D` pooled nodes.
    pub pooled: Var,
    /// `(M+1)×D` encoder input (class token first, positions added).
    pub class_matrix: Var,
    /// `(M+1)×D` encoder output.
    pub encoded: Var,
    /// `1×2` head output.
    pub output: Var,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    #[serde(flatten)]
    tensor: Tensor,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: GViTConfig,
    feature_scale: Vec<f64>,
    context: Option<DataContext>,
    params: Vec<NamedTensor>,
}

/// Pools `N` rows into `m` rows; see [`crate::tensor::pool_segments`].
pub fn uniform_pool(tape: &mut Tape, x: Var, m: usize) -> Result<Var> {
    tape.pool_rows(x, m)
}

/// Stacks the class token on top of the pooled nodes.
pub fn prepend_class_token(tape: &mut Tape, pooled: Var, class_token: Var) -> Result<Var> {
    let (tr, tc) = tape.value(class_token).as_matrix("prepend_class_token")?;
    if tr != 1 || tc != tape.value(pooled).cols() {
        return Err(Error::dim(
            "prepend_class_token",
            tape.value(class_token).shape(),
            tape.value(pooled).shape(),
        ));
    }
    tape.concat_rows(&[class_token, pooled])
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

/// Multi-head self-attention without masking.
pub fn mha(tape: &mut Tape, x: Var, w: &MhaWeights<Var>, heads: usize) -> Result<Var> {
    Ok(mha_with_attention(tape, x, w, heads)?.0)
}

/// [`mha`] that also returns each head's `T×T` attention matrix.
pub fn mha_with_attention(
    tape: &mut Tape,
    x: Var,
    w: &MhaWeights<Var>,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let d = tape.value(x).cols();
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("width {d} not divisible into {heads} heads")));
    }
    let head_dim = d / heads;
    let q = linear(tape, x, w.w_q, w.b_q)?;
    let k = linear(tape, x, w.w_k, w.b_k)?;
    let v = linear(tape, x, w.w_v, w.b_v)?;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    let mut attention = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
        let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
        let scores = tape.matmul_nt(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let att = tape.softmax_rows(scores)?;
        attention.push(att);
        outputs.push(tape.matmul(att, vh)?);
    }
    let merged = if heads == 1 {
        outputs[0]
    } else {
        tape.concat_cols(&outputs)?
    };
    Ok((linear(tape, merged, w.w_out, w.b_out)?, attention))
}

/// One transformer encoder block: attention and a GELU MLP, each on a
/// residual branch.
pub fn encoder_block(
    tape: &mut Tape,
    x: Var,
    w: &BlockWeights<Var>,
    heads: usize,
    placement: NormPlacement,
    eps: f64,
) -> Result<Var> {
    let mlp = |tape: &mut Tape, h: Var| -> Result<Var> {
        let hidden = linear(tape, h, w.mlp_w1, w.mlp_b1)?;
        let hidden = tape.gelu(hidden);
        linear(tape, hidden, w.mlp_w2, w.mlp_b2)
    };
    match placement {
        NormPlacement::Pre => {
            let h = tape.layer_norm_rows(x, w.norm1_gain, w.norm1_bias, eps)?;
            let a = mha(tape, h, &w.attn, heads)?;
            let x = tape.add(x, a)?;
            let h = tape.layer_norm_rows(x, w.norm2_gain, w.norm2_bias, eps)?;
            let m = mlp(tape, h)?;
            tape.add(x, m)
        }
        NormPlacement::Post => {
            let a = mha(tape, x, &w.attn, heads)?;
            let x = tape.add(x, a)?;
            let x = tape.layer_norm_rows(x, w.norm1_gain, w.norm1_bias, eps)?;
            let m = mlp(tape, x)?;
            let x = tape.add(x, m)?;
            tape.layer_norm_rows(x, w.norm2_gain, w.norm2_bias, eps)
        }
    }
}

/// Gas `g` is present iff its concentration reaches `threshold`. Returns
/// `None` when neither gas is present.
pub fn predict_composition(conc: [f64; 2], threshold: f64) -> Option<Composition> {
    Composition::from_presence(conc[0] >= threshold, conc[1] >= threshold)
}

/// Inverse of target normalisation: normalised value times the gas maximum.
pub fn denormalize(conc: [f64; 2], gas_maxima: [f64; 2]) -> [f64; 2] {
    [conc[0] * gas_maxima[0], conc[1] * gas_maxima[1]]
}
