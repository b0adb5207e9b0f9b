//! The branch message passing encoder, tree readout and prediction heads.
//!
//! Layer update for node `i` with branch set `B(i)`:
//!
//! ```text
//! psi_out = psi([features, mask])                    per branch
//! m       = phi([h_i, a1*h_j, a2*h_k, a3*h_p, psi_out])
//! h_i'    = sigma(AGG_{b in B(i)} m_b)               sigma(0) when B(i) is empty
//! ```
//!
//! Padded branch slots contribute zero embeddings and masked features.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, Mlp, MlpSpec, ParamSet, Reduce, Tensor, Var};
use crate::branches::{enumerate_branches, BranchIndex, PAD};
use crate::error::{GtmpError, Result};
use crate::geometry::extract_all;
use crate::io::TaskKind;
use crate::tree::GeometricTree;

/// Width of the geometric input: six features plus six mask bits.
pub const GEO_INPUT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// Weights of the three descendants' embeddings in each branch message.
    pub alpha: [f64; 3],
    pub agg: Reduce,
    pub readout: Readout,
    pub activation: Activation,
    /// Width of per-node input attributes (0: a learned constant embedding).
    pub attr_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 3,
            hidden_dim: 64,
            alpha: [1.0, 1.0, 1.0],
            agg: Reduce::Mean,
            readout: Readout::Mean,
            activation: Activation::Relu,
            attr_dim: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_dim == 0 {
            return Err(GtmpError::Config("num_layers and hidden_dim must be >= 1".into()));
        }
        if self.alpha.iter().any(|a| !a.is_finite()) {
            return Err(GtmpError::Config("alpha must be finite".into()));
        }
        Ok(())
    }
}

/// Prediction head description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Number of logits for classification; ignored for regression.
    pub num_classes: usize,
}

impl TaskSpec {
    pub fn outputs(&self) -> usize {
        match self.kind {
            TaskKind::Classification => self.num_classes,
            TaskKind::Regression => 1,
        }
    }
}

/// Everything needed to rebuild a model's parameter layout; stored next to checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub task: Option<TaskSpec>,
    /// Number of radial bases of the generative head, when present.
    #[serde(default)]
    pub generator_bins: Option<usize>,
}

impl ModelConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| GtmpError::Checkpoint(e.to_string()))?;
        c.encoder.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerMlps {
    psi: Mlp,
    phi: Mlp,
    sigma: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
enum Embedder {
    Affine { w: usize, b: usize },
    Constant(usize),
}

/// Encoder, heads and all their parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GtmpModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    embed: Embedder,
    layers: Vec<LayerMlps>,
    head: Option<Mlp>,
    generator: Option<Mlp>,
}

fn layer_specs(enc: &EncoderConfig) -> (MlpSpec, MlpSpec, MlpSpec) {
    let d = enc.hidden_dim;
    (
        MlpSpec::new(vec![GEO_INPUT, d, d], enc.activation),
        MlpSpec::new(vec![5 * d, d, d], enc.activation),
        MlpSpec::new(vec![d, d, d], enc.activation),
    )
}

fn head_spec(enc: &EncoderConfig, task: &TaskSpec) -> MlpSpec {
    let d = enc.hidden_dim;
    MlpSpec::new(vec![d, d, d, task.outputs()], enc.activation)
}

fn generator_spec(enc: &EncoderConfig, bins: usize) -> MlpSpec {
    let d = enc.hidden_dim;
    MlpSpec::new(vec![d + bins, d, bins], enc.activation)
}

/// Parameter-name prefixes that belong to the encoder.
pub fn is_encoder_param(name: &str) -> bool {
    name.starts_with("embed.") || name.starts_with("layer")
}

impl GtmpModel {
    /// Fresh model with seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.encoder.validate()?;
        if let Some(t) = &config.task {
            if t.kind == TaskKind::Classification && t.num_classes < 2 {
                return Err(GtmpError::Config("classification needs >= 2 classes".into()));
            }
        }
        if config.generator_bins.is_some_and(|k| k < 2) {
            return Err(GtmpError::Config("generator needs >= 2 bins".into()));
        }
        let enc = &config.encoder;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let d = enc.hidden_dim;
        let embed = if enc.attr_dim > 0 {
            Embedder::Affine {
                w: params.insert_uniform("embed.w", enc.attr_dim, d, enc.attr_dim, &mut rng)?,
                b: params.insert_uniform("embed.b", 1, d, enc.attr_dim, &mut rng)?,
            }
        } else {
            Embedder::Constant(params.insert_uniform("embed.const", 1, d, 1, &mut rng)?)
        };
        let (psi, phi, sigma) = layer_specs(enc);
        let mut layers = Vec::new();
        for l in 0..enc.num_layers {
            layers.push(LayerMlps {
                psi: Mlp::register(&mut params, &format!("layer{l}.psi"), psi.clone(), &mut rng)?,
                phi: Mlp::register(&mut params, &format!("layer{l}.phi"), phi.clone(), &mut rng)?,
                sigma: Mlp::register(&mut params, &format!("layer{l}.sigma"), sigma.clone(), &mut rng)?,
            });
        }
        let head = match &config.task {
            Some(t) => Some(Mlp::register(&mut params, "head", head_spec(enc, t), &mut rng)?),
            None => None,
        };
        let generator = match config.generator_bins {
            Some(k) => Some(Mlp::register(&mut params, "gen", generator_spec(enc, k), &mut rng)?),
            None => None,
        };
        Ok(Self { config, params, embed, layers, head, generator })
    }

    /// Rebinds a model to loaded parameters, checking every name and shape.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.encoder.validate()?;
        let enc = &config.encoder;
        let shape_of = |name: &str, shape: [usize; 2]| -> Result<usize> {
            let id = params.id(name).ok_or_else(|| GtmpError::Checkpoint(format!("missing parameter {name}")))?;
            if params.tensor(id).shape() != shape {
                return Err(GtmpError::Checkpoint(format!(
                    "{name} has shape {:?}, config implies {shape:?}",
                    params.tensor(id).shape()
                )));
            }
            Ok(id)
        };
        let d = enc.hidden_dim;
        let embed = if enc.attr_dim > 0 {
            Embedder::Affine { w: shape_of("embed.w", [enc.attr_dim, d])?, b: shape_of("embed.b", [1, d])? }
        } else {
            Embedder::Constant(shape_of("embed.const", [1, d])?)
        };
        let (psi, phi, sigma) = layer_specs(enc);
        let mut layers = Vec::new();
        for l in 0..enc.num_layers {
            layers.push(LayerMlps {
                psi: Mlp::bind(&params, &format!("layer{l}.psi"), psi.clone())?,
                phi: Mlp::bind(&params, &format!("layer{l}.phi"), phi.clone())?,
                sigma: Mlp::bind(&params, &format!("layer{l}.sigma"), sigma.clone())?,
            });
        }
        let head = match &config.task {
            Some(t) => Some(Mlp::bind(&params, "head", head_spec(enc, t))?),
            None => None,
        };
        let generator = match config.generator_bins {
            Some(k) => Some(Mlp::bind(&params, "gen", generator_spec(enc, k))?),
            None => None,
        };
        Ok(Self { config, params, embed, layers, head, generator })
    }

    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.config.encoder
    }

    pub fn hidden_dim(&self) -> usize {
        self.config.encoder.hidden_dim
    }

    pub fn generator_bins(&self) -> Option<usize> {
        self.config.generator_bins
    }

    /// Mask over `params`: true for encoder tensors.
    pub fn encoder_mask(&self) -> Vec<bool> {
        self.params.names().iter().map(|n| is_encoder_param(n)).collect()
    }

    /// Input embeddings `h^(0)`, one row per node.
    pub fn embed_graph(&self, g: &mut Graph, prep: &PreparedTree) -> Result<Var> {
        match self.embed {
            Embedder::Affine { w, b } => {
                let x = g.input(prep.attrs.clone());
                let wv = g.param(&self.params, w);
                let bv = g.param(&self.params, b);
                let z = g.matmul(x, wv)?;
                g.add_bias(z, bv)
            }
            Embedder::Constant(c) => {
                let cv = g.param(&self.params, c);
                g.gather_rows(cv, &vec![0; prep.num_nodes])
            }
        }
    }

    /// One message passing layer: `h^(l) -> h^(l+1)`.
    pub fn layer_graph(&self, g: &mut Graph, prep: &PreparedTree, geo: Var, h: Var, layer: usize) -> Result<Var> {
        let enc = &self.config.encoder;
        let mlps = self.layers.get(layer).ok_or_else(|| GtmpError::Contract(format!("no layer {layer}")))?;
        if g.value(h).shape() != [prep.num_nodes, enc.hidden_dim] {
            return Err(GtmpError::Shape(format!(
                "layer input {:?}, expected [{}, {}]",
                g.value(h).shape(),
                prep.num_nodes,
                enc.hidden_dim
            )));
        }
        let hi = g.gather_rows(h, &prep.slot[0])?;
        let mut parts = vec![hi];
        for s in 1..4 {
            let hs = g.gather_rows(h, &prep.slot[s])?;
            parts.push(g.scale(hs, enc.alpha[s - 1]));
        }
        parts.push(mlps.psi.forward(g, &self.params, geo)?);
        let cat = g.concat_cols(&parts)?;
        let messages = mlps.phi.forward(g, &self.params, cat)?;
        let agg = g.segment_reduce(messages, &prep.offsets, enc.agg)?;
        mlps.sigma.forward(g, &self.params, agg)
    }

    /// Runs embedder and every layer; returns all layer embeddings and the tree vector.
    pub fn encode_graph(&self, g: &mut Graph, prep: &PreparedTree) -> Result<(Vec<Var>, Var)> {
        let geo = g.input(prep.geo.clone());
        let mut layers = vec![self.embed_graph(g, prep)?];
        for l in 0..self.layers.len() {
            let next = self.layer_graph(g, prep, geo, *layers.last().unwrap(), l)?;
            layers.push(next);
        }
        let last = *layers.last().unwrap();
        let tree_vec = match self.config.encoder.readout {
            Readout::Mean => g.mean_rows(last),
            Readout::Sum => g.sum_rows(last),
        };
        Ok((layers, tree_vec))
    }

    /// Task head on a `1 x hidden_dim` tree vector.
    pub fn predict_graph(&self, g: &mut Graph, tree_vec: Var, kind: TaskKind) -> Result<Var> {
        let (head, task) = match (&self.head, &self.config.task) {
            (Some(h), Some(t)) => (h, t),
            _ => return Err(GtmpError::Contract("model has no task head".into())),
        };
        if task.kind != kind {
            return Err(GtmpError::Contract(format!("head is for {:?}, asked for {kind:?}", task.kind)));
        }
        head.forward(g, &self.params, tree_vec)
    }

    /// Generative head `g` on `[h_i, context_i]` rows; returns logits over bins.
    pub fn generator_graph(&self, g: &mut Graph, input: Var) -> Result<Var> {
        let gen = self.generator.as_ref().ok_or_else(|| GtmpError::Contract("model has no generative head".into()))?;
        gen.forward(g, &self.params, input)
    }

    /// Forward pass without gradients.
    pub fn encode(&self, tree: &GeometricTree) -> Result<Encoding> {
        let prep = PreparedTree::new(tree)?;
        self.encode_prepared(&prep)
    }

    pub fn encode_prepared(&self, prep: &PreparedTree) -> Result<Encoding> {
        let mut g = Graph::new();
        let (layers, tv) = self.encode_graph(&mut g, prep)?;
        Ok(Encoding {
            layers: layers.iter().map(|&v| g.value(v).clone()).collect(),
            tree_vector: g.value(tv).data().to_vec(),
        })
    }

    /// Head output for an encoded tree: logits (classification) or one value (regression).
    pub fn predict(&self, tree_vector: &[f64], kind: TaskKind) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let tv = g.input(Tensor::row(tree_vector));
        let out = self.predict_graph(&mut g, tv, kind)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Encode then predict.
    pub fn score(&self, prep: &PreparedTree) -> Result<Vec<f64>> {
        let kind = self.config.task.map(|t| t.kind).ok_or_else(|| GtmpError::Contract("model has no task head".into()))?;
        let enc = self.encode_prepared(prep)?;
        self.predict(&enc.tree_vector, kind)
    }

    /// Replaces the task head with a freshly initialised one.
    pub fn with_new_head(&self, task: TaskSpec, seed: u64) -> Result<Self> {
        let config = ModelConfig { encoder: self.config.encoder.clone(), task: Some(task), generator_bins: None };
        let mut fresh = GtmpModel::new(config, seed)?;
        fresh.params.load_matching(&self.params, is_encoder_param)?;
        Ok(fresh)
    }
}

/// Node embeddings of every layer (`layers[0]` is the input embedding) and the pooled vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub layers: Vec<Tensor>,
    pub tree_vector: Vec<f64>,
}

impl Encoding {
    pub fn final_layer(&self) -> &Tensor {
        self.layers.last().expect("at least the input layer")
    }
}

/// Per-tree constants of the forward pass: attributes, branch slots and features.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTree {
    pub num_nodes: usize,
    pub attrs: Tensor,
    /// Branches grouped by originating node.
    pub offsets: Vec<usize>,
    /// `slot[s][b]`: node in slot `s` of branch `b`, or [`PAD`].
    pub slot: [Vec<usize>; 4],
    /// `[branches, 12]` features and mask bits.
    pub geo: Tensor,
}

impl PreparedTree {
    pub fn new(tree: &GeometricTree) -> Result<Self> {
        let index = enumerate_branches(tree);
        Self::with_index(tree, &index)
    }

    pub fn with_index(tree: &GeometricTree, index: &BranchIndex) -> Result<Self> {
        let feats = extract_all(tree, index)?;
        let nb = index.branches.len();
        let mut geo = Vec::with_capacity(nb * GEO_INPUT);
        for f in &feats {
            geo.extend_from_slice(&f.to_input());
        }
        let mut slot: [Vec<usize>; 4] = Default::default();
        for b in &index.branches {
            for (s, col) in slot.iter_mut().enumerate() {
                col.push(if s <= b.valid_len as usize { b.nodes[s] } else { PAD });
            }
        }
        let a = tree.attr_width();
        let mut attrs = Vec::with_capacity(tree.len() * a);
        for n in tree.nodes() {
            attrs.extend_from_slice(&n.attrs);
        }
        Ok(Self {
            num_nodes: tree.len(),
            attrs: Tensor::from_vec(tree.len(), a, attrs)?,
            offsets: index.offsets.clone(),
            slot,
            geo: Tensor::from_vec(nb, GEO_INPUT, geo)?,
        })
    }

    pub fn num_branches(&self) -> usize {
        self.geo.rows()
    }
}
