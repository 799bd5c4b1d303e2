//! Embedding + MLP branches for the point branch `f` and the bias branch `z`,
//! with optional parameter sharing between them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::{Tape, Var};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSpec {
    HashedCategorical { buckets: u32 },
    /// Bin `k` holds values in `[edges[k-1], edges[k])`; there are `edges.len() + 1` bins.
    DiscretizedContinuous { edges: Vec<f64> },
}

impl FeatureSpec {
    pub fn cardinality(&self) -> usize {
        match self {
            FeatureSpec::HashedCategorical { buckets } => *buckets as usize,
            FeatureSpec::DiscretizedContinuous { edges } => edges.len() + 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sharing {
    #[default]
    None,
    ShareEmbedding,
    /// Shared embeddings plus the first `k` hidden layers.
    ShareEmbeddingPlusMlp(usize),
}

impl Sharing {
    pub fn label(&self, depth: usize) -> String {
        match self {
            Sharing::None => format!("0/1 Embedding + 0/{depth} MLP"),
            Sharing::ShareEmbedding => format!("1/1 Embedding + 0/{depth} MLP"),
            Sharing::ShareEmbeddingPlusMlp(k) => format!("1/1 Embedding + {k}/{depth} MLP"),
        }
    }

    fn shares_embedding(&self) -> bool {
        !matches!(self, Sharing::None)
    }

    fn shared_layers(&self) -> usize {
        match self {
            Sharing::ShareEmbeddingPlusMlp(k) => *k,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    #[serde(default)]
    pub features: Vec<FeatureSpec>,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub mlp_dims: Vec<usize>,
    #[serde(default)]
    pub sharing: Sharing,
}

fn default_embedding_dim() -> usize {
    16
}

impl Default for ArchSpec {
    fn default() -> Self {
        ArchSpec::scalar()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArchError {
    #[error("sharing {shared} MLP layers but the MLP has only {depth}")]
    TooManyShared { shared: usize, depth: usize },
    #[error("zero-sized layer or embedding")]
    ZeroWidth,
    #[error("feature {feature} has zero cardinality")]
    EmptyFeature { feature: usize },
    #[error("feature {feature}: index {index} out of range for cardinality {cardinality}")]
    IndexOutOfRange { feature: usize, index: u32, cardinality: usize },
    #[error("row has {got} features, architecture expects {want}")]
    Arity { got: usize, want: usize },
}

impl ArchSpec {
    /// No features and no hidden layers: each branch is one learnable scalar.
    pub fn scalar() -> Self {
        ArchSpec {
            features: Vec::new(),
            embedding_dim: default_embedding_dim(),
            mlp_dims: Vec::new(),
            sharing: Sharing::None,
        }
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        let shared = self.sharing.shared_layers();
        if shared > self.mlp_dims.len() {
            return Err(ArchError::TooManyShared { shared, depth: self.mlp_dims.len() });
        }
        if self.mlp_dims.contains(&0) || (!self.features.is_empty() && self.embedding_dim == 0) {
            return Err(ArchError::ZeroWidth);
        }
        if let Some(feature) = self.features.iter().position(|f| f.cardinality() == 0) {
            return Err(ArchError::EmptyFeature { feature });
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.features.len() * self.embedding_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Branch {
    embeddings: Vec<usize>,
    hidden: Vec<Dense>,
    head: Dense,
}

/// Parameter offsets for both branches inside one flat vector laid out as
/// `[f-branch | z-branch-owned]`; shared z entries point into the f range.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    arch: ArchSpec,
    f: Branch,
    z: Option<Branch>,
    n_f: usize,
    n_total: usize,
}

impl Layout {
    pub fn new(arch: &ArchSpec, with_bias_branch: bool) -> Result<Self, ArchError> {
        arch.validate()?;
        let mut next = 0usize;
        let f = Self::alloc_branch(arch, &mut next, None);
        let n_f = next;
        let z = with_bias_branch.then(|| Self::alloc_branch(arch, &mut next, Some(&f)));
        Ok(Layout { arch: arch.clone(), f, z, n_f, n_total: next })
    }

    fn alloc_branch(arch: &ArchSpec, next: &mut usize, share_from: Option<&Branch>) -> Branch {
        let mut take = |n: usize| {
            let at = *next;
            *next += n;
            at
        };
        let shares_emb = share_from.is_some() && arch.sharing.shares_embedding();
        let embeddings = match share_from {
            Some(src) if shares_emb => src.embeddings.clone(),
            _ => arch
                .features
                .iter()
                .map(|f| take(f.cardinality() * arch.embedding_dim))
                .collect(),
        };
        let shared_layers = if share_from.is_some() { arch.sharing.shared_layers() } else { 0 };
        let mut fan_in = arch.input_width();
        let mut hidden = Vec::with_capacity(arch.mlp_dims.len());
        for (l, &width) in arch.mlp_dims.iter().enumerate() {
            let layer = match share_from {
                Some(src) if l < shared_layers => src.hidden[l].clone(),
                _ => Dense { w: take(width * fan_in), b: take(width), fan_in, fan_out: width },
            };
            hidden.push(layer);
            fan_in = width;
        }
        let head = Dense { w: take(fan_in), b: take(1), fan_in, fan_out: 1 };
        Branch { embeddings, hidden, head }
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    /// Parameters owned by the point branch (including anything shared).
    pub fn n_f(&self) -> usize {
        self.n_f
    }

    /// Parameters owned by the bias branch.
    pub fn n_z(&self) -> usize {
        self.n_total - self.n_f
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn has_bias_branch(&self) -> bool {
        self.z.is_some()
    }

    /// Embeddings draw from Uniform(-0.05, 0.05), dense weights use Glorot
    /// uniform bounds and biases start at zero, except the bias-branch output
    /// bias which starts at `z_bias`.
    pub fn init(&self, rng: &mut RngStream, z_bias: f64) -> Vec<f64> {
        let mut v: Vec<f64> = (0..self.n_total).map(|_| rng.uniform_in(-0.05, 0.05)).collect();
        let mut seen = std::collections::HashSet::new();
        for br in std::iter::once(&self.f).chain(&self.z) {
            for layer in br.hidden.iter().chain(std::iter::once(&br.head)) {
                if !seen.insert(layer.w) {
                    continue;
                }
                let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
                for w in &mut v[layer.w..layer.w + layer.fan_in * layer.fan_out] {
                    *w *= bound / 0.05;
                }
                v[layer.b..layer.b + layer.fan_out].fill(0.0);
            }
        }
        if let Some(z) = &self.z {
            v[z.head.b] = z_bias;
        }
        v
    }

    pub fn check_row(&self, row: &[u32]) -> Result<(), ArchError> {
        let feats = &self.arch.features;
        if row.len() != feats.len() {
            return Err(ArchError::Arity { got: row.len(), want: feats.len() });
        }
        for (feature, (&index, spec)) in row.iter().zip(feats).enumerate() {
            let cardinality = spec.cardinality();
            if index as usize >= cardinality {
                return Err(ArchError::IndexOutOfRange { feature, index, cardinality });
            }
        }
        Ok(())
    }

    /// Plain evaluation of the point branch.
    pub fn eval_f(&self, params: &[f64], row: &[u32]) -> f64 {
        self.eval_branch(&self.f, params, row)
    }

    /// Plain evaluation of the bias branch; panics without one.
    pub fn eval_z(&self, params: &[f64], row: &[u32]) -> f64 {
        self.eval_branch(self.z.as_ref().expect("no bias branch"), params, row)
    }

    fn eval_branch(&self, br: &Branch, params: &[f64], row: &[u32]) -> f64 {
        let d = self.arch.embedding_dim;
        let mut x: Vec<f64> = Vec::with_capacity(self.arch.input_width());
        for (&off, &idx) in br.embeddings.iter().zip(row) {
            let at = off + idx as usize * d;
            x.extend_from_slice(&params[at..at + d]);
        }
        for layer in &br.hidden {
            let mut h = Vec::with_capacity(layer.fan_out);
            for j in 0..layer.fan_out {
                let w = &params[layer.w + j * layer.fan_in..layer.w + (j + 1) * layer.fan_in];
                let s = params[layer.b + j] + dot(w, &x);
                h.push(if s >= 0.0 { s } else { 0.0 });
            }
            x = h;
        }
        let head = &br.head;
        params[head.b] + dot(&params[head.w..head.w + head.fan_in], &x)
    }

    /// Records the point branch for one row.
    pub fn tape_f(&self, tape: &mut Tape, leaves: &mut LeafCache, row: &[u32]) -> Var {
        self.tape_branch(&self.f, tape, leaves, row)
    }

    /// Records the bias branch for one row; panics without one.
    pub fn tape_z(&self, tape: &mut Tape, leaves: &mut LeafCache, row: &[u32]) -> Var {
        self.tape_branch(self.z.as_ref().expect("no bias branch"), tape, leaves, row)
    }

    fn tape_branch(&self, br: &Branch, tape: &mut Tape, leaves: &mut LeafCache, row: &[u32]) -> Var {
        let d = self.arch.embedding_dim;
        let mut x: Vec<Var> = Vec::with_capacity(self.arch.input_width());
        for (&off, &idx) in br.embeddings.iter().zip(row) {
            let at = off + idx as usize * d;
            x.extend((at..at + d).map(|p| leaves.get(tape, p)));
        }
        let mut terms = Vec::new();
        for layer in &br.hidden {
            let mut h = Vec::with_capacity(layer.fan_out);
            for j in 0..layer.fan_out {
                terms.clear();
                terms.push(leaves.get(tape, layer.b + j));
                for (i, &xi) in x.iter().enumerate() {
                    let w = leaves.get(tape, layer.w + j * layer.fan_in + i);
                    terms.push(tape.mul(w, xi));
                }
                let s = tape.sum(&terms);
                h.push(tape.relu(s));
            }
            x = h;
        }
        let head = &br.head;
        terms.clear();
        terms.push(leaves.get(tape, head.b));
        for (i, &xi) in x.iter().enumerate() {
            let w = leaves.get(tape, head.w + i);
            terms.push(tape.mul(w, xi));
        }
        tape.sum(&terms)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One parameter leaf per parameter per tape; reset together with the tape.
#[derive(Clone, Debug, Default)]
pub struct LeafCache {
    slots: Vec<Option<Var>>,
}

impl LeafCache {
    pub fn new(n_params: usize) -> Self {
        LeafCache { slots: vec![None; n_params] }
    }

    pub fn reset(&mut self) {
        self.slots.iter_mut().for_each(|s| *s = None);
    }

    pub fn get(&mut self, tape: &mut Tape, p: usize) -> Var {
        *self.slots[p].get_or_insert_with(|| tape.param(p))
    }
}
