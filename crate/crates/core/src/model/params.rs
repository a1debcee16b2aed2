use crate::error::ensure;
use crate::tensor::{gaussian, Matrix, Rng, Scalar};
use crate::Result;

use super::ModelConfig;

/// Role of a parameter tensor; drives initialization and weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Projection or embedding matrix.
    Weight,
    Bias,
    NormGain,
    NormShift,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: ParamKind,
}

/// Every parameter tensor implied by `cfg`, in canonical order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let mut push = |name: String, rows: usize, cols: usize, kind: ParamKind| out.push(ParamSpec { name, rows, cols, kind });
    let d = cfg.d_model;
    push("embedding".into(), cfg.vocab_size, d, ParamKind::Weight);
    if cfg.pos_kind == super::PosKind::Learned {
        push("pos_embedding".into(), cfg.max_seq, d, ParamKind::Weight);
    }
    let norm = |push: &mut dyn FnMut(String, usize, usize, ParamKind), prefix: &str| {
        push(format!("{prefix}.gamma"), 1, d, ParamKind::NormGain);
        if cfg.norm_has_shift() {
            push(format!("{prefix}.beta"), 1, d, ParamKind::NormShift);
        }
    };
    let linear = |push: &mut dyn FnMut(String, usize, usize, ParamKind), prefix: &str, tag: &str, out_dim: usize, in_dim: usize| {
        push(format!("{prefix}.w_{tag}"), out_dim, in_dim, ParamKind::Weight);
        if cfg.has_bias {
            push(format!("{prefix}.b_{tag}"), 1, out_dim, ParamKind::Bias);
        }
    };
    for l in 0..cfg.n_layers {
        norm(&mut push, &format!("blocks.{l}.attn_norm"));
        for tag in ["q", "k", "v", "o"] {
            linear(&mut push, &format!("blocks.{l}.attn"), tag, d, d);
        }
        norm(&mut push, &format!("blocks.{l}.ffn_norm"));
        linear(&mut push, &format!("blocks.{l}.ffn"), "up", cfg.d_ffn, d);
        linear(&mut push, &format!("blocks.{l}.ffn"), "down", d, cfg.d_ffn);
    }
    norm(&mut push, "final_norm");
    if !cfg.tied_unembedding {
        push("unembedding".into(), cfg.vocab_size, d, ParamKind::Weight);
    }
    if cfg.has_bias {
        push("unembed_bias".into(), 1, cfg.vocab_size, ParamKind::Bias);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm<T> {
    pub gamma: Matrix<T>,
    pub beta: Option<Matrix<T>>,
}

/// `y = x · Wᵀ + b` with `W` stored `[out × in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Matrix<T>,
    pub bias: Option<Matrix<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block<T> {
    pub attn_norm: Norm<T>,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
    pub ffn_norm: Norm<T>,
    pub up: Linear<T>,
    pub down: Linear<T>,
}

/// Full parameter set of a decoder-only transformer.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerParams<T> {
    pub embedding: Matrix<T>,
    pub pos_embedding: Option<Matrix<T>>,
    pub blocks: Vec<Block<T>>,
    pub final_norm: Norm<T>,
    /// `None` when the unembedding is tied to `embedding`.
    pub unembedding: Option<Matrix<T>>,
    pub unembed_bias: Option<Matrix<T>>,
}

impl<T: Scalar> TransformerParams<T> {
    /// Build every tensor of `cfg`'s layout with `make`, called in layout order.
    pub fn from_fn(cfg: &ModelConfig, mut make: impl FnMut(&ParamSpec) -> Matrix<T>) -> Self {
        let mut specs = param_layout(cfg).into_iter();
        let mut next = |expect: &str| {
            let spec = specs.next().expect("layout covers every tensor");
            debug_assert!(spec.name.ends_with(expect), "{} vs {expect}", spec.name);
            make(&spec)
        };
        let shift = cfg.norm_has_shift();
        let bias = cfg.has_bias;
        let embedding = next("embedding");
        let pos_embedding = (cfg.pos_kind == super::PosKind::Learned).then(|| next("pos_embedding"));
        let norm = |next: &mut dyn FnMut(&str) -> Matrix<T>| Norm { gamma: next("gamma"), beta: shift.then(|| next("beta")) };
        let linear = |next: &mut dyn FnMut(&str) -> Matrix<T>, tag: &str| Linear {
            weight: next(&format!("w_{tag}")),
            bias: bias.then(|| next(&format!("b_{tag}"))),
        };
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for _ in 0..cfg.n_layers {
            let attn_norm = norm(&mut next);
            let q = linear(&mut next, "q");
            let k = linear(&mut next, "k");
            let v = linear(&mut next, "v");
            let o = linear(&mut next, "o");
            let ffn_norm = norm(&mut next);
            let up = linear(&mut next, "up");
            let down = linear(&mut next, "down");
            blocks.push(Block { attn_norm, q, k, v, o, ffn_norm, up, down });
        }
        let final_norm = norm(&mut next);
        let unembedding = (!cfg.tied_unembedding).then(|| next("unembedding"));
        let unembed_bias = bias.then(|| next("unembed_bias"));
        Self { embedding, pos_embedding, blocks, final_norm, unembedding, unembed_bias }
    }

    /// Glorot-normal weights (`std = sqrt(2 / (rows + cols))`), zero biases
    /// and shifts, unit gains. Draws happen in layout order.
    pub fn init_random(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        Ok(Self::from_fn(cfg, |spec| match spec.kind {
            ParamKind::Weight => {
                let std = (2.0 / (spec.rows + spec.cols) as f64).sqrt();
                gaussian(rng, spec.rows, spec.cols, std)
            }
            ParamKind::Bias | ParamKind::NormShift => Matrix::zeros(spec.rows, spec.cols),
            ParamKind::NormGain => Matrix::filled(spec.rows, spec.cols, T::one()),
        }))
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self::from_fn(cfg, |spec| Matrix::zeros(spec.rows, spec.cols))
    }

    /// Tensors in layout order, with their canonical names.
    pub fn named(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out: Vec<(String, &Matrix<T>)> = vec![("embedding".into(), &self.embedding)];
        if let Some(p) = &self.pos_embedding {
            out.push(("pos_embedding".into(), p));
        }
        fn norm<'a, T>(out: &mut Vec<(String, &'a Matrix<T>)>, prefix: &str, n: &'a Norm<T>) {
            out.push((format!("{prefix}.gamma"), &n.gamma));
            if let Some(b) = &n.beta {
                out.push((format!("{prefix}.beta"), b));
            }
        }
        fn linear<'a, T>(out: &mut Vec<(String, &'a Matrix<T>)>, prefix: &str, tag: &str, l: &'a Linear<T>) {
            out.push((format!("{prefix}.w_{tag}"), &l.weight));
            if let Some(b) = &l.bias {
                out.push((format!("{prefix}.b_{tag}"), b));
            }
        }
        for (i, b) in self.blocks.iter().enumerate() {
            norm(&mut out, &format!("blocks.{i}.attn_norm"), &b.attn_norm);
            let attn = format!("blocks.{i}.attn");
            linear(&mut out, &attn, "q", &b.q);
            linear(&mut out, &attn, "k", &b.k);
            linear(&mut out, &attn, "v", &b.v);
            linear(&mut out, &attn, "o", &b.o);
            norm(&mut out, &format!("blocks.{i}.ffn_norm"), &b.ffn_norm);
            let ffn = format!("blocks.{i}.ffn");
            linear(&mut out, &ffn, "up", &b.up);
            linear(&mut out, &ffn, "down", &b.down);
        }
        norm(&mut out, "final_norm", &self.final_norm);
        if let Some(u) = &self.unembedding {
            out.push(("unembedding".into(), u));
        }
        if let Some(b) = &self.unembed_bias {
            out.push(("unembed_bias".into(), b));
        }
        out
    }

    /// Mutable counterpart of [`named`](Self::named), same order.
    pub fn named_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let mut out: Vec<(String, &mut Matrix<T>)> = vec![("embedding".into(), &mut self.embedding)];
        if let Some(p) = &mut self.pos_embedding {
            out.push(("pos_embedding".into(), p));
        }
        fn norm<'a, T>(out: &mut Vec<(String, &'a mut Matrix<T>)>, prefix: &str, n: &'a mut Norm<T>) {
            out.push((format!("{prefix}.gamma"), &mut n.gamma));
            if let Some(b) = &mut n.beta {
                out.push((format!("{prefix}.beta"), b));
            }
        }
        fn linear<'a, T>(out: &mut Vec<(String, &'a mut Matrix<T>)>, prefix: &str, tag: &str, l: &'a mut Linear<T>) {
            out.push((format!("{prefix}.w_{tag}"), &mut l.weight));
            if let Some(b) = &mut l.bias {
                out.push((format!("{prefix}.b_{tag}"), b));
            }
        }
        for (i, b) in self.blocks.iter_mut().enumerate() {
            norm(&mut out, &format!("blocks.{i}.attn_norm"), &mut b.attn_norm);
            let attn = format!("blocks.{i}.attn");
            linear(&mut out, &attn, "q", &mut b.q);
            linear(&mut out, &attn, "k", &mut b.k);
            linear(&mut out, &attn, "v", &mut b.v);
            linear(&mut out, &attn, "o", &mut b.o);
            norm(&mut out, &format!("blocks.{i}.ffn_norm"), &mut b.ffn_norm);
            let ffn = format!("blocks.{i}.ffn");
            linear(&mut out, &ffn, "up", &mut b.up);
            linear(&mut out, &ffn, "down", &mut b.down);
        }
        norm(&mut out, "final_norm", &mut self.final_norm);
        if let Some(u) = &mut self.unembedding {
            out.push(("unembedding".into(), u));
        }
        if let Some(b) = &mut self.unembed_bias {
            out.push(("unembed_bias".into(), b));
        }
        out
    }

    pub fn get(&self, name: &str) -> Option<&Matrix<T>> {
        self.named().into_iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix<T>> {
        self.named_mut().into_iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    /// Weight used by the output projection (`embedding` when tied).
    pub fn output_weight(&self) -> &Matrix<T> {
        self.unembedding.as_ref().unwrap_or(&self.embedding)
    }

    /// Check that tensor names and shapes match `cfg`'s layout exactly.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let layout = param_layout(cfg);
        let named = self.named();
        ensure!(layout.len() == named.len(), "parameter count {} does not match config layout {}", named.len(), layout.len());
        for (spec, (name, m)) in layout.iter().zip(&named) {
            ensure!(
                spec.name == *name && m.shape() == (spec.rows, spec.cols),
                "tensor {name} {:?} does not match layout {} {:?}",
                m.shape(),
                spec.name,
                (spec.rows, spec.cols)
            );
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, m)| m.all_finite())
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> TransformerParams<U> {
        let cast_norm = |n: &Norm<T>| Norm { gamma: n.gamma.cast(), beta: n.beta.as_ref().map(Matrix::cast) };
        let cast_lin = |l: &Linear<T>| Linear { weight: l.weight.cast(), bias: l.bias.as_ref().map(Matrix::cast) };
        TransformerParams {
            embedding: self.embedding.cast(),
            pos_embedding: self.pos_embedding.as_ref().map(Matrix::cast),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    attn_norm: cast_norm(&b.attn_norm),
                    q: cast_lin(&b.q),
                    k: cast_lin(&b.k),
                    v: cast_lin(&b.v),
                    o: cast_lin(&b.o),
                    ffn_norm: cast_norm(&b.ffn_norm),
                    up: cast_lin(&b.up),
                    down: cast_lin(&b.down),
                })
                .collect(),
            final_norm: cast_norm(&self.final_norm),
            unembedding: self.unembedding.as_ref().map(Matrix::cast),
            unembed_bias: self.unembed_bias.as_ref().map(Matrix::cast),
        }
    }
}
