use serde::{Deserialize, Serialize};

use crate::error::ensure;
use crate::model::{Block, Linear, ModelConfig, Norm, TransformerParams};
use crate::tensor::{Matrix, Rng, Scalar};
use crate::{Error, Result};

use super::{expand_embedding, expand_linear, expand_norm, make_clone_map, make_head_clone_map, noise_std, CloneMap, Strategy};

/// Fold factors and strategy of one expansion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    /// Hidden (residual stream) fold `n_e`.
    pub embed_fold: usize,
    /// FFN inner fold `n_f`.
    pub ffn_fold: usize,
    /// Head-count fold `h`.
    pub head_count_fold: usize,
    /// Head-width fold `k`; `h · k` must equal `n_e`.
    pub head_dim_fold: usize,
    pub strategy: Strategy,
    #[serde(default = "default_snr")]
    pub snr_db: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_snr() -> f64 {
    10.0
}

impl ExpansionConfig {
    pub fn new(embed_fold: usize, ffn_fold: usize, head_count_fold: usize, head_dim_fold: usize, strategy: Strategy) -> Self {
        Self { embed_fold, ffn_fold, head_count_fold, head_dim_fold, strategy, snr_db: default_snr(), seed: 0 }
    }

    /// `n`-fold everywhere with all heads duplicated (`h = n`, `k = 1`).
    pub fn uniform(n: usize, strategy: Strategy) -> Self {
        Self::new(n, n, n, 1, strategy)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_snr(mut self, snr_db: f64) -> Self {
        self.snr_db = snr_db;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.embed_fold >= 1 && self.ffn_fold >= 1 && self.head_count_fold >= 1 && self.head_dim_fold >= 1,
            "all folds must be at least 1: {self:?}"
        );
        ensure!(
            self.head_count_fold * self.head_dim_fold == self.embed_fold,
            "head_count_fold ({}) x head_dim_fold ({}) must equal embed_fold ({})",
            self.head_count_fold,
            self.head_dim_fold,
            self.embed_fold
        );
        ensure!(self.snr_db.is_finite(), "snr_db must be finite");
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.embed_fold == 1 && self.ffn_fold == 1
    }
}

/// How one destination tensor was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceiptEntry {
    pub name: String,
    pub src_shape: (usize, usize),
    pub dst_shape: (usize, usize),
    pub row_map: CloneMap,
    pub col_map: CloneMap,
    pub strategy_requested: Strategy,
    /// `None` for plain duplications (embeddings, norms, biases), which
    /// every strategy produces identically.
    pub strategy_used: Option<Strategy>,
    pub noise_std: f64,
    /// Extra scalar applied after expansion (query rescaling).
    pub scale: f64,
}

impl ReceiptEntry {
    pub fn fell_back(&self) -> bool {
        self.strategy_used.is_some_and(|used| used != self.strategy_requested)
    }
}

/// Record of an expansion, enough to route source activations to the
/// destination layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionReceipt {
    pub source_config: ModelConfig,
    pub dest_config: ModelConfig,
    pub expansion: ExpansionConfig,
    /// Map of the residual stream (`d_model`).
    pub hidden_map: CloneMap,
    /// Map of the flattened `n_heads × d_head` attention dimension.
    pub head_map: CloneMap,
    pub ffn_map: CloneMap,
    /// One entry per destination tensor, in layout order.
    pub entries: Vec<ReceiptEntry>,
}

impl ExpansionReceipt {
    pub fn entry(&self, name: &str) -> Option<&ReceiptEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Source head cloned by destination head `head`.
    pub fn source_head(&self, head: usize) -> usize {
        head / self.expansion.head_count_fold
    }

    /// Check that the receipt describes exactly these two configs.
    pub fn check_configs(&self, src: &ModelConfig, dst: &ModelConfig) -> Result<()> {
        ensure!(&self.source_config == src, "receipt source config does not match the source model");
        ensure!(&self.dest_config == dst, "receipt destination config does not match the destination model");
        Ok(())
    }
}

/// Destination config of an expansion.
pub fn expand_config(cfg: &ModelConfig, exp: &ExpansionConfig) -> Result<ModelConfig> {
    cfg.validate()?;
    exp.validate()?;
    let mut out = cfg.clone();
    out.d_model = cfg.d_model * exp.embed_fold;
    out.d_ffn = cfg.d_ffn * exp.ffn_fold;
    out.n_heads = cfg.n_heads * exp.head_count_fold;
    out.d_head = cfg.d_head * exp.head_dim_fold;
    out.rope_fold = cfg.rope_fold * exp.head_dim_fold;
    if cfg.tied_unembedding {
        // Logits read the duplicated embedding, which sums n_e copies.
        out.logit_scale = cfg.logit_scale / exp.embed_fold as f64;
    }
    out.validate()?;
    Ok(out)
}

/// Expanded attention projections of one block plus their receipt entries.
#[derive(Clone, Debug)]
pub struct ExpandedAttention<T> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
    pub entries: Vec<ReceiptEntry>,
}

struct Expander<'a> {
    exp: &'a ExpansionConfig,
    rng: &'a mut Rng,
    entries: Vec<ReceiptEntry>,
}

impl Expander<'_> {
    #[allow(clippy::too_many_arguments)]
    fn record<T: Scalar>(
        &mut self,
        name: String,
        src: &Matrix<T>,
        dst: &Matrix<T>,
        row_map: CloneMap,
        col_map: CloneMap,
        used: Option<Strategy>,
        noise: f64,
        scale: f64,
    ) {
        self.entries.push(ReceiptEntry {
            name,
            src_shape: src.shape(),
            dst_shape: dst.shape(),
            row_map,
            col_map,
            strategy_requested: self.exp.strategy,
            strategy_used: used,
            noise_std: noise,
            scale,
        });
    }

    /// Column-only duplication of a table (embedding, positions).
    fn table<T: Scalar>(&mut self, name: &str, m: &Matrix<T>, map: &CloneMap) -> Result<Matrix<T>> {
        let out = expand_embedding(m, self.exp.embed_fold)?;
        self.record(name.into(), m, &out, CloneMap::identity(m.rows()), map.clone(), None, 0.0, 1.0);
        Ok(out)
    }

    fn norm<T: Scalar>(&mut self, prefix: &str, n: &Norm<T>, map: &CloneMap) -> Result<Norm<T>> {
        let (gamma, beta) = expand_norm(&n.gamma, n.beta.as_ref(), self.exp.embed_fold)?;
        self.record(format!("{prefix}.gamma"), &n.gamma, &gamma, CloneMap::identity(1), map.clone(), None, 0.0, 1.0);
        if let (Some(src), Some(dst)) = (&n.beta, &beta) {
            self.record(format!("{prefix}.beta"), src, dst, CloneMap::identity(1), map.clone(), None, 0.0, 1.0);
        }
        Ok(Norm { gamma, beta })
    }

    fn weight<T: Scalar>(
        &mut self,
        name: String,
        w: &Matrix<T>,
        in_map: &CloneMap,
        out_map: &CloneMap,
    ) -> Result<(Matrix<T>, Strategy, f64)> {
        let requested = self.exp.strategy;
        let (wd, used) = match expand_linear(w, None, in_map, out_map, requested, self.exp.snr_db, self.rng) {
            Ok((wd, _)) => (wd, requested),
            Err(Error::StrategyInapplicable { .. }) if requested.is_diagonal() => {
                let used = requested.fallback();
                let (wd, _) = expand_linear(w, None, in_map, out_map, used, self.exp.snr_db, self.rng)?;
                (wd, used)
            }
            Err(e) => {
                return Err(match e {
                    Error::StrategyInapplicable { strategy, reason, .. } => Error::StrategyInapplicable { strategy, tensor: name, reason },
                    e => e,
                })
            }
        };
        let noise = if used.is_noisy() { noise_std(w, in_map, self.exp.snr_db) } else { 0.0 };
        Ok((wd, used, noise))
    }

    fn linear<T: Scalar>(
        &mut self,
        prefix: &str,
        tag: &str,
        l: &Linear<T>,
        in_map: &CloneMap,
        out_map: &CloneMap,
        scale: f64,
    ) -> Result<Linear<T>> {
        let name = format!("{prefix}.w_{tag}");
        let (mut weight, used, noise) = self.weight(name.clone(), &l.weight, in_map, out_map)?;
        let mut bias = l.bias.as_ref().map(|b| Matrix::row_vector(&out_map.apply(b.as_slice())));
        if scale != 1.0 {
            let s = T::of(scale);
            weight = weight.scale(s);
            bias = bias.map(|b| b.scale(s));
        }
        self.record(name, &l.weight, &weight, out_map.clone(), in_map.clone(), Some(used), noise * scale, scale);
        if let (Some(src), Some(dst)) = (&l.bias, &bias) {
            self.record(format!("{prefix}.b_{tag}"), src, dst, CloneMap::identity(1), out_map.clone(), None, 0.0, scale);
        }
        Ok(Linear { weight, bias })
    }

    fn attention<T: Scalar>(&mut self, prefix: &str, block: &Block<T>, hidden: &CloneMap, heads: &CloneMap) -> Result<[Linear<T>; 4]> {
        let q_scale = 1.0 / (self.exp.head_dim_fold as f64).sqrt();
        Ok([
            self.linear(prefix, "q", &block.q, hidden, heads, q_scale)?,
            self.linear(prefix, "k", &block.k, hidden, heads, 1.0)?,
            self.linear(prefix, "v", &block.v, hidden, heads, 1.0)?,
            self.linear(prefix, "o", &block.o, heads, hidden, 1.0)?,
        ])
    }
}

/// Expand the attention projections of one block.
///
/// Keys and values clone source heads exactly; queries are additionally
/// multiplied by `1/√k` so that scores, which sum over `k` times as many
/// lanes and are divided by the wider `√(k · d_head)`, match the source.
pub fn expand_attention<T: Scalar>(
    block: &Block<T>,
    cfg: &ModelConfig,
    exp: &ExpansionConfig,
    rng: &mut Rng,
) -> Result<ExpandedAttention<T>> {
    exp.validate()?;
    ensure!(
        block.q.weight.shape() == (cfg.d_model, cfg.d_model),
        "attention weights {:?} do not match d_model {}",
        block.q.weight.shape(),
        cfg.d_model
    );
    let hidden = make_clone_map(cfg.d_model, exp.embed_fold);
    let heads = make_head_clone_map(cfg.n_heads, cfg.d_head, exp.head_count_fold, exp.head_dim_fold);
    let mut ex = Expander { exp, rng, entries: Vec::new() };
    let [q, k, v, o] = ex.attention("attn", block, &hidden, &heads)?;
    Ok(ExpandedAttention { q, k, v, o, entries: ex.entries })
}

/// Expand a whole model. Returns destination parameters, destination config
/// and a receipt covering every destination tensor once.
///
/// Diagonal strategies fall back to their symmetric counterpart on tensors
/// whose input and output folds differ; the receipt flags those tensors.
pub fn expand_model<T: Scalar>(
    params: &TransformerParams<T>,
    cfg: &ModelConfig,
    exp: &ExpansionConfig,
) -> Result<(TransformerParams<T>, ModelConfig, ExpansionReceipt)> {
    let dest = expand_config(cfg, exp)?;
    params.check_shapes(cfg)?;
    if cfg.tied_unembedding && exp.strategy.is_noisy() && exp.embed_fold > 1 {
        return Err(Error::StrategyInapplicable {
            strategy: exp.strategy.to_string(),
            tensor: "embedding".into(),
            reason: "a tied embedding is both a pure duplication and the output projection, \
                     which leaves no free block for noise"
                .into(),
        });
    }

    let hidden = make_clone_map(cfg.d_model, exp.embed_fold);
    let heads = make_head_clone_map(cfg.n_heads, cfg.d_head, exp.head_count_fold, exp.head_dim_fold);
    let ffn = make_clone_map(cfg.d_ffn, exp.ffn_fold);
    let mut rng = Rng::seed(exp.seed);
    let mut ex = Expander { exp, rng: &mut rng, entries: Vec::new() };

    let embedding = ex.table("embedding", &params.embedding, &hidden)?;
    let pos_embedding = params.pos_embedding.as_ref().map(|p| ex.table("pos_embedding", p, &hidden)).transpose()?;
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for (l, b) in params.blocks.iter().enumerate() {
        let attn_norm = ex.norm(&format!("blocks.{l}.attn_norm"), &b.attn_norm, &hidden)?;
        let [q, k, v, o] = ex.attention(&format!("blocks.{l}.attn"), b, &hidden, &heads)?;
        let ffn_norm = ex.norm(&format!("blocks.{l}.ffn_norm"), &b.ffn_norm, &hidden)?;
        let prefix = format!("blocks.{l}.ffn");
        let up = ex.linear(&prefix, "up", &b.up, &hidden, &ffn, 1.0)?;
        let down = ex.linear(&prefix, "down", &b.down, &ffn, &hidden, 1.0)?;
        blocks.push(Block { attn_norm, q, k, v, o, ffn_norm, up, down });
    }
    let final_norm = ex.norm("final_norm", &params.final_norm, &hidden)?;
    let vocab = CloneMap::identity(cfg.vocab_size);
    let unembedding =
        params.unembedding.as_ref().map(|u| ex.weight("unembedding".into(), u, &hidden, &vocab)).transpose()?.map(|(wd, used, noise)| {
            let src = params.unembedding.as_ref().expect("checked above");
            ex.record("unembedding".into(), src, &wd, vocab.clone(), hidden.clone(), Some(used), noise, 1.0);
            wd
        });
    let unembed_bias = params.unembed_bias.clone();
    if let Some(b) = &unembed_bias {
        ex.record("unembed_bias".into(), b, b, CloneMap::identity(1), vocab.clone(), None, 0.0, 1.0);
    }
    let entries = ex.entries;

    let out = TransformerParams { embedding, pos_embedding, blocks, final_norm, unembedding, unembed_bias };
    out.check_shapes(&dest)?;
    let receipt = ExpansionReceipt {
        source_config: cfg.clone(),
        dest_config: dest.clone(),
        expansion: exp.clone(),
        hidden_map: hidden,
        head_map: heads,
        ffn_map: ffn,
        entries,
    };
    Ok((out, dest, receipt))
}
