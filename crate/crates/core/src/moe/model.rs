//! The sparse-MoE decoder. Every layer is pre-norm attention followed by a
//! pre-norm MoE feed-forward sublayer; only the routed experts run for a
//! given token.

use ndarray::s;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::MoeConfig;
use super::router::{load_balance_loss, select_experts, RoutingDecision};
use crate::error::{Error, Result};
use crate::nn::{
    attention, attention_backward, gather_rows, ones_row, randn, rms_norm, rms_norm_backward, softmax_backward,
    softmax_in_place, AttentionCache, AttentionWeights, Mat, RmsCache, SwiGlu, SwiGluCache,
};
use crate::routing::trace::{RoutingTrace, Tag};

/// Routing overrides for one forward pass: the number of active experts and
/// an optional per-layer candidate mask (pruning).
#[derive(Clone, Copy, Debug)]
pub struct RouteOptions<'a> {
    pub k: usize,
    pub active: Option<&'a [Vec<bool>]>,
}

impl<'a> RouteOptions<'a> {
    pub fn with_k(k: usize) -> Self {
        RouteOptions { k, active: None }
    }

    fn layer_mask(&self, layer: usize) -> Option<&'a [bool]> {
        self.active.map(|m| m[layer].as_slice())
    }
}

/// Observation hook: routing decisions are copied out, never fed back.
pub struct TraceSink<'a> {
    pub trace: &'a mut RoutingTrace,
    pub tags: &'a [Tag],
    pub log: Option<&'a mut Vec<RoutingDecision>>,
}

#[derive(Clone, Debug)]
pub struct MoeBlock {
    pub attn_norm: Mat,
    pub attn: AttentionWeights,
    pub ffn_norm: Mat,
    /// `d_model × E`
    pub router: Mat,
    pub experts: Vec<SwiGlu>,
}

struct ExpertCache {
    expert: usize,
    rows: Vec<usize>,
    /// position of this expert inside each row's selection
    slot: Vec<usize>,
    ffn: SwiGluCache,
    y: Mat,
}

struct MoeCache {
    x: Mat,
    gates: Vec<Vec<f64>>,
    selected: Vec<Vec<usize>>,
    probs: Mat,
    experts: Vec<ExpertCache>,
}

struct BlockCache {
    attn_norm: RmsCache,
    attn: AttentionCache,
    ffn_norm: RmsCache,
    moe: MoeCache,
}

pub struct LmCache {
    blocks: Vec<BlockCache>,
    final_norm: RmsCache,
    final_hidden: Mat,
}

/// Router statistics for the auxiliary balance loss, for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BalanceStats {
    pub top1: Vec<f64>,
    pub prob_sum: Vec<f64>,
    pub tokens: usize,
}

impl BalanceStats {
    pub fn empty(n_experts: usize) -> Self {
        BalanceStats { top1: vec![0.0; n_experts], prob_sum: vec![0.0; n_experts], tokens: 0 }
    }

    pub fn merge(&mut self, other: &BalanceStats) {
        for (a, b) in self.top1.iter_mut().zip(&other.top1) {
            *a += b;
        }
        for (a, b) in self.prob_sum.iter_mut().zip(&other.prob_sum) {
            *a += b;
        }
        self.tokens += other.tokens;
    }

    pub fn loss(&self) -> f64 {
        load_balance_loss(&self.top1, &self.prob_sum, self.tokens)
    }

    /// `∂(weight · mean-over-layers loss)/∂p` for every token, given `n_layers`.
    pub fn prob_grad(&self, weight: f64, n_layers: usize) -> Vec<f64> {
        let n = self.tokens.max(1) as f64;
        let e = self.top1.len() as f64;
        self.top1.iter().map(|c| weight * e * c / (n * n * n_layers as f64)).collect()
    }
}

impl LmCache {
    pub fn balance_stats(&self) -> Vec<BalanceStats> {
        self.blocks
            .iter()
            .map(|b| {
                let e = b.moe.probs.ncols();
                let mut st = BalanceStats::empty(e);
                for (sel, p) in b.moe.selected.iter().zip(b.moe.probs.rows()) {
                    st.top1[sel[0]] += 1.0;
                    for (acc, v) in st.prob_sum.iter_mut().zip(p.iter()) {
                        *acc += v;
                    }
                }
                st.tokens = b.moe.selected.len();
                st
            })
            .collect()
    }
}

impl MoeBlock {
    fn init(cfg: &MoeConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        MoeBlock {
            attn_norm: ones_row(d),
            attn: AttentionWeights::init(rng, d),
            ffn_norm: ones_row(d),
            router: randn(rng, d, cfg.n_experts, 1.0 / (d as f64).sqrt()),
            experts: (0..cfg.n_experts).map(|_| SwiGlu::init(rng, d, cfg.d_ff)).collect(),
        }
    }

    fn zeros_like(&self) -> Self {
        MoeBlock {
            attn_norm: Mat::zeros(self.attn_norm.raw_dim()),
            attn: self.attn.zeros_like(),
            ffn_norm: Mat::zeros(self.ffn_norm.raw_dim()),
            router: Mat::zeros(self.router.raw_dim()),
            experts: self.experts.iter().map(SwiGlu::zeros_like).collect(),
        }
    }

    pub fn n_experts(&self) -> usize {
        self.router.ncols()
    }

    /// Sparse mixture over rows of an already-normalized input:
    /// `out[t] = Σ gateᵢ · expertᵢ(x[t])` over the routed experts only.
    pub fn moe_ffn(&self, x: &Mat, k: usize, active: Option<&[bool]>, layer: usize) -> Result<(Mat, Vec<RoutingDecision>)> {
        let (out, cache) = self.moe_ffn_cached(x, k, active)?;
        let decisions = cache
            .selected
            .into_iter()
            .zip(cache.gates)
            .enumerate()
            .map(|(t, (expert_indices, gate_weights))| RoutingDecision { token_index: t, layer, expert_indices, gate_weights })
            .collect();
        Ok((out, decisions))
    }

    fn moe_ffn_cached(&self, x: &Mat, k: usize, active: Option<&[bool]>) -> Result<(Mat, MoeCache)> {
        let n_exp = self.n_experts();
        let logits = x.dot(&self.router);
        let mut selected = Vec::with_capacity(x.nrows());
        let mut gates = Vec::with_capacity(x.nrows());
        let mut probs = logits.clone();
        for (t, mut prow) in probs.rows_mut().into_iter().enumerate() {
            let row = prow.as_slice_mut().expect("contiguous");
            let (sel, g) = select_experts(row, k, active)?;
            if let Some(mask) = active {
                for (v, &on) in row.iter_mut().zip(mask) {
                    if !on {
                        *v = f64::NEG_INFINITY;
                    }
                }
            }
            softmax_in_place(row);
            debug_assert_eq!(t, selected.len());
            selected.push(sel);
            gates.push(g);
        }
        let mut assigned: Vec<(Vec<usize>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); n_exp];
        for (t, sel) in selected.iter().enumerate() {
            for (j, &e) in sel.iter().enumerate() {
                assigned[e].0.push(t);
                assigned[e].1.push(j);
            }
        }
        let mut out = Mat::zeros(x.raw_dim());
        let mut experts = Vec::new();
        for (e, (rows, slot)) in assigned.into_iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let xe = gather_rows(x, &rows);
            let (y, ffn) = self.experts[e].forward_cached(&xe);
            for (i, (&t, &j)) in rows.iter().zip(&slot).enumerate() {
                let mut o = out.row_mut(t);
                o.scaled_add(gates[t][j], &y.row(i));
            }
            experts.push(ExpertCache { expert: e, rows, slot, ffn, y });
        }
        Ok((out, MoeCache { x: x.clone(), gates, selected, probs, experts }))
    }

    fn moe_backward(&self, cache: &MoeCache, dout: &Mat, prob_grad: Option<&[f64]>, grads: &mut MoeBlock) -> Mat {
        let mut dx = Mat::zeros(cache.x.raw_dim());
        let mut dgates: Vec<Vec<f64>> = cache.gates.iter().map(|g| vec![0.0; g.len()]).collect();
        for ec in &cache.experts {
            let mut dy = gather_rows(dout, &ec.rows);
            for (i, (&t, &j)) in ec.rows.iter().zip(&ec.slot).enumerate() {
                dgates[t][j] = dy.row(i).dot(&ec.y.row(i));
                let g = cache.gates[t][j];
                dy.row_mut(i).mapv_inplace(|v| v * g);
            }
            let dxe = self.experts[ec.expert].backward(&ec.ffn, &dy, &mut grads.experts[ec.expert]);
            for (i, &t) in ec.rows.iter().enumerate() {
                let mut r = dx.row_mut(t);
                r += &dxe.row(i);
            }
        }
        let n_exp = self.n_experts();
        let mut dlogits = Mat::zeros((cache.x.nrows(), n_exp));
        let mut buf = Vec::new();
        for (t, (sel, g)) in cache.selected.iter().zip(&cache.gates).enumerate() {
            buf.resize(g.len(), 0.0);
            softmax_backward(g, &dgates[t], &mut buf);
            for (&e, &v) in sel.iter().zip(&buf) {
                dlogits[[t, e]] += v;
            }
        }
        if let Some(coef) = prob_grad {
            let mut tmp = vec![0.0; n_exp];
            for (t, p) in cache.probs.rows().into_iter().enumerate() {
                softmax_backward(p.as_slice().expect("contiguous"), coef, &mut tmp);
                for (e, v) in tmp.iter().enumerate() {
                    dlogits[[t, e]] += v;
                }
            }
        }
        grads.router += &cache.x.t().dot(&dlogits);
        dx += &dlogits.dot(&self.router.t());
        dx
    }
}

#[derive(Clone, Debug)]
pub struct MoeLm {
    pub config: MoeConfig,
    pub tok_emb: Mat,
    pub pos_emb: Mat,
    pub blocks: Vec<MoeBlock>,
    pub final_norm: Mat,
    pub lm_head: Mat,
}

impl MoeLm {
    pub fn init(config: MoeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let tok_emb = randn(&mut rng, config.vocab_size, d, 0.5);
        let pos_emb = randn(&mut rng, config.max_seq_len, d, 0.1);
        let blocks = (0..config.n_layers).map(|_| MoeBlock::init(&config, &mut rng)).collect();
        let lm_head = randn(&mut rng, d, config.vocab_size, 1.0 / (d as f64).sqrt());
        Ok(MoeLm { tok_emb, pos_emb, blocks, final_norm: ones_row(d), lm_head, config })
    }

    pub fn zeros_like(&self) -> Self {
        MoeLm {
            config: self.config.clone(),
            tok_emb: Mat::zeros(self.tok_emb.raw_dim()),
            pos_emb: Mat::zeros(self.pos_emb.raw_dim()),
            blocks: self.blocks.iter().map(MoeBlock::zeros_like).collect(),
            final_norm: Mat::zeros(self.final_norm.raw_dim()),
            lm_head: Mat::zeros(self.lm_head.raw_dim()),
        }
    }

    pub fn default_route(&self) -> RouteOptions<'static> {
        RouteOptions::with_k(self.config.k_active)
    }

    pub fn embed_tokens(&self, ids: &[u32]) -> Result<Mat> {
        let idx = ids
            .iter()
            .map(|&i| {
                let i = i as usize;
                if i < self.config.vocab_size {
                    Ok(i)
                } else {
                    Err(Error::Input(format!("token id {i} outside vocabulary of {}", self.config.vocab_size)))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(gather_rows(&self.tok_emb, &idx))
    }

    fn check_route(&self, route: &RouteOptions) -> Result<()> {
        if route.k == 0 || route.k > self.config.n_experts {
            return Err(Error::Config(format!("k={} outside [1, {}]", route.k, self.config.n_experts)));
        }
        if let Some(m) = route.active {
            if m.len() != self.config.n_layers || m.iter().any(|l| l.len() != self.config.n_experts) {
                return Err(Error::Config("active mask shape does not match layers × experts".into()));
            }
        }
        Ok(())
    }

    /// Logits for every position of a `T × d_model` input embedding sequence.
    pub fn forward(&self, x: &Mat, route: &RouteOptions, sink: Option<&mut TraceSink>) -> Result<Mat> {
        Ok(self.forward_impl(x, route, sink)?.0)
    }

    pub fn forward_cached(&self, x: &Mat, route: &RouteOptions) -> Result<(Mat, LmCache)> {
        self.forward_impl(x, route, None)
    }

    fn forward_impl(&self, x: &Mat, route: &RouteOptions, mut sink: Option<&mut TraceSink>) -> Result<(Mat, LmCache)> {
        let t = x.nrows();
        if t == 0 {
            return Err(Error::Input("empty sequence".into()));
        }
        if t > self.config.max_seq_len {
            return Err(Error::Input(format!("sequence length {t} exceeds maximum {}", self.config.max_seq_len)));
        }
        if x.ncols() != self.config.d_model {
            return Err(Error::Input(format!("embedding width {} != d_model {}", x.ncols(), self.config.d_model)));
        }
        self.check_route(route)?;
        if let Some(s) = sink.as_ref() {
            if s.tags.len() != t {
                return Err(Error::Input(format!("{} trace tags for {t} positions", s.tags.len())));
            }
        }
        let mut h = x + &self.pos_emb.slice(s![..t, ..]);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (layer, b) in self.blocks.iter().enumerate() {
            let (a_in, attn_norm) = rms_norm(&h, &b.attn_norm);
            let (a_out, attn) = attention(&b.attn, &a_in, self.config.n_heads, true);
            h += &a_out;
            let (f_in, ffn_norm) = rms_norm(&h, &b.ffn_norm);
            let (f_out, moe) = b.moe_ffn_cached(&f_in, route.k, route.layer_mask(layer))?;
            h += &f_out;
            if let Some(s) = sink.as_mut() {
                for (tok, (sel, g)) in moe.selected.iter().zip(&moe.gates).enumerate() {
                    let d = RoutingDecision {
                        token_index: tok,
                        layer,
                        expert_indices: sel.clone(),
                        gate_weights: g.clone(),
                    };
                    s.trace.record(&s.tags[tok], &d);
                    if let Some(log) = s.log.as_mut() {
                        log.push(d);
                    }
                }
            }
            caches.push(BlockCache { attn_norm, attn, ffn_norm, moe });
        }
        let (final_hidden, final_norm) = rms_norm(&h, &self.final_norm);
        let logits = final_hidden.dot(&self.lm_head);
        Ok((logits, LmCache { blocks: caches, final_norm, final_hidden }))
    }

    /// Backpropagates `∂L/∂logits`, accumulating into `grads`, and returns
    /// `∂L/∂x` for the input embeddings. `prob_grad[layer]` is the gradient
    /// of the auxiliary loss w.r.t. each router probability, if any.
    pub fn backward(&self, cache: &LmCache, dlogits: &Mat, prob_grad: Option<&[Vec<f64>]>, grads: &mut MoeLm) -> Mat {
        grads.lm_head += &cache.final_hidden.t().dot(dlogits);
        let dfinal = dlogits.dot(&self.lm_head.t());
        let mut dh = rms_norm_backward(&cache.final_norm, &self.final_norm, &dfinal, &mut grads.final_norm);
        for (layer, (b, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let g = &mut grads.blocks[layer];
            let pg = prob_grad.map(|p| p[layer].as_slice());
            let df_in = b.moe_backward(&bc.moe, &dh, pg, g);
            dh += &rms_norm_backward(&bc.ffn_norm, &b.ffn_norm, &df_in, &mut g.ffn_norm);
            let da_in = attention_backward(&b.attn, &bc.attn, &dh, &mut g.attn);
            dh += &rms_norm_backward(&bc.attn_norm, &b.attn_norm, &da_in, &mut g.attn_norm);
        }
        let t = dh.nrows();
        let mut pos = grads.pos_emb.slice_mut(s![..t, ..]);
        pos += &dh;
        dh
    }

    /// Scatters embedding gradients for text positions into the token table.
    pub fn accumulate_token_grads(&self, ids: &[(usize, u32)], dx: &Mat, grads: &mut MoeLm) {
        for &(pos, id) in ids {
            let mut row = grads.tok_emb.row_mut(id as usize);
            row += &dx.row(pos);
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Mat)> {
        let mut out = vec![("tok_emb".to_string(), &self.tok_emb), ("pos_emb".to_string(), &self.pos_emb)];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("layer.{i}.attn_norm"), &b.attn_norm));
            out.push((format!("layer.{i}.attn.wq"), &b.attn.wq));
            out.push((format!("layer.{i}.attn.wk"), &b.attn.wk));
            out.push((format!("layer.{i}.attn.wv"), &b.attn.wv));
            out.push((format!("layer.{i}.attn.wo"), &b.attn.wo));
            out.push((format!("layer.{i}.ffn_norm"), &b.ffn_norm));
            out.push((format!("layer.{i}.router"), &b.router));
            for (j, e) in b.experts.iter().enumerate() {
                out.push((format!("layer.{i}.expert.{j}.w_gate"), &e.w_gate));
                out.push((format!("layer.{i}.expert.{j}.w_up"), &e.w_up));
                out.push((format!("layer.{i}.expert.{j}.w_down"), &e.w_down));
            }
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out.push(("lm_head".to_string(), &self.lm_head));
        out
    }

    /// Same order as [`MoeLm::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![&mut self.tok_emb, &mut self.pos_emb];
        for b in &mut self.blocks {
            out.extend([
                &mut b.attn_norm,
                &mut b.attn.wq,
                &mut b.attn.wk,
                &mut b.attn.wv,
                &mut b.attn.wo,
                &mut b.ffn_norm,
                &mut b.router,
            ]);
            for e in &mut b.experts {
                out.extend([&mut e.w_gate, &mut e.w_up, &mut e.w_down]);
            }
        }
        out.push(&mut self.final_norm);
        out.push(&mut self.lm_head);
        out
    }
}

/// Mean cross-entropy over the positions in `targets` (position, token id),
/// and its gradient w.r.t. the logits. Returns `(0, zeros)` if there are no targets.
pub fn masked_cross_entropy(logits: &Mat, targets: &[(usize, u32)], normalizer: f64) -> (f64, Mat) {
    let mut grad = Mat::zeros(logits.raw_dim());
    if targets.is_empty() || normalizer <= 0.0 {
        return (0.0, grad);
    }
    let mut loss = 0.0;
    for &(pos, id) in targets {
        let row = logits.row(pos);
        let lse = crate::nn::log_sum_exp(row);
        loss -= row[id as usize] - lse;
        let mut g = grad.row_mut(pos);
        g.assign(&row.mapv(|v| (v - lse).exp()));
        g[id as usize] -= 1.0;
        g /= normalizer;
    }
    (loss / normalizer, grad)
}

/// Mean over layers of the per-layer balance loss.
pub fn mean_balance_loss(stats: &[BalanceStats]) -> f64 {
    if stats.is_empty() {
        return 0.0;
    }
    stats.iter().map(BalanceStats::loss).sum::<f64>() / stats.len() as f64
}
