//! Graph-attention solution predictor with hand-written backpropagation.
//!
//! Parameters live in one flat vector; [`Layout`] names the blocks. Gradients
//! share the layout, which keeps Adam, serialization and finite-difference
//! checks trivial.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{BipartiteGraph, CON_FEATURES, EDGE_FEATURES, VAR_FEATURES};
use crate::error::{Error, Result};

const LEAKY_SLOPE: f64 = 0.2;
const PROB_CLAMP: f64 = 1e-7;
const MODEL_FORMAT: &str = "gridshed-gat";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy)]
struct Linear {
    w: usize,
    b: usize,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone)]
struct Attention {
    ws: Vec<usize>,
    wt: Vec<usize>,
    we: Vec<usize>,
    a: Vec<usize>,
}

/// Offsets of every parameter block inside the flat vector.
#[derive(Debug, Clone)]
struct Layout {
    k: usize,
    heads: usize,
    var_embed: Linear,
    con_embed: Linear,
    edge_embed: Linear,
    rounds: [Attention; 2],
    hidden: Linear,
    out: Linear,
    total: usize,
    blocks: Vec<(String, usize, usize)>,
}

impl Layout {
    fn new(k: usize, heads: usize) -> Self {
        let mut off = 0;
        let mut blocks = Vec::new();
        let mut take = |name: String, len: usize| {
            let start = off;
            off += len;
            blocks.push((name, start, len));
            start
        };
        let linear = |name: &str, rows: usize, cols: usize, take: &mut dyn FnMut(String, usize) -> usize| Linear {
            w: take(format!("{name}.w"), rows * cols),
            b: take(format!("{name}.b"), rows),
            rows,
            cols,
        };
        let var_embed = linear("var_embed", k, VAR_FEATURES, &mut take);
        let con_embed = linear("con_embed", k, CON_FEATURES, &mut take);
        let edge_embed = linear("edge_embed", k, EDGE_FEATURES, &mut take);
        let attention = |r: usize, take: &mut dyn FnMut(String, usize) -> usize| {
            let mut at = Attention {
                ws: Vec::new(),
                wt: Vec::new(),
                we: Vec::new(),
                a: Vec::new(),
            };
            for h in 0..heads {
                at.ws.push(take(format!("round{r}.head{h}.w_src"), k * k));
                at.wt.push(take(format!("round{r}.head{h}.w_tgt"), k * k));
                at.we.push(take(format!("round{r}.head{h}.w_edge"), k * k));
                at.a.push(take(format!("round{r}.head{h}.attn"), k));
            }
            at
        };
        let r1 = attention(1, &mut take);
        let r2 = attention(2, &mut take);
        let hidden = linear("head.hidden", k, k, &mut take);
        let out = linear("head.out", 1, k, &mut take);
        Self {
            k,
            heads,
            var_embed,
            con_embed,
            edge_embed,
            rounds: [r1, r2],
            hidden,
            out,
            total: off,
            blocks,
        }
    }

    /// `(offset, length, fan_in)` for initialization.
    fn init_spans(&self) -> Vec<(usize, usize, usize)> {
        let mut v = Vec::new();
        for l in [&self.var_embed, &self.con_embed, &self.edge_embed, &self.hidden, &self.out] {
            v.push((l.w, l.rows * l.cols, l.cols));
            v.push((l.b, l.rows, l.cols));
        }
        for r in &self.rounds {
            for h in 0..self.heads {
                v.push((r.ws[h], self.k * self.k, self.k));
                v.push((r.wt[h], self.k * self.k, self.k));
                v.push((r.we[h], self.k * self.k, self.k));
                v.push((r.a[h], self.k, self.k));
            }
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct PolicyModel {
    layout: Layout,
    pub params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    embed_dim: usize,
    heads: usize,
    var_features: usize,
    con_features: usize,
    edge_features: usize,
    params: Vec<f64>,
}

/// One labeled instance: graph, pooled switch vectors and their weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub graph: BipartiteGraph,
    pub pool: Vec<(Vec<bool>, f64)>,
    pub weights: Vec<f64>,
}

impl TrainingSample {
    pub fn new(graph: BipartiteGraph, pool: Vec<(Vec<bool>, f64)>) -> Result<Self> {
        if let Some((z, _)) = pool.iter().find(|(z, _)| z.len() != graph.target_mask.len()) {
            return Err(Error::Dimension {
                expected: graph.target_mask.len(),
                got: z.len(),
            });
        }
        let h: Vec<f64> = pool.iter().map(|e| e.1).collect();
        let weights = solution_weights(&h)?;
        Ok(Self { graph, pool, weights })
    }

    /// Per-target soft label `q_l = sum_z w(z) z_l`.
    pub fn soft_targets(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.graph.target_mask.len()];
        for ((z, _), &w) in self.pool.iter().zip(&self.weights) {
            for (ql, &zl) in q.iter_mut().zip(z) {
                if zl {
                    *ql += w;
                }
            }
        }
        q
    }

    /// Pool entry with the lowest objective.
    pub fn best(&self) -> Option<&Vec<bool>> {
        self.pool
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|e| &e.0)
    }
}

/// Softmax over `-h`, shifted by the minimum.
pub fn solution_weights(h: &[f64]) -> Result<Vec<f64>> {
    if h.is_empty() {
        return Err(Error::Empty("solution pool".into()));
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pool objective".into()));
    }
    let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = h.iter().map(|v| (-(v - lo)).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `y = W x` with `W` row-major `rows x cols`.
fn matvec(w: &[f64], x: &[f64], rows: usize, cols: usize, y: &mut [f64]) {
    for i in 0..rows {
        let r = &w[i * cols..(i + 1) * cols];
        y[i] = r.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `x += W^T g`.
fn matvec_t_acc(w: &[f64], g: &[f64], rows: usize, cols: usize, x: &mut [f64]) {
    for i in 0..rows {
        let gi = g[i];
        if gi == 0.0 {
            continue;
        }
        let r = &w[i * cols..(i + 1) * cols];
        for (xj, a) in x.iter_mut().zip(r) {
            *xj += gi * a;
        }
    }
}

/// `dW += g x^T`.
fn outer_acc(dw: &mut [f64], g: &[f64], x: &[f64], cols: usize) {
    for (i, &gi) in g.iter().enumerate() {
        if gi == 0.0 {
            continue;
        }
        let r = &mut dw[i * cols..(i + 1) * cols];
        for (d, xj) in r.iter_mut().zip(x) {
            *d += gi * xj;
        }
    }
}

struct RoundCache {
    /// Per head: projected sources `ns x K`, projected targets `nt x K`.
    src_proj: Vec<Vec<f64>>,
    tgt_proj: Vec<Vec<f64>>,
    /// Per head: edge projection as `x_e * alpha + beta`.
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    /// Per head: pre-activation `u` for every edge, `E x K`.
    u: Vec<Vec<f64>>,
    /// Per head: attention weight per edge.
    att: Vec<Vec<f64>>,
    /// Head-averaged messages before the activation, `nt x K`.
    msg: Vec<f64>,
    out: Vec<f64>,
}

/// Edge list viewed from one side of the graph.
struct Incidence<'a> {
    src: Vec<usize>,
    tgt: Vec<usize>,
    xe: &'a [f64],
    by_tgt: Vec<Vec<usize>>,
}

impl<'a> Incidence<'a> {
    fn new(edges: &[(usize, usize)], xe: &'a [f64], nt: usize, reverse: bool) -> Self {
        let (src, tgt): (Vec<usize>, Vec<usize>) = edges
            .iter()
            .map(|&(c, v)| if reverse { (c, v) } else { (v, c) })
            .unzip();
        let mut by_tgt = vec![Vec::new(); nt];
        for (e, &t) in tgt.iter().enumerate() {
            by_tgt[t].push(e);
        }
        Self { src, tgt, xe, by_tgt }
    }
}

struct ForwardCache {
    v1: Vec<f64>,
    c1: Vec<f64>,
    xe: Vec<f64>,
    r1: RoundCache,
    r2: RoundCache,
    hid_pre: Vec<f64>,
    probs: Vec<f64>,
}

impl PolicyModel {
    pub fn new(embed_dim: usize, heads: usize, seed: u64) -> Self {
        let layout = Layout::new(embed_dim, heads);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (off, len, fan_in) in layout.init_spans() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[off..off + len] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Self { layout, params }
    }

    pub fn embed_dim(&self) -> usize {
        self.layout.k
    }

    pub fn heads(&self) -> usize {
        self.layout.heads
    }

    pub fn num_params(&self) -> usize {
        self.layout.total
    }

    /// Named parameter blocks as `(name, offset, len)`.
    pub fn blocks(&self) -> &[(String, usize, usize)] {
        &self.layout.blocks
    }

    fn check_graph(&self, g: &BipartiteGraph) -> Result<()> {
        g.check_shapes()
    }

    fn embed(&self, lin: &Linear, rows: &[Vec<f64>]) -> Vec<f64> {
        let k = self.layout.k;
        let w = &self.params[lin.w..lin.w + lin.rows * lin.cols];
        let b = &self.params[lin.b..lin.b + lin.rows];
        let mut out = vec![0.0; rows.len() * k];
        for (i, f) in rows.iter().enumerate() {
            let y = &mut out[i * k..(i + 1) * k];
            matvec(w, f, lin.rows, lin.cols, y);
            for (yi, bi) in y.iter_mut().zip(b) {
                *yi += bi;
            }
        }
        out
    }

    fn round_forward(&self, r: usize, src: &[f64], tgt: &[f64], inc: &Incidence) -> RoundCache {
        let k = self.layout.k;
        let heads = self.layout.heads;
        let at = &self.layout.rounds[r];
        let p = &self.params;
        let ns = src.len() / k;
        let nt = tgt.len() / k;
        let ne = inc.src.len();
        let ew = &p[self.layout.edge_embed.w..self.layout.edge_embed.w + k];
        let eb = &p[self.layout.edge_embed.b..self.layout.edge_embed.b + k];
        let mut cache = RoundCache {
            src_proj: Vec::with_capacity(heads),
            tgt_proj: Vec::with_capacity(heads),
            alpha: Vec::with_capacity(heads),
            beta: Vec::with_capacity(heads),
            u: Vec::with_capacity(heads),
            att: Vec::with_capacity(heads),
            msg: vec![0.0; nt * k],
            out: vec![0.0; nt * k],
        };
        let inv_h = 1.0 / heads as f64;
        for h in 0..heads {
            let ws = &p[at.ws[h]..at.ws[h] + k * k];
            let wt = &p[at.wt[h]..at.wt[h] + k * k];
            let we = &p[at.we[h]..at.we[h] + k * k];
            let a = &p[at.a[h]..at.a[h] + k];
            let mut sp = vec![0.0; ns * k];
            for i in 0..ns {
                matvec(ws, &src[i * k..(i + 1) * k], k, k, &mut sp[i * k..(i + 1) * k]);
            }
            let mut tp = vec![0.0; nt * k];
            for i in 0..nt {
                matvec(wt, &tgt[i * k..(i + 1) * k], k, k, &mut tp[i * k..(i + 1) * k]);
            }
            let mut alpha = vec![0.0; k];
            let mut beta = vec![0.0; k];
            matvec(we, ew, k, k, &mut alpha);
            matvec(we, eb, k, k, &mut beta);
            let mut u = vec![0.0; ne * k];
            let mut score = vec![0.0; ne];
            for e in 0..ne {
                let (s, t, x) = (inc.src[e], inc.tgt[e], inc.xe[e]);
                let ue = &mut u[e * k..(e + 1) * k];
                let mut sc = 0.0;
                for d in 0..k {
                    let v = sp[s * k + d] + tp[t * k + d] + x * alpha[d] + beta[d];
                    ue[d] = v;
                    sc += a[d] * leaky(v);
                }
                score[e] = sc;
            }
            let mut att = vec![0.0; ne];
            for (t, es) in inc.by_tgt.iter().enumerate() {
                if es.is_empty() {
                    continue;
                }
                let mx = es.iter().map(|&e| score[e]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for &e in es {
                    att[e] = (score[e] - mx).exp();
                    z += att[e];
                }
                let m = &mut cache.msg[t * k..(t + 1) * k];
                for &e in es {
                    att[e] /= z;
                    let (s, x) = (inc.src[e], inc.xe[e]);
                    let wgt = att[e] * inv_h;
                    for d in 0..k {
                        m[d] += wgt * (sp[s * k + d] + x * alpha[d] + beta[d]);
                    }
                }
            }
            cache.src_proj.push(sp);
            cache.tgt_proj.push(tp);
            cache.alpha.push(alpha);
            cache.beta.push(beta);
            cache.u.push(u);
            cache.att.push(att);
        }
        for i in 0..nt * k {
            cache.out[i] = cache.msg[i].max(0.0) + tgt[i];
        }
        cache
    }

    fn forward_cached(&self, g: &BipartiteGraph) -> Result<ForwardCache> {
        self.check_graph(g)?;
        let k = self.layout.k;
        let v1 = self.embed(&self.layout.var_embed, &g.var_features);
        let c1 = self.embed(&self.layout.con_embed, &g.con_features);
        let xe: Vec<f64> = g.edge_features.iter().map(|f| f[0]).collect();
        let inc1 = Incidence::new(&g.edges, &xe, g.num_cons(), false);
        let r1 = self.round_forward(0, &v1, &c1, &inc1);
        let inc2 = Incidence::new(&g.edges, &xe, g.num_vars(), true);
        let r2 = self.round_forward(1, &r1.out, &v1, &inc2);
        let hl = &self.layout.hidden;
        let ol = &self.layout.out;
        let w1 = &self.params[hl.w..hl.w + k * k];
        let b1 = &self.params[hl.b..hl.b + k];
        let w2 = &self.params[ol.w..ol.w + k];
        let b2 = self.params[ol.b];
        let nt = g.target_mask.len();
        let mut hid_pre = vec![0.0; nt * k];
        let mut probs = vec![0.0; nt];
        for (i, &v) in g.target_mask.iter().enumerate() {
            let hp = &mut hid_pre[i * k..(i + 1) * k];
            matvec(w1, &r2.out[v * k..(v + 1) * k], k, k, hp);
            let mut logit = b2;
            for d in 0..k {
                hp[d] += b1[d];
                logit += w2[d] * hp[d].max(0.0);
            }
            probs[i] = sigmoid(logit);
        }
        if probs.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("policy output".into()));
        }
        Ok(ForwardCache {
            v1,
            c1,
            xe,
            r1,
            r2,
            hid_pre,
            probs,
        })
    }

    /// Probability that each target variable equals one.
    pub fn forward(&self, g: &BipartiteGraph) -> Result<Vec<f64>> {
        Ok(self.forward_cached(g)?.probs)
    }

    /// Attention weights indexed `[round][head][edge]`, with edges in graph
    /// order. Round 0 attends into constraints, round 1 into variables.
    pub fn attention(&self, g: &BipartiteGraph) -> Result<Vec<Vec<Vec<f64>>>> {
        let fc = self.forward_cached(g)?;
        Ok(vec![fc.r1.att, fc.r2.att])
    }

    /// Backpropagates `d_logit` (one entry per target) into `grad`.
    fn backward(&self, g: &BipartiteGraph, fc: &ForwardCache, d_logit: &[f64], grad: &mut [f64]) {
        let k = self.layout.k;
        let lay = &self.layout;
        let p = &self.params;
        let n = g.num_vars();
        let mut d_v2 = vec![0.0; n * k];
        let (hl, ol) = (&lay.hidden, &lay.out);
        let w1 = &p[hl.w..hl.w + k * k];
        let w2 = &p[ol.w..ol.w + k];
        for (i, &v) in g.target_mask.iter().enumerate() {
            let dl = d_logit[i];
            if dl == 0.0 {
                continue;
            }
            let hp = &fc.hid_pre[i * k..(i + 1) * k];
            grad[ol.b] += dl;
            let mut d_hp = vec![0.0; k];
            for d in 0..k {
                let act = hp[d].max(0.0);
                grad[ol.w + d] += dl * act;
                if hp[d] > 0.0 {
                    d_hp[d] = dl * w2[d];
                }
            }
            let x = &fc.r2.out[v * k..(v + 1) * k];
            outer_acc(&mut grad[hl.w..hl.w + k * k], &d_hp, x, k);
            for d in 0..k {
                grad[hl.b + d] += d_hp[d];
            }
            matvec_t_acc(w1, &d_hp, k, k, &mut d_v2[v * k..(v + 1) * k]);
        }
        let mut d_ew = vec![0.0; k];
        let mut d_eb = vec![0.0; k];
        // round two: constraints (src) -> variables (tgt)
        let inc2 = Incidence::new(&g.edges, &fc.xe, n, true);
        let mut d_c2 = vec![0.0; g.num_cons() * k];
        let mut d_v1 = vec![0.0; n * k];
        self.round_backward(1, &fc.r2, &fc.r1.out, &fc.v1, &inc2, &d_v2, grad, &mut d_c2, &mut d_v1, &mut d_ew, &mut d_eb);
        // round one: variables (src) -> constraints (tgt)
        let inc1 = Incidence::new(&g.edges, &fc.xe, g.num_cons(), false);
        let mut d_c1 = vec![0.0; g.num_cons() * k];
        self.round_backward(0, &fc.r1, &fc.v1, &fc.c1, &inc1, &d_c2, grad, &mut d_v1, &mut d_c1, &mut d_ew, &mut d_eb);
        let el = &lay.edge_embed;
        for d in 0..k {
            grad[el.w + d] += d_ew[d];
            grad[el.b + d] += d_eb[d];
        }
        for (lin, rows, dx) in [(&lay.var_embed, &g.var_features, &d_v1), (&lay.con_embed, &g.con_features, &d_c1)] {
            for (i, f) in rows.iter().enumerate() {
                let gi = &dx[i * k..(i + 1) * k];
                outer_acc(&mut grad[lin.w..lin.w + lin.rows * lin.cols], gi, f, lin.cols);
                for d in 0..k {
                    grad[lin.b + d] += gi[d];
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn round_backward(
        &self,
        r: usize,
        cache: &RoundCache,
        src: &[f64],
        tgt: &[f64],
        inc: &Incidence,
        d_out: &[f64],
        grad: &mut [f64],
        d_src: &mut [f64],
        d_tgt: &mut [f64],
        d_ew: &mut [f64],
        d_eb: &mut [f64],
    ) {
        let k = self.layout.k;
        let heads = self.layout.heads;
        let at = &self.layout.rounds[r];
        let p = &self.params;
        let ns = src.len() / k;
        let nt = tgt.len() / k;
        let ne = inc.src.len();
        let ew = &p[self.layout.edge_embed.w..self.layout.edge_embed.w + k];
        let eb = &p[self.layout.edge_embed.b..self.layout.edge_embed.b + k];
        let inv_h = 1.0 / heads as f64;
        let mut d_msg = vec![0.0; nt * k];
        for i in 0..nt * k {
            d_tgt[i] += d_out[i];
            if cache.msg[i] > 0.0 {
                d_msg[i] = d_out[i] * inv_h;
            }
        }
        for h in 0..heads {
            let (sp, alpha, beta, u, att) = (&cache.src_proj[h], &cache.alpha[h], &cache.beta[h], &cache.u[h], &cache.att[h]);
            let a = &p[at.a[h]..at.a[h] + k];
            let mut d_sp = vec![0.0; ns * k];
            let mut d_tp = vec![0.0; nt * k];
            let mut g1 = vec![0.0; k];
            let mut gx = vec![0.0; k];
            let mut d_att = vec![0.0; ne];
            for (t, es) in inc.by_tgt.iter().enumerate() {
                if es.is_empty() {
                    continue;
                }
                let dm = &d_msg[t * k..(t + 1) * k];
                let mut dot = 0.0;
                for &e in es {
                    let (s, x) = (inc.src[e], inc.xe[e]);
                    let mut da = 0.0;
                    for d in 0..k {
                        let msg = sp[s * k + d] + x * alpha[d] + beta[d];
                        da += dm[d] * msg;
                        // message path
                        let dmsg = att[e] * dm[d];
                        d_sp[s * k + d] += dmsg;
                        g1[d] += dmsg;
                        gx[d] += x * dmsg;
                    }
                    d_att[e] = da;
                    dot += att[e] * da;
                }
                for &e in es {
                    let d_score = att[e] * (d_att[e] - dot);
                    if d_score == 0.0 {
                        continue;
                    }
                    let (s, x) = (inc.src[e], inc.xe[e]);
                    let ue = &u[e * k..(e + 1) * k];
                    for d in 0..k {
                        grad[at.a[h] + d] += d_score * leaky(ue[d]);
                        let du = d_score * a[d] * leaky_grad(ue[d]);
                        d_sp[s * k + d] += du;
                        d_tp[t * k + d] += du;
                        g1[d] += du;
                        gx[d] += x * du;
                    }
                }
            }
            let ws = &p[at.ws[h]..at.ws[h] + k * k];
            let wt = &p[at.wt[h]..at.wt[h] + k * k];
            let we = &p[at.we[h]..at.we[h] + k * k];
            for i in 0..ns {
                let gi = &d_sp[i * k..(i + 1) * k];
                outer_acc(&mut grad[at.ws[h]..at.ws[h] + k * k], gi, &src[i * k..(i + 1) * k], k);
                matvec_t_acc(ws, gi, k, k, &mut d_src[i * k..(i + 1) * k]);
            }
            for i in 0..nt {
                let gi = &d_tp[i * k..(i + 1) * k];
                outer_acc(&mut grad[at.wt[h]..at.wt[h] + k * k], gi, &tgt[i * k..(i + 1) * k], k);
                matvec_t_acc(wt, gi, k, k, &mut d_tgt[i * k..(i + 1) * k]);
            }
            outer_acc(&mut grad[at.we[h]..at.we[h] + k * k], &gx, ew, k);
            outer_acc(&mut grad[at.we[h]..at.we[h] + k * k], &g1, eb, k);
            matvec_t_acc(we, &gx, k, k, d_ew);
            matvec_t_acc(we, &g1, k, k, d_eb);
        }
    }

    /// Raw weighted cross-entropy of one sample and its gradient.
    fn sample_loss_grad(&self, s: &TrainingSample, scale: f64, grad: Option<&mut [f64]>) -> Result<f64> {
        let fc = self.forward_cached(&s.graph)?;
        let q = s.soft_targets();
        let mut loss = 0.0;
        let mut d_logit = vec![0.0; q.len()];
        for (i, (&pr, &ql)) in fc.probs.iter().zip(&q).enumerate() {
            let pc = pr.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            loss -= ql * pc.ln() + (1.0 - ql) * (1.0 - pc).ln();
            if pr > PROB_CLAMP && pr < 1.0 - PROB_CLAMP {
                d_logit[i] = scale * (pr - ql);
            }
        }
        if let Some(grad) = grad {
            self.backward(&s.graph, &fc, &d_logit, grad);
        }
        Ok(loss)
    }

    /// Sign pattern of every piecewise-linear pre-activation, hashed.
    fn kink_signature(&self, g: &BipartiteGraph) -> Result<u64> {
        let fc = self.forward_cached(g)?;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut push = |b: bool| {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        };
        for r in [&fc.r1, &fc.r2] {
            for u in &r.u {
                u.iter().for_each(|&v| push(v > 0.0));
            }
            r.msg.iter().for_each(|&v| push(v > 0.0));
        }
        fc.hid_pre.iter().for_each(|&v| push(v > 0.0));
        fc.probs
            .iter()
            .for_each(|&p| push(p > PROB_CLAMP && p < 1.0 - PROB_CLAMP));
        Ok(h)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            embed_dim: self.layout.k,
            heads: self.layout.heads,
            var_features: VAR_FEATURES,
            con_features: CON_FEATURES,
            edge_features: EDGE_FEATURES,
            params: self.params.clone(),
        };
        fs::write(path, serde_json::to_string(&f)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        if f.format != MODEL_FORMAT || f.version != MODEL_VERSION {
            return Err(Error::InvalidParameter(format!("unsupported model file {} v{}", f.format, f.version)));
        }
        if (f.var_features, f.con_features, f.edge_features) != (VAR_FEATURES, CON_FEATURES, EDGE_FEATURES) {
            return Err(Error::InvalidParameter("model feature widths do not match the encoder".into()));
        }
        let layout = Layout::new(f.embed_dim, f.heads);
        if f.params.len() != layout.total {
            return Err(Error::Dimension {
                expected: layout.total,
                got: f.params.len(),
            });
        }
        if f.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { layout, params: f.params })
    }
}

/// Raw weighted cross-entropy summed over samples.
pub fn batch_loss(model: &PolicyModel, samples: &[TrainingSample]) -> Result<f64> {
    samples
        .iter()
        .map(|s| model.sample_loss_grad(s, 1.0, None))
        .sum()
}

/// Gradient of [`batch_loss`].
pub fn batch_gradient(model: &PolicyModel, samples: &[TrainingSample]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; model.num_params()];
    let mut loss = 0.0;
    for s in samples {
        loss += model.sample_loss_grad(s, 1.0, Some(&mut grad))?;
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub embed_dim: usize,
    pub heads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 100,
            batch_size: 8,
            seed: 0,
            embed_dim: 64,
            heads: 4,
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

/// Trains a fresh model; returns it with the per-epoch mean of the
/// target-count-normalized sample losses.
pub fn train(dataset: &[TrainingSample], cfg: &TrainConfig) -> Result<(PolicyModel, Vec<f64>)> {
    let model = PolicyModel::new(cfg.embed_dim, cfg.heads, cfg.seed);
    train_from(model, dataset, cfg)
}

pub fn train_from(mut model: PolicyModel, dataset: &[TrainingSample], cfg: &TrainConfig) -> Result<(PolicyModel, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if !(cfg.learning_rate >= 0.0) || cfg.batch_size == 0 {
        return Err(Error::InvalidParameter("learning rate must be >= 0 and batch size >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut adam = Adam::new(model.num_params());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let m = &model;
            let parts: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|&i| {
                    let s = &dataset[i];
                    let scale = 1.0 / (s.graph.target_mask.len().max(1) as f64 * batch.len() as f64);
                    let mut g = vec![0.0; m.num_params()];
                    let l = m.sample_loss_grad(s, scale, Some(&mut g))?;
                    Ok((l / s.graph.target_mask.len().max(1) as f64, g))
                })
                .collect();
            let mut grad = vec![0.0; model.num_params()];
            for part in parts {
                let (l, g) = part?;
                epoch_loss += l;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            adam.step(&mut model.params, &grad, cfg);
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        log::debug!("epoch {epoch}: loss {mean:.6}");
        history.push(mean);
    }
    Ok((model, history))
}

/// Mean target-normalized loss of a dataset (the quantity `train` records).
pub fn mean_normalized_loss(model: &PolicyModel, dataset: &[TrainingSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in dataset {
        total += model.sample_loss_grad(s, 1.0, None)? / s.graph.target_mask.len().max(1) as f64;
    }
    Ok(total / dataset.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub worst_param: usize,
}

/// Compares the analytic gradient of [`batch_loss`] for one sample with
/// central differences on at least `count` parameters, sampled round-robin
/// across blocks. Parameters whose perturbation flips any piecewise-linear
/// branch are resampled.
pub fn gradient_check(
    model: &PolicyModel,
    sample: &TrainingSample,
    epsilon: f64,
    count: usize,
    seed: u64,
) -> Result<GradientCheck> {
    if !(1e-6..=1e-4).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!("epsilon {epsilon} outside [1e-6, 1e-4]")));
    }
    let samples = std::slice::from_ref(sample);
    let (_, analytic) = batch_gradient(model, samples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = model.blocks().to_vec();
    let mut probe = model.clone();
    let mut out = GradientCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst_param: 0,
    };
    let mut b = 0;
    let mut attempts = 0;
    while out.checked < count {
        attempts += 1;
        if attempts > 50 * count {
            break;
        }
        let (_, off, len) = &blocks[b % blocks.len()];
        let idx = off + rng.random_range(0..*len);
        let orig = probe.params[idx];
        probe.params[idx] = orig + epsilon;
        let sig_plus = probe.kink_signature(&sample.graph)?;
        let lp = batch_loss(&probe, samples)?;
        probe.params[idx] = orig - epsilon;
        let sig_minus = probe.kink_signature(&sample.graph)?;
        let lm = batch_loss(&probe, samples)?;
        probe.params[idx] = orig;
        if sig_plus != sig_minus {
            out.skipped_kinks += 1;
            continue;
        }
        b += 1;
        let numeric = (lp - lm) / (2.0 * epsilon);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        if rel > out.max_rel_error {
            out.max_rel_error = rel;
            out.worst_param = idx;
        }
        out.checked += 1;
    }
    Ok(out)
}

/// Fraction of the ones in `best` that the rounded prediction also marks as one.
pub fn recall_at_best(probs: &[f64], best: &[bool]) -> Option<f64> {
    let positives = best.iter().filter(|&&b| b).count();
    if positives == 0 || probs.len() != best.len() {
        return None;
    }
    let hit = probs
        .iter()
        .zip(best)
        .filter(|(&p, &b)| b && p >= 0.5)
        .count();
    Some(hit as f64 / positives as f64)
}
