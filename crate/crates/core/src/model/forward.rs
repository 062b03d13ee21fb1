//! Forward pass with cached intermediates, and the matching hand-written
//! backward pass.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::geo::{self, DIST_BUCKETS, TIME_BUCKETS};
use crate::numeric::ops::{self, LayerNormCache, LOGIT_BOUND, MASK_NEG};
use crate::numeric::{Gradients, ParamId, ParamTable, Tensor};

use super::input::{CandidateSlate, PaddedHistory};
use super::network::{AttnIds, Model};

/// Per-head attention intermediates.
#[derive(Debug, Clone)]
pub(crate) struct MhaCache {
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Logits after bias, before clamping, one `[Nq × Nk]` per head.
    raw: Vec<Tensor>,
    /// Attention weights, one `[Nq × Nk]` per head.
    pub(crate) probs: Vec<Tensor>,
    concat: Tensor,
}

#[derive(Debug, Clone)]
struct BlockCache {
    u_in: Tensor,
    attn: MhaCache,
    norm1: LayerNormCache,
    u1: Tensor,
    ffn_pre: Tensor,
    ffn_drop: Option<Vec<f64>>,
    ffn_hidden: Tensor,
    norm2: LayerNormCache,
}

#[derive(Debug, Clone)]
struct HeadCache {
    u: Tensor,
    z: Tensor,
    pre: Tensor,
    drop: Option<Vec<f64>>,
    hidden: Tensor,
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pad: Vec<bool>,
    poi_idx: Vec<usize>,
    hour_idx: Vec<usize>,
    weekday_idx: Vec<usize>,
    loc_in: Tensor,
    loc_pre: Tensor,
    loc_act: Tensor,
    emb_norm: LayerNormCache,
    x0: Tensor,
    hist: Option<MhaCache>,
    x: Tensor,
    time_buckets: Vec<usize>,
    dist_buckets: Vec<usize>,
    cand_idx: Vec<usize>,
    e_c: Tensor,
    blocks: Vec<BlockCache>,
    head: HeadCache,
    pub scores: Vec<f64>,
}

impl ForwardCache {
    /// Cross-attention weights of block `layer`, head `head`: `[C × L]`.
    pub fn attention(&self, layer: usize, head: usize) -> &Tensor {
        &self.blocks[layer].attn.probs[head]
    }

    /// History representation handed to the cross-attention blocks.
    pub fn history_repr(&self) -> &Tensor {
        &self.x
    }

    /// Output of the embedding layer (before history self-attention).
    pub fn embedded_history(&self) -> &Tensor {
        &self.x0
    }

    /// History self-attention weights per head, `[L × L]`.
    pub fn history_attention(&self, head: usize) -> Option<&Tensor> {
        self.hist.as_ref().map(|h| &h.probs[head])
    }

    pub fn num_layers(&self) -> usize {
        self.blocks.len()
    }
}

fn check_finite(t: &Tensor, location: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            location: location.to_string(),
            msg: "non-finite activation".into(),
        })
    }
}

fn zero_rows(t: &mut Tensor, mask: &[bool]) {
    for (r, &m) in mask.iter().enumerate() {
        if m {
            t.row_mut(r).fill(0.0);
        }
    }
}

fn head_slice(x: &Tensor, h: usize, dh: usize) -> Tensor {
    let n = x.rows();
    let mut out = Vec::with_capacity(n * dh);
    for r in 0..n {
        out.extend_from_slice(&x.row(r)[h * dh..(h + 1) * dh]);
    }
    Tensor::matrix(n, dh, out)
}

fn put_head(dst: &mut Tensor, src: &Tensor, h: usize, dh: usize) {
    for r in 0..src.rows() {
        dst.row_mut(r)[h * dh..(h + 1) * dh].copy_from_slice(src.row(r));
    }
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = a.clone();
    out.add_assign(b);
    out
}

/// Scaled dot-product attention over `heads` heads. `bias` (shared by all
/// heads) is added before the optional clamp; `mask` is applied after it.
fn multi_head(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    heads: usize,
    bias: Option<&Tensor>,
    clamp: Option<f64>,
    mask: &[bool],
) -> MhaCache {
    let d = q.cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = Tensor::zeros(&[q.rows(), d]);
    let mut raw = Vec::with_capacity(heads);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (head_slice(&q, h, dh), head_slice(&k, h, dh), head_slice(&v, h, dh));
        let mut s = ops::matmul_bt(&qh, &kh);
        s.scale(scale);
        if let Some(b) = bias {
            s.add_assign(b);
        }
        let clamped = match clamp {
            Some(bound) => ops::clamp_logits(&s, bound),
            None => s.clone(),
        };
        let p = ops::masked_softmax(&clamped, mask, MASK_NEG);
        put_head(&mut concat, &ops::matmul(&p, &vh), h, dh);
        raw.push(s);
        probs.push(p);
    }
    MhaCache { q, k, v, raw, probs, concat }
}

/// Returns `(dq, dk, dv)` and accumulates the bias gradient.
fn multi_head_backward(
    cache: &MhaCache,
    heads: usize,
    clamp: Option<f64>,
    dconcat: &Tensor,
    mut dbias: Option<&mut Tensor>,
) -> (Tensor, Tensor, Tensor) {
    let d = cache.q.cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Tensor::zeros(cache.q.shape());
    let mut dk = Tensor::zeros(cache.k.shape());
    let mut dv = Tensor::zeros(cache.v.shape());
    for h in 0..heads {
        let (qh, kh, vh) = (
            head_slice(&cache.q, h, dh),
            head_slice(&cache.k, h, dh),
            head_slice(&cache.v, h, dh),
        );
        let p = &cache.probs[h];
        let dout = head_slice(dconcat, h, dh);
        let dp = ops::matmul_bt(&dout, &vh);
        let mut dvh = Tensor::zeros(&[vh.rows(), dh]);
        ops::matmul_at_acc(&mut dvh, p, &dout);
        let mut ds = ops::softmax_backward(p, &dp);
        if let Some(bound) = clamp {
            ds = ops::clamp_backward(&cache.raw[h], &ds, bound);
        }
        if let Some(db) = dbias.as_deref_mut() {
            db.add_assign(&ds);
        }
        let mut dqh = ops::matmul(&ds, &kh);
        dqh.scale(scale);
        let mut dkh = Tensor::zeros(&[kh.rows(), dh]);
        ops::matmul_at_acc(&mut dkh, &ds, &qh);
        dkh.scale(scale);
        put_head(&mut dq, &dqh, h, dh);
        put_head(&mut dk, &dkh, h, dh);
        put_head(&mut dv, &dvh, h, dh);
    }
    (dq, dk, dv)
}

fn affine_backward_into(p: &ParamTable, g: &mut Gradients, x: &Tensor, w: ParamId, b: ParamId, dy: &Tensor) -> Tensor {
    let (dw, db) = g.pair_mut(w, b);
    ops::affine_backward(x, p.get(w), dy, dw, db)
}

fn layer_norm_backward_into(
    p: &ParamTable,
    g: &mut Gradients,
    cache: &LayerNormCache,
    gain: ParamId,
    shift: ParamId,
    dy: &Tensor,
) -> Tensor {
    let (dg, ds) = g.pair_mut(gain, shift);
    ops::layer_norm_backward(cache, p.get(gain), dy, dg, ds)
}

#[allow(clippy::too_many_arguments)]
fn attention_forward(
    p: &ParamTable,
    ids: &AttnIds,
    xq: &Tensor,
    xkv: &Tensor,
    heads: usize,
    bias: Option<&Tensor>,
    clamp: Option<f64>,
    mask: &[bool],
) -> (Tensor, MhaCache) {
    let q = ops::affine(xq, p.get(ids.wq), p.get(ids.bq));
    let k = ops::matmul(xkv, p.get(ids.wk));
    let v = ops::affine(xkv, p.get(ids.wv), p.get(ids.bv));
    let cache = multi_head(q, k, v, heads, bias, clamp, mask);
    let out = ops::affine(&cache.concat, p.get(ids.wo), p.get(ids.bo));
    (out, cache)
}

/// Returns `(d xq, d xkv)`.
#[allow(clippy::too_many_arguments)]
fn attention_backward(
    p: &ParamTable,
    g: &mut Gradients,
    ids: &AttnIds,
    xq: &Tensor,
    xkv: &Tensor,
    cache: &MhaCache,
    heads: usize,
    clamp: Option<f64>,
    dout: &Tensor,
    dbias: Option<&mut Tensor>,
) -> (Tensor, Tensor) {
    let dconcat = affine_backward_into(p, g, &cache.concat, ids.wo, ids.bo, dout);
    let (dq, dk, dv) = multi_head_backward(cache, heads, clamp, &dconcat, dbias);
    let dxq = affine_backward_into(p, g, xq, ids.wq, ids.bq, &dq);
    ops::matmul_at_acc(g.get_mut(ids.wk), xkv, &dk);
    let mut dxkv = ops::matmul_bt(&dk, p.get(ids.wk));
    dxkv.add_assign(&affine_backward_into(p, g, xkv, ids.wv, ids.bv, &dv));
    (dxq, dxkv)
}

/// `table[b] · proj` for every bucket `b`.
fn bucket_values(table: &Tensor, proj: &Tensor) -> Vec<f64> {
    (0..table.rows())
        .map(|b| table.row(b).iter().zip(proj.data()).map(|(x, w)| x * w).sum())
        .collect()
}

impl Model {
    /// Candidate scores in inference mode (dropout off).
    pub fn score(&self, history: &PaddedHistory, slate: &CandidateSlate) -> Result<Vec<f64>> {
        Ok(self.forward_with(&self.params, history, slate, None)?.scores)
    }

    /// Candidate-relative attention bias `[C × L]`: time-gap bias plus
    /// distance bias, `-1e4` at padded history columns.
    pub fn build_bias(&self, history: &PaddedHistory, slate: &CandidateSlate) -> Tensor {
        self.bias_from_buckets(
            &self.params,
            &history.pad_mask,
            &history.time_buckets(),
            &slate.dist_buckets(history),
            slate.len(),
        )
    }

    fn bias_from_buckets(&self, p: &ParamTable, pad: &[bool], tb: &[usize], db: &[usize], c: usize) -> Tensor {
        let l = pad.len();
        let tval = bucket_values(p.get(self.ids.time_table), p.get(self.ids.time_proj));
        let dval = bucket_values(p.get(self.ids.dist_table), p.get(self.ids.dist_proj));
        let mut b = Tensor::zeros(&[c, l]);
        for j in 0..c {
            let row = b.row_mut(j);
            for i in 0..l {
                row[i] = if pad[i] {
                    -MASK_NEG
                } else {
                    let t = if self.config.use_temporal_bias { tval[tb[i]] } else { 0.0 };
                    let s = if self.config.use_spatial_bias { dval[db[j * l + i]] } else { 0.0 };
                    t + s
                };
            }
        }
        b
    }

    /// Full forward pass against an explicit parameter table. Passing a
    /// random source switches dropout on (training mode).
    pub fn forward_with(
        &self,
        p: &ParamTable,
        history: &PaddedHistory,
        slate: &CandidateSlate,
        mut dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardCache> {
        let cfg = &self.config;
        history.validate(cfg.num_pois)?;
        slate.validate(cfg.num_pois)?;
        let ids = &self.ids;
        let (l, c, d) = (history.len(), slate.len(), cfg.dim);
        let pad = history.pad_mask.clone();
        let train = dropout_rng.is_some();

        // embedding layer
        let poi_idx: Vec<usize> = history.poi_ids.iter().map(|&p| p as usize).collect();
        let feats: Vec<geo::TimeFeatures> = history.timestamps.iter().map(|&t| geo::time_features(t)).collect();
        let hour_idx: Vec<usize> = feats.iter().map(|f| f.hour).collect();
        let weekday_idx: Vec<usize> = feats.iter().map(|f| f.weekday).collect();
        let loc_in = Tensor::matrix(l, 2, history.norm_coords.iter().flat_map(|&(a, b)| [a, b]).collect());
        let loc_pre = ops::affine(&loc_in, p.get(ids.loc_w1), p.get(ids.loc_b1));
        let loc_act = ops::relu(&loc_pre);
        let mut a = ops::affine(&loc_act, p.get(ids.loc_w2), p.get(ids.loc_b2));
        a.add_assign(&ops::embed_lookup(p.get(ids.hist_poi), &poi_idx));
        a.add_assign(&ops::embed_lookup(p.get(ids.hour), &hour_idx));
        a.add_assign(&ops::embed_lookup(p.get(ids.weekday), &weekday_idx));
        for i in 0..l {
            // recency index: the newest check-in is always position 0
            let pe = self.recency_encoding(l - 1 - i);
            a.row_mut(i).iter_mut().zip(pe.iter()).for_each(|(v, e)| *v += e);
        }
        let (mut x0, emb_norm) = ops::layer_norm(&a, p.get(ids.emb_gain), p.get(ids.emb_shift));
        zero_rows(&mut x0, &pad);
        check_finite(&x0, "embedding")?;

        // optional causal self-attention over the history
        let (x, hist) = match &ids.hist_attn {
            Some(attn_ids) => {
                let mut mask = vec![false; l * l];
                for i in 0..l {
                    for j in 0..l {
                        mask[i * l + j] = j > i || pad[j];
                    }
                }
                let (y, cache) = attention_forward(p, attn_ids, &x0, &x0, cfg.heads, None, None, &mask);
                let mut x = add(&x0, &y);
                zero_rows(&mut x, &pad);
                check_finite(&x, "history_attention")?;
                (x, Some(cache))
            }
            None => (x0.clone(), None),
        };

        let time_buckets = history.time_buckets();
        let dist_buckets = slate.dist_buckets(history);
        let bias = self.bias_from_buckets(p, &pad, &time_buckets, &dist_buckets, c);

        let cand_idx: Vec<usize> = slate.poi_ids.iter().map(|&p| p as usize).collect();
        let e_c = ops::embed_lookup(p.get(ids.cand_poi), &cand_idx);

        let mut u = e_c.clone();
        let mut blocks = Vec::with_capacity(cfg.layers);
        for (li, b) in ids.blocks.iter().enumerate() {
            let (attn_out, attn) =
                attention_forward(p, &b.attn, &u, &x, cfg.heads, Some(&bias), Some(LOGIT_BOUND), &pad);
            let (u1, norm1) = ops::layer_norm(&add(&u, &attn_out), p.get(b.norm1_gain), p.get(b.norm1_shift));
            let ffn_pre = ops::affine(&u1, p.get(b.ffn_w1), p.get(b.ffn_b1));
            let act = ops::gelu(&ffn_pre);
            let (ffn_hidden, ffn_drop) = match dropout_rng.as_deref_mut() {
                Some(rng) => ops::dropout(&act, cfg.dropout, train, rng),
                None => (act, None),
            };
            let f2 = ops::affine(&ffn_hidden, p.get(b.ffn_w2), p.get(b.ffn_b2));
            let (u_out, norm2) = ops::layer_norm(&add(&u1, &f2), p.get(b.norm2_gain), p.get(b.norm2_shift));
            check_finite(&u_out, &format!("block{li}"))?;
            blocks.push(BlockCache {
                u_in: u,
                attn,
                norm1,
                u1,
                ffn_pre,
                ffn_drop,
                ffn_hidden,
                norm2,
            });
            u = u_out;
        }

        // head over [u; e_c; u * e_c]
        let prod = ops::hadamard(&u, &e_c);
        let mut z = Tensor::zeros(&[c, 3 * d]);
        for j in 0..c {
            let row = z.row_mut(j);
            row[..d].copy_from_slice(u.row(j));
            row[d..2 * d].copy_from_slice(e_c.row(j));
            row[2 * d..].copy_from_slice(prod.row(j));
        }
        let pre = ops::affine(&z, p.get(ids.head_w1), p.get(ids.head_b1));
        let act = ops::gelu(&pre);
        let (hidden, drop) = match dropout_rng {
            Some(rng) => ops::dropout(&act, cfg.dropout, train, rng),
            None => (act, None),
        };
        let out = ops::affine(&hidden, p.get(ids.head_w2), p.get(ids.head_b2));
        check_finite(&out, "head")?;

        Ok(ForwardCache {
            pad,
            poi_idx,
            hour_idx,
            weekday_idx,
            loc_in,
            loc_pre,
            loc_act,
            emb_norm,
            x0,
            hist,
            x,
            time_buckets,
            dist_buckets,
            cand_idx,
            e_c,
            blocks,
            head: HeadCache { u, z, pre, drop, hidden },
            scores: out.into_data(),
        })
    }

    /// Accumulates `d loss / d params` into `grads` given `d loss / d scores`.
    pub fn backward_with(&self, p: &ParamTable, cache: &ForwardCache, dscores: &[f64], grads: &mut Gradients) {
        let cfg = &self.config;
        let ids = &self.ids;
        let d = cfg.dim;
        let c = cache.scores.len();
        let l = cache.pad.len();
        assert_eq!(dscores.len(), c, "one score gradient per candidate");

        // head
        let ds = Tensor::matrix(c, 1, dscores.to_vec());
        let h = &cache.head;
        let dhidden = affine_backward_into(p, grads, &h.hidden, ids.head_w2, ids.head_b2, &ds);
        let dact = ops::dropout_backward(h.drop.as_deref(), &dhidden);
        let dpre = ops::gelu_backward(&h.pre, &dact);
        let dz = affine_backward_into(p, grads, &h.z, ids.head_w1, ids.head_b1, &dpre);
        let mut du = Tensor::zeros(&[c, d]);
        let mut de_c = Tensor::zeros(&[c, d]);
        for j in 0..c {
            let (zr, ur, er) = (dz.row(j), h.u.row(j), cache.e_c.row(j));
            let dur = du.row_mut(j);
            for k in 0..d {
                dur[k] = zr[k] + zr[2 * d + k] * er[k];
            }
            let der = de_c.row_mut(j);
            for k in 0..d {
                der[k] = zr[d + k] + zr[2 * d + k] * ur[k];
            }
        }

        // candidate-conditioned blocks, last to first
        let mut dbias = Tensor::zeros(&[c, l]);
        let mut dx = Tensor::zeros(cache.x.shape());
        for (b, bc) in ids.blocks.iter().zip(&cache.blocks).rev() {
            let dr2 = layer_norm_backward_into(p, grads, &bc.norm2, b.norm2_gain, b.norm2_shift, &du);
            let mut du1 = dr2.clone();
            let dhid = affine_backward_into(p, grads, &bc.ffn_hidden, b.ffn_w2, b.ffn_b2, &dr2);
            let dact = ops::dropout_backward(bc.ffn_drop.as_deref(), &dhid);
            let dpre = ops::gelu_backward(&bc.ffn_pre, &dact);
            du1.add_assign(&affine_backward_into(p, grads, &bc.u1, b.ffn_w1, b.ffn_b1, &dpre));
            let dr1 = layer_norm_backward_into(p, grads, &bc.norm1, b.norm1_gain, b.norm1_shift, &du1);
            let (dq_in, dkv) = attention_backward(
                p,
                grads,
                &b.attn,
                &bc.u_in,
                &cache.x,
                &bc.attn,
                cfg.heads,
                Some(LOGIT_BOUND),
                &dr1,
                Some(&mut dbias),
            );
            du = add(&dr1, &dq_in);
            dx.add_assign(&dkv);
        }
        de_c.add_assign(&du);
        ops::embed_backward(grads.get_mut(ids.cand_poi), &cache.cand_idx, &de_c, None);

        // bias tables: aggregate the logit gradient per bucket first
        let mut time_sum = [0.0; TIME_BUCKETS];
        let mut dist_sum = [0.0; DIST_BUCKETS];
        for j in 0..c {
            let row = dbias.row(j);
            for i in (0..l).filter(|&i| !cache.pad[i]) {
                time_sum[cache.time_buckets[i]] += row[i];
                dist_sum[cache.dist_buckets[j * l + i]] += row[i];
            }
        }
        let bias_terms = [
            (cfg.use_temporal_bias, ids.time_table, ids.time_proj, &time_sum[..]),
            (cfg.use_spatial_bias, ids.dist_table, ids.dist_proj, &dist_sum[..]),
        ];
        for (enabled, table, proj, sums) in bias_terms {
            if !enabled {
                continue;
            }
            let (tv, pv) = (p.get(table), p.get(proj));
            let (dt, dp) = grads.pair_mut(table, proj);
            for (bucket, &s) in sums.iter().enumerate() {
                if s == 0.0 {
                    continue;
                }
                for k in 0..d {
                    dp.data_mut()[k] += s * tv.row(bucket)[k];
                    dt.row_mut(bucket)[k] += s * pv.data()[k];
                }
            }
        }

        // history self-attention
        zero_rows(&mut dx, &cache.pad);
        let mut dx0 = dx.clone();
        if let (Some(attn_ids), Some(hc)) = (&ids.hist_attn, &cache.hist) {
            let (dxq, dxkv) = attention_backward(p, grads, attn_ids, &cache.x0, &cache.x0, hc, cfg.heads, None, &dx, None);
            dx0.add_assign(&dxq);
            dx0.add_assign(&dxkv);
        }
        zero_rows(&mut dx0, &cache.pad);

        // embedding layer
        let da = layer_norm_backward_into(p, grads, &cache.emb_norm, ids.emb_gain, ids.emb_shift, &dx0);
        ops::embed_backward(grads.get_mut(ids.hist_poi), &cache.poi_idx, &da, Some(0));
        ops::embed_backward(grads.get_mut(ids.hour), &cache.hour_idx, &da, None);
        ops::embed_backward(grads.get_mut(ids.weekday), &cache.weekday_idx, &da, None);
        let dloc_act = affine_backward_into(p, grads, &cache.loc_act, ids.loc_w2, ids.loc_b2, &da);
        let dloc_pre = ops::relu_backward(&cache.loc_pre, &dloc_act);
        let _ = affine_backward_into(p, grads, &cache.loc_in, ids.loc_w1, ids.loc_b1, &dloc_pre);
    }
}
