use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geo::{DAYS_PER_WEEK, DIST_BUCKETS, HOURS_PER_DAY, TIME_BUCKETS};
use crate::numeric::{ParamId, ParamTable, Tensor};

use super::config::ModelConfig;

#[derive(Debug, Clone)]
pub(crate) struct AttnIds {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockIds {
    pub attn: AttnIds,
    pub norm1_gain: ParamId,
    pub norm1_shift: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub norm2_gain: ParamId,
    pub norm2_shift: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct ParamIds {
    pub hist_poi: ParamId,
    pub cand_poi: ParamId,
    pub hour: ParamId,
    pub weekday: ParamId,
    pub loc_w1: ParamId,
    pub loc_b1: ParamId,
    pub loc_w2: ParamId,
    pub loc_b2: ParamId,
    pub emb_gain: ParamId,
    pub emb_shift: ParamId,
    pub hist_attn: Option<AttnIds>,
    pub time_table: ParamId,
    pub time_proj: ParamId,
    pub dist_table: ParamId,
    pub dist_proj: ParamId,
    pub blocks: Vec<BlockIds>,
    pub head_w1: ParamId,
    pub head_b1: ParamId,
    pub head_w2: ParamId,
    pub head_b2: ParamId,
}

/// Network structure plus its parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamTable,
    pub(crate) ids: ParamIds,
    /// Positional encodings for recency `0..history_len`, row-major.
    pub(crate) pe: Vec<f64>,
}

struct Init<'a> {
    table: &'a mut ParamTable,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, decay: bool) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.table.insert(name, Tensor::new(shape, data), decay)
    }

    fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> ParamId {
        self.table.insert(name, Tensor::filled(shape, value), false)
    }

    /// Weight `[fan_in × fan_out]` plus zero bias.
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> (ParamId, ParamId) {
        let w = self.uniform(&format!("{name}.weight"), &[fan_in, fan_out], 1.0 / (fan_in as f64).sqrt(), true);
        let b = self.constant(&format!("{name}.bias"), &[fan_out], 0.0);
        (w, b)
    }

    fn attention(&mut self, name: &str, d: usize) -> AttnIds {
        let (wq, bq) = self.linear(&format!("{name}.query"), d, d);
        // keys carry no bias: softmax is invariant to it
        let wk = self.uniform(&format!("{name}.key.weight"), &[d, d], 1.0 / (d as f64).sqrt(), true);
        let (wv, bv) = self.linear(&format!("{name}.value"), d, d);
        let (wo, bo) = self.linear(&format!("{name}.out"), d, d);
        AttnIds { wq, bq, wk, wv, bv, wo, bo }
    }
}

impl Model {
    /// Freshly initialized model. Embeddings and projections are drawn from
    /// a zero-centred uniform range scaled by `1/sqrt(fan_in)`; the bias
    /// bucket tables start at zero so the untrained model is bias-neutral.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let rows = config.num_pois + 1;
        let emb_bound = 1.0 / (d as f64).sqrt();
        let mut table = ParamTable::new();
        let mut init = Init {
            table: &mut table,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };

        let hist_poi = init.uniform("history_poi_embedding", &[rows, d], emb_bound, true);
        let cand_poi = init.uniform("candidate_poi_embedding", &[rows, d], emb_bound, true);
        let hour = init.uniform("hour_embedding", &[HOURS_PER_DAY, d], emb_bound, true);
        let weekday = init.uniform("weekday_embedding", &[DAYS_PER_WEEK, d], emb_bound, true);
        let (loc_w1, loc_b1) = init.linear("location.layer1", 2, d);
        let (loc_w2, loc_b2) = init.linear("location.layer2", d, d);
        let emb_gain = init.constant("embedding_norm.gain", &[d], 1.0);
        let emb_shift = init.constant("embedding_norm.shift", &[d], 0.0);
        let hist_attn = config.use_history_attn.then(|| init.attention("history_attention", d));
        let time_table = init.constant("time_bias.table", &[TIME_BUCKETS, d], 0.0);
        let time_proj = init.uniform("time_bias.proj", &[d], emb_bound, false);
        let dist_table = init.constant("dist_bias.table", &[DIST_BUCKETS, d], 0.0);
        let dist_proj = init.uniform("dist_bias.proj", &[d], emb_bound, false);

        let ffn = d * config.ffn_mult;
        let blocks = (0..config.layers)
            .map(|l| {
                let attn = init.attention(&format!("block{l}.attention"), d);
                let norm1_gain = init.constant(&format!("block{l}.norm1.gain"), &[d], 1.0);
                let norm1_shift = init.constant(&format!("block{l}.norm1.shift"), &[d], 0.0);
                let (ffn_w1, ffn_b1) = init.linear(&format!("block{l}.ffn1"), d, ffn);
                let (ffn_w2, ffn_b2) = init.linear(&format!("block{l}.ffn2"), ffn, d);
                let norm2_gain = init.constant(&format!("block{l}.norm2.gain"), &[d], 1.0);
                let norm2_shift = init.constant(&format!("block{l}.norm2.shift"), &[d], 0.0);
                BlockIds {
                    attn,
                    norm1_gain,
                    norm1_shift,
                    ffn_w1,
                    ffn_b1,
                    ffn_w2,
                    ffn_b2,
                    norm2_gain,
                    norm2_shift,
                }
            })
            .collect();
        let (head_w1, head_b1) = init.linear("head.layer1", 3 * d, d);
        let (head_w2, head_b2) = init.linear("head.layer2", d, 1);

        // padding row of the history table stays zero
        table.get_mut(hist_poi).row_mut(0).fill(0.0);

        let pe = (0..config.history_len).flat_map(|r| positional_encoding(r, d)).collect();
        Ok(Model {
            config,
            params: table,
            pe,
            ids: ParamIds {
                hist_poi,
                cand_poi,
                hour,
                weekday,
                loc_w1,
                loc_b1,
                loc_w2,
                loc_b2,
                emb_gain,
                emb_shift,
                hist_attn,
                time_table,
                time_proj,
                dist_table,
                dist_proj,
                blocks,
                head_w1,
                head_b1,
                head_w2,
                head_b2,
            },
        })
    }

    /// Positional encoding of recency `r` (0 = newest check-in).
    pub(crate) fn recency_encoding(&self, r: usize) -> std::borrow::Cow<'_, [f64]> {
        let d = self.config.dim;
        if (r + 1) * d <= self.pe.len() {
            std::borrow::Cow::Borrowed(&self.pe[r * d..(r + 1) * d])
        } else {
            std::borrow::Cow::Owned(positional_encoding(r, d))
        }
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.id(name)
    }
}

/// Sinusoidal encoding of `position` (base 10000), width `d`.
pub fn positional_encoding(position: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|k| {
            let freq = 10000f64.powf(-((2 * (k / 2)) as f64) / d as f64);
            let angle = position as f64 * freq;
            if k % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_row_is_zero_and_bias_tables_neutral() {
        let m = Model::new(ModelConfig { num_pois: 5, dim: 8, heads: 2, ..Default::default() }, 1).unwrap();
        let t = m.params.get(m.ids.hist_poi);
        assert!(t.row(0).iter().all(|v| *v == 0.0));
        assert!(t.row(1).iter().any(|v| *v != 0.0));
        assert!(m.params.get(m.ids.time_table).data().iter().all(|v| *v == 0.0));
        assert!(m.params.get(m.ids.dist_table).data().iter().all(|v| *v == 0.0));
        assert!(!m.params.decays(m.ids.time_table));
        assert!(!m.params.decays(m.ids.emb_gain));
        assert!(m.params.decays(m.ids.blocks[0].attn.wq));
    }

    #[test]
    fn zero_layers_rejected() {
        let cfg = ModelConfig { num_pois: 5, layers: 0, ..Default::default() };
        assert!(Model::new(cfg, 0).is_err());
    }

    #[test]
    fn positional_encoding_origin() {
        let pe = positional_encoding(0, 6);
        assert_eq!(pe, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let pe = positional_encoding(1, 4);
        assert!((pe[0] - 1f64.sin()).abs() < 1e-15);
        assert!((pe[2] - 0.01f64.sin()).abs() < 1e-15);
    }
}
