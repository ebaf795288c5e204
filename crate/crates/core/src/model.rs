//! The full network: encoder, enhancement, object decoding, temporal encoding,
//! SRD and heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rvos_autodiff::{Graph, Real, Var};

use crate::config::ModelConfig;
use crate::decoder::{Aggregator, BoxHead, MaskDecoder, QueryMaker};
use crate::encoder::{Enhancer, FeaturePyramid, TextEmbedder, TextFeatures, VisualEncoder};
use crate::error::{CoreError, Result};
use crate::params::{Bound, Builder, ParamStore};
use crate::temporal::{HeadOutputs, Heads, PredictionSet, Srd, TemporalEncoder, TemporalFeatures};

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub encoder: VisualEncoder,
    pub text: TextEmbedder,
    pub enhancer: Enhancer,
    pub queries: QueryMaker,
    pub aggregator: Aggregator,
    pub masks: MaskDecoder,
    pub boxes: BoxHead,
    pub temporal: TemporalEncoder,
    pub srd: Srd,
    pub heads: Heads,
}

/// Graph handles for every intermediate the losses and tests need.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub pyramid: FeaturePyramid,
    pub enhanced: FeaturePyramid,
    pub text: TextFeatures,
    /// `[N_q, C_t]`.
    pub f_q: Var,
    /// `[T, N_q, C_t]`.
    pub f_obj: Var,
    /// `[N_q, T, C_t]`.
    pub tenc: Var,
    pub temporal: TemporalFeatures,
    pub heads: HeadOutputs,
    /// `[T, N_q, 4]`.
    pub boxes: Var,
    /// Per query `[T, H, W]` logits.
    pub mask_logits: Vec<Var>,
    pub use_span: bool,
}

impl Model {
    /// Architecture plus freshly initialized parameters.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<f64>)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder::new(&mut store, &mut rng);
        let model = Model {
            cfg: cfg.clone(),
            encoder: VisualEncoder::new(&mut b, cfg),
            text: TextEmbedder::new(&mut b, cfg),
            enhancer: Enhancer::new(&mut b, cfg),
            queries: QueryMaker::new(&mut b, cfg),
            aggregator: Aggregator::new(&mut b, cfg),
            masks: MaskDecoder::new(&mut b, cfg),
            boxes: BoxHead::new(&mut b, cfg),
            temporal: TemporalEncoder::new(&mut b, cfg),
            srd: Srd::new(&mut b, cfg),
            heads: Heads::new(&mut b, cfg),
        };
        Ok((model, store))
    }

    /// Architecture only; parameters come from a checkpoint.
    pub fn architecture(cfg: &ModelConfig) -> Result<Self> {
        Ok(Self::new(cfg, 0)?.0)
    }

    /// `frames: [T, 3, H, W]`; `frame_index` gives each clip frame's position in its video.
    pub fn forward<F: Real>(&self, g: &mut Graph<F>, p: &Bound, frames: Var, ids: &[usize], frame_index: &[usize]) -> Result<ModelOutput> {
        self.text.validate(ids).map_err(CoreError::Vocab)?;
        let fs = g.shape(frames).to_vec();
        let stride = self.cfg.stride();
        if fs.len() != 4 || fs[1] != 3 || fs[2] % stride != 0 || fs[3] % stride != 0 || fs[0] != frame_index.len() || fs[0] == 0 {
            return Err(CoreError::Config(format!("frames {:?} need T = {} and H, W multiples of {stride}", fs, frame_index.len())));
        }
        let (h, w) = (fs[2], fs[3]);
        let pyramid = self.encoder.encode(g, p, frames)?;
        let text = self.text.embed(g, p, ids)?;
        let (enhanced, text) = self.enhancer.enhance(g, p, &pyramid, &text)?;
        let e_enh = text.enhanced.expect("enhanced text");
        // Video-level text: the per-frame enhanced tokens averaged over time.
        let e_l = g.mean_axis(e_enh, 0)?;
        let f_q = self.queries.make_queries(g, p, e_l)?;
        let f_obj = self.aggregator.aggregate(g, p, f_q, &enhanced)?;
        let boxes = self.boxes.decode_boxes(g, p, f_obj)?;
        let feats = self.masks.mask_features(g, p, &pyramid, &enhanced, frames)?;
        let dynp = self.masks.dynamic_params(g, p, f_obj)?;
        let mask_logits = (0..self.cfg.num_queries).map(|q| self.masks.decode(g, feats, dynp, q, h, w)).collect::<rvos_autodiff::Result<Vec<_>>>()?;
        let per_query = g.permute(f_obj, &[1, 0, 2])?;
        let tenc = self.temporal.temporal_encode(g, p, per_query, frame_index)?;
        let temporal = self.srd.srd_decode(g, p, e_l, tenc, per_query, f_q)?;
        let heads = self.heads.forward(g, p, temporal)?;
        Ok(ModelOutput { pyramid, enhanced, text, f_q, f_obj, tenc, temporal, heads, boxes, mask_logits, use_span: self.cfg.use_span })
    }
}

impl ModelOutput {
    /// Reads every prediction off the graph as `f64`.
    pub fn prediction_set<F: Real>(&self, g: &Graph<F>) -> PredictionSet {
        let v = |x: Var| g.value(x).to_f64_vec();
        let ms = g.shape(self.mask_logits[0]).to_vec();
        let (nq, t, h, w) = (self.mask_logits.len(), ms[0], ms[1], ms[2]);
        let span = v(self.heads.span_logits);
        let sig = rvos_autodiff::sigmoid::<f64>;
        let tau_s = span.chunks(2).map(|c| sig(c[0])).collect();
        let tau_e = span.chunks(2).map(|c| sig(c[1])).collect();
        let b = v(self.boxes);
        let mut boxes = vec![0.0; nq * t * 4];
        for f in 0..t {
            for q in 0..nq {
                let src = (f * nq + q) * 4;
                let dst = (q * t + f) * 4;
                boxes[dst..dst + 4].copy_from_slice(&b[src..src + 4]);
            }
        }
        let masks = self.mask_logits.iter().flat_map(|&m| v(m)).collect();
        let c = v(self.heads.c_logits).into_iter().map(sig).collect();
        let r = v(self.heads.r_logits).into_iter().map(sig).collect();
        PredictionSet { nq, t, h, w, c, tau_s, tau_e, r, boxes, masks, use_span: self.use_span }
    }
}
