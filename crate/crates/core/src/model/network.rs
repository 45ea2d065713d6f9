use super::layers::{affine, append_class_token, encoder_block, tokenize, AttentionTrace, LayerVars};
use super::{positional_encoding, BoundParams, ModelConfig, ModelError, ParamStore};
use crate::data::PatchSample;
use crate::tensor::{Graph, Rng64, Tensor, Var};

/// Result of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// `[batch, n_classes]` pre-softmax scores.
    pub logits: Var,
    /// One trace per encoder layer.
    pub attention: Vec<AttentionTrace>,
}

/// The network definition: a validated config and its precomputed
/// positional table. Weights live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct DiffFormer {
    config: ModelConfig,
    positions: Tensor,
}

impl DiffFormer {
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let positions = positional_encoding(config.n_tokens(), config.d_embed)?;
        Ok(Self { config, positions })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn positions(&self) -> &Tensor {
        &self.positions
    }

    pub fn init_params(&self) -> Result<ParamStore, ModelError> {
        ParamStore::init(&self.config)
    }

    /// Stacks samples into a `[batch, P, P, C]` tensor.
    pub fn batch_tensor(&self, samples: &[&PatchSample]) -> Result<Tensor, ModelError> {
        let (p, c) = (self.config.patch_size, self.config.pca_bands);
        let per = p * p * c;
        let mut data = Vec::with_capacity(samples.len() * per);
        for s in samples {
            if s.patch.len() != per {
                return Err(ModelError::Config(format!(
                    "patch of {} values does not match {p}x{p}x{c}",
                    s.patch.len()
                )));
            }
            data.extend_from_slice(&s.patch);
        }
        Ok(Tensor::new(&[samples.len(), p, p, c], data)?)
    }

    /// tokenize → append class token → add positions → encoder stack →
    /// last row → dense head → classifier.
    ///
    /// `rng = Some(..)` selects training mode (dropout active).
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &BoundParams,
        patches: Var,
        mut rng: Option<&mut Rng64>,
    ) -> Result<ForwardPass, ModelError> {
        let cfg = &self.config;
        let shape = g.shape(patches).to_vec();
        let expected = [cfg.patch_size, cfg.patch_size, cfg.pca_bands];
        if shape.len() != 4 || shape[1..] != expected || shape[0] == 0 {
            return Err(ModelError::Config(format!(
                "input batch {shape:?} does not match [batch, {}, {}, {}]",
                expected[0], expected[1], expected[2]
            )));
        }
        let batch = shape[0];
        let tokens = tokenize(g, patches, params.var("tok.w"), params.var("tok.b"), cfg.token_spatial)?;
        let seq = append_class_token(g, tokens, params.var("cls"), batch)?;
        let pe = g.constant(self.positions.clone());
        let mut x = g.add_tiled(seq, pe)?;
        let mut attention = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let layer = LayerVars::bind(params, l);
            let (next, trace) = encoder_block(g, x, &layer, cfg, batch, rng.as_deref_mut())?;
            x = next;
            attention.push(trace);
        }
        let z_cls = g.last_rows(x, batch)?;
        let head = affine(g, z_cls, params.var("head.w"), params.var("head.b"))?;
        let logits = affine(g, head, params.var("classifier.w"), params.var("classifier.b"))?;
        Ok(ForwardPass { logits, attention })
    }

    /// Eval-mode logits for a batch of samples.
    pub fn logits(&self, params: &ParamStore, samples: &[&PatchSample]) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let input = g.constant(self.batch_tensor(samples)?);
        let out = self.forward(&mut g, &bound, input, None)?;
        Ok(g.value(out.logits).clone())
    }

    /// Eval-mode class predictions (1-based). Samples are cut into
    /// contiguous shards, one per thread, so the result does not depend on
    /// the thread count.
    pub fn predict(
        &self,
        params: &ParamStore,
        samples: &[PatchSample],
        threads: usize,
    ) -> Result<Vec<u16>, ModelError> {
        const CHUNK: usize = 64;
        let run = |part: &[PatchSample]| -> Result<Vec<u16>, ModelError> {
            let mut out = Vec::with_capacity(part.len());
            for chunk in part.chunks(CHUNK) {
                let refs: Vec<&PatchSample> = chunk.iter().collect();
                let logits = self.logits(params, &refs)?;
                out.extend((0..refs.len()).map(|r| argmax(logits.row(r)) as u16 + 1));
            }
            Ok(out)
        };
        let threads = threads.clamp(1, samples.len().div_ceil(CHUNK).max(1));
        if threads == 1 {
            return run(samples);
        }
        let shard = samples.len().div_ceil(threads);
        let results: Vec<Result<Vec<u16>, ModelError>> = std::thread::scope(|s| {
            let handles: Vec<_> = samples.chunks(shard).map(|part| s.spawn(move || run(part))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("prediction worker panicked"))
                .collect()
        });
        let mut out = Vec::with_capacity(samples.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        )
        .0
}
