//! The full tagger: encoder, emission + CRF layer, and (after phase 2) the
//! neighborhood parameters.

use crate::checkpoint;
use crate::crf::{emission_scores, viterbi_decode, CrfParams};
use crate::dataio::{Instance, SchemeKind, TagSet, Vocabulary};
use crate::digest::{from_hex, to_hex, Digest};
use crate::encoder::{encode_sequence, EncoderConfig, EncoderInput, EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::memory::{knn_query_batch, ActivationMemory, NeighborSet};
use crate::pnma::{neighborhood_repr, weighting_registry, NeighborhoodParams, NeighborhoodWeighting, DEFAULT_K};
use crate::rng::{self, stream};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub k: usize,
    pub weighting: String,
    pub scheme: SchemeKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            k: DEFAULT_K,
            weighting: "distinct".into(),
            scheme: SchemeKind::BioSpan,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<R = f32> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub tags: TagSet,
    pub encoder: EncoderParams<R>,
    pub crf: CrfParams<R>,
    pub neighborhood: Option<NeighborhoodParams<R>>,
    /// Training settings recorded alongside the parameters (`key`, `value`).
    pub echo: Vec<(String, String)>,
}

/// Per-token PNMA intermediates for one sentence.
#[derive(Clone, Debug)]
pub struct PnmaTrace<R> {
    pub h: Tensor<R>,
    pub neighbors: Vec<NeighborSet>,
    pub repr: Tensor<R>,
    pub weights: Vec<Vec<R>>,
}

impl<R: Real> Model<R> {
    pub fn new(mut config: ModelConfig, vocab: Vocabulary, tags: TagSet, seed: u64) -> Self {
        config.encoder.vocab_size = vocab.len();
        let mut init = rng::seeded(seed, stream::INIT);
        let encoder = EncoderParams::init(&config.encoder, &mut init);
        let crf = CrfParams::init(tags.len(), config.encoder.hidden, &mut init);
        Model {
            config,
            vocab,
            tags,
            encoder,
            crf,
            neighborhood: None,
            echo: Vec::new(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.config.encoder.hidden
    }

    pub fn input<'a>(&self, inst: &'a Instance) -> EncoderInput<'a> {
        EncoderInput {
            word_ids: inst.tokens.iter().map(|t| self.vocab.id(t)).collect(),
            predicate_bits: &inst.predicate_bits,
            external: inst.external.as_ref(),
        }
    }

    /// Final-layer activations in evaluation mode.
    pub fn encode(&self, inst: &Instance) -> Result<Tensor<R>> {
        Ok(encode_sequence(&self.input(inst), &self.encoder, Mode::Eval)?.h_last)
    }

    pub fn predict_base(&self, inst: &Instance) -> Result<Vec<u32>> {
        let h = self.encode(inst)?;
        viterbi_decode(&emission_scores(&h, &self.crf)?, &self.crf)
    }

    pub fn weighting(&self) -> Result<Box<dyn NeighborhoodWeighting<R>>> {
        weighting_registry::<R>().get(&self.config.weighting)
    }

    pub fn neighborhood_params(&self) -> Result<&NeighborhoodParams<R>> {
        self.neighborhood
            .as_ref()
            .ok_or_else(|| Error::Compatibility("model has no neighborhood parameters (run train-pnma)".into()))
    }

    /// Retrieval and aggregation for every token of `inst`.
    pub fn pnma_trace(&self, inst: &Instance, memory: &ActivationMemory) -> Result<PnmaTrace<R>> {
        let params = self.neighborhood_params()?;
        if memory.width() != self.hidden() {
            return Err(Error::Compatibility(format!(
                "memory width {} does not match model width {}",
                memory.width(),
                self.hidden()
            )));
        }
        let weighting = self.weighting()?;
        let h = self.encode(inst)?;
        let neighbors = knn_query_batch(&h, memory, params.k, &[])?;
        let mut repr = Tensor::zeros(h.shape());
        let mut weights = Vec::with_capacity(h.rows());
        for (t, ns) in neighbors.iter().enumerate() {
            let m = memory.neighbor_matrix::<R>(ns);
            let (nk, eta) = neighborhood_repr(h.row(t), &m, &ns.distances::<R>(), params, weighting.as_ref())?;
            repr.row_mut(t).copy_from_slice(&nk);
            weights.push(eta);
        }
        Ok(PnmaTrace {
            h,
            neighbors,
            repr,
            weights,
        })
    }

    /// Encode, retrieve, aggregate, and decode from `n_K` (not `h`).
    pub fn predict_pnma(&self, inst: &Instance, memory: &ActivationMemory) -> Result<Vec<u32>> {
        let trace = self.pnma_trace(inst, memory)?;
        viterbi_decode(&emission_scores(&trace.repr, &self.crf)?, &self.crf)
    }

    /// PNMA prediction when neighborhood parameters and a memory are both
    /// available, base prediction otherwise.
    pub fn predict(&self, inst: &Instance, memory: Option<&ActivationMemory>) -> Result<Vec<u32>> {
        match (memory, &self.neighborhood) {
            (Some(m), Some(_)) => self.predict_pnma(inst, m),
            _ => self.predict_base(inst),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor<R>)> {
        let mut out = self.encoder.named();
        out.extend(self.crf.named());
        if let Some(n) = &self.neighborhood {
            out.push(("pnma.neighbors".into(), &n.vectors));
        }
        out
    }

    /// Content digest of the serialized checkpoint (equals the file trailer).
    pub fn digest(&self) -> Digest {
        checkpoint::digest_of(self)
    }

    /// Digest of the checkpoint whose encoder produced this model's memory:
    /// the recorded phase-1 digest after phase 2, else the model's own.
    pub fn encoder_digest(&self) -> Digest {
        self.echo
            .iter()
            .find(|(k, _)| k == "base_digest")
            .and_then(|(_, v)| from_hex(v))
            .unwrap_or_else(|| self.digest())
    }

    /// Fails unless `memory` was built from this model's encoder.
    pub fn check_memory(&self, memory: &ActivationMemory) -> Result<()> {
        let want = self.encoder_digest();
        if memory.meta().source_digest != want {
            return Err(Error::Compatibility(format!(
                "memory was built from checkpoint {}, this model needs {}",
                to_hex(&memory.meta().source_digest),
                to_hex(&want)
            )));
        }
        if memory.width() != self.hidden() {
            return Err(Error::Compatibility(format!(
                "memory width {} does not match model width {}",
                memory.width(),
                self.hidden()
            )));
        }
        Ok(())
    }
}
