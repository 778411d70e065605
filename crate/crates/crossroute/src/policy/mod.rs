//! The attention construction policy: backbone encoder/decoder for the basic
//! problem, problem-specific head modules for the richer variants, and model
//! assembly from pretrained checkpoints.

mod config;
mod forward;
mod model;
mod rollout;

use std::path::Path;

pub use config::{BackboneConfig, Profile};
pub use forward::{DecoderCache, Encodings, StepInputs};
pub use model::{Decoder, EncoderLayer, GroupCounts, NormSite, ParamPartition, PolicyModel, ProblemHeads};
pub use rollout::{rollout_batch, ConstructionState, DecodeMode, Rollout, RolloutOptions};

use crate::adapters::AdapterMode;
use crate::nn::{DenseArray, NormMode, Tape};
use crate::vrp::{Instance, Problem, Tour};
use crate::Result;
use rand_chacha::ChaCha8Rng;

/// Build a freshly initialized model (training from scratch, or the
/// pre-training target itself).
pub fn assemble_fresh(
    problem: Problem,
    profile: Profile,
    config: BackboneConfig,
    adapter_mode: AdapterMode,
    seed: u64,
) -> Result<PolicyModel> {
    PolicyModel::build(problem, profile, config, adapter_mode, seed)
}

/// Assemble a downstream model around a pretrained backbone checkpoint:
/// backbone weights are copied verbatim, problem-specific modules initialize
/// uniformly in (-1/sqrt(d), 1/sqrt(d)), adapters attach per `adapter_mode`,
/// and the partition's trainable flags are set accordingly.
pub fn assemble_from_backbone(
    problem: Problem,
    backbone_path: &Path,
    adapter_mode: AdapterMode,
    seed: u64,
) -> Result<PolicyModel> {
    let ckpt = crate::io::Checkpoint::read(backbone_path)?;
    crate::io::assemble_with_backbone(problem, &ckpt, adapter_mode, seed)
}

/// An instance encoded once for repeated decoding. Owns its tape; decode
/// steps are truncated away after each call.
pub struct EncodedInstance<'a> {
    tape: Tape,
    cache: DecoderCache,
    node_emb_value: DenseArray,
    graph_emb_value: DenseArray,
    pub instance: &'a Instance,
    mark: usize,
}

impl<'a> EncodedInstance<'a> {
    /// `[n_nodes, d]` final node embeddings.
    pub fn node_embeddings(&self) -> DenseArray {
        self.node_emb_value.clone()
    }

    /// `[d]` graph embedding (mean of the node embeddings).
    pub fn graph_embedding(&self) -> DenseArray {
        self.graph_emb_value.clone()
    }
}

/// Initial (pre-encoder) node embeddings of one instance, `[n_nodes, d]`.
pub fn initial_embeddings(model: &PolicyModel, instance: &Instance) -> Result<DenseArray> {
    let tape = Tape::new();
    let h0 = model.initial_embeddings_batch(&tape, &[instance])?;
    tape.value_of(h0).reshaped(&[instance.n_nodes(), model.config.d_model])
}

/// Encode one instance in evaluation mode.
pub fn encode<'a>(model: &PolicyModel, instance: &'a Instance) -> Result<EncodedInstance<'a>> {
    let tape = Tape::new();
    let enc = model.encode_batch(&tape, &[instance], NormMode::Eval)?;
    let d = model.config.d_model;
    let n = instance.n_nodes();
    let node_emb_value = tape.value_of(enc.node_emb).reshaped(&[n, d])?;
    let graph_emb_value = tape.value_of(enc.graph_emb).reshaped(&[d])?;
    let cache = model.decoder_cache(&tape, &enc)?;
    let mark = tape.mark();
    Ok(EncodedInstance { tape, cache, node_emb_value, graph_emb_value, instance, mark })
}

/// Probabilities over the next node for one construction state.
pub fn decode_step(
    model: &PolicyModel,
    encoded: &EncodedInstance,
    state: &ConstructionState,
) -> Result<Vec<f64>> {
    let allowed = state.allowed();
    let last = state.current().map(|c| [c]);
    let first = state.first().map(|f| [f]);
    let step = StepInputs {
        rows: 1,
        last: last.as_ref().map(|a| a.as_slice()),
        first: first.as_ref().map(|a| a.as_slice()),
        dynamic: state.dynamic_feature().map(|v| vec![v]),
        allowed: &allowed,
    };
    let probs = model.decode_step_batch(&encoded.tape, &encoded.cache, &step)?;
    let out = encoded.tape.value_of(probs).into_data();
    encoded.tape.truncate(encoded.mark);
    Ok(out)
}

/// Construct one tour, returning it with the total log-probability of the
/// chosen actions. Greedy decoding ignores the rng and is deterministic.
pub fn construct(
    model: &PolicyModel,
    instance: &Instance,
    mode: DecodeMode,
    rng: &mut ChaCha8Rng,
) -> Result<(Tour, f64)> {
    let tape = Tape::new();
    let opts = RolloutOptions {
        mode,
        rng: Some(rng),
        record: false,
        forced_first: None,
        teacher_actions: None,
        norm_mode: NormMode::Eval,
    };
    let mut rollout = rollout_batch(model, &tape, &[instance], 1, opts)?;
    Ok((rollout.tours.remove(0), rollout.log_probs[0]))
}
