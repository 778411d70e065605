//! Partitioned checkpoint container.
//!
//! A checkpoint is one file: a magic line, the manifest length, a JSON
//! manifest (structured text for inspection), then a binary payload of
//! contiguous little-endian 32-bit floats — one block per stored group in
//! `backbone | heads | adapters` order, parameters first, then normalization
//! running statistics. The manifest records every entry's name, shape and
//! byte offset, and a SHA-256 hash of the payload that is verified on load.
//! A checkpoint without the backbone group declares the hash of the backbone
//! block it pairs with.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapters::AdapterMode;
use crate::nn::{DenseArray, ParamGroup};
use crate::policy::{BackboneConfig, PolicyModel, Profile};
use crate::vrp::Problem;
use crate::{Error, Result};

const MAGIC: &str = "CRCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntryManifest {
    pub name: String,
    /// "param" or "buffer" (normalization running statistics).
    pub kind: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupManifest {
    pub name: String,
    pub entries: Vec<EntryManifest>,
    pub byte_len: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub profile: String,
    pub problem: String,
    pub adapter_mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lora_rank: Option<usize>,
    pub config: BackboneConfig,
    pub groups: Vec<GroupManifest>,
    /// SHA-256 of the payload bytes.
    pub content_hash: String,
    /// SHA-256 of the backbone-group block this checkpoint pairs with (its
    /// own when the backbone is included).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backbone_hash: Option<String>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Manifest {
    pub fn adapter_mode(&self) -> Result<AdapterMode> {
        match self.adapter_mode.as_str() {
            "full" => Ok(AdapterMode::None),
            "inside" => Ok(AdapterMode::Inside),
            "side" => Ok(AdapterMode::Side),
            "lora" => {
                let rank = self.lora_rank.ok_or_else(|| {
                    Error::CorruptCheckpoint("lora checkpoint without a rank".into())
                })?;
                Ok(AdapterMode::Lora { rank })
            }
            other => Err(Error::CorruptCheckpoint(format!("unknown adapter mode {other}"))),
        }
    }

    pub fn problem(&self) -> Result<Problem> {
        Problem::from_name(&self.problem)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown problem {}", self.problem)))
    }

    pub fn profile(&self) -> Result<Profile> {
        Profile::from_name(&self.profile)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown profile {}", self.profile)))
    }
}

/// A checkpoint read into memory with its payload hash verified.
pub struct Checkpoint {
    pub manifest: Manifest,
    payload: Vec<u8>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn f64s_to_f32_bytes(values: &[f64], out: &mut Vec<u8>) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn f32_bytes_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect()
}

/// Serialize one partition group of a model (parameters then buffers, in
/// creation order) into payload bytes plus the matching manifest entries.
fn serialize_group(model: &PolicyModel, group: ParamGroup, base_offset: u64) -> (Vec<u8>, Vec<EntryManifest>) {
    let mut bytes = Vec::new();
    let mut entries = Vec::new();
    for p in model.store().params() {
        let p = p.borrow();
        if p.group != group {
            continue;
        }
        entries.push(EntryManifest {
            name: p.name.clone(),
            kind: "param".into(),
            shape: p.value.shape().to_vec(),
            offset: base_offset + bytes.len() as u64,
        });
        f64s_to_f32_bytes(p.value.data(), &mut bytes);
    }
    for b in model.store().buffers() {
        let b = b.borrow();
        if b.group != group {
            continue;
        }
        entries.push(EntryManifest {
            name: b.name.clone(),
            kind: "buffer".into(),
            shape: b.value.shape().to_vec(),
            offset: base_offset + bytes.len() as u64,
        });
        f64s_to_f32_bytes(b.value.data(), &mut bytes);
    }
    (bytes, entries)
}

/// Current bytes of one group, serialized exactly as a checkpoint stores them.
pub fn group_bytes(model: &PolicyModel, group: ParamGroup) -> Vec<u8> {
    serialize_group(model, group, 0).0
}

/// Write the listed groups of a model to `path`.
pub fn save_checkpoint(
    model: &PolicyModel,
    path: &Path,
    groups: &[ParamGroup],
    meta: BTreeMap<String, String>,
) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::invalid_argument("save_checkpoint needs at least one group"));
    }
    let mut payload = Vec::new();
    let mut group_manifests = Vec::new();
    for g in ParamGroup::ALL {
        if !groups.contains(&g) {
            continue;
        }
        let (bytes, entries) = serialize_group(model, g, payload.len() as u64);
        group_manifests.push(GroupManifest {
            name: g.name().into(),
            byte_len: bytes.len() as u64,
            entries,
        });
        payload.extend_from_slice(&bytes);
    }

    // Pairing hash. A checkpoint that stores its own backbone pairs with
    // itself. One that omits the backbone must carry the provenance hash of
    // the checkpoint its frozen backbone was loaded from; a trainable
    // backbone has diverged from any source, so storing it is mandatory.
    let backbone_hash = if groups.contains(&ParamGroup::Backbone) {
        Some(sha256_hex(&group_bytes(model, ParamGroup::Backbone)))
    } else {
        if model.partition().backbone.trainable {
            return Err(Error::invalid_argument(
                "model's backbone is trainable; include the backbone group when saving",
            ));
        }
        Some(model.backbone_source_hash.clone().ok_or_else(|| {
            Error::invalid_argument(
                "model has no backbone provenance; include the backbone group when saving",
            )
        })?)
    };

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        profile: model.profile.name().into(),
        problem: model.problem.name().into(),
        adapter_mode: model.adapter_mode.name().into(),
        lora_rank: match model.adapter_mode {
            AdapterMode::Lora { rank } => Some(rank),
            _ => None,
        },
        config: model.config,
        groups: group_manifests,
        content_hash: sha256_hex(&payload),
        backbone_hash,
        meta,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::invalid_state(format!("manifest serialization: {e}")))?;

    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{MAGIC}")?;
    writeln!(file, "{}", manifest_json.len())?;
    file.write_all(manifest_json.as_bytes())?;
    file.write_all(b"\n")?;
    file.write_all(&payload)?;
    Ok(())
}

impl Checkpoint {
    pub fn read(path: &Path) -> Result<Checkpoint> {
        let mut raw = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut raw)?;
        let fail = |msg: &str| Error::CorruptCheckpoint(format!("{}: {msg}", path.display()));

        let magic_end = raw
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| fail("missing header"))?;
        if &raw[..magic_end] != MAGIC.as_bytes() {
            return Err(fail("bad magic"));
        }
        let len_end = raw[magic_end + 1..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| p + magic_end + 1)
            .ok_or_else(|| fail("missing manifest length"))?;
        let len: usize = std::str::from_utf8(&raw[magic_end + 1..len_end])
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| fail("bad manifest length"))?;
        let manifest_start = len_end + 1;
        let manifest_end = manifest_start + len;
        if raw.len() < manifest_end + 1 {
            return Err(fail("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&raw[manifest_start..manifest_end])
            .map_err(|e| fail(&format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::CheckpointIncompatible(format!(
                "format version {} (supported: {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let payload = raw[manifest_end + 1..].to_vec();
        let expect: u64 = manifest.groups.iter().map(|g| g.byte_len).sum();
        if payload.len() as u64 != expect {
            return Err(fail(&format!("payload is {} bytes, manifest wants {expect}", payload.len())));
        }
        if sha256_hex(&payload) != manifest.content_hash {
            return Err(fail("payload hash mismatch"));
        }
        Ok(Checkpoint { manifest, payload })
    }

    pub fn has_group(&self, group: ParamGroup) -> bool {
        self.manifest.groups.iter().any(|g| g.name == group.name())
    }

    /// Look an entry up by name across every stored group.
    pub fn entry(&self, name: &str) -> Option<&EntryManifest> {
        self.manifest
            .groups
            .iter()
            .flat_map(|g| g.entries.iter())
            .find(|e| e.name == name)
    }

    pub fn entry_values(&self, entry: &EntryManifest) -> Result<DenseArray> {
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + numel * 4;
        if end > self.payload.len() {
            return Err(Error::CorruptCheckpoint(format!("entry {} overruns payload", entry.name)));
        }
        DenseArray::from_vec(&entry.shape, f32_bytes_to_f64s(&self.payload[start..end]))
    }

    /// Bytes of one stored group block.
    pub fn group_block(&self, group: ParamGroup) -> Option<&[u8]> {
        let gm = self.manifest.groups.iter().find(|g| g.name == group.name())?;
        let start = gm.entries.first().map(|e| e.offset).unwrap_or(0) as usize;
        Some(&self.payload[start..start + gm.byte_len as usize])
    }

    /// Hash of the stored backbone block, when present.
    pub fn backbone_block_hash(&self) -> Option<String> {
        self.group_block(ParamGroup::Backbone).map(sha256_hex)
    }

    fn config_compatible(&self, config: &BackboneConfig) -> bool {
        let c = &self.manifest.config;
        c.d_model == config.d_model
            && c.n_heads == config.n_heads
            && c.n_encoder_layers == config.n_encoder_layers
            && c.ff_hidden == config.ff_hidden
    }
}

/// Fill the listed groups of `model` from a checkpoint, strictly: every
/// parameter and buffer of those groups must be present with its exact shape.
pub fn load_into(model: &PolicyModel, ckpt: &Checkpoint, groups: &[ParamGroup]) -> Result<()> {
    if !ckpt.config_compatible(&model.config) {
        return Err(Error::CheckpointIncompatible(format!(
            "checkpoint config {:?} does not match model config {:?}",
            ckpt.manifest.config, model.config
        )));
    }
    for p in model.store().params() {
        let mut p = p.borrow_mut();
        if !groups.contains(&p.group) {
            continue;
        }
        let entry = ckpt
            .entry(&p.name)
            .ok_or_else(|| Error::CheckpointIncompatible(format!("missing parameter {}", p.name)))?;
        if entry.shape != p.value.shape() {
            return Err(Error::CheckpointIncompatible(format!(
                "parameter {} has shape {:?}, checkpoint stores {:?}",
                p.name,
                p.value.shape(),
                entry.shape
            )));
        }
        p.value = ckpt.entry_values(entry)?;
    }
    for b in model.store().buffers() {
        let mut b = b.borrow_mut();
        if !groups.contains(&b.group) {
            continue;
        }
        let entry = ckpt
            .entry(&b.name)
            .ok_or_else(|| Error::CheckpointIncompatible(format!("missing buffer {}", b.name)))?;
        b.value = ckpt.entry_values(entry)?;
    }
    Ok(())
}

/// Assemble a downstream model around a pretrained backbone checkpoint.
/// Backbone parameters must all be covered; decoder weights are warm-started
/// by name where the checkpoint has them; problem heads and adapters keep
/// their fresh initialization.
pub fn assemble_with_backbone(
    problem: Problem,
    ckpt: &Checkpoint,
    adapter_mode: AdapterMode,
    seed: u64,
) -> Result<PolicyModel> {
    let profile = ckpt.manifest.profile()?;
    let config = ckpt.manifest.config;
    let mut model = PolicyModel::build(problem, profile, config, adapter_mode, seed)?;
    for p in model.store().params() {
        let mut p = p.borrow_mut();
        match ckpt.entry(&p.name) {
            Some(entry) => {
                if entry.shape != p.value.shape() {
                    return Err(Error::CheckpointIncompatible(format!(
                        "parameter {} has shape {:?}, checkpoint stores {:?}",
                        p.name,
                        p.value.shape(),
                        entry.shape
                    )));
                }
                p.value = ckpt.entry_values(entry)?;
            }
            None => {
                if p.group == ParamGroup::Backbone {
                    return Err(Error::CheckpointIncompatible(format!(
                        "backbone parameter {} missing from checkpoint",
                        p.name
                    )));
                }
            }
        }
    }
    for b in model.store().buffers() {
        let mut b = b.borrow_mut();
        if let Some(entry) = ckpt.entry(&b.name) {
            b.value = ckpt.entry_values(entry)?;
        } else if b.group == ParamGroup::Backbone {
            return Err(Error::CheckpointIncompatible(format!(
                "backbone buffer {} missing from checkpoint",
                b.name
            )));
        }
    }
    model.backbone_source_hash = ckpt.backbone_block_hash();
    Ok(model)
}

/// Reconstruct a model from a checkpoint file. Checkpoints that store only
/// heads and adapters require the paired backbone checkpoint, verified by
/// hash.
pub fn load_model(path: &Path, backbone_path: Option<&Path>) -> Result<PolicyModel> {
    let ckpt = Checkpoint::read(path)?;
    let problem = ckpt.manifest.problem()?;
    let profile = ckpt.manifest.profile()?;
    let adapter_mode = ckpt.manifest.adapter_mode()?;
    let model = PolicyModel::build(problem, profile, ckpt.manifest.config, adapter_mode, 0)?;

    if ckpt.has_group(ParamGroup::Backbone) {
        load_into(&model, &ckpt, &ParamGroup::ALL)?;
        let mut model = model;
        model.backbone_source_hash = ckpt.backbone_block_hash();
        return Ok(model);
    }

    let backbone_path = backbone_path.ok_or_else(|| {
        Error::CheckpointIncompatible(format!(
            "{} stores only {}; supply the paired backbone checkpoint",
            path.display(),
            ckpt.manifest.groups.iter().map(|g| g.name.as_str()).collect::<Vec<_>>().join("+"),
        ))
    })?;
    let backbone = Checkpoint::read(backbone_path)?;
    let declared = ckpt.manifest.backbone_hash.clone().ok_or_else(|| {
        Error::CorruptCheckpoint("partial checkpoint without a paired backbone hash".into())
    })?;
    let offered = backbone.backbone_block_hash().ok_or_else(|| {
        Error::CheckpointIncompatible("backbone checkpoint stores no backbone group".into())
    })?;
    if declared != offered {
        return Err(Error::CheckpointIncompatible(
            "backbone checkpoint does not match the hash this checkpoint was trained against".into(),
        ));
    }
    load_into(&model, &backbone, &[ParamGroup::Backbone])?;
    load_into(&model, &ckpt, &[ParamGroup::Heads, ParamGroup::Adapters])?;
    let mut model = model;
    model.backbone_source_hash = Some(declared);
    Ok(model)
}
