//! Binary model container: the 8-byte magic `CMPE0001`, a little-endian
//! `u64` header length, the UTF-8 JSON header, then little-endian `f32`
//! arrays in the order the header lists them.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::dataset::{TripleStore, Vocabulary};
use crate::error::{KgeError, Result};
use crate::model::{EntityTable, KgeModel};
use crate::scalar::Scalar;
use crate::scoring::{CompoundSpec, RelationParams};
use crate::transform::TransformParams;

pub const MAGIC: [u8; 8] = *b"CMPE0001";
pub const FORMAT_VERSION: u32 = 1;

/// Serialized ChaCha8 position: seed, stream and word position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// `u128` word position as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bytes = hex::decode(&self.seed).map_err(|e| KgeError::Checkpoint(format!("rng seed: {e}")))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| KgeError::Checkpoint("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|e| KgeError::Checkpoint(format!("rng word position: {e}")))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayDescriptor {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub spec: CompoundSpec,
    pub shared_rotation: bool,
    pub entity_count: usize,
    pub relation_count: usize,
    pub dim: usize,
    pub step: u64,
    /// Content hash of the dataset the ids refer to.
    pub dataset_hash: String,
    pub rng: Option<RngState>,
    pub entity_names: Vec<String>,
    pub relation_names: Vec<String>,
    /// Resolved run configuration, echoed verbatim.
    pub config: Option<serde_json::Value>,
    pub arrays: Vec<ArrayDescriptor>,
}

/// Model plus everything needed to resume or evaluate it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: KgeModel<f32>,
}

const RELATION_ARRAYS: [&str; 6] = [
    "relations.head.translation",
    "relations.head.angles",
    "relations.head.scale",
    "relations.tail.translation",
    "relations.tail.angles",
    "relations.tail.scale",
];

fn side_arrays(p: &TransformParams<f32>) -> [&Vec<f32>; 3] {
    [&p.translation, &p.angles, &p.scale]
}

impl Checkpoint {
    /// Snapshot of `model` (stored as `f32`) trained against `store`.
    pub fn new<T: Scalar>(
        model: &KgeModel<T>,
        store: &TripleStore,
        step: u64,
        rng: Option<&ChaCha8Rng>,
        config: Option<serde_json::Value>,
    ) -> Result<Self> {
        if model.entity_count() != store.entity_count() || model.relation_count() != store.relation_count() {
            return Err(KgeError::invalid(format!(
                "model has {} entities and {} relations, dataset has {} and {}",
                model.entity_count(),
                model.relation_count(),
                store.entity_count(),
                store.relation_count()
            )));
        }
        let model: KgeModel<f32> = model.cast();
        let arrays = Self::describe(&model);
        Ok(Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                spec: model.spec.clone(),
                shared_rotation: model.shared_rotation(),
                entity_count: model.entity_count(),
                relation_count: model.relation_count(),
                dim: model.dim(),
                step,
                dataset_hash: store.content_hash(),
                rng: rng.map(RngState::capture),
                entity_names: store.entities.names().to_vec(),
                relation_names: store.relations.names().to_vec(),
                config,
                arrays,
            },
            model,
        })
    }

    fn describe(model: &KgeModel<f32>) -> Vec<ArrayDescriptor> {
        let mut out = vec![ArrayDescriptor {
            name: "entities".into(),
            len: model.entities.as_slice().len(),
        }];
        let m = model.relation_count();
        let lens = model.relations.first().map_or([0; 6], |r| {
            let [a, b, c] = side_arrays(&r.head).map(|v| v.len());
            let [d, e, f] = side_arrays(&r.tail).map(|v| v.len());
            [a, b, c, d, e, f]
        });
        for (name, len) in RELATION_ARRAYS.iter().zip(lens) {
            out.push(ArrayDescriptor {
                name: name.to_string(),
                len: len * m,
            });
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.model.entities.as_slice().len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut put = |v: &[f32]| {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        put(self.model.entities.as_slice());
        for k in 0..6 {
            for r in &self.model.relations {
                let side = if k < 3 { &r.head } else { &r.tail };
                put(side_arrays(side)[k % 3]);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        Ok(())
    }

    fn split_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
        if bytes.len() < 8 {
            return Err(KgeError::Checkpoint("file shorter than the magic".into()));
        }
        let found: [u8; 8] = bytes[..8].try_into().expect("8 bytes");
        if found != MAGIC {
            return Err(KgeError::BadMagic { found, expected: MAGIC });
        }
        if bytes.len() < 16 {
            return Err(KgeError::Checkpoint("missing header length".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        if bytes.len() - 16 < len {
            return Err(KgeError::Checkpoint(format!("header declares {len} bytes, file is shorter")));
        }
        let value: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len])?;
        let version = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != FORMAT_VERSION {
            return Err(KgeError::UnsupportedVersion(version));
        }
        let header: CheckpointHeader = serde_json::from_value(value)?;
        Ok((header, &bytes[16 + len..]))
    }

    /// Reads only the JSON header.
    pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
        Ok(Self::split_header(&fs::read(path)?)?.0)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, mut body) = Self::split_header(bytes)?;
        header.spec.validate()?;
        let expected = {
            let probe = KgeModel::<f32> {
                spec: header.spec.clone(),
                entities: EntityTable::zeros(header.entity_count, header.dim),
                relations: vec![RelationParams::identity(header.dim, header.shared_rotation); header.relation_count],
            };
            Self::describe(&probe)
        };
        if expected != header.arrays {
            return Err(KgeError::Checkpoint(format!(
                "array table {:?} does not match the declared shapes {:?}",
                header.arrays, expected
            )));
        }
        let mut arrays = Vec::with_capacity(expected.len());
        for d in &header.arrays {
            let nbytes = d.len * 4;
            if body.len() < nbytes {
                return Err(KgeError::Truncated {
                    array: d.name.clone(),
                    expected: d.len,
                });
            }
            let (chunk, rest) = body.split_at(nbytes);
            arrays.push(
                chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect::<Vec<f32>>(),
            );
            body = rest;
        }
        if !body.is_empty() {
            return Err(KgeError::Checkpoint(format!("{} trailing bytes", body.len())));
        }
        let mut arrays = arrays.into_iter();
        let entities = EntityTable::from_vec(header.dim, arrays.next().expect("entities"))?;
        let rel: Vec<Vec<f32>> = arrays.collect();
        let m = header.relation_count;
        let piece = |k: usize, r: usize| -> Vec<f32> {
            let per = rel[k].len() / m.max(1);
            rel[k][r * per..(r + 1) * per].to_vec()
        };
        let relations = (0..m)
            .map(|r| RelationParams {
                head: TransformParams {
                    translation: piece(0, r),
                    angles: piece(1, r),
                    scale: piece(2, r),
                },
                tail: TransformParams {
                    translation: piece(3, r),
                    angles: piece(4, r),
                    scale: piece(5, r),
                },
                shared_rotation: header.shared_rotation,
            })
            .collect();
        let model = KgeModel {
            spec: header.spec.clone(),
            entities,
            relations,
        };
        Ok(Self { header, model })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Refuses a dataset whose content hash differs from the one trained on.
    pub fn verify_dataset(&self, store: &TripleStore) -> Result<()> {
        let hash = store.content_hash();
        if hash != self.header.dataset_hash {
            return Err(KgeError::HashMismatch {
                checkpoint: self.header.dataset_hash.clone(),
                dataset: hash,
            });
        }
        Ok(())
    }

    pub fn rng(&self) -> Result<Option<ChaCha8Rng>> {
        self.header.rng.as_ref().map(RngState::restore).transpose()
    }

    pub fn entity_vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_names(self.header.entity_names.clone())
    }

    pub fn relation_vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::from_names(self.header.relation_names.clone())
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    checkpoint.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
