//! Triple ingestion, id dictionaries, filter indices and relation categories.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{KgeError, Result};

/// Relation categorization threshold used by convention.
pub const DEFAULT_ETA: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: u32,
    pub relation: u32,
    pub tail: u32,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Self { head, relation, tail }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl FromStr for Split {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(KgeError::invalid(format!(
                "unknown split `{s}`; expected train, valid or test"
            ))),
        }
    }
}

/// Bijective name ↔ id dictionary.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i as u32).is_some() {
                return Err(KgeError::InvalidDataset(format!("duplicate name `{n}` in dictionary")));
            }
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn get_or_insert(&mut self, name: &str) -> u32 {
        if let Some(id) = self.index.get(name) {
            return *id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    /// Writes `id<TAB>name` lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, n) in self.names.iter().enumerate() {
            out.push_str(&format!("{i}\t{n}\n"));
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Reads `id<TAB>name` lines; ids must cover `0..n` exactly once.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut slots: Vec<Option<String>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| KgeError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message,
            };
            let (id, name) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected `id<TAB>name`".into()))?;
            let id: usize = id
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("invalid id `{id}`")))?;
            if id >= slots.len() {
                slots.resize(id + 1, None);
            }
            if slots[id].replace(name.to_string()).is_some() {
                return Err(parse_err(format!("id {id} assigned twice")));
            }
        }
        let names = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| {
                    KgeError::InvalidDataset(format!("{}: id {i} missing", path.display()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_names(names)
    }
}

/// Counts gathered while loading; surfaced as warnings.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub entities_unseen_in_train: usize,
    pub relations_unseen_in_train: usize,
    pub split_overlaps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripleStore {
    pub entities: Vocabulary,
    pub relations: Vocabulary,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub report: LoadReport,
}

impl TripleStore {
    /// Builds a store from id triples, naming entities `e{i}` and relations `r{j}`.
    pub fn from_ids(
        entity_count: usize,
        relation_count: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let entities = Vocabulary::from_names((0..entity_count).map(|i| format!("e{i}")).collect())?;
        let relations =
            Vocabulary::from_names((0..relation_count).map(|i| format!("r{i}")).collect())?;
        Self::from_parts(entities, relations, train, valid, test)
    }

    pub fn from_parts(
        entities: Vocabulary,
        relations: Vocabulary,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self> {
        let (n, m) = (entities.len() as u32, relations.len() as u32);
        for t in train.iter().chain(&valid).chain(&test) {
            if t.head >= n || t.tail >= n || t.relation >= m {
                return Err(KgeError::InvalidDataset(format!("triple {t:?} out of range")));
            }
        }
        let mut store = Self {
            entities,
            relations,
            train,
            valid,
            test,
            report: LoadReport::default(),
        };
        store.report = store.compute_report();
        Ok(store)
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn all_triples(&self) -> impl Iterator<Item = &Triple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    fn compute_report(&self) -> LoadReport {
        let mut seen_e = vec![false; self.entity_count()];
        let mut seen_r = vec![false; self.relation_count()];
        for t in &self.train {
            seen_e[t.head as usize] = true;
            seen_e[t.tail as usize] = true;
            seen_r[t.relation as usize] = true;
        }
        let train: HashSet<&Triple> = self.train.iter().collect();
        let valid: HashSet<&Triple> = self.valid.iter().collect();
        let overlaps = self
            .valid
            .iter()
            .filter(|t| train.contains(t))
            .count()
            + self
                .test
                .iter()
                .filter(|t| train.contains(t) || valid.contains(t))
                .count();
        LoadReport {
            entities_unseen_in_train: seen_e.iter().filter(|s| !**s).count(),
            relations_unseen_in_train: seen_r.iter().filter(|s| !**s).count(),
            split_overlaps: overlaps,
        }
    }

    /// SHA-256 over dictionaries and all splits, hex encoded. Identifies the
    /// id assignment a checkpoint was trained against.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (tag, vocab) in [("entities", &self.entities), ("relations", &self.relations)] {
            h.update(tag.as_bytes());
            h.update((vocab.len() as u64).to_le_bytes());
            for n in vocab.names() {
                h.update(n.as_bytes());
                h.update([0u8]);
            }
        }
        for (tag, split) in [("train", &self.train), ("valid", &self.valid), ("test", &self.test)] {
            h.update(tag.as_bytes());
            h.update((split.len() as u64).to_le_bytes());
            for t in split {
                h.update(t.head.to_le_bytes());
                h.update(t.relation.to_le_bytes());
                h.update(t.tail.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Writes `entities.dict`, `relations.dict` and the three split files.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.entities.save(&dir.join("entities.dict"))?;
        self.relations.save(&dir.join("relations.dict"))?;
        for (file, split) in [("train.txt", &self.train), ("valid.txt", &self.valid), ("test.txt", &self.test)] {
            let mut out = String::new();
            for t in split {
                out.push_str(&format!(
                    "{}\t{}\t{}\n",
                    self.entities.name(t.head),
                    self.relations.name(t.relation),
                    self.entities.name(t.tail)
                ));
            }
            fs::write(dir.join(file), out)?;
        }
        Ok(())
    }
}

fn read_split(
    path: &Path,
    entities: &mut Vocabulary,
    relations: &mut Vocabulary,
    fixed: bool,
) -> Result<Vec<Triple>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| KgeError::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let lookup = |vocab: &mut Vocabulary, name: &str, kind: &str| -> Result<u32> {
            if fixed {
                vocab
                    .id(name)
                    .ok_or_else(|| parse_err(format!("{kind} `{name}` not in dictionary")))
            } else {
                Ok(vocab.get_or_insert(name))
            }
        };
        let head = lookup(entities, fields[0], "entity")?;
        let relation = lookup(relations, fields[1], "relation")?;
        let tail = lookup(entities, fields[2], "entity")?;
        out.push(Triple { head, relation, tail });
    }
    Ok(out)
}

/// Loads `train.txt`, `valid.txt` and `test.txt` from `dir`. Ids come from
/// `entities.dict` / `relations.dict` when both exist, else from first
/// appearance over train, valid, test.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<TripleStore> {
    let dir = dir.as_ref();
    let path = |f: &str| -> PathBuf { dir.join(f) };
    for f in ["train.txt", "valid.txt", "test.txt"] {
        if !path(f).is_file() {
            return Err(KgeError::InvalidDataset(format!(
                "{} is missing",
                path(f).display()
            )));
        }
    }
    let fixed = path("entities.dict").is_file() && path("relations.dict").is_file();
    let (mut entities, mut relations) = if fixed {
        (
            Vocabulary::load(&path("entities.dict"))?,
            Vocabulary::load(&path("relations.dict"))?,
        )
    } else {
        (Vocabulary::default(), Vocabulary::default())
    };
    let train = read_split(&path("train.txt"), &mut entities, &mut relations, fixed)?;
    if train.is_empty() {
        return Err(KgeError::InvalidDataset(format!(
            "{} contains no triples",
            path("train.txt").display()
        )));
    }
    let valid = read_split(&path("valid.txt"), &mut entities, &mut relations, fixed)?;
    let test = read_split(&path("test.txt"), &mut entities, &mut relations, fixed)?;
    let store = TripleStore::from_parts(entities, relations, train, valid, test)?;
    let r = &store.report;
    if r.entities_unseen_in_train > 0 || r.relations_unseen_in_train > 0 {
        log::warn!(
            "{}: {} entities and {} relations never appear in train",
            dir.display(),
            r.entities_unseen_in_train,
            r.relations_unseen_in_train
        );
    }
    if r.split_overlaps > 0 {
        log::warn!("{}: {} triples repeat across splits", dir.display(), r.split_overlaps);
    }
    log::info!(
        "{}: {} entities, {} relations, {}/{}/{} triples",
        dir.display(),
        store.entity_count(),
        store.relation_count(),
        store.train.len(),
        store.valid.len(),
        store.test.len()
    );
    Ok(store)
}

/// Known-true completions over train ∪ valid ∪ test.
#[derive(Clone, Debug, Default)]
pub struct FilterIndex {
    tails: HashMap<(u32, u32), Vec<u32>>,
    heads: HashMap<(u32, u32), Vec<u32>>,
}

impl FilterIndex {
    pub fn build(store: &TripleStore) -> Self {
        Self::from_triples(store.all_triples())
    }

    pub fn from_triples<'a>(triples: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut idx = Self::default();
        for t in triples {
            idx.tails.entry((t.head, t.relation)).or_default().push(t.tail);
            idx.heads.entry((t.relation, t.tail)).or_default().push(t.head);
        }
        for v in idx.tails.values_mut().chain(idx.heads.values_mut()) {
            v.sort_unstable();
            v.dedup();
        }
        idx
    }

    /// True tails of `(head, relation, ?)`, sorted.
    pub fn tails(&self, head: u32, relation: u32) -> &[u32] {
        self.tails.get(&(head, relation)).map_or(&[], Vec::as_slice)
    }

    /// True heads of `(?, relation, tail)`, sorted.
    pub fn heads(&self, relation: u32, tail: u32) -> &[u32] {
        self.heads.get(&(relation, tail)).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.tails(t.head, t.relation).binary_search(&t.tail).is_ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RelationType {
    #[serde(rename = "1-to-1")]
    OneToOne,
    #[serde(rename = "1-to-N")]
    OneToN,
    #[serde(rename = "N-to-1")]
    NToOne,
    #[serde(rename = "N-to-N")]
    NToN,
}

impl RelationType {
    pub const ALL: [RelationType; 4] = [
        RelationType::OneToOne,
        RelationType::OneToN,
        RelationType::NToOne,
        RelationType::NToN,
    ];

    /// Four-way rule on heads-per-tail and tails-per-head against `eta`.
    pub fn classify(hpt: f64, tph: f64, eta: f64) -> Self {
        match (hpt < eta, tph < eta) {
            (true, true) => RelationType::OneToOne,
            (true, false) => RelationType::OneToN,
            (false, true) => RelationType::NToOne,
            (false, false) => RelationType::NToN,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RelationType::OneToOne => "1-to-1",
            RelationType::OneToN => "1-to-N",
            RelationType::NToOne => "N-to-1",
            RelationType::NToN => "N-to-N",
        }
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelationCategory {
    pub relation: u32,
    pub hpt: f64,
    pub tph: f64,
    pub category: RelationType,
    /// False when the relation never occurs in the training split.
    pub in_training: bool,
}

/// Categorizes every relation from training-split statistics. `hpt` is the
/// mean number of distinct heads per distinct tail, `tph` the converse.
pub fn categorize_relations(store: &TripleStore, eta: f64) -> Result<Vec<RelationCategory>> {
    if !(eta >= 0.0) {
        return Err(KgeError::invalid(format!("eta must be non-negative, got {eta}")));
    }
    let m = store.relation_count();
    let mut heads_of: Vec<HashMap<u32, HashSet<u32>>> = vec![HashMap::new(); m];
    let mut tails_of: Vec<HashMap<u32, HashSet<u32>>> = vec![HashMap::new(); m];
    for t in &store.train {
        let r = t.relation as usize;
        heads_of[r].entry(t.tail).or_default().insert(t.head);
        tails_of[r].entry(t.head).or_default().insert(t.tail);
    }
    let mean = |m: &HashMap<u32, HashSet<u32>>| -> f64 {
        if m.is_empty() {
            0.0
        } else {
            m.values().map(|s| s.len()).sum::<usize>() as f64 / m.len() as f64
        }
    };
    Ok((0..m)
        .map(|r| {
            let in_training = !heads_of[r].is_empty();
            let (hpt, tph) = (mean(&heads_of[r]), mean(&tails_of[r]));
            let category = if in_training {
                RelationType::classify(hpt, tph, eta)
            } else {
                RelationType::OneToOne
            };
            RelationCategory {
                relation: r as u32,
                hpt,
                tph,
                category,
                in_training,
            }
        })
        .collect())
}

/// Fraction of training triples whose relation is not 1-to-1.
pub fn complex_triple_fraction(store: &TripleStore, categories: &[RelationCategory]) -> f64 {
    if store.train.is_empty() {
        return 0.0;
    }
    let complex = store
        .train
        .iter()
        .filter(|t| categories[t.relation as usize].category != RelationType::OneToOne)
        .count();
    complex as f64 / store.train.len() as f64
}
