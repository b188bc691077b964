//! Filtered link-prediction ranking, MRR and Hits@k.

use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FilterIndex, RelationCategory, RelationType, Split, Triple, TripleStore};
use crate::error::{KgeError, Result};
use crate::model::KgeModel;
use crate::scalar::Scalar;
use crate::scoring::distance;

pub const DEFAULT_CHUNK_SIZE: usize = 1 << 16;

pub const TIE_POLICY: &str = "mean: rank = 1 + #better + floor(#tied / 2)";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "head")]
    PredictHead,
    #[serde(rename = "tail")]
    PredictTail,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::PredictHead, Direction::PredictTail];
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::PredictHead => "predicting head",
            Direction::PredictTail => "predicting tail",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    /// Candidates scored per chunk; bounds scratch memory.
    pub chunk_size: usize,
    pub parallel: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            parallel: true,
        }
    }
}

/// Rank of the true entity among all candidates except those in `exclude`
/// (sorted ids; the truth itself is never excluded).
pub fn rank_excluding<T: Scalar>(
    model: &KgeModel<T>,
    triple: Triple,
    direction: Direction,
    exclude: &[u32],
    chunk_size: usize,
) -> usize {
    let n = model.entity_count() as u32;
    let chunk_size = chunk_size.clamp(1, (n as usize).max(1)) as u32;
    let norm = model.spec.norm;
    let (query, truth) = match direction {
        Direction::PredictTail => (model.transform_head(triple.head, triple.relation), triple.tail),
        Direction::PredictHead => (model.transform_tail(triple.tail, triple.relation), triple.head),
    };
    let candidate = |c: u32| match direction {
        Direction::PredictTail => model.transform_tail(c, triple.relation),
        Direction::PredictHead => model.transform_head(c, triple.relation),
    };
    let score_of = |c: u32| {
        let v = candidate(c);
        match direction {
            Direction::PredictTail => distance(&query, &v, norm),
            Direction::PredictHead => distance(&v, &query, norm),
        }
    };
    let truth_score = score_of(truth);

    let mut better = 0usize;
    let mut tied = 0usize;
    let mut scores: Vec<T> = Vec::with_capacity(chunk_size as usize);
    let mut excl = exclude.iter().peekable();
    let mut start = 0u32;
    while start < n {
        let end = (start + chunk_size).min(n);
        scores.clear();
        scores.extend((start..end).map(score_of));
        for (c, s) in (start..end).zip(&scores) {
            while excl.peek().is_some_and(|e| **e < c) {
                excl.next();
            }
            if c == truth || excl.peek().is_some_and(|e| **e == c) {
                continue;
            }
            if *s < truth_score {
                better += 1;
            } else if *s == truth_score {
                tied += 1;
            }
        }
        start = end;
    }
    1 + better + tied / 2
}

/// Filtered rank: candidates forming other known-true triples are removed.
pub fn filtered_rank<T: Scalar>(
    model: &KgeModel<T>,
    triple: Triple,
    direction: Direction,
    filter: &FilterIndex,
    chunk_size: usize,
) -> usize {
    let exclude = match direction {
        Direction::PredictTail => filter.tails(triple.head, triple.relation),
        Direction::PredictHead => filter.heads(triple.relation, triple.tail),
    };
    rank_excluding(model, triple, direction, exclude, chunk_size)
}

/// Unfiltered rank over all candidates.
pub fn raw_rank<T: Scalar>(model: &KgeModel<T>, triple: Triple, direction: Direction, chunk_size: usize) -> usize {
    rank_excluding(model, triple, direction, &[], chunk_size)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub count: usize,
}

#[derive(Clone, Copy, Debug, Default)]
struct Accumulator {
    reciprocal: f64,
    hits: [usize; 3],
    count: usize,
}

impl Accumulator {
    fn add(&mut self, rank: usize) {
        self.reciprocal += 1.0 / rank as f64;
        for (h, k) in self.hits.iter_mut().zip([1, 3, 10]) {
            if rank <= k {
                *h += 1;
            }
        }
        self.count += 1;
    }

    fn metrics(&self) -> Metrics {
        if self.count == 0 {
            return Metrics::default();
        }
        let c = self.count as f64;
        Metrics {
            mrr: self.reciprocal / c,
            hits1: self.hits[0] as f64 / c,
            hits3: self.hits[1] as f64 / c,
            hits10: self.hits[2] as f64 / c,
            count: self.count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub direction: Direction,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub direction: Direction,
    pub category: RelationType,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub tie_policy: String,
    #[serde(flatten)]
    pub overall: Metrics,
    pub by_direction: Vec<DirectionReport>,
    /// Two directions × four relation categories, direction-major.
    pub by_direction_category: Vec<CellReport>,
}

impl EvalReport {
    pub fn mrr(&self) -> f64 {
        self.overall.mrr
    }

    pub fn cell(&self, direction: Direction, category: RelationType) -> &CellReport {
        self.by_direction_category
            .iter()
            .find(|c| c.direction == direction && c.category == category)
            .expect("every cell is present")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Overall row plus the direction × category MRR grid.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# split: {:?}  ties: {}", self.split, self.tie_policy);
        let _ = writeln!(s, "# note: baselines ranked with optimistic tie-breaking are not directly comparable");
        let _ = writeln!(s, "{:<18}{:>8}{:>8}{:>8}{:>8}{:>10}", "", "MRR", "H@1", "H@3", "H@10", "count");
        let mut row = |label: &str, m: &Metrics| {
            let _ = writeln!(
                s,
                "{:<18}{:>8.4}{:>8.4}{:>8.4}{:>8.4}{:>10}",
                label, m.mrr, m.hits1, m.hits3, m.hits10, m.count
            );
        };
        row("overall", &self.overall);
        for d in &self.by_direction {
            row(&d.direction.to_string(), &d.metrics);
        }
        let _ = writeln!(s);
        let _ = write!(s, "{:<18}", "MRR by category");
        for c in RelationType::ALL {
            let _ = write!(s, "{:>10}", c.label());
        }
        let _ = writeln!(s);
        for d in Direction::BOTH {
            let _ = write!(s, "{:<18}", d.to_string());
            for c in RelationType::ALL {
                let cell = self.cell(d, c);
                if cell.metrics.count == 0 {
                    let _ = write!(s, "{:>10}", "-");
                } else {
                    let _ = write!(s, "{:>10.4}", cell.metrics.mrr);
                }
            }
            let _ = writeln!(s);
        }
        s
    }
}

/// Ranks every triple of `split` in both directions and aggregates
/// overall, per-direction and per-(direction, category) metrics.
pub fn evaluate<T: Scalar>(
    model: &KgeModel<T>,
    store: &TripleStore,
    split: Split,
    categories: &[RelationCategory],
    filter: &FilterIndex,
    options: &EvalOptions,
) -> Result<EvalReport> {
    let triples = store.split(split);
    if triples.is_empty() {
        return Err(KgeError::invalid(format!("{split:?} split is empty")));
    }
    if categories.len() != store.relation_count() {
        return Err(KgeError::invalid(format!(
            "{} relation categories for {} relations",
            categories.len(),
            store.relation_count()
        )));
    }
    let rank_pair = |t: &Triple| {
        Direction::BOTH.map(|d| filtered_rank(model, *t, d, filter, options.chunk_size))
    };
    let ranks: Vec<[usize; 2]> = if options.parallel {
        triples.par_iter().map(rank_pair).collect()
    } else {
        triples.iter().map(rank_pair).collect()
    };
    Ok(aggregate(split, triples, &ranks, categories))
}

fn aggregate(
    split: Split,
    triples: &[Triple],
    ranks: &[[usize; 2]],
    categories: &[RelationCategory],
) -> EvalReport {
    let mut overall = Accumulator::default();
    let mut by_dir = [Accumulator::default(); 2];
    let mut cells = [[Accumulator::default(); 4]; 2];
    for (t, pair) in triples.iter().zip(ranks) {
        let cat = categories[t.relation as usize].category;
        let ci = RelationType::ALL.iter().position(|c| *c == cat).unwrap();
        for (di, rank) in pair.iter().enumerate() {
            overall.add(*rank);
            by_dir[di].add(*rank);
            cells[di][ci].add(*rank);
        }
    }
    EvalReport {
        split,
        tie_policy: TIE_POLICY.to_string(),
        overall: overall.metrics(),
        by_direction: Direction::BOTH
            .iter()
            .zip(&by_dir)
            .map(|(d, a)| DirectionReport {
                direction: *d,
                metrics: a.metrics(),
            })
            .collect(),
        by_direction_category: Direction::BOTH
            .iter()
            .zip(&cells)
            .flat_map(|(d, row)| {
                RelationType::ALL.iter().zip(row).map(|(c, a)| CellReport {
                    direction: *d,
                    category: *c,
                    metrics: a.metrics(),
                })
            })
            .collect(),
    }
}
