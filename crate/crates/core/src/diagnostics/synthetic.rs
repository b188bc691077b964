use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Triple, TripleStore, Vocabulary};
use crate::error::{KgeError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SyntheticPattern {
    Symmetric,
    Antisymmetric,
    Inverse,
    OneToN,
    NToOne,
    NToN,
    Transitive,
    SubRelation,
    NonCommutative,
}

impl SyntheticPattern {
    pub const ALL: [SyntheticPattern; 9] = [
        SyntheticPattern::Symmetric,
        SyntheticPattern::Antisymmetric,
        SyntheticPattern::Inverse,
        SyntheticPattern::OneToN,
        SyntheticPattern::NToOne,
        SyntheticPattern::NToN,
        SyntheticPattern::Transitive,
        SyntheticPattern::SubRelation,
        SyntheticPattern::NonCommutative,
    ];

    fn relation_names(self) -> &'static [&'static str] {
        match self {
            SyntheticPattern::Symmetric => &["married_to"],
            SyntheticPattern::Antisymmetric => &["precedes"],
            SyntheticPattern::Inverse => &["precedes", "follows"],
            SyntheticPattern::OneToN => &["row_member", "column_member", "right_of", "below"],
            SyntheticPattern::NToOne => &["in_row", "in_column", "right_of", "below"],
            SyntheticPattern::NToN => &["related_to", "next", "next_alt"],
            SyntheticPattern::Transitive => &["step_a", "step_b", "step_a_then_b"],
            SyntheticPattern::SubRelation => &["broad", "narrow"],
            SyntheticPattern::NonCommutative => &["f", "g", "f_then_g", "g_then_f"],
        }
    }
}

impl fmt::Display for SyntheticPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for SyntheticPattern {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| KgeError::invalid(format!("unknown synthetic pattern `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSize {
    pub entities: usize,
    /// Tails per head (1-to-N), heads per tail (N-to-1), group size (N-to-N),
    /// or out-degree (antisymmetric, inverse, sub-relation).
    pub fan_out: usize,
    /// Fraction of triples held out for each of valid and test.
    pub holdout: f64,
}

impl Default for SyntheticSize {
    fn default() -> Self {
        Self {
            entities: 20,
            fan_out: 3,
            holdout: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticKg {
    pub pattern: SyntheticPattern,
    pub store: TripleStore,
}

fn infeasible(pattern: SyntheticPattern, why: &str) -> KgeError {
    KgeError::invalid(format!("cannot build {pattern} graph: {why}"))
}

/// Forward edges along a random order: an edge to the next entity plus
/// `extra` more to random later entities per entity.
fn forward_edges(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> Vec<(u32, u32)> {
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(rng);
    let mut edges = HashSet::new();
    for i in 0..n - 1 {
        edges.insert((order[i], order[i + 1]));
        for _ in 0..extra {
            if i + 2 < n {
                let j = rng.random_range(i + 2..n);
                edges.insert((order[i], order[j]));
            }
        }
    }
    let mut out: Vec<_> = edges.into_iter().collect();
    out.sort();
    out
}

fn random_cycle(items: &[u32], rng: &mut ChaCha8Rng) -> Vec<(u32, u32)> {
    let mut order = items.to_vec();
    order.shuffle(rng);
    (0..order.len())
        .map(|i| (order[i], order[(i + 1) % order.len()]))
        .collect()
}

/// Triples of the pattern plus those that may be held out because their
/// evidence stays in training.
fn build(pattern: SyntheticPattern, size: &SyntheticSize, rng: &mut ChaCha8Rng) -> Result<(Vec<Triple>, HashSet<Triple>)> {
    let n = size.entities;
    let k = size.fan_out;
    let t = |h: u32, r: u32, tl: u32| Triple::new(h, r, tl);
    let mut triples = Vec::new();
    let mut eligible = HashSet::new();
    match pattern {
        SyntheticPattern::Symmetric => {
            if n < 4 || n % 2 != 0 {
                return Err(infeasible(pattern, "needs an even number of at least 4 entities"));
            }
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.shuffle(rng);
            for pair in order.chunks_exact(2) {
                let (a, b) = (pair[0], pair[1]);
                triples.push(t(a, 0, b));
                triples.push(t(b, 0, a));
                eligible.insert(t(b, 0, a));
            }
        }
        SyntheticPattern::Antisymmetric | SyntheticPattern::Inverse => {
            if n < 3 || k == 0 {
                return Err(infeasible(pattern, "needs at least 3 entities and a positive fan-out"));
            }
            for (a, b) in forward_edges(n, k - 1, rng) {
                triples.push(t(a, 0, b));
                if pattern == SyntheticPattern::Inverse {
                    triples.push(t(b, 1, a));
                    eligible.insert(if rng.random::<bool>() { t(a, 0, b) } else { t(b, 1, a) });
                } else {
                    eligible.insert(t(a, 0, b));
                }
            }
        }
        SyntheticPattern::OneToN | SyntheticPattern::NToOne => {
            let block = k * k + 2 * k;
            if k < 2 || n % block != 0 {
                return Err(infeasible(pattern, "needs fan-out ≥ 2 and entities divisible by fan-out² + 2·fan-out"));
            }
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.shuffle(rng);
            for grid in order.chunks_exact(block) {
                let (rows, rest) = grid.split_at(k);
                let (cols, cells) = rest.split_at(k);
                for (i, &row) in rows.iter().enumerate() {
                    for (j, &col) in cols.iter().enumerate() {
                        let c = cells[i * k + j];
                        for (hub, r) in [(row, 0), (col, 1)] {
                            let edge = if pattern == SyntheticPattern::OneToN { t(hub, r, c) } else { t(c, r, hub) };
                            triples.push(edge);
                            eligible.insert(edge);
                        }
                        if j + 1 < k {
                            triples.push(t(c, 2, cells[i * k + j + 1]));
                        }
                        if i + 1 < k {
                            triples.push(t(c, 3, cells[(i + 1) * k + j]));
                        }
                    }
                }
            }
        }
        SyntheticPattern::NToN => {
            if k < 2 || n % (2 * k) != 0 {
                return Err(infeasible(pattern, "needs group size ≥ 2 and entities divisible by twice the group size"));
            }
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.shuffle(rng);
            for pair in order.chunks_exact(2 * k) {
                let (left, right) = pair.split_at(k);
                let mut edges: HashSet<(u32, u32)> = HashSet::new();
                for &a in left {
                    for &b in right {
                        if rng.random::<f64>() < 0.7 {
                            edges.insert((a, b));
                        }
                    }
                }
                // at least two partners on each side
                for (i, &a) in left.iter().enumerate() {
                    edges.insert((a, right[i]));
                    edges.insert((a, right[(i + 1) % k]));
                }
                let mut edges: Vec<_> = edges.into_iter().collect();
                edges.sort();
                for (a, b) in edges {
                    triples.push(t(a, 0, b));
                    eligible.insert(t(a, 0, b));
                }
            }
            let all: Vec<u32> = (0..n as u32).collect();
            for r in [1, 2] {
                for (a, b) in random_cycle(&all, rng) {
                    triples.push(t(a, r, b));
                }
            }
        }
        SyntheticPattern::Transitive => {
            if n < 6 || n % 3 != 0 {
                return Err(infeasible(pattern, "needs a multiple of 3 entities, at least 6"));
            }
            let l = n / 3;
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.shuffle(rng);
            let (a, rest) = order.split_at(l);
            let (b, c) = rest.split_at(l);
            let mut pb: Vec<usize> = (0..l).collect();
            let mut pc: Vec<usize> = (0..l).collect();
            pb.shuffle(rng);
            pc.shuffle(rng);
            for i in 0..l {
                let (x, y, z) = (a[i], b[pb[i]], c[pc[pb[i]]]);
                triples.push(t(x, 0, y));
                triples.push(t(y, 1, z));
                triples.push(t(x, 2, z));
                eligible.insert(t(x, 2, z));
            }
        }
        SyntheticPattern::SubRelation => {
            if n < 3 || k == 0 {
                return Err(infeasible(pattern, "needs at least 3 entities and a positive fan-out"));
            }
            for (a, b) in forward_edges(n, k - 1, rng) {
                triples.push(t(a, 0, b));
                if rng.random::<bool>() {
                    triples.push(t(a, 1, b));
                    eligible.insert(t(a, 0, b));
                }
            }
        }
        SyntheticPattern::NonCommutative => {
            if n < 3 {
                return Err(infeasible(pattern, "needs at least 3 entities"));
            }
            let (mut f, mut g): (Vec<u32>, Vec<u32>) = ((0..n as u32).collect(), (0..n as u32).collect());
            let mut tries = 0;
            loop {
                f.shuffle(rng);
                g.shuffle(rng);
                if (0..n).any(|x| g[f[x] as usize] != f[g[x] as usize]) {
                    break;
                }
                tries += 1;
                if tries > 1000 {
                    return Err(infeasible(pattern, "no non-commuting pair found"));
                }
            }
            for x in 0..n {
                let xu = x as u32;
                triples.push(t(xu, 0, f[x]));
                triples.push(t(xu, 1, g[x]));
                triples.push(t(xu, 2, g[f[x] as usize]));
                triples.push(t(xu, 3, f[g[x] as usize]));
                eligible.insert(t(xu, 2, g[f[x] as usize]));
                eligible.insert(t(xu, 3, f[g[x] as usize]));
            }
        }
    }
    let mut seen = HashSet::new();
    triples.retain(|tr| seen.insert(*tr));
    Ok((triples, eligible))
}

/// Moves eligible triples into valid and test while every entity and
/// relation keeps at least one training triple and no inverse partner is
/// held out twice.
fn split(
    pattern: SyntheticPattern,
    triples: Vec<Triple>,
    eligible: &HashSet<Triple>,
    holdout: f64,
    n: usize,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Triple>, Vec<Triple>, Vec<Triple>) {
    let want = (holdout * triples.len() as f64).round() as usize;
    let mut degree = vec![0usize; n];
    let mut rel_count = vec![0usize; m];
    for t in &triples {
        degree[t.head as usize] += 1;
        degree[t.tail as usize] += 1;
        rel_count[t.relation as usize] += 1;
    }
    let mut candidates: Vec<Triple> = triples.iter().filter(|t| eligible.contains(t)).copied().collect();
    candidates.shuffle(rng);
    let mut held: HashSet<Triple> = HashSet::new();
    let mut out = [Vec::new(), Vec::new()];
    for c in candidates {
        let bucket = if out[1].len() < want {
            1
        } else if out[0].len() < want {
            0
        } else {
            break;
        };
        let partner = match pattern {
            SyntheticPattern::Inverse => Some(Triple::new(c.tail, 1 - c.relation, c.head)),
            _ => None,
        };
        if partner.is_some_and(|p| held.contains(&p)) {
            continue;
        }
        let ok = degree[c.head as usize] > 1 + usize::from(c.head == c.tail)
            && degree[c.tail as usize] > 1 + usize::from(c.head == c.tail)
            && rel_count[c.relation as usize] > 1;
        if !ok {
            continue;
        }
        degree[c.head as usize] -= 1;
        degree[c.tail as usize] -= 1;
        rel_count[c.relation as usize] -= 1;
        held.insert(c);
        out[bucket].push(c);
    }
    let train = triples.into_iter().filter(|t| !held.contains(t)).collect();
    let [valid, test] = out;
    (train, valid, test)
}

/// Builds a graph realizing `pattern`, checked exhaustively before return.
/// Relation ids follow the pattern's relation list (e.g. `has_member` is 0
/// for 1-to-N).
pub fn generate_synthetic_kg(pattern: SyntheticPattern, size: &SyntheticSize, seed: u64) -> Result<SyntheticKg> {
    if !(0.0..0.5).contains(&size.holdout) {
        return Err(KgeError::invalid(format!(
            "holdout fraction must be in [0, 0.5), got {}",
            size.holdout
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (triples, eligible) = build(pattern, size, &mut rng)?;
    let names = pattern.relation_names();
    let (train, valid, test) = split(pattern, triples, &eligible, size.holdout, size.entities, names.len(), &mut rng);
    let entities = Vocabulary::from_names((0..size.entities).map(|i| format!("e{i}")).collect())?;
    let relations = Vocabulary::from_names(names.iter().map(|s| s.to_string()).collect())?;
    let store = TripleStore::from_parts(entities, relations, train, valid, test)?;
    verify_pattern(&store, pattern)?;
    Ok(SyntheticKg { pattern, store })
}

type Pairs = HashSet<(u32, u32)>;

fn relation_pairs(store: &TripleStore, m: usize) -> Vec<Pairs> {
    let mut out = vec![HashSet::new(); m];
    for t in store.all_triples() {
        out[t.relation as usize].insert((t.head, t.tail));
    }
    out
}

fn as_map(p: &Pairs) -> Option<HashMap<u32, u32>> {
    let mut out = HashMap::new();
    for &(a, b) in p {
        if out.insert(a, b).is_some() {
            return None;
        }
    }
    Some(out)
}

fn degrees(p: &Pairs) -> (HashMap<u32, usize>, HashMap<u32, usize>) {
    let (mut out_deg, mut in_deg) = (HashMap::new(), HashMap::new());
    for &(a, b) in p {
        *out_deg.entry(a).or_insert(0) += 1;
        *in_deg.entry(b).or_insert(0) += 1;
    }
    (out_deg, in_deg)
}

/// Exhaustive check that the union of all splits realizes `pattern`.
pub fn verify_pattern(store: &TripleStore, pattern: SyntheticPattern) -> Result<()> {
    let m = pattern.relation_names().len();
    if store.relation_count() != m {
        return Err(KgeError::InvalidDataset(format!(
            "{pattern} graph needs {m} relations, store has {}",
            store.relation_count()
        )));
    }
    let r = relation_pairs(store, m);
    let fail = |why: &str| Err(KgeError::InvalidDataset(format!("{pattern} check failed: {why}")));
    let reversed = |p: &Pairs| -> Pairs { p.iter().map(|&(a, b)| (b, a)).collect() };
    match pattern {
        SyntheticPattern::Symmetric => {
            if r[0] != reversed(&r[0]) || r[0].iter().any(|(a, b)| a == b) {
                return fail("relation not closed under reversal");
            }
        }
        SyntheticPattern::Antisymmetric => {
            if r[0].iter().any(|&(a, b)| r[0].contains(&(b, a))) {
                return fail("a reversed pair is present");
            }
        }
        SyntheticPattern::Inverse => {
            if r[1] != reversed(&r[0]) {
                return fail("second relation is not the reversal of the first");
            }
        }
        SyntheticPattern::OneToN | SyntheticPattern::NToOne => {
            let mut hubs: Vec<HashMap<u32, u32>> = Vec::new();
            for axis in [0, 1] {
                let one = if pattern == SyntheticPattern::OneToN { r[axis].clone() } else { reversed(&r[axis]) };
                let (out_deg, in_deg) = degrees(&one);
                if in_deg.values().any(|&d| d != 1) {
                    return fail("a cell has more than one hub on an axis");
                }
                let fan = out_deg.values().next().copied().unwrap_or(0);
                if fan < 2 || out_deg.values().any(|&d| d != fan) {
                    return fail("hubs differ in fan-out or are singletons");
                }
                hubs.push(as_map(&reversed(&one)).expect("cells have one hub per axis"));
            }
            if hubs[0].len() != hubs[1].len() || hubs[0].keys().any(|c| !hubs[1].contains_key(c)) {
                return fail("row and column relations cover different cells");
            }
            let mut seen = HashSet::new();
            if hubs[0].iter().any(|(c, row)| !seen.insert((*row, hubs[1][c]))) {
                return fail("two cells share a row and a column");
            }
            for (step, keep, moved) in [(2, 0, 1), (3, 1, 0)] {
                let Some(next) = as_map(&r[step]) else {
                    return fail("a grid step is not a function");
                };
                let ok = next.iter().all(|(a, b)| {
                    matches!((hubs[keep].get(a), hubs[keep].get(b)), (Some(x), Some(y)) if x == y)
                        && hubs[moved].get(a) != hubs[moved].get(b)
                });
                if !ok {
                    return fail("a grid step leaves its row or column");
                }
            }
        }
        SyntheticPattern::NToN => {
            let (out_deg, in_deg) = degrees(&r[0]);
            if out_deg.values().chain(in_deg.values()).any(|&d| d < 2) {
                return fail("an endpoint has fewer than two partners");
            }
            for cycle in &r[1..] {
                match as_map(cycle) {
                    Some(next) if next.len() == store.entity_count() => {}
                    _ => return fail("cycle is not a function covering every entity"),
                }
            }
        }
        SyntheticPattern::Transitive => {
            let (Some(a), Some(b)) = (as_map(&r[0]), as_map(&r[1])) else {
                return fail("steps are not functions");
            };
            let composed: Pairs = a.iter().filter_map(|(x, y)| b.get(y).map(|z| (*x, *z))).collect();
            if composed != r[2] {
                return fail("third relation is not the composition");
            }
        }
        SyntheticPattern::SubRelation => {
            if !r[1].is_subset(&r[0]) || r[1].is_empty() {
                return fail("narrow pairs are not all broad pairs");
            }
        }
        SyntheticPattern::NonCommutative => {
            let (Some(f), Some(g)) = (as_map(&r[0]), as_map(&r[1])) else {
                return fail("generators are not functions");
            };
            let compose = |p: &HashMap<u32, u32>, q: &HashMap<u32, u32>| -> Pairs {
                p.iter().filter_map(|(x, y)| q.get(y).map(|z| (*x, *z))).collect()
            };
            if compose(&f, &g) != r[2] || compose(&g, &f) != r[3] {
                return fail("composed relations do not match");
            }
            if r[2] == r[3] {
                return fail("compositions commute");
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{categorize_relations, RelationType};

    #[test]
    fn every_pattern_generates_and_verifies() {
        let sizes = [
            (SyntheticPattern::Symmetric, 20, 1),
            (SyntheticPattern::Antisymmetric, 20, 3),
            (SyntheticPattern::Inverse, 20, 2),
            (SyntheticPattern::OneToN, 30, 3),
            (SyntheticPattern::NToOne, 30, 3),
            (SyntheticPattern::NToN, 24, 3),
            (SyntheticPattern::Transitive, 21, 1),
            (SyntheticPattern::SubRelation, 20, 3),
            (SyntheticPattern::NonCommutative, 20, 1),
        ];
        for (p, n, k) in sizes {
            let size = SyntheticSize { entities: n, fan_out: k, holdout: 0.1 };
            let kg = generate_synthetic_kg(p, &size, 7).unwrap();
            assert_eq!(kg.store.report.entities_unseen_in_train, 0, "{p}");
            assert!(!kg.store.test.is_empty(), "{p}");
            assert_eq!(kg, generate_synthetic_kg(p, &size, 7).unwrap());
        }
    }

    #[test]
    fn symmetric_reverse_always_present() {
        let size = SyntheticSize { entities: 20, ..Default::default() };
        let kg = generate_synthetic_kg(SyntheticPattern::Symmetric, &size, 1).unwrap();
        let all: HashSet<Triple> = kg.store.all_triples().copied().collect();
        for t in &all {
            assert!(all.contains(&Triple::new(t.tail, t.relation, t.head)));
        }
        // the reverse of every held-out triple is in training
        let train: HashSet<Triple> = kg.store.train.iter().copied().collect();
        for t in kg.store.test.iter().chain(&kg.store.valid) {
            assert!(train.contains(&Triple::new(t.tail, t.relation, t.head)));
        }
    }

    #[test]
    fn one_to_n_categorizes() {
        let size = SyntheticSize { entities: 30, fan_out: 3, holdout: 0.0 };
        let kg = generate_synthetic_kg(SyntheticPattern::OneToN, &size, 2).unwrap();
        let cats = categorize_relations(&kg.store, 1.5).unwrap();
        assert_eq!((cats[0].hpt, cats[0].tph), (1.0, 3.0));
        assert_eq!(cats[1].category, RelationType::OneToN);
        assert_eq!(cats[2].category, RelationType::OneToOne);
        assert_eq!(cats[3].category, RelationType::OneToOne);
    }

    #[test]
    fn n_to_n_categorizes() {
        let size = SyntheticSize { entities: 40, fan_out: 5, holdout: 0.0 };
        let kg = generate_synthetic_kg(SyntheticPattern::NToN, &size, 2).unwrap();
        let cats = categorize_relations(&kg.store, 1.5).unwrap();
        assert_eq!(cats[0].category, RelationType::NToN);
    }

    #[test]
    fn infeasible_sizes_are_rejected() {
        let bad = [
            (SyntheticPattern::Symmetric, 7, 1),
            (SyntheticPattern::OneToN, 10, 3),
            (SyntheticPattern::NToN, 10, 3),
            (SyntheticPattern::Transitive, 4, 1),
            (SyntheticPattern::NonCommutative, 2, 1),
        ];
        for (p, n, k) in bad {
            let size = SyntheticSize { entities: n, fan_out: k, holdout: 0.1 };
            assert!(matches!(generate_synthetic_kg(p, &size, 0), Err(KgeError::InvalidArgument(_))), "{p}");
        }
    }

    #[test]
    fn verification_catches_broken_structure() {
        let size = SyntheticSize { entities: 20, ..Default::default() };
        let mut kg = generate_synthetic_kg(SyntheticPattern::Symmetric, &size, 3).unwrap();
        let t = kg.store.train[0];
        kg.store.train.retain(|x| *x != Triple::new(t.tail, t.relation, t.head));
        kg.store.valid.retain(|x| *x != Triple::new(t.tail, t.relation, t.head));
        kg.store.test.retain(|x| *x != Triple::new(t.tail, t.relation, t.head));
        assert!(verify_pattern(&kg.store, SyntheticPattern::Symmetric).is_err());
    }
}
