//! Independent recomputations of the derived examples: per-block homogeneous
//! matrices, direct formulas and exhaustive sorts.

use std::collections::HashSet;

use compound_kge::diagnostics::relation_matrices;
use compound_kge::evaluation::{filtered_rank, raw_rank, Direction};
use compound_kge::training::{loss, self_adversarial_weights};
use compound_kge::transform::{
    apply_rotation, apply_scaling, apply_translation, compound_matrix_2d, mat3_apply, mat3_max_abs_diff, mat3_mul,
    operator_matrix, BlockParams, OperatorChain, TransformParams,
};
use compound_kge::{
    grad_score, preset_rotate, preset_transe, score, train, CompoundSpec, EntityTable, FilterIndex, KgeModel, Norm,
    RelationParams, TrainConfig, Triple, TripleStore,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vector(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

fn params(rng: &mut ChaCha8Rng, dim: usize) -> TransformParams<f64> {
    TransformParams {
        translation: vector(rng, dim, 1.0),
        angles: vector(rng, dim / 2, 3.2),
        scale: vector(rng, dim, 2.0),
    }
}

fn block_apply(m: &[[f64; 3]; 3], x: &[f64], i: usize) -> [f64; 2] {
    let y = mat3_apply(m, [x[2 * i], x[2 * i + 1], 1.0]);
    [y[0], y[1]]
}

fn chain(s: &str) -> OperatorChain {
    OperatorChain::parse(s).unwrap()
}

#[test]
fn elementwise_operators_match_block_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = vector(&mut rng, 64, 3.0);
    let t = vector(&mut rng, 64, 3.0);
    let s = vector(&mut rng, 64, 3.0);
    let (tx, sx) = (apply_translation(&x, &t).unwrap(), apply_scaling(&x, &s).unwrap());
    for i in 0..32 {
        let tm = compound_matrix_2d(&chain("T"), &BlockParams { vx: t[2 * i], vy: t[2 * i + 1], ..BlockParams::identity() });
        let sm = compound_matrix_2d(&chain("S"), &BlockParams { sx: s[2 * i], sy: s[2 * i + 1], ..BlockParams::identity() });
        for (got, m) in [(&tx, tm), (&sx, sm)] {
            let want = block_apply(&m, &x, i);
            assert!((got[2 * i] - want[0]).abs() < 1e-12 && (got[2 * i + 1] - want[1]).abs() < 1e-12);
        }
    }
    let x8 = vector(&mut rng, 8, 3.0);
    let angles = vector(&mut rng, 4, 3.2);
    let rx = apply_rotation(&x8, &angles).unwrap();
    for i in 0..4 {
        let m = compound_matrix_2d(&chain("R"), &BlockParams { theta: angles[i], ..BlockParams::identity() });
        let want = block_apply(&m, &x8, i);
        assert!((rx[2 * i] - want[0]).abs() < 1e-12 && (rx[2 * i + 1] - want[1]).abs() < 1e-12);
    }
}

#[test]
fn score_matches_per_block_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let spec = CompoundSpec::full(chain("SRT"), chain("SRT"), 16, Norm::L1).unwrap();
    for _ in 0..100 {
        let r = RelationParams { head: params(&mut rng, 16), tail: params(&mut rng, 16), shared_rotation: false };
        let (h, t) = (vector(&mut rng, 16, 1.0), vector(&mut rng, 16, 1.0));
        let mut want = 0.0;
        for i in 0..8 {
            let mh = compound_matrix_2d(&spec.head_chain, &BlockParams::from_view(&r.head.view(), i));
            let mt = compound_matrix_2d(&spec.tail_chain, &BlockParams::from_view(&r.tail.view(), i));
            let (a, b) = (block_apply(&mh, &h, i), block_apply(&mt, &t, i));
            want += (a[0] - b[0]).abs() + (a[1] - b[1]).abs();
        }
        let got = score(&h, &r, &t, &spec).unwrap();
        assert!((got - want).abs() < 1e-12 * want.max(1.0), "{got} vs {want}");
    }
}

#[test]
fn rotate_preset_is_complex_multiplication() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (spec, mut r) = preset_rotate::<f64>(8).unwrap();
    r.head.angles = vector(&mut rng, 4, 3.2);
    let (h, t) = (vector(&mut rng, 8, 1.0), vector(&mut rng, 8, 1.0));
    let mut want = 0.0;
    for i in 0..4 {
        let (c, s) = (r.head.angles[i].cos(), r.head.angles[i].sin());
        // (h_re + i h_im)(c + i s) - t
        let re = h[2 * i] * c - h[2 * i + 1] * s - t[2 * i];
        let im = h[2 * i] * s + h[2 * i + 1] * c - t[2 * i + 1];
        want += re.abs() + im.abs();
    }
    assert!((score(&h, &r, &t, &spec).unwrap() - want).abs() < 1e-12);
}

#[test]
fn frozen_operators_get_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (spec, mut r) = preset_transe::<f64>(6).unwrap();
    r.head.translation = vector(&mut rng, 6, 1.0);
    let g = grad_score(&vector(&mut rng, 6, 1.0), &r, &vector(&mut rng, 6, 1.0), &spec).unwrap();
    assert!(g.relation.head.translation.iter().any(|v| *v != 0.0));
    for side in [&g.relation.head, &g.relation.tail] {
        assert!(side.angles.iter().chain(&side.scale).all(|v| *v == 0.0));
    }
    assert!(g.relation.tail.translation.iter().all(|v| *v == 0.0));
}

#[test]
fn six_orderings_give_six_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let r = RelationParams { head: params(&mut rng, 8), tail: params(&mut rng, 8), shared_rotation: false };
    let (h, t) = (vector(&mut rng, 8, 1.0), vector(&mut rng, 8, 1.0));
    let scores: Vec<f64> = OperatorChain::all_orderings()
        .into_iter()
        .map(|c| score(&h, &r, &t, &CompoundSpec::full(c.clone(), c, 8, Norm::L1).unwrap()).unwrap())
        .collect();
    for i in 0..6 {
        for j in i + 1..6 {
            assert!((scores[i] - scores[j]).abs() > 0.0, "{scores:?}");
        }
    }
}

#[test]
fn relation_blocks_are_operator_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for order in ["TRS", "RST", "SR"] {
        let c = chain(order);
        let spec = CompoundSpec::full(c.clone(), c.clone(), 6, Norm::L1).unwrap();
        let r = RelationParams { head: params(&mut rng, 6), tail: params(&mut rng, 6), shared_rotation: false };
        let m = relation_matrices(&r, &spec).unwrap();
        for i in 0..3 {
            for (got, side) in [(&m.head[i], &r.head), (&m.tail[i], &r.tail)] {
                let p = BlockParams::from_view(&side.view(), i);
                let want = c.kinds().iter().fold(compound_kge::transform::mat3_identity(), |acc, k| {
                    mat3_mul(&acc, &operator_matrix(*k, &p))
                });
                assert!(mat3_max_abs_diff(got, &want) < 1e-12);
            }
        }
    }
}

#[test]
fn loss_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    for _ in 0..200 {
        let n = rng.random_range(1..40);
        let margin = rng.random_range(0.5..12.0);
        let pos = rng.random_range(0.0..15.0);
        let neg = vector(&mut rng, n, 15.0).into_iter().map(f64::abs).collect::<Vec<_>>();
        let alpha = rng.random_range(0.0..2.0);
        let w = self_adversarial_weights(&neg, alpha);
        let z: f64 = neg.iter().map(|f| (alpha * f).exp()).sum();
        for (wi, f) in w.iter().zip(&neg) {
            assert!((wi - (alpha * f).exp() / z).abs() < 1e-12);
        }
        let want = -sigmoid(margin - pos).ln() - neg.iter().zip(&w).map(|(f, p)| p * sigmoid(f - margin).ln()).sum::<f64>();
        let got = loss(pos, &neg, &w, margin);
        assert!((got - want).abs() < 1e-12 * want.max(1.0), "{got} vs {want}");
    }
}

#[test]
fn identical_seeds_give_identical_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut train_set = HashSet::new();
    while train_set.len() < 60 {
        train_set.insert(Triple::new(rng.random_range(0..15), rng.random_range(0..3), rng.random_range(0..15)));
    }
    let store = TripleStore::from_ids(15, 3, train_set.into_iter().collect(), vec![], vec![]).unwrap();
    let spec = CompoundSpec::full(chain("TRS"), chain("TRS"), 8, Norm::L1).unwrap();
    let config = TrainConfig { max_steps: 40, batch_size: 16, negative_size: 8, learning_rate: 0.01, deterministic: true, ..TrainConfig::default() };
    let a = train::<f64>(&store, &spec, &config, |_| {}).unwrap();
    let b = train::<f64>(&store, &spec, &config, |_| {}).unwrap();
    let losses = |o: &compound_kge::TrainOutcome<f64>| o.log.rows.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(a.last.entities, b.last.entities);
    assert_eq!(a.last.relations, b.last.relations);
}

#[test]
fn filter_index_matches_membership_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut triples: Vec<Triple> = (0..20)
        .map(|_| Triple::new(rng.random_range(0..6), rng.random_range(0..2), rng.random_range(0..6)))
        .collect();
    triples.push(triples[0]);
    let index = FilterIndex::from_triples(&triples);
    for h in 0..6 {
        for r in 0..2 {
            for t in 0..6 {
                let present = triples.contains(&Triple::new(h, r, t));
                assert_eq!(index.tails(h, r).contains(&t), present);
                assert_eq!(index.heads(r, t).contains(&h), present);
            }
            let scan: HashSet<u32> = triples.iter().filter(|x| x.head == h && x.relation == r).map(|x| x.tail).collect();
            assert_eq!(index.tails(h, r).len(), scan.len());
        }
    }
}

/// Sort every candidate score and read off the truth's position, averaging
/// over tied positions and rounding down.
fn sorted_rank(model: &KgeModel<f64>, triple: Triple, direction: Direction, skip: &HashSet<u32>) -> usize {
    let truth = match direction {
        Direction::PredictTail => triple.tail,
        Direction::PredictHead => triple.head,
    };
    let score_of = |c: u32| match direction {
        Direction::PredictTail => model.score(triple.head, triple.relation, c),
        Direction::PredictHead => model.score(c, triple.relation, triple.tail),
    };
    let mut scored: Vec<(f64, u32)> = (0..model.entity_count() as u32)
        .filter(|c| *c == truth || !skip.contains(c))
        .map(|c| (score_of(c), c))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = score_of(truth);
    let first = scored.iter().position(|(v, _)| *v == s).unwrap();
    let last = scored.iter().rposition(|(v, _)| *v == s).unwrap();
    first + 1 + (last - first) / 2
}

#[test]
fn hand_set_model_ranks_match_sort() {
    let (spec, mut r) = preset_transe::<f64>(2).unwrap();
    r.head.translation = vec![1.0, 0.0];
    let entities = EntityTable::from_vec(2, vec![0.0, 0.0, 1.0, 0.1, 0.9, 0.0]).unwrap();
    let model = KgeModel { spec, entities, relations: vec![r] };
    let truth = Triple::new(0, 0, 1);
    let other = Triple::new(0, 0, 2);
    let filter = FilterIndex::from_triples(&[truth, other]);
    // entity 2 sits closer to h + r than the truth
    assert_eq!(raw_rank(&model, truth, Direction::PredictTail, 2), 2);
    assert_eq!(raw_rank(&model, truth, Direction::PredictTail, 2), sorted_rank(&model, truth, Direction::PredictTail, &HashSet::new()));
    assert_eq!(filtered_rank(&model, truth, Direction::PredictTail, &filter, 2), 1);
    assert_eq!(
        filtered_rank(&model, truth, Direction::PredictTail, &filter, 2),
        sorted_rank(&model, truth, Direction::PredictTail, &HashSet::from([2]))
    );
    for d in Direction::BOTH {
        for t in [truth, other] {
            assert_eq!(raw_rank(&model, t, d, 1), sorted_rank(&model, t, d, &HashSet::new()));
        }
    }
}
