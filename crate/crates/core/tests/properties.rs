use std::collections::HashSet;

use compound_kge::dataset::{RelationType, Split};
use compound_kge::diagnostics::{
    diagnose_relations, export_relation_histograms, generate_synthetic_kg, relation_matrices, singularity_fraction,
    symmetry_residual, verify_pattern, SyntheticPattern, SyntheticSize,
};
use compound_kge::evaluation::{evaluate, filtered_rank, raw_rank, rank_excluding, Direction, EvalOptions};
use compound_kge::training::{self_adversarial_weights, train_step, TrainState};
use compound_kge::transform::{
    apply_chain, apply_rotation, compound_matrix_2d, invert_compound_2d, mat3_apply, mat3_mul, BlockParams,
    OperatorChain, TransformParams,
};
use compound_kge::{
    categorize_relations, load_dataset, score, CompoundSpec, FilterIndex, KgeModel, Norm, RelationInit, RelationParams,
    TrainConfig, Triple, TripleStore,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CHAINS: [&str; 16] = [
    "", "T", "R", "S", "TR", "RT", "TS", "ST", "RS", "SR", "TRS", "TSR", "STR", "RTS", "SRT", "RST",
];

fn chain_strategy() -> impl Strategy<Value = OperatorChain> {
    prop::sample::select(CHAINS.to_vec()).prop_map(|s| OperatorChain::parse(s).unwrap())
}

fn block_strategy() -> impl Strategy<Value = BlockParams<f64>> {
    (-5.0..5.0f64, -5.0..5.0f64, -7.0..7.0f64, -3.0..3.0f64, -3.0..3.0f64)
        .prop_map(|(vx, vy, theta, sx, sy)| BlockParams { vx, vy, theta, sx, sy })
}

fn invertible_block_strategy() -> impl Strategy<Value = BlockParams<f64>> {
    let scale = prop_oneof![-3.0..-0.1f64, 0.1..3.0f64];
    (-5.0..5.0f64, -5.0..5.0f64, -7.0..7.0f64, scale.clone(), scale)
        .prop_map(|(vx, vy, theta, sx, sy)| BlockParams { vx, vy, theta, sx, sy })
}

fn random_params(rng: &mut ChaCha8Rng, dim: usize) -> TransformParams<f64> {
    TransformParams {
        translation: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        angles: (0..dim / 2).map(|_| rng.random_range(-3.2..3.2)).collect(),
        scale: (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
    }
}

fn random_model(rng: &mut ChaCha8Rng, spec: CompoundSpec, entities: usize, relations: usize) -> KgeModel<f64> {
    let mut model = KgeModel::init(spec, entities, relations, true, RelationInit::Random, rng).unwrap();
    for r in &mut model.relations {
        r.head.scale.iter_mut().for_each(|s| *s = rng.random_range(-2.0..2.0));
        r.tail.scale.iter_mut().for_each(|s| *s = rng.random_range(-2.0..2.0));
    }
    model
}

fn random_store(rng: &mut ChaCha8Rng, entities: usize, relations: usize, triples: usize) -> TripleStore {
    let mut seen = HashSet::new();
    let mut all = Vec::new();
    while all.len() < triples {
        let t = Triple::new(
            rng.random_range(0..entities as u32),
            rng.random_range(0..relations as u32),
            rng.random_range(0..entities as u32),
        );
        if seen.insert(t) {
            all.push(t);
        }
    }
    let test = all.split_off(triples * 4 / 5);
    TripleStore::from_ids(entities, relations, all, Vec::new(), test).unwrap()
}

fn full_spec(dim: usize) -> CompoundSpec {
    let c = OperatorChain::parse("TRS").unwrap();
    CompoundSpec::full(c.clone(), c, dim, Norm::L1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn apply_chain_matches_homogeneous_matrix(chain in chain_strategy(), p in block_strategy(), x in -5.0..5.0f64, y in -5.0..5.0f64) {
        let params = TransformParams { translation: vec![p.vx, p.vy], angles: vec![p.theta], scale: vec![p.sx, p.sy] };
        let got = apply_chain(&[x, y], &chain, params.view()).unwrap();
        let want = mat3_apply(&compound_matrix_2d(&chain, &p), [x, y, 1.0]);
        for k in 0..2 {
            prop_assert!((got[k] - want[k]).abs() <= 1e-12 * want[k].abs().max(1.0), "{chain}: {got:?} vs {want:?}");
        }
    }

    #[test]
    fn rotation_preserves_euclidean_norm(x in prop::collection::vec(-10.0..10.0f64, 1..=32), seed in any::<u64>()) {
        let dim = x.len() * 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..dim).map(|i| x[i / 2] * if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
        let angles: Vec<f64> = (0..dim / 2).map(|_| rng.random_range(-10.0..10.0)).collect();
        let out = apply_rotation(&v, &angles).unwrap();
        for i in 0..dim / 2 {
            let before = v[2 * i].hypot(v[2 * i + 1]);
            let after = out[2 * i].hypot(out[2 * i + 1]);
            prop_assert!((before - after).abs() <= 1e-12 * before.max(1e-300));
        }
    }

    #[test]
    fn affine_products_keep_homogeneous_row(c1 in chain_strategy(), c2 in chain_strategy(), p in block_strategy(), q in block_strategy()) {
        let m = mat3_mul(&compound_matrix_2d(&c1, &p), &compound_matrix_2d(&c2, &q));
        prop_assert_eq!(m[2], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn inverse_is_two_sided(chain in chain_strategy(), p in invertible_block_strategy()) {
        let m = compound_matrix_2d(&chain, &p);
        let inv = invert_compound_2d(&m).unwrap();
        for prod in [mat3_mul(&m, &inv), mat3_mul(&inv, &m)] {
            for (i, row) in prod.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((v - want).abs() < 1e-10, "{prod:?}");
                }
            }
        }
    }

    #[test]
    fn score_is_nonnegative_and_zero_only_on_agreement(
        head in chain_strategy(), tail in chain_strategy(), seed in any::<u64>(), l2 in any::<bool>(), same in any::<bool>()
    ) {
        let norm = if l2 { Norm::L2 } else { Norm::L1 };
        let spec = match (head.is_empty(), tail.is_empty()) {
            (false, false) => CompoundSpec::full(head.clone(), tail.clone(), 8, norm).unwrap(),
            (false, true) => CompoundSpec::head(head.clone(), 8, norm).unwrap(),
            (true, false) => CompoundSpec::tail(tail.clone(), 8, norm).unwrap(),
            (true, true) => return Ok(()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = RelationParams { head: random_params(&mut rng, 8), tail: random_params(&mut rng, 8), shared_rotation: false };
        let h: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t: Vec<f64> = if same { h.clone() } else { (0..8).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let s = score(&h, &r, &t, &spec).unwrap();
        prop_assert!(s >= 0.0);
        let a = apply_chain(&h, &spec.head_chain, r.head.view()).unwrap();
        let b = apply_chain(&t, &spec.tail_chain, r.tail.view()).unwrap();
        prop_assert_eq!(s == 0.0, a == b);
    }

    #[test]
    fn adversarial_weights_are_a_distribution(scores in prop::collection::vec(-50.0..50.0f64, 1..64), alpha in 0.0..5.0f64) {
        let w = self_adversarial_weights(&scores, alpha);
        let total: f64 = w.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn adversarial_weights_follow_score_order(scores in prop::collection::vec(-50.0..50.0f64, 2..64), alpha in 0.01..5.0f64) {
        let w = self_adversarial_weights(&scores, alpha);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if scores[i] > scores[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }

    #[test]
    fn rank_bounds_and_filter_monotonicity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(3..30);
        let store = random_store(&mut rng, n, 3, n * 2);
        let model = random_model(&mut rng, full_spec(4), n, 3);
        let filter = FilterIndex::build(&store);
        for t in store.all_triples() {
            for d in Direction::BOTH {
                let filtered = filtered_rank(&model, *t, d, &filter, 7);
                let raw = raw_rank(&model, *t, d, 7);
                let removed = match d {
                    Direction::PredictTail => filter.tails(t.head, t.relation).len(),
                    Direction::PredictHead => filter.heads(t.relation, t.tail).len(),
                } - 1;
                prop_assert!(filtered >= 1 && filtered <= n - removed);
                prop_assert!(filtered <= raw);
            }
        }
    }

    #[test]
    fn chunking_does_not_change_ranks(seed in any::<u64>(), chunk in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = random_store(&mut rng, 25, 2, 40);
        let model = random_model(&mut rng, full_spec(6), 25, 2);
        let filter = FilterIndex::build(&store);
        for t in &store.test {
            for d in Direction::BOTH {
                prop_assert_eq!(filtered_rank(&model, *t, d, &filter, chunk), filtered_rank(&model, *t, d, &filter, usize::MAX));
            }
        }
    }

    #[test]
    fn report_cells_aggregate_to_overall(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = random_store(&mut rng, 20, 4, 60);
        let model = random_model(&mut rng, full_spec(4), 20, 4);
        let cats = categorize_relations(&store, 1.5).unwrap();
        let filter = FilterIndex::build(&store);
        let serial = evaluate(&model, &store, Split::Test, &cats, &filter, &EvalOptions { parallel: false, ..Default::default() }).unwrap();
        let parallel = evaluate(&model, &store, Split::Test, &cats, &filter, &EvalOptions::default()).unwrap();
        prop_assert_eq!(&serial, &parallel);
        prop_assert_eq!(serial.by_direction_category.len(), 8);
        let count: usize = serial.by_direction_category.iter().map(|c| c.metrics.count).sum();
        prop_assert_eq!(count, 2 * store.test.len());
        let weighted: f64 = serial.by_direction_category.iter().map(|c| c.metrics.mrr * c.metrics.count as f64).sum::<f64>() / count as f64;
        prop_assert!((weighted - serial.overall.mrr).abs() < 1e-12);
        let m = serial.overall;
        prop_assert!(0.0 <= m.mrr && m.mrr <= 1.0 && m.hits1 <= m.hits3 && m.hits3 <= m.hits10 && m.hits10 <= 1.0);
    }

    #[test]
    fn filter_sets_contain_their_own_truth(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = random_store(&mut rng, 15, 3, 40);
        let filter = FilterIndex::build(&store);
        for t in store.all_triples() {
            prop_assert!(filter.tails(t.head, t.relation).contains(&t.tail));
            prop_assert!(filter.heads(t.relation, t.tail).contains(&t.head));
        }
    }

    #[test]
    fn categories_follow_exactly_one_rule(hpt in 0.0..10.0f64, tph in 0.0..10.0f64, eta in 0.001..10.0f64) {
        let rules = [
            (hpt < eta && tph < eta, RelationType::OneToOne),
            (hpt < eta && tph >= eta, RelationType::OneToN),
            (hpt >= eta && tph < eta, RelationType::NToOne),
            (hpt >= eta && tph >= eta, RelationType::NToN),
        ];
        prop_assert_eq!(rules.iter().filter(|(hit, _)| *hit).count(), 1);
        let want = rules.iter().find(|(hit, _)| *hit).unwrap().1;
        prop_assert_eq!(RelationType::classify(hpt, tph, eta), want);
    }

    #[test]
    fn histogram_counts_are_conserved(seed in any::<u64>(), bins in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_model(&mut rng, full_spec(10), 4, 2);
        let rows = export_relation_histograms(&model, 1, bins).unwrap();
        let total: usize = rows.iter().map(|r| r.count).sum();
        // translation and scale on both sides plus one shared angle table
        prop_assert_eq!(total, 10 * 4 + 5);
    }

    #[test]
    fn diagnostics_stay_in_range(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = random_model(&mut rng, full_spec(8), 3, 3);
        model.relations[0].tail.scale[rng.random_range(0..8)] = 0.0;
        for d in diagnose_relations(&model, 1e-2).unwrap() {
            prop_assert!((0.0..=1.0).contains(&d.singularity_fraction));
            prop_assert!(d.symmetry_residual.value.is_none_or(|v| v >= 0.0));
            prop_assert!(d.best_inverse.is_none_or(|p| p.residual.value.is_none_or(|v| v >= 0.0)));
        }
        let r = &model.relations[0];
        prop_assert!(singularity_fraction(r, &model.spec, 1e-8) > 0.0);
        let m = relation_matrices(r, &model.spec).unwrap();
        prop_assert!(symmetry_residual(&m.head, &m.tail).singular_blocks >= 1);
    }

    #[test]
    fn synthetic_graphs_verify(seed in any::<u64>()) {
        for pattern in SyntheticPattern::ALL {
            let (entities, fan_out) = match pattern {
                SyntheticPattern::OneToN | SyntheticPattern::NToOne => (30, 3),
                SyntheticPattern::NToN => (24, 3),
                SyntheticPattern::Transitive => (21, 1),
                SyntheticPattern::Symmetric | SyntheticPattern::NonCommutative => (20, 1),
                _ => (20, 3),
            };
            let kg = generate_synthetic_kg(pattern, &SyntheticSize { entities, fan_out, holdout: 0.2 }, seed).unwrap();
            prop_assert!(verify_pattern(&kg.store, pattern).is_ok());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn entities_are_unit_norm_after_every_step(seed in any::<u64>(), lr in 0.0..0.5f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let store = random_store(&mut rng, 12, 2, 30);
        let model = random_model(&mut rng, full_spec(6), 12, 2);
        let config = TrainConfig { learning_rate: lr, batch_size: 8, negative_size: 4, deterministic: true, ..TrainConfig::default() };
        let mut state = TrainState::new(model, &config, rng);
        for step in 0..5 {
            let batch = &store.train[step * 4..step * 4 + 8];
            train_step(&mut state, batch, &config).unwrap();
            for row in state.model.entities.rows() {
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dictionaries_survive_save_and_reload(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = random_store(&mut rng, 10, 3, 25);
        let mut names: Vec<String> = (0..10).map(|i| format!("entity/{i}")).collect();
        names.reverse();
        store.entities = compound_kge::Vocabulary::from_names(names).unwrap();
        let dir = tempfile::tempdir().unwrap();
        store.save(dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        prop_assert_eq!(back.entities.names(), store.entities.names());
        prop_assert_eq!(back.relations.names(), store.relations.names());
        prop_assert_eq!(&back.train, &store.train);
        prop_assert_eq!(&back.test, &store.test);
        prop_assert_eq!(back.content_hash(), store.content_hash());
    }
}

#[test]
fn exclusion_list_matches_filter_index() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let store = random_store(&mut rng, 10, 2, 30);
    let model = random_model(&mut rng, full_spec(4), 10, 2);
    let filter = FilterIndex::build(&store);
    for t in &store.test {
        let tails = filter.tails(t.head, t.relation);
        assert_eq!(
            rank_excluding(&model, *t, Direction::PredictTail, tails, 3),
            filtered_rank(&model, *t, Direction::PredictTail, &filter, 3)
        );
    }
}
