use proptest::prelude::*;

use sparse_ner::analysis::{group_stats, kendall_tau, relative_delta, GroupDimension, Stat};
use sparse_ner::corpus::{
    decode_spans, encode_spans, parse_iob2, serialize_iob2, Corpus, LanguageMeta,
    MetaTable, ParseOptions, Sentence, Split, Tag,
};
use sparse_ner::eval::{score_tags, EvalSplit, RunRecord};
use sparse_ner::perturb::{build_pool, perturb_corpus, PerturbationScope};
use sparse_ner::prune::{compute_masks, ParamTensor, PruneStrategy, TensorRole, ThresholdScope};
use sparse_ner::tagger::{build_vocab, init_model, train, TaggerConfig};

fn tag() -> impl Strategy<Value = Tag> {
    (0..7usize).prop_map(|i| Tag::from_index(i).unwrap())
}

fn token() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["the", "of", "Peru", "Lima", "Ada", "IBM", "Acme", "x-y", "é"]).prop_map(String::from)
}

fn sentence(strict: bool) -> impl Strategy<Value = Sentence> {
    prop::collection::vec((token(), tag()), 1..10).prop_map(move |pairs| {
        let (tokens, mut tags): (Vec<String>, Vec<Tag>) = pairs.into_iter().unzip();
        if strict {
            tags = encode_spans(&decode_spans(&tags), tags.len());
        }
        Sentence::new(tokens, tags, "xx").unwrap()
    })
}

fn corpus(strict: bool) -> impl Strategy<Value = Corpus> {
    prop::collection::vec(sentence(strict), 0..8).prop_map(|sentences| {
        let mut c = Corpus::new("xx", Split::Test);
        for s in sentences {
            c.push(s).unwrap();
        }
        c
    })
}

fn o_tokens(c: &Corpus) -> Vec<Vec<String>> {
    c.sentences
        .iter()
        .map(|s| s.tokens.iter().zip(&s.tags).filter(|(_, t)| **t == Tag::O).map(|(w, _)| w.clone()).collect())
        .collect()
}

proptest! {
    #[test]
    fn corpus_round_trips(c in corpus(false)) {
        let text = serialize_iob2(&c);
        let back = parse_iob2(&text, "xx", Split::Test, ParseOptions::default()).unwrap();
        prop_assert_eq!(back.sentences, c.sentences);
    }

    #[test]
    fn strict_reencoding_is_idempotent(tags in prop::collection::vec(tag(), 0..16)) {
        let spans = decode_spans(&tags);
        let strict = encode_spans(&spans, tags.len());
        prop_assert_eq!(decode_spans(&strict), spans);
        prop_assert_eq!(encode_spans(&decode_spans(&strict), strict.len()), strict);
    }

    #[test]
    fn perturbation_is_deterministic_and_keeps_context(c in corpus(true), seed in any::<u64>()) {
        let pool = build_pool(std::slice::from_ref(&c), &MetaTable::new(), PerturbationScope::InLanguage, "xx").unwrap();
        let (a, log_a) = perturb_corpus(&c, &pool, seed);
        let (b, log_b) = perturb_corpus(&c, &pool, seed);
        prop_assert_eq!(serialize_iob2(&a), serialize_iob2(&b));
        prop_assert_eq!(log_a.to_jsonl(), log_b.to_jsonl());
        prop_assert_eq!(o_tokens(&a), o_tokens(&c));
    }

    #[test]
    fn micro_scores_are_consistent(
        gold in prop::collection::vec(prop::collection::vec(tag(), 0..8), 0..6),
        flips in prop::collection::vec(any::<bool>(), 48),
    ) {
        let pred: Vec<Vec<Tag>> = gold
            .iter()
            .enumerate()
            .map(|(i, s)| s.iter().enumerate().map(|(j, t)| if flips[(i * 8 + j) % 48] { Tag::O } else { *t }).collect())
            .collect();
        let report = score_tags(&gold, &pred).unwrap();
        let c = report.counts();
        prop_assert_eq!(c.tp + c.fn_, gold.iter().map(|s| decode_spans(s).len() as u64).sum::<u64>());
        prop_assert_eq!(c.tp + c.fp, pred.iter().map(|s| decode_spans(s).len() as u64).sum::<u64>());
        let (p, r, f) = (c.precision(), c.recall(), c.f1());
        prop_assert!(f <= p.max(r) + 1e-12 && f >= p.min(r) - 1e-12);
        // Perfect predictions score 1 whenever there is anything to find.
        let perfect = score_tags(&gold, &gold).unwrap().counts();
        prop_assert!(perfect.fp == 0 && perfect.fn_ == 0);
    }

    #[test]
    fn pruning_is_exact_and_permanent(
        sizes in prop::collection::vec(1usize..60, 1..4),
        seed in any::<u64>(),
        a in 0u32..100,
        b in 0u32..100,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<ParamTensor> = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let values = (0..n).map(|_| rng.gen_range(-5..=5) as f64).collect();
                ParamTensor::new(format!("w{i}"), vec![n], TensorRole::Dense, values).unwrap()
            })
            .collect();
        let total: usize = sizes.iter().sum();
        let (lo, hi) = (a.min(b), a.max(b));
        compute_masks(&mut params, f64::from(lo) / 100.0, PruneStrategy::Partial, ThresholdScope::Global).unwrap();
        let first: Vec<Vec<bool>> = params.iter().map(|p| p.mask().to_vec()).collect();
        compute_masks(&mut params, f64::from(hi) / 100.0, PruneStrategy::Partial, ThresholdScope::Global).unwrap();
        let masked: usize = params.iter().map(|p| p.masked_count()).sum();
        prop_assert_eq!(masked, hi as usize * total / 100);
        for (p, before) in params.iter().zip(&first) {
            for (now, was) in p.mask().iter().zip(before) {
                prop_assert!(*was || !*now);
            }
        }
    }

    #[test]
    fn relative_delta_is_scale_invariant(sparse in 0.0f64..1.0, dense in 0.01f64..1.0, k in 0.1f64..10.0) {
        let d = relative_delta(sparse, dense).unwrap();
        let scaled = relative_delta(sparse * k, dense * k).unwrap();
        prop_assert!((d - scaled).abs() < 1e-9);
    }

    #[test]
    fn tau_is_antisymmetric_and_rank_based(
        pairs in prop::collection::vec((0i32..6, 0i32..6), 2..12),
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let y: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        if let Ok(t) = kendall_tau(&x, &y) {
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            prop_assert!((kendall_tau(&x, &neg).unwrap() + t).abs() < 1e-12);
            let warped: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            prop_assert!((kendall_tau(&warped, &y).unwrap() - t).abs() < 1e-12);
            prop_assert!((kendall_tau(&y, &x).unwrap() - t).abs() < 1e-12);
        }
    }

    #[test]
    fn singleton_group_equals_its_member(f1 in 0.0f64..=1.0, seed in 0u64..4) {
        let mut meta = MetaTable::new();
        meta.insert(
            "xx".into(),
            LanguageMeta { code: "xx".into(), script: "Latin".into(), family: "Solo".into(), train_size: 100, pretrain_pct: 0.5 },
        );
        let records = vec![RunRecord::from_f1("xx", 50, PruneStrategy::Partial, seed, EvalSplit::Regular, f1)];
        for stat in [Stat::Mean, Stat::Median] {
            let stats = group_stats(&records, &meta, GroupDimension::Family, stat).unwrap();
            prop_assert_eq!(stats.len(), 1);
            prop_assert_eq!(stats[0].value, f1);
        }
    }
}

fn tagger_corpus() -> Corpus {
    let mut c = Corpus::new("xx", Split::Train);
    let rows: [(&str, &[usize]); 4] = [
        ("Ada Ro met Bo in Lima", &[1, 2, 0, 1, 0, 3]),
        ("Acme hired Ada", &[5, 0, 1]),
        ("Lima and Oslo", &[3, 0, 3]),
        ("Bo Ro joined Acme Corp", &[1, 2, 0, 5, 6]),
    ];
    for (text, tags) in rows {
        let tokens = text.split(' ').map(String::from).collect();
        let tags = tags.iter().map(|i| Tag::from_index(*i).unwrap()).collect();
        c.push(Sentence::new(tokens, tags, "xx").unwrap()).unwrap();
    }
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn training_is_deterministic_and_settles(seed in any::<u64>()) {
        let corpus = tagger_corpus();
        let config = TaggerConfig {
            embed_dim: 6,
            window: 1,
            hidden_dim: 8,
            learning_rate: 0.05,
            epochs: 20,
            batch_size: 2,
            seed,
            vocab_min_count: 1,
        };
        let fit = || {
            let mut model = init_model(&config, build_vocab(std::slice::from_ref(&corpus), 1)).unwrap();
            let history = train(&mut model, std::slice::from_ref(&corpus), None, PruneStrategy::Partial).unwrap();
            (model, history)
        };
        let (a, ha) = fit();
        let (b, hb) = fit();
        for (x, y) in a.params.iter().zip(&b.params) {
            prop_assert_eq!(&x.values, &y.values);
        }
        let losses = &ha.epoch_losses;
        prop_assert_eq!(losses, &hb.epoch_losses);
        for w in losses.windows(2) {
            prop_assert!(w[1] <= w[0] * 1.05, "epoch loss rose from {} to {}", w[0], w[1]);
        }
        prop_assert!(losses.last().unwrap() < &losses[0]);
    }
}
