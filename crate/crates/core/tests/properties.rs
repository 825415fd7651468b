mod common;

use std::collections::{BTreeSet, HashSet};
use std::sync::LazyLock;

use common::{record, task};
use image::{DynamicImage, Rgba, RgbaImage};
use proptest::prelude::*;
use proptest::sample::{select, subsequence};
use tactile_eval::aggregation::{
    assign_split, build_dataset, consensus_filter, label_for_dimension, majority_label, Ballot, BallotStatus,
    BuildConfig, ConsensusConfig, GoldKey, SplitProportions, ThresholdPolicy,
};
use tactile_eval::corpus::{parse_records, write_records, BinaryRecord, Dimension, OptionDef, Polarity, Registry, Split};
use tactile_eval::editing::{
    encode_png, issue_probability, pad_square, read_job, select_top_issue, write_job, EditJob, IssueScore,
};
use tactile_eval::embedding::{
    assemble_features, normalize, ContentHash, Embedding, EmbeddingStore, FeatureMap, FeatureVector, Modality,
    EMBED_DIM, FEATURE_DIM,
};
use tactile_eval::evaluation::{evaluate, EvalReport};
use tactile_eval::probe::{predict, sigmoid, CheckpointSet};

static REGISTRY: LazyLock<Registry> = LazyLock::new(Registry::builtin);

fn options() -> Vec<&'static OptionDef> {
    REGISTRY.all_options().collect()
}

fn split_strategy() -> impl Strategy<Value = Split> {
    prop_oneof![Just(Split::Train), Just(Split::Val), Just(Split::Test)]
}

fn dimension_strategy() -> impl Strategy<Value = Dimension> {
    select(Dimension::ALL.to_vec())
}

prop_compose! {
    fn any_record()(
        option in select(options()),
        pair in "[a-z]{1,6}_[0-9]{1,3}",
        total in 1u32..12,
        numer in 0u32..=12,
        label in any::<bool>(),
        split in split_strategy(),
        note in proptest::option::of("[ -~]{0,12}"),
    ) -> BinaryRecord {
        let votes_for = numer.min(total);
        let mut r = record(&pair, &option.task.to_string(), &option.option_id, label, votes_for, split);
        r.votes_total = total;
        r.vote_fraction = f64::from(votes_for) / f64::from(total);
        r.option_desc = option.description.clone();
        if let Some(n) = note {
            r.provenance.insert("note".into(), n.into());
        }
        r
    }
}

/// Drops duplicate keys and forces one split per (pair, task), which the
/// parser requires.
fn consistent(records: Vec<BinaryRecord>) -> Vec<BinaryRecord> {
    let mut seen = HashSet::new();
    let mut out: Vec<BinaryRecord> = records.into_iter().filter(|r| seen.insert(r.key())).collect();
    for r in &mut out {
        r.split = assign_split(&r.pair_id, &SplitProportions::default());
    }
    out
}

fn embedding(raw: &[f64], modality: Modality, tag: u8) -> Embedding {
    Embedding::from_raw(raw, modality, ContentHash::of(&[tag])).unwrap()
}

fn raw_vector() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0f64..1.0, EMBED_DIM).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

proptest! {
    #[test]
    fn records_round_trip_byte_identically(records in proptest::collection::vec(any_record(), 0..40)) {
        let records = consistent(records);
        let mut bytes = Vec::new();
        write_records(&records, &mut bytes).unwrap();
        let parsed = parse_records(bytes.as_slice(), &REGISTRY).unwrap();
        prop_assert_eq!(&parsed.records, &records);
        let mut again = Vec::new();
        write_records(&parsed.records, &mut again).unwrap();
        prop_assert_eq!(again, bytes);
    }

    #[test]
    fn labels_are_monotone_in_votes(option in select(options()), total in 1u32..500, k in 0u32..500) {
        let k = k.min(total - 1);
        let policy = ThresholdPolicy::default();
        prop_assert!(
            !majority_label(option, k, total, &policy) || majority_label(option, k + 1, total, &policy)
        );
    }

    #[test]
    fn labels_match_integer_thresholds(d in dimension_strategy(), total in 1u32..2000, k in 0u32..2000) {
        let k = k.min(total);
        let want = if d == Dimension::QT { 10 * k > 4 * total } else { 2 * k >= total };
        prop_assert_eq!(label_for_dimension(d, k, total, &ThresholdPolicy::default()), want);
    }

    #[test]
    fn texture_threshold_is_the_most_permissive(d in dimension_strategy(), total in 1u32..200, k in 0u32..200) {
        let k = k.min(total);
        let policy = ThresholdPolicy::default();
        if label_for_dimension(d, k, total, &policy) {
            prop_assert!(label_for_dimension(Dimension::QT, k, total, &policy));
        }
    }

    #[test]
    fn consensus_keeps_only_real_ballots(
        selections in proptest::collection::vec((subsequence(vec!["too_thick", "too_thin", "broken_lines"], 0..=3), 0u8..3), 1..14)
    ) {
        let t = task("F1QL");
        let ballots: Vec<Ballot> = selections
            .iter()
            .enumerate()
            .map(|(i, (sel, status))| Ballot {
                worker_id: format!("w{i}"),
                assignment_id: format!("a{i}"),
                pair_id: "p".into(),
                task: t,
                selected: sel.iter().map(|s| s.to_string()).collect(),
                gold_answers: vec![],
                status: [BallotStatus::Approved, BallotStatus::Rejected, BallotStatus::Unknown][*status as usize],
            })
            .collect();
        let config = ConsensusConfig::default();
        let out = consensus_filter(&ballots, REGISTRY.options(t), &ThresholdPolicy::default(), &config);
        for b in &out.kept {
            prop_assert!(ballots.contains(b));
            if b.status != BallotStatus::Approved {
                let shared = ballots.iter().filter(|o| o.selected == b.selected).count();
                prop_assert!(shared >= config.promote_min_agreement);
            }
        }
        let approved = ballots.iter().filter(|b| b.status == BallotStatus::Approved).count();
        prop_assert_eq!(out.kept.len(), approved + out.promoted_ballots);
        for v in &out.promoted {
            prop_assert!(ballots.iter().any(|b| &b.selected == v));
        }
    }

    #[test]
    fn dataset_build_ignores_ballot_order(
        raw in proptest::collection::vec((0usize..4, select(vec!["F1QL", "F2QT", "F3QV"]), 0u64..u64::MAX, any::<bool>()), 1..30),
        seed in any::<u64>(),
    ) {
        let ballots: Vec<Ballot> = raw
            .iter()
            .enumerate()
            .map(|(i, (pair, t, bits, approved))| {
                let t = task(t);
                let selected: BTreeSet<String> = REGISTRY
                    .options(t)
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| bits >> j & 1 == 1)
                    .map(|(_, o)| o.option_id.clone())
                    .collect();
                Ballot {
                    worker_id: format!("w{i}"),
                    assignment_id: format!("a{i}"),
                    pair_id: format!("pair_{pair}"),
                    task: t,
                    selected,
                    gold_answers: vec![],
                    status: if *approved { BallotStatus::Approved } else { BallotStatus::Rejected },
                }
            })
            .collect();
        let mut shuffled = ballots.clone();
        let n = shuffled.len();
        for i in 0..n {
            shuffled.swap(i, (seed.rotate_left(i as u32) as usize) % n);
        }
        let config = BuildConfig::default();
        let write = |b: &[Ballot]| {
            let (records, _) = build_dataset(b, &REGISTRY, &GoldKey::new(), &config).unwrap();
            let mut out = Vec::new();
            write_records(&records, &mut out).unwrap();
            (records, out)
        };
        let (records, bytes) = write(&ballots);
        prop_assert_eq!(&write(&ballots).1, &bytes);
        prop_assert_eq!(&write(&shuffled).1, &bytes);
        for r in &records {
            prop_assert_eq!(r.split, assign_split(&r.pair_id, &config.proportions));
        }
    }

    #[test]
    fn splits_depend_only_on_the_pair_id(id in "\\PC{0,20}") {
        let p = SplitProportions::default();
        prop_assert_eq!(assign_split(&id, &p), assign_split(&id.clone(), &p));
        let all_test = SplitProportions::new(0.0, 0.0, 1.0).unwrap();
        prop_assert_eq!(assign_split(&id, &all_test), Split::Test);
    }

    #[test]
    fn normalize_is_idempotent_and_scale_invariant(v in raw_vector(), scale in 1e-3f64..1e3) {
        let once = normalize(&v).unwrap();
        let norm: f64 = once.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-12);
        let twice = normalize(&once).unwrap();
        let scaled: Vec<f64> = v.iter().map(|x| x * scale).collect();
        let scaled = normalize(&scaled).unwrap();
        for ((a, b), c) in once.iter().zip(&twice).zip(&scaled) {
            prop_assert!((a - b).abs() < 1e-15);
            prop_assert!((a - c).abs() < 1e-14);
        }
    }

    #[test]
    fn features_recover_their_parts(n in raw_vector(), t in raw_vector(), x in raw_vector()) {
        let (n, t, x) = (embedding(&n, Modality::Image, 0), embedding(&t, Modality::Image, 1), embedding(&x, Modality::Text, 2));
        let f = assemble_features(&n, &t, &x).unwrap();
        prop_assert_eq!(f.as_slice().len(), FEATURE_DIM);
        let widen = |e: &Embedding| e.vector().iter().map(|&v| f64::from(v)).collect::<Vec<_>>();
        prop_assert_eq!(f.natural().to_vec(), widen(&n));
        prop_assert_eq!(f.tactile().to_vec(), widen(&t));
        prop_assert_eq!(f.text().to_vec(), widen(&x));
        for i in 0..EMBED_DIM {
            prop_assert_eq!(f.difference()[i], f.natural()[i] - f.tactile()[i]);
        }
        // Swapping the images changes the vector unless they are equal.
        let swapped = assemble_features(&t, &n, &x).unwrap();
        prop_assert_eq!(swapped == f, n.vector() == t.vector());
    }

    #[test]
    fn predict_agrees_with_half_probability(z in prop_oneof![-50.0f64..50.0, -1e-6f64..1e-6]) {
        prop_assert_eq!(predict(z), z >= 0.0);
        if z.abs() > 1e-15 {
            prop_assert_eq!(predict(z), sigmoid(z) >= 0.5);
        }
    }

    #[test]
    fn record_weighted_totals_are_consistent(
        outcomes in proptest::collection::vec((select(options()), any::<bool>()), 1..80),
        rotate in 0usize..80,
    ) {
        let report = EvalReport::from_outcomes(outcomes.iter().map(|(o, c)| (o.task, o.option_id.as_str(), *c)));
        let correct = outcomes.iter().filter(|(_, c)| *c).count();
        prop_assert_eq!((report.overall.correct, report.overall.total), (correct, outcomes.len()));
        let fam_total: usize = report.per_family.values().map(|t| t.total).sum();
        let fam_correct: usize = report.per_family.values().map(|t| t.correct).sum();
        prop_assert_eq!((fam_correct, fam_total), (correct, outcomes.len()));
        let task_total: usize = report.per_task.values().map(|t| t.total).sum();
        prop_assert_eq!(task_total, outcomes.len());
        let mut rotated = outcomes.clone();
        let k = rotate % rotated.len();
        rotated.rotate_left(k);
        let again = EvalReport::from_outcomes(rotated.iter().map(|(o, c)| (o.task, o.option_id.as_str(), *c)));
        prop_assert_eq!(again, report);
    }

    #[test]
    fn inversion_is_an_involution(p in 0.0f64..=1.0) {
        let once = issue_probability(Polarity::Pass, p);
        prop_assert!((0.0..=1.0).contains(&once));
        prop_assert!((issue_probability(Polarity::Pass, once) - p).abs() <= f64::EPSILON);
        prop_assert_eq!(issue_probability(Polarity::Defect, p), p);
    }

    #[test]
    fn top_issue_is_never_a_pass_option(scores in proptest::collection::vec((any::<bool>(), 0.0f64..=1.0, any::<bool>()), 0..10)) {
        let scores: Vec<IssueScore> = scores
            .into_iter()
            .enumerate()
            .map(|(i, (pass, p, actionable))| {
                let polarity = if pass { Polarity::Pass } else { Polarity::Defect };
                IssueScore::new(format!("o{i}"), polarity, p, actionable && !pass)
            })
            .collect();
        if let Ok(top) = select_top_issue(&scores) {
            prop_assert_eq!(top.polarity, Polarity::Defect);
            prop_assert!(scores.iter().filter(|s| s.is_repairable()).all(|s| s.issue_probability <= top.issue_probability));
        } else {
            prop_assert!(!scores.iter().any(|s| s.is_repairable()));
        }
    }

    #[test]
    fn padding_preserves_every_pixel(w in 1u32..24, h in 1u32..24, seed in any::<u32>()) {
        let img = RgbaImage::from_fn(w, h, |x, y| {
            let v = seed.wrapping_mul(2654435761).wrapping_add(x * 31 + y * 17).to_le_bytes();
            Rgba([v[0], v[1], v[2], v[3]])
        });
        let padded = pad_square(&encode_png(&img)).unwrap();
        prop_assert_eq!(padded.side(), w.max(h));
        prop_assert_eq!(padded.original_size, (w, h));
        let (ox, oy) = padded.offset;
        for (x, y, px) in padded.canvas.enumerate_pixels() {
            let inside = x >= ox && x < ox + w && y >= oy && y < oy + h;
            if inside {
                prop_assert_eq!(px, img.get_pixel(x - ox, y - oy));
            } else {
                prop_assert_eq!(*px, Rgba([255, 255, 255, 255]));
            }
        }
        let direct = tactile_eval::editing::pad_image(&DynamicImage::ImageRgba8(img));
        prop_assert_eq!(direct, padded);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn job_metadata_round_trips_exactly(p_before in 0.0f64..=1.0, p_after in 0.0f64..=1.0, prompt in "[ -~\n]{0,80}") {
        let dir = tempfile::tempdir().unwrap();
        let job = EditJob {
            pair_id: "dino_01".into(),
            task: task("F1QL"),
            option_id: "too_thick".into(),
            template_key: "too_thick".into(),
            prompt_sha256: String::new(),
            prompt,
            original_size: [3, 2],
            padded_side: 3,
            pad_offset: [0, 0],
            backend_id: "mock".into(),
            request_id: "mock-0".into(),
            attempts: 1,
            output_ref: "edited.png".into(),
            output_sha256: String::new(),
            embedding_provider: "fixture".into(),
            p_before,
            p_after,
            delta: p_before - p_after,
            started_at: 1,
            finished_at: 2,
        };
        let path = write_job(dir.path(), &job, b"png").unwrap();
        let back = read_job(&path).unwrap();
        prop_assert_eq!(back.delta.to_bits(), (back.p_before - back.p_after).to_bits());
        prop_assert_eq!(back, job);
    }

    #[test]
    fn stores_round_trip_bit_exactly(vectors in proptest::collection::vec((raw_vector(), any::<bool>(), any::<u8>()), 0..6)) {
        let mut store = EmbeddingStore::new("test/provider");
        for (v, text, tag) in &vectors {
            let modality = if *text { Modality::Text } else { Modality::Image };
            store.insert(embedding(v, modality, *tag));
        }
        let bytes = store.to_bytes();
        let back = EmbeddingStore::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.len(), store.len());
        prop_assert_eq!(back.to_bytes(), bytes);
        for (_, text, tag) in &vectors {
            let modality = if *text { Modality::Text } else { Modality::Image };
            let hash = ContentHash::of(&[*tag]);
            prop_assert_eq!(back.get(hash, modality), store.get(hash, modality));
        }
    }

    #[test]
    fn evaluation_ignores_record_order(labels in proptest::collection::vec((any::<bool>(), select(vec!["too_thick", "broken_lines"])), 1..20), k in 0usize..20) {
        let t = task("F1QL");
        let mut set = CheckpointSet::new();
        set.insert(common::tactile_probe(t, "too_thick", 0, 5.0, 0.0));
        set.insert(common::tactile_probe(t, "broken_lines", 1, -5.0, 0.1));
        let mut features = FeatureMap::new();
        let records: Vec<BinaryRecord> = labels
            .iter()
            .enumerate()
            .map(|(i, (label, option))| {
                let r = record(&format!("p{i}"), "F1QL", option, *label, 4, Split::Test);
                let mut v = vec![0.0; FEATURE_DIM];
                v[EMBED_DIM] = (i as f64 * 0.37).sin();
                v[EMBED_DIM + 1] = (i as f64 * 0.91).cos();
                features.insert(r.key(), FeatureVector::from_vec(v).unwrap());
                r
            })
            .collect();
        let report = evaluate(&set, &records, &features).unwrap();
        let mut rotated = records.clone();
        let k = k % rotated.len();
        rotated.rotate_left(k);
        prop_assert_eq!(evaluate(&set, &rotated, &features).unwrap(), report.clone());
        let overall = report.overall.accuracy().unwrap();
        let weighted: f64 = report.per_task.values().map(|t| t.accuracy().unwrap() * t.total as f64).sum::<f64>()
            / report.overall.total as f64;
        prop_assert!((overall - weighted).abs() < 1e-12);
    }
}
