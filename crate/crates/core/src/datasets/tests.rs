use proptest::prelude::*;

use super::*;
use crate::lgssm::lgssm_conditioning_gap;

fn spec(generator: GeneratorSpec, horizon: usize, n: usize) -> DatasetSpec {
    DatasetSpec {
        horizon,
        n_train: n,
        n_val: 10,
        n_test: 10,
        seed: 7,
        generator,
    }
}

fn frequency(ls: &[Labeled], f: impl Fn(&Labeled) -> bool) -> f64 {
    ls.iter().filter(|l| f(l)).count() as f64 / ls.len() as f64
}

#[test]
fn noiseless_branching_has_two_paths() {
    let p = BranchingParams {
        sigma: 0.0,
        process_noise: 0.0,
        start_noise: 0.0,
        branch_step: Some(1),
        ..BranchingParams::default()
    };
    let data = spec(GeneratorSpec::Branching(p), 12, 10_000)
        .generate_split(Split::Train)
        .unwrap();
    let up = &data.iter().find(|l| l.label == 1).unwrap().sequence;
    let down = &data.iter().find(|l| l.label == -1).unwrap().sequence;
    assert!(data.iter().all(|l| l.sequence == *up || l.sequence == *down));
    let f = frequency(&data, |l| l.sequence == *up);
    assert!((f - 0.5).abs() < 0.02, "{f}");
}

#[test]
fn branching_is_fair_and_branches_in_range() {
    let data = spec(GeneratorSpec::Branching(BranchingParams::default()), 20, 10_000)
        .generate_split(Split::Train)
        .unwrap();
    let f = frequency(&data, |l| l.label == 1);
    assert!((f - 0.5).abs() < 0.02, "{f}");
    assert!(data.iter().all(|l| (5..=10).contains(&l.event_step.unwrap())));
    // early observations do not reveal the branch, late ones do
    let mean_at = |t: usize, s: i64| {
        let v: Vec<f64> = data
            .iter()
            .filter(|l| l.label == s)
            .map(|l| l.sequence.x[t][0])
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!((mean_at(1, 1) - mean_at(1, -1)).abs() < 0.05);
    assert!(mean_at(19, 1) - mean_at(19, -1) > 2.0);
}

#[test]
fn splits_are_seeded_and_disjoint() {
    let s = spec(GeneratorSpec::Branching(BranchingParams::default()), 8, 50);
    let a = s.generate().unwrap();
    assert_eq!(a, s.generate().unwrap());
    assert_ne!(a.train[..10], a.val[..]);
    assert_ne!(a.val, a.test);
    let other = DatasetSpec { seed: 8, ..s.clone() };
    assert_ne!(other.generate().unwrap().train, a.train);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    assert_eq!(pool.install(|| s.generate().unwrap()), a);
}

#[test]
fn traffic_without_jams_is_the_base_curve() {
    let p = TrafficParams {
        p_jam: 0.0,
        noise: 0.0,
        ..TrafficParams::default()
    };
    let data = spec(GeneratorSpec::TrafficLike(p), 48, 20)
        .generate_split(Split::Train)
        .unwrap();
    for l in &data {
        for (t, x) in l.sequence.x.iter().enumerate() {
            assert_eq!(x[0], generators::base_speed(t, 48));
        }
    }
}

#[test]
fn traffic_jams_are_contiguous_windows() {
    let p = TrafficParams {
        p_jam: 1.0,
        noise: 0.0,
        ..TrafficParams::default()
    };
    let data = spec(GeneratorSpec::TrafficLike(p), 48, 200)
        .generate_split(Split::Train)
        .unwrap();
    for l in &data {
        let low: Vec<usize> = (0..48)
            .filter(|&t| l.sequence.x[t][0] < generators::base_speed(t, 48) * 0.99)
            .collect();
        assert!(!low.is_empty());
        assert_eq!(low.last().unwrap() - low[0] + 1, low.len());
        assert_eq!(low[0] + 1, l.event_step.unwrap());
    }
}

#[test]
fn traffic_jam_frequency() {
    let data = spec(GeneratorSpec::TrafficLike(TrafficParams::default()), 24, 10_000)
        .generate_split(Split::Train)
        .unwrap();
    let f = frequency(&data, |l| l.label == 1);
    assert!((f - 0.3).abs() < 0.03, "{f}");
}

#[test]
fn glyphs_share_top_rows_and_classes_are_uniform() {
    let t = glyph_templates();
    assert!(t.len() >= 4);
    for g in &t[1..] {
        assert_eq!(g[..SHARED_TOP_ROWS], t[0][..SHARED_TOP_ROWS]);
        assert_ne!(*g, t[0]);
    }
    let data = spec(GeneratorSpec::RowwiseGrid(RowwiseParams::default()), 8, 10_000)
        .generate_split(Split::Train)
        .unwrap();
    for c in 0..4 {
        let f = frequency(&data, |l| l.label == c);
        assert!((f - 0.25).abs() < 0.03, "class {c}: {f}");
    }
    assert!(data
        .iter()
        .flat_map(|l| l.sequence.x.iter().flatten())
        .all(|v| *v == 0.0 || *v == 1.0));
}

#[test]
fn zero_rate_glyphs_are_blank() {
    let p = RowwiseParams {
        rate: 0.0,
        ..RowwiseParams::default()
    };
    let data = spec(GeneratorSpec::RowwiseGrid(p), 8, 50)
        .generate_split(Split::Train)
        .unwrap();
    assert!(data
        .iter()
        .flat_map(|l| l.sequence.x.iter().flatten())
        .all(|v| *v == 0.0));
    assert!(spec(GeneratorSpec::RowwiseGrid(RowwiseParams::default()), 9, 5)
        .validate()
        .is_err());
}

#[test]
fn spec_validation() {
    let ok = spec(GeneratorSpec::Branching(BranchingParams::default()), 20, 5);
    ok.validate().unwrap();
    assert!(DatasetSpec {
        horizon: 1,
        ..ok.clone()
    }
    .validate()
    .is_err());
    assert!(DatasetSpec { n_val: 0, ..ok.clone() }.validate().is_err());
    let bad_branch = BranchingParams {
        branch_step: Some(30),
        ..BranchingParams::default()
    };
    assert!(spec(GeneratorSpec::Branching(bad_branch), 20, 5).validate().is_err());
    let s = r#"{"T": 20, "n_train": 5, "n_val": 5, "n_test": 5,
                "generator": {"kind": "branching", "sigma": 0.3}}"#;
    let parsed: DatasetSpec = serde_json::from_str(s).unwrap();
    assert_eq!(parsed.horizon, 20);
    let typo = r#"{"T": 20, "n_train": 5, "n_val": 5, "n_test": 5,
                   "generator": {"kind": "branching", "sigmaa": 0.3}}"#;
    assert!(serde_json::from_str::<DatasetSpec>(typo).is_err());
}

#[test]
fn lgssm_export_matches_the_model() {
    let model = crate::lgssm::LgssmConfig {
        a: vec![vec![0.5]],
        q: vec![1.0],
        h: vec![vec![1.0]],
        r: vec![0.1],
        m0: vec![0.0],
        p0: vec![1.0],
        horizon: 3,
    };
    let data = spec(GeneratorSpec::LgssmExport { model }, 6, 4000)
        .generate_split(Split::Train)
        .unwrap();
    assert!(data.iter().all(|l| l.sequence.len() == 6));
    let v: f64 = data.iter().map(|l| l.sequence.x[0][0].powi(2)).sum::<f64>() / 4000.0;
    // Var x_1 = A² P0 + Q + R
    assert!((v - 1.35).abs() < 0.1, "{v}");
}

#[test]
fn branching_surrogate_has_a_positive_gap() {
    let data = spec(GeneratorSpec::Branching(BranchingParams::default()), 20, 2000)
        .generate()
        .unwrap()
        .sequences(Split::Train);
    let lg = moment_matched_lgssm(&data).unwrap();
    let gap = lgssm_conditioning_gap(&lg).unwrap();
    assert!(gap.total > 0.0 && gap.total.is_finite(), "{gap:?}");
}

#[test]
fn jsonl_round_trip_and_errors() {
    let seqs = vec![
        Sequence {
            x: vec![vec![0.1 + 0.2, -1e-310], vec![f64::MAX, 1.0 / 3.0]],
            u: vec![vec![std::f64::consts::PI], vec![-0.0]],
        },
        Sequence::new(vec![vec![5e-324]]),
    ];
    let text = to_jsonl(&seqs).unwrap();
    assert_eq!(text.lines().count(), 2);
    let back = parse_jsonl(&text).unwrap();
    for (a, b) in seqs.iter().zip(&back) {
        let bits = |s: &Sequence| {
            s.x.iter()
                .chain(&s.u)
                .flatten()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(a), bits(b));
    }
    assert!(back[1].u.is_empty());

    let dir = std::env::temp_dir().join(format!("condgap-io-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("d.jsonl");
    write_jsonl(&path, &seqs).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), back);
    std::fs::remove_dir_all(&dir).unwrap();

    let bad = "{\"x\": [[1.0]]}\n\n{\"x\": [[1.0]], \"y\": 2}\n";
    match parse_jsonl(bad) {
        Err(DatasetError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        parse_jsonl("{\"x\": [[1.0], [1.0, 2.0]]}"),
        Err(DatasetError::Parse { line: 1, .. })
    ));
    assert!(matches!(
        parse_jsonl("{\"x\": [[1.0]], \"u\": [[1.0], [2.0]]}"),
        Err(DatasetError::Parse { line: 1, .. })
    ));
    assert!(to_jsonl(&[Sequence::new(vec![vec![f64::NAN]])]).is_err());
}

proptest! {
    #[test]
    fn jsonl_is_bit_exact(
        rows in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 2), 1..6),
    ) {
        let s = vec![Sequence::new(rows)];
        let back = parse_jsonl(&to_jsonl(&s).unwrap()).unwrap();
        let bits = |s: &Sequence| s.x.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&s[0]), bits(&back[0]));
    }

    #[test]
    fn parser_never_panics(text in ".{0,200}") {
        let _ = parse_jsonl(&text);
    }
}
