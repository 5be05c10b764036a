use gcnstab_core::datasets::*;
use gcnstab_core::graph::Graph;
use gcnstab_core::numerics::Matrix;
use gcnstab_core::Error;

fn toy(reduction: &BinaryReduction) -> gcnstab_core::Result<Dataset> {
    dataset_from_text(
        ("0 1\n", "edges"),
        ("3.0\n4.0\n", "features"),
        ("0 pos\n1 neg\n", "labels"),
        Some(("0 train\n1 test\n", "split")),
        reduction,
    )
}

#[test]
fn two_node_fileset() {
    let d = toy(&BinaryReduction::OneVsRest { positive: "pos".into() }).unwrap();
    assert_eq!(d.num_nodes(), 2);
    assert_eq!(d.graph().num_edges(), 1);
    assert_eq!(d.labels(), &[1.0, -1.0]);
    assert_eq!(d.train_indices(), &[0]);
    assert_eq!(d.test_indices(), &[1]);
    assert_eq!(d.c_x(), 5.0);
    assert!(!d.row_normalized());
    let n = d.with_row_normalization();
    assert!(n.row_normalized());
    assert!((n.c_x() - 2f64.sqrt()).abs() < 1e-15);
}

#[test]
fn parse_errors_name_the_line() {
    let err = dataset_from_text(
        ("0 1\n3 x\n", "edges.txt"),
        ("1\n2\n3\n4\n", "f"),
        ("0 a\n1 a\n2 b\n3 b\n", "l"),
        None,
        &BinaryReduction::LargestVsRest,
    )
    .unwrap_err();
    match err {
        Error::Parse { source_name, line, .. } => {
            assert_eq!(source_name, "edges.txt");
            assert_eq!(line, 2);
        }
        e => panic!("{e}"),
    }
    let err = parse_features("1,2\n3\n", "feat.csv").unwrap_err();
    assert!(err.to_string().starts_with("feat.csv:2:"), "{err}");
    assert!(parse_labels("0 a\n", "lab", 2).is_err());
    assert!(parse_split("0 validation\n", "sp", 1).is_err());
    assert!(toy(&BinaryReduction::OneVsRest { positive: "zzz".into() }).is_err());
}

#[test]
fn pair_reduction_induces_subgraph() {
    let d = dataset_from_text(
        ("0 1\n1 2\n2 3\n3 0\n", "e"),
        ("1\n2\n3\n4\n", "f"),
        ("0 a\n1 b\n2 c\n3 a\n", "l"),
        Some(("0 train\n1 train\n2 test\n3 test\n", "s")),
        &BinaryReduction::Pair { positive: "a".into(), negative: "b".into() },
    )
    .unwrap();
    // Nodes 0, 1, 3 survive as 0, 1, 2.
    assert_eq!(d.num_nodes(), 3);
    assert_eq!(d.labels(), &[1.0, -1.0, 1.0]);
    assert_eq!(d.graph().edges(), &[(0, 1), (0, 2)]);
    assert_eq!(d.train_indices(), &[0, 1]);
    assert_eq!(d.test_indices(), &[2]);
    assert_eq!(d.features().as_slice(), &[1.0, 2.0, 4.0]);
}

#[test]
fn load_from_files_and_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let w = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    let files = DatasetFiles {
        edges: w("e.txt", "0 1\n"),
        features: w("f.csv", "3.0\n4.0\n"),
        labels: w("l.txt", "0 x\n1 y\n"),
        split: Some(w("s.txt", "0 train\n1 test\n")),
    };
    let d = load_dataset(&files, &BinaryReduction::LargestVsRest).unwrap();
    assert_eq!(d.c_x(), 5.0);
    let missing = DatasetFiles { edges: dir.path().join("nope"), ..files };
    assert!(matches!(load_dataset(&missing, &BinaryReduction::LargestVsRest), Err(Error::Io { .. })));
}

#[test]
fn dataset_rejects_overlapping_split() {
    let g = Graph::new(2, [(0, 1)]).unwrap();
    let x = Matrix::filled(2, 1, 1.0);
    assert!(Dataset::new(g.clone(), x.clone(), vec![1.0, -1.0], vec![0], vec![0]).is_err());
    assert!(Dataset::new(g.clone(), x.clone(), vec![1.0, 0.5], vec![0], vec![1]).is_err());
    assert!(Dataset::new(g, x, vec![1.0, -1.0], vec![2], vec![]).is_err());
}

#[test]
fn split_contracts() {
    let n = 10;
    let g = Graph::new(n, (0..n - 1).map(|i| (i, i + 1))).unwrap();
    let labels: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let d = Dataset::new(g, Matrix::filled(n, 2, 1.0), labels, vec![], vec![]).unwrap();
    let s = split(d.clone(), 0.5, 4).unwrap();
    assert_eq!(s.train_indices().len(), 5);
    assert_eq!(s.test_indices().len(), 5);
    for side in [s.train_indices(), s.test_indices()] {
        let pos = side.iter().filter(|&&i| s.labels()[i] > 0.0).count();
        assert!(pos >= 2 && side.len() - pos >= 2);
    }
    let again = split(d.clone(), 0.5, 4).unwrap();
    assert_eq!(again.train_indices(), s.train_indices());
    let mut all: Vec<usize> = s.train_indices().iter().chain(s.test_indices()).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..n).collect::<Vec<_>>());
    assert!(split(d.clone(), 0.0, 1).is_err());
    assert!(split(d, 1.0, 1).is_err());
}

#[test]
fn csbm_is_deterministic_and_well_formed() {
    let p = CsbmParams { n: 60, ..CsbmParams::default() };
    let p = CsbmParams { p_in: 0.3, p_out: 0.05, ..p };
    let a = gen_csbm(&p, 17).unwrap();
    let b = gen_csbm(&p, 17).unwrap();
    assert_eq!(a, b);
    assert!(a.features().is_finite());
    assert!(a.labels().iter().all(|&y| y == 1.0 || y == -1.0));
    assert_eq!(a.labels().iter().filter(|&&y| y > 0.0).count(), 30);
    assert!(a.graph().degrees().iter().all(|&d| d >= 1));
    assert_eq!(a.train_indices().len() + a.test_indices().len(), 60);
}

#[test]
fn csbm_degenerate_cliques() {
    let p = CsbmParams {
        n: 4,
        p_in: 1.0,
        p_out: 0.0,
        d0: 2,
        mu: 1.0,
        sigma_noise: 0.1,
        train_fraction: 0.5,
    };
    let d = gen_csbm(&p, 0).unwrap();
    assert_eq!(d.graph().edges(), &[(0, 2), (1, 3)]);
}

#[test]
fn csbm_equal_probabilities_decouple_edges_from_labels() {
    let p = CsbmParams {
        n: 200,
        p_in: 0.05,
        p_out: 0.05,
        ..CsbmParams::default()
    };
    let (mut intra, mut total) = (0usize, 0usize);
    for seed in 0..20 {
        let d = gen_csbm(&p, seed).unwrap();
        for &(u, v) in d.graph().edges() {
            total += 1;
            if d.labels()[u] == d.labels()[v] {
                intra += 1;
            }
        }
    }
    let frac = intra as f64 / total as f64;
    // Same-class pairs are slightly fewer than half of all pairs.
    assert!((frac - 0.5).abs() < 0.05, "{frac}");
}

#[test]
fn csbm_zero_separation_has_indistinguishable_means() {
    let p = CsbmParams { mu: 0.0, p_in: 0.1, p_out: 0.05, n: 200, ..CsbmParams::default() };
    let d = gen_csbm(&p, 5).unwrap();
    let x = d.features();
    for j in 0..x.cols() {
        let mut groups = [Vec::new(), Vec::new()];
        for i in 0..x.rows() {
            groups[(d.labels()[i] < 0.0) as usize].push(x.get(i, j));
        }
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (m, var / v.len() as f64)
        };
        let (m0, s0) = stats(&groups[0]);
        let (m1, s1) = stats(&groups[1]);
        assert!((m0 - m1).abs() < 3.0 * (s0 + s1).sqrt(), "column {j}");
    }
}

#[test]
fn csbm_rejects_bad_params_and_reports_exhausted_retries() {
    let bad = CsbmParams { p_in: 0.01, p_out: 0.2, ..CsbmParams::default() };
    assert!(gen_csbm(&bad, 0).is_err());
    let sparse = CsbmParams { n: 200, p_in: 0.0, p_out: 0.0, ..CsbmParams::default() };
    assert!(matches!(gen_csbm(&sparse, 0), Err(Error::Generation(_))));
}
