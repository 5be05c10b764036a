use gcnstab_core::bounds::{gap_bound, AssumptionConstants, BoundReport, Provenance, Source};
use gcnstab_core::datasets::{CsbmParams, Dataset};
use gcnstab_core::experiments::*;
use gcnstab_core::graph::{FilterKind, FilterMatrix, Graph};
use gcnstab_core::loss::Loss;
use gcnstab_core::model::{Activation, ModelParams};
use gcnstab_core::numerics::{Matrix, PowerOptions};
use gcnstab_core::training::TrainConfig;

fn small_sweep() -> SweepConfig {
    SweepConfig {
        train: TrainConfig { t: 30, record_every: 10, ..TrainConfig::default() },
        dataset: DatasetSpec::Csbm(CsbmParams { n: 60, p_in: 0.3, p_out: 0.05, d0: 4, ..CsbmParams::default() }),
        activation: Activation::Tanh,
        filters: vec![FilterKind::SymSelfloop, FilterKind::RwPlusId],
        depths: vec![1, 2],
        widths: vec![3],
        seeds: vec![5, 1],
        delta: 0.05,
    }
}

fn two_node(y: [f64; 2]) -> (Dataset, FilterMatrix, ModelParams) {
    let g = Graph::new(2, [(0, 1)]).unwrap();
    let d = Dataset::new(g, Matrix::from_rows(&[vec![0.3], vec![-0.2]]).unwrap(), y.to_vec(), vec![0], vec![1]).unwrap();
    let f = FilterMatrix::from_dense(&Matrix::identity(2), &PowerOptions::default()).unwrap();
    let p = ModelParams::new(vec![], vec![0.0], Activation::Tanh).unwrap();
    (d, f, p)
}

#[test]
fn gap_examples() {
    // Zero weights predict 0 everywhere: squared loss 1 on both nodes.
    let (d, f, p) = two_node([1.0, -1.0]);
    let e = estimate_gap(&p, &f, &d, &Loss::default()).unwrap();
    assert_eq!((e.r_emp, e.r_test, e.gap), (1.0, 1.0, 0.0));

    // w = atanh(0.5) with unit features predicts 0.5 on both nodes.
    let g = Graph::new(2, [(0, 1)]).unwrap();
    let y_hat = 0.5f64;
    let d = Dataset::new(g, Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap(), vec![1.0, 1.0], vec![0], vec![1]).unwrap();
    let p = ModelParams::new(vec![], vec![y_hat.atanh()], Activation::Tanh).unwrap();
    let e = estimate_gap(&p, &f, &d, &Loss::default()).unwrap();
    assert!((e.r_emp - 0.25).abs() < 1e-15 && (e.r_test - 0.25).abs() < 1e-15);
    let g = Graph::new(2, [(0, 1)]).unwrap();
    let d = Dataset::new(g, Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(), vec![1.0, 1.0], vec![0], vec![1]).unwrap();
    // Node 1 predicts -0.5: loss (1.5)^2 = 2.25 versus 0.25.
    let e = estimate_gap(&p, &f, &d, &Loss::default()).unwrap();
    assert!((e.gap - 2.0).abs() < 1e-12);
    let swapped = d.clone().with_split(vec![1], vec![0]).unwrap();
    let s = estimate_gap(&p, &f, &swapped, &Loss::default()).unwrap();
    assert_eq!(s.gap, e.gap);
    let empty = d.with_split(vec![0], vec![]).unwrap();
    assert!(estimate_gap(&p, &f, &empty, &Loss::default()).is_err());
}

#[test]
fn sweep_order_determinism_and_self_consistency() {
    let cfg = small_sweep();
    let a = run_sweep(&cfg, Some(3)).unwrap();
    let b = run_sweep(&cfg, Some(1)).unwrap();
    assert_eq!(records_to_csv(&a), records_to_csv(&b));
    assert_eq!(a.len(), 8);
    let coords: Vec<Cell> = a.iter().map(|r| r.cell).collect();
    assert_eq!(coords, cfg.cells());
    for r in &a {
        let x = r.result.as_ref().unwrap();
        let c = &x.report.constants;
        assert_eq!((c.b, c.c_g, c.c_x, c.k), (x.b, x.c_g, x.c_x, r.cell.k));
        let again = BoundReport::evaluate(c, cfg.delta, Provenance::all(Source::Measured)).unwrap();
        assert_eq!(&again, &x.report);
        assert_eq!(x.report.gap_bound.value(), gap_bound(x.report.mu_m.value(), c.loss_ceiling, c.m, cfg.delta).unwrap());
        // Re-running one cell reproduces it.
        let d = cfg.dataset.materialize(r.cell.seed).unwrap();
        assert_eq!(&run_cell(&cfg, r.cell, &d).unwrap(), x);
    }
    let csv = records_to_csv(&a);
    assert_eq!(csv.lines().next(), Some(SWEEP_CSV_HEADER));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",ok") && l.split(',').count() == 15));
}

#[test]
fn single_cell_sweep_matches_direct_training() {
    let mut cfg = small_sweep();
    cfg.filters = vec![FilterKind::SymSelfloop];
    cfg.depths = vec![1];
    cfg.seeds = vec![9];
    let recs = run_sweep(&cfg, None).unwrap();
    assert_eq!(recs.len(), 1);
    let d = cfg.dataset.materialize(9).unwrap();
    let f = gcnstab_core::graph::build_filter(d.graph(), FilterKind::SymSelfloop).unwrap();
    let init = gcnstab_core::training::init_params(&layer_widths(4, 1, 3), Activation::Tanh, 9).unwrap();
    let tc = TrainConfig { seed: 9, ..cfg.train };
    let (p, _) = gcnstab_core::training::train(&d, &f, &init, &tc).unwrap();
    let e = estimate_gap(&p, &f, &d, &tc.loss).unwrap();
    assert_eq!(recs[0].result.as_ref().unwrap().estimate, e);
}

#[test]
fn failed_cells_are_recorded() {
    let mut cfg = small_sweep();
    cfg.train.eta = 1e308;
    cfg.seeds = vec![1];
    cfg.filters = vec![FilterKind::AdjPlusId];
    cfg.depths = vec![3];
    match run_sweep(&cfg, None) {
        Err(gcnstab_core::Error::SweepFailed(_)) => {}
        other => panic!("{other:?}"),
    }
    let mut cfg = small_sweep();
    cfg.train.eta = 1e150;
    cfg.filters = vec![FilterKind::SymSelfloop, FilterKind::AdjPlusId];
    cfg.depths = vec![4];
    cfg.seeds = vec![1];
    let recs = run_sweep(&cfg, None);
    if let Ok(recs) = recs {
        let csv = records_to_csv(&recs);
        assert!(csv.lines().skip(1).any(|l| l.contains("failed: ")) || recs.iter().all(|r| r.result.is_ok()));
    }
}

#[test]
fn config_validation() {
    let mut cfg = small_sweep();
    cfg.seeds = vec![1, 1];
    assert!(run_sweep(&cfg, None).is_err());
    let mut cfg = small_sweep();
    cfg.depths.clear();
    assert!(run_sweep(&cfg, None).is_err());
    let mut cfg = small_sweep();
    cfg.delta = 1.5;
    assert!(run_sweep(&cfg, None).is_err());
}

#[test]
fn larger_filter_norm_gives_larger_bound() {
    let loss = Loss::default().constants().unwrap();
    for k in 0..4 {
        let sym = AssumptionConstants::from_parts(Activation::Tanh, &loss, 0.9, 1.0, 12.0, k, 0.05, 200, 150);
        let rw = AssumptionConstants { c_g: 4.7, ..sym };
        let a = BoundReport::evaluate(&sym, 0.05, Provenance::all(Source::Measured)).unwrap();
        let b = BoundReport::evaluate(&rw, 0.05, Provenance::all(Source::Measured)).unwrap();
        assert!(b.gap_bound.ln >= a.gap_bound.ln);
    }
}
