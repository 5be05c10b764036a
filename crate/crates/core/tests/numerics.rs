use gcnstab_core::numerics::{frobenius_norm, hadamard, spectral_norm, spectral_norm_with, CsrMatrix, Matrix, PowerOptions};
use gcnstab_oracles::largest_singular_value;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

#[test]
fn frobenius_examples() {
    assert!((frobenius_norm(&Matrix::identity(3)) - 3f64.sqrt()).abs() < 1e-15);
    assert_eq!(frobenius_norm(&Matrix::zeros(2, 5)), 0.0);
    assert_eq!(frobenius_norm(&Matrix::from_rows(&[vec![3.0, 4.0]]).unwrap()), 5.0);
}

#[test]
fn hadamard_examples() {
    let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let b = Matrix::from_rows(&[vec![2.0, 0.0], vec![1.0, -1.0]]).unwrap();
    assert_eq!(hadamard(&a, &b).unwrap().as_slice(), &[2.0, 0.0, 3.0, -4.0]);
    assert_eq!(hadamard(&a, &Matrix::filled(2, 2, 1.0)).unwrap(), a);
    assert_eq!(hadamard(&a, &Matrix::zeros(2, 2)).unwrap(), Matrix::zeros(2, 2));
    assert!(hadamard(&a, &Matrix::zeros(2, 3)).is_err());
}

#[test]
fn fixed_seed_five_by_five_matches_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = random_matrix(&mut rng, 5, 5);
    let oracle = largest_singular_value(5, 5, m.as_slice());
    let got = spectral_norm(&m, 1e-10, 10_000).unwrap();
    assert!(((got - oracle) / oracle).abs() <= 1e-10, "{got} vs {oracle}");
}

#[test]
fn sparse_and_dense_operators_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = random_matrix(&mut rng, 9, 6).map(|x| if x.abs() < 0.5 { 0.0 } else { x });
    let s = CsrMatrix::from_dense(&m);
    let opts = PowerOptions::default();
    assert_eq!(spectral_norm_with(&m, &opts).unwrap(), spectral_norm_with(&s, &opts).unwrap());
}

#[test]
fn power_iteration_sweep_against_svd() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let r = rng.random_range(1..=64);
        let c = rng.random_range(1..=64);
        let m = random_matrix(&mut rng, r, c);
        let oracle = largest_singular_value(r, c, m.as_slice());
        let got = spectral_norm(&m, 1e-10, 10_000).unwrap();
        worst = worst.max(((got - oracle) / oracle).abs());
    }
    assert!(worst <= 1e-8, "worst relative error {worst:e}");
}
