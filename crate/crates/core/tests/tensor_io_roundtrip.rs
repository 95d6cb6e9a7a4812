mod common;

use equisel::tensor_io::{
    encode_matrix, load_dump, read_matrix, write_dump, Matrix, HEADER_LEN,
};
use equisel::Error;
use proptest::prelude::*;

fn finite_f64() -> impl Strategy<Value = f64> {
    any::<f64>().prop_filter("finite", |v| v.is_finite())
}

proptest! {
    #[test]
    fn f64_matrices_round_trip(rows in 0usize..8, cols in 0usize..8, seed in prop::collection::vec(finite_f64(), 64)) {
        let data: Vec<f64> = seed.into_iter().take(rows * cols).collect();
        let m = Matrix::new(rows, cols, data).unwrap();
        let bytes = encode_matrix(&m);
        prop_assert_eq!(bytes.len(), HEADER_LEN + 8 * rows * cols);
        let back: Matrix<f64> = read_matrix(bytes.as_slice()).unwrap();
        prop_assert!(back.bit_eq(&m));
    }

    #[test]
    fn i64_matrices_round_trip(rows in 0usize..8, cols in 0usize..8, seed in prop::collection::vec(any::<i64>(), 64)) {
        let data: Vec<i64> = seed.into_iter().take(rows * cols).collect();
        let m = Matrix::new(rows, cols, data).unwrap();
        let back: Matrix<i64> = read_matrix(encode_matrix(&m).as_slice()).unwrap();
        prop_assert_eq!(back, m);
    }

    #[test]
    fn truncated_payloads_are_rejected(rows in 1usize..5, cols in 1usize..5, cut in 1usize..8) {
        let m = Matrix::new(rows, cols, vec![1.5; rows * cols]).unwrap();
        let bytes = encode_matrix(&m);
        let short = &bytes[..bytes.len() - cut];
        let is_truncation = matches!(read_matrix::<f64, _>(short), Err(Error::Truncation { .. }));
        prop_assert!(is_truncation);
    }
}

#[test]
fn dumps_round_trip_through_disk() {
    let mut r = common::rng(3);
    let x = common::random_dense(&mut r, 12, 3);
    let labels: Vec<usize> = (0..12).map(|i| i % 4).collect();
    let w = common::random_dense(&mut r, 4, 3);
    let dump = common::classification_dump(&x, &labels, &w, &[0.1, 0.2, 0.3, 0.4]);
    let dir = tempfile::tempdir().unwrap();
    write_dump(&dump, dir.path()).unwrap();
    let back = load_dump(dir.path()).unwrap();
    assert!(back.bit_eq(&dump));
}

#[test]
fn wrong_dtype_is_rejected() {
    let m = Matrix::new(1, 2, vec![1i64, 2]).unwrap();
    assert!(read_matrix::<f64, _>(encode_matrix(&m).as_slice()).is_err());
}
