use ecg_core::*;
use proptest::prelude::*;

proptest! {
    #[test]
    fn columns_sum_back_to_the_input(
        values in prop::collection::vec(-1e6..1e6f64, 8..300),
        p in 1usize..=8,
        t in 1usize..=8,
    ) {
        let part = build_row_partition(values.len(), p).unwrap();
        let split = split_residual(&values, t, &part).unwrap();
        prop_assert_eq!(split.t(), t);
        let sums = split.column_sum();
        prop_assert_eq!(sums.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        // each row lands in exactly one column
        for row in 0..values.len() {
            let nonzero = (0..t).filter(|&c| split.get(row, c) != 0.0).count();
            prop_assert!(nonzero <= 1);
        }
    }
}

#[test]
fn rejects_wrong_length() {
    let part = build_row_partition(10, 2).unwrap();
    assert!(split_residual(&[1.0; 9], 2, &part).is_err());
}
