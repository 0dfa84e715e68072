use adrf_core::{evaluate_basis, fit_scaler, BasisFamily, BasisSpec, Error, Matrix};
use proptest::prelude::*;

#[test]
fn scaler_examples() {
    let sc = fit_scaler(&Matrix::column(&[0.3, 0.7])).unwrap();
    assert!((sc.scale(0, 0.5) - 0.5).abs() < 1e-15);
    assert_eq!(sc.scale(0, 0.9), 1.0);
    assert_eq!(sc.scale(0, -4.0), 0.0);
    assert_eq!(
        fit_scaler(&Matrix::column(&[0.4, 0.4, 0.4])).unwrap_err(),
        Error::DegenerateCovariate { column: 0 }
    );
    let two = Matrix::from_rows(&[[1.0, 5.0], [2.0, 5.0]]);
    assert_eq!(fit_scaler(&two).unwrap_err(), Error::DegenerateCovariate { column: 1 });
}

#[test]
fn power_series_examples() {
    let sc = fit_scaler(&Matrix::column(&[0.0, 1.0])).unwrap();
    let u = evaluate_basis(&BasisSpec::new(BasisFamily::PowerSeries, 3, 1).unwrap(), &sc, &Matrix::column(&[0.5])).unwrap();
    assert_eq!(u.row(0), &[1.0, 0.5, 0.25]);

    let sc2 = fit_scaler(&Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]])).unwrap();
    let (a, b) = (0.3, 0.8);
    let u = evaluate_basis(
        &BasisSpec::new(BasisFamily::PowerSeries, 4, 2).unwrap(),
        &sc2,
        &Matrix::from_rows(&[[a, b]]),
    )
    .unwrap();
    assert_eq!(u.row(0), &[1.0, a, b, a * a]);
}

#[test]
fn power_series_degree_limit() {
    assert!(matches!(
        BasisSpec::new(BasisFamily::PowerSeries, 22, 1),
        Err(Error::BasisOverflow { .. })
    ));
    assert!(BasisSpec::new(BasisFamily::PowerSeries, 21, 1).is_ok());
}

#[test]
fn spline_rows_sum_to_one() {
    let sc = fit_scaler(&Matrix::column(&[0.0, 1.0])).unwrap();
    let spec = BasisSpec::new(BasisFamily::BSpline, 6, 1).unwrap();
    let xs: Vec<f64> = (0..=200).map(|k| k as f64 / 200.0).collect();
    let u = evaluate_basis(&spec, &sc, &Matrix::column(&xs)).unwrap();
    for (i, row) in u.iter_rows().enumerate() {
        assert_eq!(row[0], 1.0);
        let rest: f64 = row[1..].iter().sum();
        assert!(rest <= 1.0 + 1e-12, "row {i}");
    }
    assert!(BasisSpec::new(BasisFamily::BSpline, 3, 1).is_err());
}

#[test]
fn spline_block_is_partition_of_unity() {
    let knots = adrf_core::sieve_basis::clamped_uniform_knots(6, 3);
    let mut out = vec![0.0; 6];
    for k in 0..=1000 {
        let x = k as f64 / 1000.0;
        adrf_core::sieve_basis::bspline_into(&knots, 3, x, &mut out);
        let s: f64 = out.iter().sum();
        assert!((s - 1.0).abs() <= 1e-12, "x = {x}");
        assert!(out.iter().all(|v| *v >= 0.0 && *v <= 1.0));
    }
}

fn family() -> impl Strategy<Value = BasisFamily> {
    prop_oneof![Just(BasisFamily::PowerSeries), Just(BasisFamily::BSpline)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn first_column_is_one_and_entries_bounded(
        fam in family(),
        r in 1usize..4,
        extra in 0usize..8,
        xs in proptest::collection::vec(-3.0f64..3.0, 24),
    ) {
        let k = BasisSpec::smallest_valid_k(fam, 2 + extra, 3, r);
        let spec = BasisSpec::new(fam, k, r).unwrap();
        let n = xs.len() / r;
        let mut data: Vec<f64> = xs[..n * r].to_vec();
        // guarantee non-constant columns
        for j in 0..r {
            data[j] = -3.5;
            data[r + j] = 3.5;
        }
        let x = Matrix::from_row_major(n, r, data);
        let sc = fit_scaler(&x).unwrap();
        let u = evaluate_basis(&spec, &sc, &x).unwrap();
        prop_assert_eq!(u.cols(), k);
        for row in u.iter_rows() {
            prop_assert_eq!(row[0], 1.0);
            prop_assert!(row.iter().all(|v| v.abs() <= 1.0 + 1e-12));
        }
        let probe = Matrix::from_row_major(1, r, vec![10.0; r]);
        let p = evaluate_basis(&spec, &sc, &probe).unwrap();
        prop_assert!(p.row(0).iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }
}
