use nalgebra::DMatrix;

use super::KnotVector;
use crate::error::{Error, Result};

/// Nonzero block of a B-spline basis row: `values[i]` is `B_{first + i}(z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub first: usize,
    pub values: Vec<f64>,
}

fn check_range(z: f64) -> Result<()> {
    if (0.0..=1.0).contains(&z) {
        Ok(())
    } else {
        Err(Error::CovariateOutOfRange(z))
    }
}

/// The `order` B-splines that may be nonzero at `z`, via the triangular
/// Cox–de Boor recursion from order-1 indicators upward.
pub fn basis_row_sparse(knots: &KnotVector, order: usize, z: f64) -> Result<SparseRow> {
    check_range(z)?;
    let t = knots.extended(order);
    let degree = order - 1;
    let span = degree + knots.interval(z);

    let mut values = vec![0.0; order];
    let mut left = vec![0.0; order];
    let mut right = vec![0.0; order];
    values[0] = 1.0;
    for j in 1..=degree {
        left[j] = z - t[span + 1 - j];
        right[j] = t[span + j] - z;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = values[r] / (right[r + 1] + left[j - r]);
            values[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        values[j] = saved;
    }
    Ok(SparseRow {
        first: span - degree,
        values,
    })
}

/// Dense row (B_1(z), …, B_q(z)).
pub fn basis_row(knots: &KnotVector, order: usize, z: f64) -> Result<Vec<f64>> {
    let sparse = basis_row_sparse(knots, order, z)?;
    let mut row = vec![0.0; knots.dim(order)];
    row[sparse.first..sparse.first + order].copy_from_slice(&sparse.values);
    Ok(row)
}

/// Matrix with one basis row per value.
pub fn basis_matrix(knots: &KnotVector, order: usize, z_values: &[f64]) -> Result<DMatrix<f64>> {
    let q = knots.dim(order);
    let mut out = DMatrix::zeros(z_values.len(), q);
    for (i, &z) in z_values.iter().enumerate() {
        let sparse = basis_row_sparse(knots, order, z)?;
        for (j, v) in sparse.values.iter().enumerate() {
            out[(i, sparse.first + j)] = *v;
        }
    }
    Ok(out)
}

/// 1, z, …, z^{m−1}, (z − ξ_1)_+^{m−1}, …, (z − ξ_K)_+^{m−1}.
///
/// For m = 1 the truncated terms are the step indicators 1{z ≥ ξ_j}, matching
/// the half-open interval convention of the B-spline basis.
pub fn truncated_power_row(knots: &KnotVector, order: usize, z: f64) -> Result<Vec<f64>> {
    check_range(z)?;
    let degree = (order - 1) as i32;
    let mut row = Vec::with_capacity(knots.dim(order));
    row.extend((0..order).map(|r| z.powi(r as i32)));
    row.extend(
        knots
            .interior()
            .iter()
            .map(|&k| if z >= k { (z - k).powi(degree) } else { 0.0 }),
    );
    Ok(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-14, "{a:?} vs {b:?}");
        }
    }

    /// Textbook divided-difference form of a normalized B-spline.
    fn divided_difference_bspline(t: &[f64], j: usize, order: usize, x: f64) -> f64 {
        // B_j has knots t[j..=j+order]; collapse repeated knots is not needed
        // for the interior hat functions this is used on.
        let knots = &t[j..=j + order];
        let mut sum = 0.0;
        for l in 0..=order {
            let mut denom = 1.0;
            for r in 0..=order {
                if r != l {
                    denom *= knots[l] - knots[r];
                }
            }
            let plus = if knots[l] >= x {
                (knots[l] - x).powi(order as i32 - 1)
            } else {
                0.0
            };
            sum += plus / denom;
        }
        (knots[order] - knots[0]) * sum
    }

    #[test]
    fn linear_hat_values() {
        let k = KnotVector::new(vec![0.5]).unwrap();
        assert_close(&basis_row(&k, 2, 0.25).unwrap(), &[0.5, 0.5, 0.0]);
        assert_close(&basis_row(&k, 2, 0.0).unwrap(), &[1.0, 0.0, 0.0]);
        assert_close(&basis_row(&k, 2, 1.0).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn recursion_matches_divided_differences_for_interior_hat() {
        // The middle hat function of m = 2 with interior {0.5} has distinct knots 0, 0.5, 1.
        let k = KnotVector::new(vec![0.5]).unwrap();
        let t = k.extended(2);
        for &x in &[0.1, 0.25, 0.4, 0.6, 0.75, 0.9] {
            let row = basis_row(&k, 2, x).unwrap();
            let dd = divided_difference_bspline(&t, 1, 2, x);
            assert!((row[1] - dd).abs() < 1e-14, "x={x}: {} vs {dd}", row[1]);
        }
        // Interior cubic B-spline on equidistant knots.
        let k = KnotVector::equidistant(5);
        let t = k.extended(4);
        for &x in &[0.05, 0.2, 0.33, 0.5, 0.61] {
            let row = basis_row(&k, 4, x).unwrap();
            let dd = divided_difference_bspline(&t, 4, 4, x);
            assert!((row[4] - dd).abs() < 1e-12, "x={x}: {} vs {dd}", row[4]);
        }
    }

    #[test]
    fn order_one_is_indicator() {
        let k = KnotVector::equidistant(2);
        assert_close(&basis_row(&k, 1, 0.5).unwrap(), &[0.0, 1.0, 0.0]);
        assert_close(&basis_row(&k, 1, 1.0).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn out_of_range() {
        let k = KnotVector::equidistant(1);
        assert_eq!(basis_row(&k, 2, 1.5), Err(Error::CovariateOutOfRange(1.5)));
        assert!(basis_row(&k, 2, -1e-9).is_err());
        assert!(truncated_power_row(&k, 2, 2.0).is_err());
    }

    #[test]
    fn matrix_shapes() {
        let k = KnotVector::new(vec![0.5]).unwrap();
        let b = basis_matrix(&k, 2, &[0.0, 1.0]).unwrap();
        assert_eq!(
            b.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 0.0, 0.0]
        );
        assert_eq!(
            b.row(1).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 0.0, 1.0]
        );
        let empty = basis_matrix(&k, 2, &[]).unwrap();
        assert_eq!(empty.shape(), (0, 3));
    }

    #[test]
    fn truncated_power_examples() {
        let k = KnotVector::new(vec![0.5]).unwrap();
        assert_close(
            &truncated_power_row(&k, 2, 0.25).unwrap(),
            &[1.0, 0.25, 0.0],
        );
        assert_close(
            &truncated_power_row(&k, 2, 0.75).unwrap(),
            &[1.0, 0.75, 0.25],
        );
        assert_close(&truncated_power_row(&k, 1, 0.25).unwrap(), &[1.0, 0.0]);
        assert_close(&truncated_power_row(&k, 1, 0.75).unwrap(), &[1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn partition_of_unity_and_support(
            z in 0.0f64..=1.0,
            order in 1usize..=5,
            count in 0usize..=12,
        ) {
            let k = KnotVector::equidistant(count);
            let row = basis_row(&k, order, z).unwrap();
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            prop_assert!(row.iter().filter(|&&v| v != 0.0).count() <= order);
        }
    }
}
