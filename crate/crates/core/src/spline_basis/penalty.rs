use nalgebra::DMatrix;

use super::{basis_row_sparse, KnotVector, SplineSpec};
use crate::error::{Error, Result};

/// Roughness penalty D_p = K^{2p} ∇_p' R ∇_p.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    pub matrix: DMatrix<f64>,
    /// Set for non-equidistant knots, where the K^{2p} scale is only an
    /// approximation of the derivative Gram matrix.
    pub approximate: bool,
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(count: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; count];
    let mut weights = vec![0.0; count];
    let n = count as f64;
    for i in 0..count.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut deriv = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=count {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(x), p0 = P_{n-1}(x)
            deriv = n * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / deriv;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * deriv * deriv);
        nodes[i] = -x;
        nodes[count - 1 - i] = x;
        weights[i] = w;
        weights[count - 1 - i] = w;
    }
    if count % 2 == 1 {
        nodes[count / 2] = 0.0;
    }
    (nodes, weights)
}

/// The (q − p) × q matrix of p-th order forward differences.
pub fn difference_operator(q: usize, p: usize) -> DMatrix<f64> {
    let mut op = DMatrix::<f64>::identity(q, q);
    for step in 0..p {
        let rows = q - step - 1;
        let cols = q - step;
        let mut d = DMatrix::<f64>::zeros(rows, cols);
        for i in 0..rows {
            d[(i, i)] = -1.0;
            d[(i, i + 1)] = 1.0;
        }
        op = d * op;
    }
    op
}

/// Derivative penalty for `spec` on `knots`; R is integrated exactly by
/// per-interval Gauss–Legendre quadrature.
pub fn penalty_matrix(spec: &SplineSpec, knots: &KnotVector) -> Result<PenaltyMatrix> {
    let m = spec.order;
    let p = spec.penalty_order;
    if p >= m {
        return Err(Error::PenaltyOrder {
            penalty_order: p,
            order: m,
        });
    }
    if p == 0 {
        return Err(Error::InvalidSpec(
            "penalty order must be at least 1".into(),
        ));
    }
    let q = knots.dim(m);
    let low_order = m - p;
    let r_dim = knots.dim(low_order);
    let node_count = (2 * (low_order - 1) + 1).div_ceil(2);
    let (nodes, weights) = gauss_legendre(node_count);

    let mut gram = DMatrix::<f64>::zeros(r_dim, r_dim);
    let breaks = knots.breakpoints();
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, wt) in nodes.iter().zip(&weights) {
            let t = mid + half * x;
            let row = basis_row_sparse(knots, low_order, t)?;
            for (i, bi) in row.values.iter().enumerate() {
                for (j, bj) in row.values.iter().enumerate() {
                    gram[(row.first + i, row.first + j)] += half * wt * bi * bj;
                }
            }
        }
    }

    let nabla = difference_operator(q, p);
    let scale = (knots.len() as f64).powi(2 * p as i32);
    let mut matrix = nabla.transpose() * gram * nabla * scale;
    // Symmetrize away rounding asymmetry.
    let sym = (&matrix + matrix.transpose()) * 0.5;
    matrix.copy_from(&sym);
    Ok(PenaltyMatrix {
        matrix,
        approximate: !knots.is_equidistant(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eigenvalues;
    use crate::spline_basis::KnotRule;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for count in 1..=8 {
            let (x, w) = gauss_legendre(count);
            for deg in 0..(2 * count) {
                let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 {
                    0.0
                } else {
                    2.0 / (deg as f64 + 1.0)
                };
                assert!((approx - exact).abs() < 1e-13, "n={count} deg={deg}");
            }
        }
    }

    #[test]
    fn linear_penalty_example() {
        let spec = SplineSpec::regression(2, 1)
            .with_rule(KnotRule::Equidistant)
            .with_penalty(1.0, 1);
        let knots = KnotVector::equidistant(1);
        let d = penalty_matrix(&spec, &knots).unwrap();
        let expected =
            DMatrix::from_row_slice(3, 3, &[0.5, -0.5, 0.0, -0.5, 1.0, -0.5, 0.0, -0.5, 0.5]);
        assert!((&d.matrix - expected).abs().max() < 1e-14);
        assert!(!d.approximate);
    }

    #[test]
    fn difference_operator_shape() {
        let d2 = difference_operator(5, 2);
        assert_eq!(d2.shape(), (3, 5));
        assert_eq!(
            d2.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, -2.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn penalty_properties() {
        for m in 2..=4 {
            for p in 1..m {
                for k in [1usize, 3, 6] {
                    let spec = SplineSpec::regression(m, k)
                        .with_rule(KnotRule::Equidistant)
                        .with_penalty(1.0, p);
                    let knots = KnotVector::equidistant(k);
                    let d = penalty_matrix(&spec, &knots).unwrap().matrix;
                    assert_eq!(d, d.transpose());
                    let eig = symmetric_eigenvalues(&d);
                    assert!(eig[0] >= -1e-10 * eig.last().unwrap().max(1.0));
                    // The difference operator kills coefficient sequences that
                    // are polynomial of degree < p in the index; in particular
                    // the constant spline (all coefficients equal).
                    let q = knots.dim(m);
                    for r in 0..p {
                        let coef: Vec<f64> = (0..q).map(|j| (j as f64).powi(r as i32)).collect();
                        let v = nalgebra::DVector::from_vec(coef);
                        let dv = &d * &v;
                        assert!(
                            dv.norm() < 1e-9 * (1.0 + d.norm()) * q.pow(r as u32) as f64,
                            "m={m} p={p} k={k} r={r}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn quantile_knots_are_flagged() {
        let spec = SplineSpec::regression(3, 2).with_penalty(1.0, 1);
        let knots = KnotVector::new(vec![0.2, 0.3]).unwrap();
        let d = penalty_matrix(&spec, &knots).unwrap();
        assert!(d.approximate);
    }

    #[test]
    fn rejects_high_penalty_order() {
        let spec = SplineSpec::regression(2, 2).with_penalty(1.0, 2);
        assert_eq!(
            penalty_matrix(&spec, &KnotVector::equidistant(2)),
            Err(Error::PenaltyOrder {
                penalty_order: 2,
                order: 2
            })
        );
    }
}
