//! Exact linear algebra over jets: determinants, linear solves, and
//! matrix inversion for the small systems of the collar construction.

use crate::series_core::jet::Jet;
use crate::series_core::rational::Coeff;
use crate::{Error, Result};

/// Determinant by Laplace expansion along the first row; the matrices
/// here are at most (2m+1) x (2m+1), where expansion beats fraction-free
/// elimination on sparse jets.
pub fn jet_det<C: Coeff>(a: &[Vec<Jet<C>>]) -> Jet<C> {
    let n = a.len();
    assert!(n > 0 && a.iter().all(|row| row.len() == n), "square matrix");
    if n == 1 {
        return a[0][0].clone();
    }
    let mut det: Option<Jet<C>> = None;
    for j in 0..n {
        if a[0][j].is_zero_jet() {
            continue;
        }
        let minor: Vec<Vec<Jet<C>>> = (1..n)
            .map(|i| {
                (0..n)
                    .filter(|&k| k != j)
                    .map(|k| a[i][k].clone())
                    .collect()
            })
            .collect();
        let mut term = &a[0][j] * &jet_det(&minor);
        if j % 2 == 1 {
            term = -&term;
        }
        det = Some(match det {
            None => term,
            Some(acc) => &acc + &term,
        });
    }
    det.unwrap_or_else(|| Jet::zero(a[0][0].vars(), a[0][0].trunc()))
}

/// Solves A x = b by Gaussian elimination, pivoting on the first row
/// whose entry has an invertible constant term. All entries must share
/// one variable signature and truncation.
pub fn jet_linsolve<C: Coeff>(a: &[Vec<Jet<C>>], b: &[Jet<C>]) -> Result<Vec<Jet<C>>> {
    let n = a.len();
    assert!(
        n > 0 && a.iter().all(|row| row.len() == n) && b.len() == n,
        "square system"
    );
    let mut m: Vec<Vec<Jet<C>>> = a.to_vec();
    let mut rhs: Vec<Jet<C>> = b.to_vec();

    for col in 0..n {
        let pivot_row = (col..n)
            .find(|&r| m[r][col].c0().field_inv().is_some())
            .ok_or(Error::SingularSystem(col))?;
        m.swap(col, pivot_row);
        rhs.swap(col, pivot_row);
        let pivot_inv = m[col][col].inverse()?;
        for j in col..n {
            m[col][j] = &m[col][j] * &pivot_inv;
        }
        rhs[col] = &rhs[col] * &pivot_inv;
        for r in 0..n {
            if r == col || m[r][col].is_zero_jet() {
                continue;
            }
            let factor = m[r][col].clone();
            for j in col..n {
                let sub = &factor * &m[col][j];
                m[r][j] = &m[r][j] - &sub;
            }
            let sub = &factor * &rhs[col];
            rhs[r] = &rhs[r] - &sub;
        }
    }
    Ok(rhs)
}

/// Inverse matrix, one linear solve per identity column.
pub fn jet_matrix_inverse<C: Coeff>(a: &[Vec<Jet<C>>]) -> Result<Vec<Vec<Jet<C>>>> {
    let n = a.len();
    let vars = a[0][0].vars().clone();
    let trunc = a[0][0].trunc();
    let mut cols: Vec<Vec<Jet<C>>> = Vec::with_capacity(n);
    for j in 0..n {
        let e: Vec<Jet<C>> = (0..n)
            .map(|i| {
                if i == j {
                    Jet::one(&vars, trunc)
                } else {
                    Jet::zero(&vars, trunc)
                }
            })
            .collect();
        cols.push(jet_linsolve(a, &e)?);
    }
    // cols[j][i] is the (i, j) entry of the inverse; transpose to rows.
    Ok((0..n)
        .map(|i| (0..n).map(|j| cols[j][i].clone()).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series_core::jet::{Trunc, Vars};
    use crate::series_core::rational::{gq, GaussQ};

    fn setup() -> (std::sync::Arc<Vars>, Trunc) {
        (Vars::ambient(1), Trunc::Total(4))
    }

    #[test]
    fn det_2x2() {
        let (vars, tr) = setup();
        let z = Jet::<GaussQ>::var(&vars, tr, 0);
        let zb = Jet::<GaussQ>::var(&vars, tr, 1);
        let one = Jet::<GaussQ>::one(&vars, tr);
        // det [[1, z], [zb, 1]] = 1 - z zb
        let d = jet_det(&[vec![one.clone(), z.clone()], vec![zb.clone(), one.clone()]]);
        let expect = &one - &(&z * &zb);
        assert_eq!(d, expect);
    }

    #[test]
    fn inverse_roundtrip() {
        let (vars, tr) = setup();
        let z = Jet::<GaussQ>::var(&vars, tr, 0);
        let zb = Jet::<GaussQ>::var(&vars, tr, 1);
        let one = Jet::<GaussQ>::one(&vars, tr);
        let two = Jet::<GaussQ>::constant(&vars, tr, gq(2, 1, 0, 1));
        let a = vec![
            vec![&one + &(&z * &zb), z.clone()],
            vec![zb.clone(), two.clone()],
        ];
        let inv = jet_matrix_inverse(&a).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = Jet::<GaussQ>::zero(&vars, tr);
                for k in 0..2 {
                    acc = &acc + &(&a[i][k] * &inv[k][j]);
                }
                let expect = if i == j {
                    Jet::one(&vars, tr)
                } else {
                    Jet::zero(&vars, tr)
                };
                assert_eq!(acc, expect, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn singular_reports_column() {
        let (vars, tr) = setup();
        let z = Jet::<GaussQ>::var(&vars, tr, 0);
        let zero = Jet::<GaussQ>::zero(&vars, tr);
        let one = Jet::<GaussQ>::one(&vars, tr);
        // First column has no invertible constant term.
        let a = vec![vec![z.clone(), one.clone()], vec![zero, one]];
        match jet_linsolve(&a, &[Jet::one(&vars, tr), Jet::one(&vars, tr)]) {
            Err(crate::Error::SingularSystem(0)) => {}
            other => panic!("expected singular system, got {other:?}"),
        }
    }
}
