//! Complex Monge-Ampère operator on jets, Fefferman's approximate
//! solution iteration, and the Einstein residual order.
//!
//! J[u] = (−1)^m det [[u, u_β̄], [u_α, u_αβ̄]]. An approximate solution
//! normalizes J[u] to a constant through total order m+1 at a boundary
//! base point. The target constant is 1 whenever J[ρ](0) has an exact
//! rational (m+1)-th root; otherwise u is left J₀-relative, since no
//! rational rescaling of u can change J₀ = J[ρ](0) by other than an
//! (m+1)-th power.

use num::Signed;

use crate::series_core::{
    as_rational, fmt_gauss, is_positive_real, jet_det, q, rational_power, Coeff, GaussQ, Jet, Q,
    VarKind,
};
use crate::{Error, Result};

/// A boundary defining function jet at a boundary base point: real,
/// vanishing at 0, with nonzero gradient and positive definite Levi form
/// on the complex tangent. Negative inside the domain by convention.
pub struct DefiningFunction {
    m: usize,
    phi: Jet<GaussQ>,
    base_point: Vec<GaussQ>,
    levi_det: Q,
}

/// Output of the Fefferman iteration. u = −φ-type, positive inside;
/// J[u] = ma_constant · (1 + O(u^achieved_order)).
pub struct MASolution {
    pub u: Jet<GaussQ>,
    pub ma_constant: Q,
    pub achieved_order: usize,
}

fn check_ambient(u: &Jet<GaussQ>, m: usize) -> Result<()> {
    if u.vars().len() != 2 * m || !matches!(u.vars().kind(0), VarKind::Holo { .. }) {
        return Err(Error::SignatureMismatch(
            u.vars().describe(),
            format!("ambient chart in dimension {m}"),
        ));
    }
    Ok(())
}

fn ensure_headroom(u: &Jet<GaussQ>, need: usize) -> Result<()> {
    let have = u.trunc().degree_bound();
    if have < need {
        return Err(Error::TruncationTooLow { have, need });
    }
    Ok(())
}

/// Determinant of a small matrix of Gaussian rationals, by Laplace
/// expansion along the first row.
fn gauss_det(a: &[Vec<GaussQ>]) -> GaussQ {
    let n = a.len();
    if n == 0 {
        return GaussQ::one();
    }
    if n == 1 {
        return a[0][0].clone();
    }
    let mut det = GaussQ::zero();
    for j in 0..n {
        if a[0][j].is_zero() {
            continue;
        }
        let minor: Vec<Vec<GaussQ>> = (1..n)
            .map(|i| {
                (0..n)
                    .filter(|&k| k != j)
                    .map(|k| a[i][k].clone())
                    .collect()
            })
            .collect();
        let mut term = Coeff::mul(&a[0][j], &gauss_det(&minor));
        if j % 2 == 1 {
            term = term.neg();
        }
        det = Coeff::add(&det, &term);
    }
    det
}

impl DefiningFunction {
    /// Validates the boundary jet: real, φ(0) = 0, dφ(0) ≠ 0, and
    /// strictly pseudoconvex at the base point (positive leading minors
    /// of the restricted Levi form).
    pub fn new(m: usize, phi: Jet<GaussQ>, base_point: Vec<GaussQ>) -> Result<Self> {
        check_ambient(&phi, m).map_err(|_| {
            Error::BadDefiningFunction(format!(
                "expected an ambient jet in dimension {m}, got variables {}",
                phi.vars().describe()
            ))
        })?;
        if !phi.is_real() {
            return Err(Error::BadDefiningFunction("jet is not real".into()));
        }
        if !phi.c0().is_zero() {
            return Err(Error::BadDefiningFunction(format!(
                "nonzero value {} at the base point",
                phi.c0().describe()
            )));
        }

        let unit = |j: usize| {
            let mut key = vec![0u16; 2 * m];
            key[j] = 1;
            key
        };
        let grad: Vec<GaussQ> = (0..m).map(|j| phi.coeff(&unit(j))).collect();
        let nu = grad
            .iter()
            .position(|g| !g.is_zero())
            .ok_or_else(|| Error::BadDefiningFunction("vanishing gradient".into()))?;

        // Restricted Levi form on ker ∂φ spanned by ∂_α − (φ_α/φ_ν)∂_ν.
        let hess = |j: usize, k: usize| {
            let mut key = vec![0u16; 2 * m];
            key[j] += 1;
            key[m + k] += 1;
            phi.coeff(&key)
        };
        let nu_inv = grad[nu].field_inv().expect("nonzero pivot");
        let tangential: Vec<usize> = (0..m).filter(|&a| a != nu).collect();
        let levi: Vec<Vec<GaussQ>> = tangential
            .iter()
            .map(|&a| {
                let ca = Coeff::mul(&grad[a], &nu_inv);
                tangential
                    .iter()
                    .map(|&b| {
                        let cb = Coeff::mul(&grad[b], &nu_inv).conj();
                        let mut v = hess(a, b);
                        v = Coeff::sub(&v, &Coeff::mul(&ca, &hess(nu, b)));
                        v = Coeff::sub(&v, &Coeff::mul(&cb, &hess(a, nu)));
                        v = Coeff::add(&v, &Coeff::mul(&Coeff::mul(&ca, &cb), &hess(nu, nu)));
                        v
                    })
                    .collect()
            })
            .collect();

        let mut levi_det = q(1, 1);
        for k in 1..=levi.len() {
            let lead: Vec<Vec<GaussQ>> = levi[..k]
                .iter()
                .map(|row| row[..k].to_vec())
                .collect();
            let d = gauss_det(&lead);
            match as_rational(&d) {
                Some(v) if v.is_positive() => levi_det = v,
                _ => {
                    return Err(Error::BadDefiningFunction(format!(
                        "Levi minor {k} is {}, not a positive rational",
                        fmt_gauss(&d)
                    )))
                }
            }
        }

        Ok(DefiningFunction {
            m,
            phi,
            base_point,
            levi_det,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn phi(&self) -> &Jet<GaussQ> {
        &self.phi
    }

    pub fn base_point(&self) -> &[GaussQ] {
        &self.base_point
    }

    /// Determinant of the restricted Levi form at the base point.
    pub fn levi_determinant(&self) -> Q {
        self.levi_det.clone()
    }
}

/// J[u] as the (−1)^m bordered Hessian determinant.
pub fn ma_operator(u: &Jet<GaussQ>, m: usize) -> Result<Jet<GaussQ>> {
    check_ambient(u, m)?;
    ensure_headroom(u, 2)?;
    let mut rows: Vec<Vec<Jet<GaussQ>>> = Vec::with_capacity(m + 1);
    let mut row0 = Vec::with_capacity(m + 1);
    row0.push(u.clone());
    for k in 0..m {
        row0.push(u.derive(m + k));
    }
    rows.push(row0);
    for j in 0..m {
        let uj = u.derive(j);
        let mut row = Vec::with_capacity(m + 1);
        for k in 0..m {
            row.push(uj.derive(m + k));
        }
        row.insert(0, uj);
        rows.push(row);
    }
    let det = jet_det(&rows);
    Ok(if m % 2 == 1 { -&det } else { det })
}

/// J[u] by the log route u^{m+1} det[(log(1/u))_{jk̄}]; requires
/// u(0) > 0 so the logarithm expands.
pub fn ma_operator_alt(u: &Jet<GaussQ>, m: usize) -> Result<Jet<GaussQ>> {
    check_ambient(u, m)?;
    ensure_headroom(u, 2)?;
    if !is_positive_real(&u.c0()) {
        return Err(Error::BadDefiningFunction(format!(
            "log route needs u(0) > 0, got {}",
            u.c0().describe()
        )));
    }
    let (_, logu) = u.log_split()?;
    let h: Vec<Vec<Jet<GaussQ>>> = (0..m)
        .map(|j| {
            let lj = logu.derive(j);
            (0..m).map(|k| -&lj.derive(m + k)).collect()
        })
        .collect();
    let mut acc = jet_det(&h);
    for _ in 0..=m {
        acc = &acc * u;
    }
    Ok(acc)
}

/// Covariance of J under a linear biholomorphism with matrix f:
/// J[u∘f] = |det f|² · (J[u])∘f, checked exactly on jets.
pub fn ma_covariance_check(u: &Jet<GaussQ>, f: &[Vec<GaussQ>], m: usize) -> Result<bool> {
    check_ambient(u, m)?;
    if f.len() != m || f.iter().any(|row| row.len() != m) {
        return Err(Error::Internal(format!("expected a {m} x {m} matrix")));
    }
    let det = gauss_det(f);
    if det.is_zero() {
        return Err(Error::NotInvertible("linear map with zero determinant".into()));
    }
    let det2 = Coeff::mul(&det, &det.conj());

    let vars = u.vars();
    let trunc = u.trunc();
    let mut images: Vec<Jet<GaussQ>> = Vec::with_capacity(2 * m);
    for j in 0..m {
        let mut im = Jet::zero(vars, trunc);
        for (k, c) in f[j].iter().enumerate() {
            im = &im + &Jet::var(vars, trunc, k).scalar_mul(c);
        }
        images.push(im);
    }
    for j in 0..m {
        images.push(images[j].conj());
    }

    let lhs = ma_operator(&images_apply(u, &images), m)?;
    let rhs = images_apply(&ma_operator(u, m)?, &images).scalar_mul(&det2);
    Ok(lhs == rhs.truncate_to(lhs.trunc()))
}

fn images_apply(u: &Jet<GaussQ>, images: &[Jet<GaussQ>]) -> Jet<GaussQ> {
    u.compose(images)
}

/// Fefferman iteration from a validated boundary defining function.
pub fn fefferman_iterate(df: &DefiningFunction) -> Result<MASolution> {
    fefferman_iterate_jet(&-df.phi(), df.m())
}

/// Fefferman iteration on a raw jet ρ (positive inside, J[ρ](0) > 0).
/// Exact solutions are fixed points: if J[ρ] is identically the target
/// constant, ρ is returned unchanged.
pub fn fefferman_iterate_jet(rho: &Jet<GaussQ>, m: usize) -> Result<MASolution> {
    check_ambient(rho, m)?;
    ensure_headroom(rho, 3 * m + 4)?;
    let j_rho = ma_operator(rho, m)?;
    let j0 = match as_rational(&j_rho.c0()) {
        Some(v) if v.is_positive() => v,
        _ => {
            return Err(Error::BadDefiningFunction(format!(
                "J[ρ](0) = {} is not a positive rational",
                j_rho.c0().describe()
            )))
        }
    };

    // First step: ψ = ρ·(J[ρ]/J₀)^{-1/(m+1)} fixes the boundary value of
    // the operator. The ratio J[ρ]/J₀ has constant term 1, so the binomial
    // series stays rational even when J₀^{1/(m+1)} does not.
    let h = j_rho
        .scalar_q(&(q(1, 1) / j0.clone()))
        .pow_q(&q(-1, (m + 1) as i64))?;
    let mut psi = rho * &h;

    for s in 2..=(m + 1) {
        let denom = (s * (m + 2 - s)) as i64;
        assert!(denom > 0, "iteration denominator vanished at s = {s}");
        let j_psi = ma_operator(&psi, m)?;
        let e = &Jet::one(psi.vars(), j_psi.trunc()) - &j_psi.scalar_q(&(q(1, 1) / j0.clone()));
        let step = (&psi * &e).scalar_q(&q(1, denom));
        psi = &psi.truncate_to(step.trunc()) + &step;
    }

    // Rescale to make the operator constant exactly 1 when J₀^{1/(m+1)}
    // is rational; otherwise report the solution relative to J₀.
    let (u, ma_constant) = match rational_power(&j0, &q(1, (m + 1) as i64)) {
        Ok(c) => (psi.scalar_q(&(q(1, 1) / c)), q(1, 1)),
        Err(_) => (psi, j0),
    };

    let j_final = ma_operator(&u, m)?;
    let ebar = &Jet::one(u.vars(), j_final.trunc())
        - &j_final.scalar_q(&(q(1, 1) / ma_constant.clone()));
    let bound = ebar.trunc().degree_bound();
    let achieved_order = ebar
        .min_total_degree()
        .unwrap_or(bound + 1)
        .min(m + 2);

    Ok(MASolution {
        u,
        ma_constant,
        achieved_order,
    })
}

/// First total order at which two jets differ; the truncation bound
/// plus one when they agree everywhere both are known.
pub fn uniqueness_order_check(u1: &Jet<GaussQ>, u2: &Jet<GaussQ>) -> Result<usize> {
    u1.checked_binop(u2)?;
    let diff = u1 - u2;
    Ok(diff
        .min_total_degree()
        .unwrap_or(diff.trunc().degree_bound() + 1))
}

/// Vanishing order of the Einstein residual R_{ab̄} + (m+1)g_{ab̄} for
/// the metric g = (log(1/u))_{ab̄}. The determinant identity
/// det g = J[u]/u^{m+1} turns the residual into −(log(J[u]/J₀))_{ab̄},
/// which is pole-free at the base point.
pub fn einstein_check(sol: &MASolution) -> Result<usize> {
    let m = sol.u.vars().len() / 2;
    let j = ma_operator(&sol.u, m)?;
    let jn = j.scalar_q(&(q(1, 1) / sol.ma_constant.clone()));
    if !is_positive_real(&jn.c0()) {
        return Err(Error::BadDefiningFunction(format!(
            "J[u]/J₀ has constant term {}, cannot take its log",
            jn.c0().describe()
        )));
    }
    let (_, logj) = jn.log_split()?;
    let mut order = usize::MAX;
    let mut bound = 0;
    for a in 0..m {
        let la = logj.derive(a);
        for b in 0..m {
            let e = la.derive(m + b);
            bound = e.trunc().degree_bound();
            if let Some(d) = e.min_total_degree() {
                order = order.min(d);
            }
        }
    }
    Ok(if order == usize::MAX { bound + 1 } else { order })
}
