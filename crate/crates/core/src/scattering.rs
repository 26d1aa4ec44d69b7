//! Formal scattering along the collar: the indicial recurrence, its
//! residue operators, and the critical-weight limit.
//!
//! With Δ_φ = L₀ + x L₁ + x² L₂ + … as produced by [`expand_laplacian`],
//! the equation (Δ_φ − s(m−s)) u = 0 has a formal solution
//! u = x^{m−s}(f₀ + x f₁ + …) determined by
//!
//!   k (2s − m − k) f_k = − Σ_{ℓ<k} Q_{k,ℓ}(s) f_ℓ,
//!
//! where Q_{k,ℓ}(s) is L_{k−ℓ} with the Euler operator x∂x replaced by
//! the scalar (m − s) + ℓ.  The f_k are x-free boundary jets whose
//! coefficients are rational in s, with poles confined to the points
//! s = (m + j)/2 for j = 1..k and all poles simple; both facts are
//! certified on every run.  The dual branch x^{s}(g₀ + x g₁ + …) obeys
//! the mirror recurrence and satisfies g_k(s) = f_k(m − s).
//!
//! Exact residues at the exceptional points give tangential operators
//!
//!   p_ℓ f₀ = Res_{s=(m+ℓ)/2} f_ℓ(s)
//!
//! of order 2ℓ whose principal symbol is Δ_b^ℓ/(2^{ℓ+1} ℓ! (ℓ−1)!) in
//! the conventions of this crate, and the limit of f_m at the critical
//! weight s = m computes c_m times the boundary Q-curvature, with
//! c_k = (−1)^k/(2^k k! (k−1)!).  The limit is computed exactly; its
//! value carries the invariant meaning only when the defining function
//! solves the approximate Monge-Ampère problem.

use std::collections::BTreeMap;

use num::One;

use crate::graham_lee::{DiffOp, LaplacianExpansion, LevelOp};
use crate::series_core::{fmt_q, q, Coeff, GaussQ, Jet, Q, SPoly, SRat, Trunc};
use crate::{Error, Result};

fn srat_lift(c: &GaussQ) -> SRat {
    SRat::constant(c.clone())
}

fn internal(msg: &str) -> Error {
    Error::Internal(msg.into())
}

/// A level operator conjugated by the indicial power: the action of
/// x^{−a} L_j x^{a} on x-free boundary jets, with the Euler value a
/// rational in the spectral parameter s.
#[derive(Clone, Debug)]
pub struct SDiffOp {
    /// Substituted Euler value, (m − s) + ℓ on the direct branch.
    pub shift: SRat,
    level: LevelOp,
}

impl SDiffOp {
    /// Applies the operator to a boundary jet with s-rational
    /// coefficients.
    pub fn apply(&self, f: &Jet<SRat>) -> Jet<SRat> {
        self.level.apply_at(&self.shift, f, &srat_lift)
    }
}

/// The recurrence coefficient Q_{k,ℓ}(s): level k − ℓ of the Laplacian
/// with x∂x substituted by (m − s) + ℓ.
pub fn conjugated_operator(exp: &LaplacianExpansion, k: usize, l: usize) -> Result<SDiffOp> {
    if l > k || k - l >= exp.levels.len() {
        return Err(Error::TruncationTooLow {
            have: exp.levels.len().saturating_sub(1),
            need: k.saturating_sub(l),
        });
    }
    let shift = SRat::affine(&q(-1, 1), &q((exp.m + l) as i64, 1));
    Ok(SDiffOp {
        shift,
        level: exp.levels[k - l].clone(),
    })
}

/// The universal constants c_k = (−1)^k / (2^k k! (k−1)!) relating the
/// residue operators to the scattering matrix.
pub fn constants_ck(k_max: usize) -> BTreeMap<usize, Q> {
    let mut out = BTreeMap::new();
    let mut k_fact = Q::one();
    let mut k1_fact = Q::one();
    for k in 1..=k_max {
        k_fact *= q(k as i64, 1);
        if k >= 2 {
            k1_fact *= q(k as i64 - 1, 1);
        }
        let mut c = q(1, 1 << k) / (k_fact.clone() * k1_fact.clone());
        if k % 2 == 1 {
            c = -c;
        }
        out.insert(k, c);
    }
    out
}

/// One branch of the formal solution: the boundary jets f_k with
/// s-rational coefficients, certified to have simple poles confined to
/// the exceptional set of their branch.
#[derive(Clone, Debug)]
pub struct ScatteringExpansion {
    /// Half the real dimension of the ambient space.
    pub m: usize,
    /// CR dimension of the boundary, n = m − 1.
    pub n: usize,
    /// f[k] multiplies x^{m−s+k} (direct branch) or x^{s+k} (dual).
    pub f: Vec<Jet<SRat>>,
    /// The constants c_k for the computed range of k.
    pub c: BTreeMap<usize, Q>,
    dual: bool,
}

impl ScatteringExpansion {
    /// The indicial exponent σ(s) of the leading term x^σ: m − s on the
    /// direct branch, s on the dual branch.
    pub fn indicial_power(&self) -> SRat {
        if self.dual {
            SRat::var()
        } else {
            SRat::affine(&q(-1, 1), &q(self.m as i64, 1))
        }
    }

    /// The exceptional points of this branch, in recurrence order: the
    /// k-th coefficient may have poles at the first k of them only.
    pub fn exceptional_points(&self) -> Vec<Q> {
        let m = self.m as i64;
        (1..self.f.len() as i64)
            .map(|j| {
                if self.dual {
                    q(m - j, 2)
                } else {
                    q(m + j, 2)
                }
            })
            .collect()
    }
}

fn check_boundary_data(exp: &LaplacianExpansion, f0: &Jet<GaussQ>) -> Result<()> {
    if f0.vars() != &exp.cvars {
        return Err(Error::SignatureMismatch(
            exp.cvars.describe(),
            f0.vars().describe(),
        ));
    }
    if f0.terms().any(|(key, _)| key[0] != 0) {
        return Err(Error::SignatureMismatch(
            "x-free boundary jet".into(),
            "jet with positive powers of the collar variable".into(),
        ));
    }
    Ok(())
}

fn recurrence_with(
    exp: &LaplacianExpansion,
    f0: &Jet<GaussQ>,
    k_max: usize,
    dual: bool,
) -> Result<ScatteringExpansion> {
    check_boundary_data(exp, f0)?;
    if exp.levels.len() <= k_max {
        return Err(Error::TruncationTooLow {
            have: exp.levels.len().saturating_sub(1),
            need: k_max,
        });
    }
    let m = exp.m;
    let mut f: Vec<Jet<SRat>> = Vec::with_capacity(k_max + 1);
    f.push(f0.map_coeffs(f0.trunc(), true, srat_lift));
    for k in 1..=k_max {
        let mut sum = Jet::<SRat>::zero(&exp.cvars, f0.trunc());
        for l in 0..k {
            let shift = if dual {
                SRat::affine(&q(1, 1), &q(l as i64, 1))
            } else {
                SRat::affine(&q(-1, 1), &q((m + l) as i64, 1))
            };
            sum = &sum + &exp.levels[k - l].apply_at(&shift, &f[l], &srat_lift);
        }
        // Divide by −k(2s − m − k), or its mirror −k(m − 2s − k).
        let lin = if dual {
            SRat::affine(&q(-2, 1), &q(m as i64 - k as i64, 1))
        } else {
            SRat::affine(&q(2, 1), &q(-(m as i64) - k as i64, 1))
        };
        let inv = lin
            .field_inv()
            .ok_or_else(|| internal("indicial factor vanishes identically"))?;
        let mult = Coeff::mul(&SRat::constant(GaussQ::from_q(&q(-1, k as i64))), &inv);
        f.push(sum.scalar_mul(&mult));
    }
    let sc = ScatteringExpansion {
        m,
        n: m - 1,
        f,
        c: constants_ck(k_max),
        dual,
    };
    let exceptional = sc.exceptional_points();
    for (k, fk) in sc.f.iter().enumerate() {
        for (_, coeff) in fk.terms() {
            let den_deg = coeff.den().degree().unwrap_or(0);
            let mut located = 0;
            for s0 in &exceptional[..k.min(exceptional.len())] {
                let ord = coeff.pole_order_at(s0);
                if ord > 1 {
                    return Err(Error::HigherOrderPole {
                        at: fmt_q(s0),
                        order: ord,
                    });
                }
                located += ord;
            }
            if den_deg != located {
                return Err(internal("pole outside the exceptional set"));
            }
        }
    }
    Ok(sc)
}

/// Runs the direct-branch recurrence for u = x^{m−s}(f₀ + x f₁ + …),
/// given the Laplacian levels and x-free boundary data f₀.
pub fn recurrence_f(
    exp: &LaplacianExpansion,
    f0: &Jet<GaussQ>,
    k_max: usize,
) -> Result<ScatteringExpansion> {
    recurrence_with(exp, f0, k_max, false)
}

/// Runs the dual-branch recurrence for u = x^{s}(g₀ + x g₁ + …); the
/// result satisfies g_k(s) = f_k(m − s).
pub fn recurrence_g(
    exp: &LaplacianExpansion,
    g0: &Jet<GaussQ>,
    k_max: usize,
) -> Result<ScatteringExpansion> {
    recurrence_with(exp, g0, k_max, true)
}

/// Exact residue of every coefficient at s₀; errors on a pole of order
/// two or more.
pub fn residue_jet(fk: &Jet<SRat>, s0: &Q) -> Result<Jet<GaussQ>> {
    for (_, coeff) in fk.terms() {
        let ord = coeff.pole_order_at(s0);
        if ord > 1 {
            return Err(Error::HigherOrderPole {
                at: fmt_q(s0),
                order: ord,
            });
        }
    }
    Ok(fk.map_coeffs(fk.trunc(), true, |c| {
        c.residue_at(s0).expect("poles checked simple")
    }))
}

/// Evaluates every coefficient at s₀; errors if any coefficient has a
/// genuine pole there.
pub fn limit_jet(fk: &Jet<SRat>, s0: &Q) -> Result<Jet<GaussQ>> {
    for (_, coeff) in fk.terms() {
        if coeff.pole_order_at(s0) > 0 {
            return Err(internal(&format!(
                "coefficient has a pole at s = {}, the limit does not exist",
                fmt_q(s0)
            )));
        }
    }
    Ok(fk.map_coeffs(fk.trunc(), true, |c| {
        c.eval_q(s0).expect("poles checked absent")
    }))
}

/// The residue operator p_ℓ = Res_{s=(m+ℓ)/2} p_{ℓ,s}, of tangential
/// order at most 2ℓ.  Applying it runs the direct-branch recurrence on
/// the argument and takes the exact residue of f_ℓ.
#[derive(Clone, Debug)]
pub struct ResidueOp {
    l: usize,
    exp: LaplacianExpansion,
}

impl ResidueOp {
    /// Upper bound 2ℓ for the tangential order.
    pub fn order(&self) -> usize {
        2 * self.l
    }

    /// The exceptional point s = (m + ℓ)/2 the residue is taken at.
    pub fn pole(&self) -> Q {
        q((self.exp.m + self.l) as i64, 2)
    }

    /// Applies p_ℓ to an x-free boundary jet.
    pub fn apply(&self, f0: &Jet<GaussQ>) -> Result<Jet<GaussQ>> {
        let sc = recurrence_f(&self.exp, f0, self.l)?;
        residue_jet(&sc.f[self.l], &self.pole())
    }
}

/// Builds the residue operators p_ℓ for ℓ = 1..k_max.
pub fn residue_operators(
    exp: &LaplacianExpansion,
    k_max: usize,
) -> Result<BTreeMap<usize, ResidueOp>> {
    if exp.levels.len() <= k_max {
        return Err(Error::TruncationTooLow {
            have: exp.levels.len().saturating_sub(1),
            need: k_max,
        });
    }
    Ok((1..=k_max)
        .map(|l| {
            (
                l,
                ResidueOp {
                    l,
                    exp: exp.clone(),
                },
            )
        })
        .collect())
}

/// The critical-weight limit q = −lim_{s→m} f_m(s) for f₀ = 1.  For
/// constant data the pole at s = m cancels on any collar (the Laplacian
/// kills constants, so L_k(0)1 = 0 and inductively f_ℓ(m) = 0 for
/// ℓ < m); the value equals c_m times the boundary Q-curvature exactly
/// when the defining function solves the approximate Monge-Ampère
/// problem.  A surviving pole would signal corrupted level data and is
/// reported as an error.
pub fn q_curvature(exp: &LaplacianExpansion) -> Result<Jet<GaussQ>> {
    let m = exp.m;
    if exp.levels.len() <= m {
        return Err(Error::TruncationTooLow {
            have: exp.levels.len().saturating_sub(1),
            need: m,
        });
    }
    let tr = exp.levels[0].parts[0].p0.trunc();
    let one = Jet::one(&exp.cvars, tr);
    let sc = recurrence_f(exp, &one, m)?;
    let lim = limit_jet(&sc.f[m], &q(m as i64, 1))?;
    Ok(-&lim)
}

/// Applies the conjugated operator x^{−σ}(Δ_φ − s(m−s))x^{σ} to the
/// truncated series Σ_k x^k f_k and certifies that the x-coefficients
/// through the computed depth vanish identically in s, so the residual
/// is O(x^{σ+K+1}).  Returns the residual jet.
///
/// The operator is applied componentwise: on the x-free jet f_k the
/// conjugated Euler operator acts by the scalar σ + k, so each
/// component keeps its own truncation region and only the results are
/// summed.
pub fn defining_residual(op: &DiffOp, sc: &ScatteringExpansion) -> Result<Jet<SRat>> {
    let k_max = sc.f.len() - 1;
    if sc.f[0].vars() != &op.cvars {
        return Err(Error::SignatureMismatch(
            op.cvars.describe(),
            sc.f[0].vars().describe(),
        ));
    }
    let sigma = sc.indicial_power();
    let eig = SRat::from_poly(SPoly::from_coeffs(vec![
        GaussQ::zero(),
        GaussQ::from_q(&q(sc.m as i64, 1)),
        GaussQ::from_q(&q(-1, 1)),
    ]));
    let mut residual = Jet::<SRat>::zero(sc.f[0].vars(), sc.f[0].trunc());
    for (k, fk) in sc.f.iter().enumerate() {
        let shift = Coeff::add(&sigma, &SRat::constant(GaussQ::from_q(&q(k as i64, 1))));
        let mut acc = fk.scalar_mul(&eig.neg());
        let mut pw = SRat::constant(<GaussQ as Coeff>::one());
        for part in op.parts.iter() {
            acc = &acc + &part.apply_lifted(fk, &srat_lift).scalar_mul(&pw);
            pw = Coeff::mul(&pw, &shift);
        }
        residual = &residual + &acc.times_x_power(k as u16);
    }
    let head = match residual.trunc() {
        Trunc::Split { head, .. } => head as usize,
        Trunc::Total(_) => return Err(internal("residual lost its collar truncation")),
    };
    if head < k_max {
        return Err(Error::TruncationTooLow {
            have: head,
            need: k_max,
        });
    }
    for j in 0..=k_max {
        if !residual.x_coefficient(j as u16).is_zero_jet() {
            return Err(internal(&format!(
                "formal solution fails the defining property at collar order {j}"
            )));
        }
    }
    Ok(residual)
}
