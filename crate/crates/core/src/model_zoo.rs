//! Canonical strictly pseudoconvex geometries with closed-form data.
//!
//! The unit ball (sphere boundary) and the Siegel domain (Heisenberg
//! boundary) admit exact Monge-Ampère solutions: J[1 − |z|²] = 1 and
//! J[−φ_Siegel] = 1/4, both exactly as jets. Rational perturbations of
//! either model stay strictly pseudoconvex for small ε and exercise the
//! generic code paths, while the closed-form models supply the oracle
//! values the rest of the pipeline is tested against.

use crate::monge_ampere::DefiningFunction;
use crate::series_core::{gq, q, GaussQ, Jet, Q, Trunc, Vars};
use crate::{Error, Result};
use num::{One, Zero};

/// The built-in model families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Ball,
    Siegel,
    PerturbedBall,
    PerturbedSiegel,
    /// A user-supplied defining function; carries no closed-form data.
    Custom,
}

impl ModelKind {
    /// Stable lowercase name, also accepted by [`ModelKind::from_name`].
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ball => "ball",
            ModelKind::Siegel => "siegel",
            ModelKind::PerturbedBall => "perturbed-ball",
            ModelKind::PerturbedSiegel => "perturbed-siegel",
            ModelKind::Custom => "custom",
        }
    }

    pub fn from_name(name: &str) -> Option<ModelKind> {
        match name {
            "ball" => Some(ModelKind::Ball),
            "siegel" => Some(ModelKind::Siegel),
            "perturbed-ball" => Some(ModelKind::PerturbedBall),
            "perturbed-siegel" => Some(ModelKind::PerturbedSiegel),
            "custom" => Some(ModelKind::Custom),
            _ => None,
        }
    }
}

/// A model family at a fixed dimension with its perturbation size.
#[derive(Clone, Debug)]
pub struct ModelTag {
    pub kind: ModelKind,
    pub m: usize,
    /// Perturbation strength for the perturbed families, `None` otherwise.
    pub epsilon: Option<Q>,
}

impl ModelTag {
    /// Tag with the default perturbation ε = 1/100 where one applies.
    pub fn new(kind: ModelKind, m: usize) -> Result<Self> {
        let epsilon = match kind {
            ModelKind::PerturbedBall | ModelKind::PerturbedSiegel => Some(q(1, 100)),
            _ => None,
        };
        Self::build(kind, m, epsilon)
    }

    /// Tag with an explicit perturbation strength.
    pub fn with_epsilon(kind: ModelKind, m: usize, epsilon: Q) -> Result<Self> {
        match kind {
            ModelKind::PerturbedBall | ModelKind::PerturbedSiegel => {
                Self::build(kind, m, Some(epsilon))
            }
            _ => Err(Error::BadDefiningFunction(format!(
                "model {} takes no perturbation parameter",
                kind.name()
            ))),
        }
    }

    fn build(kind: ModelKind, m: usize, epsilon: Option<Q>) -> Result<Self> {
        if m < 2 {
            return Err(Error::BadDefiningFunction(format!(
                "dimension m = {m} is below 2, the boundary would not be a CR manifold"
            )));
        }
        Ok(ModelTag { kind, m, epsilon })
    }

    /// Whether the model carries a transitive symmetry group on the
    /// boundary, making every collar quantity independent of the
    /// boundary point.
    pub fn is_homogeneous(&self) -> bool {
        matches!(self.kind, ModelKind::Ball | ModelKind::Siegel)
    }

    /// Boundary volume density η(0) = m/2^m of a homogeneous model
    /// against the reference surface form (dθ)^{m−1} ∧ θ.
    pub fn boundary_volume_factor(&self) -> Option<Q> {
        if self.is_homogeneous() {
            Some(q(self.m as i64, 1 << self.m))
        } else {
            None
        }
    }
}

/// Default truncation order: enough for the Fefferman iteration to
/// certify its full contract and for the collar round-trip checks.
pub fn default_order(m: usize) -> u16 {
    (3 * m + 6) as u16
}

/// Builds the defining function of a model as a jet at its base point,
/// in coordinates recentred so the base point is the origin.
///
/// The ball accepts any rational point of the unit sphere (default
/// (1,0,…,0)); the Siegel domain is anchored at the origin. Strict
/// pseudoconvexity at the base point is checked by construction of the
/// [`DefiningFunction`], not assumed.
pub fn make_model(
    tag: &ModelTag,
    base_point: Option<&[GaussQ]>,
    order: Option<u16>,
) -> Result<DefiningFunction> {
    let m = tag.m;
    let n = order.unwrap_or_else(|| default_order(m));
    let vars = Vars::ambient(m);
    let tr = Trunc::Total(n);
    match tag.kind {
        ModelKind::Custom => Err(Error::BadDefiningFunction(
            "custom models are built from an explicit defining function, not from the zoo".into(),
        )),
        ModelKind::Ball | ModelKind::PerturbedBall => {
            let p: Vec<GaussQ> = match base_point {
                None => {
                    let mut p = vec![GaussQ::zero(); m];
                    p[0] = GaussQ::one();
                    p
                }
                Some(p) => {
                    check_sphere_point(p, m)?;
                    p.to_vec()
                }
            };
            // φ = |z|² − 1 recentred at p: |w|² + 2 Re ⟨w, p⟩.
            let mut phi = Jet::zero(&vars, tr);
            for j in 0..m {
                let wj = Jet::var(&vars, tr, j);
                let wbj = Jet::var(&vars, tr, m + j);
                phi = &phi + &(&wj * &wbj);
                phi = &phi + &wj.scalar_mul(&p[j].conj());
                phi = &phi + &wbj.scalar_mul(&p[j]);
            }
            if tag.kind == ModelKind::PerturbedBall {
                phi = &phi * &perturbation_factor(tag, &vars, tr, &p[0])?;
            }
            DefiningFunction::new(m, phi, p)
        }
        ModelKind::Siegel | ModelKind::PerturbedSiegel => {
            if let Some(p) = base_point {
                if !p.iter().all(GaussQ::is_zero) {
                    return Err(Error::BadDefiningFunction(
                        "the Siegel model is anchored at the origin".into(),
                    ));
                }
            }
            // φ = |z′|² − Im z_m = |z′|² + (i/2) z_m − (i/2) z̄_m.
            let mut phi = Jet::zero(&vars, tr);
            for a in 0..m - 1 {
                let za = Jet::var(&vars, tr, a);
                let zba = Jet::var(&vars, tr, m + a);
                phi = &phi + &(&za * &zba);
            }
            let zm = Jet::var(&vars, tr, m - 1);
            let zbm = Jet::var(&vars, tr, 2 * m - 1);
            phi = &phi + &zm.scalar_mul(&gq(0, 1, 1, 2));
            phi = &phi + &zbm.scalar_mul(&gq(0, 1, -1, 2));
            if tag.kind == ModelKind::PerturbedSiegel {
                phi = &phi * &perturbation_factor(tag, &vars, tr, &GaussQ::zero())?;
            }
            DefiningFunction::new(m, phi, vec![GaussQ::zero(); m])
        }
    }
}

/// Multiplier 1 + ε Re z₁ expressed in coordinates recentred at the base
/// point, whose first original coordinate is `p1`.
fn perturbation_factor(
    tag: &ModelTag,
    vars: &std::sync::Arc<Vars>,
    tr: Trunc,
    p1: &GaussQ,
) -> Result<Jet<GaussQ>> {
    let eps = tag.epsilon.clone().ok_or_else(|| {
        Error::BadDefiningFunction("perturbed model lacks a perturbation strength".into())
    })?;
    let kappa = Q::one() + eps.clone() * p1.re.clone();
    if kappa <= Q::zero() {
        return Err(Error::BadDefiningFunction(format!(
            "perturbation factor 1 + ε Re z₁ = {kappa} is not positive at the base point"
        )));
    }
    let half_eps = eps / q(2, 1);
    let w1 = Jet::var(vars, tr, 0);
    let w1b = Jet::var(vars, tr, tag.m);
    let re_w1 = &w1 + &w1b;
    Ok(&Jet::constant(vars, tr, GaussQ::from(kappa)) + &re_w1.scalar_q(&half_eps))
}

fn check_sphere_point(p: &[GaussQ], m: usize) -> Result<()> {
    if p.len() != m {
        return Err(Error::BadDefiningFunction(format!(
            "base point has {} coordinates, expected {m}",
            p.len()
        )));
    }
    let norm: GaussQ = p.iter().map(|c| c.clone() * c.conj()).sum();
    if norm != GaussQ::one() {
        return Err(Error::BadDefiningFunction(format!(
            "base point is not on the unit sphere: |p|² = {} + {}i",
            norm.re, norm.im
        )));
    }
    Ok(())
}

/// Deterministic rational points on the unit sphere of ℂ^m, via the
/// stereographic parametrization of S^{2m−1} ⊂ ℝ^{2m} from −e₁: every
/// rational tangent vector t maps to ((1−|t|²)/(1+|t|²), 2t/(1+|t|²)).
pub fn rational_sphere_points(m: usize, count: usize) -> Vec<Vec<GaussQ>> {
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        // Small deterministic tangent vectors with varied denominators.
        let t: Vec<Q> = (0..2 * m - 1)
            .map(|i| {
                let num = ((k + i * i + 3 * i) % 5) as i64 - 2;
                let den = ((k + i) % 3) as i64 + 1;
                q(num, den)
            })
            .collect();
        let norm2: Q = t.iter().map(|v| v.clone() * v.clone()).sum();
        let denom = Q::one() + norm2.clone();
        let mut reals = Vec::with_capacity(2 * m);
        reals.push((Q::one() - norm2) / denom.clone());
        for v in &t {
            reals.push(q(2, 1) * v.clone() / denom.clone());
        }
        let p: Vec<GaussQ> = (0..m)
            .map(|j| GaussQ::new(reals[2 * j].clone(), reals[2 * j + 1].clone()))
            .collect();
        out.push(p);
    }
    out
}

/// Closed-form oracle values of a homogeneous model.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceValues {
    /// Boundary value of the transverse curvature r.
    pub r_boundary: Q,
    /// The pseudohermitian torsion vanishes identically.
    pub torsion_vanishes: bool,
    /// The Webster scalar curvature vanishes identically.
    pub webster_scalar_vanishes: bool,
    /// CR Q-curvature times the scattering constant c_m.
    pub q_times_cm: Q,
    /// Volume density at the boundary against the reference surface form.
    pub eta0: Q,
    /// Volume coefficients c_0..c_{m−1} per unit boundary measure; the
    /// log coefficient vanishes for both closed-form models.
    pub volume_coefficients: Vec<Q>,
}

/// Oracle table for the closed-form models; perturbed and custom tags
/// have no closed-form references.
pub fn reference_values(tag: &ModelTag) -> Result<ReferenceValues> {
    let m = tag.m;
    let eta0 = q(m as i64, 1 << m);
    match tag.kind {
        ModelKind::Ball => Ok(ReferenceValues {
            r_boundary: q(1, 1),
            torsion_vanishes: true,
            webster_scalar_vanishes: false,
            q_times_cm: q(0, 1),
            eta0: eta0.clone(),
            // η(x) = η₀ (1−x)^{m−1}, so c_k = binom(m−1,k)(−1)^k η₀/(m−k).
            volume_coefficients: (0..m)
                .map(|k| {
                    let sign = if k % 2 == 0 { 1 } else { -1 };
                    q(sign * binom(m - 1, k), (m - k) as i64) * eta0.clone()
                })
                .collect(),
        }),
        ModelKind::Siegel => Ok(ReferenceValues {
            r_boundary: q(0, 1),
            torsion_vanishes: true,
            webster_scalar_vanishes: true,
            q_times_cm: q(0, 1),
            eta0: eta0.clone(),
            // η(x) = η₀ exactly: only the leading coefficient survives.
            volume_coefficients: (0..m)
                .map(|k| {
                    if k == 0 {
                        eta0.clone() / q(m as i64, 1)
                    } else {
                        q(0, 1)
                    }
                })
                .collect(),
        }),
        _ => Err(Error::NoReferenceValues(tag.kind.name().into())),
    }
}

fn binom(n: usize, k: usize) -> i64 {
    if k > n {
        return 0;
    }
    let mut v = 1i64;
    for i in 0..k {
        v = v * (n - i) as i64 / (i + 1) as i64;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monge_ampere::{einstein_check, fefferman_iterate, ma_operator};

    #[test]
    fn ball_and_siegel_have_exact_operator_constants() {
        for m in [2usize, 3] {
            let tag = ModelTag::new(ModelKind::Ball, m).unwrap();
            let df = make_model(&tag, None, Some(8)).unwrap();
            let j = ma_operator(&(-df.phi()), m).unwrap();
            assert_eq!(j, Jet::one(df.phi().vars(), j.trunc()), "ball m = {m}");
            assert_eq!(df.levi_determinant(), q(1, 1));

            let tag = ModelTag::new(ModelKind::Siegel, m).unwrap();
            let df = make_model(&tag, None, Some(8)).unwrap();
            let j = ma_operator(&(-df.phi()), m).unwrap();
            let quarter = Jet::constant(df.phi().vars(), j.trunc(), gq(1, 4, 0, 1));
            assert_eq!(j, quarter, "siegel m = {m}");
            assert_eq!(df.levi_determinant(), q(1, 1));
        }
    }

    #[test]
    fn siegel_is_a_fixed_point_with_relative_constant() {
        let m = 2;
        let tag = ModelTag::new(ModelKind::Siegel, m).unwrap();
        let df = make_model(&tag, None, None).unwrap();
        let sol = fefferman_iterate(&df).unwrap();
        assert_eq!(sol.ma_constant, q(1, 4));
        assert_eq!(sol.u, (-df.phi()).truncate_to(sol.u.trunc()));
        assert_eq!(sol.achieved_order, m + 2);
        let sentinel = sol.u.trunc().degree_bound() - 4 + 1;
        assert_eq!(einstein_check(&sol).unwrap(), sentinel);
    }

    #[test]
    fn perturbed_models_stay_admissible_and_normalize() {
        let m = 2;
        let tag = ModelTag::new(ModelKind::PerturbedBall, m).unwrap();
        let df = make_model(&tag, None, Some((3 * m + 4) as u16)).unwrap();
        let sol = fefferman_iterate(&df).unwrap();
        // J₀ = (1+ε)^{m+1} has the rational root 1+ε, so the constant
        // normalizes to 1 exactly.
        assert_eq!(sol.ma_constant, q(1, 1));
        assert!(sol.achieved_order >= m + 1);

        let tag = ModelTag::new(ModelKind::PerturbedSiegel, m).unwrap();
        let df = make_model(&tag, None, Some((3 * m + 4) as u16)).unwrap();
        let sol = fefferman_iterate(&df).unwrap();
        assert_eq!(sol.ma_constant, q(1, 4));
        assert!(sol.achieved_order >= m + 1);
    }

    #[test]
    fn sphere_points_are_on_the_sphere_and_admissible() {
        let m = 2;
        let pts = rational_sphere_points(m, 6);
        assert_eq!(pts.len(), 6);
        let tag = ModelTag::new(ModelKind::Ball, m).unwrap();
        for p in &pts {
            let norm: GaussQ = p.iter().map(|c| c.clone() * c.conj()).sum();
            assert_eq!(norm, GaussQ::one());
            let df = make_model(&tag, Some(p), Some(6)).unwrap();
            assert!(df.levi_determinant() > q(0, 1));
        }
    }

    #[test]
    fn reference_table_and_errors() {
        let m = 3;
        let ball = reference_values(&ModelTag::new(ModelKind::Ball, m).unwrap()).unwrap();
        assert_eq!(ball.r_boundary, q(1, 1));
        assert_eq!(ball.eta0, q(3, 8));
        // c_k = binom(2,k)(−1)^k η₀/(3−k): 1/8, −3/8, 3/8.
        assert_eq!(ball.volume_coefficients, vec![q(1, 8), q(-3, 8), q(3, 8)]);
        let siegel = reference_values(&ModelTag::new(ModelKind::Siegel, m).unwrap()).unwrap();
        assert_eq!(siegel.r_boundary, q(0, 1));
        assert!(siegel.webster_scalar_vanishes);
        assert_eq!(siegel.volume_coefficients, vec![q(1, 8), q(0, 1), q(0, 1)]);
        assert!(matches!(
            reference_values(&ModelTag::new(ModelKind::PerturbedBall, m).unwrap()),
            Err(Error::NoReferenceValues(_))
        ));
        assert!(ModelTag::new(ModelKind::Ball, 1).is_err());
        assert!(ModelTag::with_epsilon(ModelKind::Ball, 2, q(1, 10)).is_err());
    }
}
