//! Collar geometry of the Kähler metric of a defining function: the
//! normal-flow chart off the boundary, the composed inverse metric with
//! its volume density, the Laplacian as an exact collar operator, and
//! its level expansion Δ_φ = Σ_k x^k L_k into boundary operators.
//!
//! Conventions used throughout. The metric of a defining function φ is
//! g_{jk̄} = ∂_j∂_k̄ log(1/(−φ)) = (φ_jφ_k̄ − φφ_{jk̄})/φ², equivalently
//! g = h_{αβ̄}θ^αθ^β̄/(−φ) + (1−rφ)∂φ∂̄φ/φ² in the adapted coframe, and
//! the Laplacian is Δ_φ = −g^{jk̄}∂_j∂_k̄. (Some treatments scale this
//! Laplacian by −4; the normalization here makes the indicial roots 0
//! and m.) The collar variable is x = −φ along the flow of −N/2, where
//! N = ξ + ξ̄, so N = −2∂_x exactly in the collar and x∂x is the radial
//! Euler operator. The levels start with L₀ = −((x∂x)² − m·x∂x) and,
//! with the positive-type sublaplacian Δ_b, L₁ = r₀(x∂x)² − Δ_b/2; the
//! sign of the r₀ term and the indicial exponent x^{m−s+k} used by the
//! scattering recurrences are the ones forced by direct expansion,
//! pinned on the ball where r composes to 1/(1−x). The volume density
//! η is defined by ω_φ^m = (η/x^m)(dx/x)∧(dθ)^n∧θ, where θ is the
//! boundary restriction of Θ = (i/2)(∂̄−∂)φ carried along the collar
//! projection (an x-free reference form); it has the universal boundary
//! value η|_{x=0} = m/2^m.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::sync::Arc;

use crate::cr_frames::{boundary_chart, split_xi, BoundaryChart, FrameData};
use crate::monge_ampere::ma_operator;
use crate::series_core::{
    gq, is_positive_real, jet_det, jet_matrix_inverse, jets_equal, q, Coeff, GaussQ, Jet, Trunc,
    Vars,
};
use crate::{Error, Result};

fn internal(msg: &str) -> Error {
    Error::Internal(msg.to_string())
}

/// Rebases an x-free jet onto a wider collar truncation; sound exactly
/// because no region a promotion adds can hold nonzero coefficients.
fn promote(f: &Jet<GaussQ>, trunc: Trunc) -> Jet<GaussQ> {
    assert!(
        f.terms().all(|(key, _)| key[0] == 0),
        "promotion needs an x-free jet"
    );
    f.map_coeffs(trunc, true, GaussQ::clone)
}

/// The normal-flow collar of the boundary: ambient coordinates as jets
/// in (x, t, w, w̄) with the composed metric data of the flow gauge.
#[derive(Clone, Debug)]
pub struct Collar {
    pub m: usize,
    /// Collar variable signature (x, t, w_a, w̄_a).
    pub cvars: Arc<Vars>,
    /// Certified x-order of operator coefficients built from this collar.
    pub head: u16,
    /// Certified boundary order of operator coefficients.
    pub tail: u16,
    /// Images z_J ∘ Z of the ambient coordinates; the upper half holds
    /// the conjugates.
    pub z: Vec<Jet<GaussQ>>,
    /// Jacobian rows jac[c][J] = ∂_c(z_J ∘ Z) over collar variables c.
    pub jac: Vec<Vec<Jet<GaussQ>>>,
    /// Inverse Jacobian: (∂_J f) ∘ Z = Σ_c minv[J][c] ∂_c (f ∘ Z).
    pub minv: Vec<Vec<Jet<GaussQ>>>,
    /// Composed inverse metric ginv[j][k] = g^{jk̄} ∘ Z.
    pub ginv: Vec<Vec<Jet<GaussQ>>>,
    /// Composed matrix (φ_j φ_k̄ − φ φ_{jk̄}) ∘ Z = (φ² g_{jk̄}) ∘ Z.
    pub a_matrix: Vec<Vec<Jet<GaussQ>>>,
    /// Unit in det(a_matrix) = x^{m−1} e; equals the composed complex
    /// Monge-Ampère determinant of −φ.
    pub e: Jet<GaussQ>,
    /// Composed transverse curvature r ∘ Z.
    pub r: Jet<GaussQ>,
    /// The x = 0 chart the flow starts from.
    pub chart: BoundaryChart,
}

/// Ambient truncation order needed for a collar of the given operator
/// depth and boundary order.
pub fn required_ambient_order(m: usize, k_op: u16, tail: u16) -> u16 {
    // Flow head k_op + m + 1 pays for the x-divisions of the
    // determinant and the double normal derivative; flow tail tail + 2
    // pays for the Jacobian inverse and its derivative; two more orders
    // feed the ambient Hessians.
    k_op + m as u16 + 1 + tail + 2 + 2
}

/// Integrates the normal flow dZ/dx = −(N ∘ Z)/2 off the boundary chart
/// and assembles the composed metric data of the collar gauge.
pub fn build_collar(frame: &FrameData, k_op: u16, tail: u16) -> Result<Collar> {
    let m = frame.m;
    let namb = match frame.phi.trunc() {
        Trunc::Total(n) => n,
        other => {
            return Err(internal(&format!(
                "defining function must carry a total truncation, got {}",
                other.describe()
            )))
        }
    };
    let need = required_ambient_order(m, k_op, tail);
    if namb < need {
        return Err(Error::TruncationTooLow {
            have: namb as usize,
            need: need as usize,
        });
    }
    let fh = k_op + m as u16 + 1;
    let ft = tail + 2;
    let strunc = Trunc::Split { head: fh, tail: ft };

    let chart = boundary_chart(frame, ft)?;
    let cvars = Arc::clone(&chart.cvars);
    let x = Jet::var(&cvars, strunc, 0);
    let (n_field, _) = split_xi(frame);

    // One x-order per step: the x^{k+1} slice of Z is the x^k slice of
    // the rate −(N ∘ Z)/2 divided by k + 1, a triangular recursion.
    let mut z: Vec<Jet<GaussQ>> = chart.images.iter().map(|f| promote(f, strunc)).collect();
    for k in 0..fh {
        let ztr = Trunc::Split { head: k, tail: ft };
        let zk: Vec<Jet<GaussQ>> = z.iter().map(|f| f.truncate_to(ztr)).collect();
        for (j, nf) in n_field.iter().enumerate() {
            let slice = nf.compose(&zk).x_coefficient(k);
            if slice.is_zero_jet() {
                continue;
            }
            let step = promote(&slice, strunc)
                .times_x_power(k + 1)
                .scalar_q(&q(-1, 2 * (i64::from(k) + 1)));
            z[j] = &z[j] + &step;
        }
    }
    for j in 0..m {
        if !jets_equal(&z[m + j], &z[j].conj()) {
            return Err(internal("normal flow lost conjugation symmetry"));
        }
    }
    if !jets_equal(&frame.phi.compose(&z), &-&x) {
        return Err(internal("normal flow does not straighten φ to −x"));
    }

    let jtr = Trunc::Split {
        head: fh - 1,
        tail: ft - 1,
    };
    let jac: Vec<Vec<Jet<GaussQ>>> = (0..2 * m)
        .map(|c| {
            (0..2 * m)
                .map(|jj| z[jj].derive(c).truncate_to(jtr))
                .collect()
        })
        .collect();
    let minv = jet_matrix_inverse(&jac)?;

    // Chain rule certified on φ itself: since φ ∘ Z = −x has no
    // tangential content, (∂_J φ) ∘ Z must equal −minv[J][0].
    let phi_d: Vec<Jet<GaussQ>> = (0..2 * m).map(|j| frame.phi.derive(j)).collect();
    let pdc: Vec<Jet<GaussQ>> = phi_d.iter().map(|pd| pd.compose(&z)).collect();
    for (jj, pd) in pdc.iter().enumerate() {
        if !jets_equal(pd, &-&minv[jj][0]) {
            return Err(internal("inverse Jacobian fails the chain rule on φ"));
        }
    }

    // (φ_j φ_k̄ − φ φ_{jk̄}) ∘ Z, composing the sparse factors and using
    // φ ∘ Z = −x for the second product.
    let mut a_matrix: Vec<Vec<Jet<GaussQ>>> = Vec::with_capacity(m);
    for j in 0..m {
        let mut row = Vec::with_capacity(m);
        for k in 0..m {
            let hessc = phi_d[j].derive(m + k).compose(&z);
            row.push(&(&pdc[j] * &pdc[m + k]) + &hessc.times_x_power(1));
        }
        a_matrix.push(row);
    }

    let mut e = jet_det(&a_matrix);
    for _ in 1..m {
        e = e.divide_by_var(0)?;
    }
    if !jets_equal(&e, &e.conj()) {
        return Err(internal("determinant unit is not a real series"));
    }
    if !is_positive_real(&e.c0()) {
        return Err(Error::BadDefiningFunction(
            "composed Levi determinant is not positive at the boundary".into(),
        ));
    }
    let j_col = ma_operator(&-&frame.phi, m)?.compose(&z);
    if !jets_equal(&j_col, &e) {
        return Err(internal(
            "determinant unit disagrees with the Monge-Ampère operator",
        ));
    }

    // Adjugate over x^{m−2}, so bmat · a_matrix = x e · id exactly.
    let mut bmat: Vec<Vec<Jet<GaussQ>>> = Vec::with_capacity(m);
    for i in 0..m {
        let mut row = Vec::with_capacity(m);
        for jj in 0..m {
            let minor: Vec<Vec<Jet<GaussQ>>> = (0..m)
                .filter(|&rr| rr != jj)
                .map(|rr| {
                    (0..m)
                        .filter(|&cc| cc != i)
                        .map(|cc| a_matrix[rr][cc].clone())
                        .collect()
                })
                .collect();
            let mut cof = jet_det(&minor);
            if (i + jj) % 2 == 1 {
                cof = -&cof;
            }
            for _ in 2..m {
                cof = cof.divide_by_var(0)?;
            }
            row.push(cof);
        }
        bmat.push(row);
    }
    let xe = e.times_x_power(1);
    for j in 0..m {
        for l in 0..m {
            let mut s = Jet::zero(&cvars, strunc);
            for k in 0..m {
                s = &s + &(&bmat[j][k] * &a_matrix[k][l]);
            }
            let ok = if j == l {
                jets_equal(&s, &xe)
            } else {
                s.is_zero_jet()
            };
            if !ok {
                return Err(internal("adjugate identity failed"));
            }
        }
    }

    // g^{jk̄} ∘ Z = x² (a_matrix⁻¹)ᵀ, assembled as x bmatᵀ / e and
    // certified against a_matrix directly.
    let e_inv = e.inverse()?;
    let mut ginv: Vec<Vec<Jet<GaussQ>>> = Vec::with_capacity(m);
    for j in 0..m {
        let mut row = Vec::with_capacity(m);
        for k in 0..m {
            row.push((&bmat[k][j] * &e_inv).times_x_power(1));
        }
        ginv.push(row);
    }
    let x2 = x.times_x_power(1);
    for j in 0..m {
        for l in 0..m {
            let mut s = Jet::zero(&cvars, strunc);
            for k in 0..m {
                s = &s + &(&ginv[j][k] * &a_matrix[l][k]);
            }
            let ok = if j == l {
                jets_equal(&s, &x2)
            } else {
                s.is_zero_jet()
            };
            if !ok {
                return Err(internal("inverse metric certificate failed"));
            }
        }
    }

    let r = frame.r.compose(&z);
    Ok(Collar {
        m,
        cvars,
        head: k_op,
        tail,
        z,
        jac,
        minv,
        ginv,
        a_matrix,
        e,
        r,
        chart,
    })
}

/// Metric data in the adapted coframe {θ^α, ∂φ}, with the collar
/// volume density.
#[derive(Clone, Debug)]
pub struct MetricData {
    pub m: usize,
    /// Levi block h_{αβ̄}; the metric divides it by −φ.
    pub levi_block: Vec<Vec<Jet<GaussQ>>>,
    /// 1 − rφ; the metric divides it by φ², so g(N, N) = 4(1−rφ)/φ².
    pub normal_block: Jet<GaussQ>,
    /// Normal scaling nu = −φ/(2√(1−rφ)), making ν = nu·N a g-unit field.
    pub nu: Jet<GaussQ>,
    /// Collar density η with ω_φ^m = (η/x^m)(dx/x)∧(dθ)^n∧θ for the
    /// x-free boundary contact volume (dθ)^n∧θ.
    pub volume_density: Jet<GaussQ>,
}

/// Assembles the coframe metric blocks, the unit normal scaling, and
/// the collar volume density; the square 4ν²(1−rφ) = φ² is certified
/// exactly, and with dφ(N) = 2 it gives g(N, N)·φ²/(1−rφ) = 4.
pub fn assemble_metric(frame: &FrameData, collar: &Collar) -> Result<MetricData> {
    let rp = &frame.r * &frame.phi;
    let omrp = &Jet::one(frame.phi.vars(), rp.trunc()) - &rp;
    let nu = &frame.phi.scalar_q(&q(-1, 2)) * &omrp.pow_q(&q(-1, 2))?;
    let square = (&(&nu * &nu) * &omrp).scalar_q(&q(4, 1));
    if !jets_equal(&square, &(&frame.phi * &frame.phi)) {
        return Err(internal("normal scaling ν fails its defining square"));
    }
    let volume_density = volume_density_eta(frame, collar)?;
    Ok(MetricData {
        m: collar.m,
        levi_block: frame.h.clone(),
        normal_block: omrp,
        nu,
        volume_density,
    })
}

/// Exterior forms on the collar chart, keyed by a bitmask over the
/// coordinate differentials.
type PForm = BTreeMap<u32, Jet<GaussQ>>;

/// Parity of #{(i, j) : i ∈ a, j ∈ b, i > j}, the reordering sign of a
/// wedge of sorted basis blocks.
fn form_sign(a: u32, b: u32) -> bool {
    let mut inversions = 0u32;
    let mut bb = b;
    while bb != 0 {
        let j = bb.trailing_zeros();
        inversions += (a >> (j + 1)).count_ones();
        bb &= bb - 1;
    }
    inversions % 2 == 1
}

fn wedge(a: &PForm, b: &PForm) -> PForm {
    let mut out = PForm::new();
    for (ka, fa) in a {
        for (kb, fb) in b {
            if ka & kb != 0 {
                continue;
            }
            let mut term = fa * fb;
            if form_sign(*ka, *kb) {
                term = -&term;
            }
            match out.entry(ka | kb) {
                Entry::Vacant(v) => {
                    v.insert(term);
                }
                Entry::Occupied(mut o) => {
                    let sum = &*o.get() + &term;
                    *o.get_mut() = sum;
                }
            }
        }
    }
    out.retain(|_, f| !f.is_zero_jet());
    out
}

fn one_form(comps: &[Jet<GaussQ>]) -> PForm {
    let mut out = PForm::new();
    for (c, f) in comps.iter().enumerate() {
        if !f.is_zero_jet() {
            out.insert(1u32 << c, f.clone());
        }
    }
    out
}

fn d_one_form(comps: &[Jet<GaussQ>]) -> PForm {
    let mut out = PForm::new();
    for c in 0..comps.len() {
        for d in c + 1..comps.len() {
            let f = &comps[d].derive(c) - &comps[c].derive(d);
            if !f.is_zero_jet() {
                out.insert((1u32 << c) | (1u32 << d), f);
            }
        }
    }
    out
}

/// Normalizes to the representative with positive leading value; the
/// raw ratio of top forms carries the orientation constant of the
/// contact volume, which is a convention, not data.
fn orient(f: Jet<GaussQ>) -> Result<Jet<GaussQ>> {
    if is_positive_real(&f.c0()) {
        return Ok(f);
    }
    let g = -&f;
    if is_positive_real(&g.c0()) {
        return Ok(g);
    }
    Err(internal("volume density has no positive leading value"))
}

/// η from the ratio of pulled-back top forms, cross-checked against the
/// determinant bookkeeping and the universal boundary value.
fn volume_density_eta(frame: &FrameData, collar: &Collar) -> Result<Jet<GaussQ>> {
    let m = collar.m;
    let n = m - 1;
    let nv = 2 * m;
    let full: u32 = (1u32 << nv) - 1;
    let jtr = collar.jac[0][0].trunc();
    let half_i = gq(0, 1, 1, 2);

    // Pullback of φ²ω_φ = (i/2) Σ (φ_jφ_k̄ − φφ_{jk̄}) dz_j ∧ dz̄_k.
    let mut w2 = PForm::new();
    for j in 0..m {
        for k in 0..m {
            if collar.a_matrix[j][k].is_zero_jet() {
                continue;
            }
            let coeff = collar.a_matrix[j][k].scalar_mul(&half_i);
            let left: Vec<Jet<GaussQ>> =
                (0..nv).map(|c| &collar.jac[c][j] * &coeff).collect();
            let right: Vec<Jet<GaussQ>> =
                (0..nv).map(|c| collar.jac[c][m + k].clone()).collect();
            for (key, f) in wedge(&one_form(&left), &one_form(&right)) {
                match w2.entry(key) {
                    Entry::Vacant(v) => {
                        v.insert(f);
                    }
                    Entry::Occupied(mut o) => {
                        let sum = &*o.get() + &f;
                        *o.get_mut() = sum;
                    }
                }
            }
        }
    }
    let mut top = w2.clone();
    for _ in 1..m {
        top = wedge(&top, &w2);
    }
    let t2m = top
        .get(&full)
        .cloned()
        .ok_or_else(|| internal("degenerate pullback of the volume form"))?;

    // Wedge algebra against determinant bookkeeping:
    // t2m = m! (i/2)^m (−1)^{m(m−1)/2} det(a_matrix) det(jac).
    let mut cm = GaussQ::one();
    for i in 2..=m as i64 {
        cm = cm.mul(&GaussQ::from_q(&q(i, 1)));
    }
    for _ in 0..m {
        cm = cm.mul(&half_i);
    }
    if (m * (m - 1) / 2) % 2 == 1 {
        cm = cm.neg();
    }
    let det_j = jet_det(&collar.jac);
    let det_route = (&collar.e * &det_j)
        .scalar_mul(&cm)
        .times_x_power(m as u16 - 1);
    if !jets_equal(&t2m, &det_route) {
        return Err(internal("wedge power disagrees with the determinant route"));
    }

    // Reference top form dx ∧ (dΘc)^n ∧ Θc from the pulled-back contact
    // form Θc.
    let theta_col: Vec<Jet<GaussQ>> = (0..nv)
        .map(|jj| frame.theta[jj].compose(&collar.z))
        .collect();
    let tc: Vec<Jet<GaussQ>> = (0..nv)
        .map(|c| {
            let mut s = Jet::zero(&collar.cvars, jtr);
            for jj in 0..nv {
                s = &s + &(&theta_col[jj] * &collar.jac[c][jj]);
            }
            s
        })
        .collect();
    // Θ(N) = (i/2)(∂̄φ(ξ̄) − ∂φ(ξ)) vanishes by the frame
    // normalization, so the pullback has no dx component.
    if !tc[0].is_zero_jet() {
        return Err(internal("contact form pullback has a dx component"));
    }
    // The reference volume is the boundary contact volume carried along
    // the collar projection: only the x = 0 components of Θ enter.
    let tc: Vec<Jet<GaussQ>> = tc.iter().map(|f| f.x_coefficient(0)).collect();
    let mut dx_form = PForm::new();
    dx_form.insert(1u32, Jet::one(&collar.cvars, jtr));
    let dtc = d_one_form(&tc);
    let mut mu = dx_form;
    for _ in 0..n {
        mu = wedge(&mu, &dtc);
    }
    mu = wedge(&mu, &one_form(&tc));
    let top_mu = mu
        .get(&full)
        .cloned()
        .ok_or_else(|| internal("degenerate contact volume on the boundary"))?;

    let mut num = t2m;
    for _ in 1..m {
        num = num.divide_by_var(0)?;
    }
    let eta_raw = &num * &top_mu.inverse()?;
    if !jets_equal(&eta_raw, &eta_raw.conj()) {
        return Err(internal("volume density is not a real series"));
    }
    let eta = orient(eta_raw)?;
    let lead = eta.x_coefficient(0);
    let expect = Jet::from_q(&collar.cvars, lead.trunc(), &q(m as i64, 1i64 << m));
    if !jets_equal(&lead, &expect) {
        return Err(internal("volume density boundary value is not m/2^m"));
    }
    Ok(eta)
}

/// Second-order block in the tangential chart derivatives
/// (∂_t, ∂_{w_a}, ∂_{w̄_a}); p2 is upper-triangular in c ≤ d.
#[derive(Clone, Debug)]
pub struct TangentialOp {
    /// Coefficients of ∂_c ∂_d for tangential indices c ≤ d.
    pub p2: Vec<Vec<Jet<GaussQ>>>,
    /// Coefficients of ∂_c.
    pub p1: Vec<Jet<GaussQ>>,
    /// Multiplication part.
    pub p0: Jet<GaussQ>,
}

impl TangentialOp {
    fn zero(vars: &Arc<Vars>, trunc: Trunc, nt: usize) -> Self {
        let z = Jet::zero(vars, trunc);
        TangentialOp {
            p2: vec![vec![z.clone(); nt]; nt],
            p1: vec![z.clone(); nt],
            p0: z,
        }
    }

    /// Applies the block to a jet, lifting coefficients through `lift`,
    /// which must commute with conjugation.
    pub fn apply_lifted<D: Coeff, F: Fn(&GaussQ) -> D>(&self, f: &Jet<D>, lift: &F) -> Jet<D> {
        let mut out = Jet::zero(f.vars(), f.trunc());
        if !self.p0.is_zero_jet() {
            out = &out + &(&lift_jet(&self.p0, lift) * f);
        }
        for c in 0..self.p1.len() {
            if !self.p1[c].is_zero_jet() {
                out = &out + &(&lift_jet(&self.p1[c], lift) * &f.derive(c + 1));
            }
            for d in c..self.p1.len() {
                if !self.p2[c][d].is_zero_jet() {
                    let df = f.derive(c + 1).derive(d + 1);
                    out = &out + &(&lift_jet(&self.p2[c][d], lift) * &df);
                }
            }
        }
        out
    }
}

fn lift_jet<D: Coeff, F: Fn(&GaussQ) -> D>(c: &Jet<GaussQ>, lift: &F) -> Jet<D> {
    c.map_coeffs(c.trunc(), true, lift)
}

fn apply_parts(parts: &[TangentialOp], u: &Jet<GaussQ>) -> Jet<GaussQ> {
    let mut out = Jet::zero(u.vars(), u.trunc());
    let mut v = u.clone();
    for (a, part) in parts.iter().enumerate() {
        if a > 0 {
            v = v.euler_x();
        }
        out = &out + &part.apply_lifted(&v, &GaussQ::clone);
    }
    out
}

/// Collar differential operator in the normal form
/// Σ_a C_a(x, y) (x∂x)^a B_a with tangential blocks B_a of differential
/// order at most two; parts[a] multiplies (x∂x)^a.
#[derive(Clone, Debug)]
pub struct DiffOp {
    pub m: usize,
    pub cvars: Arc<Vars>,
    /// Certified x-order of the coefficients.
    pub head: u16,
    /// Certified boundary order of the coefficients.
    pub tail: u16,
    pub parts: Vec<TangentialOp>,
}

impl DiffOp {
    /// Applies the operator to a collar jet, x∂x acting as the exact
    /// Euler operator.
    pub fn apply(&self, u: &Jet<GaussQ>) -> Jet<GaussQ> {
        apply_parts(&self.parts, u)
    }
}

/// The Laplacian Δ_φ = −g^{jk̄} ∂_j ∂_k̄ as a collar operator, built
/// from the composed inverse metric through the chain rule.
pub fn gl_laplacian(collar: &Collar) -> Result<DiffOp> {
    let m = collar.m;
    let nv = 2 * m;
    let nt = nv - 1;
    let cvars = &collar.cvars;
    let fh = collar.head + m as u16 + 1;
    let ft = collar.tail + 2;
    let wide = Trunc::Split { head: fh, tail: ft };

    // Raw chart-derivative coefficients: (Δ_φ u) ∘ Z =
    // Σ p2[c][d] ∂_c ∂_d U + Σ p1[d] ∂_d U for U = u ∘ Z.
    let mut p2 = vec![vec![Jet::zero(cvars, wide); nv]; nv];
    let mut p1 = vec![Jet::zero(cvars, wide); nv];
    for j in 0..m {
        for k in 0..m {
            let gjk = &collar.ginv[j][k];
            if gjk.is_zero_jet() {
                continue;
            }
            for c in 0..nv {
                let mjc = &collar.minv[j][c];
                if mjc.is_zero_jet() {
                    continue;
                }
                let gm = gjk * mjc;
                if gm.is_zero_jet() {
                    continue;
                }
                for d in 0..nv {
                    let mkd = &collar.minv[m + k][d];
                    if !mkd.is_zero_jet() {
                        let (lo, hi) = if c <= d { (c, d) } else { (d, c) };
                        p2[lo][hi] = &p2[lo][hi] - &(&gm * mkd);
                    }
                    let dm = mkd.derive(c);
                    if !dm.is_zero_jet() {
                        p1[d] = &p1[d] - &(&gm * &dm);
                    }
                }
            }
        }
    }

    let target = Trunc::Split {
        head: collar.head,
        tail: collar.tail,
    };
    let mut parts = vec![TangentialOp::zero(cvars, target, nt); 3];
    for c in 1..nv {
        for d in c..nv {
            parts[0].p2[c - 1][d - 1] = p2[c][d].truncate_to(target);
        }
        parts[0].p1[c - 1] = p1[c].truncate_to(target);
    }
    // Normal-tangential couplings become (x∂x)∂_d after exact division
    // by x; they vanish identically because the flow gauge splits N off
    // the tangential fields, and a nonzero remainder would fail here.
    for d in 1..nv {
        parts[1].p1[d - 1] = p2[0][d].divide_by_var(0)?.truncate_to(target);
    }
    // Pure normal part: x²∂x² = (x∂x)² − x∂x and x∂x = x·∂x.
    let a2 = p2[0][0]
        .divide_by_var(0)?
        .divide_by_var(0)?
        .truncate_to(target);
    let ax = p1[0].divide_by_var(0)?.truncate_to(target);
    parts[2].p0 = a2.clone();
    parts[1].p0 = &ax - &a2;

    let op = DiffOp {
        m,
        cvars: Arc::clone(cvars),
        head: collar.head,
        tail: collar.tail,
        parts,
    };
    if !op.apply(&Jet::one(cvars, target)).is_zero_jet() {
        return Err(internal("Laplacian does not annihilate constants"));
    }
    Ok(op)
}

/// One level L_k of Δ_φ = Σ_k x^k L_k: a polynomial in x∂x of degree
/// at most two with x-free tangential-operator coefficients.
#[derive(Clone, Debug)]
pub struct LevelOp {
    pub parts: Vec<TangentialOp>,
}

impl LevelOp {
    /// Applies the level with the scalar `a` substituted for x∂x,
    /// lifting coefficients into the target field through `lift`.
    pub fn apply_at<D: Coeff, F: Fn(&GaussQ) -> D>(&self, a: &D, f: &Jet<D>, lift: &F) -> Jet<D> {
        let mut out = Jet::zero(f.vars(), f.trunc());
        let mut pw = D::one();
        for (k, part) in self.parts.iter().enumerate() {
            if k > 0 {
                pw = pw.mul(a);
            }
            out = &out + &part.apply_lifted(f, lift).scalar_mul(&pw);
        }
        out
    }

    /// Applies the level to a collar jet with x∂x as the Euler operator.
    pub fn apply_collar(&self, u: &Jet<GaussQ>) -> Jet<GaussQ> {
        apply_parts(&self.parts, u)
    }
}

/// Level expansion of a collar operator in powers of x.
#[derive(Clone, Debug)]
pub struct LaplacianExpansion {
    pub m: usize,
    pub cvars: Arc<Vars>,
    /// levels[k] = L_k.
    pub levels: Vec<LevelOp>,
}

/// Extracts L_0 .. L_{n_max} from a collar operator; n_max may not
/// exceed the operator's certified x-order.
pub fn expand_laplacian(delta: &DiffOp, n_max: u16) -> Result<LaplacianExpansion> {
    if n_max > delta.head {
        return Err(Error::TruncationTooLow {
            have: delta.head as usize,
            need: n_max as usize,
        });
    }
    let mut levels = Vec::with_capacity(n_max as usize + 1);
    for k in 0..=n_max {
        let parts = delta
            .parts
            .iter()
            .map(|p| TangentialOp {
                p2: p
                    .p2
                    .iter()
                    .map(|row| row.iter().map(|f| f.x_coefficient(k)).collect())
                    .collect(),
                p1: p.p1.iter().map(|f| f.x_coefficient(k)).collect(),
                p0: p.p0.x_coefficient(k),
            })
            .collect();
        levels.push(LevelOp { parts });
    }
    Ok(LaplacianExpansion {
        m: delta.m,
        cvars: Arc::clone(&delta.cvars),
        levels,
    })
}

fn check_ambient_input(frame: &FrameData, collar: &Collar, u: &Jet<GaussQ>, need: u16) -> Result<()> {
    if u.vars() != frame.phi.vars() {
        return Err(Error::SignatureMismatch(
            u.vars().describe(),
            frame.phi.vars().describe(),
        ));
    }
    let fh = collar.head + collar.m as u16 + 1;
    let ft = collar.tail + 2;
    match u.trunc() {
        Trunc::Total(n) if n >= fh + ft + need => Ok(()),
        Trunc::Total(n) => Err(Error::TruncationTooLow {
            have: n as usize,
            need: (fh + ft + need) as usize,
        }),
        _ => Err(internal("ambient input must carry a total truncation")),
    }
}

/// −(Δ_φ u) ∘ Z through the composed inverse metric:
/// Σ (g^{jk̄} ∘ Z)(∂_j∂_k̄ u) ∘ Z.
pub fn hessian_trace(frame: &FrameData, collar: &Collar, u: &Jet<GaussQ>) -> Result<Jet<GaussQ>> {
    check_ambient_input(frame, collar, u, 2)?;
    let m = collar.m;
    let mut out = Jet::zero(&collar.cvars, collar.ginv[0][0].trunc());
    for j in 0..m {
        for k in 0..m {
            if collar.ginv[j][k].is_zero_jet() {
                continue;
            }
            let hess = u.derive(j).derive(m + k).compose(&collar.z);
            out = &out + &(&collar.ginv[j][k] * &hess);
        }
    }
    Ok(out)
}

/// h^{αβ̄} with Σ_β h^{αβ̄} h_{γβ̄} = δ_{αγ}, from the frame's Levi block.
fn levi_inverse(frame: &FrameData) -> Result<Vec<Vec<Jet<GaussQ>>>> {
    let n = frame.m - 1;
    let mut tr = frame.h[0][0].trunc();
    for row in &frame.h {
        for f in row {
            tr = tr.meet(&f.trunc());
        }
    }
    let ht: Vec<Vec<Jet<GaussQ>>> = (0..n)
        .map(|al| (0..n).map(|be| frame.h[be][al].truncate_to(tr)).collect())
        .collect();
    jet_matrix_inverse(&ht)
}

/// −(Δ_φ u) ∘ Z through the coframe split of the inverse metric:
/// (−φ) h^{αβ̄} Hess(W_α, W̄_β)u + (φ²/(1−rφ)) Hess(ξ, ξ̄)u, composed.
pub fn hessian_frame(frame: &FrameData, collar: &Collar, u: &Jet<GaussQ>) -> Result<Jet<GaussQ>> {
    check_ambient_input(frame, collar, u, 2)?;
    let m = collar.m;
    let n = m - 1;
    let hess: Vec<Vec<Jet<GaussQ>>> = (0..m)
        .map(|j| (0..m).map(|k| u.derive(j).derive(m + k)).collect())
        .collect();
    let pair = |v: &[Jet<GaussQ>], w: &[Jet<GaussQ>]| -> Jet<GaussQ> {
        let mut s = Jet::zero(v[0].vars(), hess[0][0].trunc());
        for (j, vj) in v.iter().enumerate() {
            for (k, wk) in w.iter().enumerate() {
                s = &s + &(&(vj * &wk.conj()) * &hess[j][k]);
            }
        }
        s
    };
    let hm = levi_inverse(frame)?;
    let mut tang = Jet::zero(frame.phi.vars(), hess[0][0].trunc());
    for al in 0..n {
        for be in 0..n {
            if hm[al][be].is_zero_jet() {
                continue;
            }
            tang = &tang + &(&hm[al][be] * &pair(&frame.w[al], &frame.w[be]));
        }
    }
    let rp = &frame.r * &frame.phi;
    let omrp = &Jet::one(frame.phi.vars(), rp.trunc()) - &rp;
    let phi2 = &frame.phi * &frame.phi;
    let normal = &(&phi2 * &omrp.inverse()?) * &pair(&frame.xi, &frame.xi);
    let total = &(&-&frame.phi * &tang) + &normal;
    Ok(total.compose(&collar.z))
}

/// |du|² ∘ Z = (g^{jk̄} ∂_j u ∂_k̄ u) ∘ Z through the composed inverse
/// metric.
pub fn grad_square_trace(
    frame: &FrameData,
    collar: &Collar,
    u: &Jet<GaussQ>,
) -> Result<Jet<GaussQ>> {
    check_ambient_input(frame, collar, u, 1)?;
    let m = collar.m;
    let du: Vec<Jet<GaussQ>> = (0..2 * m).map(|j| u.derive(j).compose(&collar.z)).collect();
    let mut out = Jet::zero(&collar.cvars, collar.ginv[0][0].trunc());
    for j in 0..m {
        for k in 0..m {
            if collar.ginv[j][k].is_zero_jet() {
                continue;
            }
            out = &out + &(&collar.ginv[j][k] * &(&du[j] * &du[m + k]));
        }
    }
    Ok(out)
}

/// |du|² ∘ Z through the coframe split:
/// (−φ) h^{αβ̄} (W_α u)(W̄_β u) + (φ²/(1−rφ)) (ξu)(ξ̄u), composed.
pub fn grad_square_frame(
    frame: &FrameData,
    collar: &Collar,
    u: &Jet<GaussQ>,
) -> Result<Jet<GaussQ>> {
    check_ambient_input(frame, collar, u, 1)?;
    let m = collar.m;
    let n = m - 1;
    let holo: Vec<Jet<GaussQ>> = (0..m).map(|j| u.derive(j)).collect();
    let anti: Vec<Jet<GaussQ>> = (0..m).map(|j| u.derive(m + j)).collect();
    let along = |v: &[Jet<GaussQ>], df: &[Jet<GaussQ>], conj: bool| -> Jet<GaussQ> {
        let mut s = Jet::zero(u.vars(), df[0].trunc());
        for (j, vj) in v.iter().enumerate() {
            let comp = if conj { vj.conj() } else { vj.clone() };
            s = &s + &(&comp * &df[j]);
        }
        s
    };
    let hm = levi_inverse(frame)?;
    let mut tang = Jet::zero(frame.phi.vars(), holo[0].trunc());
    for al in 0..n {
        for be in 0..n {
            if hm[al][be].is_zero_jet() {
                continue;
            }
            let wu = along(&frame.w[al], &holo, false);
            let wbu = along(&frame.w[be], &anti, true);
            tang = &tang + &(&hm[al][be] * &(&wu * &wbu));
        }
    }
    let rp = &frame.r * &frame.phi;
    let omrp = &Jet::one(frame.phi.vars(), rp.trunc()) - &rp;
    let phi2 = &frame.phi * &frame.phi;
    let xu = along(&frame.xi, &holo, false);
    let xbu = along(&frame.xi, &anti, true);
    let normal = &(&phi2 * &omrp.inverse()?) * &(&xu * &xbu);
    let total = &(&-&frame.phi * &tang) + &normal;
    Ok(total.compose(&collar.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cr_frames::{boundary_ops, build_frame};
    use crate::model_zoo::{make_model, ModelKind, ModelTag};
    use crate::series_core::Q;

    fn frame_for(kind: ModelKind, m: usize, order: u16) -> FrameData {
        let tag = ModelTag::new(kind, m).unwrap();
        let df = make_model(&tag, None, Some(order)).unwrap();
        build_frame(&df).unwrap()
    }

    fn level_is_zero(level: &LevelOp) -> bool {
        level.parts.iter().all(|p| {
            p.p0.is_zero_jet()
                && p.p1.iter().all(|f| f.is_zero_jet())
                && p.p2.iter().flatten().all(|f| f.is_zero_jet())
        })
    }

    fn roundtrip_matches(op: &DiffOp, exp: &LaplacianExpansion, u: &Jet<GaussQ>) -> bool {
        let direct = op.apply(u);
        let mut sum = Jet::zero(u.vars(), u.trunc());
        for (k, level) in exp.levels.iter().enumerate() {
            sum = &sum + &level.apply_collar(u).times_x_power(k as u16);
        }
        jets_equal(&sum, &direct)
    }

    #[test]
    fn siegel_collar_matches_the_closed_form_laplacian() {
        for (m, k_op, tail, order) in [(2usize, 6u16, 4u16, 17u16), (3, 8, 4, 20)] {
            let frame = frame_for(ModelKind::Siegel, m, order);
            let collar = build_collar(&frame, k_op, tail).unwrap();
            let op = gl_laplacian(&collar).unwrap();
            let cv = &collar.cvars;
            let tr = Trunc::Split { head: k_op, tail };
            let x = Jet::var(cv, tr, 0);

            assert!(collar.r.is_zero_jet());
            assert!(jets_equal(&collar.e, &Jet::from_q(cv, tr, &q(1, 4))));

            for j in 1..=3u16 {
                let xj = x.times_x_power(j - 1);
                let expect = xj.scalar_q(&q(i64::from(j) * (m as i64 - i64::from(j)), 1));
                assert!(jets_equal(&op.apply(&xj), &expect));
            }

            let mut rho = Jet::zero(cv, tr);
            for a in 0..m - 1 {
                let pair = &Jet::var(cv, tr, 2 + a) * &Jet::var(cv, tr, 2 + (m - 1) + a);
                assert!(jets_equal(&op.apply(&pair), &-&x));
                rho = &rho + &pair;
            }
            let t = Jet::var(cv, tr, 1);
            let expect_t2 = &(&rho * &x).scalar_q(&q(-2, 1)) - &x.times_x_power(1).scalar_q(&q(2, 1));
            assert!(jets_equal(&op.apply(&(&t * &t)), &expect_t2));

            // Exact level content: L₁ = −Δ_b/2, L₂ = −T²/4, nothing above.
            let exp = expand_laplacian(&op, k_op).unwrap();
            let ops = boundary_ops(&frame, tail + 2).unwrap();
            let w1 = Jet::var(cv, tr, 2);
            let family = [
                Jet::one(cv, tr),
                t.clone(),
                w1.clone(),
                &t * &w1,
                &t * &t,
                rho.clone(),
            ];
            for f in &family {
                for a in [gq(0, 1, 0, 1), gq(5, 1, 0, 1)] {
                    let lhs = exp.levels[1].apply_at(&a, f, &GaussQ::clone);
                    let rhs = ops.sublaplacian(f).scalar_q(&q(-1, 2));
                    assert!(jets_equal(&lhs, &rhs));
                }
                let lhs = exp.levels[2].apply_at(&gq(3, 1, 0, 1), f, &GaussQ::clone);
                let rhs = ops.t_apply(&ops.t_apply(f)).scalar_q(&q(-1, 4));
                assert!(jets_equal(&lhs, &rhs));
            }
            for k in 3..=k_op {
                assert!(level_is_zero(&exp.levels[k as usize]));
            }

            let sample = &(&x * &t) + &(&rho + &(&w1 * &x.times_x_power(1)));
            assert!(roundtrip_matches(&op, &exp, &sample));
        }
    }

    #[test]
    fn ball_collar_radial_laplacian_and_density() {
        for (m, k_op, tail, order, deep) in
            [(2usize, 6u16, 2u16, 15u16, true), (3, 4, 2, 14, false)]
        {
            let frame = frame_for(ModelKind::Ball, m, order);
            let collar = build_collar(&frame, k_op, tail).unwrap();
            let op = gl_laplacian(&collar).unwrap();
            let cv = &collar.cvars;
            let tr = Trunc::Split { head: k_op, tail };
            let x = Jet::var(cv, tr, 0);
            let one = Jet::one(cv, tr);
            let omx = &one - &x;

            // r ∘ Z = 1/(1−x) and unit determinant.
            assert!(jets_equal(&(&collar.r * &omx), &one));
            assert!(jets_equal(&collar.e, &one));

            // Radial action j(m−j)x^j + j²x^{j+1}.
            for j in 1..=3i64 {
                let xj = x.times_x_power(j as u16 - 1);
                let expect = &xj.scalar_q(&q(j * (m as i64 - j), 1))
                    + &xj.times_x_power(1).scalar_q(&q(j * j, 1));
                assert!(jets_equal(&op.apply(&xj), &expect));
            }

            // Volume density η₀ (1−x)^{m−1}.
            let metric = assemble_metric(&frame, &collar).unwrap();
            let mut expect_eta = Jet::from_q(cv, tr, &q(m as i64, 1i64 << m));
            for _ in 1..m {
                expect_eta = &expect_eta * &omx;
            }
            assert!(jets_equal(&metric.volume_density, &expect_eta));

            // |du|² of u = −φ composes to the radial profile (1−x)x².
            let grad = grad_square_trace(&frame, &collar, &-&frame.phi).unwrap();
            assert!(jets_equal(&grad, &omx.times_x_power(2)));

            if deep {
                let exp = expand_laplacian(&op, k_op).unwrap();
                let t = Jet::var(cv, tr, 1);
                let w1 = Jet::var(cv, tr, 2);
                let wb1 = Jet::var(cv, tr, 2 + (m - 1));
                let samples = [
                    x.clone(),
                    &(&x * &t) + &(&w1 * &wb1),
                    &(&x + &(&w1 * &wb1)) * &(&x + &t),
                ];
                for u in &samples {
                    assert!(roundtrip_matches(&op, &exp, u));
                }
            }
        }
    }

    #[test]
    fn laplacian_routes_agree_on_perturbed_models() {
        for (kind, m, k_op, tail, order) in [
            (ModelKind::PerturbedBall, 2usize, 3u16, 4u16, 14u16),
            (ModelKind::PerturbedSiegel, 3, 2, 1, 11),
        ] {
            let frame = frame_for(kind, m, order);
            let collar = build_collar(&frame, k_op, tail).unwrap();
            let op = gl_laplacian(&collar).unwrap();
            let av = frame.phi.vars();
            let atr = frame.phi.trunc();
            let one = Jet::one(av, atr);
            let z1 = Jet::var(av, atr, 0);
            let z2 = Jet::var(av, atr, 1);
            let u0 = -&frame.phi;
            let u1 = &u0 * &(&one + &(&z1 + &z1.conj()).scalar_q(&q(1, 7)));
            let cubic = &(&(&z1 * &z1) * &z2.conj()) + &(&(&z1.conj() * &z1.conj()) * &z2);
            let u2 = &(&z1 * &z1.conj()) + &cubic.scalar_q(&q(1, 5));
            let samples: Vec<&Jet<GaussQ>> = if m == 2 {
                vec![&u0, &u1, &u2]
            } else {
                vec![&u0, &u2]
            };
            for u in samples {
                let trace = hessian_trace(&frame, &collar, u).unwrap();
                let framed = hessian_frame(&frame, &collar, u).unwrap();
                assert!(jets_equal(&trace, &framed));
                let applied = op.apply(&u.compose(&collar.z));
                assert!(jets_equal(&applied, &-&trace));
                let g1 = grad_square_trace(&frame, &collar, u).unwrap();
                let g2 = grad_square_frame(&frame, &collar, u).unwrap();
                assert!(jets_equal(&g1, &g2));
            }
        }
    }

    #[test]
    fn expansion_levels_match_the_boundary_operators() {
        let m = 2usize;
        let frame = frame_for(ModelKind::PerturbedBall, m, 14);
        let collar = build_collar(&frame, 3, 4).unwrap();
        let op = gl_laplacian(&collar).unwrap();
        let exp = expand_laplacian(&op, 3).unwrap();
        let ops = boundary_ops(&frame, 6).unwrap();
        let cv = &collar.cvars;
        let tr = Trunc::Split { head: 3, tail: 4 };
        let one = Jet::one(cv, tr);
        let t = Jet::var(cv, tr, 1);
        let w1 = Jet::var(cv, tr, 2);
        let wb1 = Jet::var(cv, tr, 3);
        let family = [
            one.clone(),
            t.clone(),
            w1.clone(),
            wb1.clone(),
            &t * &t,
            &w1 * &wb1,
            &w1 * &w1,
            &t * &w1,
        ];

        // L₀ is scalar: no derivative blocks, action a(m−a).
        assert!(exp.levels[0].parts.iter().all(|p| {
            p.p1.iter().all(|f| f.is_zero_jet()) && p.p2.iter().flatten().all(|f| f.is_zero_jet())
        }));
        for a in [0i64, 1, 2, 3, 7] {
            let aval = gq(a, 1, 0, 1);
            for f in &family {
                let lhs = exp.levels[0].apply_at(&aval, f, &GaussQ::clone);
                let rhs = f.scalar_q(&q(a * (m as i64 - a), 1));
                assert!(jets_equal(&lhs, &rhs));
            }
        }

        // L₁ = r₀ (x∂x)² − Δ_b/2 with the boundary value r₀ of r.
        let r0 = collar.r.x_coefficient(0);
        for a in [0i64, 1, 2] {
            let aval = gq(a, 1, 0, 1);
            for f in &family {
                let lhs = exp.levels[1].apply_at(&aval, f, &GaussQ::clone);
                let rhs = &(&r0 * f).scalar_q(&q(a * a, 1))
                    - &ops.sublaplacian(f).scalar_q(&q(1, 2));
                assert!(jets_equal(&lhs, &rhs));
            }
        }

        // Shifted indicial identity on pseudorandom rational (s, k):
        // L₀ at m−s+k equals s(m−s) + k(2s−m−k).
        let mut state = 0x2545f4914f6cdd1du64;
        let f = &one + &t;
        for _ in 0..10 {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let p = (state >> 33) as i64 % 19 - 9;
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let den = [2i64, 3, 5, 7][(state >> 33) as usize % 4];
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let k = 1 + (state >> 33) as i64 % 6;
            let s: Q = q(p, den);
            let a = &q(m as i64 + k, 1) - &s;
            let lhs = exp.levels[0].apply_at(&GaussQ::from_q(&a), &f, &GaussQ::clone);
            let val = &(&s * &(&q(m as i64, 1) - &s))
                + &(&q(k, 1) * &(&(&s + &s) - &q(m as i64 + k, 1)));
            let rhs = f.scalar_q(&val);
            assert!(jets_equal(&lhs, &rhs));
        }
    }

    #[test]
    fn volume_density_boundary_value_is_universal() {
        for (kind, m, tail, order) in [
            (ModelKind::PerturbedBall, 2usize, 4u16, 13u16),
            (ModelKind::PerturbedSiegel, 3, 1, 11),
        ] {
            let frame = frame_for(kind, m, order);
            let collar = build_collar(&frame, 2, tail).unwrap();
            let metric = assemble_metric(&frame, &collar).unwrap();
            let lead = metric.volume_density.x_coefficient(0);
            let expect = Jet::from_q(&collar.cvars, lead.trunc(), &q(m as i64, 1i64 << m));
            assert!(jets_equal(&lead, &expect));
        }
        // On the Siegel model the density is constant in x as well.
        let frame = frame_for(ModelKind::Siegel, 2, 12);
        let collar = build_collar(&frame, 2, 2).unwrap();
        let metric = assemble_metric(&frame, &collar).unwrap();
        let expect = Jet::from_q(&collar.cvars, metric.volume_density.trunc(), &q(1, 2));
        assert!(jets_equal(&metric.volume_density, &expect));
    }

    #[test]
    fn metric_normal_scaling_and_blocks() {
        let frame = frame_for(ModelKind::PerturbedBall, 2, 13);
        let collar = build_collar(&frame, 2, 4).unwrap();
        let metric = assemble_metric(&frame, &collar).unwrap();
        let rp = &frame.r * &frame.phi;
        let omrp = &Jet::one(frame.phi.vars(), rp.trunc()) - &rp;
        let square = (&(&metric.nu * &metric.nu) * &omrp).scalar_q(&q(4, 1));
        assert!(jets_equal(&square, &(&frame.phi * &frame.phi)));
        assert!(jets_equal(&metric.normal_block, &omrp));
        for (row_m, row_f) in metric.levi_block.iter().zip(frame.h.iter()) {
            for (a, b) in row_m.iter().zip(row_f.iter()) {
                assert!(jets_equal(a, b));
            }
        }
        // The Siegel Levi form has unit determinant.
        let siegel = frame_for(ModelKind::Siegel, 3, 12);
        let det_h = jet_det(&siegel.h);
        assert!(jets_equal(&det_h, &Jet::one(det_h.vars(), det_h.trunc())));
    }
}
