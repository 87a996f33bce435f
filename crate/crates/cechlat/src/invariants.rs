//! On-site symmetry actions, charge derivations, ψ-preserving charge splittings
//! over cone covers and the pairing invariants built from them.

use crate::dgla::{
    self, build_cech_dgla, commutator_class, first_order_from_split, solve_mc, u1_curvature, ConstantHandle,
    DglaError, Monomial, PreCosheafHandle,
};
use crate::exact::{fmt_q, q, qr, Q};
use crate::geometry::{self, distance_linf, sector3, SemilinearSet};
use crate::lattice::{
    commutator_mat, max_abs, op_norm, pauli, AlmostLocalDerivation, LatticeError, LatticeSystem, Mat,
    Region, C64,
};
use crate::nerve::{build_nerve, cohomology, Cochain, Cover, Nerve, NerveError};
use crate::state::{
    fermion_pairing_local, psi_preserving_split, qwz_hopping, ExactState, FreeFermionState, GaussLegendre,
    StateError, PRESERVE_TOL,
};
use nalgebra::SymmetricEigen;
use num_traits::{Signed, Zero};
use serde::Serialize;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum InvariantError {
    #[error("structure constants fail {0}")]
    BadAlgebra(String),
    #[error("invalid symmetry: {0}")]
    BadSymmetry(String),
    #[error("state is not invariant under the symmetry (defect {0:e})")]
    NotInvariant(f64),
    #[error("operation needs an abelian one-dimensional symmetry")]
    NotU1,
    #[error("group averaging is only available for abelian algebras and su(2)")]
    Unsupported,
    #[error("expected a cover of R^{expected}, found R^{found}")]
    WrongDimension { expected: usize, found: usize },
    #[error("cochain of degree {0} is not a cocycle on the nerve")]
    NotCocycle(usize),
    #[error("site {site:?} lies at distance {distance} from the subset")]
    NotConfined { site: Vec<i64>, distance: String },
    #[error("single-particle spectrum is gapless")]
    Gapless,
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Dgla(#[from] DglaError),
    #[error(transparent)]
    Nerve(#[from] NerveError),
}

type Result<T> = std::result::Result<T, InvariantError>;

const ALG_TOL: f64 = 1e-12;

/// Real Lie algebra by structure constants `[e_i, e_j] = Σ_k c[i][j][k] e_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LieAlgebraSpec {
    pub name: String,
    pub dim: usize,
    pub structure: Vec<Vec<Vec<Q>>>,
}

impl LieAlgebraSpec {
    pub fn new(name: &str, dim: usize, structure: Vec<Vec<Vec<Q>>>) -> Result<Self> {
        let g = LieAlgebraSpec { name: name.to_string(), dim, structure };
        g.validate()?;
        Ok(g)
    }

    pub fn u1() -> Self {
        LieAlgebraSpec { name: "u1".into(), dim: 1, structure: vec![vec![vec![Q::zero()]]] }
    }

    /// Basis `e_a = −iσ_a/2` so that `[e_x, e_y] = e_z`.
    pub fn su2() -> Self {
        let mut c = vec![vec![vec![Q::zero(); 3]; 3]; 3];
        for (i, j, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            c[i][j][k] = q(1);
            c[j][i][k] = q(-1);
        }
        LieAlgebraSpec { name: "su2".into(), dim: 3, structure: c }
    }

    pub fn is_abelian(&self) -> bool {
        self.structure.iter().flatten().flatten().all(Zero::is_zero)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim;
        let shape_ok = self.structure.len() == n
            && self.structure.iter().all(|r| r.len() == n && r.iter().all(|c| c.len() == n));
        if !shape_ok {
            return Err(InvariantError::BadAlgebra("shape".into()));
        }
        let c = &self.structure;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if c[i][j][k] != -c[j][i][k].clone() {
                        return Err(InvariantError::BadAlgebra("antisymmetry".into()));
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let mut s = Q::zero();
                        for m in 0..n {
                            s += &c[i][j][m] * &c[m][k][l] + &c[j][k][m] * &c[m][i][l] + &c[k][i][m] * &c[m][j][l];
                        }
                        if !s.is_zero() {
                            return Err(InvariantError::BadAlgebra("Jacobi".into()));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn bracket(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for i in 0..self.dim {
            for j in 0..self.dim {
                for (k, o) in out.iter_mut().enumerate() {
                    *o += a[i] * b[j] * crate::exact::to_f64(&self.structure[i][j][k]);
                }
            }
        }
        out
    }
}

/// Local action: `generators[site][a] = q_j(e_a)`, traceless anti-hermitian.
#[derive(Clone, Debug)]
pub struct OnsiteSymmetry {
    pub lattice: Arc<LatticeSystem>,
    pub algebra: LieAlgebraSpec,
    pub generators: Vec<Vec<Mat>>,
    pub norm_bound: f64,
}

impl OnsiteSymmetry {
    pub fn new(lattice: &Arc<LatticeSystem>, algebra: LieAlgebraSpec, generators: Vec<Vec<Mat>>) -> Result<Self> {
        algebra.validate()?;
        if generators.len() != lattice.sites.len() {
            return Err(InvariantError::BadSymmetry("one generator list per site".into()));
        }
        let mut bound = 0.0f64;
        for (j, gens) in generators.iter().enumerate() {
            let d = lattice.local_dims[j];
            if gens.len() != algebra.dim || gens.iter().any(|g| g.nrows() != d || g.ncols() != d) {
                return Err(InvariantError::BadSymmetry(format!("shape at site {j}")));
            }
            for g in gens {
                if max_abs(&(g + g.adjoint())) > ALG_TOL || g.trace().norm() > ALG_TOL {
                    return Err(InvariantError::BadSymmetry(format!("not traceless anti-hermitian at site {j}")));
                }
                bound = bound.max(op_norm(g));
            }
            for a in 0..algebra.dim {
                for b in 0..algebra.dim {
                    let mut rhs = Mat::zeros(d, d);
                    for (k, g) in gens.iter().enumerate() {
                        rhs += g * C64::new(crate::exact::to_f64(&algebra.structure[a][b][k]), 0.0);
                    }
                    if max_abs(&(commutator_mat(&gens[a], &gens[b]) - rhs)) > ALG_TOL {
                        return Err(InvariantError::BadSymmetry(format!("not a homomorphism at site {j}")));
                    }
                }
            }
        }
        Ok(OnsiteSymmetry { lattice: lattice.clone(), algebra, generators, norm_bound: bound })
    }

    /// `q_j = iσ^z/2` on every qubit.
    pub fn u1_spin_half(lattice: &Arc<LatticeSystem>) -> Result<Self> {
        let q = pauli('z') * C64::new(0.0, 0.5);
        Self::new(lattice, LieAlgebraSpec::u1(), vec![vec![q]; lattice.sites.len()])
    }

    /// `q_j(e_a) = −iσ_a/2` on every qubit.
    pub fn su2_spin_half(lattice: &Arc<LatticeSystem>) -> Result<Self> {
        let gens: Vec<Mat> = ['x', 'y', 'z'].iter().map(|&c| pauli(c) * C64::new(0.0, -0.5)).collect();
        Self::new(lattice, LieAlgebraSpec::su2(), vec![gens; lattice.sites.len()])
    }

    pub fn local(&self, site: usize, coeffs: &[f64]) -> Mat {
        let d = self.lattice.local_dims[site];
        let mut out = Mat::zeros(d, d);
        for (g, c) in self.generators[site].iter().zip(coeffs) {
            out += g * C64::new(*c, 0.0);
        }
        out
    }

    /// `Σ_j q_j(e_a)` on the full truncation.
    pub fn total(&self, a: usize) -> Mat {
        let all: Vec<usize> = (0..self.lattice.sites.len()).collect();
        let d = self.lattice.hilbert_dim();
        let mut out = Mat::zeros(d, d);
        for j in 0..self.lattice.sites.len() {
            out += self.lattice.embed_sites(&self.generators[j][a], &[j], &all);
        }
        out
    }
}

/// `Q(e_a)` for every basis element.
#[derive(Clone, Debug)]
pub struct ChargeDerivation {
    pub basis: Vec<AlmostLocalDerivation>,
}

impl ChargeDerivation {
    pub fn apply(&self, coeffs: &[f64]) -> AlmostLocalDerivation {
        let mut out = AlmostLocalDerivation::zero(&self.basis[0].lattice);
        for (q, c) in self.basis.iter().zip(coeffs) {
            out = out.add(&q.scale_re(*c));
        }
        out
    }

    /// `max_{a,b} |[Q(e_a), Q(e_b)] − Q([e_a, e_b])|` on assembled matrices.
    pub fn homomorphism_defect(&self, algebra: &LieAlgebraSpec) -> f64 {
        let mats: Vec<Mat> = self.basis.iter().map(|q| q.assemble()).collect();
        let mut worst = 0.0f64;
        for a in 0..algebra.dim {
            for b in 0..algebra.dim {
                let mut ea = vec![0.0; algebra.dim];
                let mut eb = vec![0.0; algebra.dim];
                ea[a] = 1.0;
                eb[b] = 1.0;
                let rhs = self.apply(&algebra.bracket(&ea, &eb)).assemble();
                worst = worst.max(max_abs(&(commutator_mat(&mats[a], &mats[b]) - rhs)));
            }
        }
        worst
    }
}

pub fn charge_derivation(sym: &OnsiteSymmetry) -> ChargeDerivation {
    let basis = (0..sym.algebra.dim)
        .map(|a| {
            let mut e = vec![0.0; sym.algebra.dim];
            e[a] = 1.0;
            let f = GaugeFunction {
                values: sym.lattice.sites.iter().map(|s| (s.clone(), e.clone())).collect(),
            };
            gauge_map(sym, &f).expect("sites belong to the lattice")
        })
        .collect();
    ChargeDerivation { basis }
}

/// A map from sites to coefficient vectors in the algebra basis.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaugeFunction {
    pub values: BTreeMap<Vec<i64>, Vec<f64>>,
}

impl GaugeFunction {
    pub fn constant(lat: &LatticeSystem, coeffs: &[f64]) -> Self {
        GaugeFunction { values: lat.sites.iter().map(|s| (s.clone(), coeffs.to_vec())).collect() }
    }

    /// `sup_j |f(j)| (1 + d(U, j))^k`.
    pub fn seminorm(&self, u: &Region, k: f64) -> Result<f64> {
        let mut out = 0.0f64;
        for (j, f) in &self.values {
            let size = f.iter().map(|x| x * x).sum::<f64>().sqrt();
            if size == 0.0 {
                continue;
            }
            let d = crate::exact::to_f64(&u.distance_to_point(j)?);
            out = out.max(size * (1.0 + d).powf(k));
        }
        Ok(out)
    }
}

/// `Q(f) = Σ_j [q_j(f(j)), ·]`.
pub fn gauge_map(sym: &OnsiteSymmetry, f: &GaugeFunction) -> Result<AlmostLocalDerivation> {
    let lat = &sym.lattice;
    let mut out = AlmostLocalDerivation::zero(lat);
    for (x, c) in &f.values {
        let j = lat
            .site_index(x)
            .ok_or_else(|| LatticeError::Parse(format!("site {x:?} outside the lattice")))?;
        if c.len() != sym.algebra.dim {
            return Err(InvariantError::BadSymmetry(format!("gauge value at {x:?} has wrong length")));
        }
        out = out.add(&lat.onsite(x, &sym.local(j, c))?);
    }
    Ok(out)
}

/// `{x : x − v ∈ s}`.
pub fn translate(s: &SemilinearSet, v: &[Q]) -> SemilinearSet {
    let mut out = s.clone();
    for p in &mut out.pieces {
        for h in &mut p.halfspaces {
            h.offset = &h.offset + crate::exact::dot(&h.normal, v);
        }
    }
    out
}

pub fn lattice_center(lat: &LatticeSystem) -> Vec<Q> {
    lat.bounds.lo.iter().zip(&lat.bounds.hi).map(|(a, b)| qr(a + b, 2)).collect()
}

/// Hermitian eigendecomposition `G = V diag(iλ) V†` of an anti-hermitian matrix.
struct OneParameter {
    v: Mat,
    lam: Vec<f64>,
}

impl OneParameter {
    fn new(g: &Mat) -> Self {
        let h = g * C64::new(0.0, -1.0);
        let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(h);
        OneParameter { v: eig.eigenvectors, lam: eig.eigenvalues.iter().copied().collect() }
    }

    fn exp(&self, t: f64) -> Mat {
        let n = self.lam.len();
        let mut scaled = self.v.clone();
        for c in 0..n {
            let ph = C64::new(0.0, self.lam[c] * t).exp();
            for r in 0..n {
                scaled[(r, c)] *= ph;
            }
        }
        scaled * self.v.adjoint()
    }

    /// `Σ_s P_s A P_s` over eigenspaces.
    fn block_average(&self, a: &Mat) -> Mat {
        let mut b = self.v.adjoint() * a * &self.v;
        let n = self.lam.len();
        for r in 0..n {
            for c in 0..n {
                if (self.lam[r] - self.lam[c]).abs() > 1e-8 {
                    b[(r, c)] = C64::new(0.0, 0.0);
                }
            }
        }
        &self.v * b * self.v.adjoint()
    }
}

/// `max_{a,t} |e^{tQ_a} P e^{−tQ_a} − P|` over a few sampled times.
pub fn invariance_defect(psi: &ExactState, sym: &OnsiteSymmetry) -> f64 {
    let p = psi.projector();
    let mut worst = 0.0f64;
    for a in 0..sym.algebra.dim {
        let g = OneParameter::new(&sym.total(a));
        for t in [0.37, 1.1, 2.3, 5.9] {
            let u = g.exp(t);
            worst = worst.max(max_abs(&(&u * &p * u.adjoint() - &p)));
        }
    }
    worst
}

/// Options for [`split_charge`]. `order` permutes the sequence in which cover
/// elements are cut off; different orders give different, equally valid splittings.
#[derive(Clone, Debug)]
pub struct SplitOptions {
    pub order: Option<Vec<usize>>,
    pub apex: Option<Vec<Q>>,
    pub localization_power: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions { order: None, apex: None, localization_power: 2.0 }
    }
}

#[derive(Clone, Debug)]
pub struct ChargeSplit {
    /// `parts[a][i] = Q_i(e_a)`.
    pub parts: Vec<Vec<AlmostLocalDerivation>>,
    pub preservation: Vec<Vec<f64>>,
    pub equivariance_defect: f64,
    pub sum_defect: f64,
    pub localization: Vec<Vec<f64>>,
    pub invariance_defect: f64,
}

impl ChargeSplit {
    pub fn matrices(&self, a: usize) -> Vec<Mat> {
        self.parts[a].iter().map(|f| f.assemble()).collect()
    }

    pub fn max_preservation_defect(&self) -> f64 {
        self.preservation.iter().flatten().fold(0.0, |m, v| m.max(*v))
    }
}

/// Cover elements moved to the apex, as memoized regions.
pub fn cover_regions(cover: &Cover, apex: &[Q]) -> Vec<SemilinearSet> {
    cover.elements.iter().map(|u| translate(u, apex)).collect()
}

/// Splits every `Q(e_a)` into ψ-preserving parts `Q_i(e_a)` attached to the cover
/// elements, then projects onto equivariant splittings.
pub fn split_charge(psi: &ExactState, sym: &OnsiteSymmetry, cover: &Cover, opts: &SplitOptions) -> Result<ChargeSplit> {
    let lat = psi.lattice();
    if cover.dim() != lat.dim {
        return Err(InvariantError::WrongDimension { expected: lat.dim, found: cover.dim() });
    }
    let inv = invariance_defect(psi, sym);
    if inv > PRESERVE_TOL {
        return Err(InvariantError::NotInvariant(inv));
    }
    let k = cover.len();
    let order = opts.order.clone().unwrap_or_else(|| (0..k).collect());
    let mut sorted = order.clone();
    sorted.sort_unstable();
    if sorted != (0..k).collect::<Vec<_>>() {
        return Err(InvariantError::BadSymmetry("processing order is not a permutation".into()));
    }
    let apex = opts.apex.clone().unwrap_or_else(|| lattice_center(lat));
    let sets = cover_regions(cover, &apex);
    let regions: Vec<Region> = sets.iter().map(|s| Region::Set(s.clone()).memoized()).collect();
    let mut rests: Vec<Region> = Vec::new();
    for t in 0..k.saturating_sub(1) {
        let rest = order[t + 1..]
            .iter()
            .skip(1)
            .fold(sets[order[t + 1]].clone(), |acc, &i| geometry::join(&acc, &sets[i]));
        rests.push(Region::Set(rest).memoized());
    }
    let charge = charge_derivation(sym);
    let mut raw: Vec<Vec<Mat>> = Vec::new();
    for q_a in &charge.basis {
        let mut parts = vec![None; k];
        let mut remaining = q_a.clone();
        for t in 0..k - 1 {
            let s = psi_preserving_split(psi, &remaining, &regions[order[t]], &rests[t])?;
            parts[order[t]] = Some(s.f_u);
            remaining = s.f_v;
        }
        parts[order[k - 1]] = Some(remaining);
        raw.push(parts.into_iter().map(|p| p.expect("every element assigned").assemble()).collect());
    }
    let averaged = equivariant_average(sym, &raw)?;
    let mut parts: Vec<Vec<AlmostLocalDerivation>> = Vec::new();
    let mut preservation = Vec::new();
    let mut localization = Vec::new();
    let mut sum_defect = 0.0f64;
    for (a, mats) in averaged.iter().enumerate() {
        let total = &charge.basis[a];
        let mut row: Vec<AlmostLocalDerivation> = mats[..k - 1]
            .iter()
            .map(|m| AlmostLocalDerivation::from_full_projected(lat, m))
            .collect();
        let head = row.iter().fold(AlmostLocalDerivation::zero(lat), |acc, f| acc.add(f));
        row.push(total.sub(&head));
        let sum = row.iter().fold(AlmostLocalDerivation::zero(lat), |acc, f| acc.add(f));
        sum_defect = sum_defect.max(sum.distance(total));
        preservation.push(row.iter().map(|f| psi.preservation_defect(&f.assemble())).collect());
        localization.push(
            row.iter()
                .zip(&regions)
                .map(|(f, r)| f.seminorm(r, opts.localization_power))
                .collect::<std::result::Result<Vec<_>, _>>()?,
        );
        parts.push(row);
    }
    let equivariance_defect = equivariance_defect(sym, &parts);
    Ok(ChargeSplit { parts, preservation, equivariance_defect, sum_defect, localization, invariance_defect: inv })
}

/// `max |[Q(e_b), Q_i(e_a)] − Q_i([e_b, e_a])|`.
pub fn equivariance_defect(sym: &OnsiteSymmetry, parts: &[Vec<AlmostLocalDerivation>]) -> f64 {
    let n = sym.algebra.dim;
    let totals: Vec<Mat> = (0..n).map(|a| sym.total(a)).collect();
    let mats: Vec<Vec<Mat>> = parts.iter().map(|row| row.iter().map(|f| f.assemble()).collect()).collect();
    let mut worst = 0.0f64;
    for i in 0..mats[0].len() {
        for a in 0..n {
            for b in 0..n {
                let mut rhs = Mat::zeros(totals[0].nrows(), totals[0].nrows());
                for (c, row) in mats.iter().enumerate() {
                    rhs += &row[i] * C64::new(crate::exact::to_f64(&sym.algebra.structure[b][a][c]), 0.0);
                }
                worst = worst.max(max_abs(&(commutator_mat(&totals[b], &mats[a][i]) - rhs)));
            }
        }
    }
    worst
}

/// Haar average of a linear map `g → operators`, given on the basis, into an
/// equivariant one. Abelian algebras use charge-sector block averaging; su(2)
/// uses Euler-angle quadrature exact for the occurring frequencies.
pub fn equivariant_average(sym: &OnsiteSymmetry, raw: &[Vec<Mat>]) -> Result<Vec<Vec<Mat>>> {
    if sym.algebra.is_abelian() {
        let gens: Vec<OneParameter> = (0..sym.algebra.dim).map(|a| OneParameter::new(&sym.total(a))).collect();
        return Ok(raw
            .iter()
            .map(|row| {
                row.iter()
                    .map(|m| gens.iter().fold(m.clone(), |acc, g| g.block_average(&acc)))
                    .collect()
            })
            .collect());
    }
    if sym.algebra != LieAlgebraSpec::su2() {
        return Err(InvariantError::Unsupported);
    }
    let n_sites = sym.lattice.sites.len();
    let gy = OneParameter::new(&sym.total(1));
    let gz = OneParameter::new(&sym.total(2));
    let site_y = OneParameter::new(&sym.generators[0][1]);
    let site_z = OneParameter::new(&sym.generators[0][2]);
    let basis = &sym.generators[0];
    let d0 = basis[0].nrows();
    let gram = nalgebra::DMatrix::from_fn(3, 3, |b, c| (basis[b].adjoint() * &basis[c]).trace());
    let gram_inv = gram.try_inverse().ok_or(InvariantError::Unsupported)?;
    let m = 2 * n_sites + 4;
    let rule = GaussLegendre::new(n_sites + 3);
    let mut acc: Vec<Vec<Mat>> = raw.iter().map(|row| row.iter().map(|x| x * C64::new(0.0, 0.0)).collect()).collect();
    let mut total_weight = 0.0;
    for (x, wb) in rule.nodes_on(-1.0, 1.0) {
        let beta = x.acos();
        for ia in 0..m {
            for ig in 0..m {
                let alpha = 2.0 * PI * ia as f64 / m as f64;
                let gamma = 2.0 * PI * ig as f64 / m as f64;
                let u = gz.exp(alpha) * gy.exp(beta) * gz.exp(gamma);
                let us = site_z.exp(alpha) * site_y.exp(beta) * site_z.exp(gamma);
                // r[b][a]: coefficient of e_b in Ad_{g^{-1}} e_a
                let mut r = [[0.0f64; 3]; 3];
                for a in 0..3 {
                    let y = us.adjoint() * &basis[a] * &us;
                    let rhs = nalgebra::DVector::from_fn(3, |b, _| (basis[b].adjoint() * &y).trace());
                    let c = &gram_inv * rhs;
                    for b in 0..3 {
                        r[b][a] = c[b].re;
                    }
                }
                debug_assert_eq!(d0, us.nrows());
                for a in 0..3 {
                    for i in 0..raw[0].len() {
                        let mut inner = Mat::zeros(u.nrows(), u.nrows());
                        for b in 0..3 {
                            if r[b][a] != 0.0 {
                                inner += &raw[b][i] * C64::new(r[b][a], 0.0);
                            }
                        }
                        acc[a][i] += (&u * inner * u.adjoint()) * C64::new(wb, 0.0);
                    }
                }
                total_weight += wb;
            }
        }
    }
    Ok(acc
        .into_iter()
        .map(|row| row.into_iter().map(|x| x * C64::new(1.0 / total_weight, 0.0)).collect())
        .collect())
}

/// Raw pairing value and its imaginary part.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HallValue {
    pub raw_re: f64,
    pub raw_im: f64,
    pub sigma: f64,
}

impl HallValue {
    fn from_raw(raw: C64) -> Self {
        HallValue { raw_re: raw.re, raw_im: raw.im, sigma: raw.im }
    }

    pub fn raw(&self) -> C64 {
        C64::new(self.raw_re, self.raw_im)
    }
}

/// `ψ(Σ_{i<j} β_ij [Q_i, Q_j])` over the unbounded edges of the nerve.
pub fn pairing_value(psi: &ExactState, parts: &[Mat], nerve: &Nerve, beta: &Cochain, workers: usize) -> Result<HallValue> {
    if beta.degree != 1 || !beta.is_cocycle(nerve) {
        return Err(InvariantError::NotCocycle(beta.degree));
    }
    let edges: Vec<(Vec<usize>, f64)> = nerve
        .simplices(1)
        .into_iter()
        .filter_map(|s| {
            let c = beta.get(&s);
            (!c.is_zero()).then(|| (s, crate::exact::to_f64(&c)))
        })
        .collect();
    let d = parts[0].nrows();
    let workers = workers.max(1).min(edges.len().max(1));
    let chunk = edges.len().div_ceil(workers).max(1);
    let sums: Vec<Mat> = std::thread::scope(|scope| {
        let handles: Vec<_> = edges
            .chunks(chunk)
            .map(|batch| {
                scope.spawn(move || {
                    let mut acc = Mat::zeros(d, d);
                    for (s, c) in batch {
                        acc += commutator_mat(&parts[s[0]], &parts[s[1]]) * C64::new(*c, 0.0);
                    }
                    acc
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let total = sums.into_iter().fold(Mat::zeros(d, d), |a, b| a + b);
    Ok(HallValue::from_raw(psi.expect(&total)))
}

/// The Hall pairing for a u(1) charge split subordinate to a cover of `R^2`.
pub fn hall_conductance(psi: &ExactState, split: &ChargeSplit, cover: &Cover, beta: &Cochain, workers: usize) -> Result<HallValue> {
    if cover.dim() != 2 {
        return Err(InvariantError::WrongDimension { expected: 2, found: cover.dim() });
    }
    if split.parts.len() != 1 {
        return Err(InvariantError::NotU1);
    }
    pairing_value(psi, &split.matrices(0), &build_nerve(cover), beta, workers)
}

#[derive(Clone, Debug, Serialize)]
pub struct McInvariant {
    /// `k` with `2k − 3` equal to the cocycle degree.
    pub k: Option<usize>,
    pub values: BTreeMap<String, [f64; 2]>,
    pub residual: f64,
    pub note: Option<String>,
}

impl McInvariant {
    /// Value on `t^k`, the single generator power for u(1).
    pub fn leading(&self) -> C64 {
        self.k
            .and_then(|k| self.values.get(&monomial_key(&[k as u32])))
            .map_or(C64::new(0.0, 0.0), |v| C64::new(v[0], v[1]))
    }
}

fn monomial_key(m: &[u32]) -> String {
    m.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",")
}

/// Real dimension of the traceless anti-hermitian operators commuting with the
/// ground-state projector and every total charge.
pub fn commutant_dim(psi: &ExactState, sym: &OnsiteSymmetry) -> usize {
    let mut labels: Vec<Vec<i64>> = vec![Vec::new(); psi.lattice().hilbert_dim()];
    let g = psi.ground_vector();
    // charges are diagonal in a joint eigenbasis; label basis states by rounded eigenvalues
    let mut ops: Vec<Mat> = (0..sym.algebra.dim).map(|a| sym.total(a)).collect();
    ops.push(psi.projector() * C64::new(0.0, 1.0));
    let mut h = Mat::zeros(g.len(), g.len());
    for (i, o) in ops.iter().enumerate() {
        h += o * C64::new(0.0, -(1.0 + 0.618 * i as f64));
    }
    let eig = SymmetricEigen::new((&h + h.adjoint()) * C64::new(0.5, 0.0));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    for (i, v) in vals.iter().enumerate() {
        labels[i] = vec![(v * 1e6).round() as i64];
    }
    let mut blocks: BTreeMap<Vec<i64>, usize> = BTreeMap::new();
    for l in labels {
        *blocks.entry(l).or_default() += 1;
    }
    blocks.values().map(|b| b * b).sum::<usize>() - 1
}

/// `build_cech_dgla → solve_mc → commutator_class → pair` for a u(1) split.
pub fn mc_invariant(psi: &ExactState, split: &ChargeSplit, cover: &Cover, beta: &Cochain, order: usize) -> Result<McInvariant> {
    if split.parts.len() != 1 {
        return Err(InvariantError::NotU1);
    }
    let l = beta.degree;
    if (l + 3) % 2 != 0 {
        return Ok(McInvariant {
            k: None,
            values: BTreeMap::new(),
            residual: 0.0,
            note: Some(format!("no integer k solves 2k - 3 = {l}; the invariant is zero")),
        });
    }
    let k = (l + 3) / 2;
    let parts = split.matrices(0);
    let charge = parts.iter().fold(Mat::zeros(parts[0].nrows(), parts[0].nrows()), |a, b| a + b);
    // the finite-volume pre-cosheaf is constant; its complex is a sum of copies of one
    let handle = ConstantHandle { dim: 1 };
    let d = build_cech_dgla(cover, &handle as &dyn PreCosheafHandle, u1_curvature(&charge), order.max(k))?
        .with_splitting(first_order_from_split(&parts))?;
    let p = solve_mc(&d)?;
    let class = commutator_class(&d, &p);
    let psi_fn = |a: &Mat| psi.expect(a);
    let values = dgla::pair(&class, beta, &d.nerve, &psi_fn)?
        .into_iter()
        .map(|(m, v): (Monomial, C64)| (monomial_key(&m), [v.re, v.im]))
        .collect();
    Ok(McInvariant { k: Some(k), values, residual: p.residual, note: None })
}

/// A graph on the sphere given by integer vertex directions in `R^3`; edges are
/// the planar sectors between endpoint directions, so no edge may join
/// antipodal or parallel directions.
#[derive(Clone, Debug, PartialEq)]
pub struct ConeGraph {
    pub vertices: Vec<[i64; 3]>,
    pub edges: Vec<(usize, usize)>,
}

impl ConeGraph {
    /// Two poles joined through three equatorial midpoints.
    pub fn theta() -> Self {
        ConeGraph {
            vertices: vec![[0, 0, 1], [0, 0, -1], [1, 0, 0], [-1, 1, 0], [-1, -1, 0]],
            edges: vec![(0, 2), (2, 1), (0, 3), (3, 1), (0, 4), (4, 1)],
        }
    }

    pub fn k4() -> Self {
        ConeGraph {
            vertices: vec![[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]],
            edges: vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)],
        }
    }

    pub fn path() -> Self {
        ConeGraph { vertices: vec![[0, 0, 1], [1, 0, 0], [0, 0, -1]], edges: vec![(0, 1), (1, 2)] }
    }

    /// The equatorial triangle; its cone is the plane `z = 0`.
    pub fn equator() -> Self {
        ConeGraph { vertices: vec![[1, 0, 0], [-1, 1, 0], [-1, -1, 0]], edges: vec![(0, 1), (1, 2), (2, 0)] }
    }

    fn mid(&self, a: usize, b: usize) -> [i64; 3] {
        let (u, v) = (self.vertices[a], self.vertices[b]);
        [u[0] + v[0], u[1] + v[1], u[2] + v[2]]
    }

    pub fn cone(&self) -> SemilinearSet {
        let pieces = self.edges.iter().map(|&(a, b)| sector3(self.vertices[a], self.vertices[b])).collect();
        SemilinearSet::new(3, pieces).expect("nonempty sectors")
    }

    /// One element per vertex: the half-edges at that vertex. Adjacent elements
    /// meet along a ray; others only at the origin.
    pub fn star_cover(&self) -> Result<Cover> {
        let mut elements = Vec::new();
        for v in 0..self.vertices.len() {
            let pieces: Vec<_> = self
                .edges
                .iter()
                .filter_map(|&(a, b)| match (a == v, b == v) {
                    (true, _) => Some(sector3(self.vertices[v], self.mid(a, b))),
                    (_, true) => Some(sector3(self.vertices[v], self.mid(a, b))),
                    _ => None,
                })
                .collect();
            if pieces.is_empty() {
                return Err(InvariantError::BadSymmetry(format!("isolated vertex {v}")));
            }
            elements.push(SemilinearSet::new(3, pieces).expect("nonempty sectors"));
        }
        Ok(Cover::new(self.cone(), elements)?)
    }
}

#[derive(Clone, Debug)]
pub struct SubsetInvariant {
    pub cover: Cover,
    pub generators: Vec<Cochain>,
    pub values: Vec<HallValue>,
}

/// Pairing invariants of a state on a lattice near the cone over a graph, one per
/// basis cocycle of the first cohomology of the nerve.
pub fn subset_invariant(
    psi: &ExactState,
    sym: &OnsiteSymmetry,
    graph: &ConeGraph,
    epsilon: &Q,
    opts: &SplitOptions,
) -> Result<SubsetInvariant> {
    let lat = psi.lattice();
    if lat.dim != 3 {
        return Err(InvariantError::WrongDimension { expected: 3, found: lat.dim });
    }
    let cover = graph.star_cover()?;
    let apex = opts.apex.clone().unwrap_or_else(|| lattice_center(lat));
    let w = translate(&cover.base, &apex);
    for site in &lat.sites {
        let x: Vec<Q> = site.iter().map(|&v| q(v)).collect();
        let d = distance_linf(&x, &w);
        if &d > epsilon {
            return Err(InvariantError::NotConfined { site: site.clone(), distance: fmt_q(&d) });
        }
    }
    let nerve = build_nerve(&cover);
    let generators = cohomology(&nerve, 1).basis;
    if generators.is_empty() {
        return Ok(SubsetInvariant { cover, generators, values: vec![] });
    }
    let split = split_charge(psi, sym, &cover, &SplitOptions { apex: Some(apex), ..opts.clone() })?;
    if split.parts.len() != 1 {
        return Err(InvariantError::NotU1);
    }
    let parts = split.matrices(0);
    let values = generators
        .iter()
        .map(|b| pairing_value(psi, &parts, &nerve, b, 1))
        .collect::<Result<Vec<_>>>()?;
    Ok(SubsetInvariant { cover, generators, values })
}

/// Local operators supported near the cover elements, as a coordinate model:
/// each brick contributes `d_Y^2 − 1` coordinates, present on a tuple when the
/// brick lies within `radius` of every element in it.
pub struct DerivationHandle {
    blocks: Vec<(Vec<bool>, usize)>,
}

impl DerivationHandle {
    pub fn new(lat: &LatticeSystem, cover: &Cover, apex: &[Q], radius: &Q) -> Result<Self> {
        let regions: Vec<Region> = cover_regions(cover, apex).into_iter().map(Region::Set).collect();
        let mut blocks = Vec::new();
        for y in lat.bricks() {
            let near = regions
                .iter()
                .map(|r| Ok(&r.distance_to_brick(&y)? <= radius))
                .collect::<std::result::Result<Vec<bool>, LatticeError>>()?;
            let d = lat.brick_dim(&y);
            blocks.push((near, d * d - 1));
        }
        Ok(DerivationHandle { blocks })
    }
}

impl PreCosheafHandle for DerivationHandle {
    fn ambient_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.1).sum()
    }
    fn coordinates(&self, s: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut start = 0;
        for (near, n) in &self.blocks {
            if s.iter().all(|&i| near[i]) {
                out.extend(start..start + n);
            }
            start += n;
        }
        out
    }
}

/// On-site gauge handle for the sites of a lattice relative to an apex.
pub fn gauge_handle(lat: &LatticeSystem, cover: &Cover, apex: &[Q], radius: Q, generators: usize) -> dgla::GaugeHandle {
    dgla::GaugeHandle {
        sites: lat.sites.iter().map(|s| s.iter().map(|&v| q(v)).collect()).collect(),
        elements: cover_regions(cover, apex),
        radius,
        generators,
    }
}

/// `h(k) = (m + cos k_x + cos k_y) σ^z − sin k_x σ^x − sin k_y σ^y`, the Bloch
/// form of [`qwz_hopping`].
pub fn qwz_bloch(kx: f64, ky: f64, m: f64) -> Mat {
    pauli('z') * C64::new(m + kx.cos() + ky.cos(), 0.0)
        - pauli('x') * C64::new(kx.sin(), 0.0)
        - pauli('y') * C64::new(ky.sin(), 0.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct FermionHall {
    pub l: usize,
    pub mass: f64,
    pub real_space_re: f64,
    pub real_space_im: f64,
    pub chern: i64,
    pub chern_raw: f64,
}

impl FermionHall {
    pub fn real_space(&self) -> C64 {
        C64::new(self.real_space_re, self.real_space_im)
    }

    /// Real-space value per unit Chern number; `None` when the Chern number is zero.
    pub fn ratio(&self) -> Option<C64> {
        (self.chern != 0).then(|| self.real_space() / self.chern as f64)
    }
}

/// Plaquette Berry-flux sum of the lower band on an `n × n` grid.
pub fn chern_number(m: f64, n: usize) -> Result<f64> {
    let mut states = Vec::with_capacity(n * n);
    for a in 0..n {
        for b in 0..n {
            let k = |i: usize| 2.0 * PI * i as f64 / n as f64;
            let eig = SymmetricEigen::new(qwz_bloch(k(a), k(b), m));
            let (lo, hi) = if eig.eigenvalues[0] <= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
            if eig.eigenvalues[hi] - eig.eigenvalues[lo] < 1e-9 {
                return Err(InvariantError::Gapless);
            }
            states.push(eig.eigenvectors.column(lo).into_owned());
        }
    }
    let at = |a: usize, b: usize| &states[(a % n) * n + (b % n)];
    let link = |u: &nalgebra::DVector<C64>, v: &nalgebra::DVector<C64>| {
        let z = u.dotc(v);
        z / z.norm()
    };
    let mut flux = 0.0;
    for a in 0..n {
        for b in 0..n {
            let u1 = link(at(a, b), at(a + 1, b));
            let u2 = link(at(a + 1, b), at(a + 1, b + 1));
            let u3 = link(at(a, b + 1), at(a + 1, b + 1));
            let u4 = link(at(a, b), at(a, b + 1));
            flux += (u1 * u2 * u3.conj() * u4.conj()).arg();
        }
    }
    Ok(flux / (2.0 * PI))
}

/// Real-space value `Σ_{i<j} β_ij tr_W(P[[P,χ_i],[P,χ_j]])` for the three-cone
/// cover centred on an `l × l` torus, traced over sites within `l/4` of the apex,
/// together with the momentum-space Chern number on a `grid × grid` mesh.
pub fn fermion_hall_oracle(l: usize, m: f64, grid: usize) -> Result<FermionHall> {
    let chern_raw = chern_number(m, grid)?;
    let state = FreeFermionState::from_hopping(&qwz_hopping(l, m)).map_err(|e| match e {
        StateError::Gapless => InvariantError::Gapless,
        other => other.into(),
    })?;
    let cover = Cover::planar_cones(&[[1, 0], [-1, 1], [-1, -1]])?;
    let nerve = build_nerve(&cover);
    let beta = crate::nerve::fundamental_cocycle(&cover, 1)?;
    let n = 2 * l * l;
    let mut chi = vec![Mat::zeros(n, n); 3];
    let mut window = Vec::new();
    let li = l as i64;
    for x in 0..l {
        for y in 0..l {
            let pos = [qr(2 * x as i64 + 1 - li, 2), qr(2 * y as i64 + 1 - li, 2)];
            let owner = (0..3).find(|&i| cover.elements[i].contains(&pos)).expect("sectors cover the plane");
            let inside = pos.iter().all(|p| p.abs() <= qr(li, 4));
            for band in 0..2 {
                let o = 2 * (x * l + y) + band;
                chi[owner][(o, o)] = C64::new(1.0, 0.0);
                if inside {
                    window.push(o);
                }
            }
        }
    }
    let mut value = C64::new(0.0, 0.0);
    for s in nerve.simplices(1) {
        let c = crate::exact::to_f64(&beta.get(&s));
        if c != 0.0 {
            value += fermion_pairing_local(&state.p, &chi[s[0]], &chi[s[1]], &window)? * c;
        }
    }
    Ok(FermionHall {
        l,
        mass: m,
        real_space_re: value.re,
        real_space_im: value.im,
        chern: chern_raw.round() as i64,
        chern_raw,
    })
}

/// Provenance record for one invariant computation.
#[derive(Clone, Debug, Serialize)]
pub struct InvariantReport {
    pub model: String,
    pub cover: String,
    pub cocycle: BTreeMap<String, String>,
    pub order: usize,
    pub values: BTreeMap<String, [f64; 2]>,
    pub hall: Option<HallValue>,
    pub residuals: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub orientation_antisymmetric: bool,
    pub note: Option<String>,
}

impl InvariantReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    pub fn csv_header() -> &'static str {
        "model,cover,order,hall_raw_re,hall_raw_im,sigma,mc_re,mc_im,mc_residual,preservation,orientation_antisymmetric"
    }

    pub fn csv_row(&self) -> String {
        let h = self.hall.unwrap_or(HallValue { raw_re: 0.0, raw_im: 0.0, sigma: 0.0 });
        let mc = self.values.values().next().copied().unwrap_or([0.0, 0.0]);
        let r = |k: &str| self.residuals.get(k).copied().unwrap_or(0.0);
        format!(
            "{},{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.model,
            self.cover,
            self.order,
            h.raw_re,
            h.raw_im,
            h.sigma,
            mc[0],
            mc[1],
            r("mc"),
            r("preservation"),
            self.orientation_antisymmetric
        )
    }
}

/// Runs the split, the Hall pairing for `β` and `−β`, and the MC pipeline.
pub fn hall_report(
    model: &str,
    cover_id: &str,
    psi: &ExactState,
    sym: &OnsiteSymmetry,
    cover: &Cover,
    beta: &Cochain,
    order: usize,
    opts: &SplitOptions,
    workers: usize,
) -> Result<InvariantReport> {
    let split = split_charge(psi, sym, cover, opts)?;
    let hall = hall_conductance(psi, &split, cover, beta, workers)?;
    let flipped = hall_conductance(psi, &split, cover, &beta.scale(&q(-1)), workers)?;
    let mc = mc_invariant(psi, &split, cover, beta, order)?;
    let mut residuals = BTreeMap::new();
    residuals.insert("mc".to_string(), mc.residual);
    residuals.insert("preservation".to_string(), split.max_preservation_defect());
    residuals.insert("sum".to_string(), split.sum_defect);
    residuals.insert("equivariance".to_string(), split.equivariance_defect);
    residuals.insert("invariance".to_string(), split.invariance_defect);
    let mut tolerances = BTreeMap::new();
    tolerances.insert("preservation".to_string(), PRESERVE_TOL);
    tolerances.insert("mc".to_string(), 1e-9);
    Ok(InvariantReport {
        model: model.to_string(),
        cover: cover_id.to_string(),
        cocycle: beta.values.iter().map(|(s, v)| (monomial_key(&s.iter().map(|&i| i as u32).collect::<Vec<_>>()), fmt_q(v))).collect(),
        order,
        values: mc.values.clone(),
        hall: Some(hall),
        residuals,
        tolerances,
        orientation_antisymmetric: flipped.raw() == -hall.raw(),
        note: mc.note,
    })
}

/// `Σ_j q_j` restricted to lattice sites nearest each region; ties split evenly.
pub fn voronoi_charges(sym: &OnsiteSymmetry, regions: &[Region]) -> Result<Vec<AlmostLocalDerivation>> {
    let lat = &sym.lattice;
    let mut out = vec![GaugeFunction::default(); regions.len()];
    for s in &lat.sites {
        let ds = regions.iter().map(|r| r.distance_to_point(s)).collect::<std::result::Result<Vec<Q>, _>>()?;
        let best = ds.iter().min().expect("regions").clone();
        let winners: Vec<usize> = (0..ds.len()).filter(|&i| ds[i] == best).collect();
        for &i in &winners {
            out[i].values.insert(s.clone(), vec![1.0 / winners.len() as f64; sym.algebra.dim]);
        }
    }
    out.iter().map(|f| gauge_map(sym, f)).collect()
}
