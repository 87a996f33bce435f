//! Augmented Čech complexes as sub-DGLAs of `F(W) ⊗ Λ•V ⊗ Sym(g*[−2])`.
//!
//! An element `A ⊗ e_s ⊗ t^m` has degree `|s| − 2|m|`. The differential is
//! contraction with `Σ_i f^i`, so `∂ e_{i_0…i_k} = Σ_a (−1)^a e_{…î_a…}` and
//! `∂ e_i = e_∅`. Operator values are full matrices on the finite truncation and
//! the bracket of values is the matrix commutator.

use crate::exact::{rref, solve, sparse_rank, to_f64, Q};
use crate::lattice::{commutator_mat, max_abs, Mat};
use crate::nerve::{Cochain, Cover, Nerve, Refinement, Simplex};
use crate::lattice::C64;
use num_traits::{One, Zero};
use serde_json::json;
use std::collections::BTreeMap;

pub type Monomial = Vec<u32>;

const PRUNE: f64 = 1e-15;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DglaError {
    #[error("augmented Čech complex has homology of rank {rank} in degree {degree}")]
    NotAcyclic { degree: i64, rank: usize },
    #[error("order {order}: linear solve left residual {residual:.3e}")]
    Unsolvable { order: usize, residual: f64 },
    #[error("curvature must be a degree −2 element on the augmentation")]
    BadCurvature,
    #[error("splitting does not sum to the curvature (defect {0:.3e})")]
    BadSplitting(f64),
    #[error("element is not a cycle (boundary {0:.3e})")]
    NotCycle(f64),
    #[error("cochain is not a cocycle")]
    NotCocycle,
    #[error("gauge parameter must have degree 0 and positive order")]
    BadGauge,
}

pub fn monomial_degree(m: &[u32]) -> usize {
    m.iter().map(|&e| e as usize).sum()
}

fn monomial_mul(a: &[u32], b: &[u32]) -> Monomial {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `e_s ∧ e_r` as a sorted simplex with sign, or `None` when they overlap.
pub fn wedge(s: &[usize], r: &[usize]) -> Option<(Simplex, f64)> {
    let mut inversions = 0usize;
    for a in s {
        for b in r {
            if a == b {
                return None;
            }
            if a > b {
                inversions += 1;
            }
        }
    }
    let mut out: Simplex = s.iter().chain(r).copied().collect();
    out.sort_unstable();
    Some((out, if inversions % 2 == 0 { 1.0 } else { -1.0 }))
}

#[derive(Clone, Debug)]
pub struct CechElement {
    pub size: usize,
    pub comps: BTreeMap<(Simplex, Monomial), Mat>,
}

impl CechElement {
    pub fn zero(size: usize) -> Self {
        CechElement { size, comps: BTreeMap::new() }
    }

    pub fn single(s: Simplex, m: Monomial, a: Mat) -> Self {
        let mut e = CechElement::zero(a.nrows());
        e.comps.insert((s, m), a);
        e
    }

    fn accumulate(&mut self, key: (Simplex, Monomial), a: Mat) {
        match self.comps.get_mut(&key) {
            Some(c) => *c += a,
            None => {
                self.comps.insert(key, a);
            }
        }
    }

    fn prune(mut self) -> Self {
        self.comps.retain(|_, m| max_abs(m) > PRUNE);
        self
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, v) in &other.comps {
            out.accumulate(k.clone(), v.clone());
        }
        out.prune()
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, c: f64) -> Self {
        CechElement {
            size: self.size,
            comps: self.comps.iter().map(|(k, v)| (k.clone(), v * C64::new(c, 0.0))).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.comps.values().map(max_abs).fold(0.0, f64::max)
    }

    pub fn degrees(&self) -> Vec<i64> {
        let mut d: Vec<i64> = self
            .comps
            .keys()
            .map(|(s, m)| s.len() as i64 - 2 * monomial_degree(m) as i64)
            .collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    pub fn truncate(&self, order: usize) -> Self {
        CechElement {
            size: self.size,
            comps: self
                .comps
                .iter()
                .filter(|((_, m), _)| monomial_degree(m) <= order)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn order_part(&self, k: usize) -> Self {
        CechElement {
            size: self.size,
            comps: self
                .comps
                .iter()
                .filter(|((_, m), _)| monomial_degree(m) == k)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn boundary(&self) -> Self {
        self.boundary_raw().prune()
    }

    fn boundary_raw(&self) -> Self {
        let mut out = CechElement::zero(self.size);
        for ((s, m), v) in &self.comps {
            for a in 0..s.len() {
                let mut face = s.clone();
                face.remove(a);
                let sign = if a % 2 == 0 { 1.0 } else { -1.0 };
                out.accumulate((face, m.clone()), v * C64::new(sign, 0.0));
            }
        }
        out
    }

    /// Graded bracket, dropping monomials above `order`.
    pub fn bracket(&self, other: &Self, order: usize) -> Self {
        self.bracket_raw(other, order).prune()
    }

    fn bracket_raw(&self, other: &Self, order: usize) -> Self {
        let mut out = CechElement::zero(self.size);
        for ((s, m), a) in &self.comps {
            for ((r, n), b) in &other.comps {
                if monomial_degree(m) + monomial_degree(n) > order {
                    continue;
                }
                if let Some((w, sign)) = wedge(s, r) {
                    out.accumulate((w, monomial_mul(m, n)), commutator_mat(a, b) * C64::new(sign, 0.0));
                }
            }
        }
        out
    }

    /// Image under the algebra map `e_j ↦ e_{φ(j)}`.
    pub fn pushforward(&self, phi: &Refinement) -> Self {
        let mut out = CechElement::zero(self.size);
        for ((s, m), v) in &self.comps {
            if s.is_empty() {
                out.accumulate((vec![], m.clone()), v.clone());
            } else if let Some((img, sign)) = phi.image(s) {
                out.accumulate((img, m.clone()), v * C64::new(sign as f64, 0.0));
            }
        }
        out.prune()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let comps: Vec<serde_json::Value> = self
            .comps
            .iter()
            .map(|((s, m), v)| {
                let rows: Vec<Vec<[f64; 2]>> = (0..v.nrows())
                    .map(|i| (0..v.ncols()).map(|j| [v[(i, j)].re, v[(i, j)].im]).collect())
                    .collect();
                json!({"simplex": s, "monomial": m, "matrix": rows})
            })
            .collect();
        json!({"size": self.size, "components": comps})
    }
}

/// Finite-dimensional model of a pre-cosheaf: `F(U_s)` is the span of the
/// listed coordinates of a fixed ambient space, co-restrictions are inclusions.
/// The empty simplex stands for the covered set `W`.
pub trait PreCosheafHandle {
    fn ambient_dim(&self) -> usize;
    fn coordinates(&self, s: &[usize]) -> Vec<usize>;
}

/// A pre-cosheaf whose value is the same space on every tuple.
pub struct ConstantHandle {
    pub dim: usize,
}

impl PreCosheafHandle for ConstantHandle {
    fn ambient_dim(&self) -> usize {
        self.dim
    }
    fn coordinates(&self, _s: &[usize]) -> Vec<usize> {
        (0..self.dim).collect()
    }
}

/// On-site gauge functions: `F(U)` is spanned by `(site, generator)` pairs with
/// the site in the `radius`-thickening of every cover element of the tuple.
pub struct GaugeHandle {
    pub sites: Vec<Vec<Q>>,
    pub elements: Vec<crate::geometry::SemilinearSet>,
    pub radius: Q,
    pub generators: usize,
}

impl PreCosheafHandle for GaugeHandle {
    fn ambient_dim(&self) -> usize {
        self.sites.len() * self.generators
    }
    fn coordinates(&self, s: &[usize]) -> Vec<usize> {
        let mut out = Vec::new();
        for (j, x) in self.sites.iter().enumerate() {
            if s.iter().all(|&i| crate::geometry::distance_linf(x, &self.elements[i]) <= self.radius) {
                out.extend((0..self.generators).map(|a| j * self.generators + a));
            }
        }
        out
    }
}

pub fn subsets(n: usize, k: usize) -> Vec<Simplex> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Simplex, out: &mut Vec<Simplex>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Homology ranks of the augmented Čech complex of `handle` over a cover with
/// `n` elements, indexed by Čech degree `−1..=n−1`.
pub fn augmented_homology(handle: &dyn PreCosheafHandle, n: usize) -> Vec<(i64, usize)> {
    let mut dims = Vec::new();
    let mut cols: Vec<Vec<(Simplex, usize)>> = Vec::new();
    for size in 0..=n {
        let mut c = Vec::new();
        for s in subsets(n, size) {
            for x in handle.coordinates(&s) {
                c.push((s.clone(), x));
            }
        }
        dims.push(c.len());
        cols.push(c);
    }
    // ranks[size] = rank of ∂ from Λ^size to Λ^{size−1}
    let mut ranks = vec![0usize; n + 2];
    for size in 1..=n {
        let index: BTreeMap<(Simplex, usize), usize> =
            cols[size - 1].iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
        let mut rows: Vec<BTreeMap<usize, Q>> = Vec::new();
        for (s, x) in &cols[size] {
            let mut row = BTreeMap::new();
            for a in 0..s.len() {
                let mut face = s.clone();
                face.remove(a);
                let idx = index[&(face, *x)];
                row.insert(idx, if a % 2 == 0 { Q::one() } else { -Q::one() });
            }
            rows.push(row);
        }
        ranks[size] = sparse_rank(rows);
    }
    (0..=n)
        .map(|size| (size as i64 - 1, dims[size] - ranks[size] - ranks[size + 1]))
        .collect()
}

/// Min-norm right inverse of `∂: Λ^{d+1} → Λ^d` on the image, as a rational
/// matrix indexed by `subsets(n, d+1) × subsets(n, d)`.
fn boundary_pseudo_inverse(n: usize, d: usize) -> (Vec<Simplex>, Vec<Simplex>, Vec<Vec<Q>>) {
    let lower = subsets(n, d);
    let upper = subsets(n, d + 1);
    let li: BTreeMap<Simplex, usize> = lower.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let mut m = vec![vec![Q::zero(); upper.len()]; lower.len()];
    for (c, s) in upper.iter().enumerate() {
        for a in 0..s.len() {
            let mut face = s.clone();
            face.remove(a);
            m[li[&face]][c] = if a % 2 == 0 { Q::one() } else { -Q::one() };
        }
    }
    let nl = lower.len();
    let mut a = vec![vec![Q::zero(); nl]; nl];
    for i in 0..nl {
        for j in 0..nl {
            a[i][j] = (0..upper.len()).map(|k| &m[i][k] * &m[j][k]).sum();
        }
    }
    let mut red = a.clone();
    let pivots = rref(&mut red);
    let sub: Vec<Vec<Q>> = pivots.iter().map(|&i| pivots.iter().map(|&j| a[i][j].clone()).collect()).collect();
    let r = pivots.len();
    let mut inv = vec![vec![Q::zero(); r]; r];
    for col in 0..r {
        let e: Vec<Q> = (0..r).map(|i| if i == col { Q::one() } else { Q::zero() }).collect();
        let x = solve(&sub, &e, r).expect("principal block is invertible");
        for i in 0..r {
            inv[i][col] = x[i].clone();
        }
    }
    let mut l = vec![vec![Q::zero(); nl]; upper.len()];
    for u in 0..upper.len() {
        for (pi, &p) in pivots.iter().enumerate() {
            let mut acc = Q::zero();
            for (qi, &qv) in pivots.iter().enumerate() {
                acc += &m[qv][u] * &inv[qi][pi];
            }
            l[u][p] = acc;
        }
    }
    (upper, lower, l)
}

#[derive(Clone, Debug)]
pub struct PointedDGLA {
    pub cover_size: usize,
    pub nerve: Nerve,
    pub order: usize,
    pub curvature: CechElement,
    pub splitting: Option<CechElement>,
    pub homology: Vec<(i64, usize)>,
}

pub fn build_cech_dgla(
    cover: &Cover,
    handle: &dyn PreCosheafHandle,
    curvature: CechElement,
    order: usize,
) -> Result<PointedDGLA, DglaError> {
    if curvature.comps.keys().any(|(s, m)| !s.is_empty() || monomial_degree(m) != 1) {
        return Err(DglaError::BadCurvature);
    }
    let homology = augmented_homology(handle, cover.len());
    if let Some(&(degree, rank)) = homology.iter().find(|(_, r)| *r != 0) {
        return Err(DglaError::NotAcyclic { degree, rank });
    }
    Ok(PointedDGLA {
        cover_size: cover.len(),
        nerve: crate::nerve::build_nerve(cover),
        order,
        curvature,
        splitting: None,
        homology,
    })
}

impl PointedDGLA {
    /// Uses a pre-cosheaf splitting `p_1` with `∂p_1 = B` for the first order.
    pub fn with_splitting(mut self, p1: CechElement) -> Result<Self, DglaError> {
        let defect = p1.boundary().sub(&self.curvature).norm();
        let scale = self.curvature.norm().max(1.0);
        if defect > 1e-10 * scale {
            return Err(DglaError::BadSplitting(defect));
        }
        self.splitting = Some(p1);
        Ok(self)
    }

    /// `max |∂p + ½[p,p] − B|` up to the truncation order.
    pub fn mc_residual(&self, p: &CechElement) -> f64 {
        let mut r = p.boundary_raw();
        for (k, v) in p.bracket_raw(p, self.order).scale(0.5).comps {
            r.accumulate(k, v);
        }
        for (k, v) in self.curvature.scale(-1.0).comps {
            r.accumulate(k, v);
        }
        r.truncate(self.order).norm()
    }

    pub fn is_central(&self, x: &CechElement) -> bool {
        let scale = self.curvature.norm().max(1.0) * x.norm().max(1.0);
        self.curvature.bracket(x, usize::MAX).norm() <= 1e-10 * scale
    }

    /// Min-norm `b` with `∂b = y` for `y` homogeneous in wedge degree.
    fn lift(&self, y: &CechElement, order: usize) -> Result<CechElement, DglaError> {
        let mut out = CechElement::zero(y.size);
        let mut by_degree: BTreeMap<usize, Vec<(&(Simplex, Monomial), &Mat)>> = BTreeMap::new();
        for (k, v) in &y.comps {
            by_degree.entry(k.0.len()).or_default().push((k, v));
        }
        for (d, items) in by_degree {
            if d + 1 > self.cover_size {
                continue;
            }
            let (upper, lower, l) = boundary_pseudo_inverse(self.cover_size, d);
            let li: BTreeMap<&Simplex, usize> = lower.iter().enumerate().map(|(i, s)| (s, i)).collect();
            for ((s, m), v) in items {
                let col = li[s];
                for (u, us) in upper.iter().enumerate() {
                    let c = to_f64(&l[u][col]);
                    if c != 0.0 {
                        out.accumulate((us.clone(), m.clone()), v * C64::new(c, 0.0));
                    }
                }
            }
        }
        let out = out.prune();
        let residual = out.boundary().sub(y).norm();
        if residual > 1e-9 * y.norm().max(1.0) {
            return Err(DglaError::Unsolvable { order, residual });
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct MCElement {
    pub p: CechElement,
    pub residual: f64,
}

/// Order-by-order solution of `∂p + ½[p,p] = B`.
pub fn solve_mc(d: &PointedDGLA) -> Result<MCElement, DglaError> {
    let mut p = match &d.splitting {
        Some(p1) => p1.clone(),
        None => d.lift(&d.curvature, 1)?,
    };
    for k in 2..=d.order {
        let q = p.bracket(&p, k).order_part(k).scale(0.5);
        let b = d.lift(&q.scale(-1.0), k)?;
        p = p.add(&b);
    }
    let residual = d.mc_residual(&p);
    Ok(MCElement { p, residual })
}

/// `exp(ad_a)(p) + ((1 − exp(ad_a))/ad_a)(∂a)`.
pub fn gauge_act(d: &PointedDGLA, a: &CechElement, p: &MCElement) -> Result<MCElement, DglaError> {
    if a.comps.keys().any(|(s, m)| s.len() != 2 * monomial_degree(m) || monomial_degree(m) == 0) {
        return Err(DglaError::BadGauge);
    }
    let da = a.boundary();
    let mut out = p.p.clone();
    let mut term_p = p.p.clone();
    let mut term_d = da.clone();
    let mut fact_p = 1.0;
    let mut fact_d = 1.0;
    out = out.sub(&da);
    for n in 1..=d.order {
        term_p = a.bracket(&term_p, d.order);
        term_d = a.bracket(&term_d, d.order);
        fact_p *= n as f64;
        fact_d *= (n + 1) as f64;
        out = out.add(&term_p.scale(1.0 / fact_p)).sub(&term_d.scale(1.0 / fact_d));
    }
    let out = out.truncate(d.order);
    let residual = d.mc_residual(&out);
    Ok(MCElement { p: out, residual })
}

pub fn commutator_class(d: &PointedDGLA, p: &MCElement) -> CechElement {
    p.p.bracket(&p.p, d.order)
}

/// `ψ(Σ_s β_s f_s)` per monomial, with `β_s = 0` on bounded meets.
pub fn pair(
    f: &CechElement,
    beta: &Cochain,
    nerve: &Nerve,
    psi: &dyn Fn(&Mat) -> C64,
) -> Result<BTreeMap<Monomial, C64>, DglaError> {
    let b = f.boundary().norm();
    if b > 1e-9 * f.norm().max(1.0) {
        return Err(DglaError::NotCycle(b));
    }
    if !beta.is_cocycle(nerve) {
        return Err(DglaError::NotCocycle);
    }
    Ok(pair_unchecked(f, beta, nerve, psi))
}

pub fn pair_unchecked(
    f: &CechElement,
    beta: &Cochain,
    nerve: &Nerve,
    psi: &dyn Fn(&Mat) -> C64,
) -> BTreeMap<Monomial, C64> {
    let mut sums: BTreeMap<Monomial, Mat> = BTreeMap::new();
    for ((s, m), v) in &f.comps {
        if s.len() != beta.degree + 1 || !nerve.is_simplex(s) || nerve.is_bounded(s) {
            continue;
        }
        let c = beta.get(s);
        if c.is_zero() {
            continue;
        }
        let term = v * C64::new(to_f64(&c), 0.0);
        match sums.get_mut(m) {
            Some(acc) => *acc += term,
            None => {
                sums.insert(m.clone(), term);
            }
        }
    }
    sums.into_iter().map(|(m, a)| (m, psi(&a))).collect()
}

/// `Σ_i Q_i e_i t` with `t` the single generator of `Sym(u(1)*)`.
pub fn first_order_from_split(parts: &[Mat]) -> CechElement {
    let mut p = CechElement::zero(parts[0].nrows());
    for (i, a) in parts.iter().enumerate() {
        p.accumulate((vec![i], vec![1]), a.clone());
    }
    p
}

pub fn u1_curvature(charge: &Mat) -> CechElement {
    CechElement::single(vec![], vec![1], charge.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::tests::random_ah;
    use crate::lattice::{kron, pauli};
    use crate::nerve::{fundamental_cocycle, refine};
    use crate::exact::q;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn three_cones() -> Cover {
        Cover::planar_cones(&[[1, 0], [-1, 1], [-1, -1]]).unwrap()
    }

    fn random_element(n: usize, size: usize, order: usize, rng: &mut ChaCha8Rng) -> CechElement {
        let mut e = CechElement::zero(size);
        for _ in 0..4 {
            let k = rng.gen_range(0..=n);
            let subs = subsets(n, k);
            let s = subs[rng.gen_range(0..subs.len())].clone();
            let m = vec![rng.gen_range(0..=order as u32)];
            e.accumulate((s, m), random_ah(size, rng));
        }
        e
    }

    #[test]
    fn boundary_squares_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let e = random_element(4, 3, 2, &mut rng);
            assert!(e.boundary().boundary().norm() < 1e-14);
        }
    }

    #[test]
    fn graded_antisymmetry_jacobi_leibniz() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..10 {
            let x = CechElement::single(vec![0], vec![1], random_ah(3, &mut rng));
            let y = CechElement::single(vec![1, 2], vec![0], random_ah(3, &mut rng));
            let z = CechElement::single(vec![3], vec![1], random_ah(3, &mut rng));
            let (dx, dy) = (1.0f64, 2.0f64);
            let sgn = |a: f64, b: f64| if (a * b) as i64 % 2 == 0 { 1.0 } else { -1.0 };
            let xy = x.bracket(&y, 9);
            let yx = y.bracket(&x, 9);
            assert!(xy.add(&yx.scale(sgn(dx, dy))).norm() < 1e-13);
            let lhs = x.bracket(&y.bracket(&z, 9), 9);
            let rhs = x.bracket(&y, 9).bracket(&z, 9).add(&y.bracket(&x.bracket(&z, 9), 9).scale(sgn(dx, dy)));
            assert!(lhs.sub(&rhs).norm() < 1e-12);
            let left = xy.boundary();
            let right = x.boundary().bracket(&y, 9).add(&x.bracket(&y.boundary(), 9).scale(-1.0));
            assert!(left.sub(&right).norm() < 1e-12);
        }
    }

    #[test]
    fn acyclicity_of_handles() {
        let c = three_cones();
        let sites: Vec<Vec<Q>> = (-2..=2)
            .flat_map(|x| (-2..=2).map(move |y| vec![q(x), q(y)]))
            .collect();
        let h = GaugeHandle { sites, elements: c.elements.clone(), radius: q(0), generators: 1 };
        assert!(augmented_homology(&h, 3).iter().all(|(_, r)| *r == 0));
        assert!(augmented_homology(&ConstantHandle { dim: 5 }, 3).iter().all(|(_, r)| *r == 0));
        let one = augmented_homology(&ConstantHandle { dim: 2 }, 1);
        assert_eq!(one, vec![(-1, 0), (0, 0)]);
    }

    #[test]
    fn non_covering_handle_is_not_acyclic() {
        struct Gap;
        impl PreCosheafHandle for Gap {
            fn ambient_dim(&self) -> usize {
                2
            }
            fn coordinates(&self, s: &[usize]) -> Vec<usize> {
                if s.is_empty() { vec![0, 1] } else { vec![0] }
            }
        }
        let h = augmented_homology(&Gap, 2);
        assert!(h.iter().any(|(d, r)| *d == -1 && *r == 1));
    }

    fn u1_setup(parts: Vec<Mat>) -> (PointedDGLA, Mat) {
        let q_op: Mat = parts.iter().fold(Mat::zeros(parts[0].nrows(), parts[0].nrows()), |a, b| a + b);
        let d = build_cech_dgla(&three_cones(), &ConstantHandle { dim: 1 }, u1_curvature(&q_op), 2)
            .unwrap()
            .with_splitting(first_order_from_split(&parts))
            .unwrap();
        (d, q_op)
    }

    #[test]
    fn one_element_cover() {
        let c = Cover::new(crate::geometry::SemilinearSet::whole(2), vec![crate::geometry::SemilinearSet::whole(2)]).unwrap();
        let qz = pauli('z') * C64::new(0.0, 1.0);
        let d = build_cech_dgla(&c, &ConstantHandle { dim: 1 }, u1_curvature(&qz), 3).unwrap();
        let p = solve_mc(&d).unwrap();
        assert_eq!(p.p.comps.len(), 1);
        assert!(max_abs(&(&p.p.comps[&(vec![0], vec![1])] - &qz)) < 1e-15);
        assert!(p.residual < 1e-15);
    }

    #[test]
    fn mc_for_commuting_charges() {
        let i = C64::new(0.0, 1.0);
        let one = pauli('1');
        let z = pauli('z');
        let parts = vec![
            kron(&kron(&z, &one), &one) * i,
            kron(&kron(&one, &z), &one) * i,
            kron(&kron(&one, &one), &z) * i,
        ];
        let (d, _) = u1_setup(parts);
        let p = solve_mc(&d).unwrap();
        assert!(p.residual < 1e-12);
        assert!(commutator_class(&d, &p).norm() < 1e-14);
    }

    #[test]
    fn mc_for_noncommuting_invariant_parts() {
        // parts commuting with the total but not with each other
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let size = 4;
        let diag = |v: [f64; 4]| Mat::from_diagonal(&nalgebra::DVector::from_iterator(4, v.iter().map(|x| C64::new(0.0, *x))));
        let q_op = diag([1.0, 0.0, 0.0, -1.0]);
        let mut block = random_ah(2, &mut rng);
        block[(0, 0)] = C64::new(0.0, 0.0);
        block[(1, 1)] = C64::new(0.0, 0.0);
        let mut x = Mat::zeros(size, size);
        for a in 0..2 {
            for b in 0..2 {
                x[(1 + a, 1 + b)] = block[(a, b)];
            }
        }
        let q0 = diag([0.5, 0.2, -0.2, -0.5]) + &x;
        let q1 = diag([0.25, -0.1, 0.3, -0.25]) - &x * C64::new(0.3, 0.0);
        let q2 = &q_op - &q0 - &q1;
        let (d, _) = u1_setup(vec![q0.clone(), q1.clone(), q2]);
        let p = solve_mc(&d).unwrap();
        assert!(p.residual < 1e-12, "{}", p.residual);
        let cls = commutator_class(&d, &p);
        let c01 = &cls.comps[&(vec![0, 1], vec![2])];
        assert!(max_abs(&(c01 - commutator_mat(&q0, &q1) * C64::new(2.0, 0.0))) < 1e-12);
        let mut ga = CechElement::zero(size);
        ga.accumulate((vec![0, 2], vec![1]), x.clone() * C64::new(0.7, 0.0));
        let p2 = gauge_act(&d, &ga, &p).unwrap();
        assert!(p2.residual < 1e-12);
        let lhs = cls.sub(&commutator_class(&d, &p2)).truncate(2);
        let rhs = p2.p.sub(&p.p).boundary().scale(2.0).truncate(2);
        assert!(lhs.sub(&rhs).norm() < 1e-12);
        let central = CechElement::single(vec![0, 1], vec![1], q_op.clone());
        let p3 = gauge_act(&d, &central, &p).unwrap();
        assert!(p3.p.sub(&p.p.sub(&central.boundary())).norm() < 1e-14);
    }

    /// Anti-hermitian 3x3 operator preserving the state `e_0`.
    fn preserving(rng: &mut ChaCha8Rng) -> Mat {
        let mut a = random_ah(3, rng);
        for j in 1..3 {
            a[(0, j)] = C64::new(0.0, 0.0);
            a[(j, 0)] = C64::new(0.0, 0.0);
        }
        a
    }

    #[test]
    fn pairing_kills_coboundaries_and_exact_commutators() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let c3 = three_cones();
        let nv = crate::nerve::build_nerve(&c3);
        let psi = |a: &Mat| a[(0, 0)];
        let beta = fundamental_cocycle(&c3, 1).unwrap();
        let x = CechElement::single(vec![0, 1], vec![1], preserving(&mut rng));
        let y = CechElement::single(vec![2], vec![1], random_ah(3, &mut rng));
        let f = x.bracket(&y, 2).boundary();
        let vals = pair(&f, &beta, &nv, &psi).unwrap();
        assert!(!vals.is_empty());
        assert!(vals.values().all(|v| v.norm() < 1e-12));
        let diag = |v: [f64; 3]| Mat::from_diagonal(&nalgebra::DVector::from_iterator(3, v.iter().map(|x| C64::new(0.0, *x))));
        let x = preserving(&mut rng);
        let parts = [
            diag([0.5, 0.3, -0.1]) + &x,
            diag([0.2, -0.7, 0.4]) - &x,
            diag([0.3, 0.4, -0.3]),
        ];
        let p1 = first_order_from_split(&parts);
        let cls = p1.bracket(&p1, 2);
        let cob = Cochain::unit(vec![1]).coboundary(&nv);
        for v in pair(&cls, &cob, &nv, &psi).unwrap().values() {
            assert!(v.norm() < 1e-12);
        }
        let shifted = cls.add(&CechElement::single(vec![0], vec![2], random_ah(3, &mut rng)));
        assert!(matches!(pair(&shifted, &beta, &nv, &psi), Err(DglaError::NotCycle(_))));
    }

    #[test]
    fn refinement_compatibility_of_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let c3 = three_cones();
        let nv = crate::nerve::build_nerve(&c3);
        let beta = fundamental_cocycle(&c3, 1).unwrap();
        let six = Cover::planar_cones(&[[1, 0], [1, 1], [-1, 1], [-1, 0], [-1, -1], [1, -1]]).unwrap();
        let r = refine(&six, &c3, vec![0, 0, 1, 1, 2, 2]).unwrap();
        let nv6 = crate::nerve::build_nerve(&six);
        let psi = |a: &Mat| a[(0, 0)] + a[(1, 2)];
        for _ in 0..5 {
            let mut fine = CechElement::zero(3);
            for s in subsets(6, 2) {
                if nv6.is_simplex(&s) && !nv6.is_bounded(&s) {
                    fine.accumulate((s, vec![2]), random_ah(3, &mut rng));
                }
            }
            let lhs = pair_unchecked(&fine.pushforward(&r), &beta, &nv, &psi);
            let rhs = pair_unchecked(&fine, &r.pullback(&beta), &nv6, &psi);
            let diff = (lhs[&vec![2]] - rhs[&vec![2]]).norm();
            assert!(diff < 1e-12, "{diff}");
        }
    }

    #[test]
    fn pushforward_is_chain_and_bracket_map() {
        let r = Refinement::identity(3);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = random_element(3, 2, 1, &mut rng);
        let y = random_element(3, 2, 1, &mut rng);
        assert!(x.pushforward(&r).sub(&x).norm() < 1e-15);
        let merge = Refinement { phi: vec![0, 0, 1], coarse_size: 2 };
        assert!(x.boundary().pushforward(&merge).sub(&x.pushforward(&merge).boundary()).norm() < 1e-13);
        let lhs = x.bracket(&y, 5).pushforward(&merge);
        let rhs = x.pushforward(&merge).bracket(&y.pushforward(&merge), 5);
        assert!(lhs.sub(&rhs).norm() < 1e-13);
    }
}
