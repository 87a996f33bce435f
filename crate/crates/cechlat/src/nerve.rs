//! Covers, Čech nerves with bounded-meet flags, and rational simplicial
//! cohomology on the sphere at infinity.

use crate::exact::{self, fmt_q, q, Q};
use crate::geometry::{self, canonicalize, fuzzy_leq, Polyhedron, SemilinearSet};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;

pub type Simplex = Vec<usize>;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NerveError {
    #[error("a cover needs at least one element")]
    EmptyCover,
    #[error("cover element {0} is not fuzzily contained in the base")]
    NotContained(usize),
    #[error("the cover elements miss the base along a ray")]
    NotCovering,
    #[error("dimension mismatch in cover")]
    Dimension,
    #[error("expected cohomology rank 1 in degree {degree}, found {rank}")]
    RankNotOne { degree: usize, rank: usize },
    #[error("refinement violated: fine element {fine} is not below coarse element {coarse}")]
    Refinement { fine: usize, coarse: usize },
    #[error("refinement map has length {found}, expected {expected}")]
    RefinementLength { expected: usize, found: usize },
}

#[derive(Clone, Debug)]
pub struct Cover {
    pub base: SemilinearSet,
    pub elements: Vec<SemilinearSet>,
}

impl Cover {
    /// Validates `U_i <= W` and `W <= ∨ U_i`.
    pub fn new(base: SemilinearSet, elements: Vec<SemilinearSet>) -> Result<Self, NerveError> {
        if elements.is_empty() {
            return Err(NerveError::EmptyCover);
        }
        if elements.iter().any(|u| u.dim != base.dim) {
            return Err(NerveError::Dimension);
        }
        for (i, u) in elements.iter().enumerate() {
            if !fuzzy_leq(u, &base).0 {
                return Err(NerveError::NotContained(i));
            }
        }
        let union = elements.iter().skip(1).fold(elements[0].clone(), |acc, u| geometry::join(&acc, u));
        if !fuzzy_leq(&base, &union).0 {
            return Err(NerveError::NotCovering);
        }
        Ok(Cover { base, elements })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.base.dim
    }

    /// Cover of `R^2` by the sectors between consecutive directions, which
    /// must be listed counterclockwise with gaps below pi.
    pub fn planar_cones(directions: &[[i64; 2]]) -> Result<Self, NerveError> {
        let k = directions.len();
        let elements = (0..k)
            .map(|i| {
                SemilinearSet::from_polyhedron(geometry::sector2(directions[i], directions[(i + 1) % k]))
                    .expect("nonempty sector")
            })
            .collect();
        Cover::new(SemilinearSet::whole(2), elements)
    }

    /// The `2^n` closed orthants of `R^n`, ordered by sign pattern.
    pub fn orthants(n: usize) -> Self {
        let elements = (0..1u32 << n)
            .map(|mask| {
                let rows: Vec<(Vec<i64>, i64)> = (0..n)
                    .map(|i| {
                        let mut e = vec![0i64; n];
                        e[i] = if mask & (1 << i) == 0 { -1 } else { 1 };
                        (e, 0)
                    })
                    .collect();
                let refs: Vec<(&[i64], i64)> = rows.iter().map(|(e, b)| (e.as_slice(), *b)).collect();
                SemilinearSet::from_polyhedron(Polyhedron::from_rows(n, &refs)).expect("orthant")
            })
            .collect();
        Cover { base: SemilinearSet::whole(n), elements }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Nerve {
    pub size: usize,
    /// Every nonempty increasing tuple with its boundedness flag.
    pub tuples: BTreeMap<Simplex, bool>,
}

impl Nerve {
    pub fn is_simplex(&self, s: &[usize]) -> bool {
        self.tuples.get(s).map_or(false, |b| !*b)
    }

    pub fn is_bounded(&self, s: &[usize]) -> bool {
        self.tuples.get(s).copied().unwrap_or(true)
    }

    /// Unbounded tuples with `p + 1` elements, in lexicographic order.
    pub fn simplices(&self, p: usize) -> Vec<Simplex> {
        self.tuples
            .iter()
            .filter(|(s, b)| s.len() == p + 1 && !**b)
            .map(|(s, _)| s.clone())
            .collect()
    }

    pub fn top_degree(&self) -> usize {
        self.tuples.iter().filter(|(_, b)| !**b).map(|(s, _)| s.len() - 1).max().unwrap_or(0)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .tuples
            .iter()
            .map(|(s, b)| serde_json::json!({"tuple": s, "bounded": b}))
            .collect();
        serde_json::json!({"size": self.size, "tuples": rows})
    }
}

/// Enumerates all index tuples; a tuple is bounded iff the intersection of
/// the skeleton cones of its members is `{0}`.
pub fn build_nerve(c: &Cover) -> Nerve {
    let m = c.len();
    let skeletons: Vec<Vec<Polyhedron>> = c.elements.iter().map(|u| canonicalize(u).cones).collect();
    let mut meets: BTreeMap<Simplex, Vec<Polyhedron>> = BTreeMap::new();
    let mut tuples = BTreeMap::new();
    for mask in 1u64..(1u64 << m) {
        let s: Simplex = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let cones = if s.len() == 1 {
            skeletons[s[0]].clone()
        } else {
            let parent = &meets[&s[..s.len() - 1]];
            let last = &skeletons[s[s.len() - 1]];
            let mut out = Vec::new();
            for a in parent {
                for b in last {
                    let x = a.intersect(b);
                    if x.is_unbounded() {
                        out.push(x);
                    }
                }
            }
            out
        };
        tuples.insert(s.clone(), cones.is_empty());
        meets.insert(s, cones);
    }
    Nerve { size: m, tuples }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cochain {
    pub degree: usize,
    pub values: BTreeMap<Simplex, Q>,
}

impl Cochain {
    pub fn zero(degree: usize) -> Self {
        Cochain { degree, values: BTreeMap::new() }
    }

    pub fn unit(s: Simplex) -> Self {
        let degree = s.len() - 1;
        Cochain { degree, values: BTreeMap::from([(s, Q::one())]) }
    }

    /// Value on an arbitrary ordering of distinct indices.
    pub fn get(&self, s: &[usize]) -> Q {
        match sort_with_sign(s) {
            Some((t, sign)) => self.values.get(&t).cloned().unwrap_or_else(Q::zero) * q(sign as i64),
            None => Q::zero(),
        }
    }

    pub fn scale(&self, c: &Q) -> Cochain {
        let values = self.values.iter().map(|(s, v)| (s.clone(), v * c)).filter(|(_, v)| !v.is_zero()).collect();
        Cochain { degree: self.degree, values }
    }

    pub fn add(&self, other: &Cochain) -> Cochain {
        let mut values = self.values.clone();
        for (s, v) in &other.values {
            let e = values.entry(s.clone()).or_insert_with(Q::zero);
            *e += v;
        }
        values.retain(|_, v| !v.is_zero());
        Cochain { degree: self.degree, values }
    }

    /// `(δβ)(s) = Σ_k (-1)^k β(s without s_k)` on unbounded simplices.
    pub fn coboundary(&self, nv: &Nerve) -> Cochain {
        let mut values = BTreeMap::new();
        for s in nv.simplices(self.degree + 1) {
            let mut acc = Q::zero();
            for k in 0..s.len() {
                let mut f = s.clone();
                f.remove(k);
                let v = self.get(&f);
                if k % 2 == 0 {
                    acc += v;
                } else {
                    acc -= v;
                }
            }
            if !acc.is_zero() {
                values.insert(s, acc);
            }
        }
        Cochain { degree: self.degree + 1, values }
    }

    pub fn is_cocycle(&self, nv: &Nerve) -> bool {
        self.coboundary(nv).values.is_empty()
    }

    /// Zeroes the values on bounded tuples.
    pub fn restrict(&self, nv: &Nerve) -> Cochain {
        let values = self.values.iter().filter(|(s, _)| nv.is_simplex(s)).map(|(s, v)| (s.clone(), v.clone())).collect();
        Cochain { degree: self.degree, values }
    }

    pub fn evaluate(&self, chain: &BTreeMap<Simplex, Q>) -> Q {
        chain.iter().fold(Q::zero(), |acc, (s, c)| acc + self.get(s) * c)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .values
            .iter()
            .map(|(s, v)| serde_json::json!({"simplex": s, "value": fmt_q(v)}))
            .collect();
        serde_json::json!({"degree": self.degree, "values": rows})
    }
}

/// Sorts distinct indices, returning the permutation sign; None on repeats.
pub fn sort_with_sign(s: &[usize]) -> Option<(Simplex, i32)> {
    let mut t = s.to_vec();
    let mut sign = 1;
    for i in 0..t.len() {
        for j in 0..t.len() - 1 - i {
            if t[j] > t[j + 1] {
                t.swap(j, j + 1);
                sign = -sign;
            } else if t[j] == t[j + 1] {
                return None;
            }
        }
    }
    if t.windows(2).any(|w| w[0] == w[1]) {
        return None;
    }
    Some((t, sign))
}

/// Coboundary matrix `δ_p`: rows are `(p+1)`-simplices, columns `p`-simplices.
fn coboundary_matrix(nv: &Nerve, p: usize) -> (Vec<Vec<Q>>, Vec<Simplex>, Vec<Simplex>) {
    let cols = nv.simplices(p);
    let rows = nv.simplices(p + 1);
    let index: BTreeMap<&Simplex, usize> = cols.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut m = vec![vec![Q::zero(); cols.len()]; rows.len()];
    for (r, s) in rows.iter().enumerate() {
        for k in 0..s.len() {
            let mut f = s.clone();
            f.remove(k);
            let c = index[&f];
            m[r][c] = if k % 2 == 0 { Q::one() } else { -Q::one() };
        }
    }
    (m, rows, cols)
}

#[derive(Clone, Debug)]
pub struct CohomologyGroup {
    pub degree: usize,
    pub rank: usize,
    pub basis: Vec<Cochain>,
}

pub fn cohomology(nv: &Nerve, p: usize) -> CohomologyGroup {
    let cols = nv.simplices(p);
    if cols.is_empty() {
        return CohomologyGroup { degree: p, rank: 0, basis: vec![] };
    }
    let (dp, _, _) = coboundary_matrix(nv, p);
    let kernel = if dp.is_empty() {
        (0..cols.len())
            .map(|i| {
                let mut v = vec![Q::zero(); cols.len()];
                v[i] = Q::one();
                v
            })
            .collect()
    } else {
        exact::nullspace(&dp, cols.len())
    };
    let mut span: Vec<Vec<Q>> = Vec::new();
    if p > 0 {
        // image of δ_{p-1}: its columns
        let (dm, _, prev) = coboundary_matrix(nv, p - 1);
        span = (0..prev.len()).map(|c| dm.iter().map(|row| row[c].clone()).collect()).collect();
    }
    let mut basis = Vec::new();
    let mut current = exact::rank(&span);
    for v in kernel {
        let mut trial = span.clone();
        trial.push(v.clone());
        let r = exact::rank(&trial);
        if r > current {
            current = r;
            span = trial;
            let v = primitive(&v);
            let values = cols.iter().cloned().zip(v).filter(|(_, x)| !x.is_zero()).collect();
            basis.push(Cochain { degree: p, values });
        }
    }
    CohomologyGroup { degree: p, rank: basis.len(), basis }
}

/// Rows of the boundary matrix `∂_{p+1}` seen as vectors on `p`-simplices,
/// i.e. the columns of `δ_p`.
fn boundary_vectors(nv: &Nerve, p: usize) -> Vec<Vec<Q>> {
    coboundary_matrix(nv, p).0
}

/// Integer multiple with coprime entries and first nonzero entry positive.
pub fn primitive(v: &[Q]) -> Vec<Q> {
    let mut l = num_bigint::BigInt::one();
    for x in v {
        l = l.lcm(x.denom());
    }
    let ints: Vec<num_bigint::BigInt> = v.iter().map(|x| (x * Q::from_integer(l.clone())).to_integer()).collect();
    let mut g = num_bigint::BigInt::zero();
    for x in &ints {
        g = g.gcd(x);
    }
    if g.is_zero() {
        return v.to_vec();
    }
    let first_neg = ints.iter().find(|x| !x.is_zero()).map_or(false, |x| x.is_negative());
    ints.into_iter()
        .map(|x| {
            let y = Q::new(x, g.clone());
            if first_neg {
                -y
            } else {
                y
            }
        })
        .collect()
}

/// A primitive integer cycle generating rational homology in degree `p`,
/// when that homology has rank 1.
pub fn fundamental_cycle(nv: &Nerve, p: usize) -> Option<BTreeMap<Simplex, Q>> {
    let simplices = nv.simplices(p);
    if simplices.is_empty() {
        return None;
    }
    // cycles: kernel of ∂_p = δ_{p-1}^T
    let cycles = if p == 0 {
        (0..simplices.len())
            .map(|i| {
                let mut v = vec![Q::zero(); simplices.len()];
                v[i] = Q::one();
                v
            })
            .collect()
    } else {
        let (dm, _, _) = coboundary_matrix(nv, p - 1);
        let cols = dm[0].len();
        let transpose: Vec<Vec<Q>> = (0..cols).map(|c| dm.iter().map(|row| row[c].clone()).collect()).collect();
        exact::nullspace(&transpose, simplices.len())
    };
    // boundaries: image of ∂_{p+1}, rows of δ_p
    let mut span = boundary_vectors(nv, p);
    let base = exact::rank(&span);
    let mut found = Vec::new();
    for c in cycles {
        let mut trial = span.clone();
        trial.push(c.clone());
        if exact::rank(&trial) > base + found.len() {
            span = trial;
            found.push(c);
        }
    }
    if found.len() != 1 {
        return None;
    }
    let c = primitive(&found[0]);
    Some(simplices.into_iter().zip(c).filter(|(_, x)| !x.is_zero()).collect())
}

/// Integral generator of `H^{n-1}` with `⟨β, c⟩ = orientation` against the
/// fundamental cycle `c`; the lexicographically first unit cocycle is used
/// when one pairs to ±1.
pub fn fundamental_cocycle(c: &Cover, orientation: i32) -> Result<Cochain, NerveError> {
    let nv = build_nerve(c);
    fundamental_cocycle_of(&nv, c.dim().saturating_sub(1), orientation)
}

pub fn fundamental_cocycle_of(nv: &Nerve, p: usize, orientation: i32) -> Result<Cochain, NerveError> {
    let h = cohomology(nv, p);
    if h.rank != 1 {
        return Err(NerveError::RankNotOne { degree: p, rank: h.rank });
    }
    let cycle = fundamental_cycle(nv, p).ok_or(NerveError::RankNotOne { degree: p, rank: 0 })?;
    let o = q(orientation.signum() as i64);
    for s in nv.simplices(p) {
        let unit = Cochain::unit(s);
        if !unit.is_cocycle(nv) {
            continue;
        }
        let v = unit.evaluate(&cycle);
        if v.abs() == Q::one() {
            return Ok(unit.scale(&(v * &o)));
        }
    }
    let z = &h.basis[0];
    let v = z.evaluate(&cycle);
    Ok(z.scale(&(o / v)))
}

/// Index map `φ` from a fine cover to a coarse one with `V_j <= U_{φ(j)}`.
#[derive(Clone, Debug)]
pub struct Refinement {
    pub phi: Vec<usize>,
    pub coarse_size: usize,
}

pub fn refine(fine: &Cover, coarse: &Cover, phi: Vec<usize>) -> Result<Refinement, NerveError> {
    if phi.len() != fine.len() {
        return Err(NerveError::RefinementLength { expected: fine.len(), found: phi.len() });
    }
    for (j, &i) in phi.iter().enumerate() {
        if i >= coarse.len() {
            return Err(NerveError::Refinement { fine: j, coarse: i });
        }
        if let (false, _) = fuzzy_leq(&fine.elements[j], &coarse.elements[i]) {
            return Err(NerveError::Refinement { fine: j, coarse: i });
        }
    }
    Ok(Refinement { phi, coarse_size: coarse.len() })
}

impl Refinement {
    pub fn identity(n: usize) -> Self {
        Refinement { phi: (0..n).collect(), coarse_size: n }
    }

    /// Sorted image of a fine tuple and the sign of the sorting permutation.
    pub fn image(&self, s: &[usize]) -> Option<(Simplex, i32)> {
        let mapped: Vec<usize> = s.iter().map(|&j| self.phi[j]).collect();
        sort_with_sign(&mapped)
    }

    /// `(φ*β)_{j_0..j_p} = β_{φ(j_0)..φ(j_p)}` on every fine tuple.
    pub fn pullback(&self, beta: &Cochain) -> Cochain {
        let n = self.phi.len();
        let mut values = BTreeMap::new();
        for mask in 1u64..(1u64 << n) {
            let s: Simplex = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            if s.len() != beta.degree + 1 {
                continue;
            }
            if let Some((t, sign)) = self.image(&s) {
                let v = beta.get(&t) * q(sign as i64);
                if !v.is_zero() {
                    values.insert(s, v);
                }
            }
        }
        Cochain { degree: beta.degree, values }
    }

    /// `(φ_*p)_i = Σ_{φ(j) = i} p_j` with antisymmetric reordering.
    pub fn pushforward(&self, chain: &BTreeMap<Simplex, Q>) -> BTreeMap<Simplex, Q> {
        let mut out: BTreeMap<Simplex, Q> = BTreeMap::new();
        for (s, v) in chain {
            if let Some((t, sign)) = self.image(s) {
                let e = out.entry(t).or_insert_with(Q::zero);
                *e += v * q(sign as i64);
            }
        }
        out.retain(|_, v| !v.is_zero());
        out
    }
}

/// Chain boundary `∂ e_s = Σ_k (-1)^k e_{s without s_k}` over all tuples.
pub fn chain_boundary(chain: &BTreeMap<Simplex, Q>) -> BTreeMap<Simplex, Q> {
    let mut out: BTreeMap<Simplex, Q> = BTreeMap::new();
    for (s, v) in chain {
        if s.len() < 2 {
            continue;
        }
        for k in 0..s.len() {
            let mut f = s.clone();
            f.remove(k);
            let e = out.entry(f).or_insert_with(Q::zero);
            if k % 2 == 0 {
                *e += v;
            } else {
                *e -= v;
            }
        }
    }
    out.retain(|_, v| !v.is_zero());
    out
}

pub fn betti_numbers(nv: &Nerve) -> Vec<usize> {
    (0..=nv.top_degree()).map(|p| cohomology(nv, p).rank).collect()
}
