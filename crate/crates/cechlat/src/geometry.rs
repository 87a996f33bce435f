//! Exact rational geometry of closed semilinear sets in the l-infinity metric.
//!
//! Sets are finite unions of polyhedra. The fuzzy pre-order `U <= V` means
//! `U ⊆ V^r` for some finite `r`, and is decided on conical skeletons.

use crate::exact::{self, dot, fmt_q, maximize, nullspace, parse_q, q, solve, LpOutcome, Q};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::fmt;

pub const MAX_DIM: usize = 4;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("ambient dimension {0} exceeds the cap of {MAX_DIM}")]
    DimensionCap(usize),
    #[error("half-space normal is the zero vector")]
    ZeroNormal,
    #[error("polyhedra admit only non-strict half-spaces")]
    StrictHalfSpace,
    #[error("a semilinear set needs at least one nonempty piece")]
    Empty,
    #[error("negative thickening radius")]
    NegativeRadius,
    #[error("the sets do not intersect")]
    EmptyIntersection,
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HalfSpace {
    pub normal: Vec<Q>,
    pub offset: Q,
    pub strict: bool,
}

impl HalfSpace {
    pub fn new(normal: Vec<Q>, offset: Q) -> Result<Self, GeometryError> {
        if normal.iter().all(Zero::is_zero) {
            return Err(GeometryError::ZeroNormal);
        }
        Ok(HalfSpace { normal, offset, strict: false })
    }

    pub fn int(normal: &[i64], offset: i64) -> Self {
        HalfSpace::new(normal.iter().map(|&v| q(v)).collect(), q(offset)).expect("nonzero normal")
    }

    pub fn contains(&self, x: &[Q]) -> bool {
        let v = dot(&self.normal, x);
        if self.strict {
            v < self.offset
        } else {
            v <= self.offset
        }
    }
}

/// `{x : n_i · x <= b_i}`; no half-spaces means all of `R^n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Polyhedron {
    pub dim: usize,
    pub halfspaces: Vec<HalfSpace>,
}

impl Polyhedron {
    pub fn new(dim: usize, halfspaces: Vec<HalfSpace>) -> Result<Self, GeometryError> {
        for h in &halfspaces {
            if h.normal.len() != dim {
                return Err(GeometryError::DimensionMismatch { expected: dim, found: h.normal.len() });
            }
            if h.strict {
                return Err(GeometryError::StrictHalfSpace);
            }
            if h.normal.iter().all(Zero::is_zero) {
                return Err(GeometryError::ZeroNormal);
            }
        }
        Ok(Polyhedron { dim, halfspaces })
    }

    pub fn whole(dim: usize) -> Self {
        Polyhedron { dim, halfspaces: vec![] }
    }

    /// Convenience constructor from integer rows `normal · x <= offset`.
    pub fn from_rows(dim: usize, rows: &[(&[i64], i64)]) -> Self {
        let hs = rows.iter().map(|(n, b)| HalfSpace::int(n, *b)).collect();
        Polyhedron::new(dim, hs).expect("valid rows")
    }

    /// Closed box `[lo, hi]`.
    pub fn boxed(lo: &[Q], hi: &[Q]) -> Self {
        let dim = lo.len();
        let mut hs = Vec::new();
        for i in 0..dim {
            let mut e = vec![Q::zero(); dim];
            e[i] = Q::one();
            hs.push(HalfSpace { normal: e.clone(), offset: hi[i].clone(), strict: false });
            hs.push(HalfSpace { normal: e.iter().map(|v| -v).collect(), offset: -lo[i].clone(), strict: false });
        }
        Polyhedron { dim, halfspaces: hs }
    }

    pub fn point(x: &[Q]) -> Self {
        Polyhedron::boxed(x, x)
    }

    fn rows(&self) -> (Vec<Vec<Q>>, Vec<Q>) {
        let a = self.halfspaces.iter().map(|h| h.normal.clone()).collect();
        let b = self.halfspaces.iter().map(|h| h.offset.clone()).collect();
        (a, b)
    }

    pub fn contains(&self, x: &[Q]) -> bool {
        self.halfspaces.iter().all(|h| h.contains(x))
    }

    pub fn feasible_point(&self) -> Option<Vec<Q>> {
        let (a, b) = self.rows();
        match maximize(&a, &b, &vec![Q::zero(); self.dim]) {
            LpOutcome::Optimal { x, .. } => Some(x),
            _ => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.feasible_point().is_none()
    }

    pub fn maximize(&self, c: &[Q]) -> LpOutcome {
        let (a, b) = self.rows();
        maximize(&a, &b, c)
    }

    pub fn intersect(&self, other: &Polyhedron) -> Polyhedron {
        let mut hs = self.halfspaces.clone();
        hs.extend(other.halfspaces.iter().cloned());
        Polyhedron { dim: self.dim, halfspaces: hs }
    }

    pub fn is_cone(&self) -> bool {
        self.halfspaces.iter().all(|h| h.offset.is_zero())
    }

    /// `{x : n_i · x <= 0}`.
    pub fn recession_cone(&self) -> Polyhedron {
        let hs = self
            .halfspaces
            .iter()
            .map(|h| HalfSpace { normal: h.normal.clone(), offset: Q::zero(), strict: false })
            .collect();
        Polyhedron { dim: self.dim, halfspaces: hs }
    }

    /// Basis of the lineality space `{x : n_i · x = 0}`.
    pub fn lineality_basis(&self) -> Vec<Vec<Q>> {
        let (a, _) = self.rows();
        nullspace(&a, self.dim)
    }

    /// True iff `self` has a point with some coordinate of absolute value >= 1
    /// in its recession cone, i.e. the recession cone is not `{0}`.
    pub fn is_unbounded(&self) -> bool {
        self.nonzero_recession_direction().is_some()
    }

    pub fn nonzero_recession_direction(&self) -> Option<Vec<Q>> {
        let cone = self.recession_cone();
        let (a, b) = cone.rows();
        for i in 0..self.dim {
            for s in [1i64, -1] {
                let mut a2 = a.clone();
                let mut b2 = b.clone();
                let mut row = vec![Q::zero(); self.dim];
                row[i] = q(-s);
                a2.push(row);
                b2.push(q(-1));
                if let LpOutcome::Optimal { x, .. } = maximize(&a2, &b2, &vec![Q::zero(); self.dim]) {
                    return Some(x);
                }
            }
        }
        None
    }

    pub fn subset_of(&self, other: &Polyhedron) -> bool {
        if self.is_empty() {
            return true;
        }
        other.halfspaces.iter().all(|h| match self.maximize(&h.normal) {
            LpOutcome::Optimal { value, .. } => value <= h.offset,
            LpOutcome::Unbounded => false,
            LpOutcome::Infeasible => true,
        })
    }

    /// `min_{y in P} |x - y|_inf`, or None for an empty polyhedron.
    pub fn distance_to_point(&self, x: &[Q]) -> Option<Q> {
        let n = self.dim;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for h in &self.halfspaces {
            let mut row = h.normal.clone();
            row.push(Q::zero());
            a.push(row);
            b.push(h.offset.clone());
        }
        for k in 0..n {
            let mut row = vec![Q::zero(); n + 1];
            row[k] = -Q::one();
            row[n] = -Q::one();
            a.push(row);
            b.push(-x[k].clone());
            let mut row = vec![Q::zero(); n + 1];
            row[k] = Q::one();
            row[n] = -Q::one();
            a.push(row);
            b.push(x[k].clone());
        }
        let mut c = vec![Q::zero(); n + 1];
        c[n] = -Q::one();
        match maximize(&a, &b, &c) {
            LpOutcome::Optimal { value, .. } => Some(-value),
            _ => None,
        }
    }

    /// `min |y - z|_inf` over `y in self`, `z in other`.
    pub fn distance_to(&self, other: &Polyhedron) -> Option<Q> {
        let n = self.dim;
        let w = 2 * n + 1;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for h in &self.halfspaces {
            let mut row = vec![Q::zero(); w];
            row[..n].clone_from_slice(&h.normal);
            a.push(row);
            b.push(h.offset.clone());
        }
        for h in &other.halfspaces {
            let mut row = vec![Q::zero(); w];
            row[n..2 * n].clone_from_slice(&h.normal);
            a.push(row);
            b.push(h.offset.clone());
        }
        for k in 0..n {
            for s in [1i64, -1] {
                let mut row = vec![Q::zero(); w];
                row[k] = q(s);
                row[n + k] = q(-s);
                row[2 * n] = -Q::one();
                a.push(row);
                b.push(Q::zero());
            }
        }
        let mut c = vec![Q::zero(); w];
        c[2 * n] = -Q::one();
        match maximize(&a, &b, &c) {
            LpOutcome::Optimal { value, .. } => Some(-value),
            _ => None,
        }
    }

    /// Vertices of a pointed polyhedron, by enumeration of tight subsystems.
    pub fn vertices(&self) -> Vec<Vec<Q>> {
        let n = self.dim;
        let m = self.halfspaces.len();
        let mut out: Vec<Vec<Q>> = Vec::new();
        if n == 0 {
            return vec![vec![]];
        }
        let mut idx: Vec<usize> = (0..n).collect();
        if m < n {
            return out;
        }
        loop {
            let rows: Vec<Vec<Q>> = idx.iter().map(|&i| self.halfspaces[i].normal.clone()).collect();
            if exact::rank(&rows) == n {
                let rhs: Vec<Q> = idx.iter().map(|&i| self.halfspaces[i].offset.clone()).collect();
                if let Some(x) = solve(&rows, &rhs, n) {
                    if self.contains(&x) && !out.contains(&x) {
                        out.push(x);
                    }
                }
            }
            // next combination
            let mut i = n;
            loop {
                if i == 0 {
                    out.sort();
                    return out;
                }
                i -= 1;
                if idx[i] < m - n + i {
                    idx[i] += 1;
                    for j in i + 1..n {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    /// Minkowski sum with `[-r, r]^n`, by Fourier-Motzkin elimination.
    pub fn thicken(&self, r: &Q) -> Polyhedron {
        if r.is_zero() || self.halfspaces.is_empty() {
            return self.clone();
        }
        let n = self.dim;
        // Variables (x, z) with y = x - z in P and |z_k| <= r.
        let mut rows: Vec<(Vec<Q>, Q)> = Vec::new();
        for h in &self.halfspaces {
            let mut row = h.normal.clone();
            row.extend(h.normal.iter().map(|v| -v));
            rows.push((row, h.offset.clone()));
        }
        for k in 0..n {
            for s in [1i64, -1] {
                let mut row = vec![Q::zero(); 2 * n];
                row[n + k] = q(s);
                rows.push((row, r.clone()));
            }
        }
        for k in 0..n {
            let col = n + k;
            let mut keep = Vec::new();
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for (row, b) in rows {
                if row[col].is_positive() {
                    pos.push((row, b));
                } else if row[col].is_negative() {
                    neg.push((row, b));
                } else {
                    keep.push((row, b));
                }
            }
            for (pr, pb) in &pos {
                for (nr, nb) in &neg {
                    let cp = pr[col].clone();
                    let cn = -nr[col].clone();
                    let row: Vec<Q> = pr.iter().zip(nr).map(|(a, b)| a / &cp + b / &cn).collect();
                    keep.push((row, pb / &cp + nb / &cn));
                }
            }
            rows = prune_rows(keep);
        }
        let hs = rows
            .into_iter()
            .filter(|(row, _)| row[..n].iter().any(|v| !v.is_zero()))
            .map(|(row, b)| HalfSpace { normal: row[..n].to_vec(), offset: b, strict: false })
            .collect();
        Polyhedron { dim: n, halfspaces: hs }
    }
}

/// Scales each row to primitive integer normal, drops duplicates and rows
/// implied by the others.
fn prune_rows(rows: Vec<(Vec<Q>, Q)>) -> Vec<(Vec<Q>, Q)> {
    let mut normed: Vec<(Vec<Q>, Q)> = Vec::new();
    for (row, b) in rows {
        if row.iter().all(Zero::is_zero) {
            continue;
        }
        let (row, b) = normalize_row(row, b);
        if let Some(existing) = normed.iter_mut().find(|(r, _)| *r == row) {
            if b < existing.1 {
                existing.1 = b;
            }
        } else {
            normed.push((row, b));
        }
    }
    let mut i = 0;
    while i < normed.len() {
        let (a, b): (Vec<Vec<Q>>, Vec<Q>) = normed
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, (r, b))| (r.clone(), b.clone()))
            .unzip();
        let redundant = match maximize(&a, &b, &normed[i].0) {
            LpOutcome::Optimal { value, .. } => value <= normed[i].1,
            _ => false,
        };
        if redundant {
            normed.remove(i);
        } else {
            i += 1;
        }
    }
    normed
}

fn normalize_row(row: Vec<Q>, b: Q) -> (Vec<Q>, Q) {
    let mut l = num_bigint::BigInt::one();
    for v in row.iter().chain(std::iter::once(&b)) {
        l = l.lcm(v.denom());
    }
    let ints: Vec<num_bigint::BigInt> = row.iter().map(|v| (v * Q::from_integer(l.clone())).to_integer()).collect();
    let mut g = num_bigint::BigInt::zero();
    for v in &ints {
        g = g.gcd(v);
    }
    let s = Q::new(l, g);
    (row.iter().map(|v| v * &s).collect(), b * s)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemilinearSet {
    pub dim: usize,
    pub pieces: Vec<Polyhedron>,
}

impl SemilinearSet {
    /// Drops empty pieces; fails if none remain.
    pub fn new(dim: usize, pieces: Vec<Polyhedron>) -> Result<Self, GeometryError> {
        if dim > MAX_DIM {
            return Err(GeometryError::DimensionCap(dim));
        }
        for p in &pieces {
            if p.dim != dim {
                return Err(GeometryError::DimensionMismatch { expected: dim, found: p.dim });
            }
        }
        let pieces: Vec<Polyhedron> = pieces.into_iter().filter(|p| !p.is_empty()).collect();
        if pieces.is_empty() {
            return Err(GeometryError::Empty);
        }
        Ok(SemilinearSet { dim, pieces })
    }

    pub fn from_polyhedron(p: Polyhedron) -> Result<Self, GeometryError> {
        SemilinearSet::new(p.dim, vec![p])
    }

    pub fn whole(dim: usize) -> Self {
        SemilinearSet { dim, pieces: vec![Polyhedron::whole(dim)] }
    }

    pub fn origin(dim: usize) -> Self {
        SemilinearSet { dim, pieces: vec![Polyhedron::point(&vec![Q::zero(); dim])] }
    }

    pub fn contains(&self, x: &[Q]) -> bool {
        self.pieces.iter().any(|p| p.contains(x))
    }

    pub fn is_bounded(&self) -> bool {
        self.pieces.iter().all(|p| !p.is_unbounded())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(SetWire::from(self)).expect("serializable")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, GeometryError> {
        let w: SetWire = serde_json::from_value(v.clone()).map_err(|e| GeometryError::Parse(e.to_string()))?;
        w.into_set()
    }
}

/// Pieces are cones with apex 0, none containing a line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConeComplex {
    pub dim: usize,
    pub cones: Vec<Polyhedron>,
    pub bounded: bool,
}

impl ConeComplex {
    /// The union of the cones, or `{0}` for a bounded input.
    pub fn to_set(&self) -> SemilinearSet {
        if self.cones.is_empty() {
            SemilinearSet::origin(self.dim)
        } else {
            SemilinearSet { dim: self.dim, pieces: self.cones.clone() }
        }
    }
}

#[derive(Clone, Debug)]
struct SkeletonPiece {
    /// None for bounded pieces.
    cone: Option<Polyhedron>,
    /// Nonempty sub-polyhedron of the original piece whose recession cone is `cone`.
    piece: Polyhedron,
}

fn skeleton_pieces(s: &SemilinearSet) -> Vec<SkeletonPiece> {
    let mut out = Vec::new();
    for p in &s.pieces {
        if p.is_empty() {
            continue;
        }
        let k = p.recession_cone();
        let lin = k.lineality_basis();
        if lin.is_empty() {
            if k.is_unbounded() {
                out.push(SkeletonPiece { cone: Some(k), piece: p.clone() });
            } else {
                out.push(SkeletonPiece { cone: None, piece: p.clone() });
            }
            continue;
        }
        for mask in 0..(1u32 << lin.len()) {
            let mut extra = Vec::new();
            for (j, m) in lin.iter().enumerate() {
                let sign = if mask & (1 << j) == 0 { Q::one() } else { -Q::one() };
                extra.push(HalfSpace { normal: m.iter().map(|v| v * &sign).collect(), offset: Q::zero(), strict: false });
            }
            let mut cone = k.clone();
            cone.halfspaces.extend(extra.iter().cloned());
            let mut piece = p.clone();
            piece.halfspaces.extend(extra);
            out.push(SkeletonPiece { cone: Some(cone), piece });
        }
    }
    out
}

/// The conical skeleton: offsets set to zero, lines split off.
pub fn canonicalize(s: &SemilinearSet) -> ConeComplex {
    let cones: Vec<Polyhedron> = skeleton_pieces(s).into_iter().filter_map(|sp| sp.cone).collect();
    ConeComplex { dim: s.dim, bounded: cones.is_empty(), cones }
}

pub fn thicken(s: &SemilinearSet, r: &Q) -> Result<SemilinearSet, GeometryError> {
    if r.is_negative() {
        return Err(GeometryError::NegativeRadius);
    }
    Ok(SemilinearSet { dim: s.dim, pieces: s.pieces.iter().map(|p| p.thicken(r)).collect() })
}

pub fn distance_linf(x: &[Q], s: &SemilinearSet) -> Q {
    s.pieces
        .iter()
        .filter_map(|p| p.distance_to_point(x))
        .min()
        .expect("nonempty semilinear set")
}

/// Distance between two polyhedra taken over all piece pairs.
pub fn set_distance(a: &SemilinearSet, b: &SemilinearSet) -> Q {
    let mut best: Option<Q> = None;
    for p in &a.pieces {
        for r in &b.pieces {
            if let Some(d) = p.distance_to(r) {
                if best.as_ref().map_or(true, |v| d < *v) {
                    best = Some(d);
                }
            }
        }
    }
    best.expect("nonempty semilinear sets")
}

/// A point of `base` outside every polyhedron of `others`, if any.
fn escape_point(base: &Polyhedron, others: &[Polyhedron]) -> Option<Vec<Q>> {
    let (le_a, le_b) = base.rows();
    let mut lt_a = Vec::new();
    let mut lt_b = Vec::new();
    escape_rec(&le_a, &le_b, &mut lt_a, &mut lt_b, others, base.dim)
}

fn escape_rec(
    le_a: &[Vec<Q>],
    le_b: &[Q],
    lt_a: &mut Vec<Vec<Q>>,
    lt_b: &mut Vec<Q>,
    others: &[Polyhedron],
    n: usize,
) -> Option<Vec<Q>> {
    let Some((first, rest)) = others.split_first() else {
        return exact::strictly_feasible(le_a, le_b, lt_a, lt_b, n);
    };
    for h in &first.halfspaces {
        // h·x > offset
        lt_a.push(h.normal.iter().map(|v| -v).collect());
        lt_b.push(-h.offset.clone());
        let feasible = exact::strictly_feasible(le_a, le_b, lt_a, lt_b, n).is_some();
        let found = if feasible { escape_rec(le_a, le_b, lt_a, lt_b, rest, n) } else { None };
        lt_a.pop();
        lt_b.pop();
        if found.is_some() {
            return found;
        }
    }
    None
}

/// Exact containment `U ⊆ V`.
pub fn subset_of(u: &SemilinearSet, v: &SemilinearSet) -> bool {
    u.pieces.iter().all(|p| escape_point(p, &v.pieces).is_none())
}

#[derive(Clone, Debug, PartialEq)]
pub enum FuzzyCertificate {
    /// `U ⊆ V^r`.
    Radius(Q),
    /// A direction `x` with `d(t x, V)` unbounded in `t`.
    Ray(Vec<Q>),
}

pub fn fuzzy_leq(u: &SemilinearSet, v: &SemilinearSet) -> (bool, FuzzyCertificate) {
    let us = skeleton_pieces(u);
    let vs = skeleton_pieces(v);
    let vcones: Vec<Polyhedron> = vs.iter().filter_map(|sp| sp.cone.clone()).collect();
    for sp in &us {
        if let Some(k) = &sp.cone {
            let witness = if vcones.is_empty() {
                k.nonzero_recession_direction()
            } else {
                escape_point(k, &vcones)
            };
            if let Some(x) = witness {
                return (false, FuzzyCertificate::Ray(x));
            }
        }
    }
    let mut r = Q::zero();
    for sp in &us {
        let verts = sp.piece.vertices();
        let rs = match &sp.cone {
            Some(k) => {
                let mut worst = Q::zero();
                for w in &vs {
                    let Some(l) = &w.cone else { continue };
                    if !k.intersect(l).is_unbounded() {
                        continue;
                    }
                    for x in &verts {
                        let d = w.piece.distance_to_point(x).expect("nonempty piece");
                        if d > worst {
                            worst = d;
                        }
                    }
                }
                worst
            }
            None => v
                .pieces
                .iter()
                .map(|p| {
                    verts
                        .iter()
                        .map(|x| p.distance_to_point(x).expect("nonempty piece"))
                        .max()
                        .unwrap_or_else(Q::zero)
                })
                .min()
                .expect("nonempty set"),
        };
        if rs > r {
            r = rs;
        }
    }
    (true, FuzzyCertificate::Radius(r))
}

pub fn fuzzy_iso(u: &SemilinearSet, v: &SemilinearSet) -> bool {
    fuzzy_leq(u, v).0 && fuzzy_leq(v, u).0
}

fn ceil_q(x: &Q) -> Q {
    Q::from_integer(x.ceil().to_integer())
}

/// `U^r ∩ V^r` for the least integer `r` at which every piece pair meets;
/// for cones with a common apex `r = 0`.
pub fn meet(u: &SemilinearSet, v: &SemilinearSet) -> SemilinearSet {
    let mut worst = Q::zero();
    for p in &u.pieces {
        for r in &v.pieces {
            let d = p.distance_to(r).expect("nonempty pieces");
            if d > worst {
                worst = d;
            }
        }
    }
    let r = ceil_q(&(worst / q(2)));
    let (a, b) = if r.is_zero() {
        (u.clone(), v.clone())
    } else {
        (thicken(u, &r).expect("r >= 0"), thicken(v, &r).expect("r >= 0"))
    };
    let mut pieces = Vec::new();
    for p in &a.pieces {
        for r in &b.pieces {
            let x = p.intersect(r);
            if !x.is_empty() {
                pieces.push(x);
            }
        }
    }
    SemilinearSet { dim: u.dim, pieces }
}

pub fn join(u: &SemilinearSet, v: &SemilinearSet) -> SemilinearSet {
    let mut pieces = u.pieces.clone();
    pieces.extend(v.pieces.iter().cloned());
    SemilinearSet { dim: u.dim, pieces }
}

/// Literal intersection `U ∩ V`.
pub fn intersection(u: &SemilinearSet, v: &SemilinearSet) -> Result<SemilinearSet, GeometryError> {
    let mut pieces = Vec::new();
    for p in &u.pieces {
        for r in &v.pieces {
            let x = p.intersect(r);
            if !x.is_empty() {
                pieces.push(x);
            }
        }
    }
    if pieces.is_empty() {
        return Err(GeometryError::EmptyIntersection);
    }
    Ok(SemilinearSet { dim: u.dim, pieces })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransversalityWitness {
    pub constant: Q,
    pub sample_bound: Q,
}

/// Regular grid `{-h + 2h i / steps}^n`.
#[derive(Clone, Debug)]
pub struct Grid {
    pub half_width: Q,
    pub steps: u32,
}

impl Grid {
    pub fn points(&self, dim: usize) -> Vec<Vec<Q>> {
        let coords: Vec<Q> = (0..=self.steps)
            .map(|i| -&self.half_width + &self.half_width * q(2 * i as i64) / q(self.steps as i64))
            .collect();
        let mut pts = vec![vec![]];
        for _ in 0..dim {
            let mut next = Vec::new();
            for p in &pts {
                for c in &coords {
                    let mut x: Vec<Q> = p.clone();
                    x.push(c.clone());
                    next.push(x);
                }
            }
            pts = next;
        }
        pts
    }
}

pub fn transversality_constant(
    u: &SemilinearSet,
    v: &SemilinearSet,
    grid: &Grid,
) -> Result<TransversalityWitness, GeometryError> {
    let both = intersection(u, v)?;
    let mut sample_bound = Q::zero();
    for x in grid.points(u.dim) {
        let du = distance_linf(&x, u);
        let dv = distance_linf(&x, v);
        let m = if du > dv { du } else { dv };
        if m.is_zero() {
            continue;
        }
        let ratio = distance_linf(&x, &both) / m;
        if ratio > sample_bound {
            sample_bound = ratio;
        }
    }
    let constant = if sample_bound.is_zero() { Q::one() } else { sample_bound.clone() };
    Ok(TransversalityWitness { constant, sample_bound })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VoronoiSide {
    U,
    V,
    Both,
}

/// `U' = {d(x,U) <= d(x,V)}` and `V'` symmetrically, evaluated pointwise.
#[derive(Clone, Debug)]
pub struct VoronoiRegions {
    pub u: SemilinearSet,
    pub v: SemilinearSet,
}

impl VoronoiRegions {
    pub fn side(&self, x: &[Q]) -> VoronoiSide {
        let du = distance_linf(x, &self.u);
        let dv = distance_linf(x, &self.v);
        match du.cmp(&dv) {
            std::cmp::Ordering::Less => VoronoiSide::U,
            std::cmp::Ordering::Greater => VoronoiSide::V,
            std::cmp::Ordering::Equal => VoronoiSide::Both,
        }
    }

    pub fn in_u_prime(&self, x: &[Q]) -> bool {
        self.side(x) != VoronoiSide::V
    }

    pub fn in_v_prime(&self, x: &[Q]) -> bool {
        self.side(x) != VoronoiSide::U
    }
}

pub fn voronoi_regions(u: &SemilinearSet, v: &SemilinearSet) -> VoronoiRegions {
    VoronoiRegions { u: u.clone(), v: v.clone() }
}

// JSON wire format with rationals as strings.

#[derive(Serialize, Deserialize)]
struct HalfSpaceWire {
    normal: Vec<String>,
    offset: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    strict: bool,
}

#[derive(Serialize, Deserialize)]
struct PieceWire {
    halfspaces: Vec<HalfSpaceWire>,
}

#[derive(Serialize, Deserialize)]
struct SetWire {
    dim: usize,
    pieces: Vec<PieceWire>,
}

impl From<&SemilinearSet> for SetWire {
    fn from(s: &SemilinearSet) -> Self {
        SetWire {
            dim: s.dim,
            pieces: s
                .pieces
                .iter()
                .map(|p| PieceWire {
                    halfspaces: p
                        .halfspaces
                        .iter()
                        .map(|h| HalfSpaceWire {
                            normal: h.normal.iter().map(fmt_q).collect(),
                            offset: fmt_q(&h.offset),
                            strict: h.strict,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl SetWire {
    fn into_set(self) -> Result<SemilinearSet, GeometryError> {
        let parse = |s: &str| parse_q(s).ok_or_else(|| GeometryError::Parse(format!("bad rational {s:?}")));
        let mut pieces = Vec::new();
        for p in self.pieces {
            let mut hs = Vec::new();
            for h in p.halfspaces {
                let normal = h.normal.iter().map(|s| parse(s)).collect::<Result<Vec<_>, _>>()?;
                let mut half = HalfSpace::new(normal, parse(&h.offset)?)?;
                half.strict = h.strict;
                hs.push(half);
            }
            pieces.push(Polyhedron::new(self.dim, hs)?);
        }
        SemilinearSet::new(self.dim, pieces)
    }
}

impl fmt::Display for SemilinearSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}

/// Planar sector between two directions, counterclockwise from `a` to `b`
/// with opening angle below pi.
pub fn sector2(a: [i64; 2], b: [i64; 2]) -> Polyhedron {
    // x = λa + μb with λ, μ >= 0
    let cross = a[0] * b[1] - a[1] * b[0];
    assert!(cross > 0, "sector must open counterclockwise by less than pi");
    Polyhedron::from_rows(2, &[(&[-b[1], b[0]], 0), (&[a[1], -a[0]], 0)])
}

/// Planar cone `{λa + μb}` for directions `a`, `b` in `R^3` spanning a plane.
pub fn sector3(a: [i64; 3], b: [i64; 3]) -> Polyhedron {
    let cr = |u: [i64; 3], v: [i64; 3]| [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let nu = cr(a, b);
    let nb = cr(nu, b);
    let na = cr(nu, a);
    let neg = |v: [i64; 3]| [-v[0], -v[1], -v[2]];
    Polyhedron::from_rows(3, &[(&nu, 0), (&neg(nu), 0), (&nb, 0), (&neg(na), 0)])
}
