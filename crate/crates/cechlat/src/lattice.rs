//! Finite box truncations of `Z^n` with a qudit on every site, and almost local
//! derivations stored as brick components.
//!
//! The Hilbert space is the Kronecker product over sites in lexicographic order,
//! first site most significant. A component `F^Y` acts on the sites of `Y` in the
//! same order.

use crate::exact::{q, to_f64, Q};
use crate::geometry::{distance_linf, set_distance, Polyhedron, SemilinearSet};
use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::{ToPrimitive, Zero};
use serde_json::json;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};

pub type C64 = Complex64;
pub type Mat = DMatrix<C64>;

pub const DEFAULT_DIM_CAP: usize = 1 << 12;
const DROP_TOL: f64 = 1e-14;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("Hilbert space dimension {dim} exceeds the cap {cap}")]
    DimensionCap { dim: usize, cap: usize },
    #[error("invalid box or brick corners")]
    BadCorners,
    #[error("brick {0} is not contained in {1}")]
    NotContained(Brick, Brick),
    #[error("operator is not traceless (normalized trace {0:.3e})")]
    NotTraceless(f64),
    #[error("operator is not anti-hermitian (defect {0:.3e})")]
    NotAntiHermitian(f64),
    #[error("matrix of size {found} does not match the expected size {expected}")]
    Shape { expected: usize, found: usize },
    #[error("region is empty")]
    EmptyRegion,
    #[error("derivations live on different lattices")]
    LatticeMismatch,
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Brick {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
}

impl Brick {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self, LatticeError> {
        if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(LatticeError::BadCorners);
        }
        Ok(Brick { lo, hi })
    }

    pub fn point(x: &[i64]) -> Self {
        Brick { lo: x.to_vec(), hi: x.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn diam(&self) -> i64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).max().unwrap_or(0)
    }

    pub fn volume(&self) -> usize {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a + 1) as usize).product()
    }

    pub fn contains_point(&self, x: &[i64]) -> bool {
        x.iter().enumerate().all(|(i, &v)| self.lo[i] <= v && v <= self.hi[i])
    }

    pub fn contains(&self, other: &Brick) -> bool {
        (0..self.dim()).all(|i| self.lo[i] <= other.lo[i] && other.hi[i] <= self.hi[i])
    }

    pub fn intersects(&self, other: &Brick) -> bool {
        (0..self.dim()).all(|i| self.lo[i].max(other.lo[i]) <= self.hi[i].min(other.hi[i]))
    }

    pub fn join(&self, other: &Brick) -> Brick {
        Brick {
            lo: self.lo.iter().zip(&other.lo).map(|(a, b)| *a.min(b)).collect(),
            hi: self.hi.iter().zip(&other.hi).map(|(a, b)| *a.max(b)).collect(),
        }
    }

    pub fn dist(&self, other: &Brick) -> i64 {
        (0..self.dim())
            .map(|i| (self.lo[i] - other.hi[i]).max(other.lo[i] - self.hi[i]).max(0))
            .max()
            .unwrap_or(0)
    }

    pub fn dist_point(&self, x: &[Q]) -> Q {
        let mut best = Q::zero();
        for (i, v) in x.iter().enumerate() {
            let lo = q(self.lo[i]);
            let hi = q(self.hi[i]);
            let d = if *v < lo {
                lo - v
            } else if *v > hi {
                v - hi
            } else {
                Q::zero()
            };
            if d > best {
                best = d;
            }
        }
        best
    }

    pub fn to_polyhedron(&self) -> Polyhedron {
        let lo: Vec<Q> = self.lo.iter().map(|&v| q(v)).collect();
        let hi: Vec<Q> = self.hi.iter().map(|&v| q(v)).collect();
        Polyhedron::boxed(&lo, &hi)
    }

    pub fn to_set(&self) -> SemilinearSet {
        SemilinearSet::from_polyhedron(self.to_polyhedron()).expect("bricks are nonempty")
    }

    /// All bricks contained in `self`, smallest volume first.
    pub fn sub_bricks(&self) -> Vec<Brick> {
        let mut out = vec![Brick { lo: vec![], hi: vec![] }];
        for i in 0..self.dim() {
            let mut next = Vec::new();
            for b in &out {
                for l in self.lo[i]..=self.hi[i] {
                    for h in l..=self.hi[i] {
                        let mut nb = b.clone();
                        nb.lo.push(l);
                        nb.hi.push(h);
                        next.push(nb);
                    }
                }
            }
            out = next;
        }
        out.sort_by(|a, b| a.volume().cmp(&b.volume()).then_with(|| a.cmp(b)));
        out
    }

    pub fn points(&self) -> Vec<Vec<i64>> {
        let mut out = vec![vec![]];
        for i in 0..self.dim() {
            let mut next = Vec::new();
            for p in &out {
                for v in self.lo[i]..=self.hi[i] {
                    let mut np: Vec<i64> = p.clone();
                    np.push(v);
                    next.push(np);
                }
            }
            out = next;
        }
        out
    }
}

impl fmt::Display for Brick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}..{:?}", self.lo, self.hi)
    }
}

pub fn brick_join(x: &Brick, y: &Brick) -> Brick {
    x.join(y)
}

/// Index bookkeeping for the split `T = S ⊔ R` of a site list.
/// `groups[r][s]` is the basis index in `T` with `S`-part `s` and `R`-part `r`.
#[derive(Debug)]
struct Layout {
    groups: Vec<Vec<usize>>,
}

pub struct LatticeSystem {
    pub dim: usize,
    pub bounds: Brick,
    pub sites: Vec<Vec<i64>>,
    pub local_dims: Vec<usize>,
    index: HashMap<Vec<i64>, usize>,
    layouts: Mutex<HashMap<(Vec<usize>, Vec<usize>), Arc<Layout>>>,
}

impl fmt::Debug for LatticeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LatticeSystem")
            .field("bounds", &self.bounds)
            .field("local_dims", &self.local_dims)
            .finish()
    }
}

impl PartialEq for LatticeSystem {
    fn eq(&self, other: &Self) -> bool {
        self.bounds == other.bounds && self.local_dims == other.local_dims
    }
}

impl LatticeSystem {
    /// Box `lo..=hi` with local dimension `d` everywhere.
    pub fn new(lo: &[i64], hi: &[i64], d: usize) -> Result<Arc<Self>, LatticeError> {
        let bounds = Brick::new(lo.to_vec(), hi.to_vec())?;
        let dims = vec![d; bounds.volume()];
        Self::with_dims(lo, hi, dims, DEFAULT_DIM_CAP)
    }

    pub fn qubits(shape: &[i64]) -> Result<Arc<Self>, LatticeError> {
        let lo = vec![0; shape.len()];
        let hi: Vec<i64> = shape.iter().map(|s| s - 1).collect();
        Self::new(&lo, &hi, 2)
    }

    pub fn with_dims(
        lo: &[i64],
        hi: &[i64],
        local_dims: Vec<usize>,
        cap: usize,
    ) -> Result<Arc<Self>, LatticeError> {
        let bounds = Brick::new(lo.to_vec(), hi.to_vec())?;
        let sites = bounds.points();
        if local_dims.len() != sites.len() || local_dims.iter().any(|&d| d < 1) {
            return Err(LatticeError::Shape { expected: sites.len(), found: local_dims.len() });
        }
        let mut total: usize = 1;
        for &d in &local_dims {
            total = total.saturating_mul(d);
        }
        if total > cap {
            return Err(LatticeError::DimensionCap { dim: total, cap });
        }
        let index = sites.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Arc::new(LatticeSystem {
            dim: lo.len(),
            bounds,
            sites,
            local_dims,
            index,
            layouts: Mutex::new(HashMap::new()),
        }))
    }

    pub fn site_index(&self, x: &[i64]) -> Option<usize> {
        self.index.get(x).copied()
    }

    pub fn hilbert_dim(&self) -> usize {
        self.local_dims.iter().product()
    }

    pub fn sites_in(&self, b: &Brick) -> Vec<usize> {
        let mut v: Vec<usize> =
            b.points().iter().filter_map(|p| self.site_index(p)).collect();
        v.sort_unstable();
        v
    }

    pub fn dim_of(&self, sites: &[usize]) -> usize {
        sites.iter().map(|&s| self.local_dims[s]).product()
    }

    pub fn brick_dim(&self, b: &Brick) -> usize {
        self.dim_of(&self.sites_in(b))
    }

    pub fn bricks(&self) -> Vec<Brick> {
        self.bounds.sub_bricks()
    }

    fn layout(&self, t: &[usize], s: &[usize]) -> Arc<Layout> {
        let key = (t.to_vec(), s.to_vec());
        if let Some(l) = self.layouts.lock().expect("layout cache").get(&key) {
            return l.clone();
        }
        let dims: Vec<usize> = t.iter().map(|&x| self.local_dims[x]).collect();
        let in_s: Vec<bool> = t.iter().map(|x| s.contains(x)).collect();
        let ds: usize = self.dim_of(s);
        let dt: usize = dims.iter().product();
        let dr = dt / ds;
        let mut groups = vec![vec![0usize; ds]; dr];
        let mut digits = vec![0usize; t.len()];
        for i in 0..dt {
            let (mut si, mut ri) = (0usize, 0usize);
            for (k, &dg) in digits.iter().enumerate() {
                if in_s[k] {
                    si = si * dims[k] + dg;
                } else {
                    ri = ri * dims[k] + dg;
                }
            }
            groups[ri][si] = i;
            for k in (0..t.len()).rev() {
                digits[k] += 1;
                if digits[k] < dims[k] {
                    break;
                }
                digits[k] = 0;
            }
        }
        let l = Arc::new(Layout { groups });
        self.layouts.lock().expect("layout cache").insert(key, l.clone());
        l
    }

    /// `A ⊗ 1` from the sites `s` to the larger site list `t`.
    pub fn embed_sites(&self, a: &Mat, s: &[usize], t: &[usize]) -> Mat {
        let l = self.layout(t, s);
        let dt = self.dim_of(t);
        let mut out = Mat::zeros(dt, dt);
        for g in &l.groups {
            for (s1, &i) in g.iter().enumerate() {
                for (s2, &j) in g.iter().enumerate() {
                    out[(i, j)] = a[(s1, s2)];
                }
            }
        }
        out
    }

    /// Normalized partial trace from sites `t` down to `s`.
    pub fn trace_to_sites(&self, a: &Mat, t: &[usize], s: &[usize]) -> Mat {
        let l = self.layout(t, s);
        let ds = self.dim_of(s);
        let mut out = Mat::zeros(ds, ds);
        for g in &l.groups {
            for (s1, &i) in g.iter().enumerate() {
                for (s2, &j) in g.iter().enumerate() {
                    out[(s1, s2)] += a[(i, j)];
                }
            }
        }
        out / C64::new(l.groups.len() as f64, 0.0)
    }

    pub fn embed(&self, a: &Mat, from: &Brick, to: &Brick) -> Result<Mat, LatticeError> {
        if !to.contains(from) {
            return Err(LatticeError::NotContained(from.clone(), to.clone()));
        }
        Ok(self.embed_sites(a, &self.sites_in(from), &self.sites_in(to)))
    }

    /// `tr̄_{X^c}` applied to an operator living on `on`.
    pub fn partial_trace(&self, a: &Mat, on: &Brick, x: &Brick) -> Result<Mat, LatticeError> {
        if !on.contains(x) {
            return Err(LatticeError::NotContained(x.clone(), on.clone()));
        }
        let t = self.sites_in(on);
        check_size(a, self.dim_of(&t))?;
        Ok(self.trace_to_sites(a, &t, &self.sites_in(x)))
    }

    pub fn onsite(self: &Arc<Self>, x: &[i64], a: &Mat) -> Result<AlmostLocalDerivation, LatticeError> {
        brick_decompose(self, &Brick::point(x), a)
    }
}

fn check_size(a: &Mat, d: usize) -> Result<(), LatticeError> {
    if a.nrows() != d || a.ncols() != d {
        return Err(LatticeError::Shape { expected: d, found: a.nrows() });
    }
    Ok(())
}

pub fn normalized_trace(a: &Mat) -> C64 {
    a.trace() / C64::new(a.nrows() as f64, 0.0)
}

pub fn op_norm(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.clone().singular_values().max()
}

pub fn max_abs(a: &Mat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn commutator_mat(a: &Mat, b: &Mat) -> Mat {
    a * b - b * a
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

pub fn pauli(c: char) -> Mat {
    let z = C64::new(0.0, 0.0);
    let o = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);
    match c {
        'x' => Mat::from_row_slice(2, 2, &[z, o, o, z]),
        'y' => Mat::from_row_slice(2, 2, &[z, -i, i, z]),
        'z' => Mat::from_row_slice(2, 2, &[o, z, z, -o]),
        _ => Mat::identity(2, 2),
    }
}

#[derive(Clone, Debug)]
pub struct AlmostLocalDerivation {
    pub lattice: Arc<LatticeSystem>,
    pub comps: BTreeMap<Brick, Mat>,
}

/// Decomposes a traceless anti-hermitian operator on brick `z` into components
/// `A^Y = tr̄_{Y^c}(A) − Σ_{X⊊Y} A^X`.
pub fn brick_decompose(
    lat: &Arc<LatticeSystem>,
    z: &Brick,
    a: &Mat,
) -> Result<AlmostLocalDerivation, LatticeError> {
    if !lat.bounds.contains(z) {
        return Err(LatticeError::NotContained(z.clone(), lat.bounds.clone()));
    }
    let tz = lat.sites_in(z);
    check_size(a, lat.dim_of(&tz))?;
    let scale = max_abs(a).max(1.0);
    let tr = normalized_trace(a).norm();
    if tr > 1e-10 * scale {
        return Err(LatticeError::NotTraceless(tr));
    }
    let ah = max_abs(&(a + a.adjoint()));
    if ah > 1e-10 * scale {
        return Err(LatticeError::NotAntiHermitian(ah));
    }
    Ok(decompose_unchecked(lat, z, &tz, a, scale))
}

fn decompose_unchecked(
    lat: &Arc<LatticeSystem>,
    z: &Brick,
    tz: &[usize],
    a: &Mat,
    scale: f64,
) -> AlmostLocalDerivation {
    let mut comps: BTreeMap<Brick, Mat> = BTreeMap::new();
    for y in z.sub_bricks() {
        let ty = lat.sites_in(&y);
        let mut p = lat.trace_to_sites(a, tz, &ty);
        for (x, fx) in &comps {
            if y.contains(x) {
                p -= lat.embed_sites(fx, &lat.sites_in(x), &ty);
            }
        }
        comps.insert(y, p);
    }
    comps.retain(|_, m| max_abs(m) > DROP_TOL * scale);
    AlmostLocalDerivation { lattice: lat.clone(), comps }
}

/// Where a seminorm or splitting measures distances from.
#[derive(Clone, Debug)]
pub enum Region {
    Brick(Brick),
    Set(SemilinearSet),
    Points(Vec<Vec<i64>>),
    Memo(Arc<MemoRegion>),
}

/// A region that remembers every distance it has computed.
#[derive(Debug)]
pub struct MemoRegion {
    inner: Region,
    bricks: Mutex<HashMap<Brick, Q>>,
    points: Mutex<HashMap<Vec<i64>, Q>>,
}

impl Region {
    pub fn point(x: &[i64]) -> Self {
        Region::Points(vec![x.to_vec()])
    }

    pub fn memoized(self) -> Self {
        match self {
            Region::Memo(_) => self,
            inner => Region::Memo(Arc::new(MemoRegion {
                inner,
                bricks: Mutex::new(HashMap::new()),
                points: Mutex::new(HashMap::new()),
            })),
        }
    }

    pub fn distance_to_brick(&self, y: &Brick) -> Result<Q, LatticeError> {
        match self {
            Region::Memo(m) => {
                if let Some(d) = m.bricks.lock().expect("memo lock").get(y) {
                    return Ok(d.clone());
                }
                let d = m.inner.distance_to_brick(y)?;
                m.bricks.lock().expect("memo lock").insert(y.clone(), d.clone());
                Ok(d)
            }
            Region::Brick(b) => Ok(q(b.dist(y))),
            Region::Set(s) => Ok(set_distance(s, &y.to_set())),
            Region::Points(ps) => ps
                .iter()
                .map(|p| q(Brick::point(p).dist(y)))
                .min()
                .ok_or(LatticeError::EmptyRegion),
        }
    }

    pub fn distance_to_point(&self, x: &[i64]) -> Result<Q, LatticeError> {
        let xq: Vec<Q> = x.iter().map(|&v| q(v)).collect();
        match self {
            Region::Memo(m) => {
                if let Some(d) = m.points.lock().expect("memo lock").get(x) {
                    return Ok(d.clone());
                }
                let d = m.inner.distance_to_point(x)?;
                m.points.lock().expect("memo lock").insert(x.to_vec(), d.clone());
                Ok(d)
            }
            Region::Brick(b) => Ok(b.dist_point(&xq)),
            Region::Set(s) => Ok(distance_linf(&xq, s)),
            Region::Points(ps) => ps
                .iter()
                .map(|p| q(Brick::point(p).dist(&Brick::point(x))))
                .min()
                .ok_or(LatticeError::EmptyRegion),
        }
    }
}

impl AlmostLocalDerivation {
    pub fn zero(lat: &Arc<LatticeSystem>) -> Self {
        AlmostLocalDerivation { lattice: lat.clone(), comps: BTreeMap::new() }
    }

    /// Decomposition of an operator on the whole truncation.
    pub fn from_full(lat: &Arc<LatticeSystem>, a: &Mat) -> Result<Self, LatticeError> {
        brick_decompose(lat, &lat.bounds, a)
    }

    /// Like `from_full` but removes the trace and the hermitian part first.
    pub fn from_full_projected(lat: &Arc<LatticeSystem>, a: &Mat) -> Self {
        let d = a.nrows();
        let mut m = (a - a.adjoint()) * C64::new(0.5, 0.0);
        let tr = normalized_trace(&m);
        for i in 0..d {
            m[(i, i)] -= tr;
        }
        let scale = max_abs(&m).max(1.0);
        decompose_unchecked(lat, &lat.bounds, &lat.sites_in(&lat.bounds), &m, scale)
    }

    pub fn is_zero(&self) -> bool {
        self.comps.is_empty()
    }

    pub fn support(&self) -> Vec<Brick> {
        self.comps.keys().cloned().collect()
    }

    fn same_lattice(&self, other: &Self) -> Result<(), LatticeError> {
        if Arc::ptr_eq(&self.lattice, &other.lattice) || *self.lattice == *other.lattice {
            Ok(())
        } else {
            Err(LatticeError::LatticeMismatch)
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.same_lattice(other).expect("same lattice");
        let mut comps = self.comps.clone();
        for (y, m) in &other.comps {
            comps.entry(y.clone()).and_modify(|c| *c += m).or_insert_with(|| m.clone());
        }
        comps.retain(|_, m| max_abs(m) > DROP_TOL);
        AlmostLocalDerivation { lattice: self.lattice.clone(), comps }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, c: C64) -> Self {
        AlmostLocalDerivation {
            lattice: self.lattice.clone(),
            comps: self.comps.iter().map(|(y, m)| (y.clone(), m * c)).collect(),
        }
    }

    pub fn scale_re(&self, c: f64) -> Self {
        self.scale(C64::new(c, 0.0))
    }

    pub fn assemble(&self) -> Mat {
        let lat = &self.lattice;
        let all = lat.sites_in(&lat.bounds);
        let d = lat.dim_of(&all);
        let mut out = Mat::zeros(d, d);
        for (y, m) in &self.comps {
            out += lat.embed_sites(m, &lat.sites_in(y), &all);
        }
        out
    }

    pub fn component_norms(&self) -> BTreeMap<Brick, f64> {
        self.comps.iter().map(|(y, m)| (y.clone(), op_norm(m))).collect()
    }

    /// `sup_Y ‖F^Y‖ (1 + diam Y + d(U, Y))^k`.
    pub fn seminorm(&self, u: &Region, k: f64) -> Result<f64, LatticeError> {
        let mut best: f64 = 0.0;
        for (y, m) in &self.comps {
            let d = to_f64(&u.distance_to_brick(y)?);
            let w = (1.0 + y.diam() as f64 + d).powf(k);
            best = best.max(op_norm(m) * w);
        }
        Ok(best)
    }

    /// `Σ_Y ‖F^Y‖`.
    pub fn total_norm(&self) -> f64 {
        self.comps.values().map(op_norm).sum()
    }

    /// Largest entry of the difference of assembled operators.
    pub fn distance(&self, other: &Self) -> f64 {
        max_abs(&(self.assemble() - other.assemble()))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let comps: Vec<serde_json::Value> = self
            .comps
            .iter()
            .map(|(y, m)| {
                let mut rows = Vec::new();
                for i in 0..m.nrows() {
                    let row: Vec<[f64; 2]> = (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect();
                    rows.push(row);
                }
                json!({"lo": y.lo, "hi": y.hi, "matrix": rows})
            })
            .collect();
        json!({"lo": self.lattice.bounds.lo, "hi": self.lattice.bounds.hi, "components": comps})
    }

    pub fn from_json(lat: &Arc<LatticeSystem>, v: &serde_json::Value) -> Result<Self, LatticeError> {
        let perr = |s: &str| LatticeError::Parse(s.to_string());
        let comps = v.get("components").and_then(|c| c.as_array()).ok_or_else(|| perr("components"))?;
        let mut out = AlmostLocalDerivation::zero(lat);
        for c in comps {
            let ints = |key: &str| -> Result<Vec<i64>, LatticeError> {
                c.get(key)
                    .and_then(|a| a.as_array())
                    .ok_or_else(|| perr(key))?
                    .iter()
                    .map(|x| x.as_i64().ok_or_else(|| perr(key)))
                    .collect()
            };
            let y = Brick::new(ints("lo")?, ints("hi")?)?;
            let rows = c.get("matrix").and_then(|m| m.as_array()).ok_or_else(|| perr("matrix"))?;
            let d = rows.len();
            let mut m = Mat::zeros(d, d);
            for (i, row) in rows.iter().enumerate() {
                let row = row.as_array().ok_or_else(|| perr("row"))?;
                if row.len() != d {
                    return Err(perr("row length"));
                }
                for (j, e) in row.iter().enumerate() {
                    let re = e.get(0).and_then(|x| x.as_f64()).ok_or_else(|| perr("entry"))?;
                    let im = e.get(1).and_then(|x| x.as_f64()).ok_or_else(|| perr("entry"))?;
                    m[(i, j)] = C64::new(re, im);
                }
            }
            out = out.add(&brick_decompose(lat, &y, &m)?);
        }
        Ok(out)
    }
}

/// Brickwise commutator: each `[F^X, G^Y]` with `X ∩ Y ≠ ∅` is formed on
/// `X ∨ Y` and decomposed over its sub-bricks.
pub fn commutator(f: &AlmostLocalDerivation, g: &AlmostLocalDerivation) -> AlmostLocalDerivation {
    f.same_lattice(g).expect("same lattice");
    let lat = &f.lattice;
    let mut out = AlmostLocalDerivation::zero(lat);
    let mut acc: BTreeMap<Brick, Mat> = BTreeMap::new();
    for (x, fx) in &f.comps {
        let sx = lat.sites_in(x);
        for (y, gy) in &g.comps {
            if !x.intersects(y) {
                continue;
            }
            let z = x.join(y);
            let tz = lat.sites_in(&z);
            let a = lat.embed_sites(fx, &sx, &tz);
            let b = lat.embed_sites(gy, &lat.sites_in(y), &tz);
            let c = commutator_mat(&a, &b);
            let scale = max_abs(&c).max(1.0);
            for (w, m) in decompose_unchecked(lat, &z, &tz, &c, scale).comps {
                acc.entry(w).and_modify(|e| *e += &m).or_insert(m);
            }
        }
    }
    acc.retain(|_, m| max_abs(m) > DROP_TOL);
    out.comps = acc;
    out
}

/// Commutator through the assembled matrices on the whole truncation.
pub fn commutator_assembled(
    f: &AlmostLocalDerivation,
    g: &AlmostLocalDerivation,
) -> AlmostLocalDerivation {
    f.same_lattice(g).expect("same lattice");
    let c = commutator_mat(&f.assemble(), &g.assemble());
    AlmostLocalDerivation::from_full_projected(&f.lattice, &c)
}

/// The weight `χ(Y)`: 1 nearer `U`, 1/2 equidistant, 0 nearer `V`.
pub fn split_weight(y: &Brick, u: &Region, v: &Region) -> Result<f64, LatticeError> {
    let du = u.distance_to_brick(y)?;
    let dv = v.distance_to_brick(y)?;
    Ok(match du.cmp(&dv) {
        std::cmp::Ordering::Less => 1.0,
        std::cmp::Ordering::Equal => 0.5,
        std::cmp::Ordering::Greater => 0.0,
    })
}

pub fn split(
    f: &AlmostLocalDerivation,
    u: &Region,
    v: &Region,
) -> Result<(AlmostLocalDerivation, AlmostLocalDerivation), LatticeError> {
    let mut fu = AlmostLocalDerivation::zero(&f.lattice);
    for (y, m) in &f.comps {
        let w = split_weight(y, u, v)?;
        if w > 0.0 {
            fu.comps.insert(y.clone(), m * C64::new(w, 0.0));
        }
    }
    let fv = f.sub(&fu);
    Ok((fu, fv))
}

#[derive(Clone, Debug)]
pub struct ZeroChain {
    pub lattice: Arc<LatticeSystem>,
    pub chain: BTreeMap<Vec<i64>, AlmostLocalDerivation>,
}

impl ZeroChain {
    /// `sup_j ‖f_j‖_{{j},k}`.
    pub fn norm(&self, k: f64) -> f64 {
        self.chain
            .iter()
            .map(|(j, fj)| fj.seminorm(&Region::point(j), k).expect("nonempty"))
            .fold(0.0, f64::max)
    }
}

/// Assigns every brick of `F` to the nearest point of `U^1 ∩ Z^n`, ties broken
/// lexicographically.
pub fn chain_decompose(f: &AlmostLocalDerivation, u: &Region) -> Result<ZeroChain, LatticeError> {
    let lat = &f.lattice;
    if let Region::Points(p) = u {
        if p.is_empty() {
            return Err(LatticeError::EmptyRegion);
        }
    }
    let bounds = &lat.bounds;
    let gap = u.distance_to_brick(bounds)?;
    let gap = gap.ceil().to_integer().to_i64().unwrap_or(i64::MAX / 4);
    let margin = gap + bounds.diam() + 1;
    let window = Brick {
        lo: bounds.lo.iter().map(|v| v - margin).collect(),
        hi: bounds.hi.iter().map(|v| v + margin).collect(),
    };
    let one = q(1);
    let mut cands = Vec::new();
    for z in window.points() {
        if u.distance_to_point(&z)? <= one {
            cands.push(z);
        }
    }
    if cands.is_empty() {
        return Err(LatticeError::EmptyRegion);
    }
    let mut chain: BTreeMap<Vec<i64>, AlmostLocalDerivation> = BTreeMap::new();
    for (y, m) in &f.comps {
        let z = cands
            .iter()
            .min_by(|a, b| {
                let da = Brick::point(a).dist(y);
                let db = Brick::point(b).dist(y);
                da.cmp(&db).then_with(|| a.cmp(b))
            })
            .expect("nonempty candidates");
        chain
            .entry(z.clone())
            .or_insert_with(|| AlmostLocalDerivation::zero(lat))
            .comps
            .insert(y.clone(), m.clone());
    }
    Ok(ZeroChain { lattice: lat.clone(), chain })
}

pub fn chain_boundary(f: &ZeroChain) -> AlmostLocalDerivation {
    let mut out = AlmostLocalDerivation::zero(&f.lattice);
    for fj in f.chain.values() {
        out = out.add(fj);
    }
    out
}

/// `sup_{r} (1+r)^k ‖a − b_r‖` with `b_r` the part of `a` on bricks inside the
/// closed ball `B_r(x)`; at `r = 0` the ball is taken empty so `b_0 = 0`.
pub fn ks_norm(a: &AlmostLocalDerivation, x: &[i64], k: f64) -> f64 {
    let full = a.assemble();
    let mut best = op_norm(&full);
    let reach = a
        .comps
        .keys()
        .map(|y| {
            (0..y.dim())
                .map(|i| (y.hi[i] - x[i]).abs().max((y.lo[i] - x[i]).abs()))
                .max()
                .unwrap_or(0)
        })
        .max()
        .unwrap_or(0);
    for m in 0..reach {
        let ball = Brick {
            lo: x.iter().map(|v| v - m).collect(),
            hi: x.iter().map(|v| v + m).collect(),
        };
        let mut rest = AlmostLocalDerivation::zero(&a.lattice);
        for (y, c) in &a.comps {
            if !ball.contains(y) {
                rest.comps.insert(y.clone(), c.clone());
            }
        }
        best = best.max((m as f64 + 2.0).powf(k) * op_norm(&rest.assemble()));
    }
    best
}

pub fn brick_sum_bound(n: usize) -> f64 {
    std::f64::consts::PI.powi(4) * ((n + 1) * (n + 1)) as f64 / 36.0
}

pub fn commutator_bound_constant(n: usize) -> f64 {
    std::f64::consts::PI.powi(8) * ((n + 1) as f64).powi(4) / 648.0
}

/// `Σ_Y (1 + diam Y + d(Y, j))^{-2n-2}` over the bricks inside `lo..=hi`,
/// exact up to floating point summation. Counts bricks by the joint law of
/// `(diam, d)`, using that both are maxima of per-axis quantities.
pub fn brick_sum(lo: &[i64], hi: &[i64], j: &[Q]) -> f64 {
    let n = lo.len();
    let mut axes: Vec<BTreeMap<(i64, Q), u128>> = Vec::new();
    for i in 0..n {
        let mut h = BTreeMap::new();
        for l in lo[i]..=hi[i] {
            for r in l..=hi[i] {
                let (ql, qr) = (q(l), q(r));
                let d = if j[i] < ql {
                    ql - &j[i]
                } else if j[i] > qr {
                    &j[i] - qr
                } else {
                    Q::zero()
                };
                *h.entry((r - l, d)).or_insert(0u128) += 1;
            }
        }
        axes.push(h);
    }
    let mut lens: Vec<i64> = axes.iter().flat_map(|h| h.keys().map(|k| k.0)).collect();
    lens.sort_unstable();
    lens.dedup();
    let mut dists: Vec<Q> = axes.iter().flat_map(|h| h.keys().map(|k| k.1.clone())).collect();
    dists.sort();
    dists.dedup();
    let cum = |li: usize, di: usize| -> f64 {
        let mut prod = 1.0f64;
        for h in &axes {
            let c: u128 = h
                .iter()
                .filter(|((l, d), _)| *l <= lens[li] && *d <= dists[di])
                .map(|(_, c)| *c)
                .sum();
            prod *= c as f64;
        }
        prod
    };
    let mut g = vec![vec![0.0f64; dists.len()]; lens.len()];
    for (li, row) in g.iter_mut().enumerate() {
        for (di, v) in row.iter_mut().enumerate() {
            *v = cum(li, di);
        }
    }
    let mut total = 0.0;
    let p = -(2.0 * n as f64 + 2.0);
    for li in 0..lens.len() {
        for di in 0..dists.len() {
            let mut mass = g[li][di];
            if li > 0 {
                mass -= g[li - 1][di];
            }
            if di > 0 {
                mass -= g[li][di - 1];
            }
            if li > 0 && di > 0 {
                mass += g[li - 1][di - 1];
            }
            if mass != 0.0 {
                total += mass * (1.0 + lens[li] as f64 + to_f64(&dists[di])).powf(p);
            }
        }
    }
    total
}

/// Direct enumeration of the same sum, for small boxes.
pub fn brick_sum_direct(lo: &[i64], hi: &[i64], j: &[Q]) -> f64 {
    let b = Brick::new(lo.to_vec(), hi.to_vec()).expect("valid box");
    let p = -(2.0 * lo.len() as f64 + 2.0);
    b.sub_bricks()
        .iter()
        .map(|y| (1.0 + y.diam() as f64 + to_f64(&y.dist_point(j))).powf(p))
        .sum()
}
