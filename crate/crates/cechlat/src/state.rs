//! Gapped ground states at finite volume, their averages, the quasiadiabatic
//! maps `J` and `K`, and the state-preserving splitting of derivations.
//!
//! A hermitian generator `h` acts as the derivation `H(A) = [i h, A]`, so in the
//! eigenbasis `H(F)_{mn} = i (E_m − E_n) F_{mn}`.

use crate::lattice::{
    commutator_mat, kron, max_abs, normalized_trace, op_norm, pauli, split, AlmostLocalDerivation,
    LatticeSystem, Mat, Region, C64,
};
use nalgebra::{DMatrix, SymmetricEigen};
use std::collections::BTreeMap;
use std::sync::Arc;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum StateError {
    #[error("ground space is degenerate (splitting {0:.3e})")]
    Degenerate(f64),
    #[error("measured gap {measured:.6} is below the declared gap {declared:.6}")]
    GapTooSmall { declared: f64, measured: f64 },
    #[error("generator is not hermitian (defect {0:.3e})")]
    NotHermitian(f64),
    #[error("derivation does not preserve the state (defect {0:.3e})")]
    NotPreserving(f64),
    #[error("matrix is not a projector (defect {0:.3e})")]
    NotProjector(f64),
    #[error("single-particle spectrum is gapless at the Fermi level")]
    Gapless,
    #[error("lattice error: {0}")]
    Lattice(#[from] crate::lattice::LatticeError),
}

pub const PRESERVE_TOL: f64 = 1e-8;

/// Qubit spin model: on-site fields `(hx, hy, hz)` and bonds with couplings
/// `(Jxx, Jyy, Jzz)`.
#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct SpinModel {
    pub onsite: Vec<(Vec<i64>, [f64; 3])>,
    pub bonds: Vec<(Vec<i64>, Vec<i64>, [f64; 3])>,
}

fn nearest_neighbour_bonds(lat: &LatticeSystem) -> Vec<(Vec<i64>, Vec<i64>)> {
    let mut out = Vec::new();
    for s in &lat.sites {
        for i in 0..lat.dim {
            let mut t = s.clone();
            t[i] += 1;
            if lat.site_index(&t).is_some() {
                out.push((s.clone(), t));
            }
        }
    }
    out
}

impl SpinModel {
    /// `h = −J Σ σ^z σ^z − g Σ σ^x` on nearest-neighbour bonds.
    pub fn tfim(lat: &LatticeSystem, j: f64, g: f64) -> Self {
        SpinModel {
            onsite: lat.sites.iter().map(|s| (s.clone(), [-g, 0.0, 0.0])).collect(),
            bonds: nearest_neighbour_bonds(lat).into_iter().map(|(a, b)| (a, b, [0.0, 0.0, -j])).collect(),
        }
    }

    /// `h = Σ [Jxy (σ^x σ^x + σ^y σ^y) + Jz σ^z σ^z] + B Σ σ^z`.
    pub fn xxz(lat: &LatticeSystem, jxy: f64, jz: f64, field: f64) -> Self {
        SpinModel {
            onsite: lat.sites.iter().map(|s| (s.clone(), [0.0, 0.0, field])).collect(),
            bonds: nearest_neighbour_bonds(lat)
                .into_iter()
                .map(|(a, b)| (a, b, [jxy, jxy, jz]))
                .collect(),
        }
    }

    pub fn zfield(lat: &LatticeSystem, hz: f64) -> Self {
        SpinModel {
            onsite: lat.sites.iter().map(|s| (s.clone(), [0.0, 0.0, hz])).collect(),
            bonds: vec![],
        }
    }

    pub fn generator(&self, lat: &LatticeSystem) -> Result<Mat, StateError> {
        let all: Vec<usize> = (0..lat.sites.len()).collect();
        let d = lat.hilbert_dim();
        let mut h = Mat::zeros(d, d);
        let paulis = [pauli('x'), pauli('y'), pauli('z')];
        let idx = |x: &Vec<i64>| {
            lat.site_index(x).ok_or_else(|| {
                StateError::Lattice(crate::lattice::LatticeError::Parse(format!("site {x:?} outside the lattice")))
            })
        };
        for (x, f) in &self.onsite {
            let s = idx(x)?;
            for a in 0..3 {
                if f[a] != 0.0 {
                    h += lat.embed_sites(&(&paulis[a] * C64::new(f[a], 0.0)), &[s], &all);
                }
            }
        }
        for (x, y, c) in &self.bonds {
            let (s, t) = (idx(x)?, idx(y)?);
            let (lo, hi) = if s < t { (s, t) } else { (t, s) };
            for a in 0..3 {
                if c[a] != 0.0 {
                    let term = kron(&paulis[a], &paulis[a]) * C64::new(c[a], 0.0);
                    h += lat.embed_sites(&term, &[lo, hi], &all);
                }
            }
        }
        Ok(h)
    }
}

/// `H = [i h, ·]` together with the declared gap.
#[derive(Clone, Debug)]
pub struct HamiltonianDerivation {
    pub lattice: Arc<LatticeSystem>,
    pub h: Mat,
    pub derivation: AlmostLocalDerivation,
    pub gap: f64,
}

impl HamiltonianDerivation {
    pub fn new(lat: &Arc<LatticeSystem>, h: Mat, gap: f64) -> Result<Self, StateError> {
        let defect = max_abs(&(&h - h.adjoint()));
        if defect > 1e-10 * max_abs(&h).max(1.0) {
            return Err(StateError::NotHermitian(defect));
        }
        let tr = normalized_trace(&h);
        let mut a = &h * C64::new(0.0, 1.0);
        for i in 0..a.nrows() {
            a[(i, i)] -= tr * C64::new(0.0, 1.0);
        }
        let derivation = AlmostLocalDerivation::from_full(lat, &a)?;
        Ok(HamiltonianDerivation { lattice: lat.clone(), h, derivation, gap })
    }

    pub fn from_model(lat: &Arc<LatticeSystem>, m: &SpinModel, gap: f64) -> Result<Self, StateError> {
        Self::new(lat, m.generator(lat)?, gap)
    }
}

/// Smooth bump filter `ŵ(ω) = exp(1 − 1/(1 − (2ω/Δ)²))` on `|ω| < Δ/2`.
#[derive(Clone, Copy, Debug)]
pub struct FilterFunction {
    pub gap: f64,
}

impl FilterFunction {
    pub fn w_hat(&self, omega: f64) -> f64 {
        let x = 2.0 * omega / self.gap;
        if x.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - x * x)).exp()
        }
    }

    /// `Ŵ(ω) = (ŵ(ω) − 1)/(iω)`, `Ŵ(0) = 0`.
    pub fn big_w_hat(&self, omega: f64) -> C64 {
        if omega == 0.0 {
            C64::new(0.0, 0.0)
        } else {
            C64::new(0.0, -(self.w_hat(omega) - 1.0) / omega)
        }
    }

    /// `w(t) = (1/π) ∫_0^{Δ/2} ŵ(ω) cos(ωt) dω`.
    pub fn w_time(&self, t: f64, rule: &GaussLegendre) -> f64 {
        rule.integrate(0.0, self.gap / 2.0, |w| self.w_hat(w) * (w * t).cos()) / std::f64::consts::PI
    }

    /// The odd kernel whose transform is `Ŵ`: `∫_t^∞ w` for `t > 0`.
    pub fn big_w_time(&self, t: f64, rule: &GaussLegendre) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        let s = t.signum();
        let t = t.abs();
        let tail = 0.5
            - rule.integrate(0.0, self.gap / 2.0, |w| self.w_hat(w) * (w * t).sin() / w)
                / std::f64::consts::PI;
        s * tail
    }

    /// `(∫ w(t) e^{iωt} dt, ∫ W(t) e^{iωt} dt)` over `|t| ≤ t_max` by panelled
    /// quadrature.
    pub fn multipliers_time(&self, omegas: &[f64], t_max: f64, panels: usize) -> Vec<(f64, C64)> {
        let inner = GaussLegendre::new(160);
        let outer = GaussLegendre::new(24);
        let width = t_max / panels as f64;
        let mut samples = Vec::new();
        for p in 0..panels {
            let a = p as f64 * width;
            for (x, wt) in outer.nodes_on(a, a + width) {
                samples.push((x, wt, self.w_time(x, &inner), self.big_w_time(x, &inner)));
            }
        }
        omegas
            .iter()
            .map(|&om| {
                let mut j = 0.0;
                let mut k = 0.0;
                for (t, wt, w, bw) in &samples {
                    j += 2.0 * wt * w * (om * t).cos();
                    k += 2.0 * wt * bw * (om * t).sin();
                }
                (j, C64::new(0.0, k))
            })
            .collect()
    }
}

/// Gauss–Legendre rule on `[-1, 1]` from the Golub–Welsch eigenproblem.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let mut jm = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = k as f64 / ((4 * k * k - 1) as f64).sqrt();
            jm[(k - 1, k)] = b;
            jm[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(jm);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        GaussLegendre { nodes: pairs.iter().map(|p| p.0).collect(), weights: pairs.iter().map(|p| p.1).collect() }
    }

    pub fn nodes_on(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let (c, h) = ((a + b) / 2.0, (b - a) / 2.0);
        self.nodes.iter().zip(&self.weights).map(|(x, w)| (c + h * x, h * w)).collect()
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes_on(a, b).into_iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// Ground state of a gapped spin Hamiltonian with its full spectrum.
#[derive(Clone, Debug)]
pub struct ExactState {
    pub hamiltonian: HamiltonianDerivation,
    pub energies: Vec<f64>,
    pub vectors: Mat,
    pub measured_gap: f64,
    pub filter: FilterFunction,
}

/// Quasi-free fermion state given by its single-particle correlation matrix.
#[derive(Clone, Debug)]
pub struct FreeFermionState {
    pub h1: Mat,
    pub p: Mat,
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub enum GappedState {
    Exact(ExactState),
    FreeFermion(FreeFermionState),
}

fn hermitian_eigen(h: &Mat) -> (Vec<f64>, Mat) {
    let eig = SymmetricEigen::new(h.clone());
    let mut v = eig.eigenvectors;
    let mut d = v.adjoint() * h * &v;
    jacobi_polish(&mut d, &mut v);
    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[(a, a)].re.total_cmp(&d[(b, b)].re));
    let energies = order.iter().map(|&i| d[(i, i)].re).collect();
    let vectors = Mat::from_fn(n, n, |r, c| v[(r, order[c])]);
    (energies, vectors)
}

/// Cyclic complex Jacobi sweeps on a nearly diagonal Hermitian `d`, with the
/// rotations accumulated into `v`.
fn jacobi_polish(d: &mut Mat, v: &mut Mat) {
    let n = d.nrows();
    let tol = 64.0 * f64::EPSILON * d.iter().fold(1.0f64, |m, z| m.max(z.norm()));
    for _ in 0..10 {
        let off = (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).filter(|(r, c)| r != c).fold(0.0f64, |m, (r, c)| {
            m.max(d[(r, c)].norm())
        });
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = d[(p, q)];
                let g = apq.norm();
                if g <= tol {
                    continue;
                }
                let phase = apq / g;
                let theta = (d[(q, q)].re - d[(p, p)].re) / (2.0 * g);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let sp = phase * s;
                for k in 0..n {
                    let (xp, xq) = (d[(k, p)], d[(k, q)]);
                    d[(k, p)] = xp * c - xq * sp.conj();
                    d[(k, q)] = xp * sp + xq * c;
                }
                for k in 0..n {
                    let (xp, xq) = (d[(p, k)], d[(q, k)]);
                    d[(p, k)] = xp * c - xq * sp;
                    d[(q, k)] = xp * sp.conj() + xq * c;
                }
                for k in 0..n {
                    let (xp, xq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = xp * c - xq * sp.conj();
                    v[(k, q)] = xp * sp + xq * c;
                }
            }
        }
    }
}

pub fn ground_state(h: &HamiltonianDerivation) -> Result<ExactState, StateError> {
    let (energies, vectors) = hermitian_eigen(&h.h);
    let measured = if energies.len() > 1 { energies[1] - energies[0] } else { f64::INFINITY };
    let scale = energies.iter().fold(1.0f64, |a, e| a.max(e.abs()));
    if measured <= 1e-9 * scale {
        return Err(StateError::Degenerate(measured));
    }
    if measured < h.gap {
        return Err(StateError::GapTooSmall { declared: h.gap, measured });
    }
    Ok(ExactState {
        hamiltonian: h.clone(),
        energies,
        vectors,
        measured_gap: measured,
        filter: FilterFunction { gap: h.gap },
    })
}

impl ExactState {
    pub fn lattice(&self) -> &Arc<LatticeSystem> {
        &self.hamiltonian.lattice
    }

    pub fn ground_vector(&self) -> nalgebra::DVector<C64> {
        self.vectors.column(0).into_owned()
    }

    pub fn projector(&self) -> Mat {
        let g = self.ground_vector();
        &g * g.adjoint()
    }

    pub fn expect(&self, a: &Mat) -> C64 {
        let g = self.ground_vector();
        (g.adjoint() * a * &g)[(0, 0)]
    }

    /// `ψ(F)`, the expectation of the assembled derivation.
    pub fn average(&self, f: &AlmostLocalDerivation) -> C64 {
        self.expect(&f.assemble())
    }

    /// `‖[F, P]‖` with `P` the ground projector.
    pub fn preservation_defect(&self, a: &Mat) -> f64 {
        op_norm(&commutator_mat(a, &self.projector()))
    }

    pub fn preserves(&self, f: &AlmostLocalDerivation) -> bool {
        self.preservation_defect(&f.assemble()) <= PRESERVE_TOL
    }

    /// `−iψ(A† H(A)) − Δ (ψ(A†A) − |ψ(A)|²)`; nonnegative for a gapped state.
    pub fn gap_condition_margin(&self, a: &Mat) -> f64 {
        let h = &self.hamiltonian.h;
        let ha = commutator_mat(h, a) * C64::new(0.0, 1.0);
        let lhs = (self.expect(&(a.adjoint() * ha)) * C64::new(0.0, -1.0)).re;
        let m = self.expect(a);
        let var = self.expect(&(a.adjoint() * a)).re - m.norm_sqr();
        lhs - self.hamiltonian.gap * var
    }

    fn spectral_map(&self, a: &Mat, mult: impl Fn(f64) -> C64) -> Mat {
        let v = &self.vectors;
        let mut m = v.adjoint() * a * v;
        let n = m.nrows();
        for r in 0..n {
            for c in 0..n {
                m[(r, c)] *= mult(self.energies[r] - self.energies[c]);
            }
        }
        v * m * v.adjoint()
    }

    pub fn j_matrix(&self, a: &Mat) -> Mat {
        let f = self.filter;
        self.spectral_map(a, |w| C64::new(f.w_hat(w), 0.0))
    }

    pub fn k_matrix(&self, a: &Mat) -> Mat {
        let f = self.filter;
        self.spectral_map(a, |w| f.big_w_hat(w))
    }

    pub fn quasiadiabatic_j(&self, f: &AlmostLocalDerivation) -> AlmostLocalDerivation {
        AlmostLocalDerivation::from_full_projected(self.lattice(), &self.j_matrix(&f.assemble()))
    }

    pub fn quasiadiabatic_k(&self, f: &AlmostLocalDerivation) -> AlmostLocalDerivation {
        AlmostLocalDerivation::from_full_projected(self.lattice(), &self.k_matrix(&f.assemble()))
    }

    /// `J` and `K` evaluated from the time-domain kernels instead of the
    /// spectral multipliers.
    pub fn quasiadiabatic_time(&self, a: &Mat, t_max: f64, panels: usize) -> (Mat, Mat) {
        let mut freqs: Vec<f64> = Vec::new();
        for &x in &self.energies {
            for &y in &self.energies {
                freqs.push(x - y);
            }
        }
        let mut keys: Vec<i64> = freqs.iter().map(|w| (w * 1e9).round() as i64).collect();
        keys.sort_unstable();
        keys.dedup();
        let omegas: Vec<f64> = keys.iter().map(|&k| k as f64 * 1e-9).collect();
        let table: BTreeMap<i64, (f64, C64)> = keys
            .iter()
            .copied()
            .zip(self.filter.multipliers_time(&omegas, t_max, panels))
            .collect();
        let look = |w: f64| table[&((w * 1e9).round() as i64)];
        (
            self.spectral_map(a, |w| C64::new(look(w).0, 0.0)),
            self.spectral_map(a, |w| look(w).1),
        )
    }

    /// `H(F) = [ih, F]` as a matrix.
    pub fn h_apply(&self, a: &Mat) -> Mat {
        commutator_mat(&self.hamiltonian.h, a) * C64::new(0.0, 1.0)
    }

    pub fn hamiltonian_bracket(&self, f: &AlmostLocalDerivation) -> AlmostLocalDerivation {
        AlmostLocalDerivation::from_full_projected(self.lattice(), &self.h_apply(&f.assemble()))
    }
}

/// Voronoi weight of a brick: 1 when all its sites are strictly nearer `U`,
/// 0 when all are strictly nearer `V`, 1/2 otherwise.
pub fn voronoi_weight(
    y: &crate::lattice::Brick,
    u: &Region,
    v: &Region,
) -> Result<f64, StateError> {
    let (mut near_u, mut near_v) = (true, true);
    for p in y.points() {
        let du = u.distance_to_point(&p)?;
        let dv = v.distance_to_point(&p)?;
        if du >= dv {
            near_u = false;
        }
        if dv >= du {
            near_v = false;
        }
    }
    Ok(if near_u {
        1.0
    } else if near_v {
        0.0
    } else {
        0.5
    })
}

pub fn voronoi_split(
    f: &AlmostLocalDerivation,
    u: &Region,
    v: &Region,
) -> Result<AlmostLocalDerivation, StateError> {
    let mut out = AlmostLocalDerivation::zero(&f.lattice);
    for (y, m) in &f.comps {
        let w = voronoi_weight(y, u, v)?;
        if w > 0.0 {
            out.comps.insert(y.clone(), m * C64::new(w, 0.0));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct PsiSplit {
    pub f_u: AlmostLocalDerivation,
    pub f_v: AlmostLocalDerivation,
    pub defect_u: f64,
    pub defect_v: f64,
}

/// `F_U = J(γ_U(F)) − K([J(γ'_U(H)), F])` and `F_V = F − F_U`.
pub fn psi_preserving_split(
    psi: &ExactState,
    f: &AlmostLocalDerivation,
    u: &Region,
    v: &Region,
) -> Result<PsiSplit, StateError> {
    let a = f.assemble();
    let d0 = psi.preservation_defect(&a);
    if d0 > PRESERVE_TOL {
        return Err(StateError::NotPreserving(d0));
    }
    let (gu, _) = split(f, u, v)?;
    let hu = voronoi_split(&psi.hamiltonian.derivation, u, v)?;
    let jh = psi.j_matrix(&hu.assemble());
    let fu = psi.j_matrix(&gu.assemble()) - psi.k_matrix(&commutator_mat(&jh, &a));
    let f_u = AlmostLocalDerivation::from_full_projected(psi.lattice(), &fu);
    let f_v = f.sub(&f_u);
    let defect_u = psi.preservation_defect(&f_u.assemble());
    let defect_v = psi.preservation_defect(&f_v.assemble());
    Ok(PsiSplit { f_u, f_v, defect_u, defect_v })
}

impl FreeFermionState {
    /// Fills every single-particle level below zero energy.
    pub fn from_hopping(h1: &Mat) -> Result<Self, StateError> {
        let defect = max_abs(&(h1 - h1.adjoint()));
        if defect > 1e-10 * max_abs(h1).max(1.0) {
            return Err(StateError::NotHermitian(defect));
        }
        let (e, v) = hermitian_eigen(h1);
        let below = e.iter().filter(|x| **x < 0.0).count();
        if below == 0 || below == e.len() {
            return Err(StateError::Gapless);
        }
        let gap = e[below] - e[below - 1];
        if gap < 1e-9 {
            return Err(StateError::Gapless);
        }
        let occ = v.columns(0, below);
        let p = &occ * occ.adjoint();
        Ok(FreeFermionState { h1: h1.clone(), p, gap })
    }
}

pub fn check_projector(p: &Mat) -> Result<(), StateError> {
    let d = max_abs(&(p * p - p));
    if d > 1e-10 {
        return Err(StateError::NotProjector(d));
    }
    Ok(())
}

/// `tr(P [[P, A], [P, B]])`.
pub fn fermion_pairing(p: &Mat, a: &Mat, b: &Mat) -> Result<C64, StateError> {
    check_projector(p)?;
    Ok((p * commutator_mat(&commutator_mat(p, a), &commutator_mat(p, b))).trace())
}

/// The same trace restricted to the diagonal entries listed in `window`.
pub fn fermion_pairing_local(p: &Mat, a: &Mat, b: &Mat, window: &[usize]) -> Result<C64, StateError> {
    check_projector(p)?;
    let m = p * commutator_mat(&commutator_mat(p, a), &commutator_mat(p, b));
    Ok(window.iter().map(|&i| m[(i, i)]).sum())
}

/// Two-band Qi–Wu–Zhang hopping on a periodic `l × l` torus. Orbital index is
/// `2 (x l + y) + band`.
pub fn qwz_hopping(l: usize, m: f64) -> Mat {
    let n = 2 * l * l;
    let mut h = Mat::zeros(n, n);
    let half = C64::new(0.5, 0.0);
    let sz = pauli('z');
    let tx = (&sz - pauli('x') * C64::new(0.0, 1.0)) * half;
    let ty = (&sz - pauli('y') * C64::new(0.0, 1.0)) * half;
    let site = |x: usize, y: usize| 2 * (x * l + y);
    for x in 0..l {
        for y in 0..l {
            let s = site(x, y);
            for a in 0..2 {
                for b in 0..2 {
                    h[(s + a, s + b)] += sz[(a, b)] * m;
                }
            }
            for (t, nb) in [(&tx, site((x + 1) % l, y)), (&ty, site(x, (y + 1) % l))] {
                for a in 0..2 {
                    for b in 0..2 {
                        h[(nb + a, s + b)] += t[(a, b)];
                        h[(s + b, nb + a)] += t[(a, b)].conj();
                    }
                }
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::tests::random_ah;
    use crate::lattice::Brick;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tfim(n: i64, g: f64) -> ExactState {
        let lat = LatticeSystem::qubits(&[n]).unwrap();
        let h = HamiltonianDerivation::from_model(&lat, &SpinModel::tfim(&lat, 1.0, g), 0.5).unwrap();
        ground_state(&h).unwrap()
    }

    #[test]
    fn product_state_gap() {
        let lat = LatticeSystem::qubits(&[4]).unwrap();
        let h = HamiltonianDerivation::from_model(&lat, &SpinModel::zfield(&lat, 1.0), 2.0).unwrap();
        let s = ground_state(&h).unwrap();
        assert!((s.measured_gap - 2.0).abs() < 1e-10);
        let h = HamiltonianDerivation::from_model(&lat, &SpinModel::zfield(&lat, 1.0), 2.5).unwrap();
        assert!(matches!(ground_state(&h), Err(StateError::GapTooSmall { .. })));
        let f = lat.onsite(&[0], &(pauli('z') * C64::new(0.0, 1.0))).unwrap();
        assert!((s.average(&f) - C64::new(0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn tfim_gap_and_condition() {
        let s = tfim(6, 2.0);
        assert!(s.measured_gap > 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let a = random_ah(64, &mut rng);
            assert!(s.gap_condition_margin(&a) > -1e-9);
        }
    }

    #[test]
    fn eigenpairs_accurate_on_eight_sites() {
        let s = tfim(8, 1.5);
        let d = s.energies.len();
        let e = Mat::from_fn(d, d, |r, c| if r == c { C64::new(s.energies[r], 0.0) } else { C64::new(0.0, 0.0) });
        assert!(max_abs(&(&s.hamiltonian.h * &s.vectors - &s.vectors * e)) < 1e-12);
        assert!(max_abs(&(s.vectors.adjoint() * &s.vectors - Mat::identity(d, d))) < 1e-12);
        assert!(s.energies.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn quasiadiabatic_identity_and_preservation() {
        let s = tfim(5, 1.5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_ah(32, &mut rng);
        let j = s.j_matrix(&a);
        let k = s.k_matrix(&s.h_apply(&a));
        assert!(max_abs(&(&j - &k - &a)) < 1e-10);
        assert!(s.preservation_defect(&j) < 1e-10);
        let ha = s.hamiltonian.h.clone() * C64::new(0.0, 1.0);
        assert!(max_abs(&(s.j_matrix(&ha) - &ha)) < 1e-10);
    }

    #[test]
    fn j_kills_large_frequencies() {
        let s = tfim(4, 2.0);
        let v = &s.vectors;
        let n = v.nrows();
        let top = n - 1;
        let mut e = Mat::zeros(n, n);
        e[(0, top)] = C64::new(1.0, 0.0);
        e[(top, 0)] = C64::new(-1.0, 0.0);
        let a = v * e * v.adjoint();
        assert!(max_abs(&s.j_matrix(&a)) < 1e-14);
    }

    #[test]
    fn time_domain_multipliers_match() {
        let f = FilterFunction { gap: 1.0 };
        let om = [0.0, 0.1, 0.3, 0.6, 1.5];
        for (w, (j, k)) in om.iter().zip(f.multipliers_time(&om, 300.0, 300)) {
            assert!((j - f.w_hat(*w)).abs() < 1e-5, "{w}: {j}");
            assert!((k - f.big_w_hat(*w)).norm() < 1e-4, "{w}: {k}");
        }
    }

    #[test]
    fn psi_split_sums_and_preserves() {
        let s = tfim(5, 1.5);
        let u = Region::Brick(Brick::new(vec![0], vec![1]).unwrap());
        let v = Region::Brick(Brick::new(vec![3], vec![4]).unwrap());
        let sp = psi_preserving_split(&s, &s.hamiltonian.derivation, &u, &v).unwrap();
        assert!(sp.f_u.add(&sp.f_v).distance(&s.hamiltonian.derivation) < 1e-12);
        assert!(sp.defect_u < 1e-8 && sp.defect_v < 1e-8);
        let lat = s.lattice().clone();
        let bad = lat.onsite(&[0], &(pauli('x') * C64::new(0.0, 1.0))).unwrap();
        assert!(matches!(psi_preserving_split(&s, &bad, &u, &v), Err(StateError::NotPreserving(_))));
    }

    #[test]
    fn fermion_pairing_basics() {
        let st = FreeFermionState::from_hopping(&qwz_hopping(4, 1.0)).unwrap();
        check_projector(&st.p).unwrap();
        let n = st.p.nrows();
        let a = Mat::from_fn(n, n, |i, j| if i == j && i < n / 2 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
        assert!(fermion_pairing(&st.p, &a, &a).unwrap().norm() < 1e-10);
        let mut pd = Mat::zeros(4, 4);
        pd[(0, 0)] = C64::new(1.0, 0.0);
        let da = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0), C64::new(0.0, 0.0), C64::new(3.0, 0.0)]));
        let db = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(5.0, 0.0), C64::new(1.0, 0.0)]));
        assert!(fermion_pairing(&pd, &da, &db).unwrap().norm() < 1e-14);
        assert!(fermion_pairing(&(pd * C64::new(2.0, 0.0)), &da, &db).is_err());
    }

    #[test]
    fn gauss_legendre_exact_on_polynomials() {
        let g = GaussLegendre::new(5);
        assert!((g.integrate(0.0, 2.0, |x| x.powi(9)) - 102.4).abs() < 1e-10);
    }
}
