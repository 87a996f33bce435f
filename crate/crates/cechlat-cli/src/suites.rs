//! Named property suites for the `verify` command.

use cechlat::dgla::{
    build_cech_dgla, commutator_class, first_order_from_split, gauge_act, pair, solve_mc, u1_curvature, CechElement,
    ConstantHandle,
};
use cechlat::exact::{q, qr, Q};
use cechlat::invariants::{hall_conductance, split_charge, OnsiteSymmetry, SplitOptions};
use cechlat::lattice::{
    brick_decompose, brick_sum, brick_sum_bound, commutator, commutator_bound_constant, commutator_mat, max_abs,
    AlmostLocalDerivation, LatticeSystem, Mat, Region, C64,
};
use cechlat::nerve::{build_nerve, fundamental_cocycle, Cochain, Cover};
use cechlat::state::{ground_state, HamiltonianDerivation, SpinModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::sync::Arc;

use crate::CliError;

pub const SUITES: [&str; 4] = ["brick", "seminorm", "mc", "invariance"];

#[derive(Debug, Default)]
pub struct SuiteOutcome {
    pub passed: usize,
    pub failed: usize,
    pub failures: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
}

impl SuiteOutcome {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
            self.failures.push(what());
        }
    }

    fn record_max(&mut self, key: &str, v: f64) {
        let e = self.metrics.entry(key.to_string()).or_insert(0.0);
        *e = e.max(v);
    }
}

pub fn run(name: &str, seed: u64, workers: usize, shape: Option<Vec<i64>>) -> Result<SuiteOutcome, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let failure = |e: &dyn std::fmt::Display| CliError::Failure(e.to_string());
    match name {
        "brick" => brick(&mut rng, &shape.unwrap_or_else(|| vec![2, 2])).map_err(|e| failure(&e)),
        "seminorm" => seminorm(&mut rng).map_err(|e| failure(&e)),
        "mc" => mc(&mut rng).map_err(|e| failure(&e)),
        "invariance" => invariance(workers).map_err(|e| failure(&e)),
        other => Err(CliError::Usage(format!("unknown suite {other:?}; known: {}", SUITES.join(", ")))),
    }
}

/// Random traceless anti-hermitian `d × d` matrix.
pub fn random_ah(d: usize, rng: &mut ChaCha8Rng) -> Mat {
    let m = Mat::from_fn(d, d, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let mut a = (&m - m.adjoint()) * C64::new(0.5, 0.0);
    let t = a.trace() / C64::new(d as f64, 0.0);
    for i in 0..d {
        a[(i, i)] -= t;
    }
    a
}

fn brick(rng: &mut ChaCha8Rng, shape: &[i64]) -> Result<SuiteOutcome, Box<dyn std::error::Error>> {
    let lat = LatticeSystem::qubits(shape)?;
    let d = lat.hilbert_dim();
    let mut out = SuiteOutcome::default();
    for _ in 0..10 {
        let a = random_ah(d, rng);
        let f = AlmostLocalDerivation::from_full(&lat, &a)?;
        let back = max_abs(&(f.assemble() - &a));
        out.record_max("roundtrip", back);
        out.check(back < 1e-12, || format!("assemble after decompose off by {back:e}"));
        let again = AlmostLocalDerivation::from_full(&lat, &f.assemble())?;
        let dist = again.distance(&f);
        out.check(dist < 1e-12, || format!("decompose after assemble off by {dist:e}"));
        for (y, c) in &f.comps {
            for x in y.sub_bricks() {
                if &x == y {
                    continue;
                }
                let r = max_abs(&lat.partial_trace(c, y, &x)?);
                out.check(r < 1e-12, || format!("component on {y:?} has trace {r:e} on {x:?}"));
            }
        }
    }
    Ok(out)
}

/// Sum of random operators, each supported on a random brick of the lattice.
fn random_local(lat: &Arc<LatticeSystem>, rng: &mut ChaCha8Rng, terms: usize) -> AlmostLocalDerivation {
    let bricks = lat.bricks();
    let mut f = AlmostLocalDerivation::zero(lat);
    for _ in 0..terms {
        let y = &bricks[rng.gen_range(0..bricks.len())];
        let a = random_ah(lat.brick_dim(y), rng);
        f = f.add(&brick_decompose(lat, y, &a).expect("traceless anti-hermitian"));
    }
    f
}

fn seminorm(rng: &mut ChaCha8Rng) -> Result<SuiteOutcome, Box<dyn std::error::Error>> {
    let mut out = SuiteOutcome::default();
    for n in 1..=3usize {
        let side = [40, 20, 12][n - 1];
        let lo = vec![0i64; n];
        let hi = vec![side; n];
        for j in [vec![q(0); n], vec![qr(side, 2); n], vec![qr(-7, 3); n], vec![q(side + 5); n]] {
            let s = brick_sum(&lo, &hi, &j);
            out.record_max(&format!("brick_sum_ratio_n{n}"), s / brick_sum_bound(n));
            out.check(s <= brick_sum_bound(n), || format!("brick sum {s} above bound for n={n}"));
        }
    }
    for shape in [vec![5i64], vec![2, 2]] {
        let lat = LatticeSystem::qubits(&shape)?;
        let n = shape.len();
        let c = commutator_bound_constant(n);
        for _ in 0..10 {
            let f = random_local(&lat, rng, 3);
            let g = random_local(&lat, rng, 3);
            let comm = commutator(&f, &g);
            let u = Region::point(&lat.sites[0]);
            let v = Region::point(lat.sites.last().expect("sites"));
            for k in 0..=4 {
                let kf = k as f64;
                let lhs = comm.seminorm(&u, kf)?;
                let ext = kf + 4.0 * n as f64 + 4.0;
                let rhs = c * 3f64.powf(kf) * f.seminorm(&u, ext)? * g.seminorm(&v, ext)?;
                out.check(lhs <= rhs, || format!("commutator bound fails at k={k}: {lhs} > {rhs}"));
            }
        }
    }
    Ok(out)
}

fn diag(values: &[f64]) -> Mat {
    Mat::from_fn(values.len(), values.len(), |r, c| if r == c { C64::new(0.0, values[r]) } else { C64::new(0.0, 0.0) })
}

/// Parts of a charge `Q = diag(i m)` commuting with `Q`: random diagonals plus
/// a flip between two states of equal charge moved between parts.
fn random_parts(m: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<Mat> {
    let d = m.len();
    let mut parts: Vec<Mat> = (0..k - 1)
        .map(|_| diag(&(0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()))
        .collect();
    let head = parts.iter().fold(Mat::zeros(d, d), |a, b| a + b);
    parts.push(diag(m) - head);
    let mut x = Mat::zeros(d, d);
    x[(1, 2)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    x[(2, 1)] = -x[(1, 2)].conj();
    let (a, b) = (rng.gen_range(0..k), rng.gen_range(0..k));
    parts[a] += &x;
    parts[b] -= &x;
    parts
}

fn mc(rng: &mut ChaCha8Rng) -> Result<SuiteOutcome, Box<dyn std::error::Error>> {
    let mut out = SuiteOutcome::default();
    let charges = [1.0, 0.0, 0.0, -1.0];
    for dirs in [vec![[1, 0], [-1, 1], [-1, -1]], vec![[1, 0], [0, 1], [-1, 0], [0, -1]]] {
        let cover = Cover::planar_cones(&dirs)?;
        let beta = fundamental_cocycle(&cover, 1)?;
        for order in [2usize, 3] {
            for _ in 0..5 {
                let parts = random_parts(&charges, cover.len(), rng);
                let d = build_cech_dgla(&cover, &ConstantHandle { dim: 1 }, u1_curvature(&diag(&charges)), order)?
                    .with_splitting(first_order_from_split(&parts))?;
                let p = solve_mc(&d)?;
                out.record_max("max_residual", p.residual);
                out.check(p.residual < 1e-9, || format!("MC residual {:e} at order {order}", p.residual));
                // gauge by an invariant element on an unbounded edge
                let mut gx = Mat::zeros(4, 4);
                gx[(1, 2)] = C64::new(0.3, -0.2);
                gx[(2, 1)] = -gx[(1, 2)].conj();
                debug_assert!(max_abs(&commutator_mat(&diag(&charges), &gx)) < 1e-15);
                let a = CechElement::single(vec![0, 1], vec![1], gx);
                let p2 = gauge_act(&d, &a, &p)?;
                out.record_max("max_residual", p2.residual);
                out.check(p2.residual < 1e-9, || format!("gauge-transformed residual {:e}", p2.residual));
                let psi = |m: &Mat| m[(0, 0)];
                let v1 = pair(&commutator_class(&d, &p), &beta, &d.nerve, &psi)?;
                let v2 = pair(&commutator_class(&d, &p2), &beta, &d.nerve, &psi)?;
                let diff = v1
                    .keys()
                    .chain(v2.keys())
                    .map(|k| (v1.get(k).copied().unwrap_or_default() - v2.get(k).copied().unwrap_or_default()).norm())
                    .fold(0.0f64, f64::max);
                out.record_max("gauge_pairing_change", diff);
                out.check(diff < 1e-9, || format!("pairing changed by {diff:e} under gauge"));
            }
        }
    }
    Ok(out)
}

fn invariance(workers: usize) -> Result<SuiteOutcome, Box<dyn std::error::Error>> {
    let mut out = SuiteOutcome::default();
    let lat = LatticeSystem::qubits(&[2, 3])?;
    let sym = OnsiteSymmetry::u1_spin_half(&lat)?;
    let c3 = Cover::planar_cones(&[[1, 0], [-1, 1], [-1, -1]])?;
    let c6 = Cover::planar_cones(&[[1, 0], [1, 1], [0, 1], [-1, 0], [-1, -1], [0, -1]])?;
    let models = [("product", SpinModel::zfield(&lat, -1.0), 1.0), ("xxz", SpinModel::xxz(&lat, 1.0, 0.7, 0.35), 0.05)];
    for (name, model, gap) in models {
        let psi = ground_state(&HamiltonianDerivation::from_model(&lat, &model, gap)?)?;
        let s3 = split_charge(&psi, &sym, &c3, &SplitOptions::default())?;
        let s3b = split_charge(&psi, &sym, &c3, &SplitOptions { order: Some(vec![2, 0, 1]), ..Default::default() })?;
        let s6 = split_charge(&psi, &sym, &c6, &SplitOptions::default())?;
        let b3 = fundamental_cocycle(&c3, 1)?;
        let b6 = fundamental_cocycle(&c6, 1)?;
        let nv = build_nerve(&c3);
        let mut shift = Cochain::zero(0);
        shift = shift.add(&Cochain::unit(vec![1]).scale(&qr(3, 2)));
        let shifted = b3.add(&shift.coboundary(&nv));
        let s = hall_conductance(&psi, &s3, &c3, &b3, workers)?.raw();
        let flipped = hall_conductance(&psi, &s3, &c3, &b3.scale(&Q::from_integer((-1).into())), workers)?.raw();
        let coh = hall_conductance(&psi, &s3, &c3, &shifted, workers)?.raw();
        let other = hall_conductance(&psi, &s3b, &c3, &b3, workers)?.raw();
        let fine = hall_conductance(&psi, &s6, &c6, &b6, workers)?.raw();
        if name == "product" {
            out.check(s.norm() < 1e-10, || format!("product-state value {s}"));
        }
        out.check((s - coh).norm() < 1e-9, || format!("{name}: cohomologous cocycles differ by {}", (s - coh).norm()));
        out.check((s - fine).norm() < 1e-8, || format!("{name}: 3 vs 6 cones differ by {}", (s - fine).norm()));
        out.check((s - other).norm() < 1e-8, || format!("{name}: splitting choices differ by {}", (s - other).norm()));
        out.check(flipped == -s, || format!("{name}: orientation flip is not exact"));
        out.record_max("max_abs_value", s.norm().max(fine.norm()));
        out.record_max("max_preservation_defect", s3.max_preservation_defect().max(s6.max_preservation_defect()));
        out.check(s3.max_preservation_defect() < 1e-8, || format!("{name}: preservation defect"));
    }
    Ok(out)
}
