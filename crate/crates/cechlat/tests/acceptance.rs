//! Acceptance criteria, one printed line each. Run with
//! `cargo test -p cechlat --test acceptance`.

use cechlat::dgla::{
    augmented_homology, build_cech_dgla, commutator_class, first_order_from_split, gauge_act, pair, solve_mc,
    u1_curvature, CechElement, ConstantHandle, PreCosheafHandle,
};
use cechlat::exact::{q, qr};
use cechlat::geometry::{fuzzy_iso, fuzzy_leq, join, meet, sector2, sector3, Polyhedron, SemilinearSet};
use cechlat::invariants::{
    chern_number, fermion_hall_oracle, gauge_handle, hall_conductance, lattice_center, split_charge, DerivationHandle,
    OnsiteSymmetry, SplitOptions,
};
use cechlat::lattice::{
    brick_decompose, brick_sum, brick_sum_bound, brick_sum_direct, commutator, commutator_bound_constant, max_abs,
    AlmostLocalDerivation, LatticeSystem, Mat, Region, C64,
};
use cechlat::nerve::{build_nerve, fundamental_cocycle, Cochain, Cover};
use cechlat::state::{ground_state, ExactState, HamiltonianDerivation, SpinModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use std::time::Instant;

type Outcome = Result<String, String>;

fn random_ah(d: usize, rng: &mut ChaCha8Rng) -> Mat {
    let m = Mat::from_fn(d, d, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let mut a = (&m - m.adjoint()) * C64::new(0.5, 0.0);
    let t = a.trace() / C64::new(d as f64, 0.0);
    for i in 0..d {
        a[(i, i)] -= t;
    }
    a
}

fn random_local(lat: &Arc<LatticeSystem>, rng: &mut ChaCha8Rng, terms: usize) -> AlmostLocalDerivation {
    let bricks = lat.bricks();
    let mut f = AlmostLocalDerivation::zero(lat);
    for _ in 0..terms {
        let y = &bricks[rng.gen_range(0..bricks.len())];
        f = f.add(&brick_decompose(lat, y, &random_ah(lat.brick_dim(y), rng)).unwrap());
    }
    f
}

/// Every shape of dimension 1 to 3 with at most `sites` sites.
fn shapes_up_to(sites: i64) -> Vec<Vec<i64>> {
    let mut out: Vec<Vec<i64>> = (1..=sites).map(|a| vec![a]).collect();
    for dim in 2..=3 {
        let mut next = Vec::new();
        for s in out.iter().filter(|s| s.len() == dim - 1) {
            let used: i64 = s.iter().product();
            for c in 1..=sites / used {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next);
    }
    out
}

fn brick_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut checks) = (0.0f64, 0usize);
    let shapes = shapes_up_to(6);
    for shape in &shapes {
        let lat = LatticeSystem::qubits(shape).unwrap();
        for _ in 0..3 {
            let a = random_ah(lat.hilbert_dim(), &mut rng);
            let f = AlmostLocalDerivation::from_full(&lat, &a).map_err(|e| e.to_string())?;
            worst = worst.max(max_abs(&(f.assemble() - &a)));
            let again = AlmostLocalDerivation::from_full(&lat, &f.assemble()).map_err(|e| e.to_string())?;
            worst = worst.max(again.distance(&f));
            for (y, c) in &f.comps {
                for x in y.sub_bricks().into_iter().filter(|x| x != y) {
                    worst = worst.max(max_abs(&lat.partial_trace(c, y, &x).map_err(|e| e.to_string())?));
                    checks += 1;
                }
            }
        }
    }
    let msg = format!("{} shapes, {checks} sub-brick traces, max defect {worst:.2e}", shapes.len());
    if worst < 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn analytic_constants() -> Outcome {
    let mut worst_ratio = 0.0f64;
    for n in 1..=3usize {
        for side in [1i64, 2, 5, 10, 20, 40] {
            let lo = vec![0; n];
            let hi = vec![side; n];
            for j in [vec![q(0); n], vec![qr(side, 2); n], vec![qr(-7, 3); n], vec![q(side + 11); n]] {
                let s = brick_sum(&lo, &hi, &j);
                worst_ratio = worst_ratio.max(s / brick_sum_bound(n));
                if side <= 5 && n <= 2 {
                    let direct = brick_sum_direct(&lo, &hi, &j);
                    if (s - direct).abs() > 1e-12 * direct.max(1.0) {
                        return Err(format!("brick sum {s} disagrees with enumeration {direct}"));
                    }
                }
            }
        }
    }
    if worst_ratio >= 1.0 {
        return Err(format!("brick sum reaches {worst_ratio:.3} of its bound"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for (pairs, shape) in [(50, vec![5i64]), (50, vec![2, 2])] {
        let lat = LatticeSystem::qubits(&shape).unwrap();
        let n = shape.len();
        let c = commutator_bound_constant(n);
        for _ in 0..pairs {
            let f = random_local(&lat, &mut rng, 3);
            let g = random_local(&lat, &mut rng, 3);
            let comm = commutator(&f, &g);
            let u = Region::point(&lat.sites[rng.gen_range(0..lat.sites.len())]);
            let v = Region::point(&lat.sites[rng.gen_range(0..lat.sites.len())]);
            for k in 0..=4 {
                let kf = k as f64;
                let ext = kf + 4.0 * n as f64 + 4.0;
                let lhs = comm.seminorm(&u, kf).unwrap();
                let rhs = c * 3f64.powf(kf) * f.seminorm(&u, ext).unwrap() * g.seminorm(&v, ext).unwrap();
                if rhs > 0.0 {
                    worst = worst.max(lhs / rhs);
                }
                if lhs > rhs {
                    return Err(format!("commutator bound fails at k={k}: {lhs} > {rhs}"));
                }
            }
        }
    }
    Ok(format!("brick sums at most {worst_ratio:.3} of bound; 100 commutator pairs, worst ratio {worst:.2e}"))
}

fn tfim_state(shape: &[i64]) -> ExactState {
    let lat = LatticeSystem::qubits(shape).unwrap();
    ground_state(&HamiltonianDerivation::from_model(&lat, &SpinModel::tfim(&lat, 1.0, 1.5), 0.5).unwrap()).unwrap()
}

fn quasiadiabatic_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut count = 0;
    for (shape, samples) in [(vec![6i64], 17), (vec![7], 17), (vec![8], 16)] {
        let s = tfim_state(&shape);
        let d = s.lattice().hilbert_dim();
        for _ in 0..samples {
            let f = random_ah(d, &mut rng);
            let rebuilt = s.j_matrix(&f) - s.k_matrix(&s.h_apply(&f));
            worst = worst.max(max_abs(&(rebuilt - &f)));
            count += 1;
        }
    }
    let msg = format!("{count} random F on 6-8 site TFIM, max |F - J(F) + K([H,F])| = {worst:.2e}");
    if worst < 1e-10 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn positive_degree_ranks(h: &dyn PreCosheafHandle, n: usize) -> usize {
    augmented_homology(h, n).into_iter().filter(|(deg, _)| *deg > 0).map(|(_, r)| r).sum()
}

fn cech_acyclicity() -> Outcome {
    let covers = [
        Cover::planar_cones(&[[1, 0], [-1, 1], [-1, -1]]).unwrap(),
        Cover::planar_cones(&[[1, 0], [0, 1], [-1, 0], [0, -1]]).unwrap(),
    ];
    let mut lines = Vec::new();
    for cover in &covers {
        let n = cover.len();
        let gl = LatticeSystem::qubits(&[3, 3]).unwrap();
        let g = gauge_handle(&gl, cover, &lattice_center(&gl), q(1), 1);
        let dl = LatticeSystem::qubits(&[2, 2]).unwrap();
        let d = DerivationHandle::new(&dl, cover, &lattice_center(&dl), &qr(1, 2)).map_err(|e| e.to_string())?;
        let c = ConstantHandle { dim: 3 };
        let ranks = [positive_degree_ranks(&g, n), positive_degree_ranks(&d, n), positive_degree_ranks(&c, n)];
        if ranks.iter().any(|&r| r != 0) {
            return Err(format!("{n}-cone cover: positive-degree ranks {ranks:?}"));
        }
        lines.push(format!("{n}-cone: gauge/derivation/constant ranks 0"));
    }
    Ok(lines.join("; "))
}

fn desk_state(lat: &Arc<LatticeSystem>) -> ExactState {
    ground_state(&HamiltonianDerivation::from_model(lat, &SpinModel::xxz(lat, 1.0, 0.7, 0.35), 1.5).unwrap()).unwrap()
}

fn pairing_gap(a: &std::collections::BTreeMap<Vec<u32>, C64>, b: &std::collections::BTreeMap<Vec<u32>, C64>) -> f64 {
    a.keys()
        .chain(b.keys())
        .map(|k| (a.get(k).copied().unwrap_or_default() - b.get(k).copied().unwrap_or_default()).norm())
        .fold(0.0, f64::max)
}

fn mc_solver() -> Outcome {
    let lat = LatticeSystem::qubits(&[2, 3]).unwrap();
    let psi = desk_state(&lat);
    let sym = OnsiteSymmetry::u1_spin_half(&lat).unwrap();
    let cover = Cover::planar_cones(&[[1, 0], [-1, 1], [-1, -1]]).unwrap();
    let split = split_charge(&psi, &sym, &cover, &SplitOptions::default()).map_err(|e| e.to_string())?;
    let parts = split.matrices(0);
    let dim = parts[0].nrows();
    let charge = parts.iter().fold(Mat::zeros(dim, dim), |a, b| a + b);
    let d = build_cech_dgla(&cover, &ConstantHandle { dim: 1 }, u1_curvature(&charge), 2)
        .and_then(|d| d.with_splitting(first_order_from_split(&parts)))
        .map_err(|e| e.to_string())?;
    let p = solve_mc(&d).map_err(|e| e.to_string())?;
    if p.residual >= 1e-9 {
        return Err(format!("order-2 residual {:.2e}", p.residual));
    }
    let beta = fundamental_cocycle(&cover, 1).unwrap();
    let expect = |m: &Mat| psi.expect(m);
    let v0 = pair(&commutator_class(&d, &p), &beta, &d.nerve, &expect).map_err(|e| e.to_string())?;
    let proj = psi.projector();
    let rest = Mat::identity(dim, dim) - &proj;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut worst_residual = p.residual;
    for (edge, site_pair) in [(vec![0, 1], (0usize, 1usize)), (vec![1, 2], (2, 3)), (vec![0, 2], (4, 5))] {
        let (a, b) = site_pair;
        let mut x = Mat::zeros(dim, dim);
        let c = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        for s in 0..dim {
            let (ua, ub) = ((s >> (lat.sites.len() - 1 - a)) & 1, (s >> (lat.sites.len() - 1 - b)) & 1);
            if ua == 1 && ub == 0 {
                let t = s ^ (1 << (lat.sites.len() - 1 - a)) ^ (1 << (lat.sites.len() - 1 - b));
                x[(t, s)] += c;
                x[(s, t)] -= c.conj();
            }
        }
        if max_abs(&cechlat::lattice::commutator_mat(&x, &charge)) > 1e-12 {
            return Err("gauge generator does not conserve charge".into());
        }
        let x = &proj * &x * &proj + &rest * &x * &rest;
        let g = gauge_act(&d, &CechElement::single(edge, vec![1], x), &p).map_err(|e| e.to_string())?;
        worst_residual = worst_residual.max(g.residual);
        let v1 = pair(&commutator_class(&d, &g), &beta, &d.nerve, &expect).map_err(|e| e.to_string())?;
        worst = worst.max(pairing_gap(&v0, &v1));
    }
    let class_norm = commutator_class(&d, &p).norm();
    let msg = format!(
        "residual {:.2e}, |[p,p]| {class_norm:.2e}, gauge-transformed residual {worst_residual:.2e}, pairing change {worst:.2e}",
        p.residual
    );
    if worst_residual < 1e-9 && worst < 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn hall_invariances() -> Outcome {
    let lat = LatticeSystem::qubits(&[2, 3]).unwrap();
    let sym = OnsiteSymmetry::u1_spin_half(&lat).unwrap();
    let c3 = Cover::planar_cones(&[[1, 0], [-1, 1], [-1, -1]]).unwrap();
    let c6 = Cover::planar_cones(&[[1, 0], [1, 1], [0, 1], [-1, 0], [-1, -1], [0, -1]]).unwrap();
    let b3 = fundamental_cocycle(&c3, 1).unwrap();
    let b6 = fundamental_cocycle(&c6, 1).unwrap();
    let nv = build_nerve(&c3);
    let shifted = b3.add(&Cochain::unit(vec![1]).scale(&qr(3, 2)).add(&Cochain::unit(vec![2]).scale(&q(-2))).coboundary(&nv));
    let models = [
        ("product", SpinModel::zfield(&lat, -1.0), 1.0),
        ("xxz", SpinModel::xxz(&lat, 1.0, 0.7, 0.35), 0.05),
        ("xxz-easy-axis", SpinModel::xxz(&lat, 0.6, 1.2, 0.5), 0.05),
    ];
    let mut worst = [0.0f64; 3];
    for (name, model, gap) in models {
        let psi = HamiltonianDerivation::from_model(&lat, &model, gap)
            .and_then(|h| ground_state(&h))
            .map_err(|e| format!("{name}: {e}"))?;
        let s3 = split_charge(&psi, &sym, &c3, &SplitOptions::default()).map_err(|e| e.to_string())?;
        let s6 = split_charge(&psi, &sym, &c6, &SplitOptions::default()).map_err(|e| e.to_string())?;
        let v = hall_conductance(&psi, &s3, &c3, &b3, 2).map_err(|e| e.to_string())?.raw();
        let coh = hall_conductance(&psi, &s3, &c3, &shifted, 2).map_err(|e| e.to_string())?.raw();
        let fine = hall_conductance(&psi, &s6, &c6, &b6, 2).map_err(|e| e.to_string())?.raw();
        let flipped = hall_conductance(&psi, &s3, &c3, &b3.scale(&q(-1)), 2).map_err(|e| e.to_string())?.raw();
        if name == "product" && v.norm() >= 1e-10 {
            return Err(format!("product state gives {v}"));
        }
        if flipped != -v {
            return Err(format!("{name}: reversed orientation gives {flipped}, not {}", -v));
        }
        worst[0] = worst[0].max((v - coh).norm());
        worst[1] = worst[1].max((v - fine).norm());
        worst[2] = worst[2].max(v.norm());
    }
    let msg = format!(
        "cohomologous {:.2e}, 3 vs 6 cones {:.2e}, orientation exact, max |value| {:.2e} (zero at finite volume)",
        worst[0], worst[1], worst[2]
    );
    if worst[0] < 1e-9 && worst[1] < 1e-8 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn free_fermion() -> Outcome {
    let mut cherns = Vec::new();
    for m in [-1.0, 1.0, 3.0] {
        let c = chern_number(m, 48).map_err(|e| e.to_string())?;
        if (c - c.round()).abs() > 1e-6 {
            return Err(format!("Chern number {c} at m={m} is not an integer"));
        }
        cherns.push(c.round() as i64);
    }
    if cherns != [-1, 1, 0] {
        return Err(format!("Chern numbers {cherns:?} for m = -1, 1, 3"));
    }
    let neg = fermion_hall_oracle(16, -1.0, 48).map_err(|e| e.to_string())?;
    let pos = fermion_hall_oracle(16, 1.0, 48).map_err(|e| e.to_string())?;
    let (rn, rp) = (neg.ratio().unwrap(), pos.ratio().unwrap());
    let spread = (rn - rp).norm() / rn.norm().max(rp.norm());
    let flip = (neg.real_space() + pos.real_space()).norm() / pos.real_space().norm();
    let reference = 1.0 / (4.0 * std::f64::consts::PI);
    let msg = format!(
        "Chern -1/1/0; L=16 ratios {:.5}i and {:.5}i (spread {:.1e}, 1/4pi = {reference:.5}), sign flip defect {flip:.1e}",
        rn.im, rp.im, spread
    );
    if spread < 0.1 && flip < 0.1 && rn.norm() > 0.0 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn set(p: Polyhedron) -> SemilinearSet {
    SemilinearSet::from_polyhedron(p).unwrap()
}

fn union(dim: usize, ps: Vec<Polyhedron>) -> SemilinearSet {
    SemilinearSet::new(dim, ps).unwrap()
}

fn ray(dir: &[i64]) -> Polyhedron {
    let n = dir.len();
    let mut rows: Vec<(Vec<i64>, i64)> = Vec::new();
    let k = dir.iter().position(|&v| v != 0).unwrap();
    for i in 0..n {
        if i != k {
            let mut r = vec![0; n];
            r[i] = dir[k];
            r[k] = -dir[i];
            rows.push((r.clone(), 0));
            rows.push((r.iter().map(|v| -v).collect(), 0));
        }
    }
    let mut r = vec![0; n];
    r[k] = -dir[k].signum();
    rows.push((r, 0));
    let refs: Vec<(&[i64], i64)> = rows.iter().map(|(r, o)| (r.as_slice(), *o)).collect();
    Polyhedron::from_rows(n, &refs)
}

fn cone_family() -> Vec<SemilinearSet> {
    let rows = |n: usize, r: &[(&[i64], i64)]| set(Polyhedron::from_rows(n, r));
    vec![
        rows(2, &[(&[-1, 0], 0), (&[0, -1], 0)]),
        rows(2, &[(&[0, -1], 0)]),
        set(ray(&[1, 0])),
        set(sector2([1, 0], [1, 1])),
        rows(2, &[(&[-1, 0], -3), (&[0, -1], 2)]),
        union(2, vec![ray(&[1, 0]), ray(&[0, 1])]),
        set(sector2([0, 1], [-1, 1])),
        set(Polyhedron::boxed(&[q(0), q(0)], &[q(2), q(2)])),
        rows(3, &[(&[-1, 0, 0], 0), (&[0, -1, 0], 0), (&[0, 0, -1], 0)]),
        rows(3, &[(&[0, 0, -1], 0)]),
        set(ray(&[1, 0, 0])),
        set(sector3([1, 0, 0], [0, 1, 0])),
        set(sector3([0, 1, 0], [0, 0, 1])),
        rows(3, &[(&[-1, 0, 0], 0), (&[0, -1, 0], 0)]),
        rows(3, &[(&[-1, 0, 0], -1), (&[0, -1, 0], -1), (&[0, 0, -1], 5)]),
        rows(3, &[(&[1, 0, -1], 0), (&[-1, 0, -1], 0), (&[0, 1, -1], 0), (&[0, -1, -1], 0)]),
        rows(3, &[(&[0, 0, 1], 0), (&[0, 0, -1], 0)]),
        set(ray(&[1, 1, 1])),
        union(3, vec![ray(&[1, 0, 0]), ray(&[0, 1, 0]), ray(&[0, 0, 1])]),
        set(Polyhedron::point(&[q(0), q(0), q(0)])),
    ]
}

fn site_axioms() -> Outcome {
    let fam = cone_family();
    let n = fam.len();
    let same = |i: usize, j: usize| fam[i].dim == fam[j].dim;
    let mut leq = vec![vec![false; n]; n];
    for i in 0..n {
        for j in 0..n {
            if same(i, j) {
                leq[i][j] = fuzzy_leq(&fam[i], &fam[j]).0;
            }
        }
        if !leq[i][i] {
            return Err(format!("fixture {i} is not fuzzy-below itself"));
        }
    }
    let mut checks = 0usize;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if same(i, j) && same(j, k) && leq[i][j] && leq[j][k] {
                    checks += 1;
                    if !leq[i][k] {
                        return Err(format!("transitivity fails on fixtures {i}, {j}, {k}"));
                    }
                }
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            if !same(i, j) {
                continue;
            }
            let m = meet(&fam[i], &fam[j]);
            let jn = join(&fam[i], &fam[j]);
            let below = |a: &SemilinearSet, b: &SemilinearSet| fuzzy_leq(a, b).0;
            if !(below(&m, &fam[i]) && below(&m, &fam[j])) {
                return Err(format!("meet of {i}, {j} is not a lower bound"));
            }
            if !(below(&fam[i], &jn) && below(&fam[j], &jn)) {
                return Err(format!("join of {i}, {j} is not an upper bound"));
            }
            for k in (0..n).filter(|&k| same(i, k)) {
                if leq[k][i] && leq[k][j] && !below(&fam[k], &m) {
                    return Err(format!("fixture {k} is below {i} and {j} but not below their meet"));
                }
                if leq[i][k] && leq[j][k] && !below(&jn, &fam[k]) {
                    return Err(format!("fixture {k} is above {i} and {j} but not above their join"));
                }
                checks += 2;
            }
        }
    }
    if !fuzzy_iso(&fam[0], &fam[4]) || !fuzzy_iso(&fam[8], &fam[14]) {
        return Err("translated orthants are not fuzzy-isomorphic".into());
    }
    Ok(format!("{n} fixtures, {checks} order and universal-property checks"))
}

fn main() {
    let criteria: [(&str, f64, fn() -> Outcome); 8] = [
        ("brick algebra exactness", 60.0, brick_algebra),
        ("brick-sum and commutator constants", 120.0, analytic_constants),
        ("quasiadiabatic identity", 120.0, quasiadiabatic_identity),
        ("Cech acyclicity", 120.0, cech_acyclicity),
        ("MC solver and gauge-invariant pairing", 300.0, mc_solver),
        ("Hall pipeline invariances", 300.0, hall_invariances),
        ("free-fermion quantitative check", 180.0, free_fermion),
        ("geometry site axioms", 60.0, site_axioms),
    ];
    let mut failed = Vec::new();
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let (ok, detail) = match outcome {
            Ok(d) if secs < *limit => (true, d),
            Ok(d) => (false, format!("{d}; too slow")),
            Err(d) => (false, d),
        };
        println!("criterion {} [{}] {name}: {detail} ({secs:.1} s, limit {limit:.0} s)", i + 1, if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed.push(i + 1);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
