//! Exact rational linear algebra and linear programming.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::BTreeMap;

pub type Q = BigRational;

pub fn q(n: i64) -> Q {
    Q::from_integer(BigInt::from(n))
}

pub fn qr(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or_else(|| {
        // Very large numerators: divide in floating point.
        let n = x.numer().to_f64().unwrap_or(f64::NAN);
        let d = x.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Parses "p/q", integers, and finite decimals such as "-0.25".
pub fn parse_q(s: &str) -> Option<Q> {
    let s = s.trim();
    if let Ok(v) = s.parse::<Q>() {
        return Some(v);
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (ip, fp) = body.split_once('.')?;
    if ip.is_empty() && fp.is_empty() {
        return None;
    }
    if !ip.chars().chain(fp.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{}{}", ip, fp);
    let num: BigInt = digits.parse().ok()?;
    let den = num_traits::pow(BigInt::from(10), fp.len());
    let v = Q::new(num, den);
    Some(if neg { -v } else { v })
}

pub fn fmt_q(x: &Q) -> String {
    if x.is_integer() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

pub fn dot(a: &[Q], b: &[Q]) -> Q {
    a.iter().zip(b).fold(Q::zero(), |acc, (x, y)| acc + x * y)
}

/// Reduced row echelon form in place; returns pivot columns.
pub fn rref(m: &mut [Vec<Q>]) -> Vec<usize> {
    let rows = m.len();
    if rows == 0 {
        return vec![];
    }
    let cols = m[0].len();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let inv = m[r][c].recip();
        for v in m[r].iter_mut() {
            *v = &*v * &inv;
        }
        for i in 0..rows {
            if i != r && !m[i][c].is_zero() {
                let f = m[i][c].clone();
                for j in 0..cols {
                    if !m[r][j].is_zero() {
                        let t = &f * &m[r][j];
                        m[i][j] -= t;
                    }
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

pub fn rank(m: &[Vec<Q>]) -> usize {
    let mut a = m.to_vec();
    rref(&mut a).len()
}

/// Basis of {x : m x = 0}, one vector per free column, in column order.
pub fn nullspace(m: &[Vec<Q>], cols: usize) -> Vec<Vec<Q>> {
    let mut a = m.to_vec();
    let pivots = rref(&mut a);
    let mut basis = Vec::new();
    for free in (0..cols).filter(|c| !pivots.contains(c)) {
        let mut v = vec![Q::zero(); cols];
        v[free] = Q::one();
        for (r, &pc) in pivots.iter().enumerate() {
            v[pc] = -a[r][free].clone();
        }
        basis.push(v);
    }
    basis
}

/// Some solution of m x = b, or None when inconsistent.
pub fn solve(m: &[Vec<Q>], b: &[Q], cols: usize) -> Option<Vec<Q>> {
    let mut a: Vec<Vec<Q>> = m
        .iter()
        .zip(b)
        .map(|(row, bi)| {
            let mut r = row.clone();
            r.push(bi.clone());
            r
        })
        .collect();
    let pivots = rref(&mut a);
    if pivots.contains(&cols) {
        return None;
    }
    let mut x = vec![Q::zero(); cols];
    for (r, &pc) in pivots.iter().enumerate() {
        x[pc] = a[r][cols].clone();
    }
    Some(x)
}

/// Rank of a sparse matrix given by rows, exact.
pub fn sparse_rank(rows: Vec<BTreeMap<usize, Q>>) -> usize {
    // pivot column -> reduced row with that leading column
    let mut pivots: BTreeMap<usize, BTreeMap<usize, Q>> = BTreeMap::new();
    for mut row in rows {
        row.retain(|_, v| !v.is_zero());
        while let Some((&lead, _)) = row.iter().next() {
            match pivots.get(&lead) {
                Some(prow) => {
                    let f = &row[&lead] / &prow[&lead];
                    for (c, v) in prow {
                        let e = row.entry(*c).or_insert_with(Q::zero);
                        *e -= &f * v;
                        if e.is_zero() {
                            row.remove(c);
                        }
                    }
                }
                None => {
                    pivots.insert(lead, row);
                    break;
                }
            }
        }
    }
    pivots.len()
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Infeasible,
    Unbounded,
    Optimal { value: Q, x: Vec<Q> },
}

/// Maximizes `c·x` over `a x <= b` with free variables, by two-phase
/// simplex under Bland's rule.
pub fn maximize(a: &[Vec<Q>], b: &[Q], c: &[Q]) -> LpOutcome {
    let n = c.len();
    let m = a.len();
    let negs: Vec<usize> = (0..m).filter(|&i| b[i].is_negative()).collect();
    let k = negs.len();
    let width = 2 * n + m + k;
    let mut t: Vec<Vec<Q>> = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let mut art = 0;
    for i in 0..m {
        let mut row = vec![Q::zero(); width + 1];
        let sign = if b[i].is_negative() { -Q::one() } else { Q::one() };
        for j in 0..n {
            row[j] = &sign * &a[i][j];
            row[n + j] = -&row[j];
        }
        row[2 * n + i] = sign.clone();
        row[width] = &sign * &b[i];
        if b[i].is_negative() {
            row[2 * n + m + art] = Q::one();
            basis.push(2 * n + m + art);
            art += 1;
        } else {
            basis.push(2 * n + i);
        }
        t.push(row);
    }
    let allowed_all = vec![true; width];
    if k > 0 {
        let mut cost = vec![Q::zero(); width];
        for v in cost.iter_mut().skip(2 * n + m) {
            *v = -Q::one();
        }
        run_simplex(&mut t, &mut basis, &cost, &allowed_all);
        let val = objective(&t, &basis, &cost);
        if val.is_negative() {
            return LpOutcome::Infeasible;
        }
        // Drive zero-level artificials out of the basis.
        for r in 0..m {
            if basis[r] >= 2 * n + m {
                if let Some(j) = (0..2 * n + m).find(|&j| !t[r][j].is_zero()) {
                    pivot(&mut t, &mut basis, r, j);
                }
            }
        }
    }
    let mut allowed = vec![true; width];
    for v in allowed.iter_mut().skip(2 * n + m) {
        *v = false;
    }
    let mut cost = vec![Q::zero(); width];
    for j in 0..n {
        cost[j] = c[j].clone();
        cost[n + j] = -c[j].clone();
    }
    if !run_simplex(&mut t, &mut basis, &cost, &allowed) {
        return LpOutcome::Unbounded;
    }
    let mut full = vec![Q::zero(); width];
    for (r, &bv) in basis.iter().enumerate() {
        full[bv] = t[r][width].clone();
    }
    let x: Vec<Q> = (0..n).map(|j| &full[j] - &full[n + j]).collect();
    LpOutcome::Optimal { value: dot(c, &x), x }
}

fn objective(t: &[Vec<Q>], basis: &[usize], cost: &[Q]) -> Q {
    let w = t.first().map_or(0, |r| r.len() - 1);
    basis
        .iter()
        .enumerate()
        .fold(Q::zero(), |acc, (r, &bv)| acc + &cost[bv] * &t[r][w])
}

fn pivot(t: &mut [Vec<Q>], basis: &mut [usize], r: usize, j: usize) {
    let inv = t[r][j].recip();
    for v in t[r].iter_mut() {
        if !v.is_zero() {
            *v = &*v * &inv;
        }
    }
    let prow = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i != r && !row[j].is_zero() {
            let f = row[j].clone();
            for (x, p) in row.iter_mut().zip(&prow) {
                if !p.is_zero() {
                    *x -= &f * p;
                }
            }
        }
    }
    basis[r] = j;
}

/// Returns false when unbounded.
fn run_simplex(t: &mut [Vec<Q>], basis: &mut [usize], cost: &[Q], allowed: &[bool]) -> bool {
    let m = t.len();
    if m == 0 {
        return cost.iter().zip(allowed).all(|(c, &ok)| !ok || !c.is_positive());
    }
    let w = t[0].len() - 1;
    loop {
        let mut entering = None;
        for j in 0..w {
            if !allowed[j] || basis.contains(&j) {
                continue;
            }
            let mut d = cost[j].clone();
            for r in 0..m {
                if !t[r][j].is_zero() {
                    d -= &cost[basis[r]] * &t[r][j];
                }
            }
            if d.is_positive() {
                entering = Some(j);
                break;
            }
        }
        let Some(j) = entering else { return true };
        let mut leave: Option<(usize, Q)> = None;
        for r in 0..m {
            if t[r][j].is_positive() {
                let ratio = &t[r][w] / &t[r][j];
                let better = match &leave {
                    None => true,
                    Some((lr, lv)) => ratio < *lv || (ratio == *lv && basis[r] < basis[*lr]),
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((r, _)) = leave else { return false };
        pivot(t, basis, r, j);
    }
}

/// Decides whether `{x : le_a x <= le_b, lt_a x < lt_b}` is nonempty and
/// returns a point of it. Strict rows get a shared slack `s` which is
/// maximized (capped at 1); the set is nonempty iff the optimum is positive.
pub fn strictly_feasible(
    le_a: &[Vec<Q>],
    le_b: &[Q],
    lt_a: &[Vec<Q>],
    lt_b: &[Q],
    n: usize,
) -> Option<Vec<Q>> {
    if lt_a.is_empty() {
        return match maximize(le_a, le_b, &vec![Q::zero(); n]) {
            LpOutcome::Optimal { x, .. } => Some(x),
            _ => None,
        };
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (row, bi) in le_a.iter().zip(le_b) {
        let mut r = row.clone();
        r.push(Q::zero());
        a.push(r);
        b.push(bi.clone());
    }
    for (row, bi) in lt_a.iter().zip(lt_b) {
        let mut r = row.clone();
        r.push(Q::one());
        a.push(r);
        b.push(bi.clone());
    }
    let mut cap = vec![Q::zero(); n + 1];
    cap[n] = Q::one();
    a.push(cap.clone());
    b.push(Q::one());
    match maximize(&a, &b, &cap) {
        LpOutcome::Optimal { value, mut x } if value.is_positive() => {
            x.pop();
            Some(x)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert_eq!(parse_q("3/6"), Some(qr(1, 2)));
        assert_eq!(parse_q("-0.25"), Some(qr(-1, 4)));
        assert_eq!(parse_q("7"), Some(q(7)));
        assert_eq!(parse_q("x"), None);
        assert_eq!(fmt_q(&qr(-2, 4)), "-1/2");
    }

    #[test]
    fn lp_box() {
        // max x + y, x <= 2, y <= 3, -x - y <= 10
        let a = vec![vec![q(1), q(0)], vec![q(0), q(1)], vec![q(-1), q(-1)]];
        let b = vec![q(2), q(3), q(10)];
        match maximize(&a, &b, &[q(1), q(1)]) {
            LpOutcome::Optimal { value, .. } => assert_eq!(value, q(5)),
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn lp_negative_rhs_and_unbounded() {
        // x >= 3 written as -x <= -3
        let a = vec![vec![q(-1)]];
        assert_eq!(maximize(&a, &[q(-3)], &[q(1)]), LpOutcome::Unbounded);
        match maximize(&a, &[q(-3)], &[q(-1)]) {
            LpOutcome::Optimal { value, .. } => assert_eq!(value, q(-3)),
            o => panic!("{o:?}"),
        }
        let a = vec![vec![q(1)], vec![q(-1)]];
        assert_eq!(maximize(&a, &[q(1), q(-2)], &[q(0)]), LpOutcome::Infeasible);
    }

    #[test]
    fn strict_rows() {
        // x <= 0 and x > 0 is empty; x <= 0 and x > -1 is not
        let le = vec![vec![q(1)]];
        assert!(strictly_feasible(&le, &[q(0)], &[vec![q(-1)]], &[q(0)], 1).is_none());
        let p = strictly_feasible(&le, &[q(0)], &[vec![q(-1)]], &[q(1)], 1).unwrap();
        assert!(p[0] <= q(0) && p[0] > q(-1));
    }

    #[test]
    fn nullspace_and_rank() {
        let m = vec![vec![q(1), q(1), q(0)], vec![q(2), q(2), q(0)]];
        assert_eq!(rank(&m), 1);
        let ns = nullspace(&m, 3);
        assert_eq!(ns.len(), 2);
        for v in &ns {
            assert!(dot(&m[0], v).is_zero());
        }
        let rows: Vec<BTreeMap<usize, Q>> = m
            .iter()
            .map(|r| r.iter().cloned().enumerate().filter(|(_, v)| !v.is_zero()).collect())
            .collect();
        assert_eq!(sparse_rank(rows), 1);
    }

    #[test]
    fn solve_consistent() {
        let m = vec![vec![q(1), q(2)], vec![q(3), q(4)]];
        let x = solve(&m, &[q(5), q(6)], 2).unwrap();
        assert_eq!(dot(&m[0], &x), q(5));
        assert_eq!(dot(&m[1], &x), q(6));
        let m = vec![vec![q(1), q(1)], vec![q(1), q(1)]];
        assert!(solve(&m, &[q(1), q(2)], 2).is_none());
    }
}
