//! The configuration LP: patterns, exact simplex, column generation, rounding.

use num_traits::{One, Signed, Zero};

use crate::num::{qu, Q};

/// Sparse pattern: `(width index, count)` sorted by index.
pub type Pattern = Vec<(usize, u32)>;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("simplex exceeded {0} pivots")]
    PivotLimit(usize),
    #[error("width {0} does not fit in a level")]
    TooWide(usize),
}

pub fn pattern_width(p: &Pattern, widths: &[Q]) -> Q {
    p.iter().map(|(i, n)| &widths[*i] * qu(*n as u64)).sum()
}

pub fn pattern_len(p: &Pattern) -> u32 {
    p.iter().map(|(_, n)| n).sum()
}

pub fn pattern_fits(p: &Pattern, widths: &[Q], max_items: u32) -> bool {
    pattern_len(p) <= max_items && pattern_width(p, widths) <= Q::one()
}

pub fn coeff(p: &Pattern, i: usize) -> u32 {
    p.iter().find(|(j, _)| *j == i).map_or(0, |(_, n)| *n)
}

/// All feasible patterns, including the empty one.
pub fn enumerate_patterns(widths: &[Q], max_items: u32) -> Vec<Pattern> {
    fn rec(i: usize, widths: &[Q], left_n: u32, left_w: Q, cur: &mut Pattern, out: &mut Vec<Pattern>) {
        if i == widths.len() {
            out.push(cur.clone());
            return;
        }
        rec(i + 1, widths, left_n, left_w.clone(), cur, out);
        let mut n = 1;
        let mut used = widths[i].clone();
        while n <= left_n && used <= left_w {
            cur.push((i, n));
            rec(i + 1, widths, left_n - n, &left_w - &used, cur, out);
            cur.pop();
            n += 1;
            used += &widths[i];
        }
    }
    let mut out = Vec::new();
    rec(0, widths, max_items, Q::one(), &mut Vec::new(), &mut out);
    out.sort();
    out
}

/// Dense exact simplex for `min c.x` subject to `A x >= b`, `x >= 0`, Bland's rule.
pub fn simplex_ge(c: &[Q], a: &[Vec<Q>], b: &[Q]) -> Result<(Vec<Q>, Q), LpError> {
    let m = a.len();
    let n = c.len();
    // Columns: x (n), surplus (m), artificial (m).
    let cols = n + 2 * m;
    let mut t: Vec<Vec<Q>> = Vec::with_capacity(m);
    let mut basis = vec![0usize; m];
    for i in 0..m {
        let mut row = vec![Q::zero(); cols + 1];
        let neg = b[i].is_negative();
        let sgn = if neg { -Q::one() } else { Q::one() };
        for j in 0..n {
            row[j] = &a[i][j] * &sgn;
        }
        row[n + i] = -sgn.clone();
        row[cols] = &b[i] * &sgn;
        if neg {
            basis[i] = n + i;
        } else {
            row[n + m + i] = Q::one();
            basis[i] = n + m + i;
        }
        t.push(row);
    }
    let art: Vec<bool> = (0..cols).map(|j| j >= n + m).collect();
    let phase1: Vec<Q> = (0..cols).map(|j| if art[j] { Q::one() } else { Q::zero() }).collect();
    run_bland(&mut t, &mut basis, &phase1, &vec![true; cols])?;
    let infeas: Q = basis.iter().enumerate().filter(|(_, bj)| art[**bj]).map(|(i, _)| t[i][cols].clone()).sum();
    if infeas.is_positive() {
        return Err(LpError::Infeasible);
    }
    // Pivot remaining zero-valued artificials out where possible.
    for i in 0..m {
        if art[basis[i]] {
            if let Some(j) = (0..n + m).find(|&j| !t[i][j].is_zero()) {
                pivot(&mut t, &mut basis, i, j);
            }
        }
    }
    let cost: Vec<Q> = (0..cols).map(|j| if j < n { c[j].clone() } else { Q::zero() }).collect();
    let allowed: Vec<bool> = (0..cols).map(|j| !art[j]).collect();
    run_bland(&mut t, &mut basis, &cost, &allowed)?;
    let mut x = vec![Q::zero(); n];
    for (i, bj) in basis.iter().enumerate() {
        if *bj < n {
            x[*bj] = t[i][cols].clone();
        }
    }
    let val = x.iter().zip(c).map(|(a, b)| a * b).sum();
    Ok((x, val))
}

fn pivot(t: &mut [Vec<Q>], basis: &mut [usize], r: usize, j: usize) {
    let p = t[r][j].clone();
    for v in t[r].iter_mut() {
        *v /= &p;
    }
    let prow = t[r].clone();
    for (i, row) in t.iter_mut().enumerate() {
        if i == r || row[j].is_zero() {
            continue;
        }
        let f = row[j].clone();
        for (v, pv) in row.iter_mut().zip(&prow) {
            if !pv.is_zero() {
                *v -= &f * pv;
            }
        }
    }
    basis[r] = j;
}

fn run_bland(t: &mut [Vec<Q>], basis: &mut [usize], cost: &[Q], allowed: &[bool]) -> Result<(), LpError> {
    let m = t.len();
    let cols = cost.len();
    let limit = 50_000;
    for _ in 0..limit {
        let entering = (0..cols).find(|&j| {
            if !allowed[j] || basis.contains(&j) {
                return false;
            }
            let mut rc = cost[j].clone();
            for i in 0..m {
                if !t[i][j].is_zero() {
                    rc -= &cost[basis[i]] * &t[i][j];
                }
            }
            rc.is_negative()
        });
        let Some(j) = entering else { return Ok(()) };
        let mut best: Option<(Q, usize, usize)> = None;
        for i in 0..m {
            if t[i][j].is_positive() {
                let ratio = &t[i][cols] / &t[i][j];
                let better = match &best {
                    None => true,
                    Some((r, _, bv)) => ratio < *r || (ratio == *r && basis[i] < *bv),
                };
                if better {
                    best = Some((ratio, i, basis[i]));
                }
            }
        }
        let Some((_, r, _)) = best else { return Err(LpError::Infeasible) };
        pivot(t, basis, r, j);
    }
    Err(LpError::PivotLimit(limit))
}

/// A basic solution of the configuration LP.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LpSolution {
    pub x: Vec<(Pattern, Q)>,
    pub value: Q,
    pub pivots: usize,
}

impl LpSolution {
    pub fn nnz(&self) -> usize {
        self.x.iter().filter(|(_, v)| v.is_positive()).count()
    }

    pub fn coverage(&self, i: usize) -> Q {
        self.x.iter().map(|(p, v)| v * qu(coeff(p, i) as u64)).sum()
    }
}

/// Largest count of width `w` alone in a level.
fn single_cap(w: &Q, max_items: u32) -> u32 {
    let mut n = 0;
    let mut used = Q::zero();
    while n < max_items && &used + w <= Q::one() {
        used += w;
        n += 1;
    }
    n
}

/// Column source for the revised simplex.
pub trait Pricer {
    /// A pattern with `pi . a > 1`, preferring the largest value.
    fn entering(&self, pi: &[Q]) -> Option<Pattern>;
}

/// Prices over every feasible pattern by bounded depth-first search.
pub struct KnapsackPricer<'a> {
    pub widths: &'a [Q],
    pub max_items: u32,
}

impl Pricer for KnapsackPricer<'_> {
    fn entering(&self, pi: &[Q]) -> Option<Pattern> {
        let mut cand: Vec<(Q, usize)> = (0..pi.len()).filter(|&i| pi[i].is_positive()).map(|i| (&pi[i] / &self.widths[i], i)).collect();
        if cand.is_empty() {
            return None;
        }
        // Best price per width first, so the fractional bound below is tight.
        cand.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let (ratio, cand): (Vec<Q>, Vec<usize>) = cand.into_iter().unzip();
        // Suffix maxima of price and price per width for pruning.
        let k = cand.len();
        let mut smax = vec![Q::zero(); k + 1];
        let mut rmax = vec![Q::zero(); k + 1];
        for j in (0..k).rev() {
            smax[j] = if pi[cand[j]] > smax[j + 1] { pi[cand[j]].clone() } else { smax[j + 1].clone() };
            rmax[j] = if ratio[j] > rmax[j + 1] { ratio[j].clone() } else { rmax[j + 1].clone() };
        }
        struct S<'b> {
            cand: &'b [usize],
            pi: &'b [Q],
            w: &'b [Q],
            smax: &'b [Q],
            rmax: &'b [Q],
            best: Q,
            best_p: Option<Pattern>,
        }
        fn rec(s: &mut S, j: usize, left_n: u32, left_w: &Q, val: &Q, cur: &mut Pattern) {
            if *val > s.best {
                s.best = val.clone();
                let mut p = cur.clone();
                p.sort_unstable();
                s.best_p = Some(p);
            }
            if j == s.cand.len() || left_n == 0 {
                return;
            }
            let b1 = &s.smax[j] * qu(left_n as u64);
            let b2 = &s.rmax[j] * left_w;
            let bound = if b1 < b2 { b1 } else { b2 };
            if val + bound <= s.best {
                return;
            }
            let i = s.cand[j];
            let mut n = single_cap(&s.w[i], left_n);
            while n > 0 {
                let used = &s.w[i] * qu(n as u64);
                if used <= *left_w {
                    cur.push((i, n));
                    let v = val + &s.pi[i] * qu(n as u64);
                    rec(s, j + 1, left_n - n, &(left_w - &used), &v, cur);
                    cur.pop();
                }
                n -= 1;
            }
            rec(s, j + 1, left_n, left_w, val, cur);
        }
        let mut s = S { cand: &cand, pi, w: self.widths, smax: &smax, rmax: &rmax, best: Q::one(), best_p: None };
        rec(&mut s, 0, self.max_items, &Q::one(), &Q::zero(), &mut Vec::new());
        s.best_p
    }
}

/// Prices over an explicit pattern list.
pub struct ListPricer<'a> {
    pub patterns: &'a [Pattern],
}

impl Pricer for ListPricer<'_> {
    fn entering(&self, pi: &[Q]) -> Option<Pattern> {
        let mut best = Q::one();
        let mut out = None;
        for p in self.patterns {
            let v: Q = p.iter().map(|(i, n)| &pi[*i] * qu(*n as u64)).sum();
            if v > best {
                best = v;
                out = Some(p.clone());
            }
        }
        out
    }
}

/// Revised simplex with column generation for `min sum x` s.t. `sum_P a(P,i) x_P >= b_i`.
pub fn solve_config_lp(widths: &[Q], b: &[u64], max_items: u32, pricer: &dyn Pricer) -> Result<LpSolution, LpError> {
    let m = widths.len();
    if m == 0 || b.iter().all(|v| *v == 0) {
        return Ok(LpSolution::default());
    }
    // Basic variables: Some(pattern) or None for a surplus column (index in `surplus_of`).
    #[derive(Clone)]
    enum Var {
        Pat(Pattern),
        Surplus(usize),
    }
    let mut basis: Vec<Var> = Vec::with_capacity(m);
    let mut binv: Vec<Vec<Q>> = vec![vec![Q::zero(); m]; m];
    let mut xb: Vec<Q> = Vec::with_capacity(m);
    for i in 0..m {
        let cap = single_cap(&widths[i], max_items);
        if cap == 0 {
            return Err(LpError::TooWide(i));
        }
        basis.push(Var::Pat(vec![(i, cap)]));
        binv[i][i] = Q::new(1.into(), (cap as i64).into());
        xb.push(Q::new((b[i] as i64).into(), (cap as i64).into()));
    }
    let col_of = |v: &Var| -> Vec<Q> {
        let mut col = vec![Q::zero(); m];
        match v {
            Var::Pat(p) => p.iter().for_each(|(i, n)| col[*i] = qu(*n as u64)),
            Var::Surplus(i) => col[*i] = -Q::one(),
        }
        col
    };
    let cost = |v: &Var| match v {
        Var::Pat(_) => Q::one(),
        Var::Surplus(_) => Q::zero(),
    };
    let limit = 20_000;
    let mut pivots = 0;
    loop {
        if pivots > limit {
            return Err(LpError::PivotLimit(limit));
        }
        // pi = c_B B^{-1}
        let mut pi = vec![Q::zero(); m];
        for (r, v) in basis.iter().enumerate() {
            let c = cost(v);
            if c.is_zero() {
                continue;
            }
            for (i, p) in pi.iter_mut().enumerate() {
                if !binv[r][i].is_zero() {
                    *p += &c * &binv[r][i];
                }
            }
        }
        let in_basis_surplus = |i: usize| basis.iter().any(|v| matches!(v, Var::Surplus(j) if *j == i));
        let entering = match (0..m).find(|&i| pi[i].is_negative() && !in_basis_surplus(i)) {
            Some(i) => Var::Surplus(i),
            None => match pricer.entering(&pi) {
                Some(p) => Var::Pat(p),
                None => break,
            },
        };
        let a = col_of(&entering);
        let d: Vec<Q> = (0..m).map(|r| binv[r].iter().zip(&a).filter(|(_, y)| !y.is_zero()).map(|(x, y)| x * y).sum()).collect();
        let mut leave: Option<(Q, usize)> = None;
        for r in 0..m {
            if d[r].is_positive() {
                let ratio = &xb[r] / &d[r];
                if leave.as_ref().is_none_or(|(best, _)| ratio < *best) {
                    leave = Some((ratio, r));
                }
            }
        }
        let Some((theta, r)) = leave else { return Err(LpError::Infeasible) };
        for i in 0..m {
            if i != r && !d[i].is_zero() {
                let delta = &theta * &d[i];
                xb[i] -= delta;
            }
        }
        xb[r] = theta;
        let piv = d[r].clone();
        let prow: Vec<Q> = binv[r].iter().map(|v| v / &piv).collect();
        for i in 0..m {
            if i != r && !d[i].is_zero() {
                let f = d[i].clone();
                for (v, pv) in binv[i].iter_mut().zip(&prow) {
                    if !pv.is_zero() {
                        *v -= &f * pv;
                    }
                }
            }
        }
        binv[r] = prow;
        basis[r] = entering;
        pivots += 1;
    }
    let mut x: Vec<(Pattern, Q)> = Vec::new();
    for (v, val) in basis.iter().zip(&xb) {
        if let Var::Pat(p) = v {
            if val.is_positive() {
                match x.iter_mut().find(|(q, _)| q == p) {
                    Some((_, acc)) => *acc += val,
                    None => x.push((p.clone(), val.clone())),
                }
            }
        }
    }
    x.sort();
    let value = x.iter().map(|(_, v)| v.clone()).sum();
    Ok(LpSolution { x, value, pivots })
}

/// Solves the LP over all feasible patterns.
pub fn solve_lp(widths: &[Q], b: &[u64], max_items: u32) -> Result<LpSolution, LpError> {
    solve_config_lp(widths, b, max_items, &KnapsackPricer { widths, max_items })
}

/// Rounds every nonzero entry up.
pub fn round_to_integral(x: &[(Pattern, Q)]) -> Vec<(Pattern, u64)> {
    x.iter().filter(|(_, v)| v.is_positive()).map(|(p, v)| (p.clone(), crate::num::ceil_i64(v) as u64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::{q, qi};

    #[test]
    fn enumerate_examples() {
        assert_eq!(enumerate_patterns(&[q(3, 5)], 4).len(), 2);
        assert_eq!(enumerate_patterns(&[q(3, 10)], 4).len(), 4);
        assert_eq!(enumerate_patterns(&[], 4), vec![Vec::<(usize, u32)>::new()]);
    }

    #[test]
    fn solve_examples() {
        let s = solve_lp(&[q(3, 5)], &[0], 4).unwrap();
        assert_eq!(s.value, Q::zero());
        let s = solve_lp(&[q(3, 5)], &[3], 4).unwrap();
        assert_eq!(s.value, qi(3));
        let s = solve_lp(&[q(1, 2), q(1, 2)], &[2, 2], 4).unwrap();
        assert_eq!(s.value, qi(2));
        assert!(s.nnz() <= 2);
        let s = solve_lp(&[q(2, 5), q(3, 10)], &[3, 5], 4).unwrap();
        assert!(s.coverage(0) >= qi(3) && s.coverage(1) >= qi(5));
    }

    #[test]
    fn dense_simplex_matches() {
        // min x1 + x2 s.t. 2x1 + x2 >= 4, x1 + 3x2 >= 6
        let a = vec![vec![qi(2), qi(1)], vec![qi(1), qi(3)]];
        let (x, v) = simplex_ge(&[qi(1), qi(1)], &a, &[qi(4), qi(6)]).unwrap();
        assert_eq!(v, q(14, 5));
        assert_eq!(x, vec![q(6, 5), q(8, 5)]);
        let a = vec![vec![qi(-1)]];
        assert_eq!(simplex_ge(&[qi(1)], &a, &[qi(1)]), Err(LpError::Infeasible));
    }

    #[test]
    fn rounding_examples() {
        let x = vec![(vec![(0, 1)], q(6, 5)), (vec![(1, 1)], q(3, 10))];
        assert_eq!(round_to_integral(&x), vec![(vec![(0, 1)], 2), (vec![(1, 1)], 1)]);
    }
}

/// Minimizes `sum x` over the given columns subject to `A x >= b` and `0 <= x <= upper`.
/// Requires `A upper >= b`; starts from `x = upper` and uses Bland's rule.
pub fn solve_bounded(cols: &[Pattern], upper: &[Q], b: &[Q], m: usize) -> Result<Vec<Q>, LpError> {
    let n = cols.len();
    #[derive(Clone, Copy, PartialEq, Eq)]
    enum St {
        Lower,
        Upper,
        Basic(usize),
    }
    // Variables 0..n are patterns, n..n+m surpluses.
    let col = |j: usize| -> Vec<Q> {
        let mut v = vec![Q::zero(); m];
        if j < n {
            cols[j].iter().for_each(|(i, c)| v[*i] = qu(*c as u64));
        } else {
            v[j - n] = -Q::one();
        }
        v
    };
    let cost = |j: usize| if j < n { Q::one() } else { Q::zero() };
    let up = |j: usize| if j < n { Some(upper[j].clone()) } else { None };
    let mut st: Vec<St> = (0..n + m).map(|j| if j < n { St::Upper } else { St::Basic(j - n) }).collect();
    let mut basis: Vec<usize> = (n..n + m).collect();
    let mut binv: Vec<Vec<Q>> = (0..m).map(|i| (0..m).map(|k| if i == k { -Q::one() } else { Q::zero() }).collect()).collect();
    let mut xb: Vec<Q> = (0..m)
        .map(|i| {
            let cov: Q = (0..n).map(|j| &upper[j] * qu(coeff(&cols[j], i) as u64)).sum();
            cov - &b[i]
        })
        .collect();
    if xb.iter().any(|v| v.is_negative()) {
        return Err(LpError::Infeasible);
    }
    let limit = 50_000;
    for _ in 0..limit {
        let mut pi = vec![Q::zero(); m];
        for (r, &bj) in basis.iter().enumerate() {
            let c = cost(bj);
            if !c.is_zero() {
                for i in 0..m {
                    if !binv[r][i].is_zero() {
                        pi[i] += &c * &binv[r][i];
                    }
                }
            }
        }
        let entering = (0..n + m).find_map(|j| {
            let a = col(j);
            let d = cost(j) - a.iter().zip(&pi).filter(|(x, _)| !x.is_zero()).map(|(x, p)| x * p).sum::<Q>();
            match st[j] {
                St::Lower if d.is_negative() => Some((j, Q::one())),
                St::Upper if d.is_positive() => Some((j, -Q::one())),
                _ => None,
            }
        });
        let Some((j, dir)) = entering else {
            let mut x = vec![Q::zero(); n];
            for (k, s) in st.iter().enumerate().take(n) {
                x[k] = match s {
                    St::Lower => Q::zero(),
                    St::Upper => upper[k].clone(),
                    St::Basic(r) => xb[*r].clone(),
                };
            }
            return Ok(x);
        };
        let a = col(j);
        let alpha: Vec<Q> = (0..m).map(|r| binv[r].iter().zip(&a).filter(|(_, y)| !y.is_zero()).map(|(x, y)| x * y).sum()).collect();
        // (step, leaving row or None for a bound flip, leaving goes to upper)
        let mut best: Option<(Q, Option<usize>, bool, usize)> = up(j).map(|u| (u, None, false, j));
        for r in 0..m {
            let rate = -(&dir * &alpha[r]);
            let cand = if rate.is_negative() {
                Some((&xb[r] / -&rate, false))
            } else if rate.is_positive() {
                up(basis[r]).map(|u| ((u - &xb[r]) / &rate, true))
            } else {
                None
            };
            if let Some((t, to_up)) = cand {
                let better = match &best {
                    None => true,
                    Some((bt, _, _, bidx)) => t < *bt || (t == *bt && basis[r] < *bidx),
                };
                if better {
                    best = Some((t, Some(r), to_up, basis[r]));
                }
            }
        }
        let Some((t, leave, to_up, _)) = best else { return Err(LpError::Infeasible) };
        for r in 0..m {
            if !alpha[r].is_zero() {
                let delta = &dir * &t * &alpha[r];
                xb[r] -= delta;
            }
        }
        match leave {
            None => {
                st[j] = if st[j] == St::Lower { St::Upper } else { St::Lower };
            }
            Some(r) => {
                let start = if st[j] == St::Upper { upper[j].clone() } else { Q::zero() };
                let old = basis[r];
                st[old] = if to_up { St::Upper } else { St::Lower };
                xb[r] = start + &dir * &t;
                let piv = alpha[r].clone();
                let prow: Vec<Q> = binv[r].iter().map(|v| v / &piv).collect();
                for i in 0..m {
                    if i != r && !alpha[i].is_zero() {
                        let f = alpha[i].clone();
                        for (v, pv) in binv[i].iter_mut().zip(&prow) {
                            if !pv.is_zero() {
                                *v -= &f * pv;
                            }
                        }
                    }
                }
                binv[r] = prow;
                basis[r] = j;
                st[j] = St::Basic(r);
            }
        }
    }
    Err(LpError::PivotLimit(limit))
}

#[cfg(test)]
mod bounded_tests {
    use super::*;
    use crate::num::{q, qi};

    #[test]
    fn bounded_respects_upper() {
        // Two groups; patterns {0:1},{1:1},{0:1,1:1}; demand (2,2).
        let cols = vec![vec![(0, 1)], vec![(1, 1)], vec![(0, 1), (1, 1)]];
        let x = solve_bounded(&cols, &[qi(2), qi(2), qi(1)], &[qi(2), qi(2)], 2).unwrap();
        let total: Q = x.iter().cloned().sum();
        assert_eq!(total, qi(3));
        assert!(x[2] <= qi(1));
        let x = solve_bounded(&cols, &[qi(2), qi(2), qi(5)], &[qi(2), qi(2)], 2).unwrap();
        assert_eq!(x.iter().cloned().sum::<Q>(), qi(2));
        let x = solve_bounded(&cols, &[q(1, 2), qi(2), qi(2)], &[q(3, 2), qi(1)], 2).unwrap();
        assert_eq!(x.iter().cloned().sum::<Q>(), q(3, 2));
    }
}
