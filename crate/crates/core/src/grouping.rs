//! Width categories, group keys, the rounding parameter, and the invariant auditor.

use std::fmt;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::geometry::Constants;
use crate::num::{self, fmt_q, inv_pow2, pow2, qu, Q};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Block {
    A,
    B,
}

/// Position of a group inside its category: `(l, X, r)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct GroupKey {
    pub l: u32,
    pub block: Block,
    pub r: i64,
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{:?},{})", self.l, self.block, self.r)
    }
}

impl GroupKey {
    pub fn new(l: u32, block: Block, r: i64) -> Self {
        Self { l, block, r }
    }

    /// The left neighbour given the category's maximal A position.
    pub fn left(self, q_a: i64) -> GroupKey {
        match (self.block, self.r) {
            (Block::B, 0) => GroupKey::new(self.l, Block::A, q_a),
            (b, r) => GroupKey::new(self.l, b, r - 1),
        }
    }

    /// The right neighbour given both maximal positions; `None` past the end.
    pub fn right(self, q_a: i64, q_b: i64) -> Option<GroupKey> {
        match self.block {
            Block::A if self.r < q_a => Some(GroupKey::new(self.l, Block::A, self.r + 1)),
            Block::A if q_b >= 0 => Some(GroupKey::new(self.l, Block::B, 0)),
            Block::A => None,
            Block::B if self.r < q_b => Some(GroupKey::new(self.l, Block::B, self.r + 1)),
            Block::B => None,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GroupingError {
    #[error("width {0} is below epsilon and has no category")]
    NarrowWidth(String),
    #[error("width {0} is outside (0,1]")]
    BadWidth(String),
}

/// The unique `l` with `2^{-(l+1)} < w <= 2^{-l}`.
pub fn category_of(w: &Q, eps: &Q) -> Result<u32, GroupingError> {
    if w < eps {
        return Err(GroupingError::NarrowWidth(fmt_q(w)));
    }
    if *w > Q::one() || *w <= Q::zero() {
        return Err(GroupingError::BadWidth(fmt_q(w)));
    }
    let mut l = 0;
    while *w <= inv_pow2(l + 1) {
        l += 1;
    }
    Ok(l)
}

/// Returns `(k, kappa)` with `kappa = SIZE / unit`.
pub fn compute_k(total_large_size: &Q, c: &Constants) -> (u64, Q) {
    let kappa = total_large_size / &c.kappa_unit;
    (num::floor_u64(&kappa), kappa)
}

/// Nominal container count of a full group.
pub fn nominal(l: u32, block: Block, k: u64) -> u64 {
    match block {
        Block::A => pow2(l) * k,
        Block::B => pow2(l) * k.saturating_sub(1),
    }
}

/// Width extremes of one group in chain order; `None` for an empty group.
#[derive(Clone, Debug)]
pub struct WidthRange {
    pub w_min: Option<Q>,
    pub w_max: Option<Q>,
}

/// Index of the rightmost suitable group in a chain ordered widest to narrowest.
/// Returns `None` for an empty chain (the caller bootstraps `(l,A,0)`).
pub fn suitable_index(chain: &[WidthRange], w: &Q) -> Option<usize> {
    if chain.is_empty() {
        return None;
    }
    // Sentinels: left of the first group is infinitely wide, right of the last is width 0.
    let left_ok = |j: usize| j == 0 || chain[j - 1].w_min.as_ref().is_none_or(|m| m >= w);
    let right_ok = |j: usize| j + 1 == chain.len() || chain[j + 1].w_max.as_ref().is_none_or(|m| m < w);
    (0..chain.len()).rev().find(|&j| left_ok(j) && right_ok(j))
}

/// One group as seen by the auditor.
#[derive(Clone, Debug, Serialize)]
pub struct GroupView {
    pub name: String,
    pub containers: u64,
    #[serde(with = "crate::num::serde_q")]
    pub h: Q,
    #[serde(skip)]
    pub widths: Vec<Q>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct CategoryView {
    pub a: Vec<GroupView>,
    pub b: Vec<GroupView>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Property {
    I1,
    I2,
    I3,
    I4,
    I5,
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub property: Property,
    pub witness: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct InvariantReport {
    pub violations: Vec<Violation>,
    /// Count checks that only hold under the flexible-chain-ends reading.
    pub literal_count_deviations: u64,
    pub groups: usize,
    pub group_bound: u64,
}

impl InvariantReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first(&self, p: Property) -> Option<&Violation> {
        self.violations.iter().find(|v| v.property == p)
    }

    pub fn within_group_bound(&self) -> bool {
        self.groups as u64 <= self.group_bound
    }
}

fn min_max(ws: &[Q]) -> Option<(&Q, &Q)> {
    let mut it = ws.iter();
    let first = it.next()?;
    Some(it.fold((first, first), |(lo, hi), w| {
        if w < lo {
            (w, hi)
        } else if w > hi {
            (lo, w)
        } else {
            (lo, hi)
        }
    }))
}

/// Checks I1 to I5. Counts are exact for interior groups; the first and last group
/// of each category chain may hold fewer containers than nominal.
pub fn audit(cats: &[CategoryView], k: u64, c: &Constants) -> InvariantReport {
    let mut rep = InvariantReport { group_bound: c.group_bound, ..Default::default() };
    let hb1 = c.h_b1();
    for (l, cat) in cats.iter().enumerate() {
        let l = l as u32;
        let lo = inv_pow2(l + 1);
        let hi = inv_pow2(l);
        let chain: Vec<(Block, &GroupView)> = cat.a.iter().map(|g| (Block::A, g)).chain(cat.b.iter().map(|g| (Block::B, g))).collect();
        rep.groups += chain.len();
        let last = chain.len().saturating_sub(1);
        let spans: Vec<Option<(&Q, &Q)>> = chain.iter().map(|(_, g)| min_max(&g.widths)).collect();
        for (j, (block, g)) in chain.iter().enumerate() {
            if let Some((wmin, wmax)) = spans[j] {
                let bad = if *wmin <= lo { Some(wmin) } else { (*wmax > hi).then_some(wmax) };
                if let Some(w) = bad {
                    rep.violations.push(Violation {
                        property: Property::I1,
                        witness: format!("{} holds width {} outside category {l}", g.name, fmt_q(w)),
                    });
                }
            }
            if j > 0 {
                let left = chain[j - 1].1;
                if let (Some((a, _)), Some((_, b))) = (spans[j - 1], spans[j]) {
                    if a < b {
                        rep.violations.push(Violation {
                            property: Property::I2,
                            witness: format!("{} has width {} below {} of right neighbour {}", left.name, fmt_q(a), fmt_q(b), g.name),
                        });
                    }
                }
            }
            let nom = nominal(l, *block, k);
            let flexible = j == 0 || j == last;
            let count_ok = if flexible { g.containers <= nom } else { g.containers == nom };
            let literal_ok = match block {
                Block::A => {
                    if j == 0 {
                        g.containers <= nom
                    } else {
                        g.containers == nom
                    }
                }
                Block::B => {
                    if j == last {
                        g.containers <= nom
                    } else {
                        g.containers == nom
                    }
                }
            };
            if count_ok && !literal_ok {
                rep.literal_count_deviations += 1;
            }
            if !count_ok {
                rep.violations.push(Violation {
                    property: if *block == Block::A { Property::I3 } else { Property::I4 },
                    witness: format!("{} has {} containers, nominal {nom} with k={k}", g.name, g.containers),
                });
            }
            let kq = qu(g.containers);
            let upper = &hb1 * &kq;
            let lower = if g.containers == 0 { Q::zero() } else { &hb1 * (kq - Q::one()) };
            if g.h < lower || g.h > upper {
                rep.violations.push(Violation {
                    property: Property::I5,
                    witness: format!("{} has height {} outside [{}, {}]", g.name, fmt_q(&g.h), fmt_q(&lower), fmt_q(&upper)),
                });
            }
        }
    }
    rep
}

/// Index of the half-open interval `[i/n, (i+1)/n)` containing `x` in `[0,1]`.
pub fn interval_index(x: &Q, n: u64) -> u64 {
    if n == 0 {
        return 0;
    }
    num::floor_u64(&(x * qu(n))).min(n)
}

pub fn frac(x: &Q) -> Q {
    x - x.floor()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ScaleOverrides;
    use crate::num::{q, qi};

    fn consts(hb: u64) -> Constants {
        let ov = ScaleOverrides { container_height: Some(hb), ..Default::default() };
        Constants::derive(q(1, 4), true, &ov).unwrap()
    }

    fn gv(name: &str, k: u64, h: Q, widths: Vec<Q>) -> GroupView {
        GroupView { name: name.into(), containers: k, h, widths }
    }

    #[test]
    fn category_examples() {
        let e = q(1, 4);
        assert_eq!(category_of(&qi(1), &e), Ok(0));
        assert_eq!(category_of(&q(3, 10), &e), Ok(1));
        assert_eq!(category_of(&q(1, 4), &e), Ok(2));
        assert!(category_of(&q(1, 5), &e).is_err());
    }

    #[test]
    fn compute_k_examples() {
        let c = Constants::derived(q(1, 4)).unwrap();
        assert_eq!(compute_k(&Q::zero(), &c), (0, Q::zero()));
        assert_eq!(compute_k(&qi(2_086_656), &c), (209, qi(209)));
    }

    #[test]
    fn neighbours() {
        let g = GroupKey::new(1, Block::B, 0);
        assert_eq!(g.left(2), GroupKey::new(1, Block::A, 2));
        assert_eq!(GroupKey::new(1, Block::A, 0).left(2), GroupKey::new(1, Block::A, -1));
        assert_eq!(GroupKey::new(1, Block::A, 2).right(2, 0), Some(g));
        assert_eq!(GroupKey::new(1, Block::B, 3).right(2, 3), None);
        assert_eq!(GroupKey::new(1, Block::A, 1).left(2).right(2, 3), Some(GroupKey::new(1, Block::A, 1)));
    }

    #[test]
    fn suitable_examples() {
        let r = |a: (i64, i64), b: (i64, i64)| WidthRange { w_min: Some(q(a.0, a.1)), w_max: Some(q(b.0, b.1)) };
        assert_eq!(suitable_index(&[], &q(1, 2)), None);
        assert_eq!(suitable_index(&[r((3, 10), (4, 10))], &q(35, 100)), Some(0));
        let two = [r((5, 10), (6, 10)), r((3, 10), (4, 10))];
        assert_eq!(suitable_index(&two, &q(45, 100)), Some(1));
        assert_eq!(suitable_index(&two, &q(55, 100)), Some(0));
    }

    #[test]
    fn audit_examples() {
        let c = consts(5);
        assert!(audit(&[], 1, &c).ok());
        let one = CategoryView { a: vec![gv("g", 1, qi(4), vec![qi(1)])], b: vec![] };
        assert!(audit(&[one], 1, &c).ok());
        let bad = CategoryView { a: vec![gv("g", 2, qi(4) - q(1, 100), vec![qi(1)])], b: vec![] };
        let rep = audit(&[bad], 2, &c);
        assert!(rep.first(Property::I5).is_some());
        let i2 = CategoryView { a: vec![gv("a", 1, qi(1), vec![q(6, 10)]), gv("b", 1, qi(1), vec![q(7, 10)])], b: vec![] };
        assert!(audit(&[i2], 1, &c).first(Property::I2).is_some());
    }

    #[test]
    fn interval_index_edges() {
        assert_eq!(interval_index(&Q::zero(), 4), 0);
        assert_eq!(interval_index(&q(3, 4), 4), 3);
        assert_eq!(interval_index(&q(99, 100), 4), 3);
        assert_eq!(frac(&q(7, 2)), q(1, 2));
    }
}
