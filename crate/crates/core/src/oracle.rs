//! Exact optimum brackets for tiny instances.

use num_traits::{One, Zero};
use serde::Serialize;

use crate::geometry::{Item, Rect};
use crate::num::{q, serde_q, Q};

pub const MAX_ITEMS: usize = 6;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("oracle takes at most {MAX_ITEMS} items, got {0}")]
    TooMany(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleBound {
    #[serde(with = "serde_q")]
    pub lower: Q,
    #[serde(with = "serde_q")]
    pub upper: Q,
    /// Arrival order of the best bottom-left packing.
    pub order: Vec<usize>,
    pub placement: Vec<Rect>,
}

/// `max(SIZE, tallest item, stack of items wider than 1/2)`.
/// Items wider than 1/2 all cross the line `x = 1/2`, so they are stacked.
pub fn lower_bound(items: &[Item]) -> Q {
    let size: Q = items.iter().map(Item::size).sum();
    let tallest = items.iter().map(|i| i.h.clone()).max().unwrap_or_else(Q::zero);
    let half = q(1, 2);
    let centre: Q = items.iter().filter(|i| i.w > half).map(|i| i.h.clone()).sum();
    size.max(tallest).max(centre)
}

/// Bottom-left placement: lowest, then leftmost, position that fits.
pub fn bottom_left(items: &[&Item]) -> Vec<Rect> {
    let mut placed: Vec<Rect> = Vec::new();
    for it in items {
        let mut xs: Vec<Q> = std::iter::once(Q::zero()).chain(placed.iter().map(Rect::right)).filter(|x| x + &it.w <= Q::one()).collect();
        let mut ys: Vec<Q> = std::iter::once(Q::zero()).chain(placed.iter().map(Rect::top)).collect();
        xs.sort();
        xs.dedup();
        ys.sort();
        ys.dedup();
        let spot = ys
            .iter()
            .flat_map(|y| xs.iter().map(move |x| Rect::new(x.clone(), y.clone(), it.w.clone(), it.h.clone())))
            .find(|r| placed.iter().all(|p| !p.overlaps(r)))
            .expect("the top of the packing is always free");
        placed.push(spot);
    }
    placed
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    permutations(n - 1)
        .into_iter()
        .flat_map(|p| {
            (0..n).map(move |i| {
                let mut v = p.clone();
                v.insert(i, n - 1);
                v
            })
        })
        .collect()
}

fn height(rs: &[Rect]) -> Q {
    rs.iter().map(Rect::top).max().unwrap_or_else(Q::zero)
}

pub fn oracle_opt_interval(items: &[Item]) -> Result<OracleBound, OracleError> {
    if items.len() > MAX_ITEMS {
        return Err(OracleError::TooMany(items.len()));
    }
    let mut best: Option<(Q, Vec<usize>, Vec<Rect>)> = None;
    for order in permutations(items.len()) {
        let seq: Vec<&Item> = order.iter().map(|i| &items[*i]).collect();
        let rs = bottom_left(&seq);
        let h = height(&rs);
        if best.as_ref().is_none_or(|(b, _, _)| h < *b) {
            best = Some((h, order, rs));
        }
    }
    let (upper, order, placement) = best.expect("at least the empty order");
    Ok(OracleBound { lower: lower_bound(items), upper, order, placement })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::qi;

    fn items(ws: &[(Q, Q)]) -> Vec<Item> {
        ws.iter().enumerate().map(|(i, (w, h))| Item::new(i as u64 + 1, w.clone(), h.clone()).unwrap()).collect()
    }

    #[test]
    fn single_item_is_exact() {
        let b = oracle_opt_interval(&items(&[(q(1, 3), q(3, 4))])).unwrap();
        assert_eq!((b.lower, b.upper), (q(3, 4), q(3, 4)));
    }

    #[test]
    fn two_halves_side_by_side() {
        let b = oracle_opt_interval(&items(&[(q(1, 2), qi(1)), (q(1, 2), qi(1))])).unwrap();
        assert_eq!((b.lower, b.upper), (qi(1), qi(1)));
    }

    #[test]
    fn two_wide_items_stack() {
        let b = oracle_opt_interval(&items(&[(q(3, 5), qi(1)), (q(3, 5), qi(1))])).unwrap();
        assert_eq!(b.upper, qi(2));
        assert!(b.lower >= q(6, 5) && b.lower <= b.upper);
    }

    #[test]
    fn rejects_seven() {
        let seven = items(&vec![(q(1, 8), q(1, 8)); 7]);
        assert_eq!(oracle_opt_interval(&seven), Err(OracleError::TooMany(7)));
    }

    #[test]
    fn empty_is_zero() {
        let b = oracle_opt_interval(&[]).unwrap();
        assert_eq!((b.lower, b.upper), (Q::zero(), Q::zero()));
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(4).len(), 24);
    }
}
