//! Independent geometry and invariant checks on a [`Snapshot`].

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{One, Zero};
use serde::Serialize;

use crate::engine::Mode;
use crate::geometry::{Constants, ItemId, Rect};
use crate::grouping::{self, CategoryView, GroupView, Property};
use crate::num::{fmt_q, Q};
use crate::snapshot::{HolderKind, Snapshot, Stack};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum FailureKind {
    Overlap,
    OutOfStrip,
    SizeMismatch,
    Membership,
    StackOrder,
    HolderOverlap,
    Invariant(Property),
    Config,
}

#[derive(Clone, Debug, Serialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub witness: String,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub failures: Vec<Failure>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn has(&self, kind: FailureKind) -> bool {
        self.failures.iter().any(|f| f.kind == kind)
    }

    fn push(&mut self, kind: FailureKind, witness: String) {
        self.failures.push(Failure { kind, witness });
    }
}

fn show(r: &Rect) -> String {
    format!("[{}, {}] x [{}, {}]", fmt_q(&r.x), fmt_q(&r.right()), fmt_q(&r.y), fmt_q(&r.top()))
}

/// A rectangle with its far edges computed once.
struct Edges {
    x0: Q,
    x1: Q,
    y0: Q,
    y1: Q,
}

impl Edges {
    fn of(r: &Rect) -> Self {
        Self { x1: r.right(), y1: r.top(), x0: r.x.clone(), y0: r.y.clone() }
    }

    fn inside(&self, o: &Edges) -> bool {
        self.x0 >= o.x0 && self.x1 <= o.x1 && self.y0 >= o.y0 && self.y1 <= o.y1
    }

    fn overlaps(&self, o: &Edges) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }
}

/// First overlapping pair, by a sweep over the bottom edges.
pub fn first_overlap<'a, K: Clone>(rects: impl IntoIterator<Item = (K, &'a Rect)>) -> Option<(K, K)> {
    let rs: Vec<(K, Edges)> = rects.into_iter().map(|(k, r)| (k, Edges::of(r))).collect();
    overlap_in(&rs)
}

fn overlap_in<K: Clone, E: std::borrow::Borrow<Edges>>(rs: &[(K, E)]) -> Option<(K, K)> {
    let mut order: Vec<usize> = (0..rs.len()).collect();
    let edge = |i: usize| rs[i].1.borrow();
    order.sort_by(|a, b| edge(*a).y0.cmp(&edge(*b).y0));
    let mut active: Vec<usize> = Vec::new();
    for i in order {
        let e = edge(i);
        active.retain(|a| edge(*a).y1 > e.y0);
        if let Some(a) = active.iter().find(|a| edge(**a).overlaps(e)) {
            return Some((rs[*a].0.clone(), rs[i].0.clone()));
        }
        active.push(i);
    }
    None
}

/// Checks feasibility of the packing, holder bookkeeping, and I1 to I5.
pub fn validate_geometry(s: &Snapshot) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let strip = Edges::of(&Rect::new(Q::zero(), Q::zero(), Q::one(), s.height.clone()));
    let all: Vec<(ItemId, Edges)> = s.items.iter().map(|p| (p.item.id, Edges::of(&p.rect))).collect();
    let item_edges: BTreeMap<ItemId, &Edges> = all.iter().map(|(id, e)| (*id, e)).collect();

    for p in &s.items {
        if p.rect.w != p.item.w || p.rect.h != p.item.h {
            rep.push(FailureKind::SizeMismatch, format!("{} drawn as {}", p.item.id, show(&p.rect)));
        }
        if !item_edges[&p.item.id].inside(&strip) {
            rep.push(FailureKind::OutOfStrip, format!("{} at {}", p.item.id, show(&p.rect)));
        }
    }
    if let Some((a, b)) = overlap_in(&all) {
        rep.push(FailureKind::Overlap, format!("{a} and {b}"));
    }

    let holders: BTreeMap<&str, _> = s.holders.iter().map(|h| (h.id.as_str(), h)).collect();
    let holder_edges: BTreeMap<&str, Edges> = s.holders.iter().map(|h| (h.id.as_str(), Edges::of(&h.rect))).collect();
    let holder_edges: BTreeMap<&str, &Edges> = holder_edges.iter().map(|(k, e)| (*k, e)).collect();
    if holders.len() != s.holders.len() {
        rep.push(FailureKind::Membership, "duplicate holder ids".into());
    }
    for h in &s.holders {
        if !holder_edges[h.id.as_str()].inside(&strip) {
            rep.push(FailureKind::OutOfStrip, format!("holder {} at {}", h.id, show(&h.rect)));
        }
        if let Some(p) = &h.parent {
            match holders.get(p.as_str()) {
                Some(_) if holder_edges.get(p.as_str()).is_some_and(|pe| holder_edges[h.id.as_str()].inside(pe)) => {}
                Some(_) => rep.push(FailureKind::Membership, format!("holder {} sticks out of {p}", h.id)),
                None => rep.push(FailureKind::Membership, format!("holder {} has unknown parent {p}", h.id)),
            }
        }
    }
    let mut siblings: BTreeMap<Option<&str>, Vec<(&str, &Edges)>> = BTreeMap::new();
    for h in &s.holders {
        siblings.entry(h.parent.as_deref()).or_default().push((h.id.as_str(), holder_edges[h.id.as_str()]));
    }
    for (parent, hs) in siblings {
        if let Some((a, b)) = overlap_in(&hs) {
            rep.push(FailureKind::HolderOverlap, format!("{a} and {b} under {}", parent.unwrap_or("strip")));
        }
    }

    let placed: BTreeMap<ItemId, _> = s.items.iter().map(|p| (p.item.id, p)).collect();
    let mut listed: BTreeSet<ItemId> = BTreeSet::new();
    for h in &s.holders {
        for (stack, ids) in &h.stacks {
            let mut offset = Q::zero();
            for id in ids {
                if !listed.insert(*id) {
                    rep.push(FailureKind::Membership, format!("{id} listed twice"));
                }
                let Some(p) = placed.get(id) else {
                    rep.push(FailureKind::Membership, format!("{} lists unknown item {id}", h.id));
                    continue;
                };
                if p.holder != h.id {
                    rep.push(FailureKind::Membership, format!("{id} claims {} but sits in {}", p.holder, h.id));
                }
                if !item_edges[id].inside(holder_edges[h.id.as_str()]) {
                    rep.push(FailureKind::Membership, format!("{id} at {} outside {} at {}", show(&p.rect), h.id, show(&h.rect)));
                }
                let (x, y) = match stack {
                    Stack::Up => (h.rect.x.clone(), &h.rect.y + &offset),
                    Stack::Down => (h.rect.x.clone(), &holder_edges[h.id.as_str()].y1 - &offset - &p.rect.h),
                    Stack::Right => (&h.rect.x + &offset, h.rect.y.clone()),
                };
                offset += if *stack == Stack::Right { &p.rect.w } else { &p.rect.h };
                if p.rect.x != x || p.rect.y != y {
                    rep.push(
                        FailureKind::StackOrder,
                        format!("{id} in {} at {}, expected ({}, {})", h.id, show(&p.rect), fmt_q(&x), fmt_q(&y)),
                    );
                }
            }
        }
    }
    for p in &s.items {
        if !listed.contains(&p.item.id) {
            rep.push(FailureKind::Membership, format!("{} is in no holder", p.item.id));
        }
    }

    match Constants::derive(s.config.epsilon.clone(), s.config.scale_mode, &s.config.overrides) {
        Ok(c) => {
            let views = category_views(s, &holders, &placed, &mut rep);
            if s.mode == Mode::Online {
                check_group_cover(s, &mut rep);
            }
            for v in grouping::audit(&views, s.k, &c).violations {
                rep.push(FailureKind::Invariant(v.property), v.witness);
            }
        }
        Err(e) => rep.push(FailureKind::Config, e.to_string()),
    }
    rep
}

/// Every container belongs to exactly one group once groups exist.
fn check_group_cover(s: &Snapshot, rep: &mut ValidationReport) {
    let mut owners: BTreeMap<&str, usize> =
        s.holders.iter().filter(|h| h.kind == HolderKind::Container).map(|h| (h.id.as_str(), 0)).collect();
    for cid in s.categories.iter().flatten().flat_map(|g| &g.containers) {
        *owners.entry(cid.as_str()).or_default() += 1;
    }
    for (cid, n) in owners.into_iter().filter(|(_, n)| *n != 1) {
        rep.push(FailureKind::Membership, format!("container {cid} is in {n} groups"));
    }
}

/// Rebuilds group heights and widths from the holders' contents.
fn category_views(
    s: &Snapshot,
    holders: &BTreeMap<&str, &crate::snapshot::Holder>,
    placed: &BTreeMap<ItemId, &crate::snapshot::PlacedItem>,
    rep: &mut ValidationReport,
) -> Vec<CategoryView> {
    s.categories
        .iter()
        .map(|chain| {
            let mut cat = CategoryView::default();
            for g in chain {
                let mut view = GroupView { name: g.name.clone(), containers: g.containers.len() as u64, h: Q::zero(), widths: vec![] };
                for cid in &g.containers {
                    let Some(h) = holders.get(cid.as_str()) else {
                        rep.push(FailureKind::Membership, format!("group {} names unknown container {cid}", g.name));
                        continue;
                    };
                    for id in h.stacks.iter().flat_map(|(_, ids)| ids) {
                        if let Some(p) = placed.get(id) {
                            view.h += &p.item.h;
                            view.widths.push(p.item.w.clone());
                        }
                    }
                }
                match g.block {
                    grouping::Block::A => cat.a.push(view),
                    grouping::Block::B => cat.b.push(view),
                }
            }
            cat
        })
        .collect()
}
