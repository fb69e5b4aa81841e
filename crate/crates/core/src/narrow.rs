//! Narrow items: height-classed shelves, the standalone packer, D-containers, and the N-buffer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::{One, Zero};
use serde::Serialize;

use crate::engine::{Engine, EngineError, FlushLog};
use crate::geometry::{Item, ItemId};
use crate::num::{fmt_q, qu, Q};
use crate::plan::{DCont, LevelId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ShelfId(pub u32);

impl fmt::Display for ShelfId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Site {
    Level(LevelId),
    Top,
    NBuffer,
    Standalone,
}

impl Site {
    fn pool(self) -> u8 {
        match self {
            Site::Level(_) | Site::Top => 0,
            Site::NBuffer => 1,
            Site::Standalone => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Shelf {
    pub id: ShelfId,
    pub site: Site,
    pub r: u32,
    pub x: Q,
    pub y: Q,
    pub width: Q,
    pub height: Q,
    /// Lower end of the height class.
    pub lo: Q,
    pub items: Vec<ItemId>,
    pub used: Q,
}

impl Shelf {
    pub fn room(&self) -> Q {
        &self.width - &self.used
    }

    pub fn is_dense(&self, eps: &Q) -> bool {
        self.used > &self.width - eps
    }
}

/// Height classes `[(1-a)^r, (1-a)^{r-1})` with cached powers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HeightClasses {
    base: Q,
    pows: Vec<Q>,
}

impl HeightClasses {
    pub fn new(alpha: &Q) -> Self {
        Self { base: Q::one() - alpha, pows: vec![Q::one()] }
    }

    /// `(r, shelf height, lower bound)` for an item of height `h` in `(0, 1]`.
    pub fn class(&mut self, h: &Q) -> (u32, Q, Q) {
        while self.pows.len() < 2 || self.pows.last().expect("nonempty") > h {
            let next = self.pows.last().expect("nonempty") * &self.base;
            self.pows.push(next);
        }
        // First r >= 1 with (1-a)^r <= h.
        let r = self.pows.partition_point(|p| p > h).max(1);
        (r as u32, self.pows[r - 1].clone(), self.pows[r].clone())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Shelves {
    pub map: BTreeMap<ShelfId, Shelf>,
    pub home: BTreeMap<ItemId, ShelfId>,
    /// Shelves with room, per pool and height class.
    open: BTreeMap<(u8, u32), BTreeSet<ShelfId>>,
    pub nbuffer_used: Q,
    online: HeightClasses,
    standalone: HeightClasses,
    next: u32,
}

impl Shelves {
    pub fn shelf(&self, s: ShelfId) -> &Shelf {
        &self.map[&s]
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    #[allow(clippy::too_many_arguments)]
    fn add(&mut self, site: Site, r: u32, x: Q, y: Q, width: Q, height: Q, lo: Q) -> ShelfId {
        let id = ShelfId(self.next);
        self.next += 1;
        self.map.insert(id, Shelf { id, site, r, x, y, width, height, lo, items: vec![], used: Q::zero() });
        self.open.entry((site.pool(), r)).or_default().insert(id);
        id
    }

    fn first_fit(&self, pool: u8, r: u32, w: &Q) -> Option<ShelfId> {
        self.open.get(&(pool, r))?.iter().copied().find(|s| self.map[s].room() >= *w)
    }

    fn put(&mut self, s: ShelfId, it: &Item) {
        let sh = self.map.get_mut(&s).expect("shelf");
        sh.items.push(it.id);
        sh.used += &it.w;
        if sh.used >= sh.width {
            if let Some(set) = self.open.get_mut(&(sh.site.pool(), sh.r)) {
                set.remove(&s);
            }
        }
        self.home.insert(it.id, s);
    }

    fn remove(&mut self, s: ShelfId) -> Shelf {
        let sh = self.map.remove(&s).expect("shelf");
        if let Some(set) = self.open.get_mut(&(sh.site.pool(), sh.r)) {
            set.remove(&s);
        }
        for id in &sh.items {
            self.home.remove(id);
        }
        sh
    }

    /// Shelves of one pool, bottom to top.
    pub fn in_site(&self, f: impl Fn(&Site) -> bool) -> Vec<ShelfId> {
        self.map.values().filter(|s| f(&s.site)).map(|s| s.id).collect()
    }
}

/// Result of packing a narrow-only stream with the standalone shelf algorithm.
#[derive(Clone, Debug, PartialEq)]
pub struct StandalonePacking {
    pub height: Q,
    pub shelves: Vec<Shelf>,
    pub size: Q,
    pub max_shelf: Q,
}

impl StandalonePacking {
    /// Largest number of sparse shelves within one height class.
    pub fn max_sparse_per_class(&self, eps: &Q) -> usize {
        let mut by: BTreeMap<u32, usize> = BTreeMap::new();
        for s in &self.shelves {
            if !s.is_dense(eps) {
                *by.entry(s.r).or_default() += 1;
            }
        }
        by.values().copied().max().unwrap_or(0)
    }
}

/// First-fit shelf packing of narrow items on an otherwise empty strip; new shelves go on top.
#[derive(Clone, Debug)]
pub struct StandalonePacker {
    sh: Shelves,
    top: Q,
    size: Q,
}

impl StandalonePacker {
    pub fn new(alpha: &Q) -> Self {
        Self { sh: Shelves { standalone: HeightClasses::new(alpha), ..Default::default() }, top: Q::zero(), size: Q::zero() }
    }

    /// Places one item and returns its shelf.
    pub fn insert(&mut self, it: &Item) -> &Shelf {
        self.size += it.size();
        let (r, height, lo) = self.sh.standalone.class(&it.h);
        let s = match self.sh.first_fit(2, r, &it.w) {
            Some(s) => s,
            None => {
                let y = self.top.clone();
                self.top += &height;
                self.sh.add(Site::Standalone, r, Q::zero(), y, Q::one(), height, lo)
            }
        };
        self.sh.put(s, it);
        self.sh.shelf(s)
    }

    /// Sparse shelves in height class `r`.
    pub fn sparse_in_class(&self, r: u32, eps: &Q) -> usize {
        self.sh.open.get(&(2, r)).map_or(0, |set| set.iter().filter(|s| !self.sh.map[s].is_dense(eps)).count())
    }

    pub fn height(&self) -> &Q {
        &self.top
    }

    pub fn finish(self) -> StandalonePacking {
        let max_shelf = self.sh.map.values().map(|s| s.height.clone()).max().unwrap_or_else(Q::zero);
        StandalonePacking { height: self.top, shelves: self.sh.map.into_values().collect(), size: self.size, max_shelf }
    }
}

pub fn shelf_pack_standalone(items: &[Item], alpha: &Q) -> StandalonePacking {
    let mut p = StandalonePacker::new(alpha);
    for it in items {
        p.insert(it);
    }
    p.finish()
}

impl Engine {
    fn narrow(&self, id: ItemId) -> Item {
        self.narrow_items[&id].clone()
    }

    // ---- semi-online ----

    pub(crate) fn standalone_insert(&mut self, id: ItemId) {
        let it = self.narrow(id);
        if self.shelves.standalone.pows.is_empty() {
            self.shelves.standalone = HeightClasses::new(&self.c.alpha_standalone);
        }
        let (r, height, lo) = self.shelves.standalone.class(&it.h);
        let s = match self.shelves.first_fit(2, r, &it.w) {
            Some(s) => s,
            None => {
                let y = self.bands.alloc(&height);
                self.shelves.add(Site::Standalone, r, Q::zero(), y, Q::one(), height, lo)
            }
        };
        self.shelves.put(s, &it);
    }

    /// Empties every standalone shelf and returns its items by id.
    pub(crate) fn standalone_take_all(&mut self) -> Vec<ItemId> {
        let ids = self.shelves.in_site(|s| *s == Site::Standalone);
        let mut out = Vec::new();
        for s in ids {
            self.mark_shelf(s);
            let sh = self.shelves.remove(s);
            self.bands.free(&sh.y);
            out.extend(sh.items);
        }
        out.sort();
        out
    }

    // ---- online ----

    fn online_class(&mut self, h: &Q) -> (u32, Q, Q) {
        if self.shelves.online.pows.is_empty() {
            self.shelves.online = HeightClasses::new(&self.c.alpha_combined);
        }
        self.shelves.online.class(h)
    }

    /// Removes a shelf and queues its items for reinsertion.
    pub(crate) fn displace_shelf(&mut self, s: ShelfId) {
        self.mark_shelf(s);
        let sh = self.shelves.remove(s);
        match sh.site {
            Site::Top | Site::Standalone => self.bands.free(&sh.y),
            Site::Level(lid) => {
                if let Some(d) = self.plan.levels.get_mut(&lid).and_then(|l| l.dcont.as_mut()) {
                    d.shelves.retain(|x| *x != s);
                }
            }
            Site::NBuffer => {}
        }
        self.scratch.displaced.extend(sh.items);
    }

    fn dcont_full(&self, d: &DCont) -> bool {
        d.used > self.c.h_b1()
    }

    /// Existing shelf with room, else a new shelf inside a D-container.
    pub(crate) fn shelf_first_fit(&mut self, id: ItemId) -> bool {
        let it = self.narrow(id);
        let (r, height, lo) = self.online_class(&it.h);
        if let Some(s) = self.shelves.first_fit(0, r, &it.w) {
            self.shelves.put(s, &it);
            return true;
        }
        let hb = self.c.h_b();
        let host = self.plan.levels.values().find_map(|lv| {
            let d = lv.dcont.as_ref()?;
            (!self.dcont_full(d) && &d.used + &height <= hb && d.w >= it.w).then_some(lv.id)
        });
        let Some(lid) = host else { return false };
        let lv = &self.plan.levels[&lid];
        let d = lv.dcont.as_ref().expect("dcont");
        let (x, y, w) = (d.x.clone(), &lv.y + &d.used, d.w.clone());
        let s = self.shelves.add(Site::Level(lid), r, x, y, w, height.clone(), lo);
        let d = self.plan.levels.get_mut(&lid).and_then(|l| l.dcont.as_mut()).expect("dcont");
        d.shelves.push(s);
        d.used += height;
        self.shelves.put(s, &it);
        true
    }

    fn nbuffer_try(&mut self, id: ItemId) -> bool {
        let Some(base) = self.nbuffer_y.clone() else { return false };
        let it = self.narrow(id);
        let (r, height, lo) = self.online_class(&it.h);
        if let Some(s) = self.shelves.first_fit(1, r, &it.w) {
            self.shelves.put(s, &it);
            return true;
        }
        if &self.shelves.nbuffer_used + &height > self.c.h_b() {
            return false;
        }
        let y = &base + &self.shelves.nbuffer_used;
        self.shelves.nbuffer_used += &height;
        let s = self.shelves.add(Site::NBuffer, r, Q::zero(), y, Q::one(), height, lo);
        self.shelves.put(s, &it);
        true
    }

    pub(crate) fn insert_narrow(&mut self, id: ItemId) -> Result<(), EngineError> {
        if self.shelf_first_fit(id) || self.nbuffer_try(id) {
            return Ok(());
        }
        self.flush_narrow(vec![id])
    }

    /// Total width of containers plus D-container on a level.
    pub fn level_fill(&self, lid: LevelId) -> Q {
        let lv = &self.plan.levels[&lid];
        let c: Q = lv.xs.keys().map(|c| self.large.containers[c].width.clone()).sum();
        c + lv.dcont.as_ref().map(|d| d.w.clone()).unwrap_or_else(Q::zero)
    }

    pub fn well_filled(&self, lid: LevelId) -> bool {
        self.level_fill(lid) >= Q::one() - qu(2) * &self.c.epsilon
    }

    /// Packs containers to the left and reopens the D-container over the whole remainder.
    fn align_level(&mut self, lid: LevelId) {
        let order: Vec<ContainerId> = {
            let lv = &self.plan.levels[&lid];
            let mut v: Vec<(Q, ContainerId)> = lv.xs.iter().map(|(c, x)| (x.clone(), *c)).collect();
            v.sort();
            v.into_iter().map(|(_, c)| c).collect()
        };
        let mut cursor = Q::zero();
        for c in order {
            if self.plan.levels[&lid].xs[&c] != cursor {
                self.mark_container(c);
                self.plan.levels.get_mut(&lid).expect("level").xs.insert(c, cursor.clone());
            }
            cursor += &self.large.containers[&c].width;
        }
        if let Some(d) = self.plan.levels.get_mut(&lid).and_then(|l| l.dcont.take()) {
            for s in d.shelves {
                self.displace_shelf(s);
            }
        }
        let w = Q::one() - &cursor;
        if w >= self.c.epsilon {
            self.plan.levels.get_mut(&lid).expect("level").dcont = Some(DCont { x: cursor, w, shelves: vec![], used: Q::zero() });
        }
    }

    /// Aligns up to `q` badly-filled levels, empties the N-buffer, and reinserts everything.
    pub(crate) fn flush_narrow(&mut self, items: Vec<ItemId>) -> Result<(), EngineError> {
        self.settle_levels()?;
        let before = self.height();
        let mut bad: Vec<(Q, LevelId)> =
            self.plan.levels.values().filter(|lv| !self.well_filled(lv.id)).map(|lv| (lv.y.clone(), lv.id)).collect();
        bad.sort();
        bad.truncate(self.c.align_budget as usize);
        let queued = std::mem::take(&mut self.scratch.displaced);
        for (_, lid) in &bad {
            self.align_level(*lid);
        }
        for s in self.shelves.in_site(|s| *s == Site::NBuffer) {
            self.displace_shelf(s);
        }
        self.shelves.nbuffer_used = Q::zero();
        let stripped = std::mem::replace(&mut self.scratch.displaced, queued);
        self.scratch.displaced_total += stripped.len();
        let mut all: Vec<ItemId> = items.into_iter().chain(stripped).collect();
        all.sort();
        all.dedup();
        let mut log = FlushLog { aligned_levels: bad.len(), reinserted: all.len(), ..Default::default() };
        for id in all {
            if self.shelf_first_fit(id) {
                continue;
            }
            let it = self.narrow(id);
            let (r, height, lo) = self.online_class(&it.h);
            let y = self.bands.alloc_top(&height);
            self.shelves.add(Site::Top, r, Q::zero(), y, Q::one(), height, lo);
            log.top_shelves += 1;
            if !self.shelf_first_fit(id) {
                return Err(EngineError::Contract(format!("{id} does not fit a fresh shelf")));
            }
        }
        log.height_increased = self.height() > before;
        log.certificate_ok = !log.height_increased
            || self.plan.levels.values().all(|lv| self.well_filled(lv.id) && lv.dcont.as_ref().is_none_or(|d| self.dcont_full(d)));
        self.scratch.flushes.push(log);
        Ok(())
    }

    pub fn audit_shelves(&self) -> Vec<String> {
        let mut out = Vec::new();
        let eps = &self.c.epsilon;
        let mut sparse: BTreeMap<u32, usize> = BTreeMap::new();
        for sh in self.shelves.map.values() {
            let w: Q = sh.items.iter().map(|i| self.narrow_items[i].w.clone()).sum();
            if w != sh.used || w > sh.width {
                out.push(format!("{} holds width {} of {}", sh.id, fmt_q(&w), fmt_q(&sh.width)));
            }
            for i in &sh.items {
                let h = &self.narrow_items[i].h;
                if *h > sh.height || *h < sh.lo {
                    out.push(format!("{i} height outside the class of {}", sh.id));
                }
                if self.shelves.home.get(i) != Some(&sh.id) {
                    out.push(format!("{i} home disagrees with {}", sh.id));
                }
            }
            match sh.site {
                Site::Level(lid) => match self.plan.levels.get(&lid).and_then(|l| l.dcont.as_ref().map(|d| (l, d))) {
                    Some((lv, d)) => {
                        if sh.x < d.x || &sh.x + &sh.width > &d.x + &d.w || sh.y < lv.y || &sh.y + &sh.height > &lv.y + self.c.h_b() {
                            out.push(format!("{} outside its D-container", sh.id));
                        }
                    }
                    None => out.push(format!("{} refers to a missing D-container", sh.id)),
                },
                Site::NBuffer => {
                    let base = self.nbuffer_y.clone().unwrap_or_else(Q::zero);
                    if sh.y < base || &sh.y + &sh.height > &base + self.c.h_b() {
                        out.push(format!("{} outside the N-buffer", sh.id));
                    }
                }
                Site::Standalone => {
                    if !sh.is_dense(eps) {
                        *sparse.entry(sh.r).or_default() += 1;
                    }
                }
                Site::Top => {}
            }
        }
        if let Some((r, n)) = sparse.iter().find(|(_, n)| **n > 1) {
            out.push(format!("{n} sparse standalone shelves in class {r}"));
        }
        out
    }
}

use crate::containers::ContainerId;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::q;

    fn item(id: u64, w: Q, h: Q) -> Item {
        Item::new(id, w, h).unwrap()
    }

    #[test]
    fn classes() {
        let mut hc = HeightClasses::new(&q(1, 2));
        assert_eq!(hc.class(&Q::one()).0, 1);
        assert_eq!(hc.class(&q(1, 2)).0, 1);
        let (r, h, lo) = hc.class(&q(1, 3));
        assert_eq!((r, h, lo), (2, q(1, 2), q(1, 4)));
    }

    #[test]
    fn five_fifths_share_a_shelf() {
        let items: Vec<Item> = (0..6).map(|i| item(i, q(1, 5), q(1, 2))).collect();
        let p = shelf_pack_standalone(&items, &q(1, 15));
        assert_eq!(p.shelves.len(), 2);
        assert_eq!(p.shelves[0].items.len(), 5);
    }
}
