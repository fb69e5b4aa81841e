//! The two-mode packing engine: state, event pipeline, and repack tracking.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::containers::{ContainerError, ContainerId, GroupId, Large};
use crate::geometry::{classify, Constants, GeometryError, Item, ItemClass, ItemId, Rect, ScaleOverrides};
use crate::grouping::{self, Block, CategoryView, GroupView, InvariantReport};
use crate::ledger::{Ledger, LedgerMode, MuBudgets, NegativePotential};
use crate::lp::LpError;
use crate::narrow::{ShelfId, Shelves};
use crate::num::{fmt_q, inv_pow2, qmin, qu, serde_q, Q};
use crate::plan::{ImproveLog, Plan};
use crate::shift::ShiftTrace;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    #[serde(with = "serde_q")]
    pub epsilon: Q,
    #[serde(default)]
    pub scale_mode: bool,
    #[serde(default)]
    pub overrides: ScaleOverrides,
    #[serde(default)]
    pub ledger: LedgerMode,
    #[serde(default)]
    pub mu: Option<MuBudgets>,
    /// Restore the pre-event state when an event fails.
    #[serde(default = "yes")]
    pub transactional: bool,
}

fn yes() -> bool {
    true
}

impl EngineConfig {
    pub fn derived(epsilon: Q) -> Self {
        Self {
            epsilon,
            scale_mode: false,
            overrides: ScaleOverrides::default(),
            ledger: LedgerMode::Measure,
            mu: None,
            transactional: true,
        }
    }

    pub fn scale(epsilon: Q, overrides: ScaleOverrides) -> Self {
        Self { scale_mode: true, overrides, ..Self::derived(epsilon) }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Ledger(#[from] NegativePotential),
    #[error("duplicate item id {0}")]
    DuplicateId(u64),
    #[error("internal contract violated: {0}")]
    Contract(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    SemiOnline,
    Online,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Loc {
    Container(ContainerId),
    FSlot(u32, u32),
    Shelf(ShelfId),
}

/// Vertical interval allocator for levels, shelves, and buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Bands {
    used: BTreeMap<Q, Q>,
    /// Gaps below the top, keyed by start.
    gaps: BTreeMap<Q, Q>,
}

impl Bands {
    /// Lowest gap of height `h`, or the top.
    pub fn alloc(&mut self, h: &Q) -> Q {
        let hit = self.gaps.iter().find(|(_, len)| *len >= h).map(|(y, len)| (y.clone(), len.clone()));
        let Some((y, len)) = hit else {
            return self.alloc_top(h);
        };
        self.gaps.remove(&y);
        if len > *h {
            self.gaps.insert(&y + h, len - h);
        }
        self.used.insert(y.clone(), h.clone());
        y
    }

    /// Allocation strictly on top of everything.
    pub fn alloc_top(&mut self, h: &Q) -> Q {
        let y = self.top();
        self.used.insert(y.clone(), h.clone());
        y
    }

    pub fn free(&mut self, y: &Q) {
        let Some(h) = self.used.remove(y) else {
            return;
        };
        if self.used.range(y..).next().is_none() {
            // the freed band was on top: drop it and the gap below it
            let top = self.top();
            self.gaps.retain(|g, _| *g < top);
            return;
        }
        let mut start = y.clone();
        let mut end = y + h;
        if let Some((gy, glen)) = self.gaps.range(..y).next_back().map(|(a, b)| (a.clone(), b.clone())) {
            if &gy + &glen == start {
                self.gaps.remove(&gy);
                start = gy;
            }
        }
        if let Some(glen) = self.gaps.remove(&end) {
            end += glen;
        }
        let len = end - &start;
        self.gaps.insert(start, len);
    }

    pub fn top(&self) -> Q {
        // bands are disjoint, so the last one ends highest
        self.used.iter().next_back().map(|(y, h)| y + h).unwrap_or_else(Q::zero)
    }

    /// Checks the gap list against the bands it was derived from.
    pub fn check(&self) -> Result<(), String> {
        let mut cursor = Q::zero();
        let mut gaps = BTreeMap::new();
        for (y, h) in &self.used {
            if *y < cursor {
                return Err(format!("band at {} overlaps the one below", fmt_q(y)));
            }
            if *y > cursor {
                gaps.insert(cursor.clone(), y - &cursor);
            }
            cursor = y + h;
        }
        if gaps != self.gaps {
            return Err("gap list out of sync".into());
        }
        Ok(())
    }
}

/// One F-buffer row: `2^l` slots of width `2^{-l}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FRow {
    pub y: Q,
    pub height: Q,
    pub slots: Vec<Vec<ItemId>>,
    pub fill: Vec<Q>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FBuffer {
    pub rows: BTreeMap<u32, FRow>,
    pub home: BTreeMap<ItemId, (u32, u32)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Before {
    Rect(Box<Rect>, Loc),
    /// Position is implied by the container's snapshot in `Journal::stacks`.
    Stacked(ContainerId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StackState {
    pub origin: (Q, Q),
    pub big: Vec<ItemId>,
    pub flat: Vec<ItemId>,
}

/// Captures pre-event positions of every item an event may move.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Journal {
    pub before: BTreeMap<ItemId, Option<Before>>,
    /// Origin and stack order of each touched container, taken at its first mark.
    pub stacks: BTreeMap<ContainerId, StackState>,
    /// Levels whose containers changed and need a Stretch.
    pub dirty: BTreeSet<crate::plan::LevelId>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FlushLog {
    pub aligned_levels: usize,
    pub reinserted: usize,
    pub top_shelves: usize,
    pub height_increased: bool,
    pub certificate_ok: bool,
}

/// Per-event diagnostics.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Scratch {
    pub traces: Vec<ShiftTrace>,
    pub shift_a: u64,
    pub renames: u64,
    #[serde(skip)]
    pub displaced: Vec<ItemId>,
    pub displaced_total: usize,
    pub improve: Vec<ImproveLog>,
    pub flushes: Vec<FlushLog>,
    pub offline: bool,
    pub transition: bool,
    pub fbuffer_flush: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EventReport {
    pub t: u64,
    pub id: ItemId,
    pub class: ItemClass,
    pub mode: Mode,
    #[serde(with = "serde_q")]
    pub size: Q,
    #[serde(with = "serde_q")]
    pub repack: Q,
    #[serde(with = "serde_q")]
    pub phi: Q,
    #[serde(with = "serde_q")]
    pub height: Q,
    #[serde(with = "serde_q")]
    pub kappa: Q,
    pub k: u64,
    pub groups_a: u64,
    pub groups_b: u64,
    #[serde(flatten)]
    pub scratch: Scratch,
}

#[derive(Clone, Debug)]
pub struct Engine {
    pub(crate) c: Constants,
    pub(crate) cfg: EngineConfig,
    pub(crate) mode: Mode,
    pub(crate) t: u64,
    pub(crate) classes: BTreeMap<ItemId, ItemClass>,
    pub(crate) narrow_items: BTreeMap<ItemId, Item>,
    pub(crate) size_large: Q,
    pub(crate) size_all: Q,
    pub(crate) large: Large,
    pub(crate) plan: Plan,
    pub(crate) bands: Bands,
    pub(crate) fbuf: FBuffer,
    pub(crate) shelves: Shelves,
    pub(crate) k_struct: u64,
    pub(crate) ledger: Ledger,
    pub(crate) journal: Journal,
    pub(crate) scratch: Scratch,
    pub(crate) nbuffer_y: Option<Q>,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self, EngineError> {
        let c = Constants::derive(cfg.epsilon.clone(), cfg.scale_mode, &cfg.overrides)?;
        if c.online_threshold < qu(2) * &c.kappa_unit {
            return Err(GeometryError::BadOverride(
                "online_threshold",
                format!("{} must be at least twice the rounding unit {}", fmt_q(&c.online_threshold), fmt_q(&c.kappa_unit)),
            )
            .into());
        }
        let mu = cfg.mu.clone().unwrap_or_else(|| MuBudgets::derive(&c));
        Ok(Self {
            large: Large::new(c.categories(), c.container_height),
            ledger: Ledger::new(cfg.ledger, mu),
            c,
            cfg,
            mode: Mode::SemiOnline,
            t: 0,
            classes: BTreeMap::new(),
            narrow_items: BTreeMap::new(),
            size_large: Q::zero(),
            size_all: Q::zero(),
            plan: Plan::default(),
            bands: Bands::default(),
            fbuf: FBuffer::default(),
            shelves: Shelves::default(),
            k_struct: 0,
            journal: Journal::default(),
            scratch: Scratch::default(),
            nbuffer_y: None,
        })
    }

    pub fn constants(&self) -> &Constants {
        &self.c
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn large(&self) -> &Large {
        &self.large
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn shelves(&self) -> &Shelves {
        &self.shelves
    }

    pub fn size_large(&self) -> &Q {
        &self.size_large
    }

    pub fn size_all(&self) -> &Q {
        &self.size_all
    }

    pub fn k_struct(&self) -> u64 {
        self.k_struct
    }

    pub fn kappa(&self) -> Q {
        grouping::compute_k(&self.size_large, &self.c).1
    }

    pub fn item_count(&self) -> usize {
        self.classes.len()
    }

    pub fn height(&self) -> Q {
        self.bands.top()
    }

    /// Processes one arrival; on error the state is left as it was when transactional.
    pub fn insert(&mut self, item: Item) -> Result<EventReport, EngineError> {
        item.check()?;
        if self.classes.contains_key(&item.id) {
            return Err(EngineError::DuplicateId(item.id.0));
        }
        if self.cfg.transactional {
            let backup = self.clone();
            let out = self.insert_inner(item);
            if out.is_err() {
                *self = backup;
            }
            out
        } else {
            self.insert_inner(item)
        }
    }

    fn insert_inner(&mut self, item: Item) -> Result<EventReport, EngineError> {
        self.t += 1;
        self.journal = Journal::default();
        self.scratch = Scratch::default();
        let id = item.id;
        let class = classify(&item, &self.c.epsilon);
        let size = item.size();
        let online_before = self.mode == Mode::Online;
        self.classes.insert(id, class);
        self.size_all += &size;
        match class {
            ItemClass::Narrow => {
                self.narrow_items.insert(id, item);
                match self.mode {
                    Mode::Online => self.insert_narrow(id)?,
                    Mode::SemiOnline => self.standalone_insert(id),
                }
            }
            ItemClass::Big | ItemClass::Flat => {
                self.size_large += &size;
                if class == ItemClass::Flat {
                    self.large.flat.insert(id);
                }
                self.large.items.insert(id, item);
                match self.mode {
                    Mode::Online if class == ItemClass::Big => self.insert_big(id)?,
                    Mode::Online => self.insert_flat(id)?,
                    Mode::SemiOnline if self.size_large >= self.c.online_threshold => self.transition()?,
                    Mode::SemiOnline if class == ItemClass::Big => self.offline_pack_semi()?,
                    Mode::SemiOnline => {
                        if !self.fbuffer_try(id, &self.c.fbuffer_semionline.clone()) {
                            self.offline_pack_semi()?;
                        }
                    }
                }
            }
        }
        self.settle_levels()?;
        self.drain_displaced()?;
        let repack = self.journal_repack();
        let phi = self.ledger.charge(self.t, class, online_before, &size, &repack)?;
        let kappa = self.kappa();
        let (a, b) = self.block_counts();
        Ok(EventReport {
            t: self.t,
            id,
            class,
            mode: self.mode,
            size,
            repack,
            phi,
            height: self.height(),
            kappa,
            k: self.k_struct,
            groups_a: a,
            groups_b: b,
            scratch: std::mem::take(&mut self.scratch),
        })
    }

    pub fn block_counts(&self) -> (u64, u64) {
        self.large.cats.iter().fold((0, 0), |(a, b), c| (a + c.a.len() as u64, b + c.b.len() as u64))
    }

    // ---- locations and geometry ----

    pub fn loc_of(&self, id: ItemId) -> Option<Loc> {
        if let Some(c) = self.large.home.get(&id) {
            return Some(Loc::Container(*c));
        }
        if let Some((l, s)) = self.fbuf.home.get(&id) {
            return Some(Loc::FSlot(*l, *s));
        }
        self.shelves.home.get(&id).map(|s| Loc::Shelf(*s))
    }

    pub fn item(&self, id: ItemId) -> Option<&Item> {
        self.large.items.get(&id).or_else(|| self.narrow_items.get(&id))
    }

    /// Bottom-left origin of a container, if it sits on a level.
    pub fn container_origin(&self, c: ContainerId) -> Option<(Q, Q)> {
        let lid = self.large.containers.get(&c)?.level?;
        let lv = self.plan.levels.get(&lid)?;
        Some((lv.xs.get(&c)?.clone(), lv.y.clone()))
    }

    pub fn rect_of(&self, id: ItemId) -> Option<Rect> {
        let it = self.item(id)?;
        match self.loc_of(id)? {
            Loc::Container(c) => {
                let (x, y) = self.container_origin(c)?;
                let dy = self.large.offset_in_container(id);
                Some(Rect::new(x, y + dy, it.w.clone(), it.h.clone()))
            }
            Loc::FSlot(l, s) => {
                let row = self.fbuf.rows.get(&l)?;
                let slot = &row.slots[s as usize];
                let p = slot.iter().position(|x| *x == id)?;
                let below: Q = slot[..p].iter().map(|i| self.large.items[i].h.clone()).sum();
                Some(Rect::new(inv_pow2(l) * qu(s as u64), &row.y + below, it.w.clone(), it.h.clone()))
            }
            Loc::Shelf(s) => {
                let sh = self.shelves.shelf(s);
                let p = sh.items.iter().position(|x| *x == id)?;
                let left: Q = sh.items[..p].iter().map(|i| self.narrow_items[i].w.clone()).sum();
                Some(Rect::new(&sh.x + left, sh.y.clone(), it.w.clone(), it.h.clone()))
            }
        }
    }

    /// Rectangles of every item in a container, in one pass.
    pub fn container_rects(&self, c: ContainerId) -> Vec<(ItemId, Rect)> {
        let (Some((x, y)), Some(cont)) = (self.container_origin(c), self.large.containers.get(&c)) else {
            return vec![];
        };
        let mut out = Vec::new();
        let mut below = y.clone();
        for id in &cont.big {
            let it = &self.large.items[id];
            out.push((*id, Rect::new(x.clone(), below.clone(), it.w.clone(), it.h.clone())));
            below += &it.h;
        }
        let mut top = y + self.c.h_b();
        for id in &cont.flat {
            let it = &self.large.items[id];
            top -= &it.h;
            out.push((*id, Rect::new(x.clone(), top.clone(), it.w.clone(), it.h.clone())));
        }
        out
    }

    /// Every placed item with its rectangle.
    pub fn rects(&self) -> BTreeMap<ItemId, Rect> {
        self.classes.keys().filter_map(|id| self.rect_of(*id).map(|r| (*id, r))).collect()
    }

    // ---- journal ----

    pub(crate) fn mark_item(&mut self, id: ItemId) {
        if self.journal.before.contains_key(&id) {
            return;
        }
        if let Some(c) = self.large.home.get(&id).copied() {
            let snap = self.snapshot_stack(c).then_some(Before::Stacked(c));
            self.journal.before.insert(id, snap);
            return;
        }
        let snap = match (self.rect_of(id), self.loc_of(id)) {
            (Some(r), Some(l)) => Some(Before::Rect(Box::new(r), l)),
            _ => None,
        };
        self.journal.before.insert(id, snap);
    }

    /// Records the container's stack once per event; false if it is not placed.
    fn snapshot_stack(&mut self, c: ContainerId) -> bool {
        if self.journal.stacks.contains_key(&c) {
            return true;
        }
        let (Some(origin), Some(cont)) = (self.container_origin(c), self.large.containers.get(&c)) else {
            return false;
        };
        let st = StackState { origin, big: cont.big.clone(), flat: cont.flat.clone() };
        self.journal.stacks.insert(c, st);
        true
    }

    pub(crate) fn mark_container(&mut self, c: ContainerId) {
        let ids: Vec<ItemId> = match self.large.containers.get(&c) {
            Some(cont) => {
                if let Some(l) = cont.level {
                    self.journal.dirty.insert(l);
                }
                cont.items().filter(|i| !self.journal.before.contains_key(i)).collect()
            }
            None => return,
        };
        ids.into_iter().for_each(|i| self.mark_item(i));
    }

    pub(crate) fn mark_shelf(&mut self, s: ShelfId) {
        let ids = self.shelves.shelf(s).items.clone();
        ids.into_iter().for_each(|i| self.mark_item(i));
    }

    /// Area of items whose position or assignment changed during this event.
    fn journal_repack(&self) -> Q {
        self.journal
            .before
            .iter()
            .filter_map(|(id, before)| {
                let moved = match before.as_ref()? {
                    Before::Rect(r0, l0) => self.rect_of(*id).as_ref() != Some(r0.as_ref()) || self.loc_of(*id).as_ref() != Some(l0),
                    Before::Stacked(c) => self.left_stack(*id, *c),
                };
                moved.then(|| self.item(*id).map(|i| i.size()).unwrap_or_else(Q::zero))
            })
            .sum()
    }

    /// Whether a container item lost its container or its rectangle since the snapshot.
    fn left_stack(&self, id: ItemId, c: ContainerId) -> bool {
        let st = &self.journal.stacks[&c];
        if self.large.home.get(&id) != Some(&c) || self.container_origin(c).as_ref() != Some(&st.origin) {
            return true;
        }
        let cont = &self.large.containers[&c];
        let same_prefix = |then: &[ItemId], now: &[ItemId]| match then.iter().position(|x| *x == id) {
            Some(p) => now.len() > p && now[..=p] == then[..=p],
            None => false,
        };
        if same_prefix(&st.big, &cont.big) || same_prefix(&st.flat, &cont.flat) {
            return false;
        }
        // Reordered stack: compare offsets, since equal heights can leave the rectangle unchanged.
        let h = |v: &[ItemId]| -> Q { v.iter().map(|i| self.large.items[i].h.clone()).sum() };
        let then = match st.big.iter().position(|x| *x == id) {
            Some(p) => h(&st.big[..p]),
            None => {
                let p = st.flat.iter().position(|x| *x == id).expect("snapshot holds item");
                qu(self.large.hb) - h(&st.flat[..=p])
            }
        };
        then != self.large.offset_in_container(id)
    }

    // ---- F-buffer ----

    fn fbuffer_row_height(&self) -> Q {
        match self.mode {
            Mode::SemiOnline => self.c.fbuffer_semionline.clone(),
            Mode::Online => self.c.fbuffer_row_height(),
        }
    }

    /// Online slot capacity `|G| eps^2 + eps`, capped by the row height.
    pub(crate) fn fbuffer_online_cap(&self) -> Q {
        qmin(&self.c.fbuffer_online(self.large.group_count()), &self.c.fbuffer_row_height())
    }

    /// Places a flat item in the first slot of its category with room.
    pub(crate) fn fbuffer_try(&mut self, id: ItemId, cap: &Q) -> bool {
        let (w, h) = {
            let it = &self.large.items[&id];
            (it.w.clone(), it.h.clone())
        };
        let l = grouping::category_of(&w, &self.c.epsilon).expect("flat item has a category");
        if !self.fbuf.rows.contains_key(&l) {
            let height = self.fbuffer_row_height();
            let y = self.bands.alloc(&height);
            let n = 1usize << l;
            self.fbuf.rows.insert(l, FRow { y, height, slots: vec![vec![]; n], fill: vec![Q::zero(); n] });
        }
        let row = self.fbuf.rows.get_mut(&l).expect("row");
        let cap = qmin(cap, &row.height);
        let Some(s) = (0..row.slots.len()).find(|&s| &row.fill[s] + &h <= cap) else {
            return false;
        };
        row.slots[s].push(id);
        row.fill[s] += &h;
        self.fbuf.home.insert(id, (l, s as u32));
        true
    }

    /// Removes and returns the buffered items of category `l`.
    pub(crate) fn fbuffer_take(&mut self, l: u32) -> Vec<ItemId> {
        let ids: Vec<ItemId> = self.fbuf.rows.get(&l).map(|r| r.slots.concat()).unwrap_or_default();
        for id in &ids {
            self.mark_item(*id);
            self.fbuf.home.remove(id);
        }
        if let Some(row) = self.fbuf.rows.get_mut(&l) {
            row.slots.iter_mut().for_each(|s| s.clear());
            row.fill.iter_mut().for_each(|f| *f = Q::zero());
        }
        ids
    }

    fn fbuffer_take_all(&mut self) -> Vec<ItemId> {
        let ls: Vec<u32> = self.fbuf.rows.keys().copied().collect();
        ls.into_iter().flat_map(|l| self.fbuffer_take(l)).collect()
    }

    fn fbuffer_release_rows(&mut self) {
        for (_, row) in std::mem::take(&mut self.fbuf.rows) {
            self.bands.free(&row.y);
        }
    }

    // ---- semi-online and transition ----

    /// Repacks every large item from scratch.
    fn offline_pack_semi(&mut self) -> Result<(), EngineError> {
        let k = grouping::compute_k(&self.size_large, &self.c).0.max(1);
        self.offline_pack(k, Block::A)
    }

    pub(crate) fn offline_pack(&mut self, k: u64, block: Block) -> Result<(), EngineError> {
        self.scratch.offline = true;
        let ids: Vec<ItemId> = self.large.items.keys().copied().collect();
        ids.iter().for_each(|i| self.mark_item(*i));
        self.fbuffer_take_all();
        let levels: Vec<_> = self.plan.levels.keys().copied().collect();
        for lid in levels {
            self.remove_level(lid);
        }
        self.plan.x.clear();
        let items = std::mem::take(&mut self.large.items);
        let flat = std::mem::take(&mut self.large.flat);
        self.large = Large::new(self.c.categories(), self.c.container_height);
        self.large.items = items;
        self.large.flat = flat;
        let eps = self.c.epsilon.clone();
        let hb1 = self.c.h_b1();
        let mut by_cat: Vec<Vec<ItemId>> = vec![vec![]; self.c.categories() as usize];
        for (id, it) in &self.large.items {
            let l = grouping::category_of(&it.w, &eps).expect("large item");
            by_cat[l as usize].push(*id);
        }
        for (l, mut ids) in by_cat.into_iter().enumerate() {
            let l = l as u32;
            let items = &self.large.items;
            ids.sort_by(|a, b| items[b].w.cmp(&items[a].w).then(a.cmp(b)));
            let nom = grouping::nominal(l, block, k);
            if nom == 0 {
                return Err(EngineError::Contract(format!("offline packing with k={k} leaves no room in block {block:?}")));
            }
            let cap = &hb1 * qu(nom);
            let mut rest = ids.as_slice();
            while !rest.is_empty() {
                let mut h = Q::zero();
                let mut n = 0;
                while n < rest.len() && &h + &self.large.items[&rest[n]].h <= cap {
                    h += &self.large.items[&rest[n]].h;
                    n += 1;
                }
                let take = &rest[..n.max(1)];
                rest = &rest[n.max(1)..];
                let kk = if rest.is_empty() { crate::num::ceil_i64(&(&h / &hb1)).max(1) as u64 } else { nom };
                let g = self.large.new_group(l, inv_pow2(l));
                match block {
                    Block::A => self.large.cats[l as usize].a.push(g),
                    Block::B => self.large.cats[l as usize].b.push(g),
                }
                for _ in 0..kk {
                    self.large.new_container(g);
                }
                self.large.place_mixed(g, take, &eps)?;
            }
            self.refresh_plan_widths(l);
        }
        self.k_struct = k;
        self.rebuild_plan()?;
        Ok(())
    }

    /// Switches to online mode, repacking every item once.
    fn transition(&mut self) -> Result<(), EngineError> {
        self.scratch.transition = true;
        let (k, _) = grouping::compute_k(&self.size_large, &self.c);
        self.fbuffer_take_all();
        self.fbuffer_release_rows();
        self.mode = Mode::Online;
        let block = if k >= 2 { Block::B } else { Block::A };
        self.offline_pack(k.max(1), block)?;
        self.nbuffer_y = Some(self.bands.alloc(&self.c.h_b()));
        self.balance_blocks()?;
        self.settle_levels()?;
        let narrow = self.standalone_take_all();
        if !narrow.is_empty() {
            self.flush_narrow(narrow)?;
        }
        Ok(())
    }

    /// Reinserts narrow items displaced during this event.
    fn drain_displaced(&mut self) -> Result<(), EngineError> {
        let mut guard = 0;
        while !self.scratch.displaced.is_empty() {
            guard += 1;
            if guard > 10_000 {
                return Err(EngineError::Contract("narrow displacement does not settle".into()));
            }
            let ids = std::mem::take(&mut self.scratch.displaced);
            self.scratch.displaced_total += ids.len();
            for id in ids {
                self.insert_narrow(id)?;
            }
        }
        Ok(())
    }

    // ---- audit ----

    /// Group view re-derived from raw container contents.
    pub fn category_views(&self) -> Vec<CategoryView> {
        let mut counts: BTreeMap<GroupId, u64> = BTreeMap::new();
        for c in self.large.containers.values() {
            *counts.entry(c.group).or_default() += 1;
        }
        let view = |g: &GroupId| {
            let gr = &self.large.groups[g];
            let ids: Vec<ItemId> = gr.containers.iter().flat_map(|c| self.large.containers[c].items()).collect();
            GroupView {
                name: format!("{} {}", g, self.large.key_of(*g).map(|k| k.to_string()).unwrap_or_default()),
                containers: counts.get(g).copied().unwrap_or(0),
                // container fills are checked against their items by `audit_structure`
                h: gr.containers.iter().map(|c| &self.large.containers[c].fill).sum(),
                widths: ids.iter().map(|i| self.large.items[i].w.clone()).collect(),
            }
        };
        self.large
            .cats
            .iter()
            .map(|cat| CategoryView { a: cat.a.iter().map(view).collect(), b: cat.b.iter().map(view).collect() })
            .collect()
    }

    pub fn audit_invariants(&self) -> InvariantReport {
        grouping::audit(&self.category_views(), self.k_struct, &self.c)
    }

    /// Cross-checks cached bookkeeping against raw contents.
    pub fn audit_structure(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Err(e) = self.bands.check() {
            out.push(e);
        }
        let hb = self.c.h_b();
        for (cid, c) in &self.large.containers {
            let fill: Q = c.items().map(|i| self.large.items[&i].h.clone()).sum();
            if fill != c.fill {
                out.push(format!("{cid} caches fill {} but holds {}", fmt_q(&c.fill), fmt_q(&fill)));
            }
            if fill > hb {
                out.push(format!("{cid} overfull at {}", fmt_q(&fill)));
            }
            let w = c.items().map(|i| self.large.items[&i].w.clone()).max().unwrap_or_else(Q::zero);
            if w != c.width {
                out.push(format!("{cid} caches width {}", fmt_q(&c.width)));
            }
            let flat_w: Vec<&Q> = c.flat.iter().map(|i| &self.large.items[i].w).collect();
            if flat_w.windows(2).any(|p| p[0] > p[1]) {
                out.push(format!("{cid} flat stack out of order"));
            }
            if c.level.is_none() && self.mode == Mode::Online {
                out.push(format!("{cid} has no level"));
            }
            let g = &self.large.groups[&c.group];
            if w > g.pw {
                out.push(format!("{cid} width {} exceeds planned width {}", fmt_q(&w), fmt_q(&g.pw)));
            }
        }
        for (gid, g) in &self.large.groups {
            if self.large.group_height_recomputed(*gid) != g.h {
                out.push(format!("{gid} caches a stale height"));
            }
        }
        for (id, c) in &self.large.home {
            if !self.large.containers[c].items().any(|x| x == *id) {
                out.push(format!("{id} not found in {c}"));
            }
        }
        let placed: BTreeSet<ItemId> = self.large.home.keys().chain(self.fbuf.home.keys()).copied().collect();
        if placed.len() != self.large.items.len() {
            out.push(format!("{} large items but {} placed", self.large.items.len(), placed.len()));
        }
        if self.shelves.home.len() != self.narrow_items.len() {
            out.push(format!("{} narrow items but {} on shelves", self.narrow_items.len(), self.shelves.home.len()));
        }
        out.extend(self.audit_plan());
        out.extend(self.audit_shelves());
        out
    }

    pub fn group_count(&self) -> usize {
        self.large.group_count()
    }
}
