//! Containers, groups, and the item-level moves between them.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::geometry::{Item, ItemId};
use crate::grouping::{Block, GroupKey, WidthRange};
use crate::num::{fmt_q, qu, Q};
use crate::plan::LevelId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContainerId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupId(pub u32);

impl fmt::Display for ContainerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ContainerError {
    #[error("no container of {0} can take height {1}")]
    NoRoom(GroupId, String),
    #[error("container {0} is not empty")]
    NotEmpty(ContainerId),
    #[error("unknown {0}")]
    Unknown(String),
}

/// A fixed-height box: big items stacked from the bottom, flat items hanging from the top.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub id: ContainerId,
    pub group: GroupId,
    pub big: Vec<ItemId>,
    /// Index 0 touches the top edge; widths are non-decreasing downward.
    pub flat: Vec<ItemId>,
    pub fill: Q,
    pub width: Q,
    pub level: Option<LevelId>,
}

impl Container {
    pub fn is_empty(&self) -> bool {
        self.big.is_empty() && self.flat.is_empty()
    }

    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.big.iter().chain(self.flat.iter()).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub id: GroupId,
    pub l: u32,
    pub containers: BTreeSet<ContainerId>,
    pub h: Q,
    /// Items ordered widest first, ties by id.
    pub order: BTreeSet<(Reverse<Q>, ItemId)>,
    /// Width reserved for this group's containers in the level plan.
    pub pw: Q,
}

impl Group {
    pub fn w_max(&self) -> Option<Q> {
        self.order.first().map(|(Reverse(w), _)| w.clone())
    }

    pub fn w_min(&self) -> Option<Q> {
        self.order.last().map(|(Reverse(w), _)| w.clone())
    }

    pub fn k(&self) -> u64 {
        self.containers.len() as u64
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Category {
    pub a: Vec<GroupId>,
    pub b: Vec<GroupId>,
}

impl Category {
    pub fn chain(&self) -> impl Iterator<Item = GroupId> + '_ {
        self.a.iter().chain(self.b.iter()).copied()
    }

    pub fn len(&self) -> usize {
        self.a.len() + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Widest-first prefix of `pool` whose height reaches `s_min`.
/// Returns the chosen ids and whether the pool fell short.
pub fn widest_items(pool: &[&Item], s_min: &Q) -> (Vec<ItemId>, bool) {
    let mut sorted: Vec<&Item> = pool.to_vec();
    sorted.sort_by(widest_first);
    widest_prefix(sorted, s_min)
}

pub fn widest_first(a: &&Item, b: &&Item) -> std::cmp::Ordering {
    b.w.cmp(&a.w).then(a.id.cmp(&b.id))
}

/// Same as [`widest_items`] for a pool that is already sorted widest first.
pub fn widest_prefix<'a>(sorted: impl IntoIterator<Item = &'a Item>, s_min: &Q) -> (Vec<ItemId>, bool) {
    let mut h = Q::zero();
    let mut out = Vec::new();
    for it in sorted {
        if !out.is_empty() && h >= *s_min {
            break;
        }
        h += &it.h;
        out.push(it.id);
    }
    let short = h < *s_min;
    (out, short)
}

/// Greedy partition: a part closes once its height exceeds `1 - eps`.
pub fn partition_flat(items: &[&Item], eps: &Q) -> Vec<Vec<ItemId>> {
    let cap = Q::from_integer(1.into()) - eps;
    let mut parts = Vec::new();
    let mut cur = Vec::new();
    let mut h = Q::zero();
    for it in items {
        cur.push(it.id);
        h += &it.h;
        if h > cap {
            parts.push(std::mem::take(&mut cur));
            h = Q::zero();
        }
    }
    if !cur.is_empty() {
        parts.push(cur);
    }
    parts
}

/// All large items, their containers, groups, and category chains.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Large {
    pub items: BTreeMap<ItemId, Item>,
    pub flat: BTreeSet<ItemId>,
    pub home: BTreeMap<ItemId, ContainerId>,
    pub containers: BTreeMap<ContainerId, Container>,
    pub groups: BTreeMap<GroupId, Group>,
    pub cats: Vec<Category>,
    pub hb: u64,
    next_c: u32,
    next_g: u32,
}

impl Large {
    pub fn new(categories: u32, hb: u64) -> Self {
        Self { cats: vec![Category::default(); categories as usize], hb, ..Default::default() }
    }

    pub fn item(&self, id: ItemId) -> &Item {
        &self.items[&id]
    }

    pub fn group(&self, g: GroupId) -> &Group {
        &self.groups[&g]
    }

    pub fn container(&self, c: ContainerId) -> &Container {
        &self.containers[&c]
    }

    pub fn group_of_item(&self, id: ItemId) -> Option<GroupId> {
        self.home.get(&id).map(|c| self.containers[c].group)
    }

    pub fn new_group(&mut self, l: u32, pw: Q) -> GroupId {
        let id = GroupId(self.next_g);
        self.next_g += 1;
        self.groups.insert(id, Group { id, l, containers: BTreeSet::new(), h: Q::zero(), order: BTreeSet::new(), pw });
        id
    }

    pub fn new_container(&mut self, g: GroupId) -> ContainerId {
        let id = ContainerId(self.next_c);
        self.next_c += 1;
        self.containers.insert(id, Container { id, group: g, big: vec![], flat: vec![], fill: Q::zero(), width: Q::zero(), level: None });
        self.groups.get_mut(&g).expect("group").containers.insert(id);
        id
    }

    /// Removes an empty container from its group; the caller detaches it from the plan.
    pub fn drop_container(&mut self, c: ContainerId) -> Result<Container, ContainerError> {
        let cont = self.containers.get(&c).ok_or_else(|| ContainerError::Unknown(c.to_string()))?;
        if !cont.is_empty() {
            return Err(ContainerError::NotEmpty(c));
        }
        let cont = self.containers.remove(&c).expect("present");
        if let Some(g) = self.groups.get_mut(&cont.group) {
            g.containers.remove(&c);
        }
        Ok(cont)
    }

    /// Removes a group with no containers from its category chain.
    pub fn drop_group(&mut self, g: GroupId) {
        let l = self.groups[&g].l as usize;
        let cat = &mut self.cats[l];
        cat.a.retain(|x| *x != g);
        cat.b.retain(|x| *x != g);
        self.groups.remove(&g);
    }

    pub fn chain(&self, l: u32) -> Vec<GroupId> {
        self.cats[l as usize].chain().collect()
    }

    pub fn key_of(&self, g: GroupId) -> Option<GroupKey> {
        let l = self.groups.get(&g)?.l;
        let cat = &self.cats[l as usize];
        if let Some(r) = cat.a.iter().position(|x| *x == g) {
            return Some(GroupKey::new(l, Block::A, r as i64));
        }
        cat.b.iter().position(|x| *x == g).map(|r| GroupKey::new(l, Block::B, r as i64))
    }

    pub fn ranges(&self, l: u32) -> Vec<WidthRange> {
        self.chain(l)
            .into_iter()
            .map(|g| {
                let gr = &self.groups[&g];
                WidthRange { w_min: gr.w_min(), w_max: gr.w_max() }
            })
            .collect()
    }

    fn refresh_width(&mut self, c: ContainerId) {
        let cont = &self.containers[&c];
        let w = cont.items().map(|i| self.items[&i].w.clone()).max().unwrap_or_else(Q::zero);
        self.containers.get_mut(&c).expect("container").width = w;
    }

    /// Takes an item out of its container; items above it in the big stack sink down.
    /// Returns the area of the items whose offset changed.
    pub fn remove_item(&mut self, id: ItemId) -> Q {
        let c = self.home.remove(&id).expect("item has a container");
        let it = self.items[&id].clone();
        let cont = self.containers.get_mut(&c).expect("container");
        let mut moved = Q::zero();
        if let Some(p) = cont.big.iter().position(|x| *x == id) {
            cont.big.remove(p);
            for above in &cont.big[p..] {
                moved += self.items[above].size();
            }
        } else if let Some(p) = cont.flat.iter().position(|x| *x == id) {
            cont.flat.remove(p);
            for below in &cont.flat[p..] {
                moved += self.items[below].size();
            }
        }
        cont.fill -= &it.h;
        let g = self.groups.get_mut(&cont.group).expect("group");
        g.h -= &it.h;
        g.order.remove(&(Reverse(it.w.clone()), id));
        self.refresh_width(c);
        moved
    }

    fn attach(&mut self, c: ContainerId, id: ItemId) {
        let it = self.items[&id].clone();
        let cont = self.containers.get_mut(&c).expect("container");
        cont.fill += &it.h;
        if it.w > cont.width {
            cont.width = it.w.clone();
        }
        let g = self.groups.get_mut(&cont.group).expect("group");
        g.h += &it.h;
        g.order.insert((Reverse(it.w), id));
        self.home.insert(id, c);
    }

    /// Lowest-fill container of `g` with room for `h`, ties by id.
    pub fn roomiest(&self, g: GroupId, h: &Q) -> Option<ContainerId> {
        let hb = qu(self.hb);
        self.groups[&g]
            .containers
            .iter()
            .map(|c| &self.containers[c])
            .filter(|c| &c.fill + h <= hb)
            .min_by(|a, b| a.fill.cmp(&b.fill).then(a.id.cmp(&b.id)))
            .map(|c| c.id)
    }

    pub fn place_big(&mut self, g: GroupId, id: ItemId) -> Result<ContainerId, ContainerError> {
        let h = self.items[&id].h.clone();
        let c = self.roomiest(g, &h).ok_or_else(|| ContainerError::NoRoom(g, fmt_q(&h)))?;
        self.containers.get_mut(&c).expect("container").big.push(id);
        self.attach(c, id);
        Ok(c)
    }

    /// Places flat items part by part; each touched flat stack is resorted.
    pub fn place_flat(&mut self, g: GroupId, ids: &[ItemId], eps: &Q) -> Result<Vec<ContainerId>, ContainerError> {
        let items: Vec<Item> = ids.iter().map(|i| self.items[i].clone()).collect();
        let refs: Vec<&Item> = items.iter().collect();
        let mut touched = Vec::new();
        for part in partition_flat(&refs, eps) {
            let h: Q = part.iter().map(|i| self.items[i].h.clone()).sum();
            let c = self.roomiest(g, &h).ok_or_else(|| ContainerError::NoRoom(g, fmt_q(&h)))?;
            for id in &part {
                self.containers.get_mut(&c).expect("container").flat.push(*id);
                self.attach(c, *id);
            }
            self.resort_flat(c);
            touched.push(c);
        }
        Ok(touched)
    }

    pub fn resort_flat(&mut self, c: ContainerId) {
        let items = &self.items;
        let cont = self.containers.get_mut(&c).expect("container");
        cont.flat.sort_by(|a, b| items[a].w.cmp(&items[b].w).then(a.cmp(b)));
    }

    /// Places a mixed set: big items one by one, then flat items in parts.
    pub fn place_mixed(&mut self, g: GroupId, ids: &[ItemId], eps: &Q) -> Result<(), ContainerError> {
        let (flat, big): (Vec<ItemId>, Vec<ItemId>) = ids.iter().partition(|i| self.flat.contains(i));
        for id in big {
            self.place_big(g, id)?;
        }
        if !flat.is_empty() {
            self.place_flat(g, &flat, eps)?;
        }
        Ok(())
    }

    /// Offsets of an item inside its container relative to the container's bottom-left corner.
    pub fn offset_in_container(&self, id: ItemId) -> Q {
        let c = &self.containers[&self.home[&id]];
        if let Some(p) = c.big.iter().position(|x| *x == id) {
            c.big[..p].iter().map(|i| self.items[i].h.clone()).sum()
        } else {
            let p = c.flat.iter().position(|x| *x == id).expect("item in container");
            let above: Q = c.flat[..=p].iter().map(|i| self.items[i].h.clone()).sum();
            qu(self.hb) - above
        }
    }

    pub fn group_height_recomputed(&self, g: GroupId) -> Q {
        self.groups[&g].containers.iter().flat_map(|c| self.containers[c].items()).map(|i| self.items[&i].h.clone()).sum()
    }

    pub fn group_count(&self) -> usize {
        self.groups.len()
    }
}
