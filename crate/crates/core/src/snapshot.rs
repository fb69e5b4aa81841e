//! Serializable geometry of an engine state.

use num_traits::One;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineConfig, Mode};
use crate::geometry::{Item, ItemClass, ItemId, Rect};
use crate::grouping::Block;
use crate::narrow::Site;
use crate::num::{inv_pow2, qu, serde_q, Q};

/// How the items of a stack are laid out inside their holder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stack {
    /// From the bottom edge upward.
    Up,
    /// From the top edge downward.
    Down,
    /// From the left edge rightward, bottoms on the holder's bottom edge.
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HolderKind {
    Container,
    DContainer,
    Shelf,
    FSlot,
    NBuffer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Holder {
    pub id: String,
    pub kind: HolderKind,
    pub rect: Rect,
    /// Enclosing holder, e.g. the D-container of a shelf.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub stacks: Vec<(Stack, Vec<ItemId>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedItem {
    pub item: Item,
    pub class: ItemClass,
    pub rect: Rect,
    pub holder: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSnap {
    pub name: String,
    pub block: Block,
    pub containers: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSnap {
    pub id: String,
    #[serde(with = "serde_q")]
    pub y: Q,
}

/// Everything the validator and renderer need, with no reference to engine internals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub config: EngineConfig,
    pub mode: Mode,
    #[serde(with = "serde_q")]
    pub height: Q,
    pub k: u64,
    pub items: Vec<PlacedItem>,
    pub holders: Vec<Holder>,
    pub levels: Vec<LevelSnap>,
    /// Category chains, widest group first.
    pub categories: Vec<Vec<GroupSnap>>,
}

impl Engine {
    pub fn snapshot(&self) -> Snapshot {
        let hb = self.c.h_b();
        let mut holders = Vec::new();
        for (lid, lv) in &self.plan.levels {
            for (cid, x) in &lv.xs {
                let c = &self.large.containers[cid];
                holders.push(Holder {
                    id: cid.to_string(),
                    kind: HolderKind::Container,
                    rect: Rect::new(x.clone(), lv.y.clone(), c.width.clone(), hb.clone()),
                    parent: None,
                    stacks: vec![(Stack::Up, c.big.clone()), (Stack::Down, c.flat.clone())],
                });
            }
            if let Some(d) = &lv.dcont {
                holders.push(Holder {
                    id: format!("D{lid}"),
                    kind: HolderKind::DContainer,
                    rect: Rect::new(d.x.clone(), lv.y.clone(), d.w.clone(), hb.clone()),
                    parent: None,
                    stacks: vec![],
                });
            }
        }
        if let Some(y) = &self.nbuffer_y {
            holders.push(Holder {
                id: "N".into(),
                kind: HolderKind::NBuffer,
                rect: Rect::new(Q::from_integer(0.into()), y.clone(), Q::one(), hb.clone()),
                parent: None,
                stacks: vec![],
            });
        }
        for (l, row) in &self.fbuf.rows {
            let w = inv_pow2(*l);
            for (s, slot) in row.slots.iter().enumerate() {
                holders.push(Holder {
                    id: format!("F{l}.{s}"),
                    kind: HolderKind::FSlot,
                    rect: Rect::new(&w * qu(s as u64), row.y.clone(), w.clone(), row.height.clone()),
                    parent: None,
                    stacks: vec![(Stack::Up, slot.clone())],
                });
            }
        }
        for sh in self.shelves.map.values() {
            let parent = match sh.site {
                Site::Level(lid) => Some(format!("D{lid}")),
                Site::NBuffer => Some("N".into()),
                Site::Top | Site::Standalone => None,
            };
            holders.push(Holder {
                id: sh.id.to_string(),
                kind: HolderKind::Shelf,
                rect: Rect::new(sh.x.clone(), sh.y.clone(), sh.width.clone(), sh.height.clone()),
                parent,
                stacks: vec![(Stack::Right, sh.items.clone())],
            });
        }
        let holder_of = |id: ItemId| -> String {
            if let Some(c) = self.large.home.get(&id) {
                c.to_string()
            } else if let Some((l, s)) = self.fbuf.home.get(&id) {
                format!("F{l}.{s}")
            } else if let Some(s) = self.shelves.home.get(&id) {
                s.to_string()
            } else {
                String::new()
            }
        };
        let rects = self.rects();
        let items = self
            .classes
            .iter()
            .filter_map(|(id, class)| {
                let item = self.item(*id)?.clone();
                let rect = rects.get(id)?.clone();
                Some(PlacedItem { item, class: *class, rect, holder: holder_of(*id) })
            })
            .collect();
        let categories = self
            .large
            .cats
            .iter()
            .map(|cat| {
                let snap = |block: Block, g: &crate::containers::GroupId| GroupSnap {
                    name: self.large.key_of(*g).map(|k| k.to_string()).unwrap_or_else(|| g.to_string()),
                    block,
                    containers: self.large.groups[g].containers.iter().map(|c| c.to_string()).collect(),
                };
                cat.a.iter().map(|g| snap(Block::A, g)).chain(cat.b.iter().map(|g| snap(Block::B, g))).collect()
            })
            .collect();
        Snapshot {
            config: self.cfg.clone(),
            mode: self.mode,
            height: self.height(),
            k: self.k_struct,
            items,
            holders,
            levels: self.plan.levels.iter().map(|(id, lv)| LevelSnap { id: id.to_string(), y: lv.y.clone() }).collect(),
            categories,
        }
    }
}
