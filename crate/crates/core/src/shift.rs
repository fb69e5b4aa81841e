//! Shift, ShiftA, block balancing, and the big and flat insertion entry points.

use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::containers::{partition_flat, ContainerId, GroupId};
use crate::engine::{Engine, EngineError};
use crate::geometry::{Item, ItemId};
use crate::grouping::{self, Block};
use crate::num::{ceil_i64, inv_pow2, pow2, qu, serde_q, Q};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum StepMode {
    Place,
    LeftGroup,
    NewContainer,
    Front,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceStep {
    pub group: String,
    #[serde(with = "serde_q")]
    pub h_in: Q,
    #[serde(with = "serde_q")]
    pub h_out: Q,
    #[serde(with = "serde_q")]
    pub delta: Q,
    pub mode: StepMode,
    pub new_containers: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ShiftTrace {
    pub l: u32,
    #[serde(with = "serde_q")]
    pub h_s0: Q,
    pub steps: Vec<TraceStep>,
}

impl ShiftTrace {
    /// `h(S_out^j) <= h(S^0) + j + 1` for every step.
    pub fn step_bound_ok(&self) -> bool {
        self.steps.iter().enumerate().all(|(j, s)| s.h_out <= &self.h_s0 + qu(j as u64 + 1))
    }

    /// `h(S^d) <= h(S^0) + h_B - 2` at the last step.
    pub fn terminal_bound_ok(&self, hb: u64) -> bool {
        self.steps.last().is_none_or(|s| s.h_in <= &self.h_s0 + Q::from_integer((hb as i64 - 2).into()))
    }

    pub fn new_containers(&self) -> u64 {
        self.steps.iter().map(|s| s.new_containers).sum()
    }
}

impl Engine {
    fn heights(&self, ids: &[ItemId]) -> Q {
        ids.iter().map(|i| self.large.items[i].h.clone()).sum()
    }

    fn group_label(&self, g: GroupId) -> String {
        self.large.key_of(g).map(|k| k.to_string()).unwrap_or_else(|| g.to_string())
    }

    /// Nominal container count of `g` and whether it sits at either end of its chain.
    fn group_shape(&self, g: GroupId) -> (u64, bool) {
        let key = self.large.key_of(g).expect("group in chain");
        let chain = self.large.chain(key.l);
        let end = chain.first() == Some(&g) || chain.last() == Some(&g);
        (grouping::nominal(key.l, key.block, self.k_struct), end)
    }

    /// Takes items out of their containers, recording everything that may move.
    fn take_items(&mut self, ids: &[ItemId]) {
        for id in ids {
            if let Some(c) = self.large.home.get(id).copied() {
                self.mark_container(c);
                self.large.remove_item(*id);
            } else {
                self.mark_item(*id);
            }
        }
    }

    /// Place: big items one by one into the emptiest container, flat items in parts.
    pub(crate) fn place_items(&mut self, g: GroupId, ids: &[ItemId]) -> Result<(), EngineError> {
        let eps = self.c.epsilon.clone();
        let (flat, big): (Vec<ItemId>, Vec<ItemId>) = ids.iter().partition(|i| self.large.flat.contains(i));
        for id in big {
            let h = self.large.items[&id].h.clone();
            if let Some(c) = self.large.roomiest(g, &h) {
                self.mark_container(c);
            }
            self.large.place_big(g, id)?;
        }
        let refs: Vec<Item> = flat.iter().map(|i| self.large.items[i].clone()).collect();
        let refs: Vec<&Item> = refs.iter().collect();
        for part in partition_flat(&refs, &eps) {
            let h = self.heights(&part);
            if let Some(c) = self.large.roomiest(g, &h) {
                self.mark_container(c);
            }
            self.large.place_flat(g, &part, &eps)?;
        }
        Ok(())
    }

    fn add_containers(&mut self, g: GroupId, n: u64) -> Vec<ContainerId> {
        (0..n).map(|_| self.large.new_container(g)).collect()
    }

    /// Registers new containers with the plan, one level per container.
    fn commit_each(&mut self, conts: &[ContainerId]) -> Result<(), EngineError> {
        for c in conts {
            self.insert_containers(&[*c])?;
        }
        Ok(())
    }

    /// Shifts `s` into `target` (or a new front group when `None`), cascading leftward.
    pub(crate) fn shift(&mut self, l: u32, target: Option<GroupId>, s: Vec<ItemId>) -> Result<(), EngineError> {
        let hb1 = self.c.h_b1();
        let mut trace = ShiftTrace { l, h_s0: self.heights(&s), steps: vec![] };
        let mut target = target;
        let mut s = s;
        let mut guard = 0;
        loop {
            guard += 1;
            if guard > 10 * self.large.group_count() + 10 {
                return Err(EngineError::Contract("shift cascade does not terminate".into()));
            }
            let Some(g) = target else {
                self.shift_front(l, s, &mut trace)?;
                break;
            };
            let h_in = self.heights(&s);
            let mut k = self.large.groups[&g].k();
            let base = &self.large.groups[&g].h + &h_in;
            let mut delta = &base - &hb1 * qu(k);
            let label = self.group_label(g);
            if !delta.is_positive() {
                self.take_items(&s);
                self.place_items(g, &s)?;
                trace.steps.push(TraceStep { group: label, h_in, h_out: Q::zero(), delta, mode: StepMode::Place, new_containers: 0 });
                break;
            }
            let (nom, end) = self.group_shape(g);
            let mut fresh = Vec::new();
            if end && k < nom {
                let want = ceil_i64(&(&delta / &hb1)).max(1) as u64;
                fresh = self.add_containers(g, want.min(nom - k));
                k += fresh.len() as u64;
                delta = &base - &hb1 * qu(k);
                if !delta.is_positive() {
                    self.take_items(&s);
                    self.place_items(g, &s)?;
                    let n = fresh.len() as u64;
                    self.commit_each(&fresh)?;
                    trace.steps.push(TraceStep {
                        group: label,
                        h_in,
                        h_out: Q::zero(),
                        delta,
                        mode: StepMode::NewContainer,
                        new_containers: n,
                    });
                    break;
                }
            }
            // Left group: the widest items of g and S move on to the left neighbour.
            let out = {
                let items = &self.large.items;
                let mut extra: Vec<&Item> = s.iter().map(|i| &items[i]).collect();
                extra.sort_by(crate::containers::widest_first);
                let mut own = self.large.groups[&g].order.iter().map(|(_, i)| &items[i]).peekable();
                let mut extra = extra.into_iter().peekable();
                let merged = std::iter::from_fn(|| match (own.peek(), extra.peek()) {
                    (Some(a), Some(b)) if crate::containers::widest_first(a, b).is_le() => own.next(),
                    (Some(_), None) => own.next(),
                    _ => extra.next(),
                });
                crate::containers::widest_prefix(merged, &delta).0
            };
            let h_out = self.heights(&out);
            let out_set: std::collections::BTreeSet<ItemId> = out.iter().copied().collect();
            let stay: Vec<ItemId> = s.iter().copied().filter(|i| !out_set.contains(i)).collect();
            self.take_items(&out);
            self.take_items(&stay);
            self.place_items(g, &stay)?;
            let n = fresh.len() as u64;
            self.commit_each(&fresh)?;
            trace.steps.push(TraceStep { group: label, h_in, h_out, delta, mode: StepMode::LeftGroup, new_containers: n });
            let chain = self.large.chain(l);
            let pos = chain.iter().position(|x| *x == g).expect("group in chain");
            target = if pos == 0 { None } else { Some(chain[pos - 1]) };
            s = out;
        }
        self.scratch.traces.push(trace);
        Ok(())
    }

    /// Opens new groups in front of block A; wide sets are split from the narrow end.
    fn shift_front(&mut self, l: u32, s: Vec<ItemId>, trace: &mut ShiftTrace) -> Result<(), EngineError> {
        let hb1 = self.c.h_b1();
        let h_in = self.heights(&s);
        let nom = grouping::nominal(l, Block::A, self.k_struct.max(1));
        let mut sorted: Vec<ItemId> = s.clone();
        let items = &self.large.items;
        sorted.sort_by(|a, b| items[b].w.cmp(&items[a].w).then(a.cmp(b)));
        let cap = &hb1 * qu(nom);
        // Build groups from the narrow end; each new group goes in front of the previous one.
        let mut parts: Vec<Vec<ItemId>> = Vec::new();
        let mut cur: Vec<ItemId> = Vec::new();
        let mut h = Q::zero();
        for id in sorted.iter().rev() {
            let ih = &self.large.items[id].h;
            if !cur.is_empty() && &h + ih > cap {
                parts.push(std::mem::take(&mut cur));
                h = Q::zero();
            }
            h += ih;
            cur.push(*id);
        }
        if !cur.is_empty() {
            parts.push(cur);
        }
        let mut created = 0;
        self.take_items(&s);
        for (n, part) in parts.iter().enumerate() {
            let ph = self.heights(part);
            let k = if n + 1 == parts.len() { ceil_i64(&(&ph / &hb1)).max(1) as u64 } else { nom };
            let g = self.large.new_group(l, inv_pow2(l));
            self.large.cats[l as usize].a.insert(0, g);
            let conts = self.add_containers(g, k);
            self.place_items(g, part)?;
            self.commit_each(&conts)?;
            created += k;
        }
        trace.steps.push(TraceStep {
            group: format!("({l},A,-1)"),
            delta: h_in_delta(&h_in, &hb1),
            h_in,
            h_out: Q::zero(),
            mode: StepMode::Front,
            new_containers: created,
        });
        Ok(())
    }

    fn suitable_group(&self, l: u32, w: &Q) -> Option<GroupId> {
        let chain = self.large.chain(l);
        grouping::suitable_index(&self.large.ranges(l), w).map(|j| chain[j])
    }

    pub(crate) fn insert_big(&mut self, id: ItemId) -> Result<(), EngineError> {
        let w = self.large.items[&id].w.clone();
        let l = grouping::category_of(&w, &self.c.epsilon).map_err(|e| EngineError::Contract(e.to_string()))?;
        let target = if self.large.chain(l).is_empty() {
            None
        } else {
            Some(self.suitable_group(l, &w).ok_or_else(|| EngineError::Contract(format!("no suitable group for {id}")))?)
        };
        self.shift(l, target, vec![id])?;
        self.balance_blocks()
    }

    pub(crate) fn insert_flat(&mut self, id: ItemId) -> Result<(), EngineError> {
        let cap = self.fbuffer_online_cap();
        if self.fbuffer_try(id, &cap) {
            // Buffered flats still count toward kappa.
            return self.balance_blocks();
        }
        self.scratch.fbuffer_flush = true;
        let w = self.large.items[&id].w.clone();
        let l = grouping::category_of(&w, &self.c.epsilon).map_err(|e| EngineError::Contract(e.to_string()))?;
        let mut pending = self.fbuffer_take(l);
        pending.push(id);
        let eps = self.c.epsilon.clone();
        for g in self.large.chain(l).into_iter().rev() {
            let chain = self.large.chain(l);
            let Some(j) = chain.iter().position(|x| *x == g) else { continue };
            let ranges = self.large.ranges(l);
            let fits = |w: &Q| {
                (j == 0 || ranges[j - 1].w_min.as_ref().is_none_or(|m| m >= w))
                    && (j + 1 == ranges.len() || ranges[j + 1].w_max.as_ref().is_none_or(|m| m < w))
            };
            let (mine, rest): (Vec<ItemId>, Vec<ItemId>) = pending.iter().partition(|i| fits(&self.large.items[i].w));
            pending = rest;
            if mine.is_empty() {
                continue;
            }
            for part in self.flat_parts(&mine, &eps) {
                self.shift(l, Some(g), part)?;
            }
        }
        if !pending.is_empty() {
            if !self.large.chain(l).is_empty() {
                return Err(EngineError::Contract(format!("{} buffered items without a suitable group", pending.len())));
            }
            for part in self.flat_parts(&pending, &eps) {
                let target = if self.large.chain(l).is_empty() {
                    None
                } else {
                    let w = self.large.items[&part[0]].w.clone();
                    self.suitable_group(l, &w)
                };
                self.shift(l, target, part)?;
            }
        }
        self.balance_blocks()
    }

    /// Widest-first parts of height in `(1 - eps, 1]`, the last one possibly smaller.
    fn flat_parts(&self, ids: &[ItemId], eps: &Q) -> Vec<Vec<ItemId>> {
        let mut items: Vec<&Item> = ids.iter().map(|i| &self.large.items[i]).collect();
        items.sort_by(|a, b| b.w.cmp(&a.w).then(a.id.cmp(&b.id)));
        partition_flat(&items, eps)
    }

    /// Moves `(l,B,0)` to the end of block A, pulling widest items leftward through block B.
    pub(crate) fn shift_a(&mut self, l: u32) -> Result<(), EngineError> {
        let b = self.large.cats[l as usize].b.clone();
        let Some(&g0) = b.first() else {
            return Err(EngineError::Contract(format!("block B of category {l} is empty")));
        };
        self.scratch.shift_a += 1;
        let hb1 = self.c.h_b1();
        let fresh = self.add_containers(g0, pow2(l));
        let nom_b = grouping::nominal(l, Block::B, self.k_struct);
        for i in 0..b.len().saturating_sub(1) {
            let gi = b[i];
            let u = if i == 0 { &hb1 * qu(self.large.groups[&gi].k()) } else { &hb1 * qu(nom_b) };
            let s_min = u - &self.large.groups[&gi].h - Q::one();
            if !s_min.is_positive() {
                continue;
            }
            let take = {
                let mut pool: Vec<&Item> = Vec::new();
                let mut h = Q::zero();
                'outer: for g in &b[i + 1..] {
                    for (_, id) in &self.large.groups[g].order {
                        if h >= s_min {
                            break 'outer;
                        }
                        let it = &self.large.items[id];
                        h += &it.h;
                        pool.push(it);
                    }
                }
                pool.iter().map(|i| i.id).collect::<Vec<_>>()
            };
            self.take_items(&take);
            self.place_items(gi, &take)?;
        }
        self.insert_containers(&fresh)?;
        let cat = &mut self.large.cats[l as usize];
        cat.b.retain(|x| *x != g0);
        cat.a.push(g0);
        self.trim_tail(l)
    }

    /// Deletes empty groups at the right end and sheds surplus containers of the last group.
    pub(crate) fn trim_tail(&mut self, l: u32) -> Result<(), EngineError> {
        let hb1 = self.c.h_b1();
        while let Some(&last) = self.large.chain(l).last() {
            if self.large.groups[&last].h.is_zero() {
                let conts: Vec<ContainerId> = self.large.groups[&last].containers.iter().copied().collect();
                for c in conts {
                    self.delete_container(c)?;
                }
                self.forget_group(last);
                continue;
            }
            let gr = &self.large.groups[&last];
            let k = gr.k();
            let delta = &hb1 * qu(k.saturating_sub(1)) - &gr.h;
            if delta.is_positive() {
                let d = ceil_i64(&(&delta / &hb1)) as usize;
                let mut by_fill: Vec<(Q, ContainerId)> =
                    gr.containers.iter().map(|c| (self.large.containers[c].fill.clone(), *c)).collect();
                by_fill.sort();
                let victims: Vec<ContainerId> = by_fill.into_iter().take(d).map(|(_, c)| c).collect();
                let ids: Vec<ItemId> = victims.iter().flat_map(|c| self.large.containers[c].items()).collect();
                self.take_items(&ids);
                for c in &victims {
                    self.delete_container(*c)?;
                }
                self.place_items(last, &ids)?;
            }
            break;
        }
        Ok(())
    }

    /// Runs ShiftA until the block balance shares an interval with `frac(kappa)`.
    pub(crate) fn balance_blocks(&mut self) -> Result<(), EngineError> {
        let mut guard = 0u64;
        loop {
            let (a, b) = self.block_counts();
            let n = a + b;
            if n == 0 {
                return Ok(());
            }
            let i = grouping::interval_index(&grouping::frac(&self.kappa()), n);
            if i == a {
                return Ok(());
            }
            guard += 1;
            if guard > 8 * n + 64 {
                return Err(EngineError::Contract("block balancing does not converge".into()));
            }
            if b == 0 {
                for cat in &mut self.large.cats {
                    cat.b = std::mem::take(&mut cat.a);
                }
                self.k_struct += 1;
                self.scratch.renames += 1;
                continue;
            }
            let l = (0..self.large.cats.len())
                .filter(|l| !self.large.cats[*l].b.is_empty())
                .max_by(|x, y| self.large.cats[*x].b.len().cmp(&self.large.cats[*y].b.len()).then(y.cmp(x)))
                .expect("some block B is nonempty") as u32;
            self.shift_a(l)?;
        }
    }
}

fn h_in_delta(h: &Q, hb1: &Q) -> Q {
    h - hb1 * qu(ceil_i64(&(h / hb1)).max(1) as u64)
}
