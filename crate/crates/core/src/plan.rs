//! Level plan: configuration LP state, level geometry, container insertion and deletion, Improve.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::containers::{ContainerId, GroupId};
use crate::engine::{Engine, EngineError, Mode};
use crate::lp::{self, Pattern};
use crate::narrow::ShelfId;
use crate::num::{fmt_q, inv_pow2, qmax, qmin, qu, serde_q, Q};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LevelId(pub u32);

impl fmt::Display for LevelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

/// Pattern keyed by group identity: `(group, count)` sorted by group.
pub type PKey = Vec<(GroupId, u32)>;

/// Gap to the right of a level's containers, holding narrow shelves bottom-up.
#[derive(Clone, Debug, PartialEq)]
pub struct DCont {
    pub x: Q,
    pub w: Q,
    pub shelves: Vec<ShelfId>,
    pub used: Q,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub id: LevelId,
    pub y: Q,
    pub xs: BTreeMap<ContainerId, Q>,
    pub dcont: Option<DCont>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Plan {
    pub levels: BTreeMap<LevelId, Level>,
    /// Fractional solution over group-keyed patterns.
    pub x: BTreeMap<PKey, Q>,
    next: u32,
}

impl Plan {
    pub fn x_norm(&self) -> Q {
        self.x.values().sum()
    }

    pub fn y_norm(&self) -> u64 {
        self.levels.len() as u64
    }

    fn add_x(&mut self, key: PKey, delta: Q) {
        let v = self.x.entry(key.clone()).or_insert_with(Q::zero);
        *v += delta;
        if v.is_zero() {
            self.x.remove(&key);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum ImproveOutcome {
    Skipped(String),
    Fractional,
    Rebuilt,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImproveLog {
    pub alpha: u32,
    pub outcome: ImproveOutcome,
    #[serde(with = "serde_q")]
    pub x_before: Q,
    #[serde(with = "serde_q")]
    pub x_after: Q,
    pub y_before: u64,
    pub y_after: u64,
    #[serde(with = "serde_q")]
    pub lin: Q,
    pub changed_levels: usize,
    pub p_cap: u64,
    #[serde(with = "serde_q")]
    pub d_cap: Q,
    pub nnz_x: usize,
    pub nnz_y: usize,
}

impl ImproveLog {
    /// Checks the post-conditions against the pre-state values.
    pub fn contract_holds(&self, delta: &Q) -> bool {
        if matches!(self.outcome, ImproveOutcome::Skipped(_)) {
            return self.x_after <= self.x_before && self.y_after <= self.y_before;
        }
        let target = qmax(&(&self.x_before - qu(self.alpha as u64)), &((Q::one() + delta) * &self.lin));
        self.x_after <= target
            && self.y_after <= self.y_before
            && self.changed_levels as u64 <= self.p_cap
            && Q::from_integer(self.y_after.into()) <= &self.x_after + &self.d_cap
            && Q::from_integer((self.nnz_y as u64).into()) <= self.d_cap
    }
}

/// Support of `y` as patterns over the index space of `groups`.
fn to_index_pattern(key: &PKey, index: &BTreeMap<GroupId, usize>) -> Pattern {
    let mut p: Pattern = key.iter().map(|(g, n)| (index[g], *n)).collect();
    p.sort();
    p
}

/// Fills rounded patterns with concrete containers, trimming unused slots.
fn assign_levels(
    gs: &[GroupId],
    z: &[(Pattern, u64)],
    mut pools: BTreeMap<GroupId, Vec<ContainerId>>,
) -> Result<Vec<Vec<ContainerId>>, EngineError> {
    let mut out = Vec::new();
    for (p, n) in z {
        for _ in 0..*n {
            let conts: Vec<ContainerId> = p
                .iter()
                .flat_map(|(i, cnt)| {
                    let pool = pools.get_mut(&gs[*i]).expect("pool");
                    let keep = pool.len().saturating_sub(*cnt as usize);
                    pool.split_off(keep)
                })
                .collect();
            if !conts.is_empty() {
                out.push(conts);
            }
        }
    }
    if pools.values().any(|p| !p.is_empty()) {
        return Err(EngineError::Contract("rounded LP solution leaves containers unplaced".into()));
    }
    Ok(out)
}

impl Engine {
    // ---- pattern bookkeeping ----

    pub fn level_key(&self, lid: LevelId) -> PKey {
        let mut m: BTreeMap<GroupId, u32> = BTreeMap::new();
        for c in self.plan.levels[&lid].xs.keys() {
            *m.entry(self.large.containers[c].group).or_default() += 1;
        }
        m.into_iter().collect()
    }

    pub fn y_counts(&self) -> BTreeMap<PKey, u64> {
        let mut y = BTreeMap::new();
        for lid in self.plan.levels.keys() {
            *y.entry(self.level_key(*lid)).or_default() += 1;
        }
        y
    }

    /// Width classes of the LP: groups with containers on levels, their planned widths, and counts.
    /// Containers still being filled are not part of the plan yet.
    pub fn plan_groups(&self) -> (Vec<GroupId>, Vec<Q>, Vec<u64>) {
        let mut gs = Vec::new();
        let mut w = Vec::new();
        let mut b = Vec::new();
        for g in self.large.groups.values() {
            let n = g.containers.iter().filter(|c| self.large.containers[c].level.is_some()).count() as u64;
            if n > 0 {
                gs.push(g.id);
                w.push(g.pw.clone());
                b.push(n);
            }
        }
        (gs, w, b)
    }

    fn key_width(&self, key: &PKey) -> Q {
        key.iter().map(|(g, n)| &self.large.groups[g].pw * qu(*n as u64)).sum()
    }

    // ---- levels ----

    fn next_level_id(&mut self) -> LevelId {
        let id = LevelId(self.plan.next);
        self.plan.next += 1;
        id
    }

    /// Opens a level holding `conts` left to right.
    pub(crate) fn new_level(&mut self, conts: &[ContainerId]) -> LevelId {
        let id = self.next_level_id();
        let y = self.bands.alloc(&self.c.h_b());
        let mut xs = BTreeMap::new();
        let mut cursor = Q::zero();
        for c in conts {
            xs.insert(*c, cursor.clone());
            cursor += &self.large.containers[c].width;
            self.large.containers.get_mut(c).expect("container").level = Some(id);
        }
        self.plan.levels.insert(id, Level { id, y, xs, dcont: None });
        self.ensure_dcont(id);
        self.journal.dirty.insert(id);
        id
    }

    fn reserved_width(&self, lid: LevelId) -> Q {
        self.key_width(&self.level_key(lid))
    }

    fn extent(&self, lid: LevelId) -> Q {
        let lv = &self.plan.levels[&lid];
        lv.xs.iter().map(|(c, x)| x + &self.large.containers[c].width).max().unwrap_or_else(Q::zero)
    }

    /// Gives an online level a D-container when the gap is at least `eps` wide.
    fn ensure_dcont(&mut self, lid: LevelId) {
        if self.mode != Mode::Online || self.plan.levels[&lid].dcont.is_some() {
            return;
        }
        let x = qmax(&self.reserved_width(lid), &self.extent(lid));
        let w = Q::one() - &x;
        if w >= self.c.epsilon {
            self.plan.levels.get_mut(&lid).expect("level").dcont = Some(DCont { x, w, shelves: vec![], used: Q::zero() });
        }
    }

    /// Removes a level: its containers lose their position and its shelves are displaced.
    pub(crate) fn remove_level(&mut self, lid: LevelId) {
        let conts: Vec<ContainerId> = self.plan.levels[&lid].xs.keys().copied().collect();
        for c in &conts {
            self.mark_container(*c);
        }
        let lv = self.plan.levels.remove(&lid).expect("level");
        for c in conts {
            if let Some(cont) = self.large.containers.get_mut(&c) {
                cont.level = None;
            }
        }
        if let Some(d) = lv.dcont {
            for s in d.shelves {
                self.displace_shelf(s);
            }
        }
        self.bands.free(&lv.y);
        self.journal.dirty.remove(&lid);
    }

    fn displace_dcont(&mut self, lid: LevelId) {
        if let Some(d) = self.plan.levels.get_mut(&lid).and_then(|l| l.dcont.take()) {
            for s in d.shelves {
                self.displace_shelf(s);
            }
        }
    }

    /// Stretch: push containers right to resolve overlaps; Align when that overflows.
    pub(crate) fn relayout_level(&mut self, lid: LevelId) -> Result<(), EngineError> {
        let lv = &self.plan.levels[&lid];
        let mut order: Vec<(Q, ContainerId)> = lv.xs.iter().map(|(c, x)| (x.clone(), *c)).collect();
        order.sort();
        let width = |c: &ContainerId| self.large.containers[c].width.clone();
        let limit = lv.dcont.as_ref().map(|d| d.x.clone()).unwrap_or_else(Q::one);
        let mut placed: Vec<(ContainerId, Q)> = Vec::with_capacity(order.len());
        let mut cursor = Q::zero();
        for (x, c) in &order {
            let nx = qmax(x, &cursor);
            cursor = &nx + width(c);
            placed.push((*c, nx));
        }
        if cursor > limit {
            cursor = Q::zero();
            placed.clear();
            for (_, c) in &order {
                placed.push((*c, cursor.clone()));
                cursor += width(c);
            }
        }
        if cursor > limit {
            self.displace_dcont(lid);
        }
        if cursor > Q::one() {
            return Err(EngineError::Contract(format!("{lid} needs width {}", fmt_q(&cursor))));
        }
        for (c, nx) in placed {
            if self.plan.levels[&lid].xs[&c] != nx {
                self.mark_container(c);
                self.plan.levels.get_mut(&lid).expect("level").xs.insert(c, nx);
            }
        }
        self.ensure_dcont(lid);
        Ok(())
    }

    /// Brings planned widths and level geometry up to date at the end of a step.
    pub(crate) fn settle_levels(&mut self) -> Result<(), EngineError> {
        let raised: Vec<GroupId> = (0..self.c.categories()).flat_map(|l| self.refresh_plan_widths(l)).collect();
        if !raised.is_empty() {
            self.repair_levels(&raised)?;
        }
        let dirty: Vec<LevelId> = std::mem::take(&mut self.journal.dirty).into_iter().collect();
        for lid in dirty {
            if self.plan.levels.contains_key(&lid) {
                self.relayout_level(lid)?;
            }
        }
        self.journal.dirty.clear();
        Ok(())
    }

    /// Recomputes planned widths of category `l`; returns groups whose width had to grow.
    ///
    /// The cap is the narrowest item of the nearest nonempty group to the left: insertions
    /// respect it and shifts only bring in narrower items from the right.
    pub(crate) fn refresh_plan_widths(&mut self, l: u32) -> Vec<GroupId> {
        let top = inv_pow2(l);
        let mut lefts: Vec<Q> = Vec::new();
        let mut raised = Vec::new();
        for g in self.large.chain(l) {
            let gr = &self.large.groups[&g];
            let cap = lefts.last().map(|w| qmin(&top, w)).unwrap_or_else(|| top.clone());
            let need = gr.w_max().unwrap_or_else(Q::zero);
            let pw = qmax(&cap, &need);
            if pw > gr.pw && gr.k() > 0 {
                raised.push(g);
            }
            if let Some(w) = gr.w_min() {
                lefts.push(w);
            }
            self.large.groups.get_mut(&g).expect("group").pw = pw;
        }
        raised
    }

    /// Moves containers of widened groups out of levels whose reserved width now exceeds one.
    fn repair_levels(&mut self, raised: &[GroupId]) -> Result<(), EngineError> {
        let raised: BTreeSet<GroupId> = raised.iter().copied().collect();
        let lids: Vec<LevelId> = self.plan.levels.keys().copied().collect();
        let mut evicted: Vec<ContainerId> = Vec::new();
        for lid in lids {
            let key = self.level_key(lid);
            if !key.iter().any(|(g, _)| raised.contains(g)) || self.key_width(&key) <= Q::one() {
                continue;
            }
            let mut conts: Vec<ContainerId> = self.plan.levels[&lid].xs.keys().copied().collect();
            conts.retain(|c| raised.contains(&self.large.containers[c].group));
            for c in conts {
                if self.reserved_width(lid) <= Q::one() {
                    break;
                }
                self.mark_container(c);
                let lv = self.plan.levels.get_mut(&lid).expect("level");
                lv.xs.remove(&c);
                self.large.containers.get_mut(&c).expect("container").level = None;
                evicted.push(c);
            }
            self.journal.dirty.insert(lid);
        }
        for c in evicted {
            self.new_level(&[c]);
        }
        self.drop_empty_levels();
        self.reset_x()?;
        Ok(())
    }

    fn drop_empty_levels(&mut self) {
        let empty: Vec<LevelId> = self
            .plan
            .levels
            .values()
            .filter(|l| l.xs.is_empty() && l.dcont.as_ref().is_none_or(|d| d.shelves.is_empty()))
            .map(|l| l.id)
            .collect();
        for lid in empty {
            self.remove_level(lid);
        }
        self.clamp_x();
    }

    /// Keeps `x <= y` after levels disappear.
    fn clamp_x(&mut self) {
        let y = self.y_counts();
        let keys: Vec<PKey> = self.plan.x.keys().cloned().collect();
        for k in keys {
            let cap = qu(y.get(&k).copied().unwrap_or(0));
            if self.plan.x[&k] > cap {
                if cap.is_zero() {
                    self.plan.x.remove(&k);
                } else {
                    self.plan.x.insert(k, cap);
                }
            }
        }
    }

    /// Best fractional solution supported on the realized levels.
    pub(crate) fn reset_x(&mut self) -> Result<(), EngineError> {
        let (gs, _, b) = self.plan_groups();
        let index: BTreeMap<GroupId, usize> = gs.iter().enumerate().map(|(i, g)| (*g, i)).collect();
        let y = self.y_counts();
        let keys: Vec<PKey> = y.keys().filter(|k| !k.is_empty()).cloned().collect();
        let cols: Vec<Pattern> = keys.iter().map(|k| to_index_pattern(k, &index)).collect();
        let upper: Vec<Q> = keys.iter().map(|k| qu(y[k])).collect();
        let bq: Vec<Q> = b.iter().map(|v| qu(*v)).collect();
        let xs = lp::solve_bounded(&cols, &upper, &bq, gs.len())?;
        self.plan.x = keys.into_iter().zip(xs).filter(|(_, v)| v.is_positive()).collect();
        Ok(())
    }

    // ---- container insertion and deletion ----

    /// One Improve call, then a fresh level holding `conts`.
    pub(crate) fn insert_containers(&mut self, conts: &[ContainerId]) -> Result<(), EngineError> {
        if self.mode == Mode::Online {
            let log = self.improve(1)?;
            self.scratch.improve.push(log);
        }
        let lid = self.new_level(conts);
        let key = self.level_key(lid);
        self.plan.add_x(key, Q::one());
        Ok(())
    }

    /// Takes an empty container out of its level and its group.
    pub(crate) fn delete_container(&mut self, c: ContainerId) -> Result<(), EngineError> {
        let cont = self.large.drop_container(c)?;
        let Some(lid) = cont.level else { return Ok(()) };
        // The container is already gone from its group, so this counts the remaining ones.
        let rest = self.level_key_without(lid, Some(c));
        let mut before = rest.clone();
        *before.entry(cont.group).or_default() += 1;
        let new: PKey = rest.into_iter().collect();
        let old: PKey = before.into_iter().collect();
        self.plan.levels.get_mut(&lid).expect("level").xs.remove(&c);
        let t = qmin(&Q::one(), self.plan.x.get(&old).unwrap_or(&Q::zero()));
        if t.is_positive() {
            self.plan.add_x(old, -t.clone());
            self.plan.add_x(new, t);
        }
        self.journal.dirty.insert(lid);
        self.drop_empty_levels();
        Ok(())
    }

    /// Group counts of the containers still on a level.
    fn level_key_without(&self, lid: LevelId, skip: Option<ContainerId>) -> BTreeMap<GroupId, u32> {
        let mut m = BTreeMap::new();
        for c in self.plan.levels[&lid].xs.keys() {
            if Some(*c) != skip {
                if let Some(cont) = self.large.containers.get(c) {
                    *m.entry(cont.group).or_default() += 1;
                }
            }
        }
        m
    }

    /// Drops a group that has no containers left.
    pub(crate) fn forget_group(&mut self, g: GroupId) {
        self.plan.x.retain(|k, v| !k.iter().any(|(h, _)| *h == g) || !v.is_zero());
        self.large.drop_group(g);
    }

    // ---- offline plan ----

    /// Solves the LP from scratch and realizes the rounded solution as fresh levels.
    pub(crate) fn rebuild_plan(&mut self) -> Result<(), EngineError> {
        let lids: Vec<LevelId> = self.plan.levels.keys().copied().collect();
        for lid in lids {
            self.remove_level(lid);
        }
        self.plan.x.clear();
        let gs: Vec<GroupId> = self.large.groups.values().filter(|g| g.k() > 0).map(|g| g.id).collect();
        let w: Vec<Q> = gs.iter().map(|g| self.large.groups[g].pw.clone()).collect();
        let b: Vec<u64> = gs.iter().map(|g| self.large.groups[g].k()).collect();
        let pools: BTreeMap<GroupId, Vec<ContainerId>> =
            gs.iter().map(|g| (*g, self.large.groups[g].containers.iter().copied().collect())).collect();
        self.realize(&gs, &w, &b, pools)?;
        self.reset_x()
    }

    /// Packs the given containers into new levels via LP and rounding up; returns the new levels.
    fn realize(
        &mut self,
        gs: &[GroupId],
        w: &[Q],
        b: &[u64],
        pools: BTreeMap<GroupId, Vec<ContainerId>>,
    ) -> Result<Vec<LevelId>, EngineError> {
        let sol = lp::solve_lp(w, b, self.c.inv_eps as u32)?;
        let fills = assign_levels(gs, &lp::round_to_integral(&sol.x), pools)?;
        Ok(fills.iter().map(|conts| self.new_level(conts)).collect())
    }

    // ---- Improve ----

    pub fn p_cap(&self, m: usize) -> u64 {
        crate::num::floor_u64(&(qu(8 * m as u64) / &self.c.improve_delta))
    }

    pub fn d_cap(&self, y_norm: u64, m: usize) -> Q {
        let eps = &self.c.epsilon;
        let delta = &self.c.improve_delta;
        let big = (Q::one() + qu(4) * eps) * (Q::one() + delta) - Q::one();
        &big * qu(y_norm) / (Q::one() + qu(2) * &big) + qu(m as u64)
    }

    /// Lowers `||x||` by `alpha` (or to within `1 + delta` of the LP optimum) while
    /// rebuilding at most `p_cap` levels; a no-op when the thresholds are not met.
    pub fn improve(&mut self, alpha: u32) -> Result<ImproveLog, EngineError> {
        let (gs, w, b) = self.plan_groups();
        let m = gs.len();
        let delta = self.c.improve_delta.clone();
        let x_norm = self.plan.x_norm();
        let y_norm = self.plan.y_norm();
        let mut log = ImproveLog {
            alpha,
            outcome: ImproveOutcome::Skipped(String::new()),
            x_before: x_norm.clone(),
            x_after: x_norm.clone(),
            y_before: y_norm,
            y_after: y_norm,
            lin: Q::zero(),
            changed_levels: 0,
            p_cap: self.p_cap(m),
            d_cap: self.d_cap(y_norm, m),
            nnz_x: self.plan.x.len(),
            nnz_y: self.y_counts().len(),
        };
        let inv_delta = Q::one() / &delta;
        let skip = |log: &mut ImproveLog, why: &str| log.outcome = ImproveOutcome::Skipped(why.into());
        if x_norm < qu(2 * alpha as u64) * (&inv_delta + Q::one()) || qu(y_norm) < qu(m as u64 + 2) * (&inv_delta + qu(2)) {
            skip(&mut log, "below size threshold");
            return Ok(log);
        }
        // Area and slot bounds let most calls skip the exact solve.
        let area: Q = w.iter().zip(&b).map(|(wi, bi)| wi * qu(*bi)).sum();
        let slots = qu(b.iter().sum::<u64>()) / qu(self.c.inv_eps);
        let lb = qmax(&area, &slots);
        let one_d = Q::one() + &delta;
        if x_norm <= &one_d * &lb {
            log.lin = lb;
            skip(&mut log, "near optimal");
            return Ok(log);
        }
        let lin = lp::solve_lp(&w, &b, self.c.inv_eps as u32)?.value;
        log.lin = lin.clone();
        if x_norm <= &one_d * &lin {
            skip(&mut log, "near optimal");
            return Ok(log);
        }
        let target = qmax(&(&x_norm - qu(alpha as u64)), &(&one_d * &lin));
        let index: BTreeMap<GroupId, usize> = gs.iter().enumerate().map(|(i, g)| (*g, i)).collect();
        let bq: Vec<Q> = b.iter().map(|v| qu(*v)).collect();

        // Step A: re-optimize over the current levels only.
        let y = self.y_counts();
        let keys: Vec<PKey> = y.keys().filter(|k| !k.is_empty()).cloned().collect();
        let cols: Vec<Pattern> = keys.iter().map(|k| to_index_pattern(k, &index)).collect();
        let upper: Vec<Q> = keys.iter().map(|k| qu(y[k])).collect();
        let xi = lp::solve_bounded(&cols, &upper, &bq, m)?;
        let val: Q = xi.iter().sum();
        if val <= target {
            let theta = qmin(&Q::one(), &((&x_norm - &target) / (&x_norm - &val)));
            let mut nx: BTreeMap<PKey, Q> = BTreeMap::new();
            for (k, v) in &self.plan.x {
                nx.insert(k.clone(), v * (Q::one() - &theta));
            }
            for (k, v) in keys.iter().zip(&xi) {
                *nx.entry(k.clone()).or_insert_with(Q::zero) += v * &theta;
            }
            nx.retain(|_, v| v.is_positive());
            self.plan.x = nx;
            log.outcome = ImproveOutcome::Fractional;
            log.x_after = self.plan.x_norm();
            log.nnz_x = self.plan.x.len();
            return Ok(log);
        }

        // Step B: repack the emptiest levels, bounded by half the change cap.
        let budget = (log.p_cap / 2).max(1) as usize;
        let mut by_fill: Vec<(Q, LevelId)> = self.plan.levels.keys().map(|lid| (self.reserved_width(*lid), *lid)).collect();
        by_fill.sort();
        let chosen: Vec<LevelId> = by_fill.into_iter().take(budget).map(|(_, l)| l).collect();
        let mut pools: BTreeMap<GroupId, Vec<ContainerId>> = BTreeMap::new();
        for lid in &chosen {
            for c in self.plan.levels[lid].xs.keys() {
                pools.entry(self.large.containers[c].group).or_default().push(*c);
            }
        }
        let rg: Vec<GroupId> = pools.keys().copied().collect();
        let rw: Vec<Q> = rg.iter().map(|g| self.large.groups[g].pw.clone()).collect();
        let rb: Vec<u64> = rg.iter().map(|g| pools[g].len() as u64).collect();
        let sol = lp::solve_lp(&rw, &rb, self.c.inv_eps as u32)?;
        let fills = assign_levels(&rg, &lp::round_to_integral(&sol.x), pools)?;
        if fills.len() >= chosen.len() {
            skip(&mut log, "no level saved");
            return Ok(log);
        }
        // Evaluate the candidate before touching the packing.
        let mut y2 = y.clone();
        for lid in &chosen {
            let k = self.level_key(*lid);
            let e = y2.get_mut(&k).expect("level key");
            *e -= 1;
            if *e == 0 {
                y2.remove(&k);
            }
        }
        for conts in &fills {
            let mut m: BTreeMap<GroupId, u32> = BTreeMap::new();
            for c in conts {
                *m.entry(self.large.containers[c].group).or_default() += 1;
            }
            *y2.entry(m.into_iter().collect()).or_default() += 1;
        }
        let keys2: Vec<PKey> = y2.keys().filter(|k| !k.is_empty()).cloned().collect();
        let cols2: Vec<Pattern> = keys2.iter().map(|k| to_index_pattern(k, &index)).collect();
        let upper2: Vec<Q> = keys2.iter().map(|k| qu(y2[k])).collect();
        let xi2 = lp::solve_bounded(&cols2, &upper2, &bq, m)?;
        let val2: Q = xi2.iter().sum();
        if val2 > target {
            skip(&mut log, "target not reachable within change cap");
            return Ok(log);
        }
        for lid in &chosen {
            self.remove_level(*lid);
        }
        let new_levels: Vec<LevelId> = fills.iter().map(|conts| self.new_level(conts)).collect();
        self.reset_x()?;
        self.drop_empty_levels();
        log.outcome = ImproveOutcome::Rebuilt;
        log.changed_levels = chosen.len() + new_levels.len();
        log.x_after = self.plan.x_norm();
        log.y_after = self.plan.y_norm();
        log.nnz_x = self.plan.x.len();
        log.nnz_y = self.y_counts().len();
        Ok(log)
    }

    // ---- audit ----

    pub fn audit_plan(&self) -> Vec<String> {
        let mut out = Vec::new();
        let y = self.y_counts();
        let (gs, _, b) = self.plan_groups();
        for (k, v) in &self.plan.x {
            if v.is_negative() || *v > qu(y.get(k).copied().unwrap_or(0)) {
                out.push(format!("x exceeds y on a pattern of {} groups", k.len()));
            }
        }
        for (g, bg) in gs.iter().zip(&b) {
            let cov: Q = self.plan.x.iter().map(|(k, v)| v * qu(k.iter().find(|(h, _)| h == g).map(|(_, n)| *n as u64).unwrap_or(0))).sum();
            if cov < qu(*bg) {
                out.push(format!("fractional coverage of {g} is {} below {bg}", fmt_q(&cov)));
            }
        }
        for (lid, lv) in &self.plan.levels {
            let key = self.level_key(*lid);
            if self.key_width(&key) > Q::one() {
                out.push(format!("{lid} pattern wider than the strip"));
            }
            if key.iter().map(|(_, n)| *n as u64).sum::<u64>() > self.c.inv_eps {
                out.push(format!("{lid} holds more than 1/eps containers"));
            }
            let mut spans: Vec<(Q, Q)> = lv.xs.iter().map(|(c, x)| (x.clone(), x + &self.large.containers[c].width)).collect();
            spans.sort();
            if spans.windows(2).any(|p| p[0].1 > p[1].0) {
                out.push(format!("{lid} containers overlap"));
            }
            let right = spans.iter().map(|s| s.1.clone()).max().unwrap_or_else(Q::zero);
            if let Some(d) = &lv.dcont {
                if right > d.x || &d.x + &d.w > Q::one() {
                    out.push(format!("{lid} D-container overlaps its containers"));
                }
            } else if right > Q::one() {
                out.push(format!("{lid} wider than the strip"));
            }
            for c in lv.xs.keys() {
                if self.large.containers.get(c).and_then(|k| k.level) != Some(*lid) {
                    out.push(format!("{c} disagrees with {lid}"));
                }
            }
        }
        if self.mode == Mode::Online {
            let on_levels: usize = self.plan.levels.values().map(|l| l.xs.len()).sum();
            if on_levels != self.large.containers.len() {
                out.push(format!("{} containers but {on_levels} on levels", self.large.containers.len()));
            }
        }
        out
    }
}
