//! Items, classes, derived constants, and item streams.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::{One, Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::num::{self, fmt_q, q, qi, qu, serde_q, Q};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemId(pub u64);

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: ItemId,
    #[serde(with = "serde_q")]
    pub w: Q,
    #[serde(with = "serde_q")]
    pub h: Q,
}

impl Item {
    pub fn new(id: u64, w: Q, h: Q) -> Result<Self, GeometryError> {
        let it = Self { id: ItemId(id), w, h };
        it.check()?;
        Ok(it)
    }

    pub fn check(&self) -> Result<(), GeometryError> {
        let ok = |x: &Q| x.is_positive() && *x <= Q::one();
        if ok(&self.w) && ok(&self.h) {
            Ok(())
        } else {
            Err(GeometryError::BadItem(self.id.0, fmt_q(&self.w), fmt_q(&self.h)))
        }
    }

    pub fn size(&self) -> Q {
        &self.w * &self.h
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ItemClass {
    Big,
    Flat,
    Narrow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    #[serde(with = "serde_q")]
    pub x: Q,
    #[serde(with = "serde_q")]
    pub y: Q,
    #[serde(with = "serde_q")]
    pub w: Q,
    #[serde(with = "serde_q")]
    pub h: Q,
}

impl Rect {
    pub fn new(x: Q, y: Q, w: Q, h: Q) -> Self {
        Self { x, y, w, h }
    }

    pub fn top(&self) -> Q {
        &self.y + &self.h
    }

    pub fn right(&self) -> Q {
        &self.x + &self.w
    }

    /// Interior intersection; touching edges do not overlap.
    pub fn overlaps(&self, o: &Rect) -> bool {
        self.x < o.right() && o.x < self.right() && self.y < o.top() && o.y < self.top()
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("epsilon {0} must satisfy 0 < eps <= 1/4 with integral 1/eps")]
    BadEpsilon(String),
    #[error("container height {0} must be at least 2")]
    BadContainerHeight(String),
    #[error("override `{0}` requires scale mode")]
    OverrideWithoutScale(&'static str),
    #[error("override `{0}` is out of range: {1}")]
    BadOverride(&'static str, String),
    #[error("item {0} has invalid size {1} x {2}")]
    BadItem(u64, String, String),
    #[error("adversary parameter out of range: {0}")]
    BadAdversary(String),
}

/// Optional replacements for derived constants; only honoured in scale mode.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScaleOverrides {
    pub container_height: Option<u64>,
    pub align_budget: Option<u64>,
    #[serde(default, with = "opt_q")]
    pub online_threshold: Option<Q>,
    /// Replaces the divisor of SIZE in the rounding parameter.
    #[serde(default, with = "opt_q")]
    pub kappa_unit: Option<Q>,
}

impl ScaleOverrides {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

mod opt_q {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Option<Q>, s: S) -> Result<S::Ok, S::Error> {
        match x {
            Some(v) => s.serialize_some(&fmt_q(v)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Q>, D::Error> {
        let v: Option<serde_json::Value> = Option::deserialize(d)?;
        v.map(|v| num::value_to_q(&v).map_err(serde::de::Error::custom)).transpose()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Constants {
    #[serde(with = "serde_q")]
    pub epsilon: Q,
    pub inv_eps: u64,
    pub omega: u32,
    pub container_height: u64,
    #[serde(with = "serde_q")]
    pub lambda: Q,
    #[serde(with = "serde_q")]
    pub alpha_combined: Q,
    #[serde(with = "serde_q")]
    pub alpha_standalone: Q,
    pub align_budget: u64,
    #[serde(with = "serde_q")]
    pub fbuffer_semionline: Q,
    #[serde(with = "serde_q")]
    pub online_threshold: Q,
    #[serde(with = "serde_q")]
    pub improve_delta: Q,
    #[serde(with = "serde_q")]
    pub kappa_unit: Q,
    pub group_bound: u64,
    pub scale_mode: bool,
    /// Fields replaced by scale overrides.
    pub overridden: Vec<String>,
}

impl Constants {
    pub fn derived(epsilon: Q) -> Result<Self, GeometryError> {
        Self::derive(epsilon, false, &ScaleOverrides::default())
    }

    pub fn derive(epsilon: Q, scale_mode: bool, ov: &ScaleOverrides) -> Result<Self, GeometryError> {
        let bad = || GeometryError::BadEpsilon(fmt_q(&epsilon));
        if !epsilon.is_positive() || epsilon > q(1, 4) {
            return Err(bad());
        }
        let inv = epsilon.recip();
        if !inv.is_integer() {
            return Err(bad());
        }
        let inv_eps = num::floor_u64(&inv);
        if !scale_mode && !ov.is_empty() {
            let name = if ov.container_height.is_some() {
                "container_height"
            } else if ov.align_budget.is_some() {
                "align_budget"
            } else if ov.online_threshold.is_some() {
                "online_threshold"
            } else {
                "kappa_unit"
            };
            return Err(GeometryError::OverrideWithoutScale(name));
        }
        let omega = 63 - inv_eps.leading_zeros() + 1;
        let e2 = &epsilon * &epsilon;
        let mut overridden = Vec::new();
        let h_b = match ov.container_height {
            Some(h) => {
                overridden.push("container_height".into());
                h
            }
            None => 13 * inv_eps * inv_eps,
        };
        if h_b < 2 {
            return Err(GeometryError::BadContainerHeight(h_b.to_string()));
        }
        let align_budget = match ov.align_budget {
            Some(0) => return Err(GeometryError::BadOverride("align_budget", "0".into())),
            Some(v) => {
                overridden.push("align_budget".into());
                v
            }
            None => 2 * inv_eps * inv_eps,
        };
        let hb = qu(h_b);
        let default_unit = qi(4) * qu(omega as u64) * &hb / &epsilon;
        let kappa_unit = match &ov.kappa_unit {
            Some(u) => {
                if *u < Q::one() {
                    return Err(GeometryError::BadOverride("kappa_unit", fmt_q(u)));
                }
                overridden.push("kappa_unit".into());
                u.clone()
            }
            None => default_unit.clone(),
        };
        let online_threshold = match &ov.online_threshold {
            Some(t) => {
                overridden.push("online_threshold".into());
                t.clone()
            }
            None => &default_unit * (&hb + Q::one()),
        };
        if online_threshold < kappa_unit {
            return Err(GeometryError::BadOverride(
                "online_threshold",
                format!("{} is below the rounding unit {}", fmt_q(&online_threshold), fmt_q(&kappa_unit)),
            ));
        }
        let group_bound = 2 * omega as u64 + 16 * omega as u64 * inv_eps;
        Ok(Self {
            lambda: (&epsilon - &e2).recip(),
            alpha_combined: epsilon.clone(),
            alpha_standalone: &e2 / (Q::one() - &e2),
            fbuffer_semionline: qi(2) + &epsilon,
            improve_delta: epsilon.clone(),
            epsilon,
            inv_eps,
            omega,
            container_height: h_b,
            align_budget,
            online_threshold,
            kappa_unit,
            group_bound,
            scale_mode,
            overridden,
        })
    }

    pub fn h_b(&self) -> Q {
        qu(self.container_height)
    }

    /// Usable height per container in the rounding invariant.
    pub fn h_b1(&self) -> Q {
        qu(self.container_height - 1)
    }

    /// Online F-buffer slot height for a given group count.
    pub fn fbuffer_online(&self, groups: usize) -> Q {
        qu(groups as u64) * &self.epsilon * &self.epsilon + &self.epsilon
    }

    /// Slot height reserved for every F-buffer row.
    pub fn fbuffer_row_height(&self) -> Q {
        num::qmax(&self.fbuffer_semionline, &self.fbuffer_online(self.group_bound as usize))
    }

    pub fn classify(&self, item: &Item) -> ItemClass {
        classify(item, &self.epsilon)
    }

    /// Number of width categories: widths in (eps, 1] fall into 0..omega.
    pub fn categories(&self) -> u32 {
        self.omega
    }
}

pub fn classify(item: &Item, eps: &Q) -> ItemClass {
    if item.w < *eps {
        ItemClass::Narrow
    } else if item.h < *eps {
        ItemClass::Flat
    } else {
        ItemClass::Big
    }
}

/// Class mix weights for random streams.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMix {
    pub big: u32,
    pub flat: u32,
    pub narrow: u32,
}

impl Default for ClassMix {
    fn default() -> Self {
        Self { big: 1, flat: 1, narrow: 1 }
    }
}

/// Random stream parameters; sizes are drawn on a grid of `1/resolution`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub seed: u64,
    pub n: usize,
    #[serde(default)]
    pub mix: ClassMix,
    #[serde(default = "default_resolution")]
    pub resolution: u64,
}

fn default_resolution() -> u64 {
    64
}

/// Deterministic random items with the requested class mix.
pub fn random_stream(spec: &StreamSpec, eps: &Q) -> Vec<Item> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let res = spec.resolution.max(8) as i64;
    let lo = num::ceil_i64(&(eps * qi(res)));
    let total = spec.mix.big + spec.mix.flat + spec.mix.narrow;
    let grid = |rng: &mut ChaCha8Rng, a: i64, b: i64| q(rng.gen_range(a..=b), res);
    (0..spec.n)
        .map(|i| {
            let r = if total == 0 { 0 } else { rng.gen_range(0..total) };
            // lo is the first grid point >= eps; narrow needs a grid point strictly below eps.
            let (w, h) = if r < spec.mix.big {
                (grid(&mut rng, lo, res), grid(&mut rng, lo, res))
            } else if r < spec.mix.big + spec.mix.flat {
                (grid(&mut rng, lo, res), grid(&mut rng, 1, (lo - 1).max(1)))
            } else {
                (grid(&mut rng, 1, (lo - 1).max(1)), grid(&mut rng, 1, res))
            };
            Item { id: ItemId(i as u64 + 1), w, h }
        })
        .collect()
}

/// Parameters of the two-phase lower-bound adversary.
#[derive(Clone, Debug)]
pub struct Adversary {
    pub h_target: Q,
    pub mu: Q,
    pub eps_adv: Q,
    pub k: u64,
    pub mu_ceil: u64,
}

/// The adversary's decision after inspecting the big phase.
#[derive(Clone, Debug, Serialize)]
pub struct AdversaryOutcome {
    pub paired: u64,
    pub big_count: u64,
    pub flat_count: u64,
    pub predicted_ratio: f64,
}

impl Adversary {
    pub fn new(h_target: Q, mu: Q, eps_adv: Q) -> Result<Self, GeometryError> {
        if !h_target.is_positive() || !mu.is_positive() {
            return Err(GeometryError::BadAdversary("h and mu must be positive".into()));
        }
        if !eps_adv.is_positive() || eps_adv >= q(1, 6) {
            return Err(GeometryError::BadAdversary(format!("eps' = {} not in (0,1/6)", fmt_q(&eps_adv))));
        }
        let k = 3 * num::ceil_i64(&h_target) as u64;
        let mu_ceil = num::ceil_i64(&mu) as u64;
        let a = Self { h_target, mu, eps_adv, k, mu_ceil };
        // A big item must outweigh the budget earned by one flat item.
        let big = a.big_item(0).size();
        let flat = a.flat_item(0).size();
        if big <= &a.mu * flat {
            return Err(GeometryError::BadAdversary("big item is repackable within budget".into()));
        }
        Ok(a)
    }

    pub fn big_item(&self, id: u64) -> Item {
        Item { id: ItemId(id), w: q(1, 2) - &self.eps_adv, h: Q::one() }
    }

    pub fn flat_item(&self, id: u64) -> Item {
        Item { id: ItemId(id), w: q(1, 2) + &self.eps_adv, h: q(1, 2 * self.mu_ceil as i64) }
    }

    pub fn big_phase(&self) -> Vec<Item> {
        (1..=2 * self.k).map(|i| self.big_item(i)).collect()
    }

    /// Flat phase, sent only when more than 4K/3 big items are paired.
    pub fn flat_phase(&self, paired: u64) -> Vec<Item> {
        if 3 * paired > 4 * self.k {
            let n = 4 * self.mu_ceil * self.k;
            (1..=n).map(|i| self.flat_item(2 * self.k + i)).collect()
        } else {
            Vec::new()
        }
    }

    pub fn predicted_ratio(&self, paired: u64) -> Q {
        let k = qu(self.k);
        let l = qu(paired);
        let a = qi(2) - &l / (qi(2) * &k);
        let b = Q::one() + &l / (qi(4) * &k);
        num::qmax(&a, &b)
    }

    /// Optimal height of the instance sent so far.
    pub fn opt_height(&self, flats_sent: bool) -> Q {
        if flats_sent {
            qu(2 * self.k)
        } else {
            qu(self.k)
        }
    }
}

/// Counts big items that share a horizontal line with another big item.
pub fn paired_count(rects: &BTreeMap<ItemId, Rect>, bigs: &[ItemId]) -> u64 {
    let rs: Vec<&Rect> = bigs.iter().filter_map(|id| rects.get(id)).collect();
    rs.iter().enumerate().filter(|(i, a)| rs.iter().enumerate().any(|(j, b)| *i != j && a.y < b.top() && b.y < a.top())).count() as u64
}

pub fn total_size<'a>(items: impl IntoIterator<Item = &'a Item>) -> Q {
    items.into_iter().fold(Q::zero(), |acc, it| acc + it.size())
}
