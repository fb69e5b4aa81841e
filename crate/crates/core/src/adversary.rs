//! The two-phase lower-bound adversary played against a strict-migration packer.
//!
//! The strict packer follows the engine: when an event's repacking fits the
//! per-event budget `mu * SIZE(item)` it adopts the engine's layout, otherwise
//! it keeps every placed item where it is and puts the new one on the skyline.

use std::collections::BTreeMap;

use num_traits::Zero;
use serde::Serialize;

use crate::engine::{Engine, EngineConfig, EngineError};
use crate::geometry::{paired_count, Adversary, GeometryError, Item, ItemId, Rect};
use crate::num::{fmt_q, serde_q, to_f64, Q};

#[derive(Debug, thiserror::Error)]
pub enum AdversaryError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("event {index}: {source}")]
    Engine { index: usize, source: EngineError },
}

/// A packing that only changes within the per-event migration budget.
#[derive(Clone, Debug, Default)]
pub struct StrictPacker {
    pub rects: BTreeMap<ItemId, Rect>,
    pub sizes: BTreeMap<ItemId, Q>,
    pub adopted: u64,
    pub refused: u64,
    #[doc(hidden)]
    pub max_event_repack: Q,
}

impl StrictPacker {
    pub fn height(&self) -> Q {
        self.rects.values().map(Rect::top).max().unwrap_or_else(Q::zero)
    }

    /// Applies one arrival given the engine's new layout.
    pub fn step(&mut self, item: &Item, engine_rects: &BTreeMap<ItemId, Rect>, mu: &Q) {
        let moved: Q = self.rects.iter().filter(|(id, r)| engine_rects.get(id) != Some(r)).map(|(id, _)| self.sizes[id].clone()).sum();
        self.sizes.insert(item.id, item.size());
        if moved <= mu * item.size() {
            if moved > self.max_event_repack {
                self.max_event_repack = moved;
            }
            self.adopted += 1;
            self.rects = self.rects.keys().chain(std::iter::once(&item.id)).map(|id| (*id, engine_rects[id].clone())).collect();
            return;
        }
        self.refused += 1;
        let r = self.skyline_spot(item);
        self.rects.insert(item.id, r);
    }

    /// Lowest, then leftmost, position on top of everything below it.
    fn skyline_spot(&self, item: &Item) -> Rect {
        let one = Q::from_integer(1.into());
        let mut xs: Vec<Q> =
            std::iter::once(Q::zero()).chain(self.rects.values().map(Rect::right)).filter(|x| x + &item.w <= one).collect();
        xs.sort();
        xs.dedup();
        xs.into_iter()
            .map(|x| {
                let right = &x + &item.w;
                let y = self.rects.values().filter(|r| r.x < right && x < r.right()).map(Rect::top).max().unwrap_or_else(Q::zero);
                Rect::new(x, y, item.w.clone(), item.h.clone())
            })
            .min_by(|a, b| a.y.cmp(&b.y).then(a.x.cmp(&b.x)))
            .expect("x = 0 always fits")
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AdversaryReport {
    #[serde(with = "serde_q")]
    pub h: Q,
    #[serde(with = "serde_q")]
    pub mu: Q,
    #[serde(with = "serde_q")]
    pub eps_adv: Q,
    pub k: u64,
    pub big_count: u64,
    pub paired: u64,
    pub flat_count: u64,
    #[serde(with = "serde_q")]
    pub height_big_phase: Q,
    #[serde(with = "serde_q")]
    pub height_final: Q,
    /// Worst height over optimum across both phases.
    #[serde(with = "serde_q")]
    pub ratio: Q,
    pub ratio_f64: f64,
    /// `max(2 - l/2K, 1 + l/4K)` for the measured pairing `l`.
    #[serde(with = "serde_q")]
    pub predicted_min: Q,
    pub adopted: u64,
    pub refused: u64,
    #[serde(with = "serde_q")]
    pub max_event_repack: Q,
}

pub fn run_adversary(h: Q, mu: Q, eps_adv: Q, cfg: EngineConfig) -> Result<AdversaryReport, AdversaryError> {
    let adv = Adversary::new(h.clone(), mu.clone(), eps_adv.clone())?;
    let mut cfg = cfg;
    cfg.transactional = false;
    let mut engine = Engine::new(cfg).map_err(|source| AdversaryError::Engine { index: 0, source })?;
    let mut strict = StrictPacker::default();
    let mut index = 0;
    let mut feed = |items: Vec<Item>, engine: &mut Engine, strict: &mut StrictPacker| -> Result<(), AdversaryError> {
        for it in items {
            engine.insert(it.clone()).map_err(|source| AdversaryError::Engine { index, source })?;
            strict.step(&it, &engine.rects(), &mu);
            index += 1;
        }
        Ok(())
    };
    let bigs = adv.big_phase();
    let big_ids: Vec<ItemId> = bigs.iter().map(|i| i.id).collect();
    feed(bigs, &mut engine, &mut strict)?;
    let height_big_phase = strict.height();
    let paired = paired_count(&strict.rects, &big_ids);
    let flats = adv.flat_phase(paired);
    let flat_count = flats.len() as u64;
    feed(flats, &mut engine, &mut strict)?;
    let height_final = strict.height();
    let r1 = &height_big_phase / adv.opt_height(false);
    let r2 = &height_final / adv.opt_height(flat_count > 0);
    let ratio = r1.max(r2);
    Ok(AdversaryReport {
        ratio_f64: to_f64(&ratio),
        predicted_min: adv.predicted_ratio(paired),
        h,
        mu,
        eps_adv,
        k: adv.k,
        big_count: big_ids.len() as u64,
        paired,
        flat_count,
        height_big_phase,
        height_final,
        ratio,
        adopted: strict.adopted,
        refused: strict.refused,
        max_event_repack: strict.max_event_repack,
    })
}

impl AdversaryReport {
    pub fn summary(&self) -> String {
        format!(
            "K={} paired={} flats={} ratio={} (~{:.4}) predicted>={} adopted={} refused={}",
            self.k,
            self.paired,
            self.flat_count,
            fmt_q(&self.ratio),
            self.ratio_f64,
            fmt_q(&self.predicted_min),
            self.adopted,
            self.refused
        )
    }
}
