//! Browser front end for the packing engine: insert items, play random streams, audit the layout.

use strip_engine::engine::{Engine, EngineConfig, EventReport, Mode};
use strip_engine::geometry::{random_stream, ClassMix, Item, ScaleOverrides, StreamSpec};
use strip_engine::num::{fmt_q, parse_q, q, qi, to_f64};
use strip_engine::svg::render_svg;
use strip_engine::validate::validate_geometry;
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct Demo {
    engine: Engine,
    seed: u64,
    draws: u64,
    next_id: u64,
}

fn config(container_height: u64) -> EngineConfig {
    let ov = ScaleOverrides {
        container_height: Some(container_height),
        align_budget: Some(2),
        online_threshold: Some(qi(20)),
        kappa_unit: Some(qi(10)),
    };
    EngineConfig::scale(q(1, 4), ov)
}

fn describe(r: &EventReport) -> String {
    format!(
        "t={} item {} {:?} {}: moved {} (size {}), height {:.4}",
        r.t,
        r.id,
        r.class,
        if r.mode == Mode::Online { "online" } else { "semi-online" },
        fmt_q(&r.repack),
        fmt_q(&r.size),
        to_f64(&r.height)
    )
}

#[wasm_bindgen]
impl Demo {
    /// A fresh strip with containers of the given height (at least 3).
    #[wasm_bindgen(constructor)]
    pub fn new(container_height: u32, seed: u64) -> Result<Demo, String> {
        let engine = Engine::new(config(container_height.into())).map_err(|e| e.to_string())?;
        Ok(Demo { engine, seed, draws: 0, next_id: 1 })
    }

    /// Inserts one item given as decimal or `p/q` strings.
    pub fn insert(&mut self, w: &str, h: &str) -> Result<String, String> {
        let w = parse_q(w).map_err(|e| format!("width: {}", e.0))?;
        let h = parse_q(h).map_err(|e| format!("height: {}", e.0))?;
        let item = Item::new(self.next_id, w, h).map_err(|e| e.to_string())?;
        self.push(item)
    }

    /// Inserts `n` random items and returns one line per event.
    pub fn step(&mut self, n: u32) -> Result<String, String> {
        let spec = StreamSpec { seed: self.seed.wrapping_add(self.draws), n: n as usize, mix: ClassMix::default(), resolution: 32 };
        self.draws += 1;
        let eps = self.engine.constants().epsilon.clone();
        let mut lines = Vec::new();
        for it in random_stream(&spec, &eps) {
            let item = Item::new(self.next_id, it.w, it.h).map_err(|e| e.to_string())?;
            lines.push(self.push(item)?);
        }
        Ok(lines.join("\n"))
    }

    /// Runs the independent validator on the current layout.
    pub fn audit(&self) -> String {
        let rep = validate_geometry(&self.engine.snapshot());
        if rep.ok() {
            return format!("ok: {} items, no violations", self.engine.item_count());
        }
        rep.failures.iter().map(|f| format!("{:?}: {}", f.kind, f.witness)).collect::<Vec<_>>().join("\n")
    }

    pub fn svg(&self) -> String {
        render_svg(&self.engine.snapshot())
    }

    pub fn stats(&self) -> String {
        let l = self.engine.ledger();
        format!(
            "items {} | height {:.4} | size {:.4} | migration factor {:.4} | groups {} | {}",
            self.engine.item_count(),
            to_f64(&self.engine.height()),
            to_f64(self.engine.size_all()),
            to_f64(&l.mu_hat()),
            self.engine.group_count(),
            if self.engine.mode() == Mode::Online { "online" } else { "semi-online" }
        )
    }
}

impl Demo {
    fn push(&mut self, item: Item) -> Result<String, String> {
        let r = self.engine.insert(item).map_err(|e| e.to_string())?;
        self.next_id += 1;
        Ok(describe(&r))
    }
}
