//! Stream runner, reports, and traces.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineConfig, EngineError, EventReport, Mode};
use crate::geometry::{random_stream, Item, StreamSpec};
use crate::grouping::InvariantReport;
use crate::num::{fmt_q, serde_q, to_f64, Q};
use crate::svg::render_svg;
use crate::validate::{validate_geometry, Failure};

/// Run configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub engine: EngineConfig,
    /// Validate every this many events; 0 validates only the final state.
    /// Defaults to 1 in scale mode and 10,000 otherwise.
    #[serde(default)]
    pub validate_every: Option<u64>,
    /// Generated stream, used when no input file is given.
    #[serde(default)]
    pub stream: Option<StreamSpec>,
    /// Also write an SVG every this many events.
    #[serde(default)]
    pub svg_every: Option<u64>,
}

impl RunConfig {
    pub fn new(engine: EngineConfig) -> Self {
        Self { engine, validate_every: None, stream: None, svg_every: None }
    }

    pub fn cadence(&self) -> u64 {
        self.validate_every.unwrap_or(if self.engine.scale_mode { 1 } else { 10_000 })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("event {index}: {source}")]
    Engine { index: usize, source: EngineError },
    #[error("event {t}: validation failed: {}", .failures.first().map(|f| f.witness.as_str()).unwrap_or(""))]
    Geometry { t: u64, failures: Vec<Failure> },
    #[error("event {t}: invariant audit failed: {}", .report.violations.first().map(|v| v.witness.as_str()).unwrap_or(""))]
    Invariants { t: u64, report: InvariantReport },
    #[error("line {line}: {msg}")]
    Input { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct AuditSummary {
    pub validations: u64,
    pub invariant_audits: u64,
    pub literal_count_deviations: u64,
    pub max_groups: usize,
    pub group_bound: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FinalMetrics {
    #[serde(with = "serde_q")]
    pub height: Q,
    #[serde(with = "serde_q")]
    pub size: Q,
    /// Height over total area, as a float for reading.
    pub ratio_vs_size: f64,
    #[serde(with = "serde_q")]
    pub mu_hat: Q,
    #[serde(with = "serde_q")]
    pub phi: Q,
    #[serde(with = "serde_q")]
    pub min_phi: Q,
    pub mode: Mode,
    pub items: usize,
    pub audits: AuditSummary,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub events: Vec<EventReport>,
    pub metrics: FinalMetrics,
}

/// One CSV row per event.
#[derive(Serialize)]
struct TraceRow<'a> {
    t: u64,
    id: u64,
    class: &'a str,
    mode: &'a str,
    size: String,
    repack: String,
    phi: String,
    height: String,
    k: u64,
    groups_a: u64,
    groups_b: u64,
}

/// Reads one JSON item per line; blank lines are skipped.
pub fn read_items(r: impl BufRead) -> Result<Vec<Item>, RunError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let it: Item = serde_json::from_str(&line).map_err(|e| RunError::Input { line: i + 1, msg: e.to_string() })?;
        it.check().map_err(|e| RunError::Input { line: i + 1, msg: e.to_string() })?;
        out.push(it);
    }
    Ok(out)
}

pub fn write_items(w: &mut impl Write, items: &[Item]) -> Result<(), RunError> {
    for it in items {
        serde_json::to_writer(&mut *w, it)?;
        writeln!(w)?;
    }
    Ok(())
}

/// Items from the config's generator, if any.
pub fn generated_items(cfg: &RunConfig) -> Vec<Item> {
    cfg.stream.as_ref().map(|s| random_stream(s, &cfg.engine.epsilon)).unwrap_or_default()
}

/// Feeds `items` to a fresh engine, validating at the configured cadence.
/// `observe` sees the engine after every event.
pub fn run_with(
    cfg: &RunConfig,
    items: Vec<Item>,
    mut observe: impl FnMut(&Engine, &EventReport),
) -> Result<(RunReport, Engine), RunError> {
    let mut engine = Engine::new(cfg.engine.clone()).map_err(|source| RunError::Engine { index: 0, source })?;
    let cadence = cfg.cadence();
    let mut audits = AuditSummary { group_bound: engine.constants().group_bound, ..Default::default() };
    let mut events = Vec::with_capacity(items.len());
    let n = items.len();
    for (index, item) in items.into_iter().enumerate() {
        let rep = engine.insert(item).map_err(|source| RunError::Engine { index, source })?;
        let last = index + 1 == n;
        if (cadence > 0 && rep.t % cadence == 0) || last {
            check(&engine, rep.t, &mut audits)?;
        }
        observe(&engine, &rep);
        events.push(rep);
    }
    if n == 0 {
        check(&engine, 0, &mut audits)?;
    }
    let l = engine.ledger();
    let height = engine.height();
    let size = engine.size_all().clone();
    let ratio_vs_size = if n == 0 { 0.0 } else { to_f64(&height) / to_f64(&size) };
    let metrics = FinalMetrics {
        ratio_vs_size,
        mu_hat: l.mu_hat(),
        phi: l.phi.clone(),
        min_phi: l.min_phi.clone(),
        mode: engine.mode(),
        items: engine.item_count(),
        height,
        size,
        audits,
    };
    Ok((RunReport { config: cfg.clone(), events, metrics }, engine))
}

pub fn run(cfg: &RunConfig, items: Vec<Item>) -> Result<(RunReport, Engine), RunError> {
    run_with(cfg, items, |_, _| {})
}

fn check(engine: &Engine, t: u64, audits: &mut AuditSummary) -> Result<(), RunError> {
    let v = validate_geometry(&engine.snapshot());
    audits.validations += 1;
    if !v.ok() {
        return Err(RunError::Geometry { t, failures: v.failures });
    }
    let inv = engine.audit_invariants();
    audits.invariant_audits += 1;
    audits.literal_count_deviations += inv.literal_count_deviations;
    audits.max_groups = audits.max_groups.max(inv.groups);
    if !inv.ok() {
        return Err(RunError::Invariants { t, report: inv });
    }
    Ok(())
}

pub fn write_csv(path: &Path, events: &[EventReport]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    for e in events {
        w.serialize(TraceRow {
            t: e.t,
            id: e.id.0,
            class: class_name(e),
            mode: if e.mode == Mode::Online { "online" } else { "semi-online" },
            size: fmt_q(&e.size),
            repack: fmt_q(&e.repack),
            phi: fmt_q(&e.phi),
            height: fmt_q(&e.height),
            k: e.k,
            groups_a: e.groups_a,
            groups_b: e.groups_b,
        })?;
    }
    w.flush()?;
    Ok(())
}

fn class_name(e: &EventReport) -> &'static str {
    match e.class {
        crate::geometry::ItemClass::Big => "big",
        crate::geometry::ItemClass::Flat => "flat",
        crate::geometry::ItemClass::Narrow => "narrow",
    }
}

pub fn write_svg(dir: &Path, name: &str, engine: &Engine) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{name}.svg")), render_svg(&engine.snapshot()))?;
    Ok(())
}
