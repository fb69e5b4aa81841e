use num_traits::{One, Zero};
use proptest::prelude::*;

use strip_engine::engine::{Engine, EngineConfig, EngineError, Mode};
use strip_engine::geometry::{random_stream, ClassMix, Item, ScaleOverrides, StreamSpec};
use strip_engine::narrow::StandalonePacker;
use strip_engine::num::{q, qi, Q};
use strip_engine::snapshot::Snapshot;
use strip_engine::svg::render_svg;
use strip_engine::validate::validate_geometry;

fn eps() -> Q {
    q(1, 4)
}

fn scale(hb: u64) -> EngineConfig {
    let ov = ScaleOverrides { container_height: Some(hb), align_budget: Some(2), online_threshold: Some(qi(20)), kappa_unit: Some(qi(10)) };
    EngineConfig::scale(eps(), ov)
}

fn stream(seed: u64, n: usize, mix: ClassMix) -> Vec<Item> {
    random_stream(&StreamSpec { seed, n, mix, resolution: 32 }, &eps())
}

fn mix() -> impl Strategy<Value = ClassMix> {
    (0u32..4, 0u32..4, 0u32..4).prop_filter("some weight", |m| m.0 + m.1 + m.2 > 0).prop_map(|(big, flat, narrow)| ClassMix {
        big,
        flat,
        narrow,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_event_keeps_layout_and_invariants(seed in any::<u64>(), hb in prop_oneof![Just(3u64), Just(5u64)], mix in mix()) {
        let mut e = Engine::new(scale(hb)).unwrap();
        for it in stream(seed, 150, mix) {
            let rep = e.insert(it).unwrap();
            let inv = e.audit_invariants();
            prop_assert!(inv.violations.is_empty(), "t={} {:?}", rep.t, inv.violations.first());
            prop_assert!(e.audit_structure().is_empty(), "t={} {:?}", rep.t, e.audit_structure());
            let v = validate_geometry(&e.snapshot());
            prop_assert!(v.ok(), "t={} {:?}", rep.t, v.failures.first());
            prop_assert!(rep.phi >= Q::zero());
            for tr in &rep.scratch.traces {
                prop_assert!(tr.step_bound_ok());
            }
        }
    }

    #[test]
    fn height_covers_area_and_tallest_item(seed in any::<u64>(), mix in mix()) {
        let items = stream(seed, 80, mix);
        let mut e = Engine::new(scale(3)).unwrap();
        for it in items.clone() {
            e.insert(it).unwrap();
        }
        let area: Q = items.iter().map(|i| i.size()).sum();
        let tallest = items.iter().map(|i| i.h.clone()).max().unwrap();
        prop_assert!(e.height() >= area);
        prop_assert!(e.height() >= tallest);
        prop_assert_eq!(e.size_all(), &area);
    }

    #[test]
    fn standalone_shelves_keep_one_sparse_shelf_per_class(seed in any::<u64>()) {
        let alpha = q(1, 15);
        let mut p = StandalonePacker::new(&alpha);
        let items = stream(seed, 400, ClassMix { big: 0, flat: 0, narrow: 1 });
        for it in &items {
            p.insert(it);
            for r in 0..8 {
                prop_assert!(p.sparse_in_class(r, &eps()) <= 1);
            }
        }
        let area: Q = items.iter().map(|i| i.size()).sum();
        let additive = (&alpha * (Q::one() - &alpha)).recip() + Q::one();
        let factor = ((Q::one() - eps()) * (Q::one() - &alpha)).recip();
        prop_assert!(p.height() <= &(factor * area + additive));
    }
}

#[test]
fn streams_reach_online_mode() {
    let mut e = Engine::new(scale(3)).unwrap();
    for it in stream(5, 400, ClassMix { big: 3, flat: 1, narrow: 1 }) {
        e.insert(it).unwrap();
    }
    assert_eq!(e.mode(), Mode::Online);
    assert!(e.group_count() > 0);
}

#[test]
fn duplicate_id_is_rejected_and_state_is_restored() {
    let mut e = Engine::new(scale(3)).unwrap();
    for it in stream(2, 120, ClassMix::default()) {
        e.insert(it).unwrap();
    }
    let before = e.snapshot();
    let err = e.insert(Item::new(1, q(1, 2), q(1, 2)).unwrap()).unwrap_err();
    assert!(matches!(err, EngineError::DuplicateId(1)));
    assert_eq!(e.snapshot(), before);
}

#[test]
fn same_stream_gives_same_layout() {
    let run = || {
        let mut e = Engine::new(scale(5)).unwrap();
        for it in stream(9, 200, ClassMix::default()) {
            e.insert(it).unwrap();
        }
        e.snapshot()
    };
    assert_eq!(run(), run());
}

#[test]
fn snapshot_survives_json() {
    let mut e = Engine::new(scale(3)).unwrap();
    for it in stream(4, 150, ClassMix::default()) {
        e.insert(it).unwrap();
    }
    let s = e.snapshot();
    let back: Snapshot = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
    assert_eq!(back, s);
    assert!(validate_geometry(&back).ok());
}

#[test]
fn empty_strip_renders() {
    let e = Engine::new(EngineConfig::derived(eps())).unwrap();
    assert!(e.height().is_zero());
    let svg = render_svg(&e.snapshot());
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn derived_constants_pack_small_streams() {
    let mut e = Engine::new(EngineConfig::derived(eps())).unwrap();
    for it in stream(1, 60, ClassMix::default()) {
        e.insert(it).unwrap();
        assert!(validate_geometry(&e.snapshot()).ok());
    }
    assert_eq!(e.mode(), Mode::SemiOnline);
}
