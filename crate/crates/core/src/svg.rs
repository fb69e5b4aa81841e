//! SVG rendering of a [`Snapshot`].

use std::fmt::Write;

use crate::geometry::{ItemClass, Rect};
use crate::num::{to_f64, Q};
use crate::snapshot::{HolderKind, Snapshot};

/// Pixels per unit of strip width.
pub const SCALE: f64 = 400.0;
const MARGIN: f64 = 10.0;

struct Canvas {
    height: f64,
    out: String,
}

impl Canvas {
    /// Flips y so the strip bottom is at the bottom of the image.
    fn rect(&mut self, r: &Rect, style: &str) {
        let x = MARGIN + to_f64(&r.x) * SCALE;
        let y = MARGIN + (self.height - to_f64(&r.top())) * SCALE;
        let w = to_f64(&r.w) * SCALE;
        let h = to_f64(&r.h) * SCALE;
        let _ = writeln!(self.out, r#"<rect x="{x:.6}" y="{y:.6}" width="{w:.6}" height="{h:.6}" {style}/>"#);
    }

    fn hline(&mut self, y: &Q, style: &str) {
        let y = MARGIN + (self.height - to_f64(y)) * SCALE;
        let (x0, x1) = (MARGIN, MARGIN + SCALE);
        let _ = writeln!(self.out, r#"<line x1="{x0:.6}" y1="{y:.6}" x2="{x1:.6}" y2="{y:.6}" {style}/>"#);
    }
}

pub fn class_color(c: ItemClass) -> &'static str {
    match c {
        ItemClass::Big => "#4f7cac",
        ItemClass::Flat => "#e0a458",
        ItemClass::Narrow => "#7fb069",
    }
}

pub fn render_svg(s: &Snapshot) -> String {
    let height = to_f64(&s.height);
    let w_px = SCALE + 2.0 * MARGIN;
    let h_px = height * SCALE + 2.0 * MARGIN;
    let mut c = Canvas { height, out: String::new() };
    let _ = writeln!(
        c.out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w_px:.6}" height="{h_px:.6}" viewBox="0 0 {w_px:.6} {h_px:.6}">"#
    );
    let strip = Rect::new(Q::from_integer(0.into()), Q::from_integer(0.into()), Q::from_integer(1.into()), s.height.clone());
    c.rect(&strip, r##"fill="#fafafa" stroke="#222" stroke-width="1""##);
    for lv in &s.levels {
        c.hline(&lv.y, r##"stroke="#bbb" stroke-dasharray="2 3""##);
    }
    for h in &s.holders {
        let style = match h.kind {
            HolderKind::Container => r##"fill="none" stroke="#333" stroke-width="0.8""##,
            HolderKind::DContainer => r##"fill="none" stroke="#555" stroke-dasharray="4 2""##,
            HolderKind::NBuffer => r##"fill="none" stroke="#a33" stroke-dasharray="6 3""##,
            HolderKind::FSlot => r##"fill="none" stroke="#b80" stroke-width="0.5""##,
            HolderKind::Shelf => r##"fill="none" stroke="#694" stroke-width="0.4""##,
        };
        c.rect(&h.rect, style);
    }
    for p in &s.items {
        let style = format!(r##"fill="{}" fill-opacity="0.85" stroke="#fff" stroke-width="0.3""##, class_color(p.class));
        c.rect(&p.rect, &style);
    }
    c.out.push_str("</svg>\n");
    c.out
}
