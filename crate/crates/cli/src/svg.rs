//! Static SVG plots of scenes, trajectories, and success curves.

use std::fmt::Write;

use replay_dagger::dataset::{TrackId, TrafficLog};
use replay_dagger::geometry::{Point2, ReferencePath};

const CURB: &str = "#888888";
const REPLAY: &str = "#d62728";
const EGO: &str = "#1f77b4";
const REF_PATH: &str = "#e377c2";

/// Things drawn on top of the scene.
pub struct Overlay<'a> {
    pub path: Option<&'a ReferencePath>,
    /// Replay vehicles are drawn over this time window.
    pub window: (f64, f64),
    pub exclude: Option<TrackId>,
    pub ego: &'a [Point2],
}

struct View {
    min: Point2,
    scale: f64,
    height: f64,
}

impl View {
    fn fit(points: impl Iterator<Item = Point2>, size: f64) -> Self {
        let (mut lo, mut hi) = (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in points {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        if !lo.x.is_finite() {
            lo = Point2::new(-1.0, -1.0);
            hi = Point2::new(1.0, 1.0);
        }
        let pad = 5.0;
        let span = (hi.x - lo.x).max(hi.y - lo.y).max(1.0) + 2.0 * pad;
        Self {
            min: Point2::new(lo.x - pad, lo.y - pad),
            scale: size / span,
            height: size,
        }
    }

    fn map(&self, p: Point2) -> (f64, f64) {
        ((p.x - self.min.x) * self.scale, self.height - (p.y - self.min.y) * self.scale)
    }

    fn points(&self, pts: &[Point2]) -> String {
        let mut s = String::new();
        for (i, p) in pts.iter().enumerate() {
            let (x, y) = self.map(*p);
            if i > 0 {
                s.push(' ');
            }
            write!(s, "{x:.2},{y:.2}").unwrap();
        }
        s
    }
}

fn polyline(out: &mut String, view: &View, pts: &[Point2], color: &str, width: f64, extra: &str) {
    if pts.len() < 2 {
        return;
    }
    writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>"#,
        view.points(pts)
    )
    .unwrap();
}

fn dot(out: &mut String, view: &View, p: Point2, color: &str) {
    let (x, y) = view.map(p);
    writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#).unwrap();
}

/// Curbs grey, replay vehicles red with start dots, reference path pink
/// dashed, ego blue.
pub fn render_scene(log: &TrafficLog, overlay: &Overlay<'_>) -> String {
    let size = 800.0;
    let replay: Vec<Vec<Point2>> = log
        .tracks()
        .values()
        .filter(|t| Some(t.id) != overlay.exclude)
        .map(|t| {
            t.states
                .iter()
                .filter(|s| s.t() >= overlay.window.0 - 1e-9 && s.t() <= overlay.window.1 + 1e-9)
                .map(|s| s.pos)
                .collect::<Vec<_>>()
        })
        .filter(|v| !v.is_empty())
        .collect();
    let view = View::fit(
        log.curbs()
            .iter()
            .flatten()
            .chain(log.reference_paths().iter().flat_map(|p| p.points()))
            .chain(overlay.ego)
            .copied(),
        size,
    );
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    )
    .unwrap();
    writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();
    for c in log.curbs() {
        polyline(&mut out, &view, c, CURB, 1.5, "");
    }
    if let Some(p) = overlay.path {
        polyline(&mut out, &view, p.points(), REF_PATH, 2.0, r#" stroke-dasharray="6,4""#);
    }
    for r in &replay {
        polyline(&mut out, &view, r, REPLAY, 1.5, "");
        dot(&mut out, &view, r[0], REPLAY);
    }
    polyline(&mut out, &view, overlay.ego, EGO, 2.5, "");
    if let Some(p) = overlay.ego.first() {
        dot(&mut out, &view, *p, EGO);
    }
    out.push_str("</svg>\n");
    out
}

/// Success rate per iteration with a 0..1 vertical axis.
pub fn render_curve(rates: &[f64], label: &str) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let n = rates.len().max(2) - 1;
    let x = |i: usize| m + (w - 2.0 * m) * i as f64 / n as f64;
    let y = |r: f64| h - m - (h - 2.0 * m) * r.clamp(0.0, 1.0);
    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();
    writeln!(
        out,
        r##"<polyline points="{m},{m} {m},{:.2} {:.2},{:.2}" fill="none" stroke="#000000" stroke-width="1"/>"##,
        h - m,
        w - m,
        h - m
    )
    .unwrap();
    for tick in [0.0, 0.5, 1.0] {
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">{tick:.1}</text>"#,
            m - 6.0,
            y(tick) + 4.0
        )
        .unwrap();
    }
    for i in 0..rates.len() {
        writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{i}</text>"#, x(i), h - m + 18.0).unwrap();
    }
    let pts: Vec<String> = rates.iter().enumerate().map(|(i, r)| format!("{:.2},{:.2}", x(i), y(*r))).collect();
    writeln!(out, r#"<polyline points="{}" fill="none" stroke="{EGO}" stroke-width="2"/>"#, pts.join(" ")).unwrap();
    for (i, r) in rates.iter().enumerate() {
        writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{EGO}"/>"#, x(i), y(*r)).unwrap();
    }
    writeln!(out, r#"<text x="{:.2}" y="20" font-size="14" text-anchor="middle">{}</text>"#, w / 2.0, escape(label)).unwrap();
    writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">iteration</text>"#, w / 2.0, h - 10.0).unwrap();
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
