//! Dependency-free SVG figures.

use std::fmt::Write as _;

use crate::events::NoteList;

const LANE: f64 = 18.0;
const LEFT: f64 = 60.0;
const PX_PER_S: f64 = 160.0;

/// Piano roll: one lane per component, a bar per hit with opacity from
/// velocity. An optional `(start, end)` band shades a masked region.
pub fn piano_roll_svg(notes: &NoteList, duration: f64, names: &[String], mask: Option<(f64, f64)>) -> String {
    let lanes = names.len().max(notes.component_span());
    let width = LEFT + duration * PX_PER_S + 10.0;
    let height = lanes as f64 * LANE + 30.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="monospace" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some((a, b)) = mask {
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="0" width="{:.1}" height="{:.1}" fill="#ddd"/>"##,
            LEFT + a * PX_PER_S,
            (b - a) * PX_PER_S,
            lanes as f64 * LANE
        );
    }
    for lane in 0..lanes {
        let y = lane as f64 * LANE;
        let label = names.get(lane).cloned().unwrap_or_else(|| format!("c{lane}"));
        let _ = writeln!(s, r#"<text x="4" y="{:.1}">{label}</text>"#, y + LANE * 0.7);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ccc"/>"##,
            width - 10.0
        );
    }
    let mut t = 0.0;
    while t <= duration + 1e-9 {
        let x = LEFT + t * PX_PER_S;
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}">{t:.0}s</text>"#, lanes as f64 * LANE + 20.0);
        t += 1.0;
    }
    for n in notes {
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#1f4e9c" fill-opacity="{:.3}"/>"##,
            LEFT + n.time * PX_PER_S,
            n.component as f64 * LANE + 2.0,
            0.1 * PX_PER_S,
            LANE - 4.0,
            0.15 + 0.85 * n.velocity as f64 / 127.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Two-panel line chart of F1 and wall-clock seconds against step count.
pub fn sweep_svg(steps: &[usize], f1: &[f64], seconds: &[f64]) -> String {
    let (w, h, pad) = (320.0, 200.0, 40.0);
    let max_step = steps.iter().copied().max().unwrap_or(1).max(1) as f64;
    let max_sec = seconds.iter().cloned().fold(1e-9, f64::max);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" font-family="monospace" font-size="11">"#,
        2.0 * w + 3.0 * pad,
        h + 2.0 * pad
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (panel, (title, ys, top)) in [("onset F1", f1, 1.0), ("seconds", seconds, max_sec)]
        .into_iter()
        .enumerate()
    {
        let x0 = pad + panel as f64 * (w + pad);
        let _ = writeln!(
            s,
            r#"<rect x="{x0}" y="{pad}" width="{w}" height="{h}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(s, r#"<text x="{x0}" y="{:.0}">{title} (max {top:.3})</text>"#, pad - 8.0);
        let pts: Vec<String> = steps
            .iter()
            .zip(ys)
            .map(|(&k, &y)| {
                format!(
                    "{:.1},{:.1}",
                    x0 + k as f64 / max_step * w,
                    pad + h - (y / top).clamp(0.0, 1.0) * h
                )
            })
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#c0392b" stroke-width="2"/>"##,
            pts.join(" ")
        );
        for (&k, p) in steps.iter().zip(&pts) {
            let (px, py) = p.split_once(',').expect("pair");
            let _ = writeln!(s, r##"<circle cx="{px}" cy="{py}" r="3" fill="#c0392b"/>"##);
            let _ = writeln!(s, r#"<text x="{px}" y="{:.0}">{k}</text>"#, pad + h + 14.0);
        }
    }
    s.push_str("</svg>\n");
    s
}
