//! Top-down SVG of a pelvis trajectory, coloured purple to yellow over time.

use std::fmt::Write;

use crate::motion::Trajectory;

const START: [f64; 3] = [68.0, 1.0, 84.0];
const END: [f64; 3] = [253.0, 231.0, 37.0];
const SIZE: f64 = 512.0;
const MARGIN: f64 = 24.0;

fn colour(s: f64) -> String {
    let c: Vec<u8> = (0..3).map(|k| (START[k] + (END[k] - START[k]) * s).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Renders the x-z plane; anchors are drawn as ringed markers at their frames.
pub fn trajectory_svg(trajectory: &Trajectory, anchors: &[usize]) -> String {
    let p = &trajectory.positions;
    let n = trajectory.frames();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for f in 0..n {
        for (i, k) in [0, 2].into_iter().enumerate() {
            lo[i] = lo[i].min(p[[f, k]]);
            hi[i] = hi[i].max(p[[f, k]]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let at = |f: usize| (MARGIN + (p[[f, 0]] - lo[0]) * scale, SIZE - MARGIN - (p[[f, 2]] - lo[1]) * scale);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for f in 1..n {
        let ((x0, y0), (x1, y1)) = (at(f - 1), at(f));
        let s = (f - 1) as f64 / (n - 1).max(1) as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y1:.2}" stroke="{}" stroke-width="3" stroke-linecap="round"/>"#,
            colour(s)
        );
    }
    for &a in anchors.iter().filter(|&&a| a < n) {
        let (x, y) = at(a);
        let s = a as f64 / (n - 1).max(1) as f64;
        let _ = writeln!(
            out,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="6" fill="{}" stroke="black" stroke-width="1.5"><title>frame {a}</title></circle>"#,
            colour(s)
        );
    }
    out.push_str("</svg>\n");
    out
}
