//! Minimal static SVG heatmaps of planner landscapes.

use std::fmt::Write as _;

use adaptlaw::planner::{logit, FeasibilityGrid};

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 110.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

/// Five-stop blue-green-yellow ramp.
fn color(t: f64) -> String {
    const STOPS: [(f64, f64, f64); 5] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |u: f64, v: f64| (u + (v - u) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Heatmap over `(atpp, r)` with infeasible cells dimmed and the plan marked.
/// `values` are row-major like `grid.cells`.
pub fn heatmap(grid: &FeasibilityGrid, values: &[f64], title: &str, star: Option<(f64, f64)>) -> String {
    let (nr, na) = (grid.r.len(), grid.atpp.len());
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let (cw, ch) = (pw / na as f64, ph / nr as f64);
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    for (k, cell) in grid.cells.iter().enumerate() {
        let (i, j) = (k / na, k % na);
        let x = LEFT + j as f64 * cw;
        // r increases upwards
        let y = TOP + (nr - 1 - i) as f64 * ch;
        let opacity = if cell.feasible { 1.0 } else { 0.35 };
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}" fill-opacity="{opacity}"/>"#,
            cw + 0.3,
            ch + 0.3,
            color((values[k] - lo) / span)
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let (a0, a1) = (grid.atpp[0], grid.atpp[na - 1]);
    let (r0, r1) = (grid.r[0], grid.r[nr - 1]);
    let _ = writeln!(s, r#"<text x="{LEFT}" y="{}" text-anchor="start">{a0:.3}</text>"#, H - BOTTOM + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{a1:.0}</text>"#, LEFT + pw, H - BOTTOM + 16.0);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">adaptation tokens per parameter (log)</text>"#,
        LEFT + pw / 2.0,
        H - 12.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{r0:.3}</text>"#, LEFT - 6.0, TOP + ph);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{r1:.6}</text>"#, LEFT - 6.0, TOP + 10.0);
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {}) rotate(-90)" text-anchor="middle">replay ratio r (logit)</text>"#,
        TOP + ph / 2.0
    );
    // colour bar
    for k in 0..50 {
        let t = k as f64 / 49.0;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{:.2}" width="16" height="{:.2}" fill="{}"/>"#,
            W - RIGHT + 20.0,
            TOP + ph * (1.0 - t) - ph / 50.0,
            ph / 50.0 + 0.3,
            color(t)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, W - RIGHT + 40.0, TOP + 10.0, fmt_val(hi));
    let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, W - RIGHT + 40.0, TOP + ph, fmt_val(lo));
    if let Some((atpp, r)) = star {
        let fx = ((atpp / a0).ln() / (a1 / a0).ln()).clamp(0.0, 1.0);
        let fy = ((logit(r) - logit(r0)) / (logit(r1) - logit(r0))).clamp(0.0, 1.0);
        let (cx, cy) = (LEFT + cw / 2.0 + fx * (pw - cw), TOP + ph - ch / 2.0 - fy * (ph - ch));
        let points: Vec<String> = (0..10)
            .map(|k| {
                let rad = if k % 2 == 0 { 10.0 } else { 4.0 };
                let ang = std::f64::consts::PI * (k as f64 / 5.0 - 0.5);
                format!("{:.2},{:.2}", cx + rad * ang.cos(), cy + rad * ang.sin())
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="red" stroke="black" stroke-width="0.8"/>"#,
            points.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_val(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        "n/a".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(color(0.0), "#440154");
        assert_eq!(color(1.0), "#fde725");
        assert_eq!(color(f64::NAN), "#440154");
    }
}
