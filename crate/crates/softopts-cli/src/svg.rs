//! Minimal self-contained SVG rendering: learning-curve plots and taxi
//! option/termination grids. No GUI, deterministic output.

use std::fmt::Write as _;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

pub struct Series {
    pub label: String,
    /// (x, y) points.
    pub points: Vec<(f64, f64)>,
    /// Optional shaded band: (x, low, high) per point.
    pub band: Vec<(f64, f64, f64)>,
}

fn nice_ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if !(hi - lo).is_finite() || hi <= lo {
        return vec![lo];
    }
    let raw = (hi - lo) / count as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        1.0
    } else if norm < 3.0 {
        2.0
    } else if norm < 7.0 {
        5.0
    } else {
        10.0
    } * mag;
    let start = (lo / step).ceil() * step;
    let mut ticks = Vec::new();
    let mut t = start;
    while t <= hi + step * 1e-9 {
        ticks.push(t);
        t += step;
    }
    ticks
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1_000_000.0 {
        format!("{:.1}M", v / 1_000_000.0)
    } else if v.abs() >= 10_000.0 {
        format!("{:.0}k", v / 1_000.0)
    } else if v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Renders labeled learning curves (with optional median bands) as a
/// standalone SVG document.
pub fn line_plot(series: &[Series], title: &str, x_label: &str, y_label: &str) -> String {
    let (width, height) = (760.0, 480.0);
    let (ml, mr, mt, mb) = (70.0, 160.0, 40.0, 55.0);
    let (pw, ph) = (width - ml - mr, height - mt - mb);

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        for &(_, lo, hi) in &s.band {
            y_min = y_min.min(lo);
            y_max = y_max.max(hi);
        }
    }
    if !x_min.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if (x_max - x_min).abs() < 1e-12 {
        x_max = x_min + 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;

    let sx = move |x: f64| ml + (x - x_min) / (x_max - x_min) * pw;
    let sy = move |y: f64| mt + ph - (y - y_min) / (y_max - y_min) * ph;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = write!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        ml + pw / 2.0,
        escape(title)
    );

    // axes and grid
    for t in nice_ticks(x_min, x_max, 6) {
        let x = sx(t);
        let _ = write!(
            svg,
            r#"<line x1="{x:.1}" y1="{mt}" x2="{x:.1}" y2="{:.1}" stroke="#e0e0e0"/>"#,
            mt + ph
        );
        let _ = write!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            mt + ph + 16.0,
            fmt_tick(t)
        );
    }
    for t in nice_ticks(y_min, y_max, 6) {
        let y = sy(t);
        let _ = write!(
            svg,
            r#"<line x1="{ml}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#e0e0e0"/>"#,
            ml + pw
        );
        let _ = write!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            ml - 6.0,
            y + 4.0,
            fmt_tick(t)
        );
    }
    let _ = write!(
        svg,
        r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"#
    );
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#,
        ml + pw / 2.0,
        height - 12.0,
        escape(x_label)
    );
    let _ = write!(
        svg,
        r#"<text x="16" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.band.len() >= 2 {
            let mut d = String::from("M");
            for &(x, lo, _hi) in &s.band {
                let _ = write!(d, " {:.1},{:.1}", sx(x), sy(lo));
            }
            for &(x, _lo, hi) in s.band.iter().rev() {
                let _ = write!(d, " L {:.1},{:.1}", sx(x), sy(hi));
            }
            let _ = write!(
                svg,
                r#"<path d="{d} Z" fill="{color}" fill-opacity="0.15" stroke="none"/>"#
            );
        }
        if !s.points.is_empty() {
            let mut d = String::from("M");
            for &(x, y) in &s.points {
                let _ = write!(d, " {:.1},{:.1}", sx(x), sy(y));
            }
            let _ = write!(
                svg,
                r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.8"/>"#
            );
        }
        // legend
        let ly = mt + 14.0 + i as f64 * 18.0;
        let lx = ml + pw + 10.0;
        let _ = write!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2.5"/>"#,
            lx + 22.0
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 28.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One taxi grid cell's rendering data.
pub struct CellGlyph {
    pub x: i32,
    pub y: i32,
    /// Most likely primitive action index (standard taxi ordering) and its
    /// probability.
    pub action: usize,
    pub action_prob: f64,
    /// Probability of terminating the option in this cell.
    pub term_prob: f64,
    pub special: Option<usize>,
}

pub struct TaxiPanel {
    pub title: String,
    pub cells: Vec<CellGlyph>,
}

/// Renders per-option taxi panels: intra-option argmax arrows (suppressed
/// below `arrow_floor`) and termination-probability circles.
pub fn taxi_grid(
    panels: &[TaxiPanel],
    grid_w: i32,
    grid_h: i32,
    walls: &[((i32, i32), (i32, i32))],
    arrow_floor: f64,
    columns: usize,
) -> String {
    let cell = 34.0;
    let margin = 24.0;
    let title_h = 22.0;
    let panel_w = grid_w as f64 * cell + margin;
    let panel_h = grid_h as f64 * cell + margin + title_h;
    let cols = columns.max(1);
    let rows = panels.len().div_ceil(cols);
    let width = cols as f64 * panel_w + margin;
    let height = rows as f64 * panel_h + margin;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = write!(svg, r#"<rect width="{width:.0}" height="{height:.0}" fill="white"/>"#);

    for (p, panel) in panels.iter().enumerate() {
        let ox = margin / 2.0 + (p % cols) as f64 * panel_w;
        let oy = margin / 2.0 + (p / cols) as f64 * panel_h + title_h;
        let _ = write!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13">{}</text>"#,
            ox,
            oy - 7.0,
            escape(&panel.title)
        );
        // cells
        for g in &panel.cells {
            let cx = ox + g.x as f64 * cell;
            let cy = oy + g.y as f64 * cell;
            let fill = match g.special {
                Some(i) => ["#fde9e9", "#e9f3fd", "#eafbe9", "#fdf7e3"][i % 4],
                None => "#ffffff",
            };
            let _ = write!(
                svg,
                r#"<rect x="{cx:.1}" y="{cy:.1}" width="{cell}" height="{cell}" fill="{fill}" stroke="#cccccc"/>"#
            );
            let (mx, my) = (cx + cell / 2.0, cy + cell / 2.0);
            // termination probability circle
            if g.term_prob > 0.01 {
                let r = 2.0 + 10.0 * g.term_prob;
                let _ = write!(
                    svg,
                    r#"<circle cx="{mx:.1}" cy="{my:.1}" r="{r:.1}" fill="#d62728" fill-opacity="{:.2}" stroke="none"/>"#,
                    0.15 + 0.5 * g.term_prob
                );
            }
            if g.action_prob >= arrow_floor {
                match g.action {
                    0..=3 => {
                        // N, E, S, W arrows; length scales with probability
                        let len = cell * 0.32 * (0.4 + 0.6 * g.action_prob);
                        let (dx, dy) = match g.action {
                            0 => (0.0, -len),
                            1 => (len, 0.0),
                            2 => (0.0, len),
                            _ => (-len, 0.0),
                        };
                        let (x2, y2) = (mx + dx, my + dy);
                        let _ = write!(
                            svg,
                            r#"<line x1="{mx:.1}" y1="{my:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="#1f77b4" stroke-width="2.2"/>"#
                        );
                        // arrow head
                        let (hx, hy) = (x2 + dx * 0.35, y2 + dy * 0.35);
                        let (px, py) = (-dy * 0.25, dx * 0.25);
                        let _ = write!(
                            svg,
                            r#"<polygon points="{hx:.1},{hy:.1} {:.1},{:.1} {:.1},{:.1}" fill="#1f77b4"/>"#,
                            x2 + px,
                            y2 + py,
                            x2 - px,
                            y2 - py
                        );
                    }
                    5 => {
                        // pickup/drop-off: square marker
                        let s = cell * 0.3;
                        let _ = write!(
                            svg,
                            r#"<rect x="{:.1}" y="{:.1}" width="{s:.1}" height="{s:.1}" fill="none" stroke="#2ca02c" stroke-width="2.2"/>"#,
                            mx - s / 2.0,
                            my - s / 2.0
                        );
                    }
                    _ => {
                        // no-op: small dot
                        let _ = write!(
                            svg,
                            r#"<circle cx="{mx:.1}" cy="{my:.1}" r="2.2" fill="#7f7f7f"/>"#
                        );
                    }
                }
            }
        }
        // walls on top
        for &((ax, ay), (bx, by)) in walls {
            // wall between two adjacent cells: draw the shared edge
            let (hx, hy) = ((ax + bx) as f64 / 2.0, (ay + by) as f64 / 2.0);
            let (x1, y1, x2, y2) = if ay == by {
                // vertical edge between horizontally adjacent cells
                let x = ox + (hx + 0.5) * cell;
                (x, oy + ay as f64 * cell, x, oy + (ay + 1) as f64 * cell)
            } else {
                let y = oy + (hy + 0.5) * cell;
                (ox + ax as f64 * cell, y, ox + (ax + 1) as f64 * cell, y)
            };
            let _ = write!(
                svg,
                r#"<line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="#555555" stroke-width="4"/>"#
            );
        }
    }
    svg.push_str("</svg>");
    svg
}
