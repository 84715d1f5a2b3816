//! Static SVG figures: bird's-eye trajectories and grouped score bars.

use std::fmt::Write as _;

use nextstop::pipeline::TrackLog;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Axes {
        let range = |v: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
            if lo > hi {
                (0.0, 1.0)
            } else if hi - lo < 1e-9 {
                (lo - 1.0, hi + 1.0)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        Axes {
            x: range(&mut xs.clone()),
            y: range(&mut ys.clone()),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    s
}

fn frame_and_ticks(s: &mut String, axes: &Axes, xlabel: &str, ylabel: &str, x_ticks: bool) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        r - l,
        b - t
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        if x_ticks {
            let xv = axes.x.0 + f * (axes.x.1 - axes.x.0);
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{xv:.1}</text>"#,
                axes.px(xv),
                b + 16.0
            );
        }
        let yv = axes.y.0 + f * (axes.y.1 - axes.y.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.1}</text>"#,
            l - 6.0,
            axes.py(yv) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 14.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(ylabel)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bird's-eye view of every track: one polyline per identity.
/// Returns the SVG and the number of tracks drawn.
pub fn trajectories(tracks: &TrackLog, title: &str) -> (String, usize) {
    let mut paths: std::collections::BTreeMap<(String, u32), Vec<(f64, f64)>> = Default::default();
    for boxes in tracks {
        for t in boxes {
            paths
                .entry((t.group.to_string(), t.track_id))
                .or_default()
                .push((t.bbox.cx, t.bbox.cy));
        }
    }
    let pts = paths.values().flatten();
    let axes = Axes::fit(pts.clone().map(|p| p.0), pts.map(|p| p.1));
    let mut s = header(title);
    frame_and_ticks(&mut s, &axes, "x [m]", "y [m]", true);
    for (k, ((group, id), path)) in paths.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let coords: Vec<String> = path
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", axes.px(x), axes.py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"><title>{group} {id}</title></polyline>"#,
            coords.join(" ")
        );
        for c in &coords {
            let (x, y) = c.split_once(',').unwrap();
            let _ = writeln!(s, r#"<circle cx="{x}" cy="{y}" r="2.5" fill="{color}"/>"#);
        }
        let ly = MARGIN + 14.0 + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{ly:.2}" fill="{color}" text-anchor="end">{group} {id}</text>"#,
            WIDTH - MARGIN - 6.0
        );
    }
    s.push_str("</svg>\n");
    (s, paths.len())
}

/// One named series of per-row scores in [0, 1].
pub struct ScoreSeries {
    pub name: String,
    pub values: Vec<(String, f64)>,
}

/// Grouped bar chart: one group per row name, one bar per series.
pub fn grouped_bars(series: &[ScoreSeries], title: &str, ylabel: &str) -> String {
    let mut rows: Vec<String> = Vec::new();
    for s in series {
        for (r, _) in &s.values {
            if !rows.contains(r) {
                rows.push(r.clone());
            }
        }
    }
    let axes = Axes {
        x: (0.0, rows.len().max(1) as f64),
        y: (0.0, 100.0),
    };
    let mut s = header(title);
    frame_and_ticks(&mut s, &axes, "", ylabel, false);
    let slot = 0.8 / series.len().max(1) as f64;
    for (g, row) in rows.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            axes.px(g as f64 + 0.5),
            HEIGHT - MARGIN + 16.0,
            escape(row)
        );
        for (k, ser) in series.iter().enumerate() {
            let Some(&(_, v)) = ser.values.iter().find(|(r, _)| r == row) else {
                continue;
            };
            let x0 = axes.px(g as f64 + 0.1 + k as f64 * slot);
            let x1 = axes.px(g as f64 + 0.1 + (k + 1) as f64 * slot);
            let (y0, y1) = (axes.py(0.0), axes.py(100.0 * v));
            let _ = writeln!(
                s,
                r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} {}: {:.2}</title></rect>"#,
                x1 - x0,
                y0 - y1,
                PALETTE[k % PALETTE.len()],
                escape(&ser.name),
                escape(row),
                100.0 * v
            );
        }
    }
    for (k, ser) in series.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" fill="{}" text-anchor="end">{}</text>"#,
            WIDTH - MARGIN - 6.0,
            MARGIN + 14.0 + 16.0 * k as f64,
            PALETTE[k % PALETTE.len()],
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}
