//! Time-space SVG diagrams of one lane on one day.

use std::fmt::Write as _;

use ftaed::data::{DayWindow, Feature, SensorGrid, TICK_SECONDS};

const CELL_W: f64 = 1.0;
const CELL_H: f64 = 8.0;
const LEFT: f64 = 60.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;
const RIGHT: f64 = 120.0;

/// What to draw over the speed field.
#[derive(Clone, Debug, Default)]
pub struct Overlay {
    /// Flagged `(time index, milemarker index)` cells on the drawn lane.
    pub flags: Vec<(usize, usize)>,
    /// Crash reports as `(unix time, milemarker)`.
    pub reports: Vec<(i64, Option<f64>)>,
}

/// Red at standstill through yellow to green at 70 mph.
pub fn speed_color(v: f32) -> String {
    let x = (v as f64 / 70.0).clamp(0.0, 1.0);
    let (r, g) = if x < 0.5 {
        (1.0, 2.0 * x)
    } else {
        (2.0 * (1.0 - x), 1.0)
    };
    format!("#{:02x}{:02x}20", (r * 220.0).round() as u8, (g * 200.0).round() as u8)
}

fn clock(seconds: i64) -> String {
    let s = seconds.rem_euclid(86_400);
    format!("{:02}:{:02}", s / 3600, (s % 3600) / 60)
}

/// One rect per (time, milemarker) cell of `lane` on day `day`, upstream at
/// the top, with flag markers and report ticks on top.
pub fn render(grid: &SensorGrid, window: &DayWindow, lane: u8, day: usize, overlay: &Overlay) -> String {
    let seg = grid.days()[day];
    let n_mm = grid.n_milemarkers();
    let width = LEFT + seg.len as f64 * CELL_W + RIGHT;
    let height = TOP + n_mm as f64 * CELL_H + BOTTOM;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{LEFT}" y="18" font-size="12">{} lane {lane}: speed (mph)</text>"#,
        seg.date
    )
    .unwrap();
    writeln!(s, r#"<g shape-rendering="crispEdges">"#).unwrap();
    for k in 0..seg.len {
        let t = seg.start + k;
        let x = LEFT + k as f64 * CELL_W;
        for m in 0..n_mm {
            let node = grid.node_index(m, lane);
            let fill = grid
                .get(t, node, Feature::Speed)
                .map_or_else(|| "#bbbbbb".to_string(), speed_color);
            let y = TOP + m as f64 * CELL_H;
            writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{fill}"/>"#
            )
            .unwrap();
        }
    }
    writeln!(s, "</g>").unwrap();

    // milemarker axis
    for m in (0..n_mm).step_by(5) {
        let y = TOP + (m as f64 + 0.5) * CELL_H + 3.0;
        writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#,
            LEFT - 4.0,
            grid.milemarkers()[m]
        )
        .unwrap();
    }
    // time axis, one tick per hour
    let t0 = grid.times()[seg.start];
    let ticks_per_hour = (3600 / TICK_SECONDS) as usize;
    let (_, local0) = window.local(t0);
    let first = (ticks_per_hour - (local0 / TICK_SECONDS) as usize % ticks_per_hour) % ticks_per_hour;
    let axis_y = TOP + n_mm as f64 * CELL_H;
    for k in (first..seg.len).step_by(ticks_per_hour) {
        let x = LEFT + k as f64 * CELL_W;
        writeln!(
            s,
            r##"<line x1="{x}" y1="{axis_y}" x2="{x}" y2="{}" stroke="#000"/>"##,
            axis_y + 4.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#,
            axis_y + 15.0,
            clock(local0 + k as i64 * TICK_SECONDS)
        )
        .unwrap();
    }

    for &(t, m) in &overlay.flags {
        if !seg.range().contains(&t) || m >= n_mm {
            continue;
        }
        let cx = LEFT + (t - seg.start) as f64 * CELL_W + 0.5 * CELL_W;
        let cy = TOP + (m as f64 + 0.5) * CELL_H;
        writeln!(s, r##"<circle cx="{cx}" cy="{cy}" r="1.5" fill="#000"/>"##).unwrap();
    }
    let t_last = grid.times()[seg.start + seg.len - 1];
    for &(time, mm) in &overlay.reports {
        if time < t0 || time > t_last {
            continue;
        }
        let x = LEFT + ((time - t0) / TICK_SECONDS) as f64 * CELL_W;
        let (y1, y2) = match mm.and_then(|mm| nearest(grid.milemarkers(), mm)) {
            Some(m) => (TOP + m as f64 * CELL_H - 4.0, TOP + (m as f64 + 1.0) * CELL_H + 4.0),
            None => (TOP, axis_y),
        };
        writeln!(
            s,
            r##"<line x1="{x}" y1="{y1}" x2="{x}" y2="{y2}" stroke="#1040ff" stroke-width="2"><title>crash report {}</title></line>"##,
            clock(local0 + (time - t0))
        )
        .unwrap();
    }

    // legend
    let lx = LEFT + seg.len as f64 * CELL_W + 20.0;
    for (i, v) in [0.0f32, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0].iter().enumerate() {
        let y = TOP + i as f64 * 14.0;
        writeln!(
            s,
            r#"<rect x="{lx}" y="{y}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{v}</text>"#,
            speed_color(*v),
            lx + 16.0,
            y + 10.0
        )
        .unwrap();
    }
    let y = TOP + 8.0 * 14.0 + 6.0;
    writeln!(
        s,
        r##"<circle cx="{}" cy="{}" r="2" fill="#000"/><text x="{}" y="{}">flagged</text>"##,
        lx + 6.0,
        y + 6.0,
        lx + 16.0,
        y + 10.0
    )
    .unwrap();
    writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#1040ff" stroke-width="2"/><text x="{}" y="{}">report</text>"##,
        lx + 6.0,
        y + 16.0,
        lx + 6.0,
        y + 28.0,
        lx + 16.0,
        y + 26.0
    )
    .unwrap();
    writeln!(s, "</svg>").unwrap();
    s
}

fn nearest(mms: &[f64], mm: f64) -> Option<usize> {
    (0..mms.len()).min_by(|&a, &b| (mms[a] - mm).abs().total_cmp(&(mms[b] - mm).abs()))
}
