use std::fmt::Write as _;

use super::sample::Sample;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 40.0;

struct Series {
    name: &'static str,
    color: &'static str,
    value: fn(&Sample) -> f64,
}

const SERIES: [Series; 5] = [
    Series { name: "cpu", color: "red", value: |s| s.cpu_frac },
    Series { name: "tps", color: "green", value: |s| s.tps },
    Series { name: "io/s", color: "black", value: |s| s.io_per_s },
    Series { name: "bytes/s", color: "goldenrod", value: |s| s.log_bytes_per_s },
    Series { name: "flushes/s", color: "blue", value: |s| s.log_flushes_per_s },
];

/// Line chart of the sample series, each scaled to its own maximum.
pub fn render_svg(samples: &[Sample]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, y0) = (MARGIN, HEIGHT - MARGIN);
    let (w, h) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let _ = writeln!(
        out,
        r#"<polyline points="{x0},{MARGIN} {x0},{y0} {},{y0}" fill="none" stroke="gray"/>"#,
        x0 + w
    );
    let t_max = samples.last().map_or(0.0, |s| s.window_start_s).max(f64::MIN_POSITIVE);
    for (i, series) in SERIES.iter().enumerate() {
        let max = samples.iter().map(series.value).fold(0.0, f64::max);
        let mut points = String::new();
        for s in samples {
            let x = x0 + w * s.window_start_s / t_max;
            let y = if max > 0.0 { y0 - h * (series.value)(s) / max } else { y0 };
            let _ = write!(points, "{x:.1},{y:.1} ");
        }
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            points.trim_end(),
            series.color
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="20" font-size="12" fill="{}">{} (max {:.0})</text>"#,
            MARGIN + i as f64 * 150.0,
            series.color,
            series.name,
            max
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{:.0} s</text>"#,
        x0 + w,
        HEIGHT - 10.0,
        t_max
    );
    out.push_str("</svg>\n");
    out
}
