//! Static SVG rendering: three orthographic scatter projections (xy, xz,
//! yz) with one color per cloud and a legend. Output bytes are a pure
//! function of the input clouds.

use defgen_core::cloud::PointCloud;

const PANEL: f64 = 340.0;
const MARGIN: f64 = 30.0;
const LEGEND_H: f64 = 26.0;

const PALETTE: [&str; 8] = [
    "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

struct Bounds {
    min: [f64; 3],
    max: [f64; 3],
}

fn bounds(clouds: &[(String, PointCloud)]) -> Bounds {
    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for (_, c) in clouds {
        for p in c.points() {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
    }
    // 5% padding; degenerate extents get a symmetric unit pad.
    for a in 0..3 {
        let span = (max[a] - min[a]).max(1e-9);
        min[a] -= 0.05 * span;
        max[a] += 0.05 * span;
    }
    Bounds { min, max }
}

/// Render up to 8 clouds as a deterministic SVG document.
pub fn render_svg(clouds: &[(String, PointCloud)]) -> String {
    let b = bounds(clouds);
    let width = 3.0 * PANEL + 4.0 * MARGIN;
    let height = PANEL + 2.0 * MARGIN + LEGEND_H * clouds.len() as f64;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // (horizontal axis, vertical axis, title)
    let panels: [(usize, usize, &str); 3] = [(0, 1, "xy"), (0, 2, "xz"), (1, 2, "yz")];
    for (i, (ax, ay, title)) in panels.iter().enumerate() {
        let ox = MARGIN + i as f64 * (PANEL + MARGIN);
        let oy = MARGIN;
        svg.push_str(&format!(
            "<rect x=\"{ox:.1}\" y=\"{oy:.1}\" width=\"{PANEL:.1}\" height=\"{PANEL:.1}\" \
             fill=\"none\" stroke=\"#999\" stroke-width=\"1\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"14\" \
             fill=\"#333\">{title}</text>\n",
            ox + 4.0,
            oy + 16.0
        ));
        // Shared isotropic scale per panel.
        let span_x = b.max[*ax] - b.min[*ax];
        let span_y = b.max[*ay] - b.min[*ay];
        let scale = (PANEL / span_x).min(PANEL / span_y);
        for (ci, (_, cloud)) in clouds.iter().enumerate() {
            let color = PALETTE[ci % PALETTE.len()];
            for p in cloud.points() {
                let px = ox + (p[*ax] - b.min[*ax]) * scale;
                let py = oy + PANEL - (p[*ay] - b.min[*ay]) * scale;
                svg.push_str(&format!(
                    "<circle cx=\"{px:.4}\" cy=\"{py:.4}\" r=\"2\" fill=\"{color}\" \
                     fill-opacity=\"0.7\"/>\n"
                ));
            }
        }
    }

    // Legend.
    for (ci, (label, cloud)) in clouds.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        let y = PANEL + MARGIN + 20.0 + ci as f64 * LEGEND_H;
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{y:.1}\" r=\"5\" fill=\"{color}\"/>\n",
            MARGIN + 6.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"13\" \
             fill=\"#333\">{label} ({} points)</text>\n",
            MARGIN + 18.0,
            y + 4.0,
            cloud.len()
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
