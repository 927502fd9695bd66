//! Dependency-free SVG polyline plot of a ROC sweep.

use irstd_core::metrics::RocPoint;

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Pd (y) against Fa in 1e-6 units (x), Fa axis scaled to the largest
/// observed value.
pub fn roc_svg(points: &[RocPoint], auc: f64) -> String {
    let fa_max = points.iter().fold(0.0f64, |m, p| m.max(p.fa)).max(1e-12);
    let px = |fa: f64| MARGIN + (fa / fa_max) * (W - 2.0 * MARGIN);
    let py = |pd: f64| H - MARGIN - pd * (H - 2.0 * MARGIN);

    let mut sorted: Vec<&RocPoint> = points.iter().collect();
    sorted.sort_by(|a, b| (a.fa, a.pd).partial_cmp(&(b.fa, b.pd)).unwrap());
    let path: Vec<String> = sorted
        .iter()
        .map(|p| format!("{:.2},{:.2}", px(p.fa), py(p.pd)))
        .collect();

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // axes
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        m = MARGIN,
        y0 = H - MARGIN,
        x1 = W - MARGIN
    ));
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        m = MARGIN,
        y0 = H - MARGIN
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"14\">Fa (1e-6/px), max {:.3}</text>\n",
        W / 2.0 - 80.0,
        H - MARGIN / 3.0,
        fa_max
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"14\" transform=\"rotate(-90 18 {})\">Pd</text>\n",
        18.0,
        H / 2.0,
        H / 2.0
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"14\">AUC = {auc:.4}</text>\n",
        W - MARGIN - 120.0,
        MARGIN
    ));
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"crimson\" stroke-width=\"2\"/>\n",
        path.join(" ")
    ));
    svg.push_str("</svg>\n");
    svg
}
