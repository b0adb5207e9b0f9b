//! Static SVG line chart for invariance curves.

use gtmp::eval::InvarianceReport;

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 56.0;

fn polyline(points: &[(f64, f64)], color: &str) -> String {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n", pts.join(" "))
}

/// Max deviation (log scale, left axis) and AUC (right axis) against translation magnitude.
pub fn invariance_svg(report: &InvarianceReport, threshold: f64) -> String {
    let n = report.points.len().max(1);
    let x_at = |i: usize| PAD + (W - 2.0 * PAD) * if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
    // Deviation axis spans 1e-18 .. 1e0 in log10.
    let (lo, hi) = (-18.0, 0.0);
    let y_dev = |d: f64| {
        let l = d.max(1e-18).log10().clamp(lo, hi);
        H - PAD - (H - 2.0 * PAD) * (l - lo) / (hi - lo)
    };
    let y_auc = |a: f64| H - PAD - (H - 2.0 * PAD) * a.clamp(0.0, 1.0);

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <line x1=\"{PAD}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{b}\" stroke=\"black\"/>\n",
        b = H - PAD,
        r = W - PAD
    );
    for e in [-18, -12, -6, 0] {
        let y = y_dev(10f64.powi(e));
        s.push_str(&format!("<text x=\"6\" y=\"{y:.1}\">1e{e}</text>\n"));
    }
    let ty = y_dev(threshold);
    s.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{ty:.1}\" x2=\"{}\" y2=\"{ty:.1}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n",
        W - PAD
    ));
    for (i, p) in report.points.iter().enumerate() {
        s.push_str(&format!("<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", x_at(i), H - PAD + 16.0, p.magnitude));
    }
    s.push_str(&format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">translation magnitude</text>\n", W / 2.0, H - 12.0));
    let dev: Vec<(f64, f64)> = report.points.iter().enumerate().map(|(i, p)| (x_at(i), y_dev(p.max_deviation))).collect();
    s.push_str(&polyline(&dev, "#c0392b"));
    s.push_str("<text x=\"64\" y=\"20\" fill=\"#c0392b\">max |score deviation| (log)</text>\n");
    if report.points.iter().all(|p| p.auc.is_some()) && !report.points.is_empty() {
        let auc: Vec<(f64, f64)> = report.points.iter().enumerate().map(|(i, p)| (x_at(i), y_auc(p.auc.unwrap()))).collect();
        s.push_str(&polyline(&auc, "#2471a3"));
        s.push_str("<text x=\"300\" y=\"20\" fill=\"#2471a3\">AUC (0..1)</text>\n");
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use gtmp::eval::InvariancePoint;

    #[test]
    fn draws_both_curves() {
        let rep = InvarianceReport {
            max_deviation: 1e-15,
            baseline_auc: Some(0.9),
            points: vec![
                InvariancePoint { magnitude: 0.0, max_deviation: 0.0, auc: Some(0.9) },
                InvariancePoint { magnitude: 10.0, max_deviation: 1e-15, auc: Some(0.9) },
            ],
        };
        let svg = invariance_svg(&rep, 1e-6);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }
}
