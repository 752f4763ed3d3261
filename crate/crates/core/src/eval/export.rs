use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub cutting: bool,
    pub material: String,
    pub thickness: String,
}

/// Columns `x,y,cutting,material,thickness`.
pub fn write_scatter_csv(path: &Path, points: &[ScatterPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    for p in points {
        w.serialize(p).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn confusion_csv(classes: &[String], confusion: &[Vec<usize>]) -> String {
    let mut out = String::from("truth");
    for c in classes {
        let _ = write!(out, ",pred_{c}");
    }
    out.push('\n');
    for (c, row) in classes.iter().zip(confusion) {
        out.push_str(c);
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

const FREE_COLOR: &str = "#1f77b4";
const CUT_COLOR: &str = "#2ca02c";

/// Standalone SVG scatter, free-motion points in blue and cutting in green.
pub fn scatter_svg(points: &[ScatterPoint], title: &str) -> String {
    let (w, h, pad) = (640.0, 480.0, 48.0);
    let bounds = |f: fn(&ScatterPoint) -> f64| {
        let (lo, hi) = points
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if lo.is_finite() && hi > lo {
            (lo, hi)
        } else {
            (lo.min(0.0) - 1.0, hi.max(0.0) + 1.0)
        }
    };
    let (x0, x1) = bounds(|p| p.x);
    let (y0, y1) = bounds(|p| p.y);
    let sx = |v: f64| pad + (v - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |v: f64| h - pad - (v - y0) / (y1 - y0) * (h - 2.0 * pad);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    for p in points {
        let color = if p.cutting { CUT_COLOR } else { FREE_COLOR };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}" fill-opacity="0.6"/>"#,
            sx(p.x),
            sy(p.y)
        );
    }
    let _ = writeln!(s, r#"<g class="legend" font-family="sans-serif" font-size="12">"#);
    for (i, (label, color)) in [("free-motion", FREE_COLOR), ("cutting", CUT_COLOR)].iter().enumerate() {
        let y = pad + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<g class="legend-entry"><circle cx="{}" cy="{}" r="5" fill="{color}"/><text x="{}" y="{}">{label}</text></g>"#,
            w - pad - 90.0,
            y,
            w - pad - 80.0,
            y + 4.0
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts() -> Vec<ScatterPoint> {
        (0..6)
            .map(|i| ScatterPoint {
                x: i as f64,
                y: -(i as f64),
                cutting: i % 2 == 0,
                material: "oak".into(),
                thickness: "1/4".into(),
            })
            .collect()
    }

    #[test]
    fn svg_has_two_legend_classes() {
        let svg = scatter_svg(&pts(), "latent <PCA>");
        assert_eq!(svg.matches(r#"class="legend-entry""#).count(), 2);
        assert_eq!(svg.matches("<circle").count(), 6 + 2);
        assert!(svg.contains("&lt;PCA&gt;"));
    }

    #[test]
    fn csv_rows_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_scatter_csv(&p, &pts()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("x,y,cutting,material,thickness"));
        assert_eq!(lines.count(), 6);
    }

    #[test]
    fn confusion_layout() {
        let c = confusion_csv(&["a".into(), "b".into()], &[vec![3, 1], vec![0, 2]]);
        assert_eq!(c, "truth,pred_a,pred_b\na,3,1\nb,0,2\n");
    }
}
