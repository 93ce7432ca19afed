//! Minimal SVG rendering of speed-density diagrams.

use std::fmt::Write as _;
use std::path::Path;

use crate::diagram::DiagramPoint;
use crate::error::Result;

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 45.0;

/// Empirical samples drawn as dots over the simulated diagram.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScatterPoint {
    pub rho: f64,
    pub u_x: f64,
    pub u_y: f64,
}

struct Panel {
    x0: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Panel {
    fn px(&self, rho: f64) -> f64 {
        self.x0 + MARGIN + rho.clamp(0.0, 1.0) * (PANEL_W - 2.0 * MARGIN)
    }

    fn py(&self, v: f64) -> f64 {
        let s = ((v - self.y_lo) / (self.y_hi - self.y_lo)).clamp(0.0, 1.0);
        PANEL_H - MARGIN - s * (PANEL_H - 2.0 * MARGIN)
    }

    fn frame(&self, out: &mut String, title: &str) {
        let (l, r) = (self.x0 + MARGIN, self.x0 + PANEL_W - MARGIN);
        let (t, b) = (MARGIN, PANEL_H - MARGIN);
        let _ = writeln!(
            out,
            r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            r - l,
            b - t
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{title}</text>"#,
            (l + r) / 2.0,
            t - 12.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">rho</text>"#,
            (l + r) / 2.0,
            b + 30.0
        );
        for k in 0..=4 {
            let rho = k as f64 / 4.0;
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{}" text-anchor="middle" font-size="10">{rho}</text>"#,
                self.px(rho),
                b + 14.0
            );
            let v = self.y_lo + (self.y_hi - self.y_lo) * rho;
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{:.1}" text-anchor="end" font-size="10">{v:.2}</text>"#,
                l - 4.0,
                self.py(v) + 3.0
            );
        }
    }

    fn polyline(&self, out: &mut String, pts: &[(f64, f64)], style: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(r, v)| format!("{:.2},{:.2}", self.px(r), self.py(v)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" {style}/>"#,
            coords.join(" ")
        );
    }

    fn dots(&self, out: &mut String, pts: &[(f64, f64)], fill: &str) {
        for &(r, v) in pts {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{fill}"/>"#,
                self.px(r),
                self.py(v)
            );
        }
    }
}

/// Two panels: `u_x` against density, and the mean lateral speed with its
/// uncertainty band.
pub fn render_diagram_svg(points: &[DiagramPoint], empirical: &[ScatterPoint]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{PANEL_H}" font-family="sans-serif">"#,
        2.0 * PANEL_W
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let left = Panel {
        x0: 0.0,
        y_lo: 0.0,
        y_hi: 1.0,
    };
    left.frame(&mut out, "u_x");
    let ux: Vec<(f64, f64)> = points.iter().map(|p| (p.rho, p.ux_inf)).collect();
    left.polyline(&mut out, &ux, r#"stroke="navy" stroke-width="1.5""#);
    left.dots(&mut out, &ux, "navy");
    let emp_x: Vec<(f64, f64)> = empirical.iter().map(|s| (s.rho, s.u_x)).collect();
    left.dots(&mut out, &emp_x, "darkorange");

    let span = points
        .iter()
        .flat_map(|p| [p.band_lo.abs(), p.band_hi.abs()])
        .chain(empirical.iter().map(|s| s.u_y.abs()))
        .fold(1e-3, f64::max);
    let right = Panel {
        x0: PANEL_W,
        y_lo: -span,
        y_hi: span,
    };
    right.frame(&mut out, "u_y");
    if !points.is_empty() {
        let mut band: Vec<(f64, f64)> = points.iter().map(|p| (p.rho, p.band_hi)).collect();
        band.extend(points.iter().rev().map(|p| (p.rho, p.band_lo)));
        let coords: Vec<String> = band
            .iter()
            .map(|&(r, v)| format!("{:.2},{:.2}", right.px(r), right.py(v)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polygon points="{}" fill="steelblue" fill-opacity="0.25" stroke="none"/>"#,
            coords.join(" ")
        );
    }
    let uy: Vec<(f64, f64)> = points.iter().map(|p| (p.rho, p.uy_bar_inf)).collect();
    right.polyline(&mut out, &uy, r#"stroke="navy" stroke-width="1.5""#);
    let emp_y: Vec<(f64, f64)> = empirical.iter().map(|s| (s.rho, s.u_y)).collect();
    right.dots(&mut out, &emp_y, "darkorange");

    out.push_str("</svg>\n");
    out
}

pub fn write_diagram_svg(
    path: &Path,
    points: &[DiagramPoint],
    empirical: &[ScatterPoint],
) -> Result<()> {
    std::fs::write(path, render_diagram_svg(points, empirical))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(rho: f64) -> DiagramPoint {
        DiagramPoint {
            rho,
            ux_inf: 1.0 - rho,
            uy_bar_inf: 0.0,
            ey_bar_inf: 0.01,
            var_ey_inf: 0.0,
            iy: 0.01,
            band_lo: -0.1,
            band_hi: 0.1,
            equilibrated: true,
        }
    }

    #[test]
    fn document_is_well_formed() {
        let pts: Vec<_> = [0.1, 0.5, 0.9].into_iter().map(point).collect();
        let emp = [ScatterPoint {
            rho: 0.3,
            u_x: 0.6,
            u_y: 0.05,
        }];
        let svg = render_diagram_svg(&pts, &emp);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polygon").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 3 + 2);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn empty_diagram_still_renders() {
        let svg = render_diagram_svg(&[], &[]);
        assert!(svg.contains("</svg>"));
        assert!(!svg.contains("<polygon"));
    }
}
