//! Scatter plots of two-dimensional embeddings as standalone SVG.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, CliResult};
use crate::output::write_atomic;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 0.05;
const MARKER: f64 = 4.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
const SHAPES: [&str; 5] = ["circle", "square", "triangle", "diamond", "cross"];

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingPoint {
    pub x: [f64; 2],
    pub cluster: usize,
    pub label: Option<String>,
}

/// Parses an embedding CSV (`x1,…,xQ,cluster,label`). Anything other than
/// two latent columns is a usage error.
pub fn read_embedding(text: &str) -> CliResult<Vec<EmbeddingPoint>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| CliError::Usage("embedding file is empty".into()))?
        .split(',')
        .map(str::trim)
        .collect();
    let q = header.iter().take_while(|h| h.starts_with('x')).count();
    if header.len() != q + 2 || header[q] != "cluster" || header[q + 1] != "label" {
        return Err(CliError::Usage("embedding header must be x1,...,xQ,cluster,label".into()));
    }
    if q != 2 {
        return Err(CliError::Usage(format!("plots need a 2-D embedding, file has {q} latent columns")));
    }
    let mut points = Vec::new();
    for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || CliError::Usage(format!("embedding row {} is malformed", k + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let x = [f[0].parse().map_err(|_| bad())?, f[1].parse().map_err(|_| bad())?];
        if !x.iter().all(|v: &f64| v.is_finite()) {
            return Err(bad());
        }
        points.push(EmbeddingPoint {
            x,
            cluster: f[2].parse().map_err(|_| bad())?,
            label: (!f[3].is_empty()).then(|| f[3].to_string()),
        });
    }
    Ok(points)
}

fn axis(points: &[EmbeddingPoint], d: usize) -> (f64, f64) {
    let lo = points.iter().map(|p| p.x[d]).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.x[d]).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    (lo - MARGIN * span, hi + MARGIN * span)
}

fn marker(svg: &mut String, shape: &str, cx: f64, cy: f64, color: &str, label: Option<&str>) {
    let r = MARKER;
    let data = match label {
        Some(l) => format!(" data-label=\"{}\"", escape(l)),
        None => String::new(),
    };
    let attrs = format!("class=\"marker\" data-shape=\"{shape}\"{data} fill=\"{color}\"");
    let _ = match shape {
        "circle" => writeln!(svg, "<circle {attrs} cx=\"{cx:.3}\" cy=\"{cy:.3}\" r=\"{r}\"/>"),
        "square" => writeln!(
            svg,
            "<rect {attrs} x=\"{:.3}\" y=\"{:.3}\" width=\"{}\" height=\"{}\"/>",
            cx - r,
            cy - r,
            2.0 * r,
            2.0 * r
        ),
        "triangle" => writeln!(
            svg,
            "<path {attrs} d=\"M{cx:.3},{:.3} L{:.3},{:.3} L{:.3},{:.3} Z\"/>",
            cy - r,
            cx + r,
            cy + r,
            cx - r,
            cy + r
        ),
        "diamond" => writeln!(
            svg,
            "<path {attrs} d=\"M{cx:.3},{:.3} L{:.3},{cy:.3} L{cx:.3},{:.3} L{:.3},{cy:.3} Z\"/>",
            cy - r,
            cx + r,
            cy + r,
            cx - r
        ),
        _ => writeln!(
            svg,
            "<path {attrs} stroke=\"{color}\" stroke-width=\"1.5\" d=\"M{:.3},{:.3} L{:.3},{:.3} M{:.3},{:.3} L{:.3},{:.3}\"/>",
            cx - r,
            cy - r,
            cx + r,
            cy + r,
            cx - r,
            cy + r,
            cx + r,
            cy - r
        ),
    };
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Shape encodes the true label, color the assigned cluster. Output depends
/// only on the input points.
pub fn render_svg(points: &[EmbeddingPoint]) -> String {
    let labels: Vec<&str> = points
        .iter()
        .filter_map(|p| p.label.as_deref())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (x0, x1) = axis(points, 0);
    let (y0, y1) = axis(points, 1);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\" stroke=\"#444\"/>");
    for p in points {
        let px = (p.x[0] - x0) / (x1 - x0) * SIZE;
        // screen y grows downwards
        let py = (y1 - p.x[1]) / (y1 - y0) * SIZE;
        let shape = match &p.label {
            Some(l) => SHAPES[labels.iter().position(|k| k == l).expect("label seen") % SHAPES.len()],
            None => SHAPES[0],
        };
        marker(&mut svg, shape, px, py, PALETTE[p.cluster % PALETTE.len()], p.label.as_deref());
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn cmd_plot(embedding_csv: &Path, out_svg: &Path) -> CliResult<usize> {
    let text = std::fs::read_to_string(embedding_csv)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", embedding_csv.display())))?;
    let points = read_embedding(&text)?;
    write_atomic(out_svg, render_svg(&points).as_bytes())?;
    Ok(points.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = "x1,x2,cluster,label\n0,0,0,a\n1,0,1,b\n0,1,0,a\n1,1,2,\n";

    #[test]
    fn one_marker_per_point() {
        let points = read_embedding(TOY).unwrap();
        assert_eq!(points.len(), 4);
        assert_eq!(points[3].label, None);
        let svg = render_svg(&points);
        assert_eq!(svg.matches("class=\"marker\"").count(), 4);
        assert_eq!(svg, render_svg(&points));
    }

    #[test]
    fn margins_keep_points_inside() {
        let svg = render_svg(&read_embedding(TOY).unwrap());
        // the point at the minimum sits 5% of the span in from the edge
        let inset = MARGIN / (1.0 + 2.0 * MARGIN) * SIZE;
        assert!(svg.contains(&format!("cx=\"{inset:.3}\"")));
    }

    #[test]
    fn rejects_other_dimensions() {
        let three = "x1,x2,x3,cluster,label\n0,0,0,0,1\n";
        assert!(matches!(read_embedding(three), Err(CliError::Usage(_))));
        assert!(matches!(read_embedding("a,b\n1,2\n"), Err(CliError::Usage(_))));
        assert!(matches!(read_embedding("x1,x2,cluster,label\n0,zero,0,1\n"), Err(CliError::Usage(_))));
    }
}
