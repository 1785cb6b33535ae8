//! Static SVG learning-curve plots from an experiment directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::Variant;
use crate::error::{Error, Result};

/// `(simulation_steps, score)` points of one run.
pub type Curve = Vec<(f64, f64)>;

/// Reads the `simulation_steps` and `score` columns of a curve CSV.
pub fn read_curve(path: &Path) -> Result<Curve> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::config(format!("{} has no {name} column", path.display())))
    };
    let (xi, yi) = (col("simulation_steps")?, col("score")?);
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let parse = |i: usize| {
                f.get(i)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::config(format!("malformed row in {}: {l}", path.display())))
            };
            Ok((parse(xi)?, parse(yi)?))
        })
        .collect()
}

/// Curves of one variant, one per `seed_*.csv` file, in file-name order.
pub fn read_variant(dir: &Path, variant: Variant) -> Result<Vec<Curve>> {
    let sub = dir.join(variant.name());
    if !sub.is_dir() {
        return Ok(Vec::new());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(&sub)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_curve(p)).collect()
}

/// Pointwise median across curves, over the evaluation points all of them share.
pub fn median_curve(curves: &[Curve]) -> Curve {
    let n = curves.iter().map(Vec::len).min().unwrap_or(0);
    (0..n)
        .map(|i| {
            let mut ys: Vec<f64> = curves.iter().map(|c| c[i].1).collect();
            ys.sort_by(f64::total_cmp);
            let m = ys.len();
            let med = if m % 2 == 1 { ys[m / 2] } else { 0.5 * (ys[m / 2 - 1] + ys[m / 2]) };
            (curves[0][i].0, med)
        })
        .collect()
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;

fn color(variant: Variant) -> &'static str {
    match variant {
        Variant::Baseline => "#4477aa",
        Variant::Pretrained => "#cc6677",
    }
}

fn polyline(curve: &Curve, sx: &dyn Fn(f64) -> f64, sy: &dyn Fn(f64) -> f64, style: &str) -> String {
    let pts: Vec<String> = curve.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
    format!("<polyline fill=\"none\" {style} points=\"{}\"/>\n", pts.join(" "))
}

/// Renders per-seed curves (thin) and their median (thick) for each variant,
/// with a dashed line at `threshold`.
pub fn render_svg(title: &str, series: &[(Variant, Vec<Curve>)], threshold: Option<f64>) -> String {
    let all = series.iter().flat_map(|(_, cs)| cs.iter().flatten());
    let (mut x_max, mut y_min, mut y_max) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if let Some(t) = threshold {
        y_min = y_min.min(t);
        y_max = y_max.max(t);
    }
    if !y_min.is_finite() {
        (y_min, y_max) = (0.0, 1.0);
    }
    if y_max - y_min < 1e-9 {
        y_max = y_min + 1.0;
    }
    let sx = move |x: f64| MARGIN + x / x_max * (WIDTH - 2.0 * MARGIN);
    let sy = move |y: f64| HEIGHT - MARGIN - (y - y_min) / (y_max - y_min) * (HEIGHT - 2.0 * MARGIN);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
        WIDTH / 2.0
    );
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(svg, "<path d=\"M{x0},{y1} L{x0},{y0} L{x1},{y0}\" stroke=\"black\" fill=\"none\"/>");
    for i in 0..=4 {
        let fx = i as f64 / 4.0;
        let (xv, yv) = (fx * x_max, y_min + fx * (y_max - y_min));
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{xv:.0}</text>", sx(xv), y0 + 18.0);
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{yv:.2}</text>", x0 - 6.0, sy(yv) + 4.0);
    }
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">simulation steps</text>", WIDTH / 2.0, HEIGHT - 12.0);
    let _ = writeln!(svg, "<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">normalized score</text>", HEIGHT / 2.0, HEIGHT / 2.0);
    if let Some(t) = threshold {
        let _ = writeln!(svg, "<line x1=\"{x0}\" x2=\"{x1}\" y1=\"{:.1}\" y2=\"{:.1}\" stroke=\"gray\" stroke-dasharray=\"5,4\"/>", sy(t), sy(t));
    }
    for (k, (variant, curves)) in series.iter().enumerate() {
        let c = color(*variant);
        for curve in curves {
            svg += &polyline(curve, &sx, &sy, &format!("stroke=\"{c}\" stroke-opacity=\"0.25\" stroke-width=\"1\""));
        }
        svg += &polyline(&median_curve(curves), &sx, &sy, &format!("stroke=\"{c}\" stroke-width=\"2.5\""));
        let ly = y1 + 8.0 + 18.0 * k as f64;
        let _ = writeln!(svg, "<line x1=\"{}\" x2=\"{}\" y1=\"{ly}\" y2=\"{ly}\" stroke=\"{c}\" stroke-width=\"2.5\"/>", x1 - 150.0, x1 - 126.0);
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\">{} ({} seeds)</text>", x1 - 120.0, ly + 4.0, variant.name(), curves.len());
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `curves.svg` into an experiment directory and returns its path.
pub fn plot_experiment(dir: &Path, threshold: Option<f64>) -> Result<PathBuf> {
    let mut series = Vec::new();
    for v in [Variant::Baseline, Variant::Pretrained] {
        let curves = read_variant(dir, v)?;
        if !curves.is_empty() {
            series.push((v, curves));
        }
    }
    if series.is_empty() {
        return Err(Error::config(format!("no learning curves under {}", dir.display())));
    }
    let title = dir.file_name().map_or_else(|| "learning curves".into(), |n| n.to_string_lossy().into_owned());
    let path = dir.join("curves.svg");
    fs::write(&path, render_svg(&title, &series, threshold))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even() {
        let a = vec![(0.0, 1.0), (10.0, 3.0)];
        let b = vec![(0.0, 2.0), (10.0, 5.0)];
        let c = vec![(0.0, 9.0), (10.0, 4.0), (20.0, 1.0)];
        assert_eq!(median_curve(&[a.clone(), b.clone(), c]), vec![(0.0, 2.0), (10.0, 4.0)]);
        assert_eq!(median_curve(&[a, b]), vec![(0.0, 1.5), (10.0, 4.0)]);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let svg = render_svg("t", &[(Variant::Baseline, vec![vec![(0.0, 0.1), (5.0, 0.9)]])], Some(0.8));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
