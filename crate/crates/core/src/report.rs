//! Plain SVG figures and CSV tables built from a [`ResultBundle`].
//!
//! The plots are deliberately simple: polylines, shaded bands and a few axis
//! labels, written without any plotting dependency.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::fitting::ModelFit;
use crate::pipeline::ResultBundle;
use crate::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f"];

#[derive(Debug, Clone, Default)]
pub struct Plot {
    title: String,
    lines: Vec<(String, Vec<(f64, f64)>)>,
    bands: Vec<(Vec<(f64, f64, f64)>, String)>,
    spans: Vec<(f64, f64)>,
}

impl Plot {
    pub fn new(title: &str) -> Self {
        Plot {
            title: title.to_string(),
            ..Plot::default()
        }
    }

    /// Adds a polyline; missing values split it into separate segments.
    pub fn line(&mut self, label: &str, xs: &[i64], ys: &[Option<f64>]) -> &mut Self {
        let pts = xs
            .iter()
            .zip(ys)
            .map(|(&x, y)| (x as f64, y.filter(|v| v.is_finite()).unwrap_or(f64::NAN)))
            .collect();
        self.lines.push((label.to_string(), pts));
        self
    }

    pub fn curve(&mut self, label: &str, pts: Vec<(f64, f64)>) -> &mut Self {
        self.lines.push((label.to_string(), pts));
        self
    }

    /// Adds a shaded band between `lo` and `hi`.
    pub fn band(&mut self, xs: &[i64], lo: &[Option<f64>], hi: &[Option<f64>], color: &str) -> &mut Self {
        let pts = xs
            .iter()
            .zip(lo.iter().zip(hi))
            .filter_map(|(&x, (l, h))| Some((x as f64, (*l)?, (*h)?)))
            .collect();
        self.bands.push((pts, color.to_string()));
        self
    }

    /// Highlights the x-interval `[a, b]`.
    pub fn span(&mut self, a: i64, b: i64) -> &mut Self {
        self.spans.push((a as f64, b as f64));
        self
    }

    fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let pts = self
            .lines
            .iter()
            .flat_map(|(_, p)| p.iter().copied())
            .chain(self.bands.iter().flat_map(|(b, _)| b.iter().flat_map(|&(x, l, h)| [(x, l), (x, h)])))
            .filter(|(x, y)| x.is_finite() && y.is_finite());
        let mut b: Option<(f64, f64, f64, f64)> = None;
        for (x, y) in pts {
            b = Some(match b {
                None => (x, x, y, y),
                Some((x0, x1, y0, y1)) => (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
            });
        }
        b.map(|(x0, x1, y0, y1)| {
            let pad = if y1 > y0 { 0.05 * (y1 - y0) } else { 0.5 };
            let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
            (x0, x1, y0 - pad, y1 + pad)
        })
    }

    pub fn to_svg(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{MARGIN}" y="20" font-size="14">{}</text>"#, escape(&self.title));
        let Some((x0, x1, y0, y1)) = self.bounds() else {
            out.push_str("<text x=\"50%\" y=\"50%\">no data</text>\n</svg>\n");
            return out;
        };
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
        for &(a, b) in &self.spans {
            let _ = writeln!(
                out,
                r##"<rect x="{:.1}" y="{MARGIN}" width="{:.1}" height="{:.1}" fill="#f2d98c" opacity="0.5"/>"##,
                sx(a),
                (sx(b) - sx(a)).max(1.0),
                HEIGHT - 2.0 * MARGIN
            );
        }
        for (pts, color) in &self.bands {
            if pts.is_empty() {
                continue;
            }
            let mut d = String::new();
            for (i, &(x, _, h)) in pts.iter().enumerate() {
                let _ = write!(d, "{}{:.1},{:.1} ", if i == 0 { "M" } else { "L" }, sx(x), sy(h));
            }
            for &(x, l, _) in pts.iter().rev() {
                let _ = write!(d, "L{:.1},{:.1} ", sx(x), sy(l));
            }
            let _ = writeln!(out, r#"<path d="{d}Z" fill="{color}" opacity="0.25" stroke="none"/>"#);
        }
        // Axes, with a marker at x = 0 when it is in range.
        let _ = writeln!(
            out,
            r#"<path d="M{MARGIN},{MARGIN} V{} H{}" fill="none" stroke="black"/>"#,
            HEIGHT - MARGIN,
            WIDTH - MARGIN
        );
        if x0 <= 0.0 && 0.0 <= x1 {
            let _ = writeln!(
                out,
                r#"<line x1="{0:.1}" x2="{0:.1}" y1="{MARGIN}" y2="{1}" stroke="gray" stroke-dasharray="4 3"/>"#,
                sx(0.0),
                HEIGHT - MARGIN
            );
        }
        for (v, anchor) in [(x0, "start"), (x1, "end")] {
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{}" text-anchor="{anchor}">{}</text>"#,
                sx(v),
                HEIGHT - MARGIN + 16.0,
                fmt_tick(v)
            );
        }
        for v in [y0, y1] {
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
                MARGIN - 4.0,
                sy(v) + 4.0,
                fmt_tick(v)
            );
        }
        for (i, (label, pts)) in self.lines.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let mut d = String::new();
            let mut pen_up = true;
            for &(x, y) in pts {
                if !y.is_finite() {
                    pen_up = true;
                    continue;
                }
                let _ = write!(d, "{}{:.1},{:.1} ", if pen_up { "M" } else { "L" }, sx(x), sy(y));
                pen_up = false;
            }
            let _ = writeln!(out, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.4"/>"#);
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" fill="{color}" text-anchor="end">{}</text>"#,
                WIDTH - MARGIN,
                MARGIN + 14.0 * i as f64,
                escape(label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.round() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders every figure the bundle has data for.
pub fn plots(bundle: &ResultBundle) -> Vec<(String, String)> {
    let mut figures = Vec::new();
    if let (Some(series), Some(null)) = (&bundle.series, &bundle.null) {
        for e in series.entries.iter().filter(|e| e.series.gender.is_none()) {
            let s = &e.series;
            let mut plot = Plot::new(&format!("{} cohort: mean valence by offset (minutes)", s.polarity));
            if let Some(span) = bundle
                .change
                .as_ref()
                .and_then(|c| c.find(s.polarity, None))
                .and_then(|c| c.cusum_span())
            {
                plot.span(span.0, span.1);
            }
            plot.line("smoothed", &s.offsets, &e.smoothed);
            if let Some(n) = null.find(s.polarity, None) {
                plot.line("null", &s.offsets, &n.null_smoothed);
            }
            figures.push((format!("valence_{}.svg", s.polarity), plot.to_svg()));

            if let Some((obs, nb)) = null.find(s.polarity, None).and_then(|n| Some((n.observed.as_ref()?, n.null.as_ref()?))) {
                let mut plot = Plot::new(&format!("{} cohort: bootstrap bands", s.polarity));
                plot.band(&obs.offsets, &obs.p5, &obs.p95, COLORS[0])
                    .band(&nb.offsets, &nb.p5, &nb.p95, COLORS[1])
                    .line("observed", &obs.offsets, &obs.p50)
                    .line("null", &nb.offsets, &nb.p50);
                figures.push((format!("bands_{}.svg", s.polarity), plot.to_svg()));
            }
        }
    }
    if let (Some(series), Some(fits)) = (&bundle.series, &bundle.fits) {
        for f in &fits.cohorts {
            let Some(e) = series.find(f.polarity, None) else { continue };
            let (a, b) = f.span;
            let idx: Vec<usize> = (0..e.series.offsets.len())
                .filter(|&i| (a..=b).contains(&e.series.offsets[i]))
                .collect();
            let xs: Vec<i64> = idx.iter().map(|&i| e.series.offsets[i]).collect();
            let ys: Vec<Option<f64>> = idx.iter().map(|&i| e.smoothed[i]).collect();
            let mut plot = Plot::new(&format!("{} cohort: fitted curves", f.polarity));
            plot.line("data", &xs, &ys);
            for m in &f.ranked {
                let pts = xs
                    .iter()
                    .map(|&x| {
                        let t = x as f64;
                        let y = match m {
                            ModelFit::TwoExponentials { rise, decay, .. } => {
                                if x < 0 {
                                    rise.eval(t)
                                } else {
                                    decay.eval(t)
                                }
                            }
                            ModelFit::Single { fit } => fit.eval(t),
                        };
                        (t, y)
                    })
                    .collect();
                plot.curve(&m.name(), pts);
            }
            figures.push((format!("fits_{}.svg", f.polarity), plot.to_svg()));
        }
    }
    if let (Some(peaks), Some(gmm)) = (&bundle.peaks, &bundle.gmm) {
        for g in &gmm.cohorts {
            let Some(p) = peaks.cohorts.iter().find(|p| p.polarity == g.polarity) else { continue };
            let values = p.values();
            let Some(fit) = g.selection.fits.iter().find(|f| f.k == g.selection.k) else { continue };
            let (lo, hi) = values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let bins = 40usize;
            let width = ((hi - lo) / bins as f64).max(1e-9);
            let mut hist = vec![0usize; bins];
            for v in &values {
                hist[(((v - lo) / width) as usize).min(bins - 1)] += 1;
            }
            let scale = values.len() as f64 * width;
            let mut plot = Plot::new(&format!("{} cohort: peak z-scores, k = {}", g.polarity, g.selection.k));
            plot.curve(
                "histogram",
                hist.iter()
                    .enumerate()
                    .flat_map(|(i, &c)| {
                        let y = c as f64 / scale;
                        [(lo + i as f64 * width, y), (lo + (i + 1) as f64 * width, y)]
                    })
                    .collect(),
            );
            plot.curve(
                "mixture density",
                (0..=200).map(|i| {
                    let x = lo + (hi - lo) * i as f64 / 200.0;
                    (x, fit.density(x))
                })
                .collect(),
            );
            figures.push((format!("peaks_{}.svg", g.polarity), plot.to_svg()));
        }
    }
    if let Some(rdd) = &bundle.rdd {
        for r in &rdd.cohorts {
            let d = &r.difference;
            let mut plot = Plot::new(&format!("{} cohort: male minus female valence", r.polarity));
            plot.line("difference", &d.offsets, &d.values);
            let pre: Vec<(f64, f64)> = d.offsets.iter().filter(|&&k| k < 0).map(|&k| (k as f64, r.fit.pre.predict(k as f64))).collect();
            let post: Vec<(f64, f64)> = d.offsets.iter().filter(|&&k| k >= 0).map(|&k| (k as f64, r.fit.post.predict(k as f64))).collect();
            plot.curve("pre fit", pre).curve("post fit", post);
            figures.push((format!("rdd_{}.svg", r.polarity), plot.to_svg()));
        }
    }
    figures
}

/// Writes every figure into `dir` and returns the file names.
pub fn write_plots(bundle: &ResultBundle, dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for (name, svg) in plots(bundle) {
        let path = dir.join(&name);
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        names.push(name);
    }
    Ok(names)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table {
    Fits,
    Durations,
    GenderSpans,
}

impl Table {
    pub fn parse(name: &str) -> Result<Table> {
        match name {
            "fits" => Ok(Table::Fits),
            "durations" => Ok(Table::Durations),
            "gender_spans" | "gender-spans" => Ok(Table::GenderSpans),
            other => Err(Error::Config(format!("unknown table {other:?}"))),
        }
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn span(v: Option<(i64, i64)>) -> String {
    v.map(|(a, b)| format!("[{a}; {b}]")).unwrap_or_default()
}

/// Renders one table as CSV. Errors when the bundle lacks the needed artifact
/// or the artifact has no rows.
pub fn emit_table(bundle: &ResultBundle, table: Table) -> Result<String> {
    let mut out = String::new();
    let rows = match table {
        Table::Fits => {
            let fits = bundle.fits.as_ref().ok_or_else(|| Error::InvalidInput("no fit results".into()))?;
            out.push_str("polarity,rank,model,sse,parameters\n");
            let mut n = 0;
            for f in &fits.cohorts {
                for (rank, m) in f.ranked.iter().enumerate() {
                    let params = match m {
                        ModelFit::TwoExponentials { rise, decay, .. } => format!(
                            "rise A={:.6} lambda={:.6} b={:.6}; decay A={:.6} lambda={:.6} b={:.6}",
                            rise.param("A"),
                            rise.param("lambda"),
                            rise.param("b"),
                            decay.param("A"),
                            decay.param("lambda"),
                            decay.param("b")
                        ),
                        ModelFit::Single { fit } => fit
                            .params
                            .iter()
                            .map(|(k, v)| format!("{k}={v:.6}"))
                            .collect::<Vec<_>>()
                            .join(" "),
                    };
                    let _ = writeln!(out, "{},{},{},{:.6e},\"{}\"", f.polarity, rank + 1, m.name(), m.sse(), params);
                    n += 1;
                }
            }
            n
        }
        Table::Durations => {
            let d = bundle
                .durations
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("no duration estimates".into()))?;
            out.push_str("polarity,method,span,duration_minutes\n");
            let mut n = 0;
            for c in &d.cohorts {
                for m in &c.methods {
                    let _ = writeln!(out, "{},{},{},{}", c.polarity, m.method.label(), span(m.span), opt(m.duration_minutes));
                    n += 1;
                }
                let _ = writeln!(out, "{},average,{},{}", c.polarity, span(c.average_span), opt(c.average_duration));
            }
            n
        }
        Table::GenderSpans => {
            let r = bundle
                .rdd
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("no gender results".into()))?;
            out.push_str("cell,cusum_span,cusum_minutes,ci_span,ci_minutes\n");
            for row in &r.gender_spans {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    row.label,
                    span(row.cusum_span),
                    opt(row.cusum_minutes),
                    span(row.ci_span),
                    opt(row.ci_minutes)
                );
            }
            r.gender_spans.len()
        }
    };
    if rows == 0 {
        return Err(Error::InsufficientData("table has no rows".into()));
    }
    Ok(out)
}
