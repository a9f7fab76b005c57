//! Gradient-norm figure emission.
//!
//! Renders per-epoch gradient-norm traces either as a self-contained SVG
//! (mean line, min–max band, vertical rules at task boundaries, legend) or
//! as a plain columnar file for external plotting. The columnar format
//! round-trips losslessly.

use std::io::{BufRead, Write};

use crate::metrics::task_boundaries;
use crate::trainer::EpochGradStats;
use crate::{Error, Result};

/// One named trace to plot.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSeries {
    pub label: String,
    pub trace: Vec<EpochGradStats>,
}

const SERIES_COLORS: &[&str] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"].as_slice();

const COLUMNS_HEADER: &str = "series,task,epoch,grad_norm_mean_pre,grad_norm_min_pre,\
grad_norm_max_pre,grad_norm_mean_post,grad_norm_min_post,grad_norm_max_post";

fn validate(series: &[TraceSeries]) -> Result<()> {
    if series.is_empty() || series.iter().any(|s| s.trace.is_empty()) {
        return Err(Error::InvalidInput(
            "figure emission needs at least one non-empty trace".into(),
        ));
    }
    if series.iter().any(|s| s.label.contains(',')) {
        return Err(Error::InvalidInput("series labels must not contain ','".into()));
    }
    Ok(())
}

/// Writes all traces as plain CSV columns.
pub fn write_columnar<W: Write>(series: &[TraceSeries], w: &mut W) -> Result<()> {
    validate(series)?;
    writeln!(w, "{COLUMNS_HEADER}")?;
    for s in series {
        for g in &s.trace {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                s.label,
                g.task,
                g.epoch,
                g.mean_pre,
                g.min_pre,
                g.max_pre,
                g.mean_post,
                g.min_post,
                g.max_post
            )?;
        }
    }
    Ok(())
}

/// Reads traces written by [`write_columnar`].
pub fn read_columnar<R: BufRead>(r: R) -> Result<Vec<TraceSeries>> {
    let mut lines = r
        .lines()
        .collect::<std::io::Result<Vec<String>>>()?
        .into_iter()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty columnar file".into()))?;
    if header != COLUMNS_HEADER {
        return Err(Error::Parse(format!("unexpected header '{header}'")));
    }
    let mut series: Vec<TraceSeries> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Parse(format!(
                "line {}: expected 9 fields, got {}",
                lineno + 2,
                f.len()
            )));
        }
        let pf = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))
        };
        let pu = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 2)))
        };
        let stats = EpochGradStats {
            task: pu(f[1])?,
            epoch: pu(f[2])?,
            mean_pre: pf(f[3])?,
            min_pre: pf(f[4])?,
            max_pre: pf(f[5])?,
            mean_post: pf(f[6])?,
            min_post: pf(f[7])?,
            max_post: pf(f[8])?,
        };
        match series.last_mut() {
            Some(s) if s.label == f[0] => s.trace.push(stats),
            _ => series.push(TraceSeries {
                label: f[0].to_owned(),
                trace: vec![stats],
            }),
        }
    }
    if series.is_empty() {
        return Err(Error::Parse("columnar file has no data rows".into()));
    }
    Ok(series)
}

/// Writes a self-contained SVG: one line per series over the applied
/// (post-regularizer) mean norms, a min–max band, red dashed rules at task
/// boundaries of the first series, and a legend.
pub fn write_svg<W: Write>(series: &[TraceSeries], w: &mut W) -> Result<()> {
    validate(series)?;
    let width = 960.0;
    let height = 480.0;
    let (ml, mr, mt, mb) = (60.0, 20.0, 20.0, 44.0);
    let plot_w = width - ml - mr;
    let plot_h = height - mt - mb;

    let max_epochs = series.iter().map(|s| s.trace.len()).max().unwrap();
    let y_max = series
        .iter()
        .flat_map(|s| s.trace.iter().map(|g| g.max_post))
        .fold(f64::NEG_INFINITY, f64::max)
        .max(1e-12);

    let x_of = |i: usize| ml + plot_w * i as f64 / (max_epochs.max(2) - 1) as f64;
    let y_of = |v: f64| mt + plot_h * (1.0 - (v / y_max).clamp(0.0, 1.0));

    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    )?;
    writeln!(
        w,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    )?;

    // Axes.
    writeln!(
        w,
        r#"<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        mt + plot_h,
        ml + plot_w,
        mt + plot_h
    )?;
    writeln!(
        w,
        r#"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{}" stroke="black"/>"#,
        mt + plot_h
    )?;
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(y_max * frac);
        writeln!(
            w,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{:.3}</text>"#,
            ml - 6.0,
            y + 4.0,
            y_max * frac
        )?;
    }
    writeln!(
        w,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">epoch</text>"#,
        ml + plot_w / 2.0,
        height - 10.0
    )?;
    writeln!(
        w,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">gradient norm</text>"#,
        mt + plot_h / 2.0,
        mt + plot_h / 2.0
    )?;

    // Task-boundary rules from the first series.
    for b in task_boundaries(&series[0].trace) {
        let x = x_of(b);
        writeln!(
            w,
            r#"<line x1="{x}" y1="{mt}" x2="{x}" y2="{}" stroke="red" stroke-dasharray="4 3" stroke-width="1"/>"#,
            mt + plot_h
        )?;
    }

    for (si, s) in series.iter().enumerate() {
        let color = SERIES_COLORS[si % SERIES_COLORS.len()];

        // Min–max band as a closed polygon.
        let mut band = String::new();
        for (i, g) in s.trace.iter().enumerate() {
            band.push_str(&format!("{:.2},{:.2} ", x_of(i), y_of(g.max_post)));
        }
        for (i, g) in s.trace.iter().enumerate().rev() {
            band.push_str(&format!("{:.2},{:.2} ", x_of(i), y_of(g.min_post)));
        }
        writeln!(
            w,
            r#"<polygon points="{}" fill="{color}" opacity="0.18"/>"#,
            band.trim_end()
        )?;

        let mut line = String::new();
        for (i, g) in s.trace.iter().enumerate() {
            line.push_str(&format!("{:.2},{:.2} ", x_of(i), y_of(g.mean_post)));
        }
        writeln!(
            w,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.trim_end()
        )?;

        // Legend entry.
        let ly = mt + 16.0 + 18.0 * si as f64;
        writeln!(
            w,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            ml + 10.0,
            ml + 34.0
        )?;
        writeln!(
            w,
            r#"<text x="{}" y="{}" font-size="12">{}</text>"#,
            ml + 40.0,
            ly + 4.0,
            s.label
        )?;
    }

    writeln!(w, "</svg>")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mk_trace(n: usize, tasks: usize, scale: f64) -> Vec<EpochGradStats> {
        let per = n / tasks;
        (0..n)
            .map(|i| {
                let m = scale * (1.0 + (i as f64 * 0.7).sin().abs());
                EpochGradStats {
                    task: i / per,
                    epoch: i % per,
                    mean_pre: m,
                    min_pre: m * 0.8,
                    max_pre: m * 1.3,
                    mean_post: m * 0.95,
                    min_post: m * 0.75,
                    max_post: m * 1.2,
                }
            })
            .collect()
    }

    #[test]
    fn empty_input_is_rejected() {
        let mut out = Vec::new();
        assert!(write_svg(&[], &mut out).is_err());
        let empty = TraceSeries {
            label: "x".into(),
            trace: vec![],
        };
        assert!(write_columnar(&[empty], &mut out).is_err());
    }

    #[test]
    fn svg_has_two_distinguishable_series_and_boundaries() {
        let series = vec![
            TraceSeries {
                label: "baseline".into(),
                trace: mk_trace(12, 3, 1.0),
            },
            TraceSeries {
                label: "regularized".into(),
                trace: mk_trace(12, 3, 0.6),
            },
        ];
        let mut out = Vec::new();
        write_svg(&series, &mut out).unwrap();
        let svg = String::from_utf8(out).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("stroke-dasharray").count(), 2); // two boundaries
        assert!(svg.contains(">baseline<"));
        assert!(svg.contains(">regularized<"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn columnar_roundtrip_is_exact() {
        let series = vec![
            TraceSeries {
                label: "a".into(),
                trace: mk_trace(9, 3, 1.1),
            },
            TraceSeries {
                label: "b".into(),
                trace: mk_trace(6, 2, 0.4),
            },
        ];
        let mut out = Vec::new();
        write_columnar(&series, &mut out).unwrap();
        let back = read_columnar(out.as_slice()).unwrap();
        assert_eq!(back, series);
    }
}
