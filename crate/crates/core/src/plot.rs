//! Standalone SVG charts: confusion heatmaps and training curves.

use std::fmt::Write as _;

use crate::data::{ClassLabel, NUM_CLASSES};
use crate::metrics::ConfusionMatrix;
use crate::model::History;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn class_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match ClassLabel::from_index(i) {
            Some(l) if n == NUM_CLASSES => l.symbol().to_string(),
            _ => i.to_string(),
        })
        .collect()
}

/// Heatmap of row-normalized counts with the raw count printed in each cell.
pub fn confusion_svg(cm: &ConfusionMatrix, title: &str) -> String {
    let n = cm.n_classes();
    let names = class_names(n);
    let cell = 36.0;
    let (left, top) = (60.0, 60.0);
    let size = cell * n as f64;
    let (w, h) = (left + size + 20.0, top + size + 50.0);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, w / 2.0, escape(title)).unwrap();
    for (i, row) in cm.counts().iter().enumerate() {
        let support = row.iter().sum::<u64>().max(1) as f64;
        for (j, &c) in row.iter().enumerate() {
            let frac = c as f64 / support;
            // White to deep blue.
            let shade = |lo: f64, hi: f64| (lo + (hi - lo) * frac).round() as u8;
            let (r, g, b) = (shade(255.0, 8.0), shade(255.0, 48.0), shade(255.0, 107.0));
            let (x, y) = (left + j as f64 * cell, top + i as f64 * cell);
            writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="#{r:02x}{g:02x}{b:02x}" stroke="#ccc"/>"##
            )
            .unwrap();
            let ink = if frac > 0.5 { "white" } else { "black" };
            writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{c}</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            )
            .unwrap();
        }
    }
    for (k, name) in names.iter().enumerate() {
        let pos = k as f64 * cell + cell / 2.0;
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pos, top - 6.0, escape(name)).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6.0, top + pos + 4.0, escape(name)).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">predicted</text>"#, left + size / 2.0, top + size + 25.0).unwrap();
    writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">true</text>"#,
        top + size / 2.0,
        top + size / 2.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

struct Panel<'a> {
    title: &'a str,
    series: [(&'a str, &'a str, Vec<f64>); 2],
}

fn polyline(values: &[f64], x0: f64, y0: f64, w: f64, h: f64, lo: f64, hi: f64) -> String {
    let n = values.len().max(2) - 1;
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = x0 + w * i as f64 / n as f64;
            let y = y0 + h - h * (v - lo) / (hi - lo);
            format!("{x:.2},{y:.2}")
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Two stacked panels: loss and accuracy per epoch, train and validation.
pub fn training_curves_svg(history: &History, title: &str) -> String {
    let e = &history.epochs;
    let panels = [
        Panel {
            title: "loss",
            series: [
                ("train", "#1f77b4", e.iter().map(|r| r.train_loss).collect()),
                ("val", "#d62728", e.iter().map(|r| r.val_loss).collect()),
            ],
        },
        Panel {
            title: "accuracy",
            series: [
                ("train", "#1f77b4", e.iter().map(|r| r.train_acc).collect()),
                ("val", "#d62728", e.iter().map(|r| r.val_acc).collect()),
            ],
        },
    ];
    let (w, ph, left, pw) = (560.0, 200.0, 60.0, 460.0);
    let h = 40.0 + 2.0 * (ph + 50.0);
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, w / 2.0, escape(title)).unwrap();
    for (p, panel) in panels.iter().enumerate() {
        let y0 = 40.0 + p as f64 * (ph + 50.0);
        let finite = panel.series.iter().flat_map(|(_, _, v)| v.iter().copied()).filter(|v| v.is_finite());
        let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        writeln!(s, r##"<rect x="{left}" y="{y0}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>"##).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, left + pw / 2.0, y0 - 6.0, panel.title).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{hi:.3}</text>"#, left - 4.0, y0 + 10.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{lo:.3}</text>"#, left - 4.0, y0 + ph).unwrap();
        writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, left + pw / 2.0, y0 + ph + 16.0).unwrap();
        for (k, (name, color, values)) in panel.series.iter().enumerate() {
            if !values.is_empty() {
                writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    polyline(values, left, y0, pw, ph, lo, hi)
                )
                .unwrap();
            }
            let ly = y0 + 14.0 + 14.0 * k as f64;
            writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{name}</text>"#, left + pw - 40.0).unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EpochRecord;

    #[test]
    fn confusion_svg_has_every_cell_and_label() {
        let cm = ConfusionMatrix::new(NUM_CLASSES);
        let svg = confusion_svg(&cm, "test <set>");
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect x=").count(), NUM_CLASSES * NUM_CLASSES);
        assert!(svg.contains(">F</text>"));
        assert!(svg.contains("test &lt;set&gt;"));
    }

    #[test]
    fn curves_have_four_series() {
        let h = History {
            epochs: (0..5)
                .map(|i| EpochRecord {
                    epoch: i,
                    lr: 1e-3,
                    train_loss: 1.0 / (i + 1) as f64,
                    train_acc: 0.2 * i as f64,
                    val_loss: 1.2 / (i + 1) as f64,
                    val_acc: 0.15 * i as f64,
                })
                .collect(),
        };
        let svg = training_curves_svg(&h, "run");
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(!svg.contains("NaN"));
        // Degenerate histories still render.
        assert!(training_curves_svg(&History::default(), "empty").contains("</svg>"));
    }
}
