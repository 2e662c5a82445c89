//! Static SVG learning-curve rendering: team return and episode length
//! panels with shaded 95% confidence bands, no external dependencies.

use std::path::Path;

use crate::error::Result;

use super::aggregate::GroupCurve;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
    "#bcbd22", "#7f7f7f",
];

const WIDTH: f64 = 880.0;
const PANEL_H: f64 = 280.0;
const MARGIN_L: f64 = 74.0;
const MARGIN_R: f64 = 24.0;
const TITLE_H: f64 = 34.0;
const PANEL_GAP: f64 = 58.0;
const BOTTOM_H: f64 = 50.0;

/// Rounds a raw tick spacing up to a 1/2/5 × 10^k "nice" value.
fn nice_step(raw: f64) -> f64 {
    if raw <= 0.0 || !raw.is_finite() {
        return 1.0;
    }
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let step = nice_step((hi - lo) / target as f64);
    let first = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut t = first;
    while t <= hi + step * 1e-9 {
        // Snap near-zero ticks so "-0" never renders.
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

/// Compact axis numbers: 1500000 → "1.5M", 20000 → "20k", −207.5 → "−207.5".
fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a >= 1e6 {
        let s = format!("{:.1}", v / 1e6);
        format!("{}M", s.trim_end_matches(".0"))
    } else if a >= 1e4 {
        let s = format!("{:.1}", v / 1e3);
        format!("{}k", s.trim_end_matches(".0"))
    } else if a == 0.0 {
        "0".into()
    } else if a.fract() == 0.0 && a < 1e4 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Panel {
    top: f64,
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Panel {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_hi - self.x_lo).max(1e-12);
        MARGIN_L + (v - self.x_lo) / span * (WIDTH - MARGIN_L - MARGIN_R)
    }
    fn y(&self, v: f64) -> f64 {
        let span = (self.y_hi - self.y_lo).max(1e-12);
        self.top + PANEL_H - (v - self.y_lo) / span * PANEL_H
    }
}

fn value_bounds<'a>(series: impl Iterator<Item = (&'a [f64], &'a [f64])>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (means, cis) in series {
        for (m, c) in means.iter().zip(cis) {
            if m.is_finite() && c.is_finite() {
                lo = lo.min(m - c);
                hi = hi.max(m + c);
            }
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = (hi - lo) * 0.06;
    (lo - pad, hi + pad)
}

fn draw_panel(
    svg: &mut String,
    panel: &Panel,
    curves: &[GroupCurve],
    means: impl Fn(&GroupCurve) -> &[f64],
    cis: impl Fn(&GroupCurve) -> &[f64],
    y_label: &str,
    x_label: Option<&str>,
) {
    let left = MARGIN_L;
    let right = WIDTH - MARGIN_R;
    let bottom = panel.top + PANEL_H;
    svg.push_str(&format!(
        "<rect x='{left}' y='{}' width='{}' height='{PANEL_H}' fill='var(--bg,white)' stroke='#888' stroke-width='1'/>\n",
        panel.top,
        right - left
    ));
    for t in ticks(panel.y_lo, panel.y_hi, 5) {
        let y = panel.y(t);
        svg.push_str(&format!(
            "<line x1='{left}' y1='{y:.1}' x2='{right}' y2='{y:.1}' stroke='#ddd' stroke-width='0.6'/>\n"
        ));
        svg.push_str(&format!(
            "<text x='{:.1}' y='{:.1}' font-size='11' text-anchor='end' fill='#444'>{}</text>\n",
            left - 6.0,
            y + 3.5,
            fmt_tick(t)
        ));
    }
    for t in ticks(panel.x_lo, panel.x_hi, 6) {
        let x = panel.x(t);
        svg.push_str(&format!(
            "<line x1='{x:.1}' y1='{}' x2='{x:.1}' y2='{bottom}' stroke='#ddd' stroke-width='0.6'/>\n",
            panel.top
        ));
        svg.push_str(&format!(
            "<text x='{x:.1}' y='{:.1}' font-size='11' text-anchor='middle' fill='#444'>{}</text>\n",
            bottom + 14.0,
            fmt_tick(t)
        ));
    }
    svg.push_str(&format!(
        "<text x='16' y='{:.1}' font-size='12' fill='#222' transform='rotate(-90 16 {:.1})' text-anchor='middle'>{}</text>\n",
        panel.top + PANEL_H / 2.0,
        panel.top + PANEL_H / 2.0,
        xml_escape(y_label)
    ));
    if let Some(lbl) = x_label {
        svg.push_str(&format!(
            "<text x='{:.1}' y='{:.1}' font-size='12' fill='#222' text-anchor='middle'>{}</text>\n",
            (left + right) / 2.0,
            bottom + 32.0,
            xml_escape(lbl)
        ));
    }
    for (ci, curve) in curves.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        let m = means(curve);
        let c = cis(curve);
        // Confidence band: upper edge forward, lower edge back.
        if curve.n_runs >= 2 {
            let mut pts = Vec::new();
            for (i, &s) in curve.steps.iter().enumerate() {
                if m[i].is_finite() && c[i].is_finite() {
                    pts.push(format!("{:.1},{:.1}", panel.x(s as f64), panel.y(m[i] + c[i])));
                }
            }
            for (i, &s) in curve.steps.iter().enumerate().rev() {
                if m[i].is_finite() && c[i].is_finite() {
                    pts.push(format!("{:.1},{:.1}", panel.x(s as f64), panel.y(m[i] - c[i])));
                }
            }
            if pts.len() >= 3 {
                svg.push_str(&format!(
                    "<polygon points='{}' fill='{color}' fill-opacity='0.15' stroke='none'/>\n",
                    pts.join(" ")
                ));
            }
        }
        let line: Vec<String> = curve
            .steps
            .iter()
            .enumerate()
            .filter(|(i, _)| m[*i].is_finite())
            .map(|(i, &s)| format!("{:.1},{:.1}", panel.x(s as f64), panel.y(m[i])))
            .collect();
        if !line.is_empty() {
            svg.push_str(&format!(
                "<polyline points='{}' fill='none' stroke='{color}' stroke-width='1.8'/>\n",
                line.join(" ")
            ));
        }
    }
}

/// Renders the curves as a standalone two-panel SVG document.
pub fn render_svg(curves: &[GroupCurve], title: &str) -> String {
    let height = TITLE_H + PANEL_H + PANEL_GAP + PANEL_H + BOTTOM_H;
    let (x_lo, x_hi) = curves
        .iter()
        .flat_map(|c| c.steps.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s as f64), hi.max(s as f64))
        });
    let (x_lo, x_hi) = if x_lo.is_finite() { (x_lo, x_hi) } else { (0.0, 1.0) };
    let (r_lo, r_hi) = value_bounds(curves.iter().map(|c| (&c.ret_mean[..], &c.ret_ci[..])));
    let (l_lo, l_hi) = value_bounds(curves.iter().map(|c| (&c.len_mean[..], &c.len_ci[..])));

    let mut svg = format!(
        "<svg xmlns='http://www.w3.org/2000/svg' width='{WIDTH}' height='{height}' viewBox='0 0 {WIDTH} {height}' font-family='Helvetica,Arial,sans-serif'>\n<rect width='{WIDTH}' height='{height}' fill='white'/>\n"
    );
    svg.push_str(&format!(
        "<text x='{:.1}' y='22' font-size='15' font-weight='bold' text-anchor='middle' fill='#111'>{}</text>\n",
        WIDTH / 2.0,
        xml_escape(title)
    ));

    let top_panel = Panel { top: TITLE_H, x_lo, x_hi, y_lo: r_lo, y_hi: r_hi };
    draw_panel(
        &mut svg,
        &top_panel,
        curves,
        |c| &c.ret_mean,
        |c| &c.ret_ci,
        "team return",
        None,
    );
    let bot_panel = Panel {
        top: TITLE_H + PANEL_H + PANEL_GAP,
        x_lo,
        x_hi,
        y_lo: l_lo,
        y_hi: l_hi,
    };
    draw_panel(
        &mut svg,
        &bot_panel,
        curves,
        |c| &c.len_mean,
        |c| &c.len_ci,
        "episode length",
        Some("environment steps"),
    );

    // Legend in the top panel's upper-left corner.
    let mut ly = TITLE_H + 16.0;
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let label = if c.n_runs >= 2 {
            format!("{} ({} seeds)", c.label, c.n_runs)
        } else {
            c.label.clone()
        };
        svg.push_str(&format!(
            "<line x1='{:.1}' y1='{ly:.1}' x2='{:.1}' y2='{ly:.1}' stroke='{color}' stroke-width='2.4'/>\n",
            MARGIN_L + 10.0,
            MARGIN_L + 34.0
        ));
        svg.push_str(&format!(
            "<text x='{:.1}' y='{:.1}' font-size='12' fill='#222'>{}</text>\n",
            MARGIN_L + 40.0,
            ly + 4.0,
            xml_escape(&label)
        ));
        ly += 17.0;
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders and writes the SVG to disk.
pub fn write_svg(path: &Path, curves: &[GroupCurve], title: &str) -> Result<()> {
    std::fs::write(path, render_svg(curves, title))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_curve(label: &str, n_runs: usize, base: f64) -> GroupCurve {
        let steps: Vec<u64> = (1..=20).map(|i| i * 2000).collect();
        GroupCurve {
            label: label.into(),
            n_runs,
            ret_mean: steps.iter().map(|&s| base + s as f64 / 1e3).collect(),
            ret_ci: steps.iter().map(|_| if n_runs >= 2 { 5.0 } else { 0.0 }).collect(),
            len_mean: steps.iter().map(|_| 200.0).collect(),
            len_ci: vec![0.0; steps.len()],
            steps,
        }
    }

    #[test]
    fn rendered_document_contains_both_panels_and_all_curves() {
        let curves = vec![toy_curve("hlc", 5, -300.0), toy_curve("hasac", 1, -350.0)];
        let svg = render_svg(&curves, "escort3");
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("team return"));
        assert!(svg.contains("episode length"));
        assert!(svg.contains("hlc (5 seeds)"));
        assert!(svg.contains("hasac"));
        // Exactly one confidence band (the single-run curve draws none).
        assert_eq!(svg.matches("<polygon").count(), 2, "one band per panel for the 5-seed curve");
        assert_eq!(svg.matches("<polyline").count(), 4, "two curves per panel");
    }

    #[test]
    fn nan_diagnostics_do_not_poison_the_geometry() {
        let mut c = toy_curve("hlc", 2, -300.0);
        c.ret_mean[0] = f64::NAN;
        c.ret_ci[3] = f64::NAN;
        let svg = render_svg(&[c], "escort3");
        assert!(!svg.contains("NaN"), "non-finite points must be skipped");
    }

    #[test]
    fn tick_labels_use_compact_magnitudes() {
        assert_eq!(fmt_tick(1_500_000.0), "1.5M");
        assert_eq!(fmt_tick(2_000_000.0), "2M");
        assert_eq!(fmt_tick(20_000.0), "20k");
        assert_eq!(fmt_tick(0.0), "0");
        assert_eq!(fmt_tick(-207.5), "-207.5");
        assert_eq!(fmt_tick(-200.0), "-200");
    }

    #[test]
    fn nice_steps_round_to_125_multiples() {
        assert_eq!(nice_step(0.9), 1.0);
        assert_eq!(nice_step(1.2), 2.0);
        assert_eq!(nice_step(3.0), 5.0);
        assert_eq!(nice_step(70.0), 100.0);
        assert_eq!(nice_step(400000.0 / 6.0), 100000.0);
    }
}
