//! Dependency-free SVG line charts for the four figure panels.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("missing input {0}")]
    Missing(PathBuf),
    #[error("{0} has no data rows")]
    Empty(String),
    #[error("{file} line {line}: {msg}")]
    Malformed { file: String, line: usize, msg: String },
}

/// Numeric CSV with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(name: &str, text: &str) -> Result<Self, PlotError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((_, head)) = lines.next() else {
            return Err(PlotError::Empty(name.to_string()));
        };
        let header: Vec<String> = head.split(',').map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(PlotError::Malformed {
                    file: name.to_string(),
                    line: i + 1,
                    msg: format!("{} fields, header has {}", cells.len(), header.len()),
                });
            }
            let row = cells
                .iter()
                .map(|c| c.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| PlotError::Malformed { file: name.to_string(), line: i + 1, msg: e.to_string() })?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(PlotError::Empty(name.to_string()));
        }
        Ok(Self { name: name.to_string(), header, rows })
    }

    pub fn read(dir: &Path, name: &str) -> Result<Self, PlotError> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(|_| PlotError::Missing(path))?;
        Self::parse(name, &text)
    }

    pub fn column(&self, col: &str) -> Result<Vec<f64>, PlotError> {
        let k = self.header.iter().position(|h| h == col).ok_or_else(|| PlotError::Malformed {
            file: self.name.clone(),
            line: 1,
            msg: format!("no column {col}"),
        })?;
        Ok(self.rows.iter().map(|r| r[k]).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub color: &'static str,
    pub dashed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub loglog: bool,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const MARKER_LIMIT: usize = 60;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r <= 1.0 {
        1.0
    } else if r <= 2.0 {
        2.0
    } else if r <= 5.0 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn linear_ticks(lo: f64, hi: f64) -> (f64, f64, Vec<f64>) {
    let (lo, hi) = if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    };
    let step = nice_step(hi - lo, 6);
    let start = (lo / step).floor() * step;
    let end = (hi / step).ceil() * step;
    let n = ((end - start) / step).round() as usize;
    let ticks = (0..=n).map(|k| start + k as f64 * step).collect();
    (start, end, ticks)
}

fn log_ticks(lo: f64, hi: f64) -> (f64, f64, Vec<f64>) {
    let a = lo.log10().floor();
    let b = hi.log10().ceil().max(a + 1.0);
    let ticks = (a as i32..=b as i32).map(|e| e as f64).collect();
    (a, b, ticks)
}

fn fmt_tick(v: f64, log: bool) -> String {
    if log {
        return format!("1e{}", v as i32);
    }
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        return format!("{v:.1e}");
    }
    let s = format!("{v:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    pub fn render(&self) -> String {
        let tx = |v: f64| if self.loglog { v.log10() } else { v };
        let pts: Vec<Vec<(f64, f64)>> = self
            .series
            .iter()
            .map(|s| {
                s.x.iter()
                    .zip(&s.y)
                    .filter(|(x, y)| x.is_finite() && y.is_finite() && (!self.loglog || (**x > 0.0 && **y > 0.0)))
                    .map(|(&x, &y)| (tx(x), tx(y)))
                    .collect()
            })
            .collect();
        let all = || pts.iter().flatten();
        let (xmin, xmax) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let (ymin, ymax) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
        let (xmin, xmax, ymin, ymax) = if xmin.is_finite() { (xmin, xmax, ymin, ymax) } else { (0.0, 1.0, 0.0, 1.0) };
        let ((x0, x1, xt), (y0, y1, yt)) = if self.loglog {
            (log_ticks(10f64.powf(xmin), 10f64.powf(xmax)), log_ticks(10f64.powf(ymin), 10f64.powf(ymax)))
        } else {
            (linear_ticks(xmin, xmax), linear_ticks(ymin, ymax))
        };
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |v: f64| LEFT + (v - x0) / (x1 - x0) * pw;
        let sy = |v: f64| TOP + ph - (v - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        for &t in &xt {
            let x = sx(t);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#e0e0e0"/>"##,
                TOP,
                TOP + ph
            );
            let _ = writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                TOP + ph + 18.0,
                fmt_tick(t, self.loglog)
            );
        }
        for &t in &yt {
            let y = sy(t);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##,
                LEFT + pw
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                y + 4.0,
                fmt_tick(t, self.loglog)
            );
        }
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 15.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (ser, p) in self.series.iter().zip(&pts) {
            let path: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.8"{dash} points="{}"/>"#,
                ser.color,
                path.join(" ")
            );
            if p.len() <= MARKER_LIMIT {
                for &(x, y) in p {
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#, sx(x), sy(y), ser.color);
                }
            }
        }
        for (k, ser) in self.series.iter().enumerate() {
            let y = TOP + 16.0 + 18.0 * k as f64;
            let x = LEFT + pw - 170.0;
            let dash = if ser.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"{dash}/>"#,
                x + 24.0,
                ser.color
            );
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x + 30.0, y + 4.0, escape(&ser.label));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn series(label: &str, x: Vec<f64>, y: Vec<f64>, k: usize) -> Series {
    Series { label: label.to_string(), x, y, color: PALETTE[k % PALETTE.len()], dashed: false }
}

/// The four panels as `(file name, SVG)`; nothing is written here.
pub fn render_plots(dir: &Path, loglog: bool) -> Result<Vec<(String, String)>, PlotError> {
    let regret = Table::read(dir, "regret.csv")?;
    let perr = Table::read(dir, "param_error.csv")?;
    let traj = Table::read(dir, "trajectory.csv")?;
    let ep = regret.column("episode")?;
    let cum = Chart {
        title: "Cumulative regret".into(),
        x_label: "episodes L".into(),
        y_label: "R(L)".into(),
        series: vec![series("R(L)", ep.clone(), regret.column("regret_cum")?, 0)],
        loglog,
    };
    let avg = Chart {
        title: "Average regret".into(),
        x_label: "episodes L".into(),
        y_label: "R(L)/L".into(),
        series: vec![series("R(L)/L", ep, regret.column("regret_avg")?, 0)],
        loglog: false,
    };
    let err = Chart {
        title: "Parameter estimation error".into(),
        x_label: "episodes L".into(),
        y_label: "error / T".into(),
        series: vec![series("error", perr.column("episode")?, perr.column("error")?, 0)],
        loglog: false,
    };
    let t = traj.column("t")?;
    let mut learned = series("x1 learned", t.clone(), traj.column("x1_learned")?, 0);
    learned.dashed = true;
    let trajectory = Chart {
        title: "State trajectory".into(),
        x_label: "t".into(),
        y_label: "value".into(),
        series: vec![
            learned,
            series("x1 optimal", t.clone(), traj.column("x1_optimal")?, 1),
            series("s", t, traj.column("s1")?, 2),
        ],
        loglog: false,
    };
    Ok(vec![
        ("regret.svg".into(), cum.render()),
        ("avg_regret.svg".into(), avg.render()),
        ("param_error.svg".into(), err.render()),
        ("trajectory.svg".into(), trajectory.render()),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_inputs(dir: &Path, regret: &str) {
        fs::write(dir.join("regret.csv"), regret).unwrap();
        fs::write(dir.join("param_error.csv"), "episode,error\n1,3\n2,2\n3,1\n").unwrap();
        fs::write(
            dir.join("trajectory.csv"),
            "t,x1_learned,x2_learned,x1_optimal,x2_optimal,s1\n0,3,3,3,3,3\n1,2,1,2.1,1,4\n",
        )
        .unwrap();
    }

    const REGRET3: &str = "episode,v_learned,v_learned_stderr,v_opt,regret,regret_stderr,regret_cum,regret_cum_stderr,regret_avg\n\
1,5,0,1,4,0,4,0,4\n2,4,0,1,3,0,7,0,3.5\n3,2,0,1,1,0,8,0,2.6666666666666665\n";

    #[test]
    fn empty_regret_is_error() {
        let dir = tempfile::tempdir().unwrap();
        write_inputs(dir.path(), "episode,regret_cum,regret_avg\n");
        assert!(matches!(render_plots(dir.path(), false), Err(PlotError::Empty(_))));
        write_inputs(dir.path(), "");
        assert!(matches!(render_plots(dir.path(), false), Err(PlotError::Empty(_))));
    }

    #[test]
    fn three_rows_three_points() {
        let dir = tempfile::tempdir().unwrap();
        write_inputs(dir.path(), REGRET3);
        let files = render_plots(dir.path(), false).unwrap();
        assert_eq!(files.len(), 4);
        let svg = &files[0].1;
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("Cumulative regret") && svg.contains("episodes L"));
        let again = render_plots(dir.path(), false).unwrap();
        assert_eq!(files, again);
        let log = render_plots(dir.path(), true).unwrap();
        assert!(log[0].1.contains("1e0"));
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = Table::parse("x.csv", "a,b\n1,2\n3\n").unwrap_err();
        assert_eq!(err, PlotError::Malformed { file: "x.csv".into(), line: 3, msg: "1 fields, header has 2".into() });
        assert!(matches!(Table::parse("x.csv", "a\nfoo\n"), Err(PlotError::Malformed { line: 2, .. })));
    }

    #[test]
    fn ticks_cover_range() {
        let (lo, hi, t) = linear_ticks(0.3, 9.7);
        assert!(lo <= 0.3 && hi >= 9.7);
        assert!(t.len() >= 3);
        let (lo, hi, _) = linear_ticks(5.0, 5.0);
        assert!(lo < 5.0 && hi > 5.0);
    }
}
