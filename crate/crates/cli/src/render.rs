//! Plots drawn from the CSV artifacts alone, so deleting the SVGs and
//! rendering again reproduces them exactly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::artifacts::{write_file, Table};
use crate::config::ProblemConfig;
use crate::error::CliError;
use crate::run::Stats;
use crate::svg::{figure, Panel, Series};

/// Values grouped by series label (first-appearance order) and then by
/// integer x.
#[derive(Default)]
struct Groups {
    order: Vec<String>,
    values: BTreeMap<String, BTreeMap<i64, Vec<f64>>>,
}

impl Groups {
    fn push(&mut self, label: &str, x: i64, y: f64) {
        if !self.values.contains_key(label) {
            self.order.push(label.to_string());
        }
        self.values.entry(label.to_string()).or_default().entry(x).or_default().push(y);
    }

    /// Mean line with a mean ± std band per label.
    fn series(&self) -> Vec<Series> {
        self.order
            .iter()
            .map(|label| {
                let mut s = Series {
                    label: label.clone(),
                    ..Series::default()
                };
                for (&x, ys) in &self.values[label] {
                    let st = Stats::of(ys).expect("non-empty group");
                    s.points.push((x as f64, st.mean));
                    if ys.len() > 1 {
                        s.band.push((x as f64, st.mean - st.std, st.mean + st.std));
                    }
                }
                s
            })
            .collect()
    }
}

fn p_of(table: &Table) -> f64 {
    match &table.embedded.config.problem {
        ProblemConfig::OneDim(c) => c.p,
        ProblemConfig::TwoDim(c) => c.p,
    }
}

fn convergence_panel(table: &Table, title: String) -> Result<Panel, CliError> {
    let (cm, ci, cw) = (table.column("method")?, table.column("iteration")?, table.column("w2sq")?);
    let p = p_of(table);
    let mut g = Groups::default();
    for row in &table.rows {
        let (Some(it), Some(w)) = (table.f64_at(row, ci), table.f64_at(row, cw)) else {
            continue;
        };
        g.push(&row[cm], it as i64, w.max(0.0).powf(1.0 / p));
    }
    Ok(Panel {
        title,
        x_label: "iteration".into(),
        y_label: format!("W{p} to data"),
        log_y: table.embedded.config.output.log_y,
        series: g.series(),
    })
}

fn seeds_note(table: &Table) -> String {
    let n = table.embedded.config.seeds.len();
    if n > 1 {
        format!(" (mean ± std, {n} seeds)")
    } else {
        String::new()
    }
}

/// `convergence.svg`, `observables.svg` and, in 1D, `kde.svg`.
pub fn render_run(dir: &Path) -> Result<(), CliError> {
    let curves = Table::read(&dir.join("curves.csv"))?;
    let block = curves.embedded.block();
    let panel = convergence_panel(&curves, format!("Convergence{}", seeds_note(&curves)))?;
    write_file(&dir.join("convergence.svg"), &figure(&[panel], &block))?;

    let obs = Table::read(&dir.join("observables.csv"))?;
    let (cm, ci) = (obs.column("method")?, obs.column("iteration")?);
    let mut panels = Vec::new();
    for name in ["mean_x1", "variance", "mean_x2", "mean_ratio_x1_x2"] {
        let c = obs.column(name)?;
        let mut g = Groups::default();
        let mut truth = Vec::new();
        for row in &obs.rows {
            let (Some(it), Some(v)) = (obs.f64_at(row, ci), obs.f64_at(row, c)) else {
                continue;
            };
            if row[cm] == "truth" {
                truth.push(v);
            } else {
                g.push(&row[cm], it as i64, v);
            }
        }
        if g.order.is_empty() {
            continue;
        }
        let mut series = g.series();
        if let Some(t) = Stats::of(&truth) {
            let (lo, hi) = series
                .iter()
                .flat_map(|s| s.points.iter().map(|p| p.0))
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
            series.push(Series {
                label: "truth".into(),
                points: vec![(lo, t.mean), (hi, t.mean)],
                band: Vec::new(),
                dashed: true,
            });
        }
        panels.push(Panel {
            title: format!("{name}{}", seeds_note(&obs)),
            x_label: "iteration".into(),
            y_label: name.into(),
            log_y: false,
            series,
        });
    }
    write_file(&dir.join("observables.svg"), &figure(&panels, &obs.embedded.block()))?;

    let kde_path = dir.join("kde.csv");
    if kde_path.is_file() {
        let kde = Table::read(&kde_path)?;
        let (cs, cx, cd) = (kde.column("series")?, kde.column("x")?, kde.column("density")?);
        let mut order: Vec<String> = Vec::new();
        let mut pts: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for row in &kde.rows {
            let (Some(x), Some(d)) = (kde.f64_at(row, cx), kde.f64_at(row, cd)) else {
                continue;
            };
            if !pts.contains_key(&row[cs]) {
                order.push(row[cs].clone());
            }
            pts.entry(row[cs].clone()).or_default().push((x, d));
        }
        let series = order
            .iter()
            .map(|l| Series {
                label: l.clone(),
                points: pts[l].clone(),
                band: Vec::new(),
                dashed: l == "truth",
            })
            .collect();
        let seed = kde.embedded.config.seeds.first().copied().unwrap_or(0);
        let panel = Panel {
            title: format!("Unfolded density, seed {seed}"),
            x_label: "x".into(),
            y_label: "density".into(),
            log_y: false,
            series,
        };
        write_file(&dir.join("kde.svg"), &figure(&[panel], &kde.embedded.block()))?;
    }
    Ok(())
}

/// `sweep.svg`: one convergence panel per sweep cell.
pub fn render_sweep(dir: &Path) -> Result<(), CliError> {
    let sweep = Table::read(&dir.join("sweep.csv"))?;
    let (ca, cv, cd) = (sweep.column("axis")?, sweep.column("value")?, sweep.column("dir")?);
    let mut seen = Vec::new();
    let mut panels = Vec::new();
    for row in &sweep.rows {
        if seen.contains(&row[cd]) {
            continue;
        }
        seen.push(row[cd].clone());
        let cell = Table::read(&dir.join(&row[cd]).join("curves.csv"))?;
        panels.push(convergence_panel(&cell, format!("{} = {}", row[ca], row[cv]))?);
    }
    write_file(&dir.join("sweep.svg"), &figure(&panels, &sweep.embedded.block()))
}

/// Re-renders every plot under `dir`, a run or a sweep directory.
pub fn render_dir(dir: &Path) -> Result<(), CliError> {
    if dir.join("sweep.csv").is_file() {
        let sweep = Table::read(&dir.join("sweep.csv"))?;
        let cd = sweep.column("dir")?;
        let mut seen: Vec<&str> = Vec::new();
        for row in &sweep.rows {
            if !seen.contains(&row[cd].as_str()) {
                seen.push(&row[cd]);
                render_run(&dir.join(&row[cd]))?;
            }
        }
        render_sweep(dir)
    } else if dir.join("curves.csv").is_file() {
        render_run(dir)
    } else {
        Err(CliError::Io(format!("{} holds no run artifacts", dir.display())))
    }
}
