//! SVG renderings of the CSV/JSONL data files. The data files are the
//! contract; these images are a convenience.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use skillab::trainer::{read_metrics, METRICS_LOG};

type PlotResult<T> = Result<T, String>;

const SIZE: (u32, u32) = (800, 500);

fn palette(i: usize) -> RGBColor {
    const COLORS: [RGBColor; 6] = [
        RGBColor(31, 119, 180),
        RGBColor(255, 127, 14),
        RGBColor(44, 160, 44),
        RGBColor(214, 39, 40),
        RGBColor(148, 103, 189),
        RGBColor(140, 86, 75),
    ];
    COLORS[i % COLORS.len()]
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Draws named series of `(x, y)` points as lines.
pub fn line_chart(path: &Path, title: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> PlotResult<()> {
    let err = |e: &dyn std::fmt::Display| format!("{}: {e}", path.display());
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let xs = bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let ys = bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(xs.0..xs.1, ys.0..ys.1)
        .map_err(|e| err(&e))?;
    chart
        .configure_mesh()
        .x_desc("iteration")
        .y_desc(y_label)
        .draw()
        .map_err(|e| err(&e))?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = palette(i);
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(|e| err(&e))?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

/// Scatter of two normalised state dimensions, one colour per variant.
pub fn scatter_chart(path: &Path, title: &str, labels: (&str, &str), groups: &[(String, Vec<(f64, f64)>)]) -> PlotResult<()> {
    let err = |e: &dyn std::fmt::Display| format!("{}: {e}", path.display());
    let root = SVGBackend::new(path, (600, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(44)
        .build_cartesian_2d(0.0..1.0, 0.0..1.0)
        .map_err(|e| err(&e))?;
    chart
        .configure_mesh()
        .x_desc(labels.0)
        .y_desc(labels.1)
        .draw()
        .map_err(|e| err(&e))?;
    for (i, (name, pts)) in groups.iter().enumerate() {
        let color = palette(i);
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 2, color.mix(0.5).filled())))
            .map_err(|e| err(&e))?
            .label(name.clone())
            .legend(move |(x, y)| Circle::new((x + 8, y), 4, color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(&e))?;
    root.present().map_err(|e| err(&e))?;
    Ok(())
}

/// Skill reward and mean discriminator accuracy from a run's metrics log.
pub fn plot_training(metrics: &Path, out: &Path) -> PlotResult<()> {
    let m = read_metrics(metrics).map_err(|e| format!("{}: {e}", metrics.display()))?;
    let reward = m.iter().map(|r| (r.iteration as f64, r.mean_skill_reward)).collect();
    let acc = m
        .iter()
        .map(|r| {
            let a = &r.disc_accuracy;
            (r.iteration as f64, a.iter().sum::<f64>() / a.len().max(1) as f64)
        })
        .collect();
    line_chart(
        out,
        "training",
        "value",
        &[("skill reward".into(), reward), ("discriminator accuracy".into(), acc)],
    )
}

/// Per-variant skill-reward curves averaged over seeds.
pub fn plot_reward_curves(csv_path: &Path, out: &Path) -> PlotResult<()> {
    let mut rdr = csv::Reader::from_path(csv_path).map_err(|e| format!("{}: {e}", csv_path.display()))?;
    // variant -> iteration -> (sum, count)
    let mut acc: BTreeMap<String, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| format!("{}: {e}", csv_path.display()))?;
        let parse = |i: usize| rec.get(i).unwrap_or_default().to_string();
        let it: usize = parse(2).parse().map_err(|e| format!("bad iteration: {e}"))?;
        let r: f64 = parse(3).parse().map_err(|e| format!("bad reward: {e}"))?;
        let slot = acc.entry(parse(0)).or_default().entry(it).or_insert((0.0, 0));
        slot.0 += r;
        slot.1 += 1;
    }
    let series: Vec<(String, Vec<(f64, f64)>)> = acc
        .into_iter()
        .map(|(v, pts)| (v, pts.into_iter().map(|(i, (s, n))| (i as f64, s / n as f64)).collect()))
        .collect();
    line_chart(out, "skill reward", "mean skill reward", &series)
}

/// Scatter of the first two coverage dimensions per variant.
pub fn plot_scatter(csv_path: &Path, out: &Path) -> PlotResult<()> {
    let mut rdr = csv::Reader::from_path(csv_path).map_err(|e| format!("{}: {e}", csv_path.display()))?;
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    if headers.len() < 3 {
        return Err(format!("{} has fewer than two data columns", csv_path.display()));
    }
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let x: f64 = rec[1].parse().map_err(|e| format!("bad value: {e}"))?;
        let y: f64 = rec[2].parse().map_err(|e| format!("bad value: {e}"))?;
        groups.entry(rec[0].to_string()).or_default().push((x, y));
    }
    let groups: Vec<_> = groups.into_iter().collect();
    let title = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("scatter");
    scatter_chart(out, title, (&headers[1], &headers[2]), &groups)
}

/// Renders every recognised data file in `dir` into `out_dir`.
pub fn plot_dir(dir: &Path, out_dir: &Path) -> PlotResult<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let mut written = Vec::new();
    let metrics = dir.join(METRICS_LOG);
    if metrics.exists() {
        let out = out_dir.join("training.svg");
        plot_training(&metrics, &out)?;
        written.push(out);
    }
    let curves = dir.join("reward_curves.csv");
    if curves.exists() {
        let out = out_dir.join("reward_curves.svg");
        plot_reward_curves(&curves, &out)?;
        written.push(out);
    }
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("scatter_seed") && n.ends_with(".csv"))
        })
        .collect();
    entries.sort();
    for p in entries {
        let out = out_dir.join(p.with_extension("svg").file_name().expect("file name"));
        plot_scatter(&p, &out)?;
        written.push(out);
    }
    Ok(written)
}
