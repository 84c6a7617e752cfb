use super::Table;
use crate::config::{self, require_file};
use crate::{record, ConfigArgs};
use anyhow::{anyhow, bail, Result};
use plotters::prelude::*;
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlotOptions {
    seed: u64,
    input: PathBuf,
    /// SVG file to write.
    output: PathBuf,
    x: String,
    y: Vec<String>,
    #[serde(default)]
    title: String,
    #[serde(default)]
    x_label: Option<String>,
    #[serde(default)]
    y_label: Option<String>,
    #[serde(default = "default_width")]
    width: u32,
    #[serde(default = "default_height")]
    height: u32,
}

fn default_width() -> u32 {
    800
}
fn default_height() -> u32 {
    600
}

/// Closed range covering `values`, widened by 5% and never empty.
pub fn axis_range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return None;
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5f64.max(0.05 * lo.abs()) };
    Some((lo - pad, hi + pad))
}

/// Column values; empty cells become gaps.
fn series(t: &Table, name: &str) -> Result<Vec<Option<f64>>> {
    let c = t.column(name)?;
    t.rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let v = r.get(c).unwrap_or("").trim();
            if v.is_empty() {
                return Ok(None);
            }
            v.parse::<f64>()
                .map(|x| Some(x).filter(|x| x.is_finite()))
                .map_err(|_| anyhow!("{} row {}: column `{name}` value {v:?} is not a number", t.path.display(), i + 1))
        })
        .collect()
}

pub fn run(args: &ConfigArgs) -> Result<()> {
    let (o, table) = config::load::<PlotOptions>(args)?;
    require_file(&o.input, "input")?;
    if o.y.is_empty() {
        bail!("`y` must name at least one column");
    }
    let t = Table::read(&o.input)?;
    let xs = series(&t, &o.x)?;
    let lines: Vec<(String, Vec<(f64, f64)>)> = o
        .y
        .iter()
        .map(|name| {
            let ys = series(&t, name)?;
            let pts = xs.iter().zip(&ys).filter_map(|(x, y)| Some(((*x)?, (*y)?))).collect();
            Ok((name.clone(), pts))
        })
        .collect::<Result<_>>()?;
    let all = || lines.iter().flat_map(|(_, p)| p.iter());
    let (Some(xr), Some(yr)) = (axis_range(all().map(|p| p.0)), axis_range(all().map(|p| p.1))) else {
        bail!("{} has no finite points in the selected columns", o.input.display());
    };
    if let Some(dir) = o.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    {
        let root = SVGBackend::new(&o.output, (o.width, o.height)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| anyhow!("drawing: {e}"))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(&o.title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(56)
            .build_cartesian_2d(xr.0..xr.1, yr.0..yr.1)
            .map_err(|e| anyhow!("drawing: {e}"))?;
        chart
            .configure_mesh()
            .x_desc(o.x_label.clone().unwrap_or_else(|| o.x.clone()))
            .y_desc(o.y_label.clone().unwrap_or_else(|| o.y.join(", ")))
            .draw()
            .map_err(|e| anyhow!("drawing: {e}"))?;
        for (i, (name, pts)) in lines.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
                .map_err(|e| anyhow!("drawing: {e}"))?
                .label(name.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
            chart
                .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
                .map_err(|e| anyhow!("drawing: {e}"))?;
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| anyhow!("drawing: {e}"))?;
        root.present().map_err(|e| anyhow!("writing {}: {e}", o.output.display()))?;
    }
    let dir = o.output.parent().filter(|d| !d.as_os_str().is_empty()).map(PathBuf::from).unwrap_or_default();
    record::write(&dir, "plot", o.seed, &table)?;
    println!("wrote {} ({} series, x in [{:.4}, {:.4}], y in [{:.4}, {:.4}])", o.output.display(), lines.len(), xr.0, xr.1, yr.0, yr.1);
    Ok(())
}
