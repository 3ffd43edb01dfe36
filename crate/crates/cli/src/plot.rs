//! Figures: ARI box plots, metric curves and mask galleries.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::DType;
use image::{Rgb, RgbImage};
use monet_lab::labrunner::{load_experiment, run_dir, ConditionResult, ExperimentEcho, EXPERIMENT_FILE, RUNS_DIR};
use monet_lab::model::{images_to_tensor, EpsMode, Monet};
use monet_lab::synthgen::{DatasetHandle, Split};
use monet_lab::trainer::{load_params, read_run_log, EvalPoint};
use monet_lab::LabError;
use plotters::prelude::*;

use crate::config::{CliError, CliResult};
use crate::{PlotArgs, PlotKind};

const PALETTE: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

fn draw_err<E: std::error::Error + Send + Sync>(e: DrawingAreaErrorKind<E>) -> CliError {
    CliError::Lab(LabError::io("plot", std::io::Error::other(e.to_string())))
}

pub fn plot(a: &PlotArgs) -> CliResult<()> {
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    let results = load_experiment(&a.runs)?;
    match a.kind {
        PlotKind::Box => box_plot(&results, &a.out)?,
        PlotKind::Curves => curves(&a.runs, &results, &a.out)?,
        PlotKind::Masks => masks(a, &results)?,
    }
    let side = sidecar(&a.out);
    let doc = serde_json::json!({
        "command": "plot",
        "argv": std::env::args().collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
        "resolved": { "runs": a.runs, "kind": format!("{:?}", a.kind).to_lowercase(), "images": a.images },
    });
    fs::write(&side, serde_json::to_string_pretty(&doc)?).map_err(|e| LabError::io(&side, e))?;
    println!("{}", a.out.display());
    Ok(())
}

/// `fig.svg` → `fig.svg.invocation.json`, so several figures can share a
/// directory.
fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".invocation.json");
    PathBuf::from(s)
}

fn runs_root(dir: &Path) -> PathBuf {
    if dir.join(RUNS_DIR).is_dir() {
        dir.join(RUNS_DIR)
    } else {
        dir.to_path_buf()
    }
}

fn box_plot(results: &[ConditionResult], out: &Path) -> CliResult<()> {
    let n = results.len();
    let width = (160 * n as u32).max(480);
    let root = SVGBackend::new(out, (width, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let names: Vec<String> = results.iter().map(|r| r.condition.clone()).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption("Final ARI per condition", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d(-0.5f64..n as f64 - 0.5, 0.0f64..1.0)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n.max(1))
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 {
                names.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc("ARI")
        .draw()
        .map_err(draw_err)?;

    for (i, r) in results.iter().enumerate() {
        if r.final_ari.is_empty() {
            continue;
        }
        let x = i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let iqr = r.q3 - r.q1;
        let inside: Vec<f64> = r
            .final_ari
            .iter()
            .copied()
            .filter(|v| *v >= r.q1 - 1.5 * iqr && *v <= r.q3 + 1.5 * iqr)
            .collect();
        let lo = inside.iter().copied().fold(r.q1, f64::min);
        let hi = inside.iter().copied().fold(r.q3, f64::max);
        let half = 0.3;
        chart
            .draw_series([
                Rectangle::new([(x - half, r.q1), (x + half, r.q3)], color.mix(0.3).filled()),
                Rectangle::new([(x - half, r.q1), (x + half, r.q3)], color.stroke_width(1)),
            ])
            .map_err(draw_err)?;
        chart
            .draw_series([
                PathElement::new(vec![(x - half, r.median), (x + half, r.median)], BLACK.stroke_width(2)),
                PathElement::new(vec![(x, r.q3), (x, hi)], color.stroke_width(1)),
                PathElement::new(vec![(x, r.q1), (x, lo)], color.stroke_width(1)),
                PathElement::new(vec![(x - half / 2.0, hi), (x + half / 2.0, hi)], color.stroke_width(1)),
                PathElement::new(vec![(x - half / 2.0, lo), (x + half / 2.0, lo)], color.stroke_width(1)),
            ])
            .map_err(draw_err)?;
        let outliers = r
            .seeds
            .iter()
            .zip(&r.final_ari)
            .filter(|(s, _)| r.outliers.contains(s))
            .map(|(_, v)| Circle::new((x, *v), 4, color.stroke_width(1)));
        chart.draw_series(outliers).map_err(draw_err)?;
    }
    root.present().map_err(draw_err)?;
    Ok(())
}

fn curves(dir: &Path, results: &[ConditionResult], out: &Path) -> CliResult<()> {
    let root_dir = runs_root(dir);
    let mut logs: Vec<(usize, String, Vec<EvalPoint>)> = Vec::new();
    for (i, r) in results.iter().enumerate() {
        for seed in &r.seeds {
            let series = read_run_log(&run_dir(&root_dir, &r.condition, *seed))?;
            logs.push((i, format!("{} s{seed}", r.condition), series));
        }
    }
    let max_step = logs
        .iter()
        .flat_map(|(_, _, s)| s.iter().map(|p| p.step))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let max_mse = logs
        .iter()
        .flat_map(|(_, _, s)| s.iter().map(|p| p.mse))
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-6);

    let root = SVGBackend::new(out, (960, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let (left, right) = root.split_horizontally(480);
    for (area, is_mse) in [(left, true), (right, false)] {
        let y_max = if is_mse { max_mse * 1.05 } else { 1.0 };
        let mut chart = ChartBuilder::on(&area)
            .caption(if is_mse { "Reconstruction MSE" } else { "ARI" }, ("sans-serif", 16))
            .margin(10)
            .x_label_area_size(32)
            .y_label_area_size(56)
            .build_cartesian_2d(0.0..max_step, 0.0..y_max)
            .map_err(draw_err)?;
        chart.configure_mesh().x_desc("step").draw().map_err(draw_err)?;
        for (i, label, series) in &logs {
            let color = PALETTE[*i % PALETTE.len()];
            let pts = series
                .iter()
                .map(|p| (p.step as f64, if is_mse { p.mse } else { p.ari }))
                .filter(|(_, v)| v.is_finite());
            let drawn = chart.draw_series(LineSeries::new(pts, color.stroke_width(1))).map_err(draw_err)?;
            if !is_mse {
                drawn
                    .label(label.clone())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 14, y)], color));
            }
        }
        if !is_mse {
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .position(SeriesLabelPosition::LowerRight)
                .draw()
                .map_err(draw_err)?;
        }
    }
    root.present().map_err(draw_err)?;
    Ok(())
}

/// PNG grid: one row per condition (its first seed); for each eval image the
/// input followed by the K attention masks.
fn masks(a: &PlotArgs, results: &[ConditionResult]) -> CliResult<()> {
    let echo_path = a.runs.join(EXPERIMENT_FILE);
    let text = fs::read_to_string(&echo_path).map_err(|e| LabError::io(&echo_path, e))?;
    let echo: ExperimentEcho = serde_json::from_str(&text)?;
    let data = a.data.clone().unwrap_or_else(|| echo.config.dataset.clone());
    let handle = DatasetHandle::open(&data)?;
    let eval = handle.load(Split::Eval)?;
    let n_img = a.images.min(eval.len);
    if n_img == 0 {
        return Err(CliError::usage("no eval images to draw"));
    }
    let (h, w, c) = (eval.height, eval.width, eval.channels);
    let k = echo.config.model.slots;
    let pad = 2;
    let zoom = (64 / h.max(1)).max(1);
    let (zh, zw) = (h * zoom, w * zoom);
    let cols = n_img * (k + 1);
    let rows: Vec<&ConditionResult> = results.iter().filter(|r| !r.seeds.is_empty()).collect();
    let mut canvas = RgbImage::from_pixel(
        (cols * (zw + pad) + pad) as u32,
        (rows.len().max(1) * (zh + pad) + pad) as u32,
        Rgb([255, 255, 255]),
    );
    let root_dir = runs_root(&a.runs);
    let pixels = &eval.images[..n_img * h * w * c];
    for (row, r) in rows.iter().enumerate() {
        let seed = r.seeds[0];
        let model = Monet::new(echo.config.model.clone(), seed)?;
        load_params(&run_dir(&root_dir, &r.condition, seed), &model)?;
        let x = images_to_tensor(pixels, n_img, h, w, c, model.dtype())?;
        let m = model.forward(&x, EpsMode::Zero, 0)?.masks.masks()?.to_dtype(DType::F32)?;
        let m = m.flatten_all()?.to_vec1::<f32>()?;
        let y0 = pad + row * (zh + pad);
        for i in 0..n_img {
            let x0 = pad + i * (k + 1) * (zw + pad);
            for yy in 0..h {
                for xx in 0..w {
                    let base = ((i * h + yy) * w + xx) * c;
                    let px: Vec<u8> = (0..3)
                        .map(|ch| {
                            let v = pixels[base + ch.min(c - 1)];
                            ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
                        })
                        .collect();
                    paint(&mut canvas, x0 + xx * zoom, y0 + yy * zoom, zoom, Rgb([px[0], px[1], px[2]]));
                    for s in 0..k {
                        let v = m[((i * k + s) * h + yy) * w + xx];
                        let g = (v * 255.0).round().clamp(0.0, 255.0) as u8;
                        let mx = x0 + (s + 1) * (zw + pad) + xx * zoom;
                        paint(&mut canvas, mx, y0 + yy * zoom, zoom, Rgb([g, g, g]));
                    }
                }
            }
        }
    }
    canvas
        .save(&a.out)
        .map_err(|e| LabError::io(&a.out, std::io::Error::other(e.to_string())))?;
    Ok(())
}

fn paint(canvas: &mut RgbImage, x: usize, y: usize, zoom: usize, px: Rgb<u8>) {
    for dy in 0..zoom {
        for dx in 0..zoom {
            canvas.put_pixel((x + dx) as u32, (y + dy) as u32, px);
        }
    }
}
