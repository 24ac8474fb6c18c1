//! SVG report: free-energy profiles, per-walker CV traces and, for transfer
//! experiments, the source/target overlay with its ΔΔG table.

use anyhow::Result;
use tvde_core::plot::{heatmap, LinePlot, Series};
use tvde_core::transfer::TransferReport;

use crate::stages::{ddg_rows, load_runs, Ctx, Io, DDG_HEADER};

/// Longest trace drawn per walker; longer traces are strided.
const MAX_TRACE_POINTS: usize = 2000;
const HEATMAP_BINS: usize = 40;

fn parse_opt(s: &str) -> Result<Option<f64>> {
    Ok(if s.is_empty() { None } else { Some(s.parse()?) })
}

type Column = Vec<Option<f64>>;

fn read_fes(io: &Io, rel: &str, columns: usize) -> Result<(Vec<f64>, Vec<Column>)> {
    let mut rdr = csv::Reader::from_path(io.path(rel))?;
    let mut centers = Vec::new();
    let mut cols = vec![Vec::new(); columns];
    for rec in rdr.records() {
        let rec = rec?;
        let lo: f64 = rec[0].parse()?;
        let hi: f64 = rec[1].parse()?;
        centers.push(0.5 * (lo + hi));
        for (j, c) in cols.iter_mut().enumerate() {
            c.push(parse_opt(&rec[2 + j])?);
        }
    }
    Ok((centers, cols))
}

pub fn render(ctx: &Ctx, mut io: Io) -> Result<Vec<String>> {
    let (centers, f) = read_fes(&io, "fes.csv", 1)?;
    let fes = LinePlot {
        title: format!("Free energy along the learned CV ({:?})", ctx.cfg.reweight.estimator),
        x_label: "s".into(),
        y_label: "F / kT".into(),
        series: vec![Series::new("F(s)", &centers, &f[0])],
    };
    io.write("report/fes.svg", fes.to_svg().as_bytes())?;

    let (summary, runs) = load_runs(&io)?;
    let series = runs
        .iter()
        .map(|r| {
            let stride = r.s.len().div_ceil(MAX_TRACE_POINTS).max(1);
            let (t, s): (Vec<f64>, Vec<f64>) = r
                .s
                .iter()
                .enumerate()
                .step_by(stride)
                .map(|(i, s)| (i as f64 * r.trajectory.dt_record, *s))
                .unzip();
            Series::dense(&format!("walker {}", r.walker), &t, &s)
        })
        .collect();
    let traces = LinePlot { title: "CV traces".into(), x_label: "t".into(), y_label: "s".into(), series };
    io.write("report/traces.svg", traces.to_svg().as_bytes())?;

    if summary.potential.dim() == 2 {
        let svg = coordinate_fes(&io, &runs, summary.kt)?;
        io.write("report/fes_xy.svg", svg.as_bytes())?;
    }

    if ctx.cfg.transfer.is_some() {
        let rep: TransferReport = io.read_json("transfer/report.json")?;
        let centers = rep.source.fes.centers();
        let overlay = LinePlot {
            title: "Source vs target free energy".into(),
            x_label: "s".into(),
            y_label: "F / kT".into(),
            series: vec![
                Series::new(&rep.source.id, &centers, &rep.source.fes.free_energy),
                Series::new(&rep.target.id, &centers, &rep.target.fes.free_energy),
            ],
        };
        io.write("report/transfer_fes.svg", overlay.to_svg().as_bytes())?;
        io.write_table("report/ddg.csv", DDG_HEADER, &ddg_rows(&rep))?;
    }
    Ok(io.finish())
}

/// Reweighted free energy over the first two coordinates.
fn coordinate_fes(io: &Io, runs: &[tvde_core::MetadRun], kt: f64) -> Result<String> {
    let mut rdr = csv::Reader::from_path(io.path("weights.csv"))?;
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let walker: usize = rec[0].parse()?;
        let frame: usize = rec[1].parse()?;
        let w: f64 = rec[3].parse()?;
        let x = runs[walker].trajectory.frame(frame);
        samples.push((x[0], x[1], w));
    }
    let span = |f: fn(&(f64, f64, f64)) -> f64| {
        let lo = samples.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = samples.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi + 1e-9 * (hi - lo).abs().max(1.0))
    };
    let (xs, ys) = (span(|s| s.0), span(|s| s.1));
    let edges = |(lo, hi): (f64, f64)| -> Vec<f64> {
        (0..=HEATMAP_BINS).map(|i| lo + (hi - lo) * i as f64 / HEATMAP_BINS as f64).collect()
    };
    let cell = |v: f64, (lo, hi): (f64, f64)| (((v - lo) / (hi - lo)) * HEATMAP_BINS as f64) as usize;
    let mut mass = vec![vec![0.0; HEATMAP_BINS]; HEATMAP_BINS];
    for (x, y, w) in &samples {
        let (i, j) = (cell(*x, xs).min(HEATMAP_BINS - 1), cell(*y, ys).min(HEATMAP_BINS - 1));
        mass[i][j] += w;
    }
    let top = mass.iter().flatten().copied().fold(0.0, f64::max);
    let values: Vec<Vec<Option<f64>>> = mass
        .iter()
        .map(|row| row.iter().map(|m| (*m > 0.0).then(|| -kt * (m / top).ln())).collect())
        .collect();
    Ok(heatmap("Reweighted free energy (kT)", &edges(xs), &edges(ys), &values, ("x0", "x1")))
}
