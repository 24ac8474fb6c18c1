//! Pipeline stages. Each stage reads the artifacts listed in its upstream
//! manifests, writes its own artifacts under the output directory and
//! records them in a manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use tvde_core::cvexpr::{compile, TicaStage};
use tvde_core::featurize::featurize;
use tvde_core::metad::{read_hills, run_walkers, write_hills, BiasState, Hill};
use tvde_core::reweight::{fes_project, kmeans, nearest, state_populations, Bins, Populations};
use tvde_core::tica::{self, TicaOptions};
use tvde_core::transfer::{reweight_runs, run_transfer_experiment, SystemMap, TransferConfig, TransferReport};
use tvde_core::worldbench::{simulate, Trajectory, TrajectoryMeta};
use tvde_core::{vde, CvPipeline, FeatureMatrix, MetadConfig, MetadRun, PotentialSpec, Scaler, Thermostat};

use crate::config::{seeds, ExperimentConfig};
use crate::manifest::{hash_file, hash_json, Manifest};
use crate::report;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Simulate,
    Featurize,
    Tica,
    TrainVde,
    ExportCv,
    Metad,
    Reweight,
    Transfer,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Simulate,
        Stage::Featurize,
        Stage::Tica,
        Stage::TrainVde,
        Stage::ExportCv,
        Stage::Metad,
        Stage::Reweight,
        Stage::Transfer,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Featurize => "featurize",
            Stage::Tica => "tica",
            Stage::TrainVde => "train-vde",
            Stage::ExportCv => "export-cv",
            Stage::Metad => "metad",
            Stage::Reweight => "reweight",
            Stage::Transfer => "transfer",
            Stage::Report => "report",
        }
    }

    fn upstream(self, cfg: &ExperimentConfig) -> Vec<Stage> {
        match self {
            Stage::Simulate => vec![],
            Stage::Featurize => vec![Stage::Simulate],
            Stage::Tica => vec![Stage::Featurize],
            Stage::TrainVde => vec![Stage::Tica],
            Stage::ExportCv | Stage::Metad | Stage::Transfer => vec![Stage::TrainVde],
            Stage::Reweight => vec![Stage::Metad],
            Stage::Report => {
                let mut v = vec![Stage::Metad, Stage::Reweight];
                if cfg.transfer.is_some() {
                    v.push(Stage::Transfer);
                }
                v
            }
        }
    }

    /// The part of the configuration this stage's outputs depend on.
    fn config_fragment(self, cfg: &ExperimentConfig) -> serde_json::Value {
        match self {
            Stage::Simulate => json!({
                "potential": cfg.system.source,
                "x0": cfg.system.x0,
                "thermostat": cfg.training_thermostat(),
                "simulate": cfg.simulate,
                "seed": cfg.stage_seed(seeds::SIMULATE),
            }),
            Stage::Featurize => json!({ "features": cfg.features }),
            Stage::Tica => json!({ "standardize": cfg.standardize, "tica": cfg.tica }),
            Stage::TrainVde => json!({ "pipeline": cfg.pipeline_config(), "input_dim": cfg.system.source.dim() }),
            Stage::ExportCv | Stage::Report => json!({}),
            Stage::Metad => json!({
                "potential": cfg.system.source,
                "x0": cfg.system.x0,
                "thermostat": cfg.system.thermostat,
                "metad": cfg.metad,
                "seed": cfg.stage_seed(seeds::METAD),
            }),
            Stage::Reweight => json!({ "reweight": cfg.reweight, "seed": cfg.stage_seed(seeds::METAD) }),
            Stage::Transfer => json!({
                "potential": cfg.system.source,
                "x0": cfg.system.x0,
                "thermostat": cfg.system.thermostat,
                "metad": cfg.metad,
                "reweight": cfg.reweight,
                "transfer": cfg.transfer,
                "seed": cfg.stage_seed(seeds::TRANSFER),
            }),
        }
    }
}

pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub force: bool,
    pub jobs: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Cached,
    Ran,
}

/// Runs one stage unless its manifest shows an up-to-date result.
pub fn run(ctx: &Ctx, stage: Stage) -> Result<Status> {
    if stage == Stage::Transfer && ctx.cfg.transfer.is_none() {
        bail!("the config has no [transfer] section; add one to run `tvde transfer`");
    }
    let mut inputs = BTreeMap::new();
    for up in stage.upstream(&ctx.cfg) {
        let m = Manifest::load(&ctx.out, up.name())?.ok_or_else(|| {
            anyhow!("stage `{stage}` needs the outputs of `{up}`, which has not run; run `tvde {up}` first")
        })?;
        for rel in m.outputs.keys() {
            let path = ctx.out.join(rel);
            if !path.exists() {
                bail!("missing upstream artifact {}; rerun `tvde {up}`", path.display());
            }
            inputs.insert(rel.clone(), hash_file(&path)?);
        }
    }
    let config_hash = hash_json(&stage.config_fragment(&ctx.cfg))?;
    let previous = Manifest::load(&ctx.out, stage.name())?;
    if let Some(m) = &previous {
        let fresh = m.version == VERSION && m.config_hash == config_hash && m.inputs == inputs;
        if fresh && !ctx.force && m.outputs_intact(&ctx.out) {
            log::info!("{stage}: up to date");
            return Ok(Status::Cached);
        }
    }
    log::info!("{stage}: running");
    let written = execute(ctx, stage)?;
    if let Some(m) = previous {
        for stale in m.outputs.keys().filter(|k| !written.contains(k)) {
            let _ = fs::remove_file(ctx.out.join(stale));
        }
    }
    let mut outputs = BTreeMap::new();
    for rel in written {
        let h = hash_file(&ctx.out.join(&rel))?;
        outputs.insert(rel, h);
    }
    Manifest {
        stage: stage.name().into(),
        version: VERSION.into(),
        seed: ctx.cfg.seed,
        config_hash,
        inputs,
        outputs,
    }
    .save(&ctx.out)?;
    Ok(Status::Ran)
}

fn execute(ctx: &Ctx, stage: Stage) -> Result<Vec<String>> {
    let io = Io { out: &ctx.out, written: Vec::new() };
    match stage {
        Stage::Simulate => simulate_stage(ctx, io),
        Stage::Featurize => featurize_stage(ctx, io),
        Stage::Tica => tica_stage(ctx, io),
        Stage::TrainVde => train_stage(ctx, io),
        Stage::ExportCv => export_stage(io),
        Stage::Metad => metad_stage(ctx, io),
        Stage::Reweight => reweight_stage(ctx, io),
        Stage::Transfer => transfer_stage(ctx, io),
        Stage::Report => report::render(ctx, io),
    }
}

/// Artifact reader/writer that records what it wrote.
pub struct Io<'a> {
    pub out: &'a Path,
    written: Vec<String>,
}

impl Io<'_> {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        self.written.push(rel.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    pub fn write_table(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow!("csv buffer: {e}"))?;
        self.write(rel, &bytes)
    }

    pub fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Result<T> {
        let path = self.path(rel);
        let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
    }

    pub fn read_matrix(&self, rel: &str) -> Result<FeatureMatrix> {
        let path = self.path(rel);
        let f = fs::File::open(&path).with_context(|| format!("cannot open {}", path.display()))?;
        Ok(FeatureMatrix::read_csv(f)?)
    }

    pub fn finish(self) -> Vec<String> {
        self.written
    }
}

pub fn fmt_f(v: f64) -> String {
    tvde_core::matrix::format_float(v)
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f).unwrap_or_default()
}

fn simulate_stage(ctx: &Ctx, mut io: Io) -> Result<Vec<String>> {
    let cfg = &ctx.cfg;
    let traj = simulate(
        &cfg.system.source,
        &cfg.training_thermostat(),
        &cfg.system.x0,
        cfg.simulate.n_steps,
        cfg.simulate.save_stride,
        cfg.stage_seed(seeds::SIMULATE),
        None,
    )?;
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    io.write("trajectory.csv", &buf)?;
    io.write_json("trajectory.json", &traj.meta())?;
    Ok(io.finish())
}

fn load_trajectory(io: &Io) -> Result<Trajectory> {
    let meta: TrajectoryMeta = io.read_json("trajectory.json")?;
    let f = fs::File::open(io.path("trajectory.csv"))?;
    Ok(Trajectory::read_csv(f, meta)?)
}

fn featurize_stage(ctx: &Ctx, mut io: Io) -> Result<Vec<String>> {
    let traj = load_trajectory(&io)?;
    let feats = featurize(&ctx.cfg.features, &traj)?;
    let mut buf = Vec::new();
    feats.write_csv(&mut buf)?;
    io.write("features.csv", &buf)?;
    Ok(io.finish())
}

fn tica_stage(ctx: &Ctx, mut io: Io) -> Result<Vec<String>> {
    let cfg = &ctx.cfg;
    let feats = io.read_matrix("features.csv")?;
    let (scaler, mut inputs) = if cfg.standardize {
        let s = Scaler::fit(&feats)?;
        let x = s.apply(&feats)?;
        (Some(s), x)
    } else {
        (None, feats)
    };
    let stage = match &cfg.tica {
        Some(t) => {
            let opts = TicaOptions { shrinkage: t.shrinkage, penalty: t.penalty, n_components: t.n_tics };
            let model = tica::fit(&[&inputs], t.lag, &opts)?;
            inputs = tica::project(&model, &inputs, t.n_tics)?.data;
            Some(TicaStage { model, n_tics: t.n_tics })
        }
        None => None,
    };
    io.write_json("scaler.json", &scaler)?;
    io.write_json("tica.json", &stage)?;
    let mut buf = Vec::new();
    inputs.write_csv(&mut buf)?;
    io.write("encoder_inputs.csv", &buf)?;
    Ok(io.finish())
}

fn train_stage(ctx: &Ctx, mut io: Io) -> Result<Vec<String>> {
    let cfg = &ctx.cfg;
    let inputs = io.read_matrix("encoder_inputs.csv")?;
    let scaler: Option<Scaler> = io.read_json("scaler.json")?;
    let stage: Option<TicaStage> = io.read_json("tica.json")?;
    let model = vde::train(&[&inputs], cfg.vde.lag, &cfg.vde.encoder, &cfg.train_config(), cfg.vde.noise, cfg.vde.alpha)?;
    let pipeline = CvPipeline::new(cfg.system.source.dim(), cfg.features.clone(), scaler, stage, &model)?;
    let values = model.encode_matrix(&inputs)?;
    io.write_json("vde.json", &model)?;
    io.write_json("pipeline.json", &pipeline)?;
    let rows: Vec<Vec<String>> = values.iter().map(|v| vec![fmt_f(*v)]).collect();
    io.write_table("cv_values.csv", &["s"], &rows)?;
    let log: Vec<Vec<String>> = model
        .report
        .epochs
        .iter()
        .map(|e| vec![e.epoch.to_string(), fmt_f(e.recon), fmt_f(e.autocorr), fmt_f(e.total)])
        .collect();
    io.write_table("training_log.csv", &["epoch", "reconstruction", "autocorrelation", "total"], &log)?;
    Ok(io.finish())
}

fn export_stage(mut io: Io) -> Result<Vec<String>> {
    let pipeline: CvPipeline = io.read_json("pipeline.json")?;
    let cv = compile(&pipeline)?;
    io.write("cv.txt", format!("{}\n", cv.text).as_bytes())?;
    io.write_json("cv.json", &cv)?;
    Ok(io.finish())
}

fn load_cv_values(io: &Io) -> Result<Vec<f64>> {
    Ok(io.read_matrix("cv_values.csv")?.column(0))
}

/// Metadynamics settings with the grid and interval filled in from the
/// training CV range when the config leaves them open.
fn resolved_bias(cfg: &ExperimentConfig, io: &Io) -> Result<MetadConfig> {
    let bias = cfg.metad.bias.clone();
    if bias.grid.is_some() {
        return Ok(bias);
    }
    Ok(bias.with_training_values(&load_cv_values(io)?)?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetadSummary {
    pub potential: PotentialSpec,
    pub thermostat: Thermostat,
    pub bias: MetadConfig,
    pub kt: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub walkers: Vec<WalkerSummary>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WalkerSummary {
    pub walker: usize,
    pub frames: usize,
    pub hills: usize,
    pub skipped_outside_interval: usize,
    pub skipped_outside_grid: usize,
}

pub fn walker_file(k: usize) -> String {
    format!("metad/walker_{k}.csv")
}

fn hills_file(k: usize) -> String {
    format!("metad/hills_{k}.csv")
}

fn metad_stage(ctx: &Ctx, mut io: Io) -> Result<Vec<String>> {
    let cfg = &ctx.cfg;
    let pipeline: CvPipeline = io.read_json("pipeline.json")?;
    let bias = resolved_bias(cfg, &io)?;
    let th = cfg.system.thermostat;
    let seed = cfg.stage_seed(seeds::METAD);
    let runs = run_walkers(
        &cfg.system.source,
        &th,
        &pipeline,
        &bias,
        std::slice::from_ref(&cfg.system.x0),
        cfg.metad.n_steps,
        seed,
        ctx.jobs,
    )?;
    let mut walkers = Vec::new();
    for r in &runs {
        let mut buf = Vec::new();
        r.write_csv(&mut buf)?;
        io.write(&walker_file(r.walker), &buf)?;
        let mut buf = Vec::new();
        write_hills(&r.hills, &mut buf)?;
        io.write(&hills_file(r.walker), &buf)?;
        walkers.push(WalkerSummary {
            walker: r.walker,
            frames: r.s.len(),
            hills: r.hills.len(),
            skipped_outside_interval: r.bias.skipped_outside_interval,
            skipped_outside_grid: r.bias.skipped_outside_grid,
        });
    }
    let summary = MetadSummary {
        potential: cfg.system.source.clone(),
        thermostat: th,
        kt: bias.kt_or(th.kt),
        bias,
        n_steps: cfg.metad.n_steps,
        seed,
        walkers,
    };
    io.write_json("metad/metad.json", &summary)?;
    Ok(io.finish())
}

/// Rebuilds the walker runs written by the metad stage.
pub fn load_runs(io: &Io) -> Result<(MetadSummary, Vec<MetadRun>)> {
    let summary: MetadSummary = io.read_json("metad/metad.json")?;
    let dim = summary.potential.dim();
    let mut parts = Vec::new();
    let mut all_hills: Vec<Hill> = Vec::new();
    for w in &summary.walkers {
        let m = io.read_matrix(&walker_file(w.walker))?;
        if m.n_cols() != dim + 3 {
            bail!("{} has {} columns, expected {}", walker_file(w.walker), m.n_cols(), dim + 3);
        }
        let frames: Vec<Vec<f64>> = m.rows().map(|r| r[1..=dim].to_vec()).collect();
        let traj = Trajectory::from_frames(
            summary.potential.clone(),
            summary.thermostat,
            summary.seed,
            summary.bias.save_stride,
            &frames,
        )?;
        let f = fs::File::open(io.path(&hills_file(w.walker)))?;
        let hills = read_hills(f, summary.thermostat.dt)?;
        all_hills.extend(hills.iter().cloned());
        parts.push((w.walker, traj, m.column(dim + 1), m.column(dim + 2), hills));
    }
    all_hills.sort_by_key(|h| (h.step, h.walker));
    let bias = BiasState::from_hills(&summary.bias, summary.kt, &all_hills)?;
    let runs = parts
        .into_iter()
        .map(|(walker, trajectory, s, v_bias, hills)| MetadRun {
            walker,
            trajectory,
            s,
            v_bias,
            hills,
            bias: bias.clone(),
        })
        .collect();
    Ok((summary, runs))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReweightSummary {
    pub estimator: tvde_core::reweight::Estimator,
    pub discard: usize,
    pub kt: f64,
    pub samples: usize,
    /// State centers in CV units, ascending.
    pub centers: Vec<f64>,
    pub populations: Populations,
}

fn reweight_stage(ctx: &Ctx, mut io: Io) -> Result<Vec<String>> {
    let rc = &ctx.cfg.reweight;
    let (summary, runs) = load_runs(&io)?;
    let discard = summary.bias.equilibration_discard;
    let rw = reweight_runs(&runs, rc.estimator, discard)?;
    let kt = summary.kt;

    let mut sorted = rw.s.clone();
    sorted.sort_by(f64::total_cmp);
    let points: Vec<Vec<f64>> = sorted.iter().map(|v| vec![*v]).collect();
    let km = kmeans(&points, rc.n_states, ctx.cfg.stage_seed(seeds::METAD), 5)?;
    let mut centers: Vec<f64> = km.centers.iter().map(|c| c[0]).collect();
    centers.sort_by(f64::total_cmp);
    let cvec: Vec<Vec<f64>> = centers.iter().map(|c| vec![*c]).collect();
    let labels: Vec<usize> = rw.s.iter().map(|v| nearest(&cvec, &[*v])).collect();
    let pops = state_populations(&labels, &rw.weights, rc.n_states, kt, rc.reference_state)?;
    let fes = fes_project(&rw.weights, &rw.s, &Bins::covering(&rw.s, rc.bins)?, kt)?;

    let fes_rows: Vec<Vec<String>> = fes
        .edges
        .windows(2)
        .zip(&fes.free_energy)
        .map(|(e, f)| vec![fmt_f(e[0]), fmt_f(e[1]), fmt_opt(*f)])
        .collect();
    io.write_table("fes.csv", &["s_lo", "s_hi", "free_energy"], &fes_rows)?;

    let pop_rows: Vec<Vec<String>> = (0..rc.n_states)
        .map(|i| vec![i.to_string(), fmt_f(centers[i]), fmt_f(pops.p[i]), fmt_opt(pops.delta_g[i])])
        .collect();
    io.write_table("populations.csv", &["state", "center", "population", "delta_g"], &pop_rows)?;

    let mut weight_rows = Vec::with_capacity(rw.s.len());
    let mut k = 0;
    for r in &runs {
        for frame in discard..r.s.len() {
            weight_rows.push(vec![
                r.walker.to_string(),
                frame.to_string(),
                fmt_f(rw.s[k]),
                fmt_f(rw.weights.weights[k]),
            ]);
            k += 1;
        }
    }
    io.write_table("weights.csv", &["walker", "frame", "s", "weight"], &weight_rows)?;
    io.write_json(
        "reweight.json",
        &ReweightSummary { estimator: rc.estimator, discard, kt, samples: rw.s.len(), centers, populations: pops },
    )?;
    Ok(io.finish())
}

fn transfer_stage(ctx: &Ctx, mut io: Io) -> Result<Vec<String>> {
    let cfg = &ctx.cfg;
    let t = cfg.transfer.as_ref().expect("checked before execution");
    let pipeline: CvPipeline = io.read_json("pipeline.json")?;
    let dim = cfg.system.source.dim();
    let map = SystemMap { source: "source".into(), target: "target".into(), target_dim: dim, map: t.map.clone() };
    let tc = TransferConfig {
        metad: resolved_bias(cfg, &io)?,
        thermostat: cfg.system.thermostat,
        n_steps: cfg.metad.n_steps,
        seed: cfg.stage_seed(seeds::TRANSFER),
        n_states: cfg.reweight.n_states,
        fes_bins: cfg.reweight.bins,
        estimator: cfg.reweight.estimator,
        reference_state: cfg.reweight.reference_state,
        jobs: ctx.jobs,
    };
    let x0 = t.x0.clone().unwrap_or_else(|| cfg.system.x0.clone());
    let outcome = run_transfer_experiment(&cfg.system.source, &t.target, &x0, &pipeline, &map, &tc)?;
    let rep = &outcome.report;
    io.write_json("transfer/report.json", rep)?;
    io.write_table("transfer/ddg.csv", DDG_HEADER, &ddg_rows(rep))?;
    let fes_rows: Vec<Vec<String>> = rep
        .source
        .fes
        .edges
        .windows(2)
        .zip(rep.source.fes.free_energy.iter().zip(&rep.target.fes.free_energy))
        .map(|(e, (a, b))| vec![fmt_f(e[0]), fmt_f(e[1]), fmt_opt(*a), fmt_opt(*b)])
        .collect();
    io.write_table("transfer/fes.csv", &["s_lo", "s_hi", "source", "target"], &fes_rows)?;
    let mut traces = Vec::new();
    for (name, runs) in [("source", &outcome.source_runs), ("target", &outcome.target_runs)] {
        for r in runs.iter() {
            for (i, s) in r.s.iter().enumerate() {
                let t = i as f64 * r.trajectory.dt_record;
                traces.push(vec![name.to_string(), r.walker.to_string(), fmt_f(t), fmt_f(*s)]);
            }
        }
    }
    io.write_table("transfer/traces.csv", &["system", "walker", "t", "s"], &traces)?;
    Ok(io.finish())
}

pub const DDG_HEADER: &[&str] = &["state", "center", "delta_g_source", "delta_g_target", "ddg"];

pub fn ddg_rows(rep: &TransferReport) -> Vec<Vec<String>> {
    (0..rep.centers.len())
        .map(|i| {
            vec![
                i.to_string(),
                fmt_f(rep.centers[i]),
                fmt_opt(rep.source.populations.delta_g[i]),
                fmt_opt(rep.target.populations.delta_g[i]),
                fmt_opt(rep.ddg[i]),
            ]
        })
        .collect()
}
