//! Reusing a collective variable trained on one system for a perturbed one.

use serde::{Deserialize, Serialize};

use crate::cvexpr::CvPipeline;
use crate::error::{Error, Result};
use crate::metad::{run_walkers, MetadConfig, MetadRun};
use crate::reweight::{
    fes_project, kmeans, last_bias_weights, mbar_weights, nearest, state_populations,
    tiwary_weights, Bins, Estimator, FesEstimate, Populations, WeightedSamples,
};
use crate::worldbench::{PotentialSpec, Thermostat};

/// Source coordinate `i` of the pipeline is read from target coordinate
/// `map[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemMap {
    pub source: String,
    pub target: String,
    pub target_dim: usize,
    #[serde(default)]
    pub map: Option<Vec<usize>>,
}

impl SystemMap {
    pub fn identity(source: &str, target: &str, dim: usize) -> Self {
        Self { source: source.into(), target: target.into(), target_dim: dim, map: None }
    }

    fn indices(&self, n_inputs: usize) -> Result<Vec<usize>> {
        let map = self.map.clone().unwrap_or_else(|| (0..n_inputs).collect());
        if map.len() != n_inputs {
            return Err(Error::Spec(format!(
                "map covers {} of the pipeline's {n_inputs} inputs",
                map.len()
            )));
        }
        let mut seen = vec![false; self.target_dim];
        for &j in &map {
            if j >= self.target_dim || std::mem::replace(&mut seen[j], true) {
                return Err(Error::Spec(format!(
                    "map entry {j} is out of range or repeated (target has {} coordinates)",
                    self.target_dim
                )));
            }
        }
        Ok(map)
    }
}

/// Pipeline for the target system: gathers target coordinates through the
/// map, then applies the unchanged stages.
pub fn transfer_cv(p: &CvPipeline, m: &SystemMap) -> Result<CvPipeline> {
    let map = m.indices(p.input_dim)?;
    let composed = match &p.input_map {
        Some(inner) => inner.iter().map(|&j| map[j]).collect(),
        None => map,
    };
    let out = CvPipeline { input_dim: m.target_dim, input_map: Some(composed), ..p.clone() };
    out.validate()?;
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    pub metad: MetadConfig,
    #[serde(default)]
    pub thermostat: Thermostat,
    pub n_steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "TransferConfig::default_states")]
    pub n_states: usize,
    #[serde(default = "TransferConfig::default_bins")]
    pub fes_bins: usize,
    #[serde(default = "TransferConfig::default_estimator")]
    pub estimator: Estimator,
    /// Matched state used as the zero of every ΔG; defaults to the most
    /// populated source state.
    #[serde(default)]
    pub reference_state: Option<usize>,
    #[serde(default)]
    pub jobs: Option<usize>,
}

impl TransferConfig {
    fn default_states() -> usize {
        2
    }
    fn default_bins() -> usize {
        50
    }
    fn default_estimator() -> Estimator {
        Estimator::Mbar
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemReport {
    pub id: String,
    pub fes: FesEstimate,
    pub populations: Populations,
    /// Walkers that visited each state at least once.
    pub walkers_visiting: Vec<usize>,
    /// State changes summed over walkers.
    pub transitions: usize,
    pub hills: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub estimator: Estimator,
    /// Shared state centers in CV units, ascending.
    pub centers: Vec<f64>,
    pub reference_state: usize,
    pub source: SystemReport,
    pub target: SystemReport,
    /// `ΔG_target - ΔG_source` per state; `None` when a state is missing in
    /// either system.
    pub ddg: Vec<Option<f64>>,
}

pub struct TransferOutcome {
    pub report: TransferReport,
    pub source_runs: Vec<MetadRun>,
    pub target_runs: Vec<MetadRun>,
}

/// Reweighted samples of one metadynamics campaign: weights plus pooled CV
/// values and per-walker CV traces (post-discard).
pub struct Reweighted {
    pub weights: WeightedSamples,
    pub s: Vec<f64>,
}

pub fn reweight_runs(runs: &[MetadRun], estimator: Estimator, discard: usize) -> Result<Reweighted> {
    let refs: Vec<&MetadRun> = runs.iter().collect();
    let s: Vec<f64> = refs.iter().flat_map(|r| r.s.get(discard..).unwrap_or(&[]).to_vec()).collect();
    let weights = match estimator {
        Estimator::Mbar => mbar_weights(&refs, discard)?.0,
        Estimator::LastBias | Estimator::Tiwary | Estimator::Unbiased => {
            // Per-walker weights, combined with equal walker mass.
            let mut all = Vec::with_capacity(s.len());
            for r in &refs {
                let w = match estimator {
                    Estimator::LastBias => last_bias_weights(&r.s, &r.bias, discard)?,
                    Estimator::Tiwary => tiwary_weights(r, discard)?,
                    _ => WeightedSamples::uniform(r.s.len().saturating_sub(discard))?,
                };
                all.extend(w.weights.iter().map(|v| v / refs.len() as f64));
            }
            WeightedSamples { weights: all, estimator, discard }
        }
    };
    Ok(Reweighted { weights, s })
}

fn visits(runs: &[MetadRun], centers: &[Vec<f64>], discard: usize) -> (Vec<usize>, usize) {
    let mut visiting = vec![0; centers.len()];
    let mut transitions = 0;
    for r in runs {
        let mut seen = vec![false; centers.len()];
        let mut prev = None;
        for s in r.s.iter().skip(discard) {
            let l = nearest(centers, &[*s]);
            seen[l] = true;
            if prev.is_some_and(|p| p != l) {
                transitions += 1;
            }
            prev = Some(l);
        }
        for (v, s) in visiting.iter_mut().zip(seen) {
            *v += s as usize;
        }
    }
    (visiting, transitions)
}

/// Compares two reweighted campaigns along the same CV.
///
/// States come from k-means on the pooled CV values of both systems (sorted,
/// so the clustering does not depend on which system is called the source).
pub fn compare(
    ids: (&str, &str),
    source: (&[MetadRun], &Reweighted),
    target: (&[MetadRun], &Reweighted),
    cfg: &TransferConfig,
    kt: f64,
) -> Result<TransferReport> {
    let mut pooled: Vec<f64> = source.1.s.iter().chain(&target.1.s).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let points: Vec<Vec<f64>> = pooled.iter().map(|v| vec![*v]).collect();
    let km = kmeans(&points, cfg.n_states, cfg.seed, 5)?;
    let mut centers: Vec<f64> = km.centers.iter().map(|c| c[0]).collect();
    centers.sort_by(f64::total_cmp);
    let cvec: Vec<Vec<f64>> = centers.iter().map(|c| vec![*c]).collect();
    let labels = |s: &[f64]| s.iter().map(|v| nearest(&cvec, &[*v])).collect::<Vec<_>>();

    let bins = Bins::covering(&pooled, cfg.fes_bins)?;
    let src_labels = labels(&source.1.s);
    let src_pop = state_populations(&src_labels, &source.1.weights, cfg.n_states, kt, cfg.reference_state)?;
    let reference = src_pop.reference;
    let tgt_pop =
        state_populations(&labels(&target.1.s), &target.1.weights, cfg.n_states, kt, Some(reference))?;
    let ddg = src_pop
        .delta_g
        .iter()
        .zip(&tgt_pop.delta_g)
        .map(|(a, b)| a.zip(*b).map(|(a, b)| b - a))
        .collect();
    let system = |id: &str, runs: &[MetadRun], rw: &Reweighted, pops: Populations| -> Result<SystemReport> {
        let (walkers_visiting, transitions) = visits(runs, &cvec, cfg.metad.equilibration_discard);
        Ok(SystemReport {
            id: id.to_string(),
            fes: fes_project(&rw.weights, &rw.s, &bins, kt)?,
            populations: pops,
            walkers_visiting,
            transitions,
            hills: runs.iter().map(|r| r.hills.len()).sum(),
        })
    };
    Ok(TransferReport {
        estimator: cfg.estimator,
        centers,
        reference_state: reference,
        source: system(ids.0, source.0, source.1, src_pop)?,
        target: system(ids.1, target.0, target.1, tgt_pop)?,
        ddg,
    })
}

/// Runs metadynamics with the same CV on both systems from the same start,
/// reweights both and reports matched-state free-energy differences.
pub fn run_transfer_experiment(
    source: &PotentialSpec,
    target: &PotentialSpec,
    x0: &[f64],
    cv: &CvPipeline,
    map: &SystemMap,
    cfg: &TransferConfig,
) -> Result<TransferOutcome> {
    if source.dim() != target.dim() {
        return Err(Error::Shape {
            context: "target vs source dimension",
            expected: source.dim(),
            got: target.dim(),
        });
    }
    let target_cv = transfer_cv(cv, map)?;
    let start = [x0.to_vec()];
    let th = cfg.thermostat;
    let campaign = |p: &PotentialSpec, c: &CvPipeline, seed: u64| {
        run_walkers(p, &th, c, &cfg.metad, &start, cfg.n_steps, seed, cfg.jobs)
    };
    let (src, tgt) = rayon::join(
        || campaign(source, cv, cfg.seed),
        || campaign(target, &target_cv, cfg.seed.wrapping_add(1)),
    );
    let (src, tgt) = (src?, tgt?);
    let discard = cfg.metad.equilibration_discard;
    let rs = reweight_runs(&src, cfg.estimator, discard)?;
    let rt = reweight_runs(&tgt, cfg.estimator, discard)?;
    let kt = cfg.metad.kt_or(th.kt);
    let report = compare((&map.source, &map.target), (&src, &rs), (&tgt, &rt), cfg, kt)?;
    Ok(TransferOutcome { report, source_runs: src, target_runs: tgt })
}
