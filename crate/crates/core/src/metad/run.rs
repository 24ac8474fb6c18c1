use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::bias::{BiasState, Hill, MetadConfig};
use crate::cvexpr::CvPipeline;
use crate::error::{Error, Result};
use crate::worldbench::{check_start, BiasGradient, PotentialSpec, Propagator, Thermostat, Trajectory};

/// A collective variable together with the bias acting along it.
#[derive(Clone, Copy, Debug)]
pub struct BiasedCv<'a> {
    pub cv: &'a CvPipeline,
    pub bias: &'a BiasState,
}

impl BiasedCv<'_> {
    /// Bias force on the coordinates, `-dV/ds * grad s`.
    pub fn force(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (s, g) = self.cv.value_and_gradient(x)?;
        let dv = self.bias.slope(s);
        Ok(g.into_iter().map(|gi| -dv * gi).collect())
    }

    /// Bias energy at `x`.
    pub fn energy(&self, x: &[f64]) -> Result<f64> {
        Ok(self.bias.energy(self.cv.evaluate(x)?))
    }
}

impl BiasGradient for BiasedCv<'_> {
    fn add_gradient(&self, x: &[f64], grad: &mut [f64]) {
        // Shapes are checked before integration starts.
        if let Ok((s, g)) = self.cv.value_and_gradient(x) {
            let dv = self.bias.slope(s);
            if dv != 0.0 {
                for (o, gi) in grad.iter_mut().zip(g) {
                    *o += dv * gi;
                }
            }
        }
    }
}

/// Output of one walker.
#[derive(Clone, Debug, PartialEq)]
pub struct MetadRun {
    pub walker: usize,
    pub trajectory: Trajectory,
    /// CV value per saved frame.
    pub s: Vec<f64>,
    /// Instantaneous bias per saved frame.
    pub v_bias: Vec<f64>,
    /// Hills this walker deposited.
    pub hills: Vec<Hill>,
    /// Bias at the end of the run, including hills merged from other walkers.
    pub bias: BiasState,
}

impl MetadRun {
    /// Integrator step of saved frame `i`.
    pub fn frame_step(&self, i: usize) -> u64 {
        (i * self.bias.config.save_stride) as u64
    }

    /// Writes `t,x0..,s,V_bias`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        use crate::matrix::format_float;
        let traj = &self.trajectory;
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..traj.dim()).map(|j| format!("x{j}")));
        header.push("s".into());
        header.push("V_bias".into());
        out.write_record(&header)?;
        for (i, f) in traj.frames().enumerate() {
            let mut rec = vec![format_float(i as f64 * traj.dt_record)];
            rec.extend(f.iter().map(|v| format_float(*v)));
            rec.push(format_float(self.s[i]));
            rec.push(format_float(self.v_bias[i]));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

struct Walker<'a> {
    id: usize,
    prop: Propagator<'a>,
    cv: &'a CvPipeline,
    rng: ChaCha8Rng,
    x: Vec<f64>,
    step: usize,
    dt: f64,
    bias: BiasState,
    frames: Vec<Vec<f64>>,
    s: Vec<f64>,
    v_bias: Vec<f64>,
    own: Vec<Hill>,
    /// Index into `own` of hills not yet shared.
    shared: usize,
}

impl<'a> Walker<'a> {
    fn new(
        id: usize,
        potential: &'a PotentialSpec,
        th: &Thermostat,
        cv: &'a CvPipeline,
        bias: BiasState,
        x0: &[f64],
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if id > 0 {
            rng.set_stream(id as u64);
        }
        let s0 = cv.evaluate(x0)?;
        Ok(Self {
            id,
            prop: Propagator::new(potential, th)?,
            cv,
            rng,
            x: x0.to_vec(),
            step: 0,
            dt: th.dt,
            v_bias: vec![bias.energy(s0)],
            bias,
            frames: vec![x0.to_vec()],
            s: vec![s0],
            own: Vec::new(),
            shared: 0,
        })
    }

    fn advance(&mut self, to: usize) -> Result<()> {
        let cfg = &self.bias.config;
        let (pace, save, deposit) = (cfg.pace, cfg.save_stride, cfg.height > 0.0);
        while self.step < to {
            self.step += 1;
            let n = self.step;
            {
                let biased = BiasedCv { cv: self.cv, bias: &self.bias };
                let active = (!self.bias.hills().is_empty()).then_some(&biased as &dyn BiasGradient);
                self.prop.step(&mut self.x, &mut self.rng, active, n)?;
            }
            let saving = n.is_multiple_of(save);
            let depositing = deposit && n.is_multiple_of(pace);
            if saving || depositing {
                let s = self.cv.evaluate(&self.x)?;
                if saving {
                    self.frames.push(self.x.clone());
                    self.s.push(s);
                    self.v_bias.push(self.bias.energy(s));
                }
                if depositing {
                    if let Ok(h) = self.bias.deposit(s, n as u64, n as f64 * self.dt, self.id) {
                        self.own.push(h);
                    }
                }
            }
        }
        Ok(())
    }

    fn take_new(&mut self) -> &[Hill] {
        let from = self.shared;
        self.shared = self.own.len();
        &self.own[from..]
    }

    fn finish(self, potential: &PotentialSpec, th: &Thermostat, seed: u64) -> Result<MetadRun> {
        let save_stride = self.bias.config.save_stride;
        Ok(MetadRun {
            walker: self.id,
            trajectory: Trajectory::from_frames(
                potential.clone(),
                *th,
                seed,
                save_stride,
                &self.frames,
            )?,
            s: self.s,
            v_bias: self.v_bias,
            hills: self.own,
            bias: self.bias,
        })
    }
}

fn prepare(
    potential: &PotentialSpec,
    th: &Thermostat,
    cv: &CvPipeline,
    cfg: &MetadConfig,
    x0: &[f64],
) -> Result<BiasState> {
    check_start(potential, x0)?;
    cv.validate()?;
    if cv.input_dim != potential.dim() {
        return Err(Error::Shape {
            context: "CV inputs vs system dimension",
            expected: potential.dim(),
            got: cv.input_dim,
        });
    }
    let kt = cfg.kt_or(th.kt);
    if (kt - th.kt).abs() > 1e-12 * th.kt {
        return Err(Error::Config(format!(
            "metadynamics kT {kt} differs from thermostat kT {}",
            th.kt
        )));
    }
    BiasState::new(cfg, kt)
}

/// Single-walker well-tempered metadynamics.
///
/// Per step: integrate, save the frame (with the bias as it stood before this
/// step's deposit), then deposit if the step is a multiple of the pace.
pub fn run_metad(
    potential: &PotentialSpec,
    th: &Thermostat,
    cv: &CvPipeline,
    cfg: &MetadConfig,
    x0: &[f64],
    n_steps: usize,
    seed: u64,
) -> Result<MetadRun> {
    let bias = prepare(potential, th, cv, cfg, x0)?;
    let mut w = Walker::new(0, potential, th, cv, bias, x0, seed)?;
    w.advance(n_steps)?;
    w.finish(potential, th, seed)
}

/// Multiple walkers sharing hills every `read_stride` steps.
///
/// `x0` holds either one start shared by all walkers or one per walker.
/// Walker `w` draws from stream `w` of the seeded generator, so walker 0
/// reproduces [`run_metad`]. `jobs` bounds the worker threads.
#[allow(clippy::too_many_arguments)]
pub fn run_walkers(
    potential: &PotentialSpec,
    th: &Thermostat,
    cv: &CvPipeline,
    cfg: &MetadConfig,
    x0: &[Vec<f64>],
    n_steps: usize,
    seed: u64,
    jobs: Option<usize>,
) -> Result<Vec<MetadRun>> {
    let nw = cfg.n_walkers;
    if x0.len() != 1 && x0.len() != nw {
        return Err(Error::Shape { context: "walker start points", expected: nw, got: x0.len() });
    }
    let start = |w: usize| if x0.len() == 1 { &x0[0] } else { &x0[w] };
    let bias = prepare(potential, th, cv, cfg, start(0))?;
    let mut walkers = (0..nw)
        .map(|w| {
            check_start(potential, start(w))?;
            Walker::new(w, potential, th, cv, bias.clone(), start(w), seed)
        })
        .collect::<Result<Vec<_>>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut done = 0;
    while done < n_steps {
        let to = (done + cfg.read_stride).min(n_steps);
        if nw == 1 {
            walkers[0].advance(to)?;
        } else {
            pool.install(|| walkers.par_iter_mut().map(|w| w.advance(to)).collect::<Result<Vec<_>>>())?;
            let mut fresh: Vec<Hill> = walkers.iter_mut().flat_map(|w| w.take_new().to_vec()).collect();
            fresh.sort_by(|a, b| a.step.cmp(&b.step).then(a.walker.cmp(&b.walker)));
            for w in walkers.iter_mut() {
                for h in fresh.iter().filter(|h| h.walker != w.id) {
                    w.bias.add_hill(*h);
                }
            }
        }
        done = to;
    }
    walkers.into_iter().map(|w| w.finish(potential, th, seed)).collect()
}

/// All hills of a multi-walker campaign in merge order.
pub fn merged_hills(runs: &[MetadRun]) -> Vec<Hill> {
    let mut all: Vec<Hill> = runs.iter().flat_map(|r| r.hills.iter().copied()).collect();
    all.sort_by(|a, b| a.step.cmp(&b.step).then(a.walker.cmp(&b.walker)));
    all
}
