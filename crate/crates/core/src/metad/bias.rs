use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hills are added to the cache out to this many widths.
pub const HILL_CUTOFF: f64 = 8.0;
pub const DEFAULT_BINS: usize = 512;
/// Fraction of the training CV range added on each side of the default grid.
pub const GRID_MARGIN: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetadConfig {
    /// Initial hill height (kT units).
    #[serde(default = "MetadConfig::default_height")]
    pub height: f64,
    #[serde(default = "MetadConfig::default_sigma")]
    pub sigma: f64,
    #[serde(default = "MetadConfig::default_bias_factor")]
    pub bias_factor: f64,
    /// Integrator steps between depositions.
    #[serde(default = "MetadConfig::default_pace")]
    pub pace: usize,
    #[serde(default)]
    pub grid: Option<[f64; 2]>,
    #[serde(default = "MetadConfig::default_bins")]
    pub n_bins: usize,
    #[serde(default)]
    pub interval: Option<[f64; 2]>,
    /// Defaults to the thermostat temperature.
    #[serde(default)]
    pub kt: Option<f64>,
    #[serde(default = "MetadConfig::default_walkers")]
    pub n_walkers: usize,
    /// Integrator steps between hill exchanges among walkers.
    #[serde(default = "MetadConfig::default_read_stride")]
    pub read_stride: usize,
    /// Saved frames dropped before any reweighting.
    #[serde(default)]
    pub equilibration_discard: usize,
    #[serde(default = "MetadConfig::default_save_stride")]
    pub save_stride: usize,
}

impl Default for MetadConfig {
    fn default() -> Self {
        Self {
            height: Self::default_height(),
            sigma: Self::default_sigma(),
            bias_factor: Self::default_bias_factor(),
            pace: Self::default_pace(),
            grid: None,
            n_bins: DEFAULT_BINS,
            interval: None,
            kt: None,
            n_walkers: 1,
            read_stride: Self::default_read_stride(),
            equilibration_discard: 0,
            save_stride: Self::default_save_stride(),
        }
    }
}

impl MetadConfig {
    fn default_height() -> f64 {
        1.0
    }
    fn default_sigma() -> f64 {
        0.1
    }
    fn default_bias_factor() -> f64 {
        6.0
    }
    fn default_pace() -> usize {
        500
    }
    fn default_bins() -> usize {
        DEFAULT_BINS
    }
    fn default_walkers() -> usize {
        1
    }
    fn default_read_stride() -> usize {
        10_000
    }
    fn default_save_stride() -> usize {
        crate::worldbench::DEFAULT_SAVE_STRIDE
    }

    /// Fills a missing grid (range plus margin) and interval (the range
    /// itself) from the CV values seen in training data.
    pub fn with_training_range(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::Spec(format!("degenerate training CV range [{lo}, {hi}]")));
        }
        let pad = GRID_MARGIN * (hi - lo);
        self.grid.get_or_insert([lo - pad, hi + pad]);
        self.interval.get_or_insert([lo, hi]);
        Ok(self)
    }

    /// Same as [`with_training_range`](Self::with_training_range) using the
    /// extremes of `values`.
    pub fn with_training_values(self, values: &[f64]) -> Result<Self> {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.with_training_range(lo, hi)
    }

    pub fn kt_or(&self, thermostat_kt: f64) -> f64 {
        self.kt.unwrap_or(thermostat_kt)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.height >= 0.0) || !self.height.is_finite() {
            return bad(format!("hill height must be >= 0, got {}", self.height));
        }
        if !(self.sigma > 0.0) {
            return bad(format!("hill width must be > 0, got {}", self.sigma));
        }
        if !(self.bias_factor > 1.0) {
            return bad(format!("bias factor must be > 1, got {}", self.bias_factor));
        }
        if self.pace == 0 || self.read_stride == 0 || self.save_stride == 0 {
            return bad("pace, read_stride and save_stride must be >= 1".into());
        }
        if self.n_walkers == 0 {
            return bad("n_walkers must be >= 1".into());
        }
        if self.n_bins < 2 {
            return bad("grid needs at least 2 bins".into());
        }
        if let Some(kt) = self.kt {
            if !(kt > 0.0) {
                return bad(format!("kT must be > 0, got {kt}"));
            }
        }
        let Some([lo, hi]) = self.grid else {
            return bad("metadynamics grid is not set".into());
        };
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return bad(format!("invalid grid [{lo}, {hi}]"));
        }
        if let Some([a, b]) = self.interval {
            if !(a < b && a >= lo && b <= hi) {
                return bad(format!("interval [{a}, {b}] must lie inside grid [{lo}, {hi}]"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hill {
    pub step: u64,
    pub t: f64,
    pub walker: usize,
    pub center: f64,
    pub sigma: f64,
    pub height: f64,
}

impl Hill {
    pub fn value(&self, s: f64) -> f64 {
        let u = (s - self.center) / self.sigma;
        self.height * (-0.5 * u * u).exp()
    }

    pub fn slope(&self, s: f64) -> f64 {
        -self.value(s) * (s - self.center) / (self.sigma * self.sigma)
    }
}

/// Why a deposit produced no hill.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Skip {
    OutsideInterval,
    OutsideGrid,
}

/// Deposited hills plus a grid cache of the bias and its slope, interpolated
/// with cubic Hermite splines between nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasState {
    pub config: MetadConfig,
    pub kt: f64,
    lo: f64,
    hi: f64,
    spacing: f64,
    interval: [f64; 2],
    values: Vec<f64>,
    slopes: Vec<f64>,
    hills: Vec<Hill>,
    pub total_deposited: f64,
    pub skipped_outside_grid: usize,
    pub skipped_outside_interval: usize,
}

impl BiasState {
    pub fn new(config: &MetadConfig, kt: f64) -> Result<Self> {
        config.validate()?;
        if !(kt > 0.0) {
            return Err(Error::Config(format!("kT must be > 0, got {kt}")));
        }
        let [lo, hi] = config.grid.expect("validated");
        let n = config.n_bins;
        Ok(Self {
            config: config.clone(),
            kt,
            lo,
            hi,
            spacing: (hi - lo) / n as f64,
            interval: config.interval.unwrap_or([lo, hi]),
            values: vec![0.0; n + 1],
            slopes: vec![0.0; n + 1],
            hills: Vec::new(),
            total_deposited: 0.0,
            skipped_outside_grid: 0,
            skipped_outside_interval: 0,
        })
    }

    pub fn hills(&self) -> &[Hill] {
        &self.hills
    }

    pub fn grid_nodes(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| self.node(i)).collect()
    }

    pub fn node_values(&self) -> &[f64] {
        &self.values
    }

    pub fn interval(&self) -> [f64; 2] {
        self.interval
    }

    fn node(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing
    }

    /// Raw interpolated cache at `s`, clamped to the grid.
    fn cached(&self, s: f64) -> (f64, f64) {
        let n = self.values.len() - 1;
        if s <= self.lo {
            return (self.values[0], 0.0);
        }
        if s >= self.hi {
            return (self.values[n], 0.0);
        }
        let u = (s - self.lo) / self.spacing;
        let i = (u.floor() as usize).min(n - 1);
        let t = u - i as f64;
        let h = self.spacing;
        let (p0, p1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * p0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * p1
            + (t3 - t2) * m1;
        let dv = (6.0 * t2 - 6.0 * t) * p0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * p1
            + (3.0 * t2 - 2.0 * t) * m1;
        (v, dv / h)
    }

    /// Bias and its CV derivative with interval semantics: outside `[a, b]`
    /// the bias is frozen at the nearer edge and the slope is zero.
    pub fn energy_and_slope(&self, s: f64) -> (f64, f64) {
        let [a, b] = self.interval;
        if s < a {
            (self.cached(a).0, 0.0)
        } else if s > b {
            (self.cached(b).0, 0.0)
        } else {
            self.cached(s)
        }
    }

    pub fn energy(&self, s: f64) -> f64 {
        self.energy_and_slope(s).0
    }

    pub fn slope(&self, s: f64) -> f64 {
        self.energy_and_slope(s).1
    }

    /// Untruncated sum over all hills, without interval semantics.
    pub fn direct_sum(&self, s: f64) -> f64 {
        self.hills.iter().map(|h| h.value(s)).sum()
    }

    pub fn well_tempered_height(&self, s: f64) -> f64 {
        let gamma = self.config.bias_factor;
        self.config.height * (-self.energy(s) / ((gamma - 1.0) * self.kt)).exp()
    }

    /// Deposits a well-tempered hill at `s`, unless `s` falls outside the
    /// interval or the grid.
    pub fn deposit(&mut self, s: f64, step: u64, t: f64, walker: usize) -> Result<Hill, Skip> {
        let [a, b] = self.interval;
        if !(s >= self.lo && s <= self.hi) {
            self.skipped_outside_grid += 1;
            log::warn!("hill at s={s} outside grid [{}, {}] skipped", self.lo, self.hi);
            return Err(Skip::OutsideGrid);
        }
        if s < a || s > b {
            self.skipped_outside_interval += 1;
            return Err(Skip::OutsideInterval);
        }
        let hill = Hill {
            step,
            t,
            walker,
            center: s,
            sigma: self.config.sigma,
            height: self.well_tempered_height(s),
        };
        self.add_hill(hill);
        Ok(hill)
    }

    /// Appends an already-sized hill (from another walker or a log).
    pub fn add_hill(&mut self, hill: Hill) {
        let reach = HILL_CUTOFF * hill.sigma;
        let n = self.values.len() - 1;
        let first = ((hill.center - reach - self.lo) / self.spacing).ceil().max(0.0) as usize;
        let last = ((hill.center + reach - self.lo) / self.spacing).floor();
        if last >= 0.0 {
            let last = (last as usize).min(n);
            for i in first..=last {
                let s = self.node(i);
                self.values[i] += hill.value(s);
                self.slopes[i] += hill.slope(s);
            }
        }
        self.total_deposited += hill.height;
        self.hills.push(hill);
    }

    /// Rebuilds a state from a hill log.
    pub fn from_hills(config: &MetadConfig, kt: f64, hills: &[Hill]) -> Result<Self> {
        let mut b = Self::new(config, kt)?;
        for h in hills {
            b.add_hill(*h);
        }
        Ok(b)
    }
}

/// Writes the `t,walker,center,sigma,height` hill log.
pub fn write_hills<W: std::io::Write>(hills: &[Hill], w: W) -> Result<()> {
    use crate::matrix::format_float;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "walker", "center", "sigma", "height"])?;
    for h in hills {
        out.write_record([
            format_float(h.t),
            h.walker.to_string(),
            format_float(h.center),
            format_float(h.sigma),
            format_float(h.height),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a hill log; `dt` recovers integrator steps from times.
pub fn read_hills<R: std::io::Read>(r: R, dt: f64) -> Result<Vec<Hill>> {
    use crate::matrix::parse_float;
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != 5 {
            return Err(Error::Shape { context: "hill log columns", expected: 5, got: rec.len() });
        }
        let t = parse_float(&rec[0])?;
        out.push(Hill {
            step: (t / dt).round() as u64,
            t,
            walker: rec[1]
                .parse()
                .map_err(|_| Error::Config(format!("bad walker id {:?}", &rec[1])))?,
            center: parse_float(&rec[2])?,
            sigma: parse_float(&rec[3])?,
            height: parse_float(&rec[4])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn state(gamma: f64) -> BiasState {
        let cfg = MetadConfig {
            bias_factor: gamma,
            grid: Some([-2.0, 2.0]),
            n_bins: 400,
            ..MetadConfig::default()
        };
        BiasState::new(&cfg, 1.0).unwrap()
    }

    #[test]
    fn empty_bias_is_zero() {
        let b = state(6.0);
        for s in [-5.0, -1.0, 0.0, 0.37, 9.0] {
            assert_eq!(b.energy_and_slope(s), (0.0, 0.0));
        }
    }

    #[test]
    fn single_hill_values() {
        let mut b = state(6.0);
        let h = b.deposit(0.0, 0, 0.0, 0).unwrap();
        assert_eq!(h.height, 1.0);
        let (v, dv) = b.energy_and_slope(0.0);
        assert!((v - 1.0).abs() < 1e-12 && dv.abs() < 1e-12);
        let (v, dv) = b.energy_and_slope(0.1);
        assert!((v - (-0.5f64).exp()).abs() < 1e-9);
        let e = 1e-7;
        let fd = (b.energy(0.1 + e) - b.energy(0.1 - e)) / (2.0 * e);
        assert!((dv - fd).abs() < 1e-6);
        // Off-node interpolation stays close to the analytic hill.
        for s in [0.013, 0.077, -0.151] {
            assert!((b.energy(s) - b.direct_sum(s)).abs() < 1e-6);
        }
    }

    #[test]
    fn well_tempered_second_hill() {
        let mut b = state(6.0);
        b.deposit(0.0, 0, 0.0, 0).unwrap();
        let h = b.deposit(0.0, 1, 1.0, 0).unwrap();
        assert!((h.height - (-0.2f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn huge_bias_factor_is_plain_metadynamics() {
        let mut b = state(1e9);
        for k in 0..20 {
            let h = b.deposit(0.0, k, k as f64, 0).unwrap();
            assert!((h.height - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn interval_freezes_bias() {
        let cfg = MetadConfig {
            grid: Some([-2.0, 2.0]),
            interval: Some([-0.5, 0.5]),
            ..MetadConfig::default()
        };
        let mut b = BiasState::new(&cfg, 1.0).unwrap();
        b.deposit(0.45, 0, 0.0, 0).unwrap();
        assert_eq!(b.deposit(0.6, 1, 1.0, 0), Err(Skip::OutsideInterval));
        assert_eq!(b.deposit(3.0, 2, 2.0, 0), Err(Skip::OutsideGrid));
        assert_eq!(b.skipped_outside_grid, 1);
        assert_eq!(b.skipped_outside_interval, 1);
        let edge = b.energy(0.5);
        for s in [0.5000001, 0.7, 1.9, 5.0] {
            assert_eq!(b.energy_and_slope(s), (edge, 0.0));
        }
        assert_eq!(b.energy_and_slope(-3.0), (b.energy(-0.5), 0.0));
    }

    #[test]
    fn config_validation() {
        let mut c = MetadConfig::default();
        assert!(c.validate().is_err());
        c = c.with_training_range(-1.0, 1.0).unwrap();
        assert_eq!(c.grid, Some([-1.6, 1.6]));
        assert_eq!(c.interval, Some([-1.0, 1.0]));
        c.validate().unwrap();
        for bad in [
            MetadConfig { bias_factor: 1.0, ..c.clone() },
            MetadConfig { sigma: 0.0, ..c.clone() },
            MetadConfig { interval: Some([-2.0, 0.0]), ..c.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn hill_log_round_trip() {
        let mut b = state(6.0);
        b.deposit(0.25, 500, 0.5, 3).unwrap();
        b.deposit(-0.125, 1000, 1.0, 1).unwrap();
        let mut buf = Vec::new();
        write_hills(b.hills(), &mut buf).unwrap();
        assert_eq!(read_hills(&buf[..], 1e-3).unwrap(), b.hills());
    }

    proptest! {
        #[test]
        fn cache_matches_direct_sum_at_nodes(
            centers in proptest::collection::vec(-1.9f64..1.9, 1..60),
        ) {
            let mut b = state(6.0);
            for (k, c) in centers.iter().enumerate() {
                b.deposit(*c, k as u64, k as f64, 0).unwrap();
                for (s, v) in b.grid_nodes().iter().zip(b.node_values()) {
                    prop_assert!((v - b.direct_sum(*s)).abs() <= 1e-10);
                }
            }
        }

        #[test]
        fn heights_shrink_at_revisited_points(s in -1.5f64..1.5, n in 2usize..30) {
            let mut b = state(6.0);
            let mut last = f64::INFINITY;
            for k in 0..n {
                let h = b.deposit(s, k as u64, k as f64, 0).unwrap().height;
                prop_assert!(h > 0.0 && h <= 1.0 && h <= last);
                last = h;
            }
        }
    }
}
