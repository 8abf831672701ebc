//! Synthetic panels under the revenue-driven profit model, stable noise
//! sampling and the stable-sum aggregation check.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::RevenuePdfFit;
use crate::error::{Error, Result};
use crate::panel::{CompanyYearRecord, Panel};
use crate::stats::{median, ols_line};
use crate::trend::TrendFit;

/// Name of the PRNG behind every seed; part of the reproducibility contract.
pub const PRNG_NAME: &str = "chacha8";

/// splitmix64 mix of a master seed and a stream index.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard stable law `S(alpha, skew, 1, 0)` drawn by the
/// Chambers-Mallows-Stuck transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StableSampler {
    alpha: f64,
    skew: f64,
    shift: f64,
    scale: f64,
}

impl StableSampler {
    pub fn new(alpha: f64, skew: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 2.0) {
            return Err(Error::domain(format!("stable alpha must lie in (0, 2], got {alpha}")));
        }
        if !(-1.0..=1.0).contains(&skew) {
            return Err(Error::domain(format!("stable skew must lie in [-1, 1], got {skew}")));
        }
        let (shift, scale) = if alpha == 1.0 {
            (0.0, 1.0)
        } else {
            let z = skew * (PI * alpha / 2.0).tan();
            (z.atan() / alpha, (1.0 + z * z).powf(1.0 / (2.0 * alpha)))
        };
        Ok(Self {
            alpha,
            skew,
            shift,
            scale,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v = PI * (rng.random::<f64>() - 0.5);
        let w = -(1.0 - rng.random::<f64>()).ln();
        let a = self.alpha;
        if a == 1.0 {
            let t = FRAC_PI_2 + self.skew * v;
            return (t * v.tan() - self.skew * (FRAC_PI_2 * w * v.cos() / t).ln()) / FRAC_PI_2;
        }
        let av = a * (v + self.shift);
        self.scale * av.sin() / v.cos().powf(1.0 / a)
            * ((v - av).cos() / w).powf((1.0 - a) / a)
    }
}

pub fn sample_stable(alpha: f64, skew: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::domain("sample count must be at least 1"));
    }
    let s = StableSampler::new(alpha, skew)?;
    let mut rng = rng_for(seed);
    Ok((0..n).map(|_| s.sample(&mut rng)).collect())
}

pub const CALIBRATION_DRAWS: usize = 1_000_000;
const CALIBRATION_SEED: u64 = 0x5EED_CA11_B7A7_E000;

/// Sample mean of `|X|` for the standard stable law, from a fixed-seed draw
/// of `CALIBRATION_DRAWS`, cached per `(alpha, skew)`.
pub fn stable_mean_abs(alpha: f64, skew: f64) -> Result<f64> {
    if !(alpha > 1.0) {
        return Err(Error::domain(format!("mean |X| is infinite for alpha {alpha} <= 1")));
    }
    let sampler = StableSampler::new(alpha, skew)?;
    static CACHE: OnceLock<Mutex<HashMap<(u64, u64), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (alpha.to_bits(), skew.to_bits());
    if let Some(v) = cache.lock().expect("calibration cache poisoned").get(&key) {
        return Ok(*v);
    }
    const CHUNKS: usize = 16;
    let per = CALIBRATION_DRAWS / CHUNKS;
    let total: f64 = (0..CHUNKS)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(derive_seed(CALIBRATION_SEED, c as u64));
            (0..per).map(|_| sampler.sample(&mut rng).abs()).sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    let value = total / (per * CHUNKS) as f64;
    cache.lock().expect("calibration cache poisoned").insert(key, value);
    Ok(value)
}

/// Revenue density `prefactor r^-power exp(-r / cutoff)` truncated to
/// `r >= r_min`; the prefactor does not affect sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RevenueLaw {
    pub prefactor: f64,
    pub power: f64,
    pub cutoff: Option<f64>,
    pub r_min: f64,
}

impl RevenueLaw {
    /// `0.3 r^-1.55 exp(-r/6)` above `r = 0.2`.
    pub fn reference() -> Self {
        Self {
            prefactor: 0.3,
            power: 1.55,
            cutoff: Some(6.0),
            r_min: 0.2,
        }
    }

    pub fn from_fit(fit: &RevenuePdfFit, r_min: f64) -> Self {
        Self {
            prefactor: fit.prefactor,
            power: fit.power_exponent,
            cutoff: fit.cutoff_scale.is_finite().then_some(fit.cutoff_scale),
            r_min,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0) {
            return Err(Error::domain(format!("r_min must be positive, got {}", self.r_min)));
        }
        match self.cutoff {
            Some(c) if !(c > 0.0 && c.is_finite()) => {
                Err(Error::domain(format!("cutoff must be positive, got {c}")))
            }
            Some(_) if self.power < 0.0 => Err(Error::domain(format!(
                "revenue power must be nonnegative, got {}",
                self.power
            ))),
            None if !(self.power > 1.0) => Err(Error::domain(format!(
                "a pure power law needs power > 1, got {}",
                self.power
            ))),
            _ => Ok(()),
        }
    }

    /// Rejection sampling: a Pareto proposal thinned by the exponential factor
    /// when `power > 1`, otherwise an exponential proposal thinned by the power.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let r_min = self.r_min;
        match self.cutoff {
            None => r_min * (1.0 - rng.random::<f64>()).powf(-1.0 / (self.power - 1.0)),
            Some(c) if self.power > 1.0 => loop {
                let r = r_min * (1.0 - rng.random::<f64>()).powf(-1.0 / (self.power - 1.0));
                if rng.random::<f64>() < (-(r - r_min) / c).exp() {
                    return r;
                }
            },
            Some(c) => loop {
                let r = r_min - c * (1.0 - rng.random::<f64>()).ln();
                if rng.random::<f64>() < (r / r_min).powf(-self.power) {
                    return r;
                }
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseLaw {
    Stable { alpha: f64, skew: f64 },
    Gaussian,
}

/// Noise source rescaled so that `E|eps| = 1`.
#[derive(Debug, Clone, Copy)]
enum UnitNoise {
    Stable { sampler: StableSampler, inv_mean_abs: f64 },
    Gaussian,
}

impl UnitNoise {
    fn new(law: NoiseLaw) -> Result<Self> {
        match law {
            NoiseLaw::Gaussian => Ok(UnitNoise::Gaussian),
            NoiseLaw::Stable { alpha, skew } => Ok(UnitNoise::Stable {
                sampler: StableSampler::new(alpha, skew)?,
                inv_mean_abs: 1.0 / stable_mean_abs(alpha, skew)?,
            }),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            UnitNoise::Stable {
                sampler,
                inv_mean_abs,
            } => sampler.sample(rng) * inv_mean_abs,
            UnitNoise::Gaussian => {
                let z: f64 = rng.sample(StandardNormal);
                z * FRAC_PI_2.sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_companies: usize,
    pub year_min: i32,
    pub year_max: i32,
    pub r0_amplitude: f64,
    pub r0_efold_years: f64,
    pub r0_base_year: i32,
    pub revenue_law: RevenueLaw,
    pub gamma_g: f64,
    pub noise_amplitude: f64,
    pub eta: f64,
    pub noise_law: NoiseLaw,
    /// Fraction of lowest-revenue companies redrawn each year.
    pub survivorship: Option<f64>,
    pub unit_label: String,
    pub seed: u64,
}

impl GeneratorSpec {
    /// 500 companies over 1954..=2007, `gamma_g = 0.052`, `eta = 0.6`, stable
    /// noise with `alpha = 1.7` and amplitude 0.030.
    pub fn reference(seed: u64) -> Self {
        Self {
            n_companies: 500,
            year_min: 1954,
            year_max: 2007,
            r0_amplitude: 0.27,
            r0_efold_years: 12.0,
            r0_base_year: 1954,
            revenue_law: RevenueLaw::reference(),
            gamma_g: 0.052,
            noise_amplitude: 0.030,
            eta: 0.6,
            noise_law: NoiseLaw::Stable {
                alpha: 1.7,
                skew: 0.0,
            },
            survivorship: None,
            unit_label: "billions USD".into(),
            seed,
        }
    }

    pub fn trend(&self) -> TrendFit {
        TrendFit {
            amplitude: self.r0_amplitude,
            efold_years: self.r0_efold_years,
            y0: self.r0_base_year,
            excluded_years: BTreeSet::new(),
            residual_rms: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_companies == 0 {
            return Err(Error::domain("n_companies must be positive"));
        }
        if self.year_max <= self.year_min {
            return Err(Error::domain("year range must span at least two years"));
        }
        if !(self.r0_amplitude > 0.0 && self.r0_efold_years.is_finite() && self.r0_efold_years != 0.0) {
            return Err(Error::domain("R0 trend needs a positive amplitude and nonzero e-folding time"));
        }
        if !(self.noise_amplitude >= 0.0) {
            return Err(Error::domain("noise amplitude must be nonnegative"));
        }
        if let Some(k) = self.survivorship {
            if !(0.0..1.0).contains(&k) {
                return Err(Error::domain(format!("survivorship fraction must lie in [0, 1), got {k}")));
            }
        }
        self.revenue_law.validate()?;
        if let NoiseLaw::Stable { alpha, skew } = self.noise_law {
            StableSampler::new(alpha, skew)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub company_id: String,
    pub year: i32,
    pub r: f64,
    pub p: f64,
    pub eps: f64,
}

/// Every drawn scaled value behind a generated panel, in panel order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GroundTruth {
    pub records: Vec<TruthRecord>,
}

impl GroundTruth {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["company", "year", "r", "p", "eps"])?;
        for t in &self.records {
            w.write_record([
                t.company_id.clone(),
                t.year.to_string(),
                t.r.to_string(),
                t.p.to_string(),
                t.eps.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn company_id(i: usize) -> String {
    format!("C{i:06}")
}

pub fn generate_panel(spec: &GeneratorSpec) -> Result<(Panel, GroundTruth)> {
    spec.validate()?;
    let noise = UnitNoise::new(spec.noise_law)?;
    let law = spec.revenue_law;
    let years: Vec<i32> = (spec.year_min..=spec.year_max).collect();
    let n_years = years.len();
    let draw = |rng: &mut ChaCha8Rng| {
        let r = law.sample(rng);
        let eps = noise.sample(rng);
        (r, eps)
    };

    // rows indexed [company][year]
    let mut draws: Vec<Vec<(f64, f64)>> = (0..spec.n_companies)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_for(derive_seed(spec.seed, c as u64));
            (0..n_years).map(|_| draw(&mut rng)).collect()
        })
        .collect();

    if let Some(k) = spec.survivorship {
        let n_drop = (k * spec.n_companies as f64).floor() as usize;
        let stream = derive_seed(spec.seed, u64::MAX);
        #[allow(clippy::needless_range_loop)]
        for y in 0..n_years {
            let mut order: Vec<usize> = (0..spec.n_companies).collect();
            order.sort_by(|&a, &b| draws[a][y].0.total_cmp(&draws[b][y].0).then(a.cmp(&b)));
            for &c in &order[..n_drop] {
                let mut rng = rng_for(derive_seed(derive_seed(stream, y as u64), c as u64));
                draws[c][y] = draw(&mut rng);
            }
        }
    }

    let trend = spec.trend();
    let mut records = Vec::with_capacity(spec.n_companies * n_years);
    let mut truth = Vec::with_capacity(spec.n_companies * n_years);
    for (c, row) in draws.iter().enumerate() {
        let id = company_id(c);
        for (&year, &(r, eps)) in years.iter().zip(row) {
            let p = spec.gamma_g * r + spec.noise_amplitude * r.powf(spec.eta) * eps;
            let r0 = trend.value_at(year);
            records.push(CompanyYearRecord {
                company_id: id.clone(),
                year,
                revenue: r * r0,
                profit: p * r0,
            });
            truth.push(TruthRecord {
                company_id: id.clone(),
                year,
                r,
                p,
                eps,
            });
        }
    }
    let panel = Panel::new(records, spec.year_min, spec.year_max, spec.unit_label.clone())?;
    Ok((panel, GroundTruth { records: truth }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub n: usize,
    /// Median of `|sum of n draws|`.
    pub scale_estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCheck {
    pub alpha: f64,
    pub points: Vec<AggregatePoint>,
    /// Log-log slope of scale against `n`; `None` when all `n` coincide.
    pub slope: Option<f64>,
}

/// Scale of sums of `n` symmetric stable draws, for each `n`.
pub fn aggregate_check(
    alpha: f64,
    n_values: &[usize],
    samples_per_n: usize,
    seed: u64,
) -> Result<AggregateCheck> {
    let sampler = StableSampler::new(alpha, 0.0)?;
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(Error::domain("n_values must be nonempty and positive"));
    }
    if n_values.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("n_values must be nondecreasing"));
    }
    if samples_per_n == 0 {
        return Err(Error::domain("samples_per_n must be positive"));
    }
    let points: Vec<AggregatePoint> = n_values
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let level = derive_seed(seed, i as u64);
            let sums: Vec<f64> = (0..samples_per_n)
                .into_par_iter()
                .map(|s| {
                    let mut rng = rng_for(derive_seed(level, s as u64));
                    (0..n).map(|_| sampler.sample(&mut rng)).sum::<f64>().abs()
                })
                .collect();
            AggregatePoint {
                n,
                scale_estimate: median(&sums),
            }
        })
        .collect();
    let x: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.scale_estimate.ln()).collect();
    let slope = ols_line(&x, &y).map(|f| f.slope);
    Ok(AggregateCheck {
        alpha,
        points,
        slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::hill_tail_exponent;
    use crate::scaling::scale_panel;
    use crate::stats::{mean, variance};
    use statrs::function::gamma::gamma;

    fn quantile(xs: &[f64], q: f64) -> f64 {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        v[((v.len() - 1) as f64 * q).round() as usize]
    }

    #[test]
    fn alpha_two_is_normal_with_variance_two() {
        let xs = sample_stable(2.0, 0.0, 200_000, 1).unwrap();
        assert!((variance(&xs) - 2.0).abs() < 0.03);
        assert!(mean(&xs).abs() < 0.01);
        let est = hill_tail_exponent(&xs, 0.05).unwrap();
        assert!(!est.power_law_tails());
    }

    #[test]
    fn cauchy_quartiles() {
        let xs = sample_stable(1.0, 0.0, 200_000, 2).unwrap();
        assert!(median(&xs).abs() < 0.02);
        let iqr = quantile(&xs, 0.75) - quantile(&xs, 0.25);
        assert!((iqr - 2.0).abs() < 0.05, "iqr {iqr}");
    }

    #[test]
    fn stable_tail_index_from_samples() {
        let xs = sample_stable(1.7, 0.0, 100_000, 3).unwrap();
        let est = hill_tail_exponent(&xs, 0.05).unwrap();
        assert!((est.positive.alpha - 1.7).abs() < 0.1, "{est:?}");
        assert!((est.negative.alpha - 1.7).abs() < 0.1, "{est:?}");
    }

    #[test]
    fn calibrated_mean_abs_matches_closed_form() {
        for alpha in [1.5, 1.7, 2.0] {
            let exact = 2.0 / PI * gamma(1.0 - 1.0 / alpha);
            let got = stable_mean_abs(alpha, 0.0).unwrap();
            assert!((got / exact - 1.0).abs() < 0.01, "alpha {alpha}: {got} vs {exact}");
        }
        assert!(stable_mean_abs(1.0, 0.0).is_err());
    }

    #[test]
    fn skewed_samples_lean_right() {
        let xs = sample_stable(1.5, 1.0, 50_000, 4).unwrap();
        let pos = xs.iter().filter(|x| **x > 5.0).count();
        let neg = xs.iter().filter(|x| **x < -5.0).count();
        assert!(pos > 10 * neg.max(1));
    }

    #[test]
    fn sampler_rejects_bad_parameters() {
        assert!(sample_stable(0.0, 0.0, 10, 0).is_err());
        assert!(sample_stable(2.1, 0.0, 10, 0).is_err());
        assert!(sample_stable(1.5, 1.5, 10, 0).is_err());
        assert!(sample_stable(1.5, 0.0, 0, 0).is_err());
    }

    #[test]
    fn revenue_law_mean_matches_density() {
        // conditional mean of the truncated law computed by midpoint sums
        let law = RevenueLaw::reference();
        let f = |r: f64| r.powf(-1.55) * (-r / 6.0).exp();
        let (mut m0, mut m1) = (0.0, 0.0);
        let h = 1e-4;
        let mut r = 0.2 + h / 2.0;
        while r < 200.0 {
            m0 += f(r);
            m1 += r * f(r);
            r += h;
        }
        let exact = m1 / m0;
        let mut rng = rng_for(5);
        let xs: Vec<f64> = (0..400_000).map(|_| law.sample(&mut rng)).collect();
        assert!(xs.iter().all(|&x| x >= 0.2));
        assert!((mean(&xs) / exact - 1.0).abs() < 0.01, "{} vs {exact}", mean(&xs));
    }

    #[test]
    fn flat_power_uses_exponential_proposal() {
        let law = RevenueLaw {
            prefactor: 1.0,
            power: 0.0,
            cutoff: Some(2.0),
            r_min: 0.5,
        };
        let mut rng = rng_for(6);
        let xs: Vec<f64> = (0..200_000).map(|_| law.sample(&mut rng)).collect();
        assert!((mean(&xs) - 2.5).abs() < 0.02);
        let bad = RevenueLaw { cutoff: None, ..law };
        assert!(bad.validate().is_err());
    }

    fn small_spec(seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            n_companies: 40,
            year_min: 1990,
            year_max: 1999,
            ..GeneratorSpec::reference(seed)
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, ta) = generate_panel(&small_spec(9)).unwrap();
        let (b, tb) = generate_panel(&small_spec(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = generate_panel(&small_spec(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_panel_lies_on_line() {
        let spec = GeneratorSpec {
            noise_amplitude: 0.0,
            ..small_spec(1)
        };
        let (panel, _) = generate_panel(&spec).unwrap();
        for rec in panel.records() {
            assert!((rec.profit - 0.052 * rec.revenue).abs() <= 1e-15 * rec.revenue);
        }
    }

    #[test]
    fn rescaling_reproduces_truth() {
        let spec = small_spec(2);
        let (panel, truth) = generate_panel(&spec).unwrap();
        let scaled = scale_panel(&panel, &spec.trend());
        assert_eq!(scaled.len(), truth.records.len());
        for (s, t) in scaled.iter().zip(&truth.records) {
            assert_eq!((&s.company_id, s.year), (&t.company_id, t.year));
            assert!((s.r - t.r).abs() <= 1e-12 * t.r);
            assert!((s.p - t.p).abs() <= 1e-12 * t.p.abs().max(t.r));
        }
    }

    #[test]
    fn survivorship_keeps_shape_of_panel() {
        let spec = GeneratorSpec {
            survivorship: Some(0.1),
            ..small_spec(3)
        };
        let (panel, truth) = generate_panel(&spec).unwrap();
        assert_eq!(panel.len(), 400);
        assert!(truth.records.iter().all(|t| t.r >= 0.2));
        let plain = generate_panel(&small_spec(3)).unwrap().0;
        assert_ne!(panel, plain);
        let bad = GeneratorSpec {
            survivorship: Some(1.0),
            ..small_spec(3)
        };
        assert!(generate_panel(&bad).is_err());
    }

    #[test]
    fn aggregate_slope_tracks_inverse_alpha() {
        let check = aggregate_check(1.7, &[10, 100, 1000], 2000, 7).unwrap();
        assert!((check.slope.unwrap() - 1.0 / 1.7).abs() < 0.04);
        let gauss = aggregate_check(2.0, &[10, 100, 1000], 2000, 7).unwrap();
        assert!((gauss.slope.unwrap() - 0.5).abs() < 0.03);
    }

    #[test]
    fn aggregate_degenerate_n() {
        let check = aggregate_check(1.7, &[1, 1, 1], 500, 0).unwrap();
        assert!(check.slope.is_none());
        assert!(check
            .points
            .windows(2)
            .all(|w| (w[0].scale_estimate / w[1].scale_estimate - 1.0).abs() < 0.2));
        assert!(aggregate_check(1.7, &[10, 5], 10, 0).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: BTreeSet<u64> = (0..1000).map(|i| derive_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
    }
}
