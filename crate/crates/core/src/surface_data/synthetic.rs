//! Synthetic quote panels driven by AR(1) coefficient processes.

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{business_days, DataError, IvQuote, PanelSeries, SurfacePanel};
use crate::cross_section::{ct_regressors, gg_regressors, MoneynessTransform};

/// Surface family generating the quotes, with its coefficient dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    /// Quadratic moneyness/linear maturity surface; `mean` is the
    /// α-vector every coordinate reverts to.
    Gg {
        mean: [f64; 5],
        phi: f64,
        innovation_sd: [f64; 5],
    },
    /// Asymmetric smile with Nelson–Siegel term structure at a fixed λ.
    Ct {
        mean: [f64; 7],
        lambda: f64,
        phi: f64,
        innovation_sd: [f64; 7],
    },
    /// Piecewise-constant surface on a moneyness × maturity grid shifted by a
    /// common AR(1) level. `levels[i][j]` covers maturity cell `i` and
    /// moneyness cell `j`; breaks are interior cell boundaries.
    Piecewise {
        moneyness_breaks: Vec<f64>,
        maturity_breaks: Vec<f64>,
        levels: Vec<Vec<f64>>,
        phi: f64,
        innovation_sd: f64,
    },
}

impl GroundTruth {
    fn tag(&self) -> &'static str {
        match self {
            GroundTruth::Gg { .. } => "GG",
            GroundTruth::Ct { .. } => "CT",
            GroundTruth::Piecewise { .. } => "PW",
        }
    }

    fn means(&self) -> Vec<f64> {
        match self {
            GroundTruth::Gg { mean, .. } => mean.to_vec(),
            GroundTruth::Ct { mean, .. } => mean.to_vec(),
            GroundTruth::Piecewise { .. } => vec![0.0],
        }
    }

    fn dynamics(&self) -> (f64, Vec<f64>) {
        match self {
            GroundTruth::Gg {
                phi, innovation_sd, ..
            } => (*phi, innovation_sd.to_vec()),
            GroundTruth::Ct {
                phi, innovation_sd, ..
            } => (*phi, innovation_sd.to_vec()),
            GroundTruth::Piecewise {
                phi, innovation_sd, ..
            } => (*phi, vec![*innovation_sd]),
        }
    }

    fn lambda(&self) -> Option<f64> {
        match self {
            GroundTruth::Ct { lambda, .. } => Some(*lambda),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), DataError> {
        let (phi, sds) = self.dynamics();
        if !(phi.abs() <= 1.0) {
            return Err(DataError::InvalidConfig(format!("phi {phi} outside [-1, 1]")));
        }
        if sds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(DataError::InvalidConfig("negative innovation sd".into()));
        }
        if self.means().iter().any(|m| !m.is_finite()) {
            return Err(DataError::InvalidConfig("non-finite mean coefficient".into()));
        }
        match self {
            GroundTruth::Ct { lambda, .. } if !(*lambda > 0.0) => {
                Err(DataError::InvalidConfig(format!("lambda {lambda} must be positive")))
            }
            GroundTruth::Piecewise {
                moneyness_breaks,
                maturity_breaks,
                levels,
                ..
            } => {
                let ascending = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
                if !ascending(moneyness_breaks) || !ascending(maturity_breaks) {
                    return Err(DataError::InvalidConfig("breaks must ascend".into()));
                }
                if levels.len() != maturity_breaks.len() + 1
                    || levels.iter().any(|row| row.len() != moneyness_breaks.len() + 1)
                {
                    return Err(DataError::InvalidConfig(
                        "levels grid does not match the breaks".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Surface value at `(moneyness, maturity)` for the state `coeffs`.
    fn evaluate(&self, coeffs: &[f64], moneyness: f64, maturity: f64) -> f64 {
        let transform = MoneynessTransform::default();
        let delta = transform.apply(moneyness);
        match self {
            GroundTruth::Gg { .. } => gg_regressors(delta, maturity)
                .iter()
                .zip(coeffs)
                .map(|(x, c)| x * c)
                .sum(),
            GroundTruth::Ct { lambda, .. } => ct_regressors(delta, maturity, *lambda)
                .expect("positive maturity and lambda")
                .iter()
                .zip(coeffs)
                .map(|(x, c)| x * c)
                .sum(),
            GroundTruth::Piecewise {
                moneyness_breaks,
                maturity_breaks,
                levels,
                ..
            } => {
                let cell = |breaks: &[f64], v: f64| breaks.iter().filter(|&&b| v > b).count();
                levels[cell(maturity_breaks, maturity)][cell(moneyness_breaks, moneyness)]
                    + coeffs[0]
            }
        }
    }
}

/// Fixed coordinate lattice from which daily quote locations are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub moneyness_nodes: usize,
    pub maturity_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_days: usize,
    pub quotes_per_day: usize,
    pub start_date: NaiveDate,
    pub truth: GroundTruth,
    pub noise_sd: f64,
    pub moneyness_range: (f64, f64),
    pub maturity_range: (f64, f64),
    /// When set, quote coordinates are drawn without replacement from this
    /// lattice so the same coordinate recurs across days.
    pub lattice: Option<Lattice>,
    pub commodity_tag: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_days: 250,
            quotes_per_day: 50,
            start_date: NaiveDate::from_ymd_opt(2006, 1, 2).expect("valid date"),
            truth: GroundTruth::Ct {
                mean: [0.28, 0.9, 1.4, 0.10, 0.15, -0.02, 0.05],
                lambda: 1.5,
                phi: 0.98,
                innovation_sd: [0.004, 0.05, 0.05, 0.004, 0.006, 0.005, 0.005],
            },
            noise_sd: 0.005,
            moneyness_range: (90.0, 110.0),
            maturity_range: (1.0 / 12.0, 2.0),
            lattice: None,
            commodity_tag: "synthetic".into(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n_days == 0 {
            return Err(DataError::InvalidConfig("n_days must be positive".into()));
        }
        if self.quotes_per_day == 0 {
            return Err(DataError::InvalidConfig("quotes_per_day must be positive".into()));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(DataError::InvalidConfig(format!(
                "noise_sd {} must be non-negative",
                self.noise_sd
            )));
        }
        let (mlo, mhi) = self.moneyness_range;
        let (tlo, thi) = self.maturity_range;
        if !(mlo > 0.0 && mhi > mlo) || !(tlo > 0.0 && thi > tlo) {
            return Err(DataError::InvalidConfig("empty coordinate range".into()));
        }
        if let Some(l) = self.lattice {
            if l.moneyness_nodes < 2 || l.maturity_nodes < 2 {
                return Err(DataError::InvalidConfig("lattice needs >= 2 nodes per axis".into()));
            }
        }
        self.truth.validate()
    }
}

/// Generating coefficients for one day.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub date: NaiveDate,
    pub model: &'static str,
    pub coefficients: Vec<f64>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSeries {
    pub series: PanelSeries,
    pub truth: Vec<TruthRow>,
}

/// Lower clamp keeping generated volatilities strictly positive.
const IV_FLOOR: f64 = 1e-6;

pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<GeneratedSeries, DataError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dates = business_days(config.start_date, config.n_days);
    let means = config.truth.means();
    let (phi, sds) = config.truth.dynamics();
    let (mlo, mhi) = config.moneyness_range;
    let (tlo, thi) = config.maturity_range;

    let nodes: Option<Vec<(f64, f64)>> = config.lattice.map(|l| {
        let lin = |lo: f64, hi: f64, k: usize, i: usize| lo + (hi - lo) * i as f64 / (k - 1) as f64;
        let mut v = Vec::with_capacity(l.moneyness_nodes * l.maturity_nodes);
        for i in 0..l.maturity_nodes {
            for j in 0..l.moneyness_nodes {
                v.push((
                    lin(mlo, mhi, l.moneyness_nodes, j),
                    lin(tlo, thi, l.maturity_nodes, i),
                ));
            }
        }
        v
    });

    let mut state = means.clone();
    let mut panels = Vec::with_capacity(config.n_days);
    let mut truth = Vec::with_capacity(config.n_days);
    for (day, &date) in dates.iter().enumerate() {
        if day > 0 {
            for (k, s) in state.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                *s = means[k] + phi * (*s - means[k]) + sds[k] * z;
            }
        }
        let coords: Vec<(f64, f64)> = match &nodes {
            Some(all) => {
                let mut picked = Vec::with_capacity(config.quotes_per_day);
                while picked.len() < config.quotes_per_day {
                    let mut order = all.clone();
                    order.shuffle(&mut rng);
                    let need = config.quotes_per_day - picked.len();
                    picked.extend(order.into_iter().take(need));
                }
                picked
            }
            None => (0..config.quotes_per_day)
                .map(|_| (rng.gen_range(mlo..=mhi), rng.gen_range(tlo..=thi)))
                .collect(),
        };
        let mut quotes = Vec::with_capacity(coords.len());
        for (moneyness, maturity) in coords {
            let clean = config.truth.evaluate(&state, moneyness, maturity);
            let z: f64 = rng.sample(StandardNormal);
            let iv = (clean + config.noise_sd * z).clamp(IV_FLOOR, 1.0);
            let volume = rng.gen_range(1..=500);
            quotes.push(IvQuote::new(date, moneyness, maturity, iv, volume)?);
        }
        panels.push(SurfacePanel { date, quotes });
        truth.push(TruthRow {
            date,
            model: config.truth.tag(),
            coefficients: state.clone(),
            lambda: config.truth.lambda(),
        });
    }
    Ok(GeneratedSeries {
        series: PanelSeries::new(panels, config.commodity_tag.clone(), None)?,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cross_section::{evaluate_gg, fit_gg, GgCoefficients};

    fn gg_config(n_days: usize, noise: f64, sd: f64, phi: f64) -> SyntheticConfig {
        SyntheticConfig {
            n_days,
            quotes_per_day: 40,
            truth: GroundTruth::Gg {
                mean: [0.3, -0.1, 0.6, 0.03, 0.05],
                phi,
                innovation_sd: [sd; 5],
            },
            noise_sd: noise,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn noiseless_constant_panels_lie_on_surface() {
        let cfg = gg_config(5, 0.0, 0.0, 0.9);
        let gen = generate_synthetic(&cfg, 1).unwrap();
        let coeffs = GgCoefficients::<f64>::from_alpha([0.3, -0.1, 0.6, 0.03, 0.05]);
        for q in gen.series.panels.iter().flat_map(|p| &p.quotes) {
            let v = evaluate_gg(&coeffs, q.moneyness, q.maturity, &MoneynessTransform::default());
            assert_eq!(q.iv, v);
        }
        for p in &gen.series.panels {
            let fit = fit_gg::<f64>(p, &MoneynessTransform::default()).unwrap();
            assert!(fit.fit_stats.unwrap().rss < 1e-20);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SyntheticConfig::default();
        let a = generate_synthetic(&cfg, 42).unwrap();
        let b = generate_synthetic(&cfg, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&cfg, 43).unwrap();
        assert_ne!(a.series, c.series);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = SyntheticConfig::default();
        cfg.n_days = 0;
        assert!(matches!(generate_synthetic(&cfg, 1), Err(DataError::InvalidConfig(_))));
        let mut cfg = SyntheticConfig::default();
        cfg.noise_sd = -0.1;
        assert!(matches!(generate_synthetic(&cfg, 1), Err(DataError::InvalidConfig(_))));
        let mut cfg = SyntheticConfig::default();
        cfg.quotes_per_day = 0;
        assert!(generate_synthetic(&cfg, 1).is_err());
    }

    #[test]
    fn refitted_coefficients_inherit_persistence() {
        let cfg = gg_config(2000, 0.002, 0.01, 0.98);
        let gen = generate_synthetic(&cfg, 7).unwrap();
        let path: Vec<f64> = gen
            .series
            .panels
            .iter()
            .map(|p| fit_gg::<f64>(p, &MoneynessTransform::default()).unwrap().alpha[0])
            .collect();
        let n = path.len() as f64;
        let mean = path.iter().sum::<f64>() / n;
        let var: f64 = path.iter().map(|v| (v - mean).powi(2)).sum();
        let cov: f64 = path.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
        let acf1 = cov / var;
        assert!((0.9..=1.0).contains(&acf1), "lag-1 autocorrelation {acf1}");
    }

    #[test]
    fn lattice_reuses_coordinates() {
        let cfg = SyntheticConfig {
            n_days: 3,
            quotes_per_day: 12,
            lattice: Some(Lattice {
                moneyness_nodes: 5,
                maturity_nodes: 4,
            }),
            ..SyntheticConfig::default()
        };
        let gen = generate_synthetic(&cfg, 3).unwrap();
        for p in &gen.series.panels {
            let mut seen: Vec<(u64, u64)> = p
                .quotes
                .iter()
                .map(|q| (q.moneyness.to_bits(), q.maturity.to_bits()))
                .collect();
            seen.sort();
            seen.dedup();
            assert_eq!(seen.len(), 12, "no duplicate coordinates within a day");
        }
    }

    #[test]
    fn piecewise_truth_is_flat_within_cells() {
        let cfg = SyntheticConfig {
            n_days: 2,
            quotes_per_day: 30,
            noise_sd: 0.0,
            truth: GroundTruth::Piecewise {
                moneyness_breaks: vec![100.0],
                maturity_breaks: vec![1.0],
                levels: vec![vec![0.4, 0.3], vec![0.35, 0.25]],
                phi: 0.9,
                innovation_sd: 0.0,
            },
            ..SyntheticConfig::default()
        };
        let gen = generate_synthetic(&cfg, 1).unwrap();
        for q in gen.series.panels.iter().flat_map(|p| &p.quotes) {
            let expect = match (q.maturity > 1.0, q.moneyness > 100.0) {
                (false, false) => 0.4,
                (false, true) => 0.3,
                (true, false) => 0.35,
                (true, true) => 0.25,
            };
            assert_eq!(q.iv, expect);
        }
    }
}
