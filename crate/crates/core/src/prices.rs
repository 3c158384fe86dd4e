//! Electricity price series: synthetic generation and CSV ingestion.

use crate::grid::TimeGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PriceError {
    #[error("price series has {got} steps, grid expects {want}")]
    LengthMismatch { got: usize, want: usize },
    #[error("csv parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("price spec invalid: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-step electricity prices in EUR/MWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    values: Vec<f64>,
}

impl PriceSeries {
    pub fn new(values: Vec<f64>, grid: &TimeGrid) -> Result<Self, PriceError> {
        if values.len() != grid.steps() {
            return Err(PriceError::LengthMismatch {
                got: values.len(),
                want: grid.steps(),
            });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Shape parameters for the synthetic price generator: a daily sinusoid with a
/// weekly modulation and seeded noise, clamped to be nonnegative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriceGenSpec {
    /// Mean price level (EUR/MWh).
    pub base: f64,
    /// Amplitude of the daily cycle (EUR/MWh).
    pub daily_amplitude: f64,
    /// Amplitude of the weekly modulation (EUR/MWh); weekends come out cheaper.
    pub weekly_amplitude: f64,
    /// Standard deviation of the per-hour noise (EUR/MWh).
    pub noise_std: f64,
}

impl Default for PriceGenSpec {
    fn default() -> Self {
        Self {
            base: 70.0,
            daily_amplitude: 25.0,
            weekly_amplitude: 10.0,
            noise_std: 6.0,
        }
    }
}

impl PriceGenSpec {
    pub fn validate(&self) -> Result<(), PriceError> {
        if !(self.base.is_finite() && self.base >= 0.0) {
            return Err(PriceError::BadSpec("base must be finite and >= 0".into()));
        }
        for (name, v) in [
            ("daily_amplitude", self.daily_amplitude),
            ("weekly_amplitude", self.weekly_amplitude),
            ("noise_std", self.noise_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PriceError::BadSpec(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Generate a deterministic synthetic price series. The daily cycle peaks in
/// the evening and bottoms out in the small hours; weekend hours get a level
/// discount of `weekly_amplitude`.
pub fn generate_prices(
    seed: u64,
    grid: &TimeGrid,
    spec: &PriceGenSpec,
) -> Result<PriceSeries, PriceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut values = Vec::with_capacity(grid.steps());
    for t in 0..grid.steps() {
        let hour = grid.hour_of_day(t) as f64;
        // Minimum around 04:00, maximum around 19:00 with a morning shoulder.
        let daily = spec.daily_amplitude
            * (0.8 * ((hour - 19.0) / 24.0 * TAU).cos() + 0.2 * ((hour - 9.0) / 12.0 * TAU).cos());
        let weekend = matches!(grid.weekday_of_step(t), 5 | 6);
        let weekly = if weekend { -spec.weekly_amplitude } else { 0.0 };
        // Box-Muller keeps the dependency surface small.
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let noise = spec.noise_std * (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos();
        values.push((spec.base + daily + weekly + noise).max(0.0));
    }
    PriceSeries::new(values, grid)
}

/// Write the `t, price_eur_mwh` schema.
pub fn prices_to_csv(prices: &PriceSeries) -> String {
    let mut out = String::from("t,price_eur_mwh\n");
    for (t, p) in prices.values().iter().enumerate() {
        out.push_str(&format!("{t},{p}\n"));
    }
    out
}

/// Read the `t, price_eur_mwh` schema. Lines starting with `#` are skipped.
pub fn prices_from_csv(text: &str, grid: &TimeGrid) -> Result<PriceSeries, PriceError> {
    let mut values = vec![f64::NAN; grid.steps()];
    let mut seen = vec![false; grid.steps()];
    let mut header_seen = false;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols != ["t", "price_eur_mwh"] {
                return Err(PriceError::Parse {
                    line: idx + 1,
                    msg: format!("expected header `t,price_eur_mwh`, got `{line}`"),
                });
            }
            header_seen = true;
            continue;
        }
        let mut parts = line.split(',');
        let t: usize = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| PriceError::Parse {
                line: idx + 1,
                msg: "bad step index".into(),
            })?;
        let p: f64 = parts
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| PriceError::Parse {
                line: idx + 1,
                msg: "bad price value".into(),
            })?;
        if t >= grid.steps() {
            return Err(PriceError::Parse {
                line: idx + 1,
                msg: format!("step {t} outside grid of {} steps", grid.steps()),
            });
        }
        values[t] = p;
        seen[t] = true;
    }
    if let Some(t) = seen.iter().position(|s| !s) {
        return Err(PriceError::Parse {
            line: 0,
            msg: format!("missing price for step {t}"),
        });
    }
    PriceSeries::new(values, grid)
}
