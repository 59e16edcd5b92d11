//! Seasonal wind scenarios and wind decomposition.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::rng;
use crate::surrogate::{GpModel, KernelSpec, LogNormalDist, SurrogateError, Trend};

pub const KNOTS_TO_MS: f64 = 0.514444;

#[derive(Debug, thiserror::Error)]
pub enum EnvironmentError {
    #[error("month {0} is outside 1..=12")]
    MonthOutOfRange(u32),
    #[error("season {0} is outside 1..=4")]
    SeasonOutOfRange(u32),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

/// Meteorological season: 1 = Dec–Feb, 2 = Mar–May, 3 = Jun–Aug, 4 = Sep–Nov.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct SeasonCode(u8);

impl SeasonCode {
    pub const ALL: [SeasonCode; 4] = [SeasonCode(1), SeasonCode(2), SeasonCode(3), SeasonCode(4)];

    pub fn new(value: u32) -> Result<Self, EnvironmentError> {
        if (1..=4).contains(&value) {
            Ok(Self(value as u8))
        } else {
            Err(EnvironmentError::SeasonOutOfRange(value))
        }
    }

    pub fn value(self) -> u32 {
        self.0 as u32
    }

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl TryFrom<u32> for SeasonCode {
    type Error = EnvironmentError;
    fn try_from(v: u32) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<SeasonCode> for u32 {
    fn from(s: SeasonCode) -> u32 {
        s.value()
    }
}

pub fn season_of_month(month: u32) -> Result<SeasonCode, EnvironmentError> {
    match month {
        12 | 1 | 2 => Ok(SeasonCode(1)),
        3..=5 => Ok(SeasonCode(2)),
        6..=8 => Ok(SeasonCode(3)),
        9..=11 => Ok(SeasonCode(4)),
        m => Err(EnvironmentError::MonthOutOfRange(m)),
    }
}

/// One wind realisation: speed in m/s, direction in degrees `[0, 360)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindSample {
    pub speed: f64,
    pub direction: f64,
}

impl WindSample {
    pub const CALM: WindSample = WindSample {
        speed: 0.0,
        direction: 0.0,
    };
}

pub fn wrap_degrees(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Source of predictive wind distributions on the log scale: log-knots for
/// speed and log-degrees for direction.
pub trait WindField: Sync {
    fn predictive(
        &self,
        easting: f64,
        northing: f64,
        season: SeasonCode,
    ) -> Result<(LogNormalDist<f64>, LogNormalDist<f64>), EnvironmentError>;
}

/// Pair of GP surrogates over (easting, northing, season).
#[derive(Debug, Clone)]
pub struct WindModel {
    pub speed: GpModel<f64>,
    pub direction: GpModel<f64>,
}

impl WindField for WindModel {
    fn predictive(
        &self,
        easting: f64,
        northing: f64,
        season: SeasonCode,
    ) -> Result<(LogNormalDist<f64>, LogNormalDist<f64>), EnvironmentError> {
        let x = [easting, northing, season.value() as f64];
        Ok((
            self.speed.predict_lognormal(&x)?,
            self.direction.predict_lognormal(&x)?,
        ))
    }
}

/// Spatially and seasonally constant wind distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantWind {
    pub log_speed_knots: LogNormalDist<f64>,
    pub log_direction_deg: LogNormalDist<f64>,
}

impl ConstantWind {
    pub fn calm() -> Self {
        // exp(-1000) underflows to zero knots
        Self {
            log_speed_knots: LogNormalDist::degenerate(-1000.0),
            log_direction_deg: LogNormalDist::degenerate(0.0),
        }
    }
}

impl WindField for ConstantWind {
    fn predictive(
        &self,
        _: f64,
        _: f64,
        _: SeasonCode,
    ) -> Result<(LogNormalDist<f64>, LogNormalDist<f64>), EnvironmentError> {
        Ok((self.log_speed_knots, self.log_direction_deg))
    }
}

/// Draw `count` wind samples at a location and season.
pub fn sample_wind<W: WindField + ?Sized, R: Rng + ?Sized>(
    field: &W,
    location: (f64, f64),
    season: SeasonCode,
    rng: &mut R,
    count: usize,
) -> Result<Vec<WindSample>, EnvironmentError> {
    let (speed, dir) = field.predictive(location.0, location.1, season)?;
    Ok((0..count)
        .map(|_| WindSample {
            speed: speed.sample_one(rng) * KNOTS_TO_MS,
            direction: wrap_degrees(dir.sample_one(rng)),
        })
        .collect())
}

/// Split wind into tail (along heading) and cross components.
pub fn decompose_wind(speed: f64, direction_deg: f64, heading_deg: f64) -> (f64, f64) {
    let delta = (direction_deg - heading_deg).to_radians();
    let (s, c) = delta.sin_cos();
    (speed * c, speed * s)
}

/// K wind draws per site for one season: `out[k][j]`.
pub fn wind_scenarios<W: WindField + ?Sized>(
    field: &W,
    sites: &[(f64, f64)],
    season: SeasonCode,
    k: usize,
    seed: u64,
    stage: u64,
) -> Result<Vec<Vec<WindSample>>, EnvironmentError> {
    let per_site: Vec<Vec<WindSample>> = sites
        .iter()
        .enumerate()
        .map(|(j, &loc)| {
            let mut r = rng::stream(seed, &[stage, season.value() as u64, j as u64]);
            sample_wind(field, loc, season, &mut r, k)
        })
        .collect::<Result<_, _>>()?;
    Ok((0..k)
        .map(|kk| per_site.iter().map(|s| s[kk]).collect())
        .collect())
}

/// Parameters for the synthetic default wind field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWind {
    /// Mean speed per season in m/s.
    pub seasonal_speed_ms: [f64; 4],
    pub mean_direction_deg: f64,
    pub direction_swing_deg: f64,
    /// Speed change across the region as a fraction of the mean.
    pub east_gradient: f64,
    /// Amplitudes of the smooth spatial variation on the log scale.
    pub log_speed_amplitude: f64,
    pub log_direction_amplitude: f64,
    pub grid: usize,
}

impl Default for SyntheticWind {
    fn default() -> Self {
        Self {
            seasonal_speed_ms: [6.9, 4.8, 4.3, 5.6],
            mean_direction_deg: 225.0,
            direction_swing_deg: 20.0,
            east_gradient: 0.15,
            log_speed_amplitude: 0.15,
            log_direction_amplitude: 0.08,
            grid: 4,
        }
    }
}

impl SyntheticWind {
    /// Condition a GP pair on a smooth grid covering `bounds`
    /// `(e_min, n_min, e_max, n_max)` for all four seasons.
    pub fn build(&self, bounds: (f64, f64, f64, f64), seed: u64) -> Result<WindModel, EnvironmentError> {
        let (e0, n0, e1, n1) = bounds;
        let g = self.grid.max(2);
        let mut r = rng::stream(seed, &[rng::tag::SIMULATE, 0x57]);
        // random smooth bumps give spatial structure without breaking the
        // noise-free interpolation the GP assumes
        let phase: Vec<f64> = (0..4).map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
        let bump = |fe: f64, fnr: f64, amp: f64, o: usize| {
            amp * ((std::f64::consts::PI * fe + phase[o]).sin() * (std::f64::consts::PI * fnr + phase[o + 1]).cos())
        };
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        let mut yd = Vec::new();
        for s in 1..=4u32 {
            for a in 0..g {
                for b in 0..g {
                    let fe = a as f64 / (g - 1) as f64;
                    let fnr = b as f64 / (g - 1) as f64;
                    let e = e0 + fe * (e1 - e0);
                    let n = n0 + fnr * (n1 - n0);
                    let knots = self.seasonal_speed_ms[s as usize - 1] / KNOTS_TO_MS
                        * (1.0 + self.east_gradient * (fe - 0.5));
                    let dir = self.mean_direction_deg
                        + self.direction_swing_deg * (std::f64::consts::FRAC_PI_2 * s as f64).sin();
                    rows.push(vec![e, n, s as f64]);
                    ys.push(knots.ln() + bump(fe, fnr, self.log_speed_amplitude, 0));
                    yd.push(dir.ln() + bump(fe, fnr, self.log_direction_amplitude, 2));
                }
            }
        }
        let x = Matrix::from_rows(&rows).expect("uniform rows");
        let span = ((e1 - e0).abs().max((n1 - n0).abs()) / (g - 1) as f64).max(1.0);
        let kernel = KernelSpec::product(vec![
            KernelSpec::matern52(vec![0, 1], vec![span, span], 1.0),
            KernelSpec::Periodic {
                variance: 1.0,
                scales: vec![1.0],
                periods: vec![4.0],
                dims: vec![2],
                fix_period: true,
            },
        ]);
        Ok(WindModel {
            speed: GpModel::condition(kernel.clone(), Trend::Constant, x.clone(), ys)?,
            direction: GpModel::condition(kernel, Trend::Constant, x, yd)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn season_coding() {
        assert_eq!(season_of_month(1).unwrap().value(), 1);
        assert_eq!(season_of_month(4).unwrap().value(), 2);
        assert_eq!(season_of_month(7).unwrap().value(), 3);
        assert_eq!(season_of_month(11).unwrap().value(), 4);
        assert_eq!(season_of_month(12).unwrap().value(), 1);
        assert!(season_of_month(0).is_err());
        assert!(season_of_month(13).is_err());
    }

    #[test]
    fn deterministic_transform() {
        let w = ConstantWind {
            log_speed_knots: LogNormalDist::degenerate(10f64.ln()),
            log_direction_deg: LogNormalDist::degenerate(400f64.ln()),
        };
        let mut r = rng::stream(1, &[]);
        let s = sample_wind(&w, (0.0, 0.0), SeasonCode::ALL[0], &mut r, 3).unwrap();
        for x in s {
            assert!((x.speed - 5.14444).abs() < 1e-12);
            assert!((x.direction - 40.0).abs() < 1e-9);
        }
    }

    #[test]
    fn decomposition_examples() {
        assert_eq!(decompose_wind(5.0, 30.0, 30.0), (5.0, 0.0));
        let (t, c) = decompose_wind(5.0, 120.0, 30.0);
        assert!(t.abs() < 1e-12 && (c - 5.0).abs() < 1e-12);
        let (t, c) = decompose_wind(8.0, 30.0, 210.0);
        assert!((t + 8.0).abs() < 1e-12 && c.abs() < 1e-12);
    }

    #[test]
    fn median_speed_matches_lognormal_median() {
        let model = SyntheticWind::default()
            .build((250_000.0, 650_000.0, 280_000.0, 680_000.0), 3)
            .unwrap();
        let s = SeasonCode::new(2).unwrap();
        let (sp, _) = model.predictive(263_000.0, 667_000.0, s).unwrap();
        assert!(sp.sigma2 > 0.0, "{sp:?}");
        let mut r = rng::stream(5, &[]);
        let mut v: Vec<f64> = sample_wind(&model, (263_000.0, 667_000.0), s, &mut r, 10_000)
            .unwrap()
            .into_iter()
            .map(|w| w.speed)
            .collect();
        v.sort_by(f64::total_cmp);
        let med = (v[4999] + v[5000]) / 2.0;
        let want = sp.mu.exp() * KNOTS_TO_MS;
        assert!((med / want - 1.0).abs() < 0.02, "{med} vs {want}");
    }

    #[test]
    fn synthetic_field_is_seasonal() {
        let model = SyntheticWind::default()
            .build((0.0, 0.0, 30_000.0, 30_000.0), 1)
            .unwrap();
        let winter = model.predictive(15_000.0, 15_000.0, SeasonCode::ALL[0]).unwrap().0;
        let summer = model.predictive(15_000.0, 15_000.0, SeasonCode::ALL[2]).unwrap().0;
        assert!(winter.median() > summer.median());
    }

    #[test]
    fn scenarios_are_reproducible() {
        let w = ConstantWind {
            log_speed_knots: LogNormalDist::new(2.0, 0.3).unwrap(),
            log_direction_deg: LogNormalDist::new(5.0, 0.1).unwrap(),
        };
        let sites = [(0.0, 0.0), (100.0, 0.0)];
        let a = wind_scenarios(&w, &sites, SeasonCode::ALL[1], 4, 9, rng::tag::WIND).unwrap();
        let b = wind_scenarios(&w, &sites, SeasonCode::ALL[1], 4, 9, rng::tag::WIND).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert_eq!(a[0].len(), 2);
        assert_ne!(a[0][0], a[0][1]);
    }

    proptest! {
        #[test]
        fn decomposition_preserves_magnitude(v in 0.0f64..40.0, a in -720.0f64..720.0, h in -720.0f64..720.0) {
            let (t, c) = decompose_wind(v, a, h);
            prop_assert!((t * t + c * c - v * v).abs() < 1e-9);
        }

        #[test]
        fn decomposition_is_periodic(v in 0.0f64..40.0, a in 0.0f64..360.0, h in 0.0f64..360.0) {
            let (t0, c0) = decompose_wind(v, a, h);
            let (t1, c1) = decompose_wind(v, a + 360.0, h);
            let (t2, c2) = decompose_wind(v, a, h + 360.0);
            prop_assert!((t0 - t1).abs() < 1e-9 && (c0 - c1).abs() < 1e-9);
            prop_assert!((t0 - t2).abs() < 1e-9 && (c0 - c2).abs() < 1e-9);
        }

        #[test]
        fn samples_are_valid(mu in -5.0f64..8.0, s2 in 0.0f64..4.0, dmu in -3.0f64..9.0, ds2 in 0.0f64..4.0, seed in any::<u64>()) {
            let w = ConstantWind {
                log_speed_knots: LogNormalDist::new(mu, s2).unwrap(),
                log_direction_deg: LogNormalDist::new(dmu, ds2).unwrap(),
            };
            let mut r = rng::stream(seed, &[]);
            for x in sample_wind(&w, (0.0, 0.0), SeasonCode::ALL[3], &mut r, 50).unwrap() {
                prop_assert!(x.speed >= 0.0);
                prop_assert!((0.0..360.0).contains(&x.direction));
            }
        }
    }
}
