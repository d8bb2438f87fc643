//! Seeded synthetic traffic with a daily double peak, weaker weekends and
//! coupled speed / journey-time series.
//!
//! ```text
//! seasonal(t) = base + A(day)·(bump(hour, morning) + bump(hour, evening))
//! d(t)        = φ·d(t-1) + noise·σ_d·N(0,1)          latent congestion
//! true(t)     = max(0, seasonal(t)·(1 + d(t - lag)))
//! flow(t)     = max(0, true(t) + noise·σ_f·N(0,1))
//! speed(t)    = v_free·(1 - ½·(true(t-1)/capacity)²)·(1 - γ·d(t)) + noise·σ_v·N(0,1)
//! journey(t)  = 3600·link_km / speed(t) + noise·σ_j·N(0,1)     seconds
//! ```
//!
//! Congestion slows traffic upstream before it reaches the counting site:
//! speed responds to `d(t)` at every load level while flow feels it `lag`
//! intervals later, through a noisy count. Speed and journey time therefore
//! carry information about the next flow value that flow history lacks.
//! With `noise = 0` the flow is exactly weekly periodic.

use chrono::{Datelike, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use super::{Dataset, FLOW, JOURNEY_TIME, SPEED};
use crate::error::{Error, Result};
use crate::tensor::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub days: u32,
    pub interval_minutes: u32,
    pub seed: u64,
    /// Scales every noise source; 0 gives a noiseless series.
    pub noise: f64,
    /// First timestamp, `YYYY-MM-DDTHH:MM:SS`.
    pub start: String,
    pub base_flow: f64,
    pub peak_amplitude: f64,
    pub weekend_factor: f64,
    pub morning_peak_hour: f64,
    pub evening_peak_hour: f64,
    pub peak_width_hours: f64,
    pub congestion_persistence: f64,
    pub congestion_sd: f64,
    pub flow_noise_sd: f64,
    pub free_flow_speed: f64,
    pub capacity: f64,
    /// Relative speed loss per unit of latent congestion.
    pub congestion_speed_factor: f64,
    /// Intervals by which congestion reaches the flow count after the speed.
    pub congestion_lag: u32,
    pub speed_noise_sd: f64,
    pub link_km: f64,
    pub journey_noise_sd: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            days: 60,
            interval_minutes: 15,
            seed: 0,
            noise: 0.1,
            start: "2014-01-07T00:00:00".into(),
            base_flow: 80.0,
            peak_amplitude: 320.0,
            weekend_factor: 0.6,
            morning_peak_hour: 8.0,
            evening_peak_hour: 18.0,
            peak_width_hours: 1.5,
            congestion_persistence: 0.9,
            congestion_sd: 0.2,
            flow_noise_sd: 60.0,
            free_flow_speed: 110.0,
            capacity: 420.0,
            congestion_speed_factor: 2.0,
            congestion_lag: 1,
            speed_noise_sd: 0.5,
            link_km: 5.0,
            journey_noise_sd: 3.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<NaiveDateTime> {
        if self.days < 2 {
            return Err(Error::Config(format!("synthetic data needs at least 2 days, got {}", self.days)));
        }
        if self.interval_minutes == 0 || (24 * 60) % self.interval_minutes != 0 {
            return Err(Error::Config(format!(
                "interval of {} minutes does not divide a day",
                self.interval_minutes
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise level must be finite and >= 0, got {}", self.noise)));
        }
        if !(self.capacity > 0.0 && self.free_flow_speed > 0.0 && self.link_km > 0.0 && self.peak_width_hours > 0.0)
        {
            return Err(Error::Config(
                "capacity, free_flow_speed, link_km and peak_width_hours must be positive".into(),
            ));
        }
        if !(self.congestion_persistence.abs() < 1.0) {
            return Err(Error::Config("congestion_persistence must lie in (-1, 1)".into()));
        }
        super::csv_io::parse_timestamp(&self.start)
            .ok_or_else(|| Error::Config(format!("cannot parse start timestamp {:?}", self.start)))
    }

    fn seasonal(&self, t: NaiveDateTime) -> f64 {
        let hour = f64::from(t.num_seconds_from_midnight()) / 3600.0;
        let weekend = matches!(t.weekday(), Weekday::Sat | Weekday::Sun);
        let amp = if weekend {
            self.weekend_factor * self.peak_amplitude
        } else {
            self.peak_amplitude
        };
        let bump = |centre: f64| {
            let z = (hour - centre) / self.peak_width_hours;
            (-0.5 * z * z).exp()
        };
        self.base_flow + amp * (bump(self.morning_peak_hour) + bump(self.evening_peak_hour))
    }
}

pub fn synth(config: &SynthConfig) -> Result<Dataset> {
    let start = config.validate()?;
    let step = chrono::Duration::minutes(i64::from(config.interval_minutes));
    let n = (config.days * 24 * 60 / config.interval_minutes) as usize;
    let mut rng = Rng::new(config.seed);
    let noise = config.noise;

    let mut timestamps = Vec::with_capacity(n);
    let mut flow = Vec::with_capacity(n);
    let mut speed = Vec::with_capacity(n);
    let mut journey = Vec::with_capacity(n);
    let lag = config.congestion_lag as usize;
    let mut latent = Vec::with_capacity(n + lag);
    let mut d = 0.0;
    for _ in 0..n + lag {
        d = config.congestion_persistence * d + noise * config.congestion_sd * rng.normal();
        latent.push(d);
    }
    let mut prev_true = config.seasonal(start - step).max(0.0);
    for i in 0..n {
        let t = start + step * i as i32;
        let true_flow = (config.seasonal(t) * (1.0 + latent[i])).max(0.0);
        let f = (true_flow + noise * config.flow_noise_sd * rng.normal()).max(0.0);
        let ratio = prev_true / config.capacity;
        let slowdown = 1.0 - config.congestion_speed_factor * latent[i + lag];
        let v = (config.free_flow_speed * (1.0 - 0.5 * ratio * ratio) * slowdown
            + noise * config.speed_noise_sd * rng.normal())
        .max(1.0);
        let j = 3600.0 * config.link_km / v + noise * config.journey_noise_sd * rng.normal();
        timestamps.push(t);
        flow.push(f);
        speed.push(v);
        journey.push(j);
        prev_true = true_flow;
    }
    Dataset::new(
        timestamps,
        config.interval_minutes,
        vec![FLOW.into(), SPEED.into(), JOURNEY_TIME.into()],
        vec![flow, speed, journey],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        cov / (va * vb).sqrt()
    }

    fn noiseless(days: u32) -> Dataset {
        synth(&SynthConfig {
            days,
            noise: 0.0,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn noiseless_flow_is_weekly_periodic() {
        let d = noiseless(21);
        let week = 7 * 96;
        let f = d.target();
        assert!((0..f.len() - week).all(|t| f[t] == f[t + week]));
    }

    #[test]
    fn modalities_are_negatively_coupled() {
        let d = noiseless(7);
        let f = d.modality("flow").unwrap();
        let s = d.modality("speed").unwrap();
        let j = d.modality("journey_time").unwrap();
        assert!(pearson(f, s) < 0.0);
        assert!(pearson(s, j) < 0.0);
    }

    #[test]
    fn record_count_and_determinism() {
        let c = SynthConfig {
            days: 14,
            seed: 5,
            ..SynthConfig::default()
        };
        let a = synth(&c).unwrap();
        assert_eq!(a.len(), 14 * 96);
        assert_eq!(a, synth(&c).unwrap());
        assert_ne!(a, synth(&SynthConfig { seed: 6, ..c }).unwrap());
    }

    #[test]
    fn weekday_peaks_exceed_weekend_peaks() {
        let d = noiseless(7);
        let f = d.target();
        // starts on a Tuesday: days 4 and 5 are the weekend
        let peak = |day: usize| f[day * 96..(day + 1) * 96].iter().cloned().fold(f64::MIN, f64::max);
        assert!(peak(0) > peak(4));
        assert_eq!(peak(4), peak(5));
    }

    #[test]
    fn short_duration_is_rejected() {
        assert!(synth(&SynthConfig {
            days: 1,
            ..SynthConfig::default()
        })
        .is_err());
    }
}
