//! Synthetic bearing vibration records.
//!
//! Healthy records are a shaft-rate sinusoid plus noise. Faulty records add
//! a train of exponentially decaying bursts at a resonant carrier, repeating
//! at a class-specific multiple of the shaft rate.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::Signal;
use crate::seed::rng_for;

/// Carrier frequency of fault bursts as a fraction of the sampling rate.
pub const CARRIER_FRACTION: f64 = 0.15;
/// Burst decay time constant in seconds.
pub const BURST_DECAY_S: f64 = 1.0e-3;
/// Burst peak amplitude relative to the shaft component.
pub const BURST_AMPLITUDE: f64 = 4.0;
pub const SHAFT_AMPLITUDE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultClass {
    Normal,
    InnerRace,
    Ball,
    OuterRace,
    Cage,
}

impl FaultClass {
    pub const ALL: [FaultClass; 5] = [Self::Normal, Self::InnerRace, Self::Ball, Self::OuterRace, Self::Cage];

    pub fn token(self) -> &'static str {
        match self {
            Self::Normal => "NM",
            Self::InnerRace => "IR",
            Self::Ball => "B",
            Self::OuterRace => "OR",
            Self::Cage => "CA",
        }
    }

    /// Burst repetition rate as a multiple of shaft frequency; `None` for
    /// the healthy class.
    pub fn characteristic_multiple(self) -> Option<f64> {
        match self {
            Self::Normal => None,
            Self::InnerRace => Some(5.4),
            Self::Ball => Some(4.7),
            Self::OuterRace => Some(3.6),
            Self::Cage => Some(0.4),
        }
    }
}

impl fmt::Display for FaultClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for FaultClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.token().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown class token '{s}' (expected NM, IR, B, OR or CA)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub class: FaultClass,
    pub sampling_rate: f64,
    pub shaft_hz: f64,
    pub duration: f64,
    /// Signal-to-noise ratio in dB on the clean-signal RMS; `f64::INFINITY`
    /// disables noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(class: FaultClass, seed: u64) -> Self {
        Self { class, sampling_rate: 12_000.0, shaft_hz: 75.0, duration: 10.5, snr_db: 20.0, seed }
    }

    pub fn len(&self) -> usize {
        (self.duration * self.sampling_rate).round() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn carrier_hz(&self) -> f64 {
        CARRIER_FRACTION * self.sampling_rate
    }

    pub fn characteristic_hz(&self) -> Option<f64> {
        self.class.characteristic_multiple().map(|k| k * self.shaft_hz)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.sampling_rate > 0.0 && self.sampling_rate.is_finite()) {
            return bad(format!("sampling rate must be positive, got {}", self.sampling_rate));
        }
        if !(self.shaft_hz > 0.0 && self.shaft_hz.is_finite()) {
            return bad(format!("shaft frequency must be positive, got {}", self.shaft_hz));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) || self.is_empty() {
            return bad(format!("duration {} s yields no samples", self.duration));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return bad(format!("invalid SNR {}", self.snr_db));
        }
        let highest = self.characteristic_hz().map_or(self.shaft_hz, |f| f.max(self.shaft_hz).max(self.carrier_hz()));
        if self.sampling_rate <= 2.0 * highest {
            return bad(format!(
                "sampling rate {} Hz does not exceed twice the highest generated frequency {highest} Hz",
                self.sampling_rate
            ));
        }
        Ok(())
    }

    /// Sample indices at which fault bursts start; empty for the healthy class.
    pub fn impulse_samples(&self) -> Vec<usize> {
        let Some(rate) = self.characteristic_hz() else {
            return Vec::new();
        };
        let period = self.sampling_rate / rate;
        let offset = rng_for(self.seed, "synth/impulse-offset").random_range(0.0..period);
        (0..).map(|k| (offset + k as f64 * period).round() as usize).take_while(|&n| n < self.len()).collect()
    }

    /// The noiseless waveform.
    pub fn clean(&self) -> Vec<f64> {
        let fs = self.sampling_rate;
        let phase = rng_for(self.seed, "synth/shaft-phase").random_range(0.0..2.0 * PI);
        let mut x: Vec<f64> = (0..self.len())
            .map(|n| SHAFT_AMPLITUDE * (2.0 * PI * self.shaft_hz * n as f64 / fs + phase).sin())
            .collect();

        // Bursts are truncated once they fall below 1e-6 of their peak.
        let tail = (BURST_DECAY_S * fs * 1e6f64.ln()).ceil() as usize;
        let omega = 2.0 * PI * self.carrier_hz() / fs;
        let decay = 1.0 / (BURST_DECAY_S * fs);
        for start in self.impulse_samples() {
            for (i, v) in x[start..].iter_mut().take(tail).enumerate() {
                let t = i as f64;
                *v += BURST_AMPLITUDE * (-t * decay).exp() * (omega * t).sin();
            }
        }
        x
    }
}

pub fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Noise added to `clean` for the requested SNR.
pub fn noise_for(spec: &SynthSpec, clean: &[f64]) -> Vec<f64> {
    if spec.snr_db == f64::INFINITY {
        return vec![0.0; clean.len()];
    }
    let sigma = rms(clean) / 10f64.powf(spec.snr_db / 20.0);
    let normal = Normal::new(0.0, sigma).expect("finite non-negative sigma");
    let mut rng = rng_for(spec.seed, "synth/noise");
    (0..clean.len()).map(|_| normal.sample(&mut rng)).collect()
}

/// Generates one labeled record; the label is the class's position in
/// [`FaultClass::ALL`].
pub fn synth_bearing_signal(spec: &SynthSpec) -> Result<Signal> {
    spec.validate()?;
    let clean = spec.clean();
    let noise = noise_for(spec, &clean);
    let samples = clean.iter().zip(&noise).map(|(c, n)| c + n).collect();
    let label = FaultClass::ALL.iter().position(|&c| c == spec.class).map(|i| i as u32);
    Ok(Signal::new(samples, spec.sampling_rate, label, format!("synth-{}-{:016x}", spec.class, spec.seed)))
}

/// `per_class` records for every listed class, labeled by position in
/// `classes`. Each record gets its own derived seed.
pub fn synth_dataset(classes: &[FaultClass], per_class: usize, template: &SynthSpec) -> Result<Vec<Signal>> {
    let mut out = Vec::with_capacity(classes.len() * per_class);
    for (label, &class) in classes.iter().enumerate() {
        for i in 0..per_class {
            let seed = crate::seed::derive_seed(template.seed, &format!("synth/{class}/{i}"));
            let spec = SynthSpec { class, seed, ..*template };
            let mut s = synth_bearing_signal(&spec)?;
            s.label = Some(label as u32);
            s.source_id = format!("{class}-{i:03}");
            out.push(s);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::magnitude_spectrum;

    #[test]
    fn tokens_round_trip() {
        for c in FaultClass::ALL {
            assert_eq!(c.token().parse::<FaultClass>().unwrap(), c);
        }
        assert!("XX".parse::<FaultClass>().is_err());
    }

    #[test]
    fn noiseless_normal_is_a_pure_shaft_tone() {
        // 1024 samples at 1024 Hz with a 16 Hz shaft puts the tone on bin 16.
        let spec = SynthSpec {
            sampling_rate: 1024.0,
            shaft_hz: 16.0,
            duration: 1.0,
            snr_db: f64::INFINITY,
            ..SynthSpec::new(FaultClass::Normal, 3)
        };
        let s = synth_bearing_signal(&spec).unwrap();
        let mag = magnitude_spectrum(&s.samples).unwrap();
        let peak = mag.iter().cloned().fold(0.0, f64::max);
        for (k, v) in mag.iter().enumerate() {
            if k == 16 {
                assert!((v - peak).abs() < 1e-9);
            } else {
                assert!(*v < 1e-9 * peak, "bin {k} = {v}");
            }
        }
    }

    #[test]
    fn same_seed_same_signal() {
        let spec = SynthSpec { duration: 0.5, ..SynthSpec::new(FaultClass::InnerRace, 11) };
        assert_eq!(synth_bearing_signal(&spec).unwrap(), synth_bearing_signal(&spec).unwrap());
        let other = SynthSpec { seed: 12, ..spec };
        assert_ne!(synth_bearing_signal(&spec).unwrap(), synth_bearing_signal(&other).unwrap());
    }

    #[test]
    fn outer_race_impulse_period() {
        let spec = SynthSpec { duration: 1.0, shaft_hz: 30.0, ..SynthSpec::new(FaultClass::OuterRace, 5) };
        let times = spec.impulse_samples();
        let period = spec.sampling_rate / (3.6 * spec.shaft_hz);
        assert!(times.len() > 50);
        for w in times.windows(2) {
            assert!(((w[1] - w[0]) as f64 - period).abs() <= 1.0);
        }
    }

    #[test]
    fn outer_race_energy_near_carrier() {
        let spec = SynthSpec { duration: 1.0, snr_db: f64::INFINITY, ..SynthSpec::new(FaultClass::OuterRace, 5) };
        let x = synth_bearing_signal(&spec).unwrap().samples;
        let mag = magnitude_spectrum(&x[..8192]).unwrap();
        let bin_hz = spec.sampling_rate / 8192.0;
        let carrier = spec.carrier_hz();
        let (mut band, mut total) = (0.0, 0.0);
        for (k, v) in mag.iter().enumerate() {
            let e = v * v;
            total += e;
            if (k as f64 * bin_hz - carrier).abs() < 0.5 * carrier {
                band += e;
            }
        }
        assert!(band > 0.5 * total, "band share {}", band / total);
    }

    #[test]
    fn realized_snr_matches_request() {
        for class in FaultClass::ALL {
            for snr in [0.0, 10.0, 20.0] {
                let spec = SynthSpec { duration: 2.0, snr_db: snr, ..SynthSpec::new(class, 21) };
                let clean = spec.clean();
                let noise = noise_for(&spec, &clean);
                let realized = 20.0 * (rms(&clean) / rms(&noise)).log10();
                assert!((realized - snr).abs() < 0.5, "{class} {snr}: {realized}");
            }
        }
    }

    #[test]
    fn invalid_specs() {
        let ok = SynthSpec::new(FaultClass::Ball, 1);
        assert!(ok.validate().is_ok());
        assert!(SynthSpec { sampling_rate: 0.0, ..ok }.validate().is_err());
        assert!(SynthSpec { duration: 0.0, ..ok }.validate().is_err());
        assert!(SynthSpec { shaft_hz: 2000.0, ..ok }.validate().is_err());
        assert!(SynthSpec { snr_db: f64::NAN, ..ok }.validate().is_err());
    }
}
