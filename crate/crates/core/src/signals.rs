//! Parametric excitation signals for the driving temperature `T_in`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Default pulse baseline: the initial product temperature.
pub const DEFAULT_BASELINE_K: f64 = 279.15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalShape {
    /// Linear ramp from baseline to peak over `t_up_s`, then hold.
    ConstantWithRamp { t_up_s: f64 },
    TrapezoidPulse {
        t_up_s: f64,
        t_const_s: f64,
        t_down_s: f64,
    },
    /// Linear rise over each period followed by an instant reset; the
    /// symmetric variant falls back linearly over the second half instead.
    Sawtooth { t_period_s: f64, symmetric: bool },
    HalfSinePulse { t_pulse_s: f64 },
    RectangularPulse { t_pulse_s: f64 },
    /// `n_pulses` half-sine pulses separated by `t_dead_s` at baseline.
    PulseTrain {
        t_pulse_s: f64,
        t_dead_s: f64,
        n_pulses: u32,
    },
}

/// Parametric time signal in K.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SignalSpec", into = "SignalSpec")]
pub struct ExcitationSignal {
    pub baseline_k: f64,
    pub peak_k: f64,
    pub shape: SignalShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SignalKind {
    ConstantWithRamp,
    TrapezoidPulse,
    Sawtooth,
    HalfSinePulse,
    RectangularPulse,
    PulseTrain,
}

/// Flat on-disk form of a signal.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignalSpec {
    kind: SignalKind,
    #[serde(default = "default_baseline")]
    baseline_k: f64,
    peak_k: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_up_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_const_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_down_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_period_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    symmetric: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_pulse_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_dead_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_pulses: Option<u32>,
}

fn default_baseline() -> f64 {
    DEFAULT_BASELINE_K
}

impl TryFrom<SignalSpec> for ExcitationSignal {
    type Error = ConfigError;

    fn try_from(s: SignalSpec) -> Result<Self, ConfigError> {
        fn need<T>(v: Option<T>, key: &str) -> Result<T, ConfigError> {
            v.ok_or_else(|| ConfigError::invalid(format!("signal.{key}"), "required for this signal kind"))
        }
        let shape = match s.kind {
            SignalKind::ConstantWithRamp => SignalShape::ConstantWithRamp {
                t_up_s: s.t_up_s.unwrap_or(0.0),
            },
            SignalKind::TrapezoidPulse => SignalShape::TrapezoidPulse {
                t_up_s: need(s.t_up_s, "t_up_s")?,
                t_const_s: need(s.t_const_s, "t_const_s")?,
                t_down_s: need(s.t_down_s, "t_down_s")?,
            },
            SignalKind::Sawtooth => SignalShape::Sawtooth {
                t_period_s: need(s.t_period_s, "t_period_s")?,
                symmetric: s.symmetric.unwrap_or(false),
            },
            SignalKind::HalfSinePulse => SignalShape::HalfSinePulse {
                t_pulse_s: need(s.t_pulse_s, "t_pulse_s")?,
            },
            SignalKind::RectangularPulse => SignalShape::RectangularPulse {
                t_pulse_s: need(s.t_pulse_s, "t_pulse_s")?,
            },
            SignalKind::PulseTrain => SignalShape::PulseTrain {
                t_pulse_s: need(s.t_pulse_s, "t_pulse_s")?,
                t_dead_s: need(s.t_dead_s, "t_dead_s")?,
                n_pulses: need(s.n_pulses, "n_pulses")?,
            },
        };
        let signal = ExcitationSignal::new(s.baseline_k, s.peak_k, shape);
        signal.validate()?;
        Ok(signal)
    }
}

impl From<ExcitationSignal> for SignalSpec {
    fn from(e: ExcitationSignal) -> Self {
        let mut s = SignalSpec {
            kind: SignalKind::ConstantWithRamp,
            baseline_k: e.baseline_k,
            peak_k: e.peak_k,
            t_up_s: None,
            t_const_s: None,
            t_down_s: None,
            t_period_s: None,
            symmetric: None,
            t_pulse_s: None,
            t_dead_s: None,
            n_pulses: None,
        };
        match e.shape {
            SignalShape::ConstantWithRamp { t_up_s } => s.t_up_s = Some(t_up_s),
            SignalShape::TrapezoidPulse {
                t_up_s,
                t_const_s,
                t_down_s,
            } => {
                s.kind = SignalKind::TrapezoidPulse;
                s.t_up_s = Some(t_up_s);
                s.t_const_s = Some(t_const_s);
                s.t_down_s = Some(t_down_s);
            }
            SignalShape::Sawtooth {
                t_period_s,
                symmetric,
            } => {
                s.kind = SignalKind::Sawtooth;
                s.t_period_s = Some(t_period_s);
                s.symmetric = Some(symmetric);
            }
            SignalShape::HalfSinePulse { t_pulse_s } => {
                s.kind = SignalKind::HalfSinePulse;
                s.t_pulse_s = Some(t_pulse_s);
            }
            SignalShape::RectangularPulse { t_pulse_s } => {
                s.kind = SignalKind::RectangularPulse;
                s.t_pulse_s = Some(t_pulse_s);
            }
            SignalShape::PulseTrain {
                t_pulse_s,
                t_dead_s,
                n_pulses,
            } => {
                s.kind = SignalKind::PulseTrain;
                s.t_pulse_s = Some(t_pulse_s);
                s.t_dead_s = Some(t_dead_s);
                s.n_pulses = Some(n_pulses);
            }
        }
        s
    }
}

impl ExcitationSignal {
    pub fn constant(value: f64) -> Self {
        ExcitationSignal {
            baseline_k: value,
            peak_k: value,
            shape: SignalShape::ConstantWithRamp { t_up_s: 0.0 },
        }
    }

    pub fn new(baseline_k: f64, peak_k: f64, shape: SignalShape) -> Self {
        ExcitationSignal {
            baseline_k,
            peak_k,
            shape,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let durations: Vec<(&str, f64)> = match self.shape {
            SignalShape::ConstantWithRamp { t_up_s } => vec![("t_up_s", t_up_s)],
            SignalShape::TrapezoidPulse {
                t_up_s,
                t_const_s,
                t_down_s,
            } => vec![("t_up_s", t_up_s), ("t_const_s", t_const_s), ("t_down_s", t_down_s)],
            SignalShape::Sawtooth { t_period_s, .. } => vec![("t_period_s", t_period_s)],
            SignalShape::HalfSinePulse { t_pulse_s } | SignalShape::RectangularPulse { t_pulse_s } => {
                vec![("t_pulse_s", t_pulse_s)]
            }
            SignalShape::PulseTrain {
                t_pulse_s, t_dead_s, ..
            } => vec![("t_pulse_s", t_pulse_s), ("t_dead_s", t_dead_s)],
        };
        for (key, d) in durations {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(ConfigError::invalid(format!("signal.{key}"), "durations must be >= 0"));
            }
        }
        if let SignalShape::Sawtooth { t_period_s, .. } = self.shape {
            if t_period_s <= 0.0 {
                return Err(ConfigError::invalid("signal.t_period_s", "period must be positive"));
            }
        }
        if !(self.baseline_k.is_finite() && self.peak_k.is_finite()) {
            return Err(ConfigError::invalid("signal.peak_k", "values must be finite"));
        }
        Ok(())
    }

    /// Value at time `t` (s); negative times evaluate to the value at 0.
    pub fn evaluate(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        self.baseline_k + (self.peak_k - self.baseline_k) * self.unit_shape(t)
    }

    /// Shape normalised to [0, 1].
    fn unit_shape(&self, t: f64) -> f64 {
        match self.shape {
            SignalShape::ConstantWithRamp { t_up_s } => {
                if t >= t_up_s {
                    1.0
                } else {
                    t / t_up_s
                }
            }
            SignalShape::TrapezoidPulse {
                t_up_s,
                t_const_s,
                t_down_s,
            } => {
                if t < t_up_s {
                    t / t_up_s
                } else if t <= t_up_s + t_const_s {
                    1.0
                } else if t < t_up_s + t_const_s + t_down_s {
                    1.0 - (t - t_up_s - t_const_s) / t_down_s
                } else {
                    0.0
                }
            }
            SignalShape::Sawtooth {
                t_period_s,
                symmetric,
            } => {
                let phase = (t / t_period_s).fract();
                if symmetric {
                    1.0 - (2.0 * phase - 1.0).abs()
                } else {
                    phase
                }
            }
            SignalShape::HalfSinePulse { t_pulse_s } => half_sine(t, t_pulse_s),
            SignalShape::RectangularPulse { t_pulse_s } => {
                if t < t_pulse_s {
                    1.0
                } else {
                    0.0
                }
            }
            SignalShape::PulseTrain {
                t_pulse_s,
                t_dead_s,
                n_pulses,
            } => {
                let period = t_pulse_s + t_dead_s;
                if period <= 0.0 {
                    return 0.0;
                }
                let index = (t / period).floor();
                if index >= n_pulses as f64 {
                    0.0
                } else {
                    half_sine(t - index * period, t_pulse_s)
                }
            }
        }
    }

    /// Values at `t = 0, dt, ..., duration`.
    pub fn sample(&self, dt: f64, duration: f64) -> Vec<(f64, f64)> {
        assert!(dt > 0.0, "sample step must be positive");
        let n = (duration / dt + 1e-9).floor() as usize;
        (0..=n)
            .map(|k| {
                let t = k as f64 * dt;
                (t, self.evaluate(t))
            })
            .collect()
    }
}

fn half_sine(t: f64, t_pulse: f64) -> f64 {
    if t_pulse > 0.0 && t < t_pulse {
        (PI * t / t_pulse).sin()
    } else {
        0.0
    }
}

/// Named excitation from the learning/evaluation catalogue.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogSignal {
    pub name: &'static str,
    pub signal: ExcitationSignal,
}

/// The five learning-phase excitations.
pub fn learning_signals(baseline: f64) -> Vec<CatalogSignal> {
    vec![
        CatalogSignal {
            name: "step_443_ramp10",
            signal: ExcitationSignal::new(baseline, 443.15, SignalShape::ConstantWithRamp { t_up_s: 10.0 }),
        },
        CatalogSignal {
            name: "step_473_ramp10",
            signal: ExcitationSignal::new(baseline, 473.15, SignalShape::ConstantWithRamp { t_up_s: 10.0 }),
        },
        CatalogSignal {
            name: "trapezoid_403",
            signal: ExcitationSignal::new(
                baseline,
                403.15,
                SignalShape::TrapezoidPulse {
                    t_up_s: 200.0,
                    t_const_s: 300.0,
                    t_down_s: 100.0,
                },
            ),
        },
        CatalogSignal {
            name: "sawtooth_443",
            signal: ExcitationSignal::new(
                baseline,
                443.15,
                SignalShape::Sawtooth {
                    t_period_s: 500.0,
                    symmetric: false,
                },
            ),
        },
        CatalogSignal {
            name: "half_sine_498",
            signal: ExcitationSignal::new(baseline, 498.15, SignalShape::HalfSinePulse { t_pulse_s: 500.0 }),
        },
    ]
}

/// The four evaluation-phase excitations.
pub fn evaluation_signals(baseline: f64) -> Vec<CatalogSignal> {
    vec![
        CatalogSignal {
            name: "rect_443_60",
            signal: ExcitationSignal::new(baseline, 443.15, SignalShape::RectangularPulse { t_pulse_s: 60.0 }),
        },
        CatalogSignal {
            name: "half_sine_443_200",
            signal: ExcitationSignal::new(baseline, 443.15, SignalShape::HalfSinePulse { t_pulse_s: 200.0 }),
        },
        CatalogSignal {
            name: "step_443",
            signal: ExcitationSignal::new(baseline, 443.15, SignalShape::ConstantWithRamp { t_up_s: 0.0 }),
        },
        CatalogSignal {
            name: "pulse_train_473",
            signal: ExcitationSignal::new(
                baseline,
                473.15,
                SignalShape::PulseTrain {
                    t_pulse_s: 50.0,
                    t_dead_s: 450.0,
                    n_pulses: 3,
                },
            ),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    const B: f64 = DEFAULT_BASELINE_K;

    #[test]
    fn rectangular_pulse() {
        let s = ExcitationSignal::new(B, 443.15, SignalShape::RectangularPulse { t_pulse_s: 60.0 });
        assert_eq!(s.evaluate(30.0), 443.15);
        assert_eq!(s.evaluate(61.0), B);
    }

    #[test]
    fn half_sine_apex_and_sawtooth_midpoint() {
        let s = ExcitationSignal::new(B, 400.0, SignalShape::HalfSinePulse { t_pulse_s: 200.0 });
        assert!((s.evaluate(100.0) - 400.0).abs() < 1e-12);
        assert_eq!(s.evaluate(250.0), B);
        let saw = ExcitationSignal::new(
            B,
            443.15,
            SignalShape::Sawtooth {
                t_period_s: 500.0,
                symmetric: false,
            },
        );
        assert!((saw.evaluate(250.0) - 0.5 * (B + 443.15)).abs() < 1e-12);
        assert_eq!(saw.evaluate(500.0), B);
        let tri = ExcitationSignal::new(
            0.0,
            1.0,
            SignalShape::Sawtooth {
                t_period_s: 100.0,
                symmetric: true,
            },
        );
        assert!((tri.evaluate(50.0) - 1.0).abs() < 1e-12);
        assert!((tri.evaluate(75.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ramp_reaches_peak() {
        let s = ExcitationSignal::new(B, 443.15, SignalShape::ConstantWithRamp { t_up_s: 10.0 });
        let samples = s.sample(1.0, 20.0);
        assert_eq!(samples.len(), 21);
        assert_eq!(samples[10], (10.0, 443.15));
        assert!((samples[5].1 - 0.5 * (B + 443.15)).abs() < 1e-12);
        assert_eq!(s.sample(1.0, 0.0), vec![(0.0, B)]);
        let step = ExcitationSignal::new(B, 443.15, SignalShape::ConstantWithRamp { t_up_s: 0.0 });
        assert_eq!(step.evaluate(0.0), 443.15);
    }

    #[test]
    fn trapezoid_phases() {
        let s = ExcitationSignal::new(
            0.0,
            1.0,
            SignalShape::TrapezoidPulse {
                t_up_s: 200.0,
                t_const_s: 300.0,
                t_down_s: 100.0,
            },
        );
        assert!((s.evaluate(100.0) - 0.5).abs() < 1e-12);
        assert_eq!(s.evaluate(350.0), 1.0);
        assert!((s.evaluate(550.0) - 0.5).abs() < 1e-12);
        assert_eq!(s.evaluate(700.0), 0.0);
    }

    #[test]
    fn pulse_train_has_three_windows() {
        let s = ExcitationSignal::new(
            B,
            473.15,
            SignalShape::PulseTrain {
                t_pulse_s: 50.0,
                t_dead_s: 450.0,
                n_pulses: 3,
            },
        );
        let samples = s.sample(1.0, 2000.0);
        let mut windows = 0;
        let mut active = false;
        for &(_, v) in &samples {
            let now = v > B;
            if now && !active {
                windows += 1;
            }
            active = now;
        }
        assert_eq!(windows, 3);
        assert!((s.evaluate(1025.0) - 473.15).abs() < 1e-9);
        assert_eq!(s.evaluate(1525.0), B);
    }

    #[test]
    fn rejects_negative_durations() {
        let s = ExcitationSignal::new(B, 400.0, SignalShape::HalfSinePulse { t_pulse_s: -1.0 });
        assert!(s.validate().is_err());
    }

    #[test]
    fn toml_shape_tagging() {
        let s: ExcitationSignal =
            toml::from_str("kind = \"rectangular_pulse\"\npeak_k = 443.15\nt_pulse_s = 60.0\n").unwrap();
        assert_eq!(s.baseline_k, B);
        assert_eq!(s.shape, SignalShape::RectangularPulse { t_pulse_s: 60.0 });
    }
}
