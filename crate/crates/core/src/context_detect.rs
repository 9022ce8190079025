//! Context-shift detection from auto-encoder reconstruction loss over daily
//! renewable-generation windows.
//!
//! Each day is scored by the current auto-encoder. The first day always opens
//! a context. Afterwards a day opens a new context when its loss exceeds
//! `trigger_ratio` times the mean of the last `rolling` recorded losses and no
//! detection happened in the previous `refractory` days. On every detection
//! the loss list is cleared and the auto-encoder is retrained on the windows
//! of the new context seen so far.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy_env::{Dataset, HOURS};
use crate::error::{Error, Result};
use crate::numcore::{Activation, AdamState, LayerShape, MlpParams};

/// Shift days detected on the 2014 London household year.
pub const LONDON_SHIFT_DAYS: [u32; 12] = [1, 28, 42, 56, 70, 84, 112, 161, 203, 231, 266, 357];

/// Encoder widths; the decoder mirrors them.
pub const ENCODER_SIZES: [usize; 4] = [24, 64, 32, 16];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayWindow {
    pub day: u32,
    /// Hourly renewable output scaled to `[0, 1]` over the dataset.
    pub x: Vec<f64>,
}

impl DayWindow {
    pub fn new(day: u32, x: Vec<f64>) -> Result<Self> {
        if x.len() != HOURS as usize {
            return Err(Error::shape("day window", HOURS as usize, x.len()));
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input(format!("window for day {day} has values outside [0, 1]")));
        }
        Ok(Self { day, x })
    }
}

/// One window per day of the dataset.
pub fn windows_from_dataset(data: &Dataset) -> Result<Vec<DayWindow>> {
    data.days()
        .map(|d| DayWindow::new(d, data.scaled_renewable_day(d)?))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectConfig {
    pub encoder: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    /// Number of most recent losses averaged into the threshold.
    pub rolling: usize,
    /// Days after a detection during which no new detection fires.
    pub refractory: u32,
    /// A day triggers when its loss exceeds this multiple of the threshold.
    pub trigger_ratio: f64,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            encoder: ENCODER_SIZES.to_vec(),
            lr: 1e-3,
            epochs: 500,
            rolling: 7,
            refractory: 7,
            trigger_ratio: 3.0,
            seed: 0,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder.len() < 2 || self.encoder[0] != HOURS as usize {
            return Err(Error::Input(format!(
                "encoder must start at {HOURS} inputs and have a bottleneck"
            )));
        }
        if self.lr <= 0.0 || self.rolling == 0 || self.trigger_ratio <= 0.0 {
            return Err(Error::Input("lr, rolling and trigger_ratio must be positive".into()));
        }
        Ok(())
    }

    /// Full auto-encoder layer sizes, e.g. `[24, 64, 32, 16, 32, 64, 24]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = self.encoder.clone();
        sizes.extend(self.encoder.iter().rev().skip(1));
        sizes
    }
}

/// Fresh sigmoid auto-encoder.
pub fn new_autoencoder(cfg: &DetectConfig) -> Result<MlpParams> {
    cfg.validate()?;
    let shape = LayerShape::new(cfg.layer_sizes(), Activation::Sigmoid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(MlpParams::init(shape, &mut rng))
}

/// Mean squared reconstruction error of one window.
pub fn recon_loss(ae: &MlpParams, win: &DayWindow) -> Result<f64> {
    let y = ae.forward(&win.x)?;
    if y.len() != win.x.len() {
        return Err(Error::shape("reconstruction", win.x.len(), y.len()));
    }
    Ok(y.iter().zip(&win.x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

/// Warm-started full-batch Adam training on `windows` with a fresh optimizer.
pub fn retrain(ae: &MlpParams, windows: &[DayWindow], cfg: &DetectConfig) -> Result<MlpParams> {
    if windows.is_empty() {
        return Err(Error::Input("retrain needs at least one window".into()));
    }
    let mut ae = ae.clone();
    let mut adam = AdamState::new(ae.len(), cfg.lr);
    let n = windows.len() as f64;
    let mut grad = vec![0.0; ae.len()];
    for _ in 0..cfg.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for w in windows {
            let trace = ae.forward_trace(&w.x)?;
            let out = trace.output();
            let k = out.len() as f64;
            let g: Vec<f64> = out.iter().zip(&w.x).map(|(y, x)| 2.0 * (y - x) / k).collect();
            ae.accumulate_grad(&trace, &g, 1.0 / n, &mut grad)?;
        }
        adam.step(ae.theta_mut(), &grad)?;
    }
    Ok(ae)
}

/// Per-day detector trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub day: u32,
    /// Loss of the day under the model in place before any retraining.
    pub loss: f64,
    /// Loss level above which the day triggers outside the refractory
    /// period; `-inf` on the first day, which always opens a context.
    pub threshold: f64,
    pub triggered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub ae: MlpParams,
    /// Current threshold; `-inf` before the first window.
    pub delta: f64,
    pub loss_list: Vec<f64>,
    /// Index (into the window slice) where the current context started.
    pub context_start: usize,
    pub contexts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Days that open a context, strictly increasing, starting with the first day.
    pub shifts: Vec<u32>,
    pub trace: Vec<LossRow>,
    pub state: DetectorState,
}

fn rolling_mean(losses: &[f64], k: usize) -> f64 {
    if losses.is_empty() {
        return f64::INFINITY;
    }
    let tail = &losses[losses.len().saturating_sub(k)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

pub fn detect(windows: &[DayWindow], cfg: &DetectConfig) -> Result<Detection> {
    if windows.len() < 2 {
        return Err(Error::Input(format!(
            "detection needs at least 2 windows, got {}",
            windows.len()
        )));
    }
    if windows.windows(2).any(|w| w[1].day <= w[0].day) {
        return Err(Error::Input("windows must be in increasing day order".into()));
    }
    let mut st = DetectorState {
        ae: new_autoencoder(cfg)?,
        delta: f64::NEG_INFINITY,
        loss_list: Vec::new(),
        context_start: 0,
        contexts: Vec::new(),
    };
    let mut last_trigger: Option<u32> = None;
    let mut trace = Vec::with_capacity(windows.len());
    for (i, win) in windows.iter().enumerate() {
        let loss = recon_loss(&st.ae, win)?;
        let in_refractory = last_trigger.is_some_and(|d| win.day < d + cfg.refractory);
        let triggered = if st.delta == f64::NEG_INFINITY {
            true
        } else {
            !in_refractory && loss > cfg.trigger_ratio * st.delta
        };
        trace.push(LossRow {
            day: win.day,
            loss,
            threshold: cfg.trigger_ratio * st.delta,
            triggered,
        });
        if triggered {
            st.contexts.push(win.day);
            st.loss_list.clear();
            st.context_start = i;
            st.ae = retrain(&st.ae, &windows[st.context_start..=i], cfg)?;
            last_trigger = Some(win.day);
            st.loss_list.push(recon_loss(&st.ae, win)?);
        } else {
            st.loss_list.push(loss);
        }
        st.delta = rolling_mean(&st.loss_list, cfg.rolling);
    }
    Ok(Detection {
        shifts: st.contexts.clone(),
        trace,
        state: st,
    })
}

/// Contiguous span of days sharing one detected regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSegment {
    pub id: usize,
    pub start_day: u32,
    pub end_day: u32,
}

/// Splits `first_day..=last_day` at the shift days.
pub fn segments(shifts: &[u32], first_day: u32, last_day: u32) -> Result<Vec<ContextSegment>> {
    if shifts.first() != Some(&first_day) {
        return Err(Error::Input(format!("context list must start at day {first_day}")));
    }
    if shifts.windows(2).any(|w| w[1] <= w[0]) || *shifts.last().unwrap() > last_day {
        return Err(Error::Input("shift days must increase and lie inside the data".into()));
    }
    Ok(shifts
        .iter()
        .enumerate()
        .map(|(id, &start)| ContextSegment {
            id,
            start_day: start,
            end_day: shifts.get(id + 1).map_or(last_day, |next| next - 1),
        })
        .collect())
}

/// Segment containing `day`.
pub fn context_of(segs: &[ContextSegment], day: u32) -> Option<&ContextSegment> {
    segs.iter().find(|s| s.start_day <= day && day <= s.end_day)
}

pub fn contexts_csv(segs: &[ContextSegment]) -> String {
    let mut out = String::from("context_id,start_day,end_day\n");
    for s in segs {
        let _ = writeln!(out, "{},{},{}", s.id, s.start_day, s.end_day);
    }
    out
}

pub fn losses_csv(trace: &[LossRow]) -> String {
    let mut out = String::from("day,loss,threshold\n");
    for r in trace {
        let _ = writeln!(out, "{},{},{}", r.day, r.loss, r.threshold);
    }
    out
}

/// Reads the shift days back from a `contexts.csv` body.
pub fn parse_contexts_csv(text: &str) -> Result<Vec<ContextSegment>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            msg: e.to_string(),
        })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["context_id", "start_day", "end_day"] {
        return Err(Error::Schema {
            row: 0,
            msg: format!("unexpected header {headers:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: i + 1,
            msg: e.to_string(),
        })?;
        let field = |k: usize| -> Result<u64> {
            rec[k].trim().parse().map_err(|_| Error::Parse {
                row: i + 1,
                msg: format!("bad integer `{}`", &rec[k]),
            })
        };
        out.push(ContextSegment {
            id: field(0)? as usize,
            start_day: field(1)? as u32,
            end_day: field(2)? as u32,
        });
    }
    Ok(out)
}

/// Size of the intersection over size of the union.
pub fn jaccard(a: &[u32], b: &[u32]) -> f64 {
    use std::collections::BTreeSet;
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy_env::{synth_year, Regime};

    fn quick() -> DetectConfig {
        DetectConfig {
            epochs: 300,
            ..DetectConfig::default()
        }
    }

    fn flat_windows(n: u32, level: f64) -> Vec<DayWindow> {
        (1..=n)
            .map(|d| {
                let x = (0..24).map(|h| level * crate::energy_env::solar_profile(h)).collect();
                DayWindow::new(d, x).unwrap()
            })
            .collect()
    }

    #[test]
    fn layer_sizes_mirror_encoder() {
        assert_eq!(DetectConfig::default().layer_sizes(), vec![24, 64, 32, 16, 32, 64, 24]);
    }

    #[test]
    fn zero_window_zero_loss_through_zero_output() {
        // sigmoid output is 0.5 for a zero net, so compare against a window of halves
        let ae = MlpParams::zeros(LayerShape::new(vec![24, 4, 24], Activation::Sigmoid).unwrap());
        let w = DayWindow::new(1, vec![0.5; 24]).unwrap();
        assert_eq!(recon_loss(&ae, &w).unwrap(), 0.0);
    }

    #[test]
    fn retrain_reduces_own_loss_and_is_deterministic() {
        let cfg = quick();
        let ae = new_autoencoder(&cfg).unwrap();
        let w = flat_windows(1, 0.8);
        let before = recon_loss(&ae, &w[0]).unwrap();
        let a = retrain(&ae, &w, &cfg).unwrap();
        let b = retrain(&ae, &w, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(recon_loss(&a, &w[0]).unwrap() < before);
    }

    #[test]
    fn overfit_window_has_tiny_loss() {
        let cfg = DetectConfig {
            epochs: 3000,
            ..DetectConfig::default()
        };
        let w = flat_windows(1, 0.8);
        let ae = retrain(&new_autoencoder(&cfg).unwrap(), &w, &cfg).unwrap();
        assert!(recon_loss(&ae, &w[0]).unwrap() < 1e-3);
    }

    #[test]
    fn shifted_window_scores_higher() {
        let cfg = quick();
        let w = flat_windows(2, 0.4);
        let ae = retrain(&new_autoencoder(&cfg).unwrap(), &w[..1], &cfg).unwrap();
        let shifted = flat_windows(1, 0.9);
        assert!(recon_loss(&ae, &shifted[0]).unwrap() > recon_loss(&ae, &w[1]).unwrap());
    }

    #[test]
    fn stationary_year_has_one_context() {
        let det = detect(&flat_windows(60, 0.6), &quick()).unwrap();
        assert_eq!(det.shifts, vec![1]);
        assert!(det.trace[0].triggered && det.trace[0].threshold == f64::NEG_INFINITY);
    }

    #[test]
    fn detects_synthetic_regimes() {
        let regimes = [
            Regime {
                start_day: 1,
                solar_scale: 1.0,
                noise: 0.02,
            },
            Regime {
                start_day: 120,
                solar_scale: 2.0,
                noise: 0.02,
            },
            Regime {
                start_day: 240,
                solar_scale: 0.5,
                noise: 0.02,
            },
        ];
        let data = synth_year(1, &regimes).unwrap();
        let det = detect(&windows_from_dataset(&data).unwrap(), &quick()).unwrap();
        assert_eq!(det.shifts[0], 1);
        for truth in [120, 240] {
            assert!(det.shifts.iter().any(|&d| d.abs_diff(truth) <= 2), "{:?}", det.shifts);
        }
        assert!(det.shifts.len() <= 4, "{:?}", det.shifts);
    }

    #[test]
    fn detect_needs_two_windows() {
        assert!(detect(&flat_windows(1, 0.5), &quick()).is_err());
    }

    #[test]
    fn segments_partition_the_year() {
        let segs = segments(&[1, 28, 42], 1, 365).unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!((segs[0].start_day, segs[0].end_day), (1, 27));
        assert_eq!((segs[2].start_day, segs[2].end_day), (42, 365));
        assert_eq!(context_of(&segs, 30).unwrap().id, 1);
        assert!(segments(&[2, 5], 1, 365).is_err());
        let back = parse_contexts_csv(&contexts_csv(&segs)).unwrap();
        assert_eq!(back, segs);
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_eq!(jaccard(&[1, 2], &[2, 3]), 1.0 / 3.0);
        assert_eq!(jaccard(&[], &[]), 1.0);
    }
}
