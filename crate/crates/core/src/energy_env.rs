//! Hourly appliance-scheduling environment with two objectives (negative
//! electricity cost, comfort), hourly data ingestion and a seeded synthetic
//! year generator with known regime shifts.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gpi_agent::{EnvStep, MoEnv};

pub const HOURS: u32 = 24;
pub const N_FEATURES: usize = 4;
/// Indices of the exogenous (uncontrollable) features: demand and renewable.
pub const EXOGENOUS_FEATURES: [usize; 2] = [0, 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourlyRecord {
    pub day: u32,
    pub hour: u32,
    pub background_demand_kw: f64,
    pub renewable_kw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BillScope {
    /// Bill the whole house: background plus appliance, net of renewable.
    #[default]
    Household,
    /// Bill only the appliance draw not covered by renewable surplus.
    Appliance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub appliance_kw: f64,
    pub task_hours: u32,
    /// Half-open hour interval `[start, end)`.
    pub comfort_window: (u32, u32),
    pub peak_rate: f64,
    pub offpeak_rate: f64,
    pub peak_window: (u32, u32),
    pub gamma: f64,
    pub episode_len: u32,
    pub bill_scope: BillScope,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            appliance_kw: 1.5,
            task_hours: 4,
            comfort_window: (0, 8),
            peak_rate: 0.3662,
            offpeak_rate: 0.1518,
            peak_window: (8, 23),
            gamma: 0.99,
            episode_len: HOURS,
            bill_scope: BillScope::Household,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_rate > 0.0 && self.offpeak_rate > 0.0) {
            return Err(Error::Input("tariff rates must be positive".into()));
        }
        let (a, b) = self.comfort_window;
        if b > HOURS || a >= b || self.task_hours > b - a {
            return Err(Error::Input(format!(
                "task of {} h does not fit comfort window [{a},{b})",
                self.task_hours
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Input(format!("gamma must lie in [0,1), got {}", self.gamma)));
        }
        if self.episode_len != HOURS {
            return Err(Error::Input("episodes are one day of 24 hourly steps".into()));
        }
        Ok(())
    }

    pub fn tariff_rate(&self, hour: u32) -> f64 {
        if (self.peak_window.0..self.peak_window.1).contains(&hour) {
            self.peak_rate
        } else {
            self.offpeak_rate
        }
    }

    fn in_comfort_window(&self, hour: u32) -> bool {
        (self.comfort_window.0..self.comfort_window.1).contains(&hour)
    }
}

/// GBP/kWh under the default two-rate tariff.
pub fn tariff_rate(hour: u32) -> f64 {
    EnvConfig::default().tariff_rate(hour)
}

/// Day-contiguous hourly records, 24 per day, sorted by (day, hour).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<HourlyRecord>,
    first_day: u32,
    max_demand: f64,
    max_renewable: f64,
    min_renewable: f64,
}

impl Dataset {
    /// Validates and sorts within each day. Rows are 1-based data rows
    /// (header excluded) in error messages.
    pub fn from_records(records: Vec<HourlyRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Schema {
                row: 0,
                msg: "dataset is empty".into(),
            });
        }
        let mut by_day: BTreeMap<u32, Vec<(usize, HourlyRecord)>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if r.day < 1 {
                return Err(Error::Schema {
                    row,
                    msg: format!("day must be >= 1, got {}", r.day),
                });
            }
            if r.hour >= HOURS {
                return Err(Error::Schema {
                    row,
                    msg: format!("hour {} out of range 0..23", r.hour),
                });
            }
            if !(r.background_demand_kw >= 0.0 && r.background_demand_kw.is_finite()) {
                return Err(Error::Schema {
                    row,
                    msg: "background_demand_kw must be finite and >= 0".into(),
                });
            }
            if !(r.renewable_kw >= 0.0 && r.renewable_kw.is_finite()) {
                return Err(Error::Schema {
                    row,
                    msg: "renewable_kw must be finite and >= 0".into(),
                });
            }
            by_day.entry(r.day).or_default().push((row, *r));
        }
        let first_day = *by_day.keys().next().unwrap();
        let mut sorted = Vec::with_capacity(records.len());
        for (k, (&day, rows)) in by_day.iter_mut().enumerate() {
            let expected_day = first_day + k as u32;
            if day != expected_day {
                return Err(Error::Schema {
                    row: rows[0].0,
                    msg: format!("day {expected_day} is missing (next day present is {day})"),
                });
            }
            rows.sort_by_key(|(_, r)| r.hour);
            let mut seen = [false; HOURS as usize];
            for (row, r) in rows.iter() {
                if seen[r.hour as usize] {
                    return Err(Error::Schema {
                        row: *row,
                        msg: format!("duplicate hour {} on day {day}", r.hour),
                    });
                }
                seen[r.hour as usize] = true;
            }
            if let Some(h) = seen.iter().position(|s| !s) {
                return Err(Error::Schema {
                    row: rows.last().unwrap().0,
                    msg: format!("missing hour {h} on day {day}"),
                });
            }
            sorted.extend(rows.iter().map(|(_, r)| *r));
        }
        let max_demand = sorted.iter().map(|r| r.background_demand_kw).fold(0.0, f64::max);
        let max_renewable = sorted.iter().map(|r| r.renewable_kw).fold(0.0, f64::max);
        let min_renewable = sorted.iter().map(|r| r.renewable_kw).fold(f64::INFINITY, f64::min);
        Ok(Self {
            records: sorted,
            first_day,
            max_demand,
            max_renewable,
            min_renewable,
        })
    }

    pub fn records(&self) -> &[HourlyRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first_day(&self) -> u32 {
        self.first_day
    }

    pub fn n_days(&self) -> u32 {
        (self.records.len() / HOURS as usize) as u32
    }

    pub fn last_day(&self) -> u32 {
        self.first_day + self.n_days() - 1
    }

    pub fn days(&self) -> impl Iterator<Item = u32> {
        self.first_day..=self.last_day()
    }

    pub fn has_day(&self, day: u32) -> bool {
        day >= self.first_day && day <= self.last_day()
    }

    pub fn record(&self, day: u32, hour: u32) -> Result<&HourlyRecord> {
        if !self.has_day(day) {
            return Err(Error::Data(format!(
                "day {day} not in dataset (days {}..={})",
                self.first_day,
                self.last_day()
            )));
        }
        if hour >= HOURS {
            return Err(Error::Input(format!("hour {hour} out of range")));
        }
        Ok(&self.records[((day - self.first_day) * HOURS + hour) as usize])
    }

    pub fn day_records(&self, day: u32) -> Result<&[HourlyRecord]> {
        let start = self.record(day, 0)?;
        let idx = ((start.day - self.first_day) * HOURS) as usize;
        Ok(&self.records[idx..idx + HOURS as usize])
    }

    pub fn max_demand(&self) -> f64 {
        self.max_demand
    }

    pub fn max_renewable(&self) -> f64 {
        self.max_renewable
    }

    /// Renewable profile of one day min-max scaled over the whole dataset.
    pub fn scaled_renewable_day(&self, day: u32) -> Result<Vec<f64>> {
        let span = self.max_renewable - self.min_renewable;
        Ok(self
            .day_records(day)?
            .iter()
            .map(|r| {
                if span > 0.0 {
                    (r.renewable_kw - self.min_renewable) / span
                } else {
                    0.0
                }
            })
            .collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("day,hour,background_demand_kw,renewable_kw\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.day, r.hour, r.background_demand_kw, r.renewable_kw
            ));
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| Error::Parse {
                row: 0,
                msg: e.to_string(),
            })?
            .clone();
        let expected = ["day", "hour", "background_demand_kw", "renewable_kw"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::Schema {
                row: 0,
                msg: format!("header must be {}, got {:?}", expected.join(","), headers),
            });
        }
        let mut records = Vec::new();
        for (i, rec) in rdr.deserialize::<HourlyRecord>().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                row: i + 1,
                msg: e.to_string(),
            })?;
            records.push(rec);
        }
        Self::from_records(records)
    }
}

/// Reads the hourly CSV (`day,hour,background_demand_kw,renewable_kw`).
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_csv_str(&text)
}

/// One stationary stretch of the synthetic year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub start_day: u32,
    /// Peak renewable output in kW at noon.
    pub solar_scale: f64,
    /// Standard deviation (kW) of hourly Gaussian noise on demand and renewable.
    pub noise: f64,
}

pub const SYNTH_DAYS: u32 = 365;

/// Solar bell curve peaking at noon, 1.0 at hour 12.
pub fn solar_profile(hour: u32) -> f64 {
    let x = (hour as f64 - 12.0) / 3.0;
    (-0.5 * x * x).exp()
}

/// Household background demand without noise: morning and evening peaks.
pub fn base_demand(hour: u32) -> f64 {
    let h = hour as f64;
    0.25 + 0.35 * (-(h - 8.0).powi(2) / 4.0).exp() + 0.6 * (-(h - 19.0).powi(2) / 6.0).exp()
}

/// A 365-day synthetic year; regime starts are the ground-truth shift days.
pub fn synth_year(seed: u64, regimes: &[Regime]) -> Result<Dataset> {
    if regimes.is_empty() || regimes[0].start_day != 1 {
        return Err(Error::Input("regimes must start on day 1".into()));
    }
    if regimes.windows(2).any(|w| w[1].start_day <= w[0].start_day) {
        return Err(Error::Input("regime start days must be strictly increasing".into()));
    }
    if regimes.last().unwrap().start_day > SYNTH_DAYS {
        return Err(Error::Input(format!("regime start beyond day {SYNTH_DAYS}")));
    }
    if regimes
        .iter()
        .any(|r| r.solar_scale.is_nan() || r.solar_scale < 0.0 || r.noise.is_nan() || r.noise < 0.0)
    {
        return Err(Error::Input("solar_scale and noise must be >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut records = Vec::with_capacity((SYNTH_DAYS * HOURS) as usize);
    for day in 1..=SYNTH_DAYS {
        let regime = regimes.iter().rev().find(|r| r.start_day <= day).unwrap();
        for hour in 0..HOURS {
            let e_d: f64 = std_normal.sample(&mut rng);
            let e_r: f64 = std_normal.sample(&mut rng);
            records.push(HourlyRecord {
                day,
                hour,
                background_demand_kw: (base_demand(hour) + regime.noise * e_d).max(0.0),
                renewable_kw: (regime.solar_scale * solar_profile(hour) + regime.noise * e_r).max(0.0),
            });
        }
    }
    Dataset::from_records(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub background_demand_kw: f64,
    pub hour: u32,
    pub remaining_task_hours: u32,
    pub renewable_kw: f64,
}

/// Per-hour reward: negative cost in GBP and comfort in {0, 1}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RewardVec {
    pub neg_cost: f64,
    pub comfort: f64,
}

impl RewardVec {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.neg_cost, self.comfort]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: EnvState,
    pub action: u8,
    pub reward: RewardVec,
    pub next_state: EnvState,
    pub done: bool,
}

/// Stateless simulator over an immutable dataset.
#[derive(Debug, Clone)]
pub struct HomeEnv {
    data: Arc<Dataset>,
    cfg: EnvConfig,
}

impl HomeEnv {
    pub fn new(data: Arc<Dataset>, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { data, cfg })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn data(&self) -> &Arc<Dataset> {
        &self.data
    }

    pub fn reset(&self, day: u32) -> Result<EnvState> {
        self.state_at(day, 0, self.cfg.task_hours)
    }

    pub fn state_at(&self, day: u32, hour: u32, remaining: u32) -> Result<EnvState> {
        let r = self.data.record(day, hour)?;
        Ok(EnvState {
            background_demand_kw: r.background_demand_kw,
            hour,
            remaining_task_hours: remaining.min(self.cfg.task_hours),
            renewable_kw: r.renewable_kw,
        })
    }

    /// Grid draw in kW for one hour, surplus renewable clamped to zero.
    pub fn net_draw(&self, state: &EnvState, action: u8) -> f64 {
        let appliance = self.cfg.appliance_kw * action as f64;
        match self.cfg.bill_scope {
            BillScope::Household => (state.background_demand_kw + appliance - state.renewable_kw).max(0.0),
            BillScope::Appliance => {
                let surplus = (state.renewable_kw - state.background_demand_kw).max(0.0);
                (appliance - surplus).max(0.0)
            }
        }
    }

    pub fn reward(&self, state: &EnvState, action: u8) -> RewardVec {
        let neg_cost = -self.net_draw(state, action) * self.cfg.tariff_rate(state.hour);
        let comfort = action == 1 && self.cfg.in_comfort_window(state.hour) && state.remaining_task_hours > 0;
        RewardVec {
            neg_cost,
            comfort: if comfort { 1.0 } else { 0.0 },
        }
    }

    pub fn step(&self, state: &EnvState, action: u8, day: u32) -> Result<Transition> {
        if action > 1 {
            return Err(Error::Input(format!("action must be 0 or 1, got {action}")));
        }
        if state.hour >= HOURS {
            return Err(Error::Input(format!("hour {} out of range", state.hour)));
        }
        let reward = self.reward(state, action);
        let remaining = if action == 1 {
            state.remaining_task_hours.saturating_sub(1)
        } else {
            state.remaining_task_hours
        };
        let done = state.hour == HOURS - 1;
        // Terminal successor wraps to hour 0 of the same day; it is never bootstrapped.
        let next_hour = (state.hour + 1) % HOURS;
        let next_state = self.state_at(day, next_hour, remaining)?;
        Ok(Transition {
            state: *state,
            action,
            reward,
            next_state,
            done,
        })
    }

    /// Network inputs: demand and renewable over dataset maxima, hour / 23,
    /// remaining / task_hours.
    pub fn features(&self, s: &EnvState) -> Vec<f64> {
        let nz = |m: f64| if m > 0.0 { m } else { 1.0 };
        vec![
            s.background_demand_kw / nz(self.data.max_demand()),
            s.hour as f64 / (HOURS - 1) as f64,
            if self.cfg.task_hours > 0 {
                s.remaining_task_hours as f64 / self.cfg.task_hours as f64
            } else {
                0.0
            },
            s.renewable_kw / nz(self.data.max_renewable()),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rule {
    /// Runs the appliance 0:00-4:00.
    Early,
    /// Runs the appliance 4:00-8:00.
    Late,
}

impl Rule {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Rule::Early),
            2 => Ok(Rule::Late),
            _ => Err(Error::Input(format!("rule must be 1 or 2, got {i}"))),
        }
    }

    pub fn index(self) -> u8 {
        match self {
            Rule::Early => 1,
            Rule::Late => 2,
        }
    }
}

pub fn rule_policy(rule: Rule, state: &EnvState) -> u8 {
    let on = match rule {
        Rule::Early => state.hour < 4,
        Rule::Late => (4..8).contains(&state.hour),
    };
    on as u8
}

/// Runs a full day under `policy` and returns the per-hour transitions.
pub fn run_day(env: &HomeEnv, day: u32, mut policy: impl FnMut(&EnvState) -> Result<u8>) -> Result<Vec<Transition>> {
    let mut state = env.reset(day)?;
    let mut out = Vec::with_capacity(HOURS as usize);
    loop {
        let a = policy(&state)?;
        let tr = env.step(&state, a, day)?;
        out.push(tr);
        if tr.done {
            break;
        }
        state = tr.next_state;
    }
    Ok(out)
}

/// Training view of the environment restricted to a set of days, optionally
/// to a contiguous slice of hours. Each episode samples one of the days.
#[derive(Debug, Clone)]
pub struct DayEpisodes {
    env: HomeEnv,
    days: Vec<u32>,
    /// `(start_hour, n_hours)`; the full day when `None`.
    window: Option<(u32, u32)>,
    day: u32,
    state: Option<EnvState>,
    steps_in_episode: u32,
}

impl DayEpisodes {
    pub fn new(env: HomeEnv, days: Vec<u32>) -> Result<Self> {
        if days.is_empty() {
            return Err(Error::Input("no training days".into()));
        }
        for &d in &days {
            env.data().record(d, 0)?;
        }
        Ok(Self {
            env,
            day: days[0],
            days,
            window: None,
            state: None,
            steps_in_episode: 0,
        })
    }

    /// Episodes cover hours `start..start + len` of the day only.
    pub fn with_window(mut self, start: u32, len: u32) -> Result<Self> {
        if len == 0 || start + len > HOURS {
            return Err(Error::Input(format!("bad hour window {start}+{len}")));
        }
        self.window = Some((start, len));
        Ok(self)
    }

    pub fn env(&self) -> &HomeEnv {
        &self.env
    }

    pub fn days(&self) -> &[u32] {
        &self.days
    }

    pub fn window(&self) -> Option<(u32, u32)> {
        self.window
    }
}

impl MoEnv for DayEpisodes {
    fn feature_dim(&self) -> usize {
        N_FEATURES
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn n_objectives(&self) -> usize {
        2
    }

    fn exogenous_features(&self) -> Vec<usize> {
        EXOGENOUS_FEATURES.to_vec()
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        self.day = self.days[rng.random_range(0..self.days.len())];
        let start = self.window.map_or(0, |w| w.0);
        let state = self.env.state_at(self.day, start, self.env.config().task_hours)?;
        self.state = Some(state);
        self.steps_in_episode = 0;
        Ok(self.env.features(&state))
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        let state = self.state.ok_or_else(|| Error::Input("step before reset".into()))?;
        let tr = self.env.step(&state, action as u8, self.day)?;
        self.steps_in_episode += 1;
        let truncated = match self.window {
            Some((_, len)) => !tr.done && self.steps_in_episode >= len,
            None => false,
        };
        self.state = Some(tr.next_state);
        Ok(EnvStep {
            reward: tr.reward.to_vec(),
            next_features: self.env.features(&tr.next_state),
            done: tr.done,
            truncated,
        })
    }
}
