//! Deterministic multi-stage tank plant with labeled attack injection.
//!
//! Each stage has a tank, an inlet valve, and an outlet pump, and exposes four
//! channels named in SWaT style: `LIT<s>01` (level), `FIT<s>01` (inlet flow),
//! `MV<s>01` (valve, 0/1) and `P<s>01` (pump, 0/1). Stage 1 is fed at its
//! configured inflow rate; stage `s > 1` is fed by the pump of stage `s - 1`.
//!
//! Control per stage, evaluated after every step on the true level:
//! the pump switches on at or above the high mark and off at or below the low
//! mark; the valve closes at or above the overflow mark and reopens at or
//! below the high mark. Row `t` records the state during step `t` and the
//! level before that step's flows are applied.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::{ChannelKind, ChannelSchema, Label, TimeSeriesFrame};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelRole {
    Level,
    Flow,
    Valve,
    Pump,
}

impl ChannelRole {
    pub const ALL: [ChannelRole; 4] = [
        ChannelRole::Level,
        ChannelRole::Flow,
        ChannelRole::Valve,
        ChannelRole::Pump,
    ];

    fn prefix(self) -> &'static str {
        match self {
            ChannelRole::Level => "LIT",
            ChannelRole::Flow => "FIT",
            ChannelRole::Valve => "MV",
            ChannelRole::Pump => "P",
        }
    }

    pub fn kind(self) -> ChannelKind {
        match self {
            ChannelRole::Level | ChannelRole::Flow => ChannelKind::Sensor,
            ChannelRole::Valve | ChannelRole::Pump => ChannelKind::Actuator,
        }
    }
}

/// Name of a plant channel; `stage` is 0-based.
pub fn channel_name(stage: usize, role: ChannelRole) -> String {
    format!("{}{}01", role.prefix(), stage + 1)
}

/// Inverse of [`channel_name`].
pub fn parse_channel_name(name: &str) -> Option<(usize, ChannelRole)> {
    let (role, rest) = ChannelRole::ALL
        .iter()
        .find_map(|r| name.strip_prefix(r.prefix()).map(|rest| (*r, rest)))?;
    let digits = rest.strip_suffix("01")?;
    let stage: usize = digits.parse().ok()?;
    (stage >= 1).then(|| (stage - 1, role))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub capacity: f64,
    /// Inflow rate (units/s) for the first stage; later stages take the
    /// upstream pump flow instead.
    pub inflow: f64,
    pub outflow: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub stages: Vec<StageConfig>,
    /// Control marks as fractions of capacity.
    pub low_mark: f64,
    pub high_mark: f64,
    pub overflow_mark: f64,
    /// Initial level as a fraction of capacity.
    pub initial_level: f64,
    pub seed: u64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self::uniform(2, 1000.0, 5.0, 8.0, 0.1, 7)
    }
}

impl PlantConfig {
    /// Every stage shares the same capacity, rates, and noise.
    pub fn uniform(
        stage_count: usize,
        capacity: f64,
        inflow: f64,
        outflow: f64,
        noise_sigma: f64,
        seed: u64,
    ) -> Self {
        Self {
            stages: vec![
                StageConfig {
                    capacity,
                    inflow,
                    outflow,
                    noise_sigma,
                };
                stage_count
            ],
            low_mark: 0.3,
            high_mark: 0.7,
            overflow_mark: 0.95,
            initial_level: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("plant needs at least one stage".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if !(s.capacity > 0.0 && s.inflow > 0.0 && s.outflow > 0.0) {
                return Err(Error::Config(format!(
                    "stage {}: capacity and rates must be positive",
                    i + 1
                )));
            }
            if s.noise_sigma.is_nan() || s.noise_sigma < 0.0 {
                return Err(Error::Config(format!("stage {}: noise_sigma must be >= 0", i + 1)));
            }
        }
        let marks = [self.low_mark, self.high_mark, self.overflow_mark];
        if !(0.0 <= self.low_mark
            && self.low_mark < self.high_mark
            && self.high_mark < self.overflow_mark
            && self.overflow_mark <= 1.0)
        {
            return Err(Error::Config(format!(
                "control marks must satisfy 0 <= low < high < overflow <= 1, got {marks:?}"
            )));
        }
        if !(0.0..=1.0).contains(&self.initial_level) {
            return Err(Error::Config("initial_level must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn channel_count(&self) -> usize {
        4 * self.stages.len()
    }

    pub fn schema(&self) -> ChannelSchema {
        let mut names = Vec::with_capacity(self.channel_count());
        let mut kinds = Vec::with_capacity(self.channel_count());
        for s in 0..self.stages.len() {
            for role in ChannelRole::ALL {
                names.push(channel_name(s, role));
                kinds.push(role.kind());
            }
        }
        ChannelSchema::new(names, kinds).expect("plant channel names are unique")
    }
}

/// Runs the plant for `duration` seconds with every row labeled normal.
pub fn simulate_normal(config: &PlantConfig, duration: usize) -> Result<TimeSeriesFrame> {
    simulate_from(config, duration, 0)
}

/// As [`simulate_normal`], with timestamps starting at `start_time`.
pub fn simulate_from(
    config: &PlantConfig,
    duration: usize,
    start_time: i64,
) -> Result<TimeSeriesFrame> {
    config.validate()?;
    if duration == 0 {
        return Err(Error::InvalidArgument("duration must be at least 1 second".into()));
    }
    let n = config.stages.len();
    let mut rng = SplitMix64::new(config.seed);
    let mut level: Vec<f64> = config
        .stages
        .iter()
        .map(|s| config.initial_level * s.capacity)
        .collect();
    let mut valve_open = vec![true; n];
    let mut pump_on = vec![true; n];
    let mut values = Vec::with_capacity(duration * 4 * n);
    let mut inflow = vec![0.0; n];

    for _ in 0..duration {
        for k in 0..n {
            let supply = if k == 0 {
                config.stages[0].inflow
            } else if pump_on[k - 1] {
                config.stages[k - 1].outflow
            } else {
                0.0
            };
            inflow[k] = if valve_open[k] { supply } else { 0.0 };
        }
        for k in 0..n {
            let sigma = config.stages[k].noise_sigma;
            let noisy_level = level[k] + sigma * rng.standard_normal();
            let noisy_flow = inflow[k] + sigma * rng.standard_normal();
            values.extend_from_slice(&[
                noisy_level,
                noisy_flow,
                f64::from(u8::from(valve_open[k])),
                f64::from(u8::from(pump_on[k])),
            ]);
        }
        for k in 0..n {
            let stage = &config.stages[k];
            let outflow = if pump_on[k] { stage.outflow } else { 0.0 };
            level[k] = (level[k] + inflow[k] - outflow).clamp(0.0, stage.capacity);

            let frac = level[k] / stage.capacity;
            if frac >= config.high_mark {
                pump_on[k] = true;
            } else if frac <= config.low_mark {
                pump_on[k] = false;
            }
            if frac >= config.overflow_mark {
                valve_open[k] = false;
            } else if frac <= config.high_mark {
                valve_open[k] = true;
            }
        }
    }

    let timestamps = (0..duration as i64).map(|t| start_time + t).collect();
    TimeSeriesFrame::new(config.schema(), timestamps, values, vec![Label::Normal; duration])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackCategory {
    /// Single stage, single point.
    #[serde(rename = "SSSP")]
    Sssp,
    /// Single stage, multi point.
    #[serde(rename = "SSMP")]
    Ssmp,
    /// Multi stage, single point.
    #[serde(rename = "MSSP")]
    Mssp,
    /// Multi stage, multi point.
    #[serde(rename = "MSMP")]
    Msmp,
}

impl FromStr for AttackCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SSSP" => Ok(Self::Sssp),
            "SSMP" => Ok(Self::Ssmp),
            "MSSP" => Ok(Self::Mssp),
            "MSMP" => Ok(Self::Msmp),
            other => Err(Error::Config(format!("unknown attack category {other:?}"))),
        }
    }
}

impl fmt::Display for AttackCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sssp => "SSSP",
            Self::Ssmp => "SSMP",
            Self::Mssp => "MSSP",
            Self::Msmp => "MSMP",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Manipulation {
    /// Hold the last pre-attack reading.
    Freeze,
    /// Add a constant to the true reading.
    Offset(f64),
    /// Overwrite with a fixed value (actuator state 0/1).
    Force(f64),
}

impl FromStr for Manipulation {
    type Err = Error;

    /// Accepts `freeze`, `offset:<amount>`, `force:<on|off|value>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("unknown manipulation {s:?}"));
        if s.eq_ignore_ascii_case("freeze") {
            return Ok(Self::Freeze);
        }
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        match kind.trim().to_ascii_lowercase().as_str() {
            "offset" => arg.trim().parse().map(Self::Offset).map_err(|_| bad()),
            "force" => match arg.trim().to_ascii_lowercase().as_str() {
                "on" | "open" => Ok(Self::Force(1.0)),
                "off" | "closed" => Ok(Self::Force(0.0)),
                v => v.parse().map(Self::Force).map_err(|_| bad()),
            },
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub category: AttackCategory,
    pub start: usize,
    pub duration: usize,
    /// `(stage, role)` pairs, stage 0-based.
    pub targets: Vec<(usize, ChannelRole)>,
    pub manipulation: Manipulation,
}

impl AttackSpec {
    pub fn end(&self) -> usize {
        self.start + self.duration
    }

    /// Checks that the target set matches the category.
    pub fn validate(&self) -> Result<()> {
        if self.duration == 0 {
            return Err(Error::InvalidArgument("attack duration must be >= 1".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::InvalidArgument("attack has no targets".into()));
        }
        let mut stages: Vec<usize> = self.targets.iter().map(|t| t.0).collect();
        stages.sort_unstable();
        let points = stages.len();
        stages.dedup();
        let stage_count = stages.len();
        let mut unique = self.targets.clone();
        unique.sort_by_key(|(s, r)| (*s, *r as u8));
        unique.dedup();
        if unique.len() != points {
            return Err(Error::InvalidArgument("attack lists a target twice".into()));
        }
        let ok = match self.category {
            AttackCategory::Sssp => points == 1,
            AttackCategory::Ssmp => stage_count == 1 && points >= 2,
            AttackCategory::Mssp => stage_count >= 2 && points == stage_count,
            AttackCategory::Msmp => stage_count >= 2 && points > stage_count,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "{} attack cannot target {points} channel(s) across {stage_count} stage(s)",
                self.category
            )));
        }
        Ok(())
    }
}

/// Overwrites targeted channels during each attack interval and labels those
/// rows as attacks. Rows outside every interval are left untouched.
pub fn inject_attacks(frame: &TimeSeriesFrame, specs: &[AttackSpec]) -> Result<TimeSeriesFrame> {
    let mut sorted: Vec<&AttackSpec> = specs.iter().collect();
    sorted.sort_by_key(|s| s.start);
    for spec in &sorted {
        spec.validate()?;
        if spec.end() > frame.rows() {
            return Err(Error::InvalidArgument(format!(
                "attack [{}, {}) exceeds frame of {} rows",
                spec.start,
                spec.end(),
                frame.rows()
            )));
        }
    }
    for pair in sorted.windows(2) {
        if pair[1].start < pair[0].end() {
            return Err(Error::InvalidArgument(format!(
                "attack intervals [{}, {}) and [{}, {}) overlap",
                pair[0].start,
                pair[0].end(),
                pair[1].start,
                pair[1].end()
            )));
        }
    }

    let schema = frame.schema().clone();
    let c = frame.channels();
    let mut out = frame.clone();
    for spec in sorted {
        let mut columns = Vec::with_capacity(spec.targets.len());
        for &(stage, role) in &spec.targets {
            let name = channel_name(stage, role);
            let col = schema.index_of(&name).ok_or_else(|| {
                Error::InvalidArgument(format!("attack target {name} is not a channel of this frame"))
            })?;
            columns.push(col);
        }
        let values = out.values_mut();
        for &col in &columns {
            let frozen = frame.value(spec.start.saturating_sub(1), col);
            for r in spec.start..spec.end() {
                let v = &mut values[r * c + col];
                *v = match spec.manipulation {
                    Manipulation::Freeze => frozen,
                    Manipulation::Offset(amount) => frame.value(r, col) + amount,
                    Manipulation::Force(state) => state,
                };
            }
        }
        for label in &mut out.labels_mut()[spec.start..spec.end()] {
            *label = Label::Attack;
        }
    }
    Ok(out)
}

/// Writes a frame in the loader's CSV layout.
pub fn save(frame: &TimeSeriesFrame, path: &Path) -> Result<()> {
    frame.write_csv(path)
}
