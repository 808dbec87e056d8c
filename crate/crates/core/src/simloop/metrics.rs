use serde::{Deserialize, Serialize};

/// Minimum, mean and maximum of a series (all zero when empty).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub ticks: usize,
    pub traveled_distance: f64,
    /// Ego speed after each tick.
    pub velocity: Stat,
    /// Worst-case risk of the executed plan at each tick.
    pub risk: Stat,
    /// Worst risk among ticks whose plan passed the funnel.
    pub selected_risk_max: f64,
    pub fallback_ticks: usize,
    pub collisions: usize,
    /// Time spent below the freeze speed.
    pub freeze_time: f64,
    pub reached_goal: bool,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct MetricsAccumulator {
    speeds: Vec<f64>,
    risks: Vec<f64>,
    pub(crate) metrics: Metrics,
}

impl MetricsAccumulator {
    pub(crate) fn record(&mut self, distance: f64, speed: f64, risk: f64, fallback: bool, dt: f64, freeze_speed: f64) {
        let m = &mut self.metrics;
        m.ticks += 1;
        m.traveled_distance += distance;
        if fallback {
            m.fallback_ticks += 1;
        } else {
            m.selected_risk_max = m.selected_risk_max.max(risk);
        }
        if speed < freeze_speed {
            m.freeze_time += dt;
        }
        self.speeds.push(speed);
        self.risks.push(risk);
    }

    pub(crate) fn finish(mut self) -> Metrics {
        self.metrics.velocity = Stat::of(&self.speeds);
        self.metrics.risk = Stat::of(&self.risks);
        self.metrics
    }
}

/// One row of a batch summary: per-run metrics aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub profile: String,
    pub runs: usize,
    /// Mean, min and max of per-run traveled distance.
    pub traveled_distance: Stat,
    /// Mean of per-run mean risk; min of minima; max of maxima.
    pub risk: Stat,
    pub velocity: Stat,
    pub collisions: usize,
    pub freeze_time_mean: f64,
    pub fallback_ticks_mean: f64,
}

impl SummaryRow {
    pub fn aggregate(profile: &str, runs: &[Metrics]) -> Self {
        let n = runs.len().max(1) as f64;
        let fold = |f: fn(&Metrics) -> &Stat| {
            if runs.is_empty() {
                return Stat::default();
            }
            Stat {
                mean: runs.iter().map(|m| f(m).mean).sum::<f64>() / n,
                min: runs.iter().map(|m| f(m).min).fold(f64::INFINITY, f64::min),
                max: runs.iter().map(|m| f(m).max).fold(f64::NEG_INFINITY, f64::max),
            }
        };
        let distances: Vec<f64> = runs.iter().map(|m| m.traveled_distance).collect();
        Self {
            profile: profile.to_string(),
            runs: runs.len(),
            traveled_distance: Stat::of(&distances),
            risk: fold(|m| &m.risk),
            velocity: fold(|m| &m.velocity),
            collisions: runs.iter().map(|m| m.collisions).sum(),
            freeze_time_mean: runs.iter().map(|m| m.freeze_time).sum::<f64>() / n,
            fallback_ticks_mean: runs.iter().map(|m| m.fallback_ticks as f64).sum::<f64>() / n,
        }
    }
}

pub const SUMMARY_HEADER: &str = "profile,runs,distance_mean,distance_min,distance_max,\
risk_mean,risk_min,risk_max,velocity_mean,velocity_min,velocity_max,collisions,freeze_time_mean,fallback_ticks_mean";

/// CSV with a header line and one line per row.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.profile,
            r.runs,
            r.traveled_distance.mean,
            r.traveled_distance.min,
            r.traveled_distance.max,
            r.risk.mean,
            r.risk.min,
            r.risk.max,
            r.velocity.mean,
            r.velocity.min,
            r.velocity.max,
            r.collisions,
            r.freeze_time_mean,
            r.fallback_ticks_mean,
        ));
    }
    out
}
