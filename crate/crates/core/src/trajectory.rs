//! Per-step episode records shared by every controller.

use serde::{Deserialize, Serialize};

use crate::env::{angle_0_2pi, Observation};

/// Mean stage cost over the final steps at or below which a game counts as
/// a success.
pub const SUCCESS_COST: f64 = 0.05;
pub const SUCCESS_WINDOW: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    /// Unwrapped internal angle.
    pub theta: f64,
    pub theta_dot: f64,
    pub u: f64,
    pub cost: f64,
    pub energy: f64,
    /// Where the previous step's plan expected the pendulum to be now.
    pub planned: Option<Observation>,
}

impl TrajectoryRow {
    /// Angle exported in `[0, 2π)`.
    pub fn export_theta(&self) -> f64 {
        angle_0_2pi(self.theta)
    }

    pub fn planned_theta(&self) -> Option<f64> {
        self.planned.map(|p| angle_0_2pi(p[1].atan2(p[0])))
    }

    pub fn planned_theta_dot(&self) -> Option<f64> {
        self.planned.map(|p| p[2])
    }

    /// Distance between planned and executed `(θ, θ̇)`, angle difference
    /// wrapped to `[−π, π]`.
    pub fn plan_deviation(&self) -> Option<f64> {
        self.planned.map(|p| {
            let dth = crate::env::normalize_angle(p[1].atan2(p[0]) - self.theta);
            let dv = p[2] - self.theta_dot;
            (dth * dth + dv * dv).sqrt()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub method: String,
    pub init: String,
    pub seed: u64,
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryRecord {
    pub fn new(method: impl Into<String>, init: impl Into<String>, seed: u64) -> Self {
        Self {
            method: method.into(),
            init: init.into(),
            seed,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Mean cost over the last `window` rows (all rows if shorter).
    pub fn terminal_cost(&self, window: usize) -> f64 {
        let n = self.rows.len().min(window);
        if n == 0 {
            return f64::NAN;
        }
        self.rows[self.rows.len() - n..].iter().map(|r| r.cost).sum::<f64>() / n as f64
    }

    pub fn mean_energy(&self) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().map(|r| r.energy).sum::<f64>() / self.rows.len() as f64
    }

    pub fn total_cost(&self) -> f64 {
        self.rows.iter().map(|r| r.cost).sum()
    }

    /// Success: final-window mean cost within threshold and every torque
    /// within the actuator limit.
    pub fn succeeded(&self) -> bool {
        !self.rows.is_empty()
            && self.terminal_cost(SUCCESS_WINDOW) <= SUCCESS_COST
            && self.rows.iter().all(|r| r.u.abs() <= 2.0)
    }

    /// First step from which the cost stays below the success threshold for
    /// the rest of the episode.
    pub fn settling_time(&self) -> Option<usize> {
        let last_bad = self.rows.iter().rposition(|r| r.cost >= SUCCESS_COST);
        match last_bad {
            None => Some(0),
            Some(i) if i + 1 < self.rows.len() => Some(self.rows[i + 1].t),
            Some(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: usize, cost: f64) -> TrajectoryRow {
        TrajectoryRow {
            t,
            theta: 0.0,
            theta_dot: 0.0,
            u: 0.0,
            cost,
            energy: 1.0,
            planned: None,
        }
    }

    #[test]
    fn settling_and_success() {
        let mut r = TrajectoryRecord::new("x", "lowest", 0);
        r.rows = (0..30).map(|t| row(t, if t < 7 { 1.0 } else { 0.01 })).collect();
        assert_eq!(r.settling_time(), Some(7));
        assert!(r.succeeded());
        r.rows.last_mut().unwrap().cost = 0.5;
        assert_eq!(r.settling_time(), None);
        r.rows.last_mut().unwrap().cost = 0.0;
        r.rows[20].u = 2.5;
        assert!(!r.succeeded());
    }

    #[test]
    fn deviation_wraps_angles() {
        let mut r = row(0, 0.0);
        r.theta = 2.0 * std::f64::consts::PI - 0.1;
        let a: f64 = 0.1;
        r.planned = Some([a.cos(), a.sin(), 0.0]);
        assert!((r.plan_deviation().unwrap() - 0.2).abs() < 1e-12);
        assert!(r.planned_theta().unwrap() < 2.0 * std::f64::consts::PI);
    }
}
