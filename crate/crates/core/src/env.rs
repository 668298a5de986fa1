//! Swing-up pendulum environment.
//!
//! `θ = 0` is upright. The observation fed to every learner is
//! `(cos θ, sin θ, θ̇)`. Dynamics follow
//! `θ̈ = −(3g/2l)·sin(θ + π) + (3/ml²)·u`, integrated with semi-implicit
//! Euler (velocity first, then angle).

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Observation = [f64; 3];

/// Steps per game.
pub const EPISODE_STEPS: usize = 200;
pub const MAX_SPEED: f64 = 8.0;
/// Upright at rest.
pub const GOAL_OBSERVATION: Observation = [1.0, 0.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub max_torque: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 10.0,
            dt: 0.05,
            max_torque: 2.0,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mass, self.length, self.gravity, self.dt, self.max_torque];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(invalid("environment parameters must be positive and finite"))
        }
    }

    pub fn clamp_torque(&self, u: f64) -> f64 {
        u.clamp(-self.max_torque, self.max_torque)
    }
}

/// Internal pendulum state. `theta` accumulates without wrapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

impl PendulumState {
    pub fn new(theta: f64, theta_dot: f64) -> Self {
        Self { theta, theta_dot }
    }

    pub fn observation(&self) -> Observation {
        let (s, c) = self.theta.sin_cos();
        [c, s, self.theta_dot]
    }

    pub fn normalized_theta(&self) -> f64 {
        normalize_angle(self.theta)
    }
}

/// Wraps an angle into `[−π, π]`; the boundary maps to `+π`.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta - 2.0 * PI * (theta / (2.0 * PI)).round();
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// Remaps an angle to `[0, 2π)` for export.
pub fn angle_0_2pi(theta: f64) -> f64 {
    let r = theta.rem_euclid(2.0 * PI);
    // rem_euclid can round up to exactly 2π for tiny negative inputs.
    if r >= 2.0 * PI {
        0.0
    } else {
        r
    }
}

/// Stage cost `θ² + 0.1·θ̇² + 0.001·u²` on the wrapped angle.
pub fn cost(state: &PendulumState, u: f64) -> f64 {
    let th = state.normalized_theta();
    th * th + 0.1 * state.theta_dot * state.theta_dot + 0.001 * u * u
}

/// `½θ̇² + cos θ + u`.
pub fn energy(state: &PendulumState, u: f64) -> f64 {
    0.5 * state.theta_dot * state.theta_dot + state.theta.cos() + u
}

/// Advances one step. The torque is clamped to the actuator limit first and
/// the returned cost belongs to the pre-step state.
pub fn step(state: &PendulumState, u: f64, params: &EnvParams) -> Result<(PendulumState, f64)> {
    if !(state.theta.is_finite() && state.theta_dot.is_finite() && u.is_finite()) {
        return Err(invalid("non-finite state or torque"));
    }
    let u = params.clamp_torque(u);
    let c = cost(state, u);
    let EnvParams {
        mass: m,
        length: l,
        gravity: g,
        dt,
        ..
    } = *params;
    // −sin(θ + π) written as sin θ so that upright stays exactly at rest.
    let accel = 3.0 * g / (2.0 * l) * state.theta.sin() + 3.0 / (m * l * l) * u;
    let theta_dot = (state.theta_dot + accel * dt).clamp(-MAX_SPEED, MAX_SPEED);
    let theta = state.theta + theta_dot * dt;
    Ok((PendulumState { theta, theta_dot }, c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// θ = π
    Lowest,
    /// θ = π/2
    LeftHorizontal,
    /// θ = −π/2
    RightHorizontal,
    /// θ = π/18
    NearUpLeft,
    /// θ = −π/18
    NearUpRight,
    /// θ ~ U[−π, π], θ̇ ~ U[−1, 1]
    Random,
}

impl InitKind {
    /// The five fixed starting configurations, lowest first.
    pub const FIXED: [InitKind; 5] = [
        InitKind::Lowest,
        InitKind::LeftHorizontal,
        InitKind::RightHorizontal,
        InitKind::NearUpLeft,
        InitKind::NearUpRight,
    ];

    /// Short tag used on the command line and in file names.
    pub fn tag(self) -> &'static str {
        match self {
            InitKind::Lowest => "lowest",
            InitKind::LeftHorizontal => "left",
            InitKind::RightHorizontal => "right",
            InitKind::NearUpLeft => "up-left",
            InitKind::NearUpRight => "up-right",
            InitKind::Random => "random",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        [
            InitKind::Lowest,
            InitKind::LeftHorizontal,
            InitKind::RightHorizontal,
            InitKind::NearUpLeft,
            InitKind::NearUpRight,
            InitKind::Random,
        ]
        .into_iter()
        .find(|k| k.tag() == tag)
    }

    pub fn fixed_theta(self) -> Option<f64> {
        match self {
            InitKind::Lowest => Some(PI),
            InitKind::LeftHorizontal => Some(PI / 2.0),
            InitKind::RightHorizontal => Some(-PI / 2.0),
            InitKind::NearUpLeft => Some(PI / 18.0),
            InitKind::NearUpRight => Some(-PI / 18.0),
            InitKind::Random => None,
        }
    }
}

/// Initial state. `theta_dot0` is ignored for [`InitKind::Random`].
pub fn reset(init: InitKind, theta_dot0: f64, seed: u64) -> Result<PendulumState> {
    if !theta_dot0.is_finite() || theta_dot0.abs() > MAX_SPEED {
        return Err(invalid(format!("initial velocity {theta_dot0} outside [-8, 8]")));
    }
    Ok(match init.fixed_theta() {
        Some(theta) => PendulumState::new(theta, theta_dot0),
        None => {
            let mut rng = crate::rng::seeded(seed);
            random_state(&mut rng)
        }
    })
}

pub(crate) fn random_state<R: Rng + ?Sized>(rng: &mut R) -> PendulumState {
    let theta = rng.random_range(-PI..=PI);
    let theta_dot = rng.random_range(-1.0..=1.0);
    PendulumState::new(theta, theta_dot)
}

/// Multiplicative observation noise: every call draws one ratio from
/// `U[low, high]` and scales the whole observation by it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationNoise {
    low: f64,
    high: f64,
}

impl ObservationNoise {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low > 0.0 && low <= high && high <= 1.0) {
            return Err(invalid(format!("noise ratio range [{low}, {high}] must satisfy 0 < low <= high <= 1")));
        }
        Ok(Self { low, high })
    }

    pub fn low(&self) -> f64 {
        self.low
    }

    pub fn high(&self) -> f64 {
        self.high
    }

    pub fn sample_ratio<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.low == self.high {
            self.low
        } else {
            rng.random_range(self.low..=self.high)
        }
    }

    pub fn apply<R: Rng + ?Sized>(&self, x: &Observation, rng: &mut R) -> Observation {
        let r = self.sample_ratio(rng);
        [x[0] * r, x[1] * r, x[2] * r]
    }
}

/// Experience tuple with the stage cost of the pre-step state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub x: Observation,
    pub u: f64,
    pub cost: f64,
    pub x_next: Observation,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const P: EnvParams = EnvParams {
        mass: 1.0,
        length: 1.0,
        gravity: 10.0,
        dt: 0.05,
        max_torque: 2.0,
    };

    #[test]
    fn upright_is_fixed_with_zero_cost() {
        let s = PendulumState::new(0.0, 0.0);
        let (n, c) = step(&s, 0.0, &P).unwrap();
        assert_eq!(n, s);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn hanging_is_fixed() {
        let s = PendulumState::new(PI, 0.0);
        let (n, c) = step(&s, 0.0, &P).unwrap();
        // sin(2π) is ~2.4e-16 in floating point.
        assert!((n.theta - PI).abs() < 1e-15);
        assert!(n.theta_dot.abs() < 1e-15);
        assert!((c - PI * PI).abs() < 1e-12);
        assert!((c - 9.8696).abs() < 1e-4);
    }

    #[test]
    fn horizontal_falls_by_hand_value() {
        let s = PendulumState::new(PI / 2.0, 0.0);
        let (n, _) = step(&s, 0.0, &P).unwrap();
        assert!((n.theta_dot - 0.75).abs() < 1e-12);
        assert!((n.theta - (PI / 2.0 + 0.0375)).abs() < 1e-12);
    }

    #[test]
    fn torque_is_clamped_before_use() {
        let s = PendulumState::new(0.0, 0.0);
        let (a, ca) = step(&s, 10.0, &P).unwrap();
        let (b, cb) = step(&s, 2.0, &P).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert!((ca - 0.004).abs() < 1e-15);
    }

    #[test]
    fn velocity_clamp() {
        let s = PendulumState::new(PI / 2.0, 7.9);
        let (n, _) = step(&s, 2.0, &P).unwrap();
        assert_eq!(n.theta_dot, MAX_SPEED);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(step(&PendulumState::new(f64::NAN, 0.0), 0.0, &P).is_err());
        assert!(step(&PendulumState::new(0.0, 0.0), f64::INFINITY, &P).is_err());
    }

    #[test]
    fn normalize_cases() {
        assert_eq!(normalize_angle(0.0), 0.0);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(2.5 * PI) - 0.5 * PI).abs() < 1e-12);
        assert_eq!(normalize_angle(-PI), PI);
        assert!((normalize_angle(-2.5 * PI) + 0.5 * PI).abs() < 1e-12);
    }

    #[test]
    fn energy_cases() {
        assert_eq!(energy(&PendulumState::new(0.0, 0.0), 0.0), 1.0);
        assert_eq!(energy(&PendulumState::new(PI, 0.0), 0.0), -1.0);
        assert!((energy(&PendulumState::new(PI / 2.0, 2.0), 1.0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn reset_cases() {
        let s = reset(InitKind::Lowest, 1.0, 0).unwrap();
        assert_eq!((s.theta, s.theta_dot), (PI, 1.0));
        let s = reset(InitKind::NearUpLeft, 0.5, 0).unwrap();
        assert_eq!((s.theta, s.theta_dot), (PI / 18.0, 0.5));
        assert_eq!(reset(InitKind::RightHorizontal, 1.0, 0).unwrap().theta, -PI / 2.0);
        assert_eq!(reset(InitKind::Random, 0.0, 42).unwrap(), reset(InitKind::Random, 0.0, 42).unwrap());
        assert_ne!(reset(InitKind::Random, 0.0, 42).unwrap(), reset(InitKind::Random, 0.0, 43).unwrap());
        assert!(reset(InitKind::Lowest, 8.5, 0).is_err());
    }

    #[test]
    fn init_tags_round_trip() {
        for k in InitKind::FIXED.into_iter().chain([InitKind::Random]) {
            assert_eq!(InitKind::from_tag(k.tag()), Some(k));
        }
        assert_eq!(InitKind::from_tag("sideways"), None);
    }

    #[test]
    fn identity_and_fixed_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [0.3, -0.2, 1.5];
        assert_eq!(ObservationNoise::new(1.0, 1.0).unwrap().apply(&x, &mut rng), x);
        let y = ObservationNoise::new(0.6, 0.6).unwrap().apply(&[1.0, 0.0, 2.0], &mut rng);
        assert!((y[0] - 0.6).abs() < 1e-15 && y[1] == 0.0 && (y[2] - 1.2).abs() < 1e-15);
        assert!(ObservationNoise::new(0.0, 1.0).is_err());
        assert!(ObservationNoise::new(0.8, 0.7).is_err());
        assert!(ObservationNoise::new(0.5, 1.1).is_err());
    }

    #[test]
    fn noise_ratio_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = ObservationNoise::new(0.6, 1.0).unwrap();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..100_000 {
            let r = noise.sample_ratio(&mut rng);
            lo = lo.min(r);
            hi = hi.max(r);
        }
        assert!(lo >= 0.6 && hi <= 1.0);
        assert!(lo < 0.601 && hi > 0.999);
    }

    #[test]
    fn export_angle_range() {
        assert_eq!(angle_0_2pi(0.0), 0.0);
        assert!((angle_0_2pi(-PI / 2.0) - 1.5 * PI).abs() < 1e-12);
        assert!(angle_0_2pi(-1e-300) < 2.0 * PI);
    }

    proptest! {
        #[test]
        fn update_rule_off_clamp(theta in -20.0f64..20.0, theta_dot in -7.0f64..7.0, u in -2.0f64..2.0) {
            let s = PendulumState::new(theta, theta_dot);
            let (n, _) = step(&s, u, &P).unwrap();
            let expected = (15.0 * theta.sin() + 3.0 * u) * 0.05;
            if (theta_dot + expected).abs() < MAX_SPEED {
                prop_assert!(((n.theta_dot - theta_dot) - expected).abs() < 1e-12);
                prop_assert!((n.theta - (theta + n.theta_dot * 0.05)).abs() < 1e-12);
            }
            prop_assert!(n.theta_dot.abs() <= MAX_SPEED);
        }

        #[test]
        fn observation_on_unit_circle(theta in -1e3f64..1e3, theta_dot in -8.0f64..8.0) {
            let o = PendulumState::new(theta, theta_dot).observation();
            prop_assert!((o[0] * o[0] + o[1] * o[1] - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn cost_zero_iff_goal(theta in -10.0f64..10.0, theta_dot in -8.0f64..8.0, u in -2.0f64..2.0) {
            let s = PendulumState::new(theta, theta_dot);
            let c = cost(&s, u);
            prop_assert!(c >= 0.0);
            let at_goal = normalize_angle(theta) == 0.0 && theta_dot == 0.0 && u == 0.0;
            prop_assert_eq!(c == 0.0, at_goal);
        }

        #[test]
        fn normalized_angle_in_range(theta in -1e4f64..1e4) {
            let r = normalize_angle(theta);
            prop_assert!((-PI..=PI).contains(&r));
            prop_assert!(((theta - r) / (2.0 * PI) - ((theta - r) / (2.0 * PI)).round()).abs() < 1e-9);
        }
    }
}
