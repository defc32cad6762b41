//! Toy cannon benchmark: hilly terrain, ballistic flight with angular
//! noise, quadratic reward, and a brute-force optimal-reward oracle.
//!
//! A cannon at the origin shoots at ground targets in
//! `[-11, 11] x [-11, 11]` m. Policy parameters are horizontal orientation,
//! vertical angle, and launch velocity. Hills raise the terrain; the agent
//! never observes them, only where the ball lands.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::opt::{coordinate_refine, Bounds};
use crate::seeds::{child_seed, STREAM_TERRAIN};

pub const ORIENTATION_RANGE: (f64, f64) = (0.0, 6.28);
pub const VERTICAL_RANGE: (f64, f64) = (0.01, 1.37);
pub const VELOCITY_RANGE: (f64, f64) = (0.1, 5.0);
pub const TARGET_HALF_WIDTH: f64 = 11.0;

pub const GRAVITY: f64 = 9.81;

/// Reward weights: distance term dominates the launch penalties.
pub const W_DISTANCE: f64 = 1.0;
pub const W_VELOCITY: f64 = 0.01;
pub const W_ANGLE: f64 = 0.05;

/// Cap on a single hill's height contribution at the origin, so that the
/// summed terrain height at the launch site stays below 0.05 m even with
/// the maximum of four hills.
const MAX_ORIGIN_CONTRIBUTION: f64 = 0.0125;

const MAX_HILLS: usize = 4;
const STEP_DT: f64 = 1e-3;
const BISECT_DT: f64 = 1e-6;
const MAX_FLIGHT: f64 = 60.0;

/// Commanded launch parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaunchParams {
    /// Horizontal orientation in radians, `[0, 6.28]`.
    pub orientation: f64,
    /// Vertical angle in radians, `[0.01, 1.37]`.
    pub vertical_angle: f64,
    /// Launch speed in m/s, `[0.1, 5]`.
    pub velocity: f64,
}

impl LaunchParams {
    pub fn new(orientation: f64, vertical_angle: f64, velocity: f64) -> Self {
        let p = Self {
            orientation,
            vertical_angle,
            velocity,
        };
        assert!(p.in_bounds(), "launch parameters out of bounds: {p:?}");
        p
    }

    pub fn in_bounds(&self) -> bool {
        launch_bounds().contains(&self.to_theta())
    }

    pub fn from_theta(theta: &[f64]) -> Self {
        assert_eq!(theta.len(), 3, "launch parameters are 3-dimensional");
        Self::new(theta[0], theta[1], theta[2])
    }

    pub fn to_theta(self) -> Vec<f64> {
        vec![self.orientation, self.vertical_angle, self.velocity]
    }
}

/// Parameter-space box for the launch parameters.
pub fn launch_bounds() -> Bounds {
    Bounds::new(&[ORIENTATION_RANGE, VERTICAL_RANGE, VELOCITY_RANGE])
}

/// Ground-target box.
pub fn target_bounds() -> Bounds {
    Bounds::new(&[
        (-TARGET_HALF_WIDTH, TARGET_HALF_WIDTH),
        (-TARGET_HALF_WIDTH, TARGET_HALF_WIDTH),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hill {
    pub cx: f64,
    pub cy: f64,
    pub height: f64,
    pub radius: f64,
}

/// Sum of Gaussian bumps; non-negative everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Terrain {
    pub hills: Vec<Hill>,
}

impl Terrain {
    pub fn flat() -> Self {
        Self { hills: Vec::new() }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        self.hills
            .iter()
            .map(|h| {
                let dx = x - h.cx;
                let dy = y - h.cy;
                h.height * (-(dx * dx + dy * dy) / (2.0 * h.radius * h.radius)).exp()
            })
            .sum()
    }
}

/// One cannon world. Serializes as `{seed, hills: [...]}` for exact replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub seed: u64,
    #[serde(rename = "hills")]
    pub terrain: Terrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpactPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Draws a random hilly world: 1-4 hills, centers at least 3 m from the
/// origin and individually capped so the terrain at the launch site stays
/// essentially flat. Deterministic in the seed.
pub fn generate_environment(seed: u64) -> Environment {
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, STREAM_TERRAIN, 0));
    let count = rng.random_range(1..=MAX_HILLS);
    let mut hills = Vec::with_capacity(count);
    for _ in 0..count {
        loop {
            let cx = rng.random_range(-TARGET_HALF_WIDTH..TARGET_HALF_WIDTH);
            let cy = rng.random_range(-TARGET_HALF_WIDTH..TARGET_HALF_WIDTH);
            let height = rng.random_range(0.5..3.0);
            let radius = rng.random_range(1.5..4.0);
            let d2 = cx * cx + cy * cy;
            let at_origin = height * (-d2 / (2.0 * radius * radius)).exp();
            if d2 >= 9.0 && at_origin < MAX_ORIGIN_CONTRIBUTION {
                hills.push(Hill {
                    cx,
                    cy,
                    height,
                    radius,
                });
                break;
            }
        }
    }
    Environment {
        seed,
        terrain: Terrain { hills },
    }
}

/// Hill-free world, for the `--flat-terrain` override.
pub fn flat_environment(seed: u64) -> Environment {
    Environment {
        seed,
        terrain: Terrain::flat(),
    }
}

/// Fires one shot. Gaussian noise with standard deviation `noise_sigma`
/// (radians) perturbs the vertical angle, clamped back into bounds;
/// `noise_sigma = 0` is the noise-free shot and consumes no randomness.
/// The projectile flies a drag-free parabola from the terrain surface at
/// the origin; impact is located by fixed stepping and bisection.
pub fn simulate_shot<R: Rng>(
    env: &Environment,
    params: &LaunchParams,
    noise_sigma: f64,
    rng: &mut R,
) -> ImpactPoint {
    assert!(params.in_bounds(), "launch parameters out of bounds");
    assert!(noise_sigma >= 0.0, "noise sigma must be non-negative");
    let alpha = if noise_sigma > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        (params.vertical_angle + noise_sigma * z).clamp(VERTICAL_RANGE.0, VERTICAL_RANGE.1)
    } else {
        params.vertical_angle
    };
    let (sin_a, cos_a) = alpha.sin_cos();
    let (sin_p, cos_p) = params.orientation.sin_cos();
    let v = params.velocity;
    let vx = v * cos_a * cos_p;
    let vy = v * cos_a * sin_p;
    let vz = v * sin_a;
    let z0 = env.terrain.height(0.0, 0.0);

    // Height of the projectile above the terrain along the flight path.
    let clearance = |t: f64| -> f64 {
        let z = z0 + vz * t - 0.5 * GRAVITY * t * t;
        z - env.terrain.height(vx * t, vy * t)
    };

    let mut lo = 0.0;
    let mut hi = STEP_DT;
    while clearance(hi) > 0.0 {
        lo = hi;
        hi += STEP_DT;
        assert!(hi <= MAX_FLIGHT, "no impact within {MAX_FLIGHT} s of flight");
    }
    while hi - lo > BISECT_DT {
        let mid = 0.5 * (lo + hi);
        if clearance(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    ImpactPoint {
        x: vx * hi,
        y: vy * hi,
        z: z0 + vz * hi - 0.5 * GRAVITY * hi * hi,
    }
}

/// Quadratic reward: negative squared ground-plane distance between target
/// and impact, minus velocity and vertical-angle penalties on the
/// commanded parameters. Always non-positive.
pub fn reward(target: [f64; 2], impact: &ImpactPoint, params: &LaunchParams) -> f64 {
    let dx = impact.x - target[0];
    let dy = impact.y - target[1];
    -W_DISTANCE * (dx * dx + dy * dy)
        - W_VELOCITY * params.velocity * params.velocity
        - W_ANGLE * params.vertical_angle * params.vertical_angle
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Noise-free brute force over launch parameters for a batch of targets:
/// a shared 64x32x32 grid of simulated shots, then per-target coordinate
/// refinement from the ten best grid points. Returns `(params, reward)`
/// per target. Deterministic.
pub fn optimal_shots(env: &Environment, targets: &[[f64; 2]]) -> Vec<(LaunchParams, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(0); // noise-free shots consume no draws
    let phis = linspace(ORIENTATION_RANGE.0, ORIENTATION_RANGE.1, 64);
    let alphas = linspace(VERTICAL_RANGE.0, VERTICAL_RANGE.1, 32);
    let vels = linspace(VELOCITY_RANGE.0, VELOCITY_RANGE.1, 32);

    let mut grid: Vec<(LaunchParams, ImpactPoint)> =
        Vec::with_capacity(phis.len() * alphas.len() * vels.len());
    for &phi in &phis {
        for &a in &alphas {
            for &v in &vels {
                let p = LaunchParams::new(phi, a, v);
                let impact = simulate_shot(env, &p, 0.0, &mut rng);
                grid.push((p, impact));
            }
        }
    }

    let bounds = launch_bounds();
    targets
        .iter()
        .map(|&target| {
            // Ten best grid shots for this target.
            let mut top: Vec<(f64, usize)> = Vec::with_capacity(11);
            for (idx, (p, impact)) in grid.iter().enumerate() {
                let r = reward(target, impact, p);
                if top.len() < 10 || r > top.last().unwrap().0 {
                    let pos = top.partition_point(|e| e.0 > r);
                    top.insert(pos, (r, idx));
                    top.truncate(10);
                }
            }
            let mut objective = |theta: &[f64]| {
                let p = LaunchParams::from_theta(theta);
                let impact = simulate_shot(env, &p, 0.0, &mut rng);
                reward(target, &impact, &p)
            };
            let mut best: Option<(Vec<f64>, f64)> = None;
            for &(r0, idx) in &top {
                let theta0 = grid[idx].0.to_theta();
                let (theta, r) = coordinate_refine(&mut objective, &bounds, &theta0, r0, 3);
                if best.as_ref().is_none_or(|b| r > b.1) {
                    best = Some((theta, r));
                }
            }
            let (theta, r) = best.expect("non-empty refinement set");
            (LaunchParams::from_theta(&theta), r)
        })
        .collect()
}

/// Best achievable noise-free reward for one target.
pub fn optimal_reward(env: &Environment, target: [f64; 2]) -> f64 {
    optimal_shots(env, &[target])[0].1
}

/// Scores a stored episode against an arbitrary query target. The stored
/// impact point and commanded parameters are all the reward needs; no
/// re-simulation happens.
pub fn reward_interface(target: &[f64], record: &crate::cps::EpisodeRecord) -> f64 {
    reward(
        [target[0], target[1]],
        &record.outcome.impact(),
        &LaunchParams::from_theta(&record.theta),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn flat() -> Environment {
        flat_environment(0)
    }

    #[test]
    fn terrain_generation_deterministic() {
        let a = generate_environment(123);
        let b = generate_environment(123);
        assert_eq!(a, b);
    }

    #[test]
    fn launch_site_stays_low_over_many_seeds() {
        for seed in 0..1000 {
            let env = generate_environment(seed);
            let h = env.terrain.height(0.0, 0.0);
            assert!(h < 0.05, "seed {seed}: height at origin {h}");
            assert!(!env.terrain.hills.is_empty() && env.terrain.hills.len() <= 4);
        }
    }

    #[test]
    fn flat_override_has_zero_height() {
        let env = flat();
        assert_eq!(env.terrain.height(3.0, -4.0), 0.0);
    }

    #[test]
    fn flat_range_matches_closed_form() {
        let env = flat();
        let p = LaunchParams::new(0.0, 0.7853982, 5.0);
        let impact = simulate_shot(&env, &p, 0.0, &mut rng(0));
        let expected = 25.0 * (2.0f64 * 0.7853982).sin() / GRAVITY;
        assert!((impact.x - expected).abs() < 1e-3, "{} vs {expected}", impact.x);
        assert!(impact.y.abs() < 1e-3);

        let slow = LaunchParams::new(0.0, 0.7853982, 0.1);
        let impact = simulate_shot(&env, &slow, 0.0, &mut rng(0));
        assert!((impact.x - 0.0010194).abs() < 1e-5, "{}", impact.x);
    }

    #[test]
    fn flat_range_closed_form_grid() {
        let env = flat();
        for i in 0..20 {
            for j in 0..20 {
                let a = 0.01 + (std::f64::consts::FRAC_PI_4 - 0.01) * i as f64 / 19.0;
                let v = 0.1 + 4.9 * j as f64 / 19.0;
                let p = LaunchParams::new(0.0, a, v);
                let impact = simulate_shot(&env, &p, 0.0, &mut rng(0));
                let expected = v * v * (2.0 * a).sin() / GRAVITY;
                assert!(
                    (impact.x - expected).abs() < 1e-3,
                    "alpha {a} v {v}: {} vs {expected}",
                    impact.x
                );
            }
        }
    }

    #[test]
    fn flat_terrain_rotation_equivariance() {
        let env = flat();
        let mut r = rng(9);
        for _ in 0..100 {
            let phi = r.random_range(0.0..6.28);
            let delta = r.random_range(0.0..std::f64::consts::TAU);
            let a = r.random_range(0.05..1.3);
            let v = r.random_range(0.2..5.0);
            let base = simulate_shot(&env, &LaunchParams::new(phi, a, v), 0.0, &mut rng(0));
            let rotated_phi = (phi + delta).rem_euclid(std::f64::consts::TAU).min(6.28);
            // compare against rotating the base impact by the actual angle difference
            let eff = rotated_phi - phi;
            let turned = simulate_shot(
                &env,
                &LaunchParams::new(rotated_phi, a, v),
                0.0,
                &mut rng(0),
            );
            let (s, c) = eff.sin_cos();
            let rx = c * base.x - s * base.y;
            let ry = s * base.x + c * base.y;
            assert!(
                (turned.x - rx).abs() < 1e-6 && (turned.y - ry).abs() < 1e-6,
                "rotation mismatch"
            );
        }
    }

    #[test]
    fn impact_sits_on_terrain_surface() {
        let mut r = rng(17);
        for seed in 0..20 {
            let env = generate_environment(seed);
            for _ in 0..20 {
                let p = LaunchParams::new(
                    r.random_range(0.0..6.28),
                    r.random_range(0.01..1.37),
                    r.random_range(0.1..5.0),
                );
                let impact = simulate_shot(&env, &p, 0.0, &mut rng(0));
                let h = env.terrain.height(impact.x, impact.y);
                assert!(
                    (impact.z - h).abs() < 1e-3,
                    "z residual {} at seed {seed}",
                    (impact.z - h).abs()
                );
            }
        }
    }

    #[test]
    fn flat_range_increasing_in_velocity() {
        let env = flat();
        for &a in &[0.2, 0.5, std::f64::consts::FRAC_PI_4] {
            let mut prev = -1.0;
            for j in 0..15 {
                let v = 0.1 + 4.9 * j as f64 / 14.0;
                let impact = simulate_shot(&env, &LaunchParams::new(0.0, a, v), 0.0, &mut rng(0));
                assert!(impact.x > prev, "range not increasing at alpha {a}");
                prev = impact.x;
            }
        }
    }

    #[test]
    fn noisy_shots_reproducible_with_seed() {
        let env = generate_environment(5);
        let p = LaunchParams::new(1.0, 0.6, 3.0);
        let a = simulate_shot(&env, &p, 0.0175, &mut rng(77));
        let b = simulate_shot(&env, &p, 0.0175, &mut rng(77));
        assert_eq!(a, b);
        let c = simulate_shot(&env, &p, 0.0175, &mut rng(78));
        assert_ne!(a, c);
    }

    #[test]
    fn reward_hand_values() {
        let p = LaunchParams::new(0.0, 0.5, 1.0);
        let impact = ImpactPoint { x: 2.0, y: 3.0, z: 0.0 };
        let r = reward([2.0, 3.0], &impact, &p);
        assert!((r - (-0.0225)).abs() < 1e-12, "{r}");

        let far = reward([12.0, 3.0], &impact, &LaunchParams::new(0.0, 0.01, 0.1));
        assert!((far - (-100.0)).abs() < 0.01, "{far}");
    }

    #[test]
    fn reward_rotation_invariant() {
        let p = LaunchParams::new(0.3, 0.4, 2.0);
        let impact = ImpactPoint { x: 1.0, y: 0.5, z: 0.0 };
        let base = reward([3.0, -1.0], &impact, &p);
        let (s, c) = 1.1f64.sin_cos();
        let rot = ImpactPoint {
            x: c * impact.x - s * impact.y,
            y: s * impact.x + c * impact.y,
            z: 0.0,
        };
        let rt = [c * 3.0 - s * -1.0, s * 3.0 + c * -1.0];
        assert!((reward(rt, &rot, &p) - base).abs() < 1e-12);
    }

    #[test]
    fn oracle_hits_reachable_targets_on_flat_ground() {
        let env = flat();
        for &target in &[[1.0, 0.0], [0.0, -2.0], [1.5, 1.5]] {
            let (p, r) = optimal_shots(&env, &[target])[0].clone();
            let impact = simulate_shot(&env, &p, 0.0, &mut rng(0));
            let d2 = (impact.x - target[0]).powi(2) + (impact.y - target[1]).powi(2);
            assert!(d2 < 1e-2, "distance term {d2} for {target:?}");
            assert!(r <= 0.0);
        }
    }

    #[test]
    fn oracle_prefers_small_velocity_near_origin() {
        let env = flat();
        let (p, _) = optimal_shots(&env, &[[0.5, 0.0]])[0];
        assert!(p.velocity < 3.0, "velocity {} for a 0.5 m target", p.velocity);
    }

    #[test]
    fn oracle_rotation_invariant_on_flat_ground() {
        let env = flat();
        let a = optimal_reward(&env, [2.0, 0.0]);
        let b = optimal_reward(&env, [0.0, 2.0]);
        assert!((a - b).abs() < 1e-3, "{a} vs {b}");
    }

    #[test]
    fn environment_serialization_round_trips() {
        let env = generate_environment(99);
        let text = serde_json::to_string(&env).unwrap();
        assert!(text.contains("\"hills\""));
        let back: Environment = serde_json::from_str(&text).unwrap();
        assert_eq!(env, back);
    }
}
