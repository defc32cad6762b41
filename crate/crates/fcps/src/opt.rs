//! Bounded black-box maximization: random probing plus coordinate
//! refinement. Used for acquisition optimization and by the cannon oracle.

use rand::Rng;

/// Axis-aligned box bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    lows: Vec<f64>,
    highs: Vec<f64>,
}

impl Bounds {
    /// Builds bounds from `(low, high)` pairs. Panics if any pair is
    /// reversed or non-finite.
    pub fn new(pairs: &[(f64, f64)]) -> Self {
        for &(lo, hi) in pairs {
            assert!(lo.is_finite() && hi.is_finite() && lo <= hi, "bad bound ({lo}, {hi})");
        }
        Self {
            lows: pairs.iter().map(|p| p.0).collect(),
            highs: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lows.len()
    }

    pub fn low(&self, d: usize) -> f64 {
        self.lows[d]
    }

    pub fn high(&self, d: usize) -> f64 {
        self.highs[d]
    }

    pub fn range(&self, d: usize) -> f64 {
        self.highs[d] - self.lows[d]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lows.iter().zip(&self.highs))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(self.lows.iter().zip(&self.highs)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Concatenation of two bound boxes.
    pub fn join(&self, other: &Bounds) -> Bounds {
        let mut lows = self.lows.clone();
        let mut highs = self.highs.clone();
        lows.extend_from_slice(&other.lows);
        highs.extend_from_slice(&other.highs);
        Bounds { lows, highs }
    }

    /// Maps `x` into `[0, 1]` per dimension. Degenerate dimensions map to 0.
    pub fn normalize(&self, x: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), self.dim());
        for (v, (lo, hi)) in x.iter().zip(self.lows.iter().zip(&self.highs)) {
            let r = hi - lo;
            out.push(if r > 0.0 { (v - lo) / r } else { 0.0 });
        }
    }

    /// Per-dimension ranges.
    pub fn ranges(&self) -> Vec<f64> {
        (0..self.dim()).map(|d| self.range(d)).collect()
    }

    pub fn sample_uniform<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lows
            .iter()
            .zip(&self.highs)
            .map(|(&lo, &hi)| if hi > lo { rng.random_range(lo..hi) } else { lo })
            .collect()
    }

    /// Latin-hypercube sample of `count` points: each dimension is split
    /// into `count` strata, visited in a random permutation.
    pub fn latin_hypercube<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let dim = self.dim();
        let mut points = vec![vec![0.0; dim]; count];
        for d in 0..dim {
            let mut strata: Vec<usize> = (0..count).collect();
            // Fisher-Yates
            for i in (1..count).rev() {
                let j = rng.random_range(0..=i);
                strata.swap(i, j);
            }
            let (lo, r) = (self.lows[d], self.range(d));
            for (p, s) in points.iter_mut().zip(&strata) {
                let u: f64 = rng.random_range(0.0..1.0);
                p[d] = lo + r * ((*s as f64 + u) / count as f64);
            }
        }
        points
    }
}

/// Number of uniform probes evaluated before local refinement.
pub const ACQUISITION_PROBES: usize = 200;
/// Coordinate sweeps per refinement start.
pub const REFINE_SWEEPS: usize = 3;

/// Greedy coordinate refinement with a shrinking step, starting from `x0`.
/// Each sweep walks every coordinate with step `0.25 * range / 4^sweep`,
/// halving the step a few times once no move improves.
pub fn coordinate_refine<F: FnMut(&[f64]) -> f64>(
    objective: &mut F,
    bounds: &Bounds,
    x0: &[f64],
    f0: f64,
    sweeps: usize,
) -> (Vec<f64>, f64) {
    let mut x = x0.to_vec();
    let mut fx = f0;
    for sweep in 0..sweeps {
        for d in 0..bounds.dim() {
            let mut step = bounds.range(d) * 0.25 / 4f64.powi(sweep as i32);
            if step <= 0.0 {
                continue;
            }
            let mut halvings = 0;
            while halvings < 3 {
                let mut moved = false;
                for dir in [1.0, -1.0] {
                    loop {
                        let cand = (x[d] + dir * step).clamp(bounds.low(d), bounds.high(d));
                        if cand == x[d] {
                            break;
                        }
                        let old = x[d];
                        x[d] = cand;
                        let fc = objective(&x);
                        if fc > fx {
                            fx = fc;
                            moved = true;
                        } else {
                            x[d] = old;
                            break;
                        }
                    }
                }
                if !moved {
                    step *= 0.5;
                    halvings += 1;
                }
            }
        }
    }
    (x, fx)
}

/// Maximizes `objective` over `bounds`: 200 uniform probes, then coordinate
/// refinement from the best `restarts` probes. Deterministic given the RNG
/// state; the result is always within bounds.
pub fn maximize_acquisition<F: FnMut(&[f64]) -> f64, R: Rng>(
    mut objective: F,
    bounds: &Bounds,
    restarts: usize,
    rng: &mut R,
) -> Vec<f64> {
    maximize_acquisition_with_value(&mut objective, bounds, restarts, rng).0
}

/// As [`maximize_acquisition`], also returning the best objective value.
pub fn maximize_acquisition_with_value<F: FnMut(&[f64]) -> f64, R: Rng>(
    objective: &mut F,
    bounds: &Bounds,
    restarts: usize,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    assert!(bounds.dim() > 0, "empty search space");
    let mut probes: Vec<(Vec<f64>, f64)> = (0..ACQUISITION_PROBES)
        .map(|_| {
            let x = bounds.sample_uniform(rng);
            let f = objective(&x);
            (x, f)
        })
        .collect();
    // Stable by construction: sort_by is stable, keys total via total_cmp.
    probes.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut best = probes[0].clone();
    for (x0, f0) in probes.iter().take(restarts.max(1).min(probes.len())) {
        let (x, f) = coordinate_refine(objective, bounds, x0, *f0, REFINE_SWEEPS);
        if f > best.1 {
            best = (x, f);
        }
    }
    debug_assert!(bounds.contains(&best.0));
    best
}
