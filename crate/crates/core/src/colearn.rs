//! Simultaneous exact policy-gradient ascent of two RPS players.
//!
//! The payoff is bilinear with a skew-symmetric matrix, so the joint gradient
//! field is orthogonal to the displacement from the uniform/uniform fixed
//! point. Unprojected steps therefore push the pair outward:
//! `r²(t+1) = r²(t) + η²(‖g‖² + ‖g′‖²)`.

use crate::error::{Error, Result};
use crate::rps::{policy_gradients, ActionDistribution3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColearnStep {
    pub pi: ActionDistribution3,
    pub pi_prime: ActionDistribution3,
    /// Whether either player left the simplex and was projected back.
    pub projected: bool,
}

/// Moves each player `eta` along its own exact gradient.
pub fn colearn_step(
    pi: &ActionDistribution3,
    pi_prime: &ActionDistribution3,
    eta: f64,
) -> Result<ColearnStep> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "eta",
            reason: format!("must be positive, got {eta}"),
        });
    }
    let (g, g2) = policy_gradients(pi, pi_prime);
    let (pi, p1) = ascend(pi, &g, eta);
    let (pi_prime, p2) = ascend(pi_prime, &g2, eta);
    Ok(ColearnStep {
        pi,
        pi_prime,
        projected: p1 || p2,
    })
}

fn ascend(d: &ActionDistribution3, g: &[f64; 3], eta: f64) -> (ActionDistribution3, bool) {
    let p = d.as_array();
    let raw = [p[0] + eta * g[0], p[1] + eta * g[1], p[2] + eta * g[2]];
    if raw.iter().all(|x| *x >= 0.0) {
        let d = ActionDistribution3::from_array(raw).unwrap_or_else(|_| project_to_simplex(raw));
        (d, false)
    } else {
        (project_to_simplex(raw), true)
    }
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_to_simplex(v: [f64; 3]) -> ActionDistribution3 {
    let mut u = v;
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, uk) in u.iter().enumerate() {
        cumsum += uk;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            theta = t;
        }
    }
    let w = v.map(|x| (x - theta).max(0.0));
    let total: f64 = w.iter().sum();
    ActionDistribution3::from_array(w.map(|x| x / total)).expect("projection lands on the simplex")
}

/// Squared Euclidean distance of the joint strategy from (uniform, uniform).
pub fn radius_squared(pi: &ActionDistribution3, pi_prime: &ActionDistribution3) -> f64 {
    let third = 1.0 / 3.0;
    pi.as_array()
        .iter()
        .chain(pi_prime.as_array().iter())
        .map(|x| (x - third) * (x - third))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub t: usize,
    pub pi: ActionDistribution3,
    pub pi_prime: ActionDistribution3,
    pub radius: f64,
    /// Whether the step that produced this point was projected.
    pub projected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsTrace {
    pub points: Vec<TracePoint>,
}

impl DynamicsTrace {
    pub fn first(&self) -> &TracePoint {
        &self.points[0]
    }

    pub fn last(&self) -> &TracePoint {
        self.points.last().expect("trace is never empty")
    }
}

/// Runs `n_steps` co-learning updates, recording every point including the
/// start (so the trace has `n_steps + 1` entries).
pub fn run_dynamics(
    pi0: ActionDistribution3,
    pi_prime0: ActionDistribution3,
    eta: f64,
    n_steps: usize,
) -> Result<DynamicsTrace> {
    let mut points = Vec::with_capacity(n_steps + 1);
    let mut pi = pi0;
    let mut pi_prime = pi_prime0;
    points.push(TracePoint {
        t: 0,
        pi,
        pi_prime,
        radius: radius_squared(&pi, &pi_prime).sqrt(),
        projected: false,
    });
    for t in 1..=n_steps {
        let step = colearn_step(&pi, &pi_prime, eta)?;
        pi = step.pi;
        pi_prime = step.pi_prime;
        points.push(TracePoint {
            t,
            pi,
            pi_prime,
            radius: radius_squared(&pi, &pi_prime).sqrt(),
            projected: step.projected,
        });
    }
    Ok(DynamicsTrace { points })
}
