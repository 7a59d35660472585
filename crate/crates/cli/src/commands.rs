//! One function per subcommand. Each returns the CSV payload and a
//! human-readable summary; `main` decides where they go.

use anyhow::{ensure, Context, Result};
use marlmem_core::colearn::run_dynamics;
use marlmem_core::rps::{evaluate_vs_uniform_opponents, RpsAgent};
use marlmem_core::speakermover::{
    degradation, degradation_csv, memoryful_reference_value, search_optimal_table, Protocol,
};
use marlmem_core::threelane::{best_memoryless_listeners, compare_policies, CostConfig, PolicySet};
use marlmem_core::traffic::run_reward_matrix;
use marlmem_core::{ActionDistribution3, EvalConfig};

use crate::config::{ExperimentConfig, ProtocolChoice};

pub const RPS_EPISODES: usize = 10_000;
pub const TRAFFIC_EPISODES: usize = 2_000;

#[derive(Debug, Default)]
pub struct Output {
    pub data: String,
    pub summary: String,
    /// Policy table text, for commands that produce one.
    pub policy: Option<String>,
}

fn eval_config(cfg: &ExperimentConfig, default_episodes: usize) -> Result<EvalConfig> {
    let n = cfg.episodes.unwrap_or(default_episodes);
    ensure!(n >= 2, "episodes must be at least 2, got {n}");
    Ok(EvalConfig::new(n, cfg.seed).workers(cfg.workers))
}

pub fn rps_eval(cfg: &ExperimentConfig) -> Result<Output> {
    let eval = eval_config(cfg, RPS_EPISODES)?;
    let mut data = String::from("policy,mean_return,std,n,ci95,mean_per_step\n");
    let mut summary = format!(
        "repeated RPS, T={}, {} resampled opponents, seed {}\n",
        cfg.horizon, eval.n_episodes, cfg.seed
    );
    for agent in [
        RpsAgent::Stationary(ActionDistribution3::uniform()),
        RpsAgent::Counter { gamma: cfg.gamma },
        RpsAgent::Oracle,
    ] {
        let s = evaluate_vs_uniform_opponents(agent, cfg.horizon, &eval)
            .with_context(|| format!("evaluating {}", agent.label()))?;
        let per_step = s.mean / cfg.horizon as f64;
        data.push_str(&format!(
            "{},{},{},{},{},{}\n",
            agent.label(),
            s.mean,
            s.std,
            s.n,
            s.ci95,
            per_step
        ));
        summary.push_str(&format!(
            "  {:<8} {}   per step {:.4}\n",
            agent.label(),
            s,
            per_step
        ));
    }
    Ok(Output {
        data,
        summary,
        policy: None,
    })
}

pub fn colearn(cfg: &ExperimentConfig) -> Result<Output> {
    ensure!(cfg.every >= 1, "every must be at least 1");
    let pi = ActionDistribution3::from_array(cfg.pi).context("pi")?;
    let pi_prime = ActionDistribution3::from_array(cfg.pi_prime).context("pi_prime")?;
    let trace = run_dynamics(pi, pi_prime, cfg.eta, cfg.steps)?;
    let mut data =
        String::from("t,theta_r,theta_p,theta_s,theta_r',theta_p',theta_s',radius,projected_flag\n");
    let last = trace.points.len() - 1;
    for (i, p) in trace.points.iter().enumerate() {
        if i % cfg.every != 0 && i != last {
            continue;
        }
        let a = p.pi.as_array();
        let b = p.pi_prime.as_array();
        data.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.t, a[0], a[1], a[2], b[0], b[1], b[2], p.radius, p.projected as u8
        ));
    }
    let projected = trace.points.iter().filter(|p| p.projected).count();
    let summary = format!(
        "co-learning, eta={}, {} steps: radius {:.6} -> {:.6}, {} projected steps\n",
        cfg.eta,
        cfg.steps,
        trace.first().radius,
        trace.last().radius,
        projected
    );
    Ok(Output {
        data,
        summary,
        policy: None,
    })
}

pub fn traffic_table(cfg: &ExperimentConfig) -> Result<Output> {
    let eval = eval_config(cfg, TRAFFIC_EPISODES)?;
    let matrix = run_reward_matrix(&eval)?;
    Ok(Output {
        data: matrix.to_csv(),
        summary: format!(
            "traffic reward matrix, {} episodes per cell, seed {}\n{matrix}",
            eval.n_episodes, cfg.seed
        ),
        policy: None,
    })
}

fn costs(cfg: &ExperimentConfig) -> CostConfig {
    CostConfig {
        fuel_cost: cfg.fuel_cost,
        time_cost: cfg.time_cost,
        target_reward: cfg.target_reward,
    }
}

pub fn threelane(cfg: &ExperimentConfig) -> Result<Output> {
    let costs = costs(cfg);
    let cmp = compare_policies(cfg.lane_length, costs)?;
    let memoryless = best_memoryless_listeners(cfg.lane_length, costs)?;
    let comm = cmp.expected(PolicySet::BehaviorComm);
    let summary = format!(
        "three-lane pursuit, L={}, fuel={}, time={}, reward={}\n  naive            {:.4}\n  behavior-comm    {:.4}\n  best memoryless listeners {:.4} (advantage of memory {:.4}, {} search nodes)\n",
        cfg.lane_length,
        costs.fuel_cost,
        costs.time_cost,
        costs.target_reward,
        cmp.expected(PolicySet::Naive),
        comm,
        memoryless.value,
        comm - memoryless.value,
        memoryless.nodes
    );
    Ok(Output {
        data: cmp.to_csv(),
        summary,
        policy: None,
    })
}

pub fn speakermover(cfg: &ExperimentConfig) -> Result<Output> {
    let protocol = match cfg.protocol {
        ProtocolChoice::Standard => Protocol::standard(),
        ProtocolChoice::Permuted => Protocol::permuted(),
    };
    let found = search_optimal_table(&protocol);
    let mut epsilons = vec![0.0];
    for &e in &cfg.noise {
        ensure!((0.0..1.0).contains(&e), "noise levels must lie in [0, 1), got {e}");
        if !epsilons.contains(&e) {
            epsilons.push(e);
        }
    }
    let rows = degradation(&protocol, &epsilons)?;
    let mut summary = format!(
        "speaker/mover, {} protocol: optimal memoryless value {} ({} search nodes), memoryful {}\n  step-2 cells per target: {:?}\n",
        match cfg.protocol {
            ProtocolChoice::Standard => "standard",
            ProtocolChoice::Permuted => "permuted",
        },
        found.value,
        found.nodes,
        memoryful_reference_value(&protocol, 0.0)?,
        found.table.step_two_positions(&protocol).map(|p| p.unwrap_or(u8::MAX)),
    );
    for r in &rows {
        summary.push_str(&format!(
            "  eps {:<4} memoryless {:.4}  memoryful {:.4}\n",
            r.epsilon, r.memoryless_value, r.memoryful_value
        ));
    }
    Ok(Output {
        data: degradation_csv(&rows),
        summary,
        policy: Some(found.table.to_text()),
    })
}
