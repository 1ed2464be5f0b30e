//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.
//!
//! The lines go straight to stdout, so they show even when output is captured.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use kfvo::agent::{actor_forward, sample_action, Checkpoint, Mlp, PolicyParams};
use kfvo::backend::WorldConfig;
use kfvo::commands::{
    cmd_eval, cmd_train, score_worlds, Decider, EvalConfig, EvalEntry, TrainConfig, WorldSet,
};
use kfvo::geometry::{ate_rmse, umeyama_align, Alignment, Rigid3, Sim3, Trajectory};
use kfvo::rl::{gae_advantages, reward_from_error, ContextualBandit, PpoConfig, RewardParams, Trainer};
use kfvo::trajectory_io::{parse_kitti_str, parse_tum_str, write_kitti, write_trajectory_file, write_tum, PoseFormat};
use kfvo::window::Action;
use nalgebra::{DMatrix, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn random_vec(rng: &mut ChaCha8Rng, range: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-range..range))
}

fn random_sim3(rng: &mut ChaCha8Rng) -> Sim3 {
    Sim3::new(
        rng.random_range(0.1..10.0),
        UnitQuaternion::from_scaled_axis(random_vec(rng, 3.0)),
        random_vec(rng, 10.0),
    )
}

fn point_trajectory(points: &[Vector3<f64>]) -> Trajectory {
    Trajectory::from_entries(
        points
            .iter()
            .enumerate()
            .map(|(i, p)| (i as f64 * 0.1, Rigid3::from_translation(p.x, p.y, p.z)))
            .collect(),
    )
    .unwrap()
}

fn geometry_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_recovery: f64 = 0.0;
    for case in 0..1000 {
        let n = rng.random_range(4..30);
        let points: Vec<_> = (0..n).map(|_| random_vec(&mut rng, 10.0)).collect();
        let g = random_sim3(&mut rng);
        let target: Vec<_> = points.iter().map(|p| g.transform_point(p)).collect();
        let est = umeyama_align(&points, &target, true).map_err(|e| format!("case {case}: {e}"))?;
        let err = ((est.scale - g.scale).abs() / g.scale)
            .max(est.rotation.angle_to(&g.rotation))
            .max((est.translation - g.translation).norm() / g.translation.norm().max(1.0));
        worst_recovery = worst_recovery.max(err);
    }
    let mut worst_invariance: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(4..30);
        let gt: Vec<_> = (0..n).map(|_| random_vec(&mut rng, 10.0)).collect();
        let est: Vec<_> = gt.iter().map(|p| p + 0.1 * random_vec(&mut rng, 1.0)).collect();
        let g = random_sim3(&mut rng);
        let moved: Vec<_> = est.iter().map(|p| g.transform_point(p)).collect();
        let a = ate_rmse(&point_trajectory(&est), &point_trajectory(&gt), Alignment::Sim3).map_err(|e| e.to_string())?;
        let b = ate_rmse(&point_trajectory(&moved), &point_trajectory(&gt), Alignment::Sim3).map_err(|e| e.to_string())?;
        worst_invariance = worst_invariance.max((a - b).abs());
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "recovery error {worst_recovery:.1e}, invariance error {worst_invariance:.1e}, {elapsed:.2?}"
    );
    if worst_recovery < 1e-9 && worst_invariance < 1e-8 && elapsed < Duration::from_secs(5) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn window_state_machine() -> Outcome {
    let world = common::world(19, 3, false);
    let decisions = 19 - 7;
    for bits in 0u32..1 << decisions {
        let actions: Vec<_> = (0..decisions)
            .map(|i| if bits >> i & 1 == 1 { Action::Keyframe } else { Action::Discard })
            .collect();
        common::simulate(&world, 8, &actions).map_err(|e| format!("actions {bits:012b}: {e}"))?;
    }
    let clean = common::world(19, 3, true);
    let traj = common::simulate(&clean, 8, &[Action::Keyframe; 12])?;
    let ate = ate_rmse(&traj, &clean.ground_truth, Alignment::None).map_err(|e| e.to_string())?;
    let detail = format!("{} sequences, noiseless keep-all ATE {ate:.1e}", 1u32 << decisions);
    if ate <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reward_values() -> Outcome {
    let params = RewardParams::default();
    let cases = [
        (0.2, Action::Discard, 0.0),
        (5.0, Action::Discard, -0.01),
        (0.1, Action::Keyframe, 0.001000125),
    ];
    let mut detail = Vec::new();
    let mut ok = true;
    for (e, action, want) in cases {
        let got = reward_from_error(e, action, &params);
        ok &= (got - want).abs() <= 1e-15;
        detail.push(format!("{got}"));
    }
    let detail = detail.join(", ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        for out in [1, 2] {
            let mlp = Mlp::orthogonal(&[12, 16, 16, out], 1.0, &mut rng);
            let x = DMatrix::from_fn(12, 4, |_, _| rng.random_range(-2.0..2.0));
            let g = DMatrix::from_fn(out, 4, |_, _| rng.random_range(-1.0..1.0));
            worst = worst.max(common::mlp_gradient_error(&mlp, &x, &g, 1e-5));
        }
    }
    let detail = format!("worst relative error {worst:.1e}");
    if worst < 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Σ_l (γλ)^l δ_{t+l}, summed term by term.
fn brute_force_gae(r: &[f64], v: &[f64], d: &[bool], last: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let next_v = |t: usize| if t + 1 < n { v[t + 1] } else { last };
    let delta = |t: usize| r[t] + if d[t] { 0.0 } else { gamma * next_v(t) } - v[t];
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut w = 1.0;
            for l in t..n {
                sum += w * delta(l);
                if d[l] {
                    break;
                }
                w *= gamma * lambda;
            }
            sum
        })
        .collect()
}

fn ppo_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut gae_err: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(1..200);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.05)).collect();
        let (last, gamma, lambda) = (rng.random_range(-1.0..1.0), rng.random_range(0.5..1.0), rng.random_range(0.0..1.0));
        let (adv, _) = gae_advantages(&r, &v, &d, last, gamma, lambda);
        for (a, b) in adv.iter().zip(brute_force_gae(&r, &v, &d, last, gamma, lambda)) {
            gae_err = gae_err.max((a - b).abs());
        }
    }

    let cfg = PpoConfig {
        n_envs: 8,
        rollout_len: 256,
        total_steps: 50_000,
        ..PpoConfig::default()
    };
    let envs = (0..cfg.n_envs).map(|_| ContextualBandit::new()).collect();
    let start = Instant::now();
    let mut trainer = Trainer::new(cfg, envs, 128, 7).map_err(|e| e.to_string())?;
    let mut reached = None;
    trainer
        .train(|r, _| {
            if reached.is_none() && r.optimal_rate >= 0.95 {
                reached = Some(r.step);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let greedy_correct = (0..2).all(|s| {
        actor_forward(&trainer.params, &ContextualBandit::observation(s))
            .map(|l| usize::from(l[1] > l[0]) == s)
            .unwrap_or(false)
    });
    let detail = format!(
        "95% optimal at step {}, greedy policy {}, {elapsed:.1?}; GAE error {gae_err:.1e}",
        reached.map_or("never".into(), |s| s.to_string()),
        if greedy_correct { "correct" } else { "wrong" },
    );
    if reached.is_some_and(|s| s <= 50_000) && greedy_correct && elapsed < Duration::from_secs(60) && gae_err < 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn end_to_end_learning() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();
    let start = Instant::now();
    let summary = cmd_train(&cfg, dir.path()).map_err(|e| e.to_string())?;
    let trained = start.elapsed();

    let held_out = WorldSet::generated(WorldConfig::default(), 10, 1000).load().map_err(|e| e.to_string())?;
    let ckpt = Checkpoint::load(&summary.checkpoint).map_err(|e| e.to_string())?;
    let window = cfg.env.window;
    let policy = score_worlds(&held_out, 3, window, || Decider::policy(ckpt.clone(), true, 0)).map_err(|e| e.to_string())?;
    let keep_all = score_worlds(&held_out, 3, window, || Decider::KeepAll).map_err(|e| e.to_string())?;
    let wins = policy.iter().zip(&keep_all).filter(|(p, s)| p.median_ate < s.median_ate).count();
    let rate = policy.iter().map(|p| p.keyframe_rate).sum::<f64>() / policy.len() as f64;
    let detail = format!(
        "{} steps in {trained:.0?}; better on {wins}/{} worlds, keyframe rate {rate:.3}",
        summary.final_step,
        policy.len()
    );
    if wins >= 7 && rate < 0.9 && start.elapsed() < Duration::from_secs(3600) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn decision_latency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let params = PolicyParams::new(80, 92, 128, &mut rng);
    let obs: Vec<f64> = (0..80).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut times = Vec::with_capacity(2000);
    for _ in 0..2000 {
        let start = Instant::now();
        let logits = actor_forward(&params, &obs).map_err(|e| e.to_string())?;
        std::hint::black_box(sample_action(logits, &mut rng));
        times.push(start.elapsed());
    }
    times.sort();
    let median = times[times.len() / 2];
    let detail = format!("median {median:.2?}");
    if median < Duration::from_millis(1) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn tum_component_diff(a: &Rigid3, b: &Rigid3) -> f64 {
    let (qa, qb) = (a.quaternion_xyzw(), b.quaternion_xyzw());
    let sign = if qa.iter().zip(&qb).map(|(x, y)| x * y).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let dq = qa.iter().zip(&qb).map(|(x, y)| (x - sign * y).abs()).fold(0.0, f64::max);
    dq.max((a.translation - b.translation).abs().max())
}

fn io_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let traj = Trajectory::from_entries(
        (0..500)
            .map(|i| {
                let pose = Rigid3::from_rotation_vector(random_vec(&mut rng, 3.0), random_vec(&mut rng, 100.0));
                (i as f64, pose)
            })
            .collect(),
    )
    .unwrap();
    let tum = parse_tum_str(&write_tum(&traj)).map_err(|e| e.to_string())?;
    let kitti = parse_kitti_str(&write_kitti(&traj)).map_err(|e| e.to_string())?;
    let mut tum_err: f64 = 0.0;
    let mut kitti_err: f64 = 0.0;
    for ((a, b), c) in traj.iter().zip(tum.iter()).zip(kitti.iter()) {
        tum_err = tum_err.max(tum_component_diff(&a.1, &b.1)).max((a.0 - b.0).abs());
        kitti_err = kitti_err.max(a.1.max_abs_diff(&c.1));
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("traj.tum");
    write_trajectory_file(&path, &traj, PoseFormat::Tum).map_err(|e| e.to_string())?;
    let cfg = EvalConfig {
        sequences: vec![EvalEntry {
            name: Some("same".into()),
            estimate: path.clone(),
            ground_truth: path,
            format: PoseFormat::Tum,
            ground_truth_format: None,
        }],
        ..EvalConfig::default()
    };
    let table = cmd_eval(&cfg, &dir.path().join("eval")).map_err(|e| e.to_string())?;
    let reported = format!("{:.3}", table.rows[0].ate_rmse);
    let detail = format!(
        "TUM {tum_err:.1e}, KITTI {kitti_err:.1e}, identical files report {reported}"
    );
    let lengths_match = tum.len() == traj.len() && kitti.len() == traj.len();
    if lengths_match && tum_err <= 1e-9 && kitti_err <= 1e-9 && reported == "0.000" && table.render().contains("0.000") {
        Ok(detail)
    } else {
        Err(detail)
    }
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("geometry suite", geometry_suite),
        ("window state machine", window_state_machine),
        ("reward values", reward_values),
        ("gradient check", gradient_check),
        ("ppo sanity", ppo_sanity),
        ("end-to-end learning", end_to_end_learning),
        ("decision latency", decision_latency),
        ("trajectory i/o", io_round_trip),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let line = match check() {
            Ok(detail) => format!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed.push(i + 1);
                format!("FAIL {} {name}: {detail}", i + 1)
            }
        };
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{line}");
        let _ = out.flush();
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
