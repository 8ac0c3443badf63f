//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line to stdout
//! (bypassing the test harness capture) and then asserts it.

mod common;

use common::*;
use polo_core::harness::{
    build_world, lemma_diagnostics, polo_schedule, rows_slope, run_algorithm, Algo, ExperimentConfig, LemmaReport,
    World,
};
use polo_core::hard_instances::{
    build, optimal_value_closed_form, policy_value_closed_form, reach_probability, HardInstanceParams,
};
use polo_core::mdp::{policy_evaluation, value_iteration, LowRankMdp};
use polo_core::model_class::{build_distractor_class, log_likelihood, mle_fit, Dataset, DatasetTag};
use polo_core::polo::RunOptions;
use polo_core::rng::{stream, Stream};
use polo_core::tables::Policy;
use polo_core::adversary::{random_loss, LossSequence, AdversaryKind};
use rand::Rng;
use rayon::prelude::*;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

fn report(name: &str, pass: bool, details: &str) {
    let line = format!("\n{} {name}: {details}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

/// What the cross-run criteria need from one learner run.
struct RunCheck {
    label: String,
    report: LemmaReport,
    final_regret: f64,
    slope: Option<f64>,
    final_model_is_true: bool,
}

fn check_run(world: &World, algo: Algo, cfg: &ExperimentConfig, seed: u64, label: &str) -> RunCheck {
    let polo = polo_schedule(cfg, &world.mdp).unwrap().params;
    let run = run_algorithm(world, algo, &polo, seed, RunOptions::default()).unwrap();
    let art = run.artifact.as_ref().expect("learner run");
    let report = lemma_diagnostics(art, &run.rows, &world.mdp, &world.class).unwrap();
    RunCheck {
        label: format!("{label}/{algo}/seed{seed}"),
        report,
        final_regret: run.rows.last().unwrap().cum_regret,
        slope: rows_slope(&run.rows).ok(),
        final_model_is_true: Some(art.epochs.last().unwrap().model_index) == world.class.true_index(),
    }
}

const IDENTITY_RUN: &str = r#"
k_episodes = 500
seeds = [5]
[instance]
kind = "random"
n_states = 5
n_actions = 3
dim = 3
gamma = 0.8
seed = 21
[adversary]
kind = "switching"
period = 50
[model_class]
size = 4
[hyper]
xi = 0.3
epoch_len = 50
eta = 0.5
c_alpha = 0.1
"#;

const MLE_RUN: &str = r#"
k_episodes = 5000
seeds = [0]
[instance]
kind = "hard"
dim = 8
n_states = 12
n_actions = 5
gamma = 0.9
[adversary]
kind = "fixed"
[model_class]
size = 16
perturb_scale = 0.3
"#;

const SUBLINEAR_RUN: &str = r#"
k_episodes = 20000
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]
algos = ["polo", "uniform"]
[instance]
kind = "hard"
dim = 8
n_states = 12
n_actions = 5
gamma = 0.9
target = [1, 2]
epsilon = 0.1
[adversary]
kind = "fixed"
[model_class]
size = 16
[hyper]
xi = 0.05
epoch_len = 1000
eta = 0.5
c_alpha = 0.02
"#;

const ADVERSARIAL_RUN: &str = r#"
k_episodes = 20000
seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]
algos = ["polo", "greedy", "no_explore"]
[instance]
kind = "random"
n_states = 10
n_actions = 4
dim = 4
gamma = 0.9
seed = 11
[adversary]
kind = "switching"
[model_class]
size = 16
[hyper]
xi = 0.05
epoch_len = 1000
eta = 0.5
c_alpha = 0.02
"#;

struct IdentityRun {
    checks: RunCheck,
    secs: f64,
    max_forward: f64,
    max_backward: f64,
    max_occupancy: f64,
    max_decomposition: f64,
    max_row_decomposition: f64,
}

fn identity_run() -> &'static IdentityRun {
    static CELL: OnceLock<IdentityRun> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let cfg = ExperimentConfig::from_toml(IDENTITY_RUN).unwrap();
        let world = build_world(&cfg, 5).unwrap();
        let polo = polo_schedule(&cfg, &world.mdp).unwrap().params;
        let run = run_algorithm(&world, Algo::Polo, &polo, 5, RunOptions::default()).unwrap();
        let art = run.artifact.as_ref().unwrap();
        let (p, gamma, d0) = (world.mdp.transitions(), world.mdp.gamma(), world.mdp.init_dist());
        let (mut e1, mut e2, mut occ_err, mut dec) = (0f64, 0f64, 0f64, 0f64);
        for (i, row) in run.rows.iter().enumerate() {
            let snap = art.epoch_for(row.k);
            let p_hat = world.class.transitions(snap.model_index);
            let loss = world.losses.get(i).table();
            let pi = &art.policies[i];
            let pi_next = art.policies.get(i + 1).unwrap_or(pi);
            e1 = e1.max(simulation_forward_residual(p, p_hat, loss, &snap.bonus, pi, gamma, d0));
            e2 = e2.max(simulation_backward_residual(p, p_hat, loss, &snap.bonus, pi, gamma, d0));
            occ_err = occ_err.max(occupancy_decomposition_residual(p, pi, pi_next, loss, gamma, d0));
            dec = dec.max(decomposition_residual(p, p_hat, loss, &snap.bonus, pi, &world.comparator, gamma, d0));
        }
        let report = lemma_diagnostics(art, &run.rows, &world.mdp, &world.class).unwrap();
        IdentityRun {
            secs: start.elapsed().as_secs_f64(),
            max_forward: e1,
            max_backward: e2,
            max_occupancy: occ_err,
            max_decomposition: dec,
            max_row_decomposition: report.max_decomposition_residual,
            checks: RunCheck {
                label: "identity/polo/seed5".into(),
                final_regret: run.rows.last().unwrap().cum_regret,
                slope: None,
                final_model_is_true: Some(art.epochs.last().unwrap().model_index) == world.class.true_index(),
                report,
            },
        }
    })
}

/// Runs and their wall time.
fn mle_runs() -> &'static (Vec<RunCheck>, f64) {
    static CELL: OnceLock<(Vec<RunCheck>, f64)> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let cfg = ExperimentConfig::from_toml(MLE_RUN).unwrap();
        let runs = (0..100u64)
            .into_par_iter()
            .map(|seed| {
                let world = build_world(&cfg, seed).unwrap();
                check_run(&world, Algo::Polo, &cfg, seed, "mle")
            })
            .collect();
        (runs, start.elapsed().as_secs_f64())
    })
}

struct Sublinear {
    polo: Vec<RunCheck>,
    uniform_final: Vec<f64>,
    uniform_slope: Vec<Option<f64>>,
    secs: f64,
}

fn sublinear_runs() -> &'static Sublinear {
    static CELL: OnceLock<Sublinear> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let cfg = ExperimentConfig::from_toml(SUBLINEAR_RUN).unwrap();
        let per_seed: Vec<(RunCheck, f64, Option<f64>)> = cfg
            .seeds
            .par_iter()
            .map(|&seed| {
                let world = build_world(&cfg, seed).unwrap();
                let polo = polo_schedule(&cfg, &world.mdp).unwrap().params;
                let uni = run_algorithm(&world, Algo::Uniform, &polo, seed, RunOptions::default()).unwrap();
                (
                    check_run(&world, Algo::Polo, &cfg, seed, "sublinear"),
                    uni.rows.last().unwrap().cum_regret,
                    rows_slope(&uni.rows).ok(),
                )
            })
            .collect();
        let mut s = Sublinear {
            polo: Vec::new(),
            uniform_final: Vec::new(),
            uniform_slope: Vec::new(),
            secs: 0.0,
        };
        for (c, f, sl) in per_seed {
            s.polo.push(c);
            s.uniform_final.push(f);
            s.uniform_slope.push(sl);
        }
        s.secs = start.elapsed().as_secs_f64();
        s
    })
}

fn adversarial_runs() -> &'static Vec<(Algo, RunCheck)> {
    static CELL: OnceLock<Vec<(Algo, RunCheck)>> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = ExperimentConfig::from_toml(ADVERSARIAL_RUN).unwrap();
        let tasks: Vec<(Algo, u64)> =
            cfg.algos.iter().flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s))).collect();
        tasks
            .par_iter()
            .map(|&(algo, seed)| {
                let world = build_world(&cfg, seed).unwrap();
                (algo, check_run(&world, algo, &cfg, seed, "adversarial"))
            })
            .collect()
    })
}

/// Every learner run of the suite.
fn all_runs() -> Vec<&'static RunCheck> {
    let mut v = vec![&identity_run().checks];
    v.extend(mle_runs().0.iter());
    v.extend(sublinear_runs().polo.iter());
    v.extend(adversarial_runs().iter().map(|(_, c)| c));
    v
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn exact_identities() {
    let start = Instant::now();
    let mut rng = stream(2024, Stream::Instance);
    let (mut e1, mut e2, mut occ_err, mut dec) = (0f64, 0f64, 0f64, 0f64);
    for _ in 0..100 {
        let mdp = small_instance(&mut rng);
        let (n, n_a, gamma) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
        let p_prime = other_kernel(&mdp, &mut rng);
        let loss = random_table(n, n_a, 0.0, 1.0, &mut rng);
        let bonus = random_table(n, n_a, 0.0, 2.0 / (1.0 - gamma), &mut rng);
        let pi = random_policy(n, n_a, &mut rng);
        let pi2 = random_policy(n, n_a, &mut rng);
        let (p, d0) = (mdp.transitions(), mdp.init_dist());
        e1 = e1.max(simulation_forward_residual(p, &p_prime, &loss, &bonus, &pi, gamma, d0));
        e2 = e2.max(simulation_backward_residual(p, &p_prime, &loss, &bonus, &pi, gamma, d0));
        occ_err = occ_err.max(occupancy_decomposition_residual(p, &pi, &pi2, &loss, gamma, d0));
        dec = dec.max(decomposition_residual(p, &p_prime, &loss, &bonus, &pi, &pi2, gamma, d0));
    }
    let run = identity_run();
    let secs = start.elapsed().as_secs_f64() + run.secs;
    let worst = [e1, e2, occ_err, dec, run.max_forward, run.max_backward, run.max_occupancy, run.max_decomposition, run.max_row_decomposition]
        .into_iter()
        .fold(0.0, f64::max);
    let pass = worst <= 1e-9 && secs <= 60.0;
    report(
        "exact identities (simulation lemma both forms, occupancy decomposition, regret decomposition)",
        pass,
        &format!(
            "random: fwd {e1:.2e} bwd {e2:.2e} occ {occ_err:.2e} dec {dec:.2e}; K=500 run: fwd {:.2e} bwd {:.2e} occ {:.2e} dec {:.2e} rows {:.2e}; tol 1e-9; {secs:.1}s",
            run.max_forward, run.max_backward, run.max_occupancy, run.max_decomposition, run.max_row_decomposition
        ),
    );
    assert!(pass);
}

#[test]
fn hard_instance_closed_forms() {
    let params = HardInstanceParams::reference(8, 12, 5, 0.9).with_target(1, 2, 0.1);
    let inst = build(params).unwrap();
    let gamma = params.gamma;
    let (vt, _) = value_iteration(inst.mdp.transitions(), inst.loss.table(), gamma, 1e-12).unwrap();
    let v_star = 1.0 / (1.0 - gamma) - vt.v[inst.layout().initial()];
    let closed = optimal_value_closed_form(&params).unwrap();
    let err_star = (v_star - 4.86).abs().max((closed - 4.86).abs());
    let mut rng = stream(7, Stream::Instance);
    let mut err_pi: f64 = 0.0;
    for _ in 0..20 {
        let pi = random_policy(12, 5, &mut rng);
        let v = policy_evaluation(inst.mdp.transitions(), &inst.reward, &pi, gamma).unwrap().v[0];
        err_pi = err_pi.max((v - policy_value_closed_form(&params, reach_probability(&params, &pi))).abs());
    }
    let pass = err_star <= 1e-9 && err_pi <= 1e-9;
    report(
        "hard-instance closed forms",
        pass,
        &format!("V*(s11) = {v_star:.12} (target 4.86, err {err_star:.2e}); 20 policies max err {err_pi:.2e}; tol 1e-9"),
    );
    assert!(pass);
}

#[test]
fn brute_force_equivalences() {
    let mut rng = stream(99, Stream::Instance);
    let mut worst_comp: f64 = 0.0;
    for _ in 0..20 {
        let mdp = LowRankMdp::random(4, 3, 3, rng.random_range(0.3..0.95), 1.0, &mut rng).unwrap();
        let k = rng.random_range(1..=6);
        let losses: Vec<_> = (0..k).map(|_| random_loss(4, 3, &mut rng)).collect();
        let seq = LossSequence::new(losses, AdversaryKind::Custom, None).unwrap();
        let total = |pi: &Policy| -> f64 {
            seq.losses()
                .iter()
                .map(|l| policy_evaluation(mdp.transitions(), l.table(), pi, mdp.gamma()).unwrap().expected(mdp.init_dist()))
                .sum()
        };
        let mut best = f64::INFINITY;
        for code in 0..81usize {
            let actions: Vec<usize> = (0..4).map(|s| (code / 3usize.pow(s as u32)) % 3).collect();
            best = best.min(total(&Policy::deterministic(3, &actions).unwrap()));
        }
        let (pi_star, _) = polo_core::harness::comparator_policy(&mdp, &seq).unwrap();
        worst_comp = worst_comp.max((total(&pi_star) - best).abs());
    }

    let mut mismatches = 0;
    for c in 0..10u64 {
        let mut rng = stream(c, Stream::Distractors);
        let truth = LowRankMdp::random(5, 2, 2, 0.8, 0.5, &mut rng).unwrap();
        let class = build_distractor_class(&truth, 8, &mut rng, 0.3).unwrap();
        let mut d_main = Dataset::new(DatasetTag::Main, 5, 2);
        let mut d_aux = Dataset::new(DatasetTag::Aux, 5, 2);
        let mut merged = Dataset::new(DatasetTag::Main, 5, 2);
        for i in 0..60 {
            let (s, a) = (rng.random_range(0..5), rng.random_range(0..2));
            let s2 = truth.step_sample(s, a, &mut rng).unwrap();
            if i % 2 == 0 { d_main.push(s, a, s2).unwrap() } else { d_aux.push(s, a, s2).unwrap() }
            merged.push(s, a, s2).unwrap();
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (i, cand) in class.candidates().iter().enumerate() {
            let ll = log_likelihood(cand, &merged).unwrap();
            if ll > best.1 {
                best = (i, ll);
            }
        }
        if mle_fit(&class, &d_main, &d_aux).unwrap().0 != best.0 {
            mismatches += 1;
        }
    }
    let pass = worst_comp <= 1e-9 && mismatches == 0;
    report(
        "brute-force equivalences",
        pass,
        &format!("comparator vs 81-policy enumeration max err {worst_comp:.2e} (tol 1e-9); MLE vs exhaustive scoring mismatches {mismatches}/10"),
    );
    assert!(pass);
}

#[test]
fn mle_consistency() {
    let (runs, secs) = mle_runs();
    let hits = runs.iter().filter(|r| r.final_model_is_true).count();
    let secs = *secs;
    let pass = hits >= 95 && secs <= 600.0;
    report(
        "MLE consistency on the reference hard instance",
        pass,
        &format!("true model selected at the final epoch in {hits}/100 seeds (need >= 95); {secs:.1}s"),
    );
    assert!(pass);
}

#[test]
fn omd_regret_bound() {
    let runs = all_runs();
    let worst = runs
        .iter()
        .max_by(|a, b| (a.report.omd_sum / a.report.omd_bound).total_cmp(&(b.report.omd_sum / b.report.omd_bound)))
        .unwrap();
    let violations = runs.iter().filter(|r| !r.report.omd_holds).count();
    report(
        "OMD regret bound",
        violations == 0,
        &format!(
            "{violations}/{} runs violate; tightest {}: sum {:.4e} <= bound {:.4e}",
            runs.len(),
            worst.label,
            worst.report.omd_sum,
            worst.report.omd_bound
        ),
    );
    assert_eq!(violations, 0);
}

#[test]
fn sublinearity_vs_uniform() {
    let s = sublinear_runs();
    let slopes: Vec<f64> = s.polo.iter().filter_map(|r| r.slope).collect();
    let fits = slopes.len() == s.polo.len();
    let polo_slope = if fits { mean(&slopes) } else { f64::NAN };
    let polo_final = mean(&s.polo.iter().map(|r| r.final_regret).collect::<Vec<_>>());
    let uni_final = mean(&s.uniform_final);
    let uni_slopes: Vec<f64> = s.uniform_slope.iter().flatten().copied().collect();
    let uni_slope = if uni_slopes.len() == s.uniform_slope.len() { mean(&uni_slopes) } else { f64::NAN };
    let secs = s.secs;
    let pass = polo_slope <= 0.95 && polo_final <= 0.8 * uni_final && uni_slope >= 0.98 && secs <= 1800.0;
    report(
        "sublinearity vs uniform baseline",
        pass,
        &format!(
            "POLO slope {polo_slope:.4} (<= 0.95), cum regret {polo_final:.1} vs 0.8 x uniform {:.1}; uniform slope {uni_slope:.4} (>= 0.98); {secs:.1}s",
            0.8 * uni_final
        ),
    );
    assert!(pass);
}

#[test]
fn adversarial_robustness() {
    let runs = adversarial_runs();
    let mean_of = |algo: Algo| mean(&runs.iter().filter(|(a, _)| *a == algo).map(|(_, r)| r.final_regret).collect::<Vec<_>>());
    let (polo, greedy, no_explore) = (mean_of(Algo::Polo), mean_of(Algo::Greedy), mean_of(Algo::NoExplore));
    let best = greedy.min(no_explore);
    let pass = polo <= 0.9 * best;
    report(
        "adversarial robustness (switching losses)",
        pass,
        &format!("mean cum regret: POLO {polo:.1}, greedy {greedy:.1}, no-explore {no_explore:.1}; need POLO <= 0.9 x {best:.1} = {:.1}", 0.9 * best),
    );
    assert!(pass);
}

#[test]
fn elliptical_potential_bound() {
    let runs = all_runs();
    let violations = runs.iter().filter(|r| !r.report.potential.holds).count();
    let tight = runs
        .iter()
        .max_by(|a, b| (a.report.potential.sum / a.report.potential.bound).total_cmp(&(b.report.potential.sum / b.report.potential.bound)))
        .unwrap();
    report(
        "elliptical potential bound",
        violations == 0,
        &format!(
            "{violations}/{} runs violate; tightest {}: sum {:.4e} <= bound {:.4e}",
            runs.len(),
            tight.label,
            tight.report.potential.sum,
            tight.report.potential.bound
        ),
    );
    assert_eq!(violations, 0);
}

#[test]
fn bonus_covariance_simplex_invariants() {
    let runs = all_runs();
    let bad: Vec<&str> = runs
        .iter()
        .filter(|r| !(r.report.bonus_holds && r.report.covariance_holds && r.report.simplex_holds))
        .map(|r| r.label.as_str())
        .collect();
    let min_bonus = runs.iter().map(|r| r.report.bonus_min).fold(f64::INFINITY, f64::min);
    let max_ratio = runs.iter().map(|r| r.report.bonus_max / r.report.bonus_bound).fold(0.0, f64::max);
    let pd = runs.iter().map(|r| r.report.covariance_pd_margin).fold(f64::INFINITY, f64::min);
    let mono = runs.iter().map(|r| r.report.covariance_monotone_min_eig).fold(f64::INFINITY, f64::min);
    let simplex = runs.iter().map(|r| r.report.max_simplex_violation).fold(0.0, f64::max);
    report(
        "bonus range, covariance monotonicity, policy simplex",
        bad.is_empty(),
        &format!(
            "{} of {} runs violate; min bonus {min_bonus:.2e}, max bonus/bound {max_ratio:.4}, PD margin {pd:.2e}, monotone min eig {mono:.2e}, simplex violation {simplex:.2e}",
            bad.len(),
            runs.len()
        ),
    );
    assert!(bad.is_empty(), "{bad:?}");
}
