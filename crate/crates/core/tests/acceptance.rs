//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::HashMap;
use std::time::Instant;

use common::{finite_difference_check, small_market, with_slack_around};
use menunet::baselines::{blocking_pairs, da_with_slack, rsd, Mechanism, DEFAULT_DRAWS};
use menunet::evaluation::{
    adjacent_swap_identity, audit_set, compare, evaluate_baseline_set, evaluate_menunet,
    EvaluationReport, MENUNET,
};
use menunet::losses::{envy_vector, waste_vector, LossWeights, PriorityMode};
use menunet::market::{
    check_feasible, enumerate_matchings, fairness_violations, generate_instance, generate_split,
    kendall_tau, mallows_partition, rim_sample, waste_violations, DiscreteMatching,
    GenerationConfig, MallowsConfig, MarketInstance, Split,
};
use menunet::mechanism::{
    assign, generate_menus, realize_matching, survival_chain, AssignmentMatrix, MenuMatrix,
    MenuNetwork,
};
use menunet::training::{measure_scaling, train, LossComponent, ScalingConfig, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MASTER_SEED: u64 = 1;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: usize, name: &'static str, pass: bool, detail: String) -> Outcome {
    eprintln!("  [{id}] {name}: {detail}");
    Outcome {
        id,
        name,
        pass,
        detail,
    }
}

fn main() {
    let started = Instant::now();
    let mut results = Vec::new();

    eprintln!("training the desk-scale model (criteria 7, 8)…");
    let (net, report) = headline_run();
    results.push(criterion_7(&report));
    results.push(criterion_8(&report));
    results.push(criterion_1(&net));
    results.push(criterion_2(&net));
    results.push(criterion_3());
    results.push(criterion_4());
    results.push(criterion_5());
    results.push(criterion_6());
    results.push(criterion_9());
    results.push(criterion_10());

    results.sort_by_key(|o| o.id);
    println!();
    for o in &results {
        println!(
            "{} {:>2} {}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.detail
        );
    }
    let failed = results.iter().filter(|o| !o.pass).count();
    println!(
        "\n{} passed, {} failed ({:.0}s)",
        results.len() - failed,
        failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

fn desk_markets() -> GenerationConfig {
    GenerationConfig::default()
}

/// Trains with defaults on 200/50 instances and evaluates MenuNet, RSD and
/// DA on 100 test instances.
fn headline_run() -> (MenuNetwork, EvaluationReport) {
    let gen = desk_markets();
    let train_set = generate_split(&gen, MASTER_SEED, Split::Train, 200).unwrap();
    let val = generate_split(&gen, MASTER_SEED, Split::Val, 50).unwrap();
    let test = generate_split(&gen, MASTER_SEED, Split::Test, 100).unwrap();
    let cfg = TrainConfig::default();
    let t = Instant::now();
    let (net, log) = train(
        MenuNetwork::new(cfg.hidden_width, cfg.seed),
        &train_set,
        &val,
        &cfg,
    )
    .unwrap();
    eprintln!(
        "  trained {} epochs in {:.0}s, best epoch {}",
        log.epochs.len(),
        t.elapsed().as_secs_f64(),
        log.best_epoch
    );
    let w = &cfg.weights;
    let mut report = evaluate_menunet(&net, &test, w).unwrap();
    report.merge(
        evaluate_baseline_set(Mechanism::Rsd, &test, DEFAULT_DRAWS, MASTER_SEED, w).unwrap(),
    );
    report
        .merge(evaluate_baseline_set(Mechanism::Da, &test, DEFAULT_DRAWS, MASTER_SEED, w).unwrap());
    (net, report)
}

fn criterion_7(report: &EvaluationReport) -> Outcome {
    let h = compare(report).unwrap().headline.unwrap();
    let se = |d: &menunet::evaluation::PairedDifference| d.paired_se.max(d.unpaired_se);
    let detail = format!(
        "envy {:.5} vs RSD {:.5} (gap {:.5}, 2se {:.5}); waste {:.5} vs DA {:.5} (gap {:.5}, 2se {:.5})",
        h.envy_vs_rsd.candidate_mean,
        h.envy_vs_rsd.reference_mean,
        -h.envy_vs_rsd.difference,
        2.0 * se(&h.envy_vs_rsd),
        h.waste_vs_da.candidate_mean,
        h.waste_vs_da.reference_mean,
        -h.waste_vs_da.difference,
        2.0 * se(&h.waste_vs_da),
    );
    outcome(
        7,
        "headline comparison",
        h.lower_envy_than_rsd && h.lower_waste_than_da,
        detail,
    )
}

fn criterion_8(report: &EvaluationReport) -> Outcome {
    let s = report.overflow_summary(MENUNET).unwrap();
    let k = report.rows[0].slack;
    let detail = format!(
        "mean Ω {:.3} (limit {:.2}), {:.0}% of instances within 1.05K (need 90%), max {:.3}",
        s.mean,
        1.1 * k,
        100.0 * s.within_tolerance,
        s.max
    );
    outcome(
        8,
        "overflow discipline",
        s.mean <= 1.1 * k && s.within_tolerance >= 0.9,
        detail,
    )
}

fn audit_markets() -> Vec<MarketInstance> {
    generate_split(&desk_markets(), 77, Split::Test, 10).unwrap()
}

fn criterion_1(net: &MenuNetwork) -> Outcome {
    let t = Instant::now();
    let summary = audit_set(net, &audit_markets(), 20, 50, 11).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let checked =
        summary.instances * summary.students_per_instance * summary.misreports_per_student;
    outcome(
        1,
        "menu invariance",
        summary.menu_violations == 0 && checked == 10_000 && secs < 60.0,
        format!(
            "{} violations in {checked} misreports, {secs:.1}s",
            summary.menu_violations
        ),
    )
}

fn criterion_2(net: &MenuNetwork) -> Outcome {
    let summary = audit_set(net, &audit_markets(), 20, 50, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let len = rng.random_range(2..=10);
        let menu: Vec<f64> = std::iter::once(1.0)
            .chain((0..len).map(|_| rng.random_range(1e-6..1.0)))
            .collect();
        let utils: Vec<f64> = std::iter::once(0.0)
            .chain((0..len).map(|_| rng.random_range(0.01..=1.0)))
            .collect();
        let mut order: Vec<usize> = (1..=len).collect();
        order.shuffle(&mut rng);
        let j = rng.random_range(0..len - 1);
        let (lhs, rhs) = adjacent_swap_identity(&menu, &utils, &order, j);
        worst = worst.max((lhs - rhs).abs());
    }
    outcome(
        2,
        "truthful optimality",
        summary.max_deficit <= 1e-12 && worst <= 1e-12,
        format!(
            "max audit deficit {:.2e}; worst swap-identity error {worst:.2e} over 1000 menus",
            summary.max_deficit
        ),
    )
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let weights = LossWeights::default();
    let mode = PriorityMode::Smooth(weights.tau_priority);
    let net = MenuNetwork::new(32, 21);
    let base = small_market(20, 5, 21);
    let mut worst: f64 = 0.0;
    let mut short = Vec::new();
    let mut skipped = 0;
    for above in [false, true] {
        let inst = with_slack_around(&net, &base, &weights, above);
        for component in LossComponent::ALL {
            let out = finite_difference_check(&net, &inst, &weights, mode, component, 20, 3);
            worst = worst.max(out.worst);
            skipped += out.skipped;
            if out.checked < 20 {
                short.push(format!("{component:?}"));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        3,
        "gradient correctness",
        worst <= 1e-4 && short.is_empty() && secs < 300.0,
        format!(
            "worst relative error {worst:.2e} over 12 components x 2 barrier branches x 20 coordinates ({skipped} kink-adjacent skipped), {secs:.1}s"
        ),
    )
}

fn criterion_4() -> Outcome {
    let (m, phi, draws) = (4, 0.5, 100_000);
    let config = MallowsConfig::identity(m, phi);
    let identity: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
    for _ in 0..draws {
        *counts
            .entry(rim_sample(&config, &mut rng).unwrap())
            .or_default() += 1;
    }
    let perms = permutations(m);
    let z = mallows_partition(phi, m);
    let brute_z: f64 = perms
        .iter()
        .map(|p| phi.powi(kendall_tau(p, &identity).unwrap() as i32))
        .sum();
    let tv = 0.5
        * perms
            .iter()
            .map(|p| {
                let exact = phi.powi(kendall_tau(p, &identity).unwrap() as i32) / z;
                let empirical = *counts.get(p).unwrap_or(&0) as f64 / draws as f64;
                (exact - empirical).abs()
            })
            .sum::<f64>();
    outcome(
        4,
        "Mallows fidelity",
        tv <= 0.01 && (z - brute_z).abs() < 1e-12 && perms.len() == 24,
        format!("TV {tv:.4} over 24 permutations; Z closed form {z:.6} vs summed {brute_z:.6}"),
    )
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, m - 1);
            out.push(q);
        }
    }
    out
}

fn criterion_5() -> Outcome {
    let inst = MarketInstance::misaligned_pair();
    let all: Vec<DiscreteMatching> = enumerate_matchings(&inst).unwrap().collect();
    let mut both_ok = 0;
    let mut feasible_nonempty = 0;
    for mu in &all {
        if mu.is_empty_matching() || !check_feasible(mu, &inst).unwrap().feasible {
            continue;
        }
        feasible_nonempty += 1;
        if fairness_violations(mu, &inst).is_empty() && waste_violations(mu, &inst).is_empty() {
            both_ok += 1;
        }
    }
    // ½ μ1 + ½ μ2 with μ1(s1) = c2 and μ2(s2) = c1
    let p = AssignmentMatrix::from_matchings(
        &[
            DiscreteMatching {
                assignment: vec![2, 0],
            },
            DiscreteMatching {
                assignment: vec![0, 1],
            },
        ],
        2,
        2,
    )
    .unwrap();
    let e = envy_vector(&p, &inst, PriorityMode::Hard).unwrap();
    let w = waste_vector(&p, &inst).unwrap();
    let symmetric = e[0] == e[1] && w[0] == w[1];
    outcome(
        5,
        "fairness/waste impossibility",
        all.len() == 9 && both_ok == 0 && feasible_nonempty > 0 && symmetric,
        format!(
            "{} matchings, {feasible_nonempty} feasible non-empty, {both_ok} fair and non-wasteful; lottery E = {e:?}, W = {w:?}",
            all.len()
        ),
    )
}

fn brute_force_chain(menu: &[f64], order: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; menu.len()];
    for mask in 0u32..(1 << order.len()) {
        let mut prob = 1.0;
        for (k, &c) in order.iter().enumerate() {
            prob *= if mask >> k & 1 == 1 {
                menu[c]
            } else {
                1.0 - menu[c]
            };
        }
        let first = (0..order.len()).find(|&k| mask >> k & 1 == 1);
        out[first.map_or(0, |k| order[k])] += prob;
    }
    out
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut chain_err: f64 = 0.0;
    for len in 0..=10 {
        for _ in 0..20 {
            let menu: Vec<f64> = std::iter::once(1.0)
                .chain((0..10).map(|_| rng.random_range(1e-6..1.0 - 1e-6)))
                .collect();
            let mut order: Vec<usize> = (1..=10).collect();
            order.shuffle(&mut rng);
            order.truncate(len);
            let fast = survival_chain(&menu, &order);
            let slow = brute_force_chain(&menu, &order);
            for (a, b) in fast.iter().zip(&slow) {
                chain_err = chain_err.max((a - b).abs());
            }
        }
    }
    let inst = small_market(12, 5, 6);
    let menus: MenuMatrix = generate_menus(&MenuNetwork::new(16, 6), &inst).unwrap();
    let p = assign(&menus, &inst).unwrap();
    let draws = 100_000;
    let matchings: Vec<DiscreteMatching> = (0..draws)
        .map(|_| realize_matching(&menus, &inst, &mut rng).unwrap())
        .collect();
    let empirical =
        AssignmentMatrix::from_matchings(&matchings, inst.n_students, inst.n_schools).unwrap();
    let mc_err = empirical.matrix().max_abs_diff(p.matrix());
    outcome(
        6,
        "assignment rule",
        chain_err <= 1e-12 && mc_err <= 0.01,
        format!("chain vs enumeration {chain_err:.2e} (lengths 0-10); Monte Carlo max error {mc_err:.4} at 1e5 draws"),
    )
}

fn criterion_9() -> Outcome {
    let template = ScalingConfig::default();
    let rows = measure_scaling(&template, &[200, 400]).unwrap();
    let ratio = rows[1].seconds_per_epoch / rows[0].seconds_per_epoch;
    outcome(
        9,
        "scaling trend",
        (1.5..=3.0).contains(&ratio),
        format!(
            "{:.2}s/epoch at n=200, {:.2}s at n=400, ratio {ratio:.2}",
            rows[0].seconds_per_epoch, rows[1].seconds_per_epoch
        ),
    )
}

/// Blocking pairs of `mu` against `caps`, straight from the definition.
fn naive_blocking(
    mu: &DiscreteMatching,
    inst: &MarketInstance,
    caps: &[u32],
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for s in 0..inst.n_students {
        let current = inst.utility(s, mu.assignment[s]);
        for c in 1..=inst.n_schools {
            if inst.utility(s, c) <= current.max(0.0) {
                continue;
            }
            let seated: Vec<usize> = (0..inst.n_students)
                .filter(|&t| mu.assignment[t] == c)
                .collect();
            let open = (seated.len() as u32) < caps[c - 1];
            if open
                || seated
                    .iter()
                    .any(|&t| inst.priority(t, c) < inst.priority(s, c))
            {
                out.push((s, c));
            }
        }
    }
    out
}

fn all_assignments(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|a| {
                (0..=m).map(move |c| {
                    let mut b = a.clone();
                    b.push(c);
                    b
                })
            })
            .collect();
    }
    out
}

fn criterion_10() -> Outcome {
    let mut problems = Vec::new();
    let mut small_checked = 0;
    // exhaustive: n ≤ 6, m ≤ 3
    for seed in 0..60u64 {
        let n = 2 + (seed % 5) as usize;
        let m = 1 + (seed % 3) as usize;
        let cfg = GenerationConfig {
            n_students: n,
            n_schools: m,
            top_k_acceptable: m,
            slack_fraction: 0.2 + 0.1 * (seed % 4) as f64,
            ..Default::default()
        };
        let inst = generate_instance(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let (mu, caps) = da_with_slack(&inst, &mut rng);
            let stable: Vec<Vec<usize>> = all_assignments(n, m)
                .into_iter()
                .filter(|a| {
                    let cand = DiscreteMatching {
                        assignment: a.clone(),
                    };
                    let rational = a
                        .iter()
                        .enumerate()
                        .all(|(s, &c)| c == 0 || inst.is_acceptable(s, c));
                    let within = (1..=m)
                        .all(|c| a.iter().filter(|&&x| x == c).count() as u32 <= caps[c - 1]);
                    rational && within && naive_blocking(&cand, &inst, &caps).is_empty()
                })
                .collect();
            if !stable.contains(&mu.assignment) {
                problems.push(format!("seed {seed}: DA output not stable"));
            }
            let optimal = stable.iter().all(|other| {
                (0..n).all(|s| inst.utility(s, mu.assignment[s]) >= inst.utility(s, other[s]))
            });
            if !optimal {
                problems.push(format!("seed {seed}: DA not student-optimal"));
            }
            if blocking_pairs(&mu, &inst, &caps) != naive_blocking(&mu, &inst, &caps) {
                problems.push(format!(
                    "seed {seed}: blocking-pair scan disagrees with brute force"
                ));
            }
            let r = rsd(&inst, &mut rng);
            if !check_feasible(&r, &inst).unwrap().feasible
                || !waste_violations(&r, &inst).is_empty()
            {
                problems.push(format!("seed {seed}: RSD draw infeasible or wasteful"));
            }
            small_checked += 1;
        }
    }
    // per draw at n = 100
    let mut big_draws = 0;
    for inst in generate_split(&desk_markets(), 99, Split::Test, 5).unwrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(inst.seed);
        for _ in 0..DEFAULT_DRAWS {
            let (mu, caps) = da_with_slack(&inst, &mut rng);
            if !blocking_pairs(&mu, &inst, &caps).is_empty()
                || !naive_blocking(&mu, &inst, &caps).is_empty()
            {
                problems.push(format!(
                    "instance {}: DA draw has a blocking pair",
                    inst.seed
                ));
            }
            let r = rsd(&inst, &mut rng);
            if !check_feasible(&r, &inst).unwrap().feasible
                || !waste_violations(&r, &inst).is_empty()
            {
                problems.push(format!(
                    "instance {}: RSD draw infeasible or wasteful",
                    inst.seed
                ));
            }
            big_draws += 1;
        }
    }
    problems.dedup();
    outcome(
        10,
        "baseline correctness",
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{small_checked} small markets exhaustively, {big_draws} DA and RSD draws at n=100"
            )
        } else {
            problems.join("; ")
        },
    )
}
