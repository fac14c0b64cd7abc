//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safenav::belief::{ParticleBelief, Reinvigoration};
use safenav::ccpomcp::{plan_cc, CcSearchParams};
use safenav::environment::{builtin_env, CellKind, Coord, GridMap, Region, Terminal};
use safenav::harness::{run_episode, run_episodes, summarize, BatchSummary, Outcome, COLLISION_THRESHOLD};
use safenav::model::{Action, AgentState, GenerativeModel, MotionCommand, Observation, RewardConfig};
use safenav::planner::{bfs_shortest_path, HlpStrategy, StrategyKey};
use safenav::pomcp::{plan, SearchParams};
use safenav::{Config, Episode, Noise};

const ENV: &str = "ENV-TRAINING";
const SEED: u64 = 7_000;
const RUNS: usize = 50;

fn report(id: u32, ok: bool, detail: String) {
    let line = format!("{} criterion {id}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
    assert!(ok, "criterion {id} failed: {detail}");
}

struct Batch {
    cfg: Config,
    episodes: Vec<Episode>,
    summary: BatchSummary,
}

fn batch(key: StrategyKey, runs: usize) -> Batch {
    let mut cfg = Config::builtin(ENV, key).unwrap();
    cfg.seed = SEED;
    cfg.n_runs = runs;
    let episodes = run_episodes(&cfg).unwrap();
    let summary = summarize(&cfg, &episodes);
    Batch { cfg, episodes, summary }
}

fn pomcp_batch() -> &'static Batch {
    static B: OnceLock<Batch> = OnceLock::new();
    B.get_or_init(|| batch(StrategyKey::Pomcp, RUNS))
}

fn cc_batch() -> &'static Batch {
    static B: OnceLock<Batch> = OnceLock::new();
    B.get_or_init(|| batch(StrategyKey::CcPomcp, RUNS))
}

fn count(b: &Batch, o: Outcome) -> usize {
    b.episodes.iter().filter(|e| e.outcome == o).count()
}

#[test]
fn c1_online_planners_never_surface_in_a_lane() {
    let (p, c) = (pomcp_batch(), cc_batch());
    let (sp, sc) = (count(p, Outcome::FailedSurfaced), count(c, Outcome::FailedSurfaced));
    report(
        1,
        sp == 0 && sc == 0,
        format!("surfacing failures POMCP {sp}/{} CC-POMCP {sc}/{}", p.episodes.len(), c.episodes.len()),
    );
}

#[test]
fn c2_cc_pomcp_respects_the_collision_threshold_on_average() {
    let s = &cc_batch().summary;
    let limit = COLLISION_THRESHOLD + 0.03;
    report(
        2,
        s.n_runs >= 30 && s.cumulative_collision.mean <= limit,
        format!(
            "CC-POMCP mean cumulative collision {:.4} (std {:.4}, n {}) <= {limit:.2}",
            s.cumulative_collision.mean, s.cumulative_collision.std, s.n_runs
        ),
    );
}

#[test]
fn c3_pomcp_exceeds_the_collision_threshold() {
    let s = &pomcp_batch().summary;
    report(
        3,
        s.n_runs >= 30 && s.cumulative_collision.mean > COLLISION_THRESHOLD,
        format!(
            "POMCP mean cumulative collision {:.4} (std {:.4}, n {}) > {COLLISION_THRESHOLD:.2}",
            s.cumulative_collision.mean, s.cumulative_collision.std, s.n_runs
        ),
    );
}

#[test]
fn c4_static_baselines_surface_in_lanes() {
    let mut lines = Vec::new();
    let mut ok = true;
    for k in 1..=3 {
        let b = batch(StrategyKey::Static(k), RUNS);
        let share = count(&b, Outcome::FailedSurfaced) as f64 / b.episodes.len() as f64;
        ok &= share >= 0.5;
        lines.push(format!("static-{k} {share:.2}"));
    }
    report(4, ok, format!("surfacing share over {RUNS} runs: {} (need >= 0.50)", lines.join(", ")));
}

#[test]
fn c5_pomcp_fails_at_least_twice_as_often() {
    let (p, c) = (&pomcp_batch().summary, &cc_batch().summary);
    let (fp, fc) = (p.failure_rate.mean, c.failure_rate.mean);
    report(
        5,
        p.n_runs >= 50 && c.n_runs >= 50 && fp >= 2.0 * fc,
        format!("physical failure rate POMCP {fp:.3} vs CC-POMCP {fc:.3} (need POMCP >= 2x)"),
    );
}

// Exact finite-horizon expectimax over a weighted particle set. Motion is
// noiseless, so every branch is deterministic apart from the GPS reading.
fn exact_q(model: &GenerativeModel<'_, f64>, belief: &[(AgentState, f64)], a: Action, depth: usize) -> f64 {
    let gamma = 0.999;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut immediate = 0.0;
    let mut groups: BTreeMap<String, Vec<(AgentState, f64)>> = BTreeMap::new();
    for &(s, w) in belief {
        let out = model.step(&s, a, &mut rng).unwrap();
        immediate += w * out.reward;
        if out.next_state.terminal.is_active() {
            let key = match out.observation {
                Observation::None => "none".to_string(),
                Observation::Gps(c) => format!("{},{}", c.x, c.y),
            };
            groups.entry(key).or_default().push((out.next_state, w));
        }
    }
    let mut future = 0.0;
    for g in groups.values() {
        let mass: f64 = g.iter().map(|p| p.1).sum();
        let next: Vec<_> = g.iter().map(|&(s, w)| (s, w / mass)).collect();
        future += mass * exact_v(model, &next, depth - 1);
    }
    immediate + gamma * future
}

fn exact_v(model: &GenerativeModel<'_, f64>, belief: &[(AgentState, f64)], depth: usize) -> f64 {
    if depth == 0 {
        return 0.0;
    }
    Action::ALL
        .into_iter()
        .map(|a| exact_q(model, belief, a, depth))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn c6_pomcp_matches_value_iteration() {
    let map: GridMap = ".....\n..#..\nS***G\n.....\n.....\n".parse().unwrap();
    let route: Vec<Coord> = map.path()[1..].to_vec();
    let model = GenerativeModel::new(&map, &route, RewardConfig::pomcp(), Noise::noiseless());
    let anchored = |pos: Coord| AgentState {
        position: pos,
        estimate: Coord::new(1, 2),
        waypoint_index: 0,
        terminal: Terminal::Active,
    };
    let params = SearchParams {
        n_sims: 4000,
        tree_depth: 8,
        rollout_depth: 8,
        ..SearchParams::pomcp()
    };
    let cases = [
        ("drifted half", vec![(1, 2); 5].into_iter().chain(vec![(1, 1); 5]).collect::<Vec<_>>()),
        ("on track", vec![(1, 2); 10]),
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, cells) in cases {
        let particles: Vec<AgentState> = cells.iter().map(|&(x, y)| anchored(Coord::new(x, y))).collect();
        let w = 1.0 / particles.len() as f64;
        let weighted: Vec<_> = particles.iter().map(|&s| (s, w)).collect();
        let qm = exact_q(&model, &weighted, Action::Move, 8);
        let ql = exact_q(&model, &weighted, Action::Localize, 8);
        let best = if qm >= ql { Action::Move } else { Action::Localize };
        let belief = ParticleBelief::from_particles(particles).unwrap();
        let hits = (0..100u64)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                plan(&belief, &model, &params, &mut rng).unwrap() == best
            })
            .count();
        ok &= hits >= 95;
        lines.push(format!("{name}: Q(move) {qm:.3} Q(localize) {ql:.3} -> {best:?}, matched {hits}/100"));
    }
    report(6, ok, lines.join("; "));
}

// Floyd-Warshall over traversable cells.
fn all_pairs(map: &GridMap) -> (Vec<Coord>, Vec<Vec<u32>>) {
    let cells: Vec<Coord> = (0..map.height() as i32)
        .flat_map(|y| (0..map.width() as i32).map(move |x| Coord::new(x, y)))
        .filter(|&c| map.is_traversable(c))
        .collect();
    let n = cells.len();
    let inf = u32::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for j in 0..n {
            if cells[i].manhattan(cells[j]) == 1 {
                d[i][j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    (cells, d)
}

fn fixture_grids() -> Vec<GridMap> {
    let texts = [
        "S**G\n",
        "S.#.\n*.#.\n*...\n*##.\n**G.\n",
        ".....\n.#.#.\nS***G\n.#.#.\n.....\n",
        "S******\n#####.*\n...#..*\n.#.#.#*\n.#...#G\n",
        ".......\n.#####.\n.#...#.\n.#.#.#.\n...#...\n####.##\nS*****G\n",
        "........\n.######.\n.#....#.\n.#.##.#.\n.#.#G.#.\n.#.#*##.\n.#.#*...\n...#S###\n",
        "S~~~~~~G\n*......+\n********\n",
    ];
    let mut maps: Vec<GridMap> = texts.iter().map(|t| t.parse().unwrap()).collect();
    // Seeded random fields below an open top row that carries the route.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for i in 0..40 {
        let w = 3 + i % 6;
        let h = 2 + (i / 6) % 7;
        let mut cells = vec![CellKind::Free; w * h];
        for c in cells.iter_mut().skip(w) {
            let u: f64 = rand::Rng::gen(&mut rng);
            *c = if u < 0.35 { CellKind::Obstacle } else if u < 0.45 { CellKind::SurfaceHazard } else { CellKind::Free };
        }
        let path: Vec<Coord> = (0..w as i32).map(|x| Coord::new(x, 0)).collect();
        maps.push(GridMap::new(w, h, cells, path, Vec::<Region>::new()).unwrap());
    }
    maps
}

#[test]
fn c7_bfs_matches_brute_force_shortest_paths() {
    let maps = fixture_grids();
    let mut pairs = 0usize;
    let mut mismatches = 0usize;
    for map in &maps {
        assert!(map.width() <= 8 && map.height() <= 8);
        let (cells, d) = all_pairs(map);
        for (i, &a) in cells.iter().enumerate() {
            for (j, &b) in cells.iter().enumerate() {
                pairs += 1;
                let bfs = bfs_shortest_path(map, a, b).ok().map(|p| p.len() as u32 - 1);
                let oracle = (d[i][j] < u32::MAX / 4).then_some(d[i][j]);
                if bfs != oracle {
                    mismatches += 1;
                }
            }
        }
    }
    report(
        7,
        mismatches == 0,
        format!("{} grids, {pairs} cell pairs, {mismatches} length mismatches", maps.len()),
    );
}

fn noise_frequencies() -> [f64; 3] {
    let map: GridMap = format!("S{}G\n", "*".repeat(8)).parse().unwrap();
    let route = map.path().to_vec();
    let model = GenerativeModel::new(&map, &route, RewardConfig::pomcp(), Noise::default());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1_000_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let (p, _) = model.apply_command(Coord::new(2, 0), MotionCommand::Right, &mut rng);
        match p.x - 2 {
            1 => counts[0] += 1,
            2 => counts[1] += 1,
            0 => counts[2] += 1,
            d => panic!("moved {d} cells"),
        }
    }
    counts.map(|c| c as f64 / n as f64)
}

fn particles_conserved() -> bool {
    let map = builtin_env(ENV).unwrap();
    let route = map.path().to_vec();
    let model = GenerativeModel::new(&map, &route, RewardConfig::pomcp(), Noise::default());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut b = ParticleBelief::new(&map, 1000).unwrap();
    for _ in 0..30 {
        b = b.propagate(&model, &mut rng);
        if b.len() != 1000 {
            return false;
        }
    }
    let fix = b.active().next().map_or(map.start(), |p| p.position);
    let (u, _) = b.update_with_gps(fix, &map, &route, &Reinvigoration::<f64>::default(), &mut rng).unwrap();
    u.len() == 1000
}

fn cc_reduces_to_pomcp() -> (usize, usize) {
    let map = builtin_env(ENV).unwrap();
    let route = map.path()[1..].to_vec();
    let model = GenerativeModel::new(&map, &route, RewardConfig::pomcp(), Noise::default());
    let base = SearchParams { n_sims: 300, ..SearchParams::pomcp() };
    let cc = CcSearchParams {
        base,
        alpha: 0.0,
        c_hat: f64::INFINITY,
        lambda_max: None,
        reset_lambda: true,
    };
    let belief = ParticleBelief::new(&map, 200).unwrap();
    let mut same = 0;
    let trials = 20;
    for seed in 0..trials {
        let a = plan(&belief, &model, &base, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let d = plan_cc(&belief, &model, &cc, f64::INFINITY, 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        same += usize::from(a == d.action && d.lambda == 0.0);
    }
    (same, trials as usize)
}

#[test]
fn c8_property_suite() {
    let freq = noise_frequencies();
    let noise_ok = freq.iter().zip([0.94, 0.03, 0.03]).all(|(f, p)| (f - p).abs() <= 0.005);

    let conserved = particles_conserved();

    let cc = cc_batch();
    let cap = match &cc.cfg.strategy {
        HlpStrategy::OnlineCcPomcp(p) => p.lambda_cap(&cc.cfg.rewards),
        _ => unreachable!(),
    };
    let lambda_ok = cc
        .episodes
        .iter()
        .flat_map(|e| &e.lambda_trace)
        .all(|&l| (0.0..=cap).contains(&l));

    let monotone = [pomcp_batch(), cc]
        .iter()
        .flat_map(|b| &b.episodes)
        .all(|e| e.cumulative_collision_trace.windows(2).all(|w| w[0] <= w[1]));

    let mut deterministic = true;
    for b in [pomcp_batch(), cc] {
        for e in b.episodes.iter().take(3) {
            deterministic &= run_episode(&b.cfg, e.seed).unwrap() == *e;
        }
    }

    let (same, trials) = cc_reduces_to_pomcp();

    let ok = noise_ok && conserved && lambda_ok && monotone && deterministic && same == trials;
    report(
        8,
        ok,
        format!(
            "noise ({:.4}, {:.4}, {:.4}) {}; particles conserved {conserved}; lambda in [0, {cap:.0}] {lambda_ok}; \
             monotone trace {monotone}; deterministic {deterministic}; CC reduces to POMCP {same}/{trials}",
            freq[0],
            freq[1],
            freq[2],
            if noise_ok { "ok" } else { "out of tolerance" },
        ),
    );
}

#[test]
fn region_localization_profile_is_reported() {
    let by_region: HashMap<_, _> = cc_batch()
        .summary
        .localize_per_region
        .iter()
        .map(|(k, v)| (k.clone(), v.mean))
        .collect();
    let lanes: f64 = ["lane-1", "lane-2"].iter().map(|k| by_region[*k]).sum();
    println!("CC-POMCP localizations per region: {by_region:?}");
    assert!(lanes <= 0.5, "CC-POMCP should rarely surface inside lanes");
}
