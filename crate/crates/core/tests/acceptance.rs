//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails.

use std::path::Path;
use std::time::Instant;

use elevgraph::cli::{cmd_compare, cmd_simulate, cmd_solve, RunConfig};
use elevgraph::eval::{compare_variants, run_cell, ComparisonReport, BASELINE_CAVEAT};
use elevgraph::factors::{make_coupling_factor, BetweenFactor, ElevationPriorFactor, PriorFactor};
use elevgraph::geometry::{exp, log};
use elevgraph::io::parse_comparison_csv;
use elevgraph::lanes::{
    build_graph, expected_factor_count, extract_output_trajectory, LaneBuilder, LaneConfig, Variant,
};
use elevgraph::sim::{simulate, Preset, ScenarioSpec, SensorNoiseSpec, SimulatedRun};
use elevgraph::solver::{incremental_update, optimize};
use elevgraph::{CouplingSigmas, DiagonalNoise, Factor, Graph, Pose3, SolverSettings, Twist, Values};
use nalgebra::Vector6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

struct Outcome {
    failed: usize,
}

impl Outcome {
    fn report(&mut self, id: &str, ok: bool, detail: String) {
        println!("{} {id}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed += 1;
        }
    }
}

fn lanes(variants: &[Variant]) -> Vec<LaneConfig> {
    variants.iter().copied().map(LaneConfig::for_variant).collect()
}

fn mean_dz(r: &ComparisonReport, v: Variant) -> f64 {
    let a = r.aggregate(v).unwrap();
    if a.count == SEEDS.len() {
        a.mean.delta_z
    } else {
        f64::NAN
    }
}

fn mean_dxy(r: &ComparisonReport, v: Variant) -> f64 {
    r.aggregate(v).unwrap().mean.delta_xy
}

fn random_twist(rng: &mut ChaCha8Rng, max_angle: f64) -> Twist {
    let v = Vector6::from_fn(|i, _| {
        if i < 3 {
            rng.random_range(-10.0..10.0)
        } else {
            rng.random_range(-1.0..1.0)
        }
    });
    let mut t = Twist::from_vector(&v);
    let angle = rng.random_range(0.0..max_angle);
    if t.w.norm() > 1e-9 {
        t.w = t.w.normalize() * angle;
    }
    t
}

fn short_run(keyframes: usize, noise: &SensorNoiseSpec, seed: u64) -> SimulatedRun {
    let spec = ScenarioSpec {
        path_length: 2.0 * (keyframes - 1) as f64,
        ..Preset::Factory.scenario()
    };
    simulate(&spec, noise, seed).unwrap()
}

fn criterion_1_and_2(out: &mut Outcome) {
    let settings = SolverSettings::default();
    for preset in Preset::ALL {
        let spec = preset.scenario();
        let start = Instant::now();
        let report = compare_variants(
            preset.name(),
            &spec,
            &preset.noise(),
            &lanes(&[Variant::Baseline, Variant::Parallel]),
            &SEEDS,
            &settings,
        )
        .unwrap();
        let elapsed = start.elapsed().as_secs_f64();
        let base = mean_dz(&report, Variant::Baseline);
        let par = mean_dz(&report, Variant::Parallel);
        let id = match preset {
            Preset::Factory => "criterion 1",
            Preset::Cocopark => "criterion 2",
        };
        out.report(
            &format!("{id} baseline delta_z >= 30 m"),
            base >= 30.0,
            format!("{} mean over {} seeds {base:.3} m", preset.name(), SEEDS.len()),
        );
        out.report(
            &format!("{id} parallel delta_z <= 0.3 m"),
            par <= 0.3,
            format!("{} mean over {} seeds {par:.4} m", preset.name(), SEEDS.len()),
        );
        match preset {
            Preset::Factory => {
                let unbiased = SensorNoiseSpec {
                    lidar_z_bias_per_keyframe: 0.0,
                    ..preset.noise()
                };
                let reference =
                    compare_variants("factory", &spec, &unbiased, &lanes(&[Variant::Baseline]), &SEEDS, &settings)
                        .unwrap();
                let limit = 1.5 * mean_dxy(&reference, Variant::Baseline);
                let dxy = mean_dxy(&report, Variant::Parallel);
                out.report(
                    "criterion 1 parallel delta_xy <= 1.5x unbiased baseline",
                    dxy <= limit,
                    format!("{dxy:.4} m vs limit {limit:.4} m"),
                );

                let run = simulate(&spec, &preset.noise(), 1).unwrap();
                let t = Instant::now();
                let cell = run_cell("factory", &run, &LaneConfig::for_variant(Variant::Parallel), &settings, 1);
                let one = t.elapsed().as_secs_f64();
                out.report(
                    "criterion 1 runtime <= 60 s per seed",
                    one <= 60.0 && !cell.loop_closure.diverged,
                    format!(
                        "parallel solve {one:.2} s single-threaded; {elapsed:.2} s for the 20-cell sweep"
                    ),
                );
            }
            Preset::Cocopark => out.report(
                "criterion 2 caveat present",
                report.caveats.iter().any(|c| c == BASELINE_CAVEAT),
                format!("{} caveat(s)", report.caveats.len()),
            ),
        }
    }
}

fn criterion_3(out: &mut Outcome) {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "seeds = {SEEDS:?}\noutput_dir = \"{}\"\n",
        dir.path().display()
    );
    let cfg = RunConfig::from_toml(&text).unwrap().expand().unwrap();
    cmd_compare(&cfg, false, false).unwrap();
    let rows = parse_comparison_csv(&std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap()).unwrap();
    let expected_rows = 2 * 3 * (SEEDS.len() + 2);
    out.report(
        "criterion 3 full comparison.csv",
        rows.len() == expected_rows && rows.iter().all(|r| !r.diverged),
        format!("{} rows, expected {expected_rows}", rows.len()),
    );
    for preset in Preset::ALL {
        let dz = |v: Variant| {
            rows.iter()
                .find(|r| r.scenario == preset.name() && r.variant == v.name() && r.seed == "mean")
                .and_then(|r| r.delta_z_m)
                .unwrap_or(f64::NAN)
        };
        let (b, s, p) = (dz(Variant::Baseline), dz(Variant::Serial), dz(Variant::Parallel));
        out.report(
            &format!("criterion 3 parallel delta_z smallest on {}", preset.name()),
            p < s && p < b,
            format!("baseline {b:.3} serial {s:.4} parallel {p:.4} m"),
        );
    }
}

fn criterion_4(out: &mut Outcome) {
    // (a) Jacobians against central-difference directional derivatives
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let noise = DiagonalNoise::new(&[0.05, 0.05, 0.02, 0.01, 0.01, 0.01]).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = exp(&random_twist(&mut rng, 3.0));
        let b = exp(&random_twist(&mut rng, 3.0));
        let m = exp(&random_twist(&mut rng, 3.0));
        let factors: Vec<Factor> = vec![
            PriorFactor::new(0, m, noise.clone()).unwrap().into(),
            BetweenFactor::new(0, 1, m, noise.clone()).unwrap().into(),
            make_coupling_factor(0, 1, &CouplingSigmas::default()).unwrap().into(),
            ElevationPriorFactor::new(0, rng.random_range(-5.0..5.0), 0.05).unwrap().into(),
        ];
        for f in &factors {
            let poses = &[a, b][..f.keys().len()];
            let lin = f.linearize(poses);
            for slot in 0..poses.len() {
                let dir = Vector6::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
                const H: f64 = 1e-4;
                let eval = |s: f64| {
                    let mut p = poses.to_vec();
                    p[slot] = poses[slot].retract(&Twist::from_vector(&(dir * s)));
                    f.whitened_residual(&p)
                };
                let oracle = (eval(H) - eval(-H)) / (2.0 * H);
                let predicted = lin.jacobians[slot] * dir;
                worst = worst.max((predicted - oracle).norm() / oracle.norm().max(1e-6));
            }
        }
    }
    out.report(
        "criterion 4a Jacobian directional check",
        worst <= 1e-5,
        format!("worst relative error {worst:.2e} over 100 points x 4 factor kinds"),
    );

    // (b) exp/log round trip
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let max_angle = if i % 10 == 0 { 1e-7 } else { std::f64::consts::PI - 1e-3 };
        let t = random_twist(&mut rng, max_angle);
        let back = log(&exp(&t));
        worst = worst.max((back.to_vector() - t.to_vector()).amax());
    }
    out.report(
        "criterion 4b exp/log round trip",
        worst <= 1e-9,
        format!("worst {worst:.2e} over 1000 twists"),
    );

    // (c) noiseless recovery
    let run = simulate(&Preset::Factory.scenario(), &SensorNoiseSpec::noiseless(), 1).unwrap();
    let mut worst_pose = 0.0f64;
    let mut worst_cost = 0.0f64;
    for v in Variant::ALL {
        let h = build_graph(&run.lidar_odom, &run.fk_odom, &LaneConfig::for_variant(v)).unwrap();
        let (values, stats) = optimize(&h.graph, &h.values, &SolverSettings::default()).unwrap();
        let traj = extract_output_trajectory(&h, &values).unwrap();
        worst_cost = worst_cost.max(stats.final_cost);
        for (a, b) in traj.iter().zip(&run.ground_truth) {
            worst_pose = worst_pose.max(a.pose.max_abs_diff(&b.pose));
        }
    }
    out.report(
        "criterion 4c noiseless recovery",
        worst_pose <= 1e-8 && worst_cost <= 1e-10,
        format!("worst pose diff {worst_pose:.2e}, worst cost {worst_cost:.2e}, all variants"),
    );

    // (d) monotone accepted steps, on the noisy default problem
    let run = simulate(&Preset::Cocopark.scenario(), &Preset::Cocopark.noise(), 3).unwrap();
    let mut increases = 0;
    for v in Variant::ALL {
        let cell = run_cell("cocopark", &run, &LaneConfig::for_variant(v), &SolverSettings::default(), 3);
        let history = &cell.stats.as_ref().unwrap().cost_history;
        increases += history.windows(2).filter(|w| w[1] > w[0]).count();
    }
    out.report(
        "criterion 4d accepted LM steps never increase cost",
        increases == 0,
        format!("{increases} increases across three variants"),
    );

    // (e) incremental warm start against cold start
    let run = short_run(50, &Preset::Factory.noise(), 5);
    let cfg = LaneConfig::for_variant(Variant::Parallel);
    let settings = SolverSettings::default();
    let aligned = elevgraph::lanes::align_fk_to_keyframes(&run.fk_odom, &run.lidar_odom.times()).unwrap();
    let mut builder = LaneBuilder::new(&cfg).unwrap();
    let mut graph = Graph::new();
    let mut current = Values::new();
    for (k, s) in run.lidar_odom.samples().iter().enumerate() {
        let (factors, new_values) = builder.push(s.t, s.pose, Some(aligned[k])).unwrap();
        current = incremental_update(&mut graph, factors, &new_values, &current, &settings)
            .unwrap()
            .0;
    }
    let h = builder.finish(graph, current.clone());
    let cold = build_graph(&run.lidar_odom, &run.fk_odom, &cfg).unwrap();
    let (cv, _) = optimize(&cold.graph, &cold.values, &settings).unwrap();
    let a = extract_output_trajectory(&h, &current).unwrap();
    let b = extract_output_trajectory(&cold, &cv).unwrap();
    let worst = a
        .iter()
        .zip(&b)
        .map(|(p, q)| (p.pose.translation() - q.pose.translation()).amax())
        .fold(0.0, f64::max);
    out.report(
        "criterion 4e incremental equals cold start",
        worst <= 1e-6 && a.len() == 50,
        format!("worst translation diff {worst:.2e} m over 50 keyframes"),
    );
}

fn criterion_5(out: &mut Outcome) {
    let mut mismatches = Vec::new();
    for n in [2usize, 3, 10, 350] {
        for every in [1usize, 2, 3, 7] {
            for v in Variant::ALL {
                let cfg = LaneConfig {
                    couple_every: every,
                    ..LaneConfig::for_variant(v)
                };
                let mut b = LaneBuilder::new(&cfg).unwrap();
                let mut count = 0;
                for k in 0..n {
                    let p = Pose3::from_translation(2.0 * k as f64, 0.0, 0.0);
                    count += b.push(k as f64, p, Some(p)).unwrap().0.len();
                }
                if count != expected_factor_count(v, n, every) {
                    mismatches.push(format!("{v} n={n} every={every}"));
                }
            }
        }
    }
    out.report(
        "criterion 5 factor counts",
        mismatches.is_empty(),
        format!("N in {{2, 3, 10, 350}}, stride in {{1, 2, 3, 7}}, {} mismatches", mismatches.len()),
    );

    let run = short_run(60, &Preset::Factory.noise(), 3);
    let settings = SolverSettings::default();
    let h = build_graph(&run.lidar_odom, &run.fk_odom, &LaneConfig::for_variant(Variant::Parallel)).unwrap();
    let (values, _) = optimize(&h.graph, &h.values, &settings).unwrap();
    let reference = extract_output_trajectory(&h, &values).unwrap();
    let without_y: Values = values.iter().filter(|(id, _)| !h.y_ids.contains(id)).map(|(i, p)| (i, *p)).collect();
    let scrambled: Values = values
        .iter()
        .map(|(id, p)| (id, if h.y_ids.contains(&id) { Pose3::from_translation(1e3, 1e3, 1e3) } else { *p }))
        .collect();
    let ok = extract_output_trajectory(&h, &without_y).ok() == Some(reference.clone())
        && extract_output_trajectory(&h, &scrambled).ok() == Some(reference.clone());
    out.report(
        "criterion 5 output excludes kinematic lane",
        ok,
        "output unchanged with kinematic-lane nodes removed or overwritten".to_string(),
    );

    let mut stripped = h.clone();
    let x_ids = stripped.x_ids.clone();
    stripped
        .graph
        .retain(|f| !matches!(f, Factor::Elevation(_)) && f.keys().iter().all(|id| x_ids.contains(id)));
    let base = build_graph(&run.lidar_odom, &run.fk_odom, &LaneConfig::for_variant(Variant::Baseline)).unwrap();
    let (sv, _) = optimize(&stripped.graph, &stripped.values, &settings).unwrap();
    let (bv, _) = optimize(&base.graph, &base.values, &settings).unwrap();
    let a = extract_output_trajectory(&stripped, &sv).unwrap();
    let b = extract_output_trajectory(&base, &bv).unwrap();
    let worst = a.iter().zip(&b).map(|(p, q)| p.pose.max_abs_diff(&q.pose)).fold(0.0, f64::max);
    out.report(
        "criterion 5 graceful degradation",
        worst <= 1e-10 && a.len() == b.len(),
        format!("worst diff {worst:.2e}"),
    );

    let run = short_run(30, &Preset::Factory.noise(), 4);
    let h = build_graph(&run.lidar_odom, &run.fk_odom, &LaneConfig::for_variant(Variant::Parallel)).unwrap();
    let mut scaled = Graph::new();
    scaled.extend(h.graph.factors().iter().map(|f| f.with_scaled_noise(3.0).unwrap()));
    let (a, _) = optimize(&h.graph, &h.values, &settings).unwrap();
    let (b, _) = optimize(&scaled, &h.values, &settings).unwrap();
    let worst = a.max_abs_diff(&b);
    out.report(
        "criterion 5 noise scaling keeps the argmin",
        worst <= 1e-8,
        format!("worst diff {worst:.2e} with every sigma x3"),
    );
}

fn same_bytes(a: &Path, b: &Path, files: &[String]) -> Vec<String> {
    files
        .iter()
        .filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok() || !a.join(f).exists())
        .cloned()
        .collect()
}

fn criterion_6(out: &mut Outcome) {
    let dir = tempfile::tempdir().unwrap();
    let run_all = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let text = format!("seeds = [2, 7]\noutput_dir = \"{}\"\n", out_dir.display());
        let cfg = RunConfig::from_toml(&text).unwrap().expand().unwrap();
        cmd_simulate(&cfg).unwrap();
        for v in Variant::ALL {
            cmd_solve(&cfg, v, true, false).unwrap();
        }
        cmd_compare(&cfg, true, false).unwrap();
        out_dir
    };
    let a = run_all("a");
    let b = run_all("b");
    let mut files = vec!["comparison.csv".to_string(), "notes.txt".to_string()];
    for preset in Preset::ALL {
        for seed in [2, 7] {
            let base = format!("{}/seed_{seed}", preset.name());
            for f in ["ground_truth.tum", "lidar_odom.tum", "fk_odom.tum"] {
                files.push(format!("{base}/{f}"));
            }
            for v in Variant::ALL {
                for f in ["trajectory.tum", "elevation_profile.csv", "elevation_profile.svg", "stats.toml"] {
                    files.push(format!("{base}/{}/{f}", v.name()));
                }
            }
        }
    }
    let differing = same_bytes(&a, &b, &files);
    out.report(
        "criterion 6 byte-identical reruns",
        differing.is_empty(),
        format!("{} files compared, differing: {differing:?}", files.len()),
    );
}

fn main() {
    let mut out = Outcome { failed: 0 };
    criterion_1_and_2(&mut out);
    criterion_3(&mut out);
    criterion_4(&mut out);
    criterion_5(&mut out);
    criterion_6(&mut out);
    println!("acceptance: {} failing", out.failed);
    if out.failed > 0 {
        std::process::exit(1);
    }
}
