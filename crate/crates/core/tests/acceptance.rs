//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::path::Path;
use std::time::Instant;

use dexprim_core::bench::bench_generate;
use dexprim_core::container::load_dictionary;
use dexprim_core::io::load_json;
use dexprim_core::model::{DEFAULT_DT, FEATURES, FINGERTIP_FEATURES};
use dexprim_core::nmf::{factorize_matrix, NmfConfig};
use dexprim_core::pipeline::{run_pipeline, PipelineConfig, PipelineSummary, RequestKind};
use dexprim_core::preprocess::Recording;
use dexprim_core::synth::{expected_contacts, synthesize, Action, Axis, GaitEvent, ManipulationScript};
use dexprim_core::trajgen::{generate_with, GenerationOptions, GenerationRequest, VelocityBounds};
use dexprim_core::verify::{check_contacts, detect_gaiting, ConstraintReport, ObjectModel, Violation};
use dexprim_core::{Dictionary, Error, Frame, OffsetSpec, Representation, Trajectory};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: u32, name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, name, pass, detail }
}

// 1. Exact rank-3 factorization.
fn nmf_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // Every factor row has a zero so the planted factors are identifiable.
    let sparse = |rng: &mut ChaCha8Rng, i: usize, k: usize| {
        if (i + k) % 3 == 0 {
            0.0
        } else {
            0.1 + rng.random::<f64>()
        }
    };
    let w = DMatrix::from_fn(50, 3, |i, k| sparse(&mut rng, i, k));
    let h = DMatrix::from_fn(3, 30, |k, j| sparse(&mut rng, j, k));
    let v = &w * &h;
    let cfg = NmfConfig {
        n_primitives: 3,
        max_iters: 500,
        rel_tol: 1e-12,
        ..Default::default()
    };
    let start = Instant::now();
    let f = match factorize_matrix(&v, &cfg) {
        Ok(f) => f,
        Err(e) => return outcome(1, "NMF correctness", false, e.to_string()),
    };
    let secs = start.elapsed().as_secs_f64();
    let rel = (&v - &f.w * &f.h).norm() / v.norm();
    let monotone = f.objective_trace.windows(2).all(|p| p[1] <= p[0]);
    outcome(
        1,
        "NMF correctness",
        rel <= 1e-4 && f.iterations <= 500 && monotone && secs < 5.0,
        format!(
            "relative residual {rel:.2e} after {} iterations (<= 1e-4 within 500), trace non-increasing: {monotone}, {secs:.2} s (< 5 s)",
            f.iterations
        ),
    )
}

// 2. Held-out reconstruction read from the cube pipeline run.
fn dictionary_fidelity(s: &PipelineSummary, train_and_eval_s: f64) -> Outcome {
    let Some(h) = &s.held_out else {
        return outcome(2, "Dictionary fidelity", false, "no held-out evaluation".into());
    };
    let mm = h.mean_fingertip_error_mm;
    outcome(
        2,
        "Dictionary fidelity",
        s.train_columns == 1800 && s.test_columns == 360 && mm <= 2.0 && train_and_eval_s < 600.0,
        format!(
            "{} train / {} held-out columns, mean fingertip error {mm:.3} mm (<= 2 mm), {} columns infeasible, {train_and_eval_s:.0} s (< 600 s)",
            s.train_columns, s.test_columns, h.infeasible
        ),
    )
}

struct SmallInstance {
    d: Dictionary,
    req: GenerationRequest,
    a: DMatrix<f64>,
    p: DVector<f64>,
    g: DMatrix<f64>,
    bound: f64,
}

fn small_instance(seed: u64) -> SmallInstance {
    const L: usize = 3;
    const N: usize = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = DMatrix::from_fn(FEATURES * N, L, |_, _| 0.3 * rng.random::<f64>());
    let offsets = OffsetSpec::default();
    let d = Dictionary::new(w.clone(), N, DEFAULT_DT, offsets, Default::default()).unwrap();
    let h_true = DVector::from_fn(L, |_, _| rng.random_range(0.15..0.85));
    let lambda: f64 = [0.5, 1.0, 2.0][rng.random_range(0..3)];
    let target = |k: usize, rng: &mut ChaCha8Rng| -> DVector<f64> {
        let row = w.rows(FEATURES * k, FEATURES) * &h_true;
        row.map(|x| x + 0.01 * (rng.random::<f64>() - 0.5))
    };
    let o1 = target(0, &mut rng);
    let on = target(N - 1, &mut rng);
    let phys = |o: &DVector<f64>| {
        let f = Frame::new(std::array::from_fn(|i| o[i]));
        offsets.remove_frame(&f)
    };

    let mut g = DMatrix::zeros(FINGERTIP_FEATURES * (N - 1), L);
    for k in 0..N - 1 {
        for r in 0..FINGERTIP_FEATURES {
            for j in 0..L {
                g[(k * FINGERTIP_FEATURES + r, j)] = w[((k + 1) * FEATURES + r, j)] - w[(k * FEATURES + r, j)];
            }
        }
    }
    let speed = (&g * &h_true).amax() / DEFAULT_DT;
    let v_max = speed * rng.random_range(0.6..1.5);

    let wl = lambda.sqrt();
    let mut a = DMatrix::zeros(2 * FEATURES, L);
    a.rows_mut(0, FEATURES).copy_from(&w.rows(0, FEATURES));
    a.rows_mut(FEATURES, FEATURES).copy_from(&(w.rows(FEATURES * (N - 1), FEATURES) * wl));
    let p = DVector::from_fn(2 * FEATURES, |i, _| if i < FEATURES { o1[i] } else { wl * on[i - FEATURES] });
    let req = GenerationRequest {
        lambda,
        velocity_bounds: VelocityBounds { v_max, per_finger: None },
        ..GenerationRequest::new(phys(&o1), phys(&on))
    };
    SmallInstance { d, req, a, p, g, bound: v_max * DEFAULT_DT }
}

/// Exhaustive search over the grid with spacing `step` restricted to the box
/// `[lo, hi]` (clipped to `[0, 1]^3`). For each pair of leading coordinates
/// the cost is a convex quadratic in the last one, so its best grid value
/// sits next to the clamped continuous minimizer.
fn grid_search(inst: &SmallInstance, lo: [f64; 3], hi: [f64; 3], step: f64) -> Option<([f64; 3], f64)> {
    let q = inst.a.transpose() * &inst.a;
    let c = inst.a.transpose() * &inst.p;
    let p2 = inst.p.norm_squared();
    let cost = |h: [f64; 3]| {
        let mut f = p2;
        for i in 0..3 {
            f -= 2.0 * c[i] * h[i];
            for j in 0..3 {
                f += q[(i, j)] * h[i] * h[j];
            }
        }
        f
    };
    let index = |x: f64| (x / step).round() as i64;
    let range = |d: usize| index(lo[d].max(0.0))..=index(hi[d].min(1.0));
    let mut best: Option<([f64; 3], f64)> = None;
    for i in range(0) {
        for j in range(1) {
            let (x, y) = (i as f64 * step, j as f64 * step);
            let (mut zlo, mut zhi) = (lo[2].max(0.0), hi[2].min(1.0));
            for r in 0..inst.g.nrows() {
                let base = inst.g[(r, 0)] * x + inst.g[(r, 1)] * y;
                let gz = inst.g[(r, 2)];
                let (a, b) = (-inst.bound - base, inst.bound - base);
                if gz.abs() < 1e-15 {
                    if a > 0.0 || b < 0.0 {
                        zhi = f64::NEG_INFINITY;
                    }
                } else if gz > 0.0 {
                    zlo = zlo.max(a / gz);
                    zhi = zhi.min(b / gz);
                } else {
                    zlo = zlo.max(b / gz);
                    zhi = zhi.min(a / gz);
                }
            }
            let k_lo = (zlo / step - 1e-9).ceil() as i64;
            let k_hi = (zhi / step + 1e-9).floor() as i64;
            if !zhi.is_finite() || k_hi < k_lo {
                continue;
            }
            let z_star = (c[2] - q[(0, 2)] * x - q[(1, 2)] * y) / q[(2, 2)];
            let k = ((z_star / step).floor() as i64).clamp(k_lo, k_hi);
            for kk in [k, (k + 1).min(k_hi)] {
                let h = [x, y, kk as f64 * step];
                let f = cost(h);
                if best.is_none_or(|(_, bf)| f < bf) {
                    best = Some((h, f));
                }
            }
        }
    }
    best
}

/// Full 1e-3 grid over `[0, 1]^3`, then finer grids (down to 1e-6) in a
/// window of 20 coarse steps around the incumbent.
fn grid_oracle(inst: &SmallInstance) -> Option<(DVector<f64>, f64, f64)> {
    let (mut h, coarse) = grid_search(inst, [0.0; 3], [1.0; 3], 1e-3)?;
    let mut f = coarse;
    for step in [1e-4, 1e-5, 1e-6] {
        let w = 20.0 * step * 10.0;
        let (lo, hi) = (h.map(|x| x - w), h.map(|x| x + w));
        if let Some((hr, fr)) = grid_search(inst, lo, hi, step) {
            if fr <= f {
                (h, f) = (hr, fr);
            }
        }
    }
    Some((DVector::from_row_slice(&h), f, coarse))
}

// 3. Generation against the grid oracle.
fn generation_optimality() -> Outcome {
    let opts = GenerationOptions {
        infeasibility_tol: None,
        ..Default::default()
    };
    let (mut checked, mut failures, mut active) = (0, Vec::new(), 0);
    let (mut worst_h, mut worst_f, mut worst_coarse) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    let mut seed = 0;
    while checked < 25 && seed < 200 {
        seed += 1;
        let inst = small_instance(seed);
        let res = match generate_with(&inst.d, &inst.req, &opts) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                checked += 1;
                continue;
            }
        };
        let h = res.h.as_vector();
        // Keep instances whose optimum lies inside the searched box.
        if h.iter().any(|&x| x > 0.99) {
            continue;
        }
        let Some((hg, fg, coarse)) = grid_oracle(&inst) else {
            continue;
        };
        checked += 1;
        active += (res.solve_stats.velocity_utilization > 1.0 - 1e-6) as usize;
        let dh = (h - &hg).amax();
        let df = (res.solve_stats.objective - fg).abs();
        worst_h = worst_h.max(dh);
        worst_f = worst_f.max(df);
        worst_coarse = worst_coarse.max(coarse - res.solve_stats.objective);
        if dh > 1e-3 || df > 1e-5 || res.solve_stats.objective > fg + 1e-9 {
            failures.push(format!("seed {seed}: |dh| {dh:.2e}, |df| {df:.2e}"));
        }
    }
    outcome(
        3,
        "Generation optimality",
        checked >= 25 && failures.is_empty(),
        format!(
            "{checked} instances (l=3, N=5), {active} with an active velocity bound; worst |h - h_grid| {worst_h:.2e} (<= 1e-3), worst objective gap {worst_f:.2e} (<= 1e-5); the 1e-3 grid alone trails the solver by up to {worst_coarse:.2e}{}",
            if failures.is_empty() { String::new() } else { format!("; failures: {}", failures.join(", ")) }
        ),
    )
}

fn reports(dir: &Path) -> Vec<ConstraintReport> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.join("reports"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths.iter().map(|p| load_json(p).unwrap()).collect()
}

fn trajectories(dir: &Path) -> Vec<Trajectory> {
    let mut paths: Vec<_> = std::fs::read_dir(dir.join("trajectories"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    paths.iter().map(|p| dexprim_core::io::load_trajectory(p).unwrap()).collect()
}

// 4. Speed bound on every generated trajectory, and a tight bound.
fn velocity_constraint(runs: &[(&str, &Path, &PipelineConfig)]) -> Outcome {
    let mut total = 0;
    let mut within = 0;
    let mut worst = 0.0f64;
    for (_, dir, cfg) in runs {
        for t in trajectories(dir) {
            total += 1;
            let s = t.max_fingertip_speed();
            worst = worst.max(s / cfg.generate.v_max);
            within += (s <= cfg.generate.v_max + 1e-9) as usize;
        }
    }
    let (_, dir, cfg) = runs[0];
    let d = load_dictionary(&dir.join("dictionary.json")).unwrap();
    let object = cfg.object_model().unwrap();
    let req = dexprim_core::pipeline::standard_requests(&object, &cfg.requests, &cfg.generate)
        .pop()
        .unwrap()
        .request;
    let tight = GenerationRequest {
        velocity_bounds: VelocityBounds { v_max: 0.01, per_finger: None },
        ..req
    };
    let tight_ok = match generate_with(&d, &tight, &cfg.generate.options()) {
        Err(Error::Infeasible { best, residual, unconstrained_residual }) => {
            best.trajectory.max_fingertip_speed() <= 0.01 + 1e-9 && residual > unconstrained_residual
        }
        _ => false,
    };
    outcome(
        4,
        "Velocity constraint",
        total > 0 && within == total && tight_ok,
        format!(
            "{within}/{total} pipeline trajectories within v_max + 1e-9 (peak at {:.3} of v_max); v_max = 0.01 m/s on a 10 cm translation reported infeasible with a bounded best result: {tight_ok}",
            worst
        ),
    )
}

fn violations_listed(r: &ConstraintReport) -> bool {
    let n = r.n_steps();
    let mut unreachable = vec![false; n];
    let mut collision = vec![false; n];
    let mut few = vec![false; n];
    for v in &r.violations {
        match v {
            Violation::Unreachable { step, .. } => unreachable[*step] = true,
            Violation::Collision { step, .. } => collision[*step] = true,
            Violation::TooFewContacts { step, .. } => few[*step] = true,
        }
    }
    (0..n).all(|k| {
        unreachable[k] == !r.reachability_ok[k].iter().all(|&b| b)
            && collision[k] == (r.min_pairwise_distance[k] < r.config.d_min)
            && few[k] == (r.contact_count[k] < r.config.min_contacts)
    })
}

// 5. Relaxed constraints hold on the pipeline trajectories.
fn relaxed_constraints(runs: &[(&str, &Path, &PipelineConfig)], summaries: &[PipelineSummary], secs: &[f64]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (((name, dir, _), s), t) in runs.iter().zip(summaries).zip(secs) {
        let c = &s.constraints;
        let listed = reports(dir).iter().all(violations_listed);
        let ok = c.reachable_fraction >= 0.95
            && c.contact_fraction >= 0.95
            && c.collision_step_instants <= 6
            && listed
            && *t < 900.0
            && s.trajectories.len() == 21;
        pass &= ok;
        parts.push(format!(
            "{name}: {:.1}% reachable, {:.1}% with >= 2 contacts, {} collision step-instants, violations listed: {listed}, {t:.0} s",
            100.0 * c.reachable_fraction,
            100.0 * c.contact_fraction,
            c.collision_step_instants
        ));
    }
    outcome(
        5,
        "Relaxed-constraint hypothesis",
        pass,
        format!("{} (>= 95%, >= 95%, <= 6, < 900 s)", parts.join("; ")),
    )
}

// 6. Final-pose accuracy per action type and axis.
fn endpoint_accuracy(runs: &[(&str, &Path, &PipelineConfig)], summaries: &[PipelineSummary]) -> Outcome {
    let mut worst_mm = 0.0f64;
    let mut worst_deg = 0.0f64;
    for s in summaries {
        for kind in RequestKind::ALL {
            let ts: Vec<_> = s.trajectories.iter().filter(|t| t.kind == kind).collect();
            for a in 0..3 {
                let n = ts.len().max(1) as f64;
                worst_mm = worst_mm.max(ts.iter().map(|t| t.endpoint_error.translation_mm[a].abs()).sum::<f64>() / n);
                worst_deg = worst_deg.max(ts.iter().map(|t| t.endpoint_error.rotation_deg[a].abs()).sum::<f64>() / n);
            }
        }
    }
    outcome(
        6,
        "Endpoint accuracy",
        worst_mm <= 10.0 && worst_deg <= 3.0 && !summaries.is_empty(),
        format!(
            "largest per-action, per-axis mean absolute error over {} objects: {worst_mm:.3} mm (<= 10 mm), {worst_deg:.3} deg (<= 3 deg)",
            runs.len()
        ),
    )
}

fn recording_trajectory(r: &Recording) -> Trajectory {
    Trajectory::new(r.frames().collect(), r.dt(), Representation::Physical).unwrap()
}

// 7. Gaiting detection on the pipeline runs and on a scripted fixture.
fn gaiting(runs: &[(&str, &Path, &PipelineConfig)]) -> Outcome {
    let mut consistent = 0;
    let mut total = 0;
    let mut with_steps = 0;
    for (_, dir, _) in runs {
        for r in reports(dir) {
            total += 1;
            let varies = r.contact_count.windows(2).any(|w| w[0] != w[1]);
            with_steps += varies as usize;
            consistent += (detect_gaiting(&r).detected == varies && r.gaiting_detected == varies) as usize;
        }
    }

    let mut fixtures_ok = true;
    let mut detail = Vec::new();
    for object in [ObjectModel::cube(), ObjectModel::cylinder()] {
        let mut script = ManipulationScript::new(
            object,
            vec![
                Action::Rotate { axis: Axis::X, degrees: 15.0, duration: 1.5 },
                Action::Pause { duration: 0.5 },
                Action::Rotate { axis: Axis::Y, degrees: -10.0, duration: 1.0 },
            ],
            3,
        );
        script.noise_sigma = 0.0;
        script.gait_events = vec![
            GaitEvent { time: 0.5, finger: 1, lift_height: 0.03, duration: 0.4, slide: [0.005, 0.0] },
            GaitEvent { time: 1.6, finger: 3, lift_height: 0.025, duration: 0.5, slide: [0.0, -0.004] },
        ];
        let rec = synthesize(&script).unwrap();
        let t = recording_trajectory(&rec);
        let tau = 0.01;
        let measured = check_contacts(&t, &object, tau).counts();
        let expected = expected_contacts(&script, tau).unwrap();
        let same = measured == expected;
        let dips = measured.windows(2).filter(|w| w[1] < w[0]).count();
        fixtures_ok &= same && dips == 2;
        detail.push(format!("{} fixture trace matches script: {same} ({dips} dips)", object.name()));
    }
    outcome(
        7,
        "Gaiting",
        consistent == total && fixtures_ok,
        format!(
            "detector agrees with the contact trace on {consistent}/{total} pipeline trajectories ({with_steps} with steps); {}",
            detail.join(", ")
        ),
    )
}

// 8. Generation time at l = 200, N = 100.
fn performance(dir: &Path, cfg: &PipelineConfig) -> Outcome {
    let d = load_dictionary(&dir.join("dictionary.json")).unwrap();
    let object = cfg.object_model().unwrap();
    let reqs: Vec<_> = dexprim_core::pipeline::standard_requests(&object, &cfg.requests, &cfg.generate)
        .into_iter()
        .map(|r| r.request)
        .collect();
    match bench_generate(&d, &reqs, 3, &cfg.generate.options()) {
        Ok(r) => outcome(
            8,
            "Performance",
            r.median_ms <= 1000.0 && r.n_primitives == 200 && r.n_steps == 100 && r.samples_ms.len() >= 20,
            format!(
                "{} calls at l = {}, N = {}: median {:.1} ms (<= 1000 ms), max {:.1} ms",
                r.samples_ms.len(),
                r.n_primitives,
                r.n_steps,
                r.median_ms,
                r.max_ms
            ),
        ),
        Err(e) => outcome(8, "Performance", false, e.to_string()),
    }
}

// 9. Byte-identical manifests from two runs.
fn determinism(root: &Path) -> Outcome {
    let cfg = PipelineConfig::from_toml(
        "object = \"cylinder\"\n[synth]\ntrials = 3\ntrial_minutes = 0.5\nseed = 5\n[nmf]\nn_primitives = 12\nmax_iters = 60\n[evaluate]\ncolumn_stride = 5\n",
    )
    .unwrap();
    let mut manifests = Vec::new();
    for run in ["run_a", "run_b"] {
        let out = root.join(run);
        if let Err(e) = run_pipeline(&cfg, &out) {
            return outcome(9, "Determinism", false, e.to_string());
        }
        manifests.push(std::fs::read(out.join("manifest.json")).unwrap());
    }
    let files = serde_json::from_slice::<serde_json::Value>(&manifests[0]).unwrap()["files"]
        .as_array()
        .map_or(0, |f| f.len());
    outcome(
        9,
        "Determinism",
        manifests[0] == manifests[1] && files > 0,
        format!("two runs, {files} hashed files, manifests byte-identical: {}", manifests[0] == manifests[1]),
    )
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut results = vec![nmf_correctness(), generation_optimality()];

    let configs: Vec<(&str, PipelineConfig)> = ["cube", "cylinder"]
        .into_iter()
        .map(|o| {
            let mut cfg = PipelineConfig {
                object: o.into(),
                ..Default::default()
            };
            // Held-out fidelity is measured on the cube run.
            cfg.evaluate.held_out = o == "cube";
            (o, cfg)
        })
        .collect();
    let mut summaries = Vec::new();
    let mut secs = Vec::new();
    let dirs: Vec<_> = configs.iter().map(|(o, _)| tmp.path().join(o)).collect();
    for ((_, cfg), dir) in configs.iter().zip(&dirs) {
        let start = Instant::now();
        match run_pipeline(cfg, dir) {
            Ok(s) => summaries.push(s),
            Err(e) => {
                println!("FAIL  pipeline on {}: {e}", cfg.object);
                std::process::exit(1);
            }
        }
        secs.push(start.elapsed().as_secs_f64());
    }
    let runs: Vec<(&str, &Path, &PipelineConfig)> =
        configs.iter().zip(&dirs).map(|((o, c), d)| (*o, d.as_path(), c)).collect();

    results.push(dictionary_fidelity(&summaries[0], secs[0]));
    results.push(velocity_constraint(&runs));
    results.push(relaxed_constraints(&runs, &summaries, &secs));
    results.push(endpoint_accuracy(&runs, &summaries));
    results.push(gaiting(&runs));
    results.push(performance(runs[0].1, runs[0].2));
    results.push(determinism(tmp.path()));
    results.sort_by_key(|r| r.id);

    let mut failed = 0;
    for r in &results {
        println!("{} [{}] {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.id, r.name, r.detail);
        failed += (!r.pass) as usize;
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
