//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! `cargo test -p hexst-cli --test acceptance` prints the table; extra
//! arguments select criteria by number or name.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use hexst::dataset::SpotDataset;
use hexst::hexgeom::{cube_round, estimate_scale, hex_distance, HexCoord};
use hexst::losses::{loss_dev, loss_pearson, loss_total, standardized_deviations, LossToggles, LossWeights};
use hexst::metrics::{evaluate, mann_whitney_auc, pcc_genewise, EvalConfig};
use hexst::model::{Model, ModelConfig};
use hexst::numerics::{dot, norm, Tensor};
use hexst::rope::{apply_hexrope, RopeConfig};
use hexst::synth::{generate, generate_with_truth, PlantedTruth, SynthConfig, TokenRule};
use hexst::trainer::{grad_check, grad_check_fixture, predict, train, GradCheckOptions, TrainConfig};
use hexst::windowing::build_slot_set;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed < Duration::from_secs(limit_s)
}

// Cube offsets of every cell within `radius` of the origin.
fn disc(radius: i64) -> Vec<HexCoord> {
    let mut out = Vec::new();
    for q in -radius..=radius {
        for r in -radius..=radius {
            if (q + r).abs() <= radius {
                out.push(HexCoord::new(q, r));
            }
        }
    }
    out
}

const NEIGHBOURS: [(i64, i64); 6] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)];

fn geometry_oracles() -> Outcome {
    let start = Instant::now();
    // BFS over a region large enough to contain every shortest path between
    // two cells of the radius-6 disc.
    let region: HashSet<(i64, i64)> = disc(13).iter().map(|c| (c.q, c.r)).collect();
    let cells = disc(6);
    let mut bfs_mismatch = 0usize;
    for &a in &cells {
        let mut dist: HashMap<(i64, i64), i64> = HashMap::new();
        let mut queue = VecDeque::from([(a.q, a.r)]);
        dist.insert((a.q, a.r), 0);
        while let Some((q, r)) = queue.pop_front() {
            let d = dist[&(q, r)];
            for (dq, dr) in NEIGHBOURS {
                let n = (q + dq, r + dr);
                if region.contains(&n) && !dist.contains_key(&n) {
                    dist.insert(n, d + 1);
                    queue.push_back(n);
                }
            }
        }
        for &b in &cells {
            if hex_distance(a, b) != dist[&(b.q, b.r)] {
                bfs_mismatch += 1;
            }
        }
    }

    // Nearest cell centre in the plane, unit hexagon size, pointy-top.
    let planar = |q: f64, r: f64| (3f64.sqrt() * (q + 0.5 * r), 1.5 * r);
    let (mut round_mismatch, mut ties, mut points) = (0usize, 0usize, 0usize);
    for i in 0..=1000 {
        for j in 0..=1000 {
            let (q, r) = ((i as f64 - 500.0) / 100.0, (j as f64 - 500.0) / 100.0);
            let (x, y) = planar(q, r);
            let mut scored = Vec::with_capacity(25);
            for cq in q.round() as i64 - 2..=q.round() as i64 + 2 {
                for cr in r.round() as i64 - 2..=r.round() as i64 + 2 {
                    let (cx, cy) = planar(cq as f64, cr as f64);
                    scored.push(((cx - x).powi(2) + (cy - y).powi(2), HexCoord::new(cq, cr)));
                }
            }
            scored.sort_by(|a, b| a.0.total_cmp(&b.0));
            let got = cube_round(q, r);
            points += 1;
            if scored[1].0 - scored[0].0 < 1e-9 {
                ties += 1;
                let tied: Vec<HexCoord> =
                    scored.iter().take_while(|s| s.0 - scored[0].0 < 1e-9).map(|s| s.1).collect();
                if !tied.contains(&got) {
                    round_mismatch += 1;
                }
            } else if got != scored[0].1 {
                round_mismatch += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        bfs_mismatch == 0 && round_mismatch == 0 && within(elapsed, 10),
        format!(
            "BFS mismatches {bfs_mismatch}/{}, cube_round mismatches {round_mismatch}/{points} ({ties} boundary ties), {:.2}s",
            cells.len() * cells.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn slot_cardinality() -> Outcome {
    let mut bad = Vec::new();
    for k in 0..=8i64 {
        let set = build_slot_set(k).unwrap();
        let enumerated: HashSet<HexCoord> = disc(k).into_iter().collect();
        let listed: HashSet<HexCoord> = set.offsets().iter().copied().collect();
        let formula = (3 * k * k + 3 * k + 1) as usize;
        if set.len() != formula || enumerated.len() != formula || listed != enumerated {
            bad.push(k);
        }
    }
    outcome(bad.is_empty(), format!("K = 0..8, failing K: {bad:?}"))
}

fn partition_soundness() -> Outcome {
    let start = Instant::now();
    let model = Model::new(ModelConfig::default()).unwrap();
    let radii = model.config().radii.clone();
    let (mut checked, mut failures) = (0usize, Vec::new());
    for seed in 0..50u64 {
        let data = generate(&SynthConfig { seed, ..SynthConfig::default() }).unwrap();
        let geom = match model.geometry(&data.coords) {
            Ok(g) => g,
            Err(e) => {
                failures.push(format!("seed {seed}: {e}"));
                continue;
            }
        };
        for (stage, parts) in geom.partitions.iter().enumerate() {
            for part in parts {
                checked += 1;
                let k = radii[stage] as i64;
                let mut seen = vec![0usize; data.len()];
                let mut ok = true;
                for (w, win) in part.windows.iter().enumerate() {
                    let mut slots = HashSet::new();
                    for &i in &win.members {
                        seen[i] += 1;
                        ok &= part.window_of_spot[i] == w;
                        ok &= slots.insert(part.slot_of_spot[i]);
                        ok &= hex_distance(geom.spots[i].cell, win.center_cell) <= k;
                    }
                }
                ok &= seen.iter().all(|&c| c == 1);
                if !ok {
                    failures.push(format!("seed {seed} stage {stage} block {}", part.block));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && within(elapsed, 30),
        format!(
            "{checked} (stage, block) partitions over 50 lattices, failures {failures:?}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn random_offset(rng: &mut ChaCha8Rng) -> HexCoord {
    HexCoord::new(rng.random_range(-6..=6), rng.random_range(-6..=6))
}

fn hexrope_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut rel, mut iso, mut ident_fail) = (0f64, 0f64, 0usize);
    for _ in 0..200 {
        let head_dim = 6 * rng.random_range(1..=4) + rng.random_range(0..2) * 2;
        let cfg = RopeConfig::hex(head_dim, 10_000.0).unwrap();
        let q: Vec<f64> = (0..head_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k: Vec<f64> = (0..head_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rot = |v: &[f64], p: HexCoord| {
            apply_hexrope(&Tensor::matrix(1, head_dim, v.to_vec()).unwrap(), &[p.cube()], &cfg)
                .unwrap()
                .into_data()
        };
        let (p1, p2, delta) = (random_offset(&mut rng), random_offset(&mut rng), random_offset(&mut rng));
        let before = dot(&rot(&q, p1), &rot(&k, p2));
        let after = dot(&rot(&q, p1.add(&delta)), &rot(&k, p2.add(&delta)));
        rel = rel.max((before - after).abs());
        iso = iso.max((norm(&rot(&q, p1)) - norm(&q)).abs());
        if rot(&q, HexCoord::ORIGIN) != q {
            ident_fail += 1;
        }
    }
    outcome(
        rel < 1e-9 && iso < 1e-12 && ident_fail == 0,
        format!("200 trials: max dot drift {rel:.2e}, max norm drift {iso:.2e}, identity failures {ident_fail}"),
    )
}

fn gradient_certification() -> Outcome {
    let start = Instant::now();
    let weights = LossWeights::default();
    let mut worst = 0f64;
    let mut all = true;
    for seed in 0..5 {
        let (model, params, data) = grad_check_fixture(seed).unwrap();
        let cfg = model.config();
        assert!(data.len() == 20 && cfg.stages == 2 && cfg.heads == 2);
        let rows: Vec<usize> = (0..data.len()).collect();
        let report = grad_check(&model, &params, &data, &rows, &weights, 1e-8, &GradCheckOptions::default()).unwrap();
        worst = worst.max(report.max_rel_err);
        all &= report.passed;
    }
    let elapsed = start.elapsed();
    outcome(
        all && worst < 1e-4 && within(elapsed, 120),
        format!(
            "weights {}/{}/{}/{}, 5 seeds, max relative error {worst:.2e}, {:.2}s",
            weights.mse,
            weights.pearson,
            weights.dev,
            weights.tfa,
            elapsed.as_secs_f64()
        ),
    )
}

fn loss_constants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let y = Tensor::matrix(30, 4, (0..120).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    let perfect = loss_pearson(&y, &y).unwrap();
    let anti = loss_pearson(&y.scale(-1.0), &y).unwrap();
    let dev = loss_dev(&standardized_deviations(&y, 1e-8), &y, 1e-8).unwrap();
    let total = loss_total(1.0, 1.0, 1.0, 1.0, &LossWeights::default()).total;
    let ok = perfect.abs() < 1e-12 && (anti - 2.0).abs() < 1e-12 && dev.abs() < 1e-12 && (total - 1.201).abs() < 1e-12;
    outcome(ok, format!("pearson {perfect:.1e} / {anti:.15}, dev {dev:.1e}, total {total:.15}"))
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut brute_fail, mut monotone_fail) = (0usize, 0usize);
    for _ in 0..100 {
        let n = rng.random_range(1..=200);
        // Coarse scores so that ties are common.
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(-8..8) as f64 * 0.25).collect();
        let l: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let auc = mann_whitney_auc(&s, &l);
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                if l[i] && !l[j] {
                    den += 1.0;
                    num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        let expect = if den > 0.0 { num / den } else { 0.5 };
        if auc.value != expect || auc.defined != (den > 0.0) {
            brute_fail += 1;
        }
        let warped: Vec<f64> = s.iter().map(|v| 2.0 * v.powi(3) + v.exp() - 4.0).collect();
        if mann_whitney_auc(&warped, &l) != auc {
            monotone_fail += 1;
        }
    }
    let y = Tensor::matrix(40, 5, (0..200).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let pcc = pcc_genewise(&y, &y).unwrap();
    outcome(
        brute_fail == 0 && monotone_fail == 0 && (pcc - 1.0).abs() < 1e-12,
        format!("AUC vs pairs failures {brute_fail}/100, monotone failures {monotone_fail}/100, PCC(Y,Y) = {pcc:.15}"),
    )
}

fn learnability_model(data: &SpotDataset) -> Model {
    let cfg = ModelConfig { stages: 3, blocks: 1, radii: vec![1, 2], ..ModelConfig::default() }.with_data_dims(
        data.token_dim(),
        data.gene_count(),
        data.transcriptomic.as_ref().map(|t| t.cols()),
    );
    Model::new(cfg).unwrap()
}

fn learnability_train(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        lr: 3e-3,
        patience: 0,
        weights: LossWeights { mse: 1.0, ..LossWeights::default() },
        ..TrainConfig::default()
    }
}

/// Trains on section 0 of a tissue and predicts section 1.
fn fit_and_predict(synth: &SynthConfig, steps: usize) -> (Tensor, SpotDataset, PlantedTruth) {
    let data = generate(synth).unwrap();
    let (val, truth) = generate_with_truth(&SynthConfig { section: 1, ..synth.clone() }).unwrap();
    let model = learnability_model(&data);
    let out = train(&model, model.init_params(), &data, Some(&val), &learnability_train(steps)).unwrap();
    (predict(&model, &out.best, &val).unwrap(), val, truth)
}

fn boundary_ratios(y_hat: &Tensor, truth: &PlantedTruth) -> Vec<f64> {
    let mut ratios = Vec::new();
    for (j, side) in truth.high_side.iter().enumerate() {
        let Some(side) = side else { continue };
        let (mut hi, mut nh, mut lo, mut nl) = (0.0, 0usize, 0.0, 0usize);
        for (i, &high) in side.iter().enumerate() {
            if high {
                hi += y_hat.get(i, j);
                nh += 1;
            } else {
                lo += y_hat.get(i, j);
                nl += 1;
            }
        }
        ratios.push((hi / nh as f64 - lo / nl as f64) / truth.contrast[j].unwrap());
    }
    ratios
}

fn learnability() -> Outcome {
    let start = Instant::now();
    let synth = SynthConfig::default();
    let boundary = synth.genes.iter().filter(|g| g.to_string() == "boundary").count();
    let (y_hat, val, truth) = fit_and_predict(&synth, 500);
    let pcc = pcc_genewise(&y_hat, &val.expression).unwrap();
    let ratios = boundary_ratios(&y_hat, &truth);
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);

    let noise = SynthConfig { token_rule: TokenRule::PureNoise, ..synth.clone() };
    let (y_noise, val_noise, _) = fit_and_predict(&noise, 500);
    let noise_pcc = pcc_genewise(&y_noise, &val_noise.expression).unwrap();
    let elapsed = start.elapsed();
    outcome(
        synth.radius == 10
            && synth.genes.len() == 16
            && boundary >= 4
            && pcc > 0.5
            && min_ratio >= 0.5
            && noise_pcc.abs() < 0.1
            && within(elapsed, 600),
        format!(
            "held-out pcc {pcc:.4}, boundary contrast ratios {ratios:.3?}, noise control pcc {noise_pcc:.4}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn ablation_run(data: &SpotDataset, val: &SpotDataset, window: &str, pe: &str, toggles: LossToggles) -> (String, Vec<f64>) {
    let cfg = ModelConfig {
        stages: 3,
        blocks: 1,
        radii: vec![1, 2],
        window: window.into(),
        pe: pe.into(),
        ..ModelConfig::default()
    }
    .with_data_dims(data.token_dim(), data.gene_count(), data.transcriptomic.as_ref().map(|t| t.cols()));
    let model = Model::new(cfg).unwrap();
    let tcfg = TrainConfig { toggles, ..learnability_train(60) };
    let out = train(&model, model.init_params(), data, Some(val), &tcfg).unwrap();
    let y_hat = predict(&model, &out.best, val).unwrap();
    let report = evaluate(&y_hat, &val.expression, &val.genes, &EvalConfig::default()).unwrap();
    (report.to_text(), out.best.values)
}

fn ablation_plumbing() -> Outcome {
    let synth = SynthConfig::default();
    let data = generate(&synth).unwrap();
    let val = generate(&SynthConfig { section: 1, ..synth }).unwrap();
    let toggle = |mse, pearson, dev, tfa| LossToggles { mse, pearson, dev, tfa };
    let supervised = toggle(true, true, false, false);
    let mut runs: Vec<(String, &str, &str, LossToggles)> = vec![
        ("hex+HexRoPE".into(), "hex", "hexrope", supervised),
        ("hex+rope2d".into(), "hex", "rope2d", supervised),
        ("square+rope2d".into(), "square", "rope2d", supervised),
        ("full".into(), "hex", "hexrope", LossToggles::default()),
    ];
    let (o, x) = (true, false);
    for row in [(o, x, o, o), (x, o, o, o), (o, o, x, x), (o, o, o, x), (o, o, x, o)] {
        let mark = |b: bool| if b { 'O' } else { 'X' };
        let name = format!("MSE{} PL{} DEV{} TFA{}", mark(row.0), mark(row.1), mark(row.2), mark(row.3));
        runs.push((name, "hex", "hexrope", toggle(row.0, row.1, row.2, row.3)));
    }
    let mut problems = Vec::new();
    let mut pccs = Vec::new();
    for (name, window, pe, toggles) in &runs {
        let a = ablation_run(&data, &val, window, pe, *toggles);
        let b = ablation_run(&data, &val, window, pe, *toggles);
        if a != b {
            problems.push(format!("{name}: not deterministic"));
        }
        match hexst::metrics::EvalReport::summary_value(&a.0, "pcc_f") {
            Some(v) => pccs.push(format!("{name} {v:.3}")),
            None => problems.push(format!("{name}: no pcc_f in report")),
        }
    }
    outcome(
        problems.is_empty(),
        format!("{} runs twice each, problems {problems:?}; pcc_f: {}", runs.len(), pccs.join(", ")),
    )
}

fn translation_invariance() -> Outcome {
    let data = generate(&SynthConfig::default()).unwrap();
    let model = Model::new(ModelConfig::default().with_data_dims(data.token_dim(), data.gene_count(), Some(16))).unwrap();
    // A few steps so that no output layer sits at its zero initialisation.
    let tcfg = TrainConfig { steps: 20, lr: 3e-3, ..TrainConfig::default() };
    let params = train(&model, model.init_params(), &data, None, &tcfg).unwrap().last;
    let scale = estimate_scale(&data.coords, 3).unwrap();
    // First basis vector of the stage-one window-centre lattice.
    let k = model.config().radii[0] as f64;
    let e1 = (0.0, k * scale.d_med);
    let base = predict(&model, &params, &data).unwrap();
    let moved = predict(&model, &params, &data.translated(e1.0, e1.1)).unwrap();
    let diff = base.data().iter().zip(moved.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let spread = base.column(0).iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - base.column(0).iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        diff < 1e-9 && spread > 1e-3,
        format!("e1 = ({:.4}, {:.4}), max |dY| {diff:.2e}, gene-0 prediction spread {spread:.3}", e1.0, e1.1),
    )
}

fn run_pipeline(dir: &Path) -> Result<(), String> {
    let bin = env!("CARGO_BIN_EXE_hexst");
    let steps: [&[&str]; 3] = [
        &["generate", "-o", "slide", "--seed", "11"],
        &["train", "-d", "slide", "-o", "run", "--steps", "50", "--seed", "11"],
        &["eval", "-d", "slide", "--checkpoint", "run/checkpoint.bin", "-o", "report.txt"],
    ];
    for args in steps {
        let out = Command::new(bin).args(args).current_dir(dir).output().map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn pipeline_determinism() -> Outcome {
    let dirs = [tempfile::TempDir::new().unwrap(), tempfile::TempDir::new().unwrap()];
    for d in &dirs {
        if let Err(e) = run_pipeline(d.path()) {
            return outcome(false, e);
        }
    }
    let files = [
        "slide/spots.csv",
        "slide/tokens.bin",
        "run/train_log.jsonl",
        "run/checkpoint.bin",
        "run/last.bin",
        "report.txt",
    ];
    let mut differing = Vec::new();
    let mut log_lines = 0;
    for f in files {
        let a = fs::read(dirs[0].path().join(f)).unwrap();
        let b = fs::read(dirs[1].path().join(f)).unwrap();
        if a != b {
            differing.push(f);
        }
        if f.ends_with(".jsonl") {
            log_lines = a.iter().filter(|&&c| c == b'\n').count();
        }
    }
    outcome(
        differing.is_empty() && log_lines == 50,
        format!("{} files compared, {log_lines} log lines, differing {differing:?}", files.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("geometry oracles", geometry_oracles),
        ("slot-set cardinality", slot_cardinality),
        ("partition soundness", partition_soundness),
        ("HexRoPE relative position", hexrope_properties),
        ("gradient certification", gradient_certification),
        ("loss constants", loss_constants),
        ("metric oracles", metric_oracles),
        ("learnability", learnability),
        ("ablation plumbing", ablation_plumbing),
        ("translation invariance", translation_invariance),
        ("pipeline determinism", pipeline_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|f| *f == id || name.contains(f.as_str())) {
            continue;
        }
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("criterion {id:>2} {:<26} {}  {}", name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
