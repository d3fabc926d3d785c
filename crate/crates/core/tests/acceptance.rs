//! Acceptance run: one PASS/FAIL line per criterion. Exits nonzero when any
//! hard criterion fails; the throughput bound only warns.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use clueassign::assign::{assign_mcss, multi_clue_confidence, topk_by_center, category_confidence};
use clueassign::enhance::{self, enhance_pipeline};
use clueassign::geometry::iou;
use clueassign::harness::{compute_stats, with_threads};
use clueassign::linalg::{self, Matrix};
use clueassign::memory::{self, DEFAULT_EPS};
use clueassign::synth::SizeBucket;
use clueassign::{AssignConfig, AssignerKind, AssignerSettings, BBox, Scene, SynthConfig};
use clueassign_oracle::{
    embedding_preactivation, enhance_jvp, exact_iou, naive_mcss, ratio_to_f64, reference_enhance, within_hull,
};
use rand::Rng;

const BIN: &str = env!("CARGO_BIN_EXE_clueassign");

enum Outcome {
    Pass(String),
    Fail(String),
    Warn(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let cfg = AssignConfig::default();
    let mut rng = common::rng(2024);
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let s = common::random_scene(&mut rng, i, 500, 20);
        let a = assign_mcss(&s, &cfg).unwrap();
        let b = naive_mcss(&s, &cfg);
        let same_sets = a.per_gt_positives == b.per_gt_positives
            && a.per_pred.iter().zip(&b.per_pred).all(|(x, y)| x.positive_gt() == y.positive_gt());
        let diff = a
            .thresholds
            .iter()
            .zip(&b.thresholds)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        worst = worst.max(diff);
        if !same_sets || a.thresholds.len() != b.thresholds.len() || diff > 1e-12 {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        mismatches == 0 && secs < 30.0,
        format!("1000 scenes, {mismatches} mismatches, max threshold diff {worst:e} (tol 1e-12), {secs:.1}s (limit 30s)"),
    )
}

fn size_balance() -> Outcome {
    let start = Instant::now();
    let kinds = [AssignerKind::Mcss, AssignerKind::IouMax, AssignerKind::Center];
    let report = with_threads(0, || compute_stats(&AssignerSettings::default(), &kinds, &SynthConfig::default(), 1000))
        .unwrap()
        .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let cov = |k| report.cov_of(k).unwrap();
    let es = |k| report.row(k, SizeBucket::ExtremelySmall).unwrap().mean_positives;
    let (m, i, c) = (cov(AssignerKind::Mcss), cov(AssignerKind::IouMax), cov(AssignerKind::Center));
    let (em, ei) = (es(AssignerKind::Mcss), es(AssignerKind::IouMax));
    verdict(
        m < i && m < c && em > ei && secs < 120.0,
        format!("CoV mcss {m:.4} < iou_max {i:.4} and < center {c:.4}; eS mean mcss {em:.3} > iou_max {ei:.3}; {secs:.1}s (limit 120s)"),
    )
}

fn limit_cases() -> Outcome {
    let mut failures = Vec::new();
    let mut rng = common::rng(3);

    let mut checked = 0;
    while checked < 100 {
        let s = common::random_scene(&mut rng, checked, 60, 5);
        if s.num_gt() == 0 || s.num_preds() == 0 {
            continue;
        }
        let g = rng.random_range(0..s.num_gt());
        let cand = topk_by_center(&s, g, 9).unwrap();
        let dc = category_confidence(&s, &cand, g, false).unwrap();
        let du: Vec<f64> = cand.iter().map(|&p| iou(&s.pred_boxes()[p], &s.gt_boxes()[g])).collect();
        if multi_clue_confidence(&dc, &du, 0.0).unwrap() != du {
            failures.push("alpha=0");
        }
        checked += 1;
    }

    for seed in 0..100 {
        let c = rng.random_range(1..5);
        let d = rng.random_range(1..9);
        let mem = memory::init_memory(c, d, seed, 1.0).unwrap();
        let j = rng.random_range(0..=c);
        let t: Vec<f64> = (0..d).map(|_| common::normal(&mut rng) * 4.0).collect();

        let mut frozen = mem.clone().with_momentum(0.0).unwrap();
        frozen.ema_update(&[(j, t.clone())]).unwrap();
        if frozen.matrix() != mem.matrix() {
            failures.push("m=0");
        }
        let mut replaced = mem.clone().with_momentum(1.0).unwrap();
        replaced.ema_update(&[(j, t.clone())]).unwrap();
        if replaced.row(j) != &t[..] {
            failures.push("m=1");
        }

        let n = rng.random_range(1..6);
        let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..=c)).collect();
        let mut p = Matrix::zeros(n, c + 1);
        for (r, &k) in picks.iter().enumerate() {
            p.set(r, k, 1.0);
        }
        let f = memory::generate_category_feature(&p, &mem).unwrap();
        if picks.iter().enumerate().any(|(r, &k)| f.row(r) != mem.row(k)) {
            failures.push("one-hot P");
        }
    }
    failures.dedup();
    verdict(
        failures.is_empty(),
        format!("alpha=0, m=0, m=1, one-hot P on 100 instances each; failing: {failures:?}"),
    )
}

fn ema_convergence() -> Outcome {
    let mut worst_step = 0.0f64;
    let mut bound_ok = true;
    for m in [0.01, 0.1, 0.5] {
        for seed in 0..10 {
            let mut mem = memory::init_memory(3, 8, seed, 1.0).unwrap().with_momentum(m).unwrap();
            let mut rng = common::rng(seed + 100);
            let targets: Vec<Vec<f64>> = (0..4).map(|_| (0..8).map(|_| common::normal(&mut rng) * 3.0).collect()).collect();
            let err = |mem: &memory::CategoryMemory, j: usize| {
                mem.row(j).iter().zip(&targets[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            };
            let e0: Vec<f64> = (0..4).map(|j| err(&mem, j)).collect();
            let mut prev = e0.clone();
            let agg: Vec<(usize, Vec<f64>)> = targets.iter().cloned().enumerate().collect();
            for t in 1..=200 {
                mem.ema_update(&agg).unwrap();
                for j in 0..4 {
                    let e = err(&mem, j);
                    worst_step = worst_step.max((e - (1.0 - m) * prev[j]).abs());
                    bound_ok &= e <= (1.0 - m).powi(t) * e0[j] + 1e-9;
                    prev[j] = e;
                }
            }
        }
    }
    verdict(
        worst_step <= 1e-9 && bound_ok,
        format!("m in {{0.01, 0.1, 0.5}}, 200 steps: max |e_t - (1-m) e_(t-1)| = {worst_step:e} (tol 1e-9), bound holds: {bound_ok}"),
    )
}

fn hull_slack(m: &Matrix) -> f64 {
    // room for rounding in a convex combination evaluated in floating point
    1e-12 * (1.0 + m.data().iter().fold(0.0f64, |a, v| a.max(v.abs())))
}

fn convexity() -> Outcome {
    let mut bad = [0usize; 4];
    let mut worst_sum = 0.0f64;
    for case in 0..10_000u64 {
        let mut rng = common::rng(case);
        let n = rng.random_range(1..10);
        let d = rng.random_range(1..8);
        let g = common::random_matrix(&mut rng, n, d, 2.0);
        let m = common::random_matrix(&mut rng, 1, d, 2.0);
        let w = memory::aggregation_weights(&memory::cosine_weights(&g, m.row(0)).unwrap(), DEFAULT_EPS);
        let s: f64 = w.iter().sum();
        worst_sum = worst_sum.max((s - 1.0).abs());
        if w.iter().any(|&x| x < 0.0) || (s - 1.0).abs() > 1e-9 {
            bad[0] += 1;
        }

        let c = common::random_enhance_case(case);
        let out = enhance_pipeline(&c.r_hat, &c.mem, &c.params).unwrap();
        let slack = hull_slack(c.mem.matrix());
        if !out.f_c.iter_rows().all(|r| within_hull(r, c.mem.matrix(), slack)) {
            bad[1] += 1;
        }
        let (att, weights) = enhance::cross_attention_with_weights(&out.r, &out.f_c, &c.params).unwrap();
        if weights
            .iter()
            .flat_map(|w| w.iter_rows().map(|r| r.iter().sum::<f64>()).collect::<Vec<_>>())
            .any(|s| (s - 1.0).abs() > 1e-9)
        {
            bad[2] += 1;
        }
        let v = linalg::matmul(&out.f_c, &c.params.w_v).unwrap();
        let hd = c.params.dim() / c.params.heads;
        for h in 0..c.params.heads {
            let block = v.col_block(h * hd, (h + 1) * hd);
            let slack = hull_slack(&block);
            if !att.col_block(h * hd, (h + 1) * hd).iter_rows().all(|r| within_hull(r, &block, slack)) {
                bad[3] += 1;
                break;
            }
        }
    }
    verdict(
        bad.iter().all(|&b| b == 0),
        format!(
            "10000 cases; violations: weights {} (max |sum-1| {worst_sum:e}, tol 1e-9), F_c hull {}, attention rows {}, attention hull {}",
            bad[0], bad[1], bad[2], bad[3]
        ),
    )
}

fn geometry_exactness() -> Outcome {
    let mut rng = common::rng(6);
    let (mut worst, mut asym, mut selfbad) = (0.0f64, 0, 0);
    for _ in 0..10_000 {
        let (a, b) = (common::random_int_box(&mut rng, 1000), common::random_int_box(&mut rng, 1000));
        let (fa, fb) = (common::to_bbox(a), common::to_bbox(b));
        worst = worst.max((iou(&fa, &fb) - ratio_to_f64(&exact_iou(a, b))).abs());
        if iou(&fa, &fb).to_bits() != iou(&fb, &fa).to_bits() {
            asym += 1;
        }
        if iou(&fa, &fa) != 1.0 {
            selfbad += 1;
        }
    }
    verdict(
        worst <= 1e-12 && asym == 0 && selfbad == 0,
        format!("10000 integer pairs: max |iou - exact| {worst:e} (tol 1e-12), asymmetric {asym}, self-IoU != 1 {selfbad}"),
    )
}

fn enhancement_equivalence() -> Outcome {
    let (mut worst, mut shape_bad) = (0.0f64, 0);
    for seed in 0..100 {
        let c = common::random_enhance_case(seed);
        let out = enhance_pipeline(&c.r_hat, &c.mem, &c.params).unwrap();
        let r = reference_enhance(&c.r_hat, &c.mem, &c.params);
        for (a, b) in [(&out.r, &r.r), (&out.p, &r.p), (&out.f_c, &r.f_c), (&out.r_enh, &r.r_enh)] {
            worst = worst.max(common::max_abs_diff(a, b));
        }
        if out.r_enh.shape() != (c.r_hat.rows(), c.params.dim()) {
            shape_bad += 1;
        }
    }
    verdict(
        worst <= 1e-9 && shape_bad == 0,
        format!("100 instances: max diff {worst:e} (tol 1e-9), wrong output shape {shape_bad}"),
    )
}

fn directional_derivative() -> Outcome {
    let h = 1e-5;
    let (mut checked, mut seed, mut worst) = (0, 5000u64, 0.0f64);
    while checked < 20 {
        seed += 1;
        let c = common::random_enhance_case(seed);
        let mut rng = common::rng(seed);
        let u = common::random_matrix(&mut rng, c.r_hat.rows(), c.r_hat.cols(), 1.0);
        let z = embedding_preactivation(&c.r_hat, &c.params);
        let dz = linalg::matmul(&u, &c.params.w_embed).unwrap();
        if z.data().iter().zip(dz.data()).any(|(a, b)| a.abs() <= 2.0 * h * b.abs() + 1e-9) {
            continue;
        }
        let s = |x: f64| {
            let data = c.r_hat.data().iter().zip(u.data()).map(|(a, b)| a + x * b).collect();
            let m = Matrix::new(c.r_hat.rows(), c.r_hat.cols(), data).unwrap();
            enhance_pipeline(&m, &c.mem, &c.params).unwrap().r_enh.data().iter().sum::<f64>()
        };
        let fd = (s(h) - s(-h)) / (2.0 * h);
        let analytic: f64 = enhance_jvp(&c.r_hat, &c.mem, &c.params, &u).data().iter().sum();
        worst = worst.max((fd - analytic).abs() / analytic.abs().max(1e-6));
        checked += 1;
    }
    verdict(worst <= 1e-4, format!("20 directions: max relative error {worst:e} (tol 1e-4)"))
}

fn run_twice(name: &str, dir: &Path, args: &[&str], outputs: &[&str]) -> Result<(), String> {
    let mut runs = Vec::new();
    for round in 0..2 {
        let out_dir = dir.join(format!("{name}-{round}"));
        fs::create_dir_all(&out_dir).unwrap();
        let mut full: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        let out_arg = if outputs.is_empty() { out_dir.clone() } else { out_dir.join(outputs[0]) };
        full.push("--out".into());
        full.push(out_arg.display().to_string());
        let res = Command::new(BIN).args(&full).output().map_err(|e| e.to_string())?;
        if !res.status.success() {
            return Err(format!("{name}: {}", String::from_utf8_lossy(&res.stderr).trim()));
        }
        let mut files: Vec<_> = fs::read_dir(&out_dir).unwrap().map(|e| e.unwrap().path()).collect();
        files.sort();
        runs.push(files.iter().map(|f| (f.file_name().unwrap().to_owned(), fs::read(f).unwrap())).collect::<Vec<_>>());
    }
    if runs[0] != runs[1] || runs[0].is_empty() {
        return Err(format!("{name}: outputs differ"));
    }
    Ok(())
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = SynthConfig::default();
    let scenes: Vec<Scene> = (0..3).map(|i| clueassign::synth::generate_scene(&cfg, i).unwrap()).collect();
    let (gt, pred) = (dir.join("gt.json"), dir.join("pred.json"));
    clueassign::ingest::write_ground_truth(&gt, &scenes, cfg.image_size).unwrap();
    clueassign::ingest::write_predictions(&pred, &scenes).unwrap();
    let inputs = dir.join("inputs");
    let status = Command::new(BIN)
        .args(["enhance-inputs", "--seed", "9", "--n", "5", "--out", inputs.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let (g, p) = (gt.to_str().unwrap(), pred.to_str().unwrap());
    let params = inputs.join("params.bin").display().to_string();
    let features = inputs.join("features.bin").display().to_string();
    let memory = inputs.join("memory.bin").display().to_string();
    let cases: Vec<(&str, Vec<&str>, Vec<&str>)> = vec![
        ("assign-synth", vec!["assign", "--assigner", "mcss", "--synth", "default", "--scenes", "4", "--seed", "3", "--format", "json"], vec!["a.json"]),
        ("assign-files", vec!["assign", "--assigner", "iou_max", "--gt", g, "--pred", p, "--format", "csv"], vec!["a.csv"]),
        ("stats", vec!["stats", "--scenes", "40", "--seed", "1", "--format", "csv"], vec!["s.csv"]),
        ("stats-json", vec!["stats", "--scenes", "40", "--seed", "1", "--format", "json", "--threads", "3"], vec!["s.json"]),
        ("memory-sim", vec!["memory-sim", "--seed", "4", "--iterations", "50", "--format", "json"], vec!["m.json"]),
        ("enhance", vec!["enhance", "--params", &params, "--features", &features, "--memory", &memory], vec!["e.bin"]),
        ("enhance-inputs", vec!["enhance-inputs", "--seed", "2"], vec![]),
    ];
    let mut errors = Vec::new();
    for (name, args, outs) in &cases {
        if let Err(e) = run_twice(name, dir, args, outs) {
            errors.push(e);
        }
    }
    verdict(
        errors.is_empty(),
        format!("{} subcommand runs repeated, byte-identical; problems: {errors:?}", cases.len()),
    )
}

fn throughput() -> Outcome {
    let mut rng = common::rng(10);
    let side = 8192.0;
    let mut boxes = |n: usize| -> Vec<BBox> {
        (0..n)
            .map(|_| {
                let (x, y) = (rng.random_range(0.0..side - 64.0), rng.random_range(0.0..side - 64.0));
                let (w, h): (f64, f64) = (rng.random_range(2.0..64.0), rng.random_range(2.0..64.0));
                BBox::new(x, y, x + w, y + h).unwrap()
            })
            .collect()
    };
    let gts = boxes(1000);
    let preds = boxes(100_000);
    let mut r = common::rng(11);
    let scores: Vec<f64> = (0..100_000).map(|_| common::normal(&mut r)).collect();
    let scene = Scene::new(0, 1, gts, vec![0; 1000], preds, scores).unwrap();
    let start = Instant::now();
    let a = assign_mcss(&scene, &AssignConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("N=100000, G=1000 in {secs:.2}s single-threaded (soft limit 5s), {} positives", a.num_positives());
    if secs < 5.0 {
        Outcome::Pass(detail)
    } else {
        Outcome::Warn(detail)
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle equivalence (MCSS)", oracle_equivalence),
        ("size-bucket balance of positives", size_balance),
        ("limit-case identities", limit_cases),
        ("EMA geometric convergence", ema_convergence),
        ("convexity suite", convexity),
        ("geometry exactness", geometry_exactness),
        ("enhancement equivalence", enhancement_equivalence),
        ("directional derivative", directional_derivative),
        ("CLI determinism", determinism),
        ("throughput", throughput),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (tag, detail) = match f() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Warn(d) => ("WARN", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} criterion {:>2} {name}: {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
