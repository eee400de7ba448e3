//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test -p shazam-cli --test acceptance -- 1 3`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shazam_core::ablation::{run_ablation, AblationKind, AblationPlan, AblationResult};
use shazam_core::distill::{
    cosine_distance, distill_pair, distill_pair_on_tape, distill_total, huber_elementwise, DistillConfig,
};
use shazam_core::feature_store::{
    default_teachers, read_feature_set, synth_teacher_set, write_feature_set, FeatureSet, PlantedMode, ScaleLevel,
    ScaleMode, SynthConfig, TaskKind, TeacherSpec,
};
use shazam_core::fusion::{FusionConfig, FusionModel};
use shazam_core::metrics::{
    concordance_index, concordance_index_brute_force, kaplan_meier, load_benchmark_dir, RankPolicy,
};
use shazam_core::mil::{abmil_pool, AbmilHead};
use shazam_core::nn::ParamStore;
use shazam_core::report::{pairwise_wilcoxon, rank_wilcoxon};
use shazam_core::tasks::{
    nll_survival_loss, ridge_loss, ArchOptions, BackboneConfig, HeadConfig, ModelConfig, ShazamModel, Target,
    TrainConfig,
};
use shazam_core::{Mat, Tape};

type Check = fn() -> Result<String, String>;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{name}: got {got}, want {want} ± {tol}"))
}

fn shazam(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_shazam"))
        .args(args)
        .current_dir(dir)
        .env_remove("SHAZAM_DATA_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("shazam {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr))
    })
}

fn tempdir() -> Result<tempfile::TempDir, String> {
    tempfile::tempdir().map_err(|e| e.to_string())
}

fn ranks() -> Result<String, String> {
    let dir = tempdir()?;
    let fixtures = root().join("fixtures/benchmarks");
    shazam(&["report", fixtures.to_str().unwrap(), "--out", "rep"], dir.path())?;
    let csv = std::fs::read_to_string(dir.path().join("rep/ranks.csv")).map_err(|e| e.to_string())?;
    let row = |model: &str| -> Result<(f64, usize, usize), String> {
        let line = csv.lines().find(|l| l.starts_with(&format!("{model},"))).ok_or(format!("no row for {model}"))?;
        let c: Vec<&str> = line.split(',').collect();
        Ok((c[1].parse().unwrap(), c[2].parse().unwrap(), c[3].parse().unwrap()))
    };
    let (shazam_rank, firsts, tasks) = row("Shazam")?;
    let (virchow, _, _) = row("Virchow2")?;
    ensure(tasks == 30, || format!("{tasks} tasks"))?;
    close("Shazam mean rank", shazam_rank, 1.17, 0.05)?;
    close("Virchow2 mean rank", virchow, 3.20, 0.05)?;
    ensure(firsts.abs_diff(26) <= 1, || format!("Shazam first on {firsts} tasks"))?;
    Ok(format!("Shazam {shazam_rank:.3}, Virchow2 {virchow:.3}, Shazam first on {firsts}/{tasks}"))
}

fn wilcoxon() -> Result<String, String> {
    let tables = load_benchmark_dir(&root().join("fixtures/benchmarks")).map_err(|e| e.to_string())?;
    let rows = pairwise_wilcoxon(&tables, "Shazam").map_err(|e| e.to_string())?;
    let surv = rows
        .iter()
        .find(|r| r.group == "tcga" && r.other == "H-optimus-1")
        .ok_or("no survival comparison against H-optimus-1")?;
    ensure(surv.n == 10, || format!("{} survival pairs", surv.n))?;
    ensure(surv.p_value <= 0.01, || format!("survival p = {}", surv.p_value))?;
    let st = rank_wilcoxon(&tables, "hest", "Shazam", RankPolicy::default()).map_err(|e| e.to_string())?;
    ensure(st.n == 8, || format!("{} ST cohorts", st.n))?;
    ensure(st.p_value <= 0.005, || format!("ST rank p = {}", st.p_value))?;
    Ok(format!("survival p = {:.5}, ST rank p = {:.5} (vs {})", surv.p_value, st.p_value, st.other))
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn oracle_pair(z: &[f64], t: &[f64], delta: f64) -> f64 {
    let nz = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nt = t.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (mut cos, mut hub) = (0.0, 0.0);
    for k in 0..z.len() {
        let (a, b) = (z[k] / nz, t[k] / nt);
        cos += a * b;
        let e = (a - b).abs();
        hub += if e <= delta { 0.5 * e * e } else { delta * (e - 0.5 * delta) };
    }
    (1.0 - cos) + hub / z.len() as f64
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn losses() -> Result<String, String> {
    const TOL: f64 = 1e-9;
    let cfg = DistillConfig::default();
    let e = |r: shazam_core::Result<f64>| r.map_err(|e| e.to_string());
    close("cosine equal", e(cosine_distance(&[3.0, 4.0], &[3.0, 4.0]))?, 0.0, TOL)?;
    close("cosine orthogonal", e(cosine_distance(&[1.0, 0.0], &[0.0, 1.0]))?, 1.0, TOL)?;
    close("cosine opposite", e(cosine_distance(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]))?, 2.0, TOL)?;
    let t = [0.3, -1.2, 2.0, 0.0];
    let d = 0.7;
    let shift = |s: f64| t.iter().map(|x| x + s).collect::<Vec<f64>>();
    close("huber zero", e(huber_elementwise(&t, &t, d))?, 0.0, TOL)?;
    close("huber at delta", e(huber_elementwise(&shift(d), &t, d))?, d * d / 2.0, TOL)?;
    close("huber at 2 delta", e(huber_elementwise(&shift(-2.0 * d), &t, d))?, 1.5 * d * d, TOL)?;
    close("pair scaled", e(distill_pair(&[1.48, -3.7, 9.25], &[0.4, -1.0, 2.5], &cfg))?, 0.0, TOL)?;
    close("pair orthogonal", e(distill_pair(&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], &cfg))?, 1.25, TOL)?;
    close("pair opposite", e(distill_pair(&[-1.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &cfg))?, 2.5, TOL)?;
    close("nll censored", e(nll_survival_loss(&[0.0; 4], 3, false))?, 4.0 * 2f64.ln(), TOL)?;
    close("nll event", e(nll_survival_loss(&[0.0; 4], 1, true))?, 2.0 * 2f64.ln(), TOL)?;
    let l: Vec<f64> = [0.2, 0.35, 0.6, 0.1].iter().map(|p| logit(*p)).collect();
    close("nll hazards", e(nll_survival_loss(&l, 1, true))?, -(0.35f64.ln()) - 0.8f64.ln(), TOL)?;
    close("ridge mse", e(ridge_loss(&[2.0, 3.0], &[1.0, 2.0], &[], 0.0))?, 1.0, TOL)?;
    close("ridge penalty", e(ridge_loss(&[2.0, 3.0], &[1.0, 2.0], &[&[1.0, -2.0]], 0.1))?, 1.5, TOL)?;

    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = r.random_range(1..6);
        let dim = r.random_range(2..12);
        let delta = r.random_range(0.2..2.0);
        let cfg = DistillConfig { delta, lambda_distill: 0.01 };
        let z: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut r, dim)).collect();
        let targets: Vec<Vec<Vec<f64>>> = (0..3).map(|_| (0..n).map(|_| random_vec(&mut r, dim)).collect()).collect();
        let mut sum = 0.0;
        for s in 0..3 {
            for i in 0..n {
                sum += oracle_pair(&z[s], &targets[s][i], delta);
            }
        }
        let got = e(distill_total(&z, &targets, &cfg))?;
        worst = worst.max((got - sum / (3 * n) as f64).abs());
    }
    ensure(worst <= TOL, || format!("distill_total off by {worst:e}"))?;
    Ok(format!("tabulated examples exact, distill_total worst error {worst:.1e} over 100 instances"))
}

fn grad_teachers() -> Vec<TeacherSpec> {
    vec![
        TeacherSpec::new("a", 6, 12).unwrap(),
        TeacherSpec::new("b", 9, 24).unwrap(),
        TeacherSpec::new("c", 5, 8).unwrap(),
    ]
}

fn grad_fusion(fs: &FeatureSet) -> FusionConfig {
    let mut f = FusionConfig::new(fs.teachers.iter().map(|t| t.native_dim).collect(), 16, 5);
    f.heads = 4;
    f.layers = 2;
    f
}

/// Worst relative error over every parameter scalar, distillation targets held fixed.
fn fd_worst(model: &mut ShazamModel, fs: &FeatureSet, tiles: &[usize], target: &Target, dcfg: &DistillConfig) -> (f64, usize) {
    const STEP: f64 = 1e-5;
    let analytic = model.unit_loss(fs, tiles, target, dcfg, 1e-3, None).unwrap();
    let frozen = model.distill_targets(fs, tiles).unwrap();
    let eval = |m: &ShazamModel| m.unit_loss_with_targets(fs, tiles, target, dcfg, 1e-3, None, Some(&frozen)).unwrap().breakdown.total;
    let ids: Vec<_> = model.store.ids().collect();
    let (mut worst, mut n) = (0.0f64, 0);
    for (slot, id) in ids.iter().enumerate() {
        for k in 0..model.store.get(*id).len() {
            let a = analytic.grads[slot].as_ref().map_or(0.0, |g| g.data[k]);
            let orig = model.store.get(*id).data[k];
            model.store.get_mut(*id).data[k] = orig + STEP;
            let up = eval(model);
            model.store.get_mut(*id).data[k] = orig - STEP;
            let down = eval(model);
            model.store.get_mut(*id).data[k] = orig;
            let num = (up - down) / (2.0 * STEP);
            worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(1e-6));
            n += 1;
        }
    }
    (worst, n)
}

fn synth_small(task: TaskKind, n: usize, tiles: usize, seed: u64) -> FeatureSet {
    let mut c = SynthConfig::new(grad_teachers(), n, task);
    c.planted = PlantedMode::Graded;
    c.tiles_per_slide = tiles;
    c.n_patients = n.min(20);
    synth_teacher_set(&c, seed).unwrap()
}

fn gradients() -> Result<String, String> {
    let fs = synth_small(TaskKind::Tile, 6, 0, 4);
    let mut head = HeadConfig::tile(fs.manifest.num_classes);
    head.hidden = vec![8];
    let cfg = ModelConfig { backbone: BackboneConfig::Fusion { fusion: grad_fusion(&fs), mil_hidden: None }, head, seed: 9 };
    let mut model = ShazamModel::new(cfg).map_err(|e| e.to_string())?;
    let (w1, n1) = fd_worst(&mut model, &fs, &[2], &Target::Class(1), &DistillConfig::default());

    let bags = synth_small(TaskKind::Survival, 4, 3, 6);
    let mut head = HeadConfig::survival(4);
    head.hidden = vec![8];
    let cfg = ModelConfig { backbone: BackboneConfig::Fusion { fusion: grad_fusion(&bags), mil_hidden: Some(8) }, head, seed: 4 };
    let mut model = ShazamModel::new(cfg).map_err(|e| e.to_string())?;
    let bag = bags.bags().remove(0);
    let dcfg = DistillConfig { delta: 1.0, lambda_distill: 0.5 };
    let (w2, n2) = fd_worst(&mut model, &bags, &bag.tiles, &Target::Survival { bin: 2, event: true }, &dcfg);
    let worst = w1.max(w2);
    ensure(worst <= 1e-4, || format!("worst relative error {worst:e}"))?;

    // targets and raw teacher features sit on the tape but must stay gradient-free
    let mut store = ParamStore::new();
    let fusion = FusionModel::new(&mut store, grad_fusion(&fs)).map_err(|e| e.to_string())?;
    let mut tape = Tape::new();
    let (mut frozen, mut terms) = (Vec::new(), Vec::new());
    for &s in &fusion.cfg.scales {
        let feats: Vec<_> = fs.samples[0]
            .features
            .iter()
            .map(|f| tape.constant(Mat::row_vector(f.get(s).iter().map(|&x| f64::from(x)).collect())))
            .collect();
        let (projected, _) = fusion.project_and_concat(&mut tape, &store, &feats, s).unwrap();
        let out = fusion.fuse_projected(&mut tape, &store, s, projected.clone()).unwrap();
        for &p in &projected {
            let t = tape.detach(p);
            terms.push(distill_pair_on_tape(&mut tape, out.z, t, 1.0).unwrap());
            frozen.push(t);
        }
        frozen.extend(feats);
    }
    let loss = tape.add_all(&terms);
    let grads = tape.backward(loss);
    let leaked = frozen.iter().filter(|&&v| grads.get(v).is_some_and(|g| g.data.iter().any(|x| *x != 0.0))).count();
    ensure(leaked == 0, || format!("{leaked} frozen tensors received gradient"))?;
    Ok(format!("{} scalars, worst relative error {worst:.2e}; targets and features gradient-free", n1 + n2))
}

fn prop_runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(Config { cases, failure_persistence: None, ..Config::default() }, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn fusion_model(n: usize, seed: u64) -> (ParamStore, FusionModel) {
    let mut store = ParamStore::new();
    let mut cfg = FusionConfig::new(vec![7; n], 8, seed);
    cfg.layers = 2;
    cfg.heads = 2;
    let m = FusionModel::new(&mut store, cfg).unwrap();
    (store, m)
}

fn err<T: std::fmt::Debug>(name: &str) -> impl Fn(proptest::test_runner::TestError<T>) -> String + '_ {
    move |e| format!("{name}: {e}")
}

fn properties() -> Result<String, String> {

    prop_runner(200)
        .run(&(1usize..6, 0u64..1000, 0.01f64..50.0, prop::collection::vec(-1.0f64..1.0, 42)), |(n, seed, scale, vals)| {
            let (store, m) = fusion_model(n, seed);
            let mut t = Tape::new();
            let xs: Vec<_> = (0..n).map(|i| t.constant(Mat::row_vector(vals[i * 7..(i + 1) * 7].iter().map(|v| v * scale).collect()))).collect();
            let (_, concat) = m.project_and_concat(&mut t, &store, &xs, ScaleLevel::Low).unwrap();
            let g = m.gate(&mut t, &store, ScaleLevel::Low, concat).unwrap();
            let g = &t.value(g).data;
            prop_assert!(g.iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            Ok(())
        })
        .map_err(err("gate simplex"))?;

    prop_runner(200)
        .run(&(1usize..9, 0u64..1000, prop::collection::vec(-3.0f64..3.0, 40), any::<u64>()), |(rows, seed, vals, ps)| {
            let mut store = ParamStore::new();
            let head = AbmilHead::new(&mut store, "mil", 5, 6, seed);
            let bag: Vec<Vec<f64>> = (0..rows).map(|r| vals[r * 5..(r + 1) * 5].to_vec()).collect();
            let mut order: Vec<usize> = (0..rows).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(ps));
            let pool = |b: &[Vec<f64>]| {
                let mut t = Tape::new();
                let v = t.constant(Mat::from_rows(b));
                let (p, _) = abmil_pool(&mut t, &store, &head, v).unwrap();
                t.value(p).data.clone()
            };
            let permuted: Vec<Vec<f64>> = order.iter().map(|&i| bag[i].clone()).collect();
            for (a, b) in pool(&bag).iter().zip(pool(&permuted)) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            Ok(())
        })
        .map_err(err("ABMIL invariance"))?;

    prop_runner(200)
        .run(&(2usize..6, 0u64..1000, prop::collection::vec(-2.0f64..2.0, 48), any::<u64>()), |(n, seed, vals, ps)| {
            let (store, m) = fusion_model(n, seed);
            let x: Vec<Vec<f64>> = (0..n).map(|r| vals[r * 8..(r + 1) * 8].to_vec()).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(ps));
            let run = |rows: &[Vec<f64>]| {
                let mut t = Tape::new();
                let v = t.constant(Mat::from_rows(rows));
                let out = m.stack.forward(&mut t, &store, v).unwrap();
                t.value(out).clone()
            };
            let a = run(&x);
            let b = run(&order.iter().map(|&i| x[i].clone()).collect::<Vec<_>>());
            for (k, &i) in order.iter().enumerate() {
                for (p, q) in b.row(k).iter().zip(a.row(i)) {
                    prop_assert!((p - q).abs() <= 1e-6);
                }
            }
            Ok(())
        })
        .map_err(err("attention equivariance"))?;

    prop_runner(300)
        .run(&(prop::collection::vec((0u32..30, any::<bool>()), 1..60)), |pairs| {
            let t: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
            let e: Vec<bool> = pairs.iter().map(|p| p.1).collect();
            let c = kaplan_meier(&t, &e).unwrap();
            let mut prev = 1.0;
            for s in &c.survival {
                prop_assert!(*s <= prev && *s >= 0.0);
                prev = *s;
            }
            Ok(())
        })
        .map_err(err("KM monotone"))?;

    let mut r = ChaCha8Rng::seed_from_u64(77);
    let mut checked = 0;
    while checked < 1000 {
        let n = r.random_range(2..=50);
        let levels = r.random_range(2..40);
        let risk: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..levels))).collect();
        let time: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..levels))).collect();
        let event: Vec<bool> = (0..n).map(|_| r.random_bool(0.6)).collect();
        let fast = concordance_index(&risk, &time, &event);
        let slow = concordance_index_brute_force(&risk, &time, &event);
        match (fast, slow) {
            (Ok(a), Ok(b)) => ensure(a == b, || format!("C-index {a} vs brute force {b} at n = {n}"))?,
            (Err(_), Err(_)) => {}
            (a, b) => return Err(format!("C-index disagreement on definedness: {a:?} vs {b:?}")),
        }
        checked += 1;
    }
    Ok("gate simplex, ABMIL invariance, attention equivariance, KM monotone, C-index = brute force on 1000".into())
}

fn ablation_arch() -> ArchOptions {
    ArchOptions { d: 32, heads: 4, layers: 2, head_hidden: Some(vec![32]), mil_hidden: 16, ..Default::default() }
}

fn planted(task: TaskKind, n: usize, scale_mode: ScaleMode, seed: u64) -> FeatureSet {
    let mut c = SynthConfig::new(default_teachers(), n, task);
    c.planted = PlantedMode::TeacherZeroOnly;
    c.scale_mode = scale_mode;
    c.n_patients = 20;
    synth_teacher_set(&c, seed).unwrap()
}

fn ablate(fs: &FeatureSet, kind: AblationKind, keep: &[&str], cfg: &TrainConfig, seed: u64) -> Result<AblationResult, String> {
    let arch = ablation_arch();
    let mut plan = AblationPlan::new(kind, fs, &arch).map_err(|e| e.to_string())?;
    if !keep.is_empty() {
        plan.schedule.retain(|c| keep.contains(&c.name.as_str()));
    }
    run_ablation(fs, &plan, &arch, cfg, 3, seed, 1).map_err(|e| e.to_string())
}

fn mean_of(results: &[AblationResult], config: &str) -> f64 {
    results.iter().map(|r| r.get(config).expect("configuration ran").mean).sum::<f64>() / results.len() as f64
}

fn ablations() -> Result<String, String> {
    const REPEATS: u64 = 3;
    let mut st = TrainConfig::st();
    st.epochs = 20;
    st.batch_size = 32;
    let mut tile = TrainConfig::tile();
    tile.epochs = 20;
    tile.batch_size = 32;

    let (mut removal, mut scales, mut moe) = (Vec::new(), Vec::new(), Vec::new());
    for rep in 0..REPEATS {
        let fs = planted(TaskKind::Expression, 160, ScaleMode::Shared, 100 + rep);
        let signal = format!("without:{}", fs.teachers[0].name);
        let noise = format!("without:{}", fs.teachers[3].name);
        removal.push(ablate(&fs, AblationKind::TeacherRemoval, &["full", &signal, &noise], &st, rep)?);
        let fs = planted(TaskKind::Expression, 160, ScaleMode::Split, 200 + rep);
        scales.push(ablate(&fs, AblationKind::ScaleCombo, &[], &st, rep)?);
        let fs = planted(TaskKind::Tile, 160, ScaleMode::Shared, 300 + rep);
        moe.push(ablate(&fs, AblationKind::MoeSwitch, &[], &tile, rep)?);
    }
    let names: Vec<String> = default_teachers().iter().map(|t| t.name.clone()).collect();
    let full = mean_of(&removal, "full");
    let drop_signal = full - mean_of(&removal, &format!("without:{}", names[0]));
    let drop_noise = full - mean_of(&removal, &format!("without:{}", names[3]));
    let all = mean_of(&scales, "low+mid+high");
    let best_single = ["low", "mid", "high"].iter().map(|s| mean_of(&scales, s)).fold(f64::NEG_INFINITY, f64::max);
    let (on, off) = (mean_of(&moe, "moe_on"), mean_of(&moe, "moe_off"));
    let summary = format!(
        "PCC drop signal {drop_signal:.3} vs noise {drop_noise:.3}; all scales {all:.3} vs best single {best_single:.3}; MoE on {on:.3} vs off {off:.3}"
    );
    ensure(drop_signal > drop_noise, || format!("teacher removal direction wrong: {summary}"))?;
    ensure(all >= best_single, || format!("scale combination direction wrong: {summary}"))?;
    ensure(on >= off - 0.01, || format!("gating direction wrong: {summary}"))?;
    Ok(summary)
}

fn determinism() -> Result<String, String> {
    let dir = tempdir()?;
    let p = dir.path();
    std::fs::write(p.join("syn.txt"), "task = tile\nn_samples = 64\nteachers = a:6:12,b:9:24,c:5:8\nn_patients = 16\n")
        .map_err(|e| e.to_string())?;
    shazam(&["synth", "syn.txt", "d1.shz", "--seed", "5"], p)?;
    shazam(&["synth", "syn.txt", "d2.shz", "--seed", "5"], p)?;
    let read = |f: &str| std::fs::read(p.join(f)).map_err(|e| format!("{f}: {e}"));
    ensure(read("d1.shz")? == read("d2.shz")?, || "synth output differs".into())?;
    let args = ["--d", "16", "--heads", "4", "--layers", "2", "--epochs", "4", "--batch-size", "16", "--seed", "11"];
    for out in ["r1", "r2"] {
        let mut a = vec!["train", "d1.shz", "--out", out];
        a.extend(args);
        shazam(&a, p)?;
    }
    for f in ["model.manifest", "model.params", "train_log.csv", "loss_terms.csv", "gates.csv"] {
        ensure(read(&format!("r1/{f}"))? == read(&format!("r2/{f}"))?, || format!("{f} differs between runs"))?;
    }

    let mut configs = Vec::new();
    for (i, task) in [TaskKind::Tile, TaskKind::Expression, TaskKind::Survival].into_iter().enumerate() {
        let mut c = SynthConfig::new(default_teachers()[..3].to_vec(), 12, task);
        c.tiles_per_slide = if task == TaskKind::Survival { 3 } else { 0 };
        c.scale_mode = if i == 1 { ScaleMode::Split } else { ScaleMode::Shared };
        c.n_unassigned = i;
        configs.push(c);
    }
    for (i, c) in configs.iter().enumerate() {
        let fs = synth_teacher_set(c, i as u64).map_err(|e| e.to_string())?;
        let path = p.join(format!("rt{i}.shz"));
        write_feature_set(&fs, &path).map_err(|e| e.to_string())?;
        let back = read_feature_set(&path).map_err(|e| e.to_string())?;
        ensure(back == fs, || format!("round trip changed container {i}"))?;
    }
    Ok("synth, checkpoint and logs byte-identical across runs; 3 container round trips exact".into())
}

fn main() {
    let checks: [(u32, &str, Duration, Check); 7] = [
        (1, "fixture ranks", Duration::from_secs(5), ranks),
        (2, "wilcoxon significance", Duration::from_secs(1), wilcoxon),
        (3, "loss oracles", Duration::from_secs(60), losses),
        (4, "gradient finite differences", Duration::from_secs(120), gradients),
        (5, "structural properties", Duration::from_secs(120), properties),
        (6, "ablation directions", Duration::from_secs(600), ablations),
        (7, "determinism", Duration::from_secs(120), determinism),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, budget, check) in checks {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > budget => Err(format!("{msg}; took longer than {budget:?}")),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("criterion {id} {name}: PASS ({:.2}s) {msg}", elapsed.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("criterion {id} {name}: FAIL ({:.2}s) {msg}", elapsed.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
