mod common;

use common::{small_teachers, synth_with};
use shazam_core::distill::{distill_pair_on_tape, DistillConfig};
use shazam_core::feature_store::{FeatureSet, PlantedMode, ScaleMode, TaskKind};
use shazam_core::fusion::{FusionConfig, FusionModel};
use shazam_core::nn::ParamStore;
use shazam_core::tasks::{BackboneConfig, HeadConfig, ModelConfig, ShazamModel, Target};
use shazam_core::{Mat, Tape};

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
/// Below this magnitude both gradients count as zero.
const FLOOR: f64 = 1e-6;

fn fusion_cfg(fs: &FeatureSet) -> FusionConfig {
    let mut f = FusionConfig::new(fs.teachers.iter().map(|t| t.native_dim).collect(), 16, 5);
    f.heads = 4;
    f.layers = 2;
    f
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Checks every scalar of every parameter against central differences of the
/// objective with its distillation targets held at their current values.
fn check_all(model: &mut ShazamModel, fs: &FeatureSet, tiles: &[usize], target: &Target, dcfg: &DistillConfig) {
    let analytic = model.unit_loss(fs, tiles, target, dcfg, 1e-3, None).unwrap();
    let frozen = model.distill_targets(fs, tiles).unwrap();
    let eval = |m: &ShazamModel| {
        m.unit_loss_with_targets(fs, tiles, target, dcfg, 1e-3, None, Some(&frozen)).unwrap().breakdown.total
    };
    assert_eq!(eval(model), analytic.breakdown.total);
    assert_eq!(analytic.clamp_events, 0);
    let ids: Vec<_> = model.store.ids().collect();
    let mut worst = (0.0f64, String::new());
    let mut checked = 0usize;
    for (slot, id) in ids.iter().enumerate() {
        let len = model.store.get(*id).len();
        let g = analytic.grads[slot].clone().unwrap_or_else(|| {
            let m = model.store.get(*id);
            Mat::zeros(m.rows, m.cols)
        });
        for k in 0..len {
            let orig = model.store.get(*id).data[k];
            model.store.get_mut(*id).data[k] = orig + STEP;
            let up = eval(model);
            model.store.get_mut(*id).data[k] = orig - STEP;
            let down = eval(model);
            model.store.get_mut(*id).data[k] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let e = rel_err(g.data[k], numeric);
            if e > worst.0 {
                worst = (e, format!("{}[{k}] analytic {} numeric {numeric}", model.store.name(*id), g.data[k]));
            }
            checked += 1;
        }
    }
    assert!(checked > 1000);
    assert!(worst.0 <= REL_TOL, "worst relative error {:.3e} at {}", worst.0, worst.1);
}

#[test]
fn tile_model_gradients_match_central_differences() {
    let fs = synth_with(small_teachers(), TaskKind::Tile, 6, PlantedMode::Graded, ScaleMode::Shared, 0, 4);
    let mut head = HeadConfig::tile(fs.manifest.num_classes);
    head.hidden = vec![8, 6];
    let cfg = ModelConfig { backbone: BackboneConfig::Fusion { fusion: fusion_cfg(&fs), mil_hidden: None }, head, seed: 9 };
    let mut model = ShazamModel::new(cfg).unwrap();
    for lambda in [0.01, 1.0] {
        let dcfg = DistillConfig { delta: 1.0, lambda_distill: lambda };
        check_all(&mut model, &fs, &[2], &Target::Class(1), &dcfg);
    }
}

#[test]
fn expression_model_with_ridge_gradients_match() {
    let fs = synth_with(small_teachers(), TaskKind::Expression, 6, PlantedMode::Graded, ScaleMode::Split, 0, 8);
    let mut head = HeadConfig::expression(8);
    head.hidden = vec![8];
    let cfg = ModelConfig { backbone: BackboneConfig::Fusion { fusion: fusion_cfg(&fs), mil_hidden: None }, head, seed: 2 };
    let mut model = ShazamModel::new(cfg).unwrap();
    let y: Vec<f64> = (0..8).map(|g| 0.1 * g as f64).collect();
    check_all(&mut model, &fs, &[1], &Target::Expression(y), &DistillConfig::default());
}

#[test]
fn survival_bag_model_gradients_match() {
    let fs = synth_with(small_teachers(), TaskKind::Survival, 4, PlantedMode::Graded, ScaleMode::Shared, 3, 6);
    let mut head = HeadConfig::survival(4);
    head.hidden = vec![8];
    let cfg = ModelConfig { backbone: BackboneConfig::Fusion { fusion: fusion_cfg(&fs), mil_hidden: Some(8) }, head, seed: 4 };
    let mut model = ShazamModel::new(cfg).unwrap();
    let bag = fs.bags().remove(0);
    let dcfg = DistillConfig { delta: 1.0, lambda_distill: 0.5 };
    check_all(&mut model, &fs, &bag.tiles, &Target::Survival { bin: 2, event: true }, &dcfg);
    check_all(&mut model, &fs, &bag.tiles, &Target::Survival { bin: 1, event: false }, &dcfg);
}

#[test]
fn targets_and_teacher_features_receive_no_gradient() {
    let fs = synth_with(small_teachers(), TaskKind::Tile, 3, PlantedMode::Graded, ScaleMode::Shared, 0, 1);
    let mut store = ParamStore::new();
    let fusion = FusionModel::new(&mut store, fusion_cfg(&fs)).unwrap();
    let sample = &fs.samples[0];

    let mut tape = Tape::new();
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut targets = Vec::new();
    for &s in &fusion.cfg.scales {
        let feats: Vec<_> = sample
            .features
            .iter()
            .map(|f| tape.constant(Mat::row_vector(f.get(s).iter().map(|&x| f64::from(x)).collect())))
            .collect();
        let (projected, _) = fusion.project_and_concat(&mut tape, &store, &feats, s).unwrap();
        let out = fusion.fuse_projected(&mut tape, &store, s, projected.clone()).unwrap();
        for &p in &projected {
            targets.push((tape.detach(p), out.z));
        }
        inputs.extend(feats);
        outputs.push(out);
    }
    let terms: Vec<_> = targets.iter().map(|&(t, z)| distill_pair_on_tape(&mut tape, z, t, 1.0).unwrap()).collect();
    let loss = tape.add_all(&terms);
    let grads = tape.backward(loss);
    for &(t, _) in &targets {
        assert!(grads.get(t).is_none_or(|g| g.data.iter().all(|v| *v == 0.0)));
    }
    for &x in &inputs {
        assert!(grads.get(x).is_none_or(|g| g.data.iter().all(|v| *v == 0.0)));
    }
    // the student path itself is trained
    let proj = store.find("proj.0.low.weight").unwrap();
    assert!(grads.param(proj.0).is_some_and(|g| g.data.iter().any(|v| *v != 0.0)));
}

#[test]
fn projection_gradient_treats_targets_as_fixed() {
    // Finite differences that hold the targets at their unperturbed values
    // agree with the analytic gradient; letting targets move does not.
    let fs = synth_with(small_teachers(), TaskKind::Tile, 3, PlantedMode::Graded, ScaleMode::Shared, 0, 1);
    let mut store = ParamStore::new();
    let mut fcfg = fusion_cfg(&fs);
    fcfg.scales = vec![shazam_core::ScaleLevel::Low];
    let fusion = FusionModel::new(&mut store, fcfg).unwrap();
    let feats: Vec<_> = fs.samples[0].features.iter().collect();

    let loss_with = |store: &ParamStore, frozen: Option<&[Mat]>| -> (f64, Vec<Mat>, Option<Mat>) {
        let mut tape = Tape::new();
        let out = fusion.forward(&mut tape, store, &feats).unwrap();
        let s = &out.scales[0];
        let current: Vec<Mat> = s.projected.iter().map(|p| tape.value(*p).clone()).collect();
        let terms: Vec<_> = (0..s.projected.len())
            .map(|i| {
                let t = match frozen {
                    Some(f) => tape.constant(f[i].clone()),
                    None => tape.detach(s.projected[i]),
                };
                distill_pair_on_tape(&mut tape, s.z, t, 1.0).unwrap()
            })
            .collect();
        let loss = tape.add_all(&terms);
        let g = tape.backward(loss);
        let id = store.find("proj.1.low.weight").unwrap();
        (tape.scalar(loss), current, g.param(id.0).cloned())
    };
    let (_, base_targets, grad) = loss_with(&store, None);
    let grad = grad.unwrap();
    let id = store.find("proj.1.low.weight").unwrap();
    let mut moving_differs = false;
    for k in 0..store.get(id).len() {
        let orig = store.get(id).data[k];
        let eval = |store: &mut ParamStore, frozen: bool| {
            store.get_mut(id).data[k] = orig + STEP;
            let up = if frozen { loss_with(store, Some(&base_targets)).0 } else { moving_loss(&fusion, store, &feats) };
            store.get_mut(id).data[k] = orig - STEP;
            let down = if frozen { loss_with(store, Some(&base_targets)).0 } else { moving_loss(&fusion, store, &feats) };
            store.get_mut(id).data[k] = orig;
            (up - down) / (2.0 * STEP)
        };
        let fixed = eval(&mut store, true);
        assert!(rel_err(grad.data[k], fixed) <= REL_TOL, "entry {k}: {} vs {fixed}", grad.data[k]);
        let moving = eval(&mut store, false);
        moving_differs |= rel_err(grad.data[k], moving) > 1e-3;
    }
    assert!(moving_differs);
}

/// Distillation loss when targets are recomputed from the perturbed parameters.
fn moving_loss(fusion: &FusionModel, store: &ParamStore, feats: &[&shazam_core::MultiScaleFeature]) -> f64 {
    let mut tape = Tape::new();
    let out = fusion.forward(&mut tape, store, feats).unwrap();
    let s = &out.scales[0];
    let terms: Vec<_> = s
        .projected
        .iter()
        .map(|&p| {
            let t = tape.constant(tape.value(p).clone());
            distill_pair_on_tape(&mut tape, s.z, t, 1.0).unwrap()
        })
        .collect();
    let loss = tape.add_all(&terms);
    tape.scalar(loss)
}
