use super::*;
use crate::featurize::batch_graphs;
use crate::model::{EncoderSharing, ModelDims, ParamId};
use crate::smiles::parse_smiles;

fn t(data: &[f64]) -> Tensor {
    Tensor::vector(data.to_vec())
}

fn value(tape: &Tape, v: Var) -> f64 {
    tape.value(v).item()
}

#[test]
fn regression_examples() {
    let tape = Tape::new();
    let c = |d: &[f64]| tape.constant(t(d)).unwrap();
    assert_eq!(value(&tape, regression_loss(&tape, c(&[1.0, 2.0]), c(&[1.0, 2.0])).unwrap()), 0.0);
    assert_eq!(value(&tape, regression_loss(&tape, c(&[0.0, 0.0]), c(&[1.0, 1.0])).unwrap()), 1.0);
    assert_eq!(value(&tape, regression_loss(&tape, c(&[1.0, 3.0]), c(&[2.0, 5.0])).unwrap()), 2.5);
    assert!(regression_loss(&tape, c(&[1.0]), c(&[1.0, 2.0])).is_err());
    assert!(regression_loss(&tape, c(&[]), c(&[])).is_err());
}

#[test]
fn autoencoder_examples() {
    let tape = Tape::new();
    let c = |d: &[f64]| tape.constant(t(d)).unwrap();
    let (z, z_hat) = (c(&[1.0, 0.0]), c(&[0.0, 0.0]));
    assert_eq!(value(&tape, autoencoder_loss(&tape, &[(z, z)]).unwrap()), 0.0);
    assert_eq!(value(&tape, autoencoder_loss(&tape, &[(z, z_hat)]).unwrap()), 0.5);
    let other = (c(&[2.0, 2.0]), c(&[0.0, 0.0]));
    assert_eq!(value(&tape, autoencoder_loss(&tape, &[(z, z_hat), other]).unwrap()), 0.5 + 4.0);
}

#[test]
fn consistency_examples() {
    let tape = Tape::new();
    let c = |d: &[f64]| tape.constant(t(d)).unwrap();
    let target = c(&[0.5, -1.0]);
    assert_eq!(value(&tape, consistency_loss(&tape, target, &[target]).unwrap()), 0.0);
    let shifted = c(&[1.5, 0.0]);
    assert_eq!(value(&tape, consistency_loss(&tape, target, &[shifted]).unwrap()), 1.0);
    assert_eq!(value(&tape, consistency_loss(&tape, shifted, &[target]).unwrap()), 1.0);
}

#[test]
fn mapping_examples() {
    let tape = Tape::new();
    let c = |d: &[f64]| tape.constant(t(d)).unwrap();
    let y = c(&[1.0, -2.0, 0.5]);
    assert_eq!(value(&tape, mapping_loss(&tape, y, &[y]).unwrap()), 0.0);
    let off = c(&[3.0, 0.0, 2.5]);
    assert_eq!(value(&tape, mapping_loss(&tape, y, &[off]).unwrap()), 4.0);
    assert_eq!(value(&tape, mapping_loss(&tape, y, &[off, off, y]).unwrap()), 8.0);
    assert!(mapping_loss(&tape, c(&[]), &[c(&[])]).is_err());
}

#[test]
fn displacement_examples() {
    let tape = Tape::new();
    let m = |rows: usize, d: &[f64]| tape.constant(Tensor::matrix(rows, d.len() / rows, d.to_vec())).unwrap();
    let a = m(2, &[1.0, 1.0, 0.0, 0.0]);
    let b = m(2, &[4.0, 5.0, 0.0, 0.0]);
    assert_eq!(tape.value(displacement(&tape, a, b).unwrap()).data(), &[5.0, 0.0]);
    assert_eq!(tape.value(displacement(&tape, a, a).unwrap()).data(), &[0.0, 0.0]);
}

#[test]
fn distance_examples() {
    let tape = Tape::new();
    let c = |x: f64| tape.constant(Tensor::matrix(1, 1, vec![x])).unwrap();
    let s_t = [c(1.0), c(2.0)];
    let s_a = [c(2.0), c(4.0)];
    assert_eq!(value(&tape, distance_loss(&tape, &s_t, &[(&s_t, 1.0)]).unwrap()), 0.0);
    assert_eq!(value(&tape, distance_loss(&tape, &s_t, &[(&s_a, 1.0)]).unwrap()), 2.5);
    assert_eq!(value(&tape, distance_loss(&tape, &s_t, &[(&s_a, 2.0)]).unwrap()), 5.0);
    assert!(distance_loss(&tape, &s_t, &[(&s_a[..1], 1.0)]).is_err());
    assert!(distance_loss(&tape, &[], &[]).is_err());
}

#[test]
fn total_loss_examples() {
    let zero = LossWeights::regression_only();
    assert_eq!(total_loss(0.7, 9.0, 9.0, 9.0, 9.0, &zero), 0.7);
    let ones = LossWeights { alpha: 1.0, beta: 1.0, gamma: 1.0, delta: 1.0, ..LossWeights::default() };
    assert_eq!(total_loss(1.0, 1.0, 1.0, 1.0, 1.0, &ones), 5.0);
    let half = LossWeights { alpha: 0.5, beta: 0.5, gamma: 0.5, delta: 0.5, ..LossWeights::default() };
    assert_eq!(total_loss(2.0, 1.0, 1.0, 1.0, 1.0, &half), 4.0);
}

#[test]
fn total_loss_is_affine_in_each_weight() {
    let comps = [0.31, 0.17, 0.029, 1.3, 0.44];
    let w = LossWeights::default();
    let base = total_loss(comps[0], comps[1], comps[2], comps[3], comps[4], &w);
    let bumped = [
        LossWeights { alpha: w.alpha + 1.0, ..w.clone() },
        LossWeights { beta: w.beta + 1.0, ..w.clone() },
        LossWeights { gamma: w.gamma + 1.0, ..w.clone() },
        LossWeights { delta: w.delta + 1.0, ..w.clone() },
    ];
    for (k, b) in bumped.iter().enumerate() {
        let diff = total_loss(comps[0], comps[1], comps[2], comps[3], comps[4], b) - base;
        assert!((diff - comps[k + 1]).abs() < 1e-12);
    }
}

#[test]
fn distance_is_rotation_invariant() {
    // rotate both tasks' flat-frame vectors by the same orthogonal matrix
    let (c, s) = (0.6_f64, 0.8_f64);
    let rot = |v: &[f64]| -> Vec<f64> { v.chunks(2).flat_map(|r| [c * r[0] - s * r[1], s * r[0] + c * r[1]]).collect() };
    let pivots = [vec![0.3, -1.2, 2.0, 0.1], vec![1.0, 1.0, -0.5, 0.25]];
    let noisy = [
        [vec![0.31, -1.0, 2.2, 0.0], vec![0.0, -1.0, 1.9, 0.4]],
        [vec![1.1, 0.7, -0.5, 0.2], vec![0.9, 1.2, -0.45, 0.3]],
    ];
    let loss = |f: &dyn Fn(&[f64]) -> Vec<f64>| {
        let tape = Tape::new();
        let m = |v: &[f64]| tape.constant(Tensor::matrix(2, 2, f(v))).unwrap();
        let disp = |task: usize| -> Vec<Var> {
            noisy[task].iter().map(|n| displacement(&tape, m(&pivots[task]), m(n)).unwrap()).collect()
        };
        let (st, sa) = (disp(0), disp(1));
        let v = value(&tape, distance_loss(&tape, &st, &[(&sa, 1.5)]).unwrap());
        v
    };
    let plain = loss(&|v| v.to_vec());
    let rotated = loss(&rot);
    assert!(plain > 0.0);
    assert!((plain - rotated).abs() < 1e-10);
}

#[test]
fn weights_validate() {
    assert!(LossWeights::default().validate().is_ok());
    assert!(LossWeights { alpha: -1.0, ..LossWeights::default() }.validate().is_err());
    assert!(LossWeights { sigma: f64::NAN, ..LossWeights::default() }.validate().is_err());
    assert!(LossWeights { perturbations: 0, ..LossWeights::default() }.validate().is_err());
    assert!(LossWeights { perturbations: 0, ..LossWeights::regression_only() }.validate().is_ok());
    let mut w = LossWeights::default();
    w.distance_ratios.insert((0, 1), -2.0);
    assert!(w.validate().is_err());
    w.distance_ratios.insert((0, 1), 3.0);
    assert_eq!((w.ratio(0, 1), w.ratio(1, 0)), (3.0, 1.0));
}

#[test]
fn pairing_partners() {
    assert_eq!(Pairing::AllPairs.partners(1, 3), vec![0, 2]);
    assert_eq!(Pairing::Star(0).partners(0, 3), vec![1, 2]);
    assert!(Pairing::Star(0).partners(2, 3).is_empty());
    assert!(Pairing::AllPairs.partners(0, 1).is_empty());
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("task{i}")).collect()
}

fn small_model(tasks: usize, seed: u64) -> GateModel {
    let dims = ModelDims { hidden: 8, latent: 4, rounds: 2, tail_layers: 2, head_layers: 2, transfer_layers: 2 };
    GateModel::new(&names(tasks), dims, EncoderSharing::PerTask, seed).unwrap()
}

fn batch() -> (GraphBatch, Tensor) {
    let g: Vec<_> = ["CC(=O)O", "c1ccncc1", "CCN"].iter().map(|s| parse_smiles(s).unwrap()).collect();
    (batch_graphs(&g).unwrap(), Tensor::matrix(3, 1, vec![0.5, -1.0, 0.25]))
}

fn copy_params(model: &mut GateModel, from: &[ParamId], to: &[ParamId]) {
    for (a, b) in from.iter().zip(to) {
        let v = model.params.get(*a).clone();
        *model.params.get_mut(*b) = v;
    }
}

fn transfer_ids(model: &GateModel, task: usize) -> Vec<ParamId> {
    let tr = model.transfer(task);
    tr.forward.param_ids().chain(tr.inverse.param_ids()).collect()
}

#[test]
fn degenerate_configurations_are_zero() {
    let dims = ModelDims { hidden: 8, latent: 4, rounds: 2, tail_layers: 2, head_layers: 2, transfer_layers: 1 };
    let mut model = GateModel::new(&names(2), dims, EncoderSharing::PerTask, 4).unwrap();
    for task in 0..2 {
        let tr = model.transfer(task).clone();
        tr.forward.set_identity(&mut model.params);
        tr.inverse.set_identity(&mut model.params);
    }
    let (e0, e1) = (model.encoder_param_ids(0), model.encoder_param_ids(1));
    copy_params(&mut model, &e0, &e1);
    let (b, y) = batch();
    let input = StepInput { batch: &b, targets: &y, perturbation_seed: 3 };
    let w = LossWeights { sigma: 0.0, ..LossWeights::default() };
    let tape = Tape::new();
    let p = Bound::new(&tape, &model.params).unwrap();
    let terms = pair_loss_terms(&model, &p, 0, 1, &input, &w).unwrap();
    assert_eq!(value(&tape, terms.auto.unwrap()), 0.0);
    assert_eq!(value(&tape, terms.cons.unwrap()), 0.0);
    assert_eq!(value(&tape, terms.dis.unwrap()), 0.0);
    assert!(value(&tape, terms.reg) > 0.0);
}

#[test]
fn zero_sigma_displacements_vanish() {
    let model = small_model(2, 9);
    let (b, y) = batch();
    let input = StepInput { batch: &b, targets: &y, perturbation_seed: 3 };
    let w = LossWeights { sigma: 0.0, ..LossWeights::default() };
    let tape = Tape::new();
    let p = Bound::new(&tape, &model.params).unwrap();
    let terms = pair_loss_terms(&model, &p, 0, 1, &input, &w).unwrap();
    assert_eq!(value(&tape, terms.dis.unwrap()), 0.0);
    assert!(value(&tape, terms.cons.unwrap()) > 0.0);
}

#[test]
fn losses_are_non_negative() {
    let model = small_model(3, 12);
    let (b, y) = batch();
    let input = StepInput { batch: &b, targets: &y, perturbation_seed: 77 };
    let w = LossWeights { sigma: 0.5, ..LossWeights::default() };
    let tape = Tape::new();
    let p = Bound::new(&tape, &model.params).unwrap();
    let step = step_loss(&model, &p, 1, &[0, 2], &input, &w).unwrap();
    assert_eq!(step.pairs.len(), 2);
    for pair in &step.pairs {
        for v in [pair.l_reg, pair.l_auto, pair.l_cons, pair.l_map, pair.l_dis] {
            assert!(v >= 0.0 && v.is_finite());
        }
        let expect = total_loss(pair.l_reg, pair.l_auto, pair.l_cons, pair.l_map, pair.l_dis, &w);
        assert!((pair.l_tot - expect).abs() < 1e-12);
    }
    // total = l_reg + weighted mean over the two pairs
    let mean_extra: f64 = step.pairs.iter().map(|q| q.l_tot - q.l_reg).sum::<f64>() / 2.0;
    assert!((value(&tape, step.total) - (step.l_reg + mean_extra)).abs() < 1e-12);
}

#[test]
fn zero_delta_ignores_perturbation_seed() {
    let model = small_model(2, 5);
    let (b, y) = batch();
    let w = LossWeights { delta: 0.0, ..LossWeights::default() };
    let run = |seed| {
        let input = StepInput { batch: &b, targets: &y, perturbation_seed: seed };
        let tape = Tape::new();
        let p = Bound::new(&tape, &model.params).unwrap();
        let s = step_loss(&model, &p, 0, &[1], &input, &w).unwrap();
        let v = value(&tape, s.total);
        v
    };
    assert_eq!(run(1).to_bits(), run(999).to_bits());
    let w = LossWeights::default();
    let run_dis = |seed| {
        let input = StepInput { batch: &b, targets: &y, perturbation_seed: seed };
        let tape = Tape::new();
        let p = Bound::new(&tape, &model.params).unwrap();
        let s = step_loss(&model, &p, 0, &[1], &input, &w).unwrap();
        s.pairs[0].l_dis
    };
    assert_ne!(run_dis(1), run_dis(999));
}

#[test]
fn zero_weights_touch_only_the_regression_unit() {
    let model = small_model(3, 2);
    let (b, y) = batch();
    let input = StepInput { batch: &b, targets: &y, perturbation_seed: 0 };
    let tape = Tape::new();
    let p = Bound::new(&tape, &model.params).unwrap();
    let step = step_loss(&model, &p, 1, &[0, 2], &input, &LossWeights::regression_only()).unwrap();
    assert!(step.pairs.is_empty());
    let grads = tape.backward(step.total).unwrap();
    let unit = model.regression_unit_param_ids(1);
    for i in 0..model.params.len() {
        let id = model.params.find(&model.params.names()[i]).unwrap();
        assert_eq!(grads.touched(p.var(id)), unit.contains(&id), "{}", model.params.name(id));
    }
}

#[test]
fn non_finite_values_name_the_term() {
    let (b, y) = batch();
    let input = StepInput { batch: &b, targets: &y, perturbation_seed: 0 };

    let mut model = small_model(2, 2);
    for id in model.head(0).mlp.param_ids().collect::<Vec<_>>() {
        model.params.get_mut(id).data_mut().fill(1e308);
    }
    let tape = Tape::new();
    let p = Bound::new(&tape, &model.params).unwrap();
    let err = step_loss(&model, &p, 0, &[1], &input, &LossWeights::default()).err().unwrap();
    assert_eq!(err.term(), Some("l_reg"));

    let mut model = small_model(2, 2);
    for id in transfer_ids(&model, 0).into_iter().skip(4) {
        model.params.get_mut(id).data_mut().fill(1e308);
    }
    let w = LossWeights { alpha: 0.0, ..LossWeights::default() };
    let tape = Tape::new();
    let p = Bound::new(&tape, &model.params).unwrap();
    let err = step_loss(&model, &p, 0, &[1], &input, &w).err().unwrap();
    assert_eq!(err.term(), Some("l_map"));
}

