mod common;

use seqset::autodiff::Graph;
use seqset::training::{check_instance_gradients, instance_forward, TrainConfig};

// Entries whose true gradient is zero (attention key biases) come back as
// roundoff near 1e-10, so small entries are judged on absolute error.
const FLOOR: f64 = 1e-5;

fn cfg(lambda: f64) -> TrainConfig {
    TrainConfig {
        lambda,
        ..TrainConfig::default()
    }
}

#[test]
fn total_loss_matches_finite_differences() {
    let f = common::fixture(3, 2, 8, 11);
    for inst in &f.instances {
        let (report, assignment) = check_instance_gradients(&f.model, inst, &cfg(0.5), 1e-5, FLOOR).unwrap();
        assert!(assignment.is_some());
        assert_eq!(report.checked, f.model.store.num_scalars());
        assert!(report.max_rel_error < 1e-4, "{:?}", report.worst);
    }
}

#[test]
fn header_only_loss_matches_finite_differences() {
    let f = common::fixture(1, 2, 8, 12);
    let (report, assignment) = check_instance_gradients(&f.model, &f.instances[0], &cfg(1.0), 1e-5, FLOOR).unwrap();
    assert!(assignment.is_none());
    assert!(report.max_rel_error < 1e-4, "{:?}", report.worst);
}

fn grads(model: &seqset::model::Seq2SeqSet, inst: &seqset::training::BatchInstance, c: &TrainConfig, perm: Option<&[usize]>) -> seqset::autodiff::ParamStore {
    let mut g = Graph::new();
    let (vars, _) = instance_forward(model, &mut g, inst, c, perm).unwrap();
    g.backward(vars.total).unwrap();
    let mut store = model.store.clone();
    store.zero_grads();
    g.accumulate_param_grads(&mut store).unwrap();
    store
}

#[test]
fn header_only_training_leaves_row_slots_untouched() {
    let f = common::fixture(2, 3, 8, 13);
    let store = grads(&f.model, &f.instances[0], &cfg(1.0), None);
    let row = store.grad(f.model.params.row);
    let d = f.model.config.d_model;
    assert!(row[..d].iter().any(|&v| v != 0.0));
    assert!(row[d..].iter().all(|&v| v == 0.0));
}

#[test]
fn computed_assignment_behaves_like_a_constant() {
    let f = common::fixture(2, 3, 8, 14);
    let c = cfg(0.5);
    let mut g = Graph::new();
    let (_, a) = instance_forward(&f.model, &mut g, &f.instances[1], &c, None).unwrap();
    let perm = a.unwrap().perm;
    let free = grads(&f.model, &f.instances[1], &c, None);
    let fixed = grads(&f.model, &f.instances[1], &c, Some(&perm));
    for id in free.ids() {
        assert_eq!(free.grad(id), fixed.grad(id), "{}", free.get(id).name);
    }
}
