#[allow(dead_code)]
mod load_dataset {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/load_dataset.rs"));
}

#[test]
fn load_dataset_example_runs() {
    load_dataset::run_example().expect("load_dataset example should run");
}

#[allow(dead_code)]
mod sbm_homophily {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/sbm_homophily.rs"));
}

#[test]
fn sbm_homophily_example_runs() {
    sbm_homophily::run_example().expect("sbm_homophily example should run");
}

#[allow(dead_code)]
mod prune_schedule {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/prune_schedule.rs"));
}

#[test]
fn prune_schedule_example_runs() {
    prune_schedule::run_example().expect("prune_schedule example should run");
}

#[allow(dead_code)]
mod prune_regrow {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/prune_regrow.rs"));
}

#[test]
fn prune_regrow_example_runs() {
    prune_regrow::run_example().expect("prune_regrow example should run");
}

#[allow(dead_code)]
mod gradient_check {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/gradient_check.rs"));
}

#[test]
fn gradient_check_example_runs() {
    gradient_check::run_example().expect("gradient_check example should run");
}

#[allow(dead_code)]
mod train_gcn {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/train_gcn.rs"));
}

#[test]
fn train_gcn_example_runs() {
    train_gcn::run_example().expect("train_gcn example should run");
}

#[allow(dead_code)]
mod train_sgc {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/train_sgc.rs"));
}

#[test]
fn train_sgc_example_runs() {
    train_sgc::run_example().expect("train_sgc example should run");
}

#[allow(dead_code)]
mod cost_model {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/cost_model.rs"));
}

#[test]
fn cost_model_example_runs() {
    cost_model::run_example().expect("cost_model example should run");
}

#[allow(dead_code)]
mod sparsity_sweep {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/sparsity_sweep.rs"));
}

#[test]
fn sparsity_sweep_example_runs() {
    sparsity_sweep::run_example().expect("sparsity_sweep example should run");
}

#[allow(dead_code)]
mod sparse_to_sparse {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/sparse_to_sparse.rs"));
}

#[test]
fn sparse_to_sparse_example_runs() {
    sparse_to_sparse::run_example().expect("sparse_to_sparse example should run");
}

#[allow(dead_code)]
mod checkpoint {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/checkpoint.rs"));
}

#[test]
fn checkpoint_example_runs() {
    checkpoint::run_example().expect("checkpoint example should run");
}
