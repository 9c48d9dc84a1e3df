use tagrec::eval::ndcg_vs_semantic;
use tagrec::pipeline::{run, ExperimentConfig};
#[test]
fn probe() {
    let t = std::time::Instant::now();
    let out = run(&ExperimentConfig::default()).unwrap();
    for r in &out.report.rows {
        println!("{:20} ndcg10 {:.4} sem {:.4} div {:.4} empty {}", r.algorithm.to_string(), r.ndcg_at(10), r.semantic_similarity.mean, r.diversity.mean, r.n_empty);
    }
    println!("{:?}", out.report.metadata.selection.as_ref().map(|s| s.selection));
    let tau = ndcg_vs_semantic(&out.report, 10).unwrap();
    println!("tau {:.3} p {:.4} n_test {} elapsed {:?}", tau.tau, tau.p_value, out.report.metadata.n_test_cases, t.elapsed());
}
