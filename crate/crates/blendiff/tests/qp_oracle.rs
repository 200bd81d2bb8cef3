//! ADMM solver vs projected-gradient oracle on random instances.

use blendiff::coeffs::MotionSequence;
use blendiff::mesh::BlendshapeModel;
use blendiff::oracle::{dense_objective, projected_gradient_qp};
use blendiff::qp::{assemble_qp, solve_qp, QpConfig};
use blendiff::rng::Rng;
use blendiff::tensor::Tensor;

fn random_instance(rng: &mut Rng) -> (BlendshapeModel, MotionSequence) {
    let k = 1 + rng.below(5);
    let n = 1 + rng.below(60 / k).min(14);
    let m = k + 2; // vertices; 3M rows keep B comfortably full rank
    let dim = 3 * m;
    let deltas: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| rng.normal()).collect())
        .collect();
    let template: Vec<f64> = (0..dim).map(|_| rng.normal() * 0.1).collect();
    let names = (0..k).map(|i| format!("s{i}")).collect();
    let model = BlendshapeModel::new(template.clone(), deltas, names).unwrap();

    // targets near the feasible range plus noise
    let mut rows = Vec::with_capacity(n);
    let mut u_true: Vec<f64> = (0..k).map(|_| rng.uniform()).collect();
    for _ in 0..n {
        for u in u_true.iter_mut() {
            *u = (*u + rng.uniform_range(-0.15, 0.15)).clamp(0.0, 1.0);
        }
        let mut p = model.apply_coefficients(&u_true).unwrap();
        for v in p.iter_mut() {
            *v += 0.05 * rng.normal();
        }
        rows.push(p);
    }
    let motion = MotionSequence::new(Tensor::from_rows(&rows), 60.0).unwrap();
    (model, motion)
}

#[test]
fn admm_matches_projected_gradient_oracle() {
    let mut rng = Rng::new(2024);
    let cfg = QpConfig::default();
    for trial in 0..20 {
        let (model, motion) = random_instance(&mut rng);
        let inst = assemble_qp(&model, &motion, &cfg).unwrap();
        let (seq, diag) = solve_qp(&inst, &cfg).unwrap();
        assert!(diag.converged, "trial {trial} did not converge");

        let (p, q, _, _) = inst.dense();
        let oracle = projected_gradient_qp(&p, &q, inst.delta, inst.n, inst.k, 1_000_000);
        let oracle_obj = dense_objective(&p, &q, &oracle);

        assert!(
            (diag.objective - oracle_obj).abs() < 1e-4,
            "trial {trial}: objective {} vs oracle {}",
            diag.objective,
            oracle_obj
        );
        for (i, &ov) in oracle.iter().enumerate() {
            let sv = seq.values.data()[i];
            assert!(
                (sv - ov).abs() < 1e-3,
                "trial {trial} coefficient {i}: {sv} vs oracle {ov}"
            );
        }
    }
}
