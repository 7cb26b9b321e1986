use discrete_langevin::dlp::{DlpConfig, Preconditioner};
use discrete_langevin::oracle::{
    bundled_log_quadratic_models, bundled_small_models, detailed_balance_defect, dula_reversibility_defect,
    exact_kernel, exact_target, stationary_distribution, systematic_gibbs_kernel, tv_distance,
};
use discrete_langevin::samplers::{CoordOrder, SamplerKind};
use discrete_langevin::EnergyModel;

fn exact_kinds(model: &dyn EnergyModel) -> Vec<SamplerKind> {
    let mut kinds = vec![
        SamplerKind::Dmala(DlpConfig::new(0.4)),
        SamplerKind::Dmala(DlpConfig::new(2.0)),
        SamplerKind::Gibbs1(CoordOrder::Random),
        SamplerKind::Lb1 { alpha: 1.0 },
        SamplerKind::Lb1 { alpha: f64::INFINITY },
        SamplerKind::GradFlip1,
    ];
    if model.as_rbm().is_some() {
        kinds.push(SamplerKind::RbmBlockGibbs);
    }
    kinds
}

#[test]
fn exact_samplers_leave_target_invariant() {
    for (name, model) in bundled_small_models().unwrap() {
        let pi = exact_target(model.as_ref()).unwrap();
        for kind in exact_kinds(model.as_ref()) {
            let k = exact_kernel(model.as_ref(), &kind).unwrap();
            let moved = k.apply_left(pi.probs());
            let tv = tv_distance(&moved, pi.probs()).unwrap();
            assert!(tv < 1e-12, "{name} {}: tv {tv:e}", kind.name());
        }
    }
}

#[test]
fn mh_samplers_satisfy_detailed_balance() {
    for (name, model) in bundled_small_models().unwrap() {
        let pi = exact_target(model.as_ref()).unwrap();
        for kind in exact_kinds(model.as_ref()) {
            if matches!(kind, SamplerKind::RbmBlockGibbs) {
                continue;
            }
            let k = exact_kernel(model.as_ref(), &kind).unwrap();
            let defect = detailed_balance_defect(&k, pi.probs());
            assert!(defect < 1e-9, "{name} {}: defect {defect:e}", kind.name());
        }
    }
}

#[test]
fn stationary_solution_matches_target() {
    for (name, model) in bundled_small_models().unwrap() {
        if name == "preconditioner_demo" {
            continue;
        }
        let pi = exact_target(model.as_ref()).unwrap();
        let k = exact_kernel(model.as_ref(), &SamplerKind::Dmala(DlpConfig::new(0.5))).unwrap();
        let st = stationary_distribution(&k).unwrap();
        assert!(tv_distance(&st, pi.probs()).unwrap() < 1e-9, "{name}");
    }
}

#[test]
fn systematic_sweep_preserves_target() {
    for (name, model) in bundled_small_models().unwrap() {
        let pi = exact_target(model.as_ref()).unwrap();
        let k = systematic_gibbs_kernel(model.as_ref()).unwrap();
        let tv = tv_distance(&k.apply_left(pi.probs()), pi.probs()).unwrap();
        assert!(tv < 1e-12, "{name}: {tv:e}");
    }
}

#[test]
fn dula_reversible_on_log_quadratic_models() {
    for (name, model) in bundled_log_quadratic_models().unwrap() {
        for alpha in [0.1, 0.5, 2.0] {
            let defect = dula_reversibility_defect(&model, &DlpConfig::new(alpha)).unwrap();
            assert!(defect < 1e-10, "{name} alpha {alpha}: {defect:e}");
        }
    }
}

#[test]
fn preconditioned_dmala_is_exact() {
    for (name, model) in bundled_log_quadratic_models().unwrap() {
        let d = model.domain().embed_dim();
        let g: Vec<f64> = (0..d).map(|i| 0.5 + i as f64 * 0.3).collect();
        let pi = exact_target(&model).unwrap();
        for p in [Preconditioner::Coordinate(g.clone()), Preconditioner::Stepsize(g.clone())] {
            if model.domain().is_one_hot() {
                continue;
            }
            let cfg = DlpConfig::new(0.7).with_preconditioner(p);
            let k = exact_kernel(&model, &SamplerKind::Dmala(cfg)).unwrap();
            let tv = tv_distance(&k.apply_left(pi.probs()), pi.probs()).unwrap();
            assert!(tv < 1e-12, "{name}: {tv:e}");
        }
    }
}

#[test]
fn fused_energy_and_gradient_agree() {
    for (name, model) in bundled_small_models().unwrap() {
        let domain = model.domain().clone();
        for s in discrete_langevin::enumerate_states(&domain).unwrap() {
            let (u, g) = model.energy_grad(&s);
            assert!((u - model.energy(&s)).abs() <= 1e-12 * u.abs().max(1.0), "{name}");
            for (a, b) in g.iter().zip(model.grad(&s)) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{name}");
            }
        }
    }
}
