use hypercardio::fem::{assemble_mass, assemble_mass_subset, assemble_stiffness, assemble_stiffness_subset, lump_mass};
use hypercardio::ionic::{AlievPanfilovParams, CubicParams};
use hypercardio::{
    heaviside, line_mesh, mckean_speed, rect_tri_mesh, uniform_fiber_frame, BidomainConfig, BidomainSolver, Diagonal,
    DiffusionSpec, FiberFrame, FrontSolution, IntegratorOrder, IonicModelInstance, ModelKind, MonodomainConfig,
    MonodomainSolver, Operators, Region, SolverState, StimulusProtocol, TimeStepper,
};
use proptest::prelude::*;

fn diagonal() -> impl Strategy<Value = Diagonal> {
    prop_oneof![Just(Diagonal::Right), Just(Diagonal::Left), Just(Diagonal::Alternating)]
}

fn passive() -> IonicModelInstance<f64> {
    IonicModelInstance::new(ModelKind::Cubic(CubicParams { k: 0.0, alpha: 0.5 }))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rect_mesh_tiles_the_rectangle(lx in 0.1f64..5.0, ly in 0.1f64..5.0, nx in 1usize..12, ny in 1usize..12, d in diagonal()) {
        let mesh = rect_tri_mesh(lx, ly, nx, ny, d).unwrap();
        prop_assert_eq!(mesh.n_nodes(), (nx + 1) * (ny + 1));
        prop_assert_eq!(mesh.n_elements(), 2 * nx * ny);
        for e in 0..mesh.n_elements() {
            prop_assert!(mesh.signed_measure(e) > 0.0);
        }
        prop_assert!((mesh.total_measure() - lx * ly).abs() <= 1e-12 * lx * ly);
        let again = rect_tri_mesh(lx, ly, nx, ny, d).unwrap();
        prop_assert_eq!(mesh.nodes(), again.nodes());
        prop_assert!(mesh.elements().eq(again.elements()));
    }

    #[test]
    fn fiber_frames_are_orthonormal(angle in -10.0f64..10.0) {
        prop_assert!(FiberFrame::from_angle(angle).is_orthonormal(1e-12));
    }

    #[test]
    fn stiffness_is_symmetric_psd_with_zero_row_sums(
        nx in 1usize..8, ny in 1usize..8, d in diagonal(), angle in 0.0f64..3.2,
        sf in 0.01f64..3.0, ss in 0.01f64..3.0, seed in proptest::collection::vec(-1.0f64..1.0, 81),
    ) {
        let mesh = rect_tri_mesh(1.3, 0.7, nx, ny, d).unwrap();
        let fibers = uniform_fiber_frame(&mesh, angle);
        let spec = DiffusionSpec::transverse(sf, ss, 1.0).unwrap();
        let k = assemble_stiffness(&mesh, &fibers, &spec).unwrap();
        prop_assert!(k.is_symmetric(1e-12));
        let scale = sf.max(ss);
        for r in k.row_sums() {
            prop_assert!(r.abs() < 1e-12 * scale * 10.0);
        }
        let x = &seed[..mesh.n_nodes()];
        prop_assert!(k.quadratic_form(x) >= -1e-12 * scale);
        let ml = lump_mass(&assemble_mass(&mesh).unwrap());
        prop_assert!(ml.iter().all(|&m| m > 0.0));
        prop_assert!((ml.iter().sum::<f64>() - 1.3 * 0.7).abs() < 1e-12);
    }

    #[test]
    fn assembly_is_additive_over_element_subsets(nx in 1usize..7, ny in 1usize..7, split in 0usize..100) {
        let mesh = rect_tri_mesh(1.0, 1.0, nx, ny, Diagonal::Alternating).unwrap();
        let fibers = uniform_fiber_frame(&mesh, 0.4);
        let spec = DiffusionSpec::transverse(1.0, 0.3, 1.0).unwrap();
        let ne = mesh.n_elements();
        let cut = split % (ne + 1);
        let (a, b): (Vec<usize>, Vec<usize>) = ((0..cut).collect(), (cut..ne).collect());
        let whole = assemble_stiffness(&mesh, &fibers, &spec).unwrap();
        let sum = assemble_stiffness_subset(&mesh, &fibers, &spec, &a).unwrap()
            .linear_combination(1.0, &assemble_stiffness_subset(&mesh, &fibers, &spec, &b).unwrap(), 1.0)
            .unwrap();
        for (x, y) in whole.values().iter().zip(sum.values()) {
            prop_assert!(f64::abs(x - y) < 1e-12);
        }
        let mass = assemble_mass(&mesh).unwrap();
        let msum = assemble_mass_subset(&mesh, &a).unwrap()
            .linear_combination(1.0, &assemble_mass_subset(&mesh, &b).unwrap(), 1.0)
            .unwrap();
        for (x, y) in mass.values().iter().zip(msum.values()) {
            prop_assert!(f64::abs(x - y) < 1e-14);
        }
    }

    #[test]
    fn heaviside_is_a_monotone_ramp(x in -2.0f64..2.0, dx in 0.0f64..1.0, eps in 0.0f64..0.5) {
        let (a, b) = (heaviside(x, eps), heaviside(x + dx, eps));
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b >= a);
    }

    #[test]
    fn di_ion_dt_matches_directional_difference(
        which in 0usize..3, v in -0.2f64..1.2, q in -2.0f64..2.0, g0 in 0.0f64..1.0, g1 in 0.0f64..1.0,
    ) {
        let model = match which {
            0 => IonicModelInstance::cubic(0.2).unwrap(),
            1 => IonicModelInstance::aliev_panfilov(AlievPanfilovParams::default()).unwrap(),
            _ => IonicModelInstance::fenton_karma(3).unwrap().with_regularization(0.05).unwrap(),
        };
        let w: Vec<f64> = [g0, g1][..model.n_states()].to_vec();
        let mut g = vec![0.0; w.len()];
        model.rates(v, &w, &mut g);
        let d = 1e-6;
        let at = |s: f64| {
            let ws: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi + s * gi).collect();
            model.i_ion(v + s * q, &ws)
        };
        let fd = (at(d) - at(-d)) / (2.0 * d);
        let exact = model.di_ion_dt(v, q, &w);
        prop_assert!((fd - exact).abs() <= 1e-4 * (1.0 + exact.abs()), "fd {} exact {}", fd, exact);
    }

    #[test]
    fn fenton_karma_gates_stay_in_unit_interval(set in 3u8..7, tau in 0.0f64..1.0, amp in 0.2f64..2.0) {
        let mesh = line_mesh(1.0, 40).unwrap();
        let fibers = uniform_fiber_frame(&mesh, 0.0);
        let spec = DiffusionSpec::isotropic(0.001, 1.0).unwrap();
        let mut cfg = MonodomainConfig::new(tau, 1.0, 0.05);
        cfg.stimuli = vec![StimulusProtocol::pulse(Region::Interval { lo: 0.0, hi: 0.1 }, amp, 0.0, 2.0)];
        let model = IonicModelInstance::fenton_karma(set).unwrap();
        let mut s = MonodomainSolver::from_rest(&mesh, &fibers, &spec, model, cfg).unwrap();
        for _ in 0..200 {
            s.step().unwrap();
            prop_assert!(s.state().w.iter().all(|&g| (0.0..=1.0).contains(&g)));
        }
    }

    #[test]
    fn mckean_speed_is_subcharacteristic_and_decreasing(alpha in 0.01f64..0.49, da in 0.001f64..0.1, mu in 0.0f64..5.0) {
        let c = mckean_speed(alpha, mu).unwrap();
        prop_assert!(c > 0.0);
        if mu > 0.0 {
            prop_assert!(c < 1.0 / mu.sqrt());
        }
        if alpha + da < 0.5 {
            prop_assert!(mckean_speed(alpha + da, mu).unwrap() < c);
        }
    }

    #[test]
    fn mckean_front_profile_is_monotone(alpha in 0.01f64..0.49, mu in 0.0f64..5.0, z in -20.0f64..20.0, dz in 0.001f64..1.0) {
        let f = FrontSolution::new(alpha, mu).unwrap();
        let (u0, du0) = f.profile(z);
        let (u1, _) = f.profile(z + dz);
        prop_assert!((0.0..=1.0).contains(&u0));
        prop_assert!(du0 <= 0.0);
        prop_assert!(u1 <= u0 + 1e-15);
        if z.abs() > 1e-6 {
            prop_assert!(f.ode_residual(z).abs() < 1e-9);
        }
    }

    #[test]
    fn insulated_passive_cable_conserves_charge(
        tau in 0.0f64..2.0, second in any::<bool>(), center in 0.2f64..0.8, width in 0.02f64..0.3,
    ) {
        let mesh = line_mesh(1.0, 80).unwrap();
        let fibers = uniform_fiber_frame(&mesh, 0.0);
        let spec = DiffusionSpec::isotropic(0.01, 1.0).unwrap();
        let ops = Operators::assemble(&mesh, &fibers, &spec).unwrap();
        let ml = ops.lumped.clone();
        let model = passive();
        let mut state = SolverState::rest(mesh.n_nodes(), &model);
        for (i, v) in state.v.iter_mut().enumerate() {
            *v = (-((mesh.node(i)[0] - center) / width).powi(2)).exp();
        }
        let mut cfg = MonodomainConfig::new(tau, 1.0, 0.01);
        cfg.order = if second { IntegratorOrder::Second } else { IntegratorOrder::First };
        cfg.cg.rel_tol = 1e-13;
        let total = |v: &[f64]| v.iter().zip(&ml).map(|(a, m)| a * m).sum::<f64>();
        let mut s = MonodomainSolver::new(&mesh, ops.clone(), model, cfg, state).unwrap();
        let before = total(s.potential());
        for _ in 0..50 {
            s.step().unwrap();
        }
        prop_assert!((total(s.potential()) - before).abs() < 1e-10);
        prop_assert!(total(s.potential_rate()).abs() < 1e-9);
    }

    #[test]
    fn mirrored_initial_data_gives_mirrored_solution(tau in 0.0f64..1.0, second in any::<bool>(), center in 0.1f64..0.45) {
        let n = 60;
        let mesh = line_mesh(1.0, n).unwrap();
        let fibers = uniform_fiber_frame(&mesh, 0.0);
        let spec = DiffusionSpec::isotropic(0.005, 1.0).unwrap();
        let model = IonicModelInstance::cubic(0.2).unwrap();
        let build = |c: f64| {
            let ops = Operators::assemble(&mesh, &fibers, &spec).unwrap();
            let mut state = SolverState::rest(mesh.n_nodes(), &model);
            for (i, v) in state.v.iter_mut().enumerate() {
                *v = (-((mesh.node(i)[0] - c) / 0.05).powi(2)).exp();
            }
            let mut cfg = MonodomainConfig::new(tau, 1.0, 0.02);
            cfg.order = if second { IntegratorOrder::Second } else { IntegratorOrder::First };
            cfg.cg.rel_tol = 1e-14;
            MonodomainSolver::new(&mesh, ops, model, cfg, state).unwrap()
        };
        let mut a = build(center);
        let mut b = build(1.0 - center);
        for _ in 0..40 {
            a.step().unwrap();
            b.step().unwrap();
        }
        let (va, vb) = (a.potential(), b.potential());
        for i in 0..=n {
            prop_assert!((va[i] - vb[n - i]).abs() < 1e-9);
        }
    }

    #[test]
    fn extracellular_potential_has_zero_mean(
        tau_i in 0.0f64..0.5, tau_e in 0.0f64..0.5, x in 0.1f64..0.9, y in 0.1f64..0.9, amp in -3.0f64..3.0,
    ) {
        let mesh = rect_tri_mesh(1.0, 1.0, 8, 8, Diagonal::Alternating).unwrap();
        let fibers = uniform_fiber_frame(&mesh, 0.0);
        let di = DiffusionSpec::transverse(0.02, 0.005, 1.0).unwrap();
        let de = DiffusionSpec::transverse(0.02, 0.01, 1.0).unwrap();
        let mut cfg = BidomainConfig::new(tau_i, tau_e, 1.0, 0.02);
        cfg.cg.rel_tol = 1e-12;
        let region = Region::L1Ball { center: [x, y], radius: 0.2 };
        cfg.stimuli = vec![StimulusProtocol::pulse(region, 1.0, 0.0, 0.2)];
        cfg.extracellular_stimuli = vec![StimulusProtocol::pulse(region, amp, 0.1, 0.2)];
        let model = IonicModelInstance::fenton_karma(3).unwrap();
        let mut s = BidomainSolver::from_rest(&mesh, &fibers, &di, &de, model, cfg).unwrap();
        for _ in 0..20 {
            s.step().unwrap();
            let scale = 1.0 + s.state().ve.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            prop_assert!(s.state().ve_mean().abs() < 1e-9 * scale);
        }
    }
}

#[test]
fn single_precision_step_tracks_double() {
    let mesh32 = line_mesh(1.0f32, 50).unwrap();
    let mesh64 = line_mesh(1.0f64, 50).unwrap();
    let stim32 = StimulusProtocol::pulse(Region::Interval { lo: 0.0, hi: 0.1 }, 1.0f32, 0.0, 1.0);
    let stim64 = StimulusProtocol::pulse(Region::Interval { lo: 0.0, hi: 0.1 }, 1.0f64, 0.0, 1.0);
    let mut cfg32 = MonodomainConfig::new(0.2f32, 1.0, 0.05);
    cfg32.stimuli = vec![stim32];
    cfg32.cg.rel_tol = 1e-6;
    let mut cfg64 = MonodomainConfig::new(0.2f64, 1.0, 0.05);
    cfg64.stimuli = vec![stim64];
    cfg64.cg.rel_tol = 1e-12;
    let mut a = MonodomainSolver::from_rest(
        &mesh32,
        &uniform_fiber_frame(&mesh32, 0.0),
        &DiffusionSpec::isotropic(0.001f32, 1.0).unwrap(),
        IonicModelInstance::cubic(0.1f32).unwrap(),
        cfg32,
    )
    .unwrap();
    let mut b = MonodomainSolver::from_rest(
        &mesh64,
        &uniform_fiber_frame(&mesh64, 0.0),
        &DiffusionSpec::isotropic(0.001f64, 1.0).unwrap(),
        IonicModelInstance::cubic(0.1f64).unwrap(),
        cfg64,
    )
    .unwrap();
    for _ in 0..100 {
        a.step().unwrap();
        b.step().unwrap();
    }
    let diff = a.potential().iter().zip(b.potential()).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-3, "max |V32 - V64| = {diff}");
}
