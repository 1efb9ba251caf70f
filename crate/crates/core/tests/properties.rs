use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Vector3};
use proptest::prelude::*;
use psideal_core::{
    build_h, cholesky_factor, default_nine_lights, gauss_newton_solve, generate_dataset, grid_coordinates,
    integrate_poisson, normals_from_gradient, normals_from_lights, rank3_factor, render_lambertian, residual,
    solve_gram, Corruption, DataMatrix, GradientField, GridSpec, NormalAlbedoField, PsError,
    RenderOptions, ScreeningMethod, SurfaceGrid, SurfaceKind, SyntheticScenario, TriangularParams,
};

/// Unit normal tilted at most `max_tilt` radians from `+z`.
fn tilted(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

fn normal_field(max_tilt: f64, len: usize) -> impl Strategy<Value = NormalAlbedoField> {
    prop::collection::vec((0.0..max_tilt, 0.0..std::f64::consts::TAU, 0.05..1.0f64), len).prop_map(|cols| {
        let normals = Matrix3xX::from_columns(&cols.iter().map(|&(t, p, _)| tilted(t, p)).collect::<Vec<_>>());
        let albedo = DVector::from_iterator(cols.len(), cols.iter().map(|c| c.2));
        NormalAlbedoField::new(normals, albedo).unwrap()
    })
}

fn random_matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(0.0..1.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn small_near_light() -> SyntheticScenario {
    let mut scn = SyntheticScenario::near_light(Some(2.0), 0.1);
    scn.grid = GridSpec::new(2.0, 39, 39).unwrap();
    scn.surface = SurfaceKind::TwoBumps { amplitude: 0.25, width: 0.25, separation: 0.9 };
    scn
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn render_then_solve_recovers_field(field in normal_field(0.6, 33)) {
        // normals within 0.6 rad of +z and lights within 0.8 rad: every cosine is positive
        let lights = default_nine_lights();
        let surface = SurfaceGrid::flat(GridSpec::new(1.0, 1, 9).unwrap());
        let data = render_lambertian(&field, &lights, &surface, RenderOptions::default()).unwrap();
        let back = normals_from_lights(&data, &lights).unwrap();
        for k in 0..field.p() {
            prop_assert!((back.normals().column(k) - field.normals().column(k)).norm() < 1e-10);
            prop_assert!((back.albedo()[k] - field.albedo()[k]).abs() < 1e-10 * field.albedo()[k]);
        }
    }

    #[test]
    fn render_scales_with_albedo(field in normal_field(1.2, 33), c in 0.1..3.0f64) {
        let lights = default_nine_lights();
        let surface = SurfaceGrid::flat(GridSpec::new(1.0, 1, 9).unwrap());
        let base = render_lambertian(&field, &lights, &surface, RenderOptions::default()).unwrap();
        let scaled_field = field.with_albedo(field.albedo() * c).unwrap();
        let scaled = render_lambertian(&scaled_field, &lights, &surface, RenderOptions::default()).unwrap();
        let diff = (scaled.matrix() - base.matrix() * c).amax();
        prop_assert!(diff <= 1e-12 * (1.0 + c));
    }

    #[test]
    fn gradient_normals_are_unit_and_upward(
        grads in prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 1..50)
    ) {
        let (ux, uy): (Vec<f64>, Vec<f64>) = grads.into_iter().unzip();
        let n = normals_from_gradient(&ux, &uy).unwrap();
        for col in n.column_iter() {
            prop_assert!((col.norm() - 1.0).abs() < 1e-12);
            prop_assert!(col[2] > 0.0);
        }
    }

    #[test]
    fn grid_is_point_symmetric(width in 0.1..50.0f64, r in 1usize..40, s in 1usize..40) {
        let spec = GridSpec::new(width, r, s).unwrap();
        let coords = grid_coordinates(&spec);
        let n = coords.len();
        prop_assert_eq!(n, (r + 2) * (s + 2));
        for k in 0..n {
            let (x, y) = coords[k];
            let (mx, my) = coords[n - 1 - k];
            prop_assert!((x + mx).abs() < 1e-12 * width);
            prop_assert!((y + my).abs() < 1e-12 * width);
        }
    }

    #[test]
    fn synthetic_entries_in_unit_range(seed in any::<u64>(), noise in 0.0..0.5f64, image in 1usize..=9) {
        let mut scn = small_near_light();
        scn.seed = seed;
        scn.corruptions = vec![Corruption { image, distance: Some(1.5), noise }];
        let a = generate_dataset(&scn).unwrap();
        prop_assert!(a.data.matrix().iter().all(|v| (0.0..=1.0).contains(v)));
        let b = generate_dataset(&scn).unwrap();
        prop_assert_eq!(a.data.matrix(), b.data.matrix());
    }

    #[test]
    fn gram_fit_is_symmetric_with_reported_residual(m in random_matrix(40, 8)) {
        let fac = rank3_factor(&DataMatrix::new(m).unwrap()).unwrap();
        let gram = solve_gram(&build_h(&fac.z)).unwrap();
        prop_assert_eq!(gram.matrix, gram.matrix.transpose());
        let defect: f64 = fac
            .z
            .column_iter()
            .map(|z| (z.transpose() * gram.matrix * z)[(0, 0)] - 1.0)
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt();
        prop_assert!((defect - gram.residual).abs() < 1e-9 * (1.0 + gram.residual));
    }

    #[test]
    fn eckart_young(m in random_matrix(30, 7)) {
        let fac = rank3_factor(&DataMatrix::new(m.clone()).unwrap()).unwrap();
        prop_assert_eq!(fac.w.ncols(), 30);
        prop_assert_eq!(fac.z.ncols(), 7);
        let rest = (&m - fac.approximation()).singular_values().max();
        prop_assert!((rest - fac.sigma(4)).abs() <= 1e-10 * fac.sigma(1));
        for w in fac.singular_values.as_slice().windows(2) {
            prop_assert!(w[0] >= w[1] && w[1] >= 0.0);
        }
    }

    #[test]
    fn gauss_newton_residual_never_increases(m in random_matrix(40, 9)) {
        let fac = rank3_factor(&DataMatrix::new(m).unwrap()).unwrap();
        let Ok(gn) = gauss_newton_solve(&fac.z, TriangularParams::identity()) else { return Ok(()) };
        for w in gn.residual_trace.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert!(gn.gammas.windows(2).all(|w| w[0] >= w[1]) && gn.gammas[5] >= 0.0);
        prop_assert!((0.0..=1.0).contains(&gn.eta));
        if gn.converged {
            let g = gn.gram();
            for z in fac.z.column_iter() {
                prop_assert!(((z.transpose() * g * z)[(0, 0)] - 1.0).abs() < 1e-8);
            }
            prop_assert!(g.symmetric_eigenvalues().min() >= -1e-12);
        }
    }

    #[test]
    fn gauss_newton_ignores_column_order(
        field in normal_field(0.5, 40),
        perm in Just((0..9).collect::<Vec<usize>>()).prop_shuffle()
    ) {
        let lights = default_nine_lights();
        let surface = SurfaceGrid::flat(GridSpec::new(1.0, 2, 8).unwrap());
        let data = render_lambertian(&field, &lights, &surface, RenderOptions::default()).unwrap();
        let z = rank3_factor(&data).unwrap().z;
        let zp = z.select_columns(&perm);
        let f = residual(&TriangularParams([1.1, 0.2, -0.1, 0.9, 0.3, 1.2]), &z);
        let fp = residual(&TriangularParams([1.1, 0.2, -0.1, 0.9, 0.3, 1.2]), &zp);
        for (i, &t) in perm.iter().enumerate() {
            prop_assert!((fp[i] - f[t]).abs() < 1e-14);
        }
        let g = gauss_newton_solve(&z, TriangularParams::identity()).unwrap();
        let gp = gauss_newton_solve(&zp, TriangularParams::identity()).unwrap();
        prop_assert!(g.converged && gp.converged);
        prop_assert!((g.gram() - gp.gram()).norm() < 1e-7 * g.gram().norm());
    }

    #[test]
    fn poisson_is_linear(
        a in prop::collection::vec(-2.0..2.0f64, 4 * 99),
        b in prop::collection::vec(-2.0..2.0f64, 4 * 99),
        alpha in -3.0..3.0f64
    ) {
        let spec = GridSpec::new(3.0, 7, 7).unwrap();
        let n = spec.node_count();
        let field = |v: &[f64]| GradientField::new(v[..n].to_vec(), v[n..2 * n].to_vec()).unwrap();
        let (ga, gb) = (field(&a), field(&b));
        let mix = GradientField::new(
            ga.ux.iter().zip(&gb.ux).map(|(x, y)| alpha * x + y).collect(),
            ga.uy.iter().zip(&gb.uy).map(|(x, y)| alpha * x + y).collect(),
        )
        .unwrap();
        let ua = integrate_poisson(&ga, &spec).unwrap();
        let ub = integrate_poisson(&gb, &spec).unwrap();
        let um = integrate_poisson(&mix, &spec).unwrap();
        prop_assert!((um.heights() - (ua.heights() * alpha + ub.heights())).amax() < 1e-10);
        prop_assert!(um.mean().abs() < 1e-12);
    }

    #[test]
    fn planes_integrate_exactly(sx in -3.0..3.0f64, sy in -3.0..3.0f64, r in 2usize..30, s in 2usize..30) {
        let spec = GridSpec::new(2.0, r, s).unwrap();
        let plane = SurfaceKind::Plane { slope_x: sx, slope_y: sy };
        let u = integrate_poisson(&plane.gradient_field(&spec).unwrap(), &spec).unwrap();
        let truth = plane.sample(&spec).unwrap();
        let centred = truth.heights().add_scalar(-truth.mean());
        prop_assert!((u.heights() - centred).amax() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn screening_is_relabeling_equivariant(perm in Just((0..9).collect::<Vec<usize>>()).prop_shuffle()) {
        // on exactly ideal images every candidate ties up to rounding, so
        // give each image its own noise to keep the scores apart
        let mut scn = small_near_light();
        scn.corruptions = (1..=9)
            .map(|image| match image {
                3 => Corruption { image, distance: Some(2.0), noise: 0.1 },
                _ => Corruption { image, distance: None, noise: 0.01 + 0.004 * image as f64 },
            })
            .collect();
        let ds = generate_dataset(&scn).unwrap();
        let permuted = ds.data.select_columns(&perm).unwrap();
        // image t of the permuted stack is original image perm[t - 1] + 1
        let to_original = |t: usize| perm[t - 1] + 1;
        for method in ScreeningMethod::ALL {
            let base = method.run(&ds.data).unwrap();
            let moved = method.run(&permuted).unwrap();
            let trace: Vec<usize> = moved.trace.iter().map(|s| to_original(s.image)).collect();
            prop_assert_eq!(trace, base.trace.iter().map(|s| s.image).collect::<Vec<_>>(), "{}", method);
            let mut kept: Vec<usize> = moved.kept.iter().map(|&t| to_original(t)).collect();
            kept.sort_unstable();
            prop_assert_eq!(kept, base.kept.clone());
        }
    }
}

#[test]
fn cholesky_threshold_sweep() {
    for (eps, ok) in [(-1e-3, false), (0.0, false), (1e-3, true)] {
        let g = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, eps));
        let res = cholesky_factor(&g);
        assert_eq!(res.is_ok(), ok, "eps = {eps}");
        match res {
            Ok(r) => assert!((r.transpose() * r - g).norm() < 1e-14),
            Err(PsError::Breakdown { lambda3 }) => assert_eq!(lambda3, eps),
            Err(e) => panic!("unexpected {e}"),
        }
    }
}

#[test]
fn screening_traces_follow_stop_rule() {
    let ds = generate_dataset(&small_near_light()).unwrap();
    for method in ScreeningMethod::ALL {
        let report = method.run(&ds.data).unwrap();
        let scores: Vec<f64> = report.trace.iter().map(|s| s.score).collect();
        let (last, before) = scores.split_last().unwrap();
        assert!(before.windows(2).all(|w| w[1] >= w[0]), "{method}: {scores:?}");
        let stopped_on_decrease = before.last().is_some_and(|prev| last < prev);
        assert!(stopped_on_decrease || report.images - report.trace.len() == 6, "{method}: {scores:?}");
        assert!(report.trace.last().unwrap().restored);
        assert_eq!(report.kept.len() + report.excluded.len(), report.images);
        assert!(report.kept.len() >= 6);
        let mut all: Vec<usize> = report.trace.iter().map(|s| s.image).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), report.trace.len());
    }
}
