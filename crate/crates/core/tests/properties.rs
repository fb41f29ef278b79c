use dmdfm::dfm::{self, PanelData, StateSpaceModel};
use dmdfm::dmd::{self, Shrinkage};
use dmdfm::estimation::{nelder_mead, NelderMeadConfig, Target};
use dmdfm::io;
use dmdfm::rank::{self, RankConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-5.0..5.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn panel_strategy() -> impl Strategy<Value = DMatrix<f64>> {
    (2usize..7, 6usize..20).prop_flat_map(|(m, t)| matrix(m, t))
}

/// Stable N x N transition: a random matrix rescaled to spectral norm < 1.
fn stable_model() -> impl Strategy<Value = StateSpaceModel> {
    (1usize..5, 0.05..0.95f64, 0.05..2.0f64).prop_flat_map(|(n, radius, sigma_v)| {
        (matrix(n, n), matrix(n, n), (n..40usize).prop_flat_map(move |m| matrix(m, n))).prop_map(
            move |(a, c, g)| {
                let norm = a.norm().max(1e-12);
                StateSpaceModel::new(a * (radius / norm), c, g, sigma_v).unwrap()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn truncation_error_is_discarded_spectrum(y in panel_strategy(), n in 1usize..4) {
        let n = n.min(y.nrows()).min(y.ncols());
        let svd = dmd::truncated_svd(&y, n).unwrap();
        let approx = &svd.u * DMatrix::from_diagonal(&svd.s) * svd.v.transpose();
        let err = (&y - approx).norm_squared();
        let full = y.clone().svd(false, false).singular_values;
        let mut sorted: Vec<f64> = full.iter().copied().collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let tail: f64 = sorted[n..].iter().map(|s| s * s).sum();
        prop_assert!((err - tail).abs() <= 1e-9 * y.norm_squared().max(1.0));
    }

    #[test]
    fn dmd_residuals_are_orthogonal_to_retained_directions(y in panel_strategy(), n in 1usize..4) {
        let pair = dmd::build_snapshots(&PanelData::new(y).unwrap()).unwrap();
        let n = n.min(pair.n_obs()).min(pair.j());
        let svd = dmd::truncated_svd(pair.y(), n).unwrap();
        let fit = dmd::dmd_fit(&pair, n, Shrinkage::default()).unwrap();
        let resid = pair.yp() - &fit.b * pair.y();
        let cross = resid * pair.y().transpose() * &svd.u;
        let scale = pair.yp().norm() * pair.y().norm();
        prop_assert!(cross.amax() <= 1e-9 * scale.max(1.0));
    }

    #[test]
    fn r2_is_nondecreasing_in_rank(y in (4usize..8, 10usize..25).prop_flat_map(|(m, t)| matrix(m, t))) {
        let panel = PanelData::new(y).unwrap();
        let n_max = panel.n_obs().min(4);
        let report = rank::select_rank(&panel, n_max, &RankConfig::default()).unwrap();
        let r2: Vec<f64> = report.r2_values.values().copied().collect();
        for w in r2.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10, "{:?}", r2);
        }
    }

    #[test]
    fn gd_threshold_scales_with_sigma(m in 2usize..200, t in 2usize..200, sigma in 0.01..10.0f64) {
        let lo = rank::gavish_donoho(m, t, sigma).unwrap();
        let hi = rank::gavish_donoho(m, t, 2.0 * sigma).unwrap();
        prop_assert!(hi.tau > lo.tau);
        prop_assert!((hi.tau - 2.0 * lo.tau).abs() <= 1e-12 * hi.tau);
    }

    #[test]
    fn riccati_fixed_point_holds(model in stable_model()) {
        let innov = dfm::solve_riccati(&model, dfm::DEFAULT_TOL, dfm::DEFAULT_MAX_ITER).unwrap();
        prop_assert!(innov.riccati_residual < 1e-10);
        let p = dfm::stationary_state_cov(&model, dfm::DEFAULT_TOL, dfm::DEFAULT_MAX_ITER).unwrap();
        // Filtering can only reduce uncertainty about the state.
        let gap = (&p - &innov.sigma_inf).symmetric_eigenvalues();
        prop_assert!(gap.min() >= -1e-8 * p.amax().max(1.0));
    }

    #[test]
    fn csv_round_trip(y in panel_strategy()) {
        let text = io::matrix_to_csv(&y);
        prop_assert_eq!(io::parse_matrix_csv(&text, "p.csv".as_ref()).unwrap(), y);
    }

    #[test]
    fn targets_round_trip(which in 0usize..5, i in 0usize..9, j in 0usize..9) {
        let text = match which {
            0 => format!("A[{i},{j}]"),
            1 => "G.scale".to_string(),
            2 => "sigma_v".to_string(),
            3 => format!("shock.s{i}.rho"),
            _ => format!("input.p{j}.scale"),
        };
        let target: Target = text.parse().unwrap();
        prop_assert_eq!(target.to_string().parse::<Target>().unwrap(), target);
    }

    #[test]
    fn nelder_mead_stays_in_box(cx in -3.0..3.0f64, cy in -3.0..3.0f64) {
        let f = |x: &[f64]| -((x[0] - cx).powi(2) + (x[1] - cy).powi(2));
        let bounds = [(-1.0, 1.0), (0.0, 2.0)];
        let res = nelder_mead(f, &[0.0, 1.0], &bounds, &NelderMeadConfig::default()).unwrap();
        for (v, (lo, hi)) in res.x.iter().zip(bounds) {
            prop_assert!(*v >= lo && *v <= hi);
        }
        prop_assert!(res.f >= res.initial_f);
        prop_assert!((res.x[0] - cx.clamp(-1.0, 1.0)).abs() < 2e-3);
    }
}
