use flim::analysis::{union_bound_bep, PowerReport};
use flim::channel::{channel_matrix, ChannelMatrix};
use flim::codebook::{
    assign_labels, build_universe, codebook_size, pam_alphabet, select_subset_indices, Codebook, DistanceSpace,
    LabelStrategy, Scheme, SubsetStrategy,
};
use flim::detect::{mmse_filter_with, MlDetector, RsVariant};
use flim::geometry::{build_scene, ReceiverKind, SceneConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn scheme_strategy() -> impl Strategy<Value = (Scheme, usize, usize)> {
    prop_oneof![
        (1usize..=4, 1usize..=3).prop_map(|(n, m)| (Scheme::Flim, n, m)),
        (1usize..=4, 1usize..=4).prop_map(|(n, m)| (Scheme::Smx, n, m)),
        (2usize..=4, 1usize..=4).prop_map(|(n, m)| (Scheme::Sm, n, m)),
        (2usize..=4, 1usize..=3).prop_map(|(n, m)| (Scheme::Gsm2 { n_active: n / 2 }, n, m)),
    ]
}

/// Subset plus labels built the way the CLI would for a transmit-space design.
fn codebook_for(scheme: Scheme, n_t: usize, m: usize) -> Option<Codebook> {
    let a = pam_alphabet(m, 500.0, 800.0).unwrap();
    let u = build_universe(scheme, n_t, &a).unwrap();
    let c = codebook_size(u.len());
    if c < 2 {
        return None;
    }
    let idx = select_subset_indices(&u, c, &SubsetStrategy::MaxMinDistance(DistanceSpace::Transmit)).unwrap();
    let vectors: Vec<Vec<f64>> = idx.iter().map(|&i| u[i].clone()).collect();
    let labels = assign_labels(&vectors, &a, &LabelStrategy::MinDistMaxHamming(DistanceSpace::Transmit)).unwrap();
    Some(Codebook::new(scheme, a, u.len(), vectors, labels).unwrap())
}

fn channel_from(n_r: usize, n_t: usize, raw: &[f64]) -> ChannelMatrix {
    ChannelMatrix::from_rows(n_r, n_t, &raw[..n_r * n_t]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ml_matches_exhaustive_search(
        (scheme, n_t, m) in scheme_strategy(),
        n_r in 1usize..=4,
        raw in prop::collection::vec(0.0f64..1.0, 16),
        y in prop::collection::vec(-500.0f64..1500.0, 4),
    ) {
        let Some(cb) = codebook_for(scheme, n_t, m) else { return Ok(()); };
        let h = channel_from(n_r, n_t, &raw);
        let y = &y[..n_r];
        let oracle = (0..cb.len())
            .map(|t| {
                let image = h.matrix() * nalgebra::DVector::from_column_slice(cb.vector(t));
                let d: f64 = image.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
                (d, t)
            })
            .fold((f64::INFINITY, 0), |best, cur| if cur.0 < best.0 { cur } else { best })
            .1;
        prop_assert_eq!(MlDetector::new(&h, &cb).unwrap().detect_index(y), oracle);
    }

    #[test]
    fn labels_are_bijections((scheme, n_t, m) in scheme_strategy()) {
        let Some(cb) = codebook_for(scheme, n_t, m) else { return Ok(()); };
        let mut seen = vec![false; cb.len()];
        for &l in cb.labels() {
            prop_assert!(!seen[l as usize]);
            seen[l as usize] = true;
        }
        prop_assert!(cb.len().is_power_of_two());
        prop_assert!(cb.len() <= cb.universe_size() && cb.universe_size() < 2 * cb.len());
    }

    #[test]
    fn codebook_json_round_trip((scheme, n_t, m) in scheme_strategy()) {
        let Some(cb) = codebook_for(scheme, n_t, m) else { return Ok(()); };
        let back = Codebook::from_json(&cb.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.content_hash(), cb.content_hash());
        prop_assert_eq!(&back, &cb);
    }

    #[test]
    fn mmse_normal_equations_hold(
        raw in prop::collection::vec(0.01f64..1.0, 16),
        n_r in 1usize..=4,
        log_noise in -3.0f64..6.0,
        centered in any::<bool>(),
    ) {
        let cb = codebook_for(Scheme::Flim, 3, 1).unwrap();
        let h = channel_from(n_r, 3, &raw);
        let variant = if centered { RsVariant::Centered } else { RsVariant::Raw };
        let f = mmse_filter_with(&h, &cb, 10f64.powf(log_noise), variant).unwrap();
        let hm = h.matrix();
        let lhs = &f.f * (hm * &f.r_s * hm.transpose() + DMatrix::identity(n_r, n_r) * f.sigma_w2);
        let rhs = &f.r_s * hm.transpose();
        prop_assert!((lhs - &rhs).norm() <= 1e-9 * rhs.norm());
    }

    #[test]
    fn gains_are_bounded_inside_the_cell(r_frac in 0.0f64..=1.0, angle in 0.0f64..std::f64::consts::TAU, square in any::<bool>()) {
        let mut cfg = SceneConfig::default();
        if square {
            cfg.receiver_kind = ReceiverKind::Square;
        }
        let r = r_frac * cfg.cell_radius_cm().unwrap();
        let h = channel_matrix(&build_scene(&cfg.with_ue(r, angle)).unwrap()).unwrap();
        for &g in h.to_row_major().iter() {
            prop_assert!(g.is_finite() && (0.0..=1.0).contains(&g));
        }
        prop_assert!(h.condition_number_db() >= 0.0);
    }

    #[test]
    fn union_bound_decreases_with_snr(raw in prop::collection::vec(0.05f64..1.0, 4), s1 in 1.0f64..100.0, ratio in 1.0f64..10.0) {
        let cb = codebook_for(Scheme::Smx, 2, 2).unwrap();
        let h = channel_from(2, 2, &raw);
        let loud = union_bound_bep(&h, &cb, s1 * ratio).unwrap();
        let quiet = union_bound_bep(&h, &cb, s1).unwrap();
        prop_assert!(quiet <= loud);
    }
}

#[test]
fn path_loss_is_eighty_to_ninety_db_and_grows_off_centre() {
    let cb = codebook_for(Scheme::Flim, 4, 1).unwrap();
    let loss = |r: f64| {
        let h = channel_matrix(&build_scene(&SceneConfig::default().with_ue(r, 0.5)).unwrap()).unwrap();
        PowerReport::new(&h, &cb, 1.0).unwrap().path_loss_db()
    };
    let centre = loss(0.0);
    assert!((80.0..90.0).contains(&centre), "{centre}");
    assert!(loss(100.0) > centre);
}
