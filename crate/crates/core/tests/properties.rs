use adaptlaw::dataset::{load_dataset, ColumnMap, Domain, Measurement};
use adaptlaw::fit::{objective, FitResult};
use adaptlaw::law::{eval_law, EvalPoint, Law, LawForm, LawParams, Param};
use adaptlaw::metrics::{calibration_ols, huber_log, mae_rel, mape_clip, rmse_log};
use adaptlaw::planner::{plan, PlanConstraints, PlanProblem, PlanResult, ToleranceMode};
use adaptlaw::synth::{paper_default_spec, source_default_spec};
use adaptlaw::Dataset;
use proptest::prelude::*;

fn form() -> impl Strategy<Value = LawForm> {
    prop::sample::select(LawForm::ALL.to_vec())
}

fn params() -> impl Strategy<Value = LawParams> {
    (
        (0.5f64..3.0, -3.0f64..3.0, 0.05f64..1.5, -3.0f64..3.0, 0.05f64..1.5, 0.05f64..1.5),
        (-3.0f64..3.0, 0.05f64..1.5, -3.0f64..3.0, 0.05f64..1.5, 0.0f64..0.95, -5.0f64..5.0),
    )
        .prop_map(|((e, a, alpha, b, beta, nu), (c, gamma, f, eta, lambda, zeta))| LawParams {
            e,
            a: a.exp(),
            alpha,
            b: b.exp(),
            beta,
            nu,
            c: c.exp(),
            gamma,
            f: f.exp(),
            eta,
            lambda,
            zeta,
        })
}

fn point() -> impl Strategy<Value = EvalPoint> {
    (18.0f64..25.0, 16.0f64..30.0, 0.0f64..1.0, 0.0f64..7.0)
        .prop_map(|(n, d, r, s)| EvalPoint::new(n.exp(), d.exp(), r, s.exp()).unwrap())
}

fn pairs(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((1.2f64..5.0, -0.1f64..0.1), len).prop_map(|v| {
        let obs: Vec<f64> = v.iter().map(|(y, _)| *y).collect();
        let preds = v.iter().map(|(y, e)| y * e.exp()).collect();
        (preds, obs)
    })
}

fn measurements() -> impl Strategy<Value = Vec<Measurement>> {
    prop::collection::vec(
        (18.0f64..23.0, 17.0f64..26.0, 0.0f64..1.0, 1.0f64..6.0, any::<bool>(), 1.2f64..4.0, any::<bool>()),
        1..40,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(n, d, r, s, src, loss, anchor)| {
                let domain = if src { Domain::Source } else { Domain::Target };
                Measurement::new(n.exp(), d.exp(), r, s.exp(), domain, loss, anchor).unwrap()
            })
            .collect()
    })
}

fn converged(form: LawForm, params: LawParams) -> FitResult {
    FitResult {
        form,
        params,
        objective: 0.0,
        converged: true,
        n_iters: 0,
        best_start_index: 0,
        seed: 0,
        projected_grad_norm: 0.0,
        n_points: 0,
        starts: vec![],
    }
}

fn reference_problem(tau: f64, forget: f64) -> PlanProblem {
    let src = converged(LawForm::AdditiveFloor, source_default_spec().law.params);
    let tgt = converged(LawForm::GatedPlusFloor, paper_default_spec().law.params);
    let mut p = PlanProblem::new(
        src,
        tgt,
        8.1e9,
        279.0,
        PlanConstraints {
            forgetting_tolerance: forget,
            target_threshold: tau,
            mode: ToleranceMode::Relative,
        },
    );
    p.search.r_points = 96;
    p.search.landscape_r_points = 2;
    p.search.landscape_atpp_points = 2;
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gate_and_floor_switch_off(p in params(), x in point()) {
        let mut q = p;
        q.lambda = 0.0;
        q.f = 0.0;
        let full = eval_law(LawForm::GatedPlusFloor, &q, &x).unwrap();
        let dcpt = eval_law(LawForm::DcptBaseline, &q.restricted_to(LawForm::DcptBaseline), &x).unwrap();
        prop_assert!((full - dcpt).abs() <= 1e-12 * dcpt);
    }

    #[test]
    fn loss_decreases_in_adaptation_tokens(form in form(), p in params(), x in point(), k in 1.01f64..100.0) {
        let p = p.restricted_to(form);
        let more = EvalPoint::new(x.n, x.d * k, x.r, x.ptpp).unwrap();
        let (a, b) = (eval_law(form, &p, &x).unwrap(), eval_law(form, &p, &more).unwrap());
        prop_assert!(b <= a, "{b} > {a}");
        let law = Law { form, params: p };
        prop_assert!(law.strictly_decreasing_in_d());
    }

    #[test]
    fn metrics_are_nonnegative_and_zero_on_truth((preds, obs) in pairs(30)) {
        prop_assert!(huber_log(&preds, &obs, 0.02).unwrap() >= 0.0);
        prop_assert!(rmse_log(&preds, &obs).unwrap() >= 0.0);
        prop_assert_eq!(huber_log(&obs, &obs, 0.02).unwrap(), 0.0);
        prop_assert_eq!(mae_rel(&obs, &obs).unwrap(), 0.0);
        prop_assert_eq!(mape_clip(&obs, &obs, 1e-8).unwrap(), 0.0);
        // Huber never exceeds half the squared error
        let rmse = rmse_log(&preds, &obs).unwrap();
        prop_assert!(huber_log(&preds, &obs, 0.02).unwrap() <= 0.5 * rmse * rmse + 1e-15);
    }

    #[test]
    fn metrics_ignore_order((preds, obs) in pairs(25), shift in 1usize..24) {
        let mut p2 = preds.clone();
        let mut o2 = obs.clone();
        p2.rotate_left(shift);
        o2.rotate_left(shift);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1e-12);
        prop_assert!(close(rmse_log(&preds, &obs).unwrap(), rmse_log(&p2, &o2).unwrap()));
        prop_assert!(close(mae_rel(&preds, &obs).unwrap(), mae_rel(&p2, &o2).unwrap()));
        let (a1, b1) = calibration_ols(&preds, &obs).unwrap();
        let (a2, b2) = calibration_ols(&p2, &o2).unwrap();
        prop_assert!((a1 - a2).abs() <= 1e-9 && (b1 - b2).abs() <= 1e-9);
    }

    #[test]
    fn objective_ignores_order(form in form(), p in params(), mut data in measurements(), shift in 0usize..40) {
        let p = p.restricted_to(form);
        for m in &mut data {
            m.domain = Domain::Target;
        }
        let before = objective(&p, form, &data, 0.02).unwrap();
        let k = shift % data.len();
        data.rotate_left(k);
        let after = objective(&p, form, &data, 0.02).unwrap();
        prop_assert!((before - after).abs() <= 1e-12 * before.max(1e-12));
    }

    #[test]
    fn dataset_csv_round_trip(data in measurements()) {
        let ds = Dataset::new(data, "prop").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        ds.write_csv(&path).unwrap();
        let back = load_dataset(&path, &ColumnMap::default()).unwrap();
        prop_assert_eq!(back.measurements(), ds.measurements());
        prop_assert_eq!(back.canonical_hash(), ds.canonical_hash());
    }

    #[test]
    fn law_and_fit_json_round_trip(form in form(), p in params()) {
        let law = Law { form, params: p.restricted_to(form) };
        let back: Law = serde_json::from_str(&serde_json::to_string(&law).unwrap()).unwrap();
        prop_assert_eq!(back, law);
        let fit = converged(form, law.params);
        let back: FitResult = serde_json::from_str(&serde_json::to_string(&fit).unwrap()).unwrap();
        prop_assert_eq!(back, fit);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn tighter_constraints_never_cheaper(tau in 1.75f64..1.95, forget in 0.005f64..0.05, k in 0.9f64..1.0) {
        let base = plan(&reference_problem(tau, forget)).unwrap();
        let tight = plan(&reference_problem(tau * k.max(0.99), forget * k)).unwrap();
        let cost = |r: &PlanResult| r.atpp_star.unwrap_or(f64::INFINITY);
        prop_assert!(cost(&tight) >= cost(&base));
        let back: PlanResult = serde_json::from_str(&serde_json::to_string(&base).unwrap()).unwrap();
        prop_assert_eq!(back, base);
    }

    #[test]
    fn optimum_stable_under_grid_refinement(tau in 1.78f64..1.9, forget in 0.01f64..0.04) {
        let coarse = plan(&reference_problem(tau, forget)).unwrap();
        let mut fine = reference_problem(tau, forget);
        fine.search.r_points = 384;
        let fine = plan(&fine).unwrap();
        match (coarse.atpp_star, fine.atpp_star) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 0.01 * b, "{a} vs {b}"),
            (None, None) => {}
            other => prop_assert!(false, "feasibility differs: {other:?}"),
        }
    }
}

#[test]
fn inactive_parameters_must_be_zero() {
    let mut p = paper_default_spec().law.params;
    assert!(eval_law(LawForm::DcptBaseline, &p, &EvalPoint::new(1e9, 1e10, 0.1, 30.0).unwrap()).is_err());
    p = p.restricted_to(LawForm::DcptBaseline);
    for q in [Param::F, Param::Eta, Param::Lambda, Param::Zeta] {
        assert_eq!(p.get(q), 0.0);
    }
}
