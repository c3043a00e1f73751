use ecg_core::models::{computation_flops, Component};
use ecg_core::*;
use proptest::prelude::*;

fn arb_params() -> impl Strategy<Value = MachineParams> {
    (
        1e-8..1e-4f64,
        0.01..1.0f64,
        1e7..1e11f64,
        1e7..1e11f64,
        1e7..1e11f64,
        1e-12..1e-8f64,
        1usize..=64,
    )
        .prop_map(|(alpha, local, rn, rb, rl, gamma, ppn)| MachineParams {
            alpha,
            alpha_local: alpha * local,
            rate_injection: rn,
            rate_process: rb,
            rate_local: rl,
            gamma,
            f: 8,
            ppn,
        })
}

fn stats(m: usize, s: usize, t: usize) -> CommStats {
    CommStats {
        t,
        m,
        s: s * t,
        s_proc: s * t,
        s_node: 2 * s * t,
        m_proc_to_node: m,
        m_node_to_node: m,
        s_node_to_node: s * t,
        n_opt: m,
        total_internode_bytes: 4 * s * t,
        total_onnode_bytes: s * t,
        total_messages: 4 * m,
        total_internode_messages: 2 * m,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn maxrate_dominates_postal(params in arb_params(), m in 0.0..1e4f64, s in 0.0..1e9f64) {
        prop_assert!(maxrate_time(m, s, &params) >= postal_time(m, s, &params, Link::Network));
    }

    #[test]
    fn maxrate_collapses_without_injection_limit(params in arb_params(), m in 0.0..1e4f64, s in 0.0..1e9f64) {
        let p = MachineParams { ppn: 1, rate_injection: params.rate_process, ..params };
        prop_assert_eq!(maxrate_time(m, s, &p), postal_time(m, s, &p, Link::Network));
    }

    #[test]
    fn models_grow_with_counts(params in arb_params(), m in 1usize..100, s in 1usize..100_000, t in 1usize..16) {
        for scheme in Scheme::ALL {
            let base = scheme_time(scheme, &stats(m, s, t), t, &params);
            prop_assert!(scheme_time(scheme, &stats(m + 1, s, t), t, &params) >= base);
            prop_assert!(scheme_time(scheme, &stats(m, s + 1, t), t, &params) >= base);
            prop_assert!(scheme_time(scheme, &stats(m, s, t + 1), t + 1, &params) >= base);
        }
        prop_assert!(collective_time(64, t + 1, &params) > collective_time(64, t, &params));
        prop_assert!(collective_time(128, t, &params) > collective_time(64, t, &params));
    }

    #[test]
    fn iteration_model_totals(params in arb_params(), m in 1usize..100, s in 1usize..10_000, t in 1usize..16) {
        let shape = IterationShape { n: 4096, nnz: 20_000, p: 64, t };
        let st = stats(m, s, t);
        let postal = ecg_iteration_model(&st, shape, &params, ModelVariant::Postal);
        let maxrate = ecg_iteration_model(&st, shape, &params, ModelVariant::MaxRate);
        prop_assert_eq!(postal.computation, 0.0);
        prop_assert!(maxrate.point_to_point >= postal.point_to_point);
        prop_assert!(maxrate.total >= postal.total);
        let parts = [maxrate.point_to_point, maxrate.collective, maxrate.computation];
        let top = parts.iter().copied().fold(f64::MIN, f64::max);
        let picked = match maxrate.dominant {
            Component::PointToPoint => parts[0],
            Component::Collective => parts[1],
            Component::Computation => parts[2],
        };
        prop_assert_eq!(picked, top);
    }
}

#[test]
fn hand_substituted_iteration_flops() {
    // 4 * 100 + 8 * 10 + 1/2 + 1/6
    let v = computation_flops(100.0, 10.0, 1);
    assert!((v - 480.666_666_666_666_7).abs() <= 1e-12);
    let params = MachineParams {
        gamma: 1.0,
        ..MachineParams::default()
    };
    assert!((computation_time(100.0, 10.0, 1, &params) - 480.666_666_666_666_7).abs() <= 1e-12);
}
