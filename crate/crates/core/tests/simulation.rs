use platoon_core::frequency::{frequency_response, transfer_function};
use platoon_core::model::{ControllerSpec, ErrorModel, ModelKind, PlatoonParams};
use platoon_core::sim::{
    attenuation_report, measured_gains, simulate_chain, simulate_state_space_uni_cs, ChainTrajectory, Input,
    SampledSignal, SimConfig,
};
use platoon_core::{error_model, Execution};

fn reference() -> PlatoonParams {
    PlatoonParams::new(10, 1000.0, 2000.0, 400.0, 1.0, 1.0, 25.0, 1.0, 50.0, 50.0).unwrap()
}

/// Max over steps in `range` of the cascade ODE residual for channel `i`,
/// with z_i'' from a 5-point central difference of the stored z_i'.
fn ode_residual(model: &ErrorModel, traj: &ChainTrajectory, i: usize, range: std::ops::Range<usize>) -> f64 {
    let z: Vec<f64> = traj.z(i).collect();
    let zd: Vec<f64> = traj.zdot(i).collect();
    let up: Vec<f64> = traj.z(i - 1).collect();
    let upd: Vec<f64> = traj.zdot(i - 1).collect();
    let h = traj.dt();
    range
        .map(|k| {
            let zdd = (-zd[k + 2] + 8.0 * zd[k + 1] - 8.0 * zd[k - 1] + zd[k - 2]) / (12.0 * h);
            (zdd + model.a1 * zd[k] + model.a0 * z[k] - model.b1 * upd[k] - model.b0 * up[k]).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn rk4_residual_converges_at_fourth_order() {
    let model = error_model(&ControllerSpec::of(ModelKind::UniCs, reference())).unwrap();
    let input = Input::Sinusoid { amplitude: 1.0, omega: 1.3 };
    let run = |dt: f64| {
        let cfg = SimConfig::new(dt, 20.0, input.clone());
        let traj = simulate_chain(&model, 3, &cfg).unwrap();
        let k = |t: f64| (t / dt).round() as usize;
        ode_residual(&model, &traj, 2, k(5.0)..k(15.0))
    };
    let (coarse, fine) = (run(0.04), run(0.02));
    let ratio = coarse / fine;
    assert!((12.0..20.0).contains(&ratio), "coarse {coarse:e} fine {fine:e} ratio {ratio}");
}

#[test]
fn state_space_errors_satisfy_cascade() {
    let p = PlatoonParams { n: 5, ..reference() };
    let model = error_model(&ControllerSpec::of(ModelKind::UniCs, p)).unwrap();
    let cfg = SimConfig::new(0.005, 40.0, Input::Sinusoid { amplitude: 800.0, omega: 1.7 });
    let errors = simulate_state_space_uni_cs(&p, &cfg, 12.0).unwrap().spacing_errors();
    assert_eq!(errors.channels(), 4);
    let scale = errors.z(1).fold(0.0f64, |a, z| a.max(z.abs()));
    let k = |t: f64| (t / cfg.dt).round() as usize;
    for ch in 1..4 {
        let r = ode_residual(&model, &errors, ch, k(1.0)..k(39.0));
        assert!(r < 1e-6 * scale.max(1.0), "channel {ch}: residual {r:e}");
    }
}

#[test]
fn state_space_and_chain_agree() {
    let p = reference();
    let model = error_model(&ControllerSpec::of(ModelKind::UniCs, p)).unwrap();
    let force = Input::Sinusoid { amplitude: 1000.0, omega: 3.0 };
    let dt = SimConfig::auto_dt(&model, &force);
    let cfg = SimConfig::new(dt, 200.0, force);
    let ss = simulate_state_space_uni_cs(&p, &cfg, 10.0).unwrap().spacing_errors();

    let lead = SampledSignal::new(dt, ss.z(0).collect(), ss.zdot(0).collect()).unwrap();
    let chain_cfg = SimConfig::new(dt, 200.0, Input::Sampled(lead));
    let chain = simulate_chain(&model, ss.channels(), &chain_cfg).unwrap();
    assert_eq!(chain.len(), ss.len());
    for ch in 1..ss.channels() {
        let scale = ss.z(ch).fold(0.0f64, |a, z| a.max(z.abs()));
        let diff = ss.z(ch).zip(chain.z(ch)).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(diff <= 1e-6 * scale, "channel {ch}: diff {diff:e} scale {scale:e}");
    }

    // derived z_3/z_2 ratio at ω = 3 matches |H(3i)|
    let report = attenuation_report(&ss, &cfg).unwrap();
    assert!((report.ratios[1] - 0.3284066259602923).abs() / 0.3284066259602923 < 0.01, "{:?}", report.ratios);
}

#[test]
fn measured_gains_track_frequency_response_for_every_model() {
    let p = PlatoonParams { ch: 0.01, ..reference() };
    let omegas = [0.5, 1.0, 1.7, 2.5, 3.0, 5.0];
    for kind in ModelKind::ALL {
        let model = error_model(&ControllerSpec::of(kind, p)).unwrap();
        let tf = transfer_function(&model);
        let gains = measured_gains(&model, &omegas, Execution::Parallel).unwrap();
        for (w, g) in omegas.iter().zip(&gains) {
            let h = frequency_response(&tf, *w).unwrap().magnitude;
            assert!((g - h).abs() / h < 0.01, "{kind} at {w}: sim {g} vs |H| {h}");
        }
    }
}

#[test]
fn ten_vehicle_chain_attenuates_geometrically() {
    let model = error_model(&ControllerSpec::of(ModelKind::UniCs, reference())).unwrap();
    let cfg = SimConfig::for_frequency(&model, 3.0, 1.0, 9);
    let rep = attenuation_report(&simulate_chain(&model, 10, &cfg).unwrap(), &cfg).unwrap();
    assert_eq!(rep.ratios.len(), 9);
    assert!(rep.attenuating, "{:?} over {} s", rep.ratios, cfg.duration);
    for r in &rep.ratios {
        assert!((r - 0.3284066259602923).abs() / 0.3284066259602923 < 0.02, "{:?}", rep.ratios);
    }
}
