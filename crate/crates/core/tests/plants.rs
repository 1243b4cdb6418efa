use govid::experiment::{synthesize, Scenario};
use govid::plants::{
    build_model, default_table, input_channels, simulate_subsystem, subsystem_view, tap_channels, ModelKind,
    OperatingPoint, PlantError, SubsystemId,
};
use govid::signals::TimeSeries;

const KINDS: [ModelKind; 2] = [ModelKind::Ggov1, ModelKind::St6b];

fn steady_record(kind: ModelKind, n: usize) -> TimeSeries {
    let model = build_model(kind, &default_table(kind), 0.001, OperatingPoint::default()).unwrap();
    let mut ts = TimeSeries::new(0.001).unwrap();
    for (name, v) in model.steady_inputs() {
        ts.push(name, vec![v; n]).unwrap();
    }
    ts
}

#[test]
fn steady_inputs_hold_every_tap() {
    for kind in KINDS {
        let model = build_model(kind, &default_table(kind), 0.001, OperatingPoint::default()).unwrap();
        let out = model.simulate(&steady_record(kind, 5000)).unwrap();
        for name in tap_channels(kind) {
            let v = out.channel(name).unwrap();
            let drift = v.iter().map(|x| (x - v[0]).abs()).fold(0.0, f64::max);
            assert!(drift < 1e-9, "{kind:?} {name} drifts by {drift}");
        }
    }
}

#[test]
fn subsystems_reproduce_the_full_plant() {
    // each subsystem driven by recorded taps must match the same taps
    for kind in KINDS {
        let data = synthesize(kind, &default_table(kind), OperatingPoint::default(), &Scenario::training(), None)
            .unwrap();
        for id in SubsystemId::for_kind(kind) {
            let view = subsystem_view(kind, id).unwrap();
            let sim = simulate_subsystem(id, &default_table(kind), &data).unwrap();
            for (name, yhat) in view.outputs.iter().zip(&sim) {
                let y = data.channel(name).unwrap();
                let scale = y.iter().map(|v| v.abs()).fold(1e-12, f64::max);
                let err = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err <= 1e-9 * scale.max(1.0), "{id:?} {name}: {err}");
            }
        }
    }
}

#[test]
fn excitation_moves_every_input() {
    for kind in KINDS {
        let data = synthesize(kind, &default_table(kind), OperatingPoint::default(), &Scenario::training(), None)
            .unwrap();
        // 60 s at 1 ms, both ends included
        assert_eq!(data.len(), 60_001);
        let pulsed: &[&str] = match kind {
            ModelKind::Ggov1 => &["p_ref", "temp_proxy"],
            ModelKind::St6b => &["v_ref", "v_c"],
        };
        for name in pulsed {
            assert!(input_channels(kind).contains(name));
            let v = data.channel(name).unwrap();
            assert!(v.iter().any(|x| *x != v[0]), "{kind:?} {name} is flat");
        }
    }
}

#[test]
fn missing_input_is_reported() {
    let model = build_model(ModelKind::Ggov1, &default_table(ModelKind::Ggov1), 0.001, OperatingPoint::default())
        .unwrap();
    let mut ts = TimeSeries::new(0.001).unwrap();
    ts.push("p_ref", vec![0.75; 10]).unwrap();
    assert!(matches!(model.simulate(&ts), Err(PlantError::MissingChannel(_))));
}

#[test]
fn rate_mismatch_is_reported() {
    let model = build_model(ModelKind::St6b, &default_table(ModelKind::St6b), 0.001, OperatingPoint::default())
        .unwrap();
    let steady = steady_record(ModelKind::St6b, 100);
    let mut ts = TimeSeries::new(0.002).unwrap();
    for c in steady.channels() {
        ts.push(c.name.clone(), c.values.clone()).unwrap();
    }
    assert!(matches!(model.simulate(&ts), Err(PlantError::RateMismatch { .. })));
}

#[test]
fn invalid_parameters_are_rejected() {
    let mut t = default_table(ModelKind::Ggov1);
    t.set_value("r", 0.0).unwrap();
    let e = build_model(ModelKind::Ggov1, &t, 0.001, OperatingPoint::default());
    assert!(matches!(e, Err(PlantError::InvalidParams { .. })), "{e:?}");
}
