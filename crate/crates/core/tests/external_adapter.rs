use std::time::Duration;

use graphmut::backends::{
    external_execute, reference_interpret, AdapterCommand, AdapterSession, CaptureOptions, Stage,
};
use graphmut::ir::{generate_seed, SeedKind};
use graphmut::{Error, Tensor};

fn adapter(args: &[&str]) -> AdapterCommand {
    AdapterCommand::new(
        env!("CARGO_BIN_EXE_graphmut-ref-adapter"),
        args.iter().map(|s| s.to_string()).collect(),
    )
}

fn input(model: &graphmut::GraphModel) -> Tensor {
    let n: usize = model.input.shape.iter().product();
    let data = (0..n).map(|i| ((i * 37 % 200) as f32 / 100.0) - 1.0).collect();
    Tensor::new(model.input.shape.clone(), data).unwrap()
}

#[test]
fn echo_adapter_matches_the_reference() {
    for kind in SeedKind::ALL {
        let m = generate_seed(kind, 1);
        let x = input(&m);
        let capture = CaptureOptions::default();
        let ext = external_execute(&adapter(&["--backend", "optimized"]), &m, &x, &capture).unwrap();
        let reference = reference_interpret(&m, &x, &capture);
        assert!(ext.completed(), "{:?}", ext.stage_status);
        assert_eq!(ext.layer_outputs.len(), reference.layer_outputs.len());
        for (a, b) in ext.layer_outputs.iter().zip(&reference.layer_outputs) {
            assert_eq!(a.node, b.node);
            let d = a
                .tensor
                .data
                .iter()
                .zip(&b.tensor.data)
                .map(|(p, q)| (p - q).abs())
                .fold(0.0f32, f32::max);
            assert!(d < 1e-4, "{} differs by {d}", a.node);
        }
        assert_eq!(ext.peak_mem_bytes, reference.peak_mem_bytes);
    }
}

#[test]
fn handshake_reports_the_runtime() {
    let session = AdapterSession::launch(&adapter(&[])).unwrap();
    assert_eq!(session.hello.name, "graphmut-ref-adapter");
    assert_eq!(session.hello.runtime, "graphmut-reference");
}

#[test]
fn one_session_serves_several_requests() {
    let m = generate_seed(SeedKind::TinyMlp, 0);
    let mut session = AdapterSession::launch(&adapter(&[])).unwrap();
    for _ in 0..3 {
        let t = session
            .execute("ext", &m, &input(&m), &CaptureOptions::default())
            .unwrap();
        assert!(t.completed());
    }
}

#[test]
fn killed_adapter_becomes_an_infer_crash() {
    let m = generate_seed(SeedKind::TinyMlp, 0);
    let t = external_execute(&adapter(&["--die-after", "0"]), &m, &input(&m), &CaptureOptions::default())
        .unwrap();
    assert_eq!(t.crash(), Some((Stage::Infer, "adapter-lost")));
}

#[test]
fn hung_adapter_times_out() {
    let m = generate_seed(SeedKind::TinyMlp, 0);
    let cmd = adapter(&["--hang"]).with_timeout(Duration::from_millis(500));
    let t = external_execute(&cmd, &m, &input(&m), &CaptureOptions::default()).unwrap();
    assert_eq!(t.crash(), Some((Stage::Infer, "timeout")));
}

#[test]
fn missing_field_is_a_protocol_violation() {
    let m = generate_seed(SeedKind::TinyMlp, 0);
    let err = external_execute(
        &adapter(&["--drop-field", "total_ms"]),
        &m,
        &input(&m),
        &CaptureOptions::default(),
    )
    .unwrap_err();
    match err {
        Error::Protocol { reason, raw } => {
            assert!(reason.contains("total_ms"), "{reason}");
            assert!(raw.contains("\"status\""));
        }
        other => panic!("expected a protocol error, got {other}"),
    }
}

#[test]
fn garbage_reply_is_a_protocol_violation() {
    let m = generate_seed(SeedKind::TinyMlp, 0);
    let err = external_execute(&adapter(&["--garbage"]), &m, &input(&m), &CaptureOptions::default())
        .unwrap_err();
    assert!(matches!(err, Error::Protocol { ref raw, .. } if raw == "this is not json"), "{err}");
}

#[test]
fn invalid_model_crashes_at_build() {
    let mut m = generate_seed(SeedKind::TinyMlp, 0);
    m.node_mut("dense2").unwrap().weights.pop();
    let t = external_execute(&adapter(&[]), &m, &input(&m), &CaptureOptions::default()).unwrap();
    assert_eq!(t.crash().map(|c| c.0), Some(Stage::Build));
}

#[test]
fn missing_program_is_an_error_not_a_crash() {
    let m = generate_seed(SeedKind::TinyMlp, 0);
    let cmd = AdapterCommand::new("/nonexistent/graphmut-adapter", Vec::new());
    assert!(matches!(
        external_execute(&cmd, &m, &input(&m), &CaptureOptions::default()),
        Err(Error::Io(_))
    ));
}
