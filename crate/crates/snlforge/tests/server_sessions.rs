use std::net::SocketAddr;
use std::thread;
use std::time::Duration;

use snlforge::client::{Client, ClientError};
use snlforge::core::model::{builtin, sample_inputs};
use snlforge::core::perf::{Calibration, DesignPoint};
use snlforge::core::sim::{Pipeline, WeightWrite};
use snlforge::core::FixedFormat;
use snlforge::protocol::{ErrorCode, Frame, FrameType, MAGIC};
use snlforge::server::{serve, ServerConfig, ServerHandle};

const TIMEOUT: Duration = Duration::from_secs(10);

fn fmt() -> FixedFormat {
    "16:6".parse().unwrap()
}

fn jet_pipeline() -> (snlforge::core::ModelGraph, Pipeline) {
    let graph = builtin("jet").unwrap().normalize_for_hardware().unwrap();
    let p = Pipeline::build(&graph, &DesignPoint::snl(fmt()), &Calibration::default()).unwrap();
    (graph, p)
}

fn start(template: Pipeline) -> ServerHandle {
    let config = ServerConfig {
        bind: SocketAddr::from(([127, 0, 0, 1], 0)),
        frame_timeout: Duration::from_millis(150),
        ..ServerConfig::default()
    };
    serve(template, "jet", config).unwrap()
}

fn server_error(r: Result<impl std::fmt::Debug, ClientError>) -> u16 {
    match r {
        Err(ClientError::Server { code, .. }) => code,
        other => panic!("expected a server error, got {other:?}"),
    }
}

/// Read frames until the ping echo arrives; returns the error codes seen
/// before it.
fn errors_until_echo(c: &mut Client, echo: &[u8]) -> Vec<u16> {
    let mut codes = Vec::new();
    loop {
        let f = c.next_frame().unwrap();
        if let Some((code, _)) = f.as_error() {
            codes.push(code);
        } else {
            assert_eq!(f.frame_type(), Some(FrameType::Ack));
            assert_eq!(f.payload, echo);
            return codes;
        }
    }
}

#[test]
fn info_and_ping() {
    let (graph, p) = jet_pipeline();
    let server = start(p.clone());
    let mut c = Client::connect(server.local_addr(), TIMEOUT).unwrap();
    assert_eq!(c.info().model, "jet");
    assert_eq!(c.format(), fmt());
    assert_eq!(c.info().words, p.word_count());
    assert_eq!(c.info().n_in as usize, graph.input_shape().len());
    assert_eq!(c.ping(b"hello").unwrap(), b"hello");
    server.shutdown();
}

#[test]
fn inference_requires_weights_then_matches_local_simulation() {
    let (graph, template) = jet_pipeline();
    let server = start(template.clone());
    let mut c = Client::connect(server.local_addr(), TIMEOUT).unwrap();
    let x = &sample_inputs(16, 1, 3)[0];
    assert_eq!(server_error(c.infer_f64(x)), ErrorCode::WeightsNotLoaded as u16);

    let mut local = template;
    local.load_graph_weights(&graph).unwrap();
    let image = local.weights().to_vec();
    assert_eq!(c.load_image(&image).unwrap(), image.len() as u64);
    for x in sample_inputs(16, 20, 4) {
        let want = local.infer(&x).unwrap();
        let (out, cycles) = c.infer_f64(&x).unwrap();
        assert_eq!(out, want.output);
        assert_eq!(cycles, want.latency_cycles);
    }
    server.shutdown();
}

#[test]
fn bad_frames_get_errors_without_teardown() {
    let (graph, mut template) = jet_pipeline();
    template.load_graph_weights(&graph).unwrap();
    let server = start(template);
    let mut c = Client::connect(server.local_addr(), TIMEOUT).unwrap();

    // Garbage before a frame: one Malformed error, then the frame is served.
    let mut bytes = b"garbage!".to_vec();
    bytes.extend(Frame::new(FrameType::Ping, b"a".to_vec()).encode());
    c.send_raw(&bytes).unwrap();
    let codes = errors_until_echo(&mut c, b"a");
    assert!(
        !codes.is_empty() && codes.iter().all(|&e| e == ErrorCode::Malformed as u16),
        "{codes:?}"
    );

    // Unknown type.
    let reply = c
        .request(&Frame {
            kind: 0x42,
            payload: vec![1, 2],
        })
        .unwrap();
    assert_eq!(reply.as_error().unwrap().0, ErrorCode::UnknownType as u16);

    // Reply-direction type sent as a request.
    let reply = c.request(&Frame::new(FrameType::Ack, vec![])).unwrap();
    assert_eq!(reply.as_error().unwrap().0, ErrorCode::UnknownType as u16);

    // Truncated: header promises 10 bytes, 3 arrive, then silence.
    let mut partial = MAGIC.to_vec();
    partial.push(FrameType::Ping as u8);
    partial.extend(10u32.to_le_bytes());
    partial.extend([1, 2, 3]);
    c.send_raw(&partial).unwrap();
    let reply = c.next_frame().unwrap();
    assert_eq!(reply.as_error().unwrap().0, ErrorCode::Malformed as u16);
    assert_eq!(c.ping(b"b").unwrap(), b"b");

    // Oversized length field.
    let mut huge = MAGIC.to_vec();
    huge.push(FrameType::Ping as u8);
    huge.extend(u32::MAX.to_le_bytes());
    huge.extend(Frame::new(FrameType::Ping, b"c".to_vec()).encode());
    c.send_raw(&huge).unwrap();
    let codes = errors_until_echo(&mut c, b"c");
    assert!(codes.contains(&(ErrorCode::Malformed as u16)), "{codes:?}");

    // Wrong input length and a payload that is not whole words.
    assert_eq!(server_error(c.infer(&[0; 3])), ErrorCode::BadPayload as u16);
    let reply = c.request(&Frame::new(FrameType::InferReq, vec![0; 5])).unwrap();
    assert_eq!(reply.as_error().unwrap().0, ErrorCode::Malformed as u16);

    // The session still infers.
    assert_eq!(c.infer(&[0; 16]).unwrap().0.len(), 5);
    server.shutdown();
}

#[test]
fn out_of_range_write_is_rejected_as_a_batch() {
    let (graph, mut template) = jet_pipeline();
    template.load_graph_weights(&graph).unwrap();
    let words = template.word_count();
    let server = start(template);
    let mut c = Client::connect(server.local_addr(), TIMEOUT).unwrap();
    let before = c.infer(&[64; 16]).unwrap();
    let writes = [
        WeightWrite { address: 0, raw: 5 },
        WeightWrite { address: words, raw: 1 },
    ];
    assert_eq!(server_error(c.write_regs(&writes)), ErrorCode::AddressOutOfRange as u16);
    assert_eq!(c.infer(&[64; 16]).unwrap(), before);

    // Raw value outside the word's range.
    let wide = [WeightWrite {
        address: 0,
        raw: 1 << 20,
    }];
    let payload = snlforge::protocol::encode_writes(&wide, "32:16".parse().unwrap());
    let reply = c.request(&Frame::new(FrameType::WriteReg, payload)).unwrap();
    assert!(reply.as_error().is_some());
    assert_eq!(c.infer(&[64; 16]).unwrap(), before);
    server.shutdown();
}

#[test]
fn sessions_do_not_share_weights() {
    let (graph, template) = jet_pipeline();
    let server = start(template.clone());
    let addr = server.local_addr();
    let mut a = template.clone();
    a.load_graph_weights(&graph).unwrap();
    let image_a = a.weights().to_vec();
    let image_b: Vec<i64> = image_a.iter().map(|w| -w).collect();
    let mut b = template;
    b.load_image(&image_b).unwrap();

    let inputs = sample_inputs(16, 50, 9);
    let workers: Vec<_> = [(image_a, a), (image_b, b)]
        .into_iter()
        .map(|(image, mut local)| {
            let inputs = inputs.clone();
            thread::spawn(move || {
                let mut c = Client::connect(addr, TIMEOUT).unwrap();
                c.load_image(&image).unwrap();
                for x in &inputs {
                    assert_eq!(c.infer_f64(x).unwrap().0, local.infer(x).unwrap().output);
                }
            })
        })
        .collect();
    for w in workers {
        w.join().unwrap();
    }
    server.shutdown();
}

#[test]
fn shutdown_with_idle_client_connected() {
    let (_, template) = jet_pipeline();
    let server = start(template);
    let _c = Client::connect(server.local_addr(), TIMEOUT).unwrap();
    server.shutdown();
}
