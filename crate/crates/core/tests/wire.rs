use std::io::Cursor;

use ddcm::analytic::{GmmModel, GmmParams};
use ddcm::model::ScoreModel;
use ddcm::remote::{serve, NET_MAGIC, OP_COND_SCORE, OP_DENOISE, OP_SCORE, PROTOCOL_VERSION};
use ddcm::schedule::ScheduleDescriptor;

fn handshake(d: u32, steps: u32) -> Vec<u8> {
    let mut m = NET_MAGIC.to_vec();
    m.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
    m.extend_from_slice(&d.to_le_bytes());
    m.extend_from_slice(&steps.to_le_bytes());
    m
}

fn request(op: u8, step: u32, condition: Option<&str>, x: &[f32]) -> Vec<u8> {
    let mut m = vec![op];
    m.extend_from_slice(&step.to_le_bytes());
    if let Some(c) = condition {
        m.extend_from_slice(&(c.len() as u32).to_le_bytes());
        m.extend_from_slice(c.as_bytes());
    }
    for v in x {
        m.extend_from_slice(&v.to_le_bytes());
    }
    m
}

fn labelled() -> GmmModel {
    GmmModel::new(
        GmmParams::new(
            vec![0.5, 0.5],
            vec![vec![-1.0, 0.0], vec![1.0, 0.5]],
            vec![vec![0.3, 0.3], vec![0.2, 0.4]],
            Some(vec![0, 1]),
        )
        .unwrap(),
    )
    .unwrap()
}

fn session(model: &GmmModel, input: Vec<u8>) -> Vec<u8> {
    let sched = ScheduleDescriptor::scaled_linear(20).build().unwrap();
    let mut out = Vec::new();
    serve(model, &sched, Cursor::new(input), &mut out).unwrap();
    out
}

#[test]
fn server_is_stateless_between_requests() {
    let model = labelled();
    let x = [0.25f32, -1.5];
    for op in [OP_DENOISE, OP_SCORE] {
        let mut input = handshake(2, 20);
        let req = request(op, 7, None, &x);
        input.extend_from_slice(&req);
        input.extend_from_slice(&request(OP_DENOISE, 3, None, &[9.0, 9.0]));
        input.extend_from_slice(&req);
        let out = session(&model, input);
        let body = &out[17..];
        let frame = 1 + 2 * 4;
        assert_eq!(body.len(), 3 * frame);
        assert_eq!(body[..frame], body[2 * frame..], "opcode {op}");
        assert_eq!(body[0], 0);
    }
}

#[test]
fn handshake_reply_carries_the_model_fingerprint() {
    let model = labelled();
    let out = session(&model, handshake(2, 20));
    assert_eq!(&out[..7], NET_MAGIC);
    assert_eq!(u16::from_le_bytes([out[7], out[8]]), PROTOCOL_VERSION);
    assert_eq!(u64::from_le_bytes(out[9..17].try_into().unwrap()), model.fingerprint());
}

#[test]
fn errors_keep_the_connection_open() {
    let model = labelled();
    let mut input = handshake(2, 20);
    input.extend_from_slice(&request(OP_COND_SCORE, 5, Some("seven"), &[0.0, 0.0]));
    input.extend_from_slice(&request(OP_COND_SCORE, 5, Some("1"), &[0.0, 0.0]));
    let out = session(&model, input);
    let body = &out[17..];
    assert_ne!(body[0], 0);
    let len = u32::from_le_bytes(body[1..5].try_into().unwrap()) as usize;
    let msg = std::str::from_utf8(&body[5..5 + len]).unwrap();
    assert!(!msg.is_empty());
    let rest = &body[5 + len..];
    assert_eq!(rest.len(), 9);
    assert_eq!(rest[0], 0);
}
