use jfp_core::channel::{generate, ChannelModel};
use jfp_core::dataset::{parse, read_dataset, write_dataset, write_to};
use jfp_core::{Error, SystemConfig};

fn bytes(cfg: &SystemConfig, count: usize, seed: u64) -> Vec<u8> {
    let samples = generate(cfg, &ChannelModel::default(), seed, count).unwrap();
    let mut out = Vec::new();
    write_to(&mut out, cfg, &samples).unwrap();
    out
}

#[test]
fn file_round_trip_is_exact() {
    let cfg = SystemConfig::desk();
    let samples = generate(&cfg, &ChannelModel::default(), 7, 10).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jfpc");
    write_dataset(&path, &cfg, &samples).unwrap();
    let back = read_dataset(&path).unwrap();
    assert_eq!(back.config, cfg);
    assert_eq!(back.samples, samples);
}

#[test]
fn wrong_magic_is_a_format_error() {
    let mut b = bytes(&SystemConfig::desk(), 2, 1);
    b[..4].copy_from_slice(b"JFPW");
    assert!(matches!(parse(&b), Err(Error::Format(_))));
    let mut v = bytes(&SystemConfig::desk(), 2, 1);
    v[4] = 9;
    assert!(matches!(parse(&v), Err(Error::Format(_))));
}

#[test]
fn declared_count_beyond_payload_is_a_length_error() {
    let mut b = bytes(&SystemConfig::desk(), 4, 1);
    // the sample count is the last header field
    let count_at = 4 + 4 + 9 * 4 + 5 * 8;
    b[count_at..count_at + 8].copy_from_slice(&5u64.to_le_bytes());
    match parse(&b) {
        Err(Error::Length(msg)) => assert!(msg.contains("5 samples") && msg.contains("4 complete"), "{msg}"),
        other => panic!("expected a length error, got {other:?}"),
    }
    let full = bytes(&SystemConfig::desk(), 4, 1);
    assert!(matches!(parse(&full[..full.len() - 3]), Err(Error::Length(_))));
}

#[test]
fn same_seed_gives_identical_bytes() {
    let cfg = SystemConfig::desk();
    assert_eq!(bytes(&cfg, 5, 42), bytes(&cfg, 5, 42));
    assert_ne!(bytes(&cfg, 5, 42), bytes(&cfg, 5, 43));
}
