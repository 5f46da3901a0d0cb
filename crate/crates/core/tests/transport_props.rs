mod common;

use common::{wire_batch, wire_spec, WireSpec};
use proptest::prelude::*;
use vidwin::transport::{decode_batch, decode_bytes, encode_batch, EncodeOptions, LinkConfig, LinkModel, WireMessage};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn codec_round_trips_bit_exactly(s in wire_spec(), diff in any::<bool>(), compress in any::<bool>()) {
        let mb = wire_batch(&s);
        let msg = encode_batch(&mb, EncodeOptions { diff, compress }).unwrap();
        let back = decode_batch(&msg).unwrap();
        prop_assert_eq!(&back, &mb);
        let again = encode_batch(&back, EncodeOptions { diff, compress }).unwrap();
        prop_assert_eq!(again.as_bytes(), msg.as_bytes());
        prop_assert_eq!(decode_bytes(msg.as_bytes()).unwrap(), mb);
        prop_assert_eq!(msg.header_len() + msg.payload_len(), msg.len());
    }

    #[test]
    fn packed_payload_never_exceeds_raw(mut s in wire_spec()) {
        s.pixels = true;
        if s.copy_key.len() > 1 {
            s.copy_key[1] = true;
        }
        let mb = wire_batch(&s);
        let raw = encode_batch(&mb, EncodeOptions::RAW).unwrap();
        let packed = encode_batch(&mb, EncodeOptions::PACKED).unwrap();
        prop_assert_eq!(raw.header_len(), packed.header_len());
        prop_assert!(packed.payload_len() <= raw.payload_len());
    }

    #[test]
    fn link_counts_every_byte(sizes in prop::collection::vec(1u64..5_000_000, 1..50), bw in 1e3f64..1e9, prop_ms in 0.0f64..200.0) {
        let mut link = LinkModel::new(LinkConfig { bandwidth_bytes_per_s: bw, propagation_ms: prop_ms });
        let mut last_arrival = 0.0f64;
        for (i, b) in sizes.iter().enumerate() {
            let d = link.send(i as f64, *b);
            prop_assert!(d.arrival_ms >= d.send_ms + prop_ms);
            prop_assert!(d.arrival_ms >= last_arrival);
            last_arrival = d.arrival_ms;
        }
        prop_assert_eq!(link.bytes_sent(), sizes.iter().sum::<u64>());
        prop_assert_eq!(link.messages_sent(), sizes.len() as u64);
    }
}

#[test]
fn truncated_messages_are_rejected() {
    let s = WireSpec {
        w: 4,
        h: 2,
        pixels: true,
        gaps: vec![1, 2],
        anns: vec![vec![], vec![]],
        hists: vec![None, None],
        iframe_first: false,
        copy_key: vec![false, true],
        seed: (0..24).collect(),
        reason: 0,
    };
    let msg = encode_batch(&wire_batch(&s), EncodeOptions::PACKED).unwrap();
    for cut in [0, 10, msg.header_len(), msg.len() - 1] {
        assert!(decode_bytes(&msg.as_bytes()[..cut]).is_err(), "cut at {cut}");
    }
    assert!(WireMessage::from_bytes(vec![0; 3]).is_err());
}
