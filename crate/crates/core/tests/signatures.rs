mod common;

use common::hmac_oracle::{hmac_sha256, signature_header};
use kforge_core::forge::{sign, verify};
use proptest::prelude::*;

#[test]
fn oracle_matches_published_vector() {
    // RFC 4231 test case 2.
    let mac = hmac_sha256(b"Jefe", b"what do ya want for nothing?");
    assert_eq!(
        hex::encode(mac),
        "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"
    );
}

#[test]
fn long_keys_are_hashed_first() {
    let key = vec![0xaa; 131];
    assert_eq!(sign(&key, b"body"), signature_header(&key, b"body"));
}

#[test]
fn header_shape() {
    let header = sign(b"secret", b"{}");
    assert!(header.starts_with("sha256="));
    assert_eq!(header.len(), "sha256=".len() + 64);
    assert!(!verify(&header.to_uppercase(), b"{}", b"secret"));
    assert!(!verify(header.trim_start_matches("sha256="), b"{}", b"secret"));
    assert!(!verify("sha1=abcdef", b"{}", b"secret"));
    assert!(!verify("", b"{}", b"secret"));
}

proptest! {
    #[test]
    fn library_signature_equals_oracle(secret in proptest::collection::vec(any::<u8>(), 0..100),
                                       body in proptest::collection::vec(any::<u8>(), 0..512)) {
        let expected = signature_header(&secret, &body);
        prop_assert_eq!(sign(&secret, &body), expected.clone());
        prop_assert!(verify(&expected, &body, &secret));
    }

    #[test]
    fn any_single_byte_change_is_rejected(secret in "[a-f0-9]{8,40}",
                                          body in proptest::collection::vec(any::<u8>(), 1..256),
                                          idx in any::<prop::sample::Index>(),
                                          flip in 1u8..=255) {
        let header = signature_header(secret.as_bytes(), &body);
        let mut tampered = body.clone();
        let i = idx.index(tampered.len());
        tampered[i] ^= flip;
        prop_assert!(!verify(&header, &tampered, secret.as_bytes()));
    }

    #[test]
    fn wrong_secret_is_rejected(body in proptest::collection::vec(any::<u8>(), 0..128)) {
        let header = signature_header(b"right", &body);
        prop_assert!(!verify(&header, &body, b"wrong"));
    }
}
