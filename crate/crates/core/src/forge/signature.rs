use hmac::{Hmac, Mac};
use sha2::Sha256;

use super::WebhookDelivery;

type HmacSha256 = Hmac<Sha256>;

const PREFIX: &str = "sha256=";

/// `sha256=<lowercase hex HMAC-SHA256(secret, body)>`
pub fn sign(secret: &[u8], body: &[u8]) -> String {
    let mut mac = HmacSha256::new_from_slice(secret).expect("HMAC accepts any key length");
    mac.update(body);
    format!("{PREFIX}{}", hex::encode(mac.finalize().into_bytes()))
}

/// Constant-time check of a signature header against `body`.
pub fn verify(header: &str, body: &[u8], secret: &[u8]) -> bool {
    let Some(digest) = header.strip_prefix(PREFIX) else {
        return false;
    };
    if digest.len() != 64 || !digest.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return false;
    }
    let Ok(expected) = hex::decode(digest) else {
        return false;
    };
    let mut mac = HmacSha256::new_from_slice(secret).expect("HMAC accepts any key length");
    mac.update(body);
    mac.verify_slice(&expected).is_ok()
}

pub fn verify_signature(delivery: &WebhookDelivery, secret: &str) -> bool {
    verify(&delivery.signature_header, &delivery.raw_body, secret.as_bytes())
}
