//! Bearer tokens: compact JWS with HMAC-SHA256 (`HS256`) signatures.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

/// Shortest accepted signing key, in bytes.
pub const MIN_KEY_LEN: usize = 16;

pub const DEFAULT_SCOPE: &str = "api";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("missing bearer token")]
    MissingToken,
    #[error("token signature is invalid")]
    BadSignature,
    #[error("token has expired")]
    Expired,
    #[error("signing key must be at least {MIN_KEY_LEN} bytes")]
    WeakKey,
}

impl AuthError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::MissingToken => "MISSING_TOKEN",
            Self::BadSignature => "BAD_SIGNATURE",
            Self::Expired => "TOKEN_EXPIRED",
            Self::WeakKey => "WEAK_KEY",
        }
    }
}

/// Token claims.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub sub: String,
    pub iat: u64,
    pub exp: u64,
    #[serde(default)]
    pub scope: String,
}

impl Principal {
    pub fn scopes(&self) -> impl Iterator<Item = &str> {
        self.scope.split_whitespace()
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    alg: String,
    #[serde(default)]
    typ: Option<String>,
}

/// HMAC key checked for minimum length.
#[derive(Clone)]
pub struct SigningKey(Vec<u8>);

impl std::fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SigningKey({} bytes)", self.0.len())
    }
}

impl SigningKey {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, AuthError> {
        let bytes = bytes.into();
        if bytes.len() < MIN_KEY_LEN {
            return Err(AuthError::WeakKey);
        }
        Ok(Self(bytes))
    }

    fn mac(&self) -> Hmac<Sha256> {
        Hmac::<Sha256>::new_from_slice(&self.0).expect("HMAC accepts keys of any length")
    }
}

pub fn now_secs() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Signs a token for `subject` valid for `ttl_secs` from `now`.
pub fn issue(key: &SigningKey, subject: &str, ttl_secs: u64, now: u64) -> String {
    let header = Header {
        alg: "HS256".into(),
        typ: Some("JWT".into()),
    };
    let claims = Principal {
        sub: subject.to_owned(),
        iat: now,
        exp: now.saturating_add(ttl_secs),
        scope: DEFAULT_SCOPE.into(),
    };
    let head = URL_SAFE_NO_PAD.encode(serde_json::to_vec(&header).expect("header serializes"));
    let body = URL_SAFE_NO_PAD.encode(serde_json::to_vec(&claims).expect("claims serialize"));
    let signing_input = format!("{head}.{body}");
    let mut mac = key.mac();
    mac.update(signing_input.as_bytes());
    let sig = URL_SAFE_NO_PAD.encode(mac.finalize().into_bytes());
    format!("{signing_input}.{sig}")
}

/// Verifies signature and expiry. A token expires at `exp`.
pub fn verify(token: &str, key: &SigningKey, now: u64) -> Result<Principal, AuthError> {
    let mut parts = token.split('.');
    let (Some(head), Some(body), Some(sig), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(AuthError::BadSignature);
    };
    let header: Header = URL_SAFE_NO_PAD
        .decode(head)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .ok_or(AuthError::BadSignature)?;
    if header.alg != "HS256" {
        return Err(AuthError::BadSignature);
    }
    let sig = URL_SAFE_NO_PAD.decode(sig).map_err(|_| AuthError::BadSignature)?;
    let mut mac = key.mac();
    mac.update(head.as_bytes());
    mac.update(b".");
    mac.update(body.as_bytes());
    mac.verify_slice(&sig).map_err(|_| AuthError::BadSignature)?;
    let claims: Principal = URL_SAFE_NO_PAD
        .decode(body)
        .ok()
        .and_then(|b| serde_json::from_slice(&b).ok())
        .ok_or(AuthError::BadSignature)?;
    if claims.exp <= now {
        return Err(AuthError::Expired);
    }
    Ok(claims)
}

/// Extracts and verifies the token of an `Authorization` header value.
pub fn authenticate(header: Option<&str>, key: &SigningKey, now: u64) -> Result<Principal, AuthError> {
    let value = header.map(str::trim).filter(|h| !h.is_empty()).ok_or(AuthError::MissingToken)?;
    let (scheme, token) = value.split_once(' ').ok_or(AuthError::MissingToken)?;
    if !scheme.eq_ignore_ascii_case("bearer") {
        return Err(AuthError::MissingToken);
    }
    let token = token.trim();
    if token.is_empty() {
        return Err(AuthError::MissingToken);
    }
    verify(token, key, now)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> SigningKey {
        SigningKey::new("0123456789abcdef-test").unwrap()
    }

    #[test]
    fn issued_token_verifies() {
        let t = issue(&key(), "alice", 60, 1_000);
        let p = verify(&t, &key(), 1_010).unwrap();
        assert_eq!(p.sub, "alice");
        assert_eq!((p.iat, p.exp), (1_000, 1_060));
        assert_eq!(p.scopes().collect::<Vec<_>>(), ["api"]);
        let h = format!("Bearer {t}");
        assert_eq!(authenticate(Some(&h), &key(), 1_010).unwrap(), p);
    }

    #[test]
    fn rfc7515_hs256_example() {
        // Known-answer vector: compact serialization example with a JWK "oct" key.
        let key_b64 = "AyM1SysPpbyDfgZld3umj1qzKObwVMkoqQ-EstJQLr_T-1qS0gZH75aKtMN3Yj0iPS4hcgUuTwjAzZr1Z9CAow";
        let key = SigningKey::new(URL_SAFE_NO_PAD.decode(key_b64).unwrap()).unwrap();
        let head = "eyJ0eXAiOiJKV1QiLA0KICJhbGciOiJIUzI1NiJ9";
        let body = "eyJpc3MiOiJqb2UiLA0KICJleHAiOjEzMDA4MTkzODAsDQogImh0dHA6Ly9leGFtcGxlLmNvbS9pc19yb290Ijp0cnVlfQ";
        let mut mac = key.mac();
        mac.update(format!("{head}.{body}").as_bytes());
        let sig = URL_SAFE_NO_PAD.encode(mac.finalize().into_bytes());
        assert_eq!(sig, "dBjftJeZ4CVP-mB92K27uhbUJU1p1r_wW1gFWFOEjXk");
    }

    #[test]
    fn tampered_payload_is_rejected() {
        let t = issue(&key(), "alice", 60, 1_000);
        let parts: Vec<&str> = t.split('.').collect();
        let forged = Principal {
            sub: "mallory".into(),
            iat: 1_000,
            exp: 9_999_999,
            scope: "api".into(),
        };
        let body = URL_SAFE_NO_PAD.encode(serde_json::to_vec(&forged).unwrap());
        let tampered = format!("{}.{body}.{}", parts[0], parts[2]);
        assert_eq!(verify(&tampered, &key(), 1_010), Err(AuthError::BadSignature));
    }

    #[test]
    fn wrong_key_and_garbage() {
        let t = issue(&key(), "alice", 60, 1_000);
        let other = SigningKey::new("another-key-of-16+").unwrap();
        assert_eq!(verify(&t, &other, 1_010), Err(AuthError::BadSignature));
        for bad in ["", "a.b", "a.b.c.d", "!!.??.--", "e30.e30.AAAA"] {
            assert_eq!(verify(bad, &key(), 0), Err(AuthError::BadSignature), "{bad:?}");
        }
    }

    #[test]
    fn alg_none_is_rejected() {
        let head = URL_SAFE_NO_PAD.encode(br#"{"alg":"none"}"#);
        let t = issue(&key(), "alice", 60, 1_000);
        let body = t.split('.').nth(1).unwrap();
        assert_eq!(verify(&format!("{head}.{body}."), &key(), 1_010), Err(AuthError::BadSignature));
    }

    #[test]
    fn expiry_boundary() {
        let t = issue(&key(), "alice", 60, 1_000);
        assert!(verify(&t, &key(), 1_059).is_ok());
        assert_eq!(verify(&t, &key(), 1_060), Err(AuthError::Expired));
        let zero = issue(&key(), "alice", 0, 1_000);
        assert_eq!(verify(&zero, &key(), 1_000), Err(AuthError::Expired));
    }

    #[test]
    fn header_forms() {
        assert_eq!(authenticate(None, &key(), 0), Err(AuthError::MissingToken));
        assert_eq!(authenticate(Some(""), &key(), 0), Err(AuthError::MissingToken));
        assert_eq!(authenticate(Some("Bearer "), &key(), 0), Err(AuthError::MissingToken));
        assert_eq!(authenticate(Some("Basic abc"), &key(), 0), Err(AuthError::MissingToken));
        assert_eq!(authenticate(Some("Bearer x.y.z"), &key(), 0), Err(AuthError::BadSignature));
    }

    #[test]
    fn short_keys_are_refused() {
        assert_eq!(SigningKey::new("short").unwrap_err(), AuthError::WeakKey);
    }
}
