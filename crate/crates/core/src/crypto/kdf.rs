use hkdf::Hkdf;
use sha2::Sha256;

use super::CryptoError;

/// 255 * HashLen for SHA-256.
pub const HKDF_MAX_OUTPUT: usize = 255 * 32;

/// HKDF-SHA256 extract-then-expand.
pub fn hkdf(ikm: &[u8], salt: &[u8], info: &[u8], out_len: usize) -> Result<Vec<u8>, CryptoError> {
    if out_len > HKDF_MAX_OUTPUT {
        return Err(CryptoError::OutputTooLong(out_len));
    }
    let mut okm = vec![0u8; out_len];
    Hkdf::<Sha256>::new(Some(salt), ikm)
        .expand(info, &mut okm)
        .map_err(|_| CryptoError::OutputTooLong(out_len))?;
    Ok(okm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(s: &str) -> Vec<u8> {
        hex::decode(s).unwrap()
    }

    #[test]
    fn rfc5869_case_1() {
        let okm = hkdf(
            &[0x0b; 22],
            &h("000102030405060708090a0b0c"),
            &h("f0f1f2f3f4f5f6f7f8f9"),
            42,
        )
        .unwrap();
        assert_eq!(
            hex::encode(okm),
            "3cb25f25faacd57a90434f64d0362f2a2d2d0a90cf1a5a4c5db02d56ecc4c5bf34007208d5b887185865"
        );
    }

    #[test]
    fn rfc5869_case_3_empty_salt_and_info() {
        let okm = hkdf(&[0x0b; 22], b"", b"", 42).unwrap();
        assert_eq!(
            hex::encode(okm),
            "8da4e775a563c18f715f802a063c5a31b8a11f5c5ee1879ec3454e5f3c738d2d9d201395faa4b61a96c8"
        );
    }

    #[test]
    fn deterministic_and_exact_length() {
        let a = hkdf(b"ikm", b"salt", b"info", 100).unwrap();
        assert_eq!(a, hkdf(b"ikm", b"salt", b"info", 100).unwrap());
        assert_eq!(a.len(), 100);
        assert_eq!(
            hkdf(b"ikm", b"salt", b"info", HKDF_MAX_OUTPUT)
                .unwrap()
                .len(),
            8160
        );
    }

    #[test]
    fn rejects_oversized_output() {
        assert_eq!(
            hkdf(b"k", b"", b"", 8161),
            Err(CryptoError::OutputTooLong(8161))
        );
    }
}
