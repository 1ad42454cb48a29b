// SPDX-License-Identifier: Apache-2.0

//! Golden vectors for the wire formats and license signatures, and the
//! threat traceability matrix check.
//!
//! `transport.golden` lines: `<name> <nonce|license> <ok|ErrorCode> <hex>`.
//! `signatures.golden` lines: `<scheme> <payload hex> <public key hex> <signature hex> <accept|reject>`.
//! Blank lines and lines starting with `#` are ignored.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::block::NonceValue;
use crate::crypto::{
    sign_license, verify_signature, LicensePayload, PublicKey, SchemeId, SigningKeypair,
};
use crate::ids::{BatchId, BlockId, BlockKind};
use crate::transport::{
    decode_license_bundle, decode_nonce_bundle, encode_license_bundle, encode_nonce_bundle,
    LicenseBundle, LicenseRecord, NonceBundle, NonceRecord,
};
use crate::variants::BitChallengeNonce;

pub const TRANSPORT_FILE: &str = "transport.golden";
pub const SIGNATURES_FILE: &str = "signatures.golden";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BundleType {
    Nonce,
    License,
}

impl fmt::Display for BundleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BundleType::Nonce => "nonce",
            BundleType::License => "license",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportVector {
    pub name: String,
    pub bundle: BundleType,
    /// `ok` or a [`crate::transport::WireError::code`].
    pub expect: String,
    pub bytes: Vec<u8>,
}

fn wide(index: u32, kind: BlockKind, fill: u8) -> NonceRecord {
    NonceRecord {
        index,
        kind,
        value: NonceValue::Wide(std::array::from_fn(|i| fill.wrapping_add(i as u8))),
    }
}

fn vector(name: &str, bundle: BundleType, expect: &str, bytes: Vec<u8>) -> TransportVector {
    TransportVector {
        name: name.into(),
        bundle,
        expect: expect.into(),
        bytes,
    }
}

/// The canonical transport vectors.
pub fn transport_vectors() -> Vec<TransportVector> {
    use BundleType::*;
    let enc_n = |b: &NonceBundle| encode_nonce_bundle(b).expect("encodable");
    let enc_l = |b: &LicenseBundle| encode_license_bundle(b).expect("encodable");

    let empty = NonceBundle {
        chip_id: 0x0102_0304_0506_0708,
        records: vec![],
    };
    let mixed = NonceBundle {
        chip_id: 42,
        records: vec![
            wide(0, BlockKind::EcdsaTrng, 0x10),
            wide(1, BlockKind::CounterNonce, 0x20),
            wide(2, BlockKind::SymmetricMac, 0x30),
            NonceRecord {
                index: 3,
                kind: BlockKind::PresharedBits,
                value: NonceValue::Positions(BitChallengeNonce {
                    positions: vec![1, 500, 9999],
                }),
            },
        ],
    };
    let lic = LicenseBundle {
        chip_id: 42,
        batch: BatchId(7),
        records: vec![
            LicenseRecord {
                index: 0,
                nonce_echo: [0xab; 16],
                grant_ops: 1000,
                expiry: 86_400,
                proof: vec![1, 2, 3, 4],
            },
            LicenseRecord {
                index: 3,
                nonce_echo: [0; 16],
                grant_ops: 5,
                expiry: u64::MAX,
                proof: vec![],
            },
        ],
    };
    let lic_empty = LicenseBundle {
        chip_id: 1,
        batch: BatchId(1),
        records: vec![],
    };

    let mixed_bytes = enc_n(&mixed);
    let lic_bytes = enc_l(&lic);
    let mut bad_magic = mixed_bytes.clone();
    bad_magic[0] ^= 0xff;
    let mut bad_version = mixed_bytes.clone();
    bad_version[4] = 2;
    let mut count_high = mixed_bytes.clone();
    count_high[14] = 5;
    let mut bad_kind = mixed_bytes.clone();
    bad_kind[19] = 9;
    let mut trailing = enc_l(&lic_empty);
    trailing.push(0);
    let mut lic_bad_magic = lic_bytes.clone();
    lic_bad_magic[3] = b'X';

    vec![
        vector("nonce_empty", Nonce, "ok", enc_n(&empty)),
        vector("nonce_mixed", Nonce, "ok", mixed_bytes.clone()),
        vector("nonce_bad_magic", Nonce, "BadMagic", bad_magic),
        vector("nonce_bad_version", Nonce, "BadVersion", bad_version),
        vector(
            "nonce_truncated",
            Nonce,
            "Truncated",
            mixed_bytes[..mixed_bytes.len() - 3].to_vec(),
        ),
        vector("nonce_count_high", Nonce, "CountMismatch", count_high),
        vector("nonce_bad_kind", Nonce, "BadKind", bad_kind),
        vector("license_empty", License, "ok", enc_l(&lic_empty)),
        vector("license_two", License, "ok", lic_bytes.clone()),
        vector(
            "license_truncated",
            License,
            "Truncated",
            lic_bytes[..lic_bytes.len() - 1].to_vec(),
        ),
        vector("license_trailing", License, "CountMismatch", trailing),
        vector("license_bad_magic", License, "BadMagic", lic_bad_magic),
    ]
}

pub fn render_transport_golden() -> String {
    let mut out = String::from("# name bundle expect hex\n");
    for v in transport_vectors() {
        out.push_str(&format!(
            "{} {} {} {}\n",
            v.name,
            v.bundle,
            v.expect,
            hex::encode(&v.bytes)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureVector {
    pub scheme: SchemeId,
    pub payload: Vec<u8>,
    pub public: Vec<u8>,
    pub signature: Vec<u8>,
    pub accept: bool,
}

/// Deterministic signatures over fixed license payloads, plus tampered copies.
pub fn signature_vectors() -> Vec<SignatureVector> {
    let mut out = Vec::new();
    for (i, scheme) in SchemeId::ALL.into_iter().enumerate() {
        let kp = SigningKeypair::generate(scheme, 1000 + i as u64);
        for (j, grant) in [1u32, 1000].into_iter().enumerate() {
            let payload = LicensePayload {
                batch: BatchId(1),
                block: BlockId::new(42, j as u32),
                nonce_echo: [j as u8; 16],
                grant_ops: grant,
                expiry: 86_400,
            }
            .encode()
            .to_vec();
            let sig = sign_license(&kp, &payload).expect("private key");
            let public = kp.public_part().bytes.clone();
            let mut tampered = payload.clone();
            tampered[20] ^= 1;
            let mut bad_sig = sig.clone();
            bad_sig[0] ^= 0x80;
            out.push(SignatureVector {
                scheme,
                payload: payload.clone(),
                public: public.clone(),
                signature: sig.clone(),
                accept: true,
            });
            out.push(SignatureVector {
                scheme,
                payload: tampered,
                public: public.clone(),
                signature: sig,
                accept: false,
            });
            out.push(SignatureVector {
                scheme,
                payload,
                public,
                signature: bad_sig,
                accept: false,
            });
        }
    }
    out
}

pub fn render_signatures_golden() -> String {
    let mut out = String::from("# scheme payload public signature verdict\n");
    for v in signature_vectors() {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            v.scheme,
            hex::encode(&v.payload),
            hex::encode(&v.public),
            hex::encode(&v.signature),
            if v.accept { "accept" } else { "reject" }
        ));
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{}:{line}: {message}", file.display())]
pub struct GoldenError {
    pub file: PathBuf,
    pub line: usize,
    pub message: String,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Decodes each transport vector, checks the expected outcome and that
/// successful decodes re-encode byte-exactly.
pub fn verify_transport_text(text: &str) -> Result<usize, (usize, String)> {
    let mut n = 0;
    for (line, l) in content_lines(text) {
        let f: Vec<&str> = l.split_whitespace().collect();
        let [name, bundle, expect, hexs] = f[..] else {
            return Err((line, format!("expected 4 fields, found {}", f.len())));
        };
        let bytes = hex::decode(hexs).map_err(|e| (line, format!("{name}: bad hex: {e}")))?;
        let outcome = match bundle {
            "nonce" => decode_nonce_bundle(&bytes).map(|b| encode_nonce_bundle(&b)),
            "license" => decode_license_bundle(&bytes).map(|b| encode_license_bundle(&b)),
            other => return Err((line, format!("{name}: unknown bundle type `{other}`"))),
        };
        match (outcome, expect) {
            (Ok(Ok(re)), "ok") if re == bytes => {}
            (Ok(Ok(_)), "ok") => return Err((line, format!("{name}: re-encoding differs"))),
            (Ok(Err(e)), _) => return Err((line, format!("{name}: re-encoding failed: {e}"))),
            (Ok(_), want) => return Err((line, format!("{name}: decoded, expected {want}"))),
            (Err(e), want) if e.code() == want => {}
            (Err(e), want) => {
                return Err((line, format!("{name}: got {}, expected {want}", e.code())))
            }
        }
        n += 1;
    }
    Ok(n)
}

pub fn verify_signatures_text(text: &str) -> Result<usize, (usize, String)> {
    let mut n = 0;
    for (line, l) in content_lines(text) {
        let f: Vec<&str> = l.split_whitespace().collect();
        let [scheme, payload, public, sig, verdict] = f[..] else {
            return Err((line, format!("expected 5 fields, found {}", f.len())));
        };
        let scheme: SchemeId = scheme.parse().map_err(|e| (line, format!("{e}")))?;
        let dec = |s: &str| hex::decode(s).map_err(|e| (line, format!("bad hex: {e}")));
        let pk = PublicKey {
            scheme,
            bytes: dec(public)?,
        };
        let want = match verdict {
            "accept" => true,
            "reject" => false,
            other => return Err((line, format!("unknown verdict `{other}`"))),
        };
        if verify_signature(&pk, &dec(payload)?, &dec(sig)?) != want {
            return Err((line, format!("{scheme} signature does not {verdict}")));
        }
        n += 1;
    }
    Ok(n)
}

type LineCheck = fn(&str) -> Result<usize, (usize, String)>;
type GoldenCheck = (&'static str, LineCheck, fn() -> String);

/// Checks both golden files in `dir`: each line on its own, and the file as
/// a whole against freshly generated vectors. The error names the file.
pub fn verify_goldens(dir: &Path) -> Result<usize, GoldenError> {
    let checks: [GoldenCheck; 2] = [
        (
            TRANSPORT_FILE,
            verify_transport_text,
            render_transport_golden,
        ),
        (
            SIGNATURES_FILE,
            verify_signatures_text,
            render_signatures_golden,
        ),
    ];
    let mut total = 0;
    for (name, verify, render) in checks {
        let file = dir.join(name);
        let fail = |line, message| GoldenError {
            file: file.clone(),
            line,
            message,
        };
        let text = fs::read_to_string(&file).map_err(|e| fail(0, e.to_string()))?;
        total += verify(&text).map_err(|(l, m)| fail(l, m))?;
        let fresh = render();
        if let Some((i, _)) = text
            .lines()
            .zip(fresh.lines())
            .enumerate()
            .find(|(_, (a, b))| a.trim() != b.trim())
        {
            return Err(fail(i + 1, "differs from regenerated vectors".into()));
        }
        if text.lines().count() != fresh.lines().count() {
            return Err(fail(
                0,
                "vector count differs from regenerated vectors".into(),
            ));
        }
    }
    Ok(total)
}

/// Writes freshly generated golden files into `dir`.
pub fn regenerate_goldens(dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(TRANSPORT_FILE), render_transport_golden())?;
    fs::write(dir.join(SIGNATURES_FILE), render_signatures_golden())
}

/// Threat rows the traceability matrix must cover, with their group.
pub const THREAT_ROWS: [(&str, &str); 11] = [
    ("Logical Flaws", "hardware"),
    ("License Reuse", "hardware"),
    ("Execution Bypass", "hardware"),
    ("Voltage or Laser Glitching", "hardware"),
    ("Physical Tampering", "hardware"),
    ("Secret Extraction", "hardware"),
    ("Supply Chain Compromise", "hardware"),
    ("Cryptographic Vulnerabilities", "hardware"),
    ("Authorization Key Deletion", "external"),
    ("Authorization Key Theft", "external"),
    ("Network Disruption", "external"),
];

/// Campaign and check names a matrix row may cite.
pub const KNOWN_CHECKS: [&str; 11] = [
    "model_check",
    "replay_campaign",
    "audit_bypass",
    "glitch_campaign",
    "edit_campaign",
    "extraction_campaign",
    "planted_flaw_control",
    "forgery_campaign",
    "key_deletion_scenario",
    "key_theft_campaign",
    "outage_scenario",
];

/// Validates a markdown matrix: every threat row exactly once, in the
/// right group, citing a known check and at least one test.
pub fn validate_traceability(text: &str) -> Result<(), String> {
    let rows: Vec<Vec<String>> = text
        .lines()
        .filter(|l| l.trim_start().starts_with('|'))
        .map(|l| {
            l.trim()
                .trim_matches('|')
                .split('|')
                .map(|c| c.trim().to_owned())
                .collect()
        })
        .filter(|cells: &Vec<String>| {
            cells
                .first()
                .is_some_and(|c| !c.is_empty() && !c.starts_with('-') && c != "Threat")
        })
        .collect();
    for (threat, group) in THREAT_ROWS {
        let hits: Vec<&Vec<String>> = rows.iter().filter(|r| r[0] == threat).collect();
        match hits.as_slice() {
            [row] => {
                if row.len() < 4 {
                    return Err(format!(
                        "`{threat}` row has {} columns, expected 4",
                        row.len()
                    ));
                }
                if row[1] != group {
                    return Err(format!(
                        "`{threat}` is listed as {}, expected {group}",
                        row[1]
                    ));
                }
                let check = row[2].trim_matches('`');
                if !KNOWN_CHECKS.contains(&check) {
                    return Err(format!("`{threat}` cites unknown check `{check}`"));
                }
                if row[3].is_empty() {
                    return Err(format!("`{threat}` cites no test"));
                }
            }
            [] => return Err(format!("threat `{threat}` missing")),
            _ => return Err(format!("threat `{threat}` listed {} times", hits.len())),
        }
    }
    if let Some(extra) = rows
        .iter()
        .find(|r| !THREAT_ROWS.iter().any(|(t, _)| *t == r[0]))
    {
        return Err(format!("unknown threat row `{}`", extra[0]));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixtures() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
    }

    #[test]
    fn generated_vectors_verify() {
        assert_eq!(verify_transport_text(&render_transport_golden()), Ok(12));
        assert_eq!(verify_signatures_text(&render_signatures_golden()), Ok(12));
    }

    #[test]
    fn generation_is_stable() {
        assert_eq!(render_transport_golden(), render_transport_golden());
        assert_eq!(render_signatures_golden(), render_signatures_golden());
    }

    #[test]
    fn empty_nonce_vector_is_fifteen_bytes() {
        let v = &transport_vectors()[0];
        assert_eq!(
            hex::encode(&v.bytes),
            "4e42444c01010203040506070800 00".replace(' ', "")
        );
    }

    #[test]
    fn bundled_goldens_pass() {
        assert_eq!(verify_goldens(&fixtures().join("goldens")), Ok(24));
    }

    #[test]
    fn corrupted_vector_names_file() {
        let dir = std::env::temp_dir().join(format!("offswitch-goldens-{}", std::process::id()));
        regenerate_goldens(&dir).unwrap();
        let path = dir.join(SIGNATURES_FILE);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replacen(" accept", " reject", 1);
        fs::write(&path, text).unwrap();
        let err = verify_goldens(&dir).unwrap_err();
        assert!(err.file.ends_with(SIGNATURES_FILE));
        assert_eq!(err.line, 2);
        let t = dir.join(TRANSPORT_FILE);
        let text = fs::read_to_string(&t)
            .unwrap()
            .replacen(" ok 4e42", " ok 4e43", 1);
        fs::write(&t, text).unwrap();
        assert!(verify_goldens(&dir)
            .unwrap_err()
            .file
            .ends_with(TRANSPORT_FILE));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn bundled_traceability_matrix_is_complete() {
        let text = fs::read_to_string(fixtures().join("traceability.md")).unwrap();
        validate_traceability(&text).unwrap();
    }

    #[test]
    fn traceability_rejects_gaps_and_duplicates() {
        let text = fs::read_to_string(fixtures().join("traceability.md")).unwrap();
        let missing: String = text
            .lines()
            .filter(|l| !l.contains("| Network Disruption"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(validate_traceability(&missing)
            .unwrap_err()
            .contains("missing"));
        let dup_line = text
            .lines()
            .find(|l| l.contains("| License Reuse"))
            .unwrap();
        let dup = format!("{text}{dup_line}\n");
        assert!(validate_traceability(&dup).unwrap_err().contains("2 times"));
    }
}
