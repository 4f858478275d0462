//! On-disk formats: FEAT feature files, vocabularies, manifests,
//! configuration files and checkpoints.

use std::fs;
use std::path::{Path, PathBuf};

use uconv_core::features::{normalize, FeatureMatrix, FEATURE_DIM};
use uconv_core::model::{Encoder, EncoderConfig};
use uconv_core::trainer::Utterance;
use uconv_core::Real;

use crate::audio::{read_wav, LogMel};
use crate::{Error, Result};

pub const FEAT_MAGIC: &[u8; 4] = b"FEAT";

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `FEAT`, u32 frames, u32 dim (80), then frames·dim little-endian f32.
pub fn encode_feat(feats: &FeatureMatrix) -> Vec<u8> {
    let data = feats.frames().data();
    let mut out = Vec::with_capacity(12 + 4 * data.len());
    out.extend_from_slice(FEAT_MAGIC);
    out.extend_from_slice(&(feats.len() as u32).to_le_bytes());
    out.extend_from_slice(&(FEATURE_DIM as u32).to_le_bytes());
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_feat(path: &Path, bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < 12 || &bytes[..4] != FEAT_MAGIC {
        return Err(Error::format(path, "missing FEAT header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (frames, dim) = (word(4), word(8));
    if dim != FEATURE_DIM {
        return Err(Error::format(
            path,
            format!("feature dimension {dim}, expected {FEATURE_DIM}"),
        ));
    }
    if frames == 0 {
        return Err(Error::format(path, "zero frames"));
    }
    let body = &bytes[12..];
    if body.len() != 4 * frames * dim {
        return Err(Error::format(
            path,
            format!(
                "{} payload bytes for {frames}x{dim} frames, expected {}",
                body.len(),
                4 * frames * dim
            ),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok(FeatureMatrix::from_rows(frames, data)?)
}

pub fn read_feat(path: &Path) -> Result<FeatureMatrix> {
    decode_feat(path, &read(path)?)
}

pub fn write_feat(path: &Path, feats: &FeatureMatrix) -> Result<()> {
    write(path, &encode_feat(feats))
}

/// Features of a `.wav` file (log-mel) or anything else read as FEAT,
/// normalized per utterance.
pub fn load_features(path: &Path, analyser: &LogMel) -> Result<FeatureMatrix> {
    let is_wav = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    let raw = if is_wav {
        analyser.extract(&read_wav(path)?)?
    } else {
        read_feat(path)?
    };
    Ok(normalize(&raw))
}

/// Token list where line `n` names label `n`; label 0 is the blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::Invalid(
                "vocabulary needs the blank and at least one token".into(),
            ));
        }
        Ok(Self { tokens })
    }

    /// `<blank>` followed by `t1`..`t{n-1}`.
    pub fn numbered(size: usize) -> Result<Self> {
        Self::new(
            std::iter::once("<blank>".to_string())
                .chain((1..size).map(|i| format!("t{i}")))
                .collect(),
        )
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::format(
                    path,
                    format!("line {}: token must be non-empty without whitespace", i + 1),
                ));
            }
            if tokens[..i].contains(t) {
                return Err(Error::format(path, format!("line {}: duplicate token '{t}'", i + 1)));
            }
        }
        Self::new(tokens)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(path, &read_text(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = self.tokens.join("\n");
        out.push('\n');
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write(path, self.to_text().as_bytes())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, label: usize) -> Option<&str> {
        self.tokens.get(label).map(String::as_str)
    }

    /// Whitespace-separated tokens to labels; the blank token is rejected.
    pub fn encode(&self, text: &str) -> std::result::Result<Vec<usize>, String> {
        text.split_whitespace()
            .map(|w| match self.tokens.iter().position(|t| t == w) {
                Some(0) => Err(format!("transcript contains the blank token '{w}'")),
                Some(i) => Ok(i),
                None => Err(format!("token '{w}' is not in the vocabulary")),
            })
            .collect()
    }

    /// Labels joined by single spaces.
    pub fn decode(&self, labels: &[usize]) -> String {
        labels
            .iter()
            .map(|&l| self.token(l).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// One manifest row: features (WAV or FEAT) and a transcript file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub features: PathBuf,
    pub transcript: PathBuf,
}

/// Tab-separated `features<TAB>transcript` rows; relative paths resolve
/// against the manifest's directory. Blank lines and `#` lines are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next(), cols.next()) {
            (Some(f), Some(t), None) if !f.is_empty() && !t.is_empty() => entries.push(ManifestEntry {
                features: base.join(f),
                transcript: base.join(t),
            }),
            _ => {
                return Err(Error::format(
                    path,
                    format!("line {}: expected two tab-separated paths", i + 1),
                ))
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::format(path, "manifest lists no utterances"));
    }
    Ok(entries)
}

/// Resolves a dataset argument: a manifest file, or a directory holding
/// `manifest.tsv`.
pub fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.tsv")
    } else {
        data.to_path_buf()
    }
}

/// Loads every manifest row into normalized features and labels.
pub fn load_dataset(manifest: &Path, vocab: &Vocabulary) -> Result<Vec<Utterance>> {
    let analyser = LogMel::new();
    read_manifest(manifest)?
        .iter()
        .map(|e| {
            let features = load_features(&e.features, &analyser)?.into_tensor();
            let text = read_text(&e.transcript)?;
            let labels = vocab.encode(&text).map_err(|r| Error::format(&e.transcript, r))?;
            Ok(Utterance { features, labels })
        })
        .collect()
}

/// Configuration file in `key = value` form.
pub fn read_config(path: &Path) -> Result<EncoderConfig> {
    let text = read_text(path)?;
    EncoderConfig::parse(&text).map_err(|source| Error::Config {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_config(path: &Path, config: &EncoderConfig) -> Result<()> {
    write(path, config.to_text().as_bytes())
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<Encoder<T>> {
    Ok(Encoder::from_checkpoint(&read(path)?)?)
}

pub fn write_checkpoint<T: Real>(path: &Path, encoder: &Encoder<T>) -> Result<()> {
    write(path, &encoder.to_checkpoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use uconv_core::Tensor;

    #[test]
    fn feat_round_trip_at_f32_precision() {
        let data: Vec<f64> = (0..3 * FEATURE_DIM).map(|i| i as f64 * 0.25 - 7.0).collect();
        let feats = FeatureMatrix::from_rows(3, data.clone()).unwrap();
        let bytes = encode_feat(&feats);
        assert_eq!(&bytes[..4], b"FEAT");
        assert_eq!(bytes.len(), 12 + 3 * FEATURE_DIM * 4);
        let back = decode_feat(Path::new("x"), &bytes).unwrap();
        assert_eq!(back.frames().data(), &data[..]);
    }

    #[test]
    fn feat_rejects_bad_headers() {
        let p = Path::new("x.feat");
        assert!(matches!(decode_feat(p, b"FEA"), Err(Error::Format { .. })));
        let mut bytes = encode_feat(&FeatureMatrix::new(Tensor::zeros(&[2, FEATURE_DIM])).unwrap());
        bytes[8] = 40;
        assert!(decode_feat(p, &bytes).unwrap_err().to_string().contains("dimension 40"));
        let mut bytes = encode_feat(&FeatureMatrix::new(Tensor::zeros(&[2, FEATURE_DIM])).unwrap());
        bytes.pop();
        assert!(decode_feat(p, &bytes).unwrap_err().to_string().contains("payload"));
    }

    #[test]
    fn vocabulary_encode_decode() {
        let v = Vocabulary::parse(Path::new("v"), "<blank>\na\nb\nc\n").unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.encode(" a c  b\n").unwrap(), vec![1, 3, 2]);
        assert!(v.encode("a <blank>").is_err());
        assert!(v.encode("d").is_err());
        assert_eq!(v.decode(&[3, 1]), "c a");
        assert_eq!(v.decode(&[]), "");
        assert!(Vocabulary::parse(Path::new("v"), "<blank>\na\na\n").is_err());
        assert!(Vocabulary::parse(Path::new("v"), "<blank>\n\nb\n").is_err());
        assert_eq!(Vocabulary::parse(Path::new("v"), &v.to_text()).unwrap(), v);
    }
}
