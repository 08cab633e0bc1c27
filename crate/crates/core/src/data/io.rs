//! Line-oriented corpus and entity-pool files.
//!
//! Corpus: one JSON object per line,
//! `{"id", "tokens":[{"surface","lang"}], "durations":[..], "features":"<base64 LE f64>", "shape":[T, d_feat]}`.
//! Entity pool: one phrase per line, `L1:` or `L2:` followed by space-separated surfaces.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::corpus::Utterance;
use super::vocab::{Lang, Phrase, Vocabulary};
use crate::error::{Result, XcbError};
use crate::numerics::Tensor;

#[derive(Serialize, Deserialize)]
struct TokenRecord {
    surface: String,
    lang: Lang,
}

#[derive(Serialize, Deserialize)]
struct UtteranceRecord {
    id: String,
    tokens: Vec<TokenRecord>,
    durations: Vec<usize>,
    features: String,
    shape: Vec<usize>,
}

fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode_f64s(s: &str) -> std::result::Result<Vec<f64>, String> {
    let bytes = STANDARD.decode(s).map_err(|e| format!("bad base64: {e}"))?;
    if bytes.len() % 8 != 0 {
        return Err(format!("{} feature bytes is not a multiple of 8", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn serialize_corpus<W: Write>(utts: &[Utterance], mut out: W) -> Result<()> {
    for u in utts {
        let rec = UtteranceRecord {
            id: u.id.clone(),
            tokens: u
                .tokens
                .iter()
                .map(|t| TokenRecord {
                    surface: t.surface.clone(),
                    lang: t.lang,
                })
                .collect(),
            durations: u.durations.clone(),
            features: encode_f64s(u.features.data()),
            shape: u.features.shape().to_vec(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn parse_record(line: &str, vocab: &Vocabulary) -> std::result::Result<Utterance, String> {
    let rec: UtteranceRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let mut tokens = Vec::with_capacity(rec.tokens.len());
    for t in &rec.tokens {
        let tok = vocab
            .lookup(&t.surface)
            .ok_or_else(|| format!("unknown token {:?}", t.surface))?;
        if tok.lang != t.lang {
            return Err(format!("token {:?} tagged {} but vocabulary says {}", t.surface, t.lang, tok.lang));
        }
        tokens.push(tok.clone());
    }
    if rec.durations.len() != tokens.len() {
        return Err(format!("{} durations for {} tokens", rec.durations.len(), tokens.len()));
    }
    let frames: usize = rec.durations.iter().sum();
    if rec.shape.len() != 2 || rec.shape[0] != frames {
        return Err(format!("shape {:?} disagrees with {frames} frames", rec.shape));
    }
    let data = decode_f64s(&rec.features)?;
    let features = Tensor::new(rec.shape, data).map_err(|e| e.to_string())?;
    Ok(Utterance {
        id: rec.id,
        tokens,
        features,
        durations: rec.durations,
    })
}

/// Parses a corpus stream; errors carry the 1-based line number.
pub fn parse_corpus<R: Read>(input: R, vocab: &Vocabulary) -> Result<Vec<Utterance>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let utt = parse_record(&line, vocab).map_err(|msg| XcbError::Parse { line: i + 1, msg })?;
        out.push(utt);
    }
    Ok(out)
}

pub fn write_corpus_file(path: &Path, utts: &[Utterance]) -> Result<()> {
    serialize_corpus(utts, BufWriter::new(File::create(path)?))
}

pub fn read_corpus_file(path: &Path, vocab: &Vocabulary) -> Result<Vec<Utterance>> {
    parse_corpus(File::open(path)?, vocab)
}

pub fn serialize_entity_pool<W: Write>(pool: &[Phrase], vocab: &Vocabulary, mut out: W) -> Result<()> {
    for p in pool {
        let surfaces: Vec<&str> = p.tokens.iter().map(|&id| vocab.token(id).surface.as_str()).collect();
        writeln!(out, "{}:{}", p.lang, surfaces.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

pub fn parse_entity_pool<R: Read>(input: R, vocab: &Vocabulary) -> Result<Vec<Phrase>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| XcbError::Parse { line: i + 1, msg };
        let (tag, rest) = line.split_once(':').ok_or_else(|| err("missing language prefix".into()))?;
        let lang = match tag {
            "L1" => Lang::L1,
            "L2" => Lang::L2,
            other => return Err(err(format!("unknown language prefix {other:?}"))),
        };
        let mut tokens = Vec::new();
        for s in rest.split_whitespace() {
            let tok = vocab.lookup(s).ok_or_else(|| err(format!("unknown token {s:?}")))?;
            if tok.lang != lang {
                return Err(err(format!("token {s:?} is not {lang}")));
            }
            tokens.push(tok.id);
        }
        if tokens.is_empty() {
            return Err(err("empty phrase".into()));
        }
        out.push(Phrase { lang, tokens });
    }
    Ok(out)
}

pub fn write_entity_pool_file(path: &Path, pool: &[Phrase], vocab: &Vocabulary) -> Result<()> {
    serialize_entity_pool(pool, vocab, BufWriter::new(File::create(path)?))
}

pub fn read_entity_pool_file(path: &Path, vocab: &Vocabulary) -> Result<Vec<Phrase>> {
    parse_entity_pool(File::open(path)?, vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, CorpusConfig};

    #[test]
    fn empty_corpus_round_trip() {
        let vocab = Vocabulary::synthetic(4, 4);
        let mut buf = Vec::new();
        serialize_corpus(&[], &mut buf).unwrap();
        assert!(buf.is_empty());
        assert!(parse_corpus(buf.as_slice(), &vocab).unwrap().is_empty());
    }

    #[test]
    fn truncated_line_names_the_line() {
        let cfg = CorpusConfig {
            n_train: 3,
            n_test: 0,
            ..CorpusConfig::default()
        };
        let c = generate_corpus(&cfg).unwrap();
        let mut buf = Vec::new();
        serialize_corpus(&c.train, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let cut = &lines[1][..lines[1].len() / 2];
        lines[1] = cut;
        let broken = lines.join("\n");
        match parse_corpus(broken.as_bytes(), &cfg.vocabulary()) {
            Err(XcbError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn pool_round_trip_and_errors() {
        let cfg = CorpusConfig {
            n_train: 0,
            n_test: 0,
            ..CorpusConfig::default()
        };
        let c = generate_corpus(&cfg).unwrap();
        let vocab = cfg.vocabulary();
        let mut buf = Vec::new();
        serialize_entity_pool(&c.entity_pool, &vocab, &mut buf).unwrap();
        assert_eq!(parse_entity_pool(buf.as_slice(), &vocab).unwrap(), c.entity_pool);
        assert!(parse_entity_pool("L3:x".as_bytes(), &vocab).is_err());
        assert!(parse_entity_pool("L2:".as_bytes(), &vocab).is_err());
    }
}
