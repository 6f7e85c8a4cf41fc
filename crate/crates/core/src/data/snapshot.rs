//! `OLC1` corpus snapshots.
//!
//! Layout (little-endian): magic `OLC1`, version u16, config digest (string),
//! mode u8 (0 tokens, 1 pairs), vocab table (u32 code points), split counts,
//! the train batches, validation and test sets, then the SHA-256 trailer.
//! Token sequences are length-prefixed u32 arrays; pairs are `x` (f64 × dim)
//! followed by `y`.

use std::fs;
use std::path::Path;

use super::{Batch, Corpus, Pair, Samples, SplitCounts, Vocab};
use crate::codec::{write_atomic, Decoder, Encoder, Tagged};
use crate::error::{Error, Result};

pub const CORPUS_MAGIC: &[u8; 4] = b"OLC1";
pub const CORPUS_VERSION: u16 = 1;

fn put_samples(enc: &mut Encoder, samples: &Samples) {
    match samples {
        Samples::Tokens(seqs) => {
            enc.usize(seqs.len());
            for s in seqs {
                enc.u32s(s);
            }
        }
        Samples::Pairs(pairs) => {
            enc.usize(pairs.len());
            enc.usize(pairs.first().map_or(0, |p| p.x.len()));
            for p in pairs {
                enc.f64s_fixed(&p.x);
                enc.f64(p.y);
            }
        }
    }
}

fn get_samples(dec: &mut Decoder<'_>, tokens: bool) -> Result<Samples> {
    let n = dec.usize()?;
    if n > dec.remaining() {
        return Err(Error::Corrupt("sample count exceeds data".into()));
    }
    if tokens {
        Ok(Samples::Tokens((0..n).map(|_| dec.u32s()).collect::<Result<_>>()?))
    } else {
        let dim = dec.usize()?;
        let pairs = (0..n)
            .map(|_| {
                Ok(Pair {
                    x: dec.f64s_fixed(dim)?,
                    y: dec.f64()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Samples::Pairs(pairs))
    }
}

pub fn encode_corpus(corpus: &Corpus, config_digest: &str) -> Vec<u8> {
    let mut enc = Encoder::new(CORPUS_MAGIC, CORPUS_VERSION);
    enc.str(config_digest);
    let tokens = corpus.is_language_model();
    enc.u8(if tokens { 0 } else { 1 });
    let cps: Vec<u32> = corpus.vocab.chars().iter().map(|&c| c as u32).collect();
    enc.u32s(&cps);
    enc.usize(corpus.counts.train);
    enc.usize(corpus.counts.validation);
    enc.usize(corpus.counts.test);
    enc.usize(corpus.train.len());
    for b in &corpus.train {
        enc.usize(b.id);
        put_samples(&mut enc, &b.samples);
    }
    put_samples(&mut enc, &corpus.validation);
    put_samples(&mut enc, &corpus.test);
    enc.finish()
}

pub fn decode_corpus(bytes: &[u8]) -> Result<Tagged<Corpus>> {
    let mut dec = Decoder::open(bytes, CORPUS_MAGIC, CORPUS_VERSION)?;
    let config_digest = dec.str()?;
    let tokens = match dec.u8()? {
        0 => true,
        1 => false,
        m => return Err(Error::Corrupt(format!("unknown corpus mode {m}"))),
    };
    let chars = dec
        .u32s()?
        .into_iter()
        .map(|cp| char::from_u32(cp).ok_or_else(|| Error::Corrupt(format!("bad code point {cp}"))))
        .collect::<Result<Vec<_>>>()?;
    let counts = SplitCounts {
        train: dec.usize()?,
        validation: dec.usize()?,
        test: dec.usize()?,
    };
    let n_batches = dec.usize()?;
    if n_batches > dec.remaining() {
        return Err(Error::Corrupt("batch count exceeds data".into()));
    }
    let mut train = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let id = dec.usize()?;
        train.push(Batch {
            id,
            samples: get_samples(&mut dec, tokens)?,
        });
    }
    let validation = get_samples(&mut dec, tokens)?;
    let test = get_samples(&mut dec, tokens)?;
    dec.expect_end()?;
    Ok(Tagged {
        value: Corpus {
            train,
            validation,
            test,
            vocab: Vocab::from_chars(chars),
            counts,
        },
        config_digest,
    })
}

pub fn save_corpus(path: &Path, corpus: &Corpus, config_digest: &str) -> Result<()> {
    write_atomic(path, &encode_corpus(corpus, config_digest))
}

pub fn load_corpus(path: &Path) -> Result<Tagged<Corpus>> {
    decode_corpus(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ingest_texts, synth_regression, synth_text_documents, IngestConfig, RegressionSpec};

    #[test]
    fn lm_corpus_roundtrips() {
        let docs = synth_text_documents(2, 120, 4);
        let corpus = ingest_texts(&docs, &IngestConfig { batches: 4, ..Default::default() }).unwrap();
        let back = decode_corpus(&encode_corpus(&corpus, "abc")).unwrap();
        assert_eq!(back.value, corpus);
        assert_eq!(back.config_digest, "abc");
    }

    #[test]
    fn regression_corpus_roundtrips_and_rejects_corruption() {
        let corpus = synth_regression(&RegressionSpec::new(1, 80, 3, 4)).unwrap();
        let mut bytes = encode_corpus(&corpus, "");
        assert_eq!(decode_corpus(&bytes).unwrap().value, corpus);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(decode_corpus(&bytes), Err(Error::Corrupt(_))));
    }
}
