//! File formats: binary latent sequences (`.frl`), binary weights (`.frw`)
//! and line-oriented token streams.
//!
//! Both binary formats are little-endian with 32-bit fields throughout.
//!
//! `.frl`: `"FRERESL1"`, then `T, H, W, d` as `u32` and `fps` as `f32`
//! (0 means unknown), then `T*H*W*d` floats in frame/row/col/dim order.
//!
//! `.frw`: `"FRERESW1"`, then `version = 1` and `d` as `u32`, then `ln_eps`,
//! `g_raw`, `g_freq` as `f32`, then `W_Q`, `W_K`, `W_V`, the adapter (each
//! `d*d`, row-major), the four type embeddings in raw/dyn/sum/static order,
//! and the LayerNorm scale and shift (each `d`).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::absorber::AbsorberWeights;
use crate::error::{FreresError, Result};
use crate::fusion::ModelWeights;
use crate::latent::{Grid, GridCoord, LatentSequence, Token, TokenKind, TokenOrigin, TokenStream};

pub const LATENT_MAGIC: &[u8; 8] = b"FRERESL1";
pub const WEIGHTS_MAGIC: &[u8; 8] = b"FRERESW1";
pub const WEIGHTS_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

/// Little-endian cursor over a byte buffer.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().expect("4 bytes"))
    }

    fn f32(&mut self) -> f32 {
        f32::from_le_bytes(self.take(4).try_into().expect("4 bytes"))
    }

    fn f32s(&mut self, n: usize) -> Vec<f32> {
        self.take(4 * n)
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect()
    }
}

fn check_magic(bytes: &[u8], magic: &[u8; 8]) -> Result<()> {
    if bytes.len() < magic.len() || &bytes[..8] != magic {
        let found = &bytes[..bytes.len().min(8)];
        return Err(FreresError::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(FreresError::TruncatedFile {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FreresError::shape(format!(
            "{} trailing bytes after the declared payload",
            bytes.len() - expected
        )));
    }
    Ok(())
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| FreresError::shape(format!("{what} {v} does not fit in u32")))
}

pub fn latents_to_bytes(seq: &LatentSequence) -> Result<Vec<u8>> {
    seq.validate()?;
    let grid = seq.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * seq.num_frames() * grid.cells() * seq.dim());
    out.extend_from_slice(LATENT_MAGIC);
    for (v, what) in [
        (seq.num_frames(), "frame count"),
        (grid.height, "grid height"),
        (grid.width, "grid width"),
        (seq.dim(), "dimension"),
    ] {
        out.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    out.extend_from_slice(&seq.fps().unwrap_or(0.0).to_le_bytes());
    for frame in seq.frames() {
        put_f32s(&mut out, frame);
    }
    Ok(out)
}

pub fn latents_from_bytes(bytes: &[u8]) -> Result<LatentSequence> {
    check_magic(bytes, LATENT_MAGIC)?;
    if bytes.len() < HEADER_LEN {
        return Err(FreresError::TruncatedFile {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let mut r = Reader { bytes, pos: 8 };
    let t = r.u32() as usize;
    let h = r.u32() as usize;
    let w = r.u32() as usize;
    let d = r.u32() as usize;
    let fps = r.f32();
    if t == 0 || h == 0 || w == 0 || d == 0 {
        return Err(FreresError::shape(format!(
            "header declares a zero axis: T={t} H={h} W={w} d={d}"
        )));
    }
    let per_frame = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(d))
        .ok_or_else(|| FreresError::shape("header dimensions overflow"))?;
    let payload = t
        .checked_mul(per_frame)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| FreresError::shape("header dimensions overflow"))?;
    check_len(bytes, HEADER_LEN + payload)?;
    let frames = (0..t).map(|_| r.f32s(per_frame)).collect();
    let fps = (fps != 0.0).then_some(fps);
    LatentSequence::new(Grid::new(h, w), d, frames, fps)
}

pub fn read_latents(path: impl AsRef<Path>) -> Result<LatentSequence> {
    latents_from_bytes(&fs::read(path)?)
}

pub fn write_latents(seq: &LatentSequence, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, latents_to_bytes(seq)?)?;
    Ok(())
}

fn weights_len(d: usize) -> usize {
    HEADER_LEN + 4 * (4 * d * d + 4 * d + 2 * d)
}

pub fn weights_to_bytes(w: &ModelWeights) -> Result<Vec<u8>> {
    w.validate()?;
    let d = w.dim();
    let mut out = Vec::with_capacity(weights_len(d));
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(d, "dimension")?.to_le_bytes());
    for v in [w.absorber.ln_eps, w.g_raw, w.g_freq] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let a = &w.absorber;
    for m in [&a.w_q, &a.w_k, &a.w_v, &w.adapter] {
        put_f32s(&mut out, m);
    }
    for e in &w.type_embeddings {
        put_f32s(&mut out, e);
    }
    put_f32s(&mut out, &a.ln_scale);
    put_f32s(&mut out, &a.ln_shift);
    Ok(out)
}

/// Parses a weights file and checks it against the expected dimension.
pub fn weights_from_bytes(bytes: &[u8], dim: usize) -> Result<ModelWeights> {
    check_magic(bytes, WEIGHTS_MAGIC)?;
    if bytes.len() < HEADER_LEN {
        return Err(FreresError::TruncatedFile {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let mut r = Reader { bytes, pos: 8 };
    let version = r.u32();
    if version != WEIGHTS_VERSION {
        return Err(FreresError::InvalidParameter(format!(
            "unsupported weights version {version}"
        )));
    }
    let d = r.u32() as usize;
    if d != dim {
        return Err(FreresError::shape(format!(
            "weights have d={d}, latents have d={dim}"
        )));
    }
    check_len(bytes, weights_len(d))?;
    let ln_eps = r.f32();
    let g_raw = r.f32();
    let g_freq = r.f32();
    let w_q = r.f32s(d * d);
    let w_k = r.f32s(d * d);
    let w_v = r.f32s(d * d);
    let adapter = r.f32s(d * d);
    let type_embeddings = std::array::from_fn(|_| r.f32s(d));
    let ln_scale = r.f32s(d);
    let ln_shift = r.f32s(d);
    let w = ModelWeights {
        absorber: AbsorberWeights {
            dim: d,
            w_q,
            w_k,
            w_v,
            ln_scale,
            ln_shift,
            ln_eps,
        },
        adapter,
        type_embeddings,
        g_raw,
        g_freq,
    };
    w.validate()?;
    Ok(w)
}

pub fn load_weights(path: impl AsRef<Path>, dim: usize) -> Result<ModelWeights> {
    weights_from_bytes(&fs::read(path)?, dim)
}

pub fn write_weights(w: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, weights_to_bytes(w)?)?;
    Ok(())
}

const STREAM_HEADER: &str = "# freres-tokens v1";

fn field(v: Option<usize>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| v.to_string())
}

/// One record per line: `kind gop frame row col coeff e_0 .. e_{d-1}`, with
/// `-` for fields the origin does not carry. Floats use the shortest
/// representation that parses back to the same bits.
pub fn write_token_stream<W: Write>(stream: &TokenStream, mut out: W) -> Result<()> {
    let dim = stream.tokens().first().map_or(0, |t| t.embedding.len());
    writeln!(out, "{STREAM_HEADER} d={dim} count={}", stream.len())?;
    let mut line = String::new();
    for t in stream.iter() {
        if t.embedding.len() != dim {
            return Err(FreresError::shape(
                "token stream mixes embedding dimensions",
            ));
        }
        let o = &t.origin;
        let (row, col) = o.row_col().unzip();
        line.clear();
        line.push_str(t.kind.tag());
        for f in [o.gop(), o.frame(), row, col, o.coeff()] {
            line.push(' ');
            line.push_str(&field(f));
        }
        for v in &t.embedding {
            line.push(' ');
            line.push_str(&v.to_string());
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn token_stream_to_string(stream: &TokenStream) -> Result<String> {
    let mut buf = Vec::new();
    write_token_stream(stream, &mut buf)?;
    Ok(String::from_utf8(buf).expect("token stream is ascii"))
}

fn parse_err(line: usize, msg: impl Into<String>) -> FreresError {
    FreresError::Parse {
        line,
        msg: msg.into(),
    }
}

fn header_value(word: Option<&str>, key: &str, line: usize) -> Result<usize> {
    word.and_then(|w| w.strip_prefix(key))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| parse_err(line, format!("expected {key}<n> in header")))
}

pub fn read_token_stream(text: &str) -> Result<TokenStream> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty token stream"))?;
    let rest = header
        .strip_prefix(STREAM_HEADER)
        .ok_or_else(|| parse_err(1, "missing token stream header"))?;
    let mut words = rest.split_whitespace();
    let dim = header_value(words.next(), "d=", 1)?;
    let count = header_value(words.next(), "count=", 1)?;

    let mut stream = TokenStream::new();
    for (i, raw) in lines.enumerate() {
        let n = i + 2;
        let words: Vec<&str> = raw.split_whitespace().collect();
        if words.len() != 6 + dim {
            return Err(parse_err(
                n,
                format!("expected {} fields, found {}", 6 + dim, words.len()),
            ));
        }
        let kind = TokenKind::from_tag(words[0])
            .ok_or_else(|| parse_err(n, format!("unknown kind {:?}", words[0])))?;
        let num = |j: usize| -> Result<Option<usize>> {
            match words[j] {
                "-" => Ok(None),
                w => w
                    .parse()
                    .map(Some)
                    .map_err(|_| parse_err(n, format!("bad integer {w:?}"))),
            }
        };
        let need = |j: usize| -> Result<usize> {
            num(j)?.ok_or_else(|| parse_err(n, format!("field {j} is required for {}", kind.tag())))
        };
        let origin = match kind {
            TokenKind::RawAnchor => TokenOrigin::Grid(GridCoord::new(need(2)?, need(3)?, need(4)?)),
            TokenKind::DynamicP => match num(5)? {
                Some(coeff) => TokenOrigin::Coefficient {
                    gop: need(1)?,
                    row: need(3)?,
                    col: need(4)?,
                    coeff,
                },
                None => TokenOrigin::Reconstructed {
                    gop: need(1)?,
                    frame: need(2)?,
                    row: need(3)?,
                    col: need(4)?,
                },
            },
            TokenKind::Summary => TokenOrigin::Group { gop: need(1)? },
            TokenKind::Static => TokenOrigin::Pooled {
                gop: need(1)?,
                frame: need(2)?,
                row: need(3)?,
                col: need(4)?,
            },
        };
        let embedding = words[6..]
            .iter()
            .map(|w| {
                w.parse::<f32>()
                    .map_err(|_| parse_err(n, format!("bad float {w:?}")))
            })
            .collect::<Result<Vec<f32>>>()?;
        stream.push(Token::new(kind, embedding, origin));
    }
    if stream.len() != count {
        return Err(parse_err(
            1,
            format!("header declares {count} tokens, found {}", stream.len()),
        ));
    }
    Ok(stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(t: usize, h: usize, w: usize, d: usize) -> LatentSequence {
        let n = t * h * w * d;
        let data: Vec<f32> = (0..n).map(|i| (i as f32 * 0.37).sin() * 3.0).collect();
        LatentSequence::from_flat(t, Grid::new(h, w), d, &data, Some(25.0)).unwrap()
    }

    #[test]
    fn latent_round_trip() {
        let s = seq(3, 3, 6, 2);
        let bytes = latents_to_bytes(&s).unwrap();
        assert_eq!(bytes.len(), 28 + 4 * 3 * 3 * 6 * 2);
        assert_eq!(latents_from_bytes(&bytes).unwrap(), s);

        let one = seq(1, 1, 1, 1);
        assert_eq!(latents_to_bytes(&one).unwrap().len(), 32);
    }

    #[test]
    fn latent_errors() {
        let s = seq(2, 3, 3, 1);
        let mut bytes = latents_to_bytes(&s).unwrap();
        assert!(matches!(
            latents_from_bytes(&bytes[..bytes.len() - 1]),
            Err(FreresError::TruncatedFile { .. })
        ));
        assert!(matches!(
            latents_from_bytes(&bytes[..10]),
            Err(FreresError::TruncatedFile { .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            latents_from_bytes(&extra),
            Err(FreresError::ShapeMismatch(_))
        ));
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            latents_from_bytes(&bytes),
            Err(FreresError::ShapeMismatch(_))
        ));
        bytes[..8].copy_from_slice(b"XXXXXXXX");
        assert!(matches!(
            latents_from_bytes(&bytes),
            Err(FreresError::BadMagic { .. })
        ));
    }

    #[test]
    fn weights_round_trip() {
        let mut w = ModelWeights::seeded(42, 4);
        w.type_embeddings[2] = vec![0.5, -0.25, 1.0, 2.0];
        w.g_freq = 0.75;
        let bytes = weights_to_bytes(&w).unwrap();
        assert_eq!(bytes.len(), weights_len(4));
        assert_eq!(weights_from_bytes(&bytes, 4).unwrap(), w);
        assert!(matches!(
            weights_from_bytes(&bytes, 8),
            Err(FreresError::ShapeMismatch(_))
        ));
        assert!(matches!(
            weights_from_bytes(&bytes[..40], 4),
            Err(FreresError::TruncatedFile { .. })
        ));
        assert!(matches!(
            weights_from_bytes(b"FRERESL1xxxxxxxxxxxxxxxxxxxx", 4),
            Err(FreresError::BadMagic { .. })
        ));
    }

    #[test]
    fn stream_round_trip_all_origins() {
        let toks = vec![
            Token::new(
                TokenKind::RawAnchor,
                vec![1.5, -0.1],
                TokenOrigin::Grid(GridCoord::new(2, 3, 4)),
            ),
            Token::new(
                TokenKind::DynamicP,
                vec![f32::MIN_POSITIVE, 3.0e7],
                TokenOrigin::Coefficient {
                    gop: 1,
                    row: 2,
                    col: 3,
                    coeff: 0,
                },
            ),
            Token::new(
                TokenKind::DynamicP,
                vec![0.0, -0.0],
                TokenOrigin::Reconstructed {
                    gop: 1,
                    frame: 5,
                    row: 0,
                    col: 3,
                },
            ),
            Token::new(
                TokenKind::Summary,
                vec![1.0 / 3.0, 2.0],
                TokenOrigin::Group { gop: 4 },
            ),
            Token::new(
                TokenKind::Static,
                vec![7.0, 8.0],
                TokenOrigin::Pooled {
                    gop: 0,
                    frame: 0,
                    row: 1,
                    col: 1,
                },
            ),
        ];
        let s: TokenStream = toks.into_iter().collect();
        let text = token_stream_to_string(&s).unwrap();
        assert!(text.starts_with("# freres-tokens v1 d=2 count=5\nraw - 2 3 4 - 1.5 -0.1\n"));
        let back = read_token_stream(&text).unwrap();
        assert_eq!(back, s);
        for (a, b) in back.iter().zip(s.iter()) {
            let bits = |t: &Token| t.embedding.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn stream_parse_errors() {
        assert!(read_token_stream("").is_err());
        assert!(read_token_stream("# freres-tokens v1 d=1 count=2\nsum 0 - - - - 1\n").is_err());
        assert!(read_token_stream("# freres-tokens v1 d=1 count=1\nbogus 0 - - - - 1\n").is_err());
        assert!(read_token_stream("# freres-tokens v1 d=1 count=1\nsum - - - - - 1\n").is_err());
        assert!(matches!(
            read_token_stream("# freres-tokens v1 d=1 count=1\nsum 0 - - - - x\n"),
            Err(FreresError::Parse { line: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn latent_bytes_round_trip(t in 1usize..4, h in 1usize..5, w in 1usize..5, d in 1usize..4,
                                   vals in proptest::collection::vec(-1e6f32..1e6, 200)) {
            let n = t * h * w * d;
            let data: Vec<f32> = (0..n).map(|i| vals[i % vals.len()]).collect();
            let s = LatentSequence::from_flat(t, Grid::new(h, w), d, &data, None).unwrap();
            let bytes = latents_to_bytes(&s).unwrap();
            prop_assert_eq!(latents_to_bytes(&latents_from_bytes(&bytes).unwrap()).unwrap(), bytes);
        }

        #[test]
        fn stream_text_round_trip(vals in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..40)) {
            let s: TokenStream = vals
                .chunks(2)
                .enumerate()
                .map(|(i, c)| {
                    let e = vec![c[0], *c.last().unwrap()];
                    Token::new(TokenKind::Summary, e, TokenOrigin::Group { gop: i })
                })
                .collect();
            let text = token_stream_to_string(&s).unwrap();
            prop_assert_eq!(read_token_stream(&text).unwrap(), s);
        }
    }
}
