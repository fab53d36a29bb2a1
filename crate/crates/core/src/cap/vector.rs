use thiserror::Error;

use super::EncodedCapability;

/// Golden vectors produced by the decode oracle.
pub const GOLDEN_VECTORS: &str = include_str!("vectors.txt");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VectorError {
    #[error("line {line}: expected `tag:meta:cursor`")]
    Shape { line: usize },
    #[error("line {line}: tag must be 0 or 1")]
    Tag { line: usize },
    #[error("line {line}: bad hex word `{word}`")]
    Hex { line: usize, word: String },
}

/// Parses one `tag:meta_hex:cursor_hex` vector.
pub fn parse_vector(text: &str) -> Result<EncodedCapability, VectorError> {
    parse_line(text.trim(), 1)
}

/// Parses a vector file: one vector per line, `#` starts a comment.
pub fn parse_vectors(text: &str) -> Result<Vec<EncodedCapability>, VectorError> {
    text.lines()
        .enumerate()
        .filter_map(|(i, raw)| {
            let body = raw.split('#').next().unwrap_or("").trim();
            (!body.is_empty()).then(|| parse_line(body, i + 1))
        })
        .collect()
}

fn parse_line(body: &str, line: usize) -> Result<EncodedCapability, VectorError> {
    let parts: Vec<&str> = body.split(':').collect();
    let [tag, meta, cursor] = parts.as_slice() else {
        return Err(VectorError::Shape { line });
    };
    let tag = match *tag {
        "0" => false,
        "1" => true,
        _ => return Err(VectorError::Tag { line }),
    };
    let word = |w: &str| {
        let digits = w.strip_prefix("0x").unwrap_or(w);
        if digits.is_empty() || digits.len() > 16 {
            return Err(VectorError::Hex {
                line,
                word: w.to_string(),
            });
        }
        u64::from_str_radix(digits, 16).map_err(|_| VectorError::Hex {
            line,
            word: w.to_string(),
        })
    };
    Ok(EncodedCapability {
        meta: word(meta)?,
        cursor: word(cursor)?,
        tag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_prints_identically() {
        let text = "1:0FFC00000000E000:0000000000001000";
        let enc = parse_vector(text).unwrap();
        assert!(enc.tag);
        assert_eq!(enc.meta, 0x0FFC_0000_0000_E000);
        assert_eq!(enc.cursor, 0x1000);
        assert_eq!(enc.to_string(), text);
    }

    #[test]
    fn file_with_comments() {
        let text = "# header\n\n0:0:0  # trailing\n1:FF:10\n";
        let v = parse_vectors(text).unwrap();
        assert_eq!(v.len(), 2);
        assert!(!v[0].tag);
        assert_eq!(v[1].cursor, 0x10);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(
            parse_vectors("1:0:0\n2:0:0"),
            Err(VectorError::Tag { line: 2 })
        );
        assert_eq!(parse_vector("1:0"), Err(VectorError::Shape { line: 1 }));
        assert!(matches!(
            parse_vector("1:xyz:0"),
            Err(VectorError::Hex { .. })
        ));
    }
}
