use serde::{Deserialize, Serialize};

use super::CorpusError;

/// One word of a parsed sentence. `position` is 1-based; `head == 0` is ROOT.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedToken {
    pub surface: String,
    pub position: usize,
    pub head: usize,
}

/// A sentence together with its dependency tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedSentence {
    tokens: Vec<ParsedToken>,
}

impl ParsedSentence {
    /// Validates positions and tree shape. The error carries no sentence index;
    /// callers that know it (the reader) attach it.
    pub fn new(tokens: Vec<ParsedToken>) -> Result<Self, String> {
        if tokens.is_empty() {
            return Err("empty sentence".into());
        }
        let n = tokens.len();
        for (i, t) in tokens.iter().enumerate() {
            if t.position != i + 1 {
                return Err(format!("token {} has position {}", i + 1, t.position));
            }
            if t.head > n {
                return Err(format!("head {} of token {} out of range", t.head, t.position));
            }
            if t.head == t.position {
                return Err(format!("token {} is its own head", t.position));
            }
        }
        let roots = tokens.iter().filter(|t| t.head == 0).count();
        if roots != 1 {
            return Err(format!("expected exactly one root, found {roots}"));
        }
        for start in 1..=n {
            let mut cur = start;
            let mut steps = 0;
            while cur != 0 {
                cur = tokens[cur - 1].head;
                steps += 1;
                if steps > n {
                    return Err(format!("cycle through token {start}"));
                }
            }
        }
        Ok(ParsedSentence { tokens })
    }

    /// Builds a sentence from surfaces and a 1-based head array.
    pub fn from_heads<S: AsRef<str>>(words: &[S], heads: &[usize]) -> Result<Self, String> {
        if words.len() != heads.len() {
            return Err(format!("{} words but {} heads", words.len(), heads.len()));
        }
        Self::new(
            words
                .iter()
                .zip(heads)
                .enumerate()
                .map(|(i, (w, &h))| ParsedToken {
                    surface: w.as_ref().to_string(),
                    position: i + 1,
                    head: h,
                })
                .collect(),
        )
    }

    pub fn tokens(&self) -> &[ParsedToken] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn heads(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.head).collect()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }

    /// Position of the word attached to ROOT.
    pub fn root(&self) -> usize {
        self.tokens
            .iter()
            .find(|t| t.head == 0)
            .map(|t| t.position)
            .expect("validated tree has a root")
    }

    pub fn lowercased(&self) -> ParsedSentence {
        ParsedSentence {
            tokens: self
                .tokens
                .iter()
                .map(|t| ParsedToken {
                    surface: t.surface.to_lowercase(),
                    ..t.clone()
                })
                .collect(),
        }
    }
}

/// Reads CoNLL-U text. Only ID, FORM and HEAD are consumed; multiword ranges
/// (`1-2`) and empty nodes (`3.1`) are skipped.
pub fn parse_conllu(text: &str) -> Result<Vec<ParsedSentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut current: Vec<ParsedToken> = Vec::new();
    let mut block_start = 1;

    let finish = |tokens: &mut Vec<ParsedToken>,
                  sentences: &mut Vec<ParsedSentence>,
                  line: usize|
     -> Result<(), CorpusError> {
        if tokens.is_empty() {
            return Ok(());
        }
        let index = sentences.len();
        let s = ParsedSentence::new(std::mem::take(tokens)).map_err(|reason| {
            CorpusError::InvalidTree {
                sentence: index,
                line,
                reason,
            }
        })?;
        sentences.push(s);
        Ok(())
    };

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut current, &mut sentences, block_start)?;
            block_start = lineno + 1;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 8 {
            return Err(CorpusError::MalformedLine {
                line: lineno,
                reason: format!("expected at least 8 tab-separated fields, found {}", fields.len()),
            });
        }
        let id = fields[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let position: usize = id.parse().map_err(|_| CorpusError::MalformedLine {
            line: lineno,
            reason: format!("non-integer ID {id:?}"),
        })?;
        let head: usize = fields[6].parse().map_err(|_| CorpusError::MalformedLine {
            line: lineno,
            reason: format!("non-integer HEAD {:?}", fields[6]),
        })?;
        current.push(ParsedToken {
            surface: fields[1].to_string(),
            position,
            head,
        });
    }
    finish(&mut current, &mut sentences, block_start)?;
    Ok(sentences)
}
