//! Vocabulary files: one `token<TAB>id` line per token, in id order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use smited_core::tokenizer::Vocabulary;

use crate::error::{Error, Result};

pub fn vocab_to_tsv(vocab: &Vocabulary) -> String {
    let mut s = String::new();
    for (id, t) in vocab.tokens().iter().enumerate() {
        writeln!(s, "{t}\t{id}").expect("write to string");
    }
    s
}

pub fn vocab_from_tsv(text: &str, path: &Path) -> Result<Vocabulary> {
    let mut tokens = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (tok, id) = line
            .rsplit_once('\t')
            .ok_or_else(|| Error::format(path, format!("line {}: expected token<TAB>id", n + 1)))?;
        let id: usize = id
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: bad id {id:?}", n + 1)))?;
        if id != tokens.len() {
            return Err(Error::format(
                path,
                format!("line {}: id {id} out of sequence", n + 1),
            ));
        }
        tokens.push(tok.to_string());
    }
    Ok(Vocabulary::from_tokens(tokens)?)
}

pub fn write_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    fs::write(path, vocab_to_tsv(vocab)).map_err(|e| Error::io(path, e))
}

pub fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    vocab_from_tsv(&text, path)
}
