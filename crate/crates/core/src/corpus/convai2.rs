use std::path::Path;

use super::{Corpus, Dialogue, Speaker, Split, Turn};
use crate::error::{Error, Result};

pub fn load_convai2(path: &Path, split: Split) -> Result<Corpus> {
    let text = std::fs::read_to_string(path)?;
    parse_convai2(&text, &path.display().to_string(), split)
}

/// Parses the numbered-line ConvAI2 text format.
///
/// A line number of 1 opens a new dialogue. Persona lines accumulate into
/// the open dialogue; every other line is `partner<TAB>reply`, optionally
/// followed by reward and candidate fields, which are dropped.
pub fn parse_convai2(text: &str, origin: &str, split: Split) -> Result<Corpus> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut dialogues = Vec::new();
    let mut current: Option<(usize, Dialogue)> = None;

    let finish = |cur: Option<(usize, Dialogue)>, out: &mut Vec<Dialogue>| -> Result<()> {
        if let Some((start, d)) = cur {
            if d.turns.is_empty() {
                return Err(err(start, "dialogue without turns".into()));
            }
            d.validate().map_err(|e| err(start, e.to_string()))?;
            out.push(d);
        }
        Ok(())
    };

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (num, rest) = line
            .split_once(' ')
            .ok_or_else(|| err(lineno, "expected `<number> <content>`".into()))?;
        let num: usize = num
            .parse()
            .map_err(|_| err(lineno, format!("malformed line number `{num}`")))?;
        if num == 1 || current.is_none() {
            finish(current.take(), &mut dialogues)?;
            current = Some((
                lineno,
                Dialogue {
                    persona_self: Vec::new(),
                    persona_partner: Vec::new(),
                    turns: Vec::new(),
                },
            ));
        }
        let (_, d) = current.as_mut().expect("open dialogue");
        if let Some(p) = rest.strip_prefix("your persona:") {
            d.persona_self.push(p.trim().to_string());
        } else if let Some(p) = rest.strip_prefix("partner's persona:") {
            d.persona_partner.push(p.trim().to_string());
        } else {
            let mut fields = rest.split('\t');
            let partner = fields.next().unwrap_or_default().trim();
            let reply = fields
                .next()
                .ok_or_else(|| err(lineno, "missing tab between utterance and reply".into()))?
                .trim();
            if partner.is_empty() || reply.is_empty() {
                return Err(err(lineno, "empty utterance".into()));
            }
            d.turns.push(Turn::new(Speaker::P1, partner));
            d.turns.push(Turn::new(Speaker::P2, reply));
        }
    }
    finish(current, &mut dialogues)?;
    Ok(Corpus { dialogues, split })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = "1 your persona: i like dogs.\n\
2 hi there\thello! i like dogs.\n\
3 what is your dog's name?\trex.\tsome reward\trex.|no.|yes\n\
1 your persona: i am tall.\n\
2 partner's persona: i am short.\n\
3 how tall are you?\tsix foot.\n\
4 wow\tyes really.\n\
\n";

    #[test]
    fn two_dialogues() {
        let c = parse_convai2(TWO, "t", Split::Train).unwrap();
        assert_eq!(c.dialogues.len(), 2);
        assert_eq!(c.dialogues[0].turns.len(), 4);
        assert_eq!(c.dialogues[1].turns.len(), 4);
        assert_eq!(c.dialogues[1].persona_partner, ["i am short."]);
        assert_eq!(c.dialogues[0].turns[3].text, "rex.");
        assert_eq!(c.dialogues[0].turns[2].speaker, Speaker::P1);
    }

    #[test]
    fn persona_only_is_error() {
        let e = parse_convai2("1 your persona: x\n2 your persona: y\n", "t", Split::Train)
            .unwrap_err();
        assert!(e.to_string().contains("dialogue without turns"), "{e}");
    }

    #[test]
    fn empty_file() {
        let c = parse_convai2("", "t", Split::Test).unwrap();
        assert!(c.dialogues.is_empty());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_convai2("1 your persona: x\nx2 hi\tyo\n", "f.txt", Split::Train).unwrap_err();
        assert!(e.to_string().starts_with("f.txt:2:"), "{e}");
        let e = parse_convai2("1 your persona: x\n2 no tab here\n", "f.txt", Split::Train)
            .unwrap_err();
        assert!(e.to_string().starts_with("f.txt:2:"), "{e}");
    }
}
