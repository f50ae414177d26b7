//! Extraction of tagged blocks from free-form completions.
//!
//! The last `<tag>...</tag>` block wins, so reasoning that quotes an example
//! tag earlier in the response does not shadow the final answer.

use crate::env::{Action, Cell, Direction, EnvKind};

use super::prompt::ExpectedTag;
use super::PolicyError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedResponse {
    Actions(Vec<Action>),
    Remark(String),
}

fn malformed(reason: impl Into<String>, text: &str) -> PolicyError {
    PolicyError::MalformedResponse { reason: reason.into(), text: text.to_string() }
}

/// The body of the last complete `<tag>...</tag>` block.
pub fn last_block<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut search_end = text.len();
    loop {
        let start = text[..search_end].rfind(&open)?;
        let body_start = start + open.len();
        if let Some(len) = text[body_start..].find(&close) {
            return Some(&text[body_start..body_start + len]);
        }
        search_end = start;
    }
}

pub fn parse_tagged_response(text: &str, expected: ExpectedTag, kind: EnvKind) -> Result<ParsedResponse, PolicyError> {
    match expected {
        ExpectedTag::Remark => {
            let body = last_block(text, "remark").ok_or_else(|| malformed("missing <remark> block", text))?;
            if body.trim().is_empty() {
                return Err(malformed("empty <remark> block", text));
            }
            Ok(ParsedResponse::Remark(body.to_string()))
        }
        ExpectedTag::Action => {
            let body = last_block(text, "action").ok_or_else(|| malformed("missing <action> block", text))?;
            if body.trim().is_empty() {
                return Err(malformed("empty <action> block", text));
            }
            let actions = match kind {
                EnvKind::Sokoban => parse_moves(body).map_err(|r| malformed(r, text))?,
                EnvKind::MineSweeper => parse_cells(body).map_err(|r| malformed(r, text))?,
                EnvKind::Coin => parse_arms(body).map_err(|r| malformed(r, text))?,
            };
            Ok(ParsedResponse::Actions(actions))
        }
    }
}

fn strip_token(token: &str) -> &str {
    token.trim().trim_matches(|c: char| matches!(c, '"' | '\'' | '[' | ']' | '`' | '.'))
}

fn parse_moves(body: &str) -> Result<Vec<Action>, String> {
    body.split(',')
        .map(|tok| {
            let t = strip_token(tok);
            Direction::parse(t).map(Action::Move).ok_or_else(|| format!("unknown move {t:?}"))
        })
        .collect()
}

fn parse_index(s: &str) -> Result<usize, String> {
    s.trim().parse::<usize>().map_err(|_| format!("bad coordinate {:?}", s.trim()))
}

fn parse_cells(body: &str) -> Result<Vec<Action>, String> {
    let mut cells = Vec::new();
    let mut rest = body;
    loop {
        let skipped = rest.trim_start_matches(|c: char| c.is_whitespace() || c == ',');
        if skipped.is_empty() {
            break;
        }
        let inner = skipped.strip_prefix('(').ok_or_else(|| format!("expected \"(row, col)\" at {skipped:?}"))?;
        let end = inner.find(')').ok_or("unterminated cell coordinate")?;
        let (row, col) =
            inner[..end].split_once(',').ok_or_else(|| format!("expected two coordinates in {:?}", &inner[..end]))?;
        let cell = Cell::from_display(parse_index(row)?, parse_index(col)?).ok_or("coordinates are 1-indexed")?;
        cells.push(Action::Reveal(cell));
        rest = &inner[end + 1..];
    }
    if cells.is_empty() {
        return Err("no cell coordinates".into());
    }
    Ok(cells)
}

fn parse_arms(body: &str) -> Result<Vec<Action>, String> {
    body.split(',')
        .map(|tok| {
            let t = strip_token(tok);
            let t = t.strip_prefix("arm").unwrap_or(t);
            parse_index(t).map(Action::Pick)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn actions(text: &str, kind: EnvKind) -> Result<Vec<Action>, PolicyError> {
        match parse_tagged_response(text, ExpectedTag::Action, kind)? {
            ParsedResponse::Actions(a) => Ok(a),
            ParsedResponse::Remark(_) => unreachable!(),
        }
    }

    #[test]
    fn sokoban_moves() {
        let a = actions("I think <action>up, Left ,\"down\"</action>", EnvKind::Sokoban).unwrap();
        assert_eq!(a, vec![Action::Move(Direction::Up), Action::Move(Direction::Left), Action::Move(Direction::Down)]);
        assert!(actions("<action>up, jump</action>", EnvKind::Sokoban).is_err());
    }

    #[test]
    fn minesweeper_cells_are_one_indexed() {
        assert_eq!(
            actions("<action>(3, 4)</action>", EnvKind::MineSweeper).unwrap(),
            vec![Action::Reveal(Cell::new(2, 3))]
        );
        assert_eq!(
            actions("<action> (1,1), (6 , 6) </action>", EnvKind::MineSweeper).unwrap(),
            vec![Action::Reveal(Cell::new(0, 0)), Action::Reveal(Cell::new(5, 5))]
        );
        assert!(actions("<action>(0, 4)</action>", EnvKind::MineSweeper).is_err());
        assert!(actions("<action>3, 4</action>", EnvKind::MineSweeper).is_err());
        assert!(actions("<action>(3, x)</action>", EnvKind::MineSweeper).is_err());
    }

    #[test]
    fn last_block_wins() {
        let text = "e.g. <action>(1, 1)</action> but actually <action>(2, 2)</action> done";
        assert_eq!(actions(text, EnvKind::MineSweeper).unwrap(), vec![Action::Reveal(Cell::new(1, 1))]);
        // An unterminated trailing tag falls back to the last complete block.
        let text = "<action>(2, 2)</action> then <action>(3, 3)";
        assert_eq!(actions(text, EnvKind::MineSweeper).unwrap(), vec![Action::Reveal(Cell::new(1, 1))]);
    }

    #[test]
    fn missing_or_empty_blocks() {
        for text in ["no tags here", "<action></action>", "<action>   </action>", "<action>up"] {
            assert!(matches!(actions(text, EnvKind::Sokoban), Err(PolicyError::MalformedResponse { .. })), "{text}");
        }
    }

    #[test]
    fn remark_is_verbatim() {
        let r = parse_tagged_response("...<remark>avoid (5,1)</remark>", ExpectedTag::Remark, EnvKind::MineSweeper)
            .unwrap();
        assert_eq!(r, ParsedResponse::Remark("avoid (5,1)".into()));
        assert!(parse_tagged_response("<remark> </remark>", ExpectedTag::Remark, EnvKind::Sokoban).is_err());
    }

    #[test]
    fn coin_arms() {
        assert_eq!(actions("<action>arm 3</action>", EnvKind::Coin).unwrap(), vec![Action::Pick(3)]);
        assert_eq!(actions("<action>0</action>", EnvKind::Coin).unwrap(), vec![Action::Pick(0)]);
    }
}
