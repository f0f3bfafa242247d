//! Update streams.
//!
//! ```text
//! + R(a,b)          # insert, multiplicity 1
//! + R(a,b) * 3
//! - S(b,c)          # delete one copy
//! enumerate         # list the full output
//! count             # total payload of the output
//! detect            # whether the output is nonempty
//! ```

use std::fmt;

use crate::database::Update;
use crate::lex::{Cursor, ParseError, Tok};
use crate::ring::Payload;
use crate::value::{Tuple, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Update(Update),
    Enumerate,
    Count,
    Detect,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::Update(u) if u.delta == 1 => write!(f, "+ {}{}", u.relation, u.tuple),
            Command::Update(u) if u.delta == -1 => write!(f, "- {}{}", u.relation, u.tuple),
            Command::Update(u) => write!(f, "{u}"),
            Command::Enumerate => f.write_str("enumerate"),
            Command::Count => f.write_str("count"),
            Command::Detect => f.write_str("detect"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stream {
    pub commands: Vec<Command>,
}

impl Stream {
    pub fn new(commands: Vec<Command>) -> Self {
        Stream { commands }
    }

    pub fn updates(&self) -> impl Iterator<Item = &Update> {
        self.commands.iter().filter_map(|c| match c {
            Command::Update(u) => Some(u),
            _ => None,
        })
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn push(&mut self, c: Command) {
        self.commands.push(c);
    }

    pub fn parse(text: &str) -> Result<Stream, ParseError> {
        let mut commands = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let mut cur = Cursor::new(raw, i + 1)?;
            if cur.at_end() {
                continue;
            }
            let sign = match cur.peek() {
                Some(Tok::Punct('+')) => 1,
                Some(Tok::Punct('-')) => -1,
                _ => {
                    let word = cur.word("`+`, `-`, `enumerate`, `count` or `detect`")?;
                    let c = match word.as_str() {
                        "enumerate" => Command::Enumerate,
                        "count" => Command::Count,
                        "detect" => Command::Detect,
                        other => return Err(ParseError::new(i + 1, 1, format!("unknown command `{other}`"))),
                    };
                    cur.finish()?;
                    commands.push(c);
                    continue;
                }
            };
            cur.bump();
            let relation = cur.word("relation name")?;
            let values = cur.word_list("value")?;
            let mult: Payload = if cur.eat('*') {
                let (l, c) = cur.mark();
                let w = cur.word("multiplicity")?;
                match w.parse::<Payload>() {
                    Ok(m) if m > 0 => m,
                    _ => return Err(ParseError::new(l, c, format!("multiplicity must be a positive integer, got `{w}`"))),
                }
            } else {
                1
            };
            cur.finish()?;
            let tuple: Tuple = values.iter().map(|v| Value::parse(v)).collect();
            commands.push(Command::Update(Update::new(relation, tuple, sign * mult)));
        }
        Ok(Stream { commands })
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.commands {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromIterator<Command> for Stream {
    fn from_iter<I: IntoIterator<Item = Command>>(iter: I) -> Self {
        Stream { commands: iter.into_iter().collect() }
    }
}
