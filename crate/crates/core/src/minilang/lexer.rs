use super::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum TokKind {
    Ident,
    Int,
    Str,
    Sym,
    Eof,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub kind: TokKind,
    pub text: String,
    pub line: usize,
    pub col: usize,
}

const TWO_CHAR: [&str; 2] = ["==", "!="];
const ONE_CHAR: &str = "{}()[];,.=+-*/<>";

pub(crate) fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize| {
        if chars[*i] == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
        *i += 1;
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col);
            continue;
        }
        let (sl, sc) = (line, col);
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col);
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            advance(&mut i, &mut line, &mut col);
            advance(&mut i, &mut line, &mut col);
            loop {
                if i >= chars.len() {
                    return Err(ParseError::new(sl, sc, vec!["*/".into()], "end of input"));
                }
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    advance(&mut i, &mut line, &mut col);
                    advance(&mut i, &mut line, &mut col);
                    break;
                }
                advance(&mut i, &mut line, &mut col);
            }
            continue;
        }
        let start = i;
        let kind = if c.is_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                advance(&mut i, &mut line, &mut col);
            }
            TokKind::Ident
        } else if c.is_ascii_digit() {
            while i < chars.len() && chars[i].is_ascii_digit() {
                advance(&mut i, &mut line, &mut col);
            }
            TokKind::Int
        } else if c == '"' {
            advance(&mut i, &mut line, &mut col);
            loop {
                match chars.get(i) {
                    None | Some('\n') => {
                        return Err(ParseError::new(sl, sc, vec!["\"".into()], "unterminated string"));
                    }
                    Some('\\') => {
                        advance(&mut i, &mut line, &mut col);
                        if i < chars.len() {
                            advance(&mut i, &mut line, &mut col);
                        }
                    }
                    Some('"') => {
                        advance(&mut i, &mut line, &mut col);
                        break;
                    }
                    Some(_) => advance(&mut i, &mut line, &mut col),
                }
            }
            TokKind::Str
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            if TWO_CHAR.contains(&two.as_str()) {
                advance(&mut i, &mut line, &mut col);
                advance(&mut i, &mut line, &mut col);
            } else if ONE_CHAR.contains(c) {
                advance(&mut i, &mut line, &mut col);
            } else {
                return Err(ParseError::new(sl, sc, vec!["token".into()], &c.to_string()));
            }
            TokKind::Sym
        };
        out.push(Token {
            kind,
            text: chars[start..i].iter().collect(),
            line: sl,
            col: sc,
        });
    }
    out.push(Token {
        kind: TokKind::Eof,
        text: String::new(),
        line,
        col,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_operators() {
        let toks = lex("// ...\nx == \"a\\\"b\" /* c */ != 3;").unwrap();
        let texts: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(texts, vec!["x", "==", "\"a\\\"b\"", "!=", "3", ";", ""]);
        assert_eq!((toks[0].line, toks[0].col), (2, 1));
    }

    #[test]
    fn stray_character_is_an_error() {
        let err = lex("int x = 1 # 2;").unwrap_err();
        assert_eq!((err.line, err.col), (1, 11));
    }
}
