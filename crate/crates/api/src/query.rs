//! The query-language subset: lexer, parser, syntax tree and printer.
//!
//! Grammar:
//!
//! ```text
//! document   = [ "query" [ name ] [ "(" vardecl+ ")" ] ] selection
//! vardecl    = "$" name ":" type [ "=" value ]
//! type       = ( name | "[" type "]" ) [ "!" ]
//! selection  = "{" field+ "}"
//! field      = name [ "(" argument+ ")" ] [ selection ]
//! argument   = name ":" value
//! value      = "$" name | string | int | float | "true" | "false" | "null"
//!            | name | "[" value* "]" | "{" ( name ":" value )* "}"
//! ```
//!
//! Commas are insignificant, as is all whitespace and `#` comments.

use std::fmt::{self, Write as _};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at {pos}: {message}")]
    Syntax { pos: Pos, message: String },
    #[error("unknown operation {name:?} at {pos}")]
    UnknownOperation { name: String, pos: Pos },
    #[error("unknown field {name:?} on {parent} at {pos}")]
    UnknownField { parent: String, name: String, pos: Pos },
    #[error("unknown argument {name:?} for {operation} at {pos}")]
    UnknownArgument { operation: String, name: String, pos: Pos },
    #[error("missing required argument {name:?} for {operation} at {pos}")]
    MissingArgument { operation: String, name: String, pos: Pos },
    #[error("field {field:?} needs a selection set at {pos}")]
    MissingSelection { field: String, pos: Pos },
    #[error("field {field:?} takes no selection set at {pos}")]
    UnexpectedSelection { field: String, pos: Pos },
}

impl ParseError {
    pub fn pos(&self) -> Pos {
        match self {
            Self::Syntax { pos, .. }
            | Self::UnknownOperation { pos, .. }
            | Self::UnknownField { pos, .. }
            | Self::UnknownArgument { pos, .. }
            | Self::MissingArgument { pos, .. }
            | Self::MissingSelection { pos, .. }
            | Self::UnexpectedSelection { pos, .. } => *pos,
        }
    }

    /// Machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Syntax { .. } => "SYNTAX_ERROR",
            Self::UnknownOperation { .. } => "UNKNOWN_OPERATION",
            Self::UnknownField { .. } => "UNKNOWN_FIELD",
            Self::UnknownArgument { .. } => "UNKNOWN_ARGUMENT",
            Self::MissingArgument { .. } => "MISSING_ARGUMENT",
            Self::MissingSelection { .. } => "MISSING_SELECTION",
            Self::UnexpectedSelection { .. } => "UNEXPECTED_SELECTION",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TypeRef {
    Named(String),
    List(Box<TypeRef>),
    NonNull(Box<TypeRef>),
}

impl TypeRef {
    pub fn is_non_null(&self) -> bool {
        matches!(self, Self::NonNull(_))
    }
}

impl fmt::Display for TypeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Named(n) => f.write_str(n),
            Self::List(inner) => write!(f, "[{inner}]"),
            Self::NonNull(inner) => write!(f, "{inner}!"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Variable(String),
    String(String),
    Int(i64),
    Float(f64),
    Bool(bool),
    Null,
    Enum(String),
    List(Vec<Value>),
    Object(Vec<(String, Value)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarDecl {
    pub name: String,
    pub ty: TypeRef,
    pub default: Option<Value>,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Argument {
    pub name: String,
    pub value: Value,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub args: Vec<Argument>,
    pub selection: Vec<Field>,
    pub pos: Pos,
}

impl Field {
    pub fn arg(&self, name: &str) -> Option<&Argument> {
        self.args.iter().find(|a| a.name == name)
    }
}

/// One parsed request: an optional named header and a single operation.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryAst {
    /// Whether the `query` keyword was written.
    pub keyword: bool,
    pub name: Option<String>,
    pub variables: Vec<VarDecl>,
    pub operation: Field,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Name(String),
    Var(String),
    Str(String),
    Int(i64),
    Float(f64),
    Punct(char),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Name(n) => write!(f, "name {n:?}"),
            Tok::Var(n) => write!(f, "variable ${n}"),
            Tok::Str(_) => f.write_str("string"),
            Tok::Int(_) | Tok::Float(_) => f.write_str("number"),
            Tok::Punct(c) => write!(f, "{c:?}"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    pos: Pos,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            chars: text.chars().peekable(),
            pos: Pos { line: 1, col: 1 },
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.pos.line += 1;
            self.pos.col = 1;
        } else {
            self.pos.col += 1;
        }
        Some(c)
    }

    fn error(&self, pos: Pos, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            pos,
            message: message.into(),
        }
    }

    fn skip_ignored(&mut self) {
        while let Some(&c) = self.chars.peek() {
            if c.is_whitespace() || c == ',' || c == '\u{feff}' {
                self.bump();
            } else if c == '#' {
                while self.chars.peek().is_some_and(|&c| c != '\n') {
                    self.bump();
                }
            } else {
                break;
            }
        }
    }

    fn name(&mut self) -> String {
        let mut s = String::new();
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn string(&mut self, start: Pos) -> Result<String, ParseError> {
        self.bump();
        let mut s = String::new();
        loop {
            let here = self.pos;
            match self.bump() {
                None | Some('\n') => return Err(self.error(start, "unterminated string")),
                Some('"') => return Ok(s),
                Some('\\') => match self.bump() {
                    Some('"') => s.push('"'),
                    Some('\\') => s.push('\\'),
                    Some('/') => s.push('/'),
                    Some('b') => s.push('\u{8}'),
                    Some('f') => s.push('\u{c}'),
                    Some('n') => s.push('\n'),
                    Some('r') => s.push('\r'),
                    Some('t') => s.push('\t'),
                    Some('u') => {
                        let hex: String = (0..4).filter_map(|_| self.bump()).collect();
                        let c = u32::from_str_radix(&hex, 16)
                            .ok()
                            .and_then(char::from_u32)
                            .ok_or_else(|| self.error(here, "bad unicode escape"))?;
                        s.push(c);
                    }
                    _ => return Err(self.error(here, "bad escape sequence")),
                },
                Some(c) => s.push(c),
            }
        }
    }

    fn number(&mut self, start: Pos) -> Result<Tok, ParseError> {
        let mut s = String::new();
        let mut float = false;
        while let Some(&c) = self.chars.peek() {
            if c.is_ascii_digit() || c == '-' || c == '+' {
                s.push(c);
            } else if c == '.' || c == 'e' || c == 'E' {
                float = true;
                s.push(c);
            } else {
                break;
            }
            self.bump();
        }
        if self.chars.peek().is_some_and(|c| c.is_ascii_alphabetic() || *c == '_') {
            return Err(self.error(start, format!("invalid number {s:?}")));
        }
        if float {
            s.parse()
                .map(Tok::Float)
                .map_err(|_| self.error(start, format!("invalid number {s:?}")))
        } else {
            s.parse()
                .map(Tok::Int)
                .map_err(|_| self.error(start, format!("invalid number {s:?}")))
        }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, Pos)>, ParseError> {
        let mut out = Vec::new();
        loop {
            self.skip_ignored();
            let pos = self.pos;
            let Some(&c) = self.chars.peek() else {
                out.push((Tok::Eof, pos));
                return Ok(out);
            };
            let tok = match c {
                '{' | '}' | '(' | ')' | '[' | ']' | ':' | '!' | '=' => {
                    self.bump();
                    Tok::Punct(c)
                }
                '$' => {
                    self.bump();
                    let name = self.name();
                    if name.is_empty() || name.starts_with(|c: char| c.is_ascii_digit()) {
                        return Err(self.error(pos, "expected a variable name after '$'"));
                    }
                    Tok::Var(name)
                }
                '"' => Tok::Str(self.string(pos)?),
                c if c == '-' || c.is_ascii_digit() => self.number(pos)?,
                c if c.is_ascii_alphabetic() || c == '_' => Tok::Name(self.name()),
                other => return Err(self.error(pos, format!("unexpected character {other:?}"))),
            };
            out.push((tok, pos));
        }
    }
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn next(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        ParseError::Syntax {
            pos: self.pos(),
            message: format!("expected {wanted}, found {}", self.peek()),
        }
    }

    fn expect(&mut self, c: char) -> Result<Pos, ParseError> {
        if self.peek() == &Tok::Punct(c) {
            Ok(self.next().1)
        } else {
            Err(self.unexpected(&format!("{c:?}")))
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == &Tok::Punct(c) {
            self.next();
            true
        } else {
            false
        }
    }

    fn name(&mut self) -> Result<(String, Pos), ParseError> {
        match self.peek() {
            Tok::Name(_) => match self.next() {
                (Tok::Name(n), p) => Ok((n, p)),
                _ => unreachable!(),
            },
            _ => Err(self.unexpected("a name")),
        }
    }

    fn document(&mut self) -> Result<QueryAst, ParseError> {
        let mut keyword = false;
        let mut name = None;
        let mut variables = Vec::new();
        match self.peek() {
            Tok::Name(n) if n == "query" => {
                keyword = true;
                self.next();
                if let Tok::Name(_) = self.peek() {
                    name = Some(self.name()?.0);
                }
                if self.eat('(') {
                    loop {
                        variables.push(self.var_decl()?);
                        if self.eat(')') {
                            break;
                        }
                    }
                }
            }
            Tok::Name(n) => {
                let msg = format!("expected \"query\" or '{{', found name {n:?}");
                return Err(ParseError::Syntax {
                    pos: self.pos(),
                    message: msg,
                });
            }
            _ => {}
        }
        let open = self.expect('{')?;
        let mut fields = Vec::new();
        while !self.eat('}') {
            if self.peek() == &Tok::Eof {
                return Err(ParseError::Syntax {
                    pos: open,
                    message: "unclosed '{'".into(),
                });
            }
            fields.push(self.field()?);
        }
        if self.peek() != &Tok::Eof {
            return Err(self.unexpected("end of input"));
        }
        let mut fields = fields.into_iter();
        let operation = fields.next().ok_or(ParseError::Syntax {
            pos: open,
            message: "empty selection set".into(),
        })?;
        if let Some(extra) = fields.next() {
            return Err(ParseError::Syntax {
                pos: extra.pos,
                message: "a request may contain only one operation".into(),
            });
        }
        crate::schema::validate_operation(&operation)?;
        Ok(QueryAst {
            keyword,
            name,
            variables,
            operation,
        })
    }

    fn var_decl(&mut self) -> Result<VarDecl, ParseError> {
        let pos = self.pos();
        let name = match self.next() {
            (Tok::Var(n), _) => n,
            _ => {
                self.at -= 1;
                return Err(self.unexpected("a variable declaration"));
            }
        };
        self.expect(':')?;
        let ty = self.type_ref()?;
        let default = if self.eat('=') { Some(self.value()?) } else { None };
        Ok(VarDecl { name, ty, default, pos })
    }

    fn type_ref(&mut self) -> Result<TypeRef, ParseError> {
        let base = if self.eat('[') {
            let inner = self.type_ref()?;
            self.expect(']')?;
            TypeRef::List(Box::new(inner))
        } else {
            TypeRef::Named(self.name().map_err(|_| self.unexpected("a type"))?.0)
        };
        Ok(if self.eat('!') {
            TypeRef::NonNull(Box::new(base))
        } else {
            base
        })
    }

    fn field(&mut self) -> Result<Field, ParseError> {
        let (name, pos) = self.name().map_err(|_| self.unexpected("a field name"))?;
        let mut args = Vec::new();
        if self.eat('(') {
            loop {
                let (arg, apos) = self.name().map_err(|_| self.unexpected("an argument name"))?;
                self.expect(':')?;
                let value = self.value()?;
                args.push(Argument {
                    name: arg,
                    value,
                    pos: apos,
                });
                if self.eat(')') {
                    break;
                }
            }
        }
        let mut selection = Vec::new();
        if self.peek() == &Tok::Punct('{') {
            let open = self.next().1;
            while !self.eat('}') {
                if self.peek() == &Tok::Eof {
                    return Err(ParseError::Syntax {
                        pos: open,
                        message: "unclosed '{'".into(),
                    });
                }
                selection.push(self.field()?);
            }
            if selection.is_empty() {
                return Err(ParseError::Syntax {
                    pos: open,
                    message: "empty selection set".into(),
                });
            }
        }
        Ok(Field {
            name,
            args,
            selection,
            pos,
        })
    }

    fn value(&mut self) -> Result<Value, ParseError> {
        let (tok, pos) = self.next();
        Ok(match tok {
            Tok::Var(n) => Value::Variable(n),
            Tok::Str(s) => Value::String(s),
            Tok::Int(i) => Value::Int(i),
            Tok::Float(x) => Value::Float(x),
            Tok::Name(n) => match n.as_str() {
                "true" => Value::Bool(true),
                "false" => Value::Bool(false),
                "null" => Value::Null,
                _ => Value::Enum(n),
            },
            Tok::Punct('[') => {
                let mut items = Vec::new();
                while !self.eat(']') {
                    if self.peek() == &Tok::Eof {
                        return Err(ParseError::Syntax {
                            pos,
                            message: "unclosed '['".into(),
                        });
                    }
                    items.push(self.value()?);
                }
                Value::List(items)
            }
            Tok::Punct('{') => {
                let mut fields = Vec::new();
                while !self.eat('}') {
                    if self.peek() == &Tok::Eof {
                        return Err(ParseError::Syntax {
                            pos,
                            message: "unclosed '{'".into(),
                        });
                    }
                    let (name, _) = self.name().map_err(|_| self.unexpected("an object field name"))?;
                    self.expect(':')?;
                    fields.push((name, self.value()?));
                }
                Value::Object(fields)
            }
            other => {
                return Err(ParseError::Syntax {
                    pos,
                    message: format!("expected a value, found {other}"),
                })
            }
        })
    }
}

pub fn parse_query(text: &str) -> Result<QueryAst, ParseError> {
    let toks = Lexer::new(text).tokens()?;
    Parser { toks, at: 0 }.document()
}

fn write_string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

fn write_value(out: &mut String, v: &Value) {
    match v {
        Value::Variable(n) => {
            out.push('$');
            out.push_str(n);
        }
        Value::String(s) => write_string(out, s),
        Value::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Value::Float(x) => {
            let s = format!("{x:?}");
            out.push_str(&s);
        }
        Value::Bool(b) => {
            let _ = write!(out, "{b}");
        }
        Value::Null => out.push_str("null"),
        Value::Enum(n) => out.push_str(n),
        Value::List(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(out, item);
            }
            out.push(']');
        }
        Value::Object(fields) => {
            out.push('{');
            for (i, (name, value)) in fields.iter().enumerate() {
                out.push_str(if i > 0 { ", " } else { " " });
                out.push_str(name);
                out.push_str(": ");
                write_value(out, value);
            }
            out.push_str(if fields.is_empty() { "}" } else { " }" });
        }
    }
}

fn write_field(out: &mut String, field: &Field, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
    out.push_str(&field.name);
    if !field.args.is_empty() {
        out.push('(');
        for (i, arg) in field.args.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(&arg.name);
            out.push_str(": ");
            write_value(out, &arg.value);
        }
        out.push(')');
    }
    if !field.selection.is_empty() {
        out.push_str(" {\n");
        for child in &field.selection {
            write_field(out, child, depth + 1);
        }
        for _ in 0..depth {
            out.push_str("  ");
        }
        out.push('}');
    }
    out.push('\n');
}

/// Canonical text of `ast`; parsing the output yields `ast` again.
pub fn print_query(ast: &QueryAst) -> String {
    let mut out = String::new();
    if ast.keyword {
        out.push_str("query");
        if let Some(name) = &ast.name {
            out.push(' ');
            out.push_str(name);
        }
        if !ast.variables.is_empty() {
            out.push('(');
            for (i, v) in ast.variables.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                let _ = write!(out, "${}: {}", v.name, v.ty);
                if let Some(d) = &v.default {
                    out.push_str(" = ");
                    write_value(&mut out, d);
                }
            }
            out.push(')');
        }
        out.push(' ');
    }
    out.push_str("{\n");
    write_field(&mut out, &ast.operation, 1);
    out.push_str("}\n");
    out
}
