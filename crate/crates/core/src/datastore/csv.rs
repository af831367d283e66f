//! Minimal CSV dialect. Headers are `name:dtype`. An unquoted empty field is
//! NULL; a quoted empty field is the empty string. Strings are always written
//! quoted so the two stay distinguishable.

use std::fmt::Write as _;
use std::path::Path;

use super::table::{Column, ColumnData, Table};
use super::DataError;
use crate::udfscript::{Dtype, Value};

struct Field {
    text: String,
    quoted: bool,
    line: usize,
}

fn parse_err(line: usize, column: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse { line, column, msg: msg.into() }
}

/// Splits CSV text into records of fields; quoted fields may span lines.
fn records(text: &str) -> Result<Vec<Vec<Field>>, DataError> {
    let mut out = Vec::new();
    let mut chars = text.chars().peekable();
    let mut line = 1;
    let mut record: Vec<Field> = Vec::new();
    let mut field = Field { text: String::new(), quoted: false, line };
    let mut at_field_start = true;
    let mut after_quote = false;
    while let Some(c) = chars.next() {
        if field.quoted && !after_quote {
            match c {
                '"' if chars.peek() == Some(&'"') => {
                    chars.next();
                    field.text.push('"');
                }
                '"' => after_quote = true,
                '\n' => {
                    line += 1;
                    field.text.push('\n');
                }
                c => field.text.push(c),
            }
            continue;
        }
        match c {
            '"' if at_field_start => {
                field.quoted = true;
                at_field_start = false;
            }
            ',' => {
                record.push(std::mem::replace(&mut field, Field { text: String::new(), quoted: false, line }));
                at_field_start = true;
                after_quote = false;
            }
            '\r' if chars.peek() == Some(&'\n') => {}
            '\n' => {
                record.push(std::mem::replace(&mut field, Field { text: String::new(), quoted: false, line: line + 1 }));
                out.push(std::mem::take(&mut record));
                line += 1;
                at_field_start = true;
                after_quote = false;
            }
            _ if after_quote => {
                return Err(parse_err(line, record.len() + 1, "unexpected character after closing quote"));
            }
            c => {
                at_field_start = false;
                field.text.push(c);
            }
        }
    }
    if field.quoted && !after_quote {
        return Err(parse_err(field.line, record.len() + 1, "unterminated quoted field"));
    }
    if !record.is_empty() || !field.text.is_empty() || field.quoted {
        record.push(field);
        out.push(record);
    }
    Ok(out)
}

fn parse_value(f: &Field, dtype: Dtype, col: usize) -> Result<Value, DataError> {
    if f.text.is_empty() && !f.quoted {
        return Ok(Value::Null);
    }
    let bad = || parse_err(f.line, col, format!("cannot parse {:?} as {dtype}", f.text));
    Ok(match dtype {
        Dtype::Int => Value::Int(f.text.trim().parse().map_err(|_| bad())?),
        Dtype::Float => Value::Float(f.text.trim().parse().map_err(|_| bad())?),
        Dtype::Bool => match f.text.trim() {
            "true" | "True" | "1" => Value::Bool(true),
            "false" | "False" | "0" => Value::Bool(false),
            _ => return Err(bad()),
        },
        Dtype::String => Value::str(f.text.as_str()),
    })
}

pub fn parse_table(name: &str, text: &str) -> Result<Table, DataError> {
    let mut recs = records(text)?.into_iter();
    let Some(header) = recs.next() else {
        return Err(parse_err(1, 1, "missing header row"));
    };
    let mut columns = Vec::with_capacity(header.len());
    for (i, h) in header.iter().enumerate() {
        let Some((col, dt)) = h.text.rsplit_once(':') else {
            return Err(parse_err(1, i + 1, format!("header cell {:?} is not `name:dtype`", h.text)));
        };
        let dtype = Dtype::parse(dt.trim())
            .ok_or_else(|| parse_err(1, i + 1, format!("unknown dtype {dt:?}")))?;
        columns.push(Column::new(col.trim(), ColumnData::empty(dtype)));
    }
    for rec in recs {
        if rec.len() != columns.len() {
            let line = rec.first().map_or(0, |f| f.line);
            return Err(parse_err(line, rec.len().min(columns.len()) + 1, format!(
                "expected {} fields, found {}",
                columns.len(),
                rec.len()
            )));
        }
        for (i, (f, c)) in rec.iter().zip(columns.iter_mut()).enumerate() {
            let v = parse_value(f, c.dtype(), i + 1)?;
            c.data.push(v).expect("parsed value matches column dtype");
        }
    }
    Table::new(name, columns)
}

fn quote(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        if c == '"' {
            out.push('"');
        }
        out.push(c);
    }
    out.push('"');
}

pub fn render_table(table: &Table) -> String {
    let mut out = String::new();
    for (i, c) in table.columns.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{}:{}", c.name, c.dtype());
    }
    out.push('\n');
    for r in 0..table.row_count {
        for (i, c) in table.columns.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            match c.data.get(r) {
                Value::Null => {}
                Value::Int(v) => {
                    let _ = write!(out, "{v}");
                }
                Value::Float(v) => {
                    let _ = write!(out, "{v:?}");
                }
                Value::Bool(v) => out.push_str(if v { "true" } else { "false" }),
                Value::Str(s) => quote(&mut out, &s),
            }
        }
        out.push('\n');
    }
    out
}

/// Loads a table; its name is the file stem.
pub fn load_table(path: &Path) -> Result<Table, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("table");
    parse_table(name, &text)
}

pub fn save_table(table: &Table, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, render_table(table)).map_err(|e| DataError::io(path, e))
}
