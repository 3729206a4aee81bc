//! Profile document encoding.
//!
//! A profile is one JSON document. Series rows are written one per line as
//! compact arrays so files stay readable and diff-able even when long.

use std::io;

use serde::Deserialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::model::{Profile, SCHEMA_VERSION};

use super::StoreError;

/// Pretty-prints objects and outer arrays but keeps arrays nested inside
/// arrays (the series rows) on a single line.
struct RowFormatter<'a> {
    pretty: PrettyFormatter<'a>,
    /// One entry per open container: true when it is written inline.
    stack: Vec<bool>,
    in_array: Vec<bool>,
}

impl RowFormatter<'_> {
    fn new() -> Self {
        RowFormatter { pretty: PrettyFormatter::with_indent(b"  "), stack: Vec::new(), in_array: Vec::new() }
    }

    fn inline(&self) -> bool {
        self.stack.last().copied().unwrap_or(false)
    }
}

impl Formatter for RowFormatter<'_> {
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        let inline = self.inline() || self.in_array.last().copied().unwrap_or(false);
        self.stack.push(inline);
        self.in_array.push(true);
        if inline {
            w.write_all(b"[")
        } else {
            self.pretty.begin_array(w)
        }
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        let inline = self.stack.pop().unwrap_or(false);
        self.in_array.pop();
        if inline {
            w.write_all(b"]")
        } else {
            self.pretty.end_array(w)
        }
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        if self.inline() {
            if first {
                Ok(())
            } else {
                w.write_all(b",")
            }
        } else {
            self.pretty.begin_array_value(w, first)
        }
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        if self.inline() {
            Ok(())
        } else {
            self.pretty.end_array_value(w)
        }
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        let inline = self.inline();
        self.stack.push(inline);
        self.in_array.push(false);
        if inline {
            w.write_all(b"{")
        } else {
            self.pretty.begin_object(w)
        }
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        let inline = self.stack.pop().unwrap_or(false);
        self.in_array.pop();
        if inline {
            w.write_all(b"}")
        } else {
            self.pretty.end_object(w)
        }
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        if self.inline() {
            if first {
                Ok(())
            } else {
                w.write_all(b",")
            }
        } else {
            self.pretty.begin_object_key(w, first)
        }
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        if self.inline() {
            w.write_all(b":")
        } else {
            self.pretty.begin_object_value(w)
        }
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        if self.inline() {
            Ok(())
        } else {
            self.pretty.end_object_value(w)
        }
    }
}

/// Serializes a profile into its on-disk document.
pub fn encode(profile: &Profile) -> Vec<u8> {
    let mut out = Vec::with_capacity(256 + profile.sample_count() * 48);
    let mut ser = serde_json::Serializer::with_formatter(&mut out, RowFormatter::new());
    serde::Serialize::serialize(profile, &mut ser).expect("profiles always serialize");
    out.push(b'\n');
    out
}

#[derive(Deserialize)]
struct Header {
    schema_version: u32,
}

/// Byte offset of a serde_json error position (1-based line, column counted
/// in bytes from the start of that line).
fn byte_offset(text: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split(|&b| b == b'\n').enumerate() {
        if i + 1 == line {
            return (offset + column).min(text.len());
        }
        offset += l.len() + 1;
    }
    text.len()
}

fn parse_error(origin: &str, text: &[u8], e: serde_json::Error) -> StoreError {
    StoreError::Parse {
        origin: origin.to_string(),
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    }
}

/// Parses a profile document, rejecting schema versions newer than this
/// build understands. `origin` names the source in errors.
pub fn decode(text: &[u8], origin: &str) -> Result<Profile, StoreError> {
    let header: Header = serde_json::from_slice(text).map_err(|e| parse_error(origin, text, e))?;
    if header.schema_version > SCHEMA_VERSION {
        return Err(StoreError::Version {
            origin: origin.to_string(),
            found: header.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    serde_json::from_slice(text).map_err(|e| parse_error(origin, text, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets() {
        let t = b"ab\ncde\nf";
        assert_eq!(byte_offset(t, 1, 0), 0);
        assert_eq!(byte_offset(t, 2, 1), 4);
        assert_eq!(byte_offset(t, 3, 1), 8);
        assert_eq!(byte_offset(t, 9, 1), 8);
    }
}
