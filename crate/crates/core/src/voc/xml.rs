//! A small non-validating XML reader covering what VOC annotations use:
//! nested elements, attributes, character data, comments, processing
//! instructions, CDATA and the five predefined entities. DTDs are skipped.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    pub name: String,
    pub attributes: Vec<(String, String)>,
    pub children: Vec<Element>,
    pub text: String,
}

impl Element {
    pub fn child(&self, name: &str) -> Option<&Element> {
        self.children.iter().find(|c| c.name == name)
    }

    pub fn children_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Element> + 'a {
        self.children.iter().filter(move |c| c.name == name)
    }

    /// Trimmed character data of a direct child, if the child exists.
    pub fn child_text(&self, name: &str) -> Option<&str> {
        self.child(name).map(|c| c.text.trim())
    }
}

pub fn parse(bytes: &[u8]) -> Result<Element> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Xml {
        offset: e.valid_up_to(),
        message: "document is not valid UTF-8".into(),
    })?;
    let mut reader = Reader {
        src: text,
        pos: 0,
    };
    reader.skip_prolog()?;
    let root = reader.element()?;
    reader.skip_misc()?;
    if reader.pos != reader.src.len() {
        return Err(reader.err("content after root element"));
    }
    Ok(root)
}

struct Reader<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Xml {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.rest().starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn skip_until(&mut self, end: &str) -> Result<&'a str> {
        match self.rest().find(end) {
            Some(i) => {
                let s = &self.rest()[..i];
                self.pos += i + end.len();
                Ok(s)
            }
            None => Err(self.err(format!("unterminated construct, expected {end:?}"))),
        }
    }

    fn skip_prolog(&mut self) -> Result<()> {
        self.eat("\u{feff}");
        loop {
            self.skip_ws();
            if self.eat("<?") {
                self.skip_until("?>")?;
            } else if self.eat("<!--") {
                self.skip_until("-->")?;
            } else if self.eat("<!DOCTYPE") {
                self.skip_doctype()?;
            } else {
                return Ok(());
            }
        }
    }

    fn skip_doctype(&mut self) -> Result<()> {
        let mut depth = 0usize;
        for (i, ch) in self.rest().char_indices() {
            match ch {
                '[' => depth += 1,
                ']' => depth = depth.saturating_sub(1),
                '>' if depth == 0 => {
                    self.pos += i + 1;
                    return Ok(());
                }
                _ => {}
            }
        }
        Err(self.err("unterminated DOCTYPE"))
    }

    fn skip_misc(&mut self) -> Result<()> {
        loop {
            self.skip_ws();
            if self.eat("<?") {
                self.skip_until("?>")?;
            } else if self.eat("<!--") {
                self.skip_until("-->")?;
            } else {
                return Ok(());
            }
        }
    }

    fn name(&mut self) -> Result<&'a str> {
        let rest = self.rest();
        let end = rest
            .find(|c: char| c.is_whitespace() || matches!(c, '>' | '/' | '=' | '<'))
            .unwrap_or(rest.len());
        if end == 0 {
            return Err(self.err("expected a name"));
        }
        self.pos += end;
        Ok(&rest[..end])
    }

    fn element(&mut self) -> Result<Element> {
        if !self.eat("<") {
            return Err(self.err("expected '<'"));
        }
        let name = self.name()?.to_string();
        let mut attributes = Vec::new();
        loop {
            self.skip_ws();
            if self.eat("/>") {
                return Ok(Element {
                    name,
                    attributes,
                    children: Vec::new(),
                    text: String::new(),
                });
            }
            if self.eat(">") {
                break;
            }
            let key = self.name()?.to_string();
            self.skip_ws();
            if !self.eat("=") {
                return Err(self.err(format!("attribute {key:?} without value")));
            }
            self.skip_ws();
            let quote = if self.eat("\"") {
                "\""
            } else if self.eat("'") {
                "'"
            } else {
                return Err(self.err("expected quoted attribute value"));
            };
            let raw = self.skip_until(quote)?;
            attributes.push((key, unescape(raw, self.pos)?));
        }

        let mut children = Vec::new();
        let mut text = String::new();
        loop {
            if self.eat("</") {
                let close = self.name()?;
                if close != name {
                    return Err(self.err(format!("mismatched closing tag </{close}> for <{name}>")));
                }
                self.skip_ws();
                if !self.eat(">") {
                    return Err(self.err("expected '>' after closing tag"));
                }
                return Ok(Element {
                    name,
                    attributes,
                    children,
                    text,
                });
            }
            if self.eat("<!--") {
                self.skip_until("-->")?;
            } else if self.eat("<![CDATA[") {
                text.push_str(self.skip_until("]]>")?);
            } else if self.eat("<?") {
                self.skip_until("?>")?;
            } else if self.rest().starts_with('<') {
                children.push(self.element()?);
            } else if self.rest().is_empty() {
                return Err(self.err(format!("unexpected end of document inside <{name}>")));
            } else {
                let rest = self.rest();
                let end = rest.find('<').unwrap_or(rest.len());
                let offset = self.pos;
                self.pos += end;
                text.push_str(&unescape(&rest[..end], offset)?);
            }
        }
    }
}

fn unescape(raw: &str, offset: usize) -> Result<String> {
    if !raw.contains('&') {
        return Ok(raw.to_string());
    }
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(i) = rest.find('&') {
        out.push_str(&rest[..i]);
        rest = &rest[i + 1..];
        let end = rest.find(';').ok_or_else(|| Error::Xml {
            offset,
            message: "unterminated entity reference".into(),
        })?;
        let entity = &rest[..end];
        let ch = match entity {
            "amp" => '&',
            "lt" => '<',
            "gt" => '>',
            "quot" => '"',
            "apos" => '\'',
            _ => {
                let code = if let Some(hex) = entity.strip_prefix("#x") {
                    u32::from_str_radix(hex, 16).ok()
                } else if let Some(dec) = entity.strip_prefix('#') {
                    dec.parse().ok()
                } else {
                    None
                };
                code.and_then(char::from_u32).ok_or_else(|| Error::Xml {
                    offset,
                    message: format!("unknown entity &{entity};"),
                })?
            }
        };
        out.push(ch);
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_document() {
        let doc = br#"<?xml version="1.0"?>
<!-- header -->
<annotation verified="yes">
  <filename>a &amp; b.jpg</filename>
  <object><name>dog</name><empty/></object>
  <object><name><![CDATA[cat]]></name></object>
</annotation>
"#;
        let root = parse(doc).unwrap();
        assert_eq!(root.name, "annotation");
        assert_eq!(root.attributes, vec![("verified".into(), "yes".into())]);
        assert_eq!(root.child_text("filename"), Some("a & b.jpg"));
        let names: Vec<_> = root
            .children_named("object")
            .map(|o| o.child_text("name").unwrap().to_string())
            .collect();
        assert_eq!(names, ["dog", "cat"]);
    }

    #[test]
    fn rejects_mismatched_tags() {
        assert!(parse(b"<a><b></a></b>").is_err());
        assert!(parse(b"<a>").is_err());
        assert!(parse(b"<a></a><b></b>").is_err());
        assert!(parse(b"").is_err());
    }
}
