use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::{record, Determinism, FieldType, InputField, Tool, ToolDescriptor, ToolError, ToolRecord};

/// Arithmetic over `+ - * / ^`, unary minus and parentheses.
pub fn evaluate(expr: &str) -> Result<f64, String> {
    let mut p = Parser {
        src: expr.as_bytes(),
        pos: 0,
    };
    let v = p.sum()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(format!("unexpected `{}` at {}", p.src[p.pos] as char, p.pos));
    }
    if !v.is_finite() {
        return Err("result is not finite".into());
    }
    Ok(v)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.src.get(self.pos).is_some_and(u8::is_ascii_whitespace) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn sum(&mut self) -> Result<f64, String> {
        let mut acc = self.product()?;
        while let Some(op @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            let rhs = self.product()?;
            acc = if op == b'+' { acc + rhs } else { acc - rhs };
        }
        Ok(acc)
    }

    fn product(&mut self) -> Result<f64, String> {
        let mut acc = self.unary()?;
        while let Some(op @ (b'*' | b'/')) = self.peek() {
            self.pos += 1;
            let rhs = self.unary()?;
            if op == b'/' && rhs == 0.0 {
                return Err("division by zero".into());
            }
            acc = if op == b'*' { acc * rhs } else { acc / rhs };
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<f64, String> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(-self.unary()?);
        }
        self.power()
    }

    // right-associative
    fn power(&mut self) -> Result<f64, String> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(base.powf(exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<f64, String> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let v = self.sum()?;
                if self.peek() != Some(b')') {
                    return Err(format!("expected `)` at {}", self.pos));
                }
                self.pos += 1;
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.pos;
                while self
                    .src
                    .get(self.pos)
                    .is_some_and(|c| c.is_ascii_digit() || *c == b'.')
                {
                    self.pos += 1;
                }
                if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
                    self.pos += 1;
                    if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                        self.pos += 1;
                    }
                    while self.src.get(self.pos).is_some_and(u8::is_ascii_digit) {
                        self.pos += 1;
                    }
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                text.parse().map_err(|_| format!("bad number `{text}`"))
            }
            Some(c) => Err(format!("unexpected `{}` at {}", c as char, self.pos)),
            None => Err("unexpected end of expression".into()),
        }
    }
}

pub struct Calculator {
    descriptor: ToolDescriptor,
}

impl Calculator {
    pub fn new() -> Self {
        Self {
            descriptor: ToolDescriptor {
                name: "calculator".into(),
                description: "Evaluates an arithmetic expression".into(),
                inputs: vec![InputField::required("expression", FieldType::Text)],
                determinism: Determinism::Deterministic,
            },
        }
    }
}

impl Default for Calculator {
    fn default() -> Self {
        Self::new()
    }
}

impl Tool for Calculator {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, inputs: &ToolRecord, _: &mut ChaCha8Rng) -> Result<ToolRecord, ToolError> {
        let expr = inputs["expression"].as_str().unwrap_or_default();
        let v = evaluate(expr).map_err(ToolError::Failed)?;
        Ok(record([("value", json!(v))]))
    }
}
