//! Arithmetic for the math tool.
//!
//! Grammar (whitespace ignored between tokens):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | '(' expr ')'
//! number  := digits ['.' digits] | '.' digits
//! ```
//!
//! `^` binds tighter than unary minus and is right-associative, so
//! `-2^2 = -4` and `2^3^2 = 512`.

use thiserror::Error;

pub const MAX_EXPR_LEN: usize = 4096;
const MAX_DEPTH: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MathError {
    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("division by zero at position {position}")]
    DivisionByZero { position: usize },
    #[error("result is not a finite number")]
    NonFinite,
    #[error("expression longer than {MAX_EXPR_LEN} characters")]
    TooLong,
}

impl MathError {
    pub fn code(&self) -> &'static str {
        match self {
            MathError::Parse { .. } => "parse_error",
            MathError::DivisionByZero { .. } => "division_by_zero",
            MathError::NonFinite => "non_finite_result",
            MathError::TooLong => "invalid_params",
        }
    }
}

pub fn eval_expr(expr: &str) -> Result<f64, MathError> {
    if expr.chars().count() > MAX_EXPR_LEN {
        return Err(MathError::TooLong);
    }
    let mut p = Parser {
        chars: expr.chars().collect(),
        pos: 0,
        depth: 0,
    };
    let value = p.expr()?;
    p.skip_ws();
    if let Some(c) = p.peek() {
        return Err(p.error(format!("unexpected '{c}'")));
    }
    if !value.is_finite() {
        return Err(MathError::NonFinite);
    }
    Ok(value)
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
    depth: usize,
}

impl Parser {
    fn error(&self, message: String) -> MathError {
        MathError::Parse {
            position: self.pos,
            message,
        }
    }

    fn skip_ws(&mut self) {
        while self.chars.get(self.pos).is_some_and(|c| c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn enter(&mut self) -> Result<(), MathError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.error("expression nested too deeply".into()));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<f64, MathError> {
        let mut acc = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek() {
            self.pos += 1;
            let rhs = self.term()?;
            acc = if op == '+' { acc + rhs } else { acc - rhs };
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<f64, MathError> {
        let mut acc = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek() {
            let op_pos = self.pos;
            self.pos += 1;
            let rhs = self.unary()?;
            if op == '*' {
                acc *= rhs;
            } else {
                if rhs == 0.0 {
                    return Err(MathError::DivisionByZero { position: op_pos });
                }
                acc /= rhs;
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<f64, MathError> {
        self.enter()?;
        let out = if self.peek() == Some('-') {
            self.pos += 1;
            self.unary().map(|v| -v)
        } else {
            self.power()
        };
        self.depth -= 1;
        out
    }

    fn power(&mut self) -> Result<f64, MathError> {
        let base = self.primary()?;
        if self.peek() == Some('^') {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(base.powf(exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<f64, MathError> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                self.enter()?;
                let v = self.expr()?;
                self.depth -= 1;
                if self.peek() != Some(')') {
                    return Err(self.error("expected ')'".into()));
                }
                self.pos += 1;
                Ok(v)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) => Err(self.error(format!("unexpected '{c}'"))),
            None => Err(self.error("unexpected end of expression".into())),
        }
    }

    fn number(&mut self) -> Result<f64, MathError> {
        let start = self.pos;
        let digits = |p: &mut Parser| {
            let s = p.pos;
            while p.chars.get(p.pos).is_some_and(char::is_ascii_digit) {
                p.pos += 1;
            }
            p.pos - s
        };
        let int_digits = digits(self);
        let mut frac_digits = 0;
        if self.chars.get(self.pos) == Some(&'.') {
            self.pos += 1;
            frac_digits = digits(self);
            if frac_digits == 0 {
                return Err(self.error("expected digits after '.'".into()));
            }
        }
        if int_digits == 0 && frac_digits == 0 {
            return Err(MathError::Parse {
                position: start,
                message: "expected a number".into(),
            });
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse::<f64>().map_err(|e| MathError::Parse {
            position: start,
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        assert_eq!(eval_expr("1+1").unwrap(), 2.0);
        let v = eval_expr("(1.1*0.9)-1").unwrap();
        assert!((v - (-0.01)).abs() < 1e-12, "{v}");
        assert_eq!(eval_expr("1/0").unwrap_err().code(), "division_by_zero");
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval_expr("2+3*4").unwrap(), 14.0);
        assert_eq!(eval_expr("(2+3)*4").unwrap(), 20.0);
        assert_eq!(eval_expr("10-4-3").unwrap(), 3.0);
        assert_eq!(eval_expr("64/4/2").unwrap(), 8.0);
        assert_eq!(eval_expr("2^3^2").unwrap(), 512.0);
        assert_eq!(eval_expr("-2^2").unwrap(), -4.0);
        assert_eq!(eval_expr("2^-1").unwrap(), 0.5);
        assert_eq!(eval_expr("--3").unwrap(), 3.0);
        assert_eq!(eval_expr(" 1 +\t.5 ").unwrap(), 1.5);
        assert_eq!(eval_expr("3*-2").unwrap(), -6.0);
    }

    #[test]
    fn parse_errors_carry_position() {
        assert_eq!(
            eval_expr("1+"),
            Err(MathError::Parse {
                position: 2,
                message: "unexpected end of expression".into()
            })
        );
        match eval_expr("2 * x") {
            Err(MathError::Parse { position, .. }) => assert_eq!(position, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(eval_expr("(1+2"), Err(MathError::Parse { .. })));
        assert!(matches!(
            eval_expr("1 2"),
            Err(MathError::Parse { position: 2, .. })
        ));
        assert!(matches!(eval_expr("1."), Err(MathError::Parse { .. })));
        assert!(matches!(eval_expr("+1"), Err(MathError::Parse { .. })));
        assert!(matches!(eval_expr("1e5"), Err(MathError::Parse { .. })));
        assert!(matches!(eval_expr(""), Err(MathError::Parse { .. })));
    }

    #[test]
    fn guards() {
        assert_eq!(
            eval_expr("(-8)^0.5").unwrap_err().code(),
            "non_finite_result"
        );
        assert_eq!(eval_expr("10^400").unwrap_err(), MathError::NonFinite);
        assert_eq!(eval_expr("1/(2-2)").unwrap_err().code(), "division_by_zero");
        let long = "1+".repeat(2100) + "1";
        assert_eq!(eval_expr(&long), Err(MathError::TooLong));
        let deep = "(".repeat(1000) + "1" + &")".repeat(1000);
        assert!(matches!(eval_expr(&deep), Err(MathError::Parse { .. })));
        let minus = "-".repeat(1000) + "1";
        assert!(matches!(eval_expr(&minus), Err(MathError::Parse { .. })));
    }

    proptest! {
        #[test]
        fn integer_arithmetic_matches_host(a in -1000i64..1000, b in -1000i64..1000, c in 1i64..1000) {
            let expr = format!("({a})+({b})*({c})-({a})");
            let expected = (a + b * c - a) as f64;
            prop_assert_eq!(eval_expr(&expr).unwrap(), expected);
        }

        #[test]
        fn never_panics(s in "[0-9+\\-*/^(). ]{0,64}") {
            let _ = eval_expr(&s);
        }
    }
}
