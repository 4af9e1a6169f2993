//! Guard expression grammar for safety rules.
//!
//! ```text
//! expr   := term ( '&' term )*
//! term   := '!' term | '(' expr ')' | atom
//! atom   := var cmp rhs | action
//! var    := 'BG' | 'BG'' | 'IOB' | 'IOB''
//! cmp    := '<' | '<=' | '>' | '>=' | '='
//! rhs    := number | 'BGT'
//! action := 'u1' | 'u2' | 'u3' | 'u4'
//! ```
//!
//! Comparisons of a derivative variable (BG', IOB') against literal 0
//! use a dead-band: the slope's sign is taken as 0 when its magnitude
//! is below the configured band, so 'BG' > 0' means "clearly rising".
//! All other comparisons are exact.

use serde::{Deserialize, Serialize};

use super::{ControlAction, RuleError, SafetyContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    Bg,
    BgPrime,
    Iob,
    IobPrime,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::Bg => "BG",
            Var::BgPrime => "BG'",
            Var::Iob => "IOB",
            Var::IobPrime => "IOB'",
        }
    }

    fn is_derivative(self) -> bool {
        matches!(self, Var::BgPrime | Var::IobPrime)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rhs {
    Const(f64),
    Bgt,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    And(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    Cmp { var: Var, op: CmpOp, rhs: Rhs },
    Action(ControlAction),
}

/// Slope magnitudes below these bands count as "no trend" when a
/// derivative is compared against 0. The BG band must sit well above
/// the noise floor of the window slope estimate: CGM noise of sd s
/// propagates to a least-squares slope over 6 points with sd 0.24 s,
/// so a band of 2 sigma keeps sensor jitter from reading as a trend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadBands {
    /// mg/dL per step.
    pub bg_prime: f64,
    /// U per step.
    pub iob_prime: f64,
}

impl Default for DeadBands {
    fn default() -> Self {
        DeadBands {
            bg_prime: 1.0,
            iob_prime: 0.01,
        }
    }
}

fn banded_sign(value: f64, band: f64) -> i8 {
    if value.abs() < band {
        0
    } else if value > 0.0 {
        1
    } else {
        -1
    }
}

impl Expr {
    pub fn eval(&self, ctx: &SafetyContext, bands: &DeadBands) -> bool {
        match self {
            Expr::And(a, b) => a.eval(ctx, bands) && b.eval(ctx, bands),
            Expr::Not(e) => !e.eval(ctx, bands),
            Expr::Action(a) => ctx.action == *a,
            Expr::Cmp { var, op, rhs } => {
                let lhs = match var {
                    Var::Bg => ctx.bg,
                    Var::BgPrime => ctx.bg_prime,
                    Var::Iob => ctx.iob,
                    Var::IobPrime => ctx.iob_prime,
                };
                let rhs_v = match rhs {
                    Rhs::Const(c) => *c,
                    Rhs::Bgt => ctx.bgt,
                };
                if var.is_derivative() && *rhs == Rhs::Const(0.0) {
                    let band = match var {
                        Var::BgPrime => bands.bg_prime,
                        Var::IobPrime => bands.iob_prime,
                        _ => unreachable!(),
                    };
                    let sign = banded_sign(lhs, band);
                    match op {
                        CmpOp::Lt => sign < 0,
                        CmpOp::Le => sign <= 0,
                        CmpOp::Gt => sign > 0,
                        CmpOp::Ge => sign >= 0,
                        CmpOp::Eq => sign == 0,
                    }
                } else {
                    match op {
                        CmpOp::Lt => lhs < rhs_v,
                        CmpOp::Le => lhs <= rhs_v,
                        CmpOp::Gt => lhs > rhs_v,
                        CmpOp::Ge => lhs >= rhs_v,
                        CmpOp::Eq => lhs == rhs_v,
                    }
                }
            }
        }
    }
}

impl std::fmt::Display for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Expr::And(a, b) => write!(f, "{a} & {b}"),
            Expr::Not(e) => match **e {
                Expr::Action(_) | Expr::Cmp { .. } => write!(f, "!{e}"),
                _ => write!(f, "!({e})"),
            },
            Expr::Cmp { var, op, rhs } => {
                write!(f, "{} {} ", var.name(), op.symbol())?;
                match rhs {
                    Rhs::Const(c) => write!(f, "{c}"),
                    Rhs::Bgt => write!(f, "BGT"),
                }
            }
            Expr::Action(a) => write!(f, "{}", a.symbol()),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

pub fn parse(src: &str) -> Result<Expr, RuleError> {
    let mut p = Parser { src, pos: 0 };
    let expr = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("trailing input"));
    }
    Ok(expr)
}

impl<'a> Parser<'a> {
    fn error(&self, msg: &str) -> RuleError {
        RuleError::GuardParse {
            guard: self.src.to_string(),
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.src[self.pos..].starts_with(' ') {
            self.pos += 1;
        }
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, RuleError> {
        let mut left = self.term()?;
        while self.eat("&") {
            let right = self.term()?;
            left = Expr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn term(&mut self) -> Result<Expr, RuleError> {
        if self.eat("!") {
            return Ok(Expr::Not(Box::new(self.term()?)));
        }
        if self.eat("(") {
            let inner = self.expr()?;
            if !self.eat(")") {
                return Err(self.error("expected ')'"));
            }
            return Ok(inner);
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, RuleError> {
        self.skip_ws();
        for (sym, action) in [
            ("u1", ControlAction::DecreaseInsulin),
            ("u2", ControlAction::IncreaseInsulin),
            ("u3", ControlAction::StopInsulin),
            ("u4", ControlAction::KeepInsulin),
        ] {
            if self.eat(sym) {
                return Ok(Expr::Action(action));
            }
        }
        // Longest identifiers first: BGT before BG, primed before bare.
        let var = if self.eat("BG'") {
            Var::BgPrime
        } else if self.eat("IOB'") {
            Var::IobPrime
        } else if self.src[self.pos..].starts_with("BGT") {
            return Err(self.error("BGT may only appear on the right-hand side"));
        } else if self.eat("BG") {
            Var::Bg
        } else if self.eat("IOB") {
            Var::Iob
        } else {
            return Err(self.error("expected variable, action, '!', or '('"));
        };
        let op = if self.eat("<=") {
            CmpOp::Le
        } else if self.eat(">=") {
            CmpOp::Ge
        } else if self.eat("<") {
            CmpOp::Lt
        } else if self.eat(">") {
            CmpOp::Gt
        } else if self.eat("=") {
            CmpOp::Eq
        } else {
            return Err(self.error("expected comparison operator"));
        };
        self.skip_ws();
        if self.eat("BGT") {
            return Ok(Expr::Cmp { var, op, rhs: Rhs::Bgt });
        }
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut end = self.pos;
        if end < bytes.len() && (bytes[end] == b'-' || bytes[end] == b'+') {
            end += 1;
        }
        while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
            end += 1;
        }
        if end == start {
            return Err(self.error("expected number or BGT"));
        }
        let num: f64 = self.src[start..end]
            .parse()
            .map_err(|_| self.error("invalid number"))?;
        self.pos = end;
        Ok(Expr::Cmp {
            var,
            op,
            rhs: Rhs::Const(num),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(bg: f64, bg_prime: f64, iob_prime: f64, action: ControlAction) -> SafetyContext {
        SafetyContext {
            bg,
            bg_prime,
            iob: 1.0,
            iob_prime,
            bgt: 120.0,
            action,
        }
    }

    #[test]
    fn parses_table_shaped_guard() {
        let e = parse("(BG > BGT & BG' > 0) & (IOB' < 0) & u1").unwrap();
        let bands = DeadBands::default();
        assert!(e.eval(&ctx(200.0, 2.0, -0.1, ControlAction::DecreaseInsulin), &bands));
        assert!(!e.eval(&ctx(200.0, 2.0, -0.1, ControlAction::StopInsulin), &bands));
        assert!(!e.eval(&ctx(100.0, 2.0, -0.1, ControlAction::DecreaseInsulin), &bands));
    }

    #[test]
    fn display_round_trips() {
        for guard in [
            "(BG > BGT & BG' > 0) & (IOB' < 0) & u1",
            "BG < 70 & !u3",
            "(BG < BGT & BG' < 0) & (IOB' >= 0) & u4",
            "!(BG > BGT & u3)",
            "IOB >= 2.5 & BG' = 0",
        ] {
            let e = parse(guard).unwrap();
            let rendered = e.to_string();
            let reparsed = parse(&rendered).unwrap();
            assert_eq!(e, reparsed, "guard {guard:?} rendered as {rendered:?}");
        }
    }

    #[test]
    fn deadband_applies_to_derivative_zero_compares() {
        let bands = DeadBands::default();
        let gt = parse("BG' > 0").unwrap();
        let eq = parse("BG' = 0").unwrap();
        let le = parse("IOB' <= 0").unwrap();
        // Slope inside the band counts as zero.
        assert!(!gt.eval(&ctx(100.0, 0.5, 0.0, ControlAction::KeepInsulin), &bands));
        assert!(eq.eval(&ctx(100.0, 0.5, 0.0, ControlAction::KeepInsulin), &bands));
        assert!(gt.eval(&ctx(100.0, 2.0, 0.0, ControlAction::KeepInsulin), &bands));
        // IOB' <= 0 accepts both falling and flat.
        assert!(le.eval(&ctx(100.0, 0.0, -0.02, ControlAction::KeepInsulin), &bands));
        assert!(le.eval(&ctx(100.0, 0.0, 0.005, ControlAction::KeepInsulin), &bands));
        assert!(!le.eval(&ctx(100.0, 0.0, 0.02, ControlAction::KeepInsulin), &bands));
    }

    #[test]
    fn bg_compares_are_exact() {
        let bands = DeadBands::default();
        let e = parse("BG < 70").unwrap();
        assert!(e.eval(&ctx(69.999, 0.0, 0.0, ControlAction::KeepInsulin), &bands));
        assert!(!e.eval(&ctx(70.0, 0.0, 0.0, ControlAction::KeepInsulin), &bands));
    }

    #[test]
    fn rejects_malformed_guards() {
        for bad in ["BG >", "BGT > 100", "BG ~ 5", "(BG > 10", "BG > 10 & ", "u5", "BG > 10 extra"] {
            assert!(parse(bad).is_err(), "{bad:?} should fail");
        }
    }
}
