use std::collections::BTreeMap;

use super::{Instruction, Opcode, OperandKind, Program, NUM_REGS};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub kind: AsmErrorKind,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum AsmErrorKind {
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("`{mnemonic}` takes {expected} operands, found {found}")]
    Arity {
        mnemonic: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("unresolved label `{0}`")]
    UnresolvedLabel(String),
    #[error("register `{0}` out of range (0..31)")]
    RegisterOutOfRange(String),
    #[error("expected {expected}, found `{found}`")]
    BadOperand {
        expected: &'static str,
        found: String,
    },
    #[error("label `{0}` defined twice")]
    DuplicateLabel(String),
    #[error("invalid label name `{0}`")]
    BadLabelName(String),
    #[error("branch target @{0} outside the program")]
    TargetOutOfRange(i64),
}

enum Target {
    Name(String),
    Index(i64),
}

struct Pending {
    line: usize,
    inst: Instruction,
    target: Option<Target>,
}

fn err(line: usize, kind: AsmErrorKind) -> AsmError {
    AsmError { line, kind }
}

fn is_label_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_register(text: &str, prefix: char, line: usize) -> Result<i64, AsmError> {
    let expected = if prefix == 'x' {
        "integer register x0..x31"
    } else {
        "float register f0..f31"
    };
    let digits = text
        .strip_prefix(prefix)
        .filter(|d| !d.is_empty() && d.chars().all(|c| c.is_ascii_digit()))
        .ok_or_else(|| {
            err(
                line,
                AsmErrorKind::BadOperand {
                    expected,
                    found: text.to_string(),
                },
            )
        })?;
    match digits.parse::<u32>() {
        Ok(n) if n < NUM_REGS as u32 => Ok(n as i64),
        _ => Err(err(
            line,
            AsmErrorKind::RegisterOutOfRange(text.to_string()),
        )),
    }
}

fn parse_int(text: &str, line: usize) -> Result<i64, AsmError> {
    let (negative, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let magnitude = match body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        Some(hex) => i64::from_str_radix(hex, 16).ok(),
        None => body.parse::<i64>().ok(),
    };
    let value = magnitude.map(|m| if negative { -m } else { m });
    match value {
        Some(v) if v >= i32::MIN as i64 && v <= i32::MAX as i64 => Ok(v),
        _ => Err(err(
            line,
            AsmErrorKind::BadOperand {
                expected: "32-bit signed immediate",
                found: text.to_string(),
            },
        )),
    }
}

fn parse_float(text: &str, line: usize) -> Result<i64, AsmError> {
    let value = match text {
        "inf" | "+inf" => Some(f32::INFINITY),
        "-inf" => Some(f32::NEG_INFINITY),
        "nan" => Some(f32::NAN),
        _ => text.parse::<f32>().ok(),
    };
    value.map(|v| v.to_bits() as i32 as i64).ok_or_else(|| {
        err(
            line,
            AsmErrorKind::BadOperand {
                expected: "float immediate",
                found: text.to_string(),
            },
        )
    })
}

fn parse_instruction(text: &str, line: usize) -> Result<Pending, AsmError> {
    let (mnemonic, rest) = match text.find(char::is_whitespace) {
        Some(at) => (&text[..at], text[at..].trim()),
        None => (text, ""),
    };
    let opcode = Opcode::from_mnemonic(mnemonic)
        .ok_or_else(|| err(line, AsmErrorKind::UnknownMnemonic(mnemonic.to_string())))?;
    let operands: Vec<&str> = if rest.is_empty() {
        Vec::new()
    } else {
        rest.split(',').map(str::trim).collect()
    };
    let signature = opcode.signature();
    if operands.len() != signature.len() {
        return Err(err(
            line,
            AsmErrorKind::Arity {
                mnemonic: opcode.mnemonic(),
                expected: signature.len(),
                found: operands.len(),
            },
        ));
    }

    let mut inst = Instruction::new(opcode);
    let mut target = None;
    for ((kind, field), text) in signature.iter().zip(operands) {
        let value = match kind {
            OperandKind::Gp => parse_register(text, 'x', line)?,
            OperandKind::Fp => parse_register(text, 'f', line)?,
            OperandKind::Imm => parse_int(text, line)?,
            OperandKind::FloatImm => parse_float(text, line)?,
            OperandKind::Label => {
                if let Some(index) = text.strip_prefix('@') {
                    target = Some(Target::Index(parse_int(index, line)?));
                } else if is_label_name(text) {
                    target = Some(Target::Name(text.to_string()));
                } else {
                    return Err(err(
                        line,
                        AsmErrorKind::BadOperand {
                            expected: "label",
                            found: text.to_string(),
                        },
                    ));
                }
                0
            }
        };
        inst.set_field(*field, value);
    }
    Ok(Pending { line, inst, target })
}

/// Assemble source text into a [`Program`].
///
/// One instruction per line; `name:` defines a label (optionally followed by an
/// instruction on the same line); `;` starts a comment.
pub fn assemble(source: &str) -> Result<Program, AsmError> {
    let mut labels = BTreeMap::new();
    let mut pending = Vec::new();

    for (n, raw) in source.lines().enumerate() {
        let line = n + 1;
        let mut text = raw.split(';').next().unwrap_or("").trim();
        while let Some(colon) = text.find(':') {
            let name = text[..colon].trim();
            if !is_label_name(name) {
                return Err(err(line, AsmErrorKind::BadLabelName(name.to_string())));
            }
            if labels.insert(name.to_string(), pending.len()).is_some() {
                return Err(err(line, AsmErrorKind::DuplicateLabel(name.to_string())));
            }
            text = text[colon + 1..].trim();
        }
        if !text.is_empty() {
            pending.push(parse_instruction(text, line)?);
        }
    }

    let len = pending.len();
    let mut instructions = Vec::with_capacity(len);
    for Pending {
        line,
        mut inst,
        target,
    } in pending
    {
        if let Some(target) = target {
            let index = match target {
                Target::Name(name) => *labels
                    .get(&name)
                    .ok_or_else(|| err(line, AsmErrorKind::UnresolvedLabel(name)))?
                    as i64,
                Target::Index(i) => i,
            };
            if index < 0 || index as usize >= len {
                return Err(err(line, AsmErrorKind::TargetOutOfRange(index)));
            }
            inst.imm = index as i32;
        }
        instructions.push(inst);
    }
    Ok(Program {
        instructions,
        labels,
    })
}
