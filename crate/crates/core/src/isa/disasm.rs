use std::collections::BTreeMap;
use std::fmt::Write;

use super::{Instruction, OperandKind, Program};

/// Render one instruction in canonical form. Branch targets print as the label
/// naming them when `targets` has one, otherwise as `@index`.
pub fn format_instruction(inst: &Instruction, targets: Option<&BTreeMap<usize, &str>>) -> String {
    let mut out = String::from(inst.opcode.mnemonic());
    for (i, (kind, field)) in inst.opcode.signature().iter().enumerate() {
        out.push_str(if i == 0 { " " } else { ", " });
        let value = inst.field(*field);
        match kind {
            OperandKind::Gp => write!(out, "x{value}").unwrap(),
            OperandKind::Fp => write!(out, "f{value}").unwrap(),
            OperandKind::Imm => write!(out, "{value}").unwrap(),
            OperandKind::FloatImm => write!(out, "{}", inst.float_imm()).unwrap(),
            OperandKind::Label => match targets.and_then(|t| t.get(&(value as usize))) {
                Some(name) => out.push_str(name),
                None => write!(out, "@{value}").unwrap(),
            },
        }
    }
    out
}

/// Canonical assembly text: labels on their own line, one instruction per line.
pub fn disassemble(program: &Program) -> String {
    let mut by_index: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (name, &index) in &program.labels {
        by_index.entry(index).or_default().push(name);
    }
    let first_label: BTreeMap<usize, &str> =
        by_index.iter().map(|(i, names)| (*i, names[0])).collect();

    let mut out = String::new();
    for (index, inst) in program.instructions.iter().enumerate() {
        for name in by_index.get(&index).into_iter().flatten() {
            writeln!(out, "{name}:").unwrap();
        }
        out.push_str(&format_instruction(inst, Some(&first_label)));
        out.push('\n');
    }
    for name in by_index
        .get(&program.instructions.len())
        .into_iter()
        .flatten()
    {
        writeln!(out, "{name}:").unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{Fp, Gp};

    #[test]
    fn empty_program_is_empty_text() {
        assert_eq!(disassemble(&Program::default()), "");
    }

    #[test]
    fn halt_alone() {
        let p = Program {
            instructions: vec![Instruction::s_halt()],
            labels: Default::default(),
        };
        assert_eq!(disassemble(&p), "s_halt\n");
        assert_eq!(format_instruction(&p.instructions[0], None), "s_halt");
    }

    #[test]
    fn operand_rendering() {
        let i = Instruction::v_red_max_idx(Fp(2), Gp(3), Gp(1), Gp(2));
        assert_eq!(i.to_string(), "v_red_max_idx f2, x3, x1, x2");
        assert_eq!(
            Instruction::s_fli(Fp(7), f32::NEG_INFINITY).to_string(),
            "s_fli f7, -inf"
        );
        assert_eq!(Instruction::s_fli(Fp(7), 0.5).to_string(), "s_fli f7, 0.5");
        assert_eq!(
            Instruction::s_bne(Gp(1), Gp(2), 9).to_string(),
            "s_bne x1, x2, @9"
        );
        assert_eq!(
            Instruction::s_addi(Gp(1), Gp(1), -64).to_string(),
            "s_addi x1, x1, -64"
        );
    }
}
