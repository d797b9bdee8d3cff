//! Tiny assembler with forward labels, used by the model lowering and tests.

use super::isa::{Instruction, Opcode, IMM_MAX, IMM_MIN};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Label(usize);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AsmError {
    #[error("label {0} used but never bound")]
    Unbound(usize),
    #[error("branch displacement {0} words does not fit in 12 bits")]
    OutOfRange(i64),
    #[error("immediate {0} does not fit in 12 bits")]
    ImmRange(i32),
}

#[derive(Default)]
pub struct Assembler {
    words: Vec<u32>,
    labels: Vec<Option<usize>>,
    fixups: Vec<(usize, Label)>,
    error: Option<AsmError>,
}

pub const ZERO: u8 = 0;

impl Assembler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of words emitted so far.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn new_label(&mut self) -> Label {
        self.labels.push(None);
        Label(self.labels.len() - 1)
    }

    pub fn bind(&mut self, label: Label) {
        self.labels[label.0] = Some(self.words.len());
    }

    pub fn here(&mut self) -> Label {
        let l = self.new_label();
        self.bind(l);
        l
    }

    fn imm(&mut self, v: i32) -> i16 {
        if !(IMM_MIN..=IMM_MAX).contains(&v) {
            self.error.get_or_insert(AsmError::ImmRange(v));
            return 0;
        }
        v as i16
    }

    fn push(&mut self, op: Opcode, rd: u8, rs: u8, rt: u8, imm: i16) {
        self.words.push(Instruction::new(op, rd, rs, rt, imm).encode());
    }

    pub fn li(&mut self, rd: u8, value: u32) {
        self.push(Opcode::Li, rd, 0, 0, 0);
        self.words.push(value);
    }

    pub fn lw(&mut self, rd: u8, base: u8, offset: i32) {
        let imm = self.imm(offset);
        self.push(Opcode::Lw, rd, base, 0, imm);
    }

    pub fn sw(&mut self, value: u8, base: u8, offset: i32) {
        let imm = self.imm(offset);
        self.push(Opcode::Sw, 0, base, value, imm);
    }

    pub fn add(&mut self, rd: u8, rs: u8, rt: u8) {
        self.push(Opcode::Add, rd, rs, rt, 0);
    }

    pub fn sub(&mut self, rd: u8, rs: u8, rt: u8) {
        self.push(Opcode::Sub, rd, rs, rt, 0);
    }

    pub fn mul(&mut self, rd: u8, rs: u8, rt: u8) {
        self.push(Opcode::Mul, rd, rs, rt, 0);
    }

    pub fn mulfx(&mut self, rd: u8, rs: u8, rt: u8) {
        self.push(Opcode::MulFx, rd, rs, rt, 0);
    }

    pub fn sra(&mut self, rd: u8, rs: u8, shift: u8) {
        self.push(Opcode::Sra, rd, rs, 0, (shift & 31) as i16);
    }

    pub fn and(&mut self, rd: u8, rs: u8, rt: u8) {
        self.push(Opcode::And, rd, rs, rt, 0);
    }

    pub fn mov(&mut self, rd: u8, rs: u8) {
        self.add(rd, rs, ZERO);
    }

    fn branch(&mut self, op: Opcode, rs: u8, rt: u8, target: Label) {
        self.fixups.push((self.words.len(), target));
        self.push(op, 0, rs, rt, 0);
    }

    pub fn beq(&mut self, rs: u8, rt: u8, target: Label) {
        self.branch(Opcode::Beq, rs, rt, target);
    }

    pub fn blt(&mut self, rs: u8, rt: u8, target: Label) {
        self.branch(Opcode::Blt, rs, rt, target);
    }

    pub fn jmp(&mut self, target: Label) {
        self.branch(Opcode::Jmp, 0, 0, target);
    }

    pub fn preimage(&mut self, dest_leaf: u8, chunk: u8) {
        self.push(Opcode::Preimage, dest_leaf, chunk, 0, 0);
    }

    pub fn halt(&mut self, code: u8) {
        self.push(Opcode::Halt, 0, code, 0, 0);
    }

    /// Raw word, for tests that need invalid encodings.
    pub fn word(&mut self, w: u32) {
        self.words.push(w);
    }

    pub fn finish(mut self) -> Result<Vec<u32>, AsmError> {
        if let Some(e) = self.error {
            return Err(e);
        }
        for (at, label) in std::mem::take(&mut self.fixups) {
            let target = self.labels[label.0].ok_or(AsmError::Unbound(label.0))?;
            let disp = target as i64 - (at as i64 + 1);
            if disp < IMM_MIN as i64 || disp > IMM_MAX as i64 {
                return Err(AsmError::OutOfRange(disp));
            }
            self.words[at] = (self.words[at] & !0xFFF) | (disp as u32 & 0xFFF);
        }
        Ok(self.words)
    }
}

pub fn words_to_bytes(words: &[u32]) -> Vec<u8> {
    words.iter().flat_map(|w| w.to_le_bytes()).collect()
}
