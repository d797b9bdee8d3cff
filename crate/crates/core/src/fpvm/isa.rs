//! MiniVM instruction encoding.
//!
//! One 32-bit little-endian word per instruction:
//!
//! ```text
//!  31      24 23  20 19  16 15  12 11          0
//! +----------+------+------+------+-------------+
//! |  opcode  |  rd  |  rs  |  rt  |  imm (i12)  |
//! +----------+------+------+------+-------------+
//! ```
//!
//! `LI` is followed by a second word holding the full 32-bit immediate.

use std::fmt;

/// Fractional bits used by `MULFX`.
pub const FRAC_BITS: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    /// rd = next word; pc += 8
    Li = 0x01,
    /// rd = mem32[rs + imm]
    Lw = 0x02,
    /// mem32[rs + imm] = rt
    Sw = 0x03,
    Add = 0x04,
    Sub = 0x05,
    /// Low 32 bits of the product.
    Mul = 0x06,
    /// (rs * rt as i64) >> 16, wrapped to 32 bits.
    MulFx = 0x07,
    /// rd = rs >> (imm & 31), arithmetic.
    Sra = 0x08,
    And = 0x09,
    /// if rs == rt: pc += 4 + 4*imm
    Beq = 0x0A,
    /// if rs < rt (signed): pc += 4 + 4*imm
    Blt = 0x0B,
    /// pc += 4 + 4*imm
    Jmp = 0x0C,
    /// Copy chunk `rs` of the preimage keyed at the oracle-key leaf into
    /// oracle-value leaf `rd`.
    Preimage = 0x0D,
    /// exited = true, exit_code = rs & 0xff
    Halt = 0x0E,
}

impl Opcode {
    pub fn from_u8(b: u8) -> Option<Self> {
        use Opcode::*;
        Some(match b {
            0x01 => Li,
            0x02 => Lw,
            0x03 => Sw,
            0x04 => Add,
            0x05 => Sub,
            0x06 => Mul,
            0x07 => MulFx,
            0x08 => Sra,
            0x09 => And,
            0x0A => Beq,
            0x0B => Blt,
            0x0C => Jmp,
            0x0D => Preimage,
            0x0E => Halt,
            _ => return None,
        })
    }

    pub fn mnemonic(self) -> &'static str {
        use Opcode::*;
        match self {
            Li => "li",
            Lw => "lw",
            Sw => "sw",
            Add => "add",
            Sub => "sub",
            Mul => "mul",
            MulFx => "mulfx",
            Sra => "sra",
            And => "and",
            Beq => "beq",
            Blt => "blt",
            Jmp => "jmp",
            Preimage => "preimage",
            Halt => "halt",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Instruction {
    pub opcode: Opcode,
    pub rd: u8,
    pub rs: u8,
    pub rt: u8,
    /// Sign-extended 12-bit immediate.
    pub imm: i16,
}

pub const IMM_MIN: i32 = -2048;
pub const IMM_MAX: i32 = 2047;

impl Instruction {
    pub fn new(opcode: Opcode, rd: u8, rs: u8, rt: u8, imm: i16) -> Self {
        debug_assert!(rd < 16 && rs < 16 && rt < 16);
        debug_assert!((IMM_MIN..=IMM_MAX).contains(&(imm as i32)));
        Instruction {
            opcode,
            rd,
            rs,
            rt,
            imm,
        }
    }

    pub fn encode(&self) -> u32 {
        ((self.opcode as u32) << 24)
            | ((self.rd as u32 & 0xF) << 20)
            | ((self.rs as u32 & 0xF) << 16)
            | ((self.rt as u32 & 0xF) << 12)
            | (self.imm as u32 & 0xFFF)
    }

    /// `Err` carries the unknown opcode byte.
    pub fn decode(word: u32) -> Result<Self, u8> {
        let op = (word >> 24) as u8;
        let opcode = Opcode::from_u8(op).ok_or(op)?;
        let raw = (word & 0xFFF) as i16;
        let imm = (raw << 4) >> 4;
        Ok(Instruction {
            opcode,
            rd: ((word >> 20) & 0xF) as u8,
            rs: ((word >> 16) & 0xF) as u8,
            rt: ((word >> 12) & 0xF) as u8,
            imm,
        })
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Opcode::*;
        let m = self.opcode.mnemonic();
        match self.opcode {
            Li => write!(f, "{m} r{}, <next>", self.rd),
            Lw => write!(f, "{m} r{}, {}(r{})", self.rd, self.imm, self.rs),
            Sw => write!(f, "{m} r{}, {}(r{})", self.rt, self.imm, self.rs),
            Sra => write!(f, "{m} r{}, r{}, {}", self.rd, self.rs, self.imm & 31),
            Beq | Blt => write!(f, "{m} r{}, r{}, {:+}", self.rs, self.rt, self.imm),
            Jmp => write!(f, "{m} {:+}", self.imm),
            Preimage => write!(f, "{m} r{}, r{}", self.rd, self.rs),
            Halt => write!(f, "{m} r{}", self.rs),
            _ => write!(f, "{m} r{}, r{}, r{}", self.rd, self.rs, self.rt),
        }
    }
}

pub fn mulfx(a: u32, b: u32) -> u32 {
    (((a as i32 as i64) * (b as i32 as i64)) >> FRAC_BITS) as u32
}
