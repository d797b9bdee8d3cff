//! Fixed memory map of the VM. Every region is leaf aligned and disjoint.

pub const PROGRAM_BASE: u32 = 0x0000_0000;
pub const INPUT_BASE: u32 = 0x0200_0000;
pub const OUTPUT_BASE: u32 = 0x0300_0000;
pub const ORACLE_KEY_BASE: u32 = 0x0400_0000;
pub const ORACLE_VALUE_BASE: u32 = 0x0410_0000;
pub const MODEL_BASE: u32 = 0x0800_0000;
pub const HEAP_BASE: u32 = 0x1000_0000;

/// Subtree heights of the fields the entrance/exit checks reason about.
pub const PROGRAM_FIELD_LEVEL: u8 = 14;
pub const INPUT_FIELD_LEVEL: u8 = 3;
pub const OUTPUT_FIELD_LEVEL: u8 = 12;
pub const MODEL_FIELD_LEVEL: u8 = 12;

/// Height of the chunk tree whose root keys a preimage (128 KiB max value).
pub const PREIMAGE_LEVEL: u8 = 12;
pub const MAX_PREIMAGE_BYTES: usize = 32 << PREIMAGE_LEVEL;
pub const MAX_PREIMAGE_CHUNKS: u32 = 1 << PREIMAGE_LEVEL;

/// Leaves available in the oracle-value region.
pub const ORACLE_VALUE_LEAVES: u32 = (MODEL_BASE - ORACLE_VALUE_BASE) / 32;

/// Bytes covered by a field of the given height.
pub const fn field_bytes(level: u8) -> u32 {
    32u32 << level
}
