//! Run-length encoding of binary masks.
//!
//! Counts alternate background/foreground runs over the row-major pixel
//! order, always starting with a (possibly zero) background run.
//!
//! File layout, all integers u32 little-endian:
//! `b"RLEM"`, version, frame count, h, w, then per frame the run count
//! followed by the runs.

use crate::error::{schema, Result};
use crate::mask::Mask;

const MAGIC: &[u8; 4] = b"RLEM";
const VERSION: u32 = 1;

pub fn encode(mask: &Mask) -> Vec<u32> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &b in mask.bits() {
        if b != current {
            counts.push(run);
            run = 0;
            current = b;
        }
        run += 1;
    }
    counts.push(run);
    counts
}

pub fn decode(h: usize, w: usize, counts: &[u32]) -> Result<Mask> {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    if total != (h * w) as u64 {
        return schema(format!("rle counts sum to {total}, expected {}", h * w));
    }
    let mut bits = Vec::with_capacity(h * w);
    for (i, &c) in counts.iter().enumerate() {
        bits.extend(std::iter::repeat(i % 2 == 1).take(c as usize));
    }
    Ok(Mask::from_bits(h, w, bits))
}

/// Serializes a sequence of equally sized masks.
pub fn write_masks(masks: &[Mask], h: usize, w: usize) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [VERSION, masks.len() as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for m in masks {
        assert!(m.h() == h && m.w() == w, "mask size differs from header");
        let counts = encode(m);
        out.extend_from_slice(&(counts.len() as u32).to_le_bytes());
        for c in counts {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

pub fn read_masks(bytes: &[u8]) -> Result<(Vec<Mask>, usize, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return schema("bad rle magic");
    }
    let version = r.u32()?;
    if version != VERSION {
        return schema(format!("rle version {version}, expected {VERSION}"));
    }
    let (n, h, w) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let mut masks = Vec::with_capacity(n);
    for _ in 0..n {
        let k = r.u32()? as usize;
        let counts = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        masks.push(decode(h, w, &counts)?);
    }
    if r.pos != bytes.len() {
        return schema("trailing bytes after rle payload");
    }
    Ok((masks, h, w))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return schema("truncated rle payload");
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
