use super::{HmMatrix, NUM_BINS, NUM_HMS};

/// Basepairs on each side of the TSS that are binned.
pub const WINDOW_HALF_WIDTH: i64 = 5000;
pub const BIN_WIDTH: i64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strand {
    Plus,
    Minus,
}

/// Counts reads into 100 bp bins over `[tss - 5000, tss + 5000)`.
///
/// On the minus strand the bin order is reversed so that bin 0 is always the
/// most upstream bin in the direction of transcription. Reads outside the
/// window are dropped.
pub fn bin_reads(reads: &[Vec<i64>; NUM_HMS], tss: i64, strand: Strand) -> HmMatrix {
    let start = tss - WINDOW_HALF_WIDTH;
    let mut m = HmMatrix::zeros();
    for (hm, positions) in reads.iter().enumerate() {
        for &pos in positions {
            let offset = pos - start;
            if offset < 0 || offset >= 2 * WINDOW_HALF_WIDTH {
                continue;
            }
            let mut bin = (offset / BIN_WIDTH) as usize;
            if strand == Strand::Minus {
                bin = NUM_BINS - 1 - bin;
            }
            m.set(hm, bin, m.get(hm, bin) + 1.0);
        }
    }
    m
}
