use crate::error::{Error, Result};

/// Packed bits, most significant bit first within each byte. Pad bits are zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BitStream {
    bytes: Vec<u8>,
    bit_count: u64,
}

impl BitStream {
    pub fn from_parts(bytes: Vec<u8>, bit_count: u64) -> Result<Self> {
        if bit_count > bytes.len() as u64 * 8 || bytes.len() as u64 != bit_count.div_ceil(8) {
            return Err(Error::Corruption(format!(
                "{bit_count} bits cannot occupy {} bytes",
                bytes.len()
            )));
        }
        let pad = (bytes.len() as u64 * 8 - bit_count) as u32;
        if pad > 0 && bytes[bytes.len() - 1] & ((1u8 << pad) - 1) != 0 {
            return Err(Error::Corruption("nonzero pad bits".into()));
        }
        Ok(Self { bytes, bit_count })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn bit_count(&self) -> u64 {
        self.bit_count
    }

    pub fn reader(&self) -> BitReader<'_> {
        BitReader {
            stream: self,
            pos: 0,
        }
    }
}

#[derive(Debug, Default)]
pub struct BitWriter {
    stream: BitStream,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `len` bits of `value`, most significant first.
    pub fn push(&mut self, value: u64, len: u8) {
        for i in (0..len).rev() {
            let bit = (value >> i) & 1;
            let offset = self.stream.bit_count % 8;
            if offset == 0 {
                self.stream.bytes.push(0);
            }
            if bit == 1 {
                let last = self.stream.bytes.len() - 1;
                self.stream.bytes[last] |= 0x80 >> offset;
            }
            self.stream.bit_count += 1;
        }
    }

    pub fn finish(self) -> BitStream {
        self.stream
    }
}

#[derive(Debug)]
pub struct BitReader<'a> {
    stream: &'a BitStream,
    pos: u64,
}

impl BitReader<'_> {
    pub fn remaining(&self) -> u64 {
        self.stream.bit_count - self.pos
    }

    pub fn read_bit(&mut self) -> Option<u8> {
        if self.pos >= self.stream.bit_count {
            return None;
        }
        let byte = self.stream.bytes[(self.pos / 8) as usize];
        let bit = (byte >> (7 - (self.pos % 8))) & 1;
        self.pos += 1;
        Some(bit)
    }

    pub fn read(&mut self, len: u8) -> Option<u64> {
        let mut v = 0u64;
        for _ in 0..len {
            v = (v << 1) | self.read_bit()? as u64;
        }
        Some(v)
    }
}

/// Packs fixed-width values.
pub fn pack_fixed(values: impl IntoIterator<Item = u64>, width: u8) -> BitStream {
    let mut w = BitWriter::new();
    for v in values {
        w.push(v, width);
    }
    w.finish()
}

pub fn unpack_fixed(stream: &BitStream, width: u8, count: usize) -> Result<Vec<u64>> {
    let mut r = stream.reader();
    let out = (0..count)
        .map(|i| {
            r.read(width)
                .ok_or_else(|| Error::Corruption(format!("fixed-width stream ends before value {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if r.remaining() != 0 {
        return Err(Error::Corruption(format!("{} surplus bits in fixed-width stream", r.remaining())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_first_packing() {
        let mut w = BitWriter::new();
        w.push(0b101, 3);
        w.push(0b1, 1);
        w.push(0b11111, 5);
        let s = w.finish();
        assert_eq!(s.bit_count(), 9);
        assert_eq!(s.bytes(), &[0b1011_1111, 0b1000_0000]);
        let mut r = s.reader();
        assert_eq!(r.read(3), Some(0b101));
        assert_eq!(r.read(6), Some(0b111111));
        assert_eq!(r.read_bit(), None);
    }

    #[test]
    fn from_parts_checks_padding() {
        assert!(BitStream::from_parts(vec![0b1000_0001], 1).is_err());
        assert!(BitStream::from_parts(vec![0b1000_0000], 1).is_ok());
        assert!(BitStream::from_parts(vec![0, 0], 3).is_err());
    }

    #[test]
    fn fixed_width_round_trip() {
        let vals = vec![3u64, 0, 31, 17, 8];
        let s = pack_fixed(vals.clone(), 5);
        assert_eq!(s.bit_count(), 25);
        assert_eq!(unpack_fixed(&s, 5, 5).unwrap(), vals);
        assert!(unpack_fixed(&s, 5, 6).is_err());
        assert!(unpack_fixed(&s, 5, 4).is_err());
    }
}
