//! `.g2gs` container: a fixed header, the quantizer table and a bit-packed
//! payload of per-primitive codes.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "G2GS"
//!      4     1  version (1)
//!      5     1  profile (0 = 12/10/6, 1 = custom)
//!      6     4  height, u32 LE
//!     10     4  width, u32 LE
//!     14     4  primitive count N, u32 LE
//!     18     3  bit depths: position, covariance, color
//!     21    64  8 × (step f32 LE, offset f32 LE), channel order
//!     85     …  N × 8 codes, MSB-first, zero-padded to a byte
//! ```

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::GaussianCloud;
use crate::quantizer::{
    cloud_from_attributes, stored_attributes, LsqChannelQuantizer, QuantizerBank, DEFAULT_BIT_DEPTHS,
};

pub const MAGIC: [u8; 4] = *b"G2GS";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 21;
pub const TABLE_BYTES: usize = 64;

const PROFILE_DEFAULT: u8 = 0;
const PROFILE_CUSTOM: u8 = 1;

/// Payload size in bytes for `count` primitives.
pub fn payload_bytes(count: usize, bits_per_primitive: usize) -> usize {
    (count * bits_per_primitive).div_ceil(8)
}

/// Bits per pixel of a stream of `byte_len` bytes.
pub fn bits_per_pixel(byte_len: usize, height: usize, width: usize) -> f64 {
    (byte_len * 8) as f64 / (height * width) as f64
}

/// A parsed stream: image size, quantizer table and per-primitive codes.
#[derive(Debug, Clone, PartialEq)]
pub struct Bitstream {
    pub height: u32,
    pub width: u32,
    pub bank: QuantizerBank,
    pub codes: Vec<[u32; 8]>,
}

/// Output of [`decode`].
#[derive(Debug, Clone)]
pub struct Decoded {
    pub cloud: GaussianCloud,
    pub height: usize,
    pub width: usize,
    pub bank: QuantizerBank,
}

fn dim_u32(v: usize, what: &'static str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::TooLarge(what))
}

impl Bitstream {
    /// Quantizes a cloud. The bank is rounded to `f32` first so the codes
    /// agree with what a decoder reconstructs.
    pub fn from_cloud(cloud: &GaussianCloud, bank: &QuantizerBank, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions { height, width });
        }
        dim_u32(cloud.len(), "primitive count")?;
        let mut bank = bank.clone();
        bank.round_to_f32();
        let codes = (0..cloud.len())
            .map(|i| bank.quantize(&stored_attributes(cloud, i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            height: dim_u32(height, "height")?,
            width: dim_u32(width, "width")?,
            bank,
            codes,
        })
    }

    /// Dequantized cloud (direct covariance, zero filter variance).
    pub fn to_cloud(&self) -> Result<GaussianCloud> {
        let rows = self
            .codes
            .iter()
            .map(|c| {
                let row = self.bank.dequantize(c)?;
                if row.iter().all(|v| v.is_finite()) {
                    Ok(row)
                } else {
                    Err(Error::Malformed("attribute does not dequantize to a finite value"))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        cloud_from_attributes(&rows, rows.len())
    }

    pub fn byte_len(&self) -> usize {
        HEADER_BYTES + TABLE_BYTES + payload_bytes(self.codes.len(), self.bank.bits_per_primitive())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let depths = self.bank.bit_depths();
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(if depths == DEFAULT_BIT_DEPTHS {
            PROFILE_DEFAULT
        } else {
            PROFILE_CUSTOM
        });
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&dim_u32(self.codes.len(), "primitive count")?.to_le_bytes());
        out.extend_from_slice(&depths);
        for q in self.bank.channels() {
            out.extend_from_slice(&(q.scale() as f32).to_le_bytes());
            out.extend_from_slice(&(q.offset() as f32).to_le_bytes());
        }
        let widths: Vec<u8> = self.bank.channels().iter().map(|q| q.bits()).collect();
        let mut writer = BitWriter::new(&mut out);
        for row in &self.codes {
            for (code, &bits) in row.iter().zip(&widths) {
                if *code >> bits != 0 {
                    return Err(Error::CodeOutOfRange { code: *code, bits });
                }
                writer.write(*code, bits);
            }
        }
        writer.finish();
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let need = |n: usize| {
            if bytes.len() < n {
                Err(Error::Truncated {
                    needed: n,
                    available: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(MAGIC.len())?;
        if bytes[..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        need(5)?;
        if bytes[4] != VERSION {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        need(HEADER_BYTES)?;
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let profile = bytes[5];
        let height = u32_at(6);
        let width = u32_at(10);
        let count = u32_at(14) as usize;
        let depths = [bytes[18], bytes[19], bytes[20]];
        match profile {
            PROFILE_DEFAULT if depths != DEFAULT_BIT_DEPTHS => {
                return Err(Error::Malformed("default profile with non-default bit depths"))
            }
            PROFILE_DEFAULT | PROFILE_CUSTOM => {}
            _ => return Err(Error::Malformed("unknown profile")),
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions {
                height: height as usize,
                width: width as usize,
            });
        }
        let layout = QuantizerBank::new(depths)?;

        need(HEADER_BYTES + TABLE_BYTES)?;
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as f64;
        let mut channels = *layout.channels();
        for (i, q) in channels.iter_mut().enumerate() {
            let o = HEADER_BYTES + 8 * i;
            let (scale, offset) = (f32_at(o), f32_at(o + 4));
            if !(scale.is_finite() && offset.is_finite() && scale > 0.0) {
                return Err(Error::Malformed("invalid quantizer parameters"));
            }
            *q = LsqChannelQuantizer::with_params(q.bits(), scale, offset, q.domain())?;
            if q.scale() != scale {
                return Err(Error::Malformed("quantizer step below minimum"));
            }
        }
        let bank = QuantizerBank::from_channels(channels)?;

        let bits = bank.bits_per_primitive();
        let payload = count
            .checked_mul(bits)
            .map(|b| b.div_ceil(8))
            .ok_or(Error::TooLarge("payload"))?;
        let total = HEADER_BYTES + TABLE_BYTES + payload;
        need(total)?;
        if bytes.len() > total {
            return Err(Error::TrailingBytes(bytes.len() - total));
        }
        let mut reader = BitReader::new(&bytes[HEADER_BYTES + TABLE_BYTES..]);
        let widths: Vec<u8> = bank.channels().iter().map(|q| q.bits()).collect();
        let mut codes = Vec::with_capacity(count);
        for _ in 0..count {
            let mut row = [0u32; 8];
            for (c, &b) in row.iter_mut().zip(&widths) {
                *c = reader.read(b);
            }
            codes.push(row);
        }
        if !reader.padding_is_zero() {
            return Err(Error::Malformed("non-zero padding bits"));
        }
        Ok(Self {
            height,
            width,
            bank,
            codes,
        })
    }
}

/// Quantizes and serializes a cloud for an `height × width` image.
pub fn encode(cloud: &GaussianCloud, bank: &QuantizerBank, height: usize, width: usize) -> Result<Vec<u8>> {
    Bitstream::from_cloud(cloud, bank, height, width)?.to_bytes()
}

/// Parses a stream and reconstructs the dequantized cloud.
pub fn decode(bytes: &[u8]) -> Result<Decoded> {
    let stream = Bitstream::from_bytes(bytes)?;
    Ok(Decoded {
        cloud: stream.to_cloud()?,
        height: stream.height as usize,
        width: stream.width as usize,
        bank: stream.bank,
    })
}

struct BitWriter<'a> {
    out: &'a mut Vec<u8>,
    acc: u64,
    filled: u32,
}

impl<'a> BitWriter<'a> {
    fn new(out: &'a mut Vec<u8>) -> Self {
        Self { out, acc: 0, filled: 0 }
    }

    fn write(&mut self, value: u32, bits: u8) {
        self.acc = (self.acc << bits) | value as u64;
        self.filled += bits as u32;
        while self.filled >= 8 {
            self.filled -= 8;
            self.out.push((self.acc >> self.filled) as u8);
        }
        self.acc &= (1u64 << self.filled) - 1;
    }

    fn finish(self) {
        if self.filled > 0 {
            self.out.push((self.acc << (8 - self.filled)) as u8);
        }
    }
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn bit(&self, i: usize) -> u32 {
        ((self.data[i / 8] >> (7 - i % 8)) & 1) as u32
    }

    fn read(&mut self, bits: u8) -> u32 {
        let mut v = 0;
        for _ in 0..bits {
            v = (v << 1) | self.bit(self.pos);
            self.pos += 1;
        }
        v
    }

    fn padding_is_zero(&self) -> bool {
        (self.pos..self.data.len() * 8).all(|i| self.bit(i) == 0)
    }
}
