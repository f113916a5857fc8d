use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use super::{decode, Instruction, IsaError};

pub const CONTAINER_MAGIC: [u8; 4] = *b"MB01";
pub const CONTAINER_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 6 * 4;

/// A loadable program: code words, initialized data and optional symbols.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct ProgramImage {
    pub entry: u32,
    pub text_base: u32,
    pub data_base: u32,
    pub text: Vec<u32>,
    pub data: Vec<u8>,
    /// Assembler labels; not stored in the container.
    pub symbols: BTreeMap<String, u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ImageError {
    BadMagic,
    TruncatedImage,
    VersionMismatch(u32),
    /// Header fields break the container invariants.
    Invalid(&'static str),
}

impl fmt::Display for ImageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageError::BadMagic => f.write_str("bad container magic"),
            ImageError::TruncatedImage => f.write_str("truncated image"),
            ImageError::VersionMismatch(v) => write!(f, "unsupported container version {v}"),
            ImageError::Invalid(why) => write!(f, "invalid image: {why}"),
        }
    }
}

impl core::error::Error for ImageError {}

impl ProgramImage {
    pub fn text_end(&self) -> u32 {
        self.text_base.wrapping_add(4 * self.text.len() as u32)
    }

    pub fn contains_text(&self, addr: u32) -> bool {
        addr >= self.text_base && addr < self.text_end() && addr.is_multiple_of(4)
    }

    pub fn word_at(&self, addr: u32) -> Option<u32> {
        if !self.contains_text(addr) {
            return None;
        }
        self.text.get(((addr - self.text_base) / 4) as usize).copied()
    }

    pub fn instruction_at(&self, addr: u32) -> Option<Result<Instruction, IsaError>> {
        self.word_at(addr).map(|w| decode(w, addr))
    }

    /// Addresses of every text word, in order.
    pub fn text_addresses(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.text.len() as u32).map(move |i| self.text_base + 4 * i)
    }

    pub fn validate(&self) -> Result<(), ImageError> {
        if !self.text_base.is_multiple_of(4) || !self.entry.is_multiple_of(4) {
            return Err(ImageError::Invalid("text base and entry must be word aligned"));
        }
        if self.text.is_empty() || self.entry < self.text_base || self.entry >= self.text_end() {
            return Err(ImageError::Invalid("entry outside text"));
        }
        let text = (self.text_base as u64, self.text_base as u64 + 4 * self.text.len() as u64);
        let data = (self.data_base as u64, self.data_base as u64 + self.data.len() as u64);
        if !self.data.is_empty() && text.0 < data.1 && data.0 < text.1 {
            return Err(ImageError::Invalid("text and data overlap"));
        }
        Ok(())
    }
}

/// Serializes an image into the `MB01` container.
pub fn save_image(image: &ProgramImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * image.text.len() + image.data.len());
    out.extend_from_slice(&CONTAINER_MAGIC);
    for v in [
        CONTAINER_VERSION,
        image.entry,
        image.text_base,
        4 * image.text.len() as u32,
        image.data_base,
        image.data.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for w in &image.text {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&image.data);
    out
}

pub fn load_image(bytes: &[u8]) -> Result<ProgramImage, ImageError> {
    if bytes.len() < 4 || bytes[..4] != CONTAINER_MAGIC {
        return Err(ImageError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(ImageError::TruncatedImage);
    }
    let word = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]])
    };
    let version = word(0);
    if version != CONTAINER_VERSION {
        return Err(ImageError::VersionMismatch(version));
    }
    let (entry, text_base, text_size, data_base, data_size) = (word(1), word(2), word(3), word(4), word(5));
    if text_size % 4 != 0 {
        return Err(ImageError::TruncatedImage);
    }
    let body = &bytes[HEADER_LEN..];
    let need = text_size as u64 + data_size as u64;
    if (body.len() as u64) < need {
        return Err(ImageError::TruncatedImage);
    }
    if body.len() as u64 > need {
        return Err(ImageError::Invalid("trailing bytes after data section"));
    }
    let (text_bytes, data) = body.split_at(text_size as usize);
    let text = text_bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    let image = ProgramImage { entry, text_base, data_base, text, data: data.to_vec(), symbols: BTreeMap::new() };
    image.validate()?;
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn minimal() -> ProgramImage {
        ProgramImage { entry: 0x400, text_base: 0x400, data_base: 0x1000, text: vec![0], ..Default::default() }
    }

    #[test]
    fn minimal_image_round_trips_byte_identically() {
        let bytes = save_image(&minimal());
        assert_eq!(bytes.len(), HEADER_LEN + 4);
        assert_eq!(&bytes[..4], b"MB01");
        let loaded = load_image(&bytes).unwrap();
        assert_eq!(loaded, minimal());
        assert_eq!(save_image(&loaded), bytes);
    }

    #[test]
    fn header_errors() {
        assert_eq!(load_image(b"XX01"), Err(ImageError::BadMagic));
        let mut bytes = save_image(&minimal());
        bytes[4] = 2;
        assert_eq!(load_image(&bytes), Err(ImageError::VersionMismatch(2)));

        let mut bytes = save_image(&minimal());
        // text_size_bytes = 3
        bytes[16..20].copy_from_slice(&3u32.to_le_bytes());
        assert_eq!(load_image(&bytes), Err(ImageError::TruncatedImage));

        let bytes = save_image(&minimal());
        assert_eq!(load_image(&bytes[..bytes.len() - 1]), Err(ImageError::TruncatedImage));
    }

    #[test]
    fn entry_must_be_inside_text() {
        let mut img = minimal();
        img.entry = 0x404;
        assert!(load_image(&save_image(&img)).is_err());
    }

    proptest! {
        #[test]
        fn save_load_round_trip(text in proptest::collection::vec(any::<u32>(), 1..64),
                                data in proptest::collection::vec(any::<u8>(), 0..64),
                                entry_idx in 0usize..64) {
            let img = ProgramImage {
                entry: 0x0040_0000 + 4 * (entry_idx % text.len()) as u32,
                text_base: 0x0040_0000,
                data_base: 0x1000_0000,
                text,
                data,
                symbols: BTreeMap::new(),
            };
            let bytes = save_image(&img);
            prop_assert_eq!(load_image(&bytes).unwrap(), img);
        }
    }
}
