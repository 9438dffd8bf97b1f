use super::EndpointError;

/// A contiguous run of bits inside a 32-bit register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BitField {
    offset: u8,
    width: u8,
}

impl BitField {
    pub fn new(offset: u8, width: u8) -> Result<Self, EndpointError> {
        if width == 0 || offset >= 32 || offset as u32 + width as u32 > 32 {
            return Err(EndpointError::InvalidBitField { offset, width });
        }
        Ok(Self { offset, width })
    }

    pub fn offset(&self) -> u8 {
        self.offset
    }

    pub fn width(&self) -> u8 {
        self.width
    }

    /// Right-aligned mask of `width` ones.
    pub fn mask(&self) -> u32 {
        if self.width == 32 {
            u32::MAX
        } else {
            (1u32 << self.width) - 1
        }
    }

    pub fn extract(&self, register: u32) -> u32 {
        (register >> self.offset) & self.mask()
    }

    pub fn insert(&self, register: u32, value: u32) -> Result<u32, EndpointError> {
        if value & !self.mask() != 0 {
            return Err(EndpointError::ValueTooWide { value: value as u64, bits: self.width as u32 });
        }
        let placed = self.mask() << self.offset;
        Ok((register & !placed) | (value << self.offset))
    }
}
