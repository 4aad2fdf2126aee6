//! Wire codec for hybrid classical/quantum frames.
//!
//! Layout (all integers big-endian):
//!
//! ```text
//! offset  size  field
//!      0     2  magic 0x51 0x50
//!      2     1  version (1)
//!      3     1  flags: bit0 quantum payload, bit1 ack present, bits 2-7 zero
//!      4     4  requesting station id
//!      8     4  receiving station id
//!     12     8  transmit time (ns)
//!     20     8  operation commence time (ns, 0 = unset)
//!     28     2  qubit count q
//!     30    9q  descriptors: qubit id (4), entanglement group (4), encoding (1)
//!   30+9q    4  ack session id (0 unless bit1)
//!            2  error-correction length e
//!            e  error-correction bytes (opaque)
//!            4  CRC-32 (IEEE, reflected) over every preceding byte
//!            2  end marker 0x0E 0x0F
//! ```
//!
//! Total length is `42 + 9q + e`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: [u8; 2] = [0x51, 0x50];
pub const VERSION: u8 = 1;
pub const END_MARKER: [u8; 2] = [0x0E, 0x0F];
pub const FLAG_QUANTUM: u8 = 0x01;
pub const FLAG_ACK: u8 = 0x02;
const RESERVED_FLAGS: u8 = !(FLAG_QUANTUM | FLAG_ACK);

pub const HEADER_LEN: usize = 30;
pub const DESCRIPTOR_LEN: usize = 9;
/// Trailer bytes excluding the error-correction payload.
pub const TRAILER_FIXED_LEN: usize = 12;

/// Standard CRC-32 (IEEE 802.3, reflected, init and final xor 0xFFFFFFFF).
pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

pub fn encoded_len(qubit_count: usize, error_corr_len: usize) -> usize {
    HEADER_LEN + DESCRIPTOR_LEN * qubit_count + TRAILER_FIXED_LEN + error_corr_len
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QubitEncoding {
    Dv = 0,
    CvReference = 1,
}

impl QubitEncoding {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::Dv),
            1 => Some(Self::CvReference),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketHeader {
    pub flags: u8,
    pub requesting_station_id: u32,
    pub receiving_station_id: u32,
    pub transmit_time_ns: u64,
    pub op_commence_time_ns: u64,
    pub qubit_count: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QubitDescriptor {
    pub qubit_id: u32,
    /// 0 means not entangled with anything.
    pub entanglement_group: u32,
    pub encoding: QubitEncoding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketTrailer {
    pub ack_session_id: u32,
    #[serde(default)]
    pub error_correction: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub header: PacketHeader,
    #[serde(default)]
    pub qubits: Vec<QubitDescriptor>,
    pub trailer: PacketTrailer,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("reserved flag bits set: {0:#04x}")]
    ReservedFlagSet(u8),
    #[error("qubit_count {declared} does not match {actual} descriptors")]
    QubitCountMismatch { declared: u16, actual: usize },
    #[error("quantum-payload flag must be set iff qubit_count > 0")]
    QuantumFlagMismatch,
    #[error("ack_session_id must be 0 when the ack flag is clear")]
    AckWithoutFlag,
    #[error("error-correction block of {0} bytes exceeds 65535")]
    ErrorCorrectionTooLong(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeErrorKind {
    BadMagic,
    BadVersion(u8),
    ReservedFlagSet(u8),
    TruncatedInput,
    CrcMismatch { stored: u32, computed: u32 },
    BadEndMarker,
    BadEncoding(u8),
    QuantumFlagMismatch,
    AckWithoutFlag,
    TrailingBytes,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("{kind:?} at byte {offset}")]
pub struct DecodeError {
    pub kind: DecodeErrorKind,
    pub offset: usize,
}

impl Packet {
    /// Build a consistent packet, deriving `flags` and `qubit_count`.
    pub fn new(
        requesting_station_id: u32,
        receiving_station_id: u32,
        transmit_time_ns: u64,
        op_commence_time_ns: u64,
        qubits: Vec<QubitDescriptor>,
        ack_session_id: Option<u32>,
        error_correction: Vec<u8>,
    ) -> Result<Self, EncodeError> {
        let qubit_count = u16::try_from(qubits.len()).map_err(|_| EncodeError::QubitCountMismatch {
            declared: u16::MAX,
            actual: qubits.len(),
        })?;
        let mut flags = 0;
        if !qubits.is_empty() {
            flags |= FLAG_QUANTUM;
        }
        if ack_session_id.is_some() {
            flags |= FLAG_ACK;
        }
        let p = Self {
            header: PacketHeader {
                flags,
                requesting_station_id,
                receiving_station_id,
                transmit_time_ns,
                op_commence_time_ns,
                qubit_count,
            },
            qubits,
            trailer: PacketTrailer {
                ack_session_id: ack_session_id.unwrap_or(0),
                error_correction,
            },
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), EncodeError> {
        let h = &self.header;
        if h.flags & RESERVED_FLAGS != 0 {
            return Err(EncodeError::ReservedFlagSet(h.flags & RESERVED_FLAGS));
        }
        if usize::from(h.qubit_count) != self.qubits.len() {
            return Err(EncodeError::QubitCountMismatch {
                declared: h.qubit_count,
                actual: self.qubits.len(),
            });
        }
        if (h.qubit_count > 0) != (h.flags & FLAG_QUANTUM != 0) {
            return Err(EncodeError::QuantumFlagMismatch);
        }
        if h.flags & FLAG_ACK == 0 && self.trailer.ack_session_id != 0 {
            return Err(EncodeError::AckWithoutFlag);
        }
        if self.trailer.error_correction.len() > usize::from(u16::MAX) {
            return Err(EncodeError::ErrorCorrectionTooLong(self.trailer.error_correction.len()));
        }
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        encoded_len(self.qubits.len(), self.trailer.error_correction.len())
    }
}

pub fn encode(packet: &Packet) -> Result<Vec<u8>, EncodeError> {
    packet.validate()?;
    let h = &packet.header;
    let mut out = Vec::with_capacity(packet.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(h.flags);
    out.extend_from_slice(&h.requesting_station_id.to_be_bytes());
    out.extend_from_slice(&h.receiving_station_id.to_be_bytes());
    out.extend_from_slice(&h.transmit_time_ns.to_be_bytes());
    out.extend_from_slice(&h.op_commence_time_ns.to_be_bytes());
    out.extend_from_slice(&h.qubit_count.to_be_bytes());
    for q in &packet.qubits {
        out.extend_from_slice(&q.qubit_id.to_be_bytes());
        out.extend_from_slice(&q.entanglement_group.to_be_bytes());
        out.push(q.encoding as u8);
    }
    let t = &packet.trailer;
    out.extend_from_slice(&t.ack_session_id.to_be_bytes());
    out.extend_from_slice(&(t.error_correction.len() as u16).to_be_bytes());
    out.extend_from_slice(&t.error_correction);
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    out.extend_from_slice(&END_MARKER);
    debug_assert_eq!(out.len(), packet.encoded_len());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.pos < n {
            return Err(DecodeError {
                kind: DecodeErrorKind::TruncatedInput,
                offset: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let mut a = [0u8; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        self.array().map(u16::from_be_bytes)
    }

    fn u32(&mut self) -> Result<u32, DecodeError> {
        self.array().map(u32::from_be_bytes)
    }

    fn u64(&mut self) -> Result<u64, DecodeError> {
        self.array().map(u64::from_be_bytes)
    }
}

fn fail<T>(kind: DecodeErrorKind, offset: usize) -> Result<T, DecodeError> {
    Err(DecodeError { kind, offset })
}

/// Parse one packet occupying all of `bytes`.
///
/// Structural checks (magic, version, reserved flags, lengths) come first,
/// then the CRC, then the end marker, and only then field-level semantics, so
/// a corrupted payload byte surfaces as a CRC mismatch.
pub fn decode(bytes: &[u8]) -> Result<Packet, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.array::<2>()? != MAGIC {
        return fail(DecodeErrorKind::BadMagic, 0);
    }
    let version = r.u8()?;
    if version != VERSION {
        return fail(DecodeErrorKind::BadVersion(version), 2);
    }
    let flags = r.u8()?;
    if flags & RESERVED_FLAGS != 0 {
        return fail(DecodeErrorKind::ReservedFlagSet(flags & RESERVED_FLAGS), 3);
    }
    let requesting_station_id = r.u32()?;
    let receiving_station_id = r.u32()?;
    let transmit_time_ns = r.u64()?;
    let op_commence_time_ns = r.u64()?;
    let qubit_count = r.u16()?;

    let desc_start = r.pos;
    let raw_desc = r.take(usize::from(qubit_count) * DESCRIPTOR_LEN)?;
    let ack_offset = r.pos;
    let ack_session_id = r.u32()?;
    let ec_len = r.u16()?;
    let error_correction = r.take(usize::from(ec_len))?.to_vec();
    let crc_offset = r.pos;
    let stored = r.u32()?;
    let computed = crc32(&bytes[..crc_offset]);
    if stored != computed {
        return fail(DecodeErrorKind::CrcMismatch { stored, computed }, crc_offset);
    }
    let end_offset = r.pos;
    if r.array::<2>()? != END_MARKER {
        return fail(DecodeErrorKind::BadEndMarker, end_offset);
    }
    if r.pos != bytes.len() {
        return fail(DecodeErrorKind::TrailingBytes, r.pos);
    }

    if (qubit_count > 0) != (flags & FLAG_QUANTUM != 0) {
        return fail(DecodeErrorKind::QuantumFlagMismatch, 3);
    }
    if flags & FLAG_ACK == 0 && ack_session_id != 0 {
        return fail(DecodeErrorKind::AckWithoutFlag, ack_offset);
    }
    let mut qubits = Vec::with_capacity(usize::from(qubit_count));
    for (k, chunk) in raw_desc.chunks_exact(DESCRIPTOR_LEN).enumerate() {
        let encoding = match QubitEncoding::from_byte(chunk[8]) {
            Some(e) => e,
            None => {
                return fail(
                    DecodeErrorKind::BadEncoding(chunk[8]),
                    desc_start + k * DESCRIPTOR_LEN + 8,
                )
            }
        };
        qubits.push(QubitDescriptor {
            qubit_id: u32::from_be_bytes(chunk[0..4].try_into().unwrap()),
            entanglement_group: u32::from_be_bytes(chunk[4..8].try_into().unwrap()),
            encoding,
        });
    }

    Ok(Packet {
        header: PacketHeader {
            flags,
            requesting_station_id,
            receiving_station_id,
            transmit_time_ns,
            op_commence_time_ns,
            qubit_count,
        },
        qubits,
        trailer: PacketTrailer {
            ack_session_id,
            error_correction,
        },
    })
}
