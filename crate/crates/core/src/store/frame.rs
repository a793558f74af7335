//! Length-prefixed request/response frames.
//!
//! Every frame is a big-endian `u32` payload length followed by the payload.
//! The payload starts with a fixed 35-byte header:
//!
//! | offset | width | field                                            |
//! |--------|-------|--------------------------------------------------|
//! | 0      | 8     | request id (echoed by the reply)                 |
//! | 8      | 1     | bucket table tag                                 |
//! | 9      | 4     | bucket index                                     |
//! | 13     | 1     | op code (request) or status (reply)              |
//! | 14     | 1     | flags                                            |
//! | 15     | 8     | transaction id (0 = outside any transaction)     |
//! | 23     | 4     | attempt number                                   |
//! | 27     | 8     | scheme token                                     |
//!
//! The body follows. Storage requests carry the canonical key and the
//! operation's arguments; storage replies carry a presence byte and the
//! entry, plus the pre- and post-operation entries when `RECORD` is set.
//!
//! The token is scheme specific: the private version for version-ordered
//! access, the bucket version in optimistic replies, a bump flag when
//! releasing a commit lock.

use crate::codec::{DecodeError, PutBytes, Reader};
use crate::model::{BucketId, TableId};
use crate::store::OpKind;

pub const HEADER_LEN: usize = 35;
/// Largest accepted payload.
pub const MAX_FRAME: usize = 16 * 1024 * 1024;

/// Reply includes pre/post entries and the node logs the op in its history.
pub const FLAG_RECORD: u8 = 0x01;
/// Wait until the bucket's release counter reaches `token - 1`.
pub const FLAG_VERSION_WAIT: u8 = 0x02;
/// Release the bucket after the op: unlock it, or publish the private
/// version when combined with `FLAG_VERSION_WAIT`.
pub const FLAG_RELEASE_AFTER: u8 = 0x04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum OpCode {
    Read = 0x01,
    Append = 0x02,
    Remove = 0x03,
    WriteSeq = 0x04,
    IncrementSeq = 0x05,
    Ping = 0x10,
    Snapshot = 0x11,
    Reset = 0x12,
    History = 0x13,
    GlobalLock = 0x20,
    GlobalUnlock = 0x21,
    Lock = 0x22,
    Unlock = 0x23,
    ReserveVersion = 0x24,
    ReserveDone = 0x25,
    ReleaseVersion = 0x26,
    CommitLock = 0x27,
    CommitUnlock = 0x28,
}

impl OpCode {
    pub fn from_u8(v: u8) -> Option<Self> {
        use OpCode::*;
        Some(match v {
            0x01 => Read,
            0x02 => Append,
            0x03 => Remove,
            0x04 => WriteSeq,
            0x05 => IncrementSeq,
            0x10 => Ping,
            0x11 => Snapshot,
            0x12 => Reset,
            0x13 => History,
            0x20 => GlobalLock,
            0x21 => GlobalUnlock,
            0x22 => Lock,
            0x23 => Unlock,
            0x24 => ReserveVersion,
            0x25 => ReserveDone,
            0x26 => ReleaseVersion,
            0x27 => CommitLock,
            0x28 => CommitUnlock,
            _ => return None,
        })
    }

    pub fn storage_kind(self) -> Option<OpKind> {
        Some(match self {
            OpCode::Read => OpKind::Read,
            OpCode::Append => OpKind::Append,
            OpCode::Remove => OpKind::Remove,
            OpCode::WriteSeq => OpKind::WriteSeq,
            OpCode::IncrementSeq => OpKind::IncrementSeq,
            _ => return None,
        })
    }

    pub fn for_kind(kind: OpKind) -> Self {
        match kind {
            OpKind::Read => OpCode::Read,
            OpKind::Append => OpCode::Append,
            OpKind::Remove => OpCode::Remove,
            OpKind::WriteSeq => OpCode::WriteSeq,
            OpKind::IncrementSeq => OpCode::IncrementSeq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    Malformed = 1,
    Protocol = 2,
    Routing = 3,
    Refused = 4,
    Oversized = 5,
    UnknownOp = 6,
}

impl Status {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            0 => Status::Ok,
            1 => Status::Malformed,
            2 => Status::Protocol,
            3 => Status::Routing,
            4 => Status::Refused,
            5 => Status::Oversized,
            6 => Status::UnknownOp,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub request_id: u64,
    pub bucket: BucketId,
    /// Op code on requests, status on replies.
    pub code: u8,
    pub flags: u8,
    pub txn: u64,
    pub attempt: u32,
    pub token: u64,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn request(request_id: u64, bucket: BucketId, op: OpCode) -> Self {
        Frame {
            request_id,
            bucket,
            code: op as u8,
            flags: 0,
            txn: 0,
            attempt: 0,
            token: 0,
            body: Vec::new(),
        }
    }

    /// Reply skeleton echoing the request's id, bucket and transaction.
    pub fn reply_to(&self, status: Status) -> Self {
        Frame {
            request_id: self.request_id,
            bucket: self.bucket,
            code: status as u8,
            flags: self.flags,
            txn: self.txn,
            attempt: self.attempt,
            token: 0,
            body: Vec::new(),
        }
    }

    pub fn error(request_id: u64, status: Status, message: impl Into<String>) -> Self {
        Frame {
            request_id,
            bucket: BucketId::new(TableId::TermTable, 0),
            code: status as u8,
            flags: 0,
            txn: 0,
            attempt: 0,
            token: 0,
            body: message.into().into_bytes(),
        }
    }

    pub fn op(&self) -> Option<OpCode> {
        OpCode::from_u8(self.code)
    }

    pub fn status(&self) -> Option<Status> {
        Status::from_u8(self.code)
    }

    pub fn payload_len(&self) -> usize {
        HEADER_LEN + self.body.len()
    }

    /// Encodes the frame including its length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.payload_len());
        out.put_u32(self.payload_len() as u32);
        out.put_u64(self.request_id);
        out.extend_from_slice(&self.bucket.encode());
        out.put_u8(self.code);
        out.put_u8(self.flags);
        out.put_u64(self.txn);
        out.put_u32(self.attempt);
        out.put_u64(self.token);
        out.extend_from_slice(&self.body);
        out
    }

    /// Decodes a payload (without the length prefix).
    pub fn decode_payload(payload: &[u8]) -> Result<Self, DecodeError> {
        if payload.len() > MAX_FRAME {
            return Err(DecodeError::Invalid("frame exceeds maximum size"));
        }
        let mut r = Reader::new(payload);
        let request_id = r.u64()?;
        let bucket = BucketId::decode_from(&mut r)?;
        let code = r.u8()?;
        let flags = r.u8()?;
        let txn = r.u64()?;
        let attempt = r.u32()?;
        let token = r.u64()?;
        let body = r.take(r.remaining())?.to_vec();
        Ok(Frame {
            request_id,
            bucket,
            code,
            flags,
            txn,
            attempt,
            token,
            body,
        })
    }

    /// Decodes a complete frame; the length prefix must match exactly.
    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let len = r.u32()? as usize;
        if len > MAX_FRAME {
            return Err(DecodeError::Invalid("frame exceeds maximum size"));
        }
        let payload = r.take(len)?;
        r.finish()?;
        Self::decode_payload(payload)
    }
}

/// Best-effort request id from a possibly damaged frame, so error replies
/// can still be matched.
pub fn salvage_request_id(bytes: &[u8]) -> u64 {
    bytes
        .get(4..12)
        .map(|b| u64::from_be_bytes(b.try_into().unwrap()))
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let mut f = Frame::request(0x0102030405060708, BucketId::new(TableId::SeqNoTable, 0x0a0b0c0d), OpCode::Lock);
        f.flags = FLAG_RECORD;
        f.txn = 9;
        f.attempt = 2;
        f.token = 0xff;
        f.body = vec![0xaa, 0xbb];
        let bytes = f.encode();
        assert_eq!(&bytes[0..4], &[0, 0, 0, 37]);
        assert_eq!(&bytes[4..12], &[1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(&bytes[12..17], &[3, 0x0a, 0x0b, 0x0c, 0x0d]);
        assert_eq!(bytes[17], 0x22);
        assert_eq!(bytes[18], FLAG_RECORD);
        assert_eq!(&bytes[19..27], &9u64.to_be_bytes());
        assert_eq!(&bytes[27..31], &2u32.to_be_bytes());
        assert_eq!(&bytes[31..39], &0xffu64.to_be_bytes());
        assert_eq!(&bytes[39..], &[0xaa, 0xbb]);
    }

    #[test]
    fn truncated_and_padded_frames_rejected() {
        let bytes = Frame::request(1, BucketId::new(TableId::TermTable, 1), OpCode::Ping).encode();
        for cut in 0..bytes.len() {
            assert!(Frame::decode(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut padded = bytes.clone();
        padded.push(0);
        assert!(Frame::decode(&padded).is_err());
        assert_eq!(salvage_request_id(&bytes[..12]), 1);
    }

    #[test]
    fn oversized_length_rejected() {
        let mut bytes = ((MAX_FRAME + 1) as u32).to_be_bytes().to_vec();
        bytes.extend_from_slice(&[0; HEADER_LEN]);
        assert!(Frame::decode(&bytes).is_err());
    }

    proptest! {
        #[test]
        fn frames_round_trip(id in any::<u64>(), table in 0u8..4, index in any::<u32>(), code in any::<u8>(),
                             flags in any::<u8>(), txn in any::<u64>(), attempt in any::<u32>(),
                             token in any::<u64>(), body in proptest::collection::vec(any::<u8>(), 0..64)) {
            let f = Frame {
                request_id: id,
                bucket: BucketId::new(TableId::from_tag(table).unwrap(), index),
                code, flags, txn, attempt, token, body,
            };
            let bytes = f.encode();
            prop_assert_eq!(bytes.len() - 4, f.payload_len());
            prop_assert_eq!(Frame::decode(&bytes).unwrap(), f);
        }
    }
}
