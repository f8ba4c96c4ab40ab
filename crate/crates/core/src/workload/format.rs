//! Binary trace files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! header  16 bytes   "RNBWTRC1" | record count (u64)
//! record  16 bytes   op (0 read, 1 write) | tid | 6 zero bytes | vaddr (u64)
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Op, TraceRecord, VirtualAddress};

pub const MAGIC: &[u8; 8] = b"RNBWTRC1";
pub const HEADER_BYTES: u64 = 16;
pub const RECORD_BYTES: u64 = 16;

pub fn encode_record(record: &TraceRecord) -> [u8; 16] {
    let mut out = [0u8; 16];
    out[0] = u8::from(record.op.is_write());
    out[1] = record.tid;
    out[8..].copy_from_slice(&record.vaddr.raw().to_le_bytes());
    out
}

/// `offset` is the record's position in the file, for error messages.
pub fn decode_record(bytes: &[u8; 16], offset: u64) -> Result<TraceRecord> {
    let op = match bytes[0] {
        0 => Op::Read,
        1 => Op::Write,
        other => return Err(Error::TraceFormat { offset, message: format!("invalid op byte {other}") }),
    };
    if bytes[2..8].iter().any(|&b| b != 0) {
        return Err(Error::TraceFormat { offset: offset + 2, message: "reserved bytes are not zero".into() });
    }
    let raw = u64::from_le_bytes(bytes[8..].try_into().expect("8 bytes"));
    let vaddr = VirtualAddress::new(raw)
        .map_err(|_| Error::TraceFormat { offset: offset + 8, message: format!("address {raw:#x} exceeds 48 bits") })?;
    Ok(TraceRecord::new(op, vaddr, bytes[1]))
}

/// Streams records to a seekable sink; the count is patched in by
/// [`TraceWriter::finish`].
pub struct TraceWriter<W: Write + Seek> {
    inner: BufWriter<W>,
    count: u64,
}

impl<W: Write + Seek> TraceWriter<W> {
    pub fn new(sink: W) -> Result<Self> {
        let mut inner = BufWriter::new(sink);
        let io = |e| Error::io("writing trace header", e);
        inner.write_all(MAGIC).map_err(io)?;
        inner.write_all(&0u64.to_le_bytes()).map_err(io)?;
        Ok(Self { inner, count: 0 })
    }

    pub fn write(&mut self, record: &TraceRecord) -> Result<()> {
        self.inner.write_all(&encode_record(record)).map_err(|e| Error::io("writing trace record", e))?;
        self.count += 1;
        Ok(())
    }

    /// Fills in the record count and flushes. Returns the count.
    pub fn finish(mut self) -> Result<u64> {
        let io = |e| Error::io("finishing trace", e);
        self.inner.seek(SeekFrom::Start(MAGIC.len() as u64)).map_err(io)?;
        self.inner.write_all(&self.count.to_le_bytes()).map_err(io)?;
        self.inner.flush().map_err(io)?;
        Ok(self.count)
    }
}

pub fn write_trace(path: impl AsRef<Path>, records: impl IntoIterator<Item = TraceRecord>) -> Result<u64> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut w = TraceWriter::new(file)?;
    for r in records {
        w.write(&r)?;
    }
    w.finish()
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Iterator over the records of a trace. After the last record it checks
/// that no trailing bytes remain.
pub struct TraceReader<R: Read> {
    inner: BufReader<R>,
    expected: u64,
    read: u64,
    done: bool,
}

impl<R: Read> TraceReader<R> {
    pub fn new(source: R) -> Result<Self> {
        let mut inner = BufReader::new(source);
        let mut header = [0u8; HEADER_BYTES as usize];
        let n = read_full(&mut inner, &mut header).map_err(|e| Error::io("reading trace header", e))?;
        if n < header.len() {
            return Err(Error::TraceFormat { offset: n as u64, message: "header truncated".into() });
        }
        if &header[..8] != MAGIC {
            return Err(Error::TraceFormat { offset: 0, message: "bad magic".into() });
        }
        let expected = u64::from_le_bytes(header[8..].try_into().expect("8 bytes"));
        Ok(Self { inner, expected, read: 0, done: false })
    }

    /// Record count announced by the header.
    pub fn expected(&self) -> u64 {
        self.expected
    }

    fn offset(&self) -> u64 {
        HEADER_BYTES + self.read * RECORD_BYTES
    }

    fn next_record(&mut self) -> Result<Option<TraceRecord>> {
        if self.read == self.expected {
            let mut probe = [0u8; 1];
            let n = read_full(&mut self.inner, &mut probe).map_err(|e| Error::io("reading trace", e))?;
            if n != 0 {
                return Err(Error::TraceFormat { offset: self.offset(), message: "trailing data after last record".into() });
            }
            return Ok(None);
        }
        let mut buf = [0u8; RECORD_BYTES as usize];
        let offset = self.offset();
        let n = read_full(&mut self.inner, &mut buf).map_err(|e| Error::io("reading trace", e))?;
        if n < buf.len() {
            return Err(Error::TraceTruncated { offset: offset + n as u64, expected: self.expected, found: self.read });
        }
        let record = decode_record(&buf, offset)?;
        self.read += 1;
        Ok(Some(record))
    }
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<TraceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<TraceReader<File>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    TraceReader::new(file)
}

/// Writes one line per record: `R|W <tid> <vaddr hex>`. Returns the count.
pub fn dump_text(records: impl IntoIterator<Item = Result<TraceRecord>>, mut out: impl Write) -> Result<u64> {
    let mut n = 0;
    for r in records {
        let r = r?;
        let op = if r.op.is_write() { 'W' } else { 'R' };
        writeln!(out, "{op} {} {:#014x}", r.tid, r.vaddr.raw()).map_err(|e| Error::io("writing text dump", e))?;
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use proptest::prelude::*;

    use super::*;

    fn to_bytes(records: &[TraceRecord]) -> Vec<u8> {
        let mut cur = Cursor::new(Vec::new());
        let mut w = TraceWriter::new(&mut cur).unwrap();
        for r in records {
            w.write(r).unwrap();
        }
        w.finish().unwrap();
        cur.into_inner()
    }

    #[test]
    fn bit_exact_layout() {
        let r = TraceRecord::new(Op::Write, VirtualAddress::new(0x1234_5678_9abc).unwrap(), 7);
        let bytes = to_bytes(&[r]);
        assert_eq!(&bytes[..8], b"RNBWTRC1");
        assert_eq!(&bytes[8..16], &1u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &[1, 7, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[24..], &0x1234_5678_9abcu64.to_le_bytes());
    }

    #[test]
    fn empty_trace_is_header_only() {
        let bytes = to_bytes(&[]);
        assert_eq!(bytes.len(), 16);
        assert_eq!(TraceReader::new(Cursor::new(bytes)).unwrap().count(), 0);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = to_bytes(&[]);
        bytes[0] = b'X';
        assert!(matches!(TraceReader::new(Cursor::new(bytes)), Err(Error::TraceFormat { offset: 0, .. })));
    }

    #[test]
    fn truncation_names_offset() {
        let bytes = to_bytes(&[TraceRecord::read(0x1000), TraceRecord::read(0x2000)]);
        let cut = bytes[..16 + 16 + 5].to_vec();
        let results: Vec<_> = TraceReader::new(Cursor::new(cut)).unwrap().collect();
        assert_eq!(results.len(), 2);
        assert!(results[0].is_ok());
        match &results[1] {
            Err(Error::TraceTruncated { offset, expected, found }) => assert_eq!((*offset, *expected, *found), (37, 2, 1)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(TraceReader::new(Cursor::new(bytes[..10].to_vec())), Err(Error::TraceFormat { offset: 10, .. })));
    }

    #[test]
    fn rejects_corrupt_records_and_trailing_bytes() {
        let mut bytes = to_bytes(&[TraceRecord::read(0x1000)]);
        bytes[16] = 9;
        let err = TraceReader::new(Cursor::new(bytes.clone())).unwrap().next().unwrap().unwrap_err();
        assert!(matches!(err, Error::TraceFormat { offset: 16, .. }));
        bytes[16] = 0;
        bytes[19] = 1;
        assert!(TraceReader::new(Cursor::new(bytes.clone())).unwrap().next().unwrap().is_err());
        bytes[19] = 0;
        bytes.push(0);
        let results: Vec<_> = TraceReader::new(Cursor::new(bytes)).unwrap().collect();
        assert!(results[0].is_ok() && matches!(results[1], Err(Error::TraceFormat { offset: 32, .. })));
    }

    #[test]
    fn text_dump() {
        let mut out = Vec::new();
        let n = dump_text(vec![Ok(TraceRecord::write(0x40_3000))], &mut out).unwrap();
        assert_eq!(n, 1);
        assert_eq!(String::from_utf8(out).unwrap(), "W 0 0x000000403000\n");
    }

    proptest! {
        #[test]
        fn round_trip(records in prop::collection::vec(
            (any::<bool>(), any::<u8>(), 0u64..(1 << 48)).prop_map(|(w, tid, a)| {
                TraceRecord::new(if w { Op::Write } else { Op::Read }, VirtualAddress::new(a).unwrap(), tid)
            }), 0..200)
        ) {
            let bytes = to_bytes(&records);
            prop_assert_eq!(bytes.len() as u64, HEADER_BYTES + RECORD_BYTES * records.len() as u64);
            let back: Vec<TraceRecord> = TraceReader::new(Cursor::new(bytes)).unwrap().map(|r| r.unwrap()).collect();
            prop_assert_eq!(back, records);
        }
    }
}
