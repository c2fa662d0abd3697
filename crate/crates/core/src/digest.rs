use sha2::{Digest as _, Sha256};

pub type Digest = [u8; 32];

pub fn sha256(bytes: &[u8]) -> Digest {
    let out = Sha256::digest(bytes);
    let mut d = [0u8; 32];
    d.copy_from_slice(&out);
    d
}

pub fn to_hex(d: &Digest) -> String {
    hex::encode(d)
}

pub fn from_hex(s: &str) -> Option<Digest> {
    let mut d = [0u8; 32];
    hex::decode_to_slice(s, &mut d).ok()?;
    Some(d)
}

/// Little-endian reader over a byte buffer with truncation checks.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    pub fn take(&mut self, n: usize) -> crate::Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(crate::Error::Format(format!(
                "{} truncated at byte {} (wanted {n} more)",
                self.what, self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> crate::Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> crate::Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> crate::Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn string(&mut self) -> crate::Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| crate::Error::Format(format!("{}: invalid UTF-8 string", self.what)))
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

/// Split `bytes` into payload and trailing SHA-256, verifying the digest.
pub(crate) fn split_verified<'a>(bytes: &'a [u8], what: &str) -> crate::Result<(&'a [u8], Digest)> {
    if bytes.len() < 32 {
        return Err(crate::Error::Format(format!("{what} truncated: no digest")));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 32);
    let mut stored = [0u8; 32];
    stored.copy_from_slice(tail);
    if sha256(payload) != stored {
        return Err(crate::Error::Format(format!("{what} digest mismatch")));
    }
    Ok((payload, stored))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_round_trip() {
        let d = sha256(b"abc");
        assert_eq!(
            to_hex(&d),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(from_hex(&to_hex(&d)), Some(d));
        assert_eq!(from_hex("zz"), None);
    }
}
