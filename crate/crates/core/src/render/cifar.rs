//! CIFAR-10 binary batches: records of one label byte followed by 1024 red,
//! 1024 green and 1024 blue bytes, each plane row-major.

use std::path::Path;

use super::{Frame, RenderError, FRAME_SIZE};

pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * FRAME_SIZE * FRAME_SIZE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CifarSplit {
    Train,
    Test,
}

impl CifarSplit {
    pub fn name(self) -> &'static str {
        match self {
            CifarSplit::Train => "train",
            CifarSplit::Test => "test",
        }
    }

    pub fn files(self) -> &'static [&'static str] {
        match self {
            CifarSplit::Train => &[
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
            CifarSplit::Test => &["test_batch.bin"],
        }
    }

    pub(crate) fn salt(self) -> u64 {
        match self {
            CifarSplit::Train => 0x7472_6169_6e00_0000,
            CifarSplit::Test => 0x7465_7374_0000_0000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CifarRecord {
    pub label: u8,
    pub image: Frame,
}

pub fn decode_cifar(bytes: &[u8], origin: &str) -> Result<Vec<CifarRecord>, RenderError> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        return Err(RenderError::CifarFormat {
            path: origin.to_string(),
            size: bytes.len(),
        });
    }
    let plane = FRAME_SIZE * FRAME_SIZE;
    Ok(bytes
        .chunks_exact(CIFAR_RECORD_BYTES)
        .map(|rec| {
            let mut px = Vec::with_capacity(3 * plane);
            for i in 0..plane {
                px.extend_from_slice(&[rec[1 + i], rec[1 + plane + i], rec[1 + 2 * plane + i]]);
            }
            CifarRecord {
                label: rec[0],
                image: Frame::from_bytes(px).expect("frame size"),
            }
        })
        .collect())
}

pub fn encode_cifar(records: &[CifarRecord]) -> Vec<u8> {
    let plane = FRAME_SIZE * FRAME_SIZE;
    let mut out = Vec::with_capacity(records.len() * CIFAR_RECORD_BYTES);
    for r in records {
        out.push(r.label);
        for ch in 0..3 {
            out.extend(r.image.bytes().iter().skip(ch).step_by(3).take(plane));
        }
    }
    out
}

/// Loads every batch file of `split` found in `dir`. Missing directory or
/// missing files surface as I/O errors.
pub fn load_cifar_backgrounds(
    dir: impl AsRef<Path>,
    split: CifarSplit,
) -> Result<Vec<CifarRecord>, RenderError> {
    let dir = dir.as_ref();
    let mut records = Vec::new();
    let mut found = false;
    for name in split.files() {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        found = true;
        let bytes = std::fs::read(&path)?;
        records.extend(decode_cifar(&bytes, &path.display().to_string())?);
    }
    if !found {
        return Err(RenderError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no {} batches in {}", split.name(), dir.display()),
        )));
    }
    Ok(records)
}
