//! Binary dataset cache.
//!
//! ```text
//! magic    8 bytes  "TRPNDSET"
//! version  u32      1
//! role     u32      0 base, 1 novel
//! shape    u32 x 3  channels, height, width
//! classes  u32      class count
//! table    per class: u32 id, u32 len + UTF-8 name, u32 len + UTF-8 group, u32 image count
//! payload  f32 pixels of every class in table order
//! ```
//!
//! Integers and floats are little-endian. Writing the same dataset twice
//! produces identical bytes.

use std::path::Path;

use super::dataset::{image_numel, ClassEntry, ClassIndexedDataset, Role};
use crate::error::Result;
use crate::io_util::{atomic_write, read_file, Reader};

const MAGIC: &[u8; 8] = b"TRPNDSET";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

pub fn to_bytes(dataset: &ClassIndexedDataset) -> Vec<u8> {
    let (c, h, w) = dataset.image_shape();
    let mut out = Vec::with_capacity(64 + dataset.num_images() * c * h * w * 4);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, matches!(dataset.role, Role::Novel) as usize);
    for d in [c, h, w] {
        put_u32(&mut out, d);
    }
    put_u32(&mut out, dataset.num_classes());
    for class in dataset.classes() {
        put_u32(&mut out, class.id as usize);
        put_str(&mut out, &class.name);
        put_str(&mut out, &class.group);
        put_u32(&mut out, class.len());
    }
    for class in dataset.classes() {
        for v in class.pixels() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<ClassIndexedDataset> {
    let mut r = Reader::new(bytes, origin);
    if r.take(8)? != MAGIC {
        return Err(r.error("not a dataset cache (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.error(&format!("unsupported cache version {version}")));
    }
    let role = match r.u32()? {
        0 => Role::Base,
        1 => Role::Novel,
        other => return Err(r.error(&format!("unknown role tag {other}"))),
    };
    let shape = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let n = r.u32()? as usize;
    let mut table = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.u32()?;
        let name = r.string()?;
        let group = r.string()?;
        let count = r.u32()? as usize;
        table.push((id, name, group, count));
    }
    let numel = image_numel(shape);
    let mut classes = Vec::with_capacity(n);
    for (id, name, group, count) in table {
        let pixels = r.f32s(count * numel)?;
        classes.push(ClassEntry::from_pixels(id, name, group, pixels, count));
    }
    r.finish()?;
    ClassIndexedDataset::new(shape, role, classes).map_err(|e| r.error(&e.to_string()))
}

pub fn save(dataset: &ClassIndexedDataset, path: &Path) -> Result<()> {
    atomic_write(path, &to_bytes(dataset))
}

pub fn load(path: &Path) -> Result<ClassIndexedDataset> {
    from_bytes(&read_file(path)?, path)
}
