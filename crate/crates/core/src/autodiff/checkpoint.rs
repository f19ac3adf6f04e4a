//! Parameter checkpoint serialization.
//!
//! Layout: a plain-text manifest (`name rows cols` per parameter, in
//! registration order) followed by the raw values as little-endian f64 in the
//! same order. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};

const MAGIC: &str = "pointfuse-checkpoint v1";

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "params {}", params.len())?;
    for (_, p) in params.iter() {
        debug_assert!(!p.name.contains(char::is_whitespace));
        writeln!(w, "{} {} {}", p.name, p.value.rows(), p.value.cols())?;
    }
    writeln!(w, "data")?;
    for (_, p) in params.iter() {
        for v in p.value.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads values into an already constructed parameter set. The manifest must
/// match the set exactly: same count, names, shapes, and order.
pub fn load_checkpoint(params: &mut ParamSet, path: &Path) -> Result<()> {
    let mut r = BufReader::new(File::open(path)?);
    let mut line = String::new();

    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(Error::CheckpointMismatch(format!(
            "bad header {:?}",
            line.trim_end()
        )));
    }

    line.clear();
    r.read_line(&mut line)?;
    let count: usize = line
        .trim_end()
        .strip_prefix("params ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::CheckpointMismatch(format!("bad params line {line:?}")))?;
    if count != params.len() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint has {count} parameters, model has {}",
            params.len()
        )));
    }

    let ids: Vec<_> = params.ids().collect();
    for &id in &ids {
        line.clear();
        r.read_line(&mut line)?;
        let mut parts = line.trim_end().split_whitespace();
        let name = parts.next().unwrap_or("");
        let rows: usize = parts.next().and_then(|s| s.parse().ok()).unwrap_or(0);
        let cols: usize = parts.next().and_then(|s| s.parse().ok()).unwrap_or(0);
        if name != params.name(id) || (rows, cols) != params.value(id).shape() {
            return Err(Error::CheckpointMismatch(format!(
                "manifest entry {:?} does not match parameter {} {:?}",
                line.trim_end(),
                params.name(id),
                params.value(id).shape()
            )));
        }
    }

    line.clear();
    r.read_line(&mut line)?;
    if line.trim_end() != "data" {
        return Err(Error::CheckpointMismatch("missing data marker".into()));
    }

    let mut buf = [0u8; 8];
    for &id in &ids {
        let len = params.value(id).len();
        let slice = params.value_mut(id).as_mut_slice();
        for v in slice.iter_mut().take(len) {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
    }
    // Trailing bytes indicate a mismatched file.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::CheckpointMismatch("trailing bytes after data".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::new();
        params.add("a.w", Array::from_fn(3, 4, |_, _| rng.gen::<f64>() * 1e3 - 500.0));
        params.add(
            "b.bias",
            Array::from_vec(1, 3, vec![f64::MIN_POSITIVE, -0.0, 1.0 / 3.0]).unwrap(),
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&params, &path).unwrap();

        let mut restored = ParamSet::new();
        restored.add_zeros("a.w", 3, 4);
        restored.add_zeros("b.bias", 1, 3);
        load_checkpoint(&mut restored, &path).unwrap();

        for (orig, back) in params.iter().zip(restored.iter()) {
            for (x, y) in orig.1.value.as_slice().iter().zip(back.1.value.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn mismatched_shape_is_rejected() {
        let mut params = ParamSet::new();
        params.add_zeros("w", 2, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&params, &path).unwrap();

        let mut other = ParamSet::new();
        other.add_zeros("w", 2, 3);
        assert!(load_checkpoint(&mut other, &path).is_err());
    }
}
