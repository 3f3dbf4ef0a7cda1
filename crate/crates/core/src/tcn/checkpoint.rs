//! Model checkpoint container.
//!
//! ```text
//! G2LTCN1\n
//! key=value lines (config echo)\n
//! \n
//! little-endian f64 parameters
//! ```

use std::fs;
use std::path::Path;

use super::{TcnConfig, TcnModel};
use crate::error::{Error, Result};
use crate::search_space::DilationStructure;

pub const MODEL_MAGIC: &str = "G2LTCN1";
const FORMAT_VERSION: u32 = 1;

pub fn encode_model(model: &TcnModel) -> Vec<u8> {
    let cfg = model.config();
    let header = format!(
        "{MODEL_MAGIC}\nversion={FORMAT_VERSION}\ninput_dim={}\nhidden={}\nclasses={}\nkernel_width={}\nstructure={}\nparameters={}\n\n",
        cfg.input_dim,
        cfg.hidden,
        cfg.classes,
        cfg.kernel_width,
        cfg.structure,
        model.num_parameters()
    );
    let mut out = header.into_bytes();
    for v in model.params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<TcnModel> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| bad("header terminator not found".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some(MODEL_MAGIC) {
        return Err(bad(format!("missing {MODEL_MAGIC} magic")));
    }
    let mut fields = std::collections::BTreeMap::new();
    for line in lines {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header line {line:?}")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(format!("header lacks {k}")));
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| bad(format!("header field {k} is not an integer")))
    };
    if num("version")? != FORMAT_VERSION as usize {
        return Err(bad(format!("unsupported version {}", get("version")?)));
    }
    let structure: DilationStructure = get("structure")?.parse()?;
    let cfg = TcnConfig {
        input_dim: num("input_dim")?,
        hidden: num("hidden")?,
        classes: num("classes")?,
        kernel_width: num("kernel_width")?,
        structure,
    };
    let count = num("parameters")?;
    if count != cfg.num_parameters() {
        return Err(bad(format!(
            "header declares {count} parameters, config implies {}",
            cfg.num_parameters()
        )));
    }
    let body = &bytes[end + 2..];
    if body.len() != 8 * count {
        return Err(bad(format!("expected {} parameter bytes, found {}", 8 * count, body.len())));
    }
    let mut model = TcnModel::new(cfg, 0)?;
    for (dst, chunk) in model.params_mut().iter_mut().zip(body.chunks_exact(8)) {
        *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
    }
    Ok(model)
}

pub fn save_model(path: &Path, model: &TcnModel) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TcnModel> {
    let bytes = fs::read(path).map_err(|e| Error::load(path, e.to_string()))?;
    decode_model(&bytes).map_err(|e| Error::load(path, e.to_string()))
}
