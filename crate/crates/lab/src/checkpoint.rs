//! Model checkpoints: a text manifest followed by the raw parameters.
//!
//! ```text
//! sfl-checkpoint
//! format_version 1
//! endianness little
//! input_shape 1 28 28
//! block conv1
//! layer conv2d 8 3
//! layer relu
//! ...
//! param_count 1234
//! payload_bytes 9872
//! end
//! <param_count little-endian f64 values in flatten_params order>
//! ```

use std::path::Path;

use sfl_core::{BlockSpec, LayerSpec, LayeredModel, ModelSpec};

use crate::error::{LabError, Result};

pub const MAGIC: &str = "sfl-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

fn layer_line(spec: LayerSpec) -> String {
    match spec {
        LayerSpec::Dense { outputs } => format!("layer dense {outputs}"),
        LayerSpec::Relu => "layer relu".into(),
        LayerSpec::Conv2d { out_channels, kernel } => format!("layer conv2d {out_channels} {kernel}"),
        LayerSpec::Flatten => "layer flatten".into(),
        LayerSpec::SoftmaxOutput => "layer softmax-output".into(),
    }
}

pub fn encode(model: &LayeredModel) -> Vec<u8> {
    let spec = model.spec();
    let params = model.flatten_params();
    let mut text = format!("{MAGIC}\nformat_version {FORMAT_VERSION}\nendianness little\ninput_shape");
    for d in &spec.input_shape {
        text.push_str(&format!(" {d}"));
    }
    text.push('\n');
    for block in &spec.blocks {
        text.push_str(&format!("block {}\n", block.name));
        for &layer in &block.layers {
            text.push_str(&layer_line(layer));
            text.push('\n');
        }
    }
    text.push_str(&format!("param_count {}\npayload_bytes {}\nend\n", params.len(), params.len() * 8));
    let mut bytes = text.into_bytes();
    for p in params {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    bytes
}

pub fn decode(bytes: &[u8]) -> std::result::Result<LayeredModel, String> {
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nend\n")
        .ok_or("manifest has no `end` line")?;
    let manifest = std::str::from_utf8(&bytes[..end]).map_err(|e| format!("manifest is not UTF-8: {e}"))?;
    let payload = &bytes[end + 5..];
    let mut lines = manifest.lines();
    let mut expect = |key: &str| -> std::result::Result<String, String> {
        let line = lines.next().ok_or_else(|| format!("manifest ends before `{key}`"))?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.to_owned()),
            _ if line == key => Ok(String::new()),
            _ => Err(format!("expected `{key}`, found `{line}`")),
        }
    };
    expect(MAGIC)?;
    let version = expect("format_version")?;
    if version != FORMAT_VERSION.to_string() {
        return Err(format!("unsupported format_version {version}"));
    }
    let endian = expect("endianness")?;
    if endian != "little" {
        return Err(format!("unsupported endianness {endian}"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| format!("bad number `{s}`: {e}"));
    let input_shape = expect("input_shape")?.split_whitespace().map(num).collect::<std::result::Result<Vec<_>, _>>()?;
    let mut blocks: Vec<BlockSpec> = Vec::new();
    let mut param_count = None;
    let mut payload_bytes = None;
    for line in lines {
        let mut words = line.split_whitespace();
        match words.next() {
            Some("block") => blocks.push(BlockSpec { name: line["block ".len()..].to_owned(), layers: Vec::new() }),
            Some("layer") => {
                let kind = words.next().ok_or("layer line without a kind")?;
                let args: Vec<usize> = words.map(num).collect::<std::result::Result<_, _>>()?;
                let spec = match (kind, args.as_slice()) {
                    ("dense", &[outputs]) => LayerSpec::Dense { outputs },
                    ("relu", &[]) => LayerSpec::Relu,
                    ("conv2d", &[out_channels, kernel]) => LayerSpec::Conv2d { out_channels, kernel },
                    ("flatten", &[]) => LayerSpec::Flatten,
                    ("softmax-output", &[]) => LayerSpec::SoftmaxOutput,
                    _ => return Err(format!("bad layer line `{line}`")),
                };
                blocks.last_mut().ok_or("layer before any block")?.layers.push(spec);
            }
            Some("param_count") => param_count = Some(num(words.next().unwrap_or(""))?),
            Some("payload_bytes") => payload_bytes = Some(num(words.next().unwrap_or(""))?),
            _ => return Err(format!("unexpected manifest line `{line}`")),
        }
    }
    let param_count = param_count.ok_or("missing param_count")?;
    let payload_bytes = payload_bytes.ok_or("missing payload_bytes")?;
    if payload_bytes != param_count * 8 {
        return Err(format!("payload_bytes {payload_bytes} is not 8 × param_count {param_count}"));
    }
    if payload.len() != payload_bytes {
        return Err(format!("payload holds {} bytes, manifest says {payload_bytes}", payload.len()));
    }
    let mut model = LayeredModel::build(&ModelSpec { input_shape, blocks }, 0).map_err(|e| e.to_string())?;
    if model.param_count() != param_count {
        return Err(format!("architecture has {} parameters, manifest says {param_count}", model.param_count()));
    }
    let params: Vec<f64> =
        payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    model.load_params(&params).map_err(|e| e.to_string())?;
    Ok(model)
}

pub fn save(model: &LayeredModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|e| LabError::io(path, e))
}

pub fn load(path: &Path) -> Result<LayeredModel> {
    let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
    decode(&bytes).map_err(|message| LabError::Checkpoint { path: path.to_owned(), message })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(m: &LayeredModel) -> Vec<u64> {
        m.flatten_params().iter().map(|p| p.to_bits()).collect()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        for spec in [ModelSpec::mlp(5, &[7, 6], 3), ModelSpec::small_conv([1, 6, 6], 4)] {
            let model = LayeredModel::build(&spec, 11).unwrap();
            let path = dir.path().join("m.ckpt");
            save(&model, &path).unwrap();
            let back = load(&path).unwrap();
            assert_eq!(back.spec(), model.spec());
            assert_eq!(bits(&back), bits(&model));
            assert_eq!(back.block_names(), model.block_names());
        }
    }

    #[test]
    fn mismatches_are_detected() {
        let model = LayeredModel::build(&ModelSpec::mlp(4, &[3], 2), 1).unwrap();
        let good = encode(&model);
        let mut short = good.clone();
        short.pop();
        assert!(decode(&short).unwrap_err().contains("payload holds"));
        let text = String::from_utf8_lossy(&good[..good.len() - model.param_count() * 8]).into_owned();
        let wrong_arch = text.replace("layer dense 3", "layer dense 4");
        let mut bytes = wrong_arch.into_bytes();
        bytes.extend_from_slice(&good[good.len() - model.param_count() * 8..]);
        assert!(decode(&bytes).unwrap_err().contains("architecture has"));
        let versioned = String::from_utf8_lossy(&good).replacen("format_version 1", "format_version 2", 1);
        assert!(decode(versioned.as_bytes()).is_err());
        assert!(decode(b"garbage").is_err());
    }
}
