use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::tensor_file::{encode_tensor_into, AnyTensor, Reader};
use crate::model::{LinkConfig, LinkNet, ParamStore};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LKPT";
pub const CHECKPOINT_VERSION: u8 = 1;
/// Record holding the model configuration as int32 values.
pub const CONFIG_RECORD: &str = "meta.linknet";

/// Named tensors; iteration (and file) order is sorted by path.
pub type Records = BTreeMap<String, AnyTensor>;

pub fn encode_checkpoint(records: &Records) -> Result<Vec<u8>> {
    let count = u32::try_from(records.len())
        .map_err(|_| Error::InvalidArgument("too many checkpoint records".into()))?;
    let mut out = CHECKPOINT_MAGIC.to_vec();
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&count.to_le_bytes());
    for (path, t) in records {
        let len = u16::try_from(path.len()).map_err(|_| {
            Error::InvalidArgument(format!("record path of {} bytes is too long", path.len()))
        })?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(path.as_bytes());
        encode_tensor_into(t, &mut out)?;
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Records> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(r.fail(0, "magic", format!("expected \"LKPT\", found {magic:?}")));
    }
    let at = r.pos();
    let version = r.u8("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(r.fail(at, "version", format!("unsupported version {version}")));
    }
    let count = r.u32("record count")?;
    let mut records = Records::new();
    let mut previous: Option<String> = None;
    for _ in 0..count {
        let len = r.u16("path length")? as usize;
        let at = r.pos();
        let raw = r.take(len, "path")?;
        let path = std::str::from_utf8(raw)
            .map_err(|e| r.fail(at, "path", format!("not UTF-8: {e}")))?
            .to_string();
        if previous.as_ref().is_some_and(|p| *p >= path) {
            return Err(r.fail(
                at,
                "path",
                format!("`{path}` is out of order or duplicated"),
            ));
        }
        let tensor = r.tensor()?;
        previous = Some(path.clone());
        records.insert(path, tensor);
    }
    r.finish()?;
    Ok(records)
}

pub fn save_checkpoint(path: &Path, records: &Records) -> Result<()> {
    let bytes = encode_checkpoint(records)?;
    std::fs::write(path, bytes).map_err(|e| Error::from(e).in_file(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Records> {
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    decode_checkpoint(&bytes).map_err(|e| e.in_file(path))
}

/// `[classes, in_channels, H, W, bypass, encoder widths…, decoder widths…]`
fn config_to_record(c: &LinkConfig) -> Result<Tensor<i32>> {
    let mut v = vec![
        c.num_classes,
        c.in_channels,
        c.input_hw.0,
        c.input_hw.1,
        c.bypass as usize,
    ];
    for &(m, n) in c.encoder_widths.iter().chain(&c.decoder_widths) {
        v.extend([m, n]);
    }
    let v = v
        .into_iter()
        .map(|x| {
            i32::try_from(x)
                .map_err(|_| Error::InvalidArgument(format!("{x} does not fit in int32")))
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_vec([v.len()], v)
}

fn config_from_record(t: &Tensor<i32>) -> Result<LinkConfig> {
    let v = t.data();
    if t.shape() != [21] || v.iter().any(|&x| x < 0) {
        return Err(Error::InvalidArgument(format!(
            "`{CONFIG_RECORD}` must hold 21 non-negative values, found shape {:?}",
            t.shape()
        )));
    }
    let u = |i: usize| v[i] as usize;
    let widths = |base: usize| std::array::from_fn(|k| (u(base + 2 * k), u(base + 2 * k + 1)));
    let config = LinkConfig {
        num_classes: u(0),
        in_channels: u(1),
        input_hw: (u(2), u(3)),
        bypass: v[4] != 0,
        encoder_widths: widths(5),
        decoder_widths: widths(13),
    };
    config.validate()?;
    Ok(config)
}

/// Parameters plus the configuration record.
pub fn model_records(config: &LinkConfig, params: &ParamStore<f32>) -> Result<Records> {
    let mut records: Records = params
        .iter()
        .map(|(k, t)| (k.to_string(), AnyTensor::Real32(t.clone())))
        .collect();
    records.insert(
        CONFIG_RECORD.into(),
        AnyTensor::Int32(config_to_record(config)?),
    );
    Ok(records)
}

pub fn model_from_records(mut records: Records) -> Result<LinkNet> {
    let meta = records
        .remove(CONFIG_RECORD)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("checkpoint has no `{CONFIG_RECORD}` record"))
        })?
        .into_int32()?;
    let config = config_from_record(&meta)?;
    let mut params = ParamStore::new();
    for (k, t) in records {
        let t = t
            .into_real32()
            .map_err(|e| Error::InvalidArgument(format!("record `{k}`: {e}")))?;
        params.insert(k, t);
    }
    LinkNet::with_params(config, params)
}

pub fn save_model(path: &Path, model: &LinkNet) -> Result<()> {
    save_checkpoint(path, &model_records(&model.config, &model.params)?)
}

pub fn load_model(path: &Path) -> Result<LinkNet> {
    model_from_records(load_checkpoint(path)?).map_err(|e| match e {
        e @ Error::File { .. } => e,
        e => e.in_file(path),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> LinkNet {
        let c = LinkConfig::new(3, (32, 64))
            .with_width_divisor(16)
            .unwrap()
            .with_bypass(false);
        LinkNet::new(c, 4).unwrap()
    }

    #[test]
    fn header_layout() {
        let mut records = Records::new();
        records.insert(
            "a".into(),
            AnyTensor::Int32(Tensor::from_vec([1], vec![7]).unwrap()),
        );
        let bytes = encode_checkpoint(&records).unwrap();
        assert_eq!(&bytes[..9], b"LKPT\x01\x01\x00\x00\x00");
        assert_eq!(&bytes[9..12], b"\x01\x00a");
        assert_eq!(&bytes[12..16], b"LTNS");
        assert_eq!(decode_checkpoint(&bytes).unwrap(), records);
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let m = small();
        let bytes = encode_checkpoint(&model_records(&m.config, &m.params).unwrap()).unwrap();
        let back = model_from_records(decode_checkpoint(&bytes).unwrap()).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.params, m.params);
        let again = encode_checkpoint(&model_records(&back.config, &back.params).unwrap()).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn unsorted_or_duplicate_paths_rejected() {
        let mut records = Records::new();
        records.insert(
            "a".into(),
            AnyTensor::Int32(Tensor::from_vec([1], vec![1]).unwrap()),
        );
        records.insert(
            "b".into(),
            AnyTensor::Int32(Tensor::from_vec([1], vec![2]).unwrap()),
        );
        let mut bytes = encode_checkpoint(&records).unwrap();
        // rename the second record from "b" to "a"
        let second = bytes.len() - (2 + 1 + 8 + 8 + 4);
        assert_eq!(bytes[second + 2], b'b');
        bytes[second + 2] = b'a';
        match decode_checkpoint(&bytes).unwrap_err() {
            Error::Format { offset, field, .. } => {
                assert_eq!(offset as usize, second + 2);
                assert_eq!(field, "path");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn truncation_and_garbage_rejected() {
        let m = small();
        let bytes = encode_checkpoint(&model_records(&m.config, &m.params).unwrap()).unwrap();
        for cut in [0, 3, 5, 9, 10, 40, bytes.len() - 1] {
            assert!(
                matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Format { .. })),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(
            decode_checkpoint(&bad),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn missing_or_foreign_records_rejected() {
        let m = small();
        let mut records = model_records(&m.config, &m.params).unwrap();
        records.remove("init.conv.weight");
        assert!(model_from_records(records).is_err());
        let mut records = model_records(&m.config, &m.params).unwrap();
        records.remove(CONFIG_RECORD);
        assert!(model_from_records(records).is_err());
    }
}
