use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::tensor_file::{load_tensor, save_tensor, AnyTensor};
use crate::train::Sample;

pub const IMAGES_DIR: &str = "images";
pub const LABELS_DIR: &str = "labels";
pub const INSTANCES_DIR: &str = "instances";

fn file_name(index: usize) -> String {
    format!("{index:04}.ltn")
}

/// Writes `images/NNNN.ltn`, `labels/NNNN.ltn` and, when present,
/// `instances/NNNN.ltn`.
pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    let mk = |sub: &str| -> Result<PathBuf> {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::from(e).in_file(&p))?;
        Ok(p)
    };
    let images = mk(IMAGES_DIR)?;
    let labels = mk(LABELS_DIR)?;
    let instances = if samples.iter().any(|s| s.instances.is_some()) {
        Some(mk(INSTANCES_DIR)?)
    } else {
        None
    };
    for (i, s) in samples.iter().enumerate() {
        let name = file_name(i);
        save_tensor(&images.join(&name), &AnyTensor::Real32(s.image.clone()))?;
        save_tensor(&labels.join(&name), &AnyTensor::Int32(s.labels.clone()))?;
        if let (Some(dir), Some(t)) = (&instances, &s.instances) {
            save_tensor(&dir.join(&name), &AnyTensor::Int32(t.clone()))?;
        }
    }
    Ok(())
}

/// Reads every `images/*.ltn` in name order with its label map and, if the
/// file exists, its instance map.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let images = dir.join(IMAGES_DIR);
    let entries = std::fs::read_dir(&images).map_err(|e| Error::from(e).in_file(&images))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::from(e).in_file(&images))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".ltn") {
            names.push(name);
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .ltn files in {}",
            images.display()
        )));
    }
    names
        .iter()
        .map(|name| {
            let image_path = images.join(name);
            let label_path = dir.join(LABELS_DIR).join(name);
            let instance_path = dir.join(INSTANCES_DIR).join(name);
            let image = load_tensor(&image_path)?
                .into_real32()
                .map_err(|e| e.in_file(&image_path))?;
            let labels = load_tensor(&label_path)?
                .into_int32()
                .map_err(|e| e.in_file(&label_path))?;
            let instances = if instance_path.exists() {
                Some(
                    load_tensor(&instance_path)?
                        .into_int32()
                        .map_err(|e| e.in_file(&instance_path))?,
                )
            } else {
                None
            };
            check_sample(&image_path, &image, &labels, instances.as_ref())?;
            Ok(Sample {
                image,
                labels,
                instances,
            })
        })
        .collect()
}

fn check_sample(
    path: &Path,
    image: &crate::Tensor<f32>,
    labels: &crate::IntTensor,
    instances: Option<&crate::IntTensor>,
) -> Result<()> {
    let ok = image.rank() == 3
        && labels.rank() == 2
        && image.shape()[1..] == labels.shape()[..]
        && instances.is_none_or(|t| t.shape() == labels.shape());
    if !ok {
        return Err(Error::InvalidArgument(format!(
            "image {:?}, labels {:?} and instances {:?} do not align",
            image.shape(),
            labels.shape(),
            instances.map(|t| t.shape())
        ))
        .in_file(path));
    }
    Ok(())
}
