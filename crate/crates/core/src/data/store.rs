//! Dataset directory layout.
//!
//! ```text
//! <dir>/manifest.json         format version, config echo, sample list
//! <dir>/NNNN_img.pgm          2D image, 16-bit P5 (little-endian samples)
//! <dir>/NNNN_msk.pgm          2D mask, 8-bit P5
//! <dir>/NNNN_img.raw          3D image, f32 little-endian
//! <dir>/NNNN_img.meta.json    3D image shape/dtype sidecar
//! <dir>/NNNN_msk.raw          3D mask, u8
//! ```
//!
//! Masks round-trip bit-exactly. 2D images quantize to 16 bits
//! (error <= 1/65535); 3D images quantize to f32 (error <= 2^-20 on [0, 1]).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pgm;
use super::{Dataset, Sample, SampleMeta, SynthSpec};
use crate::error::{Error, Result};
use crate::tensor::{Mask, Tensor};

const FORMAT_VERSION: u32 = 1;
const IMAGE_SCALE: u32 = 65535;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dims: usize,
    /// Full generator configuration, including the seed.
    config: SynthSpec,
    /// Quantization scale for 2D PGM images.
    #[serde(skip_serializing_if = "Option::is_none")]
    image_scale: Option<u32>,
    samples: Vec<ManifestSample>,
}

#[derive(Serialize, Deserialize)]
struct ManifestSample {
    image: String,
    mask: String,
    meta: SampleMeta,
}

#[derive(Serialize, Deserialize)]
struct RawSidecar {
    shape: Vec<usize>,
    dtype: String,
}

/// Write a dataset to `dir`, creating it if needed.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let dims = dataset.dims();
    let mut entries = Vec::with_capacity(dataset.samples.len());
    for (i, sample) in dataset.samples.iter().enumerate() {
        let (img_name, msk_name) = if dims == 2 {
            (format!("{i:04}_img.pgm"), format!("{i:04}_msk.pgm"))
        } else {
            (format!("{i:04}_img.raw"), format!("{i:04}_msk.raw"))
        };
        if dims == 2 {
            let (h, w) = (sample.image.shape()[0], sample.image.shape()[1]);
            let quantized: Vec<u16> = sample
                .image
                .data()
                .iter()
                .map(|&v| (v * IMAGE_SCALE as f64).round() as u16)
                .collect();
            pgm::write_pgm(&dir.join(&img_name), w, h, IMAGE_SCALE, &quantized)?;
            let labels: Vec<u16> = sample.mask.data().iter().map(|&v| v as u16).collect();
            pgm::write_pgm(&dir.join(&msk_name), w, h, 255, &labels)?;
        } else {
            let img_path = dir.join(&img_name);
            let mut bytes = Vec::with_capacity(sample.image.len() * 4);
            for &v in sample.image.data() {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
            fs::write(&img_path, &bytes)
                .map_err(|e| Error::io(img_path.display().to_string(), e))?;
            let sidecar = RawSidecar {
                shape: sample.image.shape().to_vec(),
                dtype: "f32le".into(),
            };
            let sidecar_path = dir.join(format!("{i:04}_img.meta.json"));
            fs::write(
                &sidecar_path,
                serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"),
            )
            .map_err(|e| Error::io(sidecar_path.display().to_string(), e))?;
            let msk_path = dir.join(&msk_name);
            fs::write(&msk_path, sample.mask.data())
                .map_err(|e| Error::io(msk_path.display().to_string(), e))?;
        }
        entries.push(ManifestSample {
            image: img_name,
            mask: msk_name,
            meta: sample.meta.clone(),
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dims,
        config: dataset.spec.clone(),
        image_scale: (dims == 2).then_some(IMAGE_SCALE),
        samples: entries,
    };
    let manifest_path = dir.join("manifest.json");
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| Error::io(manifest_path.display().to_string(), e))
}

/// Load a dataset previously written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Corrupt {
        path: manifest_path.display().to_string(),
        reason: format!("manifest is not valid JSON: {e}"),
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: manifest_path.display().to_string(),
            version: manifest.format_version,
        });
    }
    if manifest.dims != manifest.config.dims() {
        return Err(Error::Integrity(format!(
            "manifest dims {} disagree with config dims {}",
            manifest.dims,
            manifest.config.dims()
        )));
    }
    if manifest.samples.len() != manifest.config.count() {
        return Err(Error::Integrity(format!(
            "manifest lists {} samples but config declares {}",
            manifest.samples.len(),
            manifest.config.count()
        )));
    }
    let extents = manifest.config.extents();

    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        let (image, mask) = if manifest.dims == 2 {
            let scale = manifest.image_scale.unwrap_or(IMAGE_SCALE) as f64;
            let img = pgm::read_pgm(&dir.join(&entry.image))?;
            if [img.height, img.width] != [extents[0], extents[1]] {
                return Err(Error::Integrity(format!(
                    "{} is {}x{}, manifest declares {}x{}",
                    entry.image, img.height, img.width, extents[0], extents[1]
                )));
            }
            let image = Tensor::new(
                vec![img.height, img.width],
                img.samples.iter().map(|&s| s as f64 / scale).collect(),
            )?;
            let msk = pgm::read_pgm(&dir.join(&entry.mask))?;
            if [msk.height, msk.width] != [extents[0], extents[1]] {
                return Err(Error::Integrity(format!(
                    "{} extents disagree with the manifest",
                    entry.mask
                )));
            }
            let mask = Mask::new(
                vec![msk.height, msk.width],
                msk.samples.iter().map(|&s| s as u8).collect(),
            )?;
            (image, mask)
        } else {
            let sidecar_path = dir.join(format!(
                "{}.meta.json",
                entry.image.trim_end_matches(".raw")
            ));
            let sidecar_text = fs::read_to_string(&sidecar_path)
                .map_err(|e| Error::io(sidecar_path.display().to_string(), e))?;
            let sidecar: RawSidecar =
                serde_json::from_str(&sidecar_text).map_err(|e| Error::Corrupt {
                    path: sidecar_path.display().to_string(),
                    reason: format!("sidecar is not valid JSON: {e}"),
                })?;
            if sidecar.dtype != "f32le" {
                return Err(Error::Corrupt {
                    path: sidecar_path.display().to_string(),
                    reason: format!("unsupported dtype {}", sidecar.dtype),
                });
            }
            if sidecar.shape != extents {
                return Err(Error::Integrity(format!(
                    "{} shape {:?} disagrees with manifest extents {:?}",
                    entry.image, sidecar.shape, extents
                )));
            }
            let img_path = dir.join(&entry.image);
            let bytes =
                fs::read(&img_path).map_err(|e| Error::io(img_path.display().to_string(), e))?;
            let n: usize = sidecar.shape.iter().product();
            if bytes.len() != n * 4 {
                return Err(Error::Integrity(format!(
                    "{} holds {} bytes, expected {}",
                    entry.image,
                    bytes.len(),
                    n * 4
                )));
            }
            let image = Tensor::new(
                sidecar.shape.clone(),
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
            )?;
            let msk_path = dir.join(&entry.mask);
            let mbytes =
                fs::read(&msk_path).map_err(|e| Error::io(msk_path.display().to_string(), e))?;
            if mbytes.len() != n {
                return Err(Error::Integrity(format!(
                    "{} holds {} bytes, expected {}",
                    entry.mask,
                    mbytes.len(),
                    n
                )));
            }
            (image, Mask::new(sidecar.shape, mbytes)?)
        };
        samples.push(Sample {
            image,
            mask,
            meta: entry.meta.clone(),
        });
    }
    Ok(Dataset {
        samples,
        spec: manifest.config,
    })
}
