//! Image files and labelled image folders.
//!
//! A dataset directory holds one subdirectory per class, named after a model
//! label, with PNG or PPM images inside:
//!
//! ```text
//! dataset/
//!   red/   img_000.png ...
//!   green/ img_001.ppm ...
//! ```
//!
//! Images are scaled to `[0, 1]`, resized to the model input and normalised
//! with the manifest's preprocessing block.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::model::{Model, Preprocessing};
use crate::tensor::Tensor;

/// One model-ready image and its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// File stem, used to name per-image artefacts.
    pub name: String,
    pub label: usize,
    pub image: Tensor,
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| ["png", "ppm", "pgm", "pnm"].contains(&e.to_ascii_lowercase().as_str()))
}

/// Decodes an image into a `[C, H, W]` tensor in `[0, 1]`, resized to
/// `shape` (nearest neighbour keeps synthetic edges crisp). `C` must be 1 or 3.
pub fn decode_image(
    bytes: &[u8],
    shape: [usize; 3],
) -> std::result::Result<Tensor, image::ImageError> {
    let img = image::load_from_memory(bytes)?;
    Ok(to_tensor(img, shape))
}

fn to_tensor(img: DynamicImage, [c, h, w]: [usize; 3]) -> Tensor {
    let img = if (img.width() as usize, img.height() as usize) == (w, h) {
        img
    } else {
        img.resize_exact(w as u32, h as u32, FilterType::Nearest)
    };
    let mut data = vec![0.0f32; c * h * w];
    if c == 1 {
        for (i, p) in img.to_luma8().pixels().enumerate() {
            data[i] = p.0[0] as f32 / 255.0;
        }
    } else {
        for (i, p) in img.to_rgb8().pixels().enumerate() {
            for ch in 0..3 {
                data[ch * h * w + i] = p.0[ch] as f32 / 255.0;
            }
        }
    }
    Tensor::new(vec![c, h, w], data).expect("shape matches buffer")
}

/// Reads an image file and turns it into model input.
pub fn load_image(path: &Path, model: &Model) -> Result<Tensor> {
    let shape = model.graph().input_shape();
    if shape[0] != 1 && shape[0] != 3 {
        return Err(Error::Dataset(format!(
            "image input needs 1 or 3 channels, model takes {}",
            shape[0]
        )));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = decode_image(&bytes, shape).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    normalise(raw, model.preprocessing())
}

fn normalise(raw: Tensor, pre: Option<&Preprocessing>) -> Result<Tensor> {
    match pre {
        Some(p) => p.apply(&raw),
        None => Ok(raw),
    }
}

/// Writes a `[C, H, W]` tensor in `[0, 1]` as an 8-bit PNG or PPM/PGM
/// (chosen by extension).
pub fn save_image(tensor: &Tensor, path: &Path) -> Result<()> {
    let (c, h, w) = tensor.dims3()?;
    let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let d = tensor.data();
    let img = match c {
        1 => DynamicImage::ImageLuma8(
            GrayImage::from_raw(w as u32, h as u32, d.iter().map(|&v| q(v)).collect())
                .expect("buffer size"),
        ),
        3 => {
            let mut buf = Vec::with_capacity(3 * h * w);
            for i in 0..h * w {
                for ch in 0..3 {
                    buf.push(q(d[ch * h * w + i]));
                }
            }
            DynamicImage::ImageRgb8(
                RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer size"),
            )
        }
        _ => return Err(Error::Dataset(format!("cannot save a {c}-channel image"))),
    };
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads every image under `dir/<label>/`. Class folders must be model
/// labels; unreadable images are skipped with a warning. Order is by label
/// folder name, then file name.
pub fn load_dataset(dir: &Path, model: &Model) -> Result<Vec<LabeledImage>> {
    let mut out = Vec::new();
    for class_dir in sorted_entries(dir)? {
        if !class_dir.is_dir() {
            continue;
        }
        let name = class_dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let label = model
            .labels()
            .iter()
            .position(|l| *l == name)
            .ok_or_else(|| {
                Error::Dataset(format!(
                    "folder `{name}` is not a model label {:?}",
                    model.labels()
                ))
            })?;
        for file in sorted_entries(&class_dir)? {
            if !file.is_file() || !is_image_file(&file) {
                continue;
            }
            match load_image(&file, model) {
                Ok(image) => out.push(LabeledImage {
                    name: file
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .unwrap_or("image")
                        .to_string(),
                    label,
                    image,
                }),
                Err(e) => log::warn!("skipping {}: {e}", file.display()),
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!(
            "no readable images under {}",
            dir.display()
        )));
    }
    Ok(out)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    v.sort();
    Ok(v)
}

/// Writes images into the folder layout read by [`load_dataset`]. Pixel
/// values are taken as already in `[0, 1]`.
pub fn write_dataset(dir: &Path, items: &[LabeledImage], labels: &[String]) -> Result<()> {
    for item in items {
        let class_dir = dir.join(&labels[item.label]);
        std::fs::create_dir_all(&class_dir).map_err(|e| Error::io(&class_dir, e))?;
        save_image(&item.image, &class_dir.join(format!("{}.png", item.name)))?;
    }
    Ok(())
}
