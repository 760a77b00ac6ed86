//! PNG reading and writing. Pixel values are stored as `v / 255` in [0, 1].

use std::path::Path;

use gtfmn_tensor::{Element, Tensor};
use image::{GrayImage, ImageBuffer, Rgb, RgbImage};

use crate::error::{GtfmnError, Result};

fn image_err(path: &Path, message: impl ToString) -> GtfmnError {
    GtfmnError::Image {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

/// Quantizes a [0, 1] value to 8 bits with rounding; NaN maps to 0.
pub fn quantize<T: Element>(v: T) -> u8 {
    let x = v.as_f64();
    if x.is_nan() {
        return 0;
    }
    (x * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Decodes any supported image as 3×H×W RGB.
pub fn load_rgb<T: Element>(path: &Path) -> Result<Tensor<T>> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    Ok(rgb_to_tensor(&img))
}

pub fn rgb_to_tensor<T: Element>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![T::zero(); 3 * plane];
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * plane + i] = T::from_f64_lossy(px.0[c] as f64 / 255.0);
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("length matches")
}

/// Accepts 3×H×W or 1×3×H×W.
pub fn tensor_to_rgb<T: Element>(img: &Tensor<T>) -> Result<RgbImage> {
    let (h, w) = match img.shape() {
        &[3, h, w] | &[1, 3, h, w] => (h, w),
        other => {
            return Err(GtfmnError::Input(format!(
                "expected a 3×H×W RGB image, got shape {other:?}"
            )))
        }
    };
    let plane = h * w;
    let d = img.data();
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([quantize(d[i]), quantize(d[plane + i]), quantize(d[2 * plane + i])])
    }))
}

pub fn save_rgb<T: Element>(path: &Path, img: &Tensor<T>) -> Result<()> {
    tensor_to_rgb(img)?.save(path).map_err(|e| image_err(path, e))
}

/// Writes a single-channel map (1×H×W or 1×1×H×W) as 8-bit grayscale.
pub fn save_gray<T: Element>(path: &Path, map: &Tensor<T>) -> Result<()> {
    let (h, w) = match map.shape() {
        &[1, h, w] | &[1, 1, h, w] => (h, w),
        other => {
            return Err(GtfmnError::Input(format!(
                "expected a single-channel map, got shape {other:?}"
            )))
        }
    };
    let d = map.data();
    let img: GrayImage = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([quantize(d[y as usize * w + x as usize])])
    });
    img.save(path).map_err(|e| image_err(path, e))
}

/// Crops a C×H×W image to its top-left `height × width` region.
pub fn crop<T: Element>(img: &Tensor<T>, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor<T>> {
    let (c, h, w) = match img.shape() {
        &[c, h, w] => (c, h, w),
        other => return Err(GtfmnError::Input(format!("crop expects C×H×W, got {other:?}"))),
    };
    if top + height > h || left + width > w {
        return Err(GtfmnError::Input(format!(
            "crop {height}×{width} at ({top},{left}) exceeds {h}×{w}"
        )));
    }
    let d = img.data();
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        for y in top..top + height {
            let row = ch * h * w + y * w;
            out.extend_from_slice(&d[row + left..row + left + width]);
        }
    }
    Ok(Tensor::from_vec(&[c, height, width], out)?)
}

/// Places `a` and `b` (both 3×H×W, equal height) next to each other.
pub fn side_by_side<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[3, h, wa], &[3, hb, wb]) = (a.shape(), b.shape()) else {
        return Err(GtfmnError::Input(format!(
            "side_by_side expects two 3×H×W images, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    };
    if h != hb {
        return Err(GtfmnError::Input(format!("heights differ: {h} vs {hb}")));
    }
    let w = wa + wb;
    let mut out = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for y in 0..h {
            out.extend_from_slice(&a.data()[c * h * wa + y * wa..][..wa]);
            out.extend_from_slice(&b.data()[c * h * wb + y * wb..][..wb]);
        }
    }
    Ok(Tensor::from_vec(&[3, h, w], out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let vals: Vec<f32> = (0..3 * 4 * 5).map(|i| (i * 4 % 256) as f32 / 255.0).collect();
        let img = Tensor::from_vec(&[3, 4, 5], vals).unwrap();
        save_rgb(&path, &img).unwrap();
        let back: Tensor<f32> = load_rgb(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn quantize_rounds_and_clamps() {
        assert_eq!(quantize(0.5f32), 128);
        assert_eq!(quantize(-0.2f64), 0);
        assert_eq!(quantize(1.7f64), 255);
        assert_eq!(quantize(f64::NAN), 0);
    }

    #[test]
    fn missing_file_is_image_error() {
        let err = load_rgb::<f32>(Path::new("/nonexistent/x.png")).unwrap_err();
        assert!(matches!(err, GtfmnError::Image { .. }));
    }

    #[test]
    fn crop_and_concat() {
        let img = Tensor::<f32>::from_vec(&[3, 2, 2], (0..12).map(|v| v as f32).collect()).unwrap();
        let c = crop(&img, 1, 0, 1, 2).unwrap();
        assert_eq!(c.data(), &[2.0, 3.0, 6.0, 7.0, 10.0, 11.0]);
        let s = side_by_side(&c, &c).unwrap();
        assert_eq!(s.shape(), &[3, 1, 4]);
        assert_eq!(&s.data()[..4], &[2.0, 3.0, 2.0, 3.0]);
        assert!(crop(&img, 1, 1, 2, 1).is_err());
    }
}
