use crate::enhance::ConditionMap;
use crate::error::{Error, Result};
use crate::imgio::Image;

use super::real::Real;

/// Dense `n x c x h x w` array, sample-major then channel-major (NCHW).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 4], value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape(format!(
                "tensor {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [T] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Stacks RGB images (channels become planes) into an `n x 3 x h x w` tensor.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Self> {
        let images: Vec<&Image> = images.into_iter().collect();
        let first = images
            .first()
            .ok_or_else(|| Error::Shape("no images to stack".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for img in &images {
            if img.dims() != (h, w) {
                return Err(Error::Shape("images to stack differ in size".into()));
            }
            for c in 0..3 {
                data.extend(img.data().iter().skip(c).step_by(3).map(|&v| T::lit(v.into())));
            }
        }
        Tensor::from_vec([images.len(), 3, h, w], data)
    }

    /// Stacks condition maps into an `n x 1 x h x w` tensor.
    pub fn from_conditions<'a>(maps: impl IntoIterator<Item = &'a ConditionMap>) -> Result<Self> {
        let maps: Vec<&ConditionMap> = maps.into_iter().collect();
        let first = maps
            .first()
            .ok_or_else(|| Error::Shape("no condition maps to stack".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(maps.len() * h * w);
        for m in &maps {
            if m.dims() != (h, w) {
                return Err(Error::Shape("condition maps to stack differ in size".into()));
            }
            data.extend(m.values().iter().map(|&v| T::lit(v.into())));
        }
        Tensor::from_vec([maps.len(), 1, h, w], data)
    }

    /// Sample `i` of a 3-channel tensor as an interleaved image (clamped).
    pub fn to_image(&self, i: usize) -> Result<Image> {
        if self.channels() != 3 {
            return Err(Error::Shape(format!(
                "need 3 channels for an image, have {}",
                self.channels()
            )));
        }
        let (h, w) = (self.height(), self.width());
        let plane = h * w;
        let s = self.sample(i);
        let data = (0..plane)
            .flat_map(|p| (0..3).map(move |c| s[c * plane + p].as_f64() as f32))
            .collect();
        Image::from_vec_clamped(h, w, data)
    }
}
