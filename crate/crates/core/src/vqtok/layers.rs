use rand::Rng as _;

use crate::numcore::rng::Rng;
use crate::numcore::{ConvSpec, Graph, ParamId, ParamSet, Real, Tensor, Var};
use crate::synthcorpus::Image;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub spec: ConvSpec,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenseLayer {
    pub w: ParamId,
    pub b: ParamId,
}

/// Uniform in ±1/√fan_in for weights and biases.
fn uniform<T: Real>(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::f(rng.random_range(-bound..bound))).collect();
    Tensor::from_vec(shape, data).expect("shape")
}

pub fn add_conv<T: Real>(
    params: &mut ParamSet<T>,
    name: &str,
    c_in: usize,
    c_out: usize,
    stride: usize,
    rng: &mut Rng,
) -> ConvLayer {
    let spec = ConvSpec { kernel: 3, stride, pad: 1 };
    let fan_in = 9 * c_in;
    let w = params.add(&format!("{name}.w"), uniform(rng, &[fan_in, c_out], fan_in)).expect("unique name");
    let b = params.add(&format!("{name}.b"), uniform(rng, &[c_out], fan_in)).expect("unique name");
    ConvLayer { w, b, spec }
}

pub fn add_dense<T: Real>(params: &mut ParamSet<T>, name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> DenseLayer {
    let w = params.add(&format!("{name}.w"), uniform(rng, &[d_in, d_out], d_in)).expect("unique name");
    let b = params.add(&format!("{name}.b"), uniform(rng, &[d_out], d_in)).expect("unique name");
    DenseLayer { w, b }
}

/// A parameter as a graph node: trainable, or a frozen copy when the graph
/// belongs to a different parameter set.
pub fn bind<T: Real>(g: &mut Graph<T>, params: &ParamSet<T>, id: ParamId, frozen: bool) -> Var {
    if frozen {
        g.constant(params.value(id).clone())
    } else {
        g.param(id)
    }
}

pub fn conv<T: Real>(g: &mut Graph<T>, params: &ParamSet<T>, l: &ConvLayer, x: Var, frozen: bool) -> Var {
    let w = bind(g, params, l.w, frozen);
    let b = bind(g, params, l.b, frozen);
    g.conv2d(x, w, b, l.spec)
}

pub fn dense<T: Real>(g: &mut Graph<T>, params: &ParamSet<T>, l: &DenseLayer, x: Var, frozen: bool) -> Var {
    let w = bind(g, params, l.w, frozen);
    let b = bind(g, params, l.b, frozen);
    g.linear(x, w, Some(b))
}

/// NHWC batch `[B, H, W, 1]` from images.
pub fn image_batch<T: Real>(images: &[&Image]) -> Tensor<T> {
    let (h, w) = (images[0].height, images[0].width);
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        assert_eq!((img.height, img.width), (h, w), "mixed image sizes in batch");
        data.extend(img.data.iter().map(|&v| T::f(v as f64)));
    }
    Tensor::from_vec(&[images.len(), h, w, 1], data).expect("shape")
}

/// Images from an NHWC `[B, H, W, 1]` tensor.
pub fn batch_images<T: Real>(t: &Tensor<T>) -> Vec<Image> {
    let s = t.shape();
    let (h, w) = (s[1], s[2]);
    t.data()
        .chunks_exact(h * w)
        .map(|c| Image::new(h, w, c.iter().map(|v| v.as_f64().clamp(0.0, 1.0) as f32).collect()))
        .collect()
}
