use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::Real;
use crate::env::Action;
use crate::percept::VIEW_SIZE;

/// Layer sizes of the recurrent actor-critic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetShape {
    /// Pixels per observation (height x width).
    pub pixels: usize,
    pub in_channels: usize,
    pub conv_channels: usize,
    pub mlp: [usize; 2],
    pub lstm: usize,
    pub actions: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        Self {
            pixels: VIEW_SIZE * VIEW_SIZE,
            in_channels: 3,
            conv_channels: 6,
            mlp: [64, 64],
            lstm: 128,
            actions: Action::COUNT,
        }
    }
}

impl NetShape {
    pub fn input_len(&self) -> usize {
        self.pixels * self.in_channels
    }

    pub fn conv_out(&self) -> usize {
        self.pixels * self.conv_channels
    }

    pub fn gates(&self) -> usize {
        4 * self.lstm
    }

    pub fn layout(&self) -> Layout {
        Layout::new(*self)
    }
}

/// Named parameter tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    ConvW,
    ConvB,
    Fc1W,
    Fc1B,
    Fc2W,
    Fc2B,
    LstmWx,
    LstmWh,
    LstmB,
    PolicyW,
    PolicyB,
    ValueW,
    ValueB,
}

impl Group {
    pub const ALL: [Group; 13] = [
        Group::ConvW,
        Group::ConvB,
        Group::Fc1W,
        Group::Fc1B,
        Group::Fc2W,
        Group::Fc2B,
        Group::LstmWx,
        Group::LstmWh,
        Group::LstmB,
        Group::PolicyW,
        Group::PolicyB,
        Group::ValueW,
        Group::ValueB,
    ];
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub shape: NetShape,
    spans: [(usize, usize, usize); 13],
    total: usize,
}

impl Layout {
    fn new(shape: NetShape) -> Self {
        let dims = [
            (shape.conv_channels, shape.in_channels),
            (shape.conv_channels, 1),
            (shape.mlp[0], shape.conv_out()),
            (shape.mlp[0], 1),
            (shape.mlp[1], shape.mlp[0]),
            (shape.mlp[1], 1),
            (shape.gates(), shape.mlp[1]),
            (shape.gates(), shape.lstm),
            (shape.gates(), 1),
            (shape.actions, shape.lstm),
            (shape.actions, 1),
            (1, shape.lstm),
            (1, 1),
        ];
        let mut spans = [(0, 0, 0); 13];
        let mut offset = 0;
        for (span, (rows, cols)) in spans.iter_mut().zip(dims) {
            *span = (offset, rows, cols);
            offset += rows * cols;
        }
        Self { shape, spans, total: offset }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn range(&self, g: Group) -> std::ops::Range<usize> {
        let (o, r, c) = self.spans[g as usize];
        o..o + r * c
    }

    /// `(rows, cols)` of a tensor.
    pub fn dims(&self, g: Group) -> (usize, usize) {
        let (_, r, c) = self.spans[g as usize];
        (r, c)
    }

    /// Which tensor a flat index belongs to.
    pub fn group_of(&self, index: usize) -> Group {
        *Group::ALL.iter().find(|&&g| self.range(g).contains(&index)).expect("index out of range")
    }
}

/// The learner's parameter bundle as one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<T> {
    layout: Layout,
    pub values: Vec<T>,
}

impl<T: Real> NetParams<T> {
    pub fn zeros(shape: NetShape) -> Self {
        let layout = shape.layout();
        let values = vec![T::ZERO; layout.len()];
        Self { layout, values }
    }

    /// Fan-in scaled uniform weights, orthogonal recurrent blocks, zero LSTM
    /// biases except the forget gate which starts at one.
    pub fn init<R: Rng>(shape: NetShape, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        let layout = p.layout.clone();
        for (w, b, fan_in) in [
            (Group::ConvW, Some(Group::ConvB), shape.in_channels),
            (Group::Fc1W, Some(Group::Fc1B), shape.conv_out()),
            (Group::Fc2W, Some(Group::Fc2B), shape.mlp[0]),
            (Group::LstmWx, None, shape.mlp[1]),
            (Group::PolicyW, Some(Group::PolicyB), shape.lstm),
            (Group::ValueW, Some(Group::ValueB), shape.lstm),
        ] {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for g in std::iter::once(w).chain(b) {
                for v in &mut p.values[layout.range(g)] {
                    *v = T::from_f64(dist.sample(rng));
                }
            }
        }
        let h = shape.lstm;
        let wh = layout.range(Group::LstmWh);
        for gate in 0..4 {
            let block = orthogonal(h, rng);
            let start = wh.start + gate * h * h;
            for (dst, src) in p.values[start..start + h * h].iter_mut().zip(block) {
                *dst = T::from_f64(src);
            }
        }
        let bias = layout.range(Group::LstmB);
        for v in &mut p.values[bias.start + h..bias.start + 2 * h] {
            *v = T::ONE;
        }
        p
    }

    pub fn from_values(shape: NetShape, values: Vec<T>) -> Option<Self> {
        let layout = shape.layout();
        (values.len() == layout.len()).then_some(Self { layout, values })
    }

    pub fn shape(&self) -> NetShape {
        self.layout.shape
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn group(&self, g: Group) -> &[T] {
        &self.values[self.layout.range(g)]
    }

    pub fn group_mut(&mut self, g: Group) -> &mut [T] {
        let r = self.layout.range(g);
        &mut self.values[r]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> NetParams<U> {
        NetParams { layout: self.layout.clone(), values: self.values.iter().map(|v| U::from_f64(v.to_f64())).collect() }
    }
}

/// Square orthogonal matrix from Gram-Schmidt on a Gaussian sample.
fn orthogonal<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut m: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
        let mut ok = true;
        for i in 0..n {
            for j in 0..i {
                let d: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                for k in 0..n {
                    m[i * n + k] -= d * m[j * n + k];
                }
            }
            let norm: f64 = (0..n).map(|k| m[i * n + k] * m[i * n + k]).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for k in 0..n {
                m[i * n + k] /= norm;
            }
        }
        if ok {
            return m;
        }
    }
}
