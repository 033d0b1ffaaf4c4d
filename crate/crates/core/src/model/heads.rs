use super::config::ClassifierConfig;
use super::forward::Net;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Var};

/// Projects every frame of `h: [T, d]` to `4d` and splits it into four consecutive
/// `d`-vectors, giving `[4T, d]` at a quarter of the frame period.
pub fn upsample<T: Real>(g: &mut Graph<T>, h: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let (t, d) = (g.shape(h)[0], g.shape(h)[1]);
    if g.shape(w) != [d, 4 * d] {
        return Err(Error::shape(
            "upsample",
            format!("projection {:?} for {d}-dim input, expected [{d}, {}]", g.shape(w), 4 * d),
        ));
    }
    let y = g.matmul(h, w)?;
    let y = match b {
        Some(b) => g.add_row(y, b)?,
        None => y,
    };
    g.reshape(y, &[4 * t, d])
}

impl<T: Real> Net<'_, T> {
    /// Conv classifier (`layers` × conv → LN → ReLU, stride 1) then a linear
    /// projection to vocabulary logits.
    pub fn classifier(&self, g: &mut Graph<T>, h: Var, cls: &ClassifierConfig) -> Result<Var> {
        let mut h = h;
        for i in 0..cls.layers {
            h = self.conv_ln_relu(g, h, &format!("classifier.conv{i}"), 1)?;
        }
        self.linear(g, h, "classifier.linear")
    }

    /// Upsampler with the bound `upsampler.*` parameters.
    pub fn upsample(&self, g: &mut Graph<T>, h: Var) -> Result<Var> {
        let w = self.p("upsampler.weight")?;
        let b = self.p("upsampler.bias")?;
        upsample(g, h, w, Some(b))
    }
}

/// Number of input frames seen by one classifier output frame.
pub fn classifier_receptive_field(cls: &ClassifierConfig) -> usize {
    1 + cls.layers * (cls.kernel - 1)
}
