use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::numerics::{Linear, Mask, Norm, ParamId, ParamSet, Tape, Var};

/// Attention neighbourhood: a band of `W/2` ranks on each side, or every
/// token. Written as the even number `W` or `full`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionWindow {
    Band(usize),
    Full,
}

impl AttentionWindow {
    pub fn band(w: usize) -> Result<Self> {
        if !w.is_multiple_of(2) {
            return Err(Error::Config(format!("attention window must be even, got {w}")));
        }
        Ok(AttentionWindow::Band(w))
    }

    /// `M × M` mask over tokens indexed by start-time rank.
    pub fn mask(self, m: usize) -> Mask {
        match self {
            AttentionWindow::Full => Mask::full(m, m),
            AttentionWindow::Band(w) => Mask::from_fn(m, m, |i, j| i.abs_diff(j) <= w / 2),
        }
    }
}

impl fmt::Display for AttentionWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttentionWindow::Band(w) => write!(f, "{w}"),
            AttentionWindow::Full => f.write_str("full"),
        }
    }
}

impl FromStr for AttentionWindow {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(AttentionWindow::Full);
        }
        let w = s
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("attention window {s:?} is neither an even number nor \"full\"")))?;
        AttentionWindow::band(w)
    }
}

impl Serialize for AttentionWindow {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AttentionWindow::Band(w) => s.serialize_u64(*w as u64),
            AttentionWindow::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for AttentionWindow {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::N(n) => AttentionWindow::band(n as usize),
            Raw::S(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// Multi-head attention with per-head projections, an output projection,
/// and a residual connection followed by normalization. Keys carry no bias:
/// it would shift every score in a row equally and cancel in the softmax.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: Vec<(Linear, ParamId, Linear)>,
    pub out: Linear,
    pub norm: Norm,
    pub d_head: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamSet, name: &str, d_model: usize, heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if heads == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!("{heads} heads do not divide d_model {d_model}")));
        }
        let d_head = d_model / heads;
        let heads = (0..heads)
            .map(|h| {
                (
                    Linear::new(ps, &format!("{name}.h{h}.q"), d_model, d_head, rng),
                    ps.add_xavier(format!("{name}.h{h}.k.w"), d_model, d_head, rng),
                    Linear::new(ps, &format!("{name}.h{h}.v"), d_model, d_head, rng),
                )
            })
            .collect();
        Ok(Self {
            heads,
            out: Linear::new(ps, &format!("{name}.out"), d_model, d_model, rng),
            norm: Norm::new(ps, &format!("{name}.norm"), d_model),
            d_head,
        })
    }

    /// Projected attention output before the residual and normalization.
    pub fn attend(&self, tape: &mut Tape, ps: &ParamSet, xq: Var, xkv: Var, mask: &Mask) -> Result<Var> {
        let scale = 1.0 / (self.d_head as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads.len());
        for (wq, wk, wv) in &self.heads {
            let q = wq.forward(tape, ps, xq)?;
            let wk = tape.param(ps, *wk);
            let k = tape.matmul(xkv, wk)?;
            let v = wv.forward(tape, ps, xkv)?;
            let s = tape.matmul_nt(q, k)?;
            let s = tape.scale(s, scale)?;
            let a = tape.masked_row_softmax(s, Some(mask))?;
            outs.push(tape.matmul(a, v)?);
        }
        let cat = tape.concat_cols(&outs)?;
        self.out.forward(tape, ps, cat)
    }

    /// `norm(xq + attend(xq, xkv))`.
    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, xq: Var, xkv: Var, mask: &Mask) -> Result<Var> {
        let a = self.attend(tape, ps, xq, xkv, mask)?;
        let r = tape.add(xq, a)?;
        self.norm.forward(tape, ps, r)
    }
}

/// Position-wise two-layer GELU network with residual and normalization.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
    pub norm: Norm,
}

impl FeedForward {
    pub fn new(ps: &mut ParamSet, name: &str, d_model: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            up: Linear::new(ps, &format!("{name}.up"), d_model, hidden, rng),
            down: Linear::new(ps, &format!("{name}.down"), hidden, d_model, rng),
            norm: Norm::new(ps, &format!("{name}.norm"), d_model),
        }
    }

    pub fn forward(&self, tape: &mut Tape, ps: &ParamSet, x: Var) -> Result<Var> {
        let h = self.up.forward(tape, ps, x)?;
        let h = tape.gelu(h)?;
        let h = self.down.forward(tape, ps, h)?;
        let r = tape.add(x, h)?;
        self.norm.forward(tape, ps, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{random_tensor, Tensor2};

    fn setup(seed: u64) -> (ParamSet, MultiHeadAttention) {
        let mut rng = crate::numerics::rng(seed);
        let mut ps = ParamSet::new();
        let mha = MultiHeadAttention::new(&mut ps, "a", 8, 2, &mut rng).unwrap();
        (ps, mha)
    }

    fn run(ps: &ParamSet, mha: &MultiHeadAttention, x: &Tensor2, w: AttentionWindow, pre: bool) -> Tensor2 {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let mask = w.mask(x.rows());
        let out = if pre {
            mha.attend(&mut tape, ps, v, v, &mask).unwrap()
        } else {
            mha.forward(&mut tape, ps, v, v, &mask).unwrap()
        };
        tape.value(out).clone()
    }

    #[test]
    fn band_mask_pattern() {
        let m = AttentionWindow::Band(2).mask(4);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.allowed(i, j), i.abs_diff(j) <= 1);
            }
        }
        let id = AttentionWindow::Band(0).mask(3);
        assert!((0..3).all(|i| (0..3).all(|j| id.allowed(i, j) == (i == j))));
        assert!(matches!(AttentionWindow::band(3), Err(Error::Config(_))));
        assert_eq!("full".parse::<AttentionWindow>().unwrap(), AttentionWindow::Full);
        assert_eq!(serde_json::to_string(&AttentionWindow::Band(4)).unwrap(), "4");
        assert_eq!(
            serde_json::from_str::<AttentionWindow>("\"full\"").unwrap(),
            AttentionWindow::Full
        );
    }

    #[test]
    fn single_token_attends_itself() {
        let (ps, mha) = setup(1);
        let mut rng = crate::numerics::rng(9);
        let x = random_tensor(1, 8, &mut rng);
        // with one key the softmax is 1, so the output is the projected value row
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let mut heads = Vec::new();
        for (_, _, wv) in &mha.heads {
            heads.push(wv.forward(&mut tape, &ps, xv).unwrap());
        }
        let cat = tape.concat_cols(&heads).unwrap();
        let proj = mha.out.forward(&mut tape, &ps, cat).unwrap();
        let r = tape.add(xv, proj).unwrap();
        let expect = mha.norm.forward(&mut tape, &ps, r).unwrap();
        let expect = tape.value(expect).clone();
        for w in [
            AttentionWindow::Band(0),
            AttentionWindow::Band(4),
            AttentionWindow::Full,
        ] {
            let got = run(&ps, &mha, &x, w, false);
            for (a, b) in got.data().iter().zip(expect.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_window_isolates_tokens() {
        let (ps, mha) = setup(2);
        let mut rng = crate::numerics::rng(4);
        let x = random_tensor(4, 8, &mut rng);
        let base = run(&ps, &mha, &x, AttentionWindow::Band(0), true);
        let mut y = x.clone();
        y.row_mut(2).iter_mut().for_each(|v| *v += 3.0);
        let moved = run(&ps, &mha, &y, AttentionWindow::Band(0), true);
        for i in [0, 1, 3] {
            assert_eq!(base.row(i), moved.row(i));
        }
        assert_ne!(base.row(2), moved.row(2));
    }

    #[test]
    fn band_two_ignores_rank_distance_two() {
        let (ps, mha) = setup(3);
        let mut rng = crate::numerics::rng(5);
        let x = random_tensor(3, 8, &mut rng);
        let base = run(&ps, &mha, &x, AttentionWindow::Band(2), false);
        let mut y = x.clone();
        y.row_mut(2).iter_mut().for_each(|v| *v = -*v * 5.0);
        let moved = run(&ps, &mha, &y, AttentionWindow::Band(2), false);
        assert_eq!(base.row(0), moved.row(0));
        assert_ne!(base.row(1), moved.row(1));
    }

    #[test]
    fn heads_must_divide_model_width() {
        let mut ps = ParamSet::new();
        let mut rng = crate::numerics::rng(0);
        assert!(matches!(
            MultiHeadAttention::new(&mut ps, "a", 10, 4, &mut rng),
            Err(Error::Config(_))
        ));
    }
}
