use sha2::{Digest, Sha256};

/// A named collection of trainable tensors, visited in a fixed order.
pub trait ParamSet {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&str, &'a [f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |n, _| out.push(n.to_string()));
        out
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |_, v| out.extend_from_slice(v));
        out
    }

    /// SHA-256 over names and raw bit patterns.
    fn digest(&self) -> String {
        let mut h = Sha256::new();
        self.visit(&mut |n, v| {
            h.update(n.as_bytes());
            for x in v {
                h.update(x.to_bits().to_le_bytes());
            }
        });
        hex::encode(h.finalize())
    }
}

/// Largest absolute element-wise difference over tensors whose name passes `keep`.
pub fn max_abs_diff<P: ParamSet>(a: &P, b: &P, keep: impl Fn(&str) -> bool) -> f64 {
    let mut left = Vec::new();
    a.visit(&mut |n, v| {
        if keep(n) {
            left.push(v.to_vec());
        }
    });
    let mut i = 0;
    let mut worst = 0.0f64;
    b.visit(&mut |n, v| {
        if keep(n) {
            for (x, y) in left[i].iter().zip(v) {
                worst = worst.max((x - y).abs());
            }
            i += 1;
        }
    });
    worst
}
