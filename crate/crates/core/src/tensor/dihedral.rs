//! The eight symmetries of the square acting on the spatial dimensions.

use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Mirror left-right.
pub fn flip_h<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let mut data = Vec::with_capacity(s.numel());
    for row in x.data().chunks(s.w.max(1)) {
        data.extend(row.iter().rev());
    }
    Tensor::from_parts(s, data)
}

/// Mirror top-bottom.
pub fn flip_v<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let mut data = Vec::with_capacity(s.numel());
    for plane in x.data().chunks(s.plane().max(1)) {
        for row in plane.chunks(s.w.max(1)).rev() {
            data.extend_from_slice(row);
        }
    }
    Tensor::from_parts(s, data)
}

/// Rotates counter-clockwise by `quarter_turns · 90°` (negative turns rotate clockwise).
pub fn rot90<T: Scalar>(x: &Tensor<T>, quarter_turns: i32) -> Tensor<T> {
    let s = x.shape();
    let k = quarter_turns.rem_euclid(4);
    if k == 0 {
        return x.clone();
    }
    let out = if k == 2 {
        s
    } else {
        Shape::new(s.n, s.c, s.w, s.h)
    };
    let mut data = Vec::with_capacity(s.numel());
    for plane in x.data().chunks(s.plane().max(1)) {
        for i in 0..out.h {
            for j in 0..out.w {
                let (y, xx) = match k {
                    // out[i][j] = in[j][W-1-i]
                    1 => (j, s.w - 1 - i),
                    2 => (s.h - 1 - i, s.w - 1 - j),
                    _ => (s.h - 1 - j, i),
                };
                data.push(plane[y * s.w + xx]);
            }
        }
    }
    Tensor::from_parts(out, data)
}

/// One element of the dihedral group D4: an optional left-right mirror
/// followed by a counter-clockwise rotation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub quarter_turns: u8,
    pub mirror: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        quarter_turns: 0,
        mirror: false,
    };

    /// All eight transforms, identity first.
    pub fn all() -> [Dihedral; 8] {
        std::array::from_fn(|i| Dihedral::from_index(i as u8))
    }

    /// `0..4` are pure rotations, `4..8` mirror first.
    pub fn from_index(i: u8) -> Dihedral {
        Dihedral {
            quarter_turns: i % 4,
            mirror: i % 8 >= 4,
        }
    }

    pub fn index(self) -> u8 {
        self.quarter_turns + if self.mirror { 4 } else { 0 }
    }

    pub fn apply<T: Scalar>(self, x: &Tensor<T>) -> Tensor<T> {
        if self.mirror {
            rot90(&flip_h(x), self.quarter_turns as i32)
        } else {
            rot90(x, self.quarter_turns as i32)
        }
    }

    pub fn invert<T: Scalar>(self, y: &Tensor<T>) -> Tensor<T> {
        let r = rot90(y, -(self.quarter_turns as i32));
        if self.mirror {
            flip_h(&r)
        } else {
            r
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor<f32> {
        Tensor::from_fn(Shape::new(2, 2, 3, 5), |n, c, h, w| (n * 100 + c * 30 + h * 5 + w) as f32)
    }

    #[test]
    fn four_quarter_turns_and_double_flips_are_identity() {
        let x = sample();
        let mut r = x.clone();
        for _ in 0..4 {
            r = rot90(&r, 1);
        }
        assert_eq!(r, x);
        assert_eq!(flip_h(&flip_h(&x)), x);
        assert_eq!(flip_v(&flip_v(&x)), x);
        assert_eq!(rot90(&x, 0), x);
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        let x = Tensor::new(Shape::new(1, 1, 2, 2), vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        // [[1,2],[3,4]] -> [[2,4],[1,3]]
        assert_eq!(rot90(&x, 1).data(), &[2.0, 4.0, 1.0, 3.0]);
        assert_eq!(rot90(&x, -1), rot90(&x, 3));
    }

    #[test]
    fn every_transform_inverts() {
        let x = sample();
        for t in Dihedral::all() {
            assert_eq!(t.invert(&t.apply(&x)), x, "{t:?}");
            assert_eq!(Dihedral::from_index(t.index()), t);
        }
    }
}
